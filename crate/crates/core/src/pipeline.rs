//! End-to-end runs: concrete execution, predicate construction and the
//! inversion campaign.

use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::config::Config;
use crate::inverter::{self, make_tasks, CampaignReport, InversionTask, InverterError, SeedRun};
use crate::mvm::{run_concrete, Program, RunOutcome};
use crate::symex::{build_predicate, replay_events, SymexConfig, SymexError, SymexOutput};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("symbolic execution: {0}")]
    Symex(#[from] SymexError),
    #[error("inversion: {0}")]
    Inverter(#[from] InverterError),
}

pub struct Analysis {
    pub outcome: RunOutcome,
    pub symex: SymexOutput,
    pub predicate_time: Duration,
}

/// Runs the program on `seed` and builds its path predicate.
pub fn analyze(program: &Arc<Program>, seed: &[u8], cfg: &Config) -> Result<Analysis, PipelineError> {
    let start = Instant::now();
    let (symex, outcome) = build_predicate(program, seed, &cfg.run_config(), &cfg.symex_config())?;
    Ok(Analysis {
        outcome,
        symex,
        predicate_time: start.elapsed(),
    })
}

pub struct Campaign {
    pub analysis: Analysis,
    pub tasks: Vec<InversionTask>,
    pub report: CampaignReport,
}

/// Full pipeline. The corpus is not written; see [`CampaignReport::write`].
pub fn run_campaign(program: &Arc<Program>, seed: &[u8], cfg: &Config) -> Result<Campaign, PipelineError> {
    let mut analysis = analyze(program, seed, cfg)?;
    let tasks = make_tasks(&mut analysis.symex.ast, &analysis.symex.predicate, cfg.branch_policy())?;
    let seed_run = SeedRun {
        program,
        input: seed,
        trace: &analysis.outcome.trace,
    };
    let report = inverter::run_campaign(&seed_run, &analysis.symex.predicate, &tasks, &cfg.campaign_config())?;
    Ok(Campaign {
        analysis,
        tasks,
        report,
    })
}

/// Predicate construction time with and without skipping, over one recorded
/// event stream. Replays are batched so one sample takes at least
/// [`MIN_BATCH`]; the two sides alternate, swapping which goes first each
/// round, and each keeps its best batch.
pub struct SkipTiming {
    pub base: Duration,
    pub skip: Duration,
    pub symbolic_base: u64,
    pub symbolic_skip: u64,
}

impl SkipTiming {
    pub fn ratio(&self) -> f64 {
        self.base.as_secs_f64() / self.skip.as_secs_f64().max(1e-9)
    }
}

const MIN_BATCH: Duration = Duration::from_millis(20);

pub fn time_skipping(program: &Program, seed: &[u8], cfg: &Config, rounds: usize) -> Result<SkipTiming, PipelineError> {
    let mut events = Vec::new();
    run_concrete(program, seed, &cfg.run_config(), &mut events);
    let config = |skip| SymexConfig {
        skip,
        ..cfg.symex_config()
    };
    let (base_cfg, skip_cfg) = (config(false), config(true));
    let t = Instant::now();
    let symbolic_base = replay_events(program, seed, events.clone(), &base_cfg)?.stats.symbolic;
    let single = t.elapsed().max(Duration::from_nanos(100));
    let symbolic_skip = replay_events(program, seed, events.clone(), &skip_cfg)?.stats.symbolic;
    let reps = (MIN_BATCH.as_nanos() / single.as_nanos()).clamp(1, 10_000) as u32;
    let batch = |sc: &SymexConfig| -> Result<Duration, PipelineError> {
        let copies: Vec<_> = (0..reps).map(|_| events.clone()).collect();
        let t = Instant::now();
        for evs in copies {
            replay_events(program, seed, evs, sc)?;
        }
        Ok(t.elapsed() / reps)
    };
    let (mut base, mut skip) = (Duration::MAX, Duration::MAX);
    for round in 0..rounds.max(1) {
        if round % 2 == 1 {
            skip = skip.min(batch(&skip_cfg)?);
        }
        base = base.min(batch(&base_cfg)?);
        if round % 2 == 0 {
            skip = skip.min(batch(&skip_cfg)?);
        }
    }
    Ok(SkipTiming {
        base,
        skip,
        symbolic_base,
        symbolic_skip,
    })
}
