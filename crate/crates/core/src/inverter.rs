//! New input generation: one query per branch direction, solved on a worker
//! pool, with models completed from the seed and checked by replay.

use std::fmt;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::ast::{to_smtlib_script, AstContext, AstError, Expr, Op};
use crate::mvm::{BranchTrace, Program, RunConfig};
use crate::slicer::{complete_model, slice, slice_all};
use crate::solver::{bitblast, solve, SolverOptions, Status};
use crate::symex::{ConstraintKind, PathConstraint};
use crate::verifier::{verify, Expectation, Verdict};

#[derive(Debug, Error)]
pub enum InverterError {
    #[error(transparent)]
    Ast(#[from] AstError),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// The other side of a conditional branch.
    Negate,
    /// An untaken target of an indirect jump.
    Target(u64),
}

impl Direction {
    pub fn expectation(self) -> Expectation {
        match self {
            Direction::Negate => Expectation::Flip,
            Direction::Target(t) => Expectation::Target(t),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Negate => write!(f, "negate"),
            Direction::Target(t) => write!(f, "target={t:#x}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct InversionTask {
    /// Index of the branch in the path predicate.
    pub branch_index: usize,
    pub direction: Direction,
    pub cond: Expr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchPolicy {
    Sequential,
    Random(u64),
}

/// One task per conditional, one per untaken indirect target.
pub fn make_tasks(
    ctx: &mut AstContext,
    predicate: &[PathConstraint],
    policy: BranchPolicy,
) -> Result<Vec<InversionTask>, InverterError> {
    let mut tasks = Vec::new();
    for (i, pc) in predicate.iter().enumerate() {
        match pc.kind {
            ConstraintKind::Conditional => tasks.push(InversionTask {
                branch_index: i,
                direction: Direction::Negate,
                cond: ctx.mk(Op::BoolNot, &[pc.cond.clone()])?,
            }),
            ConstraintKind::Indirect => {
                for (t, c) in &pc.alt_targets {
                    tasks.push(InversionTask {
                        branch_index: i,
                        direction: Direction::Target(*t),
                        cond: c.clone(),
                    });
                }
            }
        }
    }
    if let BranchPolicy::Random(seed) = policy {
        tasks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(tasks)
}

/// Predicate entries that can be inverted at all: conditionals, and
/// indirect jumps with at least one other target.
pub fn invertible_branches(predicate: &[PathConstraint]) -> usize {
    predicate
        .iter()
        .filter(|pc| pc.kind == ConstraintKind::Conditional || !pc.alt_targets.is_empty())
        .count()
}

#[derive(Clone, Debug)]
pub struct CampaignConfig {
    pub jobs: usize,
    pub slicing: bool,
    pub solver: SolverOptions,
    /// Replay each generated input.
    pub verify: bool,
    pub run: RunConfig,
    /// Tasks not started by then are skipped.
    pub max_time: Option<Duration>,
    /// Keep SMT-LIB and DIMACS text of each query.
    pub dump_queries: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            jobs: 1,
            slicing: true,
            solver: SolverOptions::default(),
            verify: true,
            run: RunConfig::default(),
            max_time: None,
            dump_queries: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TaskStatus {
    Sat,
    Unsat,
    Timeout,
    Skipped,
    Failed(String),
}

impl fmt::Display for TaskStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskStatus::Sat => write!(f, "sat"),
            TaskStatus::Unsat => write!(f, "unsat"),
            TaskStatus::Timeout => write!(f, "timeout"),
            TaskStatus::Skipped => write!(f, "skipped"),
            TaskStatus::Failed(m) => write!(f, "failed({m})"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TaskRecord {
    pub branch_index: usize,
    pub site: u64,
    pub direction: Direction,
    pub status: TaskStatus,
    pub verdict: Option<Verdict>,
    /// Prefix constraints kept by slicing.
    pub kept: usize,
    pub input: Option<Vec<u8>>,
    pub elapsed: Duration,
    pub smtlib: Option<String>,
    pub dimacs: Option<String>,
}

impl TaskRecord {
    fn new(task: &InversionTask, site: u64, status: TaskStatus) -> Self {
        TaskRecord {
            branch_index: task.branch_index,
            site,
            direction: task.direction,
            status,
            verdict: None,
            kept: 0,
            input: None,
            elapsed: Duration::ZERO,
            smtlib: None,
            dimacs: None,
        }
    }

    /// Corpus file name: `<branch>_<site hex>[_t<target hex>].bin`.
    pub fn file_name(&self) -> String {
        match self.direction {
            Direction::Negate => format!("{}_{:x}.bin", self.branch_index, self.site),
            Direction::Target(t) => format!("{}_{:x}_t{:x}.bin", self.branch_index, self.site, t),
        }
    }

    pub fn stem(&self) -> String {
        self.file_name().trim_end_matches(".bin").to_string()
    }
}

#[derive(Clone, Debug, Default)]
pub struct CampaignReport {
    pub branches: usize,
    pub queries: usize,
    pub sat: usize,
    pub correct: usize,
    pub timeouts: usize,
    pub failed: usize,
    pub wall: Duration,
    pub records: Vec<TaskRecord>,
}

impl CampaignReport {
    /// Generated inputs in task order.
    pub fn inputs(&self) -> impl Iterator<Item = (&TaskRecord, &[u8])> {
        self.records.iter().filter_map(|r| r.input.as_deref().map(|i| (r, i)))
    }

    /// Writes the corpus, plus query dumps when present.
    pub fn write(&self, out: &Path, debug: Option<&Path>) -> Result<Vec<PathBuf>, InverterError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| InverterError::Io { path, source }
        };
        std::fs::create_dir_all(out).map_err(io(out))?;
        let mut written = Vec::new();
        for (r, input) in self.inputs() {
            let p = out.join(r.file_name());
            std::fs::write(&p, input).map_err(io(&p))?;
            written.push(p);
        }
        if let Some(d) = debug {
            std::fs::create_dir_all(d).map_err(io(d))?;
            for r in &self.records {
                if let Some(s) = &r.smtlib {
                    let p = d.join(format!("{}.smt2", r.stem()));
                    std::fs::write(&p, s).map_err(io(&p))?;
                }
                if let Some(s) = &r.dimacs {
                    let p = d.join(format!("{}.cnf", r.stem()));
                    std::fs::write(&p, s).map_err(io(&p))?;
                }
            }
        }
        Ok(written)
    }
}

/// What workers need from the seed run.
pub struct SeedRun<'a> {
    pub program: &'a Program,
    pub input: &'a [u8],
    pub trace: &'a BranchTrace,
}

fn run_task(seed: &SeedRun, predicate: &[PathConstraint], task: &InversionTask, cfg: &CampaignConfig, idx: usize) -> TaskRecord {
    let start = Instant::now();
    let pc = &predicate[task.branch_index];
    let mut rec = TaskRecord::new(task, pc.site, TaskStatus::Skipped);
    let prefix = &predicate[..task.branch_index];
    let q = if cfg.slicing { slice(&task.cond, prefix) } else { slice_all(&task.cond, prefix) };
    rec.kept = q.kept.len();
    let constraints = q.constraints(prefix);
    if cfg.dump_queries {
        rec.smtlib = Some(to_smtlib_script(&constraints));
        rec.dimacs = bitblast(&constraints).ok().map(|c| c.to_dimacs());
    }
    let opts = SolverOptions {
        seed: cfg.solver.seed.wrapping_add(idx as u64),
        ..cfg.solver
    };
    match solve(&constraints, &opts) {
        Err(e) => rec.status = TaskStatus::Failed(e.to_string()),
        Ok(r) => match r.status {
            Status::Unsat => rec.status = TaskStatus::Unsat,
            Status::Timeout => rec.status = TaskStatus::Timeout,
            Status::Sat => match complete_model(&r.model, seed.input) {
                Err(e) => rec.status = TaskStatus::Failed(e.to_string()),
                Ok(input) => {
                    rec.status = TaskStatus::Sat;
                    if cfg.verify {
                        let target = seed.trace.first_input_read.unwrap_or(0) + pc.trace_pos;
                        let (v, _) = verify(seed.program, seed.trace, &input, target, task.direction.expectation(), &cfg.run);
                        rec.verdict = Some(v);
                    }
                    rec.input = Some(input);
                }
            },
        },
    }
    rec.elapsed = start.elapsed();
    rec
}

/// Solves every task on `jobs` workers. Results come back in task order, so
/// the corpus does not depend on the number of workers.
pub fn run_campaign(
    seed: &SeedRun,
    predicate: &[PathConstraint],
    tasks: &[InversionTask],
    cfg: &CampaignConfig,
) -> Result<CampaignReport, InverterError> {
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| InverterError::Pool(e.to_string()))?;
    let expired = AtomicBool::new(false);
    let records: Vec<TaskRecord> = pool.install(|| {
        tasks
            .par_iter()
            .enumerate()
            .map(|(i, task)| {
                if cfg.max_time.is_some_and(|m| start.elapsed() > m) {
                    expired.store(true, Ordering::Relaxed);
                }
                if expired.load(Ordering::Relaxed) {
                    return TaskRecord::new(task, predicate[task.branch_index].site, TaskStatus::Skipped);
                }
                match panic::catch_unwind(AssertUnwindSafe(|| run_task(seed, predicate, task, cfg, i))) {
                    Ok(r) => r,
                    Err(p) => {
                        let msg = p
                            .downcast_ref::<&str>()
                            .map(|s| s.to_string())
                            .or_else(|| p.downcast_ref::<String>().cloned())
                            .unwrap_or_else(|| "panic".into());
                        log::error!("task {i} panicked: {msg}");
                        TaskRecord::new(task, predicate[task.branch_index].site, TaskStatus::Failed(msg))
                    }
                }
            })
            .collect()
    });
    let mut report = CampaignReport {
        branches: invertible_branches(predicate),
        queries: tasks.len(),
        ..CampaignReport::default()
    };
    for r in &records {
        match r.status {
            TaskStatus::Sat => report.sat += 1,
            TaskStatus::Timeout => report.timeouts += 1,
            TaskStatus::Failed(_) => report.failed += 1,
            _ => {}
        }
        if r.verdict == Some(Verdict::Correct) {
            report.correct += 1;
        }
        log::debug!(
            "task branch={} {} status={} kept={} ms={:.3}",
            r.branch_index,
            r.direction,
            r.status,
            r.kept,
            r.elapsed.as_secs_f64() * 1e3
        );
    }
    report.records = records;
    report.wall = start.elapsed();
    Ok(report)
}
