//! Command line front end for the minidse engine.

use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use minidse::ast::to_smtlib_script;
use minidse::bench::{format_table, machine_lines, run_bench, variant, Variant, VARIANTS};
use minidse::config::Config;
use minidse::events::{read_frame, FrameWriter, NullSink};
use minidse::inverter::{self, make_tasks, CampaignReport, Direction, SeedRun, TaskStatus};
use minidse::mvm::{assemble, decode_program, encode_program, run_concrete, Program, RunOutcome, CONTAINER_MAGIC};
use minidse::pipeline::{analyze, run_campaign};
use minidse::samples::{self, SAMPLES};
use minidse::symex::{replay_events, PathConstraint};
use minidse::verifier::{verify, Expectation};

/// Stage that failed, and the exit code it maps to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Usage = 2,
    Io = 3,
    Load = 4,
    Events = 5,
    Symex = 6,
    Inversion = 7,
    Bench = 8,
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Stage::Usage => "usage",
            Stage::Io => "io",
            Stage::Load => "load",
            Stage::Events => "events",
            Stage::Symex => "symex",
            Stage::Inversion => "inversion",
            Stage::Bench => "bench",
        }
    }
}

struct Failure {
    stage: Stage,
    err: anyhow::Error,
}

type Res<T> = Result<T, Failure>;

trait At<T> {
    fn at(self, stage: Stage) -> Res<T>;
}

impl<T, E: Into<anyhow::Error>> At<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Res<T> {
        self.map_err(|e| Failure { stage, err: e.into() })
    }
}

#[derive(Parser)]
#[command(name = "minidse", version, about = "Dynamic symbolic execution for the mini VM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble a source file into a program container.
    Asm {
        source: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Print the disassembly instead of writing a container.
        #[arg(long)]
        listing: bool,
    },
    /// Full pipeline: run, build the predicate, invert, verify, write the corpus.
    Run {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        engine: Engine,
        /// Dump the raw event stream.
        #[arg(long)]
        events_out: Option<PathBuf>,
        /// Write the path predicate as SMT-LIB.
        #[arg(long)]
        dump_predicate: Option<PathBuf>,
    },
    /// Invert from a dumped event stream instead of tracing the program.
    Invert {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        engine: Engine,
        #[arg(long)]
        events: PathBuf,
    },
    /// Replay a corpus and check every input against the seed trace.
    Verify {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        engine: Engine,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Run samples under several configurations and tabulate the results.
    Bench {
        #[command(flatten)]
        engine: Engine,
        /// Comma separated sample names; all samples by default.
        #[arg(long, value_delimiter = ',')]
        samples: Vec<String>,
        /// Comma separated: default, no-<toggle>, jobs=<n>.
        #[arg(long, value_delimiter = ',', default_value = "default")]
        configs: Vec<String>,
        /// Timing rounds for the skip comparison.
        #[arg(long, default_value_t = 5)]
        rounds: usize,
        /// Print only the machine readable lines.
        #[arg(long)]
        machine: bool,
    },
    /// Print the path predicate as SMT-LIB.
    DumpPredicate {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        engine: Engine,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Target {
    /// Program: assembly source or container.
    #[arg(long, conflicts_with = "sample")]
    program: Option<PathBuf>,
    /// Built-in sample; its seed is used unless --input is given.
    #[arg(long)]
    sample: Option<String>,
    /// Seed input file.
    #[arg(long, visible_alias = "seed")]
    input: Option<PathBuf>,
}

#[derive(Args, Default)]
struct Engine {
    /// key = value settings file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Per query, in milliseconds; 0 disables.
    #[arg(long)]
    solver_timeout: Option<u64>,
    #[arg(long)]
    solver_seed: Option<u64>,
    #[arg(long)]
    max_table_size: Option<usize>,
    #[arg(long)]
    quantum: Option<u32>,
    #[arg(long)]
    instruction_budget: Option<u64>,
    /// seq or random.
    #[arg(long)]
    branch_policy: Option<String>,
    #[arg(long)]
    random_seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Receives SMT-LIB and DIMACS text of every query.
    #[arg(long)]
    debug_dir: Option<PathBuf>,
    /// Seconds.
    #[arg(long)]
    max_predicate_time: Option<f64>,
    /// Seconds.
    #[arg(long)]
    max_campaign_time: Option<f64>,
    #[arg(long)]
    no_slicing: bool,
    #[arg(long)]
    no_skip: bool,
    #[arg(long)]
    no_jumptables: bool,
    #[arg(long)]
    no_simplify: bool,
    #[arg(long)]
    no_context_switch: bool,
    /// Do not replay generated inputs.
    #[arg(long)]
    no_verify: bool,
}

impl Engine {
    fn config(&self) -> Res<Config> {
        let mut cfg = Config::default();
        if let Some(p) = &self.config {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).at(Stage::Io)?;
            cfg.parse_into(&text)
                .with_context(|| format!("in {}", p.display()))
                .at(Stage::Usage)?;
        }
        let mut set = |k: &str, v: Option<String>| -> Res<()> {
            match v {
                Some(v) => cfg.set(k, &v).at(Stage::Usage),
                None => Ok(()),
            }
        };
        set("jobs", self.jobs.map(|v| v.to_string()))?;
        set("solver-timeout", self.solver_timeout.map(|v| v.to_string()))?;
        set("solver-seed", self.solver_seed.map(|v| v.to_string()))?;
        set("max-table-size", self.max_table_size.map(|v| v.to_string()))?;
        set("quantum", self.quantum.map(|v| v.to_string()))?;
        set("instruction-budget", self.instruction_budget.map(|v| v.to_string()))?;
        set("branch-policy", self.branch_policy.clone())?;
        set("random-seed", self.random_seed.map(|v| v.to_string()))?;
        set("max-predicate-time", self.max_predicate_time.map(|v| v.to_string()))?;
        set("max-campaign-time", self.max_campaign_time.map(|v| v.to_string()))?;
        set("output-dir", self.output_dir.as_ref().map(|p| p.display().to_string()))?;
        set("debug-dir", self.debug_dir.as_ref().map(|p| p.display().to_string()))?;
        for (on, name) in [
            (self.no_slicing, "no-slicing"),
            (self.no_skip, "no-skip"),
            (self.no_jumptables, "no-jumptables"),
            (self.no_simplify, "no-simplify"),
            (self.no_context_switch, "no-context-switch"),
        ] {
            if on {
                set(name, Some("true".into()))?;
            }
        }
        if self.no_verify {
            set("verify", Some("false".into()))?;
        }
        Ok(cfg)
    }
}

fn load_program(path: &Path) -> Res<Program> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display())).at(Stage::Io)?;
    if bytes.starts_with(CONTAINER_MAGIC) {
        return decode_program(&bytes)
            .with_context(|| format!("loading {}", path.display()))
            .at(Stage::Load);
    }
    let src = String::from_utf8(bytes)
        .map_err(|_| anyhow!("{}: neither a container nor UTF-8 source", path.display()))
        .at(Stage::Load)?;
    assemble(&src).with_context(|| format!("assembling {}", path.display())).at(Stage::Load)
}

/// Program and seed named by the target flags, with config paths as fallback.
fn resolve(target: &Target, cfg: &Config) -> Res<(Arc<Program>, Vec<u8>)> {
    let input = target.input.clone().or_else(|| cfg.paths.input.clone());
    let read_input = |p: &Path| fs::read(p).with_context(|| format!("reading {}", p.display())).at(Stage::Io);
    if let Some(name) = &target.sample {
        let s = samples::find(name)
            .ok_or_else(|| {
                let names: Vec<_> = SAMPLES.iter().map(|s| s.name).collect();
                anyhow!("unknown sample `{name}` (have {})", names.join(", "))
            })
            .at(Stage::Usage)?;
        let program = s.program().with_context(|| format!("sample {name}")).at(Stage::Load)?;
        let seed = match &input {
            Some(p) => read_input(p)?,
            None => s.seed(),
        };
        return Ok((Arc::new(program), seed));
    }
    let path = target
        .program
        .clone()
        .or_else(|| cfg.paths.program.clone())
        .ok_or_else(|| anyhow!("no program: pass --program or --sample"))
        .at(Stage::Usage)?;
    let input = input.ok_or_else(|| anyhow!("no seed input: pass --input")).at(Stage::Usage)?;
    Ok((Arc::new(load_program(&path)?), read_input(&input)?))
}

fn write_file(path: &Path, data: &[u8]) -> Res<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).at(Stage::Io)?;
    }
    fs::write(path, data).with_context(|| format!("writing {}", path.display())).at(Stage::Io)
}

fn predicate_smtlib(predicate: &[PathConstraint]) -> String {
    let conds: Vec<_> = predicate.iter().map(|p| p.cond.clone()).collect();
    to_smtlib_script(&conds)
}

fn describe_outcome(out: &RunOutcome) -> String {
    format!(
        "exit={} executed={} branches={} threads={} switches={}",
        out.exit_code(),
        out.executed,
        out.trace.entries.len(),
        out.per_thread.len(),
        out.thread_switches
    )
}

fn print_report(report: &CampaignReport) {
    println!("{:>5} {:>6} {:<18} {:<10} {:<18} {:>5} {:>9}  file", "task", "branch", "direction", "status", "verdict", "kept", "ms");
    for (i, r) in report.records.iter().enumerate() {
        let verdict = r.verdict.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
        let file = if r.input.is_some() { r.file_name() } else { "-".into() };
        println!(
            "{:>5} {:>6} {:<18} {:<10} {:<18} {:>5} {:>9.3}  {}",
            i,
            r.branch_index,
            r.direction.to_string(),
            r.status.to_string(),
            verdict,
            r.kept,
            r.elapsed.as_secs_f64() * 1e3,
            file
        );
    }
    println!(
        "Correct {}  SAT {}  Queries {}  Branches {}  Timeouts {}  Failed {}  Time {:.3} ms",
        report.correct,
        report.sat,
        report.queries,
        report.branches,
        report.timeouts,
        report.failed,
        report.wall.as_secs_f64() * 1e3
    );
    for (i, r) in report.records.iter().enumerate() {
        let direction = match r.direction {
            Direction::Negate => "negate".to_string(),
            Direction::Target(t) => format!("target:{t:#x}"),
        };
        let verdict = r.verdict.map_or_else(|| "none".to_string(), |v| v.to_string());
        let status = match &r.status {
            TaskStatus::Failed(_) => "failed".to_string(),
            s => s.to_string(),
        };
        println!(
            "task index={} branch={} site={:#x} direction={} status={} verdict={} ms={:.3}",
            i,
            r.branch_index,
            r.site,
            direction,
            status,
            verdict,
            r.elapsed.as_secs_f64() * 1e3
        );
    }
    println!(
        "summary correct={} sat={} queries={} branches={} timeouts={} failed={} ms={:.3}",
        report.correct,
        report.sat,
        report.queries,
        report.branches,
        report.timeouts,
        report.failed,
        report.wall.as_secs_f64() * 1e3
    );
}

fn write_outputs(report: &CampaignReport, predicate: &[PathConstraint], cfg: &Config) -> Res<()> {
    if let Some(out) = &cfg.paths.output_dir {
        let files = report.write(out, cfg.paths.debug_dir.as_deref()).at(Stage::Io)?;
        log::info!("wrote {} inputs to {}", files.len(), out.display());
    } else if let Some(d) = &cfg.paths.debug_dir {
        let tmp = d.join("corpus");
        report.write(&tmp, Some(d)).at(Stage::Io)?;
    }
    if let Some(d) = &cfg.paths.debug_dir {
        write_file(&d.join("predicate.smt2"), predicate_smtlib(predicate).as_bytes())?;
    }
    Ok(())
}

fn cmd_asm(source: &Path, output: Option<&Path>, listing: bool) -> Res<()> {
    let program = load_program(source)?;
    if listing {
        print!("{}", program.listing());
        return Ok(());
    }
    let out = output.map(Path::to_path_buf).unwrap_or_else(|| source.with_extension("mdse"));
    write_file(&out, &encode_program(&program))?;
    println!("{} instructions, {} data bytes -> {}", program.code.len(), program.data.len(), out.display());
    Ok(())
}

fn cmd_run(target: &Target, engine: &Engine, events_out: Option<&Path>, dump: Option<&Path>) -> Res<()> {
    let cfg = engine.config()?;
    let (program, seed) = resolve(target, &cfg)?;
    if let Some(p) = events_out {
        let f = fs::File::create(p).with_context(|| format!("creating {}", p.display())).at(Stage::Io)?;
        let mut w = FrameWriter::new(BufWriter::new(f));
        run_concrete(&program, &seed, &cfg.run_config(), &mut w);
        if let Some(e) = w.error.take() {
            return Err(e).with_context(|| format!("writing {}", p.display())).at(Stage::Io);
        }
        w.into_inner().flush().at(Stage::Io)?;
    }
    let c = run_campaign(&program, &seed, &cfg).map_err(|e| match e {
        minidse::pipeline::PipelineError::Symex(e) => Failure {
            stage: Stage::Symex,
            err: e.into(),
        },
        minidse::pipeline::PipelineError::Inverter(e) => Failure {
            stage: Stage::Inversion,
            err: e.into(),
        },
    })?;
    let a = &c.analysis;
    println!("seed: {}", describe_outcome(&a.outcome));
    println!(
        "predicate: {} entries, {} input bytes, {} of {} instructions symbolic, {:.3} ms{}",
        a.symex.predicate.len(),
        a.symex.var_count,
        a.symex.stats.symbolic,
        a.symex.stats.instructions,
        a.predicate_time.as_secs_f64() * 1e3,
        if a.symex.truncated { " (truncated)" } else { "" }
    );
    if let Some(p) = dump {
        write_file(p, predicate_smtlib(&a.symex.predicate).as_bytes())?;
    }
    print_report(&c.report);
    write_outputs(&c.report, &a.symex.predicate, &cfg)
}

fn cmd_invert(target: &Target, engine: &Engine, events: &Path) -> Res<()> {
    let cfg = engine.config()?;
    let (program, seed) = resolve(target, &cfg)?;
    let f = fs::File::open(events).with_context(|| format!("opening {}", events.display())).at(Stage::Io)?;
    let mut r = BufReader::new(f);
    let mut evs = Vec::new();
    while let Some(ev) = read_frame(&mut r).with_context(|| format!("decoding {}", events.display())).at(Stage::Events)? {
        evs.push(ev);
    }
    let start = Instant::now();
    let mut sx = replay_events(&program, &seed, evs, &cfg.symex_config()).at(Stage::Symex)?;
    println!(
        "predicate: {} entries, {} input bytes, {:.3} ms",
        sx.predicate.len(),
        sx.var_count,
        start.elapsed().as_secs_f64() * 1e3
    );
    let tasks = make_tasks(&mut sx.ast, &sx.predicate, cfg.branch_policy()).at(Stage::Inversion)?;
    // the seed trace is only needed to verify generated inputs
    let outcome = run_concrete(&program, &seed, &cfg.run_config(), &mut NullSink);
    let seed_run = SeedRun {
        program: &program,
        input: &seed,
        trace: &outcome.trace,
    };
    let report = inverter::run_campaign(&seed_run, &sx.predicate, &tasks, &cfg.campaign_config()).at(Stage::Inversion)?;
    print_report(&report);
    write_outputs(&report, &sx.predicate, &cfg)
}

/// Branch index, site and optional target from a corpus file name.
fn parse_corpus_name(name: &str) -> Option<(usize, u64, Option<u64>)> {
    let stem = name.strip_suffix(".bin")?;
    let mut parts = stem.split('_');
    let index = parts.next()?.parse().ok()?;
    let site = u64::from_str_radix(parts.next()?, 16).ok()?;
    let target = match parts.next() {
        None => None,
        Some(t) => Some(u64::from_str_radix(t.strip_prefix('t')?, 16).ok()?),
    };
    parts.next().is_none().then_some((index, site, target))
}

fn cmd_verify(target: &Target, engine: &Engine, corpus: &Path) -> Res<()> {
    let cfg = engine.config()?;
    let (program, seed) = resolve(target, &cfg)?;
    let a = analyze(&program, &seed, &cfg).at(Stage::Symex)?;
    let mut files: Vec<(usize, String)> = Vec::new();
    let dir = fs::read_dir(corpus).with_context(|| format!("reading {}", corpus.display())).at(Stage::Io)?;
    for entry in dir {
        let name = entry.at(Stage::Io)?.file_name().to_string_lossy().into_owned();
        if let Some((i, _, _)) = parse_corpus_name(&name) {
            files.push((i, name));
        }
    }
    files.sort();
    let base = a.outcome.trace.first_input_read.unwrap_or(0);
    let mut correct = 0;
    for (_, name) in &files {
        let (index, site, target) = parse_corpus_name(name).expect("filtered above");
        let Some(pc) = a.symex.predicate.get(index).filter(|pc| pc.site == site) else {
            println!("{name} unknown-branch");
            continue;
        };
        let input = fs::read(corpus.join(name)).at(Stage::Io)?;
        let expect = target.map_or(Expectation::Flip, Expectation::Target);
        let (v, out) = verify(&program, &a.outcome.trace, &input, base + pc.trace_pos, expect, &cfg.run_config());
        if v.is_correct() {
            correct += 1;
        }
        println!("{name} {v} exit={}", out.exit_code());
    }
    println!("verified correct={} total={}", correct, files.len());
    Ok(())
}

fn cmd_bench(engine: &Engine, names: &[String], configs: &[String], rounds: usize, machine: bool) -> Res<()> {
    let base = engine.config()?;
    let chosen: Vec<_> = if names.is_empty() {
        SAMPLES.iter().collect()
    } else {
        names
            .iter()
            .map(|n| samples::find(n).ok_or_else(|| anyhow!("unknown sample `{n}`")))
            .collect::<Result<_, _>>()
            .at(Stage::Usage)?
    };
    let variants: Vec<Variant> = configs
        .iter()
        .map(|c| {
            variant(&base, c).ok_or_else(|| anyhow!("unknown config `{c}` (use {} or jobs=<n>)", VARIANTS.join(", ")))
        })
        .collect::<Result<_, _>>()
        .at(Stage::Usage)?;
    let rows = run_bench(&chosen, &variants, rounds);
    if !machine {
        print!("{}", format_table(&rows));
    }
    print!("{}", machine_lines(&rows));
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        return Err(anyhow!("{failed} sample runs failed")).at(Stage::Bench);
    }
    Ok(())
}

fn cmd_dump(target: &Target, engine: &Engine, output: Option<&Path>) -> Res<()> {
    let cfg = engine.config()?;
    let (program, seed) = resolve(target, &cfg)?;
    let a = analyze(&program, &seed, &cfg).at(Stage::Symex)?;
    let text = predicate_smtlib(&a.symex.predicate);
    match output {
        Some(p) => write_file(p, text.as_bytes()),
        None => io::stdout().write_all(text.as_bytes()).at(Stage::Io),
    }
}

fn init_logging() {
    let Ok(spec) = std::env::var("MINIDSE_DEBUG") else {
        return;
    };
    let spec = match spec.as_str() {
        "" | "1" | "true" | "on" => "debug",
        s => s,
    };
    env_logger::Builder::new()
        .parse_filters(spec)
        .format_timestamp_millis()
        .target(env_logger::Target::Stderr)
        .init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Asm { source, output, listing } => cmd_asm(source, output.as_deref(), *listing),
        Command::Run {
            target,
            engine,
            events_out,
            dump_predicate,
        } => cmd_run(target, engine, events_out.as_deref(), dump_predicate.as_deref()),
        Command::Invert { target, engine, events } => cmd_invert(target, engine, events),
        Command::Verify { target, engine, corpus } => cmd_verify(target, engine, corpus),
        Command::Bench {
            engine,
            samples,
            configs,
            rounds,
            machine,
        } => cmd_bench(engine, samples, configs, *rounds, *machine),
        Command::DumpPredicate { target, engine, output } => cmd_dump(target, engine, output.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("minidse: {} error: {:#}", f.stage.name(), f.err);
            ExitCode::from(f.stage as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_names() {
        assert_eq!(parse_corpus_name("6_4a8.bin"), Some((6, 0x4a8, None)));
        assert_eq!(parse_corpus_name("1_444_t430.bin"), Some((1, 0x444, Some(0x430))));
        assert_eq!(parse_corpus_name("1_444_x430.bin"), None);
        assert_eq!(parse_corpus_name("1_444.smt2"), None);
        assert_eq!(parse_corpus_name("1_444_t4_5.bin"), None);
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.conf");
        fs::write(&p, "jobs = 3\nsolver-seed = 4\n").unwrap();
        let e = Engine {
            config: Some(p),
            jobs: Some(2),
            no_skip: true,
            ..Engine::default()
        };
        let cfg = e.config().ok().unwrap();
        assert_eq!((cfg.jobs, cfg.solver_seed, cfg.toggles.skip), (2, 4, false));
        let bad = Engine {
            jobs: Some(0),
            ..Engine::default()
        };
        assert_eq!(bad.config().err().unwrap().stage, Stage::Usage);
    }
}
