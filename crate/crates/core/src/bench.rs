//! Benchmark harness: runs samples under a set of configurations and
//! tabulates Correct / SAT / Queries / Branches / Time, plus predicate
//! construction time with and without instruction skipping.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Duration;

use crate::config::Config;
use crate::pipeline::{run_campaign, time_skipping};
use crate::samples::Sample;

/// A named configuration to run every sample under.
#[derive(Clone, Debug)]
pub struct Variant {
    pub name: String,
    pub config: Config,
}

/// Ablation names accepted by [`variant`].
pub const VARIANTS: &[&str] = &[
    "default",
    "no-slicing",
    "no-skip",
    "no-jumptables",
    "no-simplify",
    "no-context-switch",
];

/// `default`, `no-<toggle>`, or `jobs=<n>`, applied on top of `base`.
pub fn variant(base: &Config, name: &str) -> Option<Variant> {
    let mut config = base.clone();
    match name {
        "default" => {}
        _ if name.starts_with("jobs=") => config.set("jobs", &name[5..]).ok()?,
        _ if VARIANTS.contains(&name) => config.set(name, "true").ok()?,
        _ => return None,
    }
    Some(Variant {
        name: name.to_string(),
        config,
    })
}

#[derive(Clone, Debug, Default)]
pub struct BenchRow {
    pub sample: String,
    pub variant: String,
    pub correct: usize,
    pub sat: usize,
    pub queries: usize,
    pub branches: usize,
    /// Predicate construction plus campaign.
    pub time: Duration,
    pub base: Duration,
    pub skip: Duration,
    pub symbolic_base: u64,
    pub symbolic_skip: u64,
    pub error: Option<String>,
}

impl BenchRow {
    pub fn ratio(&self) -> f64 {
        self.base.as_secs_f64() / self.skip.as_secs_f64().max(1e-9)
    }
}

/// Runs one sample under one variant. Failures land in `error`.
pub fn bench_sample(sample: &Sample, v: &Variant, rounds: usize) -> BenchRow {
    let mut row = BenchRow {
        sample: sample.name.to_string(),
        variant: v.name.clone(),
        ..BenchRow::default()
    };
    let program = match sample.program() {
        Ok(p) => Arc::new(p),
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    let seed = sample.seed();
    match run_campaign(&program, &seed, &v.config) {
        Ok(c) => {
            row.correct = c.report.correct;
            row.sat = c.report.sat;
            row.queries = c.report.queries;
            row.branches = c.report.branches;
            row.time = c.analysis.predicate_time + c.report.wall;
        }
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    }
    match time_skipping(&program, &seed, &v.config, rounds) {
        Ok(t) => {
            row.base = t.base;
            row.skip = t.skip;
            row.symbolic_base = t.symbolic_base;
            row.symbolic_skip = t.symbolic_skip;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

pub fn run_bench(samples: &[&Sample], variants: &[Variant], rounds: usize) -> Vec<BenchRow> {
    let mut rows = Vec::new();
    for v in variants {
        for s in samples {
            let row = bench_sample(s, v, rounds);
            log::info!("bench {} [{}] done in {:?}", row.sample, row.variant, row.time);
            rows.push(row);
        }
    }
    rows
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub fn format_table(rows: &[BenchRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<14} {:<18} {:>7} {:>5} {:>7} {:>8} {:>10} {:>9} {:>9} {:>6}",
        "sample", "config", "Correct", "SAT", "Queries", "Branches", "Time(ms)", "Base(ms)", "Skip(ms)", "X"
    );
    for r in rows {
        if let Some(e) = &r.error {
            let _ = writeln!(s, "{:<14} {:<18} error: {e}", r.sample, r.variant);
            continue;
        }
        let _ = writeln!(
            s,
            "{:<14} {:<18} {:>7} {:>5} {:>7} {:>8} {:>10.2} {:>9.3} {:>9.3} {:>6.2}",
            r.sample,
            r.variant,
            r.correct,
            r.sat,
            r.queries,
            r.branches,
            ms(r.time),
            ms(r.base),
            ms(r.skip),
            r.ratio()
        );
    }
    s
}

/// One `key=value` line per row, prefixed with `bench`.
pub fn machine_lines(rows: &[BenchRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = write!(s, "bench sample={} config={}", r.sample, r.variant);
        match &r.error {
            Some(e) => {
                let _ = writeln!(s, " error={e:?}");
            }
            None => {
                let _ = writeln!(
                    s,
                    " correct={} sat={} queries={} branches={} ms={:.3} base_ms={:.3} skip_ms={:.3} ratio={:.3} symbolic_base={} symbolic_skip={}",
                    r.correct,
                    r.sat,
                    r.queries,
                    r.branches,
                    ms(r.time),
                    ms(r.base),
                    ms(r.skip),
                    r.ratio(),
                    r.symbolic_base,
                    r.symbolic_skip
                );
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples::find;

    #[test]
    fn variants_parse() {
        let base = Config::default();
        assert!(!variant(&base, "no-slicing").unwrap().config.toggles.slicing);
        assert_eq!(variant(&base, "jobs=4").unwrap().config.jobs, 4);
        assert_eq!(variant(&base, "default").unwrap().config, base);
        assert!(variant(&base, "jobs=0").is_none());
        assert!(variant(&base, "fast").is_none());
    }

    #[test]
    fn row_and_output() {
        let v = variant(&Config::default(), "default").unwrap();
        let row = bench_sample(find("switch8").unwrap(), &v, 2);
        assert!(row.error.is_none());
        assert_eq!((row.branches, row.queries), (2, 7));
        assert_eq!(row.correct, row.sat);
        assert!(row.symbolic_skip < row.symbolic_base);
        let lines = machine_lines(std::slice::from_ref(&row));
        assert!(lines.starts_with("bench sample=switch8 config=default correct=7 sat=7 queries=7 branches=2 "));
        assert_eq!(format_table(&[row]).lines().count(), 2);
    }
}
