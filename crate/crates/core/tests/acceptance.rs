//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use minidse::ast::random::RandomExprs;
use minidse::ast::{eval, AstContext, CompiledExpr, Expr, Op};
use minidse::bench::{bench_sample, variant};
use minidse::config::Config;
use minidse::events::NullSink;
use minidse::inverter::{Direction, TaskRecord};
use minidse::mvm::{run_concrete, Program, RunOutcome};
use minidse::pipeline::{analyze, run_campaign, Campaign};
use minidse::samples::{find, PARSERS, SAMPLES};
use minidse::solver::{solve, SolverOptions, Status};
use minidse::symex::{predicates_equal, ConstraintKind};
use minidse::verifier::Verdict;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sample(name: &str) -> (Arc<Program>, Vec<u8>) {
    let s = find(name).unwrap();
    (Arc::new(s.program().unwrap()), s.seed())
}

fn campaign(name: &str, cfg: &Config) -> Campaign {
    let (p, seed) = sample(name);
    run_campaign(&p, &seed, cfg).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn with(toggle: &str) -> Config {
    variant(&Config::default(), toggle).unwrap().config
}

fn replay(p: &Program, input: &[u8]) -> RunOutcome {
    run_concrete(p, input, &Config::default().run_config(), &mut NullSink)
}

fn label(p: &Program, name: &str) -> u64 {
    p.label(name).unwrap_or_else(|| panic!("no label {name}"))
}

fn record_at<'a>(c: &'a Campaign, site: u64) -> Vec<&'a TaskRecord> {
    c.report.records.iter().filter(|r| r.site == site).collect()
}

fn slicing() -> Outcome {
    let start = Instant::now();
    let (p, _) = sample("slicing");
    let (br9, br15) = (label(&p, "br9"), label(&p, "br15"));
    let sliced = campaign("slicing", &Config::default());
    ensure(replay(&p, &find("slicing").unwrap().seed()).stdout == b"FAIL\n", || "seed does not print FAIL".into())?;
    let r = record_at(&sliced, br15);
    ensure(r.len() == 1, || format!("{} records at line 15", r.len()))?;
    let input = r[0].input.as_ref().ok_or("no sliced input")?;
    let out = replay(&p, input);
    ensure(out.stdout == b"OK\n", || format!("sliced input prints {:?}", String::from_utf8_lossy(&out.stdout)))?;
    ensure(r[0].verdict == Some(Verdict::Correct), || format!("sliced verdict {:?}", r[0].verdict))?;
    let whole = campaign("slicing", &with("no-slicing"));
    let trace = &whole.analysis.outcome.trace;
    let line9 = trace.entries.iter().position(|e| e.site == br9).ok_or("line 9 not in trace")?;
    let r = record_at(&whole, br15);
    ensure(r[0].verdict == Some(Verdict::Divergent(line9)), || {
        format!("unsliced verdict {:?}, line 9 entry is {line9}", r[0].verdict)
    })?;
    let t = start.elapsed();
    ensure(t < Duration::from_secs(5), || format!("took {t:?}"))?;
    Ok(format!("sliced OK/Correct, unsliced Divergent({line9}), {t:.2?}"))
}

fn minsearch() -> Outcome {
    let start = Instant::now();
    let (p, seed) = sample("minsearch");
    let min = seed.chunks(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).min().unwrap();
    ensure(min < 100, || format!("seed minimum {min}"))?;
    let fin = label(&p, "final");
    let c = campaign("minsearch", &Config::default());
    let r = record_at(&c, fin);
    ensure(!r.is_empty(), || "final branch not in predicate".into())?;
    let last = r.last().unwrap();
    let input = last.input.as_ref().ok_or("final branch unsolved")?;
    let out = replay(&p, input);
    ensure(out.stdout == b"min>100", || format!("prints {:?}", String::from_utf8_lossy(&out.stdout)))?;
    ensure(last.verdict == Some(Verdict::Correct), || format!("verdict {:?}", last.verdict))?;
    let nocs = campaign("minsearch", &with("no-context-switch"));
    let good = record_at(&nocs, fin).iter().filter(|r| r.verdict == Some(Verdict::Correct)).count();
    ensure(good == 0, || format!("{good} Correct inputs without context switching"))?;
    let t = start.elapsed();
    ensure(t < Duration::from_secs(10), || format!("took {t:?}"))?;
    Ok(format!("min>100 Correct; without context switching {} final-branch records, none Correct; {t:.2?}", record_at(&nocs, fin).len()))
}

fn jump_tables() -> Outcome {
    let start = Instant::now();
    let (p, _) = sample("switch8");
    let c = campaign("switch8", &Config::default());
    let pred = &c.analysis.symex.predicate;
    let ind: Vec<_> = pred.iter().enumerate().filter(|(_, pc)| pc.kind == ConstraintKind::Indirect).collect();
    ensure(ind.len() == 1, || format!("{} indirect predicate entries", ind.len()))?;
    let (idx, pc) = ind[0];
    let table = label(&p, "table");
    let targets: BTreeSet<u64> = (0..8).map(|i| p.read_data(table + 8 * i, 8)).collect();
    let k = targets.len();
    let tasks: Vec<_> = c.report.records.iter().filter(|r| r.branch_index == idx).collect();
    ensure(tasks.len() == k - 1, || format!("{} queries for {k} unique targets", tasks.len()))?;
    for r in &tasks {
        if r.status == minidse::inverter::TaskStatus::Sat {
            ensure(r.verdict == Some(Verdict::Correct), || format!("{} verdict {:?}", r.direction, r.verdict))?;
        }
    }
    let c12 = label(&p, "c12");
    let (_, dup) = pc.alt_targets.iter().find(|(t, _)| *t == c12).ok_or("shared target missing")?;
    ensure(dup.op() == Op::BoolOr && dup.children().iter().all(|e| e.op() == Op::Eq), || {
        format!("shared target condition is {:?}", dup.op())
    })?;
    let off = campaign("switch_off", &Config::default());
    let (q, _) = sample("switch_off");
    let pred = &off.analysis.symex.predicate;
    let pc = pred.iter().find(|pc| pc.kind == ConstraintKind::Indirect).ok_or("no indirect entry")?;
    let got: BTreeSet<u64> = pc.alt_targets.iter().map(|(t, _)| *t).collect();
    let want: BTreeSet<u64> = ["c0", "c2", "c4"].iter().map(|l| label(&q, l)).collect();
    ensure(got == want, || format!("alt targets {got:x?}, expected {want:x?}"))?;
    ensure(pc.taken_target == Some(label(&q, "c1")), || format!("taken {:?}", pc.taken_target))?;
    let wrong = off.report.records.iter().filter(|r| r.verdict != Some(Verdict::Correct)).count();
    ensure(wrong == 0, || format!("{wrong} switch_off inputs not Correct"))?;
    let t = start.elapsed();
    ensure(t < Duration::from_secs(10), || format!("took {t:?}"))?;
    Ok(format!("k={k}, {} queries, one disjunction, offset targets exact, {t:.2?}", tasks.len()))
}

fn skip_equivalence() -> Outcome {
    let mut ratios = Vec::new();
    for s in SAMPLES {
        let (p, seed) = sample(s.name);
        let on = analyze(&p, &seed, &Config::default()).map_err(|e| e.to_string())?;
        let off = analyze(&p, &seed, &with("no-skip")).map_err(|e| e.to_string())?;
        ensure(predicates_equal(&on.symex.predicate, &off.symex.predicate), || {
            format!("{}: predicates differ", s.name)
        })?;
        let (a, b) = (on.symex.stats.symbolic, off.symex.stats.symbolic);
        ensure(a < b, || format!("{}: symbolic {a} with skipping, {b} without", s.name))?;
        let row = bench_sample(s, &variant(&Config::default(), "default").unwrap(), 30);
        ensure(row.error.is_none(), || format!("{}: {:?}", s.name, row.error))?;
        ratios.push(format!("{}={:.2}", s.name, row.ratio()));
        ensure(row.ratio() >= 1.0, || format!("{}: skip ratio {:.3} ({})", s.name, row.ratio(), ratios.join(" ")))?;
    }
    Ok(format!("ratios {}", ratios.join(" ")))
}

const SAMPLES_PER_EXPR: usize = 100_000;

fn ast_soundness() -> Outcome {
    let start = Instant::now();
    let gen = RandomExprs { max_depth: 6, vars: 3 };
    let mut exhaustive = 0;
    for seed in 0..10_000u64 {
        let mut raw_ctx = AstContext::new();
        raw_ctx.set_simplify(false);
        let mut ctx = AstContext::new();
        let raw = gen.any(&mut raw_ctx, &mut ChaCha8Rng::seed_from_u64(seed));
        let simp = gen.any(&mut ctx, &mut ChaCha8Rng::seed_from_u64(seed));
        let used: Vec<u32> = raw.used_variables().iter().collect();
        // node ids are per context, so each side gets its own tape
        let (lanes, byte): (usize, Box<dyn Fn(u32, usize) -> u8>) = if used.len() <= 2 {
            exhaustive += 1;
            let lanes = 1usize << (8 * used.len());
            (lanes, Box::new(move |v, l| match used.iter().position(|&u| u == v) {
                Some(k) => (l >> (8 * k)) as u8,
                None => 0,
            }))
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ seed);
            let pts: Vec<[u8; 3]> = (0..SAMPLES_PER_EXPR).map(|_| rng.random()).collect();
            (SAMPLES_PER_EXPR, Box::new(move |v, l| pts[l][v as usize]))
        };
        let cols = [&raw, &simp].map(|e| CompiledExpr::new(std::slice::from_ref(e)).eval_batch(lanes, &byte).remove(0));
        if let Some(l) = (0..lanes).find(|&l| cols[0][l] != cols[1][l]) {
            return Err(format!("expression {seed} differs at lane {l}: {raw:?} vs {simp:?}"));
        }
    }
    rewrite_examples()?;
    Ok(format!(
        "10000 exprs ({exhaustive} exhaustive, rest {SAMPLES_PER_EXPR} samples), six rewrites exact, {:.2?}",
        start.elapsed()
    ))
}

fn rewrite_examples() -> Result<(), String> {
    let mut c = AstContext::new();
    let a = c.var(0);
    let b = c.var(1);
    let a32 = c.mk(Op::ZeroExtend(24), &[a.clone()]).unwrap();
    let wide = c.mk(Op::Concat, &[a.clone(), b.clone(), a.clone(), b.clone()]).unwrap();
    let mut mk = |op, ch: &[Expr]| c.mk(op, ch).unwrap();
    ensure(mk(Op::And, &[a.clone(), a.clone()]) == a, || "A & A".into())?;
    ensure(mk(Op::Or, &[a.clone(), a.clone()]) == a, || "A | A".into())?;
    let zero = mk(Op::Const { width: 8, value: 0 }, &[]);
    for op in [Op::Xor, Op::Sub] {
        ensure(mk(op, &[a.clone(), a.clone()]) == zero, || format!("{op:?}(A, A)"))?;
    }
    for op in [Op::Mul, Op::And, Op::Shl, Op::LShr] {
        ensure(mk(op, &[zero.clone(), a.clone()]) == zero, || format!("{op:?}(0, A)"))?;
    }
    let inner = mk(Op::Extract { high: 27, low: 4 }, &[wide.clone()]);
    let nested = mk(Op::Extract { high: 13, low: 2 }, &[inner]);
    let direct = mk(Op::Extract { high: 17, low: 6 }, &[wide.clone()]);
    ensure(nested == direct, || format!("nested extract gave {nested:?}"))?;
    let bvs: Vec<Expr> = (1..=4).map(|v| mk(Op::Const { width: 8, value: v }, &[])).collect();
    let sym: Vec<Expr> = vec![bvs[0].clone(), bvs[1].clone(), b.clone(), bvs[3].clone()];
    let cat = mk(Op::Concat, &sym);
    let e = mk(Op::Extract { high: 11, low: 9 }, &[cat]);
    let want = mk(Op::Extract { high: 3, low: 1 }, &[b.clone()]);
    ensure(e == want, || format!("extract of concat gave {e:?}"))?;
    let cat = mk(Op::Concat, &bvs);
    let e = mk(Op::Extract { high: 11, low: 9 }, &[cat]);
    ensure(e.as_const() == Some((3 >> 1) & 0b111) && e.width() == 3, || "constant limb".into())?;
    let limbs: Vec<Expr> = (0..4)
        .rev()
        .map(|i| mk(Op::Extract { high: 8 * i + 7, low: 8 * i }, &[wide.clone()]))
        .collect();
    let joined = mk(Op::Concat, &limbs);
    let want = mk(Op::Extract { high: 31, low: 0 }, &[wide.clone()]);
    ensure(joined == want, || format!("concat of extracts gave {joined:?}"))?;
    let ext = mk(Op::ZeroExtend(32), &[a32.clone()]);
    let back = mk(Op::Extract { high: 31, low: 0 }, &[ext]);
    ensure(back == a32, || format!("extract of zero-extend gave {back:?}"))?;
    Ok(())
}

fn solver_oracle() -> Outcome {
    let start = Instant::now();
    let gen = RandomExprs { max_depth: 4, vars: 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut sat, mut unsat) = (0, 0);
    for i in 0..1000 {
        let mut ctx = AstContext::new();
        let n = rng.random_range(1..=3);
        let cs: Vec<Expr> = (0..n).map(|_| gen.boolean(&mut ctx, &mut rng, 0)).collect();
        let compiled = CompiledExpr::new(&cs);
        let cols = compiled.eval_batch(1 << 16, |v, l| (l >> (8 * v)) as u8);
        let expect = (0..1 << 16).any(|l| cols.iter().all(|c| c[l] != 0));
        let r = solve(&cs, &SolverOptions { timeout: None, seed: i }).map_err(|e| format!("query {i}: {e}"))?;
        match r.status {
            Status::Sat => {
                ensure(expect, || format!("query {i}: Sat but enumeration finds no model"))?;
                let full: Vec<u8> = (0..2).map(|v| r.model.get(v).unwrap_or(0)).collect();
                for c in &cs {
                    ensure(eval(c, &full) == Ok(1), || format!("query {i}: model fails eval"))?;
                }
                sat += 1;
            }
            Status::Unsat => {
                ensure(!expect, || format!("query {i}: Unsat but enumeration finds a model"))?;
                unsat += 1;
            }
            Status::Timeout => return Err(format!("query {i} timed out")),
        }
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(120), || format!("took {t:?}"))?;
    Ok(format!("{sat} sat, {unsat} unsat, all match, {t:.2?}"))
}

fn corpus_bytes(c: &Campaign, dir: &Path) -> Vec<(String, Vec<u8>)> {
    let files = c.report.write(dir, None).unwrap();
    let mut out: Vec<_> = files
        .iter()
        .map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(f).unwrap()))
        .collect();
    out.sort();
    out
}

fn parallel_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let jobs = [1usize, 2, 8];
    for s in SAMPLES {
        let mut corpora = Vec::new();
        for j in jobs {
            let mut cfg = with(&format!("jobs={j}"));
            cfg.solver_timeout_ms = 0;
            let c = campaign(s.name, &cfg);
            ensure(c.report.timeouts == 0, || format!("{}: timeouts", s.name))?;
            corpora.push(corpus_bytes(&c, &tmp.path().join(format!("{}-{j}", s.name))));
        }
        ensure(corpora.windows(2).all(|w| w[0] == w[1]), || format!("{}: corpora differ across jobs", s.name))?;
    }
    let mut times = Vec::new();
    for name in PARSERS {
        let t: Vec<Duration> = jobs
            .iter()
            .map(|&j| {
                let cfg = with(&format!("jobs={j}"));
                (0..5).map(|_| campaign(name, &cfg).report.wall).min().unwrap()
            })
            .collect();
        times.push(format!("{name} {:.2?}/{:.2?}/{:.2?}", t[0], t[1], t[2]));
        let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
        ensure(t.windows(2).all(|w| w[1] <= w[0]), || {
            format!("corpora identical; time not non-increasing over jobs 1/2/8 on {cpus} CPU(s): {}", times.join(", "))
        })?;
    }
    Ok(format!("corpora identical for jobs 1/2/8; {}", times.join(", ")))
}

fn has_wide_indirect(c: &Campaign) -> bool {
    c.analysis
        .symex
        .predicate
        .iter()
        .any(|pc| pc.kind == ConstraintKind::Indirect && pc.alt_targets.len() >= 2)
}

fn counts() -> Outcome {
    let mut n = 0;
    for toggle in ["default", "no-slicing", "no-skip", "no-jumptables", "no-simplify", "no-context-switch"] {
        for s in SAMPLES {
            let c = campaign(s.name, &with(toggle));
            let r = &c.report;
            let what = || format!("{} [{toggle}]: correct {} sat {} queries {} branches {}", s.name, r.correct, r.sat, r.queries, r.branches);
            ensure(r.correct <= r.sat && r.sat <= r.queries && r.branches <= r.queries, what)?;
            ensure((r.branches < r.queries) == has_wide_indirect(&c), what)?;
            let unique: std::collections::HashSet<_> = r.records.iter().map(|x| (x.branch_index, x.direction)).collect();
            ensure(unique.len() == r.queries, what)?;
            if toggle == "no-jumptables" {
                ensure(r.records.iter().all(|x| x.direction == Direction::Negate), what)?;
            }
            n += 1;
        }
    }
    Ok(format!("{n} campaigns consistent"))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("slicing", slicing),
        ("multithreading", minsearch),
        ("jump tables", jump_tables),
        ("skip equivalence", skip_equivalence),
        ("ast soundness", ast_soundness),
        ("solver oracle", solver_oracle),
        ("parallel determinism", parallel_determinism),
        ("metric bookkeeping", counts),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(d) => println!("criterion {} {name}: PASS ({d})", i + 1),
            Err(e) => {
                println!("criterion {} {name}: FAIL ({e})", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
