//! Bitvector solver: bit-blasting to CNF plus a CDCL core.

mod blast;
mod cdcl;

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::ast::{eval, AstError, Assignment, Expr};

pub use blast::{bitblast, Cnf};
pub use cdcl::{Cdcl, Lit, SatStats, SatStatus};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("constraint has width {0}, expected a boolean")]
    NotBoolean(u32),
    #[error("model does not satisfy constraint {index}")]
    ModelRejected { index: usize },
    #[error(transparent)]
    Ast(#[from] AstError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Sat,
    Unsat,
    Timeout,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub timeout: Option<Duration>,
    /// Seeds the initial branching phases.
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            timeout: Some(DEFAULT_TIMEOUT),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub status: Status,
    /// Input bytes fixed by the query; empty unless Sat.
    pub model: Assignment,
    pub stats: SatStats,
    pub num_vars: u32,
    pub num_clauses: usize,
    pub elapsed: Duration,
}

/// Solves an already encoded formula.
pub fn solve_cnf(cnf: &Cnf, opts: &SolverOptions) -> (Status, Assignment, SatStats) {
    let deadline = opts.timeout.map(|t| Instant::now() + t);
    let mut s = Cdcl::new(cnf.num_vars, opts.seed);
    for c in &cnf.clauses {
        s.add_clause(c);
    }
    let status = match s.solve(deadline) {
        SatStatus::Sat => Status::Sat,
        SatStatus::Unsat => Status::Unsat,
        SatStatus::Timeout => Status::Timeout,
    };
    let mut model = Assignment::new();
    if status == Status::Sat {
        let bits = s.model();
        let mut bytes = std::collections::BTreeMap::<u32, u8>::new();
        for (&(byte, bit), &v) in &cnf.bit_map {
            let b = bytes.entry(byte).or_default();
            if bits[v as usize] {
                *b |= 1 << bit;
            }
        }
        model = bytes.into_iter().collect();
    }
    (status, model, s.stats)
}

/// Decides the conjunction of `constraints`. A Sat model is checked against
/// the expressions before it is returned.
pub fn solve(constraints: &[Expr], opts: &SolverOptions) -> Result<SolveResult, SolverError> {
    let start = Instant::now();
    let cnf = bitblast(constraints)?;
    let (status, model, stats) = solve_cnf(&cnf, opts);
    if status == Status::Sat {
        for (index, c) in constraints.iter().enumerate() {
            if eval(c, &model)? != 1 {
                return Err(SolverError::ModelRejected { index });
            }
        }
    }
    Ok(SolveResult {
        status,
        model,
        stats,
        num_vars: cnf.num_vars,
        num_clauses: cnf.clauses.len(),
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::{AstContext, Op};

    fn opts() -> SolverOptions {
        SolverOptions {
            timeout: None,
            seed: 1,
        }
    }

    #[test]
    fn byte_equals_constant() {
        let mut c = AstContext::new();
        let x = c.var(0);
        let k = c.bv(8, 0x41);
        let e = c.mk(Op::Eq, &[x, k]).unwrap();
        let r = solve(&[e], &opts()).unwrap();
        assert_eq!(r.status, Status::Sat);
        assert_eq!(r.model.get(0), Some(0x41));
    }

    #[test]
    fn sum_to_zero_has_256_models() {
        let mut c = AstContext::new();
        let (x, y) = (c.var(0), c.var(1));
        let s = c.mk(Op::Add, &[x, y]).unwrap();
        let z = c.bv(8, 0);
        let e = c.mk(Op::Eq, &[s, z]).unwrap();
        let r = solve(&[e.clone()], &opts()).unwrap();
        assert_eq!(r.status, Status::Sat);
        let (a, b) = (r.model.get(0).unwrap(), r.model.get(1).unwrap());
        assert_eq!(a.wrapping_add(b), 0);
        let count = (0..=255u8)
            .flat_map(|a| (0..=255u8).map(move |b| [a, b]))
            .filter(|v| eval(&e, &v[..]).unwrap() == 1)
            .count();
        assert_eq!(count, 256);
    }

    #[test]
    fn contradiction_is_unsat() {
        let mut c = AstContext::new();
        let x = c.var(3);
        let k = c.bv(8, 9);
        let cond = c.mk(Op::Ult, &[x, k]).unwrap();
        let neg = c.mk(Op::BoolNot, &[cond.clone()]).unwrap();
        assert_eq!(solve(&[cond, neg], &opts()).unwrap().status, Status::Unsat);
        assert_eq!(solve(&[], &opts()).unwrap().status, Status::Sat);
    }

    #[test]
    fn non_boolean_is_rejected() {
        let mut c = AstContext::new();
        let x = c.var(0);
        assert!(matches!(solve(&[x], &opts()), Err(SolverError::NotBoolean(8))));
    }

    #[test]
    fn wide_arithmetic() {
        // x * 0x01010101 == 0x41414141 over a 32-bit concat of 4 bytes
        let mut c = AstContext::new();
        let bytes: Vec<_> = (0..4).map(|i| c.var(i)).collect();
        let x = c.mk(Op::Concat, &bytes).unwrap();
        let k = c.bv(32, 0x01010101);
        let m = c.mk(Op::Mul, &[x, k]).unwrap();
        let t = c.bv(32, 0x41414141);
        let e = c.mk(Op::Eq, &[m, t]).unwrap();
        let r = solve(&[e], &opts()).unwrap();
        assert_eq!(r.status, Status::Sat);
    }

    #[test]
    fn deterministic_models() {
        let mut c = AstContext::new();
        let x = c.var(0);
        let y = c.var(1);
        let k = c.bv(8, 100);
        let s = c.mk(Op::Add, &[x, y]).unwrap();
        let e = c.mk(Op::Ult, &[k, s]).unwrap();
        let a = solve(&[e.clone()], &opts()).unwrap();
        let b = solve(&[e], &opts()).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn dimacs_dump() {
        let mut c = AstContext::new();
        let x = c.var(0);
        let k = c.bv(8, 1);
        let e = c.mk(Op::Eq, &[x, k]).unwrap();
        let cnf = bitblast(&[e]).unwrap();
        let d = cnf.to_dimacs();
        assert!(d.starts_with(&format!("p cnf {} {}\n", cnf.num_vars, cnf.clauses.len())));
        assert_eq!(d.lines().filter(|l| l.ends_with(" 0")).count(), cnf.clauses.len());
        assert_eq!(cnf.bit_map.len(), 8);
    }

    #[test]
    fn random_queries_match_enumeration() {
        use crate::ast::random::RandomExprs;
        use rand::{Rng, SeedableRng};
        let gen = RandomExprs { max_depth: 4, vars: 2 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..150 {
            let mut c = AstContext::new();
            let e = gen.boolean(&mut c, &mut rng, 0);
            let tape = crate::ast::CompiledExpr::new(std::slice::from_ref(&e));
            let mut scratch = Vec::new();
            let sat = (0..=u16::MAX).any(|v| tape.eval_with(&v.to_le_bytes()[..], &mut scratch).unwrap() == 1);
            let r = solve(&[e.clone()], &opts()).unwrap();
            assert_eq!(r.status == Status::Sat, sat, "{e}");
            // a bitvector term pinned to the value it takes at a random point
            let w = gen.width(&mut rng);
            let t = gen.bv(&mut c, &mut rng, w, 0);
            let point: [u8; 2] = rng.random();
            let k = c.bv(w, eval(&t, &point[..]).unwrap());
            let q = c.mk(Op::Eq, &[t.clone(), k]).unwrap();
            assert_eq!(solve(&[q], &opts()).unwrap().status, Status::Sat, "{t}");
        }
    }
}
