//! Path predicate slicing: keep only the prefix constraints that share
//! variables, transitively, with the condition being inverted.

use thiserror::Error;

use crate::ast::{Assignment, Expr, VarSet};
use crate::symex::PathConstraint;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SliceError {
    #[error("model assigns input byte {index} but the seed has {len} bytes")]
    ModelOutOfRange { index: u32, len: usize },
}

#[derive(Clone, Debug)]
pub struct SlicedQuery {
    pub cond: Expr,
    /// Indices into the prefix, in trace order.
    pub kept: Vec<usize>,
    pub vars: VarSet,
}

impl SlicedQuery {
    /// Conditions to assert, prefix first, the inverted condition last.
    pub fn constraints(&self, prefix: &[PathConstraint]) -> Vec<Expr> {
        let mut out: Vec<Expr> = self.kept.iter().map(|&i| prefix[i].cond.clone()).collect();
        out.push(self.cond.clone());
        out
    }
}

/// The closure fixpoint: grow the variable set until no prefix constraint
/// adds anything new.
pub fn slice(cond: &Expr, prefix: &[PathConstraint]) -> SlicedQuery {
    let mut vars = cond.used_variables().clone();
    let mut taken = vec![false; prefix.len()];
    loop {
        let mut changed = false;
        for (i, c) in prefix.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let used = c.cond.used_variables();
            if used.intersects(&vars) {
                taken[i] = true;
                vars.union_with(used);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    SlicedQuery {
        cond: cond.clone(),
        kept: (0..prefix.len()).filter(|&i| taken[i]).collect(),
        vars,
    }
}

/// No slicing: the whole prefix is kept.
pub fn slice_all(cond: &Expr, prefix: &[PathConstraint]) -> SlicedQuery {
    let mut vars = cond.used_variables().clone();
    for c in prefix {
        vars.union_with(c.cond.used_variables());
    }
    SlicedQuery {
        cond: cond.clone(),
        kept: (0..prefix.len()).collect(),
        vars,
    }
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb) as usize] = ra.min(rb);
        }
    }
}

/// Same result as [`slice`], computed by grouping variables that appear
/// together in some constraint.
pub fn slice_grouped(cond: &Expr, prefix: &[PathConstraint]) -> SlicedQuery {
    let top = prefix
        .iter()
        .filter_map(|c| c.cond.used_variables().max())
        .chain(cond.used_variables().max())
        .max();
    let Some(top) = top else {
        return SlicedQuery {
            cond: cond.clone(),
            kept: Vec::new(),
            vars: VarSet::new(),
        };
    };
    let mut uf = UnionFind {
        parent: (0..=top).collect(),
    };
    for c in prefix.iter().map(|c| &c.cond).chain([cond]) {
        let mut it = c.used_variables().iter();
        if let Some(first) = it.next() {
            for v in it {
                uf.union(first, v);
            }
        }
    }
    let roots: Vec<u32> = cond.used_variables().iter().map(|v| uf.find(v)).collect();
    let mut kept = Vec::new();
    let mut vars = cond.used_variables().clone();
    for (i, c) in prefix.iter().enumerate() {
        let used = c.cond.used_variables();
        if let Some(v) = used.iter().next() {
            if roots.contains(&uf.find(v)) {
                kept.push(i);
                vars.union_with(used);
            }
        }
    }
    SlicedQuery {
        cond: cond.clone(),
        kept,
        vars,
    }
}

/// Fills bytes the model leaves open with the seed's values.
pub fn complete_model(model: &Assignment, seed: &[u8]) -> Result<Vec<u8>, SliceError> {
    let mut out = seed.to_vec();
    for (i, v) in model.iter() {
        let slot = out.get_mut(i as usize).ok_or(SliceError::ModelOutOfRange {
            index: i,
            len: seed.len(),
        })?;
        *slot = v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::{AstContext, Op};
    use crate::symex::ConstraintKind;
    use proptest::prelude::*;

    fn constraint(ctx: &mut AstContext, vars: &[u32]) -> PathConstraint {
        let mut acc = ctx.bv(8, 0);
        for &v in vars {
            let x = ctx.var(v);
            acc = ctx.mk(Op::Add, &[acc, x]).unwrap();
        }
        let k = ctx.bv(8, 7);
        PathConstraint {
            site: 0x400,
            cond: ctx.mk(Op::Ult, &[acc, k]).unwrap(),
            kind: ConstraintKind::Conditional,
            alt_targets: Vec::new(),
            taken_target: None,
            trace_pos: 0,
            tid: 0,
        }
    }

    #[test]
    fn independent_constraints_are_dropped() {
        let mut ctx = AstContext::new();
        let prefix = vec![constraint(&mut ctx, &[1]), constraint(&mut ctx, &[2])];
        let cond = constraint(&mut ctx, &[0]).cond;
        assert!(slice(&cond, &prefix).kept.is_empty());
        assert_eq!(slice_all(&cond, &prefix).kept, vec![0, 1]);
    }

    #[test]
    fn chains_are_followed() {
        let mut ctx = AstContext::new();
        let prefix = vec![constraint(&mut ctx, &[0, 1]), constraint(&mut ctx, &[1, 2]), constraint(&mut ctx, &[5])];
        let cond = constraint(&mut ctx, &[2]).cond;
        let q = slice(&cond, &prefix);
        assert_eq!(q.kept, vec![0, 1]);
        assert_eq!(q.vars.iter().collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(q.constraints(&prefix).len(), 3);
    }

    #[test]
    fn model_completion() {
        let seed = [0u8; 24];
        assert_eq!(complete_model(&Assignment::new(), &seed).unwrap(), seed.to_vec());
        let m: Assignment = [(4, 0x41)].into_iter().collect();
        let out = complete_model(&m, &seed).unwrap();
        assert_eq!(out[4], 0x41);
        assert_eq!(out.iter().filter(|&&b| b != 0).count(), 1);
        let bad: Assignment = [(24, 1)].into_iter().collect();
        assert_eq!(
            complete_model(&bad, &seed),
            Err(SliceError::ModelOutOfRange { index: 24, len: 24 })
        );
    }

    /// Transitive closure over the "shares a variable" graph, by search.
    fn closure_oracle(cond: &[u32], prefix: &[Vec<u32>]) -> Vec<usize> {
        let mut vars: Vec<u32> = cond.to_vec();
        let mut kept = vec![false; prefix.len()];
        let mut stack = vars.clone();
        while let Some(v) = stack.pop() {
            for (i, c) in prefix.iter().enumerate() {
                if !kept[i] && c.contains(&v) {
                    kept[i] = true;
                    for &w in c {
                        if !vars.contains(&w) {
                            vars.push(w);
                            stack.push(w);
                        }
                    }
                }
            }
        }
        (0..prefix.len()).filter(|&i| kept[i]).collect()
    }

    proptest! {
        #[test]
        fn fixpoint_matches_oracle_and_grouping(
            cond in prop::collection::vec(0u32..12, 1..3),
            prefix in prop::collection::vec(prop::collection::vec(0u32..12, 1..4), 0..12),
        ) {
            let mut ctx = AstContext::new();
            let pcs: Vec<_> = prefix.iter().map(|v| constraint(&mut ctx, v)).collect();
            let c = constraint(&mut ctx, &cond).cond;
            let naive = slice(&c, &pcs);
            let grouped = slice_grouped(&c, &pcs);
            prop_assert_eq!(&naive.kept, &closure_oracle(&cond, &prefix));
            prop_assert_eq!(&naive.kept, &grouped.kept);
            prop_assert_eq!(&naive.vars, &grouped.vars);
            for &i in &naive.kept {
                prop_assert!(pcs[i].cond.used_variables().is_subset(&naive.vars));
            }
        }
    }
}
