//! Random well-sorted expressions over a few input bytes, for differential
//! testing of the simplifier, the evaluator and the solver.

use rand::Rng;

use super::{AstContext, Expr, Op};

/// Generator settings: depth bound and number of input bytes.
#[derive(Clone, Copy, Debug)]
pub struct RandomExprs {
    pub max_depth: u32,
    pub vars: u32,
}

const WIDTHS: [u32; 6] = [8, 8, 16, 32, 4, 64];

impl RandomExprs {
    pub fn width<R: Rng>(&self, rng: &mut R) -> u32 {
        WIDTHS[rng.random_range(0..WIDTHS.len())]
    }

    fn constant<R: Rng>(&self, ctx: &mut AstContext, rng: &mut R, w: u32) -> Expr {
        let v = match rng.random_range(0..4) {
            0 => 0,
            1 => 1,
            2 => u64::MAX,
            _ => rng.random(),
        };
        ctx.bv(w, v)
    }

    fn leaf<R: Rng>(&self, ctx: &mut AstContext, rng: &mut R, w: u32) -> Expr {
        if self.vars == 0 || rng.random_bool(0.3) {
            return self.constant(ctx, rng, w);
        }
        let v = ctx.var(rng.random_range(0..self.vars));
        match w.cmp(&8) {
            std::cmp::Ordering::Equal => v,
            std::cmp::Ordering::Less => {
                let low = rng.random_range(0..=8 - w);
                ctx.mk(Op::Extract { high: low + w - 1, low }, &[v]).unwrap()
            }
            std::cmp::Ordering::Greater => {
                let ext = if rng.random_bool(0.5) { Op::ZeroExtend(w - 8) } else { Op::SignExtend(w - 8) };
                ctx.mk(ext, &[v]).unwrap()
            }
        }
    }

    /// A bitvector of width `w`.
    pub fn bv<R: Rng>(&self, ctx: &mut AstContext, rng: &mut R, w: u32, depth: u32) -> Expr {
        if depth >= self.max_depth || rng.random_bool(0.2) {
            return self.leaf(ctx, rng, w);
        }
        let d = depth + 1;
        let op = rng.random_range(0..16);
        let e = match op {
            0..=5 => {
                let ops = [Op::Add, Op::Sub, Op::Mul, Op::And, Op::Or, Op::Xor];
                let a = self.bv(ctx, rng, w, d);
                let b = self.bv(ctx, rng, w, d);
                ctx.mk(ops[op], &[a, b])
            }
            6 | 7 => {
                let a = self.bv(ctx, rng, w, d);
                ctx.mk(if op == 6 { Op::Not } else { Op::Neg }, &[a])
            }
            8 | 9 => {
                let ops = [Op::Shl, Op::LShr, Op::AShr];
                let a = self.bv(ctx, rng, w, d);
                let b = if rng.random_bool(0.5) {
                    let k = rng.random_range(0..=w as u64 + 1);
                    ctx.bv(w, k)
                } else {
                    self.bv(ctx, rng, w, d)
                };
                ctx.mk(ops[rng.random_range(0..3)], &[a, b])
            }
            10 => {
                let c = self.boolean(ctx, rng, d);
                let a = self.bv(ctx, rng, w, d);
                let b = self.bv(ctx, rng, w, d);
                ctx.mk(Op::Ite, &[c, a, b])
            }
            11 | 12 if w < 64 => {
                let wide = (w + rng.random_range(1..=8)).min(64);
                let a = self.bv(ctx, rng, wide, d);
                let low = rng.random_range(0..=wide - w);
                ctx.mk(Op::Extract { high: low + w - 1, low }, &[a])
            }
            13 if w >= 2 => {
                let hi = rng.random_range(1..w);
                let a = self.bv(ctx, rng, hi, d);
                let b = self.bv(ctx, rng, w - hi, d);
                ctx.mk(Op::Concat, &[a, b])
            }
            14 if w >= 2 => {
                let narrow = rng.random_range(1..w);
                let a = self.bv(ctx, rng, narrow, d);
                let ext = if rng.random_bool(0.5) { Op::ZeroExtend(w - narrow) } else { Op::SignExtend(w - narrow) };
                ctx.mk(ext, &[a])
            }
            _ => Ok(self.leaf(ctx, rng, w)),
        };
        e.expect("generator builds well-sorted nodes")
    }

    /// A boolean.
    pub fn boolean<R: Rng>(&self, ctx: &mut AstContext, rng: &mut R, depth: u32) -> Expr {
        if depth >= self.max_depth {
            let w = self.width(rng);
            let a = self.leaf(ctx, rng, w);
            let b = self.leaf(ctx, rng, w);
            return ctx.mk(Op::Ult, &[a, b]).unwrap();
        }
        let d = depth + 1;
        let e = match rng.random_range(0..10) {
            k @ 0..=5 => {
                let ops = [Op::Eq, Op::Ne, Op::Ult, Op::Ule, Op::Slt, Op::Sle];
                let w = self.width(rng);
                let a = self.bv(ctx, rng, w, d);
                let b = self.bv(ctx, rng, w, d);
                ctx.mk(ops[k], &[a, b])
            }
            6 | 7 => {
                let a = self.boolean(ctx, rng, d);
                let b = self.boolean(ctx, rng, d);
                ctx.mk(if rng.random_bool(0.5) { Op::BoolAnd } else { Op::BoolOr }, &[a, b])
            }
            8 => {
                let a = self.boolean(ctx, rng, d);
                ctx.mk(Op::BoolNot, &[a])
            }
            _ => {
                let c = self.boolean(ctx, rng, d);
                let a = self.boolean(ctx, rng, d);
                let b = self.boolean(ctx, rng, d);
                ctx.mk(Op::Ite, &[c, a, b])
            }
        };
        e.expect("generator builds well-sorted nodes")
    }

    /// Any expression, boolean or bitvector.
    pub fn any<R: Rng>(&self, ctx: &mut AstContext, rng: &mut R) -> Expr {
        if rng.random_bool(0.5) {
            self.boolean(ctx, rng, 0)
        } else {
            let w = self.width(rng);
            self.bv(ctx, rng, w, 0)
        }
    }
}
