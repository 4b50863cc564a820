use std::collections::BTreeMap;

use rustc_hash::FxHashMap;
use smallvec::SmallVec;

use super::{AstError, Expr, Op};

pub fn mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

/// Sign-extends the low `width` bits of `v` to 64 bits.
pub fn sign_extend(v: u64, width: u32) -> i64 {
    if width >= 64 {
        v as i64
    } else {
        let shift = 64 - width;
        ((v << shift) as i64) >> shift
    }
}

/// Concrete semantics of one operator. `width` is the result width,
/// `arg_widths` the operand widths; booleans are 0/1.
#[inline]
pub fn apply(op: Op, width: u32, arg_widths: &[u32], args: &[u64]) -> u64 {
    let m = mask(width);
    let b = |x: bool| x as u64;
    match op {
        Op::Const { value, .. } => value,
        Op::Bool(v) => v as u64,
        Op::Var(_) => unreachable!("variables have no operator semantics"),
        Op::Concat => args
            .iter()
            .zip(arg_widths)
            .fold(0u64, |acc, (&v, &w)| if w >= 64 { v } else { (acc << w) | v }),
        Op::Extract { high, low } => (args[0] >> low) & mask(high - low + 1),
        Op::ZeroExtend(_) => args[0],
        Op::SignExtend(_) => sign_extend(args[0], arg_widths[0]) as u64 & m,
        Op::Add => args[0].wrapping_add(args[1]) & m,
        Op::Sub => args[0].wrapping_sub(args[1]) & m,
        Op::Mul => args[0].wrapping_mul(args[1]) & m,
        Op::And => args[0] & args[1],
        Op::Or => args[0] | args[1],
        Op::Xor => args[0] ^ args[1],
        Op::Not => !args[0] & m,
        Op::Neg => args[0].wrapping_neg() & m,
        Op::Shl => {
            if args[1] >= width as u64 {
                0
            } else {
                (args[0] << args[1]) & m
            }
        }
        Op::LShr => {
            if args[1] >= width as u64 {
                0
            } else {
                args[0] >> args[1]
            }
        }
        Op::AShr => {
            let s = sign_extend(args[0], width);
            let sh = args[1].min(63);
            (s >> sh) as u64 & m
        }
        Op::Eq => b(args[0] == args[1]),
        Op::Ne => b(args[0] != args[1]),
        Op::Ult => b(args[0] < args[1]),
        Op::Ule => b(args[0] <= args[1]),
        Op::Slt => b(sign_extend(args[0], arg_widths[0]) < sign_extend(args[1], arg_widths[1])),
        Op::Sle => b(sign_extend(args[0], arg_widths[0]) <= sign_extend(args[1], arg_widths[1])),
        Op::Ite => {
            if args[0] != 0 {
                args[1]
            } else {
                args[2]
            }
        }
        Op::BoolAnd => b(args[0] != 0 && args[1] != 0),
        Op::BoolOr => b(args[0] != 0 || args[1] != 0),
        Op::BoolNot => b(args[0] == 0),
    }
}

/// Source of input-byte values for evaluation.
pub trait Valuation {
    fn byte(&self, var: u32) -> Option<u8>;
}

impl Valuation for [u8] {
    fn byte(&self, var: u32) -> Option<u8> {
        self.get(var as usize).copied()
    }
}

impl Valuation for Vec<u8> {
    fn byte(&self, var: u32) -> Option<u8> {
        self.as_slice().byte(var)
    }
}

/// Partial map from input-byte index to value.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Assignment(BTreeMap<u32, u8>);

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, var: u32, value: u8) {
        self.0.insert(var, value);
    }

    pub fn get(&self, var: u32) -> Option<u8> {
        self.0.get(&var).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, u8)> + '_ {
        self.0.iter().map(|(&k, &v)| (k, v))
    }
}

impl FromIterator<(u32, u8)> for Assignment {
    fn from_iter<I: IntoIterator<Item = (u32, u8)>>(iter: I) -> Self {
        Assignment(iter.into_iter().collect())
    }
}

impl Valuation for Assignment {
    fn byte(&self, var: u32) -> Option<u8> {
        self.get(var)
    }
}

struct Step {
    op: Op,
    width: u32,
    arg_widths: SmallVec<[u32; 3]>,
    args: SmallVec<[u32; 3]>,
}

/// An expression DAG flattened into a straight-line tape, for evaluating the
/// same expressions under many assignments. All roots must come from one
/// [`AstContext`](super::AstContext), since nodes are keyed by id.
pub struct CompiledExpr {
    steps: Vec<Step>,
    roots: Vec<u32>,
}

impl CompiledExpr {
    pub fn new(roots: &[Expr]) -> Self {
        let mut slot: FxHashMap<u32, u32> = FxHashMap::default();
        let mut steps = Vec::new();
        let mut out_roots = Vec::with_capacity(roots.len());
        for root in roots {
            // iterative post-order so deep chains do not overflow the stack
            let mut stack: Vec<(Expr, bool)> = vec![(root.clone(), false)];
            while let Some((e, expanded)) = stack.pop() {
                if slot.contains_key(&e.id()) {
                    continue;
                }
                if expanded {
                    let step = Step {
                        op: e.op(),
                        width: e.width(),
                        arg_widths: e.children().iter().map(Expr::width).collect(),
                        args: e.children().iter().map(|c| slot[&c.id()]).collect(),
                    };
                    slot.insert(e.id(), steps.len() as u32);
                    steps.push(step);
                } else {
                    stack.push((e.clone(), true));
                    for c in e.children().iter().rev() {
                        if !slot.contains_key(&c.id()) {
                            stack.push((c.clone(), false));
                        }
                    }
                }
            }
            out_roots.push(slot[&root.id()]);
        }
        CompiledExpr {
            steps,
            roots: out_roots,
        }
    }

    /// Values of all roots, in order.
    pub fn eval_all<V: Valuation + ?Sized>(&self, a: &V) -> Result<Vec<u64>, AstError> {
        let mut vals = Vec::with_capacity(self.steps.len());
        self.run(a, &mut vals)?;
        Ok(self.roots.iter().map(|&r| vals[r as usize]).collect())
    }

    /// Value of the first root.
    pub fn eval<V: Valuation + ?Sized>(&self, a: &V) -> Result<u64, AstError> {
        let mut vals = Vec::with_capacity(self.steps.len());
        self.run(a, &mut vals)?;
        Ok(vals[self.roots[0] as usize])
    }

    /// True iff every root evaluates to nonzero.
    pub fn all_true<V: Valuation + ?Sized>(&self, a: &V) -> Result<bool, AstError> {
        let mut vals = Vec::with_capacity(self.steps.len());
        self.run(a, &mut vals)?;
        Ok(self.roots.iter().all(|&r| vals[r as usize] != 0))
    }

    /// Evaluates into a caller-owned scratch buffer; returns the first root.
    pub fn eval_with<V: Valuation + ?Sized>(&self, a: &V, scratch: &mut Vec<u64>) -> Result<u64, AstError> {
        self.run(a, scratch)?;
        Ok(scratch[self.roots[0] as usize])
    }

    /// Evaluates every root under `lanes` assignments at once, where
    /// `byte(var, lane)` supplies input bytes. Returns one vector per root.
    pub fn eval_batch(&self, lanes: usize, byte: impl Fn(u32, usize) -> u8) -> Vec<Vec<u64>> {
        const CHUNK: usize = 1024;
        let mut out: Vec<Vec<u64>> = self.roots.iter().map(|_| Vec::with_capacity(lanes)).collect();
        let mut vals = vec![0u64; self.steps.len() * CHUNK];
        let mut argv: SmallVec<[u64; 8]> = SmallVec::new();
        for start in (0..lanes).step_by(CHUNK) {
            let n = CHUNK.min(lanes - start);
            for (k, s) in self.steps.iter().enumerate() {
                let (done, rest) = vals.split_at_mut(k * CHUNK);
                let dst = &mut rest[..n];
                let col = |i: u32| &done[i as usize * CHUNK..i as usize * CHUNK + n];
                match (s.op, &s.args[..]) {
                    (Op::Var(v), _) => dst.iter_mut().enumerate().for_each(|(l, d)| *d = byte(v, start + l) as u64),
                    (Op::Const { value, .. }, _) => dst.fill(value),
                    (Op::Bool(b), _) => dst.fill(b as u64),
                    (Op::Ite, &[c, a, b]) => {
                        for (((d, &k), &x), &y) in dst.iter_mut().zip(col(c)).zip(col(a)).zip(col(b)) {
                            *d = if k != 0 { x } else { y };
                        }
                    }
                    (op, &[a]) => unary_kernel(op, s.width, s.arg_widths[0], dst, col(a)),
                    (op, &[a, b]) => binary_kernel(op, s.width, &s.arg_widths, dst, col(a), col(b)),
                    (op, args) => {
                        for (l, d) in dst.iter_mut().enumerate() {
                            argv.clear();
                            argv.extend(args.iter().map(|&i| done[i as usize * CHUNK + l]));
                            *d = apply(op, s.width, &s.arg_widths, &argv);
                        }
                    }
                }
            }
            for (o, &r) in out.iter_mut().zip(&self.roots) {
                o.extend_from_slice(&vals[r as usize * CHUNK..r as usize * CHUNK + n]);
            }
        }
        out
    }

    fn run<V: Valuation + ?Sized>(&self, a: &V, vals: &mut Vec<u64>) -> Result<(), AstError> {
        vals.clear();
        let mut argv: SmallVec<[u64; 8]> = SmallVec::new();
        for s in &self.steps {
            let v = match s.op {
                Op::Var(i) => a.byte(i).ok_or(AstError::MissingVariable(i))? as u64,
                Op::Const { value, .. } => value,
                Op::Bool(b) => b as u64,
                op => {
                    argv.clear();
                    argv.extend(s.args.iter().map(|&i| vals[i as usize]));
                    apply(op, s.width, &s.arg_widths, &argv)
                }
            };
            vals.push(v);
        }
        Ok(())
    }
}

fn map1(dst: &mut [u64], a: &[u64], f: impl Fn(u64) -> u64) {
    for (d, &x) in dst.iter_mut().zip(a) {
        *d = f(x);
    }
}

fn map2(dst: &mut [u64], a: &[u64], b: &[u64], f: impl Fn(u64, u64) -> u64) {
    for ((d, &x), &y) in dst.iter_mut().zip(a).zip(b) {
        *d = f(x, y);
    }
}

/// [`apply`] over a column, with the operator dispatched once.
fn unary_kernel(op: Op, width: u32, arg_width: u32, dst: &mut [u64], a: &[u64]) {
    let m = mask(width);
    match op {
        Op::Extract { high, low } => {
            let mk = mask(high - low + 1);
            map1(dst, a, |x| (x >> low) & mk)
        }
        Op::ZeroExtend(_) => dst.copy_from_slice(a),
        Op::SignExtend(_) => map1(dst, a, |x| sign_extend(x, arg_width) as u64 & m),
        Op::Not => map1(dst, a, |x| !x & m),
        Op::Neg => map1(dst, a, |x| x.wrapping_neg() & m),
        Op::BoolNot => map1(dst, a, |x| (x == 0) as u64),
        op => map1(dst, a, |x| apply(op, width, &[arg_width], &[x])),
    }
}

fn binary_kernel(op: Op, width: u32, aw: &[u32], dst: &mut [u64], a: &[u64], b: &[u64]) {
    let m = mask(width);
    let w = width as u64;
    match op {
        Op::Add => map2(dst, a, b, |x, y| x.wrapping_add(y) & m),
        Op::Sub => map2(dst, a, b, |x, y| x.wrapping_sub(y) & m),
        Op::Mul => map2(dst, a, b, |x, y| x.wrapping_mul(y) & m),
        Op::And => map2(dst, a, b, |x, y| x & y),
        Op::Or => map2(dst, a, b, |x, y| x | y),
        Op::Xor => map2(dst, a, b, |x, y| x ^ y),
        Op::Shl => map2(dst, a, b, |x, y| if y >= w { 0 } else { (x << y) & m }),
        Op::LShr => map2(dst, a, b, |x, y| if y >= w { 0 } else { x >> y }),
        Op::Eq => map2(dst, a, b, |x, y| (x == y) as u64),
        Op::Ne => map2(dst, a, b, |x, y| (x != y) as u64),
        Op::Ult => map2(dst, a, b, |x, y| (x < y) as u64),
        Op::Ule => map2(dst, a, b, |x, y| (x <= y) as u64),
        Op::Slt => map2(dst, a, b, |x, y| (sign_extend(x, aw[0]) < sign_extend(y, aw[1])) as u64),
        Op::Sle => map2(dst, a, b, |x, y| (sign_extend(x, aw[0]) <= sign_extend(y, aw[1])) as u64),
        Op::BoolAnd => map2(dst, a, b, |x, y| (x != 0 && y != 0) as u64),
        Op::BoolOr => map2(dst, a, b, |x, y| (x != 0 || y != 0) as u64),
        op => map2(dst, a, b, |x, y| apply(op, width, aw, &[x, y])),
    }
}

/// Evaluates `e` under `a`; booleans come back as 0/1.
pub fn eval<V: Valuation + ?Sized>(e: &Expr, a: &V) -> Result<u64, AstError> {
    CompiledExpr::new(std::slice::from_ref(e)).eval(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::AstContext;

    #[test]
    fn constants_and_kill() {
        let mut c = AstContext::new();
        let k = c.bv(8, 0x2A);
        assert_eq!(eval(&k, &Assignment::new()).unwrap(), 0x2A);
        let v = c.var(0);
        let x = c.mk(Op::Xor, &[v.clone(), v.clone()]).unwrap();
        let a: Assignment = [(0, 0x5C)].into_iter().collect();
        assert_eq!(eval(&x, &a).unwrap(), 0);
    }

    #[test]
    fn missing_variable_is_an_error() {
        let mut c = AstContext::new();
        let v = c.var(4);
        let one = c.bv(8, 1);
        let e = c.mk(Op::Add, &[v, one]).unwrap();
        assert_eq!(eval(&e, &Assignment::new()), Err(AstError::MissingVariable(4)));
        assert_eq!(eval(&e, &vec![0u8; 5]).unwrap(), 1);
    }

    #[test]
    fn signed_and_shift_semantics() {
        assert_eq!(apply(Op::Slt, 1, &[8, 8], &[0xFF, 0x01]), 1);
        assert_eq!(apply(Op::Ult, 1, &[8, 8], &[0xFF, 0x01]), 0);
        assert_eq!(apply(Op::AShr, 8, &[8, 8], &[0x80, 3]), 0xF0);
        assert_eq!(apply(Op::AShr, 8, &[8, 8], &[0x80, 200]), 0xFF);
        assert_eq!(apply(Op::Shl, 8, &[8, 8], &[0x81, 8]), 0);
        assert_eq!(apply(Op::LShr, 64, &[64, 64], &[u64::MAX, 64]), 0);
        assert_eq!(apply(Op::SignExtend(8), 16, &[8], &[0x80]), 0xFF80);
        assert_eq!(apply(Op::Concat, 24, &[8, 16], &[0xAB, 0x1234]), 0xAB1234);
        assert_eq!(apply(Op::Extract { high: 11, low: 4 }, 8, &[16], &[0xABCD]), 0xBC);
    }

    #[test]
    fn batch_matches_single() {
        let mut c = AstContext::new();
        let (x, y) = (c.var(0), c.var(1));
        let s = c.mk(Op::Sub, &[x.clone(), y.clone()]).unwrap();
        let lt = c.mk(Op::Slt, &[x, y]).unwrap();
        let compiled = CompiledExpr::new(&[s, lt]);
        let byte = |v: u32, l: usize| (l as u8).wrapping_mul(37).wrapping_add(v as u8 * 101);
        let cols = compiled.eval_batch(300, byte);
        for l in 0..300 {
            let a = vec![byte(0, l), byte(1, l)];
            assert_eq!(compiled.eval_all(&a).unwrap(), vec![cols[0][l], cols[1][l]]);
        }
    }

    #[test]
    fn batch_matches_single_on_random_exprs() {
        use crate::ast::random::RandomExprs;
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        let gen = RandomExprs { max_depth: 5, vars: 3 };
        let byte = |v: u32, l: usize| ((l as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> (8 * v + 7)) as u8;
        for seed in 0..300 {
            let mut c = AstContext::new();
            let e = gen.any(&mut c, &mut ChaCha8Rng::seed_from_u64(seed));
            let compiled = CompiledExpr::new(std::slice::from_ref(&e));
            let col = compiled.eval_batch(1500, byte).remove(0);
            for (l, &v) in col.iter().enumerate().step_by(7) {
                let a: Vec<u8> = (0..3).map(|i| byte(i, l)).collect();
                assert_eq!(compiled.eval(&a).unwrap(), v, "seed {seed} lane {l}: {e:?}");
            }
        }
    }

    #[test]
    fn shared_dag_evaluates_once_per_node() {
        let mut c = AstContext::new();
        let mut e = c.var(0);
        for _ in 0..200 {
            e = c.mk(Op::Add, &[e.clone(), e.clone()]).unwrap();
        }
        let compiled = CompiledExpr::new(std::slice::from_ref(&e));
        assert_eq!(compiled.steps.len(), 201);
        assert_eq!(compiled.eval(&vec![1u8]).unwrap(), 0);
    }
}
