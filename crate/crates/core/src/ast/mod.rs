//! Bitvector and boolean expressions.
//!
//! Every node is built through [`AstContext::mk`], which type-checks the node,
//! folds constants, applies the local rewrite rules listed below and finally
//! hash-conses the result, so structurally equal nodes built in one context are
//! the same allocation.
//!
//! Rewrites (children are already simplified when a node is built):
//!
//! * `A & A -> A`, `A | A -> A`
//! * `A ^ A -> 0`, `A - A -> 0`, `0 * A -> 0`, `0 & A -> 0`, `0 << A -> 0`,
//!   `0 >> A -> 0`
//! * `extract(h, l, extract(hi, lo, A)) -> extract(h + lo, l + lo, A)`
//! * `extract` of a `concat` that falls inside one limb selects from that limb
//! * `concat` of adjacent descending extracts of one base merges into one
//!   extract
//! * `extract(h, l, zero_extend(n, A)) -> extract(h, l, A)` when `h < |A|`
//! * `extract(|A| - 1, 0, A) -> A`

mod eval;
pub mod random;
mod smtlib;
mod varset;

use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use rustc_hash::{FxHashMap, FxHashSet, FxHasher};
use smallvec::SmallVec;
use thiserror::Error;

pub use eval::{apply, eval, mask, sign_extend, Assignment, CompiledExpr, Valuation};
pub use smtlib::{to_smtlib, to_smtlib_script};
pub use varset::VarSet;

/// Widest bitvector the engine models.
pub const MAX_WIDTH: u32 = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AstError {
    #[error("ill-typed {op:?}: {detail}")]
    Sort { op: Op, detail: String },
    #[error("variable b{0} is not assigned")]
    MissingVariable(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sort {
    Bool,
    Bv(u32),
}

impl Sort {
    pub fn width(self) -> u32 {
        match self {
            Sort::Bool => 1,
            Sort::Bv(w) => w,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Const { width: u32, value: u64 },
    Bool(bool),
    /// One input byte, numbered by its offset in the input file.
    Var(u32),
    Concat,
    Extract { high: u32, low: u32 },
    ZeroExtend(u32),
    SignExtend(u32),
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Not,
    Neg,
    Shl,
    LShr,
    AShr,
    Eq,
    Ne,
    Ult,
    Ule,
    Slt,
    Sle,
    Ite,
    BoolAnd,
    BoolOr,
    BoolNot,
}

impl Op {
    pub fn is_leaf(self) -> bool {
        matches!(self, Op::Const { .. } | Op::Bool(_) | Op::Var(_))
    }
}

pub struct Node {
    op: Op,
    sort: Sort,
    children: SmallVec<[Expr; 3]>,
    vars: VarSet,
    id: u32,
    fingerprint: u64,
}

/// Shared handle to an interned node.
///
/// Equality and hashing are by identity, which coincides with structural
/// equality for nodes from the same [`AstContext`]. Use
/// [`Expr::structurally_eq`] to compare nodes from different contexts.
#[derive(Clone)]
pub struct Expr(Arc<Node>);

impl Expr {
    pub fn op(&self) -> Op {
        self.0.op
    }

    pub fn sort(&self) -> Sort {
        self.0.sort
    }

    pub fn width(&self) -> u32 {
        self.0.sort.width()
    }

    pub fn is_bool(&self) -> bool {
        self.0.sort == Sort::Bool
    }

    pub fn children(&self) -> &[Expr] {
        &self.0.children
    }

    /// Input bytes this expression depends on. O(1).
    pub fn used_variables(&self) -> &VarSet {
        &self.0.vars
    }

    pub fn is_symbolic(&self) -> bool {
        !self.0.vars.is_empty()
    }

    /// Context-local identifier.
    pub fn id(&self) -> u32 {
        self.0.id
    }

    /// Context-independent structural hash.
    pub fn fingerprint(&self) -> u64 {
        self.0.fingerprint
    }

    /// Value of a bitvector or boolean constant.
    pub fn as_const(&self) -> Option<u64> {
        match self.0.op {
            Op::Const { value, .. } => Some(value),
            Op::Bool(b) => Some(b as u64),
            _ => None,
        }
    }

    pub fn is_const(&self) -> bool {
        self.as_const().is_some()
    }

    fn is_zero(&self) -> bool {
        matches!(self.0.op, Op::Const { value: 0, .. })
    }

    pub fn ptr_eq(&self, other: &Expr) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    /// Structural equality that works across contexts.
    pub fn structurally_eq(&self, other: &Expr) -> bool {
        let mut seen = FxHashSet::default();
        structurally_eq(self, other, &mut seen)
    }

    /// Number of distinct nodes reachable from this one.
    pub fn dag_size(&self) -> usize {
        let mut seen = FxHashSet::default();
        let mut stack = vec![self.clone()];
        while let Some(e) = stack.pop() {
            if seen.insert(e.id()) {
                stack.extend(e.children().iter().cloned());
            }
        }
        seen.len()
    }
}

fn structurally_eq(a: &Expr, b: &Expr, seen: &mut FxHashSet<(u32, u32)>) -> bool {
    if a.ptr_eq(b) {
        return true;
    }
    if a.fingerprint() != b.fingerprint() || a.op() != b.op() || a.sort() != b.sort() {
        return false;
    }
    if a.children().len() != b.children().len() {
        return false;
    }
    if !seen.insert((a.id(), b.id())) {
        return true;
    }
    a.children()
        .iter()
        .zip(b.children())
        .all(|(x, y)| structurally_eq(x, y, seen))
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

impl Eq for Expr {}

impl Hash for Expr {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.id.hash(state);
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

type Key = (Op, SmallVec<[u32; 3]>);

/// Hash-consing table and node factory.
#[derive(Default)]
pub struct AstContext {
    table: FxHashMap<Key, Expr>,
    next_id: u32,
    no_rewrites: bool,
}

impl AstContext {
    pub fn new() -> Self {
        Self::default()
    }

    /// Turns the rewrite rules on or off. Constant folding and hash-consing
    /// stay on either way.
    pub fn set_simplify(&mut self, on: bool) {
        self.no_rewrites = !on;
    }

    /// Number of distinct nodes interned so far.
    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn bv(&mut self, width: u32, value: u64) -> Expr {
        assert!((1..=MAX_WIDTH).contains(&width), "bad constant width {width}");
        self.leaf(
            Op::Const {
                width,
                value: value & mask(width),
            },
            Sort::Bv(width),
        )
    }

    pub fn bool(&mut self, value: bool) -> Expr {
        self.leaf(Op::Bool(value), Sort::Bool)
    }

    pub fn var(&mut self, index: u32) -> Expr {
        self.leaf(Op::Var(index), Sort::Bv(8))
    }

    /// Builds (and simplifies) a node.
    pub fn mk(&mut self, op: Op, children: &[Expr]) -> Result<Expr, AstError> {
        let sort = infer_sort(op, children)?;
        match op {
            Op::Const { width, value } => return Ok(self.bv(width, value)),
            Op::Bool(b) => return Ok(self.bool(b)),
            Op::Var(i) => return Ok(self.var(i)),
            _ => {}
        }
        if children.iter().all(Expr::is_const) {
            let widths: SmallVec<[u32; 4]> = children.iter().map(Expr::width).collect();
            let vals: SmallVec<[u64; 4]> = children.iter().map(|c| c.as_const().unwrap()).collect();
            let v = apply(op, sort.width(), &widths, &vals);
            return Ok(self.constant(sort, v));
        }
        if !self.no_rewrites {
            if let Some(e) = self.rewrite(op, sort, children)? {
                return Ok(e);
            }
        }
        Ok(self.intern(op, sort, children.iter().cloned().collect()))
    }

    pub fn constant(&mut self, sort: Sort, value: u64) -> Expr {
        match sort {
            Sort::Bool => self.bool(value != 0),
            Sort::Bv(w) => self.bv(w, value),
        }
    }

    fn leaf(&mut self, op: Op, sort: Sort) -> Expr {
        self.intern(op, sort, SmallVec::new())
    }

    fn intern(&mut self, op: Op, sort: Sort, children: SmallVec<[Expr; 3]>) -> Expr {
        let key: Key = (op, children.iter().map(Expr::id).collect());
        if let Some(e) = self.table.get(&key) {
            return e.clone();
        }
        let vars = match op {
            Op::Var(i) => VarSet::singleton(i),
            _ => children
                .iter()
                .fold(VarSet::new(), |acc, c| acc.union(c.used_variables())),
        };
        let mut h = FxHasher::default();
        op.hash(&mut h);
        sort.hash(&mut h);
        for c in &children {
            c.fingerprint().hash(&mut h);
        }
        let node = Node {
            op,
            sort,
            children,
            vars,
            id: self.next_id,
            fingerprint: h.finish(),
        };
        self.next_id += 1;
        let e = Expr(Arc::new(node));
        self.table.insert(key, e.clone());
        e
    }

    fn rewrite(&mut self, op: Op, sort: Sort, ch: &[Expr]) -> Result<Option<Expr>, AstError> {
        let zero = |ctx: &mut Self| ctx.constant(sort, 0);
        Ok(match op {
            Op::And if ch[0] == ch[1] => Some(ch[0].clone()),
            Op::And if ch[0].is_zero() || ch[1].is_zero() => Some(zero(self)),
            Op::Or if ch[0] == ch[1] => Some(ch[0].clone()),
            Op::Xor | Op::Sub if ch[0] == ch[1] => Some(zero(self)),
            Op::Mul if ch[0].is_zero() || ch[1].is_zero() => Some(zero(self)),
            Op::Shl | Op::LShr | Op::AShr if ch[0].is_zero() => Some(zero(self)),
            Op::ZeroExtend(0) | Op::SignExtend(0) => Some(ch[0].clone()),
            Op::Extract { high, low } => self.rewrite_extract(high, low, &ch[0])?,
            Op::Concat => Some(self.rewrite_concat(ch)?),
            _ => None,
        })
    }

    fn rewrite_extract(&mut self, high: u32, low: u32, a: &Expr) -> Result<Option<Expr>, AstError> {
        if low == 0 && high + 1 == a.width() {
            return Ok(Some(a.clone()));
        }
        match a.op() {
            Op::Extract { low: lo, .. } => {
                let inner = a.children()[0].clone();
                Ok(Some(self.mk(
                    Op::Extract {
                        high: high + lo,
                        low: low + lo,
                    },
                    &[inner],
                )?))
            }
            Op::Concat => {
                // limbs are most-significant first
                let mut offset = 0;
                for limb in a.children().iter().rev() {
                    let w = limb.width();
                    if low >= offset && high < offset + w {
                        let e = self.mk(
                            Op::Extract {
                                high: high - offset,
                                low: low - offset,
                            },
                            &[limb.clone()],
                        )?;
                        return Ok(Some(e));
                    }
                    offset += w;
                }
                Ok(None)
            }
            Op::ZeroExtend(_) => {
                let inner = a.children()[0].clone();
                if high < inner.width() {
                    Ok(Some(self.mk(Op::Extract { high, low }, &[inner])?))
                } else {
                    Ok(None)
                }
            }
            _ => Ok(None),
        }
    }

    fn rewrite_concat(&mut self, ch: &[Expr]) -> Result<Expr, AstError> {
        let mut limbs: Vec<Expr> = ch.to_vec();
        loop {
            let flat = flatten_concat(&limbs);
            let merged = self.merge_extract_runs(&flat)?;
            let done = merged.len() == flat.len() && merged.iter().all(|e| e.op() != Op::Concat);
            limbs = merged;
            if done {
                break;
            }
        }
        if limbs.len() == 1 {
            return Ok(limbs.pop().unwrap());
        }
        if limbs.iter().all(Expr::is_const) {
            let widths: Vec<u32> = limbs.iter().map(Expr::width).collect();
            let vals: Vec<u64> = limbs.iter().map(|c| c.as_const().unwrap()).collect();
            let w = widths.iter().sum();
            return Ok(self.bv(w, apply(Op::Concat, w, &widths, &vals)));
        }
        Ok(self.intern(Op::Concat, Sort::Bv(limbs.iter().map(Expr::width).sum()), limbs.into()))
    }

    fn merge_extract_runs(&mut self, limbs: &[Expr]) -> Result<Vec<Expr>, AstError> {
        let mut out = Vec::with_capacity(limbs.len());
        let mut i = 0;
        while i < limbs.len() {
            let Op::Extract { high, low } = limbs[i].op() else {
                out.push(limbs[i].clone());
                i += 1;
                continue;
            };
            let base = limbs[i].children()[0].clone();
            let mut run_low = low;
            let mut j = i + 1;
            while j < limbs.len() {
                match limbs[j].op() {
                    Op::Extract { high: h, low: l }
                        if limbs[j].children()[0] == base && h + 1 == run_low =>
                    {
                        run_low = l;
                        j += 1;
                    }
                    _ => break,
                }
            }
            if j - i == 1 {
                out.push(limbs[i].clone());
            } else {
                out.push(self.mk(Op::Extract { high, low: run_low }, &[base])?);
            }
            i = j;
        }
        Ok(out)
    }
}

fn flatten_concat(limbs: &[Expr]) -> Vec<Expr> {
    let mut out = Vec::with_capacity(limbs.len());
    for l in limbs {
        if l.op() == Op::Concat {
            out.extend(l.children().iter().cloned());
        } else {
            out.push(l.clone());
        }
    }
    out
}

fn infer_sort(op: Op, ch: &[Expr]) -> Result<Sort, AstError> {
    let fail = |detail: String| Err(AstError::Sort { op, detail });
    let arity = |n: usize| -> Result<(), AstError> {
        if ch.len() == n {
            Ok(())
        } else {
            Err(AstError::Sort {
                op,
                detail: format!("expected {n} operands, got {}", ch.len()),
            })
        }
    };
    let bv = |e: &Expr| -> Result<u32, AstError> {
        match e.sort() {
            Sort::Bv(w) => Ok(w),
            Sort::Bool => Err(AstError::Sort {
                op,
                detail: "expected a bitvector operand".into(),
            }),
        }
    };
    match op {
        Op::Const { width, .. } => {
            arity(0)?;
            if !(1..=MAX_WIDTH).contains(&width) {
                return fail(format!("width {width} out of range"));
            }
            Ok(Sort::Bv(width))
        }
        Op::Bool(_) => arity(0).map(|_| Sort::Bool),
        Op::Var(_) => arity(0).map(|_| Sort::Bv(8)),
        Op::Concat => {
            if ch.is_empty() {
                return fail("concat needs operands".into());
            }
            let mut w = 0;
            for c in ch {
                w += bv(c)?;
            }
            if w > MAX_WIDTH {
                return fail(format!("result width {w} exceeds {MAX_WIDTH}"));
            }
            Ok(Sort::Bv(w))
        }
        Op::Extract { high, low } => {
            arity(1)?;
            let w = bv(&ch[0])?;
            if low > high || high >= w {
                return fail(format!("extract [{high}:{low}] of a {w}-bit operand"));
            }
            Ok(Sort::Bv(high - low + 1))
        }
        Op::ZeroExtend(n) | Op::SignExtend(n) => {
            arity(1)?;
            let w = bv(&ch[0])? + n;
            if w > MAX_WIDTH {
                return fail(format!("result width {w} exceeds {MAX_WIDTH}"));
            }
            Ok(Sort::Bv(w))
        }
        Op::Add
        | Op::Sub
        | Op::Mul
        | Op::And
        | Op::Or
        | Op::Xor
        | Op::Shl
        | Op::LShr
        | Op::AShr => {
            arity(2)?;
            let (a, b) = (bv(&ch[0])?, bv(&ch[1])?);
            if a != b {
                return fail(format!("operand widths {a} and {b} differ"));
            }
            Ok(Sort::Bv(a))
        }
        Op::Not | Op::Neg => {
            arity(1)?;
            Ok(Sort::Bv(bv(&ch[0])?))
        }
        Op::Eq | Op::Ne => {
            arity(2)?;
            if ch[0].sort() != ch[1].sort() {
                return fail("operand sorts differ".into());
            }
            Ok(Sort::Bool)
        }
        Op::Ult | Op::Ule | Op::Slt | Op::Sle => {
            arity(2)?;
            let (a, b) = (bv(&ch[0])?, bv(&ch[1])?);
            if a != b {
                return fail(format!("operand widths {a} and {b} differ"));
            }
            Ok(Sort::Bool)
        }
        Op::Ite => {
            arity(3)?;
            if !ch[0].is_bool() {
                return fail("condition must be boolean".into());
            }
            if ch[1].sort() != ch[2].sort() {
                return fail("branch sorts differ".into());
            }
            Ok(ch[1].sort())
        }
        Op::BoolAnd | Op::BoolOr => {
            arity(2)?;
            if !ch[0].is_bool() || !ch[1].is_bool() {
                return fail("expected boolean operands".into());
            }
            Ok(Sort::Bool)
        }
        Op::BoolNot => {
            arity(1)?;
            if !ch[0].is_bool() {
                return fail("expected a boolean operand".into());
            }
            Ok(Sort::Bool)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> AstContext {
        AstContext::new()
    }

    #[test]
    fn idempotent_and_or() {
        let mut c = ctx();
        let a = c.var(0);
        assert_eq!(c.mk(Op::And, &[a.clone(), a.clone()]).unwrap(), a);
        assert_eq!(c.mk(Op::Or, &[a.clone(), a.clone()]).unwrap(), a);
    }

    #[test]
    fn kill_operations() {
        let mut c = ctx();
        let a = c.var(1);
        let zero = c.bv(8, 0);
        for op in [Op::Xor, Op::Sub] {
            let e = c.mk(op, &[a.clone(), a.clone()]).unwrap();
            assert_eq!(e.as_const(), Some(0));
            assert!(!e.is_symbolic());
        }
        for (op, l, r) in [
            (Op::Mul, &zero, &a),
            (Op::Mul, &a, &zero),
            (Op::And, &zero, &a),
            (Op::Shl, &zero, &a),
            (Op::LShr, &zero, &a),
            (Op::AShr, &zero, &a),
        ] {
            let e = c.mk(op, &[l.clone(), r.clone()]).unwrap();
            assert_eq!(e, zero, "{op:?}");
        }
        // not a kill: shifting A by zero is A-dependent
        let e = c.mk(Op::Shl, &[a.clone(), zero.clone()]).unwrap();
        assert!(e.is_symbolic());
    }

    #[test]
    fn nested_extract() {
        let mut c = ctx();
        let vars: Vec<_> = (0..4).map(|i| c.var(i)).collect();
        let a = c.mk(Op::Concat, &vars).unwrap();
        let inner = c.mk(Op::Extract { high: 27, low: 4 }, &[a.clone()]).unwrap();
        let outer = c.mk(Op::Extract { high: 9, low: 2 }, &[inner]).unwrap();
        // 9+4 .. 2+4 crosses the limb at bit 8, so it stays an extract of A
        let direct = c.mk(Op::Extract { high: 13, low: 6 }, &[a]).unwrap();
        assert_eq!(outer, direct);
        assert_eq!(outer.op(), Op::Extract { high: 13, low: 6 });
    }

    #[test]
    fn extract_of_concat_selects_limb() {
        let mut c = ctx();
        let bvs: Vec<_> = (1..=4).map(|i| c.var(i)).collect();
        let cat = c.mk(Op::Concat, &bvs).unwrap();
        let e = c.mk(Op::Extract { high: 11, low: 9 }, &[cat]).unwrap();
        assert_eq!(e.op(), Op::Extract { high: 3, low: 1 });
        assert_eq!(e.children()[0], bvs[2]);
    }

    #[test]
    fn extract_of_constant_concat_folds() {
        let mut c = ctx();
        let bvs: Vec<_> = (1..=4).map(|i| c.bv(8, i)).collect();
        let cat = c.mk(Op::Concat, &bvs).unwrap();
        let e = c.mk(Op::Extract { high: 11, low: 9 }, &[cat]).unwrap();
        assert_eq!(e.as_const(), Some((3 >> 1) & 0b111));
        assert_eq!(e.width(), 3);
    }

    #[test]
    fn cross_limb_extract_is_kept() {
        let mut c = ctx();
        let bvs: Vec<_> = (0..2).map(|i| c.var(i)).collect();
        let cat = c.mk(Op::Concat, &bvs).unwrap();
        let e = c.mk(Op::Extract { high: 11, low: 4 }, &[cat.clone()]).unwrap();
        assert_eq!(e.children()[0], cat);
    }

    #[test]
    fn concat_of_extracts_collapses() {
        let mut c = ctx();
        let bytes: Vec<_> = (0..8).map(|i| c.var(i)).collect();
        let a = c.mk(Op::Concat, &bytes).unwrap();
        // extracts of `a` itself would land inside byte limbs, so use an opaque 64-bit base
        let wide = c.mk(Op::Add, &[a.clone(), a.clone()]).unwrap();
        let parts: Vec<_> = [(31, 24), (23, 16), (15, 8), (7, 0)]
            .into_iter()
            .map(|(h, l)| c.mk(Op::Extract { high: h, low: l }, &[wide.clone()]).unwrap())
            .collect();
        let e = c.mk(Op::Concat, &parts).unwrap();
        assert_eq!(e.op(), Op::Extract { high: 31, low: 0 });
        assert_eq!(e.children()[0], wide);
    }

    #[test]
    fn partial_extract_runs_merge() {
        let mut c = ctx();
        let bytes: Vec<_> = (0..4).map(|i| c.var(i)).collect();
        let a = c.mk(Op::Concat, &bytes).unwrap();
        let a = c.mk(Op::Not, &[a]).unwrap();
        let x = c.var(9);
        let hi = c.mk(Op::Extract { high: 31, low: 16 }, &[a.clone()]).unwrap();
        let mid = c.mk(Op::Extract { high: 15, low: 8 }, &[a.clone()]).unwrap();
        let e = c.mk(Op::Concat, &[hi, mid, x.clone()]).unwrap();
        assert_eq!(e.children().len(), 2);
        assert_eq!(e.children()[0].op(), Op::Extract { high: 31, low: 8 });
        assert_eq!(e.children()[1], x);
    }

    #[test]
    fn extract_of_zero_extend() {
        let mut c = ctx();
        let bytes: Vec<_> = (0..4).map(|i| c.var(i)).collect();
        let x = c.mk(Op::Concat, &bytes).unwrap();
        let z = c.mk(Op::ZeroExtend(32), &[x.clone()]).unwrap();
        let e = c.mk(Op::Extract { high: 31, low: 0 }, &[z.clone()]).unwrap();
        assert_eq!(e, x);
        let e = c.mk(Op::Extract { high: 15, low: 8 }, &[z]).unwrap();
        assert_eq!(e, bytes[2]);
    }

    #[test]
    fn hash_consing_shares_nodes() {
        let mut c = ctx();
        let a = c.var(0);
        let b = c.var(1);
        let s1 = c.mk(Op::Add, &[a.clone(), b.clone()]).unwrap();
        let s2 = c.mk(Op::Add, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(s1, s2);
        let before = c.len();
        let mut e = s1.clone();
        for _ in 0..100 {
            e = c.mk(Op::Mul, &[e.clone(), e.clone()]).unwrap();
        }
        // 100 squarings of a shared term add 100 nodes, not 2^100
        assert_eq!(c.len(), before + 100);
        assert_eq!(e.dag_size(), 103);
    }

    #[test]
    fn symbolic_flag_tracks_variables() {
        let mut c = ctx();
        let a = c.var(3);
        let b = c.var(7);
        let s = c.mk(Op::Add, &[a, b]).unwrap();
        assert_eq!(s.used_variables().iter().collect::<Vec<_>>(), vec![3, 7]);
        assert!(s.is_symbolic());
        let k = c.bv(8, 9);
        assert!(k.used_variables().is_empty());
        assert!(!k.is_symbolic());
    }

    #[test]
    fn typing_errors() {
        let mut c = ctx();
        let a = c.var(0);
        let w = c.bv(16, 1);
        assert!(c.mk(Op::Add, &[a.clone(), w.clone()]).is_err());
        assert!(c.mk(Op::Extract { high: 8, low: 0 }, &[a.clone()]).is_err());
        assert!(c.mk(Op::Extract { high: 2, low: 3 }, &[a.clone()]).is_err());
        assert!(c.mk(Op::ZeroExtend(60), &[a.clone()]).is_err());
        let t = c.bool(true);
        assert!(c.mk(Op::BoolAnd, &[t.clone(), a.clone()]).is_err());
        assert!(c.mk(Op::Ite, &[a.clone(), a.clone(), a.clone()]).is_err());
        assert!(c.mk(Op::Not, &[]).is_err());
    }

    #[test]
    fn structural_equality_across_contexts() {
        let build = |c: &mut AstContext| {
            let a = c.var(0);
            let b = c.var(1);
            let s = c.mk(Op::Add, &[a, b]).unwrap();
            let k = c.bv(8, 3);
            c.mk(Op::Ult, &[s, k]).unwrap()
        };
        let (mut c1, mut c2) = (ctx(), ctx());
        let _pad = c2.var(42);
        let e1 = build(&mut c1);
        let e2 = build(&mut c2);
        assert_ne!(e1.id(), e2.id());
        assert!(e1.structurally_eq(&e2));
        let e3 = {
            let a = c2.var(0);
            let k = c2.bv(8, 3);
            c2.mk(Op::Ult, &[a, k]).unwrap()
        };
        assert!(!e1.structurally_eq(&e3));
    }

    #[test]
    fn rewrites_preserve_semantics() {
        use super::random::RandomExprs;
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        let gen = RandomExprs { max_depth: 5, vars: 2 };
        for seed in 0..400 {
            let mut raw_ctx = AstContext::new();
            raw_ctx.set_simplify(false);
            let mut c = ctx();
            let raw = gen.any(&mut raw_ctx, &mut ChaCha8Rng::seed_from_u64(seed));
            let simp = gen.any(&mut c, &mut ChaCha8Rng::seed_from_u64(seed));
            let byte = |v: u32, l: usize| (l >> (8 * v)) as u8;
            let a = CompiledExpr::new(&[raw.clone()]).eval_batch(1 << 16, byte);
            let b = CompiledExpr::new(&[simp.clone()]).eval_batch(1 << 16, byte);
            assert!(a == b, "seed {seed}: {raw:?} vs {simp:?}");
        }
    }
}
