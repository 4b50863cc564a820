//! Tseitin bit-blasting of boolean expressions into CNF.

use std::collections::BTreeMap;

use rustc_hash::FxHashMap;

use super::cdcl::Lit;
use super::SolverError;
use crate::ast::{Expr, Op};

#[derive(Clone, Debug, Default)]
pub struct Cnf {
    pub num_vars: u32,
    pub clauses: Vec<Vec<Lit>>,
    /// (input byte, bit) -> propositional variable.
    pub bit_map: BTreeMap<(u32, u8), u32>,
}

impl Cnf {
    pub fn to_dimacs(&self) -> String {
        let mut s = format!("p cnf {} {}\n", self.num_vars, self.clauses.len());
        for ((byte, bit), v) in &self.bit_map {
            s.push_str(&format!("c input {byte} bit {bit} var {}\n", v + 1));
        }
        for c in &self.clauses {
            for l in c {
                s.push_str(&l.to_dimacs().to_string());
                s.push(' ');
            }
            s.push_str("0\n");
        }
        s
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Gate {
    And(Lit, Lit),
    Xor(Lit, Lit),
    Mux(Lit, Lit, Lit),
}

struct Blaster {
    cnf: Cnf,
    t: Lit,
    gates: FxHashMap<Gate, Lit>,
    done: FxHashMap<u32, Vec<Lit>>,
}

impl Blaster {
    fn new() -> Self {
        let mut b = Blaster {
            cnf: Cnf::default(),
            t: Lit(0),
            gates: FxHashMap::default(),
            done: FxHashMap::default(),
        };
        b.t = Lit::new(b.fresh(), false);
        b.cnf.clauses.push(vec![b.t]);
        b
    }

    fn fresh(&mut self) -> u32 {
        self.cnf.num_vars += 1;
        self.cnf.num_vars - 1
    }

    fn f(&self) -> Lit {
        !self.t
    }

    fn konst(&self, v: bool) -> Lit {
        if v {
            self.t
        } else {
            self.f()
        }
    }

    fn clause(&mut self, c: &[Lit]) {
        self.cnf.clauses.push(c.to_vec());
    }

    fn and(&mut self, a: Lit, b: Lit) -> Lit {
        let (t, f) = (self.t, self.f());
        if a == f || b == f || a == !b {
            return f;
        }
        if a == t || a == b {
            return b;
        }
        if b == t {
            return a;
        }
        let key = Gate::And(a.min(b), a.max(b));
        if let Some(&g) = self.gates.get(&key) {
            return g;
        }
        let g = Lit::new(self.fresh(), false);
        self.clause(&[!g, a]);
        self.clause(&[!g, b]);
        self.clause(&[g, !a, !b]);
        self.gates.insert(key, g);
        g
    }

    fn or(&mut self, a: Lit, b: Lit) -> Lit {
        !self.and(!a, !b)
    }

    fn xor(&mut self, a: Lit, b: Lit) -> Lit {
        let (t, f) = (self.t, self.f());
        if a == f {
            return b;
        }
        if b == f {
            return a;
        }
        if a == t {
            return !b;
        }
        if b == t {
            return !a;
        }
        if a == b {
            return f;
        }
        if a == !b {
            return t;
        }
        // normalize polarity so a ^ b and !a ^ !b share a gate
        let neg = a.is_neg() ^ b.is_neg();
        let (x, y) = (Lit::new(a.var(), false), Lit::new(b.var(), false));
        let key = Gate::Xor(x.min(y), x.max(y));
        let g = match self.gates.get(&key) {
            Some(&g) => g,
            None => {
                let g = Lit::new(self.fresh(), false);
                self.clause(&[!g, x, y]);
                self.clause(&[!g, !x, !y]);
                self.clause(&[g, !x, y]);
                self.clause(&[g, x, !y]);
                self.gates.insert(key, g);
                g
            }
        };
        if neg {
            !g
        } else {
            g
        }
    }

    fn mux(&mut self, s: Lit, a: Lit, b: Lit) -> Lit {
        if s == self.t || a == b {
            return a;
        }
        if s == self.f() {
            return b;
        }
        if a == self.t && b == self.f() {
            return s;
        }
        if a == self.f() && b == self.t {
            return !s;
        }
        let key = Gate::Mux(s, a, b);
        if let Some(&g) = self.gates.get(&key) {
            return g;
        }
        let g = Lit::new(self.fresh(), false);
        self.clause(&[!s, !a, g]);
        self.clause(&[!s, a, !g]);
        self.clause(&[s, !b, g]);
        self.clause(&[s, b, !g]);
        self.clause(&[!a, !b, g]);
        self.clause(&[a, b, !g]);
        self.gates.insert(key, g);
        g
    }

    fn and_all(&mut self, xs: &[Lit]) -> Lit {
        xs.iter().fold(self.t, |acc, &x| self.and(acc, x))
    }

    fn add(&mut self, a: &[Lit], b: &[Lit], mut carry: Lit) -> Vec<Lit> {
        let mut out = Vec::with_capacity(a.len());
        for i in 0..a.len() {
            let x = self.xor(a[i], b[i]);
            out.push(self.xor(x, carry));
            let c1 = self.and(a[i], b[i]);
            let c2 = self.and(x, carry);
            carry = self.or(c1, c2);
        }
        out
    }

    fn sub(&mut self, a: &[Lit], b: &[Lit]) -> Vec<Lit> {
        let nb: Vec<Lit> = b.iter().map(|&l| !l).collect();
        self.add(a, &nb, self.t)
    }

    fn mul(&mut self, a: &[Lit], b: &[Lit]) -> Vec<Lit> {
        let w = a.len();
        let mut acc = vec![self.f(); w];
        for i in 0..w {
            if b[i] == self.f() {
                continue;
            }
            let mut row = vec![self.f(); w];
            for j in 0..w - i {
                row[i + j] = self.and(a[j], b[i]);
            }
            // low bits of the row are zero, only the upper part needs adding
            let hi = self.add(&acc[i..], &row[i..], self.f());
            acc[i..].copy_from_slice(&hi);
        }
        acc
    }

    fn eq(&mut self, a: &[Lit], b: &[Lit]) -> Lit {
        let xs: Vec<Lit> = a.iter().zip(b).map(|(&x, &y)| !self.xor(x, y)).collect();
        self.and_all(&xs)
    }

    /// a < b, unsigned.
    fn ult(&mut self, a: &[Lit], b: &[Lit]) -> Lit {
        let mut lt = self.f();
        for i in 0..a.len() {
            let here = self.and(!a[i], b[i]);
            let same = !self.xor(a[i], b[i]);
            let keep = self.and(same, lt);
            lt = self.or(here, keep);
        }
        lt
    }

    fn flip_msb(v: &[Lit]) -> Vec<Lit> {
        let mut out = v.to_vec();
        let last = out.len() - 1;
        out[last] = !out[last];
        out
    }

    fn konst_bits(&self, w: u32, v: u64) -> Vec<Lit> {
        (0..w).map(|i| self.konst(i < 64 && v >> i & 1 == 1)).collect()
    }

    fn shift(&mut self, op: Op, a: &[Lit], s: &[Lit]) -> Vec<Lit> {
        let w = a.len();
        let fill = if op == Op::AShr { a[w - 1] } else { self.f() };
        let mut cur = a.to_vec();
        let mut k = 0;
        while k < s.len() && (1usize << k) < w {
            let d = 1usize << k;
            let next: Vec<Lit> = (0..w)
                .map(|i| {
                    let moved = match op {
                        Op::Shl => {
                            if i >= d {
                                cur[i - d]
                            } else {
                                fill
                            }
                        }
                        _ => {
                            if i + d < w {
                                cur[i + d]
                            } else {
                                fill
                            }
                        }
                    };
                    (i, moved)
                })
                .collect::<Vec<_>>()
                .into_iter()
                .map(|(i, moved)| self.mux(s[k], moved, cur[i]))
                .collect();
            cur = next;
            k += 1;
        }
        // amounts of at least the width shift everything out
        let wbits = self.konst_bits(s.len() as u32, w as u64);
        let small = self.ult(s, &wbits);
        cur.iter().map(|&l| self.mux(small, l, fill)).collect()
    }

    fn node(&mut self, e: &Expr, ch: &[Vec<Lit>]) -> Result<Vec<Lit>, SolverError> {
        let w = e.width();
        Ok(match e.op() {
            Op::Const { value, .. } => self.konst_bits(w, value),
            Op::Bool(v) => vec![self.konst(v)],
            Op::Var(i) => (0..8u8)
                .map(|bit| {
                    let v = match self.cnf.bit_map.get(&(i, bit)) {
                        Some(&v) => v,
                        None => {
                            let v = self.fresh();
                            self.cnf.bit_map.insert((i, bit), v);
                            v
                        }
                    };
                    Lit::new(v, false)
                })
                .collect(),
            Op::Concat => ch.iter().rev().flatten().copied().collect(),
            Op::Extract { high, low } => ch[0][low as usize..=high as usize].to_vec(),
            Op::ZeroExtend(n) => {
                let mut v = ch[0].clone();
                v.extend(std::iter::repeat_n(self.f(), n as usize));
                v
            }
            Op::SignExtend(n) => {
                let mut v = ch[0].clone();
                let m = *v.last().unwrap();
                v.extend(std::iter::repeat_n(m, n as usize));
                v
            }
            Op::Add => self.add(&ch[0], &ch[1], self.f()),
            Op::Sub => self.sub(&ch[0], &ch[1]),
            Op::Neg => {
                let zero = vec![self.f(); ch[0].len()];
                self.sub(&zero, &ch[0])
            }
            Op::Mul => self.mul(&ch[0], &ch[1]),
            Op::And => (0..ch[0].len()).map(|i| self.and(ch[0][i], ch[1][i])).collect(),
            Op::Or => (0..ch[0].len()).map(|i| self.or(ch[0][i], ch[1][i])).collect(),
            Op::Xor => (0..ch[0].len()).map(|i| self.xor(ch[0][i], ch[1][i])).collect(),
            Op::Not => ch[0].iter().map(|&l| !l).collect(),
            Op::Shl | Op::LShr | Op::AShr => self.shift(e.op(), &ch[0], &ch[1]),
            Op::Eq => vec![self.eq(&ch[0], &ch[1])],
            Op::Ne => vec![!self.eq(&ch[0], &ch[1])],
            Op::Ult => vec![self.ult(&ch[0], &ch[1])],
            Op::Ule => vec![!self.ult(&ch[1], &ch[0])],
            Op::Slt => {
                let (a, b) = (Self::flip_msb(&ch[0]), Self::flip_msb(&ch[1]));
                vec![self.ult(&a, &b)]
            }
            Op::Sle => {
                let (a, b) = (Self::flip_msb(&ch[0]), Self::flip_msb(&ch[1]));
                vec![!self.ult(&b, &a)]
            }
            Op::Ite => (0..ch[1].len()).map(|i| self.mux(ch[0][0], ch[1][i], ch[2][i])).collect(),
            Op::BoolAnd => vec![self.and(ch[0][0], ch[1][0])],
            Op::BoolOr => vec![self.or(ch[0][0], ch[1][0])],
            Op::BoolNot => vec![!ch[0][0]],
        })
    }

    /// Post-order encoding without recursion; deep predicates are common.
    fn encode(&mut self, root: &Expr) -> Result<Vec<Lit>, SolverError> {
        let mut stack: Vec<(Expr, bool)> = vec![(root.clone(), false)];
        while let Some((e, expanded)) = stack.pop() {
            if self.done.contains_key(&e.id()) {
                continue;
            }
            if expanded {
                let ch: Vec<Vec<Lit>> = e.children().iter().map(|c| self.done[&c.id()].clone()).collect();
                let bits = self.node(&e, &ch)?;
                self.done.insert(e.id(), bits);
            } else {
                stack.push((e.clone(), true));
                for c in e.children() {
                    if !self.done.contains_key(&c.id()) {
                        stack.push((c.clone(), false));
                    }
                }
            }
        }
        Ok(self.done[&root.id()].clone())
    }
}

/// Encodes the conjunction of boolean `constraints`.
pub fn bitblast(constraints: &[Expr]) -> Result<Cnf, SolverError> {
    let mut b = Blaster::new();
    for c in constraints {
        if !c.is_bool() {
            return Err(SolverError::NotBoolean(c.width()));
        }
        let bits = b.encode(c)?;
        b.clause(&[bits[0]]);
    }
    Ok(b.cnf)
}
