use std::fmt::{self, Write as _};

use rustc_hash::FxHashMap;

use super::{Expr, Op, VarSet};

fn head(op: Op) -> String {
    match op {
        Op::Concat => "concat".into(),
        Op::Extract { high, low } => format!("(_ extract {high} {low})"),
        Op::ZeroExtend(n) => format!("(_ zero_extend {n})"),
        Op::SignExtend(n) => format!("(_ sign_extend {n})"),
        Op::Add => "bvadd".into(),
        Op::Sub => "bvsub".into(),
        Op::Mul => "bvmul".into(),
        Op::And => "bvand".into(),
        Op::Or => "bvor".into(),
        Op::Xor => "bvxor".into(),
        Op::Not => "bvnot".into(),
        Op::Neg => "bvneg".into(),
        Op::Shl => "bvshl".into(),
        Op::LShr => "bvlshr".into(),
        Op::AShr => "bvashr".into(),
        Op::Eq => "=".into(),
        Op::Ne => "distinct".into(),
        Op::Ult => "bvult".into(),
        Op::Ule => "bvule".into(),
        Op::Slt => "bvslt".into(),
        Op::Sle => "bvsle".into(),
        Op::Ite => "ite".into(),
        Op::BoolAnd => "and".into(),
        Op::BoolOr => "or".into(),
        Op::BoolNot => "not".into(),
        Op::Const { .. } | Op::Bool(_) | Op::Var(_) => unreachable!(),
    }
}

fn atom(op: Op) -> Option<String> {
    Some(match op {
        Op::Const { width, value } if width % 4 == 0 => {
            format!("#x{:0w$x}", value, w = (width / 4) as usize)
        }
        Op::Const { width, value } => format!("#b{:0w$b}", value, w = width as usize),
        Op::Bool(b) => b.to_string(),
        Op::Var(i) => format!("b{i}"),
        _ => return None,
    })
}

fn write_term(out: &mut String, e: &Expr, names: &FxHashMap<u32, String>, top: bool) {
    if let Some(a) = atom(e.op()) {
        out.push_str(&a);
        return;
    }
    if !top {
        if let Some(n) = names.get(&e.id()) {
            out.push_str(n);
            return;
        }
    }
    out.push('(');
    out.push_str(&head(e.op()));
    for c in e.children() {
        out.push(' ');
        write_term(out, c, names, false);
    }
    out.push(')');
}

/// Prints `e` as an SMT-LIB2 term, binding shared subterms with `let`.
pub fn to_smtlib(e: &Expr) -> String {
    // reference counts within this DAG
    let mut refs: FxHashMap<u32, u32> = FxHashMap::default();
    let mut order: Vec<Expr> = Vec::new();
    let mut stack = vec![(e.clone(), false)];
    let mut visited: FxHashMap<u32, ()> = FxHashMap::default();
    while let Some((n, expanded)) = stack.pop() {
        if expanded {
            order.push(n);
            continue;
        }
        if visited.insert(n.id(), ()).is_some() {
            continue;
        }
        stack.push((n.clone(), true));
        for c in n.children() {
            *refs.entry(c.id()).or_default() += 1;
            if !visited.contains_key(&c.id()) {
                stack.push((c.clone(), false));
            }
        }
    }
    let shared: Vec<&Expr> = order
        .iter()
        .filter(|n| !n.op().is_leaf() && refs.get(&n.id()).copied().unwrap_or(0) > 1)
        .collect();
    let mut names = FxHashMap::default();
    let mut out = String::new();
    for (k, n) in shared.iter().enumerate() {
        out.push_str("(let ((");
        let name = format!("?x{k}");
        out.push_str(&name);
        out.push(' ');
        write_term(&mut out, n, &names, true);
        out.push_str(")) ");
        names.insert(n.id(), name);
    }
    write_term(&mut out, e, &names, true);
    for _ in 0..shared.len() {
        out.push(')');
    }
    out
}

/// A complete script: one `declare-const` per input byte used, then one
/// `assert` per expression in the given order, then `(check-sat)`.
pub fn to_smtlib_script(asserts: &[Expr]) -> String {
    let vars = asserts
        .iter()
        .fold(VarSet::new(), |acc, e| acc.union(e.used_variables()));
    let mut out = String::new();
    out.push_str("(set-logic QF_BV)\n");
    for v in vars.iter() {
        let _ = writeln!(out, "(declare-const b{v} (_ BitVec 8))");
    }
    for a in asserts {
        let _ = writeln!(out, "(assert {})", to_smtlib(a));
    }
    out.push_str("(check-sat)\n");
    out
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        write_term(&mut s, self, &FxHashMap::default(), true);
        f.write_str(&s)
    }
}
