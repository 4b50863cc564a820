//! Symbolic executor: consumes VM events and builds the path predicate.
//!
//! Registers are tracked per thread at full 64-bit granularity, memory per
//! byte and shared by all threads. A location with no entry holds the
//! concrete value reported in the instruction event. Instructions that touch
//! no symbolic location are skipped unless skipping is disabled.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rustc_hash::{FxHashMap, FxHashSet};
use thiserror::Error;

use crate::ast::{AstContext, AstError, Expr, Op};
use crate::events::Event;
use crate::jumptab::{self, JumpTableError, SliceSource, WindowEntry};
use crate::mvm::{
    spawn_concrete, Cond, ExecutedInsn, Flag, Flags, Location, Opcode, OperandValue, Program, Reg, RegView,
    RunConfig, RunOutcome, Width, NUM_REGS,
};

/// Longest block prefix kept for backward slicing.
const WINDOW_LIMIT: usize = 256;

#[derive(Debug, Error)]
pub enum SymexError {
    #[error(transparent)]
    Ast(#[from] AstError),
    #[error(transparent)]
    JumpTable(#[from] JumpTableError),
    #[error("read of input bytes {offset}..{end} past the end of the {len}-byte seed")]
    InputOutOfRange { offset: u64, end: u64, len: usize },
    #[error("malformed event for {addr:#x}: {detail}")]
    Malformed { addr: u64, detail: String },
    #[error("concrete executor failed: {0}")]
    Executor(String),
}

#[derive(Clone, Debug)]
pub struct SymexConfig {
    /// Skip instructions without symbolic operands.
    pub skip: bool,
    pub jumptables: bool,
    /// Keep one register context per guest thread.
    pub context_switch: bool,
    /// AST rewrite rules (constant folding stays on).
    pub simplify: bool,
    pub max_table_size: usize,
    /// Stop extending the predicate after this long.
    pub max_time: Option<Duration>,
}

impl Default for SymexConfig {
    fn default() -> Self {
        SymexConfig {
            skip: true,
            jumptables: true,
            context_switch: true,
            simplify: true,
            max_table_size: jumptab::DEFAULT_MAX_TABLE_SIZE,
            max_time: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintKind {
    Conditional,
    Indirect,
}

#[derive(Clone, Debug)]
pub struct PathConstraint {
    pub site: u64,
    /// Condition of the direction actually taken.
    pub cond: Expr,
    pub kind: ConstraintKind,
    /// Untaken targets of an indirect jump with their conditions.
    pub alt_targets: Vec<(u64, Expr)>,
    /// Target reached by an indirect jump in this execution.
    pub taken_target: Option<u64>,
    /// Position among the branches recorded after the first input read.
    pub trace_pos: usize,
    pub tid: u32,
}

impl PathConstraint {
    /// Structural comparison, usable across AST contexts.
    pub fn same_as(&self, other: &PathConstraint) -> bool {
        self.site == other.site
            && self.kind == other.kind
            && self.trace_pos == other.trace_pos
            && self.tid == other.tid
            && self.taken_target == other.taken_target
            && self.cond.structurally_eq(&other.cond)
            && self.alt_targets.len() == other.alt_targets.len()
            && self
                .alt_targets
                .iter()
                .zip(&other.alt_targets)
                .all(|(a, b)| a.0 == b.0 && a.1.structurally_eq(&b.1))
    }
}

/// True when two predicates are structurally identical.
pub fn predicates_equal(a: &[PathConstraint], b: &[PathConstraint]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_as(y))
}

/// Symbolic registers and flags of one guest thread.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ThreadContext {
    pub regs: [Option<Expr>; NUM_REGS],
    pub flags: [Option<Expr>; 4],
}

impl ThreadContext {
    pub fn is_empty(&self) -> bool {
        self.regs.iter().chain(&self.flags).all(Option::is_none)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SymexStats {
    /// Instruction events seen.
    pub instructions: u64,
    /// Instructions executed symbolically.
    pub symbolic: u64,
    /// Symbolic load/store addresses replaced by their concrete value.
    pub concretized: u64,
    pub indirect_resolved: u64,
    pub context_switches: u64,
}

pub struct Symex<'p> {
    program: &'p Program,
    config: SymexConfig,
    pub ast: AstContext,
    mem: FxHashMap<u64, Expr>,
    current: ThreadContext,
    contexts: FxHashMap<u32, ThreadContext>,
    tid: u32,
    predicate: Vec<PathConstraint>,
    input_image: Vec<u8>,
    bound: FxHashSet<u64>,
    /// Data written back to the input file: offset -> symbolic byte, or None
    /// for a concrete byte.
    file_sym: FxHashMap<u64, Option<Expr>>,
    windows: FxHashMap<u32, Vec<WindowEntry>>,
    branch_pos: usize,
    stats: SymexStats,
    exit_code: Option<i32>,
    started: Instant,
    truncated: bool,
}

/// Everything the inverter needs from predicate construction.
pub struct SymexOutput {
    pub predicate: Vec<PathConstraint>,
    pub ast: AstContext,
    pub stats: SymexStats,
    pub var_count: usize,
    pub exit_code: Option<i32>,
    /// Construction stopped early on the time limit.
    pub truncated: bool,
}

fn malformed(insn: &ExecutedInsn, detail: &str) -> SymexError {
    SymexError::Malformed {
        addr: insn.address,
        detail: detail.to_string(),
    }
}

impl<'p> Symex<'p> {
    pub fn new(program: &'p Program, seed: &[u8], config: SymexConfig) -> Self {
        let mut ast = AstContext::new();
        ast.set_simplify(config.simplify);
        Symex {
            program,
            config,
            ast,
            mem: FxHashMap::default(),
            current: ThreadContext::default(),
            contexts: FxHashMap::default(),
            tid: 0,
            predicate: Vec::new(),
            input_image: seed.to_vec(),
            bound: FxHashSet::default(),
            file_sym: FxHashMap::default(),
            windows: FxHashMap::default(),
            branch_pos: 0,
            stats: SymexStats::default(),
            exit_code: None,
            started: Instant::now(),
            truncated: false,
        }
    }

    pub fn predicate(&self) -> &[PathConstraint] {
        &self.predicate
    }

    pub fn stats(&self) -> SymexStats {
        self.stats
    }

    /// Number of distinct input bytes bound to variables so far.
    pub fn var_count(&self) -> usize {
        self.bound.len()
    }

    pub fn mem_expr(&self, addr: u64) -> Option<&Expr> {
        self.mem.get(&addr)
    }

    pub fn thread_context(&self) -> &ThreadContext {
        &self.current
    }

    pub fn current_tid(&self) -> u32 {
        self.tid
    }

    pub fn handle(&mut self, ev: Event) -> Result<(), SymexError> {
        if self.truncated {
            return Ok(());
        }
        if let Some(limit) = self.config.max_time {
            if self.started.elapsed() > limit {
                log::warn!("predicate construction stopped after {limit:?}");
                self.truncated = true;
                return Ok(());
            }
        }
        match ev {
            Event::ReadSymbolicInput {
                address,
                length,
                offset,
            } => self.on_read_symbolic_input(address, length, offset),
            Event::WriteSymbolicInput {
                address,
                length,
                offset,
            } => {
                for i in 0..length {
                    let e = self.mem.get(&(address + i)).cloned();
                    self.file_sym.insert(offset + i, e);
                }
                Ok(())
            }
            Event::Instruction(insn) => self.on_instruction(insn),
            Event::ThreadSwitch { from, to } => {
                self.context_switch(from, to);
                Ok(())
            }
            Event::Exit { code } => {
                self.exit_code = Some(code);
                Ok(())
            }
        }
    }

    pub fn finish(self) -> SymexOutput {
        SymexOutput {
            var_count: self.bound.len(),
            predicate: self.predicate,
            ast: self.ast,
            stats: self.stats,
            exit_code: self.exit_code,
            truncated: self.truncated,
        }
    }

    /// Binds the bytes just read to input variables numbered by file offset.
    pub fn on_read_symbolic_input(&mut self, address: u64, length: u64, offset: u64) -> Result<(), SymexError> {
        for i in 0..length {
            let off = offset + i;
            let a = address + i;
            if let Some(written) = self.file_sym.get(&off) {
                match written.clone() {
                    Some(e) => self.mem.insert(a, e),
                    None => self.mem.remove(&a),
                };
                continue;
            }
            if off as usize >= self.input_image.len() {
                return Err(SymexError::InputOutOfRange {
                    offset,
                    end: offset + length,
                    len: self.input_image.len(),
                });
            }
            let v = self.ast.var(off as u32);
            self.mem.insert(a, v);
            self.bound.insert(off);
        }
        Ok(())
    }

    /// Saves the running thread's registers and installs those of `to`.
    pub fn context_switch(&mut self, from: u32, to: u32) {
        if self.config.context_switch {
            let next = self.contexts.remove(&to).unwrap_or_default();
            let prev = std::mem::replace(&mut self.current, next);
            self.contexts.insert(from, prev);
            self.stats.context_switches += 1;
        }
        self.tid = to;
    }

    fn reg_is_symbolic(&self, r: Reg) -> bool {
        self.current.regs[r.index()].is_some()
    }

    /// True when any operand location, or any register used to compute an
    /// address, is symbolic.
    pub fn is_symbolic_instruction(&self, insn: &ExecutedInsn) -> bool {
        insn.operands().any(|o| match o.loc {
            Location::Reg(v) => self.reg_is_symbolic(v.reg),
            Location::Flag(f) => self.current.flags[f.index()].is_some(),
            Location::Mem {
                addr, size, base, index, ..
            } => {
                base.is_some_and(|b| self.reg_is_symbolic(b.reg))
                    || index.is_some_and(|i| self.reg_is_symbolic(i.reg))
                    || (0..size as u64).any(|i| self.mem.contains_key(&addr.wrapping_add(i)))
            }
            Location::Imm => false,
        })
    }

    fn is_indirect(insn: &ExecutedInsn) -> bool {
        insn.opcode == Opcode::Jmp && !matches!(insn.explicit.first().map(|o| o.loc), Some(Location::Imm))
    }

    fn on_instruction(&mut self, insn: ExecutedInsn) -> Result<(), SymexError> {
        self.stats.instructions += 1;
        let indirect = Self::is_indirect(&insn);
        let is_branch = matches!(insn.opcode, Opcode::Jcc(_)) || indirect;
        let pos = self.branch_pos;
        if is_branch {
            self.branch_pos += 1;
        }
        let mut load_addr = None;
        if !self.config.skip || self.is_symbolic_instruction(&insn) {
            self.stats.symbolic += 1;
            load_addr = self.exec_symbolic(&insn, pos)?;
        }
        // a table load concretizes its address, so the jump itself may look
        // concrete; resolution runs on every indirect jump
        if indirect && self.config.jumptables {
            self.resolve_indirect(&insn, pos)?;
        }
        let window = self.windows.entry(self.tid).or_default();
        if insn.opcode.is_control_transfer() {
            window.clear();
        } else {
            if window.len() >= WINDOW_LIMIT {
                window.remove(0);
            }
            window.push(WindowEntry { insn, load_addr });
        }
        Ok(())
    }

    fn parent_expr(&mut self, r: Reg, value: u64) -> Expr {
        match &self.current.regs[r.index()] {
            Some(e) => e.clone(),
            None => self.ast.bv(64, value),
        }
    }

    fn reg_expr(&mut self, v: RegView, parent_value: u64) -> Result<Expr, SymexError> {
        let p = self.parent_expr(v.reg, parent_value);
        if v.width == Width::B64 {
            return Ok(p);
        }
        Ok(self.ast.mk(
            Op::Extract {
                high: v.width.bits() - 1,
                low: 0,
            },
            &[p],
        )?)
    }

    fn flag_expr(&mut self, f: Flag, concrete: bool) -> Expr {
        match &self.current.flags[f.index()] {
            Some(e) => e.clone(),
            None => self.ast.bool(concrete),
        }
    }

    fn mem_read(&mut self, addr: u64, size: u32, value: u64) -> Result<Expr, SymexError> {
        // most significant byte first
        let mut bytes = Vec::with_capacity(size as usize);
        for i in (0..size as u64).rev() {
            let a = addr.wrapping_add(i);
            let b = match self.mem.get(&a) {
                Some(e) => e.clone(),
                None => self.ast.bv(8, (value >> (8 * i)) & 0xff),
            };
            bytes.push(b);
        }
        if bytes.len() == 1 {
            return Ok(bytes.pop().unwrap());
        }
        Ok(self.ast.mk(Op::Concat, &bytes)?)
    }

    fn mem_write(&mut self, addr: u64, size: u32, v: &Expr) -> Result<(), SymexError> {
        for i in 0..size {
            let a = addr.wrapping_add(i as u64);
            let b = if size == 1 {
                v.clone()
            } else {
                self.ast.mk(
                    Op::Extract {
                        high: 8 * i + 7,
                        low: 8 * i,
                    },
                    &[v.clone()],
                )?
            };
            if b.is_symbolic() {
                self.mem.insert(a, b);
            } else {
                self.mem.remove(&a);
            }
        }
        Ok(())
    }

    fn set_parent(&mut self, r: Reg, e: Expr) {
        self.current.regs[r.index()] = e.is_symbolic().then_some(e);
    }

    fn reg_write(&mut self, v: RegView, parent_value: u64, e: Expr) -> Result<(), SymexError> {
        let full = match v.width {
            Width::B64 => e,
            Width::B32 => self.ast.mk(Op::ZeroExtend(32), &[e])?,
            w => {
                let old = self.parent_expr(v.reg, parent_value);
                let hi = self.ast.mk(
                    Op::Extract {
                        high: 63,
                        low: w.bits(),
                    },
                    &[old],
                )?;
                self.ast.mk(Op::Concat, &[hi, e])?
            }
        };
        self.set_parent(v.reg, full);
        Ok(())
    }

    fn set_flag(&mut self, f: Flag, e: Expr) {
        self.current.flags[f.index()] = e.is_symbolic().then_some(e);
    }

    /// Symbolic effective address, or None when it is concrete.
    fn address_expr(&mut self, loc: &Location) -> Result<Option<Expr>, SymexError> {
        let Location::Mem {
            base, index, scale, disp, ..
        } = *loc
        else {
            return Ok(None);
        };
        let sym = base.is_some_and(|b| self.reg_is_symbolic(b.reg)) || index.is_some_and(|i| self.reg_is_symbolic(i.reg));
        if !sym {
            return Ok(None);
        }
        let mut acc = self.ast.bv(64, disp as u64);
        if let Some(b) = base {
            let e = self.parent_expr(b.reg, b.value);
            acc = self.ast.mk(Op::Add, &[e, acc])?;
        }
        if let Some(i) = index {
            let e = self.parent_expr(i.reg, i.value);
            let s = self.ast.bv(64, scale as u64);
            let scaled = self.ast.mk(Op::Mul, &[e, s])?;
            acc = self.ast.mk(Op::Add, &[acc, scaled])?;
        }
        Ok(Some(acc))
    }

    fn read(&mut self, o: &OperandValue, w: Width) -> Result<Expr, SymexError> {
        match o.loc {
            Location::Reg(v) => self.reg_expr(v, o.value),
            Location::Imm => Ok(self.ast.bv(w.bits(), o.value)),
            Location::Mem { addr, size, .. } => self.mem_read(addr, size, o.value),
            Location::Flag(f) => Ok(self.flag_expr(f, o.value != 0)),
        }
    }

    fn write(&mut self, o: &OperandValue, e: Expr) -> Result<(), SymexError> {
        match o.loc {
            Location::Reg(v) => self.reg_write(v, o.value, e),
            Location::Mem { addr, size, .. } => self.mem_write(addr, size, &e),
            Location::Flag(f) => {
                self.set_flag(f, e);
                Ok(())
            }
            Location::Imm => Ok(()),
        }
    }

    fn msb(&mut self, x: &Expr) -> Result<Expr, SymexError> {
        let w = x.width();
        let bit = self.ast.mk(Op::Extract { high: w - 1, low: w - 1 }, &[x.clone()])?;
        let one = self.ast.bv(1, 1);
        Ok(self.ast.mk(Op::Eq, &[bit, one])?)
    }

    fn bit0(&mut self, x: Expr) -> Result<Expr, SymexError> {
        let bit = self.ast.mk(Op::Extract { high: 0, low: 0 }, &[x])?;
        let one = self.ast.bv(1, 1);
        Ok(self.ast.mk(Op::Eq, &[bit, one])?)
    }

    fn mk(&mut self, op: Op, ch: &[Expr]) -> Result<Expr, SymexError> {
        Ok(self.ast.mk(op, ch)?)
    }

    /// ZF and SF from a result, plus the given CF and OF.
    fn set_flags(&mut self, r: &Expr, cf: Expr, of: Expr) -> Result<(), SymexError> {
        let zero = self.ast.bv(r.width(), 0);
        let zf = self.mk(Op::Eq, &[r.clone(), zero])?;
        let sf = self.msb(r)?;
        self.set_flag(Flag::Zf, zf);
        self.set_flag(Flag::Sf, sf);
        self.set_flag(Flag::Cf, cf);
        self.set_flag(Flag::Of, of);
        Ok(())
    }

    /// Result, CF and OF of a two-operand ALU operation.
    fn arith(&mut self, op: Opcode, a: &Expr, b: &Expr) -> Result<(Expr, Expr, Expr), SymexError> {
        let f = self.ast.bool(false);
        let (a, b) = (a.clone(), b.clone());
        Ok(match op {
            Opcode::Add => {
                let r = self.mk(Op::Add, &[a.clone(), b.clone()])?;
                let cf = self.mk(Op::Ult, &[r.clone(), a.clone()])?;
                let x1 = self.mk(Op::Xor, &[a, r.clone()])?;
                let x2 = self.mk(Op::Xor, &[b, r.clone()])?;
                let both = self.mk(Op::And, &[x1, x2])?;
                let of = self.msb(&both)?;
                (r, cf, of)
            }
            Opcode::Sub | Opcode::Cmp => {
                let r = self.mk(Op::Sub, &[a.clone(), b.clone()])?;
                let cf = self.mk(Op::Ult, &[a.clone(), b.clone()])?;
                let x1 = self.mk(Op::Xor, &[a.clone(), b])?;
                let x2 = self.mk(Op::Xor, &[a, r.clone()])?;
                let both = self.mk(Op::And, &[x1, x2])?;
                let of = self.msb(&both)?;
                (r, cf, of)
            }
            Opcode::Mul => (self.mk(Op::Mul, &[a, b])?, f.clone(), f),
            Opcode::And | Opcode::Test => (self.mk(Op::And, &[a, b])?, f.clone(), f),
            Opcode::Or => (self.mk(Op::Or, &[a, b])?, f.clone(), f),
            Opcode::Xor => (self.mk(Op::Xor, &[a, b])?, f.clone(), f),
            _ => unreachable!("arith: {op:?}"),
        })
    }

    fn shift(&mut self, insn: &ExecutedInsn) -> Result<(), SymexError> {
        let w = insn.width;
        let wb = w.bits();
        let a = self.read(&insn.explicit[0], w)?;
        let c = self.read(&insn.explicit[1], w)?;
        let cmask = self.ast.bv(wb, if w == Width::B64 { 63 } else { 31 });
        let cm = self.mk(Op::And, &[c, cmask])?;
        if cm.as_const() == Some(0) {
            return Ok(());
        }
        let one = self.ast.bv(wb, 1);
        let (r, cf, of) = match insn.opcode {
            Opcode::Shl => {
                let r = self.mk(Op::Shl, &[a.clone(), cm.clone()])?;
                let wc = self.ast.bv(wb, wb as u64);
                let back = self.mk(Op::Sub, &[wc, cm.clone()])?;
                let out = self.mk(Op::LShr, &[a, back])?;
                let cf = self.bit0(out)?;
                let top = self.msb(&r)?;
                let of = self.mk(Op::Ne, &[top, cf.clone()])?;
                (r, cf, of)
            }
            Opcode::Shr => {
                let r = self.mk(Op::LShr, &[a.clone(), cm.clone()])?;
                let c1 = self.mk(Op::Sub, &[cm.clone(), one])?;
                let out = self.mk(Op::LShr, &[a.clone(), c1])?;
                let cf = self.bit0(out)?;
                let of = self.msb(&a)?;
                (r, cf, of)
            }
            _ => {
                let r = self.mk(Op::AShr, &[a.clone(), cm.clone()])?;
                let c1 = self.mk(Op::Sub, &[cm.clone(), one])?;
                let out = self.mk(Op::AShr, &[a, c1])?;
                let cf = self.bit0(out)?;
                (r, cf, self.ast.bool(false))
            }
        };
        let zero = self.ast.bv(wb, 0);
        let zf = self.mk(Op::Eq, &[r.clone(), zero.clone()])?;
        let sf = self.msb(&r)?;
        let new = [zf, sf, cf, of];
        // a zero count leaves the flags alone
        let is_zero = if cm.is_const() {
            None
        } else {
            Some(self.mk(Op::Eq, &[cm, zero])?)
        };
        for (f, n) in Flag::ALL.into_iter().zip(new) {
            let v = match &is_zero {
                None => n,
                Some(z) => {
                    let old_val = insn
                        .implicit
                        .iter()
                        .find(|o| o.loc == Location::Flag(f))
                        .map_or(false, |o| o.value != 0);
                    let old = self.flag_expr(f, old_val);
                    self.mk(Op::Ite, &[z.clone(), old, n])?
                }
            };
            self.set_flag(f, v);
        }
        self.write(&insn.explicit[0], r)
    }

    fn cond_expr(&mut self, c: Cond, insn: &ExecutedInsn) -> Result<(Expr, bool), SymexError> {
        let mut concrete = Flags::default();
        for o in &insn.implicit {
            if let Location::Flag(f) = o.loc {
                concrete.set(f, o.value != 0);
            }
        }
        let fe = |s: &mut Self, f: Flag| s.flag_expr(f, concrete.get(f));
        let zf = fe(self, Flag::Zf);
        let sf = fe(self, Flag::Sf);
        let cf = fe(self, Flag::Cf);
        let of = fe(self, Flag::Of);
        let e = match c {
            Cond::Z => zf,
            Cond::Nz => self.mk(Op::BoolNot, &[zf])?,
            Cond::L => self.mk(Op::Ne, &[sf, of])?,
            Cond::Ge => self.mk(Op::Eq, &[sf, of])?,
            Cond::Le => {
                let l = self.mk(Op::Ne, &[sf, of])?;
                self.mk(Op::BoolOr, &[zf, l])?
            }
            Cond::G => {
                let nz = self.mk(Op::BoolNot, &[zf])?;
                let ge = self.mk(Op::Eq, &[sf, of])?;
                self.mk(Op::BoolAnd, &[nz, ge])?
            }
            Cond::B => cf,
            Cond::Ae => self.mk(Op::BoolNot, &[cf])?,
            Cond::Be => self.mk(Op::BoolOr, &[cf, zf])?,
            Cond::A => {
                let ncf = self.mk(Op::BoolNot, &[cf])?;
                let nzf = self.mk(Op::BoolNot, &[zf])?;
                self.mk(Op::BoolAnd, &[ncf, nzf])?
            }
        };
        Ok((e, c.holds(&concrete)))
    }

    /// Applies the instruction's semantics to the symbolic state. Returns the
    /// symbolic address of a load, if it had one.
    pub fn exec_symbolic(&mut self, insn: &ExecutedInsn, branch_pos: usize) -> Result<Option<Expr>, SymexError> {
        use Opcode::*;
        let w = insn.width;
        let ex = &insn.explicit;
        let need = |n: usize| {
            if ex.len() < n {
                Err(malformed(insn, "missing operand"))
            } else {
                Ok(())
            }
        };
        let mut load_addr = None;
        match insn.opcode {
            Mov | Load => {
                need(2)?;
                if insn.opcode == Load {
                    load_addr = self.address_expr(&ex[1].loc)?;
                    if load_addr.is_some() {
                        self.stats.concretized += 1;
                    }
                }
                let v = self.read(&ex[1], w)?;
                self.write(&ex[0], v)?;
            }
            Store => {
                need(2)?;
                if self.address_expr(&ex[0].loc)?.is_some() {
                    self.stats.concretized += 1;
                }
                let v = self.read(&ex[1], w)?;
                self.write(&ex[0], v)?;
            }
            Addr => {
                need(2)?;
                let Location::Mem { addr, .. } = ex[1].loc else {
                    return Err(malformed(insn, "addr without memory operand"));
                };
                let v = match self.address_expr(&ex[1].loc)? {
                    Some(e) => e,
                    None => self.ast.bv(64, addr),
                };
                self.write(&ex[0], v)?;
            }
            Add | Sub | Mul | And | Or | Xor | Cmp | Test => {
                need(2)?;
                let a = self.read(&ex[0], w)?;
                let b = self.read(&ex[1], w)?;
                let (r, cf, of) = self.arith(insn.opcode, &a, &b)?;
                self.set_flags(&r, cf, of)?;
                if !matches!(insn.opcode, Cmp | Test) {
                    self.write(&ex[0], r)?;
                }
            }
            Not => {
                need(1)?;
                let a = self.read(&ex[0], w)?;
                let r = self.mk(Op::Not, &[a])?;
                self.write(&ex[0], r)?;
            }
            Neg => {
                need(1)?;
                let a = self.read(&ex[0], w)?;
                let r = self.mk(Op::Neg, &[a.clone()])?;
                let zero = self.ast.bv(w.bits(), 0);
                let cf = self.mk(Op::Ne, &[a.clone(), zero])?;
                let both = self.mk(Op::And, &[a, r.clone()])?;
                let of = self.msb(&both)?;
                self.set_flags(&r, cf, of)?;
                self.write(&ex[0], r)?;
            }
            Shl | Shr | Sar => {
                need(2)?;
                self.shift(insn)?;
            }
            Jcc(c) => {
                let (cond, taken) = self.cond_expr(c, insn)?;
                self.on_branch(insn, cond, taken, branch_pos)?;
            }
            // indirect jumps are handled by the resolver
            Jmp | Join | Yield | Exit => {}
            Spawn | Open => {
                need(1)?;
                let Location::Reg(v) = ex[0].loc else {
                    return Err(malformed(insn, "expected a register destination"));
                };
                self.current.regs[v.reg.index()] = None;
            }
            Read | Write => {
                // the byte count is concrete; buffer effects arrive as events
                self.current.regs[0] = None;
            }
        }
        Ok(load_addr)
    }

    /// Appends the taken direction of a conditional branch when symbolic.
    pub fn on_branch(&mut self, insn: &ExecutedInsn, cond: Expr, taken: bool, pos: usize) -> Result<(), SymexError> {
        if !cond.is_symbolic() {
            return Ok(());
        }
        let cond = if taken { cond } else { self.mk(Op::BoolNot, &[cond])? };
        self.predicate.push(PathConstraint {
            site: insn.address,
            cond,
            kind: ConstraintKind::Conditional,
            alt_targets: Vec::new(),
            taken_target: None,
            trace_pos: pos,
            tid: self.tid,
        });
        Ok(())
    }

    fn resolve_indirect(&mut self, insn: &ExecutedInsn, pos: usize) -> Result<(), SymexError> {
        let window = self.windows.get(&self.tid).map(Vec::as_slice).unwrap_or(&[]);
        let Some(source) = jumptab::backward_slice(window, insn) else {
            return Ok(());
        };
        let (sym_addr, access) = match source {
            SliceSource::Jump => {
                let loc = insn.explicit[0].loc;
                let Location::Mem { addr, .. } = loc else {
                    return Ok(());
                };
                (self.address_expr(&loc)?, addr)
            }
            SliceSource::Load(i) => {
                let e = &window[i];
                let Some(Location::Mem { addr, .. }) = e.insn.explicit.get(1).map(|o| o.loc) else {
                    return Ok(());
                };
                (e.load_addr.clone(), addr)
            }
        };
        let Some(sym_addr) = sym_addr else {
            return Ok(());
        };
        let target = insn.explicit[0].value;
        let Some(tbl) = jumptab::parse_table(self.program, access, self.config.max_table_size) else {
            log::debug!("jumptab access={access:#x} no table");
            return Ok(());
        };
        if tbl.kind == jumptab::TableKind::Address && tbl.entry(access) != Some(target) {
            log::debug!("jumptab access={access:#x} loaded value is not the target");
            return Ok(());
        }
        let program = self.program;
        let c = jumptab::build_constraints(&mut self.ast, &tbl, &sym_addr, access, target, |a| program.is_code_addr(a))?;
        self.stats.indirect_resolved += 1;
        self.predicate.push(PathConstraint {
            site: insn.address,
            cond: c.taken,
            kind: ConstraintKind::Indirect,
            alt_targets: c.alternatives,
            taken_target: Some(c.taken_target),
            trace_pos: pos,
            tid: self.tid,
        });
        Ok(())
    }
}

/// Runs `program` on `seed` with the VM on its own thread and builds the
/// predicate from the event stream.
pub fn build_predicate(
    program: &Arc<Program>,
    seed: &[u8],
    run: &RunConfig,
    config: &SymexConfig,
) -> Result<(SymexOutput, RunOutcome), SymexError> {
    let (rx, handle) = spawn_concrete(program.clone(), seed.to_vec(), *run);
    let mut sx = Symex::new(program, seed, config.clone());
    let mut failure = None;
    for ev in rx.iter() {
        if let Err(e) = sx.handle(ev) {
            failure = Some(e);
            break;
        }
    }
    // dropping the receiver stops the VM early on failure
    drop(rx);
    let outcome = handle
        .join()
        .map_err(|_| SymexError::Executor("VM thread panicked".into()))?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((sx.finish(), outcome))
}

/// Builds the predicate from an already recorded event stream.
pub fn replay_events<I: IntoIterator<Item = Event>>(
    program: &Program,
    seed: &[u8],
    events: I,
    config: &SymexConfig,
) -> Result<SymexOutput, SymexError> {
    let mut sx = Symex::new(program, seed, config.clone());
    for ev in events {
        sx.handle(ev)?;
    }
    Ok(sx.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::{eval, mask};
    use crate::mvm::{alu, assemble, run_concrete};
    use proptest::prelude::*;

    fn symex_run(src: &str, seed: &[u8], config: SymexConfig) -> (Program, SymexOutput, RunOutcome) {
        let p = assemble(src).unwrap();
        let mut evs = Vec::new();
        let out = run_concrete(&p, seed, &RunConfig::default(), &mut evs);
        let sx = replay_events(&p, seed, evs, &config).unwrap();
        (p, sx, out)
    }

    const HEADER: &str = ".data\nb: .zero 32\n.text\nmain: open r7\n addr r6, [b]\n read r7, r6, 16\n load r1, [b]\n load r2, [b + 8]\n";

    fn reg(w: Width, r: u8) -> String {
        RegView { reg: Reg(r), width: w }.to_string()
    }

    fn sfx(w: Width) -> String {
        if w == Width::B64 {
            String::new()
        } else {
            format!(".{}", w.suffix())
        }
    }

    /// Runs `op r1, r2` on `seed`, then checks the symbolic result and flags
    /// against the VM's ALU on `other`.
    fn check_alu(op: Opcode, w: Width, cond: Cond, seed: &[u8; 16], other: &[u8; 16]) -> Result<(), TestCaseError> {
        let unary = matches!(op, Opcode::Not | Opcode::Neg);
        let ins = if unary {
            format!(" {}{} {}\n", op.mnemonic(), sfx(w), reg(w, 1))
        } else {
            format!(" {}{} {}, {}\n", op.mnemonic(), sfx(w), reg(w, 1), reg(w, 2))
        };
        let jcc = Opcode::Jcc(cond).mnemonic();
        let src = format!("{HEADER}{ins} {jcc} next\nnext: store [b + 16], r1\n exit 0\n");
        let p = assemble(&src).unwrap();
        let mut evs = Vec::new();
        run_concrete(&p, seed, &RunConfig::default(), &mut evs);
        let mut sx = Symex::new(&p, seed, SymexConfig::default());
        for ev in evs {
            sx.handle(ev).unwrap();
        }
        let a = u64::from_le_bytes(other[..8].try_into().unwrap());
        let b = u64::from_le_bytes(other[8..].try_into().unwrap());
        let (want, flags) = alu(op, w, a & mask(w.bits()), b & mask(w.bits()), Flags::default());
        let ctx = sx.thread_context().clone();
        let val = |e: &Option<Expr>, concrete: u64| e.as_ref().map_or(concrete, |e| eval(e, &other[..]).unwrap());
        let r1 = ctx.regs[1].as_ref().expect("r1 symbolic");
        let want = if matches!(op, Opcode::Cmp | Opcode::Test) { a & mask(w.bits()) } else { want };
        prop_assert_eq!(eval(r1, &other[..]).unwrap() & mask(w.bits()), want);
        if !matches!(op, Opcode::Not) {
            let seed_a = u64::from_le_bytes(seed[..8].try_into().unwrap());
            let seed_b = u64::from_le_bytes(seed[8..].try_into().unwrap());
            let (_, seed_flags) = alu(op, w, seed_a & mask(w.bits()), seed_b & mask(w.bits()), Flags::default());
            for f in Flag::ALL {
                let got = val(&ctx.flags[f.index()], seed_flags.get(f) as u64);
                prop_assert_eq!(got != 0, flags.get(f), "{:?} {:?} {:?}", op, w, f);
            }
        }
        // the branch constraint holds on `other` exactly when it takes the
        // same direction as on the seed
        if let Some(pc) = sx.predicate().first() {
            let seed_a = u64::from_le_bytes(seed[..8].try_into().unwrap());
            let seed_b = u64::from_le_bytes(seed[8..].try_into().unwrap());
            let (_, sf) = alu(op, w, seed_a & mask(w.bits()), seed_b & mask(w.bits()), Flags::default());
            let same = cond.holds(&sf) == cond.holds(&flags);
            prop_assert_eq!(eval(&pc.cond, &other[..]).unwrap() != 0, same);
        }
        Ok(())
    }

    fn ops() -> impl Strategy<Value = Opcode> {
        use Opcode::*;
        prop::sample::select(vec![Add, Sub, Mul, And, Or, Xor, Cmp, Test, Not, Neg, Shl, Shr, Sar])
    }

    fn widths() -> impl Strategy<Value = Width> {
        prop::sample::select(vec![Width::B8, Width::B16, Width::B32, Width::B64])
    }

    fn conds() -> impl Strategy<Value = Cond> {
        use Cond::*;
        prop::sample::select(vec![Z, Nz, L, Le, G, Ge, B, Be, A, Ae])
    }

    fn bytes16() -> impl Strategy<Value = [u8; 16]> {
        // small shift counts and boundary values show up often
        prop_oneof![
            any::<[u8; 16]>(),
            (any::<[u8; 8]>(), 0u8..70).prop_map(|(a, c)| {
                let mut v = [0u8; 16];
                v[..8].copy_from_slice(&a);
                v[8] = c;
                v
            }),
            prop::sample::select(vec![0u8, 1, 0x7f, 0x80, 0xff]).prop_map(|x| [x; 16]),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn symbolic_alu_matches_vm(op in ops(), w in widths(), cond in conds(), seed in bytes16(), other in bytes16()) {
            check_alu(op, w, cond, &seed, &other)?;
        }
    }

    #[test]
    fn subregister_writes_keep_upper_bits() {
        let src = format!(
            "{HEADER} mov r3, 0x1122334455667788\n mov.b r3b, r1b\n mov r4, -1\n mov.d r4d, r2d\n mov r5, r3\n exit 0\n"
        );
        let seed: Vec<u8> = (1..=16).collect();
        let p = assemble(&src).unwrap();
        let mut evs = Vec::new();
        run_concrete(&p, &seed, &RunConfig::default(), &mut evs);
        let mut sx = Symex::new(&p, &seed, SymexConfig::default());
        for ev in evs {
            sx.handle(ev).unwrap();
        }
        let other: Vec<u8> = (0xa0..0xb0).collect();
        let ctx = sx.thread_context();
        assert_eq!(eval(ctx.regs[3].as_ref().unwrap(), &other[..]).unwrap(), 0x11223344556677a0);
        assert_eq!(eval(ctx.regs[4].as_ref().unwrap(), &other[..]).unwrap(), 0xabaa_a9a8);
        assert!(ctx.regs[5].as_ref().unwrap().ptr_eq(ctx.regs[3].as_ref().unwrap()));
    }

    #[test]
    fn stores_and_loads_are_bytewise() {
        let src = format!("{HEADER} store.w [b + 20], r1w\n load.d r3d, [b + 19]\n exit 0\n");
        let seed = [7u8; 16];
        let p = assemble(&src).unwrap();
        let mut evs = Vec::new();
        run_concrete(&p, &seed, &RunConfig::default(), &mut evs);
        let mut sx = Symex::new(&p, &seed, SymexConfig::default());
        for ev in evs {
            sx.handle(ev).unwrap();
        }
        assert!(sx.mem_expr(crate::mvm::DATA_BASE + 19).is_none());
        assert!(sx.mem_expr(crate::mvm::DATA_BASE + 20).is_some());
        let other: Vec<u8> = (1..=16).collect();
        let r3 = sx.thread_context().regs[3].clone().unwrap();
        // bytes 19..23: 0, b0, b1, 0
        assert_eq!(eval(&r3, &other[..]).unwrap(), 0x0002_0100);
    }

    #[test]
    fn concrete_overwrite_clears_symbolic_state() {
        let src = format!("{HEADER} mov r1, 5\n store [b], r1\n cmp r1, 5\n jz z\nz: exit 0\n");
        let (_, sx, _) = symex_run(&src, &[0; 16], SymexConfig::default());
        assert!(sx.predicate.is_empty());
        assert_eq!(sx.var_count, 16);
    }

    #[test]
    fn skipping_preserves_the_predicate() {
        let src = format!(
            "{HEADER} mov r3, 0\nloop: add r3, 1\n cmp r3, 50\n jnz loop\n cmp.b r1b, 'x'\n jz yes\n add r1, r3\n cmp r1, 200\n jb yes\nyes: exit 0\n"
        );
        let seed = [3u8; 16];
        let (_, on, _) = symex_run(&src, &seed, SymexConfig::default());
        let (_, off, _) = symex_run(&src, &seed, SymexConfig { skip: false, ..SymexConfig::default() });
        assert_eq!(on.predicate.len(), 2);
        assert!(predicates_equal(&on.predicate, &off.predicate));
        assert!(on.stats.symbolic < off.stats.symbolic);
        assert_eq!(on.stats.instructions, off.stats.instructions);
        assert_eq!(off.stats.symbolic, off.stats.instructions);
    }

    #[test]
    fn trace_positions_follow_the_branch_trace() {
        let src = format!("{HEADER} mov r3, 2\nl: sub r3, 1\n jnz l\n cmp.b r1b, 1\n jz t1\nt1: cmp.b r2b, 2\n ja t2\nt2: exit 0\n");
        let (_, sx, out) = symex_run(&src, &[0; 16], SymexConfig::default());
        let after = out.trace.after_input();
        assert_eq!(sx.predicate.len(), 2);
        for pc in &sx.predicate {
            assert_eq!(after[pc.trace_pos].site, pc.site);
        }
        assert_eq!(sx.predicate[0].trace_pos, 2);
    }

    #[test]
    fn reads_past_the_seed_fail() {
        let src = ".data\nb: .zero 8\n.text\nmain: open r1\n addr r2, [b]\n read r1, r2, 4\n exit 0\n";
        let p = assemble(src).unwrap();
        let mut sx = Symex::new(&p, b"ab", SymexConfig::default());
        let e = sx.on_read_symbolic_input(crate::mvm::DATA_BASE, 4, 0).unwrap_err();
        assert!(matches!(e, SymexError::InputOutOfRange { .. }));
    }

    #[test]
    fn file_writes_are_read_back_symbolically() {
        // copy input byte 0 to file offset 3, then read it back
        let src = ".data\nb: .zero 16\n.text\nmain: open r1\n addr r2, [b]\n read r1, r2, 3\n \
                   load.b r4b, [b]\n store.b [b + 4], r4b\n addr r5, [b + 4]\n write r1, r5, 1\n \
                   open r7\n addr r5, [b + 8]\n read r7, r5, 4\n load.b r4b, [b + 11]\n cmp.b r4b, 9\n jz x\nx: exit 0\n";
        let (_, sx, out) = symex_run(src, &[1, 2, 3, 4], SymexConfig::default());
        assert_eq!(out.file, vec![1, 2, 3, 1]);
        assert_eq!(sx.predicate.len(), 1);
        assert!(sx.predicate[0].cond.used_variables().contains(0));
        assert!(!sx.predicate[0].cond.used_variables().contains(3));
    }

    #[test]
    fn per_thread_register_contexts() {
        let src = ".data\nb: .zero 8\n.text\nmain: open r1\n addr r2, [b]\n read r1, r2, 2\n load.b r3b, [b]\n \
                   spawn r6, w, 0\n yield\n cmp.b r3b, 7\n jz m\nm: join r6\n exit 0\n\
                   w: mov r3, 9\n yield\n cmp.b r3b, 9\n jz x\nx: exit\n";
        let (_, on, _) = symex_run(src, &[7, 0], SymexConfig::default());
        let (_, off, _) = symex_run(src, &[7, 0], SymexConfig { context_switch: false, ..SymexConfig::default() });
        assert_eq!(on.predicate.len(), 1);
        assert_eq!(on.predicate[0].tid, 0);
        assert!(on.stats.context_switches > 0);
        // without contexts the worker's concrete write clobbers main's r3
        assert!(off.predicate.is_empty());
    }

    #[test]
    fn address_table_jump_is_resolved() {
        let src = ".data\nt: .quad c0, c1, c1, c3\nb: .zero 8\n.text\nmain: open r1\n addr r2, [b]\n read r1, r2, 1\n \
                   load.b r3b, [b]\n and r3, 3\n jmp [t + r3*8]\nc0: exit 0\nc1: exit 1\nc3: exit 3\n";
        let (p, sx, out) = symex_run(src, &[2], SymexConfig::default());
        assert_eq!(out.exit_code(), 1);
        let ind: Vec<_> = sx.predicate.iter().filter(|c| c.kind == ConstraintKind::Indirect).collect();
        assert_eq!(ind.len(), 1);
        let c = ind[0];
        assert_eq!(c.taken_target, Some(p.label("c1").unwrap()));
        let alts: Vec<u64> = c.alt_targets.iter().map(|a| a.0).collect();
        assert_eq!(alts, vec![p.label("c0").unwrap(), p.label("c3").unwrap()]);
        for x in 0..=255u8 {
            let sel = x & 3;
            assert_eq!(eval(&c.cond, &[x][..]).unwrap() != 0, sel == 1 || sel == 2);
        }
        let (_, none, _) = symex_run(src, &[2], SymexConfig { jumptables: false, ..SymexConfig::default() });
        assert!(none.predicate.iter().all(|c| c.kind == ConstraintKind::Conditional));
    }

    #[test]
    fn register_jump_through_load_is_resolved() {
        let src = ".data\nt: .quad c0, c1, c2\nb: .zero 8\n.text\nmain: open r1\n addr r2, [b]\n read r1, r2, 1\n \
                   load.b r3b, [b]\n cmp r3, 2\n ja c0\n addr r4, [t]\n load r5, [r4 + r3*8]\n mov r6, r5\n jmp r6\n\
                   c0: exit 0\nc1: exit 1\nc2: exit 2\n";
        let (_, sx, out) = symex_run(src, &[2], SymexConfig::default());
        assert_eq!(out.exit_code(), 2);
        assert_eq!(sx.predicate.len(), 2);
        assert_eq!(sx.predicate[1].kind, ConstraintKind::Indirect);
        assert_eq!(sx.predicate[1].alt_targets.len(), 2);
        assert_eq!(sx.stats.indirect_resolved, 1);
    }
}
