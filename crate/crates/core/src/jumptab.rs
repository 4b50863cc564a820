//! Resolution of table-driven indirect jumps.
//!
//! For an indirect `jmp`, a backward slice over the current basic block finds
//! the memory read that produced the target. If the read address is symbolic,
//! memory around it is parsed as a table of code addresses (8-byte entries) or
//! of negative 32-bit offsets from a base, and the jump becomes one
//! multi-target constraint: equality of the symbolic address with the entry
//! address, with entries that share a target merged by disjunction.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ast::{AstContext, AstError, Expr, Op};
use crate::mvm::{Access, ExecutedInsn, Location, Opcode, Program, Reg};

pub const DEFAULT_MAX_TABLE_SIZE: usize = 512;
/// Fewer entries than this are not treated as a table.
pub const MIN_TABLE_SIZE: usize = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum JumpTableError {
    #[error("accessed entry {0:#x} is not part of the parsed table")]
    EntryNotInTable(u64),
    #[error(transparent)]
    Ast(#[from] AstError),
}

/// One instruction of the current block, with the symbolic address of its
/// memory read when that address was symbolic.
#[derive(Clone, Debug)]
pub struct WindowEntry {
    pub insn: ExecutedInsn,
    pub load_addr: Option<Expr>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SliceSource {
    /// The jump reads its target from memory itself.
    Jump,
    /// Index into the window of the load that produced the target.
    Load(usize),
}

fn written_reg(insn: &ExecutedInsn) -> Option<Reg> {
    insn.explicit.first().and_then(|o| match (o.loc, o.access) {
        (Location::Reg(v), Access::Write | Access::ReadWrite) => Some(v.reg),
        _ => None,
    })
}

fn reads_reg(insn: &ExecutedInsn, k: usize) -> Option<Reg> {
    insn.explicit.get(k).and_then(|o| match o.loc {
        Location::Reg(v) => Some(v.reg),
        _ => None,
    })
}

/// Finds the instruction whose memory read formed the target of `jump`,
/// looking only at `window` (the block so far, oldest first).
pub fn backward_slice(window: &[WindowEntry], jump: &ExecutedInsn) -> Option<SliceSource> {
    if jump.opcode != Opcode::Jmp {
        return None;
    }
    let start = match jump.explicit.first()?.loc {
        Location::Mem { .. } => return Some(SliceSource::Jump),
        Location::Reg(v) => v.reg,
        _ => return None,
    };
    let mut tracked: Vec<Reg> = vec![start];
    for (i, e) in window.iter().enumerate().rev() {
        let insn = &e.insn;
        let Some(dst) = written_reg(insn) else {
            continue;
        };
        if !tracked.contains(&dst) {
            continue;
        }
        match insn.opcode {
            Opcode::Load => return Some(SliceSource::Load(i)),
            Opcode::Mov => {
                tracked.retain(|&r| r != dst);
                match reads_reg(insn, 1) {
                    Some(src) => tracked.push(src),
                    // an immediate: no load feeds this register
                    None => {
                        if tracked.is_empty() {
                            return None;
                        }
                    }
                }
            }
            Opcode::Add => {
                if let Some(src) = reads_reg(insn, 1) {
                    if !tracked.contains(&src) {
                        tracked.push(src);
                    }
                }
            }
            Opcode::Addr => {
                // a computed address; its registers are not loads
                tracked.retain(|&r| r != dst);
                if tracked.is_empty() {
                    return None;
                }
            }
            _ => return None,
        }
    }
    None
}

/// Read-only view of memory used to parse tables.
pub trait TableMemory {
    fn read(&self, addr: u64, size: u32) -> Option<u64>;
    fn is_code(&self, addr: u64) -> bool;
}

/// Tables are parsed from the program's initial data image.
impl TableMemory for Program {
    fn read(&self, addr: u64, size: u32) -> Option<u64> {
        let end = self.data_base + self.data.len() as u64;
        (addr >= self.data_base && addr.checked_add(size as u64)? <= end).then(|| self.read_data(addr, size))
    }

    fn is_code(&self, addr: u64) -> bool {
        self.is_code_addr(addr)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableKind {
    Address,
    Offset,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JumpTable {
    pub kind: TableKind,
    pub base_addr: u64,
    pub stride: u64,
    /// (entry address, raw value); offsets are stored sign-extended.
    pub entries: Vec<(u64, u64)>,
}

impl JumpTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, addr: u64) -> Option<u64> {
        self.entries.iter().find(|e| e.0 == addr).map(|e| e.1)
    }

    /// Target of each entry given the base for offset tables.
    pub fn target_of(&self, raw: u64, offset_base: u64) -> u64 {
        match self.kind {
            TableKind::Address => raw,
            TableKind::Offset => offset_base.wrapping_add(raw),
        }
    }
}

fn grow(access: u64, stride: u64, max: usize, ok: impl Fn(u64) -> bool) -> Option<(u64, u64)> {
    if !ok(access) {
        return None;
    }
    let (mut lo, mut hi) = (access, access);
    let mut count = 1usize;
    let (mut up, mut down) = (true, true);
    while count < max && (up || down) {
        if up {
            match hi.checked_add(stride).filter(|&a| ok(a)) {
                Some(a) => {
                    hi = a;
                    count += 1;
                }
                None => up = false,
            }
        }
        if count >= max {
            break;
        }
        if down {
            match lo.checked_sub(stride).filter(|&a| ok(a)) {
                Some(a) => {
                    lo = a;
                    count += 1;
                }
                None => down = false,
            }
        }
    }
    Some((lo, hi))
}

fn collect(mem: &impl TableMemory, kind: TableKind, lo: u64, hi: u64, stride: u64) -> JumpTable {
    let size = stride as u32;
    let entries = (0..=(hi - lo) / stride)
        .map(|k| {
            let a = lo + k * stride;
            let raw = mem.read(a, size).unwrap();
            let raw = if kind == TableKind::Offset { raw as u32 as i32 as i64 as u64 } else { raw };
            (a, raw)
        })
        .collect();
    JumpTable {
        kind,
        base_addr: lo,
        stride,
        entries,
    }
}

/// Parses a table around `access`: code addresses first, then negative
/// 32-bit offsets. Returns None when neither yields `MIN_TABLE_SIZE` entries.
pub fn parse_table(mem: &impl TableMemory, access: u64, max_table_size: usize) -> Option<JumpTable> {
    let max = max_table_size.max(1);
    let is_addr = |a: u64| mem.read(a, 8).is_some_and(|v| mem.is_code(v));
    if let Some((lo, hi)) = grow(access, 8, max, is_addr) {
        if (hi - lo) / 8 + 1 >= MIN_TABLE_SIZE as u64 {
            return Some(collect(mem, TableKind::Address, lo, hi, 8));
        }
    }
    let is_off = |a: u64| mem.read(a, 4).is_some_and(|v| (v as u32 as i32) < 0);
    // a lone negative value is not an offset table
    let neighbour = access.checked_sub(4).is_some_and(is_off) || access.checked_add(4).is_some_and(is_off);
    if neighbour {
        if let Some((lo, hi)) = grow(access, 4, max, is_off) {
            if (hi - lo) / 4 + 1 >= MIN_TABLE_SIZE as u64 {
                return Some(collect(mem, TableKind::Offset, lo, hi, 4));
            }
        }
    }
    None
}

/// Constraints of one resolved indirect jump.
#[derive(Clone, Debug)]
pub struct IndirectConstraint {
    pub taken_target: u64,
    pub taken: Expr,
    /// One (target, condition) per other unique target, in table order.
    pub alternatives: Vec<(u64, Expr)>,
    pub offset_base: Option<u64>,
}

/// Builds the taken condition and one alternative per other unique target.
/// `concrete_entry` is the entry address read in this execution.
pub fn build_constraints(
    ctx: &mut AstContext,
    tbl: &JumpTable,
    sym_addr: &Expr,
    concrete_entry: u64,
    concrete_target: u64,
    is_code: impl Fn(u64) -> bool,
) -> Result<IndirectConstraint, JumpTableError> {
    let raw = tbl.entry(concrete_entry).ok_or(JumpTableError::EntryNotInTable(concrete_entry))?;
    let offset_base = match tbl.kind {
        TableKind::Address => None,
        TableKind::Offset => Some(concrete_target.wrapping_sub(raw)),
    };
    let base = offset_base.unwrap_or(0);
    // group entries by target, keeping first-seen order
    let mut order: Vec<u64> = Vec::new();
    let mut groups: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for &(addr, raw) in &tbl.entries {
        let t = tbl.target_of(raw, base);
        if !is_code(t) {
            continue;
        }
        groups
            .entry(t)
            .or_insert_with(|| {
                order.push(t);
                Vec::new()
            })
            .push(addr);
    }
    let taken_target = tbl.target_of(raw, base);
    let w = sym_addr.width();
    let cond_for = |ctx: &mut AstContext, addrs: &[u64]| -> Result<Expr, AstError> {
        let mut acc: Option<Expr> = None;
        for &a in addrs {
            let k = ctx.bv(w, a);
            let eq = ctx.mk(Op::Eq, &[sym_addr.clone(), k])?;
            acc = Some(match acc {
                None => eq,
                Some(prev) => ctx.mk(Op::BoolOr, &[prev, eq])?,
            });
        }
        Ok(acc.unwrap_or_else(|| ctx.bool(false)))
    };
    let taken_addrs = groups.get(&taken_target).cloned().unwrap_or_else(|| vec![concrete_entry]);
    let taken = cond_for(ctx, &taken_addrs)?;
    let mut alternatives = Vec::new();
    for t in order {
        if t != taken_target {
            let c = cond_for(ctx, &groups[&t])?;
            alternatives.push((t, c));
        }
    }
    log::debug!(
        "jumptab access={concrete_entry:#x} kind={:?} entries={} targets={}",
        tbl.kind,
        tbl.len(),
        alternatives.len() + 1
    );
    Ok(IndirectConstraint {
        taken_target,
        taken,
        alternatives,
        offset_base,
    })
}
