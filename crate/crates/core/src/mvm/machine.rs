use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use rustc_hash::FxHashMap;
use thiserror::Error;

use super::isa::*;
use crate::events::{ChannelSink, Event, EventSink, CHANNEL_CAPACITY};

pub const DEFAULT_QUANTUM: u32 = 64;
pub const DEFAULT_BUDGET: u64 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunConfig {
    /// Instructions a thread runs before a forced switch.
    pub quantum: u32,
    /// Total instructions before the run is aborted.
    pub instruction_budget: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            quantum: DEFAULT_QUANTUM,
            instruction_budget: DEFAULT_BUDGET,
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum Trap {
    #[error("invalid memory access at {addr:#x} (pc {pc:#x})")]
    InvalidMemory { pc: u64, addr: u64 },
    #[error("bad system call at {pc:#x}: {detail}")]
    BadSyscall { pc: u64, detail: String },
    #[error("deadlock: no runnable thread")]
    Deadlock,
    #[error("jump to non-code address {target:#x} (pc {pc:#x})")]
    BadJump { pc: u64, target: u64 },
    #[error("instruction budget exhausted")]
    Budget,
}

impl Trap {
    /// Exit code reported for the trap; always above the 0..=255 range of
    /// program exit codes.
    pub fn exit_code(&self) -> i32 {
        match self {
            Trap::InvalidMemory { .. } => 257,
            Trap::BadSyscall { .. } => 258,
            Trap::Deadlock => 259,
            Trap::BadJump { .. } => 260,
            Trap::Budget => 261,
        }
    }

    /// Address of the faulting instruction, when there is one.
    pub fn pc(&self) -> Option<u64> {
        match self {
            Trap::InvalidMemory { pc, .. } | Trap::BadSyscall { pc, .. } | Trap::BadJump { pc, .. } => Some(*pc),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExitStatus {
    Exited(i32),
    Trapped(Trap),
}

impl ExitStatus {
    pub fn code(&self) -> i32 {
        match self {
            ExitStatus::Exited(c) => *c,
            ExitStatus::Trapped(t) => t.exit_code(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BranchKind {
    Conditional { taken: bool },
    Indirect { target: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BranchRecord {
    pub site: u64,
    pub tid: u32,
    pub kind: BranchKind,
}

/// Every conditional and indirect branch of a run, in execution order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BranchTrace {
    pub entries: Vec<BranchRecord>,
    /// Number of entries recorded before the first input read, if any.
    pub first_input_read: Option<usize>,
}

impl BranchTrace {
    /// Entries recorded after the first input read.
    pub fn after_input(&self) -> &[BranchRecord] {
        match self.first_input_read {
            Some(k) => &self.entries[k..],
            None => &[],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunOutcome {
    pub status: ExitStatus,
    pub trace: BranchTrace,
    pub stdout: Vec<u8>,
    /// Final content of the input file (writes to it included).
    pub file: Vec<u8>,
    pub executed: u64,
    /// Instructions reported as events (after the first input read).
    pub executed_after_input: u64,
    pub per_thread: Vec<u64>,
    pub thread_switches: u64,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.status.code()
    }
}

const PAGE: u64 = 4096;

/// Sparse byte-addressed memory over `[DATA_BASE, MEM_LIMIT)`.
#[derive(Clone, Default)]
pub struct Memory {
    pages: FxHashMap<u64, Box<[u8; PAGE as usize]>>,
}

impl Memory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn valid(addr: u64, len: u64) -> bool {
        addr >= DATA_BASE && len <= MEM_LIMIT && addr <= MEM_LIMIT - len
    }

    pub fn byte(&self, addr: u64) -> u8 {
        self.pages
            .get(&(addr / PAGE))
            .map_or(0, |p| p[(addr % PAGE) as usize])
    }

    pub fn set_byte(&mut self, addr: u64, v: u8) {
        self.pages
            .entry(addr / PAGE)
            .or_insert_with(|| Box::new([0; PAGE as usize]))[(addr % PAGE) as usize] = v;
    }

    /// Little-endian read of up to 8 bytes. Fails outside the valid range.
    pub fn read(&self, addr: u64, size: u32) -> Option<u64> {
        if !Self::valid(addr, size as u64) {
            return None;
        }
        Some((0..size as u64).fold(0, |acc, i| acc | (self.byte(addr + i) as u64) << (8 * i)))
    }

    pub fn write(&mut self, addr: u64, size: u32, v: u64) -> bool {
        if !Self::valid(addr, size as u64) {
            return false;
        }
        for i in 0..size as u64 {
            self.set_byte(addr + i, (v >> (8 * i)) as u8);
        }
        true
    }

    pub fn read_bytes(&self, addr: u64, len: u64) -> Option<Vec<u8>> {
        Self::valid(addr, len).then(|| (0..len).map(|i| self.byte(addr + i)).collect())
    }

    pub fn write_bytes(&mut self, addr: u64, bytes: &[u8]) -> bool {
        if !Self::valid(addr, bytes.len() as u64) {
            return false;
        }
        for (i, &b) in bytes.iter().enumerate() {
            self.set_byte(addr + i as u64, b);
        }
        true
    }
}

fn msb(v: u64, w: Width) -> bool {
    (v >> (w.bits() - 1)) & 1 != 0
}

/// Result and flags of a flag-setting operation, as the VM computes them.
/// `old` is returned unchanged by operations that do not touch flags
/// (`not`, shifts by zero).
pub fn alu(op: Opcode, w: Width, a: u64, b: u64, old: Flags) -> (u64, Flags) {
    let m = w.mask();
    let (a, b) = (a & m, b & m);
    let zs = |r: u64, cf: bool, of: bool| Flags {
        zf: r == 0,
        sf: msb(r, w),
        cf,
        of,
    };
    match op {
        Opcode::Add => {
            let r = a.wrapping_add(b) & m;
            (r, zs(r, r < a, msb((a ^ r) & (b ^ r), w)))
        }
        Opcode::Sub | Opcode::Cmp => {
            let r = a.wrapping_sub(b) & m;
            (r, zs(r, a < b, msb((a ^ b) & (a ^ r), w)))
        }
        Opcode::Neg => {
            let r = a.wrapping_neg() & m;
            (r, zs(r, a != 0, msb(a & r, w)))
        }
        Opcode::Mul => {
            let r = a.wrapping_mul(b) & m;
            (r, zs(r, false, false))
        }
        Opcode::And | Opcode::Test => {
            let r = a & b;
            (r, zs(r, false, false))
        }
        Opcode::Or => {
            let r = a | b;
            (r, zs(r, false, false))
        }
        Opcode::Xor => {
            let r = a ^ b;
            (r, zs(r, false, false))
        }
        Opcode::Not => (!a & m, old),
        Opcode::Shl | Opcode::Shr | Opcode::Sar => {
            let wb = w.bits() as u64;
            let c = b & if w == Width::B64 { 63 } else { 31 };
            if c == 0 {
                return (a, old);
            }
            match op {
                Opcode::Shl => {
                    let r = if c >= wb { 0 } else { (a << c) & m };
                    let cf = c <= wb && (a >> (wb - c)) & 1 != 0;
                    (r, zs(r, cf, msb(r, w) != cf))
                }
                Opcode::Shr => {
                    let r = if c >= wb { 0 } else { a >> c };
                    let cf = c <= wb && (a >> (c - 1)) & 1 != 0;
                    (r, zs(r, cf, msb(a, w)))
                }
                _ => {
                    let s = crate::ast::sign_extend(a, w.bits());
                    let r = (s >> c.min(63)) as u64 & m;
                    let cf = (s >> (c - 1).min(63)) & 1 != 0;
                    (r, zs(r, cf, false))
                }
            }
        }
        _ => panic!("alu: {op:?} is not an ALU operation"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThreadState {
    Runnable,
    /// Waiting for the given thread to finish.
    Blocked(u32),
    Finished,
}

#[derive(Clone, Debug)]
pub struct Thread {
    pub regs: [u64; NUM_REGS],
    pub flags: Flags,
    pub pc: u64,
    pub state: ThreadState,
}

/// Round-robin choice of the next thread after `current`, which is itself
/// considered last. A blocked thread is runnable once its target finished.
pub fn schedule_next(states: &[ThreadState], current: u32) -> Option<u32> {
    let n = states.len() as u32;
    (1..=n).map(|k| (current + k) % n).find(|&t| match states[t as usize] {
        ThreadState::Runnable => true,
        ThreadState::Blocked(on) => states.get(on as usize) == Some(&ThreadState::Finished),
        ThreadState::Finished => false,
    })
}

enum Sched {
    Continue,
    Yield,
    Block(u32),
    ThreadExit,
    ProcessExit(i32),
}

struct Effect {
    next_pc: u64,
    sched: Sched,
    io: Option<Event>,
}

/// Concrete interpreter state for one run.
pub struct Machine<'p> {
    program: &'p Program,
    config: RunConfig,
    pub mem: Memory,
    pub threads: Vec<Thread>,
    current: usize,
    quantum_left: u32,
    file: Vec<u8>,
    fds: FxHashMap<u64, u64>,
    next_fd: u64,
    stdout: Vec<u8>,
    gate_open: bool,
    trace: BranchTrace,
    executed: u64,
    executed_after_input: u64,
    per_thread: Vec<u64>,
    switches: u64,
}

impl<'p> Machine<'p> {
    pub fn new(program: &'p Program, input: &[u8], config: RunConfig) -> Self {
        let mut mem = Memory::new();
        for (i, &b) in program.data.iter().enumerate() {
            if b != 0 {
                mem.set_byte(program.data_base + i as u64, b);
            }
        }
        Machine {
            program,
            config,
            mem,
            threads: vec![Thread {
                regs: [0; NUM_REGS],
                flags: Flags::default(),
                pc: program.entry,
                state: ThreadState::Runnable,
            }],
            current: 0,
            quantum_left: config.quantum.max(1),
            file: input.to_vec(),
            fds: FxHashMap::default(),
            next_fd: 3,
            stdout: Vec::new(),
            gate_open: false,
            trace: BranchTrace::default(),
            executed: 0,
            executed_after_input: 0,
            per_thread: vec![0],
            switches: 0,
        }
    }

    fn reg(&self, r: Reg) -> u64 {
        self.threads[self.current].regs[r.index()]
    }

    fn set_reg(&mut self, v: RegView, x: u64) {
        let slot = &mut self.threads[self.current].regs[v.reg.index()];
        *slot = match v.width {
            Width::B64 => x,
            Width::B32 => x & 0xffff_ffff,
            Width::B16 => (*slot & !0xffff) | (x & 0xffff),
            Width::B8 => (*slot & !0xff) | (x & 0xff),
        };
    }

    fn effective_address(&self, m: &MemOperand) -> u64 {
        let mut a = m.disp as u64;
        if let Some(b) = m.base {
            a = a.wrapping_add(self.reg(b));
        }
        if let Some(i) = m.index {
            a = a.wrapping_add(self.reg(i).wrapping_mul(m.scale as u64));
        }
        a
    }

    fn load(&self, pc: u64, addr: u64, size: u32) -> Result<u64, Trap> {
        self.mem.read(addr, size).ok_or(Trap::InvalidMemory { pc, addr })
    }

    /// Value of a source operand at width `w`.
    fn value(&self, pc: u64, op: &Operand, w: Width) -> Result<u64, Trap> {
        Ok(match op {
            Operand::Reg(v) => self.reg(v.reg) & v.width.mask(),
            Operand::Imm(x) | Operand::Code(x) => *x & w.mask(),
            Operand::Mem(m) => self.load(pc, self.effective_address(m), w.bytes())?,
        })
    }

    fn record(&self, op: &Operand, access: Access, size: u32, pc: u64) -> Result<OperandValue, Trap> {
        Ok(match op {
            Operand::Reg(v) => OperandValue {
                loc: Location::Reg(*v),
                access,
                value: self.reg(v.reg),
            },
            Operand::Imm(x) | Operand::Code(x) => OperandValue {
                loc: Location::Imm,
                access,
                value: *x,
            },
            Operand::Mem(m) => {
                let addr = self.effective_address(m);
                self.mem_record(m, addr, size, access, pc)?
            }
        })
    }

    fn mem_record(&self, m: &MemOperand, addr: u64, size: u32, access: Access, pc: u64) -> Result<OperandValue, Trap> {
        let value = if size == 0 {
            0
        } else if size <= 8 {
            self.load(pc, addr, size)?
        } else {
            if !Memory::valid(addr, size as u64) {
                return Err(Trap::InvalidMemory { pc, addr });
            }
            0
        };
        Ok(OperandValue {
            loc: Location::Mem {
                addr,
                size,
                base: m.base.map(|r| RegValue {
                    reg: r,
                    value: self.reg(r),
                }),
                index: m.index.map(|r| RegValue {
                    reg: r,
                    value: self.reg(r),
                }),
                scale: m.scale,
                disp: m.disp,
            },
            access,
            value,
        })
    }

    fn flag_records(&self, flags: &[Flag], access: Access) -> Vec<OperandValue> {
        let f = self.threads[self.current].flags;
        flags
            .iter()
            .map(|&fl| OperandValue {
                loc: Location::Flag(fl),
                access,
                value: f.get(fl) as u64,
            })
            .collect()
    }

    /// Syscall buffers are reported as plain absolute addresses.
    fn raw_buffer(buf: u64) -> MemOperand {
        MemOperand {
            base: None,
            index: None,
            scale: 1,
            disp: buf as i64,
        }
    }

    /// Snapshot of every operand before `insn` executes.
    fn snapshot(&self, insn: &Insn) -> Result<ExecutedInsn, Trap> {
        use Opcode::*;
        let pc = insn.address;
        let ops = &insn.operands;
        let wb = insn.width.bytes();
        let mut explicit = Vec::with_capacity(3);
        let mut implicit = Vec::new();
        match insn.opcode {
            Mov => {
                explicit.push(self.record(&ops[0], Access::Write, wb, pc)?);
                explicit.push(self.record(&ops[1], Access::Read, wb, pc)?);
            }
            Load => {
                explicit.push(self.record(&ops[0], Access::Write, wb, pc)?);
                explicit.push(self.record(&ops[1], Access::Read, wb, pc)?);
            }
            Store => {
                explicit.push(self.record(&ops[0], Access::Write, wb, pc)?);
                explicit.push(self.record(&ops[1], Access::Read, wb, pc)?);
            }
            Addr => {
                explicit.push(self.record(&ops[0], Access::Write, 8, pc)?);
                explicit.push(self.record(&ops[1], Access::Read, 0, pc)?);
            }
            Add | Sub | Mul | And | Or | Xor => {
                explicit.push(self.record(&ops[0], Access::ReadWrite, wb, pc)?);
                explicit.push(self.record(&ops[1], Access::Read, wb, pc)?);
                implicit = self.flag_records(&Flag::ALL, Access::Write);
            }
            Shl | Shr | Sar => {
                explicit.push(self.record(&ops[0], Access::ReadWrite, wb, pc)?);
                explicit.push(self.record(&ops[1], Access::Read, wb, pc)?);
                implicit = self.flag_records(&Flag::ALL, Access::ReadWrite);
            }
            Cmp | Test => {
                explicit.push(self.record(&ops[0], Access::Read, wb, pc)?);
                explicit.push(self.record(&ops[1], Access::Read, wb, pc)?);
                implicit = self.flag_records(&Flag::ALL, Access::Write);
            }
            Not => explicit.push(self.record(&ops[0], Access::ReadWrite, wb, pc)?),
            Neg => {
                explicit.push(self.record(&ops[0], Access::ReadWrite, wb, pc)?);
                implicit = self.flag_records(&Flag::ALL, Access::Write);
            }
            Jcc(c) => {
                explicit.push(self.record(&ops[0], Access::Read, 8, pc)?);
                implicit = self.flag_records(c.flags_read(), Access::Read);
            }
            Jmp => explicit.push(self.record(&ops[0], Access::Read, 8, pc)?),
            Spawn => {
                explicit.push(self.record(&ops[0], Access::Write, 8, pc)?);
                explicit.push(self.record(&ops[1], Access::Read, 8, pc)?);
                explicit.push(self.record(&ops[2], Access::Read, 8, pc)?);
            }
            Join | Exit => {
                for op in ops {
                    explicit.push(self.record(op, Access::Read, 8, pc)?);
                }
            }
            Yield => {}
            Open => explicit.push(self.record(&ops[0], Access::Write, 8, pc)?),
            Read | Write => {
                for op in ops {
                    explicit.push(self.record(op, Access::Read, 8, pc)?);
                }
                implicit.push(OperandValue {
                    loc: Location::Reg(Reg(0).full()),
                    access: Access::Write,
                    value: self.reg(Reg(0)),
                });
                let fd = self.value(pc, &ops[0], Width::B64)?;
                let buf = self.value(pc, &ops[1], Width::B64)?;
                let len = self.value(pc, &ops[2], Width::B64)?;
                let len = if insn.opcode == Read {
                    let off = self.fds.get(&fd).copied().unwrap_or(0);
                    len.min((self.file.len() as u64).saturating_sub(off))
                } else {
                    len
                };
                let m = Self::raw_buffer(buf);
                let size = u32::try_from(len).map_err(|_| Trap::InvalidMemory { pc, addr: buf })?;
                let access = if insn.opcode == Read { Access::Write } else { Access::Read };
                implicit.push(self.mem_record(&m, buf, size, access, pc)?);
            }
        }
        Ok(ExecutedInsn {
            address: pc,
            opcode: insn.opcode,
            width: insn.width,
            explicit,
            implicit,
        })
    }

    fn check_target(&self, pc: u64, target: u64) -> Result<u64, Trap> {
        if self.program.is_code_addr(target) {
            Ok(target)
        } else {
            Err(Trap::BadJump { pc, target })
        }
    }

    fn bad_syscall(pc: u64, detail: impl Into<String>) -> Trap {
        Trap::BadSyscall {
            pc,
            detail: detail.into(),
        }
    }

    fn execute(&mut self, insn: &Insn) -> Result<Effect, Trap> {
        use Opcode::*;
        let pc = insn.address;
        let w = insn.width;
        let ops = &insn.operands;
        let mut eff = Effect {
            next_pc: pc + INSN_SIZE,
            sched: Sched::Continue,
            io: None,
        };
        let t = self.current;
        match insn.opcode {
            Mov | Load => {
                let v = self.value(pc, &ops[1], w)?;
                let Operand::Reg(d) = ops[0] else { unreachable!() };
                self.set_reg(d, v);
            }
            Store => {
                let v = self.value(pc, &ops[1], w)?;
                let Operand::Mem(m) = ops[0] else { unreachable!() };
                let addr = self.effective_address(&m);
                if !self.mem.write(addr, w.bytes(), v) {
                    return Err(Trap::InvalidMemory { pc, addr });
                }
            }
            Addr => {
                let Operand::Mem(m) = ops[1] else { unreachable!() };
                let Operand::Reg(d) = ops[0] else { unreachable!() };
                let a = self.effective_address(&m);
                self.set_reg(d, a);
            }
            Add | Sub | Mul | And | Or | Xor | Shl | Shr | Sar | Not | Neg | Cmp | Test => {
                let a = self.value(pc, &ops[0], w)?;
                let b = match ops.get(1) {
                    Some(op) => self.value(pc, op, w)?,
                    None => 0,
                };
                let (r, flags) = alu(insn.opcode, w, a, b, self.threads[t].flags);
                self.threads[t].flags = flags;
                if !matches!(insn.opcode, Cmp | Test) {
                    let Operand::Reg(d) = ops[0] else { unreachable!() };
                    self.set_reg(d, r);
                }
            }
            Jcc(c) => {
                let taken = c.holds(&self.threads[t].flags);
                let Operand::Code(target) = ops[0] else { unreachable!() };
                if taken {
                    eff.next_pc = self.check_target(pc, target)?;
                }
                self.trace.entries.push(BranchRecord {
                    site: pc,
                    tid: t as u32,
                    kind: BranchKind::Conditional { taken },
                });
            }
            Jmp => {
                let target = match ops[0] {
                    Operand::Code(a) => a,
                    ref op => {
                        let a = self.value(pc, op, Width::B64)?;
                        self.trace.entries.push(BranchRecord {
                            site: pc,
                            tid: t as u32,
                            kind: BranchKind::Indirect { target: a },
                        });
                        a
                    }
                };
                eff.next_pc = self.check_target(pc, target)?;
            }
            Spawn => {
                let Operand::Code(target) = ops[1] else { unreachable!() };
                let arg = self.value(pc, &ops[2], Width::B64)?;
                let tid = self.threads.len() as u64;
                let mut regs = [0; NUM_REGS];
                regs[0] = arg;
                self.threads.push(Thread {
                    regs,
                    flags: Flags::default(),
                    pc: target,
                    state: ThreadState::Runnable,
                });
                self.per_thread.push(0);
                let Operand::Reg(d) = ops[0] else { unreachable!() };
                self.set_reg(d, tid);
            }
            Join => {
                let tid = self.value(pc, &ops[0], Width::B64)?;
                if tid >= self.threads.len() as u64 {
                    return Err(Self::bad_syscall(pc, format!("join on unknown thread {tid}")));
                }
                if tid == t as u64 {
                    return Err(Trap::Deadlock);
                }
                if self.threads[tid as usize].state != ThreadState::Finished {
                    eff.sched = Sched::Block(tid as u32);
                }
            }
            Yield => eff.sched = Sched::Yield,
            Open => {
                let fd = self.next_fd;
                self.next_fd += 1;
                self.fds.insert(fd, 0);
                let Operand::Reg(d) = ops[0] else { unreachable!() };
                self.set_reg(d, fd);
            }
            Read => {
                let fd = self.value(pc, &ops[0], Width::B64)?;
                let buf = self.value(pc, &ops[1], Width::B64)?;
                let len = self.value(pc, &ops[2], Width::B64)?;
                let off = *self
                    .fds
                    .get(&fd)
                    .ok_or_else(|| Self::bad_syscall(pc, format!("read from fd {fd}")))?;
                let start = (off as usize).min(self.file.len());
                let n = (len.min((self.file.len() - start) as u64)) as usize;
                if !self.mem.write_bytes(buf, &self.file[start..start + n]) {
                    return Err(Trap::InvalidMemory { pc, addr: buf });
                }
                self.fds.insert(fd, off + n as u64);
                self.set_reg(Reg(0).full(), n as u64);
                if n > 0 {
                    eff.io = Some(Event::ReadSymbolicInput {
                        address: buf,
                        length: n as u64,
                        offset: off,
                    });
                }
            }
            Write => {
                let fd = self.value(pc, &ops[0], Width::B64)?;
                let buf = self.value(pc, &ops[1], Width::B64)?;
                let len = self.value(pc, &ops[2], Width::B64)?;
                let bytes = self
                    .mem
                    .read_bytes(buf, len)
                    .ok_or(Trap::InvalidMemory { pc, addr: buf })?;
                if fd == 1 || fd == 2 {
                    self.stdout.extend_from_slice(&bytes);
                } else if let Some(&off) = self.fds.get(&fd) {
                    let end = off as usize + bytes.len();
                    if self.file.len() < end {
                        self.file.resize(end, 0);
                    }
                    self.file[off as usize..end].copy_from_slice(&bytes);
                    self.fds.insert(fd, end as u64);
                    if len > 0 {
                        eff.io = Some(Event::WriteSymbolicInput {
                            address: buf,
                            length: len,
                            offset: off,
                        });
                    }
                } else {
                    return Err(Self::bad_syscall(pc, format!("write to fd {fd}")));
                }
                self.set_reg(Reg(0).full(), len);
            }
            Exit => {
                let code = match ops.first() {
                    Some(op) => self.value(pc, op, Width::B64)?,
                    None => 0,
                };
                eff.sched = if t == 0 {
                    Sched::ProcessExit((code & 0xff) as i32)
                } else {
                    Sched::ThreadExit
                };
            }
        }
        Ok(eff)
    }

    fn reschedule(&mut self, sink: &mut dyn EventSink) -> Result<bool, Trap> {
        let states: Vec<ThreadState> = self.threads.iter().map(|t| t.state).collect();
        let next = schedule_next(&states, self.current as u32).ok_or(Trap::Deadlock)? as usize;
        self.quantum_left = self.config.quantum.max(1);
        self.threads[next].state = ThreadState::Runnable;
        if next != self.current {
            let from = self.current as u32;
            self.current = next;
            self.switches += 1;
            return Ok(sink.emit(Event::ThreadSwitch { from, to: next as u32 }));
        }
        Ok(true)
    }

    /// Runs one instruction. `Ok(Some(code))` when the process exited.
    fn step(&mut self, sink: &mut dyn EventSink) -> Result<Option<i32>, Trap> {
        if self.executed >= self.config.instruction_budget {
            return Err(Trap::Budget);
        }
        let t = self.current;
        let pc = self.threads[t].pc;
        let program = self.program;
        let insn = program.insn_at(pc).ok_or(Trap::BadJump { pc, target: pc })?;
        let snap = if self.gate_open && sink.wants_events() {
            Some(self.snapshot(insn)?)
        } else {
            None
        };
        let eff = self.execute(insn)?;
        self.executed += 1;
        self.per_thread[t] += 1;
        self.threads[t].pc = eff.next_pc;
        let mut alive = true;
        if self.gate_open {
            self.executed_after_input += 1;
        }
        if let Some(s) = snap {
            alive &= sink.emit(Event::Instruction(s));
        }
        if let Some(io) = eff.io {
            if !self.gate_open && matches!(io, Event::ReadSymbolicInput { .. }) {
                self.gate_open = true;
                self.trace.first_input_read = Some(self.trace.entries.len());
            }
            if self.gate_open {
                alive &= sink.emit(io);
            }
        }
        if !alive {
            // the consumer went away; nothing left to report to
            return Ok(Some(0));
        }
        match eff.sched {
            Sched::Continue => {
                self.quantum_left -= 1;
                if self.quantum_left == 0 {
                    self.reschedule(sink)?;
                }
            }
            Sched::Yield => {
                self.reschedule(sink)?;
            }
            Sched::Block(on) => {
                self.threads[t].state = ThreadState::Blocked(on);
                self.reschedule(sink)?;
            }
            Sched::ThreadExit => {
                self.threads[t].state = ThreadState::Finished;
                self.reschedule(sink)?;
            }
            Sched::ProcessExit(code) => return Ok(Some(code)),
        }
        Ok(None)
    }

    /// Runs to completion, reporting events to `sink`.
    pub fn run(mut self, sink: &mut dyn EventSink) -> RunOutcome {
        let status = loop {
            match self.step(sink) {
                Ok(None) => {}
                Ok(Some(code)) => break ExitStatus::Exited(code),
                Err(trap) => break ExitStatus::Trapped(trap),
            }
        };
        sink.emit(Event::Exit { code: status.code() });
        RunOutcome {
            status,
            trace: self.trace,
            stdout: self.stdout,
            file: self.file,
            executed: self.executed,
            executed_after_input: self.executed_after_input,
            per_thread: self.per_thread,
            thread_switches: self.switches,
        }
    }
}

/// Runs `program` on `input` to completion.
pub fn run_concrete(program: &Program, input: &[u8], config: &RunConfig, sink: &mut dyn EventSink) -> RunOutcome {
    Machine::new(program, input, *config).run(sink)
}

/// Runs the VM on its own thread, streaming events over a bounded channel.
pub fn spawn_concrete(
    program: Arc<Program>,
    input: Vec<u8>,
    config: RunConfig,
) -> (Receiver<Event>, JoinHandle<RunOutcome>) {
    let (tx, rx) = sync_channel(CHANNEL_CAPACITY);
    let handle = std::thread::Builder::new()
        .name("mvm".into())
        .spawn(move || {
            let mut sink = ChannelSink(tx);
            run_concrete(&program, &input, &config, &mut sink)
        })
        .expect("spawn VM thread");
    (rx, handle)
}
