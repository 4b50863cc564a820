use std::collections::BTreeMap;
use std::fmt;

/// Address of the first instruction.
pub const CODE_BASE: u64 = 0x400;
/// Every instruction occupies one fixed-size slot.
pub const INSN_SIZE: u64 = 4;
/// Start of the data image; everything below is not addressable as data.
pub const DATA_BASE: u64 = 0x10000;
/// First address past the addressable data space.
pub const MEM_LIMIT: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Width {
    B8,
    B16,
    B32,
    B64,
}

impl Width {
    pub fn bits(self) -> u32 {
        match self {
            Width::B8 => 8,
            Width::B16 => 16,
            Width::B32 => 32,
            Width::B64 => 64,
        }
    }

    pub fn bytes(self) -> u32 {
        self.bits() / 8
    }

    pub fn mask(self) -> u64 {
        crate::ast::mask(self.bits())
    }

    pub fn from_bits(bits: u32) -> Option<Width> {
        Some(match bits {
            8 => Width::B8,
            16 => Width::B16,
            32 => Width::B32,
            64 => Width::B64,
            _ => return None,
        })
    }

    pub fn suffix(self) -> char {
        match self {
            Width::B8 => 'b',
            Width::B16 => 'w',
            Width::B32 => 'd',
            Width::B64 => 'q',
        }
    }
}

pub const NUM_REGS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(pub u8);

impl Reg {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn full(self) -> RegView {
        RegView {
            reg: self,
            width: Width::B64,
        }
    }
}

/// A register accessed at some width: `r0` (64), `r0d` (32), `r0w` (16), `r0b` (8).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RegView {
    pub reg: Reg,
    pub width: Width,
}

impl fmt::Display for RegView {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.width {
            Width::B64 => write!(f, "r{}", self.reg.0),
            w => write!(f, "r{}{}", self.reg.0, w.suffix()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Flag {
    Zf,
    Sf,
    Cf,
    Of,
}

impl Flag {
    pub const ALL: [Flag; 4] = [Flag::Zf, Flag::Sf, Flag::Cf, Flag::Of];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Flags {
    pub zf: bool,
    pub sf: bool,
    pub cf: bool,
    pub of: bool,
}

impl Flags {
    pub fn get(&self, f: Flag) -> bool {
        match f {
            Flag::Zf => self.zf,
            Flag::Sf => self.sf,
            Flag::Cf => self.cf,
            Flag::Of => self.of,
        }
    }

    pub fn set(&mut self, f: Flag, v: bool) {
        match f {
            Flag::Zf => self.zf = v,
            Flag::Sf => self.sf = v,
            Flag::Cf => self.cf = v,
            Flag::Of => self.of = v,
        }
    }
}

/// Condition of a conditional jump, x86 style.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cond {
    Z,
    Nz,
    L,
    Le,
    G,
    Ge,
    B,
    Be,
    A,
    Ae,
}

impl Cond {
    pub fn holds(self, f: &Flags) -> bool {
        match self {
            Cond::Z => f.zf,
            Cond::Nz => !f.zf,
            Cond::L => f.sf != f.of,
            Cond::Le => f.zf || f.sf != f.of,
            Cond::G => !f.zf && f.sf == f.of,
            Cond::Ge => f.sf == f.of,
            Cond::B => f.cf,
            Cond::Be => f.cf || f.zf,
            Cond::A => !f.cf && !f.zf,
            Cond::Ae => !f.cf,
        }
    }

    pub fn flags_read(self) -> &'static [Flag] {
        match self {
            Cond::Z | Cond::Nz => &[Flag::Zf],
            Cond::L | Cond::Ge => &[Flag::Sf, Flag::Of],
            Cond::Le | Cond::G => &[Flag::Zf, Flag::Sf, Flag::Of],
            Cond::B | Cond::Ae => &[Flag::Cf],
            Cond::Be | Cond::A => &[Flag::Cf, Flag::Zf],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Opcode {
    Mov,
    Load,
    Store,
    Addr,
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Not,
    Neg,
    Shl,
    Shr,
    Sar,
    Cmp,
    Test,
    Jcc(Cond),
    Jmp,
    Spawn,
    Join,
    Yield,
    Open,
    Read,
    Write,
    Exit,
}

const MNEMONICS: &[(&str, Opcode)] = &[
    ("mov", Opcode::Mov),
    ("load", Opcode::Load),
    ("store", Opcode::Store),
    ("addr", Opcode::Addr),
    ("add", Opcode::Add),
    ("sub", Opcode::Sub),
    ("mul", Opcode::Mul),
    ("and", Opcode::And),
    ("or", Opcode::Or),
    ("xor", Opcode::Xor),
    ("not", Opcode::Not),
    ("neg", Opcode::Neg),
    ("shl", Opcode::Shl),
    ("shr", Opcode::Shr),
    ("sar", Opcode::Sar),
    ("cmp", Opcode::Cmp),
    ("test", Opcode::Test),
    ("jz", Opcode::Jcc(Cond::Z)),
    ("jnz", Opcode::Jcc(Cond::Nz)),
    ("jl", Opcode::Jcc(Cond::L)),
    ("jle", Opcode::Jcc(Cond::Le)),
    ("jg", Opcode::Jcc(Cond::G)),
    ("jge", Opcode::Jcc(Cond::Ge)),
    ("jb", Opcode::Jcc(Cond::B)),
    ("jbe", Opcode::Jcc(Cond::Be)),
    ("ja", Opcode::Jcc(Cond::A)),
    ("jae", Opcode::Jcc(Cond::Ae)),
    ("jmp", Opcode::Jmp),
    ("spawn", Opcode::Spawn),
    ("join", Opcode::Join),
    ("yield", Opcode::Yield),
    ("open", Opcode::Open),
    ("read", Opcode::Read),
    ("write", Opcode::Write),
    ("exit", Opcode::Exit),
];

impl Opcode {
    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        MNEMONICS.iter().find(|(m, _)| *m == s).map(|&(_, op)| op)
    }

    pub fn mnemonic(self) -> &'static str {
        MNEMONICS.iter().find(|(_, op)| *op == self).map(|(m, _)| *m).unwrap()
    }

    /// Stable numeric code used by the binary encodings.
    pub fn code(self) -> u8 {
        MNEMONICS.iter().position(|(_, op)| *op == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Option<Opcode> {
        MNEMONICS.get(code as usize).map(|&(_, op)| op)
    }

    /// Mnemonics whose width suffix selects the operand width.
    pub fn is_sized(self) -> bool {
        matches!(
            self,
            Opcode::Mov
                | Opcode::Load
                | Opcode::Store
                | Opcode::Add
                | Opcode::Sub
                | Opcode::Mul
                | Opcode::And
                | Opcode::Or
                | Opcode::Xor
                | Opcode::Not
                | Opcode::Neg
                | Opcode::Shl
                | Opcode::Shr
                | Opcode::Sar
                | Opcode::Cmp
                | Opcode::Test
        )
    }

    pub fn is_control_transfer(self) -> bool {
        matches!(self, Opcode::Jcc(_) | Opcode::Jmp)
    }
}

/// `[base + index*scale + disp]`
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MemOperand {
    pub base: Option<Reg>,
    pub index: Option<Reg>,
    pub scale: u8,
    pub disp: i64,
}

impl fmt::Display for MemOperand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(b) = self.base {
            parts.push(format!("r{}", b.0));
        }
        if let Some(i) = self.index {
            parts.push(if self.scale == 1 {
                format!("r{}", i.0)
            } else {
                format!("r{}*{}", i.0, self.scale)
            });
        }
        let mut s = parts.join(" + ");
        if self.disp != 0 || s.is_empty() {
            if s.is_empty() {
                s = format!("{:#x}", self.disp);
            } else if self.disp < 0 {
                s.push_str(&format!(" - {:#x}", self.disp.unsigned_abs()));
            } else {
                s.push_str(&format!(" + {:#x}", self.disp));
            }
        }
        write!(f, "[{s}]")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(RegView),
    Imm(u64),
    Mem(MemOperand),
    /// Direct code target.
    Code(u64),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::Imm(v) => write!(f, "{v:#x}"),
            Operand::Mem(m) => write!(f, "{m}"),
            Operand::Code(a) => write!(f, "{a:#x}"),
        }
    }
}

/// One decoded program instruction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Insn {
    pub address: u64,
    pub opcode: Opcode,
    pub width: Width,
    pub operands: Vec<Operand>,
}

impl fmt::Display for Insn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.opcode.mnemonic())?;
        if self.opcode.is_sized() && self.width != Width::B64 {
            write!(f, ".{}", self.width.suffix())?;
        }
        for (i, op) in self.operands.iter().enumerate() {
            write!(f, "{}{op}", if i == 0 { " " } else { ", " })?;
        }
        Ok(())
    }
}

/// An assembled program.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub code: Vec<Insn>,
    pub data_base: u64,
    pub data: Vec<u8>,
    pub entry: u64,
    pub labels: BTreeMap<String, u64>,
}

impl Program {
    pub fn code_end(&self) -> u64 {
        CODE_BASE + INSN_SIZE * self.code.len() as u64
    }

    /// True for addresses of instruction slots.
    pub fn is_code_addr(&self, addr: u64) -> bool {
        addr >= CODE_BASE && addr < self.code_end() && (addr - CODE_BASE) % INSN_SIZE == 0
    }

    pub fn insn_at(&self, addr: u64) -> Option<&Insn> {
        if self.is_code_addr(addr) {
            self.code.get(((addr - CODE_BASE) / INSN_SIZE) as usize)
        } else {
            None
        }
    }

    pub fn label(&self, name: &str) -> Option<u64> {
        self.labels.get(name).copied()
    }

    /// Byte of the initial data image; zero outside it.
    pub fn data_byte(&self, addr: u64) -> u8 {
        addr.checked_sub(self.data_base)
            .and_then(|off| self.data.get(off as usize))
            .copied()
            .unwrap_or(0)
    }

    /// Little-endian read from the initial data image.
    pub fn read_data(&self, addr: u64, size: u32) -> u64 {
        (0..size as u64).fold(0u64, |acc, i| {
            acc | (self.data_byte(addr.wrapping_add(i)) as u64) << (8 * i)
        })
    }

    /// Assembly listing with addresses.
    pub fn listing(&self) -> String {
        let mut by_addr: BTreeMap<u64, Vec<&str>> = BTreeMap::new();
        for (name, &addr) in &self.labels {
            by_addr.entry(addr).or_default().push(name);
        }
        let mut out = String::new();
        for insn in &self.code {
            if let Some(names) = by_addr.get(&insn.address) {
                for n in names {
                    out.push_str(&format!("{n}:\n"));
                }
            }
            out.push_str(&format!("  {:#06x}  {insn}\n", insn.address));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Access {
    Read,
    Write,
    ReadWrite,
}

impl Access {
    pub fn reads(self) -> bool {
        matches!(self, Access::Read | Access::ReadWrite)
    }

    pub fn writes(self) -> bool {
        matches!(self, Access::Write | Access::ReadWrite)
    }
}

/// Concrete value of a register used for address computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RegValue {
    pub reg: Reg,
    pub value: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Location {
    /// Value is the full 64-bit parent register.
    Reg(RegView),
    /// Value is 0 or 1.
    Flag(Flag),
    /// Value is the little-endian content (sizes up to 8). Size 0 means the
    /// address is computed but memory is not touched.
    Mem {
        addr: u64,
        size: u32,
        base: Option<RegValue>,
        index: Option<RegValue>,
        scale: u8,
        disp: i64,
    },
    Imm,
}

/// One operand of an executed instruction with its value before execution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OperandValue {
    pub loc: Location,
    pub access: Access,
    pub value: u64,
}

/// An executed instruction as seen by the symbolic side.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecutedInsn {
    pub address: u64,
    pub opcode: Opcode,
    pub width: Width,
    pub explicit: Vec<OperandValue>,
    pub implicit: Vec<OperandValue>,
}

impl ExecutedInsn {
    pub fn operands(&self) -> impl Iterator<Item = &OperandValue> {
        self.explicit.iter().chain(self.implicit.iter())
    }
}
