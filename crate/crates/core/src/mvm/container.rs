//! Binary program container.
//!
//! ```text
//! "MDSE" | version u16 | section count u16 | sections...
//! section: kind u8 | length u32 | payload
//!   1 code:   count u32, then per instruction opcode u8, width u8,
//!             operand count u8, operands
//!   2 data:   base u64, bytes
//!   3 labels: count u32, then (name length u16, name, address u64)
//!   4 entry:  address u64
//! operand: 0 reg (reg u8, width u8) | 1 imm (u64) | 2 mem (present u8,
//!          base u8, index u8, scale u8, disp i64) | 3 code (u64)
//! ```
//! Integers are little endian. Instruction addresses are implied by
//! position.

use std::collections::BTreeMap;

use thiserror::Error;

use super::isa::*;

pub const MAGIC: &[u8; 4] = b"MDSE";
pub const VERSION: u16 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContainerError {
    #[error("not a program container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    Version(u16),
    #[error("truncated container")]
    Truncated,
    #[error("malformed container: {0}")]
    Malformed(String),
}

fn put_u64(b: &mut Vec<u8>, v: u64) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn section(out: &mut Vec<u8>, kind: u8, payload: &[u8]) {
    out.push(kind);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
}

pub fn encode_program(p: &Program) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());

    let mut code = Vec::new();
    code.extend_from_slice(&(p.code.len() as u32).to_le_bytes());
    for insn in &p.code {
        code.push(insn.opcode.code());
        code.push(insn.width.bits() as u8);
        code.push(insn.operands.len() as u8);
        for op in &insn.operands {
            match *op {
                Operand::Reg(v) => {
                    code.extend_from_slice(&[0, v.reg.0, v.width.bits() as u8]);
                }
                Operand::Imm(v) => {
                    code.push(1);
                    put_u64(&mut code, v);
                }
                Operand::Mem(m) => {
                    code.push(2);
                    code.push(m.base.is_some() as u8 | (m.index.is_some() as u8) << 1);
                    code.push(m.base.map_or(0, |r| r.0));
                    code.push(m.index.map_or(0, |r| r.0));
                    code.push(m.scale);
                    put_u64(&mut code, m.disp as u64);
                }
                Operand::Code(a) => {
                    code.push(3);
                    put_u64(&mut code, a);
                }
            }
        }
    }
    section(&mut out, 1, &code);

    let mut data = Vec::with_capacity(8 + p.data.len());
    put_u64(&mut data, p.data_base);
    data.extend_from_slice(&p.data);
    section(&mut out, 2, &data);

    let mut labels = Vec::new();
    labels.extend_from_slice(&(p.labels.len() as u32).to_le_bytes());
    for (name, &addr) in &p.labels {
        labels.extend_from_slice(&(name.len() as u16).to_le_bytes());
        labels.extend_from_slice(name.as_bytes());
        put_u64(&mut labels, addr);
    }
    section(&mut out, 3, &labels);

    section(&mut out, 4, &p.entry.to_le_bytes());
    out
}

struct Rd<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Rd<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        if self.pos + n > self.b.len() {
            return Err(ContainerError::Truncated);
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn done(&self) -> bool {
        self.pos == self.b.len()
    }
}

fn bad(msg: impl Into<String>) -> ContainerError {
    ContainerError::Malformed(msg.into())
}

fn reg(r: u8) -> Result<Reg, ContainerError> {
    if (r as usize) < NUM_REGS {
        Ok(Reg(r))
    } else {
        Err(bad(format!("register {r}")))
    }
}

fn decode_code(b: &[u8]) -> Result<Vec<Insn>, ContainerError> {
    let mut r = Rd { b, pos: 0 };
    let n = r.u32()? as usize;
    let mut code = Vec::with_capacity(n.min(1 << 16));
    for k in 0..n {
        let oc = r.u8()?;
        let opcode = Opcode::from_code(oc).ok_or_else(|| bad(format!("opcode {oc}")))?;
        let wb = r.u8()?;
        let width = Width::from_bits(wb as u32).ok_or_else(|| bad(format!("width {wb}")))?;
        let nops = r.u8()?;
        let mut operands = Vec::with_capacity(nops as usize);
        for _ in 0..nops {
            operands.push(match r.u8()? {
                0 => {
                    let rr = reg(r.u8()?)?;
                    let wb = r.u8()?;
                    Operand::Reg(RegView {
                        reg: rr,
                        width: Width::from_bits(wb as u32).ok_or_else(|| bad(format!("width {wb}")))?,
                    })
                }
                1 => Operand::Imm(r.u64()?),
                2 => {
                    let present = r.u8()?;
                    let base = reg(r.u8()?)?;
                    let index = reg(r.u8()?)?;
                    let scale = r.u8()?;
                    let disp = r.u64()? as i64;
                    Operand::Mem(MemOperand {
                        base: (present & 1 != 0).then_some(base),
                        index: (present & 2 != 0).then_some(index),
                        scale,
                        disp,
                    })
                }
                3 => Operand::Code(r.u64()?),
                t => return Err(bad(format!("operand tag {t}"))),
            });
        }
        code.push(Insn {
            address: CODE_BASE + INSN_SIZE * k as u64,
            opcode,
            width,
            operands,
        });
    }
    if !r.done() {
        return Err(bad("trailing bytes in code section"));
    }
    Ok(code)
}

pub fn decode_program(bytes: &[u8]) -> Result<Program, ContainerError> {
    let mut r = Rd { b: bytes, pos: 0 };
    if r.take(4).map_err(|_| ContainerError::BadMagic)? != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(ContainerError::Version(version));
    }
    let count = r.u16()?;
    let mut code = None;
    let mut data = None;
    let mut labels = BTreeMap::new();
    let mut entry = None;
    for _ in 0..count {
        let kind = r.u8()?;
        let len = r.u32()? as usize;
        let payload = r.take(len)?;
        match kind {
            1 => code = Some(decode_code(payload)?),
            2 => {
                if payload.len() < 8 {
                    return Err(ContainerError::Truncated);
                }
                let base = u64::from_le_bytes(payload[..8].try_into().unwrap());
                data = Some((base, payload[8..].to_vec()));
            }
            3 => {
                let mut lr = Rd { b: payload, pos: 0 };
                let n = lr.u32()?;
                for _ in 0..n {
                    let l = lr.u16()? as usize;
                    let name = std::str::from_utf8(lr.take(l)?).map_err(|_| bad("label is not UTF-8"))?;
                    let addr = lr.u64()?;
                    labels.insert(name.to_string(), addr);
                }
            }
            4 => {
                entry = Some(u64::from_le_bytes(
                    payload.try_into().map_err(|_| bad("entry section size"))?,
                ))
            }
            // unknown sections are skipped
            _ => {}
        }
    }
    if !r.done() {
        return Err(bad("trailing bytes"));
    }
    let code = code.ok_or_else(|| bad("missing code section"))?;
    let (data_base, data) = data.unwrap_or((DATA_BASE, Vec::new()));
    Ok(Program {
        code,
        data_base,
        data,
        entry: entry.unwrap_or(CODE_BASE),
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mvm::assemble;

    #[test]
    fn round_trip() {
        let p = assemble(
            ".data\nt: .quad a, b\ns: .ascii \"xyz\"\n.text\nmain: load r1, [r2 + r3*8 + t]\n jmp [t + 8]\na: mov.b r1b, -1\nb: exit r1\n",
        )
        .unwrap();
        let bytes = encode_program(&p);
        assert_eq!(&bytes[..4], b"MDSE");
        assert_eq!(decode_program(&bytes).unwrap(), p);
    }

    #[test]
    fn rejects_garbage() {
        assert_eq!(decode_program(b"ELF\x7f"), Err(ContainerError::BadMagic));
        assert_eq!(decode_program(b"MD"), Err(ContainerError::BadMagic));
        let p = assemble("main: exit").unwrap();
        let mut bytes = encode_program(&p);
        bytes[4] = 9;
        assert_eq!(decode_program(&bytes), Err(ContainerError::Version(9)));
        let bytes = encode_program(&p);
        assert_eq!(decode_program(&bytes[..bytes.len() - 3]), Err(ContainerError::Truncated));
    }
}
