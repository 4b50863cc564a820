//! Messages from the concrete VM to the symbolic side, and their wire format.
//!
//! A frame is `tag: u8`, `len: u32` (little endian), then `len` payload
//! bytes. All integers are little endian.
//!
//! | tag | event              | payload                                   |
//! |-----|--------------------|-------------------------------------------|
//! | 1   | ReadSymbolicInput  | address u64, length u64, offset u64       |
//! | 2   | WriteSymbolicInput | address u64, length u64, offset u64       |
//! | 3   | Instruction        | see [`encode_insn`]                       |
//! | 4   | ThreadSwitch       | from u32, to u32                          |
//! | 5   | Exit               | code i32                                  |

use std::io::{self, Read, Write};
use std::sync::mpsc::{Receiver, SyncSender};

use thiserror::Error;

use crate::mvm::{Access, ExecutedInsn, Flag, Location, Opcode, OperandValue, Reg, RegValue, RegView, Width};

pub const TAG_READ_INPUT: u8 = 1;
pub const TAG_WRITE_INPUT: u8 = 2;
pub const TAG_INSTRUCTION: u8 = 3;
pub const TAG_THREAD_SWITCH: u8 = 4;
pub const TAG_EXIT: u8 = 5;

/// Bound of the VM to symbolic-side channel.
pub const CHANNEL_CAPACITY: usize = 4096;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    /// `length` input bytes starting at file `offset` were copied to `address`.
    ReadSymbolicInput { address: u64, length: u64, offset: u64 },
    /// `length` bytes at `address` were written into the input file at `offset`.
    WriteSymbolicInput { address: u64, length: u64, offset: u64 },
    Instruction(ExecutedInsn),
    /// The scheduler moved from thread `from` to thread `to`.
    ThreadSwitch { from: u32, to: u32 },
    Exit { code: i32 },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("truncated frame")]
    Truncated,
    #[error("unknown event tag {0}")]
    UnknownTag(u8),
    #[error("bad payload for tag {tag}: {detail}")]
    BadPayload { tag: u8, detail: String },
}

/// Consumer of VM events.
pub trait EventSink {
    /// Returns false when the consumer is gone and the VM may stop early.
    fn emit(&mut self, ev: Event) -> bool;

    /// When false the VM skips building instruction records.
    fn wants_events(&self) -> bool {
        true
    }
}

/// Discards everything.
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&mut self, _ev: Event) -> bool {
        true
    }

    fn wants_events(&self) -> bool {
        false
    }
}

impl EventSink for Vec<Event> {
    fn emit(&mut self, ev: Event) -> bool {
        self.push(ev);
        true
    }
}

/// Forwards events over a bounded channel.
pub struct ChannelSink(pub SyncSender<Event>);

impl EventSink for ChannelSink {
    fn emit(&mut self, ev: Event) -> bool {
        self.0.send(ev).is_ok()
    }
}

/// Writes encoded frames to a byte stream.
pub struct FrameWriter<W: Write> {
    out: W,
    pub error: Option<io::Error>,
}

impl<W: Write> FrameWriter<W> {
    pub fn new(out: W) -> Self {
        FrameWriter { out, error: None }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> EventSink for FrameWriter<W> {
    fn emit(&mut self, ev: Event) -> bool {
        if self.error.is_some() {
            return false;
        }
        match self.out.write_all(&encode(&ev)) {
            Ok(()) => true,
            Err(e) => {
                self.error = Some(e);
                false
            }
        }
    }
}

/// Iterator over events received on a channel.
pub fn drain(rx: &Receiver<Event>) -> impl Iterator<Item = Event> + '_ {
    rx.iter()
}

fn put_u64(b: &mut Vec<u8>, v: u64) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn encode_record(b: &mut Vec<u8>, r: &OperandValue) {
    match r.loc {
        Location::Reg(v) => {
            b.push(0);
            b.push(v.reg.0);
            b.push(v.width.bits() as u8);
        }
        Location::Flag(f) => {
            b.push(1);
            b.push(f.index() as u8);
        }
        Location::Mem {
            addr,
            size,
            base,
            index,
            scale,
            disp,
        } => {
            b.push(2);
            put_u64(b, addr);
            b.extend_from_slice(&size.to_le_bytes());
            b.push(base.is_some() as u8 | (index.is_some() as u8) << 1);
            for rv in [base, index] {
                let rv = rv.unwrap_or(RegValue { reg: Reg(0), value: 0 });
                b.push(rv.reg.0);
                put_u64(b, rv.value);
            }
            b.push(scale);
            put_u64(b, disp as u64);
        }
        Location::Imm => b.push(3),
    }
    b.push(match r.access {
        Access::Read => 0,
        Access::Write => 1,
        Access::ReadWrite => 2,
    });
    put_u64(b, r.value);
}

/// Instruction payload: address u64, opcode u8, width u8 (bits), explicit
/// count u8, implicit count u8, then the operand records. A record is a
/// location tag (0 reg, 1 flag, 2 mem, 3 imm) with its fields, an access byte
/// (0 read, 1 write, 2 read-write) and the value as u64.
pub fn encode_insn(b: &mut Vec<u8>, insn: &ExecutedInsn) {
    put_u64(b, insn.address);
    b.push(insn.opcode.code());
    b.push(insn.width.bits() as u8);
    b.push(insn.explicit.len() as u8);
    b.push(insn.implicit.len() as u8);
    for r in insn.explicit.iter().chain(&insn.implicit) {
        encode_record(b, r);
    }
}

/// Encodes one event as a complete frame.
pub fn encode(ev: &Event) -> Vec<u8> {
    let mut payload = Vec::with_capacity(32);
    let tag = match ev {
        Event::ReadSymbolicInput {
            address,
            length,
            offset,
        }
        | Event::WriteSymbolicInput {
            address,
            length,
            offset,
        } => {
            put_u64(&mut payload, *address);
            put_u64(&mut payload, *length);
            put_u64(&mut payload, *offset);
            if matches!(ev, Event::ReadSymbolicInput { .. }) {
                TAG_READ_INPUT
            } else {
                TAG_WRITE_INPUT
            }
        }
        Event::Instruction(insn) => {
            encode_insn(&mut payload, insn);
            TAG_INSTRUCTION
        }
        Event::ThreadSwitch { from, to } => {
            payload.extend_from_slice(&from.to_le_bytes());
            payload.extend_from_slice(&to.to_le_bytes());
            TAG_THREAD_SWITCH
        }
        Event::Exit { code } => {
            payload.extend_from_slice(&code.to_le_bytes());
            TAG_EXIT
        }
    };
    let mut out = Vec::with_capacity(5 + payload.len());
    out.push(tag);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    tag: u8,
}

impl<'a> Cursor<'a> {
    fn bad(&self, detail: impl Into<String>) -> DecodeError {
        DecodeError::BadPayload {
            tag: self.tag,
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.pos + n > self.buf.len() {
            return Err(self.bad("payload too short"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<(), DecodeError> {
        if self.pos != self.buf.len() {
            return Err(self.bad("trailing bytes"));
        }
        Ok(())
    }

    fn reg(&mut self) -> Result<Reg, DecodeError> {
        let r = self.u8()?;
        if r as usize >= crate::mvm::NUM_REGS {
            return Err(self.bad(format!("register {r}")));
        }
        Ok(Reg(r))
    }

    fn width(&mut self) -> Result<Width, DecodeError> {
        let w = self.u8()?;
        Width::from_bits(w as u32).ok_or_else(|| self.bad(format!("width {w}")))
    }

    fn record(&mut self) -> Result<OperandValue, DecodeError> {
        let loc = match self.u8()? {
            0 => {
                let reg = self.reg()?;
                let width = self.width()?;
                Location::Reg(RegView { reg, width })
            }
            1 => {
                let f = self.u8()?;
                Location::Flag(*Flag::ALL.get(f as usize).ok_or_else(|| self.bad(format!("flag {f}")))?)
            }
            2 => {
                let addr = self.u64()?;
                let size = self.u32()?;
                let present = self.u8()?;
                let base_reg = self.reg()?;
                let base_val = self.u64()?;
                let index_reg = self.reg()?;
                let index_val = self.u64()?;
                let scale = self.u8()?;
                let disp = self.u64()? as i64;
                Location::Mem {
                    addr,
                    size,
                    base: (present & 1 != 0).then_some(RegValue {
                        reg: base_reg,
                        value: base_val,
                    }),
                    index: (present & 2 != 0).then_some(RegValue {
                        reg: index_reg,
                        value: index_val,
                    }),
                    scale,
                    disp,
                }
            }
            3 => Location::Imm,
            t => return Err(self.bad(format!("location tag {t}"))),
        };
        let access = match self.u8()? {
            0 => Access::Read,
            1 => Access::Write,
            2 => Access::ReadWrite,
            a => return Err(self.bad(format!("access {a}"))),
        };
        let value = self.u64()?;
        Ok(OperandValue { loc, access, value })
    }
}

fn decode_payload(tag: u8, payload: &[u8]) -> Result<Event, DecodeError> {
    let mut c = Cursor {
        buf: payload,
        pos: 0,
        tag,
    };
    let ev = match tag {
        TAG_READ_INPUT | TAG_WRITE_INPUT => {
            let address = c.u64()?;
            let length = c.u64()?;
            let offset = c.u64()?;
            if tag == TAG_READ_INPUT {
                Event::ReadSymbolicInput {
                    address,
                    length,
                    offset,
                }
            } else {
                Event::WriteSymbolicInput {
                    address,
                    length,
                    offset,
                }
            }
        }
        TAG_INSTRUCTION => {
            let address = c.u64()?;
            let code = c.u8()?;
            let opcode = Opcode::from_code(code).ok_or_else(|| c.bad(format!("opcode {code}")))?;
            let width = c.width()?;
            let ne = c.u8()? as usize;
            let ni = c.u8()? as usize;
            let mut explicit = Vec::with_capacity(ne);
            for _ in 0..ne {
                explicit.push(c.record()?);
            }
            let mut implicit = Vec::with_capacity(ni);
            for _ in 0..ni {
                implicit.push(c.record()?);
            }
            Event::Instruction(ExecutedInsn {
                address,
                opcode,
                width,
                explicit,
                implicit,
            })
        }
        TAG_THREAD_SWITCH => Event::ThreadSwitch {
            from: c.u32()?,
            to: c.u32()?,
        },
        TAG_EXIT => Event::Exit { code: c.u32()? as i32 },
        t => return Err(DecodeError::UnknownTag(t)),
    };
    c.finish()?;
    Ok(ev)
}

/// Decodes the frame at the start of `buf`; returns the event and the
/// number of bytes consumed.
pub fn decode(buf: &[u8]) -> Result<(Event, usize), DecodeError> {
    if buf.len() < 5 {
        return Err(DecodeError::Truncated);
    }
    let tag = buf[0];
    let len = u32::from_le_bytes(buf[1..5].try_into().unwrap()) as usize;
    if buf.len() < 5 + len {
        return Err(DecodeError::Truncated);
    }
    Ok((decode_payload(tag, &buf[5..5 + len])?, 5 + len))
}

/// Decodes a whole buffer of back-to-back frames.
pub fn decode_all(mut buf: &[u8]) -> Result<Vec<Event>, DecodeError> {
    let mut out = Vec::new();
    while !buf.is_empty() {
        let (ev, n) = decode(buf)?;
        out.push(ev);
        buf = &buf[n..];
    }
    Ok(out)
}

/// Reads one frame from a stream; `Ok(None)` at a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Event>> {
    let mut head = [0u8; 5];
    let mut got = 0;
    while got < 5 {
        let n = r.read(&mut head[got..])?;
        if n == 0 {
            if got == 0 {
                return Ok(None);
            }
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, DecodeError::Truncated));
        }
        got += n;
    }
    let len = u32::from_le_bytes(head[1..5].try_into().unwrap()) as usize;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    decode_payload(head[0], &payload)
        .map(Some)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_insn() -> ExecutedInsn {
        ExecutedInsn {
            address: 0x408,
            opcode: Opcode::Load,
            width: Width::B32,
            explicit: vec![
                OperandValue {
                    loc: Location::Reg(RegView {
                        reg: Reg(2),
                        width: Width::B32,
                    }),
                    access: Access::Write,
                    value: 0xdead_beef_0000_0001,
                },
                OperandValue {
                    loc: Location::Mem {
                        addr: 0x10010,
                        size: 4,
                        base: Some(RegValue {
                            reg: Reg(4),
                            value: 0x10000,
                        }),
                        index: None,
                        scale: 1,
                        disp: -16,
                    },
                    access: Access::Read,
                    value: 7,
                },
            ],
            implicit: vec![OperandValue {
                loc: Location::Flag(Flag::Cf),
                access: Access::ReadWrite,
                value: 1,
            }],
        }
    }

    #[test]
    fn exit_frame_is_nine_bytes() {
        let f = encode(&Event::Exit { code: 0 });
        assert_eq!(f, vec![5, 4, 0, 0, 0, 0, 0, 0, 0]);
        let f = encode(&Event::Exit { code: -1 });
        assert_eq!(&f[5..], &[0xff; 4]);
    }

    #[test]
    fn all_variants_round_trip() {
        let evs = vec![
            Event::ReadSymbolicInput {
                address: 0x10000,
                length: 16,
                offset: 0,
            },
            Event::Instruction(sample_insn()),
            Event::WriteSymbolicInput {
                address: 0x10020,
                length: 3,
                offset: 5,
            },
            Event::ThreadSwitch { from: 0, to: 3 },
            Event::Exit { code: 42 },
        ];
        let bytes: Vec<u8> = evs.iter().flat_map(encode).collect();
        assert_eq!(decode_all(&bytes).unwrap(), evs);
        let mut r = &bytes[..];
        let mut streamed = Vec::new();
        while let Some(e) = read_frame(&mut r).unwrap() {
            streamed.push(e);
        }
        assert_eq!(streamed, evs);
    }

    #[test]
    fn rejects_bad_frames() {
        assert_eq!(decode(&[5, 4, 0]), Err(DecodeError::Truncated));
        assert_eq!(decode(&[9, 0, 0, 0, 0]).unwrap_err(), DecodeError::UnknownTag(9));
        assert!(matches!(
            decode(&[5, 2, 0, 0, 0, 1, 2]),
            Err(DecodeError::BadPayload { tag: 5, .. })
        ));
        assert!(matches!(
            decode(&[4, 5, 0, 0, 0, 1, 0, 0, 0, 9]),
            Err(DecodeError::BadPayload { .. })
        ));
    }

    #[test]
    fn frame_writer_matches_encode() {
        let mut w = FrameWriter::new(Vec::new());
        assert!(w.emit(Event::ThreadSwitch { from: 2, to: 1 }));
        assert_eq!(w.into_inner(), encode(&Event::ThreadSwitch { from: 2, to: 1 }));
    }

    #[test]
    fn read_input_round_trip() {
        let ev = Event::ReadSymbolicInput {
            address: 0x1000,
            length: 24,
            offset: 0,
        };
        let f = encode(&ev);
        assert_eq!(decode(&f).unwrap(), (ev, f.len()));
    }

    #[test]
    fn unknown_tag_ff() {
        assert_eq!(decode(&[0xff, 0, 0, 0, 0]).unwrap_err(), DecodeError::UnknownTag(0xff));
    }

    #[test]
    fn concatenated_frames() {
        let mut bytes = encode(&Event::Exit { code: 0 });
        bytes.extend(encode(&Event::ThreadSwitch { from: 1, to: 2 }));
        let (first, used) = decode(&bytes).unwrap();
        assert_eq!((first, used), (Event::Exit { code: 0 }, 9));
        assert_eq!(decode(&bytes[used..]).unwrap().0, Event::ThreadSwitch { from: 1, to: 2 });
    }

    fn random_reg_value(rng: &mut impl Rng) -> Option<RegValue> {
        rng.random_bool(0.5).then(|| RegValue {
            reg: Reg(rng.random_range(0..8)),
            value: rng.random(),
        })
    }

    fn random_record(rng: &mut impl Rng) -> OperandValue {
        let loc = match rng.random_range(0..4) {
            0 => Location::Reg(RegView {
                reg: Reg(rng.random_range(0..8)),
                width: [Width::B8, Width::B16, Width::B32, Width::B64][rng.random_range(0..4)],
            }),
            1 => Location::Flag(Flag::ALL[rng.random_range(0..4)]),
            2 => Location::Mem {
                addr: rng.random(),
                size: rng.random_range(1..=8),
                base: random_reg_value(rng),
                index: random_reg_value(rng),
                scale: [1, 2, 4, 8][rng.random_range(0..4)],
                disp: rng.random(),
            },
            _ => Location::Imm,
        };
        OperandValue {
            loc,
            access: [Access::Read, Access::Write, Access::ReadWrite][rng.random_range(0..3)],
            value: rng.random(),
        }
    }

    fn random_event(rng: &mut impl Rng) -> Event {
        match rng.random_range(0..5) {
            0 => Event::ReadSymbolicInput {
                address: rng.random(),
                length: rng.random(),
                offset: rng.random(),
            },
            1 => Event::WriteSymbolicInput {
                address: rng.random(),
                length: rng.random(),
                offset: rng.random(),
            },
            2 => {
                let opcode = loop {
                    if let Some(op) = Opcode::from_code(rng.random()) {
                        break op;
                    }
                };
                let ne = rng.random_range(0..4);
                let ni = rng.random_range(0..5);
                Event::Instruction(ExecutedInsn {
                    address: rng.random(),
                    opcode,
                    width: [Width::B8, Width::B16, Width::B32, Width::B64][rng.random_range(0..4)],
                    explicit: (0..ne).map(|_| random_record(rng)).collect(),
                    implicit: (0..ni).map(|_| random_record(rng)).collect(),
                })
            }
            3 => Event::ThreadSwitch {
                from: rng.random(),
                to: rng.random(),
            },
            _ => Event::Exit { code: rng.random() },
        }
    }

    #[test]
    fn random_events_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let evs: Vec<Event> = (0..1000).map(|_| random_event(&mut rng)).collect();
        for ev in &evs {
            let f = encode(ev);
            assert_eq!(decode(&f).unwrap(), (ev.clone(), f.len()));
        }
        let bytes: Vec<u8> = evs.iter().flat_map(encode).collect();
        assert_eq!(decode_all(&bytes).unwrap(), evs);
    }
}
