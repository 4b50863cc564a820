//! Two-pass assembler for the mini ISA.
//!
//! ```text
//!         .data
//! msg:    .ascii "hi\n"
//! tab:    .quad case0, case1
//!         .text
//! main:   addr r1, [msg]
//!         mov r2, 3
//!         write 1, r1, r2
//!         load.b r3b, [r1 + r2*1 - 1]
//!         exit 0
//! ```
//!
//! Comments start with `;`. Labels end with `:`; several may share a line
//! with an instruction or directive.

use std::collections::BTreeMap;

use thiserror::Error;

use super::isa::*;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AsmError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: width mismatch: {msg}")]
    WidthMismatch { line: usize, msg: String },
    #[error("line {line}: undefined label `{name}`")]
    UndefinedLabel { line: usize, name: String },
    #[error("line {line}: duplicate label `{name}`")]
    DuplicateLabel { line: usize, name: String },
    #[error("entry label `{0}` is not defined")]
    NoEntry(String),
}

fn syntax(line: usize, msg: impl Into<String>) -> AsmError {
    AsmError::Syntax {
        line,
        msg: msg.into(),
    }
}

struct PendingInsn {
    line: usize,
    opcode: Opcode,
    width: Width,
    ops: Vec<String>,
}

struct Fixup {
    line: usize,
    offset: usize,
    size: usize,
    expr: String,
}

#[derive(PartialEq)]
enum Section {
    Text,
    Data,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '.'
}

fn is_ident(s: &str) -> bool {
    let mut cs = s.chars();
    cs.next().is_some_and(is_ident_start) && cs.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    let mut in_char = false;
    let mut esc = false;
    for (i, c) in line.char_indices() {
        if esc {
            esc = false;
            continue;
        }
        match c {
            '\\' if in_str || in_char => esc = true,
            '"' if !in_char => in_str = !in_str,
            '\'' if !in_str => in_char = !in_char,
            ';' if !in_str && !in_char => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Splits on top-level commas, respecting brackets and quotes.
fn split_operands(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut depth = 0;
    let mut quote: Option<char> = None;
    let mut esc = false;
    for c in s.chars() {
        if let Some(q) = quote {
            cur.push(c);
            if esc {
                esc = false;
            } else if c == '\\' {
                esc = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '"' | '\'' => {
                quote = Some(c);
                cur.push(c);
            }
            '[' => {
                depth += 1;
                cur.push(c);
            }
            ']' => {
                depth -= 1;
                cur.push(c);
            }
            ',' if depth == 0 => out.push(std::mem::take(&mut cur).trim().to_string()),
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() || !out.is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn unescape(line: usize, s: &str) -> Result<Vec<u8>, AsmError> {
    let mut out = Vec::new();
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c != b'\\' {
            out.push(c);
            i += 1;
            continue;
        }
        let e = *bytes.get(i + 1).ok_or_else(|| syntax(line, "dangling escape"))?;
        i += 2;
        out.push(match e {
            b'n' => b'\n',
            b't' => b'\t',
            b'r' => b'\r',
            b'0' => 0,
            b'\\' => b'\\',
            b'"' => b'"',
            b'\'' => b'\'',
            b'x' => {
                let hex = s.get(i..i + 2).ok_or_else(|| syntax(line, "short \\x escape"))?;
                i += 2;
                u8::from_str_radix(hex, 16).map_err(|_| syntax(line, format!("bad escape \\x{hex}")))?
            }
            other => return Err(syntax(line, format!("unknown escape \\{}", other as char))),
        });
    }
    Ok(out)
}

fn parse_quoted(line: usize, s: &str) -> Result<Vec<u8>, AsmError> {
    let s = s.trim();
    if s.len() < 2 || !s.starts_with('"') || !s.ends_with('"') {
        return Err(syntax(line, format!("expected a quoted string, got `{s}`")));
    }
    unescape(line, &s[1..s.len() - 1])
}

fn parse_number(s: &str) -> Option<i128> {
    let (digits, radix) = if let Some(h) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        (h, 16)
    } else if let Some(b) = s.strip_prefix("0b") {
        (b, 2)
    } else {
        (s, 10)
    };
    let digits = digits.replace('_', "");
    if digits.is_empty() {
        return None;
    }
    i128::from_str_radix(&digits, radix).ok()
}

/// Parses a register name; returns None if `s` is not one.
pub fn parse_reg(s: &str) -> Option<RegView> {
    let rest = s.strip_prefix('r')?;
    let mut cs = rest.chars();
    let d = cs.next()?.to_digit(10)?;
    if d as usize >= NUM_REGS {
        return None;
    }
    let width = match cs.as_str() {
        "" => Width::B64,
        "d" => Width::B32,
        "w" => Width::B16,
        "b" => Width::B8,
        _ => return None,
    };
    Some(RegView {
        reg: Reg(d as u8),
        width,
    })
}

struct Resolver<'a> {
    labels: &'a BTreeMap<String, u64>,
}

impl Resolver<'_> {
    fn term(&self, line: usize, t: &str) -> Result<i128, AsmError> {
        let t = t.trim();
        if t.is_empty() {
            return Err(syntax(line, "missing value"));
        }
        if t.starts_with('\'') {
            if t.len() < 3 || !t.ends_with('\'') {
                return Err(syntax(line, format!("bad character literal {t}")));
            }
            let b = unescape(line, &t[1..t.len() - 1])?;
            if b.len() != 1 {
                return Err(syntax(line, format!("bad character literal {t}")));
            }
            return Ok(b[0] as i128);
        }
        if t.starts_with(|c: char| c.is_ascii_digit()) {
            return parse_number(t).ok_or_else(|| syntax(line, format!("bad number `{t}`")));
        }
        if is_ident(t) {
            if parse_reg(t).is_some() {
                return Err(syntax(line, format!("register `{t}` not allowed here")));
            }
            return self
                .labels
                .get(t)
                .map(|&a| a as i128)
                .ok_or_else(|| AsmError::UndefinedLabel {
                    line,
                    name: t.to_string(),
                });
        }
        Err(syntax(line, format!("bad value `{t}`")))
    }

    /// `term (('+'|'-') term)*` with an optional leading sign.
    fn expr(&self, line: usize, s: &str) -> Result<i128, AsmError> {
        let mut total = 0i128;
        for (neg, t) in signed_terms(line, s)? {
            let v = self.term(line, &t)?;
            total = if neg { total - v } else { total + v };
        }
        Ok(total)
    }
}

/// Splits `a + b - c` into signed terms, leaving character literals intact.
fn signed_terms(line: usize, s: &str) -> Result<Vec<(bool, String)>, AsmError> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut neg = false;
    let mut in_char = false;
    let mut esc = false;
    for c in s.chars() {
        if in_char {
            cur.push(c);
            if esc {
                esc = false;
            } else if c == '\\' {
                esc = true;
            } else if c == '\'' {
                in_char = false;
            }
            continue;
        }
        match c {
            '\'' => {
                in_char = true;
                cur.push(c);
            }
            '+' | '-' => {
                if cur.trim().is_empty() {
                    if !out.is_empty() {
                        return Err(syntax(line, format!("bad expression `{s}`")));
                    }
                    // leading sign
                    if c == '-' {
                        neg = !neg;
                    }
                } else {
                    out.push((neg, std::mem::take(&mut cur).trim().to_string()));
                    neg = c == '-';
                }
            }
            _ => cur.push(c),
        }
    }
    if cur.trim().is_empty() {
        return Err(syntax(line, format!("bad expression `{s}`")));
    }
    out.push((neg, cur.trim().to_string()));
    Ok(out)
}

fn fits(v: i128, w: Width) -> bool {
    let bits = w.bits();
    v >= -(1i128 << (bits - 1)) && v < (1i128 << bits)
}

impl Resolver<'_> {
    fn reg(&self, line: usize, s: &str, want: Width) -> Result<RegView, AsmError> {
        let r = parse_reg(s).ok_or_else(|| syntax(line, format!("expected a register, got `{s}`")))?;
        if r.width != want {
            return Err(AsmError::WidthMismatch {
                line,
                msg: format!("`{s}` is {} bits, instruction is {} bits", r.width.bits(), want.bits()),
            });
        }
        Ok(r)
    }

    fn reg_or_imm(&self, line: usize, s: &str, want: Width) -> Result<Operand, AsmError> {
        if parse_reg(s).is_some() {
            return Ok(Operand::Reg(self.reg(line, s, want)?));
        }
        if s.starts_with('[') {
            return Err(syntax(line, format!("memory operand `{s}` not allowed here")));
        }
        let v = self.expr(line, s)?;
        if !fits(v, want) {
            return Err(syntax(line, format!("immediate {v} does not fit in {} bits", want.bits())));
        }
        Ok(Operand::Imm(v as u64 & want.mask()))
    }

    fn mem(&self, line: usize, s: &str) -> Result<MemOperand, AsmError> {
        let inner = s
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| syntax(line, format!("expected a memory operand, got `{s}`")))?;
        let mut m = MemOperand {
            base: None,
            index: None,
            scale: 1,
            disp: 0,
        };
        let mut disp = 0i128;
        for (neg, t) in signed_terms(line, inner)? {
            let as_reg = |x: &str| -> Result<Option<Reg>, AsmError> {
                match parse_reg(x.trim()) {
                    Some(r) if r.width == Width::B64 => Ok(Some(r.reg)),
                    Some(_) => Err(syntax(line, format!("address register `{x}` must be a full register"))),
                    None => Ok(None),
                }
            };
            if let Some((a, b)) = t.split_once('*') {
                let (r, k) = match (as_reg(a)?, as_reg(b)?) {
                    (Some(r), None) => (r, b),
                    (None, Some(r)) => (r, a),
                    _ => return Err(syntax(line, format!("bad scaled index `{t}`"))),
                };
                let k = parse_number(k.trim()).ok_or_else(|| syntax(line, format!("bad scale in `{t}`")))?;
                if !matches!(k, 1 | 2 | 4 | 8) {
                    return Err(syntax(line, format!("scale {k} is not 1, 2, 4 or 8")));
                }
                if neg || m.index.is_some() {
                    return Err(syntax(line, format!("bad index in `{s}`")));
                }
                m.index = Some(r);
                m.scale = k as u8;
            } else if let Some(r) = as_reg(&t)? {
                if neg {
                    return Err(syntax(line, "registers cannot be subtracted"));
                }
                if m.base.is_none() {
                    m.base = Some(r);
                } else if m.index.is_none() {
                    m.index = Some(r);
                } else {
                    return Err(syntax(line, format!("too many registers in `{s}`")));
                }
            } else {
                let v = self.term(line, &t)?;
                disp = if neg { disp - v } else { disp + v };
            }
        }
        // a lone index with scale 1 reads more naturally as a base
        if m.base.is_none() && m.scale == 1 {
            m.base = m.index.take();
        }
        m.disp = i64::try_from(disp).map_err(|_| syntax(line, "displacement out of range"))?;
        Ok(m)
    }

    fn target(&self, line: usize, s: &str, code_end: u64) -> Result<u64, AsmError> {
        let v = self.expr(line, s)?;
        let a = u64::try_from(v).map_err(|_| syntax(line, format!("bad jump target `{s}`")))?;
        if a < CODE_BASE || a >= code_end || (a - CODE_BASE) % INSN_SIZE != 0 {
            return Err(syntax(line, format!("`{s}` is not a code address")));
        }
        Ok(a)
    }
}

fn expect_count(p: &PendingInsn, counts: &[usize]) -> Result<(), AsmError> {
    if !counts.contains(&p.ops.len()) {
        return Err(syntax(
            p.line,
            format!("`{}` takes {:?} operands, got {}", p.opcode.mnemonic(), counts, p.ops.len()),
        ));
    }
    Ok(())
}

fn build_insn(r: &Resolver, p: &PendingInsn, address: u64, code_end: u64) -> Result<Insn, AsmError> {
    use Opcode::*;
    let (line, w) = (p.line, p.width);
    let ops = &p.ops;
    let q = Width::B64;
    let operands = match p.opcode {
        Mov | Add | Sub | Mul | And | Or | Xor | Shl | Shr | Sar => {
            expect_count(p, &[2])?;
            vec![Operand::Reg(r.reg(line, &ops[0], w)?), r.reg_or_imm(line, &ops[1], w)?]
        }
        Cmp | Test => {
            expect_count(p, &[2])?;
            vec![Operand::Reg(r.reg(line, &ops[0], w)?), r.reg_or_imm(line, &ops[1], w)?]
        }
        Not | Neg => {
            expect_count(p, &[1])?;
            vec![Operand::Reg(r.reg(line, &ops[0], w)?)]
        }
        Load => {
            expect_count(p, &[2])?;
            vec![Operand::Reg(r.reg(line, &ops[0], w)?), Operand::Mem(r.mem(line, &ops[1])?)]
        }
        Store => {
            expect_count(p, &[2])?;
            vec![Operand::Mem(r.mem(line, &ops[0])?), r.reg_or_imm(line, &ops[1], w)?]
        }
        Addr => {
            expect_count(p, &[2])?;
            vec![Operand::Reg(r.reg(line, &ops[0], q)?), Operand::Mem(r.mem(line, &ops[1])?)]
        }
        Jcc(_) => {
            expect_count(p, &[1])?;
            vec![Operand::Code(r.target(line, &ops[0], code_end)?)]
        }
        Jmp => {
            expect_count(p, &[1])?;
            let s = &ops[0];
            if s.starts_with('[') {
                vec![Operand::Mem(r.mem(line, s)?)]
            } else if parse_reg(s).is_some() {
                vec![Operand::Reg(r.reg(line, s, q)?)]
            } else {
                vec![Operand::Code(r.target(line, s, code_end)?)]
            }
        }
        Spawn => {
            expect_count(p, &[3])?;
            vec![
                Operand::Reg(r.reg(line, &ops[0], q)?),
                Operand::Code(r.target(line, &ops[1], code_end)?),
                r.reg_or_imm(line, &ops[2], q)?,
            ]
        }
        Join => {
            expect_count(p, &[1])?;
            vec![r.reg_or_imm(line, &ops[0], q)?]
        }
        Yield => {
            expect_count(p, &[0])?;
            vec![]
        }
        Open => {
            expect_count(p, &[1])?;
            vec![Operand::Reg(r.reg(line, &ops[0], q)?)]
        }
        Read | Write => {
            expect_count(p, &[3])?;
            ops.iter().map(|s| r.reg_or_imm(line, s, q)).collect::<Result<_, _>>()?
        }
        Exit => {
            expect_count(p, &[0, 1])?;
            ops.iter().map(|s| r.reg_or_imm(line, s, q)).collect::<Result<_, _>>()?
        }
    };
    Ok(Insn {
        address,
        opcode: p.opcode,
        width: w,
        operands,
    })
}

/// Assembles source text into a program.
pub fn assemble(src: &str) -> Result<Program, AsmError> {
    let mut labels: BTreeMap<String, u64> = BTreeMap::new();
    let mut pending: Vec<PendingInsn> = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    let mut fixups: Vec<Fixup> = Vec::new();
    let mut section = Section::Text;
    let mut entry: Option<(usize, String)> = None;

    for (i, raw) in src.lines().enumerate() {
        let line = i + 1;
        let mut rest = strip_comment(raw).trim();
        // leading labels
        while let Some((name, after)) = rest.split_once(':') {
            let name = name.trim();
            if !is_ident(name) {
                break;
            }
            let addr = match section {
                Section::Text => CODE_BASE + INSN_SIZE * pending.len() as u64,
                Section::Data => DATA_BASE + data.len() as u64,
            };
            if labels.insert(name.to_string(), addr).is_some() {
                return Err(AsmError::DuplicateLabel {
                    line,
                    name: name.to_string(),
                });
            }
            rest = after.trim();
        }
        if rest.is_empty() {
            continue;
        }
        let (head, args) = match rest.find(char::is_whitespace) {
            Some(k) => (&rest[..k], rest[k..].trim()),
            None => (rest, ""),
        };
        if head.starts_with('.') {
            match head {
                ".text" => section = Section::Text,
                ".data" => section = Section::Data,
                ".entry" => entry = Some((line, args.to_string())),
                _ if section != Section::Data => {
                    return Err(syntax(line, format!("directive `{head}` outside .data")));
                }
                ".ascii" | ".asciz" => {
                    data.extend(parse_quoted(line, args)?);
                    if head == ".asciz" {
                        data.push(0);
                    }
                }
                ".bytes" => {
                    for tok in args.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
                        let t = tok.trim_start_matches("0x");
                        data.push(
                            u8::from_str_radix(t, 16).map_err(|_| syntax(line, format!("bad hex byte `{tok}`")))?,
                        );
                    }
                }
                ".zero" | ".align" => {
                    let n = parse_number(args).ok_or_else(|| syntax(line, format!("bad count `{args}`")))?;
                    let n = usize::try_from(n).map_err(|_| syntax(line, "negative count"))?;
                    if head == ".zero" {
                        data.resize(data.len() + n, 0);
                    } else if n > 0 {
                        while data.len() % n != 0 {
                            data.push(0);
                        }
                    }
                }
                ".byte" | ".word" | ".dword" | ".quad" => {
                    let size = match head {
                        ".byte" => 1,
                        ".word" => 2,
                        ".dword" => 4,
                        _ => 8,
                    };
                    let items = split_operands(args);
                    if items.is_empty() {
                        return Err(syntax(line, format!("`{head}` needs at least one value")));
                    }
                    for expr in items {
                        fixups.push(Fixup {
                            line,
                            offset: data.len(),
                            size,
                            expr,
                        });
                        data.resize(data.len() + size, 0);
                    }
                }
                _ => return Err(syntax(line, format!("unknown directive `{head}`"))),
            }
            continue;
        }
        if section != Section::Text {
            return Err(syntax(line, "instruction in .data section"));
        }
        let (mnem, suffix) = match head.split_once('.') {
            Some((m, s)) => (m, Some(s)),
            None => (head, None),
        };
        let opcode = Opcode::from_mnemonic(mnem).ok_or_else(|| syntax(line, format!("unknown mnemonic `{mnem}`")))?;
        let width = match suffix {
            None | Some("q") => Width::B64,
            Some("d") if opcode.is_sized() => Width::B32,
            Some("w") if opcode.is_sized() => Width::B16,
            Some("b") if opcode.is_sized() => Width::B8,
            Some(s) => return Err(syntax(line, format!("bad width suffix `.{s}` on `{mnem}`"))),
        };
        pending.push(PendingInsn {
            line,
            opcode,
            width,
            ops: split_operands(args),
        });
    }

    let resolver = Resolver { labels: &labels };
    for f in &fixups {
        let v = resolver.expr(f.line, &f.expr)?;
        let w = Width::from_bits(8 * f.size as u32).unwrap();
        if !fits(v, w) {
            return Err(syntax(f.line, format!("value {v} does not fit in {} bytes", f.size)));
        }
        let bytes = (v as u64).to_le_bytes();
        data[f.offset..f.offset + f.size].copy_from_slice(&bytes[..f.size]);
    }
    let code_end = CODE_BASE + INSN_SIZE * pending.len() as u64;
    let code = pending
        .iter()
        .enumerate()
        .map(|(k, p)| build_insn(&resolver, p, CODE_BASE + INSN_SIZE * k as u64, code_end))
        .collect::<Result<Vec<_>, _>>()?;
    let entry = match entry {
        Some((line, name)) => {
            let a = *labels.get(&name).ok_or(AsmError::NoEntry(name.clone()))?;
            if !(CODE_BASE..code_end).contains(&a) {
                return Err(syntax(line, format!("entry `{name}` is not a code label")));
            }
            a
        }
        None => labels.get("main").copied().unwrap_or(CODE_BASE),
    };
    Ok(Program {
        code,
        data_base: DATA_BASE,
        data,
        entry,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_and_layout() {
        let p = assemble(
            "  .data\nbuf: .zero 4\nmsg: .ascii \"a;b\\n\"\n  .text\nstart: mov r0, 1\nmain: jmp start ; go back\n",
        )
        .unwrap();
        assert_eq!(p.label("buf"), Some(DATA_BASE));
        assert_eq!(p.label("msg"), Some(DATA_BASE + 4));
        assert_eq!(&p.data[4..], b"a;b\n");
        assert_eq!(p.entry, CODE_BASE + 4);
        assert_eq!(p.code[1].operands, vec![Operand::Code(CODE_BASE)]);
    }

    #[test]
    fn memory_operands() {
        let p = assemble(".data\nt: .zero 8\n.text\nmain: load.d r2d, [r4 + r1*4 - 8]\n load r0, [t + 16]\n load r0, [r3*8 + t]\n").unwrap();
        assert_eq!(
            p.code[0].operands[1],
            Operand::Mem(MemOperand {
                base: Some(Reg(4)),
                index: Some(Reg(1)),
                scale: 4,
                disp: -8
            })
        );
        assert_eq!(
            p.code[1].operands[1],
            Operand::Mem(MemOperand {
                base: None,
                index: None,
                scale: 1,
                disp: DATA_BASE as i64 + 16
            })
        );
        let Operand::Mem(m) = p.code[2].operands[1] else { panic!() };
        assert_eq!((m.index, m.scale, m.disp), (Some(Reg(3)), 8, DATA_BASE as i64));
    }

    #[test]
    fn width_rules() {
        assert!(matches!(assemble("main: add.d r0, r1d"), Err(AsmError::WidthMismatch { line: 1, .. })));
        assert!(matches!(assemble("main: mov.b r0b, r1w"), Err(AsmError::WidthMismatch { .. })));
        assert!(assemble("main: mov.b r0b, 255").is_ok());
        assert!(assemble("main: mov.b r0b, -128").is_ok());
        assert!(assemble("main: mov.b r0b, 256").is_err());
        assert!(assemble("main: jmp.d main").is_err());
        let p = assemble("main: mov.w r1w, -1\n cmp.b r0b, 'S'\n cmp.b r0b, ','").unwrap();
        assert_eq!(p.code[0].operands[1], Operand::Imm(0xffff));
        assert_eq!(p.code[1].operands[1], Operand::Imm(b'S' as u64));
        assert_eq!(p.code[2].operands[1], Operand::Imm(b',' as u64));
    }

    #[test]
    fn data_values_and_label_arithmetic() {
        let p = assemble(
            ".data\nbase: .dword c1 - base, c0 - base\n.quad c0\n.byte 1, 0xff\n.bytes de ad\n.text\nmain: exit\nc0: exit 1\nc1: exit 2\n",
        )
        .unwrap();
        let base = DATA_BASE;
        assert_eq!(p.read_data(base, 4) as u32 as i32 as i64, (CODE_BASE + 8) as i64 - base as i64);
        assert_eq!(p.read_data(base + 8, 8), CODE_BASE + 4);
        assert_eq!(&p.data[16..], &[1, 0xff, 0xde, 0xad]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(
            assemble("main: nop"),
            Err(AsmError::Syntax {
                line: 1,
                msg: "unknown mnemonic `nop`".into()
            })
        );
        assert!(matches!(
            assemble("main:\n  jmp nowhere"),
            Err(AsmError::UndefinedLabel { line: 2, .. })
        ));
        assert!(matches!(assemble("a: exit\na: exit"), Err(AsmError::DuplicateLabel { line: 2, .. })));
        assert!(matches!(assemble(".data\nx: .zero 1\n.text\nmain: jmp x"), Err(AsmError::Syntax { line: 4, .. })));
        assert!(matches!(assemble(".entry go\nmain: exit"), Err(AsmError::NoEntry(_))));
        assert!(matches!(assemble("main: load r0, [r1 + r2 + r3]"), Err(AsmError::Syntax { .. })));
        assert!(matches!(assemble("main: load r0, [r1*3]"), Err(AsmError::Syntax { .. })));
    }

    #[test]
    fn syscall_and_thread_forms() {
        let p = assemble("main: spawn r1, w, 7\n join r1\n yield\n open r3\n read r3, r4, 16\n exit\nw: exit r0\n").unwrap();
        assert_eq!(p.code[0].operands[1], Operand::Code(CODE_BASE + 24));
        assert_eq!(p.code[0].operands[2], Operand::Imm(7));
        assert!(p.code[5].operands.is_empty());
    }
}
