//! A small label-aware Thumb assembler for building firmware images.
//!
//! Builder methods never fail; the first error is remembered and returned by
//! [`Assembler::finish`].

use std::collections::BTreeMap;

use crate::error::Error;
use crate::isa::{AluOp, Cond, Encoding, Instruction, MemSize, Reg};

/// An assembled image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub origin: u32,
    pub bytes: Vec<u8>,
    pub labels: BTreeMap<String, u32>,
}

impl Program {
    pub fn label(&self, name: &str) -> Option<u32> {
        self.labels.get(name).copied()
    }

    /// Like [`Program::label`] but panics with the label name; for firmware
    /// builders whose labels are fixed.
    pub fn addr(&self, name: &str) -> u32 {
        self.label(name).unwrap_or_else(|| panic!("no label `{name}`"))
    }

    pub fn end(&self) -> u32 {
        self.origin + self.bytes.len() as u32
    }

    pub fn word_at(&self, address: u32) -> Option<u32> {
        let off = address.checked_sub(self.origin)? as usize;
        let b = self.bytes.get(off..off + 4)?;
        Some(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FixupKind {
    B,
    BCond(Cond),
    Bl,
    LdrLit(Reg),
    LdrLitWide(Reg),
    Word { thumb: bool },
}

#[derive(Debug, Clone)]
struct Fixup {
    offset: usize,
    kind: FixupKind,
    label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum PoolValue {
    Const(u32),
    Label { name: String, thumb: bool },
}

#[derive(Debug)]
pub struct Assembler {
    origin: u32,
    bytes: Vec<u8>,
    labels: BTreeMap<String, u32>,
    fixups: Vec<Fixup>,
    pool: Vec<(usize, Reg, PoolValue)>,
    pools_emitted: usize,
    error: Option<Error>,
}

impl Assembler {
    pub fn new(origin: u32) -> Assembler {
        Assembler {
            origin,
            bytes: Vec::new(),
            labels: BTreeMap::new(),
            fixups: Vec::new(),
            pool: Vec::new(),
            pools_emitted: 0,
            error: None,
        }
    }

    fn fail(&mut self, error: Error) {
        self.error.get_or_insert(error);
    }

    /// Address of the next byte.
    pub fn here(&self) -> u32 {
        self.origin + self.bytes.len() as u32
    }

    pub fn label(&mut self, name: &str) {
        let here = self.here();
        if self.labels.insert(name.to_string(), here).is_some() {
            self.fail(Error::DuplicateLabel(name.to_string()));
        }
    }

    pub fn emit(&mut self, instruction: Instruction) {
        match instruction.encode() {
            Ok(e) => self.bytes.extend(e.to_bytes()),
            Err(e) => self.fail(e.into()),
        }
    }

    pub fn halfword(&mut self, h: u16) {
        self.bytes.extend(h.to_le_bytes());
    }

    pub fn word(&mut self, w: u32) {
        self.bytes.extend(w.to_le_bytes());
    }

    /// A word holding the address of `label`, with bit 0 set when `thumb`.
    pub fn word_label(&mut self, label: &str, thumb: bool) {
        self.fixup(FixupKind::Word { thumb }, label);
        self.word(0);
    }

    pub fn space(&mut self, len: usize) {
        self.bytes.extend(std::iter::repeat(0).take(len));
    }

    /// Pads with `nop` (and a zero byte if odd) up to a multiple of `align`.
    pub fn align(&mut self, align: u32) {
        if self.here() % 2 != 0 {
            self.bytes.push(0);
        }
        while self.here() % align != 0 {
            self.halfword(0xBF00);
        }
    }

    fn fixup(&mut self, kind: FixupKind, label: &str) {
        self.fixups.push(Fixup { offset: self.bytes.len(), kind, label: label.to_string() });
    }

    pub fn movs(&mut self, rd: Reg, imm: u8) {
        self.emit(Instruction::MovImm { rd, imm });
    }

    pub fn mov(&mut self, rd: Reg, rm: Reg) {
        self.emit(Instruction::MovReg { rd, rm });
    }

    pub fn adds(&mut self, rd: Reg, rn: Reg, rm: Reg) {
        self.emit(Instruction::AddReg { rd, rn, rm });
    }

    pub fn subs(&mut self, rd: Reg, rn: Reg, rm: Reg) {
        self.emit(Instruction::SubReg { rd, rn, rm });
    }

    pub fn adds_imm3(&mut self, rd: Reg, rn: Reg, imm: u8) {
        self.emit(Instruction::AddImm3 { rd, rn, imm });
    }

    pub fn subs_imm3(&mut self, rd: Reg, rn: Reg, imm: u8) {
        self.emit(Instruction::SubImm3 { rd, rn, imm });
    }

    pub fn adds8(&mut self, rdn: Reg, imm: u8) {
        self.emit(Instruction::AddImm8 { rdn, imm });
    }

    pub fn subs8(&mut self, rdn: Reg, imm: u8) {
        self.emit(Instruction::SubImm8 { rdn, imm });
    }

    pub fn cmp_imm(&mut self, rn: Reg, imm: u8) {
        self.emit(Instruction::CmpImm { rn, imm });
    }

    pub fn cmp(&mut self, rn: Reg, rm: Reg) {
        self.emit(Instruction::CmpReg { rn, rm });
    }

    pub fn lsls(&mut self, rd: Reg, rm: Reg, shift: u8) {
        self.emit(Instruction::LslImm { rd, rm, shift });
    }

    pub fn lsrs(&mut self, rd: Reg, rm: Reg, shift: u8) {
        self.emit(Instruction::LsrImm { rd, rm, shift });
    }

    pub fn ands(&mut self, rdn: Reg, rm: Reg) {
        self.emit(Instruction::Alu { op: AluOp::And, rdn, rm });
    }

    pub fn eors(&mut self, rdn: Reg, rm: Reg) {
        self.emit(Instruction::Alu { op: AluOp::Eor, rdn, rm });
    }

    pub fn orrs(&mut self, rdn: Reg, rm: Reg) {
        self.emit(Instruction::Alu { op: AluOp::Orr, rdn, rm });
    }

    /// `muls rdn, rm, rdn`
    pub fn muls(&mut self, rdn: Reg, rm: Reg) {
        self.emit(Instruction::Alu { op: AluOp::Mul, rdn, rm });
    }

    /// `add rdn, rm` on any registers.
    pub fn add(&mut self, rdn: Reg, rm: Reg) {
        self.emit(Instruction::AddHigh { rdn, rm });
    }

    pub fn bx(&mut self, rm: Reg) {
        self.emit(Instruction::Bx { rm });
    }

    pub fn blx(&mut self, rm: Reg) {
        self.emit(Instruction::Blx { rm });
    }

    fn mem(&mut self, load: bool, size: MemSize, rt: Reg, rn: Reg, imm: u8) {
        self.emit(Instruction::LoadStoreImm { load, size, rt, rn, imm });
    }

    pub fn ldr(&mut self, rt: Reg, rn: Reg, imm: u8) {
        self.mem(true, MemSize::Word, rt, rn, imm);
    }

    pub fn str(&mut self, rt: Reg, rn: Reg, imm: u8) {
        self.mem(false, MemSize::Word, rt, rn, imm);
    }

    pub fn ldrh(&mut self, rt: Reg, rn: Reg, imm: u8) {
        self.mem(true, MemSize::Half, rt, rn, imm);
    }

    pub fn strh(&mut self, rt: Reg, rn: Reg, imm: u8) {
        self.mem(false, MemSize::Half, rt, rn, imm);
    }

    pub fn ldrb(&mut self, rt: Reg, rn: Reg, imm: u8) {
        self.mem(true, MemSize::Byte, rt, rn, imm);
    }

    pub fn strb(&mut self, rt: Reg, rn: Reg, imm: u8) {
        self.mem(false, MemSize::Byte, rt, rn, imm);
    }

    pub fn ldr_reg(&mut self, rt: Reg, rn: Reg, rm: Reg) {
        self.emit(Instruction::LoadStoreReg { load: true, rt, rn, rm });
    }

    pub fn str_reg(&mut self, rt: Reg, rn: Reg, rm: Reg) {
        self.emit(Instruction::LoadStoreReg { load: false, rt, rn, rm });
    }

    pub fn ldr_sp(&mut self, rt: Reg, imm: u16) {
        self.emit(Instruction::LoadStoreSp { load: true, rt, imm });
    }

    pub fn str_sp(&mut self, rt: Reg, imm: u16) {
        self.emit(Instruction::LoadStoreSp { load: false, rt, imm });
    }

    pub fn svc(&mut self, imm: u8) {
        self.emit(Instruction::Svc { imm });
    }

    pub fn bkpt(&mut self, imm: u8) {
        self.emit(Instruction::Bkpt { imm });
    }

    pub fn nop(&mut self) {
        self.emit(Instruction::Nop);
    }

    pub fn dsb(&mut self) {
        self.emit(Instruction::Dsb);
    }

    pub fn isb(&mut self) {
        self.emit(Instruction::Isb);
    }

    /// Permanently undefined `udf #0`.
    pub fn udf(&mut self) {
        self.halfword(0xDE00);
    }

    pub fn msr_control(&mut self, rn: Reg) {
        self.emit(Instruction::MsrControl { rn });
    }

    pub fn mrs_control(&mut self, rd: Reg) {
        self.emit(Instruction::MrsControl { rd });
    }

    /// `b .`
    pub fn b_self(&mut self) {
        self.emit(Instruction::B { offset: -4 });
    }

    pub fn b(&mut self, label: &str) {
        self.fixup(FixupKind::B, label);
        self.halfword(0);
    }

    pub fn b_cond(&mut self, cond: Cond, label: &str) {
        self.fixup(FixupKind::BCond(cond), label);
        self.halfword(0);
    }

    pub fn bl(&mut self, label: &str) {
        self.fixup(FixupKind::Bl, label);
        self.word(0);
    }

    /// `ldr rt, label` where `label` marks a word within narrow literal range.
    pub fn ldr_label(&mut self, rt: Reg, label: &str) {
        self.fixup(FixupKind::LdrLit(rt), label);
        self.halfword(0);
    }

    /// `ldr.w rt, label`, reaching backwards as well.
    pub fn ldr_wide_label(&mut self, rt: Reg, label: &str) {
        self.fixup(FixupKind::LdrLitWide(rt), label);
        self.word(0);
    }

    /// Loads a constant from the next literal pool.
    pub fn ldr_const(&mut self, rt: Reg, value: u32) {
        self.pool.push((self.bytes.len(), rt, PoolValue::Const(value)));
        self.halfword(0);
    }

    /// Loads the address of `label` from the next literal pool.
    pub fn ldr_addr(&mut self, rt: Reg, label: &str, thumb: bool) {
        self.pool.push((self.bytes.len(), rt, PoolValue::Label { name: label.to_string(), thumb }));
        self.halfword(0);
    }

    /// Emits pending literal-pool entries here, word aligned.
    pub fn pool(&mut self) {
        if self.pool.is_empty() {
            return;
        }
        self.align(4);
        let pending = std::mem::take(&mut self.pool);
        let mut emitted: Vec<(PoolValue, String)> = Vec::new();
        for (offset, rt, value) in pending {
            let name = match emitted.iter().find(|(v, _)| *v == value) {
                Some((_, name)) => name.clone(),
                None => {
                    let name = format!(".pool{}.{}", self.pools_emitted, emitted.len());
                    self.label(&name);
                    match &value {
                        PoolValue::Const(c) => self.word(*c),
                        PoolValue::Label { name: target, thumb } => {
                            let (target, thumb) = (target.clone(), *thumb);
                            self.word_label(&target, thumb);
                        }
                    }
                    emitted.push((value, name.clone()));
                    name
                }
            };
            self.fixups.push(Fixup { offset, kind: FixupKind::LdrLit(rt), label: name });
        }
        self.pools_emitted += 1;
    }

    pub fn finish(mut self) -> Result<Program, Error> {
        self.pool();
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        for fixup in std::mem::take(&mut self.fixups) {
            let target = *self.labels.get(&fixup.label).ok_or_else(|| Error::UndefinedLabel(fixup.label.clone()))?;
            let at = self.origin + fixup.offset as u32;
            let rel = target.wrapping_sub(at.wrapping_add(4)) as i32;
            let lit_base = at.wrapping_add(4) & !3;
            let out_of_range = || Error::FixupOutOfRange { label: fixup.label.clone(), from: at };
            let instruction = match fixup.kind {
                FixupKind::B => Instruction::B { offset: rel },
                FixupKind::BCond(cond) => Instruction::BCond { cond, offset: rel },
                FixupKind::Bl => Instruction::Bl { offset: rel },
                FixupKind::LdrLit(rt) => {
                    let delta = target.wrapping_sub(lit_base);
                    if delta > 1020 || delta % 4 != 0 {
                        return Err(out_of_range());
                    }
                    Instruction::LdrLit { rt, imm: delta as u16 }
                }
                FixupKind::LdrLitWide(rt) => {
                    let delta = target.wrapping_sub(lit_base) as i32;
                    if delta.unsigned_abs() > 4095 {
                        return Err(out_of_range());
                    }
                    Instruction::LdrLitWide { rt, add: delta >= 0, imm: delta.unsigned_abs() as u16 }
                }
                FixupKind::Word { thumb } => {
                    let w = target | u32::from(thumb);
                    self.bytes[fixup.offset..fixup.offset + 4].copy_from_slice(&w.to_le_bytes());
                    continue;
                }
            };
            let encoded = instruction.encode().map_err(|_| out_of_range())?;
            let bytes = encoded.to_bytes();
            debug_assert_eq!(
                bytes.len(),
                match encoded {
                    Encoding::Narrow(_) => 2,
                    Encoding::Wide(..) => 4,
                }
            );
            self.bytes[fixup.offset..fixup.offset + bytes.len()].copy_from_slice(&bytes);
        }
        Ok(Program { origin: self.origin, bytes: self.bytes, labels: self.labels })
    }
}

/// Encodes a pair of narrow instructions as the little-endian word they
/// occupy in memory; the first instruction lands in the low halfword.
pub fn word_of(first: Instruction, second: Instruction) -> Result<u32, Error> {
    let lo = match first.encode()? {
        Encoding::Narrow(h) => h,
        Encoding::Wide(..) => return Err(Error::Manifest("word_of takes narrow instructions".into())),
    };
    let hi = match second.encode()? {
        Encoding::Narrow(h) => h,
        Encoding::Wide(..) => return Err(Error::Manifest("word_of takes narrow instructions".into())),
    };
    Ok(u32::from(hi) << 16 | u32::from(lo))
}

/// A `b` from `from` to `to` as a raw halfword.
pub fn branch_halfword(from: u32, to: u32) -> Result<u16, Error> {
    let offset = to.wrapping_sub(from.wrapping_add(4)) as i32;
    match (Instruction::B { offset }).encode()? {
        Encoding::Narrow(h) => Ok(h),
        Encoding::Wide(..) => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::decode;

    #[test]
    fn labels_and_branches_resolve() {
        let mut a = Assembler::new(0x0800_0000);
        a.label("top");
        a.nop();
        a.b_cond(Cond::Ne, "top");
        a.bl("far");
        a.b("top");
        a.space(0x400);
        a.label("far");
        a.bx(Reg::LR);
        let p = a.finish().unwrap();
        assert_eq!(&p.bytes[..4], &[0x00, 0xBF, 0xFD, 0xD1]);
        let bl = decode(u16::from_le_bytes([p.bytes[4], p.bytes[5]]), Some(u16::from_le_bytes([p.bytes[6], p.bytes[7]])));
        assert_eq!(bl.branch_target(0x0800_0004), Some(p.addr("far")));
        assert_eq!(p.addr("far"), 0x0800_040A);
    }

    #[test]
    fn literal_pool_is_aligned_and_shared() {
        let mut a = Assembler::new(0x0800_0002);
        a.ldr_const(Reg::R0, 0xDEAD_BEEF);
        a.ldr_const(Reg::R1, 0xDEAD_BEEF);
        a.ldr_addr(Reg::R2, "x", true);
        a.label("x");
        a.pool();
        let p = a.finish().unwrap();
        assert_eq!(p.end() - p.origin, 6 + 8);
        assert_eq!(p.word_at(0x0800_0008), Some(0xDEAD_BEEF));
        assert_eq!(p.word_at(0x0800_000C), Some(0x0800_0009));
        let ldr0 = decode(u16::from_le_bytes([p.bytes[0], p.bytes[1]]), None);
        let ldr1 = decode(u16::from_le_bytes([p.bytes[2], p.bytes[3]]), None);
        assert_eq!(ldr0, Instruction::LdrLit { rt: Reg::R0, imm: 4 });
        assert_eq!(ldr1, Instruction::LdrLit { rt: Reg::R1, imm: 0 });
    }

    #[test]
    fn errors_surface_at_finish() {
        let mut a = Assembler::new(0);
        a.b("nowhere");
        assert!(matches!(a.finish(), Err(Error::UndefinedLabel(_))));
        let mut a = Assembler::new(0);
        a.label("x");
        a.label("x");
        assert!(matches!(a.finish(), Err(Error::DuplicateLabel(_))));
        let mut a = Assembler::new(0);
        a.b("far");
        a.space(4096);
        a.label("far");
        assert!(matches!(a.finish(), Err(Error::FixupOutOfRange { .. })));
        let mut a = Assembler::new(0);
        a.movs(Reg::R8, 1);
        assert!(matches!(a.finish(), Err(Error::Encode(_))));
    }

    #[test]
    fn word_of_places_first_instruction_low() {
        let w = word_of(
            Instruction::LoadStoreImm { load: true, size: MemSize::Word, rt: Reg::R0, rn: Reg::R0, imm: 0 },
            Instruction::Bx { rm: Reg::LR },
        )
        .unwrap();
        assert_eq!(w, 0x4770_6800);
        assert_eq!(branch_halfword(0x100, 0x100).unwrap(), 0xE7FE);
    }
}
