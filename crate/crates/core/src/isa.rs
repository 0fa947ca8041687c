//! Thumb-2 subset: instruction representation, decoder and encoder.
//!
//! Every variant maps to exactly one encoding, so `decode(encode(i)) == i`
//! holds for every instruction `encode` accepts, and for every 16-bit
//! halfword the decoder recognizes, `encode(decode(h)) == h`.

use std::fmt;

use thiserror::Error;

/// A core register index, `r0`..`r15`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(u8);

impl Reg {
    pub const R0: Reg = Reg(0);
    pub const R1: Reg = Reg(1);
    pub const R2: Reg = Reg(2);
    pub const R3: Reg = Reg(3);
    pub const R4: Reg = Reg(4);
    pub const R5: Reg = Reg(5);
    pub const R6: Reg = Reg(6);
    pub const R7: Reg = Reg(7);
    pub const R8: Reg = Reg(8);
    pub const R9: Reg = Reg(9);
    pub const R10: Reg = Reg(10);
    pub const R11: Reg = Reg(11);
    pub const R12: Reg = Reg(12);
    pub const SP: Reg = Reg(13);
    pub const LR: Reg = Reg(14);
    pub const PC: Reg = Reg(15);

    /// Builds a register from its number; panics above 15.
    pub const fn new(n: u8) -> Reg {
        assert!(n < 16, "register number out of range");
        Reg(n)
    }

    pub const fn index(self) -> usize {
        self.0 as usize
    }

    pub const fn number(self) -> u8 {
        self.0
    }

    pub const fn is_low(self) -> bool {
        self.0 < 8
    }

    /// All sixteen registers in numeric order.
    pub fn all() -> impl Iterator<Item = Reg> {
        (0..16).map(Reg)
    }

    /// `r0`..`r7`.
    pub fn low() -> impl Iterator<Item = Reg> {
        (0..8).map(Reg)
    }

    fn bits(word: u16, shift: u32) -> Reg {
        Reg(((word >> shift) & 0x7) as u8)
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            13 => f.write_str("sp"),
            14 => f.write_str("lr"),
            15 => f.write_str("pc"),
            n => write!(f, "r{n}"),
        }
    }
}

/// Branch conditions usable by the 16-bit conditional branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cond {
    Eq = 0,
    Ne = 1,
    Cs = 2,
    Cc = 3,
    Mi = 4,
    Pl = 5,
    Vs = 6,
    Vc = 7,
    Hi = 8,
    Ls = 9,
    Ge = 10,
    Lt = 11,
    Gt = 12,
    Le = 13,
}

impl Cond {
    pub const ALL: [Cond; 14] = [
        Cond::Eq,
        Cond::Ne,
        Cond::Cs,
        Cond::Cc,
        Cond::Mi,
        Cond::Pl,
        Cond::Vs,
        Cond::Vc,
        Cond::Hi,
        Cond::Ls,
        Cond::Ge,
        Cond::Lt,
        Cond::Gt,
        Cond::Le,
    ];

    fn from_bits(bits: u16) -> Option<Cond> {
        Cond::ALL.get(bits as usize).copied()
    }

    /// Evaluates the condition against APSR flags.
    pub fn holds(self, n: bool, z: bool, c: bool, v: bool) -> bool {
        match self {
            Cond::Eq => z,
            Cond::Ne => !z,
            Cond::Cs => c,
            Cond::Cc => !c,
            Cond::Mi => n,
            Cond::Pl => !n,
            Cond::Vs => v,
            Cond::Vc => !v,
            Cond::Hi => c && !z,
            Cond::Ls => !c || z,
            Cond::Ge => n == v,
            Cond::Lt => n != v,
            Cond::Gt => !z && n == v,
            Cond::Le => z || n != v,
        }
    }

    fn suffix(self) -> &'static str {
        match self {
            Cond::Eq => "eq",
            Cond::Ne => "ne",
            Cond::Cs => "cs",
            Cond::Cc => "cc",
            Cond::Mi => "mi",
            Cond::Pl => "pl",
            Cond::Vs => "vs",
            Cond::Vc => "vc",
            Cond::Hi => "hi",
            Cond::Ls => "ls",
            Cond::Ge => "ge",
            Cond::Lt => "lt",
            Cond::Gt => "gt",
            Cond::Le => "le",
        }
    }
}

/// Two-register data-processing operations (`0100 00xx xx` group) in the subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AluOp {
    And,
    Eor,
    Orr,
    Mul,
}

impl AluOp {
    pub const ALL: [AluOp; 4] = [AluOp::And, AluOp::Eor, AluOp::Orr, AluOp::Mul];

    fn opcode(self) -> u16 {
        match self {
            AluOp::And => 0b0000,
            AluOp::Eor => 0b0001,
            AluOp::Orr => 0b1100,
            AluOp::Mul => 0b1101,
        }
    }

    fn mnemonic(self) -> &'static str {
        match self {
            AluOp::And => "ands",
            AluOp::Eor => "eors",
            AluOp::Orr => "orrs",
            AluOp::Mul => "muls",
        }
    }
}

/// Access size of the immediate-offset load/store forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MemSize {
    Word,
    Half,
    Byte,
}

impl MemSize {
    pub const ALL: [MemSize; 3] = [MemSize::Word, MemSize::Half, MemSize::Byte];

    pub fn bytes(self) -> u32 {
        match self {
            MemSize::Word => 4,
            MemSize::Half => 2,
            MemSize::Byte => 1,
        }
    }

    fn suffix(self) -> &'static str {
        match self {
            MemSize::Word => "",
            MemSize::Half => "h",
            MemSize::Byte => "b",
        }
    }
}

/// One instruction of the supported subset.
///
/// Immediate offsets are stored as byte values (already scaled); branch
/// offsets are relative to the instruction address plus four.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    /// `lsls rd, rm, #shift` (shift 0 is the flag-setting register move).
    LslImm { rd: Reg, rm: Reg, shift: u8 },
    /// `lsrs rd, rm, #shift`, shift in 1..=32.
    LsrImm { rd: Reg, rm: Reg, shift: u8 },
    AddReg { rd: Reg, rn: Reg, rm: Reg },
    SubReg { rd: Reg, rn: Reg, rm: Reg },
    /// `adds rd, rn, #imm3`
    AddImm3 { rd: Reg, rn: Reg, imm: u8 },
    /// `subs rd, rn, #imm3`
    SubImm3 { rd: Reg, rn: Reg, imm: u8 },
    /// `movs rd, #imm8`
    MovImm { rd: Reg, imm: u8 },
    CmpImm { rn: Reg, imm: u8 },
    /// `adds rdn, #imm8`
    AddImm8 { rdn: Reg, imm: u8 },
    /// `subs rdn, #imm8`
    SubImm8 { rdn: Reg, imm: u8 },
    Alu { op: AluOp, rdn: Reg, rm: Reg },
    CmpReg { rn: Reg, rm: Reg },
    /// `add rdn, rm` on any registers, flags untouched.
    AddHigh { rdn: Reg, rm: Reg },
    /// `mov rd, rm` on any registers, flags untouched.
    MovReg { rd: Reg, rm: Reg },
    Bx { rm: Reg },
    Blx { rm: Reg },
    /// `ldr rt, [pc, #imm]`, imm a multiple of 4 up to 1020.
    LdrLit { rt: Reg, imm: u16 },
    /// `ldr.w rt, [pc, #+/-imm12]`.
    LdrLitWide { rt: Reg, add: bool, imm: u16 },
    /// `ldr`/`str` with a register offset (word size).
    LoadStoreReg { load: bool, rt: Reg, rn: Reg, rm: Reg },
    /// `ldr{h,b}`/`str{h,b}` with an immediate offset.
    LoadStoreImm { load: bool, size: MemSize, rt: Reg, rn: Reg, imm: u8 },
    /// `ldr`/`str` relative to `sp`, imm a multiple of 4 up to 1020.
    LoadStoreSp { load: bool, rt: Reg, imm: u16 },
    Svc { imm: u8 },
    Bkpt { imm: u8 },
    Nop,
    /// Conditional branch, offset in -256..=254.
    BCond { cond: Cond, offset: i32 },
    /// Unconditional branch, offset in -2048..=2046.
    B { offset: i32 },
    /// Branch with link, offset in -16 MiB..16 MiB.
    Bl { offset: i32 },
    /// `msr control, rn`
    MsrControl { rn: Reg },
    /// `mrs rd, control`
    MrsControl { rd: Reg },
    Dsb,
    Isb,
    /// Anything outside the subset. Executing it raises a fault.
    Undefined { lo: u16, hi: Option<u16> },
}

/// The encoded form of one instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Encoding {
    Narrow(u16),
    Wide(u16, u16),
}

impl Encoding {
    pub fn halfwords(self) -> Vec<u16> {
        match self {
            Encoding::Narrow(h) => vec![h],
            Encoding::Wide(a, b) => vec![a, b],
        }
    }

    pub fn len_bytes(self) -> u32 {
        match self {
            Encoding::Narrow(_) => 2,
            Encoding::Wide(..) => 4,
        }
    }

    /// Little-endian bytes as they would sit in memory.
    pub fn to_bytes(self) -> Vec<u8> {
        self.halfwords().into_iter().flat_map(u16::to_le_bytes).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("operand out of encodable range for `{instruction}`: {reason}")]
    UnencodableOperand { instruction: String, reason: &'static str },
}

/// True when `lo` is the first halfword of a 32-bit instruction.
pub fn is_wide(lo: u16) -> bool {
    matches!(lo >> 11, 0b11101..=0b11111)
}

fn sign_extend(value: u32, bits: u32) -> i32 {
    let shift = 32 - bits;
    ((value << shift) as i32) >> shift
}

/// Decodes one instruction. `hi` is consulted only when `lo` is a wide prefix.
pub fn decode(lo: u16, hi: Option<u16>) -> Instruction {
    if is_wide(lo) {
        match hi {
            Some(hi) => decode_wide(lo, hi),
            None => Instruction::Undefined { lo, hi: None },
        }
    } else {
        decode_narrow(lo)
    }
}

fn decode_narrow(h: u16) -> Instruction {
    use Instruction::*;
    let undef = Undefined { lo: h, hi: None };
    let low3 = |s| Reg::bits(h, s);
    let imm5 = ((h >> 6) & 0x1F) as u8;
    let imm8 = (h & 0xFF) as u8;
    match h >> 11 {
        0b00000 => LslImm { rd: low3(0), rm: low3(3), shift: imm5 },
        0b00001 => LsrImm { rd: low3(0), rm: low3(3), shift: if imm5 == 0 { 32 } else { imm5 } },
        0b00011 => {
            let (rd, rn) = (low3(0), low3(3));
            let field = ((h >> 6) & 0x7) as u8;
            match (h >> 9) & 0x3 {
                0b00 => AddReg { rd, rn, rm: Reg(field) },
                0b01 => SubReg { rd, rn, rm: Reg(field) },
                0b10 => AddImm3 { rd, rn, imm: field },
                _ => SubImm3 { rd, rn, imm: field },
            }
        }
        0b00100 => MovImm { rd: low3(8), imm: imm8 },
        0b00101 => CmpImm { rn: low3(8), imm: imm8 },
        0b00110 => AddImm8 { rdn: low3(8), imm: imm8 },
        0b00111 => SubImm8 { rdn: low3(8), imm: imm8 },
        0b01000 => {
            if h & 0x0400 == 0 {
                let (rdn, rm) = (low3(0), low3(3));
                match (h >> 6) & 0xF {
                    0b0000 => Alu { op: AluOp::And, rdn, rm },
                    0b0001 => Alu { op: AluOp::Eor, rdn, rm },
                    0b1010 => CmpReg { rn: rdn, rm },
                    0b1100 => Alu { op: AluOp::Orr, rdn, rm },
                    0b1101 => Alu { op: AluOp::Mul, rdn, rm },
                    _ => undef,
                }
            } else {
                let rm = Reg(((h >> 3) & 0xF) as u8);
                let rdn = Reg((((h >> 4) & 0x8) | (h & 0x7)) as u8);
                match (h >> 8) & 0x3 {
                    0b00 => AddHigh { rdn, rm },
                    0b10 => MovReg { rd: rdn, rm },
                    0b11 if h & 0x7 == 0 => {
                        if h & 0x80 == 0 {
                            Bx { rm }
                        } else {
                            Blx { rm }
                        }
                    }
                    _ => undef,
                }
            }
        }
        0b01001 => LdrLit { rt: low3(8), imm: u16::from(imm8) * 4 },
        0b01010 | 0b01011 => match (h >> 9) & 0x7 {
            0b000 => LoadStoreReg { load: false, rt: low3(0), rn: low3(3), rm: low3(6) },
            0b100 => LoadStoreReg { load: true, rt: low3(0), rn: low3(3), rm: low3(6) },
            _ => undef,
        },
        0b01100 | 0b01101 => LoadStoreImm {
            load: h & 0x0800 != 0,
            size: MemSize::Word,
            rt: low3(0),
            rn: low3(3),
            imm: imm5 * 4,
        },
        0b01110 | 0b01111 => LoadStoreImm {
            load: h & 0x0800 != 0,
            size: MemSize::Byte,
            rt: low3(0),
            rn: low3(3),
            imm: imm5,
        },
        0b10000 | 0b10001 => LoadStoreImm {
            load: h & 0x0800 != 0,
            size: MemSize::Half,
            rt: low3(0),
            rn: low3(3),
            imm: imm5 * 2,
        },
        0b10010 | 0b10011 => LoadStoreSp {
            load: h & 0x0800 != 0,
            rt: low3(8),
            imm: u16::from(imm8) * 4,
        },
        0b10111 => match h & 0xFF00 {
            0xBE00 => Bkpt { imm: imm8 },
            0xBF00 if imm8 == 0 => Nop,
            _ => undef,
        },
        0b11010 | 0b11011 => match (h >> 8) & 0xF {
            0xF => Svc { imm: imm8 },
            c => match Cond::from_bits(c) {
                Some(cond) => BCond { cond, offset: sign_extend(u32::from(imm8), 8) * 2 },
                None => undef,
            },
        },
        0b11100 => B { offset: sign_extend(u32::from(h & 0x7FF), 11) * 2 },
        _ => undef,
    }
}

fn decode_wide(lo: u16, hi: u16) -> Instruction {
    use Instruction::*;
    let undef = Undefined { lo, hi: Some(hi) };

    // BL: 11110 S imm10 | 11 J1 1 J2 imm11
    if lo & 0xF800 == 0xF000 && hi & 0xD000 == 0xD000 {
        let s = u32::from((lo >> 10) & 1);
        let imm10 = u32::from(lo & 0x3FF);
        let j1 = u32::from((hi >> 13) & 1);
        let j2 = u32::from((hi >> 11) & 1);
        let imm11 = u32::from(hi & 0x7FF);
        let i1 = !(j1 ^ s) & 1;
        let i2 = !(j2 ^ s) & 1;
        let raw = (s << 24) | (i1 << 23) | (i2 << 22) | (imm10 << 12) | (imm11 << 1);
        return Bl { offset: sign_extend(raw, 25) };
    }
    // LDR (literal) T2: 1111 1000 U101 1111 | Rt imm12
    if lo & 0xFF7F == 0xF85F {
        return LdrLitWide {
            rt: Reg((hi >> 12) as u8),
            add: lo & 0x0080 != 0,
            imm: hi & 0x0FFF,
        };
    }
    // MSR CONTROL: F38n 8814
    if lo & 0xFFF0 == 0xF380 && hi == 0x8814 {
        return MsrControl { rn: Reg((lo & 0xF) as u8) };
    }
    // MRS CONTROL: F3EF 8d14
    if lo == 0xF3EF && hi & 0xF0FF == 0x8014 {
        return MrsControl { rd: Reg(((hi >> 8) & 0xF) as u8) };
    }
    match (lo, hi) {
        (0xF3BF, 0x8F4F) => Dsb,
        (0xF3BF, 0x8F6F) => Isb,
        _ => undef,
    }
}

impl Instruction {
    /// Encodes the instruction, checking every operand against its field.
    pub fn encode(&self) -> Result<Encoding, EncodeError> {
        use Instruction::*;
        let err = |reason| EncodeError::UnencodableOperand { instruction: self.to_string(), reason };
        let low = |r: Reg| -> Result<u16, EncodeError> {
            if r.is_low() {
                Ok(u16::from(r.0))
            } else {
                Err(err("register must be r0-r7"))
            }
        };
        let narrow = |h: u16| Ok(Encoding::Narrow(h));
        match *self {
            LslImm { rd, rm, shift } => {
                if shift > 31 {
                    return Err(err("shift must be 0-31"));
                }
                narrow((u16::from(shift) << 6) | (low(rm)? << 3) | low(rd)?)
            }
            LsrImm { rd, rm, shift } => {
                if !(1..=32).contains(&shift) {
                    return Err(err("shift must be 1-32"));
                }
                narrow(0x0800 | ((u16::from(shift) & 0x1F) << 6) | (low(rm)? << 3) | low(rd)?)
            }
            AddReg { rd, rn, rm } => narrow(0x1800 | (low(rm)? << 6) | (low(rn)? << 3) | low(rd)?),
            SubReg { rd, rn, rm } => narrow(0x1A00 | (low(rm)? << 6) | (low(rn)? << 3) | low(rd)?),
            AddImm3 { rd, rn, imm } | SubImm3 { rd, rn, imm } => {
                if imm > 7 {
                    return Err(err("immediate must be 0-7"));
                }
                let base = if matches!(self, AddImm3 { .. }) { 0x1C00 } else { 0x1E00 };
                narrow(base | (u16::from(imm) << 6) | (low(rn)? << 3) | low(rd)?)
            }
            MovImm { rd, imm } => narrow(0x2000 | (low(rd)? << 8) | u16::from(imm)),
            CmpImm { rn, imm } => narrow(0x2800 | (low(rn)? << 8) | u16::from(imm)),
            AddImm8 { rdn, imm } => narrow(0x3000 | (low(rdn)? << 8) | u16::from(imm)),
            SubImm8 { rdn, imm } => narrow(0x3800 | (low(rdn)? << 8) | u16::from(imm)),
            Alu { op, rdn, rm } => narrow(0x4000 | (op.opcode() << 6) | (low(rm)? << 3) | low(rdn)?),
            CmpReg { rn, rm } => narrow(0x4280 | (low(rm)? << 3) | low(rn)?),
            AddHigh { rdn, rm } | MovReg { rd: rdn, rm } => {
                let base = if matches!(self, AddHigh { .. }) { 0x4400 } else { 0x4600 };
                let d = u16::from(rdn.0);
                narrow(base | ((d & 0x8) << 4) | (u16::from(rm.0) << 3) | (d & 0x7))
            }
            Bx { rm } => narrow(0x4700 | (u16::from(rm.0) << 3)),
            Blx { rm } => narrow(0x4780 | (u16::from(rm.0) << 3)),
            LdrLit { rt, imm } => {
                if imm % 4 != 0 || imm > 1020 {
                    return Err(err("literal offset must be a multiple of 4 up to 1020"));
                }
                narrow(0x4800 | (low(rt)? << 8) | (imm / 4))
            }
            LdrLitWide { rt, add, imm } => {
                if imm > 0xFFF {
                    return Err(err("literal offset must fit 12 bits"));
                }
                let lo = 0xF85F | if add { 0x0080 } else { 0 };
                Ok(Encoding::Wide(lo, (u16::from(rt.0) << 12) | imm))
            }
            LoadStoreReg { load, rt, rn, rm } => {
                let base = if load { 0x5800 } else { 0x5000 };
                narrow(base | (low(rm)? << 6) | (low(rn)? << 3) | low(rt)?)
            }
            LoadStoreImm { load, size, rt, rn, imm } => {
                let scale = size.bytes() as u8;
                if imm % scale != 0 || imm / scale > 31 {
                    return Err(err("offset must be a scaled 5-bit immediate"));
                }
                let base = match size {
                    MemSize::Word => 0x6000,
                    MemSize::Byte => 0x7000,
                    MemSize::Half => 0x8000,
                };
                let l = if load { 0x0800 } else { 0 };
                narrow(base | l | (u16::from(imm / scale) << 6) | (low(rn)? << 3) | low(rt)?)
            }
            LoadStoreSp { load, rt, imm } => {
                if imm % 4 != 0 || imm > 1020 {
                    return Err(err("sp offset must be a multiple of 4 up to 1020"));
                }
                let base = if load { 0x9800 } else { 0x9000 };
                narrow(base | (low(rt)? << 8) | (imm / 4))
            }
            Svc { imm } => narrow(0xDF00 | u16::from(imm)),
            Bkpt { imm } => narrow(0xBE00 | u16::from(imm)),
            Nop => narrow(0xBF00),
            BCond { cond, offset } => {
                if offset % 2 != 0 || !(-256..=254).contains(&offset) {
                    return Err(err("conditional branch offset out of range"));
                }
                narrow(0xD000 | ((cond as u16) << 8) | ((offset >> 1) as u16 & 0xFF))
            }
            B { offset } => {
                if offset % 2 != 0 || !(-2048..=2046).contains(&offset) {
                    return Err(err("branch offset out of range"));
                }
                narrow(0xE000 | ((offset >> 1) as u16 & 0x7FF))
            }
            Bl { offset } => {
                if offset % 2 != 0 || !(-(1 << 24)..(1 << 24)).contains(&offset) {
                    return Err(err("branch-with-link offset out of range"));
                }
                let raw = offset as u32;
                let s = (raw >> 24) & 1;
                let i1 = (raw >> 23) & 1;
                let i2 = (raw >> 22) & 1;
                let j1 = !(i1 ^ s) & 1;
                let j2 = !(i2 ^ s) & 1;
                let lo = 0xF000 | (s << 10) | ((raw >> 12) & 0x3FF);
                let hi = 0xD000 | (j1 << 13) | (j2 << 11) | ((raw >> 1) & 0x7FF);
                Ok(Encoding::Wide(lo as u16, hi as u16))
            }
            MsrControl { rn } => Ok(Encoding::Wide(0xF380 | u16::from(rn.0), 0x8814)),
            MrsControl { rd } => Ok(Encoding::Wide(0xF3EF, 0x8014 | (u16::from(rd.0) << 8))),
            Dsb => Ok(Encoding::Wide(0xF3BF, 0x8F4F)),
            Isb => Ok(Encoding::Wide(0xF3BF, 0x8F6F)),
            Undefined { .. } => Err(err("undefined instructions have no encoding")),
        }
    }

    /// Size in bytes once encoded.
    pub fn size(&self) -> u32 {
        use Instruction::*;
        match self {
            LdrLitWide { .. } | Bl { .. } | MsrControl { .. } | MrsControl { .. } | Dsb | Isb => 4,
            Undefined { hi: Some(_), .. } => 4,
            _ => 2,
        }
    }

    /// Absolute branch target for PC-relative branches at `pc`.
    pub fn branch_target(&self, pc: u32) -> Option<u32> {
        match *self {
            Instruction::B { offset } | Instruction::BCond { offset, .. } | Instruction::Bl { offset } => {
                Some(pc.wrapping_add(4).wrapping_add(offset as u32))
            }
            _ => None,
        }
    }

    /// Disassembly with PC-relative operands resolved against `pc`.
    pub fn disassemble(&self, pc: u32) -> String {
        match *self {
            Instruction::B { .. } => format!("b 0x{:08x}", self.branch_target(pc).unwrap()),
            Instruction::BCond { cond, .. } => {
                format!("b{} 0x{:08x}", cond.suffix(), self.branch_target(pc).unwrap())
            }
            Instruction::Bl { .. } => format!("bl 0x{:08x}", self.branch_target(pc).unwrap()),
            _ => self.to_string(),
        }
    }
}

/// Free-function form of [`Instruction::encode`].
pub fn encode(instruction: &Instruction) -> Result<Encoding, EncodeError> {
    instruction.encode()
}

impl fmt::Display for Instruction {
    /// Unified assembler syntax. PC-relative branches print their raw offset.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Instruction::*;
        match *self {
            LslImm { rd, rm, shift: 0 } => write!(f, "movs {rd}, {rm}"),
            LslImm { rd, rm, shift } => write!(f, "lsls {rd}, {rm}, #{shift}"),
            LsrImm { rd, rm, shift } => write!(f, "lsrs {rd}, {rm}, #{shift}"),
            AddReg { rd, rn, rm } => write!(f, "adds {rd}, {rn}, {rm}"),
            SubReg { rd, rn, rm } => write!(f, "subs {rd}, {rn}, {rm}"),
            AddImm3 { rd, rn, imm } => write!(f, "adds {rd}, {rn}, #{imm}"),
            SubImm3 { rd, rn, imm } => write!(f, "subs {rd}, {rn}, #{imm}"),
            MovImm { rd, imm } => write!(f, "movs {rd}, #{imm}"),
            CmpImm { rn, imm } => write!(f, "cmp {rn}, #{imm}"),
            AddImm8 { rdn, imm } => write!(f, "adds {rdn}, #{imm}"),
            SubImm8 { rdn, imm } => write!(f, "subs {rdn}, #{imm}"),
            Alu { op: AluOp::Mul, rdn, rm } => write!(f, "muls {rdn}, {rm}, {rdn}"),
            Alu { op, rdn, rm } => write!(f, "{} {rdn}, {rm}", op.mnemonic()),
            CmpReg { rn, rm } => write!(f, "cmp {rn}, {rm}"),
            AddHigh { rdn, rm } => write!(f, "add {rdn}, {rm}"),
            MovReg { rd, rm } => write!(f, "mov {rd}, {rm}"),
            Bx { rm } => write!(f, "bx {rm}"),
            Blx { rm } => write!(f, "blx {rm}"),
            LdrLit { rt, imm } => write!(f, "ldr {rt}, [pc, #{imm}]"),
            LdrLitWide { rt, add, imm } => {
                write!(f, "ldr.w {rt}, [pc, #{}{imm}]", if add { "" } else { "-" })
            }
            LoadStoreReg { load, rt, rn, rm } => {
                write!(f, "{} {rt}, [{rn}, {rm}]", if load { "ldr" } else { "str" })
            }
            LoadStoreImm { load, size, rt, rn, imm } => write!(
                f,
                "{}{} {rt}, [{rn}, #{imm}]",
                if load { "ldr" } else { "str" },
                size.suffix()
            ),
            LoadStoreSp { load, rt, imm } => {
                write!(f, "{} {rt}, [sp, #{imm}]", if load { "ldr" } else { "str" })
            }
            Svc { imm } => write!(f, "svc #{imm}"),
            Bkpt { imm } => write!(f, "bkpt #{imm}"),
            Nop => f.write_str("nop"),
            BCond { cond, offset } => write!(f, "b{} #{offset}", cond.suffix()),
            B { offset } => write!(f, "b #{offset}"),
            Bl { offset } => write!(f, "bl #{offset}"),
            MsrControl { rn } => write!(f, "msr control, {rn}"),
            MrsControl { rd } => write!(f, "mrs {rd}, control"),
            Dsb => f.write_str("dsb sy"),
            Isb => f.write_str("isb sy"),
            Undefined { lo, hi: None } => write!(f, "udf 0x{lo:04x}"),
            Undefined { lo, hi: Some(hi) } => write!(f, "udf 0x{lo:04x}{hi:04x}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn narrow(i: Instruction) -> u16 {
        match i.encode().unwrap() {
            Encoding::Narrow(h) => h,
            e => panic!("expected narrow encoding, got {e:?}"),
        }
    }

    // Values produced by an LLVM Thumb assembler (thumbv7m-none-eabi).
    #[test]
    fn reference_assembler_spot_checks() {
        assert_eq!(decode(0x4800, None), Instruction::LdrLit { rt: Reg::R0, imm: 0 });
        assert_eq!(decode(0x4770, None), Instruction::Bx { rm: Reg::LR });
        assert_eq!(decode(0xdf00, None), Instruction::Svc { imm: 0 });
        let ldr_r0_r0 = Instruction::LoadStoreImm {
            load: true,
            size: MemSize::Word,
            rt: Reg::R0,
            rn: Reg::R0,
            imm: 0,
        };
        assert_eq!(narrow(ldr_r0_r0), 0x6800);
        assert_eq!(narrow(Instruction::Svc { imm: 0 }), 0xdf00);
        assert_eq!(
            Instruction::MsrControl { rn: Reg::R1 }.encode().unwrap(),
            Encoding::Wide(0xf381, 0x8814)
        );
        assert_eq!(
            Instruction::MrsControl { rd: Reg::R2 }.encode().unwrap(),
            Encoding::Wide(0xf3ef, 0x8214)
        );
        assert_eq!(
            Instruction::LdrLitWide { rt: Reg::R3, add: false, imm: 8 }.encode().unwrap(),
            Encoding::Wide(0xf85f, 0x3008)
        );
        assert_eq!(narrow(Instruction::Alu { op: AluOp::Mul, rdn: Reg::R0, rm: Reg::R1 }), 0x4348);
        assert_eq!(narrow(Instruction::MovReg { rd: Reg::R8, rm: Reg::R1 }), 0x4688);
    }

    #[test]
    fn short_branch_out_of_range_is_rejected() {
        assert!(matches!(
            Instruction::B { offset: 2048 }.encode(),
            Err(EncodeError::UnencodableOperand { .. })
        ));
        assert!(Instruction::B { offset: -2050 }.encode().is_err());
        assert!(Instruction::B { offset: 3 }.encode().is_err());
        assert!(Instruction::B { offset: -2048 }.encode().is_ok());
    }

    #[test]
    fn high_register_in_narrow_field_is_rejected() {
        let i = Instruction::MovImm { rd: Reg::R8, imm: 1 };
        assert!(i.encode().is_err());
    }

    #[test]
    fn wide_prefix_without_second_halfword_is_undefined() {
        assert_eq!(decode(0xF000, None), Instruction::Undefined { lo: 0xF000, hi: None });
    }

    #[test]
    fn bl_offsets_at_the_extremes() {
        for offset in [-(1 << 24), (1 << 24) - 2, 0, -2, 0x1000, -0x123456] {
            let i = Instruction::Bl { offset };
            let Encoding::Wide(lo, hi) = i.encode().unwrap() else { panic!() };
            assert_eq!(decode(lo, Some(hi)), i, "offset {offset}");
        }
    }

    #[test]
    fn every_recognized_narrow_halfword_reencodes_identically() {
        let mut recognized = 0;
        for h in 0..=u16::MAX {
            if is_wide(h) {
                continue;
            }
            let i = decode(h, None);
            if matches!(i, Instruction::Undefined { .. }) {
                continue;
            }
            recognized += 1;
            assert_eq!(i.encode(), Ok(Encoding::Narrow(h)), "halfword {h:#06x} -> {i}");
        }
        assert!(recognized > 40_000, "only {recognized} halfwords recognized");
    }
}
