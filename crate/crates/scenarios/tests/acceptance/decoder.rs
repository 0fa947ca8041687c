//! Decoder/encoder identity over the whole subset, plus spot checks against an
//! external Thumb assembler.

use std::path::Path;
use std::process::Command;

use fpb_emu::isa::{decode, is_wide, AluOp, Cond, Encoding, Instruction, MemSize, Reg};

fn regs() -> impl Iterator<Item = Reg> + Clone {
    (0..16).map(Reg::new)
}

/// Every operand combination in (and slightly past) each form's range.
/// Out-of-range values must be rejected by the encoder, not mangled.
fn candidates(mut visit: impl FnMut(Instruction)) {
    use Instruction::*;
    for rd in regs() {
        for rm in regs() {
            for shift in 0..=40 {
                visit(LslImm { rd, rm, shift });
                visit(LsrImm { rd, rm, shift });
            }
            for imm in 0..=9 {
                visit(AddImm3 { rd, rn: rm, imm });
                visit(SubImm3 { rd, rn: rm, imm });
            }
            for rn in regs() {
                visit(AddReg { rd, rn, rm });
                visit(SubReg { rd, rn, rm });
                visit(LoadStoreReg { load: true, rt: rd, rn, rm });
                visit(LoadStoreReg { load: false, rt: rd, rn, rm });
            }
            for op in AluOp::ALL {
                visit(Alu { op, rdn: rd, rm });
            }
            visit(CmpReg { rn: rd, rm });
            visit(AddHigh { rdn: rd, rm });
            visit(MovReg { rd, rm });
            for size in MemSize::ALL {
                for imm in 0..=130 {
                    visit(LoadStoreImm { load: true, size, rt: rd, rn: rm, imm });
                    visit(LoadStoreImm { load: false, size, rt: rd, rn: rm, imm });
                }
            }
        }
        for imm in 0..=255 {
            visit(MovImm { rd, imm });
            visit(CmpImm { rn: rd, imm });
            visit(AddImm8 { rdn: rd, imm });
            visit(SubImm8 { rdn: rd, imm });
        }
        for imm in 0..=1030 {
            visit(LdrLit { rt: rd, imm });
            visit(LoadStoreSp { load: true, rt: rd, imm });
            visit(LoadStoreSp { load: false, rt: rd, imm });
        }
        for imm in 0..=4100 {
            visit(LdrLitWide { rt: rd, add: true, imm });
            visit(LdrLitWide { rt: rd, add: false, imm });
        }
        visit(Bx { rm: rd });
        visit(Blx { rm: rd });
        visit(MsrControl { rn: rd });
        visit(MrsControl { rd });
    }
    for imm in 0..=255 {
        visit(Svc { imm });
        visit(Bkpt { imm });
    }
    visit(Nop);
    visit(Dsb);
    visit(Isb);
    for cond in Cond::ALL {
        for offset in -300..=300 {
            visit(BCond { cond, offset });
        }
    }
    for offset in -2100..=2100 {
        visit(B { offset });
    }
    for offset in (-(1 << 24) - 4)..((1 << 24) + 4) {
        visit(Bl { offset });
    }
}

fn decode_encoding(e: Encoding) -> Instruction {
    match e {
        Encoding::Narrow(h) => decode(h, None),
        Encoding::Wide(lo, hi) => decode(lo, Some(hi)),
    }
}

/// Number of encodable instructions checked, or the first mismatch.
pub fn round_trip() -> Result<u64, String> {
    let mut checked = 0u64;
    let mut failure = None;
    candidates(|i| {
        if failure.is_some() {
            return;
        }
        if let Ok(e) = i.encode() {
            checked += 1;
            let back = decode_encoding(e);
            if back != i {
                failure = Some(format!("{i:?} -> {e:x?} -> {back:?}"));
            }
        }
    });
    if let Some(f) = failure {
        return Err(f);
    }
    // And from the other side: every recognized narrow halfword.
    for h in 0..=u16::MAX {
        if is_wide(h) {
            continue;
        }
        let i = decode(h, None);
        if matches!(i, Instruction::Undefined { .. }) {
            continue;
        }
        if i.encode() != Ok(Encoding::Narrow(h)) {
            return Err(format!("halfword {h:#06x} decodes to {i:?} but re-encodes as {:x?}", i.encode()));
        }
    }
    Ok(checked)
}

pub struct Spot {
    pub source: &'static str,
    pub expected: Instruction,
    /// Value recorded from an LLVM Thumb assembler; used when no assembler
    /// is installed.
    pub pinned: u16,
}

pub fn spots() -> Vec<Spot> {
    vec![
        Spot { source: "bx lr", expected: Instruction::Bx { rm: Reg::LR }, pinned: 0x4770 },
        Spot { source: "svc #0", expected: Instruction::Svc { imm: 0 }, pinned: 0xdf00 },
        Spot { source: "ldr r0, [pc, #0]", expected: Instruction::LdrLit { rt: Reg::R0, imm: 0 }, pinned: 0x4800 },
    ]
}

/// Assembles `lines` with clang for thumbv7m and returns the raw halfwords,
/// or `None` when the toolchain is missing.
pub fn assemble(lines: &[&str], dir: &Path) -> Option<Vec<u16>> {
    let src = dir.join("spot.s");
    let bin = dir.join("spot.bin");
    std::fs::write(&src, lines.join("\n") + "\n").ok()?;
    let status = Command::new("clang")
        .args(["--target=thumbv7m-none-eabi", "-nostdlib", "-fuse-ld=lld", "-Wl,--oformat=binary", "-Wl,-e,0", "-o"])
        .arg(&bin)
        .arg(&src)
        .status()
        .ok()?;
    if !status.success() {
        return None;
    }
    let bytes = std::fs::read(&bin).ok()?;
    Some(bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
}
