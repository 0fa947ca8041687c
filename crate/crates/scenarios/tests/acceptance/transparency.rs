//! Randomized remap-transparency check.

use fpb_emu::asm::{word_of, Assembler, Program};
use fpb_emu::bus::Access;
use fpb_emu::fpb::{FP_CTRL_ADDR, FP_CTRL_KEY};
use fpb_emu::isa::{AluOp, Instruction, Reg};
use fpb_emu::machine::{StepRecord, Stop};
use fpb_emu::mpu::{AccessKind, Privilege};
use fpb_emu::trace::{write_jsonl, TraceLine};
use fpb_emu::{Machine, MachineConfig};
use fpb_scenarios::attacker::Attacker;
use fpb_scenarios::firmware::{self, load_and_boot, FLASH, SRAM, STACK_TOP};
use rand::Rng;

const BODY_LEN: usize = 24;

fn low(rng: &mut impl Rng) -> Reg {
    Reg::new(rng.gen_range(0..8))
}

/// A straight-line data-processing instruction; never branches or faults.
fn random_alu(rng: &mut impl Rng) -> Instruction {
    match rng.gen_range(0..6) {
        0 => Instruction::MovImm { rd: low(rng), imm: rng.gen() },
        1 => Instruction::AddImm3 { rd: low(rng), rn: low(rng), imm: rng.gen_range(0..8) },
        2 => Instruction::LslImm { rd: low(rng), rm: low(rng), shift: rng.gen_range(0..32) },
        3 => Instruction::AddReg { rd: low(rng), rn: low(rng), rm: low(rng) },
        4 => Instruction::SubImm8 { rdn: low(rng), imm: rng.gen() },
        _ => Instruction::Alu { op: AluOp::ALL[rng.gen_range(0..4)], rdn: low(rng), rm: low(rng) },
    }
}

fn program(rng: &mut impl Rng) -> Program {
    let mut a = Assembler::new(FLASH);
    firmware::vector_table(&mut a, STACK_TOP, &[]);
    firmware::unhandled(&mut a);
    a.align(4);
    a.label("reset");
    for _ in 0..BODY_LEN {
        a.emit(random_alu(rng));
    }
    a.label("end");
    a.b_self();
    firmware::finish(a).expect("straight-line program assembles")
}

fn fetch(m: &mut Machine, address: u32) -> Option<u32> {
    m.bus.read(Access::new(address, AccessKind::InstructionFetch, 2, Privilege::Privileged)).ok()
}

fn run(m: &mut Machine, end: u32) -> Vec<StepRecord> {
    m.enable_trace();
    m.run_until(&[Stop::PcEquals(end), Stop::MaxSteps(4 * BODY_LEN as u64)]);
    m.take_trace()
}

fn jsonl(records: &[StepRecord]) -> Vec<u8> {
    let lines: Vec<TraceLine> = records.iter().map(|r| TraceLine::from_record("t", "t", r)).collect();
    let mut out = Vec::new();
    write_jsonl(&mut out, &lines).expect("in-memory write");
    out
}

/// One randomized configuration. Returns a description of the first
/// violation, if any.
pub fn check_one(rng: &mut impl Rng) -> Result<(), String> {
    let num_code = rng.gen_range(1..=8u8);
    let num_lit = rng.gen_range(0..=3u8);
    let mut config = MachineConfig::default();
    config.fpb.num_code = num_code;
    config.fpb.num_lit = num_lit;
    let p = program(rng);
    let (start, end) = (p.addr("reset"), p.addr("end"));
    let words = (end - start) / 4;
    let matched = start + 4 * rng.gen_range(0..words);
    let index = rng.gen_range(0..usize::from(num_code));
    let replacement = word_of(random_alu(rng), random_alu(rng)).map_err(|e| e.to_string())?;

    let boot = |config: &MachineConfig| -> Result<Machine, String> {
        let mut m = Machine::new(config.clone()).map_err(|e| e.to_string())?;
        load_and_boot(&mut m, &[&p]).map_err(|e| e.to_string())?;
        Ok(m)
    };
    let mut clean = boot(&config)?;
    let mut armed = boot(&config)?;
    {
        let mut atk = Attacker::new(&mut armed);
        let near = SRAM + 0x1000 + 0x40 * rng.gen_range(0..256u32);
        atk.place_table(near).map_err(|e| e.to_string())?;
        atk.remap_code(index, matched, replacement).map_err(|e| e.to_string())?;
        if num_lit > 0 {
            // A literal comparator on another code word must not touch fetches.
            let lit = start + 4 * rng.gen_range(0..words);
            atk.remap_literal(0, lit, rng.gen()).map_err(|e| e.to_string())?;
        }
        atk.enable_fpb().map_err(|e| e.to_string())?;
    }

    for addr in (FLASH..p.end() + 16).step_by(2) {
        let want = if addr & !3 == matched {
            Some((replacement >> (8 * (addr & 2))) & 0xFFFF)
        } else {
            fetch(&mut clean, addr)
        };
        let got = fetch(&mut armed, addr);
        if got != want {
            return Err(format!("fetch at {addr:#010x}: got {got:x?}, want {want:x?} (matched {matched:#010x})"));
        }
    }

    for r in run(&mut armed, end) {
        let want = if r.pc & !3 == matched {
            (replacement >> (8 * (r.pc & 2))) as u16
        } else {
            let w = p.word_at(r.pc & !3).expect("pc inside the program");
            (w >> (8 * (r.pc & 2))) as u16
        };
        if r.raw.first() != Some(&want) {
            return Err(format!("executed {:x?} at {:#010x}, want {want:04x}", r.raw, r.pc));
        }
    }

    // Everything stays programmed; only FP_CTRL.ENABLE is cleared.
    let mut disabled = boot(&config)?;
    {
        let mut atk = Attacker::new(&mut disabled);
        atk.place_table(SRAM + 0x1000).map_err(|e| e.to_string())?;
        atk.remap_code(index, matched, replacement).map_err(|e| e.to_string())?;
        atk.enable_fpb().map_err(|e| e.to_string())?;
        atk.write(FP_CTRL_ADDR, FP_CTRL_KEY).map_err(|e| e.to_string())?;
    }
    let reference = jsonl(&run(&mut boot(&config)?, end));
    if jsonl(&run(&mut disabled, end)) != reference {
        return Err(format!("disabled FPB changed the trace (matched {matched:#010x})"));
    }
    Ok(())
}
