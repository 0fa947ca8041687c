//! RTOS tampering: keep a disabled MPU disabled across task switches by
//! turning the per-switch MPU setup into `bx lr`, plus a task-kill variant.

use fpb_emu::asm::{word_of, Assembler, Program};
use fpb_emu::isa::{Cond, Instruction, Reg};
use fpb_emu::machine::Stop;
use fpb_emu::mpu::MPU_CTRL;

use super::default_config;
use crate::attacker::Attacker;
use crate::context::{ScenarioContext, ScenarioError};
use crate::firmware::{self, load_and_boot, outputs, Region, AP_PRIV_RW, FLASH, MPU_ON, OUT, SRAM, STACK_TOP};
use crate::report::{ScenarioReport, Value};
use crate::{drive, ScenarioOutcome};

pub const NAME: &str = "minion_persistence";
pub const KILL_NAME: &str = "kill_protect_representative";
pub const SWITCHES: usize = 3;
const BUDGET: u64 = 5_000;

fn bx_lr_nop() -> Result<u32, ScenarioError> {
    Ok(word_of(Instruction::Bx { rm: Reg::LR }, Instruction::Nop)?)
}

/// Every `svc #1` is a task switch that reprograms the MPU and then prints
/// MPU_CTRL.
fn build() -> Result<Program, ScenarioError> {
    let mut a = Assembler::new(FLASH);
    firmware::vector_table(&mut a, STACK_TOP, &[(11, "svc_handler")]);
    firmware::unhandled(&mut a);
    a.align(4);
    a.label("mpu_setup");
    let mut regions = firmware::standard_regions();
    regions.push(Region { index: 3, base: SRAM + 0x1_0000, size_log2: 12, ap: AP_PRIV_RW, xn: true });
    firmware::emit_mpu_setup(&mut a, &regions, MPU_ON);
    a.bx(Reg::LR);
    a.pool();
    a.label("svc_handler");
    a.mov(Reg::R4, Reg::LR);
    a.bl("mpu_setup");
    a.ldr_const(Reg::R0, MPU_CTRL);
    a.ldr(Reg::R1, Reg::R0, 0);
    a.ldr_const(Reg::R2, OUT);
    a.str(Reg::R1, Reg::R2, 0);
    a.bx(Reg::R4);
    a.pool();
    a.label("reset");
    a.bl("mpu_setup");
    firmware::emit_drop_privilege(&mut a);
    a.label("task_loop");
    a.svc(1);
    a.b("task_loop");
    firmware::finish(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Variant {
    Control,
    Attack,
    /// Attack, with the FPB switched off again after the first switch.
    Revoked,
}

/// MPU_CTRL as printed at each task switch.
fn switches(session: &mut crate::Session, ctx: &ScenarioContext, variant: Variant) -> Result<Vec<u32>, ScenarioError> {
    let program = build()?;
    let run = match variant {
        Variant::Control => "control",
        Variant::Attack => "attack",
        Variant::Revoked => "revoked",
    };
    let mut m = session.machine(default_config(ctx)?)?;
    load_and_boot(&mut m, &[&program])?;
    session.run_for(&mut m, run, &[Stop::PcEquals(program.addr("task_loop"))], BUDGET);

    // The MPU has already been switched off (see svcall_mpu_disable); the
    // question is whether it stays off.
    let mut atk = Attacker::new(&mut m);
    atk.write(MPU_CTRL, 0)?;
    if variant != Variant::Control {
        atk.place_table(SRAM + 0x1000)?;
        atk.remap_code(0, program.addr("mpu_setup"), bx_lr_nop()?)?;
        atk.enable_fpb()?;
    }
    for n in 0..SWITCHES {
        session.run_for(&mut m, run, &[Stop::MmioWrite], BUDGET);
        if n == 0 && variant == Variant::Revoked {
            Attacker::new(&mut m).disable_fpb()?;
        }
    }
    Ok(outputs(&m, 0))
}

fn words(v: &[u32]) -> Value {
    Value::Text(v.iter().map(|w| format!("0x{w:08x}")).collect::<Vec<_>>().join(","))
}

pub fn minion_persistence(ctx: &ScenarioContext) -> ScenarioOutcome {
    drive(NAME, ctx, |session, report: &mut ScenarioReport| {
        let control = switches(session, ctx, Variant::Control)?;
        report.expect_eq("control.mpu_ctrl_per_switch", words(&control), words(&[MPU_ON; SWITCHES]));
        let attack = switches(session, ctx, Variant::Attack)?;
        report.expect_eq("attack.mpu_ctrl_per_switch", words(&attack), words(&[0; SWITCHES]));
        let revoked = switches(session, ctx, Variant::Revoked)?;
        report.expect_eq("revoked.mpu_ctrl_per_switch", words(&revoked), words(&[0, MPU_ON, MPU_ON]));
        report.expect_differs("attack.mpu_ctrl_per_switch", "control.mpu_ctrl_per_switch");
        Ok(())
    })
}

pub fn run(ctx: &ScenarioContext) -> ScenarioOutcome {
    minion_persistence(ctx)
}

const PROTECTED_TASK: u8 = 3;
const KILLED: u32 = 0xD1;
const DENIED: u32 = 0xDE;

/// `svc #2` kills the task in r0 unless `is_protected` says otherwise.
fn kill_firmware() -> Result<Program, ScenarioError> {
    let mut a = Assembler::new(FLASH);
    firmware::vector_table(&mut a, STACK_TOP, &[(11, "svc_handler")]);
    firmware::unhandled(&mut a);
    a.align(4);
    a.label("is_protected");
    a.movs(Reg::R1, PROTECTED_TASK);
    a.cmp(Reg::R0, Reg::R1);
    a.b_cond(Cond::Eq, "protected");
    a.movs(Reg::R0, 0);
    a.bx(Reg::LR);
    a.label("protected");
    a.movs(Reg::R0, 1);
    a.bx(Reg::LR);
    a.label("svc_handler");
    a.mov(Reg::R4, Reg::LR);
    a.ldr_sp(Reg::R0, 0);
    a.bl("is_protected");
    a.cmp_imm(Reg::R0, 0);
    a.b_cond(Cond::Ne, "deny");
    firmware::emit_report(&mut a, 0, KILLED as u8);
    a.bx(Reg::R4);
    a.label("deny");
    firmware::emit_report(&mut a, 0, DENIED as u8);
    a.bx(Reg::R4);
    a.pool();
    a.label("reset");
    firmware::emit_drop_privilege(&mut a);
    a.movs(Reg::R0, PROTECTED_TASK);
    a.svc(2);
    a.b_self();
    firmware::finish(a)
}

/// Representative task-kill tampering: the scheduler's protection check is
/// patched to always answer "not protected". Not part of the registry.
pub fn kill_protect_representative(ctx: &ScenarioContext) -> ScenarioOutcome {
    drive(KILL_NAME, ctx, |session, report: &mut ScenarioReport| {
        report.note("representative scenario; not a reproduction of a documented procedure");
        let program = kill_firmware()?;
        for arm in [false, true] {
            let run = if arm { "attack" } else { "control" };
            let mut m = session.machine(default_config(ctx)?)?;
            load_and_boot(&mut m, &[&program])?;
            if arm {
                let mut atk = Attacker::new(&mut m);
                atk.place_table(SRAM + 0x1000)?;
                let always_no = word_of(Instruction::MovImm { rd: Reg::R0, imm: 0 }, Instruction::Bx { rm: Reg::LR })?;
                atk.remap_code(0, program.addr("is_protected"), always_no)?;
                atk.enable_fpb()?;
            }
            session.run_for(&mut m, run, &[Stop::MmioWrite], BUDGET);
            let verdict = Value::Word(outputs(&m, 0).first().copied().unwrap_or(0));
            let expected = Value::Word(if arm { KILLED } else { DENIED });
            report.expect_eq(&format!("{run}.kill_verdict"), verdict, expected);
        }
        report.expect_differs("attack.kill_verdict", "control.kill_verdict");
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mpu_stays_off_across_switches() {
        let out = run(&ScenarioContext::default());
        assert!(out.report.passed, "{:#?}", out.report);
    }

    #[test]
    fn protected_task_gets_killed() {
        let out = kill_protect_representative(&ScenarioContext::default());
        assert!(out.report.passed, "{:#?}", out.report);
    }
}
