//! Redirect the reset handler into a function nothing calls.

use fpb_emu::asm::{word_of, Assembler, Program};
use fpb_emu::isa::{Instruction, Reg};
use fpb_emu::machine::Stop;
use fpb_emu::scb::{AIRCR, AIRCR_SYSRESETREQ, AIRCR_VECTKEY};

use super::default_config;
use crate::attacker::Attacker;
use crate::context::{ScenarioContext, ScenarioError, Session};
use crate::firmware::{self, load_and_boot, outputs, FLASH, OUT, SRAM, STACK_TOP};
use crate::report::{ScenarioReport, Value};
use crate::{drive, ScenarioOutcome};

pub const NAME: &str = "baseline_reset_redirect";
const PAYLOAD_MARK: u32 = 0xBAD0_C0DE;
const BUDGET: u64 = 2_000;

fn build() -> Result<Program, ScenarioError> {
    let mut a = Assembler::new(FLASH);
    firmware::vector_table(&mut a, STACK_TOP, &[]);
    firmware::unhandled(&mut a);
    a.align(4);
    a.label("reset");
    firmware::emit_report(&mut a, 0, 1);
    a.b_self();
    a.pool();
    a.label("payload");
    a.ldr_const(Reg::R0, OUT + 4);
    a.ldr_const(Reg::R1, PAYLOAD_MARK);
    a.str(Reg::R1, Reg::R0, 0);
    a.b_self();
    firmware::finish(a)
}

/// Boots, optionally arms the redirect, soft resets and reports whether the
/// payload ran.
fn attempt(session: &mut Session, ctx: &ScenarioContext, run: &str, enable: bool) -> Result<bool, ScenarioError> {
    let program = build()?;
    let (reset, payload) = (program.addr("reset"), program.addr("payload"));
    let mut m = session.machine(default_config(ctx)?)?;
    load_and_boot(&mut m, &[&program])?;
    session.run_for(&mut m, run, &[Stop::MmioWrite], BUDGET);

    let mut atk = Attacker::new(&mut m);
    atk.place_table(SRAM + 0x1000)?;
    let redirect = word_of(Instruction::B { offset: payload.wrapping_sub(reset + 4) as i32 }, Instruction::Nop)?;
    atk.remap_code(0, reset, redirect)?;
    if enable {
        atk.enable_fpb()?;
    }
    atk.write(AIRCR, AIRCR_VECTKEY | AIRCR_SYSRESETREQ)?;

    session.run_for(&mut m, run, &[Stop::PcEquals(payload)], BUDGET);
    let reached = m.pc() == payload;
    session.run_for(&mut m, run, &[Stop::MmioWrite], BUDGET);
    Ok(reached && outputs(&m, 4) == [PAYLOAD_MARK])
}

pub fn baseline_reset_redirect(ctx: &ScenarioContext) -> ScenarioOutcome {
    drive(NAME, ctx, |session, report: &mut ScenarioReport| {
        let control = attempt(session, ctx, "control", false)?;
        report.expect_eq("control.payload_reached", Value::Flag(control), Value::Flag(false));
        let attack = attempt(session, ctx, "attack", true)?;
        report.expect_eq("attack.payload_reached", Value::Flag(attack), Value::Flag(true));
        report.expect_differs("attack.payload_reached", "control.payload_reached");
        Ok(())
    })
}

pub fn run(ctx: &ScenarioContext) -> ScenarioOutcome {
    baseline_reset_redirect(ctx)
}
