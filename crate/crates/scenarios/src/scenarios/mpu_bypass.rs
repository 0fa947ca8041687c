//! Read a privileged-only word from unprivileged code by placing the remap
//! table so that a literal comparator's slot overlaps the secret.

use fpb_emu::asm::{Assembler, Program};
use fpb_emu::isa::Reg;
use fpb_emu::machine::{Stop, EXC_MEMMANAGE};
use fpb_emu::Machine;

use super::default_config;
use crate::attacker::Attacker;
use crate::context::{ScenarioContext, ScenarioError, Session};
use crate::firmware::{self, load_and_boot, outputs, Region, AP_PRIV_RW, FLASH, MPU_ON, OUT, SRAM, STACK_TOP};
use crate::report::{Expect, ScenarioReport, Value};
use crate::{drive, ScenarioOutcome};

pub const NAME: &str = "mpu_bypass_literal_leak";
pub const SECRET_REGION: u32 = SRAM + 0x1_0000;
pub const SECRET_VALUE: u32 = 0xCAFE_0001;
const PUBLIC_VALUE: u32 = 0x0000_1234;
const BUDGET: u64 = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UserCode {
    /// `ldr r0, public_lit` and print it.
    LiteralLoad,
    /// Load the secret address directly.
    DirectLoad,
}

fn build(user: UserCode, secret_addr: u32) -> Result<Program, ScenarioError> {
    let mut a = Assembler::new(FLASH);
    firmware::vector_table(&mut a, STACK_TOP, &[(4, "memmanage")]);
    firmware::unhandled(&mut a);
    a.label("memmanage");
    firmware::emit_report(&mut a, 8, 0xEE);
    a.b_self();
    a.pool();
    a.label("reset");
    let mut regions = firmware::standard_regions();
    regions.push(Region { index: 3, base: SECRET_REGION, size_log2: 10, ap: AP_PRIV_RW, xn: true });
    firmware::emit_mpu_setup(&mut a, &regions, MPU_ON);
    firmware::emit_drop_privilege(&mut a);
    a.b("user");
    a.pool();
    a.align(4);
    a.label("user");
    match user {
        UserCode::LiteralLoad => a.ldr_label(Reg::R0, "public_lit"),
        UserCode::DirectLoad => {
            a.ldr_const(Reg::R0, secret_addr);
            a.ldr(Reg::R0, Reg::R0, 0);
        }
    }
    a.ldr_const(Reg::R1, OUT);
    a.str(Reg::R0, Reg::R1, 0);
    a.b_self();
    a.pool();
    a.align(4);
    a.label("public_lit");
    a.word(PUBLIC_VALUE);
    firmware::finish(a)
}

struct RunOutcome {
    printed: Option<u32>,
    memmanage: usize,
}

fn boot(session: &Session, ctx: &ScenarioContext, program: &Program, secret_addr: u32) -> Result<Machine, ScenarioError> {
    let mut m = session.machine(default_config(ctx)?)?;
    m.load_bytes(secret_addr, &SECRET_VALUE.to_le_bytes())?;
    load_and_boot(&mut m, &[program])?;
    Ok(m)
}

fn finish_run(session: &mut Session, m: &mut Machine, run: &str) -> RunOutcome {
    session.run_for(m, run, &[Stop::MmioWrite], BUDGET);
    RunOutcome { printed: outputs(m, 0).first().copied(), memmanage: m.exceptions_taken(EXC_MEMMANAGE) }
}

fn printed(v: Option<u32>) -> Value {
    v.map_or(Value::Text("none".into()), Value::Word)
}

pub fn mpu_bypass_literal_leak(ctx: &ScenarioContext, secret_addr: Option<u32>) -> ScenarioOutcome {
    drive(NAME, ctx, |session, report: &mut ScenarioReport| {
        let config = default_config(ctx)?;
        let slot = usize::from(config.fpb.num_code);
        let literal = build(UserCode::LiteralLoad, 0)?;
        let public_lit = literal.addr("public_lit");

        // Pick the secret so the first literal slot overlaps it unless the
        // caller asked for a specific address.
        let secret_addr = match secret_addr {
            Some(a) => a,
            None => {
                let mut probe = session.machine(config.clone())?;
                let base = Attacker::new(&mut probe).table_base_near(SECRET_REGION + 0x100)?;
                base + 4 * slot as u32
            }
        };
        report.record("secret_addr", Value::Word(secret_addr));

        // Control: the same secret loaded directly from unprivileged code.
        let direct = build(UserCode::DirectLoad, secret_addr)?;
        let mut m = boot(session, ctx, &direct, secret_addr)?;
        let control = finish_run(session, &mut m, "control");
        report.expect("control.memmanage", Value::Count(control.memmanage as u64), Expect::Eq(Value::Count(1)));
        report.record("control.printed", printed(control.printed));

        // The literal load without the FPB prints the public value.
        let mut m = boot(session, ctx, &literal, secret_addr)?;
        let disarmed = finish_run(session, &mut m, "disarmed");
        report.expect_eq("disarmed.printed", printed(disarmed.printed), Value::Word(PUBLIC_VALUE));

        let mut m = boot(session, ctx, &literal, secret_addr)?;
        let expected = m.peek_word(secret_addr).ok_or(ScenarioError::ReadFaulted(secret_addr))?;
        let mut atk = Attacker::new(&mut m);
        let required = atk.required_alignment()?;
        report.expect_eq(
            "required_alignment",
            Value::Count(u64::from(required)),
            Value::Count(u64::from(config.fpb.required_alignment())),
        );
        let base = secret_addr.wrapping_sub(4 * slot as u32);
        let misaligned = matches!(
            atk.set_remap_base(base.wrapping_add(4)),
            Err(ScenarioError::Emulator(fpb_emu::Error::MisalignedRemapBase { .. }))
        );
        report.expect_eq("misaligned_base_rejected", Value::Flag(misaligned), Value::Flag(true));
        atk.set_remap_base(base)?;
        atk.require_literal(1)?;
        atk.write(fpb_emu::fpb::fp_comp_addr(slot), fpb_emu::fpb::comp_value(public_lit, 0, true))?;
        atk.enable_fpb()?;
        let attack = finish_run(session, &mut m, "attack");
        report.expect_eq("attack.printed", printed(attack.printed), Value::Word(expected));
        report.expect_eq("attack.memmanage", Value::Count(attack.memmanage as u64), Value::Count(0));
        report.expect_differs("attack.printed", "control.printed");
        Ok(())
    })
}

pub fn run(ctx: &ScenarioContext) -> ScenarioOutcome {
    mpu_bypass_literal_leak(ctx, None)
}
