//! Attack scenarios for the FPB emulator.
//!
//! Each scenario assembles its own firmware, plays an attacker that can write
//! the FPB, MPU and SCB registers, runs the machine and compares what it
//! observes with a control run in which the attack is left disarmed.

pub mod attacker;
pub mod context;
pub mod firmware;
pub mod report;
pub mod scenarios;

use fpb_emu::trace::TraceLine;

pub use context::{MachineOverrides, ScenarioContext, ScenarioError, Session};
pub use report::{Expect, Observation, ScenarioReport, Value};

/// A finished scenario: its report plus the trace of every step it ran.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub report: ScenarioReport,
    pub trace: Vec<TraceLine>,
}

/// Runs a scenario body, turning an early error into a failed observation.
pub(crate) fn drive(
    name: &str,
    ctx: &ScenarioContext,
    body: impl FnOnce(&mut Session, &mut ScenarioReport) -> Result<(), ScenarioError>,
) -> ScenarioOutcome {
    let mut session = Session::new(name, ctx);
    let mut report = ScenarioReport::new(name);
    if let Err(e) = body(&mut session, &mut report) {
        report.expect_eq("error", Value::Text(e.code().to_string()), Value::Text("none".to_string()));
        report.note(e.to_string());
    }
    report.steps = session.steps();
    ScenarioOutcome { report, trace: session.into_trace() }
}

pub struct ScenarioEntry {
    pub name: &'static str,
    pub summary: &'static str,
    pub run: fn(&ScenarioContext) -> ScenarioOutcome,
}

static REGISTRY: [ScenarioEntry; 10] = [
    ScenarioEntry {
        name: "baseline_reset_redirect",
        summary: "remap the reset handler entry to a branch into an unused function, then soft reset",
        run: scenarios::baseline::run,
    },
    ScenarioEntry {
        name: "bkpt_dos",
        summary: "breakpoint on a hot function with DebugMonitor mapped to a spin loop; survives soft reset",
        run: scenarios::bkpt::run_dos,
    },
    ScenarioEntry {
        name: "cfi_bypass",
        summary: "remap monitored svc call sites to direct branches so the branch monitor never runs",
        run: scenarios::cfi::run,
    },
    ScenarioEntry {
        name: "derandomize_epoxy",
        summary: "locate a remappable array-base literal, then walk flash to recover a shuffled function layout",
        run: scenarios::derandomize::run,
    },
    ScenarioEntry {
        name: "jlink_clone",
        summary: "redirect the IAP entry literal to a dispatcher that reports a genuine unique ID",
        run: scenarios::jlink::run,
    },
    ScenarioEntry {
        name: "minion_persistence",
        summary: "turn the per-task MPU setup routine into bx lr so a disabled MPU stays disabled",
        run: scenarios::minion::run,
    },
    ScenarioEntry {
        name: "mpu_bypass_literal_leak",
        summary: "point a literal comparator's table slot at a privileged word and let user code load it",
        run: scenarios::mpu_bypass::run,
    },
    ScenarioEntry {
        name: "svcall_arbitrary_read",
        summary: "replace the SVCall handler with a load-anywhere gadget fed by a remapped literal",
        run: scenarios::svcall::run_arbitrary_read,
    },
    ScenarioEntry {
        name: "svcall_mpu_disable",
        summary: "replace the SVCall handler with a store of zero to MPU_CTRL",
        run: scenarios::svcall::run_mpu_disable,
    },
    ScenarioEntry {
        name: "vtor_hijack",
        summary: "relocate the vector table to SRAM and route a breakpoint-raised DebugMonitor into a payload",
        run: scenarios::bkpt::run_vtor_hijack,
    },
];

/// Every registered scenario, sorted by name.
pub fn registry() -> &'static [ScenarioEntry] {
    &REGISTRY
}

pub fn find(name: &str) -> Option<&'static ScenarioEntry> {
    REGISTRY.iter().find(|e| e.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_is_sorted_and_unique() {
        let names: Vec<_> = registry().iter().map(|e| e.name).collect();
        let mut sorted = names.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(names, sorted);
        assert_eq!(names.len(), 10);
        assert!(find("jlink_clone").is_some());
        assert!(find("nosuch").is_none());
    }
}
