//! Acceptance checks. One PASS/FAIL line per criterion; exits non-zero if
//! any fail.

mod decoder;
mod transparency;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use fpb_emu::fpb::FpbConfig;
use fpb_emu::{Machine, MachineConfig};
use fpb_scenarios::attacker::Attacker;
use fpb_scenarios::scenarios::{bkpt, cfi, derandomize, jlink, minion, mpu_bypass, svcall};
use fpb_scenarios::{ScenarioContext, ScenarioOutcome, ScenarioReport, Value};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TRANSPARENCY_CONFIGS: usize = 1000;
const TRANSPARENCY_LIMIT: Duration = Duration::from_secs(5);
const ARBITRARY_READS: usize = 100;
const DERANDOMIZE_SEEDS: u64 = 20;
const DERANDOMIZE_LIMIT: Duration = Duration::from_secs(30);

type Check = Result<String, String>;

fn ctx() -> ScenarioContext {
    ScenarioContext::default()
}

/// Fails with the report's failing observations unless it passed.
fn passed(out: &ScenarioOutcome) -> Result<&ScenarioReport, String> {
    let r = &out.report;
    if r.passed {
        return Ok(r);
    }
    let failing: Vec<String> = r
        .observations
        .iter()
        .filter(|o| o.ok() == Some(false))
        .map(|o| format!("{}={:?}", o.label, o.value))
        .collect();
    Err(format!("{} failed: {} {:?}", r.name, failing.join(", "), r.notes))
}

fn require(report: &ScenarioReport, label: &str, want: Value) -> Result<(), String> {
    match report.get(label) {
        Some(v) if *v == want => Ok(()),
        other => Err(format!("{}: {label} is {other:?}, want {want:?}", report.name)),
    }
}

fn remap_transparency() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7A5);
    let start = Instant::now();
    for n in 0..TRANSPARENCY_CONFIGS {
        transparency::check_one(&mut rng).map_err(|e| format!("config {n}: {e}"))?;
    }
    let elapsed = start.elapsed();
    if elapsed >= TRANSPARENCY_LIMIT {
        return Err(format!("{TRANSPARENCY_CONFIGS} configs took {elapsed:.2?}, limit {TRANSPARENCY_LIMIT:?}"));
    }
    Ok(format!("{TRANSPARENCY_CONFIGS} configs in {elapsed:.2?}"))
}

fn mpu_bypass() -> Check {
    let out = mpu_bypass::run(&ctx());
    let r = passed(&out)?;
    require(r, "control.memmanage", Value::Count(1))?;
    require(r, "attack.memmanage", Value::Count(0))?;
    Ok(format!("leaked {:x?}", r.get("attack.printed").cloned().unwrap_or(Value::Flag(false))))
}

fn svcall() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5C);
    for _ in 0..ARBITRARY_READS {
        let (addr, value) = svcall::random_target(&mut rng);
        let out = svcall::svcall_arbitrary_read(&ctx(), (addr, value));
        let r = passed(&out)?;
        require(r, "attack.r0", Value::Word(value))?;
    }
    let out = svcall::run_mpu_disable(&ctx());
    let r = passed(&out)?;
    require(r, "attack.mpu_ctrl", Value::Word(0))?;
    require(r, "attack.protected_store_succeeded", Value::Flag(true))?;
    require(r, "control.protected_store_succeeded", Value::Flag(false))?;
    Ok(format!("{ARBITRARY_READS} planted words read back; MPU_CTRL=0 and denied store succeeds"))
}

fn persistence() -> Check {
    let out = minion::run(&ctx());
    passed(&out)?;
    Ok(format!("MPU off across {} switches, control re-enables each switch", minion::SWITCHES))
}

fn cfi_bypass() -> Check {
    let out = cfi::run(&ctx());
    let r = passed(&out)?;
    require(r, "forward.fn_c_reached", Value::Flag(true))?;
    require(r, "forward.monitor_calls", Value::Count(0))?;
    let control = r.get("control.monitor_calls").cloned();
    Ok(format!("fn_c reached with counter 0; control counter {control:?}"))
}

fn derandomization() -> Check {
    let start = Instant::now();
    let mut worst = 0;
    for seed in 0..DERANDOMIZE_SEEDS {
        let out = derandomize::derandomize_epoxy(&ctx(), seed, true);
        let r = passed(&out).map_err(|e| format!("seed {seed}: {e}"))?;
        require(r, "attack.layout_matches", Value::Flag(true))?;
        match r.get("attack.guesses") {
            Some(Value::Count(g)) if *g <= derandomize::SLOTS as u64 => worst = worst.max(*g),
            other => return Err(format!("seed {seed}: guesses {other:?}")),
        }
    }
    let elapsed = start.elapsed();
    if elapsed >= DERANDOMIZE_LIMIT {
        return Err(format!("{DERANDOMIZE_SEEDS} seeds took {elapsed:.2?}, limit {DERANDOMIZE_LIMIT:?}"));
    }
    Ok(format!("{DERANDOMIZE_SEEDS} layouts recovered, worst {worst}/{} guesses, {elapsed:.2?}", derandomize::SLOTS))
}

fn breakpoint_dos() -> Check {
    let out = bkpt::run_dos(&ctx());
    let r = passed(&out)?;
    require(r, "mon_en.debugmonitor_spin", Value::Flag(true))?;
    require(r, "mon_dis.escalated_to_hardfault", Value::Flag(true))?;
    require(r, "mon_dis.locked_up", Value::Flag(true))?;
    require(r, "after_reset.fpb_enabled", Value::Flag(true))?;
    require(r, "after_reset.debugmonitor_spin", Value::Flag(true))?;
    Ok("spin with mon_en=1, HardFault then lockup with mon_en=0, recurs after SystemReset".into())
}

fn vtor_hijack() -> Check {
    let out = bkpt::run_vtor_hijack(&ctx());
    let r = passed(&out)?;
    require(r, "attack.mode", Value::Text("Handler".into()))?;
    Ok(format!("payload leaked {:x?}", r.get("attack.payload_output").cloned().unwrap_or(Value::Flag(false))))
}

fn jlink_spoof() -> Check {
    let out = jlink::run(&ctx());
    let r = passed(&out)?;
    require(r, "attack.license_ok", Value::Flag(true))?;
    require(r, "control.license_ok", Value::Flag(false))?;
    require(r, "attack.iap51_status", Value::Word(0))?;
    Ok("clone verifies with the override, fails without; selector 51 forwarded".into())
}

fn decoder_soundness() -> Check {
    let checked = decoder::round_trip()?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spots = decoder::spots();
    let sources: Vec<&str> = spots.iter().map(|s| s.source).collect();
    let (oracle, words) = match decoder::assemble(&sources, dir.path()) {
        Some(w) => ("clang", w),
        None => ("pinned", spots.iter().map(|s| s.pinned).collect()),
    };
    if words.len() != spots.len() {
        return Err(format!("{oracle} produced {} halfwords for {} lines", words.len(), spots.len()));
    }
    for (spot, &h) in spots.iter().zip(&words) {
        let decoded = fpb_emu::isa::decode(h, None);
        if decoded != spot.expected {
            return Err(format!("{oracle}: `{}` = {h:#06x} decodes to {decoded:?}", spot.source));
        }
        let ours = spot.expected.encode().map_err(|e| e.to_string())?;
        if ours != fpb_emu::isa::Encoding::Narrow(h) {
            return Err(format!("{oracle}: `{}` = {h:#06x}, we encode {ours:x?}", spot.source));
        }
    }
    Ok(format!("{checked} encodable instructions round-trip; spot checks against {oracle}"))
}

fn alignment_formula() -> Check {
    let cfg = FpbConfig::new(6, 2, true).map_err(|e| e.to_string())?;
    let direct = cfg.required_alignment();
    let mut config = MachineConfig::default();
    config.fpb = cfg;
    let mut m = Machine::new(config).map_err(|e| e.to_string())?;
    let from_ctrl = Attacker::new(&mut m).required_alignment().map_err(|e| e.to_string())?;
    // Independent: one 4-byte table word per comparator.
    let oracle = (6 + 2) * 4;
    if direct != oracle || from_ctrl != oracle {
        return Err(format!("config {direct}, from FP_CTRL {from_ctrl}, want {oracle}"));
    }
    Ok(format!("required_alignment(6, 2) = {direct}"))
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Check); 11] = [
        ("remap transparency", remap_transparency),
        ("mpu bypass via literal remap", mpu_bypass),
        ("privileged arbitrary read + MPU disable", svcall),
        ("persistence across task switches", persistence),
        ("cfi bypass", cfi_bypass),
        ("layout derandomization", derandomization),
        ("breakpoint DoS + persistence", breakpoint_dos),
        ("vtor hijack", vtor_hijack),
        ("j-link clone spoof", jlink_spoof),
        ("decoder soundness", decoder_soundness),
        ("alignment formula", alignment_formula),
    ];
    let mut failures = 0;
    for (n, (name, check)) in checks.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail}", n + 1),
            Err(reason) => {
                failures += 1;
                println!("FAIL [{:>2}] {name}: {reason}", n + 1);
            }
        }
    }
    println!("{} passed, {failures} failed", checks.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
