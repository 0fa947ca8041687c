//! Spoof the unique ID a probe firmware uses to check its license.
//!
//! The device is modeled after an LPC part: a boot ROM that validates the
//! application's vector checksum and an IAP dispatcher at a fixed address.
//! The application asks IAP for the unique ID, MACs it together with its
//! license words and compares the result with a stored MAC. The attacker
//! appends code to the application that points a literal comparator at the
//! stored IAP entry literal, so the ID request lands in a fake dispatcher.

use fpb_emu::asm::{Assembler, Program};
use fpb_emu::bus::{MemoryKind, RegionSpec};
use fpb_emu::fpb::{comp_value, fp_comp_addr, FP_CTRL_ADDR, FP_CTRL_ENABLE, FP_CTRL_KEY, FP_REMAP_ADDR, REPLACE_REMAP};
use fpb_emu::isa::{Cond, Reg};
use fpb_emu::machine::Stop;
use fpb_emu::scb::VTOR;
use fpb_emu::MachineConfig;

use crate::attacker::lcm;
use crate::context::{ScenarioContext, ScenarioError, Session};
use crate::firmware::{self, outputs};
use crate::report::{ScenarioReport, Value};
use crate::{drive, ScenarioOutcome};

pub const NAME: &str = "jlink_clone";
pub const ROM_BASE: u32 = 0x1040_0000;
pub const IAP_ENTRY: u32 = 0x1040_0100;
pub const UID_ADDR: u32 = 0x1040_0F00;
pub const APP_BASE: u32 = 0x1A00_0000;
const PATCH_BASE: u32 = APP_BASE + 0x1000;
const SRAM: u32 = 0x2000_0000;
const STACK_TOP: u32 = SRAM + 0x8000;
const OUT: u32 = 0x4000_0000;
const FLASH_CTL: u32 = OUT + 0x100;
const BOOT_STATUS: u32 = 0x20;
const BAD_CHECKSUM: u8 = 0xBC;
const UID_BUF: u32 = SRAM + 0x100;

pub const IAP_READ_UID: u8 = 58;
pub const IAP_COPY_RAM_TO_FLASH: u8 = 51;

pub const GENUINE_UID: [u32; 4] = [0x0A1B_2C3D, 0x4E5F_6071, 0x8293_A4B5, 0xC6D7_E8F9];
pub const CLONE_UID: [u32; 4] = [0x1111_2222, 0x3333_4444, 0x5555_6666, 0x7777_8888];
const LICENSE: [u32; 4] = [0x4C49_4345, 0x4E53_4531, 0x0000_0007, 0x2026_0101];

const FNV_OFFSET: u32 = 0x811C_9DC5;
const FNV_PRIME: u32 = 0x0100_0193;

/// Stand-in license MAC over the license words salted with the unique ID.
pub fn license_mac(license: &[u32], uid: &[u32; 4]) -> u32 {
    license.iter().chain(uid.iter()).fold(FNV_OFFSET, |h, &w| (h ^ w).wrapping_mul(FNV_PRIME))
}

/// Two's-complement vector checksum the boot ROM expects in entry 7.
pub fn vector_checksum(words: &[u32; 7]) -> u32 {
    words.iter().fold(0u32, |s, &w| s.wrapping_add(w)).wrapping_neg()
}

/// A device: boot ROM with IAP services and an immutable unique ID.
#[derive(Debug, Clone)]
pub struct LpcDeviceModel {
    unique_id: [u32; 4],
    rom: Program,
}

impl LpcDeviceModel {
    pub fn new(unique_id: [u32; 4]) -> Result<LpcDeviceModel, ScenarioError> {
        Ok(LpcDeviceModel { unique_id, rom: build_rom(&unique_id)? })
    }

    pub fn unique_id(&self) -> [u32; 4] {
        self.unique_id
    }

    pub fn iap_entry(&self) -> u32 {
        IAP_ENTRY
    }

    pub fn rom(&self) -> &Program {
        &self.rom
    }

    pub fn config(ctx: &ScenarioContext) -> Result<MachineConfig, ScenarioError> {
        let base = MachineConfig {
            regions: vec![
                RegionSpec::new("rom", ROM_BASE, 0x1_0000, MemoryKind::Flash),
                RegionSpec::new("flash", APP_BASE, 0x8_0000, MemoryKind::Flash),
                RegionSpec::new("sram", SRAM, 0x1_0000, MemoryKind::Sram),
                RegionSpec::new("mmio", OUT, 0x1000, MemoryKind::MmioStub),
            ],
            initial_vtor: ROM_BASE,
            ..MachineConfig::default()
        };
        ctx.overrides.apply(base)
    }
}

fn build_rom(uid: &[u32; 4]) -> Result<Program, ScenarioError> {
    let mut a = Assembler::new(ROM_BASE);
    firmware::vector_table(&mut a, STACK_TOP, &[(1, "rom_boot")]);
    firmware::unhandled(&mut a);
    a.label("rom_boot");
    a.ldr_const(Reg::R0, APP_BASE);
    a.movs(Reg::R1, 0);
    a.movs(Reg::R2, 0);
    a.label("sum");
    a.ldr_reg(Reg::R3, Reg::R0, Reg::R2);
    a.adds(Reg::R1, Reg::R1, Reg::R3);
    a.adds8(Reg::R2, 4);
    a.cmp_imm(Reg::R2, 32);
    a.b_cond(Cond::Ne, "sum");
    a.cmp_imm(Reg::R1, 0);
    a.b_cond(Cond::Ne, "bad_checksum");
    a.ldr_const(Reg::R1, VTOR);
    a.str(Reg::R0, Reg::R1, 0);
    a.ldr(Reg::R1, Reg::R0, 0);
    a.mov(Reg::SP, Reg::R1);
    a.ldr(Reg::R1, Reg::R0, 4);
    a.bx(Reg::R1);
    a.label("bad_checksum");
    firmware::emit_report(&mut a, BOOT_STATUS, BAD_CHECKSUM);
    a.b_self();
    a.pool();

    pad_to(&mut a, IAP_ENTRY)?;
    a.label("iap_entry");
    a.cmp_imm(Reg::R0, IAP_READ_UID);
    a.b_cond(Cond::Eq, "read_uid");
    a.cmp_imm(Reg::R0, IAP_COPY_RAM_TO_FLASH);
    a.b_cond(Cond::Eq, "copy_ram_to_flash");
    a.movs(Reg::R0, 1);
    a.bx(Reg::LR);
    a.label("read_uid");
    a.ldr_const(Reg::R2, UID_ADDR);
    emit_copy_uid(&mut a);
    a.movs(Reg::R0, 0);
    a.bx(Reg::LR);
    a.label("copy_ram_to_flash");
    a.ldr_const(Reg::R2, FLASH_CTL);
    a.movs(Reg::R3, IAP_COPY_RAM_TO_FLASH);
    a.str(Reg::R3, Reg::R2, 0);
    a.movs(Reg::R0, 0);
    a.bx(Reg::LR);
    a.pool();

    pad_to(&mut a, UID_ADDR)?;
    for w in uid {
        a.word(*w);
    }
    firmware::finish(a)
}

fn pad_to(a: &mut Assembler, address: u32) -> Result<(), ScenarioError> {
    let here = a.here();
    if here > address {
        return Err(ScenarioError::Firmware(format!("code runs past 0x{address:08x}")));
    }
    a.space((address - here) as usize);
    Ok(())
}

/// Copies four words from [r2] to [r1] through r3.
fn emit_copy_uid(a: &mut Assembler) {
    for off in [0, 4, 8, 12] {
        a.ldr(Reg::R3, Reg::R2, off);
        a.str(Reg::R3, Reg::R1, off);
    }
}

fn emit_mac_loop(a: &mut Assembler, label: &str) {
    a.movs(Reg::R3, 0);
    a.label(label);
    a.ldr_reg(Reg::R4, Reg::R2, Reg::R3);
    a.eors(Reg::R0, Reg::R4);
    a.muls(Reg::R0, Reg::R1);
    a.adds8(Reg::R3, 4);
    a.cmp_imm(Reg::R3, 16);
    a.b_cond(Cond::Ne, label);
}

/// The probe firmware: read the UID through IAP, check the license, print
/// the verdict on OUT, then issue an IAP copy-RAM-to-flash and print its
/// status on OUT+4. The vector checksum is filled in by [`with_checksum`].
pub fn build_app(genuine_uid: &[u32; 4]) -> Result<Program, ScenarioError> {
    let mut a = Assembler::new(APP_BASE);
    a.word(STACK_TOP);
    a.word_label("reset", true);
    for n in 2..16 {
        if n == 7 {
            a.word(0);
        } else {
            a.word_label(firmware::UNHANDLED, true);
        }
    }
    firmware::unhandled(&mut a);
    a.label("reset");
    a.movs(Reg::R0, IAP_READ_UID);
    a.ldr_const(Reg::R1, UID_BUF);
    a.bl("iap_call");
    a.ldr_const(Reg::R0, FNV_OFFSET);
    a.ldr_const(Reg::R1, FNV_PRIME);
    a.ldr_addr(Reg::R2, "license", false);
    emit_mac_loop(&mut a, "mac_license");
    a.ldr_const(Reg::R2, UID_BUF);
    emit_mac_loop(&mut a, "mac_uid");
    a.ldr_addr(Reg::R2, "stored_mac", false);
    a.ldr(Reg::R2, Reg::R2, 0);
    a.ldr_const(Reg::R3, OUT);
    a.cmp(Reg::R0, Reg::R2);
    a.b_cond(Cond::Ne, "license_bad");
    a.movs(Reg::R4, 1);
    a.str(Reg::R4, Reg::R3, 0);
    a.b("license_done");
    a.label("license_bad");
    a.movs(Reg::R4, 0);
    a.str(Reg::R4, Reg::R3, 0);
    a.label("license_done");
    a.movs(Reg::R0, IAP_COPY_RAM_TO_FLASH);
    a.ldr_const(Reg::R1, UID_BUF);
    a.bl("iap_call");
    a.ldr_const(Reg::R3, OUT + 4);
    a.str(Reg::R0, Reg::R3, 0);
    a.label("done");
    a.b_self();
    a.pool();
    a.align(4);
    a.label("iap_call");
    a.ldr_label(Reg::R2, "iap_literal");
    a.bx(Reg::R2);
    a.align(4);
    a.label("iap_literal");
    a.word(IAP_ENTRY | 1);
    a.label("license");
    for w in LICENSE {
        a.word(w);
    }
    a.label("stored_mac");
    a.word(license_mac(&LICENSE, genuine_uid));
    with_checksum(firmware::finish(a)?)
}

/// Rewrites vector entry 7 so the first eight entries sum to zero.
pub fn with_checksum(mut p: Program) -> Result<Program, ScenarioError> {
    let words: [u32; 7] = std::array::from_fn(|i| p.word_at(p.origin + 4 * i as u32).unwrap_or(0));
    p.bytes[28..32].copy_from_slice(&vector_checksum(&words).to_le_bytes());
    Ok(p)
}

/// Code the attacker appends to the application: program the FPB so the
/// IAP literal reads as `do_fake_dispatch`, then continue with the original
/// reset handler. `do_fake_dispatch` answers the UID request with
/// `genuine_uid` and forwards every other selector to the real IAP.
fn build_patch(app: &Program, config: &MachineConfig, genuine_uid: &[u32; 4]) -> Result<Program, ScenarioError> {
    let fpb = config.fpb;
    let slot = usize::from(fpb.num_code);
    if fpb.num_lit == 0 {
        return Err(ScenarioError::NotEnoughComparators { what: "literal", needed: 1, have: 0 });
    }
    let step = lcm(fpb.required_alignment().max(4), 32);
    let table = (SRAM + 0x400).div_ceil(step) * step;

    let mut a = Assembler::new(PATCH_BASE);
    a.label("enable_fake_dispatch");
    a.ldr_const(Reg::R0, FP_REMAP_ADDR);
    a.ldr_const(Reg::R1, table);
    a.str(Reg::R1, Reg::R0, 0);
    a.ldr_const(Reg::R0, table + 4 * slot as u32);
    a.ldr_addr(Reg::R1, "do_fake_dispatch", true);
    a.str(Reg::R1, Reg::R0, 0);
    a.ldr_const(Reg::R0, fp_comp_addr(slot));
    a.ldr_const(Reg::R1, comp_value(app.addr("iap_literal"), REPLACE_REMAP, true));
    a.str(Reg::R1, Reg::R0, 0);
    a.ldr_const(Reg::R0, FP_CTRL_ADDR);
    a.movs(Reg::R1, (FP_CTRL_KEY | FP_CTRL_ENABLE) as u8);
    a.str(Reg::R1, Reg::R0, 0);
    a.ldr_const(Reg::R0, app.addr("reset") | 1);
    a.bx(Reg::R0);
    a.pool();
    a.label("do_fake_dispatch");
    a.cmp_imm(Reg::R0, IAP_READ_UID);
    a.b_cond(Cond::Ne, "forward");
    a.ldr_addr(Reg::R2, "genuine_uid", false);
    emit_copy_uid(&mut a);
    a.movs(Reg::R0, 0);
    a.bx(Reg::LR);
    a.label("forward");
    a.ldr_const(Reg::R2, IAP_ENTRY | 1);
    a.bx(Reg::R2);
    a.pool();
    a.align(4);
    a.label("genuine_uid");
    for w in genuine_uid {
        a.word(*w);
    }
    firmware::finish(a)
}

/// The application with the patch appended and its reset vector pointing
/// at the patch; the vector checksum is recomputed only if asked to.
fn patched_app(app: &Program, patch: &Program, recompute_checksum: bool) -> Result<Program, ScenarioError> {
    let mut p = app.clone();
    p.bytes.resize((PATCH_BASE - APP_BASE) as usize, 0xFF);
    p.bytes.extend_from_slice(&patch.bytes);
    p.bytes[4..8].copy_from_slice(&(patch.addr("enable_fake_dispatch") | 1).to_le_bytes());
    if recompute_checksum {
        with_checksum(p)
    } else {
        Ok(p)
    }
}

struct DeviceRun {
    license_ok: bool,
    iap51_status: Option<u32>,
    flash_ctl: Vec<u32>,
}

fn run_device(
    session: &mut Session,
    ctx: &ScenarioContext,
    device: &LpcDeviceModel,
    app: &Program,
    run: &str,
) -> Result<DeviceRun, ScenarioError> {
    let mut m = session.machine(LpcDeviceModel::config(ctx)?)?;
    m.load_bytes(ROM_BASE, &device.rom().bytes)?;
    m.load_bytes(APP_BASE, &app.bytes)?;
    m.boot_core();
    session.run_for(&mut m, run, &[Stop::PcEquals(app.addr("done"))], 20_000);
    if outputs(&m, BOOT_STATUS).contains(&u32::from(BAD_CHECKSUM)) {
        return Err(ScenarioError::ChecksumMismatch);
    }
    let flash_ctl = m.bus.mmio_log().iter().filter(|w| w.address == FLASH_CTL).map(|w| w.value).collect();
    Ok(DeviceRun {
        license_ok: outputs(&m, 0) == [1],
        iap51_status: outputs(&m, 4).first().copied(),
        flash_ctl,
    })
}

pub fn jlink_clone(ctx: &ScenarioContext, genuine_uid: [u32; 4], clone_uid: [u32; 4]) -> ScenarioOutcome {
    drive(NAME, ctx, |session, report: &mut ScenarioReport| {
        let genuine = LpcDeviceModel::new(genuine_uid)?;
        let clone = LpcDeviceModel::new(clone_uid)?;
        let app = build_app(&genuine_uid)?;
        report.record("stored_mac", Value::Word(license_mac(&LICENSE, &genuine_uid)));

        let g = run_device(session, ctx, &genuine, &app, "genuine")?;
        report.expect_eq("genuine.license_ok", Value::Flag(g.license_ok), Value::Flag(true));
        let c = run_device(session, ctx, &clone, &app, "control")?;
        report.expect_eq("control.license_ok", Value::Flag(c.license_ok), Value::Flag(false));

        let patch = build_patch(&app, &LpcDeviceModel::config(ctx)?, &genuine_uid)?;
        let unchecked = patched_app(&app, &patch, false)?;
        let negative = match run_device(session, ctx, &clone, &unchecked, "stale_checksum") {
            Err(e) => e.code().to_string(),
            Ok(_) => "none".to_string(),
        };
        report.expect_eq("stale_checksum.error", Value::Text(negative), Value::Text("ChecksumMismatch".into()));

        let patched = patched_app(&app, &patch, true)?;
        let atk = run_device(session, ctx, &clone, &patched, "attack")?;
        report.expect_eq("attack.license_ok", Value::Flag(atk.license_ok), Value::Flag(true));
        report.expect_differs("attack.license_ok", "control.license_ok");
        let status = atk.iap51_status.map_or(Value::Text("none".into()), Value::Word);
        report.expect_eq("attack.iap51_status", status, Value::Word(0));
        report.expect_eq(
            "attack.iap51_forwarded",
            Value::Flag(atk.flash_ctl == [u32::from(IAP_COPY_RAM_TO_FLASH)]),
            Value::Flag(true),
        );
        Ok(())
    })
}

pub fn run(ctx: &ScenarioContext) -> ScenarioOutcome {
    jlink_clone(ctx, GENUINE_UID, CLONE_UID)
}
