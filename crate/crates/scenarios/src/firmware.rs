//! Building blocks shared by the scenario firmware images.

use fpb_emu::asm::{Assembler, Program};
use fpb_emu::bus::MmioWrite;
use fpb_emu::isa::Reg;
use fpb_emu::machine::{DEFAULT_FLASH_BASE, DEFAULT_MMIO_BASE, DEFAULT_SRAM_BASE};
use fpb_emu::mpu::{rasr, CTRL_ENABLE, CTRL_PRIVDEFENA, MPU_CTRL, MPU_RBAR, RBAR_VALID};
use fpb_emu::Machine;

use crate::context::ScenarioError;

pub const FLASH: u32 = DEFAULT_FLASH_BASE;
pub const SRAM: u32 = DEFAULT_SRAM_BASE;
pub const STACK_TOP: u32 = SRAM + 0x8000;
/// Output port the firmware reports through; every write is logged.
pub const OUT: u32 = DEFAULT_MMIO_BASE;

/// RASR access-permission encodings used by the scenario firmware.
pub const AP_PRIV_RW: u32 = 0b001;
pub const AP_FULL: u32 = 0b011;
pub const AP_READ_ONLY: u32 = 0b110;

pub const MPU_ON: u32 = CTRL_ENABLE | CTRL_PRIVDEFENA;

/// Default handler label emitted by [`unhandled`].
pub const UNHANDLED: &str = "unhandled";

/// Emits a 16-entry vector table. Entry 1 points at `reset`; entries named in
/// `handlers` point at their label and everything else at [`UNHANDLED`].
pub fn vector_table(a: &mut Assembler, stack_top: u32, handlers: &[(u32, &str)]) {
    a.word(stack_top);
    for n in 1..16 {
        let label = match handlers.iter().find(|(h, _)| *h == n) {
            Some((_, l)) => l,
            None if n == 1 => "reset",
            None => UNHANDLED,
        };
        a.word_label(label, true);
    }
}

pub fn unhandled(a: &mut Assembler) {
    a.label(UNHANDLED);
    a.b_self();
}

/// One MPU region as programmed through RBAR/RASR.
#[derive(Debug, Clone, Copy)]
pub struct Region {
    pub index: u32,
    pub base: u32,
    pub size_log2: u32,
    pub ap: u32,
    pub xn: bool,
}

/// The usual map: flash read-only and executable, SRAM and the output port
/// read/write and not executable.
pub fn standard_regions() -> Vec<Region> {
    vec![
        Region { index: 0, base: FLASH, size_log2: 20, ap: AP_READ_ONLY, xn: false },
        Region { index: 1, base: SRAM, size_log2: 18, ap: AP_FULL, xn: true },
        Region { index: 2, base: OUT, size_log2: 12, ap: AP_FULL, xn: true },
    ]
}

/// Emits code programming `regions` and then MPU_CTRL. Clobbers r0 and r1;
/// constants go to the next literal pool.
pub fn emit_mpu_setup(a: &mut Assembler, regions: &[Region], ctrl: u32) {
    a.ldr_const(Reg::R0, MPU_RBAR);
    for r in regions {
        a.ldr_const(Reg::R1, r.base | RBAR_VALID | r.index);
        a.str(Reg::R1, Reg::R0, 0);
        a.ldr_const(Reg::R1, rasr(r.size_log2, r.ap, r.xn, true));
        a.str(Reg::R1, Reg::R0, 4);
    }
    a.ldr_const(Reg::R0, MPU_CTRL);
    a.ldr_const(Reg::R1, ctrl);
    a.str(Reg::R1, Reg::R0, 0);
    a.dsb();
    a.isb();
}

/// Sets CONTROL.nPRIV; thread code continues unprivileged on MSP.
pub fn emit_drop_privilege(a: &mut Assembler) {
    a.movs(Reg::R0, 1);
    a.msr_control(Reg::R0);
    a.isb();
}

/// `*(OUT + offset) = value` using r6/r7.
pub fn emit_report(a: &mut Assembler, offset: u32, value: u8) {
    a.ldr_const(Reg::R7, OUT + offset);
    a.movs(Reg::R6, value);
    a.str(Reg::R6, Reg::R7, 0);
}

pub fn finish(a: Assembler) -> Result<Program, ScenarioError> {
    Ok(a.finish()?)
}

/// Loads a program and boots the core from the configured VTOR.
pub fn load_and_boot(machine: &mut Machine, programs: &[&Program]) -> Result<(), ScenarioError> {
    for p in programs {
        machine.load_bytes(p.origin, &p.bytes)?;
    }
    machine.boot_core();
    Ok(())
}

pub fn words_to_bytes(words: &[u32]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_le_bytes()).collect()
}

/// Values written to `OUT + offset`, in order.
pub fn outputs(machine: &Machine, offset: u32) -> Vec<u32> {
    machine.bus.mmio_log().iter().filter(|w: &&MmioWrite| w.address == OUT + offset).map(|w| w.value).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use fpb_emu::machine::Stop;
    use fpb_emu::mpu::Privilege;
    use fpb_emu::MachineConfig;

    #[test]
    fn standard_setup_runs_and_restricts() {
        let mut a = Assembler::new(FLASH);
        vector_table(&mut a, STACK_TOP, &[]);
        unhandled(&mut a);
        a.label("reset");
        emit_mpu_setup(&mut a, &standard_regions(), MPU_ON);
        emit_drop_privilege(&mut a);
        emit_report(&mut a, 0, 0x42);
        a.b_self();
        a.pool();
        let p = finish(a).unwrap();
        let mut m = Machine::new(MachineConfig::default()).unwrap();
        load_and_boot(&mut m, &[&p]).unwrap();
        m.run_until(&[Stop::MmioWrite, Stop::MaxSteps(200)]);
        assert_eq!(outputs(&m, 0), vec![0x42]);
        assert_eq!(m.privilege(), Privilege::Unprivileged);
        assert!(m.bus.mpu.enabled());
    }
}
