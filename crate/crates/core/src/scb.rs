//! System control block and debug registers.

pub const CPUID: u32 = 0xE000_ED00;
pub const VTOR: u32 = 0xE000_ED08;
pub const AIRCR: u32 = 0xE000_ED0C;
pub const SHPR1: u32 = 0xE000_ED18;
pub const SHPR2: u32 = 0xE000_ED1C;
pub const SHPR3: u32 = 0xE000_ED20;
pub const DHCSR: u32 = 0xE000_EDF0;
pub const DEMCR: u32 = 0xE000_EDFC;

/// Cortex-M4 r0p1.
pub const CPUID_VALUE: u32 = 0x410F_C241;
pub const VTOR_MASK: u32 = 0xFFFF_FF80;

pub const AIRCR_VECTKEY: u32 = 0x05FA << 16;
pub const AIRCR_VECTKEYSTAT: u32 = 0xFA05 << 16;
pub const AIRCR_SYSRESETREQ: u32 = 1 << 2;

pub const DHCSR_C_DEBUGEN: u32 = 1 << 0;
pub const DHCSR_C_HALT: u32 = 1 << 1;
pub const DHCSR_S_HALT: u32 = 1 << 17;
pub const DHCSR_S_LOCKUP: u32 = 1 << 19;

pub const DEMCR_MON_EN: u32 = 1 << 16;
pub const DEMCR_MON_PEND: u32 = 1 << 17;
pub const DEMCR_MON_STEP: u32 = 1 << 18;
pub const DEMCR_MON_REQ: u32 = 1 << 19;
pub const DEMCR_TRCENA: u32 = 1 << 24;
const DEMCR_WRITE_MASK: u32 = 0x010F_07F1;

/// Side effects of a register write that the machine has to act on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScbEffect {
    None,
    SystemResetRequested,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scb {
    vtor_relocatable: bool,
    reset_vtor: u32,
    vtor: u32,
    prigroup: u32,
    shpr: [u32; 3],
    pub(crate) debugen: bool,
    pub(crate) halted: bool,
    pub(crate) locked_up: bool,
    demcr: u32,
}

impl Scb {
    pub fn new(reset_vtor: u32, vtor_relocatable: bool) -> Scb {
        Scb {
            vtor_relocatable,
            reset_vtor,
            vtor: reset_vtor,
            prigroup: 0,
            shpr: [0; 3],
            debugen: false,
            halted: false,
            locked_up: false,
            demcr: 0,
        }
    }

    pub fn vtor(&self) -> u32 {
        self.vtor
    }

    pub fn vtor_relocatable(&self) -> bool {
        self.vtor_relocatable
    }

    pub fn demcr(&self) -> u32 {
        self.demcr
    }

    pub fn debugen(&self) -> bool {
        self.debugen
    }

    pub(crate) fn set_demcr_bits(&mut self, bits: u32, on: bool) {
        if on {
            self.demcr |= bits;
        } else {
            self.demcr &= !bits;
        }
    }

    /// Configurable priority of system exception `number` (4..=15).
    pub fn system_priority(&self, number: u32) -> i32 {
        debug_assert!((4..=15).contains(&number));
        let slot = (number - 4) as usize;
        ((self.shpr[slot / 4] >> (8 * (slot % 4))) & 0xFF) as i32
    }

    /// State a system reset restores. DEMCR and DHCSR sit in the debug
    /// power domain and are untouched.
    pub fn system_reset(&mut self) {
        self.vtor = self.reset_vtor;
        self.prigroup = 0;
        self.shpr = [0; 3];
        self.halted = false;
        self.locked_up = false;
    }

    pub fn power_on_reset(&mut self) {
        *self = Scb::new(self.reset_vtor, self.vtor_relocatable);
    }

    pub fn owns(address: u32) -> bool {
        matches!(address, CPUID | VTOR | AIRCR | SHPR1 | SHPR2 | SHPR3 | DHCSR | DEMCR)
    }

    pub fn reg_read(&self, address: u32) -> u32 {
        match address {
            CPUID => CPUID_VALUE,
            VTOR => self.vtor,
            AIRCR => AIRCR_VECTKEYSTAT | (self.prigroup << 8),
            SHPR1 => self.shpr[0],
            SHPR2 => self.shpr[1],
            SHPR3 => self.shpr[2],
            DHCSR => {
                let mut v = 0;
                if self.debugen {
                    v |= DHCSR_C_DEBUGEN;
                }
                if self.halted {
                    v |= DHCSR_C_HALT | DHCSR_S_HALT;
                }
                if self.locked_up {
                    v |= DHCSR_S_LOCKUP;
                }
                v
            }
            DEMCR => self.demcr,
            _ => 0,
        }
    }

    pub fn reg_write(&mut self, address: u32, value: u32) -> ScbEffect {
        match address {
            VTOR => {
                if self.vtor_relocatable {
                    self.vtor = value & VTOR_MASK;
                }
            }
            AIRCR => {
                if value & 0xFFFF_0000 == AIRCR_VECTKEY {
                    self.prigroup = (value >> 8) & 0x7;
                    if value & AIRCR_SYSRESETREQ != 0 {
                        return ScbEffect::SystemResetRequested;
                    }
                }
            }
            // Reserved byte of SHPR1/SHPR2 fields for exceptions that do not exist read as zero.
            SHPR1 => self.shpr[0] = value & 0x00FF_FFFF,
            SHPR2 => self.shpr[1] = value & 0xFF00_0000,
            SHPR3 => self.shpr[2] = value & 0xFFFF_00FF,
            // Only a probe on the debug port can set C_DEBUGEN; software writes are ignored.
            DHCSR => {}
            DEMCR => self.demcr = value & DEMCR_WRITE_MASK,
            _ => {}
        }
        ScbEffect::None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vtor_alignment_and_relocatability() {
        let mut scb = Scb::new(0x0800_0000, true);
        scb.reg_write(VTOR, 0x2000_0044);
        assert_eq!(scb.vtor(), 0x2000_0000);
        scb.reg_write(VTOR, 0x2000_0080);
        assert_eq!(scb.reg_read(VTOR), 0x2000_0080);
        scb.system_reset();
        assert_eq!(scb.vtor(), 0x0800_0000);

        let mut fixed = Scb::new(0x0000_0000, false);
        fixed.reg_write(VTOR, 0x2000_0080);
        assert_eq!(fixed.reg_read(VTOR), 0);
    }

    #[test]
    fn aircr_needs_key() {
        let mut scb = Scb::new(0, true);
        assert_eq!(scb.reg_write(AIRCR, AIRCR_SYSRESETREQ), ScbEffect::None);
        assert_eq!(scb.reg_write(AIRCR, AIRCR_VECTKEY | AIRCR_SYSRESETREQ), ScbEffect::SystemResetRequested);
        assert_eq!(scb.reg_read(AIRCR), 0xFA05_0000);
    }

    #[test]
    fn shpr_priorities() {
        let mut scb = Scb::new(0, true);
        scb.reg_write(SHPR2, 0x8000_0000);
        scb.reg_write(SHPR3, 0x0000_0040);
        assert_eq!(scb.system_priority(11), 0x80);
        assert_eq!(scb.system_priority(12), 0x40);
        assert_eq!(scb.system_priority(4), 0);
    }

    #[test]
    fn dhcsr_is_probe_only() {
        let mut scb = Scb::new(0, true);
        scb.reg_write(DHCSR, 0xA05F_0001);
        assert_eq!(scb.reg_read(DHCSR) & DHCSR_C_DEBUGEN, 0);
        scb.debugen = true;
        assert_eq!(scb.reg_read(DHCSR) & DHCSR_C_DEBUGEN, 1);
    }

    #[test]
    fn demcr_write_mask_and_reset_persistence() {
        let mut scb = Scb::new(0, true);
        scb.reg_write(DEMCR, 0xFFFF_FFFF);
        assert_eq!(scb.demcr(), 0x010F_07F1);
        scb.system_reset();
        assert_eq!(scb.demcr(), 0x010F_07F1);
        scb.power_on_reset();
        assert_eq!(scb.demcr(), 0);
    }
}
