//! Memory Protection Unit (PMSAv7 register layout, 8 regions).

use serde::{Deserialize, Serialize};

pub const MPU_TYPE: u32 = 0xE000_ED90;
pub const MPU_CTRL: u32 = 0xE000_ED94;
pub const MPU_RNR: u32 = 0xE000_ED98;
pub const MPU_RBAR: u32 = 0xE000_ED9C;
pub const MPU_RASR: u32 = 0xE000_EDA0;

pub const CTRL_ENABLE: u32 = 1 << 0;
pub const CTRL_HFNMIENA: u32 = 1 << 1;
pub const CTRL_PRIVDEFENA: u32 = 1 << 2;

pub const RBAR_VALID: u32 = 1 << 4;

pub const NUM_REGIONS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Privilege {
    Privileged,
    Unprivileged,
}

impl Privilege {
    pub fn is_privileged(self) -> bool {
        self == Privilege::Privileged
    }
}

/// Access kinds the bus distinguishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessKind {
    InstructionFetch,
    DataRead,
    DataWrite,
    VectorFetch,
}

/// Decoded `RASR.AP` permission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessPermission {
    NoAccess,
    PrivRw,
    PrivRwUnprivRo,
    FullAccess,
    PrivRo,
    ReadOnly,
}

impl AccessPermission {
    pub fn from_ap(ap: u32) -> AccessPermission {
        match ap & 7 {
            0b001 => AccessPermission::PrivRw,
            0b010 => AccessPermission::PrivRwUnprivRo,
            0b011 => AccessPermission::FullAccess,
            0b101 => AccessPermission::PrivRo,
            0b110 | 0b111 => AccessPermission::ReadOnly,
            // 0b100 is reserved and treated as no access.
            _ => AccessPermission::NoAccess,
        }
    }

    pub fn allows(self, privilege: Privilege, write: bool) -> bool {
        use AccessPermission::*;
        let p = privilege.is_privileged();
        match self {
            NoAccess => false,
            PrivRw => p,
            PrivRwUnprivRo => p || !write,
            FullAccess => true,
            PrivRo => p && !write,
            ReadOnly => !write,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MpuRegion {
    pub base: u32,
    pub rasr: u32,
}

impl MpuRegion {
    pub fn enabled(&self) -> bool {
        self.rasr & 1 != 0
    }

    /// Region size in bytes, `2^(SIZE+1)`.
    pub fn size(&self) -> u64 {
        let field = (self.rasr >> 1) & 0x1F;
        1u64 << (field + 1)
    }

    pub fn ap(&self) -> AccessPermission {
        AccessPermission::from_ap(self.rasr >> 24)
    }

    pub fn xn(&self) -> bool {
        self.rasr & (1 << 28) != 0
    }

    pub fn contains(&self, address: u32) -> bool {
        let size = self.size();
        let base = u64::from(self.base) & !(size - 1);
        let a = u64::from(address);
        a >= base && a < base + size
    }
}

/// Builds an `RASR` value. `size_log2` is the log2 of the region size (>= 5).
pub fn rasr(size_log2: u32, ap: u32, xn: bool, enable: bool) -> u32 {
    debug_assert!((5..=32).contains(&size_log2));
    (u32::from(xn) << 28) | ((ap & 7) << 24) | ((size_log2 - 1) << 1) | u32::from(enable)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpuDecision {
    Permit,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Mpu {
    ctrl: u32,
    rnr: u32,
    regions: [MpuRegion; NUM_REGIONS],
}

const RASR_WRITE_MASK: u32 = 0x173F_FF3F;

impl Mpu {
    pub fn new() -> Mpu {
        Mpu::default()
    }

    pub fn reset(&mut self) {
        *self = Mpu::default();
    }

    pub fn ctrl(&self) -> u32 {
        self.ctrl
    }

    pub fn enabled(&self) -> bool {
        self.ctrl & CTRL_ENABLE != 0
    }

    pub fn region(&self, index: usize) -> &MpuRegion {
        &self.regions[index]
    }

    /// True for addresses this unit owns.
    pub fn owns(address: u32) -> bool {
        (MPU_TYPE..=MPU_RASR).contains(&address)
    }

    pub fn reg_read(&self, address: u32) -> u32 {
        let current = self.regions[self.rnr as usize];
        match address {
            MPU_TYPE => (NUM_REGIONS as u32) << 8,
            MPU_CTRL => self.ctrl,
            MPU_RNR => self.rnr,
            MPU_RBAR => (current.base & !0x1F) | self.rnr,
            MPU_RASR => current.rasr,
            _ => 0,
        }
    }

    pub fn reg_write(&mut self, address: u32, value: u32) {
        match address {
            MPU_CTRL => self.ctrl = value & 0x7,
            MPU_RNR => self.rnr = value % NUM_REGIONS as u32,
            MPU_RBAR => {
                if value & RBAR_VALID != 0 {
                    self.rnr = value & 0xF & (NUM_REGIONS as u32 - 1);
                }
                self.regions[self.rnr as usize].base = value & !0x1F;
            }
            MPU_RASR => {
                let mut v = value & RASR_WRITE_MASK;
                // Regions smaller than 32 bytes are unpredictable; clamp to the minimum.
                if (v >> 1) & 0x1F < 4 {
                    v = (v & !0x3E) | (4 << 1);
                }
                self.regions[self.rnr as usize].rasr = v;
            }
            _ => {}
        }
    }

    /// Programs one region through the register interface.
    pub fn configure_region(&mut self, index: usize, base: u32, rasr: u32) {
        self.reg_write(MPU_RBAR, (base & !0x1F) | RBAR_VALID | index as u32);
        self.reg_write(MPU_RASR, rasr);
    }

    /// Permission check for one access. The highest-numbered enabled region
    /// containing the address decides.
    pub fn check(&self, address: u32, kind: AccessKind, privilege: Privilege) -> MpuDecision {
        if !self.enabled() || kind == AccessKind::VectorFetch {
            return MpuDecision::Permit;
        }
        let hit = self.regions.iter().rev().find(|r| r.enabled() && r.contains(address));
        let allowed = match hit {
            Some(region) => {
                let write = kind == AccessKind::DataWrite;
                region.ap().allows(privilege, write) && !(kind == AccessKind::InstructionFetch && region.xn())
            }
            None => privilege.is_privileged() && self.ctrl & CTRL_PRIVDEFENA != 0,
        };
        if allowed {
            MpuDecision::Permit
        } else {
            MpuDecision::Deny
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const PRIV: Privilege = Privilege::Privileged;
    const USER: Privilege = Privilege::Unprivileged;

    #[test]
    fn type_register_reports_eight_regions() {
        assert_eq!(Mpu::new().reg_read(MPU_TYPE), 0x800);
    }

    #[test]
    fn disabled_permits_everything() {
        let mut mpu = Mpu::new();
        mpu.configure_region(0, 0x2000_0000, rasr(12, 0, true, true));
        assert_eq!(mpu.check(0x2000_0000, AccessKind::DataWrite, USER), MpuDecision::Permit);
    }

    #[test]
    fn ap_table() {
        use AccessPermission::*;
        let cases = [
            (0, NoAccess, [false, false, false, false]),
            (1, PrivRw, [true, true, false, false]),
            (2, PrivRwUnprivRo, [true, true, true, false]),
            (3, FullAccess, [true, true, true, true]),
            (4, NoAccess, [false, false, false, false]),
            (5, PrivRo, [true, false, false, false]),
            (6, ReadOnly, [true, false, true, false]),
            (7, ReadOnly, [true, false, true, false]),
        ];
        for (ap, decoded, [pr, pw, ur, uw]) in cases {
            let p = AccessPermission::from_ap(ap);
            assert_eq!(p, decoded, "ap={ap}");
            assert_eq!(p.allows(PRIV, false), pr, "ap={ap}");
            assert_eq!(p.allows(PRIV, true), pw, "ap={ap}");
            assert_eq!(p.allows(USER, false), ur, "ap={ap}");
            assert_eq!(p.allows(USER, true), uw, "ap={ap}");
        }
    }

    #[test]
    fn background_map_only_for_privileged_with_privdefena() {
        let mut mpu = Mpu::new();
        mpu.reg_write(MPU_CTRL, CTRL_ENABLE);
        assert_eq!(mpu.check(0x2000_0000, AccessKind::DataRead, PRIV), MpuDecision::Deny);
        mpu.reg_write(MPU_CTRL, CTRL_ENABLE | CTRL_PRIVDEFENA);
        assert_eq!(mpu.check(0x2000_0000, AccessKind::DataRead, PRIV), MpuDecision::Permit);
        assert_eq!(mpu.check(0x2000_0000, AccessKind::DataRead, USER), MpuDecision::Deny);
    }

    #[test]
    fn xn_blocks_fetch_only() {
        let mut mpu = Mpu::new();
        mpu.configure_region(0, 0x2000_0000, rasr(16, 3, true, true));
        mpu.reg_write(MPU_CTRL, CTRL_ENABLE);
        assert_eq!(mpu.check(0x2000_0100, AccessKind::InstructionFetch, PRIV), MpuDecision::Deny);
        assert_eq!(mpu.check(0x2000_0100, AccessKind::DataRead, USER), MpuDecision::Permit);
    }

    #[test]
    fn vector_fetch_bypasses() {
        let mut mpu = Mpu::new();
        mpu.reg_write(MPU_CTRL, CTRL_ENABLE);
        assert_eq!(mpu.check(0x0800_0000, AccessKind::VectorFetch, USER), MpuDecision::Permit);
    }

    #[test]
    fn rbar_valid_selects_region() {
        let mut mpu = Mpu::new();
        mpu.reg_write(MPU_RBAR, 0x2000_0000 | RBAR_VALID | 5);
        assert_eq!(mpu.reg_read(MPU_RNR), 5);
        assert_eq!(mpu.reg_read(MPU_RBAR), 0x2000_0005);
        mpu.reg_write(MPU_RASR, rasr(10, 1, false, true));
        assert_eq!(mpu.region(5).size(), 1024);
        assert_eq!(mpu.region(5).ap(), AccessPermission::PrivRw);
    }

    proptest! {
        /// The highest-numbered enabled containing region decides.
        #[test]
        fn highest_region_wins(
            aps in proptest::collection::vec(0u32..8, NUM_REGIONS),
            enables in proptest::collection::vec(any::<bool>(), NUM_REGIONS),
            offset in 0u32..0x1000,
            write in any::<bool>(),
            privileged in any::<bool>(),
        ) {
            let mut mpu = Mpu::new();
            // Nested regions sharing a base; all contain addresses below 4 KiB.
            for i in 0..NUM_REGIONS {
                mpu.configure_region(i, 0x2000_0000, rasr(12 + i as u32, aps[i], false, enables[i]));
            }
            mpu.reg_write(MPU_CTRL, CTRL_ENABLE);
            let privilege = if privileged { PRIV } else { USER };
            let kind = if write { AccessKind::DataWrite } else { AccessKind::DataRead };
            let got = mpu.check(0x2000_0000 + offset, kind, privilege);
            let expected = match (0..NUM_REGIONS).rev().find(|&i| enables[i]) {
                Some(i) => AccessPermission::from_ap(aps[i]).allows(privilege, write),
                None => false,
            };
            prop_assert_eq!(got == MpuDecision::Permit, expected);
        }
    }
}
