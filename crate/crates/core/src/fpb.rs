//! Flash Patch and Breakpoint unit (FPBv1 register layout).
//!
//! The unit holds `num_code` instruction comparators followed by `num_lit`
//! literal comparators. A comparator armed on a word below `0x2000_0000`
//! either substitutes the word from the SRAM remap table or flags the fetch
//! as a breakpoint. Comparator `i` always owns remap-table slot `i`.

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Base of the FPB register block in the private peripheral bus.
pub const FPB_BASE: u32 = 0xE000_2000;
pub const FP_CTRL: u32 = 0x0;
pub const FP_REMAP: u32 = 0x4;
pub const FP_COMP0: u32 = 0x8;

/// Absolute bus addresses of the registers.
pub const FP_CTRL_ADDR: u32 = FPB_BASE + FP_CTRL;
pub const FP_REMAP_ADDR: u32 = FPB_BASE + FP_REMAP;

pub const fn fp_comp_addr(index: usize) -> u32 {
    FPB_BASE + FP_COMP0 + 4 * index as u32
}

/// `FP_CTRL.KEY`: writes without it leave `ENABLE` untouched.
pub const FP_CTRL_KEY: u32 = 1 << 1;
pub const FP_CTRL_ENABLE: u32 = 1 << 0;
/// `FP_REMAP.RMPSPT`: remapping supported.
pub const FP_REMAP_RMPSPT: u32 = 1 << 29;
const FP_REMAP_MASK: u32 = 0x1FFF_FFE0;
const FP_COMP_ADDR_MASK: u32 = 0x1FFF_FFFC;
const FP_COMP_REPLACE_SHIFT: u32 = 30;

/// Comparators only ever see the code region.
pub const PATCHABLE_LIMIT: u32 = 0x2000_0000;
/// The remap table always lives in the SRAM region.
pub const REMAP_REGION_BASE: u32 = 0x2000_0000;

/// `FP_COMPn.REPLACE` values.
pub const REPLACE_REMAP: u32 = 0b00;
pub const REPLACE_BKPT_LOWER: u32 = 0b01;
pub const REPLACE_BKPT_UPPER: u32 = 0b10;
pub const REPLACE_BKPT_BOTH: u32 = 0b11;

/// Implementation parameters fixed at design time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FpbConfig {
    pub num_code: u8,
    pub num_lit: u8,
    pub has_remap: bool,
}

impl Default for FpbConfig {
    fn default() -> Self {
        FpbConfig { num_code: 6, num_lit: 2, has_remap: true }
    }
}

impl FpbConfig {
    pub fn new(num_code: u8, num_lit: u8, has_remap: bool) -> Result<Self, Error> {
        let cfg = FpbConfig { num_code, num_lit, has_remap };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.num_code > 127 || self.num_lit > 15 || self.total() == 0 {
            return Err(Error::InvalidFpbConfig { num_code: self.num_code, num_lit: self.num_lit });
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        usize::from(self.num_code) + usize::from(self.num_lit)
    }

    /// Alignment the remap table needs so every comparator owns one word.
    pub fn required_alignment(&self) -> u32 {
        4 * self.total() as u32
    }

    /// Index of the first literal comparator, if there is one.
    pub fn first_literal(&self) -> Option<usize> {
        (self.num_lit > 0).then_some(usize::from(self.num_code))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Comparator {
    pub enable: bool,
    /// Match address, bits[28:2].
    pub comp: u32,
    /// Two-bit `REPLACE` field as written.
    pub replace: u32,
}

impl Comparator {
    fn pack(&self) -> u32 {
        (self.replace << FP_COMP_REPLACE_SHIFT) | self.comp | u32::from(self.enable)
    }

    fn unpack(value: u32) -> Comparator {
        Comparator {
            enable: value & 1 != 0,
            comp: value & FP_COMP_ADDR_MASK,
            replace: value >> FP_COMP_REPLACE_SHIFT,
        }
    }
}

/// Which comparator class an access is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchKind {
    Fetch,
    LiteralRead,
}

/// Halfword(s) of a matched word that carry a breakpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BreakpointHalves {
    Lower,
    Upper,
    Both,
}

impl BreakpointHalves {
    fn from_replace(replace: u32) -> BreakpointHalves {
        match replace {
            REPLACE_BKPT_LOWER => BreakpointHalves::Lower,
            REPLACE_BKPT_UPPER => BreakpointHalves::Upper,
            _ => BreakpointHalves::Both,
        }
    }

    fn union(self, other: BreakpointHalves) -> BreakpointHalves {
        if self == other {
            self
        } else {
            BreakpointHalves::Both
        }
    }

    /// True if the halfword containing `address` is flagged.
    pub fn covers(self, address: u32) -> bool {
        match self {
            BreakpointHalves::Lower => address & 2 == 0,
            BreakpointHalves::Upper => address & 2 != 0,
            BreakpointHalves::Both => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOutcome {
    NoMatch,
    Remap { table_index: usize },
    Breakpoint { halves: BreakpointHalves },
}

/// Register-level failure; the bus turns it into a BusFault.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnmappedRegister(pub u32);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fpb {
    config: FpbConfig,
    enabled: bool,
    remap: u32,
    comparators: Vec<Comparator>,
}

impl Fpb {
    pub fn new(config: FpbConfig) -> Fpb {
        Fpb { config, enabled: false, remap: 0, comparators: vec![Comparator::default(); config.total()] }
    }

    pub fn config(&self) -> FpbConfig {
        self.config
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn comparators(&self) -> &[Comparator] {
        &self.comparators
    }

    /// Cold reset: unit disabled, comparators cleared.
    pub fn reset(&mut self) {
        *self = Fpb::new(self.config);
    }

    pub fn required_alignment(&self) -> u32 {
        self.config.required_alignment()
    }

    /// Base address of the remap table currently programmed.
    pub fn remap_base(&self) -> Result<u32, Error> {
        if !self.config.has_remap {
            return Err(Error::RemapUnsupported);
        }
        Ok(REMAP_REGION_BASE | self.remap)
    }

    /// SRAM address of the remap-table word owned by comparator `table_index`.
    pub fn remap_word_address(&self, table_index: usize) -> Result<u32, Error> {
        Ok(self.remap_base()?.wrapping_add(4 * table_index as u32))
    }

    fn comparator_index(&self, offset: u32) -> Option<usize> {
        if offset < FP_COMP0 || offset % 4 != 0 {
            return None;
        }
        let index = ((offset - FP_COMP0) / 4) as usize;
        (index < self.comparators.len()).then_some(index)
    }

    pub fn reg_read(&self, offset: u32) -> Result<u32, UnmappedRegister> {
        match offset {
            FP_CTRL => {
                let code = u32::from(self.config.num_code);
                let lit = u32::from(self.config.num_lit);
                Ok(((code >> 4) & 0x7) << 12 | (lit & 0xF) << 8 | (code & 0xF) << 4 | u32::from(self.enabled))
            }
            FP_REMAP => {
                if self.config.has_remap {
                    Ok(FP_REMAP_RMPSPT | self.remap)
                } else {
                    Ok(0)
                }
            }
            _ => self
                .comparator_index(offset)
                .map(|i| self.comparators[i].pack())
                .ok_or(UnmappedRegister(offset)),
        }
    }

    pub fn reg_write(&mut self, offset: u32, value: u32) -> Result<(), UnmappedRegister> {
        match offset {
            FP_CTRL => {
                if value & FP_CTRL_KEY != 0 {
                    self.enabled = value & FP_CTRL_ENABLE != 0;
                }
            }
            FP_REMAP => {
                if self.config.has_remap {
                    self.remap = value & FP_REMAP_MASK;
                }
            }
            _ => {
                let i = self.comparator_index(offset).ok_or(UnmappedRegister(offset))?;
                self.comparators[i] = Comparator::unpack(value);
            }
        }
        Ok(())
    }

    fn is_literal(&self, index: usize) -> bool {
        index >= usize::from(self.config.num_code)
    }

    /// Word-granular comparison of `address` against the enabled comparators
    /// of the class selected by `kind`.
    ///
    /// Instruction comparators that request a breakpoint win over ones that
    /// request a remap of the same word.
    pub fn match_access(&self, address: u32, kind: MatchKind) -> MatchOutcome {
        if !self.enabled || address >= PATCHABLE_LIMIT {
            return MatchOutcome::NoMatch;
        }
        let word = address & FP_COMP_ADDR_MASK;
        let mut remap = None;
        let mut breakpoint: Option<BreakpointHalves> = None;
        for (i, c) in self.comparators.iter().enumerate() {
            if !c.enable || c.comp != word {
                continue;
            }
            match (kind, self.is_literal(i)) {
                (MatchKind::Fetch, false) => {
                    if c.replace != REPLACE_REMAP || !self.config.has_remap {
                        let halves = BreakpointHalves::from_replace(c.replace);
                        breakpoint = Some(breakpoint.map_or(halves, |h| h.union(halves)));
                    } else if remap.is_none() {
                        remap = Some(i);
                    }
                }
                (MatchKind::LiteralRead, true) => {
                    if self.config.has_remap && remap.is_none() {
                        remap = Some(i);
                    }
                }
                _ => {}
            }
        }
        match (breakpoint, remap) {
            (Some(halves), _) => MatchOutcome::Breakpoint { halves },
            (None, Some(table_index)) => MatchOutcome::Remap { table_index },
            (None, None) => MatchOutcome::NoMatch,
        }
    }
}

/// Packs an `FP_COMPn` value.
pub fn comp_value(address: u32, replace: u32, enable: bool) -> u32 {
    (replace << FP_COMP_REPLACE_SHIFT) | (address & FP_COMP_ADDR_MASK) | u32::from(enable)
}
