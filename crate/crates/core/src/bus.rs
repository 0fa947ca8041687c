//! System bus: backing memories, the private peripheral bus and the access
//! pipeline that ties the FPB and MPU together.
//!
//! Every access walks the same fixed sequence:
//! 1. fetches and data reads below `0x2000_0000` consult the FPB;
//! 2. vector fetches skip the MPU;
//! 3. everything else is checked by the MPU;
//! 4. the access is served by a register model or by backing memory.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::fpb::{Fpb, FpbConfig, MatchKind, MatchOutcome, FPB_BASE};
use crate::mpu::{AccessKind, Mpu, MpuDecision, Privilege};
use crate::scb::{Scb, ScbEffect};

pub const PPB_BASE: u32 = 0xE000_0000;
pub const PPB_END: u32 = 0xE010_0000;
const FPB_BLOCK_SIZE: u32 = 0x1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    /// Read-only for software; a data write is a BusFault.
    Flash,
    Sram,
    /// Plain storage whose writes are also recorded in the bus log.
    MmioStub,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub name: String,
    pub base: u32,
    pub size: u32,
    pub kind: MemoryKind,
}

impl RegionSpec {
    pub fn new(name: &str, base: u32, size: u32, kind: MemoryKind) -> RegionSpec {
        RegionSpec { name: name.to_string(), base, size, kind }
    }

    fn end(&self) -> u64 {
        u64::from(self.base) + u64::from(self.size)
    }

    fn contains(&self, address: u32, len: u32) -> bool {
        address >= self.base && u64::from(address) + u64::from(len) <= self.end()
    }
}

/// Validates a memory map: non-empty, word-aligned regions that neither
/// overlap each other nor the private peripheral bus.
pub fn validate_regions(regions: &[RegionSpec]) -> Result<(), Error> {
    for r in regions {
        let bad = |reason| Error::InvalidRegion { name: r.name.clone(), base: r.base, reason };
        if r.size == 0 {
            return Err(bad("size is zero"));
        }
        if r.base % 4 != 0 || r.size % 4 != 0 {
            return Err(bad("base and size must be word aligned"));
        }
        if r.end() > 1 << 32 {
            return Err(bad("extends past the end of the address space"));
        }
        if u64::from(r.base) < u64::from(PPB_END) && r.end() > u64::from(PPB_BASE) {
            return Err(Error::PpbRedefinition(r.name.clone()));
        }
    }
    for (i, a) in regions.iter().enumerate() {
        for b in &regions[i + 1..] {
            if u64::from(a.base) < b.end() && u64::from(b.base) < a.end() {
                return Err(Error::OverlappingRegions { first: a.name.clone(), second: b.name.clone() });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaultKind {
    MemManage,
    BusFault,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Value(u32),
    Fault(FaultKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ServedBy {
    Backing,
    FpbRemap,
    RegisterModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BusResult {
    pub outcome: Outcome,
    pub served_by: ServedBy,
    /// Set on instruction fetches that hit an FPB breakpoint comparator.
    pub breakpoint: bool,
}

impl BusResult {
    fn value(value: u32, served_by: ServedBy) -> BusResult {
        BusResult { outcome: Outcome::Value(value), served_by, breakpoint: false }
    }

    fn fault(kind: FaultKind, served_by: ServedBy) -> BusResult {
        BusResult { outcome: Outcome::Fault(kind), served_by, breakpoint: false }
    }

    pub fn ok(&self) -> Option<u32> {
        match self.outcome {
            Outcome::Value(v) => Some(v),
            Outcome::Fault(_) => None,
        }
    }
}

/// One bus transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub address: u32,
    pub kind: AccessKind,
    /// 1, 2 or 4 bytes.
    pub size: u32,
    pub privilege: Privilege,
}

impl Access {
    pub fn new(address: u32, kind: AccessKind, size: u32, privilege: Privilege) -> Access {
        Access { address, kind, size, privilege }
    }
}

/// A write that reached an MMIO stub.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmioWrite {
    pub address: u32,
    pub value: u32,
    pub size: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Region {
    spec: RegionSpec,
    data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bus {
    regions: Vec<Region>,
    pub fpb: Fpb,
    pub mpu: Mpu,
    pub scb: Scb,
    mmio_log: Vec<MmioWrite>,
    reset_requested: bool,
}

impl Bus {
    pub fn new(regions: &[RegionSpec], fpb: FpbConfig, initial_vtor: u32, vtor_relocatable: bool) -> Result<Bus, Error> {
        validate_regions(regions)?;
        fpb.validate()?;
        Ok(Bus {
            regions: regions
                .iter()
                .map(|spec| Region { spec: spec.clone(), data: vec![0; spec.size as usize] })
                .collect(),
            fpb: Fpb::new(fpb),
            mpu: Mpu::new(),
            scb: Scb::new(initial_vtor, vtor_relocatable),
            mmio_log: Vec::new(),
            reset_requested: false,
        })
    }

    pub fn regions(&self) -> impl Iterator<Item = &RegionSpec> {
        self.regions.iter().map(|r| &r.spec)
    }

    pub fn region_at(&self, address: u32) -> Option<&RegionSpec> {
        self.regions.iter().map(|r| &r.spec).find(|s| s.contains(address, 1))
    }

    pub fn mmio_log(&self) -> &[MmioWrite] {
        &self.mmio_log
    }

    pub fn clear_mmio_log(&mut self) {
        self.mmio_log.clear();
    }

    /// Takes and clears a pending `SYSRESETREQ`.
    pub fn take_reset_request(&mut self) -> bool {
        std::mem::take(&mut self.reset_requested)
    }

    fn locate(&self, address: u32, len: u32) -> Option<(usize, usize)> {
        self.regions
            .iter()
            .position(|r| r.spec.contains(address, len))
            .map(|i| (i, (address - self.regions[i].spec.base) as usize))
    }

    /// Reads backing memory directly, bypassing every check.
    pub fn peek(&self, address: u32, size: u32) -> Option<u32> {
        let (i, off) = self.locate(address, size)?;
        let bytes = &self.regions[i].data[off..off + size as usize];
        Some(bytes.iter().rev().fold(0, |acc, &b| (acc << 8) | u32::from(b)))
    }

    pub fn peek_word(&self, address: u32) -> Option<u32> {
        self.peek(address, 4)
    }

    /// Loader and debugger path: writes backing memory, flash included.
    pub fn load_bytes(&mut self, address: u32, bytes: &[u8]) -> Result<(), Error> {
        if bytes.is_empty() {
            return Ok(());
        }
        let (i, off) = self
            .locate(address, bytes.len() as u32)
            .ok_or(Error::SegmentOutOfRange { address, len: bytes.len() })?;
        self.regions[i].data[off..off + bytes.len()].copy_from_slice(bytes);
        Ok(())
    }

    pub fn read_bytes(&self, address: u32, len: usize) -> Option<Vec<u8>> {
        let (i, off) = self.locate(address, len as u32)?;
        Some(self.regions[i].data[off..off + len].to_vec())
    }

    fn poke(&mut self, i: usize, off: usize, size: u32, value: u32) {
        let bytes = value.to_le_bytes();
        self.regions[i].data[off..off + size as usize].copy_from_slice(&bytes[..size as usize]);
    }

    /// Zeroes every SRAM region.
    pub fn clear_sram(&mut self) {
        for r in &mut self.regions {
            if r.spec.kind == MemoryKind::Sram {
                r.data.fill(0);
            }
        }
    }

    pub fn read(&mut self, access: Access) -> BusResult {
        debug_assert!(access.kind != AccessKind::DataWrite);
        self.transact(access, None)
    }

    pub fn write(&mut self, access: Access, value: u32) -> BusResult {
        debug_assert!(access.kind == AccessKind::DataWrite);
        self.transact(access, Some(value))
    }

    fn transact(&mut self, access: Access, value: Option<u32>) -> BusResult {
        let Access { address, kind, size, privilege } = access;
        if !matches!(size, 1 | 2 | 4) || address % size != 0 {
            return BusResult::fault(FaultKind::BusFault, ServedBy::Backing);
        }

        // 1. Flash patch and breakpoint.
        let mut breakpoint = false;
        let fpb_kind = match kind {
            AccessKind::InstructionFetch => Some(MatchKind::Fetch),
            AccessKind::DataRead => Some(MatchKind::LiteralRead),
            _ => None,
        };
        if let Some(match_kind) = fpb_kind {
            match self.fpb.match_access(address, match_kind) {
                MatchOutcome::NoMatch => {}
                MatchOutcome::Remap { table_index } => return self.serve_remap(address, size, table_index),
                MatchOutcome::Breakpoint { halves } => breakpoint = halves.covers(address),
            }
        }

        let mut result = if (PPB_BASE..PPB_END).contains(&address) {
            self.ppb_access(access, value)
        } else {
            // 2/3. Vector fetches bypass the MPU, everything else is checked.
            if kind != AccessKind::VectorFetch && self.mpu.check(address, kind, privilege) == MpuDecision::Deny {
                return BusResult::fault(FaultKind::MemManage, ServedBy::Backing);
            }
            self.backing_access(address, size, value)
        };
        result.breakpoint = breakpoint;
        result
    }

    fn serve_remap(&self, address: u32, size: u32, table_index: usize) -> BusResult {
        let word = match self.fpb.remap_word_address(table_index) {
            Ok(word_address) => self.peek_word(word_address),
            Err(_) => None,
        };
        match word {
            Some(word) => {
                let shift = 8 * (address & 3);
                let mask = if size == 4 { u32::MAX } else { (1u32 << (8 * size)) - 1 };
                BusResult::value((word >> shift) & mask, ServedBy::FpbRemap)
            }
            None => BusResult::fault(FaultKind::BusFault, ServedBy::FpbRemap),
        }
    }

    fn backing_access(&mut self, address: u32, size: u32, value: Option<u32>) -> BusResult {
        let Some((i, off)) = self.locate(address, size) else {
            return BusResult::fault(FaultKind::BusFault, ServedBy::Backing);
        };
        match value {
            None => BusResult::value(self.peek(address, size).unwrap_or(0), ServedBy::Backing),
            Some(v) => {
                let kind = self.regions[i].spec.kind;
                if kind == MemoryKind::Flash {
                    return BusResult::fault(FaultKind::BusFault, ServedBy::Backing);
                }
                let v = if size == 4 { v } else { v & ((1u32 << (8 * size)) - 1) };
                self.poke(i, off, size, v);
                if kind == MemoryKind::MmioStub {
                    self.mmio_log.push(MmioWrite { address, value: v, size });
                }
                BusResult::value(0, ServedBy::Backing)
            }
        }
    }

    fn ppb_access(&mut self, access: Access, value: Option<u32>) -> BusResult {
        let reg = ServedBy::RegisterModel;
        if access.kind == AccessKind::InstructionFetch {
            // The system region is execute-never.
            return BusResult::fault(FaultKind::MemManage, reg);
        }
        if !access.privilege.is_privileged() {
            return BusResult::fault(FaultKind::MemManage, reg);
        }
        if access.size != 4 {
            return BusResult::fault(FaultKind::BusFault, reg);
        }
        let address = access.address;
        if (FPB_BASE..FPB_BASE + FPB_BLOCK_SIZE).contains(&address) {
            let offset = address - FPB_BASE;
            let r = match value {
                None => self.fpb.reg_read(offset),
                Some(v) => self.fpb.reg_write(offset, v).map(|_| 0),
            };
            return match r {
                Ok(v) => BusResult::value(v, reg),
                Err(_) => BusResult::fault(FaultKind::BusFault, reg),
            };
        }
        if Mpu::owns(address) {
            return match value {
                None => BusResult::value(self.mpu.reg_read(address), reg),
                Some(v) => {
                    self.mpu.reg_write(address, v);
                    BusResult::value(0, reg)
                }
            };
        }
        if Scb::owns(address) {
            return match value {
                None => BusResult::value(self.scb.reg_read(address), reg),
                Some(v) => {
                    if self.scb.reg_write(address, v) == ScbEffect::SystemResetRequested {
                        self.reset_requested = true;
                    }
                    BusResult::value(0, reg)
                }
            };
        }
        BusResult::fault(FaultKind::BusFault, reg)
    }
}
