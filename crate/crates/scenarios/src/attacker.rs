//! The attacker: code that can issue privileged writes to the PPB and SRAM.
//! Every register access goes through the machine's bus, so the register
//! models see exactly what firmware would write.

use fpb_emu::bus::Outcome;
use fpb_emu::fpb::{
    comp_value, fp_comp_addr, FP_CTRL_ADDR, FP_CTRL_ENABLE, FP_CTRL_KEY, FP_REMAP_ADDR, FP_REMAP_RMPSPT,
    REPLACE_BKPT_LOWER, REPLACE_BKPT_UPPER, REPLACE_REMAP,
};
use fpb_emu::mpu::Privilege;
use fpb_emu::scb::{DEMCR, VTOR};
use fpb_emu::Machine;

use crate::context::ScenarioError;

const P: Privilege = Privilege::Privileged;

pub struct Attacker<'m> {
    pub machine: &'m mut Machine,
}

impl<'m> Attacker<'m> {
    pub fn new(machine: &'m mut Machine) -> Attacker<'m> {
        Attacker { machine }
    }

    pub fn write(&mut self, address: u32, value: u32) -> Result<(), ScenarioError> {
        match self.machine.write_word(address, value, P).outcome {
            Outcome::Value(_) => Ok(()),
            Outcome::Fault(_) => Err(ScenarioError::WriteFaulted { address, value }),
        }
    }

    pub fn read(&mut self, address: u32) -> Result<u32, ScenarioError> {
        self.machine.read_word(address, P).ok().ok_or(ScenarioError::ReadFaulted(address))
    }

    pub fn write_bytes(&mut self, address: u32, bytes: &[u8]) -> Result<(), ScenarioError> {
        for (i, chunk) in bytes.chunks(4).enumerate() {
            let mut w = [0u8; 4];
            w[..chunk.len()].copy_from_slice(chunk);
            self.write(address + 4 * i as u32, u32::from_le_bytes(w))?;
        }
        Ok(())
    }

    fn num_code(&self) -> usize {
        usize::from(self.machine.config().fpb.num_code)
    }

    fn num_lit(&self) -> usize {
        usize::from(self.machine.config().fpb.num_lit)
    }

    pub fn require_code(&self, needed: usize) -> Result<(), ScenarioError> {
        if self.num_code() < needed {
            return Err(ScenarioError::NotEnoughComparators { what: "instruction", needed, have: self.num_code() });
        }
        Ok(())
    }

    pub fn require_literal(&self, needed: usize) -> Result<(), ScenarioError> {
        if self.num_lit() < needed {
            return Err(ScenarioError::NotEnoughComparators { what: "literal", needed, have: self.num_lit() });
        }
        Ok(())
    }

    /// Alignment the remap table base must satisfy, as the attacker computes
    /// it from the comparator counts in FP_CTRL.
    pub fn required_alignment(&mut self) -> Result<u32, ScenarioError> {
        let ctrl = self.read(FP_CTRL_ADDR)?;
        let num_code = ((ctrl >> 4) & 0xF) | (((ctrl >> 12) & 0x7) << 4);
        let num_lit = (ctrl >> 8) & 0xF;
        Ok(4 * (num_code + num_lit))
    }

    /// Programs FP_REMAP after checking RMPSPT and the alignment rule.
    pub fn set_remap_base(&mut self, base: u32) -> Result<(), ScenarioError> {
        if self.read(FP_REMAP_ADDR)? & FP_REMAP_RMPSPT == 0 {
            return Err(fpb_emu::Error::RemapUnsupported.into());
        }
        let required = self.required_alignment()?;
        if base % required != 0 {
            return Err(fpb_emu::Error::MisalignedRemapBase { base, required }.into());
        }
        self.write(FP_REMAP_ADDR, base)
    }

    /// First address at or above `near` usable as a table base: a multiple
    /// of both the alignment rule and the 32-byte FP_REMAP granule.
    pub fn table_base_near(&mut self, near: u32) -> Result<u32, ScenarioError> {
        let required = self.required_alignment()?.max(4);
        let step = lcm(required, 32);
        Ok(near.div_ceil(step) * step)
    }

    /// Picks a table base near `near` and programs FP_REMAP with it.
    pub fn place_table(&mut self, near: u32) -> Result<u32, ScenarioError> {
        let base = self.table_base_near(near)?;
        self.set_remap_base(base)?;
        Ok(base)
    }

    fn table_base(&mut self) -> Result<u32, ScenarioError> {
        Ok(0x2000_0000 | (self.read(FP_REMAP_ADDR)? & 0x1FFF_FFE0))
    }

    /// Remaps the word containing `address` through instruction comparator `index`.
    pub fn remap_code(&mut self, index: usize, address: u32, word: u32) -> Result<(), ScenarioError> {
        self.require_code(index + 1)?;
        let table = self.table_base()?;
        self.write(table + 4 * index as u32, word)?;
        self.write(fp_comp_addr(index), comp_value(address, REPLACE_REMAP, true))
    }

    /// Remaps the literal at `address` through literal comparator `index`
    /// (counted from the first literal comparator).
    pub fn remap_literal(&mut self, index: usize, address: u32, value: u32) -> Result<(), ScenarioError> {
        self.require_literal(index + 1)?;
        let slot = self.num_code() + index;
        let table = self.table_base()?;
        self.write(table + 4 * slot as u32, value)?;
        self.write(fp_comp_addr(slot), comp_value(address, REPLACE_REMAP, true))
    }

    /// Arms instruction comparator `index` as a breakpoint on `address`.
    pub fn breakpoint(&mut self, index: usize, address: u32) -> Result<(), ScenarioError> {
        self.require_code(index + 1)?;
        let replace = if address & 2 == 0 { REPLACE_BKPT_LOWER } else { REPLACE_BKPT_UPPER };
        self.write(fp_comp_addr(index), comp_value(address, replace, true))
    }

    pub fn disarm(&mut self, slot: usize) -> Result<(), ScenarioError> {
        self.write(fp_comp_addr(slot), 0)
    }

    pub fn enable_fpb(&mut self) -> Result<(), ScenarioError> {
        self.write(FP_CTRL_ADDR, FP_CTRL_KEY | FP_CTRL_ENABLE)
    }

    pub fn disable_fpb(&mut self) -> Result<(), ScenarioError> {
        self.write(FP_CTRL_ADDR, FP_CTRL_KEY)
    }

    pub fn set_demcr_bits(&mut self, bits: u32) -> Result<(), ScenarioError> {
        let v = self.read(DEMCR)?;
        self.write(DEMCR, v | bits)
    }

    /// Writes VTOR and returns what the register reads back.
    pub fn set_vtor(&mut self, value: u32) -> Result<u32, ScenarioError> {
        self.write(VTOR, value)?;
        self.read(VTOR)
    }
}

pub(crate) fn lcm(a: u32, b: u32) -> u32 {
    let (mut x, mut y) = (a, b);
    while y != 0 {
        (x, y) = (y, x % y);
    }
    a / x * b
}
