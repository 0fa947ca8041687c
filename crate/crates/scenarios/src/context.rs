//! Run configuration shared by every scenario and the session that collects
//! traces while a scenario drives its machines.

use fpb_emu::fpb::FpbConfig;
use fpb_emu::machine::{RunResult, Stop};
use fpb_emu::trace::TraceLine;
use fpb_emu::{Machine, MachineConfig};
use thiserror::Error;

pub const DEFAULT_MAX_STEPS: u64 = 100_000;

/// Machine variants selectable from the command line.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MachineOverrides {
    pub num_code: Option<u8>,
    pub num_lit: Option<u8>,
    pub has_remap: Option<bool>,
    pub vtor_relocatable: Option<bool>,
}

impl MachineOverrides {
    pub fn apply(&self, mut config: MachineConfig) -> Result<MachineConfig, ScenarioError> {
        let fpb = config.fpb;
        config.fpb = FpbConfig::new(
            self.num_code.unwrap_or(fpb.num_code),
            self.num_lit.unwrap_or(fpb.num_lit),
            self.has_remap.unwrap_or(fpb.has_remap),
        )?;
        if let Some(v) = self.vtor_relocatable {
            config.vtor_relocatable = v;
        }
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioContext {
    pub overrides: MachineOverrides,
    pub seed: u64,
    /// Bound on every individual run.
    pub max_steps: u64,
}

impl Default for ScenarioContext {
    fn default() -> Self {
        ScenarioContext { overrides: MachineOverrides::default(), seed: 0, max_steps: DEFAULT_MAX_STEPS }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Emulator(#[from] fpb_emu::Error),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("machine needs {needed} {what} comparators, has {have}")]
    NotEnoughComparators { what: &'static str, needed: usize, have: usize },
    #[error("privileged write of 0x{value:08x} to 0x{address:08x} faulted")]
    WriteFaulted { address: u32, value: u32 },
    #[error("read of 0x{0:08x} faulted")]
    ReadFaulted(u32),
    #[error("boot ROM rejected the image checksum")]
    ChecksumMismatch,
    #[error("no candidate literal slot validated after {guesses} guesses")]
    GuessSpaceExhausted { guesses: usize },
    #[error("{0}")]
    Firmware(String),
}

impl ScenarioError {
    /// Short stable name used in reports.
    pub fn code(&self) -> &'static str {
        match self {
            ScenarioError::Emulator(fpb_emu::Error::RemapUnsupported) => "RemapUnsupported",
            ScenarioError::Emulator(fpb_emu::Error::MisalignedRemapBase { .. }) => "MisalignedRemapBase",
            ScenarioError::Emulator(_) => "EmulatorError",
            ScenarioError::Unsupported(_) => "Unsupported",
            ScenarioError::NotEnoughComparators { .. } => "NotEnoughComparators",
            ScenarioError::WriteFaulted { .. } => "WriteFaulted",
            ScenarioError::ReadFaulted(_) => "ReadFaulted",
            ScenarioError::ChecksumMismatch => "ChecksumMismatch",
            ScenarioError::GuessSpaceExhausted { .. } => "GuessSpaceExhausted",
            ScenarioError::Firmware(_) => "FirmwareError",
        }
    }
}

/// Collects trace lines and step counts across every machine a scenario runs.
#[derive(Debug)]
pub struct Session {
    scenario: String,
    max_steps: u64,
    steps: u64,
    trace: Vec<TraceLine>,
}

impl Session {
    pub fn new(scenario: &str, ctx: &ScenarioContext) -> Session {
        Session { scenario: scenario.to_string(), max_steps: ctx.max_steps, steps: 0, trace: Vec::new() }
    }

    pub fn machine(&self, config: MachineConfig) -> Result<Machine, ScenarioError> {
        let mut m = Machine::new(config)?;
        m.enable_trace();
        Ok(m)
    }

    /// Runs until a stop fires or the step budget is spent.
    pub fn run(&mut self, machine: &mut Machine, run: &str, stops: &[Stop]) -> RunResult {
        self.run_for(machine, run, stops, u64::MAX)
    }

    /// Like [`Session::run`] with a tighter budget for runs expected to spin.
    pub fn run_for(&mut self, machine: &mut Machine, run: &str, stops: &[Stop], budget: u64) -> RunResult {
        let mut all = Vec::with_capacity(stops.len() + 1);
        all.extend_from_slice(stops);
        all.push(Stop::MaxSteps(budget.min(self.max_steps)));
        let result = machine.run_until(&all);
        self.absorb(machine, run);
        result
    }

    /// Runs exactly `n` steps (fewer if the core locks or halts).
    pub fn run_steps(&mut self, machine: &mut Machine, run: &str, n: u64) -> RunResult {
        let result = machine.run_until(&[Stop::MaxSteps(n)]);
        self.absorb(machine, run);
        result
    }

    fn absorb(&mut self, machine: &mut Machine, run: &str) {
        let records = machine.take_trace();
        self.steps += records.len() as u64;
        self.trace.extend(records.iter().map(|r| TraceLine::from_record(&self.scenario, run, r)));
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn into_trace(self) -> Vec<TraceLine> {
        self.trace
    }
}
