pub mod baseline;
pub mod bkpt;
pub mod cfi;
pub mod derandomize;
pub mod jlink;
pub mod minion;
pub mod mpu_bypass;
pub mod svcall;

use fpb_emu::MachineConfig;

use crate::context::{ScenarioContext, ScenarioError};

/// The default board with the run's overrides applied.
pub(crate) fn default_config(ctx: &ScenarioContext) -> Result<MachineConfig, ScenarioError> {
    ctx.overrides.apply(MachineConfig::default())
}
