//! Deterministic ARMv7-M microcontroller emulator built around a model of the
//! Flash Patch and Breakpoint (FPB) unit.
//!
//! The crate is split the way the hardware is:
//! [`isa`] decodes and encodes the supported Thumb subset, [`bus`] owns the
//! address space and the access pipeline, [`fpb`], [`mpu`] and [`scb`] are the
//! register models on the private peripheral bus, and [`machine`] is the core
//! that steps instructions, takes exceptions and resolves debug events.

pub mod asm;
pub mod bus;
pub mod error;
pub mod fpb;
pub mod isa;
pub mod machine;
pub mod manifest;
pub mod mpu;
pub mod scb;
pub mod trace;

pub use error::Error;
pub use machine::{Machine, MachineConfig, ResetKind, Stop, StepEvent};
