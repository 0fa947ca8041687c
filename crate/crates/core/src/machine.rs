//! The processor core and the machine that owns it together with the bus.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bus::{Access, Bus, BusResult, FaultKind, MemoryKind, Outcome, RegionSpec};
use crate::error::Error;
use crate::fpb::FpbConfig;
use crate::isa::{self, AluOp, Instruction, MemSize, Reg};
use crate::mpu::{AccessKind, Privilege};
use crate::scb::{DEMCR_MON_EN, DEMCR_MON_PEND};

pub const EXC_RESET: u32 = 1;
pub const EXC_HARDFAULT: u32 = 3;
pub const EXC_MEMMANAGE: u32 = 4;
pub const EXC_BUSFAULT: u32 = 5;
pub const EXC_USAGEFAULT: u32 = 6;
pub const EXC_SVCALL: u32 = 11;
pub const EXC_DEBUGMONITOR: u32 = 12;

pub const EXC_RETURN_HANDLER: u32 = 0xFFFF_FFF1;
pub const EXC_RETURN_THREAD_MSP: u32 = 0xFFFF_FFF9;
pub const EXC_RETURN_THREAD_PSP: u32 = 0xFFFF_FFFD;

/// PC value the core parks at when it locks up.
pub const LOCKUP_PC: u32 = 0xFFFF_FFFE;
/// Execution priority of thread mode with nothing active.
pub const THREAD_PRIORITY: i32 = 256;

const CONTROL_NPRIV: u32 = 1 << 0;
const CONTROL_SPSEL: u32 = 1 << 1;
const XPSR_T: u32 = 1 << 24;
const XPSR_FRAME_ALIGN: u32 = 1 << 9;

pub fn exception_name(number: u32) -> &'static str {
    match number {
        EXC_RESET => "Reset",
        EXC_HARDFAULT => "HardFault",
        EXC_MEMMANAGE => "MemManage",
        EXC_BUSFAULT => "BusFault",
        EXC_USAGEFAULT => "UsageFault",
        EXC_SVCALL => "SVCall",
        EXC_DEBUGMONITOR => "DebugMonitor",
        _ => "Exception",
    }
}

/// Memory map and implementation options of one machine instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineConfig {
    pub regions: Vec<RegionSpec>,
    pub fpb: FpbConfig,
    pub initial_vtor: u32,
    pub vtor_relocatable: bool,
}

pub const DEFAULT_FLASH_BASE: u32 = 0x0800_0000;
pub const DEFAULT_FLASH_SIZE: u32 = 1 << 20;
pub const DEFAULT_SRAM_BASE: u32 = 0x2000_0000;
pub const DEFAULT_SRAM_SIZE: u32 = 192 << 10;
pub const DEFAULT_MMIO_BASE: u32 = 0x4000_0000;
pub const DEFAULT_MMIO_SIZE: u32 = 0x1000;

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            regions: vec![
                RegionSpec::new("flash", DEFAULT_FLASH_BASE, DEFAULT_FLASH_SIZE, MemoryKind::Flash),
                RegionSpec::new("sram", DEFAULT_SRAM_BASE, DEFAULT_SRAM_SIZE, MemoryKind::Sram),
                RegionSpec::new("mmio", DEFAULT_MMIO_BASE, DEFAULT_MMIO_SIZE, MemoryKind::MmioStub),
            ],
            fpb: FpbConfig::default(),
            initial_vtor: DEFAULT_FLASH_BASE,
            vtor_relocatable: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Thread,
    Handler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResetKind {
    /// Cold boot: SRAM and every debug and patch unit are cleared.
    PowerOn,
    /// `AIRCR.SYSRESETREQ`: SRAM, the FPB and the debug registers survive.
    SystemReset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DebugOutcome {
    Halted,
    MonitorEntered,
    EscalatedToHardFault,
}

/// What a single call to [`Machine::step`] did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEvent {
    Executed { pc: u32, instruction: Instruction },
    ExceptionEntered { number: u32, return_address: u32 },
    ExceptionReturned { number: u32, to: u32 },
    DebugEvent { outcome: DebugOutcome, pc: u32 },
    Lockup { pc: u32 },
    SystemResetRequested,
}

impl StepEvent {
    pub fn kind(&self) -> EventKind {
        match self {
            StepEvent::Executed { .. } => EventKind::Executed,
            StepEvent::ExceptionEntered { .. } => EventKind::ExceptionEntered,
            StepEvent::ExceptionReturned { .. } => EventKind::ExceptionReturned,
            StepEvent::DebugEvent { .. } => EventKind::DebugEvent,
            StepEvent::Lockup { .. } => EventKind::Lockup,
            StepEvent::SystemResetRequested => EventKind::SystemResetRequested,
        }
    }
}

impl fmt::Display for StepEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            StepEvent::Executed { .. } => write!(f, "executed"),
            StepEvent::ExceptionEntered { number, .. } => write!(f, "exception_entered:{}", exception_name(number)),
            StepEvent::ExceptionReturned { number, .. } => {
                write!(f, "exception_returned:{}", exception_name(number))
            }
            StepEvent::DebugEvent { outcome, .. } => write!(f, "debug_event:{outcome:?}"),
            StepEvent::Lockup { .. } => write!(f, "lockup"),
            StepEvent::SystemResetRequested => write!(f, "system_reset_requested"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Executed,
    ExceptionEntered,
    ExceptionReturned,
    DebugEvent,
    Lockup,
    SystemResetRequested,
}

/// Stop conditions for [`Machine::run_until`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stop {
    /// Steps taken by this call.
    MaxSteps(u64),
    /// Checked before each step.
    PcEquals(u32),
    Event(EventKind),
    /// Entry into one specific exception.
    ExceptionEntered(u32),
    /// A step that reached an MMIO stub with a write.
    MmioWrite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxSteps,
    PcEquals(u32),
    Event(StepEvent),
    MmioWrite,
    Locked,
    Halted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunResult {
    pub steps: u64,
    pub stop: StopReason,
    pub events: Vec<StepEvent>,
}

/// One executed step as seen by a tracer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRecord {
    pub step_index: u64,
    pub pc: u32,
    pub raw: Vec<u16>,
    pub mnemonic: String,
    pub event: StepEvent,
}

/// Architectural state of the core.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cpu {
    /// r0..r12 and lr; index 13 is unused, the stack pointers are banked.
    regs: [u32; 15],
    pc: u32,
    msp: u32,
    psp: u32,
    n: bool,
    z: bool,
    c: bool,
    v: bool,
    control: u32,
    mode: Mode,
    active: Vec<u32>,
    locked: bool,
    halted: bool,
}

impl Cpu {
    fn new() -> Cpu {
        Cpu {
            regs: [0; 15],
            pc: 0,
            msp: 0,
            psp: 0,
            n: false,
            z: false,
            c: false,
            v: false,
            control: 0,
            mode: Mode::Thread,
            active: Vec::new(),
            locked: false,
            halted: false,
        }
    }

    fn uses_psp(&self) -> bool {
        self.mode == Mode::Thread && self.control & CONTROL_SPSEL != 0
    }

    fn sp(&self) -> u32 {
        if self.uses_psp() {
            self.psp
        } else {
            self.msp
        }
    }

    fn set_sp(&mut self, value: u32) {
        if self.uses_psp() {
            self.psp = value & !3;
        } else {
            self.msp = value & !3;
        }
    }

    fn ipsr(&self) -> u32 {
        if self.mode == Mode::Handler {
            self.active.last().copied().unwrap_or(0)
        } else {
            0
        }
    }

    fn xpsr(&self) -> u32 {
        (u32::from(self.n) << 31)
            | (u32::from(self.z) << 30)
            | (u32::from(self.c) << 29)
            | (u32::from(self.v) << 28)
            | XPSR_T
            | self.ipsr()
    }

    fn privilege(&self) -> Privilege {
        if self.mode == Mode::Handler || self.control & CONTROL_NPRIV == 0 {
            Privilege::Privileged
        } else {
            Privilege::Unprivileged
        }
    }
}

/// Execution failures that become exceptions.
enum Trap {
    Fault(FaultKind),
    Undefined,
    InvalidState,
    Svc,
    Debug,
}

/// What an executed instruction did besides updating state.
enum Flow {
    Next,
    Jump(u32),
    ExceptionReturn(u32),
}

pub struct Machine {
    cpu: Cpu,
    pub bus: Bus,
    config: MachineConfig,
    steps: u64,
    exception_log: Vec<(u32, u32)>,
    trace: Option<Vec<StepRecord>>,
}

impl Machine {
    /// Builds a machine with empty memories. Call [`Machine::reset`] after loading an image.
    pub fn new(config: MachineConfig) -> Result<Machine, Error> {
        let bus = Bus::new(&config.regions, config.fpb, config.initial_vtor, config.vtor_relocatable)?;
        Ok(Machine { cpu: Cpu::new(), bus, config, steps: 0, exception_log: Vec::new(), trace: None })
    }

    pub fn config(&self) -> &MachineConfig {
        &self.config
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<StepRecord> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn trace(&self) -> &[StepRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Every exception entered so far as `(number, return address)`.
    pub fn exception_log(&self) -> &[(u32, u32)] {
        &self.exception_log
    }

    pub fn exceptions_taken(&self, number: u32) -> usize {
        self.exception_log.iter().filter(|(n, _)| *n == number).count()
    }

    pub fn pc(&self) -> u32 {
        self.cpu.pc
    }

    pub fn set_pc(&mut self, pc: u32) {
        self.cpu.pc = pc & !1;
    }

    pub fn reg(&self, r: Reg) -> u32 {
        match r.index() {
            13 => self.cpu.sp(),
            15 => self.cpu.pc,
            i => self.cpu.regs[i],
        }
    }

    pub fn set_reg(&mut self, r: Reg, value: u32) {
        match r.index() {
            13 => self.cpu.set_sp(value),
            15 => self.set_pc(value),
            i => self.cpu.regs[i] = value,
        }
    }

    pub fn msp(&self) -> u32 {
        self.cpu.msp
    }

    pub fn psp(&self) -> u32 {
        self.cpu.psp
    }

    pub fn mode(&self) -> Mode {
        self.cpu.mode
    }

    pub fn control(&self) -> u32 {
        self.cpu.control
    }

    pub fn xpsr(&self) -> u32 {
        self.cpu.xpsr()
    }

    pub fn privilege(&self) -> Privilege {
        self.cpu.privilege()
    }

    pub fn active_exceptions(&self) -> &[u32] {
        &self.cpu.active
    }

    pub fn is_locked(&self) -> bool {
        self.cpu.locked
    }

    pub fn is_halted(&self) -> bool {
        self.cpu.halted
    }

    /// A debug probe attaching sets `DHCSR.C_DEBUGEN`.
    pub fn probe_attach(&mut self) {
        self.bus.scb.debugen = true;
    }

    pub fn probe_detach(&mut self) {
        self.bus.scb.debugen = false;
        self.resume();
    }

    /// Leaves debug halt state.
    pub fn resume(&mut self) {
        self.cpu.halted = false;
        self.bus.scb.halted = false;
    }

    /// Privileged or unprivileged word read through the full bus pipeline.
    pub fn read_word(&mut self, address: u32, privilege: Privilege) -> BusResult {
        self.bus.read(Access::new(address, AccessKind::DataRead, 4, privilege))
    }

    /// Word write through the full bus pipeline. A write that requests a
    /// system reset (AIRCR.SYSRESETREQ) resets the machine before returning.
    pub fn write_word(&mut self, address: u32, value: u32, privilege: Privilege) -> BusResult {
        let result = self.bus.write(Access::new(address, AccessKind::DataWrite, 4, privilege), value);
        if self.bus.take_reset_request() {
            self.reset(ResetKind::SystemReset);
        }
        result
    }

    pub fn load_bytes(&mut self, address: u32, bytes: &[u8]) -> Result<(), Error> {
        self.bus.load_bytes(address, bytes)
    }

    pub fn peek_word(&self, address: u32) -> Option<u32> {
        self.bus.peek_word(address)
    }

    fn priority(&self, number: u32) -> i32 {
        match number {
            EXC_RESET => -3,
            EXC_HARDFAULT => -1,
            n => self.bus.scb.system_priority(n),
        }
    }

    pub fn execution_priority(&self) -> i32 {
        self.cpu.active.iter().map(|&n| self.priority(n)).min().unwrap_or(THREAD_PRIORITY)
    }

    pub fn reset(&mut self, kind: ResetKind) {
        match kind {
            ResetKind::PowerOn => {
                self.bus.clear_sram();
                self.bus.fpb.reset();
                self.bus.mpu.reset();
                self.bus.scb.power_on_reset();
            }
            ResetKind::SystemReset => {
                self.bus.mpu.reset();
                self.bus.scb.system_reset();
            }
        }
        self.bus.take_reset_request();
        self.boot_core();
    }

    /// Core part of every reset: registers cleared, stack pointer and entry
    /// point loaded from the vector table.
    pub fn boot_core(&mut self) {
        self.cpu = Cpu::new();
        self.cpu.regs[14] = 0xFFFF_FFFF;
        let vtor = self.bus.scb.vtor();
        let sp = self.vector_fetch(vtor);
        let entry = self.vector_fetch(vtor.wrapping_add(4));
        match (sp, entry) {
            (Some(sp), Some(entry)) if entry & 1 == 1 => {
                self.cpu.msp = sp & !3;
                self.cpu.pc = entry & !1;
            }
            _ => {
                self.lockup();
            }
        }
    }

    fn vector_fetch(&mut self, address: u32) -> Option<u32> {
        self.bus.read(Access::new(address, AccessKind::VectorFetch, 4, Privilege::Privileged)).ok()
    }

    fn lockup(&mut self) -> StepEvent {
        self.cpu.locked = true;
        self.cpu.pc = LOCKUP_PC;
        self.bus.scb.locked_up = true;
        StepEvent::Lockup { pc: LOCKUP_PC }
    }

    fn take_fault(&mut self, fault: FaultKind, return_address: u32) -> StepEvent {
        match fault {
            FaultKind::MemManage => self.take_exception(EXC_MEMMANAGE, return_address),
            // BusFault and UsageFault are not enabled separately and escalate.
            FaultKind::BusFault => self.take_exception(EXC_HARDFAULT, return_address),
        }
    }

    /// Exception arbitration followed by entry.
    fn take_exception(&mut self, number: u32, return_address: u32) -> StepEvent {
        let current = self.execution_priority();
        let target = if self.priority(number) < current {
            number
        } else if current > -1 {
            EXC_HARDFAULT
        } else {
            return self.lockup();
        };
        self.enter(target, return_address)
    }

    fn enter(&mut self, mut number: u32, return_address: u32) -> StepEvent {
        let privilege = self.cpu.privilege();
        let sp = self.cpu.sp();
        let align = sp & 4 != 0;
        let frame = sp.wrapping_sub(0x20) & !4;
        let xpsr = self.cpu.xpsr() | if align { XPSR_FRAME_ALIGN } else { 0 };
        let words = [
            self.cpu.regs[0],
            self.cpu.regs[1],
            self.cpu.regs[2],
            self.cpu.regs[3],
            self.cpu.regs[12],
            self.cpu.regs[14],
            return_address,
            xpsr,
        ];
        let mut stacking_fault = false;
        for (i, w) in words.iter().enumerate() {
            let a = Access::new(frame.wrapping_add(4 * i as u32), AccessKind::DataWrite, 4, privilege);
            if let Outcome::Fault(_) = self.bus.write(a, *w).outcome {
                stacking_fault = true;
                break;
            }
        }
        if stacking_fault && number != EXC_HARDFAULT {
            // Derived fault: escalate without stacking again.
            if self.execution_priority() <= -1 {
                return self.lockup();
            }
            number = EXC_HARDFAULT;
        } else if stacking_fault {
            return self.lockup();
        }
        self.cpu.set_sp(frame);
        self.cpu.regs[14] = match (self.cpu.mode, self.cpu.uses_psp()) {
            (Mode::Handler, _) => EXC_RETURN_HANDLER,
            (Mode::Thread, false) => EXC_RETURN_THREAD_MSP,
            (Mode::Thread, true) => EXC_RETURN_THREAD_PSP,
        };
        self.cpu.mode = Mode::Handler;
        self.cpu.control &= !CONTROL_SPSEL;

        let vtor = self.bus.scb.vtor();
        let mut vector = self.vector_fetch(vtor.wrapping_add(4 * number)).filter(|v| v & 1 == 1);
        if vector.is_none() {
            if number == EXC_HARDFAULT || self.execution_priority() <= -1 {
                return self.lockup();
            }
            number = EXC_HARDFAULT;
            vector = self.vector_fetch(vtor.wrapping_add(4 * number)).filter(|v| v & 1 == 1);
            if vector.is_none() {
                return self.lockup();
            }
        }
        self.cpu.active.push(number);
        self.cpu.pc = vector.unwrap() & !1;
        self.exception_log.push((number, return_address));
        StepEvent::ExceptionEntered { number, return_address }
    }

    fn exception_return(&mut self, exc_return: u32, instr_pc: u32) -> StepEvent {
        let valid = match exc_return {
            EXC_RETURN_HANDLER => self.cpu.active.len() >= 2,
            EXC_RETURN_THREAD_MSP | EXC_RETURN_THREAD_PSP => self.cpu.active.len() == 1,
            _ => false,
        };
        if !valid || self.cpu.mode != Mode::Handler {
            return self.take_exception(EXC_HARDFAULT, instr_pc);
        }
        let to_thread = exc_return != EXC_RETURN_HANDLER;
        let use_psp = exc_return == EXC_RETURN_THREAD_PSP;
        let frame = if use_psp { self.cpu.psp } else { self.cpu.msp };
        let privilege = if to_thread && self.cpu.control & CONTROL_NPRIV != 0 {
            Privilege::Unprivileged
        } else {
            Privilege::Privileged
        };
        let mut words = [0u32; 8];
        for (i, w) in words.iter_mut().enumerate() {
            let a = Access::new(frame.wrapping_add(4 * i as u32), AccessKind::DataRead, 4, privilege);
            match self.bus.read(a).outcome {
                Outcome::Value(v) => *w = v,
                Outcome::Fault(f) => return self.take_fault(f, instr_pc),
            }
        }
        let number = self.cpu.active.pop().unwrap_or(0);
        self.cpu.regs[0..4].copy_from_slice(&words[0..4]);
        self.cpu.regs[12] = words[4];
        self.cpu.regs[14] = words[5];
        self.cpu.pc = words[6] & !1;
        let xpsr = words[7];
        self.cpu.n = xpsr & (1 << 31) != 0;
        self.cpu.z = xpsr & (1 << 30) != 0;
        self.cpu.c = xpsr & (1 << 29) != 0;
        self.cpu.v = xpsr & (1 << 28) != 0;
        let popped = frame.wrapping_add(0x20).wrapping_add(if xpsr & XPSR_FRAME_ALIGN != 0 { 4 } else { 0 });
        if to_thread {
            self.cpu.mode = Mode::Thread;
        }
        if use_psp {
            self.cpu.control |= CONTROL_SPSEL;
            self.cpu.psp = popped;
        } else {
            self.cpu.control &= !CONTROL_SPSEL;
            self.cpu.msp = popped;
        }
        StepEvent::ExceptionReturned { number, to: self.cpu.pc }
    }

    /// Breakpoint instruction or FPB breakpoint at `pc`.
    fn debug_event(&mut self, pc: u32) -> StepEvent {
        if self.bus.scb.debugen {
            self.cpu.halted = true;
            self.bus.scb.halted = true;
            self.cpu.pc = pc;
            return StepEvent::DebugEvent { outcome: DebugOutcome::Halted, pc };
        }
        let current = self.execution_priority();
        if self.bus.scb.demcr() & DEMCR_MON_EN != 0 && self.priority(EXC_DEBUGMONITOR) < current {
            self.enter(EXC_DEBUGMONITOR, pc);
            return StepEvent::DebugEvent { outcome: DebugOutcome::MonitorEntered, pc };
        }
        if current > -1 {
            self.enter(EXC_HARDFAULT, pc);
            if self.cpu.locked {
                return StepEvent::Lockup { pc: LOCKUP_PC };
            }
            return StepEvent::DebugEvent { outcome: DebugOutcome::EscalatedToHardFault, pc };
        }
        self.lockup()
    }

    fn fetch(&mut self, address: u32) -> BusResult {
        self.bus.read(Access::new(address, AccessKind::InstructionFetch, 2, self.cpu.privilege()))
    }

    /// Executes one instruction or takes one pending exception.
    pub fn step(&mut self) -> StepEvent {
        if self.cpu.locked {
            return StepEvent::Lockup { pc: self.cpu.pc };
        }
        if self.cpu.halted {
            return StepEvent::DebugEvent { outcome: DebugOutcome::Halted, pc: self.cpu.pc };
        }
        let pc = self.cpu.pc;
        let (event, raw, mnemonic) = self.step_inner(pc);
        let event = if self.bus.take_reset_request() {
            self.reset(ResetKind::SystemReset);
            StepEvent::SystemResetRequested
        } else {
            event
        };
        if let Some(trace) = self.trace.as_mut() {
            trace.push(StepRecord { step_index: self.steps, pc, raw, mnemonic, event });
        }
        self.steps += 1;
        event
    }

    fn step_inner(&mut self, pc: u32) -> (StepEvent, Vec<u16>, String) {
        let demcr = self.bus.scb.demcr();
        if demcr & DEMCR_MON_PEND != 0
            && demcr & DEMCR_MON_EN != 0
            && self.priority(EXC_DEBUGMONITOR) < self.execution_priority()
        {
            self.bus.scb.set_demcr_bits(DEMCR_MON_PEND, false);
            return (self.enter(EXC_DEBUGMONITOR, pc), Vec::new(), String::new());
        }

        let first = self.fetch(pc);
        let lo = match first.outcome {
            Outcome::Value(v) => v as u16,
            Outcome::Fault(f) => return (self.take_fault(f, pc), Vec::new(), String::new()),
        };
        if first.breakpoint {
            return (self.debug_event(pc), vec![lo], String::new());
        }
        let mut raw = vec![lo];
        let hi = if isa::is_wide(lo) {
            match self.fetch(pc.wrapping_add(2)).outcome {
                Outcome::Value(v) => {
                    raw.push(v as u16);
                    Some(v as u16)
                }
                Outcome::Fault(f) => return (self.take_fault(f, pc), raw, String::new()),
            }
        } else {
            None
        };
        let instruction = isa::decode(lo, hi);
        let mnemonic = instruction.disassemble(pc);
        let next = pc.wrapping_add(instruction.size());
        let event = match self.execute(instruction, pc) {
            Ok(Flow::Next) => {
                self.cpu.pc = next;
                StepEvent::Executed { pc, instruction }
            }
            Ok(Flow::Jump(target)) => {
                self.cpu.pc = target & !1;
                StepEvent::Executed { pc, instruction }
            }
            Ok(Flow::ExceptionReturn(value)) => self.exception_return(value, pc),
            Err(Trap::Fault(f)) => self.take_fault(f, pc),
            Err(Trap::Undefined | Trap::InvalidState) => self.take_exception(EXC_HARDFAULT, pc),
            Err(Trap::Svc) => self.take_exception(EXC_SVCALL, next),
            Err(Trap::Debug) => self.debug_event(pc),
        };
        (event, raw, mnemonic)
    }

    /// Register read with the architectural PC offset.
    fn read_reg(&self, r: Reg, pc: u32) -> u32 {
        if r == Reg::PC {
            pc.wrapping_add(4)
        } else {
            self.reg(r)
        }
    }

    fn load(&mut self, address: u32, size: u32) -> Result<u32, Trap> {
        let access = Access::new(address, AccessKind::DataRead, size, self.cpu.privilege());
        match self.bus.read(access).outcome {
            Outcome::Value(v) => Ok(v),
            Outcome::Fault(f) => Err(Trap::Fault(f)),
        }
    }

    fn store(&mut self, address: u32, size: u32, value: u32) -> Result<(), Trap> {
        let access = Access::new(address, AccessKind::DataWrite, size, self.cpu.privilege());
        match self.bus.write(access, value).outcome {
            Outcome::Value(_) => Ok(()),
            Outcome::Fault(f) => Err(Trap::Fault(f)),
        }
    }

    fn set_nz(&mut self, result: u32) {
        self.cpu.n = result & (1 << 31) != 0;
        self.cpu.z = result == 0;
    }

    fn add_with_carry(&mut self, a: u32, b: u32, carry: bool) -> u32 {
        let wide = u64::from(a) + u64::from(b) + u64::from(carry);
        let result = wide as u32;
        let signed = i64::from(a as i32) + i64::from(b as i32) + i64::from(carry);
        self.set_nz(result);
        self.cpu.c = wide > u64::from(u32::MAX);
        self.cpu.v = i64::from(result as i32) != signed;
        result
    }

    /// Branch target written by a load or `bx`: exception return in handler
    /// mode, otherwise the Thumb bit must be set.
    fn interworking_target(&self, value: u32) -> Result<Flow, Trap> {
        if self.cpu.mode == Mode::Handler && value >= 0xF000_0000 {
            return Ok(Flow::ExceptionReturn(value));
        }
        if value & 1 == 0 {
            return Err(Trap::InvalidState);
        }
        Ok(Flow::Jump(value))
    }

    fn execute(&mut self, instruction: Instruction, pc: u32) -> Result<Flow, Trap> {
        use Instruction::*;
        match instruction {
            LslImm { rd, rm, shift } => {
                let v = self.reg(rm);
                let result = if shift == 0 {
                    v
                } else {
                    self.cpu.c = (v >> (32 - u32::from(shift))) & 1 != 0;
                    v << shift
                };
                self.set_nz(result);
                self.set_reg(rd, result);
            }
            LsrImm { rd, rm, shift } => {
                let v = self.reg(rm);
                let shift = u32::from(shift);
                self.cpu.c = (v >> (shift - 1)) & 1 != 0;
                let result = if shift == 32 { 0 } else { v >> shift };
                self.set_nz(result);
                self.set_reg(rd, result);
            }
            AddReg { rd, rn, rm } => {
                let r = self.add_with_carry(self.reg(rn), self.reg(rm), false);
                self.set_reg(rd, r);
            }
            SubReg { rd, rn, rm } => {
                let r = self.add_with_carry(self.reg(rn), !self.reg(rm), true);
                self.set_reg(rd, r);
            }
            AddImm3 { rd, rn, imm } => {
                let r = self.add_with_carry(self.reg(rn), u32::from(imm), false);
                self.set_reg(rd, r);
            }
            SubImm3 { rd, rn, imm } => {
                let r = self.add_with_carry(self.reg(rn), !u32::from(imm), true);
                self.set_reg(rd, r);
            }
            MovImm { rd, imm } => {
                self.set_nz(u32::from(imm));
                self.set_reg(rd, u32::from(imm));
            }
            CmpImm { rn, imm } => {
                self.add_with_carry(self.reg(rn), !u32::from(imm), true);
            }
            AddImm8 { rdn, imm } => {
                let r = self.add_with_carry(self.reg(rdn), u32::from(imm), false);
                self.set_reg(rdn, r);
            }
            SubImm8 { rdn, imm } => {
                let r = self.add_with_carry(self.reg(rdn), !u32::from(imm), true);
                self.set_reg(rdn, r);
            }
            Alu { op, rdn, rm } => {
                let (a, b) = (self.reg(rdn), self.reg(rm));
                let r = match op {
                    AluOp::And => a & b,
                    AluOp::Eor => a ^ b,
                    AluOp::Orr => a | b,
                    AluOp::Mul => a.wrapping_mul(b),
                };
                self.set_nz(r);
                self.set_reg(rdn, r);
            }
            CmpReg { rn, rm } => {
                self.add_with_carry(self.reg(rn), !self.reg(rm), true);
            }
            AddHigh { rdn, rm } => {
                let r = self.read_reg(rdn, pc).wrapping_add(self.read_reg(rm, pc));
                if rdn == Reg::PC {
                    return Ok(Flow::Jump(r));
                }
                self.set_reg(rdn, r);
            }
            MovReg { rd, rm } => {
                let v = self.read_reg(rm, pc);
                if rd == Reg::PC {
                    return Ok(Flow::Jump(v));
                }
                self.set_reg(rd, v);
            }
            Bx { rm } => return self.interworking_target(self.read_reg(rm, pc)),
            Blx { rm } => {
                let target = self.read_reg(rm, pc);
                if target & 1 == 0 {
                    return Err(Trap::InvalidState);
                }
                self.cpu.regs[14] = pc.wrapping_add(2) | 1;
                return Ok(Flow::Jump(target));
            }
            LdrLit { rt, imm } => {
                let address = (pc.wrapping_add(4) & !3).wrapping_add(u32::from(imm));
                let v = self.load(address, 4)?;
                self.set_reg(rt, v);
            }
            LdrLitWide { rt, add, imm } => {
                let base = pc.wrapping_add(4) & !3;
                let address =
                    if add { base.wrapping_add(u32::from(imm)) } else { base.wrapping_sub(u32::from(imm)) };
                let v = self.load(address, 4)?;
                if rt == Reg::PC {
                    return self.interworking_target(v);
                }
                self.set_reg(rt, v);
            }
            LoadStoreReg { load, rt, rn, rm } => {
                let address = self.reg(rn).wrapping_add(self.reg(rm));
                if load {
                    let v = self.load(address, 4)?;
                    self.set_reg(rt, v);
                } else {
                    self.store(address, 4, self.reg(rt))?;
                }
            }
            LoadStoreImm { load, size, rt, rn, imm } => {
                let address = self.reg(rn).wrapping_add(u32::from(imm));
                let bytes = size.bytes();
                if load {
                    let v = self.load(address, bytes)?;
                    self.set_reg(rt, v);
                } else {
                    let v = match size {
                        MemSize::Word => self.reg(rt),
                        MemSize::Half => self.reg(rt) & 0xFFFF,
                        MemSize::Byte => self.reg(rt) & 0xFF,
                    };
                    self.store(address, bytes, v)?;
                }
            }
            LoadStoreSp { load, rt, imm } => {
                let address = self.cpu.sp().wrapping_add(u32::from(imm));
                if load {
                    let v = self.load(address, 4)?;
                    self.set_reg(rt, v);
                } else {
                    self.store(address, 4, self.reg(rt))?;
                }
            }
            Svc { .. } => return Err(Trap::Svc),
            Bkpt { .. } => return Err(Trap::Debug),
            Nop | Dsb | Isb => {}
            BCond { cond, .. } => {
                if cond.holds(self.cpu.n, self.cpu.z, self.cpu.c, self.cpu.v) {
                    return Ok(Flow::Jump(instruction.branch_target(pc).unwrap()));
                }
            }
            B { .. } => return Ok(Flow::Jump(instruction.branch_target(pc).unwrap())),
            Bl { .. } => {
                self.cpu.regs[14] = pc.wrapping_add(4) | 1;
                return Ok(Flow::Jump(instruction.branch_target(pc).unwrap()));
            }
            MsrControl { rn } => {
                if self.cpu.privilege().is_privileged() {
                    let v = self.reg(rn);
                    let mut control = (self.cpu.control & !CONTROL_NPRIV) | (v & CONTROL_NPRIV);
                    if self.cpu.mode == Mode::Thread {
                        control = (control & !CONTROL_SPSEL) | (v & CONTROL_SPSEL);
                    }
                    self.cpu.control = control;
                }
            }
            MrsControl { rd } => {
                let v = self.cpu.control;
                self.set_reg(rd, v);
            }
            Undefined { .. } => return Err(Trap::Undefined),
        }
        Ok(Flow::Next)
    }

    /// Runs until one of `stops` fires. The core also stops when it locks up
    /// or halts in debug state.
    pub fn run_until(&mut self, stops: &[Stop]) -> RunResult {
        let mut steps = 0u64;
        let mut events = Vec::new();
        loop {
            if self.cpu.locked {
                return RunResult { steps, events: std::mem::take(&mut events), stop: StopReason::Locked };
            }
            if self.cpu.halted {
                return RunResult { steps, events: std::mem::take(&mut events), stop: StopReason::Halted };
            }
            for stop in stops {
                match *stop {
                    Stop::PcEquals(pc) if self.cpu.pc == pc & !1 => {
                        return RunResult { steps, events: std::mem::take(&mut events), stop: StopReason::PcEquals(pc) };
                    }
                    Stop::MaxSteps(max) if steps >= max => return RunResult { steps, events: std::mem::take(&mut events), stop: StopReason::MaxSteps },
                    _ => {}
                }
            }
            let mmio_before = self.bus.mmio_log().len();
            let event = self.step();
            events.push(event);
            steps += 1;
            for stop in stops {
                let hit = match *stop {
                    Stop::Event(kind) => event.kind() == kind,
                    Stop::ExceptionEntered(n) => {
                        matches!(event, StepEvent::ExceptionEntered { number, .. } if number == n)
                            || (n == EXC_DEBUGMONITOR
                                && matches!(event, StepEvent::DebugEvent { outcome: DebugOutcome::MonitorEntered, .. }))
                    }
                    Stop::MmioWrite => {
                        if self.bus.mmio_log().len() > mmio_before {
                            return RunResult { steps, events: std::mem::take(&mut events), stop: StopReason::MmioWrite };
                        }
                        false
                    }
                    _ => false,
                };
                if hit {
                    return RunResult { steps, events: std::mem::take(&mut events), stop: StopReason::Event(event) };
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::Assembler;
    use crate::fpb::{comp_value, fp_comp_addr, FP_CTRL_ADDR, FP_REMAP_ADDR, REPLACE_BKPT_BOTH};
    use crate::mpu::{rasr, CTRL_ENABLE, CTRL_PRIVDEFENA, MPU_CTRL};
    use crate::scb::{AIRCR, DEMCR, VTOR};
    use proptest::prelude::*;

    const FLASH: u32 = DEFAULT_FLASH_BASE;
    const SRAM: u32 = DEFAULT_SRAM_BASE;
    const STACK_TOP: u32 = SRAM + 0x8000;
    const P: Privilege = Privilege::Privileged;

    /// Vector table with every handler pointing at `b .` except the ones in
    /// `handlers`, then `body` as the reset handler.
    fn image(handlers: &[(u32, &str)], body: impl FnOnce(&mut Assembler)) -> Machine {
        let mut a = Assembler::new(FLASH);
        a.word(STACK_TOP);
        a.word_label("reset", true);
        for n in 2..16 {
            match handlers.iter().find(|(h, _)| *h == n) {
                Some((_, label)) => a.word_label(label, true),
                None => a.word_label("spin", true),
            }
        }
        a.label("spin");
        a.b("spin");
        a.label("reset");
        body(&mut a);
        let program = a.finish().unwrap();
        let mut m = Machine::new(MachineConfig::default()).unwrap();
        m.load_bytes(program.origin, &program.bytes).unwrap();
        m.reset(ResetKind::PowerOn);
        m.enable_trace();
        m
    }

    #[test]
    fn reset_loads_sp_and_entry() {
        let m = image(&[], |a| {
            a.nop();
        });
        assert_eq!(m.msp(), STACK_TOP);
        assert_eq!(m.pc(), FLASH + 0x40 + 2);
        assert_eq!(m.mode(), Mode::Thread);
        assert_eq!(m.reg(Reg::LR), 0xFFFF_FFFF);
        assert_eq!(m.privilege(), Privilege::Privileged);
    }

    #[test]
    fn arithmetic_and_flags() {
        let mut m = image(&[], |a| {
            a.movs(Reg::R0, 200);
            a.adds8(Reg::R0, 100);
            a.subs_imm3(Reg::R1, Reg::R0, 7);
            a.cmp_imm(Reg::R1, 255);
            a.lsls(Reg::R2, Reg::R0, 24);
            a.b_self();
        });
        m.run_until(&[Stop::MaxSteps(5)]);
        assert_eq!(m.reg(Reg::R0), 300);
        assert_eq!(m.reg(Reg::R1), 293);
        assert_eq!(m.reg(Reg::R2), 300 << 24);
        let x = m.xpsr();
        // 300 << 24 = 0x2C000000 with carry out of bit 32 - 24 = bit 8 of 300 (set).
        assert_eq!(x >> 28, 0b0010);
    }

    #[test]
    fn add_with_carry_matches_wide_arithmetic() {
        let mut m = Machine::new(MachineConfig::default()).unwrap();
        for (a, b) in [(0u32, 0u32), (u32::MAX, 1), (0x7FFF_FFFF, 1), (0x8000_0000, 0x8000_0000), (5, !5)] {
            let r = m.add_with_carry(a, b, false);
            assert_eq!(r, a.wrapping_add(b));
            assert_eq!(m.cpu.c, a.checked_add(b).is_none());
            assert_eq!(m.cpu.v, (a as i32).checked_add(b as i32).is_none());
        }
    }

    #[test]
    fn svc_enters_and_returns() {
        let mut m = image(&[(11, "svc")], |a| {
            a.movs(Reg::R0, 7);
            a.svc(0);
            a.label("after");
            a.b_self();
            a.label("svc");
            a.adds8(Reg::R0, 1);
            a.ldr_sp(Reg::R1, 0);
            a.str_sp(Reg::R0, 0);
            a.bx(Reg::LR);
        });
        let r = m.run_until(&[Stop::Event(EventKind::ExceptionEntered)]);
        assert_eq!(r.stop, StopReason::Event(StepEvent::ExceptionEntered { number: 11, return_address: FLASH + 0x46 }));
        assert_eq!(m.mode(), Mode::Handler);
        assert_eq!(m.reg(Reg::LR), EXC_RETURN_THREAD_MSP);
        assert_eq!(m.msp(), STACK_TOP - 0x20);
        assert_eq!(m.execution_priority(), 0);
        let r = m.run_until(&[Stop::Event(EventKind::ExceptionReturned)]);
        assert!(matches!(r.stop, StopReason::Event(StepEvent::ExceptionReturned { number: 11, .. })));
        assert_eq!(m.reg(Reg::R0), 8, "stacked r0 was overwritten by the handler");
        assert_eq!(m.msp(), STACK_TOP);
        assert_eq!(m.mode(), Mode::Thread);
        assert_eq!(m.pc(), FLASH + 0x46);
    }

    #[test]
    fn frame_alignment_bit_round_trips() {
        let mut m = image(&[(11, "svc")], |a| {
            a.ldr_const(Reg::R0, STACK_TOP - 4);
            a.mov(Reg::SP, Reg::R0);
            a.svc(0);
            a.b_self();
            a.label("svc");
            a.bx(Reg::LR);
            a.pool();
        });
        m.run_until(&[Stop::Event(EventKind::ExceptionEntered)]);
        assert_eq!(m.msp(), STACK_TOP - 0x28);
        assert_ne!(m.peek_word(m.msp() + 28).unwrap() & XPSR_FRAME_ALIGN, 0);
        m.run_until(&[Stop::Event(EventKind::ExceptionReturned)]);
        assert_eq!(m.msp(), STACK_TOP - 4);
    }

    #[test]
    fn unprivileged_thread_on_psp() {
        let mut m = image(&[(11, "svc")], |a| {
            a.ldr_const(Reg::R0, STACK_TOP - 0x1000);
            a.mov(Reg::R8, Reg::R0);
            a.movs(Reg::R1, 2);
            a.msr_control(Reg::R1);
            a.mov(Reg::SP, Reg::R8);
            a.movs(Reg::R1, 3);
            a.msr_control(Reg::R1);
            a.movs(Reg::R1, 0);
            a.msr_control(Reg::R1);
            a.svc(0);
            a.b_self();
            a.label("svc");
            a.mrs_control(Reg::R4);
            a.bx(Reg::LR);
            a.pool();
        });
        m.run_until(&[Stop::Event(EventKind::ExceptionEntered)]);
        assert_eq!(m.psp(), STACK_TOP - 0x1020);
        assert_eq!(m.msp(), STACK_TOP);
        assert_eq!(m.reg(Reg::LR), EXC_RETURN_THREAD_PSP);
        m.run_until(&[Stop::Event(EventKind::ExceptionReturned)]);
        assert_eq!(m.reg(Reg::R4), 1, "SPSEL clear in handler mode, nPRIV kept");
        assert_eq!(m.control(), 3, "unprivileged MSR is ignored");
        assert_eq!(m.privilege(), Privilege::Unprivileged);
    }

    #[test]
    fn invalid_exc_return_is_hardfault() {
        let mut m = image(&[(11, "svc"), (3, "hf")], |a| {
            a.svc(0);
            a.b_self();
            a.label("svc");
            a.ldr_const(Reg::R0, 0xFFFF_FFE1);
            a.bx(Reg::R0);
            a.label("hf");
            a.b_self();
            a.pool();
        });
        m.run_until(&[Stop::ExceptionEntered(EXC_HARDFAULT), Stop::MaxSteps(20)]);
        assert_eq!(m.active_exceptions(), &[EXC_SVCALL, EXC_HARDFAULT]);
    }

    #[test]
    fn mpu_violation_raises_memmanage_and_nested_fault_locks_up() {
        let mut m = image(&[(4, "mm"), (3, "hf")], |a| {
            a.ldr_const(Reg::R1, SRAM + 0x100);
            a.ldr(Reg::R0, Reg::R1, 0);
            a.b_self();
            a.label("mm");
            a.b_self();
            a.label("hf");
            a.ldr(Reg::R0, Reg::R1, 0);
            a.b_self();
            a.pool();
        });
        m.bus.mpu.configure_region(0, SRAM, rasr(16, 3, false, true));
        m.bus.mpu.configure_region(1, SRAM, rasr(9, 0, false, true));
        m.bus.mpu.reg_write(MPU_CTRL, CTRL_ENABLE | CTRL_PRIVDEFENA);
        let r = m.run_until(&[Stop::ExceptionEntered(EXC_MEMMANAGE), Stop::MaxSteps(10)]);
        assert!(matches!(r.stop, StopReason::Event(StepEvent::ExceptionEntered { number: 4, .. })));
        assert_eq!(m.exceptions_taken(EXC_MEMMANAGE), 1);

        // Same fault at priority -1: lockup.
        let mut m2 = image(&[(3, "hf")], |a| {
            a.ldr_const(Reg::R1, SRAM + 0x100);
            a.udf();
            a.label("hf");
            a.ldr(Reg::R0, Reg::R1, 0);
            a.b_self();
            a.pool();
        });
        m2.bus.mpu.configure_region(1, SRAM, rasr(9, 0, false, true));
        m2.bus.mpu.reg_write(MPU_CTRL, CTRL_ENABLE | CTRL_PRIVDEFENA);
        let r = m2.run_until(&[Stop::MaxSteps(10)]);
        assert_eq!(r.stop, StopReason::Locked);
        assert_eq!(m2.pc(), LOCKUP_PC);
        assert_eq!(m2.step(), StepEvent::Lockup { pc: LOCKUP_PC });
    }

    #[test]
    fn bkpt_resolution_order() {
        let body = |a: &mut Assembler| {
            a.bkpt(0);
            a.b_self();
            a.label("dm");
            a.b_self();
            a.label("hf");
            a.b_self();
        };
        // Probe attached: halt.
        let mut m = image(&[(12, "dm"), (3, "hf")], body);
        m.probe_attach();
        assert!(matches!(m.step(), StepEvent::DebugEvent { outcome: DebugOutcome::Halted, .. }));
        assert_eq!(m.run_until(&[Stop::MaxSteps(5)]).stop, StopReason::Halted);
        // Monitor enabled: DebugMonitor.
        let mut m = image(&[(12, "dm"), (3, "hf")], body);
        m.write_word(DEMCR, DEMCR_MON_EN, P);
        assert!(matches!(m.step(), StepEvent::DebugEvent { outcome: DebugOutcome::MonitorEntered, .. }));
        assert_eq!(m.active_exceptions(), &[EXC_DEBUGMONITOR]);
        // Neither: escalation.
        let mut m = image(&[(12, "dm"), (3, "hf")], body);
        assert!(matches!(m.step(), StepEvent::DebugEvent { outcome: DebugOutcome::EscalatedToHardFault, .. }));
        assert_eq!(m.active_exceptions(), &[EXC_HARDFAULT]);
    }

    #[test]
    fn fpb_breakpoint_uses_debug_path() {
        let mut m = image(&[(12, "dm")], |a| {
            a.nop();
            a.nop();
            a.b_self();
            a.label("dm");
            a.b_self();
        });
        let entry = m.pc();
        m.write_word(DEMCR, DEMCR_MON_EN, P);
        m.write_word(fp_comp_addr(0), comp_value(entry + 2, REPLACE_BKPT_BOTH, true), P);
        m.write_word(FP_CTRL_ADDR, 3, P);
        assert!(matches!(m.step(), StepEvent::Executed { .. }));
        assert_eq!(
            m.step(),
            StepEvent::DebugEvent { outcome: DebugOutcome::MonitorEntered, pc: entry + 2 }
        );
    }

    #[test]
    fn mon_pend_is_taken_at_step_start() {
        let mut m = image(&[(12, "dm")], |a| {
            a.b_self();
            a.label("dm");
            a.b_self();
        });
        m.write_word(DEMCR, DEMCR_MON_EN | DEMCR_MON_PEND, P);
        assert!(matches!(m.step(), StepEvent::ExceptionEntered { number: EXC_DEBUGMONITOR, .. }));
        assert_eq!(m.bus.scb.demcr() & DEMCR_MON_PEND, 0);
    }

    #[test]
    fn system_reset_keeps_fpb_and_sram_and_clears_mpu() {
        let mut m = image(&[], |a| {
            a.ldr_const(Reg::R0, 0x05FA_0004);
            a.ldr_const(Reg::R1, AIRCR);
            a.str(Reg::R0, Reg::R1, 0);
            a.b_self();
            a.pool();
        });
        m.write_word(FP_REMAP_ADDR, SRAM + 0x1000, P);
        m.write_word(FP_CTRL_ADDR, 3, P);
        m.write_word(SRAM + 0x2000, 0xABCD, P);
        m.write_word(VTOR, SRAM, P);
        m.write_word(DEMCR, DEMCR_MON_EN, P);
        m.bus.mpu.reg_write(MPU_CTRL, CTRL_ENABLE | CTRL_PRIVDEFENA);
        let r = m.run_until(&[Stop::Event(EventKind::SystemResetRequested), Stop::MaxSteps(10)]);
        assert_eq!(r.stop, StopReason::Event(StepEvent::SystemResetRequested));
        assert!(m.bus.fpb.is_enabled());
        assert_eq!(m.peek_word(SRAM + 0x2000), Some(0xABCD));
        assert_eq!(m.bus.scb.vtor(), FLASH);
        assert_eq!(m.bus.scb.demcr(), DEMCR_MON_EN);
        assert!(!m.bus.mpu.enabled());
        assert_eq!(m.pc(), FLASH + 0x42);

        m.reset(ResetKind::PowerOn);
        assert!(!m.bus.fpb.is_enabled());
        assert_eq!(m.peek_word(SRAM + 0x2000), Some(0));
        assert_eq!(m.bus.scb.demcr(), 0);
    }

    #[test]
    fn bad_reset_vector_locks_up() {
        let mut m = Machine::new(MachineConfig::default()).unwrap();
        m.reset(ResetKind::PowerOn);
        assert!(m.is_locked());
        assert_eq!(m.run_until(&[Stop::MaxSteps(3)]).stop, StopReason::Locked);
    }

    proptest! {
        /// Two machines built the same way produce identical traces.
        #[test]
        fn execution_is_deterministic(seed in any::<u64>(), n in 1u32..40) {
            let body = |a: &mut Assembler| {
                a.ldr_const(Reg::R0, seed as u32);
                a.ldr_const(Reg::R1, (seed >> 32) as u32);
                a.label("loop");
                a.eors(Reg::R0, Reg::R1);
                a.muls(Reg::R1, Reg::R0);
                a.adds8(Reg::R1, 13);
                a.ldr_const(Reg::R2, SRAM + 0x100);
                a.str(Reg::R0, Reg::R2, 0);
                a.b("loop");
                a.pool();
            };
            let mut x = image(&[], body);
            let mut y = image(&[], body);
            x.run_until(&[Stop::MaxSteps(u64::from(n) * 5)]);
            y.run_until(&[Stop::MaxSteps(u64::from(n) * 5)]);
            prop_assert_eq!(x.trace(), y.trace());
            prop_assert_eq!(x.reg(Reg::R0), y.reg(Reg::R0));
        }

        /// Exception entry followed by return restores every stacked register.
        #[test]
        fn exception_frame_round_trip(r in proptest::collection::vec(any::<u32>(), 5), lr in any::<u32>(), flags in 0u32..16) {
            let mut m = image(&[(11, "svc")], |a| {
                a.svc(0);
                a.b_self();
                a.label("svc");
                a.movs(Reg::R0, 0);
                a.movs(Reg::R1, 0);
                a.mov(Reg::R12, Reg::R1);
                a.cmp_imm(Reg::R0, 1);
                a.bx(Reg::LR);
            });
            let svc_pc = m.pc();
            for (i, v) in r[..4].iter().enumerate() {
                m.set_reg(Reg::new(i as u8), *v);
            }
            m.set_reg(Reg::R12, r[4]);
            m.set_reg(Reg::LR, lr);
            m.cpu.n = flags & 8 != 0;
            m.cpu.z = flags & 4 != 0;
            m.cpu.c = flags & 2 != 0;
            m.cpu.v = flags & 1 != 0;
            let before = m.xpsr();
            m.run_until(&[Stop::Event(EventKind::ExceptionReturned)]);
            prop_assert_eq!(m.pc(), svc_pc + 2);
            for (i, v) in r[..4].iter().enumerate() {
                prop_assert_eq!(m.reg(Reg::new(i as u8)), *v);
            }
            prop_assert_eq!(m.reg(Reg::R12), r[4]);
            prop_assert_eq!(m.reg(Reg::LR), lr);
            prop_assert_eq!(m.xpsr(), before);
            prop_assert_eq!(m.msp(), STACK_TOP);
        }
    }
}
