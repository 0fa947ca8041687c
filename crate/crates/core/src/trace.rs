//! Line-delimited JSON step traces.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::machine::StepRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceLine {
    pub scenario: String,
    pub run: String,
    pub step_index: u64,
    pub pc: String,
    pub raw_halfwords: Vec<String>,
    pub mnemonic: String,
    pub event_kind: String,
}

impl TraceLine {
    pub fn from_record(scenario: &str, run: &str, record: &StepRecord) -> TraceLine {
        TraceLine {
            scenario: scenario.to_string(),
            run: run.to_string(),
            step_index: record.step_index,
            pc: format!("0x{:08x}", record.pc),
            raw_halfwords: record.raw.iter().map(|h| format!("{h:04x}")).collect(),
            mnemonic: record.mnemonic.clone(),
            event_kind: record.event.to_string(),
        }
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl<W: Write>(out: &mut W, lines: &[TraceLine]) -> io::Result<()> {
    for line in lines {
        serde_json::to_writer(&mut *out, line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
