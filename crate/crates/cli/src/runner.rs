//! Runs a set of scenarios, optionally in parallel, and writes reports and
//! traces in name order.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use fpb_emu::trace::write_jsonl;
use fpb_scenarios::{ScenarioContext, ScenarioEntry, ScenarioOutcome};

pub fn run_all(entries: &[&'static ScenarioEntry], ctx: &ScenarioContext, jobs: usize) -> Vec<ScenarioOutcome> {
    let next = AtomicUsize::new(0);
    let done = Mutex::new(Vec::with_capacity(entries.len()));
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, entries.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(entry) = entries.get(i) else { break };
                let out = (entry.run)(ctx);
                done.lock().expect("no worker panics while holding the lock").push(out);
            });
        }
    });
    let mut outcomes = done.into_inner().expect("workers joined");
    outcomes.sort_by(|a, b| a.report.name.cmp(&b.report.name));
    outcomes
}

/// Opens `path` for writing, or stdout for `None`.
fn sink(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

#[derive(Debug)]
pub struct IoFailure {
    pub path: Option<PathBuf>,
    pub source: io::Error,
}

impl std::fmt::Display for IoFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.path {
            Some(p) => write!(f, "{}: {}", p.display(), self.source),
            None => write!(f, "stdout: {}", self.source),
        }
    }
}

pub fn write_reports(outcomes: &[ScenarioOutcome], path: Option<&Path>) -> Result<(), IoFailure> {
    let fail = |source| IoFailure { path: path.map(Path::to_path_buf), source };
    let mut out = sink(path).map_err(fail)?;
    for o in outcomes {
        writeln!(out, "{}", o.report.to_json()).map_err(fail)?;
    }
    out.flush().map_err(fail)
}

pub fn write_traces(outcomes: &[ScenarioOutcome], path: &Path) -> Result<(), IoFailure> {
    let fail = |source| IoFailure { path: Some(path.to_path_buf()), source };
    let mut out = sink(Some(path)).map_err(fail)?;
    for o in outcomes {
        write_jsonl(&mut out, &o.trace).map_err(fail)?;
    }
    out.flush().map_err(fail)
}

/// 0 when every report passed, 1 otherwise.
pub fn exit_status(outcomes: &[ScenarioOutcome]) -> u8 {
    if !outcomes.is_empty() && outcomes.iter().all(|o| o.report.passed) {
        0
    } else {
        1
    }
}
