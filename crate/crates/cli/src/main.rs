mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fpb_emu::machine::Stop;
use fpb_emu::manifest::FirmwareManifest;
use fpb_scenarios::context::DEFAULT_MAX_STEPS;
use fpb_scenarios::{find, registry, MachineOverrides, ScenarioContext};

const EXIT_FAILED: u8 = 1;
const EXIT_UNKNOWN: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "fpb-emu", version, about = "FPB emulator and attack-scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the registered scenarios.
    List,
    /// Run scenarios (all of them when no names are given) and report.
    Run(RunArgs),
    /// Boot the image described by a manifest and run it.
    Boot(BootArgs),
}

#[derive(Args)]
struct Variant {
    /// Machine description; its FPB and VTOR settings become the defaults.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    num_code: Option<u8>,
    #[arg(long)]
    num_lit: Option<u8>,
    /// FP_REMAP reports no remap support.
    #[arg(long)]
    no_remap: bool,
    /// VTOR is read-only.
    #[arg(long)]
    no_vtor: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    max_steps: u64,
    /// Write the step trace (one JSON object per step) here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario names, or `all`.
    names: Vec<String>,
    #[command(flatten)]
    variant: Variant,
    /// Write reports here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct BootArgs {
    #[command(flatten)]
    variant: Variant,
}

impl Variant {
    fn manifest(&self) -> Result<Option<FirmwareManifest>, String> {
        self.manifest.as_deref().map(FirmwareManifest::load).transpose().map_err(|e| e.to_string())
    }

    fn overrides(&self, manifest: Option<&FirmwareManifest>) -> MachineOverrides {
        let base = manifest.map(|m| &m.config);
        MachineOverrides {
            num_code: self.num_code.or(base.map(|c| c.fpb.num_code)),
            num_lit: self.num_lit.or(base.map(|c| c.fpb.num_lit)),
            has_remap: if self.no_remap { Some(false) } else { base.map(|c| c.fpb.has_remap) },
            vtor_relocatable: if self.no_vtor { Some(false) } else { base.map(|c| c.vtor_relocatable) },
        }
    }
}

fn list() -> ExitCode {
    let width = registry().iter().map(|e| e.name.len()).max().unwrap_or(0);
    for e in registry() {
        println!("{:width$}  {}", e.name, e.summary);
    }
    ExitCode::SUCCESS
}

fn run(args: RunArgs) -> ExitCode {
    let all = args.names.is_empty() || args.names.iter().any(|n| n == "all");
    let mut entries = Vec::new();
    if all {
        entries.extend(registry());
    } else {
        for name in &args.names {
            match find(name) {
                Some(e) if !entries.iter().any(|x: &&_| std::ptr::eq(*x, e)) => entries.push(e),
                Some(_) => {}
                None => {
                    eprintln!("unknown scenario `{name}`; see `fpb-emu list`");
                    return ExitCode::from(EXIT_UNKNOWN);
                }
            }
        }
    }
    let manifest = match args.variant.manifest() {
        Ok(m) => m,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_IO);
        }
    };
    let ctx = ScenarioContext {
        overrides: args.variant.overrides(manifest.as_ref()),
        seed: args.seed,
        max_steps: args.variant.max_steps,
    };
    let outcomes = runner::run_all(&entries, &ctx, args.jobs);
    let written = runner::write_reports(&outcomes, args.report.as_deref())
        .and_then(|()| args.variant.trace.as_deref().map_or(Ok(()), |p| runner::write_traces(&outcomes, p)));
    if let Err(e) = written {
        eprintln!("{e}");
        return ExitCode::from(EXIT_IO);
    }
    for o in &outcomes {
        eprintln!("{} {}", if o.report.passed { "PASS" } else { "FAIL" }, o.report.name);
    }
    ExitCode::from(runner::exit_status(&outcomes))
}

fn boot(args: BootArgs) -> ExitCode {
    let manifest = match args.variant.manifest() {
        Ok(Some(m)) => m,
        Ok(None) => {
            eprintln!("boot needs --manifest");
            return ExitCode::from(EXIT_FAILED);
        }
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_IO);
        }
    };
    let overrides = args.variant.overrides(Some(&manifest));
    let mut manifest = manifest;
    manifest.config = match overrides.apply(manifest.config.clone()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_FAILED);
        }
    };
    let mut machine = match manifest.build_machine() {
        Ok(m) => m,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_FAILED);
        }
    };
    machine.enable_trace();
    let result = machine.run_until(&[Stop::MaxSteps(args.variant.max_steps)]);
    if let Some(path) = &args.variant.trace {
        let lines: Vec<_> = machine
            .take_trace()
            .iter()
            .map(|r| fpb_emu::trace::TraceLine::from_record("boot", "image", r))
            .collect();
        let written = std::fs::File::create(path).and_then(|f| {
            let mut w = std::io::BufWriter::new(f);
            fpb_emu::trace::write_jsonl(&mut w, &lines)
        });
        if let Err(e) = written {
            eprintln!("{}: {e}", path.display());
            return ExitCode::from(EXIT_IO);
        }
    }
    let summary = serde_json::json!({
        "steps": result.steps,
        "stop": format!("{:?}", result.stop),
        "pc": format!("0x{:08x}", machine.pc()),
        "mmio_writes": machine.bus.mmio_log().len(),
    });
    println!("{summary}");
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::List => list(),
        Command::Run(args) => run(args),
        Command::Boot(args) => boot(args),
    }
}
