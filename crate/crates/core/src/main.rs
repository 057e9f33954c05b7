//! Command-line driver: run experiments, instrument programs, compare
//! reports, dump oracle traces, and size the channel-unit storage.
//!
//! Exit codes: 0 success, 2 configuration error, 3 simulation failure,
//! 4 legality rejection.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use boss_sim::asm::{assemble, disassemble};
use boss_sim::config::parse_experiment;
use boss_sim::instrument::{InstrumentError, InstrumentOptions, Placement, Variant};
use boss_sim::oracle::{dump_trace, execute, DEFAULT_STEP_LIMIT};
use boss_sim::recover::{designate_target, recover_structure};
use boss_sim::report::{
    compare, histogram_csv, load_report_json, report_csv, report_json, report_summary,
    run_experiment,
};
use boss_sim::slice::SliceError;
use boss_sim::storage_bytes;

const EXIT_CONFIG: u8 = 2;
const EXIT_SIM: u8 = 3;
const EXIT_LEGALITY: u8 = 4;

#[derive(Parser)]
#[command(
    name = "boss-sim",
    about = "Trace-driven simulator for software pre-resolution of load-dependent branches"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file and write reports.
    Run {
        /// Experiment config (flat key = value with [variant.*] sections).
        config: PathBuf,
        /// Output directory for report.csv, report.json, summary.txt, and
        /// per-variant histogram CSVs.
        #[arg(short, long, default_value = "report")]
        out: PathBuf,
    },
    /// Instrument the designated loop of an assembly program.
    Instrument {
        /// Input program (.bss assembly text).
        input: PathBuf,
        /// Label of the designated target branch.
        #[arg(long)]
        target: String,
        /// plain | unroll:N | vec:W
        #[arg(long, default_value = "plain")]
        variant: String,
        /// Partial coverage ordinals n:m (inclusive).
        #[arg(long)]
        range: Option<String>,
        #[arg(long, default_value_t = 0)]
        channel: u32,
        /// earliest | at_loop
        #[arg(long, default_value = "earliest")]
        place: String,
        /// Output path; on legality rejection the original program is
        /// written unchanged.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Align report.json files from one setup into a summary table.
    Compare { reports: Vec<PathBuf> },
    /// Execute a program architecturally and print its event trace.
    DumpTrace {
        input: PathBuf,
        /// Stop after this many committed instructions.
        #[arg(long, default_value_t = DEFAULT_STEP_LIMIT)]
        limit: u64,
    },
    /// Print the storage budget of a channel-unit configuration in bytes.
    Storage {
        #[arg(long, default_value_t = 4)]
        channels: u64,
        #[arg(long, default_value_t = 256)]
        iters: u64,
    },
}

fn read(path: &PathBuf) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn diagnostic_code(e: &InstrumentError) -> &'static str {
    match e {
        InstrumentError::Slice(SliceError::LoopCarriedDependence(_)) => "E_LOOP_CARRIED",
        InstrumentError::Slice(SliceError::NestedTargetBranch(_)) => "E_NESTED_TARGET",
        InstrumentError::Slice(SliceError::SliceEscapesLoop(_)) => "E_SLICE_ESCAPES",
        InstrumentError::Slice(_) => "E_SLICE",
        InstrumentError::Lower(_) => "E_LOWER",
        InstrumentError::NoSuchTarget(_) => "E_NO_TARGET",
        InstrumentError::RegisterPressure(_) => "E_REG_PRESSURE",
        InstrumentError::Unsupported(_) => "E_UNSUPPORTED",
        InstrumentError::BadOptions(_) => "E_BAD_OPTIONS",
    }
}

fn run_command(cli: Cli) -> Result<(), (u8, String)> {
    match cli.command {
        Command::Run { config, out } => {
            let text = read(&config).map_err(|e| (EXIT_CONFIG, e))?;
            let exp = parse_experiment(&text).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
            let report = run_experiment(&exp).map_err(|e| (EXIT_SIM, e.to_string()))?;
            fs::create_dir_all(&out).map_err(|e| (EXIT_SIM, e.to_string()))?;
            let write = |name: &str, body: String| -> Result<(), (u8, String)> {
                fs::write(out.join(name), body).map_err(|e| (EXIT_SIM, e.to_string()))
            };
            write("report.csv", report_csv(&report))?;
            write("report.json", report_json(&report).map_err(|e| (EXIT_SIM, e.to_string()))?)?;
            write("summary.txt", report_summary(&report))?;
            for row in &report.rows {
                if row.failed.is_none() {
                    write(&format!("hist_{}.csv", row.name), histogram_csv(&report, row))?;
                }
            }
            print!("{}", report_summary(&report));
            if report.rows.iter().any(|r| r.failed.is_some()) {
                return Err((EXIT_SIM, "one or more variants failed".into()));
            }
            Ok(())
        }
        Command::Instrument { input, target, variant, range, channel, place, output } => {
            let text = read(&input).map_err(|e| (EXIT_CONFIG, e))?;
            let program = assemble(&text).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
            let mut structured =
                recover_structure(&program).map_err(|e| (EXIT_LEGALITY, e.to_string()))?;
            if !designate_target(&mut structured, &target) {
                fs::write(&output, disassemble(&program))
                    .map_err(|e| (EXIT_SIM, e.to_string()))?;
                return Err((
                    EXIT_LEGALITY,
                    format!("E_NO_TARGET: no recoverable loop binds `{target}` to a branch"),
                ));
            }
            let mut options = InstrumentOptions {
                channel,
                variant: Variant::parse(&variant).map_err(|e| (EXIT_CONFIG, e.to_string()))?,
                placement: match place.as_str() {
                    "earliest" => Placement::Earliest,
                    "at_loop" => Placement::AtLoop,
                    other => return Err((EXIT_CONFIG, format!("unknown placement `{other}`"))),
                },
                ..Default::default()
            };
            if let Some(r) = range {
                let (a, b) = r
                    .split_once(':')
                    .ok_or((EXIT_CONFIG, format!("range must be n:m, got `{r}`")))?;
                options.coverage = Some((
                    a.parse().map_err(|_| (EXIT_CONFIG, format!("bad range `{r}`")))?,
                    b.parse().map_err(|_| (EXIT_CONFIG, format!("bad range `{r}`")))?,
                ));
            }
            match boss_sim::instrument::instrument(&structured, &target, &options) {
                Ok(inst) => {
                    for w in &inst.warnings {
                        eprintln!("warning: {w}");
                    }
                    fs::write(&output, disassemble(&inst.program))
                        .map_err(|e| (EXIT_SIM, e.to_string()))?;
                    eprintln!(
                        "instrumented: target pc {} end pc {} channel {}",
                        inst.target_pc, inst.end_pc, inst.channel
                    );
                    Ok(())
                }
                Err(e) => {
                    // Safe default: the original program unchanged, plus a
                    // machine-readable diagnostic on stderr.
                    fs::write(&output, disassemble(&program))
                        .map_err(|we| (EXIT_SIM, we.to_string()))?;
                    Err((EXIT_LEGALITY, format!("{}: {e}", diagnostic_code(&e))))
                }
            }
        }
        Command::Compare { reports } => {
            if reports.is_empty() {
                return Err((EXIT_CONFIG, "compare needs at least one report.json".into()));
            }
            let mut loaded = Vec::new();
            for path in &reports {
                let text = read(path).map_err(|e| (EXIT_CONFIG, e))?;
                loaded.push(load_report_json(&text).map_err(|e| (EXIT_CONFIG, e.to_string()))?);
            }
            let table = compare(&loaded).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
            print!("{table}");
            Ok(())
        }
        Command::DumpTrace { input, limit } => {
            let text = read(&input).map_err(|e| (EXIT_CONFIG, e))?;
            let program = assemble(&text).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
            let trace = execute(&program, limit);
            print!("{}", dump_trace(&trace));
            if let Some(fault) = trace.fault {
                return Err((EXIT_SIM, fault.to_string()));
            }
            Ok(())
        }
        Command::Storage { channels, iters } => {
            let bytes = storage_bytes(channels, iters).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
            println!("{bytes}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_command(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
