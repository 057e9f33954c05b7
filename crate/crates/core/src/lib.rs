//! Trace-driven simulator and instrumentation toolkit for software
//! pre-resolution of load-dependent branches in loops.
//!
//! Software computes branch outcomes ahead of time and passes them to the
//! modeled processor frontend through memory-mapped channels (an 8-byte
//! configuration word plus a 256-slot outcome table per channel). The
//! frontend consults the channel unit before its history-based predictor,
//! so a pre-resolved branch never mispredicts; everything channel-borne is
//! a hint, and dropping it can change timing but never program results.
//!
//! Module map:
//! - [`ir`] / [`asm`]: the toy register-machine IR, its text format, and
//!   the channel address layout.
//! - [`structured`]: loop-aware program form and lowering to flat code.
//! - [`oracle`]: architectural interpreter producing ground-truth traces.
//! - [`predictor`]: baseline bimodal / gshare / tagged predictors.
//! - [`boss`]: the per-channel outcome store and its fetch/squash/commit
//!   event machine.
//! - [`cache`] / [`frontend`]: timing model wiring predictor + channels +
//!   caches over the oracle trace.
//! - [`slice`] / [`instrument`]: the compiler side; backslice extraction
//!   and pre-execute loop synthesis.
//! - [`workload`]: deterministic microbenchmark generators.
//! - [`config`] / [`report`]: experiment driver and report emission.

pub mod asm;
pub mod boss;
pub mod cache;
pub mod config;
pub mod frontend;
pub mod instrument;
pub mod ir;
pub mod oracle;
pub mod predictor;
pub mod recover;
pub mod report;
pub mod slice;
pub mod structured;
pub mod workload;

pub use boss::{storage_bytes, BossUnit};
pub use frontend::{run_sim, CoreConfig, SimRun, SimStats};
pub use ir::{MmioLayout, Program};
pub use oracle::{branch_profile, execute, DynTrace};
pub use predictor::{make_predictor, Predictor, PredictorConfig};
