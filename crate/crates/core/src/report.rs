//! Experiment driver and report emitter: run every variant against the
//! shared baseline, derive normalized metrics, and render CSV / JSON /
//! plain-text artifacts. Outputs are byte-stable for a given config.
//!
//! Per §-style accounting, pre-execute instructions and their branches are
//! part of every instrumented variant's committed counts: MPKI and IPC
//! denominators include them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Experiment, VariantMode, VariantSpec};
use crate::frontend::{run_sim_with_meta, CoreConfig, SimStats};
use crate::instrument::{instrument, InstrumentError};
use crate::predictor::{make_predictor, PredictorConfig, PredictorError};
use crate::workload::{
    build, build_correlated_instrumentation, build_record_replay_instrumentation, WorkloadError,
    WorkloadSpec,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{0}")]
    Workload(#[from] WorkloadError),
    #[error("{0}")]
    Predictor(#[from] PredictorError),
    #[error("baseline variant failed: {0}")]
    BaselineFailed(String),
    #[error("reports disagree on {0}; comparison needs one workload/predictor/core setup")]
    Mismatched(&'static str),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

/// Metrics derived from one variant's stats against the baseline.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Derived {
    /// baseline cycles / variant cycles.
    pub speedup: f64,
    /// variant IPC / baseline IPC.
    pub ipc_gain: f64,
    /// variant committed / baseline committed.
    pub overhead: f64,
    pub ipc: f64,
    pub mpki: f64,
    pub target_mispredict_rate: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariantResult {
    pub name: String,
    /// Set when the variant could not be built or did not terminate.
    pub failed: Option<String>,
    pub stats: SimStats,
    pub target_pc: usize,
    /// Committed instructions belonging to inserted hint machinery.
    pub pre_exec_committed: u64,
    pub derived: Derived,
}

/// One experiment's full output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub workload: WorkloadSpec,
    pub predictor: PredictorConfig,
    pub core: CoreConfig,
    pub trip: u64,
    pub rows: Vec<VariantResult>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn run_variant(
    exp: &Experiment,
    variant: &VariantSpec,
) -> Result<(SimStats, usize, u64, Vec<String>), String> {
    let mut core = exp.core;
    core.boss_enabled = variant.boss_enabled;
    let predictor = make_predictor(exp.predictor).map_err(|e| e.to_string())?;

    let (program, target_pc, meta, hint_pcs, warnings) = match &variant.mode {
        VariantMode::Baseline => {
            let w = build(&exp.workload).map_err(|e| e.to_string())?;
            (w.program, w.target_pc, None, w.added_pcs, vec![])
        }
        VariantMode::PreExecute(options) => {
            let w = build(&exp.workload).map_err(|e| e.to_string())?;
            let inst = instrument(&w.structured, &w.target_label, options)
                .map_err(|e: InstrumentError| e.to_string())?;
            (
                inst.program,
                inst.target_pc,
                Some(inst.slice_loads),
                inst.pre_exec_pcs,
                inst.warnings,
            )
        }
        VariantMode::RecordReplay => {
            let w = build_record_replay_instrumentation(&exp.workload)
                .map_err(|e| e.to_string())?;
            (w.program, w.target_pc, None, w.added_pcs, vec![])
        }
        VariantMode::Correlated => {
            let w =
                build_correlated_instrumentation(&exp.workload).map_err(|e| e.to_string())?;
            (w.program, w.target_pc, None, w.added_pcs, vec![])
        }
    };

    let run = run_sim_with_meta(&program, predictor, &core, meta.as_ref());
    if !run.stats.completed {
        return Err("simulation did not terminate within the cycle budget".into());
    }
    let pre_exec_committed =
        run.committed_pcs.iter().filter(|pc| hint_pcs.contains(pc)).count() as u64;
    Ok((run.stats, target_pc, pre_exec_committed, warnings))
}

/// Run every variant. A failing variant is recorded and skipped; a failing
/// baseline aborts, since nothing could be normalized.
pub fn run_experiment(exp: &Experiment) -> Result<Report, ReportError> {
    let mut rows: Vec<VariantResult> = Vec::new();
    let mut baseline: Option<(u64, u64, f64)> = None; // cycles, committed, ipc

    for variant in &exp.variants {
        match run_variant(exp, variant) {
            Ok((stats, target_pc, pre_exec_committed, _warnings)) => {
                if matches!(variant.mode, VariantMode::Baseline) && baseline.is_none() {
                    baseline = Some((stats.cycles, stats.committed, stats.ipc()));
                }
                let (bc, bi, bipc) = baseline.unwrap_or((stats.cycles, stats.committed, stats.ipc()));
                let target_instances = stats.instances_at(target_pc);
                let derived = Derived {
                    speedup: ratio(bc as f64, stats.cycles as f64),
                    ipc_gain: ratio(stats.ipc(), bipc),
                    overhead: ratio(stats.committed as f64, bi as f64),
                    ipc: stats.ipc(),
                    mpki: stats.mpki(),
                    target_mispredict_rate: ratio(
                        stats.mispredictions_at(target_pc) as f64,
                        target_instances as f64,
                    ),
                };
                rows.push(VariantResult {
                    name: variant.name.clone(),
                    failed: None,
                    stats,
                    target_pc,
                    pre_exec_committed,
                    derived,
                });
            }
            Err(msg) => {
                if matches!(variant.mode, VariantMode::Baseline) {
                    return Err(ReportError::BaselineFailed(msg));
                }
                rows.push(VariantResult {
                    name: variant.name.clone(),
                    failed: Some(msg),
                    stats: SimStats::default(),
                    target_pc: 0,
                    pre_exec_committed: 0,
                    derived: Derived {
                        speedup: 0.0,
                        ipc_gain: 0.0,
                        overhead: 0.0,
                        ipc: 0.0,
                        mpki: 0.0,
                        target_mispredict_rate: 0.0,
                    },
                });
            }
        }
    }

    Ok(Report {
        workload: exp.workload,
        predictor: exp.predictor,
        core: exp.core,
        trip: exp.workload.trip,
        rows,
    })
}

const CSV_HEADER: &str = "variant,cycles,committed,committed_branches,mispredictions,\
target_mispredictions,target_instances,target_mispredict_rate,boss_hits,boss_misses,\
boss_wrong_hints,pre_exec_committed,ipc,mpki,speedup,ipc_gain,overhead,failed";

/// One row per variant; floats at fixed precision so bytes are stable.
pub fn report_csv(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CSV_HEADER}");
    for row in &report.rows {
        let s = &row.stats;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{:.6},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            row.name,
            s.cycles,
            s.committed,
            s.committed_branches,
            s.mispredictions,
            s.mispredictions_at(row.target_pc),
            s.instances_at(row.target_pc),
            row.derived.target_mispredict_rate,
            s.boss_hits,
            s.boss_misses,
            s.boss_wrong_hints,
            row.pre_exec_committed,
            row.derived.ipc,
            row.derived.mpki,
            row.derived.speedup,
            row.derived.ipc_gain,
            row.derived.overhead,
            row.failed.as_deref().unwrap_or("")
        );
    }
    out
}

/// Per-iteration misprediction histogram of the target branch:
/// `pc,iter,mispredicts,instances`.
pub fn histogram_csv(report: &Report, row: &VariantResult) -> String {
    let mut out = String::from("pc,iter,mispredicts,instances\n");
    for bucket in row.stats.iteration_histogram(row.target_pc, report.trip) {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.target_pc, bucket.iter, bucket.mispredictions, bucket.instances
        );
    }
    out
}

pub fn report_json(report: &Report) -> Result<String, ReportError> {
    Ok(serde_json::to_string_pretty(report)?)
}

pub fn load_report_json(text: &str) -> Result<Report, ReportError> {
    Ok(serde_json::from_str(text)?)
}

/// Human-oriented summary, one block per variant.
pub fn report_summary(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "workload={} trip={} generations={} seed={} predictor={} width={} window={}",
        report.workload.kind.name(),
        report.workload.trip,
        report.workload.generations,
        report.workload.seed,
        report.predictor.name(),
        report.core.width,
        report.core.window,
    );
    for row in &report.rows {
        if let Some(msg) = &row.failed {
            let _ = writeln!(out, "{:<12} FAILED: {msg}", row.name);
            continue;
        }
        let s = &row.stats;
        let _ = writeln!(
            out,
            "{:<12} cycles={:<10} committed={:<10} ipc={:<8.4} mpki={:<8.4} \
             target_rate={:<8.4} speedup={:<8.4} overhead={:<8.4} hits={} misses={} wrong={}",
            row.name,
            s.cycles,
            s.committed,
            row.derived.ipc,
            row.derived.mpki,
            row.derived.target_mispredict_rate,
            row.derived.speedup,
            row.derived.overhead,
            s.boss_hits,
            s.boss_misses,
            s.boss_wrong_hints,
        );
    }
    out
}

fn geomean(values: impl Iterator<Item = f64>) -> f64 {
    let mut product = 1.0f64;
    let mut n = 0usize;
    for v in values {
        if v > 0.0 {
            product *= v;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        product.powf(1.0 / n as f64)
    }
}

/// Align variant rows across reports of one setup into a single table,
/// with min/max/geomean summary rows. When an instrumented full-coverage
/// variant exists, coverage-range rows are additionally normalized to it.
pub fn compare(reports: &[Report]) -> Result<String, ReportError> {
    let first = reports.first().ok_or(ReportError::Mismatched("empty input"))?;
    for r in reports {
        if r.workload != first.workload {
            return Err(ReportError::Mismatched("workload"));
        }
        if r.predictor != first.predictor {
            return Err(ReportError::Mismatched("predictor"));
        }
        if r.core != first.core {
            return Err(ReportError::Mismatched("core config"));
        }
    }
    let rows: Vec<&VariantResult> =
        reports.iter().flat_map(|r| r.rows.iter()).filter(|r| r.failed.is_none()).collect();

    // Full-coverage denominator: the first instrumented, non-baseline row.
    let full = rows.iter().find(|r| r.name != "baseline" && r.stats.boss_hits > 0);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:>10} {:>10} {:>8} {:>8} {:>8} {:>8} {:>10} {:>10}",
        "variant",
        "cycles",
        "committed",
        "ipc",
        "mpki",
        "speedup",
        "overhead",
        "vs_full_cy",
        "vs_full_ov"
    );
    let mut cycles_col = Vec::new();
    let mut speedup_col = Vec::new();
    let mut overhead_col = Vec::new();
    for row in &rows {
        let (vs_cy, vs_ov) = match full {
            Some(f) if row.name != "baseline" => (
                ratio(row.stats.cycles as f64, f.stats.cycles as f64),
                ratio(row.stats.committed as f64, f.stats.committed as f64),
            ),
            _ => (0.0, 0.0),
        };
        cycles_col.push(row.stats.cycles as f64);
        speedup_col.push(row.derived.speedup);
        overhead_col.push(row.derived.overhead);
        let _ = writeln!(
            out,
            "{:<14} {:>10} {:>10} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>10.4} {:>10.4}",
            row.name,
            row.stats.cycles,
            row.stats.committed,
            row.derived.ipc,
            row.derived.mpki,
            row.derived.speedup,
            row.derived.overhead,
            vs_cy,
            vs_ov
        );
    }
    let fold = |name: &str, f: &dyn Fn(&[f64]) -> f64| {
        format!(
            "{:<14} {:>10.0} {:>10} {:>8} {:>8} {:>8.4} {:>8.4} {:>10} {:>10}",
            name,
            f(&cycles_col),
            "",
            "",
            "",
            f(&speedup_col),
            f(&overhead_col),
            "",
            ""
        )
    };
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let geo = |v: &[f64]| geomean(v.iter().copied());
    if !rows.is_empty() {
        let _ = writeln!(out, "{}", fold("min", &min));
        let _ = writeln!(out, "{}", fold("max", &max));
        let _ = writeln!(out, "{}", fold("geomean", &geo));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_experiment;

    fn tiny_experiment(extra: &str) -> Experiment {
        let text = format!(
            "workload = synthetic\ntrip = 8\ngenerations = 3\nfiller = 64\nplacement = hot\n\
             predictor = bimodal\n{extra}"
        );
        parse_experiment(&text).unwrap()
    }

    #[test]
    fn baseline_row_normalizes_to_one() {
        let exp = tiny_experiment("");
        let report = run_experiment(&exp).unwrap();
        assert_eq!(report.rows.len(), 1);
        let row = &report.rows[0];
        assert_eq!(row.name, "baseline");
        assert!(row.failed.is_none());
        assert!((row.derived.speedup - 1.0).abs() < 1e-12);
        assert!((row.derived.overhead - 1.0).abs() < 1e-12);
    }

    #[test]
    fn instrumented_row_has_overhead_above_one() {
        let exp = tiny_experiment("[variant.plain]\ninstrument = plain\n");
        let report = run_experiment(&exp).unwrap();
        assert_eq!(report.rows.len(), 2);
        let plain = &report.rows[1];
        assert!(plain.failed.is_none());
        assert!(plain.derived.overhead > 1.0);
        assert!(plain.pre_exec_committed > 0);
    }

    #[test]
    fn csv_and_json_round_trip_deterministically() {
        let exp = tiny_experiment("[variant.plain]\ninstrument = plain\n");
        let a = run_experiment(&exp).unwrap();
        let b = run_experiment(&exp).unwrap();
        assert_eq!(report_csv(&a), report_csv(&b));
        let json = report_json(&a).unwrap();
        let reloaded = load_report_json(&json).unwrap();
        assert_eq!(report_csv(&a), report_csv(&reloaded));
    }

    #[test]
    fn failed_variant_marked_and_run_continues() {
        // Vector width 16 exhausts free registers on this workload.
        let exp = tiny_experiment("[variant.wide]\ninstrument = vec:16\n");
        let report = run_experiment(&exp).unwrap();
        assert!(report.rows[1].failed.is_some());
        assert!(report.rows[0].failed.is_none());
    }

    #[test]
    fn compare_rejects_mismatched_predictors() {
        let a = run_experiment(&tiny_experiment("")).unwrap();
        let mut b_exp = tiny_experiment("");
        b_exp.predictor = PredictorConfig::DEFAULT_GSHARE;
        let b = run_experiment(&b_exp).unwrap();
        assert!(matches!(compare(&[a.clone(), b]), Err(ReportError::Mismatched("predictor"))));
        let table = compare(&[a]).unwrap();
        assert!(table.contains("baseline"));
        assert!(table.contains("geomean"));
    }

    #[test]
    fn histogram_csv_shape() {
        let exp = tiny_experiment("");
        let report = run_experiment(&exp).unwrap();
        let hist = histogram_csv(&report, &report.rows[0]);
        // Header plus one line per loop iteration.
        assert_eq!(hist.lines().count(), 1 + report.trip as usize);
    }
}
