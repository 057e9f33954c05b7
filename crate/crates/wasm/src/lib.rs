//! Browser demo bindings: run baseline-vs-instrumented experiments, sweep
//! coverage ranges, and preview instrumented assembly, all in-page.
//!
//! Every entry point returns a JSON string (errors come back as
//! `{"error": "..."}`) so the page needs no generated classes, just
//! `JSON.parse`.

use serde_json::json;
use wasm_bindgen::prelude::wasm_bindgen;

use boss_sim::asm::disassemble;
use boss_sim::config::parse_experiment;
use boss_sim::instrument::{instrument, InstrumentOptions, Variant};
use boss_sim::report::{run_experiment, Report};
use boss_sim::workload::build;

fn error_json(msg: impl std::fmt::Display) -> String {
    json!({ "error": msg.to_string() }).to_string()
}

fn config_text(
    workload: &str,
    trip: u32,
    generations: u32,
    seed: u32,
    bias: f64,
    predictor: &str,
    placement: &str,
    filler: u32,
) -> String {
    format!(
        "workload = {workload}\ntrip = {trip}\ngenerations = {generations}\nseed = {seed}\n\
         bias = {bias}\npredictor = {predictor}\nplacement = {placement}\nfiller = {filler}\n"
    )
}

fn report_payload(report: &Report) -> serde_json::Value {
    let rows: Vec<serde_json::Value> = report
        .rows
        .iter()
        .map(|row| {
            let hist: Vec<serde_json::Value> = row
                .stats
                .iteration_histogram(row.target_pc, report.trip)
                .into_iter()
                .map(|b| {
                    json!({
                        "iter": b.iter,
                        "instances": b.instances,
                        "mispredictions": b.mispredictions,
                    })
                })
                .collect();
            json!({
                "name": row.name,
                "failed": row.failed,
                "cycles": row.stats.cycles,
                "committed": row.stats.committed,
                "branches": row.stats.committed_branches,
                "mispredictions": row.stats.mispredictions,
                "target_mispredictions": row.stats.mispredictions_at(row.target_pc),
                "target_instances": row.stats.instances_at(row.target_pc),
                "boss_hits": row.stats.boss_hits,
                "boss_misses": row.stats.boss_misses,
                "boss_wrong_hints": row.stats.boss_wrong_hints,
                "pre_exec_committed": row.pre_exec_committed,
                "ipc": row.derived.ipc,
                "mpki": row.derived.mpki,
                "speedup": row.derived.speedup,
                "ipc_gain": row.derived.ipc_gain,
                "overhead": row.derived.overhead,
                "target_rate": row.derived.target_mispredict_rate,
                "histogram": hist,
            })
        })
        .collect();
    json!({
        "workload": report.workload.kind.name(),
        "trip": report.trip,
        "predictor": report.predictor.name(),
        "rows": rows,
    })
}

/// Run baseline plus one instrumentation variant and return both rows with
/// per-iteration misprediction histograms.
#[wasm_bindgen]
pub fn run_demo(
    workload: &str,
    trip: u32,
    generations: u32,
    seed: u32,
    bias: f64,
    predictor: &str,
    variant: &str,
    placement: &str,
    filler: u32,
) -> String {
    let variant_section = match variant {
        "none" => String::new(),
        v => format!("[variant.{}]\ninstrument = {v}\n", v.replace(':', "_")),
    };
    let text = config_text(workload, trip, generations, seed, bias, predictor, placement, filler)
        + &variant_section;
    let exp = match parse_experiment(&text) {
        Ok(e) => e,
        Err(e) => return error_json(e),
    };
    match run_experiment(&exp) {
        Ok(report) => report_payload(&report).to_string(),
        Err(e) => error_json(e),
    }
}

/// Sweep coverage ranges over a workload's iteration space: full coverage
/// plus every given `lo:hi` range, all against the shared baseline.
#[wasm_bindgen]
pub fn coverage_sweep(
    workload: &str,
    trip: u32,
    generations: u32,
    seed: u32,
    bias: f64,
    predictor: &str,
    placement: &str,
    filler: u32,
    ranges: &str,
) -> String {
    let mut sections = String::from("[variant.full]\ninstrument = plain\n");
    for (i, range) in ranges.split(',').filter(|r| !r.trim().is_empty()).enumerate() {
        let range = range.trim();
        if !range.contains(':') {
            return error_json(format!("range `{range}` must be lo:hi"));
        }
        sections.push_str(&format!("[variant.r{i}]\ninstrument = plain\nrange = {range}\n"));
    }
    let text = config_text(workload, trip, generations, seed, bias, predictor, placement, filler)
        + &sections;
    let exp = match parse_experiment(&text) {
        Ok(e) => e,
        Err(e) => return error_json(e),
    };
    match run_experiment(&exp) {
        Ok(report) => {
            let full = report.rows.iter().find(|r| r.name == "full");
            let mut payload = report_payload(&report);
            if let (Some(full), Some(rows)) = (full, payload.get_mut("rows")) {
                if let Some(rows) = rows.as_array_mut() {
                    for row in rows.iter_mut() {
                        let cycles = row["cycles"].as_u64().unwrap_or(0) as f64;
                        let committed = row["committed"].as_u64().unwrap_or(0) as f64;
                        row["cycles_vs_full"] =
                            json!(cycles / full.stats.cycles.max(1) as f64);
                        row["overhead_vs_full"] =
                            json!(committed / full.stats.committed.max(1) as f64);
                    }
                }
            }
            payload.to_string()
        }
        Err(e) => error_json(e),
    }
}

/// Instrument a built-in workload and return original and transformed
/// assembly side by side.
#[wasm_bindgen]
pub fn instrument_preview(
    workload: &str,
    trip: u32,
    generations: u32,
    seed: u32,
    bias: f64,
    placement: &str,
    filler: u32,
    variant: &str,
) -> String {
    let text = config_text(workload, trip, generations, seed, bias, "tage", placement, filler);
    let exp = match parse_experiment(&text) {
        Ok(e) => e,
        Err(e) => return error_json(e),
    };
    let w = match build(&exp.workload) {
        Ok(w) => w,
        Err(e) => return error_json(e),
    };
    let parsed = match Variant::parse(variant) {
        Ok(v) => v,
        Err(e) => return error_json(e),
    };
    let options = InstrumentOptions { variant: parsed, ..Default::default() };
    match instrument(&w.structured, &w.target_label, &options) {
        Ok(inst) => json!({
            "original": disassemble(&w.program),
            "instrumented": disassemble(&inst.program),
            "target_pc": inst.target_pc,
            "end_pc": inst.end_pc,
            "pre_exec_instructions": inst.pre_exec_pcs.len(),
            "warnings": inst.warnings,
        })
        .to_string(),
        Err(e) => error_json(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_demo_produces_rows() {
        let out = run_demo("synthetic", 8, 2, 1, 0.5, "bimodal", "plain", "hot", 64);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!(v.get("error").is_none(), "{out}");
        assert_eq!(v["rows"].as_array().unwrap().len(), 2);
        assert_eq!(v["rows"][0]["name"], "baseline");
    }

    #[test]
    fn coverage_sweep_normalizes_to_full() {
        let out =
            coverage_sweep("synthetic", 8, 2, 1, 0.5, "bimodal", "hot", 64, "0:3, 4:7");
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!(v.get("error").is_none(), "{out}");
        let rows = v["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 4, "baseline, full, and two ranges");
        let full = rows.iter().find(|r| r["name"] == "full").unwrap();
        assert!((full["overhead_vs_full"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn preview_shows_both_programs() {
        let out = instrument_preview("synthetic", 8, 2, 1, 0.5, "hot", 16, "vec:8");
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!(v.get("error").is_none(), "{out}");
        assert!(v["instrumented"].as_str().unwrap().contains("VST"));
        assert!(!v["original"].as_str().unwrap().contains("VST"));
    }

    #[test]
    fn bad_input_reports_error_json() {
        let out = run_demo("nonsense", 8, 2, 1, 0.5, "bimodal", "plain", "hot", 64);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!(v.get("error").is_some());
    }
}
