//! Experiment configuration: a flat `key = value` text format with
//! `[variant.NAME]` sections.
//!
//! Top-level keys describe the workload, predictor, and core; each variant
//! section describes one instrumentation setting. A `baseline` variant (no
//! instrumentation, channels off) is always present as the normalization
//! denominator, whether or not the file lists one.
//!
//! ```text
//! workload = synthetic        ; synthetic | kill_neighbours | kill_or_connect
//!                             ; | record_replay | correlated
//! trip = 256
//! generations = 8
//! seed = 42
//! bias = 0.5
//! repeat_prob = 0.93
//! correlation_prob = 0.8
//! chain = 1
//! placement = cold            ; hot | cold
//! filler = 2048               ; lead instructions before the target loop
//! predictor = tage            ; always_taken | bimodal | gshare | tage
//! core.width = 8
//! core.window = 192
//! core.resolve_delay = 6
//! core.refill_penalty = 12
//! core.max_cycles = 20000000
//!
//! [variant.plain]
//! instrument = plain          ; plain | unroll:N | vec:W
//!                             ; | record_replay | correlated
//! channel = 0
//! range = 1:2                 ; partial coverage ordinals, inclusive
//! place = earliest            ; earliest | at_loop
//! boss = on                   ; per-variant channel-unit override
//! ```

use std::str::FromStr;

use thiserror::Error;

use crate::frontend::CoreConfig;
use crate::instrument::{InstrumentOptions, Placement, Variant};
use crate::predictor::PredictorConfig;
use crate::workload::{PlacementClass, WorkloadKind, WorkloadSpec};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

fn err(line: usize, msg: impl Into<String>) -> ConfigError {
    ConfigError::Parse { line, msg: msg.into() }
}

/// How one experiment variant transforms (or doesn't) the workload.
#[derive(Clone, PartialEq, Debug)]
pub enum VariantMode {
    Baseline,
    PreExecute(InstrumentOptions),
    RecordReplay,
    Correlated,
}

#[derive(Clone, PartialEq, Debug)]
pub struct VariantSpec {
    pub name: String,
    pub mode: VariantMode,
    /// Channel unit on/off for this variant's run.
    pub boss_enabled: bool,
}

impl VariantSpec {
    pub fn baseline() -> VariantSpec {
        VariantSpec { name: "baseline".into(), mode: VariantMode::Baseline, boss_enabled: false }
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct Experiment {
    pub workload: WorkloadSpec,
    pub predictor: PredictorConfig,
    pub core: CoreConfig,
    pub variants: Vec<VariantSpec>,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            workload: WorkloadSpec::default_for(WorkloadKind::Synthetic),
            predictor: PredictorConfig::DEFAULT_TAGE,
            core: CoreConfig::default(),
            variants: vec![VariantSpec::baseline()],
        }
    }
}

fn parse_bool(v: &str, line: usize) -> Result<bool, ConfigError> {
    match v {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(err(line, format!("expected a boolean, got `{v}`"))),
    }
}

fn parse_num<T: FromStr>(v: &str, line: usize) -> Result<T, ConfigError> {
    v.parse().map_err(|_| err(line, format!("bad number `{v}`")))
}

fn parse_range(v: &str, line: usize) -> Result<(u64, u64), ConfigError> {
    let (a, b) =
        v.split_once(':').ok_or_else(|| err(line, format!("range must be n:m, got `{v}`")))?;
    Ok((parse_num(a.trim(), line)?, parse_num(b.trim(), line)?))
}

/// Parse an experiment description.
pub fn parse_experiment(text: &str) -> Result<Experiment, ConfigError> {
    let mut exp = Experiment { variants: Vec::new(), ..Default::default() };
    let mut current: Option<VariantSpec> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let stripped = match raw.find([';', '#']) {
            Some(i) => &raw[..i],
            None => raw,
        };
        let stripped = stripped.trim();
        if stripped.is_empty() {
            continue;
        }
        if let Some(section) = stripped.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            if let Some(done) = current.take() {
                exp.variants.push(done);
            }
            let name = section
                .strip_prefix("variant.")
                .ok_or_else(|| err(line, format!("unknown section `[{section}]`")))?;
            if name.is_empty() {
                return Err(err(line, "variant needs a name"));
            }
            let mode = if name == "baseline" {
                VariantMode::Baseline
            } else {
                VariantMode::PreExecute(InstrumentOptions::default())
            };
            current = Some(VariantSpec {
                name: name.to_string(),
                boss_enabled: name != "baseline",
                mode,
            });
            continue;
        }
        let (key, value) = stripped
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected `key = value`, got `{stripped}`")))?;
        let (key, value) = (key.trim(), value.trim());

        if let Some(variant) = current.as_mut() {
            match key {
                "instrument" => {
                    variant.mode = match value {
                        "none" | "baseline" => VariantMode::Baseline,
                        "record_replay" => VariantMode::RecordReplay,
                        "correlated" => VariantMode::Correlated,
                        v => {
                            let parsed =
                                Variant::parse(v).map_err(|e| err(line, e.to_string()))?;
                            match &mut variant.mode {
                                VariantMode::PreExecute(opts) => {
                                    opts.variant = parsed;
                                    VariantMode::PreExecute(*opts)
                                }
                                _ => VariantMode::PreExecute(InstrumentOptions {
                                    variant: parsed,
                                    ..Default::default()
                                }),
                            }
                        }
                    };
                }
                "range" => {
                    let range = parse_range(value, line)?;
                    match &mut variant.mode {
                        VariantMode::PreExecute(opts) => opts.coverage = Some(range),
                        _ => return Err(err(line, "range applies to pre-execute variants only")),
                    }
                }
                "channel" => {
                    let ch: u32 = parse_num(value, line)?;
                    match &mut variant.mode {
                        VariantMode::PreExecute(opts) => opts.channel = ch,
                        _ => {
                            return Err(err(line, "channel applies to pre-execute variants only"))
                        }
                    }
                }
                "cap" => {
                    let cap: u64 = parse_num(value, line)?;
                    match &mut variant.mode {
                        VariantMode::PreExecute(opts) => opts.strip_cap = cap,
                        _ => return Err(err(line, "cap applies to pre-execute variants only")),
                    }
                }
                "place" => {
                    let placement = match value {
                        "earliest" => Placement::Earliest,
                        "at_loop" => Placement::AtLoop,
                        v => return Err(err(line, format!("unknown placement `{v}`"))),
                    };
                    match &mut variant.mode {
                        VariantMode::PreExecute(opts) => opts.placement = placement,
                        _ => return Err(err(line, "place applies to pre-execute variants only")),
                    }
                }
                "boss" => variant.boss_enabled = parse_bool(value, line)?,
                _ => return Err(err(line, format!("unknown variant key `{key}`"))),
            }
            continue;
        }

        match key {
            "workload" => {
                let kind: WorkloadKind = value
                    .parse()
                    .map_err(|e: crate::workload::WorkloadError| err(line, e.to_string()))?;
                let keep = exp.workload;
                exp.workload = WorkloadSpec {
                    trip: keep.trip,
                    generations: keep.generations,
                    seed: keep.seed,
                    ..WorkloadSpec::default_for(kind)
                };
            }
            "trip" => exp.workload.trip = parse_num(value, line)?,
            "generations" => exp.workload.generations = parse_num(value, line)?,
            "seed" => exp.workload.seed = parse_num(value, line)?,
            "bias" => exp.workload.bias = parse_num(value, line)?,
            "repeat_prob" => exp.workload.repeat_prob = parse_num(value, line)?,
            "correlation_prob" => exp.workload.correlation_prob = parse_num(value, line)?,
            "chain" => exp.workload.chain_depth = parse_num(value, line)?,
            "placement" => {
                exp.workload.placement =
                    value.parse::<PlacementClass>().map_err(|e| err(line, e.to_string()))?;
            }
            "filler" => exp.workload.lead_filler = parse_num(value, line)?,
            "predictor" => {
                exp.predictor = value
                    .parse()
                    .map_err(|e: crate::predictor::PredictorError| err(line, e.to_string()))?;
            }
            "core.width" => exp.core.width = parse_num(value, line)?,
            "core.window" => exp.core.window = parse_num(value, line)?,
            "core.resolve_delay" => exp.core.resolve_delay = parse_num(value, line)?,
            "core.refill_penalty" => exp.core.refill_penalty = parse_num(value, line)?,
            "core.max_cycles" => exp.core.max_cycles = parse_num(value, line)?,
            "core.wrong_path_pollution" => {
                exp.core.wrong_path_pollution = parse_bool(value, line)?
            }
            "core.debug_snapshots" => exp.core.debug_snapshots = parse_bool(value, line)?,
            _ => return Err(err(line, format!("unknown key `{key}`"))),
        }
    }
    if let Some(done) = current.take() {
        exp.variants.push(done);
    }

    // The baseline row is the normalization denominator; always present,
    // always first.
    if !exp.variants.iter().any(|v| matches!(v.mode, VariantMode::Baseline)) {
        exp.variants.insert(0, VariantSpec::baseline());
    }
    let mut seen = std::collections::BTreeSet::new();
    for v in &exp.variants {
        if !seen.insert(v.name.clone()) {
            return Err(ConfigError::Invalid(format!("duplicate variant `{}`", v.name)));
        }
        match (&v.mode, exp.workload.kind) {
            (VariantMode::RecordReplay, WorkloadKind::RecordReplay) => {}
            (VariantMode::RecordReplay, _) => {
                return Err(ConfigError::Invalid(
                    "instrument = record_replay needs workload = record_replay".into(),
                ))
            }
            (VariantMode::Correlated, WorkloadKind::Correlated) => {}
            (VariantMode::Correlated, _) => {
                return Err(ConfigError::Invalid(
                    "instrument = correlated needs workload = correlated".into(),
                ))
            }
            _ => {}
        }
    }
    Ok(exp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_an_implicit_baseline() {
        let exp = parse_experiment("workload = synthetic\ntrip = 16\n").unwrap();
        assert_eq!(exp.workload.trip, 16);
        assert_eq!(exp.variants.len(), 1);
        assert_eq!(exp.variants[0].name, "baseline");
        assert!(!exp.variants[0].boss_enabled);
    }

    #[test]
    fn variants_parse_their_options() {
        let text = "\
workload = synthetic
trip = 4
predictor = bimodal
core.width = 4

[variant.plain]
instrument = plain
channel = 1

[variant.vec]
instrument = vec:8
range = 0:2
place = at_loop
";
        let exp = parse_experiment(text).unwrap();
        assert_eq!(exp.core.width, 4);
        assert_eq!(exp.predictor, PredictorConfig::DEFAULT_BIMODAL);
        assert_eq!(exp.variants.len(), 3, "implicit baseline plus two");
        assert_eq!(exp.variants[0].name, "baseline");
        match &exp.variants[1].mode {
            VariantMode::PreExecute(o) => {
                assert_eq!(o.channel, 1);
                assert_eq!(o.variant, Variant::Plain);
            }
            m => panic!("unexpected {m:?}"),
        }
        match &exp.variants[2].mode {
            VariantMode::PreExecute(o) => {
                assert_eq!(o.variant, Variant::Vectorized(8));
                assert_eq!(o.coverage, Some((0, 2)));
                assert_eq!(o.placement, Placement::AtLoop);
            }
            m => panic!("unexpected {m:?}"),
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_experiment("workload = synthetic\ntrip: 4\n").unwrap_err();
        assert_eq!(
            e,
            ConfigError::Parse { line: 2, msg: "expected `key = value`, got `trip: 4`".into() }
        );
        let e = parse_experiment("nonsense = 1\n").unwrap_err();
        assert!(matches!(e, ConfigError::Parse { line: 1, .. }));
    }

    #[test]
    fn record_replay_mode_requires_matching_workload() {
        let text = "workload = synthetic\n[variant.rr]\ninstrument = record_replay\n";
        assert!(matches!(parse_experiment(text), Err(ConfigError::Invalid(_))));
        let text = "workload = record_replay\n[variant.rr]\ninstrument = record_replay\n";
        assert!(parse_experiment(text).is_ok());
    }

    #[test]
    fn comments_and_duplicate_variants() {
        let ok = "workload = synthetic ; trailing\n# full line\n";
        assert!(parse_experiment(ok).is_ok());
        let dup = "[variant.x]\n[variant.x]\n";
        assert!(matches!(parse_experiment(dup), Err(ConfigError::Invalid(_))));
    }
}
