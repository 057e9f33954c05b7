//! Deterministic microbenchmark generators: loops with load-dependent
//! branches whose outcome schedules are controlled by seeded data.
//!
//! Five kinds:
//! - `synthetic`: configurable single LDB loop under an outer generation
//!   loop; the workhorse for accuracy and overhead experiments.
//! - `kill_neighbours`: a pointer-chasing do-while over a 4-trip inner scan
//!   of a board array, the running example shape.
//! - `kill_or_connect`: 4-trip loop with a two-hop load chain and an early
//!   break on the target condition.
//! - `record_replay`: outcomes buffered per generation and re-fed to the
//!   channel after the loop end, hinting the next generation.
//! - `correlated`: a source loop whose condition statistically predicts a
//!   later loop's branch; the source writes the hints.
//!
//! Builds self-check: the returned outcome schedule is asserted against the
//! oracle's branch profile before the build is handed out.
//!
//! Placement class controls cache behavior: `Cold` gives every instance a
//! fresh line (compulsory misses feed the branch), `Hot` re-touches a small
//! resident set. `lead_filler` inserts that many arithmetic instructions
//! between the pre-execute placement point and the target loop, which is
//! what gives hint stores time to commit before the frontend consumes them.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::asm::{SymImm, SymInst};
use crate::ir::{MmioLayout, Program, Reg, CHANNEL_STRIDE, OUTCOME_OFFSET};
use crate::oracle::{branch_profile, execute, DEFAULT_STEP_LIMIT};
use crate::structured::{lower, BodyItem, LowerError, Operand, StructuredLoop, StructuredProgram};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum PlacementClass {
    Hot,
    Cold,
}

impl FromStr for PlacementClass {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hot" => Ok(PlacementClass::Hot),
            "cold" => Ok(PlacementClass::Cold),
            other => Err(WorkloadError::BadSpec(format!("unknown placement `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum WorkloadKind {
    Synthetic,
    KillNeighbours,
    KillOrConnect,
    RecordReplay,
    Correlated,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 5] = [
        WorkloadKind::Synthetic,
        WorkloadKind::KillNeighbours,
        WorkloadKind::KillOrConnect,
        WorkloadKind::RecordReplay,
        WorkloadKind::Correlated,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            WorkloadKind::Synthetic => "synthetic",
            WorkloadKind::KillNeighbours => "kill_neighbours",
            WorkloadKind::KillOrConnect => "kill_or_connect",
            WorkloadKind::RecordReplay => "record_replay",
            WorkloadKind::Correlated => "correlated",
        }
    }
}

impl FromStr for WorkloadKind {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "synthetic" => Ok(WorkloadKind::Synthetic),
            "kill_neighbours" => Ok(WorkloadKind::KillNeighbours),
            "kill_or_connect" => Ok(WorkloadKind::KillOrConnect),
            "record_replay" => Ok(WorkloadKind::RecordReplay),
            "correlated" => Ok(WorkloadKind::Correlated),
            other => Err(WorkloadError::BadSpec(format!("unknown workload `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub trip: u64,
    pub generations: u64,
    pub seed: u64,
    /// Probability the branch condition holds (synthetic/board kinds).
    pub bias: f64,
    /// Probability one generation's outcome repeats on the next.
    pub repeat_prob: f64,
    /// Probability the source condition equals the target condition.
    pub correlation_prob: f64,
    /// Loads on the chain feeding the branch (synthetic: 1 or 2).
    pub chain_depth: u32,
    pub placement: PlacementClass,
    /// Arithmetic instructions between the pre-execute site and the loop.
    pub lead_filler: u64,
}

impl WorkloadSpec {
    pub fn default_for(kind: WorkloadKind) -> WorkloadSpec {
        let base = WorkloadSpec {
            kind,
            trip: 4,
            generations: 16,
            seed: 1,
            bias: 0.5,
            repeat_prob: 0.93,
            correlation_prob: 0.8,
            chain_depth: 1,
            placement: PlacementClass::Cold,
            lead_filler: 2048,
        };
        match kind {
            WorkloadKind::Synthetic => WorkloadSpec { trip: 256, generations: 8, ..base },
            WorkloadKind::KillNeighbours => base,
            WorkloadKind::KillOrConnect => WorkloadSpec { bias: 0.4, ..base },
            WorkloadKind::RecordReplay => WorkloadSpec {
                placement: PlacementClass::Hot,
                generations: 64,
                lead_filler: 512,
                ..base
            },
            WorkloadKind::Correlated => WorkloadSpec {
                placement: PlacementClass::Hot,
                generations: 64,
                lead_filler: 512,
                ..base
            },
        }
    }

    fn validate(&self) -> Result<(), WorkloadError> {
        if self.trip == 0 || self.generations == 0 {
            return Err(WorkloadError::BadSpec("trip and generations must be >= 1".into()));
        }
        for (name, p) in [
            ("bias", self.bias),
            ("repeat_prob", self.repeat_prob),
            ("correlation_prob", self.correlation_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(WorkloadError::BadSpec(format!("{name} {p} outside [0,1]")));
            }
        }
        if !(1..=2).contains(&self.chain_depth) {
            return Err(WorkloadError::BadSpec("chain_depth must be 1 or 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("bad workload spec: {0}")]
    BadSpec(String),
    #[error("{0}")]
    Lower(#[from] LowerError),
    #[error("built workload disagrees with its oracle profile: {0}")]
    ScheduleMismatch(String),
}

/// A built workload: the program, its designated branch, and the expected
/// outcome schedule.
#[derive(Clone, Debug)]
pub struct Workload {
    pub spec: WorkloadSpec,
    pub structured: StructuredProgram,
    pub program: Program,
    pub target_label: String,
    pub target_pc: usize,
    pub trip: u64,
    /// Expected target-branch outcomes, in dynamic order.
    pub schedule: Vec<bool>,
    /// Hint-machinery instruction pcs added relative to the plain build
    /// (empty for plain builds).
    pub added_pcs: BTreeSet<usize>,
    /// Scratch memory range written only by hint machinery, if any.
    pub scratch: Option<(u64, u64)>,
}

fn inst(i: SymInst) -> BodyItem {
    BodyItem::Inst(i)
}

fn movi(dst: Reg, v: i64) -> BodyItem {
    inst(SymInst::Movi { dst, imm: SymImm::Int(v) })
}

fn put_word(data: &mut BTreeMap<u64, u8>, addr: u64, value: i64) {
    for (i, b) in value.to_le_bytes().iter().enumerate() {
        data.insert(addr + i as u64, *b);
    }
}

fn read_word(data: &BTreeMap<u64, u8>, addr: u64) -> i64 {
    let mut bytes = [0u8; 8];
    for (i, b) in bytes.iter_mut().enumerate() {
        *b = data.get(&(addr + i as u64)).copied().unwrap_or(0);
    }
    i64::from_le_bytes(bytes)
}

fn filler_items(reg: Reg, count: u64) -> Vec<BodyItem> {
    (0..count).map(|_| inst(SymInst::Addi { dst: reg, src: reg, imm: 1 })).collect()
}

fn self_check(w: &Workload) -> Result<(), WorkloadError> {
    let trace = execute(&w.program, DEFAULT_STEP_LIMIT);
    if !trace.halted {
        return Err(WorkloadError::ScheduleMismatch(format!(
            "program did not halt (fault {:?}, truncated {})",
            trace.fault, trace.truncated
        )));
    }
    let profile = branch_profile(&trace, w.target_pc)
        .map_err(|e| WorkloadError::ScheduleMismatch(e.to_string()))?;
    if profile != w.schedule {
        return Err(WorkloadError::ScheduleMismatch(format!(
            "profile has {} instances, schedule {}; first divergence at {:?}",
            profile.len(),
            w.schedule.len(),
            profile.iter().zip(&w.schedule).position(|(a, b)| a != b)
        )));
    }
    Ok(())
}

/// Build the baseline (uninstrumented) workload program.
pub fn build(spec: &WorkloadSpec) -> Result<Workload, WorkloadError> {
    spec.validate()?;
    let w = match spec.kind {
        WorkloadKind::Synthetic => build_synthetic(spec)?,
        WorkloadKind::KillNeighbours => build_kill_neighbours(spec)?,
        WorkloadKind::KillOrConnect => build_kill_or_connect(spec)?,
        WorkloadKind::RecordReplay => build_record_replay_inner(spec, false)?,
        WorkloadKind::Correlated => build_correlated_inner(spec, false)?,
    };
    self_check(&w)?;
    Ok(w)
}

/// Record-and-replay instrumentation: the loop buffers each outcome byte to
/// scratch memory, and after the loop end the buffer is copied into the
/// channel, so one generation's outcomes hint the next.
pub fn build_record_replay_instrumentation(
    spec: &WorkloadSpec,
) -> Result<Workload, WorkloadError> {
    spec.validate()?;
    let w = build_record_replay_inner(spec, true)?;
    self_check(&w)?;
    Ok(w)
}

/// Correlation instrumentation: the source loop writes its condition bytes
/// into a channel targeting the second loop's branch.
pub fn build_correlated_instrumentation(spec: &WorkloadSpec) -> Result<Workload, WorkloadError> {
    spec.validate()?;
    let w = build_correlated_inner(spec, true)?;
    self_check(&w)?;
    Ok(w)
}

// Array bases; all arrays hold 8-byte little-endian words.
const VALS_BASE: u64 = 0x2_0000;
const PERM_BASE: u64 = 0x1_0000;
const DIRS_BASE: u64 = 0x1_1000;
const BUF_BASE: u64 = 0x1_2000;
const SQUARE_BASE: u64 = 0x8_0000;
const PARENT_BASE: u64 = 0x10_0000;
const LIBS_BASE: u64 = 0x20_0000;
const SRC_VALS_BASE: u64 = 0x30_0000;
const NEXT_BASE: u64 = 0x40_0000;

fn outcome_region(mmio: &MmioLayout, channel: u32) -> u64 {
    mmio.base + channel as u64 * CHANNEL_STRIDE + OUTCOME_OFFSET
}

/// synthetic: outer generation loop around a `trip`-count LDB loop.
///
/// Cold placement reads a fresh cache line per dynamic instance (a
/// per-generation offset register walks past the touched window); hot
/// placement rereads the same `trip` words every generation, so the
/// outcome pattern repeats generation over generation.
fn build_synthetic(spec: &WorkloadSpec) -> Result<Workload, WorkloadError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (r_vals, r_k, r_one, r_stride, r_goff, r_adv, r_g) =
        (Reg::r(0), Reg::r(1), Reg::r(2), Reg::r(3), Reg::r(4), Reg::r(5), Reg::r(6));
    let (r_t, r_v, r_t2, r_cnt) = (Reg::r(7), Reg::r(8), Reg::r(9), Reg::r(10));

    let cold = spec.placement == PlacementClass::Cold;
    let stride: i64 = if cold { 64 } else { 8 };
    let per_gen_bytes: i64 = if cold { spec.trip as i64 * stride } else { 0 };

    let mut data = BTreeMap::new();
    let mut conds = Vec::new();
    if cold {
        for g in 0..spec.generations {
            for k in 0..spec.trip {
                let cond = rng.gen_bool(spec.bias);
                conds.push(cond);
                let addr = VALS_BASE + (g * spec.trip + k) * stride as u64;
                put_word(&mut data, addr, cond as i64);
            }
        }
    } else {
        let mut base_row = Vec::new();
        for k in 0..spec.trip {
            let cond = rng.gen_bool(spec.bias);
            base_row.push(cond);
            put_word(&mut data, VALS_BASE + k * stride as u64, cond as i64);
        }
        for _ in 0..spec.generations {
            conds.extend(&base_row);
        }
    }
    // Target branch is `BZ cond, Skip`: taken when the condition fails.
    let schedule: Vec<bool> = conds.iter().map(|c| !c).collect();

    let body = if spec.chain_depth == 2 {
        let (r_c8, r_perm) = (Reg::r(11), Reg::r(12));
        for k in 0..spec.trip {
            put_word(&mut data, PERM_BASE + k * 8, k as i64);
        }
        vec![
            inst(SymInst::Mul { dst: r_t, lhs: r_k, rhs: r_c8 }),
            inst(SymInst::Add { dst: r_t, lhs: r_perm, rhs: r_t }),
            inst(SymInst::Ld { dst: r_v, base: r_t, offset: 0 }),
            inst(SymInst::Mul { dst: r_t2, lhs: r_v, rhs: r_stride }),
            inst(SymInst::Add { dst: r_t2, lhs: r_vals, rhs: r_t2 }),
            inst(SymInst::Add { dst: r_t2, lhs: r_t2, rhs: r_goff }),
            inst(SymInst::Ld { dst: r_v, base: r_t2, offset: 0 }),
            inst(SymInst::CmpGe { dst: r_t, lhs: r_v, rhs: r_one }),
            BodyItem::Label("BR".into()),
            inst(SymInst::Bz { cond: r_t, target: "Skip".into() }),
            inst(SymInst::Addi { dst: r_cnt, src: r_cnt, imm: 1 }),
            BodyItem::Label("Skip".into()),
        ]
    } else {
        vec![
            inst(SymInst::Mul { dst: r_t, lhs: r_k, rhs: r_stride }),
            inst(SymInst::Add { dst: r_t, lhs: r_vals, rhs: r_t }),
            inst(SymInst::Add { dst: r_t, lhs: r_t, rhs: r_goff }),
            inst(SymInst::Ld { dst: r_v, base: r_t, offset: 0 }),
            inst(SymInst::CmpGe { dst: r_t, lhs: r_v, rhs: r_one }),
            BodyItem::Label("BR".into()),
            inst(SymInst::Bz { cond: r_t, target: "Skip".into() }),
            inst(SymInst::Addi { dst: r_cnt, src: r_cnt, imm: 1 }),
            BodyItem::Label("Skip".into()),
        ]
    };

    let inner = StructuredLoop {
        induction: r_k,
        start: Operand::Const(0),
        end: Operand::Const(spec.trip as i64),
        step: 1,
        body,
        target_label: Some("BR".into()),
        end_label: Some("End".into()),
    };
    let mut outer_body = filler_items(r_cnt, spec.lead_filler);
    outer_body.push(BodyItem::Loop(inner));
    outer_body.push(inst(SymInst::Add { dst: r_goff, lhs: r_goff, rhs: r_adv }));
    let outer = StructuredLoop {
        induction: r_g,
        start: Operand::Const(0),
        end: Operand::Const(spec.generations as i64),
        step: 1,
        body: outer_body,
        target_label: None,
        end_label: None,
    };

    let mut items = vec![
        movi(r_vals, VALS_BASE as i64),
        movi(r_one, 1),
        movi(r_stride, stride),
        movi(r_goff, 0),
        movi(r_adv, per_gen_bytes),
    ];
    if spec.chain_depth == 2 {
        items.push(movi(Reg::r(11), 8));
        items.push(movi(Reg::r(12), PERM_BASE as i64));
    }
    items.push(BodyItem::Loop(outer));
    items.push(inst(SymInst::Halt));

    let structured = StructuredProgram { items, data, ..Default::default() };
    let program = lower(&structured)?;
    let target_pc = program.pc_of("BR").expect("target labeled");
    Ok(Workload {
        spec: *spec,
        structured,
        program,
        target_label: "BR".into(),
        target_pc,
        trip: spec.trip,
        schedule,
        added_pcs: BTreeSet::new(),
        scratch: None,
    })
}

/// kill_neighbours: do-while pointer chase; the inner loop scans board
/// squares around the current position.
fn build_kill_neighbours(spec: &WorkloadSpec) -> Result<Workload, WorkloadError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (r_pos, r_k, r_vertex, r_color, r_dirs, r_square, r_next, r_c8) = (
        Reg::r(0),
        Reg::r(1),
        Reg::r(2),
        Reg::r(3),
        Reg::r(4),
        Reg::r(5),
        Reg::r(6),
        Reg::r(7),
    );
    let (r_cnt, r_t, r_u, r_ai, r_fill) =
        (Reg::r(8), Reg::r(9), Reg::r(10), Reg::r(11), Reg::r(12));
    let kcolor = 2i64;
    let cold = spec.placement == PlacementClass::Cold;
    let dirs: Vec<i64> = if cold {
        (0..spec.trip).map(|k| 8 * (k as i64 + 1)).collect()
    } else {
        (0..spec.trip).map(|k| k as i64 + 1).collect()
    };
    // The pointer chase: a precomputed next[] chain visits `generations`
    // distinct positions and ends at the vertex sentinel. Cold spreads the
    // positions a full line apart; hot packs them so the scanned squares
    // stay resident.
    let pos_stride: i64 = if cold { 8 * (spec.trip as i64 + 2) } else { 1 };
    let positions: Vec<i64> =
        (0..=spec.generations).map(|g| 8 + g as i64 * pos_stride).collect();

    let mut data = BTreeMap::new();
    for (k, d) in dirs.iter().enumerate() {
        put_word(&mut data, DIRS_BASE + k as u64 * 8, *d);
    }
    for g in 0..spec.generations as usize {
        put_word(&mut data, NEXT_BASE + positions[g] as u64 * 8, positions[g + 1]);
    }
    let vertex = positions[spec.generations as usize];

    let mut schedule = Vec::new();
    for g in 0..spec.generations as usize {
        for d in &dirs {
            let ai = (positions[g] + d) as u64;
            let addr = SQUARE_BASE + ai * 8;
            if !data.contains_key(&addr) {
                let cond = rng.gen_bool(spec.bias);
                put_word(&mut data, addr, if cond { kcolor } else { kcolor + 1 });
            }
            schedule.push(read_word(&data, addr) != kcolor);
        }
    }

    let inner = StructuredLoop {
        induction: r_k,
        start: Operand::Const(0),
        end: Operand::Const(spec.trip as i64),
        step: 1,
        body: vec![
            inst(SymInst::Mul { dst: r_t, lhs: r_k, rhs: r_c8 }),
            inst(SymInst::Add { dst: r_t, lhs: r_dirs, rhs: r_t }),
            inst(SymInst::Ld { dst: r_u, base: r_t, offset: 0 }),
            inst(SymInst::Add { dst: r_ai, lhs: r_pos, rhs: r_u }),
            inst(SymInst::Mul { dst: r_t, lhs: r_ai, rhs: r_c8 }),
            inst(SymInst::Add { dst: r_t, lhs: r_square, rhs: r_t }),
            inst(SymInst::Ld { dst: r_u, base: r_t, offset: 0 }),
            inst(SymInst::CmpEq { dst: r_u, lhs: r_u, rhs: r_color }),
            BodyItem::Label("BR".into()),
            inst(SymInst::Bz { cond: r_u, target: "Skip".into() }),
            inst(SymInst::Addi { dst: r_cnt, src: r_cnt, imm: 1 }),
            BodyItem::Label("Skip".into()),
        ],
        target_label: Some("BR".into()),
        end_label: Some("End".into()),
    };

    let mut items = vec![
        movi(r_color, kcolor),
        movi(r_dirs, DIRS_BASE as i64),
        movi(r_square, SQUARE_BASE as i64),
        movi(r_next, NEXT_BASE as i64),
        movi(r_c8, 8),
        movi(r_vertex, vertex),
        movi(r_pos, positions[0]),
        BodyItem::Label("DoHead".into()),
    ];
    items.extend(filler_items(r_fill, spec.lead_filler));
    items.push(BodyItem::Loop(inner));
    // pos = next[pos]; while (pos != vertex)
    items.push(inst(SymInst::Mul { dst: r_t, lhs: r_pos, rhs: r_c8 }));
    items.push(inst(SymInst::Add { dst: r_t, lhs: r_next, rhs: r_t }));
    items.push(inst(SymInst::Ld { dst: r_pos, base: r_t, offset: 0 }));
    items.push(inst(SymInst::CmpEq { dst: r_t, lhs: r_pos, rhs: r_vertex }));
    items.push(inst(SymInst::Bz { cond: r_t, target: "DoHead".into() }));
    items.push(inst(SymInst::Halt));

    let structured = StructuredProgram { items, data, ..Default::default() };
    let program = lower(&structured)?;
    let target_pc = program.pc_of("BR").expect("target labeled");
    Ok(Workload {
        spec: *spec,
        structured,
        program,
        target_label: "BR".into(),
        target_pc,
        trip: spec.trip,
        schedule,
        added_pcs: BTreeSet::new(),
        scratch: None,
    })
}

/// kill_or_connect: per-generation vertex, two-hop chain
/// (libs[parent[vertex + dirs[k]]] <= 1), early break when it holds.
fn build_kill_or_connect(spec: &WorkloadSpec) -> Result<Workload, WorkloadError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (r_vertex, r_k, r_one, r_dirs, r_parent, r_libs, r_c8, r_g) = (
        Reg::r(0),
        Reg::r(1),
        Reg::r(2),
        Reg::r(3),
        Reg::r(4),
        Reg::r(5),
        Reg::r(6),
        Reg::r(7),
    );
    let (r_cnt, r_t, r_u, r_ai, r_t2, r_spread, r_vbase, r_fill) = (
        Reg::r(8),
        Reg::r(9),
        Reg::r(10),
        Reg::r(11),
        Reg::r(12),
        Reg::r(13),
        Reg::r(14),
        Reg::r(15),
    );
    let cold = spec.placement == PlacementClass::Cold;
    let dirs: Vec<i64> = if cold {
        (0..spec.trip).map(|k| 8 * (k as i64 + 1)).collect()
    } else {
        (0..spec.trip).map(|k| k as i64 + 1).collect()
    };
    let vertex_spread: i64 = if cold { 8 * (spec.trip as i64 + 2) } else { 0 };
    let vertex0: i64 = 4;

    let mut data = BTreeMap::new();
    for (k, d) in dirs.iter().enumerate() {
        put_word(&mut data, DIRS_BASE + k as u64 * 8, *d);
    }
    let mut schedule = Vec::new();
    for g in 0..spec.generations {
        let vertex = vertex0 + g as i64 * vertex_spread;
        for d in &dirs {
            let ai = (vertex + d) as u64;
            let parent = ai + 1;
            put_word(&mut data, PARENT_BASE + ai * 8, parent as i64);
            let libs_addr = LIBS_BASE + parent * 8;
            if !data.contains_key(&libs_addr) {
                let cond = rng.gen_bool(spec.bias);
                put_word(&mut data, libs_addr, if cond { 1 } else { 3 });
            }
            let cond = read_word(&data, libs_addr) <= 1;
            schedule.push(!cond);
            if cond {
                break;
            }
        }
    }

    let inner = StructuredLoop {
        induction: r_k,
        start: Operand::Const(0),
        end: Operand::Const(spec.trip as i64),
        step: 1,
        body: vec![
            inst(SymInst::Mul { dst: r_t, lhs: r_k, rhs: r_c8 }),
            inst(SymInst::Add { dst: r_t, lhs: r_dirs, rhs: r_t }),
            inst(SymInst::Ld { dst: r_u, base: r_t, offset: 0 }),
            inst(SymInst::Add { dst: r_ai, lhs: r_vertex, rhs: r_u }),
            inst(SymInst::Mul { dst: r_t, lhs: r_ai, rhs: r_c8 }),
            inst(SymInst::Add { dst: r_t, lhs: r_parent, rhs: r_t }),
            inst(SymInst::Ld { dst: r_u, base: r_t, offset: 0 }),
            inst(SymInst::Mul { dst: r_t, lhs: r_u, rhs: r_c8 }),
            inst(SymInst::Add { dst: r_t, lhs: r_libs, rhs: r_t }),
            inst(SymInst::Ld { dst: r_u, base: r_t, offset: 0 }),
            inst(SymInst::CmpLe { dst: r_u, lhs: r_u, rhs: r_one }),
            BodyItem::Label("BR".into()),
            inst(SymInst::Bz { cond: r_u, target: "Skip".into() }),
            inst(SymInst::Addi { dst: r_cnt, src: r_cnt, imm: 1 }),
            inst(SymInst::Jmp { target: "End".into() }),
            BodyItem::Label("Skip".into()),
        ],
        target_label: Some("BR".into()),
        end_label: Some("End".into()),
    };

    let mut outer_body = vec![
        inst(SymInst::Mul { dst: r_t2, lhs: r_g, rhs: r_spread }),
        inst(SymInst::Add { dst: r_vertex, lhs: r_vbase, rhs: r_t2 }),
    ];
    outer_body.extend(filler_items(r_fill, spec.lead_filler));
    outer_body.push(BodyItem::Loop(inner));
    let outer = StructuredLoop {
        induction: r_g,
        start: Operand::Const(0),
        end: Operand::Const(spec.generations as i64),
        step: 1,
        body: outer_body,
        target_label: None,
        end_label: None,
    };

    let items = vec![
        movi(r_one, 1),
        movi(r_dirs, DIRS_BASE as i64),
        movi(r_parent, PARENT_BASE as i64),
        movi(r_libs, LIBS_BASE as i64),
        movi(r_c8, 8),
        movi(r_spread, vertex_spread),
        movi(r_vbase, vertex0),
        BodyItem::Loop(outer),
        inst(SymInst::Halt),
    ];

    let structured = StructuredProgram { items, data, ..Default::default() };
    let program = lower(&structured)?;
    let target_pc = program.pc_of("BR").expect("target labeled");
    Ok(Workload {
        spec: *spec,
        structured,
        program,
        target_label: "BR".into(),
        target_pc,
        trip: spec.trip,
        schedule,
        added_pcs: BTreeSet::new(),
        scratch: None,
    })
}

/// record_replay core. With hints on, each iteration stores its branch
/// outcome byte into a scratch buffer, and a copy loop placed after the
/// generation end feeds the buffer into channel 1, which is what makes the
/// recording commit with the next generation's producer tag.
fn build_record_replay_inner(spec: &WorkloadSpec, hints: bool) -> Result<Workload, WorkloadError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (r_vals, r_k, r_one, r_c8, r_goff, r_adv, r_g) =
        (Reg::r(0), Reg::r(1), Reg::r(2), Reg::r(3), Reg::r(4), Reg::r(5), Reg::r(6));
    let (r_c, r_v, r_buf, r_out, r_fill, r_zero) =
        (Reg::r(7), Reg::r(8), Reg::r(9), Reg::r(10), Reg::r(11), Reg::r(12));
    let (r_rk, r_rt, r_rv) = (Reg::r(13), Reg::r(14), Reg::r(15));
    let (r_inv, r_bt) = (Reg::r(16), Reg::r(17));
    let (r_cfg, r_cfgaddr) = (Reg::r(18), Reg::r(19));
    let channel = 1u32;

    // conds[g][k]: generation 0 random, later generations repeat the
    // previous one with probability repeat_prob, else invert.
    let mut conds: Vec<Vec<bool>> = Vec::new();
    for g in 0..spec.generations as usize {
        let row: Vec<bool> = (0..spec.trip as usize)
            .map(|k| {
                if g == 0 {
                    rng.gen_bool(spec.bias)
                } else if rng.gen_bool(spec.repeat_prob) {
                    conds[g - 1][k]
                } else {
                    !conds[g - 1][k]
                }
            })
            .collect();
        conds.push(row);
    }
    let mut data = BTreeMap::new();
    let mut schedule = Vec::new();
    for (g, row) in conds.iter().enumerate() {
        for (k, &c) in row.iter().enumerate() {
            let addr = VALS_BASE + ((g * spec.trip as usize + k) as u64) * 8;
            put_word(&mut data, addr, c as i64);
            schedule.push(!c);
        }
    }
    let buf_len = spec.trip * 8;
    for i in 0..buf_len {
        data.insert(BUF_BASE + i, 0);
    }

    let mut body = vec![
        inst(SymInst::Mul { dst: r_c, lhs: r_k, rhs: r_c8 }),
        inst(SymInst::Add { dst: r_c, lhs: r_vals, rhs: r_c }),
        inst(SymInst::Add { dst: r_c, lhs: r_c, rhs: r_goff }),
        inst(SymInst::Ld { dst: r_v, base: r_c, offset: 0 }),
        inst(SymInst::CmpGe { dst: r_c, lhs: r_v, rhs: r_one }),
    ];
    if hints {
        // Record this instance's branch outcome: inverted condition, since
        // the target is a skip-on-false BZ.
        body.push(BodyItem::Label("__rec_store".into()));
        body.push(inst(SymInst::CmpEq { dst: r_inv, lhs: r_c, rhs: r_zero }));
        body.push(inst(SymInst::Mul { dst: r_bt, lhs: r_k, rhs: r_c8 }));
        body.push(inst(SymInst::Add { dst: r_bt, lhs: r_buf, rhs: r_bt }));
        body.push(inst(SymInst::St { src: r_inv, base: r_bt, offset: 0 }));
        body.push(BodyItem::Label("__rec_store_end".into()));
    }
    body.extend([
        BodyItem::Label("BR".into()),
        inst(SymInst::Bz { cond: r_c, target: "Skip".into() }),
        inst(SymInst::Addi { dst: r_fill, src: r_fill, imm: 1 }),
        BodyItem::Label("Skip".into()),
    ]);

    let inner = StructuredLoop {
        induction: r_k,
        start: Operand::Const(0),
        end: Operand::Const(spec.trip as i64),
        step: 1,
        body,
        target_label: Some("BR".into()),
        end_label: Some("End".into()),
    };

    let mut outer_body = filler_items(r_fill, spec.lead_filler);
    outer_body.push(BodyItem::Loop(inner));
    if hints {
        let copy = StructuredLoop {
            induction: r_rk,
            start: Operand::Const(0),
            end: Operand::Const(spec.trip as i64),
            step: 1,
            body: vec![
                inst(SymInst::Mul { dst: r_rt, lhs: r_rk, rhs: r_c8 }),
                inst(SymInst::Add { dst: r_rt, lhs: r_buf, rhs: r_rt }),
                inst(SymInst::Ld { dst: r_rv, base: r_rt, offset: 0 }),
                inst(SymInst::Add { dst: r_rt, lhs: r_out, rhs: r_rk }),
                inst(SymInst::St { src: r_rv, base: r_rt, offset: 0 }),
            ],
            target_label: None,
            end_label: None,
        };
        outer_body.push(BodyItem::Label("__rec_feed".into()));
        outer_body.push(BodyItem::Loop(copy));
        outer_body.push(BodyItem::Label("__rec_feed_end".into()));
    }
    outer_body.push(inst(SymInst::Add { dst: r_goff, lhs: r_goff, rhs: r_adv }));
    let outer = StructuredLoop {
        induction: r_g,
        start: Operand::Const(0),
        end: Operand::Const(spec.generations as i64),
        step: 1,
        body: outer_body,
        target_label: None,
        end_label: None,
    };

    let mut items = vec![
        movi(r_vals, VALS_BASE as i64),
        movi(r_one, 1),
        movi(r_c8, 8),
        movi(r_goff, 0),
        movi(r_adv, spec.trip as i64 * 8),
    ];
    if hints {
        items.push(movi(r_buf, BUF_BASE as i64));
        items.push(movi(r_out, outcome_region(&MmioLayout::default(), channel) as i64));
        items.push(movi(r_zero, 0));
        items.push(BodyItem::Label("__rec_open".into()));
        items.push(inst(SymInst::Movi {
            dst: r_cfg,
            imm: SymImm::ChannelConfig { target: "BR".into(), end: "End".into() },
        }));
        items.push(movi(
            r_cfgaddr,
            (MmioLayout::default().base + channel as u64 * CHANNEL_STRIDE) as i64,
        ));
        items.push(inst(SymInst::St { src: r_cfg, base: r_cfgaddr, offset: 0 }));
        items.push(BodyItem::Label("__rec_open_end".into()));
    }
    items.push(BodyItem::Loop(outer));
    items.push(inst(SymInst::Halt));

    let structured = StructuredProgram { items, data, ..Default::default() };
    let program = lower(&structured)?;
    let target_pc = program.pc_of("BR").expect("target labeled");
    let mut added_pcs = BTreeSet::new();
    for (a, b) in [
        ("__rec_store", "__rec_store_end"),
        ("__rec_feed", "__rec_feed_end"),
        ("__rec_open", "__rec_open_end"),
    ] {
        if let (Some(x), Some(y)) = (program.pc_of(a), program.pc_of(b)) {
            added_pcs.extend(x..y);
        }
    }
    Ok(Workload {
        spec: *spec,
        structured,
        program,
        target_label: "BR".into(),
        target_pc,
        trip: spec.trip,
        schedule,
        added_pcs,
        scratch: hints.then_some((BUF_BASE, BUF_BASE + buf_len)),
    })
}

/// correlated core: a source loop computes its own condition per
/// iteration; the target loop's condition agrees with it with
/// `correlation_prob`. With hints on, the source loop writes predicted
/// outcome bytes into channel 2 targeting the second loop's branch.
fn build_correlated_inner(spec: &WorkloadSpec, hints: bool) -> Result<Workload, WorkloadError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (r_src, r_tgt, r_one, r_c8, r_goff, r_adv, r_g) =
        (Reg::r(0), Reg::r(1), Reg::r(2), Reg::r(3), Reg::r(4), Reg::r(5), Reg::r(6));
    let (r_k, r_t, r_v, r_cnt, r_fill, r_zero, r_inv, r_out) = (
        Reg::r(7),
        Reg::r(8),
        Reg::r(9),
        Reg::r(10),
        Reg::r(11),
        Reg::r(12),
        Reg::r(13),
        Reg::r(14),
    );
    let (r_cfg, r_cfgaddr) = (Reg::r(15), Reg::r(16));
    let channel = 2u32;

    let mut data = BTreeMap::new();
    let mut schedule = Vec::new();
    for g in 0..spec.generations {
        for k in 0..spec.trip {
            let src_cond = rng.gen_bool(0.5);
            let tgt_cond = if rng.gen_bool(spec.correlation_prob) { src_cond } else { !src_cond };
            let idx = (g * spec.trip + k) * 8;
            put_word(&mut data, SRC_VALS_BASE + idx, src_cond as i64);
            put_word(&mut data, VALS_BASE + idx, tgt_cond as i64);
            schedule.push(!tgt_cond);
        }
    }

    let mut src_body = vec![
        inst(SymInst::Mul { dst: r_t, lhs: r_k, rhs: r_c8 }),
        inst(SymInst::Add { dst: r_t, lhs: r_src, rhs: r_t }),
        inst(SymInst::Add { dst: r_t, lhs: r_t, rhs: r_goff }),
        inst(SymInst::Ld { dst: r_v, base: r_t, offset: 0 }),
        inst(SymInst::CmpGe { dst: r_t, lhs: r_v, rhs: r_one }),
    ];
    if hints {
        // Forward the predicted outcome of the other loop's BZ branch.
        src_body.push(BodyItem::Label("__corr_write".into()));
        src_body.push(inst(SymInst::CmpEq { dst: r_inv, lhs: r_t, rhs: r_zero }));
        src_body.push(inst(SymInst::Add { dst: r_v, lhs: r_out, rhs: r_k }));
        src_body.push(inst(SymInst::St { src: r_inv, base: r_v, offset: 0 }));
        src_body.push(BodyItem::Label("__corr_write_end".into()));
    }
    src_body.extend([
        BodyItem::Label("BR_src".into()),
        inst(SymInst::Bz { cond: r_t, target: "SkipSrc".into() }),
        inst(SymInst::Addi { dst: r_cnt, src: r_cnt, imm: 1 }),
        BodyItem::Label("SkipSrc".into()),
    ]);
    let src_loop = StructuredLoop {
        induction: r_k,
        start: Operand::Const(0),
        end: Operand::Const(spec.trip as i64),
        step: 1,
        body: src_body,
        target_label: None,
        end_label: None,
    };

    let tgt_loop = StructuredLoop {
        induction: r_k,
        start: Operand::Const(0),
        end: Operand::Const(spec.trip as i64),
        step: 1,
        body: vec![
            inst(SymInst::Mul { dst: r_t, lhs: r_k, rhs: r_c8 }),
            inst(SymInst::Add { dst: r_t, lhs: r_tgt, rhs: r_t }),
            inst(SymInst::Add { dst: r_t, lhs: r_t, rhs: r_goff }),
            inst(SymInst::Ld { dst: r_v, base: r_t, offset: 0 }),
            inst(SymInst::CmpGe { dst: r_t, lhs: r_v, rhs: r_one }),
            BodyItem::Label("BR".into()),
            inst(SymInst::Bz { cond: r_t, target: "Skip".into() }),
            inst(SymInst::Addi { dst: r_cnt, src: r_cnt, imm: 1 }),
            BodyItem::Label("Skip".into()),
        ],
        target_label: Some("BR".into()),
        end_label: Some("End".into()),
    };

    let mut outer_body = vec![BodyItem::Loop(src_loop)];
    outer_body.extend(filler_items(r_fill, spec.lead_filler));
    outer_body.push(BodyItem::Loop(tgt_loop));
    outer_body.push(inst(SymInst::Add { dst: r_goff, lhs: r_goff, rhs: r_adv }));
    let outer = StructuredLoop {
        induction: r_g,
        start: Operand::Const(0),
        end: Operand::Const(spec.generations as i64),
        step: 1,
        body: outer_body,
        target_label: None,
        end_label: None,
    };

    let mut items = vec![
        movi(r_src, SRC_VALS_BASE as i64),
        movi(r_tgt, VALS_BASE as i64),
        movi(r_one, 1),
        movi(r_c8, 8),
        movi(r_goff, 0),
        movi(r_adv, spec.trip as i64 * 8),
    ];
    if hints {
        items.push(movi(r_zero, 0));
        items.push(movi(r_out, outcome_region(&MmioLayout::default(), channel) as i64));
        items.push(BodyItem::Label("__corr_open".into()));
        items.push(inst(SymInst::Movi {
            dst: r_cfg,
            imm: SymImm::ChannelConfig { target: "BR".into(), end: "End".into() },
        }));
        items.push(movi(
            r_cfgaddr,
            (MmioLayout::default().base + channel as u64 * CHANNEL_STRIDE) as i64,
        ));
        items.push(inst(SymInst::St { src: r_cfg, base: r_cfgaddr, offset: 0 }));
        items.push(BodyItem::Label("__corr_open_end".into()));
    }
    items.push(BodyItem::Loop(outer));
    items.push(inst(SymInst::Halt));

    let structured = StructuredProgram { items, data, ..Default::default() };
    let program = lower(&structured)?;
    let target_pc = program.pc_of("BR").expect("target labeled");
    let mut added_pcs = BTreeSet::new();
    for (a, b) in [("__corr_write", "__corr_write_end"), ("__corr_open", "__corr_open_end")] {
        if let (Some(x), Some(y)) = (program.pc_of(a), program.pc_of(b)) {
            added_pcs.extend(x..y);
        }
    }
    Ok(Workload {
        spec: *spec,
        structured,
        program,
        target_label: "BR".into(),
        target_pc,
        trip: spec.trip,
        schedule,
        added_pcs,
        scratch: None,
    })
}
