//! The compiler transformation: synthesize a pre-execute loop from a
//! target branch's backslice, wire it to a channel with an open store, and
//! splice it in as early as the dataflow allows.
//!
//! The pre-execute loop iterates the ordinal space of the target loop (a
//! fresh counter `o` starting at the first covered iteration), materializes
//! the original induction value per lane, runs the slice on fresh
//! registers, and stores the outcome byte to the channel slot `o`. The
//! unrolled variant replicates the lane body with a scalar remainder loop;
//! the vectorized variant gathers lane outcomes into consecutive registers
//! and issues one vector store per group. Loops whose trip count exceeds
//! the channel capacity (or is not static) are strip mined so each chunk
//! is one generation.
//!
//! The original target loop is left textually intact except under strip
//! mining, which rewrites it into an equivalent chunked nest.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::asm::{SymImm, SymInst};
use crate::ir::{Program, Reg, CHANNEL_STRIDE, OUTCOME_OFFSET, OUTCOME_SLOTS, VST_WIDTHS};
use crate::slice::{
    constant_env, defs_in_items, extract_backslice, find_induction, Backslice, InductionInfo,
    SliceError,
};
use crate::structured::{
    free_regs, locate_target_loop, loop_at_path, lower, BodyItem, LowerError, Operand,
    StructuredLoop, StructuredProgram,
};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Variant {
    Plain,
    Unrolled(u32),
    Vectorized(u8),
}

impl Variant {
    pub fn name(&self) -> String {
        match self {
            Variant::Plain => "plain".to_string(),
            Variant::Unrolled(f) => format!("unroll:{f}"),
            Variant::Vectorized(w) => format!("vec:{w}"),
        }
    }

    /// Parse `plain`, `unroll:N`, or `vec:W`.
    pub fn parse(s: &str) -> Result<Variant, InstrumentError> {
        if s == "plain" {
            return Ok(Variant::Plain);
        }
        if let Some(f) = s.strip_prefix("unroll:") {
            return f
                .parse()
                .map(Variant::Unrolled)
                .map_err(|_| InstrumentError::BadOptions(format!("bad unroll factor `{f}`")));
        }
        if let Some(w) = s.strip_prefix("vec:") {
            return w
                .parse()
                .map(Variant::Vectorized)
                .map_err(|_| InstrumentError::BadOptions(format!("bad vector width `{w}`")));
        }
        Err(InstrumentError::BadOptions(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Placement {
    /// Hoist to the earliest point where every slice live-in is defined and
    /// no may-aliasing store intervenes.
    Earliest,
    /// Directly before the target loop; no lead distance.
    AtLoop,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct InstrumentOptions {
    pub channel: u32,
    pub variant: Variant,
    /// Covered iteration ordinals [n, m] inclusive; `None` is full coverage.
    pub coverage: Option<(u64, u64)>,
    /// Strip-mining chunk cap; each chunk becomes one generation.
    pub strip_cap: u64,
    pub placement: Placement,
}

impl Default for InstrumentOptions {
    fn default() -> Self {
        InstrumentOptions {
            channel: 0,
            variant: Variant::Plain,
            coverage: None,
            strip_cap: OUTCOME_SLOTS as u64,
            placement: Placement::Earliest,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InstrumentError {
    #[error("{0}")]
    Slice(#[from] SliceError),
    #[error("{0}")]
    Lower(#[from] LowerError),
    #[error("no loop designates target `{0}`")]
    NoSuchTarget(String),
    #[error("not enough free registers: {0}")]
    RegisterPressure(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("bad options: {0}")]
    BadOptions(String),
}

/// Instrumentation result plus everything tests and the timing model need
/// to reason about it.
#[derive(Clone, Debug)]
pub struct Instrumented {
    pub program: Program,
    pub structured: StructuredProgram,
    pub target_label: String,
    pub target_pc: usize,
    pub end_label: String,
    pub end_pc: usize,
    pub channel: u32,
    /// Instruction indices of the inserted pre-execute and open blocks.
    pub pre_exec_pcs: BTreeSet<usize>,
    /// Slice metadata: target branch pc -> feeding load pcs in the main loop.
    pub slice_loads: BTreeMap<usize, Vec<usize>>,
    /// False when strip mining rewrote the main loop.
    pub main_loop_intact: bool,
    pub warnings: Vec<String>,
}

struct RegAlloc {
    free: Vec<Reg>,
}

impl RegAlloc {
    /// Free registers of the program, keeping the two lowest for the
    /// lowering scratch temporaries.
    fn new(sp: &StructuredProgram) -> RegAlloc {
        let mut free = free_regs(sp);
        free.pop();
        free.pop();
        RegAlloc { free }
    }

    fn take(&mut self, what: &str) -> Result<Reg, InstrumentError> {
        if self.free.is_empty() {
            return Err(InstrumentError::RegisterPressure(what.to_string()));
        }
        Ok(self.free.remove(0))
    }

    /// `n` registers with consecutive indices, for vector lanes.
    fn take_consecutive(&mut self, n: u8, what: &str) -> Result<Reg, InstrumentError> {
        let mut sorted: Vec<u8> = self.free.iter().map(|r| r.index() as u8).collect();
        sorted.sort_unstable();
        for window in sorted.windows(n as usize) {
            if window[n as usize - 1] - window[0] == n - 1 {
                let base = window[0];
                self.free.retain(|r| {
                    let i = r.index() as u8;
                    i < base || i >= base + n
                });
                return Ok(Reg::r(base));
            }
        }
        Err(InstrumentError::RegisterPressure(format!("{what}: {n} consecutive registers")))
    }
}

fn inst(i: SymInst) -> BodyItem {
    BodyItem::Inst(i)
}

/// Rewrite one slice instruction onto pre-execute registers: the induction
/// register becomes the materialized iteration value, every slice-internal
/// definition gets a fresh register, live-ins pass through.
fn rewrite_slice_inst(
    i: &SymInst,
    induction: Reg,
    kk: Reg,
    def_map: &mut BTreeMap<Reg, Reg>,
    alloc: &mut RegAlloc,
) -> Result<SymInst, InstrumentError> {
    fn map_use(r: Reg, induction: Reg, kk: Reg, def_map: &BTreeMap<Reg, Reg>) -> Reg {
        if r == induction {
            kk
        } else {
            def_map.get(&r).copied().unwrap_or(r)
        }
    }
    let fresh_dst = |dst: &mut Reg,
                         def_map: &mut BTreeMap<Reg, Reg>,
                         alloc: &mut RegAlloc|
     -> Result<(), InstrumentError> {
        let mapped = match def_map.get(dst) {
            Some(&r) => r,
            None => {
                let r = alloc.take("slice temp")?;
                def_map.insert(*dst, r);
                r
            }
        };
        *dst = mapped;
        Ok(())
    };
    let mut out = i.clone();
    match &mut out {
        SymInst::Add { dst, lhs, rhs }
        | SymInst::Sub { dst, lhs, rhs }
        | SymInst::Mul { dst, lhs, rhs }
        | SymInst::CmpEq { dst, lhs, rhs }
        | SymInst::CmpLe { dst, lhs, rhs }
        | SymInst::CmpGe { dst, lhs, rhs }
        | SymInst::And { dst, lhs, rhs }
        | SymInst::Or { dst, lhs, rhs } => {
            *lhs = map_use(*lhs, induction, kk, def_map);
            *rhs = map_use(*rhs, induction, kk, def_map);
            fresh_dst(dst, def_map, alloc)?;
        }
        SymInst::Addi { dst, src, .. } | SymInst::Mov { dst, src } => {
            *src = map_use(*src, induction, kk, def_map);
            fresh_dst(dst, def_map, alloc)?;
        }
        SymInst::Movi { dst, .. } => {
            fresh_dst(dst, def_map, alloc)?;
        }
        SymInst::Ld { dst, base, .. } => {
            *base = map_use(*base, induction, kk, def_map);
            fresh_dst(dst, def_map, alloc)?;
        }
        other => {
            return Err(InstrumentError::Unsupported(format!("instruction in slice: {other:?}")))
        }
    }
    Ok(out)
}

/// Where the pre-execute loop's ordinals come from.
enum PeRange {
    /// Inclusive ordinal bounds known statically.
    Static { first: i64, last: i64 },
    /// Ordinals [0, len) at runtime; iteration value = chunk_base + ordinal.
    Runtime { len: Reg, chunk_base: Reg },
}

enum LaneSink {
    Store,
    Lane(Reg),
}

/// Emit the pre-execute block: hoisted constants plus one loop (or, for
/// grouped variants, an aligned main loop and a scalar remainder loop).
fn gen_preexec_items(
    induction: &InductionInfo,
    slice: &Backslice,
    outcome_base: u64,
    range: &PeRange,
    variant: Variant,
    alloc: &mut RegAlloc,
) -> Result<Vec<BodyItem>, InstrumentError> {
    let lanes: u8 = match variant {
        Variant::Plain => 1,
        Variant::Unrolled(f) => {
            if f < 2 {
                return Err(InstrumentError::BadOptions("unroll factor must be >= 2".into()));
            }
            u8::try_from(f)
                .map_err(|_| InstrumentError::BadOptions("unroll factor too large".into()))?
        }
        Variant::Vectorized(w) => {
            if !VST_WIDTHS.contains(&w) {
                return Err(InstrumentError::BadOptions(format!(
                    "vector width {w} not one of {VST_WIDTHS:?}"
                )));
            }
            w
        }
    };

    let mut setup: Vec<BodyItem> = Vec::new();
    let r_outbase = alloc.take("outcome base")?;
    setup.push(inst(SymInst::Movi { dst: r_outbase, imm: SymImm::Int(outcome_base as i64) }));

    let step = induction.step;
    let needs_mul = matches!(range, PeRange::Static { .. }) && step != 1;
    let r_step = if needs_mul {
        let r = alloc.take("step constant")?;
        setup.push(inst(SymInst::Movi { dst: r, imm: SymImm::Int(step) }));
        Some(r)
    } else {
        None
    };
    let r_start_const = match (range, induction.start) {
        (PeRange::Static { .. }, Operand::Const(s)) if s != 0 && step != 1 => {
            let r = alloc.take("start constant")?;
            setup.push(inst(SymInst::Movi { dst: r, imm: SymImm::Int(s) }));
            Some(r)
        }
        _ => None,
    };

    let r_ord = alloc.take("lane ordinal")?;
    let r_kk = alloc.take("iteration value")?;
    let r_addr = alloc.take("slot address")?;
    // A BZ target takes when the condition is zero, so the stored outcome
    // byte is the condition compared against zero.
    let r_zero = if slice.branch_is_bz {
        let r = alloc.take("zero constant")?;
        setup.push(inst(SymInst::Movi { dst: r, imm: SymImm::Int(0) }));
        Some(r)
    } else {
        None
    };
    let vec_lane0 = match variant {
        Variant::Vectorized(w) => Some(alloc.take_consecutive(w, "vector lanes")?),
        _ => None,
    };

    // Fresh registers per slice definition, shared across lanes: each lane
    // finishes before the next begins.
    let mut def_map: BTreeMap<Reg, Reg> = BTreeMap::new();
    let mut lane_body: Vec<SymInst> = Vec::new();
    for i in &slice.insts {
        lane_body.push(rewrite_slice_inst(i, induction.register, r_kk, &mut def_map, alloc)?);
    }
    let cond_pe = def_map[&slice.cond_reg];
    let outcome_reg = match r_zero {
        Some(_) => alloc.take("outcome byte")?,
        None => cond_pe,
    };
    let r_o = alloc.take("pre-execute ordinal")?;

    let emit_lane = |body: &mut Vec<BodyItem>, lane: u8, sink: LaneSink| {
        let ord = if lane == 0 {
            r_o
        } else {
            body.push(inst(SymInst::Addi { dst: r_ord, src: r_o, imm: lane as i64 }));
            r_ord
        };
        match range {
            PeRange::Runtime { chunk_base, .. } => {
                body.push(inst(SymInst::Add { dst: r_kk, lhs: *chunk_base, rhs: ord }));
            }
            PeRange::Static { .. } => match (induction.start, step) {
                (Operand::Const(0), 1) => {
                    body.push(inst(SymInst::Mov { dst: r_kk, src: ord }));
                }
                (Operand::Const(s), 1) => {
                    body.push(inst(SymInst::Addi { dst: r_kk, src: ord, imm: s }));
                }
                (Operand::Reg(rs), 1) => {
                    body.push(inst(SymInst::Add { dst: r_kk, lhs: rs, rhs: ord }));
                }
                (start, _) => {
                    body.push(inst(SymInst::Mul { dst: r_kk, lhs: ord, rhs: r_step.unwrap() }));
                    match start {
                        Operand::Const(0) => {}
                        Operand::Const(_) => {
                            body.push(inst(SymInst::Add {
                                dst: r_kk,
                                lhs: r_kk,
                                rhs: r_start_const.unwrap(),
                            }));
                        }
                        Operand::Reg(rs) => {
                            body.push(inst(SymInst::Add { dst: r_kk, lhs: r_kk, rhs: rs }));
                        }
                    }
                }
            },
        }
        for i in &lane_body {
            body.push(inst(i.clone()));
        }
        if let Some(z) = r_zero {
            body.push(inst(SymInst::CmpEq { dst: outcome_reg, lhs: cond_pe, rhs: z }));
        }
        match sink {
            LaneSink::Store => {
                body.push(inst(SymInst::Add { dst: r_addr, lhs: r_outbase, rhs: ord }));
                body.push(inst(SymInst::St { src: outcome_reg, base: r_addr, offset: 0 }));
            }
            LaneSink::Lane(reg) => {
                body.push(inst(SymInst::Mov { dst: reg, src: outcome_reg }));
            }
        }
    };

    let group_loop = |start: Operand, end: Operand, group: u8| -> StructuredLoop {
        let mut body = Vec::new();
        for lane in 0..group {
            let sink = match vec_lane0 {
                Some(l0) if group > 1 => LaneSink::Lane(Reg::r(l0.index() as u8 + lane)),
                _ => LaneSink::Store,
            };
            emit_lane(&mut body, lane, sink);
        }
        if let (Some(l0), true) = (vec_lane0, group > 1) {
            body.push(inst(SymInst::Add { dst: r_addr, lhs: r_outbase, rhs: r_o }));
            body.push(inst(SymInst::Vst { lane0: l0, width: group, base: r_addr, offset: 0 }));
        }
        StructuredLoop {
            induction: r_o,
            start,
            end,
            step: group as i64,
            body,
            target_label: None,
            end_label: None,
        }
    };

    let mut out = setup;
    match range {
        PeRange::Static { first, last } => {
            let total = last - first + 1;
            if total <= 0 {
                return Ok(out);
            }
            let main = (total / lanes as i64) * lanes as i64;
            if main > 0 {
                out.push(BodyItem::Loop(group_loop(
                    Operand::Const(*first),
                    Operand::Const(first + main),
                    lanes,
                )));
            }
            if main < total {
                out.push(BodyItem::Loop(group_loop(
                    Operand::Const(first + main),
                    Operand::Const(last + 1),
                    1,
                )));
            }
        }
        PeRange::Runtime { len, .. } => {
            if lanes > 1 {
                if !lanes.is_power_of_two() {
                    return Err(InstrumentError::BadOptions(
                        "grouping over a runtime range must be a power of two".into(),
                    ));
                }
                // Aligned prefix length: len & -lanes.
                let r_mask = alloc.take("alignment mask")?;
                let r_main = alloc.take("aligned length")?;
                out.push(inst(SymInst::Movi { dst: r_mask, imm: SymImm::Int(-(lanes as i64)) }));
                out.push(inst(SymInst::And { dst: r_main, lhs: *len, rhs: r_mask }));
                out.push(BodyItem::Loop(group_loop(
                    Operand::Const(0),
                    Operand::Reg(r_main),
                    lanes,
                )));
                out.push(BodyItem::Loop(group_loop(
                    Operand::Reg(r_main),
                    Operand::Reg(*len),
                    1,
                )));
            } else {
                out.push(BodyItem::Loop(group_loop(Operand::Const(0), Operand::Reg(*len), 1)));
            }
        }
    }
    Ok(out)
}

fn coverage_bounds(
    trip: u64,
    options: &InstrumentOptions,
) -> Result<Option<(u64, u64)>, InstrumentError> {
    match options.coverage {
        None => Ok(None),
        Some((n, m)) => {
            if n > m {
                return Err(InstrumentError::BadOptions(format!("coverage range {n}:{m} is empty")));
            }
            let hi = trip.saturating_sub(1);
            Ok(Some((n.min(hi), m.min(hi))))
        }
    }
}

/// Emit the pre-execute block for a statically counted loop at the covered
/// range. Standalone entry point; the full driver additionally places it,
/// opens the channel, and handles strip-mined shapes.
pub fn generate_preexec(
    sp: &StructuredProgram,
    l: &StructuredLoop,
    slice: &Backslice,
    options: &InstrumentOptions,
) -> Result<Vec<BodyItem>, InstrumentError> {
    let induction = find_induction(l)?;
    let trip = l.static_trip_count().ok_or_else(|| {
        InstrumentError::Unsupported("runtime trip count needs strip mining".into())
    })?;
    if trip > options.strip_cap {
        return Err(InstrumentError::Unsupported("trip count above cap needs strip mining".into()));
    }
    let (first, last) = coverage_bounds(trip, options)?.unwrap_or((0, trip.saturating_sub(1)));
    let mut alloc = RegAlloc::new(sp);
    let outcome_base = sp.mmio.base + options.channel as u64 * CHANNEL_STRIDE + OUTCOME_OFFSET;
    gen_preexec_items(
        &induction,
        slice,
        outcome_base,
        &PeRange::Static { first: first as i64, last: last as i64 },
        options.variant,
        &mut alloc,
    )
}

struct Mined {
    items: Vec<BodyItem>,
    /// Index within the outer body where a pre-execute block goes, directly
    /// before the inner chunk loop.
    pe_index: usize,
    chunk_base: Reg,
    chunk_len: Reg,
}

fn strip_mine_inner(
    l: &StructuredLoop,
    cap: u64,
    alloc: &mut RegAlloc,
    fresh: &mut dyn FnMut(&str) -> String,
) -> Result<Mined, InstrumentError> {
    if cap == 0 || cap > OUTCOME_SLOTS as u64 {
        return Err(InstrumentError::BadOptions(format!("strip cap {cap} outside 1..={OUTCOME_SLOTS}")));
    }
    if l.step != 1 {
        return Err(InstrumentError::Unsupported("strip mining supports step 1 only".into()));
    }
    // Escaping branches (early exits) cannot be re-pointed per chunk.
    let labels: BTreeSet<&str> = l
        .body
        .iter()
        .filter_map(|i| match i {
            BodyItem::Label(n) => Some(n.as_str()),
            _ => None,
        })
        .collect();
    for item in &l.body {
        if let BodyItem::Inst(
            SymInst::Bnz { target, .. } | SymInst::Bz { target, .. } | SymInst::Jmp { target },
        ) = item
        {
            if !labels.contains(target.as_str()) {
                return Err(InstrumentError::Unsupported(
                    "loop with escaping branches cannot be strip mined".into(),
                ));
            }
        }
    }

    let chunk_base = alloc.take("chunk base")?;
    let chunk_end = alloc.take("chunk end")?;
    let chunk_len = alloc.take("chunk length")?;
    let cmp_tmp = alloc.take("chunk compare")?;
    let keep = fresh("cekeep");
    let end_label = l.end_label.clone().unwrap_or_else(|| fresh("gen_end"));

    let mut outer_body: Vec<BodyItem> = Vec::new();
    // chunk_end = min(chunk_base + cap, bound)
    outer_body.push(inst(SymInst::Addi { dst: chunk_end, src: chunk_base, imm: cap as i64 }));
    let bound_reg = match l.end {
        Operand::Reg(r) => r,
        Operand::Const(v) => {
            let r = alloc.take("chunk bound")?;
            outer_body.push(inst(SymInst::Movi { dst: r, imm: SymImm::Int(v) }));
            r
        }
    };
    outer_body.push(inst(SymInst::CmpLe { dst: cmp_tmp, lhs: chunk_end, rhs: bound_reg }));
    outer_body.push(inst(SymInst::Bnz { cond: cmp_tmp, target: keep.clone() }));
    outer_body.push(inst(SymInst::Mov { dst: chunk_end, src: bound_reg }));
    outer_body.push(BodyItem::Label(keep));
    outer_body.push(inst(SymInst::Sub { dst: chunk_len, lhs: chunk_end, rhs: chunk_base }));
    let pe_index = outer_body.len();
    outer_body.push(BodyItem::Loop(StructuredLoop {
        induction: l.induction,
        start: Operand::Reg(chunk_base),
        end: Operand::Reg(chunk_end),
        step: 1,
        body: l.body.clone(),
        target_label: l.target_label.clone(),
        end_label: Some(end_label),
    }));

    let outer = StructuredLoop {
        induction: chunk_base,
        start: l.start,
        end: l.end,
        step: cap as i64,
        body: outer_body,
        target_label: None,
        end_label: None,
    };
    Ok(Mined { items: vec![BodyItem::Loop(outer)], pe_index, chunk_base, chunk_len })
}

/// Split a counted loop into chunks of at most `cap` iterations: an outer
/// loop stepping by `cap` whose body clamps the chunk bound and runs the
/// original body over [chunk, min(chunk+cap, end)). Identity when the trip
/// count is static and within the cap.
pub fn strip_mine(
    sp: &StructuredProgram,
    l: &StructuredLoop,
    cap: u64,
) -> Result<Vec<BodyItem>, InstrumentError> {
    if let Some(trip) = l.static_trip_count() {
        if trip <= cap {
            return Ok(vec![BodyItem::Loop(l.clone())]);
        }
    }
    let mut alloc = RegAlloc::new(sp);
    let mut counter = 0usize;
    let mut fresh = move |what: &str| {
        counter += 1;
        format!("__sm_{what}_{counter}")
    };
    Ok(strip_mine_inner(l, cap, &mut alloc, &mut fresh)?.items)
}

fn body_at_path_mut<'a>(items: &'a mut Vec<BodyItem>, path: &[usize]) -> &'a mut Vec<BodyItem> {
    if path.is_empty() {
        return items;
    }
    match &mut items[path[0]] {
        BodyItem::Loop(l) => body_at_path_mut(&mut l.body, &path[1..]),
        _ => unreachable!("path must descend through loops"),
    }
}

fn item_defs(item: &BodyItem) -> Vec<Reg> {
    match item {
        BodyItem::Inst(i) => i.def().into_iter().collect(),
        BodyItem::Label(_) => vec![],
        BodyItem::Loop(l) => {
            let mut defs = vec![l.induction];
            defs_in_items(&l.body, &mut defs);
            defs
        }
    }
}

/// Whether hoisting a pre-execute block across this item could reorder its
/// slice loads with a data store. Channel-range stores never count.
fn item_has_data_store(item: &BodyItem, sp: &StructuredProgram) -> bool {
    fn store_in_mmio(base: Reg, offset: i64, sp: &StructuredProgram) -> bool {
        match constant_env(sp).get(&base) {
            Some(&b) => sp.mmio.contains(b.wrapping_add(offset) as u64),
            None => false,
        }
    }
    match item {
        BodyItem::Inst(SymInst::St { base, offset, .. })
        | BodyItem::Inst(SymInst::Vst { base, offset, .. }) => !store_in_mmio(*base, *offset, sp),
        BodyItem::Loop(l) => l.body.iter().any(|i| item_has_data_store(i, sp)),
        _ => false,
    }
}

/// The full pipeline: locate the designated loop, extract the backslice,
/// strip mine if the trip count demands it, synthesize the pre-execute
/// block and the channel open, splice, and re-lower.
pub fn instrument(
    sp: &StructuredProgram,
    target_label: &str,
    options: &InstrumentOptions,
) -> Result<Instrumented, InstrumentError> {
    let path = locate_target_loop(&sp.items, target_label)
        .ok_or_else(|| InstrumentError::NoSuchTarget(target_label.to_string()))?;
    let target_loop = loop_at_path(&sp.items, &path).expect("path from locate").clone();
    let induction = find_induction(&target_loop)?;
    let slice = extract_backslice(sp, &target_loop, target_label)?;
    let mut warnings = Vec::new();

    let trip = target_loop.static_trip_count();
    let needs_mining = match trip {
        Some(t) => t > options.strip_cap,
        None => true,
    };
    if needs_mining && options.coverage.is_some() {
        return Err(InstrumentError::Unsupported(
            "partial coverage over a strip-mined range".into(),
        ));
    }
    if let (Some(t), Some((n, m))) = (trip, options.coverage) {
        if m >= t {
            warnings.push(format!("coverage {n}:{m} clamped to trip count {t}"));
        }
    }

    let mut work = sp.clone();
    let mut alloc = RegAlloc::new(sp);
    let mut counter = 0usize;
    let mut fresh = move |what: &str| {
        counter += 1;
        format!("__boss_{what}_{counter}")
    };

    // Mark the slice loads in the original body so their final pcs are
    // recoverable after lowering, and pin an end label on the loop.
    let mut load_markers = Vec::new();
    let end_label;
    {
        let enclosing = body_at_path_mut(&mut work.items, &path[..path.len() - 1]);
        let loop_idx = *path.last().unwrap();
        let l = match &mut enclosing[loop_idx] {
            BodyItem::Loop(l) => l,
            _ => unreachable!(),
        };
        let mut load_items: Vec<usize> =
            slice.load_positions.iter().map(|&p| slice.item_indices[p]).collect();
        load_items.sort_unstable();
        for (n, &item_idx) in load_items.iter().enumerate().rev() {
            let marker = format!("__slice_ld_{n}");
            l.body.insert(item_idx, BodyItem::Label(marker.clone()));
            load_markers.push(marker);
        }
        end_label = l.end_label.clone().unwrap_or_else(|| fresh("gen_end"));
        l.end_label = Some(end_label.clone());
    }

    let outcome_base = sp.mmio.base + options.channel as u64 * CHANNEL_STRIDE + OUTCOME_OFFSET;
    let pe_start = fresh("pe_start");
    let pe_end = fresh("pe_end");
    if needs_mining {
        let enclosing = body_at_path_mut(&mut work.items, &path[..path.len() - 1]);
        let loop_idx = *path.last().unwrap();
        let l = match &enclosing[loop_idx] {
            BodyItem::Loop(l) => l.clone(),
            _ => unreachable!(),
        };
        let mined = strip_mine_inner(&l, options.strip_cap, &mut alloc, &mut fresh)?;
        let pe_items = gen_preexec_items(
            &induction,
            &slice,
            outcome_base,
            &PeRange::Runtime { len: mined.chunk_len, chunk_base: mined.chunk_base },
            options.variant,
            &mut alloc,
        )?;
        let mut items = mined.items;
        if let BodyItem::Loop(outer) = &mut items[0] {
            let at = mined.pe_index;
            outer.body.splice(at..at, bracket(pe_items, &pe_start, &pe_end));
        }
        enclosing.splice(loop_idx..=loop_idx, items);
    } else {
        let trip = trip.unwrap();
        let (first, last) = coverage_bounds(trip, options)?.unwrap_or((0, trip.saturating_sub(1)));
        let pe_items = gen_preexec_items(
            &induction,
            &slice,
            outcome_base,
            &PeRange::Static { first: first as i64, last: last as i64 },
            options.variant,
            &mut alloc,
        )?;
        let enclosing = body_at_path_mut(&mut work.items, &path[..path.len() - 1]);
        let loop_idx = *path.last().unwrap();
        let at = match options.placement {
            Placement::AtLoop => loop_idx,
            Placement::Earliest => {
                let mut at = 0;
                let mut blocker: Option<Reg> = None;
                let mut relevant: Vec<Reg> = slice.live_ins.clone();
                for op in [induction.start, induction.end] {
                    if let Operand::Reg(r) = op {
                        relevant.push(r);
                    }
                }
                for (i, item) in enclosing.iter().enumerate().take(loop_idx) {
                    let defs = item_defs(item);
                    if defs.iter().any(|d| relevant.contains(d)) || item_has_data_store(item, sp) {
                        at = i + 1;
                        blocker = defs.iter().find(|d| relevant.contains(d)).copied();
                    }
                }
                if at == loop_idx && loop_idx > 0 {
                    return Err(InstrumentError::Slice(SliceError::SliceEscapesLoop(
                        blocker.unwrap_or(induction.register),
                    )));
                }
                at
            }
        };
        enclosing.splice(at..at, bracket(pe_items, &pe_start, &pe_end));
    }

    // Channel open before the outermost loop enclosing the target (or, for
    // a top-level target loop, right before the pre-execute block).
    {
        let open_start = fresh("open_start");
        let open_end = fresh("open_end");
        let r_cfg = alloc.take("config word")?;
        let r_cfgaddr = alloc.take("config address")?;
        let open_items = bracket(
            vec![
                inst(SymInst::Movi {
                    dst: r_cfg,
                    imm: SymImm::ChannelConfig {
                        target: target_label.to_string(),
                        end: end_label.clone(),
                    },
                }),
                inst(SymInst::Movi {
                    dst: r_cfgaddr,
                    imm: SymImm::Int((sp.mmio.base + options.channel as u64 * CHANNEL_STRIDE) as i64),
                }),
                inst(SymInst::St { src: r_cfg, base: r_cfgaddr, offset: 0 }),
            ],
            &open_start,
            &open_end,
        );
        let open_at = if path.len() > 1 {
            // Top-level index of the outermost enclosing loop. Splices so
            // far happened inside it, so its index is unchanged.
            path[0]
        } else {
            work.items
                .iter()
                .position(|i| matches!(i, BodyItem::Label(n) if n == &pe_start))
                .unwrap_or(0)
        };
        work.items.splice(open_at..open_at, open_items);
        let program = lower(&work)?;
        let target_pc = program
            .pc_of(target_label)
            .ok_or_else(|| InstrumentError::NoSuchTarget(target_label.to_string()))?;
        let end_pc = program.pc_of(&end_label).expect("end label lowered");
        let range_of = |a: &str, b: &str| -> Vec<usize> {
            match (program.pc_of(a), program.pc_of(b)) {
                (Some(x), Some(y)) => (x..y).collect(),
                _ => vec![],
            }
        };
        let mut pre_exec_pcs: BTreeSet<usize> =
            range_of(&pe_start, &pe_end).into_iter().collect();
        pre_exec_pcs.extend(range_of(&open_start, &open_end));
        let slice_load_pcs: Vec<usize> =
            load_markers.iter().filter_map(|m| program.pc_of(m)).collect();
        let mut slice_loads = BTreeMap::new();
        slice_loads.insert(target_pc, slice_load_pcs);

        Ok(Instrumented {
            program,
            structured: work,
            target_label: target_label.to_string(),
            target_pc,
            end_label,
            end_pc,
            channel: options.channel,
            pre_exec_pcs,
            slice_loads,
            main_loop_intact: !needs_mining,
            warnings,
        })
    }
}

fn bracket(items: Vec<BodyItem>, start: &str, end: &str) -> Vec<BodyItem> {
    let mut out = vec![BodyItem::Label(start.to_string())];
    out.extend(items);
    out.push(BodyItem::Label(end.to_string()));
    out
}
