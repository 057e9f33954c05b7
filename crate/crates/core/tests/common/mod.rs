//! Shared test infrastructure: an independent tree-walking interpreter for
//! structured programs, a random structured-program generator, a randomized
//! channel-unit scenario driver with log-grounded invariant checks, and the
//! hint-safety comparator used by the differential and acceptance suites.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use boss_sim::asm::{SymImm, SymInst};
use boss_sim::boss::{BossUnit, Consume, LogKind, SquashKind, SquashedFetch};
use boss_sim::ir::{Program, Reg};
use boss_sim::oracle::{execute, DynTrace, EventKind, DEFAULT_STEP_LIMIT};
use boss_sim::structured::{collect_used_regs, BodyItem, Operand, StructuredLoop, StructuredProgram};

// ---- reference interpreter -------------------------------------------------

/// Direct interpreter of the structured form: the independent oracle the
/// lowering differential is checked against. Supports branch-free bodies
/// (ALU, moves, loads, stores) and nested counted loops.
pub struct RefState {
    pub regs: [i64; 32],
    pub mem: BTreeMap<u64, u8>,
    pub steps: u64,
}

pub fn interpret_structured(sp: &StructuredProgram, limit: u64) -> Result<RefState, String> {
    let mut st = RefState { regs: [0; 32], mem: sp.data.clone(), steps: 0 };
    run_items(&sp.items, &mut st, limit)?;
    Ok(st)
}

fn operand_value(op: Operand, st: &RefState) -> i64 {
    match op {
        Operand::Const(v) => v,
        Operand::Reg(r) => st.regs[r.index()],
    }
}

fn run_items(items: &[BodyItem], st: &mut RefState, limit: u64) -> Result<(), String> {
    for item in items {
        match item {
            BodyItem::Label(_) => {}
            BodyItem::Inst(i) => run_inst(i, st)?,
            BodyItem::Loop(l) => {
                let end = operand_value(l.end, st);
                let mut k = operand_value(l.start, st);
                st.regs[l.induction.index()] = k;
                loop {
                    let cont = if l.step > 0 { k < end } else { k > end };
                    if !cont {
                        break;
                    }
                    run_items(&l.body, st, limit)?;
                    k = st.regs[l.induction.index()].wrapping_add(l.step);
                    st.regs[l.induction.index()] = k;
                    st.steps += 1;
                    if st.steps > limit {
                        return Err("reference interpreter step limit".into());
                    }
                }
            }
        }
    }
    Ok(())
}

fn run_inst(i: &SymInst, st: &mut RefState) -> Result<(), String> {
    let r = |reg: Reg, st: &RefState| st.regs[reg.index()];
    match i {
        SymInst::Add { dst, lhs, rhs } => {
            st.regs[dst.index()] = r(*lhs, st).wrapping_add(r(*rhs, st))
        }
        SymInst::Sub { dst, lhs, rhs } => {
            st.regs[dst.index()] = r(*lhs, st).wrapping_sub(r(*rhs, st))
        }
        SymInst::Mul { dst, lhs, rhs } => {
            st.regs[dst.index()] = r(*lhs, st).wrapping_mul(r(*rhs, st))
        }
        SymInst::Addi { dst, src, imm } => st.regs[dst.index()] = r(*src, st).wrapping_add(*imm),
        SymInst::Movi { dst, imm } => match imm {
            SymImm::Int(v) => st.regs[dst.index()] = *v,
            other => return Err(format!("reference interpreter: unsupported imm {other:?}")),
        },
        SymInst::Mov { dst, src } => st.regs[dst.index()] = r(*src, st),
        SymInst::CmpEq { dst, lhs, rhs } => {
            st.regs[dst.index()] = (r(*lhs, st) == r(*rhs, st)) as i64
        }
        SymInst::CmpLe { dst, lhs, rhs } => {
            st.regs[dst.index()] = (r(*lhs, st) <= r(*rhs, st)) as i64
        }
        SymInst::CmpGe { dst, lhs, rhs } => {
            st.regs[dst.index()] = (r(*lhs, st) >= r(*rhs, st)) as i64
        }
        SymInst::And { dst, lhs, rhs } => st.regs[dst.index()] = r(*lhs, st) & r(*rhs, st),
        SymInst::Or { dst, lhs, rhs } => st.regs[dst.index()] = r(*lhs, st) | r(*rhs, st),
        SymInst::Ld { dst, base, offset } => {
            let addr = (r(*base, st).wrapping_add(*offset)) as u64;
            let mut bytes = [0u8; 8];
            for (b, i) in bytes.iter_mut().zip(0u64..) {
                *b = *st
                    .mem
                    .get(&(addr + i))
                    .ok_or_else(|| format!("reference load at {:#x}", addr + i))?;
            }
            st.regs[dst.index()] = i64::from_le_bytes(bytes);
        }
        SymInst::St { src, base, offset } => {
            let addr = (r(*base, st).wrapping_add(*offset)) as u64;
            for (i, b) in r(*src, st).to_le_bytes().iter().enumerate() {
                st.mem.insert(addr + i as u64, *b);
            }
        }
        SymInst::Halt => {}
        other => return Err(format!("reference interpreter: unsupported {other:?}")),
    }
    Ok(())
}

// ---- random structured programs ---------------------------------------------

/// Random loop nests over branch-free bodies: ALU ops, loads and stores
/// into a 32-word array, nested counted loops up to depth 2.
pub fn random_structured(seed: u64) -> StructuredProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = Reg::r(8);
    let mut data = BTreeMap::new();
    for i in 0..32u64 {
        for (b, j) in rng.gen::<i64>().to_le_bytes().iter().zip(0u64..) {
            data.insert(0x1000 + i * 8 + j, *b);
        }
    }
    let mut items = vec![BodyItem::Inst(SymInst::Movi { dst: base, imm: SymImm::Int(0x1000) })];
    for _ in 0..rng.gen_range(1..4) {
        items.push(random_item(&mut rng, base, 0));
    }
    items.push(BodyItem::Inst(SymInst::Halt));
    StructuredProgram { items, data, ..Default::default() }
}

fn random_item(rng: &mut ChaCha8Rng, base: Reg, depth: usize) -> BodyItem {
    if depth < 2 && rng.gen_bool(0.35) {
        let induction = Reg::r(9 + depth as u8);
        let trip = rng.gen_range(0..5);
        let body: Vec<BodyItem> =
            (0..rng.gen_range(1..5)).map(|_| random_item(rng, base, depth + 1)).collect();
        return BodyItem::Loop(StructuredLoop {
            induction,
            start: Operand::Const(0),
            end: Operand::Const(trip),
            step: if rng.gen_bool(0.8) { 1 } else { 2 },
            body,
            target_label: None,
            end_label: None,
        });
    }
    let reg = |rng: &mut ChaCha8Rng| Reg::r(rng.gen_range(0..8));
    let slot = |rng: &mut ChaCha8Rng| rng.gen_range(0..32) * 8;
    let inst = match rng.gen_range(0..9) {
        0 => SymInst::Add { dst: reg(rng), lhs: reg(rng), rhs: reg(rng) },
        1 => SymInst::Sub { dst: reg(rng), lhs: reg(rng), rhs: reg(rng) },
        2 => SymInst::Mul { dst: reg(rng), lhs: reg(rng), rhs: reg(rng) },
        3 => SymInst::Addi { dst: reg(rng), src: reg(rng), imm: rng.gen_range(-9..10) },
        4 => SymInst::Movi { dst: reg(rng), imm: SymImm::Int(rng.gen_range(-99..100)) },
        5 => SymInst::CmpLe { dst: reg(rng), lhs: reg(rng), rhs: reg(rng) },
        6 => SymInst::And { dst: reg(rng), lhs: reg(rng), rhs: reg(rng) },
        7 => SymInst::Ld { dst: reg(rng), base, offset: slot(rng) },
        _ => SymInst::St { src: reg(rng), base, offset: slot(rng) },
    };
    BodyItem::Inst(inst)
}

// ---- hint-safety comparison --------------------------------------------------

/// One committed event reduced to its architectural content, pc erased.
#[derive(PartialEq, Eq, Debug, Clone)]
pub enum Obs {
    Branch(bool),
    Load(u64),
    Store(u64),
    Other,
}

pub fn observable(trace: &DynTrace, keep_other: bool, skip_pcs: &BTreeSet<usize>) -> Vec<Obs> {
    trace
        .events
        .iter()
        .filter(|e| !skip_pcs.contains(&e.pc))
        .filter_map(|e| match e.kind {
            EventKind::Branch { taken, .. } => keep_other.then_some(Obs::Branch(taken)),
            EventKind::Load { addr } => Some(Obs::Load(addr)),
            EventKind::Store { addr } => Some(Obs::Store(addr)),
            EventKind::BossConfigStore { .. } | EventKind::BossOutcomeStore { .. } => None,
            EventKind::Other => keep_other.then_some(Obs::Other),
        })
        .collect()
}

/// Assert the instrumented program preserves the original's architectural
/// behavior: identical committed non-channel events (full sequence when the
/// main loop is textually intact, memory events otherwise), identical final
/// registers over the original's register set, and identical memory delta
/// outside declared scratch.
pub fn assert_hint_safe(
    original_structured: &StructuredProgram,
    original: &Program,
    instrumented: &Program,
    added_pcs: &BTreeSet<usize>,
    scratch: Option<(u64, u64)>,
    main_loop_intact: bool,
    context: &str,
) {
    let base = execute(original, DEFAULT_STEP_LIMIT);
    let inst = execute(instrumented, DEFAULT_STEP_LIMIT);
    assert!(base.halted, "{context}: original did not halt");
    assert!(inst.halted, "{context}: instrumented did not halt ({:?})", inst.fault);

    let keep_all = main_loop_intact;
    assert_eq!(
        observable(&base, keep_all, &BTreeSet::new()),
        observable(&inst, keep_all, added_pcs),
        "{context}: committed non-channel event sequences diverge"
    );

    let mut used = BTreeSet::new();
    collect_used_regs(&original_structured.items, &mut used);
    for reg in used {
        assert_eq!(
            base.final_regs[reg.index()],
            inst.final_regs[reg.index()],
            "{context}: final value of {reg} diverges"
        );
    }

    let in_scratch = |addr: u64| scratch.map(|(lo, hi)| addr >= lo && addr < hi).unwrap_or(false);
    let base_delta: Vec<(&u64, &u8)> = base.final_mem_delta.iter().collect();
    let inst_delta: Vec<(&u64, &u8)> =
        inst.final_mem_delta.iter().filter(|(a, _)| !in_scratch(**a)).collect();
    assert_eq!(base_delta, inst_delta, "{context}: final memory delta diverges");
}

// ---- randomized channel-unit scenarios ---------------------------------------

pub const TARGET_PCS: [usize; 2] = [100, 101];
pub const END_PC: usize = 200;

/// Driver bookkeeping for one in-flight channel-relevant fetch.
#[derive(Clone, Copy, Debug)]
pub enum FetchKind {
    Branch(usize),
    End,
}

pub struct Scenario {
    pub unit: BossUnit,
    pub in_flight: Vec<FetchKind>,
    pub rng: ChaCha8Rng,
}

impl Scenario {
    pub fn new(seed: u64) -> Scenario {
        let mut unit = BossUnit::new(4);
        unit.open_channel(0, &TARGET_PCS, END_PC).unwrap();
        Scenario { unit, in_flight: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn fetch_branch(&mut self) {
        let pc = TARGET_PCS[self.rng.gen_range(0..TARGET_PCS.len())];
        match self.unit.consume_prediction(pc) {
            Consume::Matched { .. } => self.in_flight.push(FetchKind::Branch(pc)),
            Consume::Unmatched => panic!("target pc must match"),
        }
    }

    pub fn fetch_end(&mut self) {
        if self.unit.notify_end_fetch(END_PC).is_some() {
            self.in_flight.push(FetchKind::End);
        }
    }

    /// Squash the youngest `n` in-flight fetches, reverse fetch order.
    pub fn squash(&mut self, n: usize) {
        let n = n.min(self.in_flight.len());
        let mut events = Vec::new();
        for _ in 0..n {
            let kind = self.in_flight.pop().unwrap();
            events.push(match kind {
                FetchKind::Branch(pc) => SquashedFetch { pc, kind: SquashKind::TargetBranch },
                FetchKind::End => SquashedFetch { pc: END_PC, kind: SquashKind::LoopEnd },
            });
        }
        self.unit.notify_squash(&events);
    }

    /// Commit the oldest in-flight fetch.
    pub fn commit_oldest(&mut self) {
        if self.in_flight.is_empty() {
            return;
        }
        let kind = self.in_flight.remove(0);
        match kind {
            FetchKind::Branch(pc) => self.unit.notify_commit(pc),
            FetchKind::End => self.unit.notify_commit(END_PC),
        }
    }

    pub fn write(&mut self) {
        let slot = self.rng.gen_range(0..8);
        let taken = self.rng.gen_bool(0.5);
        self.unit.write_outcome(0, slot, taken);
    }

    /// A random well-formed prefix establishing arbitrary channel state.
    pub fn random_prefix(&mut self, ops: usize) {
        for _ in 0..ops {
            match self.rng.gen_range(0..10) {
                0..=2 => self.write(),
                3..=5 => self.fetch_branch(),
                6 => self.fetch_end(),
                7 => self.commit_oldest(),
                8 => {
                    let n = self.rng.gen_range(0..=self.in_flight.len());
                    self.squash(n);
                }
                _ => {}
            }
        }
    }
}

/// Log-grounded invariants: every hit consumed a value written under the
/// same generation parity with no producer generation advance in between,
/// and desynchronized stretches never hit.
pub fn check_log_invariants(unit: &BossUnit) -> Result<(), String> {
    let log = unit.log();
    for (i, rec) in log.iter().enumerate() {
        match &rec.kind {
            LogKind::Hit { taken } => {
                let mut advances = 0;
                let mut found = None;
                for prior in log[..i].iter().rev() {
                    if prior.channel != rec.channel {
                        continue;
                    }
                    match &prior.kind {
                        LogKind::GenAdvance => advances += 1,
                        LogKind::Write { slot, taken: t } if *slot == rec.iter => {
                            found = Some((*t, prior.gen, advances));
                            break;
                        }
                        LogKind::Open { .. } => break,
                        _ => {}
                    }
                }
                let (written, write_gen, advances_between) = found
                    .ok_or_else(|| format!("hit at record {i} with no prior write"))?;
                if written != *taken {
                    return Err(format!("hit at record {i} returned a different value"));
                }
                if write_gen != rec.gen {
                    return Err(format!(
                        "hit at record {i} crossed generations: write gen {write_gen}, \
                         consumer gen {}",
                        rec.gen
                    ));
                }
                if advances_between != 0 {
                    return Err(format!(
                        "hit at record {i} consumed a value from {advances_between} \
                         generation(s) ago"
                    ));
                }
            }
            _ => {}
        }
    }
    // No hits inside desynchronized stretches.
    let mut desync = false;
    for (i, rec) in log.iter().enumerate() {
        match &rec.kind {
            LogKind::Desync { on } if rec.channel == 0 => desync = *on,
            LogKind::Hit { .. } if rec.channel == 0 && desync => {
                return Err(format!("hit at record {i} while desynchronized"));
            }
            _ => {}
        }
    }
    Ok(())
}
