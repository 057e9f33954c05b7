//! Cycle-stepped speculative fetch/resolve/commit timing model.
//!
//! The architectural oracle supplies the committed path; the frontend
//! re-fetches the static program speculatively, consulting the channel unit
//! first and the baseline predictor on a miss, synthesizing wrong-path
//! fetch after a misprediction so squash semantics are exercised for real.
//! Committed results always equal the oracle trace; only timing moves.
//!
//! Per cycle: (1) branches fetched earlier resolve `resolve_delay` plus
//! their feeding loads' cache latency after fetch, squashing and
//! redirecting on a misprediction after the refill penalty; (2) up to
//! `width` completed instructions commit in order, firing channel store
//! and commit effects; (3) up to `width` instructions are fetched along
//! the predicted path, stopping at a predicted-taken branch.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::boss::{BossUnit, Consume, ConsumerView, LogRecord, SquashKind, SquashedFetch};
use crate::cache::{AccessKind, CacheConfig, CacheModel};
use crate::ir::{unpack_channel_config, Inst, Program};
use crate::oracle::{execute, DynTrace, EventKind, DEFAULT_STEP_LIMIT};
use crate::predictor::Predictor;

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct CoreConfig {
    /// Instructions fetched and committed per cycle.
    pub width: u32,
    /// In-flight instruction cap.
    pub window: usize,
    /// Base branch resolution delay in cycles, before load latency.
    pub resolve_delay: u64,
    /// Cycles between a squash and fetch resuming on the correct path.
    pub refill_penalty: u64,
    pub cache: CacheConfig,
    pub boss_enabled: bool,
    /// Let wrong-path loads disturb the cache (approximated by re-probing
    /// each static load's last committed-path address).
    pub wrong_path_pollution: bool,
    pub max_cycles: u64,
    pub step_limit: u64,
    /// Check that every squash restores the channel consumer state to its
    /// value at the redirect branch's fetch.
    pub debug_snapshots: bool,
}

impl Default for CoreConfig {
    fn default() -> Self {
        CoreConfig {
            width: 8,
            window: 192,
            resolve_delay: 6,
            refill_penalty: 12,
            cache: CacheConfig::default(),
            boss_enabled: false,
            wrong_path_pollution: false,
            max_cycles: 20_000_000,
            step_limit: DEFAULT_STEP_LIMIT,
            debug_snapshots: true,
        }
    }
}

impl CoreConfig {
    pub fn with_boss(mut self, on: bool) -> Self {
        self.boss_enabled = on;
        self
    }
}

/// Per-branch outcome record: one flag per committed instance, in commit
/// order, true when that instance mispredicted.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct BranchStats {
    pub instances: u64,
    pub mispredictions: u64,
    pub mispredict_flags: Vec<bool>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SimStats {
    pub cycles: u64,
    pub committed: u64,
    /// Committed conditional branches.
    pub committed_branches: u64,
    pub mispredictions: u64,
    pub boss_hits: u64,
    pub boss_misses: u64,
    /// Channel hits whose branch instance reached commit.
    pub boss_hits_resolved: u64,
    /// Resolved channel hits that carried the wrong outcome.
    pub boss_wrong_hints: u64,
    /// False when the run hit the cycle budget or the oracle never halted.
    pub completed: bool,
    pub per_branch: BTreeMap<usize, BranchStats>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct IterBucket {
    pub iter: u64,
    pub instances: u64,
    pub mispredictions: u64,
}

impl SimStats {
    pub fn mpki(&self) -> f64 {
        if self.committed == 0 {
            0.0
        } else {
            self.mispredictions as f64 * 1000.0 / self.committed as f64
        }
    }

    pub fn ipc(&self) -> f64 {
        if self.cycles == 0 {
            0.0
        } else {
            self.committed as f64 / self.cycles as f64
        }
    }

    pub fn mispredictions_at(&self, pc: usize) -> u64 {
        self.per_branch.get(&pc).map(|b| b.mispredictions).unwrap_or(0)
    }

    pub fn instances_at(&self, pc: usize) -> u64 {
        self.per_branch.get(&pc).map(|b| b.instances).unwrap_or(0)
    }

    /// Fold a branch's instance sequence by `period` (the loop trip count):
    /// bucket i aggregates dynamic instances i, i+period, i+2*period, ...
    pub fn iteration_histogram(&self, pc: usize, period: u64) -> Vec<IterBucket> {
        let mut buckets: Vec<IterBucket> = (0..period)
            .map(|iter| IterBucket { iter, instances: 0, mispredictions: 0 })
            .collect();
        if let Some(b) = self.per_branch.get(&pc) {
            for (i, &miss) in b.mispredict_flags.iter().enumerate() {
                let bucket = &mut buckets[i % period as usize];
                bucket.instances += 1;
                bucket.mispredictions += miss as u64;
            }
        }
        buckets
    }
}

/// Everything a simulation run produces.
#[derive(Clone, Debug)]
pub struct SimRun {
    pub stats: SimStats,
    pub boss_log: Vec<LogRecord>,
    /// Committed pcs, equal to the oracle trace path.
    pub committed_pcs: Vec<usize>,
}

/// Loads feeding each conditional branch, found by a 4-instruction dataflow
/// window walked backward from the branch. Instrumenter slice metadata,
/// when available, overrides these entries.
pub fn branch_load_feeders(program: &Program) -> BTreeMap<usize, Vec<usize>> {
    let mut feeders = BTreeMap::new();
    for (pc, inst) in program.insts.iter().enumerate() {
        let cond = match inst {
            Inst::Bnz { cond, .. } | Inst::Bz { cond, .. } => *cond,
            _ => continue,
        };
        let mut needed = vec![cond];
        let mut loads = Vec::new();
        for back in 1..=4usize {
            if back > pc {
                break;
            }
            let i = pc - back;
            let prior = program.insts[i];
            if matches!(prior, Inst::Bnz { .. } | Inst::Bz { .. } | Inst::Jmp { .. } | Inst::Halt) {
                break;
            }
            if let Some(d) = prior.def() {
                if let Some(pos) = needed.iter().position(|&r| r == d) {
                    needed.swap_remove(pos);
                    if matches!(prior, Inst::Ld { .. }) {
                        loads.push(i);
                    }
                    for u in prior.uses() {
                        if !needed.contains(&u) {
                            needed.push(u);
                        }
                    }
                }
            }
        }
        if !loads.is_empty() {
            feeders.insert(pc, loads);
        }
    }
    feeders
}

struct Flight {
    seq: u64,
    pc: usize,
    complete_cycle: u64,
    wrong_path: bool,
    is_cond_branch: bool,
    predicted: bool,
    mispredicted: bool,
    from_boss: bool,
    boss_effects: Vec<SquashedFetch>,
}

struct SnapshotCheck {
    views: Vec<ConsumerView>,
    end_commits_seen: u64,
}

/// Run the timing simulation. Deterministic in all inputs.
pub fn run_sim(program: &Program, predictor: Predictor, core: &CoreConfig) -> SimRun {
    run_sim_with_meta(program, predictor, core, None)
}

/// As [`run_sim`], with instrumenter slice metadata mapping target-branch
/// pcs to their slice load pcs.
pub fn run_sim_with_meta(
    program: &Program,
    mut predictor: Predictor,
    core: &CoreConfig,
    slice_meta: Option<&BTreeMap<usize, Vec<usize>>>,
) -> SimRun {
    let trace = execute(program, core.step_limit);
    let mut feeders = branch_load_feeders(program);
    if let Some(meta) = slice_meta {
        for (pc, loads) in meta {
            feeders.insert(*pc, loads.clone());
        }
    }

    let mut boss = BossUnit::new(program.mmio.channels as usize);
    let mut cache = CacheModel::new(core.cache);
    let mut stats = SimStats::default();
    let mut committed_pcs = Vec::with_capacity(trace.events.len());

    let mut in_flight: VecDeque<Flight> = VecDeque::new();
    let mut resolve_heap: BinaryHeap<Reverse<(u64, u64)>> = BinaryHeap::new();
    let mut recent_load_latency: HashMap<usize, u64> = HashMap::new();
    let mut recent_load_addr: HashMap<usize, u64> = HashMap::new();
    let mut snapshots: HashMap<u64, SnapshotCheck> = HashMap::new();

    let mut cycle: u64 = 0;
    let mut next_seq: u64 = 0;
    let mut fetch_pc = program.entry;
    let mut fetch_idx: usize = 0; // next oracle event to fetch on the committed path
    let mut commit_idx: usize = 0;
    let mut wrong_path = false;
    let mut fetch_blocked = false;
    let mut fetch_done = trace.events.is_empty();
    let mut fetch_resume_cycle: u64 = 0;
    let mut end_commits_seen: u64 = 0;

    'cycles: while commit_idx < trace.events.len() {
        if cycle >= core.max_cycles {
            break;
        }
        boss.set_time(cycle);

        // (1) Resolve committed-path branches whose delay elapsed.
        while let Some(&Reverse((ready, seq))) = resolve_heap.peek() {
            if ready > cycle {
                break;
            }
            resolve_heap.pop();
            let idx = match in_flight.iter().position(|f| f.seq == seq) {
                Some(i) => i,
                None => continue,
            };
            let (pc, predicted, mispredicted) = {
                let f = &in_flight[idx];
                (f.pc, f.predicted, f.mispredicted)
            };
            let actual = if mispredicted { !predicted } else { predicted };
            predictor.update(pc, actual);
            if mispredicted {
                // Squash everything younger, reverse fetch order.
                let mut undo = Vec::new();
                while in_flight.len() > idx + 1 {
                    let victim = in_flight.pop_back().unwrap();
                    undo.extend(victim.boss_effects.into_iter().rev());
                }
                if core.boss_enabled {
                    boss.notify_squash(&undo);
                    if core.debug_snapshots {
                        if let Some(check) = snapshots.remove(&seq) {
                            verify_squash_restore(&boss, &check, end_commits_seen, pc);
                        }
                    }
                }
                let target = program.insts[pc].branch_target().expect("resolved branch");
                fetch_pc = if actual { target } else { pc + 1 };
                wrong_path = false;
                fetch_blocked = false;
                fetch_resume_cycle = cycle + core.refill_penalty;
            }
        }

        // (2) Commit in order.
        let mut commits = 0;
        while commits < core.width {
            let front = match in_flight.front() {
                Some(f) => f,
                None => break,
            };
            if front.wrong_path || front.complete_cycle > cycle {
                break;
            }
            let f = in_flight.pop_front().unwrap();
            let ev = trace.events[commit_idx];
            debug_assert_eq!(ev.pc, f.pc, "committed path must equal the oracle path");
            if core.boss_enabled {
                match ev.kind {
                    EventKind::BossConfigStore { channel, value } => {
                        let (target, end) = unpack_channel_config(value);
                        let _ = boss.config_store(channel as usize, target as usize, end as usize);
                    }
                    EventKind::BossOutcomeStore { channel, slot, lanes, bytes } => {
                        for i in 0..lanes {
                            boss.write_outcome(
                                channel as usize,
                                slot.wrapping_add(i),
                                bytes[i as usize] != 0,
                            );
                        }
                    }
                    _ => {}
                }
                if boss
                    .channels()
                    .iter()
                    .any(|c| c.open && c.end_pc == f.pc)
                {
                    end_commits_seen += 1;
                }
                boss.notify_commit(f.pc);
            }
            stats.committed += 1;
            committed_pcs.push(f.pc);
            if f.is_cond_branch {
                stats.committed_branches += 1;
                let b = stats.per_branch.entry(f.pc).or_default();
                b.instances += 1;
                b.mispredictions += f.mispredicted as u64;
                b.mispredict_flags.push(f.mispredicted);
                stats.mispredictions += f.mispredicted as u64;
                if f.from_boss {
                    stats.boss_hits_resolved += 1;
                    stats.boss_wrong_hints += f.mispredicted as u64;
                }
            }
            commit_idx += 1;
            commits += 1;
            if commit_idx == trace.events.len() {
                stats.cycles = cycle + 1;
                break 'cycles;
            }
        }

        // (3) Fetch along the predicted path.
        if !fetch_done && !fetch_blocked && cycle >= fetch_resume_cycle {
            let mut slots = core.width;
            while slots > 0 && in_flight.len() < core.window {
                if fetch_pc >= program.insts.len() {
                    fetch_blocked = true;
                    break;
                }
                if !wrong_path && fetch_idx >= trace.events.len() {
                    fetch_done = true;
                    break;
                }
                let inst = program.insts[fetch_pc];
                let seq = next_seq;
                next_seq += 1;

                let mut boss_effects = Vec::new();
                let mut boss_prediction = None;
                if core.boss_enabled && inst.is_conditional_branch() {
                    match boss.consume_prediction(fetch_pc) {
                        Consume::Matched { hit, .. } => {
                            boss_effects.push(SquashedFetch {
                                pc: fetch_pc,
                                kind: SquashKind::TargetBranch,
                            });
                            match hit {
                                Some(taken) => {
                                    stats.boss_hits += 1;
                                    boss_prediction = Some(taken);
                                }
                                None => stats.boss_misses += 1,
                            }
                        }
                        Consume::Unmatched => {}
                    }
                }
                if core.boss_enabled && boss.notify_end_fetch(fetch_pc).is_some() {
                    boss_effects.push(SquashedFetch { pc: fetch_pc, kind: SquashKind::LoopEnd });
                }

                let mut flight = Flight {
                    seq,
                    pc: fetch_pc,
                    complete_cycle: cycle + 1,
                    wrong_path,
                    is_cond_branch: inst.is_conditional_branch(),
                    predicted: false,
                    mispredicted: false,
                    from_boss: false,
                    boss_effects,
                };
                let mut group_ends = false;

                match inst {
                    Inst::Bnz { .. } | Inst::Bz { .. } => {
                        let predicted =
                            boss_prediction.unwrap_or_else(|| predictor.predict(fetch_pc));
                        flight.predicted = predicted;
                        flight.from_boss = boss_prediction.is_some();
                        let target = inst.branch_target().unwrap();
                        if !wrong_path {
                            let ev = trace.events[fetch_idx];
                            debug_assert_eq!(ev.pc, fetch_pc);
                            let actual = match ev.kind {
                                EventKind::Branch { taken, .. } => taken,
                                _ => unreachable!("oracle event kind mismatch"),
                            };
                            let load_latency: u64 = feeders
                                .get(&fetch_pc)
                                .map(|loads| {
                                    loads
                                        .iter()
                                        .map(|l| recent_load_latency.get(l).copied().unwrap_or(0))
                                        .sum()
                                })
                                .unwrap_or(0);
                            let resolve_cycle = cycle + core.resolve_delay + load_latency;
                            flight.complete_cycle = resolve_cycle;
                            flight.mispredicted = predicted != actual;
                            resolve_heap.push(Reverse((resolve_cycle, seq)));
                            fetch_idx += 1;
                            if flight.mispredicted {
                                if core.boss_enabled && core.debug_snapshots {
                                    snapshots.insert(seq, SnapshotCheck {
                                        views: boss
                                            .channels()
                                            .iter()
                                            .map(|c| c.consumer_view())
                                            .collect(),
                                        end_commits_seen,
                                    });
                                }
                                wrong_path = true;
                            }
                        }
                        fetch_pc = if predicted { target } else { fetch_pc + 1 };
                        group_ends = predicted;
                    }
                    Inst::Jmp { target } => {
                        if !wrong_path {
                            fetch_idx += 1;
                        }
                        fetch_pc = target;
                        group_ends = true;
                    }
                    Inst::Halt => {
                        if wrong_path {
                            fetch_blocked = true;
                        } else {
                            fetch_idx += 1;
                            fetch_done = true;
                        }
                        in_flight.push_back(flight);
                        break;
                    }
                    Inst::Ld { .. } => {
                        if !wrong_path {
                            let ev = trace.events[fetch_idx];
                            debug_assert_eq!(ev.pc, fetch_pc);
                            if let EventKind::Load { addr } = ev.kind {
                                let latency = cache.access(addr, AccessKind::Data);
                                recent_load_latency.insert(fetch_pc, latency);
                                recent_load_addr.insert(fetch_pc, addr);
                                flight.complete_cycle = cycle + latency;
                            }
                            fetch_idx += 1;
                        } else if core.wrong_path_pollution {
                            if let Some(&addr) = recent_load_addr.get(&fetch_pc) {
                                cache.access(addr, AccessKind::Data);
                            }
                        }
                        fetch_pc += 1;
                    }
                    _ => {
                        if !wrong_path {
                            fetch_idx += 1;
                        }
                        fetch_pc += 1;
                    }
                }
                in_flight.push_back(flight);
                slots -= 1;
                if group_ends {
                    break;
                }
            }
        }

        cycle += 1;
    }

    if stats.cycles == 0 {
        stats.cycles = cycle;
    }
    stats.completed = commit_idx == trace.events.len() && trace.halted;
    stats.boss_hits_resolved = stats.boss_hits_resolved.min(stats.boss_hits);
    SimRun { stats, boss_log: boss.take_log(), committed_pcs }
}

fn verify_squash_restore(
    boss: &BossUnit,
    check: &SnapshotCheck,
    end_commits_now: u64,
    redirect_pc: usize,
) {
    for (ch, (now, then)) in boss
        .channels()
        .iter()
        .map(|c| c.consumer_view())
        .zip(check.views.iter())
        .enumerate()
    {
        // Loop-end commits between fetch and squash legally drop the saved
        // stack frame, so the full view is only comparable without them.
        // The iteration counter and generation parity must restore always.
        assert_eq!(
            (now.consumer_iter, now.consumer_gen),
            (then.consumer_iter, then.consumer_gen),
            "squash of branch at pc {redirect_pc} failed to restore channel {ch} counters"
        );
        if check.end_commits_seen == end_commits_now {
            assert_eq!(
                now, *then,
                "squash of branch at pc {redirect_pc} failed to restore channel {ch}"
            );
        }
    }
}

/// Convenience wrapper: the oracle trace of the same program, for
/// differential checks against [`SimRun::committed_pcs`].
pub fn oracle_trace(program: &Program, core: &CoreConfig) -> DynTrace {
    execute(program, core.step_limit)
}
