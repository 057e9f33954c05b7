//! The branch-outcome channel unit: per-channel outcome storage plus the
//! event machine reacting to fetch/squash/commit of target branches,
//! loop-end instructions, and channel stores.
//!
//! Consumer-side state (iteration counter, generation parity, the depth-1
//! iteration stack) moves at fetch and is unwound at squash; producer-side
//! state (outcome entries, producer generation, commit-side iteration
//! counter) moves only at commit. Entries are tagged with the producer
//! generation parity at write time and are only consumed under a matching
//! consumer parity, which is what discards a stale generation after an
//! early loop exit.
//!
//! Speculation can fetch more than one loop-end before the first resolves.
//! The hardware stack is one level deep, so deeper speculation sets a
//! `desync` flag that suppresses hits until squashes or the next loop-end
//! commit bring the channel back in sync. To keep squash inversion exact,
//! each in-flight loop-end fetch carries a "pushed" flag, the analogue of a
//! reorder-buffer tag.

use std::collections::VecDeque;
use std::fmt::Write as _;

use thiserror::Error;

use crate::ir::OUTCOME_SLOTS;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BossError {
    #[error("channel {channel} out of range ({count} channels)")]
    NoSuchChannel { channel: usize, count: usize },
    #[error("storage sizing needs nonzero channels and iterations")]
    ZeroStorageDim,
}

/// Maximum static target branches one channel can feed.
pub const MAX_TARGETS: usize = 4;

#[derive(Clone, Copy, Default, PartialEq, Eq, Debug)]
pub struct OutcomeEntry {
    pub valid: bool,
    pub taken: bool,
    /// Producer generation parity at write time.
    pub gen: bool,
}

/// One channel. Cloneable so tests can snapshot and compare.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ChannelState {
    pub open: bool,
    pub target_pcs: Vec<usize>,
    pub end_pc: usize,
    pub outcomes: Box<[OutcomeEntry; OUTCOME_SLOTS as usize]>,
    pub producer_gen: bool,
    pub consumer_gen: bool,
    pub consumer_iter: u8,
    pub commit_iter: u8,
    /// Depth-1 stack saving (consumer_iter, consumer_gen) at loop-end fetch.
    pub iter_stack: Option<(u8, bool)>,
    /// Pushed-flags of in-flight loop-end fetches, oldest first.
    pub end_flags: VecDeque<bool>,
    pub desync: bool,
}

impl Default for ChannelState {
    fn default() -> Self {
        ChannelState {
            open: false,
            target_pcs: Vec::new(),
            end_pc: 0,
            outcomes: Box::new([OutcomeEntry::default(); OUTCOME_SLOTS as usize]),
            producer_gen: false,
            consumer_gen: false,
            consumer_iter: 0,
            commit_iter: 0,
            iter_stack: None,
            end_flags: VecDeque::new(),
            desync: false,
        }
    }
}

/// Consumer-side projection, the part a squash must restore.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ConsumerView {
    pub consumer_iter: u8,
    pub consumer_gen: bool,
    pub iter_stack: Option<(u8, bool)>,
    pub end_flags: VecDeque<bool>,
    pub desync: bool,
}

impl ChannelState {
    pub fn consumer_view(&self) -> ConsumerView {
        ConsumerView {
            consumer_iter: self.consumer_iter,
            consumer_gen: self.consumer_gen,
            iter_stack: self.iter_stack,
            end_flags: self.end_flags.clone(),
            desync: self.desync,
        }
    }

    fn reset(&mut self) {
        *self = ChannelState::default();
    }
}

/// Result of a conditional-branch fetch consulting the unit.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Consume {
    /// The pc matches no open channel; nothing changed.
    Unmatched,
    /// The pc matched `channel`; the consumer iteration advanced. `hit`
    /// carries the stored outcome when the lookup hit.
    Matched { channel: usize, hit: Option<bool> },
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SquashKind {
    TargetBranch,
    LoopEnd,
}

/// One squashed channel-relevant fetch, reported in reverse fetch order.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct SquashedFetch {
    pub pc: usize,
    pub kind: SquashKind,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum LogKind {
    Open { targets: Vec<usize>, end_pc: usize },
    AddTarget { pc: usize },
    TargetsSaturated { pc: usize },
    Close,
    Write { slot: u8, taken: bool },
    WriteIgnored { slot: u8 },
    Hit { taken: bool },
    Miss,
    /// Consumer-side generation advance at loop-end fetch.
    EndFetch { pushed: bool },
    /// Producer-side generation advance at loop-end commit.
    GenAdvance,
    /// Stale-generation entries invalidated at loop-end commit.
    Discard { count: u16 },
    /// Target-branch commit consumed (and invalidated) its entry.
    CommitConsume { had_entry: bool },
    SquashUndo { kind: SquashKind },
    Desync { on: bool },
}

/// One observability record. `gen`/`iter` are the consumer-side values for
/// fetch/squash events and the producer-side values for commit-side events.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LogRecord {
    pub time: u64,
    pub channel: usize,
    pub gen: bool,
    pub iter: u8,
    pub kind: LogKind,
}

/// The channel unit. Owned by one frontend; events must arrive in
/// simulated-time order.
#[derive(Clone, Debug)]
pub struct BossUnit {
    channels: Vec<ChannelState>,
    enabled: bool,
    now: u64,
    log: Vec<LogRecord>,
    logging: bool,
}

impl BossUnit {
    pub fn new(channel_count: usize) -> BossUnit {
        BossUnit {
            channels: vec![ChannelState::default(); channel_count],
            enabled: false,
            now: 0,
            log: Vec::new(),
            logging: true,
        }
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// The unit is off until a channel is opened and back off once the last
    /// one closes.
    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn set_time(&mut self, now: u64) {
        self.now = now;
    }

    pub fn set_logging(&mut self, on: bool) {
        self.logging = on;
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<LogRecord> {
        std::mem::take(&mut self.log)
    }

    fn record(&mut self, channel: usize, gen: bool, iter: u8, kind: LogKind) {
        if self.logging {
            self.log.push(LogRecord { time: self.now, channel, gen, iter, kind });
        }
    }

    fn check_channel(&self, channel: usize) -> Result<(), BossError> {
        if channel < self.channels.len() {
            Ok(())
        } else {
            Err(BossError::NoSuchChannel { channel, count: self.channels.len() })
        }
    }

    fn set_desync(&mut self, channel: usize, on: bool) {
        if self.channels[channel].desync != on {
            self.channels[channel].desync = on;
            let (gen, iter) = {
                let c = &self.channels[channel];
                (c.consumer_gen, c.consumer_iter)
            };
            self.record(channel, gen, iter, LogKind::Desync { on });
        }
    }

    fn channel_of_target(&self, pc: usize) -> Option<usize> {
        self.channels.iter().position(|c| c.open && c.target_pcs.contains(&pc))
    }

    fn channel_of_end(&self, pc: usize) -> Option<usize> {
        self.channels.iter().position(|c| c.open && c.end_pc == pc)
    }

    /// Open (or re-open, fully resetting) a channel. Fires at commit of the
    /// configuration store. More than [`MAX_TARGETS`] targets saturate.
    pub fn open_channel(
        &mut self,
        channel: usize,
        targets: &[usize],
        end_pc: usize,
    ) -> Result<(), BossError> {
        self.check_channel(channel)?;
        let c = &mut self.channels[channel];
        c.reset();
        c.open = true;
        c.end_pc = end_pc;
        for &pc in targets.iter().take(MAX_TARGETS) {
            if !c.target_pcs.contains(&pc) {
                c.target_pcs.push(pc);
            }
        }
        let kept = c.target_pcs.clone();
        self.enabled = true;
        self.record(channel, false, 0, LogKind::Open { targets: kept, end_pc });
        for &pc in targets.iter().skip(MAX_TARGETS) {
            self.record(channel, false, 0, LogKind::TargetsSaturated { pc });
        }
        Ok(())
    }

    /// Committed configuration store carrying one (target, end) pair.
    /// Repeated stores with the same end pc accumulate targets so one
    /// channel can feed several static branches; a different end pc is a
    /// true re-open and resets the channel.
    pub fn config_store(
        &mut self,
        channel: usize,
        target_pc: usize,
        end_pc: usize,
    ) -> Result<(), BossError> {
        self.check_channel(channel)?;
        let c = &self.channels[channel];
        if c.open && c.end_pc == end_pc {
            if c.target_pcs.contains(&target_pc) {
                return Ok(());
            }
            if c.target_pcs.len() < MAX_TARGETS {
                self.channels[channel].target_pcs.push(target_pc);
                self.record(channel, false, 0, LogKind::AddTarget { pc: target_pc });
            } else {
                self.record(channel, false, 0, LogKind::TargetsSaturated { pc: target_pc });
            }
            Ok(())
        } else {
            self.open_channel(channel, &[target_pc], end_pc)
        }
    }

    /// Close a channel; closing the last open one disables the unit.
    pub fn close_channel(&mut self, channel: usize) {
        if channel >= self.channels.len() || !self.channels[channel].open {
            return;
        }
        self.channels[channel].open = false;
        self.enabled = self.channels.iter().any(|c| c.open);
        self.record(channel, false, 0, LogKind::Close);
    }

    /// Committed outcome store. Writes to a closed channel are ignored.
    pub fn write_outcome(&mut self, channel: usize, slot: u8, taken: bool) {
        if channel >= self.channels.len() {
            return;
        }
        if !self.channels[channel].open {
            let gen = self.channels[channel].producer_gen;
            self.record(channel, gen, slot, LogKind::WriteIgnored { slot });
            return;
        }
        let gen = self.channels[channel].producer_gen;
        self.channels[channel].outcomes[slot as usize] =
            OutcomeEntry { valid: true, taken, gen };
        self.record(channel, gen, slot, LogKind::Write { slot, taken });
    }

    /// Fetch of a conditional branch, consulted before the baseline
    /// predictor. On a matching pc the consumer iteration advances whether
    /// or not an outcome was available: the dynamic instance is consumed
    /// either way.
    pub fn consume_prediction(&mut self, pc: usize) -> Consume {
        if !self.enabled {
            return Consume::Unmatched;
        }
        let channel = match self.channel_of_target(pc) {
            Some(ch) => ch,
            None => return Consume::Unmatched,
        };
        let (hit, gen, iter) = {
            let c = &self.channels[channel];
            let entry = c.outcomes[c.consumer_iter as usize];
            let hit = if !c.desync && entry.valid && entry.gen == c.consumer_gen {
                Some(entry.taken)
            } else {
                None
            };
            (hit, c.consumer_gen, c.consumer_iter)
        };
        match hit {
            Some(taken) => self.record(channel, gen, iter, LogKind::Hit { taken }),
            None => self.record(channel, gen, iter, LogKind::Miss),
        }
        let c = &mut self.channels[channel];
        c.consumer_iter = c.consumer_iter.wrapping_add(1);
        Consume::Matched { channel, hit }
    }

    /// Fetch of a loop-end pc, possibly on the wrong path. Saves the
    /// consumer counters on the depth-1 stack and starts the next
    /// generation; a second in-flight loop-end overflows the stack and
    /// desynchronizes the channel. Returns the channel acted on.
    pub fn notify_end_fetch(&mut self, pc: usize) -> Option<usize> {
        if !self.enabled {
            return None;
        }
        let channel = self.channel_of_end(pc)?;
        let pushed = self.channels[channel].iter_stack.is_none();
        let (gen, iter) = {
            let c = &self.channels[channel];
            (c.consumer_gen, c.consumer_iter)
        };
        if pushed {
            let c = &mut self.channels[channel];
            c.iter_stack = Some((c.consumer_iter, c.consumer_gen));
            c.consumer_iter = 0;
            c.consumer_gen = !c.consumer_gen;
        } else {
            self.set_desync(channel, true);
        }
        self.channels[channel].end_flags.push_back(pushed);
        self.record(channel, gen, iter, LogKind::EndFetch { pushed });
        Some(channel)
    }

    /// Undo the channel-relevant fetches younger than a redirect point.
    /// `events` must be exactly those fetches in reverse fetch order.
    pub fn notify_squash(&mut self, events: &[SquashedFetch]) {
        for ev in events {
            match ev.kind {
                SquashKind::TargetBranch => {
                    let channel = match self.channel_of_target(ev.pc) {
                        Some(ch) => ch,
                        None => continue,
                    };
                    let c = &mut self.channels[channel];
                    c.consumer_iter = c.consumer_iter.wrapping_sub(1);
                    let (gen, iter) = (c.consumer_gen, c.consumer_iter);
                    self.record(channel, gen, iter, LogKind::SquashUndo {
                        kind: SquashKind::TargetBranch,
                    });
                }
                SquashKind::LoopEnd => {
                    let channel = match self.channel_of_end(ev.pc) {
                        Some(ch) => ch,
                        None => continue,
                    };
                    match self.channels[channel].end_flags.pop_back() {
                        Some(true) => match self.channels[channel].iter_stack.take() {
                            Some((iter, gen)) => {
                                let c = &mut self.channels[channel];
                                c.consumer_iter = iter;
                                c.consumer_gen = gen;
                            }
                            None => self.set_desync(channel, true),
                        },
                        Some(false) => {}
                        None => self.set_desync(channel, true),
                    }
                    // Back in sync once no overflowed loop-end is in flight.
                    if !self.channels[channel].end_flags.iter().any(|&p| !p) {
                        self.set_desync(channel, false);
                    }
                    let (gen, iter) = {
                        let c = &self.channels[channel];
                        (c.consumer_gen, c.consumer_iter)
                    };
                    self.record(channel, gen, iter, LogKind::SquashUndo {
                        kind: SquashKind::LoopEnd,
                    });
                }
            }
        }
    }

    /// Commit of an instruction on the architectural path. A target-branch
    /// commit removes its outcome entry; a loop-end commit advances the
    /// producer generation and discards whatever the ended generation left
    /// behind.
    pub fn notify_commit(&mut self, pc: usize) {
        if !self.enabled {
            return;
        }
        if let Some(channel) = self.channel_of_target(pc) {
            let (had, gen, iter) = {
                let c = &mut self.channels[channel];
                let slot = c.commit_iter as usize;
                let entry = &mut c.outcomes[slot];
                let had = entry.valid && entry.gen == c.producer_gen;
                if had {
                    entry.valid = false;
                }
                let at = c.commit_iter;
                c.commit_iter = c.commit_iter.wrapping_add(1);
                (had, c.producer_gen, at)
            };
            self.record(channel, gen, iter, LogKind::CommitConsume { had_entry: had });
        }
        if let Some(channel) = self.channel_of_end(pc) {
            match self.channels[channel].end_flags.pop_front() {
                Some(true) => self.channels[channel].iter_stack = None,
                _ => {}
            }
            let (count, old_gen) = {
                let c = &mut self.channels[channel];
                let stale = c.producer_gen;
                let mut count = 0u16;
                for entry in c.outcomes.iter_mut() {
                    if entry.valid && entry.gen == stale {
                        entry.valid = false;
                        count += 1;
                    }
                }
                c.producer_gen = !c.producer_gen;
                c.commit_iter = 0;
                (count, stale)
            };
            self.record(channel, old_gen, 0, LogKind::GenAdvance);
            self.record(channel, old_gen, 0, LogKind::Discard { count });
            if self.channels[channel].end_flags.is_empty() {
                self.set_desync(channel, false);
            }
        }
    }

    /// Pure snapshot for tests and the debug CLI.
    pub fn read_state(&self, channel: usize) -> Result<&ChannelState, BossError> {
        self.check_channel(channel)?;
        Ok(&self.channels[channel])
    }

    pub fn snapshot(&self, channel: usize) -> Result<ChannelState, BossError> {
        self.read_state(channel).cloned()
    }

    pub fn channels(&self) -> &[ChannelState] {
        &self.channels
    }

    /// Event log dump: one line per record, `time kind ch gen iter detail`.
    pub fn dump_log(&self) -> String {
        let mut out = String::new();
        for r in &self.log {
            let (kind, detail) = match &r.kind {
                LogKind::Open { targets, end_pc } => {
                    ("open", format!("targets={targets:?} end={end_pc}"))
                }
                LogKind::AddTarget { pc } => ("add_target", format!("pc={pc}")),
                LogKind::TargetsSaturated { pc } => ("targets_saturated", format!("pc={pc}")),
                LogKind::Close => ("close", String::new()),
                LogKind::Write { slot, taken } => {
                    ("write", format!("slot={slot} taken={}", *taken as u8))
                }
                LogKind::WriteIgnored { slot } => ("write_ignored", format!("slot={slot}")),
                LogKind::Hit { taken } => ("hit", format!("taken={}", *taken as u8)),
                LogKind::Miss => ("miss", String::new()),
                LogKind::EndFetch { pushed } => {
                    ("gen_advance", format!("side=consumer pushed={}", *pushed as u8))
                }
                LogKind::GenAdvance => ("gen_advance", "side=producer".to_string()),
                LogKind::Discard { count } => ("discard", format!("count={count}")),
                LogKind::CommitConsume { had_entry } => {
                    ("commit", format!("had_entry={}", *had_entry as u8))
                }
                LogKind::SquashUndo { kind } => (
                    "squash_undo",
                    match kind {
                        SquashKind::TargetBranch => "kind=branch".to_string(),
                        SquashKind::LoopEnd => "kind=end".to_string(),
                    },
                ),
                LogKind::Desync { on } => ("desync", format!("on={}", *on as u8)),
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.time, kind, r.channel, r.gen as u8, r.iter, detail
            );
        }
        out
    }
}

/// Hardware budget of the unit in bytes: the outcome store (outcome bit +
/// valid bit per entry), two pc tables of 8 bytes per channel entry, two
/// one-byte iteration tables per channel, and two one-bit generation tables
/// per channel rounded together to whole bytes.
pub fn storage_bytes(channels: u64, iterations: u64) -> Result<u64, BossError> {
    if channels == 0 || iterations == 0 {
        return Err(BossError::ZeroStorageDim);
    }
    let outcome_bytes = (2 * channels * iterations).div_ceil(8);
    let pc_tables = 2 * channels * 8;
    let iter_tables = 2 * channels;
    let gen_tables = (2 * channels).div_ceil(8);
    Ok(outcome_bytes + pc_tables + iter_tables + gen_tables)
}
