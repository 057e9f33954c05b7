//! Baseline history-based branch predictors: the fallback side of the
//! prediction mux when no channel outcome is available.
//!
//! Three schemes plus a degenerate static one. `predict` never mutates
//! state; `update` applies the outcome, shifts global history, and (for the
//! tagged scheme) runs allocation. All state is deterministic given the
//! configuration seed.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Geometric history lengths of the tagged tables.
pub const TAGE_HISTORIES: [usize; 4] = [5, 15, 44, 130];
pub const TAGE_TAG_BITS: u32 = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PredictorError {
    #[error("{what} size {got} is not a power of two")]
    NonPowerOfTwo { what: &'static str, got: usize },
    #[error("unknown predictor `{0}`")]
    UnknownKind(String),
}

/// Construction-time choice of scheme and sizes.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum PredictorConfig {
    AlwaysTaken,
    Bimodal { entries: usize },
    Gshare { entries: usize, history_bits: u32 },
    TageLite { base_entries: usize, tagged_entries: usize, seed: u64 },
}

impl PredictorConfig {
    pub const DEFAULT_BIMODAL: PredictorConfig = PredictorConfig::Bimodal { entries: 4096 };
    pub const DEFAULT_GSHARE: PredictorConfig =
        PredictorConfig::Gshare { entries: 4096, history_bits: 12 };
    pub const DEFAULT_TAGE: PredictorConfig =
        PredictorConfig::TageLite { base_entries: 2048, tagged_entries: 512, seed: 0 };

    pub fn name(&self) -> &'static str {
        match self {
            PredictorConfig::AlwaysTaken => "always-taken",
            PredictorConfig::Bimodal { .. } => "bimodal",
            PredictorConfig::Gshare { .. } => "gshare",
            PredictorConfig::TageLite { .. } => "tage",
        }
    }
}

impl FromStr for PredictorConfig {
    type Err = PredictorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "always-taken" | "always_taken" => Ok(PredictorConfig::AlwaysTaken),
            "bimodal" => Ok(PredictorConfig::DEFAULT_BIMODAL),
            "gshare" => Ok(PredictorConfig::DEFAULT_GSHARE),
            "tage" | "tage-lite" => Ok(PredictorConfig::DEFAULT_TAGE),
            other => Err(PredictorError::UnknownKind(other.to_string())),
        }
    }
}

/// Build a deterministically initialized predictor: weakly not-taken
/// counters, zero histories. The seed only breaks allocation ties in the
/// tagged scheme.
pub fn make_predictor(config: PredictorConfig) -> Result<Predictor, PredictorError> {
    let pow2 = |what: &'static str, n: usize| -> Result<(), PredictorError> {
        if n.is_power_of_two() {
            Ok(())
        } else {
            Err(PredictorError::NonPowerOfTwo { what, got: n })
        }
    };
    let p = match config {
        PredictorConfig::AlwaysTaken => Predictor::AlwaysTaken,
        PredictorConfig::Bimodal { entries } => {
            pow2("bimodal table", entries)?;
            Predictor::Bimodal(Bimodal { counters: vec![WEAK_NOT_TAKEN; entries] })
        }
        PredictorConfig::Gshare { entries, history_bits } => {
            pow2("gshare table", entries)?;
            Predictor::Gshare(Gshare {
                counters: vec![WEAK_NOT_TAKEN; entries],
                history_bits,
                ghr: 0,
            })
        }
        PredictorConfig::TageLite { base_entries, tagged_entries, seed } => {
            pow2("tage base table", base_entries)?;
            pow2("tage tagged table", tagged_entries)?;
            Predictor::TageLite(TageLite {
                base: vec![WEAK_NOT_TAKEN; base_entries],
                tables: (0..TAGE_HISTORIES.len())
                    .map(|_| vec![TaggedEntry::default(); tagged_entries])
                    .collect(),
                hist: BitHistory::default(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            })
        }
    };
    Ok(p)
}

const WEAK_NOT_TAKEN: u8 = 1;

fn bump2(c: u8, taken: bool) -> u8 {
    if taken {
        (c + 1).min(3)
    } else {
        c.saturating_sub(1)
    }
}

#[derive(Clone, Debug)]
pub struct Bimodal {
    counters: Vec<u8>,
}

impl Bimodal {
    fn index(&self, pc: usize) -> usize {
        pc & (self.counters.len() - 1)
    }
}

#[derive(Clone, Debug)]
pub struct Gshare {
    counters: Vec<u8>,
    history_bits: u32,
    ghr: u64,
}

impl Gshare {
    fn index(&self, pc: usize) -> usize {
        let mask = self.counters.len() as u64 - 1;
        let hist_mask = (1u64 << self.history_bits) - 1;
        ((pc as u64 ^ (self.ghr & hist_mask)) & mask) as usize
    }
}

/// Global history long enough for the largest tagged table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BitHistory {
    words: [u64; 3],
}

impl BitHistory {
    fn shift_in(&mut self, bit: bool) {
        self.words[2] = (self.words[2] << 1) | (self.words[1] >> 63);
        self.words[1] = (self.words[1] << 1) | (self.words[0] >> 63);
        self.words[0] = (self.words[0] << 1) | bit as u64;
    }

    fn bit(&self, i: usize) -> u64 {
        (self.words[i / 64] >> (i % 64)) & 1
    }

    /// XOR-fold the most recent `len` bits into `width` bits.
    fn fold(&self, len: usize, width: u32) -> u64 {
        let mut acc = 0u64;
        for i in 0..len {
            acc ^= self.bit(i) << (i as u32 % width);
        }
        acc
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct TaggedEntry {
    valid: bool,
    tag: u16,
    /// 3-bit counter; taken when >= 4.
    ctr: u8,
    /// 2-bit usefulness.
    useful: u8,
}

#[derive(Clone, Debug)]
pub struct TageLite {
    base: Vec<u8>,
    tables: Vec<Vec<TaggedEntry>>,
    hist: BitHistory,
    rng: ChaCha8Rng,
}

impl TageLite {
    fn index(&self, table: usize, pc: usize) -> usize {
        let mask = self.tables[table].len() - 1;
        let folded = self.hist.fold(TAGE_HISTORIES[table], mask.trailing_ones().max(1));
        (pc ^ (pc >> 3) ^ folded as usize) & mask
    }

    fn tag(&self, table: usize, pc: usize) -> u16 {
        let f0 = self.hist.fold(TAGE_HISTORIES[table], TAGE_TAG_BITS);
        let f1 = self.hist.fold(TAGE_HISTORIES[table], TAGE_TAG_BITS - 1) << 1;
        ((pc as u64 ^ f0 ^ f1) & ((1 << TAGE_TAG_BITS) - 1)) as u16
    }

    /// Longest-history matching table, if any.
    fn provider(&self, pc: usize) -> Option<usize> {
        (0..self.tables.len()).rev().find(|&t| {
            let e = &self.tables[t][self.index(t, pc)];
            e.valid && e.tag == self.tag(t, pc)
        })
    }

    fn base_predict(&self, pc: usize) -> bool {
        self.base[pc & (self.base.len() - 1)] >= 2
    }

    fn table_predict(&self, table: usize, pc: usize) -> bool {
        self.tables[table][self.index(table, pc)].ctr >= 4
    }

    fn predict(&self, pc: usize) -> bool {
        match self.provider(pc) {
            Some(t) => self.table_predict(t, pc),
            None => self.base_predict(pc),
        }
    }

    fn update(&mut self, pc: usize, taken: bool) {
        let provider = self.provider(pc);
        let prediction = match provider {
            Some(t) => self.table_predict(t, pc),
            None => self.base_predict(pc),
        };
        let altpred = match provider {
            Some(t) => match (0..t).rev().find(|&u| {
                let e = &self.tables[u][self.index(u, pc)];
                e.valid && e.tag == self.tag(u, pc)
            }) {
                Some(u) => self.table_predict(u, pc),
                None => self.base_predict(pc),
            },
            None => self.base_predict(pc),
        };

        match provider {
            Some(t) => {
                let idx = self.index(t, pc);
                let e = &mut self.tables[t][idx];
                e.ctr = if taken { (e.ctr + 1).min(7) } else { e.ctr.saturating_sub(1) };
                if prediction != altpred {
                    e.useful = if prediction == taken {
                        (e.useful + 1).min(3)
                    } else {
                        e.useful.saturating_sub(1)
                    };
                }
            }
            None => {
                let idx = pc & (self.base.len() - 1);
                self.base[idx] = bump2(self.base[idx], taken);
            }
        }

        // Allocate a longer-history entry on a misprediction.
        if prediction != taken {
            let first_candidate = provider.map(|t| t + 1).unwrap_or(0);
            if first_candidate < self.tables.len() {
                let free: Vec<usize> = (first_candidate..self.tables.len())
                    .filter(|&t| self.tables[t][self.index(t, pc)].useful == 0)
                    .collect();
                if free.is_empty() {
                    for t in first_candidate..self.tables.len() {
                        let idx = self.index(t, pc);
                        let e = &mut self.tables[t][idx];
                        e.useful = e.useful.saturating_sub(1);
                    }
                } else {
                    let pick = free[self.rng.gen_range(0..free.len())];
                    let idx = self.index(pick, pc);
                    let tag = self.tag(pick, pc);
                    self.tables[pick][idx] = TaggedEntry {
                        valid: true,
                        tag,
                        ctr: if taken { 4 } else { 3 },
                        useful: 0,
                    };
                }
            }
        }

        self.hist.shift_in(taken);
    }
}

/// One predictor instance. Confined to a single simulation.
#[derive(Clone, Debug)]
pub enum Predictor {
    AlwaysTaken,
    Bimodal(Bimodal),
    Gshare(Gshare),
    TageLite(TageLite),
}

impl Predictor {
    /// Deterministic function of (state, pc); no state change.
    pub fn predict(&self, pc: usize) -> bool {
        match self {
            Predictor::AlwaysTaken => true,
            Predictor::Bimodal(b) => b.counters[b.index(pc)] >= 2,
            Predictor::Gshare(g) => g.counters[g.index(pc)] >= 2,
            Predictor::TageLite(t) => t.predict(pc),
        }
    }

    /// Train with the resolved outcome and shift global history.
    pub fn update(&mut self, pc: usize, taken: bool) {
        match self {
            Predictor::AlwaysTaken => {}
            Predictor::Bimodal(b) => {
                let idx = b.index(pc);
                b.counters[idx] = bump2(b.counters[idx], taken);
            }
            Predictor::Gshare(g) => {
                let idx = g.index(pc);
                g.counters[idx] = bump2(g.counters[idx], taken);
                g.ghr = (g.ghr << 1) | taken as u64;
            }
            Predictor::TageLite(t) => t.update(pc, taken),
        }
    }

    /// Zero the global history; diagnostic hook for table-level tests.
    pub fn clear_history(&mut self) {
        match self {
            Predictor::AlwaysTaken | Predictor::Bimodal(_) => {}
            Predictor::Gshare(g) => g.ghr = 0,
            Predictor::TageLite(t) => t.hist = BitHistory::default(),
        }
    }
}
