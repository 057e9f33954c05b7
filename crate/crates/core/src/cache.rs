//! Set-associative LRU cache hierarchy used to time load resolution.
//!
//! A lookup probes L1, then L2, then memory, accumulating each level's
//! latency; misses fill every level on the way back so repeated touches of
//! a line cost only the L1 hit latency.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AccessKind {
    Instruction,
    Data,
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct CacheLevelConfig {
    pub size_bytes: usize,
    pub ways: usize,
    pub line_bytes: usize,
    pub hit_latency: u64,
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct CacheConfig {
    pub l1i: CacheLevelConfig,
    pub l1d: CacheLevelConfig,
    pub l2: CacheLevelConfig,
    pub memory_latency: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            l1i: CacheLevelConfig { size_bytes: 32 * 1024, ways: 2, line_bytes: 64, hit_latency: 2 },
            l1d: CacheLevelConfig { size_bytes: 64 * 1024, ways: 4, line_bytes: 64, hit_latency: 2 },
            l2: CacheLevelConfig {
                size_bytes: 2 * 1024 * 1024,
                ways: 8,
                line_bytes: 64,
                hit_latency: 20,
            },
            memory_latency: 150,
        }
    }
}

#[derive(Clone, Copy, Default, Debug)]
struct Line {
    tag: u64,
    valid: bool,
    last_used: u64,
}

#[derive(Clone, Debug)]
struct Level {
    sets: Vec<Vec<Line>>,
    line_bytes: usize,
    hit_latency: u64,
    tick: u64,
}

impl Level {
    fn new(cfg: CacheLevelConfig) -> Level {
        let num_sets = (cfg.size_bytes / cfg.line_bytes / cfg.ways).max(1);
        Level {
            sets: vec![vec![Line::default(); cfg.ways]; num_sets],
            line_bytes: cfg.line_bytes,
            hit_latency: cfg.hit_latency,
            tick: 0,
        }
    }

    fn set_and_tag(&self, addr: u64) -> (usize, u64) {
        let line = addr / self.line_bytes as u64;
        ((line as usize) % self.sets.len(), line / self.sets.len() as u64)
    }

    fn probe(&mut self, addr: u64) -> bool {
        self.tick += 1;
        let (set, tag) = self.set_and_tag(addr);
        for line in &mut self.sets[set] {
            if line.valid && line.tag == tag {
                line.last_used = self.tick;
                return true;
            }
        }
        false
    }

    fn fill(&mut self, addr: u64) {
        let (set, tag) = self.set_and_tag(addr);
        let ways = &mut self.sets[set];
        let victim = ways
            .iter()
            .position(|l| !l.valid)
            .unwrap_or_else(|| {
                ways.iter()
                    .enumerate()
                    .min_by_key(|(_, l)| l.last_used)
                    .map(|(i, _)| i)
                    .unwrap()
            });
        ways[victim] = Line { tag, valid: true, last_used: self.tick };
    }
}

#[derive(Clone, Debug)]
pub struct CacheModel {
    l1i: Level,
    l1d: Level,
    l2: Level,
    memory_latency: u64,
}

impl CacheModel {
    pub fn new(cfg: CacheConfig) -> CacheModel {
        CacheModel {
            l1i: Level::new(cfg.l1i),
            l1d: Level::new(cfg.l1d),
            l2: Level::new(cfg.l2),
            memory_latency: cfg.memory_latency,
        }
    }

    /// Total latency of one access, filling on the way back.
    pub fn access(&mut self, addr: u64, kind: AccessKind) -> u64 {
        let l1 = match kind {
            AccessKind::Instruction => &mut self.l1i,
            AccessKind::Data => &mut self.l1d,
        };
        let mut latency = l1.hit_latency;
        if l1.probe(addr) {
            return latency;
        }
        latency += self.l2.hit_latency;
        if self.l2.probe(addr) {
            l1.fill(addr);
            return latency;
        }
        latency += self.memory_latency;
        self.l2.fill(addr);
        let l1 = match kind {
            AccessKind::Instruction => &mut self.l1i,
            AccessKind::Data => &mut self.l1d,
        };
        l1.fill(addr);
        latency
    }
}
