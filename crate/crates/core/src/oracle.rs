//! Architectural (non-speculative) interpreter producing the ground-truth
//! dynamic trace: committed path, branch outcomes, memory addresses.
//!
//! Stores into the channel MMIO range are recorded as events but never
//! touch data memory; they are hints consumed by the modeled hardware, and
//! dropping all of them must leave the architectural results unchanged.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::ir::{Inst, MmioRef, Program, NUM_REGS};

/// Default step limit bounding desk-scale runs.
pub const DEFAULT_STEP_LIMIT: u64 = 10_000_000;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum EventKind {
    Branch { taken: bool, conditional: bool },
    Load { addr: u64 },
    Store { addr: u64 },
    /// Committed store into a channel configuration word.
    BossConfigStore { channel: u32, value: u64 },
    /// Committed store into outcome slots. A vector store carries one
    /// event with `lanes` outcome bytes starting at `slot`.
    BossOutcomeStore { channel: u32, slot: u8, lanes: u8, bytes: [u8; 16] },
    Other,
}

/// One committed dynamic instruction.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct DynEvent {
    pub seq: u64,
    pub pc: usize,
    pub kind: EventKind,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Error)]
pub enum Fault {
    #[error("pc {pc}: access to undeclared memory at {addr:#x}")]
    UndeclaredMemory { pc: usize, addr: u64 },
    #[error("pc {pc}: store into reserved channel-block gap at {addr:#x}")]
    ReservedMmio { pc: usize, addr: u64 },
    #[error("pc {pc}: vector store straddles region boundary at {addr:#x}")]
    VstStraddlesRegions { pc: usize, addr: u64 },
    #[error("pc {pc} outside program text")]
    PcOutOfRange { pc: usize },
}

/// Ground-truth execution record.
#[derive(Clone, Debug)]
pub struct DynTrace {
    pub events: Vec<DynEvent>,
    pub final_regs: [i64; NUM_REGS as usize],
    /// Bytes whose final value differs from the initial image.
    pub final_mem_delta: BTreeMap<u64, u8>,
    pub halted: bool,
    /// Set when the step limit cut the run short.
    pub truncated: bool,
    pub fault: Option<Fault>,
}

impl DynTrace {
    pub fn instruction_count(&self) -> u64 {
        self.events.len() as u64
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProfileError {
    #[error("pc {0} is not a branch instruction")]
    NotABranch(usize),
}

/// Execute a program architecturally. Deterministic in (program, step_limit).
pub fn execute(program: &Program, step_limit: u64) -> DynTrace {
    let mut regs = [0i64; NUM_REGS as usize];
    let mut mem = program.image.clone();
    let mut events = Vec::new();
    let mut pc = program.entry;
    let mut halted = false;
    let mut truncated = false;
    let mut fault = None;
    let mut seq = 0u64;

    let load8 = |mem: &BTreeMap<u64, u8>, addr: u64| -> Option<i64> {
        let mut bytes = [0u8; 8];
        for (i, b) in bytes.iter_mut().enumerate() {
            *b = *mem.get(&(addr + i as u64))?;
        }
        Some(i64::from_le_bytes(bytes))
    };

    while seq < step_limit {
        if pc >= program.insts.len() {
            fault = Some(Fault::PcOutOfRange { pc });
            break;
        }
        let inst = program.insts[pc];
        let mut next = pc + 1;
        let mut kind = EventKind::Other;
        match inst {
            Inst::Add { dst, lhs, rhs } => {
                regs[dst.index()] = regs[lhs.index()].wrapping_add(regs[rhs.index()]);
            }
            Inst::Sub { dst, lhs, rhs } => {
                regs[dst.index()] = regs[lhs.index()].wrapping_sub(regs[rhs.index()]);
            }
            Inst::Mul { dst, lhs, rhs } => {
                regs[dst.index()] = regs[lhs.index()].wrapping_mul(regs[rhs.index()]);
            }
            Inst::Addi { dst, src, imm } => {
                regs[dst.index()] = regs[src.index()].wrapping_add(imm);
            }
            Inst::Movi { dst, imm } => regs[dst.index()] = imm,
            Inst::Mov { dst, src } => regs[dst.index()] = regs[src.index()],
            Inst::CmpEq { dst, lhs, rhs } => {
                regs[dst.index()] = (regs[lhs.index()] == regs[rhs.index()]) as i64;
            }
            Inst::CmpLe { dst, lhs, rhs } => {
                regs[dst.index()] = (regs[lhs.index()] <= regs[rhs.index()]) as i64;
            }
            Inst::CmpGe { dst, lhs, rhs } => {
                regs[dst.index()] = (regs[lhs.index()] >= regs[rhs.index()]) as i64;
            }
            Inst::And { dst, lhs, rhs } => {
                regs[dst.index()] = regs[lhs.index()] & regs[rhs.index()];
            }
            Inst::Or { dst, lhs, rhs } => {
                regs[dst.index()] = regs[lhs.index()] | regs[rhs.index()];
            }
            Inst::Ld { dst, base, offset } => {
                let addr = (regs[base.index()].wrapping_add(offset)) as u64;
                if program.mmio.contains(addr) {
                    // Channel read-back is not modeled; loads see zero.
                    regs[dst.index()] = 0;
                    kind = EventKind::Load { addr };
                } else {
                    match load8(&mem, addr) {
                        Some(v) => {
                            regs[dst.index()] = v;
                            kind = EventKind::Load { addr };
                        }
                        None => {
                            fault = Some(Fault::UndeclaredMemory { pc, addr });
                            break;
                        }
                    }
                }
            }
            Inst::St { src, base, offset } => {
                let addr = (regs[base.index()].wrapping_add(offset)) as u64;
                match program.mmio.decode(addr) {
                    MmioRef::NotMmio => {
                        let value = regs[src.index()];
                        if (0..8).any(|i| !mem.contains_key(&(addr + i))) {
                            fault = Some(Fault::UndeclaredMemory { pc, addr });
                            break;
                        }
                        for (i, b) in value.to_le_bytes().iter().enumerate() {
                            mem.insert(addr + i as u64, *b);
                        }
                        kind = EventKind::Store { addr };
                    }
                    MmioRef::Config { channel } => {
                        kind = EventKind::BossConfigStore {
                            channel,
                            value: regs[src.index()] as u64,
                        };
                    }
                    MmioRef::Outcome { channel, slot } => {
                        let mut bytes = [0u8; 16];
                        bytes[0] = regs[src.index()] as u8;
                        kind = EventKind::BossOutcomeStore { channel, slot, lanes: 1, bytes };
                    }
                    MmioRef::Reserved { .. } => {
                        fault = Some(Fault::ReservedMmio { pc, addr });
                        break;
                    }
                }
            }
            Inst::Vst { lane0, width, base, offset } => {
                let addr = (regs[base.index()].wrapping_add(offset)) as u64;
                let first = program.mmio.decode(addr);
                let last = program.mmio.decode(addr + width as u64 - 1);
                match (first, last) {
                    (MmioRef::NotMmio, MmioRef::NotMmio) => {
                        if (0..width as u64).any(|i| !mem.contains_key(&(addr + i))) {
                            fault = Some(Fault::UndeclaredMemory { pc, addr });
                            break;
                        }
                        for i in 0..width {
                            let v = regs[lane0.index() + i as usize] as u8;
                            mem.insert(addr + i as u64, v);
                        }
                        kind = EventKind::Store { addr };
                    }
                    (
                        MmioRef::Outcome { channel, slot },
                        MmioRef::Outcome { channel: c2, .. },
                    ) if channel == c2 => {
                        let mut bytes = [0u8; 16];
                        for i in 0..width {
                            bytes[i as usize] = regs[lane0.index() + i as usize] as u8;
                        }
                        kind = EventKind::BossOutcomeStore { channel, slot, lanes: width, bytes };
                    }
                    _ => {
                        fault = Some(Fault::VstStraddlesRegions { pc, addr });
                        break;
                    }
                }
            }
            Inst::Bnz { cond, target } => {
                let taken = regs[cond.index()] != 0;
                if taken {
                    next = target;
                }
                kind = EventKind::Branch { taken, conditional: true };
            }
            Inst::Bz { cond, target } => {
                let taken = regs[cond.index()] == 0;
                if taken {
                    next = target;
                }
                kind = EventKind::Branch { taken, conditional: true };
            }
            Inst::Jmp { target } => {
                next = target;
                kind = EventKind::Branch { taken: true, conditional: false };
            }
            Inst::Halt => {
                halted = true;
            }
        }
        events.push(DynEvent { seq, pc, kind });
        seq += 1;
        if halted {
            break;
        }
        pc = next;
    }
    if !halted && fault.is_none() && seq >= step_limit {
        truncated = true;
    }

    let mut delta = BTreeMap::new();
    for (&addr, &byte) in &mem {
        if program.image.get(&addr) != Some(&byte) {
            delta.insert(addr, byte);
        }
    }
    DynTrace { events, final_regs: regs, final_mem_delta: delta, halted, truncated, fault }
}

/// Ordered outcomes of every dynamic instance of the branch at `pc`.
pub fn branch_profile(trace: &DynTrace, pc: usize) -> Result<Vec<bool>, ProfileError> {
    let mut outcomes = Vec::new();
    for ev in &trace.events {
        if ev.pc != pc {
            continue;
        }
        match ev.kind {
            EventKind::Branch { taken, .. } => outcomes.push(taken),
            _ => return Err(ProfileError::NotABranch(pc)),
        }
    }
    Ok(outcomes)
}

/// Restriction of a trace to non-channel events, for hint-safety checks.
pub fn non_boss_events(trace: &DynTrace) -> Vec<DynEvent> {
    trace
        .events
        .iter()
        .filter(|e| {
            !matches!(
                e.kind,
                EventKind::BossConfigStore { .. } | EventKind::BossOutcomeStore { .. }
            )
        })
        .cloned()
        .collect()
}

/// Tab-separated dump, one event per line: `seq pc kind addr outcome`.
pub fn dump_trace(trace: &DynTrace) -> String {
    let mut out = String::new();
    for ev in &trace.events {
        let (kind, addr, outcome) = match ev.kind {
            EventKind::Branch { taken, .. } => {
                ("branch".to_string(), "-".to_string(), if taken { "T" } else { "N" }.to_string())
            }
            EventKind::Load { addr } => ("load".to_string(), format!("{addr:#x}"), "-".to_string()),
            EventKind::Store { addr } => ("store".to_string(), format!("{addr:#x}"), "-".to_string()),
            EventKind::BossConfigStore { channel, value } => (
                "boss_config_store".to_string(),
                format!("ch{channel}"),
                format!("{value:#x}"),
            ),
            EventKind::BossOutcomeStore { channel, slot, lanes, bytes } => {
                let vals: Vec<String> =
                    bytes[..lanes as usize].iter().map(|b| b.to_string()).collect();
                (
                    "boss_outcome_store".to_string(),
                    format!("ch{channel}+{slot}"),
                    vals.join(","),
                )
            }
            EventKind::Other => ("other".to_string(), "-".to_string(), "-".to_string()),
        };
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", ev.seq, ev.pc, kind, addr, outcome);
    }
    out
}
