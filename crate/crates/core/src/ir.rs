//! Toy register-machine IR: instructions, flat programs, and the
//! memory-mapped channel address layout.
//!
//! Programs are a dense list of instructions indexed by instruction number
//! (the "pc"), a label table, an initial data-memory image, and the layout
//! of the hint-channel address range. Branch outcomes are communicated to
//! the modeled frontend through ordinary stores into that range, so no
//! dedicated opcodes exist for channel configuration or outcome writes.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Number of architectural registers.
pub const NUM_REGS: u8 = 32;

/// Legal lane counts for `VST`.
pub const VST_WIDTHS: [u8; 3] = [4, 8, 16];

/// Default base address of the channel MMIO range.
pub const DEFAULT_MMIO_BASE: u64 = 0xB055_0000;

/// Default number of channels.
pub const DEFAULT_CHANNELS: u32 = 4;

/// Byte stride between consecutive channel blocks.
pub const CHANNEL_STRIDE: u64 = 512;

/// Size of the per-channel configuration word, at offset 0 of the block.
pub const CONFIG_BYTES: u64 = 8;

/// Offset of the outcome region within a channel block.
pub const OUTCOME_OFFSET: u64 = 256;

/// Number of outcome slots per channel; slot indices rotate modulo this.
pub const OUTCOME_SLOTS: u16 = 256;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IrError {
    #[error("register index {0} out of range (0..{NUM_REGS})")]
    RegisterOutOfRange(u8),
    #[error("VST width {0} not one of {VST_WIDTHS:?}")]
    InvalidVstWidth(u8),
    #[error("VST lanes r{0}..r{1} exceed the register file")]
    VstLanesOutOfRange(u8, u16),
    #[error("branch at pc {pc} targets instruction {target}, program has {len}")]
    BranchTargetOutOfRange { pc: usize, target: usize, len: usize },
    #[error("entry pc {entry} out of range, program has {len}")]
    EntryOutOfRange { entry: usize, len: usize },
    #[error("label {0} maps to instruction {1} beyond program end")]
    LabelOutOfRange(String, usize),
    #[error("initial memory image overlaps the channel MMIO range at {0:#x}")]
    ImageOverlapsMmio(u64),
}

/// Register index 0..31.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Reg(u8);

impl Reg {
    pub fn new(index: u8) -> Result<Reg, IrError> {
        if index < NUM_REGS {
            Ok(Reg(index))
        } else {
            Err(IrError::RegisterOutOfRange(index))
        }
    }

    /// Panics if `index` is out of range; for statically known registers.
    pub const fn r(index: u8) -> Reg {
        assert!(index < NUM_REGS);
        Reg(index)
    }

    pub const fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

impl fmt::Debug for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// One flat instruction. Branch targets are resolved instruction indices.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Inst {
    Add { dst: Reg, lhs: Reg, rhs: Reg },
    Sub { dst: Reg, lhs: Reg, rhs: Reg },
    Mul { dst: Reg, lhs: Reg, rhs: Reg },
    Addi { dst: Reg, src: Reg, imm: i64 },
    Movi { dst: Reg, imm: i64 },
    Mov { dst: Reg, src: Reg },
    /// dst = (lhs == rhs) as 0/1
    CmpEq { dst: Reg, lhs: Reg, rhs: Reg },
    /// dst = (lhs <= rhs) as 0/1, signed
    CmpLe { dst: Reg, lhs: Reg, rhs: Reg },
    /// dst = (lhs >= rhs) as 0/1, signed
    CmpGe { dst: Reg, lhs: Reg, rhs: Reg },
    And { dst: Reg, lhs: Reg, rhs: Reg },
    Or { dst: Reg, lhs: Reg, rhs: Reg },
    /// 8-byte little-endian load from [base+offset].
    Ld { dst: Reg, base: Reg, offset: i64 },
    /// 8-byte little-endian store to [base+offset].
    St { src: Reg, base: Reg, offset: i64 },
    /// Vector byte store: the low byte of each of `width` consecutive
    /// registers starting at `lane0` goes to consecutive addresses.
    Vst { lane0: Reg, width: u8, base: Reg, offset: i64 },
    /// Branch to `target` when cond != 0.
    Bnz { cond: Reg, target: usize },
    /// Branch to `target` when cond == 0.
    Bz { cond: Reg, target: usize },
    Jmp { target: usize },
    Halt,
}

impl Inst {
    pub fn is_conditional_branch(&self) -> bool {
        matches!(self, Inst::Bnz { .. } | Inst::Bz { .. })
    }

    pub fn branch_target(&self) -> Option<usize> {
        match self {
            Inst::Bnz { target, .. } | Inst::Bz { target, .. } | Inst::Jmp { target } => {
                Some(*target)
            }
            _ => None,
        }
    }

    /// Register written by this instruction, if any.
    pub fn def(&self) -> Option<Reg> {
        match self {
            Inst::Add { dst, .. }
            | Inst::Sub { dst, .. }
            | Inst::Mul { dst, .. }
            | Inst::Addi { dst, .. }
            | Inst::Movi { dst, .. }
            | Inst::Mov { dst, .. }
            | Inst::CmpEq { dst, .. }
            | Inst::CmpLe { dst, .. }
            | Inst::CmpGe { dst, .. }
            | Inst::And { dst, .. }
            | Inst::Or { dst, .. }
            | Inst::Ld { dst, .. } => Some(*dst),
            _ => None,
        }
    }

    /// Registers read by this instruction.
    pub fn uses(&self) -> Vec<Reg> {
        match self {
            Inst::Add { lhs, rhs, .. }
            | Inst::Sub { lhs, rhs, .. }
            | Inst::Mul { lhs, rhs, .. }
            | Inst::CmpEq { lhs, rhs, .. }
            | Inst::CmpLe { lhs, rhs, .. }
            | Inst::CmpGe { lhs, rhs, .. }
            | Inst::And { lhs, rhs, .. }
            | Inst::Or { lhs, rhs, .. } => vec![*lhs, *rhs],
            Inst::Addi { src, .. } | Inst::Mov { src, .. } => vec![*src],
            Inst::Movi { .. } | Inst::Halt | Inst::Jmp { .. } => vec![],
            Inst::Ld { base, .. } => vec![*base],
            Inst::St { src, base, .. } => vec![*src, *base],
            Inst::Vst { lane0, width, base, .. } => {
                let mut regs: Vec<Reg> = (0..*width)
                    .map(|i| Reg(lane0.0 + i))
                    .collect();
                regs.push(*base);
                regs
            }
            Inst::Bnz { cond, .. } | Inst::Bz { cond, .. } => vec![*cond],
        }
    }

    pub fn validate(&self, pc: usize, len: usize) -> Result<(), IrError> {
        if let Inst::Vst { lane0, width, .. } = self {
            if !VST_WIDTHS.contains(width) {
                return Err(IrError::InvalidVstWidth(*width));
            }
            let last = lane0.0 as u16 + *width as u16;
            if last > NUM_REGS as u16 {
                return Err(IrError::VstLanesOutOfRange(lane0.0, last));
            }
        }
        if let Some(target) = self.branch_target() {
            if target >= len {
                return Err(IrError::BranchTargetOutOfRange { pc, target, len });
            }
        }
        Ok(())
    }
}

/// Decoded role of an address relative to a channel layout.
///
/// Every address decodes to exactly one variant: outside the range, the
/// 8-byte configuration word, an outcome slot, or the reserved gap between
/// the two regions of a channel block.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MmioRef {
    NotMmio,
    Config { channel: u32 },
    Outcome { channel: u32, slot: u8 },
    Reserved { channel: u32 },
}

/// Placement of the channel blocks in the address space.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct MmioLayout {
    pub base: u64,
    pub channels: u32,
}

impl Default for MmioLayout {
    fn default() -> Self {
        MmioLayout { base: DEFAULT_MMIO_BASE, channels: DEFAULT_CHANNELS }
    }
}

impl MmioLayout {
    pub fn with_base(base: u64) -> Self {
        MmioLayout { base, ..Default::default() }
    }

    /// End of the mapped range, exclusive.
    pub fn end(&self) -> u64 {
        self.base + self.channels as u64 * CHANNEL_STRIDE
    }

    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.base && addr < self.end()
    }

    pub fn config_addr(&self, channel: u32) -> u64 {
        self.base + channel as u64 * CHANNEL_STRIDE
    }

    pub fn outcome_addr(&self, channel: u32, slot: u8) -> u64 {
        self.base + channel as u64 * CHANNEL_STRIDE + OUTCOME_OFFSET + slot as u64
    }

    /// Map an address to its role. Slot indices are byte offsets within the
    /// outcome region; rotation of higher iteration numbers onto the same
    /// slots is the writer's job, not the decoder's.
    pub fn decode(&self, addr: u64) -> MmioRef {
        if !self.contains(addr) {
            return MmioRef::NotMmio;
        }
        let rel = addr - self.base;
        let channel = (rel / CHANNEL_STRIDE) as u32;
        let off = rel % CHANNEL_STRIDE;
        if off < CONFIG_BYTES {
            MmioRef::Config { channel }
        } else if off < OUTCOME_OFFSET {
            MmioRef::Reserved { channel }
        } else {
            MmioRef::Outcome { channel, slot: (off - OUTCOME_OFFSET) as u8 }
        }
    }
}

/// Pack a (target pc, end pc) pair into the 8-byte configuration word:
/// bytes 0-3 hold the target branch pc, bytes 4-7 the end pc.
pub fn pack_channel_config(target_pc: u32, end_pc: u32) -> u64 {
    target_pc as u64 | (end_pc as u64) << 32
}

/// Inverse of [`pack_channel_config`].
pub fn unpack_channel_config(word: u64) -> (u32, u32) {
    (word as u32, (word >> 32) as u32)
}

/// A flat executable program.
#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub insts: Vec<Inst>,
    /// Label name -> instruction index. All names referenced by the
    /// assembly source survive here so text round-trips.
    pub labels: BTreeMap<String, usize>,
    /// Initial data-memory image, byte granular.
    pub image: BTreeMap<u64, u8>,
    pub entry: usize,
    pub mmio: MmioLayout,
}

impl Program {
    pub fn new(insts: Vec<Inst>) -> Program {
        Program {
            insts,
            labels: BTreeMap::new(),
            image: BTreeMap::new(),
            entry: 0,
            mmio: MmioLayout::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.insts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.insts.is_empty()
    }

    pub fn pc_of(&self, label: &str) -> Option<usize> {
        self.labels.get(label).copied()
    }

    /// Check structural invariants: branch targets and entry in range,
    /// labels in range, image disjoint from the MMIO range.
    pub fn validate(&self) -> Result<(), IrError> {
        let len = self.insts.len();
        for (pc, inst) in self.insts.iter().enumerate() {
            inst.validate(pc, len)?;
        }
        if self.entry >= len && len > 0 {
            return Err(IrError::EntryOutOfRange { entry: self.entry, len });
        }
        for (name, &idx) in &self.labels {
            if idx > len {
                return Err(IrError::LabelOutOfRange(name.clone(), idx));
            }
        }
        for &addr in self.image.keys() {
            if self.mmio.contains(addr) {
                return Err(IrError::ImageOverlapsMmio(addr));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_partitions_every_address() {
        let layout = MmioLayout::default();
        // Walk the whole first two blocks plus the edges of the range.
        for addr in (layout.base - 8)..(layout.base + 2 * CHANNEL_STRIDE + 8) {
            let mut matched = 0;
            if let MmioRef::NotMmio = layout.decode(addr) {
                matched += 1;
            }
            if let MmioRef::Config { .. } = layout.decode(addr) {
                matched += 1;
            }
            if let MmioRef::Outcome { .. } = layout.decode(addr) {
                matched += 1;
            }
            if let MmioRef::Reserved { .. } = layout.decode(addr) {
                matched += 1;
            }
            assert_eq!(matched, 1, "addr {addr:#x}");
        }
        assert_eq!(layout.decode(layout.end()), MmioRef::NotMmio);
        assert_eq!(layout.decode(layout.end() - 1), MmioRef::Outcome {
            channel: DEFAULT_CHANNELS - 1,
            slot: 255,
        });
    }

    #[test]
    fn decode_examples() {
        let layout = MmioLayout::default();
        assert_eq!(layout.decode(layout.base), MmioRef::Config { channel: 0 });
        assert_eq!(
            layout.decode(layout.base + 512 + 256 + 4),
            MmioRef::Outcome { channel: 1, slot: 4 }
        );
        assert_eq!(layout.decode(layout.base + 8), MmioRef::Reserved { channel: 0 });
        assert_eq!(layout.decode(layout.base + 255), MmioRef::Reserved { channel: 0 });
        assert_eq!(layout.decode(0), MmioRef::NotMmio);
    }

    #[test]
    fn iteration_rotation_is_the_writers_job() {
        // Software writing iteration 260 targets slot 260 % 256 == 4.
        let layout = MmioLayout::default();
        let slot = (260u64 % OUTCOME_SLOTS as u64) as u8;
        assert_eq!(slot, 4);
        assert_eq!(
            layout.decode(layout.outcome_addr(0, slot)),
            MmioRef::Outcome { channel: 0, slot: 4 }
        );
    }

    #[test]
    fn config_word_packs_two_pcs() {
        let word = pack_channel_config(17, 25);
        assert_eq!(unpack_channel_config(word), (17, 25));
        assert_eq!(word & 0xffff_ffff, 17);
        assert_eq!(word >> 32, 25);
    }

    #[test]
    fn register_bounds() {
        assert!(Reg::new(31).is_ok());
        assert_eq!(Reg::new(32), Err(IrError::RegisterOutOfRange(32)));
    }

    #[test]
    fn validate_rejects_bad_targets_and_overlap() {
        let mut p = Program::new(vec![Inst::Jmp { target: 5 }, Inst::Halt]);
        assert!(matches!(p.validate(), Err(IrError::BranchTargetOutOfRange { .. })));
        p.insts[0] = Inst::Jmp { target: 1 };
        assert!(p.validate().is_ok());
        p.image.insert(p.mmio.base + 3, 1);
        assert!(matches!(p.validate(), Err(IrError::ImageOverlapsMmio(_))));
    }
}
