//! Backslice extraction: the chain of instructions feeding a designated
//! target branch, traced backward to the loop induction variable and
//! loop-invariant live-ins, plus the legality analysis that decides whether
//! pre-executing that chain is safe.
//!
//! Legality is a conservative address-interval analysis: every register is
//! resolved to a constant, an affine range of the induction variable, or
//! unknown. A slice load that may overlap any data store in the loop body
//! (unknown counts as overlap) rejects the transform. Stores into the
//! channel MMIO range are hints and never count.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::asm::SymInst;
use crate::ir::Reg;
use crate::structured::{BodyItem, Operand, StructuredLoop, StructuredProgram};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SliceError {
    #[error("loop is not canonically counted: {0}")]
    NotCanonical(String),
    #[error("no branch labeled `{0}` in the loop body")]
    NoSuchTarget(String),
    #[error("label `{0}` is not bound to a conditional branch")]
    TargetNotConditional(String),
    #[error("target branch is nested under loop control flow: {0}")]
    NestedTargetBranch(String),
    #[error("loop-carried dependence: {0}")]
    LoopCarriedDependence(String),
    #[error("live-in {0} is defined after the desired placement point")]
    SliceEscapesLoop(Reg),
    #[error("unsupported slice shape: {0}")]
    Unsupported(String),
}

/// Canonical induction descriptor of a counted loop.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct InductionInfo {
    pub register: Reg,
    pub start: Operand,
    pub end: Operand,
    pub step: i64,
}

/// All registers defined anywhere in the item tree (loop inductions
/// included).
pub fn defs_in_items(items: &[BodyItem], out: &mut Vec<Reg>) {
    for item in items {
        match item {
            BodyItem::Inst(i) => {
                if let Some(d) = i.def() {
                    out.push(d);
                }
            }
            BodyItem::Label(_) => {}
            BodyItem::Loop(l) => {
                out.push(l.induction);
                defs_in_items(&l.body, out);
            }
        }
    }
}

/// Validate and return the loop's induction descriptor. The induction
/// register must be written only by the loop's own step update, and the
/// bound operands must be loop-invariant.
pub fn find_induction(l: &StructuredLoop) -> Result<InductionInfo, SliceError> {
    if l.step == 0 {
        return Err(SliceError::NotCanonical("step is zero".into()));
    }
    let mut defs = Vec::new();
    defs_in_items(&l.body, &mut defs);
    if defs.contains(&l.induction) {
        return Err(SliceError::NotCanonical(format!(
            "induction register {} is written inside the body",
            l.induction
        )));
    }
    for op in [l.start, l.end] {
        if let Operand::Reg(r) = op {
            if defs.contains(&r) {
                return Err(SliceError::NotCanonical(format!(
                    "bound register {r} is written inside the body"
                )));
            }
        }
    }
    Ok(InductionInfo { register: l.induction, start: l.start, end: l.end, step: l.step })
}

/// The dataflow-closed instruction chain feeding the target branch.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Backslice {
    /// Body item indices of the slice instructions, in body order.
    pub item_indices: Vec<usize>,
    /// The slice instructions themselves, in body order.
    pub insts: Vec<SymInst>,
    /// Live-in registers other than the induction register.
    pub live_ins: Vec<Reg>,
    /// Positions within `insts` that are loads.
    pub load_positions: Vec<usize>,
    /// Register tested by the target branch.
    pub cond_reg: Reg,
    /// True when the target is a `BZ`: it takes when the condition is
    /// zero, so a stored outcome byte is the inverted condition.
    pub branch_is_bz: bool,
    /// Body item index of the target branch.
    pub target_index: usize,
}

// ---- interval analysis ----------------------------------------------------

/// Value interval of a register: [lo, hi] or unknown.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Interval {
    Range(i64, i64),
    Top,
}

impl Interval {
    fn point(v: i64) -> Interval {
        Interval::Range(v, v)
    }

    fn add(self, other: Interval) -> Interval {
        match (self, other) {
            (Interval::Range(a, b), Interval::Range(c, d)) => {
                Interval::Range(a.saturating_add(c), b.saturating_add(d))
            }
            _ => Interval::Top,
        }
    }

    fn mul(self, other: Interval) -> Interval {
        match (self, other) {
            (Interval::Range(a, b), Interval::Range(c, d)) => {
                let products = [
                    a.saturating_mul(c),
                    a.saturating_mul(d),
                    b.saturating_mul(c),
                    b.saturating_mul(d),
                ];
                Interval::Range(
                    *products.iter().min().unwrap(),
                    *products.iter().max().unwrap(),
                )
            }
            _ => Interval::Top,
        }
    }

    fn overlaps(self, other: Interval) -> bool {
        match (self, other) {
            (Interval::Range(a, b), Interval::Range(c, d)) => a <= d && c <= b,
            _ => true,
        }
    }
}

/// Constants established by single-definition registers anywhere in the
/// program: the usual setup pattern of materializing array bases once.
pub fn constant_env(sp: &StructuredProgram) -> BTreeMap<Reg, i64> {
    fn collect<'a>(items: &'a [BodyItem], defs: &mut BTreeMap<Reg, Vec<&'a SymInst>>) {
        for item in items {
            match item {
                BodyItem::Inst(i) => {
                    if let Some(d) = i.def() {
                        defs.entry(d).or_default().push(i);
                    }
                }
                BodyItem::Label(_) => {}
                BodyItem::Loop(l) => {
                    // Induction registers are multiply-defined by nature.
                    defs.entry(l.induction).or_default().push(&SymInst::Halt);
                    collect(&l.body, defs);
                }
            }
        }
    }
    let mut defs: BTreeMap<Reg, Vec<&SymInst>> = BTreeMap::new();
    collect(&sp.items, &mut defs);
    let mut env: BTreeMap<Reg, i64> = BTreeMap::new();
    // Iterate to a fixpoint so constants can feed each other.
    loop {
        let mut changed = false;
        for (reg, reg_defs) in &defs {
            if env.contains_key(reg) || reg_defs.len() != 1 {
                continue;
            }
            let value = match reg_defs[0] {
                SymInst::Movi { imm: crate::asm::SymImm::Int(v), .. } => Some(*v),
                SymInst::Addi { src, imm, .. } => env.get(src).map(|v| v.wrapping_add(*imm)),
                SymInst::Mov { src, .. } => env.get(src).copied(),
                SymInst::Add { lhs, rhs, .. } => {
                    env.get(lhs).and_then(|a| env.get(rhs).map(|b| a.wrapping_add(*b)))
                }
                SymInst::Mul { lhs, rhs, .. } => {
                    env.get(lhs).and_then(|a| env.get(rhs).map(|b| a.wrapping_mul(*b)))
                }
                _ => None,
            };
            if let Some(v) = value {
                env.insert(*reg, v);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    env
}

struct IntervalCtx<'a> {
    body: &'a [BodyItem],
    consts: &'a BTreeMap<Reg, i64>,
    induction: Reg,
    induction_range: Interval,
}

impl IntervalCtx<'_> {
    /// Interval of `reg` as observed by the body item at `use_pos`,
    /// resolved through its reaching definition.
    fn reg_interval_at(&self, reg: Reg, use_pos: usize, depth: usize) -> Interval {
        if reg == self.induction {
            return self.induction_range;
        }
        if depth == 0 {
            return Interval::Top;
        }
        // Last definition before the use, scanning backward. A nested loop
        // that writes the register makes it untraceable.
        for j in (0..use_pos).rev() {
            match &self.body[j] {
                BodyItem::Label(_) => continue,
                BodyItem::Loop(l) => {
                    let mut defs = vec![l.induction];
                    defs_in_items(&l.body, &mut defs);
                    if defs.contains(&reg) {
                        return Interval::Top;
                    }
                }
                BodyItem::Inst(inst) => {
                    if inst.def() != Some(reg) {
                        continue;
                    }
                    return match inst {
                        SymInst::Movi { imm: crate::asm::SymImm::Int(v), .. } => {
                            Interval::point(*v)
                        }
                        SymInst::Mov { src, .. } => self.reg_interval_at(*src, j, depth - 1),
                        SymInst::Addi { src, imm, .. } => self
                            .reg_interval_at(*src, j, depth - 1)
                            .add(Interval::point(*imm)),
                        SymInst::Add { lhs, rhs, .. } => self
                            .reg_interval_at(*lhs, j, depth - 1)
                            .add(self.reg_interval_at(*rhs, j, depth - 1)),
                        SymInst::Mul { lhs, rhs, .. } => self
                            .reg_interval_at(*lhs, j, depth - 1)
                            .mul(self.reg_interval_at(*rhs, j, depth - 1)),
                        _ => Interval::Top,
                    };
                }
            }
        }
        // Written later in the body: the value reaches here around the back
        // edge on iterations past the first, while the first iteration sees
        // whatever preceded the loop. Untraceable.
        let mut body_defs = Vec::new();
        defs_in_items(self.body, &mut body_defs);
        if body_defs.contains(&reg) {
            return Interval::Top;
        }
        // A loop-invariant input.
        match self.consts.get(&reg) {
            Some(&c) => Interval::point(c),
            None => Interval::Top,
        }
    }

    /// Byte interval touched by a memory operand of `width` bytes at body
    /// position `pos`.
    fn addr_interval(&self, base: Reg, offset: i64, width: i64, pos: usize) -> Interval {
        self.reg_interval_at(base, pos, 8)
            .add(Interval::point(offset))
            .add(Interval::Range(0, width - 1))
    }
}

fn induction_range(info: &InductionInfo) -> Interval {
    match (info.start, info.end) {
        (Operand::Const(s), Operand::Const(e)) => {
            if info.step > 0 && e > s {
                Interval::Range(s, e - 1)
            } else if info.step < 0 && e < s {
                Interval::Range(e + 1, s)
            } else {
                Interval::Range(s, s)
            }
        }
        _ => Interval::Top,
    }
}

fn label_positions(body: &[BodyItem]) -> BTreeMap<&str, usize> {
    body.iter()
        .enumerate()
        .filter_map(|(i, item)| match item {
            BodyItem::Label(name) => Some((name.as_str(), i)),
            _ => None,
        })
        .collect()
}

/// Extract the minimal dataflow-closed slice feeding the branch labeled
/// `target_label` in `l`'s body, rejecting shapes that cannot be legally
/// pre-executed.
pub fn extract_backslice(
    sp: &StructuredProgram,
    l: &StructuredLoop,
    target_label: &str,
) -> Result<Backslice, SliceError> {
    let induction = find_induction(l)?;
    let labels = label_positions(&l.body);
    let target_index = *labels
        .get(target_label)
        .ok_or_else(|| SliceError::NoSuchTarget(target_label.to_string()))?
        + 1;
    let (cond_reg, branch_is_bz) = match l.body.get(target_index) {
        Some(BodyItem::Inst(SymInst::Bnz { cond, .. })) => (*cond, false),
        Some(BodyItem::Inst(SymInst::Bz { cond, .. })) => (*cond, true),
        _ => return Err(SliceError::TargetNotConditional(target_label.to_string())),
    };

    // A conditional branch or jump before the target that can transfer past
    // it makes the target control-dependent: a nested branch.
    for (i, item) in l.body.iter().enumerate().take(target_index) {
        let jump_target = match item {
            BodyItem::Inst(SymInst::Bnz { target, .. })
            | BodyItem::Inst(SymInst::Bz { target, .. })
            | BodyItem::Inst(SymInst::Jmp { target }) => target,
            _ => continue,
        };
        match labels.get(jump_target.as_str()) {
            Some(&pos) if pos <= target_index => {}
            _ => {
                return Err(SliceError::NestedTargetBranch(format!(
                    "branch at body item {i} can bypass the target"
                )))
            }
        }
    }

    // Backward dataflow walk from the condition register.
    let mut all_defs = Vec::new();
    defs_in_items(&l.body, &mut all_defs);
    let mut needed: Vec<Reg> = vec![cond_reg];
    let mut picked: Vec<usize> = Vec::new();
    for i in (0..target_index).rev() {
        let unresolved: Vec<Reg> = needed
            .iter()
            .copied()
            .filter(|r| *r != induction.register && all_defs.contains(r))
            .collect();
        if unresolved.is_empty() {
            break;
        }
        match &l.body[i] {
            BodyItem::Label(_) => {}
            BodyItem::Loop(inner) => {
                let mut inner_defs = vec![inner.induction];
                defs_in_items(&inner.body, &mut inner_defs);
                if unresolved.iter().any(|r| inner_defs.contains(r)) {
                    return Err(SliceError::Unsupported(
                        "branch condition depends on a nested loop".into(),
                    ));
                }
            }
            BodyItem::Inst(inst) =>

 {
                // Crossing control flow while defs are still unresolved
                // would pull conditionally-executed instructions in.
                if matches!(
                    inst,
                    SymInst::Bnz { .. } | SymInst::Bz { .. } | SymInst::Jmp { .. }
                ) {
                    return Err(SliceError::NestedTargetBranch(
                        "condition is computed under control flow inside the loop".into(),
                    ));
                }
                let def = match inst.def() {
                    Some(d) if needed.contains(&d) => d,
                    _ => continue,
                };
                match inst {
                    SymInst::St { .. } | SymInst::Vst { .. } | SymInst::Halt => unreachable!(),
                    _ => {}
                }
                picked.push(i);
                needed.retain(|r| *r != def);
                for u in inst.uses() {
                    if !needed.contains(&u) {
                        needed.push(u);
                    }
                }
            }
        }
    }

    // Whatever remains needed is a live-in: the induction variable or a
    // register that must be loop-invariant.
    let mut live_ins = Vec::new();
    for r in needed {
        if r == induction.register {
            continue;
        }
        if all_defs.contains(&r) {
            return Err(SliceError::LoopCarriedDependence(format!(
                "live-in {r} is written inside the loop"
            )));
        }
        live_ins.push(r);
    }

    picked.sort_unstable();
    let insts: Vec<SymInst> = picked
        .iter()
        .map(|&i| match &l.body[i] {
            BodyItem::Inst(inst) => inst.clone(),
            _ => unreachable!(),
        })
        .collect();
    let load_positions: Vec<usize> = insts
        .iter()
        .enumerate()
        .filter_map(|(i, inst)| matches!(inst, SymInst::Ld { .. }).then_some(i))
        .collect();

    // May-alias check: slice loads against every data store in the body.
    let consts = constant_env(sp);
    let ctx = IntervalCtx {
        body: &l.body,
        consts: &consts,
        induction: induction.register,
        induction_range: induction_range(&induction),
    };
    let mmio = Interval::Range(sp.mmio.base as i64, sp.mmio.end() as i64 - 1);
    let in_mmio = |iv: Interval| match (iv, mmio) {
        (Interval::Range(a, b), Interval::Range(lo, hi)) => a >= lo && b <= hi,
        _ => false,
    };
    // Direct body stores resolve at their position; stores inside nested
    // loops are untraceable from here and go in as unknown.
    let mut stores: Vec<(Interval, String)> = Vec::new();
    for (pos, item) in l.body.iter().enumerate() {
        match item {
            BodyItem::Inst(SymInst::St { base, offset, .. }) => {
                stores.push((
                    ctx.addr_interval(*base, *offset, 8, pos),
                    format!("ST [{base}+{offset}]"),
                ));
            }
            BodyItem::Inst(SymInst::Vst { base, offset, width, .. }) => {
                stores.push((
                    ctx.addr_interval(*base, *offset, *width as i64, pos),
                    format!("VST [{base}+{offset}]"),
                ));
            }
            BodyItem::Loop(inner) => {
                fn nested_stores(items: &[BodyItem], out: &mut Vec<(Interval, String)>) {
                    for item in items {
                        match item {
                            BodyItem::Inst(SymInst::St { base, offset, .. }) => {
                                out.push((Interval::Top, format!("nested ST [{base}+{offset}]")));
                            }
                            BodyItem::Inst(SymInst::Vst { base, offset, .. }) => {
                                out.push((Interval::Top, format!("nested VST [{base}+{offset}]")));
                            }
                            BodyItem::Loop(l) => nested_stores(&l.body, out),
                            _ => {}
                        }
                    }
                }
                nested_stores(&inner.body, &mut stores);
            }
            _ => {}
        }
    }
    for (slice_pos, &inst_pos) in load_positions.iter().enumerate() {
        let _ = slice_pos;
        if let SymInst::Ld { base, offset, .. } = &insts[inst_pos] {
            let body_pos = picked[inst_pos];
            let load_iv = ctx.addr_interval(*base, *offset, 8, body_pos);
            for (store_iv, what) in &stores {
                if in_mmio(*store_iv) {
                    continue;
                }
                if load_iv.overlaps(*store_iv) {
                    return Err(SliceError::LoopCarriedDependence(format!(
                        "slice load [{base}+{offset}] may alias {what}"
                    )));
                }
            }
        }
    }

    Ok(Backslice {
        item_indices: picked,
        insts,
        live_ins,
        load_positions,
        cond_reg,
        branch_is_bz,
        target_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::SymImm;

    fn reg(i: u8) -> Reg {
        Reg::r(i)
    }

    /// The running-example inner loop: ai = pos + dirs[k]; cond =
    /// (square[ai] == color); if (cond) cnt++.
    fn board_scan_loop(extra_store: Option<SymInst>) -> (StructuredProgram, StructuredLoop) {
        let (k, pos, color, dirs_base, square_base) = (reg(1), reg(2), reg(3), reg(4), reg(5));
        let (t, d, ai, u, s, c, cnt) = (reg(6), reg(7), reg(8), reg(9), reg(10), reg(11), reg(12));
        let eight = reg(13);
        let mut body = vec![
            BodyItem::Inst(SymInst::Mul { dst: t, lhs: k, rhs: eight }),
            BodyItem::Inst(SymInst::Add { dst: t, lhs: dirs_base, rhs: t }),
            BodyItem::Inst(SymInst::Ld { dst: d, base: t, offset: 0 }),
            BodyItem::Inst(SymInst::Add { dst: ai, lhs: pos, rhs: d }),
            BodyItem::Inst(SymInst::Mul { dst: u, lhs: ai, rhs: eight }),
            BodyItem::Inst(SymInst::Add { dst: u, lhs: square_base, rhs: u }),
            BodyItem::Inst(SymInst::Ld { dst: s, base: u, offset: 0 }),
            BodyItem::Inst(SymInst::CmpEq { dst: c, lhs: s, rhs: color }),
            BodyItem::Label("BR".into()),
            BodyItem::Inst(SymInst::Bz { cond: c, target: "Skip".into() }),
            BodyItem::Inst(SymInst::Addi { dst: cnt, src: cnt, imm: 1 }),
            BodyItem::Label("Skip".into()),
        ];
        if let Some(st) = extra_store {
            body.insert(0, BodyItem::Inst(st));
        }
        let l = StructuredLoop {
            induction: k,
            start: Operand::Const(0),
            end: Operand::Const(4),
            step: 1,
            body,
            target_label: Some("BR".into()),
            end_label: Some("End".into()),
        };
        let sp = StructuredProgram {
            items: vec![
                BodyItem::Inst(SymInst::Movi { dst: eight, imm: SymImm::Int(8) }),
                BodyItem::Inst(SymInst::Movi { dst: dirs_base, imm: SymImm::Int(0x1000) }),
                BodyItem::Inst(SymInst::Movi { dst: square_base, imm: SymImm::Int(0x2000) }),
                BodyItem::Inst(SymInst::Movi { dst: pos, imm: SymImm::Int(64) }),
                BodyItem::Inst(SymInst::Movi { dst: color, imm: SymImm::Int(2) }),
                BodyItem::Loop(l.clone()),
                BodyItem::Inst(SymInst::Halt),
            ],
            ..Default::default()
        };
        (sp, l)
    }

    #[test]
    fn canonical_induction_descriptor() {
        let (_, l) = board_scan_loop(None);
        let info = find_induction(&l).unwrap();
        assert_eq!(info.register, reg(1));
        assert_eq!(info.start, Operand::Const(0));
        assert_eq!(info.end, Operand::Const(4));
        assert_eq!(info.step, 1);
    }

    #[test]
    fn runtime_bound_in_register_is_canonical() {
        let (_, mut l) = board_scan_loop(None);
        l.end = Operand::Reg(reg(14));
        l.step = 2;
        let info = find_induction(&l).unwrap();
        assert_eq!(info.end, Operand::Reg(reg(14)));
        assert_eq!(info.step, 2);
    }

    #[test]
    fn induction_mutated_in_body_is_not_canonical() {
        let (_, mut l) = board_scan_loop(None);
        l.body.push(BodyItem::Inst(SymInst::Addi { dst: reg(1), src: reg(1), imm: 1 }));
        assert!(matches!(find_induction(&l), Err(SliceError::NotCanonical(_))));
    }

    #[test]
    fn slice_of_board_scan_has_two_loads_and_the_compare() {
        let (sp, l) = board_scan_loop(None);
        let slice = extract_backslice(&sp, &l, "BR").unwrap();
        assert_eq!(slice.insts.len(), 8, "full chain from induction to compare");
        assert_eq!(slice.load_positions.len(), 2);
        assert_eq!(slice.cond_reg, reg(11));
        assert!(matches!(slice.insts.last(), Some(SymInst::CmpEq { .. })));
        // Live-ins: pos, color, both array bases, and the stride constant.
        let mut live = slice.live_ins.clone();
        live.sort();
        assert_eq!(live, vec![reg(2), reg(3), reg(4), reg(5), reg(13)]);
    }

    #[test]
    fn store_into_scanned_array_rejects() {
        // ST cnt, [square_base + k*8] aliases the slice load of square[ai].
        let (t2, cnt) = (reg(14), reg(12));
        let store_addr = vec![
            BodyItem::Inst(SymInst::Mul { dst: t2, lhs: reg(1), rhs: reg(13) }),
            BodyItem::Inst(SymInst::Add { dst: t2, lhs: reg(5), rhs: t2 }),
            BodyItem::Inst(SymInst::St { src: cnt, base: t2, offset: 0 }),
        ];
        let (mut sp, mut l) = board_scan_loop(None);
        for (i, item) in store_addr.into_iter().enumerate() {
            l.body.insert(i, item);
        }
        sp.items[5] = BodyItem::Loop(l.clone());
        match extract_backslice(&sp, &l, "BR") {
            Err(SliceError::LoopCarriedDependence(msg)) => {
                assert!(msg.contains("alias"), "{msg}");
            }
            other => panic!("expected loop-carried rejection, got {other:?}"),
        }
    }

    #[test]
    fn store_to_disjoint_array_is_legal() {
        // cond = (vals[k] == color) with a store into a separate array at
        // 0x8000: both address intervals resolve and do not overlap.
        let (k, color, vals_base, out_base, eight) = (reg(1), reg(2), reg(3), reg(4), reg(5));
        let (t, v, c, t2, cnt) = (reg(6), reg(7), reg(8), reg(9), reg(10));
        let l = StructuredLoop {
            induction: k,
            start: Operand::Const(0),
            end: Operand::Const(4),
            step: 1,
            body: vec![
                BodyItem::Inst(SymInst::Mul { dst: t, lhs: k, rhs: eight }),
                BodyItem::Inst(SymInst::Add { dst: t, lhs: vals_base, rhs: t }),
                BodyItem::Inst(SymInst::Ld { dst: v, base: t, offset: 0 }),
                BodyItem::Inst(SymInst::CmpEq { dst: c, lhs: v, rhs: color }),
                BodyItem::Label("BR".into()),
                BodyItem::Inst(SymInst::Bz { cond: c, target: "Skip".into() }),
                BodyItem::Inst(SymInst::Addi { dst: cnt, src: cnt, imm: 1 }),
                BodyItem::Label("Skip".into()),
                BodyItem::Inst(SymInst::Mul { dst: t2, lhs: k, rhs: eight }),
                BodyItem::Inst(SymInst::Add { dst: t2, lhs: out_base, rhs: t2 }),
                BodyItem::Inst(SymInst::St { src: cnt, base: t2, offset: 0 }),
            ],
            target_label: Some("BR".into()),
            end_label: Some("End".into()),
        };
        let mut sp = StructuredProgram {
            items: vec![
                BodyItem::Inst(SymInst::Movi { dst: eight, imm: SymImm::Int(8) }),
                BodyItem::Inst(SymInst::Movi { dst: vals_base, imm: SymImm::Int(0x2000) }),
                BodyItem::Inst(SymInst::Movi { dst: out_base, imm: SymImm::Int(0x8000) }),
                BodyItem::Inst(SymInst::Movi { dst: color, imm: SymImm::Int(2) }),
                BodyItem::Loop(l.clone()),
                BodyItem::Inst(SymInst::Halt),
            ],
            ..Default::default()
        };
        let slice = extract_backslice(&sp, &l, "BR").unwrap();
        assert_eq!(slice.load_positions.len(), 1);
        // Moving the store onto the scanned array flips the verdict.
        let mut bad = l.clone();
        if let BodyItem::Inst(SymInst::Add { lhs, .. }) = &mut bad.body[9] {
            *lhs = vals_base;
        }
        sp.items[4] = BodyItem::Loop(bad.clone());
        assert!(matches!(
            extract_backslice(&sp, &bad, "BR"),
            Err(SliceError::LoopCarriedDependence(_))
        ));
    }

    #[test]
    fn chained_parent_libs_loads_slice() {
        // libs = libs_arr[parent[ai]]; cond = libs <= 1.
        let (k, vertex, dirs, parent, libs_arr, one, eight) =
            (reg(1), reg(2), reg(3), reg(4), reg(5), reg(6), reg(7));
        let (t, d, ai, p, lb, c) = (reg(8), reg(9), reg(10), reg(11), reg(12), reg(13));
        let l = StructuredLoop {
            induction: k,
            start: Operand::Const(0),
            end: Operand::Const(4),
            step: 1,
            body: vec![
                BodyItem::Inst(SymInst::Mul { dst: t, lhs: k, rhs: eight }),
                BodyItem::Inst(SymInst::Add { dst: t, lhs: dirs, rhs: t }),
                BodyItem::Inst(SymInst::Ld { dst: d, base: t, offset: 0 }),
                BodyItem::Inst(SymInst::Add { dst: ai, lhs: vertex, rhs: d }),
                BodyItem::Inst(SymInst::Mul { dst: t, lhs: ai, rhs: eight }),
                BodyItem::Inst(SymInst::Add { dst: t, lhs: parent, rhs: t }),
                BodyItem::Inst(SymInst::Ld { dst: p, base: t, offset: 0 }),
                BodyItem::Inst(SymInst::Mul { dst: t, lhs: p, rhs: eight }),
                BodyItem::Inst(SymInst::Add { dst: t, lhs: libs_arr, rhs: t }),
                BodyItem::Inst(SymInst::Ld { dst: lb, base: t, offset: 0 }),
                BodyItem::Inst(SymInst::CmpLe { dst: c, lhs: lb, rhs: one }),
                BodyItem::Label("BR".into()),
                BodyItem::Inst(SymInst::Bz { cond: c, target: "Skip".into() }),
                BodyItem::Label("Skip".into()),
            ],
            target_label: Some("BR".into()),
            end_label: Some("End".into()),
        };
        let sp = StructuredProgram {
            items: vec![BodyItem::Loop(l.clone()), BodyItem::Inst(SymInst::Halt)],
            ..Default::default()
        };
        let slice = extract_backslice(&sp, &l, "BR").unwrap();
        assert_eq!(slice.load_positions.len(), 3, "dirs, parent, libs loads all feed the branch");
        assert!(matches!(slice.insts.last(), Some(SymInst::CmpLe { .. })));
    }

    #[test]
    fn guarded_condition_is_a_nested_target() {
        // A branch before the target that jumps past it guards the target.
        let (mut sp, mut l) = board_scan_loop(None);
        l.body.insert(
            0,
            BodyItem::Inst(SymInst::Bnz { cond: reg(12), target: "Skip".into() }),
        );
        sp.items[5] = BodyItem::Loop(l.clone());
        assert!(matches!(
            extract_backslice(&sp, &l, "BR"),
            Err(SliceError::NestedTargetBranch(_))
        ));
    }

    #[test]
    fn missing_target_label_reports() {
        let (sp, l) = board_scan_loop(None);
        assert_eq!(
            extract_backslice(&sp, &l, "Nope"),
            Err(SliceError::NoSuchTarget("Nope".into()))
        );
    }
}
