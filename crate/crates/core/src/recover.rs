//! Loop-structure recovery from flat programs, so assembly files can be
//! instrumented directly.
//!
//! Recovery pattern-matches the canonical counted-loop shape the lowerer
//! emits (init, optional zero-trip guard, body, step update, compare,
//! conditional back-edge). Anything else stays as raw symbolic items:
//! irregular loops still execute, they just cannot be designated as
//! instrumentation targets.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::asm::{SymImm, SymInst};
use crate::ir::{Inst, Program, Reg};
use crate::structured::{BodyItem, Operand, StructuredLoop, StructuredProgram};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RecoverError {
    #[error("program has no instructions")]
    Empty,
    #[error("entry pc {0} has no label and is not 0")]
    UnlabeledEntry(usize),
}

struct LoopShape {
    init_idx: usize,
    head: usize,
    body_end: usize,
    back_edge: usize,
    induction: Reg,
    start: Operand,
    end: Operand,
    step: i64,
}

fn bound_operand(cmp: &Inst, prev: Option<&Inst>) -> Option<(Reg, Reg, Operand, bool)> {
    // Returns (cond_reg, induction, bound, uses_movi) for a canonical
    // compare, looking one instruction back for a materialized constant.
    let (dst, lhs, rhs) = match cmp {
        Inst::CmpGe { dst, lhs, rhs } | Inst::CmpLe { dst, lhs, rhs } => (*dst, *lhs, *rhs),
        _ => return None,
    };
    if let Some(Inst::Movi { dst: mdst, imm }) = prev {
        if *mdst == rhs {
            return Some((dst, lhs, Operand::Const(*imm), true));
        }
    }
    Some((dst, lhs, Operand::Reg(rhs), false))
}

fn match_loop(p: &Program, back_edge: usize) -> Option<LoopShape> {
    let head = match p.insts[back_edge] {
        Inst::Bz { cond, target } if target < back_edge => {
            let cmp_idx = back_edge.checked_sub(1)?;
            let prev = cmp_idx.checked_sub(1).map(|i| &p.insts[i]);
            let (cond_reg, induction, end, uses_movi) =
                bound_operand(&p.insts[cmp_idx], prev)?;
            if cond_reg != cond {
                return None;
            }
            let step_idx = back_edge - if uses_movi { 3 } else { 2 };
            let step = match p.insts.get(step_idx) {
                Some(Inst::Addi { dst, src, imm }) if *dst == induction && *src == induction => {
                    *imm
                }
                _ => return None,
            };
            let descending = matches!(p.insts[cmp_idx], Inst::CmpLe { .. });
            if (step > 0) == descending || step == 0 {
                return None;
            }
            Some((target, step_idx, induction, end, step))
        }
        _ => None,
    }?;
    let (head, body_end, induction, end, step) = head;

    // Optional zero-trip guard directly before the head, then the init.
    let mut init_idx = head.checked_sub(1)?;
    if let Inst::Bnz { cond, target } = p.insts[init_idx] {
        if target != back_edge + 1 {
            return None;
        }
        let cmp_idx = init_idx.checked_sub(1)?;
        let prev = cmp_idx.checked_sub(1).map(|i| &p.insts[i]);
        let (cond_reg, ind2, end2, uses_movi) = bound_operand(&p.insts[cmp_idx], prev)?;
        if cond_reg != cond || ind2 != induction || end2 != end {
            return None;
        }
        init_idx = cmp_idx.checked_sub(if uses_movi { 2 } else { 1 })?;
    }
    let start = match p.insts.get(init_idx) {
        Some(Inst::Movi { dst, imm }) if *dst == induction => Operand::Const(*imm),
        Some(Inst::Mov { dst, src }) if *dst == induction => Operand::Reg(*src),
        _ => return None,
    };

    // Nothing outside may branch into the loop machinery; the only edges
    // into (init, back_edge] are the back edge itself and the guard.
    for (pc, inst) in p.insts.iter().enumerate() {
        if let Some(target) = inst.branch_target() {
            let inside = target > init_idx && target <= back_edge && target != head;
            let from_inside = pc >= init_idx && pc <= back_edge;
            if inside && !(from_inside) {
                return None;
            }
            if target == head && pc != back_edge && !(pc >= head && pc < back_edge) {
                return None;
            }
        }
    }
    Some(LoopShape { init_idx, head, body_end, back_edge, induction, start, end, step })
}

fn label_map(p: &Program) -> BTreeMap<usize, Vec<String>> {
    let mut labels_at: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (name, &idx) in &p.labels {
        labels_at.entry(idx).or_default().push(name.clone());
    }
    for inst in &p.insts {
        if let Some(t) = inst.branch_target() {
            labels_at.entry(t).or_default();
        }
    }
    for (&idx, names) in labels_at.iter_mut() {
        if names.is_empty() {
            names.push(format!("L{idx}"));
        }
    }
    labels_at
}

fn to_sym(inst: &Inst, labels_at: &BTreeMap<usize, Vec<String>>) -> SymInst {
    let label_of = |idx: usize| labels_at[&idx][0].clone();
    match *inst {
        Inst::Add { dst, lhs, rhs } => SymInst::Add { dst, lhs, rhs },
        Inst::Sub { dst, lhs, rhs } => SymInst::Sub { dst, lhs, rhs },
        Inst::Mul { dst, lhs, rhs } => SymInst::Mul { dst, lhs, rhs },
        Inst::Addi { dst, src, imm } => SymInst::Addi { dst, src, imm },
        Inst::Movi { dst, imm } => SymInst::Movi { dst, imm: SymImm::Int(imm) },
        Inst::Mov { dst, src } => SymInst::Mov { dst, src },
        Inst::CmpEq { dst, lhs, rhs } => SymInst::CmpEq { dst, lhs, rhs },
        Inst::CmpLe { dst, lhs, rhs } => SymInst::CmpLe { dst, lhs, rhs },
        Inst::CmpGe { dst, lhs, rhs } => SymInst::CmpGe { dst, lhs, rhs },
        Inst::And { dst, lhs, rhs } => SymInst::And { dst, lhs, rhs },
        Inst::Or { dst, lhs, rhs } => SymInst::Or { dst, lhs, rhs },
        Inst::Ld { dst, base, offset } => SymInst::Ld { dst, base, offset },
        Inst::St { src, base, offset } => SymInst::St { src, base, offset },
        Inst::Vst { lane0, width, base, offset } => SymInst::Vst { lane0, width, base, offset },
        Inst::Bnz { cond, target } => SymInst::Bnz { cond, target: label_of(target) },
        Inst::Bz { cond, target } => SymInst::Bz { cond, target: label_of(target) },
        Inst::Jmp { target } => SymInst::Jmp { target: label_of(target) },
        Inst::Halt => SymInst::Halt,
    }
}

fn recover_range(
    p: &Program,
    lo: usize,
    hi: usize,
    loops: &BTreeMap<usize, LoopShape>,
    labels_at: &BTreeMap<usize, Vec<String>>,
) -> Vec<BodyItem> {
    let mut items = Vec::new();
    let mut pc = lo;
    // The end label of a consumed loop is owned by its loop node; don't
    // re-declare it when the walk resumes past the back edge.
    let mut suppress: Option<(usize, String)> = None;
    while pc < hi {
        if let Some(names) = labels_at.get(&pc) {
            for name in names {
                if suppress.as_ref() == Some(&(pc, name.clone())) {
                    continue;
                }
                items.push(BodyItem::Label(name.clone()));
            }
        }
        if let Some(shape) = loops.get(&pc) {
            if shape.back_edge < hi {
                let mut body = recover_range(p, shape.head, shape.body_end, loops, labels_at);
                // Labels bound at the step update are the iteration's join
                // point (skip targets); keep them at the body tail.
                if let Some(names) = labels_at.get(&shape.body_end) {
                    for name in names {
                        body.push(BodyItem::Label(name.clone()));
                    }
                }
                // A label sitting right past the back edge becomes the end
                // label so channel opens can reference the generation
                // boundary.
                let end_label =
                    labels_at.get(&(shape.back_edge + 1)).map(|names| names[0].clone());
                if let Some(name) = &end_label {
                    suppress = Some((shape.back_edge + 1, name.clone()));
                }
                items.push(BodyItem::Loop(StructuredLoop {
                    induction: shape.induction,
                    start: shape.start,
                    end: shape.end,
                    step: shape.step,
                    body,
                    target_label: None,
                    end_label,
                }));
                pc = shape.back_edge + 1;
                continue;
            }
        }
        items.push(BodyItem::Inst(to_sym(&p.insts[pc], labels_at)));
        pc += 1;
    }
    items
}

/// Rebuild the loop-aware form of a flat program. Loops that match the
/// canonical counted shape become [`StructuredLoop`] nodes; everything else
/// passes through as symbolic instructions.
pub fn recover_structure(p: &Program) -> Result<StructuredProgram, RecoverError> {
    if p.insts.is_empty() {
        return Err(RecoverError::Empty);
    }
    let labels_at = label_map(p);
    let mut loops: BTreeMap<usize, LoopShape> = BTreeMap::new();
    for (pc, inst) in p.insts.iter().enumerate() {
        if matches!(inst, Inst::Bz { target, .. } if *target < pc) {
            if let Some(shape) = match_loop(p, pc) {
                // Nested loops recurse through body ranges; only keep the
                // outermost shape at each init point.
                loops.insert(shape.init_idx, shape);
            }
        }
    }
    // Drop shapes nested inside another shape's span; they are picked up by
    // the recursive body walk.
    let spans: Vec<(usize, usize)> =
        loops.values().map(|s| (s.init_idx, s.back_edge)).collect();
    loops.retain(|&init, shape| {
        !spans
            .iter()
            .any(|&(lo, hi)| (lo < init && shape.back_edge <= hi) || (lo <= init && shape.back_edge < hi))
    });

    let entry_label = if p.entry == 0 {
        None
    } else {
        Some(
            labels_at
                .get(&p.entry)
                .map(|names| names[0].clone())
                .ok_or(RecoverError::UnlabeledEntry(p.entry))?,
        )
    };
    let items = recover_range(p, 0, p.insts.len(), &loops, &labels_at);
    Ok(StructuredProgram { items, data: p.image.clone(), entry_label, mmio: p.mmio })
}

/// Mark the loop whose body binds `label` to a conditional branch as the
/// designated target. Returns false when no such loop exists.
pub fn designate_target(sp: &mut StructuredProgram, label: &str) -> bool {
    fn try_items(items: &mut [BodyItem], label: &str) -> bool {
        for item in items {
            if let BodyItem::Loop(l) = item {
                let binds = l.body.windows(2).any(|w| {
                    matches!(&w[0], BodyItem::Label(n) if n == label)
                        && matches!(
                            &w[1],
                            BodyItem::Inst(SymInst::Bnz { .. }) | BodyItem::Inst(SymInst::Bz { .. })
                        )
                });
                if binds {
                    l.target_label = Some(label.to_string());
                    return true;
                }
                if try_items(&mut l.body, label) {
                    return true;
                }
            }
        }
        false
    }
    try_items(&mut sp.items, label)
}
