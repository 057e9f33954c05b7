//! Loop-aware structured program form and its lowering to flat code.
//!
//! Workload builders and the instrumenter manipulate programs as item
//! trees: plain symbolic instructions, label bindings, and counted-loop
//! nodes. Lowering emits the canonical flat shape for each loop,
//!
//! ```text
//!     MOVI k, start            ; or MOV k, startreg
//!     CMP_GE t, k, end         ; zero-trip guard (CMP_LE for negative step)
//!     BNZ t, Exit
//! Head:
//!     <body>
//!     ADDI k, k, step
//!     CMP_GE t, k, end
//!     BZ t, Head               ; back-edge on the induction comparison
//! Exit:
//! ```
//!
//! so the loop's end label lands on the first instruction after the exit.
//! Scratch registers for the guard temporaries are taken from registers the
//! program never touches.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use thiserror::Error;

use crate::asm::{resolve, AsmError, AsmItem, SymImm, SymInst};
use crate::ir::{MmioLayout, Program, Reg, NUM_REGS};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LowerError {
    #[error("no free scratch registers left for loop lowering")]
    OutOfScratchRegisters,
    #[error("designated target branches nest: `{outer}` encloses `{inner}`")]
    NestedTargetBranch { outer: String, inner: String },
    #[error("loop step must be nonzero")]
    ZeroStep,
    #[error("{0}")]
    Asm(AsmError),
}

/// A constant or loop-invariant register operand.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Operand {
    Const(i64),
    Reg(Reg),
}

/// Counted loop: `for (k = start; k < end; k += step)` for positive step,
/// `k > end` for negative step. The bound is exclusive.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct StructuredLoop {
    pub induction: Reg,
    pub start: Operand,
    pub end: Operand,
    pub step: i64,
    pub body: Vec<BodyItem>,
    /// Label bound to the designated target branch inside the body.
    pub target_label: Option<String>,
    /// Label for the instruction after the loop exit.
    pub end_label: Option<String>,
}

impl StructuredLoop {
    pub fn static_trip_count(&self) -> Option<u64> {
        match (self.start, self.end) {
            (Operand::Const(s), Operand::Const(e)) => {
                if self.step > 0 {
                    let span = e.saturating_sub(s);
                    if span <= 0 {
                        Some(0)
                    } else {
                        Some(((span + self.step - 1) / self.step) as u64)
                    }
                } else if self.step < 0 {
                    let span = s.saturating_sub(e);
                    if span <= 0 {
                        Some(0)
                    } else {
                        Some(((span - self.step - 1) / -self.step) as u64)
                    }
                } else {
                    None
                }
            }
            _ => None,
        }
    }
}

impl Default for StructuredLoop {
    fn default() -> Self {
        StructuredLoop {
            induction: Reg::r(0),
            start: Operand::Const(0),
            end: Operand::Const(0),
            step: 1,
            body: Vec::new(),
            target_label: None,
            end_label: None,
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum BodyItem {
    Inst(SymInst),
    Label(String),
    Loop(StructuredLoop),
}

#[derive(Clone, Debug, Default)]
pub struct StructuredProgram {
    pub items: Vec<BodyItem>,
    pub data: BTreeMap<u64, u8>,
    pub entry_label: Option<String>,
    pub mmio: MmioLayout,
}

/// Registers referenced anywhere in the item tree.
pub fn collect_used_regs(items: &[BodyItem], used: &mut BTreeSet<Reg>) {
    for item in items {
        match item {
            BodyItem::Inst(inst) => {
                used.extend(inst.uses());
                if let Some(d) = inst.def() {
                    used.insert(d);
                }
            }
            BodyItem::Label(_) => {}
            BodyItem::Loop(l) => {
                used.insert(l.induction);
                if let Operand::Reg(r) = l.start {
                    used.insert(r);
                }
                if let Operand::Reg(r) = l.end {
                    used.insert(r);
                }
                collect_used_regs(&l.body, used);
            }
        }
    }
}

/// Registers the program never touches, highest index first.
pub fn free_regs(sp: &StructuredProgram) -> Vec<Reg> {
    let mut used = BTreeSet::new();
    collect_used_regs(&sp.items, &mut used);
    (0..NUM_REGS).rev().map(Reg::r).filter(|r| !used.contains(r)).collect()
}

struct LowerCtx {
    out: Vec<AsmItem>,
    next_label: usize,
    cond_tmp: Reg,
    bound_tmp: Reg,
    reserved: BTreeSet<String>,
}

impl LowerCtx {
    fn fresh(&mut self, what: &str) -> String {
        loop {
            let name = format!("__{what}_{}", self.next_label);
            self.next_label += 1;
            if !self.reserved.contains(&name) {
                return name;
            }
        }
    }

    fn push(&mut self, inst: SymInst) {
        self.out.push(AsmItem::Inst(inst));
    }

    fn label(&mut self, name: String) {
        self.out.push(AsmItem::Label(name));
    }
}

fn check_no_nested_targets(l: &StructuredLoop) -> Result<(), LowerError> {
    fn inner_target(items: &[BodyItem]) -> Option<String> {
        for item in items {
            if let BodyItem::Loop(l) = item {
                if let Some(t) = &l.target_label {
                    return Some(t.clone());
                }
                if let Some(t) = inner_target(&l.body) {
                    return Some(t);
                }
            }
        }
        None
    }
    if let Some(outer) = &l.target_label {
        if let Some(inner) = inner_target(&l.body) {
            return Err(LowerError::NestedTargetBranch { outer: outer.clone(), inner });
        }
    }
    Ok(())
}

fn lower_items(items: &[BodyItem], ctx: &mut LowerCtx) -> Result<(), LowerError> {
    for item in items {
        match item {
            BodyItem::Inst(inst) => ctx.push(inst.clone()),
            BodyItem::Label(name) => ctx.label(name.clone()),
            BodyItem::Loop(l) => lower_loop(l, ctx)?,
        }
    }
    Ok(())
}

fn emit_exit_cmp(l: &StructuredLoop, ctx: &mut LowerCtx) -> Reg {
    let bound = match l.end {
        Operand::Const(v) => {
            let b = ctx.bound_tmp;
            ctx.push(SymInst::Movi { dst: b, imm: SymImm::Int(v) });
            b
        }
        Operand::Reg(r) => r,
    };
    let t = ctx.cond_tmp;
    if l.step > 0 {
        ctx.push(SymInst::CmpGe { dst: t, lhs: l.induction, rhs: bound });
    } else {
        ctx.push(SymInst::CmpLe { dst: t, lhs: l.induction, rhs: bound });
    }
    t
}

fn lower_loop(l: &StructuredLoop, ctx: &mut LowerCtx) -> Result<(), LowerError> {
    if l.step == 0 {
        return Err(LowerError::ZeroStep);
    }
    check_no_nested_targets(l)?;
    let head = ctx.fresh("head");
    let exit = match &l.end_label {
        Some(name) => name.clone(),
        None => ctx.fresh("exit"),
    };
    let k = l.induction;
    match l.start {
        Operand::Const(v) => ctx.push(SymInst::Movi { dst: k, imm: SymImm::Int(v) }),
        Operand::Reg(r) => ctx.push(SymInst::Mov { dst: k, src: r }),
    }
    // Zero-trip guard, skipped when the bounds are statically nonzero.
    if l.static_trip_count().map(|t| t == 0).unwrap_or(true) {
        let t = emit_exit_cmp(l, ctx);
        ctx.push(SymInst::Bnz { cond: t, target: exit.clone() });
    }
    ctx.label(head.clone());
    lower_items(&l.body, ctx)?;
    ctx.push(SymInst::Addi { dst: k, src: k, imm: l.step });
    let t = emit_exit_cmp(l, ctx);
    ctx.push(SymInst::Bz { cond: t, target: head });
    ctx.label(exit);
    Ok(())
}

fn collect_label_names(items: &[BodyItem], out: &mut BTreeSet<String>) {
    for item in items {
        match item {
            BodyItem::Label(n) => {
                out.insert(n.clone());
            }
            BodyItem::Inst(
                SymInst::Bnz { target, .. } | SymInst::Bz { target, .. } | SymInst::Jmp { target },
            ) => {
                out.insert(target.clone());
            }
            BodyItem::Inst(_) => {}
            BodyItem::Loop(l) => {
                if let Some(n) = &l.end_label {
                    out.insert(n.clone());
                }
                collect_label_names(&l.body, out);
            }
        }
    }
}

/// Lower a structured program to flat items without resolving labels.
pub fn lower_to_items(sp: &StructuredProgram) -> Result<Vec<AsmItem>, LowerError> {
    let mut free = free_regs(sp);
    let cond_tmp = free.pop().ok_or(LowerError::OutOfScratchRegisters)?;
    let bound_tmp = free.pop().ok_or(LowerError::OutOfScratchRegisters)?;
    let mut reserved = BTreeSet::new();
    collect_label_names(&sp.items, &mut reserved);
    let mut ctx = LowerCtx { out: Vec::new(), next_label: 0, cond_tmp, bound_tmp, reserved };
    lower_items(&sp.items, &mut ctx)?;
    Ok(ctx.out)
}

/// Lower and resolve to an executable flat program, observationally
/// identical to the structured semantics.
pub fn lower(sp: &StructuredProgram) -> Result<Program, LowerError> {
    let items = lower_to_items(sp)?;
    let module = crate::asm::AsmModule {
        items,
        entry: sp.entry_label.clone(),
        mmio_base: Some(sp.mmio.base),
        data: sp.data.clone(),
    };
    resolve(&module).map_err(LowerError::Asm)
}

/// Path (item indices, descending through nested loop bodies) to the loop
/// whose own `target_label` is `label`.
pub fn locate_target_loop(items: &[BodyItem], label: &str) -> Option<Vec<usize>> {
    for (i, item) in items.iter().enumerate() {
        if let BodyItem::Loop(l) = item {
            if l.target_label.as_deref() == Some(label) {
                return Some(vec![i]);
            }
            if let Some(mut path) = locate_target_loop(&l.body, label) {
                let mut full = vec![i];
                full.append(&mut path);
                return Some(full);
            }
        }
    }
    None
}

/// The loop at a path produced by [`locate_target_loop`].
pub fn loop_at_path<'a>(items: &'a [BodyItem], path: &[usize]) -> Option<&'a StructuredLoop> {
    let (&first, rest) = path.split_first()?;
    match items.get(first)? {
        BodyItem::Loop(l) => {
            if rest.is_empty() {
                Some(l)
            } else {
                loop_at_path(&l.body, rest)
            }
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{branch_profile, execute, DEFAULT_STEP_LIMIT};

    fn counted_loop(trip: i64, body: Vec<BodyItem>) -> StructuredProgram {
        StructuredProgram {
            items: vec![
                BodyItem::Loop(StructuredLoop {
                    induction: Reg::r(1),
                    start: Operand::Const(0),
                    end: Operand::Const(trip),
                    step: 1,
                    body,
                    target_label: None,
                    end_label: Some("End".into()),
                }),
                BodyItem::Inst(SymInst::Halt),
            ],
            ..Default::default()
        }
    }

    #[test]
    fn empty_four_trip_loop_runs_four_iterations() {
        let sp = counted_loop(
            4,
            vec![BodyItem::Inst(SymInst::Addi { dst: Reg::r(2), src: Reg::r(2), imm: 1 })],
        );
        let p = lower(&sp).unwrap();
        let t = execute(&p, DEFAULT_STEP_LIMIT);
        assert!(t.halted);
        assert_eq!(t.final_regs[2], 4, "body ran once per iteration");
        assert_eq!(t.final_regs[1], 4, "induction stops at the bound");
        let back_edge = p.insts.iter().rev().find(|i| i.is_conditional_branch()).unwrap();
        assert!(matches!(back_edge, crate::ir::Inst::Bz { .. }));
    }

    #[test]
    fn runtime_trip_count_in_register() {
        let make = |n: i64| {
            let mut sp = counted_loop(
                0,
                vec![BodyItem::Inst(SymInst::Addi { dst: Reg::r(2), src: Reg::r(2), imm: 1 })],
            );
            if let BodyItem::Loop(l) = &mut sp.items[0] {
                l.end = Operand::Reg(Reg::r(3));
            }
            sp.items.insert(
                0,
                BodyItem::Inst(SymInst::Movi { dst: Reg::r(3), imm: SymImm::Int(n) }),
            );
            sp
        };
        let t = execute(&lower(&make(7)).unwrap(), DEFAULT_STEP_LIMIT);
        assert_eq!(t.final_regs[2], 7);
        // Zero-trip case falls straight through the guard.
        let t0 = execute(&lower(&make(0)).unwrap(), DEFAULT_STEP_LIMIT);
        assert_eq!(t0.final_regs[2], 0);
        assert!(t0.halted);
    }

    #[test]
    fn end_label_lands_after_loop_exit() {
        let sp = counted_loop(3, vec![]);
        let p = lower(&sp).unwrap();
        let end = p.pc_of("End").unwrap();
        assert_eq!(p.insts[end], crate::ir::Inst::Halt);
        let t = execute(&p, DEFAULT_STEP_LIMIT);
        assert_eq!(t.events.iter().filter(|e| e.pc == end).count(), 1);
        assert_eq!(t.events.last().unwrap().pc, end);
    }

    #[test]
    fn nested_designated_targets_rejected() {
        let inner = StructuredLoop {
            induction: Reg::r(2),
            end: Operand::Const(2),
            target_label: Some("BR_inner".into()),
            body: vec![
                BodyItem::Label("BR_inner".into()),
                BodyItem::Inst(SymInst::Bnz { cond: Reg::r(3), target: "Skip".into() }),
                BodyItem::Label("Skip".into()),
            ],
            ..Default::default()
        };
        let outer = StructuredLoop {
            induction: Reg::r(1),
            end: Operand::Const(2),
            target_label: Some("BR_outer".into()),
            body: vec![
                BodyItem::Label("BR_outer".into()),
                BodyItem::Inst(SymInst::Bnz { cond: Reg::r(3), target: "Skip2".into() }),
                BodyItem::Label("Skip2".into()),
                BodyItem::Loop(inner),
            ],
            ..Default::default()
        };
        let sp = StructuredProgram {
            items: vec![BodyItem::Loop(outer), BodyItem::Inst(SymInst::Halt)],
            ..Default::default()
        };
        assert_eq!(
            lower(&sp).err(),
            Some(LowerError::NestedTargetBranch {
                outer: "BR_outer".into(),
                inner: "BR_inner".into()
            })
        );
    }

    #[test]
    fn nested_loops_lower_and_run() {
        let inner = StructuredLoop {
            induction: Reg::r(2),
            start: Operand::Const(0),
            end: Operand::Const(3),
            step: 1,
            body: vec![BodyItem::Inst(SymInst::Addi { dst: Reg::r(4), src: Reg::r(4), imm: 1 })],
            ..Default::default()
        };
        let sp = counted_loop(5, vec![BodyItem::Loop(inner)]);
        let p = lower(&sp).unwrap();
        let t = execute(&p, DEFAULT_STEP_LIMIT);
        assert_eq!(t.final_regs[4], 15);
    }

    #[test]
    fn locate_and_fetch_target_loop() {
        let inner = StructuredLoop {
            induction: Reg::r(2),
            end: Operand::Const(4),
            target_label: Some("BR".into()),
            body: vec![
                BodyItem::Label("BR".into()),
                BodyItem::Inst(SymInst::Bnz { cond: Reg::r(3), target: "S".into() }),
                BodyItem::Label("S".into()),
            ],
            ..Default::default()
        };
        let outer = StructuredLoop {
            induction: Reg::r(1),
            end: Operand::Const(2),
            body: vec![BodyItem::Loop(inner)],
            ..Default::default()
        };
        let items = vec![BodyItem::Loop(outer), BodyItem::Inst(SymInst::Halt)];
        let path = locate_target_loop(&items, "BR").unwrap();
        assert_eq!(path, vec![0, 0]);
        let l = loop_at_path(&items, &path).unwrap();
        assert_eq!(l.target_label.as_deref(), Some("BR"));
    }

    #[test]
    fn four_trip_profile_via_lowered_backedge() {
        let sp = counted_loop(4, vec![]);
        let p = lower(&sp).unwrap();
        let t = execute(&p, DEFAULT_STEP_LIMIT);
        let back_edge_pc = p
            .insts
            .iter()
            .enumerate()
            .rev()
            .find(|(_, i)| i.is_conditional_branch())
            .map(|(pc, _)| pc)
            .unwrap();
        assert_eq!(branch_profile(&t, back_edge_pc).unwrap(), vec![true, true, true, false]);
    }
}
