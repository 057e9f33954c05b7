//! Differential suites: lowering against an independent tree-walking
//! interpreter, strip mining against the un-mined loop, and the
//! pre-execute generator's store pattern against the oracle.

mod common;

use std::collections::BTreeSet;

use boss_sim::asm::assemble;
use boss_sim::instrument::{instrument, strip_mine, InstrumentOptions, Variant};
use boss_sim::oracle::{branch_profile, execute, EventKind, DEFAULT_STEP_LIMIT};
use boss_sim::structured::{collect_used_regs, lower, BodyItem, StructuredProgram};
use boss_sim::workload::{build, PlacementClass, WorkloadKind, WorkloadSpec};

use common::{interpret_structured, random_structured};

#[test]
fn lowering_matches_reference_interpreter_on_random_programs() {
    for seed in 0..300u64 {
        let sp = random_structured(seed);
        let program = lower(&sp).unwrap_or_else(|e| panic!("seed {seed}: lower failed: {e}"));
        let trace = execute(&program, DEFAULT_STEP_LIMIT);
        assert!(trace.halted, "seed {seed}: lowered program must halt");
        let reference = interpret_structured(&sp, 1_000_000)
            .unwrap_or_else(|e| panic!("seed {seed}: reference failed: {e}"));

        let mut used = BTreeSet::new();
        collect_used_regs(&sp.items, &mut used);
        for reg in used {
            assert_eq!(
                trace.final_regs[reg.index()],
                reference.regs[reg.index()],
                "seed {seed}: {reg} diverges"
            );
        }
        let ref_delta: Vec<(u64, u8)> = reference
            .mem
            .iter()
            .filter(|(a, b)| sp.data.get(a) != Some(b))
            .map(|(a, b)| (*a, *b))
            .collect();
        let lowered_delta: Vec<(u64, u8)> =
            trace.final_mem_delta.iter().map(|(a, b)| (*a, *b)).collect();
        assert_eq!(lowered_delta, ref_delta, "seed {seed}: memory diverges");
    }
}

#[test]
fn strip_mining_preserves_execution() {
    // trip 1000 at cap 256 must chunk into [0,256) [256,512) [512,768)
    // [768,1000) and leave results identical.
    let spec = WorkloadSpec {
        trip: 1000,
        generations: 1,
        lead_filler: 0,
        placement: PlacementClass::Hot,
        ..WorkloadSpec::default_for(WorkloadKind::Synthetic)
    };
    let w = build(&spec).unwrap();
    let path = boss_sim::structured::locate_target_loop(&w.structured.items, "BR").unwrap();
    let l = boss_sim::structured::loop_at_path(&w.structured.items, &path).unwrap().clone();

    let mut mined_sp = w.structured.clone();
    let items = strip_mine(&w.structured, &l, 256).unwrap();
    assert_eq!(items.len(), 1, "one outer chunk loop");
    // Splice the mined nest in place of the inner loop.
    fn replace(items_out: &mut Vec<BodyItem>, path: &[usize], with: Vec<BodyItem>) {
        if path.len() == 1 {
            items_out.splice(path[0]..=path[0], with);
        } else if let BodyItem::Loop(l) = &mut items_out[path[0]] {
            replace(&mut l.body, &path[1..], with);
        }
    }
    replace(&mut mined_sp.items, &path, items);
    let mined = lower(&mined_sp).unwrap();
    let base = execute(&w.program, DEFAULT_STEP_LIMIT);
    let mined_trace = execute(&mined, DEFAULT_STEP_LIMIT);
    assert!(base.halted && mined_trace.halted);
    assert_eq!(base.final_mem_delta, mined_trace.final_mem_delta);
    // The target branch runs the same 1000 instances in the same order.
    let target = mined.pc_of("BR").unwrap();
    assert_eq!(branch_profile(&mined_trace, target).unwrap(), w.schedule);

    // Identity below the cap.
    let small = WorkloadSpec { trip: 4, ..spec };
    let ws = build(&small).unwrap();
    let path = boss_sim::structured::locate_target_loop(&ws.structured.items, "BR").unwrap();
    let ls = boss_sim::structured::loop_at_path(&ws.structured.items, &path).unwrap().clone();
    let items = strip_mine(&ws.structured, &ls, 256).unwrap();
    assert_eq!(items, vec![BodyItem::Loop(ls)], "trip 4 is left unchanged");
}

#[test]
fn strip_mining_runtime_trip_count() {
    // A loop whose bound lives in a register still chunks correctly: the
    // mined program is compared against the unmined one by execution.
    let src = "\
.data 0x1000 1 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 1 0 0 0 0 0 0 0 1 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0
  MOVI r0, 0x1000
  MOVI r2, 1
  MOVI r3, 8
  MOVI r9, 5
  MOVI r4, 0
  CMP_GE r5, r4, r9
  BNZ r5, Out
Head:
  MUL r6, r4, r3
  ADD r6, r0, r6
  LD r7, [r6+0]
  CMP_GE r8, r7, r2
BR:
  BZ r8, Skip
  ADDI r10, r10, 1
Skip:
  ADDI r4, r4, 1
  CMP_GE r5, r4, r9
  BZ r5, Head
Out:
  HALT
";
    let p = assemble(src).unwrap();
    let mut sp = boss_sim::recover::recover_structure(&p).unwrap();
    assert!(boss_sim::recover::designate_target(&mut sp, "BR"));
    // cap 2: the 5-trip runtime loop becomes chunks of 2,2,1.
    let inst = instrument(
        &sp,
        "BR",
        &InstrumentOptions { strip_cap: 2, ..Default::default() },
    )
    .unwrap();
    assert!(!inst.main_loop_intact);
    let base = execute(&p, DEFAULT_STEP_LIMIT);
    let mined = execute(&inst.program, DEFAULT_STEP_LIMIT);
    assert!(base.halted && mined.halted);
    assert_eq!(base.final_regs[10], mined.final_regs[10], "if-body counter");
    assert_eq!(
        branch_profile(&base, p.pc_of("BR").unwrap()).unwrap(),
        branch_profile(&mined, inst.target_pc).unwrap(),
    );
    // Three generations' worth of channel stores: 2 + 2 + 1.
    let writes = mined
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::BossOutcomeStore { .. }))
        .count();
    assert_eq!(writes, 5);
}

fn outcome_store_slots(sp: &StructuredProgram, target: &str, options: &InstrumentOptions) -> Vec<u8> {
    let inst = instrument(sp, target, options).unwrap();
    let trace = execute(&inst.program, DEFAULT_STEP_LIMIT);
    assert!(trace.halted);
    let mut slots = Vec::new();
    for ev in &trace.events {
        if let EventKind::BossOutcomeStore { slot, lanes, .. } = ev.kind {
            for i in 0..lanes {
                slots.push(slot + i);
            }
        }
    }
    slots
}

#[test]
fn preexec_store_patterns_match_coverage_and_variant() {
    let spec = WorkloadSpec {
        trip: 4,
        generations: 1,
        lead_filler: 0,
        placement: PlacementClass::Hot,
        ..WorkloadSpec::default_for(WorkloadKind::Synthetic)
    };
    let w = build(&spec).unwrap();

    // Full coverage, plain: four scalar outcome stores at slots 0..4.
    let slots = outcome_store_slots(&w.structured, "BR", &InstrumentOptions::default());
    assert_eq!(slots, vec![0, 1, 2, 3]);

    // Coverage [1,2]: the pre-execute loop covers only those ordinals.
    let slots = outcome_store_slots(
        &w.structured,
        "BR",
        &InstrumentOptions { coverage: Some((1, 2)), ..Default::default() },
    );
    assert_eq!(slots, vec![1, 2]);

    // Vectorized(4) over a 256-trip loop: 64 vector stores replace 256
    // scalar ones, and the pre-execute instruction stream shrinks.
    let big = WorkloadSpec { trip: 256, ..spec };
    let wb = build(&big).unwrap();
    let count_stores = |options: &InstrumentOptions| {
        let inst = instrument(&wb.structured, "BR", options).unwrap();
        let trace = execute(&inst.program, DEFAULT_STEP_LIMIT);
        let events = trace
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::BossOutcomeStore { .. }))
            .count();
        let pre_exec_dynamic =
            trace.events.iter().filter(|e| inst.pre_exec_pcs.contains(&e.pc)).count();
        (events, pre_exec_dynamic)
    };
    let (plain_events, plain_dyn) = count_stores(&InstrumentOptions::default());
    let (vec_events, vec_dyn) = count_stores(&InstrumentOptions {
        variant: Variant::Vectorized(4),
        ..Default::default()
    });
    assert_eq!(plain_events, 256);
    assert_eq!(vec_events, 64, "one vector store per 4 lanes");
    assert!(
        vec_dyn < plain_dyn,
        "vectorization must shrink the pre-execute stream: {vec_dyn} vs {plain_dyn}"
    );
}

#[test]
fn board_scan_example_outcomes() {
    // A 4-trip board scan where the scanned squares alternate between the
    // matching color and another: outcomes taken, not-taken, taken,
    // not-taken, hand-checked.
    let src = "\
.data 0x1000 2 0 0 0 0 0 0 0 7 0 0 0 0 0 0 0 2 0 0 0 0 0 0 0 7 0 0 0 0 0 0 0
  MOVI r0, 0x1000
  MOVI r2, 2
  MOVI r3, 8
  MOVI r4, 0
  MOVI r5, 4
Head:
  MUL r6, r4, r3
  ADD r6, r0, r6
  LD r7, [r6+0]
  CMP_EQ r8, r7, r2
BR:
  BNZ r8, Body
  JMP Join
Body:
  ADDI r10, r10, 1
Join:
  ADDI r4, r4, 1
  CMP_GE r9, r4, r5
  BZ r9, Head
  HALT
";
    let p = assemble(src).unwrap();
    let t = execute(&p, DEFAULT_STEP_LIMIT);
    assert!(t.halted);
    assert_eq!(
        branch_profile(&t, p.pc_of("BR").unwrap()).unwrap(),
        vec![true, false, true, false]
    );
    assert_eq!(t.final_regs[10], 2);
}
