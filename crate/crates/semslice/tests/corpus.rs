//! The slicing corpus: every program in corpus/manifest.toml is sliced
//! statically and by the deletion oracle, and both results must match
//! the frozen expectations. Reconstruction of the static slice must
//! preserve the criterion observations on every recorded input.

mod common;

use semslice::engine;
use semslice::slicer::{self, Criterion};
use semslice::syntax::parse_term;

#[test]
fn static_slices_match_the_frozen_expectations() {
    let (corpus, base) = common::load_corpus();
    for e in &corpus.program {
        let lab = common::lab(&e.semantics);
        let program = parse_term(&lab.m, &e.source(&base)).expect("corpus program parses");
        let crit = Criterion::vars(&e.criterion);
        let s = slicer::slice(&lab.m, &program, &crit, &lab.facts, &lab.part)
            .unwrap_or_else(|err| panic!("{}: slice failed: {err}", e.name));
        assert_eq!(s.kept, e.static_set(), "{}: static slice drifted", e.name);
    }
}

#[test]
fn oracle_slices_match_the_frozen_expectations() {
    let (corpus, base) = common::load_corpus();
    for e in &corpus.program {
        let lab = common::lab(&e.semantics);
        let program = parse_term(&lab.m, &e.source(&base)).expect("corpus program parses");
        let crit = Criterion::vars(&e.criterion);
        let oracle = slicer::dynamic_slice_oracle(&lab.m, &program, &crit, &e.inputs, 10_000)
            .unwrap_or_else(|err| panic!("{}: oracle failed: {err}", e.name));
        assert_eq!(oracle, e.oracle_set(), "{}: oracle slice drifted", e.name);
    }
}

#[test]
fn every_oracle_is_contained_in_its_static_slice() {
    let (corpus, _) = common::load_corpus();
    assert!(corpus.program.len() >= 30, "corpus must hold at least 30 programs");
    for e in &corpus.program {
        assert!(
            e.oracle_set().is_subset(&e.static_set()),
            "{}: oracle {:?} escapes static {:?}",
            e.name,
            e.expected_oracle,
            e.expected_static
        );
    }
}

#[test]
fn reconstructed_slices_preserve_the_criterion() {
    let (corpus, base) = common::load_corpus();
    for e in &corpus.program {
        let lab = common::lab(&e.semantics);
        let program = parse_term(&lab.m, &e.source(&base)).expect("corpus program parses");
        let crit = Criterion::vars(&e.criterion);
        let sliced = slicer::reconstruct(&lab.m, &program, &e.static_set())
            .unwrap_or_else(|err| panic!("{}: reconstruct failed: {err}", e.name));
        let ok =
            slicer::criterion_preserved(&lab.m, &program, &sliced, &crit, &e.inputs, 10_000)
                .unwrap_or_else(|err| panic!("{}: execution failed: {err}", e.name));
        assert!(ok, "{}: slice changed the observed criterion", e.name);
    }
}

#[test]
fn corpus_inputs_complete_within_budget() {
    let (corpus, base) = common::load_corpus();
    for e in &corpus.program {
        let lab = common::lab(&e.semantics);
        let program = parse_term(&lab.m, &e.source(&base)).expect("corpus program parses");
        for input in &e.inputs {
            let trace = engine::run_program(&lab.m, &program, input, 10_000)
                .unwrap_or_else(|err| panic!("{}: run failed: {err}", e.name));
            assert_eq!(
                trace.status,
                engine::RunStatus::Completed,
                "{}: baseline run must complete",
                e.name
            );
        }
    }
}
