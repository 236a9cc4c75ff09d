//! Randomized property suites over both bundled semantics: matching and
//! unification soundness on generated terms, normalization idempotence,
//! and order-invariance of the two classification passes.

mod common;

use common::props;
use semslice::assets::load_builtin_strict;

#[test]
fn matching_is_sound_on_random_terms() {
    for name in ["whilefun", "mips-mini"] {
        let m = load_builtin_strict(name);
        props::check_match_soundness(&m, 500, 11).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn unification_is_sound_on_random_terms() {
    for name in ["whilefun", "mips-mini"] {
        let m = load_builtin_strict(name);
        props::check_unify_soundness(&m, 500, 13).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn normalize_is_idempotent_on_random_terms() {
    for name in ["whilefun", "mips-mini"] {
        let m = load_builtin_strict(name);
        props::check_normalize_idempotent(&m, 500, 17).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn marks_are_transparent_to_structure() {
    for name in ["whilefun", "mips-mini"] {
        let m = load_builtin_strict(name);
        props::check_mark_transparency(&m, 300, 19).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn classification_ignores_traversal_order() {
    for name in ["whilefun", "mips-mini"] {
        let m = load_builtin_strict(name);
        props::check_classification_order_invariance(&m, 20, 23)
            .unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn partition_ignores_run_order() {
    for name in ["whilefun", "mips-mini"] {
        let m = load_builtin_strict(name);
        props::check_partition_run_order_invariance(&m, 6, 5, 29)
            .unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
