//! Shared corpus loader for the integration test targets.
//!
//! Included by several test binaries; each uses a different subset, so
//! dead-code analysis is silenced for the whole module.
#![allow(dead_code)]

pub mod props;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;

#[derive(Debug, Deserialize)]
pub struct Corpus {
    pub program: Vec<Entry>,
}

#[derive(Debug, Deserialize)]
pub struct Entry {
    pub name: String,
    pub semantics: String,
    pub file: String,
    pub criterion: Vec<String>,
    pub inputs: Vec<Vec<u64>>,
    #[serde(default)]
    pub expected_oracle: Vec<u32>,
    #[serde(default)]
    pub expected_static: Vec<u32>,
}

impl Entry {
    pub fn source(&self, base: &Path) -> String {
        std::fs::read_to_string(base.join(&self.file))
            .unwrap_or_else(|e| panic!("corpus file {} must load: {e}", self.file))
    }

    pub fn oracle_set(&self) -> BTreeSet<u32> {
        self.expected_oracle.iter().copied().collect()
    }

    pub fn static_set(&self) -> BTreeSet<u32> {
        self.expected_static.iter().copied().collect()
    }
}

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

pub fn load_corpus() -> (Corpus, PathBuf) {
    let base = corpus_dir();
    let text =
        std::fs::read_to_string(base.join("manifest.toml")).expect("corpus manifest must load");
    let corpus: Corpus = toml::from_str(&text).expect("corpus manifest must parse");
    (corpus, base)
}

/// Everything the slicer needs from a semantics, computed once per test
/// binary: the module itself, the inferred side-effect facts, and the
/// refined instruction partition.
pub struct Lab {
    pub m: semslice::module::SemanticsModule,
    pub facts: std::collections::BTreeMap<semslice::sig::OpId, semslice::hypertree::SideEffectFact>,
    pub part: semslice::refine::ContextUpdatePartition,
}

pub fn lab(name: &str) -> &'static Lab {
    use std::sync::OnceLock;
    static WF: OnceLock<Lab> = OnceLock::new();
    static MIPS: OnceLock<Lab> = OnceLock::new();
    let cell = if name == "whilefun" { &WF } else { &MIPS };
    cell.get_or_init(|| {
        let m = semslice::assets::load_builtin_strict(name);
        let facts = semslice::hypertree::synthesize(&m).side_effects;
        let part = semslice::refine::refine(&m, 1, 12, semslice::engine::default_step_budget())
            .expect("refinement must succeed on a builtin semantics")
            .partition;
        Lab { m, facts, part }
    })
}
