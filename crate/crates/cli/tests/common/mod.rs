#![allow(dead_code)]

use std::path::{Path, PathBuf};

use varkit::corpus::synthetic::SyntheticCorpus;
use varkit::corpus::{segment_leadsheet, trim_to_refrain, CorpusStore};

/// Registers the synthetic corpus in a fresh store under `dir`.
pub fn synthetic_store(dir: &Path) -> (CorpusStore, SyntheticCorpus) {
    let corpus = SyntheticCorpus::generate(1);
    let mut store = CorpusStore::open_or_create(manifest_path(dir)).unwrap();
    for s in &corpus.standards {
        store.add_standard(&s.sheet.id, &s.sheet.title, s.sheet.key_hint).unwrap();
        let refrain = trim_to_refrain(&s.sheet, &s.sections).unwrap();
        store.add_segments(&segment_leadsheet(&refrain, 4).unwrap()).unwrap();
    }
    for p in &corpus.performances {
        store.add_performance(&p.id, &p.standard_id, &p.performer, &p.sequence).unwrap();
    }
    (store, corpus)
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("corpus/manifest.json")
}
