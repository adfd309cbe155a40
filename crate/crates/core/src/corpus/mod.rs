//! Lead sheets, Original and Variation segments, candidate scoring and the
//! on-disk corpus manifest.

mod chord;
mod leadsheet;
mod manifest;
mod review;
mod scoring;
mod segmentation;
pub mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

pub use chord::{ChordQuality, ChordSymbol};
pub use leadsheet::{
    chord_spans, clip_notes, trim_to_refrain, ChordChange, KeyHint, LeadSheet, Mode, Section, SectionLabel,
    BEATS_PER_BAR, CHORD_CHANNEL, MELODY_CHANNEL,
};
pub use manifest::{
    load_manifest, save_manifest, CorpusStore, CorpusSummary, Manifest, PairRecord, PerformanceEntry, SegmentEntry,
    StandardEntry, VariationEntry, MANIFEST_VERSION,
};
pub use review::{review_pair, variation_melody, PairReview};
pub use scoring::{
    candidate_lengths, scan_candidates, score_candidate, score_candidate_with, variation_id, Candidate,
    CandidateScorer, ScoreConfig, SimilarityScore, SimilarityWeights, VariationSegment, DEFAULT_TOP_K, SCAN_STEP_S,
};
pub use segmentation::{
    segment_leadsheet, segment_leadsheet_with, OriginalSegment, SegmentationOptions, DEFAULT_BARS_PER_SEGMENT,
};

use crate::analysis::AnalysisError;
use crate::midi::MidiError;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unrecognised chord symbol {0:?}")]
    BadChordSymbol(String),
    #[error("lead sheet is not in 4/4")]
    NotCommonTime,
    #[error("melody note {0} is invalid")]
    InvalidNote(usize),
    #[error("melody is not monophonic at note {0}")]
    NotMonophonic(usize),
    #[error("first chord starts at beat {0}, not 0")]
    FirstChordNotAtZero(f64),
    #[error("chords are not strictly sorted by start beat")]
    ChordsUnsorted,
    #[error("no refrain section")]
    NoRefrain,
    #[error("section {0:?} is empty")]
    BadSection(Section),
    #[error("melody is empty")]
    EmptyMelody,
    #[error("bars per segment must be at least 1")]
    BadBarsPerSegment,
    #[error("segment boundary at bar {0} overlaps or runs past the sheet")]
    BadBoundary(u32),
    #[error("window has no notes")]
    EmptyWindow,
    #[error("invalid window [{start_s}, {end_s})")]
    BadWindow { start_s: f64, end_s: f64 },
    #[error("similarity weights must be non-negative and not both zero")]
    BadWeights,
    #[error("{kind} {id:?} already exists")]
    Duplicate { kind: &'static str, id: String },
    #[error("{kind} {id:?} not found")]
    NotFound { kind: &'static str, id: String },
    #[error("{kind} {id:?} refers to missing {target} {target_id:?}")]
    Dangling { kind: &'static str, id: String, target: &'static str, target_id: String },
    #[error("invalid id {0:?}")]
    InvalidId(String),
    #[error("pair {id:?} is inconsistent: {reason}")]
    PairMismatch { id: String, reason: String },
    #[error("unsupported manifest version {0}")]
    UnsupportedVersion(u32),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Midi { path: PathBuf, source: MidiError },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

pub type Result<T> = std::result::Result<T, CorpusError>;
