//! Pitch statistics, melody alignment, contours and harmonic rhythm.

mod align;
mod export;
mod features;
mod harmony;
mod melody;
mod tempo;

use thiserror::Error;

pub use align::{
    align_melodies, align_melodies_with, average_deviation, pitch_class_deviation, AlignmentResult,
    DeviationReport, NoteDeviation, DEFAULT_GAP_PENALTY,
};
pub use export::{contour_csv, contour_svg, harmonic_rhythm_csv, harmonic_rhythm_svg, Series};
pub use features::{
    corpus_stats, corpus_stats_with, n_pitches, pitch_class_entropy, pitch_in_scale, pitch_range,
    polyphony, segment_features, FeatureReport, FeatureSummary, PitchClassSet, SegmentEntry,
    SegmentFeatures, POLYPHONY_STEPS_PER_BEAT,
};
pub use harmony::{harmonic_rhythm, harmonic_rhythm_with, ChordLabel, HarmonicRhythmSeries, HarmonyConfig};
pub use melody::{contour, extract_melody_skyline, ContourPoint, Melody, MelodyNote, ONSET_CLUSTER_SECONDS};
pub use tempo::{fit_beat_period, melody_at_period};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("segment has no notes")]
    EmptySegment,
    #[error("group has no segments")]
    EmptyGroup,
    #[error("scale must have 7 pitch classes, got {0}")]
    InvalidScale(usize),
    #[error("both melodies are empty")]
    EmptyMelodies,
    #[error("melody is empty")]
    EmptyMelody,
    #[error("melody is not monophonic at note {0}")]
    NotMonophonic(usize),
    #[error("melody note {0} has a non-positive duration")]
    BadDuration(usize),
    #[error("alignment has no aligned note pairs")]
    NoAlignedNotes,
    #[error("alignment does not match the melodies: {0}")]
    InvalidAlignment(String),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;
