//! Side-by-side comparison of a saved Original/Variation pair.

use serde::{Deserialize, Serialize};

use super::scoring::{score_candidate_with, ScoreConfig, SimilarityScore, VariationSegment};
use super::segmentation::OriginalSegment;
use super::Result;
use crate::analysis::{
    align_melodies_with, average_deviation, contour, extract_melody_skyline, fit_beat_period, melody_at_period,
    segment_features, AlignmentResult, ContourPoint, DeviationReport, Melody, SegmentFeatures,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReview {
    pub score: SimilarityScore,
    /// Seconds per beat fitted to the Variation's melody onsets.
    pub beat_period_s: f64,
    pub original_contour: Vec<ContourPoint>,
    pub variation_contour: Vec<ContourPoint>,
    pub alignment: AlignmentResult,
    pub deviation: DeviationReport,
    pub original_features: SegmentFeatures,
    pub variation_features: SegmentFeatures,
}

/// Variation skyline melody on a beat grid fitted to its onsets. The
/// nominal period stretches the window over the Original's length.
pub fn variation_melody(original: &OriginalSegment, variation: &VariationSegment) -> Result<(Melody, f64)> {
    let skyline = extract_melody_skyline(&variation.segment())?;
    // The skyline reads seconds at 2 beats per second.
    let onsets: Vec<f64> = skyline.notes().iter().map(|n| n.onset / 2.0).collect();
    let nominal = variation.length_s() / original.length_beats();
    let period = fit_beat_period(&onsets, nominal);
    Ok((melody_at_period(&skyline, period), period))
}

pub fn review_pair(original: &OriginalSegment, variation: &VariationSegment, config: &ScoreConfig) -> Result<PairReview> {
    let score = score_candidate_with(original, variation, config)?;
    let original_melody = extract_melody_skyline(&original.melody_segment())?;
    let (var_melody, beat_period_s) = variation_melody(original, variation)?;
    let alignment = align_melodies_with(&original_melody, &var_melody, config.gap_penalty)?;
    let deviation = average_deviation(&alignment, &original_melody, &var_melody)?;
    Ok(PairReview {
        score,
        beat_period_s,
        original_contour: contour(&original_melody)?,
        variation_contour: contour(&var_melody)?,
        alignment,
        deviation,
        original_features: segment_features(&original.rendered_segment())?,
        variation_features: segment_features(&variation.segment())?,
    })
}
