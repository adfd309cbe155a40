use serde::{Deserialize, Serialize};

use super::{AnalysisError, Result};
use crate::midi::NoteEvent;
use crate::par::{self, Execution};
use crate::segment::Segment;

/// Sampling rate of the polyphony grid: fine enough for 32nd-note triplets.
pub const POLYPHONY_STEPS_PER_BEAT: u32 = 24;

/// A set of pitch classes stored as a 12-bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PitchClassSet(u16);

impl PitchClassSet {
    pub fn from_classes(classes: impl IntoIterator<Item = u8>) -> Self {
        PitchClassSet(classes.into_iter().fold(0, |m, c| m | 1 << (c % 12)))
    }

    pub fn major_scale(tonic: u8) -> Self {
        Self::from_classes([0, 2, 4, 5, 7, 9, 11].map(|i| (tonic + i) % 12))
    }

    pub fn contains(self, pitch_class: u8) -> bool {
        self.0 >> (pitch_class % 12) & 1 == 1
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Transposes the set up by `semitones`.
    pub fn rotated(self, semitones: u8) -> Self {
        let s = semitones as u32 % 12;
        PitchClassSet(((self.0 << s) | (self.0 >> (12 - s))) & 0x0FFF)
    }
}

fn non_empty(seg: &Segment) -> Result<&[NoteEvent]> {
    if seg.notes.is_empty() {
        Err(AnalysisError::EmptySegment)
    } else {
        Ok(&seg.notes)
    }
}

/// Shannon entropy in bits of the note-count pitch-class histogram.
pub fn pitch_class_entropy(seg: &Segment) -> Result<f64> {
    let notes = non_empty(seg)?;
    let mut counts = [0usize; 12];
    for n in notes {
        counts[n.pitch_class() as usize] += 1;
    }
    let total = notes.len() as f64;
    Ok(counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum())
}

/// Highest minus lowest MIDI pitch.
pub fn pitch_range(seg: &Segment) -> Result<u8> {
    let notes = non_empty(seg)?;
    let hi = notes.iter().map(|n| n.pitch).max().unwrap_or(0);
    let lo = notes.iter().map(|n| n.pitch).min().unwrap_or(0);
    Ok(hi - lo)
}

/// Number of distinct MIDI pitches (octaves are distinct).
pub fn n_pitches(seg: &Segment) -> Result<usize> {
    let notes = non_empty(seg)?;
    let mut seen = [false; 128];
    notes.iter().for_each(|n| seen[n.pitch as usize] = true);
    Ok(seen.iter().filter(|&&s| s).count())
}

/// Fraction of notes whose pitch class lies in `scale`, or the best such
/// fraction over the twelve major scales when no scale is given.
pub fn pitch_in_scale(seg: &Segment, scale: Option<PitchClassSet>) -> Result<f64> {
    let notes = non_empty(seg)?;
    let mut counts = [0usize; 12];
    for n in notes {
        counts[n.pitch_class() as usize] += 1;
    }
    let ratio = |set: PitchClassSet| {
        let inside: usize = (0..12u8).filter(|&c| set.contains(c)).map(|c| counts[c as usize]).sum();
        inside as f64 / notes.len() as f64
    };
    match scale {
        Some(set) if set.len() != 7 => Err(AnalysisError::InvalidScale(set.len())),
        Some(set) => Ok(ratio(set)),
        None => Ok((0..12).map(|t| ratio(PitchClassSet::major_scale(t))).fold(0.0, f64::max)),
    }
}

/// Smallest grid index `k` with `k / steps >= t`.
fn grid_ceil(t: f64, steps: f64) -> i64 {
    let mut k = (t * steps).ceil() as i64;
    while (k - 1) as f64 / steps >= t {
        k -= 1;
    }
    while (k as f64 / steps) < t {
        k += 1;
    }
    k
}

/// Mean number of simultaneously sounding notes, sampled every 1/24 beat and
/// averaged over the samples where at least one note sounds.
///
/// A note sounds at `t` when `onset <= t < onset + duration`. If no sample
/// point falls inside any note, the count is taken at each distinct onset instead.
pub fn polyphony(seg: &Segment) -> Result<f64> {
    non_empty(seg)?;
    let notes = seg.notes_in_beats();
    let steps = POLYPHONY_STEPS_PER_BEAT as f64;
    let spans: Vec<(usize, usize)> = notes
        .iter()
        .map(|n| (grid_ceil(n.onset, steps).max(0) as usize, grid_ceil(n.end(), steps).max(0) as usize))
        .collect();
    let len = spans.iter().map(|s| s.1).max().unwrap_or(0);
    let mut delta = vec![0i64; len + 1];
    for &(a, b) in &spans {
        if a < b {
            delta[a] += 1;
            delta[b] -= 1;
        }
    }
    let (mut active, mut sounding, mut total) = (0i64, 0u64, 0u64);
    for d in &delta[..len] {
        active += d;
        if active > 0 {
            sounding += 1;
            total += active as u64;
        }
    }
    if sounding > 0 {
        return Ok(total as f64 / sounding as f64);
    }
    let mut onsets: Vec<f64> = notes.iter().map(|n| n.onset).collect();
    onsets.dedup();
    let counts: usize = onsets
        .iter()
        .map(|&t| notes.iter().filter(|n| n.onset <= t && t < n.end()).count())
        .sum();
    Ok(counts as f64 / onsets.len() as f64)
}

/// The five per-segment statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentFeatures {
    pub pitch_class_entropy: f64,
    pub pitch_range: f64,
    pub polyphony: f64,
    pub n_pitches: f64,
    pub pitch_in_scale: f64,
}

impl SegmentFeatures {
    pub const NAMES: [&'static str; 5] =
        ["pitch_class_entropy", "pitch_range", "polyphony", "n_pitches", "pitch_in_scale"];

    pub fn values(&self) -> [f64; 5] {
        [self.pitch_class_entropy, self.pitch_range, self.polyphony, self.n_pitches, self.pitch_in_scale]
    }
}

pub fn segment_features(seg: &Segment) -> Result<SegmentFeatures> {
    Ok(SegmentFeatures {
        pitch_class_entropy: pitch_class_entropy(seg)?,
        pitch_range: pitch_range(seg)? as f64,
        polyphony: polyphony(seg)?,
        n_pitches: n_pitches(seg)? as f64,
        pitch_in_scale: pitch_in_scale(seg, None)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
}

impl FeatureSummary {
    fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        FeatureSummary { mean, sd: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEntry {
    pub segment_id: String,
    pub features: SegmentFeatures,
}

/// Per-segment statistics plus mean and standard deviation of each feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    pub per_segment: Vec<SegmentEntry>,
    pub pitch_class_entropy: FeatureSummary,
    pub pitch_range: FeatureSummary,
    pub polyphony: FeatureSummary,
    pub n_pitches: FeatureSummary,
    pub pitch_in_scale: FeatureSummary,
}

impl FeatureReport {
    pub fn summaries(&self) -> [(&'static str, FeatureSummary); 5] {
        [
            ("pitch_class_entropy", self.pitch_class_entropy),
            ("pitch_range", self.pitch_range),
            ("polyphony", self.polyphony),
            ("n_pitches", self.n_pitches),
            ("pitch_in_scale", self.pitch_in_scale),
        ]
    }

    /// `segment_id,entropy,range,polyphony,n_pitches,in_scale`, one row per segment.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("segment_id,entropy,range,polyphony,n_pitches,in_scale\n");
        for e in &self.per_segment {
            let f = &e.features;
            out.push_str(&format!(
                "{},{:.6},{},{:.6},{},{:.6}\n",
                e.segment_id, f.pitch_class_entropy, f.pitch_range, f.polyphony, f.n_pitches, f.pitch_in_scale
            ));
        }
        out
    }

    /// `feature,mean,sd`, one row per feature.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("feature,mean,sd\n");
        for (name, s) in self.summaries() {
            out.push_str(&format!("{name},{:.6},{:.6}\n", s.mean, s.sd));
        }
        out
    }
}

pub fn corpus_stats(group: &[Segment]) -> Result<FeatureReport> {
    corpus_stats_with(group, Execution::default())
}

/// Computes [`FeatureReport`] for a group, evaluating segments with `exec`.
pub fn corpus_stats_with(group: &[Segment], exec: Execution) -> Result<FeatureReport> {
    if group.is_empty() {
        return Err(AnalysisError::EmptyGroup);
    }
    let features = par::map(exec, group, segment_features).into_iter().collect::<Result<Vec<_>>>()?;
    let per_segment: Vec<SegmentEntry> = group
        .iter()
        .zip(features)
        .map(|(s, features)| SegmentEntry { segment_id: s.id.clone(), features })
        .collect();
    let col = |i: usize| per_segment.iter().map(move |e| e.features.values()[i]);
    Ok(FeatureReport {
        pitch_class_entropy: FeatureSummary::of(col(0)),
        pitch_range: FeatureSummary::of(col(1)),
        polyphony: FeatureSummary::of(col(2)),
        n_pitches: FeatureSummary::of(col(3)),
        pitch_in_scale: FeatureSummary::of(col(4)),
        per_segment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::Clock;

    fn seg(notes: &[(f64, f64, u8)]) -> Segment {
        Segment::new("t", Clock::Beats, notes.iter().map(|&(o, d, p)| NoteEvent::new(o, d, p, 64)).collect())
    }

    fn pitches(ps: &[u8]) -> Segment {
        seg(&ps.iter().enumerate().map(|(i, &p)| (i as f64, 1.0, p)).collect::<Vec<_>>())
    }

    #[test]
    fn entropy_cases() {
        assert_eq!(pitch_class_entropy(&pitches(&[60; 8])).unwrap(), 0.0);
        let chromatic: Vec<u8> = (60..72).collect();
        assert!((pitch_class_entropy(&pitches(&chromatic)).unwrap() - 12f64.log2()).abs() < 1e-12);
        assert!((pitch_class_entropy(&pitches(&[60, 60, 67, 67])).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(pitch_class_entropy(&seg(&[])), Err(AnalysisError::EmptySegment));
    }

    #[test]
    fn range_and_count() {
        assert_eq!(pitch_range(&pitches(&[60])).unwrap(), 0);
        assert_eq!(pitch_range(&pitches(&[60, 84])).unwrap(), 24);
        assert_eq!(n_pitches(&pitches(&[60; 5])).unwrap(), 1);
        assert_eq!(n_pitches(&pitches(&(60..72).collect::<Vec<_>>())).unwrap(), 12);
        assert_eq!(n_pitches(&pitches(&[60, 72])).unwrap(), 2);
    }

    #[test]
    fn scale_ratio() {
        let white = pitches(&[60, 62, 64, 65, 67, 69, 71, 72]);
        assert_eq!(pitch_in_scale(&white, Some(PitchClassSet::major_scale(0))).unwrap(), 1.0);
        let mixed = pitches(&[60, 64, 67, 66]);
        assert_eq!(pitch_in_scale(&mixed, Some(PitchClassSet::major_scale(0))).unwrap(), 0.75);
        let chromatic = pitches(&(60..72).collect::<Vec<_>>());
        assert!((pitch_in_scale(&chromatic, None).unwrap() - 7.0 / 12.0).abs() < 1e-12);
        let bad = PitchClassSet::from_classes([0, 4, 7]);
        assert_eq!(pitch_in_scale(&chromatic, Some(bad)), Err(AnalysisError::InvalidScale(3)));
    }

    #[test]
    fn rotation_matches_transposed_scale() {
        for t in 0..12 {
            assert_eq!(PitchClassSet::major_scale(0).rotated(t), PitchClassSet::major_scale(t));
        }
    }

    #[test]
    fn polyphony_cases() {
        assert_eq!(polyphony(&seg(&[(0.0, 16.0, 60), (0.0, 16.0, 64), (0.0, 16.0, 67)])).unwrap(), 3.0);
        assert_eq!(polyphony(&seg(&[(0.0, 1.0, 60), (1.0, 1.0, 62), (2.0, 2.0, 64)])).unwrap(), 1.0);
        // Two voices for the first two beats, one voice for the next two.
        assert_eq!(polyphony(&seg(&[(0.0, 4.0, 60), (0.0, 2.0, 64)])).unwrap(), 1.5);
        // Silence does not dilute the mean.
        assert_eq!(polyphony(&seg(&[(0.0, 1.0, 60), (8.0, 1.0, 62)])).unwrap(), 1.0);
    }

    #[test]
    fn polyphony_tiny_notes_between_grid_points() {
        let s = seg(&[(0.01, 0.01, 60), (0.01, 0.01, 64)]);
        assert_eq!(polyphony(&s).unwrap(), 2.0);
    }

    #[test]
    fn stats_of_one_and_two() {
        let one = corpus_stats(&[pitches(&[60, 64, 67])]).unwrap();
        for (_, s) in one.summaries() {
            assert_eq!(s.sd, 0.0);
        }
        assert_eq!(corpus_stats(&[]), Err(AnalysisError::EmptyGroup));
        let two = FeatureSummary::of([2.0, 4.0].into_iter());
        assert_eq!((two.mean, two.sd), (3.0, 1.0));
        let csv = one.to_csv();
        assert!(csv.starts_with("segment_id,entropy,range,polyphony,n_pitches,in_scale\nt,"));
    }
}
