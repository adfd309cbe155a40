//! Similarity between an Original segment and a window of a performance,
//! and the ranked scan of candidate windows.

use serde::{Deserialize, Serialize};

use super::leadsheet::BEATS_PER_BAR;
use super::segmentation::OriginalSegment;
use super::{CorpusError, Result};
use crate::analysis::{align_melodies_with, average_deviation, extract_melody_skyline, Melody, DEFAULT_GAP_PENALTY};
use crate::midi::NoteEvent;
use crate::par::{self, Execution};
use crate::segment::{Clock, Segment, BEATS_PER_SECOND};

/// A slice of a performance on the second clock. Notes keep their absolute
/// onsets; each is clipped so it ends by `end_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationSegment {
    pub id: String,
    pub performance_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub notes: Vec<NoteEvent>,
}

impl VariationSegment {
    /// Cuts `[start_s, end_s)` out of a performance's (sorted) notes.
    pub fn cut(performance_id: &str, notes: &[NoteEvent], start_s: f64, end_s: f64) -> Result<Self> {
        if !(start_s >= 0.0 && end_s > start_s && end_s.is_finite()) {
            return Err(CorpusError::BadWindow { start_s, end_s });
        }
        let first = notes.partition_point(|n| n.onset < start_s);
        let clipped = notes[first..]
            .iter()
            .take_while(|n| n.onset < end_s)
            .map(|n| NoteEvent { duration: n.duration.min(end_s - n.onset), ..*n })
            .collect();
        Ok(VariationSegment {
            id: variation_id(performance_id, start_s, end_s),
            performance_id: performance_id.to_string(),
            start_s,
            end_s,
            notes: clipped,
        })
    }

    pub fn length_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Notes rebased so the window starts at 0 s.
    pub fn rebased_notes(&self) -> Vec<NoteEvent> {
        self.notes.iter().map(|n| NoteEvent { onset: n.onset - self.start_s, ..*n }).collect()
    }

    pub fn segment(&self) -> Segment {
        Segment::new(self.id.clone(), Clock::Seconds, self.rebased_notes())
    }
}

/// `{performance}-w{start_ms}-{end_ms}`.
pub fn variation_id(performance_id: &str, start_s: f64, end_s: f64) -> String {
    format!("{}-w{}-{}", performance_id, (start_s * 1000.0).round() as i64, (end_s * 1000.0).round() as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityWeights {
    pub melodic: f64,
    pub harmonic: f64,
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        SimilarityWeights { melodic: 0.5, harmonic: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub weights: SimilarityWeights,
    pub gap_penalty: f64,
    pub transposition_invariant: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig { weights: SimilarityWeights::default(), gap_penalty: DEFAULT_GAP_PENALTY, transposition_invariant: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub value: f64,
    pub melodic: f64,
    pub harmonic: f64,
    /// Semitones added to the window's pitches for the reported score.
    pub transposition: u8,
}

/// Average deviation at which melodic similarity reaches 0.
const MAX_DEVIATION: f64 = 6.0;

type Histogram = [f64; 12];

/// Melody and per-bar pitch-class histograms on the Original's beat frame.
struct Profile {
    melody: Melody,
    bars: Vec<Histogram>,
}

impl Profile {
    /// `notes` start at 0 s; `beats_per_second` maps them onto the frame.
    fn new(notes: &[NoteEvent], beats_per_second: f64, n_bars: usize) -> Result<Profile> {
        // Microsecond quantisation absorbs rounding from rebasing windows.
        let q = |t: f64| (t * 1e6).round() / 1e6;
        let notes: Vec<NoteEvent> = notes
            .iter()
            .map(|n| {
                let onset = q(n.onset);
                NoteEvent { onset, duration: (q(n.end()) - onset).max(1e-6), ..*n }
            })
            .collect();
        let seg = Segment::new("", Clock::Seconds, notes.clone());
        // The skyline reads seconds at the render tempo; rescale to the frame.
        let k = beats_per_second / BEATS_PER_SECOND;
        let skyline = extract_melody_skyline(&seg)?;
        let melody = Melody::new(
            skyline
                .notes()
                .iter()
                .map(|n| crate::analysis::MelodyNote { onset: n.onset * k, duration: n.duration * k, ..*n })
                .collect(),
        )?;
        let mut bars = vec![[0.0; 12]; n_bars];
        for n in &notes {
            let (s, e) = (n.onset * beats_per_second, n.end() * beats_per_second);
            for (b, h) in bars.iter_mut().enumerate() {
                let lo = b as f64 * BEATS_PER_BAR;
                let overlap = e.min(lo + BEATS_PER_BAR) - s.max(lo);
                if overlap > 0.0 {
                    h[n.pitch_class() as usize] += overlap;
                }
            }
        }
        Ok(Profile { melody, bars })
    }
}

fn cosine(a: &Histogram, b: &Histogram) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        // sqrt(na*nb) is exactly na when a == b, so self-similarity is 1.
        _ => (dot / (na * nb).sqrt()).clamp(0.0, 1.0),
    }
}

/// Moves every pitch class up by `r`, keeping pitches inside the MIDI range;
/// only pitch classes matter to the melodic term.
fn shift_classes(m: &Melody, r: u8) -> Melody {
    let notes = m
        .notes()
        .iter()
        .map(|n| {
            let p = n.pitch + r;
            crate::analysis::MelodyNote { pitch: if p > 127 { p - 12 } else { p }, ..*n }
        })
        .collect();
    Melody::new(notes).expect("pitch shifts keep a melody valid")
}

fn rotate(h: &Histogram, r: usize) -> Histogram {
    let mut out = [0.0; 12];
    for (pc, v) in h.iter().enumerate() {
        out[(pc + r) % 12] = *v;
    }
    out
}

/// Scores windows against one Original; the Original's profile is built once.
pub struct CandidateScorer {
    config: ScoreConfig,
    reference: Profile,
    length_beats: f64,
}

impl CandidateScorer {
    pub fn new(original: &OriginalSegment, config: ScoreConfig) -> Result<Self> {
        if original.notes.is_empty() {
            return Err(CorpusError::EmptyMelody);
        }
        let w = config.weights;
        if !(w.melodic >= 0.0 && w.harmonic >= 0.0 && w.melodic + w.harmonic > 0.0) {
            return Err(CorpusError::BadWeights);
        }
        let n_bars = original.bars.max(1) as usize;
        let reference = Profile::new(&original.render(), BEATS_PER_SECOND, n_bars)?;
        Ok(CandidateScorer { config, reference, length_beats: original.length_beats() })
    }

    /// Scores window notes that start at 0 s and span `length_s` seconds.
    pub fn score_notes(&self, notes: &[NoteEvent], length_s: f64) -> Result<SimilarityScore> {
        if notes.is_empty() {
            return Err(CorpusError::EmptyWindow);
        }
        if !(length_s > 0.0) {
            return Err(CorpusError::BadWindow { start_s: 0.0, end_s: length_s });
        }
        let window = Profile::new(notes, self.length_beats / length_s, self.reference.bars.len())?;
        let rotations = if self.config.transposition_invariant { 12 } else { 1 };
        let mut best: Option<SimilarityScore> = None;
        for r in 0..rotations {
            let s = self.score_rotation(&window, r)?;
            if best.is_none_or(|b| s.value > b.value) {
                best = Some(s);
            }
        }
        Ok(best.expect("at least one rotation"))
    }

    fn score_rotation(&self, window: &Profile, r: usize) -> Result<SimilarityScore> {
        let melody = if r == 0 { window.melody.clone() } else { shift_classes(&window.melody, r as u8) };
        let alignment = align_melodies_with(&self.reference.melody, &melody, self.config.gap_penalty)?;
        let melodic = if alignment.n_aligned == 0 {
            0.0
        } else {
            let dev = average_deviation(&alignment, &self.reference.melody, &melody)?.average_deviation;
            let coverage = alignment.n_aligned as f64 / self.reference.melody.len().max(melody.len()) as f64;
            coverage * (1.0 - (dev / MAX_DEVIATION).min(1.0))
        };
        let harmonic = self
            .reference
            .bars
            .iter()
            .zip(&window.bars)
            .map(|(a, b)| cosine(a, &rotate(b, r)))
            .sum::<f64>()
            / self.reference.bars.len() as f64;
        let w = self.config.weights;
        let value = (w.melodic * melodic + w.harmonic * harmonic) / (w.melodic + w.harmonic);
        Ok(SimilarityScore { value: value.clamp(0.0, 1.0), melodic, harmonic, transposition: r as u8 })
    }
}

pub fn score_candidate(
    original: &OriginalSegment,
    window: &VariationSegment,
    transposition_invariant: bool,
) -> Result<SimilarityScore> {
    score_candidate_with(original, window, &ScoreConfig { transposition_invariant, ..ScoreConfig::default() })
}

pub fn score_candidate_with(
    original: &OriginalSegment,
    window: &VariationSegment,
    config: &ScoreConfig,
) -> Result<SimilarityScore> {
    if window.notes.is_empty() {
        return Err(CorpusError::EmptyWindow);
    }
    CandidateScorer::new(original, *config)?.score_notes(&window.rebased_notes(), window.length_s())
}

pub const SCAN_STEP_S: f64 = 0.5;
pub const DEFAULT_TOP_K: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub start_s: f64,
    pub end_s: f64,
    pub score: SimilarityScore,
}

/// Window lengths from half to twice the rendered duration on the scan grid,
/// plus the rendered duration itself.
pub fn candidate_lengths(rendered_s: f64) -> Vec<f64> {
    let lo = (0.5 * rendered_s / SCAN_STEP_S).ceil() as i64;
    let hi = (2.0 * rendered_s / SCAN_STEP_S).floor() as i64;
    let mut lengths: Vec<f64> = (lo.max(1)..=hi).map(|k| k as f64 * SCAN_STEP_S).collect();
    if !lengths.contains(&rendered_s) {
        lengths.push(rendered_s);
        lengths.sort_by(f64::total_cmp);
    }
    lengths
}

/// Ranks every window on the scan grid that fits inside `[0, duration_s]`
/// and holds at least one note: best value first, then earlier start, then
/// shorter length.
pub fn scan_candidates(
    original: &OriginalSegment,
    performance: &[NoteEvent],
    duration_s: f64,
    config: &ScoreConfig,
    top_k: usize,
    exec: Execution,
) -> Result<Vec<Candidate>> {
    let scorer = CandidateScorer::new(original, *config)?;
    let mut notes = performance.to_vec();
    crate::midi::sort_notes(&mut notes);
    let mut windows = Vec::new();
    for length in candidate_lengths(original.rendered_seconds()) {
        let mut k = 0;
        loop {
            let start = k as f64 * SCAN_STEP_S;
            if start + length > duration_s + 1e-9 {
                break;
            }
            windows.push((start, length));
            k += 1;
        }
    }
    let scored = par::map(exec, &windows, |&(start, length)| {
        let w = VariationSegment::cut("", &notes, start, start + length).ok()?;
        if w.notes.is_empty() {
            return None;
        }
        let score = scorer.score_notes(&w.rebased_notes(), length).ok()?;
        Some(Candidate { start_s: start, end_s: start + length, score })
    });
    let mut ranked: Vec<Candidate> = scored.into_iter().flatten().collect();
    ranked.sort_by(|a, b| {
        b.score
            .value
            .total_cmp(&a.score.value)
            .then(a.start_s.total_cmp(&b.start_s))
            .then((a.end_s - a.start_s).total_cmp(&(b.end_s - b.start_s)))
    });
    ranked.truncate(top_k);
    Ok(ranked)
}
