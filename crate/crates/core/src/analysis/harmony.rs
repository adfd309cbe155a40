//! Harmonic rhythm from symbolic notes: chroma frames are labelled with the
//! best-matching major or minor triad and label switches are counted per bar.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{AnalysisError, Result};
use crate::segment::Segment;

const NOTE_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];
const BEATS_PER_BAR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChordLabel {
    Major(u8),
    Minor(u8),
    /// No triad matches well enough.
    NoChord,
}

impl ChordLabel {
    fn all_triads() -> impl Iterator<Item = ChordLabel> {
        (0..12u8).flat_map(|r| [ChordLabel::Major(r), ChordLabel::Minor(r)])
    }

    fn template(self) -> [f64; 12] {
        let mut t = [0.0; 12];
        let (root, third) = match self {
            ChordLabel::Major(r) => (r, 4),
            ChordLabel::Minor(r) => (r, 3),
            ChordLabel::NoChord => return t,
        };
        for i in [0, third, 7] {
            t[((root + i) % 12) as usize] = 1.0;
        }
        t
    }
}

impl fmt::Display for ChordLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChordLabel::Major(r) => write!(f, "{}:maj", NOTE_NAMES[*r as usize % 12]),
            ChordLabel::Minor(r) => write!(f, "{}:min", NOTE_NAMES[*r as usize % 12]),
            ChordLabel::NoChord => f.write_str("N"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonyConfig {
    pub frames_per_beat: usize,
    /// A new label must hold at least this long to count as a chord change;
    /// shorter runs are absorbed into the preceding label.
    pub min_persist_beats: f64,
    /// Frames whose best cosine similarity is below this are labelled N.
    pub threshold: f64,
}

impl Default for HarmonyConfig {
    fn default() -> Self {
        HarmonyConfig { frames_per_beat: 1, min_persist_beats: 1.0, threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicRhythmSeries {
    /// `(bar index from 0, chord changes starting in that bar)`.
    pub chords_per_bar: Vec<(usize, usize)>,
    /// `(start beat, label)`; consecutive spans tile `[0, length_beats)`.
    pub labels: Vec<(f64, ChordLabel)>,
    pub length_beats: f64,
}

impl HarmonicRhythmSeries {
    pub fn total_changes(&self) -> usize {
        self.chords_per_bar.iter().map(|c| c.1).sum()
    }
}

fn cosine(a: &[f64; 12], b: &[f64; 12]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Best triad for a chroma vector; the first template wins ties.
fn label_frame(chroma: &[f64; 12], threshold: f64) -> ChordLabel {
    let mut best = (ChordLabel::NoChord, f64::NEG_INFINITY);
    for label in ChordLabel::all_triads() {
        let s = cosine(chroma, &label.template());
        if s > best.1 {
            best = (label, s);
        }
    }
    if best.1 < threshold {
        ChordLabel::NoChord
    } else {
        best.0
    }
}

pub fn harmonic_rhythm(seg: &Segment) -> Result<HarmonicRhythmSeries> {
    harmonic_rhythm_with(seg, None, &HarmonyConfig::default())
}

/// Harmonic rhythm over `[0, length_beats)`; the length defaults to the last
/// note end rounded up to a whole beat.
pub fn harmonic_rhythm_with(
    seg: &Segment,
    length_beats: Option<f64>,
    config: &HarmonyConfig,
) -> Result<HarmonicRhythmSeries> {
    if seg.is_empty() {
        return Err(AnalysisError::EmptySegment);
    }
    let notes = seg.notes_in_beats();
    let end = notes.iter().map(|n| n.end()).fold(0.0, f64::max);
    let length = length_beats.unwrap_or(end.ceil()).max(1.0);
    let fpb = config.frames_per_beat.max(1);
    let frame_len = 1.0 / fpb as f64;
    let n_frames = (length * fpb as f64).ceil() as usize;

    let mut chroma = vec![[0.0f64; 12]; n_frames];
    for n in &notes {
        let first = (n.onset / frame_len).floor().max(0.0) as usize;
        let last = ((n.end() / frame_len).ceil() as usize).min(n_frames);
        for (f, frame) in chroma.iter_mut().enumerate().take(last).skip(first) {
            let lo = f as f64 * frame_len;
            let overlap = n.end().min(lo + frame_len) - n.onset.max(lo);
            if overlap > 0.0 {
                frame[n.pitch_class() as usize] += overlap;
            }
        }
    }
    let frames: Vec<ChordLabel> = chroma.iter().map(|c| label_frame(c, config.threshold)).collect();

    // Run-length encode, then absorb runs that are too short to count.
    let mut runs: Vec<(usize, usize, ChordLabel)> = Vec::new();
    for (f, &label) in frames.iter().enumerate() {
        match runs.last_mut() {
            Some(run) if run.2 == label => run.1 += 1,
            _ => runs.push((f, 1, label)),
        }
    }
    let min_frames = ((config.min_persist_beats * fpb as f64).ceil() as usize).max(1);
    let mut merged: Vec<(usize, usize, ChordLabel)> = Vec::new();
    for run in runs {
        match merged.last_mut() {
            Some(prev) if run.1 < min_frames || prev.2 == run.2 => prev.1 += run.1,
            _ => merged.push(run),
        }
    }
    // A short leading run takes the label of its successor.
    if merged.len() > 1 && merged[0].1 < min_frames {
        let first = merged.remove(0);
        merged[0].0 = first.0;
        merged[0].1 += first.1;
    }

    let n_bars = (length / BEATS_PER_BAR as f64).ceil() as usize;
    let mut chords_per_bar: Vec<(usize, usize)> = (0..n_bars).map(|b| (b, 0)).collect();
    let mut current: Option<ChordLabel> = None;
    for &(start, _, label) in &merged {
        if label == ChordLabel::NoChord {
            continue;
        }
        if current.is_some_and(|c| c != label) {
            let bar = (start as f64 * frame_len / BEATS_PER_BAR as f64).floor() as usize;
            if let Some(slot) = chords_per_bar.get_mut(bar) {
                slot.1 += 1;
            }
        }
        current = Some(label);
    }

    Ok(HarmonicRhythmSeries {
        chords_per_bar,
        labels: merged.iter().map(|&(start, _, l)| (start as f64 * frame_len, l)).collect(),
        length_beats: n_frames as f64 * frame_len,
    })
}
