//! Needleman-Wunsch alignment of melodies and the average deviation score
//! over aligned note pairs.

use serde::{Deserialize, Serialize};

use super::melody::{Melody, MelodyNote};
use super::{AnalysisError, Result};

/// Cost of leaving one note unmatched.
pub const DEFAULT_GAP_PENALTY: f64 = 2.0;

/// Circular pitch-class distance, in `0..=6`.
pub fn pitch_class_deviation(a: u8, b: u8) -> u8 {
    let d = (a as i16 % 12 - b as i16 % 12).unsigned_abs() as u8;
    d.min(12 - d)
}

fn duration_deviation(a: &MelodyNote, b: &MelodyNote) -> f64 {
    (a.duration - b.duration).abs()
}

fn substitution_cost(a: &MelodyNote, b: &MelodyNote) -> f64 {
    pitch_class_deviation(a.pitch, b.pitch) as f64 + duration_deviation(a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// Index into the first and second melody; `None` marks a gap.
    pub pairs: Vec<(Option<usize>, Option<usize>)>,
    pub cost: f64,
    pub n_aligned: usize,
}

impl AlignmentResult {
    /// The same alignment with the roles of the two melodies exchanged.
    pub fn swapped(&self) -> AlignmentResult {
        AlignmentResult {
            pairs: self.pairs.iter().map(|&(a, b)| (b, a)).collect(),
            cost: self.cost,
            n_aligned: self.n_aligned,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Step {
    Diagonal,
    /// The note of `a` is matched against a gap.
    GapInB,
    /// The note of `b` is matched against a gap.
    GapInA,
}

pub fn align_melodies(a: &Melody, b: &Melody) -> Result<AlignmentResult> {
    align_melodies_with(a, b, DEFAULT_GAP_PENALTY)
}

/// Global alignment minimizing substitution plus gap costs.
///
/// Ties are broken toward the diagonal, then a gap in `b`, then a gap in `a`.
pub fn align_melodies_with(a: &Melody, b: &Melody, gap: f64) -> Result<AlignmentResult> {
    let (xs, ys) = (a.notes(), b.notes());
    if xs.is_empty() && ys.is_empty() {
        return Err(AnalysisError::EmptyMelodies);
    }
    let (n, m) = (xs.len(), ys.len());
    let width = m + 1;
    let mut cost = vec![0.0f64; (n + 1) * width];
    let mut step = vec![Step::Diagonal; (n + 1) * width];
    for i in 1..=n {
        cost[i * width] = cost[(i - 1) * width] + gap;
        step[i * width] = Step::GapInB;
    }
    for j in 1..=m {
        cost[j] = cost[j - 1] + gap;
        step[j] = Step::GapInA;
    }
    for i in 1..=n {
        for j in 1..=m {
            let mut best = cost[(i - 1) * width + j - 1] + substitution_cost(&xs[i - 1], &ys[j - 1]);
            let mut choice = Step::Diagonal;
            let up = cost[(i - 1) * width + j] + gap;
            if up < best {
                best = up;
                choice = Step::GapInB;
            }
            let left = cost[i * width + j - 1] + gap;
            if left < best {
                best = left;
                choice = Step::GapInA;
            }
            cost[i * width + j] = best;
            step[i * width + j] = choice;
        }
    }

    let mut pairs = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        match step[i * width + j] {
            Step::Diagonal => {
                pairs.push((Some(i - 1), Some(j - 1)));
                i -= 1;
                j -= 1;
            }
            Step::GapInB => {
                pairs.push((Some(i - 1), None));
                i -= 1;
            }
            Step::GapInA => {
                pairs.push((None, Some(j - 1)));
                j -= 1;
            }
        }
    }
    pairs.reverse();
    let n_aligned = pairs.iter().filter(|(x, y)| x.is_some() && y.is_some()).count();
    Ok(AlignmentResult { pairs, cost: cost[n * width + m], n_aligned })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteDeviation {
    pub pc_dev: f64,
    pub dur_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub average_deviation: f64,
    pub per_note: Vec<NoteDeviation>,
}

/// Mean of pitch-class deviation plus duration deviation over aligned note
/// pairs. Gapped notes are left out of both the sum and the count.
pub fn average_deviation(alignment: &AlignmentResult, a: &Melody, b: &Melody) -> Result<DeviationReport> {
    let (xs, ys) = (a.notes(), b.notes());
    let mut per_note = Vec::new();
    for &(i, j) in &alignment.pairs {
        if let (Some(i), Some(j)) = (i, j) {
            let (x, y) = match (xs.get(i), ys.get(j)) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(AnalysisError::InvalidAlignment(format!("pair ({i}, {j}) out of range"))),
            };
            per_note.push(NoteDeviation {
                pc_dev: pitch_class_deviation(x.pitch, y.pitch) as f64,
                dur_dev: duration_deviation(x, y),
            });
        }
    }
    if per_note.is_empty() {
        return Err(AnalysisError::NoAlignedNotes);
    }
    let total: f64 = per_note.iter().map(|d| d.pc_dev + d.dur_dev).sum();
    Ok(DeviationReport { average_deviation: total / per_note.len() as f64, per_note })
}
