use serde::{Deserialize, Serialize};

use super::{AnalysisError, Result};
use crate::segment::{Clock, Segment, BEATS_PER_SECOND};

/// Notes whose onsets fall within this span of a cluster's first onset are
/// treated as struck together.
pub const ONSET_CLUSTER_SECONDS: f64 = 0.05;

/// A melody note on the beat clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelodyNote {
    pub pitch: u8,
    pub onset: f64,
    pub duration: f64,
}

impl MelodyNote {
    pub fn new(pitch: u8, onset: f64, duration: f64) -> Self {
        MelodyNote { pitch, onset, duration }
    }

    pub fn pitch_class(&self) -> u8 {
        self.pitch % 12
    }
}

/// A monophonic line with positive durations, ordered by onset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Melody {
    notes: Vec<MelodyNote>,
}

impl Melody {
    pub fn new(notes: Vec<MelodyNote>) -> Result<Self> {
        for (i, n) in notes.iter().enumerate() {
            if !(n.duration > 0.0 && n.duration.is_finite()) {
                return Err(AnalysisError::BadDuration(i));
            }
        }
        for (i, w) in notes.windows(2).enumerate() {
            // Tolerate rounding at the boundary between consecutive notes.
            if w[1].onset < w[0].onset + w[0].duration - 1e-9 {
                return Err(AnalysisError::NotMonophonic(i + 1));
            }
        }
        Ok(Melody { notes })
    }

    pub fn notes(&self) -> &[MelodyNote] {
        &self.notes
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    /// Shifts all pitches, saturating at the MIDI range.
    pub fn transposed(&self, semitones: i32) -> Melody {
        Melody {
            notes: self
                .notes
                .iter()
                .map(|n| MelodyNote { pitch: (n.pitch as i32 + semitones).clamp(0, 127) as u8, ..*n })
                .collect(),
        }
    }
}

/// Keeps the highest note of each onset cluster and truncates each kept note
/// at the next kept onset. The result is on the beat clock; second-clock
/// input is read at 120 BPM.
pub fn extract_melody_skyline(seg: &Segment) -> Result<Melody> {
    if seg.is_empty() {
        return Err(AnalysisError::EmptySegment);
    }
    let tolerance = match seg.clock {
        Clock::Seconds => ONSET_CLUSTER_SECONDS,
        Clock::Beats => ONSET_CLUSTER_SECONDS * BEATS_PER_SECOND,
    };
    let scale = match seg.clock {
        Clock::Seconds => BEATS_PER_SECOND,
        Clock::Beats => 1.0,
    };
    let mut notes = seg.notes.clone();
    notes.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(b.pitch.cmp(&a.pitch)));

    let mut picked = Vec::new();
    let mut i = 0;
    while i < notes.len() {
        let start = notes[i].onset;
        let mut best = notes[i];
        let mut j = i + 1;
        while j < notes.len() && notes[j].onset - start <= tolerance {
            if notes[j].pitch > best.pitch {
                best = notes[j];
            }
            j += 1;
        }
        picked.push(best);
        i = j;
    }

    let mut melody = Vec::with_capacity(picked.len());
    for (k, n) in picked.iter().enumerate() {
        let mut duration = n.duration;
        if let Some(next) = picked.get(k + 1) {
            duration = duration.min(next.onset - n.onset);
        }
        melody.push(MelodyNote { pitch: n.pitch, onset: n.onset * scale, duration: duration * scale });
    }
    Ok(Melody { notes: melody })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourPoint {
    pub onset_beats: f64,
    pub pitch: u8,
}

/// Onset/pitch points of a melody, for line plots.
pub fn contour(melody: &Melody) -> Result<Vec<ContourPoint>> {
    if melody.is_empty() {
        return Err(AnalysisError::EmptyMelody);
    }
    Ok(melody.notes().iter().map(|n| ContourPoint { onset_beats: n.onset, pitch: n.pitch }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midi::NoteEvent;

    fn beats(notes: &[(f64, f64, u8)]) -> Segment {
        Segment::new("m", Clock::Beats, notes.iter().map(|&(o, d, p)| NoteEvent::new(o, d, p, 80)).collect())
    }

    #[test]
    fn monophonic_input_is_identity() {
        let s = beats(&[(0.0, 1.0, 60), (1.0, 0.5, 62), (2.0, 2.0, 64)]);
        let m = extract_melody_skyline(&s).unwrap();
        let expected: Vec<_> = s.notes.iter().map(|n| MelodyNote::new(n.pitch, n.onset, n.duration)).collect();
        assert_eq!(m.notes(), expected.as_slice());
    }

    #[test]
    fn keeps_top_of_each_cluster() {
        let s = beats(&[(0.0, 2.0, 48), (0.0, 2.0, 55), (0.0, 1.0, 72), (1.0, 1.0, 74), (2.0, 2.0, 50), (2.0, 2.0, 71)]);
        let pitches: Vec<u8> = extract_melody_skyline(&s).unwrap().notes().iter().map(|n| n.pitch).collect();
        assert_eq!(pitches, vec![72, 74, 71]);
    }

    #[test]
    fn equal_onsets_keep_higher() {
        let s = beats(&[(0.0, 1.0, 60), (0.0, 1.0, 64)]);
        assert_eq!(extract_melody_skyline(&s).unwrap().notes()[0].pitch, 64);
    }

    #[test]
    fn near_simultaneous_onsets_cluster_and_truncate() {
        let s = Segment::new(
            "perf",
            Clock::Seconds,
            vec![NoteEvent::new(0.0, 2.0, 60, 80), NoteEvent::new(0.03, 0.4, 67, 80), NoteEvent::new(0.5, 0.5, 65, 80)],
        );
        let m = extract_melody_skyline(&s).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.notes()[0].pitch, 67);
        assert!((m.notes()[0].onset - 0.06).abs() < 1e-12);
        assert!((m.notes()[0].duration - 0.8).abs() < 1e-12);
        assert!(Melody::new(m.notes().to_vec()).is_ok());
    }

    #[test]
    fn melody_validation() {
        assert_eq!(
            Melody::new(vec![MelodyNote::new(60, 0.0, 2.0), MelodyNote::new(62, 1.0, 1.0)]),
            Err(AnalysisError::NotMonophonic(1))
        );
        assert_eq!(Melody::new(vec![MelodyNote::new(60, 0.0, 0.0)]), Err(AnalysisError::BadDuration(0)));
    }

    #[test]
    fn contour_shapes() {
        let up = Melody::new((0..8).map(|i| MelodyNote::new(60 + i, i as f64, 1.0)).collect()).unwrap();
        let c = contour(&up).unwrap();
        assert!(c.windows(2).all(|w| w[1].pitch > w[0].pitch));
        let flat = Melody::new((0..4).map(|i| MelodyNote::new(65, i as f64, 1.0)).collect()).unwrap();
        assert!(contour(&flat).unwrap().iter().all(|p| p.pitch == 65));
        assert_eq!(contour(&Melody::default()), Err(AnalysisError::EmptyMelody));
    }
}
