use serde::{Deserialize, Serialize};

use crate::midi::{sort_notes, NoteEvent};

/// Tempo at which beat-clock material is rendered to seconds and at which
/// second-clock material is read as beats when no better estimate exists.
pub const RENDER_BPM: f64 = 120.0;
pub const BEATS_PER_SECOND: f64 = RENDER_BPM / 60.0;

/// Time base of a segment's note onsets and durations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Clock {
    Beats,
    Seconds,
}

/// An ordered collection of notes with a clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub clock: Clock,
    pub notes: Vec<NoteEvent>,
}

impl Segment {
    pub fn new(id: impl Into<String>, clock: Clock, mut notes: Vec<NoteEvent>) -> Self {
        sort_notes(&mut notes);
        Segment { id: id.into(), clock, notes }
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    /// Latest note end on the segment's own clock.
    pub fn end(&self) -> f64 {
        self.notes.iter().map(NoteEvent::end).fold(0.0, f64::max)
    }

    /// Notes on the beat clock; second-clock notes are read at [`RENDER_BPM`].
    pub fn notes_in_beats(&self) -> Vec<NoteEvent> {
        match self.clock {
            Clock::Beats => self.notes.clone(),
            Clock::Seconds => self.notes.iter().map(|n| scale_time(n, BEATS_PER_SECOND)).collect(),
        }
    }

    /// Notes on the second clock; beat-clock notes are rendered at [`RENDER_BPM`].
    pub fn notes_in_seconds(&self) -> Vec<NoteEvent> {
        match self.clock {
            Clock::Seconds => self.notes.clone(),
            Clock::Beats => self.notes.iter().map(|n| scale_time(n, 1.0 / BEATS_PER_SECOND)).collect(),
        }
    }

    /// The same segment re-expressed on `clock`.
    pub fn with_clock(&self, clock: Clock) -> Segment {
        let notes = match clock {
            Clock::Beats => self.notes_in_beats(),
            Clock::Seconds => self.notes_in_seconds(),
        };
        Segment { id: self.id.clone(), clock, notes }
    }

    /// Shifts every pitch by `semitones`; `None` if a pitch leaves 0..=127.
    pub fn transposed(&self, semitones: i32) -> Option<Segment> {
        let notes = self
            .notes
            .iter()
            .map(|n| {
                let p = n.pitch as i32 + semitones;
                (0..=127).contains(&p).then_some(NoteEvent { pitch: p as u8, ..*n })
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Segment::new(self.id.clone(), self.clock, notes))
    }

    /// Multiplies all times by `factor`.
    pub fn time_stretched(&self, factor: f64) -> Segment {
        Segment {
            id: self.id.clone(),
            clock: self.clock,
            notes: self.notes.iter().map(|n| scale_time(n, factor)).collect(),
        }
    }

    /// Adds `offset` to every onset.
    pub fn shifted(&self, offset: f64) -> Segment {
        Segment {
            id: self.id.clone(),
            clock: self.clock,
            notes: self.notes.iter().map(|n| NoteEvent { onset: n.onset + offset, ..*n }).collect(),
        }
    }
}

fn scale_time(n: &NoteEvent, factor: f64) -> NoteEvent {
    NoteEvent { onset: n.onset * factor, duration: n.duration * factor, ..*n }
}
