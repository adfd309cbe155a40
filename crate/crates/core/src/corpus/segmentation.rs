use serde::{Deserialize, Serialize};

use super::leadsheet::{
    chord_spans, clip_notes, ChordChange, LeadSheet, BEATS_PER_BAR, CHORD_CHANNEL, CHORD_VELOCITY, MELODY_CHANNEL,
};
use super::{CorpusError, Result};
use crate::midi::{NoteEvent, NoteSequence, TimingMap};
use crate::segment::{Clock, Segment, BEATS_PER_SECOND};

pub const DEFAULT_BARS_PER_SEGMENT: u32 = 4;

/// A window of a lead sheet. Notes and chords stay on the sheet's absolute
/// beat clock; every onset lies in `[start_bar*4, (start_bar+bars)*4)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginalSegment {
    pub id: String,
    pub leadsheet_id: String,
    pub start_bar: u32,
    pub bars: u32,
    pub notes: Vec<NoteEvent>,
    /// First entry sits at the window start.
    pub chords: Vec<ChordChange>,
}

impl OriginalSegment {
    pub fn start_beat(&self) -> f64 {
        self.start_bar as f64 * BEATS_PER_BAR
    }

    pub fn length_beats(&self) -> f64 {
        self.bars as f64 * BEATS_PER_BAR
    }

    pub fn end_beat(&self) -> f64 {
        self.start_beat() + self.length_beats()
    }

    /// Duration of the rendered window in seconds.
    pub fn rendered_seconds(&self) -> f64 {
        self.length_beats() / BEATS_PER_SECOND
    }

    /// Melody (channel 0) and chord voicings (channel 1) on the second clock
    /// at 120 BPM, starting at 0.
    pub fn render(&self) -> Vec<NoteEvent> {
        let origin = self.start_beat();
        let mut out: Vec<NoteEvent> = self
            .notes
            .iter()
            .map(|n| NoteEvent {
                onset: (n.onset - origin) / BEATS_PER_SECOND,
                duration: n.duration / BEATS_PER_SECOND,
                channel: MELODY_CHANNEL,
                ..*n
            })
            .collect();
        for (s, e, symbol) in chord_spans(&self.chords, origin, self.end_beat()) {
            for p in symbol.voicing() {
                let mut n = NoteEvent::new((s - origin) / BEATS_PER_SECOND, (e - s) / BEATS_PER_SECOND, p, CHORD_VELOCITY);
                n.channel = CHORD_CHANNEL;
                out.push(n);
            }
        }
        crate::midi::sort_notes(&mut out);
        out
    }

    pub fn rendered_segment(&self) -> Segment {
        Segment::new(self.id.clone(), Clock::Seconds, self.render())
    }

    /// The melody alone, rebased to beat 0.
    pub fn melody_segment(&self) -> Segment {
        let origin = self.start_beat();
        Segment::new(
            self.id.clone(),
            Clock::Beats,
            self.notes.iter().map(|n| NoteEvent { onset: n.onset - origin, ..*n }).collect(),
        )
    }

    pub fn to_midi(&self) -> NoteSequence {
        NoteSequence::new(self.render(), TimingMap::default())
    }

    /// Rebuilds a segment from its rendered MIDI payload and stored chords.
    pub fn from_rendered(
        id: impl Into<String>,
        leadsheet_id: impl Into<String>,
        start_bar: u32,
        bars: u32,
        rendered: &NoteSequence,
        chords: Vec<ChordChange>,
    ) -> OriginalSegment {
        let origin = start_bar as f64 * BEATS_PER_BAR;
        let notes = rendered
            .notes
            .iter()
            .filter(|n| n.channel == MELODY_CHANNEL)
            .map(|n| NoteEvent {
                onset: origin + rendered.timing.beats_of(n.onset),
                duration: rendered.timing.beats_of(n.end()) - rendered.timing.beats_of(n.onset),
                ..*n
            })
            .collect();
        OriginalSegment { id: id.into(), leadsheet_id: leadsheet_id.into(), start_bar, bars, notes, chords }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SegmentationOptions {
    /// Defaults to 4.
    pub bars_per_segment: Option<u32>,
    /// Keep a trailing window shorter than `bars_per_segment`.
    pub keep_partial: bool,
    /// Explicit window start bars for phrase-aware segmentation; each window
    /// still spans `bars_per_segment` bars.
    pub boundaries: Option<Vec<u32>>,
}

pub fn segment_leadsheet(sheet: &LeadSheet, bars_per_segment: u32) -> Result<Vec<OriginalSegment>> {
    segment_leadsheet_with(
        sheet,
        &SegmentationOptions { bars_per_segment: Some(bars_per_segment), ..Default::default() },
    )
}

/// Cuts a lead sheet into consecutive windows from bar 0. Notes belong to
/// the window holding their onset and are truncated at its end.
pub fn segment_leadsheet_with(sheet: &LeadSheet, opts: &SegmentationOptions) -> Result<Vec<OriginalSegment>> {
    if sheet.melody.is_empty() {
        return Err(CorpusError::EmptyMelody);
    }
    let size = opts.bars_per_segment.unwrap_or(DEFAULT_BARS_PER_SEGMENT);
    if size == 0 {
        return Err(CorpusError::BadBarsPerSegment);
    }
    let mut windows: Vec<(u32, u32)> = Vec::new();
    match &opts.boundaries {
        Some(starts) => {
            for (i, &s) in starts.iter().enumerate() {
                let overlaps = i > 0 && s < starts[i - 1] + size;
                if overlaps || s + size > sheet.bars {
                    return Err(CorpusError::BadBoundary(s));
                }
                windows.push((s, size));
            }
        }
        None => {
            let mut s = 0;
            while s + size <= sheet.bars {
                windows.push((s, size));
                s += size;
            }
            if opts.keep_partial && s < sheet.bars {
                windows.push((s, sheet.bars - s));
            }
        }
    }
    Ok(windows
        .into_iter()
        .enumerate()
        .map(|(k, (start_bar, bars))| {
            let from = start_bar as f64 * BEATS_PER_BAR;
            let to = from + bars as f64 * BEATS_PER_BAR;
            OriginalSegment {
                id: format!("{}-s{:02}", sheet.id, k),
                leadsheet_id: sheet.id.clone(),
                start_bar,
                bars,
                notes: clip_notes(&sheet.melody, from, to, 0.0),
                chords: chord_spans(&sheet.chords, from, to)
                    .into_iter()
                    .map(|(s, _, symbol)| ChordChange { beat: s, symbol })
                    .collect(),
            }
        })
        .collect())
}
