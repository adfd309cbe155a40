use serde::{Deserialize, Serialize};

use super::chord::ChordSymbol;
use super::{CorpusError, Result};
use crate::midi::{sort_notes, NoteEvent, NoteSequence, TimingMap};

pub const BEATS_PER_BAR: f64 = 4.0;
/// Melody notes sound on this channel in lead-sheet and segment MIDI files;
/// every other channel carries chord voicings.
pub const MELODY_CHANNEL: u8 = 0;
pub const CHORD_CHANNEL: u8 = 1;
pub const CHORD_VELOCITY: u8 = 60;
/// Chord onsets closer than this (in beats) are read as one chord.
const CHORD_ONSET_TOLERANCE: f64 = 1.0 / 32.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Major,
    Minor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyHint {
    pub root: u8,
    pub mode: Mode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChordChange {
    pub beat: f64,
    pub symbol: ChordSymbol,
}

/// A monophonic melody with chord symbols, in 4/4, on the beat clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadSheet {
    pub id: String,
    pub title: String,
    pub bars: u32,
    pub melody: Vec<NoteEvent>,
    pub chords: Vec<ChordChange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_hint: Option<KeyHint>,
}

impl LeadSheet {
    /// Sorts the melody and checks every invariant.
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        bars: u32,
        mut melody: Vec<NoteEvent>,
        chords: Vec<ChordChange>,
    ) -> Result<Self> {
        sort_notes(&mut melody);
        let sheet = LeadSheet { id: id.into(), title: title.into(), bars, melody, chords, key_hint: None };
        sheet.validate()?;
        Ok(sheet)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.melody.iter().enumerate() {
            if !n.is_valid() {
                return Err(CorpusError::InvalidNote(i));
            }
            if let Some(next) = self.melody.get(i + 1) {
                if n.end() > next.onset + 1e-9 {
                    return Err(CorpusError::NotMonophonic(i));
                }
            }
        }
        if let Some(first) = self.chords.first() {
            if first.beat != 0.0 {
                return Err(CorpusError::FirstChordNotAtZero(first.beat));
            }
        }
        if self.chords.windows(2).any(|w| !(w[0].beat < w[1].beat)) {
            return Err(CorpusError::ChordsUnsorted);
        }
        Ok(())
    }

    pub fn length_beats(&self) -> f64 {
        self.bars as f64 * BEATS_PER_BAR
    }

    /// Reads a lead sheet from MIDI: channel 0 is the melody, notes on other
    /// channels are grouped by onset into chords. Overlapping melody notes
    /// are truncated at the next onset (the higher note wins a shared onset).
    /// A chord that starts after beat 0 is extended back to it.
    pub fn from_midi(id: impl Into<String>, title: impl Into<String>, seq: &NoteSequence) -> Result<Self> {
        if !seq.timing.is_common_time() {
            return Err(CorpusError::NotCommonTime);
        }
        let to_beats = |n: &NoteEvent| {
            let onset = seq.timing.beats_of(n.onset);
            let end = seq.timing.beats_of(n.end());
            NoteEvent { onset, duration: end - onset, ..*n }
        };
        let mut raw: Vec<NoteEvent> =
            seq.notes.iter().filter(|n| n.channel == MELODY_CHANNEL).map(to_beats).collect();
        raw.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(b.pitch.cmp(&a.pitch)));
        raw.dedup_by(|later, earlier| (later.onset - earlier.onset).abs() < 1e-9);
        let mut melody = Vec::with_capacity(raw.len());
        for (i, n) in raw.iter().enumerate() {
            let mut n = *n;
            if let Some(next) = raw.get(i + 1) {
                n.duration = n.duration.min(next.onset - n.onset);
            }
            melody.push(n);
        }

        let mut chord_notes: Vec<NoteEvent> =
            seq.notes.iter().filter(|n| n.channel != MELODY_CHANNEL).map(to_beats).collect();
        chord_notes.sort_by(|a, b| a.onset.total_cmp(&b.onset));
        let mut chords: Vec<ChordChange> = Vec::new();
        let mut i = 0;
        while i < chord_notes.len() {
            let start = chord_notes[i].onset;
            let mut j = i;
            while j < chord_notes.len() && chord_notes[j].onset - start < CHORD_ONSET_TOLERANCE {
                j += 1;
            }
            let pitches: Vec<u8> = chord_notes[i..j].iter().map(|n| n.pitch).collect();
            if let Some(symbol) = ChordSymbol::from_pitches(&pitches) {
                let beat = (start * 480.0).round() / 480.0;
                if chords.last().map(|c| c.symbol) != Some(symbol) {
                    chords.push(ChordChange { beat, symbol });
                }
            }
            i = j;
        }
        if let Some(first) = chords.first_mut() {
            first.beat = 0.0;
        }

        let end = melody
            .iter()
            .chain(chord_notes.iter())
            .map(NoteEvent::end)
            .fold(0.0, f64::max);
        let bars = (end / BEATS_PER_BAR - 1e-9).ceil().max(0.0) as u32;
        LeadSheet::new(id, title, bars, melody, chords)
    }

    /// Melody on channel 0 and close chord voicings on channel 1, on the
    /// beat clock of `timing`.
    pub fn to_midi(&self, timing: TimingMap) -> NoteSequence {
        let mut notes: Vec<NoteEvent> = self
            .melody
            .iter()
            .map(|n| NoteEvent { channel: MELODY_CHANNEL, ..*n })
            .map(|n| {
                let onset = timing.seconds_of(n.onset);
                NoteEvent { onset, duration: timing.seconds_of(n.end()) - onset, ..n }
            })
            .collect();
        for (start, end, symbol) in chord_spans(&self.chords, 0.0, self.length_beats()) {
            let (s, e) = (timing.seconds_of(start), timing.seconds_of(end));
            for p in symbol.voicing() {
                let mut n = NoteEvent::new(s, e - s, p, CHORD_VELOCITY);
                n.channel = CHORD_CHANNEL;
                notes.push(n);
            }
        }
        NoteSequence::new(notes, timing)
    }
}

/// Chords clipped to `[from, to)` as `(start, end, symbol)` spans; the chord
/// sounding at `from` opens the first span.
pub fn chord_spans(chords: &[ChordChange], from: f64, to: f64) -> Vec<(f64, f64, ChordSymbol)> {
    let mut spans = Vec::new();
    for (i, c) in chords.iter().enumerate() {
        let next = chords.get(i + 1).map_or(f64::INFINITY, |n| n.beat);
        let (s, e) = (c.beat.max(from), next.min(to));
        if e > s {
            spans.push((s, e, c.symbol));
        }
    }
    spans
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SectionLabel {
    Intro,
    Verse,
    Refrain,
}

/// One entry of a section-annotation side file; bars are `[start_bar, end_bar)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub label: SectionLabel,
    pub start_bar: u32,
    pub end_bar: u32,
}

impl Section {
    pub fn new(label: SectionLabel, start_bar: u32, end_bar: u32) -> Self {
        Section { label, start_bar, end_bar }
    }
}

/// Keeps only the last refrain, rebased to bar 0. Notes are kept by onset
/// and truncated at the refrain's end.
pub fn trim_to_refrain(sheet: &LeadSheet, sections: &[Section]) -> Result<LeadSheet> {
    let refrain = sections
        .iter()
        .filter(|s| s.label == SectionLabel::Refrain)
        .max_by_key(|s| s.start_bar)
        .ok_or(CorpusError::NoRefrain)?;
    if refrain.end_bar <= refrain.start_bar {
        return Err(CorpusError::BadSection(*refrain));
    }
    let from = refrain.start_bar as f64 * BEATS_PER_BAR;
    let to = refrain.end_bar as f64 * BEATS_PER_BAR;
    let melody = clip_notes(&sheet.melody, from, to, -from);
    let chords = chord_spans(&sheet.chords, from, to)
        .into_iter()
        .map(|(s, _, symbol)| ChordChange { beat: s - from, symbol })
        .collect();
    let mut out = LeadSheet::new(
        sheet.id.clone(),
        sheet.title.clone(),
        refrain.end_bar - refrain.start_bar,
        melody,
        chords,
    )?;
    out.key_hint = sheet.key_hint;
    Ok(out)
}

/// Notes with onset in `[from, to)`, truncated at `to`, then shifted.
pub fn clip_notes(notes: &[NoteEvent], from: f64, to: f64, shift: f64) -> Vec<NoteEvent> {
    notes
        .iter()
        .filter(|n| n.onset >= from && n.onset < to)
        .map(|n| NoteEvent { onset: n.onset + shift, duration: n.duration.min(to - n.onset), ..*n })
        .collect()
}
