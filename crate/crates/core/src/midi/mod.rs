//! Standard MIDI File reading and writing.
//!
//! Only the subset needed for note data is modelled: note on/off, tempo and
//! time-signature meta events. Other channel voice messages (program change,
//! controllers, pitch bend, aftertouch) are carried through opaquely so a
//! parse/write cycle keeps them.

mod parse;
mod timing;
mod write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::parse_midi;
pub use timing::{TempoChange, TimeSignature, TimingMap, DEFAULT_PPQ, DEFAULT_TEMPO};
pub use write::write_midi;

/// One sounded note. Times are in seconds unless the owning container says otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub onset: f64,
    pub duration: f64,
    pub pitch: u8,
    pub velocity: u8,
    #[serde(default)]
    pub track: u16,
    #[serde(default)]
    pub channel: u8,
}

impl NoteEvent {
    pub fn new(onset: f64, duration: f64, pitch: u8, velocity: u8) -> Self {
        NoteEvent { onset, duration, pitch, velocity, track: 0, channel: 0 }
    }

    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }

    pub fn pitch_class(&self) -> u8 {
        self.pitch % 12
    }

    /// Checks the value-level invariants of a note.
    pub fn is_valid(&self) -> bool {
        self.onset.is_finite()
            && self.onset >= 0.0
            && self.duration.is_finite()
            && self.duration > 0.0
            && self.pitch <= 127
            && (1..=127).contains(&self.velocity)
            && self.channel < 16
    }
}

/// Orders notes by onset, then pitch, then track and channel.
pub fn sort_notes(notes: &mut [NoteEvent]) {
    notes.sort_by(|a, b| {
        a.onset
            .total_cmp(&b.onset)
            .then(a.pitch.cmp(&b.pitch))
            .then(a.track.cmp(&b.track))
            .then(a.channel.cmp(&b.channel))
    });
}

/// A channel voice message other than note on/off, kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMessage {
    pub tick: u64,
    pub track: u16,
    /// Status byte followed by its data bytes.
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteSequence {
    pub notes: Vec<NoteEvent>,
    pub timing: TimingMap,
    pub end_time: f64,
    #[serde(default)]
    pub channel_messages: Vec<ChannelMessage>,
}

impl Default for NoteSequence {
    fn default() -> Self {
        NoteSequence::new(Vec::new(), TimingMap::default())
    }
}

impl NoteSequence {
    /// Wraps notes, sorting them and setting `end_time` to the last note end.
    pub fn new(mut notes: Vec<NoteEvent>, timing: TimingMap) -> Self {
        sort_notes(&mut notes);
        let end_time = notes.iter().map(NoteEvent::end).fold(0.0, f64::max);
        NoteSequence { notes, timing, end_time, channel_messages: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("missing MThd header tag")]
    BadMagic,
    #[error("header chunk shorter than 6 bytes")]
    ShortHeader,
    #[error("unknown SMF format {0}")]
    UnknownFormat(u16),
    #[error("SMF format 2 is not supported")]
    UnsupportedFormat,
    #[error("SMPTE or zero time division is not supported")]
    UnsupportedDivision,
    #[error("unexpected end of data")]
    Truncated,
    #[error("variable-length quantity longer than 4 bytes")]
    BadVarLen,
    #[error("data byte without running status")]
    MissingStatus,
    #[error("status byte 0x{0:02X} is not allowed in a track")]
    BadStatus(u8),
    #[error("data byte 0x{0:02X} has its high bit set")]
    BadDataByte(u8),
    #[error("declared {declared} tracks but found {found}")]
    MissingTracks { declared: u16, found: u16 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MidiError {
    #[error("MIDI parse error at byte {offset}: {kind}")]
    Parse { offset: usize, kind: ParseErrorKind },
    #[error("cannot serialize note {index}: {reason}")]
    Serialize { index: usize, reason: String },
}

impl MidiError {
    pub(crate) fn at(offset: usize, kind: ParseErrorKind) -> Self {
        MidiError::Parse { offset, kind }
    }
}
