//! Event vocabulary: note-on, note-off, 10 ms time shifts and 32 velocity
//! bins, plus four control tokens.

use std::fmt;

use crate::midi::NoteEvent;
use crate::segment::{Clock, Segment};

pub type TokenId = u16;

pub const NOTE_ON_BASE: TokenId = 0;
pub const NOTE_OFF_BASE: TokenId = 128;
pub const TIME_SHIFT_BASE: TokenId = 256;
pub const VELOCITY_BASE: TokenId = 356;
pub const PAD: TokenId = 388;
pub const BOS: TokenId = 389;
pub const SEP: TokenId = 390;
pub const EOS: TokenId = 391;
pub const VOCAB_SIZE: usize = 392;

pub const MAX_SHIFT_STEPS: u32 = 100;
pub const STEPS_PER_SECOND: f64 = 100.0;
pub const VELOCITY_BINS: u8 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    NoteOn(u8),
    NoteOff(u8),
    /// Advance by `n` steps of 10 ms, `n` in 1..=100.
    TimeShift(u8),
    Velocity(u8),
    Pad,
    Bos,
    Sep,
    Eos,
}

impl Token {
    pub fn id(self) -> TokenId {
        match self {
            Token::NoteOn(p) => NOTE_ON_BASE + p as TokenId,
            Token::NoteOff(p) => NOTE_OFF_BASE + p as TokenId,
            Token::TimeShift(n) => TIME_SHIFT_BASE + n as TokenId - 1,
            Token::Velocity(b) => VELOCITY_BASE + b as TokenId,
            Token::Pad => PAD,
            Token::Bos => BOS,
            Token::Sep => SEP,
            Token::Eos => EOS,
        }
    }

    /// `None` for ids outside the vocabulary.
    pub fn from_id(id: TokenId) -> Option<Token> {
        Some(match id {
            0..=127 => Token::NoteOn(id as u8),
            128..=255 => Token::NoteOff((id - NOTE_OFF_BASE) as u8),
            256..=355 => Token::TimeShift((id - TIME_SHIFT_BASE + 1) as u8),
            356..=387 => Token::Velocity((id - VELOCITY_BASE) as u8),
            PAD => Token::Pad,
            BOS => Token::Bos,
            SEP => Token::Sep,
            EOS => Token::Eos,
            _ => return None,
        })
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::NoteOn(p) => write!(f, "NOTE_ON_{p}"),
            Token::NoteOff(p) => write!(f, "NOTE_OFF_{p}"),
            Token::TimeShift(n) => write!(f, "TIME_SHIFT_{n}"),
            Token::Velocity(b) => write!(f, "VEL_{b}"),
            Token::Pad => f.write_str("PAD"),
            Token::Bos => f.write_str("BOS"),
            Token::Sep => f.write_str("SEP"),
            Token::Eos => f.write_str("EOS"),
        }
    }
}

/// Space-separated token names; unknown ids print as `?{id}`.
pub fn describe(tokens: &[TokenId]) -> String {
    tokens
        .iter()
        .map(|&t| Token::from_id(t).map_or_else(|| format!("?{t}"), |k| k.to_string()))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn velocity_bin(velocity: u8) -> u8 {
    (velocity / 4).min(VELOCITY_BINS - 1)
}

pub fn bin_velocity(bin: u8) -> u8 {
    (bin * 4).max(1)
}

fn to_steps(seconds: f64) -> i64 {
    (seconds * STEPS_PER_SECOND).round() as i64
}

fn push_shift(out: &mut Vec<TokenId>, mut steps: i64) {
    while steps > 0 {
        let n = steps.min(MAX_SHIFT_STEPS as i64);
        out.push(Token::TimeShift(n as u8).id());
        steps -= n;
    }
}

/// Encodes a segment on the 10 ms grid.
///
/// Events are ordered by time; at equal times note-offs precede note-ons and
/// each kind is ordered by pitch. A note shorter than one step is held for
/// one step, and a note re-struck while still sounding is cut at the new
/// onset. A velocity token precedes a note-on only when its bin changes.
pub fn encode(seg: &Segment) -> Vec<TokenId> {
    let notes = match seg.clock {
        Clock::Seconds => seg.notes.clone(),
        Clock::Beats => seg.notes_in_seconds(),
    };
    encode_notes(&notes)
}

pub fn encode_notes(notes: &[NoteEvent]) -> Vec<TokenId> {
    let mut spans: Vec<(i64, i64, u8, u8)> = notes
        .iter()
        .map(|n| {
            let on = to_steps(n.onset).max(0);
            let off = to_steps(n.end()).max(on + 1);
            (on, off, n.pitch.min(127), n.velocity)
        })
        .collect();
    spans.sort_by_key(|s| (s.2, s.0, s.1));
    for i in 1..spans.len() {
        let (prev, next) = (spans[i - 1], spans[i]);
        if prev.2 == next.2 && prev.1 > next.0 {
            spans[i - 1].1 = next.0.max(prev.0 + 1);
        }
    }
    // Kind 0 = off, 1 = on; ties broken by pitch.
    let mut events: Vec<(i64, u8, u8, u8)> = Vec::with_capacity(spans.len() * 2);
    for &(on, off, pitch, vel) in &spans {
        if on == off {
            continue;
        }
        events.push((on, 1, pitch, vel));
        events.push((off, 0, pitch, vel));
    }
    events.sort_by_key(|e| (e.0, e.1, e.2));

    let mut out = Vec::with_capacity(events.len() * 2);
    let mut now = 0i64;
    let mut current_bin: Option<u8> = None;
    for (t, kind, pitch, vel) in events {
        push_shift(&mut out, t - now);
        now = t;
        if kind == 0 {
            out.push(Token::NoteOff(pitch).id());
        } else {
            let bin = velocity_bin(vel);
            if current_bin != Some(bin) {
                out.push(Token::Velocity(bin).id());
                current_bin = Some(bin);
            }
            out.push(Token::NoteOn(pitch).id());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeWarning {
    /// A note-off with no sounding note of that pitch.
    StrayNoteOff { index: usize, pitch: u8 },
    /// A note-on for a pitch already sounding; the earlier note was closed.
    Restruck { index: usize, pitch: u8 },
    /// A note still sounding at the end of the stream was closed there.
    Unclosed { pitch: u8 },
    /// A control token or unknown id inside the event stream was skipped.
    Skipped { index: usize, token: TokenId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub notes: Vec<NoteEvent>,
    pub warnings: Vec<DecodeWarning>,
}

impl Decoded {
    pub fn segment(&self, id: &str) -> Segment {
        Segment::new(id, Clock::Seconds, self.notes.clone())
    }
}

/// Decodes any token stream, stopping at the first EOS. Malformed
/// structure is repaired and reported; notes last at least one step.
pub fn decode(tokens: &[TokenId]) -> Decoded {
    let mut notes = Vec::new();
    let mut warnings = Vec::new();
    let mut open: [Option<(i64, u8)>; 128] = [None; 128];
    let mut now = 0i64;
    let mut velocity = bin_velocity(velocity_bin(64));

    let close = |notes: &mut Vec<NoteEvent>, pitch: u8, on: i64, vel: u8, off: i64| {
        let steps = (off - on).max(1);
        notes.push(NoteEvent::new(on as f64 / STEPS_PER_SECOND, steps as f64 / STEPS_PER_SECOND, pitch, vel));
    };

    for (index, &id) in tokens.iter().enumerate() {
        match Token::from_id(id) {
            Some(Token::Eos) => break,
            Some(Token::NoteOn(p)) => {
                if let Some((on, vel)) = open[p as usize].take() {
                    warnings.push(DecodeWarning::Restruck { index, pitch: p });
                    close(&mut notes, p, on, vel, now);
                }
                open[p as usize] = Some((now, velocity));
            }
            Some(Token::NoteOff(p)) => match open[p as usize].take() {
                Some((on, vel)) => close(&mut notes, p, on, vel, now),
                None => warnings.push(DecodeWarning::StrayNoteOff { index, pitch: p }),
            },
            Some(Token::TimeShift(n)) => now += n as i64,
            Some(Token::Velocity(b)) => velocity = bin_velocity(b),
            Some(Token::Bos) if index == 0 => {}
            Some(Token::Pad) => {}
            _ => warnings.push(DecodeWarning::Skipped { index, token: id }),
        }
    }
    for (p, slot) in open.iter().enumerate() {
        if let Some((on, vel)) = *slot {
            warnings.push(DecodeWarning::Unclosed { pitch: p as u8 });
            close(&mut notes, p as u8, on, vel, now);
        }
    }
    crate::midi::sort_notes(&mut notes);
    Decoded { notes, warnings }
}
