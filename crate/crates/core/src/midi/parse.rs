use std::collections::HashMap;

use super::{
    sort_notes, ChannelMessage, MidiError, NoteEvent, NoteSequence, ParseErrorKind, TempoChange,
    TimeSignature, TimingMap,
};

type Result<T> = std::result::Result<T, MidiError>;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    /// Exclusive end of the region this reader may consume.
    end: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Result<u8> {
        if self.pos >= self.end {
            return Err(MidiError::at(self.pos, ParseErrorKind::Truncated));
        }
        let b = self.bytes[self.pos];
        self.pos += 1;
        Ok(b)
    }

    fn data_byte(&mut self) -> Result<u8> {
        let at = self.pos;
        let b = self.u8()?;
        if b & 0x80 != 0 {
            return Err(MidiError::at(at, ParseErrorKind::BadDataByte(b)));
        }
        Ok(b)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.end - self.pos < n {
            return Err(MidiError::at(self.pos, ParseErrorKind::Truncated));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn varlen(&mut self) -> Result<u32> {
        let start = self.pos;
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | (b & 0x7F) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(MidiError::at(start, ParseErrorKind::BadVarLen))
    }
}

fn be_u16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

enum TrackEvent {
    NoteOn { channel: u8, key: u8, velocity: u8 },
    NoteOff { channel: u8, key: u8 },
    Tempo(u32),
    TimeSig { numerator: u8, denominator: u8 },
    Channel(Vec<u8>),
}

struct RawTrack {
    events: Vec<(u64, TrackEvent)>,
    end_tick: u64,
}

fn parse_track(bytes: &[u8], start: usize, end: usize) -> Result<RawTrack> {
    let mut r = Reader { bytes, pos: start, end };
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    let mut events = Vec::new();

    while r.pos < r.end {
        tick += r.varlen()? as u64;
        let status_at = r.pos;
        let first = r.u8()?;
        let (status, first_data) = if first & 0x80 != 0 {
            (first, None)
        } else {
            match running {
                Some(s) => (s, Some(first)),
                None => return Err(MidiError::at(status_at, ParseErrorKind::MissingStatus)),
            }
        };

        match status {
            0xFF => {
                running = None;
                let kind = r.u8()?;
                let len = r.varlen()? as usize;
                let data = r.take(len)?;
                match kind {
                    0x2F => return Ok(RawTrack { events, end_tick: tick }),
                    0x51 if len == 3 => {
                        let us = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                        events.push((tick, TrackEvent::Tempo(us)));
                    }
                    0x58 if len >= 2 => {
                        let denominator = 1u8.checked_shl(data[1] as u32).unwrap_or(0);
                        events.push((tick, TrackEvent::TimeSig { numerator: data[0], denominator }));
                    }
                    _ => {}
                }
            }
            0xF0 | 0xF7 => {
                running = None;
                let len = r.varlen()? as usize;
                r.take(len)?;
            }
            0x80..=0xEF => {
                running = Some(status);
                let mut data = [0u8; 2];
                let n = if matches!(status & 0xF0, 0xC0 | 0xD0) { 1 } else { 2 };
                for (i, slot) in data.iter_mut().take(n).enumerate() {
                    *slot = match (i, first_data) {
                        (0, Some(b)) => b,
                        _ => r.data_byte()?,
                    };
                }
                let channel = status & 0x0F;
                match status & 0xF0 {
                    0x90 if data[1] > 0 => {
                        events.push((tick, TrackEvent::NoteOn { channel, key: data[0], velocity: data[1] }))
                    }
                    0x80 | 0x90 => events.push((tick, TrackEvent::NoteOff { channel, key: data[0] })),
                    _ => {
                        let mut msg = vec![status];
                        msg.extend_from_slice(&data[..n]);
                        events.push((tick, TrackEvent::Channel(msg)));
                    }
                }
            }
            other => return Err(MidiError::at(status_at, ParseErrorKind::BadStatus(other))),
        }
    }
    Ok(RawTrack { events, end_tick: tick })
}

/// Parses a format 0 or 1 Standard MIDI File.
///
/// Note-on with velocity 0 is a note-off. A repeated note-on for a sounding
/// (channel, key) closes the earlier note. Notes still open at the end of
/// their track are closed there. Unknown chunks are skipped.
pub fn parse_midi(bytes: &[u8]) -> Result<NoteSequence> {
    if bytes.len() < 4 || &bytes[0..4] != b"MThd" {
        return Err(MidiError::at(0, ParseErrorKind::BadMagic));
    }
    if bytes.len() < 8 {
        return Err(MidiError::at(4, ParseErrorKind::Truncated));
    }
    let header_len = be_u32(&bytes[4..8]) as usize;
    if header_len < 6 {
        return Err(MidiError::at(4, ParseErrorKind::ShortHeader));
    }
    if bytes.len() < 14 || bytes.len() - 8 < header_len {
        return Err(MidiError::at(8, ParseErrorKind::Truncated));
    }
    let format = be_u16(&bytes[8..10]);
    match format {
        0 | 1 => {}
        2 => return Err(MidiError::at(8, ParseErrorKind::UnsupportedFormat)),
        f => return Err(MidiError::at(8, ParseErrorKind::UnknownFormat(f))),
    }
    let declared = be_u16(&bytes[10..12]);
    let division = be_u16(&bytes[12..14]);
    if division & 0x8000 != 0 || division == 0 {
        return Err(MidiError::at(12, ParseErrorKind::UnsupportedDivision));
    }

    let mut tracks = Vec::new();
    let mut pos = 8 + header_len;
    while tracks.len() < declared as usize {
        if bytes.len() - pos < 8 {
            if pos == bytes.len() {
                return Err(MidiError::at(
                    pos,
                    ParseErrorKind::MissingTracks { declared, found: tracks.len() as u16 },
                ));
            }
            return Err(MidiError::at(pos, ParseErrorKind::Truncated));
        }
        let tag = &bytes[pos..pos + 4];
        let len = be_u32(&bytes[pos + 4..pos + 8]) as usize;
        let data_start = pos + 8;
        if bytes.len() - data_start < len {
            return Err(MidiError::at(pos, ParseErrorKind::Truncated));
        }
        if tag == b"MTrk" {
            tracks.push(parse_track(bytes, data_start, data_start + len)?);
        }
        pos = data_start + len;
    }

    let mut tempos = Vec::new();
    let mut sigs = Vec::new();
    for track in &tracks {
        for (tick, ev) in &track.events {
            match *ev {
                TrackEvent::Tempo(us) => tempos.push(TempoChange { tick: *tick, micros_per_quarter: us }),
                TrackEvent::TimeSig { numerator, denominator } => {
                    sigs.push(TimeSignature { tick: *tick, numerator, denominator })
                }
                _ => {}
            }
        }
    }
    let timing = TimingMap::new(division, tempos, sigs);

    let mut notes = Vec::new();
    let mut channel_messages = Vec::new();
    let mut last_tick = 0u64;
    for (index, track) in tracks.iter().enumerate() {
        let track_no = if format == 0 { 0 } else { index as u16 };
        let mut open: HashMap<(u8, u8), (u64, u8)> = HashMap::new();
        let close = |channel: u8, key: u8, start: u64, velocity: u8, end: u64, out: &mut Vec<NoteEvent>| {
            let end = end.max(start + 1);
            let onset = timing.seconds_of_tick(start);
            out.push(NoteEvent {
                onset,
                duration: timing.seconds_of_tick(end) - onset,
                pitch: key,
                velocity,
                track: track_no,
                channel,
            });
        };
        for (tick, ev) in &track.events {
            match ev {
                TrackEvent::NoteOn { channel, key, velocity } => {
                    if let Some((start, vel)) = open.insert((*channel, *key), (*tick, *velocity)) {
                        close(*channel, *key, start, vel, *tick, &mut notes);
                    }
                }
                TrackEvent::NoteOff { channel, key } => {
                    if let Some((start, vel)) = open.remove(&(*channel, *key)) {
                        close(*channel, *key, start, vel, *tick, &mut notes);
                    }
                }
                TrackEvent::Channel(bytes) => channel_messages.push(ChannelMessage {
                    tick: *tick,
                    track: track_no,
                    bytes: bytes.clone(),
                }),
                _ => {}
            }
        }
        let mut dangling: Vec<_> = open.into_iter().collect();
        dangling.sort_unstable();
        for ((channel, key), (start, vel)) in dangling {
            close(channel, key, start, vel, track.end_tick, &mut notes);
        }
        last_tick = last_tick.max(track.end_tick);
    }

    sort_notes(&mut notes);
    channel_messages.sort_by_key(|m| (m.tick, m.track));
    let end_time = notes
        .iter()
        .map(NoteEvent::end)
        .fold(timing.seconds_of_tick(last_tick), f64::max);
    Ok(NoteSequence { notes, timing, end_time, channel_messages })
}
