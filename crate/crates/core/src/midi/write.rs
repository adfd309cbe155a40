use super::{MidiError, NoteSequence, TimingMap};

/// Largest absolute tick we emit; keeps every delta inside a 4-byte VLQ.
const MAX_TICK: u64 = 0x0FFF_FFFF;

fn push_varlen(out: &mut Vec<u8>, mut value: u32) {
    let mut stack = [0u8; 4];
    let mut n = 0;
    loop {
        stack[n] = (value & 0x7F) as u8;
        n += 1;
        value >>= 7;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        let continuation = if i > 0 { 0x80 } else { 0 };
        out.push(stack[i] | continuation);
    }
}

/// Ordering of events that share a tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Slot {
    Meta,
    Channel,
    NoteOff,
    NoteOn,
}

struct Event {
    tick: u64,
    slot: Slot,
    key: u8,
    seq: usize,
    bytes: Vec<u8>,
}

fn tick_of(timing: &TimingMap, seconds: f64, index: usize) -> Result<u64, MidiError> {
    let tick = timing.tick_of_seconds(seconds);
    if !(0.0..=MAX_TICK as f64).contains(&tick) {
        return Err(MidiError::Serialize { index, reason: format!("time {seconds} s is outside the tick range") });
    }
    Ok(tick as u64)
}

/// Serializes a sequence to SMF bytes at `seq.timing.ppq`.
///
/// All-track-0 sequences become format 0; otherwise a format 1 file with one
/// chunk per track index is written. Tempo and meter meta events are omitted
/// when the map equals the file defaults (120 BPM, 4/4). Within one tick,
/// note-offs precede note-ons and each group is ordered by ascending pitch.
pub fn write_midi(seq: &NoteSequence) -> Result<Vec<u8>, MidiError> {
    let timing = &seq.timing;
    let n_tracks = seq
        .notes
        .iter()
        .map(|n| n.track)
        .chain(seq.channel_messages.iter().map(|m| m.track))
        .max()
        .map_or(1, |t| t as usize + 1);

    let mut tracks: Vec<Vec<Event>> = (0..n_tracks).map(|_| Vec::new()).collect();

    if !timing.is_default_meta() {
        for t in timing.tempo_changes() {
            let us = t.micros_per_quarter.to_be_bytes();
            tracks[0].push(Event {
                tick: t.tick,
                slot: Slot::Meta,
                key: 0,
                seq: 0,
                bytes: vec![0xFF, 0x51, 0x03, us[1], us[2], us[3]],
            });
        }
        for s in timing.time_signatures() {
            let log2 = s.denominator.max(1).trailing_zeros() as u8;
            tracks[0].push(Event {
                tick: s.tick,
                slot: Slot::Meta,
                key: 1,
                seq: 0,
                bytes: vec![0xFF, 0x58, 0x04, s.numerator, log2, 24, 8],
            });
        }
    }

    for (i, m) in seq.channel_messages.iter().enumerate() {
        if m.tick > MAX_TICK {
            return Err(MidiError::Serialize { index: i, reason: "channel message beyond tick range".into() });
        }
        tracks[m.track as usize].push(Event { tick: m.tick, slot: Slot::Channel, key: 0, seq: i, bytes: m.bytes.clone() });
    }

    for (i, note) in seq.notes.iter().enumerate() {
        if !note.is_valid() {
            return Err(MidiError::Serialize { index: i, reason: format!("invalid note {note:?}") });
        }
        let on = tick_of(timing, note.onset, i)?;
        let off = tick_of(timing, note.end(), i)?.max(on + 1);
        if off > MAX_TICK {
            return Err(MidiError::Serialize { index: i, reason: "note end beyond tick range".into() });
        }
        let ch = note.channel;
        let events = &mut tracks[note.track as usize];
        events.push(Event { tick: on, slot: Slot::NoteOn, key: note.pitch, seq: i, bytes: vec![0x90 | ch, note.pitch, note.velocity] });
        events.push(Event { tick: off, slot: Slot::NoteOff, key: note.pitch, seq: i, bytes: vec![0x80 | ch, note.pitch, 0x40] });
    }

    let last_event = tracks.iter().flatten().map(|e| e.tick).max().unwrap_or(0);
    let end_tick = if seq.end_time > 0.0 { tick_of(timing, seq.end_time, seq.notes.len())? } else { 0 };
    let end_tick = end_tick.max(last_event);

    let format: u16 = if n_tracks == 1 { 0 } else { 1 };
    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&format.to_be_bytes());
    out.extend_from_slice(&(n_tracks as u16).to_be_bytes());
    out.extend_from_slice(&timing.ppq.to_be_bytes());

    for mut events in tracks {
        events.sort_by_key(|e| (e.tick, e.slot, e.key, e.seq));
        let mut body = Vec::new();
        let mut at = 0u64;
        for e in &events {
            push_varlen(&mut body, (e.tick - at) as u32);
            body.extend_from_slice(&e.bytes);
            at = e.tick;
        }
        push_varlen(&mut body, (end_tick - at) as u32);
        body.extend_from_slice(&[0xFF, 0x2F, 0x00]);
        out.extend_from_slice(b"MTrk");
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
    }
    Ok(out)
}
