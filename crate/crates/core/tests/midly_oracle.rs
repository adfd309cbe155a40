//! Cross-checks the SMF reader and writer against the midly crate.

use midly::num::{u15, u24, u28, u4, u7};
use midly::{Format, Header, MetaMessage, MidiMessage, Smf, Timing, TrackEvent, TrackEventKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use varkit::midi::{parse_midi, write_midi, TempoChange, TimingMap};
use varkit::{NoteEvent, NoteSequence};

/// Absolute-tick note spans (on, off, channel, key, velocity) per track.
fn midly_notes(smf: &Smf) -> Vec<(u64, u64, u8, u8, u8, usize)> {
    let mut out = Vec::new();
    for (track_index, track) in smf.tracks.iter().enumerate() {
        let mut tick = 0u64;
        let mut open = std::collections::HashMap::new();
        for ev in track {
            tick += ev.delta.as_int() as u64;
            if let TrackEventKind::Midi { channel, message } = ev.kind {
                let ch = channel.as_int();
                match message {
                    MidiMessage::NoteOn { key, vel } if vel.as_int() > 0 => {
                        open.insert((ch, key.as_int()), (tick, vel.as_int()));
                    }
                    MidiMessage::NoteOn { key, .. } | MidiMessage::NoteOff { key, .. } => {
                        let (on, vel) = open.remove(&(ch, key.as_int())).expect("note-off matches a note-on");
                        out.push((on, tick, ch, key.as_int(), vel, track_index));
                    }
                    _ => {}
                }
            }
        }
        assert!(open.is_empty());
    }
    out.sort();
    out
}

#[test]
fn midly_reads_what_we_write() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let timing = TimingMap::new(
            480,
            vec![
                TempoChange { tick: 0, micros_per_quarter: rng.random_range(300_000..900_000) },
                TempoChange { tick: 1920, micros_per_quarter: rng.random_range(300_000..900_000) },
            ],
            vec![],
        );
        let notes: Vec<NoteEvent> = (0..30)
            .map(|i| NoteEvent {
                track: (i % 2) as u16,
                channel: rng.random_range(0..16),
                // Distinct pitches per track avoid overlapping same-key notes.
                ..NoteEvent::new(rng.random_range(0.0..10.0), rng.random_range(0.05..2.0), 30 + i as u8, rng.random_range(1..=127))
            })
            .collect();
        let seq = NoteSequence::new(notes, timing);
        let bytes = write_midi(&seq).unwrap();
        let smf = Smf::parse(&bytes).unwrap();
        assert_eq!(smf.header.timing, Timing::Metrical(u15::new(480)));
        assert_eq!(smf.tracks.len(), 2);
        let mut want: Vec<_> = seq
            .notes
            .iter()
            .map(|n| {
                let on = seq.timing.tick_of_seconds(n.onset) as u64;
                let off = (seq.timing.tick_of_seconds(n.end()) as u64).max(on + 1);
                (on, off, n.channel, n.pitch, n.velocity, n.track as usize)
            })
            .collect();
        want.sort();
        assert_eq!(midly_notes(&smf), want);
    }
}

#[test]
fn we_read_what_midly_writes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let ppq = [96u16, 384, 480][rng.random_range(0..3)];
        let tempo = rng.random_range(300_000..900_000u32);
        let mut events = vec![TrackEvent { delta: u28::new(0), kind: TrackEventKind::Meta(MetaMessage::Tempo(u24::new(tempo))) }];
        let mut expected = Vec::new();
        let mut tick = 0u64;
        for i in 0..20u8 {
            let gap = rng.random_range(0..200u32);
            let len = rng.random_range(1..400u32);
            let (key, vel, ch) = (u7::new(40 + i), u7::new(rng.random_range(1..=127)), u4::new(rng.random_range(0..16)));
            events.push(TrackEvent { delta: u28::new(gap), kind: TrackEventKind::Midi { channel: ch, message: MidiMessage::NoteOn { key, vel } } });
            // Alternate the two note-off spellings.
            let off = if i % 2 == 0 { MidiMessage::NoteOff { key, vel: u7::new(64) } } else { MidiMessage::NoteOn { key, vel: u7::new(0) } };
            events.push(TrackEvent { delta: u28::new(len), kind: TrackEventKind::Midi { channel: ch, message: off } });
            tick += gap as u64;
            expected.push((tick, tick + len as u64, ch.as_int(), key.as_int(), vel.as_int()));
            tick += len as u64;
        }
        events.push(TrackEvent { delta: u28::new(0), kind: TrackEventKind::Meta(MetaMessage::EndOfTrack) });
        let smf = Smf { header: Header::new(Format::SingleTrack, Timing::Metrical(u15::new(ppq))), tracks: vec![events] };
        let mut bytes = Vec::new();
        smf.write_std(&mut bytes).unwrap();

        let seq = parse_midi(&bytes).unwrap();
        assert_eq!(seq.timing.ppq, ppq);
        assert_eq!(seq.timing.tempo_changes()[0].micros_per_quarter, tempo);
        assert_eq!(seq.notes.len(), expected.len());
        let seconds = |t: u64| seq.timing.seconds_of_tick(t);
        for (n, &(on, off, ch, key, vel)) in seq.notes.iter().zip(&expected) {
            assert_eq!((n.channel, n.pitch, n.velocity), (ch, key, vel));
            assert!((n.onset - seconds(on)).abs() < 1e-9);
            assert!((n.end() - seconds(off)).abs() < 1e-9);
        }
    }
}
