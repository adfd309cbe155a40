//! A small deterministic corpus: three invented standards with section
//! annotations and four performances of them. Each performance plays
//! embellished versions of the refrain's 4-bar segments at its own tempo,
//! and one segment appears as an exact 120 BPM rendering (the planted copy)
//! starting on the 0.5 s scan grid.

use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::leadsheet::{chord_spans, ChordChange, KeyHint, LeadSheet, Mode, Section, SectionLabel, BEATS_PER_BAR};
use super::segmentation::{segment_leadsheet, OriginalSegment};
use super::{ChordQuality, ChordSymbol, CorpusError, Result};
use crate::midi::{write_midi, NoteEvent, NoteSequence, TimingMap};

const MAJOR_STEPS: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
const PERFORMERS: [&str; 3] = ["Ada Keys", "Bix Ivory", "Cleo Stride"];
/// Silence between passages in a performance.
const PASSAGE_GAP_S: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStandard {
    /// The full sheet including any intro or verse.
    pub sheet: LeadSheet,
    pub sections: Vec<Section>,
}

/// Where a segment is played inside a performance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub segment_id: String,
    pub start_s: f64,
    pub end_s: f64,
    /// True for the exact 120 BPM rendering.
    pub planted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPerformance {
    pub id: String,
    pub standard_id: String,
    pub performer: String,
    pub sequence: NoteSequence,
    pub passages: Vec<Passage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub standards: Vec<SyntheticStandard>,
    pub performances: Vec<SyntheticPerformance>,
}

/// Side-file entry describing one generated performance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceInfo {
    pub id: String,
    pub standard_id: String,
    pub performer: String,
    pub midi: String,
    pub passages: Vec<Passage>,
}

fn scale_pitch(root: u8, degree: i32) -> u8 {
    let octave = degree.div_euclid(7);
    let step = MAJOR_STEPS[degree.rem_euclid(7) as usize];
    (60 + root as i32 + 12 * octave + step as i32) as u8
}

fn progression(root: u8, bars: u32, rng: &mut ChaCha8Rng) -> Vec<ChordChange> {
    // I vi ii V and iii VI ii V turnarounds, one chord per bar.
    let cycles: [[(u8, ChordQuality); 4]; 2] = [
        [(0, ChordQuality::Major7), (9, ChordQuality::Minor7), (2, ChordQuality::Minor7), (7, ChordQuality::Dominant7)],
        [(4, ChordQuality::Minor7), (9, ChordQuality::Dominant7), (2, ChordQuality::Minor7), (7, ChordQuality::Dominant7)],
    ];
    let mut chords = Vec::new();
    let mut cycle = cycles[0];
    for bar in 0..bars {
        if bar % 4 == 0 {
            cycle = if bar == 0 { cycles[0] } else { *cycles.choose(rng).expect("non-empty") };
        }
        let (offset, quality) = cycle[(bar % 4) as usize];
        let symbol = ChordSymbol::new((root + offset) % 12, quality);
        if chords.last().map(|c: &ChordChange| c.symbol) != Some(symbol) {
            chords.push(ChordChange { beat: bar as f64 * BEATS_PER_BAR, symbol });
        }
    }
    chords
}

fn melody(root: u8, bars: u32, rng: &mut ChaCha8Rng) -> Vec<NoteEvent> {
    let rhythms: [&[f64]; 6] = [&[2.0, 2.0], &[1.0, 1.0, 2.0], &[1.0, 1.0, 1.0, 1.0], &[3.0, 1.0], &[1.5, 0.5, 2.0], &[4.0]];
    let mut notes = Vec::new();
    let mut degree: i32 = rng.random_range(0..5);
    for bar in 0..bars {
        let pattern = rhythms.choose(rng).expect("non-empty");
        let mut beat = bar as f64 * BEATS_PER_BAR;
        for &len in pattern.iter() {
            let rest = rng.random_bool(0.1);
            if !rest {
                let pitch = scale_pitch(root, degree);
                notes.push(NoteEvent::new(beat, len * 0.9, pitch, rng.random_range(70..96)));
            }
            degree = (degree + rng.random_range(-2..=2)).clamp(-2, 9);
            beat += len;
        }
    }
    notes
}

/// Embellished two-handed version of a segment starting at `t0` seconds,
/// with `period` seconds per beat.
fn embellish(seg: &OriginalSegment, t0: f64, period: f64, rng: &mut ChaCha8Rng) -> Vec<NoteEvent> {
    let origin = seg.start_beat();
    let at = |beat: f64, rng: &mut ChaCha8Rng| t0 + (beat - origin) * period + rng.random_range(-0.01..0.01);
    let mut out = Vec::new();
    for n in &seg.notes {
        let split = n.duration >= 0.9 && rng.random_bool(0.5);
        let vel = rng.random_range(72..104);
        if split {
            let half = n.duration / 2.0;
            let neighbour = if rng.random_bool(0.5) { n.pitch + 2 } else { n.pitch - 1 };
            let s = at(n.onset, rng).max(t0);
            out.push(NoteEvent::new(s, half * period * 0.9, n.pitch, vel));
            let s2 = at(n.onset + half, rng).max(t0);
            out.push(NoteEvent::new(s2, half * period * 0.9, neighbour, vel - 6));
        } else {
            let s = at(n.onset, rng).max(t0);
            out.push(NoteEvent::new(s, n.duration * period * 0.95, n.pitch, vel));
        }
    }
    for (s, e, symbol) in chord_spans(&seg.chords, origin, seg.end_beat()) {
        let mut beat = s;
        while beat < e - 1e-9 {
            let len = (e - beat).min(2.0);
            let onset = at(beat, rng).max(t0);
            for p in symbol.voicing() {
                out.push(NoteEvent::new(onset, len * period * 0.8, p - 12, rng.random_range(50..68)));
            }
            beat += 2.0;
        }
    }
    out
}

fn round_up_half(t: f64) -> f64 {
    (t * 2.0).ceil() / 2.0
}

impl SyntheticCorpus {
    pub fn generate(seed: u64) -> SyntheticCorpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layouts: [(&str, &str, Vec<Section>); 3] = [
            (
                "blue-harbour",
                "Blue Harbour",
                vec![Section::new(SectionLabel::Intro, 0, 4), Section::new(SectionLabel::Refrain, 4, 20)],
            ),
            (
                "late-tram",
                "Late Tram",
                vec![Section::new(SectionLabel::Refrain, 0, 16), Section::new(SectionLabel::Refrain, 16, 32)],
            ),
            (
                "pale-moonrise",
                "Pale Moonrise",
                vec![Section::new(SectionLabel::Verse, 0, 4), Section::new(SectionLabel::Refrain, 4, 22)],
            ),
        ];
        let mut standards = Vec::new();
        for (id, title, sections) in layouts {
            let bars = sections.iter().map(|s| s.end_bar).max().unwrap_or(0);
            let root = rng.random_range(0..12u8);
            let mut sheet = LeadSheet::new(id, title, bars, melody(root, bars, &mut rng), progression(root, bars, &mut rng))
                .expect("generated sheets are valid");
            sheet.key_hint = Some(KeyHint { root, mode: Mode::Major });
            standards.push(SyntheticStandard { sheet, sections });
        }

        let mut performances = Vec::new();
        for k in 0..4usize {
            let std = &standards[k % 3];
            let refrain = super::trim_to_refrain(&std.sheet, &std.sections).expect("has a refrain");
            let segments = segment_leadsheet(&refrain, 4).expect("non-empty melody");
            let period = [0.42, 0.55, 0.48, 0.62][k];
            let planted = (k + 1) % segments.len();
            let mut notes = Vec::new();
            let mut passages = Vec::new();
            let mut t = 1.0;
            for (i, seg) in segments.iter().enumerate() {
                let start = round_up_half(t);
                let (chunk, end) = if i == planted {
                    let chunk = seg.render().into_iter().map(|n| NoteEvent { onset: n.onset + start, ..n });
                    (chunk.collect::<Vec<_>>(), start + seg.rendered_seconds())
                } else {
                    (embellish(seg, start, period, &mut rng), start + seg.length_beats() * period)
                };
                notes.extend(chunk);
                passages.push(Passage { segment_id: seg.id.clone(), start_s: start, end_s: end, planted: i == planted });
                t = end + PASSAGE_GAP_S;
            }
            performances.push(SyntheticPerformance {
                id: format!("perf{}", k + 1),
                standard_id: std.sheet.id.clone(),
                performer: PERFORMERS[k % PERFORMERS.len()].to_string(),
                sequence: NoteSequence::new(notes, TimingMap::default()),
                passages,
            });
        }
        SyntheticCorpus { standards, performances }
    }

    /// Writes `standards/{id}.mid`, `standards/{id}.sections.json`,
    /// `performances/{id}.mid` and `performances.json` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CorpusError::Io { path, source }
        };
        for sub in ["standards", "performances"] {
            let d = dir.join(sub);
            fs::create_dir_all(&d).map_err(io(&d))?;
        }
        for s in &self.standards {
            let path = dir.join(format!("standards/{}.mid", s.sheet.id));
            let bytes = write_midi(&s.sheet.to_midi(TimingMap::default()))
                .map_err(|source| CorpusError::Midi { path: path.clone(), source })?;
            fs::write(&path, bytes).map_err(io(&path))?;
            let path = dir.join(format!("standards/{}.sections.json", s.sheet.id));
            let json = serde_json::to_string_pretty(&s.sections).expect("sections serialise");
            fs::write(&path, json).map_err(io(&path))?;
        }
        let mut infos = Vec::new();
        for p in &self.performances {
            let rel = format!("performances/{}.mid", p.id);
            let path = dir.join(&rel);
            let bytes = write_midi(&p.sequence).map_err(|source| CorpusError::Midi { path: path.clone(), source })?;
            fs::write(&path, bytes).map_err(io(&path))?;
            infos.push(PerformanceInfo {
                id: p.id.clone(),
                standard_id: p.standard_id.clone(),
                performer: p.performer.clone(),
                midi: rel,
                passages: p.passages.clone(),
            });
        }
        let path = dir.join("performances.json");
        let json = serde_json::to_string_pretty(&infos).expect("infos serialise");
        fs::write(&path, json).map_err(io(&path))
    }
}
