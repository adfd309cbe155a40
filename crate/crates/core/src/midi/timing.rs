//! Tick, beat and second clocks.

use serde::{Deserialize, Serialize};

/// Ticks per quarter note used when synthesizing files.
pub const DEFAULT_PPQ: u16 = 480;
/// 120 BPM, the tempo assumed when a file carries no tempo event.
pub const DEFAULT_TEMPO: u32 = 500_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TempoChange {
    pub tick: u64,
    /// Microseconds per quarter note.
    pub micros_per_quarter: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSignature {
    pub tick: u64,
    pub numerator: u8,
    pub denominator: u8,
}

impl TimeSignature {
    pub fn is_common_time(&self) -> bool {
        self.numerator == 4 && self.denominator == 4
    }
}

/// Tempo and meter map of a file.
///
/// Both change lists are sorted by tick, start at tick 0 and are never empty.
/// Beats are quarter notes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingMap {
    pub ppq: u16,
    tempo_changes: Vec<TempoChange>,
    time_signatures: Vec<TimeSignature>,
}

impl Default for TimingMap {
    fn default() -> Self {
        Self::constant(DEFAULT_PPQ, DEFAULT_TEMPO)
    }
}

impl TimingMap {
    /// A map with a single tempo and 4/4 meter.
    pub fn constant(ppq: u16, micros_per_quarter: u32) -> Self {
        assert!(ppq > 0, "ppq must be positive");
        assert!(micros_per_quarter > 0, "tempo must be positive");
        TimingMap {
            ppq,
            tempo_changes: vec![TempoChange { tick: 0, micros_per_quarter }],
            time_signatures: vec![TimeSignature { tick: 0, numerator: 4, denominator: 4 }],
        }
    }

    pub fn from_bpm(ppq: u16, bpm: f64) -> Self {
        Self::constant(ppq, (60_000_000.0 / bpm).round() as u32)
    }

    /// Builds a map from raw change lists, normalizing them: entries are
    /// sorted (stable), later entries at the same tick win, zero tempos are
    /// dropped, and a default is inserted at tick 0 when missing.
    pub fn new(ppq: u16, tempo_changes: Vec<TempoChange>, time_signatures: Vec<TimeSignature>) -> Self {
        assert!(ppq > 0, "ppq must be positive");
        let mut tempos: Vec<TempoChange> =
            tempo_changes.into_iter().filter(|t| t.micros_per_quarter > 0).collect();
        tempos.sort_by_key(|t| t.tick);
        let mut tempos = dedup_last_wins(tempos, |t| t.tick);
        if tempos.first().is_none_or(|t| t.tick != 0) {
            tempos.insert(0, TempoChange { tick: 0, micros_per_quarter: DEFAULT_TEMPO });
        }
        // Drop redundant repeats so the map has a canonical form.
        tempos.dedup_by(|later, earlier| later.micros_per_quarter == earlier.micros_per_quarter);

        let mut sigs = time_signatures;
        sigs.sort_by_key(|s| s.tick);
        let mut sigs = dedup_last_wins(sigs, |s| s.tick);
        if sigs.first().is_none_or(|s| s.tick != 0) {
            sigs.insert(0, TimeSignature { tick: 0, numerator: 4, denominator: 4 });
        }
        sigs.dedup_by(|later, earlier| {
            later.numerator == earlier.numerator && later.denominator == earlier.denominator
        });

        TimingMap { ppq, tempo_changes: tempos, time_signatures: sigs }
    }

    pub fn tempo_changes(&self) -> &[TempoChange] {
        &self.tempo_changes
    }

    pub fn time_signatures(&self) -> &[TimeSignature] {
        &self.time_signatures
    }

    /// True when the whole map is in 4/4.
    pub fn is_common_time(&self) -> bool {
        self.time_signatures.iter().all(TimeSignature::is_common_time)
    }

    /// True when the map equals the implicit defaults of a file without meta events.
    pub fn is_default_meta(&self) -> bool {
        self.tempo_changes.len() == 1
            && self.tempo_changes[0].micros_per_quarter == DEFAULT_TEMPO
            && self.time_signatures.len() == 1
            && self.time_signatures[0].is_common_time()
    }

    pub fn beats_of_tick(&self, tick: u64) -> f64 {
        tick as f64 / self.ppq as f64
    }

    /// Converts a tick position to seconds.
    pub fn seconds_of_tick(&self, tick: u64) -> f64 {
        let mut seconds = 0.0;
        let mut prev_tick = 0u64;
        let mut tempo = self.tempo_changes[0].micros_per_quarter;
        for change in &self.tempo_changes[1..] {
            if change.tick >= tick {
                break;
            }
            seconds += self.span_seconds(change.tick - prev_tick, tempo);
            prev_tick = change.tick;
            tempo = change.micros_per_quarter;
        }
        seconds + self.span_seconds(tick - prev_tick, tempo)
    }

    fn span_seconds(&self, ticks: u64, tempo: u32) -> f64 {
        ticks as f64 * tempo as f64 / (self.ppq as f64 * 1e6)
    }

    /// Seconds to beats, integrating the tempo map piecewise.
    pub fn beats_of(&self, seconds: f64) -> f64 {
        debug_assert!(seconds >= 0.0);
        let mut elapsed = 0.0;
        let mut beats = 0.0;
        let mut tempo = self.tempo_changes[0].micros_per_quarter;
        for change in &self.tempo_changes[1..] {
            let change_beats = self.beats_of_tick(change.tick);
            let span = (change_beats - beats) * tempo as f64 / 1e6;
            if elapsed + span > seconds {
                break;
            }
            elapsed += span;
            beats = change_beats;
            tempo = change.micros_per_quarter;
        }
        beats + (seconds - elapsed) * 1e6 / tempo as f64
    }

    /// Beats to seconds; inverse of [`TimingMap::beats_of`].
    pub fn seconds_of(&self, beats: f64) -> f64 {
        debug_assert!(beats >= 0.0);
        let mut elapsed = 0.0;
        let mut at_beat = 0.0;
        let mut tempo = self.tempo_changes[0].micros_per_quarter;
        for change in &self.tempo_changes[1..] {
            let change_beats = self.beats_of_tick(change.tick);
            if change_beats > beats {
                break;
            }
            elapsed += (change_beats - at_beat) * tempo as f64 / 1e6;
            at_beat = change_beats;
            tempo = change.micros_per_quarter;
        }
        elapsed + (beats - at_beat) * tempo as f64 / 1e6
    }

    /// Nearest tick for a time in seconds.
    pub fn tick_of_seconds(&self, seconds: f64) -> f64 {
        (self.beats_of(seconds) * self.ppq as f64).round()
    }
}

fn dedup_last_wins<T, K: PartialEq>(items: Vec<T>, key: impl Fn(&T) -> K) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(items.len());
    for item in items {
        match out.last_mut() {
            Some(last) if key(last) == key(&item) => *last = item,
            _ => out.push(item),
        }
    }
    out
}
