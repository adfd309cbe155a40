//! Release criteria. Each check returns a one-line detail on success and
//! the first violation on failure.

use std::collections::{BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use varkit::analysis::{
    align_melodies, average_deviation, corpus_stats_with, n_pitches, pitch_class_entropy, pitch_class_deviation,
    pitch_in_scale, pitch_range, polyphony, AlignmentResult, Melody, MelodyNote, SegmentFeatures,
    POLYPHONY_STEPS_PER_BEAT,
};
use varkit::corpus::synthetic::SyntheticCorpus;
use varkit::corpus::{
    review_pair, scan_candidates, score_candidate, segment_leadsheet, trim_to_refrain, CorpusStore, LeadSheet,
    ScoreConfig, VariationSegment,
};
use varkit::midi::{parse_midi, sort_notes, write_midi, TempoChange, TimingMap};
use varkit::overpaint::tokenizer::{bin_velocity, STEPS_PER_SECOND};
use varkit::overpaint::{
    decode, encode_notes, evaluate_generation, example_from_pair, generate_from_notes, split, train, GenerateOptions,
    Model, ModelConfig, TokenId, TrainConfig, TrainHooks, GENERATION_ROWS,
};
use varkit::par::Execution;
use varkit::{Clock, NoteEvent, NoteSequence, Segment};

pub type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Random segments with a mix of grid-aligned and arbitrary times, some
/// notes shorter than one polyphony step, on either clock.
pub fn random_segments(n: usize, seed: u64) -> Vec<Segment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.random_range(1..=40);
            if i % 25 == 0 {
                // Every note falls between two polyphony samples.
                let notes = (0..len.min(6))
                    .map(|_| {
                        let onset = (rng.random_range(0..64) as f64 + 0.3) / 24.0;
                        NoteEvent::new(onset, 0.2 / 24.0, rng.random_range(21..=108), 64)
                    })
                    .collect();
                return Segment::new(format!("r{i}"), Clock::Beats, notes);
            }
            let notes = (0..len)
                .map(|_| {
                    let onset = if rng.random_bool(0.5) {
                        rng.random_range(0..128) as f64 / 8.0
                    } else {
                        rng.random_range(0.0..16.0)
                    };
                    let duration = match rng.random_range(0..4) {
                        0 => rng.random_range(0.001..0.04),
                        1 => rng.random_range(1..16) as f64 / 4.0,
                        _ => rng.random_range(0.05..4.0),
                    };
                    NoteEvent::new(onset, duration, rng.random_range(21..=108), rng.random_range(1..=127))
                })
                .collect();
            let clock = if rng.random_bool(0.5) { Clock::Beats } else { Clock::Seconds };
            Segment::new(format!("r{i}"), clock, notes)
        })
        .collect()
}

fn oracle_entropy(seg: &Segment) -> f64 {
    let mut hist: HashMap<u8, usize> = HashMap::new();
    for n in &seg.notes {
        *hist.entry(n.pitch % 12).or_default() += 1;
    }
    let total = seg.notes.len() as f64;
    hist.values().map(|&c| c as f64 / total).map(|p| p * (1.0 / p).log2()).sum()
}

fn oracle_range(seg: &Segment) -> f64 {
    let mut pitches: Vec<u8> = seg.notes.iter().map(|n| n.pitch).collect();
    pitches.sort();
    (pitches[pitches.len() - 1] - pitches[0]) as f64
}

fn oracle_n_pitches(seg: &Segment) -> f64 {
    seg.notes.iter().map(|n| n.pitch).collect::<BTreeSet<_>>().len() as f64
}

fn oracle_in_scale(seg: &Segment) -> f64 {
    let mut best = 0.0f64;
    for tonic in 0..12u8 {
        let scale: Vec<u8> = [0, 2, 4, 5, 7, 9, 11].iter().map(|s| (tonic + s) % 12).collect();
        let inside = seg.notes.iter().filter(|n| scale.contains(&(n.pitch % 12))).count();
        best = best.max(inside as f64 / seg.notes.len() as f64);
    }
    best
}

/// Counts sounding notes at every grid tick up to the last note end. The
/// flag is set when no tick hits a note and onsets are used instead.
fn oracle_polyphony(seg: &Segment) -> (f64, bool) {
    let notes = seg.notes_in_beats();
    let steps = POLYPHONY_STEPS_PER_BEAT as f64;
    let last = notes.iter().map(|n| n.onset + n.duration).fold(0.0, f64::max);
    let (mut sounding, mut total) = (0usize, 0usize);
    let mut k = 0u64;
    while (k as f64 / steps) <= last {
        let t = k as f64 / steps;
        let c = notes.iter().filter(|n| n.onset <= t && t < n.onset + n.duration).count();
        if c > 0 {
            sounding += 1;
            total += c;
        }
        k += 1;
    }
    if sounding > 0 {
        return (total as f64 / sounding as f64, false);
    }
    let onsets: BTreeSet<u64> = notes.iter().map(|n| n.onset.to_bits()).collect();
    let counts: usize = onsets
        .iter()
        .map(|&b| f64::from_bits(b))
        .map(|t| notes.iter().filter(|n| n.onset <= t && t < n.onset + n.duration).count())
        .sum();
    (counts as f64 / onsets.len() as f64, true)
}

pub fn metric_oracle() -> Outcome {
    let segments = random_segments(500, 11);
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    let mut fallback = 0;
    for seg in &segments {
        let got = [
            pitch_class_entropy(seg).map_err(|e| e.to_string())?,
            pitch_range(seg).map_err(|e| e.to_string())? as f64,
            polyphony(seg).map_err(|e| e.to_string())?,
            n_pitches(seg).map_err(|e| e.to_string())? as f64,
            pitch_in_scale(seg, None).map_err(|e| e.to_string())?,
        ];
        let (poly, used_onsets) = oracle_polyphony(seg);
        fallback += used_onsets as usize;
        let want = [oracle_entropy(seg), oracle_range(seg), poly, oracle_n_pitches(seg), oracle_in_scale(seg)];
        for (k, (g, w)) in got.iter().zip(&want).enumerate() {
            let err = (g - w).abs();
            ensure!(err <= 1e-9, "{} on {}: {g} vs oracle {w}", SegmentFeatures::NAMES[k], seg.id);
            worst = worst.max(err);
        }
    }
    let elapsed = t0.elapsed();
    ensure!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    Ok(format!("500 segments x 5 metrics, max |err| {worst:.1e}, {fallback} onset-fallback cases, {elapsed:.2?}"))
}

pub fn entropy_bounds() -> Outcome {
    let max = 12f64.log2();
    let mut checked = 0;
    for seg in random_segments(500, 11) {
        let h = pitch_class_entropy(&seg).map_err(|e| e.to_string())?;
        ensure!((0.0..=max + 1e-12).contains(&h), "{}: H = {h}", seg.id);
        for shift in -11..=11 {
            let Some(t) = seg.transposed(shift) else { continue };
            let ht = pitch_class_entropy(&t).map_err(|e| e.to_string())?;
            ensure!((h - ht).abs() <= 1e-12, "{} shifted {shift}: {h} vs {ht}", seg.id);
            checked += 1;
        }
    }
    Ok(format!("0 <= H <= {max:.4} on 500 segments, {checked} transpositions invariant"))
}

fn random_melody(rng: &mut ChaCha8Rng, len: usize) -> Melody {
    let mut t = 0.0;
    let notes = (0..len)
        .map(|_| {
            // Quarter-beat multiples keep every cost sum exact.
            let d = rng.random_range(1..=8) as f64 / 4.0;
            let n = MelodyNote::new(rng.random_range(55..80), t, d);
            t += d;
            n
        })
        .collect();
    Melody::new(notes).expect("monophonic by construction")
}

fn sub_cost(a: &MelodyNote, b: &MelodyNote) -> f64 {
    pitch_class_deviation(a.pitch, b.pitch) as f64 + (a.duration - b.duration).abs()
}

/// Minimum over every global alignment, enumerated path by path.
fn exhaustive_min(a: &[MelodyNote], b: &[MelodyNote], gap: f64) -> f64 {
    fn walk(a: &[MelodyNote], b: &[MelodyNote], gap: f64, acc: f64, best: &mut f64) {
        match (a.split_first(), b.split_first()) {
            (None, None) => *best = best.min(acc),
            (Some((x, ra)), Some((y, rb))) => {
                walk(ra, rb, gap, acc + sub_cost(x, y), best);
                walk(ra, b, gap, acc + gap, best);
                walk(a, rb, gap, acc + gap, best);
            }
            (Some((_, ra)), None) => walk(ra, b, gap, acc + gap, best),
            (None, Some((_, rb))) => walk(a, rb, gap, acc + gap, best),
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, gap, 0.0, &mut best);
    best
}

/// Cost of an alignment recomputed from its pairs.
fn path_cost(r: &AlignmentResult, a: &Melody, b: &Melody, gap: f64) -> f64 {
    r.pairs
        .iter()
        .map(|&(i, j)| match (i, j) {
            (Some(i), Some(j)) => sub_cost(&a.notes()[i], &b.notes()[j]),
            _ => gap,
        })
        .sum()
}

pub fn alignment_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gap = varkit::analysis::DEFAULT_GAP_PENALTY;
    let mut pairs = 0;
    while pairs < 200 {
        let (la, lb) = (rng.random_range(0..=6), rng.random_range(0..=6));
        if la + lb == 0 {
            continue;
        }
        let (a, b) = (random_melody(&mut rng, la), random_melody(&mut rng, lb));
        let r = align_melodies(&a, &b).map_err(|e| e.to_string())?;
        let best = exhaustive_min(a.notes(), b.notes(), gap);
        ensure!(r.cost == best, "pair {pairs}: DP {} vs exhaustive {best}", r.cost);
        ensure!(path_cost(&r, &a, &b, gap) == r.cost, "pair {pairs}: traceback cost differs");
        let back = align_melodies(&b, &a).map_err(|e| e.to_string())?;
        ensure!(back.cost == r.cost, "pair {pairs}: cost not symmetric");
        if r.n_aligned > 0 {
            let ab = average_deviation(&r, &a, &b).map_err(|e| e.to_string())?;
            let ba = average_deviation(&r.swapped(), &b, &a).map_err(|e| e.to_string())?;
            ensure!(ab.average_deviation == ba.average_deviation, "pair {pairs}: deviation not symmetric");
        }
        if la > 0 {
            let own = align_melodies(&a, &a).map_err(|e| e.to_string())?;
            let d = average_deviation(&own, &a, &a).map_err(|e| e.to_string())?;
            ensure!(d.average_deviation == 0.0 && own.cost == 0.0, "pair {pairs}: self deviation {}", d.average_deviation);
        }
        pairs += 1;
    }
    Ok("200 random pairs (len <= 6): DP cost == exhaustive minimum, self deviation 0, symmetric".into())
}

pub fn deviation_hand_case() -> Outcome {
    let mel = |pitches: [u8; 4]| {
        Melody::new(pitches.iter().enumerate().map(|(i, &p)| MelodyNote::new(p, i as f64, 1.0)).collect()).unwrap()
    };
    let (a, b) = (mel([60, 62, 64, 65]), mel([60, 62, 64, 66]));
    let r = align_melodies(&a, &b).map_err(|e| e.to_string())?;
    let d = average_deviation(&r, &a, &b).map_err(|e| e.to_string())?;
    ensure!(r.n_aligned == 4, "{} aligned", r.n_aligned);
    ensure!(d.average_deviation == 0.25, "got {}", d.average_deviation);
    Ok("4 aligned notes, one semitone off: 0.25".into())
}

fn random_sequence(rng: &mut ChaCha8Rng) -> NoteSequence {
    let ppq = [96u16, 240, 480, 960][rng.random_range(0..4)];
    let mut tempos = vec![TempoChange { tick: 0, micros_per_quarter: rng.random_range(300_000..1_000_000) }];
    for _ in 0..rng.random_range(0..3) {
        let tick = tempos.last().unwrap().tick + rng.random_range(1..20) as u64 * ppq as u64;
        tempos.push(TempoChange { tick, micros_per_quarter: rng.random_range(300_000..1_000_000) });
    }
    let timing = TimingMap::new(ppq, tempos, vec![]);
    let tracks = rng.random_range(1..=3);
    let mut notes: Vec<NoteEvent> = (0..rng.random_range(0..60))
        .map(|_| NoteEvent {
            track: rng.random_range(0..tracks),
            channel: rng.random_range(0..16),
            ..NoteEvent::new(rng.random_range(0.0..30.0), rng.random_range(0.02..3.0), rng.random_range(0..=127), rng.random_range(1..=127))
        })
        .collect();
    // Same-key notes must not overlap, or the file cannot tell them apart.
    notes.sort_by(|a, b| (a.track, a.channel, a.pitch).cmp(&(b.track, b.channel, b.pitch)).then(a.onset.total_cmp(&b.onset)));
    let mut kept: Vec<NoteEvent> = Vec::new();
    for n in notes {
        match kept.last() {
            Some(p) if (p.track, p.channel, p.pitch) == (n.track, n.channel, n.pitch) && n.onset < p.end() + 0.05 => {}
            _ => kept.push(n),
        }
    }
    NoteSequence::new(kept, timing)
}

fn key_order(notes: &mut [NoteEvent]) {
    notes.sort_by(|a, b| (a.track, a.channel, a.pitch).cmp(&(b.track, b.channel, b.pitch)).then(a.onset.total_cmp(&b.onset)));
}

pub fn midi_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut total_notes = 0;
    for case in 0..1000 {
        let seq = random_sequence(&mut rng);
        let bytes = write_midi(&seq).map_err(|e| format!("case {case}: {e}"))?;
        let back = parse_midi(&bytes).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(back.timing.tempo_changes() == seq.timing.tempo_changes(), "case {case}: tempo map changed");
        ensure!(back.notes.len() == seq.notes.len(), "case {case}: {} notes became {}", seq.notes.len(), back.notes.len());
        let (mut want, mut got) = (seq.notes.clone(), back.notes.clone());
        key_order(&mut want);
        key_order(&mut got);
        let ppq = seq.timing.ppq as f64;
        let tick = |t: &TimingMap, s: f64| t.beats_of(s) * ppq;
        for (w, g) in want.iter().zip(&got) {
            ensure!(
                (w.pitch, w.velocity, w.channel, w.track) == (g.pitch, g.velocity, g.channel, g.track),
                "case {case}: {w:?} became {g:?}"
            );
            let on = (tick(&seq.timing, w.onset) - tick(&back.timing, g.onset)).abs();
            let off = (tick(&seq.timing, w.end()) - tick(&back.timing, g.end())).abs();
            ensure!(on <= 1.0 + 1e-6 && off <= 1.0 + 1e-6, "case {case}: {w:?} became {g:?} ({on:.3}/{off:.3} ticks)");
        }
        total_notes += want.len();
    }

    let valid: Vec<Vec<u8>> = (0..20).map(|_| write_midi(&random_sequence(&mut rng)).unwrap()).collect();
    let (mut accepted, mut rejected) = (0, 0);
    for case in 0..10_000 {
        let bytes: Vec<u8> = if case % 2 == 0 {
            (0..rng.random_range(0..256)).map(|_| rng.random()).collect()
        } else {
            let mut b = valid[case % valid.len()].clone();
            for _ in 0..rng.random_range(1..8) {
                match rng.random_range(0..3) {
                    0 if !b.is_empty() => {
                        let i = rng.random_range(0..b.len());
                        b[i] = rng.random();
                    }
                    1 => b.truncate(rng.random_range(0..=b.len())),
                    _ => {
                        let i = rng.random_range(0..=b.len());
                        b.insert(i, rng.random());
                    }
                }
            }
            b
        };
        match catch_unwind(AssertUnwindSafe(|| parse_midi(&bytes))) {
            Ok(Ok(seq)) => {
                ensure!(seq.notes.iter().all(NoteEvent::is_valid), "fuzz case {case}: invalid note accepted");
                accepted += 1;
            }
            Ok(Err(_)) => rejected += 1,
            Err(_) => return Err(format!("fuzz case {case} panicked on {} bytes", bytes.len())),
        }
    }
    Ok(format!("1000 sequences ({total_notes} notes) within one tick; fuzz: {accepted} parsed, {rejected} rejected, no panics"))
}

/// A segment already on the tokenizer's grid and velocity bins.
pub fn grid_notes(rng: &mut ChaCha8Rng) -> Vec<NoteEvent> {
    let step = |k: i64| k as f64 / STEPS_PER_SECOND;
    let mut spans: Vec<(u8, i64, i64)> = Vec::new();
    let mut notes: Vec<NoteEvent> = Vec::new();
    for _ in 0..rng.random_range(1..40) {
        let pitch = rng.random_range(0..=127);
        let on = rng.random_range(0..2000i64);
        let len = rng.random_range(1..300i64);
        // Same-pitch notes may touch but not overlap.
        if spans.iter().any(|&(p, a, b)| p == pitch && a < on + len && on < b) {
            continue;
        }
        spans.push((pitch, on, on + len));
        notes.push(NoteEvent::new(step(on), step(len), pitch, bin_velocity(rng.random_range(0..32))));
    }
    sort_notes(&mut notes);
    notes
}

pub fn tokenizer_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tokens = 0;
    for case in 0..1000 {
        let notes = grid_notes(&mut rng);
        let ids = encode_notes(&notes);
        let back = decode(&ids);
        ensure!(back.warnings.is_empty(), "case {case}: {:?}", back.warnings);
        ensure!(back.notes == notes, "case {case}: decode(encode(s)) != s");
        tokens += ids.len();
    }
    let shifts = |gap: f64| -> Vec<TokenId> {
        let ids = encode_notes(&[NoteEvent::new(gap, 0.5, 60, 64)]);
        ids.into_iter().take_while(|&t| (256..356).contains(&t)).map(|t| t - 255).collect()
    };
    for (gap, want) in [(1.5, vec![100, 50]), (0.01, vec![1]), (1.0, vec![100]), (2.37, vec![100, 100, 37])] {
        let got = shifts(gap);
        ensure!(got == want, "{gap} s became shifts {got:?}");
    }
    Ok(format!("1000 grid segments ({tokens} tokens) round-trip; 1.5 s -> [100, 50]"))
}

fn perturbed_model() -> Model {
    let cfg = ModelConfig { layers: 2, heads: 2, d_model: 8, d_ff: 16, max_len: 32, rel_window: 4, dropout: 0.0, seed: 9, ..ModelConfig::default() };
    let mut m = Model::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for p in m.params_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    m
}

pub fn gradient_check() -> Outcome {
    let mut m = perturbed_model();
    let tokens: Vec<TokenId> = vec![389, 60, 300, 188, 390, 64, 391];
    let weights = vec![true; tokens.len() - 1];
    let (_, _, grad) = m.loss_and_grad(&tokens, &weights, None).map_err(|e| e.to_string())?;
    // Near the cube root of machine epsilon; smaller steps let rounding
    // dominate on gradients around 1e-6.
    let eps = 1e-5;
    let mut worst = (0.0f64, String::new());
    for spec in m.specs().to_vec() {
        for k in spec.offset..spec.offset + spec.len() {
            let orig = m.params()[k];
            m.params_mut()[k] = orig + eps;
            let up = m.loss(&tokens, &weights).unwrap().0;
            m.params_mut()[k] = orig - eps;
            let down = m.loss(&tokens, &weights).unwrap().0;
            m.params_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = (numeric - grad[k]).abs() / (numeric.abs() + grad[k].abs()).max(1e-6);
            if err > worst.0 {
                worst = (err, spec.name.clone());
            }
        }
    }
    ensure!(worst.0 < 1e-4, "max relative error {:.2e} in {}", worst.0, worst.1);

    let mut row_err = 0.0f64;
    for layer in 0..2 {
        for p in m.attention_weights(&tokens, layer).map_err(|e| e.to_string())? {
            for (i, row) in p.rows().into_iter().enumerate() {
                row_err = row_err.max((row.sum() - 1.0).abs());
                ensure!(row.iter().skip(i + 1).all(|&w| w == 0.0), "layer {layer} row {i} attends ahead");
            }
        }
    }
    ensure!(row_err <= 1e-6, "softmax row sum off by {row_err}");

    let base = m.forward(&tokens).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for cut in 1..tokens.len() {
        let mut other = tokens.clone();
        for t in &mut other[cut..] {
            *t = rng.random_range(0..392);
        }
        let changed = m.forward(&other).map_err(|e| e.to_string())?;
        ensure!(
            base.rows().into_iter().take(cut).zip(changed.rows()).all(|(a, b)| a == b),
            "changing tokens from {cut} moved earlier logits"
        );
    }
    Ok(format!("{} parameters, max relative error {:.1e}; row sums within {row_err:.0e}; no causal leakage", m.n_params(), worst.0))
}

pub fn overfit() -> Outcome {
    let examples = super::overfit_examples();
    let t0 = Instant::now();
    let ckpt = train(
        &examples,
        &[],
        super::overfit_model_config(),
        &super::overfit_train_config(),
        Execution::Parallel,
        TrainHooks::default(),
    )
    .map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    let first = ckpt.history.iter().find(|r| r.train_loss < 0.1).map(|r| r.step);
    let Some(first) = first.filter(|&s| s <= 2000) else {
        return Err(format!("loss never below 0.1; last {:?}", ckpt.history.last().map(|r| r.train_loss)));
    };
    ensure!(elapsed.as_secs() < 300, "training took {elapsed:?}");
    let model = ckpt.model().map_err(|e| e.to_string())?;
    let mut worst = 1.0f64;
    for (k, ex) in examples.iter().enumerate() {
        let r = super::greedy_reproduction(&model, ex);
        ensure!(r >= 0.95, "pair {k} reproduced {r:.3}");
        worst = worst.min(r);
    }
    Ok(format!("loss < 0.1 at step {first}, {} steps in {elapsed:.1?}; worst greedy reproduction {worst:.3}", ckpt.step))
}

fn registered_store(dir: &Path, corpus: &SyntheticCorpus) -> Result<CorpusStore, String> {
    corpus.write_to(&dir.join("synthetic")).map_err(|e| e.to_string())?;
    let mut store = CorpusStore::open_or_create(dir.join("corpus/manifest.json")).map_err(|e| e.to_string())?;
    for s in &corpus.standards {
        let bytes = std::fs::read(dir.join(format!("synthetic/standards/{}.mid", s.sheet.id))).map_err(|e| e.to_string())?;
        let sheet = LeadSheet::from_midi(&s.sheet.id, &s.sheet.title, &parse_midi(&bytes).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        store.add_standard(&sheet.id, &sheet.title, sheet.key_hint).map_err(|e| e.to_string())?;
        let refrain = trim_to_refrain(&sheet, &s.sections).map_err(|e| e.to_string())?;
        let segments = segment_leadsheet(&refrain, 4).map_err(|e| e.to_string())?;
        store.add_segments(&segments).map_err(|e| e.to_string())?;
    }
    for p in &corpus.performances {
        let bytes = std::fs::read(dir.join(format!("synthetic/performances/{}.mid", p.id))).map_err(|e| e.to_string())?;
        let seq = parse_midi(&bytes).map_err(|e| e.to_string())?;
        store.add_performance(&p.id, &p.standard_id, &p.performer, &seq).map_err(|e| e.to_string())?;
    }
    Ok(store)
}

pub fn pipeline_smoke() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let corpus = SyntheticCorpus::generate(1);
    ensure!(corpus.standards.len() == 3 && corpus.performances.len() == 4, "fixture corpus shape changed");
    let mut store = registered_store(dir, &corpus)?;
    let err = |e: &dyn std::fmt::Display| e.to_string();

    // Score each performance against its planted segment and save the best window.
    for p in &corpus.performances {
        let planted = p.passages.iter().find(|x| x.planted).ok_or("no planted passage")?;
        let orig = store.load_original(&planted.segment_id).map_err(|e| err(&e))?;
        let perf = store.load_performance(&p.id).map_err(|e| err(&e))?;
        let duration = store.manifest().performance(&p.id).unwrap().duration_s;
        let ranked = scan_candidates(&orig, &perf.notes, duration, &ScoreConfig::default(), 5, Execution::Parallel)
            .map_err(|e| err(&e))?;
        let best = ranked.first().ok_or("no candidates")?;
        let created = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        store.pair_window(&planted.segment_id, &p.id, best.start_s, best.end_s, "smoke", created).map_err(|e| err(&e))?;
    }
    let store = CorpusStore::open(store.path()).map_err(|e| err(&e))?;
    let pairs = store.manifest().pairs.clone();
    ensure!(pairs.len() == 4, "{} pairs saved", pairs.len());

    // Feature tables for both groups.
    let originals: Vec<Segment> =
        pairs.iter().map(|p| store.load_original(&p.original_id).map(|o| o.rendered_segment())).collect::<Result<_, _>>().map_err(|e| err(&e))?;
    let variations: Vec<Segment> =
        pairs.iter().map(|p| store.load_variation(&p.variation_id).map(|v| v.segment())).collect::<Result<_, _>>().map_err(|e| err(&e))?;
    for (name, group) in [("originals", &originals), ("variations", &variations)] {
        let report = corpus_stats_with(group, Execution::Parallel).map_err(|e| err(&e))?;
        let table = report.to_csv();
        ensure!(table.starts_with("segment_id,entropy,range,polyphony,n_pitches,in_scale\n"), "{name} table header");
        ensure!(table.lines().count() == 5, "{name} table rows");
        ensure!(report.summary_csv().starts_with("feature,mean,sd\n"), "{name} summary header");
        std::fs::write(dir.join(format!("{name}.csv")), table).map_err(|e| err(&e))?;
    }

    // Alignment of each saved pair.
    for p in &pairs {
        let orig = store.load_original(&p.original_id).map_err(|e| err(&e))?;
        let var = store.load_variation(&p.variation_id).map_err(|e| err(&e))?;
        let review = review_pair(&orig, &var, &ScoreConfig::default()).map_err(|e| err(&e))?;
        ensure!(review.deviation.average_deviation == 0.0, "{}: deviation {}", p.id, review.deviation.average_deviation);
    }

    // Ten training steps, then generation and evaluation.
    let examples: Vec<_> = pairs.iter().map(|p| example_from_pair(&store, p, 2048)).collect::<Result<_, _>>().map_err(|e| err(&e))?;
    let parts = split(examples.len(), 0);
    let pick = |idx: &[usize]| idx.iter().map(|&i| examples[i].clone()).collect::<Vec<_>>();
    let model_config = ModelConfig { layers: 1, heads: 2, d_model: 16, d_ff: 32, max_len: 2048, rel_window: 64, dropout: 0.0, seed: 1, ..ModelConfig::default() };
    let train_config = TrainConfig { steps: 10, batch_size: 2, seed: 1, ..TrainConfig::default() };
    let ckpt = train(&pick(&parts.train), &pick(&parts.validation), model_config, &train_config, Execution::Parallel, TrainHooks::default())
        .map_err(|e| err(&e))?;
    ensure!(ckpt.step == 10, "trained {} steps", ckpt.step);
    let model = ckpt.model().map_err(|e| err(&e))?;
    let primer = store.load_original(&pairs[0].original_id).map_err(|e| err(&e))?;
    let opts = GenerateOptions { max_new: 64, ..GenerateOptions::default() };
    let generation = generate_from_notes(&model, &primer.render(), &opts).map_err(|e| err(&e))?;
    ensure!(generation == generate_from_notes(&model, &primer.render(), &opts).map_err(|e| err(&e))?, "greedy generation differs between runs");
    // An untrained model may emit nothing playable; evaluate against the primer then.
    let generated = if generation.decoded.notes.is_empty() { primer.rendered_segment() } else { generation.segment("generated") };
    let report = evaluate_generation(&primer.rendered_segment(), &generated).map_err(|e| err(&e))?;
    let table = report.to_csv();
    let rows: Vec<&str> = table.lines().map(|l| l.split(',').next().unwrap()).collect();
    ensure!(rows[0] == "feature" && rows[1..] == GENERATION_ROWS, "generation table rows {rows:?}");
    std::fs::write(dir.join("generation.csv"), table).map_err(|e| err(&e))?;

    let s = split(502, 0);
    ensure!((s.train.len(), s.validation.len()) == (451, 51), "502 split into {}/{}", s.train.len(), s.validation.len());
    Ok(format!(
        "4 pairs saved, feature and generation tables written, {} tokens generated, 502 -> 451/51",
        generation.tokens.len()
    ))
}

pub fn self_similarity() -> Outcome {
    let corpus = SyntheticCorpus::generate(1);
    let mut segments = 0;
    for s in &corpus.standards {
        let refrain = trim_to_refrain(&s.sheet, &s.sections).map_err(|e| e.to_string())?;
        for seg in segment_leadsheet(&refrain, 4).map_err(|e| e.to_string())? {
            let window = VariationSegment::cut("self", &seg.render(), 0.0, seg.rendered_seconds()).map_err(|e| e.to_string())?;
            for invariant in [false, true] {
                let score = score_candidate(&seg, &window, invariant).map_err(|e| e.to_string())?;
                ensure!(score.value == 1.0, "{}: self score {}", seg.id, score.value);
            }
            segments += 1;
        }
    }
    for p in &corpus.performances {
        let planted = p.passages.iter().find(|x| x.planted).ok_or("no planted passage")?;
        let std = corpus.standards.iter().find(|s| s.sheet.id == p.standard_id).ok_or("unknown standard")?;
        let refrain = trim_to_refrain(&std.sheet, &std.sections).map_err(|e| e.to_string())?;
        let seg = segment_leadsheet(&refrain, 4)
            .map_err(|e| e.to_string())?
            .into_iter()
            .find(|s| s.id == planted.segment_id)
            .ok_or("planted segment missing")?;
        let ranked = scan_candidates(&seg, &p.sequence.notes, p.sequence.end_time, &ScoreConfig::default(), 3, Execution::Parallel)
            .map_err(|e| e.to_string())?;
        let best = ranked.first().ok_or("no candidates")?;
        ensure!(
            (best.start_s, best.end_s) == (planted.start_s, planted.end_s) && best.score.value == 1.0,
            "{}: best window {}-{} ({}), planted {}-{}",
            p.id,
            best.start_s,
            best.end_s,
            best.score.value,
            planted.start_s,
            planted.end_s
        );
    }
    Ok(format!("{segments} segments score 1.0 against their rendering; planted copy ranked first in 4 performances"))
}
