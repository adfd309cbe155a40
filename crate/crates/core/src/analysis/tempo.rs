use super::melody::{Melody, MelodyNote};

/// Relative span searched around the nominal beat period.
const SEARCH_LOW: f64 = 0.8;
const SEARCH_HIGH: f64 = 1.25;
const SEARCH_STEPS: usize = 400;
/// Grid lines per beat the onsets are fitted against (eighth notes).
const SUBDIVISION: f64 = 2.0;

/// Sum of squared distances, in grid units, from each onset to the nearest
/// line of a grid with the given spacing, using the least-squares phase.
fn grid_residual(onsets: &[f64], spacing: f64) -> f64 {
    // Circular mean gives the phase that best aligns the onsets.
    let (s, c) = onsets.iter().fold((0.0, 0.0), |(s, c), &t| {
        let a = std::f64::consts::TAU * t / spacing;
        (s + a.sin(), c + a.cos())
    });
    let phase = s.atan2(c) / std::f64::consts::TAU;
    onsets
        .iter()
        .map(|&t| {
            let x = t / spacing - phase;
            let r = x - x.round();
            r * r
        })
        .sum()
}

/// Fits a constant beat period (seconds per beat) to onset times.
///
/// Periods within 0.8x to 1.25x of `nominal` are scanned on a log grid that
/// includes `nominal` itself; the period whose eighth-note grid leaves the
/// smallest squared onset residual wins, ties going to the period nearest
/// `nominal`. With fewer than three onsets there is nothing to fit and
/// `nominal` is returned.
pub fn fit_beat_period(onsets: &[f64], nominal: f64) -> f64 {
    if onsets.len() < 3 || !(nominal > 0.0) {
        return nominal;
    }
    let half = SEARCH_STEPS as i64 / 2;
    let step = (SEARCH_HIGH / SEARCH_LOW).ln() / SEARCH_STEPS as f64;
    let centre = (SEARCH_LOW * SEARCH_HIGH).sqrt().ln();
    let mut best = (nominal, grid_residual(onsets, nominal / SUBDIVISION));
    for k in -half..=half {
        if k == 0 {
            continue;
        }
        let period = nominal * (centre + k as f64 * step).exp();
        let residual = grid_residual(onsets, period / SUBDIVISION);
        let closer = (period - nominal).abs() < (best.0 - nominal).abs();
        if residual < best.1 - 1e-12 || ((residual - best.1).abs() <= 1e-12 && closer) {
            best = (period, residual);
        }
    }
    best.0
}

/// Re-expresses a melody read at 120 BPM on a beat grid of `period` seconds.
pub fn melody_at_period(melody: &Melody, period: f64) -> Melody {
    // Melody beats came from seconds at 2 beats per second.
    let factor = 1.0 / (2.0 * period);
    Melody::new(
        melody
            .notes()
            .iter()
            .map(|n| MelodyNote { pitch: n.pitch, onset: n.onset * factor, duration: n.duration * factor })
            .collect(),
    )
    .expect("uniform scaling keeps a melody valid")
}
