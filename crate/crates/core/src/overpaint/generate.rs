//! Primer-conditioned sampling and the side-by-side feature comparison.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{segment_features, SegmentFeatures};
use crate::corpus::{OriginalSegment, VariationSegment};
use crate::segment::{Clock, Segment};

use super::dataset::primer_tokens;
use super::model::Model;
use super::tokenizer::{decode, Decoded, TokenId, BOS, EOS, PAD, SEP};
use super::{OverpaintError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Sampling {
    Greedy,
    /// `top_k == 0` keeps the whole vocabulary.
    Temperature { temperature: f64, top_k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateOptions {
    pub sampling: Sampling,
    pub max_new: usize,
    pub seed: u64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions { sampling: Sampling::Greedy, max_new: 512, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Tokens produced after SEP, excluding EOS.
    pub tokens: Vec<TokenId>,
    pub ended_with_eos: bool,
    pub decoded: Decoded,
}

impl Generation {
    /// Set when nothing playable came out.
    pub fn empty_warning(&self) -> Option<&'static str> {
        self.decoded.notes.is_empty().then_some("generation produced no notes")
    }

    pub fn segment(&self, id: &str) -> Segment {
        self.decoded.segment(id)
    }

    /// The generated notes as a Variation starting at 0 s.
    pub fn variation(&self, id: &str) -> VariationSegment {
        let end_s = self.decoded.notes.iter().map(|n| n.onset + n.duration).fold(0.0, f64::max);
        VariationSegment {
            id: id.to_string(),
            performance_id: "generated".to_string(),
            start_s: 0.0,
            end_s,
            notes: self.decoded.notes.clone(),
        }
    }
}

fn pick(logits: &[f64], sampling: Sampling, rng: &mut ChaCha8Rng) -> TokenId {
    let allowed = |i: usize| !matches!(i as TokenId, PAD | BOS | SEP);
    match sampling {
        Sampling::Greedy => {
            let mut best = None::<(usize, f64)>;
            for (i, &v) in logits.iter().enumerate() {
                if allowed(i) && best.is_none_or(|(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
            best.expect("vocabulary has allowed tokens").0 as TokenId
        }
        Sampling::Temperature { temperature, top_k } => {
            let mut cand: Vec<(usize, f64)> =
                logits.iter().enumerate().filter(|(i, _)| allowed(*i)).map(|(i, &v)| (i, v / temperature)).collect();
            // Stable sort keeps lower ids first among equal logits.
            cand.sort_by(|a, b| b.1.total_cmp(&a.1));
            if top_k > 0 {
                cand.truncate(top_k);
            }
            let max = cand[0].1;
            let weights: Vec<f64> = cand.iter().map(|(_, v)| (v - max).exp()).collect();
            let mut r = rng.random::<f64>() * weights.iter().sum::<f64>();
            for ((i, _), w) in cand.iter().zip(&weights) {
                if r < *w {
                    return *i as TokenId;
                }
                r -= w;
            }
            cand.last().expect("non-empty").0 as TokenId
        }
    }
}

/// Continues `prompt` (which should end in SEP) until EOS, `max_new` tokens
/// or the context limit. Returns the new tokens including a final EOS.
pub fn continue_tokens(model: &Model, prompt: &[TokenId], opts: &GenerateOptions) -> Result<Vec<TokenId>> {
    let max_len = model.config().max_len;
    if prompt.is_empty() || prompt.len() > max_len {
        return Err(OverpaintError::PrimerTooLong { len: prompt.len(), max_len });
    }
    if let Sampling::Temperature { temperature, .. } = opts.sampling {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(OverpaintError::BadConfig("temperature must be positive".into()));
        }
    }
    let mut out = Vec::new();
    if opts.max_new == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut state = model.start_decoding();
    let mut logits = None;
    for &t in prompt {
        logits = Some(model.step(&mut state, t)?);
    }
    let mut logits = logits.expect("non-empty prompt");
    while out.len() < opts.max_new {
        let next = pick(logits.as_slice().expect("contiguous"), opts.sampling, &mut rng);
        out.push(next);
        if next == EOS || state.len() >= max_len {
            break;
        }
        logits = model.step(&mut state, next)?;
    }
    Ok(out)
}

/// Generates a Variation for notes in seconds, used as the primer.
pub fn generate_from_notes(
    model: &Model,
    primer: &[crate::midi::NoteEvent],
    opts: &GenerateOptions,
) -> Result<Generation> {
    let prompt = primer_tokens(primer);
    let mut tokens = continue_tokens(model, &prompt, opts)?;
    let ended_with_eos = tokens.last() == Some(&EOS);
    if ended_with_eos {
        tokens.pop();
    }
    let decoded = decode(&tokens);
    Ok(Generation { tokens, ended_with_eos, decoded })
}

/// Generates a Variation from an Original rendered at the reference tempo.
pub fn generate(model: &Model, primer: &OriginalSegment, opts: &GenerateOptions) -> Result<Generation> {
    generate_from_notes(model, &primer.render(), opts)
}

pub const GENERATION_ROWS: [&str; 5] = ["entropy", "range", "polyphony", "n_pitches", "scale_consistency"];

/// Features of an Original next to those of a generated Variation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub original: SegmentFeatures,
    pub generated: SegmentFeatures,
}

impl GenerationReport {
    /// `feature,original,generated`, one row per feature.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,original,generated\n");
        for ((name, o), g) in GENERATION_ROWS.iter().zip(self.original.values()).zip(self.generated.values()) {
            out.push_str(&format!("{name},{o:.2},{g:.2}\n"));
        }
        out
    }
}

pub fn evaluate_generation(original: &Segment, generated: &Segment) -> Result<GenerationReport> {
    let features = |s: &Segment| segment_features(s).map_err(|e| OverpaintError::Corpus(e.into()));
    Ok(GenerationReport { original: features(original)?, generated: features(generated)? })
}

/// Same as [`evaluate_generation`] with the Original's notes in seconds.
pub fn evaluate_against_original(original: &OriginalSegment, generation: &Generation) -> Result<GenerationReport> {
    let orig = Segment::new(original.id.clone(), Clock::Seconds, original.render());
    evaluate_generation(&orig, &generation.segment("generated"))
}
