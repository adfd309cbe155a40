//! Original‖Variation training sequences and the train/validation split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStore, OriginalSegment, PairRecord, VariationSegment};
use crate::midi::NoteEvent;

use super::tokenizer::{encode, encode_notes, TokenId, BOS, EOS, SEP};
use super::{OverpaintError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    /// `BOS · O · SEP · V · EOS`.
    pub tokens: Vec<TokenId>,
    /// Index of the SEP token.
    pub primer_len: usize,
}

impl TrainingExample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// The variation tokens, without SEP and EOS.
    pub fn variation_tokens(&self) -> &[TokenId] {
        &self.tokens[self.primer_len + 1..self.tokens.len() - 1]
    }

    /// `BOS · O · SEP`, the generation prompt.
    pub fn prompt(&self) -> &[TokenId] {
        &self.tokens[..=self.primer_len]
    }

    /// Loss weights for predicting `tokens[i + 1]` from position `i`: every
    /// position, or only the targets after SEP.
    pub fn loss_weights(&self, variation_only: bool) -> Vec<bool> {
        (0..self.tokens.len() - 1).map(|i| !variation_only || i >= self.primer_len).collect()
    }
}

/// `BOS · enc(O) · SEP`.
pub fn primer_tokens(original: &[NoteEvent]) -> Vec<TokenId> {
    let mut t = vec![BOS];
    t.extend(encode_notes(original));
    t.push(SEP);
    t
}

/// Builds `BOS · enc(O) · SEP · enc(V) · EOS` from notes in seconds. An
/// over-long variation is cut so the sequence is exactly `max_len` tokens
/// ending in EOS; the primer is never cut.
pub fn build_training_example(
    original: &[NoteEvent],
    variation: &[NoteEvent],
    max_len: usize,
) -> Result<TrainingExample> {
    let mut tokens = primer_tokens(original);
    let primer_len = tokens.len() - 1;
    // Room is needed for at least EOS after SEP.
    if tokens.len() + 1 > max_len {
        return Err(OverpaintError::PrimerTooLong { len: tokens.len(), max_len });
    }
    let body = encode_notes(variation);
    let room = max_len - tokens.len() - 1;
    tokens.extend_from_slice(&body[..body.len().min(room)]);
    tokens.push(EOS);
    Ok(TrainingExample { tokens, primer_len })
}

/// Training example for an Original rendered at the reference tempo and a
/// Variation rebased to 0 s.
pub fn example_from_segments(
    original: &OriginalSegment,
    variation: &VariationSegment,
    max_len: usize,
) -> Result<TrainingExample> {
    build_training_example(&original.render(), &variation.rebased_notes(), max_len)
}

pub fn example_from_pair(store: &CorpusStore, pair: &PairRecord, max_len: usize) -> Result<TrainingExample> {
    let original = store.load_original(&pair.original_id)?;
    let variation = store.load_variation(&pair.variation_id)?;
    example_from_segments(&original, &variation, max_len)
}

/// Encoded Original alone, as used for generation prompts.
pub fn encode_original(original: &OriginalSegment) -> Vec<TokenId> {
    encode(&original.rendered_segment())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Shuffles `0..n` with `seed` and takes the first `floor(0.9 n)` for training.
pub fn split(n: usize, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 9 / 10;
    let validation = idx.split_off(n_train);
    Split { seed, train: idx, validation }
}
