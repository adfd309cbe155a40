//! Fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod criteria;

use varkit::overpaint::{build_training_example, GenerateOptions, Model, ModelConfig, TrainConfig, TrainingExample};
use varkit::NoteEvent;

/// Eight Original/Variation pairs, each in its own pitch range so the
/// primer identifies the pair.
pub fn overfit_examples() -> Vec<TrainingExample> {
    (0..8)
        .map(|k| {
            let base = 36 + 8 * k as u8;
            let original: Vec<NoteEvent> = (0..6)
                .map(|i| NoteEvent::new(i as f64 * 0.25, 0.2, base + [0, 2, 4, 5, 7, 4][i], 64))
                .collect();
            let variation: Vec<NoteEvent> = (0..8)
                .map(|i| NoteEvent::new(i as f64 * 0.2, 0.15, base + [0, 3, 2, 4, 7, 5, 4, 0][i], 80))
                .collect();
            build_training_example(&original, &variation, 1024).unwrap()
        })
        .collect()
}

pub fn overfit_model_config() -> ModelConfig {
    ModelConfig { max_len: 128, rel_window: 64, seed: 7, ..ModelConfig::tiny() }
}

pub fn overfit_train_config() -> TrainConfig {
    TrainConfig {
        steps: 2000,
        batch_size: 8,
        learning_rate: 3e-3,
        warmup_steps: 50,
        grad_clip: 1.0,
        target_loss: Some(0.05),
        seed: 7,
        ..TrainConfig::default()
    }
}

/// Fraction of target variation tokens (plus EOS) reproduced position by
/// position by greedy decoding from the example's prompt.
pub fn greedy_reproduction(model: &Model, ex: &TrainingExample) -> f64 {
    let target = &ex.tokens[ex.primer_len + 1..];
    let opts = GenerateOptions { max_new: target.len(), ..GenerateOptions::default() };
    let got = varkit::overpaint::continue_tokens(model, ex.prompt(), &opts).unwrap();
    let hits = target.iter().zip(&got).filter(|(a, b)| a == b).count();
    hits as f64 / target.len() as f64
}
