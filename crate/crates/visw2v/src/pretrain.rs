//! Base-model pretraining: continuous bag-of-words with negative sampling on
//! a plain text corpus, plus an importer for externally trained embeddings.
//!
//! This is a desk-scale stand-in for training the base model on a large
//! corpus. Training is single-threaded and fully seeded so identical inputs
//! produce bitwise-identical matrices.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{build_vocab, CorpusError};
use crate::derive_seed;
use crate::embedding::{hidden_by_indices, load_text, EmbeddingModel, FormatError};

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("corpus contains no documents")]
    EmptyCorpus,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("corpus yields no training windows (every document too short?)")]
    NoTrainingWindows,
    #[error("invalid config: {0}")]
    BadConfig(&'static str),
    #[error("model construction failed: {0}")]
    Model(#[from] crate::embedding::EmbeddingError),
}

/// Hyperparameters for CBOW pretraining.
#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub n_hidden: usize,
    /// Context tokens taken on each side of the center token.
    pub context_radius: usize,
    /// Negative samples per center token.
    pub negatives: usize,
    /// Initial learning rate; decays linearly to 1% of itself.
    pub learning_rate: f64,
    pub epochs: usize,
    pub min_count: u64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            n_hidden: 100,
            context_radius: 5,
            negatives: 5,
            learning_rate: 0.05,
            epochs: 5,
            min_count: 1,
            seed: 42,
        }
    }
}

impl PretrainConfig {
    fn validate(&self) -> Result<(), PretrainError> {
        if self.n_hidden == 0 {
            return Err(PretrainError::BadConfig("n_hidden must be at least 1"));
        }
        if self.context_radius == 0 {
            return Err(PretrainError::BadConfig("context_radius must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(PretrainError::BadConfig("epochs must be at least 1"));
        }
        if self.min_count == 0 {
            return Err(PretrainError::BadConfig("min_count must be at least 1"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(PretrainError::BadConfig(
                "learning_rate must be positive and finite",
            ));
        }
        Ok(())
    }
}

/// Draws vocabulary indices from the unigram distribution raised to 0.75.
struct NegativeSampler {
    cumulative: Vec<f64>,
}

impl NegativeSampler {
    fn new(counts: &[u64]) -> Self {
        let mut cumulative = Vec::with_capacity(counts.len());
        let mut acc = 0.0;
        for &c in counts {
            acc += (c as f64).powf(0.75);
            cumulative.push(acc);
        }
        NegativeSampler { cumulative }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty vocabulary");
        let target = rng.random::<f64>() * total;
        match self
            .cumulative
            .binary_search_by(|probe| probe.total_cmp(&target))
        {
            Ok(i) => (i + 1).min(self.cumulative.len() - 1),
            Err(i) => i.min(self.cumulative.len() - 1),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Sigmoid loss of one CBOW step: `-ln σ(u_t·h) - Σ ln σ(-u_n·h)` where `h`
/// is the context mean. Pure; the finite-difference check drives this.
#[cfg(test)]
fn cbow_loss(
    w_in: &Array2<f64>,
    w_ctx: &Array2<f64>,
    context: &[usize],
    target: usize,
    negatives: &[usize],
) -> f64 {
    let h = hidden_by_indices(w_in, context);
    let mut loss = -sigmoid(w_ctx.row(target).dot(&h)).ln();
    for &neg in negatives {
        loss -= sigmoid(-w_ctx.row(neg).dot(&h)).ln();
    }
    loss
}

/// One gradient step on the sigmoid loss. All gradients are evaluated at the
/// pre-update weights; each context row receives its share `1/|context|` of
/// the hidden-layer gradient. Returns the loss before the update.
fn cbow_step(
    w_in: &mut Array2<f64>,
    w_ctx: &mut Array2<f64>,
    context: &[usize],
    target: usize,
    negatives: &[usize],
    lr: f64,
) -> f64 {
    let h = hidden_by_indices(w_in, context);
    let mut loss = 0.0;
    let mut hidden_grad: Array1<f64> = Array1::zeros(h.len());

    // output-row gradients accumulate so that duplicate negatives compose
    let mut row_grads: Vec<(usize, f64)> = Vec::with_capacity(negatives.len() + 1);
    let pos_dot = w_ctx.row(target).dot(&h);
    loss -= sigmoid(pos_dot).ln();
    row_grads.push((target, sigmoid(pos_dot) - 1.0));
    for &neg in negatives {
        let neg_dot = w_ctx.row(neg).dot(&h);
        loss -= sigmoid(-neg_dot).ln();
        row_grads.push((neg, sigmoid(neg_dot)));
    }
    for &(row, g) in &row_grads {
        hidden_grad.scaled_add(g, &w_ctx.row(row));
    }
    for (row, g) in row_grads {
        let mut r = w_ctx.row_mut(row);
        r.scaled_add(-lr * g, &h);
    }
    let share = lr / context.len() as f64;
    for &c in context {
        let mut r = w_in.row_mut(c);
        r.scaled_add(-share, &hidden_grad);
    }
    loss
}

/// Trains CBOW embeddings on a tokenized corpus (one token list per
/// document) and returns a model holding the input weight matrix.
pub fn train_cbow(
    docs: &[Vec<String>],
    config: &PretrainConfig,
) -> Result<EmbeddingModel, PretrainError> {
    config.validate()?;
    if docs.iter().all(|d| d.is_empty()) {
        return Err(PretrainError::EmptyCorpus);
    }
    let vocab = build_vocab(docs.iter().flatten(), config.min_count)?;

    let indexed: Vec<Vec<usize>> = docs
        .iter()
        .map(|doc| doc.iter().filter_map(|t| vocab.index_of(t)).collect())
        .filter(|doc: &Vec<usize>| !doc.is_empty())
        .collect();

    // every position with at least one in-radius neighbour is one update
    let updates_per_epoch: usize = indexed
        .iter()
        .map(|doc| if doc.len() >= 2 { doc.len() } else { 0 })
        .sum();
    if updates_per_epoch == 0 {
        return Err(PretrainError::NoTrainingWindows);
    }
    let total_updates = (updates_per_epoch * config.epochs) as f64;

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1));
    let scale = 0.5 / config.n_hidden as f64;
    let mut w_in = Array2::from_shape_fn((vocab.len(), config.n_hidden), |_| {
        init_rng.random_range(-scale..scale)
    });
    let mut w_ctx = Array2::zeros((vocab.len(), config.n_hidden));

    let sampler = NegativeSampler::new(vocab.counts());
    let mut sample_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2));

    let mut update = 0usize;
    let mut context = Vec::with_capacity(2 * config.context_radius);
    let mut negatives = Vec::with_capacity(config.negatives);
    for _ in 0..config.epochs {
        for doc in &indexed {
            if doc.len() < 2 {
                continue;
            }
            for center in 0..doc.len() {
                let lo = center.saturating_sub(config.context_radius);
                let hi = (center + config.context_radius + 1).min(doc.len());
                context.clear();
                context.extend_from_slice(&doc[lo..center]);
                context.extend_from_slice(&doc[center + 1..hi]);
                if context.is_empty() {
                    continue;
                }
                let target = doc[center];
                negatives.clear();
                if vocab.len() > 1 {
                    while negatives.len() < config.negatives {
                        let n = sampler.sample(&mut sample_rng);
                        if n != target {
                            negatives.push(n);
                        }
                    }
                }
                let progress = update as f64 / total_updates;
                let lr = config.learning_rate * (1.0 - progress * 0.99);
                cbow_step(&mut w_in, &mut w_ctx, &context, target, &negatives, lr);
                update += 1;
            }
        }
    }

    Ok(EmbeddingModel::new(vocab, w_in)?)
}

/// Loads externally trained embeddings in the text interchange format.
pub fn import_pretrained(path: &Path) -> Result<EmbeddingModel, FormatError> {
    load_text(path)
}
