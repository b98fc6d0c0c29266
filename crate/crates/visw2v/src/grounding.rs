//! The fine-tuner: predict a record's surrogate visual class from its text
//! window and backpropagate the negative log-likelihood through the output
//! matrix and the participating embedding rows.
//!
//! The class count is small, so the softmax is computed explicitly; there is
//! no sampling anywhere in this module. Gradients touch only the rows of
//! words that appear in some window, which is what lets fine-tuned models
//! keep every untouched pretrained row bitwise intact.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::clustering::{ClusterError, ClusterModel};
use crate::corpus::{windows, CorpusError, MultimodalPair, WindowStrategy};
use crate::derive_seed;
use crate::embedding::{hidden_by_indices, EmbeddingModel};

#[derive(Debug, Error)]
pub enum GroundingError {
    #[error("model has no output weights; configure grounding first")]
    MissingOutputWeights,
    #[error("window is empty")]
    EmptyWindow,
    #[error("window refers to token index {index} outside the vocabulary (size {vocab})")]
    IndexOutOfRange { index: usize, vocab: usize },
    #[error("label {label} is outside the class range [0, {n_classes})")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("config expects {config} classes but the cluster model has {clusters}")]
    ClassCountMismatch { config: usize, clusters: usize },
    #[error("learning rate must be non-negative")]
    NegativeLearningRate,
    #[error("epochs must be at least 1")]
    ZeroEpochs,
    #[error("no valid training records: every window is empty after vocabulary filtering")]
    NoTrainingRecords,
    #[error("pair {pair}: {source}")]
    Cluster {
        pair: usize,
        #[source]
        source: ClusterError,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("pair {pair} has no relation annotation")]
    MissingAnnotation { pair: usize },
}

/// Fine-tuning hyperparameters.
#[derive(Debug, Clone)]
pub struct GroundingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub strategy: WindowStrategy,
    /// Surrogate class count; must equal the cluster model's.
    pub n_classes: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl GroundingConfig {
    pub fn new(n_classes: usize, strategy: WindowStrategy) -> Self {
        GroundingConfig {
            learning_rate: 0.01,
            epochs: 10,
            strategy,
            n_classes,
            seed: 42,
            shuffle: true,
        }
    }
}

/// One training record: a window of token indices and its surrogate class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainRecord {
    pub window: Vec<usize>,
    pub label: usize,
}

fn check_window(model: &EmbeddingModel, window: &[usize]) -> Result<(), GroundingError> {
    if window.is_empty() {
        return Err(GroundingError::EmptyWindow);
    }
    let vocab = model.vocab().len();
    for &i in window {
        if i >= vocab {
            return Err(GroundingError::IndexOutOfRange { index: i, vocab });
        }
    }
    Ok(())
}

fn softmax(logits: Array1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut exps = logits.mapv(|v| (v - max).exp());
    let sum = exps.sum();
    exps /= sum;
    exps
}

/// Class distribution predicted for a window: softmax of `hidden · W_O`,
/// computed with max-subtraction.
pub fn forward(
    model: &EmbeddingModel,
    window: &[usize],
) -> Result<Array1<f64>, GroundingError> {
    check_window(model, window)?;
    let w_out = model
        .output_weights()
        .ok_or(GroundingError::MissingOutputWeights)?;
    let h = hidden_by_indices(model.input_weights(), window);
    Ok(softmax(h.dot(w_out)))
}

/// Negative log-likelihood of the labelled class. The label must be in
/// range; softmax output guarantees a positive probability.
pub fn nll(probs: ArrayView1<'_, f64>, label: usize) -> f64 {
    assert!(
        label < probs.len(),
        "label {label} outside distribution of length {}",
        probs.len()
    );
    -probs[label].ln()
}

/// One stochastic gradient step on a record. Updates the output matrix and
/// the input rows of the window's tokens (scaled by each token's
/// multiplicity over the window length); the hidden gradient uses the
/// pre-update output matrix. Returns the loss before the update.
pub fn sgd_step(
    model: &mut EmbeddingModel,
    record: &TrainRecord,
    lr: f64,
) -> Result<f64, GroundingError> {
    check_window(model, &record.window)?;
    let n_classes = model
        .n_classes()
        .ok_or(GroundingError::MissingOutputWeights)?;
    if record.label >= n_classes {
        return Err(GroundingError::LabelOutOfRange {
            label: record.label,
            n_classes,
        });
    }

    let h = hidden_by_indices(model.input_weights(), &record.window);
    let w_out = model.output_weights().expect("checked above");
    let probs = softmax(h.dot(w_out));
    let loss = -probs[record.label].ln();

    let mut delta_out = probs;
    delta_out[record.label] -= 1.0;
    // hidden gradient from the pre-update output matrix
    let delta_hidden = w_out.dot(&delta_out);

    {
        let w_out = model.output_weights_mut().expect("checked above");
        let outer = h
            .view()
            .insert_axis(Axis(1))
            .dot(&delta_out.view().insert_axis(Axis(0)));
        w_out.scaled_add(-lr, &outer);
    }

    let mut multiplicity: BTreeMap<usize, usize> = BTreeMap::new();
    for &t in &record.window {
        *multiplicity.entry(t).or_insert(0) += 1;
    }
    let window_len = record.window.len() as f64;
    let w_in = model.input_weights_mut();
    for (token, count) in multiplicity {
        let mut row = w_in.row_mut(token);
        row.scaled_add(-lr * count as f64 / window_len, &delta_hidden);
    }

    Ok(loss)
}

/// Builds training records: assigns each pair its surrogate class and
/// expands its text into windows under the strategy. Pairs whose windows all
/// filter to empty are skipped; it is an error for *every* pair to vanish.
pub fn build_records(
    model: &EmbeddingModel,
    pairs: &[MultimodalPair],
    clusters: &ClusterModel,
    strategy: WindowStrategy,
) -> Result<Vec<TrainRecord>, GroundingError> {
    let mut records = Vec::new();
    for (i, pair) in pairs.iter().enumerate() {
        let label = clusters
            .assign(ArrayView1::from(pair.features()))
            .map_err(|source| GroundingError::Cluster { pair: i + 1, source })?;
        let wins = match windows(pair, strategy, model.vocab()) {
            Ok(w) => w,
            Err(CorpusError::AllWindowsEmpty) => continue,
            Err(e) => return Err(e.into()),
        };
        for win in wins {
            let window = win
                .iter()
                .map(|t| model.vocab().index_of(t).expect("windows are in-vocab"))
                .collect();
            records.push(TrainRecord { window, label });
        }
    }
    if records.is_empty() {
        return Err(GroundingError::NoTrainingRecords);
    }
    Ok(records)
}

/// Fine-tunes the model on a multimodal dataset and returns the mean NLL per
/// epoch. A fresh output matrix is installed for the run and discarded
/// afterwards; only the input rows are the product.
///
/// SGD over records is sequential, so with shuffling disabled the result
/// depends on dataset order; with shuffling enabled and a fixed seed it is
/// reproducible.
pub fn finetune(
    model: &mut EmbeddingModel,
    pairs: &[MultimodalPair],
    clusters: &ClusterModel,
    config: &GroundingConfig,
) -> Result<Vec<f64>, GroundingError> {
    finetune_with_callback(model, pairs, clusters, config, |_, _, _| true)
}

/// [`finetune`] with an early-stop hook: after each epoch the callback sees
/// the epoch index, its mean NLL, and the model (typically to compute a
/// validation score); returning `false` stops training after that epoch.
pub fn finetune_with_callback<F>(
    model: &mut EmbeddingModel,
    pairs: &[MultimodalPair],
    clusters: &ClusterModel,
    config: &GroundingConfig,
    mut keep_going: F,
) -> Result<Vec<f64>, GroundingError>
where
    F: FnMut(usize, f64, &EmbeddingModel) -> bool,
{
    if config.learning_rate < 0.0 {
        return Err(GroundingError::NegativeLearningRate);
    }
    if config.epochs == 0 {
        return Err(GroundingError::ZeroEpochs);
    }
    if config.n_classes != clusters.n_clusters() {
        return Err(GroundingError::ClassCountMismatch {
            config: config.n_classes,
            clusters: clusters.n_clusters(),
        });
    }

    let mut records = build_records(model, pairs, clusters, config.strategy)?;
    model.init_output_weights(config.n_classes, derive_seed(config.seed, 3));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 4));

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        if config.shuffle {
            records.shuffle(&mut shuffle_rng);
        }
        let mut total = 0.0;
        for record in &records {
            total += sgd_step(model, record, config.learning_rate)?;
        }
        let mean = total / records.len() as f64;
        epoch_losses.push(mean);
        if !keep_going(epoch, mean, model) {
            break;
        }
    }

    model.clear_output_weights();
    Ok(epoch_losses)
}

/// For every unordered pair of relation annotations, counts the clusters in
/// which both relations appear. Rows are sorted by descending count, then
/// lexicographically; pairs sharing no cluster are included with count 0.
pub fn cooccurrence_report<F>(
    pairs: &[MultimodalPair],
    clusters: &ClusterModel,
    relation_of: F,
) -> Result<Vec<(String, String, usize)>, GroundingError>
where
    F: Fn(&MultimodalPair) -> Option<String>,
{
    let mut by_relation: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for (i, pair) in pairs.iter().enumerate() {
        let relation =
            relation_of(pair).ok_or(GroundingError::MissingAnnotation { pair: i + 1 })?;
        let label = clusters
            .assign(ArrayView1::from(pair.features()))
            .map_err(|source| GroundingError::Cluster { pair: i + 1, source })?;
        by_relation.entry(relation).or_default().insert(label);
    }

    let relations: Vec<&String> = by_relation.keys().collect();
    let mut rows = Vec::new();
    for i in 0..relations.len() {
        for j in (i + 1)..relations.len() {
            let a = &by_relation[relations[i]];
            let b = &by_relation[relations[j]];
            let shared = a.intersection(b).count();
            rows.push((relations[i].clone(), relations[j].clone(), shared));
        }
    }
    rows.sort_by(|x, y| {
        y.2.cmp(&x.2)
            .then_with(|| x.0.cmp(&y.0))
            .then_with(|| x.1.cmp(&y.1))
    });
    Ok(rows)
}
