//! Visually grounded word embeddings.
//!
//! The pipeline fine-tunes a pretrained word embedding matrix to predict
//! surrogate visual classes: visual feature vectors are clustered with
//! K-means (optionally after PCA), and each text window is trained to
//! predict the cluster label of its associated feature vector. Words that
//! look unrelated in text but share visual context are pulled together.
//!
//! Modules:
//! - [`corpus`]: text/feature/tuple ingestion, vocabularies, training windows
//! - [`embedding`]: embedding matrices, hidden-layer averaging, the text format
//! - [`clustering`]: PCA and K-means realizing the grouping function
//! - [`pretrain`]: CBOW negative-sampling pretraining and imports
//! - [`grounding`]: the surrogate-class fine-tuner
//! - [`evaluation`]: plausibility, paraphrase, and retrieval harnesses

pub mod clustering;
pub mod corpus;
pub mod embedding;
pub mod evaluation;
pub mod grounding;
pub mod pretrain;

/// Derives a per-stage RNG seed from a user seed and a stream tag, so that
/// independent stages (initialization, sampling, shuffling, restarts) never
/// share a generator stream.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
