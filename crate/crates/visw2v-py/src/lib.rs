//! Python bindings for the visw2v engine: tokenization, CBOW pretraining,
//! cluster-model fitting, surrogate-class fine-tuning, and ranking metrics.

use ndarray::ArrayView1;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use visw2v::clustering;
use visw2v::corpus::{self, MultimodalPair, WindowStrategy};
use visw2v::embedding;
use visw2v::evaluation;
use visw2v::grounding::{self, GroundingConfig};
use visw2v::pretrain::{self, PretrainConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

/// Lowercase tokenization on non-alphanumeric runs.
#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    corpus::tokenize(text)
}

/// A vocabulary plus its embedding rows.
#[pyclass(name = "EmbeddingModel")]
struct PyEmbeddingModel {
    inner: embedding::EmbeddingModel,
}

#[pymethods]
impl PyEmbeddingModel {
    /// Reads a model from the text interchange format.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = embedding::load_text(std::path::Path::new(path)).map_err(io_err)?;
        Ok(PyEmbeddingModel { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        embedding::save_text(&self.inner, std::path::Path::new(path)).map_err(io_err)
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab().len()
    }

    #[getter]
    fn n_hidden(&self) -> usize {
        self.inner.n_hidden()
    }

    fn words(&self) -> Vec<String> {
        self.inner.vocab().words().to_vec()
    }

    fn contains(&self, word: &str) -> bool {
        self.inner.vocab().contains(word)
    }

    fn embedding(&self, word: &str) -> PyResult<Vec<f64>> {
        self.inner
            .embedding_of(word)
            .map(|row| row.to_vec())
            .ok_or_else(|| value_err(format!("unknown token '{word}'")))
    }

    /// Cosine similarity between two words' embedding rows.
    fn similarity(&self, a: &str, b: &str) -> PyResult<f64> {
        embedding::word_cosine(&self.inner, a, b).map_err(value_err)
    }

    /// Fine-tunes the embeddings in place to predict each feature vector's
    /// surrogate class. `texts` holds one record per feature row, sentences
    /// separated by tabs. Returns the mean NLL per epoch.
    #[pyo3(signature = (features, texts, clusters, strategy="words", lr=0.01, epochs=10, seed=42, shuffle=true))]
    #[allow(clippy::too_many_arguments)]
    fn finetune(
        &mut self,
        features: Vec<Vec<f64>>,
        texts: Vec<String>,
        clusters: &PyClusterModel,
        strategy: &str,
        lr: f64,
        epochs: usize,
        seed: u64,
        shuffle: bool,
    ) -> PyResult<Vec<f64>> {
        if features.len() != texts.len() {
            return Err(value_err(format!(
                "row count mismatch: {} feature rows vs {} text records",
                features.len(),
                texts.len()
            )));
        }
        let strategy: WindowStrategy = strategy.parse().map_err(value_err)?;
        let pairs: Vec<MultimodalPair> = features
            .into_iter()
            .zip(texts)
            .map(|(f, t)| {
                let segments: Vec<Vec<String>> =
                    t.split('\t').map(corpus::tokenize).collect();
                MultimodalPair::new(f, segments).map_err(value_err)
            })
            .collect::<PyResult<_>>()?;
        let config = GroundingConfig {
            learning_rate: lr,
            epochs,
            strategy,
            n_classes: clusters.inner.n_clusters(),
            seed,
            shuffle,
        };
        grounding::finetune(&mut self.inner, &pairs, &clusters.inner, &config)
            .map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "EmbeddingModel(vocab_size={}, n_hidden={})",
            self.inner.vocab().len(),
            self.inner.n_hidden()
        )
    }
}

/// Optional PCA projection plus K-means centroids.
#[pyclass(name = "ClusterModel")]
struct PyClusterModel {
    inner: clustering::ClusterModel,
}

#[pymethods]
impl PyClusterModel {
    /// Fits K-means (k-means++ seeding, `restarts` restarts, best WCSS kept)
    /// to the feature rows, optionally after PCA to `pca` variance retention.
    #[staticmethod]
    #[pyo3(signature = (features, k, seed=42, max_iter=100, restarts=10, pca=None))]
    fn fit(
        features: Vec<Vec<f64>>,
        k: usize,
        seed: u64,
        max_iter: usize,
        restarts: usize,
        pca: Option<f64>,
    ) -> PyResult<Self> {
        let matrix = clustering::feature_matrix(&features).map_err(value_err)?;
        let inner = clustering::fit_cluster_model(&matrix, k, seed, max_iter, restarts, pca)
            .map_err(value_err)?;
        Ok(PyClusterModel { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner =
            clustering::load_cluster_model(std::path::Path::new(path)).map_err(io_err)?;
        Ok(PyClusterModel { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        clustering::save_cluster_model(&self.inner, std::path::Path::new(path)).map_err(io_err)
    }

    #[getter]
    fn n_clusters(&self) -> usize {
        self.inner.n_clusters()
    }

    #[getter]
    fn has_pca(&self) -> bool {
        self.inner.pca().is_some()
    }

    /// Surrogate class of a feature vector (nearest centroid).
    fn assign(&self, feature: Vec<f64>) -> PyResult<usize> {
        self.inner
            .assign(ArrayView1::from(&feature))
            .map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "ClusterModel(n_clusters={}, has_pca={})",
            self.inner.n_clusters(),
            self.inner.pca().is_some()
        )
    }
}

/// Trains CBOW embeddings with negative sampling on raw corpus lines.
#[pyfunction]
#[pyo3(signature = (lines, n_hidden=100, context_radius=5, negatives=5, lr=0.05, epochs=5, min_count=1, seed=42))]
#[allow(clippy::too_many_arguments)]
fn train_cbow(
    lines: Vec<String>,
    n_hidden: usize,
    context_radius: usize,
    negatives: usize,
    lr: f64,
    epochs: usize,
    min_count: u64,
    seed: u64,
) -> PyResult<PyEmbeddingModel> {
    let docs: Vec<Vec<String>> = lines.iter().map(|l| corpus::tokenize(l)).collect();
    let config = PretrainConfig {
        n_hidden,
        context_radius,
        negatives,
        learning_rate: lr,
        epochs,
        min_count,
        seed,
    };
    let inner = pretrain::train_cbow(&docs, &config).map_err(value_err)?;
    Ok(PyEmbeddingModel { inner })
}

/// Average precision of a scored binary ranking (ties by original index).
#[pyfunction]
fn average_precision(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    evaluation::average_precision(&scores, &labels).map_err(value_err)
}

#[pymodule]
fn visw2v_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEmbeddingModel>()?;
    m.add_class::<PyClusterModel>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(train_cbow, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
