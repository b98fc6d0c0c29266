//! Embedding matrices, hidden-layer averaging, similarity math, and the
//! plain-text interchange format.
//!
//! The input weight matrix holds one embedding row per vocabulary word; an
//! optional output matrix connects the hidden layer to the surrogate-class
//! layer while grounding is active. Words never touched during grounding
//! keep their pretrained rows bitwise intact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Role, Vocabulary};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("window is empty")]
    EmptyWindow,
    #[error("unknown token '{0}'")]
    UnknownToken(String),
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("cosine of a zero-norm vector")]
    ZeroNorm,
    #[error("weight matrix contains a non-finite value")]
    NonFiniteWeights,
    #[error("weight matrix has {rows} rows but the vocabulary has {vocab} words")]
    RowCountMismatch { rows: usize, vocab: usize },
    #[error("output matrix has {rows} rows but the hidden width is {hidden}")]
    OutputRowMismatch { rows: usize, hidden: usize },
    #[error("hidden width must be at least 1")]
    EmptyHidden,
    #[error("role models must share one hidden width (found {0} and {1})")]
    HiddenWidthMismatch(usize, usize),
}

/// Errors for the embedding text format.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("failed to access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("file is empty")]
    Empty,
    #[error("line {line}: malformed header, expected 'N_V N_H'")]
    BadHeader { line: usize },
    #[error("line {line}: word '{word}' has {found} values, expected {expected}")]
    RowLength {
        line: usize,
        word: String,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: duplicate word '{word}'")]
    DuplicateWord { line: usize, word: String },
    #[error("header declared {declared} words but the file has {found} rows")]
    RowCount { declared: usize, found: usize },
    #[error("line {line}: cannot parse '{text}' as a number")]
    BadNumber { line: usize, text: String },
    #[error("line {line}: row is missing a word")]
    MissingWord { line: usize },
}

/// The learnable state: a vocabulary, its input weight matrix, and the
/// output weight matrix present only while grounding is configured.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    vocab: Vocabulary,
    input_weights: Array2<f64>,
    output_weights: Option<Array2<f64>>,
}

impl EmbeddingModel {
    /// Wraps a vocabulary and its input weights, validating shape and
    /// finiteness.
    pub fn new(vocab: Vocabulary, input_weights: Array2<f64>) -> Result<Self, EmbeddingError> {
        if input_weights.nrows() != vocab.len() {
            return Err(EmbeddingError::RowCountMismatch {
                rows: input_weights.nrows(),
                vocab: vocab.len(),
            });
        }
        if input_weights.ncols() == 0 {
            return Err(EmbeddingError::EmptyHidden);
        }
        if input_weights.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFiniteWeights);
        }
        Ok(EmbeddingModel {
            vocab,
            input_weights,
            output_weights: None,
        })
    }

    /// Like [`EmbeddingModel::new`] but with the output matrix installed.
    pub fn with_output(
        vocab: Vocabulary,
        input_weights: Array2<f64>,
        output_weights: Array2<f64>,
    ) -> Result<Self, EmbeddingError> {
        let mut model = EmbeddingModel::new(vocab, input_weights)?;
        model.set_output_weights(output_weights)?;
        Ok(model)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn n_hidden(&self) -> usize {
        self.input_weights.ncols()
    }

    /// Number of surrogate classes, when output weights are configured.
    pub fn n_classes(&self) -> Option<usize> {
        self.output_weights.as_ref().map(|w| w.ncols())
    }

    pub fn input_weights(&self) -> &Array2<f64> {
        &self.input_weights
    }

    pub(crate) fn input_weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.input_weights
    }

    pub fn output_weights(&self) -> Option<&Array2<f64>> {
        self.output_weights.as_ref()
    }

    pub(crate) fn output_weights_mut(&mut self) -> Option<&mut Array2<f64>> {
        self.output_weights.as_mut()
    }

    /// Installs a fresh hidden-to-output matrix for `n_classes` surrogate
    /// classes, drawn uniformly from `[-0.5/N_H, 0.5/N_H]`.
    pub fn init_output_weights(&mut self, n_classes: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 0.5 / self.n_hidden() as f64;
        let weights = Array2::from_shape_fn((self.n_hidden(), n_classes), |_| {
            rng.random_range(-scale..scale)
        });
        self.output_weights = Some(weights);
    }

    /// Installs a specific hidden-to-output matrix, validating its shape and
    /// finiteness.
    pub fn set_output_weights(&mut self, weights: Array2<f64>) -> Result<(), EmbeddingError> {
        if weights.nrows() != self.n_hidden() {
            return Err(EmbeddingError::OutputRowMismatch {
                rows: weights.nrows(),
                hidden: self.n_hidden(),
            });
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFiniteWeights);
        }
        self.output_weights = Some(weights);
        Ok(())
    }

    /// Drops the output matrix; only the input rows are the product.
    pub fn clear_output_weights(&mut self) {
        self.output_weights = None;
    }

    /// Embedding row of a word, if present.
    pub fn embedding_of(&self, word: &str) -> Option<ArrayView1<'_, f64>> {
        self.vocab
            .index_of(word)
            .map(|i| self.input_weights.row(i))
    }
}

/// One embedding space per tuple role, or a single space shared by all
/// three (`W_P = W_R = W_S`).
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum RoleModels {
    Shared(EmbeddingModel),
    Separate {
        primary: EmbeddingModel,
        relation: EmbeddingModel,
        secondary: EmbeddingModel,
    },
}

impl RoleModels {
    /// Builds a separate-mode bundle, checking the hidden widths agree.
    pub fn separate(
        primary: EmbeddingModel,
        relation: EmbeddingModel,
        secondary: EmbeddingModel,
    ) -> Result<Self, EmbeddingError> {
        for m in [&relation, &secondary] {
            if m.n_hidden() != primary.n_hidden() {
                return Err(EmbeddingError::HiddenWidthMismatch(
                    primary.n_hidden(),
                    m.n_hidden(),
                ));
            }
        }
        Ok(RoleModels::Separate {
            primary,
            relation,
            secondary,
        })
    }

    pub fn for_role(&self, role: Role) -> &EmbeddingModel {
        match self {
            RoleModels::Shared(m) => m,
            RoleModels::Separate {
                primary,
                relation,
                secondary,
            } => match role {
                Role::Primary => primary,
                Role::Relation => relation,
                Role::Secondary => secondary,
            },
        }
    }

    pub fn is_shared(&self) -> bool {
        matches!(self, RoleModels::Shared(_))
    }

    pub fn n_hidden(&self) -> usize {
        self.for_role(Role::Primary).n_hidden()
    }
}

/// Hidden activation of a window: the mean of the input rows over the
/// window's tokens, duplicates counted by multiplicity.
pub fn hidden<S: AsRef<str>>(
    model: &EmbeddingModel,
    window: &[S],
) -> Result<Array1<f64>, EmbeddingError> {
    if window.is_empty() {
        return Err(EmbeddingError::EmptyWindow);
    }
    let mut sum = Array1::zeros(model.n_hidden());
    for tok in window {
        let idx = model
            .vocab
            .index_of(tok.as_ref())
            .ok_or_else(|| EmbeddingError::UnknownToken(tok.as_ref().to_owned()))?;
        sum += &model.input_weights.row(idx);
    }
    Ok(sum / window.len() as f64)
}

/// Mean of rows selected by index; callers guarantee the indices are valid.
pub(crate) fn hidden_by_indices(weights: &Array2<f64>, indices: &[usize]) -> Array1<f64> {
    let mut sum = Array1::zeros(weights.ncols());
    for &i in indices {
        sum += &weights.row(i);
    }
    sum / indices.len() as f64
}

/// Cosine similarity, clamped into `[-1, 1]`. Zero-norm inputs are an error
/// rather than a silent zero so they cannot corrupt rankings.
pub fn cosine(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64, EmbeddingError> {
    if u.len() != v.len() {
        return Err(EmbeddingError::LengthMismatch(u.len(), v.len()));
    }
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    Ok((u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Cosine between the embedding rows of two words.
pub fn word_cosine(
    model: &EmbeddingModel,
    a: &str,
    b: &str,
) -> Result<f64, EmbeddingError> {
    let ea = model
        .embedding_of(a)
        .ok_or_else(|| EmbeddingError::UnknownToken(a.to_owned()))?;
    let eb = model
        .embedding_of(b)
        .ok_or_else(|| EmbeddingError::UnknownToken(b.to_owned()))?;
    cosine(ea, eb)
}

/// Writes the model in the text interchange format: a `N_V N_H` header, then
/// one line per word with its values in vocabulary order. Values carry nine
/// significant digits; newlines are Unix, separators single spaces.
pub fn write_text<W: Write>(model: &EmbeddingModel, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{} {}", model.vocab.len(), model.n_hidden())?;
    for (i, word) in model.vocab.words().iter().enumerate() {
        write!(out, "{word}")?;
        for v in model.input_weights.row(i) {
            write!(out, " {v:.8e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_text(model: &EmbeddingModel, path: &Path) -> Result<(), FormatError> {
    let io_err = |source| FormatError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = BufWriter::new(File::create(path).map_err(io_err)?);
    write_text(model, &mut file).map_err(io_err)?;
    file.flush().map_err(io_err)
}

/// Parses the text interchange format back into a model.
pub fn read_text<R: BufRead>(reader: R) -> Result<EmbeddingModel, FormatError> {
    let mut lines = reader.lines().enumerate();

    let (header_idx, header) = loop {
        match lines.next() {
            None => return Err(FormatError::Empty),
            Some((i, line)) => {
                let line = line.map_err(|source| FormatError::Io {
                    path: "<reader>".to_owned(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                break (i, line);
            }
        }
    };
    let mut parts = header.split_whitespace();
    let n_words: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or(FormatError::BadHeader {
            line: header_idx + 1,
        })?;
    let n_hidden: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or(FormatError::BadHeader {
            line: header_idx + 1,
        })?;
    if parts.next().is_some() || n_words == 0 || n_hidden == 0 {
        return Err(FormatError::BadHeader {
            line: header_idx + 1,
        });
    }

    let mut words: Vec<String> = Vec::with_capacity(n_words);
    let mut values: Vec<f64> = Vec::with_capacity(n_words * n_hidden);
    for (i, line) in &mut lines {
        let line = line.map_err(|source| FormatError::Io {
            path: "<reader>".to_owned(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        if words.len() == n_words {
            return Err(FormatError::RowCount {
                declared: n_words,
                found: n_words + 1,
            });
        }
        let mut fields = line.split_whitespace();
        let word = fields
            .next()
            .ok_or(FormatError::MissingWord { line: line_no })?
            .to_owned();
        let mut row = Vec::with_capacity(n_hidden);
        for field in fields {
            let v: f64 = field.parse().map_err(|_| FormatError::BadNumber {
                line: line_no,
                text: field.to_owned(),
            })?;
            row.push(v);
        }
        if row.len() != n_hidden {
            return Err(FormatError::RowLength {
                line: line_no,
                word,
                expected: n_hidden,
                found: row.len(),
            });
        }
        if words.contains(&word) {
            return Err(FormatError::DuplicateWord { line: line_no, word });
        }
        words.push(word);
        values.extend(row);
    }
    if words.len() != n_words {
        return Err(FormatError::RowCount {
            declared: n_words,
            found: words.len(),
        });
    }

    let vocab = Vocabulary::from_ordered_words(words).map_err(|word| {
        FormatError::DuplicateWord { line: 0, word }
    })?;
    let weights = Array2::from_shape_vec((n_words, n_hidden), values)
        .expect("row collection enforces the shape");
    EmbeddingModel::new(vocab, weights).map_err(|_| FormatError::BadHeader { line: 1 })
}

pub fn load_text(path: &Path) -> Result<EmbeddingModel, FormatError> {
    let file = File::open(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_text(BufReader::new(file)).map_err(|e| match e {
        FormatError::Io { source, .. } => FormatError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}
