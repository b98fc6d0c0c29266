//! Corpus ingestion: tokenization, vocabularies, multimodal datasets, tuple
//! files, and training-window expansion.
//!
//! File formats handled here:
//! - text corpus: UTF-8 plain text, one document per line
//! - multimodal features: CSV of reals, one vector per row, no header
//! - multimodal text: one record per line, sentences separated by tabs
//! - tuple files: TSV with columns primary, relation, secondary, optional 0/1 label
//! - lemma table: TSV word→lemma, applied after tokenization

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

/// Map from surface form to lemma, applied after tokenization.
pub type LemmaTable = HashMap<String, String>;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("vocabulary is empty: no token reached min_count {min_count}")]
    EmptyVocabulary { min_count: u64 },
    #[error("feature row {row}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("feature row {row}, column {col}: non-finite value {value}")]
    NonFiniteFeature { row: usize, col: usize, value: f64 },
    #[error("feature row {row}, column {col}: cannot parse '{text}' as a number")]
    BadNumber { row: usize, col: usize, text: String },
    #[error("row count mismatch: {features} feature rows vs {texts} text records")]
    CountMismatch { features: usize, texts: usize },
    #[error("record {row}: text is empty after tokenization")]
    EmptyText { row: usize },
    #[error("tuple row {row}: expected 3 or 4 tab-separated columns, found {found}")]
    BadTupleRow { row: usize, found: usize },
    #[error("tuple row {row}: {element} element is empty after tokenization")]
    EmptyTupleElement { row: usize, element: &'static str },
    #[error("tuple row {row}: label must be 0 or 1, found '{found}'")]
    BadLabel { row: usize, found: String },
    #[error("lemma table line {row}: expected 'word<TAB>lemma'")]
    BadLemmaRow { row: usize },
    #[error("window width must be at least 1")]
    InvalidWindowWidth,
    #[error("every window is empty after vocabulary filtering")]
    AllWindowsEmpty,
}

/// Lowercases the input and splits it on runs of non-alphanumeric characters.
///
/// Empty input yields an empty list. The function is idempotent on its own
/// output rejoined with spaces.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Replaces each token that has an entry in the lemma table.
pub fn apply_lemmas(tokens: &mut [String], lemmas: &LemmaTable) {
    for tok in tokens.iter_mut() {
        if let Some(lemma) = lemmas.get(tok) {
            *tok = lemma.clone();
        }
    }
}

fn tokenize_with(text: &str, lemmas: Option<&LemmaTable>) -> Vec<String> {
    let mut toks = tokenize(text);
    if let Some(table) = lemmas {
        apply_lemmas(&mut toks, table);
    }
    toks
}

/// Bidirectional word↔index map with occurrence counts. Indices are dense in
/// `[0, len)` and `word(index_of(w)) == w` for every vocabulary word.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
}

impl Vocabulary {
    /// Builds a vocabulary from explicit counts. Tokens below `min_count` are
    /// dropped; indices are assigned in descending count order with ties
    /// broken lexicographically.
    pub fn from_counts(
        counts: HashMap<String, u64>,
        min_count: u64,
    ) -> Result<Self, CorpusError> {
        let mut entries: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .collect();
        if entries.is_empty() {
            return Err(CorpusError::EmptyVocabulary { min_count });
        }
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut words = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (word, count)) in entries.into_iter().enumerate() {
            index.insert(word.clone(), i);
            words.push(word);
            counts.push(count);
        }
        Ok(Vocabulary {
            words,
            index,
            counts,
        })
    }

    /// Builds a vocabulary preserving the given word order (all counts 1).
    /// Returns the offending word if a duplicate is present.
    pub fn from_ordered_words(words: Vec<String>) -> Result<Self, String> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(w.clone());
            }
        }
        let counts = vec![1; words.len()];
        Ok(Vocabulary {
            words,
            index,
            counts,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn count_of(&self, word: &str) -> Option<u64> {
        self.index_of(word).map(|i| self.counts[i])
    }

    /// Occurrence counts aligned with the index order.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}

/// Counts tokens in the stream and builds a [`Vocabulary`] with the
/// `min_count` threshold applied.
pub fn build_vocab<I, S>(tokens: I, min_count: u64) -> Result<Vocabulary, CorpusError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, u64> = HashMap::new();
    for tok in tokens {
        *counts.entry(tok.as_ref().to_owned()).or_insert(0) += 1;
    }
    Vocabulary::from_counts(counts, min_count)
}

/// One visual feature vector paired with its associated text, kept as a flat
/// token list plus sentence-segment boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalPair {
    features: Vec<f64>,
    tokens: Vec<String>,
    /// Cumulative end offset of each segment; the last entry equals `tokens.len()`.
    segment_ends: Vec<usize>,
}

impl MultimodalPair {
    /// Assembles a pair from segments (sentences). Empty segments are
    /// dropped; the text must be non-empty overall and the features finite.
    pub fn new(features: Vec<f64>, segments: Vec<Vec<String>>) -> Result<Self, CorpusError> {
        for (col, &v) in features.iter().enumerate() {
            if !v.is_finite() {
                return Err(CorpusError::NonFiniteFeature {
                    row: 0,
                    col: col + 1,
                    value: v,
                });
            }
        }
        let mut tokens = Vec::new();
        let mut segment_ends = Vec::new();
        for seg in segments {
            if seg.is_empty() {
                continue;
            }
            tokens.extend(seg);
            segment_ends.push(tokens.len());
        }
        if tokens.is_empty() {
            return Err(CorpusError::EmptyText { row: 0 });
        }
        Ok(MultimodalPair {
            features,
            tokens,
            segment_ends,
        })
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn n_segments(&self) -> usize {
        self.segment_ends.len()
    }

    pub fn segment(&self, i: usize) -> Option<&[String]> {
        let end = *self.segment_ends.get(i)?;
        let start = if i == 0 { 0 } else { self.segment_ends[i - 1] };
        Some(&self.tokens[start..end])
    }

    pub fn segments(&self) -> impl Iterator<Item = &[String]> {
        (0..self.n_segments()).map(|i| self.segment(i).unwrap())
    }
}

/// A (primary, relation, secondary) phrase triple, the unit of the
/// plausibility and retrieval tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct Tuple {
    pub primary: Vec<String>,
    pub relation: Vec<String>,
    pub secondary: Vec<String>,
    pub label: Option<bool>,
}

/// The role a phrase plays inside a tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Primary,
    Relation,
    Secondary,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Primary, Role::Relation, Role::Secondary];

    /// File suffix used when one model is written per role.
    pub fn suffix(self) -> &'static str {
        match self {
            Role::Primary => "P",
            Role::Relation => "R",
            Role::Secondary => "S",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.suffix())
    }
}

impl Tuple {
    pub fn element(&self, role: Role) -> &[String] {
        match role {
            Role::Primary => &self.primary,
            Role::Relation => &self.relation,
            Role::Secondary => &self.secondary,
        }
    }

    /// All tokens of the tuple in P, R, S order.
    pub fn all_tokens(&self) -> impl Iterator<Item = &String> {
        self.primary
            .iter()
            .chain(self.relation.iter())
            .chain(self.secondary.iter())
    }
}

/// Context-selection policy: how a record's text expands into training windows.
///
/// `Words` puts every token in its own window; `Phrases` keeps the whole
/// record in one window (intended for records that hold a single tuple
/// element); `Sents` emits one window per sentence segment; `Winds(n)` slides
/// a width-`n` window over each segment; `Descs` uses the entire description.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowStrategy {
    Words,
    Phrases,
    Sents,
    Winds(usize),
    Descs,
}

impl FromStr for WindowStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "words" => Ok(WindowStrategy::Words),
            "phrases" => Ok(WindowStrategy::Phrases),
            "sents" => Ok(WindowStrategy::Sents),
            "descs" => Ok(WindowStrategy::Descs),
            "winds" => Ok(WindowStrategy::Winds(5)),
            other => {
                if let Some(width) = other.strip_prefix("winds:") {
                    let n: usize = width
                        .parse()
                        .map_err(|_| format!("invalid window width '{width}'"))?;
                    if n == 0 {
                        return Err("window width must be at least 1".to_owned());
                    }
                    Ok(WindowStrategy::Winds(n))
                } else {
                    Err(format!(
                        "unknown strategy '{other}' (expected words|phrases|sents|winds:<n>|descs)"
                    ))
                }
            }
        }
    }
}

impl fmt::Display for WindowStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowStrategy::Words => f.write_str("words"),
            WindowStrategy::Phrases => f.write_str("phrases"),
            WindowStrategy::Sents => f.write_str("sents"),
            WindowStrategy::Winds(n) => write!(f, "winds:{n}"),
            WindowStrategy::Descs => f.write_str("descs"),
        }
    }
}

/// Expands a pair's text into training windows under the given strategy.
///
/// Out-of-vocabulary tokens are dropped from every window and windows left
/// empty by that filtering are discarded. Errors if nothing remains.
pub fn windows(
    pair: &MultimodalPair,
    strategy: WindowStrategy,
    vocab: &Vocabulary,
) -> Result<Vec<Vec<String>>, CorpusError> {
    let raw: Vec<Vec<&str>> = match strategy {
        WindowStrategy::Words => pair
            .tokens()
            .iter()
            .map(|t| vec![t.as_str()])
            .collect(),
        // A "phrase" record carries one tuple element, so the whole record
        // is the window; for description records this coincides with Descs.
        WindowStrategy::Phrases | WindowStrategy::Descs => {
            vec![pair.tokens().iter().map(String::as_str).collect()]
        }
        WindowStrategy::Sents => pair
            .segments()
            .map(|seg| seg.iter().map(String::as_str).collect())
            .collect(),
        WindowStrategy::Winds(n) => {
            if n == 0 {
                return Err(CorpusError::InvalidWindowWidth);
            }
            let mut out = Vec::new();
            for seg in pair.segments() {
                if seg.len() <= n {
                    out.push(seg.iter().map(String::as_str).collect());
                } else {
                    for start in 0..=(seg.len() - n) {
                        out.push(seg[start..start + n].iter().map(String::as_str).collect());
                    }
                }
            }
            out
        }
    };

    let filtered: Vec<Vec<String>> = raw
        .into_iter()
        .map(|w| {
            w.into_iter()
                .filter(|t| vocab.contains(t))
                .map(str::to_owned)
                .collect::<Vec<_>>()
        })
        .filter(|w| !w.is_empty())
        .collect();

    if filtered.is_empty() {
        return Err(CorpusError::AllWindowsEmpty);
    }
    Ok(filtered)
}

fn open(path: &Path) -> Result<BufReader<File>, CorpusError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
}

fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    open(path)?
        .lines()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Loads a plain-text corpus: one document per line, tokenized. Lines with
/// no tokens are dropped.
pub fn load_corpus(
    path: &Path,
    lemmas: Option<&LemmaTable>,
) -> Result<Vec<Vec<String>>, CorpusError> {
    Ok(read_lines(path)?
        .iter()
        .map(|line| tokenize_with(line, lemmas))
        .filter(|doc| !doc.is_empty())
        .collect())
}

/// Loads a feature CSV: one vector per row, no header. All rows must share
/// one dimension and every value must be finite. Row numbers in errors are
/// 1-based.
pub fn load_features(path: &Path) -> Result<Vec<Vec<f64>>, CorpusError> {
    let mut rows = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut values = Vec::new();
        for (c, field) in line.split(',').enumerate() {
            let col = c + 1;
            let text = field.trim();
            let v: f64 = text.parse().map_err(|_| CorpusError::BadNumber {
                row,
                col,
                text: text.to_owned(),
            })?;
            if !v.is_finite() {
                return Err(CorpusError::NonFiniteFeature { row, col, value: v });
            }
            values.push(v);
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(CorpusError::DimensionMismatch {
                    row,
                    expected: d,
                    found: values.len(),
                })
            }
            _ => {}
        }
        rows.push(values);
    }
    Ok(rows)
}

/// Loads the multimodal text file: one record per line, sentences separated
/// by tab characters. Records must be non-empty after tokenization.
pub fn load_multimodal_text(
    path: &Path,
    lemmas: Option<&LemmaTable>,
) -> Result<Vec<Vec<Vec<String>>>, CorpusError> {
    let mut records = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let row = i + 1;
        let segments: Vec<Vec<String>> = line
            .split('\t')
            .map(|s| tokenize_with(s, lemmas))
            .filter(|s| !s.is_empty())
            .collect();
        if segments.is_empty() {
            return Err(CorpusError::EmptyText { row });
        }
        records.push(segments);
    }
    Ok(records)
}

/// Loads aligned feature and text files into [`MultimodalPair`]s. The two
/// files must have the same number of records.
pub fn load_multimodal(
    features_path: &Path,
    text_path: &Path,
    lemmas: Option<&LemmaTable>,
) -> Result<Vec<MultimodalPair>, CorpusError> {
    let features = load_features(features_path)?;
    let texts = load_multimodal_text(text_path, lemmas)?;
    if features.len() != texts.len() {
        return Err(CorpusError::CountMismatch {
            features: features.len(),
            texts: texts.len(),
        });
    }
    features
        .into_iter()
        .zip(texts)
        .enumerate()
        .map(|(i, (f, segs))| {
            MultimodalPair::new(f, segs).map_err(|e| match e {
                CorpusError::EmptyText { .. } => CorpusError::EmptyText { row: i + 1 },
                other => other,
            })
        })
        .collect()
}

/// Loads a tuple TSV: primary, relation, secondary, optional 0/1 label.
pub fn load_tuples(path: &Path, lemmas: Option<&LemmaTable>) -> Result<Vec<Tuple>, CorpusError> {
    let mut tuples = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 || cols.len() > 4 {
            return Err(CorpusError::BadTupleRow {
                row,
                found: cols.len(),
            });
        }
        let elements: Vec<Vec<String>> = cols[..3]
            .iter()
            .map(|c| tokenize_with(c, lemmas))
            .collect();
        for (tokens, name) in elements.iter().zip(["primary", "relation", "secondary"]) {
            if tokens.is_empty() {
                return Err(CorpusError::EmptyTupleElement { row, element: name });
            }
        }
        let label = match cols.get(3) {
            None => None,
            Some(raw) => match raw.trim() {
                "0" => Some(false),
                "1" => Some(true),
                other => {
                    return Err(CorpusError::BadLabel {
                        row,
                        found: other.to_owned(),
                    })
                }
            },
        };
        let mut it = elements.into_iter();
        tuples.push(Tuple {
            primary: it.next().unwrap(),
            relation: it.next().unwrap(),
            secondary: it.next().unwrap(),
            label,
        });
    }
    Ok(tuples)
}

/// Loads a word→lemma TSV table.
pub fn load_lemma_table(path: &Path) -> Result<LemmaTable, CorpusError> {
    let mut table = LemmaTable::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (word, lemma) = match (parts.next(), parts.next(), parts.next()) {
            (Some(w), Some(l), None) if !w.is_empty() && !l.is_empty() => (w, l),
            _ => return Err(CorpusError::BadLemmaRow { row }),
        };
        table.insert(word.to_owned(), lemma.to_owned());
    }
    Ok(table)
}
