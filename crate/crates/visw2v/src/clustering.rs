//! The grouping function: K-means over visual feature vectors, with optional
//! PCA reduction beforehand. A fitted [`ClusterModel`] maps any feature
//! vector to a surrogate class label by nearest-centroid assignment.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::derive_seed;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("need at least 2 rows to fit, found {0}")]
    TooFewRows(usize),
    #[error("variance retention must be in (0, 1], found {0}")]
    BadRetention(f64),
    #[error("degenerate input: all rows are identical")]
    DegenerateData,
    #[error("cluster count K={k} exceeds the number of points n={n}")]
    TooManyClusters { k: usize, n: usize },
    #[error("cluster count must be at least 2, found {0}")]
    TooFewClusters(usize),
    #[error("only {distinct} distinct points for K={k} clusters")]
    NotEnoughDistinctPoints { distinct: usize, k: usize },
    #[error("max_iter must be at least 1")]
    ZeroIterations,
    #[error("restart count must be at least 1")]
    ZeroRestarts,
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("feature has dimension {found}, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("feature rows are ragged: row {row} has {found} values, expected {expected}")]
    RaggedRows {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("empty feature set")]
    EmptyFeatures,
    #[error("failed to access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model file line {line}: {reason}")]
    BadModelFile { line: usize, reason: String },
}

/// Mean vector plus orthonormal principal-component rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Array1<f64>,
    components: Array2<f64>,
    variance_retained: f64,
}

impl PcaModel {
    pub fn mean(&self) -> ArrayView1<'_, f64> {
        self.mean.view()
    }

    pub fn components(&self) -> ArrayView2<'_, f64> {
        self.components.view()
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance_retained(&self) -> f64 {
        self.variance_retained
    }

    /// Coordinates of `x` in the component basis: `components · (x − mean)`.
    pub fn project(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>, ClusterError> {
        if x.len() != self.input_dim() {
            return Err(ClusterError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let centered = &x - &self.mean;
        Ok(self.components.dot(&centered))
    }

    /// Projects every row of a feature matrix.
    pub fn project_all(&self, features: &Array2<f64>) -> Result<Array2<f64>, ClusterError> {
        if features.ncols() != self.input_dim() {
            return Err(ClusterError::DimensionMismatch {
                expected: self.input_dim(),
                found: features.ncols(),
            });
        }
        let centered = features - &self.mean;
        Ok(centered.dot(&self.components.t()))
    }
}

/// Fits PCA by eigendecomposition of the sample covariance of mean-centered
/// rows. Keeps the smallest number of leading components whose cumulative
/// explained variance reaches `variance_retained`.
pub fn pca_fit(features: &Array2<f64>, variance_retained: f64) -> Result<PcaModel, ClusterError> {
    let n = features.nrows();
    let d = features.ncols();
    if n < 2 {
        return Err(ClusterError::TooFewRows(n));
    }
    if !(variance_retained > 0.0 && variance_retained <= 1.0) {
        return Err(ClusterError::BadRetention(variance_retained));
    }
    validate_finite(features)?;

    let mean = features.mean_axis(Axis(0)).expect("n >= 2");
    let centered = features - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);

    let total_variance: f64 = (0..d).map(|i| cov[[i, i]]).sum();
    if total_variance <= f64::EPSILON {
        return Err(ClusterError::DegenerateData);
    }

    let cov_na = DMatrix::from_row_iterator(d, d, cov.iter().copied());
    let eigen = SymmetricEigen::new(cov_na);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));

    let mut cumulative = 0.0;
    let mut rank = d;
    for (count, &idx) in order.iter().enumerate() {
        cumulative += eigen.eigenvalues[idx].max(0.0);
        if cumulative / total_variance >= variance_retained {
            rank = count + 1;
            break;
        }
    }

    let mut components = Array2::zeros((rank, d));
    for (row, &idx) in order.iter().take(rank).enumerate() {
        let col = eigen.eigenvectors.column(idx);
        // fix the sign so the entry of largest magnitude is positive
        let pivot = (0..d)
            .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()))
            .unwrap();
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components[[row, j]] = sign * col[j];
        }
    }

    Ok(PcaModel {
        mean,
        components,
        variance_retained,
    })
}

/// An optional PCA projection plus K centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pca: Option<PcaModel>,
    centroids: Array2<f64>,
    seed: u64,
}

impl ClusterModel {
    pub fn n_clusters(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn centroids(&self) -> ArrayView2<'_, f64> {
        self.centroids.view()
    }

    pub fn pca(&self) -> Option<&PcaModel> {
        self.pca.as_ref()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Dimension expected of raw input features.
    pub fn input_dim(&self) -> usize {
        match &self.pca {
            Some(p) => p.input_dim(),
            None => self.centroids.ncols(),
        }
    }

    /// Surrogate class of a feature vector: index of the nearest centroid by
    /// Euclidean distance, ties broken by the lowest index. The PCA
    /// projection, when present, is applied internally.
    pub fn assign(&self, feature: ArrayView1<'_, f64>) -> Result<usize, ClusterError> {
        let projected;
        let point = match &self.pca {
            Some(p) => {
                projected = p.project(feature)?;
                projected.view()
            }
            None => {
                if feature.len() != self.centroids.ncols() {
                    return Err(ClusterError::DimensionMismatch {
                        expected: self.centroids.ncols(),
                        found: feature.len(),
                    });
                }
                feature
            }
        };
        Ok(nearest_centroid(&self.centroids, point).0)
    }
}

fn validate_finite(features: &Array2<f64>) -> Result<(), ClusterError> {
    for (r, row) in features.outer_iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(ClusterError::NonFinite { row: r + 1, col: c + 1 });
            }
        }
    }
    Ok(())
}

fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

fn nearest_centroid(centroids: &Array2<f64>, point: ArrayView1<'_, f64>) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = squared_distance(centroids.row(0), point);
    for (j, c) in centroids.outer_iter().enumerate().skip(1) {
        let d = squared_distance(c, point);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    (best, best_d)
}

/// Per-restart record of Lloyd's algorithm: within-cluster sum of squares
/// after each assignment step, plus the final value.
#[derive(Debug, Clone)]
pub struct RestartTrace {
    pub wcss_history: Vec<f64>,
    pub final_wcss: f64,
}

struct RestartOutcome {
    centroids: Array2<f64>,
    wcss: f64,
    trace: RestartTrace,
}

fn kmeans_plus_plus(
    features: &Array2<f64>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let n = features.nrows();
    let d = features.ncols();
    let mut centroids = Array2::zeros((k, d));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&features.row(first));

    let mut dist2: Vec<f64> = (0..n)
        .map(|i| squared_distance(features.row(i), centroids.row(0)))
        .collect();

    for next in 1..k {
        let total: f64 = dist2.iter().sum();
        debug_assert!(total > 0.0, "fewer distinct points than clusters");
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = n - 1;
        for (i, &w) in dist2.iter().enumerate() {
            acc += w;
            if acc > target && w > 0.0 {
                chosen = i;
                break;
            }
        }
        centroids.row_mut(next).assign(&features.row(chosen));
        for (i, slot) in dist2.iter_mut().enumerate() {
            let d2 = squared_distance(features.row(i), centroids.row(next));
            if d2 < *slot {
                *slot = d2;
            }
        }
    }
    centroids
}

fn lloyd(
    features: &Array2<f64>,
    mut centroids: Array2<f64>,
    max_iter: usize,
) -> RestartOutcome {
    let n = features.nrows();
    let k = centroids.nrows();
    let d = centroids.ncols();
    let mut labels = vec![usize::MAX; n];
    let mut wcss_history = Vec::new();
    let mut wcss = f64::INFINITY;

    for _ in 0..max_iter {
        // assignment step
        let mut changed = false;
        wcss = 0.0;
        for (i, label) in labels.iter_mut().enumerate() {
            let (j, d2) = nearest_centroid(&centroids, features.row(i));
            wcss += d2;
            if *label != j {
                *label = j;
                changed = true;
            }
        }
        wcss_history.push(wcss);
        if !changed {
            break;
        }

        // update step
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut sizes = vec![0usize; k];
        for i in 0..n {
            let mut row = sums.row_mut(labels[i]);
            row += &features.row(i);
            sizes[labels[i]] += 1;
        }
        for (j, &size) in sizes.iter().enumerate() {
            if size > 0 {
                let mut row = centroids.row_mut(j);
                row.assign(&(&sums.row(j) / size as f64));
            }
        }

        // an empty cluster is reseeded to the point farthest from its
        // (currently assigned) centroid
        let mut stolen: Vec<usize> = Vec::new();
        for (j, &size) in sizes.iter().enumerate() {
            if size > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|i| !stolen.contains(i))
                .max_by(|&a, &b| {
                    let da = squared_distance(features.row(a), centroids.row(labels[a]));
                    let db = squared_distance(features.row(b), centroids.row(labels[b]));
                    da.total_cmp(&db)
                })
                .expect("n >= k > number of empty clusters");
            centroids.row_mut(j).assign(&features.row(far));
            stolen.push(far);
        }
    }

    RestartOutcome {
        centroids,
        wcss,
        trace: RestartTrace {
            final_wcss: wcss,
            wcss_history,
        },
    }
}

/// Lloyd's algorithm with k-means++ seeding. Runs `n_restarts` independent
/// restarts, each with its own generator stream derived from `(seed,
/// restart)`, and keeps the solution with the lowest within-cluster sum of
/// squares.
pub fn kmeans_fit(
    features: &Array2<f64>,
    k: usize,
    seed: u64,
    max_iter: usize,
    n_restarts: usize,
) -> Result<ClusterModel, ClusterError> {
    Ok(kmeans_fit_with_trace(features, k, seed, max_iter, n_restarts)?.0)
}

/// Same as [`kmeans_fit`] but also returns the per-restart WCSS traces.
pub fn kmeans_fit_with_trace(
    features: &Array2<f64>,
    k: usize,
    seed: u64,
    max_iter: usize,
    n_restarts: usize,
) -> Result<(ClusterModel, Vec<RestartTrace>), ClusterError> {
    let n = features.nrows();
    if n == 0 {
        return Err(ClusterError::EmptyFeatures);
    }
    if k < 2 {
        return Err(ClusterError::TooFewClusters(k));
    }
    if k > n {
        return Err(ClusterError::TooManyClusters { k, n });
    }
    if max_iter == 0 {
        return Err(ClusterError::ZeroIterations);
    }
    if n_restarts == 0 {
        return Err(ClusterError::ZeroRestarts);
    }
    validate_finite(features)?;

    let mut distinct: Vec<Vec<u64>> = features
        .outer_iter()
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < k {
        return Err(ClusterError::NotEnoughDistinctPoints {
            distinct: distinct.len(),
            k,
        });
    }

    let mut best: Option<RestartOutcome> = None;
    let mut traces = Vec::with_capacity(n_restarts);
    for restart in 0..n_restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, restart as u64));
        let init = kmeans_plus_plus(features, k, &mut rng);
        let outcome = lloyd(features, init, max_iter);
        traces.push(outcome.trace.clone());
        let better = match &best {
            None => true,
            Some(b) => outcome.wcss < b.wcss,
        };
        if better {
            best = Some(outcome);
        }
    }
    let best = best.expect("n_restarts >= 1");

    Ok((
        ClusterModel {
            pca: None,
            centroids: best.centroids,
            seed,
        },
        traces,
    ))
}

/// Fits the full grouping function: optional PCA to the requested variance
/// retention, then K-means in the (possibly reduced) space.
pub fn fit_cluster_model(
    features: &Array2<f64>,
    k: usize,
    seed: u64,
    max_iter: usize,
    n_restarts: usize,
    pca_retention: Option<f64>,
) -> Result<ClusterModel, ClusterError> {
    match pca_retention {
        None => kmeans_fit(features, k, seed, max_iter, n_restarts),
        Some(retention) => {
            let pca = pca_fit(features, retention)?;
            let projected = pca.project_all(features)?;
            let mut model = kmeans_fit(&projected, k, seed, max_iter, n_restarts)?;
            model.pca = Some(pca);
            Ok(model)
        }
    }
}

/// Converts row vectors into a dense matrix, checking rectangularity.
pub fn feature_matrix(rows: &[Vec<f64>]) -> Result<Array2<f64>, ClusterError> {
    if rows.is_empty() {
        return Err(ClusterError::EmptyFeatures);
    }
    let d = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != d {
            return Err(ClusterError::RaggedRows {
                row: i + 1,
                expected: d,
                found: r.len(),
            });
        }
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((rows.len(), d), flat).expect("checked rectangular"))
}

fn write_row<W: Write>(out: &mut W, row: ArrayView1<'_, f64>) -> std::io::Result<()> {
    let mut first = true;
    for v in row {
        if first {
            write!(out, "{v:.8e}")?;
            first = false;
        } else {
            write!(out, " {v:.8e}")?;
        }
    }
    writeln!(out)
}

/// Writes a cluster model: a `K d pca_flag` header, K centroid rows, and —
/// when PCA is present — the mean row followed by the component rows.
pub fn write_cluster_model<W: Write>(model: &ClusterModel, mut out: W) -> std::io::Result<()> {
    let flag = if model.pca.is_some() { 1 } else { 0 };
    writeln!(
        out,
        "{} {} {}",
        model.n_clusters(),
        model.centroids.ncols(),
        flag
    )?;
    for row in model.centroids.outer_iter() {
        write_row(&mut out, row)?;
    }
    if let Some(pca) = &model.pca {
        write_row(&mut out, pca.mean.view())?;
        for row in pca.components.outer_iter() {
            write_row(&mut out, row)?;
        }
    }
    Ok(())
}

pub fn save_cluster_model(model: &ClusterModel, path: &Path) -> Result<(), ClusterError> {
    let io_err = |source| ClusterError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = BufWriter::new(File::create(path).map_err(io_err)?);
    write_cluster_model(model, &mut file).map_err(io_err)?;
    file.flush().map_err(io_err)
}

fn parse_row(line: &str, line_no: usize) -> Result<Vec<f64>, ClusterError> {
    line.split_whitespace()
        .map(|f| {
            f.parse::<f64>().map_err(|_| ClusterError::BadModelFile {
                line: line_no,
                reason: format!("cannot parse '{f}' as a number"),
            })
        })
        .collect()
}

/// Reads a cluster model written by [`write_cluster_model`]. The fit-time
/// seed and PCA retention target are not part of the format; the loaded
/// model reports seed 0 and retention 1.0.
pub fn read_cluster_model<R: BufRead>(reader: R) -> Result<ClusterModel, ClusterError> {
    let lines: Vec<String> = reader
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|source| ClusterError::Io {
            path: "<reader>".to_owned(),
            source,
        })?;
    let mut nonempty = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());

    let (hline, header) = nonempty.next().ok_or(ClusterError::BadModelFile {
        line: 1,
        reason: "empty file".to_owned(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let bad_header = || ClusterError::BadModelFile {
        line: hline + 1,
        reason: "expected header 'K d pca_flag'".to_owned(),
    };
    if fields.len() != 3 {
        return Err(bad_header());
    }
    let k: usize = fields[0].parse().map_err(|_| bad_header())?;
    let dim: usize = fields[1].parse().map_err(|_| bad_header())?;
    let pca_flag: u8 = fields[2].parse().map_err(|_| bad_header())?;
    if k < 2 || dim == 0 || pca_flag > 1 {
        return Err(bad_header());
    }

    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (i, line) in nonempty {
        rows.push((i + 1, parse_row(line, i + 1)?));
    }
    if rows.len() < k {
        return Err(ClusterError::BadModelFile {
            line: lines.len(),
            reason: format!("expected {k} centroid rows, found {}", rows.len()),
        });
    }
    let mut centroids = Array2::zeros((k, dim));
    for (j, (line_no, row)) in rows.iter().take(k).enumerate() {
        if row.len() != dim {
            return Err(ClusterError::BadModelFile {
                line: *line_no,
                reason: format!("centroid row has {} values, expected {dim}", row.len()),
            });
        }
        for (c, v) in row.iter().enumerate() {
            centroids[[j, c]] = *v;
        }
    }

    let rest = &rows[k..];
    let pca = if pca_flag == 1 {
        if rest.len() != dim + 1 {
            return Err(ClusterError::BadModelFile {
                line: lines.len(),
                reason: format!(
                    "PCA block needs 1 mean row plus {dim} component rows, found {} rows",
                    rest.len()
                ),
            });
        }
        let (_, mean_row) = &rest[0];
        let input_dim = mean_row.len();
        let mut components = Array2::zeros((dim, input_dim));
        for (j, (line_no, row)) in rest[1..].iter().enumerate() {
            if row.len() != input_dim {
                return Err(ClusterError::BadModelFile {
                    line: *line_no,
                    reason: format!(
                        "component row has {} values, expected {input_dim}",
                        row.len()
                    ),
                });
            }
            for (c, v) in row.iter().enumerate() {
                components[[j, c]] = *v;
            }
        }
        Some(PcaModel {
            mean: Array1::from_vec(mean_row.clone()),
            components,
            variance_retained: 1.0,
        })
    } else {
        if !rest.is_empty() {
            return Err(ClusterError::BadModelFile {
                line: rest[0].0,
                reason: "unexpected trailing rows".to_owned(),
            });
        }
        None
    };

    Ok(ClusterModel {
        pca,
        centroids,
        seed: 0,
    })
}

pub fn load_cluster_model(path: &Path) -> Result<ClusterModel, ClusterError> {
    let file = File::open(path).map_err(|source| ClusterError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_cluster_model(BufReader::new(file))
}
