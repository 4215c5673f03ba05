//! Ground-distance matrices: the fixed ordinal metric and the self-guided
//! estimate built from class centroids of network features.
//!
//! The learned pipeline is
//! `features → L1-normalize → class centroids → D̄ (l-norm distances)
//!  → B (row-wise percentile ranks) → D = (B + Bᵀ)/2`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Ordinal,
    Learned,
    External,
}

/// Symmetric, nonnegative, zero-diagonal class distance matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundMatrix {
    entries: Matrix,
    provenance: Provenance,
}

impl GroundMatrix {
    pub fn new(entries: Matrix, provenance: Provenance) -> Result<Self> {
        if !entries.is_square() || entries.rows() == 0 {
            return Err(Error::InvalidInput(format!(
                "ground matrix must be square and nonempty, got {}x{}",
                entries.rows(),
                entries.cols()
            )));
        }
        let c = entries.rows();
        for i in 0..c {
            if entries[(i, i)] != 0.0 {
                return Err(Error::InvalidInput(format!("ground matrix diagonal entry {i} is not zero")));
            }
            for j in 0..c {
                let v = entries[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "ground matrix entry ({i},{j}) = {v} is negative or not finite"
                    )));
                }
                if v != entries[(j, i)] {
                    return Err(Error::InvalidInput(format!("ground matrix is not symmetric at ({i},{j})")));
                }
                if provenance == Provenance::Learned && v > 1.0 {
                    return Err(Error::InvalidInput(format!(
                        "learned ground matrix entry ({i},{j}) = {v} exceeds 1"
                    )));
                }
            }
        }
        Ok(GroundMatrix { entries, provenance })
    }

    pub fn num_classes(&self) -> usize {
        self.entries.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn matrix(&self) -> &Matrix {
        &self.entries
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Multiplies every entry by `factor > 0`, keeping the provenance.
    pub fn scaled(&self, factor: f64) -> Result<GroundMatrix> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidInput(format!("scale factor must be > 0, got {factor}")));
        }
        let mut entries = self.entries.clone();
        entries.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
        GroundMatrix::new(entries, self.provenance)
    }
}

/// `D_{i,j} = |i − j|`.
pub fn ordinal_matrix(num_classes: usize) -> Result<GroundMatrix> {
    if num_classes < 2 {
        return Err(Error::InvalidInput(format!(
            "ordinal matrix needs at least 2 classes, got {num_classes}"
        )));
    }
    let entries = Matrix::from_fn(num_classes, num_classes, |i, j| i.abs_diff(j) as f64);
    GroundMatrix::new(entries, Provenance::Ordinal)
}

/// Per-class running sums of L1-normalized feature vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentroidAccumulator {
    sums: Vec<Vec<f64>>,
    counts: Vec<u64>,
    feature_dim: usize,
    skipped: u64,
}

impl CentroidAccumulator {
    pub fn new(num_classes: usize, feature_dim: usize) -> Self {
        CentroidAccumulator {
            sums: vec![vec![0.0; feature_dim]; num_classes],
            counts: vec![0; num_classes],
            feature_dim,
            skipped: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn sums(&self) -> &[Vec<f64>] {
        &self.sums
    }

    /// Number of zero-norm feature vectors that were ignored.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn accumulate(&mut self, features: &[f64], label: usize) -> Result<()> {
        check_len("accumulate_features", self.feature_dim, features.len())?;
        if label >= self.counts.len() {
            return Err(Error::InvalidInput(format!(
                "label {label} out of range for {} classes",
                self.counts.len()
            )));
        }
        let norm: f64 = features.iter().map(|v| v.abs()).sum();
        if norm == 0.0 {
            self.skipped += 1;
            return Ok(());
        }
        if !norm.is_finite() {
            return Err(Error::NumericalFailure("non-finite feature vector".into()));
        }
        for (s, v) in self.sums[label].iter_mut().zip(features) {
            *s += v / norm;
        }
        self.counts[label] += 1;
        Ok(())
    }

    /// Folds `other` into `self`; merging partial accumulators in a fixed
    /// order gives the same result on every run.
    pub fn merge(&mut self, other: &CentroidAccumulator) -> Result<()> {
        check_len("merge classes", self.num_classes(), other.num_classes())?;
        check_len("merge feature_dim", self.feature_dim, other.feature_dim)?;
        for (mine, theirs) in self.sums.iter_mut().zip(&other.sums) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += b;
            }
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.skipped += other.skipped;
        Ok(())
    }

    pub fn centroid(&self, class: usize) -> Option<Vec<f64>> {
        let n = *self.counts.get(class)?;
        (n > 0).then(|| self.sums[class].iter().map(|s| s / n as f64).collect())
    }

    pub fn missing_classes(&self) -> Vec<usize> {
        (0..self.counts.len()).filter(|&c| self.counts[c] == 0).collect()
    }

    pub fn reset(&mut self) {
        self.sums.iter_mut().for_each(|s| s.iter_mut().for_each(|v| *v = 0.0));
        self.counts.iter_mut().for_each(|c| *c = 0);
        self.skipped = 0;
    }
}

fn lp_distance(a: &[f64], b: &[f64], l: f64) -> f64 {
    if l == 1.0 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
    } else if l == 2.0 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    } else if l.is_infinite() {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    } else {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs().powf(l))
            .sum::<f64>()
            .powf(1.0 / l)
    }
}

/// `D̄_{i,j} = ‖ā_i − ā_j‖_l` between class centroids.
pub fn raw_distance_matrix(acc: &CentroidAccumulator, l: f64) -> Result<Matrix> {
    if !(l >= 1.0) {
        return Err(Error::InvalidInput(format!("norm order must be >= 1, got {l}")));
    }
    let centroids = (0..acc.num_classes())
        .map(|c| acc.centroid(c).ok_or(Error::InsufficientData { class: c }))
        .collect::<Result<Vec<_>>>()?;
    Ok(centroid_distances(&centroids, l))
}

fn centroid_distances(centroids: &[Vec<f64>], l: f64) -> Matrix {
    let c = centroids.len();
    let mut out = Matrix::zeros(c, c);
    for i in 0..c {
        for j in (i + 1)..c {
            let v = lp_distance(&centroids[i], &centroids[j], l);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// `B_{i,j} = #{m : D̄_{i,m} < D̄_{i,j}} / C`, row by row.
pub fn percentile_transform(raw: &Matrix) -> Matrix {
    percentile_transform_scaled(raw, raw.cols())
}

fn percentile_transform_scaled(raw: &Matrix, denom: usize) -> Matrix {
    let denom = denom as f64;
    Matrix::from_fn(raw.rows(), raw.cols(), |i, j| {
        let row = raw.row(i);
        let v = row[j];
        row.iter().filter(|&&x| x < v).count() as f64 / denom
    })
}

/// `D = (B + Bᵀ)/2` with the diagonal forced to zero.
pub fn symmetrize(b: &Matrix) -> Result<GroundMatrix> {
    if !b.is_square() {
        return Err(Error::InvalidInput("symmetrize needs a square matrix".into()));
    }
    let c = b.rows();
    let entries = Matrix::from_fn(c, c, |i, j| if i == j { 0.0 } else { (b[(i, j)] + b[(j, i)]) / 2.0 });
    GroundMatrix::new(entries, Provenance::Learned)
}

/// Population standard deviation over the entries of `raw`.
///
/// With `include_diagonal` false only the off-diagonal entries are used.
pub fn sdd(raw: &Matrix, include_diagonal: bool) -> f64 {
    let values: Vec<f64> = (0..raw.rows())
        .flat_map(|i| (0..raw.cols()).map(move |j| (i, j)))
        .filter(|&(i, j)| include_diagonal || i != j)
        .map(|(i, j)| raw[(i, j)])
        .collect();
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// One epoch's ground-distance estimate.
#[derive(Clone, Debug)]
pub struct DistanceEstimate {
    pub raw: Matrix,
    pub percentile: Matrix,
    pub learned: GroundMatrix,
    /// Classes with no features this epoch; their rows and columns were copied
    /// from the previous estimate.
    pub missing: Vec<usize>,
}

/// Runs the full centroid → D pipeline, falling back to `previous` for
/// rows and columns of classes that received no features.
///
/// Without a previous estimate any missing class is an error. Entries of
/// `raw` that involve a missing class are reported as zero.
pub fn estimate_ground_distance(
    acc: &CentroidAccumulator,
    l: f64,
    previous: Option<&GroundMatrix>,
) -> Result<DistanceEstimate> {
    let missing = acc.missing_classes();
    if missing.is_empty() {
        let raw = raw_distance_matrix(acc, l)?;
        let percentile = percentile_transform(&raw);
        let learned = symmetrize(&percentile)?;
        return Ok(DistanceEstimate {
            raw,
            percentile,
            learned,
            missing,
        });
    }
    let prev = match previous {
        Some(p) => p,
        None => return Err(Error::InsufficientData { class: missing[0] }),
    };
    check_len("previous ground matrix", acc.num_classes(), prev.num_classes())?;
    if !(l >= 1.0) {
        return Err(Error::InvalidInput(format!("norm order must be >= 1, got {l}")));
    }

    let c = acc.num_classes();
    let present: Vec<usize> = (0..c).filter(|k| !missing.contains(k)).collect();
    let centroids: Vec<Vec<f64>> = present.iter().map(|&k| acc.centroid(k).unwrap_or_default()).collect();
    let sub_raw = centroid_distances(&centroids, l);
    // percentiles keep the full-class denominator so entries stay on the same scale
    let sub_b = percentile_transform_scaled(&sub_raw, c);

    let mut raw = Matrix::zeros(c, c);
    let mut percentile = Matrix::zeros(c, c);
    let mut entries = prev.matrix().clone();
    for (a, &i) in present.iter().enumerate() {
        for (b, &j) in present.iter().enumerate() {
            raw[(i, j)] = sub_raw[(a, b)];
            percentile[(i, j)] = sub_b[(a, b)];
            entries[(i, j)] = if i == j { 0.0 } else { (sub_b[(a, b)] + sub_b[(b, a)]) / 2.0 };
        }
    }
    let learned = GroundMatrix::new(entries, Provenance::Learned)?;
    Ok(DistanceEstimate {
        raw,
        percentile,
        learned,
        missing,
    })
}
