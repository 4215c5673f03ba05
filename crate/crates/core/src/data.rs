//! Datasets: synthetic ordered-class data, CSV ingestion and score binning.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidInput("dataset has no rows".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset labels",
                expected: features.len(),
                actual: labels.len(),
            });
        }
        let dim = features[0].len();
        for (i, row) in features.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidInput(format!("row {i} has {} features, expected {dim}", row.len())));
            }
            if row.iter().any(|v| v.is_nan()) {
                return Err(Error::InvalidInput(format!("row {i} contains NaN")));
            }
        }
        if let Some(l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidInput(format!("label {l} out of range for {num_classes} classes")));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Moves every `every`-th row into a validation set, keeping the rest.
    pub fn hold_out(&self, every: usize) -> Result<(Dataset, Dataset)> {
        if every < 2 || self.len() < every {
            return Err(Error::InvalidInput(format!("cannot hold out every {every}th of {} rows", self.len())));
        }
        let (mut keep, mut held) = ((Vec::new(), Vec::new()), (Vec::new(), Vec::new()));
        for (i, (x, &y)) in self.features.iter().zip(&self.labels).enumerate() {
            let side = if i % every == every - 1 { &mut held } else { &mut keep };
            side.0.push(x.clone());
            side.1.push(y);
        }
        Ok((
            Dataset::new(keep.0, keep.1, self.num_classes, self.split)?,
            Dataset::new(held.0, held.1, self.num_classes, Split::Validation)?,
        ))
    }

    /// Same features with labels permuted by `seed`.
    pub fn with_shuffled_labels(&self, seed: u64) -> Dataset {
        use rand::seq::SliceRandom;
        let mut labels = self.labels.clone();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Dataset {
            labels,
            ..self.clone()
        }
    }
}

/// Gaussian classes strung along a line, with adjacent-class label noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOrdinalSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub samples_per_class: usize,
    pub center_spacing: f64,
    pub noise_sigma: f64,
    pub neighbor_flip_prob: f64,
    pub seed: u64,
}

impl SyntheticOrdinalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.feature_dim == 0 || self.samples_per_class == 0 {
            return Err(Error::InvalidInput(
                "synthetic spec needs >= 2 classes, feature_dim >= 1 and samples_per_class >= 1".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0) || !self.center_spacing.is_finite() {
            return Err(Error::InvalidInput("noise_sigma must be >= 0 and center_spacing finite".into()));
        }
        if !(0.0..0.5).contains(&self.neighbor_flip_prob) {
            return Err(Error::InvalidInput("neighbor_flip_prob must be in [0, 0.5)".into()));
        }
        Ok(())
    }
}

/// Draws disjoint train and test sets of `samples_per_class` rows per class.
///
/// Returns the generating labels alongside; the dataset labels include the
/// neighbor flips.
pub fn generate_ordinal_with_truth(spec: &SyntheticOrdinalSpec) -> Result<((Dataset, Vec<usize>), (Dataset, Vec<usize>))> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let direction = loop {
        let v: Vec<f64> = (0..spec.feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            break v.into_iter().map(|x| x / norm).collect::<Vec<f64>>();
        }
    };
    let mut draw = |split| -> Result<(Dataset, Vec<usize>)> {
        let n = spec.num_classes * spec.samples_per_class;
        let mut features = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let mut truth = Vec::with_capacity(n);
        for class in 0..spec.num_classes {
            let offset = (class as f64 - (spec.num_classes - 1) as f64 / 2.0) * spec.center_spacing;
            for _ in 0..spec.samples_per_class {
                let x: Vec<f64> = direction
                    .iter()
                    .map(|d| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        d * offset + spec.noise_sigma * z
                    })
                    .collect();
                features.push(x);
                truth.push(class);
                labels.push(flip_label(&mut rng, class, spec));
            }
        }
        Ok((Dataset::new(features, labels, spec.num_classes, split)?, truth))
    };
    let train = draw(Split::Train)?;
    let test = draw(Split::Test)?;
    Ok((train, test))
}

fn flip_label(rng: &mut impl Rng, class: usize, spec: &SyntheticOrdinalSpec) -> usize {
    let u: f64 = rng.random();
    if u >= spec.neighbor_flip_prob {
        return class;
    }
    let last = spec.num_classes - 1;
    let up = rng.random::<bool>();
    // end classes have a single neighbor
    match (class, up) {
        (0, _) => 1,
        (c, _) if c == last => last - 1,
        (c, true) => c + 1,
        (c, false) => c - 1,
    }
}

pub fn generate_ordinal(spec: &SyntheticOrdinalSpec) -> Result<(Dataset, Dataset)> {
    let ((train, _), (test, _)) = generate_ordinal_with_truth(spec)?;
    Ok((train, test))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub num_classes: usize,
    pub has_header: bool,
}

/// Reads rows `feature_1,...,feature_d,label`.
pub fn load_csv(path: &Path, schema: CsvSchema, split: Split) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if record.len() < 2 {
            return Err(parse_err(format!("expected at least one feature and a label, got {} fields", record.len())));
        }
        let width = record.len() - 1;
        match dim {
            None => dim = Some(width),
            Some(d) if d != width => return Err(parse_err(format!("expected {d} features, got {width}"))),
            _ => {}
        }
        let row = record
            .iter()
            .take(width)
            .map(|f| f.parse::<f64>().map_err(|e| parse_err(format!("bad feature {f:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if row.iter().any(|v| v.is_nan()) {
            return Err(parse_err("NaN feature".into()));
        }
        let raw = &record[width];
        let label: usize = raw.parse().map_err(|e| parse_err(format!("bad label {raw:?}: {e}")))?;
        if label >= schema.num_classes {
            return Err(Error::Validation {
                path: path.to_path_buf(),
                line,
                message: format!("label {label} out of range for {} classes", schema.num_classes),
            });
        }
        features.push(row);
        labels.push(label);
    }
    if features.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "no data rows".into(),
        });
    }
    Dataset::new(features, labels, schema.num_classes, split)
}

/// Writes a dataset in the [`load_csv`] layout with a header row.
pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::new();
    for j in 0..data.feature_dim() {
        out.push_str(&format!("feature_{},", j + 1));
    }
    out.push_str("label\n");
    for (row, label) in data.features.iter().zip(&data.labels) {
        for v in row {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{label}\n"));
    }
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Count-balanced bins over real-valued scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    pub labels: Vec<usize>,
    /// `B + 1` edges; bin `b` holds scores in `[edges[b], edges[b+1])`, the
    /// last bin also holding `edges[B]`.
    pub bin_edges: Vec<f64>,
    /// Mean score of each bin.
    pub bin_centers: Vec<f64>,
}

impl Discretization {
    /// Bin index for a new score under the same edges.
    pub fn assign(&self, score: f64) -> usize {
        let inner = &self.bin_edges[1..self.bin_edges.len() - 1];
        inner.iter().filter(|&&e| e <= score).count()
    }
}

/// Splits sorted scores into `num_bins` runs of near-equal size. A run of
/// tied scores straddling a boundary goes entirely to the lower bin.
pub fn discretize_scores(scores: &[f64], num_bins: usize) -> Result<Discretization> {
    if num_bins < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 bins, got {num_bins}")));
    }
    if scores.is_empty() || scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("scores must be nonempty and finite".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < num_bins {
        return Err(Error::DegenerateBins {
            distinct: distinct.len(),
            bins: num_bins,
        });
    }

    let n = sorted.len();
    let mut starts = Vec::with_capacity(num_bins);
    starts.push(0);
    for b in 1..num_bins {
        let mut pos = (b * n / num_bins).max(*starts.last().unwrap_or(&0));
        while pos < n && pos > 0 && sorted[pos] == sorted[pos - 1] {
            pos += 1;
        }
        starts.push(pos);
    }
    if starts.windows(2).any(|w| w[0] >= w[1]) || *starts.last().unwrap_or(&n) >= n {
        return Err(Error::DegenerateBins {
            distinct: distinct.len(),
            bins: num_bins,
        });
    }

    let mut bin_edges: Vec<f64> = starts.iter().map(|&s| sorted[s]).collect();
    bin_edges.push(sorted[n - 1]);
    let mut labels = vec![0; n];
    let mut bin_centers = Vec::with_capacity(num_bins);
    for b in 0..num_bins {
        let end = if b + 1 < num_bins { starts[b + 1] } else { n };
        let run = &order[starts[b]..end];
        for &idx in run {
            labels[idx] = b;
        }
        bin_centers.push(run.iter().map(|&i| scores[i]).sum::<f64>() / run.len() as f64);
    }
    Ok(Discretization {
        labels,
        bin_edges,
        bin_centers,
    })
}

/// Bin metadata sidecar (edges and centers) as JSON.
pub fn write_bins(path: &Path, bins: &Discretization) -> Result<()> {
    #[derive(Serialize)]
    struct Sidecar<'a> {
        bin_edges: &'a [f64],
        bin_centers: &'a [f64],
    }
    let text = serde_json::to_string_pretty(&Sidecar {
        bin_edges: &bins.bin_edges,
        bin_centers: &bins.bin_centers,
    })?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSidecar {
    pub bin_edges: Vec<f64>,
    pub bin_centers: Vec<f64>,
}

pub fn read_bins(path: &Path) -> Result<BinSidecar> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec() -> SyntheticOrdinalSpec {
        SyntheticOrdinalSpec {
            num_classes: 5,
            feature_dim: 4,
            samples_per_class: 20,
            center_spacing: 1.0,
            noise_sigma: 0.0,
            neighbor_flip_prob: 0.0,
            seed: 7,
        }
    }

    #[test]
    fn noiseless_data_is_nearest_centroid_separable() {
        let (train, _) = generate_ordinal(&spec()).unwrap();
        let mut sums = vec![vec![0.0; 4]; 5];
        for (x, &l) in train.features.iter().zip(&train.labels) {
            for (s, v) in sums[l].iter_mut().zip(x) {
                *s += v / 20.0;
            }
        }
        for (x, &l) in train.features.iter().zip(&train.labels) {
            let nearest = (0..5)
                .min_by(|&a, &b| {
                    let da: f64 = sums[a].iter().zip(x).map(|(c, v)| (c - v).powi(2)).sum();
                    let db: f64 = sums[b].iter().zip(x).map(|(c, v)| (c - v).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            assert_eq!(nearest, l);
        }
    }

    #[test]
    fn flip_rate_matches_probability() {
        let s = SyntheticOrdinalSpec {
            samples_per_class: 2000,
            neighbor_flip_prob: 0.2,
            noise_sigma: 1.0,
            ..spec()
        };
        let ((train, truth), _) = generate_ordinal_with_truth(&s).unwrap();
        assert_eq!(train.len(), 10_000);
        let flipped = train.labels.iter().zip(&truth).filter(|(a, b)| a != b).count();
        let rate = flipped as f64 / train.len() as f64;
        assert!((rate - 0.2).abs() <= 0.02, "rate {rate}");
        assert!(train.labels.iter().zip(&truth).all(|(a, b)| a.abs_diff(*b) <= 1));
    }

    #[test]
    fn generation_is_deterministic_and_splits_differ() {
        let s = SyntheticOrdinalSpec { noise_sigma: 0.5, ..spec() };
        let a = generate_ordinal(&s).unwrap();
        let b = generate_ordinal(&s).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0.features, a.1.features);
    }

    #[test]
    fn class_means_increase_along_direction() {
        let s = SyntheticOrdinalSpec {
            noise_sigma: 0.1,
            feature_dim: 8,
            ..spec()
        };
        let (train, _) = generate_ordinal(&s).unwrap();
        // direction estimated from the extreme classes
        let mean = |c: usize| -> Vec<f64> {
            let rows: Vec<&Vec<f64>> = train.features.iter().zip(&train.labels).filter(|(_, &l)| l == c).map(|(x, _)| x).collect();
            (0..8).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64).collect()
        };
        let means: Vec<Vec<f64>> = (0..5).map(mean).collect();
        let dir: Vec<f64> = means[4].iter().zip(&means[0]).map(|(a, b)| a - b).collect();
        let proj: Vec<f64> = means.iter().map(|m| m.iter().zip(&dir).map(|(a, b)| a * b).sum()).collect();
        assert!(proj.windows(2).all(|w| w[0] < w[1]), "{proj:?}");
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate_ordinal(&SyntheticOrdinalSpec { neighbor_flip_prob: 0.5, ..spec() }).is_err());
        assert!(generate_ordinal(&SyntheticOrdinalSpec { num_classes: 1, ..spec() }).is_err());
    }

    #[test]
    fn csv_load_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "1.0,2.0,0\n3.0,4.0,1\n").unwrap();
        let schema = CsvSchema { num_classes: 2, has_header: false };
        let d = load_csv(&path, schema, Split::Train).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.features[1], vec![3.0, 4.0]);

        std::fs::write(&path, "1.0,0\n2.0,1\n3.0,7\n").unwrap();
        let err = load_csv(&path, CsvSchema { num_classes: 5, has_header: false }, Split::Train).unwrap_err();
        match err {
            Error::Validation { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }

        std::fs::write(&path, "a,b,label\n1.0,x,0\n").unwrap();
        let err = load_csv(&path, CsvSchema { num_classes: 5, has_header: true }, Split::Train).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn discretize_examples() {
        let scores: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let d = discretize_scores(&scores, 10).unwrap();
        assert_eq!(d.labels, (0..10).collect::<Vec<_>>());

        let d = discretize_scores(&[0.1, 0.2, 0.8, 0.9], 2).unwrap();
        assert_eq!(d.labels, vec![0, 0, 1, 1]);
        assert!((d.bin_centers[0] - 0.15).abs() < 1e-15 && (d.bin_centers[1] - 0.85).abs() < 1e-15);
        assert_eq!(d.assign(0.5), 0);
        assert_eq!(d.assign(0.85), 1);

        assert!(matches!(discretize_scores(&[1.0, 1.0, 1.0], 2), Err(Error::DegenerateBins { .. })));
    }

    #[test]
    fn ties_go_to_the_lower_bin() {
        let d = discretize_scores(&[1.0, 2.0, 2.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(d.labels, vec![0, 0, 0, 0, 1, 1]);
    }

    proptest! {
        #[test]
        fn csv_round_trip(rows in prop::collection::vec((prop::collection::vec(-1e6f64..1e6, 3), 0usize..4), 1..20)) {
            let (features, labels): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
            let data = Dataset::new(features, labels, 4, Split::Test).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rt.csv");
            write_csv(&path, &data).unwrap();
            let back = load_csv(&path, CsvSchema { num_classes: 4, has_header: true }, Split::Test).unwrap();
            prop_assert_eq!(back, data);
        }

        #[test]
        fn balanced_and_order_preserving(set in prop::collection::btree_set(-1000i32..1000, 10..80), bins in 2usize..10) {
            let scores: Vec<f64> = set.iter().rev().map(|&v| v as f64 / 7.0).collect();
            prop_assume!(scores.len() >= bins);
            let d = discretize_scores(&scores, bins).unwrap();
            let mut counts = vec![0usize; bins];
            for &l in &d.labels { counts[l] += 1; }
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            prop_assert!(hi - lo <= 1, "{:?}", counts);
            for i in 0..scores.len() {
                for j in 0..scores.len() {
                    if scores[i] <= scores[j] { prop_assert!(d.labels[i] <= d.labels[j]); }
                }
                prop_assert_eq!(d.assign(scores[i]), d.labels[i]);
            }
        }
    }
}
