//! Command implementations. Each returns its artifacts so tests can drive
//! the same code paths as the binary.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::config::{LoadedData, Metric, RunConfig};
use super::io::{class_labels, format_significant, read_rows, write_labeled_matrix, write_rows, SddRow};
use crate::data::{Dataset, Split};
use crate::error::{check_len, Error, Result};
use crate::ground_distance::{
    estimate_ground_distance, raw_distance_matrix, sdd, DistanceEstimate, GroundMatrix, Provenance,
};
use crate::losses::{cdf, emd2_ordered, emd_single_label, Target};
use crate::matrix::Matrix;
use crate::metrics::{expected_score, spearman_rho, EvalReport};
use crate::net::{
    accumulate_dataset_features, load_checkpoint, predict_labels, read_history, save_checkpoint, train, write_history,
    Head, HeadOutput, History, LambdaCalibration, Mlp, ModelState,
};
use crate::ot_oracle::emd_exact;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const LEARNED_D_FILE: &str = "ground_distance.csv";
pub const LAMBDA_FILE: &str = "lambda.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const EVAL_FILE: &str = "eval.jsonl";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub struct TrainOutcome {
    pub model: ModelState,
    pub history: History,
    pub files: Vec<PathBuf>,
}

/// Trains per `cfg` and writes the checkpoint, history, resolved config and,
/// when they exist, the learned D and the λ calibration.
pub fn run_train(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = cfg.load_data()?;
    let net = Mlp::new(cfg.net_config(data.train.feature_dim()))?;
    let source = cfg.distance_source()?;
    let (model, history) = train(ModelState::new(net), &data.train, data.test.as_ref(), &cfg.train_config(), &source)?;

    create_dir(out)?;
    let mut files = Vec::new();
    let mut emit = |name: &str| {
        let p = out.join(name);
        files.push(p.clone());
        p
    };
    save_checkpoint(&emit(CHECKPOINT_FILE), &model)?;
    write_history(&emit(HISTORY_FILE), &history.records)?;
    write_text(&emit(CONFIG_FILE), &cfg.to_toml()?)?;
    if let Some(d) = model.current_d.as_ref().filter(|d| d.provenance() == Provenance::Learned) {
        write_labeled_matrix(&emit(LEARNED_D_FILE), &class_labels(d.num_classes()), d.matrix())?;
    }
    if let Some(cal) = &history.calibration {
        write_text(&emit(LAMBDA_FILE), &serde_json::to_string_pretty(cal)?)?;
    }
    for w in &history.warnings {
        eprintln!("warning: {w}");
    }
    Ok(TrainOutcome { model, history, files })
}

pub fn read_lambda(path: &Path) -> Result<LambdaCalibration> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn check_model_data(model: &ModelState, data: &Dataset) -> Result<()> {
    let cfg = model.net.config();
    check_len("dataset features vs checkpoint input", cfg.input_dim(), data.feature_dim())?;
    if cfg.head == Head::Softmax {
        check_len("dataset classes vs checkpoint outputs", cfg.output_dim(), data.num_classes)?;
    }
    if let Some(d) = &model.current_d {
        check_len("dataset classes vs checkpoint ground matrix", d.num_classes(), data.num_classes)?;
    }
    Ok(())
}

/// AEM/AEO and confusion are always reported. ρ needs `bin_centers`; SDD
/// needs every class present. Either is left out unless listed in `metrics`.
pub fn evaluate(model: &ModelState, data: &Dataset, bin_centers: Option<&[f64]>, metrics: &[Metric]) -> Result<EvalReport> {
    check_model_data(model, data)?;
    let predicted = predict_labels(&model.net, data)?;
    let mut report = EvalReport::from_predictions(&predicted, &data.labels, data.num_classes)?;
    if let (Some(centers), true) = (bin_centers, metrics.contains(&Metric::Spearman)) {
        check_len("bin centers", data.num_classes, centers.len())?;
        let mut scores = Vec::with_capacity(data.len());
        for x in &data.features {
            scores.push(match model.net.forward(x)?.output {
                HeadOutput::Probabilities(p) => expected_score(&p, centers)?,
                HeadOutput::Scalar(y) => y,
            });
        }
        let truth: Vec<f64> = data.labels.iter().map(|&l| centers[l]).collect();
        report.spearman_rho = Some(spearman_rho(&scores, &truth)?);
    }
    if metrics.contains(&Metric::Sdd) && model.net.config().head == Head::Softmax {
        let acc = accumulate_dataset_features(&model.net, data)?;
        if acc.missing_classes().is_empty() {
            report.sdd = Some(sdd(&raw_distance_matrix(&acc, 2.0)?, true));
        }
    }
    Ok(report)
}

/// Evaluates a checkpoint and appends the report to `out/eval.jsonl`.
pub fn run_eval(checkpoint: &Path, data: &Dataset, bin_centers: Option<&[f64]>, metrics: &[Metric], out: &Path) -> Result<EvalReport> {
    let model = load_checkpoint(checkpoint)?;
    let report = evaluate(&model, data, bin_centers, metrics)?;
    create_dir(out)?;
    let path = out.join(EVAL_FILE);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    report.write_jsonl(file)?;
    Ok(report)
}

pub struct GdOutcome {
    pub estimate: DistanceEstimate,
    pub sdd: f64,
    pub files: Vec<PathBuf>,
}

pub const DBAR_FILE: &str = "dbar.csv";
pub const B_FILE: &str = "b.csv";
pub const D_FILE: &str = "d.csv";
pub const SDD_FILE: &str = "sdd.csv";

/// Feature-tap pass over `data`, then D̄, B, D and SDD as labeled CSVs.
pub fn run_gd_matrix(checkpoint: &Path, data: &Dataset, norm_order: f64, include_diagonal: bool, out: &Path) -> Result<GdOutcome> {
    let model = load_checkpoint(checkpoint)?;
    if model.net.config().head != Head::Softmax {
        return Err(Error::InvalidInput("gd-matrix needs a checkpoint with a softmax head".into()));
    }
    check_model_data(&model, data)?;
    let acc = accumulate_dataset_features(&model.net, data)?;
    let estimate = estimate_ground_distance(&acc, norm_order, None)?;
    let value = sdd(&estimate.raw, include_diagonal);

    create_dir(out)?;
    let labels = class_labels(data.num_classes);
    let mut files = Vec::new();
    for (name, m) in [
        (DBAR_FILE, &estimate.raw),
        (B_FILE, &estimate.percentile),
        (D_FILE, estimate.learned.matrix()),
    ] {
        let p = out.join(name);
        write_labeled_matrix(&p, &labels, m)?;
        files.push(p);
    }
    let p = out.join(SDD_FILE);
    write_rows(
        &p,
        &[SddRow {
            statistic: "SDD".into(),
            value,
        }],
    )?;
    files.push(p);
    Ok(GdOutcome {
        estimate,
        sdd: value,
        files,
    })
}

pub fn read_sdd(path: &Path) -> Result<f64> {
    let rows: Vec<SddRow> = read_rows(path)?;
    rows.iter()
        .find(|r| r.statistic == "SDD")
        .map(|r| r.value)
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "no SDD row".into(),
        })
}

pub fn sdd_display(value: f64) -> String {
    format_significant(value, 4)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCheckOptions {
    pub min_classes: usize,
    pub max_classes: usize,
    pub trials: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Adds 1e-3 to every closed-form value, to prove failures are caught.
    pub inject_failure: bool,
}

impl Default for OracleCheckOptions {
    fn default() -> Self {
        OracleCheckOptions {
            min_classes: 2,
            max_classes: 8,
            trials: 500,
            seed: 0,
            tolerance: 1e-9,
            inject_failure: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityResult {
    pub identity: String,
    pub cases: usize,
    pub max_abs_error: f64,
    pub passed: bool,
}

/// A failing instance, enough to reproduce the check by hand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureDump {
    pub identity: String,
    pub p: Vec<f64>,
    pub t: Vec<f64>,
    pub d: Vec<Vec<f64>>,
    pub closed_form: f64,
    pub oracle: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCheckReport {
    pub results: Vec<IdentityResult>,
    pub failures: Vec<FailureDump>,
    pub warnings: Vec<String>,
}

impl OracleCheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<22} {:>7} {:>14}  status\n", "identity", "cases", "max |error|");
        for r in &self.results {
            out.push_str(&format!(
                "{:<22} {:>7} {:>14.3e}  {}\n",
                r.identity,
                r.cases,
                r.max_abs_error,
                if r.passed { "PASS" } else { "FAIL" }
            ));
        }
        out
    }
}

/// Uniform draw from the probability simplex.
pub fn random_simplex(rng: &mut impl Rng, c: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..c).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Symmetric, zero-diagonal, entries uniform in [0, 1).
pub fn random_ground_matrix(rng: &mut impl Rng, c: usize) -> Result<GroundMatrix> {
    let mut m = Matrix::zeros(c, c);
    for i in 0..c {
        for j in (i + 1)..c {
            let v: f64 = rng.random();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    GroundMatrix::new(m, Provenance::External)
}

struct Tally {
    result: IdentityResult,
    first_failure: Option<FailureDump>,
}

impl Tally {
    fn new(identity: &str) -> Self {
        Tally {
            result: IdentityResult {
                identity: identity.into(),
                cases: 0,
                max_abs_error: 0.0,
                passed: true,
            },
            first_failure: None,
        }
    }

    fn record(&mut self, tol: f64, closed_form: f64, oracle: f64, instance: impl FnOnce() -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>)) {
        let err = (closed_form - oracle).abs();
        self.result.cases += 1;
        self.result.max_abs_error = self.result.max_abs_error.max(err);
        if !(err <= tol) {
            self.result.passed = false;
            if self.first_failure.is_none() {
                let (p, t, d) = instance();
                self.first_failure = Some(FailureDump {
                    identity: self.result.identity.clone(),
                    p,
                    t,
                    d,
                    closed_form,
                    oracle,
                });
            }
        }
    }
}

/// Cross-checks the closed forms against the exact transport solver:
/// `Σ|CDF(p) − CDF(t)|` at cost `|i − j|`, `Σ p_i D_{i,k}` for one-hot
/// targets, and `EMD²(one-hot j, k) = |j − k|`.
pub fn run_oracle_check(opts: &OracleCheckOptions) -> Result<OracleCheckReport> {
    if opts.min_classes < 2 || opts.min_classes > opts.max_classes {
        return Err(Error::InvalidInput(format!(
            "class range {}..={} must start at >= 2 and be nonempty",
            opts.min_classes, opts.max_classes
        )));
    }
    if opts.max_classes > crate::ot_oracle::MAX_ORACLE_SIZE {
        return Err(Error::InvalidInput(format!(
            "at most {} classes are supported",
            crate::ot_oracle::MAX_ORACLE_SIZE
        )));
    }
    let mut warnings = Vec::new();
    if opts.trials == 0 {
        warnings.push("trials = 0: no cases were checked, the pass is vacuous".to_string());
    }
    let bump = if opts.inject_failure { 1e-3 } else { 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut ordered = Tally::new("ordered_l1_closed_form");
    let mut single = Tally::new("single_label");
    let mut one_hot = Tally::new("one_hot_displacement");
    let rows = |m: &Matrix| m.to_rows();

    for c in opts.min_classes..=opts.max_classes {
        let ordinal = Matrix::from_fn(c, c, |i, j| i.abs_diff(j) as f64);
        for _ in 0..opts.trials {
            let p = random_simplex(&mut rng, c);
            let t = random_simplex(&mut rng, c);
            let (cp, ct) = (cdf(&p), cdf(&t));
            let closed = cp.iter().zip(&ct).map(|(a, b)| (a - b).abs()).sum::<f64>() + bump;
            let oracle = emd_exact(&p, &t, &ordinal)?;
            ordered.record(opts.tolerance, closed, oracle, || (p.clone(), t.clone(), rows(&ordinal)));

            let p = random_simplex(&mut rng, c);
            let k = rng.random_range(0..c);
            let target = Target::new(k, c)?;
            let d = random_ground_matrix(&mut rng, c)?;
            let closed = emd_single_label(&p, target, &d)?.value + bump;
            let oracle = emd_exact(&p, &target.one_hot(), d.matrix())?;
            single.record(opts.tolerance, closed, oracle, || (p.clone(), target.one_hot(), rows(d.matrix())));
        }
        if opts.trials > 0 {
            for j in 0..c {
                for k in 0..c {
                    let p = Target::new(j, c)?.one_hot();
                    let target = Target::new(k, c)?;
                    let closed = emd2_ordered(&p, target)?.value + bump;
                    // exact: no tolerance for this identity
                    one_hot.record(0.0, closed, j.abs_diff(k) as f64, || (p.clone(), target.one_hot(), rows(&ordinal)));
                }
            }
        }
    }

    let tallies = [ordered, single, one_hot];
    let failures = tallies.iter().filter_map(|t| t.first_failure.clone()).collect();
    Ok(OracleCheckReport {
        results: tallies.into_iter().map(|t| t.result).collect(),
        failures,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedRow {
    pub method: String,
    pub config: String,
    pub epoch: usize,
    #[serde(rename = "train_AEM")]
    pub train_aem: f64,
    #[serde(rename = "test_AEM")]
    pub test_aem: Option<f64>,
    #[serde(rename = "test_AEO")]
    pub test_aeo: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub config: String,
    /// Split the final metrics were measured on.
    pub split: String,
    #[serde(rename = "AEM")]
    pub aem: f64,
    #[serde(rename = "AEO")]
    pub aeo: f64,
    pub spearman_rho: Option<f64>,
}

pub const COMBINED_FILE: &str = "combined.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

pub struct CompareOutcome {
    pub combined: Vec<CombinedRow>,
    pub summary: Vec<SummaryRow>,
}

/// Every `*.toml` in `dir`, sorted by file name.
pub fn config_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "toml") {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no *.toml configs in {}", dir.display())));
    }
    Ok(paths)
}

/// Trains every config in `dir` (or reuses `out/<name>/` artifacts when
/// `reuse` is set), then writes per-epoch curves and a final summary.
pub fn run_compare(dir: &Path, out: &Path, seed: Option<u64>, reuse: bool) -> Result<CompareOutcome> {
    let mut runs = Vec::new();
    for path in config_paths(dir)? {
        let mut cfg = RunConfig::load(&path)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        runs.push((name, cfg));
    }
    let first = &runs[0].1.data;
    if let Some((name, _)) = runs.iter().find(|(_, c)| &c.data != first) {
        return Err(Error::Config(format!(
            "config {name} uses a different dataset than {}; compare needs identical [data] sections",
            runs[0].0
        )));
    }
    let data = runs[0].1.load_data()?;

    let mut combined = Vec::new();
    let mut summary = Vec::new();
    for (name, cfg) in &runs {
        let run_dir = out.join(name);
        let (model, records) = if reuse && run_dir.join(CHECKPOINT_FILE).exists() && run_dir.join(HISTORY_FILE).exists() {
            (load_checkpoint(&run_dir.join(CHECKPOINT_FILE))?, read_history(&run_dir.join(HISTORY_FILE))?)
        } else {
            let o = run_train(cfg, &run_dir)?;
            (o.model, o.history.records)
        };
        let method = cfg.train.loss_kind.name().to_string();
        combined.extend(records.iter().map(|r| CombinedRow {
            method: method.clone(),
            config: name.clone(),
            epoch: r.epoch,
            train_aem: r.train_aem,
            test_aem: r.test_aem,
            test_aeo: r.test_aeo,
        }));
        summary.push(summarize(&model, &data, cfg, &method, name)?);
    }
    create_dir(out)?;
    write_rows(&out.join(COMBINED_FILE), &combined)?;
    write_rows(&out.join(SUMMARY_FILE), &summary)?;
    Ok(CompareOutcome { combined, summary })
}

fn summarize(model: &ModelState, data: &LoadedData, cfg: &RunConfig, method: &str, name: &str) -> Result<SummaryRow> {
    let (split, set) = match &data.test {
        Some(t) => ("test", t),
        None => ("train", &data.train),
    };
    let centers = data.bins.as_ref().map(|b| b.bin_centers.as_slice());
    let report = evaluate(model, set, centers, &cfg.metrics)?;
    Ok(SummaryRow {
        method: method.into(),
        config: name.into(),
        split: split.into(),
        aem: report.aem,
        aeo: report.aeo,
        spearman_rho: report.spearman_rho,
    })
}

pub fn split_from_name(name: &str) -> Result<Split> {
    match name {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(Error::InvalidInput(format!("unknown split {other:?} (expected train or test)"))),
    }
}
