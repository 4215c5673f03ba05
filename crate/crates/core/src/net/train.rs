//! Minibatch SGD with momentum, the jump-start schedule, λ calibration and
//! per-epoch ground-distance re-estimation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::history::{EpochRecord, History, LambdaCalibration};
use super::mlp::{Head, HeadOutput, Layer, Mlp};
use super::objective::{sample_loss, LossKind, Phase, SinkhornParams};
use crate::data::Dataset;
use crate::error::{check_len, Error, Result};
use crate::ground_distance::{estimate_ground_distance, ordinal_matrix, sdd, CentroidAccumulator, GroundMatrix};
use crate::losses::{cross_entropy_from_logits, hybrid_regularizer, HybridParams, Target};
use crate::metrics::{aem_aeo, predict_class};

/// Ratio of mean cross-entropy to the λ-weighted regularizer targeted by
/// automatic λ selection.
pub const DEFAULT_LAMBDA_RATIO: f64 = 3.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LambdaMode {
    Fixed { lambda: f64 },
    /// Choose λ once, after jump-start, so that mean XE / (λ·|mean reg|) = `target`.
    AutoRatio { target: f64 },
}

impl Default for LambdaMode {
    fn default() -> Self {
        LambdaMode::AutoRatio {
            target: DEFAULT_LAMBDA_RATIO,
        }
    }
}

/// Where the ground-distance matrix comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DistanceSource {
    /// `|i − j|`, optionally divided by `C − 1`.
    Ordinal { normalize: bool },
    /// Re-estimated from the network's own features at every epoch boundary.
    Learned,
    External(GroundMatrix),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss_kind: LossKind,
    pub lambda_mode: LambdaMode,
    pub jump_start_epochs: usize,
    /// ω, μ and log-ε of the hybrid loss; λ comes from `lambda_mode`.
    pub hybrid: HybridParams,
    pub weight_decay: f64,
    pub sinkhorn: SinkhornParams,
    /// Norm order for centroid distances.
    pub norm_order: f64,
    pub sdd_include_diagonal: bool,
    /// Seed for minibatch shuffling.
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 10f64.powf(-2.5),
            momentum: 0.98,
            epochs: 30,
            batch_size: 32,
            loss_kind: LossKind::Xe,
            lambda_mode: LambdaMode::default(),
            jump_start_epochs: 4,
            hybrid: HybridParams::xemd1(0.0),
            weight_decay: 0.0,
            sinkhorn: SinkhornParams::default(),
            norm_order: 2.0,
            sdd_include_diagonal: true,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults with the ω/μ preset that belongs to `kind`.
    pub fn for_kind(kind: LossKind) -> Self {
        TrainConfig {
            loss_kind: kind,
            hybrid: kind.default_hybrid(),
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidInput(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidInput("weight_decay must be >= 0".into()));
        }
        match self.lambda_mode {
            LambdaMode::Fixed { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
            }
            LambdaMode::AutoRatio { target } if !(target > 0.0 && target.is_finite()) => {
                return Err(Error::InvalidInput(format!("lambda ratio target must be > 0, got {target}")));
            }
            _ => {}
        }
        HybridParams {
            lambda: 0.0,
            ..self.hybrid
        }
        .validate()?;
        if !(self.sinkhorn.entropic_reg > 0.0) || self.sinkhorn.iters == 0 {
            return Err(Error::InvalidInput("sinkhorn needs entropic_reg > 0 and iters >= 1".into()));
        }
        if !(self.norm_order >= 1.0) {
            return Err(Error::InvalidInput("norm_order must be >= 1".into()));
        }
        Ok(())
    }
}

/// Network parameters plus optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub net: Mlp,
    pub velocity: Vec<Layer>,
    /// Completed training epochs.
    pub epoch: usize,
    pub current_d: Option<GroundMatrix>,
}

impl ModelState {
    pub fn new(net: Mlp) -> Self {
        let velocity = net.zeros_like();
        ModelState {
            net,
            velocity,
            epoch: 0,
            current_d: None,
        }
    }
}

/// `v ← m·v − lr·g`, `θ ← θ + v`.
pub fn sgd_momentum_step(model: &mut ModelState, grads: &[Layer], learning_rate: f64, momentum: f64) {
    for ((layer, vel), grad) in model.net.layers_mut().iter_mut().zip(&mut model.velocity).zip(grads) {
        for ((p, v), g) in layer.params_mut().zip(vel.params_mut()).zip(grad.params()) {
            *v = momentum * *v - learning_rate * g;
            *p += *v;
        }
    }
}

/// Class decoded from a forward pass: argmax for a softmax head, the rounded
/// and clamped output for a linear head.
pub fn decode_class(output: &HeadOutput, num_classes: usize) -> usize {
    match output {
        HeadOutput::Probabilities(p) => predict_class(p),
        HeadOutput::Scalar(y) => {
            let top = (num_classes - 1) as f64;
            let r = y.round();
            if r.is_nan() {
                0
            } else {
                r.clamp(0.0, top) as usize
            }
        }
    }
}

pub fn predict_labels(net: &Mlp, data: &Dataset) -> Result<Vec<usize>> {
    data.features
        .iter()
        .map(|x| Ok(decode_class(&net.forward(x)?.output, data.num_classes)))
        .collect()
}

/// Runs the feature tap over `data` and accumulates class centroids.
pub fn accumulate_dataset_features(net: &Mlp, data: &Dataset) -> Result<CentroidAccumulator> {
    let mut acc = CentroidAccumulator::new(data.num_classes, net.config().feature_dim());
    for (x, &label) in data.features.iter().zip(&data.labels) {
        acc.accumulate(net.forward(x)?.features(), label)?;
    }
    Ok(acc)
}

fn fixed_ground(source: &DistanceSource, num_classes: usize) -> Result<Option<GroundMatrix>> {
    match source {
        DistanceSource::Ordinal { normalize } => {
            let d = ordinal_matrix(num_classes)?;
            Ok(Some(if *normalize { d.scaled(1.0 / (num_classes - 1) as f64)? } else { d }))
        }
        DistanceSource::Learned => Ok(None),
        DistanceSource::External(d) => {
            check_len("external ground matrix", num_classes, d.num_classes())?;
            Ok(Some(d.clone()))
        }
    }
}

fn check_compatible(net: &Mlp, data: &Dataset, kind: LossKind) -> Result<()> {
    let cfg = net.config();
    check_len("dataset features", cfg.input_dim(), data.feature_dim())?;
    match (cfg.head, kind) {
        (Head::Linear, LossKind::Reg) => Ok(()),
        (Head::Linear, _) => Err(Error::InvalidInput(format!("{kind} needs a softmax head"))),
        (Head::Softmax, LossKind::Reg) => Err(Error::InvalidInput("REG needs a linear head".into())),
        (Head::Softmax, _) => check_len("softmax classes", data.num_classes, cfg.output_dim()),
    }
}

/// Trains for `cfg.epochs` epochs and records one history row per epoch.
///
/// Epoch numbering continues from `model.epoch`, so jump-start applies to the
/// first `jump_start_epochs` epochs of the model's life.
pub fn train(
    mut model: ModelState,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
    source: &DistanceSource,
) -> Result<(ModelState, History)> {
    cfg.validate()?;
    check_compatible(&model.net, train_set, cfg.loss_kind)?;
    if let Some(test) = test_set {
        check_compatible(&model.net, test, cfg.loss_kind)?;
        check_len("test classes", train_set.num_classes, test.num_classes)?;
    }
    let num_classes = train_set.num_classes;
    let learned = matches!(source, DistanceSource::Learned);
    let mut ground = match fixed_ground(source, num_classes)? {
        Some(d) => Some(d),
        None => model.current_d.clone(),
    };
    if let Some(d) = &ground {
        check_len("ground matrix classes", num_classes, d.num_classes())?;
    }
    let needs_ground = cfg.loss_kind.uses_ground_matrix();
    if needs_ground && ground.is_none() && !learned {
        return Err(Error::InvalidInput(format!("{} needs a ground matrix", cfg.loss_kind)));
    }

    let mut lambda: Option<f64> = match cfg.lambda_mode {
        LambdaMode::Fixed { lambda } => Some(lambda),
        LambdaMode::AutoRatio { .. } => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut acc = CentroidAccumulator::new(num_classes, model.net.config().feature_dim());
    let mut history = History::default();
    // (p, label, XE) of the latest epoch's forward passes, kept while λ
    // still has to be chosen
    let mut epoch_probs: Vec<(Vec<f64>, usize, f64)> = Vec::new();

    for _ in 0..cfg.epochs {
        let epoch = model.epoch;
        let jump = epoch < cfg.jump_start_epochs;

        if cfg.loss_kind.is_hybrid() && !jump && lambda.is_none() {
            let d = ground
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("no ground matrix available for lambda calibration".into()))?;
            if epoch_probs.is_empty() {
                epoch_probs = prediction_pass(&model.net, train_set)?;
            }
            let cal = calibrate_lambda(&epoch_probs, d, cfg, epoch)?;
            lambda = Some(cal.lambda);
            // signed terms nearly cancel when D carries little structure
            if cal.mean_unit_reg.abs() < 0.01 * cal.mean_xe {
                history.warnings.push(format!(
                    "epoch {}: mean regularizer {:.3e} is tiny next to mean XE {:.3}; lambda = {:.3e} may overwhelm training",
                    epoch + 1,
                    cal.mean_unit_reg,
                    cal.mean_xe,
                    cal.lambda
                ));
            }
            history.calibration = Some(cal);
            epoch_probs = Vec::new();
        }
        let keep_probs = cfg.loss_kind.is_hybrid() && lambda.is_none();
        epoch_probs.clear();

        let phase = match cfg.loss_kind {
            LossKind::Xe => Phase::CrossEntropy,
            LossKind::Reg => Phase::Regression,
            LossKind::Emd => Phase::OrderedEmd,
            LossKind::Xemd1 | LossKind::Xemd2 => match (&ground, jump) {
                (Some(d), false) => Phase::Hybrid {
                    lambda: lambda.unwrap_or(0.0),
                    params: cfg.hybrid,
                    ground: d,
                },
                _ => Phase::CrossEntropy,
            },
            LossKind::Aemd => match &ground {
                Some(d) if !(learned && jump) => Phase::Sinkhorn {
                    params: cfg.sinkhorn,
                    ground: d,
                },
                _ => Phase::CrossEntropy,
            },
        };
        let epoch_lambda = match phase {
            Phase::Hybrid { lambda, .. } => lambda,
            _ => 0.0,
        };

        order.shuffle(&mut rng);
        let (mut xe_sum, mut reg_sum) = (0.0, 0.0);
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = model.net.zeros_like();
            for &idx in batch {
                let x = &train_set.features[idx];
                let label = train_set.labels[idx];
                let pass = model.net.forward(x)?;
                acc.accumulate(pass.features(), label)?;
                let loss = sample_loss(&pass, Target::new(label, num_classes)?, phase)?;
                if !loss.objective.is_finite() || loss.grad_logits.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NumericalFailure(format!(
                        "non-finite loss at epoch {}, batch {batch_no}, sample {idx} (xe = {}, reg = {})",
                        epoch + 1,
                        loss.xe,
                        loss.reg
                    )));
                }
                xe_sum += loss.xe;
                reg_sum += loss.reg;
                if keep_probs {
                    if let Some(p) = pass.probabilities() {
                        epoch_probs.push((p.to_vec(), label, loss.xe));
                    }
                }
                let sample_grads = model.net.backward(&pass, &loss.grad_logits, 0.0)?;
                for (g, s) in grads.iter_mut().zip(&sample_grads) {
                    for (a, b) in g.params_mut().zip(s.params()) {
                        *a += b;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for (g, layer) in grads.iter_mut().zip(model.net.layers()) {
                for (gv, p) in g.params_mut().zip(layer.params()) {
                    *gv = *gv * scale + 2.0 * cfg.weight_decay * p;
                }
            }
            sgd_momentum_step(&mut model, &grads, cfg.learning_rate, cfg.momentum);
        }
        model.epoch += 1;

        let sdd_value = match estimate_ground_distance(&acc, cfg.norm_order, if learned { ground.as_ref() } else { None }) {
            Ok(est) => {
                let value = sdd(&est.raw, cfg.sdd_include_diagonal);
                if learned {
                    ground = Some(est.learned.clone());
                }
                if !est.missing.is_empty() {
                    history.warnings.push(format!(
                        "epoch {}: classes {:?} had no features; reused previous ground distances",
                        epoch + 1,
                        est.missing
                    ));
                }
                history.last_estimate = Some(est);
                (acc.missing_classes().is_empty()).then_some(value)
            }
            Err(e @ Error::InsufficientData { .. }) if learned => return Err(e),
            Err(Error::InsufficientData { .. }) => None,
            Err(e) => return Err(e),
        };
        history.skipped_features += acc.skipped();
        acc.reset();

        let n = train_set.len() as f64;
        let train_pred = predict_labels(&model.net, train_set)?;
        let (train_aem, _) = aem_aeo(&train_pred, &train_set.labels)?;
        let (test_aem, test_aeo) = match test_set {
            Some(test) => {
                let pred = predict_labels(&model.net, test)?;
                let (a, b) = aem_aeo(&pred, &test.labels)?;
                (Some(a), Some(b))
            }
            None => (None, None),
        };
        history.records.push(EpochRecord {
            epoch: epoch + 1,
            loss_xe: xe_sum / n,
            loss_reg: if epoch_lambda == 0.0 && cfg.loss_kind.is_hybrid() { 0.0 } else { reg_sum / n },
            lambda: epoch_lambda,
            train_aem,
            test_aem,
            test_aeo,
            sdd: sdd_value,
        });
    }
    model.current_d = ground;
    Ok((model, history))
}

fn prediction_pass(net: &Mlp, data: &Dataset) -> Result<Vec<(Vec<f64>, usize, f64)>> {
    data.features
        .iter()
        .zip(&data.labels)
        .map(|(x, &l)| {
            let pass = net.forward(x)?;
            let p = pass
                .probabilities()
                .ok_or_else(|| Error::InvalidInput("hybrid loss needs a softmax head".into()))?;
            let xe = cross_entropy_from_logits(&pass.logits, Target::new(l, data.num_classes)?)?.value;
            Ok((p.to_vec(), l, xe))
        })
        .collect()
}

fn calibrate_lambda(
    probs: &[(Vec<f64>, usize, f64)],
    ground: &GroundMatrix,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<LambdaCalibration> {
    let LambdaMode::AutoRatio { target } = cfg.lambda_mode else {
        return Err(Error::InvalidInput("lambda calibration without auto_ratio mode".into()));
    };
    let n = probs.len() as f64;
    let c = ground.num_classes();
    let (mut xe, mut reg) = (0.0, 0.0);
    for (p, label, sample_xe) in probs {
        let t = Target::new(*label, c)?;
        xe += sample_xe;
        reg += hybrid_regularizer(p, t, ground, &cfg.hybrid)?.value;
    }
    let (mean_xe, mean_reg) = (xe / n, reg / n);
    if !(mean_reg.abs() > 1e-12) || !mean_xe.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "cannot calibrate lambda: mean XE {mean_xe}, mean regularizer {mean_reg}"
        )));
    }
    let lambda = mean_xe / (target * mean_reg.abs());
    Ok(LambdaCalibration {
        epoch,
        mean_xe,
        mean_unit_reg: mean_reg,
        lambda,
    })
}
