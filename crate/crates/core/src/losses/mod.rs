//! Loss functions over a predicted class distribution and their gradients.
//!
//! Every loss here is differentiated with respect to the post-softmax
//! probabilities `p`; composing with the softmax Jacobian is the network's job
//! (see [`crate::net`]). The functions take plain slices so callers (and
//! finite-difference checks) may evaluate them slightly off the simplex.

mod sinkhorn;

use serde::{Deserialize, Serialize};

pub use sinkhorn::{sinkhorn_emd, sinkhorn_transport, smooth_one_hot, SinkhornPlan, TARGET_SMOOTHING};

use crate::error::{check_len, Error, Result};
use crate::ground_distance::GroundMatrix;

/// Absolute tolerance on the total mass of a [`ProbDist`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Default offset added to probabilities before taking a logarithm.
pub const DEFAULT_LOG_EPSILON: f64 = 1e-6;

/// A probability vector over `C` classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empty probability vector".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "probability entry {v} is negative or not finite"
            )));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(ProbDist(values))
    }

    pub fn one_hot(class: usize, num_classes: usize) -> Result<Self> {
        let t = Target::new(class, num_classes)?;
        Ok(ProbDist(t.one_hot()))
    }

    pub fn uniform(num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidInput("zero classes".into()));
        }
        Ok(ProbDist(vec![1.0 / num_classes as f64; num_classes]))
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for ProbDist {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for ProbDist {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ProbDist {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ProbDist::new(values)
    }
}

impl From<ProbDist> for Vec<f64> {
    fn from(p: ProbDist) -> Self {
        p.0
    }
}

/// Single-label ground truth: class `k` out of `C`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    class: usize,
    num_classes: usize,
}

impl Target {
    pub fn new(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::InvalidInput(format!(
                "class index {class} out of range for {num_classes} classes"
            )));
        }
        Ok(Target { class, num_classes })
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.num_classes];
        t[self.class] = 1.0;
        t
    }
}

/// Loss value together with `∂L/∂p`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Weights of the EMD²-regularized cross-entropy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridParams {
    /// Regularizer weight.
    pub lambda: f64,
    /// Exponent applied to ground distances.
    pub omega: f64,
    /// Additive ground-distance bias; negative values reward mass near the truth.
    pub mu: f64,
    pub log_epsilon: f64,
}

impl HybridParams {
    /// ω = 1, μ = −0.5.
    pub fn xemd1(lambda: f64) -> Self {
        HybridParams {
            lambda,
            omega: 1.0,
            mu: -0.5,
            log_epsilon: DEFAULT_LOG_EPSILON,
        }
    }

    /// ω = 2, μ = −0.25.
    pub fn xemd2(lambda: f64) -> Self {
        HybridParams {
            lambda,
            omega: 2.0,
            mu: -0.25,
            log_epsilon: DEFAULT_LOG_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::InvalidInput(format!("omega must be > 0, got {}", self.omega)));
        }
        if !self.mu.is_finite() {
            return Err(Error::InvalidInput("mu must be finite".into()));
        }
        if !(self.log_epsilon > 0.0) {
            return Err(Error::InvalidInput(format!(
                "log_epsilon must be > 0, got {}",
                self.log_epsilon
            )));
        }
        Ok(())
    }

    /// `D_{i,k}^ω + μ`, the per-class weight of the regularizer.
    pub fn class_weight(&self, distance: f64) -> f64 {
        distance.powf(self.omega) + self.mu
    }
}

impl Default for HybridParams {
    fn default() -> Self {
        HybridParams::xemd1(0.0)
    }
}

/// Cumulative sums of `p`.
pub fn cdf(p: &[f64]) -> Vec<f64> {
    p.iter()
        .scan(0.0, |acc, &v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

/// `−log(p_k + eps)`; only the true-class entry of the gradient is nonzero.
pub fn cross_entropy(p: &[f64], t: Target, eps: f64) -> Result<LossResult> {
    check_len("cross_entropy", t.num_classes(), p.len())?;
    let pk = p[t.class()] + eps;
    let mut grad = vec![0.0; p.len()];
    grad[t.class()] = -1.0 / pk;
    Ok(LossResult {
        value: -pk.ln(),
        grad,
    })
}

/// Cross-entropy computed directly from logits via log-sum-exp.
///
/// The gradient is with respect to the logits: `softmax(z) − t`.
pub fn cross_entropy_from_logits(logits: &[f64], t: Target) -> Result<LossResult> {
    check_len("cross_entropy_from_logits", t.num_classes(), logits.len())?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let log_norm = max + sum.ln();
    let mut grad: Vec<f64> = logits.iter().map(|z| (z - log_norm).exp()).collect();
    grad[t.class()] -= 1.0;
    Ok(LossResult {
        value: log_norm - logits[t.class()],
        grad,
    })
}

/// Squared error of a scalar regression output against the class index.
pub fn l2_regression(y: f64, t: Target) -> LossResult {
    let r = y - t.class() as f64;
    LossResult {
        value: r * r,
        grad: vec![2.0 * r],
    }
}

/// Squared EMD between ordered classes: `Σ_i (CDF_i(p) − CDF_i(t))²`.
///
/// `grad_n = 2 Σ_{m ≥ n} (CDF_m(p) − CDF_m(t))`, the suffix sums of the CDF
/// difference.
pub fn emd2_ordered(p: &[f64], t: Target) -> Result<LossResult> {
    check_len("emd2_ordered", t.num_classes(), p.len())?;
    let diff = cdf_difference(p, t);
    let value = diff.iter().map(|d| d * d).sum();
    let mut grad = vec![0.0; p.len()];
    let mut suffix = 0.0;
    for n in (0..p.len()).rev() {
        suffix += diff[n];
        grad[n] = 2.0 * suffix;
    }
    Ok(LossResult { value, grad })
}

/// The gradient of [`emd2_ordered`] written as the coefficient expansion
/// `2 (Σ_i (C−i+1)(p_i − t_i) − Σ_{i<n} (n−i)(p_i − t_i))` (1-based indices).
pub fn emd2_ordered_grad_expanded(p: &[f64], t: Target) -> Result<Vec<f64>> {
    check_len("emd2_ordered_grad_expanded", t.num_classes(), p.len())?;
    let c = p.len();
    let delta: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(i, &pi)| pi - if i == t.class() { 1.0 } else { 0.0 })
        .collect();
    // zero-based: weight of delta_i in the full sum is (C − i)
    let head: f64 = delta.iter().enumerate().map(|(i, d)| (c - i) as f64 * d).sum();
    Ok((0..c)
        .map(|n| {
            let tail: f64 = (0..n).map(|i| (n - i) as f64 * delta[i]).sum();
            2.0 * (head - tail)
        })
        .collect())
}

fn cdf_difference(p: &[f64], t: Target) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .enumerate()
        .map(|(i, &pi)| {
            acc += pi;
            acc - if i >= t.class() { 1.0 } else { 0.0 }
        })
        .collect()
}

/// Exact EMD for a one-hot target: every unit of mass travels to class `k`,
/// so the cost is `Σ_i p_i D_{i,k}`.
pub fn emd_single_label(p: &[f64], t: Target, d: &GroundMatrix) -> Result<LossResult> {
    check_len("emd_single_label", t.num_classes(), p.len())?;
    check_len("emd_single_label ground matrix", p.len(), d.num_classes())?;
    let k = t.class();
    let grad: Vec<f64> = (0..p.len()).map(|i| d.get(i, k)).collect();
    let value = p.iter().zip(&grad).map(|(pi, dik)| pi * dik).sum();
    Ok(LossResult { value, grad })
}

/// The EMD² regularizer `Σ_i p_i² (D_{i,k}^ω + μ)` without its λ weight.
pub fn hybrid_regularizer(p: &[f64], t: Target, d: &GroundMatrix, params: &HybridParams) -> Result<LossResult> {
    check_len("hybrid_regularizer", t.num_classes(), p.len())?;
    check_len("hybrid_regularizer ground matrix", p.len(), d.num_classes())?;
    let k = t.class();
    let mut value = 0.0;
    let grad = p
        .iter()
        .enumerate()
        .map(|(i, &pi)| {
            let w = params.class_weight(d.get(i, k));
            value += pi * pi * w;
            2.0 * pi * w
        })
        .collect();
    Ok(LossResult { value, grad })
}

/// Cross-entropy plus `λ Σ_i p_i² (D_{i,k}^ω + μ)`. `D` is a constant.
pub fn hybrid_loss(p: &[f64], t: Target, d: &GroundMatrix, params: &HybridParams) -> Result<LossResult> {
    params.validate()?;
    let mut out = cross_entropy(p, t, params.log_epsilon)?;
    let reg = hybrid_regularizer(p, t, d, params)?;
    let lambda = params.lambda;
    out.value += lambda * reg.value;
    for (g, r) in out.grad.iter_mut().zip(&reg.grad) {
        *g += lambda * r;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ground_distance::{ordinal_matrix, GroundMatrix, Provenance};
    use crate::matrix::Matrix;

    fn tgt(k: usize, c: usize) -> Target {
        Target::new(k, c).unwrap()
    }

    #[test]
    fn cross_entropy_uniform_two_class() {
        let r = cross_entropy(&[0.5, 0.5], tgt(0, 2), 0.0).unwrap();
        assert!((r.value - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(r.grad, vec![-2.0, 0.0]);
    }

    #[test]
    fn cross_entropy_perfect_prediction() {
        let r = cross_entropy(&[1.0, 0.0, 0.0], tgt(0, 3), 0.0).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn cross_entropy_with_epsilon_matches_fused_path() {
        let r = cross_entropy(&[0.2, 0.1, 0.7], tgt(2, 3), 1e-6).unwrap();
        assert!((r.value + 0.700001f64.ln()).abs() < 1e-15);
        let logits = [0.2f64.ln(), 0.1f64.ln(), 0.7f64.ln()];
        let fused = cross_entropy_from_logits(&logits, tgt(2, 3)).unwrap();
        assert!((fused.value + 0.7f64.ln()).abs() < 1e-12);
        assert!((fused.value - r.value).abs() < 2e-6);
    }

    #[test]
    fn cross_entropy_dimension_mismatch() {
        assert!(matches!(
            cross_entropy(&[0.5, 0.5], tgt(0, 3), 0.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn l2_regression_examples() {
        assert_eq!(l2_regression(3.0, tgt(3, 8)), LossResult { value: 0.0, grad: vec![0.0] });
        assert_eq!(l2_regression(2.5, tgt(3, 8)), LossResult { value: 0.25, grad: vec![-1.0] });
        assert_eq!(l2_regression(0.0, tgt(7, 8)), LossResult { value: 49.0, grad: vec![-14.0] });
    }

    #[test]
    fn emd2_identity_and_shifts() {
        let r = emd2_ordered(&[0.0, 1.0, 0.0], tgt(1, 3)).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grad.iter().all(|g| *g == 0.0));
        assert_eq!(emd2_ordered(&[0.0, 1.0, 0.0], tgt(0, 3)).unwrap().value, 1.0);
        assert_eq!(emd2_ordered(&[0.0, 0.0, 1.0], tgt(0, 3)).unwrap().value, 2.0);
    }

    #[test]
    fn emd2_two_forms_agree() {
        let p = [0.1, 0.2, 0.3, 0.4];
        let t = tgt(1, 4);
        // CDF(p) = [.1,.3,.6,1], CDF(t) = [0,1,1,1]
        let direct = 0.1f64.powi(2) + 0.7f64.powi(2) + 0.4f64.powi(2);
        let r = emd2_ordered(&p, t).unwrap();
        assert!((r.value - direct).abs() < 1e-12);
        let expanded = emd2_ordered_grad_expanded(&p, t).unwrap();
        for (a, b) in r.grad.iter().zip(&expanded) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_label_direct_evaluation() {
        let d = GroundMatrix::new(
            Matrix::from_rows(&[
                vec![0.0, 1.0, 0.2],
                vec![1.0, 0.0, 0.5],
                vec![0.2, 0.5, 0.0],
            ])
            .unwrap(),
            Provenance::External,
        )
        .unwrap();
        let r = emd_single_label(&[0.2, 0.5, 0.3], tgt(1, 3), &d).unwrap();
        assert!((r.value - 0.35).abs() < 1e-15);
        assert_eq!(r.grad, vec![1.0, 0.0, 0.5]);
        let zero = emd_single_label(&[0.0, 1.0, 0.0], tgt(1, 3), &d).unwrap();
        assert_eq!(zero.value, 0.0);
    }

    #[test]
    fn single_label_rejects_wrong_matrix_size() {
        let d = ordinal_matrix(4).unwrap();
        assert!(emd_single_label(&[0.5, 0.5, 0.0], tgt(0, 3), &d).is_err());
    }

    #[test]
    fn hybrid_rewards_concentration_on_truth() {
        let d = ordinal_matrix(4).unwrap();
        let params = HybridParams { lambda: 0.3, ..HybridParams::xemd1(0.0) };
        let p = ProbDist::one_hot(2, 4).unwrap();
        let r = hybrid_loss(&p, tgt(2, 4), &d, &params).unwrap();
        let xe = cross_entropy(&p, tgt(2, 4), params.log_epsilon).unwrap();
        assert!((r.value - (xe.value - 0.5 * 0.3)).abs() < 1e-15);
    }

    #[test]
    fn hybrid_with_zero_lambda_is_cross_entropy() {
        let d = ordinal_matrix(3).unwrap();
        let p = [0.2, 0.3, 0.5];
        let params = HybridParams::xemd2(0.0);
        let h = hybrid_loss(&p, tgt(1, 3), &d, &params).unwrap();
        let xe = cross_entropy(&p, tgt(1, 3), params.log_epsilon).unwrap();
        assert_eq!(h.value.to_bits(), xe.value.to_bits());
        for (a, b) in h.grad.iter().zip(&xe.grad) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn hybrid_params_validation() {
        assert!(HybridParams { omega: 0.0, ..HybridParams::default() }.validate().is_err());
        assert!(HybridParams { lambda: -1.0, ..HybridParams::default() }.validate().is_err());
        assert!(HybridParams { log_epsilon: 0.0, ..HybridParams::default() }.validate().is_err());
    }

    #[test]
    fn prob_dist_invariants() {
        assert!(ProbDist::new(vec![0.5, 0.6]).is_err());
        assert!(ProbDist::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbDist::new(vec![0.25; 4]).is_ok());
        assert!(Target::new(3, 3).is_err());
    }
}
