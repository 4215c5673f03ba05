//! Entropically regularized transport by log-domain Sinkhorn scaling.

use super::{LossResult, Target};
use crate::error::{check_len, Error, Result};
use crate::ground_distance::GroundMatrix;
use crate::matrix::Matrix;

/// Weight of the uniform distribution mixed into a one-hot target so that
/// both marginals are strictly positive.
pub const TARGET_SMOOTHING: f64 = 1e-3;

/// Output of [`sinkhorn_transport`].
#[derive(Clone, Debug)]
pub struct SinkhornPlan {
    pub plan: Matrix,
    /// Left (row) dual potential.
    pub f: Vec<f64>,
    /// Right (column) dual potential.
    pub g: Vec<f64>,
    /// `Σ_ij D_ij P_ij`.
    pub transport_cost: f64,
    /// Dual objective `⟨f, a⟩ + ⟨g, b⟩`; its gradient in `a` is `f`.
    pub dual_objective: f64,
}

impl SinkhornPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.plan.rows()).map(|i| self.plan.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.plan.cols()];
        for i in 0..self.plan.rows() {
            for (o, v) in out.iter_mut().zip(self.plan.row(i)) {
                *o += v;
            }
        }
        out
    }
}

/// `(1 − s)·onehot(k) + s/C` with `s = TARGET_SMOOTHING`.
pub fn smooth_one_hot(t: Target) -> Vec<f64> {
    let c = t.num_classes() as f64;
    let mut out = vec![TARGET_SMOOTHING / c; t.num_classes()];
    out[t.class()] += 1.0 - TARGET_SMOOTHING;
    out
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Runs exactly `iters` alternating row/column updates of the dual
/// potentials for `min ⟨D, P⟩ − ε H(P)` subject to `P 1 = a`, `Pᵀ 1 = b`.
pub fn sinkhorn_transport(a: &[f64], b: &[f64], cost: &Matrix, entropic_reg: f64, iters: usize) -> Result<SinkhornPlan> {
    check_len("sinkhorn rows", cost.rows(), a.len())?;
    check_len("sinkhorn cols", cost.cols(), b.len())?;
    if !(entropic_reg > 0.0 && entropic_reg.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "entropic regularizer must be > 0, got {entropic_reg}"
        )));
    }
    if iters == 0 {
        return Err(Error::InvalidInput("sinkhorn needs at least one iteration".into()));
    }
    if a.iter().chain(b).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidInput("sinkhorn marginals must be strictly positive".into()));
    }

    let eps = entropic_reg;
    let (m, n) = (a.len(), b.len());
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];

    for _ in 0..iters {
        for i in 0..m {
            let lse = log_sum_exp((0..n).map(|j| (g[j] - cost[(i, j)]) / eps));
            f[i] = eps * (log_a[i] - lse);
        }
        for j in 0..n {
            let lse = log_sum_exp((0..m).map(|i| (f[i] - cost[(i, j)]) / eps));
            g[j] = eps * (log_b[j] - lse);
        }
    }

    let plan = Matrix::from_fn(m, n, |i, j| ((f[i] + g[j] - cost[(i, j)]) / eps).exp());
    if plan.as_slice().iter().any(|v| !v.is_finite()) || f.iter().chain(&g).any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("sinkhorn scaling produced non-finite values".into()));
    }
    let transport_cost = plan
        .as_slice()
        .iter()
        .zip(cost.as_slice())
        .map(|(p, c)| p * c)
        .sum();
    let dual_objective = f.iter().zip(a).map(|(x, y)| x * y).sum::<f64>()
        + g.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    Ok(SinkhornPlan {
        plan,
        f,
        g,
        transport_cost,
        dual_objective,
    })
}

/// Approximate EMD between `p` and the smoothed one-hot target.
///
/// The value is the transport cost of the regularized plan; the gradient is
/// the left dual potential shifted to sum to zero.
pub fn sinkhorn_emd(p: &[f64], t: Target, d: &GroundMatrix, entropic_reg: f64, iters: usize) -> Result<LossResult> {
    check_len("sinkhorn_emd", t.num_classes(), p.len())?;
    let sol = sinkhorn_transport(p, &smooth_one_hot(t), d.matrix(), entropic_reg, iters)?;
    Ok(loss_from_plan(&sol))
}

pub(crate) fn loss_from_plan(sol: &SinkhornPlan) -> LossResult {
    let mean = sol.f.iter().sum::<f64>() / sol.f.len() as f64;
    LossResult {
        value: sol.transport_cost,
        grad: sol.f.iter().map(|v| v - mean).collect(),
    }
}
