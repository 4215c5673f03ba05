//! Per-sample training objective: loss components and `∂L/∂logits` for each
//! training method.

use serde::{Deserialize, Serialize};

use super::mlp::{softmax_backward, ForwardPass, HeadOutput};
use crate::error::{Error, Result};
use crate::ground_distance::GroundMatrix;
use crate::losses::{
    cross_entropy_from_logits, emd2_ordered, hybrid_regularizer, l2_regression, sinkhorn_transport, smooth_one_hot,
    HybridParams, Target,
};

/// Training method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    /// Softmax cross-entropy.
    #[serde(rename = "XE")]
    Xe,
    /// L2 regression on the class index with a linear head.
    #[serde(rename = "REG")]
    Reg,
    /// Closed-form squared EMD over ordered classes.
    #[serde(rename = "EMD")]
    Emd,
    /// Cross-entropy + EMD² regularizer, ω = 1, μ = −0.5 by default.
    #[serde(rename = "XEMD1")]
    Xemd1,
    /// Cross-entropy + EMD² regularizer, ω = 2, μ = −0.25 by default.
    #[serde(rename = "XEMD2")]
    Xemd2,
    /// Entropic (Sinkhorn) EMD with a fixed ground matrix.
    #[serde(rename = "AEMD")]
    Aemd,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Xe => "XE",
            LossKind::Reg => "REG",
            LossKind::Emd => "EMD",
            LossKind::Xemd1 => "XEMD1",
            LossKind::Xemd2 => "XEMD2",
            LossKind::Aemd => "AEMD",
        }
    }

    pub fn is_hybrid(&self) -> bool {
        matches!(self, LossKind::Xemd1 | LossKind::Xemd2)
    }

    pub fn uses_ground_matrix(&self) -> bool {
        matches!(self, LossKind::Xemd1 | LossKind::Xemd2 | LossKind::Aemd)
    }

    pub fn default_hybrid(&self) -> HybridParams {
        match self {
            LossKind::Xemd2 => HybridParams::xemd2(0.0),
            _ => HybridParams::xemd1(0.0),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "XE" => LossKind::Xe,
            "REG" => LossKind::Reg,
            "EMD" => LossKind::Emd,
            "XEMD1" => LossKind::Xemd1,
            "XEMD2" => LossKind::Xemd2,
            "AEMD" | "A-EMD" => LossKind::Aemd,
            other => return Err(Error::InvalidInput(format!("unknown loss kind {other:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinkhornParams {
    pub entropic_reg: f64,
    pub iters: usize,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        SinkhornParams {
            entropic_reg: 1.0,
            iters: 100,
        }
    }
}

/// What the objective looks like for one step.
#[derive(Clone, Copy, Debug)]
pub enum Phase<'a> {
    /// Plain cross-entropy (XE itself, or a jump-start epoch).
    CrossEntropy,
    Regression,
    OrderedEmd,
    Hybrid {
        lambda: f64,
        params: HybridParams,
        ground: &'a GroundMatrix,
    },
    Sinkhorn {
        params: SinkhornParams,
        ground: &'a GroundMatrix,
    },
}

/// One sample's loss.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleLoss {
    /// Cross-entropy term of the objective (zero if the objective has none).
    pub xe: f64,
    /// Everything else in the objective (λ-weighted regularizer, EMD², L2, or
    /// entropic transport cost).
    pub reg: f64,
    /// The scalar whose gradient `grad_logits` is. Equals `xe + reg` except
    /// for the Sinkhorn phase, where it is the entropic dual objective.
    pub objective: f64,
    pub grad_logits: Vec<f64>,
}

pub fn sample_loss(pass: &ForwardPass, target: Target, phase: Phase<'_>) -> Result<SampleLoss> {
    let probs = || -> Result<&[f64]> {
        pass.probabilities()
            .ok_or_else(|| Error::InvalidInput("loss requires a softmax head".into()))
    };
    match phase {
        Phase::CrossEntropy => {
            probs()?;
            let xe = cross_entropy_from_logits(&pass.logits, target)?;
            Ok(SampleLoss {
                xe: xe.value,
                reg: 0.0,
                objective: xe.value,
                grad_logits: xe.grad,
            })
        }
        Phase::Regression => {
            let HeadOutput::Scalar(y) = pass.output else {
                return Err(Error::InvalidInput("regression loss requires a linear head".into()));
            };
            let r = l2_regression(y, target);
            Ok(SampleLoss {
                xe: 0.0,
                reg: r.value,
                objective: r.value,
                grad_logits: r.grad,
            })
        }
        Phase::OrderedEmd => {
            let p = probs()?;
            let r = emd2_ordered(p, target)?;
            Ok(SampleLoss {
                xe: 0.0,
                reg: r.value,
                objective: r.value,
                grad_logits: softmax_backward(p, &r.grad),
            })
        }
        Phase::Hybrid { lambda, params, ground } => {
            let p = probs()?;
            let xe = cross_entropy_from_logits(&pass.logits, target)?;
            if lambda == 0.0 {
                return Ok(SampleLoss {
                    xe: xe.value,
                    reg: 0.0,
                    objective: xe.value,
                    grad_logits: xe.grad,
                });
            }
            let r = hybrid_regularizer(p, target, ground, &params)?;
            let weighted: Vec<f64> = r.grad.iter().map(|g| lambda * g).collect();
            let mut grad = xe.grad;
            for (g, extra) in grad.iter_mut().zip(softmax_backward(p, &weighted)) {
                *g += extra;
            }
            let reg = lambda * r.value;
            Ok(SampleLoss {
                xe: xe.value,
                reg,
                objective: xe.value + reg,
                grad_logits: grad,
            })
        }
        Phase::Sinkhorn { params, ground } => {
            let p = probs()?;
            // softmax can underflow to exact zeros, which scaling cannot handle
            let mass: Vec<f64> = p.iter().map(|v| v.max(f64::MIN_POSITIVE)).collect();
            let sol = sinkhorn_transport(&mass, &smooth_one_hot(target), ground.matrix(), params.entropic_reg, params.iters)?;
            Ok(SampleLoss {
                xe: 0.0,
                reg: sol.transport_cost,
                objective: sol.dual_objective,
                grad_logits: softmax_backward(p, &sol.f),
            })
        }
    }
}
