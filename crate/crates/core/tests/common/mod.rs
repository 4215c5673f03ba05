//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use emdloss::ground_distance::{GroundMatrix, Provenance};
use emdloss::matrix::Matrix;
use emdloss::net::{sample_loss, Head, Mlp, NetConfig, Phase};
use emdloss::{LossResult, Target};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Simplex point bounded away from zero so log terms stay smooth under
/// finite-difference perturbation.
pub fn interior_simplex(rng: &mut impl Rng, c: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..c).map(|_| 0.05 + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

pub fn random_ground(rng: &mut impl Rng, c: usize) -> GroundMatrix {
    let mut m = Matrix::zeros(c, c);
    for i in 0..c {
        for j in (i + 1)..c {
            let v = rng.random::<f64>();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    GroundMatrix::new(m, Provenance::External).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Largest relative error between the analytic gradient of `f` at `p` and
/// central differences.
pub fn loss_fd_max_rel(p: &[f64], f: impl Fn(&[f64]) -> LossResult) -> f64 {
    let analytic = f(p).grad;
    (0..p.len())
        .map(|i| {
            let mut up = p.to_vec();
            let mut down = p.to_vec();
            up[i] += FD_STEP;
            down[i] -= FD_STEP;
            let fd = (f(&up).value - f(&down).value) / (2.0 * FD_STEP);
            rel_err(analytic[i], fd)
        })
        .fold(0.0, f64::max)
}

fn pipeline_objective(net: &Mlp, x: &[f64], t: Target, phase: Phase<'_>, wd: f64) -> f64 {
    let pass = net.forward(x).unwrap();
    let l2: f64 = net.layers().iter().flat_map(|l| l.params()).map(|p| p * p).sum();
    sample_loss(&pass, t, phase).unwrap().objective + wd * l2
}

pub struct NetworkFd {
    pub checked: usize,
    /// Coordinates sitting on a ReLU kink, where the one-sided slopes differ.
    pub skipped: usize,
    pub max_rel: f64,
}

/// Backprop through a 4-4-3 net (4-4-1 for a linear head) against central
/// differences of the scalar objective, over `cases` random nets and inputs.
pub fn network_fd(head: Head, phase: Phase<'_>, cases: u64) -> NetworkFd {
    let wd = 1e-3;
    let mut out = NetworkFd {
        checked: 0,
        skipped: 0,
        max_rel: 0.0,
    };
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + case);
        let net = Mlp::new(NetConfig {
            layer_sizes: vec![4, 4, if head == Head::Softmax { 3 } else { 1 }],
            head,
            seed: case,
            weight_init_scale: 1.5,
        })
        .unwrap();
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t = Target::new(rng.random_range(0..3), 3).unwrap();
        let pass = net.forward(&x).unwrap();
        let loss = sample_loss(&pass, t, phase).unwrap();
        let grads = net.backward(&pass, &loss.grad_logits, wd).unwrap();
        let base = pipeline_objective(&net, &x, t, phase, wd);

        for l in 0..net.layers().len() {
            for k in 0..grads[l].params().count() {
                let eval = |delta: f64| {
                    let mut probe = net.clone();
                    *probe.layers_mut()[l].params_mut().nth(k).unwrap() += delta;
                    pipeline_objective(&probe, &x, t, phase, wd)
                };
                let (up, down) = (eval(FD_STEP), eval(-FD_STEP));
                let left = (base - down) / FD_STEP;
                let right = (up - base) / FD_STEP;
                if (left - right).abs() > 1e-3 * left.abs().max(right.abs()).max(1.0) {
                    out.skipped += 1;
                    continue;
                }
                out.checked += 1;
                let fd = (up - down) / (2.0 * FD_STEP);
                let analytic = *grads[l].params().nth(k).unwrap();
                // absolute floor for coordinates whose true gradient is ~0
                let err = if (analytic - fd).abs() < 1e-9 { 0.0 } else { rel_err(analytic, fd) };
                out.max_rel = out.max_rel.max(err);
            }
        }
    }
    out
}
