//! Finite-difference verification of the behaviour-cloning gradients.
//!
//! Every trial draws a small random network (width at most 8), a random
//! batch and targets, and compares each analytic partial derivative with a
//! central difference computed in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::matrix::Matrix;
use crate::nn::{Activation, Arch, Head, PolicyParams};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Absolute floor of the relative-error denominator, so partials that are
/// zero analytically and numerically do not divide by zero.
const DENOM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub trials: usize,
    pub partials: usize,
    pub max_rel_err: f64,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

/// Runs `trials` random gradient checks, alternating discrete and
/// continuous heads and tanh / relu activations.
pub fn run(trials: usize, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        trials,
        partials: 0,
        max_rel_err: 0.0,
    };
    for trial in 0..trials {
        let activation = if trial % 4 < 2 {
            Activation::Tanh
        } else {
            Activation::Relu
        };
        let discrete = trial % 2 == 0;
        let (n, err) = check_one(&mut rng, activation, discrete);
        report.partials += n;
        report.max_rel_err = report.max_rel_err.max(err);
    }
    report
}

fn check_one(rng: &mut ChaCha8Rng, activation: Activation, discrete: bool) -> (usize, f64) {
    let obs_dim = rng.random_range(1..=5);
    let width = rng.random_range(1..=8);
    let rows = rng.random_range(1..=6);
    let head = if discrete {
        Head::Discrete {
            n_actions: rng.random_range(2..=4),
        }
    } else {
        Head::Continuous {
            action_dim: rng.random_range(1..=2),
        }
    };
    let arch = Arch::new(obs_dim, width, activation, head);
    let mut params = PolicyParams::<f64>::init(arch, rng);
    // move off the near-zero output init so every layer matters
    for v in params.as_mut_slice() {
        *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
    }
    let obs = Matrix::from_vec(
        rows,
        obs_dim,
        (0..rows * obs_dim).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .expect("sized");

    let loss = |p: &PolicyParams<f64>| -> (f64, PolicyParams<f64>) {
        match head {
            Head::Discrete { n_actions } => {
                let labels: Vec<usize> = (0..rows).map(|r| (r * 7 + 3) % n_actions).collect();
                p.bc_loss_discrete(&obs, &labels).expect("valid batch")
            }
            Head::Continuous { action_dim } => {
                let t: Vec<f64> = (0..rows * action_dim).map(|i| ((i as f64) * 0.37).sin()).collect();
                let targets = Matrix::from_vec(rows, action_dim, t).expect("sized");
                p.bc_loss_continuous(&obs, &targets).expect("valid batch")
            }
        }
    };

    let (_, grads) = loss(&params);
    let mut max_err = 0.0_f64;
    let mut probe = params.clone();
    for i in 0..params.len() {
        let x = params.as_slice()[i];
        probe.as_mut_slice()[i] = x + FD_STEP;
        let (up, _) = loss(&probe);
        probe.as_mut_slice()[i] = x - FD_STEP;
        let (down, _) = loss(&probe);
        probe.as_mut_slice()[i] = x;
        let numeric = (up - down) / (2.0 * FD_STEP);
        max_err = max_err.max(relative_error(grads.as_slice()[i], numeric));
    }
    (params.len(), max_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bc_gradients_match_central_differences() {
        let r = run(100, 2024);
        assert_eq!(r.trials, 100);
        assert!(r.partials > 1000);
        assert!(r.max_rel_err <= 1e-4, "max relative error {}", r.max_rel_err);
    }

    #[test]
    fn relative_error_is_scale_free() {
        assert_eq!(relative_error(2.0, 2.0), 0.0);
        assert!((relative_error(1e6, 1.0001e6) - 1e-4 / 1.0001).abs() < 1e-12);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
    }
}
