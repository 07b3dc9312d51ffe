//! Static per-dimension observation normalization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{Action, ActionSpace, EnvId, EnvSpec};
use crate::error::{Error, Result};

const MIN_STD: f64 = 1e-2;
const GRID_STD: f64 = 1.0;

/// Per-dimension affine map `(x - mean) / std`, or the identity.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservationNormalizer {
    Identity { dim: usize },
    Affine { mean: Vec<f32>, std: Vec<f32> },
}

impl ObservationNormalizer {
    pub fn identity(dim: usize) -> Self {
        ObservationNormalizer::Identity { dim }
    }

    pub fn affine(mean: Vec<f32>, std: Vec<f32>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::Dimension("normalizer mean/std lengths differ".into()));
        }
        if std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Input("normalizer std must be positive and finite".into()));
        }
        Ok(ObservationNormalizer::Affine { mean, std })
    }

    pub fn dim(&self) -> usize {
        match self {
            ObservationNormalizer::Identity { dim } => *dim,
            ObservationNormalizer::Affine { mean, .. } => mean.len(),
        }
    }

    /// Statistics of the states visited by a uniform-random policy, with a
    /// floor of 0.01 on each std. Grid observations are binary (std at most
    /// 0.5), so their floor of 1 leaves them centered at unit scale.
    pub fn fit_random_policy(spec: &EnvSpec, episodes: usize, seed: u64) -> Self {
        let floor = if spec.id == EnvId::GridBreakout {
            GRID_STD
        } else {
            MIN_STD
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        let d = spec.obs_dim;
        let mut sum = vec![0.0f64; d];
        let mut sq = vec![0.0f64; d];
        let mut n = 0usize;
        let mut acc = |o: &[f32]| {
            for (i, &v) in o.iter().enumerate() {
                sum[i] += f64::from(v);
                sq[i] += f64::from(v) * f64::from(v);
            }
            n += 1;
        };
        for ep in 0..episodes.max(1) {
            let (mut env, mut obs) = spec.reset(seed.wrapping_add(ep as u64).wrapping_mul(0x9E37_79B9));
            acc(&obs);
            while !env.is_done() {
                let a = random_action(&spec.action_space, &mut rng);
                env.step(&a, &mut obs).expect("random actions are valid");
                acc(&obs);
            }
        }
        let nf = n as f64;
        let mean: Vec<f32> = sum.iter().map(|s| (s / nf) as f32).collect();
        let std: Vec<f32> = sum
            .iter()
            .zip(&sq)
            .map(|(s, q)| ((q / nf - (s / nf).powi(2)).max(0.0).sqrt().max(floor)) as f32)
            .collect();
        ObservationNormalizer::Affine { mean, std }
    }

    /// Column statistics of `features`, with the same std floor.
    pub fn fit(features: &crate::matrix::Matrix) -> Self {
        let d = features.cols();
        let n = features.rows().max(1) as f64;
        let mut sum = vec![0.0f64; d];
        let mut sq = vec![0.0f64; d];
        for row in features.iter_rows() {
            for (i, &v) in row.iter().enumerate() {
                sum[i] += f64::from(v);
                sq[i] += f64::from(v) * f64::from(v);
            }
        }
        let mean: Vec<f32> = sum.iter().map(|s| (s / n) as f32).collect();
        let std: Vec<f32> = sum
            .iter()
            .zip(&sq)
            .map(|(s, q)| ((q / n - (s / n).powi(2)).max(0.0).sqrt().max(MIN_STD)) as f32)
            .collect();
        ObservationNormalizer::Affine { mean, std }
    }

    /// Normalizes every row of `raw`.
    pub fn normalize_matrix(&self, raw: &crate::matrix::Matrix) -> crate::matrix::Matrix {
        let mut out = raw.clone();
        for r in 0..raw.rows() {
            self.normalize(raw.row(r), out.row_mut(r));
        }
        out
    }

    pub fn normalize(&self, raw: &[f32], out: &mut [f32]) {
        match self {
            ObservationNormalizer::Identity { .. } => out.copy_from_slice(raw),
            ObservationNormalizer::Affine { mean, std } => {
                for (((o, &x), &m), &s) in out.iter_mut().zip(raw).zip(mean).zip(std) {
                    *o = (x - m) / s;
                }
            }
        }
    }

    pub fn denormalize(&self, normalized: &[f32], out: &mut [f32]) {
        match self {
            ObservationNormalizer::Identity { .. } => out.copy_from_slice(normalized),
            ObservationNormalizer::Affine { mean, std } => {
                for (((o, &z), &m), &s) in out.iter_mut().zip(normalized).zip(mean).zip(std) {
                    *o = z * s + m;
                }
            }
        }
    }

    /// Normalizer for dimensions `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        match self {
            ObservationNormalizer::Identity { .. } => Self::identity(len),
            ObservationNormalizer::Affine { mean, std } => ObservationNormalizer::Affine {
                mean: mean[start..start + len].to_vec(),
                std: std[start..start + len].to_vec(),
            },
        }
    }

    /// Side-by-side normalizer for concatenated observations.
    pub fn concat(&self, other: &Self) -> Self {
        match (self, other) {
            (Self::Identity { dim: a }, Self::Identity { dim: b }) => Self::identity(a + b),
            _ => {
                let (m1, s1) = self.mean_std();
                let (m2, s2) = other.mean_std();
                ObservationNormalizer::Affine {
                    mean: [m1, m2].concat(),
                    std: [s1, s2].concat(),
                }
            }
        }
    }

    fn mean_std(&self) -> (Vec<f32>, Vec<f32>) {
        match self {
            Self::Identity { dim } => (vec![0.0; *dim], vec![1.0; *dim]),
            Self::Affine { mean, std } => (mean.clone(), std.clone()),
        }
    }
}

pub(crate) fn random_action<R: Rng>(space: &ActionSpace, rng: &mut R) -> Action {
    match space {
        ActionSpace::Discrete { n } => Action::Discrete(rng.random_range(0..*n)),
        ActionSpace::Continuous { low, high } => {
            Action::Continuous(low.iter().zip(high).map(|(&l, &h)| rng.random_range(l..=h)).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn denormalize_inverts_normalize() {
        let n = ObservationNormalizer::affine(vec![1.0, -2.0], vec![0.5, 3.0]).unwrap();
        let raw = [0.3_f32, 7.0];
        let mut z = [0.0; 2];
        let mut back = [0.0; 2];
        n.normalize(&raw, &mut z);
        n.denormalize(&z, &mut back);
        for (a, b) in raw.iter().zip(back) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_non_positive_std() {
        assert!(ObservationNormalizer::affine(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn fitted_cartpole_stats_are_deterministic_and_positive() {
        let spec = EnvSpec::new(EnvId::CartPole);
        let a = ObservationNormalizer::fit_random_policy(&spec, 8, 0);
        assert_eq!(a, ObservationNormalizer::fit_random_policy(&spec, 8, 0));
        match a {
            ObservationNormalizer::Affine { std, .. } => assert!(std.iter().all(|&s| s >= 0.01)),
            _ => panic!("expected affine"),
        }
        let g = ObservationNormalizer::fit_random_policy(&EnvSpec::new(EnvId::GridBreakout), 2, 0);
        match g {
            // brick cells start full, so their mean is close to 1; unit scale
            ObservationNormalizer::Affine { mean, std } => {
                assert!(std.iter().all(|&s| s == 1.0));
                assert!(mean[3 * 100 + 15] > 0.9);
                assert!(mean.iter().all(|&m| (0.0..=1.0).contains(&m)));
            }
            _ => panic!("expected affine"),
        }
    }

    #[test]
    fn concat_then_slice_recovers_parts() {
        let a = ObservationNormalizer::affine(vec![1.0], vec![2.0]).unwrap();
        let b = ObservationNormalizer::identity(2);
        let c = a.concat(&b);
        assert_eq!(c.dim(), 3);
        assert_eq!(c.slice(0, 1), a);
        assert_eq!(
            c.slice(1, 2),
            ObservationNormalizer::affine(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
        );
    }
}
