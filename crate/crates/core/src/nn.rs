//! Two-hidden-layer MLP policies with exact gradients for the behaviour
//! cloning losses.
//!
//! Parameters live in one flat vector so optimizers (Adam, and ES when the
//! policy itself is evolved) can treat them uniformly. Layer `l` stores its
//! weight matrix as `in x out` row-major followed by its bias.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Matrix, Real};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(T::zero()),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn grad_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Input(format!("unknown activation `{other}`"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

/// Output head of a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    /// One logit per action.
    Discrete { n_actions: usize },
    /// Per-dimension Gaussian mean followed by per-dimension log-std.
    Continuous { action_dim: usize },
}

impl Head {
    pub fn out_dim(&self) -> usize {
        match *self {
            Head::Discrete { n_actions } => n_actions,
            Head::Continuous { action_dim } => 2 * action_dim,
        }
    }
}

/// Architecture `[obs_dim, width, width, out_dim]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Arch {
    pub obs_dim: usize,
    pub width: usize,
    pub activation: Activation,
    pub head: Head,
}

impl Arch {
    pub fn new(obs_dim: usize, width: usize, activation: Activation, head: Head) -> Self {
        Self {
            obs_dim,
            width,
            activation,
            head,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.head.out_dim()
    }

    /// `(fan_in, fan_out)` of the three dense layers.
    pub fn layer_dims(&self) -> [(usize, usize); 3] {
        [
            (self.obs_dim, self.width),
            (self.width, self.width),
            (self.width, self.out_dim()),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    fn layer_offsets(&self) -> [usize; 3] {
        let d = self.layer_dims();
        let l0 = 0;
        let l1 = l0 + d[0].0 * d[0].1 + d[0].1;
        let l2 = l1 + d[1].0 * d[1].1 + d[1].1;
        [l0, l1, l2]
    }
}

/// Flat MLP parameters together with their architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams<T = f32> {
    arch: Arch,
    data: Vec<T>,
}

impl<T: Real> PolicyParams<T> {
    pub fn zeros(arch: Arch) -> Self {
        Self {
            data: vec![T::zero(); arch.n_params()],
            arch,
        }
    }

    pub fn from_flat(arch: Arch, data: Vec<T>) -> Result<Self> {
        if data.len() != arch.n_params() {
            return Err(Error::Dimension(format!(
                "architecture needs {} parameters, got {}",
                arch.n_params(),
                data.len()
            )));
        }
        Ok(Self { arch, data })
    }

    /// Scaled-uniform initialization: hidden layers with gain sqrt(2), the
    /// output layer with gain 0.01, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: Arch, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        let offsets = arch.layer_offsets();
        for (l, &(fan_in, fan_out)) in arch.layer_dims().iter().enumerate() {
            let gain = if l == 2 { 0.01 } else { std::f64::consts::SQRT_2 };
            let limit = gain * (3.0 / fan_in.max(1) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            let w = &mut p.data[offsets[l]..offsets[l] + fan_in * fan_out];
            for v in w {
                *v = T::lit(dist.sample(rng));
            }
        }
        p
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(weights, bias)` slices of layer `l`.
    pub fn layer(&self, l: usize) -> (&[T], &[T]) {
        let (fan_in, fan_out) = self.arch.layer_dims()[l];
        let off = self.arch.layer_offsets()[l];
        let (w, rest) = self.data[off..].split_at(fan_in * fan_out);
        (w, &rest[..fan_out])
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [T], &mut [T]) {
        let (fan_in, fan_out) = self.arch.layer_dims()[l];
        let off = self.arch.layer_offsets()[l];
        let (w, rest) = self.data[off..].split_at_mut(fan_in * fan_out);
        (w, &mut rest[..fan_out])
    }

    pub fn cast<U: Real>(&self) -> PolicyParams<U> {
        PolicyParams {
            arch: self.arch,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Logits (discrete) or `[means, log-stds]` (continuous), one row per
    /// observation.
    pub fn forward(&self, obs: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.forward_cached(obs)?.output)
    }

    fn forward_cached(&self, obs: &Matrix<T>) -> Result<Cache<T>> {
        if obs.cols() != self.arch.obs_dim {
            return Err(Error::Dimension(format!(
                "policy expects {} observation features, batch has {}",
                self.arch.obs_dim,
                obs.cols()
            )));
        }
        let rows = obs.rows();
        let act = self.arch.activation;
        let dims = self.arch.layer_dims();

        let (w0, b0) = self.layer(0);
        let mut h1 = dense(obs.as_slice(), rows, dims[0].0, w0, b0);
        h1.iter_mut().for_each(|v| *v = act.apply(*v));
        let (w1, b1) = self.layer(1);
        let mut h2 = dense(&h1, rows, dims[1].0, w1, b1);
        h2.iter_mut().for_each(|v| *v = act.apply(*v));
        let (w2, b2) = self.layer(2);
        let out = dense(&h2, rows, dims[2].0, w2, b2);

        Ok(Cache {
            h1,
            h2,
            output: Matrix::from_vec(rows, dims[2].1, out)?,
        })
    }

    /// Backpropagates `d_out` (gradient w.r.t. the network output) into a
    /// parameter gradient.
    fn backward(&self, obs: &Matrix<T>, cache: &Cache<T>, d_out: &[T]) -> PolicyParams<T> {
        let rows = obs.rows();
        let act = self.arch.activation;
        let dims = self.arch.layer_dims();
        let mut grads = PolicyParams::zeros(self.arch);

        let (w2, _) = self.layer(2);
        let mut d_h2 = {
            let (gw, gb) = grads.layer_mut(2);
            dense_backward(&cache.h2, rows, dims[2], w2, d_out, gw, gb, true)
        };
        for (d, &y) in d_h2.iter_mut().zip(&cache.h2) {
            *d = *d * act.grad_from_output(y);
        }

        let (w1, _) = self.layer(1);
        let mut d_h1 = {
            let (gw, gb) = grads.layer_mut(1);
            dense_backward(&cache.h1, rows, dims[1], w1, &d_h2, gw, gb, true)
        };
        for (d, &y) in d_h1.iter_mut().zip(&cache.h1) {
            *d = *d * act.grad_from_output(y);
        }

        let (w0, _) = self.layer(0);
        let (gw, gb) = grads.layer_mut(0);
        dense_backward(obs.as_slice(), rows, dims[0], w0, &d_h1, gw, gb, false);
        grads
    }

    /// Mean softmax cross-entropy against integer labels, with its exact
    /// gradient.
    pub fn bc_loss_discrete(&self, obs: &Matrix<T>, labels: &[usize]) -> Result<(T, PolicyParams<T>)> {
        let n_actions = match self.arch.head {
            Head::Discrete { n_actions } => n_actions,
            Head::Continuous { .. } => {
                return Err(Error::Input("cross-entropy loss needs a discrete policy head".into()))
            }
        };
        check_batch(obs.rows(), labels.len())?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_actions) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {n_actions} actions"
            )));
        }

        let cache = self.forward_cached(obs)?;
        let rows = obs.rows();
        let inv_n = T::one() / T::lit(rows as f64);
        let mut loss = T::zero();
        let mut d_out = vec![T::zero(); rows * n_actions];
        for (r, &label) in labels.iter().enumerate() {
            let z = cache.output.row(r);
            let d = &mut d_out[r * n_actions..(r + 1) * n_actions];
            let lse = log_softmax_into(z, d);
            loss = loss + (lse - z[label]);
            // d currently holds softmax probabilities
            d[label] = d[label] - T::one();
            d.iter_mut().for_each(|v| *v = *v * inv_n);
        }
        let grads = self.backward(obs, &cache, &d_out);
        Ok((loss * inv_n, grads))
    }

    /// Mean (over rows and action dimensions) Gaussian negative log
    /// likelihood of `targets` under the policy's state-dependent mean and
    /// log-std, with its exact gradient.
    pub fn bc_loss_continuous(&self, obs: &Matrix<T>, targets: &Matrix<T>) -> Result<(T, PolicyParams<T>)> {
        let action_dim = match self.arch.head {
            Head::Continuous { action_dim } => action_dim,
            Head::Discrete { .. } => {
                return Err(Error::Input(
                    "Gaussian likelihood loss needs a continuous policy head".into(),
                ))
            }
        };
        check_batch(obs.rows(), targets.rows())?;
        if targets.cols() != action_dim {
            return Err(Error::Dimension(format!(
                "targets have {} action dims, policy has {action_dim}",
                targets.cols()
            )));
        }
        if !targets.is_finite() {
            return Err(Error::Input("non-finite action targets".into()));
        }

        let cache = self.forward_cached(obs)?;
        let rows = obs.rows();
        let out_dim = 2 * action_dim;
        let inv_n = T::one() / T::lit((rows * action_dim) as f64);
        let half = T::lit(0.5);
        let half_ln_2pi = T::lit(0.5 * LN_2PI);
        let mut loss = T::zero();
        let mut d_out = vec![T::zero(); rows * out_dim];
        for r in 0..rows {
            let out = cache.output.row(r);
            let tgt = targets.row(r);
            let d = &mut d_out[r * out_dim..(r + 1) * out_dim];
            for j in 0..action_dim {
                let mean = out[j];
                let log_std = out[action_dim + j];
                let inv_std = (-log_std).exp();
                let z = (tgt[j] - mean) * inv_std;
                loss = loss + half * z * z + log_std + half_ln_2pi;
                d[j] = -z * inv_std * inv_n;
                d[action_dim + j] = (T::one() - z * z) * inv_n;
            }
        }
        let grads = self.backward(obs, &cache, &d_out);
        Ok((loss * inv_n, grads))
    }
}

struct Cache<T> {
    h1: Vec<T>,
    h2: Vec<T>,
    output: Matrix<T>,
}

fn check_batch(rows: usize, targets: usize) -> Result<()> {
    if rows == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    if rows != targets {
        return Err(Error::Dimension(format!("{rows} observations but {targets} targets")));
    }
    Ok(())
}

/// `x (rows x fan_in) * w (fan_in x fan_out) + b`.
fn dense<T: Real>(x: &[T], rows: usize, fan_in: usize, w: &[T], b: &[T]) -> Vec<T> {
    let fan_out = b.len();
    let mut out = Vec::with_capacity(rows * fan_out);
    for r in 0..rows {
        out.extend_from_slice(b);
        let o = &mut out[r * fan_out..];
        for (i, &a) in x[r * fan_in..(r + 1) * fan_in].iter().enumerate() {
            // grid observations are mostly zeros
            if a == T::zero() {
                continue;
            }
            let w_row = &w[i * fan_out..(i + 1) * fan_out];
            for (oj, &wj) in o.iter_mut().zip(w_row) {
                *oj = *oj + a * wj;
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients of a dense layer and, when
/// `need_input_grad`, returns the gradient w.r.t. its input.
#[allow(clippy::too_many_arguments)]
fn dense_backward<T: Real>(
    x: &[T],
    rows: usize,
    (fan_in, fan_out): (usize, usize),
    w: &[T],
    d_out: &[T],
    gw: &mut [T],
    gb: &mut [T],
    need_input_grad: bool,
) -> Vec<T> {
    let mut d_in = if need_input_grad {
        vec![T::zero(); rows * fan_in]
    } else {
        Vec::new()
    };
    for r in 0..rows {
        let dr = &d_out[r * fan_out..(r + 1) * fan_out];
        for (g, &d) in gb.iter_mut().zip(dr) {
            *g = *g + d;
        }
        let xr = &x[r * fan_in..(r + 1) * fan_in];
        for (i, &a) in xr.iter().enumerate() {
            let w_row = &w[i * fan_out..(i + 1) * fan_out];
            if need_input_grad {
                let mut acc = T::zero();
                for (&wj, &dj) in w_row.iter().zip(dr) {
                    acc = acc + wj * dj;
                }
                d_in[r * fan_in + i] = acc;
            }
            if a == T::zero() {
                continue;
            }
            let g_row = &mut gw[i * fan_out..(i + 1) * fan_out];
            for (g, &dj) in g_row.iter_mut().zip(dr) {
                *g = *g + a * dj;
            }
        }
    }
    d_in
}

/// Writes softmax probabilities of `z` into `probs` and returns
/// `logsumexp(z)`.
pub(crate) fn log_softmax_into<T: Real>(z: &[T], probs: &mut [T]) -> T {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (p, &v) in probs.iter_mut().zip(z) {
        *p = (v - max).exp();
        sum = sum + *p;
    }
    for p in probs.iter_mut() {
        *p = *p / sum;
    }
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch(obs: usize, width: usize, act: Activation, head: Head) -> Arch {
        Arch::new(obs, width, act, head)
    }

    /// Straight-line re-implementation of the forward pass, one observation
    /// at a time with explicit index arithmetic.
    fn naive_forward(p: &PolicyParams<f64>, x: &[f64]) -> Vec<f64> {
        let a = p.arch();
        let mut h = x.to_vec();
        for l in 0..3 {
            let (fan_in, fan_out) = a.layer_dims()[l];
            let (w, b) = p.layer(l);
            let mut next = vec![0.0; fan_out];
            for j in 0..fan_out {
                let mut s = b[j];
                for i in 0..fan_in {
                    s += h[i] * w[i * fan_out + j];
                }
                next[j] = if l < 2 {
                    match a.activation {
                        Activation::Tanh => s.tanh(),
                        Activation::Relu => s.max(0.0),
                    }
                } else {
                    s
                };
            }
            h = next;
        }
        h
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let p = PolicyParams::<f32>::zeros(arch(4, 8, Activation::Tanh, Head::Discrete { n_actions: 2 }));
        let obs = Matrix::from_vec(3, 4, vec![0.7; 12]).unwrap();
        let out = p.forward(&obs).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_network_matches_tanh() {
        // 1 -> 1 -> 1 -> 1 with identity-like second and third layers
        let a = arch(1, 1, Activation::Tanh, Head::Discrete { n_actions: 1 });
        let w = 0.8_f64;
        let x = 0.6_f64;
        let p = PolicyParams::from_flat(a, vec![w, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let out = p.forward(&Matrix::from_vec(1, 1, vec![x]).unwrap()).unwrap();
        assert!((out.get(0, 0) - (w * x).tanh().tanh()).abs() < 1e-15);
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for act in [Activation::Tanh, Activation::Relu] {
            let a = arch(5, 6, act, Head::Continuous { action_dim: 2 });
            let mut p = PolicyParams::<f64>::init(a, &mut rng);
            for v in p.as_mut_slice() {
                *v += rng.random_range(-0.5..0.5);
            }
            let obs: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
            let m = Matrix::from_vec(4, 5, obs.clone()).unwrap();
            let out = p.forward(&m).unwrap();
            for r in 0..4 {
                let expect = naive_forward(&p, &obs[r * 5..(r + 1) * 5]);
                for (x, y) in out.row(r).iter().zip(&expect) {
                    assert!((x - y).abs() < 1e-12, "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let p = PolicyParams::<f32>::zeros(arch(4, 8, Activation::Tanh, Head::Discrete { n_actions: 2 }));
        let obs = Matrix::zeros(2, 3);
        assert!(matches!(p.forward(&obs), Err(Error::Dimension(_))));
    }

    #[test]
    fn uniform_softmax_loss_is_ln2() {
        let p = PolicyParams::<f64>::zeros(arch(4, 8, Activation::Tanh, Head::Discrete { n_actions: 2 }));
        let obs = Matrix::from_vec(2, 4, vec![0.3; 8]).unwrap();
        let (loss, _) = p.bc_loss_discrete(&obs, &[0, 1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn label_out_of_range_rejected() {
        let p = PolicyParams::<f32>::zeros(arch(2, 4, Activation::Tanh, Head::Discrete { n_actions: 2 }));
        let obs = Matrix::zeros(1, 2);
        assert!(matches!(p.bc_loss_discrete(&obs, &[2]), Err(Error::Input(_))));
        assert!(p.bc_loss_discrete(&Matrix::zeros(0, 2), &[]).is_err());
    }

    #[test]
    fn gaussian_loss_at_exact_mean_and_unit_std() {
        // zero network: mean 0, log-std 0; target 0 -> 0.5 ln(2 pi)
        let p = PolicyParams::<f64>::zeros(arch(3, 4, Activation::Tanh, Head::Continuous { action_dim: 2 }));
        let obs = Matrix::from_vec(2, 3, vec![0.1; 6]).unwrap();
        let (loss, _) = p.bc_loss_continuous(&obs, &Matrix::zeros(2, 2)).unwrap();
        assert!((loss - 0.5 * LN_2PI).abs() < 1e-15);
    }

    #[test]
    fn larger_log_std_increases_loss_at_exact_mean() {
        let a = arch(1, 1, Activation::Tanh, Head::Continuous { action_dim: 1 });
        let obs = Matrix::from_vec(1, 1, vec![0.0]).unwrap();
        let mut last = f64::NEG_INFINITY;
        for c in [0.5, 1.0, 5.0, 50.0] {
            // log-std output bias = c, mean output = 0 = target
            let p = PolicyParams::from_flat(a, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, c]).unwrap();
            let (loss, _) = p.bc_loss_continuous(&obs, &Matrix::zeros(1, 1)).unwrap();
            assert!(loss > last);
            last = loss;
        }
    }

    #[test]
    fn non_finite_targets_rejected() {
        let p = PolicyParams::<f32>::zeros(arch(1, 2, Activation::Tanh, Head::Continuous { action_dim: 1 }));
        let t = Matrix::from_vec(1, 1, vec![f32::NAN]).unwrap();
        assert!(matches!(
            p.bc_loss_continuous(&Matrix::zeros(1, 1), &t),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn duplicated_batch_leaves_loss_and_grads_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = arch(3, 5, Activation::Tanh, Head::Discrete { n_actions: 3 });
        let p = PolicyParams::<f64>::init(a, &mut rng);
        let obs: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = [0, 2, 1];
        let m = Matrix::from_vec(3, 3, obs.clone()).unwrap();
        let doubled = Matrix::from_vec(6, 3, [obs.clone(), obs].concat()).unwrap();
        let (l1, g1) = p.bc_loss_discrete(&m, &labels).unwrap();
        let (l2, g2) = p.bc_loss_discrete(&doubled, &[0, 2, 1, 0, 2, 1]).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (x, y) in g1.as_slice().iter().zip(g2.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    proptest::proptest! {
        #[test]
        fn batch_permutation_permutes_outputs_and_keeps_loss(
            seed in 0u64..1000,
            rows in 1usize..8,
            shift in 0usize..8,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = arch(3, 6, Activation::Tanh, Head::Discrete { n_actions: 3 });
            let p = PolicyParams::<f64>::init(a, &mut rng);
            let obs: Vec<f64> = (0..rows * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..3)).collect();
            let perm: Vec<usize> = (0..rows).map(|r| (r + shift) % rows).collect();
            let m = Matrix::from_vec(rows, 3, obs.clone()).unwrap();
            let pm = m.select_rows(&perm);
            let plabels: Vec<usize> = perm.iter().map(|&r| labels[r]).collect();

            let out = p.forward(&m).unwrap();
            let pout = p.forward(&pm).unwrap();
            for (i, &r) in perm.iter().enumerate() {
                for (x, y) in pout.row(i).iter().zip(out.row(r)) {
                    proptest::prop_assert!((x - y).abs() < 1e-12);
                }
            }
            let (l1, g1) = p.bc_loss_discrete(&m, &labels).unwrap();
            let (l2, g2) = p.bc_loss_discrete(&pm, &plabels).unwrap();
            proptest::prop_assert!((l1 - l2).abs() < 1e-12);
            for (x, y) in g1.as_slice().iter().zip(g2.as_slice()) {
                proptest::prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
