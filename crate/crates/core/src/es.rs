//! Outer-loop evolution strategies over a flat parameter vector.
//!
//! [`EsState::ask`] draws an antithetic population around the mean;
//! the caller evaluates it, shapes the raw fitness with [`shape_fitness`]
//! and hands the result back to [`EsState::tell`]. Both strategies
//! maximize.
//!
//! * OpenES: centered-rank shaping, gradient estimate
//!   `1 / (P sigma) * sum_i f_i eps_i`, Adam ascent on the mean and
//!   `sigma <- max(sigma * decay, sigma_limit)`.
//! * SNES: per-coordinate step sizes with the separable natural-gradient
//!   updates and rank utilities sharpened by a temperature.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[serde(alias = "OpenES")]
    OpenEs,
    #[serde(alias = "SNES")]
    Snes,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "openes" => Ok(Strategy::OpenEs),
            "snes" => Ok(Strategy::Snes),
            other => Err(Error::config("strategy", format!("unknown strategy `{other}`"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::OpenEs => "openes",
            Strategy::Snes => "snes",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsConfig {
    pub popsize: usize,
    pub sigma_init: f64,
    pub sigma_decay: f64,
    pub sigma_limit: f64,
    /// Adam learning rate of the OpenES mean update.
    pub lrate_init: f64,
    pub lrate_decay: f64,
    pub strategy: Strategy,
    /// Sharpness of the SNES rank utilities.
    pub temperature: f64,
    pub n_generations: usize,
}

impl EsConfig {
    /// OpenES settings used for the vector-observation tasks.
    pub fn openes() -> Self {
        Self {
            popsize: 2048,
            sigma_init: 0.03,
            sigma_decay: 1.0,
            sigma_limit: 0.01,
            lrate_init: 0.05,
            lrate_decay: 1.0,
            strategy: Strategy::OpenEs,
            temperature: 20.0,
            n_generations: 2000,
        }
    }

    /// SNES settings used for the grid task.
    pub fn snes() -> Self {
        Self {
            popsize: 2048,
            sigma_init: 0.5,
            sigma_decay: 1.0,
            sigma_limit: 0.01,
            lrate_init: 0.05,
            lrate_decay: 1.0,
            strategy: Strategy::Snes,
            temperature: 20.0,
            n_generations: 5000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.popsize < 2 || self.popsize % 2 != 0 {
            return Err(Error::config(
                "popsize",
                format!("must be even and >= 2, got {}", self.popsize),
            ));
        }
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be positive and finite, got {v}")))
            }
        };
        positive("sigma_init", self.sigma_init)?;
        positive("lrate_init", self.lrate_init)?;
        positive("sigma_decay", self.sigma_decay)?;
        positive("lrate_decay", self.lrate_decay)?;
        positive("temperature", self.temperature)?;
        if !(self.sigma_limit >= 0.0 && self.sigma_limit.is_finite()) {
            return Err(Error::config(
                "sigma_limit",
                format!("must be >= 0, got {}", self.sigma_limit),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sigma {
    Scalar(f32),
    PerCoord(Vec<f32>),
}

impl Sigma {
    #[inline]
    pub fn at(&self, i: usize) -> f32 {
        match self {
            Sigma::Scalar(s) => *s,
            Sigma::PerCoord(v) => v[i],
        }
    }

    pub fn min(&self) -> f32 {
        match self {
            Sigma::Scalar(s) => *s,
            Sigma::PerCoord(v) => v.iter().copied().fold(f32::INFINITY, f32::min),
        }
    }

    pub fn mean(&self) -> f32 {
        match self {
            Sigma::Scalar(s) => *s,
            Sigma::PerCoord(v) => v.iter().sum::<f32>() / v.len().max(1) as f32,
        }
    }
}

/// One generation's population. Noise is stored once per antithetic pair:
/// candidate `2j` uses `+eps_j`, candidate `2j + 1` uses `-eps_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationBatch {
    pub generation: u64,
    mean: Vec<f32>,
    sigma: Sigma,
    pair_noise: Vec<Vec<f32>>,
}

impl PerturbationBatch {
    pub fn len(&self) -> usize {
        2 * self.pair_noise.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pair_noise.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Unit noise of candidate `i`.
    pub fn noise(&self, i: usize) -> Vec<f32> {
        let eps = &self.pair_noise[i / 2];
        if i % 2 == 0 {
            eps.clone()
        } else {
            eps.iter().map(|e| -e).collect()
        }
    }

    /// `mean + sigma * noise(i)`.
    pub fn candidate(&self, i: usize) -> Vec<f32> {
        let mut out = vec![0.0; self.dim()];
        self.candidate_into(i, &mut out);
        out
    }

    pub fn candidate_into(&self, i: usize, out: &mut [f32]) {
        let eps = &self.pair_noise[i / 2];
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        for (k, (o, (&m, &e))) in out.iter_mut().zip(self.mean.iter().zip(eps)).enumerate() {
            *o = m + sign * self.sigma.at(k) * e;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsState {
    pub mean: Vec<f32>,
    pub sigma: Sigma,
    /// OpenES only.
    pub adam: Option<AdamState<f32>>,
    pub lrate: f64,
    pub generation: u64,
    pub seed: u64,
}

impl EsState {
    pub fn new(cfg: &EsConfig, mean: Vec<f32>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if mean.is_empty() {
            return Err(Error::Input("cannot evolve an empty parameter vector".into()));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("initial mean is not finite".into()));
        }
        let sigma0 = cfg.sigma_init.max(cfg.sigma_limit) as f32;
        let (sigma, adam) = match cfg.strategy {
            Strategy::OpenEs => (
                Sigma::Scalar(sigma0),
                Some(AdamState::new(mean.len(), cfg.lrate_init as f32)),
            ),
            Strategy::Snes => (Sigma::PerCoord(vec![sigma0; mean.len()]), None),
        };
        Ok(Self {
            mean,
            sigma,
            adam,
            lrate: cfg.lrate_init,
            generation: 0,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Draws `cfg.popsize` antithetic candidates. The noise depends only on
    /// `(seed, generation)`.
    pub fn ask(&self, cfg: &EsConfig) -> PerturbationBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.generation);
        let pair_noise = (0..cfg.popsize / 2)
            .map(|_| (0..self.dim()).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        PerturbationBatch {
            generation: self.generation,
            mean: self.mean.clone(),
            sigma: self.sigma.clone(),
            pair_noise,
        }
    }

    /// OpenES search-gradient estimate `1 / (P sigma) * sum_i f_i eps_i`
    /// (with `sigma` the batch's mean step size).
    pub fn gradient_estimate(batch: &PerturbationBatch, shaped: &[f64]) -> Result<Vec<f64>> {
        check_lengths(batch, shaped)?;
        let p = batch.len() as f64;
        let scale = 1.0 / (p * f64::from(batch.sigma.mean()));
        let mut g = vec![0.0_f64; batch.dim()];
        for (j, eps) in batch.pair_noise.iter().enumerate() {
            // f_+ eps + f_- (-eps)
            let w = shaped[2 * j] - shaped[2 * j + 1];
            if w == 0.0 {
                continue;
            }
            for (gk, &e) in g.iter_mut().zip(eps) {
                *gk += w * f64::from(e);
            }
        }
        g.iter_mut().for_each(|v| *v *= scale);
        Ok(g)
    }

    /// Updates the search distribution from shaped fitness (higher is
    /// better) and advances the generation counter.
    pub fn tell(&mut self, cfg: &EsConfig, batch: &PerturbationBatch, shaped: &[f64]) -> Result<()> {
        check_lengths(batch, shaped)?;
        if batch.generation != self.generation || batch.dim() != self.dim() {
            return Err(Error::Input(format!(
                "batch from generation {} does not match state at generation {}",
                batch.generation, self.generation
            )));
        }
        if shaped.iter().any(|f| !f.is_finite()) {
            return Err(Error::Input("shaped fitness must be finite".into()));
        }
        match cfg.strategy {
            Strategy::OpenEs => self.tell_openes(cfg, batch, shaped)?,
            Strategy::Snes => self.tell_snes(cfg, batch, shaped),
        }
        self.lrate *= cfg.lrate_decay;
        self.generation += 1;
        Ok(())
    }

    fn tell_openes(&mut self, cfg: &EsConfig, batch: &PerturbationBatch, shaped: &[f64]) -> Result<()> {
        let g = Self::gradient_estimate(batch, shaped)?;
        // Adam descends, so feed the negated ascent direction
        let neg: Vec<f32> = g.iter().map(|&v| -v as f32).collect();
        let adam = self
            .adam
            .get_or_insert_with(|| AdamState::new(self.mean.len(), self.lrate as f32));
        adam.lr = self.lrate as f32;
        adam.step(&mut self.mean, &neg, f32::INFINITY)?;
        let s = match self.sigma {
            Sigma::Scalar(s) => f64::from(s),
            Sigma::PerCoord(_) => unreachable!("OpenES keeps a scalar sigma"),
        };
        self.sigma = Sigma::Scalar((s * cfg.sigma_decay).max(cfg.sigma_limit) as f32);
        Ok(())
    }

    fn tell_snes(&mut self, cfg: &EsConfig, batch: &PerturbationBatch, utilities: &[f64]) {
        let d = self.dim();
        let eta_sigma = snes_sigma_rate(d);
        let mut grad_mu = vec![0.0_f64; d];
        let mut grad_sigma = vec![0.0_f64; d];
        for (j, eps) in batch.pair_noise.iter().enumerate() {
            let (up, down) = (utilities[2 * j], utilities[2 * j + 1]);
            for (k, &e) in eps.iter().enumerate() {
                let e = f64::from(e);
                grad_mu[k] += (up - down) * e;
                grad_sigma[k] += (up + down) * (e * e - 1.0);
            }
        }
        let sigma = match &mut self.sigma {
            Sigma::PerCoord(v) => v,
            Sigma::Scalar(_) => unreachable!("SNES keeps per-coordinate sigma"),
        };
        for k in 0..d {
            let s = f64::from(sigma[k]);
            self.mean[k] += (SNES_MEAN_RATE * s * grad_mu[k]) as f32;
            let next = s * (0.5 * eta_sigma * grad_sigma[k]).exp() * cfg.sigma_decay;
            sigma[k] = next.max(cfg.sigma_limit) as f32;
        }
    }
}

/// SNES mean learning rate (the canonical value).
pub const SNES_MEAN_RATE: f64 = 1.0;

/// Canonical SNES step-size learning rate `(3 + ln d) / (5 sqrt d)`.
pub fn snes_sigma_rate(d: usize) -> f64 {
    let d = d.max(1) as f64;
    (3.0 + d.ln()) / (5.0 * d.sqrt())
}

fn check_lengths(batch: &PerturbationBatch, shaped: &[f64]) -> Result<()> {
    if shaped.len() != batch.len() {
        return Err(Error::Dimension(format!(
            "{} fitness values for a population of {}",
            shaped.len(),
            batch.len()
        )));
    }
    Ok(())
}

/// Fractional ranks in `0..P` (0 worst). Ties share the average of the
/// ranks they span and NaN counts as the worst value.
pub fn average_ranks(raw: &[f64]) -> Vec<f64> {
    let key = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| key(raw[a]).total_cmp(&key(raw[b])).then(a.cmp(&b)));
    let mut ranks = vec![0.0; raw.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && key(raw[order[end]]) == key(raw[order[start]]) {
            end += 1;
        }
        let avg = (start + end - 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Order-preserving fitness transform (larger raw fitness never receives a
/// smaller shaped value).
///
/// OpenES: centered ranks `rank / (P - 1) - 0.5` in `[-0.5, 0.5]`.
/// SNES: utilities `softmax(-20 sigmoid(temperature * (q - 0.5))) - 1/P`
/// where `q` is the rank counted from the best, scaled to `[0, 1]`; tied
/// candidates share the mean utility of their ranks.
pub fn shape_fitness(raw: &[f64], strategy: Strategy, temperature: f64) -> Vec<f64> {
    let p = raw.len();
    if p < 2 {
        return vec![0.0; p];
    }
    let ranks = average_ranks(raw);
    match strategy {
        Strategy::OpenEs => ranks.iter().map(|r| r / (p - 1) as f64 - 0.5).collect(),
        Strategy::Snes => {
            let by_position = snes_utilities(p, temperature);
            // tied groups span [r - h, r + h] around their average rank
            let mut prefix = vec![0.0; p + 1];
            for i in 0..p {
                // ascending rank i (0 worst) is position p - 1 - i from the best
                prefix[i + 1] = prefix[i] + by_position[p - 1 - i];
            }
            let mut counts = std::collections::HashMap::new();
            for r in &ranks {
                *counts.entry(r.to_bits()).or_insert(0usize) += 1;
            }
            ranks
                .iter()
                .map(|&r| {
                    let n = counts[&r.to_bits()];
                    let lo = (r - (n - 1) as f64 / 2.0).round() as usize;
                    (prefix[lo + n] - prefix[lo]) / n as f64
                })
                .collect()
        }
    }
}

/// SNES utilities by position from the best (index 0 best); they sum to 0.
pub fn snes_utilities(p: usize, temperature: f64) -> Vec<f64> {
    let logits: Vec<f64> = (0..p)
        .map(|i| {
            let q = i as f64 / (p - 1).max(1) as f64 - 0.5;
            -20.0 / (1.0 + (-temperature * q).exp())
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.iter().map(|e| e / total - 1.0 / p as f64).collect()
}
