//! The bi-level loop: ES over a synthetic dataset outside, behaviour
//! cloning plus rollouts inside.
//!
//! Each generation asks the ES for a population of perturbed datasets,
//! trains one policy per (candidate, initialization) from scratch on the
//! candidate, scores it by its mean return over a shared set of rollout
//! seeds, and tells the ES the shaped scores. HaDES-F keeps one policy
//! initialization for the whole run; HaDES-R draws `k` fresh ones every
//! generation and averages over them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::dataset::{Actions, InitMode, Provenance, SyntheticDataset};
use crate::env::{rollout_batch, EnvSpec, RolloutOptions};
use crate::error::{Error, Result};
use crate::es::{shape_fitness, EsConfig, EsState};
use crate::matrix::Matrix;
use crate::nn::{Activation, Arch, PolicyParams};
use crate::normalizer::ObservationNormalizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// One fixed policy initialization.
    F,
    /// `k` initializations resampled every generation.
    R,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F" | "f" => Ok(Variant::F),
            "R" | "r" => Ok(Variant::R),
            other => Err(Error::config("variant", format!("expected F or R, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::F => "F",
            Variant::R => "R",
        })
    }
}

/// Behaviour-cloning settings of the inner loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerConfig {
    pub lr: f64,
    pub update_epochs: usize,
    pub max_grad_norm: f64,
    /// Argmax / mean actions during evaluation rollouts.
    pub greedy_act: bool,
    /// Linear decay of the learning rate to zero over the inner loop.
    pub anneal_lr: bool,
    pub width: usize,
    pub activation: Activation,
}

impl InnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("LR", format!("must be positive, got {}", self.lr)));
        }
        if self.update_epochs == 0 {
            return Err(Error::config("UPDATE_EPOCHS", "must be at least 1"));
        }
        if self.width == 0 {
            return Err(Error::config("WIDTH", "must be at least 1"));
        }
        if self.max_grad_norm.is_nan() {
            return Err(Error::config("MAX_GRAD_NORM", "must be a number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HadesConfig {
    pub variant: Variant,
    /// Initializations per candidate for HaDES-R; ignored by HaDES-F.
    pub k: usize,
    pub inner: InnerConfig,
    pub rollouts_per_candidate: usize,
    pub num_eval_envs: usize,
    pub es: EsConfig,
    pub dataset_size: usize,
    pub init: InitMode,
    /// Random-policy episodes used to fit the observation normalizer.
    pub normalizer_episodes: usize,
    /// Stop once the population mean return reaches this value.
    pub target_return: Option<f64>,
}

impl HadesConfig {
    pub fn validate(&self) -> Result<()> {
        self.inner.validate()?;
        self.es.validate()?;
        if self.variant == Variant::R && self.k < 2 {
            return Err(Error::config("k", format!("HaDES-R needs k >= 2, got {}", self.k)));
        }
        if self.rollouts_per_candidate == 0 {
            return Err(Error::config("rollouts_per_candidate", "must be at least 1"));
        }
        if self.num_eval_envs == 0 {
            return Err(Error::config("NUM_ENVS", "must be at least 1"));
        }
        if self.dataset_size == 0 {
            return Err(Error::config("dataset_size", "must be at least 1"));
        }
        Ok(())
    }

    /// Number of policy initializations each candidate is scored over.
    pub fn n_inits(&self) -> usize {
        match self.variant {
            Variant::F => 1,
            Variant::R => self.k,
        }
    }

    pub fn episodes_per_policy(&self) -> usize {
        self.rollouts_per_candidate * self.num_eval_envs
    }
}

/// Population statistics of one generation.
#[derive(Debug, Clone, PartialEq)]
pub struct FitnessReport {
    pub generation: u64,
    /// Per-candidate fitness; NaN marks a diverged inner loop.
    pub fitness: Vec<f64>,
    pub mean: f64,
    pub max: f64,
    pub min: f64,
    pub diverged: usize,
    /// Fitness of the un-perturbed search mean under the same seeds.
    pub center: f64,
    pub wall_ms: u128,
}

impl FitnessReport {
    pub fn new(generation: u64, fitness: Vec<f64>, center: f64, wall_ms: u128) -> Self {
        let finite: Vec<f64> = fitness.iter().copied().filter(|f| f.is_finite()).collect();
        let (mean, max, min) = if finite.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            (
                finite.iter().sum::<f64>() / finite.len() as f64,
                finite.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                finite.iter().copied().fold(f64::INFINITY, f64::min),
            )
        };
        Self {
            generation,
            diverged: fitness.len() - finite.len(),
            fitness,
            mean,
            max,
            min,
            center,
            wall_ms,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dataset: SyntheticDataset,
    pub policy: PolicyParams,
    pub log: Vec<FitnessReport>,
}

/// Result of training a policy on a dataset.
#[derive(Debug, Clone)]
pub struct Trained {
    pub policy: PolicyParams,
    pub final_loss: f32,
    pub diverged: bool,
}

/// Full-batch behaviour cloning: `update_epochs` Adam steps on the whole
/// dataset with global-norm clipping. A non-finite loss or parameter marks
/// the result as diverged.
pub fn inner_train(ds: &SyntheticDataset, init: &PolicyParams, inner: &InnerConfig) -> Result<Trained> {
    let arch = *init.arch();
    if arch.obs_dim != ds.obs_dim() || arch.head != ds.head() {
        return Err(Error::Dimension(format!(
            "policy {:?} cannot train on dataset `{}` ({} features, head {:?})",
            arch,
            ds.task,
            ds.obs_dim(),
            ds.head()
        )));
    }
    let mut policy = init.clone();
    let mut adam = AdamState::<f32>::new(policy.len(), inner.lr as f32);
    let clip = inner.max_grad_norm as f32;
    let mut loss = f32::NAN;
    for epoch in 0..inner.update_epochs {
        let (l, grads) = match &ds.actions {
            Actions::Discrete { labels, .. } => policy.bc_loss_discrete(&ds.states, labels)?,
            Actions::Continuous { values, .. } => policy.bc_loss_continuous(&ds.states, values)?,
        };
        loss = l;
        if !l.is_finite() {
            return Ok(Trained {
                policy,
                final_loss: l,
                diverged: true,
            });
        }
        if inner.anneal_lr {
            let frac = 1.0 - epoch as f64 / inner.update_epochs as f64;
            adam.lr = (inner.lr * frac) as f32;
        }
        adam.step(policy.as_mut_slice(), grads.as_slice(), clip)?;
    }
    let diverged = !policy.is_finite();
    Ok(Trained {
        policy,
        final_loss: loss,
        diverged,
    })
}

/// Behaviour-cloning loss of `policy` on `ds`.
pub fn bc_loss(ds: &SyntheticDataset, policy: &PolicyParams) -> Result<f32> {
    Ok(match &ds.actions {
        Actions::Discrete { labels, .. } => policy.bc_loss_discrete(&ds.states, labels)?.0,
        Actions::Continuous { values, .. } => policy.bc_loss_continuous(&ds.states, values)?.0,
    })
}

/// Mean undiscounted return of `policy` over `seeds`, observing through
/// `normalizer`.
pub fn mean_return(
    spec: &EnvSpec,
    policy: &PolicyParams,
    normalizer: &ObservationNormalizer,
    seeds: &[u64],
    greedy: bool,
) -> Result<f64> {
    let eps = rollout_batch(spec, policy, seeds, RolloutOptions::new(normalizer).greedy(greedy))?;
    Ok(eps.iter().map(|e| e.ret).sum::<f64>() / eps.len() as f64)
}

/// Fitness of one candidate dataset: for every initialization, train by
/// behaviour cloning and average the return over `seeds`; then average
/// over initializations. Any diverged inner loop yields NaN.
pub fn evaluate_candidate(
    ds: &SyntheticDataset,
    inits: &[PolicyParams],
    spec: &EnvSpec,
    inner: &InnerConfig,
    seeds: &[u64],
) -> Result<f64> {
    if inits.is_empty() || seeds.is_empty() {
        return Err(Error::Input("need at least one initialization and one seed".into()));
    }
    let mut total = 0.0;
    for init in inits {
        let t = inner_train(ds, init, inner)?;
        if t.diverged {
            return Ok(f64::NAN);
        }
        total += mean_return(spec, &t.policy, &ds.normalizer, seeds, inner.greedy_act)?;
    }
    Ok(total / inits.len() as f64)
}

/// Deterministic 64-bit mixing of run seed, generation and index.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) const STREAM_NORMALIZER: u64 = 1;
pub(crate) const STREAM_DATASET: u64 = 2;
pub(crate) const STREAM_ES: u64 = 3;
pub(crate) const STREAM_INITS: u64 = 4;
pub(crate) const STREAM_EVAL: u64 = 5;
pub(crate) const STREAM_FINAL: u64 = 6;

/// Rollout seeds shared by every candidate of `generation`.
pub fn generation_seeds(seed: u64, generation: u64, count: usize) -> Vec<u64> {
    (0..count as u64)
        .map(|i| derive_seed(derive_seed(seed, STREAM_EVAL, generation), i, 0))
        .collect()
}

/// Freshly initialized policies for `generation` (HaDES-R) or the fixed
/// one (HaDES-F, same for every generation).
pub fn generation_inits(arch: Arch, cfg: &HadesConfig, seed: u64, generation: u64) -> Vec<PolicyParams> {
    match cfg.variant {
        Variant::F => vec![init_policy(arch, derive_seed(seed, STREAM_INITS, 0))],
        Variant::R => (0..cfg.k as u64)
            .map(|j| init_policy(arch, derive_seed(derive_seed(seed, STREAM_INITS, generation + 1), j, 1)))
            .collect(),
    }
}

pub fn init_policy(arch: Arch, seed: u64) -> PolicyParams {
    PolicyParams::init(arch, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Normalizer and initial dataset of a run.
pub fn initial_dataset(spec: &EnvSpec, cfg: &HadesConfig, seed: u64) -> Result<SyntheticDataset> {
    let normalizer = ObservationNormalizer::fit_random_policy(
        spec,
        cfg.normalizer_episodes,
        derive_seed(seed, STREAM_NORMALIZER, 0),
    );
    SyntheticDataset::init_for_env(
        spec,
        cfg.dataset_size,
        cfg.init,
        &normalizer,
        derive_seed(seed, STREAM_DATASET, 0),
    )
}

/// Runs HaDES on `spec`. `on_generation` sees every report as soon as it
/// is available. Candidates are evaluated on the current rayon pool; the
/// result does not depend on its size.
pub fn run(
    spec: &EnvSpec,
    cfg: &HadesConfig,
    seed: u64,
    on_generation: impl FnMut(&FitnessReport),
) -> Result<RunArtifacts> {
    cfg.validate()?;
    run_with_inits(
        spec,
        cfg,
        seed,
        |arch, g| generation_inits(arch, cfg, seed, g),
        on_generation,
    )
}

/// [`run`] with a custom source of per-generation initializations.
pub(crate) fn run_with_inits(
    spec: &EnvSpec,
    cfg: &HadesConfig,
    seed: u64,
    inits_for: impl Fn(Arch, u64) -> Vec<PolicyParams>,
    on_generation: impl FnMut(&FitnessReport),
) -> Result<RunArtifacts> {
    let template = initial_dataset(spec, cfg, seed)?;
    let arch = template.arch(cfg.inner.width, cfg.inner.activation);
    let score = |ds: &SyntheticDataset, inits: &[PolicyParams], seeds: &[u64]| {
        evaluate_candidate(ds, inits, spec, &cfg.inner, seeds)
    };
    let evolved = evolve(&template, cfg, seed, inits_for, score, on_generation)?;
    let mut dataset = evolved.dataset;
    let final_init = match cfg.variant {
        Variant::F => generation_inits(arch, cfg, seed, 0).remove(0),
        Variant::R => init_policy(arch, derive_seed(seed, STREAM_FINAL, 0)),
    };
    let trained = inner_train(&dataset, &final_init, &cfg.inner)?;
    dataset.meta = provenance(cfg, seed, evolved.generation, &evolved.log);
    Ok(RunArtifacts {
        dataset,
        policy: trained.policy,
        log: evolved.log,
    })
}

pub(crate) struct Evolved {
    pub dataset: SyntheticDataset,
    pub generation: u64,
    pub log: Vec<FitnessReport>,
}

/// The outer loop shared by every fitness function: ask, score the
/// population in parallel, score the search mean, report, tell. Stops early
/// once the population mean reaches `cfg.target_return`.
pub(crate) fn evolve(
    template: &SyntheticDataset,
    cfg: &HadesConfig,
    seed: u64,
    inits_for: impl Fn(Arch, u64) -> Vec<PolicyParams>,
    score: impl Fn(&SyntheticDataset, &[PolicyParams], &[u64]) -> Result<f64> + Sync,
    mut on_generation: impl FnMut(&FitnessReport),
) -> Result<Evolved> {
    let arch = template.arch(cfg.inner.width, cfg.inner.activation);
    let mut es = EsState::new(&cfg.es, template.to_vector(), derive_seed(seed, STREAM_ES, 0))?;
    let n_eval = cfg.episodes_per_policy();
    let mut log = Vec::new();

    for generation in 0..cfg.es.n_generations as u64 {
        let start = std::time::Instant::now();
        let batch = es.ask(&cfg.es);
        let inits = inits_for(arch, generation);
        let seeds = generation_seeds(seed, generation, n_eval);
        let fitness: Vec<f64> = (0..batch.len())
            .into_par_iter()
            .map(|i| score(&template.from_vector(&batch.candidate(i))?, &inits, &seeds))
            .collect::<Result<_>>()?;
        let center = score(&template.from_vector(&es.mean)?, &inits, &seeds)?;
        let report = FitnessReport::new(generation, fitness, center, start.elapsed().as_millis());
        on_generation(&report);
        let reached = cfg.target_return.is_some_and(|t| report.mean >= t);
        if !reached {
            let shaped = shape_fitness(&report.fitness, cfg.es.strategy, cfg.es.temperature);
            es.tell(&cfg.es, &batch, &shaped)?;
        }
        log.push(report);
        if reached {
            break;
        }
    }
    Ok(Evolved {
        dataset: template.from_vector(&es.mean)?,
        generation: es.generation,
        log,
    })
}

pub(crate) fn provenance(cfg: &HadesConfig, seed: u64, generation: u64, log: &[FitnessReport]) -> Provenance {
    Provenance {
        generation,
        fitness: log.last().map_or(f64::NAN, |r| r.center),
        seed,
        width: cfg.inner.width as u32,
        activation: cfg.inner.activation,
        lr: cfg.inner.lr,
        epochs: cfg.inner.update_epochs as u32,
        variant: format!("hades-{}", cfg.variant).to_lowercase(),
    }
}

/// Direct neuroevolution baseline: the same ES optimizes the policy
/// parameters themselves, scored by mean return over the same per-generation
/// seeds. Returns the final mean policy and the log.
pub fn run_direct_es(
    spec: &EnvSpec,
    cfg: &HadesConfig,
    seed: u64,
    mut on_generation: impl FnMut(&FitnessReport),
) -> Result<(PolicyParams, Vec<FitnessReport>)> {
    cfg.validate()?;
    let template = initial_dataset(spec, cfg, seed)?;
    let normalizer = template.normalizer.clone();
    let arch = template.arch(cfg.inner.width, cfg.inner.activation);
    let theta0 = generation_inits(arch, cfg, seed, 0).remove(0);
    let mut es = EsState::new(&cfg.es, theta0.as_slice().to_vec(), derive_seed(seed, STREAM_ES, 0))?;
    let n_eval = cfg.episodes_per_policy();
    let mut log = Vec::new();
    for generation in 0..cfg.es.n_generations as u64 {
        let start = std::time::Instant::now();
        let batch = es.ask(&cfg.es);
        let seeds = generation_seeds(seed, generation, n_eval);
        let score = |flat: Vec<f32>| -> Result<f64> {
            let p = PolicyParams::from_flat(arch, flat)?;
            mean_return(spec, &p, &normalizer, &seeds, cfg.inner.greedy_act)
        };
        let fitness: Vec<f64> = (0..batch.len())
            .into_par_iter()
            .map(|i| score(batch.candidate(i)))
            .collect::<Result<_>>()?;
        let center = score(es.mean.clone())?;
        let report = FitnessReport::new(generation, fitness, center, start.elapsed().as_millis());
        on_generation(&report);
        let reached = cfg.target_return.is_some_and(|t| report.mean >= t);
        if !reached {
            let shaped = shape_fitness(&report.fitness, cfg.es.strategy, cfg.es.temperature);
            es.tell(&cfg.es, &batch, &shaped)?;
        }
        log.push(report);
        if reached {
            break;
        }
    }
    Ok((PolicyParams::from_flat(arch, es.mean)?, log))
}

/// One row of a distillation-budget sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetPoint {
    pub dataset_size: usize,
    pub seed: u64,
    /// Population mean fitness of the last generation.
    pub final_mean: f64,
    /// Fitness of the final search mean.
    pub final_center: f64,
}

/// Runs HaDES once per `(size, seed)`; sizes below the action count are
/// rejected up front.
pub fn budget_sweep(spec: &EnvSpec, cfg: &HadesConfig, sizes: &[usize], seeds: &[u64]) -> Result<Vec<BudgetPoint>> {
    if let crate::env::ActionSpace::Discrete { n } = spec.action_space {
        if let Some(&bad) = sizes.iter().find(|&&s| s < n) {
            return Err(Error::config(
                "sizes",
                format!("dataset size {bad} cannot cover {n} actions"),
            ));
        }
    }
    let mut out = Vec::new();
    for &n in sizes {
        for &seed in seeds {
            let c = HadesConfig {
                dataset_size: n,
                ..cfg.clone()
            };
            let art = run(spec, &c, seed, |_| {})?;
            let last = art.log.last();
            out.push(BudgetPoint {
                dataset_size: n,
                seed,
                final_mean: last.map_or(f64::NAN, |r| r.mean),
                final_center: last.map_or(f64::NAN, |r| r.center),
            });
        }
    }
    Ok(out)
}

/// Accuracy of a discrete policy on its own dataset.
pub fn dataset_accuracy(ds: &SyntheticDataset, policy: &PolicyParams) -> Result<f64> {
    let labels = ds
        .labels()
        .ok_or_else(|| Error::Input("accuracy needs a discrete dataset".into()))?;
    Ok(argmax_accuracy(&policy.forward(&ds.states)?, labels))
}

pub(crate) fn argmax_accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    let hits = logits
        .iter_rows()
        .zip(labels)
        .filter(|(row, &l)| {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
            best == l
        })
        .count();
    hits as f64 / labels.len().max(1) as f64
}
