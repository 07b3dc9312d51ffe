//! Policy rollouts, single and batched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Action, ActionSpace, Env, EnvSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Head, PolicyParams};
use crate::normalizer::ObservationNormalizer;

const LOG_STD_RANGE: (f32, f32) = (-20.0, 2.0);

/// Where an environment's observation and action blocks sit inside a wider
/// (multi-task) policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Embedding {
    pub obs_offset: usize,
    pub act_offset: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct RolloutOptions<'a> {
    /// Argmax / mean actions instead of sampling.
    pub greedy: bool,
    /// Applied to raw observations; dimension equals the env's obs_dim.
    pub normalizer: &'a ObservationNormalizer,
    pub embedding: Embedding,
}

impl<'a> RolloutOptions<'a> {
    pub fn new(normalizer: &'a ObservationNormalizer) -> Self {
        Self {
            greedy: false,
            normalizer,
            embedding: Embedding::default(),
        }
    }

    pub fn greedy(mut self, greedy: bool) -> Self {
        self.greedy = greedy;
        self
    }

    pub fn embedding(mut self, embedding: Embedding) -> Self {
        self.embedding = embedding;
        self
    }
}

/// Undiscounted return and length of one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Episode {
    pub ret: f64,
    pub len: usize,
}

pub fn rollout(spec: &EnvSpec, policy: &PolicyParams, seed: u64, opts: RolloutOptions<'_>) -> Result<Episode> {
    Ok(rollout_batch(spec, policy, &[seed], opts)?[0])
}

/// Runs one episode per seed in lockstep, batching the policy forward pass.
/// Each episode draws actions from its own seeded stream, so the result is
/// identical to running the seeds one at a time.
pub fn rollout_batch(
    spec: &EnvSpec,
    policy: &PolicyParams,
    seeds: &[u64],
    opts: RolloutOptions<'_>,
) -> Result<Vec<Episode>> {
    check_compatible(spec, policy, &opts)?;
    let in_dim = policy.arch().obs_dim;
    let obs_off = opts.embedding.obs_offset;
    let act_off = opts.embedding.act_offset;

    struct Slot {
        env: Env,
        obs: Vec<f32>,
        rng: ChaCha8Rng,
        ret: f64,
    }
    let mut slots: Vec<Slot> = seeds
        .iter()
        .map(|&seed| {
            let (env, obs) = spec.reset(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            Slot {
                env,
                obs,
                rng,
                ret: 0.0,
            }
        })
        .collect();

    let mut active: Vec<usize> = (0..slots.len()).collect();
    let mut input = Vec::new();
    while !active.is_empty() {
        input.clear();
        input.resize(active.len() * in_dim, 0.0);
        for (row, &i) in active.iter().enumerate() {
            let dst = &mut input[row * in_dim + obs_off..row * in_dim + obs_off + spec.obs_dim];
            opts.normalizer.normalize(&slots[i].obs, dst);
        }
        let batch = Matrix::from_vec(active.len(), in_dim, std::mem::take(&mut input))?;
        let out = policy.forward(&batch)?;
        input = batch.into_vec();

        for (row, &i) in active.iter().enumerate() {
            let slot = &mut slots[i];
            let action = select_action(
                &spec.action_space,
                policy.arch().head,
                out.row(row),
                act_off,
                opts.greedy,
                &mut slot.rng,
            );
            let step = slot.env.step(&action, &mut slot.obs)?;
            slot.ret += step.reward;
        }
        active.retain(|&i| !slots[i].env.is_done());
    }

    Ok(slots
        .into_iter()
        .map(|s| Episode {
            ret: s.ret,
            len: s.env.steps(),
        })
        .collect())
}

fn check_compatible(spec: &EnvSpec, policy: &PolicyParams, opts: &RolloutOptions<'_>) -> Result<()> {
    let arch = policy.arch();
    if opts.normalizer.dim() != spec.obs_dim {
        return Err(Error::Dimension(format!(
            "normalizer covers {} dims, {} observes {}",
            opts.normalizer.dim(),
            spec.id,
            spec.obs_dim
        )));
    }
    if opts.embedding.obs_offset + spec.obs_dim > arch.obs_dim {
        return Err(Error::Dimension(format!(
            "{} observations ({} dims at offset {}) do not fit a {}-input policy",
            spec.id, spec.obs_dim, opts.embedding.obs_offset, arch.obs_dim
        )));
    }
    let fits = match (&spec.action_space, arch.head) {
        (ActionSpace::Discrete { n }, Head::Discrete { n_actions }) => opts.embedding.act_offset + n <= n_actions,
        (ActionSpace::Continuous { low, .. }, Head::Continuous { action_dim }) => {
            opts.embedding.act_offset + low.len() <= action_dim
        }
        _ => false,
    };
    if !fits {
        return Err(Error::Dimension(format!(
            "policy head {:?} does not cover the {} action space at offset {}",
            arch.head, spec.id, opts.embedding.act_offset
        )));
    }
    Ok(())
}

fn select_action<R: Rng>(
    space: &ActionSpace,
    head: Head,
    out: &[f32],
    act_off: usize,
    greedy: bool,
    rng: &mut R,
) -> Action {
    match space {
        ActionSpace::Discrete { n } => {
            let logits = &out[act_off..act_off + n];
            if greedy {
                let mut best = 0;
                for (i, &z) in logits.iter().enumerate() {
                    if z > logits[best] {
                        best = i;
                    }
                }
                return Action::Discrete(best);
            }
            let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let weights: Vec<f64> = logits.iter().map(|&z| f64::from(z - max).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    return Action::Discrete(i);
                }
                u -= w;
            }
            Action::Discrete(n - 1)
        }
        ActionSpace::Continuous { low, high } => {
            let total_dim = match head {
                Head::Continuous { action_dim } => action_dim,
                Head::Discrete { .. } => unreachable!("checked by check_compatible"),
            };
            let a = low
                .iter()
                .zip(high)
                .enumerate()
                .map(|(j, (&lo, &hi))| {
                    let mean = out[act_off + j];
                    let v = if greedy {
                        mean
                    } else {
                        let log_std = out[total_dim + act_off + j].clamp(LOG_STD_RANGE.0, LOG_STD_RANGE.1);
                        let z: f32 = rng.sample(StandardNormal);
                        mean + log_std.exp() * z
                    };
                    // NaN outputs fall back to the centre of the box
                    if v.is_nan() {
                        0.5 * (lo + hi)
                    } else {
                        v.clamp(lo, hi)
                    }
                })
                .collect();
            Action::Continuous(a)
        }
    }
}
