//! Synthetic state-action datasets: the object the outer loop evolves.
//!
//! States are stored in normalized observation space together with the
//! normalizer that defines that space. Discrete labels are assigned once,
//! class-grouped (`label_i = floor(i * C / N)`), and never evolved; the
//! evolvable vector is the row-major state block followed, for continuous
//! actions, by the row-major action block.

mod dump;
mod file;

pub use dump::{dump_csv, dump_text};
pub use file::{FORMAT_VERSION, MAGIC};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::env::{ActionSpace, Embedding, EnvSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Activation, Arch, Head};
use crate::normalizer::{random_action, ObservationNormalizer};

/// How the initial dataset is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Standard-normal states in normalized space.
    Random,
    /// States visited by a uniform-random policy.
    Sampled,
    /// Per-class means of a labelled dataset (classification only).
    ClassMean,
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(InitMode::Random),
            "sampled" => Ok(InitMode::Sampled),
            "class_mean" => Ok(InitMode::ClassMean),
            other => Err(Error::config("init", format!("unknown init mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Actions {
    Discrete {
        n_classes: usize,
        labels: Vec<usize>,
    },
    Continuous {
        low: Vec<f32>,
        high: Vec<f32>,
        values: Matrix,
    },
}

impl Actions {
    pub fn dim(&self) -> usize {
        match self {
            Actions::Discrete { n_classes, .. } => *n_classes,
            Actions::Continuous { low, .. } => low.len(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Actions::Discrete { .. })
    }
}

/// Rows and columns owned by one source task inside a (possibly merged)
/// dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub task: String,
    pub row_offset: usize,
    pub rows: usize,
    pub obs_offset: usize,
    pub obs_dim: usize,
    pub act_offset: usize,
    pub act_dim: usize,
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub generation: u64,
    pub fitness: f64,
    pub seed: u64,
    pub width: u32,
    pub activation: Activation,
    pub lr: f64,
    pub epochs: u32,
    /// Free-form producer tag, e.g. `hades-f`.
    pub variant: String,
}

impl Default for Provenance {
    fn default() -> Self {
        Self {
            generation: 0,
            fitness: 0.0,
            seed: 0,
            width: 0,
            activation: Activation::Tanh,
            lr: 0.0,
            epochs: 0,
            variant: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub task: String,
    pub states: Matrix,
    pub actions: Actions,
    pub normalizer: ObservationNormalizer,
    pub blocks: Vec<Block>,
    pub meta: Provenance,
}

/// Class-grouped uniform labels: row `i` of `n` gets `floor(i * c / n)`.
pub fn uniform_labels(n: usize, n_classes: usize) -> Result<Vec<usize>> {
    if n_classes < 2 {
        return Err(Error::Input(format!("need at least 2 classes, got {n_classes}")));
    }
    if n < n_classes {
        return Err(Error::config(
            "dataset_size",
            format!("{n} rows cannot cover {n_classes} classes"),
        ));
    }
    Ok((0..n).map(|i| i * n_classes / n).collect())
}

impl SyntheticDataset {
    /// Assembles and validates a single-block dataset.
    pub fn new(
        task: impl Into<String>,
        states: Matrix,
        actions: Actions,
        normalizer: ObservationNormalizer,
    ) -> Result<Self> {
        let task = task.into();
        let block = Block {
            task: task.clone(),
            row_offset: 0,
            rows: states.rows(),
            obs_offset: 0,
            obs_dim: states.cols(),
            act_offset: 0,
            act_dim: actions.dim(),
        };
        let ds = Self {
            task,
            states,
            actions,
            normalizer,
            blocks: vec![block],
            meta: Provenance::default(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.states.rows();
        if n == 0 {
            return Err(Error::Input("dataset needs at least one row".into()));
        }
        if !self.states.is_finite() {
            return Err(Error::Input("dataset states must be finite".into()));
        }
        if self.normalizer.dim() != self.obs_dim() {
            return Err(Error::Dimension(format!(
                "normalizer covers {} dims, states have {}",
                self.normalizer.dim(),
                self.obs_dim()
            )));
        }
        match &self.actions {
            Actions::Discrete { n_classes, labels } => {
                if labels.len() != n {
                    return Err(Error::Dimension(format!("{} labels for {n} rows", labels.len())));
                }
                if let Some(bad) = labels.iter().find(|&&l| l >= *n_classes) {
                    return Err(Error::Input(format!(
                        "label {bad} out of range for {n_classes} classes"
                    )));
                }
            }
            Actions::Continuous { low, high, values } => {
                if low.len() != high.len() || values.cols() != low.len() || values.rows() != n {
                    return Err(Error::Dimension(
                        "continuous action block has inconsistent shape".into(),
                    ));
                }
                if !values.is_finite() {
                    return Err(Error::Input("dataset actions must be finite".into()));
                }
            }
        }
        Ok(())
    }

    /// Initial dataset for an environment. `normalizer` defines the stored
    /// coordinate frame.
    pub fn init_for_env(
        spec: &EnvSpec,
        n: usize,
        mode: InitMode,
        normalizer: &ObservationNormalizer,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("dataset_size", "must be at least 1"));
        }
        if normalizer.dim() != spec.obs_dim {
            return Err(Error::Dimension("normalizer does not match the environment".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = spec.obs_dim;
        let states = match mode {
            InitMode::Random => {
                let data = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
                Matrix::from_vec(n, d, data)?
            }
            InitMode::Sampled => {
                let raw = sample_visited_states(spec, n, &mut rng);
                let mut data = vec![0.0; n * d];
                for (r, obs) in raw.iter().enumerate() {
                    normalizer.normalize(obs, &mut data[r * d..(r + 1) * d]);
                }
                Matrix::from_vec(n, d, data)?
            }
            InitMode::ClassMean => {
                return Err(Error::config(
                    "init",
                    "class_mean needs a labelled dataset (classification mode only)",
                ))
            }
        };
        let actions = match &spec.action_space {
            ActionSpace::Discrete { n: c } => Actions::Discrete {
                n_classes: *c,
                labels: uniform_labels(n, *c)?,
            },
            ActionSpace::Continuous { low, high } => {
                let mut values = Matrix::zeros(n, low.len());
                for r in 0..n {
                    for (j, (&lo, &hi)) in low.iter().zip(high).enumerate() {
                        let spread = Normal::new(0.0, 0.1 * f64::from(hi - lo) / 2.0).expect("positive");
                        let centre = f64::from(lo + hi) / 2.0;
                        values.set(r, j, (centre + spread.sample(&mut rng)) as f32);
                    }
                }
                Actions::Continuous {
                    low: low.clone(),
                    high: high.clone(),
                    values,
                }
            }
        };
        Self::new(spec.id.as_str(), states, actions, normalizer.clone())
    }

    /// Initial classification dataset with `per_class` rows per class, in
    /// the frame of `normalizer`. `ClassMean` copies the per-class means of
    /// `features` (already normalized); `Random` draws standard normals.
    #[allow(clippy::too_many_arguments)]
    pub fn init_for_classes(
        task: &str,
        features: &Matrix,
        labels: &[usize],
        n_classes: usize,
        per_class: usize,
        mode: InitMode,
        normalizer: &ObservationNormalizer,
        seed: u64,
    ) -> Result<Self> {
        if per_class == 0 {
            return Err(Error::config("dataset_size", "need at least one row per class"));
        }
        let n = per_class * n_classes;
        let labels_out = uniform_labels(n, n_classes)?;
        let d = features.cols();
        let states = match mode {
            InitMode::ClassMean => {
                let means = class_means(features, labels, n_classes)?;
                let mut m = Matrix::zeros(n, d);
                for (r, &c) in labels_out.iter().enumerate() {
                    m.row_mut(r).copy_from_slice(means.row(c));
                }
                m
            }
            InitMode::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Matrix::from_vec(n, d, (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect())?
            }
            InitMode::Sampled => {
                // one random training example of each row's class
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut m = Matrix::zeros(n, d);
                for (r, &c) in labels_out.iter().enumerate() {
                    let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
                    if members.is_empty() {
                        return Err(Error::Input(format!("class {c} has no examples")));
                    }
                    let pick = members[rng.random_range(0..members.len())];
                    m.row_mut(r).copy_from_slice(features.row(pick));
                }
                m
            }
        };
        Self::new(
            task,
            states,
            Actions::Discrete {
                n_classes,
                labels: labels_out,
            },
            normalizer.clone(),
        )
    }

    pub fn n_rows(&self) -> usize {
        self.states.rows()
    }

    pub fn obs_dim(&self) -> usize {
        self.states.cols()
    }

    pub fn head(&self) -> Head {
        match &self.actions {
            Actions::Discrete { n_classes, .. } => Head::Discrete { n_actions: *n_classes },
            Actions::Continuous { low, .. } => Head::Continuous { action_dim: low.len() },
        }
    }

    /// Policy architecture that consumes this dataset.
    pub fn arch(&self, width: usize, activation: Activation) -> Arch {
        Arch::new(self.obs_dim(), width, activation, self.head())
    }

    /// Length of the evolvable vector: `N * obs_dim`, plus `N * |a|` for
    /// continuous actions.
    pub fn vector_len(&self) -> usize {
        let n = self.n_rows();
        n * self.obs_dim()
            + match &self.actions {
                Actions::Discrete { .. } => 0,
                Actions::Continuous { low, .. } => n * low.len(),
            }
    }

    pub fn to_vector(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(self.vector_len());
        v.extend_from_slice(self.states.as_slice());
        if let Actions::Continuous { values, .. } = &self.actions {
            v.extend_from_slice(values.as_slice());
        }
        v
    }

    /// Dataset with the evolvable parts replaced by `flat`; labels,
    /// normalizer, blocks and provenance come from `self`.
    pub fn from_vector(&self, flat: &[f32]) -> Result<Self> {
        if flat.len() != self.vector_len() {
            return Err(Error::Dimension(format!(
                "vector of length {} for a dataset of {} evolvable values",
                flat.len(),
                self.vector_len()
            )));
        }
        let mut out = self.clone();
        let split = self.n_rows() * self.obs_dim();
        out.states.as_mut_slice().copy_from_slice(&flat[..split]);
        if let Actions::Continuous { values, .. } = &mut out.actions {
            values.as_mut_slice().copy_from_slice(&flat[split..]);
        }
        Ok(out)
    }

    /// Discrete labels, or `None` for continuous actions.
    pub fn labels(&self) -> Option<&[usize]> {
        match &self.actions {
            Actions::Discrete { labels, .. } => Some(labels),
            Actions::Continuous { .. } => None,
        }
    }

    pub fn block(&self, task: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.task == task)
    }

    /// Observation and action offsets of `task` inside the merged space.
    pub fn embedding(&self, task: &str) -> Result<Embedding> {
        let b = self
            .block(task)
            .ok_or_else(|| Error::Input(format!("dataset `{}` has no block for `{task}`", self.task)))?;
        Ok(Embedding {
            obs_offset: b.obs_offset,
            act_offset: b.act_offset,
        })
    }

    /// Block-diagonal union: `self` occupies the left observation and action
    /// blocks, `other` the right ones; every other entry is zero.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.actions.is_discrete() != other.actions.is_discrete() {
            return Err(Error::Input("cannot merge discrete and continuous datasets".into()));
        }
        for b in &other.blocks {
            if self.block(&b.task).is_some() {
                return Err(Error::Input(format!("both datasets contain task `{}`", b.task)));
            }
        }
        let (n1, n2) = (self.n_rows(), other.n_rows());
        let (s1, s2) = (self.obs_dim(), other.obs_dim());
        let (a1, a2) = (self.actions.dim(), other.actions.dim());
        let n = n1 + n2;

        let mut states = Matrix::zeros(n, s1 + s2);
        for r in 0..n1 {
            states.row_mut(r)[..s1].copy_from_slice(self.states.row(r));
        }
        for r in 0..n2 {
            states.row_mut(n1 + r)[s1..].copy_from_slice(other.states.row(r));
        }

        let actions = match (&self.actions, &other.actions) {
            (
                Actions::Discrete {
                    n_classes: c1,
                    labels: l1,
                },
                Actions::Discrete {
                    n_classes: c2,
                    labels: l2,
                },
            ) => Actions::Discrete {
                n_classes: c1 + c2,
                labels: l1.iter().copied().chain(l2.iter().map(|l| l + c1)).collect(),
            },
            (
                Actions::Continuous {
                    low: lo1,
                    high: hi1,
                    values: v1,
                },
                Actions::Continuous {
                    low: lo2,
                    high: hi2,
                    values: v2,
                },
            ) => {
                let mut values = Matrix::zeros(n, a1 + a2);
                for r in 0..n1 {
                    values.row_mut(r)[..a1].copy_from_slice(v1.row(r));
                }
                for r in 0..n2 {
                    values.row_mut(n1 + r)[a1..].copy_from_slice(v2.row(r));
                }
                Actions::Continuous {
                    low: [lo1.as_slice(), lo2].concat(),
                    high: [hi1.as_slice(), hi2].concat(),
                    values,
                }
            }
            _ => unreachable!("kinds checked above"),
        };

        let blocks = self
            .blocks
            .iter()
            .cloned()
            .chain(other.blocks.iter().map(|b| Block {
                row_offset: b.row_offset + n1,
                obs_offset: b.obs_offset + s1,
                act_offset: b.act_offset + a1,
                ..b.clone()
            }))
            .collect();
        let merged = Self {
            task: format!("{}+{}", self.task, other.task),
            states,
            actions,
            normalizer: self.normalizer.concat(&other.normalizer),
            blocks,
            meta: Provenance {
                variant: "merged".into(),
                ..Provenance::default()
            },
        };
        merged.validate()?;
        Ok(merged)
    }

    /// Raw (de-normalized) features of row `r`.
    pub fn raw_row(&self, r: usize) -> Vec<f32> {
        let mut out = vec![0.0; self.obs_dim()];
        self.normalizer.denormalize(self.states.row(r), &mut out);
        out
    }

    /// Block that owns row `r`.
    pub fn row_block(&self, r: usize) -> Option<&Block> {
        self.blocks
            .iter()
            .find(|b| (b.row_offset..b.row_offset + b.rows).contains(&r))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Per-class feature means; errors when a class has no examples.
pub fn class_means(features: &Matrix, labels: &[usize], n_classes: usize) -> Result<Matrix> {
    if labels.len() != features.rows() {
        return Err(Error::Dimension("labels and features differ in length".into()));
    }
    let d = features.cols();
    let mut sums = vec![0.0f64; n_classes * d];
    let mut counts = vec![0usize; n_classes];
    for (row, &c) in features.iter_rows().zip(labels) {
        if c >= n_classes {
            return Err(Error::Input(format!("label {c} out of range")));
        }
        counts[c] += 1;
        for (s, &v) in sums[c * d..(c + 1) * d].iter_mut().zip(row) {
            *s += f64::from(v);
        }
    }
    if let Some(c) = counts.iter().position(|&k| k == 0) {
        return Err(Error::Input(format!("class {c} has no examples")));
    }
    let data = sums
        .iter()
        .enumerate()
        .map(|(i, s)| (s / counts[i / d] as f64) as f32)
        .collect();
    Matrix::from_vec(n_classes, d, data)
}

/// `n` raw observations drawn uniformly from uniform-random-policy
/// episodes.
fn sample_visited_states<R: Rng>(spec: &EnvSpec, n: usize, rng: &mut R) -> Vec<Vec<f32>> {
    let mut pool = Vec::new();
    let mut episode = 0u64;
    while pool.len() < 4 * n || episode < 4 {
        let (mut env, mut obs) = spec.reset(rng.random::<u64>());
        pool.push(obs.clone());
        while !env.is_done() {
            let a = random_action(&spec.action_space, rng);
            env.step(&a, &mut obs).expect("random actions are valid");
            pool.push(obs.clone());
        }
        episode += 1;
    }
    (0..n).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect()
}
