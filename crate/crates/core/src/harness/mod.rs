//! Commands behind the CLI: each reads its inputs, runs, and writes its
//! artifacts (datasets, policies, tidy CSV) into an output directory.
//!
//! Every CSV starts with a `#schema=<name>/<version>` line followed by a
//! header row. Wall-clock timings go to a separate `timing.csv` so that all
//! other outputs are byte-identical across runs with the same config.

mod config;
mod policy_file;

pub use config::RunConfig;
pub use policy_file::{load_policy, policy_from_bytes, policy_to_bytes, save_policy, POLICY_MAGIC, POLICY_VERSION};

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{dump_csv, dump_text, Actions, SyntheticDataset};
use crate::engine::{self, derive_seed, init_policy, inner_train, mean_return, FitnessReport, InnerConfig};
use crate::env::{Embedding, EnvSpec, RolloutOptions};
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::supervised::{self, AccuracyReport, LabeledDataset};

pub const GENERATIONS_SCHEMA: &str = "#schema=generations/1";
pub const TIMING_SCHEMA: &str = "#schema=timing/1";
pub const RETRAIN_SCHEMA: &str = "#schema=retrain/1";
pub const RETRAIN_SUMMARY_SCHEMA: &str = "#schema=retrain-summary/1";
pub const MULTITASK_SCHEMA: &str = "#schema=multitask/1";
pub const BUDGET_SCHEMA: &str = "#schema=budget/1";
pub const ACCURACY_SCHEMA: &str = "#schema=accuracy/1";

/// Writes `schema`, a header and `rows` as CSV.
pub fn write_csv<I, R>(path: &Path, schema: &str, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut buf = format!("{schema}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.into_iter().collect::<Vec<_>>())?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn create_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_generations(path: &Path, log: &[FitnessReport]) -> Result<()> {
    write_csv(
        path,
        GENERATIONS_SCHEMA,
        &["generation", "mean", "max", "min", "center", "diverged"],
        log.iter().map(|r| {
            vec![
                r.generation.to_string(),
                r.mean.to_string(),
                r.max.to_string(),
                r.min.to_string(),
                r.center.to_string(),
                r.diverged.to_string(),
            ]
        }),
    )
}

pub fn write_timing(path: &Path, log: &[FitnessReport]) -> Result<()> {
    write_csv(
        path,
        TIMING_SCHEMA,
        &["generation", "wall_ms"],
        log.iter()
            .map(|r| vec![r.generation.to_string(), r.wall_ms.to_string()]),
    )
}

/// Writes the resolved config and, if given, the input file verbatim.
fn echo_config(out: &Path, cfg: &RunConfig, input: Option<&str>) -> Result<()> {
    write_file(&out.join("config.toml"), cfg.to_toml())?;
    if let Some(text) = input {
        write_file(&out.join("config.input.toml"), text)?;
    }
    Ok(())
}

/// Files written by [`cmd_distill`].
#[derive(Debug, Clone)]
pub struct DistillOutcome {
    pub dataset: PathBuf,
    pub policy: PathBuf,
    pub log: Vec<FitnessReport>,
}

/// Runs HaDES and writes `dataset.bdd`, `policy.bdp`, `generations.csv`,
/// `timing.csv` and the echoed config; `export_text` adds `dataset.txt`
/// and `dataset.csv`.
pub fn cmd_distill(
    cfg: &RunConfig,
    input: Option<&str>,
    out: &Path,
    export_text: bool,
    progress: impl FnMut(&FitnessReport),
) -> Result<DistillOutcome> {
    let (spec, hades) = cfg.validate_control()?;
    create_dir(out)?;
    echo_config(out, cfg, input)?;
    let art = engine::run(&spec, &hades, cfg.seed, progress)?;
    let dataset = out.join("dataset.bdd");
    let policy = out.join("policy.bdp");
    art.dataset.save(&dataset)?;
    save_policy(&art.policy, &policy)?;
    write_generations(&out.join("generations.csv"), &art.log)?;
    write_timing(&out.join("timing.csv"), &art.log)?;
    if export_text {
        write_file(&out.join("dataset.txt"), dump_text(&art.dataset))?;
        write_file(&out.join("dataset.csv"), dump_csv(&art.dataset))?;
    }
    Ok(DistillOutcome {
        dataset,
        policy,
        log: art.log,
    })
}

/// How retraining hyperparameters are chosen per width.
#[derive(Debug, Clone, PartialEq)]
pub enum Sampling {
    /// `trials` draws of a log-uniform LR in `lr` and a uniform epoch
    /// count in `epochs` (inclusive).
    Random {
        trials: usize,
        lr: (f64, f64),
        epochs: (usize, usize),
    },
    /// Every listed `(lr, epochs)` pair.
    Grid(Vec<(f64, usize)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrainSpec {
    pub widths: Vec<usize>,
    pub sampling: Sampling,
    /// Evaluation episodes per trained policy.
    pub episodes: usize,
    pub max_grad_norm: f64,
    /// Defaults to the activation the dataset was evolved with.
    pub activation: Option<Activation>,
    pub greedy: bool,
    pub seed: u64,
}

impl RetrainSpec {
    /// Widths as given, 3 decades of LR around `[1e-3, 1]`, epochs in
    /// `[100, 500]`.
    pub fn sweep(widths: Vec<usize>, trials: usize, seed: u64) -> Self {
        Self {
            widths,
            sampling: Sampling::Random {
                trials,
                lr: (1e-3, 1.0),
                epochs: (100, 500),
            },
            episodes: 8,
            max_grad_norm: 2.0,
            activation: None,
            greedy: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::config("widths", "need at least one positive width"));
        }
        if self.episodes == 0 {
            return Err(Error::config("episodes", "must be at least 1"));
        }
        match &self.sampling {
            Sampling::Random { trials, lr, epochs } => {
                if *trials == 0 {
                    return Err(Error::config("trials", "must be at least 1"));
                }
                if !(lr.0 > 0.0 && lr.0 <= lr.1 && lr.1.is_finite()) {
                    return Err(Error::config("lr", "need 0 < min <= max"));
                }
                if epochs.0 == 0 || epochs.0 > epochs.1 {
                    return Err(Error::config("epochs", "need 1 <= min <= max"));
                }
            }
            Sampling::Grid(pairs) => {
                if pairs.is_empty() || pairs.iter().any(|&(lr, e)| !(lr > 0.0) || e == 0) {
                    return Err(Error::config("grid", "need positive (lr, epochs) pairs"));
                }
            }
        }
        Ok(())
    }

    fn trials(&self, width: usize) -> Vec<(f64, usize)> {
        match &self.sampling {
            Sampling::Grid(pairs) => pairs.clone(),
            Sampling::Random { trials, lr, epochs } => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, width as u64, 11));
                let (lo, hi) = (lr.0.ln(), lr.1.ln());
                (0..*trials)
                    .map(|_| {
                        let l = (lo + (hi - lo) * rng.random::<f64>()).exp();
                        (l, rng.random_range(epochs.0..=epochs.1))
                    })
                    .collect()
            }
        }
    }

    /// Initialization seed of trial `trial` at `width`.
    pub fn init_seed(&self, width: usize, trial: usize) -> u64 {
        derive_seed(derive_seed(self.seed, width as u64, 12), trial as u64, 0)
    }

    /// Evaluation episode seeds, shared by all trials.
    pub fn eval_seeds(&self) -> Vec<u64> {
        (0..self.episodes as u64)
            .map(|i| derive_seed(self.seed, 13, i))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrainRow {
    pub width: usize,
    pub trial: usize,
    pub lr: f64,
    pub epochs: usize,
    pub ret: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WidthSummary {
    pub width: usize,
    pub kept: usize,
    /// Median return of the better half of trials.
    pub median: f64,
    pub mean: f64,
}

/// The control task a single-task dataset was distilled for.
pub fn dataset_env(ds: &SyntheticDataset) -> Result<EnvSpec> {
    if ds.blocks.len() != 1 {
        return Err(Error::Input(format!(
            "dataset `{}` is merged from {} tasks; use eval-multitask",
            ds.task,
            ds.blocks.len()
        )));
    }
    EnvSpec::from_name(&ds.task)
}

/// Trains fresh policies of every width on `ds` with sampled (or listed)
/// learning rates and epoch counts and records their returns. Rows are
/// sorted by width, then trial index.
pub fn retrain(ds: &SyntheticDataset, spec: &RetrainSpec) -> Result<Vec<RetrainRow>> {
    spec.validate()?;
    let env = dataset_env(ds)?;
    let seeds = spec.eval_seeds();
    let activation = spec.activation.unwrap_or(ds.meta.activation);
    let mut jobs = Vec::new();
    for &width in &spec.widths {
        for (trial, (lr, epochs)) in spec.trials(width).into_iter().enumerate() {
            jobs.push((width, trial, lr, epochs));
        }
    }
    jobs.into_par_iter()
        .map(|(width, trial, lr, epochs)| {
            let inner = InnerConfig {
                lr,
                update_epochs: epochs,
                max_grad_norm: spec.max_grad_norm,
                greedy_act: spec.greedy,
                anneal_lr: false,
                width,
                activation,
            };
            let init = init_policy(ds.arch(width, activation), spec.init_seed(width, trial));
            let t = inner_train(ds, &init, &inner)?;
            let ret = if t.diverged {
                f64::NAN
            } else {
                mean_return(&env, &t.policy, &ds.normalizer, &seeds, spec.greedy)?
            };
            Ok(RetrainRow {
                width,
                trial,
                lr,
                epochs,
                ret,
            })
        })
        .collect()
}

/// Per-width statistics of the better half of trials (diverged trials
/// count as the worst).
pub fn summarize_top_half(rows: &[RetrainRow]) -> Vec<WidthSummary> {
    let mut widths: Vec<usize> = rows.iter().map(|r| r.width).collect();
    widths.dedup();
    widths
        .into_iter()
        .map(|width| {
            let mut rets: Vec<f64> = rows
                .iter()
                .filter(|r| r.width == width)
                .map(|r| if r.ret.is_nan() { f64::NEG_INFINITY } else { r.ret })
                .collect();
            rets.sort_by(|a, b| b.total_cmp(a));
            let kept = rets.len().div_ceil(2);
            let top = &rets[..kept];
            let median = if kept % 2 == 1 {
                top[kept / 2]
            } else {
                (top[kept / 2 - 1] + top[kept / 2]) / 2.0
            };
            WidthSummary {
                width,
                kept,
                median,
                mean: top.iter().sum::<f64>() / kept as f64,
            }
        })
        .collect()
}

/// Retrain sweep over a saved dataset; writes `retrain.csv` and
/// `retrain_summary.csv`. The dataset file is only read.
pub fn cmd_retrain(dataset: &Path, spec: &RetrainSpec, out: &Path) -> Result<Vec<WidthSummary>> {
    spec.validate()?;
    let ds = SyntheticDataset::load(dataset)?;
    create_dir(out)?;
    let rows = retrain(&ds, spec)?;
    write_csv(
        &out.join("retrain.csv"),
        RETRAIN_SCHEMA,
        &["width", "trial", "lr", "epochs", "return"],
        rows.iter().map(|r| {
            vec![
                r.width.to_string(),
                r.trial.to_string(),
                r.lr.to_string(),
                r.epochs.to_string(),
                r.ret.to_string(),
            ]
        }),
    )?;
    let summary = summarize_top_half(&rows);
    write_csv(
        &out.join("retrain_summary.csv"),
        RETRAIN_SUMMARY_SCHEMA,
        &["width", "kept", "median", "mean"],
        summary.iter().map(|s| {
            vec![
                s.width.to_string(),
                s.kept.to_string(),
                s.median.to_string(),
                s.mean.to_string(),
            ]
        }),
    )?;
    Ok(summary)
}

/// Merges datasets in the given order and saves the result.
pub fn cmd_merge(paths: &[PathBuf], out: &Path) -> Result<SyntheticDataset> {
    let (first, rest) = paths
        .split_first()
        .ok_or_else(|| Error::Input("merge needs at least two datasets".into()))?;
    if rest.is_empty() {
        return Err(Error::Input("merge needs at least two datasets".into()));
    }
    let mut merged = SyntheticDataset::load(first)?;
    for p in rest {
        merged = merged.merge(&SyntheticDataset::load(p)?)?;
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    merged.save(out)?;
    Ok(merged)
}

/// Rows of one block of a merged dataset, still in the merged coordinate
/// frame.
pub fn block_rows(merged: &SyntheticDataset, task: &str) -> Result<SyntheticDataset> {
    let b = merged
        .block(task)
        .ok_or_else(|| Error::Input(format!("no block `{task}` in dataset")))?;
    let idx: Vec<usize> = (b.row_offset..b.row_offset + b.rows).collect();
    let actions = match &merged.actions {
        Actions::Discrete { n_classes, labels } => Actions::Discrete {
            n_classes: *n_classes,
            labels: idx.iter().map(|&i| labels[i]).collect(),
        },
        Actions::Continuous { low, high, values } => Actions::Continuous {
            low: low.clone(),
            high: high.clone(),
            values: values.select_rows(&idx),
        },
    };
    SyntheticDataset::new(
        task,
        merged.states.select_rows(&idx),
        actions,
        merged.normalizer.clone(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultitaskRow {
    /// `correct`, `wrong` or `merged`.
    pub condition: &'static str,
    pub env: String,
    pub mean_return: f64,
    /// `mean_return` over the `correct` condition's mean return on the
    /// same env (1 for `correct` itself; NaN when that baseline is not
    /// positive).
    pub normalized: f64,
}

/// Trains one policy per seed on each block alone and on the whole merged
/// dataset, and evaluates every policy on both tasks. Rows come in the
/// order (env, condition) with conditions `correct`, `wrong`, `merged`.
pub fn eval_multitask(
    merged: &SyntheticDataset,
    inner: &InnerConfig,
    seeds: &[u64],
    episodes: usize,
) -> Result<Vec<MultitaskRow>> {
    if merged.blocks.len() != 2 {
        return Err(Error::Input(format!(
            "multi-task evaluation needs a dataset merged from exactly 2 tasks, got {}",
            merged.blocks.len()
        )));
    }
    if seeds.is_empty() || episodes == 0 {
        return Err(Error::config("seeds", "need at least one seed and one episode"));
    }
    let tasks: Vec<String> = merged.blocks.iter().map(|b| b.task.clone()).collect();
    let single: Vec<SyntheticDataset> = tasks.iter().map(|t| block_rows(merged, t)).collect::<Result<_>>()?;
    let arch = merged.arch(inner.width, inner.activation);
    // [seed][train set: block 0, block 1, merged] -> policy
    let policies: Vec<Vec<crate::nn::PolicyParams>> = seeds
        .par_iter()
        .map(|&s| {
            let init = init_policy(arch, derive_seed(s, 4, 0));
            [&single[0], &single[1], merged]
                .into_iter()
                .map(|ds| {
                    let t = inner_train(ds, &init, inner)?;
                    if t.diverged {
                        return Err(Error::Input(format!(
                            "training on `{}` diverged for seed {s}; lower LR",
                            ds.task
                        )));
                    }
                    Ok(t.policy)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (e, task) in tasks.iter().enumerate() {
        let spec = EnvSpec::from_name(task)?;
        let b = &merged.blocks[e];
        let norm = merged.normalizer.slice(b.obs_offset, b.obs_dim);
        let emb = Embedding {
            obs_offset: b.obs_offset,
            act_offset: b.act_offset,
        };
        let score = |set: usize| -> Result<f64> {
            let per_seed: Vec<f64> = seeds
                .par_iter()
                .zip(&policies)
                .map(|(&s, p)| {
                    let eps: Vec<u64> = (0..episodes as u64).map(|i| derive_seed(s, 5, i)).collect();
                    let opts = RolloutOptions::new(&norm).greedy(inner.greedy_act).embedding(emb);
                    let r = crate::env::rollout_batch(&spec, &p[set], &eps, opts)?;
                    Ok(r.iter().map(|x| x.ret).sum::<f64>() / r.len() as f64)
                })
                .collect::<Result<_>>()?;
            Ok(per_seed.iter().sum::<f64>() / per_seed.len() as f64)
        };
        let correct = score(e)?;
        let wrong = score(1 - e)?;
        let both = score(2)?;
        for (condition, r) in [("correct", correct), ("wrong", wrong), ("merged", both)] {
            let normalized = match condition {
                "correct" => 1.0,
                _ if correct > 0.0 => r / correct,
                _ => f64::NAN,
            };
            rows.push(MultitaskRow {
                condition,
                env: task.clone(),
                mean_return: r,
                normalized,
            });
        }
    }
    Ok(rows)
}

pub fn cmd_eval_multitask(
    merged: &Path,
    inner: &InnerConfig,
    seeds: &[u64],
    episodes: usize,
    out: &Path,
) -> Result<Vec<MultitaskRow>> {
    inner.validate()?;
    let ds = SyntheticDataset::load(merged)?;
    let rows = eval_multitask(&ds, inner, seeds, episodes)?;
    create_dir(out)?;
    write_csv(
        &out.join("multitask.csv"),
        MULTITASK_SCHEMA,
        &["condition", "env", "mean_return", "normalized"],
        rows.iter().map(|r| {
            vec![
                r.condition.to_string(),
                r.env.clone(),
                r.mean_return.to_string(),
                r.normalized.to_string(),
            ]
        }),
    )?;
    Ok(rows)
}

pub fn cmd_budget_sweep(
    cfg: &RunConfig,
    sizes: &[usize],
    seeds: &[u64],
    input: Option<&str>,
    out: &Path,
) -> Result<Vec<engine::BudgetPoint>> {
    let (spec, hades) = cfg.validate_control()?;
    if sizes.is_empty() || seeds.is_empty() {
        return Err(Error::config("sizes", "need at least one size and one seed"));
    }
    let points = engine::budget_sweep(&spec, &hades, sizes, seeds)?;
    create_dir(out)?;
    echo_config(out, cfg, input)?;
    write_csv(
        &out.join("budget.csv"),
        BUDGET_SCHEMA,
        &["dataset_size", "seed", "final_mean", "final_center"],
        points.iter().map(|p| {
            vec![
                p.dataset_size.to_string(),
                p.seed.to_string(),
                p.final_mean.to_string(),
                p.final_center.to_string(),
            ]
        }),
    )?;
    Ok(points)
}

/// Loads classification data named by `data`: `gaussians`, `digits`, a
/// CSV path, or `idx:<images>,<labels>`. The split is a seeded shuffle.
pub fn load_labeled(data: &str, test_fraction: f64, seed: u64) -> Result<LabeledDataset> {
    let split_seed = derive_seed(seed, 14, 0);
    match data {
        "gaussians" => Ok(LabeledDataset::two_gaussians(500, 3.0, split_seed)),
        "digits" => LabeledDataset::digits().shuffled_split(test_fraction, split_seed),
        other => {
            let raw = match other.strip_prefix("idx:") {
                Some(pair) => {
                    let (img, lab) = pair
                        .split_once(',')
                        .ok_or_else(|| Error::config("data", "expected idx:<images>,<labels>"))?;
                    LabeledDataset::from_idx(Path::new(img), Path::new(lab))?
                }
                None => LabeledDataset::from_csv(Path::new(other))?,
            };
            raw.shuffled_split(test_fraction, split_seed)
        }
    }
}

/// Outcome of [`cmd_classify_distill`].
#[derive(Debug, Clone)]
pub struct ClassifyOutcome {
    pub accuracy: AccuracyReport,
    pub nearest_mean: f64,
    pub log: Vec<FitnessReport>,
}

/// Classification distillation; writes `dataset.bdd`, `generations.csv`,
/// `timing.csv`, `accuracy.csv` (one row per evaluation classifier) and
/// `accuracy_summary.csv`.
pub fn cmd_classify_distill(
    cfg: &RunConfig,
    input: Option<&str>,
    out: &Path,
    progress: impl FnMut(&FitnessReport),
) -> Result<ClassifyOutcome> {
    let ccfg = cfg.validate_classify()?;
    let name = cfg.data.as_deref().expect("validated");
    let data = load_labeled(name, cfg.test_fraction, cfg.seed)?;
    create_dir(out)?;
    echo_config(out, cfg, input)?;
    let task = Path::new(name)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("classification");
    let art = supervised::distill_classification(task, &data, &ccfg, cfg.seed, progress)?;
    let nearest_mean = supervised::nearest_class_mean_accuracy(&data)?;
    art.dataset.save(&out.join("dataset.bdd"))?;
    write_generations(&out.join("generations.csv"), &art.log)?;
    write_timing(&out.join("timing.csv"), &art.log)?;
    write_csv(
        &out.join("accuracy.csv"),
        ACCURACY_SCHEMA,
        &["classifier", "accuracy"],
        art.accuracy
            .accuracies
            .iter()
            .enumerate()
            .map(|(i, a)| vec![i.to_string(), a.to_string()]),
    )?;
    write_csv(
        &out.join("accuracy_summary.csv"),
        "#schema=accuracy-summary/1",
        &["mean", "std", "classifiers", "nearest_mean_oracle"],
        [vec![
            art.accuracy.mean.to_string(),
            art.accuracy.std.to_string(),
            art.accuracy.accuracies.len().to_string(),
            nearest_mean.to_string(),
        ]],
    )?;
    Ok(ClassifyOutcome {
        accuracy: art.accuracy,
        nearest_mean,
        log: art.log,
    })
}

/// Human-readable dump of a dataset; with `csv_out`, also writes the
/// plotting CSV there.
pub fn cmd_dump(dataset: &Path, csv_out: Option<&Path>) -> Result<String> {
    let ds = SyntheticDataset::load(dataset)?;
    if let Some(p) = csv_out {
        write_file(p, dump_csv(&ds))?;
    }
    Ok(dump_text(&ds))
}

#[cfg(test)]
mod tests;
