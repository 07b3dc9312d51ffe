//! Dataset distillation for classification: the same outer loop, with the
//! negative training-set cross-entropy of a classifier trained on the
//! synthetic set as fitness, and test accuracy as the final report.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dataset::SyntheticDataset;
use crate::engine::{
    argmax_accuracy, derive_seed, evolve, generation_inits, init_policy, inner_train, provenance, FitnessReport,
    HadesConfig, InnerConfig, STREAM_DATASET, STREAM_FINAL,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::PolicyParams;
use crate::normalizer::ObservationNormalizer;

const DIGITS_CSV: &str = include_str!("../data/digits8x8.csv");

/// Labelled examples; rows `0..n_train` are the training split, the rest
/// the test split.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub n_train: usize,
}

/// One split as borrowed features and labels.
#[derive(Debug, Clone, Copy)]
pub struct Split<'a> {
    pub features: &'a Matrix,
    pub labels: &'a [usize],
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, n_classes: usize, n_train: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::Dimension(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        if n_train > labels.len() {
            return Err(Error::Input(format!(
                "training split of {n_train} exceeds {} rows",
                labels.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
            n_train,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Copies out the training and test splits.
    pub fn splits(&self) -> (Matrix, Vec<usize>, Matrix, Vec<usize>) {
        let train: Vec<usize> = (0..self.n_train).collect();
        let test: Vec<usize> = (self.n_train..self.len()).collect();
        (
            self.features.select_rows(&train),
            self.labels[..self.n_train].to_vec(),
            self.features.select_rows(&test),
            self.labels[self.n_train..].to_vec(),
        )
    }

    /// Shuffles rows with `seed` and puts `test_fraction` of them in the
    /// test split.
    pub fn shuffled_split(&self, test_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::config("test_fraction", "must lie in [0, 1)"));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (self.len() as f64 * test_fraction).round() as usize;
        Self::new(
            self.features.select_rows(&order),
            order.iter().map(|&i| self.labels[i]).collect(),
            self.n_classes,
            self.len() - n_test,
        )
    }

    /// Reads `label,f0,f1,...` rows with a header line; every row is
    /// training data until [`shuffled_split`](Self::shuffled_split).
    pub fn from_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, &path.display().to_string())
    }

    /// [`from_csv`](Self::from_csv) over any reader; `name` labels errors.
    pub fn from_csv_reader(input: impl std::io::Read, name: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        let mut d = None;
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f32>()
                    .map_err(|_| Error::Input(format!("{}: row {}: bad number `{s}`", name, i + 1)))
            };
            let mut it = rec.iter();
            let label = it
                .next()
                .ok_or_else(|| Error::Input(format!("{}: empty row {}", name, i + 1)))?;
            let label = parse(label)?;
            if label < 0.0 || label.fract() != 0.0 {
                return Err(Error::Input(format!(
                    "{}: row {}: label must be a class id",
                    name,
                    i + 1
                )));
            }
            let row: Vec<f32> = it.map(parse).collect::<Result<_>>()?;
            if *d.get_or_insert(row.len()) != row.len() {
                return Err(Error::Input(format!(
                    "{}: row {} has {} features",
                    name,
                    i + 1,
                    row.len()
                )));
            }
            labels.push(label as usize);
            feats.extend(row);
        }
        let d = d.ok_or_else(|| Error::Input(format!("{name}: no rows")))?;
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let n = labels.len();
        Self::new(Matrix::from_vec(n, d, feats)?, labels, n_classes, n)
    }

    /// Reads an IDX image file (`u8` pixels, any rank >= 2) and an IDX
    /// label file; features are pixel values scaled to [0, 1].
    pub fn from_idx(images: &Path, labels: &Path) -> Result<Self> {
        let (dims, pixels) = read_idx(images)?;
        let (ldims, lab) = read_idx(labels)?;
        if dims.len() < 2 || ldims.len() != 1 || ldims[0] != dims[0] {
            return Err(Error::Input("IDX image and label files do not match".into()));
        }
        let n = dims[0];
        let d: usize = dims[1..].iter().product();
        let labels: Vec<usize> = lab.into_iter().map(usize::from).collect();
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let feats = pixels.into_iter().map(|p| f32::from(p) / 255.0).collect();
        Self::new(Matrix::from_vec(n, d, feats)?, labels, n_classes, n)
    }

    /// The bundled 8x8 grayscale digits (1797 images, pixel values 0..16).
    pub fn digits() -> Self {
        Self::from_csv_reader(DIGITS_CSV.as_bytes(), "digits8x8.csv").expect("bundled data parses")
    }

    /// Two isotropic unit-variance Gaussian blobs in 2-D at `(±sep/2, 0)`,
    /// `per_class` training and `per_class` test points each.
    pub fn two_gaussians(per_class: usize, sep: f32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| {
            let mut feats = Vec::with_capacity(4 * n);
            let mut labels = Vec::with_capacity(2 * n);
            for i in 0..2 * n {
                let c = i % 2;
                let cx = if c == 0 { -sep / 2.0 } else { sep / 2.0 };
                let x: f32 = StandardNormal.sample(&mut rng);
                let y: f32 = StandardNormal.sample(&mut rng);
                feats.extend([cx + x, y]);
                labels.push(c);
            }
            (feats, labels)
        };
        let (mut f, mut l) = draw(per_class);
        let (ft, lt) = draw(per_class);
        f.extend(ft);
        l.extend(lt);
        Self::new(
            Matrix::from_vec(4 * per_class, 2, f).expect("shape"),
            l,
            2,
            2 * per_class,
        )
        .expect("valid toy data")
    }
}

fn read_idx(path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Input(format!("{}: {m}", path.display()));
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(bad("not an IDX file"));
    }
    if bytes[2] != 0x08 {
        return Err(bad("only unsigned-byte IDX data is supported"));
    }
    let rank = usize::from(bytes[3]);
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize)
        .collect();
    let total: usize = dims.iter().product();
    if bytes.len() != header + total {
        return Err(bad("payload size does not match its dimensions"));
    }
    Ok((dims, bytes[header..].to_vec()))
}

/// Negative mean cross-entropy of `policy` on a labelled split.
pub fn classifier_fitness(policy: &PolicyParams, split: Split<'_>) -> Result<f64> {
    Ok(-f64::from(policy.bc_loss_discrete(split.features, split.labels)?.0))
}

/// Fitness of a synthetic set: train one classifier per initialization on
/// it and score each by negative training-set cross-entropy; average over
/// initializations. Divergence yields NaN.
pub fn supervised_fitness(
    ds: &SyntheticDataset,
    inits: &[PolicyParams],
    train: Split<'_>,
    inner: &InnerConfig,
) -> Result<f64> {
    if ds.obs_dim() != train.features.cols() {
        return Err(Error::Dimension(format!(
            "synthetic set has {} features, training data {}",
            ds.obs_dim(),
            train.features.cols()
        )));
    }
    if inits.is_empty() {
        return Err(Error::Input("need at least one initialization".into()));
    }
    let mut total = 0.0;
    for init in inits {
        let t = inner_train(ds, init, inner)?;
        if t.diverged {
            return Ok(f64::NAN);
        }
        total += classifier_fitness(&t.policy, train)?;
    }
    Ok(total / inits.len() as f64)
}

/// Test accuracies of independently initialized classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
}

impl AccuracyReport {
    pub fn new(accuracies: Vec<f64>) -> Self {
        let n = accuracies.len() as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let var = if accuracies.len() > 1 {
            accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            accuracies,
            mean,
            std: var.sqrt(),
        }
    }
}

/// Trains `m` classifiers from fresh seeded initializations on `ds` (in
/// parallel) and reports their accuracy on `test`.
pub fn evaluate_accuracy(
    ds: &SyntheticDataset,
    test: Split<'_>,
    inner: &InnerConfig,
    m: usize,
    seed: u64,
) -> Result<AccuracyReport> {
    if m == 0 {
        return Err(Error::config("eval_classifiers", "must be at least 1"));
    }
    let arch = ds.arch(inner.width, inner.activation);
    let accs: Vec<f64> = (0..m as u64)
        .into_par_iter()
        .map(|j| {
            let init = init_policy(arch, derive_seed(derive_seed(seed, STREAM_FINAL, 1), j, 2));
            let t = inner_train(ds, &init, inner)?;
            if t.diverged {
                return Ok(0.0);
            }
            Ok(argmax_accuracy(&t.policy.forward(test.features)?, test.labels))
        })
        .collect::<Result<_>>()?;
    Ok(AccuracyReport::new(accs))
}

/// Accuracy of assigning each test point to the class with the nearest
/// training mean.
pub fn nearest_class_mean_accuracy(data: &LabeledDataset) -> Result<f64> {
    let (xtr, ytr, xte, yte) = data.splits();
    let means = crate::dataset::class_means(&xtr, &ytr, data.n_classes)?;
    let hits = xte
        .iter_rows()
        .zip(&yte)
        .filter(|(x, &y)| {
            let dist = |c: usize| -> f32 { means.row(c).iter().zip(x.iter()).map(|(m, v)| (m - v) * (m - v)).sum() };
            (0..data.n_classes).min_by(|&a, &b| dist(a).total_cmp(&dist(b))) == Some(y)
        })
        .count();
    Ok(hits as f64 / yte.len().max(1) as f64)
}

/// Settings of a classification distillation run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyConfig {
    /// Outer loop and classifier settings; env-only fields are ignored.
    pub hades: HadesConfig,
    pub per_class: usize,
    /// Classifiers trained on the final set for the accuracy report.
    pub eval_classifiers: usize,
}

/// Result of [`distill_classification`].
#[derive(Debug, Clone)]
pub struct ClassifyArtifacts {
    pub dataset: SyntheticDataset,
    pub accuracy: AccuracyReport,
    pub log: Vec<FitnessReport>,
}

/// Distills `data`'s training split into `per_class` rows per class, then
/// reports test accuracy of classifiers trained on the result. Features
/// are standardized with training-split statistics, which are stored with
/// the synthetic set.
pub fn distill_classification(
    task: &str,
    data: &LabeledDataset,
    cfg: &ClassifyConfig,
    seed: u64,
    on_generation: impl FnMut(&FitnessReport),
) -> Result<ClassifyArtifacts> {
    cfg.hades.validate()?;
    let (xtr, ytr, xte, yte) = data.splits();
    if ytr.is_empty() || yte.is_empty() {
        return Err(Error::Input("both training and test splits must be non-empty".into()));
    }
    let normalizer = ObservationNormalizer::fit(&xtr);
    let (ntr, nte) = (normalizer.normalize_matrix(&xtr), normalizer.normalize_matrix(&xte));
    let template = SyntheticDataset::init_for_classes(
        task,
        &ntr,
        &ytr,
        data.n_classes,
        cfg.per_class,
        cfg.hades.init,
        &normalizer,
        derive_seed(seed, STREAM_DATASET, 0),
    )?;
    let train = Split {
        features: &ntr,
        labels: &ytr,
    };
    let inner = &cfg.hades.inner;
    let evolved = evolve(
        &template,
        &cfg.hades,
        seed,
        |arch, g| generation_inits(arch, &cfg.hades, seed, g),
        |ds, inits, _| supervised_fitness(ds, inits, train, inner),
        on_generation,
    )?;
    let mut dataset = evolved.dataset;
    dataset.meta = provenance(&cfg.hades, seed, evolved.generation, &evolved.log);
    let test = Split {
        features: &nte,
        labels: &yte,
    };
    let accuracy = evaluate_accuracy(&dataset, test, inner, cfg.eval_classifiers, seed)?;
    Ok(ClassifyArtifacts {
        dataset,
        accuracy,
        log: evolved.log,
    })
}

/// Test accuracy of classifiers trained on the initial synthetic set
/// alone, before any outer-loop step.
pub fn initial_accuracy(task: &str, data: &LabeledDataset, cfg: &ClassifyConfig, seed: u64) -> Result<AccuracyReport> {
    let zero = ClassifyConfig {
        hades: HadesConfig {
            es: crate::es::EsConfig {
                n_generations: 0,
                ..cfg.hades.es.clone()
            },
            ..cfg.hades.clone()
        },
        ..cfg.clone()
    };
    Ok(distill_classification(task, data, &zero, seed, |_| {})?.accuracy)
}

#[cfg(test)]
mod tests;
