use proptest::prelude::{prop_assert, proptest};

use super::*;
use crate::dataset::InitMode;
use crate::engine::Variant;
use crate::es::EsConfig;
use crate::nn::{Activation, Arch, Head};

fn inner(width: usize) -> InnerConfig {
    InnerConfig {
        lr: 0.01,
        update_epochs: 100,
        max_grad_norm: 1.0,
        greedy_act: true,
        anneal_lr: false,
        width,
        activation: Activation::Tanh,
    }
}

fn cfg(init: InitMode, gens: usize) -> ClassifyConfig {
    ClassifyConfig {
        hades: HadesConfig {
            variant: Variant::F,
            k: 2,
            inner: inner(16),
            rollouts_per_candidate: 1,
            num_eval_envs: 1,
            es: EsConfig {
                popsize: 16,
                sigma_init: 0.1,
                n_generations: gens,
                ..EsConfig::openes()
            },
            dataset_size: 2,
            init,
            normalizer_episodes: 1,
            target_return: None,
        },
        per_class: 1,
        eval_classifiers: 5,
    }
}

fn toy_template(data: &LabeledDataset, mode: InitMode, seed: u64) -> (SyntheticDataset, Matrix, Vec<usize>) {
    let (xtr, ytr, _, _) = data.splits();
    let norm = ObservationNormalizer::fit(&xtr);
    let ntr = norm.normalize_matrix(&xtr);
    let ds = SyntheticDataset::init_for_classes("toy", &ntr, &ytr, 2, 1, mode, &norm, seed).unwrap();
    (ds, ntr, ytr)
}

#[test]
fn class_means_are_fitter_than_random_rows() {
    let data = LabeledDataset::two_gaussians(200, 4.0, 0);
    let (means, ntr, ytr) = toy_template(&data, InitMode::ClassMean, 0);
    let train = Split {
        features: &ntr,
        labels: &ytr,
    };
    let init = init_policy(means.arch(16, Activation::Tanh), 1);
    let fm = supervised_fitness(&means, std::slice::from_ref(&init), train, &inner(16)).unwrap();
    let mut wins = 0;
    for seed in 0..10 {
        let (random, _, _) = toy_template(&data, InitMode::Random, seed);
        let fr = supervised_fitness(&random, std::slice::from_ref(&init), train, &inner(16)).unwrap();
        wins += usize::from(fm > fr);
    }
    assert!(wins >= 8, "class means won {wins}/10");
}

#[test]
fn zero_classifier_scores_minus_log_classes() {
    let feats = Matrix::from_vec(3, 2, vec![1.0, 2.0, -3.0, 0.5, 0.0, 7.0]).unwrap();
    for c in [2usize, 3, 10] {
        let labels = vec![0, 1, c - 1];
        let zero = PolicyParams::zeros(Arch::new(2, 4, Activation::Relu, Head::Discrete { n_actions: c }));
        let f = classifier_fitness(
            &zero,
            Split {
                features: &feats,
                labels: &labels,
            },
        )
        .unwrap();
        assert!((f + (c as f64).ln()).abs() < 1e-6, "{f}");
    }
}

#[test]
fn fitness_is_deterministic_and_checks_dimensions() {
    let data = LabeledDataset::two_gaussians(50, 3.0, 1);
    let (ds, ntr, ytr) = toy_template(&data, InitMode::Random, 2);
    let train = Split {
        features: &ntr,
        labels: &ytr,
    };
    let init = [init_policy(ds.arch(8, Activation::Tanh), 3)];
    let a = supervised_fitness(&ds, &init, train, &inner(8)).unwrap();
    let b = supervised_fitness(&ds, &init, train, &inner(8)).unwrap();
    assert_eq!(a, b);
    let wide = Matrix::zeros(ytr.len(), 3);
    let bad = Split {
        features: &wide,
        labels: &ytr,
    };
    assert!(matches!(
        supervised_fitness(&ds, &init, bad, &inner(8)),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn nearest_mean_oracle_on_separated_blobs() {
    // Bayes accuracy of two unit Gaussians 4 apart is Phi(2) ~ 0.977.
    let data = LabeledDataset::two_gaussians(2000, 4.0, 3);
    let acc = nearest_class_mean_accuracy(&data).unwrap();
    assert!((acc - 0.977).abs() < 0.01, "{acc}");
}

#[test]
fn distillation_keeps_labels_and_improves_fitness() {
    let data = LabeledDataset::two_gaussians(100, 2.0, 4);
    let art = distill_classification("toy", &data, &cfg(InitMode::Random, 15), 0, |_| {}).unwrap();
    assert_eq!(art.dataset.labels().unwrap(), &[0, 1]);
    assert_eq!(art.log.len(), 15);
    assert!(art.log.last().unwrap().center > art.log[0].center);
    assert_eq!(art.accuracy.accuracies.len(), 5);
    let again = distill_classification("toy", &data, &cfg(InitMode::Random, 15), 0, |_| {}).unwrap();
    assert_eq!(again.dataset, art.dataset);
    assert_eq!(again.accuracy, art.accuracy);
}

#[test]
fn accuracy_spread_shrinks_with_more_classifiers() {
    // The standard error of the mean accuracy over m classifiers scales as
    // 1/sqrt(m); compare the spread of means at m = 5 and m = 20 over
    // repeated seeds.
    let data = LabeledDataset::two_gaussians(100, 1.5, 5);
    let (ds, _, _) = toy_template(&data, InitMode::Random, 0);
    let (_, _, xte, yte) = data.splits();
    let nte = ds.normalizer.normalize_matrix(&xte);
    let test = Split {
        features: &nte,
        labels: &yte,
    };
    let spread = |m: usize| {
        let means: Vec<f64> = (0..40)
            .map(|s| evaluate_accuracy(&ds, test, &inner(16), m, s).unwrap().mean)
            .collect();
        AccuracyReport::new(means).std
    };
    let (s5, s20) = (spread(5), spread(20));
    let ratio = s5 / s20;
    assert!((1.3..3.2).contains(&ratio), "ratio {ratio}, expected about 2");
}

#[test]
fn csv_and_idx_loaders() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    std::fs::write(&csv, "label,a,b\n1,0.5,2\n0,1,-1\n2,3,3\n").unwrap();
    let d = LabeledDataset::from_csv(&csv).unwrap();
    assert_eq!((d.len(), d.dim(), d.n_classes), (3, 2, 3));
    assert_eq!(d.features.row(1), &[1.0, -1.0]);
    std::fs::write(&csv, "label,a\n0.5,1\n").unwrap();
    assert!(LabeledDataset::from_csv(&csv).is_err());

    let img = dir.path().join("img.idx");
    let lab = dir.path().join("lab.idx");
    let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 1];
    bytes.extend([0, 255, 51, 0]);
    std::fs::write(&img, &bytes).unwrap();
    std::fs::write(&lab, [0, 0, 8, 1, 0, 0, 0, 2, 1, 0]).unwrap();
    let d = LabeledDataset::from_idx(&img, &lab).unwrap();
    assert_eq!(d.labels, vec![1, 0]);
    assert_eq!(d.features.row(0), &[0.0, 1.0]);
    assert!((d.features.get(1, 0) - 0.2).abs() < 1e-6);
    std::fs::write(&lab, [0, 0, 8, 1, 0, 0, 0, 3, 1, 0, 1]).unwrap();
    assert!(LabeledDataset::from_idx(&img, &lab).is_err());
}

#[test]
fn shuffled_split_is_disjoint_and_complete() {
    let data = LabeledDataset::two_gaussians(30, 2.0, 0);
    let s = data.shuffled_split(0.25, 9).unwrap();
    assert_eq!(s.len(), data.len());
    assert_eq!(s.n_train, 90);
    let key = |m: &Matrix, r: usize| (m.get(r, 0).to_bits(), m.get(r, 1).to_bits());
    let mut a: Vec<_> = (0..data.len()).map(|r| key(&data.features, r)).collect();
    let mut b: Vec<_> = (0..s.len()).map(|r| key(&s.features, r)).collect();
    a.sort_unstable();
    b.sort_unstable();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn fitness_ignores_training_row_order(rot in 0usize..40, seed in 0u64..20) {
        let data = LabeledDataset::two_gaussians(20, 2.0, seed);
        let (ds, ntr, ytr) = toy_template(&data, InitMode::Random, seed);
        let init = [init_policy(ds.arch(8, Activation::Tanh), seed)];
        let cfg = InnerConfig { update_epochs: 10, ..inner(8) };
        let f = supervised_fitness(&ds, &init, Split { features: &ntr, labels: &ytr }, &cfg).unwrap();
        let perm: Vec<usize> = (0..ytr.len()).map(|i| (i + rot) % ytr.len()).collect();
        let px = ntr.select_rows(&perm);
        let py: Vec<usize> = perm.iter().map(|&i| ytr[i]).collect();
        let g = supervised_fitness(&ds, &init, Split { features: &px, labels: &py }, &cfg).unwrap();
        prop_assert!((f - g).abs() <= 1e-5 * f.abs().max(1.0), "{} vs {}", f, g);
    }
}
