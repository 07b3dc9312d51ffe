use super::*;
use crate::dataset::InitMode;
use crate::env::EnvId;
use crate::normalizer::ObservationNormalizer;

fn tiny(env: &str) -> RunConfig {
    RunConfig {
        env: Some(env.into()),
        popsize: 8,
        n_generations: 2,
        update_epochs: 10,
        width: 8,
        normalizer_episodes: 2,
        ..RunConfig::default()
    }
}

fn env_ds(id: EnvId, n: usize, seed: u64) -> SyntheticDataset {
    let spec = EnvSpec::new(id);
    let norm = ObservationNormalizer::fit_random_policy(&spec, 4, seed);
    SyntheticDataset::init_for_env(&spec, n, InitMode::Random, &norm, seed).unwrap()
}

fn row(width: usize, trial: usize, ret: f64) -> RetrainRow {
    RetrainRow {
        width,
        trial,
        lr: 0.1,
        epochs: 100,
        ret,
    }
}

#[test]
fn top_half_median_by_hand() {
    // width 32: sorted 9 7 5 3 1 -> top 3 = 9 7 5, median 7
    // width 64: 4 2 NaN 8 -> 8 4 2 -inf, top 2 = 8 4, median 6
    let rows: Vec<RetrainRow> = [5.0, 9.0, 1.0, 7.0, 3.0]
        .iter()
        .enumerate()
        .map(|(i, &r)| row(32, i, r))
        .chain(
            [4.0, 2.0, f64::NAN, 8.0]
                .iter()
                .enumerate()
                .map(|(i, &r)| row(64, i, r)),
        )
        .collect();
    let s = summarize_top_half(&rows);
    assert_eq!(s.len(), 2);
    assert_eq!((s[0].kept, s[0].median, s[0].mean), (3, 7.0, 7.0));
    assert_eq!((s[1].kept, s[1].median, s[1].mean), (2, 6.0, 6.0));
}

#[test]
fn single_triple_sweep_is_a_plain_training_run() {
    let ds = env_ds(EnvId::CartPole, 4, 0);
    let spec = RetrainSpec {
        sampling: Sampling::Grid(vec![(0.05, 30)]),
        episodes: 3,
        ..RetrainSpec::sweep(vec![16], 1, 9)
    };
    let rows = retrain(&ds, &spec).unwrap();
    assert_eq!(rows.len(), 1);
    let inner = InnerConfig {
        lr: 0.05,
        update_epochs: 30,
        max_grad_norm: spec.max_grad_norm,
        greedy_act: false,
        anneal_lr: false,
        width: 16,
        activation: ds.meta.activation,
    };
    let init = init_policy(ds.arch(16, ds.meta.activation), spec.init_seed(16, 0));
    let t = inner_train(&ds, &init, &inner).unwrap();
    let direct = mean_return(
        &EnvSpec::new(EnvId::CartPole),
        &t.policy,
        &ds.normalizer,
        &spec.eval_seeds(),
        false,
    )
    .unwrap();
    assert_eq!(rows[0].ret, direct);
}

#[test]
fn sampled_sweep_spans_the_ranges_in_canonical_order() {
    let ds = env_ds(EnvId::CartPole, 2, 0);
    let spec = RetrainSpec {
        episodes: 1,
        sampling: Sampling::Random {
            trials: 30,
            lr: (1e-3, 1.0),
            epochs: (1, 3),
        },
        ..RetrainSpec::sweep(vec![8, 4], 30, 1)
    };
    let rows = retrain(&ds, &spec).unwrap();
    let order: Vec<(usize, usize)> = rows.iter().map(|r| (r.width, r.trial)).collect();
    let expected: Vec<(usize, usize)> = [8, 4].iter().flat_map(|&w| (0..30).map(move |t| (w, t))).collect();
    assert_eq!(order, expected);
    assert!(rows
        .iter()
        .all(|r| (1e-3..=1.0).contains(&r.lr) && (1..=3).contains(&r.epochs)));
    let lrs: Vec<f64> = rows.iter().map(|r| r.lr.log10()).collect();
    assert!(lrs.iter().any(|&l| l < -2.0) && lrs.iter().any(|&l| l > -1.0));
}

#[test]
fn retrain_rejects_merged_and_unknown_tasks() {
    let m = env_ds(EnvId::CartPole, 2, 0)
        .merge(&env_ds(EnvId::Acrobot, 3, 0))
        .unwrap();
    assert!(retrain(&m, &RetrainSpec::sweep(vec![8], 1, 0)).is_err());
    let mut toy = env_ds(EnvId::CartPole, 2, 0);
    toy.task = "digits".into();
    toy.blocks[0].task = "digits".into();
    assert!(matches!(
        retrain(&toy, &RetrainSpec::sweep(vec![8], 1, 0)),
        Err(Error::UnknownEnv(_))
    ));
}

#[test]
fn block_rows_keep_the_merged_frame() {
    let a = env_ds(EnvId::CartPole, 2, 0);
    let b = env_ds(EnvId::Acrobot, 3, 1);
    let m = a.merge(&b).unwrap();
    let rows = block_rows(&m, "acrobot").unwrap();
    assert_eq!(rows.n_rows(), 3);
    assert_eq!(rows.obs_dim(), 10);
    assert_eq!(rows.labels().unwrap(), &m.labels().unwrap()[2..]);
    assert!(block_rows(&m, "pendulum").is_err());
}

#[test]
fn multitask_report_has_three_conditions_per_env() {
    let m = env_ds(EnvId::CartPole, 4, 0)
        .merge(&env_ds(EnvId::Acrobot, 6, 1))
        .unwrap();
    let inner = InnerConfig {
        lr: 0.05,
        update_epochs: 20,
        max_grad_norm: 2.0,
        greedy_act: false,
        anneal_lr: false,
        width: 8,
        activation: Activation::Tanh,
    };
    let rows = eval_multitask(&m, &inner, &[0, 1], 2).unwrap();
    let keys: Vec<(&str, &str)> = rows.iter().map(|r| (r.condition, r.env.as_str())).collect();
    assert_eq!(
        keys,
        [
            ("correct", "cartpole"),
            ("wrong", "cartpole"),
            ("merged", "cartpole"),
            ("correct", "acrobot"),
            ("wrong", "acrobot"),
            ("merged", "acrobot"),
        ]
    );
    for r in rows.iter().filter(|r| r.condition == "correct") {
        assert_eq!(r.normalized, 1.0);
    }
    assert!(eval_multitask(&env_ds(EnvId::CartPole, 2, 0), &inner, &[0], 1).is_err());
}

#[test]
fn csv_files_carry_schema_and_header() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.csv");
    write_csv(
        &p,
        "#schema=test/1",
        &["a", "b"],
        [vec!["1".to_string(), "2.5".to_string()]],
    )
    .unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), "#schema=test/1\na,b\n1,2.5\n");
}

#[test]
fn distill_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("cartpole");
    let a = cmd_distill(&cfg, Some("env = \"cartpole\"\n"), &dir.path().join("a"), true, |_| {}).unwrap();
    let b = cmd_distill(&cfg, None, &dir.path().join("b"), false, |_| {}).unwrap();
    for f in ["dataset.bdd", "policy.bdp", "generations.csv", "config.toml"] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    assert!(dir.path().join("a/dataset.txt").exists());
    assert!(dir.path().join("a/config.input.toml").exists());
    assert!(!dir.path().join("b/config.input.toml").exists());
    let ds = SyntheticDataset::load(&a.dataset).unwrap();
    assert_eq!(ds.meta.variant, "hades-f");
    let p = load_policy(&b.policy).unwrap();
    assert_eq!(p.arch().obs_dim, 4);
    let echoed = RunConfig::load(&dir.path().join("a/config.toml")).unwrap();
    assert_eq!(echoed, cfg);
}

#[test]
fn retrain_leaves_the_dataset_file_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bdd");
    env_ds(EnvId::CartPole, 4, 3).save(&path).unwrap();
    let before = std::fs::read(&path).unwrap();
    let spec = RetrainSpec {
        episodes: 1,
        sampling: Sampling::Grid(vec![(0.05, 5)]),
        ..RetrainSpec::sweep(vec![4, 8], 1, 0)
    };
    let s = cmd_retrain(&path, &spec, &dir.path().join("out")).unwrap();
    assert_eq!(s.len(), 2);
    assert_eq!(std::fs::read(&path).unwrap(), before);
    let csv = std::fs::read_to_string(dir.path().join("out/retrain.csv")).unwrap();
    assert!(csv.starts_with("#schema=retrain/1\nwidth,trial,lr,epochs,return\n"));
}

#[test]
fn classification_command_on_toy_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        data: Some("gaussians".into()),
        eval_classifiers: 3,
        popsize: 8,
        n_generations: 2,
        update_epochs: 10,
        width: 8,
        ..RunConfig::default()
    };
    let out = cmd_classify_distill(&cfg, None, dir.path(), |_| {}).unwrap();
    assert_eq!(out.accuracy.accuracies.len(), 3);
    assert!(out.nearest_mean > 0.85);
    let csv = std::fs::read_to_string(dir.path().join("accuracy.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 3);
    let missing = RunConfig::default().validate_classify().unwrap_err();
    assert!(matches!(missing, Error::Config { ref field, .. } if field == "data"));
}

#[test]
fn bundled_digits_load() {
    let d = load_labeled("digits", 0.25, 0).unwrap();
    assert_eq!((d.len(), d.dim(), d.n_classes), (1797, 64, 10));
    assert_eq!(d.n_train, 1797 - 449);
}
