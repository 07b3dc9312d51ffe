use std::path::Path;
use std::process::{Command, Output};

fn bdistill(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bdistill"))
        .args(args)
        .output()
        .expect("binary runs")
}

const TINY: &[&str] = &[
    "--set",
    "popsize=8",
    "--set",
    "n_generations=3",
    "--set",
    "UPDATE_EPOCHS=10",
    "--set",
    "WIDTH=8",
    "--set",
    "normalizer_episodes=2",
];

fn distill(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["--quiet", "distill", "--out", out.to_str().unwrap()];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    bdistill(&args)
}

#[test]
fn distill_smoke_with_variant_r() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = distill(
        &out,
        &[
            "--env",
            "cartpole",
            "--n",
            "4",
            "--variant",
            "R",
            "--k",
            "2",
            "--seed",
            "0",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "dataset.bdd",
        "policy.bdp",
        "generations.csv",
        "timing.csv",
        "config.toml",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(out.join("generations.csv")).unwrap();
    assert!(log.starts_with("#schema=generations/1\n"));
    assert_eq!(log.lines().count(), 2 + 3);
}

#[test]
fn missing_env_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = distill(&dir.path().join("x"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("env"));
    let o = bdistill(&["distill", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_config_values_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "env = \"cartpole\"\npopsize = 7\n").unwrap();
    let o = bdistill(&[
        "distill",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("popsize"));
}

#[test]
fn same_seed_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = distill(
            out,
            &["--env", "cartpole", "--variant", "F", "--seed", "3", "--workers", "1"],
        );
        assert!(o.status.success());
    }
    for f in ["generations.csv", "dataset.bdd", "policy.bdp"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn merge_dump_retrain_and_multitask_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (c, a) = (dir.path().join("c"), dir.path().join("a"));
    assert!(distill(&c, &["--env", "cartpole", "--n", "2"]).status.success());
    assert!(distill(&a, &["--env", "acrobot", "--n", "3"]).status.success());
    let merged = dir.path().join("m.bdd");
    let o = bdistill(&[
        "merge",
        c.join("dataset.bdd").to_str().unwrap(),
        a.join("dataset.bdd").to_str().unwrap(),
        "--out",
        merged.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let csv = dir.path().join("dump.csv");
    let o = bdistill(&["dump", merged.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("pad") && text.contains("# block acrobot"), "{text}");
    assert!(std::fs::read_to_string(&csv)
        .unwrap()
        .starts_with("#schema=dataset-dump/1"));

    let mt = dir.path().join("mt");
    let o = bdistill(&[
        "eval-multitask",
        merged.to_str().unwrap(),
        "--seeds",
        "2",
        "--episodes",
        "1",
        "--set",
        "UPDATE_EPOCHS=10",
        "--out",
        mt.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(mt.join("multitask.csv")).unwrap();
    assert_eq!(report.lines().count(), 2 + 6);

    let rt = dir.path().join("rt");
    let o = bdistill(&[
        "retrain",
        c.join("dataset.bdd").to_str().unwrap(),
        "--widths",
        "4,8",
        "--lr",
        "0.05",
        "--epochs",
        "5",
        "--episodes",
        "1",
        "--out",
        rt.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = std::fs::read_to_string(rt.join("retrain.csv")).unwrap();
    assert_eq!(rows.lines().count(), 2 + 2);

    let o = bdistill(&["retrain", merged.to_str().unwrap(), "--out", rt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupt_dataset_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.bdd");
    std::fs::write(&p, b"BDDS\x01\x00garbage").unwrap();
    let o = bdistill(&["dump", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn classify_and_budget_commands_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["-q", "classify-distill", "--data", "gaussians", "--out"];
    let out = dir.path().join("cls");
    args.push(out.to_str().unwrap());
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--set", "eval_classifiers=2"]);
    let o = bdistill(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("test accuracy"));

    let out = dir.path().join("bud");
    let mut args = vec![
        "budget-sweep",
        "--env",
        "cartpole",
        "--sizes",
        "2,4",
        "--seeds",
        "0",
        "--out",
    ];
    args.push(out.to_str().unwrap());
    args.extend_from_slice(TINY);
    let o = bdistill(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("budget.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 2);
}

#[test]
fn shipped_configs_validate() {
    use bdistill_core::harness::RunConfig;
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        if cfg.data.is_some() {
            cfg.validate_classify().unwrap();
        } else {
            cfg.validate_control().unwrap();
        }
        n += 1;
    }
    assert!(n >= 5);
}
