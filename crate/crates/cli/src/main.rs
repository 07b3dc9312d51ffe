//! `bdistill`: distill, retrain, merge, evaluate and inspect synthetic
//! behaviour datasets.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 runtime
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bdistill_core::engine::{FitnessReport, Variant};
use bdistill_core::harness::{self, RetrainSpec, RunConfig, Sampling};
use bdistill_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bdistill",
    version,
    about = "Evolve tiny synthetic datasets that train policies by behaviour cloning"
)]
struct Cli {
    /// Worker threads for population evaluation (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Suppress per-generation progress on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunOpts {
    /// Flat TOML config; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `KEY=VALUE` overrides using config-file key names.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve a synthetic dataset for a control task.
    Distill {
        #[command(flatten)]
        run: RunOpts,
        #[arg(long)]
        env: Option<String>,
        /// Dataset size N.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        variant: Option<Variant>,
        /// Initializations per candidate for variant R.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value = "runs/distill")]
        out: PathBuf,
        /// Also write dataset.txt and dataset.csv.
        #[arg(long)]
        export_text: bool,
    },
    /// Train fresh policies of several widths on a saved dataset.
    Retrain {
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "32,64,128,256,512")]
        widths: Vec<usize>,
        /// Sampled (lr, epochs) pairs per width.
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr_min: f64,
        #[arg(long, default_value_t = 1.0)]
        lr_max: f64,
        #[arg(long, default_value_t = 100)]
        epochs_min: usize,
        #[arg(long, default_value_t = 500)]
        epochs_max: usize,
        /// Fixed learning rate (with --epochs): one trial per width.
        #[arg(long, requires = "epochs")]
        lr: Option<f64>,
        #[arg(long, requires = "lr")]
        epochs: Option<usize>,
        /// Evaluation episodes per policy.
        #[arg(long, default_value_t = 8)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "runs/retrain")]
        out: PathBuf,
    },
    /// Merge datasets of different tasks into one block-diagonal dataset.
    Merge {
        #[arg(required = true, num_args = 2..)]
        datasets: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on each block and on the merged dataset; evaluate on both tasks.
    EvalMultitask {
        merged: PathBuf,
        #[command(flatten)]
        run: RunOpts,
        /// Number of training seeds.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Evaluation episodes per policy and task.
        #[arg(long, default_value_t = 4)]
        episodes: usize,
        #[arg(long, default_value = "runs/multitask")]
        out: PathBuf,
    },
    /// Distill with several dataset sizes and seeds.
    BudgetSweep {
        #[command(flatten)]
        run: RunOpts,
        #[arg(long)]
        env: Option<String>,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "runs/budget")]
        out: PathBuf,
    },
    /// Distill a labelled classification dataset.
    ClassifyDistill {
        #[command(flatten)]
        run: RunOpts,
        /// `gaussians`, `digits`, a CSV path or `idx:<images>,<labels>`.
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long, default_value = "runs/classify")]
        out: PathBuf,
    },
    /// Print a dataset with de-normalized features.
    Dump {
        dataset: PathBuf,
        /// Also write a plotting CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

/// Base config from `--config` (and its text), then `--set` and `--seed`.
fn load_config(run: &RunOpts) -> Result<(RunConfig, Option<String>)> {
    let text = match &run.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?),
        None => None,
    };
    let mut cfg = match &text {
        Some(t) => RunConfig::from_toml(t)?,
        None => RunConfig::default(),
    };
    if !run.set.is_empty() {
        let mut table: toml::Table = toml::from_str(&cfg.to_toml()).expect("config round-trips");
        for kv in &run.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config {
                field: kv.clone(),
                reason: "expected KEY=VALUE".into(),
            })?;
            let k = k.trim();
            let parsed: toml::Table = toml::from_str(&format!("{k} = {v}"))
                .or_else(|_| toml::from_str(&format!("{k} = {}", toml::Value::String(v.to_string()))))
                .map_err(|e| Error::Config {
                    field: k.into(),
                    reason: e.message().to_string(),
                })?;
            table.extend(parsed);
        }
        cfg = RunConfig::from_toml(&toml::to_string(&table).expect("table serializes"))?;
    }
    if let Some(s) = run.seed {
        cfg.seed = s;
    }
    Ok((cfg, text))
}

fn progress(quiet: bool) -> impl FnMut(&FitnessReport) {
    move |r: &FitnessReport| {
        if !quiet {
            eprintln!(
                "gen {:>4}  mean {:>9.3}  max {:>9.3}  center {:>9.3}  diverged {}  {} ms",
                r.generation, r.mean, r.max, r.center, r.diverged, r.wall_ms
            );
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let quiet = cli.quiet;
    match cli.command {
        Command::Distill {
            run,
            env,
            n,
            variant,
            k,
            out,
            export_text,
        } => {
            let (mut cfg, text) = load_config(&run)?;
            cfg.env = env.or(cfg.env);
            cfg.dataset_size = n.unwrap_or(cfg.dataset_size);
            cfg.variant = variant.unwrap_or(cfg.variant);
            cfg.k = k.unwrap_or(cfg.k);
            let o = harness::cmd_distill(&cfg, text.as_deref(), &out, export_text, progress(quiet))?;
            let last = o.log.last();
            println!(
                "{} generations; final population mean {}, search mean {}",
                o.log.len(),
                last.map_or(f64::NAN, |r| r.mean),
                last.map_or(f64::NAN, |r| r.center)
            );
            println!("wrote {} and {}", o.dataset.display(), o.policy.display());
        }
        Command::Retrain {
            dataset,
            widths,
            trials,
            lr_min,
            lr_max,
            epochs_min,
            epochs_max,
            lr,
            epochs,
            episodes,
            seed,
            out,
        } => {
            let sampling = match (lr, epochs) {
                (Some(lr), Some(e)) => Sampling::Grid(vec![(lr, e)]),
                _ => Sampling::Random {
                    trials,
                    lr: (lr_min, lr_max),
                    epochs: (epochs_min, epochs_max),
                },
            };
            let spec = RetrainSpec {
                sampling,
                episodes,
                ..RetrainSpec::sweep(widths, trials, seed)
            };
            for s in harness::cmd_retrain(&dataset, &spec, &out)? {
                println!(
                    "width {:>4}: top-half median {:.2} (mean {:.2}, {} kept)",
                    s.width, s.median, s.mean, s.kept
                );
            }
        }
        Command::Merge { datasets, out } => {
            let m = harness::cmd_merge(&datasets, &out)?;
            println!("{} rows, {} features; wrote {}", m.n_rows(), m.obs_dim(), out.display());
        }
        Command::EvalMultitask {
            merged,
            run,
            seeds,
            episodes,
            out,
        } => {
            let (cfg, _) = load_config(&run)?;
            let seed_list: Vec<u64> = (0..seeds).map(|i| cfg.seed + i).collect();
            for r in harness::cmd_eval_multitask(&merged, &cfg.hades().inner, &seed_list, episodes, &out)? {
                println!(
                    "{:<8} on {:<12} return {:>9.3}  normalized {:.3}",
                    r.condition, r.env, r.mean_return, r.normalized
                );
            }
        }
        Command::BudgetSweep {
            run,
            env,
            sizes,
            seeds,
            out,
        } => {
            let (mut cfg, text) = load_config(&run)?;
            cfg.env = env.or(cfg.env);
            for p in harness::cmd_budget_sweep(&cfg, &sizes, &seeds, text.as_deref(), &out)? {
                println!(
                    "N={:<4} seed {:<3} final mean {:.3}",
                    p.dataset_size, p.seed, p.final_mean
                );
            }
        }
        Command::ClassifyDistill {
            run,
            data,
            per_class,
            out,
        } => {
            let (mut cfg, text) = load_config(&run)?;
            cfg.data = data.or(cfg.data);
            cfg.per_class = per_class.unwrap_or(cfg.per_class);
            let o = harness::cmd_classify_distill(&cfg, text.as_deref(), &out, progress(quiet))?;
            println!(
                "test accuracy {:.4} +- {:.4} over {} classifiers (nearest class mean: {:.4})",
                o.accuracy.mean,
                o.accuracy.std,
                o.accuracy.accuracies.len(),
                o.nearest_mean
            );
        }
        Command::Dump { dataset, csv } => {
            print!("{}", harness::cmd_dump(&dataset, csv.as_deref().map(Path::new))?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match cli.workers {
        Some(0) => {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    }
    .expect("thread pool");
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
