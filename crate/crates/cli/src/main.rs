use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use scml::basisgen::generate_basis;
use scml::eval::{error_rate, Metric};
use scml::experiment::{basis_sweep, mean_by, prepare, run_experiment, sweep_csv, ExperimentConfig, Mode};
use scml::io::{ingest, Format};
use scml::models::{robustness_bound, Model, ModelFile};

#[derive(Parser)]
#[command(name = "scml", version, about = "Sparse compositional metric learning")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Run this seed only.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        save_models: bool,
    },
    /// Refit at several basis budgets and report selected counts.
    Sweep {
        #[arg(short, long)]
        config: PathBuf,
        /// Ascending budgets, comma separated.
        #[arg(short = 'k', long, value_delimiter = ',', required = true)]
        budgets: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "global,local")]
        modes: Vec<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a basis from the training split of the first dataset and save it.
    Basis {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved model with k-NN on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Raw training rows the neighbors come from.
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "csv")]
        format: Format,
        /// Task row for multi-task models.
        #[arg(long, default_value_t = 0)]
        task: usize,
        #[arg(short, default_value_t = 3)]
        k: usize,
    },
    /// Evaluate the generalization bound for a sparse metric.
    Bound {
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        radius: f64,
        #[arg(long)]
        k_star: usize,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        loss_bound: f64,
        #[arg(long)]
        n_cover: f64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        delta: f64,
    },
}

fn load_config(path: &PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_json_file(path).with_context(|| format!("reading {}", path.display()))?;
    // dataset paths are relative to the config file
    if let Some(dir) = path.parent() {
        for d in &mut cfg.datasets {
            if d.path.is_relative() && !d.path.exists() {
                d.path = dir.join(&d.path);
            }
        }
    }
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if out.is_some() {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Run { config, seed, mode, out, save_models } => {
            let mut cfg = load_config(&config, seed, out)?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            cfg.save_models |= save_models;
            let report = run_experiment(&cfg)?;
            for (name, s) in &report.summary {
                let se = s.stderr.map(|v| format!(" +- {:.2}", 100.0 * v)).unwrap_or_default();
                println!("{name:>24}: {:.2}%{se} over {} seeds", 100.0 * s.mean, s.n);
            }
            for (name, v) in &report.mean_nnz {
                println!("{:>24}: {v:.1}", format!("{name} selected"));
            }
        }
        Cmd::Sweep { config, budgets, modes, seed, out } => {
            let cfg = load_config(&config, seed, out)?;
            let data = ingest(&cfg.datasets[0].path, cfg.datasets[0].format)?;
            let rows = basis_sweep(&cfg, &data, &budgets, &modes)?;
            let sel = mean_by(&rows, |r| (r.k, format!("{:?}", r.mode)), |r| r.selected as f64);
            let err = mean_by(&rows, |r| (r.k, format!("{:?}", r.mode)), |r| r.test_error);
            println!("{:>6} {:>8} {:>10} {:>10}", "K", "mode", "selected", "error%");
            for (((k, m), s), (_, e)) in sel.iter().zip(&err) {
                println!("{k:>6} {m:>8} {s:>10.1} {:>10.2}", 100.0 * e);
            }
            if let Some(dir) = &cfg.output_dir {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("sweep.csv"), sweep_csv(&rows))?;
                fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(&rows)?)?;
            }
        }
        Cmd::Basis { config, seed, out } => {
            let cfg = load_config(&config, Some(seed), None)?;
            let data = ingest(&cfg.datasets[0].path, cfg.datasets[0].format)?;
            let p = prepare(&data, &cfg.preprocessing, cfg.split, seed)?;
            let mut bcfg = cfg.basisgen.clone();
            bcfg.rng_seed = bcfg.rng_seed.wrapping_add(seed);
            let basis = generate_basis(&p.train, &bcfg)?;
            fs::write(&out, serde_json::to_string_pretty(&basis)?)?;
            println!("wrote {} basis vectors of dimension {} to {}", basis.len(), basis.dim(), out.display());
        }
        Cmd::Eval { model, train, data, format, task, k } => {
            let doc = ModelFile::load(&model).with_context(|| format!("loading {}", model.display()))?;
            let train = doc.preprocessing.apply(&ingest(&train, format)?)?;
            let eval = doc.preprocessing.apply(&ingest(&data, format)?.align_classes(&train)?)?;
            let metric = match &doc.model {
                Model::Global(m) => Metric::Global(m),
                Model::Multitask(m) => Metric::MultiTask(m, task),
                Model::Local(m) => Metric::Local(m),
            };
            let err = error_rate(metric, &train, &eval, k)?;
            println!("{k}-NN error: {:.4} ({} points)", err, eval.n());
        }
        Cmd::Bound { gamma, radius, k_star, beta, loss_bound, n_cover, n, delta } => {
            println!("{}", robustness_bound(gamma, radius, k_star, beta, loss_bound, n_cover, n, delta)?);
        }
    }
    Ok(())
}
