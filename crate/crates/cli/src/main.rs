use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use dbrf_core::data::{generate_synthetic, load_tabular, save_dump, Schema, SyntheticSpec};
use dbrf_core::experiment::{
    ablation_variants, prepare_fold, project_representations, run_ablation, run_hyper_grid, run_sweep, write_csv,
    AblationSpec, CellFailure, DataSource, ExperimentConfig, GridSpec, KernelPcaConfig, Method, SweepSpec,
};
use dbrf_core::metrics::{group_report, GroupedPredictions};
use dbrf_core::model::{predict_ideal, ModelManifest};
use dbrf_core::numeric::Checkpoint;
use dbrf_core::trainer::{fit, TrainState};
use dbrf_core::Exec;

#[derive(Parser)]
#[command(name = "dbrf", version, about = "De-biased fair representation learning experiments")]
struct Cli {
    /// Directory holding raw dataset files.
    #[arg(long, env = "DBRF_DATA_DIR", global = true)]
    data_dir: Option<PathBuf>,

    /// Run experiment cells one at a time.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML). Defaults to the synthetic setup.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Base seed; fold k uses seed + k.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the number of training epochs.
    #[arg(long)]
    epochs: Option<usize>,

    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dataset {
    Adult,
    Compas,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset as a canonical dump.
    Synth {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Ingest a raw Adult or Compas file into a canonical dump.
    Prepare {
        #[arg(long, value_enum)]
        dataset: Dataset,
        /// Raw file; defaults to the standard file name in the data directory.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Custom schema (TOML) instead of the built-in one.
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Train one model and write checkpoint, manifest, history and metrics.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.0)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Accuracy and fairness of several methods across label-bias levels.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.35,0.4,0.45")]
        rho: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "dbrf_star,dbrf_lr,vae_lr,raw_lr")]
        method: Vec<Method>,
        #[arg(long, default_value_t = 3)]
        folds: usize,
    },
    /// Loss-component ablation.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.0)]
        rho: f64,
        #[arg(long, default_value_t = 3)]
        folds: usize,
    },
    /// Hyperparameter grid: beta x xi, then alpha and lambda lines.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.45)]
        rho: f64,
        #[arg(long, default_value_t = 3)]
        folds: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7")]
        betas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7")]
        xis: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8,1.0")]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.5")]
        lambdas: Vec<f64>,
    },
    /// Kernel PCA of features and learned z for a trained checkpoint.
    Project {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Data to project; defaults to the configuration stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// RBF bandwidth; median pairwise distance when omitted.
        #[arg(long)]
        bandwidth: Option<f64>,
        #[arg(long, default_value_t = 2000)]
        max_rows: usize,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Group-wise report for a CSV with columns prediction,label,group.
    Metrics {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    let data_dir = cli.data_dir.as_deref();
    match cli.command {
        Command::Synth { n, seed, out_dir } => {
            let mut spec = SyntheticSpec::default();
            if let Some(n) = n {
                spec.n = n;
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            let data = generate_synthetic(&spec)?;
            let path = out_path(&out_dir, "synthetic.csv")?;
            save_dump(&data, &path)?;
            info!("wrote {} rows to {}", data.len(), path.display());
        }
        Command::Prepare {
            dataset,
            input,
            schema,
            out_dir,
        } => {
            let (name, source) = match dataset {
                Dataset::Adult => ("adult", DataSource::Adult { path: input }),
                Dataset::Compas => ("compas", DataSource::Compas { path: input }),
            };
            let path = source.resolve_path(data_dir).expect("file source");
            let schema = match schema {
                Some(p) => Schema::load(&p)?,
                None => Schema::builtin(name).expect("builtin schema"),
            };
            let data = load_tabular(&path, &schema).with_context(|| format!("reading {}", path.display()))?;
            let out = out_path(&out_dir, &format!("{name}.csv"))?;
            save_dump(&data, &out)?;
            info!("wrote {} rows, {} features to {}", data.len(), data.n_features(), out.display());
        }
        Command::Train { common, rho, fold } => {
            let cfg = load_config(&common)?;
            let base = cfg.data.load(data_dir)?;
            let prepared = prepare_fold(&cfg, &base, rho, fold)?;
            let spec = cfg.fit_spec(rho, fold);
            info!("training on {} rows ({} features)", prepared.train.len(), prepared.train.n_features());
            let (state, history) = fit(&spec, cfg.arch, &prepared.train, &prepared.test)?;
            let out = &common.out_dir;
            state.to_checkpoint(cfg.clone())?.save(&out_path(out, "model.ckpt.json")?)?;
            let manifest = ModelManifest::new(&state.params, spec.hyper, spec.mask, spec.train.tc_mode);
            fs::write(out_path(out, "manifest.toml")?, manifest.to_toml()?)?;
            fs::write(out_path(out, "config.toml")?, cfg.to_toml()?)?;
            history.write_csv(fs::File::create(out_path(out, "history.csv")?)?)?;
            let pred = predict_ideal(&state.params, prepared.test.features())?;
            let labels = prepared.test.ideal_labels().expect("prepared folds carry ideal labels");
            let group = prepared.test.protected(cfg.group)?;
            let report = group_report(&GroupedPredictions::new(&pred, labels, &group)?);
            fs::write(out_path(out, "metrics.csv")?, report.to_csv()?)?;
            print!("{}", report.to_text());
        }
        Command::Sweep {
            common,
            rho,
            method,
            folds,
        } => {
            let cfg = load_config(&common)?;
            let base = cfg.data.load(data_dir)?;
            let spec = SweepSpec {
                rhos: rho,
                methods: method,
                folds,
            };
            let outcome = run_sweep(&cfg, &base, &spec, exec)?;
            let out = &common.out_dir;
            write_csv(&outcome.rows, fs::File::create(out_path(out, "results.csv")?)?)?;
            write_csv(&outcome.summary(), fs::File::create(out_path(out, "summary.csv")?)?)?;
            report_failures(out, &outcome.failures)?;
            if !outcome.rows.is_empty() {
                let (acc, dp) = outcome.charts()?;
                fs::write(out_path(out, "accuracy.svg")?, acc)?;
                fs::write(out_path(out, "delta_dp.svg")?, dp)?;
            }
            for s in outcome.summary() {
                println!(
                    "{:10} rho={:<5} acc {:.4} ± {:.4}  delta_dp {:.4} ± {:.4}",
                    s.cell, s.rho, s.accuracy_mean, s.accuracy_std, s.delta_dp_mean, s.delta_dp_std
                );
            }
            println!("clean-label delta_dp {:.4}", outcome.reference_delta_dp);
            let empty = outcome.empty_cells(&spec);
            if !empty.is_empty() {
                for (m, r) in &empty {
                    warn!("no successful fold for {m} at rho={r}");
                }
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Ablate { common, rho, folds } => {
            let cfg = load_config(&common)?;
            let base = cfg.data.load(data_dir)?;
            let spec = AblationSpec {
                variants: ablation_variants(),
                rho,
                folds,
            };
            let outcome = run_ablation(&cfg, &base, &spec, exec)?;
            let out = &common.out_dir;
            write_csv(&outcome.rows, fs::File::create(out_path(out, "ablation.csv")?)?)?;
            let summary = outcome.summary();
            write_csv(&summary, fs::File::create(out_path(out, "ablation_summary.csv")?)?)?;
            report_failures(out, &outcome.failures)?;
            for s in &summary {
                println!(
                    "{:14} acc {:.4} ± {:.4}  delta_dp {:.4} ± {:.4}",
                    s.cell, s.accuracy_mean, s.accuracy_std, s.delta_dp_mean, s.delta_dp_std
                );
            }
            if summary.len() < spec.variants.len() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Grid {
            common,
            rho,
            folds,
            betas,
            xis,
            alphas,
            lambdas,
        } => {
            let cfg = load_config(&common)?;
            let base = cfg.data.load(data_dir)?;
            let spec = GridSpec {
                betas,
                xis,
                alphas,
                lambdas,
                rho,
                folds,
            };
            let outcome = run_hyper_grid(&cfg, &base, &spec, exec)?;
            let out = &common.out_dir;
            write_csv(&outcome.rows, fs::File::create(out_path(out, "grid.csv")?)?)?;
            report_failures(out, &outcome.failures)?;
            if outcome.rows.iter().any(|r| r.axis == dbrf_core::experiment::GridAxis::Alpha) {
                let (acc, dp) = outcome.alpha_charts()?;
                fs::write(out_path(out, "alpha_accuracy.svg")?, acc)?;
                fs::write(out_path(out, "alpha_delta_dp.svg")?, dp)?;
            }
            info!("{} grid rows, {} failures", outcome.rows.len(), outcome.failures.len());
            if outcome.rows.is_empty() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Project {
            checkpoint,
            config,
            rho,
            fold,
            bandwidth,
            max_rows,
            out_dir,
        } => {
            let ck = Checkpoint::<ExperimentConfig>::load(&checkpoint)?;
            let state = TrainState::from_checkpoint(&ck)?;
            let cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ck.config.clone(),
            };
            let base = cfg.data.load(data_dir)?;
            let prepared = prepare_fold(&cfg, &base, rho, fold)?;
            let kcfg = KernelPcaConfig {
                bandwidth,
                max_rows,
                seed: cfg.seed,
                ..Default::default()
            };
            let p = project_representations(&state.params, &prepared.test, cfg.group, &kcfg)?;
            p.write_csv(fs::File::create(out_path(&out_dir, "projection.csv")?)?)?;
            fs::write(out_path(&out_dir, "projection_x.svg")?, p.scatter(false, "Kernel PCA of x")?)?;
            fs::write(out_path(&out_dir, "projection_z.svg")?, p.scatter(true, "Kernel PCA of z")?)?;
            let (sx, sz) = p.separation()?;
            println!("group separation: x {sx:.4}  z {sz:.4}");
        }
        Command::Metrics { predictions, out_dir } => {
            let (pred, labels, group) = read_predictions(&predictions)?;
            let report = group_report(&GroupedPredictions::new(&pred, &labels, &group)?);
            fs::write(out_path(&out_dir, "metrics.csv")?, report.to_csv()?)?;
            let text = report.to_text();
            fs::write(out_path(&out_dir, "metrics.txt")?, &text)?;
            print!("{text}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(e) = common.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    info!("config {} ({})", cfg.config_hash(), cfg.data.name());
    Ok(cfg)
}

fn out_path(dir: &Path, file: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.join(file))
}

fn report_failures(out: &Path, failures: &[CellFailure]) -> Result<()> {
    if failures.is_empty() {
        return Ok(());
    }
    for f in failures {
        warn!("{} rho={} fold={} failed: {}", f.cell, f.rho, f.fold, f.message);
    }
    write_csv(failures, fs::File::create(out_path(out, "failures.csv")?)?)?;
    Ok(())
}

fn read_predictions(path: &Path) -> Result<(Vec<u8>, Vec<u8>, Vec<u8>)> {
    #[derive(serde::Deserialize)]
    struct Row {
        prediction: u8,
        label: u8,
        group: u8,
    }
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let (mut p, mut l, mut g) = (Vec::new(), Vec::new(), Vec::new());
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.with_context(|| format!("row {}", i + 1))?;
        if row.prediction > 1 || row.label > 1 || row.group > 1 {
            bail!("row {}: values must be 0 or 1", i + 1);
        }
        p.push(row.prediction);
        l.push(row.label);
        g.push(row.group);
    }
    Ok((p, l, g))
}
