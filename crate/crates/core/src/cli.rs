//! The `tmson` command line: data generation, training, evaluation,
//! prediction, robustness sweeps, ablations and gradient checks.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgAction, ArgGroup, Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{generate_synthetic, load_jsonl, write_splits, Modality};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, predict_dataset, robustness_sweep, run_calibration, sweep_csv, MetricScheme, Report, SweepRow,
    SweepSpec,
};
use crate::training::{
    ablation_table, gradient_suite, run_ablation, train, Checkpoint, EVAL_BATCH, GRADCHECK_TOLERANCE,
};

#[derive(Debug, Parser)]
#[command(name = "tmson", version, about = "Uncertainty-aware multimodal sentiment regression")]
pub struct Cli {
    /// Log progress to standard error (-v for epochs, -vv for details).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic train/val/test splits and a manifest.
    GenData {
        /// Run configuration JSON; its `synth` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and write a checkpoint plus `<out>.history.json`.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the maximum number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated metric schemes; defaults follow the label range.
        #[arg(long, value_delimiter = ',')]
        scheme: Vec<MetricScheme>,
        /// Also write the report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write per-sample predictions as JSONL.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Include the normalised uncertainty scalars.
        #[arg(long)]
        with_uncertainty: bool,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate under feature noise and missing text.
    #[command(group(ArgGroup::new("grid").required(true).multiple(true).args(["noise", "missing"])))]
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated noise intensities.
        #[arg(long, value_delimiter = ',')]
        noise: Vec<f64>,
        /// Comma-separated text-missing rates.
        #[arg(long, value_delimiter = ',')]
        missing: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Modalities receiving noise, e.g. `tva` or `text,audio`.
        #[arg(long, default_value = "tva", value_parser = parse_modalities)]
        noise_modalities: ModalitySet,
        #[arg(long, value_delimiter = ',')]
        scheme: Vec<MetricScheme>,
        /// CSV output.
        #[arg(long)]
        out: PathBuf,
        /// Also write the rows and the configuration as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train every objective subset for each seed and write a CSV table.
    Ablation {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check every loss gradient on a tiny model against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct ModalitySet(pub Vec<Modality>);

fn parse_modalities(s: &str) -> std::result::Result<ModalitySet, String> {
    Modality::parse_set(s).map(ModalitySet).map_err(|e| e.to_string())
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code: 0 on success, 1 on failure, 2 on usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
}

/// Defaults, overlaid by the optional configuration file.
fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_json_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn schemes_or_default(schemes: Vec<MetricScheme>, label_range: [f64; 2]) -> Vec<MetricScheme> {
    if schemes.is_empty() {
        MetricScheme::defaults_for(label_range)
    } else {
        schemes
    }
}

fn print_report(r: &Report) {
    println!("n      {}", r.n);
    println!("mae    {:.6}", r.regression.mae);
    let flag = if r.regression.corr_degenerate { " (constant predictions)" } else { "" };
    println!("corr   {:.6}{flag}", r.regression.corr);
    for c in &r.classification {
        match c.f1 {
            Some(f1) => println!("{:<18} acc {:.6}  f1 {:.6}  (n={})", c.scheme.name(), c.accuracy, f1, c.count),
            None => println!("{:<18} acc {:.6}  (n={})", c.scheme.name(), c.accuracy, c.count),
        }
    }
    let u = r.uncertainty;
    println!("uncertainty  t {:.4}  v {:.4}  a {:.4}  fused {:.4}", u.text, u.visual, u.audio, u.fused);
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    id: &'a str,
    y_hat: f64,
    y_hat_t: f64,
    y_hat_v: f64,
    y_hat_a: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    u_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    u_v: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    u_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    u_f: Option<f64>,
}

#[derive(Serialize)]
struct SweepReport<'a> {
    config: &'a RunConfig,
    noise_modalities: &'a [Modality],
    seeds: &'a [u64],
    rows: &'a [SweepRow],
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenData { config, out, seed } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.synth.seed = s;
            }
            cfg.validate()?;
            let splits = generate_synthetic(&cfg.synth)?;
            write_splits(&cfg.synth, &splits, &out)?;
            println!(
                "wrote {} / {} / {} samples to {} (Bayes MAE {:.4})",
                splits.train.len(),
                splits.val.len(),
                splits.test.len(),
                out.display(),
                splits.bayes_mae
            );
        }
        Command::Train { train: train_path, val, config, out, seed, epochs } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(e) = epochs {
                cfg.train.max_epochs = e;
            }
            let train_set = load_jsonl(&train_path)?;
            let val_set = load_jsonl(&val)?;
            let outcome = train(&train_set, &val_set, &cfg)?;
            cfg.model = outcome.model.config.clone();
            let h = &outcome.history;
            info!("best epoch {} with validation MAE {:.4}", h.best_epoch, h.best_val_mae);
            Checkpoint { model: outcome.model, seed: cfg.train.seed, config: cfg }.save(&out)?;
            write_json(h, &with_suffix(&out, ".history.json"))?;
            println!(
                "best epoch {} of {}: validation MAE {:.6}; checkpoint {}",
                h.best_epoch,
                h.epochs.len(),
                h.best_val_mae,
                out.display()
            );
        }
        Command::Eval { model, data, scheme, report } => {
            let ckpt = Checkpoint::load(&model)?;
            let ds = load_jsonl(&data)?;
            let schemes = schemes_or_default(scheme, ds.header.label_range);
            let preds = predict_dataset(&ckpt.model, &ds, EVAL_BATCH)?;
            let mut r = evaluate(&preds, &schemes)?;
            r.config = Some(ckpt.config);
            print_report(&r);
            if let Some(path) = report {
                write_json(&r, &path)?;
            }
        }
        Command::Predict { model, data, with_uncertainty, out } => {
            let ckpt = Checkpoint::load(&model)?;
            let ds = load_jsonl(&data)?;
            let preds = predict_dataset(&ckpt.model, &ds, EVAL_BATCH)?;
            let calibration = run_calibration(&preds)?;
            let mut text = String::new();
            for p in &preds {
                let u = |k: usize| with_uncertainty.then(|| calibration.normalize(p.h[k]));
                let line = PredictionLine {
                    id: &p.id,
                    y_hat: p.y_hat,
                    y_hat_t: p.y_hat_m[0],
                    y_hat_v: p.y_hat_m[1],
                    y_hat_a: p.y_hat_m[2],
                    u_t: u(0),
                    u_v: u(1),
                    u_a: u(2),
                    u_f: u(3),
                };
                text.push_str(&serde_json::to_string(&line)?);
                text.push('\n');
            }
            match out {
                Some(path) => fs::write(&path, text).map_err(|e| Error::io(&path, e))?,
                None => std::io::stdout()
                    .write_all(text.as_bytes())
                    .map_err(|e| Error::io("<stdout>", e))?,
            }
        }
        Command::Sweep { model, data, noise, missing, seeds, noise_modalities, scheme, out, report } => {
            let ckpt = Checkpoint::load(&model)?;
            let ds = load_jsonl(&data)?;
            let spec = SweepSpec {
                noise,
                missing,
                seeds,
                noise_modalities: noise_modalities.0,
                schemes: schemes_or_default(scheme, ds.header.label_range),
                batch_size: EVAL_BATCH,
            };
            let rows = robustness_sweep(&ckpt.model, &ds, &spec)?;
            let csv = sweep_csv(&rows)?;
            fs::write(&out, &csv).map_err(|e| Error::io(&out, e))?;
            print!("{csv}");
            if let Some(path) = report {
                let mut seeds = spec.seeds.clone();
                seeds.sort_unstable();
                let r = SweepReport { config: &ckpt.config, noise_modalities: &spec.noise_modalities, seeds: &seeds, rows: &rows };
                write_json(&r, &path)?;
            }
        }
        Command::Ablation { train: train_path, val, test, config, seeds, epochs, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(e) = epochs {
                cfg.train.max_epochs = e;
            }
            let train_set = load_jsonl(&train_path)?;
            let val_set = load_jsonl(&val)?;
            let test_set = test.map(load_jsonl).transpose()?;
            let results = run_ablation(&train_set, &val_set, test_set.as_ref(), &cfg, &seeds)?;
            let table = ablation_table(&results)?;
            fs::write(&out, &table).map_err(|e| Error::io(&out, e))?;
            write_json(&results, &with_suffix(&out, ".runs.json"))?;
            print!("{table}");
        }
        Command::Gradcheck { seed } => {
            let checks = gradient_suite(seed)?;
            for c in &checks {
                let status = if c.passed() { "ok" } else { "FAIL" };
                println!("{:<16} max rel error {:.3e}  {status}", c.component, c.max_rel_error);
            }
            if let Some(bad) = checks.iter().find(|c| !c.passed()) {
                return Err(Error::Config(format!(
                    "gradient check for {} exceeded {GRADCHECK_TOLERANCE:e}",
                    bad.component
                )));
            }
        }
    }
    Ok(())
}
