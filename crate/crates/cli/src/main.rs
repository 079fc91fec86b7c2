//! `sac`: data generation, training, evaluation, ablations and visual dumps.
//!
//! Any config key may be passed as `--key value` (or `--key=value`); these
//! override the preset and the `--config` file, in that order.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sac_core::harness::checkpoint;
use sac_core::harness::config::{Config, KEYS};
use sac_core::harness::evaluate::{check_mode, evaluate, EvalReport};
use sac_core::harness::experiments::{compare_dropping, sweep, SweepKnob};
use sac_core::harness::report::{json_line, render_table, MetricsReport};
use sac_core::harness::train::train;
use sac_core::harness::visualize::{localize_image, visualize};
use sac_core::model::{InferenceMode, SacModel};
use sac_core::synthdata::{generate_dataset, load_manifest, Dataset, DatasetSpec, Split};
use sac_core::SacError;

#[derive(Parser)]
#[command(
    name = "sac",
    version,
    about = "Self assessment classifier on synthetic fine-grained data",
    after_help = "Config keys may be overridden with --KEY VALUE; see `sac keys`."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Base preset before the config file and overrides (desk|paper).
    #[arg(long, default_value = "desk", global = true)]
    preset: String,
    /// key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset and its manifest.
    GenerateData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        groups: usize,
        #[arg(long, default_value_t = 4)]
        siblings: usize,
        #[arg(long, default_value_t = 50)]
        images_per_class: usize,
        #[arg(long, default_value_t = 32)]
        image_size: usize,
        /// Disable pose, background and brightness jitter.
        #[arg(long)]
        clean: bool,
    },
    /// Train and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Manifest file or the dataset directory holding manifest.jsonl.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "sac.ckpt")]
        out: PathBuf,
    },
    /// Accuracy of a checkpoint on one split; `--mode all` runs every mode.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Write per-image predictions as JSON lines.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attention heatmaps, keep mask, crop and prediction for one image.
    Visualize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Localize, crop and classify one image.
    Localize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value = "crop.png")]
        out: PathBuf,
    },
    /// Matched-seed dropping variants.
    CompareDropping {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// One-knob sweep over alpha, k or d_phi.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        knob: String,
    },
    /// List config keys with their values under the chosen preset.
    Keys {
        #[command(flatten)]
        common: Common,
    },
}

type Overrides = Vec<(String, String)>;

/// Splits `--key value` pairs for known config keys out of `args`.
fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.replace('-', "_"), Some(v.to_string())),
            None => (flag.replace('-', "_"), None),
        };
        if !KEYS.contains(&name.as_str()) && name != "mode" {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| SacError::Config {
                key: name.clone(),
                msg: "flag needs a value".into(),
            })?,
        };
        overrides.push((name, value));
    }
    Ok((rest, overrides))
}

fn base_config(common: &Common) -> Result<Config> {
    let mut cfg = Config::preset(&common.preset)?;
    if let Some(path) = &common.config {
        if !path.exists() {
            return Err(SacError::MissingFile(path.clone()).into());
        }
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
    }
    Ok(cfg)
}

fn apply(cfg: &mut Config, overrides: &[(String, String)]) -> Result<()> {
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(())
}

fn load_data(path: &Path) -> Result<Dataset> {
    let manifest = if path.is_dir() {
        path.join("manifest.jsonl")
    } else {
        path.to_path_buf()
    };
    Ok(load_manifest(&manifest)?)
}

/// Checkpoint config with the `--config` file and overrides on top. The
/// preset is ignored; architecture keys must not change.
fn load_checkpoint(
    path: &Path,
    common: &Common,
    overrides: &[(String, String)],
) -> Result<(Config, SacModel)> {
    let (mut cfg, model) = checkpoint::load(path)?;
    let arch = cfg.dims(model.num_classes());
    if let Some(file) = &common.config {
        if !file.exists() {
            return Err(SacError::MissingFile(file.clone()).into());
        }
        cfg.apply_text(&std::fs::read_to_string(file)?)?;
    }
    apply(&mut cfg, overrides)?;
    if cfg.dims(model.num_classes()) != arch {
        return Err(SacError::Config {
            key: "architecture".into(),
            msg: "overrides change the checkpoint architecture".into(),
        }
        .into());
    }
    Ok((cfg, model))
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(SacError::InvalidArgument(format!("split must be train|test, got {s:?}")).into()),
    }
}

fn eval_table(reports: &[EvalReport]) -> String {
    MetricsReport {
        epochs: Vec::new(),
        evals: reports.to_vec(),
        params: Default::default(),
        train_secs: 0.0,
    }
    .table()
}

fn run(command: Command, overrides: &[(String, String)]) -> Result<()> {
    match command {
        Command::GenerateData {
            common,
            out,
            groups,
            siblings,
            images_per_class,
            image_size,
            clean,
        } => {
            let mut cfg = base_config(&common)?;
            apply(&mut cfg, overrides)?;
            let spec = DatasetSpec {
                groups,
                siblings,
                images_per_class,
                image_size,
                seed: cfg.seed,
                nuisance: !clean,
            };
            let manifest = generate_dataset(&spec, &out)?;
            let train = manifest
                .records
                .iter()
                .filter(|r| r.split == Split::Train)
                .count();
            let summary = json!({
                "manifest": manifest.path,
                "classes": spec.num_classes(),
                "images": manifest.records.len(),
                "train": train,
                "test": manifest.records.len() - train,
            });
            println!("{summary}");
            println!(
                "{}",
                render_table(
                    &["classes", "images", "train", "test"],
                    &[vec![
                        spec.num_classes().to_string(),
                        manifest.records.len().to_string(),
                        train.to_string(),
                        (manifest.records.len() - train).to_string(),
                    ]],
                )
            );
        }
        Command::Train { common, data, out } => {
            let mut cfg = base_config(&common)?;
            apply(&mut cfg, overrides)?;
            let data = load_data(&data)?;
            let start = std::time::Instant::now();
            let outcome = train(&cfg, &data, Some(&out))?;
            let train_secs = start.elapsed().as_secs_f64();
            for e in &outcome.epochs {
                println!("{}", json_line(e));
            }
            let modes: Vec<InferenceMode> = InferenceMode::ALL
                .into_iter()
                .filter(|&m| check_mode(&cfg, m).is_ok())
                .collect();
            let evals = modes
                .iter()
                .map(|&m| evaluate(&outcome.model, &cfg, &data, Split::Test, m))
                .collect::<sac_core::Result<Vec<_>>>()?;
            let report = MetricsReport {
                epochs: outcome.epochs,
                evals,
                params: outcome.model.param_counts(),
                train_secs,
            };
            println!(
                "{}",
                json_line(&json!({ "checkpoint": out, "report": &report }))
            );
            print!("{}", report.table());
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            split,
            out,
        } => {
            let all = overrides.iter().any(|(k, v)| k == "mode" && v == "all");
            let kept: Vec<_> = overrides
                .iter()
                .filter(|(k, v)| !(k == "mode" && v == "all"))
                .cloned()
                .collect();
            let (cfg, model) = load_checkpoint(&checkpoint, &common, &kept)?;
            let data = load_data(&data)?;
            let split = parse_split(&split)?;
            let modes: Vec<InferenceMode> = if all {
                InferenceMode::ALL
                    .into_iter()
                    .filter(|&m| check_mode(&cfg, m).is_ok())
                    .collect()
            } else {
                vec![cfg.inference_mode]
            };
            let reports = modes
                .iter()
                .map(|&m| evaluate(&model, &cfg, &data, split, m))
                .collect::<sac_core::Result<Vec<_>>>()?;
            if let Some(path) = out {
                let lines: String = reports
                    .iter()
                    .flat_map(|r| r.records.iter().map(|p| json_line(p) + "\n"))
                    .collect();
                std::fs::write(&path, lines)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            for r in &reports {
                println!("{}", json_line(r));
            }
            print!("{}", eval_table(&reports));
        }
        Command::Visualize {
            common,
            checkpoint,
            image,
            out,
        } => {
            let (cfg, model) = load_checkpoint(&checkpoint, &common, overrides)?;
            let v = visualize(&model, &cfg, &image, &out)?;
            println!("{}", json_line(&v.record));
            let rows: Vec<Vec<String>> = v
                .record
                .topk_names
                .iter()
                .zip(&v.attention_column_sums)
                .enumerate()
                .map(|(j, (name, s))| vec![j.to_string(), name.clone(), format!("{s:.4}")])
                .collect();
            print!("{}", render_table(&["rank", "class", "attention"], &rows));
            for f in &v.files {
                println!("{}", f.display());
            }
        }
        Command::Localize {
            common,
            checkpoint,
            image,
            out,
        } => {
            let (cfg, model) = load_checkpoint(&checkpoint, &common, overrides)?;
            let (b, record) = localize_image(&model, &cfg, &image, &out)?;
            println!("{}", json_line(&record));
            print!(
                "{}",
                render_table(
                    &["x1", "y1", "x2", "y2", "label", "crop"],
                    &[vec![
                        b.x1.to_string(),
                        b.y1.to_string(),
                        b.x2.to_string(),
                        b.y2.to_string(),
                        model.class_names[record.top1].clone(),
                        out.display().to_string(),
                    ]],
                )
            );
        }
        Command::CompareDropping { common, data } => {
            let mut cfg = base_config(&common)?;
            apply(&mut cfg, overrides)?;
            let data = load_data(&data)?;
            let rows = compare_dropping(&cfg, &data)?;
            for r in &rows {
                println!("{}", json_line(r));
            }
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| vec![r.variant.clone(), format!("{:.4}", r.top1)])
                .collect();
            print!("{}", render_table(&["variant", "top1"], &table));
        }
        Command::Sweep { common, data, knob } => {
            let mut cfg = base_config(&common)?;
            apply(&mut cfg, overrides)?;
            let knob: SweepKnob = knob.parse()?;
            let data = load_data(&data)?;
            let rows = sweep(&cfg, &data, knob)?;
            for r in &rows {
                println!("{}", json_line(r));
            }
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| vec![r.value.to_string(), format!("{:.4}", r.top1)])
                .collect();
            print!("{}", render_table(&[&knob.to_string(), "top1"], &table));
        }
        Command::Keys { common } => {
            let mut cfg = base_config(&common)?;
            apply(&mut cfg, overrides)?;
            print!("{}", cfg.to_text());
        }
    }
    Ok(())
}

/// `sac: error: <kind>: <message>` on one line.
fn error_line(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<SacError>())
        .map_or("io", SacError::kind);
    let msg = format!("{err:#}").replace('\n', " ");
    format!("sac: error: {kind}: {msg}")
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let (rest, overrides) = match extract_overrides(args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("sac: error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
