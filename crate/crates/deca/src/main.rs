use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deca::checkpoint::Checkpoint;
use deca::config::ExperimentConfig;
use deca::error::{CliError, Result};
use deca::{dataset, eval, export, train, transfer};
use deca_core::synth::ViewTag;

#[derive(Parser)]
#[command(name = "deca", version, about = "Capsule autoencoder for 3D pose from depth images")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Overrides {
    /// Override any config key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a paired front/top synthetic dataset.
    SynthGen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// synth.frames
        #[arg(long)]
        frames: Option<usize>,
        /// synth.seed
        #[arg(long)]
        seed: Option<u64>,
        /// synth.first_frame_id
        #[arg(long)]
        first_frame_id: Option<u64>,
        /// synth.image_size
        #[arg(long)]
        image_size: Option<usize>,
        #[command(flatten)]
        ov: Overrides,
    },
    /// Train a model; writes config.toml, train_log.jsonl and last.ckpt.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// data.train
        #[arg(long)]
        data: Option<PathBuf>,
        /// data.view (front or top)
        #[arg(long)]
        view: Option<String>,
        /// model.tasks (d1, d2, d3, r4 or a list like 3d,2d)
        #[arg(long)]
        tasks: Option<String>,
        /// train.epochs
        #[arg(long)]
        epochs: Option<usize>,
        /// train.batch_size
        #[arg(long)]
        batch_size: Option<usize>,
        /// train.learning_rate
        #[arg(long)]
        lr: Option<f64>,
        /// train.seed
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        ov: Overrides,
    },
    /// Score a checkpoint on one view of a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Defaults to data.test from the checkpoint's config.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "map,mpjpe,mpjpe-procrustes")]
        metrics: String,
        #[arg(long)]
        out: PathBuf,
        /// Test view; defaults to the training view.
        #[arg(long)]
        view: Option<String>,
        /// eval.radius in metres
        #[arg(long)]
        radius: Option<f64>,
        #[command(flatten)]
        ov: Overrides,
    },
    /// Four-way train/test view table for a front and a top checkpoint.
    Transfer {
        #[arg(long)]
        ckpt_front: PathBuf,
        #[arg(long)]
        ckpt_top: PathBuf,
        #[arg(long)]
        data_front: PathBuf,
        #[arg(long)]
        data_top: PathBuf,
        #[arg(long, default_value = "map,mpjpe,mpjpe-procrustes")]
        metrics: String,
        #[arg(long)]
        out: PathBuf,
        /// eval.radius in metres
        #[arg(long)]
        radius: Option<f64>,
        #[command(flatten)]
        ov: Overrides,
    },
    /// Write the class-capsule entities of every frame as CSV.
    ExportEntities {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        view: Option<String>,
        #[command(flatten)]
        ov: Overrides,
    },
}

fn push<T: ToString>(list: &mut Vec<String>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        list.push(format!("{key}={}", toml_literal(&v.to_string())));
    }
}

/// Quote anything that is not already a TOML number or boolean.
fn toml_literal(raw: &str) -> String {
    if raw.parse::<f64>().is_ok() || raw == "true" || raw == "false" {
        raw.to_string()
    } else {
        format!("{raw:?}")
    }
}

fn parse_view(s: &str) -> Result<ViewTag> {
    match s.trim().to_ascii_lowercase().as_str() {
        "front" => Ok(ViewTag::Front),
        "top" => Ok(ViewTag::Top),
        other => Err(CliError::Config(format!("unknown view {other:?} (front or top)"))),
    }
}

/// Apply overrides to a checkpoint's stored config. The model section is fixed by the weights.
fn reconfigure(ckpt: &mut Checkpoint, overrides: &[String]) -> Result<()> {
    let mut cfg = ckpt.config.clone();
    for ov in overrides {
        cfg = cfg.with_override(ov)?;
    }
    if cfg.model != ckpt.config.model {
        return Err(CliError::Config("model.* keys cannot be overridden on a trained checkpoint".into()));
    }
    ckpt.config = cfg;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::SynthGen {
            config,
            out,
            frames,
            seed,
            first_frame_id,
            image_size,
            ov,
        } => {
            let mut sets = Vec::new();
            push(&mut sets, "synth.frames", frames);
            push(&mut sets, "synth.seed", seed);
            push(&mut sets, "synth.first_frame_id", first_frame_id);
            push(&mut sets, "synth.image_size", image_size);
            sets.extend(ov.set);
            let cfg = ExperimentConfig::load(config.as_deref(), &sets)?;
            let m = dataset::generate_dataset(&cfg.synth, &out)?;
            eprintln!("wrote {} samples to {}", m.samples.len(), out.display());
        }
        Cmd::Train {
            config,
            out,
            data,
            view,
            tasks,
            epochs,
            batch_size,
            lr,
            seed,
            ov,
        } => {
            let mut sets = Vec::new();
            push(&mut sets, "data.train", data.map(|p| p.display().to_string()));
            push(&mut sets, "data.view", view);
            push(&mut sets, "model.tasks", tasks);
            push(&mut sets, "train.epochs", epochs);
            push(&mut sets, "train.batch_size", batch_size);
            push(&mut sets, "train.learning_rate", lr);
            push(&mut sets, "train.seed", seed);
            sets.extend(ov.set);
            let cfg = ExperimentConfig::load(config.as_deref(), &sets)?;
            let ckpt = train::train(&cfg, &out)?;
            eprintln!("trained {} epochs; checkpoint in {}", ckpt.epoch, out.join("last.ckpt").display());
        }
        Cmd::Eval {
            ckpt,
            data,
            metrics,
            out,
            view,
            radius,
            ov,
        } => {
            let mut c = Checkpoint::load(&ckpt)?;
            let mut sets = Vec::new();
            push(&mut sets, "eval.radius", radius);
            sets.extend(ov.set);
            reconfigure(&mut c, &sets)?;
            let data = data
                .or_else(|| c.config.data.test.clone())
                .ok_or_else(|| CliError::Config("no --data given and data.test is unset".into()))?;
            let view = view.as_deref().map(parse_view).transpose()?;
            let output = eval::evaluate(&c, &data, view, &eval::parse_metrics(&metrics)?)?;
            eval::write_eval(&out, &c.config, &output, &export::joint_names(&c.config))?;
            for r in &output.reports {
                eprintln!("{}: mean {:.3}", r.metric_tag.as_str(), r.mean);
            }
        }
        Cmd::Transfer {
            ckpt_front,
            ckpt_top,
            data_front,
            data_top,
            metrics,
            out,
            radius,
            ov,
        } => {
            let mut sets = Vec::new();
            push(&mut sets, "eval.radius", radius);
            sets.extend(ov.set);
            let mut a = Checkpoint::load(&ckpt_front)?;
            let mut b = Checkpoint::load(&ckpt_top)?;
            reconfigure(&mut a, &sets)?;
            reconfigure(&mut b, &sets)?;
            let metrics = eval::parse_metrics(&metrics)?;
            let output = transfer::transfer([&a, &b], &data_front, &data_top, &metrics)?;
            transfer::write_transfer(&out, [&a, &b], &output)?;
            for cell in &output.table.cells {
                eprintln!(
                    "train {} / test {}: {}",
                    cell.train_view.as_str(),
                    cell.test_view.as_str(),
                    cell.reports
                        .iter()
                        .map(|r| format!("{} {:.3}", r.metric_tag.as_str(), r.mean))
                        .collect::<Vec<_>>()
                        .join(", ")
                );
            }
        }
        Cmd::ExportEntities { ckpt, data, out, view, ov } => {
            let mut c = Checkpoint::load(&ckpt)?;
            reconfigure(&mut c, &ov.set)?;
            let view = view.as_deref().map(parse_view).transpose()?;
            let s = export::export_entities(&c, &data, view, &out)?;
            eprintln!("{} rows, silhouette {:.4}", s.frames * s.joints, s.silhouette);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", serde_json::json!({ "error": "usage", "message": msg.trim_end() }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
