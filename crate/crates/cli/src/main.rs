use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use vidgate::gating::{infer_all_with, train_gates, ExitRecord, GateBank};
use vidgate::head::{classify_all_frames, train_head};
use vidgate::pipeline::ablation::{ablation_run, beta_grid, GatedSweep};
use vidgate::pipeline::config::RunConfig;
use vidgate::pipeline::explain::export_explanations;
use vidgate::pipeline::featfile::{load_dataset, save_dataset};
use vidgate::pipeline::modelfile::ModelFile;
use vidgate::pipeline::record::VideoRecord;
use vidgate::pipeline::report::build_report;
use vidgate::pipeline::synth::{synth_dataset, SynthSpec};

#[derive(Parser)]
#[command(name = "vidgate", version, about = "Early-exit video event recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log: log::LevelFilter,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of feature files.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset to --out.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Split index; splits share class directions but not videos.
        #[arg(long, default_value_t = 0)]
        split: u64,
    },
    /// Train the recognition head on --data and write --model.
    TrainHead {
        #[command(flatten)]
        common: Common,
    },
    /// Train the exit gates for the head in --model.
    TrainGates {
        #[command(flatten)]
        common: Common,
    },
    /// Gated inference; writes records.json, report.json and report_gates.csv.
    Infer {
        #[command(flatten)]
        common: Common,
    },
    /// All-frames and gated metrics; writes eval.json.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Policy x budget table; writes ablation.csv and ablation.json.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Training features for the gated row; the row is skipped without them.
        #[arg(long)]
        train: Option<PathBuf>,
    },
    /// Frame and object explanations; writes explanations.json.
    Explain {
        #[command(flatten)]
        common: Common,
    },
    /// Rebuild report.json and report_gates.csv from a records file.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        records: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .downcast_ref::<vidgate::Error>()
                .map_or("cli", vidgate::Error::kind);
            eprintln!("{}", json!({ "error": { "kind": kind, "message": format!("{e:#}") } }));
            ExitCode::FAILURE
        }
    }
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> anyhow::Result<&'a Path> {
    p.as_deref().ok_or_else(|| anyhow!("--{flag} is required"))
}

fn config(c: &Common) -> anyhow::Result<RunConfig> {
    Ok(match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn dataset(dir: &Path) -> anyhow::Result<Vec<VideoRecord>> {
    let loaded = load_dataset(dir)?;
    if !loaded.rejected.is_empty() {
        log::warn!("{} files rejected", loaded.rejected.len());
    }
    if loaded.videos.is_empty() {
        return Err(vidgate::Error::Empty("dataset").into());
    }
    Ok(loaded.videos)
}

fn model(c: &Common, cfg: &RunConfig) -> anyhow::Result<ModelFile> {
    let m = ModelFile::load(need(&c.model, "model")?)?;
    if m.config_hash != cfg.hash()? {
        log::warn!("model was trained with a different configuration");
    }
    Ok(m)
}

fn out_dir(c: &Common) -> anyhow::Result<&Path> {
    let dir = need(&c.out, "out")?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn gated_records(
    cfg: &RunConfig,
    m: &ModelFile,
    videos: &[VideoRecord],
) -> anyhow::Result<Vec<ExitRecord>> {
    let gates = m.require_gates()?;
    Ok(infer_all_with(&m.head, gates, &m.schedule, &cfg.cost, videos, cfg.caching)?)
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Synth { common, split } => {
            let cfg = config(&common)?;
            let spec = SynthSpec { split, ..cfg.synth };
            let d = synth_dataset(&spec)?;
            let dir = out_dir(&common)?;
            save_dataset(dir, &d.videos)?;
            println!("{}", json!({ "videos": d.videos.len(), "hard": d.hard.iter().filter(|h| **h).count() }));
        }
        Command::TrainHead { common } => {
            let cfg = config(&common)?;
            let videos = dataset(need(&common.data, "data")?)?;
            let trained = train_head(&videos, cfg.classes, cfg.label_mode, &cfg.head_train)?;
            let m = ModelFile {
                config_hash: cfg.hash()?,
                head: trained.params,
                schedule: cfg.schedule.clone(),
                gates: GateBank { gates: Vec::new() },
            };
            m.save(need(&common.model, "model")?)?;
            println!("{}", json!({ "epoch_losses": trained.epoch_losses, "checksum": m.head.checksum() }));
        }
        Command::TrainGates { common } => {
            let cfg = config(&common)?;
            let videos = dataset(need(&common.data, "data")?)?;
            let mut m = model(&common, &cfg)?;
            let trained = train_gates(&m.head, &videos, &cfg.schedule, &cfg.gate_train)?;
            m.gates = trained.gates;
            m.schedule = cfg.schedule.clone();
            m.config_hash = cfg.hash()?;
            m.save(need(&common.model, "model")?)?;
            println!("{}", json!({ "epoch_losses": trained.epoch_losses, "checksum": m.gates.checksum() }));
        }
        Command::Infer { common } => {
            let cfg = config(&common)?;
            let videos = dataset(need(&common.data, "data")?)?;
            let m = model(&common, &cfg)?;
            let records = gated_records(&cfg, &m, &videos)?;
            let report = build_report(&records, &videos, &m.schedule, &cfg.cost, cfg.metric)?;
            let dir = out_dir(&common)?;
            write(dir, "records.json", &serde_json::to_string_pretty(&records)?)?;
            write(dir, "report.json", &report.to_json()?)?;
            write(dir, "report_gates.csv", &report.gates_csv())?;
            println!("{}", json!({ "metric": report.metric, "avg_frames": report.avg_frames, "cost_ratio": report.cost_ratio }));
        }
        Command::Eval { common } => {
            let cfg = config(&common)?;
            let videos = dataset(need(&common.data, "data")?)?;
            let m = model(&common, &cfg)?;
            let labels: Vec<Vec<usize>> = videos.iter().map(|v| v.labels.clone()).collect();
            let all: Vec<Vec<f64>> = videos
                .iter()
                .map(|v| classify_all_frames(&m.head, v))
                .collect::<vidgate::Result<_>>()?;
            let mut result = json!({
                "metric": cfg.metric,
                "all_frames": cfg.metric.eval(&all, &labels)?,
            });
            if m.has_gates() {
                let records = gated_records(&cfg, &m, &videos)?;
                let report = build_report(&records, &videos, &m.schedule, &cfg.cost, cfg.metric)?;
                result["gated"] = json!(report.metric);
                result["avg_frames"] = json!(report.avg_frames);
            }
            let text = serde_json::to_string_pretty(&result)?;
            if common.out.is_some() {
                write(out_dir(&common)?, "eval.json", &text)?;
            }
            println!("{}", result);
        }
        Command::Ablate { common, train } => {
            let cfg = config(&common)?;
            let videos = dataset(need(&common.data, "data")?)?;
            let m = model(&common, &cfg)?;
            let examples = match (&train, cfg.ablation.gated) {
                (Some(dir), true) => Some(vidgate::gating::gate_examples(
                    &m.head,
                    &dataset(dir)?,
                    &cfg.schedule,
                )?),
                _ => None,
            };
            let sweep = examples.as_deref().map(|ex| GatedSweep {
                train_examples: ex,
                schedule: cfg.schedule.clone(),
                train: cfg.gate_train.clone(),
                betas: beta_grid(
                    cfg.ablation.beta_range[0],
                    cfg.ablation.beta_range[1],
                    cfg.ablation.beta_steps,
                ),
            });
            let table = ablation_run(
                &videos,
                &m.head,
                &cfg.ablation.policies,
                &cfg.ablation.budgets,
                cfg.metric,
                cfg.seed,
                sweep.as_ref(),
            )?;
            let dir = out_dir(&common)?;
            write(dir, "ablation.csv", &table.to_csv())?;
            write(dir, "ablation.json", &serde_json::to_string_pretty(&table)?)?;
            print!("{}", table.to_csv());
        }
        Command::Explain { common } => {
            let cfg = config(&common)?;
            let videos = dataset(need(&common.data, "data")?)?;
            let m = model(&common, &cfg)?;
            let records = gated_records(&cfg, &m, &videos)?;
            let ex = export_explanations(
                &records,
                &videos,
                cfg.explain.top_frames,
                cfg.explain.top_objects,
            )?;
            write(out_dir(&common)?, "explanations.json", &serde_json::to_string_pretty(&ex)?)?;
            println!("{}", json!({ "videos": ex.len() }));
        }
        Command::Report { common, records } => {
            let cfg = config(&common)?;
            let videos = dataset(need(&common.data, "data")?)?;
            let m = model(&common, &cfg)?;
            let text = fs::read_to_string(&records)
                .with_context(|| format!("reading {}", records.display()))?;
            let records: Vec<ExitRecord> = serde_json::from_str(&text)?;
            let report = build_report(&records, &videos, &m.schedule, &cfg.cost, cfg.metric)?;
            let dir = out_dir(&common)?;
            write(dir, "report.json", &report.to_json()?)?;
            write(dir, "report_gates.csv", &report.gates_csv())?;
            println!("{}", json!({ "metric": report.metric, "avg_frames": report.avg_frames, "cost_ratio": report.cost_ratio }));
        }
    }
    Ok(())
}
