//! `mnet`: train, evaluate and run M-Net from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
//! diverged, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use mnet_core::data::{list_cases, load_dataset, split_cases, synth_generate, write_case, VolumeRecord};
use mnet_core::model::{flops_estimate, load_checkpoint};
use mnet_core::train::{ablate, default_grid, evaluate_with, segment, train_tps, InputMode, Schedule, TrainData};
use mnet_core::{Error, MNet, SeqKind, TrainConfig};
use serde::Serialize;

const THREADS_ENV: &str = "MESHCAST_THREADS";

#[derive(Parser)]
#[command(name = "mnet", version, about = "M-Net volumetric segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Full training configuration as JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root holding one directory per case.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true, value_parser = clap::value_parser!(SeqKind))]
    seq_kind: Option<SeqKind>,
    #[arg(long, global = true, value_parser = clap::value_parser!(Schedule))]
    phase: Option<Schedule>,
    /// Frames per sequence.
    #[arg(long = "frames", global = true)]
    frames: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the train/val split of --data-dir, then test the best model.
    Train,
    /// Evaluate a checkpoint on every case under --data-dir.
    Eval,
    /// Write predicted label volumes for every case under --data-dir.
    Segment,
    /// Train and test the ablation grid.
    Ablate {
        /// Comma-separated seeds; defaults to the configured seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Write synthetic cases to --data-dir.
    Synth {
        #[arg(long, default_value_t = 10)]
        cases: usize,
        /// Volume shape `D,H,W`.
        #[arg(long, value_delimiter = ',', default_values_t = [32, 64, 64])]
        shape: Vec<usize>,
    },
    /// Print the analytic forward cost of the configured model.
    Flops,
}

/// Errors raised by the CLI itself before reaching the library.
fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Nifti { .. } | Error::Io { .. } => 3,
        Error::Diverged { .. } => 4,
        Error::Tensor(_) => 1,
    }
}

fn init_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| usage(format!("{THREADS_ENV}: {e}")))
}

impl Common {
    /// The configuration file (or the defaults) with flag overrides applied.
    fn train_config(&self) -> Result<TrainConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p).map_err(|e| match e {
                Error::Io { path, source } => usage(format!("{}: {source}", path.display())),
                other => other,
            })?,
            None => TrainConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(k) = self.seq_kind {
            cfg.model.seq.kind = k;
        }
        if let Some(t) = self.frames {
            cfg.model.frames = t;
        }
        if let Some(p) = self.phase {
            cfg = cfg.with_schedule(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn data_dir(&self) -> Result<&Path, Error> {
        self.data_dir.as_deref().ok_or_else(|| usage("--data-dir is required"))
    }

    fn out_dir(&self) -> Result<Option<&Path>, Error> {
        if let Some(d) = &self.out_dir {
            std::fs::create_dir_all(d).map_err(|e| Error::Io { path: d.clone(), source: e })?;
        }
        Ok(self.out_dir.as_deref())
    }

    fn model(&self) -> Result<MNet<f32>, Error> {
        let path = self.checkpoint.as_deref().ok_or_else(|| usage("--checkpoint is required"))?;
        Ok(load_checkpoint::<f32>(path)?.0)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

/// Writes to `out/name` when an output directory is given, else prints.
fn emit<T: Serialize>(out: Option<&Path>, name: &str, value: &T) -> Result<(), Error> {
    match out {
        Some(dir) => write_json(&dir.join(name), value),
        None => {
            println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
            Ok(())
        }
    }
}

fn pick(cases: &[VolumeRecord], ids: &[String]) -> Vec<VolumeRecord> {
    cases.iter().filter(|c| ids.contains(&c.case_id)).cloned().collect()
}

fn train(common: &Common) -> Result<(), Error> {
    let cfg = common.train_config()?;
    let cases = load_dataset(common.data_dir()?, cfg.model.image_size)?;
    let ids: Vec<String> = cases.iter().map(|c| c.case_id.clone()).collect();
    let split = split_cases(&ids, cfg.seed)?;
    let out = common.out_dir()?;
    if let Some(dir) = out {
        write_json(&dir.join("config.json"), &cfg)?;
        write_json(&dir.join("split.json"), &split)?;
    }
    info!(
        "{} train, {} val, {} test cases",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    let data = TrainData {
        train: pick(&cases, &split.train),
        val: pick(&cases, &split.val),
    };
    let outcome = train_tps::<f32>(&cfg, &data, out)?;
    let report = evaluate_with(&outcome.model, &pick(&cases, &split.test), cfg.dice_mode)?;
    if let Some(dir) = out {
        write_json(&dir.join("run.json"), &outcome.record)?;
        write_json(&dir.join("test_metrics.json"), &report)?;
    }
    let r = &outcome.record;
    println!(
        "best epoch {} (val mean Dice {:.4}); test Dice WT {:.4} TC {:.4} ET {:.4}",
        r.best_epoch, r.best_val_mean_dice, report.mean_dice.wt, report.mean_dice.tc, report.mean_dice.et
    );
    Ok(())
}

fn eval(common: &Common) -> Result<(), Error> {
    let model = common.model()?;
    let dice_mode = match &common.config {
        Some(_) => common.train_config()?.dice_mode,
        None => TrainConfig::default().dice_mode,
    };
    let cases = load_dataset(common.data_dir()?, model.config.image_size)?;
    let report = evaluate_with(&model, &cases, dice_mode)?;
    emit(common.out_dir()?, "eval.json", &report)
}

fn segment_all(common: &Common) -> Result<(), Error> {
    let model = common.model()?;
    let root = common.data_dir()?;
    let out = common.out_dir()?.ok_or_else(|| usage("--out-dir is required"))?;
    let ids = list_cases(root)?;
    // A directory without subdirectories is taken to be a single case.
    let dirs: Vec<PathBuf> = if ids.is_empty() {
        vec![root.to_path_buf()]
    } else {
        ids.iter().map(|id| root.join(id)).collect()
    };
    for dir in dirs {
        let id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let path = out.join(format!("{id}_pred.nii.gz"));
        segment(&model, &dir, &path)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn ablate_grid(common: &Common, seeds: &[u64]) -> Result<(), Error> {
    let cfg = common.train_config()?;
    let cells: Vec<_> = default_grid()
        .into_iter()
        .filter(|c| common.seq_kind.is_none_or(|k| c.seq == k))
        .filter(|c| {
            common.phase.is_none_or(|p| match p {
                Schedule::Tps => c.input == InputMode::Tps,
                Schedule::Ordered => c.input != InputMode::Tps,
                Schedule::Shuffled => false,
            })
        })
        .collect();
    if cells.is_empty() {
        return Err(usage("no ablation cells match the given --seq-kind/--phase"));
    }
    let seeds = if seeds.is_empty() { vec![cfg.seed] } else { seeds.to_vec() };
    let cases = load_dataset(common.data_dir()?, cfg.model.image_size)?;
    let table = ablate(&cfg, &cells, &cases, &seeds)?;
    let markdown = table.to_markdown();
    if let Some(dir) = common.out_dir()? {
        write_json(&dir.join("ablation.json"), &table)?;
        let path = dir.join("ablation.md");
        std::fs::write(&path, &markdown).map_err(|e| Error::Io { path, source: e })?;
    }
    print!("{markdown}");
    Ok(())
}

fn synth(common: &Common, n: usize, shape: &[usize]) -> Result<(), Error> {
    let root = common.data_dir()?;
    let shape: [usize; 3] = shape.try_into().map_err(|_| usage("--shape takes three sizes"))?;
    let cases = synth_generate(n, shape, common.seed.unwrap_or(0))?;
    for case in &cases {
        write_case(root, case)?;
    }
    println!("wrote {} cases to {}", cases.len(), root.display());
    Ok(())
}

fn flops(common: &Common) -> Result<(), Error> {
    let cfg = common.train_config()?;
    let report = flops_estimate(&cfg.model, cfg.model.frames)?;
    emit(common.out_dir()?, "flops.json", &report)
}

fn run(cli: Cli) -> Result<(), Error> {
    init_threads()?;
    let c = &cli.common;
    match &cli.command {
        Command::Train => train(c),
        Command::Eval => eval(c),
        Command::Segment => segment_all(c),
        Command::Ablate { seeds } => ablate_grid(c, seeds),
        Command::Synth { cases, shape } => synth(c, *cases, shape),
        Command::Flops => flops(c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
