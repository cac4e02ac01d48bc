//! Command-line interface: synthetic data generation, two-stage training,
//! quantized export, evaluation, and model accounting.
//!
//! Exit codes: 0 ok, 2 usage, 3 config, 4 data, 5 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use limuse::accounting::AccountingReport;
use limuse::error::Error;
use limuse::model::LiMuseModel;
use limuse::nn::ParamStore;
use limuse::synth::{generate_split, DatasetSpec, SynthConfig};
use limuse::train::{
    evaluate, load_checkpoint, save_checkpoint, train_config_from_text, Adam, Checkpoint,
    CueSelection, Dataset, Stage, TrainState,
};

#[derive(Parser)]
#[command(
    name = "limuse",
    about = "Lightweight multi-modal speaker extraction: data synthesis, training, quantization, evaluation, accounting",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic two-speaker mixture splits (train/val/test).
    SynthData(SynthDataArgs),
    /// Train the full-precision model.
    Train(TrainArgs),
    /// Quantization-aware training from a full-precision checkpoint,
    /// exporting packed low-bit weights.
    Quantize(QuantizeArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Parameter / MACs / model-size accounting report.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthDataArgs {
    /// Output dataset directory (train/, val/, test/ subdirectories).
    #[arg(long)]
    out: PathBuf,
    /// Number of training speakers (validation and test each add 2 more,
    /// disjoint from these).
    #[arg(long)]
    speakers: u32,
    /// Hours of training audio to generate.
    #[arg(long)]
    hours: f64,
    /// Master seed; everything is bit-reproducible given this.
    #[arg(long)]
    seed: u64,
    /// Clip length in seconds.
    #[arg(long, default_value_t = 3.0)]
    clip_seconds: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Dataset directory produced by synth-data.
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QuantizeArgs {
    /// Full-precision checkpoint to start from.
    #[arg(long)]
    from: PathBuf,
    /// Configuration file (training hyperparameters for the QAT stage;
    /// the architecture comes from the checkpoint).
    #[arg(long)]
    config: PathBuf,
    /// Dataset directory (the QAT stage trains on its train/ split).
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint path (packed low-bit weights).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    ckpt: PathBuf,
    /// Split directory (contains manifest.csv), e.g. DATASET/test.
    #[arg(long)]
    data: PathBuf,
    /// Force quantized inference (packed checkpoints always use it).
    #[arg(long)]
    quantized: bool,
    /// Print a flat JSON object instead of the table.
    #[arg(long)]
    json: bool,
    /// Zero the voiceprint cue at the input (ablation).
    #[arg(long)]
    no_voiceprint: bool,
    /// Zero the visual cue at the input (ablation).
    #[arg(long)]
    no_visual: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Checkpoint to report on.
    #[arg(long, conflicts_with = "config")]
    ckpt: Option<PathBuf>,
    /// Or: a configuration file describing an untrained architecture.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Probe input length in seconds for the MACs column.
    #[arg(long, default_value_t = 3.0)]
    seconds: f64,
    /// Emit CSV instead of the aligned table.
    #[arg(long)]
    csv: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 3,
        Error::Data(_) | Error::Io(_) => 4,
        Error::Numeric(_) => 5,
        _ => 1,
    }
}

fn run(cli: Cli) -> limuse::Result<()> {
    match cli.command {
        Command::SynthData(a) => synth_data(a),
        Command::Train(a) => train(a),
        Command::Quantize(a) => quantize(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
    }
}

fn synth_data(a: SynthDataArgs) -> limuse::Result<()> {
    if a.hours <= 0.0 || a.clip_seconds <= 0.0 {
        return Err(Error::Config("hours and clip-seconds must be positive".into()));
    }
    let train_count = ((a.hours * 3600.0 / a.clip_seconds).round() as usize).max(1);
    let val_count = (train_count / 10).max(2);
    let test_count = (train_count * 15 / 100).max(2);
    let spec = DatasetSpec {
        cfg: SynthConfig::default(),
        train_speakers: a.speakers,
        val_speakers: 2,
        test_speakers: 2,
        train_count,
        val_count,
        test_count,
        clip_seconds: a.clip_seconds,
        seed: a.seed,
    };
    spec.validate()?;
    let (tr, va, te) = spec.speaker_ranges();
    for (name, speakers, count, seed_off) in [
        ("train", &tr, train_count, 0u64),
        ("val", &va, val_count, 1),
        ("test", &te, test_count, 2),
    ] {
        let mixtures =
            generate_split(&spec.cfg, speakers, count, a.clip_seconds, a.seed + seed_off)?;
        limuse::io::manifest::write_split(&a.out.join(name), &mixtures)?;
        println!(
            "{name}: {count} mixtures of {:.2}s from speakers {speakers:?}",
            a.clip_seconds
        );
    }
    Ok(())
}

fn read_config(
    path: &PathBuf,
) -> limuse::Result<(limuse::model::ModelConfig, limuse::train::TrainConfig)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    train_config_from_text(&text)
}

fn train(a: TrainArgs) -> limuse::Result<()> {
    let (model_cfg, train_cfg) = read_config(&a.config)?;
    let train_set = Dataset::from_dir(&a.data.join("train"))?;
    let val_set = Dataset::from_dir(&a.data.join("val"))?;
    println!("train: {} samples, val: {} samples", train_set.len(), val_set.len());

    let mut store = ParamStore::new();
    let model = LiMuseModel::build(&mut store, &model_cfg, train_cfg.seed)?;
    println!("model: {} parameters", store.total_values());

    let mut adam = Adam::new(&train_cfg);
    let print_epoch = |e: &limuse::train::EpochStats| {
        println!(
            "epoch {:3}: train loss {:+8.3}  val SI-SDR {:+7.3} dB  lr {:.2e}",
            e.epoch, e.train_loss, e.val_si_sdr, e.lr
        );
    };
    let outcome = limuse::train::train_stage_with(
        &model,
        &mut store,
        &mut adam,
        &train_set,
        &val_set,
        &train_cfg,
        Stage::FullPrecision,
        Some(&print_epoch),
    )?;
    println!("best epoch {} with val SI-SDR {:+.3} dB", outcome.best_epoch, outcome.best_val);

    let state = TrainState {
        epoch: outcome.best_epoch as u32,
        best_metric: outcome.best_val as f32,
        lr: train_cfg.lr_init as f32,
    };
    save_checkpoint(
        &a.out,
        &Checkpoint { model: &model, store: &store, state, adam: Some(&adam), packed: false },
    )?;
    println!("saved {}", a.out.display());
    Ok(())
}

fn quantize(a: QuantizeArgs) -> limuse::Result<()> {
    let (_, train_cfg) = read_config(&a.config)?;
    let loaded = load_checkpoint(&a.from)?;
    if loaded.quantized {
        return Err(Error::Config(format!(
            "{} already holds packed quantized weights",
            a.from.display()
        )));
    }
    let mut model = loaded.model;
    let mut store = loaded.store;
    let train_set = Dataset::from_dir(&a.data.join("train"))?;
    let val_set = Dataset::from_dir(&a.data.join("val"))?;
    println!(
        "quantization-aware training: {}-bit weights, {}-bit activations",
        model.cfg.w_q, model.cfg.a_q
    );
    let print_epoch = |e: &limuse::train::EpochStats| {
        println!(
            "epoch {:3}: train loss {:+8.3}  val SI-SDR {:+7.3} dB  T {:5.0}  lr {:.2e}",
            e.epoch,
            e.train_loss,
            e.val_si_sdr,
            e.temperature.unwrap_or(0.0),
            e.lr
        );
    };
    let outcome = limuse::train::quantize_stage_with(
        &mut model,
        &mut store,
        &train_set,
        &val_set,
        &train_cfg,
        Some(&print_epoch),
    )?;
    let state = TrainState {
        epoch: outcome.best_epoch as u32,
        best_metric: outcome.best_val as f32,
        lr: train_cfg.lr_init as f32,
    };
    save_checkpoint(
        &a.out,
        &Checkpoint { model: &model, store: &store, state, adam: None, packed: true },
    )?;
    // report with the exported artifact, not the in-memory weights
    let exported = load_checkpoint(&a.out)?;
    let report =
        evaluate(&exported.model, &exported.store, &val_set, true, CueSelection::default())?;
    println!("exported {} — validation after reload:\n{report}", a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> limuse::Result<()> {
    let loaded = load_checkpoint(&a.ckpt)?;
    let data = Dataset::from_dir(&a.data)?;
    let quantized = a.quantized || loaded.quantized;
    let cues = CueSelection { use_voiceprint: !a.no_voiceprint, use_visual: !a.no_visual };
    let report = evaluate(&loaded.model, &loaded.store, &data, quantized, cues)?;
    if a.json {
        println!("{}", report.to_json());
    } else {
        println!("{} samples, quantized: {quantized}", data.len());
        println!("{report}");
    }
    Ok(())
}

fn report(a: ReportArgs) -> limuse::Result<()> {
    let (model, store, quantized) = match (&a.ckpt, &a.config) {
        (Some(ckpt), None) => {
            let loaded = load_checkpoint(ckpt)?;
            (loaded.model, loaded.store, loaded.quantized)
        }
        (None, Some(cfg_path)) => {
            let (model_cfg, _) = read_config(cfg_path)?;
            let mut store = ParamStore::new();
            let model = LiMuseModel::build(&mut store, &model_cfg, 0)?;
            (model, store, false)
        }
        _ => {
            return Err(Error::Config("report needs exactly one of --ckpt or --config".into()));
        }
    };
    let rows = model.layer_rows(&store, a.seconds)?;
    let bits = if quantized { Some(model.cfg.w_q) } else { None };
    let report = AccountingReport::new(rows, bits, a.seconds);
    if a.csv {
        print!("{}", report.to_csv());
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}
