//! Desk-scale training smoke run: times one epoch of the tiny
//! configuration and reports validation/test SI-SDRi as it learns.
//!
//! cargo run --release -p limuse --example smoke_train [epochs]

use std::time::Instant;

use limuse::model::{LiMuseModel, ModelConfig};
use limuse::nn::ParamStore;
use limuse::synth::{generate_split, DatasetSpec, SynthConfig};
use limuse::train::{evaluate, Adam, CueSelection, Dataset, Stage, TrainConfig};

fn main() {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let batch: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(2);
    let cfg = ModelConfig::tiny();
    let spec = DatasetSpec {
        cfg: SynthConfig::default(),
        train_speakers: 6,
        val_speakers: 2,
        test_speakers: 2,
        train_count: 200,
        val_count: 24,
        test_count: 32,
        clip_seconds: 1.0,
        seed: 20260809,
    };
    spec.validate().unwrap();
    let (tr_spk, va_spk, te_spk) = spec.speaker_ranges();
    let t0 = Instant::now();
    let train_mix = generate_split(&spec.cfg, &tr_spk, spec.train_count, 1.0, spec.seed).unwrap();
    let val_mix = generate_split(&spec.cfg, &va_spk, spec.val_count, 1.0, spec.seed + 1).unwrap();
    let test_mix = generate_split(&spec.cfg, &te_spk, spec.test_count, 1.0, spec.seed + 2).unwrap();
    println!("data generated in {:.1}s", t0.elapsed().as_secs_f64());

    let train = Dataset::from_mixtures(&train_mix);
    let val = Dataset::from_mixtures(&val_mix);
    let test = Dataset::from_mixtures(&test_mix);

    let mut store = ParamStore::new();
    let model = LiMuseModel::build(&mut store, &cfg, 42).unwrap();
    println!("model params: {}", store.total_values());

    let tcfg = TrainConfig { max_epochs: epochs, batch_size: batch, seed: 7, ..Default::default() };
    let mut adam = Adam::new(&tcfg);

    let t1 = Instant::now();
    let print_epoch = |e: &limuse::train::EpochStats| {
        println!(
            "epoch {:2}: loss {:+.3}  val SI-SDR {:+.3} dB  lr {:.2e}  [{:.0}s]",
            e.epoch,
            e.train_loss,
            e.val_si_sdr,
            e.lr,
            t1.elapsed().as_secs_f64()
        );
    };
    let outcome = limuse::train::train_stage_with(
        &model,
        &mut store,
        &mut adam,
        &train,
        &val,
        &tcfg,
        Stage::FullPrecision,
        Some(&print_epoch),
    )
    .unwrap();
    let train_secs = t1.elapsed().as_secs_f64();
    println!(
        "trained {} epochs in {:.1}s ({:.1}s/epoch)",
        outcome.history.len(),
        train_secs,
        train_secs / outcome.history.len() as f64
    );
    let report = evaluate(&model, &store, &test, false, CueSelection::default()).unwrap();
    println!("test:\n{report}");
}
