//! Microbenchmark: forward and forward+backward time for one tiny-config
//! batch, to track kernel optimizations.

use std::time::Instant;

use limuse::model::{LiMuseModel, ModelConfig};
use limuse::nn::{ParamStore, Pass};
use limuse::rng::Rng;
use limuse::tensor::{Tape, Tensor};
use limuse::train::si_sdr_loss;

fn main() {
    let b = 2usize;
    let cfg = ModelConfig::tiny();
    let mut store = ParamStore::new();
    let model = LiMuseModel::build(&mut store, &cfg, 42).unwrap();
    let mut rng = Rng::new(5);
    let samples = 16000;
    let mix =
        Tensor::from_vec(rng.fill_uniform(b * 2 * samples, -0.5, 0.5), &[b, 2, samples]).unwrap();
    let vp = Tensor::from_vec(rng.fill_normal(b * cfg.u), &[b, cfg.u]).unwrap();
    let vis = Tensor::from_vec(rng.fill_normal(b * cfg.d_face * 25), &[b, cfg.d_face, 25]).unwrap();
    let target = Tensor::from_vec(rng.fill_uniform(b * samples, -0.5, 0.5), &[b, samples]).unwrap();

    // warm up
    model.forward(&Pass::eval(), &store, &mix, &vp, &vis).unwrap();

    let reps = 3;
    let t0 = Instant::now();
    for _ in 0..reps {
        model.forward(&Pass::eval(), &store, &mix, &vp, &vis).unwrap();
    }
    let fwd = t0.elapsed().as_secs_f64() / reps as f64;

    let t1 = Instant::now();
    for _ in 0..reps {
        let tape = Tape::new();
        let pass = Pass::train(&tape);
        let out = model.forward(&pass, &store, &mix, &vp, &vis).unwrap();
        let loss = si_sdr_loss(&out.wave, &target).unwrap();
        loss.backward().unwrap();
        pass.harvest_grads(&mut store);
        store.clear_grads();
    }
    let step = t1.elapsed().as_secs_f64() / reps as f64;

    println!("batch {b}: forward {:.3}s  fwd+bwd {:.3}s  (per sample: {:.3}s / {:.3}s)",
        fwd, step, fwd / b as f64, step / b as f64);
}
