#![allow(dead_code)]

use std::sync::Arc;

use moemo::autodiff::{Tape, Var};
use moemo::context::{ContextDims, ContextFeatureMap};
use moemo::data::{ContextSource, Sample};
use moemo::model::{ModelConfig, MoEmoNet, Variant};
use moemo::motion::{movement_vectors, MovementVectorSeq, PersonTrack, FRAME_WIDTH};
use moemo::tensor::Tensor;
use moemo::train::batch_loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

pub fn random_track(frames: usize, rng: &mut ChaCha8Rng) -> PersonTrack {
    PersonTrack::new(0, (0..frames * FRAME_WIDTH).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

pub fn random_vectors(frames: usize, rng: &mut ChaCha8Rng) -> MovementVectorSeq {
    movement_vectors(&random_track(frames, rng)).unwrap()
}

pub fn random_map(frames: usize, dims: ContextDims, rng: &mut ChaCha8Rng) -> ContextFeatureMap {
    let data = (0..frames * dims.width()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    ContextFeatureMap::new("ctx", dims, data).unwrap()
}

/// Small network with a small context map, for exhaustive checks.
pub fn tiny_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_blocks: 2,
        n_heads: 2,
        mlp_ratio: 2.0,
        n_classes: 6,
        variant,
        context_dims: ContextDims { rows: 2, cols: 3 },
        context_hidden: 4,
        max_transitions: 4,
        ..ModelConfig::default()
    }
}

/// Relative error `|a - n| / max(|a|, |n|)` over a whole tensor, with a
/// floor on the denominator for gradients that are zero on both sides.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-10)
}

/// Largest relative error between tape gradients and central differences
/// (step `h`) of `sum(f(inputs) * weights)` with fixed random weights.
pub fn op_grad_error(inputs: &[Tensor<f64>], seed: u64, f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let h = 1e-6;
    let loss_of = |values: &[Tensor<f64>], grads: bool| -> (f64, Option<Vec<Tensor<f64>>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone(), true)).collect();
        let out = f(&mut tape, &vars);
        let mut r = rng(seed ^ 0x5eed);
        let w = tape.constant(random_tensor(tape.shape(out), &mut r));
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum(prod);
        let value = tape.value(loss).item();
        if !grads {
            return (value, None);
        }
        let g = tape.backward(loss).unwrap();
        let gs = vars
            .iter()
            .zip(values)
            .map(|(&v, t)| g.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        (value, Some(gs))
    };
    let analytic = loss_of(inputs, true).1.unwrap();
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.numel()];
        for k in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= h;
            numeric[k] = (loss_of(&plus, false).0 - loss_of(&minus, false).0) / (2.0 * h);
        }
        worst = worst.max(rel_err(analytic[i].data(), &numeric));
    }
    worst
}

pub fn tiny_batch(seed: u64) -> Vec<Sample> {
    let mut r = rng(seed);
    let dims = tiny_config(Variant::Full).context_dims;
    (0..2)
        .map(|i| Sample {
            clip_id: format!("clip{i}"),
            vectors: random_vectors(3, &mut r),
            label: i * 4 + 1,
            context: ContextSource::Memory(Arc::new(random_map(3, dims, &mut r))),
            context_frames: None,
        })
        .collect()
}

/// Worst per-parameter relative error of the full model's loss gradient.
pub fn model_grad_error(variant: Variant) -> (f64, String) {
    let mut net = MoEmoNet::<f64>::new(tiny_config(variant), 21).unwrap();
    // Nonzero biases so every parameter carries gradient signal.
    let mut r = rng(5);
    for p in net.store.iter_mut() {
        if p.name.ends_with(".bias") || p.name.ends_with(".beta") {
            p.value = random_tensor(p.value.shape(), &mut r).map(|v| v * 0.1);
        }
    }
    let samples = tiny_batch(8);
    let batch: Vec<&Sample> = samples.iter().collect();
    let loss = |net: &MoEmoNet<f64>| {
        let mut tape = Tape::new();
        let p = net.bind(&mut tape);
        let l = batch_loss(net, &mut tape, &p, &batch).unwrap();
        tape.value(l).item()
    };
    let mut tape = Tape::new();
    let p = net.bind(&mut tape);
    let l = batch_loss(&net, &mut tape, &p, &batch).unwrap();
    let grads = tape.backward(l).unwrap();
    let ids: Vec<_> = net.store.ids().collect();
    let h = 1e-6;
    let mut worst = (0.0, String::new());
    for id in ids {
        let analytic = grads.get(p.var(id)).cloned().unwrap_or_else(|| Tensor::zeros(net.store.get(id).value.shape()));
        let mut numeric = vec![0.0; analytic.numel()];
        for k in 0..numeric.len() {
            let orig = net.store.get(id).value.data()[k];
            net.store.get_mut(id).value.data_mut()[k] = orig + h;
            let up = loss(&net);
            net.store.get_mut(id).value.data_mut()[k] = orig - h;
            let down = loss(&net);
            net.store.get_mut(id).value.data_mut()[k] = orig;
            numeric[k] = (up - down) / (2.0 * h);
        }
        // Key biases shift every score of a row equally, so softmax cancels
        // them and both gradients are zero up to rounding.
        let scale = analytic.data().iter().chain(&numeric).fold(0.0f64, |m, v| m.max(v.abs()));
        let e = if scale < 1e-8 { 0.0 } else { rel_err(analytic.data(), &numeric) };
        if e >= worst.0 {
            worst = (e, net.store.get(id).name.clone());
        }
    }
    worst
}
