#![allow(dead_code)]

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqapc::features::FeatureSequence;
use vqapc::model::{forward_tape, BoundModel, FrozenNoise, Mode, ModelConfig, VqApcModel};
use vqapc::numerics::{grad_check_many, Tape, Tensor};
use vqapc::training::{assemble_batch, batch_loss};

/// Distance from an L1 kink below which a finite-difference point is skipped.
pub const KINK_MARGIN: f64 = 1e-3;

pub fn tiny_config(vq_layers: Vec<usize>) -> ModelConfig {
    ModelConfig {
        input_dim: 3,
        num_layers: 2,
        hidden_dim: 4,
        vq_layers,
        codebook_size: 3,
        code_dim: 4,
        shift: 2,
        tau: 0.1,
    }
}

pub fn random_corpus(lengths: &[usize], dim: usize, rng: &mut ChaCha8Rng) -> Vec<FeatureSequence> {
    lengths
        .iter()
        .enumerate()
        .map(|(i, &t)| FeatureSequence {
            utterance_id: format!("u{i}"),
            speaker_id: "s".into(),
            frames: Tensor::new(vec![t, dim], (0..t * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
        })
        .collect()
}

/// Worst relative error between tape gradients and central differences of
/// the normalized batch loss, over every model parameter.
///
/// VQ layers run in soft mode with frozen noise. Returns `None` when some
/// residual sits within [`KINK_MARGIN`] of zero.
pub fn model_grad_error(cfg: &ModelConfig, seed: u64, eps: f64) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = VqApcModel::<f64>::init(cfg, &mut rng).unwrap();
    // Larger weights than the default init make every path contribute visibly.
    let mut model = model;
    for p in model.params_mut() {
        for v in p.data_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
    }
    let corpus = random_corpus(&[6, 5], cfg.input_dim, &mut rng);
    let batch = assemble_batch(&corpus, &[0, 1], cfg.shift, None).unwrap().cast::<f64>();
    let noise = RefCell::new(FrozenNoise::new(seed ^ 0x9e37));

    {
        let mut tape = Tape::<f64>::new();
        let bound = model.bind(&mut tape, false);
        let input = tape.constant(batch.input.clone());
        let mut n = noise.borrow_mut();
        let trace = forward_tape(&mut tape, &bound, cfg, input, batch.steps, batch.size(), &mut Mode::Soft(&mut *n)).unwrap();
        let pred = tape.value(trace.predictions);
        let near_kink = pred
            .data()
            .iter()
            .zip(batch.target.data())
            .enumerate()
            .any(|(i, (y, x))| batch.mask[i / cfg.input_dim] && (y - x).abs() < KINK_MARGIN);
        if near_kink {
            return None;
        }
    }

    let points: Vec<Tensor<f64>> = model.params().into_iter().cloned().collect();
    let err = grad_check_many(
        |tape, vars| {
            let bound = BoundModel::from_vars(cfg, vars)?;
            let mut n = noise.borrow_mut();
            n.rewind();
            Ok(batch_loss(tape, &bound, cfg, &batch, &mut Mode::Soft(&mut *n))?.loss)
        },
        &points,
        eps,
    )
    .unwrap();
    Some(err)
}

/// Runs [`model_grad_error`] until `wanted` seeds are usable; returns the
/// worst error and the number of seeds checked.
pub fn worst_over_seeds(cfg: &ModelConfig, wanted: usize, eps: f64) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut used = 0;
    let mut seed = 0;
    while used < wanted {
        if let Some(e) = model_grad_error(cfg, seed, eps) {
            worst = worst.max(e);
            used += 1;
        }
        seed += 1;
        assert!(seed < 10 * wanted as u64, "too many seeds near an L1 kink");
    }
    (worst, used)
}
