//! Tape gradients against central differences: a toy expression, then the
//! full APC objective of a small model in double precision.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vqapc::model::{BoundModel, Mode, ModelConfig, VqApcModel};
use vqapc::numerics::{grad_check, grad_check_many, Tensor};
use vqapc::synthetic::{generate_corpus, SynthConfig};
use vqapc::training::{assemble_batch, batch_loss};

fn main() -> vqapc::Result<()> {
    let x = Tensor::from_rows(&[vec![0.3, -1.2, 0.7], vec![1.1, 0.4, -0.5]])?;
    let w0 = Tensor::from_rows(&[vec![0.2, -0.1], vec![0.5, 0.3], vec![-0.4, 0.8]])?;
    let toy = grad_check(
        |tape, w| {
            let x = tape.constant(x.clone());
            let h = tape.matmul(x, w)?;
            let h = tape.tanh(h);
            let p = tape.softmax_rows(h);
            let weights = tape.constant(Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]])?);
            let weighted = tape.mul(p, weights)?;
            Ok(tape.sum(weighted))
        },
        &w0,
        1e-6,
    )?;
    println!("Σ c ⊙ softmax(tanh(xW)): max relative error {toy:.2e}");

    let cfg = ModelConfig {
        input_dim: 4,
        num_layers: 2,
        hidden_dim: 6,
        vq_layers: vec![],
        codebook_size: 4,
        code_dim: 6,
        shift: 2,
        tau: 0.1,
    };
    let corpus = generate_corpus(&SynthConfig {
        num_speakers: 1,
        utterances_per_speaker: 2,
        frames_per_utterance: 8,
        feature_dim: 4,
        ..SynthConfig::default()
    })?;
    let batch = assemble_batch(&corpus.sequences, &[0, 1], cfg.shift, None)?.cast::<f64>();
    let model = VqApcModel::<f64>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1))?;
    let params: Vec<Tensor<f64>> = model.params().into_iter().cloned().collect();
    let err = grad_check_many(
        |tape, vars| {
            let bound = BoundModel::from_vars(&cfg, vars)?;
            Ok(batch_loss(tape, &bound, &cfg, &batch, &mut Mode::Eval)?.loss)
        },
        &params,
        1e-6,
    )?;
    println!("GRU stack + head, {} parameters: max relative error {err:.2e}", model.num_parameters());
    Ok(())
}
