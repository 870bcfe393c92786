//! Trains a plain APC model on the synthetic corpus, checkpoints it and
//! reloads it.
//!
//! `cargo run --release --example train_apc -- [epochs]`

use vqapc::cli::PipelineConfig;
use vqapc::model::{load_checkpoint, save_checkpoint};
use vqapc::synthetic::generate_corpus;
use vqapc::training::train;

fn main() -> vqapc::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let mut cfg = PipelineConfig::desk();
    cfg.model.vq_layers.clear();
    cfg.train.epochs = epochs;

    let corpus = generate_corpus(&cfg.synth)?;
    let (model, state) = train(&corpus.sequences, &cfg.model, &cfg.train)?;
    for (i, l) in state.loss_history.iter().enumerate() {
        if i == 0 || (i + 1) % 5 == 0 {
            println!("epoch {:>3}  L1 {l:.4}", i + 1);
        }
    }

    let dir = tempfile::tempdir().expect("temporary directory");
    let path = dir.path().join("apc.ckpt");
    save_checkpoint(&path, &model, epochs, &state.loss_history, cfg.train.seed)?;
    let (back, header) = load_checkpoint(&path)?;
    println!(
        "{} parameters; checkpoint epoch {} reloads identically: {}",
        model.num_parameters(),
        header.epoch,
        back == model
    );
    Ok(())
}
