//! Codebook-size sweep with the VQ layer on top: smaller codebooks squeeze the
//! top layer harder and leave a higher prediction loss.
//!
//! `cargo run --release --example codebook_sweep -- [epochs] [out_dir]`

use std::path::PathBuf;

use vqapc::cli::{cmd_sweep, cmd_synth, PipelineConfig};

fn main() -> vqapc::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let keep: Option<PathBuf> = args.next().map(PathBuf::from);
    let tmp = tempfile::tempdir().expect("temporary directory");
    let out = keep.unwrap_or_else(|| tmp.path().to_path_buf());

    let mut cfg = PipelineConfig::desk();
    cfg.train.epochs = epochs;
    cfg.probe.num_seeds = 2;
    let data = out.join("data");
    cmd_synth(&cfg, &data)?;
    let rows = cmd_sweep(&cfg, &data, &cfg.sweep.codebook_sizes.clone(), &out.join("sweep"))?;
    println!("   V   final L1   phone err   speaker err");
    for r in rows {
        println!("{:>4}   {:.4}     {:.3}       {:.3}", r.codebook_size, r.final_loss, r.phone_err, r.speaker_err);
    }
    println!("summary in {}", out.join("sweep/summary.csv").display());
    Ok(())
}
