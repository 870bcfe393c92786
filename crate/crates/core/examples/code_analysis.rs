//! Trains a small VQ-APC model, then measures how its codes line up with the
//! phones: NMI, codebook usage and a co-clustered P(phone | code) heatmap.
//!
//! `cargo run --release --example code_analysis -- [epochs] [out_dir]`

use std::path::PathBuf;

use vqapc::cli::{cmd_analyze, cmd_extract, cmd_synth, cmd_train, PipelineConfig};

fn main() -> vqapc::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(30);
    let tmp = tempfile::tempdir().expect("temporary directory");
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| tmp.path().to_path_buf());

    let mut cfg = PipelineConfig::desk();
    cfg.train.epochs = epochs;
    cfg.extract.quantized = true;
    let data = out.join("data");
    cmd_synth(&cfg, &data)?;
    let trained = cmd_train(&cfg, &data, &out.join("train"))?;
    cmd_extract(&cfg, &trained.final_checkpoint, &data, &out.join("codes"))?;
    let stats = cmd_analyze(&cfg, &out.join("codes"), None, &out.join("analysis"))?;

    println!("NMI(phone, code) {:.3}; {} of {} codes used", stats.nmi, stats.num_used_codes, cfg.model.codebook_size);
    for (code, phone) in stats.per_code_top_phone.iter().enumerate() {
        if let Some(p) = phone {
            println!("  code {code:>3} → mostly phone {p}");
        }
    }
    println!("heatmap in {}", out.join("analysis/heatmap.ppm").display());
    Ok(())
}
