//! The whole pipeline through the command-line front end, one stage at a time.
//!
//! `cargo run --release --example end_to_end -- [out_dir]`

use std::path::PathBuf;

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| tmp.path().to_path_buf());
    let p = |s: &str| out.join(s).display().to_string();

    std::fs::create_dir_all(&out).expect("output directory");
    let config = out.join("desk.json");
    let mut cfg = vqapc::cli::PipelineConfig::desk();
    cfg.train.epochs = 20;
    std::fs::write(&config, serde_json::to_string_pretty(&cfg).expect("json")).expect("write config");
    let c = config.display().to_string();

    let stages: Vec<Vec<String>> = vec![
        vec!["synth".into(), "--out".into(), p("data")],
        vec!["train".into(), "--data".into(), p("data"), "--out".into(), p("train")],
        vec!["extract".into(), "--checkpoint".into(), p("train/checkpoints/epoch_20.ckpt"), "--data".into(), p("data"), "--out".into(), p("hidden")],
        vec!["probe".into(), "--reprs".into(), p("hidden"), "--task".into(), "phone".into(), "--out".into(), p("probe")],
        vec!["probe".into(), "--reprs".into(), p("hidden"), "--task".into(), "speaker".into(), "--out".into(), p("probe")],
        vec!["--quantized".into(), "extract".into(), "--checkpoint".into(), p("train/checkpoints/epoch_20.ckpt"), "--data".into(), p("data"), "--out".into(), p("codes")],
        vec!["analyze".into(), "--codes".into(), p("codes"), "--out".into(), p("analysis")],
    ];
    for stage in stages {
        let mut args = vec!["vqapc".to_string(), "--config".into(), c.clone()];
        args.extend(stage);
        println!("$ {}", args.join(" "));
        let code = vqapc::cli::run(&args);
        if code != 0 {
            std::process::exit(code);
        }
    }
}
