//! log-Mel features of pure tones: the loudest Mel bin tracks the tone frequency.

use vqapc::features::{log_mel, MelConfig, MelFilterbank};
use vqapc::features::Utterance;

fn tone(hz: f64, cfg: &MelConfig) -> Utterance {
    let sr = f64::from(cfg.sample_rate);
    Utterance {
        id: format!("tone{hz}"),
        speaker_id: "s".into(),
        sample_rate: cfg.sample_rate,
        samples: (0..cfg.sample_rate as usize / 2)
            .map(|n| (10_000.0 * (2.0 * std::f64::consts::PI * hz * n as f64 / sr).sin()) as i16)
            .collect(),
    }
}

fn main() -> vqapc::Result<()> {
    let cfg = MelConfig::default();
    let bank = MelFilterbank::new(&cfg);
    println!(
        "{} Hz, {} ms windows every {} ms, {} Mel bins",
        cfg.sample_rate, cfg.frame_length, cfg.frame_shift, cfg.n_mels
    );
    for hz in [250.0, 1000.0, 3000.0, 6000.0] {
        let feats = log_mel(&tone(hz, &cfg), &cfg)?;
        let mid = feats.frames.row(feats.num_frames() / 2);
        let peak = (0..mid.len()).max_by(|&a, &b| mid[a].total_cmp(&mid[b])).unwrap_or(0);
        println!(
            "{hz:>6} Hz tone: {}×{} frames, loudest bin {peak:>2} (centre {:.0} Hz)",
            feats.num_frames(),
            feats.dim(),
            bank.center_hz(peak)
        );
    }
    Ok(())
}
