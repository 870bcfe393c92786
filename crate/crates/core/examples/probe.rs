//! Linear phone and speaker probes on raw synthetic frames, before and after
//! removing the speaker offsets by per-speaker normalization.

use vqapc::cli::probe_splits;
use vqapc::features::normalize_per_speaker;
use vqapc::probing::{run_seeds, ProbeConfig, ProbeTask, UtteranceRepr};
use vqapc::synthetic::{generate_corpus, write_corpus, SynthConfig};

fn main() -> vqapc::Result<()> {
    let corpus = generate_corpus(&SynthConfig::default())?;
    let dir = tempfile::tempdir().expect("temporary directory");
    let labels = write_corpus(dir.path(), &corpus)?;
    let normalized = normalize_per_speaker(&corpus.sequences)?;
    let cfg = ProbeConfig::default();

    for (name, seqs) in [("raw", &corpus.sequences), ("speaker-normalized", &normalized)] {
        let reprs: Vec<UtteranceRepr> = seqs
            .iter()
            .map(|s| UtteranceRepr {
                id: s.utterance_id.clone(),
                speaker_id: s.speaker_id.clone(),
                repr: s.frames.clone(),
            })
            .collect();
        for task in [ProbeTask::Phone, ProbeTask::Speaker] {
            let [train, dev, test] = probe_splits(&reprs, &labels, task, 0)?;
            let errs = run_seeds(&train, &dev, &test, &cfg, 3)?;
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            println!("{name:>18} {task:>7}: test error {mean:.3} over {} seeds", errs.len());
        }
    }
    Ok(())
}
