//! Seeded synthetic corpora with known phone and speaker factors.
//!
//! Each frame is `template[phone] + offset[speaker] + N(0, noise_std²)`, and
//! the phone sequence is a self-loop Markov chain, so frames persist over
//! segments the way phones do.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::io::{ensure_dir, write_feature_file, write_label_file, Manifest, ManifestRecord, MANIFEST_NAME, NUM_PHONES};
use crate::features::FeatureSequence;
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_speakers: usize,
    pub num_phones: usize,
    pub utterances_per_speaker: usize,
    pub frames_per_utterance: usize,
    pub feature_dim: usize,
    /// Standard deviation of phone template entries.
    pub template_scale: f32,
    /// Standard deviation of speaker offset entries.
    pub offset_scale: f32,
    pub noise_std: f32,
    pub markov_self_loop: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// Templates at 5× the per-coordinate noise level.
    fn default() -> Self {
        Self {
            num_speakers: 5,
            num_phones: 12,
            utterances_per_speaker: 10,
            frames_per_utterance: 60,
            feature_dim: 24,
            template_scale: 1.0,
            offset_scale: 0.5,
            noise_std: 0.2,
            markov_self_loop: 0.9,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.num_speakers,
            self.num_phones,
            self.utterances_per_speaker,
            self.frames_per_utterance,
            self.feature_dim,
        ];
        if counts.contains(&0) {
            return Err(Error::config("synthetic corpus counts must all be >= 1"));
        }
        if self.num_phones > NUM_PHONES {
            return Err(Error::config(format!(
                "num_phones {} exceeds the {NUM_PHONES}-phone inventory",
                self.num_phones
            )));
        }
        if !(0.0..1.0).contains(&self.markov_self_loop) {
            return Err(Error::config("markov_self_loop must be in [0, 1)"));
        }
        if self.noise_std < 0.0 {
            return Err(Error::config("noise_std must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub sequences: Vec<FeatureSequence>,
    /// Per-frame phone ids, aligned with `sequences`.
    pub alignments: Vec<Vec<usize>>,
    pub speaker_ids: Vec<String>,
    /// `P × D`
    pub templates: Tensor<f32>,
    /// `S × D`
    pub offsets: Tensor<f32>,
}

fn normal_matrix(rows: usize, cols: usize, scale: f32, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f32 = StandardNormal.sample(rng);
            z * scale
        })
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape")
}

/// Phone chain that stays with probability `self_loop` and otherwise jumps to a
/// uniformly chosen different phone.
pub fn markov_phones(len: usize, num_phones: usize, self_loop: f64, rng: &mut impl Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(len);
    let mut p = rng.random_range(0..num_phones);
    for t in 0..len {
        if t > 0 && num_phones > 1 && rng.random::<f64>() >= self_loop {
            let j = rng.random_range(0..num_phones - 1);
            p = if j >= p { j + 1 } else { j };
        }
        out.push(p);
    }
    out
}

pub fn speaker_name(s: usize) -> String {
    format!("spk{s:02}")
}

pub fn generate_corpus(cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.feature_dim;
    let templates = normal_matrix(cfg.num_phones, d, cfg.template_scale, &mut rng);
    let offsets = normal_matrix(cfg.num_speakers, d, cfg.offset_scale, &mut rng);

    let mut sequences = Vec::new();
    let mut alignments = Vec::new();
    let mut speaker_ids = Vec::new();
    for s in 0..cfg.num_speakers {
        for u in 0..cfg.utterances_per_speaker {
            let phones = markov_phones(cfg.frames_per_utterance, cfg.num_phones, cfg.markov_self_loop, &mut rng);
            let mut data = Vec::with_capacity(phones.len() * d);
            for &p in &phones {
                for j in 0..d {
                    let z: f32 = StandardNormal.sample(&mut rng);
                    data.push(templates.get2(p, j) + offsets.get2(s, j) + cfg.noise_std * z);
                }
            }
            sequences.push(FeatureSequence {
                utterance_id: format!("{}_utt{u:03}", speaker_name(s)),
                speaker_id: speaker_name(s),
                frames: Tensor::new(vec![phones.len(), d], data)?,
            });
            alignments.push(phones);
            speaker_ids.push(speaker_name(s));
        }
    }
    Ok(SyntheticCorpus {
        sequences,
        alignments,
        speaker_ids,
        templates,
        offsets,
    })
}

/// Frame shift recorded in sidecars of written corpora.
pub const SYNTH_FRAME_SHIFT_MS: f32 = 10.0;

/// Writes `feats/`, `align/` and `manifest.jsonl` under `dir`.
pub fn write_corpus(dir: &Path, corpus: &SyntheticCorpus) -> Result<Manifest> {
    let feats = dir.join("feats");
    let align = dir.join("align");
    ensure_dir(&feats)?;
    ensure_dir(&align)?;
    let mut records = Vec::with_capacity(corpus.sequences.len());
    for (seq, phones) in corpus.sequences.iter().zip(&corpus.alignments) {
        let name = write_feature_file(&feats, seq, SYNTH_FRAME_SHIFT_MS)?;
        let phn = format!("{}.phn", seq.utterance_id);
        write_label_file(&align.join(&phn), phones)?;
        records.push(ManifestRecord {
            id: seq.utterance_id.clone(),
            speaker_id: seq.speaker_id.clone(),
            wav_path: None,
            feature_path: Some(format!("feats/{name}")),
            phone_alignment_path: Some(format!("align/{phn}")),
        });
    }
    let manifest = Manifest {
        root: dir.to_path_buf(),
        records,
    };
    manifest.save(&dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_frames_are_template_plus_offset() {
        let cfg = SynthConfig {
            noise_std: 0.0,
            utterances_per_speaker: 2,
            ..SynthConfig::default()
        };
        let c = generate_corpus(&cfg).unwrap();
        for (i, seq) in c.sequences.iter().enumerate() {
            let s = i / cfg.utterances_per_speaker;
            for (t, &p) in c.alignments[i].iter().enumerate() {
                for j in 0..cfg.feature_dim {
                    assert_eq!(seq.frames.get2(t, j), c.templates.get2(p, j) + c.offsets.get2(s, j));
                }
            }
        }
    }

    #[test]
    fn segment_count_matches_geometric_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4_000;
        let total: usize = (0..n)
            .map(|_| {
                let ph = markov_phones(100, 12, 0.9, &mut rng);
                1 + ph.windows(2).filter(|w| w[0] != w[1]).count()
            })
            .sum();
        let mean = total as f64 / n as f64;
        // 1 + 99 · (1 − 0.9) segments on average, i.e. runs of ~10 frames.
        assert!((mean - 10.9).abs() < 0.2, "{mean}");
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = SynthConfig::default();
        assert_eq!(generate_corpus(&cfg).unwrap(), generate_corpus(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate_corpus(&cfg).unwrap(), generate_corpus(&other).unwrap());
    }

    #[test]
    fn written_corpus_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            num_speakers: 2,
            utterances_per_speaker: 2,
            frames_per_utterance: 12,
            ..SynthConfig::default()
        };
        let c = generate_corpus(&cfg).unwrap();
        write_corpus(dir.path(), &c).unwrap();
        let m = Manifest::load(dir.path()).unwrap();
        assert_eq!(m.load_features().unwrap(), c.sequences);
        assert_eq!(m.load_alignment(&c.sequences[3].utterance_id).unwrap(), c.alignments[3]);
    }

    #[test]
    fn invalid_configs() {
        for bad in [
            SynthConfig { num_phones: 43, ..SynthConfig::default() },
            SynthConfig { markov_self_loop: 1.0, ..SynthConfig::default() },
            SynthConfig { frames_per_utterance: 0, ..SynthConfig::default() },
        ] {
            assert!(generate_corpus(&bad).is_err());
        }
    }
}
