//! On-disk formats shared by every pipeline stage: WAV input, `FMAT` feature
//! files with JSON sidecars, JSON-lines manifests, and whitespace-separated
//! integer label files (phone alignments and code indices).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FeatureSequence, Utterance};
use crate::error::{Error, Result};
use crate::numerics::{load_fmat, save_fmat};

/// Size of the phone inventory labels are drawn from.
pub const NUM_PHONES: usize = 42;

/// Reads a 16-bit PCM WAV file; multi-channel audio is averaged to mono.
pub fn read_wav(path: &Path, id: &str, speaker_id: &str) -> Result<Utterance> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Data(format!(
            "{}: expected 16-bit PCM, got {:?} {}-bit",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    let raw: Vec<i16> = reader
        .samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .map_err(wav_err)?;
    let ch = usize::from(spec.channels.max(1));
    let samples: Vec<i16> = raw
        .chunks(ch)
        .map(|c| (c.iter().map(|&s| i32::from(s)).sum::<i32>() / c.len() as i32) as i16)
        .collect();
    if samples.is_empty() {
        return Err(Error::EmptyInput(format!("{}: no samples", path.display())));
    }
    Ok(Utterance {
        id: id.to_string(),
        speaker_id: speaker_id.to_string(),
        sample_rate: spec.sample_rate,
        samples,
    })
}

pub fn write_wav(path: &Path, utt: &Utterance) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: utt.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &utt.samples {
        w.write_sample(s).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

/// JSON sidecar written next to every feature file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub utterance_id: String,
    pub speaker_id: String,
    pub n_frames: usize,
    pub dim: usize,
    pub frame_shift_ms: f32,
}

/// Writes `<dir>/<id>.fmat` and `<dir>/<id>.json`; returns the `.fmat` file name.
pub fn write_feature_file(dir: &Path, seq: &FeatureSequence, frame_shift_ms: f32) -> Result<String> {
    let name = format!("{}.fmat", seq.utterance_id);
    save_fmat(&dir.join(&name), &seq.frames)?;
    let sidecar = FeatureSidecar {
        utterance_id: seq.utterance_id.clone(),
        speaker_id: seq.speaker_id.clone(),
        n_frames: seq.num_frames(),
        dim: seq.dim(),
        frame_shift_ms,
    };
    write_json(&dir.join(format!("{}.json", seq.utterance_id)), &sidecar)?;
    Ok(name)
}

pub fn read_feature_file(path: &Path, utterance_id: &str, speaker_id: &str) -> Result<FeatureSequence> {
    let frames = load_fmat(path)?;
    if frames.rank() != 2 || frames.rows() == 0 {
        return Err(Error::Data(format!(
            "{}: expected a non-empty rank-2 matrix, got shape {:?}",
            path.display(),
            frames.shape()
        )));
    }
    if !frames.all_finite() {
        return Err(Error::Data(format!("{}: non-finite feature values", path.display())));
    }
    Ok(FeatureSequence {
        utterance_id: utterance_id.to_string(),
        speaker_id: speaker_id.to_string(),
        frames,
    })
}

/// One manifest line. Relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub speaker_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wav_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phone_alignment_path: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

pub const MANIFEST_NAME: &str = "manifest.jsonl";

impl Manifest {
    /// Loads a manifest file, or `<dir>/manifest.jsonl` when given a directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(MANIFEST_NAME)
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| {
                Error::Data(format!("{}:{}: {e}", file.display(), i + 1))
            })?;
            records.push(rec);
        }
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn find(&self, id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Loads every record's feature file.
    pub fn load_features(&self) -> Result<Vec<FeatureSequence>> {
        self.records
            .iter()
            .map(|r| {
                let p = r.feature_path.as_deref().ok_or_else(|| {
                    Error::Data(format!("manifest record `{}` has no feature_path", r.id))
                })?;
                read_feature_file(&self.resolve(p), &r.id, &r.speaker_id)
            })
            .collect()
    }

    /// Loads the phone alignment of one record.
    pub fn load_alignment(&self, id: &str) -> Result<Vec<usize>> {
        let rec = self.find(id).ok_or_else(|| Error::Alignment {
            utterance: id.to_string(),
            reason: "not present in the label manifest".into(),
        })?;
        let p = rec
            .phone_alignment_path
            .as_deref()
            .ok_or_else(|| Error::Alignment {
                utterance: id.to_string(),
                reason: "no phone_alignment_path".into(),
            })?;
        let labels = read_label_file(&self.resolve(p))?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= NUM_PHONES) {
            return Err(Error::Alignment {
                utterance: id.to_string(),
                reason: format!("phone id {bad} outside [0, {}]", NUM_PHONES - 1),
            });
        }
        Ok(labels)
    }
}

/// Whitespace-separated non-negative integers, one per frame.
pub fn read_label_file(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<usize>()
                .map_err(|_| Error::Data(format!("{}: bad label `{tok}`", path.display())))
        })
        .collect()
}

pub fn write_label_file(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = String::with_capacity(labels.len() * 3);
    for (i, l) in labels.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&l.to_string());
    }
    out.push('\n');
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let text = serde_json::to_string_pretty(value)?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
