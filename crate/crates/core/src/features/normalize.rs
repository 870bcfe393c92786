use std::collections::BTreeMap;

use super::FeatureSequence;
use crate::error::{Error, Result};

/// Dimensions whose pooled variance is below this map to zero.
pub const MIN_VARIANCE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub frames: usize,
}

/// Population mean and variance of every speaker's pooled frames.
pub fn speaker_stats(seqs: &[FeatureSequence]) -> Result<BTreeMap<String, SpeakerStats>> {
    let dim = seqs
        .first()
        .ok_or_else(|| Error::EmptyInput("no feature sequences to normalize".into()))?
        .dim();
    let mut sums: BTreeMap<&str, (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    for s in seqs {
        if s.dim() != dim {
            return Err(Error::shape(format!(
                "utterance `{}` has dim {} but corpus dim is {dim}",
                s.utterance_id,
                s.dim()
            )));
        }
        let e = sums
            .entry(s.speaker_id.as_str())
            .or_insert_with(|| (vec![0.0; dim], vec![0.0; dim], 0));
        for t in 0..s.num_frames() {
            for (d, &v) in s.frames.row(t).iter().enumerate() {
                e.0[d] += f64::from(v);
            }
        }
        e.2 += s.num_frames();
    }
    for s in seqs {
        let e = sums.get_mut(s.speaker_id.as_str()).expect("speaker seen");
        let n = e.2 as f64;
        for t in 0..s.num_frames() {
            for (d, &v) in s.frames.row(t).iter().enumerate() {
                let c = f64::from(v) - e.0[d] / n;
                e.1[d] += c * c;
            }
        }
    }
    Ok(sums
        .into_iter()
        .map(|(spk, (sum, sq, n))| {
            let nf = n as f64;
            (
                spk.to_string(),
                SpeakerStats {
                    mean: sum.iter().map(|s| s / nf).collect(),
                    variance: sq.iter().map(|s| s / nf).collect(),
                    frames: n,
                },
            )
        })
        .collect())
}

/// Standardizes every dimension to zero mean and unit variance per speaker.
pub fn normalize_per_speaker(seqs: &[FeatureSequence]) -> Result<Vec<FeatureSequence>> {
    let stats = speaker_stats(seqs)?;
    Ok(seqs
        .iter()
        .map(|s| {
            let st = &stats[&s.speaker_id];
            let dim = s.dim();
            let mut out = s.clone();
            for (i, v) in out.frames.data_mut().iter_mut().enumerate() {
                let d = i % dim;
                *v = if st.variance[d] < MIN_VARIANCE {
                    0.0
                } else {
                    ((f64::from(*v) - st.mean[d]) / st.variance[d].sqrt()) as f32
                };
            }
            out
        })
        .collect())
}
