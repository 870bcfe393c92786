//! Linear multinomial logistic-regression probes over frozen representations.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::io::NUM_PHONES;
use crate::model::argmax_lowest;
use crate::numerics::{adam_step, AdamState, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeTask {
    Phone,
    Speaker,
}

impl std::fmt::Display for ProbeTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProbeTask::Phone => "phone",
            ProbeTask::Speaker => "speaker",
        })
    }
}

/// Extracted representation of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceRepr {
    pub id: String,
    pub speaker_id: String,
    /// `T × F`
    pub repr: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeDataset {
    pub features: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl ProbeDataset {
    pub fn new(features: Vec<Vec<f32>>, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::shape("features and labels differ in length"));
        }
        if let Some(f) = features.first() {
            if features.iter().any(|x| x.len() != f.len()) {
                return Err(Error::shape("feature vectors differ in dimension"));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Data(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

/// One example per frame, labelled with its aligned phone.
pub fn build_phone_dataset(reprs: &[UtteranceRepr], alignments: &[Vec<usize>], split: Split) -> Result<ProbeDataset> {
    if reprs.len() != alignments.len() {
        return Err(Error::shape(format!(
            "{} representations but {} alignments",
            reprs.len(),
            alignments.len()
        )));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (u, ali) in reprs.iter().zip(alignments) {
        if ali.len() != u.repr.rows() {
            return Err(Error::Alignment {
                utterance: u.id.clone(),
                reason: format!("{} labels for {} frames", ali.len(), u.repr.rows()),
            });
        }
        if let Some(&bad) = ali.iter().find(|&&p| p >= NUM_PHONES) {
            return Err(Error::Alignment {
                utterance: u.id.clone(),
                reason: format!("phone id {bad} outside [0, {}]", NUM_PHONES - 1),
            });
        }
        for t in 0..u.repr.rows() {
            features.push(u.repr.row(t).to_vec());
        }
        labels.extend_from_slice(ali);
    }
    ProbeDataset::new(features, labels, NUM_PHONES, split)
}

/// Sorted speaker inventory mapping ids to class indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerIndex {
    speakers: Vec<String>,
}

impl SpeakerIndex {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(ids: I) -> Self {
        let mut speakers: Vec<String> = ids.into_iter().map(Into::into).collect();
        speakers.sort();
        speakers.dedup();
        Self { speakers }
    }

    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub fn class_of(&self, id: &str) -> Option<usize> {
        self.speakers.binary_search_by(|s| s.as_str().cmp(id)).ok()
    }
}

/// Temporal mean of an utterance's rows.
pub fn mean_pool(repr: &Tensor<f32>) -> Vec<f32> {
    let (t, f) = repr.dims2();
    let mut acc = vec![0.0f64; f];
    for i in 0..t {
        for (a, &v) in acc.iter_mut().zip(repr.row(i)) {
            *a += f64::from(v);
        }
    }
    acc.into_iter().map(|a| (a / t as f64) as f32).collect()
}

/// One mean-pooled example per utterance, labelled with its speaker.
pub fn build_speaker_dataset(reprs: &[UtteranceRepr], speakers: &SpeakerIndex, split: Split) -> Result<ProbeDataset> {
    let mut features = Vec::with_capacity(reprs.len());
    let mut labels = Vec::with_capacity(reprs.len());
    for u in reprs {
        if u.repr.rows() == 0 {
            return Err(Error::EmptyInput(format!("utterance `{}` has no frames", u.id)));
        }
        let label = speakers
            .class_of(&u.speaker_id)
            .ok_or_else(|| Error::Data(format!("unknown speaker `{}` for utterance `{}`", u.speaker_id, u.id)))?;
        features.push(mean_pool(&u.repr));
        labels.push(label);
    }
    ProbeDataset::new(features, labels, speakers.len(), split)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 50,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    /// `C × F`
    pub weights: Tensor<f32>,
    /// `C`
    pub bias: Tensor<f32>,
}

impl LinearProbe {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        Self {
            weights: Tensor::zeros(&[num_classes, dim]),
            bias: Tensor::zeros(&[num_classes]),
        }
    }

    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        let f = self.weights.cols();
        self.bias
            .data()
            .iter()
            .enumerate()
            .map(|(c, &b)| {
                let w = &self.weights.data()[c * f..(c + 1) * f];
                f64::from(b) + w.iter().zip(x).map(|(&a, &v)| f64::from(a) * f64::from(v)).sum::<f64>()
            })
            .collect()
    }

    /// Highest-scoring class; ties go to the lowest index.
    pub fn predict(&self, x: &[f32]) -> usize {
        argmax_lowest(&self.logits(x))
    }
}

/// Fraction of examples whose predicted class is wrong.
pub fn error_rate(probe: &LinearProbe, data: &ProbeDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput(format!("empty {:?} set", data.split)));
    }
    let wrong = data
        .features
        .iter()
        .zip(&data.labels)
        .filter(|(x, &y)| probe.predict(x) != y)
        .count();
    Ok(wrong as f64 / data.len() as f64)
}

/// Cross-entropy minimization with Adam; returns the epoch with the lowest dev error.
pub fn train_probe(train: &ProbeDataset, dev: &ProbeDataset, cfg: &ProbeConfig) -> Result<LinearProbe> {
    if train.is_empty() || dev.is_empty() {
        return Err(Error::EmptyInput("probe train and dev sets must be non-empty".into()));
    }
    if train.num_classes != dev.num_classes || train.feature_dim() != dev.feature_dim() {
        return Err(Error::shape("train and dev sets disagree on classes or feature dimension"));
    }
    let first = train.labels[0];
    if train.labels.iter().all(|&l| l == first) {
        return Err(Error::Data("probe training set contains a single class".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::config("probe batch_size and epochs must be >= 1"));
    }

    let (c, f) = (train.num_classes, train.feature_dim());
    let mut probe = LinearProbe::zeros(c, f);
    let mut adam = AdamState::new(&[&probe.weights, &probe.bias]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Canonical starting order, so the result does not depend on how the
    // examples happened to be listed.
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.sort_by(|&a, &b| {
        train.labels[a].cmp(&train.labels[b]).then_with(|| {
            let key = |i: usize| train.features[i].iter().map(|x| x.to_bits()).collect::<Vec<u32>>();
            key(a).cmp(&key(b))
        })
    });
    let mut best = (error_rate(&probe, dev)?, probe.clone());

    let mut gw = vec![0.0f64; c * f];
    let mut gb = vec![0.0f64; c];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            gw.iter_mut().for_each(|v| *v = 0.0);
            gb.iter_mut().for_each(|v| *v = 0.0);
            for &i in chunk {
                let x = &train.features[i];
                let mut p = probe.logits(x);
                let mx = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = p.iter_mut().map(|v| {
                    *v = (*v - mx).exp();
                    *v
                }).sum();
                for (k, pk) in p.iter_mut().enumerate() {
                    *pk /= z;
                    if k == train.labels[i] {
                        *pk -= 1.0;
                    }
                    gb[k] += *pk;
                    let row = &mut gw[k * f..(k + 1) * f];
                    for (g, &xv) in row.iter_mut().zip(x) {
                        *g += *pk * f64::from(xv);
                    }
                }
            }
            let n = chunk.len() as f64;
            let grads = [
                Tensor::new(vec![c, f], gw.iter().map(|v| (v / n) as f32).collect())?,
                Tensor::new(vec![c], gb.iter().map(|v| (v / n) as f32).collect())?,
            ];
            adam_step(&mut [&mut probe.weights, &mut probe.bias], &grads, &mut adam, cfg.learning_rate)?;
        }
        let err = error_rate(&probe, dev)?;
        if err < best.0 {
            best = (err, probe.clone());
        }
    }
    Ok(best.1)
}

/// Assigns utterances to train/dev/test, stratified by speaker.
///
/// Each speaker with at least three utterances contributes ~10% (at least one)
/// to dev and to test; the rest go to train.
pub fn split_by_speaker(speaker_ids: &[String], seed: u64) -> Vec<Split> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in speaker_ids.iter().enumerate() {
        groups.entry(s.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Split::Train; speaker_ids.len()];
    for idx in groups.values_mut() {
        idx.shuffle(&mut rng);
        if idx.len() < 3 {
            continue;
        }
        let held = ((idx.len() as f64 * 0.1).round() as usize).max(1);
        for &i in &idx[..held] {
            out[i] = Split::Dev;
        }
        for &i in &idx[held..2 * held] {
            out[i] = Split::Test;
        }
    }
    out
}

/// Test error rates of `seeds` independently seeded probes.
pub fn run_seeds(
    train: &ProbeDataset,
    dev: &ProbeDataset,
    test: &ProbeDataset,
    cfg: &ProbeConfig,
    seeds: usize,
) -> Result<Vec<f64>> {
    (0..seeds as u64)
        .map(|s| {
            let probe = train_probe(train, dev, &ProbeConfig { seed: cfg.seed + s, ..cfg.clone() })?;
            error_rate(&probe, test)
        })
        .collect()
}

/// One line of a probe report.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRow {
    pub model_tag: String,
    pub layer: usize,
    pub quantized: bool,
    pub task: ProbeTask,
    pub seed: String,
    pub error_rate: f64,
}

/// CSV with one row per seed plus a `mean` row.
pub fn probe_report_csv(tag: &str, layer: usize, quantized: bool, task: ProbeTask, base_seed: u64, errors: &[f64]) -> String {
    let mut out = String::from("model_tag,layer,quantized,task,seed,error_rate\n");
    for (i, e) in errors.iter().enumerate() {
        let _ = writeln!(out, "{tag},{layer},{quantized},{task},{},{e:.6}", base_seed + i as u64);
    }
    let mean = errors.iter().sum::<f64>() / errors.len().max(1) as f64;
    let _ = writeln!(out, "{tag},{layer},{quantized},{task},mean,{mean:.6}");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn repr(id: &str, spk: &str, rows: &[Vec<f32>]) -> UtteranceRepr {
        UtteranceRepr {
            id: id.into(),
            speaker_id: spk.into(),
            repr: Tensor::from_rows(rows).unwrap(),
        }
    }

    fn blobs(n: usize, seed: u64, split: Split) -> ProbeDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let c = if y == 0 { -2.0 } else { 2.0 };
            let a: f32 = StandardNormal.sample(&mut rng);
            let b: f32 = StandardNormal.sample(&mut rng);
            feats.push(vec![c + 0.5 * a, c + 0.5 * b]);
            labels.push(y);
        }
        ProbeDataset::new(feats, labels, 2, split).unwrap()
    }

    #[test]
    fn phone_dataset_counts_frames() {
        let r = vec![repr("a", "s", &vec![vec![0.0]; 5]), repr("b", "s", &vec![vec![1.0]; 5])];
        let ds = build_phone_dataset(&r, &[vec![1; 5], vec![2; 5]], Split::Train).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.num_classes, 42);
    }

    #[test]
    fn phone_dataset_errors_name_utterance() {
        let r = vec![repr("a", "s", &vec![vec![0.0]; 3])];
        let err = build_phone_dataset(&r, &[vec![0, 42, 1]], Split::Train).unwrap_err();
        assert!(err.to_string().contains("`a`"));
        let err = build_phone_dataset(&r, &[vec![0, 1]], Split::Train).unwrap_err();
        assert!(matches!(err, Error::Alignment { .. }));
    }

    #[test]
    fn speaker_dataset_mean_pools() {
        let idx = SpeakerIndex::new(["s1", "s2"]);
        let r = vec![
            repr("a", "s2", &[vec![1.0], vec![3.0]]),
            repr("b", "s1", &vec![vec![4.0]; 4]),
        ];
        let ds = build_speaker_dataset(&r, &idx, Split::Train).unwrap();
        assert_eq!(ds.features, vec![vec![2.0], vec![4.0]]);
        assert_eq!(ds.labels, vec![1, 0]);
        let bad = vec![repr("c", "nobody", &[vec![1.0]])];
        assert!(build_speaker_dataset(&bad, &idx, Split::Train).is_err());
    }

    #[test]
    fn mean_pool_ignores_frame_order() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.5]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.5, 0.5], vec![1.0, 2.0], vec![3.0, -1.0]]).unwrap();
        let (pa, pb) = (mean_pool(&a), mean_pool(&b));
        for (x, y) in pa.iter().zip(&pb) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn separable_blobs_are_learned() {
        let probe = train_probe(&blobs(400, 1, Split::Train), &blobs(200, 2, Split::Dev), &ProbeConfig::default()).unwrap();
        assert!(error_rate(&probe, &blobs(200, 3, Split::Test)).unwrap() < 0.02);
    }

    #[test]
    fn shuffled_labels_sit_at_chance() {
        let classes = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let make = |n: usize, rng: &mut ChaCha8Rng, split| {
            let feats = (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0f32..1.0)).collect()).collect();
            let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
            ProbeDataset::new(feats, labels, classes, split).unwrap()
        };
        let (tr, dv, te) = (make(2000, &mut rng, Split::Train), make(500, &mut rng, Split::Dev), make(2000, &mut rng, Split::Test));
        let probe = train_probe(&tr, &dv, &ProbeConfig { epochs: 10, ..ProbeConfig::default() }).unwrap();
        let err = error_rate(&probe, &te).unwrap();
        assert!((err - 0.75).abs() < 0.04, "{err}");
    }

    #[test]
    fn duplicating_train_set_changes_nothing() {
        let tr = blobs(100, 1, Split::Train);
        let dv = blobs(50, 2, Split::Dev);
        let mut dup = tr.clone();
        dup.features.extend(tr.features.clone());
        dup.labels.extend(tr.labels.clone());
        let cfg = ProbeConfig { epochs: 20, ..ProbeConfig::default() };
        let a = train_probe(&tr, &dv, &cfg).unwrap();
        let b = train_probe(&dup, &dv, &cfg).unwrap();
        assert!(a.weights.max_abs_diff(&b.weights) < 1e-5);
        assert!(a.bias.max_abs_diff(&b.bias) < 1e-5);
    }

    #[test]
    fn single_class_rejected() {
        let ds = ProbeDataset::new(vec![vec![0.0]; 3], vec![1; 3], 2, Split::Train).unwrap();
        assert!(train_probe(&ds, &ds, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn error_rate_counting() {
        let mut probe = LinearProbe::zeros(3, 3);
        for c in 0..3 {
            probe.weights.data_mut()[c * 3 + c] = 1.0;
        }
        let eye = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let perfect = ProbeDataset::new(eye.clone(), vec![0, 1, 2], 3, Split::Test).unwrap();
        assert_eq!(error_rate(&probe, &perfect).unwrap(), 0.0);
        let one_off = ProbeDataset::new(eye.clone(), vec![0, 1, 0], 3, Split::Test).unwrap();
        assert!((error_rate(&probe, &one_off).unwrap() - 1.0 / 3.0).abs() < 1e-4);
        // A zero probe ties everywhere and always answers class 0.
        let zero = LinearProbe::zeros(3, 3);
        assert!((error_rate(&zero, &perfect).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(error_rate(&zero, &ProbeDataset::new(vec![], vec![], 3, Split::Test).unwrap()).is_err());
    }

    #[test]
    fn split_is_stratified() {
        let ids: Vec<String> = (0..30).map(|i| format!("s{}", i % 3)).collect();
        let sp = split_by_speaker(&ids, 0);
        for s in ["s0", "s1", "s2"] {
            let mine: Vec<Split> = ids.iter().zip(&sp).filter(|(i, _)| *i == s).map(|(_, &x)| x).collect();
            assert_eq!(mine.iter().filter(|&&x| x == Split::Dev).count(), 1);
            assert_eq!(mine.iter().filter(|&&x| x == Split::Test).count(), 1);
        }
        assert_eq!(sp, split_by_speaker(&ids, 0));
    }

    #[test]
    fn report_has_mean_row() {
        let csv = probe_report_csv("m", 3, false, ProbeTask::Phone, 0, &[0.1, 0.3]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[3], "m,3,false,phone,mean,0.200000");
    }

    proptest::proptest! {
        #[test]
        fn error_rate_permutation_invariant(seed in 0u64..1000) {
            let ds = blobs(40, seed, Split::Test);
            let mut probe = LinearProbe::zeros(2, 2);
            probe.weights.data_mut().copy_from_slice(&[-1.0, 0.2, 1.0, -0.1]);
            let mut idx: Vec<usize> = (0..40).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 1));
            let perm = ProbeDataset::new(
                idx.iter().map(|&i| ds.features[i].clone()).collect(),
                idx.iter().map(|&i| ds.labels[i]).collect(),
                2,
                Split::Test,
            ).unwrap();
            proptest::prop_assert_eq!(error_rate(&probe, &ds).unwrap(), error_rate(&probe, &perm).unwrap());
        }
    }
}
