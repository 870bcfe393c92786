//! Mini-batch Adam training of [`VqApcModel`] on a feature corpus.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::model::{forward_tape, BoundModel, GumbelSampler, Mode, ModelConfig, TapeTrace, VqApcModel};
use crate::numerics::{adam_step, AdamState, Scalar, Tape, Tensor, Var};

/// Consecutive batches sorted by length inside one shuffle window.
pub const SHUFFLE_WINDOW_BATCHES: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (the last epoch is always written).
    pub checkpoint_every: usize,
    /// Utterances longer than this are truncated to their first `max_frames_per_batch` frames.
    pub max_frames_per_batch: Option<usize>,
}

impl Default for TrainConfig {
    /// 100 epochs, batch 32, learning rate 1e-3.
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            checkpoint_every: 10,
            max_frames_per_batch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be >= 1"));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::config("learning_rate must be non-negative"));
        }
        Ok(())
    }
}

/// Zero-padded, time-major batch. Row `t·B + b` holds frame `t` of item `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T: Scalar = f32> {
    /// Corpus indices of the batch items.
    pub utterances: Vec<usize>,
    pub lengths: Vec<usize>,
    pub steps: usize,
    pub input: Tensor<T>,
    /// Row `t·B + b` holds `x_{t+n}` of item `b` where valid.
    pub target: Tensor<T>,
    /// True where row `t·B + b` has `t + n < len_b`.
    pub mask: Vec<bool>,
}

impl<T: Scalar> Batch<T> {
    pub fn size(&self) -> usize {
        self.utterances.len()
    }

    pub fn valid_frames(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn cast<U: Scalar>(&self) -> Batch<U> {
        Batch {
            utterances: self.utterances.clone(),
            lengths: self.lengths.clone(),
            steps: self.steps,
            input: self.input.cast(),
            target: self.target.cast(),
            mask: self.mask.clone(),
        }
    }
}

/// Pads the given utterances into one batch for predicting `shift` frames ahead.
pub fn assemble_batch(
    corpus: &[FeatureSequence],
    indices: &[usize],
    shift: usize,
    max_frames: Option<usize>,
) -> Result<Batch<f32>> {
    let dim = corpus[indices[0]].dim();
    let lengths: Vec<usize> = indices
        .iter()
        .map(|&i| max_frames.map_or(corpus[i].num_frames(), |m| corpus[i].num_frames().min(m)))
        .collect();
    let steps = *lengths.iter().max().expect("non-empty batch");
    let b = indices.len();
    let mut input = vec![0.0f32; steps * b * dim];
    let mut target = vec![0.0f32; steps * b * dim];
    let mut mask = vec![false; steps * b];
    for (j, (&u, &len)) in indices.iter().zip(&lengths).enumerate() {
        let seq = &corpus[u];
        if seq.dim() != dim {
            return Err(Error::shape(format!(
                "utterance `{}` has dim {}, batch dim {dim}",
                seq.utterance_id,
                seq.dim()
            )));
        }
        for t in 0..len {
            let row = (t * b + j) * dim;
            input[row..row + dim].copy_from_slice(seq.frames.row(t));
            if t + shift < len {
                target[row..row + dim].copy_from_slice(seq.frames.row(t + shift));
                mask[t * b + j] = true;
            }
        }
    }
    Ok(Batch {
        utterances: indices.to_vec(),
        lengths,
        steps,
        input: Tensor::new(vec![steps * b, dim], input)?,
        target: Tensor::new(vec![steps * b, dim], target)?,
        mask,
    })
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Groups utterance indices into batches for one epoch.
///
/// Order is a seeded shuffle of the corpus; within windows of
/// [`SHUFFLE_WINDOW_BATCHES`] batches utterances are sorted by length to
/// limit padding, and the resulting batches are shuffled again.
pub fn batch_order(corpus: &[FeatureSequence], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = epoch_rng(seed, epoch);
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    idx.shuffle(&mut rng);
    let window = batch_size.max(1) * SHUFFLE_WINDOW_BATCHES;
    let mut batches: Vec<Vec<usize>> = Vec::new();
    for w in idx.chunks_mut(window) {
        w.sort_by_key(|&i| corpus[i].num_frames());
        batches.extend(w.chunks(batch_size.max(1)).map(<[usize]>::to_vec));
    }
    batches.shuffle(&mut rng);
    batches
}

/// Epoch-dependent batches, padded to their longest member.
pub fn make_batches(
    corpus: &[FeatureSequence],
    batch_size: usize,
    seed: u64,
    epoch: usize,
    shift: usize,
) -> Result<Vec<Batch<f32>>> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("empty training corpus".into()));
    }
    batch_order(corpus, batch_size, seed, epoch)
        .iter()
        .map(|ix| assemble_batch(corpus, ix, shift, None))
        .collect()
}

/// Symbolic batch loss plus its unnormalized value.
pub struct BatchLoss {
    pub loss: Var,
    pub trace: TapeTrace,
    /// `Σ |x_{t+n} − y_t|` over valid frames and dimensions.
    pub sum: f64,
    pub valid_frames: usize,
}

/// Records the forward pass and the masked L1 objective of `batch`, normalized
/// by `valid_frames × D`.
pub fn batch_loss<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundModel,
    cfg: &ModelConfig,
    batch: &Batch<T>,
    mode: &mut Mode<'_>,
) -> Result<BatchLoss> {
    let valid = batch.valid_frames();
    if valid == 0 {
        return Err(Error::SequenceTooShort(format!(
            "no batch item is longer than the shift of {}",
            cfg.shift
        )));
    }
    let input = tape.constant(batch.input.clone());
    let trace = forward_tape(tape, bound, cfg, input, batch.steps, batch.size(), mode)?;
    let target = tape.constant(batch.target.clone());
    let denom = (valid * cfg.input_dim) as f64;
    let scale = T::from_f64_lossy(1.0 / denom);
    let loss = tape.masked_l1(trace.predictions, target, batch.mask.clone(), scale)?;
    let sum = tape.value(loss).data()[0].to_f64_lossy() * denom;
    Ok(BatchLoss {
        loss,
        trace,
        sum,
        valid_frames: valid,
    })
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    /// Frame-weighted mean normalized loss of each completed epoch.
    pub loss_history: Vec<f64>,
    pub rng: ChaCha8Rng,
}

/// Trains from a seeded initialization without side effects.
pub fn train(
    corpus: &[FeatureSequence],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(VqApcModel<f32>, TrainState)> {
    train_with(corpus, model_cfg, train_cfg, |_, _| Ok(()))
}

/// [`train`] with a callback after every epoch (used for checkpointing and logging).
pub fn train_with<F>(
    corpus: &[FeatureSequence],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<(VqApcModel<f32>, TrainState)>
where
    F: FnMut(&VqApcModel<f32>, &TrainState) -> Result<()>,
{
    model_cfg.validate()?;
    train_cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyInput("empty training corpus".into()));
    }
    for seq in corpus {
        let len = train_cfg
            .max_frames_per_batch
            .map_or(seq.num_frames(), |m| seq.num_frames().min(m));
        if len <= model_cfg.shift {
            return Err(Error::SequenceTooShort(format!(
                "utterance `{}` has {len} frames, needs more than shift {}",
                seq.utterance_id, model_cfg.shift
            )));
        }
        if seq.dim() != model_cfg.input_dim {
            return Err(Error::config(format!(
                "utterance `{}` has dim {}, model input_dim is {}",
                seq.utterance_id,
                seq.dim(),
                model_cfg.input_dim
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut model = VqApcModel::<f32>::init(model_cfg, &mut rng)?;
    let mut state = TrainState {
        adam: AdamState::new(&model.params()),
        epoch: 0,
        loss_history: Vec::with_capacity(train_cfg.epochs),
        rng,
    };

    for epoch in 0..train_cfg.epochs {
        let order = batch_order(corpus, train_cfg.batch_size, train_cfg.seed, epoch);
        let mut loss_sum = 0.0;
        let mut denom = 0usize;
        for (bi, ix) in order.iter().enumerate() {
            let batch = assemble_batch(corpus, ix, model_cfg.shift, train_cfg.max_frames_per_batch)?;
            let mut tape = Tape::<f32>::new();
            let bound = model.bind(&mut tape, true);
            let mut noise = GumbelSampler::new(&mut state.rng);
            let out = batch_loss(&mut tape, &bound, model_cfg, &batch, &mut Mode::Train(&mut noise))
                .map_err(|e| match e {
                    Error::Numerical(m) => Error::Numerical(format!(
                        "epoch {} batch {bi} ({}): {m}",
                        epoch + 1,
                        batch_names(corpus, ix)
                    )),
                    other => other,
                })?;
            if !out.sum.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {} batch {bi} ({})",
                    epoch + 1,
                    batch_names(corpus, ix)
                )));
            }
            let grads = tape.backward(out.loss)?;
            let grads: Vec<Tensor<f32>> = bound.vars().into_iter().map(|v| grads.get(v)).collect();
            adam_step(&mut model.params_mut(), &grads, &mut state.adam, train_cfg.learning_rate)?;
            loss_sum += out.sum;
            denom += out.valid_frames * model_cfg.input_dim;
        }
        state.epoch = epoch + 1;
        state.loss_history.push(loss_sum / denom as f64);
        on_epoch(&model, &state)?;
    }
    Ok((model, state))
}

fn batch_names(corpus: &[FeatureSequence], ix: &[usize]) -> String {
    ix.iter()
        .map(|&i| corpus[i].utterance_id.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn corpus(lengths: &[usize], dim: usize, seed: u64) -> Vec<FeatureSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        lengths
            .iter()
            .enumerate()
            .map(|(i, &t)| FeatureSequence {
                utterance_id: format!("u{i}"),
                speaker_id: "s".into(),
                frames: Tensor::new(vec![t, dim], (0..t * dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .unwrap(),
            })
            .collect()
    }

    fn small_cfg(vq: Vec<usize>) -> ModelConfig {
        ModelConfig {
            input_dim: 3,
            num_layers: 2,
            hidden_dim: 5,
            vq_layers: vq,
            codebook_size: 4,
            code_dim: 5,
            shift: 2,
            tau: 0.1,
        }
    }

    #[test]
    fn batch_size_one_has_no_padding() {
        let c = corpus(&[5, 7, 6], 3, 0);
        let batches = make_batches(&c, 1, 3, 0, 2).unwrap();
        assert_eq!(batches.len(), 3);
        for b in &batches {
            assert_eq!(b.size(), 1);
            assert_eq!(b.steps, c[b.utterances[0]].num_frames());
        }
    }

    #[test]
    fn batch_order_is_deterministic_and_epoch_dependent() {
        let c = corpus(&[5; 40], 3, 0);
        assert_eq!(batch_order(&c, 4, 9, 2), batch_order(&c, 4, 9, 2));
        assert_ne!(batch_order(&c, 4, 9, 2), batch_order(&c, 4, 9, 3));
        let mut all: Vec<usize> = batch_order(&c, 4, 9, 2).concat();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn padding_is_masked_out() {
        let c = corpus(&[10, 12], 3, 1);
        let cfg = small_cfg(vec![]);
        let model = VqApcModel::<f64>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let joint = assemble_batch(&c, &[0, 1], 2, None).unwrap().cast::<f64>();
        assert_eq!(joint.steps, 12);
        assert_eq!(joint.valid_frames(), 8 + 10);

        let run = |b: &Batch<f64>| {
            let mut tape = Tape::<f64>::new();
            let bound = model.bind(&mut tape, true);
            let out = batch_loss(&mut tape, &bound, &cfg, b, &mut Mode::Eval).unwrap();
            let g = tape.backward(out.loss).unwrap();
            let grads: Vec<Tensor<f64>> = bound.vars().into_iter().map(|v| g.get(v)).collect();
            (out.sum, out.valid_frames as f64, grads)
        };
        let (sj, nj, gj) = run(&joint);
        let (s0, n0, g0) = run(&assemble_batch(&c, &[0], 2, None).unwrap().cast());
        let (s1, n1, g1) = run(&assemble_batch(&c, &[1], 2, None).unwrap().cast());
        assert!((sj - (s0 + s1)).abs() < 1e-9);
        // Normalized gradients recombine by frame weights.
        for ((a, b), c) in gj.iter().zip(&g0).zip(&g1) {
            for ((&x, &y), &z) in a.data().iter().zip(b.data()).zip(c.data()) {
                let expect = (y * n0 + z * n1) / nj;
                assert!((x - expect).abs() <= 1e-5 * (x.abs() + expect.abs()).max(1e-8), "{x} vs {expect}");
            }
        }
    }

    #[test]
    fn short_utterance_rejected_before_training() {
        let c = corpus(&[5, 2], 3, 0);
        let tc = TrainConfig { epochs: 1, batch_size: 2, ..TrainConfig::default() };
        assert!(matches!(train(&c, &small_cfg(vec![]), &tc), Err(Error::SequenceTooShort(_))));
    }

    #[test]
    fn zero_learning_rate_keeps_loss_flat() {
        let c = corpus(&[8, 9, 10, 11, 7], 3, 2);
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 2,
            learning_rate: 0.0,
            seed: 5,
            ..TrainConfig::default()
        };
        let (_, st) = train(&c, &small_cfg(vec![]), &tc).unwrap();
        assert_eq!(st.loss_history.len(), 3);
        for l in &st.loss_history {
            assert!((l - st.loss_history[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let c = corpus(&[8, 9, 10, 11, 7, 12], 3, 2);
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 2,
            seed: 1,
            ..TrainConfig::default()
        };
        let (a, sa) = train(&c, &small_cfg(vec![2]), &tc).unwrap();
        let (b, sb) = train(&c, &small_cfg(vec![2]), &tc).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa.loss_history, sb.loss_history);
    }
}
