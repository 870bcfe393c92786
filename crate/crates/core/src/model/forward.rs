use std::collections::BTreeMap;

use super::noise::NoiseSource;
use super::{Codebook, GruParams, ModelConfig, VqApcModel};
use crate::error::{Error, Result};
use crate::numerics::{softmax_rows, Scalar, Tape, Tensor, Var};

/// How VQ layers pick codes.
pub enum Mode<'a> {
    /// Deterministic argmax of the logits.
    Eval,
    /// Gumbel-max selection; forward emits the hard code, backward uses the
    /// Gumbel-Softmax probabilities.
    Train(&'a mut dyn NoiseSource),
    /// Forward and backward both use `Σ p_i c_i` (the straight-through surrogate).
    Soft(&'a mut dyn NoiseSource),
}

/// A model's parameters registered on a tape, in [`VqApcModel::params`] order.
#[derive(Clone, Debug)]
pub struct BoundModel {
    gru: Vec<[Var; 3]>,
    vq: BTreeMap<usize, [Var; 3]>,
    head: [Var; 2],
}

impl BoundModel {
    pub fn vars(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.gru.iter().flatten().copied().collect();
        out.extend(self.vq.values().flatten().copied());
        out.extend(self.head);
        out
    }

    /// Rebuilds a binding from variables in [`BoundModel::vars`] order.
    pub fn from_vars(cfg: &ModelConfig, vars: &[Var]) -> Result<Self> {
        let want = 3 * cfg.num_layers + 3 * cfg.vq_layers.len() + 2;
        if vars.len() != want {
            return Err(Error::shape(format!("expected {want} parameter variables, got {}", vars.len())));
        }
        let gru = vars[..3 * cfg.num_layers].chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        let vq_vars = &vars[3 * cfg.num_layers..want - 2];
        let vq = cfg
            .vq_layers
            .iter()
            .zip(vq_vars.chunks(3))
            .map(|(&l, c)| (l, [c[0], c[1], c[2]]))
            .collect();
        Ok(Self {
            gru,
            vq,
            head: [vars[want - 2], vars[want - 1]],
        })
    }
}

impl<T: Scalar> VqApcModel<T> {
    /// Registers parameters as trainable leaves (or constants when `trainable` is false).
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundModel {
        let mut reg = |t: &Tensor<T>| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let gru = self
            .layers
            .iter()
            .map(|l| [reg(&l.w_input), reg(&l.w_hidden), reg(&l.bias)])
            .collect();
        let vq = self
            .quantizers
            .iter()
            .map(|(&k, cb)| (k, [reg(&cb.codes), reg(&cb.projection), reg(&cb.bias)]))
            .collect();
        let head = [reg(&self.head_weight), reg(&self.head_bias)];
        BoundModel { gru, vq, head }
    }
}

/// Symbolic results of [`forward_tape`]. Row `t·B + b` is time `t` of batch item `b`.
#[derive(Clone, Debug)]
pub struct TapeTrace {
    pub predictions: Var,
    pub hidden: Vec<Var>,
    pub quantized: BTreeMap<usize, Var>,
    pub probs: BTreeMap<usize, Var>,
    pub codes: BTreeMap<usize, Vec<usize>>,
}

/// Index of the first maximum.
pub fn argmax_lowest<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

fn gru_layer<T: Scalar>(
    tape: &mut Tape<T>,
    p: [Var; 3],
    input: Var,
    steps: usize,
    batch: usize,
) -> Result<Var> {
    let [w_in, w_h, bias] = p;
    let hdim = tape.value(w_h).rows();
    let gx = tape.matmul(input, w_in)?;
    let gx = tape.add_row(gx, bias)?;
    let w_h_us = tape.slice_cols(w_h, 0, 2 * hdim)?;
    let w_h_c = tape.slice_cols(w_h, 2 * hdim, hdim)?;

    let mut outs = Vec::with_capacity(steps);
    let mut h: Option<Var> = None;
    for t in 0..steps {
        let g = tape.slice_rows(gx, t * batch, batch)?;
        let g_us = tape.slice_cols(g, 0, 2 * hdim)?;
        let g_c = tape.slice_cols(g, 2 * hdim, hdim)?;
        let next = match h {
            // h₀ = 0: the recurrent terms vanish and h₁ = u ⊙ c̃.
            None => {
                let us = tape.sigmoid(g_us);
                let u = tape.slice_cols(us, 0, hdim)?;
                let c = tape.tanh(g_c);
                tape.mul(u, c)?
            }
            Some(prev) => {
                let rec = tape.matmul(prev, w_h_us)?;
                let pre = tape.add(g_us, rec)?;
                let us = tape.sigmoid(pre);
                let u = tape.slice_cols(us, 0, hdim)?;
                let s = tape.slice_cols(us, hdim, hdim)?;
                let sh = tape.mul(s, prev)?;
                let rec_c = tape.matmul(sh, w_h_c)?;
                let pre_c = tape.add(g_c, rec_c)?;
                let c = tape.tanh(pre_c);
                let diff = tape.sub(c, prev)?;
                let step = tape.mul(u, diff)?;
                tape.add(prev, step)?
            }
        };
        outs.push(next);
        h = Some(next);
    }
    tape.concat_rows(&outs)
}

struct VqOut {
    z: Var,
    probs: Var,
    codes: Vec<usize>,
}

fn vq_layer<T: Scalar>(
    tape: &mut Tape<T>,
    p: [Var; 3],
    h: Var,
    tau: f32,
    mode: &mut Mode<'_>,
) -> Result<VqOut> {
    let [codes, proj, bias] = p;
    let r = tape.matmul(h, proj)?;
    let r = tape.add_row(r, bias)?;
    let (n, v) = tape.value(r).dims2();
    let one_hot = |ks: &[usize]| {
        let mut data = vec![T::zero(); n * v];
        for (i, &k) in ks.iter().enumerate() {
            data[i * v + k] = T::one();
        }
        Tensor::new(vec![n, v], data).expect("one-hot shape")
    };

    match mode {
        Mode::Eval => {
            let probs = tape.softmax_rows(r);
            let ks: Vec<usize> = (0..n).map(|i| argmax_lowest(tape.value(r).row(i))).collect();
            let sel = tape.constant(one_hot(&ks));
            let z = tape.matmul(sel, codes)?;
            Ok(VqOut { z, probs, codes: ks })
        }
        Mode::Train(noise) | Mode::Soft(noise) => {
            if !(tau > 0.0) {
                return Err(Error::config(format!("tau must be positive, got {tau}")));
            }
            let g: Vec<T> = noise.gumbel(n * v).into_iter().map(T::from_f64_lossy).collect();
            let g = tape.constant(Tensor::new(vec![n, v], g)?);
            let perturbed = tape.add(r, g)?;
            let scaled = tape.scale(perturbed, T::one() / T::from_f64_lossy(f64::from(tau)));
            let probs = tape.softmax_rows(scaled);
            let ks: Vec<usize> = (0..n)
                .map(|i| argmax_lowest(tape.value(perturbed).row(i)))
                .collect();
            let z = if matches!(mode, Mode::Train(_)) {
                let sel = tape.straight_through(one_hot(&ks), probs)?;
                tape.matmul(sel, codes)?
            } else {
                tape.matmul(probs, codes)?
            };
            Ok(VqOut { z, probs, codes: ks })
        }
    }
}

/// Builds the full forward pass on `tape` for a time-major `(steps·batch) × D` input.
pub fn forward_tape<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundModel,
    cfg: &ModelConfig,
    input: Var,
    steps: usize,
    batch: usize,
    mode: &mut Mode<'_>,
) -> Result<TapeTrace> {
    if steps == 0 || batch == 0 {
        return Err(Error::EmptyInput("forward pass over zero frames".into()));
    }
    if tape.value(input).dims2() != (steps * batch, cfg.input_dim) {
        return Err(Error::shape(format!(
            "input {:?}, expected [{}, {}]",
            tape.value(input).shape(),
            steps * batch,
            cfg.input_dim
        )));
    }
    let mut x = input;
    let mut hidden = Vec::with_capacity(cfg.num_layers);
    let mut quantized = BTreeMap::new();
    let mut probs = BTreeMap::new();
    let mut codes = BTreeMap::new();
    for (i, p) in bound.gru.iter().enumerate() {
        let layer = i + 1;
        let h = gru_layer(tape, *p, x, steps, batch)?;
        if !tape.value(h).all_finite() {
            return Err(Error::Numerical(format!("non-finite activations in GRU layer {layer}")));
        }
        hidden.push(h);
        x = h;
        if let Some(q) = bound.vq.get(&layer) {
            let out = vq_layer(tape, *q, h, cfg.tau, mode)?;
            quantized.insert(layer, out.z);
            probs.insert(layer, out.probs);
            codes.insert(layer, out.codes);
            x = out.z;
        }
    }
    let [hw, hb] = bound.head;
    let y = tape.matmul(x, hw)?;
    let predictions = tape.add_row(y, hb)?;
    if !tape.value(predictions).all_finite() {
        return Err(Error::Numerical("non-finite predictions".into()));
    }
    Ok(TapeTrace {
        predictions,
        hidden,
        quantized,
        probs,
        codes,
    })
}

/// Concrete per-sequence forward results.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T: Scalar = f32> {
    /// `T × D`, row `t` is `y_t`.
    pub predictions: Tensor<T>,
    /// `h^(ℓ)` for every layer, each `T × H`.
    pub hidden: Vec<Tensor<T>>,
    /// `z^(ℓ)` for VQ layers, each `T × E`.
    pub quantized: BTreeMap<usize, Tensor<T>>,
    /// Selection probabilities for VQ layers, each `T × V`.
    pub probs: BTreeMap<usize, Tensor<T>>,
    pub codes: BTreeMap<usize, Vec<usize>>,
}

/// Runs the model over one `T × D` sequence.
pub fn apc_forward<T: Scalar>(
    x_seq: &Tensor<T>,
    model: &VqApcModel<T>,
    mode: &mut Mode<'_>,
) -> Result<ForwardTrace<T>> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let steps = x_seq.rows();
    let input = tape.constant(x_seq.clone());
    let tr = forward_tape(&mut tape, &bound, &model.config, input, steps, 1, mode)?;
    Ok(ForwardTrace {
        predictions: tape.value(tr.predictions).clone(),
        hidden: tr.hidden.iter().map(|&v| tape.value(v).clone()).collect(),
        quantized: tr.quantized.iter().map(|(&k, &v)| (k, tape.value(v).clone())).collect(),
        probs: tr.probs.iter().map(|(&k, &v)| (k, tape.value(v).clone())).collect(),
        codes: tr.codes,
    })
}

/// Unnormalized L1 objective `Σ_{t=1}^{T−n} |x_{t+n} − y_t|` summed over dimensions.
pub fn apc_loss<T: Scalar>(trace: &ForwardTrace<T>, x_seq: &Tensor<T>, n: usize) -> Result<f64> {
    let steps = x_seq.rows();
    if steps <= n {
        return Err(Error::SequenceTooShort(format!(
            "{steps} frames cannot predict {n} steps ahead"
        )));
    }
    if trace.predictions.dims2() != x_seq.dims2() {
        return Err(Error::shape("predictions and targets differ in shape"));
    }
    let mut s = 0.0;
    for t in 0..steps - n {
        for (y, x) in trace.predictions.row(t).iter().zip(x_seq.row(t + n)) {
            s += (x.to_f64_lossy() - y.to_f64_lossy()).abs();
        }
    }
    Ok(s)
}

/// [`apc_loss`] divided by `(T − n) · D`, the per-sequence logging convention.
pub fn apc_loss_normalized<T: Scalar>(trace: &ForwardTrace<T>, x_seq: &Tensor<T>, n: usize) -> Result<f64> {
    let s = apc_loss(trace, x_seq, n)?;
    Ok(s / ((x_seq.rows() - n) * x_seq.cols()) as f64)
}

/// One GRU layer over a `T × Din` sequence from a zero initial state.
pub fn gru_forward<T: Scalar>(x_seq: &Tensor<T>, params: &GruParams<T>) -> Result<Tensor<T>> {
    if x_seq.cols() != params.input_dim() {
        return Err(Error::shape(format!(
            "GRU expects {} inputs, sequence has {}",
            params.input_dim(),
            x_seq.cols()
        )));
    }
    let mut tape = Tape::new();
    let p = [
        tape.constant(params.w_input.clone()),
        tape.constant(params.w_hidden.clone()),
        tape.constant(params.bias.clone()),
    ];
    let input = tape.constant(x_seq.clone());
    let h = gru_layer(&mut tape, p, input, x_seq.rows(), 1)?;
    let out = tape.value(h).clone();
    if !out.all_finite() {
        return Err(Error::Numerical("non-finite GRU activations".into()));
    }
    Ok(out)
}

/// Code logits `r = projectionᵀ h + bias`.
pub fn vq_logits<T: Scalar>(h: &[T], cb: &Codebook<T>) -> Result<Vec<T>> {
    let (hd, v) = cb.projection.dims2();
    if h.len() != hd {
        return Err(Error::shape(format!("hidden size {} vs projection {hd}", h.len())));
    }
    let mut r = cb.bias.data().to_vec();
    for (i, &hv) in h.iter().enumerate() {
        for (j, rj) in r.iter_mut().enumerate() {
            *rj = *rj + hv * cb.projection.data()[i * v + j];
        }
    }
    Ok(r)
}

/// Result of quantizing one hidden vector in train mode.
#[derive(Clone, Debug, PartialEq)]
pub struct VqSample<T: Scalar = f32> {
    pub z: Vec<T>,
    pub probs: Vec<T>,
    pub index: usize,
    /// The Gumbel noise that was added to the logits.
    pub noise: Vec<f64>,
}

/// Gumbel-Softmax selection for a single hidden vector.
pub fn vq_forward_train<T: Scalar>(
    h: &[T],
    cb: &Codebook<T>,
    tau: f32,
    noise: &mut dyn NoiseSource,
) -> Result<VqSample<T>> {
    if !(tau > 0.0) {
        return Err(Error::config(format!("tau must be positive, got {tau}")));
    }
    let r = vq_logits(h, cb)?;
    let v = noise.gumbel(r.len());
    let perturbed: Vec<T> = r.iter().zip(&v).map(|(&a, &b)| a + T::from_f64_lossy(b)).collect();
    let inv_tau = T::one() / T::from_f64_lossy(f64::from(tau));
    let scaled = Tensor::new(vec![1, r.len()], perturbed.iter().map(|&p| p * inv_tau).collect())?;
    let probs = softmax_rows(&scaled).into_data();
    let index = argmax_lowest(&perturbed);
    Ok(VqSample {
        z: cb.codes.row(index).to_vec(),
        probs,
        index,
        noise: v,
    })
}

/// Deterministic code selection: `k = argmax r`, ties to the lowest index.
pub fn vq_forward_eval<T: Scalar>(h: &[T], cb: &Codebook<T>) -> Result<(Vec<T>, usize)> {
    let r = vq_logits(h, cb)?;
    let k = argmax_lowest(&r);
    Ok((cb.codes.row(k).to_vec(), k))
}

/// Representation extracted from one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Extracted<T: Scalar = f32> {
    pub repr: Tensor<T>,
    pub codes: Option<Vec<usize>>,
}

/// Eval-mode `h^(ℓ)` or, when `quantized`, `z^(ℓ)` plus code indices.
pub fn extract_features<T: Scalar>(
    x_seq: &Tensor<T>,
    model: &VqApcModel<T>,
    layer: usize,
    quantized: bool,
) -> Result<Extracted<T>> {
    if layer == 0 || layer > model.config.num_layers {
        return Err(Error::config(format!(
            "layer {layer} outside 1..={}",
            model.config.num_layers
        )));
    }
    if quantized && !model.config.is_vq_layer(layer) {
        return Err(Error::config(format!("layer {layer} has no VQ layer to extract codes from")));
    }
    let mut trace = apc_forward(x_seq, model, &mut Mode::Eval)?;
    if quantized {
        Ok(Extracted {
            repr: trace.quantized.remove(&layer).expect("vq layer present"),
            codes: trace.codes.remove(&layer),
        })
    } else {
        Ok(Extracted {
            repr: trace.hidden.swap_remove(layer - 1),
            codes: None,
        })
    }
}
