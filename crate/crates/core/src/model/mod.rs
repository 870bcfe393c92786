//! The VQ-APC network: stacked unidirectional GRU layers, optional Gumbel-Softmax
//! vector-quantization layers between them, and a linear head that predicts the
//! frame `shift` steps ahead.

mod checkpoint;
mod forward;
mod noise;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader};
pub use forward::{
    apc_forward, apc_loss, apc_loss_normalized, argmax_lowest, extract_features, forward_tape, gru_forward,
    vq_forward_eval, vq_forward_train, vq_logits, BoundModel, Extracted, ForwardTrace, Mode, TapeTrace,
    VqSample,
};
pub use noise::{gumbel_from_uniform, FrozenNoise, GumbelSampler, NoiseSource, UNIFORM_CLAMP};

/// Architecture hyperparameters. Layer indices are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub vq_layers: Vec<usize>,
    pub codebook_size: usize,
    pub code_dim: usize,
    /// Prediction offset `n` in frames.
    pub shift: usize,
    /// Gumbel-Softmax temperature, fixed for the whole run.
    pub tau: f32,
}

impl Default for ModelConfig {
    /// Full-scale configuration: 80-d input, 3×512 GRU, VQ after layer 3, 128 codes, n = 5, τ = 0.1.
    fn default() -> Self {
        Self {
            input_dim: 80,
            num_layers: 3,
            hidden_dim: 512,
            vq_layers: vec![3],
            codebook_size: 128,
            code_dim: 512,
            shift: 5,
            tau: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.num_layers == 0 {
            return Err(Error::config("input_dim, hidden_dim and num_layers must be >= 1"));
        }
        for (i, &l) in self.vq_layers.iter().enumerate() {
            if l == 0 || l > self.num_layers {
                return Err(Error::config(format!(
                    "vq layer {l} outside 1..={}",
                    self.num_layers
                )));
            }
            if i > 0 && self.vq_layers[i - 1] >= l {
                return Err(Error::config("vq_layers must be strictly increasing"));
            }
        }
        if !self.vq_layers.is_empty() {
            if self.codebook_size < 2 {
                return Err(Error::config("codebook_size must be >= 2"));
            }
            if self.code_dim != self.hidden_dim {
                return Err(Error::config(format!(
                    "code_dim ({}) must equal hidden_dim ({})",
                    self.code_dim, self.hidden_dim
                )));
            }
        }
        if self.shift == 0 {
            return Err(Error::config("shift must be >= 1"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::config(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    pub fn is_vq_layer(&self, layer: usize) -> bool {
        self.vq_layers.contains(&layer)
    }

    fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 1 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }
}

/// One GRU layer. Gate columns are laid out `[update | reset | candidate]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams<T: Scalar = f32> {
    /// `Din × 3H`
    pub w_input: Tensor<T>,
    /// `H × 3H`
    pub w_hidden: Tensor<T>,
    /// `3H`
    pub bias: Tensor<T>,
}

impl<T: Scalar> GruParams<T> {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w_input: Tensor::zeros(&[input_dim, 3 * hidden]),
            w_hidden: Tensor::zeros(&[hidden, 3 * hidden]),
            bias: Tensor::zeros(&[3 * hidden]),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hidden.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.rows()
    }
}

/// Code vectors plus the linear map from hidden state to code logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook<T: Scalar = f32> {
    /// `V × E`, row `i` is code `i`.
    pub codes: Tensor<T>,
    /// `H × V`
    pub projection: Tensor<T>,
    /// `V`
    pub bias: Tensor<T>,
}

impl<T: Scalar> Codebook<T> {
    pub fn zeros(hidden: usize, size: usize, code_dim: usize) -> Self {
        Self {
            codes: Tensor::zeros(&[size, code_dim]),
            projection: Tensor::zeros(&[hidden, size]),
            bias: Tensor::zeros(&[size]),
        }
    }

    pub fn size(&self) -> usize {
        self.codes.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VqApcModel<T: Scalar = f32> {
    pub config: ModelConfig,
    pub layers: Vec<GruParams<T>>,
    /// Keyed by 1-based layer index.
    pub quantizers: BTreeMap<usize, Codebook<T>>,
    /// `H × D`
    pub head_weight: Tensor<T>,
    /// `D`
    pub head_bias: Tensor<T>,
}

impl<T: Scalar> VqApcModel<T> {
    /// All-zero parameters; mostly useful for tests that set weights by hand.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        Ok(Self {
            config: config.clone(),
            layers: (1..=config.num_layers)
                .map(|l| GruParams::zeros(config.layer_input_dim(l), h))
                .collect(),
            quantizers: config
                .vq_layers
                .iter()
                .map(|&l| (l, Codebook::zeros(h, config.codebook_size, config.code_dim)))
                .collect(),
            head_weight: Tensor::zeros(&[h, config.input_dim]),
            head_bias: Tensor::zeros(&[config.input_dim]),
        })
    }

    /// Weights uniform in ±1/√H (codebooks and projections included), biases zero.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let bound = 1.0 / (config.hidden_dim as f64).sqrt();
        let mut fill = |t: &mut Tensor<T>| {
            for v in t.data_mut() {
                *v = T::from_f64_lossy(rng.random_range(-bound..bound));
            }
        };
        for layer in &mut model.layers {
            fill(&mut layer.w_input);
            fill(&mut layer.w_hidden);
        }
        for cb in model.quantizers.values_mut() {
            fill(&mut cb.codes);
            fill(&mut cb.projection);
        }
        fill(&mut model.head_weight);
        Ok(model)
    }

    /// Parameter names in the fixed order used by checkpoints and optimizers.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in 1..=self.layers.len() {
            for p in ["w_input", "w_hidden", "bias"] {
                names.push(format!("gru.{l}.{p}"));
            }
        }
        for l in self.quantizers.keys() {
            for p in ["codes", "projection", "bias"] {
                names.push(format!("vq.{l}.{p}"));
            }
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend([&layer.w_input, &layer.w_hidden, &layer.bias]);
        }
        for cb in self.quantizers.values() {
            out.extend([&cb.codes, &cb.projection, &cb.bias]);
        }
        out.extend([&self.head_weight, &self.head_bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.extend([&mut layer.w_input, &mut layer.w_hidden, &mut layer.bias]);
        }
        for cb in self.quantizers.values_mut() {
            out.extend([&mut cb.codes, &mut cb.projection, &mut cb.bias]);
        }
        out.extend([&mut self.head_weight, &mut self.head_bias]);
        out
    }

    /// Replaces every parameter from `tensors`, in [`Self::params`] order.
    pub fn set_params(&mut self, tensors: Vec<Tensor<T>>) -> Result<()> {
        let mut slots = self.params_mut();
        if slots.len() != tensors.len() {
            return Err(Error::shape(format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (slot, t) in slots.iter_mut().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::shape(format!(
                    "parameter shape {:?} vs stored {:?}",
                    slot.shape(),
                    t.shape()
                )));
            }
            **slot = t;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> VqApcModel<U> {
        let mut out = VqApcModel::<U>::zeros(&self.config).expect("validated config");
        out.set_params(self.params().into_iter().map(Tensor::cast).collect())
            .expect("same layout");
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            input_dim: 4,
            num_layers: 3,
            hidden_dim: 6,
            vq_layers: vec![3],
            codebook_size: 5,
            code_dim: 6,
            shift: 2,
            tau: 0.1,
        }
    }

    #[test]
    fn config_validation() {
        assert!(small().validate().is_ok());
        for bad in [
            ModelConfig { vq_layers: vec![4], ..small() },
            ModelConfig { vq_layers: vec![0], ..small() },
            ModelConfig { vq_layers: vec![2, 2], ..small() },
            ModelConfig { codebook_size: 1, ..small() },
            ModelConfig { code_dim: 5, ..small() },
            ModelConfig { shift: 0, ..small() },
            ModelConfig { tau: 0.0, ..small() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
        assert!(ModelConfig { vq_layers: vec![], codebook_size: 0, ..small() }.validate().is_ok());
    }

    #[test]
    fn init_ranges_and_layout() {
        let cfg = small();
        let m = VqApcModel::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(m.layers[0].w_input.shape(), &[4, 18]);
        assert_eq!(m.layers[1].w_input.shape(), &[6, 18]);
        assert_eq!(m.quantizers[&3].codes.shape(), &[5, 6]);
        assert_eq!(m.head_weight.shape(), &[6, 4]);
        let bound = 1.0 / 6f32.sqrt();
        assert!(m.layers[2].w_hidden.data().iter().all(|v| v.abs() <= bound));
        assert!(m.layers[0].bias.data().iter().all(|&v| v == 0.0));
        assert_eq!(m.param_names().len(), m.params().len());
        assert_eq!(m.cast::<f64>().cast::<f32>(), m);
    }
}
