//! Checkpoint layout: one line of compact JSON ([`CheckpointHeader`]) ending in
//! `\n`, followed by every parameter as an `FMAT` record, concatenated in the
//! order listed in `header.tensors`:
//!
//! ```text
//! gru.<l>.w_input, gru.<l>.w_hidden, gru.<l>.bias     for l = 1..L
//! vq.<l>.codes, vq.<l>.projection, vq.<l>.bias         for l in vq_layers, ascending
//! head.weight, head.bias
//! ```

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, VqApcModel};
use crate::error::{Error, Result};
use crate::numerics::{read_fmat, write_fmat};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub epoch: usize,
    pub loss_history: Vec<f64>,
    pub rng_seed: u64,
    pub tensors: Vec<String>,
}

pub fn write_checkpoint<W: Write>(
    w: &mut W,
    model: &VqApcModel<f32>,
    epoch: usize,
    loss_history: &[f64],
    rng_seed: u64,
) -> std::io::Result<()> {
    let header = CheckpointHeader {
        config: model.config.clone(),
        epoch,
        loss_history: loss_history.to_vec(),
        rng_seed,
        tensors: model.param_names(),
    };
    let line = serde_json::to_string(&header).map_err(std::io::Error::other)?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    for p in model.params() {
        write_fmat(w, p)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(r: &mut R) -> Result<(VqApcModel<f32>, CheckpointHeader)> {
    let mut line = String::new();
    r.read_line(&mut line)
        .map_err(|e| Error::Data(format!("checkpoint header: {e}")))?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
    let mut model = VqApcModel::<f32>::zeros(&header.config)?;
    if model.param_names() != header.tensors {
        return Err(Error::Data("checkpoint tensor list does not match its config".into()));
    }
    let tensors = (0..header.tensors.len())
        .map(|_| read_fmat(r))
        .collect::<Result<Vec<_>>>()?;
    model.set_params(tensors)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::Data(e.to_string()))? != 0 {
        return Err(Error::Data("trailing bytes after checkpoint tensors".into()));
    }
    Ok((model, header))
}

pub fn save_checkpoint(
    path: &Path,
    model: &VqApcModel<f32>,
    epoch: usize,
    loss_history: &[f64],
    rng_seed: u64,
) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model, epoch, loss_history, rng_seed).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(VqApcModel<f32>, CheckpointHeader)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{apc_forward, Mode};
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_outputs() {
        let cfg = ModelConfig {
            input_dim: 3,
            num_layers: 2,
            hidden_dim: 4,
            vq_layers: vec![1, 2],
            codebook_size: 3,
            code_dim: 4,
            shift: 1,
            tau: 0.1,
        };
        let m = VqApcModel::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m, 7, &[1.5, 0.25], 42).unwrap();
        let (back, header) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!((header.epoch, header.rng_seed), (7, 42));
        assert_eq!(header.loss_history, vec![1.5, 0.25]);
        let x = Tensor::new(vec![4, 3], (0..12).map(|i| i as f32 / 10.0).collect()).unwrap();
        assert_eq!(
            apc_forward(&x, &m, &mut Mode::Eval).unwrap(),
            apc_forward(&x, &back, &mut Mode::Eval).unwrap()
        );

        let mut truncated = buf.clone();
        truncated.truncate(buf.len() - 3);
        assert!(read_checkpoint(&mut truncated.as_slice()).is_err());
        buf.push(0);
        assert!(read_checkpoint(&mut buf.as_slice()).is_err());
    }
}
