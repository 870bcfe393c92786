use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Moment buffers and hyperparameters for Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Vec<f32>>,
    pub second_moment: Vec<Vec<f32>>,
    pub step: u64,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl AdamState {
    /// Zeroed moments shaped like `params`, with beta1=0.9, beta2=0.999, eps=1e-8.
    pub fn new(params: &[&Tensor<f32>]) -> Self {
        Self {
            first_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update applied in place to `params`.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState,
    lr: f32,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::config(format!(
            "adam: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.first_moment[i].len() != p.len() {
            return Err(Error::config(format!(
                "adam: parameter {i} shape {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }

    state.step += 1;
    let (b1, b2) = (f64::from(state.beta1), f64::from(state.beta2));
    let t = state.step as i32;
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let lr = f64::from(lr);
    let eps = f64::from(state.epsilon);

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for ((w, &gr), (mj, vj)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            let gr = gr.to_f64_lossy();
            let m_new = b1 * f64::from(*mj) + (1.0 - b1) * gr;
            let v_new = b2 * f64::from(*vj) + (1.0 - b2) * gr * gr;
            *mj = m_new as f32;
            *vj = v_new as f32;
            let update = lr * (m_new / bc1) / ((v_new / bc2).sqrt() + eps);
            *w = T::from_f64_lossy(w.to_f64_lossy() - update);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f32) -> Tensor<f32> {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = scalar_param(0.0);
        let g = scalar_param(0.0);
        let mut st = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &[g], &mut st, 1e-3).unwrap();
        assert_eq!(p.data(), &[0.0]);
        assert_eq!(st.first_moment[0], vec![0.0]);
        assert_eq!(st.second_moment[0], vec![0.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_by_hand() {
        // m = 0.1, v = 0.001, m̂ = 1, v̂ = 1 => Δ = lr / (1 + eps).
        let mut p = scalar_param(1.0);
        let mut st = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &[scalar_param(1.0)], &mut st, 1e-3).unwrap();
        let expected = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((f64::from(p.data()[0]) - expected).abs() < 1e-7);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn constant_gradient_descends() {
        let mut p = scalar_param(1.0);
        let mut st = AdamState::new(&[&p]);
        let mut prev = 1.0;
        for _ in 0..2 {
            adam_step(&mut [&mut p], &[scalar_param(1.0)], &mut st, 1e-3).unwrap();
            assert!(p.data()[0] < prev);
            prev = p.data()[0];
        }
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = Tensor::new(vec![3], vec![0.3f32, -1.0, 2.5]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&[&p]);
        let g = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        adam_step(&mut [&mut p], &[g], &mut st, 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let mut p = scalar_param(1.0);
        let mut st = AdamState::new(&[&p]);
        let g = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let err = adam_step(&mut [&mut p], &[g], &mut st, 1e-3).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
