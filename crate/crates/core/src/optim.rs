//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{RclError, Result};
use crate::model::ModelParams;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments, shaped like the parameters they track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Matrix> = params.tensors().iter().map(|t| Matrix::zeros(t.rows, t.cols)).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// Updates `tensors` in place. Every gradient is checked for finiteness
/// before anything is modified.
pub fn adam_update(
    tensors: &mut [&mut Matrix],
    names: &[String],
    grads: &[Matrix],
    state: &mut AdamState,
    cfg: AdamConfig,
) -> Result<()> {
    assert_eq!(tensors.len(), grads.len());
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(RclError::NonFiniteGradient(names.get(i).cloned().unwrap_or_else(|| format!("#{i}"))));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in tensors.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
        for (((x, &gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *x -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// One Adam step on the model, re-zeroing the padding embedding afterwards.
pub fn adam_step(params: &mut ModelParams, grads: &[Matrix], state: &mut AdamState, cfg: AdamConfig) -> Result<()> {
    let names = params.names();
    adam_update(&mut params.tensors_mut(), &names, grads, state, cfg)?;
    params.zero_padding_row();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Matrix::scalar(0.5);
        let mut state = AdamState {
            m: vec![Matrix::scalar(0.0)],
            v: vec![Matrix::scalar(0.0)],
            step: 0,
        };
        let cfg = AdamConfig::default();
        adam_update(&mut [&mut p], &["w".into()], &[Matrix::scalar(1.0)], &mut state, cfg).unwrap();
        let want = 0.5 - cfg.lr / (1.0 + cfg.eps);
        assert!((p.data[0] - want).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = Matrix::from_vec(1, 3, vec![1.0, -2.0, 3.0]);
        let before = p.clone();
        let mut state = AdamState {
            m: vec![Matrix::zeros(1, 3)],
            v: vec![Matrix::zeros(1, 3)],
            step: 0,
        };
        for _ in 0..3 {
            adam_update(&mut [&mut p], &["w".into()], &[Matrix::zeros(1, 3)], &mut state, AdamConfig::default()).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = Matrix::scalar(0.0);
        let mut q = Matrix::scalar(0.0);
        let mut state = AdamState {
            m: vec![Matrix::scalar(0.0); 2],
            v: vec![Matrix::scalar(0.0); 2],
            step: 0,
        };
        let err = adam_update(
            &mut [&mut p, &mut q],
            &["a".into(), "b".into()],
            &[Matrix::scalar(1.0), Matrix::scalar(f64::NAN)],
            &mut state,
            AdamConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, RclError::NonFiniteGradient(ref n) if n == "b"));
        assert_eq!(p.data[0], 0.0);
        assert_eq!(state.step, 0);
    }
}
