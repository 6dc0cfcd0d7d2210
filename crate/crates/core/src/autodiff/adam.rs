use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub const LEARNING_RATE: f64 = 0.0005;

    pub fn new(lr: f64) -> Self {
        Self {
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(Self::LEARNING_RATE)
    }
}

/// One optimizer step over `params`, each of which must carry a gradient.
/// Moment buffers are allocated on the first call and must keep matching
/// the parameter lengths afterwards.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut AdamState) -> Result<()> {
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(Error::OptimizerState(format!(
            "tracking {} parameters, got {}",
            state.m.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.grad().is_none() {
            return Err(Error::OptimizerState(format!("parameter {i} has no gradient")));
        }
        if state.m[i].len() != p.len() {
            return Err(Error::OptimizerState(format!(
                "parameter {i} changed length from {} to {}",
                state.m[i].len(),
                p.len()
            )));
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let grad = p.grad().expect("checked above").to_vec();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, x) in p.values_mut().iter_mut().enumerate() {
            let g = grad[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *x -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64], grad: &[f64]) -> Tensor {
        let mut t = Tensor::from_slice(&[values.len()], values).unwrap();
        t.set_grad(grad.to_vec()).unwrap();
        t
    }

    #[test]
    fn defaults() {
        let s = AdamState::default();
        assert_eq!(s.lr, 0.0005);
        assert_eq!((s.beta1, s.beta2, s.epsilon), (0.9, 0.999, 1e-8));
    }

    #[test]
    fn zero_gradient_fresh_state_is_identity() {
        let mut p = param(&[0.3, -1.0], &[0.0, 0.0]);
        let mut s = AdamState::default();
        adam_step(&mut [&mut p], &mut s).unwrap();
        assert_eq!(p.values(), &[0.3, -1.0]);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = param(&[1.0, 1.0, 1.0], &[3.0, -0.02, 250.0]);
        let mut s = AdamState::default();
        adam_step(&mut [&mut p], &mut s).unwrap();
        let expect = [1.0 - 0.0005, 1.0 + 0.0005, 1.0 - 0.0005];
        for (a, e) in p.values().iter().zip(expect) {
            assert!((a - e).abs() < 1e-9, "{a} vs {e}");
        }
        assert!(s.v.iter().flatten().all(|&v| v >= 0.0));
    }

    #[test]
    fn missing_gradient_is_rejected() {
        let mut p = Tensor::zeros(vec![3]);
        let err = adam_step(&mut [&mut p], &mut AdamState::default()).unwrap_err();
        assert!(matches!(err, Error::OptimizerState(_)));
    }
}
