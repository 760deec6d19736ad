use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Learning rates outside this range are rejected.
pub const LR_RANGE: (f64, f64) = (1e-6, 1e-2);

/// Bias-corrected Adam moments for a list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Tensor<f64>>,
    pub v: Vec<Tensor<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
    pub step: u64,
}

impl OptimizerState {
    /// Zero moments shaped like `params`.
    pub fn new(params: &[Tensor<f64>], lr: f64) -> Result<Self> {
        check_lr(lr)?;
        Ok(Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            lr,
            step: 0,
        })
    }

    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        check_lr(lr)?;
        self.lr = lr;
        Ok(())
    }
}

fn check_lr(lr: f64) -> Result<()> {
    // tolerate rounding from repeated decay at the floor
    let (lo, hi) = LR_RANGE;
    if !(lr >= lo * (1.0 - 1e-12) && lr <= hi * (1.0 + 1e-12)) {
        return Err(Error::config(format!("learning rate {lr} outside [{lo}, {hi}]")));
    }
    Ok(())
}

/// One Adam update. A non-finite gradient aborts the step before anything
/// is modified.
pub fn adam_step(params: &mut [Tensor<f64>], grads: &[Tensor<f64>], state: &mut OptimizerState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::contract(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::contract(format!("adam: shape mismatch in tensor {i}")));
        }
        if !g.is_finite() {
            return Err(Error::numerical(format!("adam: non-finite gradient in tensor {i}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.eps, state.lr);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Shape;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::filled(Shape::new(1, 2, 2), 0.3)];
        let before = p.clone();
        let mut st = OptimizerState::new(&p, 1e-3).unwrap();
        adam_step(&mut p, &[Tensor::zeros(Shape::new(1, 2, 2))], &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_is_lr_sized() {
        let mut p = vec![Tensor::scalar(0.0)];
        let mut st = OptimizerState::new(&p, 1e-3).unwrap();
        adam_step(&mut p, &[Tensor::scalar(1.0)], &mut st).unwrap();
        let expected = -1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((p[0].item() - expected).abs() < 1e-18);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut st = OptimizerState::new(&p, 1e-3).unwrap();
        let err = adam_step(&mut p, &[Tensor::scalar(f64::NAN)], &mut st);
        assert!(matches!(err, Err(Error::Numerical(_))));
        assert_eq!(st.step, 0);
        assert_eq!(p[0].item(), 1.0);
    }

    #[test]
    fn learning_rate_bounds() {
        let p = vec![Tensor::scalar(0.0)];
        assert!(OptimizerState::new(&p, 1e-7).is_err());
        assert!(OptimizerState::new(&p, 0.1).is_err());
        assert!(OptimizerState::new(&p, 1e-2).is_ok());
    }
}
