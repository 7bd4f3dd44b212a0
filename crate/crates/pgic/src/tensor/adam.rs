//! Named trainable parameter with Adam state.

use super::{Tensor, TensorError, TensorResult};

/// A trainable tensor plus its optimizer moments.
#[derive(Clone, Debug)]
pub struct Parameter {
    /// Unique name; doubles as the canonical serialization key.
    pub name: String,
    pub value: Tensor,
    pub adam_m: Vec<f32>,
    pub adam_v: Vec<f32>,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let n = value.numel();
        Parameter {
            name: name.into(),
            value,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step_count: 0,
        }
    }

    /// One bias-corrected Adam update.
    pub fn adam_step(
        &mut self,
        grad: &[f32],
        lr: f32,
        beta1: f32,
        beta2: f32,
        eps: f32,
    ) -> TensorResult<()> {
        if grad.len() != self.value.numel()
            || self.adam_m.len() != grad.len()
            || self.adam_v.len() != grad.len()
        {
            return Err(TensorError::OptimizerState {
                param: self.name.clone(),
            });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(TensorError::NonFiniteGrad {
                param: self.name.clone(),
            });
        }
        self.step_count += 1;
        let bc1 = 1.0 - beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - beta2.powi(self.step_count as i32);
        let data = self.value.data_mut();
        for i in 0..grad.len() {
            let g = grad[i];
            self.adam_m[i] = beta1 * self.adam_m[i] + (1.0 - beta1) * g;
            self.adam_v[i] = beta2 * self.adam_v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.adam_m[i] / bc1;
            let v_hat = self.adam_v[i] / bc2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Apply one Adam step to each parameter with its matching gradient.
pub fn adam_step(
    params: &mut [Parameter],
    grads: &[&[f32]],
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
) -> TensorResult<()> {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    for (p, g) in params.iter_mut().zip(grads) {
        p.adam_step(g, lr, beta1, beta2, eps)?;
    }
    Ok(())
}
