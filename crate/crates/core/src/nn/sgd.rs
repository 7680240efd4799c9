use crate::error::{Error, Result};

use super::network::Parameters;

/// Gradient descent with classical momentum:
/// `v <- momentum * v - learning_rate * g`, `p <- p + v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    learning_rate: f64,
    momentum: f64,
    velocity: Option<Parameters>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate.is_finite() && learning_rate >= 0.0) {
            return Err(Error::config(format!(
                "learning rate must be finite and non-negative, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(Self {
            learning_rate,
            momentum,
            velocity: None,
        })
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Parameters) -> Result<()> {
        params.check_same_shapes(grads)?;
        if self.learning_rate == 0.0 {
            return Ok(());
        }
        let velocity = self
            .velocity
            .get_or_insert_with(|| Parameters::zeros_like(params));
        velocity.check_same_shapes(params)?;
        for ((p, g), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads.tensors())
            .zip(velocity.tensors_mut())
        {
            for ((p, &g), v) in p
                .values_mut()
                .iter_mut()
                .zip(g.values())
                .zip(v.values_mut())
            {
                *v = self.momentum * *v - self.learning_rate * g;
                *p += *v;
            }
        }
        Ok(())
    }
}
