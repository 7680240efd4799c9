//! Fast-gradient-sign perturbations and robustness evaluation.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{argmax, Network, SampleSource, Targets};
use crate::tensor::TensorBuffer;

const ATTACK_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// Max-norm budget in normalized pixel units.
    pub epsilon: f64,
}

impl AttackConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        let cfg = Self { epsilon };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// `clip(x + eps * sign(grad), 0, 1)` with `sign(0) = 0`.
///
/// The perturbed value is nudged toward `x` by ulps if rounding would put it
/// more than `eps` away, so `|x' - x| <= eps` holds exactly in floating point.
pub fn perturb(x: f64, grad: f64, epsilon: f64) -> f64 {
    if grad == 0.0 || epsilon == 0.0 {
        return x;
    }
    let mut y = if grad > 0.0 { x + epsilon } else { x - epsilon };
    while (y - x).abs() > epsilon {
        y = if grad > 0.0 { y.next_down() } else { y.next_up() };
    }
    y.clamp(0.0, 1.0)
}

/// Adversarial copy of `batch` against the classifier loss at `labels`.
pub fn fgsm(net: &Network, batch: &TensorBuffer, labels: &[usize], cfg: &AttackConfig) -> Result<TensorBuffer> {
    cfg.validate()?;
    if batch.values().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::config("attack input must be normalized to [0, 1]"));
    }
    if cfg.epsilon == 0.0 {
        return Ok(batch.clone());
    }
    let grad = net.input_gradient(batch, Targets::Classes(labels))?;
    let values = batch
        .values()
        .iter()
        .zip(grad.values())
        .map(|(&x, &g)| perturb(x, g, cfg.epsilon))
        .collect();
    TensorBuffer::new(batch.shape().to_vec(), values)
}

/// `(A_leg, A_adv)`: accuracy on clean samples and on their FGSM copies.
/// A prediction of any category outside the dataset's labels counts as wrong.
pub fn eval_robustness(net: &Network, test: &LabeledDataset, cfg: &AttackConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    if test.is_empty() {
        return Err(Error::config("robustness evaluation needs a non-empty test set"));
    }
    let mut clean_hits = 0usize;
    let mut adv_hits = 0usize;
    let all: Vec<usize> = (0..test.len()).collect();
    for chunk in all.chunks(ATTACK_BATCH) {
        let batch = test.gather(chunk);
        let labels: Vec<usize> = chunk.iter().map(|&i| test.labels()[i]).collect();
        let clean = net.forward(&batch)?;
        let adv_batch = fgsm(net, &batch, &labels, cfg)?;
        let adv = net.forward(&adv_batch)?;
        for (i, &label) in labels.iter().enumerate() {
            clean_hits += usize::from(argmax(clean.row(i)).0 == label);
            adv_hits += usize::from(argmax(adv.row(i)).0 == label);
        }
    }
    let n = test.len() as f64;
    Ok((clean_hits as f64 / n, adv_hits as f64 / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, NetworkSpec, Parameters};

    /// Two-category linear classifier on two inputs with logits (w.x, -w.x).
    fn linear(w: [f64; 2]) -> Network {
        let spec = NetworkSpec {
            layers: vec![LayerSpec::Dense { inputs: 2, outputs: 2 }, LayerSpec::Softmax],
            input_shape: vec![2],
            categories: 2,
            init_seed: 0,
        };
        let params = Parameters::new(vec![
            TensorBuffer::new(vec![2, 2], vec![w[0], w[1], -w[0], -w[1]]).unwrap(),
            TensorBuffer::zeros(vec![2]),
        ]);
        Network::with_parameters(spec, params).unwrap()
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let net = linear([1.0, -2.0]);
        let x = TensorBuffer::new(vec![1, 2], vec![0.3, 0.7]).unwrap();
        assert_eq!(fgsm(&net, &x, &[0], &AttackConfig::new(0.0).unwrap()).unwrap(), x);
    }

    #[test]
    fn zero_input_moves_up_by_epsilon() {
        // Label 1 loss grows with w.x, so both input gradients are positive.
        let net = linear([1.0, 1.0]);
        let x = TensorBuffer::zeros(vec![1, 2]);
        let adv = fgsm(&net, &x, &[1], &AttackConfig::new(0.1).unwrap()).unwrap();
        assert_eq!(adv.values(), &[0.1, 0.1]);
    }

    #[test]
    fn attack_increases_loss_on_linear_model() {
        let net = linear([0.8, -0.5]);
        let x = TensorBuffer::new(vec![1, 2], vec![0.4, 0.6]).unwrap();
        for label in [0, 1] {
            let before = net.loss(&x, Targets::Classes(&[label])).unwrap();
            let adv = fgsm(&net, &x, &[label], &AttackConfig::new(0.01).unwrap()).unwrap();
            let after = net.loss(&adv, Targets::Classes(&[label])).unwrap();
            assert!(after > before, "label {label}: {after} <= {before}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(AttackConfig::new(-0.1).is_err());
        assert!(AttackConfig::new(1.5).is_err());
        let net = linear([1.0, 1.0]);
        let x = TensorBuffer::new(vec![1, 2], vec![1.2, 0.0]).unwrap();
        assert!(fgsm(&net, &x, &[0], &AttackConfig { epsilon: 0.1 }).is_err());
    }

    #[test]
    fn perturbation_bound_is_exact() {
        for &(x, e) in &[(0.1, 0.05), (0.7, 0.1), (0.3, 0.3), (0.123456789, 0.01)] {
            for g in [1.0, -1.0] {
                let y = perturb(x, g, e);
                assert!((y - x).abs() <= e);
                assert!((0.0..=1.0).contains(&y));
            }
        }
        assert_eq!(perturb(0.5, 0.0, 0.3).to_bits(), 0.5f64.to_bits());
    }
}
