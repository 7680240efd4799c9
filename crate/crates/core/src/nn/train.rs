use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{Network, Targets};
use super::sgd::Sgd;
use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::tensor::TensorBuffer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub epochs: usize,
    /// Drives the mini-batch shuffling order.
    #[serde(default)]
    pub seed: u64,
}

fn default_lr() -> f64 {
    0.01
}
fn default_momentum() -> f64 {
    0.9
}
fn default_batch() -> usize {
    128
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            momentum: default_momentum(),
            batch_size: default_batch(),
            epochs: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(format!(
                "train.learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!(
                "train.momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("train.epochs must be positive"));
        }
        Ok(())
    }
}

/// Anything that can hand out normalized input rows by index.
pub trait SampleSource {
    fn sample_count(&self) -> usize;
    /// Batch of the requested rows, shape `[indices.len(), input shape...]`.
    fn gather(&self, indices: &[usize]) -> TensorBuffer;
}

impl SampleSource for TensorBuffer {
    fn sample_count(&self) -> usize {
        self.rows()
    }

    fn gather(&self, indices: &[usize]) -> TensorBuffer {
        let w = self.row_len();
        let mut values = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape().to_vec();
        shape[0] = indices.len();
        TensorBuffer::from_raw(shape, values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    /// Sample-weighted mean training loss per epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch SGD over `samples`. `on_epoch(epoch, net)` runs after every
/// epoch (0-based) with the updated network.
///
/// The batch order comes only from `cfg.seed`, so identical inputs give
/// bitwise-identical parameters.
pub fn train<S, F>(
    net: &mut Network,
    samples: &S,
    targets: Targets<'_>,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainSummary>
where
    S: SampleSource + ?Sized,
    F: FnMut(usize, &Network) -> Result<()>,
{
    cfg.validate()?;
    let n = samples.sample_count();
    if n == 0 {
        return Err(Error::config("training set is empty"));
    }
    let width = match targets {
        Targets::Classes(l) => {
            check_len(l.len(), n)?;
            1
        }
        Targets::Values(v) => {
            let w = net.outputs();
            check_len(v.len(), n * w)?;
            w
        }
    };
    let mut sgd = Sgd::new(cfg.learning_rate, cfg.momentum)?;
    let mut rng = rng_from(cfg.seed, &[0x5_4ff1e]);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = samples.gather(chunk);
            let (loss, grads) = match targets {
                Targets::Classes(labels) => {
                    let picked: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                    net.loss_and_gradients(&batch, Targets::Classes(&picked))?
                }
                Targets::Values(values) => {
                    let picked: Vec<f64> = chunk
                        .iter()
                        .flat_map(|&i| values[i * width..(i + 1) * width].iter().copied())
                        .collect();
                    net.loss_and_gradients(&batch, Targets::Values(&picked))?
                }
            };
            total += loss * chunk.len() as f64;
            sgd.step(net.params_mut(), &grads)?;
        }
        epoch_losses.push(total / n as f64);
        on_epoch(epoch, net)?;
    }
    Ok(TrainSummary { epoch_losses })
}

fn check_len(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape {
            expected: vec![want],
            actual: vec![got],
        });
    }
    Ok(())
}
