use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One stage of a feedforward network.
///
/// Convolutions use valid padding; max-pooling uses non-overlapping windows
/// and drops any remainder rows/columns. Dense layers flatten whatever shape
/// they receive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv {
        kernel: usize,
        channels: usize,
        stride: usize,
    },
    Relu,
    MaxPool {
        window: usize,
    },
    Softmax,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn has_parameters(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv { .. })
    }

    /// Per-sample output shape for the given per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                let flat: usize = input.iter().product();
                if flat != inputs {
                    return Err(Error::config(format!(
                        "dense layer expects {inputs} inputs but receives shape {input:?}"
                    )));
                }
                if outputs == 0 {
                    return Err(Error::config("dense layer with zero outputs"));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv {
                kernel,
                channels,
                stride,
            } => {
                let [_, h, w] = spatial(input, "conv")?;
                if kernel == 0 || channels == 0 || stride == 0 {
                    return Err(Error::config(
                        "conv kernel, channels and stride must be positive",
                    ));
                }
                if h < kernel || w < kernel {
                    return Err(Error::config(format!(
                        "conv kernel {kernel} larger than input {h}x{w}"
                    )));
                }
                Ok(vec![
                    channels,
                    (h - kernel) / stride + 1,
                    (w - kernel) / stride + 1,
                ])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool { window } => {
                let [c, h, w] = spatial(input, "maxpool")?;
                if window == 0 || h < window || w < window {
                    return Err(Error::config(format!(
                        "maxpool window {window} does not fit input {h}x{w}"
                    )));
                }
                Ok(vec![c, h / window, w / window])
            }
            LayerSpec::Softmax => {
                if input.len() != 1 {
                    return Err(Error::config(format!(
                        "softmax expects a flat input, got {input:?}"
                    )));
                }
                Ok(input.to_vec())
            }
        }
    }

    /// Parameter tensor shapes (weights then bias), empty for stateless layers.
    pub fn parameter_shapes(&self, input: &[usize]) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            LayerSpec::Conv {
                kernel, channels, ..
            } => vec![vec![channels, input[0], kernel, kernel], vec![channels]],
            _ => Vec::new(),
        }
    }

    /// (fan_in, fan_out) used by the Glorot-uniform initializer.
    pub(crate) fn fans(&self, input: &[usize]) -> (usize, usize) {
        match *self {
            LayerSpec::Dense { inputs, outputs } => (inputs, outputs),
            LayerSpec::Conv {
                kernel, channels, ..
            } => (input[0] * kernel * kernel, channels * kernel * kernel),
            _ => (0, 0),
        }
    }
}

fn spatial(input: &[usize], what: &str) -> Result<[usize; 3]> {
    match input {
        &[c, h, w] => Ok([c, h, w]),
        _ => Err(Error::config(format!(
            "{what} expects a (channels, height, width) input, got {input:?}"
        ))),
    }
}
