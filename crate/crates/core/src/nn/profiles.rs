//! Named architectures.

use super::layer::LayerSpec;
use super::network::NetworkSpec;
use crate::error::{Error, Result};

/// conv 5x5x32, relu, pool 2, conv 5x5x64, relu, pool 2, dense 64, relu,
/// dense C, softmax.
pub fn cifar_small(input_shape: &[usize], categories: usize, init_seed: u64) -> Result<NetworkSpec> {
    let mut layers = vec![
        LayerSpec::Conv {
            kernel: 5,
            channels: 32,
            stride: 1,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool { window: 2 },
        LayerSpec::Conv {
            kernel: 5,
            channels: 64,
            stride: 1,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool { window: 2 },
    ];
    let mut shape = input_shape.to_vec();
    for l in &layers {
        shape = l.output_shape(&shape)?;
    }
    let flat = shape.iter().product();
    layers.extend([
        LayerSpec::Dense {
            inputs: flat,
            outputs: 64,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            inputs: 64,
            outputs: categories,
        },
        LayerSpec::Softmax,
    ]);
    finish(layers, input_shape, categories, init_seed)
}

/// flatten, dense 128, relu, dense C, softmax.
pub fn fast_mlp(input_shape: &[usize], categories: usize, init_seed: u64) -> Result<NetworkSpec> {
    mlp_classifier(input_shape, &[128], categories, init_seed)
}

pub fn mlp_classifier(
    input_shape: &[usize],
    hidden: &[usize],
    categories: usize,
    init_seed: u64,
) -> Result<NetworkSpec> {
    let mut layers = dense_stack(input_shape.iter().product(), hidden, categories);
    layers.push(LayerSpec::Softmax);
    finish(layers, input_shape, categories, init_seed)
}

/// Scalar-in, scalar-out ReLU regressor trained with mean squared error.
pub fn regressor(hidden: &[usize], init_seed: u64) -> Result<NetworkSpec> {
    finish(dense_stack(1, hidden, 1), &[1], 1, init_seed)
}

fn dense_stack(inputs: usize, hidden: &[usize], outputs: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let mut prev = inputs;
    for &h in hidden {
        layers.push(LayerSpec::Dense {
            inputs: prev,
            outputs: h,
        });
        layers.push(LayerSpec::Relu);
        prev = h;
    }
    layers.push(LayerSpec::Dense {
        inputs: prev,
        outputs,
    });
    layers
}

fn finish(
    layers: Vec<LayerSpec>,
    input_shape: &[usize],
    categories: usize,
    init_seed: u64,
) -> Result<NetworkSpec> {
    if categories == 0 {
        return Err(Error::config("network needs at least one output"));
    }
    let spec = NetworkSpec {
        layers,
        input_shape: input_shape.to_vec(),
        categories,
        init_seed,
    };
    spec.resolve_shapes()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_compose() {
        let s = cifar_small(&[3, 32, 32], 11, 0).unwrap();
        assert!(s.is_classifier());
        assert_eq!(s.resolve_shapes().unwrap().last().unwrap(), &vec![11]);
        assert!(cifar_small(&[3, 8, 8], 10, 0).is_err());
        let m = fast_mlp(&[3, 8, 8], 10, 0).unwrap();
        assert_eq!(m.layers.len(), 4);
        let r = regressor(&[16, 16], 0).unwrap();
        assert!(!r.is_classifier());
    }
}
