use natspace::nn::profiles::{fast_mlp, mlp_classifier, regressor};
use natspace::nn::{checkpoint, train, LayerSpec, Network, NetworkSpec, Parameters, Targets, TrainConfig};
use natspace::rng::rng_from;
use natspace::{Error, TensorBuffer};
use rand::Rng;

const H: f64 = 1e-3;
const REL_TOL: f64 = 1e-4;

fn t(shape: &[usize], v: &[f64]) -> TensorBuffer {
    TensorBuffer::new(shape.to_vec(), v.to_vec()).unwrap()
}

fn random_batch(shape: &[usize], seed: u64) -> TensorBuffer {
    let mut rng = rng_from(seed, &[1]);
    let n = shape.iter().product();
    t(shape, &(0..n).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<_>>())
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central-difference oracle over every parameter entry.
fn check_parameter_gradients(net: &Network, x: &TensorBuffer, targets: Targets<'_>) -> f64 {
    let (_, grads) = net.loss_and_gradients(x, targets).unwrap();
    let mut worst: f64 = 0.0;
    for (ti, tensor) in net.params().tensors().iter().enumerate() {
        for j in 0..tensor.len() {
            let eval = |delta: f64| {
                let mut p = net.params().clone();
                p.tensors_mut()[ti].values_mut()[j] += delta;
                let probe = Network::with_parameters(net.spec().clone(), p).unwrap();
                probe.loss(x, targets).unwrap()
            };
            let numeric = (eval(H) - eval(-H)) / (2.0 * H);
            let analytic = grads.tensors()[ti].values()[j];
            worst = worst.max(rel_err(analytic, numeric));
        }
    }
    worst
}

fn check_input_gradient(net: &Network, x: &TensorBuffer, targets: Targets<'_>) -> f64 {
    let g = net.input_gradient(x, targets).unwrap();
    assert_eq!(g.shape(), x.shape());
    let mut worst: f64 = 0.0;
    for j in 0..x.len() {
        let eval = |delta: f64| {
            let mut v = x.values().to_vec();
            v[j] += delta;
            net.loss(&t(x.shape(), &v), targets).unwrap()
        };
        let numeric = (eval(H) - eval(-H)) / (2.0 * H);
        worst = worst.max(rel_err(g.values()[j], numeric));
    }
    worst
}

fn spec(layers: Vec<LayerSpec>, input: &[usize], categories: usize, seed: u64) -> NetworkSpec {
    NetworkSpec {
        layers,
        input_shape: input.to_vec(),
        categories,
        init_seed: seed,
    }
}

#[test]
fn finite_differences_dense_relu_softmax() {
    let net = Network::new(mlp_classifier(&[6], &[5, 4], 3, 11).unwrap()).unwrap();
    let x = random_batch(&[4, 6], 2);
    let labels = [0, 2, 1, 2];
    assert!(check_parameter_gradients(&net, &x, Targets::Classes(&labels)) < REL_TOL);
    assert!(check_input_gradient(&net, &x, Targets::Classes(&labels)) < REL_TOL);
}

#[test]
fn finite_differences_conv_pool() {
    let layers = vec![
        LayerSpec::Conv { kernel: 3, channels: 3, stride: 1 },
        LayerSpec::Relu,
        LayerSpec::MaxPool { window: 2 },
        LayerSpec::Conv { kernel: 2, channels: 2, stride: 2 },
        LayerSpec::Dense { inputs: 2 * 1 * 1, outputs: 3 },
        LayerSpec::Softmax,
    ];
    let net = Network::new(spec(layers, &[2, 7, 7], 3, 5)).unwrap();
    let x = random_batch(&[3, 2, 7, 7], 9);
    let labels = [1, 0, 2];
    assert!(check_parameter_gradients(&net, &x, Targets::Classes(&labels)) < REL_TOL);
    assert!(check_input_gradient(&net, &x, Targets::Classes(&labels)) < REL_TOL);
}

#[test]
fn finite_differences_strided_conv_regressor() {
    let layers = vec![
        LayerSpec::Conv { kernel: 3, channels: 2, stride: 2 },
        LayerSpec::Relu,
        LayerSpec::Dense { inputs: 2 * 3 * 3, outputs: 2 },
    ];
    let net = Network::new(spec(layers, &[1, 7, 7], 2, 3)).unwrap();
    let x = random_batch(&[2, 1, 7, 7], 4);
    let y = [0.3, -0.2, 1.0, 0.5];
    assert!(check_parameter_gradients(&net, &x, Targets::Values(&y)) < REL_TOL);
    assert!(check_input_gradient(&net, &x, Targets::Values(&y)) < REL_TOL);
}

#[test]
fn zero_weights_give_uniform_probabilities() {
    let s = spec(vec![LayerSpec::Dense { inputs: 3, outputs: 10 }, LayerSpec::Softmax], &[3], 10, 0);
    let params = Parameters::new(vec![TensorBuffer::zeros(vec![10, 3]), TensorBuffer::zeros(vec![10])]);
    let net = Network::with_parameters(s, params).unwrap();
    let p = net.forward(&random_batch(&[2, 3], 0)).unwrap();
    assert!(p.values().iter().all(|&v| (v - 0.1).abs() < 1e-15));
    let loss = net.loss(&random_batch(&[1, 3], 1), Targets::Classes(&[4])).unwrap();
    assert!((loss - 10f64.ln()).abs() < 1e-12);
    assert!((loss - 2.302585).abs() < 1e-6);
}

fn scalar_linear(weight: f64) -> Network {
    let s = spec(vec![LayerSpec::Dense { inputs: 1, outputs: 1 }], &[1], 1, 0);
    let params = Parameters::new(vec![t(&[1, 1], &[weight]), t(&[1], &[0.0])]);
    Network::with_parameters(s, params).unwrap()
}

#[test]
fn identity_regressor() {
    let out = scalar_linear(1.0).forward(&t(&[1, 1], &[0.3])).unwrap();
    assert_eq!(out.values(), &[0.3]);
}

#[test]
fn hand_computed_two_layer_mlp() {
    let s = mlp_classifier(&[2], &[2], 2, 0).unwrap();
    let params = Parameters::new(vec![
        t(&[2, 2], &[1.0, 2.0, -1.0, 0.5]),
        t(&[2], &[0.5, 0.1]),
        t(&[2, 2], &[1.0, -1.0, 0.5, 2.0]),
        t(&[2], &[0.0, 0.25]),
    ]);
    let net = Network::with_parameters(s, params).unwrap();
    // hidden = relu(1.5, -0.9) = (1.5, 0); logits = (1.5, 1.0)
    let p = net.forward(&t(&[1, 2], &[1.0, 0.0])).unwrap();
    assert!((p.values()[0] - 0.6224593312018545).abs() < 1e-15);
    assert!((p.values()[1] - 0.3775406687981454).abs() < 1e-15);
}

#[test]
fn exact_regressor_has_zero_loss_and_gradients() {
    let net = scalar_linear(2.0);
    let x = t(&[3, 1], &[0.1, 0.2, -0.4]);
    let (loss, grads) = net.loss_and_gradients(&x, Targets::Values(&[0.2, 0.4, -0.8])).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.tensors().iter().all(|g| g.values().iter().all(|&v| v == 0.0)));
    assert_eq!(grads.shapes(), net.params().shapes());
}

#[test]
fn analytic_input_gradient() {
    let net = scalar_linear(2.0);
    let g = net.input_gradient(&t(&[1, 1], &[1.0]), Targets::Values(&[0.0])).unwrap();
    assert!((g.values()[0] - 8.0).abs() < 1e-12);

    // Second input has a zero weight column, so it cannot affect the loss.
    let s = spec(vec![LayerSpec::Dense { inputs: 2, outputs: 2 }, LayerSpec::Softmax], &[2], 2, 0);
    let params = Parameters::new(vec![t(&[2, 2], &[1.0, 0.0, -1.0, 0.0]), t(&[2], &[0.0, 0.0])]);
    let net = Network::with_parameters(s, params).unwrap();
    let g = net.input_gradient(&t(&[1, 2], &[0.3, 0.6]), Targets::Classes(&[1])).unwrap();
    assert!(g.values()[0] != 0.0);
    assert_eq!(g.values()[1], 0.0);
}

#[test]
fn errors_are_reported() {
    let net = Network::new(fast_mlp(&[1, 2, 2], 3, 0).unwrap()).unwrap();
    let bad = random_batch(&[2, 5], 0);
    assert!(matches!(net.forward(&bad), Err(Error::Shape { .. })));
    let x = random_batch(&[2, 1, 2, 2], 0);
    assert!(net.loss(&x, Targets::Classes(&[0, 3])).is_err());
    assert!(net.loss(&x, Targets::Values(&[0.0, 0.0])).is_err());

    let huge = scalar_linear(1e308);
    let err = huge.loss(&t(&[1, 1], &[10.0]), Targets::Values(&[0.0])).unwrap_err();
    assert!(matches!(err, Error::Numerical { layer: 0, ref kind } if kind == "dense"), "{err}");
    let overflow_loss = scalar_linear(1e200);
    let err = overflow_loss.loss(&t(&[1, 1], &[1.0]), Targets::Values(&[0.0])).unwrap_err();
    assert!(matches!(err, Error::Numerical { layer: 0, .. }));

    let two_softmax = spec(
        vec![LayerSpec::Softmax, LayerSpec::Dense { inputs: 2, outputs: 2 }, LayerSpec::Softmax],
        &[2],
        2,
        0,
    );
    assert!(Network::new(two_softmax).is_err());
    let wrong_width = spec(vec![LayerSpec::Dense { inputs: 2, outputs: 3 }, LayerSpec::Softmax], &[2], 2, 0);
    assert!(Network::new(wrong_width).is_err());
}

#[test]
fn softmax_rows_are_distributions() {
    let net = Network::new(mlp_classifier(&[4], &[8], 5, 3).unwrap()).unwrap();
    let mut rng = rng_from(0, &[]);
    let x = t(&[20, 4], &(0..80).map(|_| rng.random_range(-50.0..50.0)).collect::<Vec<_>>());
    let p = net.forward(&x).unwrap();
    for i in 0..20 {
        let row = p.row(i);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

/// Two Gaussian-free clusters separated along the first coordinate.
fn separable(n: usize, seed: u64) -> (TensorBuffer, Vec<usize>) {
    let mut rng = rng_from(seed, &[77]);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..n {
        let label = i % 2;
        let center = if label == 0 { 0.25 } else { 0.75 };
        xs.push(center + rng.random_range(-0.2..0.2));
        xs.push(rng.random_range(0.0..1.0));
        ys.push(label);
    }
    (t(&[n, 2], &xs), ys)
}

#[test]
fn training_reduces_loss_on_separable_data() {
    for seed in 0..5 {
        let (x, y) = separable(200, seed);
        let mut net = Network::new(mlp_classifier(&[2], &[8], 2, seed).unwrap()).unwrap();
        let before = net.loss(&x, Targets::Classes(&y)).unwrap();
        let cfg = TrainConfig { learning_rate: 0.05, momentum: 0.9, batch_size: 16, epochs: 10, seed };
        train(&mut net, &x, Targets::Classes(&y), &cfg, |_, _| Ok(())).unwrap();
        let after = net.loss(&x, Targets::Classes(&y)).unwrap();
        assert!(after < before, "seed {seed}: {after} >= {before}");
    }
}

#[test]
fn training_is_bitwise_deterministic() {
    let (x, y) = separable(100, 1);
    let run = || {
        let mut net = Network::new(mlp_classifier(&[2], &[6], 2, 42).unwrap()).unwrap();
        let cfg = TrainConfig { learning_rate: 0.1, momentum: 0.9, batch_size: 7, epochs: 4, seed: 9 };
        let mut epochs = Vec::new();
        train(&mut net, &x, Targets::Classes(&y), &cfg, |e, _| {
            epochs.push(e);
            Ok(())
        })
        .unwrap();
        assert_eq!(epochs, vec![0, 1, 2, 3]);
        let bits: Vec<u64> = net
            .params()
            .tensors()
            .iter()
            .flat_map(|t| t.values().iter().map(|v| v.to_bits()))
            .collect();
        bits
    };
    assert_eq!(run(), run());
}

#[test]
fn regressor_fits_a_line() {
    let xs: Vec<f64> = (0..64).map(|i| i as f64 / 63.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 0.5 * x + 0.1).collect();
    let x = t(&[64, 1], &xs);
    let mut net = Network::new(regressor(&[8], 1).unwrap()).unwrap();
    let cfg = TrainConfig { learning_rate: 0.05, momentum: 0.9, batch_size: 8, epochs: 200, seed: 1 };
    let summary = train(&mut net, &x, Targets::Values(&ys), &cfg, |_, _| Ok(())).unwrap();
    assert!(summary.epoch_losses.last().unwrap() < &1e-4);
}

#[test]
fn checkpoint_round_trip() {
    let net = Network::new(fast_mlp(&[3, 4, 4], 11, 8).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("params.bin");
    checkpoint::save(net.params(), &path).unwrap();
    let restored = Network::with_parameters(net.spec().clone(), checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(restored.params(), net.params());
    let other = fast_mlp(&[3, 4, 4], 10, 8).unwrap();
    assert!(Network::with_parameters(other, checkpoint::load(&path).unwrap()).is_err());
}

#[test]
fn single_output_regressor_batches() {
    // A one-column output makes some matrix products come back column-major.
    let net = Network::new(regressor(&[4, 4], 13).unwrap()).unwrap();
    // zero biases make every unit linear in x; keep x away from 0 so no ReLU
    // input lands within the probe step of its kink
    let x = random_batch(&[8, 1], 3);
    let x = t(&[8, 1], &x.values().iter().map(|v| v + 1.0).collect::<Vec<_>>());
    let y: Vec<f64> = x.values().iter().map(|v| (3.0 * v).sin()).collect();
    let pe = check_parameter_gradients(&net, &x, Targets::Values(&y));
    let ie = check_input_gradient(&net, &x, Targets::Values(&y));
    assert!(pe < REL_TOL && ie < REL_TOL, "{pe} {ie}");
}
