use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::LayerSpec;
use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::tensor::TensorBuffer;

/// Architecture plus everything needed to initialize it reproducibly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    /// Per-sample input shape, `[channels, height, width]` or `[features]`.
    pub input_shape: Vec<usize>,
    /// Output width: category count for classifiers (including any extra
    /// categories), target width for regressors.
    pub categories: usize,
    pub init_seed: u64,
}

impl NetworkSpec {
    /// Validates the layer chain and returns the per-sample shape entering
    /// each layer, followed by the network output shape.
    pub fn resolve_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.layers.is_empty() {
            return Err(Error::config("network has no layers"));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::config(format!(
                "invalid input shape {:?}",
                self.input_shape
            )));
        }
        let softmaxes = self
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Softmax))
            .count();
        if softmaxes > 1 || (softmaxes == 1 && !self.is_classifier()) {
            return Err(Error::config(
                "a classifier needs exactly one softmax and it must be the last layer",
            ));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(&shapes[i])
                .map_err(|e| Error::config(format!("layer {i} ({}): {e}", layer.kind())))?;
            shapes.push(next);
        }
        let out = shapes.last().unwrap();
        if out.as_slice() != [self.categories] {
            return Err(Error::config(format!(
                "network output shape {out:?} does not match {} categories",
                self.categories
            )));
        }
        Ok(shapes)
    }

    pub fn is_classifier(&self) -> bool {
        matches!(self.layers.last(), Some(LayerSpec::Softmax))
    }
}

/// Learnable tensors of a network in layer order (weights then bias for each
/// dense or conv layer). Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    tensors: Vec<TensorBuffer>,
}

impl Parameters {
    pub fn new(tensors: Vec<TensorBuffer>) -> Self {
        Self { tensors }
    }

    pub fn zeros_like(other: &Parameters) -> Self {
        Self {
            tensors: other
                .tensors
                .iter()
                .map(|t| TensorBuffer::zeros(t.shape().to_vec()))
                .collect(),
        }
    }

    pub fn tensors(&self) -> &[TensorBuffer] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [TensorBuffer] {
        &mut self.tensors
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors.iter().map(|t| t.shape().to_vec()).collect()
    }

    pub fn value_count(&self) -> usize {
        self.tensors.iter().map(TensorBuffer::len).sum()
    }

    pub(crate) fn check_same_shapes(&self, other: &Parameters) -> Result<()> {
        let (a, b) = (self.shapes(), other.shapes());
        if a != b {
            return Err(Error::Shape {
                expected: a.into_iter().flatten().collect(),
                actual: b.into_iter().flatten().collect(),
            });
        }
        Ok(())
    }
}

/// Supervision for a batch.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    /// Category index per sample (softmax cross-entropy).
    Classes(&'a [usize]),
    /// Row-major real targets, one row per sample (mean squared error).
    Values(&'a [f64]),
}

/// Activations kept from a forward pass for the backward pass.
struct ForwardTrace {
    /// `acts[l]` is the input of layer `l`; the last entry is the output.
    acts: Vec<Array2<f64>>,
    /// Flat argmax positions for max-pool layers, empty elsewhere.
    pool_argmax: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    shapes: Vec<Vec<usize>>,
    /// Index of the first parameter tensor of each layer.
    slots: Vec<Option<usize>>,
    params: Parameters,
}

impl Network {
    /// Builds the network with Glorot-uniform weights drawn from
    /// `spec.init_seed` and zero biases.
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let shapes = spec.resolve_shapes()?;
        let mut rng = rng_from(spec.init_seed, &[0x1417]);
        let mut tensors = Vec::new();
        for (i, layer) in spec.layers.iter().enumerate() {
            let pshapes = layer.parameter_shapes(&shapes[i]);
            if pshapes.is_empty() {
                continue;
            }
            let (fan_in, fan_out) = layer.fans(&shapes[i]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n: usize = pshapes[0].iter().product();
            let weights = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
            tensors.push(TensorBuffer::from_raw(pshapes[0].clone(), weights));
            tensors.push(TensorBuffer::zeros(pshapes[1].clone()));
        }
        Self::assemble(spec, shapes, Parameters::new(tensors))
    }

    /// Builds the network around existing parameters.
    pub fn with_parameters(spec: NetworkSpec, params: Parameters) -> Result<Self> {
        let shapes = spec.resolve_shapes()?;
        let expected: Vec<Vec<usize>> = spec
            .layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.parameter_shapes(&shapes[i]))
            .collect();
        if expected != params.shapes() {
            return Err(Error::Shape {
                expected: expected.into_iter().flatten().collect(),
                actual: params.shapes().into_iter().flatten().collect(),
            });
        }
        Self::assemble(spec, shapes, params)
    }

    fn assemble(spec: NetworkSpec, shapes: Vec<Vec<usize>>, params: Parameters) -> Result<Self> {
        let mut slots = Vec::with_capacity(spec.layers.len());
        let mut next = 0;
        for layer in &spec.layers {
            if layer.has_parameters() {
                slots.push(Some(next));
                next += 2;
            } else {
                slots.push(None);
            }
        }
        Ok(Self {
            spec,
            shapes,
            slots,
            params,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn input_len(&self) -> usize {
        self.shapes[0].iter().product()
    }

    pub fn outputs(&self) -> usize {
        self.spec.categories
    }

    pub fn is_classifier(&self) -> bool {
        self.spec.is_classifier()
    }

    /// Probabilities (classifier) or raw outputs (regressor), shape `[n, outputs]`.
    pub fn forward(&self, batch: &TensorBuffer) -> Result<TensorBuffer> {
        let x = self.batch_matrix(batch)?;
        let trace = self.run_forward(x);
        self.check_finite(&trace)?;
        let out = trace.acts.into_iter().last().unwrap();
        let n = out.nrows();
        Ok(TensorBuffer::from_raw(
            vec![n, self.outputs()],
            out.into_raw_vec_and_offset().0,
        ))
    }

    /// Mean loss over the batch.
    pub fn loss(&self, batch: &TensorBuffer, targets: Targets<'_>) -> Result<f64> {
        let x = self.batch_matrix(batch)?;
        self.check_targets(x.nrows(), targets)?;
        let trace = self.run_forward(x);
        self.check_finite(&trace)?;
        let (loss, _) = self.loss_head(&trace, targets);
        self.check_loss(loss)?;
        Ok(loss)
    }

    /// Mean loss over the batch and its gradient for every parameter tensor.
    pub fn loss_and_gradients(
        &self,
        batch: &TensorBuffer,
        targets: Targets<'_>,
    ) -> Result<(f64, Parameters)> {
        let (loss, grads, _) = self.backprop(batch, targets, true, false)?;
        Ok((loss, grads.expect("parameter gradients requested")))
    }

    /// Gradient of the mean batch loss with respect to the input batch.
    pub fn input_gradient(&self, batch: &TensorBuffer, targets: Targets<'_>) -> Result<TensorBuffer> {
        let (_, _, dx) = self.backprop(batch, targets, false, true)?;
        let dx = dx.expect("input gradient requested");
        Ok(TensorBuffer::from_raw(
            batch.shape().to_vec(),
            dx.into_raw_vec_and_offset().0,
        ))
    }

    /// Argmax category (lowest index on ties) and its probability per sample.
    pub fn predict(&self, batch: &TensorBuffer) -> Result<Vec<(usize, f64)>> {
        let probs = self.forward(batch)?;
        Ok((0..probs.rows()).map(|i| argmax(probs.row(i))).collect())
    }

    fn batch_matrix(&self, batch: &TensorBuffer) -> Result<Array2<f64>> {
        let shape = batch.shape();
        if shape.is_empty() || shape[1..] != self.shapes[0][..] {
            let mut expected = vec![shape.first().copied().unwrap_or(0)];
            expected.extend_from_slice(&self.shapes[0]);
            return Err(Error::Shape {
                expected,
                actual: shape.to_vec(),
            });
        }
        Ok(Array2::from_shape_vec((shape[0], self.input_len()), batch.values().to_vec())
            .expect("shape checked"))
    }

    fn check_targets(&self, n: usize, targets: Targets<'_>) -> Result<()> {
        match targets {
            Targets::Classes(labels) => {
                if !self.is_classifier() {
                    return Err(Error::config("category targets given to a regressor"));
                }
                if labels.len() != n {
                    return Err(Error::Shape {
                        expected: vec![n],
                        actual: vec![labels.len()],
                    });
                }
                if let Some(&bad) = labels.iter().find(|&&l| l >= self.outputs()) {
                    return Err(Error::config(format!(
                        "label {bad} outside {} categories",
                        self.outputs()
                    )));
                }
            }
            Targets::Values(values) => {
                if self.is_classifier() {
                    return Err(Error::config("real-valued targets given to a classifier"));
                }
                if values.len() != n * self.outputs() {
                    return Err(Error::Shape {
                        expected: vec![n, self.outputs()],
                        actual: vec![values.len()],
                    });
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config("non-finite regression target"));
                }
            }
        }
        Ok(())
    }

    fn check_finite(&self, trace: &ForwardTrace) -> Result<()> {
        for (l, act) in trace.acts.iter().enumerate().skip(1) {
            if act.iter().any(|v| !v.is_finite()) {
                return Err(self.numerical(l - 1));
            }
        }
        Ok(())
    }

    fn check_loss(&self, loss: f64) -> Result<()> {
        if loss.is_finite() {
            Ok(())
        } else {
            Err(self.numerical(self.spec.layers.len() - 1))
        }
    }

    fn numerical(&self, layer: usize) -> Error {
        Error::Numerical {
            layer,
            kind: self.spec.layers[layer].kind().to_string(),
        }
    }

    fn run_forward(&self, x: Array2<f64>) -> ForwardTrace {
        let mut acts = Vec::with_capacity(self.spec.layers.len() + 1);
        let mut pool_argmax = Vec::with_capacity(self.spec.layers.len());
        acts.push(x);
        for (l, layer) in self.spec.layers.iter().enumerate() {
            let input = &acts[l];
            let mut argmax_positions = Vec::new();
            let out = match *layer {
                LayerSpec::Dense { inputs, outputs } => {
                    let (w, b) = self.layer_params(l);
                    let w = ArrayView2::from_shape((outputs, inputs), w).unwrap();
                    let mut y = standard(input.dot(&w.t()));
                    y += &ndarray::ArrayView1::from(b);
                    y
                }
                LayerSpec::Conv {
                    kernel,
                    channels,
                    stride,
                } => {
                    let (w, b) = self.layer_params(l);
                    let geom = ConvGeometry::new(&self.shapes[l], kernel, channels, stride);
                    geom.forward(input, w, b)
                }
                LayerSpec::Relu => input.mapv(|v| if v > 0.0 { v } else { 0.0 }),
                LayerSpec::MaxPool { window } => {
                    let (y, idx) = maxpool_forward(input, &self.shapes[l], window);
                    argmax_positions = idx;
                    y
                }
                LayerSpec::Softmax => {
                    let mut y = input.clone();
                    for mut row in y.rows_mut() {
                        softmax_in_place(row.as_slice_mut().unwrap());
                    }
                    y
                }
            };
            acts.push(out);
            pool_argmax.push(argmax_positions);
        }
        ForwardTrace { acts, pool_argmax }
    }

    fn layer_params(&self, layer: usize) -> (&[f64], &[f64]) {
        let slot = self.slots[layer].expect("layer has parameters");
        let t = self.params.tensors();
        (t[slot].values(), t[slot + 1].values())
    }

    /// Loss value and its gradient with respect to the input of the first
    /// layer that backpropagation has to visit (softmax is folded into the
    /// cross-entropy). Returns that layer index as well.
    fn loss_head(&self, trace: &ForwardTrace, targets: Targets<'_>) -> (f64, (usize, Array2<f64>)) {
        let l_count = self.spec.layers.len();
        let out = trace.acts.last().unwrap();
        let n = out.nrows();
        match targets {
            Targets::Classes(labels) => {
                let logits = &trace.acts[l_count - 1];
                let mut grad = out.clone();
                let mut loss = 0.0;
                for (i, &label) in labels.iter().enumerate() {
                    let row = logits.row(i);
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
                    loss += lse - row[label];
                    grad[[i, label]] -= 1.0;
                }
                grad /= n as f64;
                (loss / n as f64, (l_count - 1, grad))
            }
            Targets::Values(values) => {
                let y = ArrayView2::from_shape((n, self.outputs()), values).unwrap();
                let diff = out - &y;
                let m = (n * self.outputs()) as f64;
                let loss = diff.iter().map(|d| d * d).sum::<f64>() / m;
                (loss, (l_count, diff * (2.0 / m)))
            }
        }
    }

    fn backprop(
        &self,
        batch: &TensorBuffer,
        targets: Targets<'_>,
        want_params: bool,
        want_input: bool,
    ) -> Result<(f64, Option<Parameters>, Option<Array2<f64>>)> {
        let x = self.batch_matrix(batch)?;
        self.check_targets(x.nrows(), targets)?;
        let trace = self.run_forward(x);
        self.check_finite(&trace)?;
        let (loss, (top, mut grad)) = self.loss_head(&trace, targets);
        self.check_loss(loss)?;

        let mut grads = want_params.then(|| Parameters::zeros_like(&self.params));
        for l in (0..top).rev() {
            let input = &trace.acts[l];
            let need_dx = l > 0 || want_input;
            grad = match self.spec.layers[l] {
                LayerSpec::Dense { inputs, outputs } => {
                    let (w, _) = self.layer_params(l);
                    let w = ArrayView2::from_shape((outputs, inputs), w).unwrap();
                    if let Some(g) = grads.as_mut() {
                        let slot = self.slots[l].unwrap();
                        let dw = standard(grad.t().dot(input));
                        let db: Array1<f64> = grad.sum_axis(Axis(0));
                        let t = g.tensors_mut();
                        t[slot].values_mut().copy_from_slice(dw.as_slice().unwrap());
                        t[slot + 1].values_mut().copy_from_slice(db.as_slice().unwrap());
                    }
                    if need_dx {
                        standard(grad.dot(&w))
                    } else {
                        Array2::zeros((0, 0))
                    }
                }
                LayerSpec::Conv {
                    kernel,
                    channels,
                    stride,
                } => {
                    let (w, _) = self.layer_params(l);
                    let geom = ConvGeometry::new(&self.shapes[l], kernel, channels, stride);
                    let (dx, dw, db) = geom.backward(input, w, &grad, need_dx);
                    if let Some(g) = grads.as_mut() {
                        let slot = self.slots[l].unwrap();
                        let t = g.tensors_mut();
                        t[slot].values_mut().copy_from_slice(&dw);
                        t[slot + 1].values_mut().copy_from_slice(&db);
                    }
                    dx
                }
                LayerSpec::Relu => {
                    ndarray::Zip::from(&mut grad)
                        .and(input)
                        .for_each(|g, &v| {
                            if v <= 0.0 {
                                *g = 0.0;
                            }
                        });
                    grad
                }
                LayerSpec::MaxPool { .. } => {
                    let mut dx = Array2::zeros(input.raw_dim());
                    for (i, (pos, g)) in trace.pool_argmax[l]
                        .chunks(grad.ncols())
                        .zip(grad.rows())
                        .enumerate()
                    {
                        for (&p, &gv) in pos.iter().zip(g.iter()) {
                            dx[[i, p]] += gv;
                        }
                    }
                    dx
                }
                LayerSpec::Softmax => unreachable!("softmax is folded into the loss"),
            };
            if let Some(g) = &grads {
                let bad = self.slots[l]
                    .map(|s| !g.tensors()[s].all_finite() || !g.tensors()[s + 1].all_finite())
                    .unwrap_or(false);
                if bad {
                    return Err(self.numerical(l));
                }
            }
        }
        Ok((loss, grads, want_input.then_some(grad)))
    }
}

/// Index and value of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    (best, row[best])
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-major copy when a matrix product came back in another layout.
fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn maxpool_forward(input: &Array2<f64>, shape: &[usize], window: usize) -> (Array2<f64>, Vec<usize>) {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (oh, ow) = (h / window, w / window);
    let n = input.nrows();
    let mut out = Array2::zeros((n, c * oh * ow));
    let mut positions = Vec::with_capacity(n * c * oh * ow);
    for (row, mut out_row) in input.rows().into_iter().zip(out.rows_mut()) {
        let row = row.as_slice().unwrap();
        let out_row = out_row.as_slice_mut().unwrap();
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = ch * h * w + oy * window * w + ox * window;
                    for ky in 0..window {
                        for kx in 0..window {
                            let p = ch * h * w + (oy * window + ky) * w + ox * window + kx;
                            if row[p] > row[best] {
                                best = p;
                            }
                        }
                    }
                    out_row[ch * oh * ow + oy * ow + ox] = row[best];
                    positions.push(best);
                }
            }
        }
    }
    (out, positions)
}

/// Valid-padding convolution lowered to matrix products via im2col.
struct ConvGeometry {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
    kernel: usize,
    stride: usize,
}

impl ConvGeometry {
    fn new(input: &[usize], kernel: usize, channels: usize, stride: usize) -> Self {
        Self {
            in_c: input[0],
            in_h: input[1],
            in_w: input[2],
            out_c: channels,
            out_h: (input[1] - kernel) / stride + 1,
            out_w: (input[2] - kernel) / stride + 1,
            kernel,
            stride,
        }
    }

    fn patch_len(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn im2col(&self, x: &[f64]) -> Array2<f64> {
        let k = self.kernel;
        let mut cols = Array2::zeros((self.positions(), self.patch_len()));
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let mut col = cols.row_mut(oy * self.out_w + ox);
                let col = col.as_slice_mut().unwrap();
                for c in 0..self.in_c {
                    for ky in 0..k {
                        let src = c * self.in_h * self.in_w
                            + (oy * self.stride + ky) * self.in_w
                            + ox * self.stride;
                        let dst = c * k * k + ky * k;
                        col[dst..dst + k].copy_from_slice(&x[src..src + k]);
                    }
                }
            }
        }
        cols
    }

    fn forward(&self, input: &Array2<f64>, w: &[f64], b: &[f64]) -> Array2<f64> {
        let wm = ArrayView2::from_shape((self.out_c, self.patch_len()), w).unwrap();
        let p = self.positions();
        let mut out = Array2::zeros((input.nrows(), self.out_c * p));
        for (row, mut out_row) in input.rows().into_iter().zip(out.rows_mut()) {
            let cols = self.im2col(row.as_slice().unwrap());
            // (out_c, positions), already channel-planar.
            let y = wm.dot(&cols.t());
            let out_row = out_row.as_slice_mut().unwrap();
            for (o, y_row) in y.rows().into_iter().enumerate() {
                for (dst, &v) in out_row[o * p..(o + 1) * p].iter_mut().zip(y_row.iter()) {
                    *dst = v + b[o];
                }
            }
        }
        out
    }

    fn backward(
        &self,
        input: &Array2<f64>,
        w: &[f64],
        grad: &Array2<f64>,
        need_dx: bool,
    ) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
        let wm = ArrayView2::from_shape((self.out_c, self.patch_len()), w).unwrap();
        let p = self.positions();
        let k = self.kernel;
        let mut dw = Array2::<f64>::zeros((self.out_c, self.patch_len()));
        let mut db = vec![0.0; self.out_c];
        let mut dx = if need_dx {
            Array2::zeros(input.raw_dim())
        } else {
            Array2::zeros((0, 0))
        };
        for (i, (row, g)) in input.rows().into_iter().zip(grad.rows()).enumerate() {
            let cols = self.im2col(row.as_slice().unwrap());
            let g = ArrayView2::from_shape((self.out_c, p), g.to_slice().unwrap()).unwrap();
            dw += &g.dot(&cols);
            for (o, g_row) in g.rows().into_iter().enumerate() {
                db[o] += g_row.sum();
            }
            if need_dx {
                let dcols = standard(g.t().dot(&wm));
                let mut dx_row = dx.row_mut(i);
                let dx_row = dx_row.as_slice_mut().unwrap();
                for oy in 0..self.out_h {
                    for ox in 0..self.out_w {
                        let col = dcols.row(oy * self.out_w + ox);
                        let col = col.as_slice().unwrap();
                        for c in 0..self.in_c {
                            for ky in 0..k {
                                let dst = c * self.in_h * self.in_w
                                    + (oy * self.stride + ky) * self.in_w
                                    + ox * self.stride;
                                let src = c * k * k + ky * k;
                                for kx in 0..k {
                                    dx_row[dst + kx] += col[src + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
        (dx, dw.into_raw_vec_and_offset().0, db)
    }
}
