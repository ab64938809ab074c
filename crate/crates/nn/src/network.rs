//! Parameter storage, batched forward pass and backpropagation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gemm::gemm;
use crate::spec::{LayerSpec, NetworkSpec, Shape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }
}

/// Per-layer parameter tensors (`[weight, bias]` for dense and conv layers, empty otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub seed: u64,
    pub layers: Vec<Vec<Tensor>>,
}

impl Weights {
    pub fn zeros_like(&self) -> Self {
        Self {
            seed: self.seed,
            layers: self
                .layers
                .iter()
                .map(|ts| ts.iter().map(|t| Tensor::zeros(t.shape.clone())).collect())
                .collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().flatten().map(|t| t.data.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flatten().flat_map(|t| t.data.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flatten()
            .flat_map(|t| t.data.iter_mut())
    }

    pub fn scale(&mut self, factor: f64) {
        self.iter_mut().for_each(|v| *v *= factor);
    }
}

/// Expected parameter shapes of `layer` given its input shape.
fn parameter_shapes(layer: &LayerSpec, input: Shape) -> Vec<Vec<usize>> {
    match *layer {
        LayerSpec::Dense { units } => vec![vec![input.size(), units], vec![units]],
        LayerSpec::Conv { features, kernel } => vec![
            vec![features, input.channels, kernel, kernel],
            vec![features],
        ],
        _ => Vec::new(),
    }
}

/// Whether a forward pass applies dropout.
pub enum Mode<'a> {
    Inference,
    Training(&'a mut ChaCha8Rng),
}

/// Activations recorded during a forward pass, needed for backpropagation.
pub struct Trace {
    pub batch: usize,
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    pub acts: Vec<Vec<f64>>,
    aux: Vec<Aux>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace holds the input")
    }
}

enum Aux {
    None,
    Mask(Vec<f64>),
    Argmax(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    weights: Weights,
    shapes: Vec<Shape>,
}

impl Network {
    /// Fresh network with fan-in scaled uniform weights and zero biases.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layers
            .iter()
            .zip(&shapes)
            .map(|(layer, &input)| {
                let mut tensors: Vec<Tensor> = parameter_shapes(layer, input)
                    .into_iter()
                    .map(Tensor::zeros)
                    .collect();
                if let Some(w) = tensors.first_mut() {
                    let fan_in = match layer {
                        LayerSpec::Dense { .. } => w.shape[0],
                        _ => w.shape[1..].iter().product(),
                    };
                    let bound = (6.0 / fan_in as f64).sqrt();
                    for v in &mut w.data {
                        *v = rng.random_range(-bound..bound);
                    }
                }
                tensors
            })
            .collect();
        Ok(Self {
            spec,
            weights: Weights { seed, layers },
            shapes,
        })
    }

    /// Pair a spec with existing weights, checking every tensor shape.
    pub fn from_parts(spec: NetworkSpec, weights: Weights) -> Result<Self> {
        let shapes = spec.shapes()?;
        if weights.layers.len() != spec.layers.len() {
            return Err(Error::ShapeMismatch {
                layer: "network".into(),
                expected: format!("{} layers", spec.layers.len()),
                found: format!("{} layers", weights.layers.len()),
            });
        }
        for (i, (layer, tensors)) in spec.layers.iter().zip(&weights.layers).enumerate() {
            let want = parameter_shapes(layer, shapes[i]);
            let got: Vec<Vec<usize>> = tensors.iter().map(|t| t.shape.clone()).collect();
            if want != got {
                return Err(Error::ShapeMismatch {
                    layer: format!("{i} ({})", layer.name()),
                    expected: format!("{want:?}"),
                    found: format!("{got:?}"),
                });
            }
            if let Some(t) = tensors.iter().find(|t| t.data.len() != t.shape.iter().product::<usize>()) {
                return Err(Error::ShapeMismatch {
                    layer: format!("{i} ({})", layer.name()),
                    expected: format!("{} values", t.shape.iter().product::<usize>()),
                    found: format!("{} values", t.data.len()),
                });
            }
            if tensors.iter().flat_map(|t| &t.data).any(|v| !v.is_finite()) {
                return Err(Error::InvalidSpec(format!("layer {i} has non-finite weights")));
            }
        }
        Ok(Self {
            spec,
            weights,
            shapes,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Weights {
        &mut self.weights
    }

    pub fn input_size(&self) -> usize {
        self.shapes[0].size()
    }

    pub fn output_size(&self) -> usize {
        self.shapes.last().expect("shapes non-empty").size()
    }

    /// Inference on a batch laid out as `batch` consecutive samples.
    pub fn forward(&self, input: &[f64], batch: usize) -> Result<Vec<f64>> {
        let mut trace = self.forward_trace(input, batch, Mode::Inference)?;
        Ok(trace.acts.pop().expect("trace holds the input"))
    }

    /// Inference in chunks of `chunk` samples.
    pub fn predict(&self, input: &[f64], chunk: usize) -> Result<Vec<f64>> {
        let d = self.input_size();
        if input.len() % d != 0 {
            return Err(Error::InputSize {
                batch: input.len() / d + 1,
                expected: (input.len() / d + 1) * d,
                found: input.len(),
            });
        }
        let mut out = Vec::with_capacity(input.len() / d * self.output_size());
        for part in input.chunks(chunk.max(1) * d) {
            out.extend(self.forward(part, part.len() / d)?);
        }
        Ok(out)
    }

    pub fn forward_trace(&self, input: &[f64], batch: usize, mut mode: Mode) -> Result<Trace> {
        let d = self.input_size();
        if input.len() != batch * d {
            return Err(Error::InputSize {
                batch,
                expected: batch * d,
                found: input.len(),
            });
        }
        let mut acts = vec![input.to_vec()];
        let mut aux = Vec::with_capacity(self.spec.layers.len());
        for (l, layer) in self.spec.layers.iter().enumerate() {
            let x = &acts[l];
            let (ins, outs) = (self.shapes[l], self.shapes[l + 1]);
            let params = &self.weights.layers[l];
            let (y, a) = match *layer {
                LayerSpec::Dense { units } => {
                    let (w, b) = (&params[0].data, &params[1].data);
                    let mut y = Vec::with_capacity(batch * units);
                    for _ in 0..batch {
                        y.extend_from_slice(b);
                    }
                    gemm(batch, ins.size(), units, 1.0, x, false, w, false, 1.0, &mut y);
                    (y, Aux::None)
                }
                LayerSpec::Conv { kernel, .. } => (
                    conv_forward(x, batch, ins, outs, kernel, &params[0].data, &params[1].data),
                    Aux::None,
                ),
                LayerSpec::MaxPool => {
                    let (y, idx) = pool_forward(x, batch, ins, outs);
                    (y, Aux::Argmax(idx))
                }
                LayerSpec::Relu => (x.iter().map(|&v| v.max(0.0)).collect(), Aux::None),
                LayerSpec::Dropout { rate } => match &mut mode {
                    Mode::Training(rng) if rate > 0.0 => {
                        let keep = 1.0 / (1.0 - rate);
                        let mask: Vec<f64> = (0..x.len())
                            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                            .collect();
                        let y = x.iter().zip(&mask).map(|(v, m)| v * m).collect();
                        (y, Aux::Mask(mask))
                    }
                    _ => (x.clone(), Aux::None),
                },
                LayerSpec::Softmax => (softmax_rows(x, outs.size()), Aux::None),
            };
            acts.push(y);
            aux.push(a);
        }
        Ok(Trace { batch, acts, aux })
    }

    /// Gradients of the loss with respect to every parameter, given the
    /// gradient `grad` with respect to the output of layer `upto - 1`.
    ///
    /// Pass `upto = layers.len()` to start from the network output.
    pub fn backward(&self, trace: &Trace, grad: Vec<f64>, upto: usize) -> Weights {
        let mut grads = self.weights.zeros_like();
        let batch = trace.batch;
        let mut g = grad;
        for l in (0..upto).rev() {
            let layer = &self.spec.layers[l];
            let (ins, outs) = (self.shapes[l], self.shapes[l + 1]);
            let x = &trace.acts[l];
            let y = &trace.acts[l + 1];
            g = match (*layer, &trace.aux[l]) {
                (LayerSpec::Dense { units }, _) => {
                    let w = &self.weights.layers[l][0].data;
                    let (gw, gb) = grads.layers[l].split_at_mut(1);
                    gemm(ins.size(), batch, units, 1.0, x, true, &g, false, 0.0, &mut gw[0].data);
                    for row in g.chunks(units) {
                        for (b, v) in gb[0].data.iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                    if l == 0 {
                        break;
                    }
                    let mut dx = vec![0.0; batch * ins.size()];
                    gemm(batch, units, ins.size(), 1.0, &g, false, w, true, 0.0, &mut dx);
                    dx
                }
                (LayerSpec::Conv { kernel, .. }, _) => {
                    let w = &self.weights.layers[l][0].data;
                    let (gw, gb) = grads.layers[l].split_at_mut(1);
                    conv_backward(
                        x,
                        &g,
                        batch,
                        ins,
                        outs,
                        kernel,
                        w,
                        &mut gw[0].data,
                        &mut gb[0].data,
                        l > 0,
                    )
                }
                (LayerSpec::MaxPool, Aux::Argmax(idx)) => {
                    let mut dx = vec![0.0; batch * ins.size()];
                    for (&i, v) in idx.iter().zip(&g) {
                        dx[i as usize] += v;
                    }
                    dx
                }
                (LayerSpec::Relu, _) => x
                    .iter()
                    .zip(&g)
                    .map(|(&xi, &gi)| if xi > 0.0 { gi } else { 0.0 })
                    .collect(),
                (LayerSpec::Dropout { .. }, Aux::Mask(mask)) => {
                    g.iter().zip(mask).map(|(a, b)| a * b).collect()
                }
                (LayerSpec::Dropout { .. }, _) => g,
                (LayerSpec::Softmax, _) => {
                    let n = outs.size();
                    let mut dx = vec![0.0; g.len()];
                    for ((yr, gr), dr) in y.chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, &yi), &gi) in dr.iter_mut().zip(yr).zip(gr) {
                            *d = yi * (gi - dot);
                        }
                    }
                    dx
                }
                (LayerSpec::MaxPool, _) => unreachable!("pooling always records argmax"),
            };
        }
        grads
    }
}

fn softmax_rows(x: &[f64], n: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (xr, yr) in x.chunks(n).zip(y.chunks_mut(n)) {
        let m = xr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (o, &v) in yr.iter_mut().zip(xr) {
            *o = (v - m).exp();
            s += *o;
        }
        for o in yr.iter_mut() {
            *o /= s;
        }
    }
    y
}

/// Unfold one `c×h×w` sample into `(c·k·k) × (h·w)` patches with zero padding.
fn im2col(x: &[f64], s: Shape, k: usize, cols: &mut [f64]) {
    let pad = (k / 2) as isize;
    let (h, w) = (s.height as isize, s.width as isize);
    let hw = s.height * s.width;
    for c in 0..s.channels {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * hw..][..hw];
                let (dy, dx) = (ky as isize - pad, kx as isize - pad);
                for oy in 0..h {
                    let iy = oy + dy;
                    let out = &mut row[(oy * w) as usize..((oy + 1) * w) as usize];
                    if iy < 0 || iy >= h {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[(iy * w) as usize..((iy + 1) * w) as usize];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = ox as isize + dx;
                        *o = if ix < 0 || ix >= w { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate patch gradients back onto the sample.
fn col2im(cols: &[f64], s: Shape, k: usize, dx: &mut [f64]) {
    let pad = (k / 2) as isize;
    let (h, w) = (s.height as isize, s.width as isize);
    let hw = s.height * s.width;
    for c in 0..s.channels {
        let plane = &mut dx[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * hw..][..hw];
                let (dy, dxo) = (ky as isize - pad, kx as isize - pad);
                for oy in 0..h {
                    let iy = oy + dy;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    for ox in 0..w {
                        let ix = ox + dxo;
                        if ix >= 0 && ix < w {
                            plane[(iy * w + ix) as usize] += row[(oy * w + ox) as usize];
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward(
    x: &[f64],
    batch: usize,
    ins: Shape,
    outs: Shape,
    k: usize,
    w: &[f64],
    b: &[f64],
) -> Vec<f64> {
    let hw = ins.height * ins.width;
    let ck = ins.channels * k * k;
    let f = outs.channels;
    let mut cols = vec![0.0; ck * hw];
    let mut y = vec![0.0; batch * outs.size()];
    for n in 0..batch {
        im2col(&x[n * ins.size()..(n + 1) * ins.size()], ins, k, &mut cols);
        let out = &mut y[n * outs.size()..(n + 1) * outs.size()];
        for (plane, &bias) in out.chunks_mut(hw).zip(b) {
            plane.fill(bias);
        }
        gemm(f, ck, hw, 1.0, w, false, &cols, false, 1.0, out);
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    g: &[f64],
    batch: usize,
    ins: Shape,
    outs: Shape,
    k: usize,
    w: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    need_input_grad: bool,
) -> Vec<f64> {
    let hw = ins.height * ins.width;
    let ck = ins.channels * k * k;
    let f = outs.channels;
    let mut cols = vec![0.0; ck * hw];
    let mut dcols = vec![0.0; ck * hw];
    let mut dx = vec![0.0; if need_input_grad { batch * ins.size() } else { 0 }];
    for n in 0..batch {
        let gn = &g[n * outs.size()..(n + 1) * outs.size()];
        im2col(&x[n * ins.size()..(n + 1) * ins.size()], ins, k, &mut cols);
        gemm(f, hw, ck, 1.0, gn, false, &cols, true, 1.0, gw);
        for (plane, b) in gn.chunks(hw).zip(gb.iter_mut()) {
            *b += plane.iter().sum::<f64>();
        }
        if need_input_grad {
            gemm(ck, f, hw, 1.0, w, true, gn, false, 0.0, &mut dcols);
            col2im(&dcols, ins, k, &mut dx[n * ins.size()..(n + 1) * ins.size()]);
        }
    }
    dx
}

fn pool_forward(x: &[f64], batch: usize, ins: Shape, outs: Shape) -> (Vec<f64>, Vec<u32>) {
    let mut y = Vec::with_capacity(batch * outs.size());
    let mut idx = Vec::with_capacity(batch * outs.size());
    for n in 0..batch {
        for c in 0..ins.channels {
            let base = n * ins.size() + c * ins.height * ins.width;
            for oy in 0..outs.height {
                for ox in 0..outs.width {
                    let mut best = base + 2 * oy * ins.width + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * ins.width + 2 * ox + dx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                    y.push(x[best]);
                    idx.push(best as u32);
                }
            }
        }
    }
    (y, idx)
}
