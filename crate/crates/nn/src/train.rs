//! Losses, finite-difference gradient checking, Adam and the training loop.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Mode, Network, Weights};
use crate::spec::LayerSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean of squared errors over every output of the batch.
    Mse,
    /// Mean over the batch of `-Σ t·ln y`, targets may be soft.
    CrossEntropy,
}

const LOG_FLOOR: f64 = 1e-300;

/// Loss value for `output` against `target`.
pub fn loss_value(kind: LossKind, output: &[f64], target: &[f64], batch: usize) -> f64 {
    match kind {
        LossKind::Mse => {
            let s: f64 = output.iter().zip(target).map(|(y, t)| (y - t) * (y - t)).sum();
            s / output.len() as f64
        }
        LossKind::CrossEntropy => {
            let s: f64 = output
                .iter()
                .zip(target)
                .map(|(y, t)| if *t == 0.0 { 0.0 } else { -t * y.max(LOG_FLOOR).ln() })
                .sum();
            s / batch as f64
        }
    }
}

impl Network {
    /// Loss and parameter gradients on one batch.
    pub fn loss_gradient(
        &self,
        input: &[f64],
        target: &[f64],
        batch: usize,
        loss: LossKind,
        mode: Mode,
    ) -> Result<(f64, Weights)> {
        let trace = self.forward_trace(input, batch, mode)?;
        let y = trace.output();
        if target.len() != y.len() {
            return Err(Error::InputSize {
                batch,
                expected: y.len(),
                found: target.len(),
            });
        }
        let value = loss_value(loss, y, target, batch);
        let layers = self.spec().layers.len();
        let ends_in_softmax = matches!(self.spec().layers.last(), Some(LayerSpec::Softmax));
        let grads = match loss {
            LossKind::Mse => {
                let s = 2.0 / y.len() as f64;
                let g = y.iter().zip(target).map(|(a, b)| s * (a - b)).collect();
                self.backward(&trace, g, layers)
            }
            // Softmax and cross-entropy fold into `y - t` at the logits.
            LossKind::CrossEntropy if ends_in_softmax => {
                let n = self.output_size();
                let mut g = Vec::with_capacity(y.len());
                for (yr, tr) in y.chunks(n).zip(target.chunks(n)) {
                    let mass: f64 = tr.iter().sum();
                    g.extend(yr.iter().zip(tr).map(|(a, b)| (mass * a - b) / batch as f64));
                }
                self.backward(&trace, g, layers - 1)
            }
            LossKind::CrossEntropy => {
                let g = y
                    .iter()
                    .zip(target)
                    .map(|(a, b)| -b / (a.max(LOG_FLOOR) * batch as f64))
                    .collect();
                self.backward(&trace, g, layers)
            }
        };
        Ok((value, grads))
    }
}

/// Worst `|analytic − numeric| / max(1, |analytic|)` over all parameters,
/// using central differences of step `eps` in inference mode.
pub fn gradient_check(
    net: &Network,
    input: &[f64],
    target: &[f64],
    batch: usize,
    loss: LossKind,
    eps: f64,
) -> Result<f64> {
    let (_, analytic) = net.loss_gradient(input, target, batch, loss, Mode::Inference)?;
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for l in 0..analytic.layers.len() {
        for t in 0..analytic.layers[l].len() {
            for i in 0..analytic.layers[l][t].data.len() {
                let orig = probe.weights().layers[l][t].data[i];
                probe.weights_mut().layers[l][t].data[i] = orig + eps;
                let up = loss_value(loss, &probe.forward(input, batch)?, target, batch);
                probe.weights_mut().layers[l][t].data[i] = orig - eps;
                let down = loss_value(loss, &probe.forward(input, batch)?, target, batch);
                probe.weights_mut().layers[l][t].data[i] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let a = analytic.layers[l][t].data[i];
                worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub loss: LossKind,
    /// Fraction of the training data held back to pick the best epoch.
    pub validation_fraction: f64,
    /// Stop after this many epochs without validation improvement.
    pub patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            loss: LossKind::Mse,
            validation_fraction: 0.1,
            patience: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) {
            return bad("learning rate and epsilon must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub epochs: Vec<EpochMetrics>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    /// Task-specific accuracy filled in by the caller.
    pub accuracy: Option<f64>,
}

impl Metrics {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,validation_loss")?;
        for e in &self.epochs {
            let v = e.validation_loss.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{v}", e.epoch, e.train_loss)?;
        }
        Ok(())
    }
}

/// Adam optimizer state.
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; params],
            v: vec![0.0; params],
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
        }
    }

    pub fn step(&mut self, weights: &mut Weights, grads: &Weights) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((w, g), m), v) in weights
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *w -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

fn gather(data: &[f64], dim: usize, idx: &[usize], out: &mut Vec<f64>) {
    out.clear();
    for &i in idx {
        out.extend_from_slice(&data[i * dim..(i + 1) * dim]);
    }
}

fn shuffle(idx: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..idx.len()).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
}

/// Mean loss over `idx` in inference mode.
pub fn evaluate_loss(
    net: &Network,
    inputs: &[f64],
    targets: &[f64],
    idx: &[usize],
    loss: LossKind,
    chunk: usize,
) -> Result<f64> {
    let (di, dt) = (net.input_size(), net.output_size());
    let (mut x, mut t) = (Vec::new(), Vec::new());
    let mut total = 0.0;
    for part in idx.chunks(chunk.max(1)) {
        gather(inputs, di, part, &mut x);
        gather(targets, dt, part, &mut t);
        let y = net.forward(&x, part.len())?;
        total += loss_value(loss, &y, &t, part.len()) * part.len() as f64;
    }
    Ok(total / idx.len().max(1) as f64)
}

/// Train `net` in place on row-major `inputs`/`targets`; the weights of the
/// epoch with the lowest validation loss (or last epoch without validation)
/// are kept.
pub fn train(net: &mut Network, inputs: &[f64], targets: &[f64], cfg: &TrainConfig) -> Result<Metrics> {
    train_with(net, inputs, targets, cfg, |_, _| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    net: &mut Network,
    inputs: &[f64],
    targets: &[f64],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&Network, &EpochMetrics),
) -> Result<Metrics> {
    cfg.validate()?;
    let (di, dt) = (net.input_size(), net.output_size());
    if inputs.len() % di != 0 || targets.len() % dt != 0 || inputs.len() / di != targets.len() / dt {
        return Err(Error::InvalidConfig(format!(
            "{} inputs of width {di} do not pair with {} targets of width {dt}",
            inputs.len() / di,
            targets.len() / dt
        )));
    }
    let n = inputs.len() / di;
    if n == 0 {
        return Err(Error::InvalidConfig("no training samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, &mut rng);
    let n_val = ((n as f64) * cfg.validation_fraction).round() as usize;
    let n_val = n_val.min(n - 1);
    let val: Vec<usize> = order.split_off(n - n_val);
    let mut train_idx = order;

    let mut adam = Adam::new(net.weights().parameter_count(), cfg);
    let mut best: Option<(f64, usize, Weights)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let (mut x, mut t) = (Vec::new(), Vec::new());
    for epoch in 0..cfg.epochs {
        shuffle(&mut train_idx, &mut rng);
        let mut sum = 0.0;
        for part in train_idx.chunks(cfg.batch_size) {
            gather(inputs, di, part, &mut x);
            gather(targets, dt, part, &mut t);
            let (loss, grads) = net.loss_gradient(&x, &t, part.len(), cfg.loss, Mode::Training(&mut rng))?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            sum += loss * part.len() as f64;
            adam.step(net.weights_mut(), &grads);
        }
        let train_loss = sum / train_idx.len() as f64;
        if net.weights().iter().any(|w| !w.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                loss: f64::NAN,
            });
        }
        let validation_loss = if val.is_empty() {
            None
        } else {
            Some(evaluate_loss(net, inputs, targets, &val, cfg.loss, 256)?)
        };
        let score = validation_loss.unwrap_or(train_loss);
        if !score.is_finite() {
            return Err(Error::Diverged { epoch, loss: score });
        }
        let m = EpochMetrics {
            epoch,
            train_loss,
            validation_loss,
        };
        on_epoch(net, &m);
        history.push(m);
        let improved = best.as_ref().is_none_or(|(b, _, _)| score < *b || val.is_empty());
        if improved {
            best = Some((score, epoch, net.weights().clone()));
        } else if let (Some(p), Some((_, be, _))) = (cfg.patience, &best) {
            if epoch - be >= p {
                break;
            }
        }
    }
    let (_, best_epoch, weights) = best.expect("at least one epoch ran");
    *net.weights_mut() = weights;
    Ok(Metrics {
        epochs: history,
        best_epoch,
        accuracy: None,
    })
}
