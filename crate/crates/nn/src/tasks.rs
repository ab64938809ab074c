//! Task-level helpers for the three networks: charge counting on sweeps,
//! per-pixel state maps and sub-map state probabilities.

use qdarray_core::dataset::ProbabilityVector;
use qdarray_core::StateLabel;

use crate::error::{Error, Result};
use crate::network::Network;

/// Fraction of points where the rounded prediction equals the integer label.
pub fn charge_accuracy(pred: &[f64], label: &[u32]) -> Result<f64> {
    if pred.len() != label.len() {
        return Err(Error::InputSize {
            batch: 1,
            expected: label.len(),
            found: pred.len(),
        });
    }
    if pred.is_empty() {
        return Ok(1.0);
    }
    let hits = pred
        .iter()
        .zip(label)
        .filter(|(p, &l)| p.round() == l as f64)
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Nearest state label for a real-valued regression output.
pub fn round_state(v: f64) -> StateLabel {
    StateLabel::ALL[v.round().clamp(0.0, 3.0) as usize]
}

/// Fraction of pixels whose rounded prediction equals the label.
pub fn state_accuracy(pred: &[f64], label: &[StateLabel]) -> Result<f64> {
    let ints: Vec<u32> = label.iter().map(|s| s.index() as u32).collect();
    let clamped: Vec<f64> = pred.iter().map(|v| v.clamp(0.0, 3.0)).collect();
    charge_accuracy(&clamped, &ints)
}

/// CNN output for one already-normalized window.
pub fn predict_probability_vector(net: &Network, window: &[f32]) -> Result<ProbabilityVector> {
    if net.output_size() != 4 {
        return Err(Error::ShapeMismatch {
            layer: "output".into(),
            expected: "4 state probabilities".into(),
            found: format!("{} outputs", net.output_size()),
        });
    }
    let x: Vec<f64> = window.iter().map(|&v| v as f64).collect();
    let y = net.forward(&x, 1)?;
    Ok(ProbabilityVector([y[0], y[1], y[2], y[3]]))
}

/// Top-1 agreement between predicted and target probability rows.
pub fn top1_accuracy(pred: &[f64], target: &[f64], classes: usize) -> f64 {
    let argmax = |r: &[f64]| {
        let mut b = 0;
        for i in 1..r.len() {
            if r[i] > r[b] {
                b = i;
            }
        }
        b
    };
    let rows = pred.len() / classes;
    if rows == 0 {
        return 1.0;
    }
    let hits = pred
        .chunks(classes)
        .zip(target.chunks(classes))
        .filter(|(p, t)| argmax(p) == argmax(t))
        .count();
    hits as f64 / rows as f64
}
