//! Compass pattern search on the distance between predicted and target state
//! probabilities.

use std::io::Write;

use qdarray_core::dataset::{normalize_current, Normalization, ProbabilityVector};
use qdarray_nn::{predict_probability_vector, Network};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provider::MapProvider;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L1,
    #[default]
    L2,
    Max,
}

/// Distance between two probability vectors.
pub fn fitness(p: &ProbabilityVector, p0: &ProbabilityVector, norm: Norm) -> f64 {
    let d = p.0.iter().zip(&p0.0).map(|(a, b)| (a - b).abs());
    match norm {
        Norm::L1 => d.sum(),
        Norm::L2 => d.map(|x| x * x).sum::<f64>().sqrt(),
        Norm::Max => d.fold(0.0, f64::max),
    }
}

/// How a poll around the current center picks its move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Poll {
    /// Move to the first improving neighbour.
    First,
    /// Evaluate every neighbour and move to the best one.
    #[default]
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    /// Initial step in units of each axis scale.
    pub initial_step: f64,
    pub shrink: f64,
    /// Search stops once the step falls below this.
    pub min_step: f64,
    pub delta_stop: f64,
    /// Evaluations without improvement before giving up.
    pub stagnation: usize,
    pub budget: usize,
    pub norm: Norm,
    pub normalization: Normalization,
    pub poll: Poll,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            shrink: 0.5,
            min_step: 0.05,
            delta_stop: 0.35,
            stagnation: 10,
            budget: 50,
            norm: Norm::L2,
            normalization: Normalization::MaxAbs,
            poll: Poll::Complete,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::InvalidArgument("budget must be at least 1".into()));
        }
        if !(self.initial_step > 0.0 && self.min_step > 0.0) || !(0.0..1.0).contains(&self.shrink) {
            return Err(Error::InvalidArgument(
                "steps must be positive and shrink in (0, 1)".into(),
            ));
        }
        if !(self.delta_stop >= 0.0) || self.stagnation == 0 {
            return Err(Error::InvalidArgument(
                "delta_stop must be non-negative and stagnation positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneStatus {
    /// Fitness reached `delta_stop`.
    Converged,
    Stagnated,
    /// Step length fell below `min_step`.
    StepExhausted,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub center: Vec<f64>,
    pub prob: ProbabilityVector,
    pub delta: f64,
    /// The proposed center was pulled back inside the provider bounds.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessTrace {
    pub entries: Vec<TraceEntry>,
    pub best: usize,
    pub status: TuneStatus,
}

impl FitnessTrace {
    pub fn evaluations(&self) -> usize {
        self.entries.len()
    }

    pub fn best_entry(&self) -> &TraceEntry {
        &self.entries[self.best]
    }

    /// `iteration,c0,…,p_sc,p_barrier,p_sd,p_dd,delta,clamped`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let dims = self.entries.first().map_or(0, |e| e.center.len());
        let coords: Vec<String> = (0..dims).map(|i| format!("c{i}")).collect();
        writeln!(
            out,
            "iteration,{},p_sc,p_barrier,p_sd,p_dd,delta,clamped",
            coords.join(",")
        )?;
        for (i, e) in self.entries.iter().enumerate() {
            let c: Vec<String> = e.center.iter().map(f64::to_string).collect();
            let p: Vec<String> = e.prob.0.iter().map(f64::to_string).collect();
            writeln!(
                out,
                "{i},{},{},{},{}",
                c.join(","),
                p.join(","),
                e.delta,
                e.clamped as u8
            )?;
        }
        Ok(())
    }
}

/// Probability vector the CNN assigns to the window at `center`.
pub fn probe(
    provider: &dyn MapProvider,
    cnn: &Network,
    center: &[f64],
    normalization: Normalization,
) -> Result<ProbabilityVector> {
    let mut w = provider.window(center)?;
    normalize_current(&mut w, normalization)?;
    Ok(predict_probability_vector(cnn, &w)?)
}

/// Move the window center from `start` toward a region whose predicted
/// probabilities approach `target`.
///
/// Polls `±step·scale` along each axis and moves to an improving neighbour
/// (the first or the best, per [`Poll`]); after a poll without improvement
/// the step shrinks.
pub fn tune(
    provider: &dyn MapProvider,
    cnn: &Network,
    start: &[f64],
    target: &ProbabilityVector,
    config: &TuneConfig,
) -> Result<FitnessTrace> {
    config.validate()?;
    let dims = provider.dims();
    if start.len() != dims {
        return Err(Error::InvalidArgument(format!(
            "start has {} coordinates, provider has {dims} axes",
            start.len()
        )));
    }
    let scales = provider.scales();
    let mut entries: Vec<TraceEntry> = Vec::new();
    let evaluate = |center: Vec<f64>, clamped: bool, entries: &mut Vec<TraceEntry>| -> Result<f64> {
        let prob = probe(provider, cnn, &center, config.normalization)?;
        let delta = fitness(&prob, target, config.norm);
        entries.push(TraceEntry {
            center,
            prob,
            delta,
            clamped,
        });
        Ok(delta)
    };

    let (c0, moved) = provider.clamp(start);
    let mut best_delta = evaluate(c0.clone(), moved, &mut entries)?;
    let mut best = 0;
    let mut center = c0;
    let mut step = config.initial_step;
    let finish = |entries: Vec<TraceEntry>, best, status| FitnessTrace {
        entries,
        best,
        status,
    };
    if best_delta <= config.delta_stop {
        return Ok(finish(entries, best, TuneStatus::Converged));
    }
    loop {
        let mut poll_best: Option<(f64, usize)> = None;
        'poll: for axis in 0..dims {
            for sign in [1.0, -1.0] {
                if entries.len() >= config.budget {
                    break 'poll;
                }
                let mut cand = center.clone();
                cand[axis] += sign * step * scales[axis];
                let (cand, clamped) = provider.clamp(&cand);
                if entries.iter().any(|e| e.center == cand) {
                    continue;
                }
                let d = evaluate(cand, clamped, &mut entries)?;
                if d < best_delta && poll_best.is_none_or(|(b, _)| d < b) {
                    poll_best = Some((d, entries.len() - 1));
                    if d <= config.delta_stop || config.poll == Poll::First {
                        break 'poll;
                    }
                }
            }
        }
        match poll_best {
            Some((d, i)) => {
                best_delta = d;
                best = i;
                center = entries[i].center.clone();
                if d <= config.delta_stop {
                    return Ok(finish(entries, best, TuneStatus::Converged));
                }
            }
            None => step *= config.shrink,
        }
        if entries.len() >= config.budget {
            return Ok(finish(entries, best, TuneStatus::BudgetExhausted));
        }
        if entries.len() - 1 - best >= config.stagnation {
            return Ok(finish(entries, best, TuneStatus::Stagnated));
        }
        if step < config.min_step {
            return Ok(finish(entries, best, TuneStatus::StepExhausted));
        }
    }
}
