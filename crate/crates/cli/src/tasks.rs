//! Dataset-to-network plumbing shared by `train`, `eval` and the tests.

use std::path::Path;

use qdarray_core::dataset::{
    normalize_current, read_manifest, DatasetKind, MapDataset, Normalization, SubMapDataset,
    SweepDataset,
};
use qdarray_core::StateLabel;
use qdarray_nn::{charge_accuracy, state_accuracy, top1_accuracy, LossKind, Network, NetworkSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Context, Result};

/// Which network a dataset trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Electron number along a sweep.
    Charge,
    /// State label of every map pixel.
    StateMap,
    /// State probabilities of a sub-map.
    StateCnn,
}

impl Task {
    pub fn default_test_fraction(self) -> f64 {
        match self {
            Task::Charge | Task::StateMap => 0.2,
            Task::StateCnn => 0.1,
        }
    }

    pub fn loss(self) -> LossKind {
        match self {
            Task::StateCnn => LossKind::CrossEntropy,
            _ => LossKind::Mse,
        }
    }
}

/// Normalized inputs and targets, one row per record.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub task: Task,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Edge length of square sub-maps.
    pub size: usize,
}

fn normalized(current: &[f32]) -> Result<impl Iterator<Item = f64>> {
    let mut c = current.to_vec();
    normalize_current(&mut c, Normalization::MaxAbs)?;
    Ok(c.into_iter().map(f64::from))
}

impl TaskData {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir).context(|| format!("reading dataset {}", dir.display()))?;
        let ctx = || format!("loading dataset {}", dir.display());
        match manifest.kind {
            DatasetKind::Sweep => Self::from_sweeps(&SweepDataset::load(dir).context(ctx)?),
            DatasetKind::Map => Self::from_maps(&MapDataset::load(dir).context(ctx)?),
            DatasetKind::Submap => Self::from_submaps(&SubMapDataset::load(dir).context(ctx)?),
            DatasetKind::Stack => Err(CliError::validation(format!(
                "{} holds a map stack, which carries no labels to train on",
                dir.display()
            ))),
        }
    }

    pub fn from_sweeps(ds: &SweepDataset) -> Result<Self> {
        let mut data = Self::empty(Task::Charge, ds.config.points, ds.config.points, 0);
        for r in &ds.records {
            data.inputs.extend(normalized(&r.current)?);
            data.targets.extend(r.charge.iter().map(|&n| n as f64));
        }
        data.check_lengths()
    }

    pub fn from_maps(ds: &MapDataset) -> Result<Self> {
        let (w, h) = ds.config.resolution;
        let mut data = Self::empty(Task::StateMap, w * h, w * h, 0);
        for r in &ds.records {
            data.inputs.extend(normalized(&r.current)?);
            data.targets.extend(r.state.iter().map(|s| s.index() as f64));
        }
        data.check_lengths()
    }

    pub fn from_submaps(ds: &SubMapDataset) -> Result<Self> {
        let px = ds.size * ds.size;
        let mut data = Self::empty(Task::StateCnn, px, 4, ds.size);
        for s in &ds.samples {
            data.inputs.extend(normalized(&s.pixels)?);
            data.targets.extend(s.prob().0);
        }
        data.check_lengths()
    }

    fn empty(task: Task, in_dim: usize, out_dim: usize, size: usize) -> Self {
        Self {
            task,
            inputs: Vec::new(),
            targets: Vec::new(),
            in_dim,
            out_dim,
            size,
        }
    }

    fn check_lengths(self) -> Result<Self> {
        if self.inputs.len() != self.len() * self.in_dim || self.targets.len() != self.len() * self.out_dim {
            return Err(CliError::validation("dataset records have inconsistent lengths"));
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.in_dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Default network for this task.
    pub fn network_spec(&self, hidden: Option<&[usize]>, dropout: f64) -> NetworkSpec {
        match self.task {
            Task::Charge => NetworkSpec::charge_id(self.in_dim),
            Task::StateMap => match hidden {
                Some(h) => NetworkSpec::mlp(self.in_dim, h, self.out_dim),
                None => NetworkSpec::state_map(self.in_dim),
            },
            Task::StateCnn => NetworkSpec::state_cnn(self.size, 4, dropout),
        }
    }

    /// Descriptive error when `net` cannot consume this dataset.
    pub fn check_network(&self, net: &Network) -> Result<()> {
        if net.input_size() != self.in_dim || net.output_size() != self.out_dim {
            return Err(CliError::validation(format!(
                "weights map {} inputs to {} outputs, but the {:?} dataset has {} inputs and {} targets per record",
                net.input_size(),
                net.output_size(),
                self.task,
                self.in_dim,
                self.out_dim
            )));
        }
        Ok(())
    }

    /// Rows `idx` of inputs and targets.
    pub fn gather(&self, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(idx.len() * self.in_dim);
        let mut t = Vec::with_capacity(idx.len() * self.out_dim);
        for &i in idx {
            x.extend_from_slice(&self.inputs[i * self.in_dim..(i + 1) * self.in_dim]);
            t.extend_from_slice(&self.targets[i * self.out_dim..(i + 1) * self.out_dim]);
        }
        (x, t)
    }

    /// Task accuracy of `net` on rows `idx`.
    pub fn accuracy(&self, net: &Network, idx: &[usize]) -> Result<f64> {
        self.check_network(net)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(CliError::validation(format!(
                "record index {bad} out of range ({} records)",
                self.len()
            )));
        }
        let (x, t) = self.gather(idx);
        let pred = net.predict(&x, 64)?;
        Ok(match self.task {
            Task::Charge => {
                let labels: Vec<u32> = t.iter().map(|&v| v as u32).collect();
                charge_accuracy(&pred, &labels)?
            }
            Task::StateMap => {
                let labels: Vec<StateLabel> = t.iter().map(|&v| StateLabel::ALL[v as usize]).collect();
                state_accuracy(&pred, &labels)?
            }
            Task::StateCnn => top1_accuracy(&pred, &t, 4),
        })
    }
}
