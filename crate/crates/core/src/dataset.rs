//! Training corpora: 1-D plunger sweeps, full 2-D maps and 30×30 sub-maps
//! with region-averaged state probabilities.
//!
//! On disk a dataset is a directory holding `manifest.json` plus one flat
//! binary file per array. Every array file is
//!
//! ```text
//! magic  b"QDAR"        4 bytes
//! version u32 LE        currently 1
//! kind    u32 LE        0 sweep, 1 map, 2 submap, 3 stack
//! dtype   u32 LE        0 = f32 little-endian
//! ndim    u32 LE
//! dims    u64 LE × ndim
//! data    f32 LE, row-major
//! ```
//!
//! Integer quantities (charges, state labels, label counts) are stored as
//! exact small floats.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{sample_device, DeviceSpec};
use crate::error::{Error, Result};
use crate::simulate::{linspace, SimulationOptions, Simulator};
use crate::thomas_fermi::StateLabel;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"QDAR";
const DTYPE_F32: u32 = 0;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Fresh devices tried per slot before generation gives up.
pub const MAX_DEVICE_ATTEMPTS: usize = 20;

/// Region state probabilities in the order (SC, Barrier, SD, DD).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityVector(pub [f64; 4]);

impl ProbabilityVector {
    pub fn new(p: [f64; 4]) -> Result<Self> {
        let sum: f64 = p.iter().sum();
        if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "{p:?} is not a probability vector"
            )));
        }
        Ok(Self(p))
    }

    pub fn one_hot(label: StateLabel) -> Self {
        let mut p = [0.0; 4];
        p[label.index()] = 1.0;
        Self(p)
    }

    /// Mean of one-hot vectors from label counts.
    pub fn from_counts(counts: &[u32; 4]) -> Result<Self> {
        let total: u32 = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidArgument("no labels to average".into()));
        }
        Ok(Self(counts.map(|c| c as f64 / total as f64)))
    }

    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a StateLabel>) -> Result<Self> {
        Self::from_counts(&count_labels(labels))
    }

    pub fn get(&self, label: StateLabel) -> f64 {
        self.0[label.index()]
    }

    /// Most probable state; ties resolve to the earlier label.
    pub fn argmax(&self) -> StateLabel {
        let mut best = 0;
        for i in 1..4 {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        StateLabel::ALL[best]
    }
}

impl fmt::Display for ProbabilityVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "(SC {a:.3}, Barrier {b:.3}, SD {c:.3}, DD {d:.3})")
    }
}

pub fn count_labels<'a>(labels: impl IntoIterator<Item = &'a StateLabel>) -> [u32; 4] {
    let mut counts = [0u32; 4];
    for l in labels {
        counts[l.index()] += 1;
    }
    counts
}

/// One device's plunger sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub device: DeviceSpec,
    pub v_p: Vec<f64>,
    pub current: Vec<f32>,
    /// Total equilibrium electron number at each voltage.
    pub charge: Vec<u32>,
}

impl SweepRecord {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "v_p_mV,current,charge")?;
        for ((v, i), n) in self.v_p.iter().zip(&self.current).zip(&self.charge) {
            writeln!(out, "{v},{i:e},{n}")?;
        }
        Ok(())
    }

    /// Indices where the charge trace increases.
    pub fn steps(&self) -> Vec<usize> {
        self.charge
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1] != w[0])
            .map(|(i, _)| i + 1)
            .collect()
    }
}

/// One device's 2-D plunger map, row-major with `v_y` rows and `v_x` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapRecord {
    pub device: DeviceSpec,
    pub v_x: Vec<f64>,
    pub v_y: Vec<f64>,
    pub current: Vec<f32>,
    pub state: Vec<StateLabel>,
}

impl MapRecord {
    pub fn width(&self) -> usize {
        self.v_x.len()
    }

    pub fn height(&self) -> usize {
        self.v_y.len()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "v_x_mV,v_y_mV,current,state")?;
        let w = self.width();
        for (r, y) in self.v_y.iter().enumerate() {
            for (c, x) in self.v_x.iter().enumerate() {
                let k = r * w + c;
                writeln!(out, "{x},{y},{:e},{}", self.current[k], self.state[k].index())?;
            }
        }
        Ok(())
    }

    /// Window of `size`×`size` pixels with top-left corner at `(row, col)`.
    pub fn window(&self, row: usize, col: usize, size: usize) -> Result<SubMapSample> {
        if row + size > self.height() || col + size > self.width() || size == 0 {
            return Err(Error::InvalidArgument(format!(
                "window {size}×{size} at ({row},{col}) exceeds {}×{} map",
                self.height(),
                self.width()
            )));
        }
        let w = self.width();
        let mut pixels = Vec::with_capacity(size * size);
        let mut counts = [0u32; 4];
        for r in row..row + size {
            pixels.extend_from_slice(&self.current[r * w + col..r * w + col + size]);
            for s in &self.state[r * w + col..r * w + col + size] {
                counts[s.index()] += 1;
            }
        }
        Ok(SubMapSample {
            size,
            pixels,
            counts,
        })
    }
}

/// Square current window and the state-label counts it covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubMapSample {
    pub size: usize,
    pub pixels: Vec<f32>,
    pub counts: [u32; 4],
}

impl SubMapSample {
    pub fn prob(&self) -> ProbabilityVector {
        ProbabilityVector::from_counts(&self.counts).expect("window has at least one pixel")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for row in self.pixels.chunks(self.size) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// How current arrays are rescaled before training or inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "scale")]
pub enum Normalization {
    /// Divide each array by its own largest magnitude.
    MaxAbs,
    /// Multiply by a fixed constant.
    Constant(f64),
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::MaxAbs
    }
}

/// Rescale `data` in place. Returns `false` for an all-zero array under
/// [`Normalization::MaxAbs`], which is left untouched.
pub fn normalize_current(data: &mut [f32], mode: Normalization) -> Result<bool> {
    match mode {
        Normalization::MaxAbs => {
            let m = data.iter().fold(0.0f32, |a, v| a.max(v.abs()));
            if m == 0.0 {
                return Ok(false);
            }
            for v in data.iter_mut() {
                *v /= m;
            }
            Ok(true)
        }
        Normalization::Constant(c) => {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "normalization constant {c} must be positive"
                )));
            }
            if c != 1.0 {
                for v in data.iter_mut() {
                    *v = (*v as f64 * c) as f32;
                }
            }
            Ok(true)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Sweep,
    Map,
    Submap,
    Stack,
}

impl DatasetKind {
    fn code(self) -> u32 {
        match self {
            DatasetKind::Sweep => 0,
            DatasetKind::Map => 1,
            DatasetKind::Submap => 2,
            DatasetKind::Stack => 3,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        Ok(match c {
            0 => DatasetKind::Sweep,
            1 => DatasetKind::Map,
            2 => DatasetKind::Submap,
            3 => DatasetKind::Stack,
            _ => return Err(Error::Format(format!("unknown dataset kind code {c}"))),
        })
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Sweep => "sweep",
            DatasetKind::Map => "map",
            DatasetKind::Submap => "submap",
            DatasetKind::Stack => "stack",
        })
    }
}

/// Sweep generation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub gate: usize,
    pub range: (f64, f64),
    pub points: usize,
    pub simulation: SimulationOptions,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            gate: 1,
            range: (0.0, 400.0),
            points: 512,
            simulation: SimulationOptions::default(),
        }
    }
}

fn check_range(name: &str, r: (f64, f64)) -> Result<()> {
    if !(r.0.is_finite() && r.1.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} {r:?} must be finite")));
    }
    Ok(())
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points == 0 {
            return Err(Error::InvalidArgument("sweep needs at least one point".into()));
        }
        check_range("sweep range", self.range)
    }
}

/// Map generation settings; `gates.0` spans columns, `gates.1` rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapConfig {
    pub gates: (usize, usize),
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub resolution: (usize, usize),
    pub simulation: SimulationOptions,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            gates: (1, 3),
            x_range: (0.0, 400.0),
            y_range: (0.0, 400.0),
            resolution: (100, 100),
            simulation: SimulationOptions::default(),
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err(Error::InvalidArgument("map resolution must be positive".into()));
        }
        if self.gates.0 == self.gates.1 {
            return Err(Error::InvalidArgument(format!(
                "map axes need two different gates, got {} twice",
                self.gates.0
            )));
        }
        check_range("x range", self.x_range)?;
        check_range("y range", self.y_range)
    }
}

/// Human-readable description of a stored dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub kind: DatasetKind,
    pub count: usize,
    /// Shape of one record's primary array.
    pub shape: Vec<usize>,
    pub seed: u64,
    pub mean: Option<DeviceSpec>,
    pub rel_sigma: f64,
    pub normalization: Option<Normalization>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapConfig>,
    /// Per-record sampled devices (sweep and map kinds).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub devices: Vec<DeviceSpec>,
    /// Array name → file name within the dataset directory.
    pub arrays: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepDataset {
    pub seed: u64,
    pub mean: DeviceSpec,
    pub rel_sigma: f64,
    pub config: SweepConfig,
    pub records: Vec<SweepRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapDataset {
    pub seed: u64,
    pub mean: DeviceSpec,
    pub rel_sigma: f64,
    pub config: MapConfig,
    pub records: Vec<MapRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubMapDataset {
    pub seed: u64,
    pub size: usize,
    pub normalization: Option<Normalization>,
    pub samples: Vec<SubMapSample>,
}

impl SubMapDataset {
    /// Rescale every sample; returns indices of all-zero samples left unscaled.
    pub fn normalize(&mut self, mode: Normalization) -> Result<Vec<usize>> {
        let mut flagged = Vec::new();
        for (i, s) in self.samples.iter_mut().enumerate() {
            if !normalize_current(&mut s.pixels, mode)? {
                flagged.push(i);
            }
        }
        self.normalization = Some(mode);
        Ok(flagged)
    }

    /// Deterministic shuffle then split into `(train, test)` with `test_fraction` held out.
    pub fn split(&self, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        split_indices(self.samples.len(), test_fraction, seed)
    }
}

/// Shuffled index split; the test part has `round(n·test_fraction)` entries.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let n_test = ((n as f64) * test_fraction.clamp(0.0, 1.0)).round() as usize;
    let test = idx.split_off(n - n_test);
    (idx, test)
}

/// Device-seed stream for slot `index`: independent of how many slots exist.
fn slot_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Draw devices for slot `index` until `run` succeeds.
fn with_sampled_device<T>(
    mean: &DeviceSpec,
    rel_sigma: f64,
    seed: u64,
    index: usize,
    mut run: impl FnMut(&DeviceSpec) -> Result<T>,
) -> Result<(DeviceSpec, T)> {
    let mut rng = slot_rng(seed, index);
    let mut last = None;
    for attempt in 0..MAX_DEVICE_ATTEMPTS {
        let device_seed: u64 = rng.random();
        let outcome = sample_device(mean, rel_sigma, device_seed).and_then(|d| {
            let r = run(&d)?;
            Ok((d, r))
        });
        match outcome {
            Ok(v) => return Ok(v),
            Err(e) => {
                log::warn!("device {index} attempt {attempt} failed, resampling: {e}");
                last = Some(e);
            }
        }
    }
    Err(Error::SamplingFailed {
        attempts: MAX_DEVICE_ATTEMPTS,
        reason: format!(
            "device {index}: {}",
            last.map(|e| e.to_string()).unwrap_or_default()
        ),
    })
}

/// Sweep `n_devices` devices drawn around `mean`.
pub fn gen_sweep_dataset(
    mean: &DeviceSpec,
    n_devices: usize,
    rel_sigma: f64,
    seed: u64,
    config: &SweepConfig,
) -> Result<SweepDataset> {
    if n_devices == 0 {
        return Err(Error::InvalidArgument("n_devices must be at least 1".into()));
    }
    mean.validate()?;
    config.validate()?;
    let sim = Simulator::for_device(mean, config.simulation)?;
    let v_p = linspace(config.range.0, config.range.1, config.points);
    let records = (0..n_devices)
        .into_par_iter()
        .map(|i| {
            let (device, points) = with_sampled_device(mean, rel_sigma, seed, i, |d| {
                sim.sweep(d, config.gate, &v_p)
            })?;
            Ok(SweepRecord {
                device,
                v_p: v_p.clone(),
                current: points.iter().map(|p| p.current as f32).collect(),
                charge: points.iter().map(|p| p.charge.total()).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepDataset {
        seed,
        mean: mean.clone(),
        rel_sigma,
        config: *config,
        records,
    })
}

/// Current and state maps for `n_devices` devices drawn around `mean`.
pub fn gen_map_dataset(
    mean: &DeviceSpec,
    n_devices: usize,
    rel_sigma: f64,
    seed: u64,
    config: &MapConfig,
) -> Result<MapDataset> {
    if n_devices == 0 {
        return Err(Error::InvalidArgument("n_devices must be at least 1".into()));
    }
    mean.validate()?;
    config.validate()?;
    let (w, h) = config.resolution;
    let sim = Simulator::for_device(mean, config.simulation)?;
    let v_x = linspace(config.x_range.0, config.x_range.1, w);
    let v_y = linspace(config.y_range.0, config.y_range.1, h);
    let records = (0..n_devices)
        .into_par_iter()
        .map(|i| {
            let (device, map) = with_sampled_device(mean, rel_sigma, seed, i, |d| {
                sim.map(d, config.gates, &v_x, &v_y)
            })?;
            Ok(MapRecord {
                device,
                v_x: v_x.clone(),
                v_y: v_y.clone(),
                current: map.points.iter().map(|p| p.current as f32).collect(),
                state: map.points.iter().map(|p| p.state).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MapDataset {
        seed,
        mean: mean.clone(),
        rel_sigma,
        config: *config,
        records,
    })
}

/// `count` windows at uniformly random positions of uniformly random maps.
pub fn extract_submaps(
    maps: &[MapRecord],
    size: usize,
    count: usize,
    seed: u64,
) -> Result<SubMapDataset> {
    if maps.is_empty() {
        return Err(Error::InvalidArgument("no maps to sample from".into()));
    }
    if let Some(m) = maps.iter().find(|m| size == 0 || size > m.width() || size > m.height()) {
        return Err(Error::InvalidArgument(format!(
            "window size {size} does not fit a {}×{} map",
            m.height(),
            m.width()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..count)
        .map(|_| {
            let m = &maps[rng.random_range(0..maps.len())];
            let row = rng.random_range(0..=m.height() - size);
            let col = rng.random_range(0..=m.width() - size);
            m.window(row, col, size)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SubMapDataset {
        seed,
        size,
        normalization: None,
        samples,
    })
}

// ---------------------------------------------------------------------------
// Binary arrays

/// Header of one stored array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrayHeader {
    pub kind: DatasetKind,
    pub shape: Vec<usize>,
}

impl ArrayHeader {
    fn header_bytes(&self) -> usize {
        4 + 4 * 4 + 8 * self.shape.len()
    }

    fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

pub fn write_array(path: &Path, kind: DatasetKind, shape: &[usize], data: &[f32]) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != data.len() {
        return Err(Error::DimensionMismatch {
            expected,
            found: data.len(),
        });
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    for v in [FORMAT_VERSION, kind.code(), DTYPE_F32, shape.len() as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    for &d in shape {
        out.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in data {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Read an array, checking its kind against `expected` when given.
pub fn read_array(path: &Path, expected: Option<DatasetKind>) -> Result<(ArrayHeader, Vec<f32>)> {
    let file_len = fs::metadata(path)?.len() as usize;
    let mut input = BufReader::new(File::open(path)?);
    let name = path.display().to_string();
    let truncated = |expected: usize| Error::Truncated {
        file: name.clone(),
        expected,
        found: file_len,
    };
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(|_| truncated(20))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("{name}: not a dataset array file")));
    }
    let mut word = [0u8; 4];
    let mut words = [0u32; 4];
    for w in words.iter_mut() {
        input.read_exact(&mut word).map_err(|_| truncated(20))?;
        *w = u32::from_le_bytes(word);
    }
    let [version, kind, dtype, ndim] = words;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{name}: format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let kind = DatasetKind::from_code(kind)?;
    if let Some(k) = expected {
        if k != kind {
            return Err(Error::KindMismatch {
                expected: k.to_string(),
                found: kind.to_string(),
            });
        }
    }
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("{name}: unsupported dtype code {dtype}")));
    }
    let mut shape = Vec::with_capacity(ndim as usize);
    let mut dword = [0u8; 8];
    for _ in 0..ndim {
        input
            .read_exact(&mut dword)
            .map_err(|_| truncated(20 + 8 * ndim as usize))?;
        shape.push(u64::from_le_bytes(dword) as usize);
    }
    let header = ArrayHeader { kind, shape };
    let expected_len = header.header_bytes() + 4 * header.element_count();
    if file_len != expected_len {
        return Err(truncated(expected_len));
    }
    let mut bytes = vec![0u8; 4 * header.element_count()];
    input.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, data))
}

fn check_shape(name: &str, found: &[usize], expected: &[usize]) -> Result<()> {
    if found != expected {
        return Err(Error::Format(format!(
            "array {name}: shape {found:?}, manifest implies {expected:?}"
        )));
    }
    Ok(())
}

fn to_u32(v: f32, what: &str) -> Result<u32> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f32 {
        Ok(v as u32)
    } else {
        Err(Error::Format(format!("{what}: {v} is not a non-negative integer")))
    }
}

fn to_label(v: f32) -> Result<StateLabel> {
    let i = to_u32(v, "state label")?;
    StateLabel::from_index(i as usize)
        .ok_or_else(|| Error::Format(format!("state label {i} out of range")))
}

fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    if m.version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "manifest version {}, expected {FORMAT_VERSION}",
            m.version
        )));
    }
    Ok(m)
}

fn array_path(dir: &Path, manifest: &DatasetManifest, name: &str) -> Result<PathBuf> {
    manifest
        .arrays
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, f)| dir.join(f))
        .ok_or_else(|| Error::Format(format!("manifest lists no array named {name}")))
}

fn expect_kind(manifest: &DatasetManifest, kind: DatasetKind) -> Result<()> {
    if manifest.kind != kind {
        return Err(Error::KindMismatch {
            expected: kind.to_string(),
            found: manifest.kind.to_string(),
        });
    }
    Ok(())
}

fn arrays(names: &[&str]) -> Vec<(String, String)> {
    names
        .iter()
        .map(|n| (n.to_string(), format!("{n}.f32")))
        .collect()
}

impl SweepDataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let count = self.records.len();
        let len = self.config.points;
        if let Some(r) = self.records.iter().find(|r| r.current.len() != len || r.charge.len() != len) {
            return Err(Error::DimensionMismatch {
                expected: len,
                found: r.current.len().min(r.charge.len()),
            });
        }
        let manifest = DatasetManifest {
            version: FORMAT_VERSION,
            kind: DatasetKind::Sweep,
            count,
            shape: vec![len],
            seed: self.seed,
            mean: Some(self.mean.clone()),
            rel_sigma: self.rel_sigma,
            normalization: None,
            sweep: Some(self.config),
            map: None,
            devices: self.records.iter().map(|r| r.device.clone()).collect(),
            arrays: arrays(&["current", "charge"]),
        };
        write_manifest(dir, &manifest)?;
        let current: Vec<f32> = self.records.iter().flat_map(|r| r.current.iter().copied()).collect();
        let charge: Vec<f32> = self
            .records
            .iter()
            .flat_map(|r| r.charge.iter().map(|&n| n as f32))
            .collect();
        let kind = DatasetKind::Sweep;
        write_array(&array_path(dir, &manifest, "current")?, kind, &[count, len], &current)?;
        write_array(&array_path(dir, &manifest, "charge")?, kind, &[count, len], &charge)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m = read_manifest(dir)?;
        expect_kind(&m, DatasetKind::Sweep)?;
        let config = m
            .sweep
            .ok_or_else(|| Error::Format("sweep manifest lacks its configuration".into()))?;
        let mean = m
            .mean
            .clone()
            .ok_or_else(|| Error::Format("sweep manifest lacks the mean device".into()))?;
        let len = config.points;
        check_shape("record", &m.shape, &[len])?;
        if m.devices.len() != m.count {
            return Err(Error::DimensionMismatch {
                expected: m.count,
                found: m.devices.len(),
            });
        }
        let (h, current) = read_array(&array_path(dir, &m, "current")?, Some(DatasetKind::Sweep))?;
        check_shape("current", &h.shape, &[m.count, len])?;
        let (h, charge) = read_array(&array_path(dir, &m, "charge")?, Some(DatasetKind::Sweep))?;
        check_shape("charge", &h.shape, &[m.count, len])?;
        let v_p = linspace(config.range.0, config.range.1, len);
        let records = m
            .devices
            .iter()
            .enumerate()
            .map(|(i, d)| {
                Ok(SweepRecord {
                    device: d.clone(),
                    v_p: v_p.clone(),
                    current: current[i * len..(i + 1) * len].to_vec(),
                    charge: charge[i * len..(i + 1) * len]
                        .iter()
                        .map(|&v| to_u32(v, "charge"))
                        .collect::<Result<_>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            seed: m.seed,
            mean,
            rel_sigma: m.rel_sigma,
            config,
            records,
        })
    }
}

impl MapDataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let count = self.records.len();
        let (w, h) = self.config.resolution;
        let px = w * h;
        if let Some(r) = self.records.iter().find(|r| r.current.len() != px || r.state.len() != px) {
            return Err(Error::DimensionMismatch {
                expected: px,
                found: r.current.len().min(r.state.len()),
            });
        }
        let manifest = DatasetManifest {
            version: FORMAT_VERSION,
            kind: DatasetKind::Map,
            count,
            shape: vec![h, w],
            seed: self.seed,
            mean: Some(self.mean.clone()),
            rel_sigma: self.rel_sigma,
            normalization: None,
            sweep: None,
            map: Some(self.config),
            devices: self.records.iter().map(|r| r.device.clone()).collect(),
            arrays: arrays(&["current", "state"]),
        };
        write_manifest(dir, &manifest)?;
        let current: Vec<f32> = self.records.iter().flat_map(|r| r.current.iter().copied()).collect();
        let state: Vec<f32> = self
            .records
            .iter()
            .flat_map(|r| r.state.iter().map(|s| s.index() as f32))
            .collect();
        let kind = DatasetKind::Map;
        write_array(&array_path(dir, &manifest, "current")?, kind, &[count, h, w], &current)?;
        write_array(&array_path(dir, &manifest, "state")?, kind, &[count, h, w], &state)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m = read_manifest(dir)?;
        expect_kind(&m, DatasetKind::Map)?;
        let config = m
            .map
            .ok_or_else(|| Error::Format("map manifest lacks its configuration".into()))?;
        let mean = m
            .mean
            .clone()
            .ok_or_else(|| Error::Format("map manifest lacks the mean device".into()))?;
        let (w, h) = config.resolution;
        check_shape("record", &m.shape, &[h, w])?;
        if m.devices.len() != m.count {
            return Err(Error::DimensionMismatch {
                expected: m.count,
                found: m.devices.len(),
            });
        }
        let (hd, current) = read_array(&array_path(dir, &m, "current")?, Some(DatasetKind::Map))?;
        check_shape("current", &hd.shape, &[m.count, h, w])?;
        let (hd, state) = read_array(&array_path(dir, &m, "state")?, Some(DatasetKind::Map))?;
        check_shape("state", &hd.shape, &[m.count, h, w])?;
        let v_x = linspace(config.x_range.0, config.x_range.1, w);
        let v_y = linspace(config.y_range.0, config.y_range.1, h);
        let px = w * h;
        let records = m
            .devices
            .iter()
            .enumerate()
            .map(|(i, d)| {
                Ok(MapRecord {
                    device: d.clone(),
                    v_x: v_x.clone(),
                    v_y: v_y.clone(),
                    current: current[i * px..(i + 1) * px].to_vec(),
                    state: state[i * px..(i + 1) * px]
                        .iter()
                        .map(|&v| to_label(v))
                        .collect::<Result<_>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            seed: m.seed,
            mean,
            rel_sigma: m.rel_sigma,
            config,
            records,
        })
    }
}

impl SubMapDataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let count = self.samples.len();
        let s = self.size;
        if let Some(x) = self.samples.iter().find(|x| x.pixels.len() != s * s) {
            return Err(Error::DimensionMismatch {
                expected: s * s,
                found: x.pixels.len(),
            });
        }
        let manifest = DatasetManifest {
            version: FORMAT_VERSION,
            kind: DatasetKind::Submap,
            count,
            shape: vec![s, s],
            seed: self.seed,
            mean: None,
            rel_sigma: 0.0,
            normalization: self.normalization,
            sweep: None,
            map: None,
            devices: Vec::new(),
            arrays: arrays(&["pixels", "counts"]),
        };
        write_manifest(dir, &manifest)?;
        let pixels: Vec<f32> = self.samples.iter().flat_map(|x| x.pixels.iter().copied()).collect();
        let counts: Vec<f32> = self
            .samples
            .iter()
            .flat_map(|x| x.counts.iter().map(|&c| c as f32))
            .collect();
        let kind = DatasetKind::Submap;
        write_array(&array_path(dir, &manifest, "pixels")?, kind, &[count, s, s], &pixels)?;
        write_array(&array_path(dir, &manifest, "counts")?, kind, &[count, 4], &counts)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m = read_manifest(dir)?;
        expect_kind(&m, DatasetKind::Submap)?;
        let s = match m.shape.as_slice() {
            &[a, b] if a == b && a > 0 => a,
            other => {
                return Err(Error::Format(format!("sub-map shape {other:?} is not square")))
            }
        };
        let (h, pixels) = read_array(&array_path(dir, &m, "pixels")?, Some(DatasetKind::Submap))?;
        check_shape("pixels", &h.shape, &[m.count, s, s])?;
        let (h, counts) = read_array(&array_path(dir, &m, "counts")?, Some(DatasetKind::Submap))?;
        check_shape("counts", &h.shape, &[m.count, 4])?;
        let samples = (0..m.count)
            .map(|i| {
                let mut c = [0u32; 4];
                for (k, v) in c.iter_mut().enumerate() {
                    *v = to_u32(counts[4 * i + k], "label count")?;
                }
                if c.iter().sum::<u32>() as usize != s * s {
                    return Err(Error::Format(format!(
                        "sample {i}: label counts do not cover the window"
                    )));
                }
                Ok(SubMapSample {
                    size: s,
                    pixels: pixels[i * s * s..(i + 1) * s * s].to_vec(),
                    counts: c,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            seed: m.seed,
            size: s,
            normalization: m.normalization,
            samples,
        })
    }
}

/// Whether the dataset stored at `dir` was produced by exactly these generation inputs.
fn manifest_matches(
    dir: &Path,
    kind: DatasetKind,
    mean: &DeviceSpec,
    n_devices: usize,
    rel_sigma: f64,
    seed: u64,
    check: impl Fn(&DatasetManifest) -> bool,
) -> bool {
    match read_manifest(dir) {
        Ok(m) => {
            m.kind == kind
                && m.count == n_devices
                && m.seed == seed
                && m.rel_sigma == rel_sigma
                && m.mean.as_ref() == Some(mean)
                && check(&m)
        }
        Err(_) => false,
    }
}

impl SweepDataset {
    /// Load the dataset cached at `dir` if it matches the inputs, else generate and store it.
    pub fn load_or_generate(
        dir: &Path,
        mean: &DeviceSpec,
        n_devices: usize,
        rel_sigma: f64,
        seed: u64,
        config: &SweepConfig,
    ) -> Result<Self> {
        let same = |m: &DatasetManifest| m.sweep.as_ref() == Some(config);
        if manifest_matches(dir, DatasetKind::Sweep, mean, n_devices, rel_sigma, seed, same) {
            if let Ok(ds) = Self::load(dir) {
                return Ok(ds);
            }
        }
        let ds = gen_sweep_dataset(mean, n_devices, rel_sigma, seed, config)?;
        ds.save(dir)?;
        Ok(ds)
    }
}

impl MapDataset {
    /// Load the dataset cached at `dir` if it matches the inputs, else generate and store it.
    pub fn load_or_generate(
        dir: &Path,
        mean: &DeviceSpec,
        n_devices: usize,
        rel_sigma: f64,
        seed: u64,
        config: &MapConfig,
    ) -> Result<Self> {
        let same = |m: &DatasetManifest| m.map.as_ref() == Some(config);
        if manifest_matches(dir, DatasetKind::Map, mean, n_devices, rel_sigma, seed, same) {
            if let Ok(ds) = Self::load(dir) {
                return Ok(ds);
            }
        }
        let ds = gen_map_dataset(mean, n_devices, rel_sigma, seed, config)?;
        ds.save(dir)?;
        Ok(ds)
    }
}

// ---------------------------------------------------------------------------
// Map stacks

/// Evenly spaced axis of one map dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Axis {
    pub fn new(name: impl Into<String>, min: f64, max: f64, points: usize) -> Result<Self> {
        if points < 2 || !(max > min) {
            return Err(Error::InvalidArgument(format!(
                "axis needs ≥2 points over an increasing range, got {points} on ({min}, {max})"
            )));
        }
        Ok(Self {
            name: name.into(),
            min,
            max,
            points,
        })
    }

    pub fn pitch(&self) -> f64 {
        (self.max - self.min) / (self.points - 1) as f64
    }

    pub fn values(&self) -> Vec<f64> {
        linspace(self.min, self.max, self.points)
    }
}

/// Axis metadata for an imported stack: two in-map axes and the named slice axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackAxes {
    pub x: Axis,
    pub y: Axis,
    pub slice_name: String,
    pub slice_values: Vec<f64>,
}

/// Set of 2-D current maps at discrete values of a third gate voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapStack {
    pub axes: StackAxes,
    /// One row-major `y.points × x.points` map per slice value.
    pub slices: Vec<Vec<f32>>,
}

impl MapStack {
    pub fn new(axes: StackAxes, slices: Vec<Vec<f32>>) -> Result<Self> {
        let px = axes.x.points * axes.y.points;
        if slices.is_empty() || slices.len() != axes.slice_values.len() {
            return Err(Error::DimensionMismatch {
                expected: axes.slice_values.len(),
                found: slices.len(),
            });
        }
        if let Some(s) = slices.iter().find(|s| s.len() != px) {
            return Err(Error::DimensionMismatch {
                expected: px,
                found: s.len(),
            });
        }
        if axes.slice_values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "slice values must be strictly increasing".into(),
            ));
        }
        Ok(Self { axes, slices })
    }

    /// Load slices from headerless CSV matrices (rows = y, columns = x).
    pub fn from_csv_files(axes: StackAxes, files: &[PathBuf]) -> Result<Self> {
        let slices = files
            .iter()
            .map(|f| read_csv_matrix(f, axes.y.points, axes.x.points))
            .collect::<Result<Vec<_>>>()?;
        Self::new(axes, slices)
    }

    /// Load a `[slices, y, x]` array written with [`MapStack::save_array`] or a map dataset's current array.
    pub fn from_array_file(axes: StackAxes, path: &Path) -> Result<Self> {
        let (h, data) = read_array(path, None)?;
        if !matches!(h.kind, DatasetKind::Stack | DatasetKind::Map) {
            return Err(Error::KindMismatch {
                expected: "stack or map".into(),
                found: h.kind.to_string(),
            });
        }
        let n = axes.slice_values.len();
        check_shape("stack", &h.shape, &[n, axes.y.points, axes.x.points])?;
        let px = axes.y.points * axes.x.points;
        let slices = data.chunks_exact(px).map(<[f32]>::to_vec).collect();
        Self::new(axes, slices)
    }

    /// Write the slices as one array plus an `axes.json` beside it.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("axes.json"), serde_json::to_string_pretty(&self.axes)?)?;
        self.save_array(&dir.join("stack.f32"))
    }

    pub fn save_array(&self, path: &Path) -> Result<()> {
        let data: Vec<f32> = self.slices.iter().flatten().copied().collect();
        let shape = [self.slices.len(), self.axes.y.points, self.axes.x.points];
        write_array(path, DatasetKind::Stack, &shape, &data)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let axes: StackAxes = serde_json::from_str(&fs::read_to_string(dir.join("axes.json"))?)?;
        Self::from_array_file(axes, &dir.join("stack.f32"))
    }

    /// Simulate one map per value of `slice_gate` over the geometry of `config`.
    pub fn simulate(
        device: &DeviceSpec,
        config: &MapConfig,
        slice_gate: usize,
        slice_values: &[f64],
    ) -> Result<Self> {
        device.validate()?;
        if slice_gate >= device.gates.len() || [config.gates.0, config.gates.1].contains(&slice_gate) {
            return Err(Error::InvalidArgument(format!(
                "slice gate {slice_gate} must be a third gate of the {}-gate device",
                device.gates.len()
            )));
        }
        let (w, h) = config.resolution;
        let axes = StackAxes {
            x: Axis::new(format!("gate{}", config.gates.0), config.x_range.0, config.x_range.1, w)?,
            y: Axis::new(format!("gate{}", config.gates.1), config.y_range.0, config.y_range.1, h)?,
            slice_name: format!("gate{slice_gate}"),
            slice_values: slice_values.to_vec(),
        };
        let sim = Simulator::for_device(device, config.simulation)?;
        let (v_x, v_y) = (axes.x.values(), axes.y.values());
        let slices = slice_values
            .iter()
            .map(|&z| {
                let d = device.with_gate_voltage(slice_gate, z)?;
                let map = sim.map(&d, config.gates, &v_x, &v_y)?;
                Ok(map.points.iter().map(|p| p.current as f32).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(axes, slices)
    }

    /// Index of the slice nearest to `value`; equidistant ties pick the lower value.
    pub fn nearest_slice(&self, value: f64) -> usize {
        let mut best = 0;
        for (i, &z) in self.axes.slice_values.iter().enumerate() {
            if (z - value).abs() < (self.axes.slice_values[best] - value).abs() {
                best = i;
            }
        }
        best
    }
}

fn read_csv_matrix(path: &Path, rows: usize, cols: usize) -> Result<Vec<f32>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::with_capacity(rows * cols);
    let mut n_rows = 0;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = line
            .split(',')
            .map(|c| {
                c.trim().parse::<f32>().map_err(|e| {
                    Error::Format(format!("{}:{}: {e}", path.display(), ln + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != cols {
            return Err(Error::Format(format!(
                "{}:{}: {} columns, expected {cols}",
                path.display(),
                ln + 1,
                vals.len()
            )));
        }
        out.extend(vals);
        n_rows += 1;
    }
    if n_rows != rows {
        return Err(Error::Format(format!(
            "{}: {n_rows} rows, expected {rows}",
            path.display()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn toy_map(w: usize, h: usize, label: impl Fn(usize, usize) -> StateLabel) -> MapRecord {
        let mut state = Vec::new();
        let mut current = Vec::new();
        for r in 0..h {
            for c in 0..w {
                state.push(label(r, c));
                current.push((r * w + c) as f32);
            }
        }
        MapRecord {
            device: DeviceSpec::five_gate(0.0, 0.0),
            v_x: linspace(0.0, 1.0, w),
            v_y: linspace(0.0, 1.0, h),
            current,
            state,
        }
    }

    #[test]
    fn pure_window_is_one_hot() {
        let m = toy_map(40, 40, |_, _| StateLabel::DD);
        let s = m.window(3, 5, 30).unwrap();
        assert_eq!(s.prob(), ProbabilityVector::one_hot(StateLabel::DD));
    }

    #[test]
    fn half_and_half_window() {
        let m = toy_map(30, 30, |_, c| if c < 15 { StateLabel::SD } else { StateLabel::DD });
        let p = m.window(0, 0, 30).unwrap().prob();
        assert_eq!(p.0, [0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn window_pixels_follow_row_major_layout() {
        let m = toy_map(10, 8, |_, _| StateLabel::SD);
        let s = m.window(2, 3, 4).unwrap();
        assert_eq!(s.pixels[0], (2 * 10 + 3) as f32);
        assert_eq!(s.pixels[5], (3 * 10 + 4) as f32);
        assert!(m.window(5, 0, 4).is_err());
    }

    #[test]
    fn normalization_modes() {
        let mut a = vec![1.0, -5.0, 2.5];
        assert!(normalize_current(&mut a, Normalization::MaxAbs).unwrap());
        assert_eq!(a, vec![0.2, -1.0, 0.5]);
        let mut b = vec![1.0, 2.0];
        normalize_current(&mut b, Normalization::Constant(1.0)).unwrap();
        assert_eq!(b, vec![1.0, 2.0]);
        let mut z = vec![0.0; 4];
        assert!(!normalize_current(&mut z, Normalization::MaxAbs).unwrap());
        assert!(normalize_current(&mut b, Normalization::Constant(0.0)).is_err());
    }

    #[test]
    fn probability_vector_validation() {
        assert!(ProbabilityVector::new([0.25; 4]).is_ok());
        assert!(ProbabilityVector::new([0.5, 0.5, 0.5, 0.0]).is_err());
        assert!(ProbabilityVector::new([-0.1, 0.6, 0.5, 0.0]).is_err());
        assert_eq!(
            ProbabilityVector([0.1, 0.2, 0.4, 0.3]).argmax(),
            StateLabel::SD
        );
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let (train, test) = split_indices(100, 0.1, 7);
        assert_eq!(test.len(), 10);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_indices(100, 0.1, 7), (train, test));
    }

    #[test]
    fn extracted_probs_match_parent_windows() {
        let maps: Vec<MapRecord> = (0..3)
            .map(|k| {
                toy_map(40, 35, move |r, c| StateLabel::ALL[(r / 7 + c / 9 + k) % 4])
            })
            .collect();
        let ds = extract_submaps(&maps, 30, 50, 11).unwrap();
        assert_eq!(ds.samples.len(), 50);
        for s in &ds.samples {
            let p = s.prob();
            assert!((p.0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // locate the window by its first pixel value
            let first = s.pixels[0] as usize;
            let (r, c) = (first / 40, first % 40);
            let parent = maps.iter().find(|m| m.window(r, c, 30).unwrap() == *s);
            assert!(parent.is_some());
        }
        assert!(extract_submaps(&maps, 36, 1, 0).is_err());
    }

    fn small_sweep_config() -> SweepConfig {
        SweepConfig {
            points: 24,
            range: (150.0, 300.0),
            ..SweepConfig::default()
        }
    }

    #[test]
    fn sweep_dataset_is_deterministic_and_round_trips() {
        let mean = DeviceSpec::three_gate(0.0);
        let cfg = small_sweep_config();
        let a = gen_sweep_dataset(&mean, 3, 0.05, 42, &cfg).unwrap();
        let b = gen_sweep_dataset(&mean, 3, 0.05, 42, &cfg).unwrap();
        assert_eq!(a, b);
        // slot streams do not depend on the dataset size
        let c = gen_sweep_dataset(&mean, 2, 0.05, 42, &cfg).unwrap();
        assert_eq!(a.records[..2], c.records[..]);
        for r in &a.records {
            assert!(r.charge.windows(2).all(|w| w[1] >= w[0]));
        }
        let dir = tempdir().unwrap();
        a.save(dir.path()).unwrap();
        let back = SweepDataset::load(dir.path()).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn cache_reuses_matching_datasets_only() {
        let mean = DeviceSpec::three_gate(0.0);
        let cfg = SweepConfig {
            points: 6,
            ..small_sweep_config()
        };
        let dir = tempdir().unwrap();
        let a = SweepDataset::load_or_generate(dir.path(), &mean, 1, 0.05, 5, &cfg).unwrap();
        let stamp = fs::metadata(dir.path().join("current.f32")).unwrap().modified().unwrap();
        let b = SweepDataset::load_or_generate(dir.path(), &mean, 1, 0.05, 5, &cfg).unwrap();
        assert_eq!(a, b);
        let again = fs::metadata(dir.path().join("current.f32")).unwrap().modified().unwrap();
        assert_eq!(stamp, again);
        let c = SweepDataset::load_or_generate(dir.path(), &mean, 1, 0.05, 6, &cfg).unwrap();
        assert_eq!(c.seed, 6);
        assert_eq!(SweepDataset::load(dir.path()).unwrap(), c);
    }

    #[test]
    fn zero_spread_sweep_is_the_mean_device() {
        let mean = DeviceSpec::three_gate(0.0);
        let ds = gen_sweep_dataset(&mean, 1, 0.0, 3, &small_sweep_config()).unwrap();
        assert_eq!(ds.records[0].device, mean);
        assert_eq!(ds.records[0].charge[0], 0);
    }

    #[test]
    fn map_dataset_round_trips_bit_exact() {
        let mean = DeviceSpec::five_gate(0.0, 0.0);
        let cfg = MapConfig {
            resolution: (6, 5),
            ..MapConfig::default()
        };
        let ds = gen_map_dataset(&mean, 2, 0.05, 9, &cfg).unwrap();
        let dir = tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = MapDataset::load(dir.path()).unwrap();
        assert_eq!(ds, back);
        for (a, b) in ds.records.iter().zip(&back.records) {
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.current), bits(&b.current));
        }
    }

    #[test]
    fn submap_dataset_round_trips() {
        let maps = vec![toy_map(40, 40, |r, _| StateLabel::ALL[r % 4])];
        let mut ds = extract_submaps(&maps, 30, 5, 1).unwrap();
        ds.normalize(Normalization::MaxAbs).unwrap();
        let dir = tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert_eq!(SubMapDataset::load(dir.path()).unwrap(), ds);
    }

    #[test]
    fn truncated_payload_reports_sizes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.f32");
        write_array(&path, DatasetKind::Map, &[2, 3], &[1.0; 6]).unwrap();
        let full = fs::read(&path).unwrap();
        fs::write(&path, &full[..full.len() - 5]).unwrap();
        match read_array(&path, None) {
            Err(Error::Truncated { expected, found, .. }) => {
                assert_eq!(expected, full.len());
                assert_eq!(found, full.len() - 5);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn kind_mismatch_is_reported() {
        let dir = tempdir().unwrap();
        let maps = vec![toy_map(30, 30, |_, _| StateLabel::SD)];
        let ds = extract_submaps(&maps, 30, 2, 1).unwrap();
        ds.save(dir.path()).unwrap();
        assert!(matches!(
            SweepDataset::load(dir.path()),
            Err(Error::KindMismatch { .. })
        ));
        // manifest claims sweep but the payload is a map array
        let mut m = read_manifest(dir.path()).unwrap();
        m.kind = DatasetKind::Sweep;
        m.sweep = Some(SweepConfig {
            points: 900,
            ..SweepConfig::default()
        });
        m.mean = Some(DeviceSpec::three_gate(0.0));
        m.shape = vec![900];
        m.arrays = vec![
            ("current".into(), "pixels.f32".into()),
            ("charge".into(), "pixels.f32".into()),
        ];
        m.devices = vec![DeviceSpec::three_gate(0.0); 2];
        write_manifest(dir.path(), &m).unwrap();
        assert!(matches!(
            SweepDataset::load(dir.path()),
            Err(Error::KindMismatch { .. })
        ));
    }

    #[test]
    fn stack_nearest_slice_prefers_lower_on_tie() {
        let axes = StackAxes {
            x: Axis::new("p1", 0.0, 1.0, 2).unwrap(),
            y: Axis::new("p2", 0.0, 1.0, 2).unwrap(),
            slice_name: "b2".into(),
            slice_values: vec![0.0, 10.0, 20.0],
        };
        let stack = MapStack::new(axes, vec![vec![0.0; 4]; 3]).unwrap();
        assert_eq!(stack.nearest_slice(5.0), 0);
        assert_eq!(stack.nearest_slice(5.1), 1);
        assert_eq!(stack.nearest_slice(-3.0), 0);
        assert_eq!(stack.nearest_slice(99.0), 2);
    }

    #[test]
    fn stack_round_trips_through_csv_and_binary() {
        let dir = tempdir().unwrap();
        let axes = StackAxes {
            x: Axis::new("p1", 0.0, 2.0, 3).unwrap(),
            y: Axis::new("p2", 0.0, 1.0, 2).unwrap(),
            slice_name: "b2".into(),
            slice_values: vec![-1.0, 1.0],
        };
        let slices = vec![vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![0.5; 6]];
        let files: Vec<PathBuf> = slices
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let p = dir.path().join(format!("s{i}.csv"));
                let text: String = s
                    .chunks(3)
                    .map(|r| r.iter().map(f32::to_string).collect::<Vec<_>>().join(",") + "\n")
                    .collect();
                fs::write(&p, text).unwrap();
                p
            })
            .collect();
        let stack = MapStack::from_csv_files(axes.clone(), &files).unwrap();
        assert_eq!(stack.slices, slices);
        stack.save(&dir.path().join("bin")).unwrap();
        assert_eq!(MapStack::load(&dir.path().join("bin")).unwrap(), stack);
        fs::write(&files[1], "1,2\n3,4\n").unwrap();
        assert!(MapStack::from_csv_files(axes, &files).is_err());
    }

    proptest! {
        #[test]
        fn array_files_round_trip_bit_exact(data in proptest::collection::vec(any::<f32>(), 1..64)) {
            let dir = tempdir().unwrap();
            let path = dir.path().join("x.f32");
            write_array(&path, DatasetKind::Submap, &[data.len()], &data).unwrap();
            let (h, back) = read_array(&path, Some(DatasetKind::Submap)).unwrap();
            prop_assert_eq!(h.shape, vec![data.len()]);
            let a: Vec<u32> = data.iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = back.iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn max_abs_peak_is_one(data in proptest::collection::vec(-1e3f32..1e3, 1..50)) {
            let mut d = data.clone();
            if normalize_current(&mut d, Normalization::MaxAbs).unwrap() {
                let m = d.iter().fold(0.0f32, |a, v| a.max(v.abs()));
                prop_assert!((m - 1.0).abs() < 1e-6);
            } else {
                prop_assert!(data.iter().all(|&v| v == 0.0));
            }
        }
    }
}
