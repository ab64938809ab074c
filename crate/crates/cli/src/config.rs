//! Run configuration: a TOML file with one table per subcommand, overridden
//! field by field from the command line. Every run writes the fully resolved
//! configuration next to its outputs so it can be replayed with `--config`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use qdarray_core::dataset::{MapConfig, SweepConfig};
use qdarray_core::DeviceSpec;
use qdarray_nn::TrainConfig;
use qdarray_tune::TuneConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Context, Result};

pub const SNAPSHOT_NAME: &str = "resolved-config.toml";

/// A device given by preset name, by path to a JSON/TOML file, or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeviceRef {
    Inline(DeviceSpec),
    Named(String),
}

impl DeviceRef {
    pub fn resolve(&self) -> Result<DeviceSpec> {
        let spec = match self {
            DeviceRef::Inline(d) => d.clone(),
            DeviceRef::Named(name) => match name.as_str() {
                "three-gate" => DeviceSpec::three_gate(0.0),
                "five-gate" => DeviceSpec::five_gate(0.0, 0.0),
                path => {
                    let text = fs::read_to_string(path).map_err(|e| {
                        CliError::usage(format!(
                            "device `{path}` is neither a preset (three-gate, five-gate) nor a readable file: {e}"
                        ))
                    })?;
                    if path.ends_with(".toml") {
                        toml::from_str(&text)
                            .map_err(|e| CliError::validation(format!("device file {path}: {e}")))?
                    } else {
                        DeviceSpec::from_json(&text).context(|| format!("device file {path}"))?
                    }
                }
            },
        };
        spec.validate().context(|| "device".to_string())?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    Sweep,
    Map,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SimulateSection {
    pub device: Option<DeviceRef>,
    /// Defaults to a sweep for devices with at most three gates.
    pub mode: Option<SimMode>,
    pub sweep: SweepConfig,
    pub map: MapConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetChoice {
    Sweep,
    Map,
    Submap,
    /// Map stack, simulated or imported.
    Stack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GenDatasetSection {
    pub kind: Option<DatasetChoice>,
    pub device: Option<DeviceRef>,
    /// Number of devices (sweep, map).
    pub count: Option<usize>,
    pub rel_sigma: f64,
    pub sweep: SweepConfig,
    pub map: MapConfig,
    /// Map dataset that sub-maps are cut from.
    pub source: Option<PathBuf>,
    pub size: usize,
    /// Number of sub-maps.
    pub samples: Option<usize>,
    /// Gate stepped between stack slices.
    pub slice_gate: usize,
    pub slice_values: Option<Vec<f64>>,
    /// CSV matrices or one binary array to import as a stack.
    pub import: Option<Vec<PathBuf>>,
    /// `StackAxes` JSON describing imported files.
    pub axes: Option<PathBuf>,
}

impl Default for GenDatasetSection {
    fn default() -> Self {
        Self {
            kind: None,
            device: None,
            count: None,
            rel_sigma: 0.05,
            sweep: SweepConfig::default(),
            map: MapConfig::default(),
            source: None,
            size: qdarray_tune::WINDOW_PIXELS,
            samples: None,
            slice_gate: 2,
            slice_values: None,
            import: None,
            axes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainSection {
    pub dataset: Option<PathBuf>,
    /// Defaults to 0.2 for sweeps and maps, 0.1 for sub-maps.
    pub test_fraction: Option<f64>,
    /// Hidden widths of the per-pixel state network.
    pub hidden: Option<Vec<usize>>,
    pub dropout: f64,
    pub train: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            dataset: None,
            test_fraction: None,
            hidden: None,
            dropout: 0.5,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalSection {
    pub weights: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    /// `split.json` written by `train`; without it every record is scored.
    pub split: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderChoice {
    Simulator,
    Stack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TuneSection {
    pub weights: Option<PathBuf>,
    pub provider: ProviderChoice,
    pub device: Option<DeviceRef>,
    pub map: MapConfig,
    pub stack: Option<PathBuf>,
    /// Fixed start; when absent, starts are drawn uniformly from the seed.
    pub start: Option<Vec<f64>>,
    pub trials: usize,
    pub target: [f64; 4],
    pub tune: TuneConfig,
}

impl Default for TuneSection {
    fn default() -> Self {
        Self {
            weights: None,
            provider: ProviderChoice::Simulator,
            device: None,
            map: MapConfig::default(),
            stack: None,
            start: None,
            trials: 1,
            target: [0.0, 0.0, 1.0, 0.0],
            tune: TuneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExportSection {
    pub input: Option<PathBuf>,
    /// Record, sample or slice to export; all slices of a stack when absent.
    pub index: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub simulate: SimulateSection,
    pub gen_dataset: GenDatasetSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub tune: TuneSection,
    pub export: ExportSection,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }
}

/// Settings shared by every subcommand after resolution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Common {
    pub seed: u64,
    pub threads: usize,
    pub out: PathBuf,
}

/// Write `section` under `[command]` together with the common settings.
pub fn write_snapshot<S: Serialize>(
    path: &Path,
    common: &Common,
    command: &str,
    section: &S,
) -> Result<()> {
    let mut table = toml::Table::new();
    table.insert("seed".into(), toml::Value::Integer(common.seed as i64));
    table.insert("threads".into(), toml::Value::Integer(common.threads as i64));
    table.insert(
        "out".into(),
        toml::Value::String(common.out.display().to_string()),
    );
    let value = toml::Value::try_from(section)
        .map_err(|e| CliError::validation(format!("serializing resolved config: {e}")))?;
    table.insert(command.into(), value);
    let text = toml::to_string_pretty(&table)
        .map_err(|e| CliError::validation(format!("serializing resolved config: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

/// Output directory that removes what a failed run left behind.
pub struct Outputs {
    dir: PathBuf,
    created: bool,
    before: BTreeSet<PathBuf>,
    keep: bool,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self> {
        let created = !dir.exists();
        fs::create_dir_all(dir).context(|| format!("creating {}", dir.display()))?;
        let before = list(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created,
            before,
            keep: false,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn commit(mut self) {
        self.keep = true;
    }
}

fn list(dir: &Path) -> Result<BTreeSet<PathBuf>> {
    let mut out = BTreeSet::new();
    for entry in fs::read_dir(dir)? {
        out.insert(entry?.path());
    }
    Ok(out)
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.keep {
            return;
        }
        if self.created {
            let _ = fs::remove_dir_all(&self.dir);
            return;
        }
        if let Ok(now) = list(&self.dir) {
            for p in now.difference(&self.before) {
                let _ = if p.is_dir() {
                    fs::remove_dir_all(p)
                } else {
                    fs::remove_file(p)
                };
            }
        }
    }
}
