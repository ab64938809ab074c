//! Subcommand implementations.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use qdarray_core::dataset::{
    extract_submaps, gen_map_dataset, gen_sweep_dataset, read_manifest, split_indices, DatasetKind,
    MapConfig, MapDataset, MapStack, ProbabilityVector, StackAxes, SubMapDataset, SweepConfig,
    SweepDataset,
};
use qdarray_core::simulate::{linspace, write_sweep_csv};
use qdarray_core::{DeviceSpec, Simulator, StateLabel};
use qdarray_nn::{load_weights, save_weights, train_with, Network};
use qdarray_tune::{
    tune, MapProvider, SimulatorProvider, StackProvider, TuneStatus, WINDOW_PIXELS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::args::{
    Cli, Command, EvalArgs, ExportArgs, GenDatasetArgs, GeometryArgs, SimulateArgs, TrainArgs,
    TuneArgs,
};
use crate::config::{
    write_snapshot, Common, ConfigFile, DatasetChoice, DeviceRef, Outputs, ProviderChoice,
    SimMode, SNAPSHOT_NAME,
};
use crate::error::{CliError, Context, Result};
use crate::pgm;
use crate::tasks::{Task, TaskData};

pub const WEIGHTS_FILE: &str = "weights.qdnn";
pub const SPLIT_FILE: &str = "split.json";
pub const REPORT_FILE: &str = "report.json";

/// Parse the config file, apply flags and run the subcommand.
pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let common = Common {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        threads: cli
            .threads
            .or(file.threads)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
        out: cli
            .out
            .clone()
            .or(file.out.clone())
            .unwrap_or_else(|| PathBuf::from("qdarray-out")),
    };
    if common.threads == 0 {
        return Err(CliError::usage("--threads must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.threads)
        .build()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Simulate(a) => simulate(a, file, &common),
        Command::GenDataset(a) => gen_dataset(a, file, &common),
        Command::Train(a) => train(a, file, &common),
        Command::Eval(a) => eval(a, file, &common),
        Command::Tune(a) => tune_cmd(a, file, &common),
        Command::Export(a) => export(a, file, &common),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_with(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(path)?;
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn apply_geometry(g: &GeometryArgs, sweep: &mut SweepConfig, map: &mut MapConfig) {
    if let Some(v) = g.gate {
        sweep.gate = v;
    }
    if let Some(v) = g.range {
        sweep.range = v;
    }
    if let Some(v) = g.points {
        sweep.points = v;
    }
    if let Some(v) = g.gates {
        map.gates = v;
    }
    if let Some(v) = g.x_range {
        map.x_range = v;
    }
    if let Some(v) = g.y_range {
        map.y_range = v;
    }
    if let Some(v) = g.resolution {
        map.resolution = v;
    }
}

fn echo_device(device: &DeviceSpec) -> impl Fn(qdarray_core::Error) -> CliError + '_ {
    move |e| {
        let e = CliError::from(e);
        CliError::new(
            e.kind,
            format!("{}\ndevice: {}", e.message, device.to_json().unwrap_or_default()),
        )
    }
}

fn write_map_images(
    out: &Outputs,
    stem: &str,
    current: &[f64],
    states: Option<&[StateLabel]>,
    width: usize,
    height: usize,
) -> Result<()> {
    write_with(&out.path(&format!("{stem}_current.pgm")), |w| {
        Ok(pgm::heatmap(current, width, height, w)?)
    })?;
    if let Some(s) = states {
        write_with(&out.path(&format!("{stem}_state.pgm")), |w| {
            Ok(pgm::states(s, width, height, w)?)
        })?;
    }
    Ok(())
}

fn simulate(args: SimulateArgs, file: ConfigFile, common: &Common) -> Result<()> {
    let mut s = file.simulate;
    if let Some(d) = args.device {
        s.device = Some(DeviceRef::Named(d));
    }
    if let Some(m) = args.mode {
        s.mode = Some(m);
    }
    apply_geometry(&args.geometry, &mut s.sweep, &mut s.map);
    let device = s
        .device
        .as_ref()
        .ok_or_else(|| CliError::missing("simulate.device", "--device"))?
        .resolve()?;
    let mode = s.mode.unwrap_or(if device.gates.len() <= 3 {
        SimMode::Sweep
    } else {
        SimMode::Map
    });
    s.device = Some(DeviceRef::Inline(device.clone()));
    s.mode = Some(mode);
    match mode {
        SimMode::Sweep => s.sweep.validate()?,
        SimMode::Map => s.map.validate()?,
    }

    let out = Outputs::create(&common.out)?;
    write_snapshot(&out.path(SNAPSHOT_NAME), common, "simulate", &s)?;
    let echo = echo_device(&device);
    match mode {
        SimMode::Sweep => {
            let cfg = s.sweep;
            let sim = Simulator::for_device(&device, cfg.simulation).map_err(&echo)?;
            let vs = linspace(cfg.range.0, cfg.range.1, cfg.points);
            let points = sim.sweep(&device, cfg.gate, &vs).map_err(&echo)?;
            write_with(&out.path("sweep.csv"), |w| Ok(write_sweep_csv(&vs, &points, w)?))?;
            let charge: Vec<u32> = points.iter().map(|p| p.charge.total()).collect();
            let steps = charge.windows(2).filter(|w| w[1] != w[0]).count();
            let peak = points.iter().map(|p| p.current).fold(0.0, f64::max);
            println!(
                "sweep: {} points, {steps} charge steps, peak current {peak:e}",
                vs.len()
            );
        }
        SimMode::Map => {
            let cfg = s.map;
            let sim = Simulator::for_device(&device, cfg.simulation).map_err(&echo)?;
            let xs = linspace(cfg.x_range.0, cfg.x_range.1, cfg.resolution.0);
            let ys = linspace(cfg.y_range.0, cfg.y_range.1, cfg.resolution.1);
            let map = sim.map(&device, cfg.gates, &xs, &ys).map_err(&echo)?;
            write_with(&out.path("map.csv"), |w| Ok(map.write_csv(w)?))?;
            write_map_images(&out, "map", &map.currents(), Some(&map.states()), xs.len(), ys.len())?;
            let mut cells: Vec<&[u32]> = map.points.iter().map(|p| p.charge.0.as_slice()).collect();
            cells.sort();
            cells.dedup();
            println!(
                "map: {}×{} pixels, {} distinct charge configurations",
                xs.len(),
                ys.len(),
                cells.len()
            );
        }
    }
    out.commit();
    Ok(())
}

fn gen_dataset(args: GenDatasetArgs, file: ConfigFile, common: &Common) -> Result<()> {
    let mut s = file.gen_dataset;
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = args.$field { s.$field = Some(v); } )* };
    }
    set!(kind, count, source, samples, slice_values, import, axes);
    if let Some(d) = args.device {
        s.device = Some(DeviceRef::Named(d));
    }
    if let Some(v) = args.rel_sigma {
        s.rel_sigma = v;
    }
    if let Some(v) = args.size {
        s.size = v;
    }
    if let Some(v) = args.slice_gate {
        s.slice_gate = v;
    }
    apply_geometry(&args.geometry, &mut s.sweep, &mut s.map);
    let kind = s
        .kind
        .ok_or_else(|| CliError::missing("gen-dataset.kind", "--kind"))?;
    let needs_device = matches!(kind, DatasetChoice::Sweep | DatasetChoice::Map)
        || (kind == DatasetChoice::Stack && s.import.is_none());
    let device = if needs_device {
        let d = s
            .device
            .as_ref()
            .ok_or_else(|| CliError::missing("gen-dataset.device", "--device"))?
            .resolve()?;
        s.device = Some(DeviceRef::Inline(d.clone()));
        Some(d)
    } else {
        None
    };
    let count = || s.count.ok_or_else(|| CliError::missing("gen-dataset.count", "--count"));

    let out = Outputs::create(&common.out)?;
    write_snapshot(&out.path(SNAPSHOT_NAME), common, "gen-dataset", &s)?;
    let seed = common.seed;
    match kind {
        DatasetChoice::Sweep => {
            let ds = gen_sweep_dataset(device.as_ref().unwrap(), count()?, s.rel_sigma, seed, &s.sweep)?;
            ds.save(out.dir())?;
            println!("sweep dataset: {} records", ds.records.len());
        }
        DatasetChoice::Map => {
            let ds = gen_map_dataset(device.as_ref().unwrap(), count()?, s.rel_sigma, seed, &s.map)?;
            ds.save(out.dir())?;
            println!("map dataset: {} records", ds.records.len());
        }
        DatasetChoice::Submap => {
            let source = s
                .source
                .as_ref()
                .ok_or_else(|| CliError::missing("gen-dataset.source", "--source"))?;
            let samples = s
                .samples
                .ok_or_else(|| CliError::missing("gen-dataset.samples", "--samples"))?;
            let maps = MapDataset::load(source).context(|| format!("loading {}", source.display()))?;
            let ds = extract_submaps(&maps.records, s.size, samples, seed)?;
            ds.save(out.dir())?;
            println!(
                "sub-map dataset: {} windows of {}×{} from {} maps",
                ds.samples.len(),
                s.size,
                s.size,
                maps.records.len()
            );
        }
        DatasetChoice::Stack => {
            let stack = match &s.import {
                Some(files) => {
                    let axes_path = s
                        .axes
                        .as_ref()
                        .ok_or_else(|| CliError::missing("gen-dataset.axes", "--axes"))?;
                    let axes: StackAxes = serde_json::from_str(
                        &fs::read_to_string(axes_path)
                            .context(|| format!("reading {}", axes_path.display()))?,
                    )?;
                    let is_csv = files
                        .iter()
                        .all(|f| f.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")));
                    match (is_csv, files.as_slice()) {
                        (true, _) => MapStack::from_csv_files(axes, files)?,
                        (false, [one]) => MapStack::from_array_file(axes, one)?,
                        _ => {
                            return Err(CliError::validation(
                                "import takes CSV matrices or exactly one binary array",
                            ))
                        }
                    }
                }
                None => {
                    let values = s
                        .slice_values
                        .as_ref()
                        .ok_or_else(|| CliError::missing("gen-dataset.slice-values", "--slice-values"))?;
                    let d = device.as_ref().unwrap();
                    MapStack::simulate(d, &s.map, s.slice_gate, values).map_err(echo_device(d))?
                }
            };
            stack.save(out.dir())?;
            println!(
                "map stack: {} slices of {}×{}",
                stack.slices.len(),
                stack.axes.x.points,
                stack.axes.y.points
            );
        }
    }
    out.commit();
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub test_fraction: f64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub task: Task,
    pub dataset: PathBuf,
    pub records: usize,
    pub accuracy: f64,
    pub best_epoch: Option<usize>,
}

fn train(args: TrainArgs, file: ConfigFile, common: &Common) -> Result<()> {
    let mut s = file.train;
    if let Some(v) = args.dataset {
        s.dataset = Some(v);
    }
    if let Some(v) = args.test_fraction {
        s.test_fraction = Some(v);
    }
    if let Some(v) = args.hidden {
        s.hidden = Some(v);
    }
    if let Some(v) = args.epochs {
        s.train.epochs = v;
    }
    if let Some(v) = args.batch_size {
        s.train.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        s.train.learning_rate = v;
    }
    if let Some(v) = args.patience {
        s.train.patience = Some(v);
    }
    let dir = s
        .dataset
        .clone()
        .ok_or_else(|| CliError::missing("train.dataset", "--dataset"))?;
    let data = TaskData::load(&dir)?;
    let test_fraction = s.test_fraction.unwrap_or(data.task.default_test_fraction());
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CliError::validation("test fraction must lie in (0, 1)"));
    }
    s.test_fraction = Some(test_fraction);
    s.train.seed = common.seed;
    s.train.loss = data.task.loss();
    s.train.validate()?;
    let spec = data.network_spec(s.hidden.as_deref(), s.dropout);

    let out = Outputs::create(&common.out)?;
    write_snapshot(&out.path(SNAPSHOT_NAME), common, "train", &s)?;
    let (train_idx, test_idx) = split_indices(data.len(), test_fraction, common.seed);
    if train_idx.len() < 2 || test_idx.is_empty() {
        return Err(CliError::validation(format!(
            "{} records are too few for a {test_fraction} test split",
            data.len()
        )));
    }
    let (x, t) = data.gather(&train_idx);
    let mut net = Network::new(spec, common.seed)?;
    let mut metrics = train_with(&mut net, &x, &t, &s.train, |_, e| {
        log::info!(
            "epoch {} train loss {:.5} validation loss {:?}",
            e.epoch,
            e.train_loss,
            e.validation_loss
        );
    })?;
    let accuracy = data.accuracy(&net, &test_idx)?;
    metrics.accuracy = Some(accuracy);

    save_weights(&net, &out.path(WEIGHTS_FILE))?;
    write_with(&out.path("metrics.csv"), |w| Ok(metrics.write_csv(w)?))?;
    write_json(
        &out.path(SPLIT_FILE),
        &Split {
            seed: common.seed,
            test_fraction,
            train: train_idx,
            test: test_idx.clone(),
        },
    )?;
    write_json(
        &out.path(REPORT_FILE),
        &Report {
            task: data.task,
            dataset: dir,
            records: test_idx.len(),
            accuracy,
            best_epoch: Some(metrics.best_epoch),
        },
    )?;
    println!(
        "{:?}: held-out accuracy {accuracy:.4} on {} records (best epoch {})",
        data.task,
        test_idx.len(),
        metrics.best_epoch
    );
    out.commit();
    Ok(())
}

fn eval(args: EvalArgs, file: ConfigFile, common: &Common) -> Result<()> {
    let mut s = file.eval;
    if let Some(v) = args.weights {
        s.weights = Some(v);
    }
    if let Some(v) = args.dataset {
        s.dataset = Some(v);
    }
    if let Some(v) = args.split {
        s.split = Some(v);
    }
    let weights = s
        .weights
        .clone()
        .ok_or_else(|| CliError::missing("eval.weights", "--weights"))?;
    let dir = s
        .dataset
        .clone()
        .ok_or_else(|| CliError::missing("eval.dataset", "--dataset"))?;
    let net = load_weights(&weights).context(|| format!("loading {}", weights.display()))?;
    let data = TaskData::load(&dir)?;
    data.check_network(&net)
        .context(|| format!("{} on {}", weights.display(), dir.display()))?;
    let idx = match &s.split {
        Some(p) => {
            let split: Split = serde_json::from_str(
                &fs::read_to_string(p).context(|| format!("reading {}", p.display()))?,
            )?;
            split.test
        }
        None => (0..data.len()).collect(),
    };

    let out = Outputs::create(&common.out)?;
    write_snapshot(&out.path(SNAPSHOT_NAME), common, "eval", &s)?;
    let accuracy = data.accuracy(&net, &idx)?;
    write_json(
        &out.path("eval.json"),
        &Report {
            task: data.task,
            dataset: dir,
            records: idx.len(),
            accuracy,
            best_epoch: None,
        },
    )?;
    println!("{:?}: accuracy {accuracy:.4} on {} records", data.task, idx.len());
    out.commit();
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub start: Vec<f64>,
    pub status: TuneStatus,
    pub evaluations: usize,
    pub best_center: Vec<f64>,
    pub best_prob: ProbabilityVector,
    pub best_delta: f64,
}

/// Uniform start in `bounds` drawn from stream `trial` of `seed`.
pub fn random_start(bounds: &[(f64, f64)], seed: u64, trial: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    bounds
        .iter()
        .map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
        .collect()
}

fn tune_cmd(args: TuneArgs, file: ConfigFile, common: &Common) -> Result<()> {
    let mut s = file.tune;
    if let Some(v) = args.weights {
        s.weights = Some(v);
    }
    if let Some(v) = args.provider {
        s.provider = v;
    }
    if let Some(d) = args.device {
        s.device = Some(DeviceRef::Named(d));
    }
    if let Some(v) = args.stack {
        s.stack = Some(v);
    }
    if let Some(v) = args.start {
        s.start = Some(v);
    }
    if let Some(v) = args.trials {
        s.trials = v;
    }
    if let Some(v) = args.target {
        s.target = v.try_into().map_err(|v: Vec<f64>| {
            CliError::usage(format!("--target needs 4 probabilities, got {}", v.len()))
        })?;
    }
    if let Some(v) = args.budget {
        s.tune.budget = v;
    }
    if let Some(v) = args.delta_stop {
        s.tune.delta_stop = v;
    }
    if let Some(v) = args.norm {
        s.tune.norm = v.into();
    }
    let mut unused = SweepConfig::default();
    apply_geometry(&args.geometry, &mut unused, &mut s.map);

    let weights = s
        .weights
        .clone()
        .ok_or_else(|| CliError::missing("tune.weights", "--weights"))?;
    let cnn = load_weights(&weights).context(|| format!("loading {}", weights.display()))?;
    let px = WINDOW_PIXELS * WINDOW_PIXELS;
    if cnn.input_size() != px || cnn.output_size() != 4 {
        return Err(CliError::validation(format!(
            "{} maps {} inputs to {} outputs; the tuner needs a {WINDOW_PIXELS}×{WINDOW_PIXELS} state CNN with 4 outputs",
            weights.display(),
            cnn.input_size(),
            cnn.output_size()
        )));
    }
    let target = ProbabilityVector::new(s.target)?;
    if s.trials == 0 {
        return Err(CliError::usage("--trials must be at least 1"));
    }
    s.tune.validate()?;
    let provider: Box<dyn MapProvider> = match s.provider {
        ProviderChoice::Simulator => {
            let device = s
                .device
                .clone()
                .unwrap_or(DeviceRef::Named("five-gate".into()))
                .resolve()?;
            s.device = Some(DeviceRef::Inline(device.clone()));
            s.map.validate()?;
            Box::new(SimulatorProvider::new(&device, &s.map, s.map.simulation, WINDOW_PIXELS)?)
        }
        ProviderChoice::Stack => {
            let dir = s
                .stack
                .as_ref()
                .ok_or_else(|| CliError::missing("tune.stack", "--stack"))?;
            let stack = MapStack::load(dir).context(|| format!("loading stack {}", dir.display()))?;
            let span = StackProvider::pixel_aligned_span(&stack, WINDOW_PIXELS);
            Box::new(StackProvider::new(stack, span, WINDOW_PIXELS)?)
        }
    };
    if let Some(st) = &s.start {
        if st.len() != provider.dims() {
            return Err(CliError::usage(format!(
                "--start has {} coordinates, the provider has {} axes",
                st.len(),
                provider.dims()
            )));
        }
    }

    let out = Outputs::create(&common.out)?;
    write_snapshot(&out.path(SNAPSHOT_NAME), common, "tune", &s)?;
    let bounds = provider.bounds();
    let mut summaries = Vec::with_capacity(s.trials);
    for trial in 0..s.trials {
        let start = s
            .start
            .clone()
            .unwrap_or_else(|| random_start(&bounds, common.seed, trial));
        let trace = tune(provider.as_ref(), &cnn, &start, &target, &s.tune)?;
        let name = if s.trials == 1 {
            "trace.csv".to_string()
        } else {
            format!("trace_{trial:03}.csv")
        };
        write_with(&out.path(&name), |w| Ok(trace.write_csv(w)?))?;
        let best = trace.best_entry();
        println!(
            "trial {trial}: {:?} after {} evaluations, best δ {:.4} at {:?} (p = {})",
            trace.status,
            trace.evaluations(),
            best.delta,
            best.center,
            best.prob
        );
        summaries.push(TrialSummary {
            trial,
            start,
            status: trace.status,
            evaluations: trace.evaluations(),
            best_center: best.center.clone(),
            best_prob: best.prob,
            best_delta: best.delta,
        });
    }
    write_json(&out.path("summary.json"), &summaries)?;
    out.commit();
    Ok(())
}

fn export(args: ExportArgs, file: ConfigFile, common: &Common) -> Result<()> {
    let mut s = file.export;
    if let Some(v) = args.input {
        s.input = Some(v);
    }
    if let Some(v) = args.index {
        s.index = Some(v);
    }
    let input = s
        .input
        .clone()
        .ok_or_else(|| CliError::missing("export.input", "--input"))?;
    if !input.exists() {
        return Err(CliError::validation(format!("{} does not exist", input.display())));
    }
    let out = Outputs::create(&common.out)?;
    write_snapshot(&out.path(SNAPSHOT_NAME), common, "export", &s)?;
    let pick = |n: usize| -> Result<usize> {
        let i = s.index.unwrap_or(0);
        if i >= n {
            return Err(CliError::validation(format!("index {i} out of range ({n} entries)")));
        }
        Ok(i)
    };
    if input.join("axes.json").is_file() {
        let stack = MapStack::load(&input)?;
        let (w, h) = (stack.axes.x.points, stack.axes.y.points);
        let indices: Vec<usize> = match s.index {
            Some(_) => vec![pick(stack.slices.len())?],
            None => (0..stack.slices.len()).collect(),
        };
        for k in indices {
            let slice: Vec<f64> = stack.slices[k].iter().map(|&v| v as f64).collect();
            write_map_images(&out, &format!("slice_{k:03}"), &slice, None, w, h)?;
            write_with(&out.path(&format!("slice_{k:03}.csv")), |f| {
                for row in stack.slices[k].chunks(w) {
                    let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                    writeln!(f, "{}", cells.join(","))?;
                }
                Ok(())
            })?;
        }
        println!("exported stack {}", input.display());
    } else if input.is_dir() && read_manifest(&input).is_ok() {
        match read_manifest(&input)?.kind {
            DatasetKind::Sweep => {
                let ds = SweepDataset::load(&input)?;
                let i = pick(ds.records.len())?;
                write_with(&out.path(&format!("sweep_{i:04}.csv")), |w| Ok(ds.records[i].write_csv(w)?))?;
            }
            DatasetKind::Map => {
                let ds = MapDataset::load(&input)?;
                let i = pick(ds.records.len())?;
                let r = &ds.records[i];
                let stem = format!("map_{i:04}");
                let current: Vec<f64> = r.current.iter().map(|&v| v as f64).collect();
                write_map_images(&out, &stem, &current, Some(&r.state), r.width(), r.height())?;
                write_with(&out.path(&format!("{stem}.csv")), |w| Ok(r.write_csv(w)?))?;
            }
            DatasetKind::Submap => {
                let ds = SubMapDataset::load(&input)?;
                let i = pick(ds.samples.len())?;
                let smp = &ds.samples[i];
                let stem = format!("submap_{i:05}");
                let px: Vec<f64> = smp.pixels.iter().map(|&v| v as f64).collect();
                write_map_images(&out, &stem, &px, None, smp.size, smp.size)?;
                write_with(&out.path(&format!("{stem}.csv")), |w| Ok(smp.write_csv(w)?))?;
            }
            DatasetKind::Stack => {
                return Err(CliError::validation("stack manifests are exported from their directory"))
            }
        }
        println!("exported {}", input.display());
    } else {
        return Err(CliError::validation(format!(
            "unknown artifact kind at {} (expected a dataset or stack directory)",
            input.display()
        )));
    }
    out.commit();
    Ok(())
}
