//! End-to-end evaluation of one gate-voltage configuration, plus 1-D sweeps
//! and 2-D maps built from it.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{DeviceSpec, GateSpec, Grid, PhysicalConstants, PotentialProfile};
use crate::error::{Error, Result};
use crate::thomas_fermi::{
    capacitance_with_kernel, classify_state, default_threshold, equilibrium_charge,
    segment_islands, CapacitanceModel, ChargeConfiguration, SolverOptions, StateLabel,
    ThomasFermiSolver,
};
use crate::transport::{
    assign_rates, build_graph_with_radius, current, stationary_distribution, TunnelUnits,
    TunnelingParameters,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationOptions {
    pub solver: SolverOptions,
    /// Island density threshold (nm⁻¹); `None` uses [`default_threshold`].
    pub island_threshold: Option<f64>,
    pub order: usize,
    pub equilibrium_radius: u32,
    pub units: TunnelUnits,
    /// Current reported for short-circuited wires.
    pub sc_current: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            island_threshold: None,
            order: 1,
            equilibrium_radius: 2,
            units: TunnelUnits::default(),
            sc_current: 1.0,
        }
    }
}

/// Outcome of one simulated voltage configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub current: f64,
    pub charge: ChargeConfiguration,
    pub state: StateLabel,
    /// Induced charges of the interior islands.
    pub induced: Vec<f64>,
}

/// Pipeline bound to one grid and set of constants.
#[derive(Debug, Clone)]
pub struct Simulator {
    solver: ThomasFermiSolver,
    opts: SimulationOptions,
    threshold: f64,
}

impl Simulator {
    pub fn new(grid: &Grid, constants: &PhysicalConstants, opts: SimulationOptions) -> Result<Self> {
        opts.solver.validate()?;
        let threshold = opts
            .island_threshold
            .unwrap_or_else(|| default_threshold(constants));
        if !(threshold > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "island threshold {threshold} must be positive"
            )));
        }
        Ok(Self {
            solver: ThomasFermiSolver::new(grid, constants)?,
            opts,
            threshold,
        })
    }

    pub fn for_device(device: &DeviceSpec, opts: SimulationOptions) -> Result<Self> {
        device.validate()?;
        Self::new(&device.grid, &device.constants, opts)
    }

    pub fn grid(&self) -> &Grid {
        self.solver.grid()
    }

    pub fn constants(&self) -> &PhysicalConstants {
        self.solver.constants()
    }

    pub fn options(&self) -> &SimulationOptions {
        &self.opts
    }

    fn check_compatible(&self, device: &DeviceSpec) -> Result<()> {
        if device.grid != *self.grid() || device.constants != *self.constants() {
            return Err(Error::InvalidArgument(
                "device grid/constants differ from the simulator's".into(),
            ));
        }
        Ok(())
    }

    /// Full pipeline for `device`, which must share this simulator's grid and constants.
    pub fn simulate(&self, device: &DeviceSpec) -> Result<PointResult> {
        self.check_compatible(device)?;
        device.validate()?;
        let v = crate::device::compose_potential(device)?;
        self.simulate_potential(&v)
    }

    /// Pipeline from an already composed potential profile.
    pub fn simulate_potential(&self, v: &PotentialProfile) -> Result<PointResult> {
        let grid = *self.grid();
        let constants = *self.constants();
        let solution = self.solver.solve(v, &self.opts.solver)?;
        let density = solution.density;
        let seg = segment_islands(&density, self.threshold)?;
        let state = classify_state(&seg)?;
        if state == StateLabel::SC {
            return Ok(PointResult {
                current: self.opts.sc_current,
                charge: ChargeConfiguration::default(),
                state,
                induced: Vec::new(),
            });
        }
        let model = if seg.interior_count() == 0 {
            CapacitanceModel::empty()
        } else {
            capacitance_with_kernel(&density, &seg, &constants, &grid, self.solver.kernel())?
        };
        let charge = equilibrium_charge(&model, self.opts.equilibrium_radius)?;
        let induced: Vec<f64> = model.z.iter().copied().collect();
        if model.islands() == 0 {
            return Ok(PointResult {
                current: 0.0,
                charge,
                state,
                induced,
            });
        }
        let band = self.solver.band_minimum(v, &density);
        let params =
            TunnelingParameters::from_segmentation(&seg, &band, &constants, &grid, &self.opts.units)?;
        let mut graph =
            build_graph_with_radius(&model, self.opts.order, self.opts.equilibrium_radius)?;
        assign_rates(&mut graph, &params, &constants)?;
        let pi = stationary_distribution(&graph)?;
        let i = current(&graph, &pi)?;
        Ok(PointResult {
            current: i,
            charge,
            state,
            induced,
        })
    }

    /// Sweep gate `gate` of `device` over `voltages`.
    pub fn sweep(&self, device: &DeviceSpec, gate: usize, voltages: &[f64]) -> Result<Vec<PointResult>> {
        self.check_compatible(device)?;
        let basis = GateBasis::new(device, &[gate])?;
        voltages
            .par_iter()
            .map(|&vg| self.simulate_potential(&basis.potential(&[vg])))
            .collect()
    }

    /// Map over gates `(gate_x, gate_y)`; result is row-major with `ys` as rows.
    pub fn map(
        &self,
        device: &DeviceSpec,
        gates: (usize, usize),
        xs: &[f64],
        ys: &[f64],
    ) -> Result<MapResult> {
        self.check_compatible(device)?;
        let basis = GateBasis::new(device, &[gates.0, gates.1])?;
        let points: Vec<(f64, f64)> = ys
            .iter()
            .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
            .collect();
        let results = points
            .par_iter()
            .map(|&(x, y)| self.simulate_potential(&basis.potential(&[x, y])))
            .collect::<Result<Vec<_>>>()?;
        Ok(MapResult {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            points: results,
        })
    }
}

/// Potential split into a fixed part and unit-amplitude profiles of the swept gates.
#[derive(Debug, Clone)]
pub struct GateBasis {
    fixed: Vec<f64>,
    unit: Vec<Vec<f64>>,
}

impl GateBasis {
    pub fn new(device: &DeviceSpec, swept: &[usize]) -> Result<Self> {
        device.validate()?;
        let n = device.grid.n_points;
        for &g in swept {
            if g >= device.gates.len() {
                return Err(Error::InvalidArgument(format!(
                    "gate index {g} out of range ({} gates)",
                    device.gates.len()
                )));
            }
        }
        let mut fixed = vec![0.0; n];
        for (i, gate) in device.gates.iter().enumerate() {
            if swept.contains(&i) {
                continue;
            }
            for (f, x) in fixed.iter_mut().zip(device.grid.points()) {
                *f += gate.potential_at(x);
            }
        }
        let unit = swept
            .iter()
            .map(|&g| {
                let gate = GateSpec {
                    v0: 1.0,
                    ..device.gates[g]
                };
                device.grid.points().map(|x| gate.potential_at(x)).collect()
            })
            .collect();
        Ok(Self { fixed, unit })
    }

    pub fn potential(&self, voltages: &[f64]) -> PotentialProfile {
        let mut v = self.fixed.clone();
        for (profile, &amp) in self.unit.iter().zip(voltages) {
            for (vi, u) in v.iter_mut().zip(profile) {
                *vi += amp * u;
            }
        }
        PotentialProfile(v)
    }
}

/// Simulated 2-D map, row-major (`ys` rows × `xs` columns).
#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub points: Vec<PointResult>,
}

impl MapResult {
    pub fn at(&self, row: usize, col: usize) -> &PointResult {
        &self.points[row * self.xs.len() + col]
    }

    pub fn currents(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.current).collect()
    }

    pub fn states(&self) -> Vec<StateLabel> {
        self.points.iter().map(|p| p.state).collect()
    }

    /// CSV rows of `x,y,current,state,charges` (charges separated by `;`).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "v_x_mV,v_y_mV,current,state,charges")?;
        for (r, &y) in self.ys.iter().enumerate() {
            for (c, &x) in self.xs.iter().enumerate() {
                let p = self.at(r, c);
                let charges: Vec<String> = p.charge.0.iter().map(u32::to_string).collect();
                writeln!(out, "{x},{y},{:e},{},{}", p.current, p.state, charges.join(";"))?;
            }
        }
        Ok(())
    }
}

/// One-shot pipeline for a single device.
pub fn simulate_point(device: &DeviceSpec, opts: &SimulationOptions) -> Result<PointResult> {
    Simulator::for_device(device, *opts)?.simulate(device)
}

/// `n` evenly spaced values on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// CSV rows of `v,current,state,charges` for a sweep.
pub fn write_sweep_csv<W: Write>(voltages: &[f64], points: &[PointResult], mut out: W) -> Result<()> {
    writeln!(out, "v_mV,current,state,total_charge,charges")?;
    for (v, p) in voltages.iter().zip(points) {
        let charges: Vec<String> = p.charge.0.iter().map(u32::to_string).collect();
        writeln!(
            out,
            "{v},{:e},{},{},{}",
            p.current,
            p.state,
            p.charge.total(),
            charges.join(";")
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinched_off_point_has_no_charge_or_current() {
        for n_points in [128, 192] {
            let mut device = DeviceSpec::three_gate(0.0);
            device.grid.n_points = n_points;
            let r = simulate_point(&device, &SimulationOptions::default()).unwrap();
            assert_eq!(r.charge.total(), 0);
            assert_eq!(r.current, 0.0);
            assert!(matches!(r.state, StateLabel::Barrier | StateLabel::SD));
        }
    }

    #[test]
    fn basis_reproduces_composed_potential() {
        let device = DeviceSpec::five_gate(120.0, 250.0);
        let basis = GateBasis::new(&device, &[1, 3]).unwrap();
        let direct = crate::device::compose_potential(&device).unwrap();
        let fast = basis.potential(&[120.0, 250.0]);
        for (a, b) in direct.0.iter().zip(&fast.0) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn sweep_is_deterministic() {
        let device = DeviceSpec::three_gate(0.0);
        let sim = Simulator::for_device(&device, SimulationOptions::default()).unwrap();
        let vs = linspace(200.0, 260.0, 8);
        let a = sim.sweep(&device, 1, &vs).unwrap();
        let b = sim.sweep(&device, 1, &vs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_device_is_rejected() {
        let device = DeviceSpec::three_gate(0.0);
        let sim = Simulator::for_device(&device, SimulationOptions::default()).unwrap();
        assert!(sim.simulate(&DeviceSpec::five_gate(0.0, 0.0)).is_err());
    }

    #[test]
    fn linspace_endpoints() {
        let v = linspace(0.0, 350.0, 512);
        assert_eq!(v.len(), 512);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[511], 350.0);
    }
}
