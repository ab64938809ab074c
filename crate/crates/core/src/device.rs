//! Gate geometry, physical constants and the electrostatic potential along the wire.
//!
//! Each top gate is modelled as a cylindrical conductor above the wire whose
//! logarithmic potential is screened exponentially by the electron gas. The
//! total potential is the superposition of all gate profiles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of redraws in [`sample_device`] before giving up.
pub const MAX_SAMPLE_ATTEMPTS: usize = 100;

/// Uniform one-dimensional grid along the wire (nm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self> {
        let grid = Self {
            x_min,
            x_max,
            n_points,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min.is_finite() && self.x_max.is_finite()) {
            return Err(Error::InvalidGrid("non-finite extent".into()));
        }
        if self.x_min >= self.x_max {
            return Err(Error::InvalidGrid(format!(
                "x_min {} must be below x_max {}",
                self.x_min, self.x_max
            )));
        }
        if self.n_points < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points, got {}",
                self.n_points
            )));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_points - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.spacing()
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |i| self.x(i))
    }

    /// Trapezoid quadrature weights.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let dx = self.spacing();
        let mut w = vec![dx; self.n_points];
        w[0] = 0.5 * dx;
        w[self.n_points - 1] = 0.5 * dx;
        w
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }
}

/// One top gate: amplitude (mV), position, height and radius (nm), screening length (nm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateSpec {
    pub v0: f64,
    pub x0: f64,
    pub h: f64,
    pub r0: f64,
    #[serde(default = "default_screening")]
    pub sigma_sc: f64,
}

fn default_screening() -> f64 {
    20.0
}

impl GateSpec {
    pub fn new(v0: f64, x0: f64, h: f64, r0: f64) -> Self {
        Self {
            v0,
            x0,
            h,
            r0,
            sigma_sc: default_screening(),
        }
    }

    fn check(&self, index: usize) -> Result<()> {
        let bad = |reason: String| Error::InvalidGate { index, reason };
        if ![self.v0, self.x0, self.h, self.r0, self.sigma_sc]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(bad("non-finite parameter".into()));
        }
        if self.r0 <= 0.0 {
            return Err(bad(format!("radius r0 = {} must be positive", self.r0)));
        }
        if self.h <= self.r0 {
            return Err(bad(format!(
                "height h = {} must exceed radius r0 = {}",
                self.h, self.r0
            )));
        }
        if self.sigma_sc <= 0.0 {
            return Err(bad(format!(
                "screening length {} must be positive",
                self.sigma_sc
            )));
        }
        Ok(())
    }

    /// Potential (mV) of this gate at position `x` (nm). Assumes a valid gate.
    pub fn potential_at(&self, x: f64) -> f64 {
        let d = x - self.x0;
        let radial = (d * d + self.h * self.h).sqrt() / self.r0;
        self.v0 / (self.h / self.r0).ln() * radial.ln() * (-d.abs() / self.sigma_sc).exp()
    }
}

/// Physical constants shared by every device in a dataset.
///
/// Units: `k0` meV, `sigma_soft` nm, `g0` eV⁻¹·nm⁻¹, `c_k` meV·nm,
/// `mu` meV, `bias` µeV, `kt` meV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub k0: f64,
    pub sigma_soft: f64,
    pub g0: f64,
    pub c_k: f64,
    pub mu: f64,
    pub bias: f64,
    pub kt: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            k0: 10.0,
            sigma_soft: 2.0,
            g0: 3.0,
            c_k: 1.0,
            mu: 100.0,
            bias: 10.0,
            kt: 0.1,
        }
    }
}

impl PhysicalConstants {
    /// Density of states in meV⁻¹·nm⁻¹.
    pub fn g0_per_mev(&self) -> f64 {
        self.g0 * 1e-3
    }

    /// Bias in meV.
    pub fn bias_mev(&self) -> f64 {
        self.bias * 1e-3
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k0", self.k0),
            ("sigma_soft", self.sigma_soft),
            ("g0", self.g0),
            ("c_k", self.c_k),
            ("kt", self.kt),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidDevice(format!(
                    "{name} = {value} must be positive"
                )));
            }
        }
        if !self.mu.is_finite() || !self.bias.is_finite() {
            return Err(Error::InvalidDevice("non-finite mu or bias".into()));
        }
        if self.mu > 0.0 && self.bias_mev().abs() >= 0.01 * self.mu {
            return Err(Error::InvalidDevice(format!(
                "bias {} µeV is not small compared to mu {} meV",
                self.bias, self.mu
            )));
        }
        Ok(())
    }
}

/// Potential along the wire in mV, one value per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialProfile(pub Vec<f64>);

impl PotentialProfile {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A complete simulated device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub grid: Grid,
    pub gates: Vec<GateSpec>,
    #[serde(default)]
    pub constants: PhysicalConstants,
}

impl DeviceSpec {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.constants.validate()?;
        for (i, gate) in self.gates.iter().enumerate() {
            gate.check(i)?;
            if gate.x0 < self.grid.x_min || gate.x0 > self.grid.x_max {
                return Err(Error::InvalidGate {
                    index: i,
                    reason: format!(
                        "position {} outside grid [{}, {}]",
                        gate.x0, self.grid.x_min, self.grid.x_max
                    ),
                });
            }
        }
        for (i, pair) in self.gates.windows(2).enumerate() {
            if pair[1].x0 <= pair[0].x0 {
                return Err(Error::InvalidGate {
                    index: i + 1,
                    reason: "gate positions must be strictly increasing".into(),
                });
            }
        }
        Ok(())
    }

    /// Three-gate single-dot device (barrier, plunger, barrier) on (−40, 40) nm.
    pub fn three_gate(v_plunger: f64) -> Self {
        Self {
            grid: Grid {
                x_min: -40.0,
                x_max: 40.0,
                n_points: 128,
            },
            gates: vec![
                GateSpec::new(-200.0, -20.0, 50.0, 5.0),
                GateSpec::new(v_plunger, 0.0, 50.0, 5.0),
                GateSpec::new(-200.0, 20.0, 50.0, 5.0),
            ],
            constants: PhysicalConstants::default(),
        }
    }

    /// Five-gate double-dot device (b1, p1, b2, p2, b3) on (−60, 60) nm.
    pub fn five_gate(v_p1: f64, v_p2: f64) -> Self {
        Self {
            grid: Grid {
                x_min: -60.0,
                x_max: 60.0,
                n_points: 96,
            },
            gates: vec![
                GateSpec::new(-200.0, -40.0, 50.0, 5.0),
                GateSpec::new(v_p1, -20.0, 50.0, 5.0),
                GateSpec::new(-200.0, 0.0, 50.0, 5.0),
                GateSpec::new(v_p2, 20.0, 50.0, 5.0),
                GateSpec::new(-200.0, 40.0, 50.0, 5.0),
            ],
            constants: PhysicalConstants::default(),
        }
    }

    /// Copy of this device with gate `index` set to `v0`.
    pub fn with_gate_voltage(&self, index: usize, v0: f64) -> Result<Self> {
        let mut out = self.clone();
        let n = out.gates.len();
        let gate = out.gates.get_mut(index).ok_or_else(|| {
            Error::InvalidArgument(format!("gate index {index} out of range ({n} gates)"))
        })?;
        gate.v0 = v0;
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Potential profile of a single gate on `grid`.
pub fn gate_potential(gate: &GateSpec, grid: &Grid) -> Result<PotentialProfile> {
    gate.check(0)?;
    grid.validate()?;
    Ok(PotentialProfile(
        grid.points().map(|x| gate.potential_at(x)).collect(),
    ))
}

/// Superposition of every gate profile of `device`.
pub fn compose_potential(device: &DeviceSpec) -> Result<PotentialProfile> {
    device.grid.validate()?;
    let mut total = vec![0.0; device.grid.n_points];
    for (i, gate) in device.gates.iter().enumerate() {
        gate.check(i)?;
        for (v, x) in total.iter_mut().zip(device.grid.points()) {
            *v += gate.potential_at(x);
        }
    }
    Ok(PotentialProfile(total))
}

/// Draw a randomized device around `mean`.
///
/// Every gate's `v0`, `x0`, `h` and `r0` is drawn from a normal distribution
/// centred on the mean value with standard deviation `rel_sigma·|mean|`.
/// Physical constants and the grid are copied unchanged. Draws that violate
/// the device invariants are redrawn.
pub fn sample_device(mean: &DeviceSpec, rel_sigma: f64, seed: u64) -> Result<DeviceSpec> {
    if !(rel_sigma.is_finite() && rel_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rel_sigma = {rel_sigma} must be non-negative"
        )));
    }
    mean.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |m: f64, rng: &mut ChaCha8Rng| -> f64 {
        // std is finite and non-negative here, so construction cannot fail
        let normal = Normal::new(m, rel_sigma * m.abs()).expect("valid normal");
        normal.sample(rng)
    };

    let mut last_reason = String::new();
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        let mut candidate = mean.clone();
        for gate in candidate.gates.iter_mut() {
            gate.v0 = draw(gate.v0, &mut rng);
            gate.x0 = draw(gate.x0, &mut rng);
            gate.h = draw(gate.h, &mut rng);
            gate.r0 = draw(gate.r0, &mut rng);
        }
        match candidate.validate() {
            Ok(()) => return Ok(candidate),
            Err(e) => last_reason = e.to_string(),
        }
    }
    Err(Error::SamplingFailed {
        attempts: MAX_SAMPLE_ATTEMPTS,
        reason: last_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plunger() -> GateSpec {
        GateSpec::new(-200.0, 0.0, 50.0, 5.0)
    }

    #[test]
    fn potential_at_gate_center_equals_amplitude() {
        for h in [6.0, 20.0, 50.0, 300.0] {
            let gate = GateSpec { h, ..plunger() };
            assert!((gate.potential_at(0.0) + 200.0).abs() < 1e-12);
        }
    }

    #[test]
    fn potential_matches_hand_evaluation() {
        // -200 / ln(10) * ln(sqrt(20^2 + 50^2) / 5) * exp(-1), evaluated offline
        let expected = -75.94716513987183;
        let grid = Grid::new(0.0, 40.0, 3).unwrap();
        let profile = gate_potential(&plunger(), &grid).unwrap();
        assert!((profile.0[1] - expected).abs() < 1e-9, "{}", profile.0[1]);
    }

    #[test]
    fn zero_amplitude_gives_zero_profile() {
        let grid = Grid::new(-40.0, 40.0, 33).unwrap();
        let gate = GateSpec { v0: 0.0, ..plunger() };
        let profile = gate_potential(&gate, &grid).unwrap();
        assert!(profile.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_height_not_above_radius() {
        let grid = Grid::new(-40.0, 40.0, 33).unwrap();
        for h in [5.0, 4.0] {
            let gate = GateSpec { h, ..plunger() };
            assert!(matches!(
                gate_potential(&gate, &grid),
                Err(Error::InvalidGate { .. })
            ));
        }
    }

    #[test]
    fn grid_invariants() {
        assert!(Grid::new(1.0, 1.0, 10).is_err());
        assert!(Grid::new(0.0, 1.0, 1).is_err());
        let g = Grid::new(-1.0, 1.0, 5).unwrap();
        assert_eq!(g.spacing(), 0.5);
        let w: f64 = g.trapezoid_weights().iter().sum();
        assert!((w - 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_gate_list_is_zero() {
        let mut device = DeviceSpec::three_gate(0.0);
        device.gates.clear();
        let v = compose_potential(&device).unwrap();
        assert!(v.0.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identical_gates_double_the_profile() {
        let grid = Grid::new(-40.0, 40.0, 65).unwrap();
        let single = gate_potential(&plunger(), &grid).unwrap();
        let mut total = vec![0.0; grid.n_points];
        for _ in 0..2 {
            for (t, s) in total.iter_mut().zip(&single.0) {
                *t += s;
            }
        }
        for (t, s) in total.iter().zip(&single.0) {
            assert_eq!(*t, 2.0 * s);
        }
    }

    #[test]
    fn three_gate_profile_has_barriers_at_gate_positions() {
        let device = DeviceSpec {
            grid: Grid::new(-40.0, 40.0, 81).unwrap(),
            ..DeviceSpec::three_gate(0.0)
        };
        let v = compose_potential(&device).unwrap();
        // grid spacing is 1 nm, so index = x + 40
        let min_left = (0..40).min_by(|&a, &b| v.0[a].total_cmp(&v.0[b])).unwrap();
        let min_right = (41..81).min_by(|&a, &b| v.0[a].total_cmp(&v.0[b])).unwrap();
        assert_eq!(device.grid.x(min_left), -20.0);
        assert_eq!(device.grid.x(min_right), 20.0);
        assert!(v.0.iter().all(|&x| x < 0.0));
        // symmetric device
        for i in 0..81 {
            assert!((v.0[i] - v.0[80 - i]).abs() < 1e-9);
        }
    }

    #[test]
    fn sampling_with_zero_sigma_is_identity() {
        let mean = DeviceSpec::five_gate(100.0, 150.0);
        assert_eq!(sample_device(&mean, 0.0, 7).unwrap(), mean);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let mean = DeviceSpec::three_gate(200.0);
        let a = sample_device(&mean, 0.05, 42).unwrap();
        let b = sample_device(&mean, 0.05, 42).unwrap();
        let c = sample_device(&mean, 0.05, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.constants, mean.constants);
    }

    #[test]
    fn sampled_amplitude_statistics() {
        let mean = DeviceSpec::three_gate(200.0);
        let draws: Vec<f64> = (0..1000)
            .map(|s| sample_device(&mean, 0.05, s).unwrap().gates[0].v0)
            .collect();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!((m + 200.0).abs() <= 1.5, "mean {m}");
        assert!((var.sqrt() - 10.0).abs() <= 2.0, "std {}", var.sqrt());
    }

    #[test]
    fn sampling_errors_when_invariants_cannot_hold() {
        let mut mean = DeviceSpec::three_gate(200.0);
        // twenty gates 0.01 nm apart: a wide spread in x0 breaks the ordering on every draw
        mean.gates = (0..20)
            .map(|i| GateSpec::new(-100.0, 1.0 + 0.01 * i as f64, 50.0, 5.0))
            .collect();
        assert!(matches!(
            sample_device(&mean, 0.5, 1),
            Err(Error::SamplingFailed { .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let device = DeviceSpec::five_gate(10.0, 20.0);
        let back = DeviceSpec::from_json(&device.to_json().unwrap()).unwrap();
        assert_eq!(back, device);
    }

    proptest::proptest! {
        #[test]
        fn gate_potential_is_symmetric(d in 0.0f64..200.0, v0 in -400.0f64..400.0) {
            let gate = GateSpec { v0, ..plunger() };
            let a = gate.potential_at(d);
            let b = gate.potential_at(-d);
            proptest::prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn gate_potential_sign_follows_amplitude(x in -200.0f64..200.0, v0 in -400.0f64..400.0) {
            let gate = GateSpec { v0, ..plunger() };
            let v = gate.potential_at(x);
            proptest::prop_assert!(v * v0 >= 0.0);
        }

        #[test]
        fn composition_is_linear_in_amplitude(scale in -3.0f64..3.0) {
            let device = DeviceSpec::three_gate(150.0);
            let base = compose_potential(&device).unwrap();
            let scaled = device.with_gate_voltage(1, 150.0 * scale).unwrap();
            let single = gate_potential(&device.gates[1], &device.grid).unwrap();
            let out = compose_potential(&scaled).unwrap();
            for i in 0..base.len() {
                let expected = base.0[i] + (scale - 1.0) * single.0[i];
                proptest::prop_assert!((out.0[i] - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn profile_decays_far_from_gate() {
        let gate = plunger();
        assert!(gate.potential_at(400.0).abs() < 1e-6 * 200.0);
    }
}
