//! Self-consistent Thomas-Fermi electron density, island segmentation and the
//! capacitance model derived from it.
//!
//! Energies are in meV, lengths in nm and densities in electrons per nm. The
//! bare conduction-band minimum is pinned to the lead chemical potential, so
//! the local band edge is `mu - V(x) + ∫K(x,x')n(x')dx'`.

use std::fmt;
use std::io::Write;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::device::{Grid, PhysicalConstants, PotentialProfile};
use crate::error::{Error, Result};

/// Iteration controls for [`solve_selfconsistent`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Number of initial iterations over which the interaction is ramped from 0 to `k0`.
    pub ramp_iterations: usize,
    /// Linear mixing factor in (0, 1].
    pub mixing: f64,
    /// Convergence threshold on `max |F(n) - n|` (nm⁻¹).
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            ramp_iterations: 50,
            mixing: 0.3,
            tolerance: 1e-6,
            max_iterations: 1000,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.mixing > 0.0 && self.mixing <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mixing factor {} must lie in (0, 1]",
                self.mixing
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if self.max_iterations <= self.ramp_iterations {
            return Err(Error::InvalidArgument(
                "max_iterations must exceed ramp_iterations".into(),
            ));
        }
        Ok(())
    }
}

/// Electron density per grid point (nm⁻¹).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityProfile(pub Vec<f64>);

impl DensityProfile {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn total_charge(&self, grid: &Grid) -> f64 {
        grid.trapezoid_weights()
            .iter()
            .zip(&self.0)
            .map(|(w, n)| w * n)
            .sum()
    }

    /// Two-column `x,n` CSV.
    pub fn write_csv<W: Write>(&self, grid: &Grid, mut out: W) -> Result<()> {
        writeln!(out, "x_nm,density_per_nm")?;
        for (x, n) in grid.points().zip(&self.0) {
            writeln!(out, "{x},{n}")?;
        }
        Ok(())
    }
}

/// Softened Coulomb kernel `K(x,x')/K0` with trapezoid weights folded into the columns.
#[derive(Debug, Clone)]
pub struct InteractionKernel {
    n: usize,
    weighted: Vec<f64>,
}

impl InteractionKernel {
    pub fn new(grid: &Grid, sigma_soft: f64) -> Self {
        let n = grid.n_points;
        let w = grid.trapezoid_weights();
        let xs: Vec<f64> = grid.points().collect();
        let s2 = sigma_soft * sigma_soft;
        let mut weighted = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let d = xs[i] - xs[j];
                weighted[i * n + j] = w[j] / (d * d + s2).sqrt();
            }
        }
        Self { n, weighted }
    }

    /// `out[i] = scale * Σ_j K(x_i,x_j)/K0 · w_j · n_j`.
    pub fn apply(&self, density: &[f64], scale: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.weighted[i * self.n..(i + 1) * self.n];
            *o = scale * dot(row, density);
        }
    }
}

// Independent accumulators let the compiler vectorize the reduction.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f64>() + tail
}

/// Band minimum `mu - V(x) + ∫K n` (meV) for a given density.
pub fn band_minimum(
    v: &PotentialProfile,
    n: &DensityProfile,
    constants: &PhysicalConstants,
    grid: &Grid,
) -> Result<Vec<f64>> {
    check_len(grid.n_points, v.len())?;
    check_len(grid.n_points, n.0.len())?;
    let kernel = InteractionKernel::new(grid, constants.sigma_soft);
    Ok(band_with_kernel(v, n, constants, &kernel, constants.k0))
}

fn band_with_kernel(
    v: &PotentialProfile,
    n: &DensityProfile,
    constants: &PhysicalConstants,
    kernel: &InteractionKernel,
    k0: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    kernel.apply(&n.0, k0, &mut out);
    for (o, vi) in out.iter_mut().zip(&v.0) {
        *o += constants.mu - vi;
    }
    out
}

/// Closed-form 2DEG density `g0·kT·ln(1 + exp((mu - eps)/kT))`.
pub fn density_from_band(eps: &[f64], constants: &PhysicalConstants) -> DensityProfile {
    let g0 = constants.g0_per_mev();
    let kt = constants.kt;
    DensityProfile(
        eps.iter()
            .map(|&e| g0 * kt * softplus((constants.mu - e) / kt))
            .collect(),
    )
}

fn softplus(a: f64) -> f64 {
    // Below this the result is subnormal and slows every later product.
    if a < -700.0 {
        return 0.0;
    }
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

/// Converged density together with solver diagnostics.
#[derive(Debug, Clone)]
pub struct SelfConsistentSolution {
    pub density: DensityProfile,
    pub iterations: usize,
    pub residual: f64,
}

/// Reusable solver for a fixed grid and set of constants.
#[derive(Debug, Clone)]
pub struct ThomasFermiSolver {
    grid: Grid,
    constants: PhysicalConstants,
    kernel: InteractionKernel,
}

impl ThomasFermiSolver {
    pub fn new(grid: &Grid, constants: &PhysicalConstants) -> Result<Self> {
        grid.validate()?;
        constants.validate()?;
        Ok(Self {
            grid: *grid,
            constants: *constants,
            kernel: InteractionKernel::new(grid, constants.sigma_soft),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn constants(&self) -> &PhysicalConstants {
        &self.constants
    }

    pub fn kernel(&self) -> &InteractionKernel {
        &self.kernel
    }

    /// Band minimum at full interaction strength.
    pub fn band_minimum(&self, v: &PotentialProfile, n: &DensityProfile) -> Vec<f64> {
        band_with_kernel(v, n, &self.constants, &self.kernel, self.constants.k0)
    }

    /// Fixed-point iteration starting from `n = 0`.
    pub fn solve(&self, v: &PotentialProfile, opts: &SolverOptions) -> Result<SelfConsistentSolution> {
        opts.validate()?;
        check_len(self.grid.n_points, v.len())?;
        let c = &self.constants;
        let npts = self.grid.n_points;
        let g0kt = c.g0_per_mev() * c.kt;
        let mut n = vec![0.0; npts];
        let mut coulomb = vec![0.0; npts];
        let mut residual = f64::INFINITY;

        for it in 0..opts.max_iterations {
            let ramp = if opts.ramp_iterations == 0 {
                1.0
            } else {
                ((it + 1) as f64 / opts.ramp_iterations as f64).min(1.0)
            };
            self.kernel.apply(&n, ramp * c.k0, &mut coulomb);
            residual = 0.0;
            for i in 0..npts {
                // (mu - eps)/kT with eps = mu - V + coulomb
                let a = (v.0[i] - coulomb[i]) / c.kt;
                let target = g0kt * softplus(a);
                let step = target - n[i];
                residual = f64::max(residual, step.abs());
                n[i] += opts.mixing * step;
            }
            if it + 1 >= opts.ramp_iterations && residual <= opts.tolerance {
                return Ok(SelfConsistentSolution {
                    density: DensityProfile(n),
                    iterations: it + 1,
                    residual,
                });
            }
        }
        Err(Error::NotConverged {
            iterations: opts.max_iterations,
            residual,
        })
    }
}

/// Self-consistent density for potential `v`.
pub fn solve_selfconsistent(
    v: &PotentialProfile,
    constants: &PhysicalConstants,
    grid: &Grid,
    opts: &SolverOptions,
) -> Result<SelfConsistentSolution> {
    ThomasFermiSolver::new(grid, constants)?.solve(v, opts)
}

/// Default island threshold: a small fraction of the thermal density scale `g0·kT`.
pub fn default_threshold(constants: &PhysicalConstants) -> f64 {
    1e-4 * constants.g0_per_mev() * constants.kt
}

/// A contiguous above-threshold run of grid points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Island {
    pub start: usize,
    pub end: usize,
    pub touches_left: bool,
    pub touches_right: bool,
}

impl Island {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn is_interior(&self) -> bool {
        !self.touches_left && !self.touches_right
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IslandSegmentation {
    pub islands: Vec<Island>,
    pub n_points: usize,
}

impl IslandSegmentation {
    /// Islands that do not touch either lead, in left-to-right order.
    pub fn interior(&self) -> impl Iterator<Item = &Island> {
        self.islands.iter().filter(|i| i.is_interior())
    }

    pub fn interior_count(&self) -> usize {
        self.interior().count()
    }

    /// Gaps that separate consecutive charge regions, including the leads.
    ///
    /// For `k` interior islands this returns `k + 1` ranges: lead→island 0,
    /// island i→island i+1, island k-1→lead. A lead-touching island acts as an
    /// extension of its contact. Empty when there are no interior islands.
    pub fn barriers(&self) -> Vec<Range<usize>> {
        let interior: Vec<&Island> = self.interior().collect();
        if interior.is_empty() {
            return Vec::new();
        }
        let left_edge = self
            .islands
            .iter()
            .filter(|i| i.touches_left && !i.touches_right)
            .map(|i| i.end)
            .max()
            .unwrap_or(0);
        let right_edge = self
            .islands
            .iter()
            .filter(|i| i.touches_right && !i.touches_left)
            .map(|i| i.start)
            .min()
            .unwrap_or(self.n_points);
        let mut out = Vec::with_capacity(interior.len() + 1);
        out.push(left_edge..interior[0].start);
        for pair in interior.windows(2) {
            out.push(pair[0].end..pair[1].start);
        }
        out.push(interior[interior.len() - 1].end..right_edge);
        out
    }
}

/// Maximal runs of `n > threshold`.
pub fn segment_islands(n: &DensityProfile, threshold: f64) -> Result<IslandSegmentation> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "island threshold {threshold} must be positive"
        )));
    }
    let len = n.0.len();
    let mut islands = Vec::new();
    let mut start = None;
    for (i, &value) in n.0.iter().enumerate() {
        match (value > threshold, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                islands.push(Island {
                    start: s,
                    end: i,
                    touches_left: s == 0,
                    touches_right: false,
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        islands.push(Island {
            start: s,
            end: len,
            touches_left: s == 0,
            touches_right: true,
        });
    }
    Ok(IslandSegmentation {
        islands,
        n_points: len,
    })
}

/// Dot configuration of the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StateLabel {
    /// Short circuit: one island connects both leads.
    SC,
    /// Pinched off, no interior island.
    Barrier,
    /// Single dot.
    SD,
    /// Double dot.
    DD,
}

impl StateLabel {
    pub const ALL: [StateLabel; 4] = [
        StateLabel::SC,
        StateLabel::Barrier,
        StateLabel::SD,
        StateLabel::DD,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for StateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StateLabel::SC => "SC",
            StateLabel::Barrier => "Barrier",
            StateLabel::SD => "SD",
            StateLabel::DD => "DD",
        };
        f.write_str(s)
    }
}

pub fn classify_state(seg: &IslandSegmentation) -> Result<StateLabel> {
    if seg.islands.iter().any(|i| i.touches_left && i.touches_right) {
        return Ok(StateLabel::SC);
    }
    match seg.interior_count() {
        0 => Ok(StateLabel::Barrier),
        1 => Ok(StateLabel::SD),
        2 => Ok(StateLabel::DD),
        count => Err(Error::TooManyIslands { count }),
    }
}

/// Inverse-capacitance energies `E_ij` (meV) and induced charges `Z` of the interior islands.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacitanceModel {
    pub e_matrix: DMatrix<f64>,
    pub z: DVector<f64>,
}

impl CapacitanceModel {
    pub fn new(e_matrix: DMatrix<f64>, z: DVector<f64>) -> Result<Self> {
        if e_matrix.nrows() != e_matrix.ncols() || e_matrix.nrows() != z.len() {
            return Err(Error::DimensionMismatch {
                expected: z.len(),
                found: e_matrix.nrows(),
            });
        }
        Ok(Self { e_matrix, z })
    }

    pub fn empty() -> Self {
        Self {
            e_matrix: DMatrix::zeros(0, 0),
            z: DVector::zeros(0),
        }
    }

    pub fn islands(&self) -> usize {
        self.z.len()
    }

    /// Smallest eigenvalue, for positive-semidefiniteness checks.
    pub fn min_eigenvalue(&self) -> f64 {
        if self.islands() == 0 {
            return 0.0;
        }
        self.e_matrix
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn capacitance_model(
    n: &DensityProfile,
    seg: &IslandSegmentation,
    constants: &PhysicalConstants,
    grid: &Grid,
) -> Result<CapacitanceModel> {
    let kernel = InteractionKernel::new(grid, constants.sigma_soft);
    capacitance_with_kernel(n, seg, constants, grid, &kernel)
}

pub(crate) fn capacitance_with_kernel(
    n: &DensityProfile,
    seg: &IslandSegmentation,
    constants: &PhysicalConstants,
    grid: &Grid,
    kernel: &InteractionKernel,
) -> Result<CapacitanceModel> {
    check_len(grid.n_points, n.0.len())?;
    let w = grid.trapezoid_weights();
    let islands: Vec<Range<usize>> = seg.interior().map(Island::range).collect();
    let k = islands.len();
    let mut z = DVector::zeros(k);
    for (i, r) in islands.iter().enumerate() {
        z[i] = r.clone().map(|a| w[a] * n.0[a]).sum();
        if !(z[i] > 0.0) {
            return Err(Error::EmptyIsland { index: i });
        }
    }
    let np = grid.n_points;
    let mut e = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let mut coulomb = 0.0;
            for a in islands[i].clone() {
                let row = &kernel.weighted[a * np..(a + 1) * np];
                let inner: f64 = islands[j].clone().map(|b| row[b] * n.0[b]).sum();
                coulomb += w[a] * n.0[a] * inner;
            }
            let mut numerator = constants.k0 * coulomb;
            if i == j {
                numerator += constants.c_k
                    * islands[i].clone().map(|a| w[a] * n.0[a] * n.0[a]).sum::<f64>();
            }
            let value = numerator / (z[i] * z[j]);
            e[(i, j)] = value;
            e[(j, i)] = value;
        }
    }
    Ok(CapacitanceModel { e_matrix: e, z })
}

/// Integer electron counts per interior island.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct ChargeConfiguration(pub Vec<u32>);

impl ChargeConfiguration {
    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for ChargeConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// Quadratic-form energy `Σ E_ij (Q-Z)_i (Q-Z)_j` in meV.
pub fn config_energy(model: &CapacitanceModel, q: &ChargeConfiguration) -> Result<f64> {
    check_len(model.islands(), q.len())?;
    Ok(energy_unchecked(model, &q.0))
}

pub(crate) fn energy_unchecked(model: &CapacitanceModel, q: &[u32]) -> f64 {
    let k = q.len();
    let d: Vec<f64> = (0..k).map(|i| q[i] as f64 - model.z[i]).collect();
    let mut e = 0.0;
    for i in 0..k {
        for j in 0..k {
            e += model.e_matrix[(i, j)] * d[i] * d[j];
        }
    }
    e
}

/// Lowest-energy integer configuration near `Z`.
///
/// Searches each `N_i` over `[max(0, floor(Z_i) - radius), ceil(Z_i) + radius]`;
/// ties go to the lexicographically smallest vector.
pub fn equilibrium_charge(model: &CapacitanceModel, radius: u32) -> Result<ChargeConfiguration> {
    if radius < 1 {
        return Err(Error::InvalidArgument("radius must be at least 1".into()));
    }
    let k = model.islands();
    let bounds: Vec<(u32, u32)> = (0..k)
        .map(|i| {
            let zi = model.z[i].max(0.0);
            let lo = (zi.floor() as i64 - radius as i64).max(0) as u32;
            let hi = zi.ceil() as u32 + radius;
            (lo, hi)
        })
        .collect();
    let mut current: Vec<u32> = bounds.iter().map(|b| b.0).collect();
    let mut best = current.clone();
    let mut best_energy = energy_unchecked(model, &current);
    // odometer over the box, last index fastest => lexicographic order
    'outer: loop {
        let mut pos = k;
        loop {
            if pos == 0 {
                break 'outer;
            }
            pos -= 1;
            if current[pos] < bounds[pos].1 {
                current[pos] += 1;
                for (c, b) in current[pos + 1..].iter_mut().zip(&bounds[pos + 1..]) {
                    *c = b.0;
                }
                break;
            }
        }
        let e = energy_unchecked(model, &current);
        if e < best_energy {
            best_energy = e;
            best.clone_from(&current);
        }
    }
    Ok(ChargeConfiguration(best))
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}
