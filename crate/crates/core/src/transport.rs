//! Sequential-tunnelling transport as a continuous-time Markov chain over
//! island charge configurations.
//!
//! Nodes are integer charge vectors near the equilibrium configuration, edges
//! are single-electron hops (lead↔edge island, island↔neighbouring island).
//! Rates combine a Fermi selection factor on the configuration energies with a
//! WKB tunnel probability and a classical attempt time.

use std::collections::{HashMap, VecDeque};
use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::device::{Grid, PhysicalConstants};
use crate::error::{Error, Result};
use crate::thomas_fermi::{
    energy_unchecked, equilibrium_charge, CapacitanceModel, ChargeConfiguration, Island,
    IslandSegmentation,
};

/// ħ²/(2mₑ) in meV·nm².
pub const HBAR2_OVER_2ME: f64 = 38.09982;

/// Unit convention for tunnelling and attempt times.
///
/// With `hbar = 1` and energies in meV, lengths in nm, `m_eff` is expressed in
/// meV⁻¹·nm⁻²; the default corresponds to a GaAs effective mass of 0.067 mₑ.
/// Rates and currents come out in matching arbitrary units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TunnelUnits {
    pub hbar: f64,
    pub m_eff: f64,
}

impl Default for TunnelUnits {
    fn default() -> Self {
        Self {
            hbar: 1.0,
            m_eff: 0.067 / (2.0 * HBAR2_OVER_2ME),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChargeNode {
    pub config: ChargeConfiguration,
    /// Capacitance-model energy (meV).
    pub energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    LeadLeft,
    LeadRight,
    /// Hop across the barrier between interior islands `i` and `i + 1`.
    Interdot(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionEdge {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
    pub kind: EdgeKind,
    /// +1 when the electron moves rightward, -1 leftward.
    pub direction: i8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovGraph {
    pub nodes: Vec<ChargeNode>,
    pub edges: Vec<TransitionEdge>,
    pub order: usize,
}

impl MarkovGraph {
    pub fn max_rate(&self) -> f64 {
        self.edges.iter().map(|e| e.rate).fold(0.0, f64::max)
    }

    /// Generator with `M[v][u] = R(u→v)` off the diagonal and zero column sums.
    ///
    /// Each diagonal entry is the negated row-order sum of its column's
    /// off-diagonal entries, so summing a column in that order gives exactly 0.
    pub fn generator(&self) -> DMatrix<f64> {
        let n = self.nodes.len();
        let mut m = DMatrix::zeros(n, n);
        for e in self.edges.iter().filter(|e| e.to != e.from) {
            m[(e.to, e.from)] += e.rate;
        }
        for c in 0..n {
            let out: f64 = (0..n).filter(|&r| r != c).map(|r| m[(r, c)]).sum();
            m[(c, c)] = -out;
        }
        m
    }

    /// Multiply every rate by `factor`.
    pub fn scale_rates(&mut self, factor: f64) {
        for e in self.edges.iter_mut() {
            e.rate *= factor;
        }
    }

    /// Undirected connected components over edges with a positive rate.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.nodes.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut a: usize) -> usize {
            while parent[a] != a {
                parent[a] = parent[parent[a]];
                a = parent[a];
            }
            a
        }
        for e in self.edges.iter().filter(|e| e.rate > 0.0) {
            let (a, b) = (find(&mut parent, e.from), find(&mut parent, e.to));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut index: HashMap<usize, usize> = HashMap::new();
        for v in 0..n {
            let root = find(&mut parent, v);
            let slot = *index.entry(root).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[slot].push(v);
        }
        groups
    }
}

/// Default enumeration radius for the graph root.
pub const DEFAULT_EQUILIBRIUM_RADIUS: u32 = 2;

/// Breadth-first construction of the order-`p` charge graph.
///
/// The root is the equilibrium configuration; nodes are non-negative
/// configurations within `p` electrons of the root on every island. Edge rates
/// are left at zero; see [`assign_rates`].
pub fn build_graph(model: &CapacitanceModel, order: usize) -> Result<MarkovGraph> {
    build_graph_with_radius(model, order, DEFAULT_EQUILIBRIUM_RADIUS)
}

pub fn build_graph_with_radius(
    model: &CapacitanceModel,
    order: usize,
    radius: u32,
) -> Result<MarkovGraph> {
    if order != 1 {
        return Err(Error::UnsupportedOrder(order));
    }
    let root = equilibrium_charge(model, radius)?;
    let k = root.len();
    let lo: Vec<i64> = root.0.iter().map(|&r| r as i64 - order as i64).collect();
    let hi: Vec<i64> = root.0.iter().map(|&r| r as i64 + order as i64).collect();
    let allowed = |c: &[i64]| (0..k).all(|i| c[i] >= 0 && c[i] >= lo[i] && c[i] <= hi[i]);

    let mut ids: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut queue = VecDeque::new();
    ids.insert(root.0.clone(), 0);
    nodes.push(ChargeNode {
        energy: energy_unchecked(model, &root.0),
        config: root.clone(),
    });
    queue.push_back(0usize);

    while let Some(u) = queue.pop_front() {
        let config: Vec<i64> = nodes[u].config.0.iter().map(|&v| v as i64).collect();
        for (delta, kind, direction) in single_electron_moves(k) {
            let target: Vec<i64> = config.iter().zip(&delta).map(|(c, d)| c + d).collect();
            if !allowed(&target) {
                continue;
            }
            let key: Vec<u32> = target.iter().map(|&v| v as u32).collect();
            let v = match ids.get(&key) {
                Some(&v) => v,
                None => {
                    let v = nodes.len();
                    ids.insert(key.clone(), v);
                    nodes.push(ChargeNode {
                        energy: energy_unchecked(model, &key),
                        config: ChargeConfiguration(key),
                    });
                    queue.push_back(v);
                    v
                }
            };
            edges.push(TransitionEdge {
                from: u,
                to: v,
                rate: 0.0,
                kind,
                direction,
            });
        }
    }
    Ok(MarkovGraph {
        nodes,
        edges,
        order,
    })
}

/// All single-electron hops for `k` islands in a fixed order.
fn single_electron_moves(k: usize) -> Vec<(Vec<i64>, EdgeKind, i8)> {
    let mut moves = Vec::new();
    if k == 0 {
        return moves;
    }
    let unit = |i: usize, s: i64| {
        let mut d = vec![0i64; k];
        d[i] = s;
        d
    };
    moves.push((unit(0, 1), EdgeKind::LeadLeft, 1));
    moves.push((unit(0, -1), EdgeKind::LeadLeft, -1));
    for i in 0..k - 1 {
        let mut right = vec![0i64; k];
        right[i] = -1;
        right[i + 1] = 1;
        let left: Vec<i64> = right.iter().map(|v| -v).collect();
        moves.push((right, EdgeKind::Interdot(i), 1));
        moves.push((left, EdgeKind::Interdot(i), -1));
    }
    moves.push((unit(k - 1, -1), EdgeKind::LeadRight, 1));
    moves.push((unit(k - 1, 1), EdgeKind::LeadRight, -1));
    moves
}

/// WKB tunnel probability `exp(-∫ sqrt(2 m (V_e - mu)) / ħ dx)` over `barrier`.
///
/// `v_eff` is the band edge including the electron-electron repulsion (meV).
/// The integrand vanishes wherever `V_e ≤ mu`; each grid point contributes
/// one grid spacing.
pub fn wkb_probability(
    v_eff: &[f64],
    mu: f64,
    barrier: Range<usize>,
    grid: &Grid,
    units: &TunnelUnits,
) -> Result<f64> {
    if barrier.is_empty() || barrier.end > v_eff.len() {
        return Err(Error::InvalidArgument(format!(
            "barrier range {barrier:?} is empty or exceeds profile length {}",
            v_eff.len()
        )));
    }
    let dx = grid.spacing();
    let action: f64 = v_eff[barrier]
        .iter()
        .map(|&v| (2.0 * units.m_eff * (v - mu).max(0.0)).sqrt() / units.hbar * dx)
        .sum();
    Ok((-action).exp())
}

/// Classical traversal time `l / sqrt(2 mu / m)` of an island.
pub fn attempt_time(island: Range<usize>, mu: f64, grid: &Grid, units: &TunnelUnits) -> Result<f64> {
    if island.is_empty() {
        return Err(Error::InvalidArgument("empty island".into()));
    }
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("mu = {mu} must be positive")));
    }
    let length = island.len() as f64 * grid.spacing();
    let velocity = (2.0 * mu / units.m_eff).sqrt();
    Ok(length / velocity)
}

/// Fermi function `1 / (1 + exp(de / kT))`, evaluated without overflow.
pub fn fermi(de: f64, kt: f64) -> f64 {
    let x = de / kt;
    if x > 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

/// `R = f_T(e_to - e_from) · p_wkb / tau`.
pub fn transition_rate(e_from: f64, e_to: f64, p_wkb: f64, tau: f64, kt: f64) -> f64 {
    fermi(e_to - e_from, kt) * p_wkb / tau
}

/// Tunnel probabilities per barrier and attempt times per interior island.
#[derive(Debug, Clone, PartialEq)]
pub struct TunnelingParameters {
    /// `k + 1` probabilities: left lead, interdot barriers, right lead.
    pub barrier_probability: Vec<f64>,
    /// `k` attempt times.
    pub attempt_time: Vec<f64>,
}

impl TunnelingParameters {
    /// Evaluate barriers and islands of `seg` on the effective band edge `v_eff`.
    pub fn from_segmentation(
        seg: &IslandSegmentation,
        v_eff: &[f64],
        constants: &PhysicalConstants,
        grid: &Grid,
        units: &TunnelUnits,
    ) -> Result<Self> {
        let barrier_probability = seg
            .barriers()
            .into_iter()
            .map(|b| wkb_probability(v_eff, constants.mu, b, grid, units))
            .collect::<Result<Vec<_>>>()?;
        let attempt_time = seg
            .interior()
            .map(Island::range)
            .map(|r| self::attempt_time(r, constants.mu, grid, units))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            barrier_probability,
            attempt_time,
        })
    }

    fn prefactor(&self, kind: EdgeKind) -> f64 {
        let k = self.attempt_time.len();
        match kind {
            EdgeKind::LeadLeft => self.barrier_probability[0] / self.attempt_time[0],
            EdgeKind::LeadRight => self.barrier_probability[k] / self.attempt_time[k - 1],
            EdgeKind::Interdot(i) => {
                // symmetric in the two islands so forward/backward rates obey detailed balance
                let tau = 0.5 * (self.attempt_time[i] + self.attempt_time[i + 1]);
                self.barrier_probability[i + 1] / tau
            }
        }
    }
}

/// Fill in every edge rate.
///
/// Lead hops include the lead's chemical-potential offset `±bias/2` relative
/// to `mu`: an electron entering from lead L costs `E(Q') - E(Q) - δµ_L`.
pub fn assign_rates(
    graph: &mut MarkovGraph,
    params: &TunnelingParameters,
    constants: &PhysicalConstants,
) -> Result<()> {
    let k = graph.nodes.first().map(|n| n.config.len()).unwrap_or(0);
    if params.attempt_time.len() != k || params.barrier_probability.len() != k + 1 {
        if !(k == 0 && graph.edges.is_empty()) {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: params.attempt_time.len(),
            });
        }
    }
    let half_bias = 0.5 * constants.bias_mev();
    for edge in graph.edges.iter_mut() {
        let mut de = graph.nodes[edge.to].energy - graph.nodes[edge.from].energy;
        let lead_offset = match edge.kind {
            EdgeKind::LeadLeft => half_bias,
            EdgeKind::LeadRight => -half_bias,
            EdgeKind::Interdot(_) => 0.0,
        };
        de += match (edge.kind, edge.direction) {
            (EdgeKind::Interdot(_), _) => 0.0,
            // electron taken from the left lead / given to the right lead
            (EdgeKind::LeadLeft, 1) | (EdgeKind::LeadRight, -1) => -lead_offset,
            _ => lead_offset,
        };
        edge.rate = fermi(de, constants.kt) * params.prefactor(edge.kind);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pub pi: Vec<f64>,
    /// `‖Mπ‖∞` of the returned vector.
    pub residual: f64,
}

/// Nullspace of the generator via SVD, normalised to a probability vector.
pub fn stationary_distribution(graph: &MarkovGraph) -> Result<StationaryDistribution> {
    let n = graph.nodes.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty graph".into()));
    }
    if n == 1 {
        return Ok(StationaryDistribution {
            pi: vec![1.0],
            residual: 0.0,
        });
    }
    let components = graph.components();
    if components.len() > 1 {
        return Err(Error::DisconnectedChain { components });
    }
    let max_rate = graph.max_rate();
    let mut m = graph.generator();
    m /= max_rate;
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let smallest = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty");
    let mut pi: Vec<f64> = v_t.row(smallest).iter().copied().collect();
    let pivot = pi
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(1.0);
    if pivot < 0.0 {
        pi.iter_mut().for_each(|p| *p = -*p);
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    for p in pi.iter_mut() {
        if *p < 0.0 {
            *p = 0.0;
        }
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);

    let mut residual = 0.0f64;
    for r in 0..n {
        let s: f64 = (0..n).map(|c| m[(r, c)] * pi[c]).sum();
        residual = residual.max(s.abs() * max_rate);
    }
    Ok(StationaryDistribution { pi, residual })
}

/// Net rightward particle flux through the left contact.
pub fn current(graph: &MarkovGraph, pi: &StationaryDistribution) -> Result<f64> {
    if pi.pi.len() != graph.nodes.len() {
        return Err(Error::DimensionMismatch {
            expected: graph.nodes.len(),
            found: pi.pi.len(),
        });
    }
    Ok(graph
        .edges
        .iter()
        .filter(|e| e.kind == EdgeKind::LeadLeft)
        .map(|e| e.direction as f64 * e.rate * pi.pi[e.from])
        .sum())
}
