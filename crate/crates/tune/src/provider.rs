//! Sources of 30×30 current windows around a gate-voltage center.

use std::collections::HashMap;
use std::sync::Mutex;

use qdarray_core::dataset::{MapConfig, MapStack};
use qdarray_core::simulate::GateBasis;
use qdarray_core::{DeviceSpec, SimulationOptions, Simulator};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Default window side in pixels.
pub const WINDOW_PIXELS: usize = 30;

/// Produces current windows for window centers in gate-voltage space.
pub trait MapProvider: Send + Sync {
    /// Inclusive bounds of each center coordinate.
    fn bounds(&self) -> Vec<(f64, f64)>;

    /// Natural step length per axis: the window span for in-map axes.
    fn scales(&self) -> Vec<f64>;

    /// Row-major window (`pixels × pixels`, rows along the second axis).
    fn window(&self, center: &[f64]) -> Result<Vec<f32>>;

    fn dims(&self) -> usize {
        self.bounds().len()
    }

    /// Clamp `center` into bounds, reporting whether anything moved.
    fn clamp(&self, center: &[f64]) -> (Vec<f64>, bool) {
        let mut moved = false;
        let c = center
            .iter()
            .zip(self.bounds())
            .map(|(&v, (lo, hi))| {
                let c = v.clamp(lo, hi);
                moved |= c != v;
                c
            })
            .collect();
        (c, moved)
    }
}

fn check_bounds(center: &[f64], bounds: &[(f64, f64)]) -> Result<()> {
    if center.len() != bounds.len() {
        return Err(Error::InvalidArgument(format!(
            "center has {} coordinates, provider has {} axes",
            center.len(),
            bounds.len()
        )));
    }
    for (axis, (&value, &(lo, hi))) in center.iter().zip(bounds).enumerate() {
        if !(value >= lo - 1e-9 && value <= hi + 1e-9) {
            return Err(Error::OutOfBounds {
                axis,
                value,
                lo,
                hi,
            });
        }
    }
    Ok(())
}

/// Simulates windows of a two-plunger map on demand.
///
/// Pixels sit on the lattice of a reference [`MapConfig`] so windows match
/// the pitch of the maps the CNN was trained on, and every simulated pixel
/// is cached.
pub struct SimulatorProvider {
    sim: Simulator,
    basis: GateBasis,
    origin: (f64, f64),
    pitch: (f64, f64),
    pixels: usize,
    bounds: Vec<(f64, f64)>,
    cache: Mutex<HashMap<(i64, i64), f32>>,
}

impl SimulatorProvider {
    /// Centers are bounded so the window stays inside the configured map range.
    pub fn new(
        device: &DeviceSpec,
        config: &MapConfig,
        options: SimulationOptions,
        pixels: usize,
    ) -> Result<Self> {
        let (w, h) = config.resolution;
        if w < 2 || h < 2 || pixels < 2 {
            return Err(Error::InvalidArgument("map and window need at least 2 pixels".into()));
        }
        let pitch = (
            (config.x_range.1 - config.x_range.0) / (w - 1) as f64,
            (config.y_range.1 - config.y_range.0) / (h - 1) as f64,
        );
        let half = (pixels - 1) as f64 / 2.0;
        let bounds = vec![
            (config.x_range.0 + half * pitch.0, config.x_range.1 - half * pitch.0),
            (config.y_range.0 + half * pitch.1, config.y_range.1 - half * pitch.1),
        ];
        if bounds.iter().any(|(lo, hi)| lo > hi) {
            return Err(Error::InvalidArgument("window larger than the map range".into()));
        }
        Ok(Self {
            sim: Simulator::for_device(device, options)?,
            basis: GateBasis::new(device, &[config.gates.0, config.gates.1])?,
            origin: (config.x_range.0, config.y_range.0),
            pitch,
            pixels,
            bounds,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn pitch(&self) -> (f64, f64) {
        self.pitch
    }

    /// Number of distinct pixels simulated so far.
    pub fn simulated_pixels(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    fn first_index(&self, center: f64, origin: f64, pitch: f64) -> i64 {
        ((center - origin) / pitch - (self.pixels - 1) as f64 / 2.0).round() as i64
    }
}

impl MapProvider for SimulatorProvider {
    fn bounds(&self) -> Vec<(f64, f64)> {
        self.bounds.clone()
    }

    fn scales(&self) -> Vec<f64> {
        let n = (self.pixels - 1) as f64;
        vec![n * self.pitch.0, n * self.pitch.1]
    }

    fn window(&self, center: &[f64]) -> Result<Vec<f32>> {
        check_bounds(center, &self.bounds)?;
        let i0 = self.first_index(center[0], self.origin.0, self.pitch.0);
        let j0 = self.first_index(center[1], self.origin.1, self.pitch.1);
        let n = self.pixels as i64;
        let keys: Vec<(i64, i64)> = (0..n)
            .flat_map(|r| (0..n).map(move |c| (i0 + c, j0 + r)))
            .collect();
        let missing: Vec<(i64, i64)> = {
            let cache = self.cache.lock().expect("cache lock");
            keys.iter().filter(|k| !cache.contains_key(k)).copied().collect()
        };
        let fresh = missing
            .par_iter()
            .map(|&(i, j)| {
                let vx = self.origin.0 + i as f64 * self.pitch.0;
                let vy = self.origin.1 + j as f64 * self.pitch.1;
                let p = self.sim.simulate_potential(&self.basis.potential(&[vx, vy]))?;
                Ok(((i, j), p.current as f32))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cache = self.cache.lock().expect("cache lock");
        cache.extend(fresh);
        Ok(keys.iter().map(|k| cache[k]).collect())
    }
}

/// Windows cropped from an imported stack of maps.
///
/// The first two center coordinates address the in-map axes; the third picks
/// the nearest slice. Windows are bilinearly resampled to `pixels × pixels`.
pub struct StackProvider {
    stack: MapStack,
    span: (f64, f64),
    pixels: usize,
    bounds: Vec<(f64, f64)>,
}

impl StackProvider {
    pub fn new(stack: MapStack, span: (f64, f64), pixels: usize) -> Result<Self> {
        let (x, y) = (&stack.axes.x, &stack.axes.y);
        if !(span.0 > 0.0 && span.1 > 0.0) || pixels < 2 {
            return Err(Error::InvalidArgument("window span and pixels must be positive".into()));
        }
        if span.0 > x.max - x.min + 1e-9 || span.1 > y.max - y.min + 1e-9 {
            return Err(Error::InvalidArgument("window span exceeds the stack extent".into()));
        }
        let z = &stack.axes.slice_values;
        let mut bounds = vec![
            (x.min + span.0 / 2.0, x.max - span.0 / 2.0),
            (y.min + span.1 / 2.0, y.max - span.1 / 2.0),
        ];
        if z.len() > 1 {
            bounds.push((z[0], z[z.len() - 1]));
        }
        Ok(Self {
            stack,
            span,
            pixels,
            bounds,
        })
    }

    /// Window span matching `pixels` stored pixels on each axis.
    pub fn pixel_aligned_span(stack: &MapStack, pixels: usize) -> (f64, f64) {
        let n = (pixels - 1) as f64;
        (n * stack.axes.x.pitch(), n * stack.axes.y.pitch())
    }

    pub fn stack(&self) -> &MapStack {
        &self.stack
    }
}

impl MapProvider for StackProvider {
    fn bounds(&self) -> Vec<(f64, f64)> {
        self.bounds.clone()
    }

    fn scales(&self) -> Vec<f64> {
        let mut s = vec![self.span.0, self.span.1];
        let z = &self.stack.axes.slice_values;
        if z.len() > 1 {
            s.push((z[z.len() - 1] - z[0]) / (z.len() - 1) as f64);
        }
        s
    }

    fn window(&self, center: &[f64]) -> Result<Vec<f32>> {
        check_bounds(center, &self.bounds)?;
        let slice = match center.get(2) {
            Some(&z) => self.stack.nearest_slice(z),
            None => 0,
        };
        let map = &self.stack.slices[slice];
        let (ax, ay) = (&self.stack.axes.x, &self.stack.axes.y);
        let n = self.pixels;
        let x0 = center[0] - self.span.0 / 2.0;
        let y0 = center[1] - self.span.1 / 2.0;
        let fx: Vec<f64> = (0..n)
            .map(|c| (x0 + c as f64 * self.span.0 / (n - 1) as f64 - ax.min) / ax.pitch())
            .collect();
        let mut out = Vec::with_capacity(n * n);
        for r in 0..n {
            let fy = (y0 + r as f64 * self.span.1 / (n - 1) as f64 - ay.min) / ay.pitch();
            for &fxc in &fx {
                out.push(bilinear(map, ax.points, ay.points, fxc, fy) as f32);
            }
        }
        Ok(out)
    }
}

/// Bilinear sample at fractional pixel `(fx, fy)`, clamped to the map.
fn bilinear(map: &[f32], w: usize, h: usize, fx: f64, fy: f64) -> f64 {
    let snap = |f: f64, n: usize| {
        let f = f.clamp(0.0, (n - 1) as f64);
        // absorb round-off so aligned windows crop exactly
        let r = f.round();
        let f = if (f - r).abs() < 1e-9 { r } else { f };
        let i = (f.floor() as usize).min(n.saturating_sub(2));
        (i, f - i as f64)
    };
    let (i, tx) = snap(fx, w);
    let (j, ty) = snap(fy, h);
    let at = |c: usize, r: usize| map[r.min(h - 1) * w + c.min(w - 1)] as f64;
    let top = at(i, j) * (1.0 - tx) + at(i + 1, j) * tx;
    let bottom = at(i, j + 1) * (1.0 - tx) + at(i + 1, j + 1) * tx;
    top * (1.0 - ty) + bottom * ty
}
