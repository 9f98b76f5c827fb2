//! Density of the noise law on a periodic grid, by FFT of the characteristic
//! function.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::OuModel;
use crate::error::{Error, Result};

/// ln(1e12): the characteristic function must fall below 1e-12 at the grid edge.
const EDGE_DECAY: f64 = 27.631021115928547;
const FACE_TOL: f64 = 1e-10;
const MAX_FREQ: f64 = 1e10;
const MIN_SPAN: f64 = 1e-12;
pub const MAX_DIM: usize = 3;

/// Physical box `center + [-L, L)` per axis with M points per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierGrid {
    pub dims: usize,
    pub points_per_dim: usize,
    pub half_width: Vec<f64>,
    #[serde(default)]
    pub center: Vec<f64>,
}

impl FourierGrid {
    pub fn new(points_per_dim: usize, half_width: Vec<f64>, center: Option<Vec<f64>>) -> Result<Self> {
        let dims = half_width.len();
        let center = center.unwrap_or_else(|| vec![0.0; dims]);
        let g = Self { dims, points_per_dim, half_width, center };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.points_per_dim;
        if self.dims == 0 || self.dims > MAX_DIM {
            return Err(Error::BadParam(format!("FFT grids support 1..={MAX_DIM} dimensions, got {}", self.dims)));
        }
        if m < 32 || !m.is_power_of_two() {
            return Err(Error::BadParam(format!("points per dimension must be a power of two >= 32, got {m}")));
        }
        if self.half_width.len() != self.dims || self.center.len() != self.dims {
            return Err(Error::BadParam("grid extent and center must match its dimension".into()));
        }
        if self.half_width.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::BadParam("grid half-widths must be positive".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points_per_dim.pow(self.dims as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, i: usize) -> f64 {
        2.0 * self.half_width[i] / self.points_per_dim as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dims).map(|i| self.spacing(i)).product()
    }

    /// Largest frequency M pi / (2 L) on axis i.
    pub fn nyquist(&self, i: usize) -> f64 {
        PI * self.points_per_dim as f64 / (2.0 * self.half_width[i])
    }

    /// Multi-index of flat position k (last axis fastest).
    pub fn index(&self, mut k: usize, out: &mut [usize]) {
        let m = self.points_per_dim;
        for i in (0..self.dims).rev() {
            out[i] = k % m;
            k /= m;
        }
    }

    /// Physical coordinate of node j on axis i.
    pub fn coord(&self, i: usize, j: usize) -> f64 {
        self.center[i] + (j as f64 - (self.points_per_dim / 2) as f64) * self.spacing(i)
    }

    pub fn point(&self, k: usize, out: &mut [f64]) {
        let mut idx = [0usize; MAX_DIM];
        self.index(k, &mut idx[..self.dims]);
        for i in 0..self.dims {
            out[i] = self.coord(i, idx[i]);
        }
    }

    /// Frequency of node q on axis i, running from -Nyquist upward.
    pub fn frequency(&self, i: usize, q: usize) -> f64 {
        (q as f64 - (self.points_per_dim / 2) as f64) * PI / self.half_width[i]
    }
}

/// Grid request: explicit, or sized from the decay of the characteristic function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpec {
    Auto { points_per_dim: usize },
    Fixed(FourierGrid),
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Auto { points_per_dim: 256 }
    }
}

/// Noise density on a grid; values are row-major with the last axis fastest.
#[derive(Debug, Clone)]
pub struct DensityField {
    pub s: f64,
    pub t: f64,
    pub grid: FourierGrid,
    pub values: Vec<f64>,
    pub mass_defect: f64,
    pub min_value: f64,
}

#[derive(Serialize)]
struct Header<'a> {
    s: f64,
    t: f64,
    dims: usize,
    points_per_dim: usize,
    half_width: &'a [f64],
    center: &'a [f64],
    mass_defect: f64,
    min_value: f64,
    layout: &'static str,
    dtype: &'static str,
}

impl DensityField {
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Total mass carried by negative ringing.
    pub fn negative_mass(&self) -> f64 {
        self.values.iter().filter(|v| **v < 0.0).map(|v| -v).sum::<f64>() * self.grid.cell_volume()
    }

    /// Sum of phi(shift + y) p(y) over the grid.
    pub fn expect(&self, phi: &(dyn Fn(&[f64]) -> f64 + Sync), shift: &[f64]) -> f64 {
        let g = &self.grid;
        let dims = g.dims;
        let cell = g.cell_volume();
        let chunk = g.points_per_dim;
        // Row sums are collected before adding so the result does not depend on scheduling.
        let rows: Vec<f64> = self
            .values
            .par_chunks(chunk)
            .enumerate()
            .map(|(c, row)| {
                let mut y = [0.0; MAX_DIM];
                let mut acc = 0.0;
                for (j, v) in row.iter().enumerate() {
                    if *v == 0.0 {
                        continue;
                    }
                    g.point(c * chunk + j, &mut y[..dims]);
                    for i in 0..dims {
                        y[i] += shift[i];
                    }
                    acc += phi(&y[..dims]) * v;
                }
                acc
            })
            .collect();
        rows.iter().sum::<f64>() * cell
    }

    /// Probability weights with ringing clipped to zero, renormalised.
    pub fn sampling_weights(&self) -> Vec<f64> {
        let mut w: Vec<f64> = self.values.iter().map(|v| v.max(0.0)).collect();
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            w.iter_mut().for_each(|v| *v /= s);
        }
        w
    }

    /// Density at an arbitrary point by tensor cubic interpolation; zero outside the box.
    pub fn value_at(&self, y: &[f64]) -> f64 {
        let g = &self.grid;
        let m = g.points_per_dim as isize;
        let mut base = [0isize; MAX_DIM];
        let mut wts = [[0.0; 4]; MAX_DIM];
        for i in 0..g.dims {
            let u = (y[i] - g.center[i]) / g.spacing(i) + (g.points_per_dim / 2) as f64;
            if !(u >= 0.0 && u <= (m - 1) as f64) {
                return 0.0;
            }
            let j = u.floor() as isize;
            let f = u - j as f64;
            base[i] = j - 1;
            wts[i] = [
                -f * (f - 1.0) * (f - 2.0) / 6.0,
                (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0,
                -(f + 1.0) * f * (f - 2.0) / 2.0,
                (f + 1.0) * f * (f - 1.0) / 6.0,
            ];
        }
        let mut acc = 0.0;
        let combos = 4usize.pow(g.dims as u32);
        'outer: for c in 0..combos {
            let mut flat = 0usize;
            let mut w = 1.0;
            let mut cc = c;
            for i in 0..g.dims {
                let o = cc % 4;
                cc /= 4;
                let j = base[i] + o as isize;
                if j < 0 || j >= m {
                    continue 'outer;
                }
                flat = flat * m as usize + j as usize;
                w *= wts[i][o];
            }
            acc += w * self.values[flat];
        }
        acc
    }

    /// Marginal density on one axis: (coordinates, values).
    pub fn marginal(&self, axis: usize) -> (Vec<f64>, Vec<f64>) {
        let g = &self.grid;
        let m = g.points_per_dim;
        let other: f64 = (0..g.dims).filter(|&i| i != axis).map(|i| g.spacing(i)).product();
        let mut out = vec![0.0; m];
        let mut idx = [0usize; MAX_DIM];
        for (k, v) in self.values.iter().enumerate() {
            g.index(k, &mut idx[..g.dims]);
            out[idx[axis]] += v * other;
        }
        ((0..m).map(|j| g.coord(axis, j)).collect(), out)
    }

    /// Writes `<stem>.bin` (little-endian f64) and `<stem>.json`.
    pub fn write(&self, stem: &Path) -> Result<()> {
        let header = Header {
            s: self.s,
            t: self.t,
            dims: self.grid.dims,
            points_per_dim: self.grid.points_per_dim,
            half_width: &self.grid.half_width,
            center: &self.grid.center,
            mass_defect: self.mass_defect,
            min_value: self.min_value,
            layout: "row-major, last axis fastest",
            dtype: "f64-le",
        };
        let json = serde_json::to_string_pretty(&header).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(stem.with_extension("json"), json)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(stem.with_extension("bin"))?);
        for v in &self.values {
            f.write_all(&v.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Density of the noise law accumulated over [0, t].
pub fn density_fft(model: &OuModel, t: f64, grid: &FourierGrid) -> Result<DensityField> {
    density_between(model, 0.0, t, grid)
}

/// Grid with `points_per_dim` nodes per axis sized for the law at time t.
pub fn auto_grid(model: &OuModel, t: f64, points_per_dim: usize) -> Result<FourierGrid> {
    auto_grid_between(model, 0.0, t, points_per_dim)
}

fn axis_freq(n: usize, i: usize, v: f64) -> Vec<f64> {
    let mut w = vec![0.0; n];
    w[i] = v;
    w
}

pub(crate) fn auto_grid_between(model: &OuModel, s: f64, t: f64, m: usize) -> Result<FourierGrid> {
    let n = model.state_dim();
    if n > MAX_DIM {
        return Err(Error::BadParam(format!("FFT densities support N <= {MAX_DIM}, got {n}")));
    }
    if !(t - s > MIN_SPAN) {
        return Err(Error::SingularTime(t - s));
    }
    // Smallest axis frequency reaching the edge decay.
    let mut xi = vec![0.0; n];
    for (i, x) in xi.iter_mut().enumerate() {
        let re = |v: f64| -> Result<f64> { Ok(model.exponent(s, t, &axis_freq(n, i, v))?.re) };
        let mut hi = 1.0;
        while re(hi)? < EDGE_DECAY {
            hi *= 2.0;
            if hi > MAX_FREQ {
                return Err(Error::SingularTime(t - s));
            }
        }
        let mut lo = hi / 2.0;
        if re(lo)? >= EDGE_DECAY {
            lo = 0.0;
        }
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if re(mid)? >= EDGE_DECAY {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo < 1e-3 * hi {
                break;
            }
        }
        *x = hi;
    }
    // Raise each face until the decay holds across it.
    let samples = if n == 3 { 17 } else { 33 };
    for _ in 0..40 {
        let mut done = true;
        for i in 0..n {
            let low = face_min(model, s, t, &xi, i, samples)?;
            if low < EDGE_DECAY {
                done = false;
                let f = (EDGE_DECAY / low.max(1e-300)).sqrt().clamp(1.05, 4.0);
                xi[i] *= f;
                if xi[i] > MAX_FREQ {
                    return Err(Error::SingularTime(t - s));
                }
            }
        }
        if done {
            break;
        }
    }
    let half_width: Vec<f64> = xi.iter().map(|x| PI * m as f64 / (2.0 * 1.05 * x)).collect();
    let mut center = vec![0.0; n];
    for i in 0..n {
        let h = PI / half_width[i];
        center[i] = -model.exponent(s, t, &axis_freq(n, i, h))?.im / h;
    }
    FourierGrid::new(m, half_width, Some(center))
}

/// Minimum of Re psi over the face xi_i = +-Xi_i of the frequency box.
fn face_min(model: &OuModel, s: f64, t: f64, xi: &[f64], i: usize, samples: usize) -> Result<f64> {
    let n = xi.len();
    let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    let count = samples.pow(others.len() as u32);
    let pts: Vec<Vec<f64>> = (0..count)
        .flat_map(|c| {
            let mut w = vec![0.0; n];
            let mut cc = c;
            for &j in &others {
                let k = cc % samples;
                cc /= samples;
                w[j] = xi[j] * (2.0 * k as f64 / (samples - 1) as f64 - 1.0);
            }
            let mut a = w.clone();
            a[i] = xi[i];
            w[i] = -xi[i];
            [a, w]
        })
        .collect();
    let vals: Result<Vec<f64>> = pts.par_iter().map(|w| Ok(model.exponent(s, t, w)?.re)).collect();
    Ok(vals?.into_iter().fold(f64::INFINITY, f64::min))
}

pub(crate) fn density_between(model: &OuModel, s: f64, t: f64, grid: &FourierGrid) -> Result<DensityField> {
    grid.validate()?;
    let n = model.state_dim();
    if grid.dims != n {
        return Err(Error::BadParam(format!("grid dimension {} does not match state dimension {n}", grid.dims)));
    }
    if !(t - s > MIN_SPAN) {
        return Err(Error::SingularTime(t - s));
    }
    if (0..n).any(|i| grid.nyquist(i) > MAX_FREQ) {
        return Err(Error::SingularTime(t - s));
    }
    let m = grid.points_per_dim;
    let total = grid.len();

    // psi(-w) = conj psi(w), so only one member of each mirrored pair is computed.
    let mirror = |k: usize| -> Option<usize> {
        let mut idx = [0usize; MAX_DIM];
        grid.index(k, &mut idx[..n]);
        let mut flat = 0;
        for &q in &idx[..n] {
            if q == 0 {
                return None;
            }
            flat = flat * m + (m - q);
        }
        Some(flat)
    };
    let reps: Vec<usize> = (0..total).filter(|&k| mirror(k).is_none_or(|j| k <= j)).collect();
    let psi: Result<Vec<(usize, Complex64)>> = reps
        .par_iter()
        .map(|&k| {
            let mut idx = [0usize; MAX_DIM];
            grid.index(k, &mut idx[..n]);
            let w: Vec<f64> = (0..n).map(|i| grid.frequency(i, idx[i])).collect();
            Ok((k, model.exponent(s, t, &w)?))
        })
        .collect();
    let mut spec = vec![Complex64::new(0.0, 0.0); total];
    let mut face = 0.0f64;
    for (k, p) in psi? {
        let mut idx = [0usize; MAX_DIM];
        grid.index(k, &mut idx[..n]);
        let mut phase = 0.0;
        let mut sign = 1.0;
        for i in 0..n {
            phase -= grid.frequency(i, idx[i]) * grid.center[i];
            if idx[i] % 2 == 1 {
                sign = -sign;
            }
        }
        let chi = (-p).exp();
        if idx[..n].contains(&0) {
            face = face.max(chi.norm());
        }
        spec[k] = chi * Complex64::from_polar(sign, phase);
        if let Some(j) = mirror(k) {
            // Mirror node has the same parity and the opposite phase.
            spec[j] = chi.conj() * Complex64::from_polar(sign, -phase);
        }
    }
    if face > FACE_TOL {
        return Err(Error::GridTooSmall(format!(
            "characteristic function is {face:e} on the frequency boundary; widen the frequency range"
        )));
    }
    fft_all_axes(&mut spec, m, n);
    let norm: f64 = grid.half_width.iter().map(|l| 0.5 / l).product();
    let mut values = vec![0.0; total];
    let mut idx = [0usize; MAX_DIM];
    for (k, v) in values.iter_mut().enumerate() {
        grid.index(k, &mut idx[..n]);
        let parity = idx[..n].iter().sum::<usize>() % 2;
        let sign = if parity == 1 { -1.0 } else { 1.0 };
        *v = sign * spec[k].re * norm;
    }
    let min_value = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut field = DensityField { s, t, grid: grid.clone(), values, mass_defect: 0.0, min_value };
    field.mass_defect = (1.0 - field.mass()).abs();
    Ok(field)
}

/// In-place forward FFT along every axis of a row-major M^n array.
fn fft_all_axes(data: &mut [Complex64], m: usize, n: usize) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(m);
    let total = data.len();
    for axis in 0..n {
        let stride = m.pow((n - 1 - axis) as u32);
        if stride == 1 {
            data.par_chunks_mut(m).for_each(|row| fft.process(row));
            continue;
        }
        let block = stride * m;
        data.par_chunks_mut(block).for_each(|blk| {
            let mut line = vec![Complex64::new(0.0, 0.0); m];
            for off in 0..stride {
                for j in 0..m {
                    line[j] = blk[off + j * stride];
                }
                fft.process(&mut line);
                for j in 0..m {
                    blk[off + j * stride] = line[j];
                }
            }
        });
        debug_assert_eq!(total % block, 0);
    }
}
