//! Transition semigroups of Ornstein-Uhlenbeck processes driven by Levy noise.
//!
//! For data at time s the solution at time t of the forward equation is
//! `U(t,s) phi(x) = E phi(F x + Y)`, where `F = S(t,s)^T`, `S` is the resolvent
//! of `r -> A(r)^T`, and `Y` has characteristic exponent
//! `psi(w) = int_s^t Phi(sigma0(r)^T B^T S(r,s) w) dr`. With constant
//! coefficients this is the usual `P_{t-s}` with `F = exp((t-s)A)`.

pub mod density;
pub mod generator;
pub mod mc;
mod path;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kalman::{compute_decomposition, KalmanDecomposition, SystemPair, DEFAULT_RANK_TOL};
use crate::levy::{LevyModel, SymbolTable};
use crate::quadrature::GaussLegendre;
use crate::testfn::PlaneWaveSum;

pub use density::{auto_grid, density_fft, DensityField, FourierGrid, GridSpec};
pub use generator::{apply_generator, apply_generator_waves, derivative_estimate, plane_wave_factor, GeneratorOptions};
pub use mc::{mc_apply_semigroup, simulate_noise, McEnsemble, McScheme};
pub use path::MatrixFn;

use path::{NoisePath, PathKind, Reduced};

/// Initial Gauss-Legendre size for exponent time integrals.
pub const DEFAULT_TIME_NODES: usize = 64;
const EXPONENT_REL_TOL: f64 = 1e-9;
const MAX_TIME_NODES: usize = 2048;
/// Smallest eigenvalue of sigma0 sigma0^T accepted as uniformly elliptic.
pub const UE_TOL: f64 = 1e-12;

#[derive(Clone)]
pub enum Dynamics {
    Constant(SystemPair),
    TimeDependent { a_fn: MatrixFn, b: DMatrix<f64>, sigma0_fn: MatrixFn },
}

impl std::fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Dynamics::Constant(s) => f.debug_tuple("Constant").field(s).finish(),
            Dynamics::TimeDependent { b, .. } => f.debug_struct("TimeDependent").field("b", b).finish_non_exhaustive(),
        }
    }
}

type DensityKey = (u64, u64, usize, Vec<u64>, Vec<u64>);

/// OU operator: drift, noise loading and Levy triplet.
pub struct OuModel {
    dynamics: Dynamics,
    pub levy: LevyModel,
    pub dec: KalmanDecomposition,
    table: Arc<SymbolTable>,
    directions: Vec<Vec<f64>>,
    path: NoisePath,
    n: usize,
    densities: Mutex<HashMap<DensityKey, Arc<DensityField>>>,
}

impl std::fmt::Debug for OuModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OuModel")
            .field("dynamics", &self.dynamics)
            .field("levy", &self.levy)
            .finish_non_exhaustive()
    }
}

impl OuModel {
    /// Time-homogeneous model; fails unless the pair is controllable.
    pub fn new(sys: SystemPair, levy: LevyModel) -> Result<Self> {
        if sys.noise_dim() != levy.dim() {
            return Err(Error::BadParam(format!(
                "B has {} columns but the noise has dimension {}",
                sys.noise_dim(),
                levy.dim()
            )));
        }
        let dec = compute_decomposition(&sys, DEFAULT_RANK_TOL)?;
        let n = sys.state_dim();
        let kind = PathKind::Constant { a: sys.a.clone(), b: sys.b.clone() };
        Self::assemble(Dynamics::Constant(sys), levy, dec, kind, n)
    }

    /// Time-dependent model; controllability and uniform ellipticity are
    /// checked at every time in `check_times`.
    pub fn time_dependent(
        a_fn: MatrixFn,
        b: DMatrix<f64>,
        sigma0_fn: MatrixFn,
        levy: LevyModel,
        check_times: &[f64],
    ) -> Result<Self> {
        let n = b.nrows();
        let d = levy.dim();
        if b.ncols() != d {
            return Err(Error::BadParam(format!("B has {} columns but the noise has dimension {d}", b.ncols())));
        }
        let times: Vec<f64> = if check_times.is_empty() { vec![0.0] } else { check_times.to_vec() };
        let mut first = None;
        for &t in &times {
            let (a, s) = (a_fn(t), sigma0_fn(t));
            if a.shape() != (n, n) || s.shape() != (d, d) {
                return Err(Error::BadParam(format!("coefficient shapes wrong at t = {t}")));
            }
            let eig = (&s * s.transpose()).symmetric_eigen().eigenvalues.min();
            if !(eig >= UE_TOL) {
                return Err(Error::UEViolation { t, eig });
            }
            let dec = compute_decomposition(&SystemPair::new(a, &b * &s)?, DEFAULT_RANK_TOL)?;
            first.get_or_insert(dec);
        }
        let dec = first.expect("at least one check time");
        let kind = PathKind::TimeDependent { a_fn: a_fn.clone(), b: b.clone(), sigma0_fn: sigma0_fn.clone() };
        Self::assemble(Dynamics::TimeDependent { a_fn, b, sigma0_fn }, levy, dec, kind, n)
    }

    fn assemble(dynamics: Dynamics, levy: LevyModel, dec: KalmanDecomposition, kind: PathKind, n: usize) -> Result<Self> {
        let table = SymbolTable::shared(&levy)?;
        let directions = table.directions();
        let d = levy.dim();
        Ok(Self {
            dynamics,
            levy,
            dec,
            table,
            directions,
            path: NoisePath::new(kind, n, d),
            n,
            densities: Mutex::new(HashMap::new()),
        })
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn is_time_homogeneous(&self) -> bool {
        matches!(self.dynamics, Dynamics::Constant(_))
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn noise_dim(&self) -> usize {
        self.levy.dim()
    }

    pub fn alpha(&self) -> f64 {
        self.levy.alpha
    }

    pub fn symbol_table(&self) -> &SymbolTable {
        &self.table
    }

    /// A(t).
    pub fn drift_at(&self, t: f64) -> DMatrix<f64> {
        match &self.dynamics {
            Dynamics::Constant(s) => s.a.clone(),
            Dynamics::TimeDependent { a_fn, .. } => a_fn(t),
        }
    }

    /// B sigma0(t), the matrix loading the noise at time t.
    pub fn noise_at(&self, t: f64) -> DMatrix<f64> {
        match &self.dynamics {
            Dynamics::Constant(s) => s.b.clone(),
            Dynamics::TimeDependent { b, sigma0_fn, .. } => b * sigma0_fn(t),
        }
    }

    /// Block (0-based) that coordinate axis `i` belongs to.
    pub fn axis_block(&self, i: usize) -> usize {
        let mut e = DVector::zeros(self.n);
        e[i] = 1.0;
        self.dec
            .projections
            .iter()
            .enumerate()
            .map(|(h, p)| (h, (p * &e).norm()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(h, _)| h)
            .unwrap_or(0)
    }

    /// Intrinsic length t^{(1 + alpha h)/alpha} of block h (0-based).
    pub fn intrinsic_scale(&self, h: usize, t: f64) -> f64 {
        let a = self.alpha();
        t.powf((1.0 + a * h as f64) / a)
    }

    fn check_interval(s: f64, t: f64) -> Result<()> {
        if !(s >= 0.0 && t >= s && t.is_finite()) {
            return Err(Error::BadParam(format!("need 0 <= s <= t, got s = {s}, t = {t}")));
        }
        Ok(())
    }

    /// S(t,s): maps frequencies at time s to time t.
    pub fn freq_propagator(&self, s: f64, t: f64) -> Result<DMatrix<f64>> {
        Self::check_interval(s, t)?;
        match &self.dynamics {
            Dynamics::Constant(sys) => Ok((sys.a.transpose() * (t - s)).exp()),
            Dynamics::TimeDependent { .. } => {
                let ms = self.path.propagator(s)?;
                let mt = self.path.propagator(t)?;
                let inv = ms
                    .lu()
                    .try_inverse()
                    .ok_or_else(|| Error::BadParam(format!("singular propagator at {s}")))?;
                Ok(mt * inv)
            }
        }
    }

    /// Spatial flow F with U(t,s) phi(x) = E phi(F x + Y).
    pub fn flow(&self, s: f64, t: f64) -> Result<DMatrix<f64>> {
        Ok(self.freq_propagator(s, t)?.transpose())
    }

    /// psi_{s,t}(omega), the exponent of the noise accumulated over [s, t].
    pub fn exponent(&self, s: f64, t: f64, omega: &[f64]) -> Result<Complex64> {
        self.exponent_with(s, t, omega, DEFAULT_TIME_NODES)
    }

    pub fn exponent_with(&self, s: f64, t: f64, omega: &[f64], nodes: usize) -> Result<Complex64> {
        Self::check_interval(s, t)?;
        if omega.len() != self.n {
            return Err(Error::BadParam(format!("frequency has dimension {}, expected {}", omega.len(), self.n)));
        }
        if t == s || omega.iter().all(|&w| w == 0.0) {
            return Ok(Complex64::new(0.0, 0.0));
        }
        match &self.dynamics {
            Dynamics::Constant(_) => self.integrate_path(0.0, t - s, omega, nodes),
            Dynamics::TimeDependent { .. } => {
                let ms = self.path.propagator(s)?;
                let zeta = ms
                    .lu()
                    .solve(&DVector::from_column_slice(omega))
                    .ok_or_else(|| Error::BadParam(format!("singular propagator at {s}")))?;
                self.integrate_path(s, t, zeta.as_slice(), nodes)
            }
        }
    }

    /// int_a^b Phi(G(r) zeta) dr with splits at the kinks of each atom direction.
    fn integrate_path(&self, a: f64, b: f64, zeta: &[f64], nodes: usize) -> Result<Complex64> {
        let d = self.levy.dim();
        let span = b - a;
        let mut pieces: Vec<(Reduced, Vec<f64>)> = Vec::new();
        self.path.with_panels(a, b, |ps| {
            for p in ps {
                let lo = a.max(p.a);
                let hi = b.min(p.b);
                if !(hi > lo) {
                    continue;
                }
                let red = Reduced::new(p, zeta, d);
                let mut cuts = vec![lo, hi];
                for th in &self.directions {
                    find_roots(|r| red.project(th, r), lo, hi, &mut cuts);
                }
                cuts.sort_by(f64::total_cmp);
                cuts.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * span);
                pieces.push((red, cuts));
            }
        })?;
        let mut buf = vec![0.0; d];
        let mut total_at = |n: usize| {
            let gl = GaussLegendre::cached(n);
            let mut acc = Complex64::new(0.0, 0.0);
            for (red, cuts) in &pieces {
                for w in cuts.windows(2) {
                    let (c, h) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
                    if h <= 0.0 {
                        continue;
                    }
                    // r = c + h (3u - u^3)/2 clusters nodes at both ends.
                    for (u, wt) in gl.nodes.iter().zip(&gl.weights) {
                        let r = c + 0.5 * h * (3.0 * u - u * u * u);
                        let jac = 1.5 * h * (1.0 - u * u);
                        red.eval(r, &mut buf);
                        acc += self.table.eval(&buf) * (wt * jac);
                    }
                }
            }
            acc
        };
        let mut n = nodes.max(4);
        let mut prev = total_at(n);
        loop {
            n *= 2;
            let cur = total_at(n);
            let diff = (cur - prev).norm();
            if diff <= EXPONENT_REL_TOL * cur.norm() + 1e-15 * span {
                return Ok(cur);
            }
            if n >= MAX_TIME_NODES {
                if diff <= 1e-6 * cur.norm() {
                    return Ok(cur);
                }
                return Err(Error::QuadratureFailure(format!(
                    "exponent time integral on [{a}, {b}] unresolved: change {diff:e} at {n} nodes"
                )));
            }
            prev = cur;
        }
    }

    /// Exact image of a plane-wave sum under U(t,s).
    pub fn evolve(&self, s: f64, t: f64, waves: &PlaneWaveSum) -> Result<PlaneWaveSum> {
        if waves.dim() != self.n {
            return Err(Error::BadParam("plane-wave dimension does not match the state".into()));
        }
        let prop = self.freq_propagator(s, t)?;
        waves.map_terms(|amp, f| {
            let psi = self.exponent(s, t, f)?;
            let nf = &prop * DVector::from_column_slice(f);
            Ok((amp * (-psi).exp(), nf.as_slice().to_vec()))
        })
    }

    /// min over unit probes of Re psi_{0,t}(R p) / R^alpha on each shell radius.
    pub fn exponent_lower_bound(&self, t: f64, radii: &[f64], probes: usize) -> Result<f64> {
        let dirs = crate::levy::unit_probes(self.n, probes);
        let mut best = f64::INFINITY;
        for &rad in radii {
            for p in &dirs {
                let w: Vec<f64> = p.iter().map(|v| v * rad).collect();
                let re = self.exponent(0.0, t, &w)?.re;
                best = best.min(re / rad.powf(self.alpha()));
            }
        }
        Ok(best)
    }

    pub(crate) fn cached_density(&self, s: f64, t: f64, grid: &FourierGrid) -> Result<Arc<DensityField>> {
        let key: DensityKey = (
            s.to_bits(),
            t.to_bits(),
            grid.points_per_dim,
            grid.half_width.iter().map(|v| v.to_bits()).collect(),
            grid.center.iter().map(|v| v.to_bits()).collect(),
        );
        if let Some(f) = self.densities.lock().expect("density cache").get(&key) {
            return Ok(f.clone());
        }
        let f = Arc::new(density::density_between(self, s, t, grid)?);
        self.densities.lock().expect("density cache").insert(key, f.clone());
        Ok(f)
    }

    pub(crate) fn noise_path(&self) -> &NoisePath {
        &self.path
    }

    /// Resolves a grid request for the noise law over [s, t].
    pub fn resolve_grid(&self, s: f64, t: f64, spec: &GridSpec) -> Result<FourierGrid> {
        match spec {
            GridSpec::Auto { points_per_dim } => density::auto_grid_between(self, s, t, *points_per_dim),
            GridSpec::Fixed(g) => Ok(g.clone()),
        }
    }

    /// U(t,s) phi(x) by summation against the FFT density.
    pub fn apply_grid(
        &self,
        s: f64,
        t: f64,
        phi: &(dyn Fn(&[f64]) -> f64 + Sync),
        x: &[f64],
        spec: &GridSpec,
    ) -> Result<f64> {
        if t == s {
            return Ok(phi(x));
        }
        let grid = self.resolve_grid(s, t, spec)?;
        let dens = self.cached_density(s, t, &grid)?;
        let shift = self.flow(s, t)? * DVector::from_column_slice(x);
        Ok(dens.expect(phi, shift.as_slice()))
    }
}

/// Characteristic exponent of the noise law at time t, started at 0.
pub fn ou_characteristic_exponent(model: &OuModel, t: f64, xi: &[f64], time_quad: usize) -> Result<Complex64> {
    model.exponent_with(0.0, t, xi, time_quad)
}

/// P_t phi(x) by FFT density summation.
pub fn apply_semigroup(
    model: &OuModel,
    t: f64,
    phi: &(dyn Fn(&[f64]) -> f64 + Sync),
    x: &[f64],
    grid: &GridSpec,
) -> Result<f64> {
    model.apply_grid(0.0, t, phi, x, grid)
}

/// Sign changes of `f` on [lo, hi], refined by bisection, appended to `out`.
fn find_roots(f: impl Fn(f64) -> f64, lo: f64, hi: f64, out: &mut Vec<f64>) {
    const SAMPLES: usize = 32;
    let h = (hi - lo) / SAMPLES as f64;
    let mut xa = lo;
    let mut fa = f(lo);
    for k in 1..=SAMPLES {
        let xb = if k == SAMPLES { hi } else { lo + k as f64 * h };
        let fb = f(xb);
        if fa == 0.0 && k > 1 {
            out.push(xa);
        } else if fa * fb < 0.0 {
            let (mut l, mut r, mut fl) = (xa, xb, fa);
            for _ in 0..200 {
                let m = 0.5 * (l + r);
                if m <= l || m >= r {
                    break;
                }
                let fm = f(m);
                if fm == 0.0 {
                    l = m;
                    r = m;
                    break;
                }
                if fl * fm < 0.0 {
                    r = m;
                } else {
                    l = m;
                    fl = fm;
                }
            }
            out.push(0.5 * (l + r));
        }
        xa = xb;
        fa = fb;
    }
}
