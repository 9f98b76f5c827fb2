//! Elliptic and parabolic problems for the OU operator, solved through the
//! semigroup: `u = int_0^inf e^{-lambda t} P_t g dt` and the Duhamel formula.
//!
//! Plane-wave data give plane-wave solutions (each time node of the integral
//! contributes one evolved wave), so the solution is available everywhere and
//! can be fed to the generator. Other data go through FFT densities at probe
//! points only.

mod expand;
mod transform;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use crate::semigroup::{apply_generator_waves, GeneratorOptions, GridSpec, OuModel};
use crate::testfn::{PlaneWaveSum, TestFn};

pub use expand::ExpandOptions;
pub use transform::{transform_t, ScalarFn, TransformSpec, VectorFn};

use expand::expand_term;

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub expand: ExpandOptions,
    /// Grid for non-plane-wave data.
    pub grid: GridSpec,
    /// Log-time nodes per decade for the grid route of the elliptic integral.
    pub per_decade: usize,
    /// First log-time node of the grid route.
    pub grid_t_min: f64,
    /// Uniform Duhamel steps for the grid route.
    pub duhamel_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            expand: ExpandOptions::default(),
            grid: GridSpec::default(),
            per_decade: 8,
            grid_t_min: 1e-4,
            duhamel_steps: 32,
        }
    }
}

pub struct EllipticProblem<'a> {
    pub model: &'a OuModel,
    pub lambda: f64,
    pub g: TestFn,
}

/// Source `f(t, x) = a(t) F(x)`; `a` defaults to 1.
#[derive(Clone)]
pub struct Source {
    pub spatial: TestFn,
    pub time_factor: Option<ScalarFn>,
}

impl Source {
    pub fn steady(spatial: TestFn) -> Self {
        Self { spatial, time_factor: None }
    }

    pub fn factor(&self, t: f64) -> f64 {
        self.time_factor.as_ref().map_or(1.0, |a| a(t))
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        self.factor(t) * self.spatial.eval(x)
    }
}

pub struct ParabolicProblem<'a> {
    pub model: &'a OuModel,
    pub horizon: f64,
    pub u0: TestFn,
    pub f: Source,
}

#[derive(Debug, Clone)]
pub struct EllipticSolution {
    pub lambda: f64,
    /// Whole solution, when the source is a plane-wave sum.
    pub waves: Option<PlaneWaveSum>,
    pub probes: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TimeSlice {
    pub t: f64,
    pub waves: Option<PlaneWaveSum>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ParabolicSolution {
    pub probes: Vec<Vec<f64>>,
    pub slices: Vec<TimeSlice>,
}

impl ParabolicSolution {
    pub fn at(&self, t: f64) -> Option<&TimeSlice> {
        self.slices.iter().find(|s| s.t == t)
    }
}

fn laplace_horizon(lambda: f64) -> f64 {
    (40.0 / lambda).max(1.0)
}

/// Probe set used to steer the adaptive expansion.
fn steering(probes: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let mut p = vec![vec![0.0; n]];
    p.extend(probes.iter().cloned());
    p
}

/// Frequency above which the wave amplitudes are below `rel` of the total.
pub fn effective_frequency(w: &PlaneWaveSum, rel: f64) -> f64 {
    let cut = rel * w.sup_bound();
    w.terms()
        .filter(|(a, _)| a.norm() >= cut)
        .map(|(_, f)| f.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Generator options matched to the finest scale present in `w`.
pub fn generator_options_for(w: &PlaneWaveSum, time: f64) -> GeneratorOptions {
    let f = effective_frequency(w, 1e-9);
    GeneratorOptions { length_scale: if f > 0.0 { 1.0 / f } else { 1.0 }, time, rel_tol: 1e-7, ..Default::default() }
}

/// u = int_0^inf e^{-lambda t} P_t g dt at the probes (and everywhere for wave data).
pub fn solve_elliptic(prob: &EllipticProblem, probes: &[Vec<f64>], opts: &SolverOptions) -> Result<EllipticSolution> {
    let lambda = prob.lambda;
    if !(lambda > 0.0) {
        return Err(Error::BadParam(format!("lambda must be positive, got {lambda}")));
    }
    let model = prob.model;
    let n = model.state_dim();
    let t_max = laplace_horizon(lambda);
    match prob.g.waves() {
        Some(g) => {
            let steer = steering(probes, n);
            let eo = opts.expand;
            let parts: Result<Vec<PlaneWaveSum>> = (0..g.len())
                .into_par_iter()
                .map(|k| {
                    let (amp, xi) = (g.amp(k), g.freq(k).to_vec());
                    let mut out = PlaneWaveSum::new(n);
                    let kernel = |tau: f64| -> Result<(Complex64, Vec<f64>)> {
                        let psi = model.exponent(0.0, tau, &xi)?;
                        let s = model.freq_propagator(0.0, tau)? * nalgebra::DVector::from_column_slice(&xi);
                        Ok((amp * (-lambda * tau - psi).exp(), s.as_slice().to_vec()))
                    };
                    // Below tau_min the integrand is frozen at its t = 0 value.
                    out.push(amp * (-(-lambda * eo.tau_min).exp_m1() / lambda), &xi);
                    expand_term(&kernel, eo.tau_min, t_max, amp.norm(), &steer, &eo, &mut out)?;
                    Ok(out)
                })
                .collect();
            let mut u = PlaneWaveSum::constant(n, g.constant / lambda);
            for p in parts? {
                u.extend(&p);
            }
            let values = probes.iter().map(|x| u.eval(x)).collect();
            Ok(EllipticSolution { lambda, waves: Some(u), probes: probes.to_vec(), values })
        }
        None => {
            let values = elliptic_on_grid(prob, probes, opts, t_max)?;
            Ok(EllipticSolution { lambda, waves: None, probes: probes.to_vec(), values })
        }
    }
}

fn elliptic_on_grid(prob: &EllipticProblem, probes: &[Vec<f64>], opts: &SolverOptions, t_max: f64) -> Result<Vec<f64>> {
    let lambda = prob.lambda;
    let t0 = opts.grid_t_min;
    let decades = (t_max / t0).log10();
    let m = (decades * opts.per_decade as f64).ceil().max(2.0) as usize;
    let dv = (t_max / t0).ln() / m as f64;
    let g = |y: &[f64]| prob.g.eval(y);
    let mut values: Vec<f64> = probes.iter().map(|x| g(x) * (-(-lambda * t0).exp_m1() / lambda)).collect();
    for j in 0..=m {
        let t = t0 * (j as f64 * dv).exp();
        let w = if j == 0 || j == m { 0.5 } else { 1.0 } * dv * t * (-lambda * t).exp();
        let grid = GridSpec::Fixed(prob.model.resolve_grid(0.0, t, &opts.grid)?);
        for (v, x) in values.iter_mut().zip(probes) {
            *v += w * prob.model.apply_grid(0.0, t, &g, x, &grid)?;
        }
    }
    Ok(values)
}

impl EllipticSolution {
    /// lambda u - L u - g at x; needs the wave form of u.
    pub fn residual(&self, prob: &EllipticProblem, x: &[f64]) -> Result<f64> {
        Ok(self.residuals(prob, &[x.to_vec()])?[0])
    }

    /// Residuals at several points, sharing the per-wave jump quadratures.
    pub fn residuals(&self, prob: &EllipticProblem, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let u = self
            .waves
            .as_ref()
            .ok_or_else(|| Error::BadParam("residuals need a plane-wave solution".into()))?;
        let lu = apply_generator_waves(prob.model, u, xs, 0.0)?;
        Ok(xs.iter().zip(lu).map(|(x, l)| self.lambda * u.eval(x) - l - prob.g.eval(x)).collect())
    }
}

/// int_0^t a(s) ds.
fn factor_integral(src: &Source, t: f64) -> f64 {
    match &src.time_factor {
        None => t,
        Some(a) => {
            let gl = GaussLegendre::cached(32);
            let pieces = (t / 0.125).ceil().max(1.0) as usize;
            (0..pieces)
                .map(|k| {
                    let lo = t * k as f64 / pieces as f64;
                    gl.integrate(lo, lo + t / pieces as f64, |s| a(s))
                })
                .sum()
        }
    }
}

/// Solution slice at time t as plane waves (wave data only).
pub fn parabolic_slice(prob: &ParabolicProblem, t: f64, probes: &[Vec<f64>], opts: &ExpandOptions) -> Result<PlaneWaveSum> {
    let model = prob.model;
    let n = model.state_dim();
    let (Some(u0), Some(f)) = (prob.u0.waves(), prob.f.spatial.waves()) else {
        return Err(Error::BadParam("plane-wave slices need plane-wave data".into()));
    };
    if !(t >= 0.0) {
        return Err(Error::BadParam(format!("time must be non-negative, got {t}")));
    }
    let mut u = model.evolve(0.0, t, u0)?;
    if t == 0.0 {
        return Ok(u);
    }
    u.constant += f.constant * factor_integral(&prob.f, t);
    let steer = steering(probes, n);
    let homogeneous = model.is_time_homogeneous();
    let parts: Result<Vec<PlaneWaveSum>> = (0..f.len())
        .into_par_iter()
        .map(|k| {
            let (amp, xi) = (f.amp(k), f.freq(k).to_vec());
            let mut out = PlaneWaveSum::new(n);
            let kernel = |tau: f64| -> Result<(Complex64, Vec<f64>)> {
                let s = (t - tau).max(0.0);
                let (from, to) = if homogeneous { (0.0, tau) } else { (s, t) };
                let psi = model.exponent(from, to, &xi)?;
                let w = model.freq_propagator(from, to)? * nalgebra::DVector::from_column_slice(&xi);
                Ok((amp * prob.f.factor(s) * (-psi).exp(), w.as_slice().to_vec()))
            };
            let tau_min = opts.tau_min.min(0.5 * t);
            out.push(amp * prob.f.factor(t) * tau_min, &xi);
            expand_term(&kernel, tau_min, t, amp.norm(), &steer, opts, &mut out)?;
            Ok(out)
        })
        .collect();
    for p in parts? {
        u.extend(&p);
    }
    Ok(u)
}

/// u(t, x) = U(t,0) u0 + int_0^t U(t,s) f(s) ds on the probe grid.
///
/// Time-dependent models use their two-parameter evolution; with a transform
/// the slices are post-composed with it.
pub fn solve_parabolic(
    prob: &ParabolicProblem,
    times: &[f64],
    probes: &[Vec<f64>],
    opts: &SolverOptions,
) -> Result<ParabolicSolution> {
    solve_transformed(prob, times, probes, opts, None)
}

/// Time-dependent solve with an optional exponential-shift transform.
pub fn solve_time_dependent(
    prob: &ParabolicProblem,
    times: &[f64],
    probes: &[Vec<f64>],
    opts: &SolverOptions,
    transform: Option<&TransformSpec>,
) -> Result<ParabolicSolution> {
    solve_transformed(prob, times, probes, opts, transform)
}

fn solve_transformed(
    prob: &ParabolicProblem,
    times: &[f64],
    probes: &[Vec<f64>],
    opts: &SolverOptions,
    transform: Option<&TransformSpec>,
) -> Result<ParabolicSolution> {
    if !(prob.horizon > 0.0) {
        return Err(Error::BadParam("horizon must be positive".into()));
    }
    if let Some(&t) = times.iter().find(|&&t| !(0.0..=prob.horizon).contains(&t)) {
        return Err(Error::BadParam(format!("time {t} outside [0, {}]", prob.horizon)));
    }
    let waves = prob.u0.waves().is_some() && prob.f.spatial.waves().is_some();
    let mut slices = Vec::with_capacity(times.len());
    for &t in times {
        if waves {
            let mut u = parabolic_slice(prob, t, probes, &opts.expand)?;
            if let Some(tr) = transform {
                u = tr.apply_waves(t, &u);
            }
            let values = probes.iter().map(|x| u.eval(x)).collect();
            slices.push(TimeSlice { t, waves: Some(u), values });
        } else {
            let values = match transform {
                None => parabolic_on_grid(prob, t, probes, opts)?,
                Some(tr) => {
                    let (c, f) = tr.running(t);
                    let shifted: Vec<Vec<f64>> =
                        probes.iter().map(|x| x.iter().zip(&f).map(|(a, b)| a + b).collect()).collect();
                    parabolic_on_grid(prob, t, &shifted, opts)?.into_iter().map(|v| v * (-c).exp()).collect()
                }
            };
            slices.push(TimeSlice { t, waves: None, values });
        }
    }
    Ok(ParabolicSolution { probes: probes.to_vec(), slices })
}

fn parabolic_on_grid(prob: &ParabolicProblem, t: f64, probes: &[Vec<f64>], opts: &SolverOptions) -> Result<Vec<f64>> {
    let model = prob.model;
    let u0 = |y: &[f64]| prob.u0.eval(y);
    let f = |y: &[f64]| prob.f.spatial.eval(y);
    if t == 0.0 {
        return Ok(probes.iter().map(|x| u0(x)).collect());
    }
    let grid0 = GridSpec::Fixed(model.resolve_grid(0.0, t, &opts.grid)?);
    let mut out = Vec::with_capacity(probes.len());
    for x in probes {
        out.push(model.apply_grid(0.0, t, &u0, x, &grid0)?);
    }
    let m = opts.duhamel_steps.max(1);
    let h = t / m as f64;
    for j in 0..=m {
        let s = j as f64 * h;
        let w = if j == 0 || j == m { 0.5 } else { 1.0 } * h * prob.f.factor(s);
        if s >= t {
            for (o, x) in out.iter_mut().zip(probes) {
                *o += w * f(x);
            }
            continue;
        }
        let grid = GridSpec::Fixed(model.resolve_grid(s, t, &opts.grid)?);
        for (o, x) in out.iter_mut().zip(probes) {
            *o += w * model.apply_grid(s, t, &f, x, &grid)?;
        }
    }
    Ok(out)
}

/// Extra drift in the transformed operator besides F0 itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformDrift {
    /// Operator `L_t + <F0, D> - c0`.
    Plain,
    /// Adds `<A(t) F(t), D>`, where F is the running integral of F0.
    WithShiftCoupling,
}

/// Parabolic residual `d_t u - L_t u - f` at (t, x) by central differences in time.
pub fn parabolic_residual(prob: &ParabolicProblem, t: f64, x: &[f64], dt: f64, opts: &ExpandOptions) -> Result<f64> {
    Ok(parabolic_residuals(prob, t, &[x.to_vec()], dt, opts)?[0])
}

/// Parabolic residuals at several points from one set of slices.
pub fn parabolic_residuals(
    prob: &ParabolicProblem,
    t: f64,
    xs: &[Vec<f64>],
    dt: f64,
    opts: &ExpandOptions,
) -> Result<Vec<f64>> {
    if !(t - dt > 0.0) {
        return Err(Error::BadParam(format!("time step {dt} too large at t = {t}")));
    }
    let up = parabolic_slice(prob, t + dt, xs, opts)?;
    let dn = parabolic_slice(prob, t - dt, xs, opts)?;
    let u = parabolic_slice(prob, t, xs, opts)?;
    let lu = apply_generator_waves(prob.model, &u, xs, t)?;
    Ok(xs
        .iter()
        .zip(lu)
        .map(|(x, l)| (up.eval(x) - dn.eval(x)) / (2.0 * dt) - l - prob.f.eval(t, x))
        .collect())
}

/// Residual of the transformed equation
/// `d_t w - (L_t + <F0, D> - c0) w - T f` for `w = T u`.
pub fn transformed_residual(
    prob: &ParabolicProblem,
    spec: &TransformSpec,
    t: f64,
    x: &[f64],
    dt: f64,
    opts: &ExpandOptions,
    drift: TransformDrift,
) -> Result<f64> {
    if !(t - dt > 0.0) {
        return Err(Error::BadParam(format!("time step {dt} too large at t = {t}")));
    }
    let steer = vec![x.to_vec()];
    let slice = |s: f64| -> Result<PlaneWaveSum> { Ok(spec.apply_waves(s, &parabolic_slice(prob, s, &steer, opts)?)) };
    let (up, dn, w) = (slice(t + dt)?, slice(t - dt)?, slice(t)?);
    let dwdt = (up.eval(x) - dn.eval(x)) / (2.0 * dt);
    let lw = apply_generator_waves(prob.model, &w, &steer, t)?[0];
    let grad = w.gradient(x);
    let mut vel = (spec.f0)(t);
    if drift == TransformDrift::WithShiftCoupling {
        let (_, shift) = spec.running(t);
        let extra = prob.model.drift_at(t) * nalgebra::DVector::from_vec(shift);
        for (v, e) in vel.iter_mut().zip(extra.iter()) {
            *v += e;
        }
    }
    let transport: f64 = vel.iter().zip(&grad).map(|(a, b)| a * b).sum();
    let c0 = (spec.c0)(t);
    let tf = spec.apply(&|s, y| prob.f.eval(s, y), t, x);
    Ok(dwdt - lw - transport + c0 * w.eval(x) - tf)
}
