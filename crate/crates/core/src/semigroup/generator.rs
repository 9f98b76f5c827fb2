//! The OU generator applied pointwise, and finite-difference derivatives of
//! semigroup outputs.

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;

use super::{GridSpec, OuModel};
use crate::error::{Error, Result};
use crate::quadrature::{integrate_adaptive, GkTol};
use crate::testfn::{PlaneWaveSum, TestFn};

const JUMP_HORIZON: f64 = 1e4;
const TAIL_SAMPLES: usize = 64;

#[derive(Debug, Clone, Copy)]
pub struct GeneratorOptions {
    /// Scale on which phi varies; sets finite-difference steps and the Taylor cutoff.
    pub length_scale: f64,
    /// Time at which time-dependent coefficients are frozen.
    pub time: f64,
    pub rel_tol: f64,
    /// Absolute quadrature tolerance for each jump integral.
    pub abs_tol: f64,
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        Self { length_scale: 1.0, time: 0.0, rel_tol: 1e-9, abs_tol: 1e-13 }
    }
}

/// Fourth-order first and second derivatives of s -> phi(x + s v) at 0.
fn directional(phi: &dyn Fn(&[f64]) -> f64, x: &[f64], v: &[f64], h: f64, f0: f64) -> (f64, f64) {
    let mut y = x.to_vec();
    let mut at = |s: f64| {
        for i in 0..x.len() {
            y[i] = x[i] + s * v[i];
        }
        phi(&y)
    };
    let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
    let d1 = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
    let d2 = (16.0 * (p1 + m1) - (p2 + m2) - 30.0 * f0) / (12.0 * h * h);
    (d1, d2)
}

/// L phi(x): drift, Gaussian and compensated jump parts.
pub fn apply_generator(
    model: &OuModel,
    phi: &(dyn Fn(&[f64]) -> f64 + Sync),
    x: &[f64],
    opts: GeneratorOptions,
) -> Result<f64> {
    let n = model.state_dim();
    if x.len() != n {
        return Err(Error::BadParam(format!("point has dimension {}, expected {n}", x.len())));
    }
    let ell = opts.length_scale;
    if !(ell > 0.0) {
        return Err(Error::BadParam("length scale must be positive".into()));
    }
    let f0 = phi(x);
    let load = model.noise_at(opts.time);
    let levy = &model.levy;
    let xv = DVector::from_column_slice(x);
    let mut total = 0.0;

    let drift = model.drift_at(opts.time) * &xv + &load * &levy.b;
    let dn = drift.norm();
    if dn > 0.0 {
        let (d1, _) = directional(phi, x, drift.as_slice(), 0.05 * ell / dn, f0);
        total += d1;
    }

    let cov = &load * &levy.q_gauss * load.transpose();
    if cov.amax() > 0.0 {
        let eig = cov.symmetric_eigen();
        for k in 0..n {
            let lam = eig.eigenvalues[k];
            if lam.abs() <= 1e-15 * eig.eigenvalues.amax() {
                continue;
            }
            let u = eig.eigenvectors.column(k);
            let (_, d2) = directional(phi, x, u.as_slice(), 0.05 * ell, f0);
            total += 0.5 * lam * d2;
        }
    }

    let mut y = vec![0.0; n];
    for (idx, atom) in levy.mu.atoms.iter().enumerate() {
        let prof = levy.profile(idx)?;
        let v = &load * DVector::from_column_slice(&atom.theta);
        let vn = v.norm();
        if vn == 0.0 {
            continue;
        }
        let (d1, d2) = directional(phi, x, v.as_slice(), 0.05 * ell / vn, f0);
        let end = prof.support_end();
        let upper = end.min(JUMP_HORIZON);
        let rc = (1e-3 * ell / vn).min(0.5 * upper.min(1.0));
        let mut part = 0.5 * d2 * prof.moment(0.0, rc, 2.0)?;
        let mut integrand = |u: f64| {
            let r = u.exp();
            for i in 0..n {
                y[i] = x[i] + r * v[i];
            }
            let comp = if r <= 1.0 { r * d1 } else { 0.0 };
            (phi(&y) - f0 - comp) * prof.g(r) * r
        };
        let breaks = [0.0, levy.r0.ln()];
        let tol = GkTol { abs: opts.abs_tol, rel: opts.rel_tol, max_panels: 20000 };
        part += integrate_adaptive(&mut integrand, rc.ln(), upper.ln(), &breaks, tol)?.0;
        if end > upper {
            // Far jumps: average phi over radii spread like the power tail.
            let kappa = -1.0 - (prof.g(2.0 * upper) / prof.g(upper)).log2();
            let mut mean = 0.0;
            for k in 0..TAIL_SAMPLES {
                let u = (k as f64 + 0.5) / TAIL_SAMPLES as f64;
                let r = upper * u.powf(-1.0 / kappa);
                for i in 0..n {
                    y[i] = x[i] + r * v[i];
                }
                mean += phi(&y) - f0;
            }
            part += mean / TAIL_SAMPLES as f64 * prof.moment(upper, f64::INFINITY, 0.0)?;
        }
        total += atom.weight * part;
    }
    Ok(total)
}

/// K(xi) with L e^{i<xi, x>} = e^{i<xi, x>} (K(xi) + i <xi, A(t) x>).
///
/// The jump part is a real-space quadrature along each atom direction, so it
/// does not share code with the symbol evaluation.
pub fn plane_wave_factor(model: &OuModel, xi: &[f64], time: f64, abs_tol: f64) -> Result<Complex64> {
    let load = model.noise_at(time);
    let levy = &model.levy;
    let lt_xi = load.transpose() * DVector::from_column_slice(xi);
    let mut k = Complex64::new(-0.5 * lt_xi.dot(&(&levy.q_gauss * &lt_xi)), lt_xi.dot(&levy.b));
    for (idx, atom) in levy.mu.atoms.iter().enumerate() {
        let s: f64 = lt_xi.iter().zip(&atom.theta).map(|(a, b)| a * b).sum();
        if s == 0.0 {
            continue;
        }
        let prof = levy.profile(idx)?;
        let end = prof.support_end();
        let upper = end.min(JUMP_HORIZON);
        let rc = (1e-3 / s.abs()).min(0.5 * upper.min(1.0));
        let mut part = Complex64::new(-0.5 * s * s * prof.moment(0.0, rc, 2.0)?, 0.0);
        let integrand = |u: f64| {
            let r = u.exp();
            let comp = if r <= 1.0 { r * s } else { 0.0 };
            let (sn, cs) = (r * s).sin_cos();
            Complex64::new(cs - 1.0, sn - comp) * (prof.g(r) * r)
        };
        let tol = GkTol { abs: abs_tol, rel: 1e-7, max_panels: 200_000 };
        part += integrate_adaptive(integrand, rc.ln(), upper.ln(), &[0.0, levy.r0.ln()], tol)?.0;
        if end > upper {
            let kappa = -1.0 - (prof.g(2.0 * upper) / prof.g(upper)).log2();
            let mut mean = Complex64::new(0.0, 0.0);
            for j in 0..TAIL_SAMPLES {
                let u = (j as f64 + 0.5) / TAIL_SAMPLES as f64;
                let r = upper * u.powf(-1.0 / kappa);
                mean += Complex64::from_polar(1.0, r * s) - 1.0;
            }
            part += mean / TAIL_SAMPLES as f64 * prof.moment(upper, f64::INFINITY, 0.0)?;
        }
        k += part * atom.weight;
    }
    Ok(k)
}

/// L w at each point for a plane-wave sum, with one jump quadrature per term
/// shared by all points. Quadrature errors total at most `1e-7 sup|w|`.
pub fn apply_generator_waves(model: &OuModel, w: &PlaneWaveSum, xs: &[Vec<f64>], time: f64) -> Result<Vec<f64>> {
    let n = model.state_dim();
    if let Some(x) = xs.iter().find(|x| x.len() != n) {
        return Err(Error::BadParam(format!("point has dimension {}, expected {n}", x.len())));
    }
    let budget = 1e-7 * w.sup_bound() / w.len().max(1) as f64;
    let terms: Vec<(Complex64, &[f64])> = w.terms().collect();
    let factors: Result<Vec<Complex64>> = terms
        .par_iter()
        .map(|(a, f)| plane_wave_factor(model, f, time, (budget / a.norm()).max(1e-300)))
        .collect();
    let factors = factors?;
    let a_t = model.drift_at(time);
    Ok(xs
        .iter()
        .map(|x| {
            let ax = &a_t * DVector::from_column_slice(x);
            terms
                .iter()
                .zip(&factors)
                .map(|((a, f), k)| {
                    let ph: f64 = f.iter().zip(x).map(|(p, q)| p * q).sum();
                    let flow: f64 = f.iter().zip(ax.iter()).map(|(p, q)| p * q).sum();
                    (a * Complex64::from_polar(1.0, ph) * (k + Complex64::new(0.0, flow))).re
                })
                .sum()
        })
        .collect())
}

/// Finite-difference derivative of order 1, 2 or 3 in coordinate i with step h.
pub fn fd_derivative(
    f: &dyn Fn(&[f64]) -> Result<f64>,
    x: &[f64],
    i: usize,
    order: usize,
    h: f64,
) -> Result<f64> {
    if !(h > 1e-9 * (1.0 + x[i].abs())) {
        return Err(Error::StepUnderflow(h));
    }
    let mut y = x.to_vec();
    let mut at = |s: f64| {
        y[i] = x[i] + s * h;
        f(&y)
    };
    match order {
        1 => Ok((at(1.0)? - at(-1.0)?) / (2.0 * h)),
        2 => {
            let c = f(x)?;
            Ok((at(1.0)? - 2.0 * c + at(-1.0)?) / (h * h))
        }
        3 => Ok((at(2.0)? - 2.0 * at(1.0)? + 2.0 * at(-1.0)? - at(-2.0)?) / (2.0 * h * h * h)),
        _ => Err(Error::BadParam(format!("derivative order must be 1, 2 or 3, got {order}"))),
    }
}

/// D_i^order of x -> P_t phi(x) with a step at the intrinsic scale of coordinate i.
///
/// Plane-wave inputs are evolved exactly; other inputs go through the FFT density.
pub fn derivative_estimate(
    model: &OuModel,
    t: f64,
    phi: &TestFn,
    x: &[f64],
    i: usize,
    order: usize,
    grid: &GridSpec,
) -> Result<f64> {
    if i >= model.state_dim() {
        return Err(Error::BadParam(format!("coordinate {i} out of range")));
    }
    if !(t > 0.0) {
        return Err(Error::SingularTime(t));
    }
    let h = 0.1 * model.intrinsic_scale(model.axis_block(i), t);
    match phi.waves() {
        Some(w) => {
            let u = model.evolve(0.0, t, w)?;
            fd_derivative(&|y| Ok(u.eval(y)), x, i, order, h)
        }
        None => {
            let g = model.resolve_grid(0.0, t, grid)?;
            let spec = GridSpec::Fixed(g);
            let f = |y: &[f64]| phi.eval(y);
            fd_derivative(&|y| model.apply_grid(0.0, t, &f, y, &spec), x, i, order, h)
        }
    }
}
