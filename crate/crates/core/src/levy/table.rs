//! Cached interpolation of the radial transforms on a log-spaced frequency grid.
//!
//! For each distinct atom profile the table stores ln Re G(u) and the ratio
//! Im G(u) / Re G(u) as natural cubic splines in ln u. Outside the tabulated
//! range both are continued as power laws.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use super::{dot, LevyModel, RadialProfile};
use crate::error::Result;

/// Default tabulation density.
pub const NODES_PER_DECADE: usize = 128;
const LOG10_U_MIN: f64 = -10.0;
const LOG10_U_MAX: f64 = 12.0;

#[derive(Debug, Clone)]
struct Spline {
    v0: f64,
    h: f64,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl Spline {
    fn natural(v0: f64, h: f64, y: Vec<f64>) -> Self {
        let n = y.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Tridiagonal system for interior second derivatives (Thomas algorithm).
            let k = n - 2;
            let mut c = vec![0.0; k];
            let mut d = vec![0.0; k];
            for i in 0..k {
                let rhs = 6.0 * (y[i + 2] - 2.0 * y[i + 1] + y[i]) / (h * h);
                let (ci, di) = if i == 0 {
                    (1.0 / 4.0, rhs / 4.0)
                } else {
                    let den = 4.0 - c[i - 1];
                    (1.0 / den, (rhs - d[i - 1]) / den)
                };
                c[i] = ci;
                d[i] = di;
            }
            for i in (0..k).rev() {
                m[i + 1] = if i + 1 == k { d[i] } else { d[i] - c[i] * m[i + 2] };
            }
        }
        Self { v0, h, y, m }
    }

    fn eval(&self, v: f64) -> f64 {
        let n = self.y.len();
        let x = (v - self.v0) / self.h;
        let i = (x.floor() as isize).clamp(0, n as isize - 2) as usize;
        let t = x - i as f64;
        let a = 1.0 - t;
        let h2 = self.h * self.h / 6.0;
        a * self.y[i]
            + t * self.y[i + 1]
            + h2 * ((a * a * a - a) * self.m[i] + (t * t * t - t) * self.m[i + 1])
    }

    fn v_end(&self) -> f64 {
        self.v0 + self.h * (self.y.len() - 1) as f64
    }

    fn end_slopes(&self) -> (f64, f64) {
        let n = self.y.len();
        ((self.y[1] - self.y[0]) / self.h, (self.y[n - 1] - self.y[n - 2]) / self.h)
    }
}

/// Continuation y(m) = a + b q^m past the last node, fitted to three end values.
#[derive(Debug, Clone, Copy)]
struct EndTrend {
    y_end: f64,
    step: f64,
    q: f64,
}

impl EndTrend {
    /// `y0, y1, y2` ordered towards the end of the grid.
    fn fit(y0: f64, y1: f64, y2: f64) -> Self {
        let (d1, d2) = (y1 - y0, y2 - y1);
        let q = if d1 != 0.0 { d2 / d1 } else { 0.0 };
        // Ratios outside (0, 2) mean noise or sign changes; hold the end value.
        let q = if q > 0.0 && q < 2.0 { q } else { 0.0 };
        Self { y_end: y2, step: if q > 0.0 { d2 } else { 0.0 }, q }
    }

    /// Value `m >= 0` grid steps past the end.
    fn eval(&self, m: f64) -> f64 {
        if self.q == 0.0 {
            return self.y_end;
        }
        if (self.q - 1.0).abs() < 1e-12 {
            return self.y_end + self.step * m;
        }
        self.y_end + self.step * self.q * (self.q.powf(m) - 1.0) / (self.q - 1.0)
    }
}

#[derive(Debug, Clone)]
struct ProfileTable {
    ln_re: Spline,
    ratio: Spline,
    slopes_re: (f64, f64),
    ratio_ends: (EndTrend, EndTrend),
}

impl ProfileTable {
    fn build(profile: &RadialProfile, per_decade: usize) -> Result<Self> {
        let n = ((LOG10_U_MAX - LOG10_U_MIN) * per_decade as f64).round() as usize + 1;
        let h = std::f64::consts::LN_10 / per_decade as f64;
        let v0 = LOG10_U_MIN * std::f64::consts::LN_10;
        let vals: Vec<Complex64> = (0..n)
            .into_par_iter()
            .map(|k| profile.transform((v0 + h * k as f64).exp()))
            .collect::<Result<_>>()?;
        let ln_re: Vec<f64> = vals.iter().map(|g| g.re.ln()).collect();
        let ratio: Vec<f64> = vals.iter().map(|g| g.im / g.re).collect();
        let ln_re = Spline::natural(v0, h, ln_re);
        let ratio = Spline::natural(v0, h, ratio);
        let slopes_re = ln_re.end_slopes();
        let y = &ratio.y;
        let ratio_ends = (EndTrend::fit(y[2], y[1], y[0]), EndTrend::fit(y[n - 3], y[n - 2], y[n - 1]));
        Ok(Self { ln_re, ratio, slopes_re, ratio_ends })
    }

    fn eval_positive(&self, u: f64) -> Complex64 {
        let v = u.ln();
        let (lr, rho) = if v < self.ln_re.v0 {
            let dv = v - self.ln_re.v0;
            (
                self.ln_re.y[0] + self.slopes_re.0 * dv,
                self.ratio_ends.0.eval(-dv / self.ln_re.h),
            )
        } else if v > self.ln_re.v_end() {
            let dv = v - self.ln_re.v_end();
            let n = self.ln_re.y.len();
            (
                self.ln_re.y[n - 1] + self.slopes_re.1 * dv,
                self.ratio_ends.1.eval(dv / self.ln_re.h),
            )
        } else {
            (self.ln_re.eval(v), self.ratio.eval(v))
        };
        let re = lr.exp();
        Complex64::new(re, re * rho)
    }

    fn eval(&self, u: f64) -> Complex64 {
        if u > 0.0 {
            self.eval_positive(u)
        } else if u < 0.0 {
            self.eval_positive(-u).conj()
        } else {
            Complex64::new(0.0, 0.0)
        }
    }
}

/// Fast evaluator of the Levy symbol built from per-profile tables.
#[derive(Debug, Clone)]
pub struct SymbolTable {
    d: usize,
    b: DVector<f64>,
    q_gauss: DMatrix<f64>,
    /// (direction, weight, profile index)
    atoms: Vec<(Vec<f64>, f64, usize)>,
    profiles: Vec<ProfileTable>,
    has_gauss: bool,
}

impl SymbolTable {
    pub fn build(model: &LevyModel, per_decade: usize) -> Result<Self> {
        let mut keys: Vec<RadialProfile> = Vec::new();
        let mut atoms = Vec::new();
        for (i, a) in model.mu.atoms.iter().enumerate() {
            let p = model.profile(i)?;
            let idx = match keys.iter().position(|k| *k == p) {
                Some(j) => j,
                None => {
                    keys.push(p);
                    keys.len() - 1
                }
            };
            atoms.push((a.theta.clone(), a.weight, idx));
        }
        let profiles = keys
            .iter()
            .map(|p| ProfileTable::build(p, per_decade))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            d: model.dim(),
            b: model.b.clone(),
            q_gauss: model.q_gauss.clone(),
            atoms,
            profiles,
            has_gauss: model.q_gauss.amax() > 0.0,
        })
    }

    /// Process-wide cached table for `model` at the default density.
    pub fn shared(model: &LevyModel) -> Result<Arc<SymbolTable>> {
        static CACHE: OnceLock<Mutex<HashMap<String, Arc<SymbolTable>>>> = OnceLock::new();
        let key = model.content_hash();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(t) = cache.lock().expect("table cache poisoned").get(&key) {
            return Ok(t.clone());
        }
        let t = Arc::new(Self::build(model, NODES_PER_DECADE)?);
        cache.lock().expect("table cache poisoned").insert(key, t.clone());
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Distinct atom directions up to sign (kinks of the symbol along a path).
    pub fn directions(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for (th, _, _) in &self.atoms {
            let dup = out.iter().any(|o| {
                o.iter().zip(th).all(|(a, b)| (a - b).abs() < 1e-12)
                    || o.iter().zip(th).all(|(a, b)| (a + b).abs() < 1e-12)
            });
            if !dup {
                out.push(th.clone());
            }
        }
        out
    }

    /// Phi(p).
    pub fn eval(&self, p: &[f64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, -dot(self.b.as_slice(), p));
        if self.has_gauss {
            let mut q = 0.0;
            for i in 0..self.d {
                for j in 0..self.d {
                    q += p[i] * self.q_gauss[(i, j)] * p[j];
                }
            }
            acc.re += 0.5 * q;
        }
        for (th, w, k) in &self.atoms {
            acc += self.profiles[*k].eval(dot(p, th)) * *w;
        }
        acc
    }

    /// Largest relative deviation from direct quadrature over the given points.
    pub fn max_rel_error(&self, model: &LevyModel, points: &[Vec<f64>]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for p in points {
            let exact = model.symbol(p)?;
            let approx = self.eval(p);
            if exact.norm() > 0.0 {
                worst = worst.max((approx - exact).norm() / exact.norm());
            }
        }
        Ok(worst)
    }
}
