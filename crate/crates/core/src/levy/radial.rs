//! Radial Levy densities g(r) = Q(r) r^{-1-alpha} and their compensated
//! Fourier-type transform
//!
//!   G(u) = int_0^inf (1 - e^{iru} + i r u 1_{r<=1}) g(r) dr.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{gk15, integrate_adaptive, wynn_epsilon, GkTol};

/// Shape of Q(r) for one spherical atom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RadialKind {
    Stable,
    Truncated,
    Layered { beta: f64 },
    Tempered { lambda: f64 },
    /// `dim` is the dimension of the noise.
    Relativistic { dim: usize },
    Lamperti { f: f64 },
}

/// g(r) on one analytic segment, continued analytically beyond its end.
#[derive(Debug, Clone, Copy, PartialEq)]
enum SegLaw {
    /// coef * r^{-1-kappa}
    Power { coef: f64, kappa: f64 },
    /// The family formula itself.
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Segment {
    lo: f64,
    hi: f64,
    law: SegLaw,
}

/// Radial profile of a single atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub kind: RadialKind,
    pub alpha: f64,
    pub r0: f64,
}

const REL_TOL: f64 = 1e-13;
/// Density level below which exponentially decaying profiles are cut.
const TAIL_CUT: f64 = 1e-17;

impl RadialProfile {
    pub fn new(kind: RadialKind, alpha: f64, r0: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::BadParam(format!("alpha must lie in (0,2), got {alpha}")));
        }
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(Error::BadParam(format!("r0 must be positive, got {r0}")));
        }
        match kind {
            RadialKind::Layered { beta } if !(beta > 0.0 && beta < 2.0) => {
                return Err(Error::BadParam(format!("layered beta must lie in (0,2), got {beta}")))
            }
            RadialKind::Tempered { lambda } if !(lambda > 0.0 && lambda.is_finite()) => {
                return Err(Error::BadParam(format!("tempering rate must be positive, got {lambda}")))
            }
            RadialKind::Relativistic { dim: 0 } => {
                return Err(Error::BadParam("relativistic profile needs dim >= 1".into()))
            }
            RadialKind::Lamperti { f } if !(f < 1.0 + alpha) || !f.is_finite() => {
                return Err(Error::BadParam(format!(
                    "lamperti profile needs sup f < 1 + alpha = {}, got {f}",
                    1.0 + alpha
                )))
            }
            _ => {}
        }
        Ok(Self { kind, alpha, r0 })
    }

    /// Q(r).
    pub fn q(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        match self.kind {
            RadialKind::Stable => 1.0,
            RadialKind::Truncated => {
                if r <= self.r0 {
                    1.0
                } else {
                    0.0
                }
            }
            RadialKind::Layered { beta } => {
                if r <= self.r0 {
                    1.0
                } else {
                    r.powf(self.alpha - beta)
                }
            }
            _ => (self.ln_q_smooth(r)).exp(),
        }
    }

    fn ln_q_smooth(&self, r: f64) -> f64 {
        match self.kind {
            RadialKind::Tempered { lambda } => -lambda * r,
            RadialKind::Relativistic { dim } => {
                0.5 * (dim as f64 + self.alpha - 1.0) * r.ln_1p() - r
            }
            RadialKind::Lamperti { f } => {
                let ln_expm1 = if r > 30.0 { r + (-(-r).exp()).ln_1p() } else { r.exp_m1().ln() };
                r * f + (1.0 + self.alpha) * (r.ln() - ln_expm1)
            }
            _ => self.q(r).ln(),
        }
    }

    /// g(r) = Q(r) r^{-1-alpha}.
    pub fn g(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        match self.kind {
            RadialKind::Stable | RadialKind::Truncated | RadialKind::Layered { .. } => {
                self.q(r) * r.powf(-1.0 - self.alpha)
            }
            _ => (self.ln_q_smooth(r) - (1.0 + self.alpha) * r.ln()).exp(),
        }
    }

    fn segments(&self) -> Vec<Segment> {
        let a = self.alpha;
        match self.kind {
            RadialKind::Stable => {
                vec![Segment { lo: 0.0, hi: f64::INFINITY, law: SegLaw::Power { coef: 1.0, kappa: a } }]
            }
            RadialKind::Truncated => {
                vec![Segment { lo: 0.0, hi: self.r0, law: SegLaw::Power { coef: 1.0, kappa: a } }]
            }
            RadialKind::Layered { beta } => vec![
                Segment { lo: 0.0, hi: self.r0, law: SegLaw::Power { coef: 1.0, kappa: a } },
                Segment {
                    lo: self.r0,
                    hi: f64::INFINITY,
                    law: SegLaw::Power { coef: 1.0, kappa: beta },
                },
            ],
            _ => vec![Segment { lo: 0.0, hi: f64::INFINITY, law: SegLaw::Smooth }],
        }
    }

    fn g_seg(&self, law: SegLaw, r: f64) -> f64 {
        match law {
            SegLaw::Power { coef, kappa } => coef * r.powf(-1.0 - kappa),
            SegLaw::Smooth => self.g(r),
        }
    }

    /// Radius beyond which g is negligible (infinite for algebraic tails).
    pub fn support_end(&self) -> f64 {
        match self.kind {
            RadialKind::Stable | RadialKind::Layered { .. } => f64::INFINITY,
            RadialKind::Truncated => self.r0,
            _ => self.smooth_cut(),
        }
    }

    fn smooth_cut(&self) -> f64 {
        let mut r = 1.0;
        while self.g(r) > TAIL_CUT || self.g(2.0 * r) > TAIL_CUT {
            r *= 2.0;
            if r > 1e12 {
                break;
            }
        }
        r
    }

    /// Lower bound of Q on (0, r0], sampled on a log grid.
    pub fn min_q_on_core(&self) -> f64 {
        (0..=200)
            .map(|k| self.r0 * 10f64.powf(-8.0 + 8.0 * k as f64 / 200.0))
            .map(|r| self.q(r))
            .fold(f64::INFINITY, f64::min)
    }

    /// int_a^b r^p g(r) dr with 0 <= a < b <= inf. Requires convergence.
    pub fn moment(&self, a: f64, b: f64, p: f64) -> Result<f64> {
        if !(b > a) {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for seg in self.segments() {
            let lo = seg.lo.max(a);
            let hi = seg.hi.min(b);
            if !(hi > lo) {
                continue;
            }
            total += match seg.law {
                SegLaw::Power { coef, kappa } => power_moment(coef, kappa, p, lo, hi)?,
                SegLaw::Smooth => {
                    let hi = hi.min(self.support_end());
                    if !(hi > lo) {
                        0.0
                    } else {
                        let lo_eff = if lo == 0.0 {
                            // Q(0+) r^{p-1-alpha} near the origin.
                            let e = p - self.alpha;
                            if e <= 0.0 {
                                return Err(Error::QuadratureFailure(format!(
                                    "moment of order {p} diverges at the origin"
                                )));
                            }
                            1e-12f64.min(hi * 1e-6)
                        } else {
                            lo
                        };
                        let head = if lo == 0.0 {
                            self.q(lo_eff) * lo_eff.powf(p - self.alpha) / (p - self.alpha)
                        } else {
                            0.0
                        };
                        let f = |v: f64| {
                            let r = v.exp();
                            r.powf(p) * self.g(r) * r
                        };
                        head + integrate_adaptive(f, lo_eff.ln(), hi.ln(), &[0.0], tol())?.0
                    }
                }
            };
        }
        Ok(total)
    }

    /// G(u) for real u (G(-u) = conj G(u)).
    pub fn transform(&self, u: f64) -> Result<Complex64> {
        if u == 0.0 {
            return Ok(Complex64::new(0.0, 0.0));
        }
        if u < 0.0 {
            return Ok(self.transform(-u)?.conj());
        }
        let segs = self.segments();
        let end = self.support_end();
        let rc = PI / u;
        let a_hi = rc.min(end);

        // Non-oscillatory part on (0, min(rc, end)), in v = ln r.
        let r_lo = 1e-9 * rc.min(1.0).min(end);
        let q0 = self.q(r_lo);
        let x_lo = r_lo * u;
        let mut re = q0 * u.powf(self.alpha)
            * (x_lo.powf(2.0 - self.alpha) / (2.0 * (2.0 - self.alpha))
                - x_lo.powf(4.0 - self.alpha) / (24.0 * (4.0 - self.alpha)));
        let mut im = q0 * u.powf(self.alpha) * x_lo.powf(3.0 - self.alpha) / (6.0 * (3.0 - self.alpha));
        let mut breaks: Vec<f64> = vec![0.0];
        for s in &segs {
            if s.lo > r_lo && s.lo < a_hi {
                breaks.push(s.lo.ln());
            }
        }
        let fa = |v: f64| {
            let r = v.exp();
            let gr = self.g(r) * r;
            let x = r * u;
            let h = 0.5 * x;
            let sh = h.sin();
            let c_re = 2.0 * sh * sh;
            let c_im = if r <= 1.0 { x_minus_sin(x) } else { -x.sin() };
            Complex64::new(c_re * gr, c_im * gr)
        };
        let (va, _) = integrate_adaptive(fa, r_lo.ln(), a_hi.ln(), &breaks, tol())?;
        re += va.re;
        im += va.im;

        if rc < end {
            // Remaining range: (1 - cos) g and (ru 1_{r<=1} - sin) g split into
            // a non-oscillatory moment part and int e^{iru} g.
            let m0 = self.moment(rc, f64::INFINITY, 0.0)?;
            let m1 = if rc < 1.0 { u * self.moment(rc, 1.0, 1.0)? } else { 0.0 };
            let osc = self.oscillatory(u, rc, &segs)?;
            re += m0 - osc.re;
            im += m1 - osc.im;
        }
        let out = Complex64::new(re, im);
        if !(out.re.is_finite() && out.im.is_finite()) {
            return Err(Error::QuadratureFailure(format!("non-finite symbol at u = {u:e}")));
        }
        Ok(out)
    }

    /// int_{from}^inf e^{iru} g(r) dr over all segments.
    fn oscillatory(&self, u: f64, from: f64, segs: &[Segment]) -> Result<Complex64> {
        let mut total = Complex64::new(0.0, 0.0);
        for s in segs {
            let lo = s.lo.max(from);
            let hi = s.hi;
            if !(hi > lo) {
                continue;
            }
            let half_cycles = if hi.is_finite() { (hi - lo) * u / PI } else { f64::INFINITY };
            if half_cycles <= 400.0 {
                total += self.osc_panels(s.law, u, lo, hi)?;
            } else {
                total += self.osc_tail(s.law, u, lo)?;
                if hi.is_finite() {
                    total -= self.osc_tail(s.law, u, hi)?;
                }
            }
        }
        Ok(total)
    }

    fn osc_panels(&self, law: SegLaw, u: f64, lo: f64, hi: f64) -> Result<Complex64> {
        let f = |r: f64| Complex64::new(0.0, r * u).exp() * self.g_seg(law, r);
        let n = (((hi - lo) * u / PI).ceil() as usize).max(1);
        let w = (hi - lo) / n as f64;
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..n {
            let a = lo + k as f64 * w;
            let b = if k + 1 == n { hi } else { a + w };
            acc += integrate_adaptive(f, a, b, &[], osc_tol(u * b))?.0;
        }
        Ok(acc)
    }

    /// int_s^inf e^{iru} g_seg(r) dr by half-cycle panels and Wynn epsilon.
    fn osc_tail(&self, law: SegLaw, u: f64, s: f64) -> Result<Complex64> {
        let w = PI / u;
        let mut f = |r: f64| Complex64::new(0.0, r * u).exp() * self.g_seg(law, r);
        let mut sums = Vec::with_capacity(80);
        let mut acc = Complex64::new(0.0, 0.0);
        let mut last_est = Complex64::new(f64::NAN, 0.0);
        for k in 0..120 {
            let a = s + k as f64 * w;
            let (v, e) = gk15(&mut f, a, a + w);
            let v = if e > 1e-14 * v.norm().max(1e-300) {
                integrate_adaptive(&mut f, a, a + w, &[], osc_tol(u * (a + w)))?.0
            } else {
                v
            };
            acc += v;
            sums.push(acc);
            if v.norm() <= 1e-17 * acc.norm() {
                return Ok(acc);
            }
            if sums.len() >= 24 && sums.len() % 8 == 0 {
                let (est, _) = wynn_epsilon(&sums[sums.len() - 24..]);
                if (est - last_est).norm() <= 1e-13 * est.norm().max(1e-300) {
                    return Ok(est);
                }
                last_est = est;
            }
        }
        if last_est.re.is_finite() {
            Ok(last_est)
        } else {
            Err(Error::QuadratureFailure(format!("oscillatory tail from {s:e} at u = {u:e}")))
        }
    }
}

fn tol() -> GkTol {
    GkTol { abs: 1e-300, rel: REL_TOL, max_panels: 4000 }
}

/// Phase roundoff in e^{iru} limits attainable accuracy once r*u is large.
fn osc_tol(phase: f64) -> GkTol {
    GkTol { abs: 1e-300, rel: REL_TOL.max(64.0 * f64::EPSILON * phase.abs()), max_panels: 4000 }
}

/// x - sin x without cancellation.
fn x_minus_sin(x: f64) -> f64 {
    if x.abs() < 0.1 {
        let x2 = x * x;
        x * x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0 * (1.0 - x2 / 110.0))))
    } else {
        x - x.sin()
    }
}

fn power_moment(coef: f64, kappa: f64, p: f64, lo: f64, hi: f64) -> Result<f64> {
    // int_lo^hi coef r^{p-1-kappa} dr
    let e = p - kappa;
    if e.abs() < 1e-14 {
        if lo == 0.0 || hi.is_infinite() {
            return Err(Error::QuadratureFailure("logarithmically divergent moment".into()));
        }
        return Ok(coef * (hi / lo).ln());
    }
    let at = |r: f64| -> Result<f64> {
        if r == 0.0 {
            if e > 0.0 {
                Ok(0.0)
            } else {
                Err(Error::QuadratureFailure(format!("moment of order {p} diverges at 0")))
            }
        } else if r.is_infinite() {
            if e < 0.0 {
                Ok(0.0)
            } else {
                Err(Error::QuadratureFailure(format!("moment of order {p} diverges at infinity")))
            }
        } else {
            Ok(r.powf(e) / e)
        }
    };
    Ok(coef * (at(hi)? - at(lo)?))
}
