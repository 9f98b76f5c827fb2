//! Adaptive log-time quadrature that turns time integrals of evolved plane
//! waves into plane-wave sums.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use crate::testfn::PlaneWaveSum;

/// Controls for time-integral expansions.
#[derive(Debug, Clone, Copy)]
pub struct ExpandOptions {
    /// Integrals start here; the sliver below it is added with the integrand frozen.
    pub tau_min: f64,
    /// Absolute tolerance per unit amplitude.
    pub tol: f64,
    /// Gauss-Legendre nodes per panel.
    pub nodes: usize,
    pub max_panels: usize,
    /// Waves with |amp| below this (per unit amplitude) are dropped.
    pub prune: f64,
}

impl Default for ExpandOptions {
    fn default() -> Self {
        Self { tau_min: 1e-12, tol: 1e-9, nodes: 10, max_panels: 4000, prune: 1e-18 }
    }
}

/// Kernel value at tau: coefficient (already weighted) and frequency.
pub(crate) type Node = (Complex64, Vec<f64>);

fn panel_nodes(kernel: &dyn Fn(f64) -> Result<Node>, a: f64, b: f64, gl: &GaussLegendre) -> Result<Vec<Node>> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    gl.nodes
        .iter()
        .zip(&gl.weights)
        .map(|(x, w)| {
            let u = c + h * x;
            let tau = u.exp();
            let (coef, f) = kernel(tau)?;
            Ok((coef * (w * h * tau), f))
        })
        .collect()
}

fn probe_values(nodes: &[Node], probes: &[Vec<f64>], out: &mut [Complex64]) {
    for (o, x) in out.iter_mut().zip(probes) {
        *o = nodes
            .iter()
            .map(|(c, f)| {
                let ph: f64 = f.iter().zip(x).map(|(p, q)| p * q).sum();
                c * Complex64::from_polar(1.0, ph)
            })
            .sum();
    }
}

/// Appends the expansion of int_{lo}^{hi} kernel(tau) dtau (as plane waves) to `out`.
///
/// Panels in log tau are bisected until the integral at every probe point agrees
/// between one panel and its two halves.
pub(crate) fn expand_term(
    kernel: &dyn Fn(f64) -> Result<Node>,
    lo: f64,
    hi: f64,
    scale: f64,
    probes: &[Vec<f64>],
    opts: &ExpandOptions,
    out: &mut PlaneWaveSum,
) -> Result<()> {
    if !(hi > lo && lo > 0.0) {
        return Ok(());
    }
    let gl = GaussLegendre::cached(opts.nodes);
    let (ua, ub) = (lo.ln(), hi.ln());
    let width = ub - ua;
    let budget = opts.tol * scale;
    let pieces = (width / std::f64::consts::LN_10).ceil().max(1.0) as usize;
    let mut stack: Vec<(f64, f64, Vec<Node>)> = Vec::new();
    for k in (0..pieces).rev() {
        let a = ua + width * k as f64 / pieces as f64;
        let b = ua + width * (k + 1) as f64 / pieces as f64;
        stack.push((a, b, panel_nodes(kernel, a, b, &gl)?));
    }
    let np = probes.len();
    let (mut whole, mut halves) = (vec![Complex64::default(); np], vec![Complex64::default(); np]);
    let mut tmp = vec![Complex64::default(); np];
    let mut panels = 0;
    while let Some((a, b, coarse)) = stack.pop() {
        let m = 0.5 * (a + b);
        let left = panel_nodes(kernel, a, m, &gl)?;
        let right = panel_nodes(kernel, m, b, &gl)?;
        panels += 1;
        probe_values(&coarse, probes, &mut whole);
        probe_values(&left, probes, &mut halves);
        probe_values(&right, probes, &mut tmp);
        let err = whole
            .iter()
            .zip(halves.iter().zip(&tmp))
            .map(|(w, (l, r))| (w - l - r).norm())
            .fold(0.0, f64::max);
        let allowed = budget * (b - a) / width;
        if err <= allowed || b - a < 1e-9 {
            for (c, f) in left.into_iter().chain(right) {
                if c.norm() >= opts.prune * scale {
                    out.push(c, &f);
                }
            }
            continue;
        }
        if panels > opts.max_panels {
            return Err(Error::QuadratureFailure(format!(
                "time expansion on [{lo:e}, {hi:e}] needs more than {} panels (error {err:e})",
                opts.max_panels
            )));
        }
        stack.push((m, b, right));
        stack.push((a, m, left));
    }
    Ok(())
}
