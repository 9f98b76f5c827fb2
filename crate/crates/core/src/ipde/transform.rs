//! The exponential-shift transform `T phi(t,x) = e^{-C(t)} phi(t, x + F(t))`,
//! where C and F are running integrals of a rate c0 and a velocity F0.

use std::sync::Arc;

use num_complex::Complex64;

use crate::quadrature::GaussLegendre;
use crate::testfn::PlaneWaveSum;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

const PANEL: f64 = 0.125;
const NODES: usize = 24;

#[derive(Clone)]
pub struct TransformSpec {
    pub c0: ScalarFn,
    pub f0: VectorFn,
    dim: usize,
}

impl std::fmt::Debug for TransformSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransformSpec").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl TransformSpec {
    pub fn new(c0: ScalarFn, f0: VectorFn, dim: usize) -> Self {
        Self { c0, f0, dim }
    }

    /// Constant rate and velocity.
    pub fn constant(c: f64, v: Vec<f64>) -> Self {
        let dim = v.len();
        Self::new(Arc::new(move |_| c), Arc::new(move |_| v.clone()), dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// (int_0^t c0, int_0^t F0) by panelled Gauss-Legendre.
    pub fn running(&self, t: f64) -> (f64, Vec<f64>) {
        let gl = GaussLegendre::cached(NODES);
        let pieces = (t.abs() / PANEL).ceil().max(1.0) as usize;
        let mut c = 0.0;
        let mut f = vec![0.0; self.dim];
        for k in 0..pieces {
            let a = t * k as f64 / pieces as f64;
            let b = t * (k + 1) as f64 / pieces as f64;
            let (mid, h) = (0.5 * (a + b), 0.5 * (b - a));
            for (x, w) in gl.nodes.iter().zip(&gl.weights) {
                let s = mid + h * x;
                c += w * h * (self.c0)(s);
                for (fi, v) in f.iter_mut().zip((self.f0)(s)) {
                    *fi += w * h * v;
                }
            }
        }
        (c, f)
    }

    /// T phi at (t, x).
    pub fn apply(&self, phi: &dyn Fn(f64, &[f64]) -> f64, t: f64, x: &[f64]) -> f64 {
        let (c, f) = self.running(t);
        let y: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a + b).collect();
        (-c).exp() * phi(t, &y)
    }

    /// Inverse transform `e^{C(t)} phi(t, x - F(t))`.
    pub fn invert(&self, phi: &dyn Fn(f64, &[f64]) -> f64, t: f64, x: &[f64]) -> f64 {
        let (c, f) = self.running(t);
        let y: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a - b).collect();
        c.exp() * phi(t, &y)
    }

    /// T applied to a time slice given as plane waves.
    pub fn apply_waves(&self, t: f64, w: &PlaneWaveSum) -> PlaneWaveSum {
        let (c, f) = self.running(t);
        let damp = (-c).exp();
        let mut out = w
            .map_terms(|a, fr| {
                let ph: f64 = fr.iter().zip(&f).map(|(p, q)| p * q).sum();
                Ok((a * Complex64::from_polar(damp, ph), fr.to_vec()))
            })
            .expect("infallible");
        out.constant = w.constant * damp;
        out
    }
}

/// `(t, x) -> e^{-C(t)} phi(t, x + F(t))`.
pub fn transform_t<'a>(
    spec: &'a TransformSpec,
    phi: &'a (dyn Fn(f64, &[f64]) -> f64 + Sync),
) -> impl Fn(f64, &[f64]) -> f64 + 'a {
    move |t, x| spec.apply(phi, t, x)
}
