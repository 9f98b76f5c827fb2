//! Piecewise-Chebyshev representation of the frequency propagator M(r)
//! (M' = A(r)^T M, M(0) = I) and of the noise map G(r) = sigma0(r)^T B^T M(r).

use std::sync::{Arc, RwLock};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kalman::resolvent_ode;
use crate::quadrature::ChebPanel;

pub type MatrixFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

const COEFFS: usize = 24;
const TAIL_TOL: f64 = 1e-14;
const MIN_WIDTH: f64 = 1e-4;
const MAX_HORIZON: f64 = 1e4;

#[derive(Clone)]
pub(crate) enum PathKind {
    Constant { a: DMatrix<f64>, b: DMatrix<f64> },
    TimeDependent { a_fn: MatrixFn, b: DMatrix<f64>, sigma0_fn: MatrixFn },
}

#[derive(Debug, Clone)]
pub(crate) struct PathPanel {
    pub a: f64,
    pub b: f64,
    /// d x N noise map, row-major.
    pub g: ChebPanel,
    /// N x N propagator, row-major.
    pub m: ChebPanel,
}

struct Store {
    panels: Vec<PathPanel>,
    end: f64,
    m_end: DMatrix<f64>,
}

pub(crate) struct NoisePath {
    pub n: usize,
    pub d: usize,
    kind: PathKind,
    width: f64,
    store: RwLock<Store>,
}

fn row_major(m: &DMatrix<f64>, out: &mut [f64]) {
    let c = m.ncols();
    for i in 0..m.nrows() {
        for j in 0..c {
            out[i * c + j] = m[(i, j)];
        }
    }
}

impl NoisePath {
    pub fn new(kind: PathKind, n: usize, d: usize) -> Self {
        let width = match &kind {
            PathKind::Constant { a, .. } => {
                let norm = a.norm();
                if norm > 0.0 {
                    (2.0 / norm).min(4.0)
                } else {
                    64.0
                }
            }
            PathKind::TimeDependent { .. } => 0.25,
        };
        Self {
            n,
            d,
            kind,
            width,
            store: RwLock::new(Store { panels: Vec::new(), end: 0.0, m_end: DMatrix::identity(n, n) }),
        }
    }

    fn noise_map(&self, r: f64, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.kind {
            PathKind::Constant { b, .. } => b.transpose() * m,
            PathKind::TimeDependent { b, sigma0_fn, .. } => sigma0_fn(r).transpose() * b.transpose() * m,
        }
    }

    /// Propagator values at the Chebyshev nodes of [a, b] (fit order), given M(a).
    fn node_values(&self, a: f64, b: f64, m_a: &DMatrix<f64>) -> Result<(Vec<DMatrix<f64>>, DMatrix<f64>)> {
        let nodes: Vec<f64> = (0..COEFFS)
            .map(|j| {
                let th = std::f64::consts::PI * (j as f64 + 0.5) / COEFFS as f64;
                0.5 * (a + b) + 0.5 * (b - a) * th.cos()
            })
            .collect();
        match &self.kind {
            PathKind::Constant { a: am, .. } => {
                let at = am.transpose();
                let vals = nodes.iter().map(|&r| (&at * (r - a)).exp() * m_a).collect();
                Ok((vals, (&at * (b - a)).exp() * m_a))
            }
            PathKind::TimeDependent { a_fn, .. } => {
                let at = |u: f64| a_fn(u).transpose();
                // Nodes come in decreasing order; march upwards from a.
                let mut vals = vec![DMatrix::zeros(self.n, self.n); COEFFS];
                let mut cur = m_a.clone();
                let mut pos = a;
                for j in (0..COEFFS).rev() {
                    let r = nodes[j];
                    let len = r - pos;
                    if len > 0.0 {
                        let step = len.min(1e-3);
                        cur = resolvent_ode(at, pos, r, step)? * cur;
                        pos = r;
                    }
                    vals[j] = cur.clone();
                }
                let step = (b - pos).min(1e-3);
                let end = if b > pos { resolvent_ode(at, pos, b, step)? * cur } else { cur };
                Ok((vals, end))
            }
        }
    }

    fn build_panel(&self, a: f64, m_a: &DMatrix<f64>) -> Result<(PathPanel, DMatrix<f64>)> {
        let mut w = self.width;
        loop {
            let b = a + w;
            let (vals, m_b) = self.node_values(a, b, m_a)?;
            let nn = self.n * self.n;
            let dn = self.d * self.n;
            let mut k = 0;
            let m = ChebPanel::fit(a, b, COEFFS, nn, |_, out| {
                row_major(&vals[k], out);
                k += 1;
            });
            let mut k = 0;
            let nodes: Vec<f64> = (0..COEFFS)
                .map(|j| 0.5 * (a + b) + 0.5 * (b - a) * (std::f64::consts::PI * (j as f64 + 0.5) / COEFFS as f64).cos())
                .collect();
            let g = ChebPanel::fit(a, b, COEFFS, dn, |_, out| {
                row_major(&self.noise_map(nodes[k], &vals[k]), out);
                k += 1;
            });
            if (m.tail_ratio() <= TAIL_TOL && g.tail_ratio() <= TAIL_TOL) || w <= MIN_WIDTH {
                return Ok((PathPanel { a, b, g, m }, m_b));
            }
            w *= 0.5;
        }
    }

    /// Makes sure panels cover [0, r].
    pub fn ensure(&self, r: f64) -> Result<()> {
        if !(r <= MAX_HORIZON) {
            return Err(Error::BadParam(format!("time {r} beyond the supported horizon {MAX_HORIZON}")));
        }
        if self.store.read().expect("path lock").end >= r {
            return Ok(());
        }
        let mut st = self.store.write().expect("path lock");
        while st.end < r {
            let (p, m_b) = self.build_panel(st.end, &st.m_end)?;
            st.end = p.b;
            st.m_end = m_b;
            st.panels.push(p);
        }
        Ok(())
    }

    /// Runs `f` on the panels overlapping [a, b].
    pub fn with_panels<T>(&self, a: f64, b: f64, f: impl FnOnce(&[PathPanel]) -> T) -> Result<T> {
        self.ensure(b.max(f64::MIN_POSITIVE))?;
        let st = self.store.read().expect("path lock");
        let lo = st.panels.partition_point(|p| p.b <= a);
        let hi = st.panels.partition_point(|p| p.a < b);
        Ok(f(&st.panels[lo..hi.max(lo)]))
    }

    fn eval_panel(&self, r: f64, pick: impl Fn(&PathPanel) -> &ChebPanel, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let r = r.max(0.0);
        self.ensure(r.max(f64::MIN_POSITIVE))?;
        let st = self.store.read().expect("path lock");
        let k = st.panels.partition_point(|p| p.b <= r).min(st.panels.len() - 1);
        let mut out = vec![0.0; rows * cols];
        pick(&st.panels[k]).eval(r, &mut out);
        Ok(DMatrix::from_row_slice(rows, cols, &out))
    }

    /// M(r).
    pub fn propagator(&self, r: f64) -> Result<DMatrix<f64>> {
        if r == 0.0 {
            return Ok(DMatrix::identity(self.n, self.n));
        }
        self.eval_panel(r, |p| &p.m, self.n, self.n)
    }

    /// G(r).
    pub fn noise(&self, r: f64) -> Result<DMatrix<f64>> {
        self.eval_panel(r, |p| &p.g, self.d, self.n)
    }
}

/// Per-panel Chebyshev coefficients of r -> G(r) zeta (d components).
pub(crate) struct Reduced {
    pub a: f64,
    pub b: f64,
    /// coeffs[k * d + i]
    pub coeffs: Vec<f64>,
    pub d: usize,
}

impl Reduced {
    pub fn new(p: &PathPanel, zeta: &[f64], d: usize) -> Self {
        let n = zeta.len();
        let mut coeffs = vec![0.0; p.g.coeffs.len() * d];
        for (k, ck) in p.g.coeffs.iter().enumerate() {
            for i in 0..d {
                let mut s = 0.0;
                for j in 0..n {
                    s += ck[i * n + j] * zeta[j];
                }
                coeffs[k * d + i] = s;
            }
        }
        Self { a: p.a, b: p.b, coeffs, d }
    }

    pub fn eval(&self, r: f64, out: &mut [f64]) {
        let x = (2.0 * r - self.a - self.b) / (self.b - self.a);
        let d = self.d;
        let nk = self.coeffs.len() / d;
        for (i, o) in out.iter_mut().enumerate().take(d) {
            let mut b1 = 0.0;
            let mut b2 = 0.0;
            for k in (1..nk).rev() {
                let b0 = 2.0 * x * b1 - b2 + self.coeffs[k * d + i];
                b2 = b1;
                b1 = b0;
            }
            *o = x * b1 - b2 + self.coeffs[i];
        }
    }

    /// theta . G(r) zeta.
    pub fn project(&self, theta: &[f64], r: f64) -> f64 {
        let x = (2.0 * r - self.a - self.b) / (self.b - self.a);
        let d = self.d;
        let nk = self.coeffs.len() / d;
        let mut b1 = 0.0;
        let mut b2 = 0.0;
        for k in (1..nk).rev() {
            let c: f64 = (0..d).map(|i| theta[i] * self.coeffs[k * d + i]).sum();
            let b0 = 2.0 * x * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        let c0: f64 = (0..d).map(|i| theta[i] * self.coeffs[i]).sum();
        x * b1 - b2 + c0
    }
}
