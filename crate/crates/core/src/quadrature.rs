//! Quadrature building blocks: Gauss-Legendre rules, adaptive Gauss-Kronrod,
//! Wynn epsilon acceleration and Chebyshev interpolation panels.

use std::collections::{BinaryHeap, HashMap};
use std::ops::{Add, AddAssign, Mul, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Values that can be integrated: real or complex scalars.
pub trait QuadValue:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> + AddAssign + Default
{
    fn magnitude(&self) -> f64;
}

impl QuadValue for f64 {
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl QuadValue for Complex64 {
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the n-point rule by Newton iteration on the three-term recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Shared cached rule of size n.
    pub fn cached(n: usize) -> Arc<GaussLegendre> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussLegendre>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("quadrature cache poisoned");
        guard
            .entry(n)
            .or_insert_with(|| Arc::new(GaussLegendre::new(n)))
            .clone()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrates f over [a, b].
    pub fn integrate<T: QuadValue, F: FnMut(f64) -> T>(&self, a: f64, b: f64, mut f: F) -> T {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let mut acc = T::default();
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += f(c + h * x) * (w * h);
        }
        acc
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

const GK_X: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const GK_WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod panel: (estimate, error estimate).
pub fn gk15<T: QuadValue, F: FnMut(f64) -> T>(f: &mut F, a: f64, b: f64) -> (T, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * GK_WK[7];
    let mut g = fc * GK_WG[3];
    for j in 0..7 {
        let dx = h * GK_X[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        let s = f1 + f2;
        k += s * GK_WK[j];
        if j % 2 == 1 {
            g += s * GK_WG[j / 2];
        }
    }
    let k = k * h;
    let g = g * h;
    (k, (k - g).magnitude())
}

struct Panel<T> {
    a: f64,
    b: f64,
    val: T,
    err: f64,
}

impl<T> PartialEq for Panel<T> {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl<T> Eq for Panel<T> {}
impl<T> PartialOrd for Panel<T> {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl<T> Ord for Panel<T> {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&o.err)
    }
}

/// Tolerances for adaptive Gauss-Kronrod integration.
#[derive(Debug, Clone, Copy)]
pub struct GkTol {
    pub abs: f64,
    pub rel: f64,
    pub max_panels: usize,
}

impl Default for GkTol {
    fn default() -> Self {
        Self { abs: 1e-300, rel: 1e-12, max_panels: 4000 }
    }
}

/// Globally adaptive Gauss-Kronrod over [a, b] with optional interior breakpoints.
pub fn integrate_adaptive<T: QuadValue, F: FnMut(f64) -> T>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: GkTol,
) -> Result<(T, f64)> {
    let mut pts = vec![a];
    for &x in breaks {
        if x > a && x < b {
            pts.push(x);
        }
    }
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut heap = BinaryHeap::new();
    let mut total = T::default();
    let mut err = 0.0;
    for w in pts.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let (v, e) = gk15(&mut f, w[0], w[1]);
        total += v;
        err += e;
        heap.push(Panel { a: w[0], b: w[1], val: v, err: e });
    }
    let mut panels = heap.len();
    while err > tol.abs.max(tol.rel * total.magnitude()) {
        if panels >= tol.max_panels {
            if err <= 1e3 * tol.abs.max(tol.rel * total.magnitude()) {
                break;
            }
            return Err(Error::QuadratureFailure(format!(
                "adaptive Gauss-Kronrod on [{a:e}, {b:e}] did not converge: error {err:e}"
            )));
        }
        let Some(p) = heap.pop() else { break };
        let m = 0.5 * (p.a + p.b);
        if !(m > p.a && m < p.b) {
            heap.push(p);
            break;
        }
        let (v1, e1) = gk15(&mut f, p.a, m);
        let (v2, e2) = gk15(&mut f, m, p.b);
        total = total - p.val + v1 + v2;
        err = err - p.err + e1 + e2;
        heap.push(Panel { a: p.a, b: m, val: v1, err: e1 });
        heap.push(Panel { a: m, b: p.b, val: v2, err: e2 });
        panels += 1;
    }
    if !total.magnitude().is_finite() {
        return Err(Error::QuadratureFailure(format!("non-finite integral on [{a:e}, {b:e}]")));
    }
    // Re-sum to limit drift from the running updates.
    let mut exact = T::default();
    let mut e = 0.0;
    for p in heap.into_iter() {
        exact += p.val;
        e += p.err;
    }
    Ok((exact, e))
}

/// Wynn epsilon extrapolation of a sequence of partial sums.
/// Returns the accelerated limit and a crude error estimate.
pub fn wynn_epsilon<T>(sums: &[T]) -> (T, f64)
where
    T: QuadValue + std::ops::Div<Output = T> + From<f64>,
{
    let n = sums.len();
    if n < 3 {
        let last = sums.last().copied().unwrap_or_default();
        return (last, f64::INFINITY);
    }
    // e[k] holds column k of the epsilon table for the current diagonal sweep.
    let mut prev: Vec<T> = vec![T::default(); n + 1];
    let mut cur: Vec<T> = sums.to_vec();
    let mut best = sums[n - 1];
    let mut best_err = (sums[n - 1] - sums[n - 2]).magnitude();
    let mut col = 0;
    while cur.len() > 1 {
        let mut next = Vec::with_capacity(cur.len() - 1);
        for i in 0..cur.len() - 1 {
            let d = cur[i + 1] - cur[i];
            let base = if col == 0 { T::default() } else { prev[i + 1] };
            if d.magnitude() == 0.0 || !d.magnitude().is_finite() {
                next.push(T::from(f64::INFINITY));
                continue;
            }
            next.push(base + T::from(1.0) / d);
        }
        col += 1;
        if col % 2 == 0 && next.len() >= 2 {
            let m = next.len();
            let a = next[m - 1];
            let b = next[m - 2];
            let e = (a - b).magnitude();
            if a.magnitude().is_finite() && e < best_err {
                best = a;
                best_err = e;
            }
        }
        prev = cur;
        cur = next;
    }
    (best, best_err)
}

/// Chebyshev interpolant of a vector-valued function on [a, b] (first-kind nodes).
#[derive(Debug, Clone)]
pub struct ChebPanel {
    pub a: f64,
    pub b: f64,
    /// coeffs[k][c]: k-th Chebyshev coefficient of component c
    pub coeffs: Vec<Vec<f64>>,
}

impl ChebPanel {
    /// Fits `f` (writing `dim` components) with `n` Chebyshev coefficients.
    pub fn fit<F: FnMut(f64, &mut [f64])>(a: f64, b: f64, n: usize, dim: usize, mut f: F) -> Self {
        let mut vals = vec![vec![0.0; dim]; n];
        let mut theta = vec![0.0; n];
        for (j, v) in vals.iter_mut().enumerate() {
            let th = std::f64::consts::PI * (j as f64 + 0.5) / n as f64;
            theta[j] = th;
            let x = th.cos();
            f(0.5 * (a + b) + 0.5 * (b - a) * x, v);
        }
        let mut coeffs = vec![vec![0.0; dim]; n];
        for (k, ck) in coeffs.iter_mut().enumerate() {
            let scale = if k == 0 { 1.0 } else { 2.0 } / n as f64;
            for (j, v) in vals.iter().enumerate() {
                let t = (k as f64 * theta[j]).cos();
                for c in 0..dim {
                    ck[c] += scale * t * v[c];
                }
            }
        }
        Self { a, b, coeffs }
    }

    /// Magnitude of the trailing coefficients relative to the leading ones.
    pub fn tail_ratio(&self) -> f64 {
        let n = self.coeffs.len();
        let head: f64 = self.coeffs.iter().flatten().fold(0.0, |m, v| m.max(v.abs()));
        let tail: f64 = self.coeffs[n.saturating_sub(3)..]
            .iter()
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()));
        if head == 0.0 {
            0.0
        } else {
            tail / head
        }
    }

    /// Clenshaw evaluation into `out`.
    pub fn eval(&self, r: f64, out: &mut [f64]) {
        let x = (2.0 * r - self.a - self.b) / (self.b - self.a);
        let dim = out.len();
        let n = self.coeffs.len();
        for c in 0..dim {
            let mut b1 = 0.0;
            let mut b2 = 0.0;
            for k in (1..n).rev() {
                let b0 = 2.0 * x * b1 - b2 + self.coeffs[k][c];
                b2 = b1;
                b1 = b0;
            }
            out[c] = x * b1 - b2 + self.coeffs[0][c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in [1usize, 2, 5, 16, 33, 64] {
            let gl = GaussLegendre::new(n);
            let wsum: f64 = gl.weights.iter().sum();
            assert!((wsum - 2.0).abs() < 1e-13, "n={n}");
            let deg = 2 * n - 1;
            let v = gl.integrate(0.0, 1.0, |x: f64| x.powi(deg as i32));
            assert!((v - 1.0 / (deg as f64 + 1.0)).abs() < 1e-13, "n={n} v={v}");
        }
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let (v, _) = integrate_adaptive(|x: f64| x.powf(-0.5), 0.0, 1.0, &[], GkTol::default())
            .unwrap();
        assert!((v - 2.0).abs() < 1e-9, "{v}");
        let (v, _) =
            integrate_adaptive(|x: f64| (x - 0.3).abs(), 0.0, 1.0, &[0.3], GkTol::default())
                .unwrap();
        assert!((v - (0.045 + 0.245)).abs() < 1e-14);
    }

    #[test]
    fn complex_adaptive_matches_closed_form() {
        let (v, _) = integrate_adaptive(
            |x: f64| Complex64::new(0.0, 3.0 * x).exp(),
            0.0,
            2.0,
            &[],
            GkTol::default(),
        )
        .unwrap();
        let exact = (Complex64::new(0.0, 6.0).exp() - 1.0) / Complex64::new(0.0, 3.0);
        assert!((v - exact).norm() < 1e-13);
    }

    #[test]
    fn wynn_accelerates_alternating_series() {
        // ln 2 = 1 - 1/2 + 1/3 - ...
        let mut s = 0.0;
        let sums: Vec<f64> = (1..=20)
            .map(|k| {
                s += if k % 2 == 1 { 1.0 } else { -1.0 } / k as f64;
                s
            })
            .collect();
        let (v, _) = wynn_epsilon(&sums);
        assert!((v - 2f64.ln()).abs() < 1e-12, "{v}");
    }

    #[test]
    fn chebyshev_panel_reproduces_smooth_function() {
        let p = ChebPanel::fit(0.0, 2.0, 24, 2, |r, out| {
            out[0] = r.exp();
            out[1] = (3.0 * r).sin();
        });
        let mut o = [0.0; 2];
        for i in 0..50 {
            let r = 2.0 * i as f64 / 49.0;
            p.eval(r, &mut o);
            assert!((o[0] - r.exp()).abs() < 1e-13);
            assert!((o[1] - (3.0 * r).sin()).abs() < 1e-12);
        }
        assert!(p.tail_ratio() < 1e-12);
    }
}
