//! Bounded test functions: plane-wave sums and the named registry.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `constant + Re sum_k amp_k exp(i <freq_k, x>)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlaneWaveSum {
    dim: usize,
    pub constant: f64,
    freqs: Vec<f64>,
    amps: Vec<Complex64>,
}

impl PlaneWaveSum {
    pub fn new(dim: usize) -> Self {
        Self { dim, constant: 0.0, freqs: Vec::new(), amps: Vec::new() }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self { constant: c, ..Self::new(dim) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.amps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amps.is_empty()
    }

    /// Adds a term; zero frequencies fold into the constant.
    pub fn push(&mut self, amp: Complex64, freq: &[f64]) {
        assert_eq!(freq.len(), self.dim, "frequency dimension");
        if freq.iter().all(|&v| v == 0.0) {
            self.constant += amp.re;
            return;
        }
        self.freqs.extend_from_slice(freq);
        self.amps.push(amp);
    }

    pub fn terms(&self) -> impl Iterator<Item = (Complex64, &[f64])> + '_ {
        self.amps.iter().copied().zip(self.freqs.chunks_exact(self.dim.max(1)))
    }

    pub fn freq(&self, k: usize) -> &[f64] {
        &self.freqs[k * self.dim..(k + 1) * self.dim]
    }

    pub fn amp(&self, k: usize) -> Complex64 {
        self.amps[k]
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = self.constant;
        for (a, f) in self.terms() {
            let ph: f64 = f.iter().zip(x).map(|(p, q)| p * q).sum();
            let (s, c) = ph.sin_cos();
            acc += a.re * c - a.im * s;
        }
        acc
    }

    /// Gradient by exact differentiation of each term.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for (a, f) in self.terms() {
            let ph: f64 = f.iter().zip(x).map(|(p, q)| p * q).sum();
            let (s, c) = ph.sin_cos();
            // d/dx Re(a e^{i ph}) = Re(i a e^{i ph}) f
            let d = -a.re * s - a.im * c;
            for (gi, fi) in g.iter_mut().zip(f) {
                *gi += d * fi;
            }
        }
        g
    }

    /// Upper bound on the sup norm.
    pub fn sup_bound(&self) -> f64 {
        self.constant.abs() + self.amps.iter().map(|a| a.norm()).sum::<f64>()
    }

    pub fn max_frequency(&self) -> f64 {
        self.freqs
            .chunks_exact(self.dim.max(1))
            .map(|f| f.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.constant *= c;
        for a in &mut self.amps {
            *a *= c;
        }
        self
    }

    pub fn extend(&mut self, other: &PlaneWaveSum) {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        self.constant += other.constant;
        self.freqs.extend_from_slice(&other.freqs);
        self.amps.extend_from_slice(&other.amps);
    }

    /// Drops terms with |amp| below `tol`.
    pub fn prune(&mut self, tol: f64) {
        let d = self.dim;
        let mut k = 0;
        let mut keep_f = Vec::with_capacity(self.freqs.len());
        self.amps.retain(|a| {
            let keep = a.norm() >= tol;
            if keep {
                keep_f.extend_from_slice(&self.freqs[k * d..(k + 1) * d]);
            }
            k += 1;
            keep
        });
        self.freqs = keep_f;
    }

    /// Rebuilds every term through `f(amp, freq) -> (amp', freq')`.
    pub fn map_terms<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(Complex64, &[f64]) -> Result<(Complex64, Vec<f64>)>,
    {
        let mut out = Self::constant(self.dim, self.constant);
        for (a, fr) in self.terms() {
            let (a2, f2) = f(a, fr)?;
            out.push(a2, &f2);
        }
        Ok(out)
    }
}

/// Phase of each Weierstrass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    #[default]
    Sine,
    Cosine,
}

/// One lacunary series sum_k base^{-k beta} trig(base^k x_axis / length).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeierstrassComponent {
    pub axis: usize,
    pub beta: f64,
}

fn default_base() -> f64 {
    2.0
}
fn default_terms() -> usize {
    12
}
fn default_length() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

/// Registry entry, selected by name in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum TestFnSpec {
    Weierstrass {
        components: Vec<WeierstrassComponent>,
        #[serde(default = "default_base")]
        base: f64,
        #[serde(default = "default_terms")]
        terms: usize,
        #[serde(default = "default_length")]
        length: f64,
        #[serde(default)]
        phase: Phase,
        /// Scale so that the sup norm is at most one.
        #[serde(default = "default_true")]
        normalize: bool,
    },
    CosinePack {
        /// Rows of (amplitude, phase, frequency...).
        waves: Vec<Vec<f64>>,
        #[serde(default)]
        constant: f64,
    },
    IndicatorSmoothed {
        center: Vec<f64>,
        radius: f64,
        width: f64,
    },
    AffineWindowed {
        slope: Vec<f64>,
        window: f64,
    },
    Constant {
        value: f64,
    },
}

/// A built test function.
#[derive(Debug, Clone, PartialEq)]
pub enum TestFn {
    Waves(PlaneWaveSum),
    IndicatorSmoothed { center: Vec<f64>, radius: f64, width: f64 },
    AffineWindowed { slope: Vec<f64>, window: f64 },
}

impl TestFnSpec {
    pub fn build(&self, dim: usize) -> Result<TestFn> {
        let bad = |m: String| Err(Error::BadParam(m));
        match self {
            TestFnSpec::Weierstrass { components, base, terms, length, phase, normalize } => {
                if !(*base > 1.0) || *terms == 0 || !(*length > 0.0) {
                    return bad(format!("weierstrass needs base > 1, terms > 0, length > 0 (got {base}, {terms}, {length})"));
                }
                let mut pw = PlaneWaveSum::new(dim);
                let mut total = 0.0;
                for c in components {
                    if c.axis >= dim {
                        return bad(format!("weierstrass axis {} outside dimension {dim}", c.axis));
                    }
                    if !(c.beta >= 0.0) {
                        return bad(format!("weierstrass beta must be nonnegative, got {}", c.beta));
                    }
                    for k in 0..*terms {
                        let a = base.powf(-(k as f64) * c.beta);
                        total += a;
                        let mut f = vec![0.0; dim];
                        f[c.axis] = base.powi(k as i32) / length;
                        let amp = match phase {
                            Phase::Sine => Complex64::new(0.0, -a),
                            Phase::Cosine => Complex64::new(a, 0.0),
                        };
                        pw.push(amp, &f);
                    }
                }
                if *normalize && total > 0.0 {
                    pw = pw.scaled(1.0 / total);
                }
                Ok(TestFn::Waves(pw))
            }
            TestFnSpec::CosinePack { waves, constant } => {
                let mut pw = PlaneWaveSum::constant(dim, *constant);
                for w in waves {
                    if w.len() != dim + 2 {
                        return bad(format!("cosine_pack rows need {} entries, got {}", dim + 2, w.len()));
                    }
                    pw.push(Complex64::from_polar(w[0], w[1]), &w[2..]);
                }
                Ok(TestFn::Waves(pw))
            }
            TestFnSpec::IndicatorSmoothed { center, radius, width } => {
                if center.len() != dim || !(*radius > 0.0) || !(*width > 0.0) {
                    return bad("indicator_smoothed needs a center of the state dimension and positive radius, width".into());
                }
                Ok(TestFn::IndicatorSmoothed { center: center.clone(), radius: *radius, width: *width })
            }
            TestFnSpec::AffineWindowed { slope, window } => {
                if slope.len() != dim || !(*window > 0.0) {
                    return bad("affine_windowed needs a slope of the state dimension and a positive window".into());
                }
                Ok(TestFn::AffineWindowed { slope: slope.clone(), window: *window })
            }
            TestFnSpec::Constant { value } => Ok(TestFn::Waves(PlaneWaveSum::constant(dim, *value))),
        }
    }
}

impl TestFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TestFn::Waves(p) => p.eval(x),
            TestFn::IndicatorSmoothed { center, radius, width } => {
                let r = x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                0.5 * (1.0 - ((r - radius) / width).tanh())
            }
            TestFn::AffineWindowed { slope, window } => {
                let l: f64 = slope.iter().zip(x).map(|(a, b)| a * b).sum();
                window * (l / window).tanh()
            }
        }
    }

    pub fn waves(&self) -> Option<&PlaneWaveSum> {
        match self {
            TestFn::Waves(p) => Some(p),
            _ => None,
        }
    }

    pub fn sup_bound(&self) -> f64 {
        match self {
            TestFn::Waves(p) => p.sup_bound(),
            TestFn::IndicatorSmoothed { .. } => 1.0,
            TestFn::AffineWindowed { window, .. } => *window,
        }
    }

    /// Shortest length over which the function varies appreciably.
    pub fn length_scale(&self) -> f64 {
        match self {
            TestFn::Waves(p) => {
                let w = p.max_frequency();
                if w > 0.0 {
                    1.0 / w
                } else {
                    1.0
                }
            }
            TestFn::IndicatorSmoothed { width, .. } => *width,
            TestFn::AffineWindowed { slope, window } => {
                let s = slope.iter().map(|v| v * v).sum::<f64>().sqrt();
                if s > 0.0 {
                    window / s
                } else {
                    1.0
                }
            }
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        match self {
            TestFn::IndicatorSmoothed { .. } => true,
            TestFn::Waves(p) => p.constant >= p.sup_bound() - p.constant.abs(),
            TestFn::AffineWindowed { .. } => false,
        }
    }
}
