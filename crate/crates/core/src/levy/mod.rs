//! Levy triplets with polar jump measures mu(dtheta) Q(r,theta) r^{-1-alpha} dr.

mod radial;
pub mod sampling;
pub mod table;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use radial::{RadialKind, RadialProfile};
pub use sampling::{sample_increment, IncrementSampler};
pub use table::SymbolTable;

/// Operator family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Family {
    Stable,
    Truncated,
    Layered { beta: f64 },
    Tempered { lambda: f64 },
    Relativistic,
    /// The profile f(theta) is given per atom.
    Lamperti,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Stable => "stable",
            Family::Truncated => "truncated",
            Family::Layered { .. } => "layered",
            Family::Tempered { .. } => "tempered",
            Family::Relativistic => "relativistic",
            Family::Lamperti => "lamperti",
        }
    }
}

/// Point mass of the spherical measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub theta: Vec<f64>,
    pub weight: f64,
    /// Lamperti exponent f(theta); ignored by other families.
    #[serde(default)]
    pub f: f64,
}

/// Finite atomic measure on the unit sphere of R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalMeasure {
    dim: usize,
    pub atoms: Vec<Atom>,
}

impl SphericalMeasure {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::BadParam("spherical measure needs at least one atom".into()));
        }
        let d = atoms[0].theta.len();
        for a in &atoms {
            if a.theta.len() != d || d == 0 {
                return Err(Error::BadParam("atoms must share a positive dimension".into()));
            }
            let n = a.theta.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-10 {
                return Err(Error::BadParam(format!("atom direction has norm {n}, expected 1")));
            }
            if !(a.weight > 0.0 && a.weight.is_finite()) {
                return Err(Error::BadParam(format!("atom weight must be positive, got {}", a.weight)));
            }
        }
        Ok(Self { dim: d, atoms })
    }

    /// No jumps at all (pure Gaussian / drift models).
    pub fn empty(dim: usize) -> Self {
        Self { dim, atoms: Vec::new() }
    }

    /// Atoms at +-1 with weight 1/2 each (d = 1).
    pub fn symmetric_1d() -> Self {
        Self {
            dim: 1,
            atoms: vec![
                Atom { theta: vec![1.0], weight: 0.5, f: 0.0 },
                Atom { theta: vec![-1.0], weight: 0.5, f: 0.0 },
            ],
        }
    }

    /// `count` equi-spaced atoms on the circle with equal weights summing to one.
    pub fn equiangular_2d(count: usize) -> Self {
        let atoms = (0..count)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                Atom { theta: vec![a.cos(), a.sin()], weight: 1.0 / count as f64, f: 0.0 }
            })
            .collect();
        Self { dim: 2, atoms }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// Closed under theta -> -theta with equal weights (and equal f).
    pub fn is_symmetric(&self) -> bool {
        self.atoms.iter().all(|a| {
            self.atoms.iter().any(|b| {
                b.weight == a.weight
                    && b.f == a.f
                    && b.theta.iter().zip(&a.theta).all(|(x, y)| (x + y).abs() < 1e-12)
            })
        })
    }
}

/// Deterministic unit probe directions in R^d (at least `count` of them).
pub fn unit_probes(d: usize, count: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            // Fibonacci sphere.
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * k as f64;
                    vec![r * a.cos(), r * a.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut out = Vec::new();
            for i in 0..d {
                for s in [1.0, -1.0] {
                    let mut v = vec![0.0; d];
                    v[i] = s;
                    out.push(v);
                }
            }
            out
        }
    }
}

/// Non-degeneracy constant: max over probes of max(ratio, 1/ratio) with
/// ratio = sum_i w_i |p . theta_i|^alpha.
pub fn nondegeneracy_constant(mu: &SphericalMeasure, alpha: f64, probes: usize) -> Result<f64> {
    if mu.atoms.is_empty() {
        return Err(Error::Degenerate { ratio: 0.0 });
    }
    if probes < 100 {
        return Err(Error::BadParam(format!("need at least 100 probes, got {probes}")));
    }
    let mut eta: f64 = 1.0;
    for p in unit_probes(mu.dim(), probes) {
        let ratio: f64 = mu
            .atoms
            .iter()
            .map(|a| a.weight * dot(&p, &a.theta).abs().powf(alpha))
            .sum();
        if ratio < 1e-8 {
            return Err(Error::Degenerate { ratio });
        }
        eta = eta.max(ratio).max(1.0 / ratio);
    }
    Ok(eta)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The Levy triplet (Q, b, nu) with nu in polar form.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyModel {
    pub family: Family,
    pub alpha: f64,
    pub r0: f64,
    pub mu: SphericalMeasure,
    pub q_gauss: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LevyModel {
    pub fn new(
        family: Family,
        alpha: f64,
        r0: f64,
        mu: SphericalMeasure,
        q_gauss: DMatrix<f64>,
        b: DVector<f64>,
    ) -> Result<Self> {
        let mu = if mu.atoms.is_empty() { mu } else { SphericalMeasure::new(mu.atoms)? };
        let d = mu.dim();
        if d == 0 {
            return Err(Error::BadParam("noise dimension must be positive".into()));
        }
        if q_gauss.nrows() != d || q_gauss.ncols() != d || b.len() != d {
            return Err(Error::BadParam(format!("Gaussian part and drift must have dimension {d}")));
        }
        if (&q_gauss - q_gauss.transpose()).amax() > 1e-12 {
            return Err(Error::BadParam("Gaussian covariance must be symmetric".into()));
        }
        let eig = q_gauss.clone().symmetric_eigen().eigenvalues;
        if eig.iter().any(|&e| e < -1e-12) {
            return Err(Error::BadParam("Gaussian covariance must be non-negative definite".into()));
        }
        let model = Self { family, alpha, r0, mu, q_gauss, b };
        for i in 0..model.mu.atoms.len() {
            model.profile(i)?;
        }
        Ok(model)
    }

    /// Pure-jump symmetric model in d = 1 with atoms +-1.
    pub fn symmetric_1d(family: Family, alpha: f64, r0: f64) -> Result<Self> {
        Self::new(
            family,
            alpha,
            r0,
            SphericalMeasure::symmetric_1d(),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
        )
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    /// Gaussian-plus-drift model without jumps.
    pub fn gaussian(q_gauss: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let d = b.len();
        Self::new(Family::Stable, 1.0, 1.0, SphericalMeasure::empty(d), q_gauss, b)
    }

    pub fn has_jumps(&self) -> bool {
        !self.mu.atoms.is_empty()
    }

    /// Radial profile of atom i.
    pub fn profile(&self, i: usize) -> Result<RadialProfile> {
        let kind = match self.family {
            Family::Stable => RadialKind::Stable,
            Family::Truncated => RadialKind::Truncated,
            Family::Layered { beta } => RadialKind::Layered { beta },
            Family::Tempered { lambda } => RadialKind::Tempered { lambda },
            Family::Relativistic => RadialKind::Relativistic { dim: self.dim() },
            Family::Lamperti => RadialKind::Lamperti { f: self.mu.atoms[i].f },
        };
        RadialProfile::new(kind, self.alpha, self.r0)
    }

    /// Q(r, theta) for atom direction theta (must be one of the atoms for lamperti).
    pub fn radial_density(&self, r: f64, theta: &[f64]) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::BadParam(format!("radius must be positive, got {r}")));
        }
        let idx = self
            .mu
            .atoms
            .iter()
            .position(|a| a.theta.iter().zip(theta).all(|(x, y)| (x - y).abs() < 1e-12));
        let i = match (self.family, idx) {
            (_, Some(i)) => i,
            (Family::Lamperti, None) => {
                return Err(Error::BadParam("lamperti profile is defined on atoms only".into()))
            }
            (_, None) => 0,
        };
        Ok(self.profile(i)?.q(r))
    }

    /// Minimum of Q over (0, r0] and all atoms.
    pub fn nd_lower_bound(&self) -> Result<f64> {
        if !self.has_jumps() {
            return Ok(0.0);
        }
        let mut m = f64::INFINITY;
        for i in 0..self.mu.atoms.len() {
            m = m.min(self.profile(i)?.min_q_on_core());
        }
        Ok(m)
    }

    /// int (1 ^ |z|^2) nu(dz).
    pub fn integrability(&self) -> Result<f64> {
        let mut s = 0.0;
        for (i, a) in self.mu.atoms.iter().enumerate() {
            let p = self.profile(i)?;
            s += a.weight * (p.moment(0.0, 1.0, 2.0)? + p.moment(1.0, f64::INFINITY, 0.0)?);
        }
        Ok(s)
    }

    /// Direct evaluation of the Levy symbol by compensated radial quadrature.
    pub fn symbol(&self, p: &[f64]) -> Result<Complex64> {
        let bp = dot(self.b.as_slice(), p);
        let qp = DVector::from_column_slice(p);
        let quad = 0.5 * qp.dot(&(&self.q_gauss * &qp));
        let mut acc = Complex64::new(quad, -bp);
        for (i, a) in self.mu.atoms.iter().enumerate() {
            let u = dot(p, &a.theta);
            acc += self.profile(i)?.transform(u)? * a.weight;
        }
        Ok(acc)
    }

    /// Mean of the unit-time increment, b + int_{|z|>1} z nu(dz), if finite.
    pub fn increment_mean(&self) -> Result<DVector<f64>> {
        let mut m = self.b.clone();
        for (i, a) in self.mu.atoms.iter().enumerate() {
            let m1 = self.profile(i)?.moment(1.0, f64::INFINITY, 1.0)?;
            for (k, th) in a.theta.iter().enumerate() {
                m[k] += a.weight * th * m1;
            }
        }
        Ok(m)
    }

    /// Stable content hash of the model parameters.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}|{:e}|{:e}", self.family, self.alpha, self.r0).as_bytes());
        for a in &self.mu.atoms {
            for t in &a.theta {
                h.update(t.to_le_bytes());
            }
            h.update(a.weight.to_le_bytes());
            h.update(a.f.to_le_bytes());
        }
        for v in self.q_gauss.iter().chain(self.b.iter()) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Levy symbol Phi(p) of the model.
pub fn levy_symbol(model: &LevyModel, p: &[f64]) -> Result<Complex64> {
    model.symbol(p)
}
