//! Anisotropic distance, third differences and empirical Holder estimates.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::fit_power_law;
use crate::kalman::KalmanDecomposition;

/// Scalar field on R^N.
pub type Field<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

/// Block decomposition together with the stability index.
#[derive(Debug, Clone)]
pub struct Anisotropy {
    pub dec: KalmanDecomposition,
    pub alpha: f64,
}

impl Anisotropy {
    pub fn new(dec: KalmanDecomposition, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::BadParam(format!("alpha must lie in (0,2), got {alpha}")));
        }
        Ok(Self { dec, alpha })
    }

    /// 1/(1 + alpha*h) for block h (0-based).
    pub fn exponent(&self, h: usize) -> f64 {
        1.0 / (1.0 + self.alpha * h as f64)
    }

    pub fn n_blocks(&self) -> usize {
        self.dec.n_blocks
    }
}

/// Sum over blocks of |E_h(x - y)|^{1/(1+alpha h)}.
pub fn distance(aniso: &Anisotropy, x: &[f64], y: &[f64]) -> f64 {
    let diff = DVector::from_iterator(x.len(), x.iter().zip(y).map(|(a, b)| a - b));
    aniso
        .dec
        .projections
        .iter()
        .enumerate()
        .map(|(h, e)| (e * &diff).norm().powf(aniso.exponent(h)))
        .sum()
}

/// |s - t|^{1/alpha} + d(x, y).
pub fn parabolic_distance(aniso: &Anisotropy, p: (f64, &[f64]), q: (f64, &[f64])) -> f64 {
    (p.0 - q.0).abs().powf(1.0 / aniso.alpha) + distance(aniso, p.1, q.1)
}

/// phi(x0+3z) - 3 phi(x0+2z) + 3 phi(x0+z) - phi(x0).
pub fn third_difference(phi: Field, x0: &[f64], z: &[f64]) -> f64 {
    let at = |k: f64| {
        let p: Vec<f64> = x0.iter().zip(z).map(|(a, b)| a + k * b).collect();
        phi(&p)
    };
    (at(3.0) - at(0.0)) - 3.0 * (at(2.0) - at(1.0))
}

/// `count` log-spaced offsets in [lo, hi].
pub fn log_offsets(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count)
        .map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// 24 log-spaced offsets in [2^-16, 2^-2].
pub fn default_offsets() -> Vec<f64> {
    log_offsets(2f64.powi(-16), 0.25, 24)
}

/// Block axes plus eight seeded random unit directions in E_h, deduplicated.
pub fn probe_directions(dec: &KalmanDecomposition, h: usize) -> Vec<Vec<f64>> {
    let basis = dec.block_basis(h);
    let dh = basis.ncols();
    let mut dirs: Vec<DVector<f64>> = (0..dh).map(|j| basis.column(j).into_owned()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + h as u64);
    for _ in 0..8 {
        let c = DVector::from_fn(dh, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let v = &basis * c;
        let nrm = v.norm();
        if nrm > 1e-8 {
            dirs.push(v / nrm);
        }
    }
    let mut out: Vec<DVector<f64>> = Vec::new();
    for d in dirs {
        if !out.iter().any(|o| (o - &d).norm() < 1e-9) {
            out.push(d);
        }
    }
    out.into_iter().map(|v| v.iter().copied().collect()).collect()
}

/// Result of a block-wise third-difference scan.
#[derive(Debug, Clone, Serialize)]
pub struct HolderEstimate {
    /// Block index (1-based, matching the usual block numbering).
    pub block: usize,
    pub exponent_fit: f64,
    pub fit_residual: f64,
    /// sup |Delta^3| / |z|^target over the probe set.
    pub seminorm: f64,
    pub target_exponent: f64,
    /// Same ratio at the fitted exponent.
    pub seminorm_at_fit: f64,
    pub probe_count: usize,
    /// (scale, max |Delta^3| at that scale)
    pub rows: Vec<(f64, f64)>,
    /// Set when every third difference vanishes (no exponent can be fitted).
    pub trivial: bool,
}

/// Scans Delta^3 along block-h probe directions at each offset and x0 sample.
pub fn estimate_holder(
    phi: Field,
    aniso: &Anisotropy,
    h: usize,
    offsets: &[f64],
    x0_samples: &[Vec<f64>],
    target_exponent: f64,
) -> Result<HolderEstimate> {
    if offsets.len() < 3 {
        return Err(Error::DegenerateFit(format!("{} scales, need at least 3", offsets.len())));
    }
    if h >= aniso.n_blocks() {
        return Err(Error::BadParam(format!("block {h} out of range")));
    }
    let dirs = probe_directions(&aniso.dec, h);
    let rows: Vec<(f64, f64)> = offsets
        .par_iter()
        .map(|&s| {
            let mut m = 0.0f64;
            for x0 in x0_samples {
                for d in &dirs {
                    let z: Vec<f64> = d.iter().map(|v| v * s).collect();
                    m = m.max(third_difference(phi, x0, &z).abs());
                }
            }
            (s, m)
        })
        .collect();
    let probe_count = offsets.len() * x0_samples.len() * dirs.len();
    let floor = rows.iter().fold(0.0f64, |a, r| a.max(r.1)) * 1e-300;
    let seminorm_at = |g: f64| rows.iter().fold(0.0f64, |a, &(s, m)| a.max(m / s.powf(g)));
    if rows.iter().all(|r| r.1 <= floor) {
        return Ok(HolderEstimate {
            block: h + 1,
            exponent_fit: 3.0,
            fit_residual: 0.0,
            seminorm: 0.0,
            target_exponent,
            seminorm_at_fit: 0.0,
            probe_count,
            rows,
            trivial: true,
        });
    }
    let positive: Vec<(f64, f64)> = rows.iter().copied().filter(|r| r.1 > 0.0).collect();
    let fit = fit_power_law(&positive)?;
    Ok(HolderEstimate {
        block: h + 1,
        exponent_fit: fit.slope,
        fit_residual: fit.residual,
        seminorm: seminorm_at(target_exponent),
        target_exponent,
        seminorm_at_fit: seminorm_at(fit.slope),
        probe_count,
        rows,
        trivial: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::{compute_decomposition, SystemPair, DEFAULT_RANK_TOL};
    use proptest::prelude::*;

    fn kolmo(alpha: f64) -> Anisotropy {
        let dec = compute_decomposition(&SystemPair::kolmogorov(), DEFAULT_RANK_TOL).unwrap();
        Anisotropy::new(dec, alpha).unwrap()
    }

    #[test]
    fn distance_examples() {
        let a1 = kolmo(1.0);
        assert_eq!(distance(&a1, &[0.3, 0.2], &[0.3, 0.2]), 0.0);
        assert!((distance(&a1, &[0.0, 4.0], &[0.0, 0.0]) - 2.0).abs() < 1e-15);
        let a = kolmo(1.5);
        assert!((distance(&a, &[3.0, 0.0], &[0.0, 0.0]) - 3.0).abs() < 1e-15);
        let p = parabolic_distance(&a, (8.0, &[1.0, 1.0]), (0.0, &[1.0, 1.0]));
        assert!((p - 4.0).abs() < 1e-12);
    }

    #[test]
    fn third_difference_examples() {
        let cube = |x: &[f64]| x[0].powi(3);
        for x0 in [[0.0, 0.0], [1.7, -2.0], [-3.0, 5.0]] {
            assert!((third_difference(&cube, &x0, &[1.0, 0.0]) - 6.0).abs() < 1e-9);
        }
        let affine = |x: &[f64]| 2.0 * x[0] - x[1] + 0.5;
        assert!(third_difference(&affine, &[0.3, 0.4], &[0.7, -0.2]).abs() < 1e-14);
        assert_eq!(third_difference(&cube, &[0.3, 0.4], &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn holder_exponent_of_power_cusp() {
        let a = kolmo(1.5);
        let phi = |x: &[f64]| x[0].abs().sqrt();
        let x0s: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![0.0, 0.5]];
        let e = estimate_holder(&phi, &a, 0, &log_offsets(2f64.powi(-16), 0.25, 32), &x0s, 0.5)
            .unwrap();
        assert!((e.exponent_fit - 0.5).abs() < 0.05, "{}", e.exponent_fit);
    }

    #[test]
    fn constant_has_zero_seminorm() {
        let a = kolmo(1.5);
        let e = estimate_holder(&|_: &[f64]| 2.5, &a, 1, &default_offsets(), &[vec![0.0, 0.0]], 0.4)
            .unwrap();
        assert!(e.trivial && e.seminorm == 0.0);
        assert!(estimate_holder(&|_: &[f64]| 1.0, &a, 1, &[0.1, 0.2], &[vec![0.0; 2]], 0.4).is_err());
    }

    #[test]
    fn weierstrass_exponent_along_first_block() {
        let a = kolmo(1.5);
        let w = |x: &[f64]| {
            (0..=20)
                .map(|k| 2f64.powf(-0.4 * k as f64) * (2f64.powi(k) * x[0]).cos())
                .sum::<f64>()
        };
        let x0s: Vec<Vec<f64>> = (0..16).map(|i| vec![i as f64 * 0.37, 0.0]).collect();
        let e = estimate_holder(&w, &a, 0, &log_offsets(2f64.powi(-16), 0.25, 32), &x0s, 0.4)
            .unwrap();
        assert!((e.exponent_fit - 0.4).abs() < 0.05, "{}", e.exponent_fit);
    }

    proptest! {
        #[test]
        fn quasi_triangle_inequality(
            x in prop::collection::vec(-5.0f64..5.0, 2),
            y in prop::collection::vec(-5.0f64..5.0, 2),
            z in prop::collection::vec(-5.0f64..5.0, 2),
        ) {
            let a = kolmo(1.5);
            let lhs = distance(&a, &x, &z);
            let rhs = distance(&a, &x, &y) + distance(&a, &y, &z);
            prop_assert!(lhs <= 4.0 * rhs + 1e-12);
            prop_assert!((distance(&a, &x, &y) - distance(&a, &y, &x)).abs() < 1e-12);
        }

        #[test]
        fn quadratics_have_vanishing_third_difference(
            c in prop::collection::vec(-3.0f64..3.0, 6),
            x0 in prop::collection::vec(-2.0f64..2.0, 2),
            z in prop::collection::vec(-1.0f64..1.0, 2),
        ) {
            let q = |x: &[f64]| c[0] + c[1] * x[0] + c[2] * x[1] + c[3] * x[0] * x[0]
                + c[4] * x[0] * x[1] + c[5] * x[1] * x[1];
            prop_assert!(third_difference(&q, &x0, &z).abs() < 1e-11);
        }

        #[test]
        fn parabolic_distance_is_dilation_homogeneous(
            s in 0.0f64..2.0, t in 0.0f64..2.0,
            x in prop::collection::vec(-3.0f64..3.0, 2),
            y in prop::collection::vec(-3.0f64..3.0, 2),
        ) {
            // delta_lambda(t, x1, x2) = (lambda^alpha t, lambda x1, lambda^{1+alpha} x2)
            let a = kolmo(1.5);
            let l: f64 = 2.0;
            let dil = |tt: f64, p: &[f64]| (l.powf(1.5) * tt, vec![l * p[0], l.powf(2.5) * p[1]]);
            let (ds, dx) = dil(s, &x);
            let (dt, dy) = dil(t, &y);
            let lhs = parabolic_distance(&a, (ds, &dx), (dt, &dy));
            let rhs = l * parabolic_distance(&a, (s, &x), (t, &y));
            prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + rhs));
        }
    }
}
