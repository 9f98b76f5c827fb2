//! Monte Carlo simulation of the noise part of the OU path.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::OuModel;
use crate::error::{Error, Result};
use crate::levy::IncrementSampler;

const CHUNK: usize = 4096;

/// Where in each step the deterministic kernel is frozen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McScheme {
    /// Kernel at the step midpoint; second order in the step.
    #[default]
    Midpoint,
    /// Exact-exponential Euler step `X <- e^{dt A} (X + B dZ)`.
    Euler,
}

/// Samples of the noise part Y, so that X_t = F x + Y.
#[derive(Debug, Clone)]
pub struct McEnsemble {
    pub s: f64,
    pub t: f64,
    pub n: usize,
    pub flow: DMatrix<f64>,
    /// paths x n, row-major.
    pub samples: Vec<f64>,
}

impl McEnsemble {
    pub fn paths(&self) -> usize {
        self.samples.len() / self.n.max(1)
    }

    /// Sample mean of phi(F x + Y) and its standard error.
    pub fn apply(&self, phi: &(dyn Fn(&[f64]) -> f64 + Sync), x: &[f64]) -> (f64, f64) {
        let n = self.n;
        let fx = &self.flow * nalgebra::DVector::from_column_slice(x);
        let vals: Vec<f64> = self
            .samples
            .par_chunks(n)
            .map(|y| {
                let mut p = [0.0; 8];
                for i in 0..n {
                    p[i] = fx[i] + y[i];
                }
                phi(&p[..n])
            })
            .collect();
        let m = vals.len() as f64;
        if vals.iter().all(|v| *v == vals[0]) {
            return (vals.first().copied().unwrap_or(0.0), 0.0);
        }
        let mean = vals.iter().sum::<f64>() / m;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        (mean, (var / m).sqrt())
    }
}

/// Simulates Y over [s, t] with `steps` increments per path.
pub fn simulate_noise(
    model: &OuModel,
    s: f64,
    t: f64,
    paths: usize,
    steps: usize,
    seed: u64,
    scheme: McScheme,
) -> Result<McEnsemble> {
    let n = model.state_dim();
    let d = model.noise_dim();
    if n > 8 || d > 8 {
        return Err(Error::BadParam("Monte Carlo supports dimensions up to 8".into()));
    }
    if paths == 0 || steps == 0 {
        return Err(Error::BadParam("paths and steps must be positive".into()));
    }
    let flow = model.flow(s, t)?;
    let span = t - s;
    if span == 0.0 {
        return Ok(McEnsemble { s, t, n, flow, samples: vec![0.0; paths * n] });
    }
    let dt = span / steps as f64;
    let offset = match scheme {
        McScheme::Midpoint => 0.5,
        McScheme::Euler => 0.0,
    };
    // Loading of each increment onto the state: G(r)^T, with r measured so
    // that the constant-coefficient case runs over [0, t - s] backwards.
    let loads: Vec<DMatrix<f64>> = if model.is_time_homogeneous() {
        (0..steps)
            .map(|k| Ok(model.noise_path().noise(span - (k as f64 + offset) * dt)?.transpose()))
            .collect::<Result<_>>()?
    } else {
        let ms = model.noise_path().propagator(s)?;
        let inv_t = ms
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::BadParam(format!("singular propagator at {s}")))?
            .transpose();
        (0..steps)
            .map(|k| Ok(&inv_t * model.noise_path().noise(s + (k as f64 + offset) * dt)?.transpose()))
            .collect::<Result<_>>()?
    };
    let sampler = IncrementSampler::new(&model.levy, dt, None)?;
    let mut samples = vec![0.0; paths * n];
    samples.par_chunks_mut(CHUNK * n).enumerate().for_each(|(c, out)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let mut dz = [0.0; 8];
        for y in out.chunks_mut(n) {
            for l in &loads {
                sampler.sample_into(&mut rng, &mut dz[..d]);
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += l[(i, j)] * dz[j];
                    }
                    y[i] += acc;
                }
            }
        }
    });
    Ok(McEnsemble { s, t, n, flow, samples })
}

/// Monte Carlo estimate of P_t phi(x) with the default scheme.
pub fn mc_apply_semigroup(
    model: &OuModel,
    t: f64,
    phi: &(dyn Fn(&[f64]) -> f64 + Sync),
    x: &[f64],
    paths: usize,
    steps: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let ens = simulate_noise(model, 0.0, t, paths, steps, seed, McScheme::default())?;
    Ok(ens.apply(phi, x))
}
