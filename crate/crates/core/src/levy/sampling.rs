//! Increment sampling: drift, Gaussian part, compound-Poisson large jumps
//! and a Gaussian surrogate for the compensated small jumps.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use sha2::{Digest, Sha256};

use super::{LevyModel, RadialProfile};
use crate::error::{Error, Result};

const CDF_PER_DECADE: usize = 64;
const CDF_MAGIC: &[u8; 8] = b"LVYCDF01";

/// Inverse-CDF table of the radial jump law restricted to [eps, inf).
#[derive(Debug, Clone, PartialEq)]
pub struct RadialCdf {
    r: Vec<f64>,
    /// cum[j] = int_eps^{r_j} g
    cum: Vec<f64>,
    /// Local log-log slope of g per cell.
    slope: Vec<f64>,
    /// Pareto continuation coef * r^{-1-kappa} beyond the last node.
    tail: Option<(f64, f64)>,
    tail_mass: f64,
}

impl RadialCdf {
    pub fn build(profile: &RadialProfile, eps: f64) -> Result<Self> {
        let end = profile.support_end();
        let (r_hi, tail) = if end.is_finite() {
            (end, None)
        } else {
            let kappa = match profile.kind {
                super::RadialKind::Layered { beta } => beta,
                _ => profile.alpha,
            };
            let r_hi = (profile.r0.max(1.0) * 1e4).max(eps * 1e4);
            (r_hi, Some((profile.g(r_hi) * r_hi.powf(1.0 + kappa), kappa)))
        };
        if !(r_hi > eps) {
            return Err(Error::CutoffTooLarge { eps, dt: f64::NAN });
        }
        let decades = (r_hi / eps).log10();
        let n = ((decades * CDF_PER_DECADE as f64).ceil() as usize).max(8);
        let mut r: Vec<f64> = (0..=n).map(|k| eps * (r_hi / eps).powf(k as f64 / n as f64)).collect();
        if profile.r0 > eps && profile.r0 < r_hi {
            r.push(profile.r0);
            r.sort_by(f64::total_cmp);
            r.dedup_by(|a, b| (*a - *b).abs() < 1e-14 * b.abs());
        }
        let mut cum = vec![0.0; r.len()];
        let mut slope = vec![0.0; r.len() - 1];
        for j in 0..r.len() - 1 {
            cum[j + 1] = cum[j] + profile.moment(r[j], r[j + 1], 0.0)?;
            let (ga, gb) = (profile.g(r[j] * (1.0 + 1e-12)), profile.g(r[j + 1] * (1.0 - 1e-12)));
            slope[j] = if ga > 0.0 && gb > 0.0 { (gb / ga).ln() / (r[j + 1] / r[j]).ln() } else { 0.0 };
        }
        let tail_mass = match tail {
            Some((c, k)) => c * r_hi.powf(-k) / k,
            None => 0.0,
        };
        Ok(Self { r, cum, slope, tail, tail_mass })
    }

    /// Loads the table from `dir` or builds and stores it there.
    pub fn cached(profile: &RadialProfile, eps: f64, dir: &Path) -> Result<Self> {
        let path = Self::cache_path(profile, eps, dir);
        if let Ok(t) = Self::read(&path) {
            return Ok(t);
        }
        let t = Self::build(profile, eps)?;
        fs::create_dir_all(dir)?;
        t.write(&path)?;
        Ok(t)
    }

    pub fn cache_path(profile: &RadialProfile, eps: f64, dir: &Path) -> PathBuf {
        let mut h = Sha256::new();
        h.update(CDF_MAGIC);
        h.update(serde_json::to_string(profile).unwrap_or_default().as_bytes());
        h.update(eps.to_le_bytes());
        h.update((CDF_PER_DECADE as u64).to_le_bytes());
        dir.join(format!("radial_cdf_{}.bin", &hex::encode(h.finalize())[..24]))
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CDF_MAGIC);
        buf.extend_from_slice(&(self.r.len() as u64).to_le_bytes());
        for v in self.r.iter().chain(&self.cum).chain(&self.slope) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let (c, k) = self.tail.unwrap_or((f64::NAN, f64::NAN));
        for v in [c, k, self.tail_mass] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let tmp = path.with_extension("tmp");
        fs::File::create(&tmp)?.write_all(&buf)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    fn read(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        let bad = || Error::Io(format!("corrupt radial table {}", path.display()));
        if buf.len() < 16 || &buf[..8] != CDF_MAGIC {
            return Err(bad());
        }
        let n = u64::from_le_bytes(buf[8..16].try_into().map_err(|_| bad())?) as usize;
        let need = 16 + 8 * (3 * n - 1 + 3);
        if n < 2 || buf.len() != need {
            return Err(bad());
        }
        let vals: Vec<f64> = buf[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let r = vals[..n].to_vec();
        let cum = vals[n..2 * n].to_vec();
        let slope = vals[2 * n..3 * n - 1].to_vec();
        let (c, k, tail_mass) = (vals[3 * n - 1], vals[3 * n], vals[3 * n + 1]);
        let tail = if c.is_nan() { None } else { Some((c, k)) };
        Ok(Self { r, cum, slope, tail, tail_mass })
    }

    /// Total mass int_eps^inf g.
    pub fn total(&self) -> f64 {
        self.cum[self.cum.len() - 1] + self.tail_mass
    }

    /// Radius with int_eps^r g = m, for 0 <= m < total.
    pub fn invert(&self, m: f64) -> f64 {
        let last = self.cum[self.cum.len() - 1];
        if m >= last {
            return match self.tail {
                Some((c, k)) => {
                    let rem = (self.total() - m).max(1e-300);
                    (k * rem / c).powf(-1.0 / k)
                }
                None => self.r[self.r.len() - 1],
            };
        }
        let j = match self.cum.binary_search_by(|c| c.total_cmp(&m)) {
            Ok(j) => j.min(self.r.len() - 2),
            Err(j) => j - 1,
        };
        let (ra, rb) = (self.r[j], self.r[j + 1]);
        let cell = self.cum[j + 1] - self.cum[j];
        if cell <= 0.0 {
            return ra;
        }
        let frac = ((m - self.cum[j]) / cell).clamp(0.0, 1.0);
        // Invert the power-law shape r^p across the cell.
        let e = self.slope[j] + 1.0;
        let ratio = rb / ra;
        if e.abs() < 1e-10 {
            ra * ratio.powf(frac)
        } else {
            ra * (1.0 + frac * (ratio.powf(e) - 1.0)).powf(1.0 / e)
        }
    }
}

/// Precomputed sampler for increments over a fixed time step.
#[derive(Debug, Clone)]
pub struct IncrementSampler {
    d: usize,
    pub dt: f64,
    pub eps: f64,
    shift: DVector<f64>,
    gauss: DMatrix<f64>,
    rate: f64,
    atom_cum: Vec<f64>,
    dirs: Vec<Vec<f64>>,
    table_of: Vec<usize>,
    tables: Vec<Arc<RadialCdf>>,
}

impl IncrementSampler {
    /// `eps = None` selects the intrinsic scale dt^{1/alpha} (capped at r0).
    pub fn new(model: &LevyModel, dt: f64, eps: Option<f64>) -> Result<Self> {
        Self::with_cache(model, dt, eps, None)
    }

    pub fn with_cache(
        model: &LevyModel,
        dt: f64,
        eps: Option<f64>,
        cache_dir: Option<&Path>,
    ) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::BadParam(format!("dt must be positive, got {dt}")));
        }
        let eps = match eps {
            Some(e) if e > model.r0 => return Err(Error::CutoffTooLarge { eps: e, dt }),
            Some(e) if !(e > 0.0) => return Err(Error::BadParam(format!("cutoff must be positive, got {e}"))),
            Some(e) => e,
            None => dt.powf(1.0 / model.alpha).min(model.r0),
        };
        let d = model.dim();
        let mut shift = &model.b * dt;
        let mut cov = &model.q_gauss * dt;
        let mut keys: Vec<RadialProfile> = Vec::new();
        let mut tables: Vec<Arc<RadialCdf>> = Vec::new();
        let mut table_of = Vec::new();
        let mut rates = Vec::new();
        let mut dirs = Vec::new();
        for (i, a) in model.mu.atoms.iter().enumerate() {
            let p = model.profile(i)?;
            let th = DVector::from_column_slice(&a.theta);
            let first = p.moment(1.0, eps, 1.0).unwrap_or(0.0);
            let signed_first = if eps >= 1.0 { first } else { -p.moment(eps, 1.0, 1.0)? };
            shift += &th * (a.weight * dt * signed_first);
            let m2 = p.moment(0.0, eps, 2.0)?;
            cov += &th * th.transpose() * (a.weight * dt * m2);
            let idx = match keys.iter().position(|k| *k == p) {
                Some(j) => j,
                None => {
                    let t = match cache_dir {
                        Some(dir) => RadialCdf::cached(&p, eps, dir)?,
                        None => RadialCdf::build(&p, eps)?,
                    };
                    keys.push(p);
                    tables.push(Arc::new(t));
                    keys.len() - 1
                }
            };
            table_of.push(idx);
            rates.push(a.weight * tables[idx].total());
            dirs.push(a.theta.clone());
        }
        let rate_total: f64 = rates.iter().sum();
        let mut atom_cum = Vec::new();
        let mut acc = 0.0;
        for r in &rates {
            acc += r / rate_total.max(1e-300);
            atom_cum.push(acc);
        }
        let eig = cov.clone().symmetric_eigen();
        let sq = eig.eigenvalues.map(|e| e.max(0.0).sqrt());
        let gauss = &eig.eigenvectors * DMatrix::from_diagonal(&sq);
        Ok(Self {
            d,
            dt,
            eps,
            shift,
            gauss,
            rate: rate_total * dt,
            atom_cum,
            dirs,
            table_of,
            tables,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Expected number of large jumps per step.
    pub fn jump_rate(&self) -> f64 {
        self.rate
    }

    /// Writes one increment into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        out.copy_from_slice(self.shift.as_slice());
        let mut z = [0.0f64; 8];
        let z = &mut z[..self.d];
        let mut any = false;
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for j in 0..self.d {
            let zj = z[j];
            for i in 0..self.d {
                let g = self.gauss[(i, j)];
                if g != 0.0 {
                    out[i] += g * zj;
                    any = true;
                }
            }
        }
        let _ = any;
        if self.rate > 0.0 {
            let n = Poisson::new(self.rate).map(|p| p.sample(rng) as u64).unwrap_or(0);
            for _ in 0..n {
                let ua: f64 = rng.random();
                let a = self.atom_cum.partition_point(|&c| c < ua).min(self.dirs.len() - 1);
                let t = &self.tables[self.table_of[a]];
                let m: f64 = rng.random::<f64>() * t.total();
                let r = t.invert(m);
                for (o, th) in out.iter_mut().zip(&self.dirs[a]) {
                    *o += r * th;
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut v = vec![0.0; self.d];
        self.sample_into(rng, &mut v);
        v
    }
}

/// One increment of the Levy process over `dt` (builds a fresh sampler).
pub fn sample_increment<R: Rng + ?Sized>(
    model: &LevyModel,
    dt: f64,
    eps: Option<f64>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if model.dim() > 8 {
        return Err(Error::BadParam("sampling supports noise dimension up to 8".into()));
    }
    Ok(IncrementSampler::new(model, dt, eps)?.sample(rng))
}
