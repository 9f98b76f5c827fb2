//! Assumption checks with their witnessing quantities.

use serde::Serialize;

use levyou::kalman::{compute_decomposition, DEFAULT_RANK_TOL};
use levyou::levy::nondegeneracy_constant;

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub tag: &'static str,
    pub pass: bool,
    pub witness: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| format!("[{}] {} {}", c.tag, if c.pass { "pass" } else { "FAIL" }, c.witness))
            .collect()
    }
}

/// Checks [K], [ND], [B] and [UE]. Structural errors (bad matrices, invalid
/// Levy parameters, rank-deficient B) are returned as configuration errors.
pub fn validate(cfg: &ExperimentConfig) -> Result<ValidationReport, CliError> {
    let sys = cfg.system()?;
    let levy = cfg.levy()?;
    cfg.grid_spec()?;
    if levy.dim() != sys.noise_dim() {
        return Err(CliError::Config(levyou::Error::BadParam(format!(
            "Levy dimension {} does not match the {} columns of B",
            levy.dim(),
            sys.noise_dim()
        ))));
    }
    for (name, f) in &cfg.functions {
        f.build(sys.state_dim())
            .map_err(|e| CliError::Config(levyou::Error::SchemaError(format!("function `{name}`: {e}"))))?;
    }
    let mut checks = Vec::new();
    match compute_decomposition(&sys, DEFAULT_RANK_TOL) {
        Ok(dec) => checks.push(Check {
            tag: "K",
            pass: true,
            witness: format!("n = {}, rank chain {:?}, block dims {:?}", dec.n_blocks, dec.rank_chain, dec.dims),
        }),
        Err(e @ levyou::Error::RankDeficientB { .. }) => return Err(CliError::Config(e)),
        Err(levyou::Error::KalmanFailure { rank, dim }) => checks.push(Check {
            tag: "K",
            pass: false,
            witness: format!("controllable dimension {rank} < {dim}"),
        }),
        Err(e) => return Err(CliError::Config(e)),
    }
    let min_q = levy.nd_lower_bound().map_err(CliError::Config)?;
    let eta = if levy.has_jumps() {
        nondegeneracy_constant(&levy.mu, levy.alpha, 256).map_err(CliError::Config)?
    } else {
        0.0
    };
    let gauss_min = levy.q_gauss.clone().symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let nd = (min_q > 0.0 && eta > 0.0) || gauss_min > 0.0;
    checks.push(Check {
        tag: "ND",
        pass: nd,
        witness: format!("min Q(r, theta) on core {min_q:.4e}, spherical constant {eta:.4e}, min Gaussian eigenvalue {gauss_min:.3e}"),
    });
    match &cfg.model.time_dependent {
        None => {
            checks.push(Check { tag: "B", pass: true, witness: "time-homogeneous coefficients".into() });
            checks.push(Check { tag: "UE", pass: true, witness: "sigma0 = identity".into() });
        }
        Some(td) => {
            let (a_fn, s_fn) = td.functions(&sys, levy.dim())?;
            let mut sup_a = 0.0f64;
            let mut sup_s = 0.0f64;
            let mut ratio = f64::INFINITY;
            for &t in &td.check_times {
                sup_a = sup_a.max(a_fn(t).norm());
                let s = s_fn(t);
                sup_s = sup_s.max(s.norm());
                let eig = (&s * s.transpose()).symmetric_eigen().eigenvalues;
                let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = eig.iter().copied().fold(0.0, f64::max);
                ratio = ratio.min(if hi > 0.0 { lo / hi } else { 0.0 });
            }
            let bounded = sup_a.is_finite() && sup_s.is_finite();
            checks.push(Check {
                tag: "B",
                pass: bounded,
                witness: format!("sup |A(t)| {sup_a:.4}, sup |sigma0(t)| {sup_s:.4} on {} times", td.check_times.len()),
            });
            checks.push(Check {
                tag: "UE",
                pass: ratio > 1e-12,
                witness: format!("min ellipticity ratio {ratio:.4e}"),
            });
        }
    }
    Ok(ValidationReport { checks })
}
