//! Power-law checks on computed semigroups and solutions, with a JSON manifest
//! and flat summaries of the results.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fit::fit_power_law;
use crate::geometry::{estimate_holder, log_offsets, Anisotropy, Field};
use crate::semigroup::{derivative_estimate, density_fft, FourierGrid, GridSpec, OuModel};
use crate::testfn::{PlaneWaveSum, TestFn};

/// Largest time included in any fit.
pub const T_MAX_FIT: f64 = 0.25;
const RESOLVE_FACTOR: f64 = 8.0;
/// Base points used by the third-difference scans.
const HOLDER_POINTS: usize = 32;

/// How a fitted exponent is compared with its prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// |fitted - predicted| <= tol.
    Match,
    /// fitted >= predicted - tol.
    AtLeast,
    /// fitted <= tol (predicted is ignored).
    AtMost,
    /// No exponent applies; never fails.
    Inapplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    #[serde(deserialize_with = "lenient::num")]
    pub exponent: f64,
    #[serde(deserialize_with = "lenient::num")]
    pub residual_cap: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { exponent: 0.1, residual_cap: 0.05 }
    }
}

/// JSON writes non-finite numbers as null; read them back as NaN.
mod lenient {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer};

    pub fn num<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }

    pub fn pair<'de, D: Deserializer<'de>>(d: D) -> Result<(f64, f64), D::Error> {
        let (a, b) = <(Option<f64>, Option<f64>)>::deserialize(d)?;
        Ok((a.unwrap_or(f64::NAN), b.unwrap_or(f64::NAN)))
    }

    pub fn map<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, f64>, D::Error> {
        let m = BTreeMap::<String, Option<f64>>::deserialize(d)?;
        Ok(m.into_iter().map(|(k, v)| (k, v.unwrap_or(f64::NAN))).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    pub claim_id: String,
    #[serde(deserialize_with = "lenient::num")]
    pub predicted: f64,
    #[serde(deserialize_with = "lenient::num")]
    pub fitted: f64,
    #[serde(deserialize_with = "lenient::num")]
    pub fit_residual: f64,
    /// Time (or scale) range the fit used.
    #[serde(deserialize_with = "lenient::pair")]
    pub range: (f64, f64),
    pub rule: Rule,
    pub tolerance: Tolerance,
    pub pass: bool,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty", deserialize_with = "lenient::map")]
    pub extras: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ExponentReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        claim_id: impl Into<String>,
        predicted: f64,
        fitted: f64,
        fit_residual: f64,
        range: (f64, f64),
        rule: Rule,
        tolerance: Tolerance,
        config_hash: String,
    ) -> Self {
        let within = match rule {
            Rule::Match => (fitted - predicted).abs() <= tolerance.exponent,
            Rule::AtLeast => fitted >= predicted - tolerance.exponent,
            Rule::AtMost => fitted <= tolerance.exponent,
            Rule::Inapplicable => true,
        };
        let pass = rule == Rule::Inapplicable || (within && fitted.is_finite() && fit_residual <= tolerance.residual_cap);
        Self {
            claim_id: claim_id.into(),
            predicted,
            fitted,
            fit_residual,
            range,
            rule,
            tolerance,
            pass,
            config_hash,
            extras: BTreeMap::new(),
            note: None,
        }
    }

    pub fn with_extra(mut self, key: &str, v: f64) -> Self {
        self.extras.insert(key.to_string(), v);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// Hex SHA-256 of the JSON form of `value`.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable config");
    hex::encode(Sha256::digest(&bytes))
}

/// Probe points and difference offsets shared by the checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub points: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
    /// Smallest time whose smoothing scale the input resolves.
    pub t_min_resolvable: f64,
    pub grid: GridSpec,
}

impl ProbeConfig {
    /// 64 points (the origin plus seeded points in a box of half-width `radius`)
    /// and 32 offsets spanning the scales `phi` resolves. Holder scans need
    /// `radius` comparable to the coarsest scale of interest.
    pub fn for_input(model: &OuModel, phi: &TestFn, radius: f64, seed: u64) -> Self {
        let n = model.state_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = vec![vec![0.0; n]];
        while points.len() < 64 {
            points.push((0..n).map(|_| radius * (2.0 * rng.random::<f64>() - 1.0)).collect());
        }
        let (fine, coarse) = scale_bounds(phi);
        let hi = coarse / RESOLVE_FACTOR;
        let lo = (RESOLVE_FACTOR * fine).min(hi * 1e-2);
        let offsets = log_offsets(lo, hi, 32);
        Self { points, offsets, t_min_resolvable: t_min_resolvable(model, phi), grid: GridSpec::default() }
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// (finest, coarsest) length scale carried by `phi`.
fn scale_bounds(phi: &TestFn) -> (f64, f64) {
    match phi.waves() {
        Some(w) if !w.is_empty() => {
            let norms: Vec<f64> = w.terms().map(|(_, f)| f.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
            let hi = norms.iter().copied().fold(0.0, f64::max);
            let lo = norms.iter().copied().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
            if hi > 0.0 {
                (1.0 / hi, 1.0 / lo)
            } else {
                (1e-3, 1.0)
            }
        }
        _ => {
            let l = phi.length_scale();
            (l * 1e-3, l * 10.0)
        }
    }
}

/// Smallest t at which every block's smoothing scale spans several
/// wavelengths of the finest mode of `phi` along that block.
pub fn t_min_resolvable(model: &OuModel, phi: &TestFn) -> f64 {
    let Some(w) = phi.waves() else { return 0.0 };
    let n = model.state_dim();
    let a = model.alpha();
    let mut t_min = 0.0f64;
    for i in 0..n {
        let top = w.terms().map(|(_, f)| f[i].abs()).fold(0.0, f64::max);
        if top > 0.0 {
            let h = model.axis_block(i) as f64;
            t_min = t_min.max((RESOLVE_FACTOR / top).powf(a / (1.0 + a * h)));
        }
    }
    t_min
}

fn fit_window(t_grid: &[f64], t_min: f64) -> Vec<f64> {
    t_grid.iter().copied().filter(|&t| t >= t_min && t <= T_MAX_FIT * (1.0 + 1e-9) && t > 0.0).collect()
}

fn range_of(ts: &[f64]) -> (f64, f64) {
    (ts.iter().copied().fold(f64::INFINITY, f64::min), ts.iter().copied().fold(0.0, f64::max))
}

fn fit_or_fail(
    claim: String,
    predicted: f64,
    samples: &[(f64, f64)],
    rule: Rule,
    tol: Tolerance,
    hash: &str,
) -> ExponentReport {
    let range = range_of(&samples.iter().map(|s| s.0).collect::<Vec<_>>());
    match fit_power_law(samples) {
        Ok(f) => ExponentReport::new(claim, predicted, f.slope, f.residual, range, rule, tol, hash.to_string()),
        Err(e) => ExponentReport::new(claim, predicted, f64::NAN, f64::NAN, range, rule, tol, hash.to_string())
            .with_note(e.to_string()),
    }
}

/// First coordinate axis lying in each block.
fn block_axes(model: &OuModel) -> Vec<usize> {
    let blocks = model.dec.projections.len();
    (0..blocks)
        .map(|h| (0..model.state_dim()).find(|&i| model.axis_block(i) == h).unwrap_or(0))
        .collect()
}

/// sup over probes of |d/dx_i P_t phi|.
fn sup_derivative(model: &OuModel, t: f64, phi: &TestFn, axis: usize, probes: &ProbeConfig) -> Result<f64> {
    if let Some(w) = phi.waves() {
        let ev = model.evolve(0.0, t, w)?;
        return Ok(probes.points.iter().map(|x| ev.gradient(x)[axis].abs()).fold(0.0, f64::max));
    }
    let mut m = 0.0f64;
    for x in &probes.points {
        m = m.max(derivative_estimate(model, t, phi, x, axis, 1, &probes.grid)?.abs());
    }
    Ok(m)
}

/// Slope of sup |D_h P_t phi| in t for each block, against -(1 + alpha (h-1))/alpha.
pub fn verify_gradient_decay(
    model: &OuModel,
    phi: &TestFn,
    blocks: &[usize],
    t_grid: &[f64],
    probes: &ProbeConfig,
    tol: Tolerance,
) -> Result<Vec<ExponentReport>> {
    let a = model.alpha();
    let axes = block_axes(model);
    let ts = fit_window(t_grid, probes.t_min_resolvable);
    let hash = probes.hash();
    let mut out = Vec::new();
    for &h in blocks {
        let axis = *axes
            .get(h)
            .ok_or_else(|| Error::BadParam(format!("block {} out of range", h + 1)))?;
        let samples = ts
            .iter()
            .map(|&t| Ok((t, sup_derivative(model, t, phi, axis, probes)?)))
            .collect::<Result<Vec<_>>>()?;
        let predicted = -(1.0 + a * h as f64) / a;
        out.push(fit_or_fail(format!("gradient_decay/block{}", h + 1), predicted, &samples, Rule::Match, tol, &hash));
    }
    Ok(out)
}

fn anisotropy(model: &OuModel) -> Result<Anisotropy> {
    Anisotropy::new(model.dec.clone(), model.alpha())
}

/// Anisotropic C^gamma seminorm: max over blocks of the third-difference
/// quotient at exponent gamma / (1 + alpha h).
pub fn anisotropic_seminorm(model: &OuModel, u: Field, gamma: f64, probes: &ProbeConfig) -> Result<f64> {
    let an = anisotropy(model)?;
    let mut m = 0.0f64;
    for h in 0..an.n_blocks() {
        let est = estimate_holder(u, &an, h, &probes.offsets, &probes.points, gamma * an.exponent(h))?;
        m = m.max(est.seminorm);
    }
    Ok(m)
}

fn probe_subset(probes: &ProbeConfig, count: usize) -> ProbeConfig {
    let mut p = probes.clone();
    p.points.truncate(count);
    p
}

/// Slope of ||P_t phi||_{C^gamma} in t against (beta - gamma)/alpha.
pub fn verify_holder_continuity(
    model: &OuModel,
    beta: f64,
    gamma: f64,
    phi: &TestFn,
    t_grid: &[f64],
    probes: &ProbeConfig,
    tol: Tolerance,
) -> Result<ExponentReport> {
    let w = phi
        .waves()
        .ok_or_else(|| Error::BadParam("Holder checks need a plane-wave input".into()))?;
    let ts = fit_window(t_grid, probes.t_min_resolvable);
    let sub = probe_subset(probes, HOLDER_POINTS);
    let samples = ts
        .iter()
        .map(|&t| {
            let ev = model.evolve(0.0, t, w)?;
            let f = |x: &[f64]| ev.eval(x);
            Ok((t, anisotropic_seminorm(model, &f, gamma, &sub)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let predicted = (beta - gamma) / model.alpha();
    Ok(fit_or_fail(format!("holder_gain/gamma{gamma}"), predicted, &samples, Rule::Match, tol, &probes.hash())
        .with_extra("beta", beta)
        .with_extra("gamma", gamma))
}

/// Block-wise Holder exponents of a solution against (alpha + beta)/(1 + alpha(h-1)).
///
/// `source_seminorm` is the C^beta seminorm of the data; each report carries
/// the ratio of the solution seminorm to it.
pub fn verify_schauder(
    model: &OuModel,
    claim: &str,
    u: Field,
    beta: f64,
    source_seminorm: f64,
    probes: &ProbeConfig,
    tol: Tolerance,
) -> Result<Vec<ExponentReport>> {
    let an = anisotropy(model)?;
    let a = model.alpha();
    let sub = probe_subset(probes, HOLDER_POINTS);
    let hash = probes.hash();
    let mut out = Vec::new();
    for h in 0..an.n_blocks() {
        let predicted = (a + beta) * an.exponent(h);
        let est = estimate_holder(u, &an, h, &sub.offsets, &sub.points, predicted.min(3.0))?;
        let range = (sub.offsets[0], *sub.offsets.last().unwrap());
        let fitted = if est.trivial { 3.0 } else { est.exponent_fit };
        let ratio = if source_seminorm > 0.0 { est.seminorm / source_seminorm } else { f64::NAN };
        out.push(
            ExponentReport::new(
                format!("{claim}/block{}", h + 1),
                predicted,
                fitted,
                est.fit_residual,
                range,
                Rule::AtLeast,
                tol,
                hash.clone(),
            )
            .with_extra("seminorm", est.seminorm)
            .with_extra("schauder_ratio", ratio),
        );
    }
    Ok(out)
}

fn axis0_marginal(model: &OuModel, t: f64, width: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = model.state_dim();
    let m = match n {
        1 => 8192,
        2 => 2048,
        _ => 128,
    };
    // Only axis 0 needs the wide box: periodising the other axes leaves the
    // axis-0 marginal unchanged as long as they are resolved.
    let auto = crate::semigroup::auto_grid(model, t, m)?;
    let mut hw = auto.half_width.clone();
    let mut center = auto.center.clone();
    hw[0] = width * model.intrinsic_scale(model.axis_block(0), t);
    center[0] = 0.0;
    let grid = FourierGrid::new(m, hw, Some(center))?;
    Ok(density_fft(model, t, &grid)?.marginal(0))
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let h = xs[1] - xs[0];
    let u = (x - xs[0]) / h;
    let j = u.floor() as isize;
    if j < 0 || j as usize + 1 >= xs.len() {
        return 0.0;
    }
    let f = u - j as f64;
    ys[j as usize] * (1.0 - f) + ys[j as usize + 1] * f
}

/// Tail slope of the axis-0 marginal density (against -(1+alpha)) at each t,
/// and the collapse of the rescaled marginals t^{1/alpha} p(t, t^{1/alpha} u).
/// Tail fits use t <= 0.25; the collapse uses every t.
pub fn verify_density_tail(model: &OuModel, t_grid: &[f64], tol: Tolerance) -> Result<Vec<ExponentReport>> {
    let a = model.alpha();
    let heavy = model.levy.has_jumps()
        && (0..model.levy.mu.atoms.len()).all(|i| model.levy.profile(i).map(|p| p.support_end().is_infinite()).unwrap_or(false));
    let ts: Vec<f64> = t_grid.iter().copied().filter(|&t| t > 0.0).collect();
    let hash = config_hash(&(model.levy.content_hash(), &ts, "density_tail"));
    let mut out = Vec::new();
    if !heavy {
        out.push(
            ExponentReport::new("density_tail", f64::NAN, f64::NAN, 0.0, range_of(&ts), Rule::Inapplicable, tol, hash)
                .with_note("no power law"),
        );
        return Ok(out);
    }
    // Tail window in units of the block-1 scale; the box is wide enough that
    // periodic images stay below a percent there.
    let (lo, hi, width) = if model.state_dim() == 1 { (20.0, 120.0, 1000.0) } else { (15.0, 60.0, 300.0) };
    let mut curves = Vec::new();
    for &t in &ts {
        let (xs, ps) = axis0_marginal(model, t, width)?;
        let s = model.intrinsic_scale(model.axis_block(0), t);
        if t <= T_MAX_FIT * (1.0 + 1e-9) {
            let samples: Vec<(f64, f64)> = log_offsets(lo, hi, 16)
                .into_iter()
                .map(|u| (u, 0.5 * (interp(&xs, &ps, u * s) + interp(&xs, &ps, -u * s))))
                .collect();
            out.push(fit_or_fail(format!("density_tail/t{t}"), -(1.0 + a), &samples, Rule::Match, tol, &hash));
        }
        curves.push((s, xs, ps));
    }
    if curves.len() >= 2 {
        let us: Vec<f64> = (0..=200).map(|k| -5.0 + 0.05 * k as f64).collect();
        let scaled = |c: &(f64, Vec<f64>, Vec<f64>)| -> Vec<f64> { us.iter().map(|u| c.0 * interp(&c.1, &c.2, u * c.0)).collect() };
        let reference = scaled(&curves[0]);
        let peak = reference.iter().copied().fold(0.0, f64::max);
        let dev = curves[1..]
            .iter()
            .map(|c| scaled(c).iter().zip(&reference).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
            / peak;
        let collapse_tol = Tolerance { exponent: 0.02, residual_cap: 1.0 };
        out.push(
            ExponentReport::new("self_similarity", 0.0, dev, 0.0, range_of(&ts), Rule::AtMost, collapse_tol, hash)
                .with_note("fitted is the max deviation of rescaled marginals relative to the peak"),
        );
    }
    Ok(out)
}

/// Outcome of one configured run block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub kind: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Files written by the run, relative to the manifest.
    #[serde(default)]
    pub artifacts: Vec<String>,
}

/// Written record of a verification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    #[serde(default)]
    pub runs: Vec<RunRecord>,
    pub reports: Vec<ExponentReport>,
}

impl Manifest {
    pub fn new(config_hash: String) -> Self {
        Self { config_hash, runs: Vec::new(), reports: Vec::new() }
    }

    pub fn all_pass(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }

    pub fn all_runs_ok(&self) -> bool {
        self.runs.iter().all(|r| r.ok)
    }

    pub fn summary_lines(&self) -> Vec<String> {
        let runs = self.runs.iter().map(|r| match &r.error {
            None => format!("RUN  {} ({}) ok, {} artifacts", r.id, r.kind, r.artifacts.len()),
            Some(e) => format!("RUN  {} ({}) error: {e}", r.id, r.kind),
        });
        let reports = self
            .reports
            .iter()
            .map(|r| {
                format!(
                    "{} {} predicted={:.4} fitted={:.4} residual={:.4} range=[{:.3e}, {:.3e}]{}",
                    if r.pass { "PASS" } else { "FAIL" },
                    r.claim_id,
                    r.predicted,
                    r.fitted,
                    r.fit_residual,
                    r.range.0,
                    r.range.1,
                    r.note.as_ref().map(|n| format!(" ({n})")).unwrap_or_default()
                )
            });
        runs.chain(reports).collect()
    }

    /// Writes manifest.json, summary.csv and summary.txt into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(&path, json + "\n")?;
        let mut csv = String::from("claim_id,predicted,fitted,fit_residual,range_lo,range_hi,pass,config_hash\n");
        for r in &self.reports {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.claim_id, r.predicted, r.fitted, r.fit_residual, r.range.0, r.range.1, r.pass, r.config_hash
            ));
        }
        std::fs::write(dir.join("summary.csv"), csv)?;
        let mut txt = self.summary_lines().join("\n");
        txt.push('\n');
        std::fs::write(dir.join("summary.txt"), txt)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        serde_json::from_str(&s).map_err(|e| Error::SchemaError(format!("{}: {e}", path.display())))
    }
}

/// Waves-only helper: ||phi||_{C^beta} over the probe set.
pub fn waves_seminorm(model: &OuModel, w: &PlaneWaveSum, beta: f64, probes: &ProbeConfig) -> Result<f64> {
    let f = |x: &[f64]| w.eval(x);
    anisotropic_seminorm(model, &f, beta, &probe_subset(probes, HOLDER_POINTS))
}

#[cfg(test)]
mod tests;
