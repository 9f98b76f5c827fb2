//! Executes run blocks and writes their artifacts and the manifest.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use levyou::harness::{
    config_hash, verify_density_tail, verify_gradient_decay, verify_holder_continuity, verify_schauder,
    waves_seminorm, ExponentReport, Manifest, ProbeConfig, RunRecord, Tolerance,
};
use levyou::ipde::{solve_elliptic, solve_parabolic, EllipticProblem, ParabolicProblem, SolverOptions, Source};
use levyou::kalman::{compute_decomposition, DEFAULT_RANK_TOL};
use levyou::semigroup::{density_fft, GridSpec, OuModel};
use levyou::testfn::TestFn;
use levyou::Error;

use crate::config::{ExperimentConfig, Format, ProbeSpec, RunBlock, RunKind, SchauderProblem};
use crate::CliError;

type Res<T> = std::result::Result<T, Error>;

pub struct RunOptions {
    pub out: PathBuf,
    pub workers: usize,
    pub seed: u64,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    model: &'a OuModel,
    grid: GridSpec,
    out: &'a Path,
}

/// Files written by one block, relative to the output directory.
struct Sink<'a> {
    ctx: &'a Ctx<'a>,
    files: Vec<String>,
}

impl Sink<'_> {
    fn json<T: Serialize + ?Sized>(&mut self, name: String, v: &T) -> Res<()> {
        if !self.ctx.cfg.output.formats.contains(&Format::Json) {
            return Ok(());
        }
        let s = serde_json::to_string_pretty(v).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(self.ctx.out.join(&name), s + "\n")?;
        self.files.push(name);
        Ok(())
    }

    fn csv(&mut self, name: String, header: &[String], rows: &[Vec<f64>]) -> Res<()> {
        if !self.ctx.cfg.output.formats.contains(&Format::Csv) {
            return Ok(());
        }
        let io = |e: csv::Error| Error::Io(e.to_string());
        let mut w = csv::Writer::from_path(self.ctx.out.join(&name)).map_err(io)?;
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.write_record(r.iter().map(|v| v.to_string())).map_err(io)?;
        }
        w.flush()?;
        self.files.push(name);
        Ok(())
    }
}

/// Runs every block (up to `workers` at a time) and writes `manifest.json`,
/// `summary.csv` and `summary.txt` under `opts.out`.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Manifest, CliError> {
    let model = cfg.ou_model()?;
    let grid = cfg.grid_spec()?;
    std::fs::create_dir_all(&opts.out).map_err(|e| CliError::Io(format!("{}: {e}", opts.out.display())))?;
    let ctx = Ctx { cfg, model: &model, grid, out: &opts.out };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    let results: Vec<(RunRecord, Vec<ExponentReport>)> = pool.install(|| {
        cfg.runs
            .par_iter()
            .enumerate()
            .map(|(i, block)| execute(&ctx, block, block.seed.unwrap_or(opts.seed.wrapping_add(i as u64))))
            .collect()
    });
    let mut manifest = Manifest::new(config_hash(&(cfg, opts.seed)));
    for (record, reports) in results {
        manifest.runs.push(record);
        manifest.reports.extend(reports);
    }
    manifest.write(&opts.out).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(manifest)
}

fn execute(ctx: &Ctx, block: &RunBlock, seed: u64) -> (RunRecord, Vec<ExponentReport>) {
    let mut sink = Sink { ctx, files: Vec::new() };
    let tol = block.tolerance.unwrap_or_default();
    let outcome = dispatch(ctx, block, seed, tol, &mut sink).and_then(|mut reports| {
        for r in &mut reports {
            if !r.claim_id.starts_with(&format!("{}/", block.id)) {
                r.claim_id = format!("{}/{}", block.id, r.claim_id);
            }
        }
        if !reports.is_empty() {
            sink.json(format!("{}.json", block.id), &reports)?;
        }
        Ok(reports)
    });
    let (error, reports) = match outcome {
        Ok(r) => (None, r),
        Err(e) => (Some(e.to_string()), Vec::new()),
    };
    let record = RunRecord {
        id: block.id.clone(),
        kind: block.kind.name().into(),
        ok: error.is_none(),
        error,
        artifacts: sink.files,
    };
    (record, reports)
}

fn probes_for(spec: &ProbeSpec, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..spec.count)
        .map(|_| (0..n).map(|_| spec.radius * (2.0 * rng.random::<f64>() - 1.0)).collect())
        .collect()
}

fn function(ctx: &Ctx, name: &str) -> Res<TestFn> {
    ctx.cfg.function(name, ctx.model.state_dim()).map_err(|e| Error::SchemaError(e.to_string()))
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn labels(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn dispatch(ctx: &Ctx, block: &RunBlock, seed: u64, tol: Tolerance, sink: &mut Sink) -> Res<Vec<ExponentReport>> {
    let model = ctx.model;
    let n = model.state_dim();
    let id = &block.id;
    let solver = SolverOptions { grid: ctx.grid.clone(), ..SolverOptions::default() };
    match &block.kind {
        RunKind::Decomposition => {
            let sys = ctx.cfg.system().map_err(|e| Error::SchemaError(e.to_string()))?;
            sink.json(format!("{id}_decomposition.json"), &compute_decomposition(&sys, DEFAULT_RANK_TOL)?)?;
            Ok(Vec::new())
        }
        RunKind::Symbol { frequencies, time } => {
            // With a time, the OU exponent over [0, t] on state frequencies;
            // otherwise the Levy symbol on noise frequencies.
            let dim = if time.is_some() { n } else { model.noise_dim() };
            let mut rows = Vec::new();
            for p in frequencies {
                if p.len() != dim {
                    return Err(Error::BadParam(format!("frequency {p:?} must have {dim} entries")));
                }
                let v = match time {
                    Some(t) => model.exponent(0.0, *t, p)?,
                    None => model.levy.symbol(p)?,
                };
                let mut row = p.clone();
                row.extend([v.re, v.im]);
                rows.push(row);
            }
            let mut header = names("p", dim);
            header.extend(labels(&["re", "im"]));
            sink.csv(format!("{id}.csv"), &header, &rows)?;
            Ok(Vec::new())
        }
        RunKind::Density { times } => {
            let mut rows = Vec::new();
            for (k, &t) in times.iter().enumerate() {
                let d = density_fft(model, t, &model.resolve_grid(0.0, t, &ctx.grid)?)?;
                if ctx.cfg.output.formats.contains(&Format::Json) {
                    let stem = format!("{id}_t{k}");
                    d.write(&ctx.out.join(&stem))?;
                    sink.files.extend([format!("{stem}.json"), format!("{stem}.bin")]);
                }
                rows.push(vec![t, d.mass(), d.mass_defect, d.min_value, d.negative_mass()]);
            }
            sink.csv(format!("{id}.csv"), &labels(&["t", "mass", "mass_defect", "min_value", "negative_mass"]), &rows)?;
            Ok(Vec::new())
        }
        RunKind::Elliptic { lambda, source, probes } => {
            let pts = probes_for(probes, n, seed);
            let prob = EllipticProblem { model, lambda: *lambda, g: function(ctx, source)? };
            let sol = solve_elliptic(&prob, &pts, &solver)?;
            // Residuals need the whole solution, which only wave data provides.
            let res = match sol.waves {
                Some(_) => sol.residuals(&prob, &pts)?,
                None => vec![f64::NAN; pts.len()],
            };
            let rows: Vec<Vec<f64>> = pts
                .iter()
                .zip(sol.values.iter().zip(&res))
                .map(|(x, (u, r))| x.iter().copied().chain([*u, *r]).collect())
                .collect();
            let mut header = names("x", n);
            header.extend(labels(&["u", "residual"]));
            sink.csv(format!("{id}.csv"), &header, &rows)?;
            Ok(Vec::new())
        }
        RunKind::Parabolic { horizon, times, initial, source, probes } => {
            let pts = probes_for(probes, n, seed);
            let prob = ParabolicProblem {
                model,
                horizon: *horizon,
                u0: function(ctx, initial)?,
                f: Source::steady(function(ctx, source)?),
            };
            let sol = solve_parabolic(&prob, times, &pts, &solver)?;
            let mut rows = Vec::new();
            for sl in &sol.slices {
                for (x, u) in pts.iter().zip(&sl.values) {
                    rows.push(std::iter::once(sl.t).chain(x.iter().copied()).chain([*u]).collect());
                }
            }
            let mut header = labels(&["t"]);
            header.extend(names("x", n));
            header.push("u".into());
            sink.csv(format!("{id}.csv"), &header, &rows)?;
            Ok(Vec::new())
        }
        RunKind::VerifyGradientDecay { function: f, times, blocks, probe_radius } => {
            let phi = function(ctx, f)?;
            let mut probes = ProbeConfig::for_input(model, &phi, *probe_radius, seed);
            probes.grid = ctx.grid.clone();
            let nb = model.dec.n_blocks;
            let chosen: Vec<usize> = if blocks.is_empty() { (1..=nb).collect() } else { blocks.clone() };
            if let Some(b) = chosen.iter().find(|&&b| b == 0 || b > nb) {
                return Err(Error::BadParam(format!("block {b} out of range 1..={nb}")));
            }
            let zero_based: Vec<usize> = chosen.iter().map(|b| b - 1).collect();
            verify_gradient_decay(model, &phi, &zero_based, &times.values(), &probes, tol)
        }
        RunKind::VerifyHolderContinuity { function: f, beta, gamma, times, probe_radius } => {
            let phi = function(ctx, f)?;
            let probes = ProbeConfig::for_input(model, &phi, *probe_radius, seed);
            Ok(vec![verify_holder_continuity(model, *beta, *gamma, &phi, &times.values(), &probes, tol)?])
        }
        RunKind::VerifySchauder { problem, source, beta, lambda, initial, times, probe_radius } => {
            let g = function(ctx, source)?;
            let waves = g.waves().ok_or_else(|| Error::BadParam("Schauder checks need a plane-wave source".into()))?;
            let probes = ProbeConfig::for_input(model, &g, *probe_radius, seed);
            let g_norm = waves_seminorm(model, waves, *beta, &probes)?;
            let steer: Vec<Vec<f64>> = probes.points.iter().take(16).cloned().collect();
            match problem {
                SchauderProblem::Elliptic => {
                    let prob = EllipticProblem { model, lambda: *lambda, g: g.clone() };
                    let u = solve_elliptic(&prob, &steer, &solver)?.waves.expect("wave source");
                    verify_schauder(model, id, &|y: &[f64]| u.eval(y), *beta, g_norm, &probes, tol)
                }
                SchauderProblem::Parabolic => {
                    if times.is_empty() {
                        return Err(Error::BadParam("parabolic Schauder checks need `times`".into()));
                    }
                    let u0 = function(ctx, initial.as_deref().unwrap_or_default())?;
                    let horizon = times.iter().copied().fold(0.0, f64::max);
                    let prob = ParabolicProblem { model, horizon, u0, f: Source::steady(g.clone()) };
                    let sol = solve_parabolic(&prob, times, &steer, &solver)?;
                    let mut out = Vec::new();
                    for sl in &sol.slices {
                        let u = sl
                            .waves
                            .as_ref()
                            .ok_or_else(|| Error::BadParam("parabolic Schauder checks need a plane-wave initial value".into()))?;
                        let claim = format!("{id}/t{}", sl.t);
                        out.extend(verify_schauder(model, &claim, &|y: &[f64]| u.eval(y), *beta, g_norm, &probes, tol)?);
                    }
                    Ok(out)
                }
            }
        }
        RunKind::VerifyDensityTail { times } => verify_density_tail(model, times, tol),
    }
}
