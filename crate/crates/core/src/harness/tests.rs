use nalgebra::{DMatrix, DVector};

use super::*;
use crate::kalman::SystemPair;
use crate::levy::{Family, LevyModel};
use crate::testfn::{Phase, TestFnSpec, WeierstrassComponent};

fn scalar(family: Family, alpha: f64) -> OuModel {
    let sys = SystemPair::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
    OuModel::new(sys, LevyModel::symmetric_1d(family, alpha, 1.0).unwrap()).unwrap()
}

fn kolmogorov(family: Family, alpha: f64) -> OuModel {
    OuModel::new(SystemPair::kolmogorov(), LevyModel::symmetric_1d(family, alpha, 1.0).unwrap()).unwrap()
}

fn weierstrass(components: &[(usize, f64)], terms: usize, length: f64, dim: usize) -> TestFn {
    TestFnSpec::Weierstrass {
        components: components.iter().map(|&(axis, beta)| WeierstrassComponent { axis, beta }).collect(),
        base: 2.0,
        terms,
        length,
        phase: Phase::Sine,
        normalize: true,
    }
    .build(dim)
    .unwrap()
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    log_offsets(lo, hi, n)
}

#[test]
fn pass_rules() {
    let tol = Tolerance::default();
    let r = |rule, p, f, res| ExponentReport::new("x", p, f, res, (0.0, 1.0), rule, tol, String::new()).pass;
    assert!(r(Rule::Match, -1.0, -1.08, 0.01));
    assert!(!r(Rule::Match, -1.0, -1.12, 0.01));
    assert!(!r(Rule::Match, -1.0, -1.0, 0.06));
    assert!(r(Rule::AtLeast, 0.76, 0.9, 0.0));
    assert!(!r(Rule::AtLeast, 0.76, 0.6, 0.0));
    assert!(r(Rule::AtMost, 0.0, 0.05, 0.0));
    assert!(!r(Rule::Match, -1.0, f64::NAN, 0.0));
    assert!(r(Rule::Inapplicable, f64::NAN, f64::NAN, 0.0));
}

#[test]
fn hashes_are_stable_and_sensitive() {
    let m = scalar(Family::Stable, 1.5);
    let phi = weierstrass(&[(0, 0.0)], 8, 1.0, 1);
    let a = ProbeConfig::for_input(&m, &phi, 1.0, 3);
    let b = ProbeConfig::for_input(&m, &phi, 1.0, 3);
    let c = ProbeConfig::for_input(&m, &phi, 1.0, 4);
    assert_eq!(a.hash(), b.hash());
    assert_ne!(a.hash(), c.hash());
    assert_eq!(a.hash().len(), 64);
    assert_eq!(a.points.len(), 64);
}

#[test]
fn resolvable_time_follows_the_finest_mode() {
    let m = kolmogorov(Family::Stable, 1.5);
    let phi = weierstrass(&[(0, 0.0), (1, 0.0)], 11, 1.0, 2);
    // finest mode 1024 on both axes; block 2 dominates.
    let want = (8.0f64 / 1024.0).powf(1.5 / 2.5);
    assert!((t_min_resolvable(&m, &phi) - want).abs() < 1e-14);
}

#[test]
fn scalar_stable_gradient_decay() {
    // sup |D P_t phi| for a flat-spectrum lacunary input scales as t^{-1/alpha}.
    let m = scalar(Family::Stable, 1.5);
    let phi = weierstrass(&[(0, 0.0)], 24, 16.0, 1);
    let probes = ProbeConfig::for_input(&m, &phi, 0.5, 1);
    let ts = log_grid(1e-3, 0.25, 10);
    let reps = verify_gradient_decay(&m, &phi, &[0], &ts, &probes, Tolerance::default()).unwrap();
    assert_eq!(reps.len(), 1);
    let r = &reps[0];
    assert!((r.predicted + 1.0 / 1.5).abs() < 1e-15);
    assert!(r.pass, "{r:?}");
    assert!((r.fitted - r.predicted).abs() < 0.03, "{r:?}");
}

#[test]
fn scalar_stable_holder_gain() {
    let m = scalar(Family::Stable, 1.5);
    let phi = weierstrass(&[(0, 0.4)], 24, 16.0, 1);
    let probes = ProbeConfig::for_input(&m, &phi, 4.0, 1);
    let ts = log_grid(1e-3, 0.25, 8);
    let r = verify_holder_continuity(&m, 0.4, 1.2, &phi, &ts, &probes, Tolerance::default()).unwrap();
    assert!(r.pass, "{r:?}");
    assert!((r.fitted - r.predicted).abs() < 0.05, "{r:?}");
}

#[test]
fn stable_density_tail_and_collapse() {
    let m = scalar(Family::Stable, 1.5);
    let reps = verify_density_tail(&m, &[0.1, 0.2, 0.4], Tolerance::default()).unwrap();
    // 0.4 lies outside the tail-fit window but joins the collapse.
    assert_eq!(reps.len(), 3);
    for r in &reps {
        assert!(r.pass, "{r:?}");
    }
    assert!(reps[2].fitted < 1e-3, "{:?}", reps[2]);
}

#[test]
fn gaussian_has_no_power_law_tail() {
    let sys = SystemPair::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
    let m = OuModel::new(sys, LevyModel::gaussian(DMatrix::identity(1, 1), DVector::zeros(1)).unwrap()).unwrap();
    let reps = verify_density_tail(&m, &[0.1, 0.2], Tolerance::default()).unwrap();
    assert_eq!(reps.len(), 1);
    assert_eq!(reps[0].note.as_deref(), Some("no power law"));
    assert!(reps[0].pass);
}

#[test]
fn smooth_solution_passes_schauder_floor() {
    let m = kolmogorov(Family::Truncated, 1.5);
    let mut w = PlaneWaveSum::new(2);
    w.push(num_complex::Complex64::new(0.3, 0.0), &[1.0, 2.0]);
    let u = |x: &[f64]| w.eval(x);
    let phi = TestFn::Waves(w.clone());
    let probes = ProbeConfig::for_input(&m, &phi, 1.0, 0);
    let reps = verify_schauder(&m, "smooth", &u, 0.4, 1.0, &probes, Tolerance::default()).unwrap();
    assert_eq!(reps.len(), 2);
    assert!(reps.iter().all(|r| r.rule == Rule::AtLeast && r.fitted > 2.5), "{reps:?}");
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut man = Manifest::new("abc".into());
    man.reports.push(
        ExponentReport::new("c", -1.0, -1.02, 0.01, (0.01, 0.25), Rule::Match, Tolerance::default(), "h".into())
            .with_extra("k", 2.0),
    );
    let path = man.write(dir.path()).unwrap();
    assert_eq!(Manifest::read(&path).unwrap(), man);
    let txt = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(txt.starts_with("PASS c "));
    let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(man.all_pass());
}


#[test]
fn non_finite_values_round_trip_as_nan() {
    let dir = tempfile::tempdir().unwrap();
    let mut man = Manifest::new("nan".into());
    man.reports.push(
        ExponentReport::new("tail", f64::NAN, f64::NAN, 0.0, (f64::NAN, 1.0), Rule::Inapplicable, Tolerance::default(), "h".into())
            .with_extra("ratio", f64::INFINITY),
    );
    let back = Manifest::read(&man.write(dir.path()).unwrap()).unwrap();
    let r = &back.reports[0];
    assert!(r.predicted.is_nan() && r.fitted.is_nan() && r.range.0.is_nan());
    assert_eq!(r.range.1, 1.0);
    assert!(r.extras["ratio"].is_nan());
    assert_eq!(r.pass, man.reports[0].pass);
}
