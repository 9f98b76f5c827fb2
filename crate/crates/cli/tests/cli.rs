use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn levyou(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levyou")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const KOLMOGOROV: &str = r#"
[model]
a = [[0.0, 0.0], [1.0, 0.0]]
b = [[1.0], [0.0]]

[model.levy]
family = { name = "truncated" }
alpha = 1.5
measure = "symmetric1d"

[grid]
points = 64

[functions.smooth]
name = "cosine_pack"
waves = [[1.0, 0.0, 1.0, 0.5], [0.3, 1.2, -0.4, 2.0]]

[functions.bump]
name = "indicator_smoothed"
center = [0.0, 0.0]
radius = 0.5
width = 0.3
"#;

const RUNS: &str = r#"
[[run]]
id = "kalman"
kind = "decomposition"

[[run]]
id = "symbol"
kind = "symbol"
frequencies = [[0.5], [2.0]]

[[run]]
id = "ou_exponent"
kind = "symbol"
frequencies = [[1.0, 1.0]]
time = 0.5

[[run]]
id = "density"
kind = "density"
times = [0.5]

[[run]]
id = "resolvent"
kind = "elliptic"
lambda = 1.0
source = "smooth"
probes = { count = 4 }

[[run]]
id = "heat"
kind = "parabolic"
horizon = 0.5
times = [0.0, 0.5]
initial = "smooth"
source = "smooth"
probes = { count = 3 }
"#;

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn validate_prints_witnesses_for_kolmogorov() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "k.toml", KOLMOGOROV);
    let o = levyou(&["validate", &cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    for tag in ["[K] pass", "[ND] pass", "[B] pass", "[UE] pass"] {
        assert!(out.contains(tag), "{out}");
    }
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let zero_column = KOLMOGOROV
        .replace("b = [[1.0], [0.0]]", "b = [[1.0, 0.0], [0.0, 0.0]]")
        .replace("measure = \"symmetric1d\"", "measure = { equiangular = 4 }");
    let lamperti = KOLMOGOROV.replace("family = { name = \"truncated\" }", "family = { name = \"lamperti\" }").replace(
        "measure = \"symmetric1d\"",
        "measure = { atoms = [{ theta = [1.0], weight = 0.5, f = 2.5 }, { theta = [-1.0], weight = 0.5, f = 0.0 }] }",
    );
    let unknown_kind = format!("{KOLMOGOROV}\n[[run]]\nid = \"x\"\nkind = \"bogus\"\n");
    let cases = [("zero_column", zero_column), ("lamperti", lamperti), ("unknown_kind", unknown_kind)];
    for (name, text) in cases {
        let cfg = write(dir.path(), &format!("{name}.toml"), &text);
        for verb in ["validate", "run"] {
            let out_dir = dir.path().join(format!("{name}_{verb}"));
            let args: Vec<&str> = match verb {
                "run" => vec!["run", &cfg, "--out", out_dir.to_str().unwrap()],
                _ => vec!["validate", &cfg],
            };
            let o = levyou(&args);
            assert_eq!(code(&o), 2, "{name} {verb}: {}", String::from_utf8_lossy(&o.stderr));
        }
    }
}

#[test]
fn empty_run_list_writes_an_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "k.toml", KOLMOGOROV);
    let out = dir.path().join("out");
    let o = levyou(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["runs"].as_array().unwrap().len(), 0);
    assert_eq!(m["reports"].as_array().unwrap().len(), 0);
}

#[test]
fn artifacts_are_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "k.toml", &format!("{KOLMOGOROV}{RUNS}"));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let oa = levyou(&["run", &cfg, "--out", a.to_str().unwrap(), "--workers", "1", "--seed", "7"]);
    let ob = levyou(&["run", &cfg, "--out", b.to_str().unwrap(), "--workers", "3", "--seed", "7"]);
    assert_eq!(code(&oa), 0, "{}", String::from_utf8_lossy(&oa.stdout));
    assert_eq!(code(&ob), 0);
    let (fa, fb) = (files(&a), files(&b));
    assert!(fa.contains_key("kalman_decomposition.json") && fa.contains_key("density_t0.bin"), "{:?}", fa.keys());
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        assert!(bytes == &fb[name], "{name} differs");
    }
    let resolvent = String::from_utf8(fa["resolvent.csv"].clone()).unwrap();
    assert!(resolvent.starts_with("x0,x1,u,residual\n"), "{resolvent}");
    for line in resolvent.lines().skip(1) {
        let r: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(r.abs() < 1e-4, "{line}");
    }
}

#[test]
fn run_errors_exit_with_three_and_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    // Wrong frequency dimension: config is valid, the run itself fails.
    let text = format!("{KOLMOGOROV}\n[[run]]\nid = \"bad\"\nkind = \"symbol\"\nfrequencies = [[1.0, 2.0]]\n");
    let cfg = write(dir.path(), "k.toml", &text);
    let out = dir.path().join("out");
    let o = levyou(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["runs"][0]["ok"], false);
    assert!(m["runs"][0]["error"].as_str().unwrap().contains("frequency"));
}

#[test]
fn verification_runs_report_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{KOLMOGOROV}
[functions.lacunary]
name = \"weierstrass\"
components = [{{ axis = 0, beta = 0.0 }}, {{ axis = 1, beta = 0.0 }}]
terms = 24
length = 16.0

[[run]]
id = \"gradient\"
kind = \"verify_gradient_decay\"
function = \"lacunary\"
blocks = [2]
times = {{ min = 3e-3, max = 0.25, count = 8 }}

[[run]]
id = \"strict\"
kind = \"verify_gradient_decay\"
function = \"lacunary\"
blocks = [1]
times = {{ min = 3e-3, max = 0.25, count = 8 }}
tolerance = {{ exponent = 1e-6, residual_cap = 0.05 }}
"
    );
    let cfg = write(dir.path(), "k.toml", &text);
    let out = dir.path().join("out");
    let o = levyou(&["run", &cfg, "--out", out.to_str().unwrap()]);
    let stdout = String::from_utf8(o.stdout.clone()).unwrap();
    // The strict tolerance cannot be met, so the run exits with 1.
    assert_eq!(code(&o), 1, "{stdout}");
    assert!(stdout.contains("PASS gradient/gradient_decay/block2"), "{stdout}");
    assert!(stdout.contains("FAIL strict/gradient_decay/block1"), "{stdout}");
    assert!(out.join("gradient.json").exists() && out.join("summary.csv").exists());

    let manifest = out.join("manifest.json");
    let r = levyou(&["report", manifest.to_str().unwrap()]);
    let report = String::from_utf8(r.stdout.clone()).unwrap();
    assert_eq!(code(&r), 1, "{report}");
    assert!(report.contains("PASS gradient/gradient_decay/block2"), "{report}");

    let garbage = write(dir.path(), "bad.json", "{ not json");
    assert_eq!(code(&levyou(&["report", &garbage])), 2);
}
