use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qclab"))
        .args(args)
        .env_remove("QCLAB_OUT")
        .output()
        .expect("spawn qclab")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn meta_value(dir: &Path, key: &str) -> f64 {
    let text = fs::read_to_string(dir.join("map.meta")).unwrap();
    text.lines()
        .find_map(|l| {
            let (k, v) = l.split_once('=')?;
            (k.trim() == key).then(|| v.trim().parse().unwrap())
        })
        .unwrap_or_else(|| panic!("{key} missing from map.meta"))
}

#[test]
fn solve_zero_writes_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("zero");
    let o = qclab(&["solve", "--mu", "zero", "--n", "64", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["phi.cfld", "h.cfld", "mu.cfld", "map.meta", "config.toml", "increments.svg"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert_eq!(meta_value(&out, "residual"), 0.0);
    let map = qclab::io::load_principal_map(&out).unwrap();
    let spec = *map.phi.spec();
    for (i, v) in map.phi.values().iter().enumerate() {
        assert!((v - spec.point_at(i)).norm() < 1e-12);
    }
}

#[test]
fn solve_constant_disk_converges() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("disk");
    let o = qclab(&["solve", "--mu", "constant-disk:0.3", "--n", "128", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(meta_value(&out, "residual") <= 1e-6);
    assert!(stdout(&o).contains("iterations = "));
}

#[test]
fn distortion_out_of_range_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qclab(&["solve", "--mu", "constant-disk:1.5", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("k must be < 1"), "{err}");
    assert!(err.starts_with("error code=2 kind=invalid-parameter"), "{err}");
    assert!(!tmp.path().join("config.toml").exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[grid]\nn = 64\nsize = 3\n").unwrap();
    let o = qclab(&["solve", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kind=config"));
}

#[test]
fn nonconvergence_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[grid]\nn = 64\ntolerance = 1e-14\n[solve]\nmu = \"constant-disk:0.9\"\nmax_iterations = 3\n").unwrap();
    let o = qclab(&["solve", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn indices_table() {
    let o = qclab(&["sweep", "--indices", "alpha=0.5", "K=3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let value = |key: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key} = ")))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!((value("d") - 1.25).abs() < 1e-12);
    assert!((value("KM") - 7.0 / 18.0).abs() < 1e-12);
    assert!((value("KZ") - 0.5).abs() < 1e-12);
}

fn csv_column(path: &Path, name: &str) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let col = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect()
}

#[test]
fn lemma1_default_rows_decrease() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("l");
    let o = qclab(&["lemma1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sup = csv_column(&out.join("report.csv"), "sup_phi");
    assert_eq!(sup.len(), 3);
    assert!(sup.windows(2).all(|w| w[1] < w[0]), "{sup:?}");
}

#[test]
fn lemma1_without_generations_writes_zero_row() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[grid]\nn = 64\n[lemma1]\ngenerations = []\np = [1.5, 3.0]\n").unwrap();
    let out = tmp.path().join("l");
    let o = qclab(&["lemma1", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: p = 3"));
    let text = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(text, "n,sup_phi,sup_phi_inv,jac_p1.5,jac_p3_above_critical\n0,0,0,0,0\n");
}

#[test]
fn sweep_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, extra: &[&str]| {
        let out = tmp.path().join(name);
        let mut args = vec!["sweep", "--n", "128", "--seed", "7", "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = qclab(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        (fs::read(out.join("report.csv")).unwrap(), fs::read(out.join("pairings.csv")).unwrap())
    };
    let a = run("a", &[]);
    let b = run("b", &["--deterministic"]);
    assert!(!a.0.is_empty() && !a.1.is_empty());
    assert_eq!(a, b);
}

#[test]
fn echoed_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let o = qclab(&["solve", "--mu", "radial:1.5", "--n", "64", "--L", "3", "--seed", "11", "--out", first.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echoed = first.join("config.toml");
    let text = fs::read_to_string(&echoed).unwrap();
    assert!(text.contains("seed = 11") && text.contains("mu = \"radial:1.5\""), "{text}");

    let second = tmp.path().join("second");
    let o = qclab(&["solve", "--config", echoed.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(second.join("config.toml")).unwrap(), text);
    assert_eq!(fs::read(first.join("phi.cfld")).unwrap(), fs::read(second.join("phi.cfld")).unwrap());
}

#[test]
fn flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[grid]\nn = 32\nseed = 5\n").unwrap();
    let out = tmp.path().join("o");
    let o = qclab(&["solve", "--config", cfg.to_str().unwrap(), "--n", "64", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(text.contains("n = 64") && text.contains("seed = 5"), "{text}");
}

#[test]
fn default_output_dir_uses_env() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_qclab"))
        .args(["solve", "--n", "32"])
        .env("QCLAB_OUT", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("solve").join("config.toml").exists());
}
