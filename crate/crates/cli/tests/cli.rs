use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lorentz-decay"))
}

fn material(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../materials").join(name).to_string_lossy().into_owned()
}

fn scratch(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("lorentz-decay-cli-{}-{tag}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn report(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.lines().last().expect("no report line")).unwrap()
}

#[test]
fn check_material_happy_path() {
    let out = run(&["check-material", &material("drude_toy.toml")]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["passed"], true);
    assert_eq!(r["dissipation"]["figotin_case"], "DrudeTermDamped");
    assert_eq!(r["tolerance"], 1e-12);
}

#[test]
fn certify_lossless_material_fails_with_status_two() {
    let out = run(&["certify", &material("lossless.toml")]);
    assert_eq!(out.status.code(), Some(2));
    // the CSV owns stdout, so the report goes to stderr
    let r: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().last().unwrap()).unwrap();
    assert_eq!(r["error"], "NotStronglyDissipative");
}

#[test]
fn usage_and_io_errors_exit_with_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["check-material", "/nonexistent/m.toml"]).status.code(), Some(1));
    assert_eq!(run(&["--config", "/nonexistent/run.toml", "sweep"]).status.code(), Some(1));
    assert_eq!(run(&["ledger", &material("drude_toy.toml"), "--k", "1,2"]).status.code(), Some(1));
    let d = scratch("bad");
    let bad = d.join("bad.toml");
    std::fs::write(&bad, "eps0 = -1\n[[electric]]\nOmega = 1\nomega0 = 0\nalpha = 1\n").unwrap();
    assert_eq!(run(&["check-material", bad.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(run(&["memory-lab", "--chi-e", "lorentz(1)"]).status.code(), Some(1));
}

#[test]
fn help_names_the_identities() {
    let cases = [
        ("ledger", "dL^j/dt + D^j = 0"),
        ("certify", "L^(n) <= C w(k) D^(n)"),
        ("memory-lab", "chi''' >= -beta chi''"),
        ("sweep", "t^-(p+3/2)"),
        ("kernel-table", "P'' + alpha P' + omega0^2 P = E"),
        ("check-material", "Im(omega eps(omega)) >= 0"),
        ("simulate-mode", "U' = A(k) U"),
        ("fit", "log L against log t"),
    ];
    for (sub, needle) in cases {
        let out = run(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains(needle), "{sub} help lacks {needle}");
    }
}

#[test]
fn ledger_residual_above_tolerance_exits_with_two() {
    let out = run(&["ledger", &material("mixed.toml"), "--k", "0.3,0,1", "--points", "5", "--tol", "1e-300"]);
    assert_eq!(out.status.code(), Some(2));
    let r: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().last().unwrap()).unwrap();
    assert_eq!(r["passed"], false);
    assert_eq!(r["tolerance"], 1e-300);
}

#[test]
fn outputs_are_byte_identical() {
    let d = scratch("det");
    let once = |tag: &str, threads: &str| {
        let csv = d.join(format!("{tag}.csv"));
        let rep = d.join(format!("{tag}.json"));
        let out = bin()
            .env("LORENTZ_DECAY_THREADS", threads)
            .args([
                "certify",
                &material("lorentz_toy.toml"),
                "--nk",
                "4",
                "--states",
                "3",
                "--seed",
                "17",
                "--output",
                csv.to_str().unwrap(),
                "--report",
                rep.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        (std::fs::read(csv).unwrap(), std::fs::read(rep).unwrap())
    };
    let a = once("a", "4");
    let b = once("b", "4");
    let c = once("c", "1");
    assert_eq!(a, b);
    assert_eq!(a, c);
    let ledger =
        |seed: &str| run(&["ledger", &material("mixed.toml"), "--k", "0.2,-0.4,1", "--seed", seed, "--points", "9"]);
    let (x, y, z) = (ledger("5"), ledger("5"), ledger("6"));
    assert_eq!(x.stdout, y.stdout);
    assert_eq!(x.stderr, y.stderr);
    assert_ne!(x.stdout, z.stdout);
}

#[test]
fn csv_has_full_precision() {
    let out = run(&["kernel-table", &material("lorentz_toy.toml"), "--points", "3", "--tmax", "1"]);
    let text = String::from_utf8_lossy(&out.stdout);
    let row: Vec<&str> = text.lines().nth(2).unwrap().split(',').collect();
    // 17 significant digits
    assert_eq!(row[0], "5.0000000000000000e-1");
    let v: f64 = row[1].parse().unwrap();
    let o = lorentz_decay::Oscillator::new(1.0, 1.0, 0.5);
    assert_eq!(v, lorentz_decay::susceptibility_kernel(&o, 0.5).unwrap());
}

#[test]
fn sweep_then_fit_recovers_low_frequency_rate() {
    let d = scratch("sweep");
    let csv = d.join("curve.csv");
    let out = run(&[
        "sweep",
        "--material",
        &material("lorentz_toy.toml"),
        "--profile",
        "gaussian",
        "--tmax",
        "1e4",
        "--output",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(report(&out)["moment_order"], 0);
    let out = run(&["fit", csv.to_str().unwrap(), "--window", "1e2,1e4", "--expect", "-1.5"]);
    assert_eq!(out.status.code(), Some(0));
    let e = report(&out)["fit"]["exponent"].as_f64().unwrap();
    assert!((e + 1.5).abs() <= 0.15, "{e}");
    let out = run(&["fit", csv.to_str().unwrap(), "--window", "1e2,1e4", "--expect", "-3.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_table_supplies_flags_and_command_line_wins() {
    let d = scratch("cfg");
    std::fs::copy(material("drude_toy.toml"), d.join("m.toml")).unwrap();
    let cfg = d.join("run.toml");
    std::fs::write(
        &cfg,
        "[simulate-mode]\nmaterial = \"m.toml\"\nk = [0.0, 0.0, 2.0]\ntmax = 5.0\npoints = 3\nseed = 9\n",
    )
    .unwrap();
    let a = run(&["--config", cfg.to_str().unwrap(), "simulate-mode"]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(String::from_utf8_lossy(&a.stdout).lines().count(), 4);
    let b = run(&["--config", cfg.to_str().unwrap(), "simulate-mode", "--points", "6"]);
    assert_eq!(String::from_utf8_lossy(&b.stdout).lines().count(), 7);
    let direct = run(&[
        "simulate-mode",
        &material("drude_toy.toml"),
        "--k",
        "0,0,2",
        "--tmax",
        "5",
        "--points",
        "3",
        "--seed",
        "9",
    ]);
    assert_eq!(a.stdout, direct.stdout);
}

#[test]
fn memory_lab_verdicts_and_custom_tables() {
    let out = run(&["memory-lab", "--output", "/dev/null"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["verdict"]["electric"]["conds_26"], true);
    assert!((r["verdict"]["electric"]["beta"].as_f64().unwrap() - 1.0).abs() <= 1e-9);
    assert!(r["details"]["fitted_rate"].as_f64().unwrap() > 0.0);

    let out = run(&["memory-lab", "--chi-e", "lorentz(0.5, 1)", "--require-sign-conditions", "--output", "/dev/null"]);
    assert_eq!(out.status.code(), Some(2));
    let r = report(&out);
    assert_eq!(r["verdict"]["electric"]["conds_26"], false);
    assert!(r["residual"].as_f64().unwrap() <= 1e-6);

    let d = scratch("kernel");
    let table = d.join("kernel.txt");
    std::fs::write(&table, "# two minus exp\nconst(2)\nexp(-1, -1)\n").unwrap();
    let spec = format!("custom({})", table.display());
    let a = run(&["memory-lab", "--chi-e", &spec, "--tmax", "5", "--panels", "50"]);
    let b = run(&["memory-lab", "--chi-e", "const(2) + exp(-1, -1)", "--tmax", "5", "--panels", "50"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}
