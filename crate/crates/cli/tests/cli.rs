use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sgdlab::csv::num;

fn sgdlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgdlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn sgdlab_threads(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgdlab"))
        .args(args)
        .env("SGDLAB_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    names
}

const GAME: &[&str] = &[
    "game",
    "--name",
    "ex62",
    "--p",
    "10",
    "--schedule",
    "const:0.1",
    "--iters",
    "300",
    "--trials",
    "300",
];

fn with_output<'a>(base: &[&'a str], out: &'a str) -> Vec<&'a str> {
    let mut v = base.to_vec();
    v.extend(["--output", out]);
    v
}

#[test]
fn same_seed_gives_identical_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(
        code(&sgdlab_threads(
            &with_output(GAME, a.to_str().unwrap()),
            "1"
        )),
        0
    );
    assert_eq!(
        code(&sgdlab_threads(
            &with_output(GAME, b.to_str().unwrap()),
            "4"
        )),
        0
    );
    let names = csv_files(&a);
    assert_eq!(names, ["final_points.csv", "histogram.csv"]);
    for n in &names {
        assert_eq!(read(&a, n), read(&b, n), "{n}");
    }
}

#[test]
fn game_example_centers_near_argmin() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g");
    let o = sgdlab(&with_output(GAME, out.to_str().unwrap()));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: Value = serde_json::from_str(&read(&out, "manifest.json")).unwrap();
    let mean = m["summary"]["mean"][0].as_f64().unwrap();
    assert!((mean - 0.71).abs() < 0.01, "mean {mean}");
    assert_eq!(m["seed"], m["config"]["seed"]);
    assert!(m["seed"].as_u64().is_some());
}

#[test]
fn artifacts_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<Vec<&str>> = vec![
        GAME.to_vec(),
        vec![
            "ensemble",
            "--schedule",
            "log:0.1",
            "--iters",
            "100",
            "--trials",
            "500",
            "--seed",
            "7",
        ],
        vec![
            "sgd",
            "--objective",
            "nonconvex1d:0.5",
            "--schedule",
            "power:0.1:0.6",
            "--iters",
            "50",
        ],
        vec!["moments", "--schedule", "power:0.3:1", "--iters", "40"],
        vec![
            "fokker-planck",
            "--schedule",
            "const:0.1",
            "--iters",
            "5",
            "--cells",
            "128",
        ],
    ];
    for (k, run) in runs.iter().enumerate() {
        let dir = tmp.path().join(format!("r{k}"));
        let o = sgdlab(&with_output(run, dir.to_str().unwrap()));
        assert_eq!(
            code(&o),
            0,
            "{run:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        for name in csv_files(&dir) {
            let text = read(&dir, &name);
            let mut again = String::new();
            for line in text.lines() {
                let fields: Vec<String> = line
                    .split(',')
                    .map(|f| f.parse::<f64>().map(num).unwrap_or_else(|_| f.to_string()))
                    .collect();
                again.push_str(&fields.join(","));
                again.push('\n');
            }
            assert_eq!(again, text, "{name} of {run:?}");
        }
        let manifest = read(&dir, "manifest.json");
        let v: Value = serde_json::from_str(&manifest).unwrap();
        assert_eq!(serde_json::to_string_pretty(&v).unwrap() + "\n", manifest);
        let listed: Vec<&str> = v["artifacts"]
            .as_array()
            .unwrap()
            .iter()
            .map(|a| a.as_str().unwrap())
            .collect();
        for name in csv_files(&dir) {
            assert!(
                listed.contains(&name.as_str()),
                "{name} missing from manifest"
            );
        }
    }
}

#[test]
fn ensemble_writes_oracle_overlay() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("e");
    let args = [
        "ensemble",
        "--objective",
        "convex1d",
        "--schedule",
        "log:0.1",
        "--iters",
        "500",
        "--trials",
        "20000",
    ];
    assert_eq!(code(&sgdlab(&with_output(&args, dir.to_str().unwrap()))), 0);
    let oracle = read(&dir, "oracle.csv");
    assert!(oracle.starts_with("x,empirical_density,oracle_density\n"));
    let m: Value = serde_json::from_str(&read(&dir, "manifest.json")).unwrap();
    let v_emp = m["summary"]["variance"][0].as_f64().unwrap();
    let v_exact = m["summary"]["oracle"]["variance"].as_f64().unwrap();
    assert!((v_emp / v_exact - 1.0).abs() < 0.05, "{v_emp} vs {v_exact}");
}

#[test]
fn manifest_config_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    assert_eq!(code(&sgdlab(&with_output(GAME, a.to_str().unwrap()))), 0);
    let m: Value = serde_json::from_str(&read(&a, "manifest.json")).unwrap();
    let cfg = tmp.path().join("config.json");
    fs::write(&cfg, serde_json::to_string(&m["config"]).unwrap()).unwrap();
    let b = tmp.path().join("b");
    let o = sgdlab(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        b.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for n in csv_files(&a) {
        assert_eq!(read(&a, &n), read(&b, &n), "{n}");
    }
}

#[test]
fn existing_output_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("m");
    let args = with_output(
        &["moments", "--schedule", "const:0.1", "--iters", "10"],
        dir.to_str().unwrap(),
    );
    assert_eq!(code(&sgdlab(&args)), 0);
    let before = read(&dir, "moments.csv");
    assert_eq!(code(&sgdlab(&args)), 2);
    assert_eq!(read(&dir, "moments.csv"), before);
    let mut forced = args.clone();
    forced.push("--force");
    assert_eq!(code(&sgdlab(&forced)), 0);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |n: &str| tmp.path().join(n).to_string_lossy().into_owned();

    assert_eq!(
        code(&sgdlab(&[
            "gd",
            "--schedule",
            "bogus:1",
            "--output",
            &p("a")
        ])),
        2
    );
    assert!(
        !tmp.path().join("a").exists(),
        "bad config must not create the directory"
    );
    assert_eq!(
        code(&sgdlab(&[
            "sgd",
            "--objective",
            "nope",
            "--schedule",
            "const:0.1",
            "--output",
            &p("b")
        ])),
        2
    );
    assert_eq!(code(&sgdlab(&["gd", "--iters", "x"])), 2);
    assert_eq!(code(&sgdlab(&["verify", "--check", "no-such-check"])), 2);
    assert_eq!(code(&sgdlab_threads(&["list-catalog"], "zero")), 2);

    let cfg = p("bad.json");
    fs::write(
        &cfg,
        r#"{"kind": "gd", "schedule": "const:0.1", "iterations": 3}"#,
    )
    .unwrap();
    assert_eq!(
        code(&sgdlab(&["run", "--config", &cfg, "--output", &p("c")])),
        2
    );

    // Step 1.5 on x^2 + 1 multiplies the iterate by -2 each step.
    let o = sgdlab(&[
        "gd",
        "--schedule",
        "const:1.5",
        "--iters",
        "5000",
        "--output",
        &p("d"),
    ]);
    assert_eq!(code(&o), 3);
    let dir = tmp.path().join("d");
    assert!(read(&dir, "trajectory.csv").lines().count() > 100);
    let m: Value = serde_json::from_str(&read(&dir, "manifest.json")).unwrap();
    assert_eq!(m["status"], "aborted");
}

#[test]
fn catalog_listing() {
    let o = sgdlab(&["list-catalog"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for needle in [
        "ex67-reduced",
        "delayed:c:m0:q",
        "nonconvex1d:sigma",
        "moments-vs-ensemble",
    ] {
        assert!(text.contains(needle), "{needle}");
    }
    let titles: Vec<&str> = text.lines().filter(|l| !l.starts_with(' ')).collect();
    let mut sorted = titles.clone();
    sorted.sort();
    assert_eq!(titles, sorted);
    assert_eq!(
        String::from_utf8(sgdlab(&["list-catalog"]).stdout).unwrap(),
        text
    );
}

#[test]
fn verify_emits_json_verdict() {
    let o = sgdlab(&["verify", "--check", "mass-conservation"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["pass"], true);
    let check = &v["checks"][0];
    assert_eq!(check["name"], "mass-conservation");
    assert!(check["measured"]
        .as_array()
        .unwrap()
        .iter()
        .any(|m| m["name"] == "max_mass_drift"));
}
