use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sdde_control::car_following::{preset, PresetFamily, GAP, SPEED};
use sdde_control::sim::Observable;
use sdde_control::verification::{estimate_safety, MonteCarloOptions};

fn sdde(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdde"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_is_byte_identical_for_equal_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &str, seed: &str| {
        let o = sdde(
            dir.path(),
            &[
                "simulate",
                "--set",
                "preset.family=fig1_l",
                "--set",
                "preset.index=1",
                "--seed",
                seed,
                "--out",
                out,
            ],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(dir.path().join(out).join("trace.csv")).unwrap()
    };
    let a = run("a", "42");
    let b = run("b", "42");
    let c = run("c", "43");
    assert_eq!(a, b);
    assert_ne!(a, c);
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,x1,x2,x3,u1,V,B,h,U");
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(&first[..4], &[0.0, 10.0, 10.0, 150.0]);
}

#[test]
fn zero_paths_fails_with_config_category_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let o = sdde(dir.path(), &["verify", "--paths", "0", "--out", "r"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.starts_with("error[config]"), "{err}");
    assert!(err.contains("paths"), "{err}");
    assert!(!dir.path().join("r").exists());
}

#[test]
fn error_categories_reach_stderr() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "paths = [").unwrap();
    fs::write(
        dir.path().join("unknown.toml"),
        "[functionals]\nlyapunov = \"energy\"\nbarrier = \"headway_barrier\"\n",
    )
    .unwrap();
    let cases: [(&[&str], &str); 4] = [
        (&["simulate", "--config", "bad.toml"], "error[config_parse]"),
        (&["simulate", "--config", "unknown.toml"], "error[unknown_name]"),
        (&["simulate", "--config", "missing.toml"], "error[io]"),
        (&["sweep", "--set", "sweep_family=fig3"], "error[unknown_name]"),
    ];
    for (args, prefix) in cases {
        let o = sdde(dir.path(), args);
        assert_eq!(o.status.code(), Some(2));
        assert!(stderr(&o).starts_with(prefix), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn reports_echo_the_effective_configuration() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("scenario.toml"),
        "paths = 3\nhorizon = 0.3\nboundary_samples = 2\n\n[preset]\nfamily = \"fig1_l\"\nindex = 2\n",
    )
    .unwrap();
    let o = sdde(
        dir.path(),
        &[
            "verify",
            "--config",
            "scenario.toml",
            "--set",
            "params.noise_scale=0.2",
            "--seed",
            "5",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("out/report.json")).unwrap()).unwrap();
    let cfg = &json["config"];
    assert_eq!(cfg["paths"], 3);
    assert_eq!(cfg["seed_base"], 5);
    assert_eq!(cfg["params"]["noise_scale"], 0.2);
    assert_eq!(cfg["init"][0], 12.0);
    assert_eq!(json["safety"]["paths"], 3);
    let text = fs::read_to_string(dir.path().join("out/report.txt")).unwrap();
    assert!(text.contains("# effective configuration"));
    assert!(text.contains("noise_scale = 0.2"));
    let minima = fs::read_to_string(dir.path().join("out/minima.csv")).unwrap();
    assert_eq!(minima.lines().count(), 4);
}

#[test]
fn sweep_writes_one_report_per_member_and_a_matching_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = sdde(
        dir.path(),
        &[
            "sweep",
            "--set",
            "sweep_family=fig2_ell",
            "--set",
            "horizon=0.5",
            "--set",
            "boundary_samples=2",
            "--paths",
            "12",
            "--seed",
            "100",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(
        lines.next().unwrap(),
        "member,safety_prob,ci_lo,ci_hi,mean_terminal_velocity_error"
    );
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 10);
    for (i, row) in rows.iter().enumerate() {
        let ell = i + 1;
        assert_eq!(row[0], format!("fig2_ell_{ell}"));
        assert!(out.join(&row[0]).join("report.json").exists());

        // Independent run through the library with the same settings.
        let mut s = preset(PresetFamily::Fig2Ell, ell).unwrap();
        s.horizon = 0.5;
        let headway = s.params.headway;
        let options = MonteCarloOptions {
            safety_override: Some(Observable::new("headway_margin", move |_, phi| {
                Ok(phi.newest()[GAP] - headway * phi.newest()[SPEED])
            })),
            targets: vec![(SPEED, s.params.v_d)],
            ..MonteCarloOptions::default()
        };
        let fs_ = s.functionals().unwrap();
        let expected = estimate_safety(
            &s.model().unwrap(),
            &s.controller().unwrap(),
            &fs_.scbkf,
            &s.initial_history().unwrap(),
            s.horizon,
            12,
            100,
            &options,
        )
        .unwrap();
        let p = &expected.safety_probability;
        let got: Vec<f64> = row[1..4].iter().map(|v| v.parse().unwrap()).collect();
        assert_eq!(got, vec![p.estimate, p.ci_lo, p.ci_hi], "{}", row[0]);
        let err: f64 = row[4].parse().unwrap();
        let want = expected.terminal_mean_abs_error[0];
        assert!(
            err == want || (err.is_nan() && want.is_nan()),
            "{}: {err} vs {want}",
            row[0]
        );
    }
}
