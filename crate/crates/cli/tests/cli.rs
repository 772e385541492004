//! End-to-end tests of the command-line interface, driving the built binary.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nlos-locate"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A configuration small enough for fast CLI tests.
fn tiny_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    let body = format!(
        r#"{{
  "scene": {{"generate": {{"width_m": 8.0, "length_m": 18.0, "height_m": 2.5, "clutter": 2, "clutter_seed": 3}}}},
  "n_rays": 40,
  "max_ray_length_m": 22.0,
  "n_select": 300,
  "k_max": 3,
  "em_n_init": 1,
  "max_fit_points": 800,
  "truth_n_dirs": 512,
  "grid_spacing_m": 0.1,
  "n_trials": 4{extra}
}}"#
    );
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn gen_scene_defaults_are_canonical() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gen-scene", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let text = std::fs::read_to_string(dir.path().join("scene.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["units"], "meters");
    assert_eq!(v["surfaces"].as_array().unwrap().len(), 12);
    let bs: Vec<Vec<f64>> = v["base_stations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| {
            b["position"]
                .as_array()
                .unwrap()
                .iter()
                .map(|x| x.as_f64().unwrap())
                .collect()
        })
        .collect();
    assert_eq!(
        bs,
        vec![
            vec![0.0, 0.0, 2.5],
            vec![8.0, 0.0, 2.5],
            vec![0.0, 18.0, 2.5],
            vec![8.0, 18.0, 2.5],
        ]
    );
}

#[test]
fn gen_scene_with_clutter_and_bad_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "gen-scene",
        "--clutter",
        "6",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("scene.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["surfaces"].as_array().unwrap().len(), 12 + 6 * 6);

    let out = run(&[
        "gen-scene",
        "--height",
        "0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success(), "zero height must fail");
    assert!(stderr(&out).contains("dimensions must be positive"));
}

#[test]
fn print_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "--print-config",
        "--seed",
        "7",
        "simulate",
        "--fusion",
        "aoa+pt",
        "--sigma-eta",
        "0.5",
        "--trials",
        "3",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let printed = stdout(&out);
    let v: serde_json::Value = serde_json::from_str(&printed).unwrap();
    assert_eq!(v["fusion"], "aoa+pt");
    assert_eq!(v["sigma_eta_deg"], 0.5);
    assert_eq!(v["seed"], 7);
    assert_eq!(v["n_trials"], 3);

    // re-ingesting the printed config resolves to the same configuration
    let cfg_path = dir.path().join("echo.json");
    std::fs::write(&cfg_path, &printed).unwrap();
    let again = run(&[
        "--print-config",
        "--config",
        cfg_path.to_str().unwrap(),
        "simulate",
    ]);
    assert!(again.status.success());
    assert_eq!(printed, stdout(&again));
}

/// Zero-noise LoS measurements for a UE in the empty canonical room.
fn write_los_measurements(dir: &Path, ue: [f64; 3]) -> std::path::PathBuf {
    let stations = [
        (0, [0.0, 0.0, 2.5]),
        (1, [8.0, 0.0, 2.5]),
        (2, [0.0, 18.0, 2.5]),
        (3, [8.0, 18.0, 2.5]),
    ];
    let aoa: Vec<serde_json::Value> = stations
        .iter()
        .map(|(id, p)| {
            let d = [ue[0] - p[0], ue[1] - p[1], ue[2] - p[2]];
            let azimuth = d[1].atan2(d[0]).to_degrees();
            let elevation = d[2].atan2(d[0].hypot(d[1])).to_degrees();
            serde_json::json!({
                "bs": id,
                "azimuth_deg": azimuth,
                "elevation_deg": elevation,
                "sigma_deg": 0.0
            })
        })
        .collect();
    let file = serde_json::json!({ "aoa": aoa, "truth": ue });
    let path = dir.join("measurements.json");
    std::fs::write(&path, serde_json::to_string_pretty(&file).unwrap()).unwrap();
    path
}

#[test]
fn locate_zero_noise_hits_truth_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap().to_string();

    // empty room so every BS has line of sight
    let scene_out = run(&["gen-scene", "--out", &out_dir]);
    assert!(scene_out.status.success());
    let scene_path = dir.path().join("scene.json");

    let cfg = tiny_config(dir.path(), "");
    let measurements = write_los_measurements(dir.path(), [5.0, 7.0, 1.2]);

    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        &out_dir,
        "locate",
        "--measurements",
        measurements.to_str().unwrap(),
        "--scene",
        scene_path.to_str().unwrap(),
        "--dump",
        "clouds,mixtures,field",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let eps: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("epsilon: "))
        .expect("epsilon printed when truth present")
        .parse()
        .unwrap();
    assert!(eps <= 0.2, "zero-noise estimate off by {eps} m");

    let clouds = std::fs::read_to_string(dir.path().join("clouds.csv")).unwrap();
    assert!(clouds.starts_with("bs_id,x,y,z,length,provenance"));
    for bs in 0..4 {
        assert!(
            clouds.lines().any(|l| l.starts_with(&format!("{bs},"))),
            "clouds.csv lacks rows for bs {bs}"
        );
    }
    let mixtures = std::fs::read_to_string(dir.path().join("mixtures.json")).unwrap();
    assert!(mixtures.contains("\"weights\""));
    let field = std::fs::read_to_string(dir.path().join("field.csv")).unwrap();
    assert!(field.starts_with("x,y,z,log_posterior"));
}

#[test]
fn locate_rejects_missing_category_and_unknown_bs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap().to_string();
    assert!(run(&["gen-scene", "--out", &out_dir]).status.success());
    let scene_path = dir.path().join("scene.json");
    let cfg = tiny_config(dir.path(), "");
    let measurements = write_los_measurements(dir.path(), [4.0, 9.0, 1.0]);

    // RPT fusion requested but the file has no rpt entries
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "locate",
        "--measurements",
        measurements.to_str().unwrap(),
        "--scene",
        scene_path.to_str().unwrap(),
        "--fusion",
        "aoa+rpt",
    ]);
    assert!(!out.status.success());
    assert!(
        stderr(&out).contains("RPT"),
        "error must name the missing category: {}",
        stderr(&out)
    );

    // unknown BS id
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"aoa":[{"bs":9,"azimuth_deg":0.0,"elevation_deg":0.0,"sigma_deg":1.0}]}"#,
    )
    .unwrap();
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "locate",
        "--measurements",
        bad.to_str().unwrap(),
        "--scene",
        scene_path.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("unknown BS id 9"));
}

#[test]
fn simulate_is_seed_deterministic_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), r#", "fusion": "aoa+rpt", "sigma_nu_rpt_m": 0.5"#);

    let run_once = |sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = run(&[
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "42",
            "--out",
            out_dir.to_str().unwrap(),
            "simulate",
        ]);
        assert!(out.status.success(), "stderr: {}", stderr(&out));
        (
            std::fs::read(out_dir.join("cdf.csv")).unwrap(),
            std::fs::read(out_dir.join("trials.csv")).unwrap(),
            std::fs::read_to_string(out_dir.join("summary.json")).unwrap(),
        )
    };
    let (cdf_a, trials_a, summary) = run_once("a");
    let (cdf_b, trials_b, _) = run_once("b");
    assert_eq!(cdf_a, cdf_b, "cdf.csv must be byte-identical");
    assert_eq!(trials_a, trials_b, "trials.csv must be byte-identical");

    let v: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(v["config"]["fusion"], "aoa+rpt");
    assert_eq!(v["config"]["sigma_nu_rpt_m"], 0.5);
    assert_eq!(v["config"]["seed"], 42);
    assert!(v["results"][0]["p90_m"].as_f64().is_some());
}

#[test]
fn simulate_sweep_writes_suffixed_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let out_dir = dir.path().join("sweep");
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "simulate",
        "--trials",
        "2",
        "--sweep",
        "sigma_eta=0.5,1.0deg",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(out_dir.join("cdf_sigma_eta_0.5deg.csv").exists());
    assert!(out_dir.join("cdf_sigma_eta_1deg.csv").exists());
    assert!(out_dir.join("trials_sigma_eta_0.5deg.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["results"].as_array().unwrap().len(), 2);
}
