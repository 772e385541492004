//! Command-line front end: scene generation, single-shot localization from a
//! measurement file, and Monte-Carlo campaigns/sweeps with CSV/JSON artifact
//! output.
//!
//! Set `NLOS_LOCATE_LOG` (error/warn/info/debug/trace) to control logging.

mod config;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use nlos_locate_core::cloud::clouds_to_csv;
use nlos_locate_core::gmm::mixtures_to_json;
use nlos_locate_core::measure::{AngleMeasurement, MeasurementSet, PtMeasurement, RptMeasurement};
use nlos_locate_core::scene::{box_scene, random_clutter, Scene};
use nlos_locate_core::sim::{
    cdf_to_csv, localize, run_campaign, summarize, sweep, trials_to_csv, SummaryStats,
};

use config::{RunConfig, SceneSource};

#[derive(Parser)]
#[command(
    name = "nlos-locate",
    version,
    about = "Digital-twin-aided probabilistic 3D indoor positioning"
)]
struct Cli {
    /// JSON run configuration; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Campaign seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread cap (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Print the fully resolved configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DumpKind {
    Clouds,
    Mixtures,
    Field,
}

#[derive(Subcommand)]
enum Command {
    /// Write a box scene file with corner base stations and optional clutter.
    GenScene {
        /// Room width in meters.
        #[arg(long, default_value_t = 8.0)]
        width: f64,
        /// Room length in meters.
        #[arg(long, default_value_t = 18.0)]
        length: f64,
        /// Room height in meters.
        #[arg(long, default_value_t = 2.5)]
        height: f64,
        /// Number of pseudo-random clutter boxes.
        #[arg(long, default_value_t = 0)]
        clutter: usize,
        /// Seed for the clutter placement.
        #[arg(long, default_value_t = 7)]
        clutter_seed: u64,
        /// Output file (default: scene.json in the output directory).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Localize a UE from a measurement file.
    Locate {
        /// Measurement JSON file.
        #[arg(long)]
        measurements: PathBuf,
        /// Scene file (overrides the configured scene source).
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Fusion mode override: aoa, aoa+pt, or aoa+rpt.
        #[arg(long)]
        fusion: Option<String>,
        /// Artifacts to write next to the estimate: clouds, mixtures, field.
        #[arg(long, value_delimiter = ',')]
        dump: Vec<DumpKind>,
        /// Keep every Nth grid cell in the field dump.
        #[arg(long, default_value_t = 50)]
        decimate: usize,
    },
    /// Run a Monte-Carlo positioning campaign or parameter sweep.
    Simulate {
        /// Trials per campaign.
        #[arg(long)]
        trials: Option<u64>,
        /// Fusion mode: aoa, aoa+pt, or aoa+rpt.
        #[arg(long)]
        fusion: Option<String>,
        /// AoA noise standard deviation in degrees.
        #[arg(long)]
        sigma_eta: Option<f64>,
        /// PT/RPT noise standard deviation in meters (sets both).
        #[arg(long)]
        sigma_nu: Option<f64>,
        /// Sweep spec, e.g. sigma_eta=0.25,0.5,0.75,1.0deg.
        #[arg(long)]
        sweep: Option<String>,
        /// Scene file (overrides the configured scene source).
        #[arg(long)]
        scene: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("NLOS_LOCATE_LOG", "warn"),
    )
    .init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }

    // subcommand overrides win over the config file
    match &cli.command {
        Command::Simulate {
            trials,
            fusion,
            sigma_eta,
            sigma_nu,
            sweep,
            scene,
        } => {
            if let Some(t) = trials {
                cfg.n_trials = *t;
            }
            if let Some(f) = fusion {
                cfg.fusion = f.parse().map_err(anyhow::Error::msg)?;
            }
            if let Some(s) = sigma_eta {
                cfg.sigma_eta_deg = *s;
            }
            if let Some(s) = sigma_nu {
                cfg.sigma_nu_pt_m = *s;
                cfg.sigma_nu_rpt_m = *s;
            }
            if let Some(s) = sweep {
                cfg.sweep = Some(s.clone());
            }
            if let Some(path) = scene {
                cfg.scene = SceneSource::Path(path.display().to_string());
            }
        }
        Command::Locate { scene, fusion, .. } => {
            if let Some(path) = scene {
                cfg.scene = SceneSource::Path(path.display().to_string());
            }
            if let Some(f) = fusion {
                cfg.fusion = f.parse().map_err(anyhow::Error::msg)?;
            }
        }
        Command::GenScene { .. } => {}
    }
    cfg.validate()?;

    if cli.print_config {
        println!("{}", cfg.to_json());
        return Ok(());
    }

    match cli.command {
        Command::GenScene {
            width,
            length,
            height,
            clutter,
            clutter_seed,
            ref output,
        } => cmd_gen_scene(
            width,
            length,
            height,
            clutter,
            clutter_seed,
            output.as_deref(),
            &cli.out,
        ),
        Command::Locate {
            ref measurements,
            ref dump,
            decimate,
            ..
        } => cmd_locate(&cfg, measurements, dump, decimate, &cli.out),
        Command::Simulate { .. } => cmd_simulate(&cfg, &cli.out),
    }
}

fn write_artifact(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_gen_scene(
    width: f64,
    length: f64,
    height: f64,
    clutter: usize,
    clutter_seed: u64,
    output: Option<&Path>,
    out_dir: &Path,
) -> Result<()> {
    if width <= 0.0 || length <= 0.0 || height <= 0.0 {
        bail!("scene dimensions must be positive (got {width} x {length} x {height})");
    }
    let boxes = random_clutter(clutter, width, length, clutter_seed);
    if boxes.len() < clutter {
        log::warn!(
            "placed only {} of {clutter} clutter boxes (room too small)",
            boxes.len()
        );
    }
    let file = box_scene(width, length, height, &boxes);
    let scene = Scene::from_file(&file).context("generated scene failed validation")?;
    for bs in scene.base_stations() {
        for s in scene.surfaces() {
            // clutter tops at < height never reach the ceiling corners
            debug_assert!(s.distance_to_point(&bs.position) > -1e-12);
        }
    }

    let path = output
        .map(PathBuf::from)
        .unwrap_or_else(|| out_dir.join("scene.json"));
    write_artifact(&path, &file.to_json())?;
    println!(
        "wrote {} ({} surfaces, {} base stations)",
        path.display(),
        scene.surfaces().len(),
        scene.base_stations().len()
    );
    Ok(())
}

/// Wire format of the measurement file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasurementFile {
    #[serde(default)]
    aoa: Vec<AoaEntry>,
    #[serde(default)]
    pt: Vec<PtEntry>,
    #[serde(default)]
    rpt: Vec<RptEntry>,
    /// Optional ground-truth UE position for error reporting.
    #[serde(default)]
    truth: Option<[f64; 3]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AoaEntry {
    bs: u32,
    azimuth_deg: f64,
    elevation_deg: f64,
    sigma_deg: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PtEntry {
    bs: u32,
    length_m: f64,
    sigma_m: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RptEntry {
    bs_i: u32,
    bs_j: u32,
    delta_m: f64,
    sigma_m: f64,
}

fn load_measurements(path: &Path, scene: &Scene) -> Result<(MeasurementSet, Option<[f64; 3]>)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading measurements {}", path.display()))?;
    let file: MeasurementFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing measurements {}", path.display()))?;

    let known = |id: u32| scene.base_station(id).is_some();
    let mut set = MeasurementSet::default();
    for e in &file.aoa {
        if !known(e.bs) {
            bail!("unknown BS id {} in aoa measurements", e.bs);
        }
        set.aoa.push(AngleMeasurement {
            bs_id: e.bs,
            azimuth: e.azimuth_deg.to_radians(),
            elevation: e.elevation_deg.to_radians(),
            sigma_eta: e.sigma_deg.to_radians(),
        });
    }
    for e in &file.pt {
        if !known(e.bs) {
            bail!("unknown BS id {} in pt measurements", e.bs);
        }
        set.pt.push(PtMeasurement::from_length(e.bs, e.length_m, e.sigma_m));
    }
    for e in &file.rpt {
        if !known(e.bs_i) || !known(e.bs_j) {
            bail!("unknown BS id ({}, {}) in rpt measurements", e.bs_i, e.bs_j);
        }
        set.rpt.push(RptMeasurement {
            bs_pair: (e.bs_i, e.bs_j),
            delta_length: e.delta_m,
            sigma_nu: e.sigma_m,
        });
    }
    set.validate().map_err(anyhow::Error::msg)?;
    if set.aoa.is_empty() {
        bail!("measurement file provides no AoA entries");
    }
    Ok((set, file.truth))
}

fn cmd_locate(
    cfg: &RunConfig,
    measurements: &Path,
    dump: &[DumpKind],
    decimate: usize,
    out_dir: &Path,
) -> Result<()> {
    let scene = cfg.resolve_scene()?;
    let (set, truth) = load_measurements(measurements, &scene)?;

    let trial_cfg = cfg.to_trial_config(scene);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let output = localize(&trial_cfg, &set, &mut rng)?;

    let est = output.estimate;
    println!("estimate: {:.4} {:.4} {:.4}", est.x, est.y, est.z);
    if let Some(t) = truth {
        let epsilon =
            (est - nlos_locate_core::geom::Point::new(t[0], t[1], t[2])).norm();
        println!("epsilon: {epsilon:.4}");
    }
    for d in &output.per_bs {
        log::info!(
            "bs {}: {} cloud points, {} after fusion, K = {}",
            d.bs_id,
            d.cloud_points,
            d.fused_points,
            d.k
        );
    }

    for kind in dump {
        match kind {
            DumpKind::Clouds => {
                write_artifact(&out_dir.join("clouds.csv"), &clouds_to_csv(&output.fused))?;
            }
            DumpKind::Mixtures => {
                let refs: Vec<_> = output.mixtures.iter().map(|(id, m)| (*id, m)).collect();
                write_artifact(&out_dir.join("mixtures.json"), &mixtures_to_json(&refs))?;
            }
            DumpKind::Field => {
                write_artifact(&out_dir.join("field.csv"), &output.field.to_csv(decimate))?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SummaryEntry {
    label: String,
    #[serde(flatten)]
    stats: SummaryStats,
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a RunConfig,
    out_dir: String,
    results: Vec<SummaryEntry>,
}

fn cmd_simulate(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let scene = cfg.resolve_scene()?;
    let trial_cfg = cfg.to_trial_config(scene);

    let mut entries = Vec::new();
    match cfg.parse_sweep()? {
        None => {
            let result = run_campaign(&trial_cfg, cfg.n_trials, cfg.workers)?;
            write_artifact(&out_dir.join("cdf.csv"), &cdf_to_csv(&result.cdf))?;
            write_artifact(&out_dir.join("trials.csv"), &trials_to_csv(&result.records))?;
            entries.push(SummaryEntry {
                label: "campaign".into(),
                stats: summarize(&result),
            });
        }
        Some(axis) => {
            for entry in sweep(&trial_cfg, &axis, cfg.n_trials, cfg.workers)? {
                write_artifact(
                    &out_dir.join(format!("cdf_{}.csv", entry.label)),
                    &cdf_to_csv(&entry.result.cdf),
                )?;
                write_artifact(
                    &out_dir.join(format!("trials_{}.csv", entry.label)),
                    &trials_to_csv(&entry.result.records),
                )?;
                entries.push(SummaryEntry {
                    label: entry.label,
                    stats: summarize(&entry.result),
                });
            }
        }
    }

    for e in &entries {
        println!(
            "{}: p50 = {:.3} m, p90 = {:.3} m, p95 = {:.3} m ({} ok, {} failed, {:.1} s)",
            e.label,
            e.stats.p50_m,
            e.stats.p90_m,
            e.stats.p95_m,
            e.stats.n_success,
            e.stats.n_failed,
            e.stats.wall_time_s
        );
    }

    let summary = Summary {
        config: cfg,
        out_dir: out_dir.display().to_string(),
        results: entries,
    };
    write_artifact(
        &out_dir.join("summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serialization"),
    )?;
    Ok(())
}
