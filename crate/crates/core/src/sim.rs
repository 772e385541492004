//! Experiment harness: random UE drops, end-to-end localization trials,
//! error CDFs, campaigns, and parameter sweeps.
//!
//! Every trial is a pure function of (campaign seed, trial index): the trial
//! seed is derived with SplitMix64, so campaigns produce identical results
//! for any worker count, and sweeps sharing a base seed reuse the same UE
//! drops per trial index (common random numbers).

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cloud::{
    generate_aoa_cloud, apply_fusion, EmptyBinPolicy, FusionConfig, FusionMode, PointCloud,
    RayLaunchConfig, SelectionOrder,
};
use crate::geom::{splitmix64, Point};
use crate::gmm::{estimate, fit_em_with_report, posterior, select_k, EmConfig, GridSpec};
use crate::measure::{
    perturb, true_observables, NoiseSigmas, PerturbCategories, RptTopology, TruthSearchConfig,
};
use crate::scene::Scene;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("all {0} trials failed")]
    AllTrialsFailed(u64),
    #[error("campaign needs at least one trial")]
    NoTrials,
}

/// Failure of the measurement-to-estimate pipeline.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Cloud(#[from] crate::cloud::CloudError),
    #[error("mixture fit: {0}")]
    Fit(#[from] crate::gmm::GmmError),
}

/// Down-selection settings for the fusion stage.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SelectionSettings {
    pub n_select: usize,
    /// `None` derives `max(sigma_nu/5, step/2)`.
    pub bin_width: Option<f64>,
    pub policy: EmptyBinPolicy,
    pub order: SelectionOrder,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        SelectionSettings {
            n_select: 2000,
            bin_width: None,
            policy: EmptyBinPolicy::default(),
            order: SelectionOrder::default(),
        }
    }
}

/// Mixture-fitting settings for the per-BS GMM stage.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FitSettings {
    pub em: EmConfig,
    /// Upper bound for BIC-based component count selection.
    pub k_max: usize,
    /// Bypass BIC with a fixed component count.
    pub fixed_k: Option<usize>,
    /// Clouds larger than this are uniformly subsampled before fitting;
    /// EM cost is linear in points and the extra samples carry little
    /// information beyond this size.
    pub max_fit_points: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            em: EmConfig::default(),
            k_max: 8,
            fixed_k: None,
            max_fit_points: 3000,
        }
    }
}

/// Posterior grid settings.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridSettings {
    pub spacing: f64,
    pub refine: bool,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings {
            spacing: 0.05,
            refine: true,
        }
    }
}

/// Ground-truth oracle settings.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TruthSettings {
    pub max_bounces: u32,
    #[serde(skip)]
    pub search: TruthSearchConfig,
}

impl Default for TruthSettings {
    fn default() -> Self {
        TruthSettings {
            max_bounces: 3,
            search: TruthSearchConfig::default(),
        }
    }
}

/// Full configuration of one localization trial.
#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub scene: Arc<Scene>,
    pub sigmas: NoiseSigmas,
    pub fusion: FusionMode,
    pub rpt_topology: RptTopology,
    pub n_rays: usize,
    pub rays: RayLaunchConfig,
    pub selection: SelectionSettings,
    pub fit: FitSettings,
    pub grid: GridSettings,
    pub truth: TruthSettings,
    /// Minimum clearance of UE drops from every surface (meters).
    pub drop_margin: f64,
    pub seed: u64,
}

impl TrialConfig {
    pub fn new(scene: Arc<Scene>) -> Self {
        TrialConfig {
            scene,
            sigmas: NoiseSigmas {
                sigma_eta: 0.0,
                sigma_nu_pt: 0.0,
                sigma_nu_rpt: 0.0,
            },
            fusion: FusionMode::AoaOnly,
            rpt_topology: RptTopology::AllPairs,
            n_rays: 160,
            rays: RayLaunchConfig {
                max_bounces: 5,
                max_length: 30.0,
                step: 0.10,
                clip_to_scene: true,
            },
            selection: SelectionSettings::default(),
            fit: FitSettings::default(),
            grid: GridSettings::default(),
            truth: TruthSettings::default(),
            drop_margin: 0.1,
            seed: 0,
        }
    }
}

/// Per-BS diagnostics of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct BsDiagnostics {
    pub bs_id: u32,
    pub cloud_points: usize,
    pub fused_points: usize,
    pub k: usize,
    pub fit_log_likelihood: f64,
}

/// Wall-clock time spent in each stage (diagnostics only; excluded from
/// determinism comparisons).
#[derive(Debug, Clone, Default)]
pub struct StageTimings {
    pub truth_ms: f64,
    pub clouds_ms: f64,
    pub fusion_ms: f64,
    pub fit_ms: f64,
    pub posterior_ms: f64,
}

/// Outcome of one successful trial.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub ue_true: Point,
    pub ue_est: Point,
    pub epsilon: f64,
    pub timings: StageTimings,
    pub per_bs: Vec<BsDiagnostics>,
}

#[derive(Debug, Clone)]
pub enum TrialOutcome {
    Success(Box<TrialResult>),
    Failed { ue_true: Option<Point>, reason: String },
}

#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub index: u64,
    pub outcome: TrialOutcome,
}

/// Derive the per-trial seed from the campaign seed and trial index
/// (order-independent under concurrency).
pub fn trial_seed(campaign_seed: u64, trial_index: u64) -> u64 {
    splitmix64(campaign_seed ^ splitmix64(trial_index.wrapping_add(1)))
}

/// Crossing-parity test for "free interior": counting boundary crossings
/// along an upward ray, a point in open room space sees an odd number (it
/// exits the room solid once), a point inside floor-standing clutter an even
/// number (clutter boundary plus room boundary). The ray is slightly tilted
/// so it cannot run along the seams of axis-aligned facets.
fn is_free_interior(scene: &Scene, p: &Point) -> bool {
    let up = crate::geom::Vec3::new(0.012345, 0.067891, 1.0).normalize();
    let mut crossings = 0usize;
    for s in scene.surfaces() {
        let denom = up.dot(s.normal());
        if denom.abs() < 1e-12 {
            continue;
        }
        let t = (s.vertices()[0] - p).dot(s.normal()) / denom;
        if t > 1e-9 {
            let hit = p + up * t;
            if s.distance_to_point(&hit) < 1e-9 {
                crossings += 1;
            }
        }
    }
    crossings % 2 == 1
}

/// Uniform drop in the scene's free interior with the configured margin from
/// every surface; clutter interiors are rejected by the parity test.
fn drop_ue(cfg: &TrialConfig, rng: &mut impl Rng) -> Option<Point> {
    let bb = cfg.scene.bounding_box();
    let margin = cfg.drop_margin;
    for _ in 0..10_000 {
        let p = Point::new(
            rng.gen_range(bb.min.x + margin..bb.max.x - margin),
            rng.gen_range(bb.min.y + margin..bb.max.y - margin),
            rng.gen_range(bb.min.z + margin..bb.max.z - margin),
        );
        if !is_free_interior(&cfg.scene, &p) {
            continue;
        }
        if cfg
            .scene
            .surfaces()
            .iter()
            .all(|s| s.distance_to_point(&p) >= margin)
        {
            return Some(p);
        }
    }
    None
}

/// Everything the localization pipeline produces for one measurement set.
#[derive(Debug, Clone)]
pub struct LocalizeOutput {
    pub estimate: Point,
    pub clouds: Vec<PointCloud>,
    pub fused: Vec<PointCloud>,
    pub mixtures: Vec<(u32, crate::gmm::GaussianMixture3)>,
    pub field: crate::gmm::PosteriorField,
    pub per_bs: Vec<BsDiagnostics>,
    pub timings: StageTimings,
}

/// Run the measurement-to-estimate pipeline: per-BS AoA clouds, fusion
/// down-selection, mixture fits, product posterior, argmax estimate.
/// Measurement sigmas (cloud spread, bin widths) come from the measurement
/// set itself; `cfg.sigmas` only matters when simulating measurements.
pub fn localize(
    cfg: &TrialConfig,
    measurements: &crate::measure::MeasurementSet,
    rng: &mut impl Rng,
) -> Result<LocalizeOutput, PipelineError> {
    let mut timings = StageTimings::default();

    let t0 = Instant::now();
    let mut clouds = Vec::with_capacity(measurements.aoa.len());
    for angle in &measurements.aoa {
        let cloud = generate_aoa_cloud(&cfg.scene, angle.bs_id, angle, cfg.n_rays, &cfg.rays, rng)?;
        clouds.push(cloud);
    }
    timings.clouds_ms = t0.elapsed().as_secs_f64() * 1e3;

    let t0 = Instant::now();
    let fusion_cfg = FusionConfig {
        mode: cfg.fusion,
        n_select: cfg.selection.n_select,
        bin_width: cfg.selection.bin_width,
        policy: cfg.selection.policy,
        order: cfg.selection.order,
        step: cfg.rays.step,
    };
    let fused = apply_fusion(&clouds, measurements, &fusion_cfg, rng)?;
    timings.fusion_ms = t0.elapsed().as_secs_f64() * 1e3;

    let t0 = Instant::now();
    let mut mixtures = Vec::with_capacity(fused.len());
    let mut per_bs = Vec::with_capacity(fused.len());
    for (cloud, fused_cloud) in clouds.iter().zip(&fused) {
        let fit_cloud = subsample(fused_cloud, cfg.fit.max_fit_points, rng);
        let (k, mixture, ll) = match cfg.fit.fixed_k {
            Some(k) => fit_em_with_report(&fit_cloud, k.min(fit_cloud.len()), &cfg.fit.em, rng)
                .map(|(m, r)| (m.k(), m, r.final_log_likelihood())),
            None => select_k(&fit_cloud, cfg.fit.k_max, &cfg.fit.em, rng).map(|(k, m)| {
                let ll = fit_cloud
                    .points
                    .iter()
                    .map(|p| m.log_pdf(&p.position))
                    .sum();
                (k, m, ll)
            }),
        }?;
        per_bs.push(BsDiagnostics {
            bs_id: cloud.bs_id,
            cloud_points: cloud.len(),
            fused_points: fused_cloud.len(),
            k,
            fit_log_likelihood: ll,
        });
        mixtures.push((cloud.bs_id, mixture));
    }
    timings.fit_ms = t0.elapsed().as_secs_f64() * 1e3;

    let t0 = Instant::now();
    let grid = GridSpec::covering(cfg.scene.bounding_box(), cfg.grid.spacing);
    let only_mixtures: Vec<_> = mixtures.iter().map(|(_, m)| m.clone()).collect();
    let field = posterior(&only_mixtures, &grid);
    let est = estimate(&field, cfg.grid.refine);
    timings.posterior_ms = t0.elapsed().as_secs_f64() * 1e3;

    Ok(LocalizeOutput {
        estimate: est,
        clouds,
        fused,
        mixtures,
        field,
        per_bs,
        timings,
    })
}

/// Run one end-to-end localization trial: drop, truth, perturb, clouds,
/// fusion, mixture fits, posterior, estimate. Fully deterministic given
/// (seed, trial index).
pub fn run_trial(cfg: &TrialConfig, trial_index: u64) -> TrialRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(cfg.seed, trial_index));
    let fail = |ue: Option<Point>, reason: String| TrialRecord {
        index: trial_index,
        outcome: TrialOutcome::Failed {
            ue_true: ue,
            reason,
        },
    };

    let Some(ue) = drop_ue(cfg, &mut rng) else {
        return fail(None, "no free interior position found".into());
    };

    let t0 = Instant::now();
    let truth = match true_observables(&cfg.scene, &ue, cfg.truth.max_bounces, &cfg.truth.search) {
        Ok(t) => t,
        Err(e) => return fail(Some(ue), format!("truth oracle: {e}")),
    };
    let truth_ms = t0.elapsed().as_secs_f64() * 1e3;
    for bs in &truth.unreachable {
        log::debug!("trial {trial_index}: no path to BS {bs}; dropping it");
    }
    if truth.arrivals.len() < 2 {
        return fail(Some(ue), "fewer than 2 usable base stations".into());
    }

    let categories = PerturbCategories {
        aoa: true,
        pt: cfg.fusion == FusionMode::AoaPt,
        rpt: (cfg.fusion == FusionMode::AoaRpt).then_some(cfg.rpt_topology),
    };
    let mut measurements = perturb(&truth, &cfg.sigmas, &categories, &mut rng);

    // A geometrically unusable measurement (e.g. a PT target with no cloud
    // support because nearly every perturbed ray left the scene) drops that
    // measurement, not the whole trial; the BS keeps contributing its AoA
    // cloud. Each retry removes something, so the loop terminates.
    let output = loop {
        match localize(cfg, &measurements, &mut rng) {
            Ok(o) => break o,
            Err(PipelineError::Cloud(crate::cloud::CloudError::PtInconsistent(bs))) => {
                log::debug!("trial {trial_index}: PT for BS {bs} unusable; dropping it");
                measurements.pt.retain(|m| m.bs_id != bs);
                if measurements.pt.is_empty() {
                    return fail(Some(ue), "no usable PT measurement".into());
                }
            }
            Err(PipelineError::Cloud(crate::cloud::CloudError::RptInconsistent(i, j))) => {
                log::debug!("trial {trial_index}: RPT for pair ({i}, {j}) unusable; dropping it");
                measurements
                    .rpt
                    .retain(|m| m.bs_pair != (i, j) && m.bs_pair != (j, i));
                if measurements.rpt.is_empty() {
                    return fail(Some(ue), "no usable RPT measurement".into());
                }
            }
            Err(PipelineError::Cloud(crate::cloud::CloudError::EmptyCloud(bs))) => {
                log::debug!("trial {trial_index}: empty cloud for BS {bs}; dropping it");
                measurements.aoa.retain(|m| m.bs_id != bs);
                measurements.pt.retain(|m| m.bs_id != bs);
                measurements
                    .rpt
                    .retain(|m| m.bs_pair.0 != bs && m.bs_pair.1 != bs);
                if measurements.aoa.len() < 2 {
                    return fail(Some(ue), "fewer than 2 usable base stations".into());
                }
            }
            Err(e) => return fail(Some(ue), e.to_string()),
        }
    };
    let mut timings = output.timings;
    timings.truth_ms = truth_ms;

    let epsilon = (output.estimate - ue).norm();
    TrialRecord {
        index: trial_index,
        outcome: TrialOutcome::Success(Box::new(TrialResult {
            ue_true: ue,
            ue_est: output.estimate,
            epsilon,
            timings,
            per_bs: output.per_bs,
        })),
    }
}

/// Uniform subsample without replacement when the cloud exceeds `max`.
fn subsample(cloud: &PointCloud, max: usize, rng: &mut impl Rng) -> PointCloud {
    if cloud.len() <= max {
        return cloud.clone();
    }
    let picked = rand::seq::index::sample(rng, cloud.len(), max);
    PointCloud {
        bs_id: cloud.bs_id,
        points: picked.iter().map(|i| cloud.points[i]).collect(),
        provenance: cloud.provenance,
    }
}

/// Empirical CDF over positioning errors.
#[derive(Debug, Clone)]
pub struct ErrorCdf {
    samples: Vec<f64>,
}

impl ErrorCdf {
    pub fn from_samples(mut samples: Vec<f64>) -> Self {
        samples.sort_by(|a, b| a.total_cmp(b));
        ErrorCdf { samples }
    }

    /// Sorted error samples.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// F(e): fraction of samples <= e.
    pub fn fraction_at(&self, e: f64) -> f64 {
        let k = self.samples.partition_point(|&s| s <= e);
        k as f64 / self.samples.len() as f64
    }

    /// q-th percentile as the ceil(q·N)-th order statistic, q in (0, 1].
    pub fn percentile(&self, q: f64) -> f64 {
        debug_assert!(q > 0.0 && q <= 1.0);
        let n = self.samples.len();
        let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
        self.samples[rank - 1]
    }
}

/// Outcome of a campaign: the error CDF over successful trials plus the full
/// per-trial log (failures included).
#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub cdf: ErrorCdf,
    pub records: Vec<TrialRecord>,
    pub n_failed: usize,
    pub wall: Duration,
}

/// Run `n_trials` independent trials (concurrently up to `workers`; 0 means
/// the default pool) and aggregate their error CDF. Failed trials are
/// excluded from the CDF but kept in the records.
pub fn run_campaign(
    cfg: &TrialConfig,
    n_trials: u64,
    workers: usize,
) -> Result<CampaignResult, SimError> {
    if n_trials == 0 {
        return Err(SimError::NoTrials);
    }
    let start = Instant::now();
    let run_all = || -> Vec<TrialRecord> {
        (0..n_trials)
            .into_par_iter()
            .map(|i| run_trial(cfg, i))
            .collect()
    };
    let records = if workers == 0 {
        run_all()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("worker pool");
        pool.install(run_all)
    };

    let mut epsilons = Vec::with_capacity(records.len());
    let mut n_failed = 0;
    for r in &records {
        match &r.outcome {
            TrialOutcome::Success(t) => epsilons.push(t.epsilon),
            TrialOutcome::Failed { .. } => n_failed += 1,
        }
    }
    if epsilons.is_empty() {
        return Err(SimError::AllTrialsFailed(n_trials));
    }
    Ok(CampaignResult {
        cdf: ErrorCdf::from_samples(epsilons),
        records,
        n_failed,
        wall: start.elapsed(),
    })
}

/// Sweepable parameter axis with its values.
#[derive(Debug, Clone)]
pub enum SweepAxis {
    /// AoA noise values in radians.
    SigmaEta(Vec<f64>),
    /// PT length-noise values in meters.
    SigmaNuPt(Vec<f64>),
    /// RPT difference-noise values in meters.
    SigmaNuRpt(Vec<f64>),
    Fusion(Vec<FusionMode>),
}

/// One sweep entry: a human-readable label (degree/meter units) and the
/// campaign run at that value.
#[derive(Debug)]
pub struct SweepEntry {
    pub label: String,
    pub result: CampaignResult,
}

fn trim_float(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

/// Run one campaign per axis value with a shared base seed (common random
/// numbers across values).
pub fn sweep(
    base: &TrialConfig,
    axis: &SweepAxis,
    n_trials: u64,
    workers: usize,
) -> Result<Vec<SweepEntry>, SimError> {
    let mut entries = Vec::new();
    match axis {
        SweepAxis::SigmaEta(values) => {
            for &v in values {
                let mut cfg = base.clone();
                cfg.sigmas.sigma_eta = v;
                entries.push(SweepEntry {
                    label: format!("sigma_eta_{}deg", trim_float(v.to_degrees())),
                    result: run_campaign(&cfg, n_trials, workers)?,
                });
            }
        }
        SweepAxis::SigmaNuPt(values) => {
            for &v in values {
                let mut cfg = base.clone();
                cfg.sigmas.sigma_nu_pt = v;
                entries.push(SweepEntry {
                    label: format!("sigma_nu_pt_{}m", trim_float(v)),
                    result: run_campaign(&cfg, n_trials, workers)?,
                });
            }
        }
        SweepAxis::SigmaNuRpt(values) => {
            for &v in values {
                let mut cfg = base.clone();
                cfg.sigmas.sigma_nu_rpt = v;
                entries.push(SweepEntry {
                    label: format!("sigma_nu_rpt_{}m", trim_float(v)),
                    result: run_campaign(&cfg, n_trials, workers)?,
                });
            }
        }
        SweepAxis::Fusion(modes) => {
            for &m in modes {
                let mut cfg = base.clone();
                cfg.fusion = m;
                entries.push(SweepEntry {
                    label: format!("fusion_{m}"),
                    result: run_campaign(&cfg, n_trials, workers)?,
                });
            }
        }
    }
    Ok(entries)
}

/// CSV of the error CDF: `error_m,cdf`, one row per sorted sample.
pub fn cdf_to_csv(cdf: &ErrorCdf) -> String {
    let mut out = String::from("error_m,cdf\n");
    let n = cdf.samples().len();
    for (i, e) in cdf.samples().iter().enumerate() {
        out.push_str(&format!("{:.6},{:.6}\n", e, (i + 1) as f64 / n as f64));
    }
    out
}

/// CSV of the per-trial log (failures included).
pub fn trials_to_csv(records: &[TrialRecord]) -> String {
    let mut out =
        String::from("trial_index,true_x,true_y,true_z,est_x,est_y,est_z,epsilon_m,status\n");
    let fmt_point = |p: Option<Point>| match p {
        Some(p) => format!("{:.6},{:.6},{:.6}", p.x, p.y, p.z),
        None => "nan,nan,nan".to_string(),
    };
    for r in records {
        match &r.outcome {
            TrialOutcome::Success(t) => {
                out.push_str(&format!(
                    "{},{},{},{:.6},ok\n",
                    r.index,
                    fmt_point(Some(t.ue_true)),
                    fmt_point(Some(t.ue_est)),
                    t.epsilon
                ));
            }
            TrialOutcome::Failed { ue_true, reason } => {
                out.push_str(&format!(
                    "{},{},nan,nan,nan,nan,failed: {}\n",
                    r.index,
                    fmt_point(*ue_true),
                    reason.replace(',', ";")
                ));
            }
        }
    }
    out
}

/// Campaign summary statistics for `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryStats {
    pub n_trials: usize,
    pub n_success: usize,
    pub n_failed: usize,
    pub p50_m: f64,
    pub p90_m: f64,
    pub p95_m: f64,
    pub wall_time_s: f64,
}

pub fn summarize(result: &CampaignResult) -> SummaryStats {
    SummaryStats {
        n_trials: result.records.len(),
        n_success: result.cdf.len(),
        n_failed: result.n_failed,
        p50_m: result.cdf.percentile(0.5),
        p90_m: result.cdf.percentile(0.9),
        p95_m: result.cdf.percentile(0.95),
        wall_time_s: result.wall.as_secs_f64(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::canonical_scene;
    use approx::assert_relative_eq;

    fn small_cfg(fusion: FusionMode) -> TrialConfig {
        let scene = Arc::new(Scene::from_file(&canonical_scene(4, 5)).unwrap());
        let mut cfg = TrialConfig::new(scene);
        cfg.fusion = fusion;
        cfg.n_rays = 60;
        cfg.rays.max_length = 24.0;
        cfg.selection.n_select = 400;
        cfg.fit.k_max = 4;
        cfg.fit.em.n_init = 1;
        cfg.fit.max_fit_points = 1200;
        cfg.grid.spacing = 0.1;
        cfg.truth.search.n_dirs = 2048;
        cfg.seed = 99;
        cfg
    }

    #[test]
    fn cdf_percentiles_follow_order_statistics() {
        let cdf = ErrorCdf::from_samples(vec![0.4, 0.1, 0.3, 0.2]);
        assert_eq!(cdf.samples(), &[0.1, 0.2, 0.3, 0.4]);
        assert_relative_eq!(cdf.percentile(0.5), 0.2); // ceil(0.5*4) = 2nd
        assert_relative_eq!(cdf.percentile(0.9), 0.4); // ceil(0.9*4) = 4th
        assert_relative_eq!(cdf.percentile(0.25), 0.1);
        assert_relative_eq!(cdf.fraction_at(0.0), 0.0);
        assert_relative_eq!(cdf.fraction_at(0.25), 0.5);
        assert_relative_eq!(cdf.fraction_at(0.4), 1.0);
        assert_relative_eq!(cdf.fraction_at(9.9), 1.0);
    }

    #[test]
    fn free_interior_rejects_clutter() {
        let scene = Scene::from_file(&canonical_scene(0, 0)).unwrap();
        assert!(is_free_interior(&scene, &Point::new(4.0, 9.0, 1.0)));

        let mut file = canonical_scene(0, 0);
        file.surfaces
            .extend(crate::scene::box_scene(8.0, 18.0, 2.5, &[crate::scene::ClutterBox {
                origin: [3.0, 8.0],
                size: [2.0, 2.0],
                height: 2.0,
            }])
            .surfaces
            .into_iter()
            .skip(12));
        let cluttered = Scene::from_file(&file).unwrap();
        assert!(!is_free_interior(&cluttered, &Point::new(4.0, 9.0, 1.0)));
        assert!(is_free_interior(&cluttered, &Point::new(1.0, 2.0, 1.0)));
    }

    #[test]
    fn drops_respect_margin_and_clutter() {
        let cfg = small_cfg(FusionMode::AoaOnly);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let p = drop_ue(&cfg, &mut rng).expect("drop must succeed");
            assert!(is_free_interior(&cfg.scene, &p));
            for s in cfg.scene.surfaces() {
                assert!(s.distance_to_point(&p) >= cfg.drop_margin - 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_trial_is_accurate_and_deterministic() {
        let cfg = small_cfg(FusionMode::AoaOnly);
        let a = run_trial(&cfg, 7);
        let b = run_trial(&cfg, 7);
        let (ra, rb) = match (&a.outcome, &b.outcome) {
            (TrialOutcome::Success(x), TrialOutcome::Success(y)) => (x, y),
            other => panic!("expected two successes, got {other:?}"),
        };
        // bitwise determinism on everything but wall-clock timings
        assert_eq!(ra.ue_true, rb.ue_true);
        assert_eq!(ra.ue_est, rb.ue_est);
        assert!(ra.epsilon.to_bits() == rb.epsilon.to_bits());
        assert_eq!(ra.per_bs, rb.per_bs);
        // noiseless limit: within 2 grid spacings
        assert!(
            ra.epsilon <= 2.0 * cfg.grid.spacing,
            "noiseless epsilon {} too large",
            ra.epsilon
        );
    }

    #[test]
    fn campaign_accounts_for_every_trial() {
        let mut cfg = small_cfg(FusionMode::AoaOnly);
        cfg.sigmas.sigma_eta = 1.0_f64.to_radians();
        let n = 12;
        let result = run_campaign(&cfg, n, 2).unwrap();
        assert_eq!(result.records.len(), n as usize);
        assert_eq!(result.cdf.len() + result.n_failed, n as usize);
        // indices preserved in order
        for (i, r) in result.records.iter().enumerate() {
            assert_eq!(r.index, i as u64);
        }
    }

    #[test]
    fn campaign_is_worker_count_invariant() {
        let mut cfg = small_cfg(FusionMode::AoaPt);
        cfg.sigmas.sigma_eta = 1.0_f64.to_radians();
        cfg.sigmas.sigma_nu_pt = 0.5;
        let n = 8;
        let one = run_campaign(&cfg, n, 1).unwrap();
        let many = run_campaign(&cfg, n, 4).unwrap();
        assert_eq!(cdf_to_csv(&one.cdf), cdf_to_csv(&many.cdf));
        assert_eq!(trials_to_csv(&one.records), trials_to_csv(&many.records));
    }

    #[test]
    fn single_trial_campaign_is_a_step_cdf() {
        let cfg = small_cfg(FusionMode::AoaOnly);
        let result = run_campaign(&cfg, 1, 1).unwrap();
        assert_eq!(result.cdf.len(), 1);
        let e = result.cdf.samples()[0];
        assert_relative_eq!(result.cdf.fraction_at(e), 1.0);
        assert_relative_eq!(result.cdf.fraction_at(e - 1e-9), 0.0);
    }

    #[test]
    fn single_value_sweep_equals_campaign() {
        let mut cfg = small_cfg(FusionMode::AoaOnly);
        cfg.n_rays = 40;
        cfg.sigmas.sigma_eta = 0.5_f64.to_radians();
        let entries = sweep(
            &cfg,
            &SweepAxis::SigmaEta(vec![0.5_f64.to_radians()]),
            4,
            1,
        )
        .unwrap();
        assert_eq!(entries.len(), 1);
        let direct = run_campaign(&cfg, 4, 1).unwrap();
        assert_eq!(cdf_to_csv(&entries[0].result.cdf), cdf_to_csv(&direct.cdf));
        assert_eq!(
            trials_to_csv(&entries[0].result.records),
            trials_to_csv(&direct.records)
        );
    }

    #[test]
    fn sweep_shares_drops_across_values() {
        let mut cfg = small_cfg(FusionMode::AoaOnly);
        cfg.n_rays = 40;
        let axis = SweepAxis::SigmaEta(vec![0.25_f64.to_radians(), 1.0_f64.to_radians()]);
        let entries = sweep(&cfg, &axis, 3, 2).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].label, "sigma_eta_0.25deg");
        assert_eq!(entries[1].label, "sigma_eta_1deg");
        // common random numbers: identical trial indices share UE drops
        for (a, b) in entries[0].result.records.iter().zip(&entries[1].result.records) {
            if let (TrialOutcome::Success(x), TrialOutcome::Success(y)) = (&a.outcome, &b.outcome)
            {
                assert_eq!(x.ue_true, y.ue_true);
            }
        }
    }

    #[test]
    fn csv_outputs_are_stable() {
        let cdf = ErrorCdf::from_samples(vec![0.25, 0.5]);
        assert_eq!(
            cdf_to_csv(&cdf),
            "error_m,cdf\n0.250000,0.500000\n0.500000,1.000000\n"
        );

        let records = vec![TrialRecord {
            index: 3,
            outcome: TrialOutcome::Failed {
                ue_true: None,
                reason: "fewer than 2 usable base stations".into(),
            },
        }];
        let csv = trials_to_csv(&records);
        assert!(csv.contains("3,nan,nan,nan,nan,nan,nan,nan,failed: fewer than 2 usable"));
    }
}
