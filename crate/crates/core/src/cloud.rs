//! Monte-Carlo point-cloud generation per base station and fusion
//! down-selection.
//!
//! Clouds are built by launching rays from a BS — either around a measured
//! AoA according to its error statistics, or isotropically when no angle is
//! available — then tracing and discretizing them into [`PathPoint`]s.
//! PT fusion sorts the points by length into bins and, per sampled target
//! distance, picks a random point from the target's bin. RPT fusion does the
//! same over the length *differences* of point pairs from two BS, with the
//! pair table binned lazily so the full |P_i|·|P_j| product is never
//! materialized.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{unit_from_angles, wrap_spherical};
use crate::measure::{
    sample_pt_lengths, sample_rpt_deltas, AngleMeasurement, MeasurementSet, PtMeasurement,
    RptMeasurement,
};
use crate::scene::{PathPoint, Ray, Scene};

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("cloud for base station {0} is empty")]
    EmptyCloud(u32),
    #[error("no cloud provided for base station {0}")]
    MissingCloud(u32),
    #[error("PT measurement inconsistent with cloud geometry for base station {0}")]
    PtInconsistent(u32),
    #[error("RPT measurement inconsistent with cloud geometry for pair ({0}, {1})")]
    RptInconsistent(u32, u32),
    #[error("RPT pair ({0}, {1}) does not match clouds ({2}, {3})")]
    PairMismatch(u32, u32, u32, u32),
    #[error("fusion mode {mode} requires {kind} measurements but none are present")]
    MissingCategory { mode: FusionMode, kind: &'static str },
}

/// How a cloud was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    AoaOnly,
    AoaPt,
    AoaRpt,
    Isotropic,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::AoaOnly => "aoa-only",
            Provenance::AoaPt => "aoa+pt",
            Provenance::AoaRpt => "aoa+rpt",
            Provenance::Isotropic => "isotropic",
        };
        f.write_str(s)
    }
}

/// Length-annotated 3D points obtained from one base station's rays.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub bs_id: u32,
    pub points: Vec<PathPoint>,
    pub provenance: Provenance,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Ray launch parameters shared by the cloud generators.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct RayLaunchConfig {
    pub max_bounces: u32,
    /// Length cap standing in for "infinite" rays (meters).
    pub max_length: f64,
    /// Discretization step along each ray (meters).
    pub step: f64,
    /// Drop points outside the scene bounding box (positions outside the
    /// twin cannot contain the UE).
    pub clip_to_scene: bool,
}

impl Default for RayLaunchConfig {
    fn default() -> Self {
        RayLaunchConfig {
            max_bounces: 5,
            max_length: 100.0,
            step: 0.10,
            clip_to_scene: true,
        }
    }
}

/// Direction domain for isotropic launches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaunchDomain {
    Sphere,
    /// Only downward directions (z <= 0), for ceiling-mounted BS.
    LowerHemisphere,
}

fn trace_and_collect(
    scene: &Scene,
    bs_id: u32,
    origin: crate::geom::Point,
    directions: impl Iterator<Item = crate::geom::Vec3>,
    cfg: &RayLaunchConfig,
) -> Vec<PathPoint> {
    let mut points = Vec::new();
    let bbox = *scene.bounding_box();
    for (ray_index, dir) in directions.enumerate() {
        let ray = Ray::new(origin, dir, bs_id);
        let path = scene.trace(&ray, cfg.max_bounces, cfg.max_length);
        let sampled = path.discretize(cfg.step, ray_index as u32);
        if cfg.clip_to_scene {
            points.extend(
                sampled
                    .into_iter()
                    .filter(|p| bbox.contains(&p.position, 1e-6)),
            );
        } else {
            points.extend(sampled);
        }
    }
    points
}

/// Launch `n_rays` rays with directions drawn from the AoA error model
/// around the measured angles, trace and discretize each, and return the
/// union of path points.
pub fn generate_aoa_cloud(
    scene: &Scene,
    bs_id: u32,
    angle: &AngleMeasurement,
    n_rays: usize,
    cfg: &RayLaunchConfig,
    rng: &mut impl Rng,
) -> Result<PointCloud, CloudError> {
    let bs = scene
        .base_station(bs_id)
        .ok_or(CloudError::MissingCloud(bs_id))?;
    let sigma = angle.sigma_eta;
    let mut dirs = Vec::with_capacity(n_rays);
    for _ in 0..n_rays {
        let (az, el) = if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("valid sigma");
            wrap_spherical(
                angle.azimuth + normal.sample(rng),
                angle.elevation + normal.sample(rng),
            )
        } else {
            (angle.azimuth, angle.elevation)
        };
        dirs.push(unit_from_angles(az, el));
    }
    let points = trace_and_collect(scene, bs_id, bs.position, dirs.into_iter(), cfg);
    if points.is_empty() {
        return Err(CloudError::EmptyCloud(bs_id));
    }
    Ok(PointCloud {
        bs_id,
        points,
        provenance: Provenance::AoaOnly,
    })
}

/// Launch `n_rays` rays in uniformly random directions (full sphere or the
/// lower hemisphere), for the no-AoA case.
pub fn generate_isotropic_cloud(
    scene: &Scene,
    bs_id: u32,
    n_rays: usize,
    cfg: &RayLaunchConfig,
    domain: LaunchDomain,
    rng: &mut impl Rng,
) -> Result<PointCloud, CloudError> {
    let bs = scene
        .base_station(bs_id)
        .ok_or(CloudError::MissingCloud(bs_id))?;
    let mut dirs = Vec::with_capacity(n_rays);
    for _ in 0..n_rays {
        let v: [f64; 3] = UnitSphere.sample(rng);
        let mut d = crate::geom::Vec3::new(v[0], v[1], v[2]);
        if domain == LaunchDomain::LowerHemisphere && d.z > 0.0 {
            d.z = -d.z;
        }
        dirs.push(d);
    }
    let points = trace_and_collect(scene, bs_id, bs.position, dirs.into_iter(), cfg);
    if points.is_empty() {
        return Err(CloudError::EmptyCloud(bs_id));
    }
    Ok(PointCloud {
        bs_id,
        points,
        provenance: Provenance::Isotropic,
    })
}

/// Uniform-width bins over point lengths, with per-bin point-index lists.
#[derive(Debug, Clone)]
pub struct LengthBins {
    origin: f64,
    width: f64,
    bins: Vec<Vec<u32>>,
}

impl LengthBins {
    pub fn build(lengths: &[f64], width: f64) -> Self {
        debug_assert!(width > 0.0);
        debug_assert!(!lengths.is_empty());
        let min = lengths.iter().copied().fold(f64::INFINITY, f64::min);
        let max = lengths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let n_bins = ((max - min) / width).floor() as usize + 1;
        let mut bins = vec![Vec::new(); n_bins];
        for (i, &l) in lengths.iter().enumerate() {
            let k = (((l - min) / width) as usize).min(n_bins - 1);
            bins[k].push(i as u32);
        }
        LengthBins {
            origin: min,
            width,
            bins,
        }
    }

    /// Bin edges, strictly increasing; bin k spans `[edges[k], edges[k+1])`.
    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins.len())
            .map(|k| self.origin + k as f64 * self.width)
            .collect()
    }

    pub fn bin(&self, k: usize) -> &[u32] {
        &self.bins[k]
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    /// Signed bin coordinate of a value; may fall outside `0..n_bins`.
    fn raw_index(&self, value: f64) -> i64 {
        ((value - self.origin) / self.width).floor() as i64
    }
}

/// What to do when a sampled target lands in an empty bin.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyBinPolicy {
    /// Use the nearest non-empty bin within `max_bin_radius` bins, else
    /// redraw the target up to `max_redraws` times, else fail.
    NearestThenRedraw {
        max_bin_radius: usize,
        max_redraws: usize,
    },
    /// Skip draws landing in empty bins; fail only if nothing is selected.
    Disabled,
}

impl Default for EmptyBinPolicy {
    fn default() -> Self {
        EmptyBinPolicy::NearestThenRedraw {
            max_bin_radius: 3,
            max_redraws: 10,
        }
    }
}

/// "Bins of small size": fine enough that within-bin uniformity does not
/// distort the target law, coarse enough that bins stay populated.
pub fn default_bin_width(sigma_nu: f64, step: f64) -> f64 {
    (sigma_nu / 5.0).max(step / 2.0)
}

/// Find a usable bin for a target under the policy; `populated` reports
/// whether bin k holds at least one entry.
fn resolve_bin(
    origin: f64,
    width: f64,
    n_bins: usize,
    raw: i64,
    target: f64,
    radius: usize,
    populated: &mut impl FnMut(usize) -> bool,
) -> Option<usize> {
    let in_range = |k: i64| k >= 0 && (k as usize) < n_bins;
    if in_range(raw) && populated(raw as usize) {
        return Some(raw as usize);
    }
    let mut best: Option<(f64, usize)> = None;
    for d in 1..=radius as i64 {
        for k in [raw - d, raw + d] {
            if in_range(k) && populated(k as usize) {
                let center = origin + (k as f64 + 0.5) * width;
                let dist = (center - target).abs();
                let closer = best
                    .map(|(bd, bk)| dist < bd - 1e-15 || ((dist - bd).abs() <= 1e-15 && (k as usize) < bk))
                    .unwrap_or(true);
                if closer {
                    best = Some((dist, k as usize));
                }
            }
        }
        if best.is_some() {
            break;
        }
    }
    best.map(|(_, k)| k)
}

/// Result of a PT selection: the down-selected cloud plus, per output point,
/// the target length draw that selected it (for bin-soundness audits).
#[derive(Debug, Clone)]
pub struct PtSelection {
    pub cloud: PointCloud,
    pub targets: Vec<f64>,
}

/// Sort the cloud's points by length into bins, sample target distances from
/// the PT distribution, and pick one uniformly random point from each
/// target's bin (with replacement across draws).
pub fn select_by_pt(
    cloud: &PointCloud,
    pt: &PtMeasurement,
    n_select: usize,
    bin_width: f64,
    policy: EmptyBinPolicy,
    rng: &mut impl Rng,
) -> Result<PtSelection, CloudError> {
    if cloud.is_empty() {
        return Err(CloudError::EmptyCloud(cloud.bs_id));
    }
    let lengths: Vec<f64> = cloud.points.iter().map(|p| p.length).collect();
    let bins = LengthBins::build(&lengths, bin_width);
    let mut populated = |k: usize| !bins.bin(k).is_empty();

    let (radius, redraws) = match policy {
        EmptyBinPolicy::NearestThenRedraw {
            max_bin_radius,
            max_redraws,
        } => (max_bin_radius, max_redraws),
        EmptyBinPolicy::Disabled => (0, 0),
    };

    let mut points = Vec::with_capacity(n_select);
    let mut targets = Vec::with_capacity(n_select);
    for _ in 0..n_select {
        let mut chosen = None;
        for _attempt in 0..=redraws {
            let target = sample_pt_lengths(pt, 1, rng)[0];
            let raw = bins.raw_index(target);
            if let Some(k) = resolve_bin(
                bins.origin,
                bins.width,
                bins.n_bins(),
                raw,
                target,
                radius,
                &mut populated,
            ) {
                chosen = Some((target, k));
                break;
            }
        }
        match chosen {
            Some((target, k)) => {
                let bin = bins.bin(k);
                let idx = bin[rng.gen_range(0..bin.len())] as usize;
                points.push(cloud.points[idx]);
                targets.push(target);
            }
            None => {
                if !matches!(policy, EmptyBinPolicy::Disabled) {
                    return Err(CloudError::PtInconsistent(cloud.bs_id));
                }
            }
        }
    }
    if points.is_empty() {
        return Err(CloudError::PtInconsistent(cloud.bs_id));
    }
    Ok(PtSelection {
        cloud: PointCloud {
            bs_id: cloud.bs_id,
            points,
            provenance: Provenance::AoaPt,
        },
        targets,
    })
}

/// Alternative order for the PT algorithm: per ray, sample one distance and
/// keep the discretized point on that ray nearest to it.
pub fn select_by_pt_per_ray(
    cloud: &PointCloud,
    pt: &PtMeasurement,
    rng: &mut impl Rng,
) -> Result<PtSelection, CloudError> {
    if cloud.is_empty() {
        return Err(CloudError::EmptyCloud(cloud.bs_id));
    }
    let mut rays: HashMap<u32, Vec<usize>> = HashMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        rays.entry(p.ray_index).or_default().push(i);
    }
    let mut ray_ids: Vec<u32> = rays.keys().copied().collect();
    ray_ids.sort_unstable();

    let mut points = Vec::with_capacity(ray_ids.len());
    let mut targets = Vec::with_capacity(ray_ids.len());
    for ray in ray_ids {
        let target = sample_pt_lengths(pt, 1, rng)[0];
        let idx = rays[&ray]
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let da = (cloud.points[a].length - target).abs();
                let db = (cloud.points[b].length - target).abs();
                da.total_cmp(&db)
            })
            .expect("ray group non-empty");
        points.push(cloud.points[idx]);
        targets.push(target);
    }
    Ok(PtSelection {
        cloud: PointCloud {
            bs_id: cloud.bs_id,
            points,
            provenance: Provenance::AoaPt,
        },
        targets,
    })
}

/// Lazily binned table of pairwise length differences between two clouds.
///
/// Entry (a, b) is `length_a - length_b`. Bin supports are computed on first
/// touch from the two length-sorted clouds, so memory stays
/// O(|P_i| + |P_j| + touched bins) instead of O(|P_i|·|P_j|).
pub struct PairDifferenceTable {
    sorted_i: Vec<(f64, u32)>,
    sorted_j: Vec<(f64, u32)>,
    origin: f64,
    width: f64,
    n_bins: usize,
    supports: HashMap<usize, BinSupport>,
}

struct BinSupport {
    total: u64,
    /// Cumulative pair count over `sorted_i` entries.
    cum: Vec<u64>,
}

impl PairDifferenceTable {
    pub fn build(cloud_i: &PointCloud, cloud_j: &PointCloud, width: f64) -> Self {
        debug_assert!(width > 0.0);
        let mut sorted_i: Vec<(f64, u32)> = cloud_i
            .points
            .iter()
            .enumerate()
            .map(|(k, p)| (p.length, k as u32))
            .collect();
        sorted_i.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut sorted_j: Vec<(f64, u32)> = cloud_j
            .points
            .iter()
            .enumerate()
            .map(|(k, p)| (p.length, k as u32))
            .collect();
        sorted_j.sort_by(|a, b| a.0.total_cmp(&b.0));

        let min = sorted_i.first().map(|p| p.0).unwrap_or(0.0)
            - sorted_j.last().map(|p| p.0).unwrap_or(0.0);
        let max = sorted_i.last().map(|p| p.0).unwrap_or(0.0)
            - sorted_j.first().map(|p| p.0).unwrap_or(0.0);
        let n_bins = ((max - min) / width).floor() as usize + 1;

        PairDifferenceTable {
            sorted_i,
            sorted_j,
            origin: min,
            width,
            n_bins,
            supports: HashMap::new(),
        }
    }

    /// Total number of candidate pairs, |P_i| · |P_j|.
    pub fn pair_universe(&self) -> u64 {
        self.sorted_i.len() as u64 * self.sorted_j.len() as u64
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    fn raw_index(&self, delta: f64) -> i64 {
        ((delta - self.origin) / self.width).floor() as i64
    }

    /// Number of j-lengths in the half-open interval (lo, hi].
    fn count_j_in(&self, lo: f64, hi: f64) -> u64 {
        let upper = self.sorted_j.partition_point(|p| p.0 <= hi);
        let lower = self.sorted_j.partition_point(|p| p.0 <= lo);
        (upper - lower) as u64
    }

    fn support(&mut self, k: usize) -> &BinSupport {
        if !self.supports.contains_key(&k) {
            // pairs with delta in [lo, hi)  <=>  len_j in (len_i - hi, len_i - lo]
            let lo = self.origin + k as f64 * self.width;
            let hi = lo + self.width;
            let mut cum = Vec::with_capacity(self.sorted_i.len());
            let mut total = 0u64;
            for &(len_i, _) in &self.sorted_i {
                total += self.count_j_in(len_i - hi, len_i - lo);
                cum.push(total);
            }
            self.supports.insert(k, BinSupport { total, cum });
        }
        &self.supports[&k]
    }

    /// Pair count in bin k.
    pub fn bin_count(&mut self, k: usize) -> u64 {
        self.support(k).total
    }

    /// Pick a uniformly random pair from bin k, returning cloud-local point
    /// indices. `None` if the bin is empty.
    fn sample_pair(&mut self, k: usize, rng: &mut impl Rng) -> Option<(u32, u32)> {
        let lo = self.origin + k as f64 * self.width;
        let hi = lo + self.width;
        let total = self.support(k).total;
        if total == 0 {
            return None;
        }
        let r = rng.gen_range(0..total);
        let support = &self.supports[&k];
        let a = support.cum.partition_point(|&c| c <= r);
        let before = if a == 0 { 0 } else { support.cum[a - 1] };
        let offset = (r - before) as usize;
        let (len_i, idx_i) = self.sorted_i[a];
        let start = self.sorted_j.partition_point(|p| p.0 <= len_i - hi);
        let (_, idx_j) = self.sorted_j[start + offset];
        Some((idx_i, idx_j))
    }
}

/// Result of an RPT selection: down-selected clouds for both BS of the pair,
/// plus the target difference draw behind each selected pair.
#[derive(Debug, Clone)]
pub struct RptSelection {
    pub cloud_i: PointCloud,
    pub cloud_j: PointCloud,
    pub targets: Vec<f64>,
}

/// Bin the pairwise length differences of two clouds, sample target
/// differences from the RPT distribution, and pick one uniformly random pair
/// from each target's bin. Selected first elements accumulate into the BS-i
/// cloud, second elements into the BS-j cloud.
pub fn select_by_rpt(
    cloud_i: &PointCloud,
    cloud_j: &PointCloud,
    rpt: &RptMeasurement,
    n_select: usize,
    bin_width: f64,
    policy: EmptyBinPolicy,
    rng: &mut impl Rng,
) -> Result<RptSelection, CloudError> {
    if cloud_i.is_empty() {
        return Err(CloudError::EmptyCloud(cloud_i.bs_id));
    }
    if cloud_j.is_empty() {
        return Err(CloudError::EmptyCloud(cloud_j.bs_id));
    }
    if rpt.bs_pair != (cloud_i.bs_id, cloud_j.bs_id) {
        return Err(CloudError::PairMismatch(
            rpt.bs_pair.0,
            rpt.bs_pair.1,
            cloud_i.bs_id,
            cloud_j.bs_id,
        ));
    }

    let mut table = PairDifferenceTable::build(cloud_i, cloud_j, bin_width);

    let (radius, redraws) = match policy {
        EmptyBinPolicy::NearestThenRedraw {
            max_bin_radius,
            max_redraws,
        } => (max_bin_radius, max_redraws),
        EmptyBinPolicy::Disabled => (0, 0),
    };

    let mut points_i = Vec::with_capacity(n_select);
    let mut points_j = Vec::with_capacity(n_select);
    let mut targets = Vec::with_capacity(n_select);
    for _ in 0..n_select {
        let mut chosen = None;
        for _attempt in 0..=redraws {
            let target = sample_rpt_deltas(rpt, 1, rng)[0];
            let raw = table.raw_index(target);
            let (origin, width, n_bins) = (table.origin, table.width, table.n_bins);
            let mut populated = |k: usize| table.bin_count(k) > 0;
            if let Some(k) = resolve_bin(origin, width, n_bins, raw, target, radius, &mut populated)
            {
                chosen = Some((target, k));
                break;
            }
        }
        match chosen {
            Some((target, k)) => {
                let (a, b) = table.sample_pair(k, rng).expect("bin verified non-empty");
                points_i.push(cloud_i.points[a as usize]);
                points_j.push(cloud_j.points[b as usize]);
                targets.push(target);
            }
            None => {
                if !matches!(policy, EmptyBinPolicy::Disabled) {
                    return Err(CloudError::RptInconsistent(cloud_i.bs_id, cloud_j.bs_id));
                }
            }
        }
    }
    if points_i.is_empty() {
        return Err(CloudError::RptInconsistent(cloud_i.bs_id, cloud_j.bs_id));
    }
    Ok(RptSelection {
        cloud_i: PointCloud {
            bs_id: cloud_i.bs_id,
            points: points_i,
            provenance: Provenance::AoaRpt,
        },
        cloud_j: PointCloud {
            bs_id: cloud_j.bs_id,
            points: points_j,
            provenance: Provenance::AoaRpt,
        },
        targets,
    })
}

/// Measurement categories fused on top of the AoA clouds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionMode {
    #[serde(rename = "aoa")]
    AoaOnly,
    #[serde(rename = "aoa+pt")]
    AoaPt,
    #[serde(rename = "aoa+rpt")]
    AoaRpt,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FusionMode::AoaOnly => "aoa",
            FusionMode::AoaPt => "aoa+pt",
            FusionMode::AoaRpt => "aoa+rpt",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "aoa" => Ok(FusionMode::AoaOnly),
            "aoa+pt" => Ok(FusionMode::AoaPt),
            "aoa+rpt" => Ok(FusionMode::AoaRpt),
            other => Err(format!(
                "unknown fusion mode {other:?} (expected aoa, aoa+pt, or aoa+rpt)"
            )),
        }
    }
}

/// Which order the PT selection follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionOrder {
    /// Bin the points first, then sample distances (algorithm text order).
    #[default]
    BinThenSample,
    /// Sample one distance per ray and keep that ray's nearest point.
    PerRay,
}

/// Down-selection configuration for [`apply_fusion`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub n_select: usize,
    /// Bin width override; `None` derives `max(sigma_nu/5, step/2)`.
    pub bin_width: Option<f64>,
    pub policy: EmptyBinPolicy,
    pub order: SelectionOrder,
    /// Discretization step of the input clouds (for the default bin width).
    pub step: f64,
}

impl FusionConfig {
    pub fn aoa_only() -> Self {
        FusionConfig {
            mode: FusionMode::AoaOnly,
            n_select: 2000,
            bin_width: None,
            policy: EmptyBinPolicy::default(),
            order: SelectionOrder::default(),
            step: 0.10,
        }
    }
}

/// Dispatch the configured down-selection over per-BS clouds: PT selection
/// per BS, RPT selection per measured pair (each BS keeps the union over its
/// pairs), or passthrough for AoA-only. Base stations without a matching
/// measurement pass through unchanged.
pub fn apply_fusion(
    clouds: &[PointCloud],
    measurements: &MeasurementSet,
    cfg: &FusionConfig,
    rng: &mut impl Rng,
) -> Result<Vec<PointCloud>, CloudError> {
    match cfg.mode {
        FusionMode::AoaOnly => Ok(clouds.to_vec()),
        FusionMode::AoaPt => {
            if measurements.pt.is_empty() {
                return Err(CloudError::MissingCategory {
                    mode: cfg.mode,
                    kind: "PT",
                });
            }
            let mut out = Vec::with_capacity(clouds.len());
            for cloud in clouds {
                match measurements.pt_for(cloud.bs_id) {
                    Some(pt) => {
                        let width = cfg
                            .bin_width
                            .unwrap_or_else(|| default_bin_width(pt.sigma_nu, cfg.step));
                        let sel = match cfg.order {
                            SelectionOrder::BinThenSample => {
                                select_by_pt(cloud, pt, cfg.n_select, width, cfg.policy, rng)?
                            }
                            SelectionOrder::PerRay => select_by_pt_per_ray(cloud, pt, rng)?,
                        };
                        out.push(sel.cloud);
                    }
                    None => out.push(cloud.clone()),
                }
            }
            Ok(out)
        }
        FusionMode::AoaRpt => {
            if measurements.rpt.is_empty() {
                return Err(CloudError::MissingCategory {
                    mode: cfg.mode,
                    kind: "RPT",
                });
            }
            let find = |id: u32| {
                clouds
                    .iter()
                    .find(|c| c.bs_id == id)
                    .ok_or(CloudError::MissingCloud(id))
            };
            let mut selected: HashMap<u32, Vec<PathPoint>> = HashMap::new();
            for rpt in &measurements.rpt {
                let ci = find(rpt.bs_pair.0)?;
                let cj = find(rpt.bs_pair.1)?;
                let width = cfg
                    .bin_width
                    .unwrap_or_else(|| default_bin_width(rpt.sigma_nu, cfg.step));
                let sel = select_by_rpt(ci, cj, rpt, cfg.n_select, width, cfg.policy, rng)?;
                selected
                    .entry(rpt.bs_pair.0)
                    .or_default()
                    .extend(sel.cloud_i.points);
                selected
                    .entry(rpt.bs_pair.1)
                    .or_default()
                    .extend(sel.cloud_j.points);
            }
            let mut out = Vec::with_capacity(clouds.len());
            for cloud in clouds {
                match selected.remove(&cloud.bs_id) {
                    Some(points) => {
                        if points.is_empty() {
                            return Err(CloudError::EmptyCloud(cloud.bs_id));
                        }
                        out.push(PointCloud {
                            bs_id: cloud.bs_id,
                            points,
                            provenance: Provenance::AoaRpt,
                        });
                    }
                    None => out.push(cloud.clone()),
                }
            }
            Ok(out)
        }
    }
}

/// CSV dump of per-BS clouds: `bs_id,x,y,z,length,provenance`.
pub fn clouds_to_csv(clouds: &[PointCloud]) -> String {
    let mut out = String::from("bs_id,x,y,z,length,provenance\n");
    for cloud in clouds {
        for p in &cloud.points {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{}\n",
                cloud.bs_id, p.position.x, p.position.y, p.position.z, p.length, cloud.provenance
            ));
        }
    }
    out
}
