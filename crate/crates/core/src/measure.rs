//! Measurement generation and error models: true AoA/PT/RPT observables for
//! a ground-truth drop, Gaussian perturbation, and the per-measurement
//! densities and samplers used by the fusion algorithms.
//!
//! All angles are radians, lengths meters, times seconds. Noise is Gaussian:
//! azimuth and elevation are perturbed independently with the same sigma,
//! PT-equivalent lengths and RPT length differences with their own sigmas.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{
    angle_difference, angles_from_unit, point_segment_distance, unit_from_angles, wrap_spherical,
    Point,
};
use crate::scene::{Ray, Scene};

/// Signal propagation speed (speed of light, m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("UE position lies outside the scene bounding box")]
    UeOutsideScene,
    #[error("sigma is zero: density degenerates to a point mass")]
    DegenerateSigma,
    #[error("duplicate {kind} measurement for base station {id}")]
    DuplicateMeasurement { kind: &'static str, id: u32 },
}

/// Noisy angle-of-arrival measurement at one base station.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AngleMeasurement {
    pub bs_id: u32,
    /// Azimuth in (-pi, pi].
    pub azimuth: f64,
    /// Elevation in [-pi/2, pi/2].
    pub elevation: f64,
    /// Noise standard deviation applied per angular component (radians).
    pub sigma_eta: f64,
}

/// Noisy propagation-time measurement, carried as its length equivalent.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PtMeasurement {
    pub bs_id: u32,
    /// Measured propagation time in seconds.
    pub time: f64,
    /// `time * c`, the path-length equivalent in meters.
    pub equivalent_length: f64,
    /// Noise standard deviation on the length (meters).
    pub sigma_nu: f64,
}

impl PtMeasurement {
    pub fn from_length(bs_id: u32, length: f64, sigma_nu: f64) -> Self {
        PtMeasurement {
            bs_id,
            time: length / SPEED_OF_LIGHT,
            equivalent_length: length,
            sigma_nu,
        }
    }

    pub fn from_time(bs_id: u32, time: f64, sigma_nu: f64) -> Self {
        PtMeasurement {
            bs_id,
            time,
            equivalent_length: time * SPEED_OF_LIGHT,
            sigma_nu,
        }
    }
}

/// Noisy relative-propagation-time (TDoA-derived) measurement for a BS pair,
/// carried as a signed path-length difference `length_i - length_j`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RptMeasurement {
    pub bs_pair: (u32, u32),
    pub delta_length: f64,
    pub sigma_nu: f64,
}

impl RptMeasurement {
    /// The same measurement seen from the swapped pair order.
    pub fn negated(&self) -> Self {
        RptMeasurement {
            bs_pair: (self.bs_pair.1, self.bs_pair.0),
            delta_length: -self.delta_length,
            sigma_nu: self.sigma_nu,
        }
    }
}

/// The measurement vector for one positioning problem: per-BS AoA plus
/// optional PT and RPT entries.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub aoa: Vec<AngleMeasurement>,
    pub pt: Vec<PtMeasurement>,
    pub rpt: Vec<RptMeasurement>,
}

impl MeasurementSet {
    /// Enforce "at most one measurement per category per BS (or BS pair)".
    pub fn validate(&self) -> Result<(), MeasureError> {
        let mut seen = Vec::new();
        for m in &self.aoa {
            if seen.contains(&m.bs_id) {
                return Err(MeasureError::DuplicateMeasurement {
                    kind: "AoA",
                    id: m.bs_id,
                });
            }
            seen.push(m.bs_id);
        }
        seen.clear();
        for m in &self.pt {
            if seen.contains(&m.bs_id) {
                return Err(MeasureError::DuplicateMeasurement {
                    kind: "PT",
                    id: m.bs_id,
                });
            }
            seen.push(m.bs_id);
        }
        let mut pairs = Vec::new();
        for m in &self.rpt {
            let key = (m.bs_pair.0.min(m.bs_pair.1), m.bs_pair.0.max(m.bs_pair.1));
            if pairs.contains(&key) {
                return Err(MeasureError::DuplicateMeasurement {
                    kind: "RPT",
                    id: key.0,
                });
            }
            pairs.push(key);
        }
        Ok(())
    }

    pub fn aoa_for(&self, bs_id: u32) -> Option<&AngleMeasurement> {
        self.aoa.iter().find(|m| m.bs_id == bs_id)
    }

    pub fn pt_for(&self, bs_id: u32) -> Option<&PtMeasurement> {
        self.pt.iter().find(|m| m.bs_id == bs_id)
    }
}

/// The true arrival (dominant path) at one base station: launch direction of
/// the reverse ray and the path length from the BS to the UE along it.
#[derive(Debug, Clone, Copy)]
pub struct TrueArrival {
    pub bs_id: u32,
    pub azimuth: f64,
    pub elevation: f64,
    pub path_length: f64,
    pub bounces: u32,
    /// Residual distance between the traced path and the UE (diagnostics).
    pub miss: f64,
}

/// Ground truth for one simulated drop.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub ue_position: Point,
    pub arrivals: Vec<TrueArrival>,
    /// Base stations for which no specular path to the UE was found.
    pub unreachable: Vec<u32>,
}

/// Controls the sampled forward search behind [`true_observables`].
#[derive(Debug, Clone, Copy)]
pub struct TruthSearchConfig {
    /// Coarse directions on the unit sphere (Fibonacci lattice).
    pub n_dirs: usize,
    /// Length cap for search rays (meters).
    pub max_length: f64,
    /// A refined path must approach the UE closer than this to count (m).
    pub capture_radius: f64,
}

impl Default for TruthSearchConfig {
    fn default() -> Self {
        TruthSearchConfig {
            n_dirs: 4096,
            max_length: 60.0,
            capture_radius: 1e-4,
        }
    }
}

/// Closest approach of a traced path to a target point: (miss distance,
/// arc length at the closest point, bounces taken before reaching it).
fn closest_approach(path: &crate::scene::TracedPath, target: &Point) -> (f64, f64, u32) {
    let verts = path.vertices();
    let cums = path.cumulative_lengths();
    let mut best = (f64::INFINITY, 0.0, 0u32);
    for i in 1..verts.len() {
        let (miss, offset) = point_segment_distance(target, &verts[i - 1], &verts[i]);
        if miss < best.0 - 1e-12 {
            best = (miss, cums[i - 1] + offset, (i - 1) as u32);
        }
    }
    best
}

/// Evaluate one candidate launch direction for the truth search.
#[allow(clippy::too_many_arguments)]
fn eval_direction(
    scene: &Scene,
    bs_pos: &Point,
    bs_id: u32,
    ue: &Point,
    azimuth: f64,
    elevation: f64,
    max_bounces: u32,
    max_length: f64,
) -> (f64, f64, u32) {
    let ray = Ray::new(*bs_pos, unit_from_angles(azimuth, elevation), bs_id);
    let path = scene.trace(&ray, max_bounces, max_length);
    closest_approach(&path, ue)
}

/// Pattern search on (azimuth, elevation) minimizing the miss distance.
#[allow(clippy::too_many_arguments)]
fn refine_direction(
    scene: &Scene,
    bs_pos: &Point,
    bs_id: u32,
    ue: &Point,
    start: (f64, f64),
    initial_step: f64,
    max_bounces: u32,
    max_length: f64,
) -> (f64, f64, f64, f64, u32) {
    let (mut az, mut el) = start;
    let (mut miss, mut arc, mut bounces) =
        eval_direction(scene, bs_pos, bs_id, ue, az, el, max_bounces, max_length);
    let mut h = initial_step;
    let mut iters = 0;
    while h > 1e-10 && miss > 1e-9 && iters < 400 {
        iters += 1;
        let mut improved = false;
        for (da, de) in [(h, 0.0), (-h, 0.0), (0.0, h), (0.0, -h)] {
            let (a2, e2) = wrap_spherical(az + da, el + de);
            let (m2, l2, b2) =
                eval_direction(scene, bs_pos, bs_id, ue, a2, e2, max_bounces, max_length);
            if m2 < miss {
                az = a2;
                el = e2;
                miss = m2;
                arc = l2;
                bounces = b2;
                improved = true;
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    (az, el, miss, arc, bounces)
}

/// For each base station, find the arrival direction and path length of the
/// shortest valid specular path BS→UE. Line of sight is used when
/// unobstructed; otherwise a deterministic sampled forward search over launch
/// directions is refined until the traced path passes through the UE.
pub fn true_observables(
    scene: &Scene,
    ue: &Point,
    max_bounces: u32,
    search: &TruthSearchConfig,
) -> Result<GroundTruth, MeasureError> {
    if !scene.bounding_box().contains(ue, 1e-9) {
        return Err(MeasureError::UeOutsideScene);
    }

    let mut arrivals = Vec::new();
    let mut unreachable = Vec::new();

    for bs in scene.base_stations() {
        // Line of sight first: exact and cheap.
        let to_ue = ue - bs.position;
        let dist = to_ue.norm();
        if dist > 0.0 {
            let dir = to_ue / dist;
            let blocked = scene
                .intersect(&bs.position, &dir)
                .map(|hit| hit.distance < dist - 1e-9)
                .unwrap_or(false);
            if !blocked {
                let (azimuth, elevation) = angles_from_unit(&dir);
                arrivals.push(TrueArrival {
                    bs_id: bs.id,
                    azimuth,
                    elevation,
                    path_length: dist,
                    bounces: 0,
                    miss: 0.0,
                });
                continue;
            }
        }

        match search_nlos_arrival(scene, bs.id, &bs.position, ue, max_bounces, search) {
            Some(arrival) => arrivals.push(arrival),
            None => unreachable.push(bs.id),
        }
    }

    Ok(GroundTruth {
        ue_position: *ue,
        arrivals,
        unreachable,
    })
}

fn search_nlos_arrival(
    scene: &Scene,
    bs_id: u32,
    bs_pos: &Point,
    ue: &Point,
    max_bounces: u32,
    search: &TruthSearchConfig,
) -> Option<TrueArrival> {
    // Coarse pass: Fibonacci sphere lattice.
    let n = search.n_dirs.max(16);
    let golden_angle = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    let mut candidates: Vec<(f64, f64, f64)> = Vec::with_capacity(n); // (miss, az, el)
    for i in 0..n {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).max(0.0).sqrt();
        let phi = golden_angle * i as f64;
        let dir = crate::geom::Vec3::new(r * phi.cos(), r * phi.sin(), z);
        let (az, el) = angles_from_unit(&dir);
        let (miss, _, _) =
            eval_direction(scene, bs_pos, bs_id, ue, az, el, max_bounces, search.max_length);
        candidates.push((miss, az, el));
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Refine a handful of well-separated starts so distinct reflection
    // branches each get a chance; keep the shortest valid refined path.
    let spacing = (4.0 * std::f64::consts::PI / n as f64).sqrt();
    let mut starts: Vec<(f64, f64)> = Vec::new();
    for &(_, az, el) in candidates.iter() {
        let dir = unit_from_angles(az, el);
        let separated = starts
            .iter()
            .all(|&(a2, e2)| unit_from_angles(a2, e2).dot(&dir) < (2.5 * spacing).cos());
        if separated {
            starts.push((az, el));
        }
        if starts.len() >= 6 {
            break;
        }
    }

    let mut best: Option<TrueArrival> = None;
    for start in starts {
        let (az, el, miss, arc, bounces) = refine_direction(
            scene,
            bs_pos,
            bs_id,
            ue,
            start,
            spacing,
            max_bounces,
            search.max_length,
        );
        if miss <= search.capture_radius {
            let better = best
                .as_ref()
                .map(|b| arc < b.path_length - 1e-9)
                .unwrap_or(true);
            if better {
                best = Some(TrueArrival {
                    bs_id,
                    azimuth: az,
                    elevation: el,
                    path_length: arc,
                    bounces,
                    miss,
                });
            }
        }
    }
    best
}

/// Noise standard deviations for [`perturb`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseSigmas {
    /// AoA noise per angular component (radians).
    pub sigma_eta: f64,
    /// PT length noise (meters).
    pub sigma_nu_pt: f64,
    /// RPT length-difference noise (meters).
    pub sigma_nu_rpt: f64,
}

/// Which BS pairs receive an RPT measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RptTopology {
    /// Every unordered pair (i, j), i < j.
    AllPairs,
    /// Pairs (i, reference) for every other BS i.
    Reference(u32),
}

/// Which measurement categories [`perturb`] emits.
#[derive(Debug, Clone, Copy)]
pub struct PerturbCategories {
    pub aoa: bool,
    pub pt: bool,
    pub rpt: Option<RptTopology>,
}

impl PerturbCategories {
    pub fn aoa_only() -> Self {
        PerturbCategories {
            aoa: true,
            pt: false,
            rpt: None,
        }
    }
}

/// Draw a Gaussian perturbation, returning 0 for sigma = 0.
fn gauss(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("valid sigma").sample(rng)
}

/// Apply the Gaussian error model to ground-truth observables. Azimuth and
/// elevation are perturbed independently by N(0, sigma_eta^2); PT lengths by
/// N(0, sigma_nu_pt^2) clamped at 0; RPT differences by N(0, sigma_nu_rpt^2).
pub fn perturb(
    truth: &GroundTruth,
    sigmas: &NoiseSigmas,
    categories: &PerturbCategories,
    rng: &mut impl Rng,
) -> MeasurementSet {
    let mut set = MeasurementSet::default();

    if categories.aoa {
        for a in &truth.arrivals {
            let (azimuth, elevation) = wrap_spherical(
                a.azimuth + gauss(rng, sigmas.sigma_eta),
                a.elevation + gauss(rng, sigmas.sigma_eta),
            );
            set.aoa.push(AngleMeasurement {
                bs_id: a.bs_id,
                azimuth,
                elevation,
                sigma_eta: sigmas.sigma_eta,
            });
        }
    }

    if categories.pt {
        for a in &truth.arrivals {
            let length = (a.path_length + gauss(rng, sigmas.sigma_nu_pt)).max(0.0);
            set.pt
                .push(PtMeasurement::from_length(a.bs_id, length, sigmas.sigma_nu_pt));
        }
    }

    if let Some(topology) = categories.rpt {
        let mut ids: Vec<u32> = truth.arrivals.iter().map(|a| a.bs_id).collect();
        ids.sort_unstable();
        let length_of = |id: u32| {
            truth
                .arrivals
                .iter()
                .find(|a| a.bs_id == id)
                .map(|a| a.path_length)
                .expect("id from arrivals")
        };
        let pairs: Vec<(u32, u32)> = match topology {
            RptTopology::AllPairs => ids
                .iter()
                .enumerate()
                .flat_map(|(k, &i)| ids[k + 1..].iter().map(move |&j| (i, j)))
                .collect(),
            RptTopology::Reference(r) => ids
                .iter()
                .filter(|&&i| i != r && ids.contains(&r))
                .map(|&i| (i, r))
                .collect(),
        };
        for (i, j) in pairs {
            let delta = length_of(i) - length_of(j) + gauss(rng, sigmas.sigma_nu_rpt);
            set.rpt.push(RptMeasurement {
                bs_pair: (i, j),
                delta_length: delta,
                sigma_nu: sigmas.sigma_nu_rpt,
            });
        }
    }

    set
}

/// Log-density of a candidate (azimuth, elevation) under the AoA error model
/// of `measured`: two independent Gaussians with azimuth wrap-around.
pub fn aoa_log_density(
    measured: &AngleMeasurement,
    candidate: (f64, f64),
) -> Result<f64, MeasureError> {
    let sigma = measured.sigma_eta;
    if sigma <= 0.0 {
        return Err(MeasureError::DegenerateSigma);
    }
    let daz = angle_difference(candidate.0, measured.azimuth);
    let del = candidate.1 - measured.elevation;
    let two_pi = 2.0 * std::f64::consts::PI;
    Ok(-(two_pi * sigma * sigma).ln() - 0.5 * (daz * daz + del * del) / (sigma * sigma))
}

/// Draw target lengths from the PT distribution N(L, sigma_nu^2), clamped
/// at 0 (negative path lengths are not physical).
pub fn sample_pt_lengths(pt: &PtMeasurement, count: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..count)
        .map(|_| (pt.equivalent_length + gauss(rng, pt.sigma_nu)).max(0.0))
        .collect()
}

/// Draw target length differences from the RPT distribution
/// N(delta_length, sigma_nu^2); differences may be negative.
pub fn sample_rpt_deltas(rpt: &RptMeasurement, count: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..count)
        .map(|_| rpt.delta_length + gauss(rng, rpt.sigma_nu))
        .collect()
}
