//! 3D Gaussian mixtures fitted by expectation-maximization on per-BS point
//! clouds, the product-of-mixtures posterior evaluated over a grid, and
//! argmax position estimation.
//!
//! Covariances are kept positive definite by flooring their eigenvalues at a
//! configurable minimum; this is the constrained M-step maximizer, so the
//! per-iteration log-likelihood stays non-decreasing. Mixture evaluation is
//! done in log space throughout.

use nalgebra::{Matrix3, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::geom::{Point, Vec3};
use crate::scene::Aabb;

/// Per-BS per-cell density floor: near the smallest positive f64 magnitude
/// in log space, so one vanishing density vetoes a cell without producing
/// non-finite values.
pub const LOG_FLOOR: f64 = -745.0;

const LOG_2PI: f64 = 1.8378770664093453; // ln(2*pi)

#[derive(Debug, Error)]
pub enum GmmError {
    #[error("{points} points cannot support {k} mixture components")]
    TooFewPoints { points: usize, k: usize },
    #[error("component weights must be positive and sum to 1 (sum = {0})")]
    BadWeights(f64),
    #[error("covariance of component {0} is not symmetric positive definite")]
    BadCovariance(usize),
}

/// One mixture component with cached Cholesky data for fast evaluation.
#[derive(Debug, Clone)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec3,
    pub cov: Matrix3<f64>,
    /// Inverse of the lower Cholesky factor of `cov`.
    chol_inv: Matrix3<f64>,
    /// `-0.5 (3 ln 2pi + ln det cov)`.
    log_norm: f64,
}

impl Component {
    fn build(weight: f64, mean: Vec3, cov: Matrix3<f64>, index: usize) -> Result<Self, GmmError> {
        let sym = 0.5 * (cov + cov.transpose());
        let chol = nalgebra::Cholesky::new(sym).ok_or(GmmError::BadCovariance(index))?;
        let l = chol.l();
        let log_det = 2.0 * (l[(0, 0)].ln() + l[(1, 1)].ln() + l[(2, 2)].ln());
        let chol_inv = l.try_inverse().ok_or(GmmError::BadCovariance(index))?;
        Ok(Component {
            weight,
            mean,
            cov: sym,
            chol_inv,
            log_norm: -0.5 * (3.0 * LOG_2PI + log_det),
        })
    }

    /// Log-density of the component (without the weight factor).
    fn log_density(&self, x: &Point) -> f64 {
        let d = x.coords - self.mean;
        let y = self.chol_inv * d;
        self.log_norm - 0.5 * y.norm_squared()
    }
}

/// A 3D Gaussian mixture: positive weights summing to 1 and symmetric
/// positive-definite covariances.
#[derive(Debug, Clone)]
pub struct GaussianMixture3 {
    components: Vec<Component>,
}

impl GaussianMixture3 {
    pub fn new(parts: Vec<(f64, Vec3, Matrix3<f64>)>) -> Result<Self, GmmError> {
        let sum: f64 = parts.iter().map(|p| p.0).sum();
        if parts.is_empty() || parts.iter().any(|p| p.0 <= 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(GmmError::BadWeights(sum));
        }
        let components = parts
            .into_iter()
            .enumerate()
            .map(|(i, (w, m, c))| Component::build(w, m, c, i))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GaussianMixture3 { components })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// `log sum_k w_k N(x; mu_k, cov_k)`, computed with a streaming
    /// log-sum-exp.
    pub fn log_pdf(&self, x: &Point) -> f64 {
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for c in &self.components {
            let a = c.weight.ln() + c.log_density(x);
            if a > max {
                sum = if max == f64::NEG_INFINITY {
                    1.0
                } else {
                    sum * (max - a).exp() + 1.0
                };
                max = a;
            } else if a > max - 40.0 {
                sum += (a - max).exp();
            }
        }
        if max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            max + sum.ln()
        }
    }
}

/// EM fitting parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Relative log-likelihood change below which EM stops.
    pub tol: f64,
    /// Eigenvalue floor for covariances (m^2). Prevents line-degenerate
    /// components collapsing on collinear ray points.
    pub lambda_min: f64,
    /// Random restarts; the best final log-likelihood wins.
    pub n_init: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 200,
            tol: 1e-6,
            // (default discretization step / 2)^2
            lambda_min: 0.05 * 0.05,
            n_init: 4,
        }
    }
}

/// Fit diagnostics: the log-likelihood after every E step.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
    pub n_points: usize,
}

impl FitReport {
    pub fn final_log_likelihood(&self) -> f64 {
        *self
            .log_likelihoods
            .last()
            .expect("at least one E step runs")
    }
}

/// Clamp the eigenvalues of a symmetric matrix to at least `floor`.
fn floor_covariance(cov: &Matrix3<f64>, floor: f64) -> Matrix3<f64> {
    let sym = 0.5 * (cov + cov.transpose());
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|v| v.max(floor));
    let q = eig.eigenvectors;
    let rebuilt = q * Matrix3::from_diagonal(&clamped) * q.transpose();
    0.5 * (rebuilt + rebuilt.transpose())
}

fn sample_mean_cov(data: &[Vec3]) -> (Vec3, Matrix3<f64>) {
    let n = data.len().max(1) as f64;
    let mean = data.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for x in data {
        let d = x - mean;
        cov += d * d.transpose();
    }
    (mean, cov / n)
}

/// k-means++ seeding followed by a few Lloyd iterations; returns per-point
/// cluster assignments.
fn kmeans_assignments(data: &[Vec3], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = data.len();
    let mut centers: Vec<Vec3> = Vec::with_capacity(k);
    centers.push(data[rng.gen_range(0..n)]);
    let mut dist2: Vec<f64> = data
        .iter()
        .map(|x| (x - centers[0]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total <= 0.0 {
            data[rng.gen_range(0..n)]
        } else {
            let mut r = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in dist2.iter().enumerate() {
                r -= d;
                if r <= 0.0 {
                    pick = i;
                    break;
                }
            }
            data[pick]
        };
        centers.push(next);
        for (i, x) in data.iter().enumerate() {
            dist2[i] = dist2[i].min((x - next).norm_squared());
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..5 {
        for (i, x) in data.iter().enumerate() {
            assign[i] = centers
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    (x - *a).norm_squared().total_cmp(&(x - *b).norm_squared())
                })
                .map(|(j, _)| j)
                .expect("k >= 1");
        }
        let mut sums = vec![Vec3::zeros(); k];
        let mut counts = vec![0usize; k];
        for (i, x) in data.iter().enumerate() {
            sums[assign[i]] += x;
            counts[assign[i]] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j] / counts[j] as f64;
            }
        }
    }
    assign
}

struct EmState {
    weights: Vec<f64>,
    means: Vec<Vec3>,
    covs: Vec<Matrix3<f64>>,
}

fn initial_state(data: &[Vec3], k: usize, lambda_min: f64, rng: &mut impl Rng) -> EmState {
    let n = data.len();
    let (_, global_cov) = sample_mean_cov(data);
    let global_cov = floor_covariance(&global_cov, lambda_min);
    let assign = kmeans_assignments(data, k, rng);

    let mut weights = vec![0.0; k];
    let mut means = vec![Vec3::zeros(); k];
    let mut covs = vec![Matrix3::zeros(); k];
    for j in 0..k {
        let cluster: Vec<Vec3> = data
            .iter()
            .zip(&assign)
            .filter(|(_, &a)| a == j)
            .map(|(x, _)| *x)
            .collect();
        if cluster.is_empty() {
            weights[j] = 1.0 / n as f64;
            means[j] = data[rng.gen_range(0..n)];
            covs[j] = global_cov;
        } else {
            let (m, c) = sample_mean_cov(&cluster);
            weights[j] = cluster.len() as f64 / n as f64;
            means[j] = m;
            covs[j] = floor_covariance(&c, lambda_min);
        }
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    EmState {
        weights,
        means,
        covs,
    }
}

fn run_em(
    data: &[Vec3],
    mut state: EmState,
    cfg: &EmConfig,
    rng: &mut impl Rng,
) -> (EmState, Vec<f64>, bool) {
    let n = data.len();
    let k = state.weights.len();
    let mut lls: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut log_terms = vec![0.0f64; k];
    // per-component sufficient statistics: N_k, sum r x (3), sum r x x^T (6)
    let mut stats = vec![0.0f64; k * 10];

    for _iter in 0..cfg.max_iters {
        // flat per-component evaluation data for the hot loop
        let comps: Vec<Component> = (0..k)
            .map(|j| {
                Component::build(state.weights[j], state.means[j], state.covs[j], j)
                    .expect("floored covariance is positive definite")
            })
            .collect();
        let flat: Vec<([f64; 3], [f64; 6], f64)> = comps
            .iter()
            .map(|c| {
                let l = &c.chol_inv;
                (
                    [c.mean.x, c.mean.y, c.mean.z],
                    [
                        l[(0, 0)],
                        l[(1, 0)],
                        l[(1, 1)],
                        l[(2, 0)],
                        l[(2, 1)],
                        l[(2, 2)],
                    ],
                    c.weight.ln() + c.log_norm,
                )
            })
            .collect();

        // fused E and M accumulation pass
        stats.iter_mut().for_each(|s| *s = 0.0);
        let mut ll = 0.0;
        for x in data {
            let mut max = f64::NEG_INFINITY;
            for (j, (mean, linv, bias)) in flat.iter().enumerate() {
                let d0 = x.x - mean[0];
                let d1 = x.y - mean[1];
                let d2 = x.z - mean[2];
                let y0 = linv[0] * d0;
                let y1 = linv[1] * d0 + linv[2] * d1;
                let y2 = linv[3] * d0 + linv[4] * d1 + linv[5] * d2;
                let a = bias - 0.5 * (y0 * y0 + y1 * y1 + y2 * y2);
                log_terms[j] = a;
                if a > max {
                    max = a;
                }
            }
            let mut sum = 0.0;
            for lt in log_terms.iter() {
                if lt - max > -40.0 {
                    sum += (lt - max).exp();
                }
            }
            let lse = max + sum.ln();
            ll += lse;
            for (j, lt) in log_terms.iter().enumerate() {
                // responsibilities below ~1e-17 contribute nothing
                if lt - lse <= -40.0 {
                    continue;
                }
                let r = (lt - lse).exp();
                let s = &mut stats[j * 10..j * 10 + 10];
                s[0] += r;
                s[1] += r * x.x;
                s[2] += r * x.y;
                s[3] += r * x.z;
                s[4] += r * x.x * x.x;
                s[5] += r * x.x * x.y;
                s[6] += r * x.x * x.z;
                s[7] += r * x.y * x.y;
                s[8] += r * x.y * x.z;
                s[9] += r * x.z * x.z;
            }
        }
        let prev = lls.last().copied();
        lls.push(ll);
        if let Some(prev) = prev {
            if (ll - prev).abs() / prev.abs().max(1.0) < cfg.tol {
                converged = true;
                break;
            }
        }

        // M step from the sufficient statistics
        for j in 0..k {
            let s = &stats[j * 10..j * 10 + 10];
            let nk = s[0];
            if nk < 1e-10 {
                // dead component: reseed it at a data point
                state.weights[j] = 1.0 / n as f64;
                state.means[j] = data[rng.gen_range(0..n)];
                let (_, global_cov) = sample_mean_cov(data);
                state.covs[j] = floor_covariance(&global_cov, cfg.lambda_min);
                continue;
            }
            state.weights[j] = nk / n as f64;
            let mean = Vec3::new(s[1] / nk, s[2] / nk, s[3] / nk);
            state.means[j] = mean;
            let cov = Matrix3::new(
                s[4] / nk - mean.x * mean.x,
                s[5] / nk - mean.x * mean.y,
                s[6] / nk - mean.x * mean.z,
                s[5] / nk - mean.x * mean.y,
                s[7] / nk - mean.y * mean.y,
                s[8] / nk - mean.y * mean.z,
                s[6] / nk - mean.x * mean.z,
                s[8] / nk - mean.y * mean.z,
                s[9] / nk - mean.z * mean.z,
            );
            state.covs[j] = floor_covariance(&cov, cfg.lambda_min);
        }
        let total: f64 = state.weights.iter().sum();
        for w in &mut state.weights {
            *w /= total;
        }
    }
    (state, lls, converged)
}

/// Fit a K-component mixture by EM with `cfg.n_init` restarts, returning the
/// model with the best final log-likelihood and its fit report.
pub fn fit_em_with_report(
    points: &PointCloud,
    k: usize,
    cfg: &EmConfig,
    rng: &mut impl Rng,
) -> Result<(GaussianMixture3, FitReport), GmmError> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(GmmError::TooFewPoints { points: n, k });
    }
    let data: Vec<Vec3> = points.points.iter().map(|p| p.position.coords).collect();

    if k == 1 {
        // closed form: sample mean and floored sample covariance
        let (mean, cov) = sample_mean_cov(&data);
        let cov = floor_covariance(&cov, cfg.lambda_min);
        let mixture = GaussianMixture3::new(vec![(1.0, mean, cov)])?;
        let ll: f64 = data
            .iter()
            .map(|x| mixture.log_pdf(&Point::from(*x)))
            .sum();
        return Ok((
            mixture,
            FitReport {
                log_likelihoods: vec![ll],
                converged: true,
                n_points: n,
            },
        ));
    }

    let mut best: Option<(EmState, Vec<f64>, bool)> = None;
    for _ in 0..cfg.n_init.max(1) {
        let state = initial_state(&data, k, cfg.lambda_min, rng);
        let run = run_em(&data, state, cfg, rng);
        let better = best
            .as_ref()
            .map(|b| run.1.last() > b.1.last())
            .unwrap_or(true);
        if better {
            best = Some(run);
        }
    }
    let (state, lls, converged) = best.expect("n_init >= 1");
    let mixture = GaussianMixture3::new(
        (0..k)
            .map(|j| (state.weights[j], state.means[j], state.covs[j]))
            .collect(),
    )?;
    Ok((
        mixture,
        FitReport {
            log_likelihoods: lls,
            converged,
            n_points: n,
        },
    ))
}

/// [`fit_em_with_report`] without the diagnostics.
pub fn fit_em(
    points: &PointCloud,
    k: usize,
    cfg: &EmConfig,
    rng: &mut impl Rng,
) -> Result<GaussianMixture3, GmmError> {
    fit_em_with_report(points, k, cfg, rng).map(|(m, _)| m)
}

/// Fit K = 1..k_max and return the mixture minimizing the Bayesian
/// information criterion (ties break toward smaller K).
pub fn select_k(
    points: &PointCloud,
    k_max: usize,
    cfg: &EmConfig,
    rng: &mut impl Rng,
) -> Result<(usize, GaussianMixture3), GmmError> {
    let n = points.len();
    if n == 0 {
        return Err(GmmError::TooFewPoints { points: 0, k: 1 });
    }
    let upper = k_max.max(1).min(n);
    let mut best: Option<(f64, usize, GaussianMixture3)> = None;
    for k in 1..=upper {
        let (mixture, report) = fit_em_with_report(points, k, cfg, rng)?;
        // free parameters: (K-1) weights + 3K means + 6K covariances
        let p = (10 * k - 1) as f64;
        let bic = -2.0 * report.final_log_likelihood() + p * (n as f64).ln();
        let better = best.as_ref().map(|b| bic < b.0 - 1e-9).unwrap_or(true);
        if better {
            best = Some((bic, k, mixture));
        }
    }
    let (_, k, mixture) = best.expect("at least K = 1 was fitted");
    Ok((k, mixture))
}

/// Regular grid covering a scene bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 3],
    pub spacing: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    /// Lattice over the box with the given spacing; the box corners are
    /// included.
    pub fn covering(bbox: &Aabb, spacing: f64) -> Self {
        debug_assert!(spacing > 0.0);
        let ext = bbox.extents();
        let dims = [
            (ext.x / spacing + 1e-9).floor() as usize + 1,
            (ext.y / spacing + 1e-9).floor() as usize + 1,
            (ext.z / spacing + 1e-9).floor() as usize + 1,
        ];
        GridSpec {
            origin: [bbox.min.x, bbox.min.y, bbox.min.z],
            spacing,
            dims,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn cell_center(&self, index: usize) -> Point {
        let (i, j, k) = self.unravel(index);
        Point::new(
            self.origin[0] + i as f64 * self.spacing,
            self.origin[1] + j as f64 * self.spacing,
            self.origin[2] + k as f64 * self.spacing,
        )
    }

    fn unravel(&self, index: usize) -> (usize, usize, usize) {
        let i = index % self.dims[0];
        let j = (index / self.dims[0]) % self.dims[1];
        let k = index / (self.dims[0] * self.dims[1]);
        (i, j, k)
    }

    fn ravel(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    fn max_corner(&self) -> Point {
        Point::new(
            self.origin[0] + (self.dims[0] - 1) as f64 * self.spacing,
            self.origin[1] + (self.dims[1] - 1) as f64 * self.spacing,
            self.origin[2] + (self.dims[2] - 1) as f64 * self.spacing,
        )
    }
}

/// Product posterior sampled on a grid: per-cell sum of per-BS mixture log
/// densities (each floored at [`LOG_FLOOR`]), with the argmax cell recorded.
/// Unnormalized: only the argmax and relative comparisons are consumed.
#[derive(Debug, Clone)]
pub struct PosteriorField {
    pub grid: GridSpec,
    pub log_posterior: Vec<f64>,
    pub argmax_index: usize,
    pub argmax_value: f64,
}

impl PosteriorField {
    /// Wrap precomputed per-cell values (argmax ties break toward the lowest
    /// linear index).
    pub fn from_values(grid: GridSpec, log_posterior: Vec<f64>) -> Self {
        assert_eq!(grid.n_cells(), log_posterior.len());
        let mut argmax_index = 0;
        let mut argmax_value = f64::NEG_INFINITY;
        for (i, &v) in log_posterior.iter().enumerate() {
            if v > argmax_value {
                argmax_value = v;
                argmax_index = i;
            }
        }
        PosteriorField {
            grid,
            log_posterior,
            argmax_index,
            argmax_value,
        }
    }

    pub fn argmax_center(&self) -> Point {
        self.grid.cell_center(self.argmax_index)
    }

    /// CSV export `x,y,z,log_posterior`, keeping every `decimation`-th cell.
    pub fn to_csv(&self, decimation: usize) -> String {
        let step = decimation.max(1);
        let mut out = String::from("x,y,z,log_posterior\n");
        for (idx, v) in self.log_posterior.iter().enumerate().step_by(step) {
            let c = self.grid.cell_center(idx);
            out.push_str(&format!("{:.6},{:.6},{:.6},{:.6}\n", c.x, c.y, c.z, v));
        }
        out
    }
}

/// Flattened component data for the grid evaluation hot loop: the precision
/// matrix `A = cov^-1` (symmetric; 6 entries), the mean, and the constant
/// `ln w - 0.5 (3 ln 2pi + ln det cov)`.
struct CompEval {
    mean: [f64; 3],
    a00: f64,
    a01: f64,
    a02: f64,
    a11: f64,
    a12: f64,
    a22: f64,
    bias: f64,
}

fn flatten(mix: &GaussianMixture3) -> Vec<CompEval> {
    mix.components
        .iter()
        .map(|c| {
            // A = (L^-1)^T (L^-1)
            let a = c.chol_inv.transpose() * c.chol_inv;
            CompEval {
                mean: [c.mean.x, c.mean.y, c.mean.z],
                a00: a[(0, 0)],
                a01: a[(0, 1)],
                a02: a[(0, 2)],
                a11: a[(1, 1)],
                a12: a[(1, 2)],
                a22: a[(2, 2)],
                bias: c.weight.ln() + c.log_norm,
            }
        })
        .collect()
}

/// Evaluate the product posterior over the grid with an extra log-scale per
/// BS (the argmax is invariant to these scales; they exist so that the
/// invariance is testable).
///
/// Rows along x are evaluated with incremental second-order updates of the
/// quadratic forms (exact for quadratics), parallel over rows.
pub fn posterior_scaled(
    mixtures: &[GaussianMixture3],
    log_scales: &[f64],
    grid: &GridSpec,
) -> PosteriorField {
    assert!(!mixtures.is_empty());
    assert_eq!(mixtures.len(), log_scales.len());
    let flat: Vec<(Vec<CompEval>, f64)> = mixtures
        .iter()
        .zip(log_scales)
        .map(|(m, &s)| (flatten(m), s))
        .collect();
    let n_comps: usize = flat.iter().map(|(c, _)| c.len()).sum();

    let [nx, ny, nz] = grid.dims;
    let h = grid.spacing;
    let rows: Vec<Vec<f64>> = (0..ny * nz)
        .into_par_iter()
        .map(|row| {
            let j = row % ny;
            let kz = row / ny;
            let y = grid.origin[1] + j as f64 * h;
            let z = grid.origin[2] + kz as f64 * h;
            let x0 = grid.origin[0];

            // per-component running quadratic form q and its x-slope term s
            let mut q = Vec::with_capacity(n_comps);
            let mut s = Vec::with_capacity(n_comps);
            for (comps, _) in &flat {
                for ce in comps {
                    let d0 = x0 - ce.mean[0];
                    let d1 = y - ce.mean[1];
                    let d2 = z - ce.mean[2];
                    let q0 = ce.a00 * d0 * d0
                        + ce.a11 * d1 * d1
                        + ce.a22 * d2 * d2
                        + 2.0 * (ce.a01 * d0 * d1 + ce.a02 * d0 * d2 + ce.a12 * d1 * d2);
                    q.push(q0);
                    s.push(ce.a00 * d0 + ce.a01 * d1 + ce.a02 * d2);
                }
            }

            let mut values = Vec::with_capacity(nx);
            for _ in 0..nx {
                let mut total = 0.0;
                let mut idx = 0;
                for (comps, scale) in &flat {
                    let mut max = f64::NEG_INFINITY;
                    let mut sum = 0.0;
                    for ce in comps {
                        let a = ce.bias - 0.5 * q[idx];
                        // advance the quadratic along x
                        q[idx] += h * (2.0 * s[idx] + h * ce.a00);
                        s[idx] += h * ce.a00;
                        idx += 1;
                        if a > max {
                            sum = if max == f64::NEG_INFINITY {
                                1.0
                            } else {
                                sum * (max - a).exp() + 1.0
                            };
                            max = a;
                        } else if a > max - 40.0 {
                            sum += (a - max).exp();
                        }
                    }
                    let lp = if max == f64::NEG_INFINITY {
                        f64::NEG_INFINITY
                    } else {
                        max + sum.ln() + scale
                    };
                    total += lp.max(LOG_FLOOR);
                }
                values.push(total);
            }
            values
        })
        .collect();

    PosteriorField::from_values(*grid, rows.concat())
}

/// Product posterior of per-BS mixtures over the grid.
pub fn posterior(mixtures: &[GaussianMixture3], grid: &GridSpec) -> PosteriorField {
    posterior_scaled(mixtures, &vec![0.0; mixtures.len()], grid)
}

/// Position estimate from a posterior field: the argmax cell center, plus an
/// optional per-axis quadratic interpolation over the 3×3×3 neighborhood
/// (clamped to the grid box).
pub fn estimate(field: &PosteriorField, refine: bool) -> Point {
    let grid = &field.grid;
    let center = field.argmax_center();
    if !refine {
        return center;
    }
    let (i, j, k) = grid.unravel(field.argmax_index);
    let f0 = field.argmax_value;
    let mut out = center;
    let axes = [(0usize, i), (1usize, j), (2usize, k)];
    for (axis, pos) in axes {
        if pos == 0 || pos + 1 >= grid.dims[axis] {
            continue;
        }
        let (im, ip) = match axis {
            0 => (grid.ravel(i - 1, j, k), grid.ravel(i + 1, j, k)),
            1 => (grid.ravel(i, j - 1, k), grid.ravel(i, j + 1, k)),
            _ => (grid.ravel(i, j, k - 1), grid.ravel(i, j, k + 1)),
        };
        let fm = field.log_posterior[im];
        let fp = field.log_posterior[ip];
        let denom = fm - 2.0 * f0 + fp;
        if denom >= -1e-12 || !fm.is_finite() || !fp.is_finite() {
            continue;
        }
        let delta = (0.5 * (fm - fp) / denom).clamp(-0.5, 0.5);
        out[axis] += delta * grid.spacing;
    }
    let min = Point::new(grid.origin[0], grid.origin[1], grid.origin[2]);
    let max = grid.max_corner();
    Point::new(
        out.x.clamp(min.x, max.x),
        out.y.clamp(min.y, max.y),
        out.z.clamp(min.z, max.z),
    )
}

/// Wire format for mixture dumps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureDump {
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 3]>,
    pub covariances: Vec<[[f64; 3]; 3]>,
}

impl From<&GaussianMixture3> for MixtureDump {
    fn from(m: &GaussianMixture3) -> Self {
        MixtureDump {
            weights: m.components.iter().map(|c| c.weight).collect(),
            means: m
                .components
                .iter()
                .map(|c| [c.mean.x, c.mean.y, c.mean.z])
                .collect(),
            covariances: m
                .components
                .iter()
                .map(|c| {
                    [
                        [c.cov[(0, 0)], c.cov[(0, 1)], c.cov[(0, 2)]],
                        [c.cov[(1, 0)], c.cov[(1, 1)], c.cov[(1, 2)]],
                        [c.cov[(2, 0)], c.cov[(2, 1)], c.cov[(2, 2)]],
                    ]
                })
                .collect(),
        }
    }
}

/// JSON dump of per-BS mixtures, for offline contour plotting.
pub fn mixtures_to_json(per_bs: &[(u32, &GaussianMixture3)]) -> String {
    #[derive(Serialize)]
    struct Entry {
        bs_id: u32,
        mixture: MixtureDump,
    }
    let entries: Vec<Entry> = per_bs
        .iter()
        .map(|(id, m)| Entry {
            bs_id: *id,
            mixture: MixtureDump::from(*m),
        })
        .collect();
    serde_json::to_string_pretty(&entries).expect("mixture dump serialization")
}
