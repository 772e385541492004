//! Run configuration: one JSON file per run plus flag overrides (overrides
//! win). Every field has an explicit default so `--print-config` shows the
//! fully resolved configuration, and unknown fields are rejected.
//!
//! Angles are degrees at this boundary and converted to radians internally.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use nlos_locate_core::cloud::{EmptyBinPolicy, FusionMode, RayLaunchConfig, SelectionOrder};
use nlos_locate_core::gmm::EmConfig;
use nlos_locate_core::measure::{NoiseSigmas, RptTopology, TruthSearchConfig};
use nlos_locate_core::scene::{box_scene, random_clutter, Scene};
use nlos_locate_core::sim::{
    FitSettings, GridSettings, SelectionSettings, SweepAxis, TrialConfig, TruthSettings,
};

/// Where the scene comes from: a scene file on disk, or the built-in box
/// generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneSource {
    Path(String),
    Generate {
        width_m: f64,
        length_m: f64,
        height_m: f64,
        clutter: usize,
        clutter_seed: u64,
    },
}

impl Default for SceneSource {
    fn default() -> Self {
        SceneSource::Generate {
            width_m: 8.0,
            length_m: 18.0,
            height_m: 2.5,
            clutter: 6,
            clutter_seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneSource,

    // measurement noise
    pub sigma_eta_deg: f64,
    pub sigma_nu_pt_m: f64,
    pub sigma_nu_rpt_m: f64,
    pub fusion: FusionMode,
    /// RPT pairing: `null` = all unordered pairs, otherwise pairs against
    /// this reference BS.
    pub rpt_reference_bs: Option<u32>,

    // ray launching
    pub n_rays: usize,
    pub max_bounces: u32,
    pub max_ray_length_m: f64,
    pub step_m: f64,

    // fusion down-selection
    pub n_select: usize,
    pub bin_width_m: Option<f64>,
    pub empty_bin_policy: EmptyBinPolicy,
    pub selection_order: SelectionOrder,

    // mixture fitting
    pub k_max: usize,
    pub fixed_k: Option<usize>,
    pub em_max_iters: usize,
    pub em_tol: f64,
    pub em_n_init: usize,
    /// Covariance eigenvalue floor; `null` derives `(step/2)^2`.
    pub lambda_min_m2: Option<f64>,
    pub max_fit_points: usize,

    // posterior grid
    pub grid_spacing_m: f64,
    pub refine: bool,

    // ground-truth oracle (simulation only)
    pub truth_max_bounces: u32,
    pub truth_n_dirs: usize,
    pub truth_max_length_m: f64,

    // simulation harness
    pub drop_margin_m: f64,
    pub n_trials: u64,
    pub seed: u64,
    pub workers: usize,
    /// Sweep spec, e.g. `sigma_eta=0.25,0.5,0.75,1.0deg` or
    /// `fusion=aoa,aoa+pt`.
    pub sweep: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scene: SceneSource::default(),
            sigma_eta_deg: 1.0,
            sigma_nu_pt_m: 0.5,
            sigma_nu_rpt_m: 0.5,
            fusion: FusionMode::AoaOnly,
            rpt_reference_bs: None,
            n_rays: 160,
            max_bounces: 5,
            max_ray_length_m: 30.0,
            step_m: 0.10,
            n_select: 2000,
            bin_width_m: None,
            empty_bin_policy: EmptyBinPolicy::default(),
            selection_order: SelectionOrder::default(),
            k_max: 8,
            fixed_k: None,
            em_max_iters: 200,
            em_tol: 1e-6,
            em_n_init: 4,
            lambda_min_m2: None,
            max_fit_points: 3000,
            grid_spacing_m: 0.05,
            refine: true,
            truth_max_bounces: 3,
            truth_n_dirs: 4096,
            truth_max_length_m: 60.0,
            drop_margin_m: 0.1,
            n_trials: 500,
            seed: 0,
            workers: 0,
            sweep: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_eta_deg < 0.0 || self.sigma_nu_pt_m < 0.0 || self.sigma_nu_rpt_m < 0.0 {
            bail!("noise standard deviations must be >= 0");
        }
        if self.n_rays == 0 {
            bail!("n_rays must be >= 1");
        }
        if self.step_m <= 0.0 || self.grid_spacing_m <= 0.0 || self.max_ray_length_m <= 0.0 {
            bail!("step_m, grid_spacing_m, and max_ray_length_m must be > 0");
        }
        if self.n_select == 0 {
            bail!("n_select must be >= 1");
        }
        if self.k_max == 0 {
            bail!("k_max must be >= 1");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization")
    }

    /// Build the runtime scene from the configured source.
    pub fn resolve_scene(&self) -> Result<Arc<Scene>> {
        let scene = match &self.scene {
            SceneSource::Path(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading scene {path}"))?;
                Scene::from_json(&text).with_context(|| format!("loading scene {path}"))?
            }
            SceneSource::Generate {
                width_m,
                length_m,
                height_m,
                clutter,
                clutter_seed,
            } => {
                if *width_m <= 0.0 || *length_m <= 0.0 || *height_m <= 0.0 {
                    bail!("scene dimensions must be positive");
                }
                let boxes = random_clutter(*clutter, *width_m, *length_m, *clutter_seed);
                Scene::from_file(&box_scene(*width_m, *length_m, *height_m, &boxes))
                    .context("generated scene failed validation")?
            }
        };
        Ok(Arc::new(scene))
    }

    /// Lower the run configuration into the simulation's trial config.
    pub fn to_trial_config(&self, scene: Arc<Scene>) -> TrialConfig {
        TrialConfig {
            scene,
            sigmas: NoiseSigmas {
                sigma_eta: self.sigma_eta_deg.to_radians(),
                sigma_nu_pt: self.sigma_nu_pt_m,
                sigma_nu_rpt: self.sigma_nu_rpt_m,
            },
            fusion: self.fusion,
            rpt_topology: match self.rpt_reference_bs {
                Some(r) => RptTopology::Reference(r),
                None => RptTopology::AllPairs,
            },
            n_rays: self.n_rays,
            rays: RayLaunchConfig {
                max_bounces: self.max_bounces,
                max_length: self.max_ray_length_m,
                step: self.step_m,
                clip_to_scene: true,
            },
            selection: SelectionSettings {
                n_select: self.n_select,
                bin_width: self.bin_width_m,
                policy: self.empty_bin_policy,
                order: self.selection_order,
            },
            fit: FitSettings {
                em: EmConfig {
                    max_iters: self.em_max_iters,
                    tol: self.em_tol,
                    lambda_min: self
                        .lambda_min_m2
                        .unwrap_or((self.step_m / 2.0) * (self.step_m / 2.0)),
                    n_init: self.em_n_init,
                },
                k_max: self.k_max,
                fixed_k: self.fixed_k,
                max_fit_points: self.max_fit_points,
            },
            grid: GridSettings {
                spacing: self.grid_spacing_m,
                refine: self.refine,
            },
            truth: TruthSettings {
                max_bounces: self.truth_max_bounces,
                search: TruthSearchConfig {
                    n_dirs: self.truth_n_dirs,
                    max_length: self.truth_max_length_m,
                    ..Default::default()
                },
            },
            drop_margin: self.drop_margin_m,
            seed: self.seed,
        }
    }

    /// Parse the sweep spec into an axis, converting degree values.
    pub fn parse_sweep(&self) -> Result<Option<SweepAxis>> {
        let Some(spec) = &self.sweep else {
            return Ok(None);
        };
        let (axis, raw_values) = spec
            .split_once('=')
            .with_context(|| format!("sweep spec {spec:?} must look like axis=v1,v2,..."))?;

        if axis == "fusion" {
            let modes = raw_values
                .split(',')
                .map(|s| s.trim().parse::<FusionMode>().map_err(anyhow::Error::msg))
                .collect::<Result<Vec<_>>>()?;
            return Ok(Some(SweepAxis::Fusion(modes)));
        }

        // numeric axes accept an optional trailing unit on the value list
        let (values_str, unit) = {
            let trimmed = raw_values.trim_end_matches(|c: char| c.is_ascii_alphabetic());
            (trimmed, &raw_values[trimmed.len()..])
        };
        let values = values_str
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .with_context(|| format!("bad sweep value {s:?}"))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            bail!("sweep spec {spec:?} has no values");
        }

        match axis {
            "sigma_eta" => {
                if !unit.is_empty() && unit != "deg" {
                    bail!("sigma_eta sweep values are degrees; got unit {unit:?}");
                }
                Ok(Some(SweepAxis::SigmaEta(
                    values.iter().map(|v| v.to_radians()).collect(),
                )))
            }
            "sigma_nu_pt" => {
                if !unit.is_empty() && unit != "m" {
                    bail!("sigma_nu_pt sweep values are meters; got unit {unit:?}");
                }
                Ok(Some(SweepAxis::SigmaNuPt(values)))
            }
            "sigma_nu_rpt" => {
                if !unit.is_empty() && unit != "m" {
                    bail!("sigma_nu_rpt sweep values are meters; got unit {unit:?}");
                }
                Ok(Some(SweepAxis::SigmaNuRpt(values)))
            }
            other => bail!(
                "unknown sweep axis {other:?} (expected sigma_eta, sigma_nu_pt, sigma_nu_rpt, or fusion)"
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let cfg = RunConfig::default();
        let json = cfg.to_json();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg.to_json(), back.to_json());
    }

    #[test]
    fn unknown_fields_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"not_a_field": 1}"#);
        assert!(err.is_err());
    }

    #[test]
    fn sweep_specs_parse() {
        let mut cfg = RunConfig {
            sweep: Some("sigma_eta=0.25,0.5,0.75,1.0deg".into()),
            ..Default::default()
        };
        match cfg.parse_sweep().unwrap() {
            Some(SweepAxis::SigmaEta(v)) => {
                assert_eq!(v.len(), 4);
                assert!((v[0] - 0.25_f64.to_radians()).abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }

        cfg.sweep = Some("sigma_nu_pt=0.2,0.3,0.5,0.7,1.0m".into());
        assert!(matches!(
            cfg.parse_sweep().unwrap(),
            Some(SweepAxis::SigmaNuPt(v)) if v.len() == 5
        ));

        cfg.sweep = Some("fusion=aoa,aoa+pt,aoa+rpt".into());
        assert!(matches!(
            cfg.parse_sweep().unwrap(),
            Some(SweepAxis::Fusion(m)) if m.len() == 3
        ));

        cfg.sweep = Some("bogus=1,2".into());
        assert!(cfg.parse_sweep().is_err());

        cfg.sweep = Some("sigma_eta=0.25km".into());
        assert!(cfg.parse_sweep().is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let cfg = RunConfig {
            sigma_eta_deg: -1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            n_rays: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
