//! Case-study configuration: a single TOML file fully describing a run.
//!
//! The file is echoed verbatim into the run manifest so any sample can be
//! reproduced bitwise from the manifest plus the base seed.

use serde::{Deserialize, Serialize};

use crate::fields::{CovarianceKind, CovarianceSpec, MarginalSpec, PropertyMap};
use crate::material::ProblemKind;
use crate::mlmc::MlmcConfig;
use crate::solver::{BeamGeometry, SolverConfig};

use super::HarnessError;

/// Which model the case drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Beam,
    Synthetic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub dx0_mm: f64,
    pub max_level: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub length_mm: f64,
    pub depth_mm: f64,
    pub thickness_mm: f64,
    pub span_mm: f64,
    #[serde(default)]
    pub notch_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSection {
    pub f_cm_mpa: f64,
    pub density: f64,
    #[serde(default = "default_k")]
    pub softening_k: f64,
    #[serde(default = "default_alpha")]
    pub softening_alpha: f64,
    /// Strength field values are clamped to at least this (MPa) before the
    /// property map; keeps Gaussian marginals usable.
    #[serde(default = "default_fc_floor")]
    pub fc_floor_mpa: f64,
}

fn default_k() -> f64 {
    25.0
}
fn default_alpha() -> f64 {
    0.25
}
fn default_fc_floor() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceChoice {
    Exponential,
    Jcss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalChoice {
    Weibull,
    Lognormal,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerChoice {
    Cholesky,
    Kl,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    pub corr_len_mm: f64,
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
    pub covariance: CovarianceChoice,
    /// Long-range correlation threshold for the jcss covariance.
    #[serde(default = "default_rho0")]
    pub rho0: f64,
    pub marginal: MarginalChoice,
    /// Weibull shape; the scale is derived so the marginal mean equals
    /// `f_cm_mpa` unless `weibull_scale_mpa` is given.
    #[serde(default = "default_modulus")]
    pub weibull_modulus: f64,
    #[serde(default)]
    pub weibull_scale_mpa: Option<f64>,
    /// Coefficient of variation used to derive lognormal / gaussian
    /// parameters from `f_cm_mpa`.
    #[serde(default = "default_cov")]
    pub cov: f64,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerChoice,
    /// Retained modes for the KL sampler; 0 keeps enough for 95% energy.
    #[serde(default)]
    pub kl_modes: usize,
}

fn default_sigma2() -> f64 {
    1.0
}
fn default_rho0() -> f64 {
    0.5
}
fn default_modulus() -> f64 {
    3.0
}
fn default_cov() -> f64 {
    0.2
}
fn default_sampler() -> SamplerChoice {
    SamplerChoice::Cholesky
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlmcSection {
    pub eps_sampling: f64,
    pub eps_bias: f64,
    #[serde(default = "default_warmup")]
    pub warmup: u64,
    #[serde(default = "default_refine")]
    pub refine_factor: f64,
    #[serde(default = "default_bias_safety")]
    pub bias_safety: f64,
    #[serde(default = "default_alpha_fallback")]
    pub alpha_fallback: f64,
    /// Sampling tolerances for the report's allocation and cost tables.
    #[serde(default = "default_report_eps")]
    pub report_eps: Vec<f64>,
    /// If set, skip the adaptive loop and take exactly this many samples on
    /// every level (screening study for rate estimation).
    #[serde(default)]
    pub screening_samples: Option<u64>,
}

fn default_warmup() -> u64 {
    100
}
fn default_refine() -> f64 {
    4.0
}
fn default_bias_safety() -> f64 {
    1.0
}
fn default_alpha_fallback() -> f64 {
    1.0
}
fn default_report_eps() -> Vec<f64> {
    vec![100.0, 50.0, 10.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub loading_rate: f64,
    pub damping: f64,
    pub dt_safety: f64,
    pub soft_start_time: f64,
    pub max_steps: usize,
    pub stop_load_fraction: f64,
    pub stop_load_floor: f64,
    pub load_patch_cols: usize,
    pub load_patch_rows: usize,
    pub history_stride: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        // tuned on the notched concrete beam: kinetic energy stays below 1%
        // of external work at the load peak across levels 0-2
        Self {
            loading_rate: 0.01,
            damping: 2e3,
            dt_safety: 0.8,
            soft_start_time: 5e-4,
            max_steps: 600_000,
            stop_load_fraction: 0.2,
            stop_load_floor: 200.0,
            load_patch_cols: 3,
            load_patch_rows: 1,
            history_stride: 16,
        }
    }
}

/// Parameters of the synthetic power-law model (used when `model = "synthetic"`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub q_limit: f64,
    pub bias_coef: f64,
    pub alpha: f64,
    pub y_var_coef: f64,
    pub beta: f64,
    pub q_sd: f64,
    pub cost_coef: f64,
    pub gamma: f64,
    pub m0: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            q_limit: 1800.0,
            bias_coef: 2000.0,
            alpha: 0.5,
            y_var_coef: 2.0e6,
            beta: 0.8,
            q_sd: 300.0,
            cost_coef: 1e-3,
            gamma: 1.0,
            m0: 350.0,
        }
    }
}

/// Fully resolved case study.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseStudy {
    pub name: String,
    pub model: ModelKind,
    pub base_seed: u64,
    #[serde(default)]
    pub mesh: Option<MeshSection>,
    #[serde(default)]
    pub geometry: Option<GeometrySection>,
    #[serde(default)]
    pub material: Option<MaterialSection>,
    #[serde(default)]
    pub field: Option<FieldSection>,
    pub mlmc: MlmcSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub synthetic: SyntheticSection,
}

impl CaseStudy {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let case: CaseStudy =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        case.validate()?;
        Ok(case)
    }

    pub fn preset(name: &str) -> Result<Self, HarnessError> {
        let text = match name {
            "specimen3-notched" => include_str!("../../presets/specimen3-notched.toml"),
            "specimen3-unnotched" => include_str!("../../presets/specimen3-unnotched.toml"),
            "synthetic" => include_str!("../../presets/synthetic.toml"),
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown preset '{other}'; available: specimen3-notched, specimen3-unnotched, synthetic"
                )))
            }
        };
        Self::from_toml(text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.mlmc.eps_sampling > 0.0 && self.mlmc.eps_bias > 0.0) {
            return Err(HarnessError::Config("tolerances must be positive".into()));
        }
        match self.model {
            ModelKind::Synthetic => Ok(()),
            ModelKind::Beam => {
                let mesh = self.mesh.as_ref().ok_or_else(|| missing("mesh"))?;
                let geo = self.geometry.as_ref().ok_or_else(|| missing("geometry"))?;
                let mat = self.material.as_ref().ok_or_else(|| missing("material"))?;
                let field = self.field.as_ref().ok_or_else(|| missing("field"))?;
                if !(mesh.dx0_mm > 0.0) {
                    return Err(HarnessError::Config("dx0 must be positive".into()));
                }
                // a correlation length at or below the coarsest spacing
                // degenerates into white noise
                if field.corr_len_mm <= mesh.dx0_mm {
                    return Err(HarnessError::Config(format!(
                        "correlation length {} mm must exceed the coarsest spacing {} mm",
                        field.corr_len_mm, mesh.dx0_mm
                    )));
                }
                if !(0.0..1.0).contains(&geo.notch_ratio) {
                    return Err(HarnessError::Config(format!(
                        "notch ratio {} not in [0, 1)",
                        geo.notch_ratio
                    )));
                }
                if !(mat.f_cm_mpa > 0.0 && mat.density > 0.0) {
                    return Err(HarnessError::Config("material constants must be positive".into()));
                }
                self.beam_geometry()
                    .expect("checked")
                    .validate()
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
                self.covariance_spec().expect("checked").validate()?;
                self.marginal_spec().expect("checked").validate()?;
                Ok(())
            }
        }
    }

    pub fn beam_geometry(&self) -> Option<BeamGeometry> {
        let g = self.geometry.as_ref()?;
        Some(BeamGeometry {
            length: g.length_mm * 1e-3,
            depth: g.depth_mm * 1e-3,
            thickness: g.thickness_mm * 1e-3,
            span: g.span_mm * 1e-3,
        })
    }

    pub fn covariance_spec(&self) -> Option<CovarianceSpec> {
        let f = self.field.as_ref()?;
        let kind = match f.covariance {
            CovarianceChoice::Exponential => CovarianceKind::Exponential,
            CovarianceChoice::Jcss => CovarianceKind::Jcss { rho0: f.rho0 },
        };
        Some(CovarianceSpec { kind, sigma2: f.sigma2, corr_len: f.corr_len_mm * 1e-3 })
    }

    /// Marginal of the strength field in MPa, with parameters derived so the
    /// marginal mean matches `f_cm_mpa`.
    pub fn marginal_spec(&self) -> Option<MarginalSpec> {
        let f = self.field.as_ref()?;
        let fcm = self.material.as_ref()?.f_cm_mpa;
        Some(match f.marginal {
            MarginalChoice::Weibull => {
                let scale = f.weibull_scale_mpa.unwrap_or_else(|| {
                    fcm / statrs::function::gamma::gamma(1.0 + 1.0 / f.weibull_modulus)
                });
                MarginalSpec::Weibull { modulus: f.weibull_modulus, scale }
            }
            MarginalChoice::Gaussian => {
                MarginalSpec::Gaussian { mean: fcm, sd: f.cov * fcm }
            }
            MarginalChoice::Lognormal => {
                // mean = exp(mu + sigma^2/2) and cov^2 = exp(sigma^2) - 1
                let log_sd = (f.cov * f.cov + 1.0).ln().sqrt();
                let log_mean = fcm.ln() - 0.5 * log_sd * log_sd;
                MarginalSpec::LogNormal { log_mean, log_sd }
            }
        })
    }

    pub fn property_map(&self) -> PropertyMap {
        PropertyMap::default()
    }

    pub fn problem_kind(&self) -> Option<ProblemKind> {
        Some(ProblemKind::PlaneStress { thickness: self.beam_geometry()?.thickness })
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            density: self.material.as_ref().map_or(2346.0, |m| m.density),
            loading_rate: s.loading_rate,
            max_steps: s.max_steps,
            damping: s.damping,
            dt_safety: s.dt_safety,
            soft_start_time: s.soft_start_time,
            load_patch_cols: s.load_patch_cols,
            load_patch_rows: s.load_patch_rows,
            stop_load_fraction: s.stop_load_fraction,
            stop_load_floor: s.stop_load_floor,
            target_displacement: 0.0,
            history_stride: s.history_stride,
            record_damage: false,
        }
    }

    pub fn mlmc_config(&self) -> MlmcConfig {
        MlmcConfig {
            eps_sampling: self.mlmc.eps_sampling,
            eps_bias: self.mlmc.eps_bias,
            warmup: self.mlmc.warmup,
            refine_factor: self.mlmc.refine_factor,
            bias_safety: self.mlmc.bias_safety,
            max_level: self.max_level(),
            alpha_fallback: self.mlmc.alpha_fallback,
            keep_samples: true,
        }
    }

    pub fn max_level(&self) -> usize {
        match self.model {
            ModelKind::Beam => self.mesh.as_ref().map_or(0, |m| m.max_level),
            ModelKind::Synthetic => 6,
        }
    }
}

fn missing(section: &str) -> HarnessError {
    HarnessError::Config(format!("beam model requires a [{section}] section"))
}
