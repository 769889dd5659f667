//! Case execution: deterministic seeding, the beam pair-model wiring the
//! field sampler and solver into the estimator, and the top-level run entry
//! points.

use std::sync::{Arc, OnceLock};

use crate::fields::{
    coarsen_field, gaussian_to_marginal, CholeskySampler, FieldSample, KlSampler, MarginalSpec,
    NodeProperties, PropertyMap,
};
use crate::material::ProblemKind;
use crate::mesh::{build_hierarchy, Hierarchy, Rectangle};
use crate::mlmc::{
    adaptive_mlmc, fixed_sample_run, estimate_rates, ml_estimate, LevelStats, MlmcResult,
    ModelError, PairModel, PairSample, SampleRecord,
};
use crate::solver::{bond_properties, run_sample, BeamSetup, QoiSample, SolverConfig};

use super::config::{CaseStudy, ModelKind, SamplerChoice};
use super::HarnessError;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Counter-based seed derivation: injective mixing of the base seed, level
/// and per-level sample index. Stable across versions by contract; the test
/// suite freezes reference values.
pub fn seed_for(base: u64, level: usize, index: u64) -> u64 {
    let lane = splitmix64(base).wrapping_add((level as u64 + 1).wrapping_mul(0xA24BAED4963EE407));
    splitmix64(lane ^ index.wrapping_mul(0x9FB21C651E98DF25))
}

enum GaussianSampler {
    Cholesky(CholeskySampler),
    Kl(KlSampler),
}

impl GaussianSampler {
    fn sample(&self, seed: u64) -> Vec<f64> {
        match self {
            GaussianSampler::Cholesky(s) => s.sample(seed),
            GaussianSampler::Kl(s) => s.sample(seed),
        }
    }
}

fn bit_hash(values: &[f64]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for v in values {
        h ^= v.to_bits();
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Pair model evaluating the peak load of one field realisation on a fine
/// grid and, for level pairs, on the next coarser grid with the restricted
/// field. Covariance factorisations and notched bond setups are built once
/// per level and shared read-only across samples.
pub struct BeamModel {
    pub hierarchy: Arc<Hierarchy>,
    setups: Vec<Arc<BeamSetup>>,
    samplers: Vec<OnceLock<Arc<GaussianSampler>>>,
    marginal: MarginalSpec,
    property_map: PropertyMap,
    kind: ProblemKind,
    solver_cfg: SolverConfig,
    fc_floor_mpa: f64,
    softening_k: f64,
    softening_alpha: f64,
    sampler_choice: SamplerChoice,
    kl_modes: usize,
    covariance: crate::fields::CovarianceSpec,
}

impl BeamModel {
    pub fn from_case(case: &CaseStudy) -> Result<Self, HarnessError> {
        case.validate()?;
        let mesh = case.mesh.as_ref().expect("validated beam case");
        let geometry = case.beam_geometry().expect("validated beam case");
        let material = case.material.as_ref().expect("validated beam case");
        let field = case.field.as_ref().expect("validated beam case");
        let hierarchy = build_hierarchy(
            Rectangle { width: geometry.length, height: geometry.depth },
            mesh.dx0_mm * 1e-3,
            mesh.max_level,
            geometry.thickness,
        )?;
        let solver_cfg = case.solver_config();
        let notch = case.geometry.as_ref().expect("validated").notch_ratio;
        let mut setups = Vec::new();
        for level in &hierarchy.levels {
            setups.push(Arc::new(BeamSetup::new(level, geometry, notch, &solver_cfg)?));
        }
        let samplers = (0..hierarchy.levels.len()).map(|_| OnceLock::new()).collect();
        Ok(Self {
            hierarchy: Arc::new(hierarchy),
            setups,
            samplers,
            marginal: case.marginal_spec().expect("validated beam case"),
            property_map: case.property_map(),
            kind: case.problem_kind().expect("validated beam case"),
            solver_cfg,
            fc_floor_mpa: material.fc_floor_mpa,
            softening_k: material.softening_k,
            softening_alpha: material.softening_alpha,
            sampler_choice: field.sampler,
            kl_modes: field.kl_modes,
            covariance: case.covariance_spec().expect("validated beam case"),
        })
    }

    fn sampler(&self, level: usize) -> Result<&Arc<GaussianSampler>, HarnessError> {
        // OnceLock-guarded so the factorisation happens once per level even
        // under concurrent sample evaluation
        if let Some(s) = self.samplers[level].get() {
            return Ok(s);
        }
        let coords = &self.hierarchy.levels[level].coords;
        let built = match self.sampler_choice {
            SamplerChoice::Cholesky => {
                GaussianSampler::Cholesky(CholeskySampler::new(&self.covariance, coords)?)
            }
            SamplerChoice::Kl => {
                let probe = KlSampler::new(&self.covariance, coords, coords.len())?;
                let modes = if self.kl_modes == 0 {
                    probe.modes_for_energy(0.95)
                } else {
                    self.kl_modes.min(coords.len())
                };
                GaussianSampler::Kl(KlSampler::new(&self.covariance, coords, modes)?)
            }
        };
        let _ = self.samplers[level].set(Arc::new(built));
        Ok(self.samplers[level].get().expect("just set"))
    }

    /// Strength field realisation on `level`, in MPa, clamped at the floor.
    pub fn strength_field(&self, level: usize, seed: u64) -> Result<FieldSample, HarnessError> {
        let z = self.sampler(level)?.sample(seed);
        let mut fc = gaussian_to_marginal(&z, &self.marginal);
        for v in fc.iter_mut() {
            *v = v.max(self.fc_floor_mpa);
        }
        Ok(FieldSample::new(seed, level, z, fc))
    }

    fn properties(&self, fc_mpa: &[f64]) -> Result<NodeProperties, HarnessError> {
        Ok(self.property_map.apply(fc_mpa)?)
    }

    fn solve(&self, level: usize, fc_mpa: &[f64], seed: u64) -> Result<QoiSample, HarnessError> {
        let props = self.properties(fc_mpa)?;
        let setup = &self.setups[level];
        let field = bond_properties(
            &self.hierarchy.levels[level],
            &setup.bonds,
            &props,
            self.softening_k,
            self.softening_alpha,
            self.kind,
        )?;
        Ok(run_sample(setup, &field, &self.solver_cfg, seed)?)
    }

    /// Deterministic peak-load evaluation with a uniform strength field,
    /// used for the deterministic reference runs.
    pub fn solve_uniform(&self, level: usize, fc_mpa: f64) -> Result<QoiSample, HarnessError> {
        let n = self.hierarchy.levels[level].node_count();
        self.solve(level, &vec![fc_mpa; n], 0)
    }
}

impl PairModel for BeamModel {
    fn evaluate(&self, level: usize, seed: u64) -> Result<PairSample, ModelError> {
        let sample = self.strength_field(level, seed).map_err(Box::new)?;
        let fc_fine = sample.values(level).expect("drawn level present");
        let fine = self.solve(level, fc_fine, seed).map_err(Box::new)?;
        if level == 0 {
            return Ok(PairSample {
                y: fine.peak_load,
                q_fine: fine.peak_load,
                q_coarse: None,
                cost: fine.cost,
                cost_fine: fine.cost,
            });
        }
        let map = self.hierarchy.restriction_map(level);
        let fc_coarse = coarsen_field(fc_fine, map).map_err(Box::new)?;
        // the coarse grid must consume the identical realisation: compare
        // bit hashes of the restricted field against an independent gather
        let gathered: Vec<f64> = map.iter().map(|&f| fc_fine[f as usize]).collect();
        if bit_hash(&fc_coarse) != bit_hash(&gathered) {
            return Err(format!(
                "restricted field diverged from the fine realisation on level pair ({level}, {})",
                level - 1
            )
            .into());
        }
        let coarse = self.solve(level - 1, &fc_coarse, seed).map_err(Box::new)?;
        Ok(PairSample {
            y: fine.peak_load - coarse.peak_load,
            q_fine: fine.peak_load,
            q_coarse: Some(coarse.peak_load),
            cost: fine.cost + coarse.cost,
            cost_fine: fine.cost,
        })
    }

    fn dof(&self, level: usize) -> f64 {
        self.hierarchy.levels[level].node_count() as f64
    }
}

/// Everything a finished run hands to the reporter.
pub struct RunOutputs {
    pub case: CaseStudy,
    pub result: MlmcResult,
    pub dofs: Vec<f64>,
    pub mesh_summaries: Vec<crate::mesh::MeshSummary>,
}

/// Execute a case study: adaptive estimation by default, or a fixed
/// screening study when `screening_samples` is set.
pub fn run_case(case: &CaseStudy, workers: usize) -> Result<RunOutputs, HarnessError> {
    case.validate()?;
    let base = case.base_seed;
    let seeder = move |level: usize, index: u64| seed_for(base, level, index);
    let cfg = case.mlmc_config();
    let (result, dofs, mesh_summaries) = match case.model {
        ModelKind::Synthetic => {
            let s = &case.synthetic;
            let model = crate::mlmc::synthetic::PowerLawModel {
                q_limit: s.q_limit,
                bias_coef: s.bias_coef,
                alpha: s.alpha,
                y_var_coef: s.y_var_coef,
                beta: s.beta,
                q_sd: s.q_sd,
                cost_coef: s.cost_coef,
                gamma: s.gamma,
                m0: s.m0,
                refine: case.mlmc.refine_factor,
            };
            let result = run_with_mode(&model, case, &cfg, &seeder, workers)?;
            let dofs = (0..result.levels.len()).map(|l| model.dof(l)).collect();
            (result, dofs, Vec::new())
        }
        ModelKind::Beam => {
            let model = BeamModel::from_case(case)?;
            let result = run_with_mode(&model, case, &cfg, &seeder, workers)?;
            let dofs = (0..result.levels.len()).map(|l| model.dof(l)).collect();
            let summaries = model.hierarchy.levels.iter().map(|l| l.summary()).collect();
            (result, dofs, summaries)
        }
    };
    Ok(RunOutputs { case: case.clone(), result, dofs, mesh_summaries })
}

fn run_with_mode<M: PairModel, S: Fn(usize, u64) -> u64 + Sync>(
    model: &M,
    case: &CaseStudy,
    cfg: &crate::mlmc::MlmcConfig,
    seeder: &S,
    workers: usize,
) -> Result<MlmcResult, HarnessError> {
    match case.mlmc.screening_samples {
        None => Ok(adaptive_mlmc(model, cfg, seeder, workers)?),
        Some(n) => {
            let levels = case.max_level() + 1;
            let (stats, samples) =
                fixed_sample_run(model, &vec![n; levels], seeder, workers, true)?;
            Ok(screening_result(model, &stats, samples, cfg)?)
        }
    }
}

/// Package a fixed screening study in the same result shape as an adaptive
/// run (rates fitted, bias extrapolated from the finest level).
fn screening_result<M: PairModel>(
    model: &M,
    stats: &[LevelStats],
    samples: Vec<SampleRecord>,
    cfg: &crate::mlmc::MlmcConfig,
) -> Result<MlmcResult, HarnessError> {
    let dofs: Vec<f64> = (0..stats.len()).map(|l| model.dof(l)).collect();
    let rates = estimate_rates(stats, &dofs).ok();
    let alpha_used = rates
        .as_ref()
        .map(|r| r.alpha)
        .filter(|&a| a > 0.0 && cfg.bias_safety * cfg.refine_factor.powf(a) > 1.0)
        .unwrap_or(cfg.alpha_fallback);
    let finest = stats.last().expect("at least one level");
    let bias_error = crate::mlmc::bias_estimate(
        finest.mean_y(),
        alpha_used,
        cfg.refine_factor,
        cfg.bias_safety,
    )?;
    let sampling_error =
        stats.iter().map(|s| s.var_y() / s.n as f64).sum::<f64>().sqrt();
    Ok(MlmcResult {
        estimate: ml_estimate(stats)?,
        bias_error,
        sampling_error,
        alpha_used,
        converged: bias_error < cfg.eps_bias,
        total_cost: stats.iter().map(|s| s.n as f64 * s.mean_cost()).sum(),
        levels: stats
            .iter()
            .map(|s| crate::mlmc::LevelSnapshot {
                level: s.level,
                n: s.n,
                mean_y: s.mean_y(),
                var_y: s.var_y(),
                mean_q: s.mean_q(),
                var_q: s.var_q(),
                mean_cost: s.mean_cost(),
                mean_cost_fine: s.mean_cost_fine(),
                dof: model.dof(s.level),
            })
            .collect(),
        rates,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn seeds_are_deterministic_and_collision_free() {
        assert_eq!(seed_for(42, 1, 7), seed_for(42, 1, 7));
        let mut seen = HashSet::with_capacity(1_000_000);
        for level in 0..5usize {
            for index in 0..200_000u64 {
                assert!(
                    seen.insert(seed_for(42, level, index)),
                    "collision at level {level}, index {index}"
                );
            }
        }
    }

    #[test]
    fn seed_reference_values_are_frozen() {
        // pinned so the derivation stays stable across releases
        assert_eq!(seed_for(0, 0, 0), 4848786117362995669);
        assert_eq!(seed_for(2346, 2, 15), seed_for(2346, 2, 15));
        assert_ne!(seed_for(42, 0, 1), seed_for(42, 1, 0));
        assert_ne!(seed_for(42, 0, 0), seed_for(43, 0, 0));
    }

    #[test]
    fn base_seed_changes_decorrelate_streams() {
        // same (level, index) grid under two base seeds: the paired seed
        // sequences share no values and no rank correlation structure
        let a: Vec<u64> = (0..4000).map(|i| seed_for(1, 0, i)).collect();
        let b: Vec<u64> = (0..4000).map(|i| seed_for(2, 0, i)).collect();
        let set: HashSet<u64> = a.iter().copied().collect();
        assert!(b.iter().all(|s| !set.contains(s)));
        // crude independence check: sign agreement of successive deltas
        // should hover around half
        let agree = a
            .windows(2)
            .zip(b.windows(2))
            .filter(|(wa, wb)| (wa[1] > wa[0]) == (wb[1] > wb[0]))
            .count();
        let frac = agree as f64 / 3999.0;
        assert!((0.45..0.55).contains(&frac), "delta sign agreement {frac}");
    }
}
