//! Standard and multilevel Monte Carlo estimation.
//!
//! The multilevel estimator telescopes the expectation of a quantity of
//! interest over a hierarchy of discretisations: the coarsest level is
//! sampled densely and level discrepancies `Y_l = Q_l - Q_{l-1}` (computed
//! from the same random realisation on both grids) are sampled ever more
//! sparsely as their variance decays. The adaptive driver estimates
//! variances and per-sample costs on the fly, allocates samples to minimise
//! total cost under a sampling-error constraint, and adds levels until the
//! extrapolated bias meets its tolerance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod synthetic;

#[derive(Debug, Error)]
pub enum MlmcError {
    #[error("empty sample set")]
    EmptySamples,
    #[error("need at least {need} samples, got {got}")]
    NotEnoughSamples { need: usize, got: usize },
    #[error("rate regression: {0}")]
    Regression(String),
    #[error("levels must be contiguous from 0; missing level {0}")]
    MissingLevel(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("not in asymptotic regime: r * m^alpha = {0} must exceed 1")]
    NotAsymptotic(f64),
    #[error("cost prediction requires alpha > 0, got {0}")]
    NonPositiveAlpha(f64),
    #[error("model evaluation failed: {0}")]
    Model(String),
}

pub type ModelError = Box<dyn std::error::Error + Send + Sync + 'static>;

/// One evaluation of the level-difference estimand.
#[derive(Debug, Clone, Copy)]
pub struct PairSample {
    /// `Y_l`: the level discrepancy (equals `q_fine` on level 0).
    pub y: f64,
    pub q_fine: f64,
    pub q_coarse: Option<f64>,
    /// Cost of producing this sample, both grids included.
    pub cost: f64,
    /// Share of `cost` spent on the fine grid alone (single-level MC
    /// comparisons are priced with this).
    pub cost_fine: f64,
}

/// A sampler of `(level, seed) -> (Y, Q, cost)`, deterministic in its inputs.
pub trait PairModel: Sync {
    fn evaluate(&self, level: usize, seed: u64) -> Result<PairSample, ModelError>;
    /// Degrees of freedom `M_l`, used by the rate regressions.
    fn dof(&self, level: usize) -> f64;
}

/// Commutative accumulator of per-level statistics.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: usize,
    pub n: u64,
    sum_y: f64,
    sum_y2: f64,
    sum_q: f64,
    sum_q2: f64,
    sum_cost: f64,
    sum_cost_fine: f64,
}

impl LevelStats {
    pub fn new(level: usize) -> Self {
        Self { level, ..Default::default() }
    }

    pub fn push(&mut self, s: &PairSample) {
        self.n += 1;
        self.sum_y += s.y;
        self.sum_y2 += s.y * s.y;
        self.sum_q += s.q_fine;
        self.sum_q2 += s.q_fine * s.q_fine;
        self.sum_cost += s.cost;
        self.sum_cost_fine += s.cost_fine;
    }

    pub fn mean_y(&self) -> f64 {
        self.sum_y / self.n as f64
    }

    /// Sample variance of `Y_l` (mean of squares minus squared mean,
    /// floored at zero against roundoff).
    pub fn var_y(&self) -> f64 {
        let n = self.n as f64;
        (self.sum_y2 / n - (self.sum_y / n).powi(2)).max(0.0)
    }

    pub fn mean_q(&self) -> f64 {
        self.sum_q / self.n as f64
    }

    pub fn var_q(&self) -> f64 {
        let n = self.n as f64;
        (self.sum_q2 / n - (self.sum_q / n).powi(2)).max(0.0)
    }

    pub fn mean_cost(&self) -> f64 {
        self.sum_cost / self.n as f64
    }

    pub fn mean_cost_fine(&self) -> f64 {
        self.sum_cost_fine / self.n as f64
    }
}

/// Fitted convergence/cost rates (positive = decay for alpha and beta,
/// positive = growth for gamma).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateEstimates {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub alpha_r2: f64,
    pub beta_r2: f64,
    pub gamma_r2: f64,
    /// Levels whose `Y` statistics entered the alpha/beta fits.
    pub y_levels_used: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlmcConfig {
    /// Sampling-error tolerance (QoI units).
    pub eps_sampling: f64,
    /// Bias tolerance (QoI units).
    pub eps_bias: f64,
    /// Warm-up samples per newly added level.
    pub warmup: u64,
    /// Mesh refinement factor m in `M_l = m^l M_0`.
    pub refine_factor: f64,
    /// Bias safety factor r in (0, 1].
    pub bias_safety: f64,
    /// Highest level the adaptive loop may add.
    pub max_level: usize,
    /// Bias-decay rate assumed before enough levels exist to fit one.
    pub alpha_fallback: f64,
    /// Record every sample (level, seed, values) for the per-sample log.
    pub keep_samples: bool,
}

impl Default for MlmcConfig {
    fn default() -> Self {
        Self {
            eps_sampling: 10.0,
            eps_bias: 10.0,
            warmup: 100,
            refine_factor: 4.0,
            bias_safety: 1.0,
            max_level: 4,
            alpha_fallback: 1.0,
            keep_samples: true,
        }
    }
}

impl MlmcConfig {
    pub fn validate(&self) -> Result<(), MlmcError> {
        if !(self.eps_sampling > 0.0 && self.eps_bias > 0.0) {
            return Err(MlmcError::InvalidConfig(format!(
                "tolerances must be positive: eps_s = {}, eps_b = {}",
                self.eps_sampling, self.eps_bias
            )));
        }
        if !(self.refine_factor >= 2.0) {
            return Err(MlmcError::InvalidConfig(format!(
                "refine_factor = {} must be >= 2",
                self.refine_factor
            )));
        }
        if !(self.bias_safety > 0.0 && self.bias_safety <= 1.0) {
            return Err(MlmcError::InvalidConfig(format!(
                "bias_safety = {} must be in (0, 1]",
                self.bias_safety
            )));
        }
        if self.warmup < 2 {
            return Err(MlmcError::InvalidConfig("warmup must be at least 2".into()));
        }
        if !(self.alpha_fallback > 0.0) {
            return Err(MlmcError::InvalidConfig("alpha_fallback must be positive".into()));
        }
        Ok(())
    }
}

/// Arithmetic-mean Monte Carlo estimator.
pub fn mc_estimate(samples: &[f64]) -> Result<f64, MlmcError> {
    if samples.is_empty() {
        return Err(MlmcError::EmptySamples);
    }
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

/// Ceiling with one part in 1e12 of slack, so allocations that are integral
/// up to roundoff do not gain a spurious extra sample.
fn ceil_samples(ideal: f64) -> u64 {
    ((ideal * (1.0 - 1e-12)).ceil() as u64).max(1)
}

/// Samples needed to push the MC sampling error below `eps`: `ceil(V / eps^2)`.
pub fn mc_num_samples(variance: f64, eps: f64) -> u64 {
    ceil_samples(variance / (eps * eps))
}

/// Sample variance, `mean(x^2) - mean(x)^2`, floored at zero.
pub fn sample_variance(values: &[f64]) -> Result<f64, MlmcError> {
    if values.len() < 2 {
        return Err(MlmcError::NotEnoughSamples { need: 2, got: values.len() });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mean_sq = values.iter().map(|v| v * v).sum::<f64>() / n;
    Ok((mean_sq - mean * mean).max(0.0))
}

/// Multilevel estimate: `mean(Y_0) + sum_l mean(Y_l)` over contiguous levels.
pub fn ml_estimate(levels: &[LevelStats]) -> Result<f64, MlmcError> {
    if levels.is_empty() {
        return Err(MlmcError::EmptySamples);
    }
    let mut total = 0.0;
    for (expect, stat) in levels.iter().enumerate() {
        if stat.level != expect {
            return Err(MlmcError::MissingLevel(expect));
        }
        if stat.n == 0 {
            return Err(MlmcError::EmptySamples);
        }
        total += stat.mean_y();
    }
    Ok(total)
}

/// Variance-optimal sample allocation under `sum_l V_l / N_l <= eps^2`:
/// `N_l = eps^-2 (sum_k sqrt(V_k C_k)) sqrt(V_l / C_l)`, ceiled with floor 1.
pub fn allocate_samples(variances: &[f64], costs: &[f64], eps: f64) -> Vec<u64> {
    assert_eq!(variances.len(), costs.len());
    let lagrange: f64 = variances
        .iter()
        .zip(costs)
        .map(|(&v, &c)| (v.max(0.0) * c).sqrt())
        .sum();
    variances
        .iter()
        .zip(costs)
        .map(|(&v, &c)| ceil_samples(lagrange / (eps * eps) * (v.max(0.0) / c).sqrt()))
        .collect()
}

/// Over-estimate of the bias on the finest level:
/// `|mean Y_L| / (r m^alpha - 1)`.
pub fn bias_estimate(mean_y_finest: f64, alpha: f64, refine_factor: f64, r: f64) -> Result<f64, MlmcError> {
    let growth = r * refine_factor.powf(alpha);
    if !(growth > 1.0) {
        return Err(MlmcError::NotAsymptotic(growth));
    }
    Ok(mean_y_finest.abs() / (growth - 1.0))
}

fn log_log_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let r2 = if ss_tot > 1e-300 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (slope, r2)
}

/// Least-squares slopes of `log |mean Y_l|`, `log V_l` and `log C_l` against
/// `log M_l`. Levels with non-positive `|mean Y_l|` or `V_l` are excluded
/// with a warning; level 0 never enters the Y-based fits (`Y_0 = Q_0`).
pub fn estimate_rates(stats: &[LevelStats], dofs: &[f64]) -> Result<RateEstimates, MlmcError> {
    assert_eq!(stats.len(), dofs.len());
    let mut mean_pts = Vec::new();
    let mut var_pts = Vec::new();
    let mut cost_pts = Vec::new();
    let mut y_levels_used = Vec::new();
    for (stat, &m) in stats.iter().zip(dofs) {
        let x = m.ln();
        if stat.level >= 1 {
            let ym = stat.mean_y().abs();
            let yv = stat.var_y();
            if ym > 0.0 && yv > 0.0 {
                mean_pts.push((x, ym.ln()));
                var_pts.push((x, yv.ln()));
                y_levels_used.push(stat.level);
            } else {
                log::warn!(
                    "level {} excluded from rate fit: |mean Y| = {ym}, V = {yv}",
                    stat.level
                );
            }
        }
        if stat.mean_cost() > 0.0 {
            cost_pts.push((x, stat.mean_cost().ln()));
        }
    }
    if mean_pts.len() < 2 {
        return Err(MlmcError::Regression(format!(
            "need at least 2 usable Y-levels, got {}",
            mean_pts.len()
        )));
    }
    if cost_pts.len() < 2 {
        return Err(MlmcError::Regression("need at least 2 levels with positive cost".into()));
    }
    let (slope_mean, alpha_r2) = log_log_fit(&mean_pts);
    let (slope_var, beta_r2) = log_log_fit(&var_pts);
    let (slope_cost, gamma_r2) = log_log_fit(&cost_pts);
    Ok(RateEstimates {
        alpha: -slope_mean,
        beta: -slope_var,
        gamma: slope_cost,
        alpha_r2,
        beta_r2,
        gamma_r2,
        y_levels_used,
    })
}

/// Asymptotic cost-growth exponents in `cost ~ eps^-p`:
/// multilevel `p = 2 + max(0, (gamma - beta) / alpha)`, single-level
/// `p = 2 + gamma / alpha`.
pub fn predict_cost_growth(alpha: f64, beta: f64, gamma: f64) -> Result<(f64, f64), MlmcError> {
    if !(alpha > 0.0) {
        return Err(MlmcError::NonPositiveAlpha(alpha));
    }
    let mlmc = 2.0 + ((gamma - beta) / alpha).max(0.0);
    let mc = 2.0 + gamma / alpha;
    Ok((mlmc, mc))
}

/// Per-sample record for the run log.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SampleRecord {
    pub level: usize,
    pub index: u64,
    pub seed: u64,
    pub y: f64,
    pub q_fine: f64,
    pub q_coarse: Option<f64>,
    pub cost: f64,
}

/// Serialisable per-level summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelSnapshot {
    pub level: usize,
    pub n: u64,
    pub mean_y: f64,
    pub var_y: f64,
    pub mean_q: f64,
    pub var_q: f64,
    pub mean_cost: f64,
    pub mean_cost_fine: f64,
    pub dof: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlmcResult {
    pub estimate: f64,
    /// Extrapolated bias error on the finest level.
    pub bias_error: f64,
    /// Sampling error `sqrt(sum_l V_l / N_l)`.
    pub sampling_error: f64,
    /// Bias-decay rate used for the final bias check.
    pub alpha_used: f64,
    pub converged: bool,
    pub total_cost: f64,
    pub levels: Vec<LevelSnapshot>,
    pub rates: Option<RateEstimates>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub samples: Vec<SampleRecord>,
}

impl MlmcResult {
    /// Total RMSE from the reported error split.
    pub fn total_rmse(&self) -> f64 {
        (self.bias_error.powi(2) + self.sampling_error.powi(2)).sqrt()
    }
}

fn run_batch<M: PairModel + ?Sized>(
    model: &M,
    tasks: &[(usize, u64, u64)],
    workers: usize,
) -> Result<Vec<PairSample>, MlmcError> {
    let workers = workers.max(1).min(tasks.len().max(1));
    let mut slots: Vec<Option<Result<PairSample, MlmcError>>> = Vec::new();
    slots.resize_with(tasks.len(), || None);
    if workers == 1 {
        for (slot, &(level, _, seed)) in slots.iter_mut().zip(tasks) {
            *slot = Some(model.evaluate(level, seed).map_err(|e| MlmcError::Model(e.to_string())));
        }
    } else {
        // Round-robin assignment; completion order cannot influence the
        // result because each worker writes disjoint, pre-assigned slots.
        let results: Vec<Vec<(usize, Result<PairSample, MlmcError>)>> =
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..workers)
                    .map(|w| {
                        scope.spawn(move || {
                            tasks
                                .iter()
                                .enumerate()
                                .skip(w)
                                .step_by(workers)
                                .map(|(idx, &(level, _, seed))| {
                                    (
                                        idx,
                                        model
                                            .evaluate(level, seed)
                                            .map_err(|e| MlmcError::Model(e.to_string())),
                                    )
                                })
                                .collect()
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            });
        for part in results {
            for (idx, res) in part {
                slots[idx] = Some(res);
            }
        }
    }
    // propagate the first failure in task order, deterministically
    let mut out = Vec::with_capacity(tasks.len());
    for slot in slots {
        out.push(slot.expect("slot filled")?);
    }
    Ok(out)
}

/// Evaluate a fixed number of samples on each of the levels `0..n.len()`,
/// in parallel batches folded in deterministic order. This is the
/// screening-study primitive used for rate estimation.
pub fn fixed_sample_run<M: PairModel + ?Sized, S: Fn(usize, u64) -> u64 + Sync>(
    model: &M,
    n_per_level: &[u64],
    seeder: &S,
    workers: usize,
    keep_samples: bool,
) -> Result<(Vec<LevelStats>, Vec<SampleRecord>), MlmcError> {
    let mut stats: Vec<LevelStats> = (0..n_per_level.len()).map(LevelStats::new).collect();
    let mut log = Vec::new();
    let tasks: Vec<(usize, u64, u64)> = n_per_level
        .iter()
        .enumerate()
        .flat_map(|(l, &n)| (0..n).map(move |i| (l, i, 0)))
        .map(|(l, i, _)| (l, i, seeder(l, i)))
        .collect();
    let results = run_batch(model, &tasks, workers)?;
    for (&(level, index, seed), sample) in tasks.iter().zip(&results) {
        stats[level].push(sample);
        if keep_samples {
            log.push(SampleRecord {
                level,
                index,
                seed,
                y: sample.y,
                q_fine: sample.q_fine,
                q_coarse: sample.q_coarse,
                cost: sample.cost,
            });
        }
    }
    Ok((stats, log))
}

/// Adaptive multilevel Monte Carlo driver.
///
/// Starting from level 0: take `warmup` samples on the newly added level,
/// re-estimate all level variances, re-allocate and top up samples, then
/// test the extrapolated bias of the finest level against `eps_bias`.
/// Levels are added until the bias converges or `max_level` is reached
/// (in which case the result is flagged unconverged).
pub fn adaptive_mlmc<M: PairModel + ?Sized, S: Fn(usize, u64) -> u64 + Sync>(
    model: &M,
    cfg: &MlmcConfig,
    seeder: &S,
    workers: usize,
) -> Result<MlmcResult, MlmcError> {
    cfg.validate()?;
    let mut stats: Vec<LevelStats> = Vec::new();
    let mut log: Vec<SampleRecord> = Vec::new();
    let mut rates: Option<RateEstimates>;
    let mut alpha_used;
    let mut bias;
    let mut converged = false;

    let fold = |stats: &mut Vec<LevelStats>,
                    log: &mut Vec<SampleRecord>,
                    tasks: &[(usize, u64, u64)],
                    samples: Vec<PairSample>| {
        for (&(level, index, seed), sample) in tasks.iter().zip(&samples) {
            stats[level].push(sample);
            if cfg.keep_samples {
                log.push(SampleRecord {
                    level,
                    index,
                    seed,
                    y: sample.y,
                    q_fine: sample.q_fine,
                    q_coarse: sample.q_coarse,
                    cost: sample.cost,
                });
            }
        }
    };

    let mut level = 0usize;
    loop {
        // warm-up samples on the newly added level
        stats.push(LevelStats::new(level));
        let tasks: Vec<(usize, u64, u64)> =
            (0..cfg.warmup).map(|i| (level, i, seeder(level, i))).collect();
        let samples = run_batch(model, &tasks, workers)?;
        fold(&mut stats, &mut log, &tasks, samples);

        // variance estimates on all levels, guarded against underestimation
        // from very small sample counts by the max over the last two levels
        let variances: Vec<f64> = stats
            .iter()
            .map(|s| {
                let mut v = s.var_y();
                if s.n < 10 && s.level >= 1 {
                    v = v.max(stats[s.level - 1].var_y());
                }
                v
            })
            .collect();
        let costs: Vec<f64> = stats.iter().map(LevelStats::mean_cost).collect();

        // optimal allocation and top-up
        let targets = allocate_samples(&variances, &costs, cfg.eps_sampling);
        let tasks: Vec<(usize, u64, u64)> = stats
            .iter()
            .enumerate()
            .flat_map(|(l, s)| (s.n..targets[l].max(s.n)).map(move |i| (l, i, 0)))
            .map(|(l, i, _)| (l, i, seeder(l, i)))
            .collect();
        if !tasks.is_empty() {
            let samples = run_batch(model, &tasks, workers)?;
            fold(&mut stats, &mut log, &tasks, samples);
        }

        // bias test on the current finest level, using the fitted decay
        // rate once enough levels exist to fit one
        let dofs: Vec<f64> = (0..=level).map(|l| model.dof(l)).collect();
        rates = estimate_rates(&stats, &dofs).ok();
        alpha_used = match &rates {
            Some(r) if r.alpha > 0.0 && cfg.bias_safety * cfg.refine_factor.powf(r.alpha) > 1.0 => {
                r.alpha
            }
            _ => cfg.alpha_fallback,
        };
        bias = bias_estimate(
            stats[level].mean_y(),
            alpha_used,
            cfg.refine_factor,
            cfg.bias_safety,
        )?;
        if bias < cfg.eps_bias {
            converged = true;
            break;
        }
        if level == cfg.max_level {
            log::warn!("bias tolerance unmet at max level {level}: {bias} >= {}", cfg.eps_bias);
            break;
        }
        level += 1;
    }

    let sampling_error =
        stats.iter().map(|s| s.var_y() / s.n as f64).sum::<f64>().sqrt();
    let estimate = ml_estimate(&stats)?;
    let total_cost: f64 = stats.iter().map(|s| s.sum_cost).sum();
    let levels = stats
        .iter()
        .map(|s| LevelSnapshot {
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
        .collect();
    Ok(MlmcResult {
        estimate,
        bias_error: bias,
        sampling_error,
        alpha_used,
        converged,
        total_cost,
        levels,
        rates,
        samples: log,
    })
}
