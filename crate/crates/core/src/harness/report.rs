//! Result persistence: manifest, per-sample log, summary, allocation and
//! cost tables, and convergence/cost plots. All outputs are byte-stable
//! functions of the run result; wall-clock times never enter them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::mlmc::{allocate_samples, mc_num_samples, predict_cost_growth, MlmcResult};

use super::config::CaseStudy;
use super::runner::RunOutputs;
use super::svg::{line_chart, ChartSpec, Series};
use super::HarnessError;

/// One row of the allocation/cost tables for a given sampling tolerance.
///
/// `n_per_level` is the raw variance-optimal allocation rounded to the
/// nearest integer (fine levels may legitimately get 0, as in the published
/// table layout); the live estimator instead floors every level at one
/// sample, and `estimator_cost` prices that variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsRow {
    pub eps_s: f64,
    pub n_per_level: Vec<u64>,
    pub n_mc: u64,
    pub mlmc_cost: f64,
    pub mc_cost: f64,
    pub speedup: Option<f64>,
    pub mlmc_cost_rel_level0: Option<f64>,
    pub estimator_cost: f64,
}

/// Allocation and cost tables at the requested tolerances, computed from
/// the measured per-level variances and costs. Single-level MC is priced on
/// the finest sampled level with its fine-grid-only cost, matching bias.
pub fn build_tables(result: &MlmcResult, report_eps: &[f64]) -> Vec<EpsRow> {
    let variances: Vec<f64> = result.levels.iter().map(|l| l.var_y).collect();
    let costs: Vec<f64> = result.levels.iter().map(|l| l.mean_cost).collect();
    let finest = result.levels.last().expect("at least one level");
    let c0 = result.levels[0].mean_cost;
    let lagrange: f64 =
        variances.iter().zip(&costs).map(|(&v, &c)| (v.max(0.0) * c).sqrt()).sum();
    report_eps
        .iter()
        .map(|&eps| {
            let n_table: Vec<u64> = variances
                .iter()
                .zip(&costs)
                .map(|(&v, &c)| {
                    (lagrange / (eps * eps) * (v.max(0.0) / c).sqrt()).round() as u64
                })
                .collect();
            let mlmc_cost: f64 =
                n_table.iter().zip(&costs).map(|(&n, &c)| n as f64 * c).sum();
            let n_mc = mc_num_samples(finest.var_q, eps);
            let mc_cost = n_mc as f64 * finest.mean_cost_fine;
            let n_est = allocate_samples(&variances, &costs, eps);
            let estimator_cost: f64 =
                n_est.iter().zip(&costs).map(|(&n, &c)| n as f64 * c).sum();
            EpsRow {
                eps_s: eps,
                n_per_level: n_table,
                n_mc,
                mlmc_cost,
                mc_cost,
                speedup: (mlmc_cost > 0.0).then(|| mc_cost / mlmc_cost),
                mlmc_cost_rel_level0: (c0 > 0.0).then(|| mlmc_cost / c0),
                estimator_cost,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostExponents {
    pub mlmc: f64,
    pub mc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub estimate: f64,
    pub bias_error: f64,
    pub sampling_error: f64,
    pub total_rmse: f64,
    pub alpha_used: f64,
    pub converged: bool,
    pub total_cost: f64,
    pub rates: Option<crate::mlmc::RateEstimates>,
    pub predicted_cost_exponents: Option<CostExponents>,
    pub levels: Vec<crate::mlmc::LevelSnapshot>,
    pub mesh: Vec<crate::mesh::MeshSummary>,
    pub tables: Vec<EpsRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact: String,
    pub version: String,
    pub base_seed: u64,
    pub case: CaseStudy,
    pub mesh: Vec<crate::mesh::MeshSummary>,
    pub outputs: Vec<String>,
}

pub struct Report {
    pub summary: Summary,
    pub manifest: Manifest,
    pub paths: Vec<PathBuf>,
}

pub fn summarise(run: &RunOutputs) -> Summary {
    let result = &run.result;
    let tables = build_tables(result, &run.case.mlmc.report_eps);
    let predicted = result
        .rates
        .as_ref()
        .and_then(|r| predict_cost_growth(r.alpha, r.beta, r.gamma).ok())
        .map(|(mlmc, mc)| CostExponents { mlmc, mc });
    Summary {
        name: run.case.name.clone(),
        estimate: result.estimate,
        bias_error: result.bias_error,
        sampling_error: result.sampling_error,
        total_rmse: result.total_rmse(),
        alpha_used: result.alpha_used,
        converged: result.converged,
        total_cost: result.total_cost,
        rates: result.rates.clone(),
        predicted_cost_exponents: predicted,
        levels: result.levels.clone(),
        mesh: run.mesh_summaries.clone(),
        tables,
    }
}

fn samples_csv(result: &MlmcResult) -> String {
    let mut rows = result.samples.clone();
    rows.sort_by_key(|r| (r.level, r.index));
    let mut out = String::from("level,seed,q_fine,q_coarse,cost_s\n");
    for r in rows {
        let coarse = r.q_coarse.map(|q| q.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{}\n", r.level, r.seed, r.q_fine, coarse, r.cost));
    }
    out
}

fn allocation_csv(tables: &[EpsRow]) -> String {
    let levels = tables.first().map_or(0, |r| r.n_per_level.len());
    let mut out = String::from("eps_s");
    for l in 0..levels {
        out.push_str(&format!(",n_{l}"));
    }
    out.push_str(",n_mc\n");
    for row in tables {
        out.push_str(&row.eps_s.to_string());
        for n in &row.n_per_level {
            out.push_str(&format!(",{n}"));
        }
        out.push_str(&format!(",{}\n", row.n_mc));
    }
    out
}

fn cost_csv(tables: &[EpsRow]) -> String {
    let mut out =
        String::from("eps_s,mlmc_cost_s,mc_cost_s,speedup,mlmc_cost_rel_level0,estimator_cost_s\n");
    for row in tables {
        let speedup = row.speedup.map(|v| v.to_string()).unwrap_or_default();
        let rel = row.mlmc_cost_rel_level0.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.eps_s, row.mlmc_cost, row.mc_cost, speedup, rel, row.estimator_cost
        ));
    }
    out
}

fn convergence_plots(summary: &Summary) -> (String, String) {
    let q_mean: Vec<(f64, f64)> =
        summary.levels.iter().map(|l| (l.dof, l.mean_q.abs())).collect();
    let y_mean: Vec<(f64, f64)> = summary
        .levels
        .iter()
        .filter(|l| l.level >= 1)
        .map(|l| (l.dof, l.mean_y.abs()))
        .collect();
    let mean = line_chart(
        &ChartSpec {
            title: "Expectation vs degrees of freedom".into(),
            x_label: "M (nodes)".into(),
            y_label: "|mean| (N)".into(),
            log_x: true,
            log_y: true,
        },
        &[
            Series { name: "Q_l".into(), points: q_mean, color: "#1f77b4" },
            Series { name: "Y_l = Q_l - Q_{l-1}".into(), points: y_mean, color: "#d62728" },
        ],
    );
    let q_var: Vec<(f64, f64)> = summary.levels.iter().map(|l| (l.dof, l.var_q)).collect();
    let y_var: Vec<(f64, f64)> = summary
        .levels
        .iter()
        .filter(|l| l.level >= 1)
        .map(|l| (l.dof, l.var_y))
        .collect();
    let var = line_chart(
        &ChartSpec {
            title: "Variance vs degrees of freedom".into(),
            x_label: "M (nodes)".into(),
            y_label: "variance (N^2)".into(),
            log_x: true,
            log_y: true,
        },
        &[
            Series { name: "V[Q_l]".into(), points: q_var, color: "#1f77b4" },
            Series { name: "V[Y_l]".into(), points: y_var, color: "#d62728" },
        ],
    );
    (mean, var)
}

fn cost_plot(summary: &Summary) -> String {
    let variances: Vec<f64> = summary.levels.iter().map(|l| l.var_y).collect();
    let costs: Vec<f64> = summary.levels.iter().map(|l| l.mean_cost).collect();
    let finest = summary.levels.last().expect("levels");
    let lagrange_sq: f64 = variances
        .iter()
        .zip(&costs)
        .map(|(&v, &c)| (v.max(0.0) * c).sqrt())
        .sum::<f64>()
        .powi(2);
    let eps_list = &summary.tables;
    let (lo, hi) = eps_list
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), r| (lo.min(r.eps_s), hi.max(r.eps_s)));
    let (lo, hi) = (0.5 * lo.min(hi), 2.0 * hi.max(lo));
    let grid: Vec<f64> =
        (0..=40).map(|i| lo * (hi / lo).powf(i as f64 / 40.0)).collect();
    let ml_curve: Vec<(f64, f64)> =
        grid.iter().map(|&e| (e, lagrange_sq / (e * e))).collect();
    let mc_curve: Vec<(f64, f64)> = grid
        .iter()
        .map(|&e| (e, finest.var_q / (e * e) * finest.mean_cost_fine))
        .collect();
    let markers: Vec<(f64, f64)> = eps_list.iter().map(|r| (r.eps_s, r.mlmc_cost)).collect();
    line_chart(
        &ChartSpec {
            title: "Estimator cost vs sampling tolerance".into(),
            x_label: "eps_s (N)".into(),
            y_label: "cost (nominal s)".into(),
            log_x: true,
            log_y: true,
        },
        &[
            Series { name: "MLMC (predicted)".into(), points: ml_curve, color: "#1f77b4" },
            Series { name: "MC on finest level".into(), points: mc_curve, color: "#d62728" },
            Series { name: "MLMC (table)".into(), points: markers, color: "#2ca02c" },
        ],
    )
}

/// Write all artefacts for a finished run into `out_dir`. Outputs are
/// byte-stable given identical inputs.
pub fn emit_report(run: &RunOutputs, out_dir: &Path) -> Result<Report, HarnessError> {
    fs::create_dir_all(out_dir.join("plots"))?;
    let summary = summarise(run);
    let names = [
        "manifest.json",
        "samples.csv",
        "summary.json",
        "allocation.csv",
        "cost.csv",
        "plots/mean_convergence.svg",
        "plots/variance_convergence.svg",
        "plots/cost_vs_epsilon.svg",
    ];
    let manifest = Manifest {
        artifact: "perimc".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        base_seed: run.case.base_seed,
        case: run.case.clone(),
        mesh: run.mesh_summaries.clone(),
        outputs: names.iter().map(|s| s.to_string()).collect(),
    };
    let (mean_svg, var_svg) = convergence_plots(&summary);
    let files: Vec<(usize, String)> = vec![
        (0, serde_json::to_string_pretty(&manifest).expect("serializable") + "\n"),
        (1, samples_csv(&run.result)),
        (2, serde_json::to_string_pretty(&summary).expect("serializable") + "\n"),
        (3, allocation_csv(&summary.tables)),
        (4, cost_csv(&summary.tables)),
        (5, mean_svg),
        (6, var_svg),
        (7, cost_plot(&summary)),
    ];
    let mut paths = Vec::new();
    for (idx, content) in files {
        let path = out_dir.join(names[idx]);
        fs::write(&path, content)?;
        paths.push(path);
    }
    Ok(Report { summary, manifest, paths })
}
