//! Command line front end: run case studies, re-fit convergence rates from
//! a sample log, and preview field realisations.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use perimc::harness::{emit_report, run_case, seed_for, BeamModel, CaseStudy};
use perimc::mlmc::{estimate_rates, LevelStats, PairSample};

#[derive(Parser)]
#[command(name = "perimc", version, about = "Multilevel Monte Carlo peridynamic fracture studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a case study and write manifest, sample log, summary and plots.
    Run {
        /// Path to a case configuration file (TOML).
        config: Option<PathBuf>,
        /// Use a bundled preset instead of a config file.
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// Worker threads for sample evaluation.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Override the sampling tolerance (QoI units).
        #[arg(long)]
        eps_s: Option<f64>,
        /// Override the bias tolerance (QoI units).
        #[arg(long)]
        eps_b: Option<f64>,
        /// Override the maximum level.
        #[arg(long)]
        max_level: Option<usize>,
        /// Override the base seed.
        #[arg(long)]
        base_seed: Option<u64>,
        /// Take exactly N samples on every level instead of adapting.
        #[arg(long)]
        screening: Option<u64>,
        /// Output directory (default out/<case name>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-fit the convergence and cost rates from a samples.csv log.
    Rates {
        samples: PathBuf,
        /// Degrees of freedom on level 0.
        #[arg(long, default_value_t = 350.0)]
        m0: f64,
        /// Mesh refinement factor m in M_l = m^l M_0.
        #[arg(long, default_value_t = 4.0)]
        refine: f64,
    },
    /// Generate one field realisation and dump or summarise it.
    Field {
        /// Path to a case configuration file (TOML).
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// Mesh level to draw on (defaults to the finest).
        #[arg(long)]
        level: Option<usize>,
        /// Per-level sample index fed to the seed derivation.
        #[arg(long, default_value_t = 0)]
        index: u64,
        /// Write the realisation as CSV (x_mm, y_mm, fc_mpa).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print a short summary to stdout.
        #[arg(long)]
        preview: bool,
    },
}

fn load_case(config: &Option<PathBuf>, preset: &Option<String>) -> Result<CaseStudy, String> {
    match (config, preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            CaseStudy::from_toml(&text).map_err(|e| e.to_string())
        }
        (None, Some(name)) => CaseStudy::preset(name).map_err(|e| e.to_string()),
        (None, None) => Err("provide a config file or --preset".into()),
    }
}

fn cmd_run(
    config: Option<PathBuf>,
    preset: Option<String>,
    workers: usize,
    eps_s: Option<f64>,
    eps_b: Option<f64>,
    max_level: Option<usize>,
    base_seed: Option<u64>,
    screening: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), String> {
    let mut case = load_case(&config, &preset)?;
    if let Some(v) = eps_s {
        case.mlmc.eps_sampling = v;
    }
    if let Some(v) = eps_b {
        case.mlmc.eps_bias = v;
    }
    if let Some(v) = max_level {
        if let Some(mesh) = case.mesh.as_mut() {
            mesh.max_level = v;
        }
    }
    if let Some(v) = base_seed {
        case.base_seed = v;
    }
    if screening.is_some() {
        case.mlmc.screening_samples = screening;
    }
    let out_dir = out.unwrap_or_else(|| PathBuf::from("out").join(&case.name));
    let started = std::time::Instant::now();
    let run = run_case(&case, workers.max(1)).map_err(|e| e.to_string())?;
    let report = emit_report(&run, &out_dir).map_err(|e| e.to_string())?;
    let s = &report.summary;
    println!(
        "{}: estimate {:.3} N, bias {:.3} N, sampling error {:.3} N, rmse {:.3} N, \
         levels {}, modelled cost {:.2} s, converged {}",
        s.name,
        s.estimate,
        s.bias_error,
        s.sampling_error,
        s.total_rmse,
        s.levels.len(),
        s.total_cost,
        s.converged
    );
    if let Some(r) = &s.rates {
        println!(
            "rates: alpha {:.3}, beta {:.3}, gamma {:.3} (R2 {:.3}/{:.3}/{:.3})",
            r.alpha, r.beta, r.gamma, r.alpha_r2, r.beta_r2, r.gamma_r2
        );
    }
    eprintln!(
        "wrote {} files to {} in {:.1} s wall",
        report.paths.len(),
        out_dir.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_rates(samples: PathBuf, m0: f64, refine: f64) -> Result<(), String> {
    let text = std::fs::read_to_string(&samples)
        .map_err(|e| format!("cannot read {}: {e}", samples.display()))?;
    let mut stats: Vec<LevelStats> = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(format!("line {}: expected 5 columns, got {}", lineno + 1, cols.len()));
        }
        let level: usize = cols[0].parse().map_err(|e| format!("line {}: {e}", lineno + 1))?;
        let q_fine: f64 = cols[2].parse().map_err(|e| format!("line {}: {e}", lineno + 1))?;
        let q_coarse: Option<f64> =
            if cols[3].is_empty() { None } else { Some(cols[3].parse().map_err(|e| format!("line {}: {e}", lineno + 1))?) };
        let cost: f64 = cols[4].parse().map_err(|e| format!("line {}: {e}", lineno + 1))?;
        while stats.len() <= level {
            stats.push(LevelStats::new(stats.len()));
        }
        let y = match q_coarse {
            Some(qc) => q_fine - qc,
            None => q_fine,
        };
        stats[level].push(&PairSample { y, q_fine, q_coarse, cost, cost_fine: cost });
    }
    if stats.is_empty() {
        return Err("no samples found".into());
    }
    let dofs: Vec<f64> = (0..stats.len()).map(|l| m0 * refine.powi(l as i32)).collect();
    let rates = estimate_rates(&stats, &dofs).map_err(|e| e.to_string())?;
    println!("{}", serde_json::to_string_pretty(&rates).expect("serializable"));
    Ok(())
}

fn cmd_field(
    config: Option<PathBuf>,
    preset: Option<String>,
    level: Option<usize>,
    index: u64,
    out: Option<PathBuf>,
    preview: bool,
) -> Result<(), String> {
    let case = load_case(&config, &preset)?;
    let model = BeamModel::from_case(&case).map_err(|e| e.to_string())?;
    let level = level.unwrap_or(case.max_level());
    if level > case.max_level() {
        return Err(format!("level {level} exceeds max level {}", case.max_level()));
    }
    let seed = seed_for(case.base_seed, level, index);
    let sample = model.strength_field(level, seed).map_err(|e| e.to_string())?;
    let values = sample.values(level).expect("drawn level");
    let coords = &model.hierarchy.levels[level].coords;
    if preview || out.is_none() {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let min = values.iter().cloned().fold(f64::MAX, f64::min);
        let max = values.iter().cloned().fold(f64::MIN, f64::max);
        println!(
            "level {level}, seed {seed}, {} nodes: strength min {min:.2} / mean {mean:.2} / max {max:.2} MPa",
            values.len()
        );
    }
    if let Some(path) = out {
        let mut csv = String::from("x_mm,y_mm,fc_mpa\n");
        for (p, v) in coords.iter().zip(values) {
            csv.push_str(&format!("{},{},{}\n", p[0] * 1e3, p[1] * 1e3, v));
        }
        std::fs::write(&path, csv).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, preset, workers, eps_s, eps_b, max_level, base_seed, screening, out } => {
            cmd_run(config, preset, workers, eps_s, eps_b, max_level, base_seed, screening, out)
        }
        Command::Rates { samples, m0, refine } => cmd_rates(samples, m0, refine),
        Command::Field { config, preset, level, index, out, preview } => {
            cmd_field(config, preset, level, index, out, preview)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
