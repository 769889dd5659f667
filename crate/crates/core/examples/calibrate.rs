//! Manual tuning harness for the quasi-static solver parameters.
//!
//! Sweeps loading rate and damping on the notched concrete beam and prints
//! peak load, step counts and the kinetic-energy/work ratio per level, plus
//! an elastic stiffness probe against beam theory.
//!
//! Run: cargo run -p perimc --example calibrate --release [-- sweep|levels|elastic]

use perimc::fields::PropertyMap;
use perimc::material::ProblemKind;
use perimc::mesh::{build_hierarchy, Rectangle};
use perimc::solver::{
    bond_properties, fit_stiffness, run_sample, BeamGeometry, BeamSetup, SolverConfig,
};

fn uniform_field(n: usize, fc: f64) -> perimc::fields::NodeProperties {
    PropertyMap::default().apply(&vec![fc; n]).unwrap()
}

fn run_notched(level_idx: usize, max_level: usize, cfg: &SolverConfig, lambda: f64) {
    let geometry = BeamGeometry { length: 0.35, depth: 0.10, thickness: 0.05, span: 0.25 };
    let h = build_hierarchy(Rectangle { width: 0.35, height: 0.10 }, 0.010, max_level, 0.05)
        .unwrap();
    let level = &h.levels[level_idx];
    let setup = BeamSetup::new(level, geometry, lambda, cfg).unwrap();
    let props = uniform_field(level.node_count(), 42.3);
    let kind = ProblemKind::PlaneStress { thickness: 0.05 };
    let field = bond_properties(level, &setup.bonds, &props, 25.0, 0.25, kind).unwrap();
    match run_sample(&setup, &field, cfg, 0) {
        Ok(q) => println!(
            "  level {level_idx}: peak {:8.1} N  steps {:7}  ke/W {:9.2e}  post_peak {}  wall {:6.2}s  cost {:6.2}",
            q.peak_load, q.steps, q.ke_work_ratio, q.post_peak, q.wall_s, q.cost
        ),
        Err(e) => println!("  level {level_idx}: ERROR {e}"),
    }
}

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "sweep".into());
    match mode.as_str() {
        "sweep" => {
            for rate in [0.0025, 0.005, 0.01] {
                for damping in [2e3, 5e3, 1e4] {
                    println!("rate {rate} damping {damping:.0e}:");
                    let cfg = SolverConfig {
                        loading_rate: rate,
                        damping,
                        max_steps: 400_000,
                        soft_start_time: 5e-4,
                        stop_load_floor: 200.0,
                        ..Default::default()
                    };
                    run_notched(0, 2, &cfg, 0.5);
                }
            }
        }
        "levels" => {
            let cfg = SolverConfig {
                loading_rate: std::env::args()
                    .nth(2)
                    .and_then(|s| s.parse().ok())
                    .unwrap_or(0.02),
                damping: std::env::args()
                    .nth(3)
                    .and_then(|s| s.parse().ok())
                    .unwrap_or(4e4),
                max_steps: 600_000,
                soft_start_time: 5e-4,
                stop_load_floor: 200.0,
                ..Default::default()
            };
            for l in 0..3 {
                run_notched(l, 2, &cfg, 0.5);
            }
        }
        "elastic" => {
            // unnotched specimen, small target displacement, stiffness vs
            // 48 E I / L^3 and the shear-corrected reference
            let geometry = BeamGeometry { length: 0.35, depth: 0.10, thickness: 0.05, span: 0.25 };
            let h =
                build_hierarchy(Rectangle { width: 0.35, height: 0.10 }, 0.010, 2, 0.05).unwrap();
            let cfg = SolverConfig {
                loading_rate: 0.005,
                damping: 4e4,
                max_steps: 400_000,
                soft_start_time: 1e-3,
                target_displacement: 4e-6,
                stop_load_floor: 1e9,
                history_stride: 8,
                ..Default::default()
            };
            let map = PropertyMap::default();
            let e = map.youngs_modulus_pa(42.3);
            let i2 = geometry.thickness * geometry.depth.powi(3) / 12.0;
            let k_eb = 48.0 * e * i2 / geometry.span.powi(3);
            // Timoshenko with kappa = 5/6, G = 3E/8 (plane stress, nu = 1/3)
            let shear = 3.2 * (geometry.depth / geometry.span).powi(2);
            println!("K_EB = {k_eb:.4e} N/m, shear add-on factor {shear:.3}");
            for l in [1usize, 2] {
                let level = &h.levels[l];
                let setup = BeamSetup::new(level, geometry, 0.0, &cfg).unwrap();
                let props = uniform_field(level.node_count(), 42.3);
                let kind = ProblemKind::PlaneStress { thickness: 0.05 };
                let field = bond_properties(level, &setup.bonds, &props, 25.0, 0.25, kind).unwrap();
                match run_sample(&setup, &field, &cfg, 0) {
                    Ok(q) => {
                        let k_fit = fit_stiffness(&q.history, 0.4, 0.95).unwrap_or(f64::NAN);
                        println!(
                            "  level {l}: K {k_fit:.4e}  K/K_EB {:.3}  K/K_timo {:.3}  steps {}  ke/W {:.2e}  wall {:.1}s",
                            k_fit / k_eb,
                            k_fit * (1.0 + shear) / k_eb,
                            q.steps,
                            q.ke_work_ratio,
                            q.wall_s
                        );
                    }
                    Err(e) => println!("  level {l}: ERROR {e}"),
                }
            }
        }
        other => eprintln!("unknown mode {other}"),
    }
}
