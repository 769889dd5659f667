//! Forward propagation of spatially correlated material uncertainty through
//! a 2D bond-based peridynamic fracture model, with standard and multilevel
//! Monte Carlo estimation of failure-load statistics.
//!
//! The crate is organised along the pipeline:
//!
//! - [`mesh`]: nested hierarchy of uniform grids and peridynamic bonds
//! - [`fields`]: correlated Gaussian fields, copula marginals, property maps
//! - [`material`]: non-linear softening constitutive law
//! - [`solver`]: explicit quasi-static three-point-bend simulation
//! - [`mlmc`]: standard/multilevel Monte Carlo estimation and rate fits
//! - [`harness`]: case studies, deterministic seeding, reports and plots

pub mod fields;
pub mod harness;
pub mod material;
pub mod mesh;
pub mod mlmc;
pub mod solver;
