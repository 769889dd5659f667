//! Case-study orchestration: configuration, deterministic seeding, run
//! execution across worker threads, and result persistence.
//!
//! A run is fully determined by its configuration file and base seed; every
//! output byte is reproducible independent of worker count and scheduling
//! order (statistics fold in fixed sample order, and recorded costs are
//! modelled work, not wall time).

mod config;
mod report;
mod runner;
mod svg;

pub use config::{
    CaseStudy, CovarianceChoice, FieldSection, GeometrySection, MarginalChoice, MaterialSection,
    MeshSection, MlmcSection, ModelKind, SamplerChoice, SolverSection, SyntheticSection,
};
pub use report::{build_tables, emit_report, summarise, EpsRow, Manifest, Report, Summary};
pub use runner::{run_case, seed_for, BeamModel, RunOutputs};
pub use svg::{line_chart, ChartSpec, Series};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mesh(#[from] crate::mesh::MeshError),
    #[error(transparent)]
    Field(#[from] crate::fields::FieldError),
    #[error(transparent)]
    Material(#[from] crate::material::MaterialError),
    #[error(transparent)]
    Solver(#[from] crate::solver::SolverError),
    #[error(transparent)]
    Mlmc(#[from] crate::mlmc::MlmcError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
