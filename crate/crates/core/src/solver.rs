//! Explicit quasi-static bond-based peridynamic simulation of a
//! three-point-bend specimen.
//!
//! Quasi-static response is approximated by dynamic relaxation: damped
//! explicit dynamics under a slowly ramped prescribed velocity at the
//! midspan loading patch, with kinetic energy monitored against external
//! work. Supports are single node columns with the vertical displacement
//! pinned; point constraints are singular in a nonlocal model. The quantity
//! of interest is the peak reaction at the loading patch.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::NodeProperties;
use crate::material::{bond_stiffness, critical_stretch, MaterialError, ProblemKind};
use crate::mesh::{Bond, MeshLevel};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error("field/mesh mismatch: {0}")]
    FieldMismatch(String),
    #[error("simulation diverged at step {step}: max displacement {max_displacement:.3e} m ({detail})")]
    Diverged { step: usize, max_displacement: f64, detail: String },
    #[error("sample did not fail within {steps} steps (peak so far {peak:.3} N); \
             raise max_steps or the loading rate")]
    NoFailure { steps: usize, peak: f64 },
    #[error("empty reaction history")]
    EmptyHistory,
}

/// Beam dimensions and support span, metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamGeometry {
    pub length: f64,
    pub depth: f64,
    pub thickness: f64,
    pub span: f64,
}

impl BeamGeometry {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.length > 0.0 && self.depth > 0.0 && self.thickness > 0.0 && self.span > 0.0) {
            return Err(SolverError::InvalidConfig(format!("non-positive dimension: {self:?}")));
        }
        if self.span > self.length {
            return Err(SolverError::InvalidConfig(format!(
                "span {} exceeds length {}",
                self.span, self.length
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Mass density, kg/m^3.
    pub density: f64,
    /// Magnitude of the prescribed downward platen velocity, m/s.
    pub loading_rate: f64,
    pub max_steps: usize,
    /// Mass-proportional damping coefficient, 1/s.
    pub damping: f64,
    /// Stable-timestep safety factor in (0, 1].
    pub dt_safety: f64,
    /// Half-cosine ramp time of the platen velocity, s.
    pub soft_start_time: f64,
    /// Width of the loading patch in node columns.
    pub load_patch_cols: usize,
    /// Depth of the loading patch in node rows (from the top surface).
    pub load_patch_rows: usize,
    /// Stop once the reaction drops below this fraction of its running peak.
    pub stop_load_fraction: f64,
    /// Peak must exceed this (N) before the drop rule may fire.
    pub stop_load_floor: f64,
    /// Stop when the platen has travelled this far (m); 0 disables. Runs
    /// stopped this way count as deliberately non-failing (elastic probes).
    pub target_displacement: f64,
    /// Record one history point every this many steps.
    pub history_stride: usize,
    pub record_damage: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            density: 2346.0,
            loading_rate: 2e-2,
            max_steps: 400_000,
            damping: 4e4,
            dt_safety: 0.8,
            soft_start_time: 1e-3,
            load_patch_cols: 3,
            load_patch_rows: 1,
            stop_load_fraction: 0.2,
            stop_load_floor: 100.0,
            target_displacement: 0.0,
            history_stride: 16,
            record_damage: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.density > 0.0) {
            return Err(SolverError::InvalidConfig(format!("density = {}", self.density)));
        }
        if !(self.dt_safety > 0.0 && self.dt_safety <= 1.0) {
            return Err(SolverError::InvalidConfig(format!(
                "dt_safety = {} must be in (0, 1]",
                self.dt_safety
            )));
        }
        if !(self.stop_load_fraction > 0.0 && self.stop_load_fraction < 1.0) {
            return Err(SolverError::InvalidConfig(format!(
                "stop_load_fraction = {}",
                self.stop_load_fraction
            )));
        }
        if self.load_patch_cols == 0 || self.load_patch_rows == 0 {
            return Err(SolverError::InvalidConfig("empty loading patch".into()));
        }
        if !(self.loading_rate >= 0.0) {
            return Err(SolverError::InvalidConfig(format!("loading_rate = {}", self.loading_rate)));
        }
        Ok(())
    }
}

/// One peak-load evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QoiSample {
    /// Peak reaction at the loading patch, N.
    pub peak_load: f64,
    pub level: usize,
    pub seed: u64,
    /// Deterministic modelled cost in nominal seconds (bond evaluations
    /// divided by a fixed nominal rate), used for all estimator statistics.
    pub cost: f64,
    /// Measured wall time, diagnostics only (not reproducible).
    pub wall_s: f64,
    pub steps: usize,
    /// The run continued past the peak into the softening branch.
    pub post_peak: bool,
    /// Kinetic-energy / external-work ratio at the running load peak; the
    /// post-peak crack run is dynamic by nature and does not contribute.
    pub ke_work_ratio: f64,
    /// (platen displacement m, reaction N), strided.
    pub history: Vec<(f64, f64)>,
    /// Volume-weighted nodal damage index, if requested.
    pub damage: Option<Vec<f64>>,
}

/// Per-bond constitutive parameters aligned with an unordered bond list.
#[derive(Debug, Clone)]
pub struct BondField {
    pub c: Vec<f64>,
    pub s0: Vec<f64>,
    pub sc: Vec<f64>,
    /// Softening decay rate shared by all bonds.
    pub k: f64,
    /// Softening transition parameter shared by all bonds.
    pub alpha: f64,
}

impl BondField {
    pub fn max_stiffness(&self) -> f64 {
        self.c.iter().cloned().fold(0.0, f64::max)
    }
}

/// Derive per-bond (c, s0, sc) from nodal properties: each bond takes the
/// mean of its endpoint values of E, f_t and G_F, with `s0 = f_t / E`.
pub fn bond_properties(
    level: &MeshLevel,
    bonds: &[Bond],
    props: &NodeProperties,
    k: f64,
    alpha: f64,
    kind: ProblemKind,
) -> Result<BondField, SolverError> {
    let n = level.node_count();
    if props.e.len() != n || props.ft.len() != n || props.gf.len() != n {
        return Err(SolverError::FieldMismatch(format!(
            "properties for {} nodes on a {n}-node level",
            props.e.len()
        )));
    }
    let delta = level.horizon;
    let mut field = BondField {
        c: Vec::with_capacity(bonds.len()),
        s0: Vec::with_capacity(bonds.len()),
        sc: Vec::with_capacity(bonds.len()),
        k,
        alpha,
    };
    for b in bonds {
        let (i, j) = (b.i as usize, b.j as usize);
        let e = 0.5 * (props.e[i] + props.e[j]);
        let ft = 0.5 * (props.ft[i] + props.ft[j]);
        let gf = 0.5 * (props.gf[i] + props.gf[j]);
        let s0 = ft / e;
        let c = bond_stiffness(e, delta, kind)?;
        let sc = critical_stretch(gf, e, delta, s0, k, alpha, kind)?;
        field.c.push(c);
        field.s0.push(s0);
        field.sc.push(sc);
    }
    Ok(field)
}

/// Remove every bond whose segment crosses the notch line: a vertical cut at
/// midspan from the bottom face up to `lambda * depth`.
pub fn apply_notch(level: &MeshLevel, lambda: f64) -> Result<Vec<Bond>, SolverError> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(SolverError::InvalidConfig(format!("notch ratio {lambda} not in [0, 1)")));
    }
    if lambda == 0.0 {
        return Ok(level.bonds.clone());
    }
    let x_notch = 0.5 * level.width();
    let y_top = lambda * level.height();
    let crosses = |a: [f64; 2], b: [f64; 2]| -> bool {
        let (da, db) = (a[0] - x_notch, b[0] - x_notch);
        if da * db >= 0.0 {
            return false;
        }
        let y_cross = a[1] + (b[1] - a[1]) * (x_notch - a[0]) / (b[0] - a[0]);
        y_cross < y_top
    };
    Ok(level
        .bonds
        .iter()
        .filter(|b| !crosses(level.coords[b.i as usize], level.coords[b.j as usize]))
        .copied()
        .collect())
}

/// Stable explicit timestep: `safety * sqrt(2 rho / max_i sum_j c V_j / xi)`
/// with the stiffest bond constant applied everywhere.
pub fn stable_timestep(
    level: &MeshLevel,
    bonds: &[Bond],
    density: f64,
    c_max: f64,
    safety: f64,
) -> Result<f64, SolverError> {
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(SolverError::InvalidConfig(format!("safety = {safety} must be in (0, 1]")));
    }
    if !(density > 0.0) || !(c_max > 0.0) {
        return Err(SolverError::InvalidConfig(format!(
            "need positive density ({density}) and stiffness ({c_max})"
        )));
    }
    let vol = level.node_volume();
    let mut per_node = vec![0.0f64; level.node_count()];
    for b in bonds {
        let w = c_max * vol * b.vol_factor / b.xi;
        per_node[b.i as usize] += w;
        per_node[b.j as usize] += w;
    }
    let worst = per_node.iter().cloned().fold(0.0, f64::max);
    if worst == 0.0 {
        return Err(SolverError::InvalidConfig("no bonds: stiffness sum is zero".into()));
    }
    Ok(safety * (2.0 * density / worst).sqrt())
}

/// Peak of a reaction history plus a post-peak flag; warns when the series
/// never softened.
pub fn extract_peak_load(history: &[f64]) -> Result<(f64, bool), SolverError> {
    if history.is_empty() {
        return Err(SolverError::EmptyHistory);
    }
    let peak = history.iter().cloned().fold(f64::MIN, f64::max);
    let post_peak = *history.last().unwrap() < 0.999 * peak && peak > 0.0;
    if !post_peak {
        log::warn!("no post-peak softening observed; peak {peak} is the last ramp value");
    }
    Ok((peak, post_peak))
}

/// Node boundary condition code.
#[derive(Debug, Clone, Copy, PartialEq)]
enum NodeBc {
    Free,
    /// Vertical displacement pinned (support column).
    Support,
    /// Support node with the horizontal displacement pinned too, to remove
    /// the rigid-body translation mode.
    SupportPinned,
    /// Vertical velocity prescribed (loading patch).
    Driven,
}

/// Immutable per-level scaffolding shared by all samples: notched bond list
/// and boundary-condition node sets.
#[derive(Debug, Clone)]
pub struct BeamSetup {
    pub level: MeshLevel,
    pub bonds: Vec<Bond>,
    pub support_nodes: Vec<u32>,
    pub load_nodes: Vec<u32>,
    bc: Vec<NodeBc>,
    pub level_index: usize,
}

impl BeamSetup {
    pub fn new(
        level: &MeshLevel,
        geometry: BeamGeometry,
        notch_ratio: f64,
        cfg: &SolverConfig,
    ) -> Result<Self, SolverError> {
        geometry.validate()?;
        cfg.validate()?;
        if (level.width() - geometry.length).abs() > 1e-9 * geometry.length
            || (level.height() - geometry.depth).abs() > 1e-9 * geometry.depth
        {
            return Err(SolverError::InvalidConfig(format!(
                "mesh {}x{} does not match geometry {}x{}",
                level.width(),
                level.height(),
                geometry.length,
                geometry.depth
            )));
        }
        let bonds = apply_notch(level, notch_ratio)?;
        let col_of = |x: f64| -> usize {
            (((x - level.offset) / level.dx).round() as i64).clamp(0, level.nx as i64 - 1) as usize
        };
        let sup_left = col_of(0.5 * (geometry.length - geometry.span));
        let sup_right = col_of(0.5 * (geometry.length + geometry.span));
        let centre = col_of(0.5 * geometry.length);
        let half = cfg.load_patch_cols / 2;
        let load_cols: Vec<usize> = (centre.saturating_sub(half)
            ..=(centre + cfg.load_patch_cols - 1 - half).min(level.nx - 1))
            .collect();
        if load_cols.contains(&sup_left) || load_cols.contains(&sup_right) {
            return Err(SolverError::InvalidConfig(
                "loading patch overlaps a support column; span too small for this level".into(),
            ));
        }
        let mut bc = vec![NodeBc::Free; level.node_count()];
        let mut support_nodes = Vec::new();
        let mut load_nodes = Vec::new();
        for iy in 0..level.ny {
            for &col in &[sup_left, sup_right] {
                let idx = iy * level.nx + col;
                bc[idx] = NodeBc::Support;
                support_nodes.push(idx as u32);
            }
        }
        // one mid-depth node keeps the horizontal rigid-body mode out
        let pin = (level.ny / 2) * level.nx + sup_left;
        bc[pin] = NodeBc::SupportPinned;
        let top_rows = level.ny.saturating_sub(cfg.load_patch_rows)..level.ny;
        for iy in top_rows {
            for &col in &load_cols {
                let idx = iy * level.nx + col;
                bc[idx] = NodeBc::Driven;
                load_nodes.push(idx as u32);
            }
        }
        Ok(Self {
            level: level.clone(),
            bonds,
            support_nodes,
            load_nodes,
            bc,
            level_index: level.level,
        })
    }
}

/// Nominal bond evaluations per second defining the deterministic cost unit.
/// Chosen near real single-core throughput so modelled costs read as seconds.
pub const NOMINAL_BOND_RATE: f64 = 1.0e8;

/// Explicit peridynamic simulation state on one level for one sample.
pub struct Simulation {
    n: usize,
    coords: Vec<[f64; 2]>,
    volume: f64,
    density: f64,
    // directed adjacency, CSR
    offsets: Vec<u32>,
    nbr: Vec<u32>,
    xi: Vec<f64>,
    volw: Vec<f64>,
    c: Vec<f64>,
    s0: Vec<f64>,
    sc: Vec<f64>,
    dmg: Vec<f64>,
    // softening constants
    k: f64,
    alpha: f64,
    inv_one_minus_exp_mk: f64,
    pub disp: Vec<[f64; 2]>,
    pub vel: Vec<[f64; 2]>,
    /// Internal force density per node, N/m^3.
    pub force: Vec<[f64; 2]>,
}

impl Simulation {
    pub fn new(
        level: &MeshLevel,
        bonds: &[Bond],
        field: &BondField,
        density: f64,
    ) -> Result<Self, SolverError> {
        if field.c.len() != bonds.len() {
            return Err(SolverError::FieldMismatch(format!(
                "{} bond parameters for {} bonds",
                field.c.len(),
                bonds.len()
            )));
        }
        let n = level.node_count();
        let volume = level.node_volume();
        let mut degree = vec![0u32; n];
        for b in bonds {
            degree[b.i as usize] += 1;
            degree[b.j as usize] += 1;
        }
        let mut offsets = vec![0u32; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let total = offsets[n] as usize;
        let mut cursor: Vec<u32> = offsets[..n].to_vec();
        let mut nbr = vec![0u32; total];
        let mut xi = vec![0.0; total];
        let mut volw = vec![0.0; total];
        let mut c = vec![0.0; total];
        let mut s0 = vec![0.0; total];
        let mut sc = vec![0.0; total];
        for (b, ((cb, s0b), scb)) in
            bonds.iter().zip(field.c.iter().zip(&field.s0).zip(&field.sc))
        {
            for (from, to) in [(b.i, b.j), (b.j, b.i)] {
                let e = cursor[from as usize] as usize;
                cursor[from as usize] += 1;
                nbr[e] = to;
                xi[e] = b.xi;
                volw[e] = volume * b.vol_factor;
                c[e] = *cb;
                s0[e] = *s0b;
                sc[e] = *scb;
            }
        }
        Ok(Self {
            n,
            coords: level.coords.clone(),
            volume,
            density,
            offsets,
            nbr,
            xi,
            volw,
            c,
            s0,
            sc,
            dmg: vec![0.0; total],
            k: field.k,
            alpha: field.alpha,
            inv_one_minus_exp_mk: 1.0 / -(-field.k).exp_m1(),
            disp: vec![[0.0; 2]; n],
            vel: vec![[0.0; 2]; n],
            force: vec![[0.0; 2]; n],
        })
    }

    pub fn directed_bond_count(&self) -> usize {
        self.nbr.len()
    }

    pub fn node_mass(&self) -> f64 {
        self.density * self.volume
    }

    /// Assemble nodal internal force densities from the current
    /// displacements, updating the irreversible per-bond damage as a
    /// monotone maximum over the load history. Contributions are pairwise
    /// equal and opposite because both directed copies of a bond see
    /// bitwise-identical stretch.
    pub fn assemble_forces(&mut self) {
        let inv_alpha = 1.0 / (1.0 + self.alpha);
        for i in 0..self.n {
            let px = self.coords[i][0] + self.disp[i][0];
            let py = self.coords[i][1] + self.disp[i][1];
            let mut fx = 0.0;
            let mut fy = 0.0;
            for e in self.offsets[i] as usize..self.offsets[i + 1] as usize {
                let j = self.nbr[e] as usize;
                let rx = self.coords[j][0] + self.disp[j][0] - px;
                let ry = self.coords[j][1] + self.disp[j][1] - py;
                let len = (rx * rx + ry * ry).sqrt();
                let xi = self.xi[e];
                let s = (len - xi) / xi;
                let f_scalar = if s <= 0.0 {
                    // compression stays elastic at the undamaged stiffness
                    self.c[e] * s
                } else {
                    let mut d = self.dmg[e];
                    if d < 1.0 && s > self.s0[e] {
                        let d_new = if s >= self.sc[e] {
                            1.0
                        } else {
                            let t = (s - self.s0[e]) / (self.sc[e] - self.s0[e]);
                            let decay = -(-self.k * t).exp_m1() * self.inv_one_minus_exp_mk;
                            let bracket = 1.0 - decay + self.alpha * (1.0 - t);
                            1.0 - (self.s0[e] / s) * bracket * inv_alpha
                        };
                        if d_new > d {
                            d = d_new;
                            self.dmg[e] = d_new;
                        }
                    }
                    self.c[e] * (1.0 - d) * s
                };
                let w = f_scalar * self.volw[e] / len;
                fx += w * rx;
                fy += w * ry;
            }
            self.force[i] = [fx, fy];
        }
    }

    /// Total internal force (N) summed over all nodes; vanishes on an
    /// unconstrained body.
    pub fn total_internal_force(&self) -> [f64; 2] {
        let mut sum = [0.0; 2];
        for f in &self.force {
            sum[0] += f[0] * self.volume;
            sum[1] += f[1] * self.volume;
        }
        sum
    }

    /// Stored elastic bond energy (J), valid while no bond has softened.
    pub fn elastic_energy(&self) -> f64 {
        let mut u = 0.0;
        for i in 0..self.n {
            let px = self.coords[i][0] + self.disp[i][0];
            let py = self.coords[i][1] + self.disp[i][1];
            for e in self.offsets[i] as usize..self.offsets[i + 1] as usize {
                let j = self.nbr[e] as usize;
                let rx = self.coords[j][0] + self.disp[j][0] - px;
                let ry = self.coords[j][1] + self.disp[j][1] - py;
                let len = (rx * rx + ry * ry).sqrt();
                let s = (len - self.xi[e]) / self.xi[e];
                u += 0.5 * self.c[e] * s * s * self.xi[e] * self.volw[e] * self.volume;
            }
        }
        // each unordered pair was visited twice
        0.5 * u
    }

    /// Volume-weighted mean damage over each node's bonds.
    pub fn nodal_damage(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let range = self.offsets[i] as usize..self.offsets[i + 1] as usize;
                let wsum: f64 = range.clone().map(|e| self.volw[e]).sum();
                if wsum == 0.0 {
                    // a node whose bonds were all removed by the notch
                    return 0.0;
                }
                range.map(|e| self.dmg[e] * self.volw[e]).sum::<f64>() / wsum
            })
            .collect()
    }

    pub fn max_displacement(&self) -> f64 {
        self.disp
            .iter()
            .map(|u| u[0].abs().max(u[1].abs()))
            .fold(0.0, f64::max)
    }
}

/// Least-squares slope of reaction vs platen displacement over the window
/// `[lo, hi]` (fractions of the final displacement). Used to read off the
/// elastic stiffness of a linear-range run.
pub fn fit_stiffness(history: &[(f64, f64)], lo: f64, hi: f64) -> Option<f64> {
    let u_max = history.iter().map(|p| p.0).fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = history
        .iter()
        .filter(|p| p.0 >= lo * u_max && p.0 <= hi * u_max)
        .copied()
        .collect();
    if pts.len() < 2 || u_max <= 0.0 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    (denom.abs() > 0.0).then(|| (n * sxy - sx * sy) / denom)
}

/// Time-integrate one sample to failure (or to the target displacement) and
/// return the peak load.
pub fn run_sample(
    setup: &BeamSetup,
    field: &BondField,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<QoiSample, SolverError> {
    cfg.validate()?;
    let wall_start = std::time::Instant::now();
    let mut sim = Simulation::new(&setup.level, &setup.bonds, field, cfg.density)?;
    let dt = stable_timestep(&setup.level, &setup.bonds, cfg.density, field.max_stiffness(), cfg.dt_safety)?;
    let mass = sim.node_mass();
    let volume = setup.level.node_volume();
    let inv_damp = 1.0 / (1.0 + dt * cfg.damping);

    let mut history: Vec<(f64, f64)> = Vec::new();
    let mut peak = 0.0f64;
    let mut post_peak = false;
    let mut target_reached = false;
    let mut w_ext = 0.0f64;
    let mut ke_ratio_at_peak = 0.0f64;
    let mut steps = 0usize;

    let depth = setup.level.height();
    let n_load = setup.load_nodes.len() as f64;

    for step in 0..cfg.max_steps {
        steps = step + 1;
        let t = steps as f64 * dt;
        let ramp = if cfg.soft_start_time > 0.0 && t < cfg.soft_start_time {
            0.5 * (1.0 - (std::f64::consts::PI * t / cfg.soft_start_time).cos())
        } else {
            1.0
        };
        let v_prescribed = -cfg.loading_rate * ramp;

        sim.assemble_forces();

        // integrate with implicit mass-proportional damping, then apply the
        // kinematic constraints
        let mut reaction = 0.0f64;
        let mut ke = 0.0f64;
        for i in 0..sim.n {
            let f = sim.force[i];
            let v_old = sim.vel[i];
            let mut v = [
                (v_old[0] + dt * f[0] / cfg.density) * inv_damp,
                (v_old[1] + dt * f[1] / cfg.density) * inv_damp,
            ];
            match setup.bc[i] {
                NodeBc::Free => {}
                NodeBc::Support => v[1] = 0.0,
                NodeBc::SupportPinned => v = [0.0, 0.0],
                NodeBc::Driven => {
                    v[1] = v_prescribed;
                    // constraint force closing the discrete balance
                    let r = mass * (v[1] - v_old[1]) / dt + cfg.damping * mass * v[1]
                        - volume * f[1];
                    reaction -= r;
                    w_ext += r * v[1] * dt;
                }
            }
            sim.vel[i] = v;
            sim.disp[i][0] += dt * v[0];
            sim.disp[i][1] += dt * v[1];
            ke += 0.5 * mass * (v[0] * v[0] + v[1] * v[1]);
        }
        peak = peak.max(reaction);

        if step % cfg.history_stride == 0 {
            let platen =
                -setup.load_nodes.iter().map(|&i| sim.disp[i as usize][1]).sum::<f64>() / n_load;
            history.push((platen, reaction));
        }

        if step % 64 == 0 {
            let max_u = sim.max_displacement();
            if !max_u.is_finite() || max_u > 0.5 * depth {
                return Err(SolverError::Diverged {
                    step,
                    max_displacement: max_u,
                    detail: format!(
                        "dt = {dt:.3e}, damping = {}, loading_rate = {}",
                        cfg.damping, cfg.loading_rate
                    ),
                });
            }
            // quasi-static quality at the running load peak; early transients
            // and the post-peak crack run do not overwrite it
            if w_ext > 0.0 && reaction >= 0.999 * peak {
                ke_ratio_at_peak = ke / w_ext;
            }
            if peak > cfg.stop_load_floor && reaction < cfg.stop_load_fraction * peak {
                post_peak = true;
                let platen = -setup.load_nodes.iter().map(|&i| sim.disp[i as usize][1]).sum::<f64>()
                    / n_load;
                history.push((platen, reaction));
                break;
            }
            if cfg.target_displacement > 0.0 {
                let platen = -setup.load_nodes.iter().map(|&i| sim.disp[i as usize][1]).sum::<f64>()
                    / n_load;
                if platen >= cfg.target_displacement {
                    target_reached = true;
                    history.push((platen, reaction));
                    break;
                }
            }
        }

        #[cfg(debug_assertions)]
        if step % 4096 == 0 {
            let total = sim.total_internal_force();
            let scale: f64 = sim
                .force
                .iter()
                .map(|f| (f[0].abs() + f[1].abs()) * volume)
                .fold(0.0, f64::max);
            debug_assert!(
                total[0].abs() + total[1].abs() <= 1e-9 * scale.max(1e-12) * sim.n as f64,
                "internal forces do not cancel: {total:?} vs scale {scale}"
            );
        }
    }

    if !post_peak && !target_reached && steps >= cfg.max_steps {
        if cfg.target_displacement > 0.0 {
            log::warn!("target displacement not reached within max_steps");
        } else {
            return Err(SolverError::NoFailure { steps, peak });
        }
    }

    let cost = (steps as f64) * (sim.directed_bond_count() as f64) / NOMINAL_BOND_RATE;
    Ok(QoiSample {
        peak_load: peak,
        level: setup.level_index,
        seed,
        cost,
        wall_s: wall_start.elapsed().as_secs_f64(),
        steps,
        post_peak,
        ke_work_ratio: ke_ratio_at_peak,
        history,
        damage: cfg.record_damage.then(|| sim.nodal_damage()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::PropertyMap;
    use crate::mesh::{build_hierarchy, Rectangle};
    use approx::assert_relative_eq;

    fn uniform_props(n: usize, fc: f64) -> NodeProperties {
        PropertyMap::default().apply(&vec![fc; n]).unwrap()
    }

    fn small_beam() -> (crate::mesh::Hierarchy, BeamGeometry) {
        let geometry =
            BeamGeometry { length: 0.10, depth: 0.04, thickness: 0.05, span: 0.08 };
        let h = build_hierarchy(Rectangle { width: 0.10, height: 0.04 }, 0.005, 0, 0.05).unwrap();
        (h, geometry)
    }

    fn plane_stress() -> ProblemKind {
        ProblemKind::PlaneStress { thickness: 0.05 }
    }

    #[test]
    fn bond_properties_use_endpoint_means() {
        let (h, _) = small_beam();
        let level = &h.levels[0];
        let mut props = uniform_props(level.node_count(), 42.3);
        // perturb one node and check a touching bond sees the mean
        props.e[0] *= 1.5;
        let field =
            bond_properties(level, &level.bonds, &props, 25.0, 0.25, plane_stress()).unwrap();
        let bond_idx = level.bonds.iter().position(|b| b.i == 0).unwrap();
        let b = &level.bonds[bond_idx];
        let e_mean = 0.5 * (props.e[0] + props.e[b.j as usize]);
        let expect = bond_stiffness(e_mean, level.horizon, plane_stress()).unwrap();
        assert_relative_eq!(field.c[bond_idx], expect, max_relative = 1e-12);
        // consistency with the closed-form critical stretch
        let ft = 0.5 * (props.ft[0] + props.ft[b.j as usize]);
        let gf = 0.5 * (props.gf[0] + props.gf[b.j as usize]);
        let sc = critical_stretch(gf, e_mean, level.horizon, ft / e_mean, 25.0, 0.25, plane_stress())
            .unwrap();
        assert_relative_eq!(field.sc[bond_idx], sc, max_relative = 1e-12);
    }

    #[test]
    fn notch_zero_keeps_all_bonds() {
        let (h, _) = small_beam();
        let level = &h.levels[0];
        let kept = apply_notch(level, 0.0).unwrap();
        assert_eq!(kept.len(), level.bonds.len());
        assert!(apply_notch(level, 1.0).is_err());
    }

    #[test]
    fn notch_removal_matches_segment_intersection_oracle() {
        let (h, _) = small_beam();
        let level = &h.levels[0];
        let lambda = 0.5;
        let kept = apply_notch(level, lambda).unwrap();
        // independent oracle: proper segment-segment intersection between
        // the bond chord and the notch segment, via orientation predicates
        let x_n = 0.5 * level.width();
        let a = [x_n, 0.0 - level.dx]; // extend below the bottom face
        let b = [x_n, lambda * level.height()];
        let orient = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| -> f64 {
            (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
        };
        let intersects = |p: [f64; 2], q: [f64; 2]| -> bool {
            let (o1, o2) = (orient(a, b, p), orient(a, b, q));
            let (o3, o4) = (orient(p, q, a), orient(p, q, b));
            o1 * o2 < 0.0 && o3 * o4 < 0.0
        };
        let survive_oracle: Vec<bool> = level
            .bonds
            .iter()
            .map(|bd| !intersects(level.coords[bd.i as usize], level.coords[bd.j as usize]))
            .collect();
        let expected: usize = survive_oracle.iter().filter(|&&s| s).count();
        assert_eq!(kept.len(), expected);
        assert!(kept.len() < level.bonds.len(), "the notch must remove something");
    }

    #[test]
    fn notch_removed_set_is_symmetric() {
        let (h, _) = small_beam();
        let level = &h.levels[0];
        let kept = apply_notch(level, 0.5).unwrap();
        let kept_set: std::collections::HashSet<(u32, u32)> =
            kept.iter().map(|b| (b.i, b.j)).collect();
        let removed: Vec<&Bond> =
            level.bonds.iter().filter(|b| !kept_set.contains(&(b.i, b.j))).collect();
        // mirror a node index across the vertical midline
        let mirror = |idx: u32| -> u32 {
            let (ix, iy) = (idx as usize % level.nx, idx as usize / level.nx);
            (iy * level.nx + (level.nx - 1 - ix)) as u32
        };
        let removed_set: std::collections::HashSet<(u32, u32)> = removed
            .iter()
            .map(|b| {
                let (mi, mj) = (mirror(b.i), mirror(b.j));
                (mi.min(mj), mi.max(mj))
            })
            .collect();
        let original: std::collections::HashSet<(u32, u32)> =
            removed.iter().map(|b| (b.i, b.j)).collect();
        assert_eq!(removed_set, original, "removed set must mirror onto itself");
    }

    #[test]
    fn timestep_scaling_laws() {
        let (h, _) = small_beam();
        let level = &h.levels[0];
        let dt1 = stable_timestep(level, &level.bonds, 2346.0, 1e16, 0.8).unwrap();
        let dt4 = stable_timestep(level, &level.bonds, 4.0 * 2346.0, 1e16, 0.8).unwrap();
        assert_relative_eq!(dt4, 2.0 * dt1, max_relative = 1e-12);
        assert!(stable_timestep(level, &level.bonds, 2346.0, 1e16, 0.0).is_err());
        assert!(stable_timestep(level, &level.bonds, 2346.0, 1e16, 1.2).is_err());
    }

    #[test]
    fn timestep_shrinks_on_refinement() {
        let h = build_hierarchy(Rectangle { width: 0.10, height: 0.04 }, 0.005, 1, 0.05).unwrap();
        let props0 = uniform_props(h.levels[0].node_count(), 42.3);
        let props1 = uniform_props(h.levels[1].node_count(), 42.3);
        let kind = plane_stress();
        let f0 = bond_properties(&h.levels[0], &h.levels[0].bonds, &props0, 25.0, 0.25, kind).unwrap();
        let f1 = bond_properties(&h.levels[1], &h.levels[1].bonds, &props1, 25.0, 0.25, kind).unwrap();
        let dt0 =
            stable_timestep(&h.levels[0], &h.levels[0].bonds, 2346.0, f0.max_stiffness(), 0.8).unwrap();
        let dt1 =
            stable_timestep(&h.levels[1], &h.levels[1].bonds, 2346.0, f1.max_stiffness(), 0.8).unwrap();
        assert!(dt1 < dt0, "dt must shrink with dx: {dt1} vs {dt0}");
    }

    #[test]
    fn extract_peak_basics() {
        assert_eq!(extract_peak_load(&[0.0, 5.0, 3.0]).unwrap(), (5.0, true));
        let (peak, post) = extract_peak_load(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(peak, 3.0);
        assert!(!post, "monotone ramp has no post-peak branch");
        assert_eq!(extract_peak_load(&[0.0, 0.0]).unwrap().0, 0.0);
        assert!(extract_peak_load(&[]).is_err());
    }

    #[test]
    fn single_bond_force_is_elastic_and_aligned() {
        // two nodes, one bond, stretch in the elastic range
        let level = MeshLevel {
            level: 0,
            dx: 0.01,
            horizon: crate::mesh::HORIZON_RATIO * 0.01,
            thickness: 0.05,
            nx: 2,
            ny: 1,
            offset: 0.005,
            coords: vec![[0.005, 0.005], [0.015, 0.005]],
            bonds: vec![Bond { i: 0, j: 1, xi: 0.01, vol_factor: 1.0 }],
        };
        let field = BondField {
            c: vec![1e16],
            s0: vec![1e-4],
            sc: vec![1e-3],
            k: 25.0,
            alpha: 0.25,
        };
        let mut sim = Simulation::new(&level, &level.bonds, &field, 2346.0).unwrap();
        let s = 5e-5; // elastic
        sim.disp[1] = [s * 0.01, 0.0];
        sim.assemble_forces();
        let expect = 1e16 * s * level.node_volume();
        assert_relative_eq!(sim.force[0][0], expect, max_relative = 1e-9);
        assert_relative_eq!(sim.force[1][0], -expect, max_relative = 1e-9);
        assert_eq!(sim.force[0][1], 0.0);
    }

    #[test]
    fn rigid_translation_produces_no_force() {
        let (h, _) = small_beam();
        let level = &h.levels[0];
        let props = uniform_props(level.node_count(), 42.3);
        let field =
            bond_properties(level, &level.bonds, &props, 25.0, 0.25, plane_stress()).unwrap();
        let mut sim = Simulation::new(level, &level.bonds, &field, 2346.0).unwrap();
        for u in sim.disp.iter_mut() {
            *u = [3e-3, -2e-3];
        }
        sim.assemble_forces();
        let fscale = field.max_stiffness() * 1e-4 * level.node_volume(); // force at s = 1e-4
        let worst = sim
            .force
            .iter()
            .map(|f| f[0].abs().max(f[1].abs()) * level.node_volume())
            .fold(0.0, f64::max);
        assert!(worst < 1e-6 * fscale, "rigid translation force {worst}");
    }

    #[test]
    fn internal_forces_cancel_pairwise() {
        let (h, _) = small_beam();
        let level = &h.levels[0];
        let props = uniform_props(level.node_count(), 42.3);
        let field =
            bond_properties(level, &level.bonds, &props, 25.0, 0.25, plane_stress()).unwrap();
        let mut sim = Simulation::new(level, &level.bonds, &field, 2346.0).unwrap();
        // random small displacements, deterministic
        let mut state = 0x12345678u64;
        for u in sim.disp.iter_mut() {
            for comp in u.iter_mut() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *comp = ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 1e-6;
            }
        }
        sim.assemble_forces();
        let total = sim.total_internal_force();
        let scale: f64 = sim
            .force
            .iter()
            .map(|f| (f[0].abs() + f[1].abs()) * level.node_volume())
            .fold(0.0, f64::max);
        assert!(
            total[0].abs() + total[1].abs() <= 1e-9 * scale * level.node_count() as f64,
            "total {total:?} vs scale {scale}"
        );
    }

    #[test]
    fn force_work_matches_elastic_energy_rate() {
        let (h, _) = small_beam();
        let level = &h.levels[0];
        let props = uniform_props(level.node_count(), 42.3);
        let field =
            bond_properties(level, &level.bonds, &props, 25.0, 0.25, plane_stress()).unwrap();
        let mut sim = Simulation::new(level, &level.bonds, &field, 2346.0).unwrap();
        let mut state = 0xABCDEFu64;
        let mut direction = vec![[0.0f64; 2]; level.node_count()];
        for (u, w) in sim.disp.iter_mut().zip(direction.iter_mut()) {
            for (comp, wc) in u.iter_mut().zip(w.iter_mut()) {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *comp = ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 2e-7;
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *wc = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            }
        }
        sim.assemble_forces();
        let base: Vec<[f64; 2]> = sim.disp.clone();
        let eps = 1e-9;
        let mut work = 0.0;
        for (i, w) in direction.iter().enumerate() {
            work += (sim.force[i][0] * w[0] + sim.force[i][1] * w[1]) * level.node_volume() * eps;
        }
        let perturb = |sim: &mut Simulation, sign: f64| {
            for (i, w) in direction.iter().enumerate() {
                sim.disp[i][0] = base[i][0] + sign * eps * w[0];
                sim.disp[i][1] = base[i][1] + sign * eps * w[1];
            }
        };
        perturb(&mut sim, 1.0);
        let u_plus = sim.elastic_energy();
        perturb(&mut sim, -1.0);
        let u_minus = sim.elastic_energy();
        let du = 0.5 * (u_plus - u_minus);
        assert_relative_eq!(-work, du, max_relative = 1e-6);
    }

    #[test]
    fn zero_loading_rate_keeps_equilibrium() {
        let (h, geometry) = small_beam();
        let cfg = SolverConfig {
            loading_rate: 0.0,
            max_steps: 200,
            target_displacement: 1.0, // never reached; run to max_steps
            stop_load_floor: 1.0,
            ..Default::default()
        };
        let setup = BeamSetup::new(&h.levels[0], geometry, 0.0, &cfg).unwrap();
        let props = uniform_props(h.levels[0].node_count(), 42.3);
        let field =
            bond_properties(&h.levels[0], &setup.bonds, &props, 25.0, 0.25, plane_stress()).unwrap();
        let q = run_sample(&setup, &field, &cfg, 0).unwrap();
        assert_eq!(q.peak_load, 0.0);
        assert!(q.history.iter().all(|&(_, p)| p.abs() < 1e-9));
        let dmg = {
            let mut cfg2 = cfg;
            cfg2.record_damage = true;
            run_sample(&setup, &field, &cfg2, 0).unwrap().damage.unwrap()
        };
        assert!(dmg.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn run_sample_is_deterministic() {
        let (h, geometry) = small_beam();
        let cfg = SolverConfig {
            loading_rate: 0.05,
            max_steps: 3_000,
            soft_start_time: 2e-4,
            stop_load_floor: 50.0,
            ..Default::default()
        };
        let setup = BeamSetup::new(&h.levels[0], geometry, 0.5, &cfg).unwrap();
        let props = uniform_props(h.levels[0].node_count(), 42.3);
        let field =
            bond_properties(&h.levels[0], &setup.bonds, &props, 25.0, 0.25, plane_stress()).unwrap();
        let a = run_sample(&setup, &field, &cfg, 7);
        let b = run_sample(&setup, &field, &cfg, 7);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                assert_eq!(a.peak_load.to_bits(), b.peak_load.to_bits());
                assert_eq!(a.steps, b.steps);
                assert_eq!(a.cost, b.cost);
            }
            (Err(SolverError::NoFailure { .. }), Err(SolverError::NoFailure { .. })) => {}
            (a, b) => panic!("runs disagree: {a:?} vs {b:?}"),
        }
    }

    #[test]
    fn nodal_damage_never_decreases_during_failure() {
        let (h, geometry) = small_beam();
        let cfg = SolverConfig {
            loading_rate: 0.05,
            max_steps: 12_000,
            soft_start_time: 2e-4,
            stop_load_floor: 20.0,
            record_damage: true,
            ..Default::default()
        };
        let setup = BeamSetup::new(&h.levels[0], geometry, 0.5, &cfg).unwrap();
        let props = uniform_props(h.levels[0].node_count(), 42.3);
        let field =
            bond_properties(&h.levels[0], &setup.bonds, &props, 25.0, 0.25, plane_stress()).unwrap();
        // run twice with different step budgets: the longer run's damage
        // must dominate the shorter run's nodewise
        let mut cfg_short = cfg;
        cfg_short.max_steps = 4_000;
        cfg_short.target_displacement = 1.0;
        let mut cfg_long = cfg;
        cfg_long.max_steps = 8_000;
        cfg_long.target_displacement = 1.0;
        let d_short = run_sample(&setup, &field, &cfg_short, 0).unwrap().damage.unwrap();
        let d_long = run_sample(&setup, &field, &cfg_long, 0).unwrap().damage.unwrap();
        for (s, l) in d_short.iter().zip(&d_long) {
            assert!(l >= s, "damage decreased: {l} < {s}");
        }
    }
}
