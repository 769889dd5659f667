//! Nested hierarchy of uniform 2D grids with peridynamic neighbourhoods.
//!
//! Levels halve the node spacing each refinement. All levels of a hierarchy
//! share one lattice offset equal to half the finest spacing, so the finest
//! level is cell-centred and every coarse node coincides bitwise with a node
//! of each finer level (every other fine cell centre). Coarse-to-fine index
//! maps are built by coordinate matching, which keeps them robust to
//! boundary rounding.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("domain sizing: {0}")]
    Sizing(String),
    #[error("mesh misalignment: {0}")]
    Misalignment(String),
    #[error("level mismatch: {0}")]
    LevelMismatch(String),
}

/// Rectangular domain, metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub width: f64,
    pub height: f64,
}

/// One unordered bond: node pair, reference length and the partial-volume
/// correction factor applied to the neighbour volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bond {
    pub i: u32,
    pub j: u32,
    pub xi: f64,
    pub vol_factor: f64,
}

/// One uniform grid in the nested hierarchy.
#[derive(Debug, Clone)]
pub struct MeshLevel {
    pub level: usize,
    pub dx: f64,
    /// Horizon, fixed at `pi * dx`.
    pub horizon: f64,
    pub thickness: f64,
    pub nx: usize,
    pub ny: usize,
    /// Lattice offset of the first node from the domain origin (both axes).
    pub offset: f64,
    /// Node positions, row-major: index = iy * nx + ix.
    pub coords: Vec<[f64; 2]>,
    pub bonds: Vec<Bond>,
}

/// Horizon-to-spacing ratio used on every level.
pub const HORIZON_RATIO: f64 = std::f64::consts::PI;

impl MeshLevel {
    pub fn node_count(&self) -> usize {
        self.coords.len()
    }

    /// Nominal nodal volume `dx^2 * thickness`.
    pub fn node_volume(&self) -> f64 {
        self.dx * self.dx * self.thickness
    }

    pub fn width(&self) -> f64 {
        self.nx as f64 * self.dx
    }

    pub fn height(&self) -> f64 {
        self.ny as f64 * self.dx
    }

    pub fn summary(&self) -> MeshSummary {
        MeshSummary {
            level: self.level,
            dx: self.dx,
            horizon: self.horizon,
            node_count: self.node_count(),
            bond_count: self.bonds.len(),
        }
    }
}

/// JSON-exportable per-level summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshSummary {
    pub level: usize,
    pub dx: f64,
    pub horizon: f64,
    pub node_count: usize,
    pub bond_count: usize,
}

/// Hierarchy of uniformly refined levels 0..=L with coarse-to-fine maps.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub levels: Vec<MeshLevel>,
    /// `coarsen_maps[l][c]` is the level-(l+1) node coincident with node `c`
    /// of level `l`.
    pub coarsen_maps: Vec<Vec<u32>>,
}

impl Hierarchy {
    pub fn finest(&self) -> &MeshLevel {
        self.levels.last().expect("hierarchy has at least one level")
    }

    /// Map restricting level `fine` values to level `fine - 1`.
    pub fn restriction_map(&self, fine: usize) -> &[u32] {
        &self.coarsen_maps[fine - 1]
    }
}

/// Partial-volume correction for a neighbour at distance `xi`.
///
/// Cells whose centre lies within `dx/2` of the horizon are intersected by
/// it; their volume is scaled by the covered fraction, clipped to [0, 1].
pub fn volume_correction(xi: f64, dx: f64, horizon: f64) -> f64 {
    if xi <= horizon - 0.5 * dx {
        1.0
    } else {
        ((horizon + 0.5 * dx - xi) / dx).clamp(0.0, 1.0)
    }
}

/// All unordered node pairs within the horizon, found by uniform cell
/// binning with cell size equal to the horizon (expected O(M)).
pub fn build_bonds(level: &MeshLevel) -> Vec<Bond> {
    let coords = &level.coords;
    let delta = level.horizon;
    let n = coords.len();
    if n < 2 {
        return Vec::new();
    }
    let inv_cell = 1.0 / delta;
    let bin_of = |p: &[f64; 2]| -> (i64, i64) {
        ((p[0] * inv_cell).floor() as i64, (p[1] * inv_cell).floor() as i64)
    };
    let mut bins: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
    for (idx, p) in coords.iter().enumerate() {
        bins.entry(bin_of(p)).or_default().push(idx as u32);
    }
    let mut bonds = Vec::with_capacity(n * 15);
    for (idx, p) in coords.iter().enumerate() {
        let i = idx as u32;
        let (bx, by) = bin_of(p);
        for nbx in (bx - 1)..=(bx + 1) {
            for nby in (by - 1)..=(by + 1) {
                let Some(cell) = bins.get(&(nbx, nby)) else { continue };
                for &j in cell {
                    if j <= i {
                        continue;
                    }
                    let q = &coords[j as usize];
                    let xi = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
                    if xi > 0.0 && xi <= delta {
                        bonds.push(Bond {
                            i,
                            j,
                            xi,
                            vol_factor: volume_correction(xi, level.dx, delta),
                        });
                    }
                }
            }
        }
    }
    bonds.sort_unstable_by_key(|b| (b.i, b.j));
    bonds
}

fn build_level(
    domain: Rectangle,
    dx0: f64,
    level: usize,
    offset: f64,
    thickness: f64,
) -> MeshLevel {
    let dx = dx0 / (1u64 << level) as f64;
    let nx = (domain.width / dx).round() as usize;
    let ny = (domain.height / dx).round() as usize;
    let mut coords = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        let y = offset + iy as f64 * dx;
        for ix in 0..nx {
            coords.push([offset + ix as f64 * dx, y]);
        }
    }
    let mut lvl = MeshLevel {
        level,
        dx,
        horizon: HORIZON_RATIO * dx,
        thickness,
        nx,
        ny,
        offset,
        coords,
        bonds: Vec::new(),
    };
    lvl.bonds = build_bonds(&lvl);
    lvl
}

/// Build the hierarchy of `max_level + 1` uniformly refined grids.
pub fn build_hierarchy(
    domain: Rectangle,
    dx0: f64,
    max_level: usize,
    thickness: f64,
) -> Result<Hierarchy, MeshError> {
    if !(dx0 > 0.0) {
        return Err(MeshError::Sizing(format!("dx0 = {dx0} must be > 0")));
    }
    if !(thickness > 0.0) {
        return Err(MeshError::Sizing(format!("thickness = {thickness} must be > 0")));
    }
    for (name, len) in [("width", domain.width), ("height", domain.height)] {
        if !(len > 0.0) {
            return Err(MeshError::Sizing(format!("domain {name} = {len} must be > 0")));
        }
        let cells = len / dx0;
        if (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) || cells.round() < 1.0 {
            return Err(MeshError::Sizing(format!(
                "domain {name} = {len} is not an integer multiple of dx0 = {dx0}"
            )));
        }
    }
    // Shared lattice offset: half the finest spacing, so the finest level is
    // cell-centred and all coarser levels land on fine cell centres.
    let offset = dx0 / (1u64 << (max_level + 1)) as f64;
    let levels: Vec<MeshLevel> = (0..=max_level)
        .map(|l| build_level(domain, dx0, l, offset, thickness))
        .collect();
    let mut coarsen_maps = Vec::with_capacity(max_level);
    for l in 0..max_level {
        coarsen_maps.push(coarsen_index_map(&levels[l + 1], &levels[l])?);
    }
    Ok(Hierarchy { levels, coarsen_maps })
}

/// Index map from each coarse node to its coincident fine node, built by
/// coordinate matching with tolerance `1e-12 * dx`.
pub fn coarsen_index_map(fine: &MeshLevel, coarse: &MeshLevel) -> Result<Vec<u32>, MeshError> {
    let ratio = coarse.dx / fine.dx;
    if (ratio - 2.0).abs() > 1e-12 {
        return Err(MeshError::LevelMismatch(format!(
            "expected coarse.dx = 2 * fine.dx, got dx ratio {ratio}"
        )));
    }
    let tol = 1e-12 * fine.dx;
    // Quantised coordinate key; nodes are at offset + k * dx so keys are exact.
    let key = |p: &[f64; 2]| -> (i64, i64) {
        (
            ((p[0] - fine.offset) / fine.dx).round() as i64,
            ((p[1] - fine.offset) / fine.dx).round() as i64,
        )
    };
    let mut lookup: HashMap<(i64, i64), u32> = HashMap::with_capacity(fine.node_count());
    for (idx, p) in fine.coords.iter().enumerate() {
        lookup.insert(key(p), idx as u32);
    }
    let mut map = Vec::with_capacity(coarse.node_count());
    for (c, p) in coarse.coords.iter().enumerate() {
        let f = *lookup.get(&key(p)).ok_or_else(|| {
            MeshError::Misalignment(format!("coarse node {c} at {p:?} has no coincident fine node"))
        })?;
        let q = &fine.coords[f as usize];
        if (q[0] - p[0]).abs() > tol || (q[1] - p[1]).abs() > tol {
            return Err(MeshError::Misalignment(format!(
                "coarse node {c} at {p:?} maps to fine node at {q:?} outside tolerance"
            )));
        }
        map.push(f);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_bonds(coords: &[[f64; 2]], dx: f64, horizon: f64) -> Vec<(u32, u32)> {
        let _ = dx;
        let mut out = Vec::new();
        for i in 0..coords.len() {
            for j in (i + 1)..coords.len() {
                let d = ((coords[i][0] - coords[j][0]).powi(2)
                    + (coords[i][1] - coords[j][1]).powi(2))
                .sqrt();
                if d > 0.0 && d <= horizon {
                    out.push((i as u32, j as u32));
                }
            }
        }
        out
    }

    #[test]
    fn beam_hierarchy_node_counts_follow_refinement() {
        let h = build_hierarchy(Rectangle { width: 0.35, height: 0.10 }, 0.010, 4, 0.05).unwrap();
        let counts: Vec<usize> = h.levels.iter().map(|l| l.node_count()).collect();
        assert_eq!(counts, vec![350, 1400, 5600, 22400, 89600]);
        for (l, lvl) in h.levels.iter().enumerate() {
            assert_eq!(lvl.node_count(), 350 * 4usize.pow(l as u32));
            assert!((lvl.horizon - HORIZON_RATIO * lvl.dx).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_hierarchy_single_level() {
        let h = build_hierarchy(Rectangle { width: 0.05, height: 0.03 }, 0.010, 0, 0.05).unwrap();
        assert_eq!(h.levels.len(), 1);
        assert!(h.coarsen_maps.is_empty());
        // with a single level the lattice is plainly cell-centred
        assert_eq!(h.levels[0].coords[0], [0.005, 0.005]);
    }

    #[test]
    fn square_two_level_coarsening_by_hand() {
        // 20 x 20 mm, dx0 = 10 mm, one refinement: fine cell centres at
        // 2.5, 7.5, 12.5, 17.5 mm; the 4 coarse nodes sit at 2.5 and 12.5 mm.
        let h = build_hierarchy(Rectangle { width: 0.020, height: 0.020 }, 0.010, 1, 0.05).unwrap();
        assert_eq!(h.levels[0].node_count(), 4);
        assert_eq!(h.levels[1].node_count(), 16);
        let expect = [0.0025, 0.0125];
        for (c, p) in h.levels[0].coords.iter().enumerate() {
            assert!(expect.iter().any(|&v| (p[0] - v).abs() < 1e-15), "coarse x {p:?}");
            assert!(expect.iter().any(|&v| (p[1] - v).abs() < 1e-15));
            let f = h.coarsen_maps[0][c] as usize;
            assert_eq!(h.levels[1].coords[f], *p, "coincidence must be exact");
        }
    }

    #[test]
    fn nodes_outside_horizon_have_no_bond() {
        let lvl = MeshLevel {
            level: 0,
            dx: 0.01,
            horizon: HORIZON_RATIO * 0.01,
            thickness: 0.05,
            nx: 2,
            ny: 1,
            offset: 0.0,
            coords: vec![[0.0, 0.0], [1.1 * HORIZON_RATIO * 0.01, 0.0]],
            bonds: Vec::new(),
        };
        assert!(build_bonds(&lvl).is_empty());
    }

    #[test]
    fn interior_node_has_28_neighbours() {
        // lattice points within distance pi of the origin (dx units): 28.
        let h = build_hierarchy(Rectangle { width: 0.09, height: 0.09 }, 0.010, 0, 0.05).unwrap();
        let lvl = &h.levels[0];
        let centre = (4 * lvl.nx + 4) as u32; // node (4, 4) of the 9x9 grid
        let degree = lvl
            .bonds
            .iter()
            .filter(|b| b.i == centre || b.j == centre)
            .count();
        assert_eq!(degree, 28);
    }

    #[test]
    fn volume_correction_factors_on_the_lattice() {
        let dx = 0.01;
        let delta = HORIZON_RATIO * dx;
        // inner rings are uncorrected
        for r in [1.0, std::f64::consts::SQRT_2, 2.0, 5.0f64.sqrt()] {
            assert_eq!(volume_correction(r * dx, dx, delta), 1.0);
        }
        let f22 = volume_correction(2.0 * std::f64::consts::SQRT_2 * dx, dx, delta);
        let f30 = volume_correction(3.0 * dx, dx, delta);
        assert!((f22 - (HORIZON_RATIO + 0.5 - 2.0 * std::f64::consts::SQRT_2)).abs() < 1e-12);
        assert!((f30 - (HORIZON_RATIO + 0.5 - 3.0)).abs() < 1e-12);
        assert!(f22 > f30, "farther neighbours get smaller volume");
    }

    #[test]
    fn bond_list_matches_brute_force_scan() {
        for (w, hgt, dx) in [(0.030, 0.030, 0.010), (0.06, 0.04, 0.005), (0.35, 0.10, 0.010)] {
            let h = build_hierarchy(Rectangle { width: w, height: hgt }, dx, 0, 0.05).unwrap();
            let lvl = &h.levels[0];
            let expect = brute_force_bonds(&lvl.coords, lvl.dx, lvl.horizon);
            let got: Vec<(u32, u32)> = lvl.bonds.iter().map(|b| (b.i, b.j)).collect();
            assert_eq!(got, expect, "grid {w}x{hgt} dx {dx}");
        }
    }

    #[test]
    fn bonds_stored_once_per_pair() {
        let h = build_hierarchy(Rectangle { width: 0.05, height: 0.04 }, 0.010, 0, 0.05).unwrap();
        let lvl = &h.levels[0];
        let mut seen = std::collections::HashSet::new();
        for b in &lvl.bonds {
            assert!(b.i < b.j, "pairs stored with i < j");
            assert!(seen.insert((b.i, b.j)), "duplicate pair {:?}", (b.i, b.j));
            assert!(b.xi > 0.0 && b.xi <= lvl.horizon);
        }
    }

    #[test]
    fn coarsen_map_rejects_identical_levels() {
        let h = build_hierarchy(Rectangle { width: 0.04, height: 0.02 }, 0.010, 1, 0.05).unwrap();
        assert!(coarsen_index_map(&h.levels[1], &h.levels[1]).is_err());
    }

    #[test]
    fn coarsen_map_coordinates_coincide_on_segment() {
        // 40 x 20 mm strip refined once: every coarse node must find its
        // coincident fine node by coordinate arithmetic.
        let h = build_hierarchy(Rectangle { width: 0.040, height: 0.020 }, 0.020, 1, 0.05).unwrap();
        let map = &h.coarsen_maps[0];
        assert_eq!(map.len(), h.levels[0].node_count());
        for (c, &f) in map.iter().enumerate() {
            assert_eq!(h.levels[0].coords[c], h.levels[1].coords[f as usize]);
        }
    }

    #[test]
    fn full_hierarchy_maps_are_total_and_exact() {
        let h = build_hierarchy(Rectangle { width: 0.35, height: 0.10 }, 0.010, 3, 0.05).unwrap();
        for l in 0..3 {
            let map = &h.coarsen_maps[l];
            assert_eq!(map.len(), h.levels[l].node_count());
            let mut targets = std::collections::HashSet::new();
            for (c, &f) in map.iter().enumerate() {
                let pc = h.levels[l].coords[c];
                let pf = h.levels[l + 1].coords[f as usize];
                let tol = 1e-12 * h.levels[l + 1].dx;
                assert!((pc[0] - pf[0]).abs() <= tol && (pc[1] - pf[1]).abs() <= tol);
                assert!(targets.insert(f), "map must be injective");
            }
        }
    }

    #[test]
    fn non_divisible_domain_rejected() {
        let r = build_hierarchy(Rectangle { width: 0.347, height: 0.10 }, 0.010, 2, 0.05);
        assert!(matches!(r, Err(MeshError::Sizing(_))));
        assert!(build_hierarchy(Rectangle { width: 0.35, height: 0.10 }, -0.01, 2, 0.05).is_err());
    }

    #[test]
    fn three_by_three_grid_count_matches_oracle() {
        let h = build_hierarchy(Rectangle { width: 0.030, height: 0.030 }, 0.010, 0, 0.05).unwrap();
        let lvl = &h.levels[0];
        // 3x3 grid with horizon pi*dx: every pair is within the horizon
        // except none (max distance 2*sqrt(2) < pi), so C(9,2) = 36 bonds.
        assert_eq!(lvl.bonds.len(), 36);
        assert_eq!(lvl.bonds.len(), brute_force_bonds(&lvl.coords, lvl.dx, lvl.horizon).len());
    }
}
