//! Spatially correlated random material-property fields.
//!
//! A zero-mean Gaussian field with prescribed covariance is drawn on the
//! finest grid of a level pair (matrix decomposition or truncated
//! Karhunen-Loeve expansion) and mapped through the Gaussian copula to the
//! target marginal distribution. Coarser-level values are obtained by pure
//! index restriction, so the same realisation drives both grids of a level
//! pair bitwise.

use std::collections::BTreeMap;

use faer::linalg::solvers::Llt;
use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid covariance spec: {0}")]
    InvalidCovariance(String),
    #[error("invalid marginal spec: {0}")]
    InvalidMarginal(String),
    #[error("covariance factorisation failed even with nugget regularisation")]
    Factorisation,
    #[error("eigendecomposition failed")]
    Eigen,
    #[error("invalid mode count {requested} for {nodes} nodes")]
    ModeCount { requested: usize, nodes: usize },
    #[error("field/map mismatch: {0}")]
    Mismatch(String),
    #[error("property map requires positive compressive strength, got {0} MPa")]
    NonPositiveStrength(f64),
}

/// Covariance model for the underlying Gaussian field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceKind {
    /// `sigma2 * exp(-d / l_c)`.
    Exponential,
    /// `sigma2 * (rho0 + (1 - rho0) * exp(-d / l_c))`: exponential decay
    /// towards a long-range correlation threshold `rho0`. With `rho0 = 0`
    /// this reduces to the exponential model.
    Jcss { rho0: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub kind: CovarianceKind,
    pub sigma2: f64,
    /// Correlation length, same units as the node coordinates.
    pub corr_len: f64,
}

impl CovarianceSpec {
    pub fn exponential(sigma2: f64, corr_len: f64) -> Self {
        Self { kind: CovarianceKind::Exponential, sigma2, corr_len }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if !(self.sigma2 > 0.0) {
            return Err(FieldError::InvalidCovariance(format!("sigma2 = {}", self.sigma2)));
        }
        if !(self.corr_len > 0.0) {
            return Err(FieldError::InvalidCovariance(format!("corr_len = {}", self.corr_len)));
        }
        if let CovarianceKind::Jcss { rho0 } = self.kind {
            if !(0.0..1.0).contains(&rho0) {
                return Err(FieldError::InvalidCovariance(format!("rho0 = {rho0} not in [0, 1)")));
            }
        }
        Ok(())
    }

    /// Covariance of two points at separation `dist`.
    pub fn at_distance(&self, dist: f64) -> f64 {
        let decay = (-dist / self.corr_len).exp();
        match self.kind {
            CovarianceKind::Exponential => self.sigma2 * decay,
            CovarianceKind::Jcss { rho0 } => self.sigma2 * (rho0 + (1.0 - rho0) * decay),
        }
    }
}

/// Warning text when the correlation length does not resolve on the coarsest
/// grid (adjacent values would decorrelate into white noise).
pub fn corr_len_warning(corr_len: f64, dx0: f64) -> Option<String> {
    (corr_len <= dx0).then(|| {
        format!(
            "correlation length {corr_len} must exceed the coarsest grid spacing {dx0}; \
             the sampled field will behave like white noise"
        )
    })
}

/// Dense covariance matrix for the given node coordinates.
pub fn covariance_matrix(spec: &CovarianceSpec, coords: &[[f64; 2]]) -> Mat<f64> {
    Mat::from_fn(coords.len(), coords.len(), |i, j| {
        let (p, q) = (coords[i], coords[j]);
        let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        spec.at_distance(d)
    })
}

fn standard_normal_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Diagonal nugget added (relative to `sigma2`) when the plain factorisation
/// fails; exponential kernels on dense grids are near-singular.
pub const NUGGET_RELATIVE: f64 = 1e-10;

/// Exact Gaussian-field sampler based on the Cholesky factor of the
/// covariance matrix. The factorisation is done once; each draw is a
/// triangular matrix-vector product on an i.i.d. standard normal vector.
pub struct CholeskySampler {
    n: usize,
    /// Lower triangle of the factor, packed row-major.
    lower: Vec<f64>,
    pub nugget_applied: bool,
}

impl CholeskySampler {
    pub fn new(spec: &CovarianceSpec, coords: &[[f64; 2]]) -> Result<Self, FieldError> {
        spec.validate()?;
        if coords.is_empty() {
            return Err(FieldError::InvalidCovariance("need at least one node".into()));
        }
        let mut cov = covariance_matrix(spec, coords);
        let mut nugget_applied = false;
        let llt = match Llt::new(cov.as_ref(), Side::Lower) {
            Ok(f) => f,
            Err(_) => {
                nugget_applied = true;
                let nugget = NUGGET_RELATIVE * spec.sigma2;
                for i in 0..coords.len() {
                    cov[(i, i)] += nugget;
                }
                Llt::new(cov.as_ref(), Side::Lower).map_err(|_| FieldError::Factorisation)?
            }
        };
        let l = llt.L();
        let n = coords.len();
        let mut lower = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                lower.push(l[(i, j)]);
            }
        }
        Ok(Self { n, lower, nugget_applied })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Zero-mean Gaussian vector with the prescribed covariance,
    /// deterministic in `seed`.
    pub fn sample(&self, seed: u64) -> Vec<f64> {
        let z = standard_normal_vector(self.n, seed);
        let mut out = vec![0.0; self.n];
        let mut row_start = 0;
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.lower[row_start..row_start + i + 1];
            let mut acc = 0.0;
            for (lij, zj) in row.iter().zip(&z[..=i]) {
                acc += lij * zj;
            }
            *o = acc;
            row_start += i + 1;
        }
        out
    }
}

/// Truncated Karhunen-Loeve sampler: spectral decomposition of the
/// covariance matrix with the `n_modes` largest eigenpairs retained.
pub struct KlSampler {
    n: usize,
    n_modes: usize,
    /// Mode m stored contiguously as `sqrt(lambda_m) * u_m`.
    basis: Vec<f64>,
    /// All eigenvalues, descending.
    eigenvalues: Vec<f64>,
}

impl KlSampler {
    pub fn new(spec: &CovarianceSpec, coords: &[[f64; 2]], n_modes: usize) -> Result<Self, FieldError> {
        spec.validate()?;
        let n = coords.len();
        if n_modes == 0 || n_modes > n {
            return Err(FieldError::ModeCount { requested: n_modes, nodes: n });
        }
        let cov = covariance_matrix(spec, coords);
        let eig = cov.self_adjoint_eigen(Side::Lower).map_err(|_| FieldError::Eigen)?;
        let s = eig.S();
        let u = eig.U();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(std::cmp::Ordering::Equal));
        let eigenvalues: Vec<f64> = order.iter().map(|&i| s[i]).collect();
        let mut basis = Vec::with_capacity(n_modes * n);
        for &col in order.iter().take(n_modes) {
            let scale = s[col].max(0.0).sqrt();
            for row in 0..n {
                basis.push(scale * u[(row, col)]);
            }
        }
        Ok(Self { n, n_modes, basis, eigenvalues })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn mode_count(&self) -> usize {
        self.n_modes
    }

    /// Eigenvalue spectrum of the covariance, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Fraction of the total eigenvalue sum captured by the retained modes.
    pub fn retained_energy(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        let kept: f64 = self.eigenvalues[..self.n_modes].iter().sum();
        kept / total
    }

    /// Smallest mode count capturing at least `fraction` of the eigenvalue sum.
    pub fn modes_for_energy(&self, fraction: f64) -> usize {
        let total: f64 = self.eigenvalues.iter().sum();
        let mut acc = 0.0;
        for (m, ev) in self.eigenvalues.iter().enumerate() {
            acc += ev;
            if acc >= fraction * total {
                return m + 1;
            }
        }
        self.eigenvalues.len()
    }

    pub fn sample(&self, seed: u64) -> Vec<f64> {
        let xi = standard_normal_vector(self.n_modes, seed);
        let mut out = vec![0.0; self.n];
        for (m, w) in xi.iter().enumerate() {
            let mode = &self.basis[m * self.n..(m + 1) * self.n];
            for (o, b) in out.iter_mut().zip(mode) {
                *o += w * b;
            }
        }
        out
    }
}

/// Target marginal distribution for the copula transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarginalSpec {
    Gaussian { mean: f64, sd: f64 },
    LogNormal { log_mean: f64, log_sd: f64 },
    Weibull { modulus: f64, scale: f64 },
}

impl MarginalSpec {
    pub fn validate(&self) -> Result<(), FieldError> {
        match *self {
            MarginalSpec::Gaussian { sd, .. } if !(sd > 0.0) => {
                Err(FieldError::InvalidMarginal(format!("sd = {sd}")))
            }
            MarginalSpec::LogNormal { log_sd, .. } if !(log_sd > 0.0) => {
                Err(FieldError::InvalidMarginal(format!("log_sd = {log_sd}")))
            }
            MarginalSpec::Weibull { modulus, scale } if !(modulus > 0.0 && scale > 0.0) => Err(
                FieldError::InvalidMarginal(format!("modulus = {modulus}, scale = {scale}")),
            ),
            _ => Ok(()),
        }
    }

    /// `F^{-1}(Phi(z))` for a single standard normal value.
    pub fn from_standard_normal(&self, z: f64) -> f64 {
        match *self {
            MarginalSpec::Gaussian { mean, sd } => mean + sd * z,
            MarginalSpec::LogNormal { log_mean, log_sd } => (log_mean + log_sd * z).exp(),
            MarginalSpec::Weibull { modulus, scale } => {
                // F^{-1}(p) = scale * (-ln(1 - p))^{1/m} with 1 - p evaluated
                // as the normal survival function, accurate in both tails.
                let sf = (0.5 * erfc(z / std::f64::consts::SQRT_2))
                    .clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
                scale * (-sf.ln()).powf(1.0 / modulus)
            }
        }
    }
}

/// Componentwise copula transform `v_i = F^{-1}(Phi(z_i))` of a standard
/// Gaussian vector; monotone in each component and rank-preserving.
pub fn gaussian_to_marginal(z: &[f64], marginal: &MarginalSpec) -> Vec<f64> {
    z.iter().map(|&zi| marginal.from_standard_normal(zi)).collect()
}

/// Restrict a fine-level field through a coarse-to-fine index map. The
/// coarse value equals the fine value at the coincident node exactly.
pub fn coarsen_field(fine: &[f64], map: &[u32]) -> Result<Vec<f64>, FieldError> {
    let mut out = Vec::with_capacity(map.len());
    for (c, &f) in map.iter().enumerate() {
        let v = fine.get(f as usize).ok_or_else(|| {
            FieldError::Mismatch(format!(
                "map entry {c} -> {f} outside field of length {}",
                fine.len()
            ))
        })?;
        out.push(*v);
    }
    Ok(out)
}

/// One realisation of the parameter field, representable on several levels
/// of the hierarchy through exact restriction.
#[derive(Debug, Clone)]
pub struct FieldSample {
    pub seed: u64,
    /// Level the Gaussian vector was drawn on (the finest of a pair).
    pub drawn_level: usize,
    pub gaussian: Vec<f64>,
    /// Transformed property values per level.
    pub level_values: BTreeMap<usize, Vec<f64>>,
}

impl FieldSample {
    pub fn new(seed: u64, drawn_level: usize, gaussian: Vec<f64>, values: Vec<f64>) -> Self {
        let mut level_values = BTreeMap::new();
        level_values.insert(drawn_level, values);
        Self { seed, drawn_level, gaussian, level_values }
    }

    /// Add the restriction of `from_level` onto the next coarser level.
    pub fn restrict(&mut self, from_level: usize, map: &[u32]) -> Result<(), FieldError> {
        let fine = self.level_values.get(&from_level).ok_or_else(|| {
            FieldError::Mismatch(format!("no values stored for level {from_level}"))
        })?;
        let coarse = coarsen_field(fine, map)?;
        self.level_values.insert(from_level - 1, coarse);
        Ok(())
    }

    pub fn values(&self, level: usize) -> Option<&[f64]> {
        self.level_values.get(&level).map(|v| v.as_slice())
    }
}

/// Nodal elastic and fracture properties derived from compressive strength.
#[derive(Debug, Clone)]
pub struct NodeProperties {
    /// Young's modulus, Pa.
    pub e: Vec<f64>,
    /// Tensile strength, Pa.
    pub ft: Vec<f64>,
    /// Fracture energy, N/m.
    pub gf: Vec<f64>,
}

/// Deterministic monotone maps from compressive strength (MPa) to
/// `E`, `f_t` and `G_F`, in the style of standard concrete model-code
/// relations. Coefficients are configurable so alternative fits can be
/// plugged in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertyMap {
    /// E = e_coef_gpa GPa * (f_cm / 10)^(1/3)
    pub e_coef_gpa: f64,
    /// f_t = ft_coef_mpa MPa * (f_cm - ft_offset_mpa)^(2/3) above the ramp
    /// threshold.
    pub ft_coef_mpa: f64,
    pub ft_offset_mpa: f64,
    /// Below this strength the tensile map continues as a linear ramp
    /// through the origin, keeping it total and strictly monotone for the
    /// weak tail of the strength distribution.
    pub ft_ramp_below_mpa: f64,
    /// G_F = gf_coef N/m * f_cm^gf_exp
    pub gf_coef: f64,
    pub gf_exp: f64,
}

impl Default for PropertyMap {
    fn default() -> Self {
        Self {
            e_coef_gpa: 21.5,
            ft_coef_mpa: 0.3,
            ft_offset_mpa: 8.0,
            ft_ramp_below_mpa: 10.0,
            gf_coef: 73.0,
            gf_exp: 0.18,
        }
    }
}

impl PropertyMap {
    pub fn youngs_modulus_pa(&self, fc_mpa: f64) -> f64 {
        self.e_coef_gpa * 1e9 * (fc_mpa / 10.0).cbrt()
    }

    pub fn tensile_strength_pa(&self, fc_mpa: f64) -> f64 {
        let knee = self.ft_ramp_below_mpa;
        if fc_mpa >= knee {
            self.ft_coef_mpa * 1e6 * (fc_mpa - self.ft_offset_mpa).powf(2.0 / 3.0)
        } else {
            let at_knee = self.ft_coef_mpa * 1e6 * (knee - self.ft_offset_mpa).powf(2.0 / 3.0);
            at_knee * fc_mpa / knee
        }
    }

    pub fn fracture_energy_n_per_m(&self, fc_mpa: f64) -> f64 {
        self.gf_coef * fc_mpa.powf(self.gf_exp)
    }

    /// Apply the map to a nodal strength field (MPa). Every entry must be
    /// strictly positive.
    pub fn apply(&self, fc_mpa: &[f64]) -> Result<NodeProperties, FieldError> {
        let n = fc_mpa.len();
        let mut props = NodeProperties {
            e: Vec::with_capacity(n),
            ft: Vec::with_capacity(n),
            gf: Vec::with_capacity(n),
        };
        for &fc in fc_mpa {
            if !(fc > 0.0) {
                return Err(FieldError::NonPositiveStrength(fc));
            }
            props.e.push(self.youngs_modulus_pa(fc));
            props.ft.push(self.tensile_strength_pa(fc));
            props.gf.push(self.fracture_energy_n_per_m(fc));
        }
        Ok(props)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_hierarchy, Rectangle};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn grid(nx: usize, ny: usize, dx: f64) -> Vec<[f64; 2]> {
        let mut coords = Vec::new();
        for iy in 0..ny {
            for ix in 0..nx {
                coords.push([ix as f64 * dx, iy as f64 * dx]);
            }
        }
        coords
    }

    #[test]
    fn covariance_analytic_points() {
        let spec = CovarianceSpec::exponential(1.0, 0.02);
        assert_abs_diff_eq!(spec.at_distance(0.0), 1.0, epsilon = 1e-14);
        assert_relative_eq!(spec.at_distance(0.02), (-1.0f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn jcss_with_zero_threshold_equals_exponential() {
        let coords = grid(5, 4, 0.01);
        let exp = covariance_matrix(&CovarianceSpec::exponential(1.0, 0.02), &coords);
        let jcss = covariance_matrix(
            &CovarianceSpec { kind: CovarianceKind::Jcss { rho0: 0.0 }, sigma2: 1.0, corr_len: 0.02 },
            &coords,
        );
        for i in 0..coords.len() {
            for j in 0..coords.len() {
                assert_abs_diff_eq!(exp[(i, j)], jcss[(i, j)], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn jcss_diagonal_equals_sigma2() {
        let coords = grid(3, 3, 0.01);
        let spec = CovarianceSpec {
            kind: CovarianceKind::Jcss { rho0: 0.5 },
            sigma2: 2.5,
            corr_len: 0.02,
        };
        let cov = covariance_matrix(&spec, &coords);
        for i in 0..coords.len() {
            assert_abs_diff_eq!(cov[(i, i)], 2.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn single_node_sampler_matches_variance() {
        let spec = CovarianceSpec::exponential(1.0, 0.02);
        let sampler = CholeskySampler::new(&spec, &[[0.0, 0.0]]).unwrap();
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for seed in 0..n {
            let v = sampler.sample(seed)[0];
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!((var - 1.0).abs() < 0.03, "sample variance {var}");
        assert!(mean.abs() < 0.02, "sample mean {mean}");
    }

    #[test]
    fn distant_nodes_decorrelate() {
        let spec = CovarianceSpec::exponential(1.0, 0.02);
        let sampler = CholeskySampler::new(&spec, &[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        let n = 100_000;
        let (mut sa, mut sb, mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for seed in 0..n {
            let v = sampler.sample(seed);
            sa += v[0];
            sb += v[1];
            sab += v[0] * v[1];
            saa += v[0] * v[0];
            sbb += v[1] * v[1];
        }
        let nf = n as f64;
        let cov = sab / nf - (sa / nf) * (sb / nf);
        let rho = cov / ((saa / nf - (sa / nf).powi(2)) * (sbb / nf - (sb / nf).powi(2))).sqrt();
        assert!(rho.abs() < 0.02, "empirical correlation {rho}");
    }

    #[test]
    fn sampler_is_deterministic_in_seed() {
        let spec = CovarianceSpec::exponential(1.0, 0.02);
        let coords = grid(6, 6, 0.01);
        let sampler = CholeskySampler::new(&spec, &coords).unwrap();
        assert_eq!(sampler.sample(42), sampler.sample(42));
        assert_ne!(sampler.sample(42), sampler.sample(43));
    }

    #[test]
    fn empirical_covariance_matches_target_on_grid() {
        // 10x10 grid, l_c = 2 dx: entrywise agreement of the empirical
        // covariance of 1e4 draws within 0.05 absolute.
        let dx = 0.01;
        let coords = grid(10, 10, dx);
        let spec = CovarianceSpec::exponential(1.0, 2.0 * dx);
        let sampler = CholeskySampler::new(&spec, &coords).unwrap();
        let target = covariance_matrix(&spec, &coords);
        let n = coords.len();
        let draws = 10_000;
        let mut mean = vec![0.0; n];
        let mut second = vec![0.0; n * n];
        for seed in 0..draws {
            let v = sampler.sample(seed);
            for i in 0..n {
                mean[i] += v[i];
                for j in 0..n {
                    second[i * n + j] += v[i] * v[j];
                }
            }
        }
        let nf = draws as f64;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let emp = second[i * n + j] / nf - (mean[i] / nf) * (mean[j] / nf);
                worst = worst.max((emp - target[(i, j)]).abs());
            }
        }
        assert!(worst < 0.05, "worst entrywise covariance error {worst}");
    }

    #[test]
    fn kl_complete_basis_reproduces_covariance() {
        let coords = grid(6, 5, 0.01);
        let spec = CovarianceSpec::exponential(1.0, 0.02);
        let kl = KlSampler::new(&spec, &coords, coords.len()).unwrap();
        let target = covariance_matrix(&spec, &coords);
        let n = coords.len();
        // sum_m basis_m basis_m^T must reconstruct the covariance
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for m in 0..n {
                    acc += kl.basis[m * n + i] * kl.basis[m * n + j];
                }
                assert_abs_diff_eq!(acc, target[(i, j)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn kl_single_mode_is_rank_one() {
        let coords = grid(5, 5, 0.01);
        let spec = CovarianceSpec::exponential(1.0, 0.02);
        let kl = KlSampler::new(&spec, &coords, 1).unwrap();
        let a = kl.sample(1);
        let b = kl.sample(2);
        // both draws are multiples of the same leading mode
        let ratio = a[0] / b[0];
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x / y, ratio, max_relative = 1e-9);
        }
    }

    #[test]
    fn kl_mode_count_for_95_percent_energy() {
        // 20x20 grid with l_c = 2 dx; reference count from a dense
        // eigendecomposition oracle computed ahead of the implementation.
        let coords = grid(20, 20, 1.0);
        let spec = CovarianceSpec::exponential(1.0, 2.0);
        let kl = KlSampler::new(&spec, &coords, 1).unwrap();
        assert_eq!(kl.modes_for_energy(0.95), 315);
        let trace: f64 = kl.eigenvalues().iter().sum();
        assert_relative_eq!(trace, 400.0, max_relative = 1e-10);
    }

    #[test]
    fn kl_rejects_bad_mode_counts() {
        let coords = grid(3, 3, 0.01);
        let spec = CovarianceSpec::exponential(1.0, 0.02);
        assert!(KlSampler::new(&spec, &coords, 0).is_err());
        assert!(KlSampler::new(&spec, &coords, 10).is_err());
    }

    #[test]
    fn weibull_median_from_zero_gaussian() {
        let m = MarginalSpec::Weibull { modulus: 3.0, scale: 1.0 };
        // median = (ln 2)^{1/3}
        assert_relative_eq!(m.from_standard_normal(0.0), 0.88499704450051772, max_relative = 1e-14);
    }

    #[test]
    fn lognormal_median_from_zero_gaussian() {
        let m = MarginalSpec::LogNormal { log_mean: 1.3, log_sd: 0.4 };
        assert_relative_eq!(m.from_standard_normal(0.0), (1.3f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn gaussian_marginal_is_affine() {
        let m = MarginalSpec::Gaussian { mean: 42.3, sd: 15.4 };
        for z in [-3.0, -0.7, 0.0, 0.1, 2.5] {
            assert_relative_eq!(m.from_standard_normal(z), 42.3 + 15.4 * z, max_relative = 1e-15);
        }
    }

    #[test]
    fn weibull_marginal_passes_ks_test() {
        let spec = CovarianceSpec::exponential(1.0, 0.02);
        let sampler = CholeskySampler::new(&spec, &[[0.0, 0.0]]).unwrap();
        let marginal = MarginalSpec::Weibull { modulus: 3.0, scale: 1.0 };
        let n = 10_000;
        let mut vals: Vec<f64> = (0..n)
            .map(|seed| marginal.from_standard_normal(sampler.sample(seed)[0]))
            .collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut d = 0.0f64;
        for (i, v) in vals.iter().enumerate() {
            let cdf = 1.0 - (-(v / 1.0).powi(3)).exp();
            let hi = (i + 1) as f64 / n as f64;
            let lo = i as f64 / n as f64;
            d = d.max((cdf - hi).abs()).max((cdf - lo).abs());
        }
        assert!(d < 0.02, "KS statistic {d}");
    }

    proptest! {
        #[test]
        fn copula_transform_strictly_increasing(
            z1 in -6.0f64..6.0,
            gap in 1e-6f64..2.0,
            which in 0usize..3,
        ) {
            let z2 = z1 + gap;
            let m = match which {
                0 => MarginalSpec::Gaussian { mean: 10.0, sd: 2.0 },
                1 => MarginalSpec::LogNormal { log_mean: 0.5, log_sd: 0.3 },
                _ => MarginalSpec::Weibull { modulus: 3.0, scale: 47.0 },
            };
            prop_assert!(m.from_standard_normal(z1) < m.from_standard_normal(z2));
        }

        #[test]
        fn weibull_and_lognormal_strictly_positive(z in -8.0f64..8.0) {
            let w = MarginalSpec::Weibull { modulus: 3.0, scale: 47.0 };
            let ln = MarginalSpec::LogNormal { log_mean: 3.7, log_sd: 0.2 };
            prop_assert!(w.from_standard_normal(z) > 0.0);
            prop_assert!(ln.from_standard_normal(z) > 0.0);
        }
    }

    #[test]
    fn coarsening_is_bitwise_restriction() {
        let h = build_hierarchy(Rectangle { width: 0.06, height: 0.04 }, 0.010, 2, 0.05).unwrap();
        let spec = CovarianceSpec::exponential(1.0, 0.02);
        let sampler = CholeskySampler::new(&spec, &h.levels[2].coords).unwrap();
        let z = sampler.sample(7);
        let marginal = MarginalSpec::Weibull { modulus: 3.0, scale: 47.37 };
        let fine = gaussian_to_marginal(&z, &marginal);

        // constant field stays constant
        let c = coarsen_field(&vec![3.5; h.levels[2].node_count()], h.restriction_map(2)).unwrap();
        assert!(c.iter().all(|&v| v == 3.5));

        // bitwise equality at coincident nodes
        let coarse = coarsen_field(&fine, h.restriction_map(2)).unwrap();
        for (ci, &fi) in h.restriction_map(2).iter().enumerate() {
            assert_eq!(coarse[ci].to_bits(), fine[fi as usize].to_bits());
        }

        // transform and restriction commute (both are pointwise)
        let z_coarse = coarsen_field(&z, h.restriction_map(2)).unwrap();
        let transformed_then = coarsen_field(&fine, h.restriction_map(2)).unwrap();
        let coarsened_then = gaussian_to_marginal(&z_coarse, &marginal);
        assert_eq!(transformed_then, coarsened_then);

        // two-step restriction equals the composed index chase 2 -> 0
        let lvl1 = coarsen_field(&fine, h.restriction_map(2)).unwrap();
        let lvl0 = coarsen_field(&lvl1, h.restriction_map(1)).unwrap();
        for c0 in 0..h.levels[0].node_count() {
            let f2 = h.restriction_map(2)[h.restriction_map(1)[c0] as usize] as usize;
            assert_eq!(lvl0[c0].to_bits(), fine[f2].to_bits());
        }
    }

    #[test]
    fn coarsen_rejects_mismatched_map() {
        assert!(coarsen_field(&[1.0, 2.0], &[0, 5]).is_err());
    }

    #[test]
    fn property_map_reference_triple() {
        // Default map at f_cm = 42.3 MPa; 60-digit reference values.
        let map = PropertyMap::default();
        assert_relative_eq!(map.youngs_modulus_pa(42.3), 34771112198.820591, max_relative = 1e-12);
        assert_relative_eq!(map.tensile_strength_pa(42.3), 3167018.9943468691, max_relative = 1e-12);
        assert_relative_eq!(map.fracture_energy_n_per_m(42.3), 143.23993862275619, max_relative = 1e-12);
    }

    #[test]
    fn property_map_constant_field_gives_constant_properties() {
        let map = PropertyMap::default();
        let props = map.apply(&vec![42.3; 40]).unwrap();
        assert!(props.e.iter().all(|&v| v == props.e[0]));
        assert!(props.ft.iter().all(|&v| v == props.ft[0]));
        assert!(props.gf.iter().all(|&v| v == props.gf[0]));
    }

    #[test]
    fn property_map_strictly_monotone() {
        let map = PropertyMap::default();
        let mut prev = (0.0, 0.0, 0.0);
        for fc in [0.5, 2.0, 8.0, 9.99, 10.0, 20.0, 42.3, 84.6] {
            let cur = (
                map.youngs_modulus_pa(fc),
                map.tensile_strength_pa(fc),
                map.fracture_energy_n_per_m(fc),
            );
            assert!(cur.0 > prev.0 && cur.1 > prev.1 && cur.2 > prev.2, "not monotone at {fc}");
            prev = cur;
        }
    }

    #[test]
    fn property_map_tensile_ramp_is_continuous() {
        let map = PropertyMap::default();
        let below = map.tensile_strength_pa(10.0 - 1e-9);
        let above = map.tensile_strength_pa(10.0 + 1e-9);
        assert_relative_eq!(below, above, max_relative = 1e-6);
    }

    #[test]
    fn property_map_rejects_nonpositive_strength() {
        let map = PropertyMap::default();
        assert!(map.apply(&[42.3, 0.0]).is_err());
        assert!(map.apply(&[-3.0]).is_err());
    }

    #[test]
    fn warning_when_correlation_length_under_resolved() {
        assert!(corr_len_warning(0.010, 0.010).is_some());
        assert!(corr_len_warning(0.005, 0.010).is_some());
        assert!(corr_len_warning(0.020, 0.010).is_none());
    }
}
