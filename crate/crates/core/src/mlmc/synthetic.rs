//! Synthetic power-law test model with known statistics.
//!
//! `E[Q_l] = q_limit - bias_coef * M_l^{-alpha}` and
//! `V[Y_l] = y_var_coef * M_l^{-beta}` with cost `cost_coef * M_l^gamma`
//! per grid, so every quantity the estimator infers has a closed form.
//! Used to exercise the adaptive driver end to end.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use super::{ModelError, PairModel, PairSample};

#[derive(Debug, Clone, Copy)]
pub struct PowerLawModel {
    /// Continuum expectation E[Q].
    pub q_limit: f64,
    /// Bias amplitude: E[Q_l] = q_limit - bias_coef * M_l^{-alpha}.
    pub bias_coef: f64,
    pub alpha: f64,
    /// Level-difference variance: V[Y_l] = y_var_coef * M_l^{-beta}, l >= 1.
    pub y_var_coef: f64,
    pub beta: f64,
    /// Standard deviation of Q_l itself (level 0 noise and MC reference).
    pub q_sd: f64,
    /// Per-grid cost cost_coef * M^gamma; level pairs pay both grids.
    pub cost_coef: f64,
    pub gamma: f64,
    pub m0: f64,
    pub refine: f64,
}

impl PowerLawModel {
    /// Parameters shaped like the notched-beam case study: peak load around
    /// 1.8 kN, rates (alpha, beta, gamma) = (0.5, 0.8, 1), M_0 = 350 nodes.
    pub fn paper_like() -> Self {
        Self {
            q_limit: 1800.0,
            bias_coef: 2000.0,
            alpha: 0.5,
            y_var_coef: 2.0e6,
            beta: 0.8,
            q_sd: 300.0,
            cost_coef: 1e-3,
            gamma: 1.0,
            m0: 350.0,
            refine: 4.0,
        }
    }

    pub fn dof_at(&self, level: usize) -> f64 {
        self.m0 * self.refine.powi(level as i32)
    }

    /// Exact discretised expectation E[Q_l].
    pub fn expected_q(&self, level: usize) -> f64 {
        self.q_limit - self.true_bias(level)
    }

    /// Exact bias |E[Q_l - Q]|.
    pub fn true_bias(&self, level: usize) -> f64 {
        self.bias_coef * self.dof_at(level).powf(-self.alpha)
    }

    /// Exact V[Y_l].
    pub fn y_variance(&self, level: usize) -> f64 {
        if level == 0 {
            self.q_sd * self.q_sd
        } else {
            self.y_var_coef * self.dof_at(level).powf(-self.beta)
        }
    }

    /// Exact per-sample cost (both grids of a pair for l >= 1).
    pub fn pair_cost(&self, level: usize) -> f64 {
        let fine = self.cost_coef * self.dof_at(level).powf(self.gamma);
        if level == 0 {
            fine
        } else {
            fine + self.cost_coef * self.dof_at(level - 1).powf(self.gamma)
        }
    }
}

impl PairModel for PowerLawModel {
    fn evaluate(&self, level: usize, seed: u64) -> Result<PairSample, ModelError> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let g1: f64 = rng.sample(StandardNormal);
        let g2: f64 = rng.sample(StandardNormal);
        let cost = self.pair_cost(level);
        let cost_fine = self.cost_coef * self.dof_at(level).powf(self.gamma);
        if level == 0 {
            let q = self.expected_q(0) + self.q_sd * g1;
            Ok(PairSample { y: q, q_fine: q, q_coarse: None, cost, cost_fine })
        } else {
            let mean_y = self.expected_q(level) - self.expected_q(level - 1);
            let y = mean_y + self.y_variance(level).sqrt() * g1;
            let q_fine = self.expected_q(level) + self.q_sd * g2;
            Ok(PairSample { y, q_fine, q_coarse: Some(q_fine - y), cost, cost_fine })
        }
    }

    fn dof(&self, level: usize) -> f64 {
        self.dof_at(level)
    }
}
