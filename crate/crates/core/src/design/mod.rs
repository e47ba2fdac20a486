//! Budget-constrained optimal second-phase sampling.
//!
//! Everything is computed on a discrete support of W̄₁ = (W₀, W₁): either a
//! genuinely discrete distribution or the empirical first-phase sample
//! standing in for a continuous one.

mod alternative;
mod draw;
mod optimal;

pub use alternative::{
    alternative_design, relative_efficiency_alternative, AlternativeDesign, AlternativeOptions, TargetCell,
};
pub use draw::draw_second_phase;
pub use optimal::{
    design_variance, expected_cost, feasible_ne_range, kkt_residuals, optimal_lambda2, random_baseline,
    relative_efficiency, solution_for_rule, DesignSolution, NeRange, SolutionPoint,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{CostModel, PopulationFrame};
use crate::regress::{MeanModelFit, VarianceModelFit};
use crate::rng::{self, tags};
use crate::selection::SelectionModel;
use crate::{Error, Result};

/// Relative floor applied to v₂ so that every λ₂ stays positive.
pub const V2_FLOOR: f64 = 1e-8;

/// One point of the W̄₁ support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    /// Individual id when the point is a first-phase row.
    pub id: Option<u64>,
    pub w0: Vec<f64>,
    pub w1: Vec<f64>,
    /// Probability mass p₁(w̄₁).
    pub prob: f64,
    pub lambda1: f64,
    /// v₁(w₀) = Var(Y | W₀) − E[Var(Y | W̄₁, R₁ = 1) | W₀].
    pub v1: f64,
    /// v₂(w̄₁) = Var(Y | W̄₁, R₁ = 1).
    pub v2: f64,
    pub c2: f64,
}

/// Var(Y) and the share of it explained by W₀, needed for design variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeMoments {
    pub var_y: f64,
    pub pve: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignInputs {
    pub support: Vec<SupportPoint>,
    pub cost: CostModel,
    pub n: usize,
    pub n_e: usize,
    pub moments: Option<OutcomeMoments>,
}

/// Weights given to first-phase rows when they stand in for the W̄₁
/// distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportWeighting {
    /// Each row 1/n_e.
    #[default]
    Uniform,
    /// Rows weighted by 1/λ₁ and normalized.
    InverseSelection,
}

impl DesignInputs {
    /// Validates the inputs and floors v₂ at 1e-8 times its mean.
    pub fn new(
        mut support: Vec<SupportPoint>,
        cost: CostModel,
        n: usize,
        n_e: usize,
        moments: Option<OutcomeMoments>,
    ) -> Result<Self> {
        cost.validate()?;
        if support.is_empty() {
            return Err(Error::invalid("design support is empty"));
        }
        if n_e > n {
            return Err(Error::invalid(format!("n_e = {n_e} exceeds n = {n}")));
        }
        let total: f64 = support.iter().map(|s| s.prob).sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("support probabilities sum to {total}, not 1")));
        }
        for (i, s) in support.iter().enumerate() {
            let bad = if !(s.prob >= 0.0) {
                Some("negative probability")
            } else if !(s.lambda1 > 0.0 && s.lambda1 <= 1.0) {
                Some("lambda1 outside (0, 1]")
            } else if !(s.v2 >= 0.0) || !s.v2.is_finite() {
                Some("v2 must be finite and non-negative")
            } else if !(s.v1 >= 0.0) || !s.v1.is_finite() {
                Some("v1 must be finite and non-negative")
            } else if !(s.c2 > 0.0) || !s.c2.is_finite() {
                Some("outcome cost must be positive")
            } else {
                None
            };
            if let Some(msg) = bad {
                return Err(Error::Row { row: i + 1, message: msg.into() });
            }
        }
        let mean_v2: f64 = support.iter().map(|s| s.prob * s.v2).sum();
        if !(mean_v2 > 0.0) {
            return Err(Error::invalid("v2 is zero on the whole support"));
        }
        let floor = V2_FLOOR * mean_v2;
        for s in &mut support {
            if s.v2 < floor {
                s.v2 = floor;
            }
        }
        if let Some(m) = moments {
            if !(m.var_y > 0.0) || !(0.0..=1.0).contains(&m.pve) {
                return Err(Error::invalid("outcome moments need Var(Y) > 0 and PVE in [0, 1]"));
            }
        }
        Ok(Self { support, cost, n, n_e, moments })
    }

    /// Support built from the first-phase rows of `frame`: λ₁ from
    /// `selection`, v₂ from `variance` evaluated at W̄₁, C₂ from the cost
    /// model and a common v₁.
    pub fn from_frame(
        frame: &PopulationFrame,
        selection: &SelectionModel,
        variance: &VarianceModelFit,
        v1: f64,
        cost: CostModel,
        weighting: SupportWeighting,
        moments: Option<OutcomeMoments>,
    ) -> Result<Self> {
        let n_e = frame.n_e();
        if n_e == 0 {
            return Err(Error::invalid("frame has no first-phase rows"));
        }
        let mut support = Vec::with_capacity(n_e);
        for ind in frame.first_phase() {
            let w1 = ind.w1.clone().expect("first-phase rows carry w1");
            let w_bar = ind.w_bar().expect("first-phase rows carry w1");
            variance.design_spec.check_dim(&w_bar)?;
            support.push(SupportPoint {
                id: Some(ind.id),
                lambda1: selection.evaluate(&ind.w0)?,
                v2: variance.predict(&w_bar),
                c2: cost.outcome_cost.evaluate(&ind.w0, &w1)?,
                w0: ind.w0.clone(),
                w1,
                prob: 0.0,
                v1,
            });
        }
        match weighting {
            SupportWeighting::Uniform => {
                for s in &mut support {
                    s.prob = 1.0 / n_e as f64;
                }
            }
            SupportWeighting::InverseSelection => {
                let total: f64 = support.iter().map(|s| 1.0 / s.lambda1).sum();
                for s in &mut support {
                    s.prob = 1.0 / s.lambda1 / total;
                }
            }
        }
        let total: f64 = support.iter().map(|s| s.prob).sum();
        for s in &mut support {
            s.prob /= total;
        }
        Self::new(support, cost, frame.n(), n_e, moments)
    }

    pub fn second_phase_budget(&self) -> f64 {
        self.cost.second_phase_budget(self.n_e)
    }
}

/// v₁ implied by a fitted E(Y | W̄₁) model: the variance of its predictions
/// over W₁ drawn from the first-phase rows, W₀ held fixed.
///
/// Design expansions have no interaction terms, so the variance over W₁ is
/// the same for every W₀ and one value is returned.
pub fn v1_from_mean_model(mean_w1: &MeanModelFit, frame: &PopulationFrame, draws: usize, seed: u64) -> Result<f64> {
    let pool: Vec<&Vec<f64>> = frame.first_phase().filter_map(|i| i.w1.as_ref()).collect();
    let Some(anchor) = frame.first_phase().next() else {
        return Err(Error::invalid("frame has no first-phase rows"));
    };
    if draws < 2 {
        return Err(Error::invalid("need at least two W1 draws"));
    }
    let mut rng = rng::stream(seed, tags::V1_DRAWS, 0);
    let preds: Vec<f64> = (0..draws)
        .map(|_| {
            let w1 = pool[rng.random_range(0..pool.len())];
            let mut raw = anchor.w0.clone();
            raw.extend_from_slice(w1);
            mean_w1.predict(&raw)
        })
        .collect();
    let m = preds.iter().sum::<f64>() / draws as f64;
    Ok(preds.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / draws as f64)
}
