//! The doubly robust RR estimator of the population mean and its bootstrap.
//!
//! β̂ = (1/n) Σ { Ê(Y|w₀ᵢ) + (R₁ᵢ/λ₁ᵢ)[Ê(Y|w̄₁ᵢ) − Ê(Y|w₀ᵢ)] + (R₂ᵢ/(λ₁ᵢλ₂ᵢ))[Yᵢ − Ê(Y|w̄₁ᵢ)] }
//!
//! where the first sum is the population average of the W₀ imputation,
//! computed from whichever W₀ information is available.

mod bootstrap;
mod models;

pub use bootstrap::{bootstrap_ci, BootstrapOptions, EstimateResult};
pub use models::{fit_outcome_models, MeanFitSource, OutcomeModelSpec};

use serde::{Deserialize, Serialize};

use crate::datamodel::{Individual, PopulationFrame, W0Distribution, W0Source};
use crate::regress::MeanModelFit;
use crate::selection::SelectionModel;
use crate::special::gauss_hermite;
use crate::{Error, Result};

/// Gauss–Hermite nodes per normal W₀ component.
pub const QUADRATURE_NODES: usize = 64;

/// Everything the estimator needs besides the frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceContext {
    pub selection: SelectionModel,
    /// E(Y | W₀).
    pub mean_w0: MeanModelFit,
    /// E(Y | W̄₁, R₁ = 1).
    pub mean_w1: MeanModelFit,
    pub w0_source: W0Source,
}

/// β̂ and its additive decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RrEstimate {
    pub beta_hat: f64,
    /// (imputation, first-phase augmentation, second-phase weighting).
    pub components: [f64; 3],
}

struct RowTerms {
    lambda1: f64,
    lambda2: Option<f64>,
    m0: f64,
    m1: Option<f64>,
}

fn row_terms(ctx: &InfluenceContext, ind: &Individual) -> Result<RowTerms> {
    let lambda1 = ctx.selection.evaluate(&ind.w0)?;
    if !(lambda1 > 0.0) {
        return Err(Error::invalid(format!("λ₁ = 0 for individual {}", ind.id)));
    }
    ctx.mean_w0.design_spec.check_dim(&ind.w0)?;
    let m0 = ctx.mean_w0.predict(&ind.w0);
    if !ind.r1 {
        return Ok(RowTerms { lambda1, lambda2: None, m0, m1: None });
    }
    let lambda2 = ind
        .lambda2
        .ok_or_else(|| Error::invalid(format!("first-phase individual {} has no second-phase probability", ind.id)))?;
    let w_bar = ind.w_bar().expect("first-phase rows carry w1");
    ctx.mean_w1.design_spec.check_dim(&w_bar)?;
    Ok(RowTerms { lambda1, lambda2: Some(lambda2), m0, m1: Some(ctx.mean_w1.predict(&w_bar)) })
}

fn outcome(ind: &Individual) -> Result<f64> {
    ind.y.ok_or_else(|| Error::invalid(format!("second-phase individual {} has no outcome", ind.id)))
}

/// Efficient influence function
/// U = R₂(Y − β)/(λ₁λ₂) − ((R₁ − λ₁)/λ₁)(Ê(Y|W₀) − β) − ((R₂ − λ₂R₁)/(λ₁λ₂))(Ê(Y|W̄₁) − β).
pub fn influence(ctx: &InfluenceContext, ind: &Individual, beta: f64) -> Result<f64> {
    let t = row_terms(ctx, ind)?;
    let r1 = if ind.r1 { 1.0 } else { 0.0 };
    let mut u = -((r1 - t.lambda1) / t.lambda1) * (t.m0 - beta);
    if let (Some(l2), Some(m1)) = (t.lambda2, t.m1) {
        let eta = t.lambda1 * l2;
        let r2 = if ind.r2 { 1.0 } else { 0.0 };
        if ind.r2 {
            u += (outcome(ind)? - beta) / eta;
        }
        u -= (r2 - l2 * r1) / eta * (m1 - beta);
    }
    Ok(u)
}

/// (1/n) Σ U(β) over a frame holding the whole target population.
pub fn estimating_equation(ctx: &InfluenceContext, frame: &PopulationFrame, beta: f64) -> Result<f64> {
    if !frame.is_individual_level() {
        return Err(Error::invalid("the estimating equation needs every population member"));
    }
    let mut s = 0.0;
    for ind in frame.individuals() {
        s += influence(ctx, ind, beta)?;
    }
    Ok(s / frame.n() as f64)
}

/// Population average of Ê(Y | W₀) under the available W₀ information.
///
/// Individual-level W₀ gives the plain average; a discrete distribution its
/// expectation; independent normal components Gauss–Hermite quadrature
/// (exact coordinate by coordinate, since fitted models are additive across
/// covariates); an external probability sample the Hájek-weighted average.
pub fn impute_population_mean(mean_w0: &MeanModelFit, source: &W0Source) -> Result<f64> {
    source.validate()?;
    match source {
        W0Source::IndividualLevel { w0 } => {
            let mut s = 0.0;
            for w in w0 {
                mean_w0.design_spec.check_dim(w)?;
                s += mean_w0.predict(w);
            }
            Ok(s / w0.len() as f64)
        }
        W0Source::KnownDistribution { distribution: W0Distribution::Discrete { points, probs } } => {
            let mut s = 0.0;
            for (w, p) in points.iter().zip(probs) {
                mean_w0.design_spec.check_dim(w)?;
                s += p * mean_w0.predict(w);
            }
            Ok(s)
        }
        W0Source::KnownDistribution { distribution: W0Distribution::Normal { means, sds } } => {
            mean_w0.design_spec.check_dim(means)?;
            let (x, w) = gauss_hermite(QUADRATURE_NODES);
            let at_mean = mean_w0.predict(means);
            let norm = std::f64::consts::PI.sqrt();
            let mut total = -(means.len() as f64 - 1.0) * at_mean;
            for d in 0..means.len() {
                let mut point = means.clone();
                let mut e = 0.0;
                for (xi, wi) in x.iter().zip(&w) {
                    point[d] = means[d] + std::f64::consts::SQRT_2 * sds[d] * xi;
                    e += wi * mean_w0.predict(&point);
                }
                total += e / norm;
            }
            Ok(total)
        }
        W0Source::ExternalProbabilitySample { records } => {
            let (mut num, mut den) = (0.0, 0.0);
            for r in records {
                mean_w0.design_spec.check_dim(&r.w0)?;
                num += mean_w0.predict(&r.w0) / r.samp_prob;
                den += 1.0 / r.samp_prob;
            }
            Ok(num / den)
        }
    }
}

/// The RR estimate of the population mean from a frame whose second-phase
/// rows carry outcomes and whose first-phase rows carry λ₂.
pub fn rr_estimate(ctx: &InfluenceContext, frame: &PopulationFrame) -> Result<RrEstimate> {
    if frame.n_s() == 0 {
        return Err(Error::invalid("no second-phase rows"));
    }
    let n = frame.n() as f64;
    let imputation = impute_population_mean(&ctx.mean_w0, &ctx.w0_source)?;
    let (mut aug, mut ipw) = (0.0, 0.0);
    for ind in frame.first_phase() {
        let t = row_terms(ctx, ind)?;
        let m1 = t.m1.expect("first-phase row");
        aug += (m1 - t.m0) / t.lambda1;
        if ind.r2 {
            let l2 = t.lambda2.expect("first-phase row");
            if !(l2 > 0.0) {
                return Err(Error::invalid(format!("λ₂ = 0 for individual {}", ind.id)));
            }
            ipw += (outcome(ind)? - m1) / (t.lambda1 * l2);
        }
    }
    let components = [imputation, aug / n, ipw / n];
    Ok(RrEstimate { beta_hat: components.iter().sum(), components })
}
