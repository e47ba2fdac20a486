//! First-phase selection probabilities λ₁(W₀).
//!
//! A [`SelectionModel`] is either a known function, a logistic regression of
//! R₁ on W₀ fitted over the whole target population, or the composition of
//! an external probability sample with a pooled EHR-versus-external
//! logistic model:
//!
//! λ₁(w₀) ≈ P(R_ext = 1 | w₀) · p(w₀) / (1 − p(w₀)),
//!
//! where p(w₀) is the probability that a pooled record with covariates w₀
//! came from the EHR.

use serde::{Deserialize, Serialize};

use crate::datamodel::{PopulationFrame, W0Source};
use crate::regress::{fit_beta, fit_logistic, BetaOptions, Convergence, DesignSpec, GlmFit};
use crate::special::expit;
use crate::{Error, Result};

/// A selection probability given in closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KnownSelection {
    Constant {
        p: f64,
    },
    /// expit(intercept + slopesᵀw₀)
    Logistic {
        intercept: f64,
        slopes: Vec<f64>,
    },
    /// min(cap, expit(intercept + slopesᵀw₀))
    TruncatedLogistic {
        intercept: f64,
        slopes: Vec<f64>,
        cap: f64,
    },
}

impl KnownSelection {
    pub fn evaluate_unclipped(&self, w0: &[f64]) -> Result<f64> {
        let lin = |intercept: f64, slopes: &[f64]| -> Result<f64> {
            if slopes.len() != w0.len() {
                return Err(Error::invalid(format!(
                    "selection function expects {} covariates, got {}",
                    slopes.len(),
                    w0.len()
                )));
            }
            Ok(expit(intercept + slopes.iter().zip(w0).map(|(a, b)| a * b).sum::<f64>()))
        };
        match self {
            KnownSelection::Constant { p } => Ok(*p),
            KnownSelection::Logistic { intercept, slopes } => lin(*intercept, slopes),
            KnownSelection::TruncatedLogistic { intercept, slopes, cap } => Ok(lin(*intercept, slopes)?.min(*cap)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            KnownSelection::Constant { p } => *p > 0.0 && *p <= 1.0,
            KnownSelection::Logistic { intercept, slopes } => {
                intercept.is_finite() && slopes.iter().all(|s| s.is_finite())
            }
            KnownSelection::TruncatedLogistic { intercept, slopes, cap } => {
                intercept.is_finite() && slopes.iter().all(|s| s.is_finite()) && *cap > 0.0 && *cap <= 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid selection function {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum SelectionVariant {
    Known { function: KnownSelection },
    DirectLogistic { fit: GlmFit },
    Composed { ext_fit: GlmFit, pool_fit: GlmFit },
}

/// Range that evaluated probabilities are clipped into.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ClipBounds {
    fn default() -> Self {
        Self { lo: 1e-3, hi: 1.0 - 1e-3 }
    }
}

impl ClipBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("clip bounds ({lo}, {hi}) must satisfy 0 < lo ≤ hi ≤ 1")));
        }
        Ok(Self { lo, hi })
    }

    #[inline]
    pub fn apply(&self, p: f64) -> f64 {
        p.clamp(self.lo, self.hi)
    }
}

/// Counts from fitting a composed model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionDiagnostics {
    /// Pooled rows whose composed probability was ≥ 1 before clipping.
    pub n_at_or_above_one: usize,
    pub n_evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionModel {
    #[serde(flatten)]
    pub variant: SelectionVariant,
    pub clip: ClipBounds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<CompositionDiagnostics>,
}

impl SelectionModel {
    pub fn known(function: KnownSelection) -> Self {
        Self { variant: SelectionVariant::Known { function }, clip: ClipBounds::default(), diagnostics: None }
    }

    pub fn with_clip(mut self, clip: ClipBounds) -> Self {
        self.clip = clip;
        self
    }

    /// λ₁(w₀) before clipping.
    pub fn evaluate_unclipped(&self, w0: &[f64]) -> Result<f64> {
        match &self.variant {
            SelectionVariant::Known { function } => function.evaluate_unclipped(w0),
            SelectionVariant::DirectLogistic { fit } => {
                fit.design_spec.check_dim(w0)?;
                Ok(fit.predict(w0))
            }
            SelectionVariant::Composed { ext_fit, pool_fit } => {
                ext_fit.design_spec.check_dim(w0)?;
                pool_fit.design_spec.check_dim(w0)?;
                let p = pool_fit.predict(w0);
                Ok(ext_fit.predict(w0) * p / (1.0 - p))
            }
        }
    }

    /// λ₁(w₀) clipped into the model's bounds.
    pub fn evaluate(&self, w0: &[f64]) -> Result<f64> {
        let raw = self.evaluate_unclipped(w0)?;
        if raw.is_nan() {
            return Err(Error::Numerical("selection probability is NaN".into()));
        }
        Ok(self.clip.apply(raw))
    }
}

fn w0_spec(k: usize, quadratic: bool) -> DesignSpec {
    let names: Vec<String> = (1..=k).map(|j| format!("w0_{j}")).collect();
    if quadratic {
        DesignSpec::quadratic(names)
    } else {
        DesignSpec::linear(names)
    }
}

/// Logistic regression of R₁ on W₀ over every member of the population.
pub fn fit_direct(frame: &PopulationFrame, clip: ClipBounds) -> Result<SelectionModel> {
    if !frame.is_individual_level() {
        return Err(Error::invalid("direct selection fit needs W0 and R1 for the whole target population"));
    }
    let x: Vec<Vec<f64>> = frame.individuals().iter().map(|i| i.w0.clone()).collect();
    let y: Vec<bool> = frame.individuals().iter().map(|i| i.r1).collect();
    let spec = w0_spec(frame.w0_dim(), false);
    let fit = fit_logistic(&x, &y, &spec, &Convergence::default())?;
    Ok(SelectionModel { variant: SelectionVariant::DirectLogistic { fit }, clip, diagnostics: None })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CompositionOptions {
    /// Include squared W₀ terms in both component models.
    pub quadratic: bool,
    pub clip: ClipBounds,
}

/// Composes a beta regression of the external sampling probabilities on W₀
/// with a logistic regression of the source indicator (EHR = 1) on the
/// pooled EHR and external W₀.
pub fn fit_composed(ehr_w0: &[Vec<f64>], external: &W0Source, opts: &CompositionOptions) -> Result<SelectionModel> {
    let W0Source::ExternalProbabilitySample { records } = external else {
        return Err(Error::invalid("composed selection needs an external probability sample"));
    };
    if records.is_empty() {
        return Err(Error::invalid("external sample is empty"));
    }
    if ehr_w0.is_empty() {
        return Err(Error::invalid("no EHR rows supplied"));
    }
    external.validate()?;
    if let Some(r) = records.iter().find(|r| r.samp_prob >= 1.0) {
        return Err(Error::invalid(format!(
            "external record {} has sampling probability 1; beta regression needs values inside (0, 1)",
            r.id
        )));
    }
    let k = records[0].w0.len();
    let spec = w0_spec(k, opts.quadratic);
    let ext_x: Vec<Vec<f64>> = records.iter().map(|r| r.w0.clone()).collect();
    let ext_y: Vec<f64> = records.iter().map(|r| r.samp_prob).collect();
    let ext_fit = fit_beta(&ext_x, &ext_y, &spec, &BetaOptions::default())?;

    let mut pool_x = ehr_w0.to_vec();
    pool_x.extend(ext_x.iter().cloned());
    let mut pool_y = vec![true; ehr_w0.len()];
    pool_y.extend(std::iter::repeat_n(false, records.len()));
    let pool_fit = fit_logistic(&pool_x, &pool_y, &spec, &Convergence::default())?;

    let mut model = SelectionModel {
        variant: SelectionVariant::Composed { ext_fit, pool_fit },
        clip: opts.clip,
        diagnostics: None,
    };
    let mut above = 0;
    for w in &pool_x {
        if model.evaluate_unclipped(w)? >= 1.0 {
            above += 1;
        }
    }
    if above > 0 {
        log::warn!("{above} of {} pooled rows have composed selection probability ≥ 1 before clipping", pool_x.len());
    }
    model.diagnostics = Some(CompositionDiagnostics { n_at_or_above_one: above, n_evaluated: pool_x.len() });
    Ok(model)
}
