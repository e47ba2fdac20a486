use serde::{Deserialize, Serialize};

use crate::datamodel::{Individual, PopulationFrame};
use crate::regress::{fit_mean, DesignSpec, MeanFitOptions, MeanModelFit};
use crate::{Error, Result};

/// Rows used to fit the outcome mean models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanFitSource {
    /// The pilot subsample, a simple random sample of the first phase.
    #[default]
    Pilot,
    /// Second-phase rows; E(Y | W₀) is then weighted by 1/λ₂.
    SecondPhase,
}

/// Recipe for the two outcome mean models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModelSpec {
    /// Design on W₀ for E(Y | W₀).
    pub w0_spec: DesignSpec,
    /// Design on W̄₁ for E(Y | W̄₁, R₁ = 1).
    pub w1_spec: DesignSpec,
    #[serde(default)]
    pub robust: bool,
    #[serde(default)]
    pub source: MeanFitSource,
}

impl OutcomeModelSpec {
    /// Linear models in every covariate.
    pub fn linear(k: usize, m: usize) -> Self {
        Self {
            w0_spec: DesignSpec::linear(DesignSpec::w_names(k, 0)),
            w1_spec: DesignSpec::linear(DesignSpec::w_names(k, m)),
            robust: false,
            source: MeanFitSource::Pilot,
        }
    }

    /// Rows of `frame` this recipe fits on.
    pub fn rows<'a>(&self, frame: &'a PopulationFrame) -> Vec<&'a Individual> {
        match self.source {
            MeanFitSource::Pilot => frame.pilot().collect(),
            MeanFitSource::SecondPhase => frame.second_phase().collect(),
        }
    }

    /// Fits both models on the given rows.
    pub fn fit_rows(&self, rows: &[&Individual]) -> Result<(MeanModelFit, MeanModelFit)> {
        let mut x0 = Vec::with_capacity(rows.len());
        let mut x1 = Vec::with_capacity(rows.len());
        let mut y = Vec::with_capacity(rows.len());
        let mut w = Vec::with_capacity(rows.len());
        for ind in rows {
            let yi = ind.y.ok_or_else(|| Error::invalid(format!("individual {} has no outcome", ind.id)))?;
            x0.push(ind.w0.clone());
            x1.push(ind.w_bar().ok_or_else(|| Error::invalid(format!("individual {} has no w1", ind.id)))?);
            y.push(yi);
            w.push(match self.source {
                MeanFitSource::Pilot => 1.0,
                MeanFitSource::SecondPhase => 1.0 / ind.lambda2.unwrap_or(1.0),
            });
        }
        let weights = (self.source == MeanFitSource::SecondPhase).then_some(w);
        let m0 =
            fit_mean(&x0, &y, &self.w0_spec, &MeanFitOptions { robust: self.robust, weights, ..Default::default() })?;
        let m1 = fit_mean(&x1, &y, &self.w1_spec, &MeanFitOptions { robust: self.robust, ..Default::default() })?;
        Ok((m0, m1))
    }
}

/// Fits E(Y | W₀) and E(Y | W̄₁, R₁ = 1) from `frame` per `spec`.
pub fn fit_outcome_models(frame: &PopulationFrame, spec: &OutcomeModelSpec) -> Result<(MeanModelFit, MeanModelFit)> {
    spec.fit_rows(&spec.rows(frame))
}
