use serde::{Deserialize, Serialize};

use crate::datamodel::{CostModel, OutcomeCost, PopulationConfig};
use crate::estimator::MeanFitSource;
use crate::exec::Exec;
use crate::selection::{ClipBounds, KnownSelection};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Approach {
    #[serde(rename = "1")]
    A1,
    #[serde(rename = "2")]
    A2,
    #[serde(rename = "3a")]
    A3a,
    #[serde(rename = "3b")]
    A3b,
    #[serde(rename = "3c")]
    A3c,
}

impl Approach {
    pub const ALL: [Approach; 5] = [Approach::A1, Approach::A2, Approach::A3a, Approach::A3b, Approach::A3c];

    pub fn label(self) -> &'static str {
        match self {
            Approach::A1 => "1",
            Approach::A2 => "2",
            Approach::A3a => "3a",
            Approach::A3b => "3b",
            Approach::A3c => "3c",
        }
    }

    pub fn is_optimal(self) -> bool {
        matches!(self, Approach::A3a | Approach::A3b | Approach::A3c)
    }
}

impl std::fmt::Display for Approach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Approach::ALL
            .into_iter()
            .find(|a| a.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown approach '{s}' (expected 1, 2, 3a, 3b or 3c)")))
    }
}

/// Where λ₁ comes from during the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lambda1Mode {
    /// The generating selection function.
    #[default]
    Known,
    /// Logistic regression of R₁ on W₀ over the population.
    Direct,
    /// Composition with an external probability sample.
    Composed,
}

/// Deliberate misspecification of the working models: coefficients of the
/// known selection function and of the fitted mean models are multiplied by
/// these factors. 1 leaves a model untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Misspecification {
    pub selection_scale: f64,
    pub mean_scale: f64,
}

impl Default for Misspecification {
    fn default() -> Self {
        Self { selection_scale: 1.0, mean_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub population: PopulationConfig,
    /// When set, the variance intercept is recalibrated to hit this PVE.
    pub pve_target: Option<f64>,
    pub cost: CostModel,
    pub n_reps: usize,
    pub approaches: Vec<Approach>,
    pub lambda1_mode: Lambda1Mode,
    pub seed: u64,
    /// Degrees-of-freedom correction in the variance fit.
    pub reml: bool,
    pub mean_source: MeanFitSource,
    pub clip: ClipBounds,
    /// Inclusion probability of the external sample in composed mode.
    pub external_inclusion: KnownSelection,
    pub misspecification: Misspecification,
    /// W₁ draws used to evaluate v₁.
    pub v1_draws: usize,
    /// Largest tolerated share of failed replications.
    pub max_failure_rate: f64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            population: PopulationConfig::default(),
            pve_target: None,
            cost: CostModel {
                total_budget: 100_000.0,
                initial_cost: 50_000.0,
                per_record_cost: 0.01,
                outcome_cost: OutcomeCost::Constant { value: 2000.0 },
            },
            n_reps: 2000,
            approaches: Approach::ALL.to_vec(),
            lambda1_mode: Lambda1Mode::Known,
            seed: 20_240_101,
            reml: true,
            mean_source: MeanFitSource::Pilot,
            clip: ClipBounds::default(),
            external_inclusion: KnownSelection::Constant { p: 0.05 },
            misspecification: Misspecification::default(),
            v1_draws: 1000,
            max_failure_rate: 0.05,
            exec: Exec::default(),
        }
    }
}

impl SimulationConfig {
    /// Variance intercepts for the low, moderate and high PVE settings.
    pub const GAMMA_INTERCEPTS: [(f64, f64); 3] = [(0.2, -1.026), (0.5, -2.413), (0.8, -3.799)];

    /// The paper-world study at one of the preset PVE levels (0.2, 0.5, 0.8)
    /// and pilot size.
    pub fn preset(pve: f64, n_p: usize) -> Result<Self> {
        let (_, c) = Self::GAMMA_INTERCEPTS
            .iter()
            .find(|(p, _)| (p - pve).abs() < 1e-9)
            .ok_or_else(|| Error::Config(format!("no preset for PVE {pve}; use 0.2, 0.5 or 0.8")))?;
        let mut cfg = Self::default();
        cfg.population.gamma[0] = *c;
        cfg.population.n_p = n_p;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.population.validate()?;
        self.cost.validate()?;
        if self.n_reps == 0 {
            return Err(Error::Config("n_reps must be at least 1".into()));
        }
        if self.approaches.is_empty() {
            return Err(Error::Config("no approaches selected".into()));
        }
        if let Some(p) = self.pve_target {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("pve_target {p} must lie in (0, 1)")));
            }
        }
        if self.v1_draws < 2 {
            return Err(Error::Config("v1_draws must be at least 2".into()));
        }
        self.external_inclusion.validate()?;
        Ok(())
    }
}
