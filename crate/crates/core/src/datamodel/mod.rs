//! The multi-phase sample: individuals of a target population, the
//! first-phase (EHR) subset, the pilot subsample, and the second-phase study
//! sample, together with the cost model and the sources of W₀ information.

mod csvio;
mod generate;

pub use csvio::{format_f64, read_external, read_frame, write_external, write_frame, FrameSchema};
pub use generate::{
    draw_external_sample, generate_population, NormalSpec, PopulationConfig, SelectionMechanism, SimulatedPopulation,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One member of the target population. Fields that are not observed at the
/// individual's phase are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub id: u64,
    /// Baseline covariates W₀, known for the whole target population.
    pub w0: Vec<f64>,
    /// EHR-only covariates W₁; present iff `r1`.
    pub w1: Option<Vec<f64>>,
    /// Outcome; absent outside the second-phase and pilot samples, and for
    /// second-phase rows whose outcome is not yet measured.
    pub y: Option<f64>,
    pub r1: bool,
    pub r2: bool,
    pub pilot: bool,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
}

impl Individual {
    /// W̄₁ = (W₀, W₁) when W₁ is observed.
    pub fn w_bar(&self) -> Option<Vec<f64>> {
        self.w1.as_ref().map(|w1| {
            let mut v = self.w0.clone();
            v.extend_from_slice(w1);
            v
        })
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.r2 && !self.r1 {
            return Err("r2 = 1 requires r1 = 1".into());
        }
        if self.pilot && !self.r1 {
            return Err("pilot rows must belong to the first-phase sample".into());
        }
        if !self.r1 && self.w1.is_some() {
            return Err("w1 present for a row outside the first-phase sample".into());
        }
        if self.r1 && self.w1.is_none() {
            return Err("first-phase row without w1".into());
        }
        if !self.r2 && !self.pilot && self.y.is_some() {
            return Err("y present for a row outside the second-phase and pilot samples".into());
        }
        if self.pilot && self.y.is_none() {
            return Err("pilot row without y".into());
        }
        for (name, p) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if let Some(p) = p {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(format!("{name} = {p} outside (0, 1]"));
                }
            }
        }
        if self.w0.iter().any(|x| !x.is_finite())
            || self.w1.iter().flatten().any(|x| !x.is_finite())
            || self.y.is_some_and(|y| !y.is_finite())
        {
            return Err("non-finite value".into());
        }
        Ok(())
    }
}

/// An immutable snapshot of the multi-phase sample.
///
/// `n` is the target population size. When individual-level W₀ is available
/// for everyone, `individuals.len() == n`; otherwise the frame may hold only
/// the first-phase rows and `n` is supplied separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationFrame {
    individuals: Vec<Individual>,
    n: usize,
}

impl PopulationFrame {
    pub fn new(individuals: Vec<Individual>, n: usize) -> Result<Self> {
        if individuals.len() > n {
            return Err(Error::invalid(format!("frame has {} rows but population size is {n}", individuals.len())));
        }
        let (k, m) = individuals.first().map(|i| (i.w0.len(), i.w1.as_ref().map(Vec::len))).unwrap_or((0, None));
        let mut m = m;
        for (row, ind) in individuals.iter().enumerate() {
            ind.validate().map_err(|message| Error::Row { row: row + 1, message })?;
            if ind.w0.len() != k {
                return Err(Error::Row { row: row + 1, message: "w0 dimension mismatch".into() });
            }
            if let Some(w1) = &ind.w1 {
                match m {
                    None => m = Some(w1.len()),
                    Some(m) if m != w1.len() => {
                        return Err(Error::Row { row: row + 1, message: "w1 dimension mismatch".into() })
                    }
                    _ => {}
                }
            }
        }
        Ok(Self { individuals, n })
    }

    /// Frame whose rows are the whole target population.
    pub fn from_population(individuals: Vec<Individual>) -> Result<Self> {
        let n = individuals.len();
        Self::new(individuals, n)
    }

    pub fn individuals(&self) -> &[Individual] {
        &self.individuals
    }

    pub fn into_individuals(self) -> Vec<Individual> {
        self.individuals
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_e(&self) -> usize {
        self.individuals.iter().filter(|i| i.r1).count()
    }

    pub fn n_s(&self) -> usize {
        self.individuals.iter().filter(|i| i.r2).count()
    }

    pub fn n_p(&self) -> usize {
        self.individuals.iter().filter(|i| i.pilot).count()
    }

    /// Row indices of the pilot sample.
    pub fn pilot_ids(&self) -> Vec<usize> {
        (0..self.individuals.len()).filter(|&i| self.individuals[i].pilot).collect()
    }

    /// True when every member of the target population has a row.
    pub fn is_individual_level(&self) -> bool {
        self.individuals.len() == self.n
    }

    pub fn first_phase(&self) -> impl Iterator<Item = &Individual> {
        self.individuals.iter().filter(|i| i.r1)
    }

    pub fn second_phase(&self) -> impl Iterator<Item = &Individual> {
        self.individuals.iter().filter(|i| i.r2)
    }

    pub fn pilot(&self) -> impl Iterator<Item = &Individual> {
        self.individuals.iter().filter(|i| i.pilot)
    }

    pub fn w0_dim(&self) -> usize {
        self.individuals.first().map_or(0, |i| i.w0.len())
    }

    pub fn w1_dim(&self) -> usize {
        self.first_phase().next().and_then(|i| i.w1.as_ref()).map_or(0, Vec::len)
    }
}

/// How W₀ is known for the target population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum W0Source {
    /// W₀ observed for every member of the population.
    IndividualLevel { w0: Vec<Vec<f64>> },
    /// Population distribution of W₀ from a public source.
    KnownDistribution { distribution: W0Distribution },
    /// An external probability sample with known inclusion probabilities.
    ExternalProbabilitySample { records: Vec<ExternalRecord> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum W0Distribution {
    /// Categorical W₀ with probability mass on listed points.
    Discrete { points: Vec<Vec<f64>>, probs: Vec<f64> },
    /// Independent normal components.
    Normal { means: Vec<f64>, sds: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalRecord {
    pub id: u64,
    pub w0: Vec<f64>,
    pub samp_prob: f64,
}

impl W0Source {
    pub fn from_frame(frame: &PopulationFrame) -> Result<Self> {
        if !frame.is_individual_level() {
            return Err(Error::invalid("individual-level W0 source requires a row for every population member"));
        }
        Ok(W0Source::IndividualLevel { w0: frame.individuals().iter().map(|i| i.w0.clone()).collect() })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            W0Source::IndividualLevel { w0 } => {
                if w0.is_empty() {
                    return Err(Error::invalid("empty W0 source"));
                }
            }
            W0Source::KnownDistribution { distribution } => distribution.validate()?,
            W0Source::ExternalProbabilitySample { records } => {
                if records.is_empty() {
                    return Err(Error::invalid("external sample is empty"));
                }
                for (row, r) in records.iter().enumerate() {
                    if !(r.samp_prob > 0.0 && r.samp_prob <= 1.0) {
                        return Err(Error::Row {
                            row: row + 1,
                            message: format!("sampling probability {} outside (0, 1]", r.samp_prob),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

impl W0Distribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            W0Distribution::Discrete { points, probs } => {
                if points.is_empty() || points.len() != probs.len() {
                    return Err(Error::invalid("discrete W0 distribution needs one probability per point"));
                }
                if probs.iter().any(|&p| !(p >= 0.0)) {
                    return Err(Error::invalid("negative probability in W0 distribution"));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::invalid(format!("W0 pmf sums to {total}, not 1")));
                }
            }
            W0Distribution::Normal { means, sds } => {
                if means.is_empty() || means.len() != sds.len() {
                    return Err(Error::invalid("normal W0 distribution needs matching means and sds"));
                }
                if sds.iter().any(|&s| !(s > 0.0)) {
                    return Err(Error::invalid("normal W0 standard deviations must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Per-individual cost of measuring the outcome, C₂(W̄₁).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OutcomeCost {
    Constant {
        value: f64,
    },
    /// c + a·W₀ + b·W₁.
    Affine {
        intercept: f64,
        w0: Vec<f64>,
        w1: Vec<f64>,
    },
    /// Explicit cost per support point W̄₁; lookups must match exactly.
    Tabulated {
        points: Vec<Vec<f64>>,
        costs: Vec<f64>,
    },
}

impl OutcomeCost {
    pub fn evaluate(&self, w0: &[f64], w1: &[f64]) -> Result<f64> {
        let c = match self {
            OutcomeCost::Constant { value } => *value,
            OutcomeCost::Affine { intercept, w0: a, w1: b } => {
                if a.len() != w0.len() || b.len() != w1.len() {
                    return Err(Error::invalid("affine cost dimension mismatch"));
                }
                intercept
                    + a.iter().zip(w0).map(|(a, x)| a * x).sum::<f64>()
                    + b.iter().zip(w1).map(|(b, x)| b * x).sum::<f64>()
            }
            OutcomeCost::Tabulated { points, costs } => {
                let key: Vec<f64> = w0.iter().chain(w1).copied().collect();
                let pos = points
                    .iter()
                    .position(|p| p.len() == key.len() && p.iter().zip(&key).all(|(a, b)| a == b))
                    .ok_or_else(|| Error::invalid(format!("no tabulated cost for W̄₁ = {key:?}")))?;
                costs[pos]
            }
        };
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::invalid(format!("outcome cost {c} is not positive")));
        }
        Ok(c)
    }
}

/// Budget B = C₀ + n_e·C₁ + (expected second-phase cost).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub total_budget: f64,
    pub initial_cost: f64,
    pub per_record_cost: f64,
    pub outcome_cost: OutcomeCost,
}

impl CostModel {
    pub fn new(total_budget: f64, initial_cost: f64, per_record_cost: f64, outcome_cost: OutcomeCost) -> Result<Self> {
        let cm = Self { total_budget, initial_cost, per_record_cost, outcome_cost };
        cm.validate()?;
        Ok(cm)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.total_budget > self.initial_cost) {
            return Err(Error::Config(format!(
                "budget {} must exceed initial cost {}",
                self.total_budget, self.initial_cost
            )));
        }
        if !(self.per_record_cost >= 0.0) {
            return Err(Error::Config("per-record cost must be non-negative".into()));
        }
        if let OutcomeCost::Constant { value } = self.outcome_cost {
            if !(value > 0.0) {
                return Err(Error::Config("outcome cost must be positive".into()));
            }
        }
        Ok(())
    }

    /// Budget left for the second phase: B − C₀ − n_e·C₁.
    pub fn second_phase_budget(&self, n_e: usize) -> f64 {
        self.total_budget - self.initial_cost - n_e as f64 * self.per_record_cost
    }
}
