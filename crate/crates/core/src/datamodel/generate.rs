use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ExternalRecord, Individual, PopulationFrame};
use crate::rng::{self, tags};
use crate::selection::KnownSelection;
use crate::{Error, Result};

/// Largest exponent accepted by the variance model before it is treated as
/// overflow.
const MAX_LOG_VARIANCE: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalSpec {
    pub mean: f64,
    pub sd: f64,
}

/// How the first-phase sample is drawn from the generated population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMechanism {
    /// Deterministically keep the `n_e` individuals with the largest λ₁.
    #[default]
    TopNe,
    /// Independent Bernoulli(λ₁) inclusion; the realized n_e is random.
    Bernoulli,
}

/// Parameters of the synthetic population: scalar W₀ and W₁, a linear mean
/// α₀ + α₁W₀ + α₂W₁ and log-quadratic variance
/// exp(γ₀₀ + γ₀W₀ + γ₁W₀² + γ₂W₁ + γ₃W₁²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub n: usize,
    pub n_e: usize,
    pub n_p: usize,
    pub alpha: [f64; 3],
    pub gamma: [f64; 5],
    pub w0: NormalSpec,
    pub w1: NormalSpec,
    pub lambda1: KnownSelection,
    pub mechanism: SelectionMechanism,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            n: 10_000,
            n_e: 5_000,
            n_p: 200,
            alpha: [0.1, 3.0, 0.01],
            gamma: [-2.413, -0.2, 0.3, 0.01, 0.01],
            w0: NormalSpec { mean: 3.3, sd: 0.5 },
            w1: NormalSpec { mean: 3.3, sd: 0.5 },
            lambda1: KnownSelection::Logistic { intercept: 0.0, slopes: vec![1.0] },
            mechanism: SelectionMechanism::TopNe,
        }
    }
}

impl PopulationConfig {
    pub fn mean_at(&self, w0: f64, w1: f64) -> f64 {
        self.alpha[0] + self.alpha[1] * w0 + self.alpha[2] * w1
    }

    pub fn log_variance_at(&self, w0: f64, w1: f64) -> f64 {
        let g = &self.gamma;
        g[0] + g[1] * w0 + g[2] * w0 * w0 + g[3] * w1 + g[4] * w1 * w1
    }

    /// β = E[Y] implied by the generating moments.
    pub fn true_mean(&self) -> f64 {
        self.mean_at(self.w0.mean, self.w1.mean)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("population size must be positive".into()));
        }
        if self.mechanism == SelectionMechanism::TopNe && self.n_e > self.n {
            return Err(Error::Config(format!("n_e = {} exceeds n = {}", self.n_e, self.n)));
        }
        if self.mechanism == SelectionMechanism::TopNe && self.n_p > self.n_e {
            return Err(Error::Config(format!("n_p = {} exceeds n_e = {}", self.n_p, self.n_e)));
        }
        if !(self.w0.sd > 0.0 && self.w1.sd > 0.0) {
            return Err(Error::Config("covariate standard deviations must be positive".into()));
        }
        Ok(())
    }
}

/// A generated population with the full truth retained alongside the
/// observed frame, so outcomes can be revealed as they are "measured".
#[derive(Debug, Clone)]
pub struct SimulatedPopulation {
    pub frame: PopulationFrame,
    pub w1_all: Vec<f64>,
    pub y_all: Vec<f64>,
    pub lambda1_true: Vec<f64>,
    pub variance_true: Vec<f64>,
}

impl SimulatedPopulation {
    /// Fills in `y` for every second-phase row of `frame` from the truth.
    pub fn reveal_outcomes(&self, frame: PopulationFrame) -> Result<PopulationFrame> {
        let n = frame.n();
        let rows = frame
            .into_individuals()
            .into_iter()
            .map(|mut ind| {
                if ind.r2 || ind.pilot {
                    ind.y = Some(self.y_all[ind.id as usize]);
                }
                ind
            })
            .collect();
        PopulationFrame::new(rows, n)
    }

    /// Finite-population mean of the generated outcomes.
    pub fn population_mean(&self) -> f64 {
        self.y_all.iter().sum::<f64>() / self.y_all.len() as f64
    }
}

/// Generates a synthetic population and its first-phase and pilot samples.
/// Identical `(config, seed)` pairs give identical populations.
pub fn generate_population(config: &PopulationConfig, seed: u64) -> Result<SimulatedPopulation> {
    config.validate()?;
    let n = config.n;
    let mut rng = rng::stream(seed, tags::POPULATION, 0);
    let w0_dist = Normal::new(config.w0.mean, config.w0.sd).map_err(|e| Error::Config(e.to_string()))?;
    let w1_dist = Normal::new(config.w1.mean, config.w1.sd).map_err(|e| Error::Config(e.to_string()))?;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut w0 = Vec::with_capacity(n);
    let mut w1 = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut var = Vec::with_capacity(n);
    let mut lambda1 = Vec::with_capacity(n);
    let mut uniform = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = w0_dist.sample(&mut rng);
        let b: f64 = w1_dist.sample(&mut rng);
        let z: f64 = std_normal.sample(&mut rng);
        let u: f64 = rng.random();
        let log_v = config.log_variance_at(a, b);
        if log_v > MAX_LOG_VARIANCE {
            return Err(Error::Config(format!(
                "variance model exponent {log_v:.1} overflows (limit {MAX_LOG_VARIANCE})"
            )));
        }
        let v = log_v.exp();
        w0.push(a);
        w1.push(b);
        var.push(v);
        y.push(config.mean_at(a, b) + v.sqrt() * z);
        lambda1.push(config.lambda1.evaluate_unclipped(&[a])?);
        uniform.push(u);
    }

    let mut r1 = vec![false; n];
    match config.mechanism {
        SelectionMechanism::TopNe => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| lambda1[j].total_cmp(&lambda1[i]).then(i.cmp(&j)));
            for &i in order.iter().take(config.n_e) {
                r1[i] = true;
            }
        }
        SelectionMechanism::Bernoulli => {
            for i in 0..n {
                r1[i] = uniform[i] < lambda1[i];
            }
        }
    }

    let ehr: Vec<usize> = (0..n).filter(|&i| r1[i]).collect();
    if config.n_p > ehr.len() {
        return Err(Error::Config(format!("n_p = {} exceeds realized n_e = {}", config.n_p, ehr.len())));
    }
    let mut pilot = vec![false; n];
    let mut prng = rng::stream(seed, tags::PILOT, 0);
    for k in rand::seq::index::sample(&mut prng, ehr.len(), config.n_p) {
        pilot[ehr[k]] = true;
    }

    let individuals = (0..n)
        .map(|i| Individual {
            id: i as u64,
            w0: vec![w0[i]],
            w1: r1[i].then(|| vec![w1[i]]),
            y: pilot[i].then_some(y[i]),
            r1: r1[i],
            r2: false,
            pilot: pilot[i],
            lambda1: None,
            lambda2: None,
        })
        .collect();
    Ok(SimulatedPopulation {
        frame: PopulationFrame::new(individuals, n)?,
        w1_all: w1,
        y_all: y,
        lambda1_true: lambda1,
        variance_true: var,
    })
}

/// Draws an external probability sample by independent Bernoulli(π(W₀))
/// inclusion over all population rows.
pub fn draw_external_sample(
    frame: &PopulationFrame,
    inclusion: &KnownSelection,
    seed: u64,
) -> Result<Vec<ExternalRecord>> {
    let mut rng = rng::stream(seed, tags::EXTERNAL, 0);
    let mut out = Vec::new();
    for ind in frame.individuals() {
        let p = inclusion.evaluate_unclipped(&ind.w0)?;
        let u: f64 = rng.random();
        if u < p {
            out.push(ExternalRecord { id: ind.id, w0: ind.w0.clone(), samp_prob: p });
        }
    }
    Ok(out)
}
