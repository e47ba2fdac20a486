//! Regression engines for the outcome models and the selection mechanism.
//!
//! * [`fit_mean`]: least squares (optionally Huber-robust) for E(Y | ·).
//! * [`fit_variance`]: Gaussian likelihood for a log-linear Var(Y | ·).
//! * [`fit_logistic`]: logit-link binomial GLM by IRLS.
//! * [`fit_beta`]: beta regression with logit mean link and constant
//!   precision.
//!
//! All fitters share [`DesignSpec`], a description of how a raw covariate
//! vector is expanded into design-matrix columns.

mod beta;
mod logistic;
mod mean;
mod pve;
mod variance;

pub use beta::{beta_log_likelihood, fit_beta, BetaOptions};
pub use logistic::{fit_logistic, logistic_log_likelihood};
pub use mean::{fit_mean, MeanFitOptions, MeanModelFit};
pub use pve::compute_pve;
pub use variance::{fit_variance, variance_log_likelihood, VarianceFitOptions, VarianceModelFit};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Stopping rule shared by the iterative fitters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    /// Relative parameter change below which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for Convergence {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Term {
    Intercept,
    Linear { index: usize },
    Square { index: usize },
}

/// Maps a raw covariate vector to a design row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub raw_names: Vec<String>,
    pub terms: Vec<Term>,
}

impl DesignSpec {
    pub fn new(raw_names: Vec<String>, terms: Vec<Term>) -> Result<Self> {
        for t in &terms {
            if let Term::Linear { index } | Term::Square { index } = t {
                if *index >= raw_names.len() {
                    return Err(Error::Config(format!(
                        "design term refers to covariate {index} but only {} exist",
                        raw_names.len()
                    )));
                }
            }
        }
        if terms.is_empty() {
            return Err(Error::Config("design has no terms".into()));
        }
        Ok(Self { raw_names, terms })
    }

    pub fn intercept_only(raw_names: Vec<String>) -> Self {
        Self { raw_names, terms: vec![Term::Intercept] }
    }

    /// Intercept plus every covariate linearly.
    pub fn linear(raw_names: Vec<String>) -> Self {
        let mut terms = vec![Term::Intercept];
        terms.extend((0..raw_names.len()).map(|index| Term::Linear { index }));
        Self { raw_names, terms }
    }

    /// Intercept plus, for each covariate in order, its linear and squared
    /// term.
    pub fn quadratic(raw_names: Vec<String>) -> Self {
        let mut terms = vec![Term::Intercept];
        for index in 0..raw_names.len() {
            terms.push(Term::Linear { index });
            terms.push(Term::Square { index });
        }
        Self { raw_names, terms }
    }

    /// Raw covariate names `w0_1..w0_k, w1_1..w1_m`.
    pub fn w_names(k: usize, m: usize) -> Vec<String> {
        (1..=k).map(|j| format!("w0_{j}")).chain((1..=m).map(|j| format!("w1_{j}"))).collect()
    }

    pub fn n_raw(&self) -> usize {
        self.raw_names.len()
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn has_intercept(&self) -> bool {
        self.terms.contains(&Term::Intercept)
    }

    pub fn column_names(&self) -> Vec<String> {
        self.terms
            .iter()
            .map(|t| match *t {
                Term::Intercept => "(intercept)".to_string(),
                Term::Linear { index } => self.raw_names[index].clone(),
                Term::Square { index } => format!("{}^2", self.raw_names[index]),
            })
            .collect()
    }

    #[inline]
    pub fn term_value(term: Term, raw: &[f64]) -> f64 {
        match term {
            Term::Intercept => 1.0,
            Term::Linear { index } => raw[index],
            Term::Square { index } => raw[index] * raw[index],
        }
    }

    /// xᵀβ for a raw covariate vector.
    #[inline]
    pub fn linear_predictor(&self, coefficients: &[f64], raw: &[f64]) -> f64 {
        assert_eq!(raw.len(), self.raw_names.len(), "covariate dimension mismatch with design");
        self.terms.iter().zip(coefficients).map(|(&t, c)| c * Self::term_value(t, raw)).sum()
    }

    pub fn check_dim(&self, raw: &[f64]) -> Result<()> {
        if raw.len() != self.raw_names.len() {
            return Err(Error::invalid(format!(
                "covariate vector has {} entries, design expects {}",
                raw.len(),
                self.raw_names.len()
            )));
        }
        Ok(())
    }

    pub fn matrix(&self, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let p = self.terms.len();
        let mut m = DMatrix::zeros(rows.len(), p);
        for (i, raw) in rows.iter().enumerate() {
            self.check_dim(raw)?;
            for (j, &t) in self.terms.iter().enumerate() {
                m[(i, j)] = Self::term_value(t, raw);
            }
        }
        Ok(m)
    }
}

/// Family of a generalized linear model fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Logistic,
    Beta,
}

/// A fitted logit-link GLM. For the beta family `dispersion` holds the
/// precision φ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub family: Family,
    pub design_spec: DesignSpec,
    pub coefficients: Vec<f64>,
    pub dispersion: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl GlmFit {
    /// Mean response expit(xᵀb), in (0, 1).
    pub fn predict(&self, raw: &[f64]) -> f64 {
        crate::special::expit(self.design_spec.linear_predictor(&self.coefficients, raw))
    }

    pub fn linear_predictor(&self, raw: &[f64]) -> f64 {
        self.design_spec.linear_predictor(&self.coefficients, raw)
    }
}

/// Centers and scales non-intercept columns so iterative fits are well
/// conditioned and separation checks are scale-free.
pub(crate) struct Standardizer {
    center: Vec<f64>,
    scale: Vec<f64>,
    intercept_col: Option<usize>,
}

impl Standardizer {
    pub fn new(spec: &DesignSpec, x: &DMatrix<f64>) -> Self {
        let (n, p) = x.shape();
        let intercept_col = spec.terms.iter().position(|t| *t == Term::Intercept);
        let mut center = vec![0.0; p];
        let mut scale = vec![1.0; p];
        for j in 0..p {
            if Some(j) == intercept_col {
                continue;
            }
            let col = x.column(j);
            let m = col.sum() / n as f64;
            let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
            if intercept_col.is_some() {
                center[j] = m;
            }
            let s =
                if intercept_col.is_some() { sd } else { (col.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt() };
            if s > 0.0 {
                scale[j] = s;
            }
        }
        Self { center, scale, intercept_col }
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x.clone();
        for j in 0..x.ncols() {
            if Some(j) == self.intercept_col {
                continue;
            }
            for i in 0..x.nrows() {
                z[(i, j)] = (x[(i, j)] - self.center[j]) / self.scale[j];
            }
        }
        z
    }

    /// Maps coefficients on the standardized scale back to the raw scale.
    pub fn untransform(&self, b: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = b.iter().zip(&self.scale).map(|(b, s)| b / s).collect();
        if let Some(ic) = self.intercept_col {
            let shift: f64 = (0..b.len()).filter(|&j| j != ic).map(|j| out[j] * self.center[j]).sum();
            out[ic] -= shift;
        }
        out
    }
}

pub(crate) fn relative_change(old: &[f64], new: &[f64]) -> f64 {
    let diff = old.iter().zip(new).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let size = new.iter().map(|b| b.abs()).fold(0.0, f64::max);
    diff / size.max(1e-8)
}
