use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{relative_change, Convergence, DesignSpec};
use crate::linalg::weighted_least_squares;
use crate::{Error, Result};

/// Huber tuning constant (95% efficiency at the normal).
pub const HUBER_K: f64 = 1.345;

#[derive(Debug, Clone, Default)]
pub struct MeanFitOptions {
    /// Downweight outliers with Huber weights by IRLS.
    pub robust: bool,
    /// Optional case weights (e.g. inverse inclusion probabilities).
    pub weights: Option<Vec<f64>>,
    pub control: Convergence,
}

/// A fitted linear conditional-mean model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanModelFit {
    pub design_spec: DesignSpec,
    pub coefficients: Vec<f64>,
    pub robust: bool,
    pub converged: bool,
    pub iterations: usize,
}

impl MeanModelFit {
    /// Wraps known coefficients, e.g. a true or deliberately wrong model.
    pub fn from_coefficients(design_spec: DesignSpec, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != design_spec.n_terms() {
            return Err(Error::invalid("coefficient count does not match design"));
        }
        Ok(Self { design_spec, coefficients, robust: false, converged: true, iterations: 0 })
    }

    #[inline]
    pub fn predict(&self, raw: &[f64]) -> f64 {
        self.design_spec.linear_predictor(&self.coefficients, raw)
    }
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Least-squares fit of `y` on the design expansion of `x`.
///
/// With `robust`, Huber M-estimation by IRLS: residual scale is the
/// normalized MAD of the current residuals and weights are
/// min(1, k·s/|r|).
pub fn fit_mean(x: &[Vec<f64>], y: &[f64], spec: &DesignSpec, opts: &MeanFitOptions) -> Result<MeanModelFit> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::invalid("covariate and response lengths differ"));
    }
    if n < spec.n_terms() + 1 {
        return Err(Error::invalid(format!(
            "need at least {} rows to fit {} coefficients, got {n}",
            spec.n_terms() + 1,
            spec.n_terms()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite response"));
    }
    if let Some(w) = &opts.weights {
        if w.len() != n || w.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::invalid("case weights must be positive, one per row"));
        }
    }
    let xm = spec.matrix(x)?;
    let yv = DVector::from_column_slice(y);
    let names = spec.column_names();
    let base_w: Vec<f64> = opts.weights.clone().unwrap_or_else(|| vec![1.0; n]);
    let mut b = weighted_least_squares(&xm, &yv, opts.weights.as_deref(), &names)?;
    if !opts.robust {
        return Ok(MeanModelFit {
            design_spec: spec.clone(),
            coefficients: b.iter().copied().collect(),
            robust: false,
            converged: true,
            iterations: 1,
        });
    }

    let mut converged = false;
    let mut iterations = 1;
    for _ in 0..opts.control.max_iter {
        iterations += 1;
        let resid: Vec<f64> = (&yv - &xm * &b).iter().copied().collect();
        let mut abs_dev: Vec<f64> = {
            let mut r = resid.clone();
            let med = median(&mut r);
            resid.iter().map(|v| (v - med).abs()).collect()
        };
        let scale = median(&mut abs_dev) / 0.6745;
        if scale <= f64::EPSILON * (1.0 + b.amax()) {
            converged = true;
            break;
        }
        let w: Vec<f64> = resid
            .iter()
            .zip(&base_w)
            .map(|(r, bw)| {
                let u = (r / scale).abs();
                bw * if u <= HUBER_K { 1.0 } else { HUBER_K / u }
            })
            .collect();
        let next = weighted_least_squares(&xm, &yv, Some(&w), &names)?;
        let change = relative_change(b.as_slice(), next.as_slice());
        b = next;
        if change < opts.control.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("robust mean fit did not converge in {} iterations", opts.control.max_iter);
    }
    Ok(MeanModelFit {
        design_spec: spec.clone(),
        coefficients: b.iter().copied().collect(),
        robust: true,
        converged,
        iterations,
    })
}
