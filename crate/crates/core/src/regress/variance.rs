use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{relative_change, Convergence, DesignSpec, MeanModelFit, Term};
use crate::linalg::solve_spd;
use crate::{Error, Result};

/// Bound on the log-variance linear predictor.
pub const MAX_LINEAR_PREDICTOR: f64 = 700.0;

#[derive(Debug, Clone, Default)]
pub struct VarianceFitOptions {
    /// Degrees-of-freedom correction: squared residuals are inflated by
    /// n / (n − p) where p is the number of mean-model coefficients.
    pub reml: bool,
    pub control: Convergence,
}

/// A fitted log-linear variance model, Var(Y | x) = exp(xᵀγ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceModelFit {
    pub design_spec: DesignSpec,
    pub coefficients: Vec<f64>,
    pub reml: bool,
    pub converged: bool,
    pub iterations: usize,
}

impl VarianceModelFit {
    pub fn from_coefficients(design_spec: DesignSpec, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != design_spec.n_terms() {
            return Err(Error::invalid("coefficient count does not match design"));
        }
        Ok(Self { design_spec, coefficients, reml: false, converged: true, iterations: 0 })
    }

    #[inline]
    pub fn predict(&self, raw: &[f64]) -> f64 {
        let eta = self.design_spec.linear_predictor(&self.coefficients, raw);
        eta.clamp(-MAX_LINEAR_PREDICTOR, MAX_LINEAR_PREDICTOR).exp()
    }
}

/// Gaussian log-likelihood of residuals `r` under log-variance `eta`, up to
/// a constant: −½ Σ (ηᵢ + rᵢ² e^{−ηᵢ}).
pub fn variance_log_likelihood(eta: &[f64], sq_resid: &[f64]) -> f64 {
    -0.5 * eta.iter().zip(sq_resid).map(|(e, z)| e + z * (-e).exp()).sum::<f64>()
}

fn clipped_eta(xm: &DMatrix<f64>, g: &DVector<f64>, warned: &mut bool) -> Vec<f64> {
    (xm * g)
        .iter()
        .map(|&e| {
            if e.abs() > MAX_LINEAR_PREDICTOR && !*warned {
                log::warn!("variance linear predictor {e:.1} clipped to ±{MAX_LINEAR_PREDICTOR}");
                *warned = true;
            }
            e.clamp(-MAX_LINEAR_PREDICTOR, MAX_LINEAR_PREDICTOR)
        })
        .collect()
}

/// Fits a log-linear variance model to the residuals of `mean_fit` by
/// Fisher scoring on the Gaussian likelihood (equivalently a gamma GLM with
/// log link on squared residuals), with step halving.
pub fn fit_variance(
    x: &[Vec<f64>],
    y: &[f64],
    mean_fit: &MeanModelFit,
    spec: &DesignSpec,
    opts: &VarianceFitOptions,
) -> Result<VarianceModelFit> {
    let n = x.len();
    let p = spec.n_terms();
    if n != y.len() {
        return Err(Error::invalid("covariate and response lengths differ"));
    }
    if n <= p.max(mean_fit.design_spec.n_terms()) {
        return Err(Error::invalid(format!("too few rows ({n}) for the variance model")));
    }
    let p_mean = mean_fit.design_spec.n_terms() as f64;
    let inflate = if opts.reml { n as f64 / (n as f64 - p_mean) } else { 1.0 };
    let z: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| {
            let r = yi - mean_fit.predict(xi);
            r * r * inflate
        })
        .collect();
    let mean_z = z.iter().sum::<f64>() / n as f64;
    if !(mean_z > 0.0) || !mean_z.is_finite() {
        return Err(Error::Numerical("residuals are identically zero".into()));
    }

    let xm = spec.matrix(x)?;
    let xtx = xm.transpose() * &xm;
    let mut g = DVector::zeros(p);
    if let Some(ic) = spec.terms.iter().position(|t| *t == Term::Intercept) {
        g[ic] = mean_z.ln();
    }
    let mut warned = false;
    let mut eta = clipped_eta(&xm, &g, &mut warned);
    let mut ll = variance_log_likelihood(&eta, &z);
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.control.max_iter {
        iterations += 1;
        let work = DVector::from_iterator(n, eta.iter().zip(&z).map(|(e, zi)| zi * (-e).exp() - 1.0));
        let step = solve_spd(&xtx, &(xm.transpose() * work))?;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let cand = &g + &step * t;
            let cand_eta = clipped_eta(&xm, &cand, &mut warned);
            let cand_ll = variance_log_likelihood(&cand_eta, &z);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-10 * (1.0 + ll.abs()) {
                accepted = Some((cand, cand_eta, cand_ll));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, cand_eta, cand_ll)) = accepted else {
            break;
        };
        let change = relative_change(g.as_slice(), cand.as_slice());
        g = cand;
        eta = cand_eta;
        ll = cand_ll;
        if change < opts.control.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("variance model did not converge after {iterations} iterations");
    }
    Ok(VarianceModelFit {
        design_spec: spec.clone(),
        coefficients: g.iter().copied().collect(),
        reml: opts.reml,
        converged,
        iterations,
    })
}
