use nalgebra::{DMatrix, DVector};

use super::{relative_change, Convergence, DesignSpec, Family, GlmFit, Standardizer};
use crate::linalg::solve_spd;
use crate::special::expit;
use crate::{Error, Result};

/// Coefficient norm on the standardized scale beyond which the likelihood is
/// judged monotone (separated data).
const SEPARATION_NORM: f64 = 30.0;

/// Σ yᵢ ηᵢ − log(1 + e^{ηᵢ}) for a design matrix and coefficients.
pub fn logistic_log_likelihood(xm: &DMatrix<f64>, y: &[f64], b: &[f64]) -> f64 {
    let bv = DVector::from_column_slice(b);
    let eta = xm * bv;
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| {
            let log1pexp = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            yi * e - log1pexp
        })
        .sum()
}

/// Logistic regression by Newton–Raphson (IRLS) with step halving.
pub fn fit_logistic(x: &[Vec<f64>], y: &[bool], spec: &DesignSpec, control: &Convergence) -> Result<GlmFit> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::invalid("covariate and response lengths differ"));
    }
    let ones = y.iter().filter(|&&v| v).count();
    if ones == 0 || ones == n {
        return Err(Error::invalid(format!("logistic regression needs both classes; got {ones} of {n} positive")));
    }
    let raw = spec.matrix(x)?;
    let std = Standardizer::new(spec, &raw);
    let xm = std.transform(&raw);
    let yf: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let p = spec.n_terms();
    let mut b = vec![0.0; p];
    if let Some(ic) = spec.terms.iter().position(|t| *t == super::Term::Intercept) {
        let ybar = ones as f64 / n as f64;
        b[ic] = (ybar / (1.0 - ybar)).ln();
    }
    let mut ll = logistic_log_likelihood(&xm, &yf, &b);
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..control.max_iter {
        iterations += 1;
        let eta = &xm * DVector::from_column_slice(&b);
        let mu: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
        let score = xm.transpose() * DVector::from_iterator(n, yf.iter().zip(&mu).map(|(y, m)| y - m));
        let mut info = DMatrix::zeros(p, p);
        for (i, m) in mu.iter().enumerate() {
            let w = m * (1.0 - m);
            let row = xm.row(i);
            info += w * row.transpose() * row;
        }
        let step = solve_spd(&info, &score)?;
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..50 {
            let cand: Vec<f64> = b.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let cand_ll = logistic_log_likelihood(&xm, &yf, &cand);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-10 * (1.0 + ll.abs()) {
                next = Some((cand, cand_ll));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, cand_ll)) = next else { break };
        let change = relative_change(&b, &cand);
        b = cand;
        ll = cand_ll;
        let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > SEPARATION_NORM {
            return Err(Error::Separation { norm });
        }
        if change < control.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("logistic regression did not converge after {iterations} iterations");
    }
    Ok(GlmFit {
        family: Family::Logistic,
        design_spec: spec.clone(),
        coefficients: std.untransform(&b),
        dispersion: None,
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfectly_separated_data_is_rejected() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let spec = DesignSpec::linear(vec!["x".into()]);
        assert!(matches!(fit_logistic(&x, &y, &spec, &Convergence::default()), Err(Error::Separation { .. })));
    }

    #[test]
    fn single_class_is_rejected() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let spec = DesignSpec::linear(vec!["x".into()]);
        assert!(fit_logistic(&x, &[true; 5], &spec, &Convergence::default()).is_err());
    }
}
