use nalgebra::{DMatrix, DVector};

use super::{relative_change, Convergence, DesignSpec, Family, GlmFit, Standardizer, Term};
use crate::linalg::solve_spd;
use crate::special::{digamma, expit, ln_gamma, logit, trigamma};
use crate::{Error, Result};

const PHI_MIN: f64 = 1e-3;
const PHI_MAX: f64 = 1e8;

#[derive(Debug, Clone, Default)]
pub struct BetaOptions {
    /// Map responses through (y(n−1) + 0.5)/n so that exact 0s and 1s
    /// become admissible.
    pub compress: bool,
    pub control: Convergence,
}

fn ll_terms(eta: &DVector<f64>, y: &[f64], phi: f64) -> f64 {
    let lg_phi = ln_gamma(phi);
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| {
            let mu = expit(e);
            let a = mu * phi;
            let b = (1.0 - mu) * phi;
            lg_phi - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * yi.ln() + (b - 1.0) * (1.0 - yi).ln()
        })
        .sum()
}

/// Beta log-likelihood at mean coefficients `b` and precision `phi`.
pub fn beta_log_likelihood(x: &[Vec<f64>], y: &[f64], spec: &DesignSpec, b: &[f64], phi: f64) -> Result<f64> {
    let xm = spec.matrix(x)?;
    Ok(ll_terms(&(xm * DVector::from_column_slice(b)), y, phi))
}

/// Beta regression with logit mean link and constant precision φ, fitted by
/// Fisher scoring on (b, log φ) with step halving.
///
/// A response with no spread drives φ to infinity; φ is capped at 1e8 and
/// the fit is then flagged as not converged.
pub fn fit_beta(x: &[Vec<f64>], y: &[f64], spec: &DesignSpec, opts: &BetaOptions) -> Result<GlmFit> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::invalid("covariate and response lengths differ"));
    }
    if n == 0 {
        return Err(Error::invalid("beta regression needs at least one row"));
    }
    let y: Vec<f64> =
        if opts.compress { y.iter().map(|v| (v * (n as f64 - 1.0) + 0.5) / n as f64).collect() } else { y.to_vec() };
    if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::invalid(format!(
            "beta response {v} at row {} is outside (0, 1); enable compression to map boundary values inward",
            i + 1
        )));
    }
    let raw = spec.matrix(x)?;
    let std = Standardizer::new(spec, &raw);
    let xm = std.transform(&raw);
    let p = spec.n_terms();

    let ystar: Vec<f64> = y.iter().map(|&v| logit(v)).collect();
    let mut b =
        crate::linalg::weighted_least_squares(&xm, &DVector::from_column_slice(&ystar), None, &spec.column_names())?;
    let eta0 = &xm * &b;
    let (mut s2, mut mbar) = (0.0, 0.0);
    for (e, yi) in eta0.iter().zip(&y) {
        let mu = expit(*e);
        mbar += mu * (1.0 - mu);
        s2 += (yi - mu) * (yi - mu);
    }
    let phi0 = if s2 > 0.0 { (mbar / s2) - 1.0 } else { PHI_MAX };
    let mut theta = phi0.clamp(1.0, PHI_MAX).ln();
    let (lo, hi) = (PHI_MIN.ln(), PHI_MAX.ln());

    let objective = |b: &DVector<f64>, theta: f64| ll_terms(&(&xm * b), &y, theta.exp());
    let mut ll = objective(&b, theta);
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.control.max_iter {
        iterations += 1;
        let phi = theta.exp();
        let eta = &xm * &b;
        let mut score = DVector::zeros(p + 1);
        let mut info = DMatrix::zeros(p + 1, p + 1);
        let psi_phi = digamma(phi);
        let tri_phi = trigamma(phi);
        let mut kthth = 0.0;
        for i in 0..n {
            let mu = expit(eta[i]);
            let dmu = mu * (1.0 - mu);
            let a = mu * phi;
            let bb = (1.0 - mu) * phi;
            let (pa, pb) = (digamma(a), digamma(bb));
            let (ta, tb) = (trigamma(a), trigamma(bb));
            let resid = ystar[i] - (pa - pb);
            let row = xm.row(i);
            let sb = phi * resid * dmu;
            let sphi = mu * resid + (1.0 - y[i]).ln() - pb + psi_phi;
            for j in 0..p {
                score[j] += sb * row[j];
            }
            score[p] += phi * sphi;
            let w = phi * (ta + tb) * dmu * dmu;
            let c = phi * (ta * mu - tb * (1.0 - mu));
            let d = ta * mu * mu + tb * (1.0 - mu) * (1.0 - mu) - tri_phi;
            for j in 0..p {
                for k in 0..p {
                    info[(j, k)] += phi * w * row[j] * row[k];
                }
                info[(j, p)] += phi * dmu * c * row[j];
            }
            kthth += phi * phi * d;
        }
        for j in 0..p {
            info[(p, j)] = info[(j, p)];
        }
        info[(p, p)] = kthth;
        let step = match solve_spd(&info, &score) {
            Ok(s) => s,
            Err(_) => break,
        };
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..50 {
            let cb = &b + step.rows(0, p) * t;
            let ct = (theta + t * step[p]).clamp(lo, hi);
            let cll = objective(&cb, ct);
            if cll.is_finite() && cll >= ll - 1e-10 * (1.0 + ll.abs()) {
                next = Some((cb, ct, cll));
                break;
            }
            t *= 0.5;
        }
        let Some((cb, ct, cll)) = next else { break };
        let mut old: Vec<f64> = b.iter().copied().collect();
        old.push(theta);
        let mut new: Vec<f64> = cb.iter().copied().collect();
        new.push(ct);
        let change = relative_change(&old, &new);
        b = cb;
        theta = ct;
        ll = cll;
        if theta >= hi {
            break;
        }
        if change < opts.control.tol {
            converged = true;
            break;
        }
    }
    if theta >= hi {
        log::warn!("beta regression precision reached the cap {PHI_MAX:e}; responses show almost no spread");
        converged = false;
        if !spec.terms.contains(&Term::Intercept) {
            log::warn!("beta regression without intercept on a degenerate response");
        }
    } else if !converged {
        log::warn!("beta regression did not converge after {iterations} iterations");
    }
    let bs: Vec<f64> = b.iter().copied().collect();
    Ok(GlmFit {
        family: Family::Beta,
        design_spec: spec.clone(),
        coefficients: std.untransform(&bs),
        dispersion: Some(theta.exp()),
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_response_recovers_mean() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64]).collect();
        let y = vec![0.25; 50];
        let spec = DesignSpec::intercept_only(vec!["x".into()]);
        let fit = fit_beta(&x, &y, &spec, &BetaOptions::default()).unwrap();
        assert!((fit.predict(&[0.0]) - 0.25).abs() < 1e-6);
        assert!(fit.dispersion.unwrap() > 0.0);
    }

    #[test]
    fn boundary_needs_compression() {
        let x: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let y = [0.0, 0.3, 0.5, 1.0];
        let spec = DesignSpec::intercept_only(vec!["x".into()]);
        assert!(fit_beta(&x, &y, &spec, &BetaOptions::default()).is_err());
        let opts = BetaOptions { compress: true, ..Default::default() };
        assert!(fit_beta(&x, &y, &spec, &opts).is_ok());
    }
}
