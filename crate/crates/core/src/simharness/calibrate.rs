use rand_distr::{Distribution, Normal};

use crate::datamodel::NormalSpec;
use crate::rng::{self, tags};
use crate::{Error, Result};

/// Monte Carlo draws behind a PVE evaluation.
pub const PVE_DRAWS: usize = 100_000;

const INTERCEPT_RANGE: (f64, f64) = (-20.0, 5.0);

/// E[exp(γ₀W₀ + γ₁W₀² + γ₂W₁ + γ₃W₁²)] by Monte Carlo, i.e. E[Var(Y | W̄₁)]
/// with a zero variance intercept.
fn variance_shape_mean(gamma: &[f64; 5], w0: NormalSpec, w1: NormalSpec, seed: u64) -> Result<f64> {
    let d0 = Normal::new(w0.mean, w0.sd).map_err(|e| Error::Config(e.to_string()))?;
    let d1 = Normal::new(w1.mean, w1.sd).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = rng::stream(seed, tags::CALIBRATION, 0);
    let mut s = 0.0;
    for _ in 0..PVE_DRAWS {
        let a: f64 = d0.sample(&mut rng);
        let b: f64 = d1.sample(&mut rng);
        s += (gamma[1] * a + gamma[2] * a * a + gamma[3] * b + gamma[4] * b * b).exp();
    }
    Ok(s / PVE_DRAWS as f64)
}

fn pve_from(alpha: &[f64; 3], w0: NormalSpec, w1: NormalSpec, mean_var: f64) -> f64 {
    let explained = alpha[1] * alpha[1] * w0.sd * w0.sd;
    explained / (explained + alpha[2] * alpha[2] * w1.sd * w1.sd + mean_var)
}

/// Var[E(Y|W₀)] / Var(Y) for the simulation world, with E[Var(Y | W̄₁)]
/// estimated from 10⁵ draws.
pub fn population_pve(alpha: &[f64; 3], gamma: &[f64; 5], w0: NormalSpec, w1: NormalSpec, seed: u64) -> Result<f64> {
    let m = variance_shape_mean(gamma, w0, w1, seed)?;
    Ok(pve_from(alpha, w0, w1, gamma[0].exp() * m))
}

/// Variance coefficients with the slope terms of `base_gamma` and the
/// intercept found by bisection on [−20, 5] so that the population PVE
/// equals `pve_target`.
pub fn calibrate_gamma(
    pve_target: f64,
    alpha: &[f64; 3],
    base_gamma: &[f64; 5],
    w0: NormalSpec,
    w1: NormalSpec,
    seed: u64,
) -> Result<[f64; 5]> {
    if !(pve_target > 0.0 && pve_target < 1.0) {
        return Err(Error::Config(format!("PVE target {pve_target} must lie in (0, 1)")));
    }
    let m = variance_shape_mean(base_gamma, w0, w1, seed)?;
    let pve = |c: f64| pve_from(alpha, w0, w1, c.exp() * m);
    let (mut lo, mut hi) = INTERCEPT_RANGE;
    if !(pve(lo) >= pve_target && pve(hi) <= pve_target) {
        return Err(Error::Config(format!(
            "PVE {pve_target} unreachable with variance intercept in [{lo}, {hi}] (range {:.4} to {:.4})",
            pve(hi),
            pve(lo)
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if pve(mid) > pve_target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let mut gamma = *base_gamma;
    gamma[0] = 0.5 * (lo + hi);
    Ok(gamma)
}
