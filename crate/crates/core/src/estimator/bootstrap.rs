use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{impute_population_mean, rr_estimate, InfluenceContext, MeanFitSource, OutcomeModelSpec};
use crate::datamodel::{Individual, PopulationFrame};
use crate::exec::Exec;
use crate::rng::{self, tags};
use crate::special::{quantile_sorted, sample_variance};
use crate::{Error, Result};

/// Resamples drawn per replicate before giving up on a failing refit.
const MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapOptions {
    pub n_boot: usize,
    pub seed: u64,
    /// Refit the mean models on each resample with this recipe; `None`
    /// holds the context's models fixed.
    pub refit: Option<OutcomeModelSpec>,
    pub exec: Exec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub beta_hat: f64,
    /// 95% percentile interval.
    pub ci: [f64; 2],
    pub boot_var: f64,
    pub n_boot: usize,
    /// (imputation, first-phase augmentation, second-phase weighting).
    pub components: [f64; 3],
    pub seed: u64,
    /// Seed of each bootstrap replicate's random stream.
    pub seeds: Vec<u64>,
}

struct Prepared<'a> {
    first: Vec<&'a Individual>,
    lambda1: Vec<f64>,
    second: Vec<usize>,
    fit_rows: Vec<&'a Individual>,
}

fn replicate(
    ctx: &InfluenceContext,
    prep: &Prepared<'_>,
    refit: Option<&OutcomeModelSpec>,
    n: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    let ns = prep.second.len();
    let draw: Vec<usize> = (0..ns).map(|_| prep.second[rng.random_range(0..ns)]).collect();
    let (m0, m1) = match refit {
        None => (ctx.mean_w0.clone(), ctx.mean_w1.clone()),
        Some(spec) => {
            let rows: Vec<&Individual> = match spec.source {
                MeanFitSource::SecondPhase => draw.iter().map(|&i| prep.first[i]).collect(),
                MeanFitSource::Pilot => {
                    let np = prep.fit_rows.len();
                    (0..np).map(|_| prep.fit_rows[rng.random_range(0..np)]).collect()
                }
            };
            spec.fit_rows(&rows)?
        }
    };
    let imputation = impute_population_mean(&m0, &ctx.w0_source)?;
    let mut aug = 0.0;
    let mut m1s = Vec::with_capacity(prep.first.len());
    for (ind, l1) in prep.first.iter().zip(&prep.lambda1) {
        let w_bar = ind.w_bar().expect("first-phase rows carry w1");
        let p1 = m1.predict(&w_bar);
        aug += (p1 - m0.predict(&ind.w0)) / l1;
        m1s.push(p1);
    }
    let mut ipw = 0.0;
    for &i in &draw {
        let ind = prep.first[i];
        let y = ind.y.expect("checked outcomes");
        let l2 = ind.lambda2.expect("checked probabilities");
        ipw += (y - m1s[i]) / (prep.lambda1[i] * l2);
    }
    Ok(imputation + aug / n + ipw / n)
}

/// Nonparametric bootstrap of the RR estimate.
///
/// Each replicate resamples the second-phase rows with replacement and,
/// with `refit`, the rows the mean models were fitted on, then recomputes
/// the estimate with λ₁ and λ₂ held at their design values. Replicates use
/// seeds derived from `(seed, replicate)` and are independent of thread
/// count. A replicate whose refit fails is redrawn.
pub fn bootstrap_ci(
    ctx: &InfluenceContext,
    frame: &PopulationFrame,
    opts: &BootstrapOptions,
) -> Result<EstimateResult> {
    if opts.n_boot < 100 {
        return Err(Error::invalid(format!("n_boot = {} is below the minimum of 100", opts.n_boot)));
    }
    let point = rr_estimate(ctx, frame)?;
    let first: Vec<&Individual> = frame.first_phase().collect();
    let mut lambda1 = Vec::with_capacity(first.len());
    for ind in &first {
        lambda1.push(ctx.selection.evaluate(&ind.w0)?);
    }
    let second: Vec<usize> = first.iter().enumerate().filter(|(_, i)| i.r2).map(|(j, _)| j).collect();
    for &j in &second {
        if first[j].y.is_none() || first[j].lambda2.is_none() {
            return Err(Error::invalid(format!("second-phase individual {} lacks y or λ₂", first[j].id)));
        }
    }
    let fit_rows = match &opts.refit {
        Some(spec) => spec.rows(frame),
        None => Vec::new(),
    };
    if opts.refit.as_ref().is_some_and(|s| s.source == MeanFitSource::Pilot) && fit_rows.is_empty() {
        return Err(Error::invalid("refitting on the pilot needs pilot rows"));
    }
    let prep = Prepared { first, lambda1, second, fit_rows };
    let n = frame.n() as f64;
    let seeds: Vec<u64> = (0..opts.n_boot).map(|b| rng::derive_seed(opts.seed, tags::BOOTSTRAP, b as u64)).collect();
    let reps: Vec<Result<f64>> = opts.exec.map(opts.n_boot, |b| {
        let mut rng = rng::stream(opts.seed, tags::BOOTSTRAP, b as u64);
        let mut last = None;
        for _ in 0..MAX_RETRIES {
            match replicate(ctx, &prep, opts.refit.as_ref(), n, &mut rng) {
                Ok(v) => return Ok(v),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    });
    let mut values = reps.into_iter().collect::<Result<Vec<f64>>>()?;
    let boot_var = sample_variance(&values);
    values.sort_by(f64::total_cmp);
    Ok(EstimateResult {
        beta_hat: point.beta_hat,
        ci: [quantile_sorted(&values, 0.025), quantile_sorted(&values, 0.975)],
        boot_var,
        n_boot: opts.n_boot,
        components: point.components,
        seed: opts.seed,
        seeds,
    })
}
