use serde::{Deserialize, Serialize};

use super::{Approach, StudyResult};
use crate::{Error, Result};

/// Minimum successful replications per approach for a comparison.
pub const MIN_REPLICATIONS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReRow {
    pub numerator: Approach,
    pub denominator: Approach,
    /// Ratio of Monte Carlo variances.
    pub ratio: f64,
    /// Delete-one-replication jackknife standard error of the ratio.
    pub jackknife_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReTable {
    pub rows: Vec<ReRow>,
}

impl ReTable {
    pub fn get(&self, numerator: Approach, denominator: Approach) -> Option<&ReRow> {
        self.rows.iter().find(|r| r.numerator == numerator && r.denominator == denominator)
    }
}

/// Per-approach successful estimates keyed by replication, centered for
/// stable leave-one-out variances.
struct Series {
    values: Vec<Option<f64>>,
    m: usize,
    s1: f64,
    s2: f64,
}

impl Series {
    fn new(result: &StudyResult, approach: Approach) -> Self {
        let mut values = vec![None; result.n_reps];
        for r in result.records.iter().filter(|r| r.approach == approach) {
            values[r.rep] = r.beta_hat;
        }
        let present: Vec<f64> = values.iter().flatten().copied().collect();
        let center = present.iter().sum::<f64>() / present.len().max(1) as f64;
        for v in values.iter_mut().flatten() {
            *v -= center;
        }
        let s1 = values.iter().flatten().sum();
        let s2 = values.iter().flatten().map(|v| v * v).sum();
        Self { values, m: present.len(), s1, s2 }
    }

    fn var(&self) -> f64 {
        let m = self.m as f64;
        (self.s2 - self.s1 * self.s1 / m) / (m - 1.0)
    }

    fn var_without(&self, rep: usize) -> f64 {
        match self.values[rep] {
            None => self.var(),
            Some(x) => {
                let m = self.m as f64 - 1.0;
                let s1 = self.s1 - x;
                ((self.s2 - x * x) - s1 * s1 / m) / (m - 1.0)
            }
        }
    }
}

fn ratio_row(result: &StudyResult, a: Approach, b: Approach) -> Result<ReRow> {
    let sa = Series::new(result, a);
    let sb = Series::new(result, b);
    let vb = sb.var();
    if !(vb > 0.0) {
        return Err(Error::Numerical(format!("approach {b} has zero Monte Carlo variance")));
    }
    let ratio = sa.var() / vb;
    let reps: Vec<usize> = (0..result.n_reps).filter(|&r| sa.values[r].is_some() || sb.values[r].is_some()).collect();
    let loo: Vec<f64> = reps.iter().map(|&r| sa.var_without(r) / sb.var_without(r)).collect();
    let k = loo.len() as f64;
    let mean = loo.iter().sum::<f64>() / k;
    let se = ((k - 1.0) / k * loo.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>()).sqrt();
    Ok(ReRow { numerator: a, denominator: b, ratio, jackknife_se: se })
}

/// Relative efficiencies: every approach against approach 1, and each
/// optimal approach against approach 2, with jackknife standard errors.
pub fn compare_designs(result: &StudyResult) -> Result<ReTable> {
    let ok: Vec<Approach> =
        result.config.approaches.iter().copied().filter(|&a| result.estimates(a).len() >= MIN_REPLICATIONS).collect();
    if ok.len() < 2 {
        return Err(Error::invalid(format!(
            "comparison needs two approaches with at least {MIN_REPLICATIONS} successful replications"
        )));
    }
    let mut rows = Vec::new();
    if ok.contains(&Approach::A1) {
        for &a in &ok {
            rows.push(ratio_row(result, a, Approach::A1)?);
        }
    }
    if ok.contains(&Approach::A2) {
        for &a in ok.iter().filter(|a| a.is_optimal()) {
            rows.push(ratio_row(result, a, Approach::A2)?);
        }
    }
    if rows.is_empty() {
        let (a, b) = (ok[1], ok[0]);
        rows.push(ratio_row(result, a, b)?);
    }
    Ok(ReTable { rows })
}
