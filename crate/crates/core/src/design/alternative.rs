use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{optimal_lambda2, DesignInputs, DesignSolution};
use crate::datamodel::{W0Distribution, W0Source};
use crate::rng::{self, tags};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlternativeOptions {
    /// Size n_e′ of the representative subsample.
    pub n_e_prime: usize,
    /// Quantile cells per W₀ coordinate.
    pub cells_per_dim: usize,
    pub seed: u64,
}

/// One W₀ cell of the stratified subsample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetCell {
    /// Cell position along each W₀ coordinate.
    pub index: Vec<usize>,
    pub target_prob: f64,
    pub available: usize,
    pub allocated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternativeDesign {
    /// Ids of the first-phase rows kept in the representative subsample.
    pub subsample_ids: Vec<u64>,
    pub cells: Vec<TargetCell>,
    /// Inputs restricted to the subsample with λ₁′ = n_e′/n.
    pub inputs: DesignInputs,
    pub solution: DesignSolution,
    /// Variance relative to random sampling from the original first phase.
    pub relative_efficiency: Option<f64>,
}

/// Weighted target points, or an analytic normal target.
enum Target {
    Points { points: Vec<Vec<f64>>, weights: Vec<f64> },
    Normal { means: Vec<f64>, sds: Vec<f64> },
}

fn target_of(source: &W0Source) -> Result<Target> {
    source.validate()?;
    Ok(match source {
        W0Source::IndividualLevel { w0 } => Target::Points { weights: vec![1.0; w0.len()], points: w0.clone() },
        W0Source::ExternalProbabilitySample { records } => Target::Points {
            points: records.iter().map(|r| r.w0.clone()).collect(),
            weights: records.iter().map(|r| 1.0 / r.samp_prob).collect(),
        },
        W0Source::KnownDistribution { distribution } => match distribution {
            W0Distribution::Discrete { points, probs } => {
                Target::Points { points: points.clone(), weights: probs.clone() }
            }
            W0Distribution::Normal { means, sds } => Target::Normal { means: means.clone(), sds: sds.clone() },
        },
    })
}

fn weighted_quantile(mut pairs: Vec<(f64, f64)>, q: f64) -> f64 {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for (x, w) in &pairs {
        acc += w;
        if acc >= q * total {
            return *x;
        }
    }
    pairs.last().map_or(0.0, |p| p.0)
}

fn cell_of(x: &[f64], bounds: &[Vec<f64>]) -> Vec<usize> {
    x.iter().zip(bounds).map(|(&v, b)| b.partition_point(|&c| c < v)).collect()
}

fn linear_index(idx: &[usize], sizes: &[usize]) -> usize {
    idx.iter().zip(sizes).fold(0, |acc, (&i, &s)| acc * s + i)
}

/// Representative subsample of the first phase and its optimal design.
///
/// W₀ is cut into quantile cells of the target distribution; each cell
/// receives its largest-remainder share of n_e′ rows, drawn at random from
/// the first-phase rows in that cell. The subsample is then treated as a
/// random sample with constant λ₁′ = n_e′/n.
pub fn alternative_design(
    inputs: &DesignInputs,
    target: &W0Source,
    opts: &AlternativeOptions,
) -> Result<AlternativeDesign> {
    let ne_p = opts.n_e_prime;
    if ne_p == 0 || ne_p > inputs.n_e {
        return Err(Error::invalid(format!("n_e' = {ne_p} must lie in 1..={}", inputs.n_e)));
    }
    if opts.cells_per_dim == 0 {
        return Err(Error::invalid("need at least one cell per W0 coordinate"));
    }
    if inputs.support.iter().any(|s| s.id.is_none()) {
        return Err(Error::invalid("alternative design needs first-phase rows with ids"));
    }
    let k = inputs.support[0].w0.len();
    let m = opts.cells_per_dim;
    let target = target_of(target)?;
    let quantiles: Vec<f64> = (1..m).map(|j| j as f64 / m as f64).collect();
    let bounds: Vec<Vec<f64>> = match &target {
        Target::Points { points, weights } => (0..k)
            .map(|d| {
                let mut b: Vec<f64> = quantiles
                    .iter()
                    .map(|&q| weighted_quantile(points.iter().map(|p| p[d]).zip(weights.iter().copied()).collect(), q))
                    .collect();
                b.dedup();
                b
            })
            .collect(),
        Target::Normal { means, sds } => {
            if means.len() != k {
                return Err(Error::invalid("target normal dimension differs from W0"));
            }
            means
                .iter()
                .zip(sds)
                .map(|(&mu, &sd)| {
                    let nd = Normal::new(mu, sd).map_err(|e| Error::Config(e.to_string()))?;
                    Ok(quantiles.iter().map(|&q| nd.inverse_cdf(q)).collect())
                })
                .collect::<Result<_>>()?
        }
    };
    let sizes: Vec<usize> = bounds.iter().map(|b| b.len() + 1).collect();
    let n_cells: usize = sizes.iter().product();

    let mut probs = vec![0.0; n_cells];
    match &target {
        Target::Points { points, weights } => {
            let total: f64 = weights.iter().sum();
            for (p, w) in points.iter().zip(weights) {
                if p.len() != k {
                    return Err(Error::invalid("target W0 dimension differs from first phase"));
                }
                probs[linear_index(&cell_of(p, &bounds), &sizes)] += w / total;
            }
        }
        Target::Normal { means, sds } => {
            for (c, prob) in probs.iter_mut().enumerate() {
                let mut rem = c;
                let mut idx = vec![0; k];
                for d in (0..k).rev() {
                    idx[d] = rem % sizes[d];
                    rem /= sizes[d];
                }
                *prob = idx
                    .iter()
                    .enumerate()
                    .map(|(d, &i)| {
                        let nd = Normal::new(means[d], sds[d]).expect("validated normal");
                        let hi = bounds[d].get(i).map_or(1.0, |&b| nd.cdf(b));
                        let lo = if i == 0 { 0.0 } else { nd.cdf(bounds[d][i - 1]) };
                        hi - lo
                    })
                    .product();
            }
        }
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_cells];
    for (i, s) in inputs.support.iter().enumerate() {
        members[linear_index(&cell_of(&s.w0, &bounds), &sizes)].push(i);
    }
    let exact: Vec<f64> = probs.iter().map(|p| p * ne_p as f64).collect();
    let mut alloc: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = ne_p - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..n_cells).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &c in &order {
        if rest == 0 {
            break;
        }
        alloc[c] += 1;
        rest -= 1;
    }

    let unravel = |c: usize| {
        let mut rem = c;
        let mut idx = vec![0; k];
        for d in (0..k).rev() {
            idx[d] = rem % sizes[d];
            rem /= sizes[d];
        }
        idx
    };
    let empty: Vec<Vec<usize>> =
        (0..n_cells).filter(|&c| probs[c] > 0.0 && members[c].is_empty()).map(unravel).collect();
    if !empty.is_empty() {
        return Err(Error::invalid(format!("target W0 cells with no first-phase rows: {empty:?}")));
    }
    if let Some(c) = (0..n_cells).find(|&c| alloc[c] > members[c].len()) {
        return Err(Error::invalid(format!(
            "cell {:?} needs {} rows but the first phase has {}; reduce n_e'",
            unravel(c),
            alloc[c],
            members[c].len()
        )));
    }

    let lambda1 = ne_p as f64 / inputs.n as f64;
    let mut chosen = Vec::with_capacity(ne_p);
    let mut cells = Vec::with_capacity(n_cells);
    for c in 0..n_cells {
        let mut rng = rng::stream(opts.seed, tags::SUBSAMPLE, c as u64);
        let picks = sample(&mut rng, members[c].len(), alloc[c]);
        let mut idx: Vec<usize> = picks.iter().map(|j| members[c][j]).collect();
        idx.sort_unstable();
        chosen.extend(idx);
        cells.push(TargetCell {
            index: unravel(c),
            target_prob: probs[c],
            available: members[c].len(),
            allocated: alloc[c],
        });
    }
    chosen.sort_unstable();
    let support = chosen
        .iter()
        .map(|&i| {
            let mut s = inputs.support[i].clone();
            s.prob = 1.0 / ne_p as f64;
            s.lambda1 = lambda1;
            s
        })
        .collect();
    let sub_inputs = DesignInputs::new(support, inputs.cost.clone(), inputs.n, ne_p, inputs.moments)?;
    let solution = optimal_lambda2(&sub_inputs)?;
    let relative_efficiency = match inputs.moments {
        Some(mo) => Some(relative_efficiency_alternative(inputs, ne_p, mo.var_y, mo.pve)?),
        None => None,
    };
    Ok(AlternativeDesign {
        subsample_ids: chosen.iter().map(|&i| inputs.support[i].id.expect("checked ids")).collect(),
        cells,
        inputs: sub_inputs,
        solution,
        relative_efficiency,
    })
}

/// Variance of the optimal design on a representative subsample of size
/// n_e′ (constant λ₁′ = n_e′/n) relative to random second-phase sampling
/// from the original first phase, with expectations over `inputs.support`:
/// [PVE·Var(Y) + E[v₁]/λ₁′ + (n/K′)·E[√(C₂v₂)]²] / [PVE·Var(Y) + E[v₁/λ₁] + (n/K)·E[C₂]·E[v₂]].
pub fn relative_efficiency_alternative(inputs: &DesignInputs, n_e_prime: usize, var_y: f64, pve: f64) -> Result<f64> {
    let k = inputs.second_phase_budget();
    let k_prime = inputs.cost.second_phase_budget(n_e_prime);
    if !(k > 0.0 && k_prime > 0.0) {
        return Err(Error::Infeasible { reason: "first phase consumes the budget".into() });
    }
    let lambda1p = n_e_prime as f64 / inputs.n as f64;
    let sup = &inputs.support;
    let n = inputs.n as f64;
    let ev1: f64 = sup.iter().map(|s| s.prob * s.v1).sum();
    let e_prime: f64 = sup.iter().map(|s| s.prob * s.v1 / s.lambda1).sum();
    let e: f64 = sup.iter().map(|s| s.prob * (s.c2 * s.v2).sqrt()).sum();
    let ec2: f64 = sup.iter().map(|s| s.prob * s.c2).sum();
    let ev2: f64 = sup.iter().map(|s| s.prob * s.v2).sum();
    let num = pve * var_y + ev1 / lambda1p + n / k_prime * e * e;
    let den = pve * var_y + e_prime + n / k * ec2 * ev2;
    if !(den > 0.0) {
        return Err(Error::Numerical("relative efficiency denominator is not positive".into()));
    }
    Ok(num / den)
}
