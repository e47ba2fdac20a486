#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twophase::datamodel::{CostModel, OutcomeCost};
use twophase::design::{DesignInputs, OutcomeMoments, SupportPoint};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shape of a random design instance.
pub struct InstanceSpec {
    pub size: usize,
    /// Fraction of the largest admissible second-phase budget to spend;
    /// below 1 the optimal rule stays inside (0, 1].
    pub budget_fraction: f64,
    pub constant_v2_c2: bool,
    pub constant_v1: bool,
}

/// A random discrete-support instance whose second-phase budget is
/// `budget_fraction` of the largest one the closed form can absorb.
pub fn random_instance(r: &mut impl Rng, spec: &InstanceSpec) -> DesignInputs {
    let k = spec.size;
    let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let v1 = r.random_range(0.0..2.0);
    let (cv, cc) = (r.random_range(0.5..5.0), r.random_range(0.5..5.0));
    let support: Vec<SupportPoint> = (0..k)
        .map(|i| SupportPoint {
            id: Some(i as u64),
            w0: vec![i as f64],
            w1: vec![r.random_range(-1.0..1.0)],
            prob: raw[i] / total,
            lambda1: r.random_range(0.05..1.0),
            v1: if spec.constant_v1 { v1 } else { r.random_range(0.0..2.0) },
            v2: if spec.constant_v2_c2 { cv } else { r.random_range(0.1..10.0) },
            c2: if spec.constant_v2_c2 { cc } else { r.random_range(0.5..5.0) },
        })
        .collect();
    let n = r.random_range(100..10_000usize);
    let n_e = r.random_range(1..=n);
    let e: f64 = support.iter().map(|s| s.prob * (s.c2 * s.v2).sqrt()).sum();
    let reach = support.iter().map(|s| n as f64 * s.lambda1 * (s.c2 / s.v2).sqrt()).fold(f64::INFINITY, f64::min);
    let k2 = spec.budget_fraction * reach * e;
    let c0 = r.random_range(0.0..1000.0);
    let c1 = r.random_range(0.0..0.5);
    let cost = CostModel {
        total_budget: c0 + n_e as f64 * c1 + k2,
        initial_cost: c0,
        per_record_cost: c1,
        outcome_cost: OutcomeCost::Constant { value: 1.0 },
    };
    let moments = OutcomeMoments { var_y: r.random_range(0.5..5.0), pve: r.random_range(0.0..1.0) };
    DesignInputs::new(support, cost, n, n_e, Some(moments)).expect("valid random instance")
}

pub fn feasible_instance(r: &mut impl Rng, size: usize) -> DesignInputs {
    let fraction = r.random_range(0.05..0.95);
    random_instance(r, &InstanceSpec { size, budget_fraction: fraction, constant_v2_c2: false, constant_v1: false })
}

/// Independent evaluation of the design variance Σ-decomposition.
pub fn variance_oracle(inputs: &DesignInputs, lambda2: &[f64], var_y: f64, pve: f64) -> f64 {
    pve * var_y
        + inputs
            .support
            .iter()
            .zip(lambda2)
            .map(|(s, l)| s.prob * s.v1 / s.lambda1 + s.prob * s.v2 / (s.lambda1 * l))
            .sum::<f64>()
}

pub fn cost_oracle(inputs: &DesignInputs, lambda2: &[f64]) -> f64 {
    let c = &inputs.cost;
    c.initial_cost
        + inputs.n_e as f64 * c.per_record_cost
        + inputs.n as f64 * inputs.support.iter().zip(lambda2).map(|(s, l)| s.prob * s.lambda1 * l * s.c2).sum::<f64>()
}

pub const GRID_STEP: f64 = 1e-3;
const GRID_N: usize = 1000;

/// Result of the exhaustive grid search over the budget surface.
pub struct GridResult {
    /// Smallest second-phase variance term Σ aᵢ/λᵢ over grid points.
    pub best: f64,
    pub evaluated: u64,
}

/// Minimizes Σ aᵢ/λᵢ subject to Σ bᵢλᵢ = r over λᵢ on the 1e-3 grid for all
/// but the last coordinate, which is solved from the budget and must lie in
/// (0, 1]. With four points the third coordinate is minimized exactly over
/// its grid by scanning around the minimizer of the convex one-dimensional
/// restriction.
pub fn grid_search(a: &[f64], b: &[f64], r: f64) -> GridResult {
    let s = a.len();
    let g = |i: usize| (i + 1) as f64 * GRID_STEP;
    let last = |rem: f64| {
        let l = rem / b[s - 1];
        (l > 0.0 && l <= 1.0).then(|| a[s - 1] / l)
    };
    let mut best = f64::INFINITY;
    let mut evaluated = 0u64;
    match s {
        1 => {
            if let Some(v) = last(r) {
                best = v;
                evaluated = 1;
            }
        }
        2 => {
            for i in 0..GRID_N {
                if let Some(v) = last(r - b[0] * g(i)) {
                    best = best.min(a[0] / g(i) + v);
                    evaluated += 1;
                }
            }
        }
        3 => {
            for i in 0..GRID_N {
                for j in 0..GRID_N {
                    if let Some(v) = last(r - b[0] * g(i) - b[1] * g(j)) {
                        best = best.min(a[0] / g(i) + a[1] / g(j) + v);
                        evaluated += 1;
                    }
                }
            }
        }
        4 => {
            for i in 0..GRID_N {
                for j in 0..GRID_N {
                    let rem = r - b[0] * g(i) - b[1] * g(j);
                    if rem <= 0.0 {
                        continue;
                    }
                    let head = a[0] / g(i) + a[1] / g(j);
                    // λ₃/λ₄ = √(a₃b₄/(a₄b₃)) at the restricted minimum.
                    let ratio = (a[2] * b[3] / (a[3] * b[2])).sqrt();
                    let l3 = rem / (b[2] + b[3] / ratio);
                    let centre = (l3 / GRID_STEP).round() as i64 - 1;
                    let lo = (rem - b[3]) / b[2];
                    let lo_idx = ((lo / GRID_STEP).ceil() as i64 - 1).max(0);
                    let hi_idx = ((rem / b[2] / GRID_STEP).floor() as i64 - 1).min(GRID_N as i64 - 1);
                    if lo_idx > hi_idx {
                        continue;
                    }
                    let c = centre.clamp(lo_idx, hi_idx);
                    for k in (c - 2).max(lo_idx)..=(c + 2).min(hi_idx) {
                        let l = g(k as usize);
                        if let Some(v) = last(rem - b[2] * l) {
                            best = best.min(head + a[2] / l + v);
                            evaluated += 1;
                        }
                    }
                }
            }
        }
        _ => panic!("grid oracle supports at most four support points"),
    }
    GridResult { best, evaluated }
}

/// Grid search on a design instance; returns (closed-form second-phase
/// term, grid minimum, second-order grid-resolution bound).
pub fn grid_check(inputs: &DesignInputs, lambda_star: &[f64]) -> (f64, f64, f64) {
    let n = inputs.n as f64;
    let a: Vec<f64> = inputs.support.iter().map(|s| s.prob * s.v2 / s.lambda1).collect();
    let b: Vec<f64> = inputs.support.iter().map(|s| s.prob * s.lambda1 * s.c2).collect();
    let r = inputs.second_phase_budget() / n;
    let star: f64 = a.iter().zip(lambda_star).map(|(a, l)| a / l).sum();
    let grid = grid_search(&a, &b, r);
    let s = a.len();
    let h = GRID_STEP / 2.0;
    let drift: f64 = b[..s - 1].iter().map(|bi| bi * h).sum::<f64>() / b[s - 1];
    let bound = 2.0
        * (a[..s - 1].iter().zip(lambda_star).map(|(a, l)| a / l.powi(3) * h * h).sum::<f64>()
            + a[s - 1] / lambda_star[s - 1].powi(3) * drift * drift);
    (star, grid.best, bound)
}
