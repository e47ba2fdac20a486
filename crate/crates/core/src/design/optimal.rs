use serde::{Deserialize, Serialize};

use super::DesignInputs;
use crate::{Error, Result};

/// Range of first-phase sizes for which the optimal rule stays a valid
/// probability everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeRange {
    pub n_min: f64,
    /// Exclusive upper end (B − C₀)/C₁; `None` when C₁ = 0.
    pub n_max: Option<f64>,
    /// Whether the supplied n_e lies in [n_min, n_max).
    pub contains_ne: bool,
}

/// The optimal rule evaluated at one support point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionPoint {
    pub id: Option<u64>,
    pub w0: Vec<f64>,
    pub w1: Vec<f64>,
    pub prob: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub eta2: f64,
    pub c2: f64,
    pub v2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSolution {
    pub points: Vec<SolutionPoint>,
    /// (B − C₀ − n_e·C₁) / (n·E[√(C₂v₂)]); λ₂ = scale·√(v₂/C₂)/λ₁.
    pub scale: f64,
    /// Multiplier of the budget constraint, (E[√(C₂v₂)] / (B − C₀ − n_e·C₁))².
    pub nu: f64,
    /// E[√(C₂v₂)].
    pub e_sqrt_cv: f64,
    pub second_phase_budget: f64,
    pub budget_spent: f64,
    pub feasible: bool,
    pub ne_range: NeRange,
    /// Support points where λ₂ > 1.
    pub cap_violations: usize,
    /// Indices (0-based) of the violating support points.
    pub offending: Vec<usize>,
    pub predicted_variance: Option<f64>,
    pub relative_efficiency: Option<f64>,
}

impl DesignSolution {
    pub fn lambda2(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.lambda2).collect()
    }

    /// Ids of the violating points, where known.
    pub fn offending_ids(&self) -> Vec<u64> {
        self.offending.iter().filter_map(|&i| self.points[i].id).collect()
    }
}

fn check_rule(inputs: &DesignInputs, lambda2: &[f64]) -> Result<()> {
    if lambda2.len() != inputs.support.len() {
        return Err(Error::invalid(format!(
            "rule has {} values for {} support points",
            lambda2.len(),
            inputs.support.len()
        )));
    }
    Ok(())
}

/// C₀ + n_e·C₁ + n·Σ λ₁λ₂C₂p₁.
pub fn expected_cost(inputs: &DesignInputs, lambda2: &[f64]) -> Result<f64> {
    check_rule(inputs, lambda2)?;
    let per_person: f64 = inputs.support.iter().zip(lambda2).map(|(s, l2)| s.lambda1 * l2 * s.c2 * s.prob).sum();
    let c = &inputs.cost;
    Ok(c.initial_cost + inputs.n_e as f64 * c.per_record_cost + inputs.n as f64 * per_person)
}

fn e_sqrt_cv(inputs: &DesignInputs) -> f64 {
    inputs.support.iter().map(|s| s.prob * (s.c2 * s.v2).sqrt()).sum()
}

/// Feasible first-phase sizes for the support, cost and n in `inputs`.
///
/// Below n_min the budget left for the second phase is so large that the
/// optimal rule would exceed 1 somewhere; at or above n_max the first phase
/// alone exhausts the budget.
pub fn feasible_ne_range(inputs: &DesignInputs) -> NeRange {
    let c = &inputs.cost;
    let e = e_sqrt_cv(inputs);
    let reach = inputs
        .support
        .iter()
        .filter(|s| s.prob > 0.0)
        .map(|s| inputs.n as f64 * s.lambda1 * (s.c2 / s.v2).sqrt())
        .fold(f64::INFINITY, f64::min);
    let slack = c.total_budget - c.initial_cost - reach * e;
    let (n_min, n_max) = if c.per_record_cost > 0.0 {
        ((slack / c.per_record_cost).max(0.0), Some((c.total_budget - c.initial_cost) / c.per_record_cost))
    } else if slack <= 0.0 {
        (0.0, None)
    } else {
        (f64::INFINITY, None)
    };
    let ne = inputs.n_e as f64;
    let contains_ne = ne >= n_min && n_max.is_none_or(|m| ne < m);
    NeRange { n_min, n_max, contains_ne }
}

/// The cost-constrained variance-minimizing rule
/// λ₂(w̄₁) = √(v₂/C₂)·(B − C₀ − n_e·C₁) / (n·λ₁·E[√(C₂v₂)]).
///
/// The rule is never clipped: if it exceeds 1 anywhere the solution is
/// returned with `feasible = false` and the offending points listed.
pub fn optimal_lambda2(inputs: &DesignInputs) -> Result<DesignSolution> {
    let k = inputs.second_phase_budget();
    if !(k > 0.0) {
        return Err(Error::Infeasible {
            reason: format!("first phase consumes the budget: B − C₀ − n_e·C₁ = {k}")
        });
    }
    let e = e_sqrt_cv(inputs);
    let scale = k / (inputs.n as f64 * e);
    let lambda2: Vec<f64> = inputs.support.iter().map(|s| scale * (s.v2 / s.c2).sqrt() / s.lambda1).collect();
    let mut sol = solution_for_rule(inputs, lambda2)?;
    sol.scale = scale;
    sol.nu = (e / k).powi(2);
    if !sol.feasible {
        log::warn!(
            "optimal rule exceeds 1 at {} support points; feasible n_e range starts at {:.1}",
            sol.cap_violations,
            sol.ne_range.n_min
        );
    }
    Ok(sol)
}

/// Tabulates an arbitrary rule on the support with its cost, feasibility
/// and, when outcome moments are known, its design variance. `scale` and
/// `nu` are left at zero.
pub fn solution_for_rule(inputs: &DesignInputs, lambda2: Vec<f64>) -> Result<DesignSolution> {
    check_rule(inputs, &lambda2)?;
    let mut points = Vec::with_capacity(inputs.support.len());
    let mut offending = Vec::new();
    for (i, (s, &l2)) in inputs.support.iter().zip(&lambda2).enumerate() {
        if l2 > 1.0 {
            offending.push(i);
        }
        points.push(SolutionPoint {
            id: s.id,
            w0: s.w0.clone(),
            w1: s.w1.clone(),
            prob: s.prob,
            lambda1: s.lambda1,
            lambda2: l2,
            eta2: s.lambda1 * l2,
            c2: s.c2,
            v2: s.v2,
        });
    }
    let budget_spent = expected_cost(inputs, &lambda2)?;
    let (predicted_variance, relative_efficiency) = match inputs.moments {
        Some(m) => (
            Some(design_variance(inputs, &lambda2, m.var_y, m.pve)?),
            Some(relative_efficiency(inputs, m.var_y, m.pve)?),
        ),
        None => (None, None),
    };
    Ok(DesignSolution {
        points,
        scale: 0.0,
        nu: 0.0,
        e_sqrt_cv: e_sqrt_cv(inputs),
        second_phase_budget: inputs.second_phase_budget(),
        budget_spent,
        feasible: offending.is_empty() && lambda2.iter().all(|&l| l > 0.0),
        ne_range: feasible_ne_range(inputs),
        cap_violations: offending.len(),
        offending,
        predicted_variance,
        relative_efficiency,
    })
}

/// Stationarity residuals −v₂p₁/(n·η₂²) + ν·n·C₂·p₁ of the Lagrangian at
/// each support point, each divided by the magnitude of its first term.
pub fn kkt_residuals(inputs: &DesignInputs, solution: &DesignSolution) -> Vec<f64> {
    let n = inputs.n as f64;
    inputs
        .support
        .iter()
        .zip(&solution.points)
        .map(|(s, p)| {
            let grad_v = s.v2 * s.prob / (n * p.eta2 * p.eta2);
            let grad_c = solution.nu * n * s.c2 * s.prob;
            if grad_v == 0.0 {
                grad_c
            } else {
                (grad_c - grad_v) / grad_v
            }
        })
        .collect()
}

/// Simple random second-phase sampling at the same expected cost:
/// λ̄₂(w̄₁) = (B − C₀ − n_e·C₁) / (n·λ₁(w₀)·E[C₂]), so λ₁λ̄₂ is constant.
pub fn random_baseline(inputs: &DesignInputs) -> Result<Vec<f64>> {
    let k = inputs.second_phase_budget();
    if !(k > 0.0) {
        return Err(Error::Infeasible { reason: format!("B − C₀ − n_e·C₁ = {k}") });
    }
    let ec2: f64 = inputs.support.iter().map(|s| s.prob * s.c2).sum();
    let eta = k / (inputs.n as f64 * ec2);
    Ok(inputs.support.iter().map(|s| eta / s.lambda1).collect())
}

/// V(λ₂) = PVE·Var(Y) + Σ p₁v₁/λ₁ + Σ p₁v₂/(λ₁λ₂), so that n times the
/// estimator's variance is V(λ₂)/n.
pub fn design_variance(inputs: &DesignInputs, lambda2: &[f64], var_y: f64, pve: f64) -> Result<f64> {
    check_rule(inputs, lambda2)?;
    let mut v = pve * var_y;
    for (i, (s, &l2)) in inputs.support.iter().zip(lambda2).enumerate() {
        if !(l2 > 0.0) {
            return Err(Error::Row { row: i + 1, message: format!("second-phase probability {l2} is not positive") });
        }
        v += s.prob * s.v1 / s.lambda1 + s.prob * s.v2 / (s.lambda1 * l2);
    }
    Ok(v)
}

/// Variance of the optimal design relative to the random baseline:
/// [PVE·Var(Y) + E′ + (n/K)·E[√(C₂v₂)]²] / [PVE·Var(Y) + E′ + (n/K)·E[C₂]·E[v₂]]
/// with E′ = E[v₁/λ₁] and K = B − C₀ − n_e·C₁.
pub fn relative_efficiency(inputs: &DesignInputs, var_y: f64, pve: f64) -> Result<f64> {
    let k = inputs.second_phase_budget();
    if !(k > 0.0) {
        return Err(Error::Infeasible { reason: format!("B − C₀ − n_e·C₁ = {k}") });
    }
    let sup = &inputs.support;
    let e_prime: f64 = sup.iter().map(|s| s.prob * s.v1 / s.lambda1).sum();
    let e = e_sqrt_cv(inputs);
    let ec2: f64 = sup.iter().map(|s| s.prob * s.c2).sum();
    let ev2: f64 = sup.iter().map(|s| s.prob * s.v2).sum();
    let r = inputs.n as f64 / k;
    let base = pve * var_y + e_prime;
    let den = base + r * ec2 * ev2;
    if !(den > 0.0) {
        return Err(Error::Numerical("relative efficiency denominator is not positive".into()));
    }
    Ok((base + r * e * e) / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{CostModel, OutcomeCost};
    use crate::design::SupportPoint;

    fn toy() -> DesignInputs {
        let support = [1.0, 4.0, 9.0]
            .iter()
            .enumerate()
            .map(|(i, &v2)| SupportPoint {
                id: Some(i as u64),
                w0: vec![i as f64],
                w1: vec![0.0],
                prob: 1.0 / 3.0,
                lambda1: 1.0,
                v1: 0.0,
                v2,
                c2: 1.0,
            })
            .collect();
        let cost = CostModel::new(20.0, 0.0, 0.0, OutcomeCost::Constant { value: 1.0 }).unwrap();
        DesignInputs::new(support, cost, 30, 30, None).unwrap()
    }

    #[test]
    fn proportional_to_root_v2() {
        let inputs = toy();
        let sol = optimal_lambda2(&inputs).unwrap();
        let l = sol.lambda2();
        assert!((l[1] / l[0] - 2.0).abs() < 1e-14 && (l[2] / l[0] - 3.0).abs() < 1e-14);
        assert!((sol.budget_spent - 20.0).abs() < 1e-12);
        assert!(sol.feasible);
    }

    #[test]
    fn zero_rule_costs_first_phase_only() {
        let inputs = toy();
        assert_eq!(expected_cost(&inputs, &[0.0; 3]).unwrap(), 0.0);
    }
}
