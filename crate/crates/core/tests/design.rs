mod common;

use common::{cost_oracle, feasible_instance, grid_check, random_instance, rng, variance_oracle, InstanceSpec};
use proptest::prelude::*;
use rand::Rng;
use twophase::datamodel::{CostModel, Individual, OutcomeCost, PopulationFrame, W0Distribution, W0Source};
use twophase::design::{
    alternative_design, design_variance, draw_second_phase, expected_cost, feasible_ne_range, kkt_residuals,
    optimal_lambda2, random_baseline, relative_efficiency, relative_efficiency_alternative, solution_for_rule,
    AlternativeOptions, DesignInputs, OutcomeMoments, SupportPoint,
};
use twophase::Error;

fn point(i: usize, prob: f64, lambda1: f64, v2: f64, c2: f64) -> SupportPoint {
    SupportPoint { id: Some(i as u64), w0: vec![i as f64], w1: vec![0.0], prob, lambda1, v1: 0.0, v2, c2 }
}

fn cost(b: f64, c0: f64, c1: f64) -> CostModel {
    CostModel::new(b, c0, c1, OutcomeCost::Constant { value: 1.0 }).unwrap()
}

#[test]
fn constant_inputs_reproduce_random_baseline() {
    let support = (0..5).map(|i| point(i, 0.2, 0.4, 3.0, 2.0)).collect();
    let inputs = DesignInputs::new(support, cost(1000.0, 100.0, 0.1), 2000, 800, None).unwrap();
    let sol = optimal_lambda2(&inputs).unwrap();
    let expected = (1000.0 - 100.0 - 80.0) / (2000.0 * 0.4 * 2.0);
    let baseline = random_baseline(&inputs).unwrap();
    for (l, b) in sol.lambda2().iter().zip(&baseline) {
        assert!((l - expected).abs() < 1e-14);
        assert!((b - expected).abs() < 1e-14);
    }
}

#[test]
fn three_point_rule_is_proportional_to_root_variance() {
    let support = vec![
        point(0, 1.0 / 3.0, 1.0, 1.0, 1.0),
        point(1, 1.0 / 3.0, 1.0, 4.0, 1.0),
        point(2, 1.0 / 3.0, 1.0, 9.0, 1.0),
    ];
    let inputs = DesignInputs::new(support, cost(100.0, 0.0, 0.0), 100, 100, None).unwrap();
    let l = optimal_lambda2(&inputs).unwrap().lambda2();
    assert!((l[1] / l[0] - 2.0).abs() < 1e-12);
    assert!((l[2] / l[0] - 3.0).abs() < 1e-12);
    assert!((cost_oracle(&inputs, &l) - 100.0).abs() < 1e-10);
}

#[test]
fn zero_rule_costs_first_phase_only() {
    let mut r = rng(1);
    let inputs = feasible_instance(&mut r, 4);
    let c = &inputs.cost;
    let got = expected_cost(&inputs, &[0.0; 4]).unwrap();
    assert_eq!(got, c.initial_cost + inputs.n_e as f64 * c.per_record_cost);
}

#[test]
fn paper_setting_spends_the_whole_budget() {
    let mut r = rng(2);
    let n_e = 5000;
    let support: Vec<SupportPoint> = (0..n_e)
        .map(|i| {
            let w0: f64 = 3.3 + r.random_range(0.0..1.5);
            SupportPoint {
                id: Some(i as u64),
                w0: vec![w0],
                w1: vec![3.3],
                prob: 1.0 / n_e as f64,
                lambda1: 1.0 / (1.0 + (-w0).exp()),
                v1: 0.0,
                v2: (-2.4 - 0.2 * w0 + 0.3 * w0 * w0).exp(),
                c2: 2000.0,
            }
        })
        .collect();
    let cost = CostModel::new(100_000.0, 50_000.0, 0.01, OutcomeCost::Constant { value: 2000.0 }).unwrap();
    let inputs = DesignInputs::new(support, cost, 10_000, n_e, None).unwrap();
    let sol = optimal_lambda2(&inputs).unwrap();
    assert!(sol.feasible);
    let spent = expected_cost(&inputs, &sol.lambda2()).unwrap();
    assert!((spent / 100_000.0 - 1.0).abs() < 1e-4);
}

#[test]
fn closed_form_never_loses_to_the_grid() {
    let mut r = rng(3);
    for t in 0..24 {
        let size = 1 + t % 4;
        let inputs = random_instance(
            &mut r,
            &InstanceSpec {
                size,
                budget_fraction: 0.3 + 0.6 * (t as f64 / 24.0),
                constant_v2_c2: false,
                constant_v1: false,
            },
        );
        let sol = optimal_lambda2(&inputs).unwrap();
        assert!(sol.feasible);
        let (star, grid, bound) = grid_check(&inputs, &sol.lambda2());
        assert!(star <= grid * (1.0 + 1e-12), "instance {t}: grid {grid} beat closed form {star}");
        if sol.lambda2().iter().all(|&l| l > 2e-3) && size > 1 {
            assert!(grid - star <= bound + 1e-12 * star, "instance {t}: grid gap {} above bound {bound}", grid - star);
        }
    }
}

#[test]
fn kkt_stationarity_holds_on_random_instances() {
    let mut r = rng(4);
    for _ in 0..1000 {
        let size = r.random_range(1..=8);
        let inputs = feasible_instance(&mut r, size);
        let sol = optimal_lambda2(&inputs).unwrap();
        // ν from the closed form, recomputed independently.
        let e: f64 = inputs.support.iter().map(|s| s.prob * (s.c2 * s.v2).sqrt()).sum();
        let nu = (e / inputs.second_phase_budget()).powi(2);
        assert!((sol.nu / nu - 1.0).abs() < 1e-12);
        let n = inputs.n as f64;
        for (s, p) in inputs.support.iter().zip(&sol.points) {
            let grad_v = s.v2 * s.prob / (n * p.eta2 * p.eta2);
            let resid = (-grad_v + nu * n * s.c2 * s.prob) / grad_v;
            assert!(resid.abs() < 1e-8);
        }
        assert!(kkt_residuals(&inputs, &sol).iter().all(|x| x.abs() < 1e-8));
    }
}

#[test]
fn optimal_rule_spends_exactly_the_budget() {
    let mut r = rng(5);
    for _ in 0..1000 {
        let size = r.random_range(1..=8);
        let inputs = feasible_instance(&mut r, size);
        let sol = optimal_lambda2(&inputs).unwrap();
        let b = inputs.cost.total_budget;
        assert!((cost_oracle(&inputs, &sol.lambda2()) / b - 1.0).abs() < 1e-8);
        assert!((sol.budget_spent / b - 1.0).abs() < 1e-8);
    }
}

/// Realized cost per draw: n individuals, each kept with λ₁ and measured
/// with λ₂; simulated one individual at a time and scaled by n.
#[test]
fn monte_carlo_cost_matches_expected_cost() {
    let mut r = rng(6);
    for _ in 0..5 {
        let size = r.random_range(2..=6);
        let inputs = feasible_instance(&mut r, size);
        let l2 = optimal_lambda2(&inputs).unwrap().lambda2();
        let cum: Vec<f64> = inputs
            .support
            .iter()
            .scan(0.0, |acc, s| {
                *acc += s.prob;
                Some(*acc)
            })
            .collect();
        let draws = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..draws {
            let u: f64 = r.random();
            let k = cum.iter().position(|&c| u < c).unwrap_or(size - 1);
            let s = &inputs.support[k];
            let x = if r.random::<f64>() < s.lambda1 && r.random::<f64>() < l2[k] { s.c2 } else { 0.0 };
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / draws as f64;
        let sd = (sum_sq / draws as f64 - mean * mean).sqrt();
        let n = inputs.n as f64;
        let fixed = inputs.cost.initial_cost + inputs.n_e as f64 * inputs.cost.per_record_cost;
        let realized = fixed + n * mean;
        let se = n * sd / (draws as f64).sqrt();
        let expected = expected_cost(&inputs, &l2).unwrap();
        assert!((realized - expected).abs() <= 3.0 * se, "realized {realized} expected {expected} se {se}");
    }
}

#[test]
fn closed_form_beats_random_feasible_rules() {
    let mut r = rng(7);
    for _ in 0..50 {
        let size = r.random_range(2..=6);
        let inputs = feasible_instance(&mut r, size);
        let star = optimal_lambda2(&inputs).unwrap().lambda2();
        let (vy, pve) = (1.7, 0.3);
        let v_star = variance_oracle(&inputs, &star, vy, pve);
        let r2 = inputs.second_phase_budget() / inputs.n as f64;
        let mut probes = 0;
        while probes < 20 {
            let raw: Vec<f64> = (0..size).map(|_| r.random_range(0.01..1.0)).collect();
            let spend: f64 = inputs.support.iter().zip(&raw).map(|(s, l)| s.prob * s.lambda1 * s.c2 * l).sum();
            let rule: Vec<f64> = raw.iter().map(|l| l * r2 / spend).collect();
            if rule.iter().any(|&l| l > 1.0) {
                continue;
            }
            probes += 1;
            assert!(v_star <= variance_oracle(&inputs, &rule, vy, pve) * (1.0 + 1e-12));
        }
    }
}

#[test]
fn halving_the_rule_adds_the_second_phase_term() {
    let mut r = rng(8);
    let inputs = feasible_instance(&mut r, 5);
    let l = optimal_lambda2(&inputs).unwrap().lambda2();
    let half: Vec<f64> = l.iter().map(|x| x / 2.0).collect();
    let v = design_variance(&inputs, &l, 2.0, 0.4).unwrap();
    let vh = design_variance(&inputs, &half, 2.0, 0.4).unwrap();
    let term: f64 = inputs.support.iter().zip(&l).map(|(s, l)| s.prob * s.v2 / (s.lambda1 * l)).sum();
    assert!((vh - v - term).abs() < 1e-10 * vh);
}

#[test]
fn full_observation_variance_is_outcome_variance() {
    // With λ₁ = λ₂ = 1 the decomposition sums to Var(Y) when PVE·Var(Y),
    // E[v₁] and E[v₂] partition it.
    let mut support: Vec<SupportPoint> = (0..4).map(|i| point(i, 0.25, 1.0, 0.5 + i as f64, 1.0)).collect();
    for s in &mut support {
        s.v1 = 0.3;
    }
    let ev2 = 0.5 + 1.5;
    let var_y = 4.0;
    let pve = (var_y - 0.3 - ev2) / var_y;
    let inputs = DesignInputs::new(support, cost(10.0, 0.0, 0.0), 10, 10, None).unwrap();
    let v = design_variance(&inputs, &[1.0; 4], var_y, pve).unwrap();
    assert!((v - var_y).abs() < 1e-12);
    assert!(design_variance(&inputs, &[1.0, 0.0, 1.0, 1.0], var_y, pve).is_err());
}

#[test]
fn relative_efficiency_properties() {
    let mut r = rng(9);
    for _ in 0..1000 {
        let size = r.random_range(1..=8);
        let fraction = r.random_range(0.05..3.0);
        let inputs = random_instance(
            &mut r,
            &InstanceSpec { size, budget_fraction: fraction, constant_v2_c2: false, constant_v1: false },
        );
        let m = inputs.moments.unwrap();
        let re = relative_efficiency(&inputs, m.var_y, m.pve).unwrap();
        assert!(re <= 1.0 + 1e-12);
        let star = optimal_lambda2(&inputs).unwrap().lambda2();
        let base = random_baseline(&inputs).unwrap();
        let ratio = variance_oracle(&inputs, &star, m.var_y, m.pve) / variance_oracle(&inputs, &base, m.var_y, m.pve);
        assert!((re / ratio - 1.0).abs() < 1e-10);
        let h = 1e-6;
        let lo = relative_efficiency(&inputs, m.var_y, (m.pve - h).max(0.0)).unwrap();
        let hi = relative_efficiency(&inputs, m.var_y, (m.pve + h).min(1.0)).unwrap();
        assert!(hi - lo >= -1e-14);
    }
}

#[test]
fn relative_efficiency_is_one_for_constant_variance_and_cost() {
    let mut r = rng(10);
    for _ in 0..200 {
        let size = r.random_range(1..=8);
        let inputs = random_instance(
            &mut r,
            &InstanceSpec { size, budget_fraction: 0.5, constant_v2_c2: true, constant_v1: false },
        );
        let m = inputs.moments.unwrap();
        assert!((relative_efficiency(&inputs, m.var_y, m.pve).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn feasible_range_agrees_with_the_solver() {
    let mut r = rng(11);
    let mut inside = 0;
    for _ in 0..100 {
        let size = r.random_range(1..=6);
        let fraction = r.random_range(0.2..2.0);
        let inputs = random_instance(
            &mut r,
            &InstanceSpec { size, budget_fraction: fraction, constant_v2_c2: false, constant_v1: false },
        );
        let range = feasible_ne_range(&inputs);
        let sol = optimal_lambda2(&inputs).unwrap();
        let capped = sol.points.iter().all(|p| p.eta2 <= p.lambda1 * (1.0 + 1e-12));
        if range.contains_ne {
            inside += 1;
            assert!(sol.feasible && capped);
        } else {
            assert!(!sol.feasible);
        }
    }
    assert!(inside > 10);
}

#[test]
fn phase_one_exhausting_the_budget_is_infeasible() {
    let support = (0..3).map(|i| point(i, 1.0 / 3.0, 0.5, 1.0, 1.0)).collect();
    let inputs = DesignInputs::new(support, cost(1000.0, 500.0, 0.5), 5000, 1000, None).unwrap();
    let range = feasible_ne_range(&inputs);
    assert_eq!(range.n_max, Some(1000.0));
    assert!(!range.contains_ne);
    assert!(matches!(optimal_lambda2(&inputs), Err(Error::Infeasible { .. })));
}

#[test]
fn unit_selection_and_costs_give_the_plug_in_lower_bound() {
    let support = (0..4).map(|i| point(i, 0.25, 1.0, 1.0, 1.0)).collect();
    let (b, c0, c1, n) = (50_000.0, 1000.0, 2.0, 10_000);
    let inputs = DesignInputs::new(support, cost(b, c0, c1), n, 100, None).unwrap();
    let range = feasible_ne_range(&inputs);
    assert!((range.n_min - (b - c0 - n as f64) / c1).abs() < 1e-9);
}

#[test]
fn representative_subsample_of_a_matching_frame() {
    // First-phase rows already distributed as the target: RE_alt equals the
    // Corollary 1 ratio with λ₁ replaced by n_e/n.
    let n_e = 400;
    let support: Vec<SupportPoint> = (0..n_e)
        .map(|i| SupportPoint {
            id: Some(i as u64),
            w0: vec![(i % 4) as f64],
            w1: vec![0.0],
            prob: 1.0 / n_e as f64,
            lambda1: 0.4,
            v1: 0.7,
            v2: 1.0 + (i % 4) as f64,
            c2: 1.0,
        })
        .collect();
    let moments = OutcomeMoments { var_y: 3.0, pve: 0.4 };
    let inputs = DesignInputs::new(support, cost(300.0, 0.0, 0.1), 1000, n_e, Some(moments)).unwrap();
    let target = W0Source::KnownDistribution {
        distribution: W0Distribution::Discrete {
            points: (0..4).map(|k| vec![k as f64]).collect(),
            probs: vec![0.25; 4],
        },
    };
    let alt = alternative_design(&inputs, &target, &AlternativeOptions { n_e_prime: n_e, cells_per_dim: 4, seed: 1 })
        .unwrap();
    assert_eq!(alt.subsample_ids.len(), n_e);
    let re1 = relative_efficiency(&inputs, 3.0, 0.4).unwrap();
    assert!((alt.relative_efficiency.unwrap() - re1).abs() < 1e-12);
}

#[test]
fn corollary_two_holds_when_subsample_rate_covers_mean_selection() {
    let mut r = rng(12);
    for _ in 0..500 {
        let size = r.random_range(1..=8);
        let fraction = r.random_range(0.05..0.95);
        let inputs0 = random_instance(
            &mut r,
            &InstanceSpec { size, budget_fraction: fraction, constant_v2_c2: false, constant_v1: true },
        );
        let mean_l1: f64 = inputs0.support.iter().map(|s| s.prob * s.lambda1).sum();
        let n = inputs0.n;
        let lo = (mean_l1 * n as f64).ceil() as usize;
        let n_e = r.random_range(lo..=n.max(lo));
        let n_e_prime = r.random_range(lo..=n_e);
        let mut cost = inputs0.cost.clone();
        // Keep the same second-phase budget at the larger first phase.
        cost.total_budget += (n_e as f64 - inputs0.n_e as f64) * cost.per_record_cost;
        let inputs = DesignInputs::new(inputs0.support.clone(), cost, n.max(n_e), n_e, inputs0.moments).unwrap();
        let m = inputs.moments.unwrap();
        let re = relative_efficiency_alternative(&inputs, n_e_prime, m.var_y, m.pve).unwrap();
        assert!(re <= 1.0 + 1e-12, "RE_alt {re}");
    }
}

#[test]
fn subsample_cells_match_the_target() {
    let mut r = rng(13);
    let n_e = 4000;
    let support: Vec<SupportPoint> = (0..n_e)
        .map(|i| {
            let w0 = r.random_range(0.0..1.0f64).powf(0.5) * 4.0 - 2.0;
            SupportPoint {
                id: Some(i as u64),
                w0: vec![w0],
                w1: vec![0.0],
                prob: 1.0 / n_e as f64,
                lambda1: 0.5,
                v1: 0.0,
                v2: 1.0,
                c2: 1.0,
            }
        })
        .collect();
    let inputs = DesignInputs::new(support, cost(2000.0, 0.0, 0.0), 10_000, n_e, None).unwrap();
    let target =
        W0Source::KnownDistribution { distribution: W0Distribution::Normal { means: vec![0.5], sds: vec![0.6] } };
    let n_e_prime = 1000;
    let alt =
        alternative_design(&inputs, &target, &AlternativeOptions { n_e_prime, cells_per_dim: 5, seed: 3 }).unwrap();
    assert_eq!(alt.subsample_ids.len(), n_e_prime);
    let tol = 1.0 / (n_e_prime as f64).sqrt();
    for c in &alt.cells {
        assert!((c.allocated as f64 / n_e_prime as f64 - c.target_prob).abs() <= tol);
        assert!((c.target_prob - 0.2).abs() < 1e-9);
    }
    let mut ids = alt.subsample_ids.clone();
    ids.dedup();
    assert_eq!(ids.len(), n_e_prime);
}

#[test]
fn empty_target_cell_is_reported() {
    let support: Vec<SupportPoint> = (0..100)
        .map(|i| point(i, 0.01, 0.5, 1.0, 1.0))
        .map(|mut s| {
            s.w0 = vec![if s.id.unwrap() < 50 { 0.0 } else { 1.0 }];
            s
        })
        .collect();
    let inputs = DesignInputs::new(support, cost(500.0, 0.0, 0.0), 1000, 100, None).unwrap();
    let target = W0Source::KnownDistribution {
        distribution: W0Distribution::Discrete {
            points: vec![vec![0.0], vec![1.0], vec![2.0]],
            probs: vec![0.3, 0.3, 0.4],
        },
    };
    let err = alternative_design(&inputs, &target, &AlternativeOptions { n_e_prime: 50, cells_per_dim: 3, seed: 1 });
    assert!(err.is_err());
}

fn first_phase_frame(n_e: usize) -> PopulationFrame {
    let rows = (0..n_e)
        .map(|i| Individual {
            id: i as u64,
            w0: vec![i as f64],
            w1: Some(vec![0.0]),
            y: None,
            r1: true,
            r2: false,
            pilot: false,
            lambda1: Some(1.0),
            lambda2: None,
        })
        .collect();
    PopulationFrame::new(rows, n_e).unwrap()
}

fn constant_rule_solution(n_e: usize, l2: f64) -> (PopulationFrame, twophase::design::DesignSolution) {
    let frame = first_phase_frame(n_e);
    let support = (0..n_e).map(|i| point(i, 1.0 / n_e as f64, 1.0, 1.0, 1.0)).collect();
    let inputs = DesignInputs::new(support, cost(1e9, 0.0, 0.0), n_e, n_e, None).unwrap();
    let sol = solution_for_rule(&inputs, vec![l2; n_e]).unwrap();
    (frame, sol)
}

#[test]
fn certain_inclusion_selects_every_first_phase_row() {
    let (frame, sol) = constant_rule_solution(300, 1.0);
    let drawn = draw_second_phase(&frame, &sol, 5).unwrap();
    assert_eq!(drawn.n_s(), 300);
    assert!(drawn.individuals().iter().all(|i| i.lambda2 == Some(1.0)));
}

#[test]
fn half_inclusion_is_binomial() {
    let (frame, sol) = constant_rule_solution(5000, 0.5);
    for seed in 0..20 {
        let drawn = draw_second_phase(&frame, &sol, seed).unwrap();
        let ns = drawn.n_s() as f64;
        assert!((ns - 2500.0).abs() <= 4.0 * (5000.0f64 * 0.25).sqrt());
    }
    let a = draw_second_phase(&frame, &sol, 9).unwrap();
    let b = draw_second_phase(&frame, &sol, 9).unwrap();
    assert_eq!(a, b);
}

#[test]
fn realized_draw_cost_matches_budget() {
    let mut r = rng(14);
    let n_e = 2000;
    let support: Vec<SupportPoint> = (0..n_e)
        .map(|i| SupportPoint {
            id: Some(i as u64),
            w0: vec![i as f64],
            w1: vec![0.0],
            prob: 1.0 / n_e as f64,
            lambda1: 1.0,
            v1: 0.0,
            v2: r.random_range(0.5..4.0),
            c2: 1.0,
        })
        .collect();
    let inputs = DesignInputs::new(support, cost(400.0, 0.0, 0.0), n_e, n_e, None).unwrap();
    let sol = optimal_lambda2(&inputs).unwrap();
    assert!(sol.feasible);
    let frame = first_phase_frame(n_e);
    let reps = 400;
    let costs: Vec<f64> = (0..reps).map(|seed| draw_second_phase(&frame, &sol, seed).unwrap().n_s() as f64).collect();
    let mean = costs.iter().sum::<f64>() / reps as f64;
    let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    let se = (var / reps as f64).sqrt();
    assert!((mean - 400.0).abs() <= 3.0 * se, "mean {mean} se {se}");
}

proptest! {
    #[test]
    fn scaling_costs_and_budget_leaves_rule_unchanged(seed in 0u64..10_000, k in 0.01f64..100.0, size in 1usize..8) {
        let mut r = rng(seed);
        let inputs = feasible_instance(&mut r, size);
        let base = optimal_lambda2(&inputs).unwrap().lambda2();
        let mut support = inputs.support.clone();
        for s in &mut support {
            s.c2 *= k;
        }
        let mut cost = inputs.cost.clone();
        let k2 = inputs.second_phase_budget() * k;
        cost.total_budget = cost.initial_cost + inputs.n_e as f64 * cost.per_record_cost + k2;
        let scaled = DesignInputs::new(support, cost, inputs.n, inputs.n_e, None).unwrap();
        let got = optimal_lambda2(&scaled).unwrap().lambda2();
        for (a, b) in base.iter().zip(&got) {
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }

    #[test]
    fn variance_matches_independent_evaluation(seed in 0u64..10_000, size in 1usize..8) {
        let mut r = rng(seed);
        let inputs = feasible_instance(&mut r, size);
        let rule: Vec<f64> = (0..size).map(|_| r.random_range(0.01..1.0)).collect();
        let m = inputs.moments.unwrap();
        let v = design_variance(&inputs, &rule, m.var_y, m.pve).unwrap();
        prop_assert!((v / variance_oracle(&inputs, &rule, m.var_y, m.pve) - 1.0).abs() < 1e-12);
        prop_assert!((expected_cost(&inputs, &rule).unwrap() / cost_oracle(&inputs, &rule) - 1.0).abs() < 1e-12);
    }
}
