use serde::{Deserialize, Serialize};

use super::{calibrate_gamma, Approach, Lambda1Mode, SimulationConfig};
use crate::datamodel::{
    draw_external_sample, generate_population, PopulationConfig, PopulationFrame, SimulatedPopulation, W0Source,
};
use crate::design::{
    draw_second_phase, optimal_lambda2, random_baseline, solution_for_rule, v1_from_mean_model, DesignInputs,
    DesignSolution, OutcomeMoments, SupportWeighting,
};
use crate::estimator::{fit_outcome_models, rr_estimate, InfluenceContext, MeanFitSource, OutcomeModelSpec};
use crate::regress::{compute_pve, fit_variance, DesignSpec, MeanModelFit, VarianceFitOptions, VarianceModelFit};
use crate::rng::{self, tags};
use crate::selection::{fit_composed, fit_direct, CompositionOptions, KnownSelection, SelectionModel};
use crate::special::{mean, sample_variance};
use crate::{Error, Result};

/// Outcome of one approach in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub approach: Approach,
    pub beta_hat: Option<f64>,
    pub feasible: bool,
    /// Seed of the replication's random streams.
    pub seed: u64,
    pub n_s: usize,
    pub budget_spent: Option<f64>,
    /// Predicted optimal-versus-random relative efficiency from the
    /// replication's fitted models (optimal approaches only).
    pub predicted_re: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachSummary {
    pub approach: Approach,
    pub n_success: usize,
    pub mean: f64,
    pub variance: Option<f64>,
    pub bias: f64,
    pub mse: f64,
    /// Monte Carlo variance relative to approach 1.
    pub re_vs_1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub config: SimulationConfig,
    /// Variance coefficients actually used (after any calibration).
    pub gamma: [f64; 5],
    pub true_beta: f64,
    pub n_reps: usize,
    pub n_failed_replications: usize,
    pub summaries: Vec<ApproachSummary>,
    pub records: Vec<ReplicationRecord>,
}

impl StudyResult {
    /// Successful estimates of one approach in replication order.
    pub fn estimates(&self, approach: Approach) -> Vec<f64> {
        self.records.iter().filter(|r| r.approach == approach).filter_map(|r| r.beta_hat).collect()
    }

    pub fn summary(&self, approach: Approach) -> Option<&ApproachSummary> {
        self.summaries.iter().find(|s| s.approach == approach)
    }

    /// Flat `rep,approach,beta_hat,feasible,seed` table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rep,approach,beta_hat,feasible,seed\n");
        for r in &self.records {
            let b = r.beta_hat.map(crate::datamodel::format_f64).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{}\n", r.rep, r.approach, b, u8::from(r.feasible), r.seed));
        }
        out
    }
}

fn scaled_selection(f: &KnownSelection, k: f64) -> KnownSelection {
    match f {
        KnownSelection::Constant { p } => KnownSelection::Constant { p: *p },
        KnownSelection::Logistic { intercept, slopes } => {
            KnownSelection::Logistic { intercept: intercept * k, slopes: slopes.iter().map(|s| s * k).collect() }
        }
        KnownSelection::TruncatedLogistic { intercept, slopes, cap } => KnownSelection::TruncatedLogistic {
            intercept: intercept * k,
            slopes: slopes.iter().map(|s| s * k).collect(),
            cap: *cap,
        },
    }
}

fn scaled_mean(m: &MeanModelFit, k: f64) -> MeanModelFit {
    let mut out = m.clone();
    out.coefficients.iter_mut().for_each(|c| *c *= k);
    out
}

fn resolve_selection(
    cfg: &SimulationConfig,
    pop: &PopulationConfig,
    frame: &PopulationFrame,
    seed: u64,
) -> Result<SelectionModel> {
    match cfg.lambda1_mode {
        Lambda1Mode::Known => {
            Ok(SelectionModel::known(scaled_selection(&pop.lambda1, cfg.misspecification.selection_scale))
                .with_clip(cfg.clip))
        }
        Lambda1Mode::Direct => fit_direct(frame, cfg.clip),
        Lambda1Mode::Composed => {
            let external = draw_external_sample(frame, &cfg.external_inclusion, seed)?;
            let ehr: Vec<Vec<f64>> = frame.first_phase().map(|i| i.w0.clone()).collect();
            fit_composed(
                &ehr,
                &W0Source::ExternalProbabilitySample { records: external },
                &CompositionOptions { quadratic: false, clip: cfg.clip },
            )
        }
    }
}

struct Shared<'a> {
    cfg: &'a SimulationConfig,
    sim: SimulatedPopulation,
    selection: SelectionModel,
    model_spec: OutcomeModelSpec,
    pilot_models: Option<(MeanModelFit, MeanModelFit)>,
    w0_source: W0Source,
    draw_seed: u64,
}

impl Shared<'_> {
    fn estimate(&self, solution: &DesignSolution, approach: Approach) -> Result<(f64, usize)> {
        let drawn = draw_second_phase(&self.sim.frame, solution, self.draw_seed)?;
        let frame = self.sim.reveal_outcomes(drawn)?;
        let n_s = frame.n_s();
        if n_s == 0 {
            return Err(Error::invalid("no second-phase rows drawn"));
        }
        if approach == Approach::A1 {
            let ys: Vec<f64> = frame.second_phase().filter_map(|i| i.y).collect();
            return Ok((mean(&ys), n_s));
        }
        let (m0, m1) = match &self.pilot_models {
            Some(models) => models.clone(),
            None => fit_outcome_models(&frame, &self.model_spec)?,
        };
        let k = self.cfg.misspecification.mean_scale;
        let ctx = InfluenceContext {
            selection: self.selection.clone(),
            mean_w0: scaled_mean(&m0, k),
            mean_w1: scaled_mean(&m1, k),
            w0_source: self.w0_source.clone(),
        };
        Ok((rr_estimate(&ctx, &frame)?.beta_hat, n_s))
    }
}

fn pilot_xy(frame: &PopulationFrame) -> (Vec<Vec<f64>>, Vec<f64>) {
    frame.pilot().map(|i| (i.w_bar().expect("pilot rows carry w1"), i.y.expect("pilot rows carry y"))).unzip()
}

/// Runs every configured approach on one replication. `pop` carries the
/// resolved variance coefficients.
pub fn run_replication(cfg: &SimulationConfig, pop: &PopulationConfig, rep: usize) -> Vec<ReplicationRecord> {
    let seed = rng::derive_seed(cfg.seed, tags::REPLICATION, rep as u64);
    let fail_all = |reason: String| {
        cfg.approaches
            .iter()
            .map(|&approach| ReplicationRecord {
                rep,
                approach,
                beta_hat: None,
                feasible: false,
                seed,
                n_s: 0,
                budget_spent: None,
                predicted_re: None,
                failure: Some(reason.clone()),
            })
            .collect()
    };
    let shared = match prepare(cfg, pop, seed) {
        Ok(s) => s,
        Err(e) => return fail_all(e.to_string()),
    };
    let frame = &shared.sim.frame;
    let names = DesignSpec::w_names(1, 1);
    let (px, py) = pilot_xy(frame);
    let pilot_w1_fit = match &shared.pilot_models {
        Some((_, m1)) => Ok(m1.clone()),
        None => crate::regress::fit_mean(&px, &py, &DesignSpec::linear(names.clone()), &Default::default()),
    };
    let pilot_w1_fit = match pilot_w1_fit {
        Ok(f) => f,
        Err(e) => return fail_all(e.to_string()),
    };
    let moments = {
        let var_y = sample_variance(&py);
        let m0 = shared.pilot_models.as_ref().map(|m| m.0.clone());
        m0.and_then(|m0| compute_pve(&m0, frame, Some(var_y)).ok()).map(|pve| OutcomeMoments { var_y, pve })
    };
    let v1 = match v1_from_mean_model(&pilot_w1_fit, frame, cfg.v1_draws, seed) {
        Ok(v) => v,
        Err(e) => return fail_all(e.to_string()),
    };
    let vopts = VarianceFitOptions { reml: cfg.reml, ..Default::default() };
    let build = |vm: &VarianceModelFit| {
        DesignInputs::from_frame(frame, &shared.selection, vm, v1, cfg.cost.clone(), SupportWeighting::Uniform, moments)
    };

    let mut records = Vec::with_capacity(cfg.approaches.len());
    let mut baseline: Option<Result<DesignSolution>> = None;
    for &approach in &cfg.approaches {
        let outcome: Result<(DesignSolution, Option<f64>)> = (|| {
            if approach.is_optimal() {
                let vm = match approach {
                    Approach::A3a => {
                        fit_variance(&px, &py, &pilot_w1_fit, &DesignSpec::quadratic(names.clone()), &vopts)?
                    }
                    Approach::A3b => fit_variance(&px, &py, &pilot_w1_fit, &DesignSpec::linear(names.clone()), &vopts)?,
                    _ => VarianceModelFit::from_coefficients(DesignSpec::quadratic(names.clone()), pop.gamma.to_vec())?,
                };
                let inputs = build(&vm)?;
                let sol = optimal_lambda2(&inputs)?;
                let re = sol.relative_efficiency;
                Ok((sol, re))
            } else {
                let sol = baseline
                    .get_or_insert_with(|| {
                        let flat =
                            VarianceModelFit::from_coefficients(DesignSpec::intercept_only(names.clone()), vec![0.0])?;
                        let inputs = build(&flat)?;
                        solution_for_rule(&inputs, random_baseline(&inputs)?)
                    })
                    .as_ref()
                    .map_err(|e| Error::Numerical(e.to_string()))?
                    .clone();
                Ok((sol, None))
            }
        })();
        let record = match outcome {
            Err(e) => ReplicationRecord {
                rep,
                approach,
                beta_hat: None,
                feasible: false,
                seed,
                n_s: 0,
                budget_spent: None,
                predicted_re: None,
                failure: Some(e.to_string()),
            },
            Ok((sol, predicted_re)) if !sol.feasible => ReplicationRecord {
                rep,
                approach,
                beta_hat: None,
                feasible: false,
                seed,
                n_s: 0,
                budget_spent: Some(sol.budget_spent),
                predicted_re,
                failure: Some(format!(
                    "second-phase probability exceeds 1 at {} points; feasible n_e from {:.1}",
                    sol.cap_violations, sol.ne_range.n_min
                )),
            },
            Ok((sol, predicted_re)) => {
                let (beta_hat, n_s, failure) = match shared.estimate(&sol, approach) {
                    Ok((b, n_s)) => (Some(b), n_s, None),
                    Err(e) => (None, 0, Some(e.to_string())),
                };
                ReplicationRecord {
                    rep,
                    approach,
                    beta_hat,
                    feasible: true,
                    seed,
                    n_s,
                    budget_spent: Some(sol.budget_spent),
                    predicted_re,
                    failure,
                }
            }
        };
        records.push(record);
    }
    records
}

fn prepare<'a>(cfg: &'a SimulationConfig, pop: &PopulationConfig, seed: u64) -> Result<Shared<'a>> {
    let sim = generate_population(pop, seed)?;
    let selection = resolve_selection(cfg, pop, &sim.frame, seed)?;
    let mut model_spec = OutcomeModelSpec::linear(1, 1);
    model_spec.source = cfg.mean_source;
    let pilot_models = match cfg.mean_source {
        MeanFitSource::Pilot => Some(fit_outcome_models(&sim.frame, &model_spec)?),
        MeanFitSource::SecondPhase => None,
    };
    let w0_source = W0Source::from_frame(&sim.frame)?;
    Ok(Shared {
        cfg,
        sim,
        selection,
        model_spec,
        pilot_models,
        w0_source,
        draw_seed: rng::derive_seed(seed, tags::SECOND_PHASE, 0),
    })
}

/// Runs the study. Replications are independent and may run in parallel;
/// results do not depend on the number of workers.
pub fn run_study(cfg: &SimulationConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let mut pop = cfg.population.clone();
    if let Some(target) = cfg.pve_target {
        pop.gamma = calibrate_gamma(target, &pop.alpha, &pop.gamma, pop.w0, pop.w1, cfg.seed)?;
        log::info!("calibrated variance intercept {:.6} for PVE {target}", pop.gamma[0]);
    }
    let per_rep = cfg.exec.map(cfg.n_reps, |r| run_replication(cfg, &pop, r));
    let records: Vec<ReplicationRecord> = per_rep.into_iter().flatten().collect();
    let failed: Vec<&ReplicationRecord> = records.iter().filter(|r| r.beta_hat.is_none()).collect();
    let mut failed_reps: Vec<usize> = failed.iter().map(|r| r.rep).collect();
    failed_reps.dedup();
    let n_failed = failed_reps.len();
    if n_failed > 0 {
        log::warn!("{n_failed} of {} replications had a failed approach", cfg.n_reps);
    }
    if n_failed as f64 > cfg.max_failure_rate * cfg.n_reps as f64 {
        return Err(Error::StudyAborted {
            failed: n_failed,
            total: cfg.n_reps,
            first_reason: failed[0].failure.clone().unwrap_or_default(),
        });
    }
    let true_beta = pop.true_mean();
    let mut result = StudyResult {
        config: cfg.clone(),
        gamma: pop.gamma,
        true_beta,
        n_reps: cfg.n_reps,
        n_failed_replications: n_failed,
        summaries: Vec::new(),
        records,
    };
    let var_1 = cfg
        .approaches
        .contains(&Approach::A1)
        .then(|| result.estimates(Approach::A1))
        .and_then(|e| (e.len() >= 2).then(|| sample_variance(&e)));
    if cfg.n_reps < 2 {
        log::warn!("a single replication has no Monte Carlo variance; relative efficiencies are omitted");
    }
    for &approach in &cfg.approaches {
        let est = result.estimates(approach);
        let m = if est.is_empty() { f64::NAN } else { mean(&est) };
        let variance = (est.len() >= 2).then(|| sample_variance(&est));
        let mse = est.iter().map(|b| (b - true_beta).powi(2)).sum::<f64>() / est.len() as f64;
        result.summaries.push(ApproachSummary {
            approach,
            n_success: est.len(),
            mean: m,
            variance,
            bias: m - true_beta,
            mse,
            re_vs_1: match (variance, var_1) {
                (Some(v), Some(v1)) if v1 > 0.0 => Some(v / v1),
                _ => None,
            },
        });
    }
    Ok(result)
}
