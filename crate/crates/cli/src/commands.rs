use std::collections::HashMap;
use std::path::Path;

use anyhow::{anyhow, bail, Result};
use serde::Serialize;
use twophase::datamodel::{format_f64, read_external, read_frame, FrameSchema, PopulationFrame, W0Source};
use twophase::design::{
    feasible_ne_range, optimal_lambda2, v1_from_mean_model, DesignInputs, DesignSolution, NeRange, OutcomeMoments,
    SupportPoint,
};
use twophase::estimator::{bootstrap_ci, fit_outcome_models, BootstrapOptions, InfluenceContext, OutcomeModelSpec};
use twophase::regress::{compute_pve, fit_variance, DesignSpec, VarianceFitOptions};
use twophase::selection::{fit_composed, fit_direct, CompositionOptions, SelectionModel};
use twophase::simharness::{compare_designs, run_study, Approach, ReTable, SimulationConfig, StudyResult};
use twophase::special::sample_variance;
use twophase::Error;

use crate::config::{DesignConfig, EstimateConfig, SelectConfig, SelectionSource, VarianceForm};
use crate::output::{read_artifact, Stamp};

#[derive(Serialize)]
struct StudyOutput<'a> {
    #[serde(flatten)]
    study: &'a StudyResult,
    relative_efficiency: Option<ReTable>,
}

pub fn simulate(cfg: &SimulationConfig, stamp: &Stamp, emit_plot_data: bool) -> Result<()> {
    let result = run_study(cfg)?;
    let table = if cfg.n_reps < 2 {
        None
    } else {
        match compare_designs(&result) {
            Ok(t) => Some(t),
            Err(e) => {
                log::warn!("relative efficiencies unavailable: {e}");
                None
            }
        }
    };
    stamp.write_json("study.json", &StudyOutput { study: &result, relative_efficiency: table.clone() })?;
    stamp.write_csv("study.csv", &result.to_csv())?;
    if emit_plot_data {
        let mut body = String::from("numerator,denominator,ratio,jackknife_se\n");
        for row in table.iter().flat_map(|t| &t.rows) {
            body.push_str(&format!(
                "{},{},{},{}\n",
                row.numerator,
                row.denominator,
                format_f64(row.ratio),
                format_f64(row.jackknife_se)
            ));
        }
        stamp.write_csv("plot_data.csv", &body)?;
    }
    for s in &result.summaries {
        println!(
            "approach {:>2}: n = {}, mean = {:.4}, variance = {}",
            s.approach,
            s.n_success,
            s.mean,
            s.variance.map_or("NA".into(), |v| format!("{v:.5}"))
        );
    }
    if let Some(t) = &table {
        for row in &t.rows {
            if row.numerator != row.denominator {
                println!("{} vs {}: {:.4} (se {:.4})", row.numerator, row.denominator, row.ratio, row.jackknife_se);
            }
        }
    }
    if let Some(row) = table.as_ref().and_then(|t| t.get(Approach::A3a, Approach::A2)) {
        log::info!("3a versus 2: {:.4}", row.ratio);
    }
    Ok(())
}

fn frame_schema(population_size: Option<usize>) -> FrameSchema {
    FrameSchema { population_size }
}

pub fn select(cfg: &SelectConfig, stamp: &Stamp) -> Result<()> {
    let frame = read_frame(&cfg.ehr, &frame_schema(cfg.population_size))?;
    let model = match &cfg.external {
        Some(path) => {
            let external = read_external(path)?;
            let ehr: Vec<Vec<f64>> = frame.first_phase().map(|i| i.w0.clone()).collect();
            fit_composed(&ehr, &external, &CompositionOptions { quadratic: cfg.quadratic, clip: cfg.clip })?
        }
        None => fit_direct(&frame, cfg.clip)?,
    };
    stamp.write_json("selection.json", &model)?;
    let mut body = String::from("id,lambda1_hat\n");
    for ind in frame.first_phase() {
        body.push_str(&format!("{},{}\n", ind.id, format_f64(model.evaluate(&ind.w0)?)));
    }
    stamp.write_csv("lambda1.csv", &body)?;
    Ok(())
}

fn load_selection(src: &SelectionSource) -> Result<SelectionModel> {
    let model = match (&src.model, &src.known) {
        (Some(path), None) => read_artifact::<SelectionModel>(path)?,
        (None, Some(known)) => {
            known.validate()?;
            SelectionModel::known(known.clone())
        }
        _ => bail!(Error::Config("selection needs exactly one of `model` or `known`".into())),
    };
    Ok(match src.clip {
        Some(clip) => model.with_clip(clip),
        None => model,
    })
}

/// Reads a tabulated support: `prob,lambda1,v2,c2` with optional `id`,
/// `v1`, `w0_*` and `w1_*` columns.
fn read_support(path: &Path) -> Result<Vec<SupportPoint>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::Schema(format!("missing required column `{name}`")));
    let (prob, lambda1, v2, c2) = (need("prob")?, need("lambda1")?, need("v2")?, need("c2")?);
    let (id, v1) = (col("id"), col("v1"));
    let numbered = |prefix: &str| -> Vec<usize> { (1..).map_while(|j| col(&format!("{prefix}_{j}"))).collect() };
    let (w0_cols, w1_cols) = (numbered("w0"), numbered("w1"));
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let num = |c: usize| -> Result<f64> {
            rec[c].trim().parse::<f64>().map_err(|_| {
                anyhow!(Error::Row {
                    row,
                    message: format!("column `{}`: non-numeric value `{}`", &header[c], &rec[c])
                })
            })
        };
        let id = match id {
            Some(c) => Some(rec[c].trim().parse::<u64>().map_err(|_| {
                anyhow!(Error::Row { row, message: format!("column `id`: not a non-negative integer: `{}`", &rec[c]) })
            })?),
            None => Some(i as u64),
        };
        out.push(SupportPoint {
            id,
            w0: w0_cols.iter().map(|&c| num(c)).collect::<Result<_>>()?,
            w1: w1_cols.iter().map(|&c| num(c)).collect::<Result<_>>()?,
            prob: num(prob)?,
            lambda1: num(lambda1)?,
            v1: v1.map(num).transpose()?.unwrap_or(0.0),
            v2: num(v2)?,
            c2: num(c2)?,
        });
    }
    Ok(out)
}

fn inputs_from_frame(cfg: &DesignConfig, path: &Path, seed: u64) -> Result<DesignInputs> {
    let frame = read_frame(path, &frame_schema(cfg.population_size))?;
    let selection = load_selection(
        cfg.selection.as_ref().ok_or_else(|| Error::Config("a frame-based design needs a `selection` table".into()))?,
    )?;
    let (k, m) = (frame.w0_dim(), frame.w1_dim());
    let spec = OutcomeModelSpec::linear(k, m);
    let (mean_w0, mean_w1) = fit_outcome_models(&frame, &spec)?;
    let (x, y): (Vec<Vec<f64>>, Vec<f64>) =
        frame.pilot().map(|i| (i.w_bar().expect("pilot rows carry w1"), i.y.expect("pilot rows carry y"))).unzip();
    let names = DesignSpec::w_names(k, m);
    let vspec = match cfg.variance {
        VarianceForm::Quadratic => DesignSpec::quadratic(names),
        VarianceForm::Linear => DesignSpec::linear(names),
    };
    let variance =
        fit_variance(&x, &y, &mean_w1, &vspec, &VarianceFitOptions { reml: cfg.reml, ..Default::default() })?;
    let var_y = sample_variance(&y);
    let moments = match compute_pve(&mean_w0, &frame, Some(var_y)) {
        Ok(pve) => Some(OutcomeMoments { var_y, pve }),
        Err(e) => {
            log::warn!("design variance not reported: {e}");
            None
        }
    };
    let v1 = v1_from_mean_model(&mean_w1, &frame, cfg.v1_draws, seed)?;
    Ok(DesignInputs::from_frame(&frame, &selection, &variance, v1, cfg.cost.clone(), cfg.weighting, moments)?)
}

#[derive(Serialize)]
struct SweepRow {
    n_e: usize,
    feasible: bool,
    predicted_variance: Option<f64>,
    relative_efficiency: Option<f64>,
}

#[derive(Serialize)]
struct DesignOutput {
    ne_range: NeRange,
    solution: DesignSolution,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    sweep: Vec<SweepRow>,
}

fn sweep(inputs: &DesignInputs, range: &NeRange, points: usize) -> Vec<SweepRow> {
    if points == 0 {
        return Vec::new();
    }
    let lo = range.n_min.ceil().max(0.0) as usize;
    let hi_excl = range.n_max.map_or(inputs.n as f64, |m| m.min(inputs.n as f64 + 1.0));
    let hi = (hi_excl.ceil() as usize).saturating_sub(1).min(inputs.n);
    if hi < lo {
        return Vec::new();
    }
    let step = if points > 1 { (hi - lo) as f64 / (points - 1) as f64 } else { 0.0 };
    let mut values: Vec<usize> = (0..points).map(|j| lo + (j as f64 * step).round() as usize).collect();
    values.dedup();
    values
        .into_iter()
        .map(|n_e| {
            let at = DesignInputs { n_e, ..inputs.clone() };
            match optimal_lambda2(&at) {
                Ok(sol) => SweepRow {
                    n_e,
                    feasible: sol.feasible,
                    predicted_variance: sol.predicted_variance,
                    relative_efficiency: sol.relative_efficiency,
                },
                Err(_) => SweepRow { n_e, feasible: false, predicted_variance: None, relative_efficiency: None },
            }
        })
        .collect()
}

pub fn design(cfg: &DesignConfig, stamp: &Stamp) -> Result<()> {
    let inputs = match (&cfg.frame, &cfg.support) {
        (Some(frame), None) => inputs_from_frame(cfg, frame, stamp.seed)?,
        (None, Some(support)) => {
            let points = read_support(support)?;
            let n = cfg.n.ok_or_else(|| Error::Config("a tabulated support needs `n`".into()))?;
            let n_e = cfg.n_e.ok_or_else(|| Error::Config("a tabulated support needs `n_e`".into()))?;
            let moments = match (cfg.var_y, cfg.pve) {
                (Some(var_y), Some(pve)) => Some(OutcomeMoments { var_y, pve }),
                (None, None) => None,
                _ => bail!(Error::Config("`var_y` and `pve` go together".into())),
            };
            DesignInputs::new(points, cfg.cost.clone(), n, n_e, moments)?
        }
        _ => bail!(Error::Config("design needs exactly one of `frame` or `support`".into())),
    };
    let range = feasible_ne_range(&inputs);
    let range_report = format!(
        "n_e = {} with feasible range [{:.1}, {})",
        inputs.n_e,
        range.n_min,
        range.n_max.map_or("unbounded".to_string(), |m| format!("{m:.1}"))
    );
    let solution = match optimal_lambda2(&inputs) {
        Err(Error::Infeasible { reason }) => bail!(Error::Infeasible { reason: format!("{reason}; {range_report}") }),
        other => other?,
    };
    let table = sweep(&inputs, &range, cfg.sweep_points);
    let feasible = solution.feasible;
    let report = format!("{range_report}; {} support points exceed 1", solution.cap_violations);
    let mut body = String::from("id,lambda2_star\n");
    for (i, p) in solution.points.iter().enumerate() {
        body.push_str(&format!("{},{}\n", p.id.unwrap_or(i as u64), format_f64(p.lambda2)));
    }
    stamp.write_json("design.json", &DesignOutput { ne_range: range, solution, sweep: table })?;
    if !feasible {
        bail!(Error::Infeasible { reason: report });
    }
    stamp.write_csv("lambda2.csv", &body)?;
    println!("{report}");
    Ok(())
}

#[derive(serde::Deserialize)]
struct DesignArtifact {
    solution: DesignSolution,
}

/// Fills missing λ₂ on first-phase rows from a design artifact, by id.
fn attach_lambda2(frame: PopulationFrame, design: &DesignSolution) -> Result<PopulationFrame> {
    let by_id: HashMap<u64, f64> = design.points.iter().filter_map(|p| p.id.map(|id| (id, p.lambda2))).collect();
    let n = frame.n();
    let mut rows = frame.into_individuals();
    for (row, ind) in rows.iter_mut().enumerate() {
        if ind.r1 && ind.lambda2.is_none() {
            let l2 = by_id.get(&ind.id).copied().ok_or_else(|| Error::Row {
                row: row + 1,
                message: format!("individual {} has no second-phase probability in the design", ind.id),
            })?;
            ind.lambda2 = Some(l2);
        }
    }
    Ok(PopulationFrame::new(rows, n)?)
}

pub fn estimate(cfg: &EstimateConfig, stamp: &Stamp) -> Result<()> {
    let mut frame = read_frame(&cfg.frame, &frame_schema(cfg.population_size))?;
    if let Some(path) = &cfg.design {
        let design: DesignArtifact = read_artifact(path)?;
        frame = attach_lambda2(frame, &design.solution)?;
    }
    let selection = load_selection(&cfg.selection)?;
    let w0_source = match (&cfg.external, &cfg.w0_distribution) {
        (Some(path), None) => read_external(path)?,
        (None, Some(distribution)) => W0Source::KnownDistribution { distribution: distribution.clone() },
        (None, None) => W0Source::from_frame(&frame)?,
        _ => bail!(Error::Config("give at most one of `external` and `w0_distribution`".into())),
    };
    let spec = OutcomeModelSpec {
        robust: cfg.robust,
        source: cfg.mean_source,
        ..OutcomeModelSpec::linear(frame.w0_dim(), frame.w1_dim())
    };
    let (mean_w0, mean_w1) = fit_outcome_models(&frame, &spec)?;
    let ctx = InfluenceContext { selection, mean_w0, mean_w1, w0_source };
    let opts = BootstrapOptions {
        n_boot: cfg.n_boot,
        seed: stamp.seed,
        refit: cfg.refit.then(|| spec.clone()),
        exec: Default::default(),
    };
    let result = bootstrap_ci(&ctx, &frame, &opts)?;
    stamp.write_json("estimate.json", &result)?;
    println!("beta_hat = {:.6}, 95% CI [{:.6}, {:.6}]", result.beta_hat, result.ci[0], result.ci[1]);
    Ok(())
}
