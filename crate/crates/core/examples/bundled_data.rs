//! Regenerates the synthetic inputs under `data/synthetic`.
//!
//! `cargo run -p twophase --example bundled_data -- data/synthetic`

use std::error::Error;
use std::fs;
use std::path::PathBuf;

use rand::Rng;
use twophase::datamodel::{draw_external_sample, generate_population, PopulationConfig, SelectionMechanism};
use twophase::rng::{self, tags};
use twophase::selection::KnownSelection;

const SEED: u64 = 7;
const N: usize = 20_000;
const EXTERNAL_RATE: f64 = 0.2;
/// Second-phase budget in outcome-cost units.
const SECOND_PHASE_MEASUREMENTS: f64 = 400.0;

fn selection() -> KnownSelection {
    KnownSelection::Logistic { intercept: -4.3, slopes: vec![1.0] }
}

fn main() -> Result<(), Box<dyn Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/synthetic".into()));
    fs::create_dir_all(&dir)?;
    let cfg = PopulationConfig {
        n: N,
        n_p: 200,
        lambda1: selection(),
        mechanism: SelectionMechanism::Bernoulli,
        ..Default::default()
    };
    let sim = generate_population(&cfg, SEED)?;
    let ehr: Vec<_> = sim.frame.first_phase().collect();

    let mut out = String::from("id,w0_1,w1_1,y,r1,r2,pilot,lambda1_true\n");
    for ind in &ehr {
        let i = ind.id as usize;
        let y = ind.y.map(|y| format!("{y:.6}")).unwrap_or_default();
        let pilot = u8::from(ind.pilot);
        out.push_str(&format!(
            "{},{:.6},{:.6},{y},1,0,{pilot},{:.6}\n",
            ind.id, ind.w0[0], sim.w1_all[i], sim.lambda1_true[i]
        ));
    }
    fs::write(dir.join("ehr.csv"), out)?;

    let external = draw_external_sample(&sim.frame, &KnownSelection::Constant { p: EXTERNAL_RATE }, SEED)?;
    let mut out = String::from("id,w0_1,samp_prob\n");
    for rec in &external {
        out.push_str(&format!("{},{:.6},{}\n", rec.id, rec.w0[0], rec.samp_prob));
    }
    fs::write(dir.join("external.csv"), out)?;

    // Recruited second phase: λ₂ ∝ √Var(Y | W̄₁) scaled to the budget.
    let root: Vec<f64> = ehr.iter().map(|i| sim.variance_true[i.id as usize].sqrt()).collect();
    let total: f64 = root.iter().sum();
    let mut r = rng::stream(SEED, tags::SECOND_PHASE, 0);
    let mut out = String::from("id,w0_1,w1_1,y,r1,r2,pilot,lambda2\n");
    for (ind, s) in ehr.iter().zip(&root) {
        let i = ind.id as usize;
        let l2 = (SECOND_PHASE_MEASUREMENTS * s / total).min(1.0);
        let r2 = r.random::<f64>() < l2;
        let y = if r2 || ind.pilot { format!("{:.6}", sim.y_all[i]) } else { String::new() };
        out.push_str(&format!(
            "{},{:.6},{:.6},{y},1,{},{},{l2:.8}\n",
            ind.id,
            ind.w0[0],
            sim.w1_all[i],
            u8::from(r2),
            u8::from(ind.pilot)
        ));
    }
    fs::write(dir.join("sampled.csv"), out)?;
    println!("first phase {}, external {}, population mean {:.4}", ehr.len(), external.len(), sim.population_mean());
    Ok(())
}
