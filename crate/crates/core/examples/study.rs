//! Runs one cell of the simulation study and prints the relative
//! efficiencies.
//!
//! ```text
//! cargo run --release --example study -- 0.5 200 500
//! ```

use twophase::simharness::{compare_designs, run_study, SimulationConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let pve: f64 = args.first().map_or(Ok(0.5), |s| s.parse())?;
    let n_p: usize = args.get(1).map_or(Ok(200), |s| s.parse())?;
    let n_reps: usize = args.get(2).map_or(Ok(500), |s| s.parse())?;
    let mut cfg = SimulationConfig::preset(pve, n_p)?;
    cfg.n_reps = n_reps;
    let result = run_study(&cfg)?;
    for s in &result.summaries {
        println!(
            "approach {:>2}: n = {:4}, mean = {:.4}, var = {:.5}",
            s.approach,
            s.n_success,
            s.mean,
            s.variance.unwrap_or(f64::NAN)
        );
    }
    for row in compare_designs(&result)?.rows {
        println!("{} vs {}: {:.4} (se {:.4})", row.numerator, row.denominator, row.ratio, row.jackknife_se);
    }
    Ok(())
}
