use super::MeanModelFit;
use crate::datamodel::PopulationFrame;
use crate::special::{mean, sample_variance};
use crate::{Error, Result};

/// Proportion of outcome variance explained by W₀: the variance of the
/// fitted E(Y | W₀) over every frame row divided by Var(Y).
///
/// `var_y` defaults to the sample variance of the observed outcomes.
pub fn compute_pve(mean_fit_w0: &MeanModelFit, frame: &PopulationFrame, var_y: Option<f64>) -> Result<f64> {
    if frame.individuals().len() < 2 {
        return Err(Error::invalid("PVE needs at least two rows"));
    }
    let var_y = match var_y {
        Some(v) => v,
        None => {
            let ys: Vec<f64> = frame.individuals().iter().filter_map(|i| i.y).collect();
            if ys.len() < 2 {
                return Err(Error::invalid("PVE needs at least two observed outcomes"));
            }
            sample_variance(&ys)
        }
    };
    if !(var_y > 0.0) || !var_y.is_finite() {
        return Err(Error::invalid("outcome variance is zero; PVE undefined"));
    }
    let fitted: Vec<f64> = frame.individuals().iter().map(|i| mean_fit_w0.predict(&i.w0)).collect();
    let m = mean(&fitted);
    let v = fitted.iter().map(|f| (f - m) * (f - m)).sum::<f64>() / fitted.len() as f64;
    Ok((v / var_y).clamp(0.0, 1.0))
}
