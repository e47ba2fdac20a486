use std::collections::HashMap;

use rand::Rng;

use super::DesignSolution;
use crate::datamodel::PopulationFrame;
use crate::rng::{self, tags};
use crate::{Error, Result};

/// Independent Bernoulli(λ₂) second-phase draws for every first-phase row.
///
/// Rows are matched to solution points by id, or by exact W̄₁ when the
/// solution was computed on a support without ids. Every first-phase row
/// records its λ₂; outcomes of newly drawn rows stay missing until measured.
pub fn draw_second_phase(frame: &PopulationFrame, solution: &DesignSolution, seed: u64) -> Result<PopulationFrame> {
    let by_id: HashMap<u64, usize> =
        solution.points.iter().enumerate().filter_map(|(i, p)| p.id.map(|id| (id, i))).collect();
    let lookup_bar = |w_bar: &[f64]| {
        solution.points.iter().position(|p| {
            p.w0.len() + p.w1.len() == w_bar.len() && p.w0.iter().chain(&p.w1).zip(w_bar).all(|(a, b)| a == b)
        })
    };
    let mut rng = rng::stream(seed, tags::SECOND_PHASE, 0);
    let mut rows = frame.individuals().to_vec();
    for ind in rows.iter_mut().filter(|i| i.r1) {
        let idx = match by_id.get(&ind.id) {
            Some(&i) => i,
            None => lookup_bar(&ind.w_bar().expect("first-phase rows carry w1"))
                .ok_or_else(|| Error::invalid(format!("no design point for individual {}", ind.id)))?,
        };
        let l2 = solution.points[idx].lambda2;
        if !(l2 > 0.0 && l2 <= 1.0) {
            return Err(Error::Infeasible {
                reason: format!("second-phase probability {l2} for individual {} is not in (0, 1]", ind.id),
            });
        }
        let u: f64 = rng.random();
        ind.r2 = u < l2;
        ind.lambda2 = Some(l2);
        if !ind.r2 && !ind.pilot {
            ind.y = None;
        }
    }
    PopulationFrame::new(rows, frame.n())
}
