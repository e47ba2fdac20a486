//! The Monte Carlo study: repeated populations, pilot fits, designs, draws
//! and estimates for each sampling approach, aggregated into relative
//! efficiencies.
//!
//! Approaches:
//!
//! * `1`: simple random second phase, sample mean of the measured outcomes.
//! * `2`: simple random second phase, RR estimator.
//! * `3a`: optimal second phase with a fitted log-quadratic variance model.
//! * `3b`: as `3a` with the squared terms left out of the variance model.
//! * `3c`: as `3a` with the true variance function.

mod calibrate;
mod compare;
mod config;
mod run;

pub use calibrate::{calibrate_gamma, population_pve};
pub use compare::{compare_designs, ReRow, ReTable};
pub use config::{Approach, Lambda1Mode, Misspecification, SimulationConfig};
pub use run::{run_replication, run_study, ApproachSummary, ReplicationRecord, StudyResult};
