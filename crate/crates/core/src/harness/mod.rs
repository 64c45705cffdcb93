//! Monte Carlo experiment runners.
//!
//! Every runner takes a serde-deserializable config plus [`RunSettings`] and
//! returns an [`ExperimentReport`] whose rows carry bounds fixed before any
//! sampling. Trial `t` always uses `SharedRandomness::new(seed).derive(t)`,
//! so reports are byte-identical across runs and thread counts.

mod audit;
mod checks;
mod compare;
mod diversity;
pub mod report;
pub mod suite;
mod sweep;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use audit::{run_dp_audit, DpAuditConfig};
pub use checks::{
    run_expectation_check, run_lemma_transfer_check, run_marginal_fidelity, run_relevance_check,
    run_sensitivity_check, ExpectationConfig, LemmaConfig, MarginalConfig, RelevanceConfig,
    SensitivityConfig,
};
pub use compare::{run_k_scaling, run_sampling_compare, KScalingConfig, SamplingCompareConfig};
pub use diversity::{
    run_diversity_check, run_individual_charging, DiversityConfig, DiversityMode,
    IndividualChargingConfig,
};
pub use report::{DataTable, ExperimentReport, MetricRow, OutputFormat, Relation};
pub use suite::SuiteSpec;
pub use sweep::{run_alpha_sweep, run_model_check, AlphaSweepConfig, ModelCheckConfig};

use crate::randomness::SharedRandomness;

/// Master seed and trial count shared by all runners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSettings {
    pub seed: u64,
    pub trials: u64,
}

impl RunSettings {
    pub fn new(seed: u64, trials: u64) -> Self {
        RunSettings { seed, trials }
    }

    pub fn master(&self) -> SharedRandomness {
        SharedRandomness::new(self.seed as u128)
    }
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            seed: 0,
            trials: 100_000,
        }
    }
}

/// Standard error of a proportion estimated from `hits` out of `trials`.
pub fn proportion_se(hits: u64, trials: u64) -> f64 {
    let p = hits as f64 / trials as f64;
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Standard error of a mean from integer sums of values and squares.
pub fn mean_se(sum: u64, sum_sq: u128, trials: u64) -> (f64, f64) {
    let n = trials as f64;
    let mean = sum as f64 / n;
    let var = (sum_sq as f64 / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Total variation distance between two vectors of probabilities.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0
}

fn timed<F: FnOnce() -> crate::Result<ExperimentReport>>(f: F) -> crate::Result<ExperimentReport> {
    let start = Instant::now();
    let mut report = f()?;
    report.wall_time = start.elapsed();
    log::info!("{}", report.summary());
    Ok(report)
}

fn require_trials(settings: &RunSettings, min: u64) -> crate::Result<()> {
    if settings.trials < min {
        return Err(crate::Error::Config(format!(
            "at least {min} trials required, got {}",
            settings.trials
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_errors() {
        assert_eq!(proportion_se(0, 100), 0.0);
        assert!((proportion_se(50, 100) - 0.05).abs() < 1e-12);
        // Values 1, 2, 3: mean 2, sample variance 1.
        let (mean, se) = mean_se(6, 14, 3);
        assert_eq!(mean, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn tv_distance() {
        assert_eq!(total_variation(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
        assert_eq!(total_variation(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
    }
}
