//! Coordinated versus independent sampling on the same ensembles.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::report::{json_f64, DataTable, ExperimentReport, MetricRow};
use super::suite::SuiteSpec;
use super::{require_trials, timed, total_variation, RunSettings};
use crate::error::{Error, Result};
use crate::sampling::{PreparedEnsemble, Scratch};
use crate::synth::is_private_token;
use crate::trials::map_trials;

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingCompareConfig {
    pub suite: SuiteSpec,
    /// Require that no independent trial reaches `n/2` agreement.
    #[serde(default = "yes")]
    pub expect_no_independent_majority: bool,
    /// Allowed range of the fraction of coordinated trials with a token above `n/2`.
    #[serde(default)]
    pub dominant_fraction: Option<(f64, f64)>,
    /// Largest TV between the dominant-token law and the suite's special weights.
    #[serde(default)]
    pub dominant_tv: Option<f64>,
    /// Require every coordinated trial to reach full agreement.
    #[serde(default)]
    pub full_agreement: bool,
}

impl SamplingCompareConfig {
    pub fn new(suite: SuiteSpec) -> Self {
        SamplingCompareConfig {
            suite,
            expect_no_independent_majority: true,
            dominant_fraction: None,
            dominant_tv: None,
            full_agreement: false,
        }
    }

    /// Default checks for a named suite.
    pub fn preset(name: &str) -> Result<Self> {
        let mut config = SamplingCompareConfig::new(SuiteSpec::preset(name)?);
        match name {
            "planetz" => {
                config.dominant_fraction = Some((0.35, 0.65));
                config.dominant_tv = Some(0.1);
            }
            "uniform16" | "uniform64" => config.full_agreement = true,
            _ => {}
        }
        Ok(config)
    }
}

/// Per-trial summary: counts of the top two special tokens, the top
/// non-special token, and the overall top token index.
#[derive(Debug, Clone, Copy)]
struct TrialTops {
    top_special: u32,
    second_special: u32,
    top_other: u32,
    top_count: u32,
    top_index: usize,
}

fn tops(counts: &[u32], special: &[bool]) -> TrialTops {
    let mut t = TrialTops {
        top_special: 0,
        second_special: 0,
        top_other: 0,
        top_count: 0,
        top_index: 0,
    };
    for (j, &c) in counts.iter().enumerate() {
        if special[j] {
            if c > t.top_special {
                t.second_special = t.top_special;
                t.top_special = c;
            } else if c > t.second_special {
                t.second_special = c;
            }
        } else if c > t.top_other {
            t.top_other = c;
        }
        if c > t.top_count {
            t.top_count = c;
            t.top_index = j;
        }
    }
    t
}

fn special_mask(prepared: &PreparedEnsemble) -> Vec<bool> {
    prepared.tokens().iter().map(|&t| !is_private_token(t)).collect()
}

/// Sorted-curve data: columns `mode, rank, top_special, second_special,
/// top_nonspecial`, each curve sorted in decreasing order, frequencies as
/// fractions of `n`.
pub fn run_sampling_compare(config: &SamplingCompareConfig, settings: &RunSettings) -> Result<ExperimentReport> {
    timed(|| {
        require_trials(settings, 1)?;
        let ensemble = config.suite.build()?;
        let prepared = PreparedEnsemble::new(&ensemble)?;
        let special = special_mask(&prepared);
        let n = prepared.n() as u32;
        let per_trial = map_trials(settings.trials, &settings.master(), Scratch::default, |scratch, _, rho| {
            prepared.coordinated_counts(&rho, scratch);
            let coordinated = tops(&scratch.counts, &special);
            prepared.independent_counts(&mut rho.rng(), scratch);
            let independent = tops(&scratch.counts, &special);
            (coordinated, independent)
        });
        let trials = settings.trials as f64;
        let mut report = ExperimentReport::new("compare-sampling", config, settings.trials)?;

        let coordinated: Vec<TrialTops> = per_trial.iter().map(|p| p.0).collect();
        let independent: Vec<TrialTops> = per_trial.iter().map(|p| p.1).collect();

        let independent_majority = independent.iter().filter(|t| 2 * t.top_count >= n).count();
        if config.expect_no_independent_majority {
            report.push(MetricRow::at_most(
                "independent_majority_trials",
                independent_majority as f64,
                0.0,
                0.0,
            ));
        }
        if config.full_agreement {
            let full = coordinated.iter().filter(|t| t.top_count == n).count();
            report.push(MetricRow::at_least(
                "coordinated_full_agreement_fraction",
                full as f64 / trials,
                1.0,
                0.0,
            ));
        }
        let dominant: Vec<&TrialTops> = coordinated.iter().filter(|t| 2 * t.top_count > n).collect();
        if let Some((lo, hi)) = config.dominant_fraction {
            report.push(MetricRow::in_range(
                "coordinated_dominant_fraction",
                dominant.len() as f64 / trials,
                lo,
                hi,
            ));
        }
        if let Some(max_tv) = config.dominant_tv {
            let weights = config.suite.special_weights().ok_or_else(|| {
                Error::Config("dominant_tv needs a suite with known special weights".into())
            })?;
            // Last slot collects dominant tokens outside the special set.
            let mut observed = vec![0.0; weights.len() + 1];
            for t in &dominant {
                let token = prepared.tokens()[t.top_index];
                let slot = weights.iter().position(|&(w, _)| w == token).unwrap_or(weights.len());
                observed[slot] += 1.0;
            }
            let events = dominant.len().max(1) as f64;
            observed.iter_mut().for_each(|x| *x /= events);
            let mut expected: Vec<f64> = weights.iter().map(|&(_, w)| w).collect();
            expected.push(0.0);
            report.push(MetricRow::at_most(
                "dominant_token_tv",
                if dominant.is_empty() { f64::NAN } else { total_variation(&observed, &expected) },
                max_tv,
                0.0,
            ));
        }

        let mut table = DataTable::new(["mode", "rank", "top_special", "second_special", "top_nonspecial"]);
        for (mode, rows) in [("independent", &independent), ("coordinated", &coordinated)] {
            let sorted = |f: fn(&TrialTops) -> u32| {
                let mut v: Vec<u32> = rows.iter().map(f).collect();
                v.sort_unstable_by(|a, b| b.cmp(a));
                v
            };
            let a = sorted(|t| t.top_special);
            let b = sorted(|t| t.second_special);
            let c = sorted(|t| t.top_other);
            for rank in 0..rows.len() {
                table.push(vec![
                    Value::from(mode),
                    Value::from(rank),
                    json_f64(a[rank] as f64 / n as f64),
                    json_f64(b[rank] as f64 / n as f64),
                    json_f64(c[rank] as f64 / n as f64),
                ]);
            }
        }
        report.table = Some(table);
        Ok(report)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KScalingConfig {
    pub n: usize,
    /// Two numbers of special tokens; the second is typically twice the first.
    pub k_values: (usize, usize),
    pub private_weight: f64,
    /// Relative tolerance on the independent top-frequency ratio `k2/k1`.
    pub independent_tolerance: f64,
    /// Relative tolerance on the coordinated top-frequency ratio `1`.
    pub coordinated_tolerance: f64,
}

impl Default for KScalingConfig {
    fn default() -> Self {
        KScalingConfig {
            n: 4000,
            k_values: (4, 8),
            private_weight: 0.5,
            independent_tolerance: 0.1,
            coordinated_tolerance: 0.05,
        }
    }
}

/// Mean top special-token frequency under both modes for uniform special
/// weights over `k1` and `k2` tokens. Independent frequencies scale like
/// `1/k`; the coordinated winner's frequency does not depend on `k`.
pub fn run_k_scaling(config: &KScalingConfig, settings: &RunSettings) -> Result<ExperimentReport> {
    timed(|| {
        require_trials(settings, 2)?;
        let (k1, k2) = config.k_values;
        if k1 == 0 || k2 == 0 || k1 == k2 {
            return Err(Error::Config("k_values must be two distinct positive sizes".into()));
        }
        let mut means = Vec::new();
        let mut table = DataTable::new(["k", "mode", "mean_top_special"]);
        let master = settings.master();
        for (idx, k) in [k1, k2].into_iter().enumerate() {
            let suite = SuiteSpec::Planetz {
                n: config.n,
                weights: vec![1.0; k],
                private_weight: config.private_weight,
            };
            let ensemble = suite.build()?;
            let prepared = PreparedEnsemble::new(&ensemble)?;
            let special = special_mask(&prepared);
            let per_trial = map_trials(settings.trials, &master.derive(idx as u64), Scratch::default, |scratch, _, rho| {
                prepared.coordinated_counts(&rho, scratch);
                let c = tops(&scratch.counts, &special).top_special as u64;
                prepared.independent_counts(&mut rho.rng(), scratch);
                let i = tops(&scratch.counts, &special).top_special as u64;
                (c, i)
            });
            let denom = (settings.trials * config.n as u64) as f64;
            let coordinated = per_trial.iter().map(|p| p.0).sum::<u64>() as f64 / denom;
            let independent = per_trial.iter().map(|p| p.1).sum::<u64>() as f64 / denom;
            table.push(vec![Value::from(k), Value::from("coordinated"), json_f64(coordinated)]);
            table.push(vec![Value::from(k), Value::from("independent"), json_f64(independent)]);
            means.push((coordinated, independent));
        }
        let mut report = ExperimentReport::new("k-scaling", config, settings.trials * 2)?;
        let expected = k2 as f64 / k1 as f64;
        report.push(MetricRow::within(
            "independent_top_ratio",
            means[0].1 / means[1].1,
            expected,
            config.independent_tolerance * expected,
        ));
        report.push(MetricRow::within(
            "coordinated_top_ratio",
            means[0].0 / means[1].0,
            1.0,
            config.coordinated_tolerance,
        ));
        report.table = Some(table);
        Ok(report)
    })
}
