//! End-to-end diversity contracts of the aggregators, and individual charging.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::checks::{merge_vec, token_levels};
use super::report::{json_f64, DataTable, ExperimentReport, MetricRow};
use super::suite::SuiteSpec;
use super::{mean_se, proportion_se, require_trials, timed, RunSettings};
use crate::accounting::{default_hit_budget, ChargeLedgerView, PrivacyLedger};
use crate::aggregation::{aggregate_heterogeneous_individual, heterogeneous_from_histogram, homogeneous_detailed};
use crate::error::{Error, Result};
use crate::mechanisms::ThresholdOutcome;
use crate::sampling::{coordinated_sample, PreparedEnsemble, Scratch};
use crate::trials::{fold_trials, map_trials};
use crate::types::{AggregateOutcome, DiversityParams, PrivacyParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiversityMode {
    Homogeneous,
    HeterogeneousSampled { k_samples: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiversityConfig {
    pub mode: DiversityMode,
    pub suite: SuiteSpec,
    pub mu: f64,
    pub eps0: f64,
    pub delta0: f64,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        DiversityConfig {
            mode: DiversityMode::Homogeneous,
            suite: SuiteSpec::Uniform { n: 100, k: 4 },
            mu: 2.0,
            eps0: 2.0,
            delta0: 1e-3,
        }
    }
}

/// Checks the `(tau, beta, gamma)` contract of an aggregator on a suite.
///
/// For every token `j` and level `q` with `c_{j,q}` at least the transfer
/// threshold, `P_j >= beta (c_{j,q}/n) q`; for every token,
/// `P_j <= gamma * mean_i p^(i)_j`. In homogeneous mode the threshold is
/// `min(tau, n)`, and each answered query is also checked against the noisy
/// maximizer's error contract.
///
/// Data columns: `token, q, c_jq, empirical, se, transfer_bound, relevance_bound`.
pub fn run_diversity_check(config: &DiversityConfig, settings: &RunSettings) -> Result<ExperimentReport> {
    timed(|| {
        require_trials(settings, 1)?;
        let ensemble = config.suite.build()?;
        let prepared = PreparedEnsemble::new(&ensemble)?;
        let n = prepared.n() as u64;
        let m = prepared.tokens().len();
        let (support_bound, homogeneous) = match config.mode {
            DiversityMode::Homogeneous => (m, true),
            DiversityMode::HeterogeneousSampled { k_samples } => {
                if k_samples == 0 {
                    return Err(Error::Config("k_samples must be at least 1".into()));
                }
                (1, false)
            }
        };
        let params = PrivacyParams::calibrated(
            config.eps0,
            config.delta0,
            config.eps0,
            config.delta0,
            support_bound,
            n,
        )?;
        let contract = if homogeneous {
            DiversityParams::homogeneous(config.mu, n, params.l)
        } else {
            DiversityParams::heterogeneous(config.mu, params.l)
        };
        let tau = contract.tau.min(n);

        // Slots: one per token, then low-count answers under a held contract,
        // then contract violations.
        let (low_slot, violation_slot) = (m, m + 1);
        let tallies = fold_trials(
            settings.trials,
            &settings.master(),
            Scratch::default,
            || vec![0u64; m + 2],
            |scratch, acc, _, rho| {
                prepared.coordinated_counts(&rho, scratch);
                let hist = prepared.counts_to_histogram(&scratch.counts);
                let mut rng = rho.rng();
                let outcome = match config.mode {
                    DiversityMode::Homogeneous => {
                        let (outcome, res) =
                            homogeneous_detailed(&hist, &params, &mut rng).expect("nonempty histogram");
                        let held = res.satisfies_contract(&hist);
                        if !held {
                            acc[violation_slot] += 1;
                        }
                        if let AggregateOutcome::Token { token, .. } = outcome {
                            if held && 2 * hist.count(token) <= n {
                                acc[low_slot] += 1;
                            }
                        }
                        outcome
                    }
                    DiversityMode::HeterogeneousSampled { k_samples } => {
                        heterogeneous_from_histogram(&hist, &params, k_samples, &mut rng)
                            .expect("nonempty histogram")
                    }
                };
                if let Some(token) = outcome.token() {
                    let idx = prepared.token_index(token).expect("answered token is in the ensemble");
                    acc[idx] += 1;
                }
            },
            merge_vec,
        );

        let mut report = ExperimentReport::new("diversity-check", config, settings.trials)?;
        let mut table = DataTable::new([
            "token",
            "q",
            "c_jq",
            "empirical",
            "se",
            "transfer_bound",
            "relevance_bound",
        ]);
        let expected = prepared.expected_counts();
        let levels = token_levels(&prepared);
        for (j, &token) in prepared.tokens().iter().enumerate() {
            let empirical = tallies[j] as f64 / settings.trials as f64;
            let se = proportion_se(tallies[j], settings.trials);
            let relevance = contract.gamma * expected[j] / n as f64;
            report.push(MetricRow::at_most(
                format!("relevance token={token}"),
                empirical,
                relevance,
                3.0 * se,
            ));
            for &q in &levels[j] {
                let c_jq = prepared.support_count(token, q) as u64;
                if c_jq < tau {
                    report.skipped += 1;
                    continue;
                }
                let transfer = contract.beta * (c_jq as f64 / n as f64) * q;
                report.push(MetricRow::at_least(
                    format!("transfer token={token} q={q}"),
                    empirical,
                    transfer,
                    3.0 * se,
                ));
                table.push(vec![
                    Value::from(token.0),
                    json_f64(q),
                    Value::from(c_jq),
                    json_f64(empirical),
                    json_f64(se),
                    json_f64(transfer),
                    json_f64(relevance),
                ]);
            }
        }
        if homogeneous {
            report.push(MetricRow::at_most(
                "answered_below_half_with_contract",
                tallies[low_slot] as f64,
                0.0,
                0.0,
            ));
            let violations = tallies[violation_slot];
            report.push(MetricRow::at_most(
                "contract_violation_rate",
                violations as f64 / settings.trials as f64,
                params.delta0,
                3.0 * proportion_se(violations, settings.trials),
            ));
        }
        report.table = Some(table);
        Ok(report)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndividualChargingConfig {
    pub groups: usize,
    pub group_size: usize,
    pub eps0: f64,
    pub delta0: f64,
    pub per_teacher_limit: u64,
    /// Query cap for the run against a removing ledger.
    pub max_queries: u64,
}

impl Default for IndividualChargingConfig {
    fn default() -> Self {
        IndividualChargingConfig {
            groups: 10,
            group_size: 128,
            eps0: 1.0,
            delta0: 1e-3,
            per_teacher_limit: 1,
            max_queries: 1000,
        }
    }
}

/// Ledger view that records charges without removing anyone.
struct Unlimited(usize);

impl ChargeLedgerView for Unlimited {
    fn n_teachers(&self) -> usize {
        self.0
    }

    fn is_live(&self, teacher: usize) -> bool {
        teacher < self.0
    }

    fn remaining(&self, _teacher: usize) -> u64 {
        u64::MAX
    }

    fn charge(&mut self, _teachers: &[usize]) -> Result<Vec<usize>> {
        Ok(Vec::new())
    }
}

/// Per-teacher charging on a group ensemble.
///
/// Phase one runs `trials` independent queries against a ledger that never
/// removes teachers and measures the charged-set size per Between outcome,
/// checking exactly that every charged teacher was subsampled and voted for
/// the returned token. Phase two runs queries in sequence against a real
/// ledger until every teacher is removed or `max_queries` is reached, and
/// counts token answers.
///
/// Data columns: `phase, metric, value`.
pub fn run_individual_charging(
    config: &IndividualChargingConfig,
    settings: &RunSettings,
) -> Result<ExperimentReport> {
    timed(|| {
        require_trials(settings, 1)?;
        let ensemble = SuiteSpec::Groups {
            groups: config.groups,
            group_size: config.group_size,
            tokens_per_group: 1,
        }
        .build()?;
        let n = ensemble.len();
        let params = PrivacyParams::calibrated(config.eps0, config.delta0, config.eps0, config.delta0, 1, n as u64)?;
        let l = params.l;

        let events = map_trials(
            settings.trials,
            &settings.master().derive(0),
            || (),
            |_, _, rho| -> Result<Option<(u64, bool)>> {
                let mut view = Unlimited(n);
                let query = aggregate_heterogeneous_individual(&ensemble, &rho, &params, &mut view, &mut rho.rng())?;
                let (votes, _) = coordinated_sample(&ensemble, &rho)?;
                let consistent = query
                    .charged
                    .iter()
                    .all(|&i| votes.0[i] == query.candidate && query.sampled_voters.contains(&i));
                let mut distinct = query.charged.clone();
                distinct.dedup();
                let consistent = consistent && distinct.len() == query.charged.len();
                Ok(match query.threshold_outcome {
                    ThresholdOutcome::Between => Some((query.charged.len() as u64, consistent)),
                    _ if consistent && query.charged.is_empty() => None,
                    _ => Some((0, false)),
                })
            },
        );
        let (mut sum, mut sum_sq, mut between, mut violations) = (0u64, 0u128, 0u64, 0u64);
        for event in events {
            match event? {
                Some((_, false)) => violations += 1,
                Some((size, true)) => {
                    between += 1;
                    sum += size;
                    sum_sq += (size as u128) * (size as u128);
                }
                None => {}
            }
        }

        let mut ledger = PrivacyLedger::new(&params, n, u64::MAX, config.per_teacher_limit)?;
        let live_master = settings.master().derive(1);
        let (mut queries, mut answered) = (0u64, 0u64);
        while queries < config.max_queries && !ledger.live_teachers().is_empty() {
            let rho = live_master.derive(queries);
            let query = aggregate_heterogeneous_individual(&ensemble, &rho, &params, &mut ledger, &mut rho.rng())?;
            queries += 1;
            if query.outcome.is_token() {
                answered += 1;
            }
        }
        let whole_ensemble_budget = default_hit_budget(1.0, config.eps0)?.hits;

        let mut report = ExperimentReport::new("individual-charging", config, settings.trials)?;
        if between == 0 {
            report.push(MetricRow::at_least("between_events", 0.0, 1.0, 0.0));
        } else {
            let (mean, se) = mean_se(sum, sum_sq, between);
            report.push(MetricRow::at_most("charged_set_mean", mean, 3.0 * l as f64, 3.0 * se));
        }
        report.push(MetricRow::at_most("charging_invariant_violations", violations as f64, 0.0, 0.0));
        report.push(MetricRow::at_least(
            "answered_before_exhaustion",
            answered as f64,
            config.groups as f64 / 2.0,
            0.0,
        ));

        let mut table = DataTable::new(["phase", "metric", "value"]);
        for (phase, metric, value) in [
            ("unlimited", "between_events", between as f64),
            ("unlimited", "charged_total", sum as f64),
            ("unlimited", "l", l as f64),
            ("limited", "queries", queries as f64),
            ("limited", "answered", answered as f64),
            ("limited", "removed", ledger.removed().len() as f64),
            ("whole_ensemble", "hit_budget", whole_ensemble_budget as f64),
        ] {
            table.push(vec![Value::from(phase), Value::from(metric), json_f64(value)]);
        }
        report.table = Some(table);
        Ok(report)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn homogeneous_uniform_contract() {
        let report = run_diversity_check(&DiversityConfig::default(), &RunSettings::new(1, 4000)).unwrap();
        assert!(report.all_pass(), "{:?}", report.failures().collect::<Vec<_>>());
        assert_eq!(report.rows_with_prefix("transfer").count(), 4);
    }

    #[test]
    fn heterogeneous_groups_contract() {
        let config = DiversityConfig {
            mode: DiversityMode::HeterogeneousSampled { k_samples: 1 },
            suite: SuiteSpec::Groups {
                groups: 4,
                group_size: 100,
                tokens_per_group: 2,
            },
            ..DiversityConfig::default()
        };
        let report = run_diversity_check(&config, &RunSettings::new(2, 4000)).unwrap();
        assert!(report.all_pass(), "{:?}", report.failures().collect::<Vec<_>>());
        assert_eq!(report.rows_with_prefix("transfer").count(), 8);
    }

    #[test]
    fn charging_small_run() {
        let config = IndividualChargingConfig {
            groups: 4,
            max_queries: 300,
            ..IndividualChargingConfig::default()
        };
        let report = run_individual_charging(&config, &RunSettings::new(3, 400)).unwrap();
        assert!(report.all_pass(), "{:?}", report.rows);
        assert!(report.row("charged_set_mean").is_some());
    }
}
