//! Properties of coordinated sampling itself: marginals, expected counts,
//! diversity transfer, relevance and swap sensitivity.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::report::{json_f64, DataTable, ExperimentReport, MetricRow};
use super::suite::SuiteSpec;
use super::{mean_se, proportion_se, require_trials, timed, total_variation, RunSettings};
use crate::error::{Error, Result};
use crate::sampling::{coordinated_sample, PreparedEnsemble, Scratch};
use crate::trials::fold_trials;
use crate::types::{TeacherDistribution, TokenId};

pub(super) fn merge_vec<T: std::ops::AddAssign + Copy>(mut a: Vec<T>, b: Vec<T>) -> Vec<T> {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalConfig {
    #[serde(default = "MarginalConfig::default_suite")]
    pub suite: SuiteSpec,
    #[serde(default = "MarginalConfig::default_tv_bound")]
    pub tv_bound: f64,
}

impl MarginalConfig {
    fn default_suite() -> SuiteSpec {
        SuiteSpec::TestDistributions
    }

    fn default_tv_bound() -> f64 {
        0.01
    }
}

impl Default for MarginalConfig {
    fn default() -> Self {
        MarginalConfig {
            suite: Self::default_suite(),
            tv_bound: Self::default_tv_bound(),
        }
    }
}

/// Each teacher's coordinated vote should follow its own distribution:
/// TV(empirical law of `y_i`, `p^(i)`) per teacher.
pub fn run_marginal_fidelity(config: &MarginalConfig, settings: &RunSettings) -> Result<ExperimentReport> {
    timed(|| {
        require_trials(settings, 1)?;
        let ensemble = config.suite.build()?;
        let prepared = PreparedEnsemble::new(&ensemble)?;
        let offsets: Vec<usize> = std::iter::once(0)
            .chain((0..prepared.n()).scan(0, |acc, i| {
                *acc += prepared.teacher_entries(i).len();
                Some(*acc)
            }))
            .collect();
        let total_entries = offsets[prepared.n()];
        let tallies = fold_trials(
            settings.trials,
            &settings.master(),
            Scratch::default,
            || vec![0u64; total_entries],
            |scratch, acc, _, rho| {
                prepared.coordinated_votes(&rho, scratch);
                for (i, &vote) in scratch.votes.iter().enumerate() {
                    let entries = prepared.teacher_entries(i);
                    let pos = entries
                        .binary_search_by_key(&vote, |&(idx, _)| idx)
                        .expect("vote lies in the teacher's support");
                    acc[offsets[i] + pos] += 1;
                }
            },
            merge_vec,
        );
        let mut report = ExperimentReport::new("marginal-fidelity", config, settings.trials)?;
        let mut table = DataTable::new(["teacher", "token", "p", "empirical"]);
        for i in 0..prepared.n() {
            let entries = prepared.teacher_entries(i);
            let expected: Vec<f64> = entries.iter().map(|&(_, p)| p).collect();
            let empirical: Vec<f64> = tallies[offsets[i]..offsets[i + 1]]
                .iter()
                .map(|&c| c as f64 / settings.trials as f64)
                .collect();
            for (&(idx, p), &e) in entries.iter().zip(&empirical) {
                table.push(vec![
                    Value::from(i),
                    Value::from(prepared.tokens()[idx as usize].0),
                    json_f64(p),
                    json_f64(e),
                ]);
            }
            report.push(MetricRow::at_most(
                format!("marginal_tv teacher={i}"),
                total_variation(&empirical, &expected),
                config.tv_bound,
                0.0,
            ));
        }
        report.table = Some(table);
        Ok(report)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationConfig {
    #[serde(default = "MarginalConfig::default_suite")]
    pub suite: SuiteSpec,
}

impl Default for ExpectationConfig {
    fn default() -> Self {
        ExpectationConfig {
            suite: MarginalConfig::default_suite(),
        }
    }
}

/// `E[c_j] = sum_i p^(i)_j` for every token, within three standard errors.
pub fn run_expectation_check(config: &ExpectationConfig, settings: &RunSettings) -> Result<ExperimentReport> {
    timed(|| {
        require_trials(settings, 2)?;
        let ensemble = config.suite.build()?;
        let prepared = PreparedEnsemble::new(&ensemble)?;
        let m = prepared.tokens().len();
        let (sums, sq) = fold_trials(
            settings.trials,
            &settings.master(),
            Scratch::default,
            || (vec![0u64; m], vec![0u128; m]),
            |scratch, (sums, sq), _, rho| {
                prepared.coordinated_counts(&rho, scratch);
                for (j, &c) in scratch.counts.iter().enumerate() {
                    sums[j] += c as u64;
                    sq[j] += (c as u128) * (c as u128);
                }
            },
            |(a, b), (c, d)| (merge_vec(a, c), merge_vec(b, d)),
        );
        let expected = prepared.expected_counts();
        let mut report = ExperimentReport::new("expectation", config, settings.trials)?;
        let mut table = DataTable::new(["token", "expected", "mean", "se"]);
        for j in 0..m {
            let (mean, se) = mean_se(sums[j], sq[j], settings.trials);
            let token = prepared.tokens()[j];
            table.push(vec![Value::from(token.0), json_f64(expected[j]), json_f64(mean), json_f64(se)]);
            report.push(MetricRow::within(
                format!("mean_count token={token}"),
                mean,
                expected[j],
                3.0 * se + 1e-9,
            ));
        }
        report.table = Some(table);
        Ok(report)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaConfig {
    pub suite: SuiteSpec,
    /// Fractions `p` of `c_{j,q}` the count must reach.
    #[serde(default = "LemmaConfig::default_p")]
    pub p: Vec<f64>,
    /// Probability levels `q`; defaults to every distinct `p^(i)_j` of the token.
    #[serde(default)]
    pub q: Option<Vec<f64>>,
}

impl LemmaConfig {
    fn default_p() -> Vec<f64> {
        vec![0.5, 2.0 / 3.0]
    }

    pub fn new(suite: SuiteSpec) -> Self {
        LemmaConfig {
            suite,
            p: Self::default_p(),
            q: None,
        }
    }
}

/// Distinct probabilities assigned to each token, per token index.
pub(super) fn token_levels(prepared: &PreparedEnsemble) -> Vec<Vec<f64>> {
    let mut levels: Vec<Vec<f64>> = vec![Vec::new(); prepared.tokens().len()];
    for i in 0..prepared.n() {
        for &(idx, p) in prepared.teacher_entries(i) {
            levels[idx as usize].push(p);
        }
    }
    for l in &mut levels {
        l.sort_by(f64::total_cmp);
        l.dedup();
    }
    levels
}

struct CountCheck {
    token: usize,
    threshold: u32,
}

/// Fraction of trials in which `c_j >= threshold`, for each check.
fn exceedance_rates(
    prepared: &PreparedEnsemble,
    checks: &[CountCheck],
    settings: &RunSettings,
) -> Vec<u64> {
    fold_trials(
        settings.trials,
        &settings.master(),
        Scratch::default,
        || vec![0u64; checks.len()],
        |scratch, acc, _, rho| {
            prepared.coordinated_counts(&rho, scratch);
            for (k, check) in checks.iter().enumerate() {
                if scratch.counts[check.token] >= check.threshold {
                    acc[k] += 1;
                }
            }
        },
        merge_vec,
    )
}

/// Diversity transfer: `Pr[c_j >= p c_{j,q}] >= (1/2) ln(1/p) q`.
pub fn run_lemma_transfer_check(config: &LemmaConfig, settings: &RunSettings) -> Result<ExperimentReport> {
    timed(|| {
        require_trials(settings, 1)?;
        if config.p.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::Config("p must lie in (0, 1]".into()));
        }
        if let Some(q) = &config.q {
            if q.iter().any(|&q| !(q > 0.0 && q <= 1.0)) {
                return Err(Error::Config("q must lie in (0, 1]".into()));
            }
        }
        let ensemble = config.suite.build()?;
        let prepared = PreparedEnsemble::new(&ensemble)?;
        let levels = token_levels(&prepared);
        let mut report = ExperimentReport::new("lemma-check", config, settings.trials)?;
        let mut checks = Vec::new();
        let mut meta = Vec::new();
        for (j, &token) in prepared.tokens().iter().enumerate() {
            let qs = config.q.clone().unwrap_or_else(|| levels[j].clone());
            for &q in &qs {
                let c_jq = prepared.support_count(token, q);
                for &p in &config.p {
                    if c_jq == 0 {
                        report.skipped += 1;
                        continue;
                    }
                    let threshold = (p * c_jq as f64 - 1e-9).ceil().max(0.0) as u32;
                    checks.push(CountCheck { token: j, threshold });
                    meta.push((token, q, c_jq, p, 0.5 * (1.0 / p).ln() * q));
                }
            }
        }
        let hits = exceedance_rates(&prepared, &checks, settings);
        let mut table = DataTable::new(["token", "q", "c_jq", "p", "threshold", "empirical", "se", "bound", "pass"]);
        for ((check, &(token, q, c_jq, p, bound)), &h) in checks.iter().zip(&meta).zip(&hits) {
            let empirical = h as f64 / settings.trials as f64;
            let se = proportion_se(h, settings.trials);
            let row = MetricRow::at_least(
                format!("transfer token={token} q={q} p={p}"),
                empirical,
                bound,
                3.0 * se,
            );
            table.push(vec![
                Value::from(token.0),
                json_f64(q),
                Value::from(c_jq),
                json_f64(p),
                Value::from(check.threshold),
                json_f64(empirical),
                json_f64(se),
                json_f64(bound),
                Value::from(row.pass),
            ]);
            report.push(row);
        }
        report.table = Some(table);
        Ok(report)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceConfig {
    pub suite: SuiteSpec,
    /// Count thresholds `T`; defaults to `n/4, n/2, n`.
    #[serde(default)]
    pub thresholds: Option<Vec<u64>>,
}

impl RelevanceConfig {
    pub fn new(suite: SuiteSpec) -> Self {
        RelevanceConfig {
            suite,
            thresholds: None,
        }
    }
}

fn all_identical(ensemble: &[TeacherDistribution]) -> bool {
    ensemble.windows(2).all(|w| w[0].entries() == w[1].entries())
}

/// Relevance: `Pr[c_j >= T] <= (1/T) sum_i p^(i)_j`. For identical teachers at
/// `T = n` the bound is attained exactly, which is checked as an equality.
pub fn run_relevance_check(config: &RelevanceConfig, settings: &RunSettings) -> Result<ExperimentReport> {
    timed(|| {
        require_trials(settings, 1)?;
        let ensemble = config.suite.build()?;
        let prepared = PreparedEnsemble::new(&ensemble)?;
        let n = prepared.n() as u64;
        let mut thresholds: Vec<u64> = config
            .thresholds
            .clone()
            .unwrap_or_else(|| vec![n / 4, n / 2, n])
            .into_iter()
            .filter(|&t| t >= 1)
            .collect();
        thresholds.sort_unstable();
        thresholds.dedup();
        if thresholds.is_empty() {
            return Err(Error::Config("no positive thresholds".into()));
        }
        let identical = all_identical(&ensemble);
        let expected = prepared.expected_counts();
        let mut checks = Vec::new();
        for j in 0..prepared.tokens().len() {
            for &t in &thresholds {
                checks.push(CountCheck {
                    token: j,
                    threshold: t.min(u32::MAX as u64) as u32,
                });
            }
        }
        let hits = exceedance_rates(&prepared, &checks, settings);
        let mut report = ExperimentReport::new("relevance-check", config, settings.trials)?;
        let mut table = DataTable::new(["token", "threshold", "empirical", "se", "bound", "pass"]);
        for (check, &h) in checks.iter().zip(&hits) {
            let token = prepared.tokens()[check.token];
            let t = check.threshold as u64;
            let bound = expected[check.token] / t as f64;
            let empirical = h as f64 / settings.trials as f64;
            let se = proportion_se(h, settings.trials);
            let row = MetricRow::at_most(format!("relevance token={token} T={t}"), empirical, bound, 3.0 * se);
            let mut pass = row.pass;
            report.push(row);
            if identical && t == n {
                let eq = MetricRow::within(
                    format!("relevance_equality token={token} T={t}"),
                    empirical,
                    bound,
                    3.0 * se + 1e-12,
                );
                pass &= eq.pass;
                report.push(eq);
            }
            table.push(vec![
                Value::from(token.0),
                Value::from(t),
                json_f64(empirical),
                json_f64(se),
                json_f64(bound),
                Value::from(pass),
            ]);
        }
        report.table = Some(table);
        Ok(report)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub n: usize,
    /// Tokens `1..=vocab` available to the random teachers.
    pub vocab: u64,
    pub swaps: u64,
    pub rhos_per_swap: u64,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            n: 10,
            vocab: 6,
            swaps: 100,
            rhos_per_swap: 100,
        }
    }
}

fn random_distribution<R: Rng>(teacher: usize, vocab: u64, rng: &mut R) -> Result<TeacherDistribution> {
    let size = rng.gen_range(1..=vocab.min(4));
    let mut tokens = BTreeSet::new();
    while (tokens.len() as u64) < size {
        tokens.insert(rng.gen_range(1..=vocab));
    }
    let weights: Vec<f64> = tokens.iter().map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    TeacherDistribution::new(
        teacher,
        tokens.into_iter().zip(weights).map(|(t, w)| (TokenId(t), w / total)),
    )
}

/// Replacing one teacher's distribution moves at most one vote: the
/// histograms under the same shared randomness differ in at most two entries,
/// by exactly `+1` and `-1`.
pub fn run_sensitivity_check(config: &SensitivityConfig, settings: &RunSettings) -> Result<ExperimentReport> {
    timed(|| {
        if config.n == 0 || config.vocab == 0 || config.swaps == 0 || config.rhos_per_swap == 0 {
            return Err(Error::Config("sensitivity check needs positive sizes".into()));
        }
        let master = settings.master();
        let mut valid = 0u64;
        let mut changed = 0u64;
        let mut table = DataTable::new(["swap", "teacher", "cases", "changed", "valid"]);
        for s in 0..config.swaps {
            let swap_seed = master.derive(s);
            let mut rng = swap_seed.rng();
            let ensemble: Vec<TeacherDistribution> = (0..config.n)
                .map(|i| random_distribution(i, config.vocab, &mut rng))
                .collect::<Result<_>>()?;
            let i = rng.gen_range(0..config.n);
            let mut swapped = ensemble.clone();
            swapped[i] = random_distribution(i, config.vocab, &mut rng)?;
            let (mut swap_changed, mut swap_valid) = (0u64, 0u64);
            for r in 0..config.rhos_per_swap {
                let rho = swap_seed.derive(r + 1);
                let (_, h1) = coordinated_sample(&ensemble, &rho)?;
                let (_, h2) = coordinated_sample(&swapped, &rho)?;
                let tokens: BTreeSet<TokenId> = h1.iter().chain(h2.iter()).map(|(t, _)| t).collect();
                let diffs: Vec<i64> = tokens
                    .into_iter()
                    .map(|t| h2.count(t) as i64 - h1.count(t) as i64)
                    .filter(|&d| d != 0)
                    .collect();
                let ok = match diffs.as_slice() {
                    [] => true,
                    [a, b] => (*a == 1 && *b == -1) || (*a == -1 && *b == 1),
                    _ => false,
                };
                swap_changed += u64::from(!diffs.is_empty());
                swap_valid += u64::from(ok);
            }
            table.push(vec![
                Value::from(s),
                Value::from(i),
                Value::from(config.rhos_per_swap),
                Value::from(swap_changed),
                Value::from(swap_valid),
            ]);
            changed += swap_changed;
            valid += swap_valid;
        }
        let cases = config.swaps * config.rhos_per_swap;
        let mut report = ExperimentReport::new("sensitivity", config, cases)?;
        report.push(MetricRow::at_least(
            "swap_valid_fraction",
            valid as f64 / cases as f64,
            1.0,
            0.0,
        ));
        report.push(MetricRow::at_least(
            "swap_changed_cases",
            changed as f64,
            1.0,
            0.0,
        ));
        report.table = Some(table);
        Ok(report)
    })
}
