//! Exact privacy audit: enumerated outcome laws on adjacent histograms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::report::{json_f64, DataTable, ExperimentReport, MetricRow};
use super::{timed, RunSettings};
use crate::error::{Error, Result};
use crate::mechanisms::{
    argmax_window, between_thresholds_distribution, noise_error_bound, noisy_argmax_distribution,
    outcome_distribution,
};
use crate::types::{FrequencyHistogram, OutcomeLabel, PrivacyParams, TokenId};

/// Numerical slack on ratio bounds.
const RATIO_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpAuditConfig {
    pub eps0: Vec<f64>,
    pub delta0: f64,
    /// Tokens `1..=tokens` in every histogram.
    pub tokens: u64,
    pub max_count: u64,
}

impl Default for DpAuditConfig {
    fn default() -> Self {
        DpAuditConfig {
            eps0: vec![0.5, 1.0],
            delta0: 1e-3,
            tokens: 3,
            max_count: 6,
        }
    }
}

fn histogram(counts: &[u64]) -> FrequencyHistogram {
    FrequencyHistogram::from_counts(
        counts
            .iter()
            .enumerate()
            .map(|(j, &c)| (TokenId(j as u64 + 1), c)),
    )
}

fn label(counts: &[u64]) -> String {
    let parts: Vec<String> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(j, c)| format!("{}:{c}", j + 1))
        .collect();
    format!("{{{}}}", parts.join(","))
}

/// All count vectors with entries in `0..=max`, not all zero.
fn count_vectors(tokens: u64, max: u64) -> Vec<Vec<u64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..tokens {
        out = out
            .into_iter()
            .flat_map(|v| {
                (0..=max).map(move |c| {
                    let mut w = v.clone();
                    w.push(c);
                    w
                })
            })
            .collect();
    }
    out.retain(|v| v.iter().any(|&c| c > 0));
    out
}

/// Unordered pairs differing by one vote moved between two tokens.
fn swap_pairs(tokens: u64, max: u64) -> Vec<(Vec<u64>, Vec<u64>)> {
    let mut pairs = Vec::new();
    for h in count_vectors(tokens, max) {
        for from in 0..h.len() {
            for to in 0..h.len() {
                if from == to || h[from] == 0 || h[to] == max {
                    continue;
                }
                let mut g = h.clone();
                g[from] -= 1;
                g[to] += 1;
                if h < g {
                    pairs.push((h.clone(), g));
                }
            }
        }
    }
    pairs
}

fn ratio(p1: f64, p2: f64) -> f64 {
    if p1 == p2 {
        1.0
    } else if p1 == 0.0 || p2 == 0.0 {
        f64::INFINITY
    } else {
        (p1 / p2).max(p2 / p1)
    }
}

fn hockey_stick(p: &BTreeMap<OutcomeLabel, f64>, q: &BTreeMap<OutcomeLabel, f64>, e: f64) -> f64 {
    let get = |m: &BTreeMap<OutcomeLabel, f64>, k: &OutcomeLabel| m.get(k).copied().unwrap_or(0.0);
    let keys: Vec<&OutcomeLabel> = p.keys().chain(q.keys()).collect();
    let one_way = |a: &BTreeMap<OutcomeLabel, f64>, b: &BTreeMap<OutcomeLabel, f64>| -> f64 {
        let mut seen = std::collections::BTreeSet::new();
        keys.iter()
            .filter(|k| seen.insert(**k))
            .map(|k| (get(a, k) - e * get(b, k)).max(0.0))
            .sum()
    };
    one_way(p, q).max(one_way(q, p))
}

struct Worst {
    outcome: String,
    p1: f64,
    p2: f64,
    ratio: f64,
}

/// Exhaustive audit over adjacent histograms.
///
/// Pairs with the same stored support are checked for the pure ratio bound
/// on the full `(token, noisy count)` law of the noisy maximizer. Pairs where
/// a token appears or disappears are checked on the thresholded homogeneous
/// response, which may exceed the ratio only by `delta0`. BetweenThresholds
/// is checked on counts `c` and `c + 1`.
///
/// Data columns: `pair_id, outcome, p_h1, p_h2, ratio, bound, pass`.
pub fn run_dp_audit(config: &DpAuditConfig, _settings: &RunSettings) -> Result<ExperimentReport> {
    timed(|| {
        if config.eps0.is_empty() || config.eps0.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Config("eps0 values must be positive".into()));
        }
        if config.tokens == 0 || config.max_count == 0 {
            return Err(Error::Config("tokens and max_count must be positive".into()));
        }
        let pairs = swap_pairs(config.tokens, config.max_count);
        let mut report = ExperimentReport::new("dp-audit", config, 0)?;
        let mut table = DataTable::new(["pair_id", "outcome", "p_h1", "p_h2", "ratio", "bound", "pass"]);
        let mut cases = 0u64;
        for &eps0 in &config.eps0 {
            let bound = eps0.exp();
            let window = argmax_window(eps0, config.max_count)?;
            let (mut argmax_max, mut alg2_delta, mut identical_max) = (1.0f64, 0.0f64, 1.0f64);

            for h in count_vectors(config.tokens, config.max_count) {
                let d = noisy_argmax_distribution(&histogram(&h), eps0, window)?;
                let d2 = noisy_argmax_distribution(&histogram(&h), eps0, window)?;
                for (k, &p) in &d {
                    identical_max = identical_max.max(ratio(p, d2[k]));
                }
            }

            for (a, b) in &pairs {
                cases += 1;
                let (ha, hb) = (histogram(a), histogram(b));
                let pair_id = format!("eps0={eps0} {}|{}", label(a), label(b));
                let same_support = a.iter().zip(b).all(|(x, y)| (*x == 0) == (*y == 0));
                if same_support {
                    let da = noisy_argmax_distribution(&ha, eps0, window)?;
                    let db = noisy_argmax_distribution(&hb, eps0, window)?;
                    let mut worst: BTreeMap<Option<TokenId>, Worst> = BTreeMap::new();
                    for key in da.keys().chain(db.keys()) {
                        let (p1, p2) = (da.get(key).copied().unwrap_or(0.0), db.get(key).copied().unwrap_or(0.0));
                        if p1 == 0.0 && p2 == 0.0 {
                            continue;
                        }
                        let r = ratio(p1, p2);
                        let entry = worst.entry(key.0).or_insert(Worst {
                            outcome: String::new(),
                            p1,
                            p2,
                            ratio: 0.0,
                        });
                        if r > entry.ratio {
                            let who = key.0.map_or("virtual".to_string(), |t| format!("token={t}"));
                            *entry = Worst {
                                outcome: format!("argmax:{who},v={}", key.1),
                                p1,
                                p2,
                                ratio: r,
                            };
                        }
                    }
                    for w in worst.values() {
                        argmax_max = argmax_max.max(w.ratio);
                        table.push(vec![
                            Value::from(pair_id.clone()),
                            Value::from(w.outcome.clone()),
                            json_f64(w.p1),
                            json_f64(w.p2),
                            json_f64(w.ratio),
                            json_f64(bound),
                            Value::from(w.ratio <= bound + RATIO_TOLERANCE),
                        ]);
                    }
                } else {
                    let n = ha.n_teachers();
                    let params = PrivacyParams::calibrated(
                        eps0,
                        config.delta0,
                        eps0,
                        config.delta0,
                        config.tokens as usize,
                        n,
                    )?;
                    let oa = outcome_distribution(&ha, &params)?;
                    let ob = outcome_distribution(&hb, &params)?;
                    alg2_delta = alg2_delta.max(hockey_stick(&oa, &ob, bound));
                    let mut keys: Vec<&OutcomeLabel> = oa.keys().chain(ob.keys()).collect();
                    keys.sort();
                    keys.dedup();
                    for k in keys {
                        let (p1, p2) = (oa.get(k).copied().unwrap_or(0.0), ob.get(k).copied().unwrap_or(0.0));
                        let pass = p1 <= bound * p2 + config.delta0 && p2 <= bound * p1 + config.delta0;
                        let outcome = match k {
                            OutcomeLabel::Token(t) => format!("thresholded:token={t}"),
                            OutcomeLabel::Bot => "thresholded:bot".to_string(),
                            OutcomeLabel::TargetHit => "thresholded:target".to_string(),
                        };
                        table.push(vec![
                            Value::from(pair_id.clone()),
                            Value::from(outcome),
                            json_f64(p1),
                            json_f64(p2),
                            json_f64(ratio(p1, p2)),
                            json_f64(bound),
                            Value::from(pass),
                        ]);
                    }
                }
            }

            let mut between_max = 1.0f64;
            let l = noise_error_bound(eps0, 1, config.delta0)? as i64;
            for (low, high) in [(l, 3 * l), (2, 4)] {
                for c in 0..=config.max_count {
                    cases += 1;
                    let da = between_thresholds_distribution(c, low, high, eps0)?;
                    let db = between_thresholds_distribution(c + 1, low, high, eps0)?;
                    for (k, &p1) in &da {
                        let p2 = db[k];
                        let r = ratio(p1, p2);
                        between_max = between_max.max(r);
                        table.push(vec![
                            Value::from(format!("eps0={eps0} between({low},{high}) c={c}|c={}", c + 1)),
                            Value::from(format!("between:{k:?}")),
                            json_f64(p1),
                            json_f64(p2),
                            json_f64(r),
                            json_f64(bound),
                            Value::from(r <= bound + RATIO_TOLERANCE),
                        ]);
                    }
                }
            }

            report.push(MetricRow::within(
                format!("identical_max_ratio eps0={eps0}"),
                identical_max,
                1.0,
                0.0,
            ));
            report.push(MetricRow::at_most(
                format!("argmax_max_ratio eps0={eps0}"),
                argmax_max,
                bound,
                RATIO_TOLERANCE,
            ));
            report.push(MetricRow::at_most(
                format!("between_max_ratio eps0={eps0}"),
                between_max,
                bound,
                RATIO_TOLERANCE,
            ));
            report.push(MetricRow::at_most(
                format!("thresholded_max_delta eps0={eps0}"),
                alg2_delta,
                config.delta0,
                0.0,
            ));
        }
        report.trials = cases;
        report.table = Some(table);
        Ok(report)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_enumeration() {
        let pairs = swap_pairs(2, 2);
        // (0,1)-(1,0), (0,2)-(1,1), (1,1)-(2,0), (1,2)-(2,1) and (0,1)... each once.
        assert!(pairs.iter().all(|(a, b)| a < b));
        assert!(pairs.iter().all(|(a, b)| a.iter().sum::<u64>() == b.iter().sum::<u64>()));
        assert!(!pairs.contains(&(vec![0, 2], vec![2, 0])));
        assert!(pairs.contains(&(vec![1, 1], vec![2, 0])));
        assert_eq!(count_vectors(2, 2).len(), 8);
        assert_eq!(label(&[3, 0, 2]), "{1:3,3:2}");
    }

    #[test]
    fn small_audit_passes() {
        let config = DpAuditConfig {
            eps0: vec![1.0],
            tokens: 2,
            max_count: 3,
            ..DpAuditConfig::default()
        };
        let report = run_dp_audit(&config, &RunSettings::default()).unwrap();
        assert!(report.all_pass(), "{:?}", report.failures().collect::<Vec<_>>());
        let table = report.table.unwrap();
        assert!(table.column("pass").unwrap().iter().all(|v| v.as_bool() == Some(true)));
        assert!(table
            .column("pair_id")
            .unwrap()
            .iter()
            .any(|v| v.as_str() == Some("eps0=1 {1:2,2:3}|{1:3,2:2}")));
    }

    #[test]
    fn ratio_edge_cases() {
        assert_eq!(ratio(0.0, 0.0), 1.0);
        assert_eq!(ratio(0.0, 0.1), f64::INFINITY);
        assert!((ratio(0.2, 0.1) - 2.0).abs() < 1e-15);
    }
}
