//! Yield, bot and target-hit rates across the common-mass weight `alpha`, and
//! agreement of simulated max frequencies with the analytic Exp/Binomial model.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::report::{json_f64, DataTable, ExperimentReport, MetricRow};
use super::{proportion_se, require_trials, timed, RunSettings};
use crate::error::{Error, Result};
use crate::mechanisms::{boundary_wrapper, outcome_distribution, target_probability};
use crate::sampling::{PreparedEnsemble, Scratch};
use crate::synth::{mixture_ensemble, model_tail_probability, special_token, MixtureSpec, PrivateMode};
use crate::trials::fold_trials;
use crate::types::{AggregateOutcome, PrivacyParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlphaSweepConfig {
    pub n: usize,
    pub alphas: Vec<f64>,
    /// Special tokens sharing the common part uniformly.
    pub common_tokens: usize,
    pub eps0: f64,
    pub delta0: f64,
    /// Rows with `0 < alpha <= yield_alpha_max` check `p_token / alpha`.
    pub yield_alpha_max: f64,
    pub yield_range: (f64, f64),
    /// Largest allowed target probability at the two ends of the grid.
    pub end_top_max: f64,
    /// Allowed distance between the `p_top` peak and `(n/2 + L) / n`.
    pub peak_margin: f64,
    pub min_useful_per_hit: f64,
}

impl Default for AlphaSweepConfig {
    fn default() -> Self {
        AlphaSweepConfig {
            n: 400,
            alphas: vec![0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            common_tokens: 1,
            eps0: 2.0,
            delta0: 1e-3,
            yield_alpha_max: 0.1,
            yield_range: (0.5, 1.5),
            end_top_max: 0.05,
            peak_margin: 0.25,
            min_useful_per_hit: 1.8,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct WrapTally {
    tokens: u64,
    bots: u64,
    tops: u64,
    max_p_top: f64,
}

impl WrapTally {
    fn merge(self, o: WrapTally) -> WrapTally {
        WrapTally {
            tokens: self.tokens + o.tokens,
            bots: self.bots + o.bots,
            tops: self.tops + o.tops,
            max_p_top: self.max_p_top.max(o.max_p_top),
        }
    }
}

/// Wrapped homogeneous aggregation over mixture ensembles for each `alpha`.
/// Data columns: `alpha, p_token, p_bot, p_top`.
pub fn run_alpha_sweep(config: &AlphaSweepConfig, settings: &RunSettings) -> Result<ExperimentReport> {
    timed(|| {
        require_trials(settings, 1)?;
        if config.alphas.is_empty() {
            return Err(Error::Config("alpha grid is empty".into()));
        }
        if config.common_tokens == 0 || config.n == 0 {
            return Err(Error::Config("n and common_tokens must be positive".into()));
        }
        let n = config.n as u64;
        let params = PrivacyParams::calibrated(
            config.eps0.max(1.0),
            1e-6,
            config.eps0,
            config.delta0,
            config.n + 1,
            n,
        )
        .map_err(|e| Error::Config(e.to_string()))?;
        let mut report = ExperimentReport::new("alpha-sweep", config, settings.trials)?;
        let mut table = DataTable::new(["alpha", "p_token", "p_bot", "p_top"]);
        let master = settings.master();
        let mut total = WrapTally::default();
        let mut p_tops = Vec::with_capacity(config.alphas.len());
        for (a_idx, &alpha) in config.alphas.iter().enumerate() {
            let spec = MixtureSpec::uniform_common(alpha, config.common_tokens, PrivateMode::DisjointSingletons);
            let ensemble = mixture_ensemble(&spec, config.n).map_err(|e| Error::Config(e.to_string()))?;
            let prepared = PreparedEnsemble::new(&ensemble)?;
            let tally = fold_trials(
                settings.trials,
                &master.derive(a_idx as u64),
                Scratch::default,
                WrapTally::default,
                |scratch, acc, _, rho| {
                    prepared.coordinated_counts(&rho, scratch);
                    let hist = prepared.counts_to_histogram(&scratch.counts);
                    let law = outcome_distribution(&hist, &params).expect("non-empty histogram");
                    acc.max_p_top = acc.max_p_top.max(target_probability(&law));
                    match boundary_wrapper(&law, &mut rho.rng()).expect("law sums to one") {
                        AggregateOutcome::Token { .. } => acc.tokens += 1,
                        AggregateOutcome::Bot => acc.bots += 1,
                        AggregateOutcome::TargetHit => acc.tops += 1,
                    }
                },
                WrapTally::merge,
            );
            let t = settings.trials as f64;
            let (p_token, p_bot, p_top) = (tally.tokens as f64 / t, tally.bots as f64 / t, tally.tops as f64 / t);
            table.push(vec![json_f64(alpha), json_f64(p_token), json_f64(p_bot), json_f64(p_top)]);
            report.push(MetricRow::at_most(
                format!("p_top_cap alpha={alpha}"),
                tally.max_p_top,
                1.0 / 3.0,
                0.0,
            ));
            if alpha > 0.0 && alpha <= config.yield_alpha_max {
                report.push(MetricRow::in_range(
                    format!("yield_ratio alpha={alpha}"),
                    p_token / alpha,
                    config.yield_range.0,
                    config.yield_range.1,
                ));
            }
            if alpha == 1.0 {
                report.push(MetricRow::at_least("p_token alpha=1", p_token, 0.99, 0.0));
                report.push(MetricRow::at_most("p_top alpha=1", p_top, 0.01, 0.0));
            }
            p_tops.push(p_top);
            total = total.merge(tally);
        }
        let peak = (0..p_tops.len())
            .fold(0, |best, i| if p_tops[i] > p_tops[best] { i } else { best });
        report.push(MetricRow::within(
            "p_top_peak_alpha",
            config.alphas[peak],
            params.threshold as f64 / n as f64,
            config.peak_margin,
        ));
        let (lo, hi) = extreme_indices(&config.alphas);
        for i in [lo, hi] {
            report.push(MetricRow::at_most(
                format!("p_top_end alpha={}", config.alphas[i]),
                p_tops[i],
                config.end_top_max,
                0.0,
            ));
        }
        report.push(MetricRow::at_most("p_top_cap_all", total.max_p_top, 1.0 / 3.0, 0.0));
        let useful = (total.tokens + total.bots) as f64;
        report.push(MetricRow::at_least(
            "useful_per_target_hit",
            if total.tops == 0 { f64::INFINITY } else { useful / total.tops as f64 },
            config.min_useful_per_hit,
            0.0,
        ));
        report.trials = settings.trials * config.alphas.len() as u64;
        report.table = Some(table);
        Ok(report)
    })
}

fn extreme_indices(xs: &[f64]) -> (usize, usize) {
    let mut lo = 0;
    let mut hi = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x < xs[lo] {
            lo = i;
        }
        if x > xs[hi] {
            hi = i;
        }
    }
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelCheckConfig {
    pub n: usize,
    /// Special tokens sharing the common part uniformly.
    pub k: usize,
    /// Alphas whose `Pr[c >= n/2]` is compared with the model.
    pub tail_alphas: Vec<f64>,
    pub relative_tolerance: f64,
    /// Alphas whose empirical distribution is checked to dominate the model at every decile.
    pub decile_alphas: Vec<f64>,
}

impl Default for ModelCheckConfig {
    fn default() -> Self {
        ModelCheckConfig {
            n: 400,
            k: 4,
            tail_alphas: vec![0.02, 0.05, 0.1],
            relative_tolerance: 0.3,
            decile_alphas: vec![0.1, 0.5, 0.9],
        }
    }
}

/// Smallest `k` with model CDF at least `level`.
fn model_quantile(alpha: f64, n: u64, level: f64) -> Result<u64> {
    let (mut lo, mut hi) = (0u64, n);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if 1.0 - model_tail_probability(alpha, n, mid + 1)? >= level {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(lo)
}

/// Frequency of the common-part winner under coordinated sampling versus the
/// analytic model `c ~ Bin(n, exp(-y (1 - alpha)))`, `y ~ Exp(alpha)`.
pub fn run_model_check(config: &ModelCheckConfig, settings: &RunSettings) -> Result<ExperimentReport> {
    timed(|| {
        require_trials(settings, 1)?;
        if config.n == 0 || config.k == 0 {
            return Err(Error::Config("n and k must be positive".into()));
        }
        let n = config.n as u64;
        let mut alphas: Vec<f64> = config.tail_alphas.iter().chain(&config.decile_alphas).copied().collect();
        alphas.sort_by(f64::total_cmp);
        alphas.dedup();
        if alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::Config("model alphas must lie in (0, 1)".into()));
        }
        let mut report = ExperimentReport::new("model-check", config, settings.trials)?;
        let mut table = DataTable::new(["alpha", "k", "model_tail", "empirical_tail"]);
        let master = settings.master();
        for (a_idx, &alpha) in alphas.iter().enumerate() {
            let spec = MixtureSpec::uniform_common(alpha, config.k, PrivateMode::DisjointSingletons);
            let ensemble = mixture_ensemble(&spec, config.n)?;
            let prepared = PreparedEnsemble::new(&ensemble)?;
            let special: Vec<usize> = (1..=config.k as u64)
                .map(|j| prepared.token_index(special_token(j)).expect("special token present"))
                .collect();
            let freq = fold_trials(
                settings.trials,
                &master.derive(a_idx as u64),
                Scratch::default,
                || vec![0u64; config.n + 1],
                |scratch, acc, _, rho| {
                    prepared.coordinated_counts(&rho, scratch);
                    let c = special.iter().map(|&j| scratch.counts[j]).max().unwrap_or(0);
                    acc[c as usize] += 1;
                },
                |mut a, b| {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    a
                },
            );
            // tail[k] = trials with c >= k
            let mut tail = vec![0u64; config.n + 2];
            for k in (0..=config.n).rev() {
                tail[k] = tail[k + 1] + freq[k];
            }
            let emp_tail = |k: u64| tail[k.min(n + 1) as usize];
            if config.tail_alphas.contains(&alpha) {
                let k = n / 2;
                let model = model_tail_probability(alpha, n, k)?;
                let empirical = emp_tail(k) as f64 / settings.trials as f64;
                table.push(vec![json_f64(alpha), Value::from(k), json_f64(model), json_f64(empirical)]);
                report.push(MetricRow::within(
                    format!("half_tail alpha={alpha}"),
                    empirical,
                    model,
                    config.relative_tolerance * model,
                ));
            }
            if config.decile_alphas.contains(&alpha) {
                for d in 1..=9 {
                    let k = model_quantile(alpha, n, d as f64 / 10.0)?;
                    let model = model_tail_probability(alpha, n, k)?;
                    let hits = emp_tail(k);
                    let empirical = hits as f64 / settings.trials as f64;
                    table.push(vec![json_f64(alpha), Value::from(k), json_f64(model), json_f64(empirical)]);
                    report.push(MetricRow::at_least(
                        format!("decile_dominance alpha={alpha} decile={d} k={k}"),
                        empirical,
                        model,
                        3.0 * proportion_se(hits, settings.trials),
                    ));
                }
            }
        }
        report.trials = settings.trials * alphas.len() as u64;
        report.table = Some(table);
        Ok(report)
    })
}
