//! Private aggregation of coordinated ensembles, and the lockstep loop that
//! generates a response one token at a time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::accounting::{ChargeLedgerView, PrivacyLedger};
use crate::error::{Error, Result};
use crate::mechanisms::{
    between_thresholds, boundary_wrapper, noisy_argmax, outcome_distribution,
    passes_majority_threshold, sanitize_with_margin, NoisyMaxResult, ThresholdOutcome,
};
use crate::randomness::SharedRandomness;
use crate::sampling::{coordinated_sample, PreparedEnsemble, Scratch};
use crate::types::{AggregateOutcome, FrequencyHistogram, PrivacyParams, TeacherDistribution, TokenId};

/// Homogeneous aggregation of an already-built histogram: noisy argmax, then
/// report the winner only if its noisy count clears `n/2 + L`.
pub fn homogeneous_from_histogram<R: Rng + ?Sized>(
    hist: &FrequencyHistogram,
    params: &PrivacyParams,
    rng: &mut R,
) -> Result<AggregateOutcome> {
    Ok(homogeneous_detailed(hist, params, rng)?.0)
}

/// As [`homogeneous_from_histogram`], also returning the noisy maximizer's output.
pub fn homogeneous_detailed<R: Rng + ?Sized>(
    hist: &FrequencyHistogram,
    params: &PrivacyParams,
    rng: &mut R,
) -> Result<(AggregateOutcome, NoisyMaxResult)> {
    let res = noisy_argmax(hist, params.eps0, params.delta0, rng)?;
    let outcome = match res.token {
        Some(token)
            if passes_majority_threshold(res.noisy_count as i64, hist.n_teachers(), params.l) =>
        {
            AggregateOutcome::Token {
                token,
                count: Some(res.noisy_count),
            }
        }
        _ => AggregateOutcome::Bot,
    };
    Ok((outcome, res))
}

pub fn aggregate_homogeneous<R: Rng + ?Sized>(
    ensemble: &[TeacherDistribution],
    rho: &SharedRandomness,
    params: &PrivacyParams,
    rng: &mut R,
) -> Result<AggregateOutcome> {
    let (_, hist) = coordinated_sample(ensemble, rho)?;
    homogeneous_from_histogram(&hist, params, rng)
}

/// Homogeneous aggregation behind the boundary wrapper. The wrapper acts on
/// the exact response law conditioned on the histogram.
pub fn wrapped_from_histogram<R: Rng + ?Sized>(
    hist: &FrequencyHistogram,
    params: &PrivacyParams,
    rng: &mut R,
) -> Result<AggregateOutcome> {
    let law = outcome_distribution(hist, params)?;
    boundary_wrapper(&law, rng)
}

/// Weighted sampling of `k_samples` tokens (with replacement, each with
/// probability `c_j / n`), sanitization of their counts, and a uniform pick
/// among the survivors.
pub fn heterogeneous_from_histogram<R: Rng + ?Sized>(
    hist: &FrequencyHistogram,
    params: &PrivacyParams,
    k_samples: usize,
    rng: &mut R,
) -> Result<AggregateOutcome> {
    if k_samples == 0 {
        return Err(Error::InvalidParameter("k_samples must be at least 1".into()));
    }
    if hist.is_empty() {
        return Err(Error::EmptyHistogram);
    }
    let n = hist.n_teachers();
    let mut sampled: Vec<(TokenId, u64)> = Vec::with_capacity(k_samples);
    for _ in 0..k_samples {
        let mut target = rng.gen_range(0..n);
        for (token, count) in hist.iter() {
            if target < count {
                if !sampled.iter().any(|&(t, _)| t == token) {
                    sampled.push((token, count));
                }
                break;
            }
            target -= count;
        }
    }
    let sampled = FrequencyHistogram::from_counts(sampled);
    let survivors = sanitize_with_margin(&sampled, params.eps0, params.l, rng)?;
    if survivors.is_empty() {
        return Ok(AggregateOutcome::Bot);
    }
    let pick = rng.gen_range(0..survivors.support_size());
    let (token, noisy) = survivors.iter().nth(pick).expect("index in range");
    Ok(AggregateOutcome::Token {
        token,
        count: Some(noisy),
    })
}

pub fn aggregate_heterogeneous_sampled<R: Rng + ?Sized>(
    ensemble: &[TeacherDistribution],
    rho: &SharedRandomness,
    params: &PrivacyParams,
    k_samples: usize,
    rng: &mut R,
) -> Result<AggregateOutcome> {
    let (_, hist) = coordinated_sample(ensemble, rho)?;
    heterogeneous_from_histogram(&hist, params, k_samples, rng)
}

/// One individually charged query and what it charged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargedQuery {
    pub outcome: AggregateOutcome,
    pub threshold_outcome: ThresholdOutcome,
    /// The candidate token `v`.
    pub candidate: TokenId,
    /// Teacher sampling rate `r`.
    pub rate: f64,
    /// Subsampled teachers voting for the candidate (`c'_v`).
    pub sampled_voters: Vec<usize>,
    /// Teachers charged by this query; empty unless the test landed between.
    pub charged: Vec<usize>,
    pub newly_removed: Vec<usize>,
}

/// Heterogeneous aggregation with per-teacher charging.
///
/// Teacher ids are positions in `ensemble`. Removed teachers do not vote.
/// The candidate token is drawn with probability proportional to its count,
/// the rate uniformly from `{1/m, ..., 1}` over the `m` live teachers, and
/// the subsampled count of the candidate goes through BetweenThresholds with
/// window `(L, 3L)`. Only a between outcome charges, and only the subsampled
/// teachers that voted for the candidate.
pub fn aggregate_heterogeneous_individual<R: Rng + ?Sized, V: ChargeLedgerView>(
    ensemble: &[TeacherDistribution],
    rho: &SharedRandomness,
    params: &PrivacyParams,
    ledger: &mut V,
    rng: &mut R,
) -> Result<ChargedQuery> {
    if ensemble.len() != ledger.n_teachers() {
        return Err(Error::InvalidParameter(format!(
            "ensemble has {} teachers, ledger tracks {}",
            ensemble.len(),
            ledger.n_teachers()
        )));
    }
    let live = ledger.live_teachers();
    if live.is_empty() {
        return Err(Error::NoLiveTeachers);
    }
    let live_dists: Vec<TeacherDistribution> = live.iter().map(|&i| ensemble[i].clone()).collect();
    let prepared = PreparedEnsemble::new(&live_dists)?;
    let mut scratch = Scratch::default();
    prepared.coordinated_votes(rho, &mut scratch);
    let votes = &scratch.votes;

    let m = live.len();
    let candidate_idx = votes[rng.gen_range(0..m)];
    let rate = rng.gen_range(1..=m) as f64 / m as f64;
    let sampled_voters: Vec<usize> = live
        .iter()
        .zip(votes.iter())
        .filter_map(|(&teacher, &vote)| {
            // Draw for every live teacher so the subsample is independent of votes.
            let sampled = rng.gen::<f64>() < rate;
            (sampled && vote == candidate_idx).then_some(teacher)
        })
        .collect();
    let candidate = prepared.tokens()[candidate_idx as usize];
    let l = params.l as i64;
    let threshold_outcome =
        between_thresholds(sampled_voters.len() as u64, l, 3 * l, params.eps0, rng)?;
    let (outcome, charged, newly_removed) = match threshold_outcome {
        ThresholdOutcome::Below => (AggregateOutcome::Bot, Vec::new(), Vec::new()),
        ThresholdOutcome::Above => (
            AggregateOutcome::Token { token: candidate, count: None },
            Vec::new(),
            Vec::new(),
        ),
        ThresholdOutcome::Between => {
            let removed = ledger.charge(&sampled_voters)?;
            (
                AggregateOutcome::Token { token: candidate, count: None },
                sampled_voters.clone(),
                removed,
            )
        }
    };
    Ok(ChargedQuery {
        outcome,
        threshold_outcome,
        candidate,
        rate,
        sampled_voters,
        charged,
        newly_removed,
    })
}

/// Deterministic source of teacher distributions given the response prefix.
pub trait TeacherProvider {
    fn distributions(&self, prefix: &[TokenId]) -> Result<Vec<TeacherDistribution>>;
}

/// Returns the same ensemble at every step.
#[derive(Debug, Clone)]
pub struct FixedProvider(pub Vec<TeacherDistribution>);

impl TeacherProvider for FixedProvider {
    fn distributions(&self, _prefix: &[TokenId]) -> Result<Vec<TeacherDistribution>> {
        if self.0.is_empty() {
            return Err(Error::ProviderFailure("empty ensemble".into()));
        }
        Ok(self.0.clone())
    }
}

/// Tokens `a = 1`, `b = 2`, `c = 3`; `b` is only ever offered right after `a`.
#[derive(Debug, Clone, Copy)]
pub struct MarkovProvider {
    pub n: usize,
}

impl MarkovProvider {
    pub const A: TokenId = TokenId(1);
    pub const B: TokenId = TokenId(2);
    pub const C: TokenId = TokenId(3);
}

impl TeacherProvider for MarkovProvider {
    fn distributions(&self, prefix: &[TokenId]) -> Result<Vec<TeacherDistribution>> {
        let next = if prefix.last() == Some(&Self::A) {
            [(Self::B, 0.5), (Self::C, 0.5)]
        } else {
            [(Self::A, 0.5), (Self::C, 0.5)]
        };
        (0..self.n).map(|i| TeacherDistribution::new(i, next)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AggregationMode {
    Homogeneous,
    /// Homogeneous behind the boundary wrapper; target hits charge the ledger.
    HomogeneousWrapped,
    HeterogeneousSampled { k_samples: usize },
    HeterogeneousIndividual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub mode: AggregationMode,
    pub max_tokens: usize,
    /// Extra attempts allowed on a step that produced no token.
    pub retry_cap: usize,
}

impl LoopConfig {
    pub fn new(mode: AggregationMode, max_tokens: usize) -> Self {
        LoopConfig {
            mode,
            max_tokens,
            retry_cap: 3,
        }
    }
}

/// One emitted step. Serializes as a flat JSON line:
/// `{"step":0,"outcome":"token","token":7,"count":81,"retries":0}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "StepLine", try_from = "StepLine")]
pub struct StepRecord {
    pub step: usize,
    pub outcome: AggregateOutcome,
    pub retries: usize,
}

#[derive(Serialize, Deserialize)]
struct StepLine {
    step: usize,
    outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    token: Option<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    count: Option<u64>,
    retries: usize,
}

impl From<StepRecord> for StepLine {
    fn from(r: StepRecord) -> Self {
        let (outcome, token, count) = match r.outcome {
            AggregateOutcome::Token { token, count } => ("token", Some(token), count),
            AggregateOutcome::Bot => ("bot", None, None),
            AggregateOutcome::TargetHit => ("target", None, None),
        };
        StepLine {
            step: r.step,
            outcome: outcome.to_string(),
            token,
            count,
            retries: r.retries,
        }
    }
}

impl TryFrom<StepLine> for StepRecord {
    type Error = String;

    fn try_from(line: StepLine) -> std::result::Result<Self, String> {
        let outcome = match (line.outcome.as_str(), line.token) {
            ("token", Some(token)) => AggregateOutcome::Token { token, count: line.count },
            ("token", None) => return Err("token outcome without a token".into()),
            ("bot", _) => AggregateOutcome::Bot,
            ("target", _) => AggregateOutcome::TargetHit,
            (other, _) => return Err(format!("unknown outcome {other:?}")),
        };
        Ok(StepRecord {
            step: line.step,
            outcome,
            retries: line.retries,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopStatus {
    Completed,
    /// A step used up its retries without producing a token.
    NoToken,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopRun {
    pub steps: Vec<StepRecord>,
    /// Every aggregation answer, including retried ones, in order.
    pub answers: Vec<AggregateOutcome>,
    pub status: LoopStatus,
}

impl LoopRun {
    pub fn tokens(&self) -> Vec<TokenId> {
        self.steps.iter().filter_map(|s| s.outcome.token()).collect()
    }
}

/// Generates up to `max_tokens` tokens in lockstep.
///
/// Step `t`, attempt `a` uses shared randomness `seed.derive(t).derive(a)`;
/// mechanism noise comes from that randomness' private RNG stream. Tokens
/// extend the prefix; a step that yields no token is retried with fresh
/// randomness up to `retry_cap` times and then ends the run. The ledger is
/// checked before every query, so nothing is answered after exhaustion.
pub fn hot_pate_loop<P: TeacherProvider + ?Sized>(
    provider: &P,
    params: &PrivacyParams,
    ledger: &mut PrivacyLedger,
    config: &LoopConfig,
    seed: &SharedRandomness,
) -> Result<LoopRun> {
    if config.max_tokens == 0 {
        return Err(Error::InvalidParameter("max_tokens must be at least 1".into()));
    }
    let mut prefix: Vec<TokenId> = Vec::new();
    let mut steps = Vec::new();
    let mut answers = Vec::new();
    for step in 0..config.max_tokens {
        let ensemble = provider.distributions(&prefix)?;
        let step_seed = seed.derive(step as u64);
        let mut produced = None;
        for attempt in 0..=config.retry_cap {
            if ledger.exhausted() {
                return Ok(LoopRun {
                    steps,
                    answers,
                    status: LoopStatus::BudgetExhausted,
                });
            }
            let rho = step_seed.derive(attempt as u64);
            let mut rng = rho.rng();
            let outcome = match config.mode {
                AggregationMode::Homogeneous => {
                    aggregate_homogeneous(&ensemble, &rho, params, &mut rng)?
                }
                AggregationMode::HomogeneousWrapped => {
                    let (_, hist) = coordinated_sample(&ensemble, &rho)?;
                    let outcome = wrapped_from_histogram(&hist, params, &mut rng)?;
                    if outcome == AggregateOutcome::TargetHit {
                        ledger.charge_target();
                    }
                    outcome
                }
                AggregationMode::HeterogeneousSampled { k_samples } => {
                    aggregate_heterogeneous_sampled(&ensemble, &rho, params, k_samples, &mut rng)?
                }
                AggregationMode::HeterogeneousIndividual => {
                    aggregate_heterogeneous_individual(&ensemble, &rho, params, ledger, &mut rng)?
                        .outcome
                }
            };
            answers.push(outcome);
            if outcome.is_token() || attempt == config.retry_cap {
                produced = Some(StepRecord {
                    step,
                    outcome,
                    retries: attempt,
                });
                break;
            }
        }
        let record = produced.expect("loop runs at least once");
        steps.push(record);
        match record.outcome.token() {
            Some(token) => prefix.push(token),
            None => {
                return Ok(LoopRun {
                    steps,
                    answers,
                    status: LoopStatus::NoToken,
                })
            }
        }
    }
    Ok(LoopRun {
        steps,
        answers,
        status: LoopStatus::Completed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{mixture_ensemble, uniform_k_ensemble, MixtureSpec, PrivateMode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(eps0: f64, delta0: f64, support: usize, n: u64) -> PrivacyParams {
        PrivacyParams::calibrated(eps0.max(1.0), 1e-3, eps0, delta0, support, n).unwrap()
    }

    fn disjoint(n: usize) -> Vec<TeacherDistribution> {
        mixture_ensemble(&MixtureSpec::uniform_common(0.0, 1, PrivateMode::DisjointSingletons), n).unwrap()
    }

    #[test]
    fn homogeneous_disjoint_is_bot() {
        let ensemble = disjoint(200);
        let p = params(1.0, 0.01, 201, 200);
        let master = SharedRandomness::new(1);
        let bots = (0..1000)
            .filter(|&t| {
                let rho = master.derive(t);
                aggregate_homogeneous(&ensemble, &rho, &p, &mut rho.rng()).unwrap() == AggregateOutcome::Bot
            })
            .count();
        assert!(bots >= 990);
    }

    #[test]
    fn homogeneous_point_mass_returns_token() {
        let ensemble: Vec<_> = (0..200).map(|i| TeacherDistribution::point_mass(i, TokenId(9))).collect();
        let p = params(1.0, 0.01, 1, 200);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hits = (0..1000u128)
            .filter(|&s| {
                aggregate_homogeneous(&ensemble, &SharedRandomness::new(s), &p, &mut rng)
                    .unwrap()
                    .token()
                    == Some(TokenId(9))
            })
            .count();
        assert!(hits as f64 >= 1000.0 * (1.0 - p.delta0));
    }

    #[test]
    fn homogeneous_uniform_four_is_uniform_over_tokens() {
        let ensemble = uniform_k_ensemble(1000, 4);
        let p = params(1.0, 0.01, 1001, 1000);
        let master = SharedRandomness::new(3);
        let runs = 10_000;
        let mut tally = [0u32; 5];
        for t in 0..runs {
            let rho = master.derive(t);
            match aggregate_homogeneous(&ensemble, &rho, &p, &mut rho.rng()).unwrap() {
                AggregateOutcome::Token { token, .. } => tally[token.0 as usize] += 1,
                _ => tally[0] += 1,
            }
        }
        let answered: u32 = tally[1..].iter().sum();
        assert!(answered as f64 >= 0.99 * runs as f64);
        let tv: f64 = tally[1..]
            .iter()
            .map(|&c| (c as f64 / runs as f64 - 0.25).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.03, "{tv}");
    }

    #[test]
    fn heterogeneous_point_mass_always_returned() {
        let ensemble: Vec<_> = (0..100).map(|i| TeacherDistribution::point_mass(i, TokenId(4))).collect();
        let p = params(1.0, 0.01, 1, 100);
        assert!(100 >= 2 * p.l);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for s in 0..500u128 {
            let out = aggregate_heterogeneous_sampled(&ensemble, &SharedRandomness::new(s), &p, 1, &mut rng)
                .unwrap();
            assert_eq!(out.token(), Some(TokenId(4)));
        }
    }

    #[test]
    fn heterogeneous_groups_returned_evenly() {
        // 10 groups of 40 point-mass teachers; 40 >= 2L with eps0 = 2, delta0 = 1e-3.
        let g = 10usize;
        let m = 40usize;
        let ensemble: Vec<_> = (0..g * m)
            .map(|i| TeacherDistribution::point_mass(i, TokenId((i / m) as u64 + 1)))
            .collect();
        let p = params(2.0, 1e-3, 1, (g * m) as u64);
        assert!(m as u64 >= 2 * p.l, "L={}", p.l);
        let master = SharedRandomness::new(5);
        let runs = 10_000;
        let mut tally = vec![0u32; g + 1];
        for t in 0..runs {
            let rho = master.derive(t);
            match aggregate_heterogeneous_sampled(&ensemble, &rho, &p, 1, &mut rho.rng()).unwrap() {
                AggregateOutcome::Token { token, .. } => tally[token.0 as usize] += 1,
                _ => tally[0] += 1,
            }
        }
        for (j, &c) in tally.iter().enumerate().skip(1) {
            let f = c as f64 / runs as f64;
            assert!((f - 1.0 / g as f64).abs() <= 0.02, "group {j}: {f}");
        }
    }

    #[test]
    fn heterogeneous_rejects_zero_samples() {
        let hist = FrequencyHistogram::from_counts([(TokenId(1), 3)]);
        let p = params(1.0, 0.01, 1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(heterogeneous_from_histogram(&hist, &p, 0, &mut rng).is_err());
    }

    #[test]
    fn individual_charging_touches_only_sampled_voters() {
        let ensemble: Vec<_> = (0..300)
            .map(|i| TeacherDistribution::point_mass(i, TokenId((i / 100) as u64 + 1)))
            .collect();
        let p = params(1.0, 0.05, 1, 300);
        let mut ledger = PrivacyLedger::new(&p, 300, 1_000, 3).unwrap();
        let master = SharedRandomness::new(6);
        let mut removed_seen = std::collections::BTreeSet::new();
        for t in 0..300 {
            if ledger.live_teachers().is_empty() {
                break;
            }
            let rho = master.derive(t);
            let before: Vec<usize> = ledger.live_teachers();
            let q = aggregate_heterogeneous_individual(&ensemble, &rho, &p, &mut ledger, &mut rho.rng()).unwrap();
            for &i in &q.sampled_voters {
                assert!(before.contains(&i));
                assert_eq!(ensemble[i].entries()[0].0, q.candidate);
                assert!(!removed_seen.contains(&i));
            }
            match q.threshold_outcome {
                ThresholdOutcome::Between => assert_eq!(q.charged, q.sampled_voters),
                _ => assert!(q.charged.is_empty()),
            }
            match q.threshold_outcome {
                ThresholdOutcome::Below => assert_eq!(q.outcome, AggregateOutcome::Bot),
                _ => assert_eq!(q.outcome.token(), Some(q.candidate)),
            }
            removed_seen.extend(q.newly_removed.iter().copied());
        }
        assert!(!removed_seen.is_empty());
    }

    #[test]
    fn individual_requires_live_teachers() {
        let ensemble: Vec<_> = (0..2).map(|i| TeacherDistribution::point_mass(i, TokenId(1))).collect();
        let p = params(1.0, 0.05, 1, 2);
        let mut ledger = PrivacyLedger::new(&p, 2, 10, 1).unwrap();
        ledger.charge_teachers(&[0, 1]).unwrap();
        let rho = SharedRandomness::new(0);
        assert!(matches!(
            aggregate_heterogeneous_individual(&ensemble, &rho, &p, &mut ledger, &mut rho.rng()),
            Err(Error::NoLiveTeachers)
        ));
        let mut short = PrivacyLedger::new(&p, 3, 10, 1).unwrap();
        assert!(aggregate_heterogeneous_individual(&ensemble, &rho, &p, &mut short, &mut rho.rng()).is_err());
    }

    #[test]
    fn loop_point_mass_repeats_token() {
        let provider = FixedProvider((0..100).map(|i| TeacherDistribution::point_mass(i, TokenId(5))).collect());
        let p = params(1.0, 1e-4, 1, 100);
        let mut ledger = PrivacyLedger::new(&p, 100, 100, 1).unwrap();
        let run = hot_pate_loop(
            &provider,
            &p,
            &mut ledger,
            &LoopConfig::new(AggregationMode::Homogeneous, 20),
            &SharedRandomness::new(1),
        )
        .unwrap();
        assert_eq!(run.status, LoopStatus::Completed);
        assert_eq!(run.tokens(), vec![TokenId(5); 20]);
    }

    #[test]
    fn loop_disjoint_stops_with_bot_after_retries() {
        let provider = FixedProvider(disjoint(100));
        let p = params(1.0, 1e-4, 101, 100);
        let mut ledger = PrivacyLedger::new(&p, 100, 100, 1).unwrap();
        let run = hot_pate_loop(
            &provider,
            &p,
            &mut ledger,
            &LoopConfig::new(AggregationMode::Homogeneous, 5),
            &SharedRandomness::new(2),
        )
        .unwrap();
        assert_eq!(run.status, LoopStatus::NoToken);
        assert_eq!(run.steps.len(), 1);
        assert_eq!(run.steps[0].outcome, AggregateOutcome::Bot);
        assert_eq!(run.steps[0].retries, 3);
        assert_eq!(run.answers.len(), 4);
    }

    #[test]
    fn loop_respects_markov_constraint() {
        let provider = MarkovProvider { n: 200 };
        let p = params(1.0, 1e-3, 2, 200);
        for s in 0..1000u128 {
            let mut ledger = PrivacyLedger::new(&p, 200, 100, 1).unwrap();
            let run = hot_pate_loop(
                &provider,
                &p,
                &mut ledger,
                &LoopConfig::new(AggregationMode::Homogeneous, 8),
                &SharedRandomness::new(s),
            )
            .unwrap();
            let tokens = run.tokens();
            assert!(!tokens.is_empty());
            for (i, &tok) in tokens.iter().enumerate() {
                if tok == MarkovProvider::B {
                    assert!(i > 0 && tokens[i - 1] == MarkovProvider::A, "{tokens:?}");
                }
            }
        }
    }

    #[test]
    fn loop_stops_when_hits_exhausted() {
        // 92 votes sit on the reporting threshold, so the target probability is 1/3.
        let provider = FixedProvider(
            (0..100)
                .map(|i| {
                    let tok = if i < 92 { 1 } else { 2 };
                    TeacherDistribution::point_mass(i, TokenId(tok))
                })
                .collect(),
        );
        let p = params(1.0, 1e-4, 2, 100);
        assert_eq!(p.threshold, 92);
        let mut ledger = PrivacyLedger::new(&p, 100, 3, 1).unwrap();
        let run = hot_pate_loop(
            &provider,
            &p,
            &mut ledger,
            &LoopConfig {
                mode: AggregationMode::HomogeneousWrapped,
                max_tokens: 1000,
                retry_cap: 1000,
            },
            &SharedRandomness::new(3),
        )
        .unwrap();
        assert_eq!(run.status, LoopStatus::BudgetExhausted);
        assert_eq!(ledger.hits_used, 3);
        let last_hit = run.answers.iter().rposition(|o| *o == AggregateOutcome::TargetHit).unwrap();
        assert_eq!(last_hit, run.answers.len() - 1);
    }

    #[test]
    fn step_records_serialize_flat() {
        let rec = StepRecord {
            step: 2,
            outcome: AggregateOutcome::Token { token: TokenId(7), count: Some(81) },
            retries: 1,
        };
        let line = serde_json::to_string(&rec).unwrap();
        assert_eq!(line, r#"{"step":2,"outcome":"token","token":7,"count":81,"retries":1}"#);
        assert_eq!(serde_json::from_str::<StepRecord>(&line).unwrap(), rec);
        let bot = StepRecord { step: 0, outcome: AggregateOutcome::Bot, retries: 3 };
        assert_eq!(serde_json::to_string(&bot).unwrap(), r#"{"step":0,"outcome":"bot","retries":3}"#);
        assert!(serde_json::from_str::<StepRecord>(r#"{"step":0,"outcome":"maybe","retries":0}"#).is_err());
    }

    #[test]
    fn loop_rejects_zero_tokens() {
        let provider = MarkovProvider { n: 4 };
        let p = params(1.0, 1e-3, 2, 4);
        let mut ledger = PrivacyLedger::new(&p, 4, 1, 1).unwrap();
        assert!(hot_pate_loop(
            &provider,
            &p,
            &mut ledger,
            &LoopConfig::new(AggregationMode::Homogeneous, 0),
            &SharedRandomness::new(0)
        )
        .is_err());
    }
}
