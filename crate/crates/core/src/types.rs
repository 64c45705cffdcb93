//! Domain types shared by every module.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::noise_error_bound;

/// Absolute tolerance on the total mass of a distribution.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// Opaque identity of a token in the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u64);

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u64> for TokenId {
    fn from(id: u64) -> Self {
        TokenId(id)
    }
}

/// Sparse probability vector over tokens contributed by one teacher.
///
/// Entries are kept sorted by token id; every stored probability is strictly
/// positive and the total mass is 1 within [`PROB_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution", into = "RawDistribution")]
pub struct TeacherDistribution {
    teacher: usize,
    entries: Vec<(TokenId, f64)>,
}

#[derive(Serialize, Deserialize)]
struct RawDistribution {
    teacher: usize,
    probs: BTreeMap<TokenId, f64>,
}

impl TryFrom<RawDistribution> for TeacherDistribution {
    type Error = Error;

    fn try_from(raw: RawDistribution) -> Result<Self> {
        TeacherDistribution::new(raw.teacher, raw.probs)
    }
}

impl From<TeacherDistribution> for RawDistribution {
    fn from(d: TeacherDistribution) -> Self {
        RawDistribution {
            teacher: d.teacher,
            probs: d.entries.into_iter().collect(),
        }
    }
}

impl TeacherDistribution {
    pub fn new(teacher: usize, probs: impl IntoIterator<Item = (TokenId, f64)>) -> Result<Self> {
        let mut entries: Vec<(TokenId, f64)> = probs.into_iter().collect();
        if entries.is_empty() {
            return Err(Error::EmptySupport);
        }
        entries.sort_by_key(|&(t, _)| t);
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::InvalidParameter(format!(
                    "token {} listed twice",
                    pair[0].0
                )));
            }
        }
        for &(token, prob) in &entries {
            // NaN fails this test too.
            if !(prob > 0.0) {
                return Err(Error::NonPositiveProbability { token, prob });
            }
        }
        let sum: f64 = entries.iter().map(|&(_, p)| p).sum();
        if (sum - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::SumNotOne { sum });
        }
        Ok(TeacherDistribution { teacher, entries })
    }

    /// A distribution putting all mass on one token.
    pub fn point_mass(teacher: usize, token: TokenId) -> Self {
        TeacherDistribution {
            teacher,
            entries: vec![(token, 1.0)],
        }
    }

    pub fn teacher(&self) -> usize {
        self.teacher
    }

    pub fn with_teacher(mut self, teacher: usize) -> Self {
        self.teacher = teacher;
        self
    }

    /// Support entries sorted by token id.
    pub fn entries(&self) -> &[(TokenId, f64)] {
        &self.entries
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.entries
            .binary_search_by_key(&token, |&(t, _)| t)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn support_size(&self) -> usize {
        self.entries.len()
    }

    pub fn max_prob(&self) -> f64 {
        self.entries.iter().map(|&(_, p)| p).fold(0.0, f64::max)
    }
}

/// Validates a sparse probability map into a distribution for teacher 0.
pub fn validate_distribution(
    entries: impl IntoIterator<Item = (TokenId, f64)>,
) -> Result<TeacherDistribution> {
    TeacherDistribution::new(0, entries)
}

/// Reads an ensemble from JSON Lines, one `{"teacher": i, "probs": {...}}` per line.
pub fn read_ensemble_jsonl<R: BufRead>(reader: R) -> Result<Vec<TeacherDistribution>> {
    let mut ensemble = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        ensemble.push(serde_json::from_str(&line)?);
    }
    Ok(ensemble)
}

pub fn write_ensemble_jsonl<W: Write>(mut writer: W, ensemble: &[TeacherDistribution]) -> Result<()> {
    for dist in ensemble {
        serde_json::to_writer(&mut writer, dist)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Sparse token counts whose total equals the number of voting teachers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyHistogram {
    counts: BTreeMap<TokenId, u64>,
    n_teachers: u64,
}

impl FrequencyHistogram {
    pub fn from_votes(votes: &[TokenId]) -> Self {
        let mut counts = BTreeMap::new();
        for &v in votes {
            *counts.entry(v).or_insert(0) += 1;
        }
        FrequencyHistogram {
            counts,
            n_teachers: votes.len() as u64,
        }
    }

    /// Builds a histogram from explicit counts; zero counts are dropped.
    pub fn from_counts(counts: impl IntoIterator<Item = (TokenId, u64)>) -> Self {
        let counts: BTreeMap<TokenId, u64> = counts.into_iter().filter(|&(_, c)| c > 0).collect();
        let n_teachers = counts.values().sum();
        FrequencyHistogram { counts, n_teachers }
    }

    pub fn count(&self, token: TokenId) -> u64 {
        self.counts.get(&token).copied().unwrap_or(0)
    }

    pub fn n_teachers(&self) -> u64 {
        self.n_teachers
    }

    pub fn support_size(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenId, u64)> + '_ {
        self.counts.iter().map(|(&t, &c)| (t, c))
    }

    /// Highest count and the smallest token attaining it.
    pub fn max_entry(&self) -> Option<(TokenId, u64)> {
        self.iter()
            .fold(None, |best: Option<(TokenId, u64)>, (t, c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((t, c)),
            })
    }
}

/// Parameters of the diversity-preservation contract.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityParams {
    pub tau: u64,
    pub beta: f64,
    pub gamma: f64,
    pub mu: f64,
}

impl DiversityParams {
    /// Contract met by the homogeneous (noisy argmax) aggregator.
    pub fn homogeneous(mu: f64, n: u64, l: u64) -> Self {
        DiversityParams {
            tau: (mu * (n as f64 / 2.0 + 2.0 * l as f64)).ceil() as u64,
            beta: mu.ln() / 2.0,
            gamma: 2.0,
            mu,
        }
    }

    /// Contract met by the heterogeneous (weighted sampling) aggregator with one draw.
    pub fn heterogeneous(mu: f64, l: u64) -> Self {
        DiversityParams {
            tau: (mu * 2.0 * l as f64).ceil() as u64,
            beta: mu.ln() / (2.0 * mu),
            gamma: 1.0,
            mu,
        }
    }

    pub fn validate(&self, n: u64) -> Result<()> {
        if self.tau < 1 || self.tau > n {
            return Err(Error::InvalidParameter(format!(
                "tau={} must lie in [1, {n}]",
                self.tau
            )));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidParameter(format!("beta={} not in (0,1]", self.beta)));
        }
        if !(self.gamma >= 1.0) {
            return Err(Error::InvalidParameter(format!("gamma={} < 1", self.gamma)));
        }
        if !(self.mu > 1.0) {
            return Err(Error::InvalidParameter(format!("mu={} <= 1", self.mu)));
        }
        Ok(())
    }
}

/// Privacy budget, per-query parameters and the noisy-max error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub eps_total: f64,
    pub delta_total: f64,
    pub eps0: f64,
    pub delta0: f64,
    /// High-probability additive error of the noisy maximizer.
    pub l: u64,
    /// Nominal reporting threshold `n/2 + L` (integer part).
    pub threshold: u64,
}

impl PrivacyParams {
    /// Derives `L` from `eps0`, `delta0` and a bound on histogram support size.
    pub fn calibrated(
        eps_total: f64,
        delta_total: f64,
        eps0: f64,
        delta0: f64,
        support_bound: usize,
        n: u64,
    ) -> Result<Self> {
        let l = noise_error_bound(eps0, support_bound, delta0)?;
        let params = PrivacyParams {
            eps_total,
            delta_total,
            eps0,
            delta0,
            l,
            threshold: n / 2 + l,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_total > 0.0) {
            return Err(Error::NonPositiveEps(self.eps_total));
        }
        if !(self.eps0 > 0.0) {
            return Err(Error::NonPositiveEps(self.eps0));
        }
        if self.eps0 > self.eps_total {
            return Err(Error::InvalidParameter(format!(
                "eps0={} exceeds eps_total={}",
                self.eps0, self.eps_total
            )));
        }
        for (name, d) in [("delta_total", self.delta_total), ("delta0", self.delta0)] {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::InvalidParameter(format!("{name}={d} not in (0,1)")));
            }
        }
        let min_l = noise_error_bound(self.eps0, 1, self.delta0)?;
        if self.l < min_l {
            return Err(Error::InvalidParameter(format!(
                "L={} below the single-entry bound {min_l} for eps0={}",
                self.l, self.eps0
            )));
        }
        Ok(())
    }
}

/// Label of a per-query response, without any released count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OutcomeLabel {
    Token(TokenId),
    Bot,
    TargetHit,
}

/// Result of one aggregation query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggregateOutcome {
    /// A token, with its sanitized count when the mechanism releases one.
    Token { token: TokenId, count: Option<u64> },
    Bot,
    TargetHit,
}

impl AggregateOutcome {
    pub fn label(&self) -> OutcomeLabel {
        match *self {
            AggregateOutcome::Token { token, .. } => OutcomeLabel::Token(token),
            AggregateOutcome::Bot => OutcomeLabel::Bot,
            AggregateOutcome::TargetHit => OutcomeLabel::TargetHit,
        }
    }

    pub fn token(&self) -> Option<TokenId> {
        match *self {
            AggregateOutcome::Token { token, .. } => Some(token),
            _ => None,
        }
    }

    pub fn is_token(&self) -> bool {
        matches!(self, AggregateOutcome::Token { .. })
    }
}

impl From<OutcomeLabel> for AggregateOutcome {
    fn from(label: OutcomeLabel) -> Self {
        match label {
            OutcomeLabel::Token(token) => AggregateOutcome::Token { token, count: None },
            OutcomeLabel::Bot => AggregateOutcome::Bot,
            OutcomeLabel::TargetHit => AggregateOutcome::TargetHit,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(id: u64) -> TokenId {
        TokenId(id)
    }

    #[test]
    fn validation_examples() {
        assert!(validate_distribution([(t(1), 1.0)]).is_ok());
        assert!(validate_distribution([(t(1), 0.5), (t(2), 0.5)]).is_ok());
        assert!(matches!(
            validate_distribution([(t(1), 0.5), (t(2), 0.4)]),
            Err(Error::SumNotOne { .. })
        ));
        assert!(matches!(validate_distribution([]), Err(Error::EmptySupport)));
        assert!(matches!(
            validate_distribution([(t(1), 1.0), (t(2), 0.0)]),
            Err(Error::NonPositiveProbability { .. })
        ));
        assert!(matches!(
            validate_distribution([(t(1), 1.5), (t(2), -0.5)]),
            Err(Error::NonPositiveProbability { .. })
        ));
        assert!(validate_distribution([(t(1), 0.5), (t(1), 0.5)]).is_err());
    }

    #[test]
    fn tolerance_is_absolute_1e9() {
        assert!(validate_distribution([(t(1), 0.5), (t(2), 0.5 + 5e-10)]).is_ok());
        assert!(validate_distribution([(t(1), 0.5), (t(2), 0.5 + 5e-9)]).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let ensemble = vec![
            TeacherDistribution::new(0, [(t(3), 0.25), (t(1), 0.75)]).unwrap(),
            TeacherDistribution::point_mass(1, t(1_000_001)),
        ];
        let mut buf = Vec::new();
        write_ensemble_jsonl(&mut buf, &ensemble).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"teacher":0,"probs":{"1":0.75,"3":0.25}}"#
        );
        let back = read_ensemble_jsonl(&buf[..]).unwrap();
        assert_eq!(back, ensemble);
    }

    #[test]
    fn jsonl_rejects_invalid_lines() {
        let bad = br#"{"teacher":0,"probs":{"1":0.5}}"#;
        assert!(read_ensemble_jsonl(&bad[..]).is_err());
    }

    #[test]
    fn histogram_totals_and_max() {
        let votes = [t(2), t(1), t(2), t(3), t(2)];
        let h = FrequencyHistogram::from_votes(&votes);
        assert_eq!(h.n_teachers(), 5);
        assert_eq!(h.iter().map(|(_, c)| c).sum::<u64>(), 5);
        assert_eq!(h.max_entry(), Some((t(2), 3)));
        let tie = FrequencyHistogram::from_counts([(t(5), 2), (t(4), 2), (t(9), 0)]);
        assert_eq!(tie.max_entry(), Some((t(4), 2)));
        assert_eq!(tie.support_size(), 2);
    }

    #[test]
    fn privacy_params_validation() {
        let p = PrivacyParams::calibrated(1.0, 1e-6, 1.0, 0.01, 1, 100).unwrap();
        assert_eq!(p.l, 22);
        assert_eq!(p.threshold, 72);
        let mut bad = p;
        bad.l = 3;
        assert!(bad.validate().is_err());
        assert!(PrivacyParams::calibrated(0.5, 1e-6, 1.0, 0.01, 1, 100).is_err());
        assert!(PrivacyParams::calibrated(1.0, 1e-6, 0.0, 0.01, 1, 100).is_err());
    }

    #[test]
    fn diversity_params_shapes() {
        let h = DiversityParams::heterogeneous(2.0, 10);
        assert_eq!(h.tau, 40);
        assert!((h.beta - 2f64.ln() / 4.0).abs() < 1e-15);
        assert!(h.validate(100).is_ok());
        // tau = mu (n/2 + 2L) exceeds n whenever mu >= 2.
        let homo = DiversityParams::homogeneous(2.0, 100, 10);
        assert_eq!(homo.tau, 140);
        assert!(homo.validate(100).is_err());
    }

    proptest::proptest! {
        #[test]
        fn histogram_sums_to_vote_count(votes in proptest::collection::vec(0u64..20, 0..200)) {
            let votes: Vec<TokenId> = votes.into_iter().map(TokenId).collect();
            let h = FrequencyHistogram::from_votes(&votes);
            proptest::prop_assert_eq!(h.iter().map(|(_, c)| c).sum::<u64>(), votes.len() as u64);
            proptest::prop_assert!(h.iter().all(|(_, c)| c >= 1));
        }
    }
}
