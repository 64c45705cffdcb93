//! Coordinated ensemble sampling and the independent-sampling baseline.
//!
//! Under coordinated sampling teacher `i` votes for
//! `argmax_j p_j / u_j`, where `u_j` comes from the shared randomness. Every
//! teacher's vote is marginally distributed as its own distribution, but
//! teachers with similar distributions tend to vote alike, so a token that
//! many teachers hold with small probability sometimes wins a large share of
//! the votes instead of its expected share.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::randomness::SharedRandomness;
use crate::trials::map_trials;
use crate::types::{FrequencyHistogram, TeacherDistribution, TokenId};

/// One vote per teacher, in teacher order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteVector(pub Vec<TokenId>);

impl VoteVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn histogram(&self) -> FrequencyHistogram {
        FrequencyHistogram::from_votes(&self.0)
    }
}

/// An ensemble indexed for repeated sampling.
///
/// Tokens are mapped to dense indices in increasing id order, so index order
/// and token order agree and ties can be broken on the index.
#[derive(Debug, Clone)]
pub struct PreparedEnsemble {
    tokens: Vec<TokenId>,
    offsets: Vec<usize>,
    entries: Vec<(u32, f64)>,
}

/// Per-worker buffers reused across trials.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    inv_u: Vec<f64>,
    pub votes: Vec<u32>,
    pub counts: Vec<u32>,
}

impl PreparedEnsemble {
    pub fn new(ensemble: &[TeacherDistribution]) -> Result<Self> {
        if ensemble.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        let tokens: Vec<TokenId> = ensemble
            .iter()
            .flat_map(|d| d.entries().iter().map(|&(t, _)| t))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut offsets = Vec::with_capacity(ensemble.len() + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for dist in ensemble {
            for &(t, p) in dist.entries() {
                let idx = tokens.binary_search(&t).expect("token collected above");
                entries.push((idx as u32, p));
            }
            offsets.push(entries.len());
        }
        Ok(PreparedEnsemble {
            tokens,
            offsets,
            entries,
        })
    }

    /// Number of teachers.
    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Union of all supports, sorted.
    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn token_index(&self, token: TokenId) -> Option<usize> {
        self.tokens.binary_search(&token).ok()
    }

    pub fn teacher_entries(&self, teacher: usize) -> &[(u32, f64)] {
        &self.entries[self.offsets[teacher]..self.offsets[teacher + 1]]
    }

    /// Coordinated votes (as token indices) into `scratch.votes`.
    pub fn coordinated_votes(&self, rho: &SharedRandomness, scratch: &mut Scratch) {
        scratch.inv_u.clear();
        scratch
            .inv_u
            .extend(self.tokens.iter().map(|&t| 1.0 / rho.exp(t)));
        scratch.votes.clear();
        for teacher in 0..self.n() {
            let mut best = u32::MAX;
            let mut best_score = f64::NEG_INFINITY;
            // Entries are in increasing token order; strict `>` keeps the
            // smallest token on an exact tie.
            for &(idx, p) in self.teacher_entries(teacher) {
                let score = p * scratch.inv_u[idx as usize];
                if score > best_score {
                    best_score = score;
                    best = idx;
                }
            }
            scratch.votes.push(best);
        }
    }

    /// Coordinated frequency counts, indexed like [`Self::tokens`], into `scratch.counts`.
    pub fn coordinated_counts(&self, rho: &SharedRandomness, scratch: &mut Scratch) {
        self.coordinated_votes(rho, scratch);
        tally(&scratch.votes, self.tokens.len(), &mut scratch.counts);
    }

    /// Independent votes, each teacher drawing from its own distribution.
    pub fn independent_votes<R: Rng>(&self, rng: &mut R, scratch: &mut Scratch) {
        scratch.votes.clear();
        for teacher in 0..self.n() {
            let entries = self.teacher_entries(teacher);
            let x: f64 = rng.gen();
            let mut acc = 0.0;
            // Fall back to the last entry to absorb rounding in the total mass.
            let mut pick = entries[entries.len() - 1].0;
            for &(idx, p) in entries {
                acc += p;
                if x < acc {
                    pick = idx;
                    break;
                }
            }
            scratch.votes.push(pick);
        }
    }

    pub fn independent_counts<R: Rng>(&self, rng: &mut R, scratch: &mut Scratch) {
        self.independent_votes(rng, scratch);
        tally(&scratch.votes, self.tokens.len(), &mut scratch.counts);
    }

    pub fn votes_to_tokens(&self, votes: &[u32]) -> VoteVector {
        VoteVector(votes.iter().map(|&i| self.tokens[i as usize]).collect())
    }

    pub fn counts_to_histogram(&self, counts: &[u32]) -> FrequencyHistogram {
        FrequencyHistogram::from_counts(
            self.tokens
                .iter()
                .zip(counts)
                .map(|(&t, &c)| (t, c as u64)),
        )
    }

    /// Number of teachers holding `token` with probability at least `q`.
    pub fn support_count(&self, token: TokenId, q: f64) -> usize {
        let Some(idx) = self.token_index(token) else {
            return 0;
        };
        (0..self.n())
            .filter(|&i| {
                self.teacher_entries(i)
                    .iter()
                    .any(|&(j, p)| j as usize == idx && p >= q)
            })
            .count()
    }

    /// `sum_i p^(i)_j` for every token, indexed like [`Self::tokens`].
    pub fn expected_counts(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.tokens.len()];
        for &(idx, p) in &self.entries {
            out[idx as usize] += p;
        }
        out
    }
}

fn tally(votes: &[u32], n_tokens: usize, counts: &mut Vec<u32>) {
    counts.clear();
    counts.resize(n_tokens, 0);
    for &v in votes {
        counts[v as usize] += 1;
    }
}

/// Coordinated votes and their histogram for one draw of shared randomness.
pub fn coordinated_sample(
    ensemble: &[TeacherDistribution],
    rho: &SharedRandomness,
) -> Result<(VoteVector, FrequencyHistogram)> {
    let prepared = PreparedEnsemble::new(ensemble)?;
    let mut scratch = Scratch::default();
    prepared.coordinated_votes(rho, &mut scratch);
    let votes = prepared.votes_to_tokens(&scratch.votes);
    let hist = votes.histogram();
    Ok((votes, hist))
}

/// Independent votes `y_i ~ p^(i)` and their histogram.
pub fn independent_sample(
    ensemble: &[TeacherDistribution],
    rng_seed: u64,
) -> Result<(VoteVector, FrequencyHistogram)> {
    let prepared = PreparedEnsemble::new(ensemble)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut scratch = Scratch::default();
    prepared.independent_votes(&mut rng, &mut scratch);
    let votes = prepared.votes_to_tokens(&scratch.votes);
    let hist = votes.histogram();
    Ok((votes, hist))
}

/// `c_{j,q}`: the number of teachers with `p^(i)_j >= q`.
pub fn support_count(ensemble: &[TeacherDistribution], token: TokenId, q: f64) -> Result<usize> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidParameter(format!("q={q} not in (0,1]")));
    }
    Ok(ensemble.iter().filter(|d| d.prob(token) >= q).count())
}

/// `sum_j min(a_j, b_j) / sum_j max(a_j, b_j)`.
pub fn weighted_jaccard(a: &TeacherDistribution, b: &TeacherDistribution) -> f64 {
    let tokens: BTreeSet<TokenId> = a
        .entries()
        .iter()
        .chain(b.entries())
        .map(|&(t, _)| t)
        .collect();
    let (mut num, mut den) = (0.0, 0.0);
    for t in tokens {
        let (pa, pb) = (a.prob(t), b.prob(t));
        num += pa.min(pb);
        den += pa.max(pb);
    }
    num / den
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchRate {
    /// Fraction of trials in which both teachers cast the same coordinated vote.
    pub empirical: f64,
    pub weighted_jaccard: f64,
    pub trials: u64,
}

/// Monte Carlo estimate of `Pr[y_a = y_b]` under coordinated sampling.
pub fn pairwise_match_rate(
    a: &TeacherDistribution,
    b: &TeacherDistribution,
    trials: u64,
    master: &SharedRandomness,
) -> Result<MatchRate> {
    if trials < 10_000 {
        return Err(Error::InvalidParameter(format!(
            "pairwise match rate needs at least 10^4 trials, got {trials}"
        )));
    }
    let prepared = PreparedEnsemble::new(&[a.clone(), b.clone()])?;
    let matches = map_trials(trials, master, Scratch::default, |scratch, _, rho| {
        prepared.coordinated_votes(&rho, scratch);
        scratch.votes[0] == scratch.votes[1]
    });
    let hits = matches.iter().filter(|&&m| m).count();
    Ok(MatchRate {
        empirical: hits as f64 / trials as f64,
        weighted_jaccard: weighted_jaccard(a, b),
        trials,
    })
}
