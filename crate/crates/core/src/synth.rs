//! Synthetic teacher ensembles and the analytic max-frequency model.
//!
//! Token namespace: special/common tokens use ids `1..=k`; the private token
//! of teacher `i` is `1_000_000 + i`; shared-pool private tokens are
//! `2_000_000 + m`.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::randomness::SharedRandomness;
use crate::types::{TeacherDistribution, TokenId};

pub const PRIVATE_TOKEN_BASE: u64 = 1_000_000;
pub const POOL_TOKEN_BASE: u64 = 2_000_000;

pub fn special_token(k: u64) -> TokenId {
    TokenId(k)
}

pub fn private_token(teacher: usize) -> TokenId {
    TokenId(PRIVATE_TOKEN_BASE + teacher as u64)
}

pub fn is_private_token(token: TokenId) -> bool {
    token.0 >= PRIVATE_TOKEN_BASE
}

/// `p_j = exp(w_j / t) / sum_i exp(w_i / t)` over tokens `1..=weights.len()`.
///
/// Tokens whose probability underflows to zero are dropped from the support.
pub fn softmax_with_temperature(weights: &[f64], t: f64) -> Result<TeacherDistribution> {
    if !(t > 0.0) {
        return Err(Error::NonPositiveTemperature(t));
    }
    if weights.is_empty() {
        return Err(Error::EmptySupport);
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidParameter("weights must be finite".into()));
    }
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = weights.iter().map(|w| ((w - max) / t).exp()).collect();
    let total: f64 = exps.iter().sum();
    TeacherDistribution::new(
        0,
        exps.iter()
            .enumerate()
            .map(|(i, e)| (special_token(i as u64 + 1), e / total))
            .filter(|&(_, p)| p > 0.0),
    )
}

/// `n` identical teachers uniform over special tokens `1..=k`.
pub fn uniform_k_ensemble(n: usize, k: usize) -> Vec<TeacherDistribution> {
    let q = 1.0 / k as f64;
    let base = TeacherDistribution::new(0, (1..=k as u64).map(|j| (special_token(j), q)))
        .expect("uniform distribution is valid");
    (0..n).map(|i| base.clone().with_teacher(i)).collect()
}

/// How the per-teacher part `r^(i)` of a mixture is built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrivateMode {
    /// Teacher `i` puts its private mass on its own token.
    DisjointSingletons,
    /// Teacher `i` puts its private mass on one token drawn from a pool of
    /// `size` tokens shared by all teachers, so private tokens may collide.
    SharedPool { size: u64, seed: u64 },
}

/// `p^(i) = alpha * s + (1 - alpha) * r^(i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub alpha: f64,
    /// Common part `s` as token/probability pairs.
    pub common: Vec<(TokenId, f64)>,
    pub private_mode: PrivateMode,
}

impl MixtureSpec {
    /// Common part uniform over special tokens `1..=k`.
    pub fn uniform_common(alpha: f64, k: usize, private_mode: PrivateMode) -> Self {
        MixtureSpec {
            alpha,
            common: (1..=k as u64).map(|j| (special_token(j), 1.0 / k as f64)).collect(),
            private_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!("alpha={} not in [0,1]", self.alpha)));
        }
        TeacherDistribution::new(0, self.common.iter().copied())?;
        if self.common.iter().any(|&(t, _)| is_private_token(t)) {
            return Err(Error::InvalidParameter(
                "common tokens must lie below the private namespace".into(),
            ));
        }
        if let PrivateMode::SharedPool { size: 0, .. } = self.private_mode {
            return Err(Error::InvalidParameter("private pool must be non-empty".into()));
        }
        Ok(())
    }

    fn private_of(&self, teacher: usize) -> TokenId {
        match self.private_mode {
            PrivateMode::DisjointSingletons => private_token(teacher),
            PrivateMode::SharedPool { size, seed } => {
                let pick = SharedRandomness::new(seed as u128)
                    .derive(teacher as u64)
                    .seed() as u64
                    % size;
                TokenId(POOL_TOKEN_BASE + pick)
            }
        }
    }
}

pub fn mixture_ensemble(spec: &MixtureSpec, n: usize) -> Result<Vec<TeacherDistribution>> {
    spec.validate()?;
    let alpha = spec.alpha;
    (0..n)
        .map(|i| {
            let mut entries: Vec<(TokenId, f64)> = Vec::new();
            if alpha > 0.0 {
                entries.extend(spec.common.iter().map(|&(t, p)| (t, alpha * p)));
            }
            if alpha < 1.0 {
                entries.push((spec.private_of(i), 1.0 - alpha));
            }
            TeacherDistribution::new(i, entries)
        })
        .collect()
}

/// Four (or more) special tokens carrying `1 - private_weight` of the mass
/// in proportion to `special_weights`, plus one private token per teacher.
pub fn planetz_like_ensemble(
    n: usize,
    special: &[TokenId],
    special_weights: &[f64],
    private_weight: f64,
) -> Result<Vec<TeacherDistribution>> {
    if special.is_empty() || special.len() != special_weights.len() {
        return Err(Error::InvalidParameter(
            "special tokens and weights must be non-empty and the same length".into(),
        ));
    }
    if special_weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::InvalidParameter("special weights must be positive".into()));
    }
    let total: f64 = special_weights.iter().sum();
    let spec = MixtureSpec {
        alpha: 1.0 - private_weight,
        common: special
            .iter()
            .zip(special_weights)
            .map(|(&t, &w)| (t, w / total))
            .collect(),
        private_mode: PrivateMode::DisjointSingletons,
    };
    mixture_ensemble(&spec, n)
}

/// One draw of `c ~ Bin(n, exp(-y (1 - alpha)))` with `y ~ Exp(alpha)`.
pub fn analytic_max_freq_sample<R: Rng + ?Sized>(alpha: f64, n: u64, rng: &mut R) -> Result<u64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!("alpha={alpha} not in (0,1]")));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let y = Exp::new(alpha).expect("positive rate").sample(rng);
    let p = (-y * (1.0 - alpha)).exp();
    Ok(Binomial::new(n, p).expect("p in [0,1]").sample(rng))
}

/// `Pr[c >= k]` under the analytic model, by quadrature.
///
/// Substituting `x = exp(-alpha y)` turns the expectation into
/// `int_0^1 Pr[Bin(n, x^((1-alpha)/alpha)) >= k] dx`, a bounded monotone
/// integrand on the unit interval.
pub fn model_tail_probability(alpha: f64, n: u64, k: u64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!("alpha={alpha} not in (0,1]")));
    }
    if k == 0 {
        return Ok(1.0);
    }
    if k > n {
        return Ok(0.0);
    }
    let binom_tail = |p: f64| -> f64 {
        if p <= 0.0 {
            0.0
        } else if p >= 1.0 {
            1.0
        } else {
            beta_reg(k as f64, (n - k + 1) as f64, p)
        }
    };
    if alpha == 1.0 {
        return Ok(1.0);
    }
    let power = (1.0 - alpha) / alpha;
    // Composite Simpson; the integrand only varies near x = 1 for small alpha,
    // so the grid is fine enough everywhere.
    let intervals = 20_000usize;
    let h = 1.0 / intervals as f64;
    let f = |x: f64| binom_tail(x.powf(power));
    let mut sum = f(0.0) + f(1.0);
    for i in 1..intervals {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(i as f64 * h);
    }
    Ok(sum * h / 3.0)
}

/// `Pr[c <= k]` under the analytic model.
pub fn model_cdf(alpha: f64, n: u64, k: u64) -> Result<f64> {
    Ok(1.0 - model_tail_probability(alpha, n, k + 1)?)
}
