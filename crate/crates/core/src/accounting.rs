//! Privacy ledger: target-hit budget and per-teacher individual charges.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::PrivacyParams;

/// Budget of target hits and whether it came from the calibrated curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitBudget {
    pub hits: u64,
    /// False when the simple-composition fallback was used.
    pub calibrated: bool,
}

/// Number of target hits affordable under total budget `eps_total`.
///
/// The `(10 eps0)^-2` curve only applies for `eps_total = 1, eps0 <= 0.01`;
/// elsewhere this falls back to `floor(eps_total / eps0)`.
pub fn default_hit_budget(eps_total: f64, eps0: f64) -> Result<HitBudget> {
    if !(eps_total > 0.0) {
        return Err(Error::NonPositiveEps(eps_total));
    }
    if !(eps0 > 0.0) {
        return Err(Error::NonPositiveEps(eps0));
    }
    // Absorbs representation error, e.g. 1/(10*0.01)^2 = 99.99999999999999.
    let floor = |x: f64| (x * (1.0 + 1e-12)).floor() as u64;
    if (eps_total - 1.0).abs() < 1e-12 && eps0 <= 0.01 {
        Ok(HitBudget {
            hits: floor((10.0 * eps0).powi(-2)),
            calibrated: true,
        })
    } else {
        log::warn!(
            "hit budget outside calibrated regime (eps={eps_total}, eps0={eps0}); using simple composition"
        );
        Ok(HitBudget {
            hits: floor(eps_total / eps0),
            calibrated: false,
        })
    }
}

/// `n = C_delta / eps0` teachers with `C_delta = 2 ln(1/delta0)`.
pub fn suggested_teacher_count(eps0: f64, delta0: f64) -> u64 {
    (2.0 * (1.0 / delta0).ln() / eps0).ceil() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChargeStatus {
    Ok { remaining: u64 },
    Exhausted,
}

/// Read and charge access to per-teacher counters.
pub trait ChargeLedgerView {
    fn n_teachers(&self) -> usize;
    fn is_live(&self, teacher: usize) -> bool;
    fn remaining(&self, teacher: usize) -> u64;
    /// Charges every listed teacher once; returns the newly removed ones.
    fn charge(&mut self, teachers: &[usize]) -> Result<Vec<usize>>;

    fn live_teachers(&self) -> Vec<usize> {
        (0..self.n_teachers()).filter(|&i| self.is_live(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub eps_total: f64,
    pub delta_total: f64,
    pub eps0: f64,
    pub delta0: f64,
    pub hit_budget: u64,
    pub hits_used: u64,
    pub per_teacher_limit: u64,
    n_teachers: usize,
    per_teacher_used: BTreeMap<usize, u64>,
    removed: BTreeSet<usize>,
}

impl PrivacyLedger {
    pub fn new(
        params: &PrivacyParams,
        n_teachers: usize,
        hit_budget: u64,
        per_teacher_limit: u64,
    ) -> Result<Self> {
        if per_teacher_limit == 0 {
            return Err(Error::InvalidParameter("per-teacher limit must be at least 1".into()));
        }
        Ok(PrivacyLedger {
            eps_total: params.eps_total,
            delta_total: params.delta_total,
            eps0: params.eps0,
            delta0: params.delta0,
            hit_budget,
            hits_used: 0,
            per_teacher_limit,
            n_teachers,
            per_teacher_used: BTreeMap::new(),
            removed: BTreeSet::new(),
        })
    }

    /// Ledger whose hit budget comes from [`default_hit_budget`].
    pub fn with_default_budget(
        params: &PrivacyParams,
        n_teachers: usize,
        per_teacher_limit: u64,
    ) -> Result<Self> {
        let budget = default_hit_budget(params.eps_total, params.eps0)?;
        PrivacyLedger::new(params, n_teachers, budget.hits, per_teacher_limit)
    }

    pub fn charge_target(&mut self) -> ChargeStatus {
        if self.hits_used >= self.hit_budget {
            return ChargeStatus::Exhausted;
        }
        self.hits_used += 1;
        ChargeStatus::Ok {
            remaining: self.hit_budget - self.hits_used,
        }
    }

    pub fn hits_exhausted(&self) -> bool {
        self.hits_used >= self.hit_budget
    }

    pub fn removed(&self) -> &BTreeSet<usize> {
        &self.removed
    }

    pub fn used(&self, teacher: usize) -> u64 {
        self.per_teacher_used.get(&teacher).copied().unwrap_or(0)
    }

    /// True when no further query may be answered.
    pub fn exhausted(&self) -> bool {
        self.hits_exhausted() || self.removed.len() == self.n_teachers
    }

    pub fn charge_teachers(&mut self, teachers: &[usize]) -> Result<Vec<usize>> {
        self.charge(teachers)
    }

    pub fn snapshot_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl ChargeLedgerView for PrivacyLedger {
    fn n_teachers(&self) -> usize {
        self.n_teachers
    }

    fn is_live(&self, teacher: usize) -> bool {
        teacher < self.n_teachers && !self.removed.contains(&teacher)
    }

    fn remaining(&self, teacher: usize) -> u64 {
        if self.is_live(teacher) {
            self.per_teacher_limit - self.used(teacher)
        } else {
            0
        }
    }

    fn charge(&mut self, teachers: &[usize]) -> Result<Vec<usize>> {
        // Validate everything first so a failed call leaves the ledger untouched.
        let mut seen = BTreeSet::new();
        for &t in teachers {
            if t >= self.n_teachers {
                return Err(Error::UnknownTeacher {
                    teacher: t,
                    n: self.n_teachers,
                });
            }
            if self.removed.contains(&t) {
                return Err(Error::NotLive(t));
            }
            if !seen.insert(t) {
                return Err(Error::InvalidParameter(format!("teacher {t} charged twice")));
            }
        }
        let mut newly_removed = Vec::new();
        for &t in teachers {
            let used = self.per_teacher_used.entry(t).or_insert(0);
            *used += 1;
            if *used >= self.per_teacher_limit {
                self.removed.insert(t);
                newly_removed.push(t);
            }
        }
        Ok(newly_removed)
    }
}
