//! Parallel Monte Carlo fan-out with per-trial derived seeds.

use rayon::prelude::*;

use crate::randomness::SharedRandomness;

/// Runs `trials` independent trials, trial `t` seeded by `master.derive(t)`.
///
/// Results come back in trial order regardless of how the pool schedules the
/// work; `init` builds per-worker scratch state.
pub fn map_trials<T, S, I, F>(trials: u64, master: &SharedRandomness, init: I, f: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, u64, SharedRandomness) -> T + Sync + Send,
{
    (0..trials)
        .into_par_iter()
        .map_init(init, |state, t| f(state, t, master.derive(t)))
        .collect()
}

/// Folds `trials` trials into an accumulator, trial `t` seeded by `master.derive(t)`.
///
/// Each worker folds into its own accumulator built by `zero`, and partial
/// accumulators are combined with `merge`. The result is independent of the
/// schedule as long as `merge` is associative and commutative, which holds
/// for the integer tallies the harness uses.
pub fn fold_trials<A, S, I, Z, F, M>(
    trials: u64,
    master: &SharedRandomness,
    init: I,
    zero: Z,
    f: F,
    merge: M,
) -> A
where
    A: Send,
    S: Send,
    I: Fn() -> S + Sync + Send,
    Z: Fn() -> A + Sync + Send,
    F: Fn(&mut S, &mut A, u64, SharedRandomness) + Sync + Send,
    M: Fn(A, A) -> A + Sync + Send,
{
    (0..trials)
        .into_par_iter()
        .fold(
            || (init(), zero()),
            |(mut state, mut acc), t| {
                f(&mut state, &mut acc, t, master.derive(t));
                (state, acc)
            },
        )
        .map(|(_, acc)| acc)
        .reduce(&zero, merge)
}
