//! Distributional checks on the randomness and the analytic max-frequency model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hotpate_core::synth::{analytic_max_freq_sample, model_cdf, model_tail_probability};
use hotpate_core::{exp_from_seed, SharedRandomness, TokenId};

fn exp_cdf(x: f64) -> f64 {
    1.0 - (-x).exp()
}

#[test]
fn exp_from_seed_is_unit_exponential() {
    let master = SharedRandomness::new(0x5eed);
    let samples = 1_000_000u64;
    let mut values: Vec<f64> = (0..samples)
        .map(|s| exp_from_seed(&master.derive(s), TokenId(1)))
        .collect();
    assert!(values.iter().all(|v| v.is_finite() && *v > 0.0));

    let n = samples as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((mean - 1.0).abs() < 0.005, "mean {mean}");
    assert!((var - 1.0).abs() < 0.01, "variance {var}");

    values.sort_by(f64::total_cmp);
    let ks = values
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = exp_cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.002, "KS distance {ks}");
}

#[test]
fn exp_values_are_uncorrelated_across_tokens() {
    let master = SharedRandomness::new(11);
    let samples = 200_000u64;
    let pairs: Vec<(f64, f64)> = (0..samples)
        .map(|s| {
            let rho = master.derive(s);
            (rho.exp(TokenId(1)), rho.exp(TokenId(2)))
        })
        .collect();
    let n = samples as f64;
    let (ma, mb) = (
        pairs.iter().map(|p| p.0).sum::<f64>() / n,
        pairs.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let cov = pairs.iter().map(|p| (p.0 - ma) * (p.1 - mb)).sum::<f64>() / n;
    assert!(cov.abs() < 0.012, "covariance {cov}");
}

#[test]
fn model_tail_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (alpha, n, trials) = (0.05, 400u64, 200_000u64);
    let hits = (0..trials)
        .filter(|_| analytic_max_freq_sample(alpha, n, &mut rng).unwrap() >= n / 2)
        .count();
    let empirical = hits as f64 / trials as f64;
    let integrated = model_tail_probability(alpha, n, n / 2).unwrap();
    assert!((integrated - 0.0360).abs() < 0.0005, "integrated {integrated}");
    assert!((empirical - integrated).abs() <= 0.004, "{empirical} vs {integrated}");
}

#[test]
fn model_cdf_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let (alpha, n, trials) = (0.5, 100u64, 100_000usize);
    let mut counts = vec![0usize; n as usize + 1];
    for _ in 0..trials {
        counts[analytic_max_freq_sample(alpha, n, &mut rng).unwrap() as usize] += 1;
    }
    let mut cumulative = 0usize;
    let mut ks = 0.0f64;
    for k in 0..=n {
        cumulative += counts[k as usize];
        let model = model_cdf(alpha, n, k).unwrap();
        ks = ks.max((cumulative as f64 / trials as f64 - model).abs());
    }
    assert!(ks <= 0.01, "KS distance {ks}");
    assert!((model_cdf(alpha, n, n).unwrap() - 1.0).abs() < 1e-9);
}
