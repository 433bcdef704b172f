use num_bigint::BigUint;
use proptest::prelude::*;

use povm_forge::fock::default_truncation;
use povm_forge::{attenuate, coherent_fock_distribution, log_binomial, loss_matrix, CoherentAmplitude};

/// `ln C(n, k)` from the exact integer.
fn exact_log_binomial(n: u64, k: u64) -> f64 {
    let mut c = BigUint::from(1u32);
    for i in 0..k {
        c *= n - i;
        c /= i + 1;
    }
    let bits = c.bits();
    let shift = bits.saturating_sub(60);
    let top: BigUint = &c >> shift;
    let mantissa = top.to_u64_digits().first().copied().unwrap_or(0) as f64;
    mantissa.ln() + shift as f64 * std::f64::consts::LN_2
}

#[test]
fn log_binomial_matches_big_integers() {
    for (n, k) in [(500, 250), (500, 1), (1000, 333), (60, 30), (7, 3), (10, 0), (10, 10)] {
        let exact = exact_log_binomial(n, k);
        let got = log_binomial(n as i64, k as i64).unwrap();
        let scale = exact.abs().max(1.0);
        assert!((got - exact).abs() <= 1e-13 * scale, "C({n},{k}): {got} vs {exact}");
    }
    assert!(log_binomial(3, 4).is_err());
    assert!(log_binomial(-1, 0).is_err());
}

/// Binomial loss applied to Poisson statistics gives Poisson statistics at the
/// transmitted mean.
#[test]
fn loss_maps_coherent_to_coherent() {
    let n_max = 80;
    for (mean, loss) in [(3.0, 0.48), (10.0, 0.25), (0.7, 0.9)] {
        let amp = CoherentAmplitude::from_mean_photon(mean).unwrap();
        let sigma = coherent_fock_distribution(amp, n_max);
        let l = loss_matrix(loss, n_max).unwrap();
        let transmitted = l.entries() * nalgebra::DVector::from_column_slice(sigma.probs());
        let expected = coherent_fock_distribution(attenuate(amp, 1.0 - loss).unwrap(), n_max);
        for n in 0..=n_max {
            assert!((transmitted[n] - expected.probs()[n]).abs() < 1e-14, "mean {mean} loss {loss} n {n}");
        }
    }
}

proptest! {
    #[test]
    fn coherent_distribution_invariants(mean in 0.0f64..60.0) {
        let n_max = default_truncation(mean);
        let sigma = coherent_fock_distribution(CoherentAmplitude::from_mean_photon(mean).unwrap(), n_max);
        let total: f64 = sigma.probs().iter().sum();
        prop_assert!(sigma.probs().iter().all(|&p| (0.0..=1.0).contains(&p)));
        prop_assert!((total + sigma.tail_mass() - 1.0).abs() < 1e-12);
        prop_assert!(sigma.tail_mass() < 1e-12);
        prop_assert!((sigma.mean() - mean).abs() < 1e-9 * mean.max(1.0));
    }

    #[test]
    fn loss_columns_are_distributions(loss in 0.0f64..=1.0, n_max in 0usize..120) {
        let l = loss_matrix(loss, n_max).unwrap();
        for n in 0..=n_max {
            prop_assert!((l.entries().column(n).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn binomial_symmetry(n in 0i64..2000, k_frac in 0.0f64..=1.0) {
        let k = (n as f64 * k_frac).round() as i64;
        let a = log_binomial(n, k).unwrap();
        let b = log_binomial(n, n - k).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}
