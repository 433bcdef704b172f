//! Truncated Fock-space primitives.
//!
//! Photon-number distributions are stored as plain probability vectors over
//! `n = 0..=N`. Nothing here renormalizes behind the caller's back: a
//! truncated distribution keeps its missing mass visible through
//! [`FockDistribution::tail_mass`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_SLACK: f64 = 1e-12;

/// Photon-number statistics of a single optical mode, truncated at `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FockDistribution {
    probs: Vec<f64>,
}

impl FockDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::domain("a Fock distribution needs at least the vacuum entry"));
        }
        if let Some((n, p)) = probs.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::domain(format!("probability for n={n} is {p}")));
        }
        let total: f64 = probs.iter().sum();
        if total > 1.0 + SUM_SLACK {
            return Err(Error::domain(format!("probabilities sum to {total} > 1")));
        }
        Ok(Self { probs })
    }

    /// The Fock state `|n⟩` truncated at `truncation`.
    pub fn fock(n: usize, truncation: usize) -> Result<Self> {
        if n > truncation {
            return Err(Error::domain(format!("Fock state |{n}⟩ exceeds truncation {truncation}")));
        }
        let mut probs = vec![0.0; truncation + 1];
        probs[n] = 1.0;
        Ok(Self { probs })
    }

    pub fn vacuum(truncation: usize) -> Self {
        Self::fock(0, truncation).expect("vacuum always fits")
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn truncation(&self) -> usize {
        self.probs.len() - 1
    }

    /// Probability mass lost above the truncation, clamped at zero.
    pub fn tail_mass(&self) -> f64 {
        (1.0 - self.probs.iter().sum::<f64>()).max(0.0)
    }

    /// A copy rescaled to unit sum. Only for callers that explicitly accept
    /// the bias this introduces.
    pub fn renormalized(&self) -> Self {
        let total: f64 = self.probs.iter().sum();
        if total <= 0.0 {
            return self.clone();
        }
        Self {
            probs: self.probs.iter().map(|p| p / total).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }
}

/// Amplitude of a coherent state `|α⟩`, stored as `⟨n⟩ = |α|²` and a phase.
///
/// The phase is carried along for completeness; every detector in this crate
/// is phase-insensitive and ignores it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherentAmplitude {
    mean_photon: f64,
    phase: f64,
}

impl CoherentAmplitude {
    pub fn new(mean_photon: f64, phase: f64) -> Result<Self> {
        if !mean_photon.is_finite() || mean_photon < 0.0 {
            return Err(Error::domain(format!("mean photon number must be finite and >= 0, got {mean_photon}")));
        }
        if !phase.is_finite() {
            return Err(Error::domain(format!("phase must be finite, got {phase}")));
        }
        Ok(Self { mean_photon, phase })
    }

    pub fn from_mean_photon(mean_photon: f64) -> Result<Self> {
        Self::new(mean_photon, 0.0)
    }

    pub fn mean_photon(&self) -> f64 {
        self.mean_photon
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }
}

/// Poisson photon-number distribution of a coherent state, `n = 0..=truncation`.
///
/// Evaluated in log space so that large `n` neither overflows `⟨n⟩ⁿ` nor
/// underflows `1/n!` before the final exponentiation.
pub fn coherent_fock_distribution(amp: CoherentAmplitude, truncation: usize) -> FockDistribution {
    let mean = amp.mean_photon();
    let mut probs = vec![0.0; truncation + 1];
    if mean == 0.0 {
        probs[0] = 1.0;
        return FockDistribution { probs };
    }
    let ln_mean = mean.ln();
    let mut ln_fact = 0.0;
    for (n, p) in probs.iter_mut().enumerate() {
        if n > 0 {
            ln_fact += (n as f64).ln();
        }
        *p = (-mean + n as f64 * ln_mean - ln_fact).exp();
    }
    FockDistribution { probs }
}

/// Passes a coherent amplitude through a beam splitter of intensity
/// transmission `transmission`. The result is again coherent with
/// `⟨n⟩' = t·⟨n⟩`.
pub fn attenuate(amp: CoherentAmplitude, transmission: f64) -> Result<CoherentAmplitude> {
    if !(0.0..=1.0).contains(&transmission) {
        return Err(Error::domain(format!("transmission must lie in [0, 1], got {transmission}")));
    }
    CoherentAmplitude::new(transmission * amp.mean_photon(), amp.phase())
}

/// `ln C(n, k)`, summed as `Σ ln((n-k+i)/i)` to avoid differencing large
/// log-factorials.
pub fn log_binomial(n: i64, k: i64) -> Result<f64> {
    if n < 0 || k < 0 || k > n {
        return Err(Error::domain(format!("log_binomial needs 0 <= k <= n, got n={n}, k={k}")));
    }
    Ok(ln_choose(n as u64, k as u64))
}

pub(crate) fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    let offset = (n - k) as f64;
    (1..=k).map(|i| ((offset + i as f64) / i as f64).ln()).sum()
}

/// Truncation that keeps the Poisson tail of every probe up to `max_mean`
/// below roughly 1e-9.
pub fn default_truncation(max_mean: f64) -> usize {
    (max_mean + 15.0 * max_mean.sqrt() + 15.0).ceil() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coherent(mean: f64, n: usize) -> FockDistribution {
        coherent_fock_distribution(CoherentAmplitude::from_mean_photon(mean).unwrap(), n)
    }

    #[test]
    fn vacuum_limit() {
        assert_eq!(coherent(0.0, 3).probs(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn unit_mean_matches_rounded_row() {
        let d = coherent(1.0, 4);
        let rounded: Vec<f64> = d.probs().iter().map(|p| (p * 100.0).round() / 100.0).collect();
        assert_eq!(rounded, vec![0.37, 0.37, 0.18, 0.06, 0.02]);
    }

    #[test]
    fn large_mean_mode_and_tail() {
        let d = coherent(100.0, 200);
        let argmax = d
            .probs()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        // p(99) == p(100) analytically; accept either as the mode.
        assert!(argmax == 100 || argmax == 99, "argmax {argmax}");
        assert!((d.probs()[100] - d.probs()[99]).abs() < 1e-15);
        assert!(d.tail_mass() < 1e-12);
    }

    #[test]
    fn rejects_bad_amplitudes() {
        assert!(CoherentAmplitude::from_mean_photon(-1.0).is_err());
        assert!(CoherentAmplitude::from_mean_photon(f64::NAN).is_err());
        assert!(CoherentAmplitude::from_mean_photon(f64::INFINITY).is_err());
    }

    #[test]
    fn attenuation_examples() {
        let a = CoherentAmplitude::new(4.0, 0.3).unwrap();
        let b = attenuate(a, 0.25).unwrap();
        assert_eq!(b.mean_photon(), 1.0);
        assert_eq!(b.phase(), 0.3);
        let one = CoherentAmplitude::from_mean_photon(1.0).unwrap();
        assert_eq!(attenuate(one, 1.0).unwrap().mean_photon(), 1.0);
        let dark = attenuate(one, 0.0).unwrap();
        assert_eq!(dark.mean_photon(), 0.0);
        assert_eq!(coherent_fock_distribution(dark, 5), FockDistribution::vacuum(5));
        assert!(attenuate(one, 1.5).is_err());
        assert!(attenuate(one, -0.1).is_err());
    }

    #[test]
    fn log_binomial_small() {
        assert_eq!(log_binomial(5, 0).unwrap(), 0.0);
        assert!((log_binomial(4, 2).unwrap() - 6f64.ln()).abs() < 1e-15);
        assert!(log_binomial(3, 4).is_err());
        assert!(log_binomial(-1, 0).is_err());
        assert!(log_binomial(3, -1).is_err());
    }

    #[test]
    fn distribution_validation() {
        assert!(FockDistribution::new(vec![]).is_err());
        assert!(FockDistribution::new(vec![0.6, 0.6]).is_err());
        assert!(FockDistribution::new(vec![-0.1, 0.5]).is_err());
        let d = FockDistribution::new(vec![0.5, 0.25]).unwrap();
        assert!((d.tail_mass() - 0.25).abs() < 1e-15);
        let r = d.renormalized();
        assert!((r.probs()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.tail_mass(), 0.0);
    }

    #[test]
    fn default_truncation_rule() {
        assert_eq!(default_truncation(40.0), 150);
        assert_eq!(default_truncation(0.0), 15);
    }
}
