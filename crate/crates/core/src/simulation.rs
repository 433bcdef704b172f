//! Forward simulation of a detector-tomography run.
//!
//! Each probe gets its own ChaCha20 stream (`set_stream(probe_index)` on the
//! master seed), so a dataset is identical no matter how many threads
//! produced it.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::PovmSet;
use crate::error::{Error, Result};
use crate::fock::{coherent_fock_distribution, CoherentAmplitude};
use crate::probe::ProbeSet;

/// Largest Poisson tail mass tolerated above the detector truncation.
pub const TAIL_GUARD: f64 = 1e-6;

/// Probe ensemble plus per-probe outcome frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct TomographyDataset {
    pub probes: ProbeSet,
    /// Rows = probes, columns = outcomes.
    pub frequencies: DMatrix<f64>,
    /// 0 means exact probabilities.
    pub shots_per_probe: u64,
    pub seed: u64,
}

impl TomographyDataset {
    pub fn new(probes: ProbeSet, frequencies: DMatrix<f64>, shots_per_probe: u64, seed: u64) -> Result<Self> {
        if frequencies.nrows() != probes.len() {
            return Err(Error::DimensionMismatch {
                what: "frequency rows vs probes",
                expected: probes.len(),
                found: frequencies.nrows(),
            });
        }
        if frequencies.ncols() == 0 {
            return Err(Error::domain("dataset has no outcomes"));
        }
        for (i, row) in frequencies.row_iter().enumerate() {
            if row.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
                return Err(Error::domain(format!("probe {i} has a negative or non-finite frequency")));
            }
            let total = row.sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::domain(format!("frequencies for probe {i} sum to {total}")));
            }
        }
        Ok(Self {
            probes,
            frequencies,
            shots_per_probe,
            seed,
        })
    }

    pub fn outcomes(&self) -> usize {
        self.frequencies.ncols()
    }
}

/// Exact outcome distribution for one coherent probe.
///
/// The Poisson mass above the truncation (at most [`TAIL_GUARD`]) is credited
/// to the detector's response at the truncation edge, i.e. the detector is
/// taken as saturated beyond its last modelled photon number.
fn exact_outcomes(detector: &PovmSet, mean_photon: f64, index: usize) -> Result<Vec<f64>> {
    let n_max = detector.truncation();
    let sigma = coherent_fock_distribution(CoherentAmplitude::from_mean_photon(mean_photon)?, n_max);
    let tail = sigma.tail_mass();
    if tail > TAIL_GUARD {
        return Err(Error::Refused(format!(
            "probe {index} (<n> = {mean_photon}) leaves tail mass {tail:.3e} above truncation {n_max}"
        )));
    }
    Ok(detector
        .elements()
        .iter()
        .map(|el| el.expectation(&sigma) + el.diag[n_max] * tail)
        .collect())
}

/// Sequential collect, so the reported failure is the lowest probe index no
/// matter how the parallel loop was scheduled.
fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
}

pub fn exact_dataset(detector: &PovmSet, probes: &ProbeSet) -> Result<TomographyDataset> {
    let rows = probes
        .mean_photons()
        .par_iter()
        .enumerate()
        .map(|(i, &m)| exact_outcomes(detector, m, i))
        .collect::<Vec<_>>();
    let rows = first_error(rows)?;
    Ok(TomographyDataset {
        probes: probes.clone(),
        frequencies: rows_to_matrix(&rows, detector.outcomes()),
        shots_per_probe: 0,
        seed: 0,
    })
}

/// One multinomial draw of size `shots` via sequential conditional binomials.
fn multinomial(probs: &[f64], shots: u64, rng: &mut ChaCha20Rng) -> Vec<u64> {
    let mut counts = vec![0u64; probs.len()];
    let mut remaining = shots;
    let mut mass: f64 = probs.iter().sum();
    for (j, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if j + 1 == probs.len() {
            counts[j] = remaining;
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let draw = Binomial::new(remaining, q).expect("q is clamped to [0, 1]").sample(rng);
        counts[j] = draw;
        remaining -= draw;
        mass -= p;
    }
    counts
}

pub fn sample_dataset(detector: &PovmSet, probes: &ProbeSet, shots: u64, seed: u64) -> Result<TomographyDataset> {
    if shots < 1 {
        return Err(Error::domain("shots must be at least 1"));
    }
    let rows = probes
        .mean_photons()
        .par_iter()
        .enumerate()
        .map(|(i, &m)| {
            let exact = exact_outcomes(detector, m, i)?;
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            Ok(multinomial(&exact, shots, &mut rng)
                .into_iter()
                .map(|c| c as f64 / shots as f64)
                .collect())
        })
        .collect::<Vec<Result<Vec<f64>>>>();
    let rows = first_error(rows)?;
    Ok(TomographyDataset {
        probes: probes.clone(),
        frequencies: rows_to_matrix(&rows, detector.outcomes()),
        shots_per_probe: shots,
        seed,
    })
}

/// Exact probability of one outcome as a function of the probe's `⟨n⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseCurve {
    pub outcome_label: usize,
    pub mean_photons: Vec<f64>,
    pub probability: Vec<f64>,
}

impl ResponseCurve {
    /// `(⟨n⟩, probability)` at the first maximum.
    pub fn peak(&self) -> (f64, f64) {
        let (i, p) = self
            .probability
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
        (self.mean_photons[i], p)
    }
}

pub fn response_curve(detector: &PovmSet, outcome: usize, mean_photon_grid: &[f64]) -> Result<ResponseCurve> {
    let element = detector.element(outcome)?;
    let probability = mean_photon_grid
        .par_iter()
        .enumerate()
        .map(|(i, &m)| exact_outcomes(detector, m, i).map(|p| p[outcome]))
        .collect::<Vec<_>>();
    let probability = first_error(probability)?;
    Ok(ResponseCurve {
        outcome_label: element.outcome_label,
        mean_photons: mean_photon_grid.to_vec(),
        probability,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{apd_povm, DetectorModel};
    use crate::probe::{linspace, DEFAULT_REP_RATE, DEFAULT_WAVELENGTH};

    fn probes(means: &[f64]) -> ProbeSet {
        ProbeSet::from_mean_photons(means, DEFAULT_WAVELENGTH, DEFAULT_REP_RATE).unwrap()
    }

    #[test]
    fn vacuum_probe_row() {
        let tmd = DetectorModel::paper_tmd(0.48, 30).unwrap();
        let ds = exact_dataset(&tmd.povm, &probes(&[0.0])).unwrap();
        assert_eq!(ds.frequencies[(0, 0)], 1.0);
        assert!(ds.frequencies.row(0).iter().skip(1).all(|&f| f == 0.0));
        assert_eq!(ds.shots_per_probe, 0);
    }

    #[test]
    fn apd_unit_mean_row() {
        let apd = apd_povm(1.0, 40).unwrap();
        let ds = exact_dataset(&apd, &probes(&[1.0])).unwrap();
        let e = (-1f64).exp();
        assert!((ds.frequencies[(0, 0)] - e).abs() < 1e-15);
        assert!((ds.frequencies[(0, 1)] - (1.0 - e)).abs() < 1e-15);
    }

    #[test]
    fn rows_sum_to_one() {
        let tmd = DetectorModel::paper_tmd(0.48, 150).unwrap();
        let ds = exact_dataset(&tmd.povm, &ProbeSet::default_grid()).unwrap();
        for row in ds.frequencies.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn truncation_guard_names_probe() {
        let apd = apd_povm(0.5, 10).unwrap();
        match exact_dataset(&apd, &probes(&[0.5, 1.0, 9.0])) {
            Err(Error::Refused(msg)) => assert!(msg.contains("probe 2"), "{msg}"),
            other => panic!("expected refusal, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_sampling() {
        let apd = apd_povm(0.5, 20).unwrap();
        let ds = sample_dataset(&apd, &probes(&[0.0, 0.0]), 1000, 7).unwrap();
        assert_eq!(ds.frequencies.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0]);
        assert!(sample_dataset(&apd, &probes(&[1.0]), 0, 7).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let tmd = DetectorModel::paper_tmd(0.48, 60).unwrap();
        let p = probes(&linspace(0.0, 10.0, 25));
        let a = sample_dataset(&tmd.povm, &p, 5000, 42).unwrap();
        let b = sample_dataset(&tmd.povm, &p, 5000, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_dataset(&tmd.povm, &p, 5000, 43).unwrap();
        assert_ne!(a.frequencies, c.frequencies);
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| sample_dataset(&tmd.povm, &p, 5000, 42).unwrap());
        assert_eq!(a, serial);
    }

    #[test]
    fn sampled_frequencies_near_exact() {
        let apd = apd_povm(0.5, 30).unwrap();
        let ds = sample_dataset(&apd, &probes(&[1.0]), 1_000_000, 11).unwrap();
        let exact = (-0.5f64).exp();
        // sqrt(p(1-p)/1e6) ≈ 4.9e-4, so 5e-3 is > 10 standard errors
        assert!((ds.frequencies[(0, 0)] - exact).abs() < 5e-3);
        assert!((ds.frequencies[(0, 1)] - (1.0 - exact)).abs() < 5e-3);
    }

    #[test]
    fn zero_click_curve_decreases() {
        let tmd = DetectorModel::paper_tmd(0.48, 150).unwrap();
        let grid = linspace(0.0, 40.0, 400);
        let c = response_curve(&tmd.povm, 0, &grid).unwrap();
        assert_eq!(c.probability[0], 1.0);
        assert!(c.probability.windows(2).all(|w| w[1] < w[0]));
        assert!(response_curve(&tmd.povm, 9, &grid).is_err());
    }
}
