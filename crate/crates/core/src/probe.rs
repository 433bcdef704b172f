//! Calibrated coherent probes and tomographic-completeness tests.

use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{coherent_fock_distribution, CoherentAmplitude};

/// Exact SI values (2019 redefinition).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// J·s
    pub planck: f64,
    /// m/s
    pub light_speed: f64,
}

impl PhysicalConstants {
    pub const CODATA: PhysicalConstants = PhysicalConstants {
        planck: 6.626_070_15e-34,
        light_speed: 299_792_458.0,
    };
}

pub const DEFAULT_WAVELENGTH: f64 = 800e-9;
pub const DEFAULT_REP_RATE: f64 = 1e5;

fn check_beam(wavelength: f64, rep_rate: f64) -> Result<()> {
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(Error::domain(format!("wavelength must be positive, got {wavelength}")));
    }
    if !(rep_rate.is_finite() && rep_rate > 0.0) {
        return Err(Error::domain(format!("repetition rate must be positive, got {rep_rate}")));
    }
    Ok(())
}

/// `⟨n⟩ = Pλ/(hcf)`.
pub fn power_to_mean_photon(power: f64, wavelength: f64, rep_rate: f64) -> Result<f64> {
    check_beam(wavelength, rep_rate)?;
    if !(power.is_finite() && power >= 0.0) {
        return Err(Error::domain(format!("power must be >= 0, got {power}")));
    }
    let k = PhysicalConstants::CODATA;
    Ok(power * wavelength / (k.planck * k.light_speed * rep_rate))
}

/// `P = ⟨n⟩hcf/λ`.
pub fn mean_photon_to_power(mean_photon: f64, wavelength: f64, rep_rate: f64) -> Result<f64> {
    check_beam(wavelength, rep_rate)?;
    if !(mean_photon.is_finite() && mean_photon >= 0.0) {
        return Err(Error::domain(format!("mean photon number must be >= 0, got {mean_photon}")));
    }
    let k = PhysicalConstants::CODATA;
    Ok(mean_photon * k.planck * k.light_speed * rep_rate / wavelength)
}

/// Power monitoring through a pick-off beam splitter.
///
/// The power meter sees the high-power arm; the probe power is
/// `monitored · ratio · (1 + systematic_error)`. A nonzero
/// `systematic_error` models a miscalibrated meter or splitting ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerCalibration {
    pub pickoff_ratio: f64,
    pub systematic_error: f64,
}

impl Default for PowerCalibration {
    fn default() -> Self {
        Self {
            pickoff_ratio: 1.0,
            systematic_error: 0.0,
        }
    }
}

impl PowerCalibration {
    pub fn probe_power(&self, monitored: f64) -> Result<f64> {
        if !(self.pickoff_ratio.is_finite() && self.pickoff_ratio > 0.0) {
            return Err(Error::domain(format!("pick-off ratio must be positive, got {}", self.pickoff_ratio)));
        }
        if !(self.systematic_error.is_finite() && self.systematic_error > -1.0) {
            return Err(Error::domain(format!("systematic error {} is out of range", self.systematic_error)));
        }
        Ok(monitored * self.pickoff_ratio * (1.0 + self.systematic_error))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherentProbe {
    pub amplitude: CoherentAmplitude,
    pub wavelength: f64,
    pub rep_rate: f64,
    pub avg_power: f64,
}

impl CoherentProbe {
    pub fn from_mean_photon(mean_photon: f64, wavelength: f64, rep_rate: f64) -> Result<Self> {
        let amplitude = CoherentAmplitude::from_mean_photon(mean_photon)?;
        let avg_power = mean_photon_to_power(mean_photon, wavelength, rep_rate)?;
        Ok(Self {
            amplitude,
            wavelength,
            rep_rate,
            avg_power,
        })
    }

    /// A probe whose mean photon number is inferred from a monitored power.
    pub fn from_monitored_power(
        monitored: f64,
        calibration: &PowerCalibration,
        wavelength: f64,
        rep_rate: f64,
    ) -> Result<Self> {
        let avg_power = calibration.probe_power(monitored)?;
        let mean = power_to_mean_photon(avg_power, wavelength, rep_rate)?;
        Ok(Self {
            amplitude: CoherentAmplitude::from_mean_photon(mean)?,
            wavelength,
            rep_rate,
            avg_power,
        })
    }

    pub fn mean_photon(&self) -> f64 {
        self.amplitude.mean_photon()
    }
}

/// An ordered probe ensemble sharing one laser (wavelength, repetition rate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    probes: Vec<CoherentProbe>,
    dimension: usize,
}

impl ProbeSet {
    /// `dimension` defaults to the number of probes.
    pub fn new(probes: Vec<CoherentProbe>) -> Result<Self> {
        let dimension = probes.len();
        Self::with_dimension(probes, dimension)
    }

    pub fn with_dimension(probes: Vec<CoherentProbe>, dimension: usize) -> Result<Self> {
        let first = probes.first().ok_or_else(|| Error::domain("probe set is empty"))?;
        let (wl, rr) = (first.wavelength, first.rep_rate);
        if probes.iter().any(|p| p.wavelength != wl || p.rep_rate != rr) {
            return Err(Error::domain("all probes must share wavelength and repetition rate"));
        }
        Ok(Self { probes, dimension })
    }

    pub fn from_mean_photons(means: &[f64], wavelength: f64, rep_rate: f64) -> Result<Self> {
        let probes = means
            .iter()
            .map(|&m| CoherentProbe::from_mean_photon(m, wavelength, rep_rate))
            .collect::<Result<Vec<_>>>()?;
        Self::new(probes)
    }

    /// `count` probes with `⟨n⟩` evenly spaced on `[lo, hi]` at the default
    /// laser parameters.
    pub fn linspace(lo: f64, hi: f64, count: usize) -> Result<Self> {
        Self::from_mean_photons(&linspace(lo, hi, count), DEFAULT_WAVELENGTH, DEFAULT_REP_RATE)
    }

    /// 400 probes on `[0, 40]`.
    pub fn default_grid() -> Self {
        Self::linspace(0.0, 40.0, 400).expect("static grid is valid")
    }

    pub fn probes(&self) -> &[CoherentProbe] {
        &self.probes
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn set_dimension(&mut self, dimension: usize) {
        self.dimension = dimension;
    }

    pub fn mean_photons(&self) -> Vec<f64> {
        self.probes.iter().map(CoherentProbe::mean_photon).collect()
    }

    pub fn max_mean_photon(&self) -> f64 {
        self.probes.iter().map(CoherentProbe::mean_photon).fold(0.0, f64::max)
    }
}

pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (count - 1) as f64;
            (0..count).map(|i| if i + 1 == count { hi } else { lo + step * i as f64 }).collect()
        }
    }
}

/// Compact probe grid description.
///
/// * `linspace:lo,hi,count`
/// * `const:value,count`
/// * `list:m1,m2,...`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProbeGridSpec {
    Linspace { lo: f64, hi: f64, count: usize },
    Const { value: f64, count: usize },
    List { values: Vec<f64> },
}

impl FromStr for ProbeGridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, params) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("probe grid '{s}' lacks a 'kind:' prefix")))?;
        let fields: Vec<&str> = params.split(',').map(str::trim).collect();
        let num = |i: usize| -> Result<f64> {
            fields
                .get(i)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::Parse(format!("probe grid '{s}': field {i} is not a number")))
        };
        let count = |i: usize| -> Result<usize> {
            fields
                .get(i)
                .and_then(|v| v.parse::<usize>().ok())
                .filter(|&c| c > 0)
                .ok_or_else(|| Error::Parse(format!("probe grid '{s}': field {i} is not a positive count")))
        };
        let expect_fields = |n: usize| -> Result<()> {
            if fields.len() == n {
                Ok(())
            } else {
                Err(Error::Parse(format!("probe grid '{s}' needs {n} fields")))
            }
        };
        match kind {
            "linspace" => {
                expect_fields(3)?;
                Ok(ProbeGridSpec::Linspace {
                    lo: num(0)?,
                    hi: num(1)?,
                    count: count(2)?,
                })
            }
            "const" => {
                expect_fields(2)?;
                Ok(ProbeGridSpec::Const {
                    value: num(0)?,
                    count: count(1)?,
                })
            }
            "list" => Ok(ProbeGridSpec::List {
                values: (0..fields.len()).map(num).collect::<Result<_>>()?,
            }),
            other => Err(Error::Parse(format!("unknown probe grid kind '{other}'"))),
        }
    }
}

impl ProbeGridSpec {
    pub fn mean_photons(&self) -> Vec<f64> {
        match self {
            ProbeGridSpec::Linspace { lo, hi, count } => linspace(*lo, *hi, *count),
            ProbeGridSpec::Const { value, count } => vec![*value; *count],
            ProbeGridSpec::List { values } => values.clone(),
        }
    }

    pub fn build(&self, wavelength: f64, rep_rate: f64) -> Result<ProbeSet> {
        ProbeSet::from_mean_photons(&self.mean_photons(), wavelength, rep_rate)
    }
}

/// Probe Fock probabilities `M[i][n] = e^{-⟨n⟩_i}⟨n⟩_iⁿ/n!` for `n < columns`.
pub fn probe_design(probes: &ProbeSet, columns: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(probes.len(), columns);
    for (i, probe) in probes.probes().iter().enumerate() {
        if columns == 0 {
            break;
        }
        let dist = coherent_fock_distribution(probe.amplitude, columns - 1);
        for (n, p) in dist.probs().iter().enumerate() {
            m[(i, n)] = *p;
        }
    }
    m
}

/// The square `d×d` matrix of vectorized probe diagonals.
pub fn completeness_matrix(probes: &ProbeSet) -> Result<DMatrix<f64>> {
    let d = probes.dimension();
    if probes.len() != d {
        return Err(Error::DimensionMismatch {
            what: "probe count vs dimension",
            expected: d,
            found: probes.len(),
        });
    }
    Ok(probe_design(probes, d))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessReport {
    pub determinant: f64,
    /// 2-norm condition number of the probe matrix; advisory only.
    pub condition_number: f64,
    pub complete: bool,
    /// Probe indices whose determinant was taken (all of them for a square set).
    pub subset: Vec<usize>,
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

fn verdict(determinant: f64, condition_number: f64) -> bool {
    determinant.abs() > 1e-300 && condition_number.is_finite()
}

/// Determinant test on a square probe set.
pub fn completeness_check(probes: &ProbeSet) -> Result<CompletenessReport> {
    let m = completeness_matrix(probes)?;
    let determinant = m.clone().lu().determinant();
    let condition_number = condition_number(&m);
    Ok(CompletenessReport {
        determinant,
        condition_number,
        complete: verdict(determinant, condition_number),
        subset: (0..probes.len()).collect(),
    })
}

/// Greedy column-norm pivoting on the rows of `m`: returns the indices of
/// `k` rows that are as linearly independent as possible.
fn select_independent_rows(m: &DMatrix<f64>, k: usize) -> Vec<usize> {
    let mut residual = m.clone();
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k.min(m.nrows()) {
        let (best, norm) = (0..residual.nrows())
            .filter(|i| !chosen.contains(i))
            .map(|i| (i, residual.row(i).norm()))
            .fold((usize::MAX, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        chosen.push(best);
        if norm <= 0.0 {
            continue;
        }
        let q = residual.row(best) / norm;
        for i in 0..residual.nrows() {
            let proj = residual.row(i).dot(&q);
            let update = &q * proj;
            let mut row = residual.row_mut(i);
            row -= update;
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Spanning test for `M ≥ d` probes: picks the `d` most independent probes
/// and applies the determinant test to them. The condition number is that of
/// the full `M×d` design.
pub fn spanning_check(probes: &ProbeSet, dimension: usize) -> Result<CompletenessReport> {
    if dimension == 0 {
        return Err(Error::domain("dimension must be at least 1"));
    }
    if probes.len() < dimension {
        return Err(Error::domain(format!(
            "{} probes cannot span a {dimension}-dimensional diagonal space",
            probes.len()
        )));
    }
    let full = probe_design(probes, dimension);
    let subset = select_independent_rows(&full, dimension);
    let square = DMatrix::from_fn(dimension, dimension, |i, n| full[(subset[i], n)]);
    let determinant = square.lu().determinant();
    let condition_number = condition_number(&full);
    Ok(CompletenessReport {
        determinant,
        condition_number,
        complete: verdict(determinant, condition_number),
        subset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(means: &[f64]) -> ProbeSet {
        ProbeSet::from_mean_photons(means, DEFAULT_WAVELENGTH, DEFAULT_REP_RATE).unwrap()
    }

    #[test]
    fn power_examples() {
        assert_eq!(power_to_mean_photon(0.0, 800e-9, 1e5).unwrap(), 0.0);
        let p = mean_photon_to_power(1.0, 800e-9, 1e5).unwrap();
        // h c f / λ evaluated by hand: 6.62607015e-34 * 299792458 * 1e5 / 8e-7
        let expected = 6.626_070_15e-34 * 299_792_458.0 * 1e5 / 800e-9;
        assert!((p - expected).abs() / expected < 1e-15);
        assert!((p - 2.483e-14).abs() / 2.483e-14 < 1e-3);
        let back = power_to_mean_photon(p, 800e-9, 1e5).unwrap();
        assert!((back - 1.0).abs() < 1e-12);
        let one = power_to_mean_photon(1e-14, 800e-9, 1e5).unwrap();
        assert_eq!(power_to_mean_photon(2e-14, 800e-9, 1e5).unwrap(), 2.0 * one);
        assert_eq!(mean_photon_to_power(0.0, 800e-9, 1e5).unwrap(), 0.0);
        for x in [1e-3, 1.0, 100.0] {
            let r = power_to_mean_photon(mean_photon_to_power(x, 800e-9, 1e5).unwrap(), 800e-9, 1e5).unwrap();
            assert!((r - x).abs() / x < 1e-12);
        }
    }

    #[test]
    fn power_domain_errors() {
        assert!(power_to_mean_photon(1.0, 0.0, 1e5).is_err());
        assert!(power_to_mean_photon(1.0, 800e-9, -1.0).is_err());
        assert!(power_to_mean_photon(-1.0, 800e-9, 1e5).is_err());
        assert!(mean_photon_to_power(-1.0, 800e-9, 1e5).is_err());
    }

    #[test]
    fn calibration_scales_power() {
        let cal = PowerCalibration {
            pickoff_ratio: 1e-8,
            systematic_error: 0.05,
        };
        let probe = CoherentProbe::from_monitored_power(2.483e-6, &cal, 800e-9, 1e5).unwrap();
        let truth = power_to_mean_photon(2.483e-14, 800e-9, 1e5).unwrap();
        assert!((probe.mean_photon() / truth - 1.05).abs() < 1e-12);
        let consistent = mean_photon_to_power(probe.mean_photon(), 800e-9, 1e5).unwrap();
        assert!((consistent - probe.avg_power).abs() / probe.avg_power < 1e-9);
    }

    #[test]
    fn probe_set_validation() {
        assert!(ProbeSet::new(vec![]).is_err());
        let a = CoherentProbe::from_mean_photon(1.0, 800e-9, 1e5).unwrap();
        let b = CoherentProbe::from_mean_photon(1.0, 700e-9, 1e5).unwrap();
        assert!(ProbeSet::new(vec![a, b]).is_err());
        assert_eq!(ProbeSet::default_grid().len(), 400);
        assert_eq!(ProbeSet::default_grid().max_mean_photon(), 40.0);
    }

    #[test]
    fn completeness_matrix_examples() {
        let means: Vec<f64> = (1..=10).map(f64::from).collect();
        let m = completeness_matrix(&set(&means)).unwrap();
        let first: Vec<f64> = m.row(0).iter().map(|v| (v * 100.0).round() / 100.0).collect();
        assert_eq!(first, vec![0.37, 0.37, 0.18, 0.06, 0.02, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(completeness_matrix(&set(&[0.0])).unwrap(), DMatrix::from_element(1, 1, 1.0));
        let dup = completeness_matrix(&set(&[2.0, 2.0])).unwrap();
        assert_eq!(dup.row(0), dup.row(1));
        let mut wrong = set(&[1.0, 2.0]);
        wrong.set_dimension(3);
        assert!(completeness_matrix(&wrong).is_err());
    }

    #[test]
    fn completeness_check_examples() {
        let means: Vec<f64> = (1..=10).map(f64::from).collect();
        let r = completeness_check(&set(&means)).unwrap();
        assert!(r.determinant != 0.0 && r.complete);
        let r = completeness_check(&set(&[1.0, 3.0, 1.0])).unwrap();
        assert_eq!(r.determinant, 0.0);
        assert!(!r.complete);
        let r = completeness_check(&set(&[0.0, 1.0])).unwrap();
        // det [[1, 0], [e^-1, e^-1]] = e^-1
        assert!((r.determinant - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn spanning_check_overcomplete() {
        let r = spanning_check(&ProbeSet::default_grid(), 30).unwrap();
        assert!(r.complete, "{r:?}");
        assert_eq!(r.subset.len(), 30);
        let r = spanning_check(&set(&[1.0; 10]), 3).unwrap();
        assert!(!r.complete);
        assert!(spanning_check(&set(&[1.0, 2.0]), 3).is_err());
    }

    #[test]
    fn grid_specs() {
        let g: ProbeGridSpec = "linspace:1,10,10".parse().unwrap();
        assert_eq!(g.mean_photons(), (1..=10).map(f64::from).collect::<Vec<_>>());
        let g: ProbeGridSpec = "const:1,10".parse().unwrap();
        assert_eq!(g.mean_photons(), vec![1.0; 10]);
        let g: ProbeGridSpec = "list:0.5,1,2".parse().unwrap();
        assert_eq!(g.mean_photons(), vec![0.5, 1.0, 2.0]);
        for bad in ["linspace:1,2", "const:1,0", "foo:1", "linspace", "list:a"] {
            assert!(bad.parse::<ProbeGridSpec>().is_err(), "{bad}");
        }
    }
}
