//! Forward models of phase-insensitive photon counters.
//!
//! A detector is a set of diagonal POVM elements: element `j` holds the
//! probability of outcome `j` given `n` photons at the input. Two families
//! are modelled:
//!
//! * a binary avalanche photodiode (click / no click) with per-photon
//!   efficiency,
//! * a time-multiplexing detector (TMD) whose POVM diagonals are the rows of
//!   `C·L`, where `L` is a binomial loss matrix and `C` maps the photons that
//!   survive onto the number of distinct bins they occupy.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{ln_choose, FockDistribution};

/// Column-sum tolerance for matrices we construct ourselves.
pub const STOCHASTIC_TOL: f64 = 1e-10;

/// Column-sum tolerance for the shipped 3-decimal measurement.
pub const MEASURED_TOL: f64 = 0.005;

/// Identifier of the built-in eight-bin convolution matrix.
pub const PAPER_TMD_8BIN: &str = "paper-tmd-8bin";

const BRUTEFORCE_MAX_PHOTONS: usize = 8;

/// Convolution matrix of an eight-bin TMD obtained from classical bin
/// calibration, rows = clicks 0..=8, columns = photons 0..=8. Entries are
/// reproduced exactly as published (three decimals).
#[rustfmt::skip]
const PAPER_TMD_8BIN_ENTRIES: [[f64; 9]; 9] = [
    [1.0, 0.0, 0.0,   0.0,   0.0,   0.0,   0.0,   0.0,   0.0  ],
    [0.0, 1.0, 0.128, 0.017, 0.000, 0.000, 0.000, 0.000, 0.000],
    [0.0, 0.0, 0.872, 0.334, 0.101, 0.028, 0.008, 0.002, 0.001],
    [0.0, 0.0, 0.0,   0.649, 0.496, 0.265, 0.123, 0.053, 0.022],
    [0.0, 0.0, 0.0,   0.0,   0.402, 0.509, 0.422, 0.290, 0.181],
    [0.0, 0.0, 0.0,   0.0,   0.0,   0.198, 0.375, 0.444, 0.423],
    [0.0, 0.0, 0.0,   0.0,   0.0,   0.0,   0.073, 0.193, 0.308],
    [0.0, 0.0, 0.0,   0.0,   0.0,   0.0,   0.0,   0.018, 0.063],
    [0.0, 0.0, 0.0,   0.0,   0.0,   0.0,   0.0,   0.0,   0.002],
];

/// The raw built-in dataset, exactly as shipped.
pub fn builtin_dataset(name: &str) -> Result<DMatrix<f64>> {
    match name {
        PAPER_TMD_8BIN => Ok(DMatrix::from_fn(9, 9, |k, n| PAPER_TMD_8BIN_ENTRIES[k][n])),
        other => Err(Error::domain(format!("unknown built-in dataset '{other}'"))),
    }
}

fn check_unit_interval(name: &str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must lie in [0, 1], got {value}")))
    }
}

/// `C(n,k)·q^k·(1-q)^(n-k)` for `k = 0..=n`, with exact handling of `q ∈ {0, 1}`.
fn binomial_pmf(n: usize, q: f64) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    if q <= 0.0 {
        out[0] = 1.0;
        return out;
    }
    if q >= 1.0 {
        out[n] = 1.0;
        return out;
    }
    let (lq, lr) = (q.ln(), (-q).ln_1p());
    for (k, p) in out.iter_mut().enumerate() {
        *p = (ln_choose(n as u64, k as u64) + k as f64 * lq + (n - k) as f64 * lr).exp();
    }
    out
}

/// Binomial loss matrix, `entries[(n', n)]` = probability that `n'` of `n`
/// input photons survive. Survival probability per photon is `1 - loss_fraction`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMatrix {
    entries: DMatrix<f64>,
    loss_fraction: f64,
}

impl LossMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn loss_fraction(&self) -> f64 {
        self.loss_fraction
    }

    pub fn truncation(&self) -> usize {
        self.entries.ncols() - 1
    }
}

pub fn loss_matrix(loss_fraction: f64, truncation: usize) -> Result<LossMatrix> {
    check_unit_interval("loss fraction", loss_fraction)?;
    let dim = truncation + 1;
    let mut entries = DMatrix::zeros(dim, dim);
    for n in 0..dim {
        let column = binomial_pmf(n, 1.0 - loss_fraction);
        for (survivors, p) in column.into_iter().enumerate() {
            entries[(survivors, n)] = p;
        }
    }
    Ok(LossMatrix {
        entries,
        loss_fraction,
    })
}

/// Where a convolution matrix came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConvolutionSource {
    BinProbabilities(Vec<f64>),
    /// A shipped measurement; columns past its range are filled from equal
    /// bin probabilities.
    Builtin(String),
}

/// `entries[(k, n)]` = probability that `n` photons occupy exactly `k` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionMatrix {
    entries: DMatrix<f64>,
    source: ConvolutionSource,
}

impl ConvolutionMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn bins(&self) -> usize {
        self.entries.nrows() - 1
    }

    pub fn max_photons(&self) -> usize {
        self.entries.ncols() - 1
    }

    /// Single-photon bin probabilities, when the matrix was derived from them.
    pub fn bin_probs(&self) -> Option<&[f64]> {
        match &self.source {
            ConvolutionSource::BinProbabilities(p) => Some(p),
            ConvolutionSource::Builtin(_) => None,
        }
    }

    pub fn source(&self) -> &ConvolutionSource {
        &self.source
    }

    /// Model built on a shipped measurement, extended to `max_photons`.
    ///
    /// Measured columns are rescaled to unit sum (they are rounded to three
    /// decimals); columns beyond the measurement come from equal bin
    /// probabilities.
    pub fn builtin(name: &str, max_photons: usize) -> Result<Self> {
        let measured = builtin_dataset(name)?;
        let bins = measured.nrows() - 1;
        let mut entries = DMatrix::zeros(bins + 1, max_photons + 1);
        let measured_cols = measured.ncols().min(max_photons + 1);
        for n in 0..measured_cols {
            let col = measured.column(n);
            let total = col.sum();
            for k in 0..=bins {
                entries[(k, n)] = col[k] / total;
            }
        }
        if max_photons + 1 > measured_cols {
            let uniform = vec![1.0 / bins as f64; bins];
            for n in measured_cols..=max_photons {
                let col = occupancy_distribution(&uniform, n);
                for (k, p) in col.into_iter().enumerate() {
                    entries[(k, n)] = p;
                }
            }
        }
        Ok(Self {
            entries,
            source: ConvolutionSource::Builtin(name.to_string()),
        })
    }
}

fn validate_bin_probs(bin_probs: &[f64]) -> Result<()> {
    if bin_probs.is_empty() {
        return Err(Error::domain("bin probability list is empty"));
    }
    if let Some(p) = bin_probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::domain(format!("bin probability {p} is not a nonnegative number")));
    }
    let total: f64 = bin_probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("bin probabilities sum to {total}, expected 1")));
    }
    Ok(())
}

/// Click-count distribution for `photons` photons: dynamic program over bins
/// with state (photons still to place, bins occupied so far). Each bin takes
/// a binomial share of the remaining photons with its conditional
/// probability `p_b / Σ_{b'≥b} p_b'`.
fn occupancy_distribution(bin_probs: &[f64], photons: usize) -> Vec<f64> {
    let bins = bin_probs.len();
    let mut suffix = vec![0.0; bins + 1];
    for b in (0..bins).rev() {
        suffix[b] = suffix[b + 1] + bin_probs[b];
    }
    let width = bins.min(photons) + 1;
    // state[r][k]: r photons remaining, k bins occupied
    let mut state = vec![vec![0.0; width]; photons + 1];
    state[photons][0] = 1.0;
    for b in 0..bins {
        let q = if b + 1 == bins || suffix[b] <= 0.0 {
            1.0
        } else {
            (bin_probs[b] / suffix[b]).min(1.0)
        };
        let mut next = vec![vec![0.0; width]; photons + 1];
        for (remaining, row) in state.iter().enumerate() {
            if row.iter().all(|&w| w == 0.0) {
                continue;
            }
            let split = binomial_pmf(remaining, q);
            for (placed, &ps) in split.iter().enumerate() {
                if ps == 0.0 {
                    continue;
                }
                let occupied = usize::from(placed > 0);
                for (k, &w) in row.iter().enumerate() {
                    if w != 0.0 && k + occupied < width {
                        next[remaining - placed][k + occupied] += w * ps;
                    }
                }
            }
        }
        state = next;
    }
    let mut out = vec![0.0; bins + 1];
    out[..width].copy_from_slice(&state[0]);
    out
}

/// Convolution matrix for arbitrary bin probabilities, columns `n = 0..=max_photons`.
pub fn convolution_matrix(bin_probs: &[f64], max_photons: usize) -> Result<ConvolutionMatrix> {
    validate_bin_probs(bin_probs)?;
    let bins = bin_probs.len();
    let mut entries = DMatrix::zeros(bins + 1, max_photons + 1);
    for n in 0..=max_photons {
        for (k, p) in occupancy_distribution(bin_probs, n).into_iter().enumerate() {
            entries[(k, n)] = p;
        }
    }
    Ok(ConvolutionMatrix {
        entries,
        source: ConvolutionSource::BinProbabilities(bin_probs.to_vec()),
    })
}

/// Exhaustive enumeration of all `Bⁿ` photon-to-bin assignments. Returns the
/// distribution of the number of occupied bins, indexed `k = 0..=B`.
///
/// Up to 8⁸ terms are accumulated, so the sums are compensated (Neumaier).
pub fn convolution_bruteforce(bin_probs: &[f64], photons: usize) -> Result<Vec<f64>> {
    if photons > BRUTEFORCE_MAX_PHOTONS {
        return Err(Error::Refused(format!(
            "brute-force enumeration limited to {BRUTEFORCE_MAX_PHOTONS} photons, got {photons}"
        )));
    }
    validate_bin_probs(bin_probs)?;
    let bins = bin_probs.len();
    let mut out = vec![0.0; bins + 1];
    let mut carry = vec![0.0; bins + 1];
    let mut assignment = vec![0usize; photons];
    loop {
        let mut weight = 1.0;
        let mut used = vec![false; bins];
        for &b in &assignment {
            weight *= bin_probs[b];
            used[b] = true;
        }
        let k = used.iter().filter(|u| **u).count();
        let sum = out[k] + weight;
        carry[k] += if out[k].abs() >= weight.abs() {
            (out[k] - sum) + weight
        } else {
            (weight - sum) + out[k]
        };
        out[k] = sum;

        // odometer increment
        let mut i = 0;
        loop {
            if i == photons {
                return Ok(out.iter().zip(&carry).map(|(s, c)| s + c).collect());
            }
            assignment[i] += 1;
            if assignment[i] < bins {
                break;
            }
            assignment[i] = 0;
            i += 1;
        }
    }
}

/// One diagonal POVM element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PovmElement {
    pub outcome_label: usize,
    pub diag: Vec<f64>,
}

impl PovmElement {
    pub fn new(outcome_label: usize, diag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::domain("POVM element needs at least one diagonal entry"));
        }
        if let Some((n, v)) = diag.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::domain(format!(
                "POVM element {outcome_label} has entry {v} at n={n}, outside [0, 1]"
            )));
        }
        Ok(Self { outcome_label, diag })
    }

    pub fn truncation(&self) -> usize {
        self.diag.len() - 1
    }

    /// `Tr(Ô ρ)` for a diagonal state; entries past either truncation are ignored.
    pub fn expectation(&self, state: &FockDistribution) -> f64 {
        self.diag.iter().zip(state.probs()).map(|(d, s)| d * s).sum()
    }
}

/// Ordered diagonal POVM elements over a common truncation, summing to the
/// identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PovmSet {
    elements: Vec<PovmElement>,
}

impl PovmSet {
    pub fn new(elements: Vec<PovmElement>) -> Result<Self> {
        Self::with_tolerance(elements, STOCHASTIC_TOL)
    }

    pub fn with_tolerance(elements: Vec<PovmElement>, tol: f64) -> Result<Self> {
        let first = elements.first().ok_or_else(|| Error::domain("POVM set is empty"))?;
        let dim = first.diag.len();
        for el in &elements {
            if el.diag.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "POVM element length",
                    expected: dim,
                    found: el.diag.len(),
                });
            }
        }
        for n in 0..dim {
            let total: f64 = elements.iter().map(|e| e.diag[n]).sum();
            if (total - 1.0).abs() > tol {
                return Err(Error::domain(format!(
                    "POVM elements sum to {total} at n={n}, expected 1"
                )));
            }
        }
        Ok(Self { elements })
    }

    /// Builds a set from a matrix whose rows are element diagonals.
    ///
    /// Entries within 1e-12 outside `[0, 1]` are clamped (round-off from
    /// matrix products).
    pub fn from_rows(rows: &DMatrix<f64>) -> Result<Self> {
        let elements = (0..rows.nrows())
            .map(|j| {
                let diag = rows
                    .row(j)
                    .iter()
                    .map(|&v| if (-1e-12..0.0).contains(&v) { 0.0 } else if v > 1.0 && v < 1.0 + 1e-12 { 1.0 } else { v })
                    .collect();
                PovmElement::new(j, diag)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(elements)
    }

    pub fn elements(&self) -> &[PovmElement] {
        &self.elements
    }

    pub fn element(&self, outcome: usize) -> Result<&PovmElement> {
        self.elements.get(outcome).ok_or_else(|| {
            Error::domain(format!("outcome {outcome} out of range (detector has {})", self.elements.len()))
        })
    }

    pub fn outcomes(&self) -> usize {
        self.elements.len()
    }

    pub fn truncation(&self) -> usize {
        self.elements[0].truncation()
    }

    /// Rows = outcomes, columns = photon number.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.outcomes(), self.truncation() + 1, |j, n| self.elements[j].diag[n])
    }

    /// Largest deviation of `Σ_j diag_j[n]` from one.
    pub fn completeness_error(&self) -> f64 {
        (0..=self.truncation())
            .map(|n| (self.elements.iter().map(|e| e.diag[n]).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Binary APD: element 0 is "no click", element 1 is "click".
pub fn apd_povm(efficiency: f64, truncation: usize) -> Result<PovmSet> {
    check_unit_interval("APD efficiency", efficiency)?;
    let miss = 1.0 - efficiency;
    let no_click: Vec<f64> = (0..=truncation).map(|n| miss.powi(n as i32)).collect();
    let click = no_click.iter().map(|p| 1.0 - p).collect();
    PovmSet::new(vec![PovmElement::new(0, no_click)?, PovmElement::new(1, click)?])
}

/// TMD POVM: element `j` is row `j` of `C·L`.
pub fn tmd_povm(conv: &ConvolutionMatrix, loss: &LossMatrix) -> Result<PovmSet> {
    if conv.entries.ncols() != loss.entries.nrows() {
        return Err(Error::DimensionMismatch {
            what: "convolution columns vs loss rows",
            expected: loss.entries.nrows(),
            found: conv.entries.ncols(),
        });
    }
    PovmSet::from_rows(&(&conv.entries * &loss.entries))
}

/// Outcome probabilities `p_j = Σ_n diag_j[n]·σ_n` together with how much of
/// the state's mass the truncated POVM could not account for.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeProbabilities {
    pub probs: Vec<f64>,
    pub total: f64,
    /// `1 - total`; equals the state's tail mass for a complete POVM.
    pub deficit: f64,
}

pub fn outcome_probabilities(povm: &PovmSet, state: &FockDistribution) -> Result<OutcomeProbabilities> {
    if povm.truncation() != state.truncation() {
        return Err(Error::DimensionMismatch {
            what: "state truncation vs POVM truncation",
            expected: povm.truncation(),
            found: state.truncation(),
        });
    }
    let probs: Vec<f64> = povm.elements.iter().map(|e| e.expectation(state)).collect();
    let total = probs.iter().sum::<f64>();
    Ok(OutcomeProbabilities {
        probs,
        total,
        deficit: 1.0 - total,
    })
}

/// Compact detector description, parsed from `kind:params`.
///
/// * `apd:η`
/// * `tmd:p1,p2,...,pB` (optionally `/η_loss`)
/// * `builtin:paper-tmd-8bin` (optionally `,η_loss`)
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DetectorSpec {
    Apd { efficiency: f64 },
    Tmd { bin_probs: Vec<f64>, loss: Option<f64> },
    Builtin { name: String, loss: Option<f64> },
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("'{s}' is not a number")))
}

impl FromStr for DetectorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, params) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("detector spec '{s}' lacks a 'kind:' prefix")))?;
        match kind {
            "apd" => Ok(DetectorSpec::Apd {
                efficiency: parse_f64(params)?,
            }),
            "tmd" => {
                let (bins, loss) = match params.split_once('/') {
                    Some((b, l)) => (b, Some(parse_f64(l)?)),
                    None => (params, None),
                };
                let bin_probs = bins.split(',').map(parse_f64).collect::<Result<Vec<_>>>()?;
                Ok(DetectorSpec::Tmd { bin_probs, loss })
            }
            "builtin" => {
                let (name, loss) = match params.split_once(',') {
                    Some((n, l)) => (n, Some(parse_f64(l)?)),
                    None => (params, None),
                };
                builtin_dataset(name)?;
                Ok(DetectorSpec::Builtin {
                    name: name.to_string(),
                    loss,
                })
            }
            other => Err(Error::Parse(format!("unknown detector kind '{other}'"))),
        }
    }
}

impl fmt::Display for DetectorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DetectorSpec::Apd { efficiency } => write!(f, "apd:{efficiency}"),
            DetectorSpec::Tmd { bin_probs, loss } => {
                let bins: Vec<String> = bin_probs.iter().map(|p| p.to_string()).collect();
                write!(f, "tmd:{}", bins.join(","))?;
                if let Some(l) = loss {
                    write!(f, "/{l}")?;
                }
                Ok(())
            }
            DetectorSpec::Builtin { name, loss } => {
                write!(f, "builtin:{name}")?;
                if let Some(l) = loss {
                    write!(f, ",{l}")?;
                }
                Ok(())
            }
        }
    }
}

impl DetectorSpec {
    /// The loss fraction, with `override_loss` taking the place of an
    /// unspecified embedded value. Specifying both is an error.
    fn resolve_loss(embedded: Option<f64>, override_loss: Option<f64>) -> Result<f64> {
        match (embedded, override_loss) {
            (Some(_), Some(_)) => Err(Error::Parse("loss given both in the detector spec and separately".into())),
            (Some(l), None) | (None, Some(l)) => Ok(l),
            (None, None) => Ok(0.0),
        }
    }

    pub fn build(&self, truncation: usize, override_loss: Option<f64>) -> Result<DetectorModel> {
        match self {
            DetectorSpec::Apd { efficiency } => {
                if override_loss.is_some_and(|l| l != 0.0) {
                    return Err(Error::Parse("an APD takes its losses through its efficiency".into()));
                }
                Ok(DetectorModel {
                    povm: apd_povm(*efficiency, truncation)?,
                    conv: None,
                    loss: None,
                })
            }
            DetectorSpec::Tmd { bin_probs, loss } => {
                let loss = loss_matrix(Self::resolve_loss(*loss, override_loss)?, truncation)?;
                let conv = convolution_matrix(bin_probs, truncation)?;
                DetectorModel::from_parts(conv, loss)
            }
            DetectorSpec::Builtin { name, loss } => {
                let loss = loss_matrix(Self::resolve_loss(*loss, override_loss)?, truncation)?;
                let conv = ConvolutionMatrix::builtin(name, truncation)?;
                DetectorModel::from_parts(conv, loss)
            }
        }
    }
}

/// A detector with the matrices it was assembled from (TMDs only).
#[derive(Debug, Clone)]
pub struct DetectorModel {
    pub povm: PovmSet,
    pub conv: Option<ConvolutionMatrix>,
    pub loss: Option<LossMatrix>,
}

impl DetectorModel {
    pub fn from_parts(conv: ConvolutionMatrix, loss: LossMatrix) -> Result<Self> {
        let povm = tmd_povm(&conv, &loss)?;
        Ok(Self {
            povm,
            conv: Some(conv),
            loss: Some(loss),
        })
    }

    /// The built-in eight-bin TMD behind `loss_fraction` loss.
    pub fn paper_tmd(loss_fraction: f64, truncation: usize) -> Result<Self> {
        Self::from_parts(
            ConvolutionMatrix::builtin(PAPER_TMD_8BIN, truncation)?,
            loss_matrix(loss_fraction, truncation)?,
        )
    }
}

/// Largest `|column sum - 1|` of a matrix.
pub fn max_column_deviation(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| (c.sum() - 1.0).abs()).fold(0.0, f64::max)
}
