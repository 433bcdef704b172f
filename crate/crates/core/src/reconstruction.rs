//! POVM reconstruction from click statistics.
//!
//! With `F` the probe design (`F[α][n]` = Poisson weight of probe `α` on
//! `|n⟩`) and `P` the measured frequencies, the diagonal elements `Θ`
//! (one row per outcome) solve
//!
//! ```text
//! minimize   ‖P − F·Θᵀ‖² + s·Σ_j Σ_n (Θ[j][n+1] − Θ[j][n])²
//! subject to Θ ≥ 0,  Σ_j Θ[j][n] = 1 for every n.
//! ```
//!
//! The feasible set is a product of probability simplices (one per photon
//! number), so Euclidean projection is exact and cheap. The solver runs an
//! accelerated projected-gradient loop with backtracking and then polishes
//! the result with an active-set solve of the equality-constrained least
//! squares problem on the free entries.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::detector::{PovmElement, PovmSet};
use crate::error::{Error, Result};
use crate::probe::{probe_design, spanning_check};
use crate::simulation::TomographyDataset;

/// Probe Poisson mass above `d − 1` that triggers a truncation warning.
pub const TRUNCATION_WARNING: f64 = 1e-6;

/// How probe photon-number mass above the truncation enters the design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailHandling {
    /// Drop it; rows of `F` sum to less than one.
    #[default]
    Truncate,
    /// Add it to the last column, i.e. assume the detector responds to any
    /// `n ≥ d − 1` like it does to `d − 1` photons.
    Lump,
}

#[derive(Debug, Clone)]
pub struct ReconstructionProblem {
    /// `F`, probes × photon number.
    pub design: DMatrix<f64>,
    /// `P`, probes × outcomes.
    pub data: DMatrix<f64>,
    pub smoothing_weight: f64,
    pub tail: TailHandling,
    /// Non-fatal diagnostics gathered while building the problem.
    pub warnings: Vec<String>,
}

impl ReconstructionProblem {
    pub fn new(design: DMatrix<f64>, data: DMatrix<f64>, smoothing_weight: f64) -> Result<Self> {
        let problem = Self {
            design,
            data,
            smoothing_weight,
            tail: TailHandling::Truncate,
            warnings: Vec::new(),
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn dimension(&self) -> usize {
        self.design.ncols()
    }

    pub fn outcomes(&self) -> usize {
        self.data.ncols()
    }

    fn validate(&self) -> Result<()> {
        if self.design.nrows() == 0 || self.design.ncols() == 0 {
            return Err(Error::domain("design matrix is empty"));
        }
        if self.data.ncols() == 0 {
            return Err(Error::domain("no outcomes in data"));
        }
        if self.design.nrows() != self.data.nrows() {
            return Err(Error::DimensionMismatch {
                what: "design rows vs data rows",
                expected: self.design.nrows(),
                found: self.data.nrows(),
            });
        }
        if !(self.smoothing_weight.is_finite() && self.smoothing_weight >= 0.0) {
            return Err(Error::domain(format!("smoothing weight must be >= 0, got {}", self.smoothing_weight)));
        }
        for (i, row) in self.design.row_iter().enumerate() {
            if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || row.sum() > 1.0 + 1e-12 {
                return Err(Error::domain(format!("design row {i} is not a sub-probability vector")));
            }
        }
        for (i, row) in self.data.row_iter().enumerate() {
            if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (row.sum() - 1.0).abs() > 1e-9 {
                return Err(Error::domain(format!("data row {i} is not a probability vector")));
            }
        }
        Ok(())
    }

    /// Objective value at `theta` (outcomes × dimension).
    pub fn objective(&self, theta: &DMatrix<f64>) -> f64 {
        let residual = &self.data - &self.design * theta.transpose();
        let mut value = residual.norm_squared();
        if self.smoothing_weight > 0.0 {
            let mut rough = 0.0;
            for j in 0..theta.nrows() {
                for n in 1..theta.ncols() {
                    rough += (theta[(j, n)] - theta[(j, n - 1)]).powi(2);
                }
            }
            value += self.smoothing_weight * rough;
        }
        value
    }

    /// RMS of `P − F·Θᵀ` over all entries.
    pub fn residual_rms(&self, theta: &DMatrix<f64>) -> f64 {
        let residual = &self.data - &self.design * theta.transpose();
        (residual.norm_squared() / residual.len() as f64).sqrt()
    }
}

pub fn build_problem(dataset: &TomographyDataset, dimension: usize, smoothing_weight: f64) -> Result<ReconstructionProblem> {
    build_problem_with(dataset, dimension, smoothing_weight, TailHandling::Truncate)
}

pub fn build_problem_with(
    dataset: &TomographyDataset,
    dimension: usize,
    smoothing_weight: f64,
    tail: TailHandling,
) -> Result<ReconstructionProblem> {
    if dimension == 0 {
        return Err(Error::domain("dimension must be at least 1"));
    }
    if dataset.probes.is_empty() || dataset.frequencies.nrows() == 0 {
        return Err(Error::domain("dataset has no probes"));
    }
    let mut design = probe_design(&dataset.probes, dimension);
    let mut warnings = Vec::new();

    let worst_tail = design
        .row_iter()
        .map(|r| (1.0 - r.sum()).max(0.0))
        .fold(0.0, f64::max);
    match tail {
        TailHandling::Truncate if worst_tail > TRUNCATION_WARNING => warnings.push(format!(
            "largest probe leaves Poisson mass {worst_tail:.3e} above n = {}; consider a larger dimension",
            dimension - 1
        )),
        TailHandling::Lump => {
            for mut row in design.row_iter_mut() {
                let missing = (1.0 - row.sum()).max(0.0);
                row[dimension - 1] += missing;
            }
        }
        _ => {}
    }

    if dataset.probes.len() < dimension {
        warnings.push(format!(
            "{} probes cannot determine {dimension} diagonal entries",
            dataset.probes.len()
        ));
    } else if !spanning_check(&dataset.probes, dimension)?.complete {
        warnings.push(format!("probe set is not tomographically complete for dimension {dimension}"));
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    let problem = ReconstructionProblem {
        design,
        data: dataset.frequencies.clone(),
        smoothing_weight,
        tail,
        warnings,
    };
    problem.validate()?;
    Ok(problem)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Iterations over which the relative objective decrease is measured.
    pub window: usize,
    pub relative_tolerance: f64,
    /// Run the active-set refinement after the gradient phase.
    pub polish: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50_000,
            window: 50,
            relative_tolerance: 1e-12,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructedPovm {
    pub povm: PovmSet,
    pub residual: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest objective decrease rate available along a feasible direction,
    /// scaled so that a value below 1e-4 means no feasible perturbation of
    /// size 1e-6 lowers the objective by more than 1e-10.
    pub stationarity: f64,
}

/// Euclidean projection of `v` onto the probability simplex.
fn project_simplex(v: &mut [f64]) {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut shift = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (i + 1) as f64;
        if u - candidate > 0.0 {
            shift = candidate;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - shift).max(0.0);
    }
}

fn project_columns(theta: &mut DMatrix<f64>) {
    let mut buf = vec![0.0; theta.nrows()];
    for mut col in theta.column_iter_mut() {
        buf.copy_from_slice(col.as_slice());
        project_simplex(&mut buf);
        col.copy_from_slice(&buf);
    }
}

/// Quadratic form pieces: objective = tr(Θ A Θᵀ) − 2 tr(H Θᵀ) + ‖P‖².
struct Quadratic {
    a: DMatrix<f64>,
    h: DMatrix<f64>,
}

impl Quadratic {
    fn new(problem: &ReconstructionProblem) -> Self {
        let f = &problem.design;
        let mut a = f.transpose() * f;
        let d = a.nrows();
        let s = problem.smoothing_weight;
        if s > 0.0 {
            for n in 0..d.saturating_sub(1) {
                a[(n, n)] += s;
                a[(n + 1, n + 1)] += s;
                a[(n, n + 1)] -= s;
                a[(n + 1, n)] -= s;
            }
        }
        let h = problem.data.transpose() * f;
        Self { a, h }
    }

    fn gradient(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        (theta * &self.a - &self.h) * 2.0
    }

    /// `tr(Δ A Δᵀ)`, the exact second-order change along `Δ`.
    fn curvature(&self, delta: &DMatrix<f64>) -> f64 {
        (delta * &self.a).component_mul(delta).sum()
    }

    fn lipschitz_estimate(&self) -> f64 {
        // power iteration for λ_max(A); 2λ_max bounds the gradient's Lipschitz constant
        let d = self.a.nrows();
        let mut v = DVector::from_element(d, 1.0 / (d as f64).sqrt());
        let mut lambda = 0.0;
        for _ in 0..100 {
            let w = &self.a * &v;
            let norm = w.norm();
            if norm == 0.0 {
                return 1.0;
            }
            lambda = norm;
            v = w / norm;
        }
        (2.0 * lambda * 1.01).max(f64::MIN_POSITIVE)
    }
}

fn stationarity(theta: &DMatrix<f64>, gradient: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for n in 0..theta.ncols() {
        let g = gradient.column(n);
        let min_g = g.min();
        for j in 0..theta.nrows() {
            let reach = (theta[(j, n)] / 1e-6).min(1.0);
            worst = worst.max((g[j] - min_g) * reach);
        }
    }
    worst
}

const STATIONARITY_TOL: f64 = 1e-4;

pub fn reconstruct(problem: &ReconstructionProblem) -> Result<ReconstructedPovm> {
    reconstruct_with(problem, &SolverOptions::default())
}

pub fn reconstruct_with(problem: &ReconstructionProblem, options: &SolverOptions) -> Result<ReconstructedPovm> {
    problem.validate()?;
    let outcomes = problem.outcomes();
    let dim = problem.dimension();
    let quad = Quadratic::new(problem);

    let mut theta = DMatrix::from_element(outcomes, dim, 1.0 / outcomes as f64);
    let mut value = problem.objective(&theta);
    let mut history = vec![value];
    let mut extrapolated = theta.clone();
    let mut momentum = 1.0_f64;
    let mut step = 1.0 / quad.lipschitz_estimate();
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        let gradient = quad.gradient(&extrapolated);
        let mut candidate;
        loop {
            candidate = &extrapolated - &gradient * step;
            project_columns(&mut candidate);
            let delta = &candidate - &extrapolated;
            let dd = delta.norm_squared();
            if dd == 0.0 || quad.curvature(&delta) <= dd / (2.0 * step) * (1.0 + 1e-12) {
                break;
            }
            step *= 0.5;
        }
        let candidate_value = problem.objective(&candidate);
        if candidate_value > value {
            // momentum overshot: restart from the last accepted iterate
            if momentum > 1.0 {
                extrapolated = theta.clone();
                momentum = 1.0;
                history.push(value);
                continue;
            }
            // a plain projected-gradient step can only rise through round-off
            history.push(value);
            break;
        }
        let next_momentum = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        extrapolated = &candidate + (&candidate - &theta) * ((momentum - 1.0) / next_momentum);
        momentum = next_momentum;
        theta = candidate;
        value = candidate_value;
        history.push(value);

        if history.len() > options.window {
            let before = history[history.len() - 1 - options.window];
            if before - value <= options.relative_tolerance * before + f64::MIN_POSITIVE {
                break;
            }
        }
    }

    if options.polish {
        if let Some(polished) = active_set_polish(problem, &quad, &theta) {
            let polished_value = problem.objective(&polished);
            if polished_value <= value {
                theta = polished;
                value = polished_value;
            }
        }
    }

    let gradient = quad.gradient(&theta);
    let stationarity = stationarity(&theta, &gradient);
    let povm = povm_from_theta(&theta)?;
    Ok(ReconstructedPovm {
        povm,
        residual: problem.residual_rms(&theta),
        objective: value,
        iterations,
        converged: stationarity <= STATIONARITY_TOL,
        stationarity,
    })
}

fn povm_from_theta(theta: &DMatrix<f64>) -> Result<PovmSet> {
    let elements = (0..theta.nrows())
        .map(|j| PovmElement::new(j, theta.row(j).iter().map(|v| v.clamp(0.0, 1.0)).collect()))
        .collect::<Result<Vec<_>>>()?;
    PovmSet::with_tolerance(elements, 1e-8)
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum Slot {
    Zero,
    Free(usize),
    /// Determined by the column sum.
    Reference,
}

/// Equality-constrained least squares on the free entries of `slots`.
fn solve_free(problem: &ReconstructionProblem, slots: &[Vec<Slot>], free: usize) -> Option<DMatrix<f64>> {
    let outcomes = problem.outcomes();
    let dim = problem.dimension();
    // θ[j][n] = constant + Σ coeff·y
    let affine = |j: usize, n: usize| -> (f64, Vec<(usize, f64)>) {
        match slots[n][j] {
            Slot::Zero => (0.0, Vec::new()),
            Slot::Free(i) => (0.0, vec![(i, 1.0)]),
            Slot::Reference => {
                let others = slots[n]
                    .iter()
                    .filter_map(|s| match s {
                        Slot::Free(i) => Some((*i, -1.0)),
                        _ => None,
                    })
                    .collect();
                (1.0, others)
            }
        }
    };
    let terms: Vec<Vec<Affine>> =
        (0..outcomes).map(|j| (0..dim).map(|n| affine(j, n)).collect()).collect();

    let probes = problem.design.nrows();
    let smooth_rows = if problem.smoothing_weight > 0.0 { outcomes * dim.saturating_sub(1) } else { 0 };
    let rows = probes * outcomes + smooth_rows;
    if free == 0 {
        return Some(assemble(&terms, &DVector::zeros(0)));
    }
    let mut a = DMatrix::zeros(rows, free);
    let mut b = DVector::zeros(rows);
    let mut r = 0;
    for (j, row) in terms.iter().enumerate() {
        for alpha in 0..probes {
            let mut target = problem.data[(alpha, j)];
            for (n, (c, coeffs)) in row.iter().enumerate() {
                let w = problem.design[(alpha, n)];
                if w == 0.0 {
                    continue;
                }
                target -= w * c;
                for &(i, k) in coeffs {
                    a[(r, i)] += w * k;
                }
            }
            b[r] = target;
            r += 1;
        }
    }
    if smooth_rows > 0 {
        let root = problem.smoothing_weight.sqrt();
        for term in &terms {
            for n in 1..dim {
                let mut target = 0.0;
                for (sign, (c, coeffs)) in [(1.0, &term[n]), (-1.0, &term[n - 1])] {
                    target -= root * sign * c;
                    for &(i, k) in coeffs {
                        a[(r, i)] += root * sign * k;
                    }
                }
                b[r] = target;
                r += 1;
            }
        }
    }

    let qr = a.qr();
    let mut qtb = b;
    qr.q_tr_mul(&mut qtb);
    let rmat = qr.r();
    let rhs = qtb.rows(0, rmat.nrows()).into_owned();
    let svd = rmat.svd(true, true);
    let cutoff = svd.singular_values.max() * 1e-15;
    let y = svd.solve(&rhs, cutoff).ok()?;
    if y.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(assemble(&terms, &y))
}

/// Constant plus sparse `(free index, coefficient)` combination.
type Affine = (f64, Vec<(usize, f64)>);

fn assemble(terms: &[Vec<Affine>], y: &DVector<f64>) -> DMatrix<f64> {
    let outcomes = terms.len();
    let dim = terms[0].len();
    DMatrix::from_fn(outcomes, dim, |j, n| {
        let (c, coeffs) = &terms[j][n];
        c + coeffs.iter().map(|&(i, k)| k * y[i]).sum::<f64>()
    })
}

/// Lawson–Hanson style active-set iterations over a product of simplices,
/// warm-started from `start`. Returns `None` if a subproblem solve fails.
fn active_set_polish(problem: &ReconstructionProblem, quad: &Quadratic, start: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    const ZERO: f64 = 1e-12;
    let outcomes = problem.outcomes();
    let dim = problem.dimension();
    let mut current = start.clone();
    for mut col in current.column_iter_mut() {
        for v in col.iter_mut() {
            if *v <= ZERO {
                *v = 0.0;
            }
        }
        let total = col.sum();
        col /= total;
    }
    let mut active: Vec<Vec<bool>> = (0..dim)
        .map(|n| (0..outcomes).map(|j| current[(j, n)] == 0.0).collect())
        .collect();

    let max_rounds = 4 * outcomes * dim + 20;
    for _ in 0..max_rounds {
        let mut slots = vec![vec![Slot::Zero; outcomes]; dim];
        let mut free = 0;
        for n in 0..dim {
            let reference = (0..outcomes)
                .filter(|&j| !active[n][j])
                .max_by(|&a, &b| current[(a, n)].total_cmp(&current[(b, n)]))
                .unwrap_or(0);
            active[n][reference] = false;
            for j in 0..outcomes {
                slots[n][j] = if j == reference {
                    Slot::Reference
                } else if active[n][j] {
                    Slot::Zero
                } else {
                    free += 1;
                    Slot::Free(free - 1)
                };
            }
        }
        let trial = solve_free(problem, &slots, free)?;

        let blocking = (0..dim)
            .flat_map(|n| (0..outcomes).map(move |j| (j, n)))
            .filter(|&(j, n)| !active[n][j] && trial[(j, n)] < 0.0)
            .map(|(j, n)| {
                let from = current[(j, n)];
                let to = trial[(j, n)];
                (j, n, from / (from - to))
            })
            .min_by(|a, b| a.2.total_cmp(&b.2));

        match blocking {
            Some((_, _, t)) => {
                current = &current + (&trial - &current) * t.clamp(0.0, 1.0);
                for n in 0..dim {
                    for j in 0..outcomes {
                        if !active[n][j] && current[(j, n)] <= ZERO {
                            current[(j, n)] = 0.0;
                            active[n][j] = true;
                        }
                    }
                }
            }
            None => {
                current = trial;
                let gradient = quad.gradient(&current);
                // release the active entry whose multiplier has the wrong sign
                let mut release: Option<(usize, usize, f64)> = None;
                for n in 0..dim {
                    let free_grads: Vec<f64> =
                        (0..outcomes).filter(|&j| !active[n][j]).map(|j| gradient[(j, n)]).collect();
                    let level = free_grads.iter().sum::<f64>() / free_grads.len() as f64;
                    let scale = gradient.column(n).amax().max(1e-300);
                    for j in (0..outcomes).filter(|&j| active[n][j]) {
                        let gap = gradient[(j, n)] - level;
                        if gap < -1e-10 * scale && release.is_none_or(|r| gap < r.2) {
                            release = Some((j, n, gap));
                        }
                    }
                }
                match release {
                    Some((j, n, _)) => active[n][j] = false,
                    None => break,
                }
            }
        }
    }
    project_columns(&mut current);
    Some(current)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PovmDistance {
    /// `max_{j,n} |a_j[n] − b_j[n]|`.
    pub max_abs: f64,
    /// Largest difference in any single outcome probability over all
    /// diagonal (possibly truncated) states: `max_j sup_σ |Σ_n Δ_j[n] σ_n|`.
    /// The supremum is reached on a Fock state, so this equals
    /// `max_j max_n |Δ_j[n]|`, which for diagonal POVMs coincides with
    /// `max_abs`.
    pub worst_case_probability_gap: f64,
}

pub fn povm_distance(a: &PovmSet, b: &PovmSet) -> Result<PovmDistance> {
    if a.outcomes() != b.outcomes() {
        return Err(Error::DimensionMismatch {
            what: "outcome count",
            expected: a.outcomes(),
            found: b.outcomes(),
        });
    }
    if a.truncation() != b.truncation() {
        return Err(Error::DimensionMismatch {
            what: "POVM truncation",
            expected: a.truncation(),
            found: b.truncation(),
        });
    }
    let mut max_abs: f64 = 0.0;
    let mut gap: f64 = 0.0;
    for (ea, eb) in a.elements().iter().zip(b.elements()) {
        let diffs: Vec<f64> = ea.diag.iter().zip(&eb.diag).map(|(x, y)| x - y).collect();
        let element_gap = diffs
            .iter()
            .copied()
            .fold(0.0, f64::max)
            .max(-diffs.iter().copied().fold(0.0, f64::min));
        gap = gap.max(element_gap);
        max_abs = max_abs.max(diffs.iter().fold(0.0, |m, d| m.max(d.abs())));
    }
    Ok(PovmDistance {
        max_abs,
        worst_case_probability_gap: gap,
    })
}
