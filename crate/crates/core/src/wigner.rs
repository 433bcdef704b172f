//! Phase-space view of diagonal operators.
//!
//! Conventions: `W_n(x, p) = ((−1)ⁿ/(πħ))·exp(−r²/ħ)·L_n(2r²/ħ)` with
//! `r² = x² + p²`, so `∫∫ W_n dx dp = 1`, `∫∫ W_Ô dx dp = Tr Ô` and
//! `Tr(ρ̂ Ô) = 2πħ ∫∫ W_ρ W_Ô dx dp`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::detector::PovmElement;
use crate::error::{Error, Result};
use crate::fock::FockDistribution;

/// Laguerre polynomials `L_0(z) … L_{n_max}(z)` by upward recurrence.
pub fn laguerre_all(n_max: usize, z: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(1.0);
    if n_max == 0 {
        return out;
    }
    out.push(1.0 - z);
    for k in 1..n_max {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 - z) * out[k] - kf * out[k - 1]) / (kf + 1.0);
        out.push(next);
    }
    out
}

/// `Σ_n weights[n]·W_n` at squared radius `r2`.
fn radial_sum(weights: &[f64], r2: f64, hbar: f64) -> f64 {
    let lag = laguerre_all(weights.len() - 1, 2.0 * r2 / hbar);
    let envelope = (-r2 / hbar).exp() / (PI * hbar);
    let series: f64 = weights
        .iter()
        .zip(&lag)
        .enumerate()
        .map(|(n, (w, l))| if n % 2 == 0 { w * l } else { -w * l })
        .sum();
    envelope * series
}

/// Wigner function of the Fock projector `|n⟩⟨n|`.
pub fn fock_wigner(n: i64, x: f64, p: f64, hbar: f64) -> Result<f64> {
    if n < 0 {
        return Err(Error::domain(format!("photon number must be >= 0, got {n}")));
    }
    check_hbar(hbar)?;
    let r2 = x * x + p * p;
    let lag = laguerre_all(n as usize, 2.0 * r2 / hbar);
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    Ok(sign * (-r2 / hbar).exp() * lag[n as usize] / (PI * hbar))
}

fn check_hbar(hbar: f64) -> Result<()> {
    if hbar.is_finite() && hbar > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("hbar must be positive, got {hbar}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WignerGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub points_per_axis: usize,
    pub hbar: f64,
}

impl Default for WignerGrid {
    fn default() -> Self {
        Self {
            x_min: -6.0,
            x_max: 6.0,
            p_min: -6.0,
            p_max: 6.0,
            points_per_axis: 301,
            hbar: 1.0,
        }
    }
}

impl WignerGrid {
    /// Square grid `[−half_width, half_width]²`.
    pub fn square(half_width: f64, points_per_axis: usize, hbar: f64) -> Result<Self> {
        let grid = Self {
            x_min: -half_width,
            x_max: half_width,
            p_min: -half_width,
            p_max: half_width,
            points_per_axis,
            hbar,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        check_hbar(self.hbar)?;
        if self.points_per_axis < 2 {
            return Err(Error::domain("a Wigner grid needs at least 2 points per axis"));
        }
        if !(self.x_min < self.x_max && self.p_min < self.p_max) {
            return Err(Error::domain("Wigner grid bounds must be ordered"));
        }
        Ok(())
    }

    fn axis(lo: f64, hi: f64, count: usize) -> Vec<f64> {
        let span = hi - lo;
        (0..count).map(|i| lo + span * i as f64 / (count - 1) as f64).collect()
    }

    pub fn xs(&self) -> Vec<f64> {
        Self::axis(self.x_min, self.x_max, self.points_per_axis)
    }

    pub fn ps(&self) -> Vec<f64> {
        Self::axis(self.p_min, self.p_max, self.points_per_axis)
    }

    fn cell_area(&self) -> f64 {
        let steps = (self.points_per_axis - 1) as f64;
        (self.x_max - self.x_min) / steps * (self.p_max - self.p_min) / steps
    }
}

/// Sampled Wigner function, `values[(i, k)] = W(xs[i], ps[k])`.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerField {
    pub grid: WignerGrid,
    pub values: DMatrix<f64>,
    pub label: String,
}

impl WignerField {
    fn from_weights(weights: &[f64], grid: &WignerGrid, label: String) -> Result<Self> {
        grid.validate()?;
        let xs = grid.xs();
        let ps = grid.ps();
        let columns: Vec<Vec<f64>> = ps
            .par_iter()
            .map(|&p| xs.iter().map(|&x| radial_sum(weights, x * x + p * p, grid.hbar)).collect())
            .collect();
        let values = DMatrix::from_fn(xs.len(), ps.len(), |i, k| columns[k][i]);
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("Wigner evaluation produced non-finite values"));
        }
        Ok(Self {
            grid: *grid,
            values,
            label,
        })
    }

    /// Trapezoid-rule `∫∫ W dx dp`.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.values, self.grid.cell_area())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.amax()
    }
}

fn trapezoid(values: &DMatrix<f64>, cell: f64) -> f64 {
    let (nx, np) = values.shape();
    let mut total = 0.0;
    for i in 0..nx {
        let wx = if i == 0 || i + 1 == nx { 0.5 } else { 1.0 };
        for k in 0..np {
            let wp = if k == 0 || k + 1 == np { 0.5 } else { 1.0 };
            total += wx * wp * values[(i, k)];
        }
    }
    total * cell
}

/// `W_γ = Σ_n diag[n]·W_n` on `grid`.
pub fn povm_wigner(element: &PovmElement, grid: &WignerGrid) -> Result<WignerField> {
    WignerField::from_weights(&element.diag, grid, format!("outcome {}", element.outcome_label))
}

/// Wigner function of a phase-averaged state with photon statistics `state`.
pub fn state_wigner(state: &FockDistribution, grid: &WignerGrid) -> Result<WignerField> {
    WignerField::from_weights(state.probs(), grid, "state".to_string())
}

/// Outcome probability `2πħ ∫∫ W_ρ W_γ dx dp` by the trapezoid rule.
pub fn wigner_overlap(state_field: &WignerField, detector_field: &WignerField) -> Result<f64> {
    if state_field.grid != detector_field.grid {
        return Err(Error::domain("Wigner fields live on different grids"));
    }
    let product = state_field.values.component_mul(&detector_field.values);
    let grid = &state_field.grid;
    Ok(2.0 * PI * grid.hbar * trapezoid(&product, grid.cell_area()))
}

/// `(r, W(r, 0))` samples for `r = i·r_max/samples`, `i = 0..=samples`.
pub fn cross_section(element: &PovmElement, r_max: f64, samples: usize, hbar: f64) -> Result<Vec<(f64, f64)>> {
    check_hbar(hbar)?;
    if !(r_max.is_finite() && r_max > 0.0) || samples == 0 {
        return Err(Error::domain("cross-section needs r_max > 0 and at least one sample"));
    }
    Ok((0..=samples)
        .map(|i| {
            let r = r_max * i as f64 / samples as f64;
            (r, radial_sum(&element.diag, r * r, hbar))
        })
        .collect())
}

/// Sign changes of `W` along a ray, `r ∈ (0, r_max]`.
///
/// Samples with `|W| ≤ 1e-9·max|W|` are skipped, so a change is counted
/// only between two samples that both clear that floor.
pub fn radial_nodes(element: &PovmElement, r_max: f64, samples: usize, hbar: f64) -> Result<usize> {
    if samples < 100 {
        return Err(Error::domain(format!("need at least 100 radial samples, got {samples}")));
    }
    let profile = cross_section(element, r_max, samples, hbar)?;
    let values: Vec<f64> = profile.iter().skip(1).map(|&(_, w)| w).collect();
    let floor = 1e-9 * values.iter().fold(0.0_f64, |m, w| m.max(w.abs()));
    let mut nodes = 0;
    let mut last_sign: Option<bool> = None;
    for w in values.into_iter().filter(|w| w.abs() > floor) {
        let positive = w > 0.0;
        if last_sign.is_some_and(|s| s != positive) {
            nodes += 1;
        }
        last_sign = Some(positive);
    }
    Ok(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fock_element(n: usize, truncation: usize) -> PovmElement {
        let mut diag = vec![0.0; truncation + 1];
        diag[n] = 1.0;
        PovmElement::new(0, diag).unwrap()
    }

    #[test]
    fn laguerre_low_orders() {
        let z = 0.7;
        let l = laguerre_all(3, z);
        assert_eq!(l[0], 1.0);
        assert!((l[1] - (1.0 - z)).abs() < 1e-15);
        assert!((l[2] - (z * z - 4.0 * z + 2.0) / 2.0).abs() < 1e-15);
        assert!((l[3] - (-z.powi(3) + 9.0 * z * z - 18.0 * z + 6.0) / 6.0).abs() < 1e-14);
    }

    #[test]
    fn origin_values() {
        assert!((fock_wigner(0, 0.0, 0.0, 1.0).unwrap() - 1.0 / PI).abs() < 1e-15);
        assert!((fock_wigner(1, 0.0, 0.0, 1.0).unwrap() + 1.0 / PI).abs() < 1e-15);
        assert!(fock_wigner(-1, 0.0, 0.0, 1.0).is_err());
        assert!(fock_wigner(0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn five_photon_nodes() {
        // r² ∈ (0, 25) ⇒ r ∈ (0, 5)
        assert_eq!(radial_nodes(&fock_element(5, 5), 5.0, 5000, 1.0).unwrap(), 5);
        assert_eq!(radial_nodes(&fock_element(0, 3), 8.0, 1000, 1.0).unwrap(), 0);
        assert!(radial_nodes(&fock_element(0, 3), 8.0, 50, 1.0).is_err());
        assert!(radial_nodes(&fock_element(0, 3), -1.0, 500, 1.0).is_err());
    }

    #[test]
    fn vacuum_field_is_positive() {
        let grid = WignerGrid::square(4.0, 81, 1.0).unwrap();
        let f = povm_wigner(&fock_element(0, 4), &grid).unwrap();
        assert!(f.values.iter().all(|&v| v > 0.0));
        assert!((f.integral() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn overlap_requires_same_grid() {
        let a = povm_wigner(&fock_element(0, 2), &WignerGrid::square(3.0, 31, 1.0).unwrap()).unwrap();
        let b = povm_wigner(&fock_element(0, 2), &WignerGrid::square(3.0, 41, 1.0).unwrap()).unwrap();
        assert!(wigner_overlap(&a, &b).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(WignerGrid::square(3.0, 1, 1.0).is_err());
        assert!(WignerGrid::square(-3.0, 10, 1.0).is_err());
        assert!(WignerGrid::square(3.0, 10, -1.0).is_err());
        let g = WignerGrid::default();
        assert_eq!(g.xs().len(), 301);
        assert_eq!(g.xs()[150], 0.0);
    }
}
