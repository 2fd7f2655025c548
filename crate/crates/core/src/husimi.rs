//! Husimi distributions: coherent-state projections of grid wavefunctions.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classical::PhaseWindow;
use crate::error::{AtlasError, Result};
use crate::floquet::{FloquetState, GridSpec};

/// Phase-space sampling grid for Q(x, p).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HusimiGrid {
    pub x_range: (f64, f64),
    pub p_range: (f64, f64),
    /// (n_x, n_p) sample counts.
    pub resolution: (usize, usize),
    /// Coherent-state position width σ.
    pub sigma: f64,
}

impl HusimiGrid {
    pub fn new(x_range: (f64, f64), p_range: (f64, f64)) -> Self {
        HusimiGrid {
            x_range,
            p_range,
            resolution: (150, 150),
            sigma: 1.0,
        }
    }

    /// Grid covering a phase-space window.
    pub fn from_window(window: PhaseWindow) -> Self {
        HusimiGrid::new((window.x_min, window.x_max), (window.p_min, window.p_max))
    }

    pub fn with_resolution(mut self, n_x: usize, n_p: usize) -> Self {
        self.resolution = (n_x, n_p);
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution.0 < 16 || self.resolution.1 < 16 {
            return Err(AtlasError::Config(format!(
                "husimi resolution must be ≥ 16 per axis, got {:?}",
                self.resolution
            )));
        }
        if self.sigma <= 0.0 {
            return Err(AtlasError::Config(format!(
                "coherent-state width must be > 0, got {}",
                self.sigma
            )));
        }
        if self.x_range.0 >= self.x_range.1 || self.p_range.0 >= self.p_range.1 {
            return Err(AtlasError::Config(
                "husimi ranges must be increasing".to_string(),
            ));
        }
        Ok(())
    }

    pub fn x_samples(&self) -> Vec<f64> {
        linspace(self.x_range.0, self.x_range.1, self.resolution.0)
    }

    pub fn p_samples(&self) -> Vec<f64> {
        linspace(self.p_range.0, self.p_range.1, self.resolution.1)
    }

    /// Phase-space cell area per sample (closed-interval sampling).
    pub fn cell_area(&self) -> f64 {
        let dx = (self.x_range.1 - self.x_range.0) / (self.resolution.0 - 1) as f64;
        let dp = (self.p_range.1 - self.p_range.0) / (self.resolution.1 - 1) as f64;
        dx * dp
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + i as f64 * step).collect()
}

/// Non-negative scalar field over a phase-space window.
#[derive(Debug, Clone)]
pub struct ScalarField {
    /// Row j is the momentum sample p_j; column i the position sample x_i.
    pub values: Array2<f64>,
    pub extent: PhaseWindow,
    /// Set when more than 5% of the state's mass lies outside the window.
    pub low_coverage: bool,
}

impl ScalarField {
    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// ∬ Q d²α over the window, with d²α = dx·dp/2 (trapezoid weights).
    pub fn total_mass(&self) -> f64 {
        let (n_p, n_x) = self.values.dim();
        let dx = self.extent.width() / (n_x - 1) as f64;
        let dp = self.extent.height() / (n_p - 1) as f64;
        let mut sum = 0.0;
        for j in 0..n_p {
            let wj = if j == 0 || j == n_p - 1 { 0.5 } else { 1.0 };
            for i in 0..n_x {
                let wi = if i == 0 || i == n_x - 1 { 0.5 } else { 1.0 };
                sum += wj * wi * self.values[(j, i)];
            }
        }
        sum * dx * dp / 2.0
    }

    /// Fraction of the window mass falling inside `region`.
    pub fn mass_fraction_in(&self, region: &PhaseWindow) -> f64 {
        let (n_p, n_x) = self.values.dim();
        let xs = linspace(self.extent.x_min, self.extent.x_max, n_x);
        let ps = linspace(self.extent.p_min, self.extent.p_max, n_p);
        let mut inside = 0.0;
        let mut total = 0.0;
        for j in 0..n_p {
            for i in 0..n_x {
                let v = self.values[(j, i)];
                total += v;
                if region.contains(xs[i], ps[j]) {
                    inside += v;
                }
            }
        }
        if total == 0.0 {
            0.0
        } else {
            inside / total
        }
    }
}

/// Husimi distribution Q(x, p) = (1/π)·|⟨x, p|ψ⟩|².
///
/// The coherent state is ⟨x|x₀, p₀⟩ = (πσ²)^{−1/4}·exp(−(x−x₀)²/(2σ²) + i·p₀·x)
/// and the overlap is evaluated by trapezoid quadrature on the position grid.
pub fn husimi_field(
    state: &FloquetState,
    grid: &GridSpec,
    husimi: &HusimiGrid,
) -> Result<ScalarField> {
    husimi.validate()?;
    let xs_grid = grid.positions();
    let dx = grid.dx();
    let sigma = husimi.sigma;
    let norm_factor = (std::f64::consts::PI * sigma * sigma).powf(-0.25);

    // Physical wavefunction samples ψ(x_k)·w_k with trapezoid weights folded
    // in. Amplitudes are ℓ²-normalized, so ψ(x_k) = a_k/√dx.
    let n = xs_grid.len();
    let weighted: Vec<Complex64> = state
        .amplitudes
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let w = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
            a / dx.sqrt() * w * dx
        })
        .collect();

    let xs = husimi.x_samples();
    let ps = husimi.p_samples();
    let (n_x, n_p) = husimi.resolution;

    let rows: Vec<Vec<f64>> = ps
        .par_iter()
        .map(|&p0| {
            // e^{−i·p0·x_k}, shared across this row.
            let momentum_phase: Vec<Complex64> = xs_grid
                .iter()
                .map(|&x| Complex64::from_polar(1.0, -p0 * x))
                .collect();
            xs.iter()
                .map(|&x0| {
                    let mut overlap = Complex64::new(0.0, 0.0);
                    for k in 0..n {
                        let g = (-(xs_grid[k] - x0).powi(2) / (2.0 * sigma * sigma)).exp();
                        overlap += norm_factor * g * momentum_phase[k] * weighted[k];
                    }
                    overlap.norm_sqr() / std::f64::consts::PI
                })
                .collect()
        })
        .collect();

    let mut values = Array2::zeros((n_p, n_x));
    for (j, row) in rows.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            values[(j, i)] = v;
        }
    }

    let extent = PhaseWindow::new(
        husimi.x_range.0,
        husimi.x_range.1,
        husimi.p_range.0,
        husimi.p_range.1,
    );
    let field = ScalarField {
        values,
        extent,
        low_coverage: false,
    };
    // Window coverage: the full-plane mass equals ‖ψ‖², so a window capturing
    // less than 95% of it means the state spills outside.
    let norm_sqr: f64 = state.amplitudes.iter().map(|a| a.norm_sqr()).sum();
    let low_coverage = field.total_mass() < 0.95 * norm_sqr;
    Ok(ScalarField {
        low_coverage,
        ..field
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floquet::PhaseLabel;

    fn coherent_state(grid: &GridSpec, x0: f64, p0: f64, sigma: f64) -> FloquetState {
        let mut amps: Vec<Complex64> = grid
            .positions()
            .iter()
            .map(|&x| {
                Complex64::from_polar(
                    (-(x - x0).powi(2) / (2.0 * sigma * sigma)).exp(),
                    p0 * x,
                )
            })
            .collect();
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|a| *a /= norm);
        FloquetState {
            amplitudes: amps,
            quasienergy: 0.0,
            gamma: 0.0,
            phase_label: PhaseLabel::T0,
        }
    }

    fn test_grid() -> GridSpec {
        GridSpec::new(256, -10.0, 10.0, 1024)
    }

    #[test]
    fn coherent_state_peak_is_one_over_pi() {
        let grid = test_grid();
        let state = coherent_state(&grid, 1.2, -0.8, 1.0);
        let hg = HusimiGrid::new((-5.0, 5.0), (-5.0, 5.0)).with_resolution(101, 101);
        let field = husimi_field(&state, &grid, &hg).unwrap();
        let peak = field.max();
        assert!(
            (peak - 1.0 / std::f64::consts::PI).abs() < 1e-3,
            "peak {peak}"
        );
        // Peak location: (1.2, −0.8) on the sample lattice (0.1 spacing).
        let (mut best, mut at) = (0.0, (0, 0));
        for j in 0..101 {
            for i in 0..101 {
                if field.values[(j, i)] > best {
                    best = field.values[(j, i)];
                    at = (j, i);
                }
            }
        }
        let x = -5.0 + at.1 as f64 * 0.1;
        let p = -5.0 + at.0 as f64 * 0.1;
        assert!((x - 1.2).abs() < 0.11 && (p + 0.8).abs() < 0.11);
    }

    #[test]
    fn husimi_mass_is_one_on_wide_window() {
        let grid = test_grid();
        let state = coherent_state(&grid, 0.5, 1.0, 1.0);
        let hg = HusimiGrid::new((-8.0, 8.0), (-8.0, 8.0)).with_resolution(161, 161);
        let field = husimi_field(&state, &grid, &hg).unwrap();
        let mass = field.total_mass();
        assert!((mass - 1.0).abs() < 1e-2, "total mass {mass}");
        assert!(!field.low_coverage);
    }

    #[test]
    fn husimi_values_bounded_by_one_over_pi() {
        let grid = test_grid();
        // A structured superposition rather than a single Gaussian.
        let a = coherent_state(&grid, -2.0, 0.0, 1.0);
        let b = coherent_state(&grid, 2.0, 1.0, 1.0);
        let mut amps: Vec<Complex64> = a
            .amplitudes
            .iter()
            .zip(&b.amplitudes)
            .map(|(x, y)| x + y)
            .collect();
        let norm = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|z| *z /= norm);
        let state = FloquetState {
            amplitudes: amps,
            quasienergy: 0.0,
            gamma: 0.0,
            phase_label: PhaseLabel::T0,
        };
        let hg = HusimiGrid::new((-6.0, 6.0), (-4.0, 4.0)).with_resolution(120, 80);
        let field = husimi_field(&state, &grid, &hg).unwrap();
        for &v in field.values.iter() {
            assert!(v >= 0.0 && v <= 1.0 / std::f64::consts::PI + 1e-6);
        }
    }

    #[test]
    fn harmonic_ground_state_is_rotationally_symmetric() {
        // With matched σ the ground-state Husimi depends only on x² + p².
        let grid = test_grid();
        let state = coherent_state(&grid, 0.0, 0.0, 1.0);
        let hg = HusimiGrid::new((-4.0, 4.0), (-4.0, 4.0)).with_resolution(161, 161);
        let field = husimi_field(&state, &grid, &hg).unwrap();
        let value_at = |x: f64, p: f64| {
            let i = ((x + 4.0) / 0.05).round() as usize;
            let j = ((p + 4.0) / 0.05).round() as usize;
            field.values[(j, i)]
        };
        for r in [0.5f64, 1.0, 2.0] {
            let reference = value_at(r, 0.0);
            for k in 1..8 {
                let theta = k as f64 * std::f64::consts::PI / 4.0;
                let (x, p) = (r * theta.cos(), r * theta.sin());
                let i = ((x + 4.0) / 0.05).round();
                let j = ((p + 4.0) / 0.05).round();
                // Only compare points that land exactly on the lattice.
                if (i * 0.05 - 4.0 - x).abs() < 1e-9 && (j * 0.05 - 4.0 - p).abs() < 1e-9 {
                    let v = value_at(x, p);
                    assert!(
                        (v - reference).abs() < 1e-3,
                        "asymmetry at r={r}, θ={theta}: {v} vs {reference}"
                    );
                }
            }
        }
    }

    #[test]
    fn low_coverage_flag_raised_on_narrow_window() {
        let grid = test_grid();
        let state = coherent_state(&grid, 3.0, 0.0, 1.0);
        let hg = HusimiGrid::new((-1.0, 1.0), (-1.0, 1.0)).with_resolution(33, 33);
        let field = husimi_field(&state, &grid, &hg).unwrap();
        assert!(field.low_coverage);
    }

    #[test]
    fn quadrature_stable_under_position_grid_doubling() {
        let coarse = GridSpec::new(256, -10.0, 10.0, 1024);
        let fine = GridSpec::new(512, -10.0, 10.0, 1024);
        let hg = HusimiGrid::new((-5.0, 5.0), (-5.0, 5.0)).with_resolution(64, 64);
        let f_coarse = husimi_field(&coherent_state(&coarse, 1.0, 0.5, 1.0), &coarse, &hg).unwrap();
        let f_fine = husimi_field(&coherent_state(&fine, 1.0, 0.5, 1.0), &fine, &hg).unwrap();
        let mut worst: f64 = 0.0;
        for (a, b) in f_coarse.values.iter().zip(f_fine.values.iter()) {
            worst = worst.max((a - b).abs());
        }
        assert!(worst < 1e-4, "max-norm change {worst}");
    }

    #[test]
    fn mass_fraction_of_sub_window() {
        // Uniform field: fraction equals the sampled-point count ratio.
        let values = Array2::from_elem((100, 100), 1.0);
        let field = ScalarField {
            values,
            extent: PhaseWindow::symmetric(1.0),
            low_coverage: false,
        };
        let frac = field.mass_fraction_in(&PhaseWindow::new(-1.0, 0.0, -1.0, 1.0));
        assert!((frac - 0.5).abs() < 0.02, "fraction {frac}");
    }
}
