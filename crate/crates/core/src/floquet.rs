//! Floquet states of a periodically driven 1D system.
//!
//! The Hamiltonian is H(t) = p²/2 + V(x) + (F·cos ωt + F_st)·x − i·W(x),
//! where W is an optional polynomial absorbing potential at the grid edges.
//! States are obtained by diagonalizing the one-period propagator U(T),
//! which is built column-by-column with a split-operator scheme.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{AtlasError, Result};
use crate::linalg;

/// Field-free potential shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PotentialKind {
    /// V(x) = x²/2 + β·x⁴. β = 0 is the pure harmonic oscillator.
    QuarticOscillator { beta: f64 },
    /// V(x) = −1/√(x² + a²).
    SoftCoulomb { a: f64 },
}

/// Potential plus absorbing-boundary configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    #[serde(flatten)]
    pub kind: PotentialKind,
    /// Amplitude of the −i·W(x) absorber. 0 means unitary evolution.
    pub cap_strength: f64,
    /// Fraction of the grid covered by the absorber at each edge, in [0, 0.5).
    pub cap_fraction: f64,
}

impl PotentialSpec {
    pub fn quartic(beta: f64) -> Self {
        PotentialSpec {
            kind: PotentialKind::QuarticOscillator { beta },
            cap_strength: 0.0,
            cap_fraction: 0.0,
        }
    }

    pub fn soft_coulomb(a: f64) -> Self {
        PotentialSpec {
            kind: PotentialKind::SoftCoulomb { a },
            cap_strength: 0.0,
            cap_fraction: 0.0,
        }
    }

    pub fn with_cap(mut self, strength: f64, fraction: f64) -> Self {
        self.cap_strength = strength;
        self.cap_fraction = fraction;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            // β = 0 is allowed: the harmonic limit is used as an oracle.
            PotentialKind::QuarticOscillator { beta } if beta < 0.0 => {
                return Err(AtlasError::Config(format!(
                    "quartic coefficient must be ≥ 0, got {beta}"
                )))
            }
            PotentialKind::SoftCoulomb { a } if a <= 0.0 => {
                return Err(AtlasError::Config(format!(
                    "softening length must be > 0, got {a}"
                )))
            }
            _ => {}
        }
        if self.cap_strength < 0.0 {
            return Err(AtlasError::Config(format!(
                "cap_strength must be ≥ 0, got {}",
                self.cap_strength
            )));
        }
        if !(0.0..0.5).contains(&self.cap_fraction) {
            return Err(AtlasError::Config(format!(
                "cap_fraction must lie in [0, 0.5), got {}",
                self.cap_fraction
            )));
        }
        Ok(())
    }

    /// Real potential value.
    pub fn value(&self, x: f64) -> f64 {
        match self.kind {
            PotentialKind::QuarticOscillator { beta } => 0.5 * x * x + beta * x.powi(4),
            PotentialKind::SoftCoulomb { a } => -1.0 / (x * x + a * a).sqrt(),
        }
    }

    /// dV/dx, used by the classical integrator.
    pub fn gradient(&self, x: f64) -> f64 {
        match self.kind {
            PotentialKind::QuarticOscillator { beta } => x + 4.0 * beta * x.powi(3),
            PotentialKind::SoftCoulomb { a } => x / (x * x + a * a).powf(1.5),
        }
    }

    /// Absorber profile W(x) ≥ 0 on the given grid: quartic ramp over the
    /// outer `cap_fraction` of the box at each edge.
    pub fn cap_profile(&self, grid: &GridSpec) -> Vec<f64> {
        let width = self.cap_fraction * (grid.x_max - grid.x_min);
        grid.positions()
            .iter()
            .map(|&x| {
                if self.cap_strength == 0.0 || width == 0.0 {
                    return 0.0;
                }
                let lo = grid.x_min + width;
                let hi = grid.x_max - width;
                if x < lo {
                    self.cap_strength * ((lo - x) / width).powi(4)
                } else if x > hi {
                    self.cap_strength * ((x - hi) / width).powi(4)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Monochromatic drive plus static field, coupling through x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveParameters {
    /// Drive amplitude F.
    pub f: f64,
    /// Static field F_st.
    pub f_st: f64,
    /// Drive angular frequency ω.
    pub omega: f64,
}

impl DriveParameters {
    pub fn new(f: f64, f_st: f64, omega: f64) -> Self {
        DriveParameters { f, f_st, omega }
    }

    pub fn validate(&self) -> Result<()> {
        if self.omega <= 0.0 {
            return Err(AtlasError::Config(format!(
                "drive frequency must be > 0, got {}",
                self.omega
            )));
        }
        if self.f < 0.0 || self.f_st < 0.0 {
            return Err(AtlasError::Config(
                "field amplitudes must be ≥ 0".to_string(),
            ));
        }
        Ok(())
    }

    /// Drive period T = 2π/ω.
    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    /// Instantaneous field F·cos ωt + F_st.
    pub fn field(&self, t: f64) -> f64 {
        self.f * (self.omega * t).cos() + self.f_st
    }
}

/// Position grid and time resolution for the split-operator scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_points: usize,
    pub x_min: f64,
    pub x_max: f64,
    /// Split-operator steps per drive period. Must be a multiple of 4 so the
    /// intra-period snapshots at T/4 and T/2 land on step boundaries.
    pub n_time_steps: usize,
}

impl GridSpec {
    pub fn new(n_points: usize, x_min: f64, x_max: f64, n_time_steps: usize) -> Self {
        GridSpec {
            n_points,
            x_min,
            x_max,
            n_time_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points < 64 || !self.n_points.is_power_of_two() {
            return Err(AtlasError::Config(format!(
                "n_points must be a power of two ≥ 64, got {}",
                self.n_points
            )));
        }
        if self.x_min >= self.x_max {
            return Err(AtlasError::Config(format!(
                "grid bounds must satisfy x_min < x_max, got [{}, {}]",
                self.x_min, self.x_max
            )));
        }
        if self.n_time_steps < 100 || self.n_time_steps % 4 != 0 {
            return Err(AtlasError::Config(format!(
                "n_time_steps must be ≥ 100 and divisible by 4, got {}",
                self.n_time_steps
            )));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_points as f64
    }

    /// Sample positions x_i = x_min + i·dx (periodic grid; x_max excluded).
    pub fn positions(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.n_points)
            .map(|i| self.x_min + i as f64 * dx)
            .collect()
    }

    /// FFT-ordered momenta k_j = 2π·j/L with j wrapped to ±n/2.
    pub fn momenta(&self) -> Vec<f64> {
        let l = self.x_max - self.x_min;
        let n = self.n_points as i64;
        (0..n)
            .map(|j| {
                let j_wrapped = if j < n / 2 { j } else { j - n };
                2.0 * PI * j_wrapped as f64 / l
            })
            .collect()
    }
}

/// Snapshot phase within the drive period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhaseLabel {
    T0,
    Tquarter,
    Thalf,
}

impl PhaseLabel {
    pub const ALL: [PhaseLabel; 3] = [PhaseLabel::T0, PhaseLabel::Tquarter, PhaseLabel::Thalf];

    /// Manifest wire form: `0`, `T4`, `T2`.
    pub fn wire(&self) -> &'static str {
        match self {
            PhaseLabel::T0 => "0",
            PhaseLabel::Tquarter => "T4",
            PhaseLabel::Thalf => "T2",
        }
    }

    pub fn from_wire(s: &str) -> Option<Self> {
        match s {
            "0" => Some(PhaseLabel::T0),
            "T4" => Some(PhaseLabel::Tquarter),
            "T2" => Some(PhaseLabel::Thalf),
            _ => None,
        }
    }

    /// Fraction of the period elapsed at this snapshot.
    pub fn fraction(&self) -> f64 {
        match self {
            PhaseLabel::T0 => 0.0,
            PhaseLabel::Tquarter => 0.25,
            PhaseLabel::Thalf => 0.5,
        }
    }

    /// Drive phase ωt of the snapshot.
    pub fn drive_phase(&self) -> f64 {
        2.0 * PI * self.fraction()
    }
}

/// Eigenstate of the one-period propagator.
#[derive(Debug, Clone)]
pub struct FloquetState {
    pub amplitudes: Vec<Complex64>,
    /// Quasienergy folded into [−ω/2, ω/2).
    pub quasienergy: f64,
    /// Decay rate Γ ≥ 0.
    pub gamma: f64,
    pub phase_label: PhaseLabel,
}

impl FloquetState {
    pub fn norm(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|a| a.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// Fold a quasienergy into the first Brillouin zone [−ω/2, ω/2).
pub fn fold_quasienergy(eps: f64, omega: f64) -> f64 {
    let folded = eps - omega * (eps / omega).round();
    if folded >= omega / 2.0 {
        folded - omega
    } else if folded < -omega / 2.0 {
        folded + omega
    } else {
        folded
    }
}

/// Split-operator engine for one drive period.
///
/// Precomputes the position-space half-step factors for every time step of
/// the period (they are shared by all states propagated on the same grid).
pub struct SplitOperator {
    n: usize,
    steps_per_period: usize,
    /// exp(−i(V + E(t_mid)·x)·dt/2 − W·dt/2), one row per step.
    half_factors: Vec<Vec<Complex64>>,
    /// exp(−i·k²/2·dt), including the 1/n inverse-FFT normalization.
    kinetic: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    scratch: usize,
    unitary: bool,
}

impl SplitOperator {
    /// Engine with `steps_per_period` steps of dt = T/steps_per_period.
    pub fn new(
        potential: &PotentialSpec,
        drive: &DriveParameters,
        grid: &GridSpec,
        steps_per_period: usize,
    ) -> Result<Self> {
        potential.validate()?;
        drive.validate()?;
        grid.validate()?;
        let n = grid.n_points;
        let dt = drive.period() / steps_per_period as f64;
        let xs = grid.positions();
        let cap = potential.cap_profile(grid);
        let v_static: Vec<f64> = xs.iter().map(|&x| potential.value(x)).collect();

        let half_factors: Vec<Vec<Complex64>> = (0..steps_per_period)
            .map(|k| {
                let t_mid = (k as f64 + 0.5) * dt;
                let field = drive.field(t_mid);
                (0..n)
                    .map(|i| {
                        let phase = -(v_static[i] + field * xs[i]) * dt / 2.0;
                        let damp = (-cap[i] * dt / 2.0).exp();
                        Complex64::from_polar(damp, phase)
                    })
                    .collect()
            })
            .collect();

        let kinetic: Vec<Complex64> = grid
            .momenta()
            .iter()
            .map(|&k| Complex64::from_polar(1.0 / n as f64, -k * k / 2.0 * dt))
            .collect();

        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let scratch = fft
            .get_inplace_scratch_len()
            .max(ifft.get_inplace_scratch_len());
        Ok(SplitOperator {
            n,
            steps_per_period,
            half_factors,
            kinetic,
            fft,
            ifft,
            scratch,
            unitary: potential.cap_strength == 0.0,
        })
    }

    pub fn steps_per_period(&self) -> usize {
        self.steps_per_period
    }

    pub fn make_scratch(&self) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); self.scratch]
    }

    /// One Strang step: half potential, full kinetic, half potential.
    /// `k` is taken modulo the period.
    pub fn step(&self, psi: &mut [Complex64], k: usize, scratch: &mut [Complex64]) {
        let factors = &self.half_factors[k % self.steps_per_period];
        for (p, f) in psi.iter_mut().zip(factors) {
            *p *= f;
        }
        self.fft.process_with_scratch(psi, scratch);
        for (p, f) in psi.iter_mut().zip(&self.kinetic) {
            *p *= f;
        }
        self.ifft.process_with_scratch(psi, scratch);
        for (p, f) in psi.iter_mut().zip(factors) {
            *p *= f;
        }
    }

    /// Propagate through steps [k0, k0 + count).
    pub fn propagate(
        &self,
        psi: &mut [Complex64],
        k0: usize,
        count: usize,
        scratch: &mut [Complex64],
    ) -> Result<()> {
        assert_eq!(psi.len(), self.n);
        for k in k0..k0 + count {
            self.step(psi, k, scratch);
        }
        if psi.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(AtlasError::NonFinite {
                context: format!("split-operator propagation over steps {k0}..{}", k0 + count),
            });
        }
        Ok(())
    }

    /// Fraction of ℓ²-mass in the outermost two cells at each edge.
    pub fn edge_mass(&self, psi: &[Complex64]) -> f64 {
        let n = psi.len();
        let cells = [0, 1, n - 2, n - 1];
        cells.iter().map(|&i| psi[i].norm_sqr()).sum()
    }

    pub fn is_unitary(&self) -> bool {
        self.unitary
    }
}

/// Dense one-period propagator U(T), built by propagating every position
/// basis vector through one drive period.
///
/// With `cap_strength = 0` the result is unitary to within the quoted
/// tolerance of the scheme; with an absorber all eigenvalue moduli are ≤ 1.
pub fn one_period_propagator(
    potential: &PotentialSpec,
    drive: &DriveParameters,
    grid: &GridSpec,
) -> Result<Array2<Complex64>> {
    if grid.n_time_steps % 2 != 0 {
        return Err(AtlasError::Config(
            "n_time_steps must be even".to_string(),
        ));
    }
    let engine = SplitOperator::new(potential, drive, grid, grid.n_time_steps)?;
    let n = grid.n_points;

    let columns: Result<Vec<Vec<Complex64>>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut psi = vec![Complex64::new(0.0, 0.0); n];
            psi[j] = Complex64::new(1.0, 0.0);
            let mut scratch = engine.make_scratch();
            engine.propagate(&mut psi, 0, grid.n_time_steps, &mut scratch)?;
            Ok(psi)
        })
        .collect();
    let columns = columns?;

    let mut u = Array2::zeros((n, n));
    for (j, col) in columns.iter().enumerate() {
        for i in 0..n {
            u[(i, j)] = col[i];
        }
    }
    Ok(u)
}

/// Diagonalize a one-period propagator into Floquet states.
///
/// Quasienergies are (−arg λ)/T folded into [−ω/2, ω/2); decay rates are
/// Γ = −(2/T)·ln|λ|, clamped to 0 for |λ| within 1e-8 above 1. States come
/// back sorted by Γ ascending (quasienergy breaks ties), truncated to
/// `n_keep`, and renormalized.
pub fn floquet_states(
    u: &Array2<Complex64>,
    drive: &DriveParameters,
    n_keep: usize,
) -> Result<Vec<FloquetState>> {
    let n = u.nrows();
    assert_eq!(u.ncols(), n, "propagator must be square");
    if n_keep > n {
        return Err(AtlasError::Config(format!(
            "n_keep = {n_keep} exceeds matrix dimension {n}"
        )));
    }
    let period = drive.period();
    let slice = u.as_slice().ok_or_else(|| {
        AtlasError::Eigensolver("propagator matrix is not contiguous".to_string())
    })?;
    let (values, vectors) = linalg::eig_general(n, slice)?;

    let mut states: Vec<FloquetState> = Vec::with_capacity(n);
    for (j, lambda) in values.iter().enumerate() {
        let modulus = lambda.norm();
        if modulus > 1.0 + 1e-6 {
            return Err(AtlasError::AmplifyingPropagator { modulus });
        }
        let gamma = if modulus >= 1.0 {
            0.0
        } else {
            -2.0 / period * modulus.ln()
        };
        let quasienergy = fold_quasienergy(-lambda.arg() / period, drive.omega);
        let mut amplitudes = vectors[j * n..(j + 1) * n].to_vec();
        renormalize(&mut amplitudes);
        states.push(FloquetState {
            amplitudes,
            quasienergy,
            gamma,
            phase_label: PhaseLabel::T0,
        });
    }
    states.sort_by(|a, b| {
        a.gamma
            .partial_cmp(&b.gamma)
            .unwrap()
            .then(a.quasienergy.partial_cmp(&b.quasienergy).unwrap())
    });
    states.truncate(n_keep);
    Ok(states)
}

/// Unit 2-norm with the largest-magnitude component rotated real-positive,
/// so repeated diagonalizations agree on the arbitrary global phase.
fn renormalize(amplitudes: &mut [Complex64]) {
    let norm = amplitudes
        .iter()
        .map(|a| a.norm_sqr())
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        return;
    }
    let pivot = amplitudes
        .iter()
        .cloned()
        .max_by(|a, b| a.norm_sqr().partial_cmp(&b.norm_sqr()).unwrap())
        .unwrap();
    let phase = pivot / pivot.norm();
    let scale = phase.conj() / norm;
    for a in amplitudes.iter_mut() {
        *a *= scale;
    }
}

/// Field-free energy expectation ⟨ψ|p²/2 + V|ψ⟩ of a grid state.
pub fn field_free_energy(
    state: &FloquetState,
    potential: &PotentialSpec,
    grid: &GridSpec,
) -> f64 {
    let n = grid.n_points;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf = state.amplitudes.clone();
    fft.process(&mut buf);
    let norm_sqr: f64 = state.amplitudes.iter().map(|a| a.norm_sqr()).sum();
    if norm_sqr == 0.0 {
        return 0.0;
    }
    let kinetic: f64 = grid
        .momenta()
        .iter()
        .zip(&buf)
        .map(|(&k, c)| 0.5 * k * k * c.norm_sqr())
        .sum::<f64>()
        / n as f64;
    let potential_energy: f64 = grid
        .positions()
        .iter()
        .zip(&state.amplitudes)
        .map(|(&x, a)| potential.value(x) * a.norm_sqr())
        .sum();
    (kinetic + potential_energy) / norm_sqr
}

/// Keep the `n_keep` lowest-Γ states, breaking Γ ties (everything confined
/// by the absorber decays at numerically indistinguishable rates) by
/// field-free energy so the retained set is the physical bottom of the
/// spectrum. Γ values are compared in buckets of the 1e-8 clamp tolerance.
pub fn select_states(
    mut states: Vec<FloquetState>,
    potential: &PotentialSpec,
    grid: &GridSpec,
    n_keep: usize,
) -> Vec<FloquetState> {
    let mut keyed: Vec<(i64, f64, FloquetState)> = states
        .drain(..)
        .map(|s| {
            let bucket = (s.gamma / 1e-8).round() as i64;
            let energy = field_free_energy(&s, potential, grid);
            (bucket, energy, s)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.partial_cmp(&b.1).unwrap()));
    keyed.into_iter().take(n_keep).map(|(_, _, s)| s).collect()
}

/// Propagate a T0 state to a later snapshot within the period.
///
/// Quasienergy and Γ are carried over unchanged; only the amplitudes and
/// the phase label are updated.
pub fn evolve_to_phase(
    state: &FloquetState,
    potential: &PotentialSpec,
    drive: &DriveParameters,
    grid: &GridSpec,
    target: PhaseLabel,
) -> Result<FloquetState> {
    if state.phase_label != PhaseLabel::T0 {
        return Err(AtlasError::Config(
            "evolve_to_phase expects a state at phase T0".to_string(),
        ));
    }
    let mut amplitudes = state.amplitudes.clone();
    let steps = (grid.n_time_steps as f64 * target.fraction()).round() as usize;
    if steps > 0 {
        let engine = SplitOperator::new(potential, drive, grid, grid.n_time_steps)?;
        let mut scratch = engine.make_scratch();
        engine.propagate(&mut amplitudes, 0, steps, &mut scratch)?;
        if engine.is_unitary() {
            let mass = engine.edge_mass(&amplitudes);
            if mass > 1e-6 {
                return Err(AtlasError::EdgeMass { mass });
            }
        }
    }
    Ok(FloquetState {
        amplitudes,
        quasienergy: state.quasienergy,
        gamma: state.gamma,
        phase_label: target,
    })
}

/// Space–time density carpet |ψ(x, t)|² over one period.
///
/// Row k holds the physical density at t_k = k·T/n_time_samples, so each row
/// integrates (×dx) to the squared state norm. Each of the n_time_samples
/// segments is integrated with enough sub-steps to keep the step at or below
/// the grid's nominal dt.
pub fn configuration_density(
    state: &FloquetState,
    potential: &PotentialSpec,
    drive: &DriveParameters,
    grid: &GridSpec,
    n_time_samples: usize,
) -> Result<Array2<f64>> {
    if state.phase_label != PhaseLabel::T0 {
        return Err(AtlasError::Config(
            "configuration_density expects a state at phase T0".to_string(),
        ));
    }
    let n_sub = grid.n_time_steps.div_ceil(n_time_samples);
    let steps_per_period = n_sub * n_time_samples;
    let engine = SplitOperator::new(potential, drive, grid, steps_per_period)?;
    let mut scratch = engine.make_scratch();
    let mut psi = state.amplitudes.clone();
    let dx = grid.dx();

    let mut density = Array2::zeros((n_time_samples, grid.n_points));
    for row in 0..n_time_samples {
        for (i, a) in psi.iter().enumerate() {
            density[(row, i)] = a.norm_sqr() / dx;
        }
        engine.propagate(&mut psi, row * n_sub, n_sub, &mut scratch)?;
    }
    if engine.is_unitary() {
        let mass = engine.edge_mass(&psi);
        if mass > 1e-6 {
            return Err(AtlasError::EdgeMass { mass });
        }
    }
    Ok(density)
}
