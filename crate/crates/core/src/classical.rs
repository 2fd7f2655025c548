//! Classical dynamics of the driven system: stroboscopic Poincaré sections
//! and resonance-island location.
//!
//! Hamilton's equations ẋ = p, ṗ = −V′(x) − (F·cos ωt + F_st) are integrated
//! with a fourth-order Yoshida composition of kick–drift steps; sections are
//! sampled once per period at a fixed drive phase.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::floquet::{DriveParameters, PotentialSpec};

/// Axis-aligned phase-space rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseWindow {
    pub x_min: f64,
    pub x_max: f64,
    pub p_min: f64,
    pub p_max: f64,
}

impl PhaseWindow {
    pub fn new(x_min: f64, x_max: f64, p_min: f64, p_max: f64) -> Self {
        PhaseWindow {
            x_min,
            x_max,
            p_min,
            p_max,
        }
    }

    /// Symmetric window |x| ≤ r, |p| ≤ r.
    pub fn symmetric(r: f64) -> Self {
        PhaseWindow::new(-r, r, -r, r)
    }

    pub fn contains(&self, x: f64, p: f64) -> bool {
        x >= self.x_min && x <= self.x_max && p >= self.p_min && p <= self.p_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.p_max - self.p_min
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.p_min + self.p_max),
        )
    }

    /// Grow the window by `factor` of its size on every side.
    pub fn padded(&self, factor: f64) -> Self {
        let dx = self.width() * factor;
        let dp = self.height() * factor;
        PhaseWindow::new(
            self.x_min - dx,
            self.x_max + dx,
            self.p_min - dp,
            self.p_max + dp,
        )
    }

    /// Grow the window by absolute margins on every side. Used to allow for
    /// the coherent-state kernel width when a Husimi field is compared
    /// against a classical region.
    pub fn expanded(&self, margin_x: f64, margin_p: f64) -> Self {
        PhaseWindow::new(
            self.x_min - margin_x,
            self.x_max + margin_x,
            self.p_min - margin_p,
            self.p_max + margin_p,
        )
    }

    /// Smallest window containing all points.
    pub fn bounding(points: &[(f64, f64)]) -> Option<Self> {
        let first = points.first()?;
        let mut w = PhaseWindow::new(first.0, first.0, first.1, first.1);
        for &(x, p) in points {
            w.x_min = w.x_min.min(x);
            w.x_max = w.x_max.max(x);
            w.p_min = w.p_min.min(p);
            w.p_max = w.p_max.max(p);
        }
        Some(w)
    }
}

/// Stroboscopic record of one initial condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrbitTrace {
    pub initial: (f64, f64),
    /// Section points, one per completed period while inside the window.
    pub points: Vec<(f64, f64)>,
    /// True if the trajectory left the window and was truncated.
    pub escaped: bool,
}

impl OrbitTrace {
    /// Largest extent of the stroboscopic cloud (bounding-box diagonal).
    pub fn diameter(&self) -> f64 {
        PhaseWindow::bounding(&self.points)
            .map(|w| w.diagonal())
            .unwrap_or(0.0)
    }

    pub fn centroid(&self) -> (f64, f64) {
        let n = self.points.len().max(1) as f64;
        let (sx, sp) = self
            .points
            .iter()
            .fold((0.0, 0.0), |(ax, ap), &(x, p)| (ax + x, ap + p));
        (sx / n, sp / n)
    }

    /// Sign flips in the sequence of origin-angle increments.
    ///
    /// Orbits trapped on a resonance island librate: their angle about the
    /// origin oscillates, flipping the increment sign twice per libration.
    /// Circulating orbits march monotonically and never flip.
    pub fn angle_sign_changes(&self) -> usize {
        let angles: Vec<f64> = self.points.iter().map(|&(x, p)| p.atan2(x)).collect();
        let mut flips = 0;
        let mut last_sign = 0i8;
        for pair in angles.windows(2) {
            let mut d = pair[1] - pair[0];
            if d > std::f64::consts::PI {
                d -= 2.0 * std::f64::consts::PI;
            } else if d < -std::f64::consts::PI {
                d += 2.0 * std::f64::consts::PI;
            }
            if d.abs() < 1e-12 {
                continue;
            }
            let sign = if d > 0.0 { 1 } else { -1 };
            if last_sign != 0 && sign != last_sign {
                flips += 1;
            }
            last_sign = sign;
        }
        flips
    }
}

/// Poincaré section at a fixed drive phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoincareSection {
    /// Drive phase ωt ∈ [0, 2π) of the stroboscopic sampling.
    pub drive_phase: f64,
    pub window: PhaseWindow,
    pub orbits: Vec<OrbitTrace>,
}

impl PoincareSection {
    /// All recorded points across orbits.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.orbits.iter().flat_map(|o| o.points.iter().copied())
    }
}

// Yoshida 4th-order coefficients (triple-jump composition of leapfrog).
const W1: f64 = 1.3512071919596578; // 1/(2 − 2^{1/3})
const W0: f64 = -1.7024143839193153; // −2^{1/3}/(2 − 2^{1/3})
const DRIFT: [f64; 4] = [W1 / 2.0, (W0 + W1) / 2.0, (W0 + W1) / 2.0, W1 / 2.0];
const KICK: [f64; 3] = [W1, W0, W1];

/// One fourth-order symplectic step of size dt starting at time t.
/// The drive is evaluated at the intermediate times reached by the drifts.
pub fn yoshida4_step(
    potential: &PotentialSpec,
    drive: &DriveParameters,
    x: &mut f64,
    p: &mut f64,
    t: f64,
    dt: f64,
) {
    let mut tau = t;
    for stage in 0..3 {
        *x += DRIFT[stage] * dt * *p;
        tau += DRIFT[stage] * dt;
        *p -= KICK[stage] * dt * (potential.gradient(*x) + drive.field(tau));
    }
    *x += DRIFT[3] * dt * *p;
}

/// Stroboscopic Poincaré section of the driven system.
///
/// Every initial condition is integrated for `n_periods` drive periods with
/// step T/`n_time_steps`, starting at the requested drive phase; the state is
/// recorded once per period. Orbits leaving the window are truncated and
/// flagged rather than treated as errors.
pub fn classical_poincare_section(
    potential: &PotentialSpec,
    drive: &DriveParameters,
    initial_conditions: &[(f64, f64)],
    n_periods: usize,
    n_time_steps: usize,
    drive_phase: f64,
    window: PhaseWindow,
) -> PoincareSection {
    assert!(n_periods >= 1, "need at least one period");
    let period = drive.period();
    let dt = period / n_time_steps as f64;
    let t0 = drive_phase.rem_euclid(2.0 * std::f64::consts::PI) / drive.omega;

    let orbits: Vec<OrbitTrace> = initial_conditions
        .par_iter()
        .map(|&(x0, p0)| {
            let mut x = x0;
            let mut p = p0;
            let mut points = Vec::with_capacity(n_periods + 1);
            let mut escaped = false;
            points.push((x, p));
            'outer: for period_idx in 0..n_periods {
                for step in 0..n_time_steps {
                    let t = t0 + (period_idx * n_time_steps + step) as f64 * dt;
                    yoshida4_step(potential, drive, &mut x, &mut p, t, dt);
                    if !x.is_finite() || !p.is_finite() || !window.contains(x, p) {
                        escaped = true;
                        break 'outer;
                    }
                }
                points.push((x, p));
            }
            OrbitTrace {
                initial: (x0, p0),
                points,
                escaped,
            }
        })
        .collect();

    PoincareSection {
        drive_phase: drive_phase.rem_euclid(2.0 * std::f64::consts::PI),
        window,
        orbits,
    }
}

/// Resonance island located by a classical frequency scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IslandScan {
    /// Frequency with the most robust off-center island.
    pub omega_res: f64,
    /// Seed that landed on the island at drive phase 0.
    pub seed: (f64, f64),
    /// Number of seeds whose orbits were island-like at ω_res.
    pub islanded_seeds: usize,
    /// Bounding windows of the island orbit at the requested drive phases,
    /// padded by the configured factor.
    pub windows: Vec<(f64, PhaseWindow)>,
    /// Classical window used for the scan.
    pub scan_window: PhaseWindow,
}

/// Parameters of the island search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IslandSearch {
    /// Candidate drive frequencies.
    pub omegas: Vec<f64>,
    /// Drive amplitude used for the scan.
    pub f_probe: f64,
    /// Static field used for the scan.
    pub f_st_probe: f64,
    /// Classical window; also bounds the seed grid.
    pub window: PhaseWindow,
    /// Seeds per axis (seeds are laid on a grid inside the window).
    pub seeds_per_axis: usize,
    pub n_periods: usize,
    pub n_time_steps: usize,
    /// Orbits centred closer to the origin than this fraction of the window
    /// diagonal are the trivial forced equilibrium, not a resonance island.
    pub exclude_center_fraction: f64,
    /// Stroboscopic diameter below this fraction of the window diagonal
    /// qualifies as island-like.
    pub island_diameter_fraction: f64,
    /// Padding applied to the island bounding boxes.
    pub window_padding: f64,
}

impl Default for IslandSearch {
    fn default() -> Self {
        IslandSearch {
            omegas: (0..12).map(|i| 1.025 + 0.025 * i as f64).collect(),
            f_probe: 0.02,
            f_st_probe: 0.0,
            window: PhaseWindow::symmetric(6.0),
            seeds_per_axis: 13,
            // Libration around the island is slow (hundreds of drive
            // periods); the sign-change test needs a few full librations.
            n_periods: 600,
            n_time_steps: 256,
            exclude_center_fraction: 0.08,
            island_diameter_fraction: 0.2,
            window_padding: 0.2,
        }
    }
}

impl IslandSearch {
    fn seeds(&self) -> Vec<(f64, f64)> {
        let n = self.seeds_per_axis;
        let mut seeds = Vec::with_capacity(n * n + 4 * n);
        for i in 0..n {
            for j in 0..n {
                let fx = (i as f64 + 0.5) / n as f64;
                let fp = (j as f64 + 0.5) / n as f64;
                seeds.push((
                    self.window.x_min + fx * self.window.width(),
                    self.window.p_min + fp * self.window.height(),
                ));
            }
        }
        // Fine transect along p = 0: primary islands of an x-coupled drive
        // cross this line at phase 0.
        let m = 4 * n;
        for i in 0..m {
            let fx = (i as f64 + 0.5) / m as f64;
            seeds.push((self.window.x_min + fx * self.window.width(), 0.0));
        }
        seeds
    }

    fn is_islanded(&self, orbit: &OrbitTrace) -> bool {
        if orbit.escaped || orbit.points.len() < self.n_periods {
            return false;
        }
        let diag = self.window.diagonal();
        let (cx, cp) = orbit.centroid();
        cx.hypot(cp) > self.exclude_center_fraction * diag
            && orbit.diameter() < self.island_diameter_fraction * diag
            && orbit.angle_sign_changes() >= 4
    }

    fn island_orbits<'a>(&self, section: &'a PoincareSection) -> Vec<&'a OrbitTrace> {
        section
            .orbits
            .iter()
            .filter(|o| self.is_islanded(o))
            .collect()
    }
}

/// Scan drive frequencies for the 1:1 resonance island and report the best
/// frequency together with per-phase island windows.
///
/// Returns None when no candidate frequency produces an island-like orbit
/// away from the forced equilibrium.
pub fn locate_island(
    potential: &PotentialSpec,
    search: &IslandSearch,
    phases: &[f64],
) -> Option<IslandScan> {
    let seeds = search.seeds();
    // (refined member count, omega, reference seed, members)
    let mut best: Option<(usize, f64, (f64, f64), Vec<(f64, f64)>)> = None;

    for &omega in &search.omegas {
        let drive = DriveParameters::new(search.f_probe, search.f_st_probe, omega);
        let section = classical_poincare_section(
            potential,
            &drive,
            &seeds,
            search.n_periods,
            search.n_time_steps,
            0.0,
            search.window,
        );
        let islands = search.island_orbits(&section);
        if islands.is_empty() {
            continue;
        }
        // Representative seed: the tightest orbit.
        let tightest = islands
            .iter()
            .min_by(|a, b| a.diameter().partial_cmp(&b.diameter()).unwrap())
            .unwrap();
        let members = refine_island_members(potential, &drive, search, tightest.initial);
        let count = members.len();
        let better = match &best {
            None => true,
            Some((best_count, _, _, _)) => count > *best_count,
        };
        if better {
            best = Some((count, omega, tightest.initial, members));
        }
    }

    let (islanded_seeds, omega_res, seed, members) = best?;
    let drive = DriveParameters::new(search.f_probe, search.f_st_probe, omega_res);
    let island_members = if members.is_empty() {
        vec![seed]
    } else {
        members
    };

    let windows = phases
        .iter()
        .map(|&phase| {
            // The island moves with the drive phase; bound the union of the
            // member orbits' stroboscopic clouds at each phase.
            let section = classical_poincare_section(
                potential,
                &drive,
                &island_members,
                search.n_periods,
                search.n_time_steps,
                phase,
                search.window.padded(1.0),
            );
            let pts: Vec<(f64, f64)> = section.points().collect();
            let bbox = PhaseWindow::bounding(&pts)
                .unwrap_or(search.window)
                .padded(search.window_padding);
            (phase, bbox)
        })
        .collect();

    Some(IslandScan {
        omega_res,
        seed,
        islanded_seeds,
        windows,
        scan_window: search.window,
    })
}

/// Seed a dense local grid around the reference orbit's centroid and keep
/// the seeds whose orbits stay trapped on the same island. The count of
/// surviving seeds is a proxy for the island area.
fn refine_island_members(
    potential: &PotentialSpec,
    drive: &DriveParameters,
    search: &IslandSearch,
    seed: (f64, f64),
) -> Vec<(f64, f64)> {
    let probe = classical_poincare_section(
        potential,
        drive,
        &[seed],
        search.n_periods,
        search.n_time_steps,
        0.0,
        search.window,
    );
    let (cx, cp) = probe.orbits[0].centroid();
    let local_extent = 0.2 * search.window.diagonal();
    let n_local = 11;
    let mut local_seeds = Vec::with_capacity(n_local * n_local);
    for i in 0..n_local {
        for j in 0..n_local {
            let fx = (i as f64 + 0.5) / n_local as f64 - 0.5;
            let fp = (j as f64 + 0.5) / n_local as f64 - 0.5;
            local_seeds.push((cx + fx * local_extent, cp + fp * local_extent));
        }
    }
    let local = classical_poincare_section(
        potential,
        drive,
        &local_seeds,
        search.n_periods,
        search.n_time_steps,
        0.0,
        search.window,
    );
    local
        .orbits
        .iter()
        .filter(|o| {
            search.is_islanded(o) && {
                let (ox, op) = o.centroid();
                (ox - cx).hypot(op - cp) < 0.5 * local_extent
            }
        })
        .map(|o| o.initial)
        .collect()
}
