//! Sweep planning, dataset generation, and the manifest format.
//!
//! One manifest row per image. The CSV header is fixed:
//! `id,space,t_phase,L_min,L_max,k_min,k_max,omega,F,F_st,Re_E,Im_E,image_path,config_hash`
//! with reals in scientific notation (lossless round-trip) and image paths
//! relative to the manifest location.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classical::PhaseWindow;
use crate::error::{AtlasError, Result};
use crate::floquet::{
    evolve_to_phase, floquet_states, one_period_propagator, select_states, DriveParameters,
    GridSpec, PhaseLabel, PotentialSpec,
};
use crate::husimi::{husimi_field, HusimiGrid};
use crate::render::{render_state, Normalize, Space, IMAGE_SIZE};

/// Identity of one state snapshot, mirroring the α-tuple. L/k bounds are
/// inert metadata for the 1D surrogate (always 0 here).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterKey {
    pub id: String,
    pub l_min: i32,
    pub l_max: i32,
    pub k_min: i32,
    pub k_max: i32,
    pub omega: f64,
    pub f: f64,
    pub f_st: f64,
    /// Quasienergy.
    pub re_e: f64,
    /// −Γ/2 ≤ 0.
    pub im_e: f64,
    pub t_phase: PhaseLabel,
    pub space: Space,
}

/// One manifest row: key plus file linkage.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub key: ParameterKey,
    pub image_path: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn ids(&self) -> HashSet<&str> {
        self.rows.iter().map(|r| r.key.id.as_str()).collect()
    }

    /// Check id uniqueness.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for row in &self.rows {
            if !seen.insert(row.key.id.as_str()) {
                return Err(AtlasError::Dataset(format!(
                    "duplicate manifest id {}",
                    row.key.id
                )));
            }
        }
        Ok(())
    }

    /// Check that every referenced image exists and decodes to 3×150×150.
    pub fn verify_images(&self, manifest_dir: &Path) -> Result<()> {
        for row in &self.rows {
            let path = manifest_dir.join(&row.image_path);
            let img = image::open(&path)
                .map_err(|e| {
                    AtlasError::Dataset(format!("row {}: {} unreadable: {e}", row.key.id, path.display()))
                })?
                .to_rgb8();
            if img.dimensions() != (IMAGE_SIZE, IMAGE_SIZE) {
                return Err(AtlasError::Dataset(format!(
                    "row {}: image is {:?}, expected {IMAGE_SIZE}×{IMAGE_SIZE}",
                    row.key.id,
                    img.dimensions()
                )));
            }
        }
        Ok(())
    }
}

pub const MANIFEST_HEADER: &str =
    "id,space,t_phase,L_min,L_max,k_min,k_max,omega,F,F_st,Re_E,Im_E,image_path,config_hash";

/// Lossless scientific-notation rendering of a real.
fn fmt_real(v: f64) -> String {
    format!("{v:e}")
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(manifest.rows.len() * 120 + 120);
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    for row in &manifest.rows {
        let k = &row.key;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            k.id,
            k.space.wire(),
            k.t_phase.wire(),
            k.l_min,
            k.l_max,
            k.k_min,
            k.k_max,
            fmt_real(k.omega),
            fmt_real(k.f),
            fmt_real(k.f_st),
            fmt_real(k.re_e),
            fmt_real(k.im_e),
            row.image_path,
            row.config_hash
        ));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == MANIFEST_HEADER => {}
        Some((_, header)) => {
            return Err(AtlasError::ManifestParse {
                line: 1,
                reason: format!("unexpected header: {header}"),
            })
        }
        None => {
            return Err(AtlasError::ManifestParse {
                line: 1,
                reason: "empty file".to_string(),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 14 {
            return Err(AtlasError::ManifestParse {
                line: lineno,
                reason: format!("expected 14 fields, got {}", parts.len()),
            });
        }
        let parse_real = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| AtlasError::ManifestParse {
                line: lineno,
                reason: format!("bad {what}: {s}"),
            })
        };
        let parse_int = |s: &str, what: &str| -> Result<i32> {
            s.parse::<i32>().map_err(|_| AtlasError::ManifestParse {
                line: lineno,
                reason: format!("bad {what}: {s}"),
            })
        };
        let space = Space::from_wire(parts[1]).ok_or_else(|| AtlasError::ManifestParse {
            line: lineno,
            reason: format!("bad space: {}", parts[1]),
        })?;
        let t_phase = PhaseLabel::from_wire(parts[2]).ok_or_else(|| AtlasError::ManifestParse {
            line: lineno,
            reason: format!("bad t_phase: {}", parts[2]),
        })?;
        let key = ParameterKey {
            id: parts[0].to_string(),
            space,
            t_phase,
            l_min: parse_int(parts[3], "L_min")?,
            l_max: parse_int(parts[4], "L_max")?,
            k_min: parse_int(parts[5], "k_min")?,
            k_max: parse_int(parts[6], "k_max")?,
            omega: parse_real(parts[7], "omega")?,
            f: parse_real(parts[8], "F")?,
            f_st: parse_real(parts[9], "F_st")?,
            re_e: parse_real(parts[10], "Re_E")?,
            im_e: parse_real(parts[11], "Im_E")?,
        };
        if key.im_e > 0.0 {
            return Err(AtlasError::ManifestParse {
                line: lineno,
                reason: format!("Im_E must be ≤ 0, got {}", key.im_e),
            });
        }
        rows.push(ManifestRow {
            key,
            image_path: parts[12].to_string(),
            config_hash: parts[13].to_string(),
        });
    }
    let manifest = DatasetManifest { rows };
    manifest.validate()?;
    Ok(manifest)
}

/// Explicit enumeration of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub omega_values: Vec<f64>,
    pub f_values: Vec<f64>,
    pub f_st_values: Vec<f64>,
    pub n_states_per_point: usize,
    pub phases: Vec<PhaseLabel>,
    pub spaces: Vec<Space>,
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.omega_values.is_empty()
            || self.f_values.is_empty()
            || self.f_st_values.is_empty()
            || self.phases.is_empty()
            || self.spaces.is_empty()
            || self.n_states_per_point == 0
        {
            return Err(AtlasError::Config("sweep grid is empty".to_string()));
        }
        Ok(())
    }

    /// All (ω, F, F_st) grid points in enumeration order.
    pub fn grid_points(&self) -> Vec<(f64, f64, f64)> {
        let mut points = Vec::new();
        for &omega in &self.omega_values {
            for &f in &self.f_values {
                for &f_st in &self.f_st_values {
                    points.push((omega, f, f_st));
                }
            }
        }
        points
    }

    /// Total image count of the plan.
    pub fn total(&self) -> usize {
        self.omega_values.len()
            * self.f_values.len()
            * self.f_st_values.len()
            * self.n_states_per_point
            * self.phases.len()
            * self.spaces.len()
    }
}

/// Build a plan from explicit value lists, reporting the total up front.
pub fn plan_sweep(
    omega_values: Vec<f64>,
    f_values: Vec<f64>,
    f_st_values: Vec<f64>,
    n_states_per_point: usize,
    phases: Vec<PhaseLabel>,
    spaces: Vec<Space>,
) -> Result<SweepPlan> {
    let plan = SweepPlan {
        omega_values,
        f_values,
        f_st_values,
        n_states_per_point,
        phases,
        spaces,
    };
    plan.validate()?;
    Ok(plan)
}

/// Everything generation needs besides the plan.
#[derive(Debug, Clone)]
pub struct GenerationContext {
    pub potential: PotentialSpec,
    pub grid: GridSpec,
    pub husimi: HusimiGrid,
    /// Kernel-expanded island windows per snapshot phase, when a resonance
    /// island was located. Used to record per-image island masses.
    pub island_windows: Option<Vec<(PhaseLabel, PhaseWindow)>>,
    pub config_hash: String,
}

/// Per-image island-mass record (PS images only).
#[derive(Debug, Clone, PartialEq)]
pub struct MassRow {
    pub id: String,
    pub island_mass: f64,
}

pub fn write_masses(rows: &[MassRow], path: &Path) -> Result<()> {
    let mut out = String::from("id,island_mass\n");
    for r in rows {
        out.push_str(&format!("{},{}\n", r.id, fmt_real(r.island_mass)));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_masses(path: &Path) -> Result<Vec<MassRow>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line != "id,island_mass" {
                return Err(AtlasError::ManifestParse {
                    line: 1,
                    reason: format!("unexpected masses header: {line}"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let (id, mass) = line.split_once(',').ok_or(AtlasError::ManifestParse {
            line: idx + 1,
            reason: "expected two fields".to_string(),
        })?;
        rows.push(MassRow {
            id: id.to_string(),
            island_mass: mass.parse().map_err(|_| AtlasError::ManifestParse {
                line: idx + 1,
                reason: format!("bad mass: {mass}"),
            })?,
        });
    }
    Ok(rows)
}

struct PointOutput {
    rows: Vec<ManifestRow>,
    masses: Vec<MassRow>,
    failures: Vec<(String, String)>,
}

/// Generate (or resume) the image dataset for a sweep plan.
///
/// Work is parallel over grid points; rows are merged in plan order so the
/// manifest is identical regardless of thread count. Existing valid rows are
/// kept and their images are not regenerated. Per-point failures are
/// recorded in `failures.csv` and do not abort the run; failed rows never
/// enter the manifest.
pub fn generate_dataset(
    plan: &SweepPlan,
    ctx: &GenerationContext,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    plan.validate()?;
    ctx.potential.validate()?;
    ctx.grid.validate()?;
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir)?;

    let manifest_path = out_dir.join("manifest.csv");
    let masses_path = out_dir.join("masses.csv");
    let existing = if manifest_path.exists() {
        read_manifest(&manifest_path)?
    } else {
        DatasetManifest::default()
    };
    let existing_masses = if masses_path.exists() {
        read_masses(&masses_path)?
    } else {
        Vec::new()
    };

    let points = plan.grid_points();
    let outputs: Vec<PointOutput> = points
        .par_iter()
        .enumerate()
        .map(|(gi, &(omega, f, f_st))| {
            generate_point(plan, ctx, out_dir, &existing, &existing_masses, gi, omega, f, f_st)
        })
        .collect();

    let mut manifest = DatasetManifest::default();
    let mut masses = Vec::new();
    let mut failures = Vec::new();
    for out in outputs {
        manifest.rows.extend(out.rows);
        masses.extend(out.masses);
        failures.extend(out.failures);
    }
    manifest.validate()?;
    write_manifest(&manifest, &manifest_path)?;
    write_masses(&masses, &masses_path)?;
    if !failures.is_empty() {
        let mut text = String::from("id,reason\n");
        for (id, reason) in &failures {
            text.push_str(&format!("{},{}\n", id, reason.replace(',', ";")));
        }
        fs::write(out_dir.join("failures.csv"), text)?;
    }
    Ok(manifest)
}

#[allow(clippy::too_many_arguments)]
fn generate_point(
    plan: &SweepPlan,
    ctx: &GenerationContext,
    out_dir: &Path,
    existing: &DatasetManifest,
    existing_masses: &[MassRow],
    gi: usize,
    omega: f64,
    f: f64,
    f_st: f64,
) -> PointOutput {
    let mut rows = Vec::new();
    let mut masses = Vec::new();
    let mut failures = Vec::new();

    // Resume check: a point is complete when every planned id already has a
    // row and an image file.
    let planned_ids: Vec<String> = (0..plan.n_states_per_point)
        .flat_map(|si| {
            plan.phases.iter().flat_map(move |phase| {
                plan.spaces
                    .iter()
                    .map(move |space| row_id(gi, si, *phase, *space))
            })
        })
        .collect();
    let existing_by_id: std::collections::HashMap<&str, &ManifestRow> = existing
        .rows
        .iter()
        .map(|r| (r.key.id.as_str(), r))
        .collect();
    let complete = planned_ids.iter().all(|id| {
        existing_by_id
            .get(id.as_str())
            .map(|r| out_dir.join(&r.image_path).exists())
            .unwrap_or(false)
    });
    if complete {
        let mass_by_id: std::collections::HashMap<&str, f64> = existing_masses
            .iter()
            .map(|m| (m.id.as_str(), m.island_mass))
            .collect();
        for id in &planned_ids {
            let row = existing_by_id[id.as_str()];
            rows.push(row.clone());
            if let Some(&m) = mass_by_id.get(id.as_str()) {
                masses.push(MassRow {
                    id: id.clone(),
                    island_mass: m,
                });
            }
        }
        return PointOutput {
            rows,
            masses,
            failures,
        };
    }

    let drive = DriveParameters::new(f, f_st, omega);
    let states = one_period_propagator(&ctx.potential, &drive, &ctx.grid)
        .and_then(|u| floquet_states(&u, &drive, ctx.grid.n_points))
        .map(|all| select_states(all, &ctx.potential, &ctx.grid, plan.n_states_per_point));
    let states = match states {
        Ok(s) => s,
        Err(e) => {
            for id in planned_ids {
                failures.push((id, e.to_string()));
            }
            return PointOutput {
                rows,
                masses,
                failures,
            };
        }
    };

    for (si, state) in states.iter().enumerate() {
        for &phase in &plan.phases {
            let evolved = match evolve_to_phase(state, &ctx.potential, &drive, &ctx.grid, phase) {
                Ok(s) => s,
                Err(e) => {
                    for &space in &plan.spaces {
                        failures.push((row_id(gi, si, phase, space), e.to_string()));
                    }
                    continue;
                }
            };
            for &space in &plan.spaces {
                let id = row_id(gi, si, phase, space);
                let rel_path = format!("images/{id}.png");
                let render = render_state(
                    &evolved,
                    space,
                    &ctx.potential,
                    &drive,
                    &ctx.grid,
                    &ctx.husimi,
                    Normalize::PerImageMax,
                );
                match render {
                    Ok(img) => {
                        if let Err(e) = img.save(out_dir.join(&rel_path)) {
                            failures.push((id, e.to_string()));
                            continue;
                        }
                        if space == Space::PS {
                            if let Some(windows) = &ctx.island_windows {
                                if let Some((_, w)) =
                                    windows.iter().find(|(p, _)| *p == phase)
                                {
                                    // Mass fractions are cheap here because the
                                    // field is recomputed once per PS image.
                                    if let Ok(field) =
                                        husimi_field(&evolved, &ctx.grid, &ctx.husimi)
                                    {
                                        masses.push(MassRow {
                                            id: id.clone(),
                                            island_mass: field.mass_fraction_in(w),
                                        });
                                    }
                                }
                            }
                        }
                        rows.push(ManifestRow {
                            key: ParameterKey {
                                id,
                                l_min: 0,
                                l_max: 0,
                                k_min: 0,
                                k_max: 0,
                                omega,
                                f,
                                f_st,
                                re_e: evolved.quasienergy,
                                im_e: -evolved.gamma / 2.0,
                                t_phase: phase,
                                space,
                            },
                            image_path: rel_path,
                            config_hash: ctx.config_hash.clone(),
                        });
                    }
                    Err(e) => failures.push((id, e.to_string())),
                }
            }
        }
    }

    PointOutput {
        rows,
        masses,
        failures,
    }
}

fn row_id(gi: usize, si: usize, phase: PhaseLabel, space: Space) -> String {
    format!("g{gi:03}_s{si:02}_{}_{}", phase.wire(), space.wire())
}

/// Resolve a manifest row's image path against the manifest directory.
pub fn image_abs_path(manifest_dir: &Path, row: &ManifestRow) -> PathBuf {
    manifest_dir.join(&row.image_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_key(id: &str) -> ParameterKey {
        ParameterKey {
            id: id.to_string(),
            l_min: 0,
            l_max: 0,
            k_min: 0,
            k_max: 0,
            omega: 1.05,
            f: 0.02,
            f_st: 1.0e-6,
            re_e: -6.1720127e-2,
            im_e: -3.25255e-6,
            t_phase: PhaseLabel::Tquarter,
            space: Space::PS,
        }
    }

    #[test]
    fn manifest_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = DatasetManifest {
            rows: (0..50)
                .map(|i| ManifestRow {
                    key: ParameterKey {
                        re_e: -6.1720127e-2 * (i as f64 + 0.3) / 7.0,
                        im_e: -3.25255e-6 / (i as f64 + 1.0),
                        ..sample_key(&format!("g000_s{i:02}_T4_PS"))
                    },
                    image_path: format!("images/row{i}.png"),
                    config_hash: "deadbeefdeadbeef".to_string(),
                })
                .collect(),
        };
        let path = dir.path().join("manifest.csv");
        write_manifest(&manifest, &path).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(manifest.rows.len(), back.rows.len());
        for (a, b) in manifest.rows.iter().zip(&back.rows) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn table_two_first_row_parses_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = DatasetManifest {
            rows: vec![ManifestRow {
                key: sample_key("fixture_row"),
                image_path: "images/x.png".to_string(),
                config_hash: "0".to_string(),
            }],
        };
        let path = dir.path().join("m.csv");
        write_manifest(&manifest, &path).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.rows[0].key.f_st, 1.0e-6);
        assert_eq!(back.rows[0].key.re_e, -6.1720127e-2);
        assert_eq!(back.rows[0].key.im_e, -3.25255e-6);
    }

    #[test]
    fn empty_manifest_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_manifest(&DatasetManifest::default(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{MANIFEST_HEADER}\n"));
        assert!(read_manifest(&path).unwrap().is_empty());
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(
            &path,
            format!("{MANIFEST_HEADER}\ng000_s00_0_CS,CS,0,0,0,0,0,oops,1e-2,0e0,1e-1,-1e-6,images/a.png,h\n"),
        )
        .unwrap();
        match read_manifest(&path) {
            Err(AtlasError::ManifestParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let manifest = DatasetManifest {
            rows: vec![
                ManifestRow {
                    key: sample_key("same"),
                    image_path: "a.png".into(),
                    config_hash: "h".into(),
                },
                ManifestRow {
                    key: sample_key("same"),
                    image_path: "b.png".into(),
                    config_hash: "h".into(),
                },
            ],
        };
        assert!(manifest.validate().is_err());
    }

    #[test]
    fn desk_plan_total_is_3600() {
        let plan = plan_sweep(
            vec![1.0, 1.05, 1.1, 1.15, 1.2],
            vec![0.01, 0.02, 0.03],
            vec![0.0, 0.002, 0.004, 0.006],
            10,
            PhaseLabel::ALL.to_vec(),
            Space::ALL.to_vec(),
        )
        .unwrap();
        assert_eq!(plan.total(), 3600);
    }

    #[test]
    fn single_point_plan_total_is_one() {
        let plan = plan_sweep(
            vec![1.0],
            vec![0.01],
            vec![0.0],
            1,
            vec![PhaseLabel::T0],
            vec![Space::CS],
        )
        .unwrap();
        assert_eq!(plan.total(), 1);
    }

    #[test]
    fn empty_grid_rejected() {
        assert!(plan_sweep(vec![], vec![0.1], vec![0.0], 1, vec![PhaseLabel::T0], vec![Space::CS])
            .is_err());
    }

    fn tiny_context(hash: &str) -> GenerationContext {
        GenerationContext {
            potential: PotentialSpec::quartic(0.005).with_cap(1.0, 0.2),
            grid: GridSpec::new(64, -10.0, 10.0, 256),
            husimi: HusimiGrid::new((-7.5, 7.5), (-7.5, 7.5)).with_resolution(48, 48),
            island_windows: Some(vec![
                (PhaseLabel::T0, PhaseWindow::new(-4.5, -0.7, -3.6, 3.6)),
                (PhaseLabel::Tquarter, PhaseWindow::symmetric(6.0)),
                (PhaseLabel::Thalf, PhaseWindow::symmetric(6.0)),
            ]),
            config_hash: hash.to_string(),
        }
    }

    fn tiny_plan() -> SweepPlan {
        plan_sweep(
            vec![1.05],
            vec![0.02],
            vec![0.0],
            2,
            vec![PhaseLabel::T0, PhaseLabel::Thalf],
            Space::ALL.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn generation_is_resumable_and_idempotent() {
        // 64-point grid fails the ≥64 validation? No: exactly 64 is allowed.
        let dir = tempfile::tempdir().unwrap();
        let ctx = tiny_context("hash1");
        let plan = tiny_plan();
        let manifest = generate_dataset(&plan, &ctx, dir.path()).unwrap();
        assert_eq!(manifest.len(), plan.total());
        manifest.verify_images(dir.path()).unwrap();
        // Capture bytes, then rerun: nothing may change.
        let manifest_bytes = fs::read(dir.path().join("manifest.csv")).unwrap();
        let mtime = |p: &Path| fs::metadata(p).unwrap().modified().unwrap();
        let image_times: Vec<_> = manifest
            .rows
            .iter()
            .map(|r| mtime(&dir.path().join(&r.image_path)))
            .collect();
        let manifest2 = generate_dataset(&plan, &ctx, dir.path()).unwrap();
        assert_eq!(manifest2.len(), manifest.len());
        assert_eq!(
            manifest_bytes,
            fs::read(dir.path().join("manifest.csv")).unwrap()
        );
        for (row, t) in manifest.rows.iter().zip(image_times) {
            assert_eq!(mtime(&dir.path().join(&row.image_path)), t, "image rewritten");
        }
    }

    #[test]
    fn rows_of_one_point_share_drive_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = tiny_context("h");
        let plan = tiny_plan();
        let manifest = generate_dataset(&plan, &ctx, dir.path()).unwrap();
        for row in &manifest.rows {
            assert_eq!(row.key.omega, 1.05);
            assert_eq!(row.key.f, 0.02);
            assert_eq!(row.key.f_st, 0.0);
            assert!(row.key.im_e <= 0.0);
        }
        // n_states_per_point = 1 case: row count is |grid|·|phases|·|spaces|.
        let plan1 = SweepPlan {
            n_states_per_point: 1,
            ..tiny_plan()
        };
        let dir2 = tempfile::tempdir().unwrap();
        let manifest1 = generate_dataset(&plan1, &ctx, dir2.path()).unwrap();
        assert_eq!(manifest1.len(), 4);
    }

    #[test]
    fn masses_written_for_ps_rows() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = tiny_context("h");
        let plan = tiny_plan();
        generate_dataset(&plan, &ctx, dir.path()).unwrap();
        let masses = read_masses(&dir.path().join("masses.csv")).unwrap();
        // One mass row per PS image.
        assert_eq!(masses.len(), plan.total() / 2);
        for m in &masses {
            assert!(m.id.ends_with("_PS"));
            assert!((0.0..=1.0).contains(&m.island_mass));
        }
    }
}
