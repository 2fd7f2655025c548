//! Rendering of scalar fields and density carpets into fixed-size RGB images.

use image::{Rgb, RgbImage};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::floquet::{
    configuration_density, DriveParameters, FloquetState, GridSpec, PotentialSpec,
};
use crate::husimi::{husimi_field, HusimiGrid, ScalarField};

/// Output image side. Images are always square RGB8.
pub const IMAGE_SIZE: u32 = 150;

/// Which representation an image shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Space {
    /// Configuration space: |ψ(x, t)|² carpet over one period.
    CS,
    /// Phase space: Husimi distribution.
    PS,
}

impl Space {
    pub const ALL: [Space; 2] = [Space::CS, Space::PS];

    pub fn wire(&self) -> &'static str {
        match self {
            Space::CS => "CS",
            Space::PS => "PS",
        }
    }

    pub fn from_wire(s: &str) -> Option<Self> {
        match s {
            "CS" => Some(Space::CS),
            "PS" => Some(Space::PS),
            _ => None,
        }
    }
}

/// Normalization rule for the colormap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Normalize {
    /// Scale so the image maximum maps to the top anchor.
    PerImageMax,
    /// Scale against a fixed ceiling (values clamp at 1).
    FixedMax(f64),
}

/// Five-anchor colormap, linearly interpolated.
const ANCHORS: [[f64; 3]; 5] = [
    [13.0, 8.0, 135.0],
    [126.0, 3.0, 168.0],
    [204.0, 71.0, 120.0],
    [248.0, 149.0, 64.0],
    [240.0, 249.0, 33.0],
];

/// Background color: the value-0 anchor. Used for padding in augmentation.
pub const BACKGROUND: [u8; 3] = [13, 8, 135];

/// Map a value in [0, 1] through the colormap.
fn colormap_at(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let pos = v * 4.0;
    let idx = (pos.floor() as usize).min(3);
    let frac = pos - idx as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        let val = ANCHORS[idx][c] * (1.0 - frac) + ANCHORS[idx + 1][c] * frac;
        out[c] = val.round() as u8;
    }
    out
}

/// Render a non-negative 2D array to RGB8 through the colormap.
///
/// Row 0 maps to the top image row. Output is byte-deterministic.
pub fn apply_colormap(values: &Array2<f64>, normalize: Normalize) -> RgbImage {
    let (rows, cols) = values.dim();
    let ceiling = match normalize {
        Normalize::PerImageMax => {
            let max = values.iter().cloned().fold(0.0, f64::max);
            if max > 0.0 {
                max
            } else {
                1.0
            }
        }
        Normalize::FixedMax(m) => m,
    };
    let mut img = RgbImage::new(cols as u32, rows as u32);
    for r in 0..rows {
        for c in 0..cols {
            let px = colormap_at(values[(r, c)] / ceiling);
            img.put_pixel(c as u32, r as u32, Rgb(px));
        }
    }
    img
}

/// Bilinear resample of a 2D array to the given shape.
pub fn resample(values: &Array2<f64>, out_rows: usize, out_cols: usize) -> Array2<f64> {
    let (rows, cols) = values.dim();
    let mut out = Array2::zeros((out_rows, out_cols));
    for r in 0..out_rows {
        // Map output pixel centers onto the input index range.
        let src_r = if out_rows > 1 {
            r as f64 * (rows - 1) as f64 / (out_rows - 1) as f64
        } else {
            0.0
        };
        let r0 = src_r.floor() as usize;
        let r1 = (r0 + 1).min(rows - 1);
        let fr = src_r - r0 as f64;
        for c in 0..out_cols {
            let src_c = if out_cols > 1 {
                c as f64 * (cols - 1) as f64 / (out_cols - 1) as f64
            } else {
                0.0
            };
            let c0 = src_c.floor() as usize;
            let c1 = (c0 + 1).min(cols - 1);
            let fc = src_c - c0 as f64;
            out[(r, c)] = values[(r0, c0)] * (1.0 - fr) * (1.0 - fc)
                + values[(r0, c1)] * (1.0 - fr) * fc
                + values[(r1, c0)] * fr * (1.0 - fc)
                + values[(r1, c1)] * fr * fc;
        }
    }
    out
}

/// Render one state in the requested space as a 150×150 RGB image.
///
/// PS renders the Husimi field on the given grid; CS renders the space–time
/// density carpet over one period starting at the state's phase. The state
/// must already be evolved to the snapshot phase of interest.
pub fn render_state(
    state: &FloquetState,
    space: Space,
    potential: &PotentialSpec,
    drive: &DriveParameters,
    grid: &GridSpec,
    husimi: &HusimiGrid,
    normalize: Normalize,
) -> Result<RgbImage> {
    match space {
        Space::PS => {
            let field = husimi_field(state, grid, husimi)?;
            Ok(render_scalar_field(&field, normalize))
        }
        Space::CS => {
            // The carpet propagator only needs the amplitudes; reuse it from
            // any phase by treating the snapshot as the carpet origin.
            let t0_state = FloquetState {
                amplitudes: state.amplitudes.clone(),
                quasienergy: state.quasienergy,
                gamma: state.gamma,
                phase_label: crate::floquet::PhaseLabel::T0,
            };
            let carpet = configuration_density(
                &t0_state,
                potential,
                drive,
                grid,
                IMAGE_SIZE as usize,
            )?;
            let resampled = resample(&carpet, IMAGE_SIZE as usize, IMAGE_SIZE as usize);
            Ok(apply_colormap(&resampled, normalize))
        }
    }
}

/// Render a Husimi field with the momentum axis increasing upwards.
pub fn render_scalar_field(field: &ScalarField, normalize: Normalize) -> RgbImage {
    let (n_p, n_x) = field.values.dim();
    // Flip rows so p_max is the top of the image.
    let mut flipped = Array2::zeros((n_p, n_x));
    for j in 0..n_p {
        for i in 0..n_x {
            flipped[(j, i)] = field.values[(n_p - 1 - j, i)];
        }
    }
    let resampled = if (n_p, n_x) == (IMAGE_SIZE as usize, IMAGE_SIZE as usize) {
        flipped
    } else {
        resample(&flipped, IMAGE_SIZE as usize, IMAGE_SIZE as usize)
    };
    apply_colormap(&resampled, normalize)
}
