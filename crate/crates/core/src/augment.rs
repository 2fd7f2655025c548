//! Seeded, deterministic image augmentation.
//!
//! Two transform classes mirror the dataset's invariances: geometric
//! (flips, rotation, scaling, skew — composed into one affine warp with
//! bilinear resampling and background padding) and photometric (contrast,
//! saturation, grayscale). Every family fires independently with its own
//! probability; all draws come from a stream derived from (spec seed,
//! draw seed), so a given pair of seeds always yields the same transform.

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::render::BACKGROUND;

/// Per-family probabilities and parameter ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    /// Probability of applying each geometric/photometric family.
    pub p_rotation: f64,
    pub p_scale: f64,
    pub p_skew: f64,
    pub p_contrast: f64,
    pub p_saturation: f64,
    pub p_grayscale: f64,
    pub p_hflip: f64,
    pub p_vflip: f64,
    /// Rotation range ±θ_max in degrees.
    pub rotation_max_deg: f64,
    /// Scale factor range.
    pub scale_range: (f64, f64),
    /// Skew coefficient range ±k_max.
    pub skew_max: f64,
    /// Contrast factor range.
    pub contrast_range: (f64, f64),
    /// Saturation factor range.
    pub saturation_range: (f64, f64),
    pub rng_seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            p_rotation: 0.5,
            p_scale: 0.5,
            p_skew: 0.5,
            p_contrast: 0.5,
            p_saturation: 0.5,
            p_grayscale: 0.2,
            p_hflip: 0.5,
            p_vflip: 0.5,
            rotation_max_deg: 15.0,
            scale_range: (0.85, 1.15),
            skew_max: 0.15,
            contrast_range: (0.7, 1.3),
            saturation_range: (0.5, 1.5),
            rng_seed: 0,
        }
    }
}

impl AugmentationSpec {
    /// Spec with every family disabled; augment_image becomes the identity.
    pub fn identity() -> Self {
        AugmentationSpec {
            p_rotation: 0.0,
            p_scale: 0.0,
            p_skew: 0.0,
            p_contrast: 0.0,
            p_saturation: 0.0,
            p_grayscale: 0.0,
            p_hflip: 0.0,
            p_vflip: 0.0,
            ..AugmentationSpec::default()
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let probs = [
            self.p_rotation,
            self.p_scale,
            self.p_skew,
            self.p_contrast,
            self.p_saturation,
            self.p_grayscale,
            self.p_hflip,
            self.p_vflip,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(crate::AtlasError::Config(
                "augmentation probabilities must lie in [0, 1]".to_string(),
            ));
        }
        for (lo, hi) in [self.scale_range, self.contrast_range, self.saturation_range] {
            if lo > hi {
                return Err(crate::AtlasError::Config(
                    "augmentation ranges must be ordered".to_string(),
                ));
            }
        }
        Ok(())
    }
}

/// Luma weights for grayscale/saturation.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Plan of one drawn transform; wholly determined by (spec, draw_seed).
#[derive(Debug, Clone, Copy, PartialEq)]
struct TransformPlan {
    hflip: bool,
    vflip: bool,
    /// Affine coefficients mapping output pixel to source pixel, about the
    /// image center: [a, b; c, d] is the inverse of the drawn warp.
    affine: Option<[f64; 4]>,
    contrast: Option<f64>,
    saturation: Option<f64>,
    grayscale: bool,
}

fn draw_plan(spec: &AugmentationSpec, draw_seed: u64) -> TransformPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed ^ draw_seed.rotate_left(17));
    // Draw order is fixed; every family consumes its random numbers whether
    // or not it fires, so one family's probability never shifts another's
    // stream.
    let hflip = rng.gen::<f64>() < spec.p_hflip;
    let vflip = rng.gen::<f64>() < spec.p_vflip;

    let rot_on = rng.gen::<f64>() < spec.p_rotation;
    let theta = rng.gen_range(-spec.rotation_max_deg..=spec.rotation_max_deg);
    let scale_on = rng.gen::<f64>() < spec.p_scale;
    let scale = rng.gen_range(spec.scale_range.0..=spec.scale_range.1);
    let skew_on = rng.gen::<f64>() < spec.p_skew;
    let skew = rng.gen_range(-spec.skew_max..=spec.skew_max);

    let contrast_on = rng.gen::<f64>() < spec.p_contrast;
    let contrast = rng.gen_range(spec.contrast_range.0..=spec.contrast_range.1);
    let saturation_on = rng.gen::<f64>() < spec.p_saturation;
    let saturation = rng.gen_range(spec.saturation_range.0..=spec.saturation_range.1);
    let grayscale = rng.gen::<f64>() < spec.p_grayscale;

    // Forward warp = rotation · skew · scale; sampling needs its inverse.
    let affine = if rot_on || scale_on || skew_on {
        let theta = if rot_on { theta.to_radians() } else { 0.0 };
        let s = if scale_on { scale } else { 1.0 };
        let k = if skew_on { skew } else { 0.0 };
        let (sin, cos) = theta.sin_cos();
        // rotation [cos −sin; sin cos] · skew [1 k; 0 1] · scale [s 0; 0 s]
        let m = [
            s * cos,
            s * (k * cos - sin),
            s * sin,
            s * (k * sin + cos),
        ];
        let det = m[0] * m[3] - m[1] * m[2];
        Some([m[3] / det, -m[1] / det, -m[2] / det, m[0] / det])
    } else {
        None
    };

    TransformPlan {
        hflip,
        vflip,
        affine,
        contrast: contrast_on.then_some(contrast),
        saturation: saturation_on.then_some(saturation),
        grayscale,
    }
}

/// Apply a drawn augmentation to an image.
///
/// Deterministic for a fixed (image, spec, draw_seed); output keeps the
/// input dimensions. With all probabilities 0 the input is returned
/// byte-identical.
pub fn augment_image(image: &RgbImage, spec: &AugmentationSpec, draw_seed: u64) -> RgbImage {
    let plan = draw_plan(spec, draw_seed);
    let mut out = image.clone();

    // Flips are exact index mirrors, kept separate from the affine warp so
    // a double flip is a true involution.
    if plan.hflip {
        out = flip_horizontal(&out);
    }
    if plan.vflip {
        out = flip_vertical(&out);
    }
    if let Some(inv) = plan.affine {
        out = warp_affine(&out, inv);
    }
    if plan.contrast.is_some() || plan.saturation.is_some() || plan.grayscale {
        photometric(&mut out, plan.contrast, plan.saturation, plan.grayscale);
    }
    out
}

fn flip_horizontal(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    RgbImage::from_fn(w, h, |x, y| *img.get_pixel(w - 1 - x, y))
}

fn flip_vertical(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    RgbImage::from_fn(w, h, |x, y| *img.get_pixel(x, h - 1 - y))
}

/// Bilinear warp about the image center; out-of-bounds samples take the
/// background color.
fn warp_affine(img: &RgbImage, inv: [f64; 4]) -> RgbImage {
    let (w, h) = img.dimensions();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    RgbImage::from_fn(w, h, |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let sx = inv[0] * dx + inv[1] * dy + cx;
        let sy = inv[2] * dx + inv[3] * dy + cy;
        image::Rgb(sample_bilinear(img, sx, sy))
    })
}

fn sample_bilinear(img: &RgbImage, x: f64, y: f64) -> [u8; 3] {
    let (w, h) = img.dimensions();
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let fetch = |ix: f64, iy: f64| -> [f64; 3] {
        if ix < 0.0 || iy < 0.0 || ix >= w as f64 || iy >= h as f64 {
            [
                BACKGROUND[0] as f64,
                BACKGROUND[1] as f64,
                BACKGROUND[2] as f64,
            ]
        } else {
            let p = img.get_pixel(ix as u32, iy as u32).0;
            [p[0] as f64, p[1] as f64, p[2] as f64]
        }
    };
    let p00 = fetch(x0, y0);
    let p10 = fetch(x0 + 1.0, y0);
    let p01 = fetch(x0, y0 + 1.0);
    let p11 = fetch(x0 + 1.0, y0 + 1.0);
    let mut out = [0u8; 3];
    for c in 0..3 {
        let v = p00[c] * (1.0 - fx) * (1.0 - fy)
            + p10[c] * fx * (1.0 - fy)
            + p01[c] * (1.0 - fx) * fy
            + p11[c] * fx * fy;
        out[c] = v.round().clamp(0.0, 255.0) as u8;
    }
    out
}

fn photometric(
    img: &mut RgbImage,
    contrast: Option<f64>,
    saturation: Option<f64>,
    grayscale: bool,
) {
    for px in img.pixels_mut() {
        let mut v = [px.0[0] as f64, px.0[1] as f64, px.0[2] as f64];
        if let Some(c) = contrast {
            for ch in v.iter_mut() {
                *ch = (*ch - 127.5) * c + 127.5;
            }
        }
        if let Some(s) = saturation {
            let luma = LUMA[0] * v[0] + LUMA[1] * v[1] + LUMA[2] * v[2];
            for ch in v.iter_mut() {
                *ch = luma + (*ch - luma) * s;
            }
        }
        if grayscale {
            let luma = LUMA[0] * v[0] + LUMA[1] * v[1] + LUMA[2] * v[2];
            v = [luma, luma, luma];
        }
        for (ch, out) in v.iter().zip(px.0.iter_mut()) {
            *out = ch.round_ties_even().clamp(0.0, 255.0) as u8;
        }
    }
}
