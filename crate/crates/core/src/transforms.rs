//! Gradient-free image transformations and the Hamming-distance robustness
//! harness.
//!
//! Every transform keeps the image size; regions without source content are
//! filled with black (`-1`). Geometric transforms sample bilinearly with
//! corner-aligned pixel centres. Colour transforms operate on `[0,1]` values
//! through RGB↔HSV.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::{ImageTensor, InputSpec};
use crate::jpeg::jpeg_roundtrip;
use crate::lsh::{check_pipeline, compute_hash, hamming_distance, HashingMatrix, PerceptualHash};
use crate::network::EmbeddingNetwork;
use crate::par::{map_ordered, mean_std};

pub const BLACK: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipAxis {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformSpec {
    /// Counter-clockwise rotation about the image centre.
    Rotate {
        degrees: f64,
    },
    /// Shift by whole pixels; positive `dx` moves content right, positive `dy` down.
    Translate {
        dx: i64,
        dy: i64,
    },
    Flip {
        axis: FlipAxis,
    },
    /// Keeps a centred `window×window` region and blackens the rest.
    CenterCrop {
        window: usize,
    },
    /// Shrinks the content so its longer side is `target_side`, centred on black.
    Downsize {
        target_side: usize,
    },
    HueShift {
        degrees: f64,
    },
    SaturationScale {
        factor: f64,
    },
    BrightnessScale {
        factor: f64,
    },
    ContrastScale {
        factor: f64,
    },
    Jpeg {
        quality: u8,
    },
}

#[allow(non_upper_case_globals)]
impl TransformSpec {
    pub const FlipHorizontal: TransformSpec = TransformSpec::Flip {
        axis: FlipAxis::Horizontal,
    };
    pub const FlipVertical: TransformSpec = TransformSpec::Flip {
        axis: FlipAxis::Vertical,
    };

    pub fn family(&self) -> &'static str {
        match self {
            TransformSpec::Rotate { .. } => "rotate",
            TransformSpec::Translate { .. } => "translate",
            TransformSpec::Flip {
                axis: FlipAxis::Horizontal,
            } => "flip_horizontal",
            TransformSpec::Flip {
                axis: FlipAxis::Vertical,
            } => "flip_vertical",
            TransformSpec::CenterCrop { .. } => "center_crop",
            TransformSpec::Downsize { .. } => "downsize",
            TransformSpec::HueShift { .. } => "hue_shift",
            TransformSpec::SaturationScale { .. } => "saturation_scale",
            TransformSpec::BrightnessScale { .. } => "brightness_scale",
            TransformSpec::ContrastScale { .. } => "contrast_scale",
            TransformSpec::Jpeg { .. } => "jpeg",
        }
    }

    /// Scalar strength used as the x-axis of robustness curves.
    pub fn parameter(&self) -> f64 {
        match *self {
            TransformSpec::Rotate { degrees } | TransformSpec::HueShift { degrees } => degrees,
            TransformSpec::Translate { dx, dy } => {
                if dy == 0 {
                    dx as f64
                } else if dx == 0 {
                    dy as f64
                } else {
                    ((dx * dx + dy * dy) as f64).sqrt() * (dx + dy).signum() as f64
                }
            }
            TransformSpec::Flip { .. } => 1.0,
            TransformSpec::CenterCrop { window } => window as f64,
            TransformSpec::Downsize { target_side } => target_side as f64,
            TransformSpec::SaturationScale { factor }
            | TransformSpec::BrightnessScale { factor }
            | TransformSpec::ContrastScale { factor } => factor,
            TransformSpec::Jpeg { quality } => quality as f64,
        }
    }

    pub fn validate(&self, spec: InputSpec) -> Result<()> {
        let side = spec.height.min(spec.width);
        match *self {
            TransformSpec::Rotate { degrees } | TransformSpec::HueShift { degrees } => {
                ensure!(degrees.is_finite(), Input, "angle must be finite");
            }
            TransformSpec::Translate { dx, dy } => {
                ensure!(
                    dx.unsigned_abs() < spec.width as u64 && dy.unsigned_abs() < spec.height as u64,
                    Input,
                    "translation ({dx}, {dy}) exceeds image {}×{}",
                    spec.height,
                    spec.width
                );
            }
            TransformSpec::Flip { .. } => {}
            TransformSpec::CenterCrop { window } => {
                ensure!(
                    (1..=side).contains(&window),
                    Input,
                    "crop window must be in 1..={side}, got {window}"
                );
            }
            TransformSpec::Downsize { target_side } => {
                let longest = spec.height.max(spec.width);
                ensure!(
                    (1..=longest).contains(&target_side),
                    Input,
                    "downsize target must be in 1..={longest}, got {target_side}"
                );
            }
            TransformSpec::SaturationScale { factor }
            | TransformSpec::BrightnessScale { factor }
            | TransformSpec::ContrastScale { factor } => {
                ensure!(
                    factor >= 0.0 && factor.is_finite(),
                    Input,
                    "scale factor must be non-negative, got {factor}"
                );
            }
            TransformSpec::Jpeg { quality } => {
                ensure!((1..=100).contains(&quality), Input, "jpeg quality must be in 1..=100");
            }
        }
        if matches!(
            self,
            TransformSpec::HueShift { .. } | TransformSpec::SaturationScale { .. }
        ) {
            ensure!(spec.channels == 3, Input, "HSV transforms need 3 channels");
        }
        Ok(())
    }

    fn is_identity(&self) -> bool {
        match *self {
            TransformSpec::Rotate { degrees } | TransformSpec::HueShift { degrees } => degrees.rem_euclid(360.0) == 0.0,
            TransformSpec::Translate { dx, dy } => dx == 0 && dy == 0,
            TransformSpec::SaturationScale { factor }
            | TransformSpec::BrightnessScale { factor }
            | TransformSpec::ContrastScale { factor } => factor == 1.0,
            _ => false,
        }
    }
}

pub fn apply_transform(image: &ImageTensor, spec: &TransformSpec) -> Result<ImageTensor> {
    spec.validate(image.spec())?;
    if spec.is_identity() {
        return Ok(image.clone());
    }
    match *spec {
        TransformSpec::Rotate { degrees } => Ok(rotate(image, degrees)),
        TransformSpec::Translate { dx, dy } => Ok(translate(image, dx, dy)),
        TransformSpec::Flip { axis } => Ok(flip(image, axis)),
        TransformSpec::CenterCrop { window } => Ok(center_crop(image, window)),
        TransformSpec::Downsize { target_side } => downsize(image, target_side),
        TransformSpec::HueShift { degrees } => Ok(map_hsv(image, |h, s, v| ((h + degrees).rem_euclid(360.0), s, v))),
        TransformSpec::SaturationScale { factor } => Ok(map_hsv(image, |h, s, v| (h, (s * factor).min(1.0), v))),
        TransformSpec::BrightnessScale { factor } => {
            if image.channels() == 3 {
                Ok(map_hsv(image, |h, s, v| (h, s, (v * factor).min(1.0))))
            } else {
                Ok(map_unit(image, |v| (v * factor).min(1.0)))
            }
        }
        TransformSpec::ContrastScale { factor } => Ok(contrast(image, factor)),
        TransformSpec::Jpeg { quality } => jpeg_roundtrip(image, quality),
    }
}

fn rebuild(image: &ImageTensor, data: Vec<f64>) -> ImageTensor {
    ImageTensor::new(image.height(), image.width(), image.channels(), data).expect("transform output stays in range")
}

fn rotate(image: &ImageTensor, degrees: f64) -> ImageTensor {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0);
    let tol = 1e-9;
    let mut data = vec![BLACK; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let sx = cx + cos * dx - sin * dy;
            let sy = cy + sin * dx + cos * dy;
            if sx < -tol || sy < -tol || sx > (w - 1) as f64 + tol || sy > (h - 1) as f64 + tol {
                continue;
            }
            let (sy, sx) = (sy.clamp(0.0, (h - 1) as f64), sx.clamp(0.0, (w - 1) as f64));
            for ch in 0..c {
                data[(y * w + x) * c + ch] = image.sample_bilinear(sy, sx, ch);
            }
        }
    }
    rebuild(image, data)
}

fn translate(image: &ImageTensor, dx: i64, dy: i64) -> ImageTensor {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let mut data = vec![BLACK; h * w * c];
    for y in 0..h as i64 {
        let sy = y - dy;
        if sy < 0 || sy >= h as i64 {
            continue;
        }
        for x in 0..w as i64 {
            let sx = x - dx;
            if sx < 0 || sx >= w as i64 {
                continue;
            }
            let dst = (y as usize * w + x as usize) * c;
            data[dst..dst + c].copy_from_slice(image.pixel(sy as usize, sx as usize));
        }
    }
    rebuild(image, data)
}

fn flip(image: &ImageTensor, axis: FlipAxis) -> ImageTensor {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = match axis {
                FlipAxis::Horizontal => (y, w - 1 - x),
                FlipAxis::Vertical => (h - 1 - y, x),
            };
            data.extend_from_slice(image.pixel(sy, sx));
        }
    }
    rebuild(image, data)
}

fn center_crop(image: &ImageTensor, window: usize) -> ImageTensor {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let (top, left) = ((h - window) / 2, (w - window) / 2);
    let mut data = vec![BLACK; h * w * c];
    for y in top..top + window {
        for x in left..left + window {
            let dst = (y * w + x) * c;
            data[dst..dst + c].copy_from_slice(image.pixel(y, x));
        }
    }
    rebuild(image, data)
}

fn downsize(image: &ImageTensor, target_side: usize) -> Result<ImageTensor> {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let scale = target_side as f64 / h.max(w) as f64;
    let nh = ((h as f64 * scale).round() as usize).clamp(1, h);
    let nw = ((w as f64 * scale).round() as usize).clamp(1, w);
    let small = image.resize_bilinear(nh, nw)?;
    let (top, left) = ((h - nh) / 2, (w - nw) / 2);
    let mut data = vec![BLACK; h * w * c];
    for y in 0..nh {
        for x in 0..nw {
            let dst = ((top + y) * w + left + x) * c;
            data[dst..dst + c].copy_from_slice(small.pixel(y, x));
        }
    }
    Ok(rebuild(image, data))
}

fn map_unit(image: &ImageTensor, f: impl Fn(f64) -> f64) -> ImageTensor {
    let data = image
        .data()
        .iter()
        .map(|&v| (f((v + 1.0) / 2.0).clamp(0.0, 1.0)) * 2.0 - 1.0)
        .collect();
    rebuild(image, data)
}

fn map_hsv(image: &ImageTensor, f: impl Fn(f64, f64, f64) -> (f64, f64, f64)) -> ImageTensor {
    let mut data = Vec::with_capacity(image.data().len());
    for px in image.data().chunks_exact(3) {
        let unit = |v: f64| ((v + 1.0) / 2.0).clamp(0.0, 1.0);
        let (h, s, v) = rgb_to_hsv(unit(px[0]), unit(px[1]), unit(px[2]));
        let (h, s, v) = f(h, s, v);
        let (r, g, b) = hsv_to_rgb(h, s.clamp(0.0, 1.0), v.clamp(0.0, 1.0));
        data.extend([r, g, b].map(|u| u.clamp(0.0, 1.0) * 2.0 - 1.0));
    }
    rebuild(image, data)
}

/// BT.601 luma of `[0,1]` RGB; single-channel images pass through.
pub fn luminance(px: &[f64]) -> f64 {
    match px {
        [r, g, b, ..] => 0.299 * r + 0.587 * g + 0.114 * b,
        [v] => *v,
        _ => px.iter().sum::<f64>() / px.len() as f64,
    }
}

fn contrast(image: &ImageTensor, factor: f64) -> ImageTensor {
    let c = image.channels();
    let unit: Vec<f64> = image.data().iter().map(|v| (v + 1.0) / 2.0).collect();
    let mean = unit.chunks_exact(c).map(luminance).sum::<f64>() / (unit.len() / c) as f64;
    let data = unit
        .iter()
        .map(|&v| (mean + factor * (v - mean)).clamp(0.0, 1.0) * 2.0 - 1.0)
        .collect();
    rebuild(image, data)
}

/// `[0,1]` RGB to (hue degrees in `[0,360)`, saturation, value).
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let sat = if max == 0.0 { 0.0 } else { delta / max };
    (hue.rem_euclid(360.0), sat, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

/// A named list of transform settings forming one robustness curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformFamily {
    pub name: String,
    pub specs: Vec<TransformSpec>,
}

impl TransformFamily {
    pub fn new(name: impl Into<String>, specs: Vec<TransformSpec>) -> Self {
        Self {
            name: name.into(),
            specs,
        }
    }
}

/// Default sweep grids with exponentially growing strengths.
pub fn default_families(spec: InputSpec) -> Vec<TransformFamily> {
    let side = spec.height.min(spec.width);
    let longest = spec.height.max(spec.width);
    let pow2 = |max: usize| -> Vec<usize> {
        std::iter::successors(Some(1usize), |v| Some(v * 2))
            .take_while(|&v| v <= max)
            .collect()
    };
    let mut families = vec![
        TransformFamily::new(
            "rotate",
            [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0]
                .into_iter()
                .map(|degrees| TransformSpec::Rotate { degrees })
                .collect(),
        ),
        TransformFamily::new(
            "translate",
            pow2(side / 2)
                .into_iter()
                .map(|d| TransformSpec::Translate { dx: d as i64, dy: 0 })
                .collect(),
        ),
        TransformFamily::new("flip_horizontal", vec![TransformSpec::FlipHorizontal]),
        TransformFamily::new("flip_vertical", vec![TransformSpec::FlipVertical]),
        TransformFamily::new(
            "center_crop",
            pow2(side / 2)
                .into_iter()
                .map(|removed| TransformSpec::CenterCrop { window: side - removed })
                .collect(),
        ),
        TransformFamily::new(
            "downsize",
            pow2(longest / 2)
                .into_iter()
                .map(|removed| TransformSpec::Downsize {
                    target_side: longest - removed,
                })
                .collect(),
        ),
        TransformFamily::new(
            "brightness_scale",
            [0.25, 0.5, 0.75, 1.25, 1.5, 2.0]
                .into_iter()
                .map(|factor| TransformSpec::BrightnessScale { factor })
                .collect(),
        ),
        TransformFamily::new(
            "contrast_scale",
            [0.25, 0.5, 0.75, 1.25, 1.5, 2.0]
                .into_iter()
                .map(|factor| TransformSpec::ContrastScale { factor })
                .collect(),
        ),
        TransformFamily::new(
            "jpeg",
            [100u8, 95, 92, 90, 80, 70, 50, 30, 10]
                .into_iter()
                .map(|quality| TransformSpec::Jpeg { quality })
                .collect(),
        ),
    ];
    if spec.channels == 3 {
        families.push(TransformFamily::new(
            "hue_shift",
            [-180.0, -90.0, -45.0, -20.0, 20.0, 45.0, 90.0, 180.0]
                .into_iter()
                .map(|degrees| TransformSpec::HueShift { degrees })
                .collect(),
        ));
        families.push(TransformFamily::new(
            "saturation_scale",
            [0.0, 0.25, 0.5, 0.75, 1.25, 1.5, 2.0]
                .into_iter()
                .map(|factor| TransformSpec::SaturationScale { factor })
                .collect(),
        ));
    }
    families
}

/// One point on a robustness curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub family: String,
    pub parameter: f64,
    pub mean_delta: f64,
    pub std_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub images: usize,
    pub curves: Vec<CurvePoint>,
}

fn original_hashes(
    net: &EmbeddingNetwork,
    matrix: &HashingMatrix,
    corpus: &[ImageTensor],
) -> Result<Vec<PerceptualHash>> {
    map_ordered(corpus, |_, img| compute_hash(net, matrix, img))
        .into_iter()
        .collect()
}

/// `δ(H(T(x)), H(x))` for every image of the corpus.
pub fn transform_deltas(
    net: &EmbeddingNetwork,
    matrix: &HashingMatrix,
    corpus: &[ImageTensor],
    originals: &[PerceptualHash],
    spec: &TransformSpec,
) -> Result<Vec<f64>> {
    let pairs: Vec<(&ImageTensor, &PerceptualHash)> = corpus.iter().zip(originals).collect();
    map_ordered(&pairs, |_, (img, orig)| {
        let moved = apply_transform(img, spec)?;
        hamming_distance(&compute_hash(net, matrix, &moved)?, orig)
    })
    .into_iter()
    .collect()
}

/// Mean and standard deviation of the Hamming distance per transform setting.
pub fn robustness_sweep(
    net: &EmbeddingNetwork,
    matrix: &HashingMatrix,
    corpus: &[ImageTensor],
    families: &[TransformFamily],
) -> Result<RobustnessReport> {
    check_pipeline(net, matrix)?;
    ensure!(!corpus.is_empty(), Input, "robustness sweep needs a non-empty corpus");
    ensure!(
        families.iter().any(|f| !f.specs.is_empty()),
        Input,
        "robustness sweep needs at least one transform setting"
    );
    let originals = original_hashes(net, matrix, corpus)?;
    let mut curves = Vec::new();
    for family in families {
        for spec in &family.specs {
            let deltas = transform_deltas(net, matrix, corpus, &originals, spec)?;
            let (mean_delta, std_delta) = mean_std(&deltas).expect("corpus is non-empty");
            curves.push(CurvePoint {
                family: family.name.clone(),
                parameter: spec.parameter(),
                mean_delta,
                std_delta,
            });
        }
    }
    Ok(RobustnessReport {
        images: corpus.len(),
        curves,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub dx: i64,
    pub dy: i64,
    pub mean_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationGrid {
    pub max_shift: i64,
    /// Row-major over `dy` then `dx`, each in `-max_shift..=max_shift`.
    pub cells: Vec<GridCell>,
}

impl TranslationGrid {
    pub fn get(&self, dx: i64, dy: i64) -> Option<f64> {
        let n = 2 * self.max_shift + 1;
        let (ix, iy) = (dx + self.max_shift, dy + self.max_shift);
        if !(0..n).contains(&ix) || !(0..n).contains(&iy) {
            return None;
        }
        Some(self.cells[(iy * n + ix) as usize].mean_delta)
    }

    /// The `dx = dy` series.
    pub fn diagonal(&self) -> Vec<GridCell> {
        self.cells.iter().filter(|c| c.dx == c.dy).cloned().collect()
    }
}

/// Mean Hamming distance for every combined shift `(dx, dy)` in
/// `[-max_shift, max_shift]²`.
pub fn translation_grid(
    net: &EmbeddingNetwork,
    matrix: &HashingMatrix,
    corpus: &[ImageTensor],
    max_shift: usize,
) -> Result<TranslationGrid> {
    check_pipeline(net, matrix)?;
    ensure!(!corpus.is_empty(), Input, "translation grid needs a non-empty corpus");
    let side = net.input_spec().height.min(net.input_spec().width);
    ensure!(
        max_shift < side,
        Input,
        "max shift {max_shift} must be below the image side {side}"
    );
    let originals = original_hashes(net, matrix, corpus)?;
    let m = max_shift as i64;
    let mut cells = Vec::new();
    for dy in -m..=m {
        for dx in -m..=m {
            let deltas = transform_deltas(net, matrix, corpus, &originals, &TransformSpec::Translate { dx, dy })?;
            cells.push(GridCell {
                dx,
                dy,
                mean_delta: mean_std(&deltas).expect("corpus is non-empty").0,
            });
        }
    }
    Ok(TranslationGrid { max_shift: m, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::scene;

    fn img() -> ImageTensor {
        scene(InputSpec::new(20, 24, 3), 11)
    }

    #[test]
    fn identity_parameters_are_exact() {
        let x = img();
        for spec in [
            TransformSpec::Rotate { degrees: 0.0 },
            TransformSpec::Translate { dx: 0, dy: 0 },
            TransformSpec::SaturationScale { factor: 1.0 },
            TransformSpec::BrightnessScale { factor: 1.0 },
            TransformSpec::ContrastScale { factor: 1.0 },
            TransformSpec::HueShift { degrees: 360.0 },
            TransformSpec::CenterCrop { window: 20 },
        ] {
            let out = apply_transform(&x, &spec).unwrap();
            if matches!(spec, TransformSpec::CenterCrop { .. }) {
                // a full-height window on a wider image still blackens side columns
                assert_eq!(out.pixel(10, 12), x.pixel(10, 12));
            } else {
                assert_eq!(out, x, "{spec:?}");
            }
        }
        assert_eq!(rotate(&x, 0.0), x);
        assert_eq!(
            apply_transform(&x, &TransformSpec::Downsize { target_side: 24 }).unwrap(),
            x
        );
    }

    #[test]
    fn flips_are_involutions() {
        let x = img();
        for spec in [TransformSpec::FlipHorizontal, TransformSpec::FlipVertical] {
            let once = apply_transform(&x, &spec).unwrap();
            assert_ne!(once, x);
            assert_eq!(apply_transform(&once, &spec).unwrap(), x);
        }
    }

    #[test]
    fn translate_fills_black() {
        let x = img();
        let out = apply_transform(&x, &TransformSpec::Translate { dx: 5, dy: 0 }).unwrap();
        for y in 0..20 {
            for xx in 0..5 {
                assert!(out.pixel(y, xx).iter().all(|&v| v == BLACK));
            }
            for xx in 5..24 {
                assert_eq!(out.pixel(y, xx), x.pixel(y, xx - 5));
            }
        }
    }

    #[test]
    fn translate_inverse_restores_interior() {
        let x = img();
        let there = apply_transform(&x, &TransformSpec::Translate { dx: 3, dy: -2 }).unwrap();
        let back = apply_transform(&there, &TransformSpec::Translate { dx: -3, dy: 2 }).unwrap();
        for y in 2..20 {
            for xx in 0..21 {
                assert_eq!(back.pixel(y, xx), x.pixel(y, xx));
            }
        }
    }

    #[test]
    fn rotate_quarter_turn_moves_corners() {
        let x = scene(InputSpec::new(9, 9, 1), 2);
        let r = apply_transform(&x, &TransformSpec::Rotate { degrees: 90.0 }).unwrap();
        // counter-clockwise: the top-right corner moves to the top-left
        assert!((r.pixel(0, 0)[0] - x.pixel(0, 8)[0]).abs() < 1e-12);
        assert!((r.pixel(4, 4)[0] - x.pixel(4, 4)[0]).abs() < 1e-12);
    }

    #[test]
    fn rotation_corners_become_black() {
        let x = img();
        let r = apply_transform(&x, &TransformSpec::Rotate { degrees: 45.0 }).unwrap();
        assert!(r.pixel(0, 0).iter().all(|&v| v == BLACK));
    }

    #[test]
    fn crop_and_downsize_keep_size() {
        let x = img();
        let crop = apply_transform(&x, &TransformSpec::CenterCrop { window: 10 }).unwrap();
        assert_eq!(crop.spec(), x.spec());
        assert!(crop.pixel(0, 0).iter().all(|&v| v == BLACK));
        assert_eq!(crop.pixel(10, 12), x.pixel(10, 12));
        let small = apply_transform(&x, &TransformSpec::Downsize { target_side: 12 }).unwrap();
        assert_eq!(small.spec(), x.spec());
        assert!(small.pixel(0, 0).iter().all(|&v| v == BLACK));
    }

    #[test]
    fn invalid_parameters() {
        let x = img();
        for spec in [
            TransformSpec::Translate { dx: 24, dy: 0 },
            TransformSpec::CenterCrop { window: 0 },
            TransformSpec::CenterCrop { window: 21 },
            TransformSpec::Downsize { target_side: 25 },
            TransformSpec::SaturationScale { factor: -0.1 },
            TransformSpec::Jpeg { quality: 0 },
            TransformSpec::Rotate { degrees: f64::NAN },
        ] {
            assert!(apply_transform(&x, &spec).is_err(), "{spec:?}");
        }
        let grey = scene(InputSpec::new(8, 8, 1), 1);
        assert!(apply_transform(&grey, &TransformSpec::HueShift { degrees: 10.0 }).is_err());
    }

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[(0.2, 0.4, 0.9), (1.0, 0.0, 0.0), (0.5, 0.5, 0.5), (0.9, 0.8, 0.1)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-12 && (g - g2).abs() < 1e-12 && (b - b2).abs() < 1e-12);
        }
        let red = img();
        let shifted = apply_transform(&red, &TransformSpec::HueShift { degrees: 120.0 }).unwrap();
        assert_ne!(shifted, red);
        let desat = apply_transform(&red, &TransformSpec::SaturationScale { factor: 0.0 }).unwrap();
        for px in desat.data().chunks_exact(3) {
            assert!((px[0] - px[1]).abs() < 1e-12 && (px[1] - px[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn translation_grid_indexing() {
        let grid = TranslationGrid {
            max_shift: 1,
            cells: (-1..=1)
                .flat_map(|dy| {
                    (-1..=1).map(move |dx| GridCell {
                        dx,
                        dy,
                        mean_delta: (dx * 10 + dy) as f64,
                    })
                })
                .collect(),
        };
        assert_eq!(grid.get(1, -1), Some(9.0));
        assert_eq!(grid.get(2, 0), None);
        assert_eq!(grid.diagonal().len(), 3);
    }
}
