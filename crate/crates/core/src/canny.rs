//! Canny edge detection on the greyscale image, producing the pixel mask used
//! by the masked evasion attacks.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::ImageTensor;
use crate::transforms::luminance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CannyConfig {
    pub gaussian_sigma: f64,
    pub low: f64,
    pub high: f64,
}

impl Default for CannyConfig {
    fn default() -> Self {
        Self {
            gaussian_sigma: 3.0,
            low: 0.1,
            high: 0.2,
        }
    }
}

impl CannyConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.gaussian_sigma > 0.0 && self.gaussian_sigma.is_finite(),
            Config,
            "gaussian sigma must be positive"
        );
        ensure!(
            0.0 <= self.low && self.low <= self.high,
            Config,
            "canny thresholds must satisfy 0 ≤ low ≤ high, got {} / {}",
            self.low,
            self.high
        );
        Ok(())
    }
}

/// Boolean H×W grid; a set pixel covers all of its channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelMask {
    height: usize,
    width: usize,
    cells: Vec<bool>,
}

impl PixelMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cells: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cells: vec![true; height * width],
        }
    }

    pub fn from_cells(height: usize, width: usize, cells: Vec<bool>) -> Result<Self> {
        ensure!(
            cells.len() == height * width,
            Dimension,
            "mask has {} cells, expected {height}×{width}",
            cells.len()
        );
        Ok(Self { height, width, cells })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.cells[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.cells[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.contains(&true)
    }

    /// Zeroes every channel of every unmasked pixel in an H×W×C buffer.
    pub fn apply(&self, values: &mut [f64]) {
        let channels = values.len() / self.cells.len().max(1);
        for (px, &keep) in values.chunks_exact_mut(channels).zip(&self.cells) {
            if !keep {
                px.fill(0.0);
            }
        }
    }
}

fn gaussian_kernel(sigma: f64) -> [f64; 3] {
    let side = (-1.0 / (2.0 * sigma * sigma)).exp();
    let total = 1.0 + 2.0 * side;
    [side / total, 1.0 / total, side / total]
}

/// 3×3 correlation with replicated borders.
fn correlate(plane: &[f64], h: usize, w: usize, kernel: &[[f64; 3]; 3]) -> Vec<f64> {
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        plane[y * w + x]
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for (dy, row) in kernel.iter().enumerate() {
                for (dx, &k) in row.iter().enumerate() {
                    acc += k * at(y + dy as isize - 1, x + dx as isize - 1);
                }
            }
            out[y as usize * w + x as usize] = acc;
        }
    }
    out
}

/// Greyscale values in `[0,1]` (BT.601 weights for RGB).
pub fn greyscale(image: &ImageTensor) -> Vec<f64> {
    let unit: Vec<f64> = image.data().iter().map(|v| (v + 1.0) / 2.0).collect();
    unit.chunks_exact(image.channels()).map(luminance).collect()
}

/// Gaussian blur → Sobel (normalized by 8) → non-maximum suppression →
/// double threshold → 8-connected hysteresis.
pub fn canny_edges(image: &ImageTensor, cfg: &CannyConfig) -> Result<PixelMask> {
    cfg.validate()?;
    let (h, w) = (image.height(), image.width());
    let g = gaussian_kernel(cfg.gaussian_sigma);
    let blur_kernel: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| g[i] * g[j]));
    let blurred = correlate(&greyscale(image), h, w, &blur_kernel);

    let sobel_x = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]].map(|r| r.map(|v: f64| v / 8.0));
    let sobel_y = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]].map(|r| r.map(|v: f64| v / 8.0));
    let gx = correlate(&blurred, h, w, &sobel_x);
    let gy = correlate(&blurred, h, w, &sobel_y);
    let magnitude: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();

    let mag_at = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            magnitude[y as usize * w + x as usize]
        }
    };
    let mut thin = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = magnitude[i];
            if m <= 0.0 {
                continue;
            }
            // Direction quantized to 0°, 45°, 90°, 135° (image rows grow downwards).
            let angle = gy[i].atan2(gx[i]).to_degrees().rem_euclid(180.0);
            let (dy, dx) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let (yi, xi) = (y as isize, x as isize);
            if m >= mag_at(yi + dy, xi + dx) && m >= mag_at(yi - dy, xi - dx) {
                thin[i] = m;
            }
        }
    }

    let mut mask = PixelMask::empty(h, w);
    let mut queue: VecDeque<usize> = VecDeque::new();
    for (i, &m) in thin.iter().enumerate() {
        if m > cfg.high {
            mask.cells[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !mask.cells[j] && thin[j] > cfg.low {
                    mask.cells[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::InputSpec;

    #[test]
    fn constant_image_has_no_edges() {
        let img = ImageTensor::filled(InputSpec::new(16, 16, 3), 0.3).unwrap();
        assert!(canny_edges(&img, &CannyConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn kernel_is_normalized() {
        let g = gaussian_kernel(3.0);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(g[1] > g[0]);
    }

    #[test]
    fn mask_apply_zeroes_unmasked_channels() {
        let mut mask = PixelMask::empty(1, 2);
        mask.set(0, 1, true);
        let mut v = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        mask.apply(&mut v);
        assert_eq!(v, vec![0.0, 0.0, 0.0, 4.0, 5.0, 6.0]);
        assert_eq!(mask.count(), 1);
    }

    #[test]
    fn rejects_bad_thresholds() {
        let img = ImageTensor::filled(InputSpec::new(4, 4, 1), 0.0).unwrap();
        let cfg = CannyConfig {
            low: 0.3,
            high: 0.2,
            ..CannyConfig::default()
        };
        assert!(canny_edges(&img, &cfg).is_err());
    }
}
