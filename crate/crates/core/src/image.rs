use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensor_math::Tensor;

/// Expected image geometry of a pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl InputSpec {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.height > 0 && self.width > 0 && self.channels > 0,
            Config,
            "input dimensions must be positive, got {self:?}"
        );
        Ok(())
    }
}

/// `H×W×C` channel-last image with values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    tensor: Tensor,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_tensor(Tensor::new(vec![height, width, channels], data)?)
    }

    pub fn from_tensor(tensor: Tensor) -> Result<Self> {
        ensure!(
            tensor.rank() == 3,
            Input,
            "image must be H×W×C, got shape {:?}",
            tensor.shape()
        );
        if let Some(v) = tensor.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(crate::Error::Input(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(Self { tensor })
    }

    /// Constant image.
    pub fn filled(spec: InputSpec, value: f64) -> Result<Self> {
        Self::from_tensor(Tensor::filled(&spec.shape(), value))
    }

    /// Builds an image from interleaved 8-bit samples, mapping `[0,255]` to `[-1,1]`.
    pub fn from_u8(height: usize, width: usize, channels: usize, samples: &[u8]) -> Result<Self> {
        ensure!(
            samples.len() == height * width * channels,
            Dimension,
            "expected {} samples, got {}",
            height * width * channels,
            samples.len()
        );
        let data = samples.iter().map(|&s| u8_to_unit(s)).collect();
        Self::new(height, width, channels, data)
    }

    /// Interleaved 8-bit samples, rounding to nearest.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data().iter().map(|&v| unit_to_u8(v)).collect()
    }

    pub fn spec(&self) -> InputSpec {
        InputSpec::new(self.height(), self.width(), self.channels())
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn data(&self) -> &[f64] {
        self.tensor.data()
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let c = self.channels();
        &self.data()[(y * self.width() + x) * c..][..c]
    }

    /// Mutable access for optimizers; callers restore the range with [`Self::clamp`].
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        self.tensor.data_mut()
    }

    pub(crate) fn clamp(&mut self) {
        for v in self.tensor.data_mut() {
            *v = v.clamp(-1.0, 1.0);
        }
    }

    pub fn l2_distance(&self, other: &ImageTensor) -> Result<f64> {
        Ok(self.tensor.sub(&other.tensor)?.norm_l2())
    }

    pub fn linf_distance(&self, other: &ImageTensor) -> Result<f64> {
        Ok(self.tensor.sub(&other.tensor)?.norm_linf())
    }

    /// Number of pixel positions where any channel differs.
    pub fn changed_pixels(&self, other: &ImageTensor) -> Result<usize> {
        self.tensor.expect_shape(other.tensor.shape())?;
        let c = self.channels();
        Ok(self
            .data()
            .chunks_exact(c)
            .zip(other.data().chunks_exact(c))
            .filter(|(a, b)| a != b)
            .count())
    }

    /// Bilinear resampling with corner alignment: output pixel `i` samples
    /// source coordinate `i·(H−1)/(h−1)`.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Result<ImageTensor> {
        ensure!(height > 0 && width > 0, Input, "resize target must be non-empty");
        let c = self.channels();
        let scale = |src: usize, dst: usize| {
            if dst > 1 {
                (src - 1) as f64 / (dst - 1) as f64
            } else {
                0.0
            }
        };
        let (sy, sx) = (scale(self.height(), height), scale(self.width(), width));
        let mut data = Vec::with_capacity(height * width * c);
        for y in 0..height {
            for x in 0..width {
                for ch in 0..c {
                    data.push(self.sample_bilinear(y as f64 * sy, x as f64 * sx, ch));
                }
            }
        }
        ImageTensor::new(height, width, c, data)
    }

    /// Bilinear sample at a fractional in-bounds source position.
    pub(crate) fn sample_bilinear(&self, y: f64, x: f64, ch: usize) -> f64 {
        let (h, w, c) = (self.height(), self.width(), self.channels());
        let y0 = (y.floor() as usize).min(h - 1);
        let x0 = (x.floor() as usize).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let fy = (y - y0 as f64).clamp(0.0, 1.0);
        let fx = (x - x0 as f64).clamp(0.0, 1.0);
        let at = |yy: usize, xx: usize| self.data()[(yy * w + xx) * c + ch];
        let top = if fx == 0.0 {
            at(y0, x0)
        } else {
            at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx
        };
        if fy == 0.0 {
            return top;
        }
        let bottom = if fx == 0.0 {
            at(y1, x0)
        } else {
            at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx
        };
        (top * (1.0 - fy) + bottom * fy).clamp(-1.0, 1.0)
    }
}

#[inline]
pub fn u8_to_unit(s: u8) -> f64 {
    s as f64 / 127.5 - 1.0
}

#[inline]
pub fn unit_to_u8(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}
