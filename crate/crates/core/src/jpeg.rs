//! Baseline JPEG quantization round trip.
//!
//! Encodes 8×8 blocks with the forward DCT, quantizes with the standard
//! luminance/chrominance tables scaled by quality, then dequantizes and
//! inverts. Entropy coding is lossless and therefore skipped: the decoded
//! pixels equal those of a full baseline encode/decode with 4:4:4 sampling.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{ensure, Result};
use crate::image::{u8_to_unit, ImageTensor};

const LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

const CHROMA_TABLE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Quality-scaled quantization table (libjpeg convention).
pub fn quantization_table(base: &[u16; 64], quality: u8) -> [f64; 64] {
    let q = quality.clamp(1, 100) as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    out
}

pub fn luma_table(quality: u8) -> [f64; 64] {
    quantization_table(&LUMA_TABLE, quality)
}

pub fn chroma_table(quality: u8) -> [f64; 64] {
    quantization_table(&CHROMA_TABLE, quality)
}

/// `cos((2x+1)uπ/16)·c(u)/2` for the orthonormal 8-point DCT-II.
fn dct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let cu = if u == 0 { (0.5f64).sqrt() } else { 1.0 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = 0.5 * cu * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
            }
        }
        b
    })
}

fn fdct(block: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| b[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| b[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

fn idct(coeffs: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v * 8 + x] = (0..8).map(|u| b[u][x] * coeffs[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| b[v][y] * tmp[v * 8 + x]).sum();
        }
    }
    out
}

/// Quantizes and reconstructs one plane of level-shifted samples in place.
/// Edge blocks are padded by replicating the last row/column.
fn roundtrip_plane(plane: &mut [f64], height: usize, width: usize, table: &[f64; 64]) {
    for by in (0..height).step_by(8) {
        for bx in (0..width).step_by(8) {
            let mut block = [0.0; 64];
            for y in 0..8 {
                for x in 0..8 {
                    let sy = (by + y).min(height - 1);
                    let sx = (bx + x).min(width - 1);
                    block[y * 8 + x] = plane[sy * width + sx] - 128.0;
                }
            }
            let mut coeffs = fdct(&block);
            for (c, q) in coeffs.iter_mut().zip(table) {
                *c = (*c / q).round() * q;
            }
            let rec = idct(&coeffs);
            for y in 0..8.min(height - by) {
                for x in 0..8.min(width - bx) {
                    plane[(by + y) * width + bx + x] = rec[y * 8 + x] + 128.0;
                }
            }
        }
    }
}

/// JPEG compress/decompress at `quality ∈ [1, 100]`. Supports 1 (greyscale)
/// or 3 (RGB) channels.
pub fn jpeg_roundtrip(image: &ImageTensor, quality: u8) -> Result<ImageTensor> {
    ensure!(
        (1..=100).contains(&quality),
        Input,
        "jpeg quality must be in 1..=100, got {quality}"
    );
    let (h, w, c) = (image.height(), image.width(), image.channels());
    ensure!(c == 1 || c == 3, Input, "jpeg supports 1 or 3 channels, got {c}");
    let samples: Vec<f64> = image.to_u8().into_iter().map(f64::from).collect();
    let n = h * w;

    let decoded: Vec<u8> = if c == 1 {
        let mut y = samples;
        roundtrip_plane(&mut y, h, w, &luma_table(quality));
        y.into_iter().map(to_sample).collect()
    } else {
        let (mut yp, mut cb, mut cr) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for (i, px) in samples.chunks_exact(3).enumerate() {
            let (r, g, b) = (px[0], px[1], px[2]);
            yp[i] = 0.299 * r + 0.587 * g + 0.114 * b;
            cb[i] = -0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0;
            cr[i] = 0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0;
        }
        // Encoders store the colour-converted planes as 8-bit samples.
        for plane in [&mut yp, &mut cb, &mut cr] {
            for v in plane.iter_mut() {
                *v = v.round().clamp(0.0, 255.0);
            }
        }
        let (lt, ct) = (luma_table(quality), chroma_table(quality));
        roundtrip_plane(&mut yp, h, w, &lt);
        roundtrip_plane(&mut cb, h, w, &ct);
        roundtrip_plane(&mut cr, h, w, &ct);
        let mut out = Vec::with_capacity(n * 3);
        for i in 0..n {
            let (y, cb, cr) = (yp[i], cb[i] - 128.0, cr[i] - 128.0);
            out.push(to_sample(y + 1.402 * cr));
            out.push(to_sample(y - 0.344_136 * cb - 0.714_136 * cr));
            out.push(to_sample(y + 1.772 * cb));
        }
        out
    };
    ImageTensor::new(h, w, c, decoded.into_iter().map(u8_to_unit).collect())
}

fn to_sample(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}
