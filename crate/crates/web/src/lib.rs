//! Browser bindings: hash an image, run the standard evasion attack on it,
//! and measure how far a transformation moves its hash.

use wasm_bindgen::prelude::*;

use phash_core::evasion::{evade, EvasionConfig, Variant};
use phash_core::transforms::{apply_transform, FlipAxis, TransformSpec};
use phash_core::{compute_hash, hamming_distance, synthetic, EmbeddingNetwork, HashingMatrix, ImageTensor};

const SIDE: usize = 64;

fn js_err(e: phash_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// RGBA canvas bytes → model-space RGB tensor at the network's input size.
fn from_rgba(rgba: &[u8], width: usize, height: usize) -> Result<ImageTensor, JsError> {
    if rgba.len() != width * height * 4 {
        return Err(JsError::new("pixel buffer does not match width × height × 4"));
    }
    let rgb: Vec<u8> = rgba.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
    let img = ImageTensor::from_u8(height, width, 3, &rgb).map_err(js_err)?;
    if (height, width) == (SIDE, SIDE) {
        Ok(img)
    } else {
        img.resize_bilinear(SIDE, SIDE).map_err(js_err)
    }
}

fn to_rgba(img: &ImageTensor) -> Vec<u8> {
    img.to_u8()
        .chunks_exact(3)
        .flat_map(|p| [p[0], p[1], p[2], 255])
        .collect()
}

#[wasm_bindgen]
pub struct AttackOutcome {
    success: bool,
    steps: usize,
    ssim: f64,
    delta: f64,
    initial_hash: String,
    final_hash: String,
    rgba: Vec<u8>,
}

#[wasm_bindgen]
impl AttackOutcome {
    #[wasm_bindgen(getter)]
    pub fn success(&self) -> bool {
        self.success
    }

    #[wasm_bindgen(getter)]
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[wasm_bindgen(getter)]
    pub fn ssim(&self) -> f64 {
        self.ssim
    }

    #[wasm_bindgen(getter)]
    pub fn delta(&self) -> f64 {
        self.delta
    }

    #[wasm_bindgen(getter, js_name = initialHash)]
    pub fn initial_hash(&self) -> String {
        self.initial_hash.clone()
    }

    #[wasm_bindgen(getter, js_name = finalHash)]
    pub fn final_hash(&self) -> String {
        self.final_hash.clone()
    }

    /// 64×64 RGBA pixels of the perturbed image.
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

#[wasm_bindgen]
pub struct TransformOutcome {
    delta: f64,
    hash: String,
    rgba: Vec<u8>,
}

#[wasm_bindgen]
impl TransformOutcome {
    #[wasm_bindgen(getter)]
    pub fn delta(&self) -> f64 {
        self.delta
    }

    #[wasm_bindgen(getter)]
    pub fn hash(&self) -> String {
        self.hash.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

/// The seeded desk pipeline: 64×64×3 input, 128-d embedding, 96-bit hash.
#[wasm_bindgen]
pub struct Lab {
    net: EmbeddingNetwork,
    matrix: HashingMatrix,
}

#[wasm_bindgen]
impl Lab {
    #[wasm_bindgen(constructor)]
    pub fn new(network_seed: u64, matrix_seed: u64) -> Result<Lab, JsError> {
        let net = EmbeddingNetwork::desk(network_seed);
        let matrix = HashingMatrix::generate(net.output_dim(), 96, matrix_seed).map_err(js_err)?;
        Ok(Lab { net, matrix })
    }

    pub fn side(&self) -> usize {
        SIDE
    }

    /// 64×64 RGBA pixels of a procedural scene.
    #[wasm_bindgen(js_name = syntheticScene)]
    pub fn synthetic_scene(&self, seed: u64) -> Vec<u8> {
        to_rgba(&synthetic::scene(self.net.input_spec(), seed))
    }

    /// 96-bit hash as 24 hex digits.
    pub fn hash(&self, rgba: &[u8], width: usize, height: usize) -> Result<String, JsError> {
        let img = from_rgba(rgba, width, height)?;
        Ok(compute_hash(&self.net, &self.matrix, &img).map_err(js_err)?.to_hex())
    }

    /// Standard gradient evasion until more than `delta0` of the bits flip.
    pub fn evade(&self, rgba: &[u8], width: usize, height: usize, delta0: f64) -> Result<AttackOutcome, JsError> {
        let img = from_rgba(rgba, width, height)?;
        let cfg = EvasionConfig {
            delta0,
            ..EvasionConfig::with_variant(Variant::Standard)
        };
        let (out, report) = evade(&self.net, &self.matrix, &img, &cfg).map_err(js_err)?;
        Ok(AttackOutcome {
            success: report.success,
            steps: report.steps,
            ssim: report.ssim,
            delta: report.delta,
            initial_hash: report.initial_hash,
            final_hash: report.final_hash,
            rgba: to_rgba(&out),
        })
    }

    /// Applies one transform (`rotate`, `translate`, `flip_horizontal`,
    /// `flip_vertical`, `hue_shift`, `brightness`, `contrast`, `jpeg`) and
    /// reports the normalized Hamming distance to the original hash.
    pub fn transform(
        &self,
        rgba: &[u8],
        width: usize,
        height: usize,
        kind: &str,
        amount: f64,
    ) -> Result<TransformOutcome, JsError> {
        let spec = match kind {
            "rotate" => TransformSpec::Rotate { degrees: amount },
            "translate" => TransformSpec::Translate {
                dx: amount.round() as i64,
                dy: 0,
            },
            "flip_horizontal" => TransformSpec::Flip {
                axis: FlipAxis::Horizontal,
            },
            "flip_vertical" => TransformSpec::Flip {
                axis: FlipAxis::Vertical,
            },
            "hue_shift" => TransformSpec::HueShift { degrees: amount },
            "brightness" => TransformSpec::BrightnessScale { factor: amount },
            "contrast" => TransformSpec::ContrastScale { factor: amount },
            "jpeg" => TransformSpec::Jpeg {
                quality: amount.clamp(1.0, 100.0) as u8,
            },
            other => return Err(JsError::new(&format!("unknown transform {other:?}"))),
        };
        let img = from_rgba(rgba, width, height)?;
        let before = compute_hash(&self.net, &self.matrix, &img).map_err(js_err)?;
        let moved = apply_transform(&img, &spec).map_err(js_err)?;
        let after = compute_hash(&self.net, &self.matrix, &moved).map_err(js_err)?;
        Ok(TransformOutcome {
            delta: hamming_distance(&before, &after).map_err(js_err)?,
            hash: after.to_hex(),
            rgba: to_rgba(&moved),
        })
    }
}
