//! Shared machinery for the gradient attacks: per-run reports, Table-style
//! aggregates, and the forward/backward probe through the full pipeline.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::ImageTensor;
use crate::losses::ssim_score;
use crate::lsh::{binarize, hamming_distance, HashingMatrix, PerceptualHash};
use crate::network::{EmbeddingNetwork, ForwardTrace};
use crate::par::mean_std;
use crate::tensor_math::Tensor;

/// Outcome of one attack on one image. Distances are measured in `[-1,1]`
/// pixel space over the flattened difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub success: bool,
    /// Optimizer updates applied before stopping.
    pub steps: usize,
    pub l2: f64,
    pub linf: f64,
    pub ssim: f64,
    /// Normalized Hamming distance between the final and the initial hash.
    pub delta: f64,
    pub initial_hash: String,
    pub final_hash: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pixels_selected: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pixels_changed: Option<usize>,
}

impl AttackReport {
    pub(crate) fn measure(
        original: &ImageTensor,
        perturbed: &ImageTensor,
        initial: &PerceptualHash,
        final_hash: &PerceptualHash,
        success: bool,
        steps: usize,
    ) -> Result<Self> {
        Ok(Self {
            success,
            steps,
            l2: perturbed.l2_distance(original)?,
            linf: perturbed.linf_distance(original)?,
            ssim: ssim_score(perturbed, original)?,
            delta: hamming_distance(final_hash, initial)?,
            initial_hash: initial.to_hex(),
            final_hash: final_hash.to_hex(),
            target_hash: None,
            pixels_selected: None,
            pixels_changed: None,
        })
    }
}

/// Success rate plus mean ± population std of each metric over the
/// successful runs (`None` when no run succeeded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub attempts: usize,
    pub successes: usize,
    pub sr: f64,
    pub l2_mean: Option<f64>,
    pub l2_std: Option<f64>,
    pub linf_mean: Option<f64>,
    pub linf_std: Option<f64>,
    pub ssim_mean: Option<f64>,
    pub ssim_std: Option<f64>,
    pub steps_mean: Option<f64>,
    pub steps_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pixels_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pixels_std: Option<f64>,
}

impl AttackSummary {
    pub fn from_reports(reports: &[AttackReport]) -> Self {
        let ok: Vec<&AttackReport> = reports.iter().filter(|r| r.success).collect();
        let stat = |f: &dyn Fn(&AttackReport) -> f64| {
            let v: Vec<f64> = ok.iter().map(|r| f(r)).collect();
            mean_std(&v).unzip()
        };
        let (l2_mean, l2_std) = stat(&|r| r.l2);
        let (linf_mean, linf_std) = stat(&|r| r.linf);
        let (ssim_mean, ssim_std) = stat(&|r| r.ssim);
        let (steps_mean, steps_std) = stat(&|r| r.steps as f64);
        let (pixels_mean, pixels_std) = if ok.iter().all(|r| r.pixels_changed.is_some()) {
            stat(&|r| r.pixels_changed.unwrap_or(0) as f64)
        } else {
            (None, None)
        };
        Self {
            attempts: reports.len(),
            successes: ok.len(),
            sr: if reports.is_empty() {
                0.0
            } else {
                ok.len() as f64 / reports.len() as f64
            },
            l2_mean,
            l2_std,
            linf_mean,
            linf_std,
            ssim_mean,
            ssim_std,
            steps_mean,
            steps_std,
            pixels_mean,
            pixels_std,
        }
    }
}

/// One forward pass with everything needed for a hash check and a backward pass.
pub(crate) struct Probe {
    trace: ForwardTrace,
    pub y: Tensor,
    pub hash: PerceptualHash,
}

impl Probe {
    pub fn run(net: &EmbeddingNetwork, matrix: &HashingMatrix, x: &ImageTensor) -> Result<Self> {
        let trace = net.forward_trace(x)?;
        let y = matrix.project(trace.output())?;
        let hash = binarize(&y);
        Ok(Self { trace, y, hash })
    }

    /// Image gradient of `⟨y, upstream⟩`.
    pub fn backward(&self, net: &EmbeddingNetwork, matrix: &HashingMatrix, upstream: &Tensor) -> Result<Tensor> {
        let dz = matrix.project_backward(upstream)?;
        net.backward_input(&self.trace, &dz)
    }
}
