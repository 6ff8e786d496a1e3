//! Forced hash collisions: push an image's hash onto a chosen target with a
//! hinge loss while an SSIM term keeps the perturbation small.

use serde::{Deserialize, Serialize};

use crate::attack::{AttackReport, AttackSummary, Probe};
use crate::error::{ensure, Error, Result};
use crate::image::ImageTensor;
use crate::losses::{hinge_loss, ssim_deficit, ssim_score, LossValue};
use crate::lsh::{check_pipeline, compute_hash, HashDatabase, HashingMatrix, PerceptualHash};
use crate::network::EmbeddingNetwork;
use crate::par::map_ordered;
use crate::tensor_math::{AdamConfig, AdamState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollisionConfig {
    pub lambda_ssim: f64,
    pub margin_d: f64,
    pub max_steps: usize,
    pub learning_rate: f64,
    pub betas: (f64, f64),
    /// Extra iterations after the first collision that try to raise SSIM
    /// while keeping the target hash; 0 disables polishing.
    pub polish_steps: usize,
    pub seed: u64,
}

impl Default for CollisionConfig {
    fn default() -> Self {
        Self {
            lambda_ssim: 100.0,
            margin_d: 0.0,
            max_steps: 10_000,
            learning_rate: 1e-3,
            betas: (0.9, 0.999),
            polish_steps: 0,
            seed: 0,
        }
    }
}

impl CollisionConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.max_steps >= 1, Config, "collision max_steps must be at least 1");
        ensure!(
            self.lambda_ssim >= 0.0 && self.lambda_ssim.is_finite(),
            Config,
            "lambda_ssim must be non-negative, got {}",
            self.lambda_ssim
        );
        ensure!(
            self.margin_d >= 0.0 && self.margin_d.is_finite(),
            Config,
            "hinge margin must be non-negative, got {}",
            self.margin_d
        );
        self.adam().validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.betas.0,
            beta2: self.betas.1,
            ..AdamConfig::default()
        }
    }
}

/// Minimizes `hinge(y, target, d) − λ·SSIM(x, x₀)` with Adam, clamping to
/// `[-1,1]` after every update, until the hash equals `target` or the step
/// budget runs out.
pub fn force_collision(
    net: &EmbeddingNetwork,
    matrix: &HashingMatrix,
    image: &ImageTensor,
    target: &PerceptualHash,
    cfg: &CollisionConfig,
) -> Result<(ImageTensor, AttackReport)> {
    cfg.validate()?;
    check_pipeline(net, matrix)?;
    ensure!(
        target.len() == matrix.bits(),
        Input,
        "target hash has {} bits, pipeline produces {}",
        target.len(),
        matrix.bits()
    );
    let original = image.clone();
    let mut x = image.clone();
    let mut adam = AdamState::new(x.data().len(), cfg.adam())?;
    let mut probe = Probe::run(net, matrix, &x)?;
    let initial = probe.hash.clone();
    let mut steps = 0;

    while probe.hash != *target && steps < cfg.max_steps {
        let grad = objective_gradient(net, matrix, &probe, &x, &original, target, cfg)?;
        adam.step(x.data_mut(), &grad)?;
        x.clamp();
        steps += 1;
        probe = Probe::run(net, matrix, &x)?;
    }
    let success = probe.hash == *target;

    if success && cfg.polish_steps > 0 {
        x = polish(net, matrix, x, &original, target, cfg, &mut adam)?;
        probe = Probe::run(net, matrix, &x)?;
    }

    let mut report = AttackReport::measure(&original, &x, &initial, &probe.hash, success, steps)?;
    report.target_hash = Some(target.to_hex());
    Ok((x, report))
}

/// The collision objective `hinge(y, target, d) − λ·SSIM(x, x₀)` and its
/// image gradient. The value is reported as `hinge + λ·(1 − SSIM)`, the same
/// function shifted by the constant λ, which keeps full precision near SSIM = 1.
pub fn collision_objective(
    net: &EmbeddingNetwork,
    matrix: &HashingMatrix,
    x: &ImageTensor,
    original: &ImageTensor,
    target: &PerceptualHash,
    cfg: &CollisionConfig,
) -> Result<LossValue> {
    check_pipeline(net, matrix)?;
    ensure!(
        target.len() == matrix.bits(),
        Input,
        "target hash length does not match the pipeline"
    );
    objective(net, matrix, &Probe::run(net, matrix, x)?, x, original, target, cfg)
}

fn objective(
    net: &EmbeddingNetwork,
    matrix: &HashingMatrix,
    probe: &Probe,
    x: &ImageTensor,
    original: &ImageTensor,
    target: &PerceptualHash,
    cfg: &CollisionConfig,
) -> Result<LossValue> {
    let hinge = hinge_loss(&probe.y, target, cfg.margin_d)?;
    let deficit = ssim_deficit(x, original)?;
    let value = hinge.value + cfg.lambda_ssim * deficit.value;
    if !value.is_finite() {
        return Err(Error::Optimization(format!("collision loss became {value}")));
    }
    let dx = probe.backward(net, matrix, &hinge.gradient)?;
    let gradient = dx.zip_map(&deficit.gradient, |h, s| h + cfg.lambda_ssim * s)?;
    Ok(LossValue { value, gradient })
}

fn objective_gradient(
    net: &EmbeddingNetwork,
    matrix: &HashingMatrix,
    probe: &Probe,
    x: &ImageTensor,
    original: &ImageTensor,
    target: &PerceptualHash,
    cfg: &CollisionConfig,
) -> Result<Vec<f64>> {
    Ok(objective(net, matrix, probe, x, original, target, cfg)?
        .gradient
        .into_data())
}

/// Continues optimizing after the collision and keeps the highest-SSIM
/// iterate that still carries the target hash.
fn polish(
    net: &EmbeddingNetwork,
    matrix: &HashingMatrix,
    start: ImageTensor,
    original: &ImageTensor,
    target: &PerceptualHash,
    cfg: &CollisionConfig,
    adam: &mut AdamState,
) -> Result<ImageTensor> {
    let mut best_ssim = ssim_score(&start, original)?;
    let mut best = start.clone();
    let mut x = start;
    for _ in 0..cfg.polish_steps {
        let probe = Probe::run(net, matrix, &x)?;
        let grad = objective_gradient(net, matrix, &probe, &x, original, target, cfg)?;
        adam.step(x.data_mut(), &grad)?;
        x.clamp();
        if compute_hash(net, matrix, &x)? == *target {
            let s = ssim_score(&x, original)?;
            if s > best_ssim {
                best_ssim = s;
                best = x.clone();
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionBatch {
    pub reports: Vec<AttackReport>,
    pub summary: AttackSummary,
}

/// Attacks every image toward its nearest database hash.
pub fn collide_against_db(
    net: &EmbeddingNetwork,
    matrix: &HashingMatrix,
    images: &[ImageTensor],
    db: &HashDatabase,
    cfg: &CollisionConfig,
) -> Result<CollisionBatch> {
    cfg.validate()?;
    check_pipeline(net, matrix)?;
    ensure!(!images.is_empty(), Input, "collision corpus is empty");
    ensure!(!db.is_empty(), Input, "hash database is empty");
    ensure!(
        db.bits() == matrix.bits(),
        Input,
        "database stores {}-bit hashes, pipeline produces {}",
        db.bits(),
        matrix.bits()
    );
    let reports = map_ordered(images, |_, img| -> Result<AttackReport> {
        let own = compute_hash(net, matrix, img)?;
        let (_, target, _) = db.nearest(&own)?;
        Ok(force_collision(net, matrix, img, target, cfg)?.1)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let summary = AttackSummary::from_reports(&reports);
    Ok(CollisionBatch { reports, summary })
}
