//! Evasion attacks: perturb an image until its hash departs from the
//! original by more than δ₀. Three variants — unrestricted, restricted to
//! Canny edge pixels, and a greedy few-pixels search.

use serde::{Deserialize, Serialize};

use crate::attack::{AttackReport, AttackSummary, Probe};
use crate::canny::{canny_edges, CannyConfig, PixelMask};
use crate::error::{ensure, Error, Result};
use crate::image::ImageTensor;
use crate::losses::{evasion_objective, ssim_deficit, LossValue, NORMALIZE_EPSILON};
use crate::lsh::{check_pipeline, hamming_distance, HashingMatrix, PerceptualHash};
use crate::network::EmbeddingNetwork;
use crate::par::{map_ordered, mean_std};
use crate::tensor_math::{AdamConfig, AdamState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Standard,
    EdgesOnly,
    FewPixels,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::EdgesOnly => "edges_only",
            Variant::FewPixels => "few_pixels",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FewPixelsConfig {
    pub learning_rate: f64,
    pub steps_per_set: usize,
    /// Steps (within one pixel set) at which the learning rate halves.
    pub lr_halving_at: Vec<usize>,
    pub max_pixels: usize,
}

impl Default for FewPixelsConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            steps_per_set: 20,
            lr_halving_at: vec![5, 10],
            max_pixels: 150,
        }
    }
}

impl FewPixelsConfig {
    fn learning_rate_at(&self, step: usize) -> f64 {
        let halvings = self.lr_halving_at.iter().filter(|&&m| m <= step).count();
        self.learning_rate * 0.5f64.powi(halvings as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvasionConfig {
    pub variant: Variant,
    pub delta0: f64,
    pub c: f64,
    pub epsilon: f64,
    pub max_steps: usize,
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub lambda_base: f64,
    pub lambda_decay: f64,
    pub few_pixels: FewPixelsConfig,
    pub canny: CannyConfig,
    pub seed: u64,
}

impl Default for EvasionConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Standard,
            delta0: 0.0,
            c: 5.0,
            epsilon: NORMALIZE_EPSILON,
            max_steps: 1000,
            learning_rate: 1e-3,
            betas: (0.9, 0.999),
            lambda_base: 5.0,
            lambda_decay: 0.99,
            few_pixels: FewPixelsConfig::default(),
            canny: CannyConfig::default(),
            seed: 0,
        }
    }
}

impl EvasionConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            (0.0..1.0).contains(&self.delta0),
            Config,
            "delta0 must lie in [0,1), got {}",
            self.delta0
        );
        ensure!(
            self.c > 0.0 && self.c.is_finite(),
            Config,
            "sigmoid scale c must be positive"
        );
        ensure!(self.epsilon > 0.0, Config, "normalization epsilon must be positive");
        ensure!(
            self.lambda_base >= 0.0 && self.lambda_decay >= 0.0,
            Config,
            "lambda schedule must be non-negative"
        );
        ensure!(self.few_pixels.max_pixels >= 1, Config, "max_pixels must be at least 1");
        ensure!(
            self.few_pixels.learning_rate > 0.0,
            Config,
            "few-pixels learning rate must be positive"
        );
        self.canny.validate()?;
        self.adam(self.learning_rate).validate()
    }

    /// SSIM weight `base · decay^step`, counting steps from 0.
    pub fn lambda_at(&self, step: usize) -> f64 {
        self.lambda_base * self.lambda_decay.powi(step as i32)
    }

    fn adam(&self, learning_rate: f64) -> AdamConfig {
        AdamConfig {
            learning_rate,
            beta1: self.betas.0,
            beta2: self.betas.1,
            ..AdamConfig::default()
        }
    }
}

struct Evaluation {
    probe: Probe,
    delta: f64,
}

fn evaluate(
    net: &EmbeddingNetwork,
    matrix: &HashingMatrix,
    x: &ImageTensor,
    original: &PerceptualHash,
) -> Result<Evaluation> {
    let probe = Probe::run(net, matrix, x)?;
    let delta = hamming_distance(&probe.hash, original)?;
    Ok(Evaluation { probe, delta })
}

impl Evaluation {
    fn initial(net: &EmbeddingNetwork, matrix: &HashingMatrix, x: &ImageTensor) -> Result<Self> {
        Ok(Self {
            probe: Probe::run(net, matrix, x)?,
            delta: 0.0,
        })
    }
}

/// The evasion objective `𝓛_MSE − λ·SSIM(x, x₀)` and its image gradient,
/// with the value reported as `𝓛_MSE + λ·(1 − SSIM)` (a constant shift that
/// keeps precision near SSIM = 1). `original` is the hash of `source`.
pub fn evasion_loss(
    net: &EmbeddingNetwork,
    matrix: &HashingMatrix,
    x: &ImageTensor,
    source: &ImageTensor,
    original: &PerceptualHash,
    lambda: f64,
    cfg: &EvasionConfig,
) -> Result<LossValue> {
    check_pipeline(net, matrix)?;
    let probe = Probe::run(net, matrix, x)?;
    objective(net, matrix, &probe, x, source, original, lambda, cfg)
}

#[allow(clippy::too_many_arguments)]
fn objective(
    net: &EmbeddingNetwork,
    matrix: &HashingMatrix,
    probe: &Probe,
    x: &ImageTensor,
    source: &ImageTensor,
    original: &PerceptualHash,
    lambda: f64,
    cfg: &EvasionConfig,
) -> Result<LossValue> {
    let mse = evasion_objective(&probe.y, original, cfg.c, cfg.epsilon)?;
    let mut gradient = probe.backward(net, matrix, &mse.gradient)?;
    let mut value = mse.value;
    if lambda != 0.0 {
        let deficit = ssim_deficit(x, source)?;
        value += lambda * deficit.value;
        gradient = gradient.zip_map(&deficit.gradient, |g, s| g + lambda * s)?;
    }
    if !value.is_finite() {
        return Err(Error::Optimization(format!("evasion loss became {value}")));
    }
    Ok(LossValue { value, gradient })
}

#[allow(clippy::too_many_arguments)]
fn evasion_gradient(
    net: &EmbeddingNetwork,
    matrix: &HashingMatrix,
    eval: &Evaluation,
    x: &ImageTensor,
    source: &ImageTensor,
    original: &PerceptualHash,
    lambda: f64,
    cfg: &EvasionConfig,
) -> Result<Vec<f64>> {
    Ok(objective(net, matrix, &eval.probe, x, source, original, lambda, cfg)?
        .gradient
        .into_data())
}

/// Runs the configured variant.
pub fn evade(
    net: &EmbeddingNetwork,
    matrix: &HashingMatrix,
    image: &ImageTensor,
    cfg: &EvasionConfig,
) -> Result<(ImageTensor, AttackReport)> {
    cfg.validate()?;
    check_pipeline(net, matrix)?;
    let mask = match cfg.variant {
        Variant::Standard => None,
        Variant::EdgesOnly => {
            let mask = canny_edges(image, &cfg.canny)?;
            ensure!(!mask.is_empty(), Precondition, "no edge pixels detected");
            Some(mask)
        }
        Variant::FewPixels => return evade_few_pixels(net, matrix, image, cfg),
    };
    evade_masked(net, matrix, image, mask.as_ref(), cfg)
}

/// Gradient evasion with an optional gradient mask; pixels outside the mask
/// keep their exact original values.
pub fn evade_masked(
    net: &EmbeddingNetwork,
    matrix: &HashingMatrix,
    image: &ImageTensor,
    mask: Option<&PixelMask>,
    cfg: &EvasionConfig,
) -> Result<(ImageTensor, AttackReport)> {
    cfg.validate()?;
    check_pipeline(net, matrix)?;
    if let Some(m) = mask {
        ensure!(
            m.height() == image.height() && m.width() == image.width(),
            Dimension,
            "mask is {}×{}, image is {}×{}",
            m.height(),
            m.width(),
            image.height(),
            image.width()
        );
    }
    let source = image.clone();
    let mut x = image.clone();
    let mut adam = AdamState::new(x.data().len(), cfg.adam(cfg.learning_rate))?;
    let mut eval = Evaluation::initial(net, matrix, image)?;
    let original = eval.probe.hash.clone();
    let mut steps = 0;
    while eval.delta <= cfg.delta0 && steps < cfg.max_steps {
        let mut grad = evasion_gradient(net, matrix, &eval, &x, &source, &original, cfg.lambda_at(steps), cfg)?;
        if let Some(m) = mask {
            m.apply(&mut grad);
        }
        adam.step(x.data_mut(), &grad)?;
        x.clamp();
        steps += 1;
        eval = evaluate(net, matrix, &x, &original)?;
    }
    let success = eval.delta > cfg.delta0;
    let report = AttackReport::measure(&source, &x, &original, &eval.probe.hash, success, steps)?;
    Ok((x, report))
}

/// Greedy few-pixels evasion: repeatedly adds the unselected pixel with the
/// largest loss-gradient magnitude (max over channels, ties to the lowest
/// row-major index) and optimizes only the selected pixels with a fresh Adam
/// state, until the hash departs or the pixel budget is exhausted.
pub fn evade_few_pixels(
    net: &EmbeddingNetwork,
    matrix: &HashingMatrix,
    image: &ImageTensor,
    cfg: &EvasionConfig,
) -> Result<(ImageTensor, AttackReport)> {
    cfg.validate()?;
    check_pipeline(net, matrix)?;
    let fp = &cfg.few_pixels;
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let source = image.clone();
    let mut x = image.clone();
    let mut selected = PixelMask::empty(h, w);
    let mut eval = Evaluation::initial(net, matrix, image)?;
    let original = eval.probe.hash.clone();
    let mut steps = 0;
    let mut pixels = 0;

    'grow: while eval.delta <= cfg.delta0 && pixels < fp.max_pixels.min(h * w) {
        let grad = evasion_gradient(net, matrix, &eval, &x, &source, &original, 0.0, cfg)?;
        let mut best: Option<(usize, f64)> = None;
        for (p, px) in grad.chunks_exact(c).enumerate() {
            if selected.cells()[p] {
                continue;
            }
            let g = px.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if best.is_none_or(|(_, b)| g > b) {
                best = Some((p, g));
            }
        }
        let (p, _) = best.expect("an unselected pixel remains");
        selected.set(p / w, p % w, true);
        pixels += 1;

        let mut adam = AdamState::new(x.data().len(), cfg.adam(fp.learning_rate))?;
        let mut grad = grad;
        for s in 0..fp.steps_per_set {
            if s > 0 {
                grad = evasion_gradient(net, matrix, &eval, &x, &source, &original, 0.0, cfg)?;
            }
            selected.apply(&mut grad);
            adam.set_learning_rate(fp.learning_rate_at(s));
            adam.step(x.data_mut(), &grad)?;
            x.clamp();
            steps += 1;
            eval = evaluate(net, matrix, &x, &original)?;
            if eval.delta > cfg.delta0 {
                break 'grow;
            }
        }
    }
    let success = eval.delta > cfg.delta0;
    let mut report = AttackReport::measure(&source, &x, &original, &eval.probe.hash, success, steps)?;
    report.pixels_selected = Some(pixels);
    report.pixels_changed = Some(x.changed_pixels(&source)?);
    Ok((x, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvasionBatch {
    pub variant: Variant,
    pub reports: Vec<AttackReport>,
    pub summary: AttackSummary,
}

/// Runs `evade` on every image. An image without edge pixels cannot be
/// attacked edges-only; it counts as a failed attempt instead of aborting
/// the batch.
pub fn evade_batch(
    net: &EmbeddingNetwork,
    matrix: &HashingMatrix,
    images: &[ImageTensor],
    cfg: &EvasionConfig,
) -> Result<EvasionBatch> {
    ensure!(!images.is_empty(), Input, "evasion corpus is empty");
    let reports = map_ordered(images, |i, img| match evade(net, matrix, img, cfg) {
        Ok((_, report)) => Ok(report),
        Err(Error::Precondition(reason)) => {
            log::warn!("image {i} not attacked: {reason}");
            let hash = crate::lsh::compute_hash(net, matrix, img)?;
            AttackReport::measure(img, img, &hash, &hash, false, 0)
        }
        Err(e) => Err(e),
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(EvasionBatch {
        variant: cfg.variant,
        summary: AttackSummary::from_reports(&reports),
        reports,
    })
}

/// Aggregates of the standard attack at one δ₀, with ratios to the δ₀ = 0 row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta0: f64,
    pub summary: AttackSummary,
    pub l2_ratio: Option<f64>,
    pub linf_ratio: Option<f64>,
    pub ssim_ratio: Option<f64>,
    pub steps_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// `reports[i][j]` is the run of image `j` at `rows[i].delta0`.
    pub reports: Vec<Vec<AttackReport>>,
}

/// Standard attack per (image, δ₀) pair.
pub fn delta0_sweep(
    net: &EmbeddingNetwork,
    matrix: &HashingMatrix,
    images: &[ImageTensor],
    delta0_values: &[f64],
    cfg: &EvasionConfig,
) -> Result<SweepReport> {
    ensure!(!images.is_empty(), Input, "sweep corpus is empty");
    ensure!(!delta0_values.is_empty(), Input, "no δ₀ values given");
    ensure!(
        delta0_values.windows(2).all(|w| w[0] < w[1]) && delta0_values.iter().all(|d| (0.0..1.0).contains(d)),
        Input,
        "δ₀ values must be strictly ascending within [0,1)"
    );
    let pairs: Vec<(f64, usize)> = delta0_values
        .iter()
        .flat_map(|&d| (0..images.len()).map(move |i| (d, i)))
        .collect();
    let flat = map_ordered(&pairs, |_, &(delta0, i)| {
        let run = EvasionConfig {
            variant: Variant::Standard,
            delta0,
            ..cfg.clone()
        };
        evade(net, matrix, &images[i], &run).map(|r| r.1)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let reports: Vec<Vec<AttackReport>> = flat.chunks(images.len()).map(<[_]>::to_vec).collect();

    let summaries: Vec<AttackSummary> = reports.iter().map(|r| AttackSummary::from_reports(r)).collect();
    let base = delta0_values
        .iter()
        .position(|&d| d == 0.0)
        .map(|i| summaries[i].clone());
    let ratio = |v: Option<f64>, b: Option<f64>| match (v, b) {
        (Some(v), Some(b)) if b != 0.0 => Some(v / b),
        (Some(0.0), Some(_)) => Some(1.0),
        _ => None,
    };
    let rows = delta0_values
        .iter()
        .zip(summaries)
        .map(|(&delta0, summary)| {
            let b = base.as_ref();
            SweepRow {
                delta0,
                l2_ratio: ratio(summary.l2_mean, b.and_then(|b| b.l2_mean)),
                linf_ratio: ratio(summary.linf_mean, b.and_then(|b| b.linf_mean)),
                ssim_ratio: ratio(summary.ssim_mean, b.and_then(|b| b.ssim_mean)),
                steps_ratio: ratio(summary.steps_mean, b.and_then(|b| b.steps_mean)),
                summary,
            }
        })
        .collect();
    Ok(SweepReport { rows, reports })
}

/// Mean steps per δ₀ row, for trend checks.
pub fn sweep_mean_steps(report: &SweepReport) -> Vec<Option<f64>> {
    report
        .reports
        .iter()
        .map(|runs| {
            let steps: Vec<f64> = runs.iter().map(|r| r.steps as f64).collect();
            mean_std(&steps).map(|(m, _)| m)
        })
        .collect()
}
