//! Differentiable attack objectives: hinge collision loss, global SSIM, and
//! the relaxed negative-MSE evasion loss with its normalization.

use crate::error::{ensure, Result};
use crate::image::ImageTensor;
use crate::lsh::PerceptualHash;
use crate::tensor_math::{sigmoid, Tensor};

pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;
pub const NORMALIZE_EPSILON: f64 = 1e-12;

/// A scalar objective and its gradient with respect to the differentiation variable.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Tensor,
}

/// Maps bit 0 to −1 and bit 1 to +1.
#[inline]
pub fn psi(bit: bool) -> f64 {
    if bit {
        1.0
    } else {
        -1.0
    }
}

fn check_len(y: &Tensor, hash: &PerceptualHash) -> Result<()> {
    ensure!(
        y.len() == hash.len() && !hash.is_empty(),
        Input,
        "vector has {} entries, hash has {} bits",
        y.len(),
        hash.len()
    );
    Ok(())
}

/// `(1/k) Σ max(0, d − yᵢ·ψ(ĥᵢ))`, gradient with respect to `y`; the
/// subgradient at the kink is 0.
pub fn hinge_loss(y: &Tensor, target: &PerceptualHash, margin: f64) -> Result<LossValue> {
    check_len(y, target)?;
    ensure!(margin >= 0.0, Input, "hinge margin must be non-negative, got {margin}");
    let k = y.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; y.len()];
    for (i, (&yi, &bit)) in y.data().iter().zip(target.bits()).enumerate() {
        let s = psi(bit);
        let slack = margin - yi * s;
        if slack > 0.0 {
            value += slack;
            grad[i] = -s / k;
        }
    }
    Ok(LossValue {
        value: value / k,
        gradient: Tensor::new(y.shape().to_vec(), grad)?,
    })
}

/// Global SSIM between `x` and `y` over all samples jointly, with population
/// statistics. Gradient is with respect to `x`.
pub fn ssim(x: &ImageTensor, y: &ImageTensor) -> Result<LossValue> {
    ensure!(
        x.spec() == y.spec(),
        Input,
        "ssim inputs differ in shape: {:?} vs {:?}",
        x.spec(),
        y.spec()
    );
    let (_, value, grad) = ssim_with_grad(x.data(), y.data());
    Ok(LossValue {
        value,
        gradient: Tensor::new(x.as_tensor().shape().to_vec(), grad)?,
    })
}

/// `1 − SSIM(x, y)` with its gradient with respect to `x`. The value is
/// computed from the mean and variance of `x − y` directly, so it stays
/// accurate to full relative precision as SSIM approaches 1.
pub fn ssim_deficit(x: &ImageTensor, y: &ImageTensor) -> Result<LossValue> {
    ensure!(x.spec() == y.spec(), Input, "ssim inputs differ in shape");
    let (stats, _, grad) = ssim_with_grad(x.data(), y.data());
    Ok(LossValue {
        value: stats.deficit(),
        gradient: Tensor::new(x.as_tensor().shape().to_vec(), grad.into_iter().map(|g| -g).collect())?,
    })
}

/// SSIM value alone, skipping the gradient.
pub fn ssim_score(x: &ImageTensor, y: &ImageTensor) -> Result<f64> {
    ensure!(x.spec() == y.spec(), Input, "ssim inputs differ in shape");
    Ok(SsimStats::new(x.data(), y.data()).value())
}

fn ssim_with_grad(x: &[f64], y: &[f64]) -> (SsimStats, f64, Vec<f64>) {
    let s = SsimStats::new(x, y);
    let value = s.value();
    let n = x.len() as f64;
    let (a1, a2, b1, b2) = s.terms();
    let denom = b1 * b2;
    let grad = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            (2.0 / n) * (s.mu_y * a2 / denom + a1 * (yi - s.mu_y) / denom - value * (s.mu_x / b1 + (xi - s.mu_x) / b2))
        })
        .collect();
    (s, value, grad)
}

struct SsimStats {
    mu_x: f64,
    mu_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
    /// Mean and variance of `x − y`, kept separately so `1 − SSIM` does not
    /// cancel when the images are close.
    mu_d: f64,
    var_d: f64,
}

impl SsimStats {
    fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len() as f64;
        let mean = |it: &mut dyn Iterator<Item = f64>| compensated_sum(it) / n;
        let mu_x = mean(&mut x.iter().copied());
        let mu_y = mean(&mut y.iter().copied());
        let mu_d = mean(&mut x.iter().zip(y).map(|(a, b)| a - b));
        Self {
            mu_x,
            mu_y,
            var_x: mean(&mut x.iter().map(|a| (a - mu_x) * (a - mu_x))),
            var_y: mean(&mut y.iter().map(|b| (b - mu_y) * (b - mu_y))),
            cov: mean(&mut x.iter().zip(y).map(|(a, b)| (a - mu_x) * (b - mu_y))),
            mu_d,
            var_d: mean(&mut x.iter().zip(y).map(|(a, b)| (a - b - mu_d) * (a - b - mu_d))),
        }
    }

    fn terms(&self) -> (f64, f64, f64, f64) {
        (
            2.0 * self.mu_x * self.mu_y + SSIM_C1,
            2.0 * self.cov + SSIM_C2,
            self.mu_x * self.mu_x + self.mu_y * self.mu_y + SSIM_C1,
            self.var_x + self.var_y + SSIM_C2,
        )
    }

    fn value(&self) -> f64 {
        let (a1, a2, b1, b2) = self.terms();
        (a1 * a2) / (b1 * b2)
    }

    /// `1 − SSIM` as `(b1·b2 − a1·a2) / (b1·b2)`, using `b1 − a1 = μ_d²` and
    /// `b2 − a2 = σ_d²`.
    fn deficit(&self) -> f64 {
        let (a1, _, b1, b2) = self.terms();
        (self.mu_d * self.mu_d * b2 + a1 * self.var_d) / (b1 * b2)
    }
}

/// Neumaier summation.
fn compensated_sum(values: &mut dyn Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0_f64, 0.0_f64);
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + carry
}

/// `y / max(‖y‖₂, ε)`.
pub fn normalize_y(y: &Tensor, epsilon: f64) -> Result<Tensor> {
    ensure!(epsilon > 0.0, Input, "normalization epsilon must be positive");
    Ok(y.scale(1.0 / y.norm_l2().max(epsilon)))
}

/// Vector-Jacobian product of [`normalize_y`] at `y`.
pub fn normalize_y_backward(y: &Tensor, epsilon: f64, upstream: &Tensor) -> Result<Tensor> {
    ensure!(epsilon > 0.0, Input, "normalization epsilon must be positive");
    let norm = y.norm_l2();
    if norm < epsilon {
        return Ok(upstream.scale(1.0 / epsilon));
    }
    let unit = y.scale(1.0 / norm);
    let along = unit.dot(upstream)?;
    upstream.zip_map(&unit, |u, n| (u - along * n) / norm)
}

/// `−(1/k) Σ (σ(c·ỹᵢ) − h̃ᵢ)²` on an already normalized `ỹ`; gradient with
/// respect to `ỹ`.
pub fn mse_evasion_loss(y_normalized: &Tensor, original: &PerceptualHash, c: f64) -> Result<LossValue> {
    check_len(y_normalized, original)?;
    ensure!(
        c > 0.0 && c.is_finite(),
        Input,
        "sigmoid scale must be positive, got {c}"
    );
    let k = y_normalized.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; y_normalized.len()];
    for (i, (&yi, &bit)) in y_normalized.data().iter().zip(original.bits()).enumerate() {
        let s = sigmoid(c * yi);
        let diff = s - if bit { 1.0 } else { 0.0 };
        value -= diff * diff;
        grad[i] = -2.0 * diff * c * s * (1.0 - s) / k;
    }
    Ok(LossValue {
        value: value / k,
        gradient: Tensor::new(y_normalized.shape().to_vec(), grad)?,
    })
}

/// [`mse_evasion_loss`] composed with [`normalize_y`]; gradient with respect
/// to the raw projection `y`.
pub fn evasion_objective(y: &Tensor, original: &PerceptualHash, c: f64, epsilon: f64) -> Result<LossValue> {
    let normalized = normalize_y(y, epsilon)?;
    let inner = mse_evasion_loss(&normalized, original, c)?;
    Ok(LossValue {
        value: inner.value,
        gradient: normalize_y_backward(y, epsilon, &inner.gradient)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lsh::binarize;
    use crate::tensor_math::finite_diff_check;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bits(b: &[u8]) -> PerceptualHash {
        PerceptualHash::from_bits(b.iter().map(|&v| v == 1).collect())
    }

    fn random_image(rng: &mut ChaCha8Rng, len: usize) -> ImageTensor {
        ImageTensor::new(1, len, 1, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn psi_values() {
        assert_eq!(psi(false), -1.0);
        assert_eq!(psi(true), 1.0);
        assert_eq!(psi(false) * psi(false), 1.0);
        assert_eq!(psi(true) * psi(true), 1.0);
    }

    #[test]
    fn hinge_hand_cases() {
        let t = bits(&[1, 1]);
        assert_eq!(
            hinge_loss(&Tensor::from_vec(vec![0.5, 0.5]), &t, 0.0).unwrap().value,
            0.0
        );
        assert_eq!(
            hinge_loss(&Tensor::from_vec(vec![0.5, -0.5]), &t, 0.0).unwrap().value,
            0.25
        );
        assert_eq!(
            hinge_loss(&Tensor::from_vec(vec![0.5, 0.5]), &t, 1.0).unwrap().value,
            0.5
        );
        assert!(hinge_loss(&Tensor::from_vec(vec![0.5]), &t, 0.0).is_err());
        assert!(hinge_loss(&Tensor::from_vec(vec![0.5, 0.5]), &t, -1.0).is_err());
    }

    #[test]
    fn ssim_hand_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_image(&mut rng, 50);
        assert!((ssim(&x, &x).unwrap().value - 1.0).abs() < 1e-9);
        assert!(ssim(&x, &x).unwrap().gradient.norm_linf() < 1e-12);

        let zeros = ImageTensor::new(1, 4, 1, vec![0.0; 4]).unwrap();
        let ones = ImageTensor::new(1, 4, 1, vec![1.0; 4]).unwrap();
        let expected = (2.0 * 0.0 * 1.0 + 1e-4) * (0.0 + 9e-4) / ((0.0 + 1.0 + 1e-4) * (0.0 + 9e-4));
        let got = ssim(&zeros, &ones).unwrap().value;
        assert!((got - expected).abs() < 1e-15, "{got}");
        assert!((got - 9.999e-5).abs() < 1e-8);

        let other = ImageTensor::new(1, 3, 1, vec![0.0; 3]).unwrap();
        assert!(ssim(&zeros, &other).is_err());
    }

    #[test]
    fn normalize_cases() {
        assert_eq!(normalize_y(&Tensor::zeros(&[3]), 1e-12).unwrap(), Tensor::zeros(&[3]));
        let n = normalize_y(&Tensor::from_vec(vec![3.0, 4.0]), 1e-12).unwrap();
        assert!((n.data()[0] - 0.6).abs() < 1e-15 && (n.data()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn mse_hand_cases() {
        let v = mse_evasion_loss(&Tensor::from_vec(vec![0.0]), &bits(&[0]), 5.0).unwrap();
        assert_eq!(v.value, -0.25);
        let far = mse_evasion_loss(&Tensor::from_vec(vec![1e3, 1e3]), &bits(&[0, 0]), 5.0).unwrap();
        assert!((far.value + 1.0).abs() < 1e-12);
        let exact = mse_evasion_loss(&Tensor::from_vec(vec![-1e3, 1e3]), &bits(&[0, 1]), 5.0).unwrap();
        assert!(exact.value.abs() < 1e-12);
        assert!(mse_evasion_loss(&Tensor::from_vec(vec![0.0]), &bits(&[0]), 0.0).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let k = 12;
            let target = PerceptualHash::from_bits((0..k).map(|_| rng.random_bool(0.5)).collect());
            let y = Tensor::from_fn(&[k], |_| rng.random_range(-2.0..2.0));
            let d = rng.random_range(0.0..0.5);
            let h = hinge_loss(&y, &target, d).unwrap();
            let skip_kink = y
                .data()
                .iter()
                .zip(target.bits())
                .any(|(&v, &b)| (d - v * psi(b)).abs() < 1e-6);
            if !skip_kink {
                let err = finite_diff_check(|t| hinge_loss(t, &target, d).unwrap().value, &y, &h.gradient, 1e-6);
                assert!(err < 1e-4, "hinge {err}");
            }

            let e = evasion_objective(&y, &target, 5.0, 1e-12).unwrap();
            let err = finite_diff_check(
                |t| evasion_objective(t, &target, 5.0, 1e-12).unwrap().value,
                &y,
                &e.gradient,
                1e-6,
            );
            assert!(err < 1e-4, "evasion {err}");

            let a = random_image(&mut rng, 30);
            let b = random_image(&mut rng, 30);
            let s = ssim(&a, &b).unwrap();
            let err = finite_diff_check(
                |t| ssim_score(&ImageTensor::from_tensor(t.clone()).unwrap(), &b).unwrap(),
                a.as_tensor(),
                &s.gradient,
                1e-6,
            );
            assert!(err < 1e-4, "ssim {err}");
        }
    }

    #[test]
    fn normalize_gradient_below_epsilon() {
        let y = Tensor::from_vec(vec![1e-14, -2e-14]);
        let up = Tensor::from_vec(vec![1.0, 2.0]);
        let g = normalize_y_backward(&y, 1e-12, &up).unwrap();
        assert_eq!(g, up.scale(1e12));
    }

    proptest! {
        #[test]
        fn ssim_symmetric_and_bounded(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_image(&mut rng, 40);
            let b = random_image(&mut rng, 40);
            let ab = ssim(&a, &b).unwrap().value;
            let ba = ssim(&b, &a).unwrap().value;
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab > -1.0 && ab <= 1.0);
            prop_assert!(ab < 1.0 - 1e-9);
        }

        #[test]
        fn hinge_non_negative_and_monotone_in_margin(
            ys in proptest::collection::vec(-3.0f64..3.0, 8),
            bitv in proptest::collection::vec(any::<bool>(), 8),
            d1 in 0.0f64..2.0,
            extra in 0.0f64..2.0,
        ) {
            let y = Tensor::from_vec(ys);
            let t = PerceptualHash::from_bits(bitv);
            let a = hinge_loss(&y, &t, d1).unwrap().value;
            let b = hinge_loss(&y, &t, d1 + extra).unwrap().value;
            prop_assert!(a >= 0.0);
            prop_assert!(b >= a);
            if hinge_loss(&y, &t, 0.0).unwrap().value == 0.0 {
                for (i, (&v, &bit)) in y.data().iter().zip(t.bits()).enumerate() {
                    if v != 0.0 {
                        prop_assert_eq!(binarize(&y).bit(i), bit);
                    }
                }
            }
        }

        #[test]
        fn normalize_is_scale_invariant(
            ys in proptest::collection::vec(-3.0f64..3.0, 6),
            alpha in 1e-3f64..1e3,
        ) {
            let y = Tensor::from_vec(ys);
            prop_assume!(y.norm_l2() > 1e-6);
            let a = normalize_y(&y, 1e-12).unwrap();
            let b = normalize_y(&y.scale(alpha), 1e-12).unwrap();
            prop_assert!((a.norm_l2() - 1.0).abs() < 1e-12);
            for (p, q) in a.data().iter().zip(b.data()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        // Pushing the relaxed bits toward the original hash raises −L_MSE.
        #[test]
        fn mse_tracks_hamming_direction(
            bitv in proptest::collection::vec(any::<bool>(), 10),
            flips in 1usize..10,
        ) {
            let original = PerceptualHash::from_bits(bitv.clone());
            let agreeing: Vec<f64> = bitv.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
            let mut disagreeing = agreeing.clone();
            for v in disagreeing.iter_mut().take(flips) {
                *v = -*v;
            }
            let near = mse_evasion_loss(&normalize_y(&Tensor::from_vec(agreeing), 1e-12).unwrap(), &original, 5.0).unwrap();
            let far = mse_evasion_loss(&normalize_y(&Tensor::from_vec(disagreeing), 1e-12).unwrap(), &original, 5.0).unwrap();
            prop_assert!(-near.value < -far.value);
        }
    }
}
