//! Procedural image corpora for desk-scale experiments.
//!
//! Scenes are a two-colour gradient background with a handful of flat-coloured
//! rectangles and ellipses plus light texture noise, so they have edges,
//! regions and colour variety without any external dataset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{ImageTensor, InputSpec};

/// Deterministic scene for `seed`.
pub fn scene(spec: InputSpec, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE7_E5EE_D000_0001);
    render(spec, &mut rng, None)
}

/// `count` scenes whose seeds are drawn from a stream keyed by `seed`, so
/// corpora with different seeds do not share images.
pub fn corpus(spec: InputSpec, count: usize, seed: u64) -> Vec<ImageTensor> {
    scene_seeds(count, seed).into_iter().map(|s| scene(spec, s)).collect()
}

pub fn scene_seeds(count: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.random()).collect()
}

/// Scene whose palette and shape mix depend on `class`, so hashes carry some
/// class information. Used for leakage experiments on synthetic data.
pub fn labeled_scene(spec: InputSpec, class: usize, num_classes: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((class as u64) << 40) ^ 0x1AB3_11ED);
    render(spec, &mut rng, Some((class, num_classes.max(1))))
}

fn render(spec: InputSpec, rng: &mut ChaCha8Rng, class: Option<(usize, usize)>) -> ImageTensor {
    let (h, w, c) = (spec.height, spec.width, spec.channels);
    // Unlabelled scenes draw dark or light tones so shape borders carry the
    // strong luminance steps typical of photographs.
    let bg_light = rng.random_bool(0.5);
    let color = |rng: &mut ChaCha8Rng, light: bool| -> Vec<f64> {
        match class {
            Some((k, n)) => {
                let hue = (k as f64 + rng.random_range(-0.2..0.2)) / n as f64 * 360.0;
                let (r, g, b) = crate::transforms::hsv_to_rgb(
                    hue.rem_euclid(360.0),
                    rng.random_range(0.4..0.9),
                    rng.random_range(0.3..0.95),
                );
                [r, g, b].into_iter().cycle().take(c).collect()
            }
            None if light => (0..c).map(|_| rng.random_range(0.75..0.98)).collect(),
            None => (0..c).map(|_| rng.random_range(0.02..0.25)).collect(),
        }
    };

    let bg_a = color(rng, bg_light);
    let bg_b = color(rng, bg_light);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dir_y, dir_x) = angle.sin_cos();
    let mut canvas = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let along = (y as f64 / h as f64 - 0.5) * dir_y + (x as f64 / w as f64 - 0.5) * dir_x;
            let u = (along + 0.5).clamp(0.0, 1.0);
            for ch in 0..c {
                canvas[(y * w + x) * c + ch] = bg_a[ch] * (1.0 - u) + bg_b[ch] * u;
            }
        }
    }

    let shapes = rng.random_range(3..7);
    let prefer_round = class.map(|(k, _)| k % 2 == 0);
    for _ in 0..shapes {
        let light = if rng.random_bool(0.75) { !bg_light } else { bg_light };
        let fill = color(rng, light);
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let ry = rng.random_range(0.08..0.3) * h as f64;
        let rx = rng.random_range(0.08..0.3) * w as f64;
        let round = match prefer_round {
            Some(p) => rng.random_bool(if p { 0.8 } else { 0.2 }),
            None => rng.random_bool(0.5),
        };
        for y in 0..h {
            for x in 0..w {
                let dy = (y as f64 - cy) / ry;
                let dx = (x as f64 - cx) / rx;
                let inside = if round {
                    dy * dy + dx * dx <= 1.0
                } else {
                    dy.abs() <= 1.0 && dx.abs() <= 1.0
                };
                if inside {
                    canvas[(y * w + x) * c..][..c].copy_from_slice(&fill);
                }
            }
        }
    }

    let data = canvas
        .into_iter()
        .map(|v| {
            let noisy = v + rng.random_range(-0.02..0.02);
            (noisy.clamp(0.02, 0.98)) * 2.0 - 1.0
        })
        .collect();
    ImageTensor::new(h, w, c, data).expect("synthetic scene is in range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let spec = InputSpec::new(16, 12, 3);
        assert_eq!(scene(spec, 7), scene(spec, 7));
        assert_ne!(scene(spec, 7), scene(spec, 8));
        let img = scene(spec, 3);
        assert!(img.data().iter().all(|v| v.abs() < 1.0));
        assert_eq!(img.spec(), spec);
    }

    #[test]
    fn labeled_scenes_vary_by_class() {
        let spec = InputSpec::new(8, 8, 3);
        assert_ne!(labeled_scene(spec, 0, 4, 1), labeled_scene(spec, 1, 4, 1));
        assert_eq!(labeled_scene(spec, 2, 4, 9), labeled_scene(spec, 2, 4, 9));
    }
}
