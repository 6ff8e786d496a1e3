use phash_core::canny::{canny_edges, CannyConfig, PixelMask};
use phash_core::evasion::*;
use phash_core::network::DESK_INPUT;
use phash_core::{compute_hash, hamming_distance, synthetic, EmbeddingNetwork, HashingMatrix, ImageTensor};

fn pipeline() -> (EmbeddingNetwork, HashingMatrix) {
    (EmbeddingNetwork::desk(0), HashingMatrix::generate(128, 96, 1).unwrap())
}

/// Canny written out directly: separable blur, explicit Sobel sums, slope
/// tests instead of angles, recursive flood fill for hysteresis.
fn reference_canny(img: &ImageTensor, sigma: f64, low: f64, high: f64) -> Vec<bool> {
    let (h, w, c) = (img.height() as isize, img.width() as isize, img.channels());
    let grey: Vec<f64> = img
        .data()
        .chunks(c)
        .map(|p| {
            let u: Vec<f64> = p.iter().map(|v| (v + 1.0) / 2.0).collect();
            if c == 1 {
                u[0]
            } else {
                0.299 * u[0] + 0.587 * u[1] + 0.114 * u[2]
            }
        })
        .collect();
    let clamp_get = |p: &[f64], y: isize, x: isize| p[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
    let e = (-1.0 / (2.0 * sigma * sigma)).exp();
    let wts = [e / (1.0 + 2.0 * e), 1.0 / (1.0 + 2.0 * e), e / (1.0 + 2.0 * e)];
    let mut blurred = vec![0.0; (h * w) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    acc += wts[i] * wts[j] * clamp_get(&grey, y + i as isize - 1, x + j as isize - 1);
                }
            }
            blurred[(y * w + x) as usize] = acc;
        }
    }
    let mut gx = vec![0.0; blurred.len()];
    let mut gy = vec![0.0; blurred.len()];
    for y in 0..h {
        for x in 0..w {
            let p = |dy: isize, dx: isize| clamp_get(&blurred, y + dy, x + dx);
            let i = (y * w + x) as usize;
            gx[i] = ((p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1))) / 8.0;
            gy[i] = ((p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1))) / 8.0;
        }
    }
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect();
    let m_at = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h || x >= w {
            0.0
        } else {
            mag[(y * w + x) as usize]
        }
    };
    let t = (22.5f64).to_radians().tan();
    let mut thin = vec![0.0; mag.len()];
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            if mag[i] <= 0.0 {
                continue;
            }
            let (ax, ay) = (gx[i], gy[i]);
            let (dy, dx) = if ay.abs() <= t * ax.abs() {
                (0, 1)
            } else if ax.abs() <= t * ay.abs() {
                (1, 0)
            } else if ax * ay > 0.0 {
                (1, 1)
            } else {
                (1, -1)
            };
            if mag[i] >= m_at(y + dy, x + dx) && mag[i] >= m_at(y - dy, x - dx) {
                thin[i] = mag[i];
            }
        }
    }
    let mut edge = vec![false; thin.len()];
    fn grow(y: isize, x: isize, h: isize, w: isize, thin: &[f64], low: f64, edge: &mut [bool]) {
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h || nx >= w {
                    continue;
                }
                let j = (ny * w + nx) as usize;
                if !edge[j] && thin[j] > low {
                    edge[j] = true;
                    grow(ny, nx, h, w, thin, low, edge);
                }
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            if thin[i] > high && !edge[i] {
                edge[i] = true;
                grow(y, x, h, w, &thin, low, &mut edge);
            }
        }
    }
    edge
}

fn half_split(side: usize) -> ImageTensor {
    let data = (0..side * side)
        .map(|i| if i % side < side / 2 { -1.0 } else { 1.0 })
        .collect();
    ImageTensor::new(side, side, 1, data).unwrap()
}

fn in_range(img: &ImageTensor) -> bool {
    img.data().iter().all(|v| (-1.0..=1.0).contains(v))
}

#[test]
fn default_thresholds() {
    let cfg = CannyConfig::default();
    assert_eq!((cfg.gaussian_sigma, cfg.low, cfg.high), (3.0, 0.1, 0.2));
}

#[test]
fn half_split_edges_sit_on_the_boundary() {
    let img = half_split(32);
    let mask = canny_edges(&img, &CannyConfig::default()).unwrap();
    assert_eq!(mask.cells(), &reference_canny(&img, 3.0, 0.1, 0.2)[..]);
    for y in 0..32 {
        for x in 0..32 {
            if mask.get(y, x) {
                assert!((15..=16).contains(&x), "edge at column {x}");
            }
        }
        assert!(mask.get(y, 15) || mask.get(y, 16), "row {y} has no boundary edge");
    }
}

#[test]
fn matches_reference_on_scenes() {
    for seed in 0..12 {
        let img = synthetic::scene(DESK_INPUT, seed);
        let mask = canny_edges(&img, &CannyConfig::default()).unwrap();
        assert_eq!(mask.cells(), &reference_canny(&img, 3.0, 0.1, 0.2)[..], "scene {seed}");
    }
}

#[test]
fn constant_image_has_no_edges() {
    let img = ImageTensor::filled(DESK_INPUT, 0.2).unwrap();
    assert!(canny_edges(&img, &CannyConfig::default()).unwrap().is_empty());
}

#[test]
fn lambda_schedule() {
    let cfg = EvasionConfig::default();
    assert_eq!(cfg.lambda_at(0), 5.0);
    assert!((cfg.lambda_at(1) - 4.95).abs() < 1e-15);
    assert!((cfg.lambda_at(100) - 5.0 * 0.99f64.powi(100)).abs() < 1e-12);
    let fp = FewPixelsConfig::default();
    assert_eq!((fp.learning_rate, fp.steps_per_set, fp.max_pixels), (1.0, 20, 150));
    assert_eq!(fp.lr_halving_at, vec![5, 10]);
}

#[test]
fn zero_budget_leaves_image_alone() {
    let (net, b) = pipeline();
    let img = synthetic::scene(DESK_INPUT, 1);
    let cfg = EvasionConfig {
        max_steps: 0,
        ..EvasionConfig::default()
    };
    let (out, report) = evade(&net, &b, &img, &cfg).unwrap();
    assert!(!report.success);
    assert_eq!(out, img);
    assert_eq!(report.delta, 0.0);
}

#[test]
fn standard_attack_changes_the_hash() {
    let (net, b) = pipeline();
    for seed in 0..5 {
        let img = synthetic::scene(DESK_INPUT, 100 + seed);
        let (out, report) = evade(&net, &b, &img, &EvasionConfig::default()).unwrap();
        assert!(report.success);
        assert!(in_range(&out));
        let before = compute_hash(&net, &b, &img).unwrap();
        let after = compute_hash(&net, &b, &out).unwrap();
        assert_eq!(report.final_hash, after.to_hex());
        assert!(hamming_distance(&before, &after).unwrap() > 0.0);
    }
}

#[test]
fn edges_only_touches_only_edge_pixels() {
    let (net, b) = pipeline();
    let cfg = EvasionConfig::with_variant(Variant::EdgesOnly);
    for seed in 0..3 {
        let img = synthetic::scene(DESK_INPUT, 200 + seed);
        let mask = canny_edges(&img, &cfg.canny).unwrap();
        let (out, _) = evade(&net, &b, &img, &cfg).unwrap();
        assert!(in_range(&out));
        for y in 0..64 {
            for x in 0..64 {
                if !mask.get(y, x) {
                    assert_eq!(out.pixel(y, x), img.pixel(y, x));
                }
            }
        }
    }
}

#[test]
fn edges_only_needs_edges() {
    let (net, b) = pipeline();
    let flat = ImageTensor::filled(DESK_INPUT, 0.1).unwrap();
    let cfg = EvasionConfig::with_variant(Variant::EdgesOnly);
    assert!(matches!(
        evade(&net, &b, &flat, &cfg),
        Err(phash_core::Error::Precondition(_))
    ));
    let batch = evade_batch(&net, &b, std::slice::from_ref(&flat), &cfg).unwrap();
    assert!(!batch.reports[0].success);
    assert_eq!(batch.summary.sr, 0.0);
}

#[test]
fn few_pixels_reports_true_pixel_count() {
    let (net, b) = pipeline();
    let cfg = EvasionConfig::with_variant(Variant::FewPixels);
    for seed in 0..4 {
        let img = synthetic::scene(DESK_INPUT, 300 + seed);
        let (out, report) = evade(&net, &b, &img, &cfg).unwrap();
        assert!(in_range(&out));
        let changed = img.changed_pixels(&out).unwrap();
        assert_eq!(report.pixels_changed, Some(changed));
        assert!(changed <= 150);
        assert!(report.pixels_selected.unwrap() >= changed);
    }
}

#[test]
fn few_pixels_budget_exhaustion() {
    let (net, b) = pipeline();
    let img = synthetic::scene(DESK_INPUT, 400);
    let cfg = EvasionConfig {
        few_pixels: FewPixelsConfig {
            max_pixels: 2,
            steps_per_set: 1,
            learning_rate: 1e-6,
            ..FewPixelsConfig::default()
        },
        ..EvasionConfig::with_variant(Variant::FewPixels)
    };
    let (out, report) = evade(&net, &b, &img, &cfg).unwrap();
    assert!(!report.success);
    assert_eq!(report.pixels_selected, Some(2));
    assert!(img.changed_pixels(&out).unwrap() <= 2);
}

#[test]
fn success_means_distance_above_threshold() {
    let (net, b) = pipeline();
    let img = synthetic::scene(DESK_INPUT, 500);
    let h0 = compute_hash(&net, &b, &img).unwrap();
    for delta0 in [0.1, 0.3] {
        let cfg = EvasionConfig {
            delta0,
            ..EvasionConfig::default()
        };
        let (out, report) = evade(&net, &b, &img, &cfg).unwrap();
        let d = hamming_distance(&compute_hash(&net, &b, &out).unwrap(), &h0).unwrap();
        assert_eq!(report.delta, d);
        assert_eq!(report.success, d > delta0);
    }
}

#[test]
fn sweep_over_zero_has_unit_ratios() {
    let (net, b) = pipeline();
    let images = synthetic::corpus(DESK_INPUT, 3, 5);
    let report = delta0_sweep(&net, &b, &images, &[0.0], &EvasionConfig::default()).unwrap();
    let row = &report.rows[0];
    assert_eq!(row.l2_ratio, Some(1.0));
    assert_eq!(row.linf_ratio, Some(1.0));
    assert_eq!(row.ssim_ratio, Some(1.0));
    assert_eq!(row.steps_ratio, Some(1.0));
    assert!(delta0_sweep(&net, &b, &images, &[0.2, 0.1], &EvasionConfig::default()).is_err());
    assert!(delta0_sweep(&net, &b, &[], &[0.0], &EvasionConfig::default()).is_err());
}

#[test]
fn evasion_is_deterministic() {
    let (net, b) = pipeline();
    let img = synthetic::scene(DESK_INPUT, 600);
    let cfg = EvasionConfig::with_variant(Variant::FewPixels);
    assert_eq!(
        evade(&net, &b, &img, &cfg).unwrap(),
        evade(&net, &b, &img, &cfg).unwrap()
    );
}

#[test]
fn mask_shape_is_checked() {
    let (net, b) = pipeline();
    let img = synthetic::scene(DESK_INPUT, 7);
    let mask = PixelMask::full(8, 8);
    assert!(evade_masked(&net, &b, &img, Some(&mask), &EvasionConfig::default()).is_err());
}
