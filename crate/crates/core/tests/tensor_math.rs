use phash_core::tensor_math::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct nested-loop convolution, NHWC input and HWIO kernel.
fn naive_conv(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Tensor {
    let [h, w, c] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let [kh, kw, _, f] = [
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    ];
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0; oh * ow * f];
    for oy in 0..oh {
        for ox in 0..ow {
            for o in 0..f {
                let mut acc = 0.0;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for ci in 0..c {
                            acc += input.data()[(iy as usize * w + ix as usize) * c + ci]
                                * kernel.data()[((ky * kw + kx) * c + ci) * f + o];
                        }
                    }
                }
                out[(oy * ow + ox) * f + o] = acc;
            }
        }
    }
    Tensor::new(vec![oh, ow, f], out).unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

#[test]
fn ones_kernel_sums_windows() {
    let input = Tensor::new(vec![3, 3, 1], (1..=9).map(f64::from).collect()).unwrap();
    let kernel = Tensor::filled(&[2, 2, 1, 1], 1.0);
    let out = conv2d_forward(&input, &kernel, None, 1, 0).unwrap();
    assert_eq!(out.shape(), &[2, 2, 1]);
    assert_eq!(out.data(), &[12.0, 16.0, 24.0, 28.0]);
}

#[test]
fn conv_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &(h, w, c, k, f, stride, padding) in &[
        (5, 5, 1, 3, 1, 1, 0),
        (7, 6, 3, 3, 4, 2, 1),
        (8, 8, 2, 2, 3, 2, 0),
        (6, 9, 3, 3, 2, 1, 1),
    ] {
        let input = random_tensor(&mut rng, &[h, w, c]);
        let kernel = random_tensor(&mut rng, &[k, k, c, f]);
        let fast = conv2d_forward(&input, &kernel, None, stride, padding).unwrap();
        let slow = naive_conv(&input, &kernel, stride, padding);
        assert_eq!(fast.shape(), slow.shape());
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let input = random_tensor(&mut rng, &[5, 5, 1]);
    let kernel = random_tensor(&mut rng, &[3, 3, 1, 2]);
    let upstream = random_tensor(&mut rng, &[3, 3, 2]);
    let grads = conv2d_backward(&input, &kernel, 1, 0, &upstream).unwrap();
    let loss_in = |x: &Tensor| naive_conv(x, &kernel, 1, 0).dot(&upstream).unwrap();
    assert!(finite_diff_check(loss_in, &input, &grads.input, 1e-6) < 1e-5);
    let loss_k = |k: &Tensor| naive_conv(&input, k, 1, 0).dot(&upstream).unwrap();
    assert!(finite_diff_check(loss_k, &kernel, &grads.kernel, 1e-6) < 1e-5);
}

#[test]
fn linear_hand_value() {
    let x = Tensor::from_vec(vec![1.0, 1.0]);
    let w = Tensor::new(vec![2, 1], vec![2.0, 3.0]).unwrap();
    let b = Tensor::from_vec(vec![0.0]);
    assert_eq!(linear_forward(&x, &w, Some(&b)).unwrap().data(), &[5.0]);
}

#[test]
fn scaled_sigmoid_value() {
    let out = activation_forward(&Tensor::from_vec(vec![1.0]), Activation::SigmoidScaled(5.0)).unwrap();
    let expected = 1.0 / (1.0 + (-5.0f64).exp());
    assert!((out.data()[0] - expected).abs() < 1e-15);
    assert!((out.data()[0] - 0.993307).abs() < 1e-6);
}

#[test]
fn adam_first_step_by_hand() {
    let mut state = AdamState::new(1, AdamConfig::default()).unwrap();
    let mut p = [0.0];
    state.step(&mut p, &[1.0]).unwrap();
    // m̂ = 1, v̂ = 1 after bias correction.
    let expected = -1e-3 * (1.0 / (1.0 + 1e-8));
    assert!((p[0] - expected).abs() < 1e-15);
}

#[test]
fn finite_diff_on_square() {
    let x = Tensor::from_vec(vec![3.0]);
    let err = finite_diff_check(|t| t.data()[0] * t.data()[0], &x, &Tensor::from_vec(vec![6.0]), 1e-6);
    assert!(err < 1e-6);
}

#[test]
fn finite_diff_flags_doubled_gradient() {
    let x = Tensor::from_vec(vec![3.0]);
    let err = finite_diff_check(|t| t.data()[0] * t.data()[0], &x, &Tensor::from_vec(vec![12.0]), 1e-6);
    assert!((err - 0.5).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn linear_backward_matches_finite_differences(seed in any::<u64>(), batch in 1usize..4, n in 1usize..6, o in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[batch, n]);
        let w = random_tensor(&mut rng, &[n, o]);
        let up = random_tensor(&mut rng, &[batch, o]);
        let g = linear_backward(&x, &w, &up).unwrap();
        let loss_x = |t: &Tensor| linear_forward(t, &w, None).unwrap().dot(&up).unwrap();
        prop_assert!(finite_diff_check(loss_x, &x, &g.input, 1e-6) < 1e-5);
        let loss_w = |t: &Tensor| linear_forward(&x, t, None).unwrap().dot(&up).unwrap();
        prop_assert!(finite_diff_check(loss_w, &w, &g.weight, 1e-6) < 1e-5);
    }

    #[test]
    fn adam_leaves_zero_gradient_coordinates_untouched(seed in any::<u64>(), steps in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let frozen = params[3..].to_vec();
        let mut state = AdamState::new(6, AdamConfig::default()).unwrap();
        for _ in 0..steps {
            let mut g: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            g[3..].fill(0.0);
            state.step(&mut params, &g).unwrap();
        }
        prop_assert_eq!(&params[3..], &frozen[..]);
    }

    #[test]
    fn relative_error_symmetric_and_bounded(a in -1e3f64..1e3, b in -1e3f64..1e3) {
        let e = relative_error(a, b);
        prop_assert_eq!(e, relative_error(b, a));
        prop_assert!((0.0..=2.0).contains(&e));
    }
}
