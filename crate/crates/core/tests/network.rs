use phash_core::network::{pretrain_contrastive, ContrastiveConfig, Layer, DESK_INPUT, EMBEDDING_DIM};
use phash_core::tensor_math::{finite_diff_check, Activation, Tensor};
use phash_core::{compute_hash, synthetic, EmbeddingNetwork, HashingMatrix, ImageTensor, InputSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN_EMBEDDING: &str = include_str!("golden/desk_pattern_embedding.txt");
const GOLDEN_HASH: &str = "de0c2aebfce6389e9681378b";

fn pattern_image() -> ImageTensor {
    let (h, w, c) = (64, 64, 3);
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data.push((x as f64 * 0.21 + y as f64 * 0.13 + ch as f64).sin() * 0.9);
            }
        }
    }
    ImageTensor::new(h, w, c, data).unwrap()
}

fn tiny_net(seed: u64) -> EmbeddingNetwork {
    EmbeddingNetwork::conv_stack(InputSpec::new(8, 8, 1), &[3, 4], 5, seed).unwrap()
}

#[test]
fn desk_shapes() {
    let net = EmbeddingNetwork::desk(0);
    assert_eq!(net.input_spec(), DESK_INPUT);
    assert_eq!(net.output_dim(), EMBEDDING_DIM);
    let z = net.embed(&pattern_image()).unwrap();
    assert_eq!(z.shape(), &[EMBEDDING_DIM]);
    assert!(z.is_finite());
}

#[test]
fn golden_embedding_and_hash() {
    let net = EmbeddingNetwork::desk(0);
    let z = net.embed(&pattern_image()).unwrap();
    let expected: Vec<f64> = GOLDEN_EMBEDDING.lines().map(|l| l.trim().parse().unwrap()).collect();
    assert_eq!(expected.len(), EMBEDDING_DIM);
    for (i, (a, b)) in z.data().iter().zip(&expected).enumerate() {
        assert!((a - b).abs() < 1e-9, "coordinate {i}: {a} vs {b}");
    }
    let matrix = HashingMatrix::generate(128, 96, 1).unwrap();
    assert_eq!(
        compute_hash(&net, &matrix, &pattern_image()).unwrap().to_hex(),
        GOLDEN_HASH
    );
}

#[test]
fn zero_image_hashes_to_zero() {
    // Zero biases and ReLU keep a zero input at zero all the way through,
    // and y = 0 maps to bit 0.
    let net = EmbeddingNetwork::desk(0);
    let zero = ImageTensor::filled(DESK_INPUT, 0.0).unwrap();
    assert!(net.embed(&zero).unwrap().data().iter().all(|&v| v == 0.0));
    let matrix = HashingMatrix::generate(128, 96, 1).unwrap();
    assert_eq!(compute_hash(&net, &matrix, &zero).unwrap().to_hex(), "0".repeat(24));
}

#[test]
fn same_seed_same_weights() {
    assert_eq!(
        EmbeddingNetwork::desk(3).parameters(),
        EmbeddingNetwork::desk(3).parameters()
    );
    assert_ne!(
        EmbeddingNetwork::desk(3).parameters(),
        EmbeddingNetwork::desk(4).parameters()
    );
}

#[test]
fn input_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let net = tiny_net(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
        let img = ImageTensor::new(8, 8, 1, (0..64).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let up = Tensor::from_fn(&[5], |_| rng.random_range(-1.0..1.0));
        let grad = net.embed_input_gradient(&img, &up).unwrap();
        let err = finite_diff_check(
            |t| {
                let x = ImageTensor::from_tensor(t.clone()).unwrap();
                net.embed(&x).unwrap().dot(&up).unwrap()
            },
            img.as_tensor(),
            &grad,
            1e-6,
        );
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn parameter_gradient_matches_finite_differences() {
    let net = EmbeddingNetwork::from_layers(
        InputSpec::new(4, 4, 1),
        vec![
            Layer::Conv2d {
                kernel: Tensor::from_fn(&[3, 3, 1, 2], |i| (i as f64 * 0.37).sin()),
                bias: Tensor::from_vec(vec![0.05, -0.1]),
                stride: 1,
                padding: 1,
            },
            Layer::Activation(Activation::Tanh),
            Layer::Flatten,
            Layer::Linear {
                weight: Tensor::from_fn(&[32, 3], |i| (i as f64 * 0.11).cos() * 0.3),
                bias: Tensor::from_vec(vec![0.0, 0.2, -0.2]),
            },
        ],
    )
    .unwrap();
    let img = ImageTensor::new(4, 4, 1, (0..16).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
    let up = Tensor::from_vec(vec![1.0, -0.5, 0.25]);
    let trace = net.forward_trace(&img).unwrap();
    let analytic = Tensor::from_vec(net.backward_params(&trace, &up).unwrap());
    let point = Tensor::from_vec(net.parameters());
    let err = finite_diff_check(
        |p| {
            let mut probe = net.clone();
            probe.set_parameters(p.data()).unwrap();
            probe.embed(&img).unwrap().dot(&up).unwrap()
        },
        &point,
        &analytic,
        1e-6,
    );
    assert!(err < 1e-5, "{err}");
}

#[test]
fn checkpoint_round_trip() {
    let net = EmbeddingNetwork::desk(7);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.phnn");
    net.save(&path).unwrap();
    let back = EmbeddingNetwork::load(&path).unwrap();
    assert_eq!(back, net);
    let img = synthetic::scene(DESK_INPUT, 9);
    assert_eq!(back.embed(&img).unwrap(), net.embed(&img).unwrap());
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let bytes = EmbeddingNetwork::desk(0).to_bytes();
    assert!(EmbeddingNetwork::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut wrong_magic = bytes.clone();
    wrong_magic[0] = b'X';
    assert!(EmbeddingNetwork::from_bytes(&wrong_magic).is_err());
}

#[test]
fn wrong_input_shape_is_rejected() {
    let net = EmbeddingNetwork::desk(0);
    let small = ImageTensor::filled(InputSpec::new(32, 32, 3), 0.0).unwrap();
    assert!(net.embed(&small).is_err());
}

#[test]
fn contrastive_training_reduces_loss() {
    let corpus = synthetic::corpus(DESK_INPUT, 32, 4);
    let cfg = ContrastiveConfig {
        epochs: 20,
        ..ContrastiveConfig::default()
    };
    let (_, history) = pretrain_contrastive(&EmbeddingNetwork::desk(0), &corpus, &cfg).unwrap();
    assert_eq!(history.eval_loss.len(), 21);
    let first = history.eval_loss[0];
    let last = *history.eval_loss.last().unwrap();
    assert!(last < first, "held triplet loss {first} → {last}");
}

#[test]
fn tiny_perturbation_barely_moves_embedding() {
    let net = EmbeddingNetwork::desk(0);
    let img = synthetic::scene(DESK_INPUT, 2);
    let nudged = ImageTensor::from_tensor(img.as_tensor().map(|v| v + 1e-9)).unwrap();
    let a = net.embed(&img).unwrap();
    let b = net.embed(&nudged).unwrap();
    assert!(a.sub(&b).unwrap().norm_linf() <= 1e-3);
}

#[test]
fn contrastive_training_is_reproducible() {
    let corpus = synthetic::corpus(DESK_INPUT, 2, 6);
    let cfg = ContrastiveConfig {
        epochs: 1,
        ..ContrastiveConfig::default()
    };
    let (a, ha) = pretrain_contrastive(&EmbeddingNetwork::desk(1), &corpus, &cfg).unwrap();
    let (b, hb) = pretrain_contrastive(&EmbeddingNetwork::desk(1), &corpus, &cfg).unwrap();
    assert_eq!(a.parameters(), b.parameters());
    assert_eq!(ha, hb);
    assert!(pretrain_contrastive(&EmbeddingNetwork::desk(1), &corpus[..1], &cfg).is_err());
}
