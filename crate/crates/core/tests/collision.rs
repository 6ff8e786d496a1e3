use phash_core::attack::{AttackReport, AttackSummary};
use phash_core::collision::{collide_against_db, force_collision, CollisionConfig};
use phash_core::losses::psi;
use phash_core::network::DESK_INPUT;
use phash_core::{compute_hash, synthetic, EmbeddingNetwork, HashDatabase, HashingMatrix, PerceptualHash};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pipeline(bits: usize) -> (EmbeddingNetwork, HashingMatrix) {
    (
        EmbeddingNetwork::desk(0),
        HashingMatrix::generate(128, bits, 1).unwrap(),
    )
}

fn random_target(rng: &mut ChaCha8Rng, k: usize) -> PerceptualHash {
    PerceptualHash::from_bits((0..k).map(|_| rng.random_bool(0.5)).collect())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

fn in_range(data: &[f64]) -> bool {
    data.iter().all(|v| (-1.0..=1.0).contains(v))
}

#[test]
fn already_colliding_is_immediate_success() {
    let (net, b) = pipeline(96);
    let img = synthetic::scene(DESK_INPUT, 5);
    let own = compute_hash(&net, &b, &img).unwrap();
    let (out, report) = force_collision(&net, &b, &img, &own, &CollisionConfig::default()).unwrap();
    assert!(report.success);
    assert_eq!(report.steps, 0);
    assert_eq!(out, img);
    assert_eq!(report.ssim, 1.0);
}

#[test]
fn complement_in_one_step_fails_cleanly() {
    let (net, b) = pipeline(96);
    let img = synthetic::scene(DESK_INPUT, 6);
    let db = HashDatabase::from_entries(96, vec![compute_hash(&net, &b, &img).unwrap().complement()]).unwrap();
    let cfg = CollisionConfig {
        max_steps: 1,
        ..CollisionConfig::default()
    };
    let batch = collide_against_db(&net, &b, &[img], &db, &cfg).unwrap();
    assert_eq!(batch.summary.sr, 0.0);
    assert_eq!(batch.reports[0].steps, 1);
    assert_ne!(
        batch.reports[0].final_hash,
        batch.reports[0].target_hash.clone().unwrap()
    );
    assert!(batch.summary.l2_mean.is_none());
}

#[test]
fn unconstrained_collisions_at_eight_bits() {
    let (net, b) = pipeline(8);
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let cfg = CollisionConfig {
        lambda_ssim: 0.0,
        ..CollisionConfig::default()
    };
    let mut wins = 0;
    for i in 0..10 {
        let img = synthetic::scene(DESK_INPUT, 1000 + i);
        let target = random_target(&mut rng, 8);
        let (out, report) = force_collision(&net, &b, &img, &target, &cfg).unwrap();
        assert!(in_range(out.data()));
        assert_eq!(report.success, report.final_hash == target.to_hex());
        wins += report.success as usize;
    }
    assert!(wins >= 8, "{wins}/10 collisions");
}

#[test]
fn margin_holds_at_success() {
    let (net, b) = pipeline(8);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let cfg = CollisionConfig {
        lambda_ssim: 0.0,
        margin_d: 0.05,
        ..CollisionConfig::default()
    };
    for i in 0..3 {
        let img = synthetic::scene(DESK_INPUT, 2000 + i);
        let target = random_target(&mut rng, 8);
        let (out, report) = force_collision(&net, &b, &img, &target, &cfg).unwrap();
        if report.success {
            let y = b.project(&net.embed(&out).unwrap()).unwrap();
            let worst = y
                .data()
                .iter()
                .zip(target.bits())
                .map(|(v, &t)| v * psi(t))
                .fold(f64::INFINITY, f64::min);
            assert!(worst >= 0.0);
        }
    }
}

#[test]
fn ssim_term_keeps_images_closer() {
    let (net, b) = pipeline(8);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (mut with, mut without) = (0.0, 0.0);
    for i in 0..10 {
        let img = synthetic::scene(DESK_INPUT, 3000 + i);
        let target = random_target(&mut rng, 8);
        for (lambda, acc) in [(100.0, &mut with), (0.0, &mut without)] {
            let cfg = CollisionConfig {
                lambda_ssim: lambda,
                max_steps: 300,
                ..CollisionConfig::default()
            };
            *acc += force_collision(&net, &b, &img, &target, &cfg).unwrap().1.ssim;
        }
    }
    assert!(
        with >= without,
        "mean SSIM λ=100 {} < λ=0 {}",
        with / 10.0,
        without / 10.0
    );
}

#[test]
fn batch_aggregate_matches_individual_reports() {
    let (net, b) = pipeline(96);
    let images = synthetic::corpus(DESK_INPUT, 20, 7);
    let db_images = synthetic::corpus(DESK_INPUT, 100, 8);
    let entries = db_images.iter().map(|x| compute_hash(&net, &b, x).unwrap()).collect();
    let db = HashDatabase::from_entries(96, entries).unwrap();
    let cfg = CollisionConfig {
        lambda_ssim: 1.0,
        max_steps: 60,
        ..CollisionConfig::default()
    };
    let batch = collide_against_db(&net, &b, &images, &db, &cfg).unwrap();
    assert_eq!(batch.reports.len(), 20);

    let mut singles: Vec<AttackReport> = Vec::new();
    for img in &images {
        let own = compute_hash(&net, &b, img).unwrap();
        let (_, target, _) = db.nearest(&own).unwrap();
        singles.push(force_collision(&net, &b, img, target, &cfg).unwrap().1);
    }
    assert_eq!(batch.reports, singles);

    let ok: Vec<&AttackReport> = singles.iter().filter(|r| r.success).collect();
    let s: &AttackSummary = &batch.summary;
    assert_eq!(s.attempts, 20);
    assert_eq!(s.successes, ok.len());
    assert_eq!(s.sr, ok.len() as f64 / 20.0);
    if !ok.is_empty() {
        let (m, sd) = mean_std(&ok.iter().map(|r| r.l2).collect::<Vec<_>>());
        assert!((s.l2_mean.unwrap() - m).abs() < 1e-12 && (s.l2_std.unwrap() - sd).abs() < 1e-12);
        let (m, sd) = mean_std(&ok.iter().map(|r| r.steps as f64).collect::<Vec<_>>());
        assert!((s.steps_mean.unwrap() - m).abs() < 1e-12 && (s.steps_std.unwrap() - sd).abs() < 1e-12);
        let (m, _) = mean_std(&ok.iter().map(|r| r.ssim).collect::<Vec<_>>());
        assert!((s.ssim_mean.unwrap() - m).abs() < 1e-12);
    }
    for r in &singles {
        assert!(r.l2 >= 0.0 && r.linf >= 0.0 && r.ssim <= 1.0);
        assert_eq!(r.success, Some(&r.final_hash) == r.target_hash.as_ref());
    }
}

#[test]
fn collision_is_deterministic() {
    let (net, b) = pipeline(96);
    let img = synthetic::scene(DESK_INPUT, 11);
    let target = compute_hash(&net, &b, &synthetic::scene(DESK_INPUT, 12)).unwrap();
    let cfg = CollisionConfig {
        max_steps: 25,
        ..CollisionConfig::default()
    };
    let a = force_collision(&net, &b, &img, &target, &cfg).unwrap();
    let c = force_collision(&net, &b, &img, &target, &cfg).unwrap();
    assert_eq!(a, c);
}

#[test]
fn invalid_inputs_are_rejected() {
    let (net, b) = pipeline(96);
    let img = synthetic::scene(DESK_INPUT, 13);
    assert!(force_collision(&net, &b, &img, &PerceptualHash::zeros(8), &CollisionConfig::default()).is_err());
    let db = HashDatabase::new(96);
    assert!(collide_against_db(&net, &b, std::slice::from_ref(&img), &db, &CollisionConfig::default()).is_err());
    let full = HashDatabase::from_entries(96, vec![PerceptualHash::zeros(96)]).unwrap();
    assert!(collide_against_db(&net, &b, &[], &full, &CollisionConfig::default()).is_err());
}
