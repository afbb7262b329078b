mod common;

use common::{negatives, positives};
use gonogo_core::gan::{gan_loss, train_gan, GanConfig, GanModels, GeneratorObjective};
use gonogo_core::{CoreError, Scale};
use gonogo_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LN2: f64 = std::f64::consts::LN_2;

#[test]
fn losses_at_chance() {
    let l = gan_loss(&[0.5; 4], &[0.5; 4], GeneratorObjective::NonSaturating);
    assert!((l.d_loss - 2.0 * LN2).abs() < 1e-12);
    assert!((l.g_loss - LN2).abs() < 1e-12);
    assert_eq!(l.value, -l.d_loss);
    let m = gan_loss(&[0.5; 4], &[0.5; 4], GeneratorObjective::Minimax);
    assert!((m.g_loss + LN2).abs() < 1e-12);
}

#[test]
fn losses_by_hand() {
    let (real, fake) = ([0.9f32, 0.8], [0.1f32, 0.3]);
    let r = |p: f32| f64::from(p);
    let value = ((r(0.9).ln() + r(0.8).ln()) + ((1.0 - r(0.1)).ln() + (1.0 - r(0.3)).ln())) / 2.0;
    let l = gan_loss(&real, &fake, GeneratorObjective::NonSaturating);
    assert!((l.value - value).abs() < 1e-12);
    assert!((l.g_loss + (r(0.1).ln() + r(0.3).ln()) / 2.0).abs() < 1e-12);
    // A perfect discriminator stays finite thanks to the log clamp.
    let p = gan_loss(&[1.0], &[0.0], GeneratorObjective::NonSaturating);
    assert!(p.g_loss.is_finite() && p.d_loss.abs() < 1e-6);
}

#[test]
fn full_scale_shapes() {
    let m = GanModels::new(Scale::Full, 100, 0).unwrap();
    let z = Tensor::randn(&[1, 100], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    let x = m.generate(&z).unwrap();
    assert_eq!(x.shape(), &[1, 3, 128, 128]);
    let p = m.discriminate(&x).unwrap();
    assert_eq!(p.shape(), &[1, 2]);
    assert!((p.data()[0] + p.data()[1] - 1.0).abs() < 1e-6);
    assert_eq!(m.features(&x).unwrap().shape(), &[1, 512, 8, 8]);
}

#[test]
fn desk_scale_shapes() {
    let m = GanModels::new(Scale::Desk, 32, 0).unwrap();
    let z = Tensor::randn(&[3, 32], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    let x = m.generate(&z).unwrap();
    assert_eq!(x.shape(), &[3, 3, 32, 32]);
    assert!(x.data().iter().all(|&v| v >= 0.0));
    assert_eq!(m.features(&x).unwrap().shape(), &[3, 128, 4, 4]);
}

#[test]
fn negatives_poison_the_training_set() {
    let mut frames = positives(6);
    frames.extend(negatives(1));
    let cfg = GanConfig {
        epochs: 1,
        batch_size: 4,
        ..GanConfig::new(Scale::Desk)
    };
    match train_gan(&frames, &cfg) {
        Err(CoreError::NonPositiveLabel { index, .. }) => assert_eq!(index, 6),
        other => panic!("expected a label error, got {other:?}"),
    }
    assert!(matches!(train_gan(&[], &cfg), Err(CoreError::EmptyDataset)));
}

#[test]
fn wrong_scale_images_are_rejected() {
    let cfg = GanConfig {
        epochs: 1,
        ..GanConfig::new(Scale::Full)
    };
    assert!(matches!(train_gan(&positives(2), &cfg), Err(CoreError::ScaleMismatch { .. })));
}

#[test]
fn config_validation() {
    let base = GanConfig::new(Scale::Desk);
    assert!(base.validate().is_ok());
    for bad in [
        GanConfig { batch_size: 1, ..base.clone() },
        GanConfig { z_dim: 0, ..base.clone() },
        GanConfig { real_label: Some(0.2), ..base.clone() },
        GanConfig { divergence_limit: 0.0, ..base.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(CoreError::Config(_))), "{bad:?}");
    }
}

#[test]
fn seeded_training_is_reproducible() {
    let frames = positives(8);
    let cfg = GanConfig {
        epochs: 2,
        batch_size: 4,
        ..GanConfig::new(Scale::Desk)
    };
    let (a, ha) = train_gan(&frames, &cfg).unwrap();
    let (b, hb) = train_gan(&frames, &cfg).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(ha.steps.len(), 4);
    for ((_, x), (_, y)) in a.gen.parameters().iter().zip(b.gen.parameters().iter()) {
        assert_eq!(x, y);
    }
    for ((_, x), (_, y)) in a.dis.buffers().iter().zip(b.dis.buffers().iter()) {
        assert_eq!(x, y);
    }
    // Training moved the weights away from their initial values.
    let init = GanModels::new(Scale::Desk, cfg.z_dim, cfg.seed).unwrap();
    assert_ne!(init.gen.parameters()[0].1, a.gen.parameters()[0].1);
}

#[test]
fn divergence_is_reported() {
    let cfg = GanConfig {
        epochs: 1,
        batch_size: 4,
        divergence_limit: 1e-3,
        ..GanConfig::new(Scale::Desk)
    };
    assert!(matches!(
        train_gan(&positives(4), &cfg),
        Err(CoreError::Diverged { epoch: 0, step: 0, .. })
    ));
}
