mod common;

use common::{batch, desk_models, negatives, positives};
use gonogo_core::inverse::{
    combined_loss, invert_feedforward, invert_iterative, train_inverse_generator, InverseModel,
    InversionConfig,
};
use gonogo_core::losses::Norm;
use gonogo_core::scoring::WeightMasks;
use gonogo_core::{CoreError, Scale};
use gonogo_tensor::gradcheck::{check_gradients, Differentiable, GradCheckConfig};
use gonogo_tensor::{Bound, Graph, Mode, Network, Result as TResult, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn full_scale_inverse_shape() {
    let inv = InverseModel::new(Scale::Full, 100, 0).unwrap();
    let x = Tensor::from_fn(&[1, 3, 128, 128], |i| (i % 7) as f32 / 7.0);
    assert_eq!(invert_feedforward(&x, &inv).unwrap().shape(), &[1, 100]);
}

#[test]
fn lambda_endpoints_select_one_term() {
    let (gan, inv) = desk_models(3);
    let x = batch(&positives(3));
    let z = invert_feedforward(&x, &inv).unwrap();
    for masks in [None, Some(WeightMasks::bottom_band(Scale::Desk, 0.125, 8.0).unwrap())] {
        let r = combined_loss(&x, &z, &gan, &InversionConfig { lambda: 0.0, ..Default::default() }, masks.as_ref()).unwrap();
        assert_eq!(r.total, r.residual);
        let d = combined_loss(&x, &z, &gan, &InversionConfig { lambda: 1.0, ..Default::default() }, masks.as_ref()).unwrap();
        assert_eq!(d.total, d.feature);
        let mid = combined_loss(&x, &z, &gan, &InversionConfig::default(), masks.as_ref()).unwrap();
        for i in 0..3 {
            let expect = 0.9 * f64::from(mid.residual[i]) + 0.1 * f64::from(mid.feature[i]);
            assert!((f64::from(mid.total[i]) - expect).abs() < 1e-6);
        }
    }
}

#[test]
fn residual_term_by_hand() {
    let (gan, _) = desk_models(4);
    let z = Tensor::randn(&[1, 32], 1.0, &mut ChaCha8Rng::seed_from_u64(9));
    let x_rec = gan.generate(&z).unwrap();
    let x = x_rec.map(|v| v + 0.25);
    let cfg = InversionConfig { lambda: 0.0, ..Default::default() };
    let l = combined_loss(&x, &z, &gan, &cfg, None).unwrap();
    assert!((l.residual[0] - 0.25).abs() < 1e-5);
    let l2 = combined_loss(&x, &z, &gan, &InversionConfig { norm: Norm::L2, ..cfg }, None).unwrap();
    assert!((l2.residual[0] - 0.25 * (3.0f32 * 32.0 * 32.0).sqrt()).abs() < 1e-3);
    // Its own reconstruction scores zero.
    let own = combined_loss(&x_rec, &z, &gan, &InversionConfig::default(), None).unwrap();
    assert_eq!((own.residual[0], own.feature[0], own.total[0]), (0.0, 0.0, 0.0));
}

#[test]
fn iterative_search_approaches_a_generated_target() {
    let (gan, _) = desk_models(5);
    let z_true = Tensor::randn(&[1, 32], 1.0, &mut ChaCha8Rng::seed_from_u64(11));
    let x = gan.generate(&z_true).unwrap().index_first(0);
    let cfg = InversionConfig {
        iterations: 60,
        ..Default::default()
    };
    let r = invert_iterative(&x, &gan, &cfg, None).unwrap();
    assert_eq!(r.curve.len(), 61);
    let min = r.curve.iter().copied().fold(f32::INFINITY, f32::min);
    assert_eq!(r.best_loss, min);
    assert!(r.best_loss < 0.5 * r.curve[0], "{} vs {}", r.best_loss, r.curve[0]);
    let again = invert_iterative(&x, &gan, &cfg, None).unwrap();
    assert_eq!(again.z, r.z);
}

#[test]
fn iterative_search_checks_the_scale() {
    let (gan, _) = desk_models(5);
    let x = Tensor::zeros(&[3, 64, 64]);
    assert!(matches!(
        invert_iterative(&x, &gan, &InversionConfig::default(), None),
        Err(CoreError::ScaleMismatch { .. })
    ));
}

#[test]
fn inverse_training_rejects_negatives_and_freezes_the_gan() {
    let (gan, _) = desk_models(6);
    let cfg = InversionConfig {
        epochs: 1,
        batch_size: 4,
        ..Default::default()
    };
    let mut frames = positives(5);
    frames.insert(2, negatives(1).remove(0));
    assert!(matches!(
        train_inverse_generator(&frames, &gan, &cfg),
        Err(CoreError::NonPositiveLabel { index: 2, .. })
    ));

    let before = gan.clone();
    let frames = positives(12);
    let cfg = InversionConfig { epochs: 6, ..cfg };
    let (inv_a, hist) = train_inverse_generator(&frames, &gan, &cfg).unwrap();
    let (inv_b, _) = train_inverse_generator(&frames, &gan, &cfg).unwrap();
    assert_eq!(hist.len(), 6);
    assert!(hist[5].loss < hist[0].loss, "{hist:?}");
    for ((_, a), (_, b)) in inv_a.net.parameters().iter().zip(inv_b.net.parameters().iter()) {
        assert_eq!(a, b);
    }
    for ((_, a), (_, b)) in before.gen.parameters().iter().zip(gan.gen.parameters().iter()) {
        assert_eq!(a, b);
    }
    for ((_, a), (_, b)) in before.dis.buffers().iter().zip(gan.dis.buffers().iter()) {
        assert_eq!(a, b);
    }
}

#[test]
fn config_validation() {
    assert!(InversionConfig::default().validate().is_ok());
    for bad in [
        InversionConfig { lambda: 1.5, ..Default::default() },
        InversionConfig { search_lr: 0.0, ..Default::default() },
        InversionConfig { batch_size: 1, ..Default::default() },
    ] {
        assert!(bad.validate().is_err());
    }
}

/// Images and inverse-generator weights as checked parameters; generator and
/// discriminator frozen.
struct Composite {
    inv: Network,
    gen: Network,
    dis: Network,
    tap: usize,
    lambda: f64,
}

fn bind_const<T: Scalar>(g: &mut Graph<T>, net: &Network) -> Bound {
    net.bind(g, false)
}

impl Differentiable for Composite {
    fn loss<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var]) -> TResult<Var> {
        let x = p[0];
        let inv = Bound::from_vars(p[1..].to_vec());
        let gen = bind_const(g, &self.gen);
        let dis = bind_const(g, &self.dis);
        let z = self.inv.forward(g, &inv, x, Mode::Train, None)?.last();
        let xr = self.gen.forward(g, &gen, z, Mode::Eval, None)?.last();
        let fx = self.dis.forward(g, &dis, x, Mode::Eval, Some(self.tap))?.last();
        let fr = self.dis.forward(g, &dis, xr, Mode::Eval, Some(self.tap))?.last();
        let rd = g.sub(x, xr)?;
        let rd = g.square(rd)?;
        let r = g.mean_rows(rd)?;
        let r = g.sqrt(r)?;
        let fd = g.sub(fx, fr)?;
        let fd = g.square(fd)?;
        let d = g.mean_rows(fd)?;
        let d = g.sqrt(d)?;
        let r = g.scale(r, T::lit(1.0 - self.lambda))?;
        let d = g.scale(d, T::lit(self.lambda))?;
        let a = g.add(r, d)?;
        g.sum(a)
    }
}

#[test]
fn composite_inversion_loss_gradients() {
    let (mut gan, inv) = desk_models(8);
    // Running statistics taken from a batch make eval-mode layers nontrivial.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for net in [&mut gan.gen, &mut gan.dis] {
        for (_, t) in net.buffers_mut() {
            let noise = Tensor::randn(t.shape(), 0.1, &mut rng);
            for (v, n) in t.data_mut().iter_mut().zip(noise.data()) {
                *v = (*v + n).abs().max(0.05);
            }
        }
    }
    let f = Composite {
        tap: gonogo_core::models::feature_layer(&gan.dis),
        inv: inv.net.clone(),
        gen: gan.gen.clone(),
        dis: gan.dis.clone(),
        lambda: 0.1,
    };
    let x = batch(&positives(2));
    let mut params = vec![("x".to_string(), x)];
    params.extend(inv.net.parameters().into_iter().map(|(n, t)| (n, t.clone())));
    let cfg = GradCheckConfig {
        max_entries: 12,
        ..Default::default()
    };
    let reports = check_gradients(&f, &params, &cfg).unwrap();
    assert_eq!(reports.len(), params.len());
    for r in &reports {
        assert!(r.entries_checked >= 10.min(params.iter().find(|p| p.0 == r.name).unwrap().1.numel()));
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }
}
