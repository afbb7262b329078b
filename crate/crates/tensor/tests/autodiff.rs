use gonogo_tensor::{nn, BatchNormMode, Graph, Layer, LayerSpec, Mode, Network, Tensor, TensorError};
use gonogo_tensor::nn::Activation;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn channel_moments(t: &Tensor, c: usize) -> Vec<(f64, f64)> {
    let (n, plane) = (t.shape()[0], t.numel() / (t.shape()[0] * c));
    (0..c)
        .map(|ch| {
            let vals: Vec<f64> = (0..n)
                .flat_map(|i| {
                    let base = (i * c + ch) * plane;
                    t.data()[base..base + plane].iter().map(|&v| v as f64)
                })
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            (m, v)
        })
        .collect()
}

fn bn_train(x: Tensor, gamma: f32, beta: f32) -> Tensor {
    let c = x.shape()[1];
    let mut g = Graph::<f32>::new();
    let x = g.input(x);
    let ga = g.input(Tensor::full(&[c], gamma));
    let be = g.input(Tensor::full(&[c], beta));
    let y = g.batch_norm(x, ga, be, BatchNormMode::Train, nn::BN_EPS).unwrap();
    g.value(y).clone()
}

#[test]
fn batch_norm_of_constant_batch_is_zero() {
    let y = bn_train(Tensor::full(&[4, 2, 3, 3], 7.5), 1.0, 0.0);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn batch_norm_shift_sets_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::randn(&[16, 3, 4, 4], 1.0, &mut rng);
    let standardized = bn_train(x, 1.0, 0.0);
    let y = bn_train(standardized, 1.0, 5.0);
    for (m, _) in channel_moments(&y, 3) {
        assert!((m - 5.0).abs() < 1e-5, "{m}");
    }
}

#[test]
fn batch_norm_standardizes_random_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::randn(&[8, 5, 6, 6], 3.0, &mut rng).map(|v| v + 2.0);
    let y = bn_train(x, 1.0, 0.0);
    for (m, v) in channel_moments(&y, 5) {
        assert!(m.abs() < 1e-5, "mean {m}");
        assert!((v - 1.0).abs() < 1e-3, "var {v}");
    }
}

#[test]
fn eval_mode_without_running_stats_errors() {
    let mut net = Network::new(
        [2, 1, 1],
        vec![LayerSpec::batch_norm("bn", [2, 1, 1], Activation::Linear)],
    )
    .unwrap();
    let layer: &mut Layer = &mut net.layers_mut()[0];
    layer.running_mean = None;
    let mut g = Graph::<f32>::new();
    let p = net.bind(&mut g, false);
    let x = g.input(Tensor::ones(&[3, 2]));
    let err = net.forward(&mut g, &p, x, Mode::Eval, None).unwrap_err();
    assert_eq!(err, TensorError::MissingRunningStats);

    let ga = g.input(Tensor::ones(&[2]));
    let be = g.input(Tensor::zeros(&[2]));
    let bad = BatchNormMode::Eval {
        mean: Tensor::zeros(&[1]),
        var: Tensor::ones(&[1]),
    };
    assert_eq!(
        g.batch_norm(x, ga, be, bad, nn::BN_EPS).unwrap_err(),
        TensorError::MissingRunningStats
    );
}

#[test]
fn activation_values() {
    let mut g = Graph::<f32>::new();
    let x = g.input(Tensor::new(&[1, 2], vec![-2.0, 3.0]).unwrap());
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r).data(), &[0.0, 3.0]);
    let e = g.elu(x).unwrap();
    assert!((g.value(e).data()[0] - ((-2.0f32).exp() - 1.0)).abs() < 1e-7);
    assert_eq!(g.value(e).data()[1], 3.0);
    let z = g.input(Tensor::zeros(&[1, 2]));
    let s = g.sigmoid(z).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    let sm = g.softmax(z).unwrap();
    assert_eq!(g.value(sm).data(), &[0.5, 0.5]);
    let big = g.input(Tensor::new(&[1, 2], vec![1000.0, -1000.0]).unwrap());
    let sb = g.sigmoid(big).unwrap();
    assert_eq!(g.value(sb).data(), &[1.0, 0.0]);
    let smb = g.softmax(big).unwrap();
    assert!(g.value(smb).data().iter().all(|v| v.is_finite()));
}

#[test]
fn grad_of_sum_is_ones() {
    let mut g = Graph::<f32>::new();
    let x = g.param(Tensor::from_fn(&[2, 3, 4], |i| i as f32));
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn grad_of_squared_norm_is_twice_input() {
    let mut g = Graph::<f32>::new();
    let xv = Tensor::from_fn(&[5], |i| i as f32 - 2.5);
    let x = g.param(xv.clone());
    let sq = g.square(x).unwrap();
    let s = g.sum(sq).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &xv.map(|v| 2.0 * v));
}

#[test]
fn reused_value_accumulates() {
    let mut g = Graph::<f32>::new();
    let x = g.param(Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
    let a = g.scale(x, 3.0).unwrap();
    let b = g.mul(x, x).unwrap();
    let c = g.add(a, b).unwrap();
    let s = g.sum(c).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[5.0, -1.0, 4.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g = Graph::<f32>::new();
    let x = g.param(Tensor::ones(&[2, 2]));
    assert_eq!(g.backward(x).unwrap_err(), TensorError::NonScalarLoss(vec![2, 2]));
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::<f32>::new();
    let x = g.input(Tensor::ones(&[3]));
    let w = g.param(Tensor::ones(&[3]));
    let y = g.mul(x, w).unwrap();
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(x).is_none());
    assert!(g.grad(w).is_some());
}

#[test]
fn log_of_zero_is_clamped() {
    let mut g = Graph::<f32>::new();
    let x = g.param(Tensor::zeros(&[1]));
    let l = g.log_clamped(x, 1e-7).unwrap();
    assert!((g.value(l).item() - (1e-7f32).ln()).abs() < 1e-5);
    let s = g.sum(l).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|v| v.is_finite()));
}

#[test]
fn check_finite_surfaces_nan() {
    let mut g = Graph::<f32>::new();
    let x = g.input(Tensor::new(&[2], vec![1.0, f32::NAN]).unwrap());
    assert_eq!(
        g.check_finite(x, "reconstruction").unwrap_err(),
        TensorError::NonFinite("reconstruction".into())
    );
}
