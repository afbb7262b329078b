use gonogo_tensor::{AdamConfig, AdamState, Graph, Tensor};

#[test]
fn zero_gradient_leaves_params_and_decays_moments() {
    let cfg = AdamConfig::default();
    let mut w = Tensor::<f32>::new(&[2], vec![0.3, -0.7]).unwrap();
    let mut st = AdamState::new();
    st.step(&cfg, &mut [("w".into(), &mut w)], &[Some(Tensor::ones(&[2]))]).unwrap();
    let after_first = w.clone();
    let (m1, v1) = st.moments(0).map(|(m, v)| (m.to_vec(), v.to_vec())).unwrap();
    st.step(&cfg, &mut [("w".into(), &mut w)], &[Some(Tensor::zeros(&[2]))]).unwrap();
    let (m2, v2) = st.moments(0).unwrap();
    for i in 0..2 {
        assert!(m2[i].abs() < m1[i].abs());
        assert!(v2[i] < v1[i]);
    }
    // Momentum still moves the weights; with fresh state a zero gradient cannot.
    let mut fresh = AdamState::new();
    let mut u = after_first.clone();
    fresh.step(&cfg, &mut [("u".into(), &mut u)], &[Some(Tensor::zeros(&[2]))]).unwrap();
    assert_eq!(u, after_first);
    assert_eq!(fresh.step, 1);
}

/// Plain scalar Adam written out longhand.
fn reference_adam_on_square(w0: f64, lr: f64, steps: usize) -> Vec<f64> {
    let (b1, b2, eps) = (0.5f64, 0.999f64, 1e-8f64);
    let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = 2.0 * w;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        w -= lr * mh / (vh.sqrt() + eps);
        out.push(w);
    }
    out
}

#[test]
fn minimizes_square_like_reference() {
    let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
    let mut w = Tensor::<f32>::scalar(1.0);
    let mut st = AdamState::new();
    let reference = reference_adam_on_square(1.0, 0.1, 100);
    for r in &reference {
        let mut g = Graph::<f32>::new();
        let wv = g.param(w.clone());
        let sq = g.square(wv).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(wv).cloned();
        st.step(&cfg, &mut [("w".into(), &mut w)], &[grad]).unwrap();
        assert!((w.item() as f64 - r).abs() < 1e-4, "{} vs {r}", w.item());
    }
    assert!(w.item().abs() < 0.1, "{}", w.item());
    assert!(reference.last().unwrap().abs() < 0.1);
    assert_eq!(st.step, 100);
}

#[test]
fn identical_inputs_give_bitwise_identical_updates() {
    let cfg = AdamConfig::default();
    let run = || {
        let mut w = Tensor::<f32>::from_fn(&[64], |i| (i as f32 * 0.37).sin());
        let mut st = AdamState::new();
        for k in 0..20 {
            let g = Tensor::<f32>::from_fn(&[64], |i| ((i + k) as f32 * 0.11).cos());
            st.step(&cfg, &mut [("w".into(), &mut w)], &[Some(g)]).unwrap();
        }
        w
    };
    let (a, b) = (run(), run());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn nan_gradient_names_parameter() {
    let mut w = Tensor::<f32>::ones(&[1]);
    let mut st = AdamState::new();
    let err = st
        .step(
            &AdamConfig::default(),
            &mut [("fc5.weight".into(), &mut w)],
            &[Some(Tensor::full(&[1], f32::NAN))],
        )
        .unwrap_err();
    assert!(err.to_string().contains("fc5.weight"), "{err}");
}

#[test]
fn rejects_bad_settings() {
    assert!(AdamConfig { lr: 0.0, ..AdamConfig::default() }.validate().is_err());
    assert!(AdamConfig { beta1: 1.0, ..AdamConfig::default() }.validate().is_err());
    assert!(AdamConfig::default().validate().is_ok());
}
