use gonogo_tensor::{AdamConfig, AdamState, Graph, Tensor};
use proptest::prelude::*;

fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..5, 1..4)
}

proptest! {
    #[test]
    fn numel_matches_shape(shape in shape_strategy()) {
        let t = Tensor::<f32>::zeros(&shape);
        prop_assert_eq!(t.numel(), shape.iter().product::<usize>());
        prop_assert_eq!(t.data().len(), t.numel());
    }

    #[test]
    fn gradient_shapes_match_values(shape in shape_strategy(), seed in 0u64..1000) {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::from_fn(&shape, |i| ((i as u64 + seed) as f32 * 0.37).sin()));
        let e = g.elu(x).unwrap();
        let s = g.square(e).unwrap();
        let l = g.mean(s).unwrap();
        g.backward(l).unwrap();
        prop_assert_eq!(g.grad(x).unwrap().shape(), &shape[..]);
    }

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..6, scale in 0.1f32..50.0) {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::from_fn(&[rows, cols], |i| (i as f32 * 1.7).sin() * scale));
        let y = g.softmax(x).unwrap();
        for row in g.value(y).data().chunks(cols) {
            let s: f32 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-5);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn conv_is_linear_in_input(a in -2.0f32..2.0, seed in 0u64..500) {
        let x1 = Tensor::<f32>::from_fn(&[1, 2, 5, 5], |i| ((i as u64 * 7 + seed) as f32).sin());
        let x2 = Tensor::<f32>::from_fn(&[1, 2, 5, 5], |i| ((i as u64 * 3 + seed) as f32).cos());
        let w = Tensor::<f32>::from_fn(&[3, 2, 3, 3], |i| (i as f32 * 0.21).sin());
        let run = |x: Tensor| {
            let mut g = Graph::<f32>::new();
            let (x, w, b) = (g.input(x), g.input(w.clone()), g.input(Tensor::zeros(&[3])));
            let y = g.conv2d(x, w, b, 2, 1).unwrap();
            g.value(y).clone()
        };
        let combo = Tensor::new(
            &[1, 2, 5, 5],
            x1.data().iter().zip(x2.data()).map(|(p, q)| a * p + q).collect(),
        ).unwrap();
        let lhs = run(combo);
        let (y1, y2) = (run(x1), run(x2));
        for ((l, p), q) in lhs.data().iter().zip(y1.data()).zip(y2.data()) {
            prop_assert!((l - (a * p + q)).abs() < 1e-4);
        }
    }

    #[test]
    fn adam_never_moves_params_without_gradient(vals in prop::collection::vec(-5.0f32..5.0, 1..8)) {
        let n = vals.len();
        let mut w = Tensor::new(&[n], vals.clone()).unwrap();
        let mut frozen = Tensor::new(&[n], vals).unwrap();
        let snapshot = frozen.clone();
        let mut st = AdamState::new();
        st.step(
            &AdamConfig::default(),
            &mut [("w".into(), &mut w), ("frozen".into(), &mut frozen)],
            &[Some(Tensor::ones(&[n])), None],
        ).unwrap();
        prop_assert_eq!(frozen, snapshot);
    }
}
