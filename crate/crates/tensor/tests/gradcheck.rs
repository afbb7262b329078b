use gonogo_tensor::gradcheck::{check_gradients, Differentiable, GradCheckConfig, ParamReport};
use gonogo_tensor::nn::Activation;
use gonogo_tensor::{BatchNormMode, Graph, Result, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Reduces an arbitrary tensor to a scalar through fixed random weights, so
/// every output entry contributes a distinct amount.
fn project<T: Scalar>(g: &mut Graph<T>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.input(Tensor::<f32>::randn(&shape, 1.0, &mut rng).cast());
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn assert_reports(reports: &[ParamReport], tol: f64) {
    for r in reports {
        assert!(r.max_rel_error < tol, "{r:?}");
    }
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

struct Linear;
impl Differentiable for Linear {
    fn loss<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var]) -> Result<Var> {
        let y = g.linear(p[0], p[1], p[2])?;
        project(g, y, 1)
    }
}

#[test]
fn linear_layer_at_1e4() {
    let params = vec![
        ("x".to_string(), randn(&[3, 5], 1)),
        ("weight".to_string(), randn(&[4, 5], 2)),
        ("bias".to_string(), randn(&[4], 3)),
    ];
    let r = check_gradients(&Linear, &params, &GradCheckConfig::default()).unwrap();
    assert_reports(&r, 1e-4);
}

struct Conv {
    stride: usize,
    pad: usize,
}
impl Differentiable for Conv {
    fn loss<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var]) -> Result<Var> {
        let y = g.conv2d(p[0], p[1], p[2], self.stride, self.pad)?;
        project(g, y, 2)
    }
}

#[test]
fn conv_layer_at_1e3() {
    let params = vec![
        ("x".to_string(), randn(&[2, 3, 6, 6], 4)),
        ("weight".to_string(), randn(&[4, 3, 4, 4], 5)),
        ("bias".to_string(), randn(&[4], 6)),
    ];
    let cfg = GradCheckConfig::default();
    let r = check_gradients(&Conv { stride: 2, pad: 1 }, &params, &cfg).unwrap();
    assert_reports(&r, 1e-3);
    let r = check_gradients(&Conv { stride: 1, pad: 0 }, &params, &cfg).unwrap();
    assert_reports(&r, 1e-3);
}

struct Deconv;
impl Differentiable for Deconv {
    fn loss<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var]) -> Result<Var> {
        let y = g.deconv2d(p[0], p[1], p[2], 2, 1)?;
        project(g, y, 3)
    }
}

#[test]
fn deconv_layer_at_1e3() {
    let params = vec![
        ("x".to_string(), randn(&[2, 4, 3, 3], 7)),
        ("weight".to_string(), randn(&[4, 3, 4, 4], 8)),
        ("bias".to_string(), randn(&[3], 9)),
    ];
    let r = check_gradients(&Deconv, &params, &GradCheckConfig::default()).unwrap();
    assert_reports(&r, 1e-3);
}

struct BatchNorm {
    eval: bool,
}
impl Differentiable for BatchNorm {
    fn loss<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var]) -> Result<Var> {
        let c = g.shape(p[0])[1];
        let mode = if self.eval {
            BatchNormMode::Eval {
                mean: Tensor::<f32>::from_fn(&[c], |i| 0.1 * i as f32).cast(),
                var: Tensor::<f32>::from_fn(&[c], |i| 0.5 + i as f32).cast(),
            }
        } else {
            BatchNormMode::Train
        };
        let y = g.batch_norm(p[0], p[1], p[2], mode, 1e-5)?;
        project(g, y, 4)
    }
}

#[test]
fn batch_norm_at_1e3() {
    for (shape, eval) in [(vec![4, 3, 2, 2], false), (vec![5, 3], false), (vec![4, 3, 2, 2], true)] {
        let params = vec![
            ("x".to_string(), randn(&shape, 10)),
            ("gamma".to_string(), randn(&[3], 11).map(|v| 1.0 + 0.1 * v)),
            ("beta".to_string(), randn(&[3], 12)),
        ];
        let r = check_gradients(&BatchNorm { eval }, &params, &GradCheckConfig::default()).unwrap();
        assert_reports(&r, 1e-3);
    }
}

struct Act(Activation);
impl Differentiable for Act {
    fn loss<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var]) -> Result<Var> {
        let y = self.0.apply(g, p[0])?;
        project(g, y, 5)
    }
}

#[test]
fn every_activation_at_1e3() {
    // Keep entries away from the ReLU/ELU kink so the central difference is valid.
    let x = randn(&[4, 6], 13).map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
    for act in [
        Activation::Relu,
        Activation::Elu,
        Activation::Linear,
        Activation::Softmax,
        Activation::Sigmoid,
    ] {
        let r = check_gradients(&Act(act), &[("x".into(), x.clone())], &GradCheckConfig::default())
            .unwrap();
        assert_reports(&r, 1e-3);
    }
}

struct Elementwise;
impl Differentiable for Elementwise {
    fn loss<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var]) -> Result<Var> {
        let a = g.abs(p[0])?;
        let s = g.add_scalar(a, T::lit(0.5))?;
        let r = g.sqrt(s)?;
        let l = g.log_clamped(s, T::lit(1e-7))?;
        let m = g.mul_broadcast(r, p[1])?;
        let d = g.sub(m, l)?;
        let rows = g.mean_rows(d)?;
        let sq = g.square(rows)?;
        let c0 = g.select_col(p[0], 1)?;
        let cat = g.concat_cols(&[sq, c0])?;
        let n = g.neg(cat)?;
        project(g, n, 6)
    }
}

#[test]
fn elementwise_and_reduction_ops_at_1e3() {
    let x = randn(&[3, 4], 14).map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
    let params = vec![("x".into(), x), ("m".into(), randn(&[4], 15))];
    let r = check_gradients(&Elementwise, &params, &GradCheckConfig::default()).unwrap();
    assert_reports(&r, 1e-3);
}

/// `x²` recorded as a custom op whose backward rule is off by 10%.
struct Corrupted {
    factor: f64,
}
impl Differentiable for Corrupted {
    fn loss<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var]) -> Result<Var> {
        let value = g.value(p[0]).map(|v| v * v);
        let factor = T::lit(self.factor);
        let y = g.custom(&[p[0]], value, move |ins, _out, gout| {
            let x = ins[0].data();
            let grad = gout.data().iter().zip(x).map(|(&go, &xv)| go * T::lit(2.0) * xv * factor);
            vec![Tensor::new(ins[0].shape(), grad.collect()).unwrap()]
        });
        project(g, y, 7)
    }
}

#[test]
fn corrupted_backward_is_flagged() {
    let params = vec![("x".to_string(), randn(&[10], 16))];
    let cfg = GradCheckConfig::default();
    let honest = check_gradients(&Corrupted { factor: 1.0 }, &params, &cfg).unwrap();
    assert!(honest[0].max_rel_error < 1e-3, "{honest:?}");
    let broken = check_gradients(&Corrupted { factor: 1.1 }, &params, &cfg).unwrap();
    assert!(broken[0].max_rel_error > 0.05, "{broken:?}");
}
