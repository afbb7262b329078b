//! Layer descriptions and a sequential network built from them.

use std::fmt;

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::graph::{BatchNormMode, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.9;
/// Standard deviation of the normal weight initialisation.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    Deconv,
    FullyConnected,
    BatchNorm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    /// Exponential linear unit, alpha = 1.
    Elu,
    Linear,
    /// Softmax over the class (last) axis.
    Softmax,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Scalar>(self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Elu => g.elu(x),
            Activation::Linear => Ok(x),
            Activation::Softmax => g.softmax(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Relu => "relu",
            Activation::Elu => "elu",
            Activation::Linear => "linear",
            Activation::Softmax => "softmax",
            Activation::Sigmoid => "sigmoid",
        };
        f.write_str(s)
    }
}

/// One row of a network table: what the layer is and what it produces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub filter: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Per-sample output size `(C, H, W)`; `H = W = 1` for flat outputs.
    pub output: [usize; 3],
    pub activation: Activation,
}

impl LayerSpec {
    pub fn conv(name: &str, cin: usize, cout: usize, out_hw: usize, act: Activation) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Conv,
            filter: (4, 4),
            stride: 2,
            padding: 1,
            in_channels: cin,
            out_channels: cout,
            output: [cout, out_hw, out_hw],
            activation: act,
        }
    }

    pub fn deconv(name: &str, cin: usize, cout: usize, out_hw: usize, act: Activation) -> Self {
        Self {
            kind: LayerKind::Deconv,
            ..Self::conv(name, cin, cout, out_hw, act)
        }
    }

    pub fn fully_connected(name: &str, fan_in: usize, output: [usize; 3], act: Activation) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::FullyConnected,
            filter: (1, 1),
            stride: 1,
            padding: 0,
            in_channels: fan_in,
            out_channels: output.iter().product(),
            output,
            activation: act,
        }
    }

    pub fn batch_norm(name: &str, output: [usize; 3], act: Activation) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::BatchNorm,
            filter: (1, 1),
            stride: 1,
            padding: 0,
            in_channels: output[0],
            out_channels: output[0],
            output,
            activation: act,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.filter.0 == 0 || self.filter.1 == 0 || self.stride == 0 {
            return Err(TensorError::InvalidArgument(format!(
                "layer {}: filter and stride must be positive",
                self.name
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.output.contains(&0) {
            return Err(TensorError::InvalidArgument(format!(
                "layer {}: channel counts must be positive",
                self.name
            )));
        }
        Ok(())
    }

    fn param_shapes(&self) -> (Vec<usize>, Vec<usize>) {
        let (kh, kw) = self.filter;
        match self.kind {
            LayerKind::Conv => (
                vec![self.out_channels, self.in_channels, kh, kw],
                vec![self.out_channels],
            ),
            LayerKind::Deconv => (
                vec![self.in_channels, self.out_channels, kh, kw],
                vec![self.out_channels],
            ),
            LayerKind::FullyConnected => (
                vec![self.out_channels, self.in_channels],
                vec![self.out_channels],
            ),
            LayerKind::BatchNorm => (vec![self.out_channels], vec![self.out_channels]),
        }
    }
}

/// A layer's spec and its parameters. For batch norm, `weight`/`bias` are
/// the scale and shift and the running statistics are populated.
#[derive(Clone, Debug)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Tensor,
    pub bias: Tensor,
    pub running_mean: Option<Tensor>,
    pub running_var: Option<Tensor>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Graph handles for a network's parameters, in [`Network::parameters`] order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps parameter nodes listed in [`Network::parameters`] order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn layer(&self, i: usize) -> (Var, Var) {
        (self.vars[2 * i], self.vars[2 * i + 1])
    }
}

/// Per-layer outputs of a forward pass.
#[derive(Clone, Debug)]
pub struct Activations {
    pub outputs: Vec<Var>,
    bn_nodes: Vec<(usize, Var)>,
}

impl Activations {
    pub fn last(&self) -> Var {
        *self.outputs.last().expect("forward produced no layers")
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    input: [usize; 3],
    layers: Vec<Layer>,
}

impl Network {
    /// Builds a chain of layers and checks that every declared output size
    /// follows from the previous layer.
    pub fn new(input: [usize; 3], specs: Vec<LayerSpec>) -> Result<Self> {
        let mut shape = input;
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            spec.validate()?;
            let expected = match spec.kind {
                LayerKind::Conv | LayerKind::Deconv => {
                    if spec.in_channels != shape[0] {
                        return Err(mismatch(&spec.name, "input channels", spec.in_channels, shape[0]));
                    }
                    let (k, s, p) = (spec.filter.0, spec.stride, spec.padding);
                    let side = |n: usize| {
                        if spec.kind == LayerKind::Conv {
                            (n + 2 * p).checked_sub(k).map(|v| v / s + 1)
                        } else {
                            ((n - 1) * s + k).checked_sub(2 * p)
                        }
                    };
                    let h = side(shape[1]).ok_or_else(|| mismatch(&spec.name, "height", k, shape[1]))?;
                    let w = side(shape[2]).ok_or_else(|| mismatch(&spec.name, "width", k, shape[2]))?;
                    [spec.out_channels, h, w]
                }
                LayerKind::FullyConnected => {
                    let fan_in: usize = shape.iter().product();
                    if spec.in_channels != fan_in {
                        return Err(mismatch(&spec.name, "input features", spec.in_channels, fan_in));
                    }
                    spec.output
                }
                LayerKind::BatchNorm => shape,
            };
            if expected != spec.output {
                let dim = expected
                    .iter()
                    .zip(&spec.output)
                    .position(|(a, b)| a != b)
                    .unwrap_or(0);
                return Err(mismatch(
                    &spec.name,
                    ["output channels", "output height", "output width"][dim],
                    expected[dim],
                    spec.output[dim],
                ));
            }
            shape = spec.output;
            let (ws, bs) = spec.param_shapes();
            let is_bn = spec.kind == LayerKind::BatchNorm;
            layers.push(Layer {
                weight: if is_bn { Tensor::ones(&ws) } else { Tensor::zeros(&ws) },
                bias: Tensor::zeros(&bs),
                running_mean: is_bn.then(|| Tensor::zeros(&bs)),
                running_var: is_bn.then(|| Tensor::ones(&bs)),
                spec,
            });
        }
        Ok(Self { input, layers })
    }

    /// Normal(0, 0.02) weights, zero biases, batch-norm scales Normal(1, 0.02).
    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for layer in &mut self.layers {
            let shape = layer.weight.shape().to_vec();
            layer.weight = Tensor::randn(&shape, INIT_STD, rng);
            if layer.spec.kind == LayerKind::BatchNorm {
                for v in layer.weight.data_mut() {
                    *v += 1.0;
                }
            }
            layer.bias.data_mut().fill(0.0);
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input
    }

    pub fn output_shape(&self) -> [usize; 3] {
        self.layers.last().map_or(self.input, |l| l.spec.output)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    (format!("{}.weight", l.spec.name), &l.weight),
                    (format!("{}.bias", l.spec.name), &l.bias),
                ]
            })
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    (format!("{}.weight", l.spec.name), &mut l.weight),
                    (format!("{}.bias", l.spec.name), &mut l.bias),
                ]
            })
            .collect()
    }

    /// Batch-norm running statistics.
    pub fn buffers(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for l in &self.layers {
            if let (Some(m), Some(v)) = (&l.running_mean, &l.running_var) {
                out.push((format!("{}.running_mean", l.spec.name), m));
                out.push((format!("{}.running_var", l.spec.name), v));
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            let name = l.spec.name.clone();
            if let (Some(m), Some(v)) = (&mut l.running_mean, &mut l.running_var) {
                out.push((format!("{name}.running_mean"), m));
                out.push((format!("{name}.running_var"), v));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Places the parameters on `g`, as trainable leaves or as constants.
    pub fn bind<T: Scalar>(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .parameters()
            .into_iter()
            .map(|(_, t)| g.leaf(t.cast(), trainable))
            .collect();
        Bound { vars }
    }

    /// Runs layers `0..=last` (all layers when `last` is `None`).
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        x: Var,
        mode: Mode,
        last: Option<usize>,
    ) -> Result<Activations> {
        if bound.vars.len() != 2 * self.layers.len() {
            return Err(TensorError::InvalidArgument(format!(
                "{} bound parameters for {} layers",
                bound.vars.len(),
                self.layers.len()
            )));
        }
        let stop = last.unwrap_or(self.layers.len() - 1);
        let mut h = x;
        let mut outputs = Vec::with_capacity(stop + 1);
        let mut bn_nodes = Vec::new();
        for (i, layer) in self.layers.iter().enumerate().take(stop + 1) {
            let spec = &layer.spec;
            let (w, b) = bound.layer(i);
            let pre = match spec.kind {
                LayerKind::Conv => g.conv2d(h, w, b, spec.stride, spec.padding)?,
                LayerKind::Deconv => g.deconv2d(h, w, b, spec.stride, spec.padding)?,
                LayerKind::FullyConnected => {
                    let flat = g.flatten(h)?;
                    let y = g.linear(flat, w, b)?;
                    let n = g.shape(y)[0];
                    let [c, oh, ow] = spec.output;
                    if oh * ow > 1 {
                        g.reshape(y, &[n, c, oh, ow])?
                    } else {
                        y
                    }
                }
                LayerKind::BatchNorm => {
                    let bn_mode = match mode {
                        Mode::Train => BatchNormMode::Train,
                        Mode::Eval => BatchNormMode::Eval {
                            mean: layer
                                .running_mean
                                .as_ref()
                                .ok_or(TensorError::MissingRunningStats)?
                                .cast(),
                            var: layer
                                .running_var
                                .as_ref()
                                .ok_or(TensorError::MissingRunningStats)?
                                .cast(),
                        },
                    };
                    let y = g.batch_norm(h, w, b, bn_mode, BN_EPS)?;
                    bn_nodes.push((i, y));
                    y
                }
            };
            h = spec.activation.apply(g, pre)?;
            outputs.push(h);
        }
        Ok(Activations { outputs, bn_nodes })
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// estimates (exponential moving average, unbiased variance).
    pub fn absorb_batch_stats<T: Scalar>(&mut self, g: &Graph<T>, acts: &Activations) {
        for &(i, node) in &acts.bn_nodes {
            let Some(stats) = g.batch_stats(node) else {
                continue;
            };
            let layer = &mut self.layers[i];
            let correction = if stats.count > 1 {
                stats.count as f32 / (stats.count - 1) as f32
            } else {
                1.0
            };
            if let Some(rm) = &mut layer.running_mean {
                for (r, &m) in rm.data_mut().iter_mut().zip(&stats.mean) {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m.to_f32();
                }
            }
            if let Some(rv) = &mut layer.running_var {
                for (r, &v) in rv.data_mut().iter_mut().zip(&stats.var) {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v.to_f32() * correction;
                }
            }
        }
    }
}

fn mismatch(layer: &str, dim: &str, expected: usize, actual: usize) -> TensorError {
    TensorError::ShapeMismatch {
        op: "network",
        dim: format!("{layer} {dim}"),
        expected,
        actual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny() -> Network {
        Network::new(
            [3, 8, 8],
            vec![
                LayerSpec::conv("conv1", 3, 4, 4, Activation::Linear),
                LayerSpec::batch_norm("bn1", [4, 4, 4], Activation::Elu),
                LayerSpec::fully_connected("fc2", 64, [2, 1, 1], Activation::Softmax),
            ],
        )
        .unwrap()
    }

    #[test]
    fn rejects_inconsistent_chain() {
        let err = Network::new(
            [3, 8, 8],
            vec![LayerSpec::conv("conv1", 3, 4, 5, Activation::Elu)],
        )
        .unwrap_err();
        assert!(err.to_string().contains("conv1 output height"), "{err}");
        let err = Network::new(
            [3, 8, 8],
            vec![LayerSpec::conv("conv1", 2, 4, 4, Activation::Elu)],
        )
        .unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
    }

    #[test]
    fn forward_shapes_and_softmax_rows() {
        let mut net = tiny();
        net.init(&mut rand::rngs::StdRng::seed_from_u64(1));
        let mut g = Graph::<f32>::new();
        let p = net.bind(&mut g, true);
        let x = g.input(Tensor::from_fn(&[2, 3, 8, 8], |i| (i as f32 * 0.1).sin()));
        let acts = net.forward(&mut g, &p, x, Mode::Train, None).unwrap();
        let out = g.value(acts.last());
        assert_eq!(out.shape(), &[2, 2]);
        for row in out.data().chunks(2) {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-6);
        }
        let feat = g.value(acts.outputs[1]);
        assert_eq!(feat.shape(), &[2, 4, 4, 4]);
    }

    #[test]
    fn running_stats_move_toward_batch_stats() {
        let mut net = tiny();
        net.init(&mut rand::rngs::StdRng::seed_from_u64(2));
        let mut g = Graph::<f32>::new();
        let p = net.bind(&mut g, false);
        let x = g.input(Tensor::from_fn(&[4, 3, 8, 8], |i| 2.0 + (i as f32 * 0.3).cos()));
        let acts = net.forward(&mut g, &p, x, Mode::Train, Some(1)).unwrap();
        let before = net.layers()[1].running_mean.clone().unwrap();
        net.absorb_batch_stats(&g, &acts);
        let after = net.layers()[1].running_mean.as_ref().unwrap();
        assert_ne!(&before, after);
        assert!(before.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_mode_is_batch_independent() {
        let mut net = tiny();
        net.init(&mut rand::rngs::StdRng::seed_from_u64(3));
        let batch = Tensor::<f32>::from_fn(&[3, 3, 8, 8], |i| (i as f32 * 0.7).sin());
        let mut g = Graph::<f32>::new();
        let p = net.bind(&mut g, false);
        let x = g.input(batch.clone());
        let full = net.forward(&mut g, &p, x, Mode::Eval, None).unwrap().last();
        let full = g.value(full).clone();
        for i in 0..3 {
            let mut g1 = Graph::<f32>::new();
            let p1 = net.bind(&mut g1, false);
            let xi = g1.input(batch.index_first(i).reshape(&[1, 3, 8, 8]).unwrap());
            let yi = net.forward(&mut g1, &p1, xi, Mode::Eval, None).unwrap().last();
            assert_eq!(g1.value(yi).data(), &full.data()[i * 2..i * 2 + 2]);
        }
    }
}
