//! Reverse-mode automatic differentiation over a recorded graph.
//!
//! A [`Graph`] is an append-only arena: every op pushes a node holding its
//! value and the recipe for its local derivative. Parents always precede
//! children, so [`Graph::backward`] is a single reverse sweep over the
//! arena. Gradients accumulate additively, so a value consumed twice
//! receives the sum of both contributions.

use std::fmt;

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeom};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub type CustomBackward<T> =
    Box<dyn Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Tensor<T>> + Send + Sync>;

/// How a batch-norm node obtains its normalization statistics.
pub enum BatchNormMode<T: Scalar> {
    /// Normalize by the statistics of the current batch.
    Train,
    /// Normalize by supplied running statistics.
    Eval { mean: Tensor<T>, var: Tensor<T> },
}

/// Batch statistics recorded by a train-mode batch-norm node.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (1/M) variance of the batch.
    pub var: Vec<T>,
    /// Number of values per channel the statistics were computed over.
    pub count: usize,
}

enum Op<T: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulBroadcast { x: Var, m: Var },
    Scale(Var, T),
    AddScalar(Var),
    Abs(Var),
    Square(Var),
    Sqrt(Var),
    LogClamped { x: Var, eps: T },
    Relu(Var),
    Elu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    MeanRows(Var),
    Reshape(Var),
    SelectCol { x: Var, col: usize },
    Concat(Vec<Var>),
    Linear { x: Var, w: Var, b: Var },
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom },
    Deconv { x: Var, w: Var, b: Var, geom: ConvGeom },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        inv_std: Vec<T>,
        mean: Vec<T>,
        stats: Option<BatchStats<T>>,
    },
    Custom { inputs: Vec<Var>, backward: CustomBackward<T> },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> fmt::Debug for Graph<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.nodes.len()).finish()
    }
}

fn mismatch(op: &'static str, dim: impl Into<String>, expected: usize, actual: usize) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        dim: dim.into(),
        expected,
        actual,
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.rank() != b.rank() {
        return Err(mismatch(op, "rank", a.rank(), b.rank()));
    }
    for (i, (&x, &y)) in a.shape().iter().zip(b.shape()).enumerate() {
        if x != y {
            return Err(mismatch(op, format!("dim {i}"), x, y));
        }
    }
    Ok(())
}

fn rank_is<T: Scalar>(op: &'static str, t: &Tensor<T>, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(TensorError::Rank {
            op,
            expected: rank,
            shape: t.shape().to_vec(),
        });
    }
    Ok(())
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_vec_unchecked(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    /// A leaf that gradients flow to.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Copies an `f32` tensor into the graph's element type.
    pub fn param_from(&mut self, value: &Tensor<f32>) -> Var {
        self.param(value.cast())
    }

    pub fn input_from(&mut self, value: &Tensor<f32>) -> Var {
        self.input(value.cast())
    }

    /// A constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.input(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`backward`](Self::backward) loss w.r.t. `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Statistics recorded by a train-mode batch-norm node.
    pub fn batch_stats(&self, v: Var) -> Option<&BatchStats<T>> {
        match &self.nodes[v.0].op {
            Op::BatchNorm { stats, .. } => stats.as_ref(),
            _ => None,
        }
    }

    /// Passes `v` through unchanged, or fails if its value is not finite.
    pub fn check_finite(&self, v: Var, what: &str) -> Result<Var> {
        self.nodes[v.0].value.ensure_finite(what)?;
        Ok(v)
    }

    // ----- elementwise --------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("add", va, vb)?;
        let out = zip_map(va, vb, |x, y| x + y);
        Ok(self.push_op(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("sub", va, vb)?;
        let out = zip_map(va, vb, |x, y| x - y);
        Ok(self.push_op(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("mul", va, vb)?;
        let out = zip_map(va, vb, |x, y| x * y);
        Ok(self.push_op(out, Op::Mul(a, b), &[a, b]))
    }

    /// Multiplies `x` by `m` repeated over leading axes; `m`'s shape must
    /// equal a suffix of `x`'s shape.
    pub fn mul_broadcast(&mut self, x: Var, m: Var) -> Result<Var> {
        let (vx, vm) = (self.value(x), self.value(m));
        let (xs, ms) = (vx.shape(), vm.shape());
        if ms.len() > xs.len() {
            return Err(mismatch("mul_broadcast", "rank", xs.len(), ms.len()));
        }
        let offset = xs.len() - ms.len();
        for (i, (&a, &b)) in xs[offset..].iter().zip(ms).enumerate() {
            if a != b {
                return Err(mismatch("mul_broadcast", format!("dim {}", offset + i), a, b));
            }
        }
        let inner = vm.numel();
        let md = vm.data();
        let out = Tensor::from_vec_unchecked(
            xs.to_vec(),
            vx.data()
                .iter()
                .enumerate()
                .map(|(i, &v)| v * md[i % inner])
                .collect(),
        );
        Ok(self.push_op(out, Op::MulBroadcast { x, m }, &[x, m]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        Ok(self.push_op(out, Op::Scale(x, c), &[x]))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.value(x).map(|v| v + c);
        Ok(self.push_op(out, Op::AddScalar(x), &[x]))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -T::one())
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.abs());
        Ok(self.push_op(out, Op::Abs(x), &[x]))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v * v);
        Ok(self.push_op(out, Op::Square(x), &[x]))
    }

    /// Square root; the derivative at exactly zero is taken as zero.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.sqrt());
        Ok(self.push_op(out, Op::Sqrt(x), &[x]))
    }

    /// `ln(max(x, eps))`; zero derivative where the clamp is active.
    pub fn log_clamped(&mut self, x: Var, eps: T) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(eps).ln());
        Ok(self.push_op(out, Op::LogClamped { x, eps }, &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        Ok(self.push_op(out, Op::Relu(x), &[x]))
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, x: Var) -> Result<Var> {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v.exp_m1() });
        Ok(self.push_op(out, Op::Elu(x), &[x]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        });
        Ok(self.push_op(out, Op::Sigmoid(x), &[x]))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let classes = *vx.shape().last().ok_or(TensorError::Rank {
            op: "softmax",
            expected: 1,
            shape: vec![],
        })?;
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(classes) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        let out = Tensor::from_vec_unchecked(vx.shape().to_vec(), data);
        Ok(self.push_op(out, Op::Softmax(x), &[x]))
    }

    // ----- reductions and reshapes --------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        Ok(self.push_op(out, Op::Sum(x), &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let out = Tensor::scalar(v.sum() / T::lit(v.numel() as f64));
        Ok(self.push_op(out, Op::Mean(x), &[x]))
    }

    fn rows_reduce(&mut self, x: Var, mean: bool) -> Result<Var> {
        let v = self.value(x);
        if v.rank() < 1 {
            return Err(TensorError::Rank {
                op: "rows_reduce",
                expected: 1,
                shape: v.shape().to_vec(),
            });
        }
        let n = v.shape()[0];
        let inner = v.numel() / n;
        let scale = if mean {
            T::one() / T::lit(inner as f64)
        } else {
            T::one()
        };
        let data = v
            .data()
            .chunks(inner)
            .map(|row| row.iter().copied().sum::<T>() * scale)
            .collect();
        let out = Tensor::from_vec_unchecked(vec![n], data);
        let op = if mean { Op::MeanRows(x) } else { Op::SumRows(x) };
        Ok(self.push_op(out, op, &[x]))
    }

    /// `[N, ...] → [N]` sum over everything but the leading axis.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        self.rows_reduce(x, false)
    }

    /// `[N, ...] → [N]` mean over everything but the leading axis.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        self.rows_reduce(x, true)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push_op(out, Op::Reshape(x), &[x]))
    }

    /// `[N, ...] → [N, rest]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() == 2 {
            return Ok(x);
        }
        let n = *shape.first().ok_or(TensorError::Rank {
            op: "flatten",
            expected: 2,
            shape: vec![],
        })?;
        let rest = shape[1..].iter().product();
        self.reshape(x, &[n, rest])
    }

    /// Column `col` of a `[N, C]` tensor as `[N]`.
    pub fn select_col(&mut self, x: Var, col: usize) -> Result<Var> {
        let v = self.value(x);
        rank_is("select_col", v, 2)?;
        let (n, c) = (v.shape()[0], v.shape()[1]);
        if col >= c {
            return Err(mismatch("select_col", "column index bound", c, col));
        }
        let data = (0..n).map(|i| v.data()[i * c + col]).collect();
        let out = Tensor::from_vec_unchecked(vec![n], data);
        Ok(self.push_op(out, Op::SelectCol { x, col }, &[x]))
    }

    /// Concatenates `[N]` or `[N, k_i]` tensors into `[N, Σk_i]`.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::InvalidArgument("concat of zero tensors".into()))?;
        let n = self.shape(*first)[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.rank() == 0 || v.rank() > 2 {
                return Err(TensorError::Rank {
                    op: "concat_cols",
                    expected: 2,
                    shape: v.shape().to_vec(),
                });
            }
            if v.shape()[0] != n {
                return Err(mismatch("concat_cols", "dim 0", n, v.shape()[0]));
            }
            widths.push(v.numel() / n);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![T::zero(); n * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..n {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let out = Tensor::from_vec_unchecked(vec![n, total], data);
        Ok(self.push_op(out, Op::Concat(parts.to_vec()), parts))
    }

    // ----- layers --------------------------------------------------------

    /// `x [N, in] · wᵀ + b` with `w [out, in]`, `b [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        rank_is("linear", vx, 2)?;
        rank_is("linear", vw, 2)?;
        let (n, fan_in) = (vx.shape()[0], vx.shape()[1]);
        let (fan_out, w_in) = (vw.shape()[0], vw.shape()[1]);
        if w_in != fan_in {
            return Err(mismatch("linear", "input features", w_in, fan_in));
        }
        if vb.numel() != fan_out {
            return Err(mismatch("linear", "bias length", fan_out, vb.numel()));
        }
        let mut data = Vec::with_capacity(n * fan_out);
        for _ in 0..n {
            data.extend_from_slice(vb.data());
        }
        for i in 0..n {
            gemm(
                MatRef::row_major(&vx.data()[i * fan_in..(i + 1) * fan_in], 1, fan_in),
                MatRef::transposed(vw.data(), fan_in, fan_out),
                T::one(),
                &mut data[i * fan_out..(i + 1) * fan_out],
            );
        }
        let out = Tensor::from_vec_unchecked(vec![n, fan_out], data);
        Ok(self.push_op(out, Op::Linear { x, w, b }, &[x, w, b]))
    }

    fn conv_checks(
        &self,
        op: &'static str,
        x: Var,
        w: Var,
        b: Var,
        weight_in_axis: usize,
    ) -> Result<(usize, usize, usize, usize, usize, usize, usize)> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        rank_is(op, vx, 4)?;
        rank_is(op, vw, 4)?;
        let (n, c, h, wd) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
        let ws = vw.shape();
        if ws[weight_in_axis] != c {
            return Err(mismatch(op, "input channels", ws[weight_in_axis], c));
        }
        let out_c = ws[1 - weight_in_axis];
        if vb.numel() != out_c {
            return Err(mismatch(op, "bias length", out_c, vb.numel()));
        }
        Ok((n, c, h, wd, out_c, ws[2], ws[3]))
    }

    /// Cross-correlation with `w [F, C, kh, kw]`, zero padding `pad`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, wd, f, kh, kw) = self.conv_checks("conv2d", x, w, b, 1)?;
        let geom = ConvGeom::for_conv("conv2d", (c, h, wd), (kh, kw), stride, pad)?;
        let data = kernels::conv_forward(
            &geom,
            n,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            f,
        );
        let out = Tensor::from_vec_unchecked(vec![n, f, geom.out_h, geom.out_w], data);
        Ok(self.push_op(out, Op::Conv { x, w, b, geom }, &[x, w, b]))
    }

    /// Transposed convolution with `w [C_in, C_out, kh, kw]`; output side
    /// `(in−1)·stride − 2·pad + k`.
    pub fn deconv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, wd, f, kh, kw) = self.conv_checks("deconv2d", x, w, b, 0)?;
        let geom = ConvGeom::for_deconv("deconv2d", f, (h, wd), (kh, kw), stride, pad)?;
        let data = kernels::deconv_forward(
            &geom,
            n,
            c,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let out = Tensor::from_vec_unchecked(vec![n, f, geom.height, geom.width], data);
        Ok(self.push_op(out, Op::Deconv { x, w, b, geom }, &[x, w, b]))
    }

    /// Per-channel normalization of `[N, C]` or `[N, C, H, W]`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<T>,
        eps: f64,
    ) -> Result<Var> {
        let vx = self.value(x);
        if vx.rank() != 2 && vx.rank() != 4 {
            return Err(TensorError::Rank {
                op: "batch_norm",
                expected: 4,
                shape: vx.shape().to_vec(),
            });
        }
        let (n, c) = (vx.shape()[0], vx.shape()[1]);
        let plane: usize = vx.shape()[2..].iter().product();
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            let len = self.value(v).numel();
            if len != c {
                return Err(mismatch("batch_norm", format!("{name} channels"), c, len));
            }
        }
        let count = n * plane;
        let eps = T::lit(eps);
        let xd = vx.data();
        let (mean, var, stats) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut acc = T::zero();
                    for i in 0..n {
                        let base = (i * c + ch) * plane;
                        acc += xd[base..base + plane].iter().copied().sum::<T>();
                    }
                    let m = acc / T::lit(count as f64);
                    let mut sq = T::zero();
                    for i in 0..n {
                        let base = (i * c + ch) * plane;
                        for &v in &xd[base..base + plane] {
                            sq += (v - m) * (v - m);
                        }
                    }
                    mean[ch] = m;
                    var[ch] = sq / T::lit(count as f64);
                }
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                    count,
                };
                (mean, var, Some(stats))
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.numel() != c || var.numel() != c {
                    return Err(TensorError::MissingRunningStats);
                }
                (mean.into_data(), var.into_data(), None)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![T::zero(); xd.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * plane;
                let (m, s, gg, bb) = (mean[ch], inv_std[ch], g[ch], bt[ch]);
                for (o, &v) in out[base..base + plane].iter_mut().zip(&xd[base..base + plane]) {
                    *o = gg * (v - m) * s + bb;
                }
            }
        }
        let out = Tensor::from_vec_unchecked(vx.shape().to_vec(), out);
        Ok(self.push_op(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                inv_std,
                mean,
                stats,
            },
            &[x, gamma, beta],
        ))
    }

    /// Records an op whose derivative is supplied by the caller.
    ///
    /// `backward(inputs, output, grad_output)` returns one gradient per
    /// input, each shaped like that input.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor<T>,
        backward: impl Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Tensor<T>>
            + Send
            + Sync
            + 'static,
    ) -> Var {
        self.push_op(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward: Box::new(backward),
            },
            inputs,
        )
    }

    // ----- backward ------------------------------------------------------

    /// Populates gradients of `loss` w.r.t. every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::ones(lv.shape()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &gout);
            self.grads[i] = Some(gout);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contribution: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(contribution.shape(), self.nodes[v.0].value.shape());
        match &mut self.grads[v.0] {
            Some(existing) => {
                for (a, &b) in existing.data_mut().iter_mut().zip(contribution.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&mut self, i: usize, gout: &Tensor<T>) {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut contributions: Vec<(Var, Tensor<T>)> = Vec::new();
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                contributions.push((*a, gout.clone()));
                contributions.push((*b, gout.clone()));
            }
            Op::Sub(a, b) => {
                contributions.push((*a, gout.clone()));
                contributions.push((*b, gout.map(|v| -v)));
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    contributions.push((*a, zip_map(gout, val(*b), |g, y| g * y)));
                }
                if self.wants(*b) {
                    contributions.push((*b, zip_map(gout, val(*a), |g, x| g * x)));
                }
            }
            Op::MulBroadcast { x, m } => {
                let (vx, vm) = (val(*x), val(*m));
                let inner = vm.numel();
                if self.wants(*x) {
                    let md = vm.data();
                    let data = gout
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(k, &g)| g * md[k % inner])
                        .collect();
                    contributions.push((*x, Tensor::from_vec_unchecked(vx.shape().to_vec(), data)));
                }
                if self.wants(*m) {
                    let mut acc = vec![T::zero(); inner];
                    for (k, (&g, &xv)) in gout.data().iter().zip(vx.data()).enumerate() {
                        acc[k % inner] += g * xv;
                    }
                    contributions.push((*m, Tensor::from_vec_unchecked(vm.shape().to_vec(), acc)));
                }
            }
            Op::Scale(x, c) => {
                let c = *c;
                contributions.push((*x, gout.map(|g| g * c)));
            }
            Op::AddScalar(x) => contributions.push((*x, gout.clone())),
            Op::Abs(x) => {
                let g = zip_map(gout, val(*x), |g, v| {
                    if v > T::zero() {
                        g
                    } else if v < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                });
                contributions.push((*x, g));
            }
            Op::Square(x) => {
                let two = T::lit(2.0);
                contributions.push((*x, zip_map(gout, val(*x), |g, v| two * v * g)));
            }
            Op::Sqrt(x) => {
                let half = T::lit(0.5);
                let g = zip_map(gout, out, |g, y| if y > T::zero() { half * g / y } else { T::zero() });
                contributions.push((*x, g));
            }
            Op::LogClamped { x, eps } => {
                let eps = *eps;
                let g = zip_map(gout, val(*x), |g, v| if v > eps { g / v } else { T::zero() });
                contributions.push((*x, g));
            }
            Op::Relu(x) => {
                let g = zip_map(gout, val(*x), |g, v| if v > T::zero() { g } else { T::zero() });
                contributions.push((*x, g));
            }
            Op::Elu(x) => {
                // d/dx = 1 for x > 0, exp(x) = y + 1 otherwise.
                let vx = val(*x);
                let data = gout
                    .data()
                    .iter()
                    .zip(vx.data())
                    .zip(out.data())
                    .map(|((&g, &v), &y)| if v > T::zero() { g } else { g * (y + T::one()) })
                    .collect();
                contributions.push((*x, Tensor::from_vec_unchecked(vx.shape().to_vec(), data)));
            }
            Op::Sigmoid(x) => {
                let g = zip_map(gout, out, |g, s| g * s * (T::one() - s));
                contributions.push((*x, g));
            }
            Op::Softmax(x) => {
                let classes = *out.shape().last().expect("softmax rank checked");
                let mut data = vec![T::zero(); out.numel()];
                for ((d, s), g) in data
                    .chunks_mut(classes)
                    .zip(out.data().chunks(classes))
                    .zip(gout.data().chunks(classes))
                {
                    let dot: T = s.iter().zip(g).map(|(&a, &b)| a * b).sum();
                    for ((dv, &sv), &gv) in d.iter_mut().zip(s).zip(g) {
                        *dv = sv * (gv - dot);
                    }
                }
                contributions.push((*x, Tensor::from_vec_unchecked(out.shape().to_vec(), data)));
            }
            Op::Sum(x) => {
                contributions.push((*x, Tensor::full(val(*x).shape(), gout.item())));
            }
            Op::Mean(x) => {
                let vx = val(*x);
                let g = gout.item() / T::lit(vx.numel() as f64);
                contributions.push((*x, Tensor::full(vx.shape(), g)));
            }
            Op::SumRows(x) | Op::MeanRows(x) => {
                let vx = val(*x);
                let n = vx.shape()[0];
                let inner = vx.numel() / n;
                let scale = if matches!(node.op, Op::MeanRows(_)) {
                    T::one() / T::lit(inner as f64)
                } else {
                    T::one()
                };
                let data = (0..vx.numel())
                    .map(|k| gout.data()[k / inner] * scale)
                    .collect();
                contributions.push((*x, Tensor::from_vec_unchecked(vx.shape().to_vec(), data)));
            }
            Op::Reshape(x) => {
                let shape = val(*x).shape().to_vec();
                contributions.push((
                    *x,
                    Tensor::from_vec_unchecked(shape, gout.data().to_vec()),
                ));
            }
            Op::SelectCol { x, col } => {
                let vx = val(*x);
                let c = vx.shape()[1];
                let mut data = vec![T::zero(); vx.numel()];
                for (i, &g) in gout.data().iter().enumerate() {
                    data[i * c + col] = g;
                }
                contributions.push((*x, Tensor::from_vec_unchecked(vx.shape().to_vec(), data)));
            }
            Op::Concat(parts) => {
                let n = out.shape()[0];
                let total = out.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let vp = val(p);
                    let w = vp.numel() / n;
                    if self.wants(p) {
                        let mut data = Vec::with_capacity(vp.numel());
                        for r in 0..n {
                            data.extend_from_slice(
                                &gout.data()[r * total + offset..r * total + offset + w],
                            );
                        }
                        contributions.push((p, Tensor::from_vec_unchecked(vp.shape().to_vec(), data)));
                    }
                    offset += w;
                }
            }
            Op::Linear { x, w, b } => {
                let (vx, vw) = (val(*x), val(*w));
                let (n, fan_in) = (vx.shape()[0], vx.shape()[1]);
                let fan_out = vw.shape()[0];
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); n * fan_in];
                    gemm(
                        MatRef::row_major(gout.data(), n, fan_out),
                        MatRef::row_major(vw.data(), fan_out, fan_in),
                        T::zero(),
                        &mut dx,
                    );
                    contributions.push((*x, Tensor::from_vec_unchecked(vx.shape().to_vec(), dx)));
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); fan_out * fan_in];
                    gemm(
                        MatRef::transposed(gout.data(), fan_out, n),
                        MatRef::row_major(vx.data(), n, fan_in),
                        T::zero(),
                        &mut dw,
                    );
                    contributions.push((*w, Tensor::from_vec_unchecked(vw.shape().to_vec(), dw)));
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); fan_out];
                    for row in gout.data().chunks(fan_out) {
                        for (d, &g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    contributions.push((*b, Tensor::from_vec_unchecked(vec![fan_out], db)));
                }
            }
            Op::Conv { x, w, b, geom } => {
                let (vx, vw) = (val(*x), val(*w));
                let n = vx.shape()[0];
                let f = vw.shape()[0];
                let mut dx = self.wants(*x).then(|| vec![T::zero(); vx.numel()]);
                let mut dw = self.wants(*w).then(|| vec![T::zero(); vw.numel()]);
                let mut db = self.wants(*b).then(|| vec![T::zero(); f]);
                kernels::conv_backward(
                    geom,
                    n,
                    vx.data(),
                    vw.data(),
                    f,
                    gout.data(),
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                push_opt(&mut contributions, *x, vx.shape(), dx);
                push_opt(&mut contributions, *w, vw.shape(), dw);
                push_opt(&mut contributions, *b, &[f], db);
            }
            Op::Deconv { x, w, b, geom } => {
                let (vx, vw) = (val(*x), val(*w));
                let (n, c) = (vx.shape()[0], vx.shape()[1]);
                let f = vw.shape()[1];
                let mut dx = self.wants(*x).then(|| vec![T::zero(); vx.numel()]);
                let mut dw = self.wants(*w).then(|| vec![T::zero(); vw.numel()]);
                let mut db = self.wants(*b).then(|| vec![T::zero(); f]);
                kernels::deconv_backward(
                    geom,
                    n,
                    c,
                    vx.data(),
                    vw.data(),
                    gout.data(),
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                push_opt(&mut contributions, *x, vx.shape(), dx);
                push_opt(&mut contributions, *w, vw.shape(), dw);
                push_opt(&mut contributions, *b, &[f], db);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                inv_std,
                mean,
                stats,
            } => {
                let vx = val(*x);
                let g = val(*gamma).data();
                let (n, c) = (vx.shape()[0], vx.shape()[1]);
                let plane: usize = vx.shape()[2..].iter().product();
                let xd = vx.data();
                let gd = gout.data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); xd.len()];
                let count = T::lit((n * plane) as f64);
                for ch in 0..c {
                    let (m, s) = (mean[ch], inv_std[ch]);
                    let mut sum_dy = T::zero();
                    let mut sum_dy_xhat = T::zero();
                    for i in 0..n {
                        let base = (i * c + ch) * plane;
                        for k in base..base + plane {
                            let xhat = (xd[k] - m) * s;
                            sum_dy += gd[k];
                            sum_dy_xhat += gd[k] * xhat;
                        }
                    }
                    dgamma[ch] = sum_dy_xhat;
                    dbeta[ch] = sum_dy;
                    for i in 0..n {
                        let base = (i * c + ch) * plane;
                        for k in base..base + plane {
                            dx[k] = if stats.is_some() {
                                let xhat = (xd[k] - m) * s;
                                g[ch] * s / count
                                    * (count * gd[k] - sum_dy - xhat * sum_dy_xhat)
                            } else {
                                g[ch] * s * gd[k]
                            };
                        }
                    }
                }
                if self.wants(*x) {
                    contributions.push((*x, Tensor::from_vec_unchecked(vx.shape().to_vec(), dx)));
                }
                if self.wants(*gamma) {
                    contributions.push((*gamma, Tensor::from_vec_unchecked(vec![c], dgamma)));
                }
                if self.wants(*beta) {
                    contributions.push((*beta, Tensor::from_vec_unchecked(vec![c], dbeta)));
                }
            }
            Op::Custom { inputs, backward } => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| val(v)).collect();
                let grads = backward(&values, out, gout);
                assert_eq!(grads.len(), inputs.len(), "custom backward arity");
                for (&v, g) in inputs.iter().zip(grads) {
                    assert_eq!(g.shape(), val(v).shape(), "custom backward shape");
                    contributions.push((v, g));
                }
            }
        }
        for (v, g) in contributions {
            self.accumulate(v, g);
        }
    }
}

fn push_opt<T: Scalar>(
    out: &mut Vec<(Var, Tensor<T>)>,
    v: Var,
    shape: &[usize],
    data: Option<Vec<T>>,
) {
    if let Some(d) = data {
        out.push((v, Tensor::from_vec_unchecked(shape.to_vec(), d)));
    }
}
