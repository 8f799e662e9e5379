//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every op applied to its [`Var`]s. [`Graph::backward`]
//! walks the tape in reverse and returns [`Gradients`] for every node that
//! depends on a parameter or on an input registered with
//! [`Graph::input_with_grad`].

use crate::error::{shape_err, Result, TensorError};
use crate::ops::{self, Resample1d};
use crate::params::ParamSet;
use crate::{Scalar, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(String),
    Conv2d {
        input: Var,
        kernel: Var,
        stride: usize,
        pad: usize,
        cols: Vec<T>,
    },
    AddBias {
        input: Var,
        bias: Var,
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    MulConst {
        input: Var,
        factor: Tensor<T>,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AvgPool {
        input: Var,
        window: usize,
        stride: usize,
    },
    Resample {
        input: Var,
        rows: Resample1d,
        cols: Resample1d,
    },
    Reshape {
        input: Var,
    },
    Linear {
        input: Var,
        weight: Var,
    },
    MatMulNT(Var, Var),
    NormalizeRows {
        input: Var,
        inv_norms: Vec<f64>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        grad: Tensor<T>,
    },
    MeanAbs {
        input: Var,
    },
    Mean {
        input: Var,
    },
    Sum {
        input: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Computation tape.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a rank-0 or single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0].as_f64()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(name));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, false, "input")
    }

    /// Input whose gradient is tracked (gradient checks, input saliency).
    pub fn input_with_grad(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, true, "input")
    }

    /// Copies a named parameter onto the tape.
    pub fn param(&mut self, params: &ParamSet<T>, name: &str) -> Result<Var> {
        let value = params
            .value(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?
            .clone();
        self.push(value, Op::Param(name.to_string()), true, "param")
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (out, cols) = ops::conv2d_forward(self.value(input), self.value(kernel), stride, pad)?;
        let needs = self.needs(input) || self.needs(kernel);
        self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
                cols,
            },
            needs,
            "conv2d",
        )
    }

    /// Adds a per-channel bias along the last axis.
    pub fn add_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let b = self.value(bias);
        let c = *x.dims().last().unwrap_or(&0);
        if b.len() != c || c == 0 {
            return shape_err(format!("bias of {} for {c} channels", b.len()));
        }
        let mut out = x.clone();
        for chunk in out.data_mut().chunks_mut(c) {
            for (o, &bv) in chunk.iter_mut().zip(b.data()) {
                *o = *o + bv;
            }
        }
        let needs = self.needs(input) || self.needs(bias);
        self.push(out, Op::AddBias { input, bias }, needs, "add_bias")
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Result<Var> {
        let slope = T::from_f64(slope);
        let out = self
            .value(input)
            .map(|v| if v > T::zero() { v } else { v * slope });
        let needs = self.needs(input);
        self.push(out, Op::LeakyRelu { input, slope }, needs, "leaky_relu")
    }

    /// Elementwise product with a constant tensor of the same dims.
    pub fn mul_const(&mut self, input: Var, factor: Tensor<T>) -> Result<Var> {
        let x = self.value(input);
        if x.dims() != factor.dims() {
            return shape_err(format!("mul_const {:?} by {:?}", x.dims(), factor.dims()));
        }
        let data = x.data().iter().zip(factor.data()).map(|(&a, &b)| a * b).collect();
        let out = Tensor::new(x.dims().to_vec(), data)?;
        let needs = self.needs(input);
        self.push(out, Op::MulConst { input, factor }, needs, "mul_const")
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let factor = T::from_f64(factor);
        let out = self.value(input).map(|v| v * factor);
        let needs = self.needs(input);
        self.push(out, Op::Scale { input, factor }, needs, "scale")
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (x, y) = (self.value(a), self.value(b));
        if x.dims() != y.dims() {
            return shape_err(format!("elementwise op on {:?} and {:?}", x.dims(), y.dims()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.dims().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, |p, q| p + q)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), needs, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, |p, q| p - q)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::Sub(a, b), needs, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, |p, q| p * q)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul(a, b), needs, "mul")
    }

    pub fn avg_pool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let out = ops::avg_pool2d(self.value(input), window, stride)?;
        let needs = self.needs(input);
        self.push(out, Op::AvgPool { input, window, stride }, needs, "avg_pool2d")
    }

    fn resample(&mut self, input: Var, rows: Resample1d, cols: Resample1d, name: &'static str) -> Result<Var> {
        let out = ops::resample_separable(self.value(input), &rows, &cols)?;
        let needs = self.needs(input);
        self.push(out, Op::Resample { input, rows, cols }, needs, name)
    }

    pub fn gaussian_downsample(&mut self, input: Var) -> Result<Var> {
        let [_, h, w, _] = self.value(input).nhwc()?;
        let (r, c) = ops::downsample_resamplers(h, w)?;
        self.resample(input, r, c, "gaussian_downsample")
    }

    pub fn upsample_bilinear(&mut self, input: Var) -> Result<Var> {
        let [_, h, w, _] = self.value(input).nhwc()?;
        let (r, c) = ops::upsample_resamplers(h, w)?;
        self.resample(input, r, c, "upsample_bilinear")
    }

    pub fn reshape(&mut self, input: Var, dims: &[usize]) -> Result<Var> {
        let out = self.value(input).clone().reshape(dims)?;
        let needs = self.needs(input);
        self.push(out, Op::Reshape { input }, needs, "reshape")
    }

    /// `[N, D] x [D, K] -> [N, K]`.
    pub fn linear(&mut self, input: Var, weight: Var) -> Result<Var> {
        let (x, w) = (self.value(input), self.value(weight));
        let (n, d, k) = match (x.dims(), w.dims()) {
            (&[n, d], &[d2, k]) if d == d2 => (n, d, k),
            (a, b) => return shape_err(format!("linear {a:?} x {b:?}")),
        };
        let mut out = vec![T::zero(); n * k];
        T::gemm(n, d, k, x.data(), false, w.data(), false, &mut out, false);
        let out = Tensor::new(vec![n, k], out)?;
        let needs = self.needs(input) || self.needs(weight);
        self.push(out, Op::Linear { input, weight }, needs, "linear")
    }

    /// `[N, D] x [K, D]^T -> [N, K]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let (n, d, k) = match (x.dims(), y.dims()) {
            (&[n, d], &[k, d2]) if d == d2 => (n, d, k),
            (p, q) => return shape_err(format!("matmul_nt {p:?} x {q:?}^T")),
        };
        let mut out = vec![T::zero(); n * k];
        T::gemm(n, d, k, x.data(), false, y.data(), true, &mut out, false);
        let out = Tensor::new(vec![n, k], out)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMulNT(a, b), needs, "matmul_nt")
    }

    /// Each row of `[N, D]` mapped to zero mean and unit Euclidean norm.
    pub fn normalize_rows(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (n, d) = match *x.dims() {
            [n, d] => (n, d),
            _ => return shape_err(format!("normalize_rows needs [N,D], got {:?}", x.dims())),
        };
        let mut out = vec![T::zero(); n * d];
        let mut inv_norms = Vec::with_capacity(n);
        for r in 0..n {
            let row = &x.data()[r * d..(r + 1) * d];
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / d as f64;
            let norm = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>().sqrt();
            if norm <= 1e-12 {
                return Err(TensorError::DegenerateNorm(format!("row {r} is constant")));
            }
            for (o, v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = T::from_f64((v.as_f64() - mean) / norm);
            }
            inv_norms.push(1.0 / norm);
        }
        let out = Tensor::new(vec![n, d], out)?;
        let needs = self.needs(input);
        self.push(out, Op::NormalizeRows { input, inv_norms }, needs, "normalize_rows")
    }

    /// Mean softmax cross-entropy of `[N, K]` logits; yields a scalar node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, grad) = ops::softmax_cross_entropy(self.value(logits), labels)?;
        let needs = self.needs(logits);
        self.push(
            Tensor::scalar(T::from_f64(loss)),
            Op::SoftmaxCrossEntropy { logits, grad },
            needs,
            "softmax_cross_entropy",
        )
    }

    /// Mean absolute value over all elements.
    pub fn mean_abs(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let v = x.data().iter().map(|v| v.as_f64().abs()).sum::<f64>() / x.len().max(1) as f64;
        let needs = self.needs(input);
        self.push(Tensor::scalar(T::from_f64(v)), Op::MeanAbs { input }, needs, "mean_abs")
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        let v = self.value(input).mean();
        let needs = self.needs(input);
        self.push(Tensor::scalar(T::from_f64(v)), Op::Mean { input }, needs, "mean")
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let v = self.value(input).sum();
        let needs = self.needs(input);
        self.push(Tensor::scalar(T::from_f64(v)), Op::Sum { input }, needs, "sum")
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NotScalar(lv.dims().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.dims(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut acc = |v: Var, t: Tensor<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
                cols,
            } => {
                let x = self.value(*input);
                let (gin, gk) = ops::conv2d_backward(
                    x,
                    cols,
                    self.value(*kernel),
                    *stride,
                    *pad,
                    g,
                    self.needs(*input),
                )?;
                if let Some(gin) = gin {
                    acc(*input, gin);
                }
                acc(*kernel, gk);
            }
            Op::AddBias { input, bias } => {
                let c = self.value(*bias).len();
                let mut gb = vec![0.0f64; c];
                for chunk in g.data().chunks(c) {
                    for (a, v) in gb.iter_mut().zip(chunk) {
                        *a += v.as_f64();
                    }
                }
                let gb = Tensor::new(
                    self.value(*bias).dims().to_vec(),
                    gb.into_iter().map(T::from_f64).collect(),
                )?;
                acc(*bias, gb);
                acc(*input, g.clone());
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(*input);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xv, &gv)| if xv > T::zero() { gv } else { gv * *slope })
                    .collect();
                acc(*input, Tensor::new(x.dims().to_vec(), data)?);
            }
            Op::MulConst { input, factor } => {
                let data = g.data().iter().zip(factor.data()).map(|(&a, &b)| a * b).collect();
                acc(*input, Tensor::new(g.dims().to_vec(), data)?);
            }
            Op::Scale { input, factor } => {
                acc(*input, g.map(|v| v * *factor));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let ga = g.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
                let gb = g.data().iter().zip(x.data()).map(|(&p, &q)| p * q).collect();
                acc(*a, Tensor::new(g.dims().to_vec(), ga)?);
                acc(*b, Tensor::new(g.dims().to_vec(), gb)?);
            }
            Op::AvgPool { input, window, stride } => {
                let dims = self.value(*input).dims().to_vec();
                acc(*input, ops::avg_pool2d_backward(&dims, *window, *stride, g)?);
            }
            Op::Resample { input, rows, cols } => {
                let dims = self.value(*input).dims().to_vec();
                acc(*input, ops::resample_separable_transpose(g, &dims, rows, cols)?);
            }
            Op::Reshape { input } => {
                let dims = self.value(*input).dims().to_vec();
                acc(*input, g.clone().reshape(&dims)?);
            }
            Op::Linear { input, weight } => {
                let (x, w) = (self.value(*input), self.value(*weight));
                let (n, d, k) = (x.dims()[0], x.dims()[1], w.dims()[1]);
                if self.needs(*input) {
                    let mut gx = vec![T::zero(); n * d];
                    T::gemm(n, k, d, g.data(), false, w.data(), true, &mut gx, false);
                    acc(*input, Tensor::new(vec![n, d], gx)?);
                }
                let mut gw = vec![T::zero(); d * k];
                T::gemm(d, n, k, x.data(), true, g.data(), false, &mut gw, false);
                acc(*weight, Tensor::new(vec![d, k], gw)?);
            }
            Op::MatMulNT(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (n, d, k) = (x.dims()[0], x.dims()[1], y.dims()[0]);
                if self.needs(*a) {
                    let mut ga = vec![T::zero(); n * d];
                    T::gemm(n, k, d, g.data(), false, y.data(), false, &mut ga, false);
                    acc(*a, Tensor::new(vec![n, d], ga)?);
                }
                if self.needs(*b) {
                    let mut gb = vec![T::zero(); k * d];
                    T::gemm(k, n, d, g.data(), true, x.data(), false, &mut gb, false);
                    acc(*b, Tensor::new(vec![k, d], gb)?);
                }
            }
            Op::NormalizeRows { input, inv_norms } => {
                // y = z / |z|, z = x - mean(x):  dz = (g - y (y.g)) / |z|,  dx = dz - mean(dz)
                let y = &node.value;
                let d = y.dims()[1];
                let mut gx = vec![T::zero(); y.len()];
                for (r, &inv) in inv_norms.iter().enumerate() {
                    let yr = &y.data()[r * d..(r + 1) * d];
                    let gr = &g.data()[r * d..(r + 1) * d];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                    let dz: Vec<f64> = yr
                        .iter()
                        .zip(gr)
                        .map(|(a, b)| (b.as_f64() - a.as_f64() * dot) * inv)
                        .collect();
                    let mean = dz.iter().sum::<f64>() / d as f64;
                    for (o, v) in gx[r * d..(r + 1) * d].iter_mut().zip(&dz) {
                        *o = T::from_f64(v - mean);
                    }
                }
                acc(*input, Tensor::new(y.dims().to_vec(), gx)?);
            }
            Op::SoftmaxCrossEntropy { logits, grad } => {
                let s = g.data()[0];
                acc(*logits, grad.map(|v| v * s));
            }
            Op::MeanAbs { input } => {
                let x = self.value(*input);
                let s = g.data()[0].as_f64() / x.len().max(1) as f64;
                let s = T::from_f64(s);
                acc(
                    *input,
                    x.map(|v| {
                        if v > T::zero() {
                            s
                        } else if v < T::zero() {
                            -s
                        } else {
                            T::zero()
                        }
                    }),
                );
            }
            Op::Mean { input } => {
                let x = self.value(*input);
                let s = T::from_f64(g.data()[0].as_f64() / x.len().max(1) as f64);
                acc(*input, Tensor::full(x.dims(), s));
            }
            Op::Sum { input } => {
                let x = self.value(*input);
                acc(*input, Tensor::full(x.dims(), g.data()[0]));
            }
        }
        Ok(())
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T: Scalar = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. `v`, if `v` is reachable from it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds every parameter gradient on the tape into `params`.
    ///
    /// Parameters that were put on the tape but do not influence the loss
    /// receive nothing (their gradient stays as it was).
    pub fn accumulate_into(&self, graph: &Graph<T>, params: &mut ParamSet<T>) -> Result<()> {
        for (i, node) in graph.nodes.iter().enumerate() {
            if let (Op::Param(name), Some(g)) = (&node.op, &self.grads[i]) {
                params.add_grad(name, g)?;
            }
        }
        Ok(())
    }

    /// Like [`accumulate_into`](Self::accumulate_into), but skips tape
    /// parameters that `params` does not hold, so a loss that runs through
    /// several networks can update just one of them.
    pub fn accumulate_owned(&self, graph: &Graph<T>, params: &mut ParamSet<T>) -> Result<()> {
        for (i, node) in graph.nodes.iter().enumerate() {
            if let (Op::Param(name), Some(g)) = (&node.op, &self.grads[i]) {
                if params.contains(name) {
                    params.add_grad(name, g)?;
                }
            }
        }
        Ok(())
    }
}
