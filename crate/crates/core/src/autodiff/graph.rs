use std::collections::BTreeMap;

use crate::error::{LidError, Result};
use crate::tensor::{self, gemm_acc, transpose, Real, Tensor};

use super::{ParamId, ParamStore};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    Constant,
    Param(ParamId),
    Reshape(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MulConst(Var, Vec<T>),
    /// Scales row `r` of a `[.., C]` view by `factors[r]`.
    ScaleRows(Var, Vec<T>),
    Tanh(Var),
    Relu(Var),
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Softmax(Var),
    DepthwiseConv {
        x: Var,
        kernel: Var,
    },
    FullConv {
        x: Var,
        kernel: Var,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    WeightedSum {
        weights: Var,
        frames: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Sum(Var),
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
}

/// Per-channel batch statistics observed by a train-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance.
    pub var: Vec<T>,
}

/// Records a forward computation so it can be differentiated in reverse.
///
/// Parameters are borrowed from a [`ParamStore`] rather than copied. Nodes are
/// appended in evaluation order, which makes the node list a topological
/// order of the (acyclic) operation graph.
pub struct Graph<'p, T: Real = f32> {
    params: Option<&'p ParamStore<T>>,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<'static, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<'static, T> {
    pub fn new() -> Self {
        Graph {
            params: None,
            nodes: Vec::new(),
        }
    }
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn with_params(params: &'p ParamStore<T>) -> Self {
        Graph {
            params: Some(params),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store().value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Smallest `|x|` over the inputs of every ReLU recorded so far, or
    /// `None` if there are none. Finite-difference checks are only
    /// meaningful when this exceeds the step size.
    pub fn relu_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(x),
                _ => None,
            })
            .flat_map(|x| self.value(x).data().iter().map(|v| v.as_f64().abs()))
            .reduce(f64::min)
    }

    pub fn param_value(&self, id: ParamId) -> &'p Tensor<T> {
        self.store().value(id)
    }

    fn store(&self) -> &'p ParamStore<T> {
        self.params.expect("graph has no parameter store")
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input whose gradient can be read back with
    /// [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        assert!(id.0 < self.store().len(), "unknown parameter {id:?}");
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(LidError::dims("mul", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, x: Var, factors: &Tensor<T>) -> Result<Var> {
        let vx = self.value(x);
        if vx.shape() != factors.shape() {
            return Err(LidError::dims("mul_const", vx.shape(), factors.shape()));
        }
        let data = vx.data().iter().zip(factors.data()).map(|(&a, &b)| a * b).collect();
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        Ok(self.push(out, Op::MulConst(x, factors.data().to_vec())))
    }

    /// Multiplies each row (all channels of one frame) by a constant factor.
    pub fn scale_rows(&mut self, x: Var, factors: &[T]) -> Result<Var> {
        let vx = self.value(x);
        if vx.rows() != factors.len() {
            return Err(LidError::dims("scale_rows", vx.shape(), &[factors.len()]));
        }
        let c = vx.cols();
        let mut out = vx.clone();
        for (row, &f) in out.data_mut().chunks_mut(c).zip(factors) {
            row.iter_mut().for_each(|v| *v *= f);
        }
        Ok(self.push(out, Op::ScaleRows(x, factors.to_vec())))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = tensor::tanh_map(self.value(x));
        self.push(out, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = tensor::relu_map(self.value(x));
        self.push(out, Op::Relu(x))
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(x), self.value(w))?;
        Ok(self.push(out, Op::Affine { x, w, b: None }))
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = tensor::affine(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(out, Op::Affine { x, w, b: Some(b) }))
    }

    /// Row-wise softmax over the last dimension. With a mask the softmax runs
    /// over valid entries only and masked entries are exactly zero.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let out = tensor::softmax_rows(self.value(x), mask)?;
        Ok(self.push(out, Op::Softmax(x)))
    }

    /// Per-channel temporal convolution of `x: [N, T, C]` with `kernel: [C, K]`,
    /// stride 1, zero same-padding of `(K-1)/2` on each side.
    pub fn depthwise_conv(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (vx, vk) = (self.value(x), self.value(kernel));
        let (n, t, c) = dims3(vx, "depthwise_conv")?;
        if vk.rank() != 2 || vk.shape()[0] != c || vk.shape()[1] % 2 == 0 {
            return Err(LidError::dims("depthwise_conv", vx.shape(), vk.shape()));
        }
        let k = vk.shape()[1];
        let kt = transpose(vk.data(), c, k);
        let pad = (k - 1) / 2;
        let xd = vx.data();
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..n {
            for ti in 0..t {
                let dst = &mut out[(b * t + ti) * c..(b * t + ti + 1) * c];
                for j in 0..k {
                    let Some(src_t) = shifted(ti, j, pad, t) else { continue };
                    let src = &xd[(b * t + src_t) * c..(b * t + src_t + 1) * c];
                    let taps = &kt[j * c..(j + 1) * c];
                    for ((o, &xv), &kv) in dst.iter_mut().zip(src).zip(taps) {
                        *o += xv * kv;
                    }
                }
            }
        }
        let out = Tensor::new(vx.shape().to_vec(), out)?;
        Ok(self.push(out, Op::DepthwiseConv { x, kernel }))
    }

    /// Dense temporal convolution of `x: [N, T, C_in]` with
    /// `kernel: [C_out, C_in, K]`, stride 1, zero same-padding.
    pub fn full_conv(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (vx, vk) = (self.value(x), self.value(kernel));
        let (n, t, cin) = dims3(vx, "full_conv")?;
        if vk.rank() != 3 || vk.shape()[1] != cin || vk.shape()[2] % 2 == 0 {
            return Err(LidError::dims("full_conv", vx.shape(), vk.shape()));
        }
        let (cout, k) = (vk.shape()[0], vk.shape()[2]);
        let pad = (k - 1) / 2;
        // Tap j as a [C_in, C_out] matrix.
        let taps = full_kernel_taps(vk.data(), cout, cin, k);
        let xd = vx.data();
        let mut out = vec![T::zero(); n * t * cout];
        for b in 0..n {
            for ti in 0..t {
                let dst = &mut out[(b * t + ti) * cout..(b * t + ti + 1) * cout];
                for (j, tap) in taps.iter().enumerate() {
                    let Some(src_t) = shifted(ti, j, pad, t) else { continue };
                    let src = &xd[(b * t + src_t) * cin..(b * t + src_t + 1) * cin];
                    gemm_acc(src, tap, dst, 1, cin, cout);
                }
            }
        }
        let out = Tensor::new(vec![n, t, cout], out)?;
        Ok(self.push(out, Op::FullConv { x, kernel }))
    }

    /// Batch norm with statistics of the current batch over every leading
    /// dimension. Returns the output and the observed statistics so the caller
    /// can update running estimates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let vx = self.value(x);
        let (m, c) = (vx.rows(), vx.cols());
        check_channel_vec(self.value(gamma), c, vx)?;
        check_channel_vec(self.value(beta), c, vx)?;
        if m < 2 {
            return Err(LidError::Contract(format!(
                "train-mode batch norm needs at least 2 values per channel, got {m}"
            )));
        }
        let mf = T::lit(m as f64);
        let mut mean = vec![T::zero(); c];
        for row in vx.data().chunks(c) {
            mean.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
        }
        mean.iter_mut().for_each(|a| *a = *a / mf);
        let mut var = vec![T::zero(); c];
        for row in vx.data().chunks(c) {
            for ((a, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - mu;
                *a += d * d;
            }
        }
        let biased: Vec<T> = var.iter().map(|&s| s / mf).collect();
        let unbiased: Vec<T> = var.iter().map(|&s| s / T::lit((m - 1) as f64)).collect();
        let inv_std: Vec<T> = biased.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (xhat, out) = normalize(vx, &mean, &inv_std, self.value(gamma), self.value(beta));
        let out = Tensor::new(vx.shape().to_vec(), out)?;
        let stats = BatchStats { mean, var: unbiased };
        let v = self.push(
            out,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        Ok((v, stats))
    }

    /// Batch norm with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        let vx = self.value(x);
        let c = vx.cols();
        check_channel_vec(self.value(gamma), c, vx)?;
        check_channel_vec(self.value(beta), c, vx)?;
        if mean.len() != c || var.len() != c {
            return Err(LidError::dims("batch_norm stats", vx.shape(), &[mean.len()]));
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (xhat, out) = normalize(vx, mean, &inv_std, self.value(gamma), self.value(beta));
        let out = Tensor::new(vx.shape().to_vec(), out)?;
        Ok(self.push(
            out,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// `out[n, c] = Σ_t weights[n, t] · frames[n, t, c]`.
    pub fn weighted_sum(&mut self, weights: Var, frames: Var) -> Result<Var> {
        let (vw, vx) = (self.value(weights), self.value(frames));
        let (n, t, c) = dims3(vx, "weighted_sum")?;
        if vw.shape() != [n, t] {
            return Err(LidError::dims("weighted_sum", vw.shape(), vx.shape()));
        }
        let mut out = vec![T::zero(); n * c];
        for b in 0..n {
            let dst = &mut out[b * c..(b + 1) * c];
            for ti in 0..t {
                let w = vw.data()[b * t + ti];
                if w == T::zero() {
                    continue;
                }
                let src = &vx.data()[(b * t + ti) * c..(b * t + ti + 1) * c];
                dst.iter_mut().zip(src).for_each(|(o, &v)| *o += w * v);
            }
        }
        let out = Tensor::new(vec![n, c], out)?;
        Ok(self.push(out, Op::WeightedSum { weights, frames }))
    }

    /// Mean cross-entropy of `logits: [N, K]` against class indices, computed
    /// with max-subtracted log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        let k = vl.cols();
        if vl.rows() != labels.len() {
            return Err(LidError::dims("cross_entropy", vl.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(LidError::Contract(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let probs = tensor::softmax_rows(vl, None)?.into_data();
        let mut total = 0.0f64;
        for (row, &label) in vl.data().chunks(k).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
            total += (lse - row[label]).as_f64();
        }
        let loss = T::lit(total / labels.len() as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let seed = self.value(loss);
        if seed.len() != 1 {
            return Err(LidError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                seed.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(seed.shape()));
        let mut param_grads: BTreeMap<ParamId, Tensor<T>> = BTreeMap::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads, &mut param_grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients {
            nodes: grads,
            params: param_grads,
        })
    }

    fn propagate(
        &self,
        i: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        param_grads: &mut BTreeMap<ParamId, Tensor<T>>,
    ) -> Result<()> {
        let out = self.value(Var(i));
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf | Op::Constant => {}
            Op::Param(id) => match param_grads.get_mut(id) {
                Some(acc) => acc.add_assign(g)?,
                None => {
                    param_grads.insert(*id, g.clone());
                }
            },
            Op::Reshape(x) => {
                let shaped = g.clone().reshape(self.shape(*x))?;
                accumulate(grads, *x, shaped.into_data(), self.shape(*x));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, gd.to_vec(), out.shape());
                accumulate(grads, *b, gd.to_vec(), out.shape());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let da = gd.iter().zip(vb).map(|(&g, &y)| g * y).collect();
                let db = gd.iter().zip(va).map(|(&g, &x)| g * x).collect();
                accumulate(grads, *a, da, out.shape());
                accumulate(grads, *b, db, out.shape());
            }
            Op::Scale(x, f) => {
                let dx = gd.iter().map(|&g| g * *f).collect();
                accumulate(grads, *x, dx, out.shape());
            }
            Op::MulConst(x, factors) => {
                let dx = gd.iter().zip(factors).map(|(&g, &f)| g * f).collect();
                accumulate(grads, *x, dx, out.shape());
            }
            Op::ScaleRows(x, factors) => {
                let c = out.cols();
                let mut dx = gd.to_vec();
                for (row, &f) in dx.chunks_mut(c).zip(factors) {
                    row.iter_mut().for_each(|v| *v *= f);
                }
                accumulate(grads, *x, dx, out.shape());
            }
            Op::Tanh(x) => {
                let dx = gd
                    .iter()
                    .zip(out.data())
                    .map(|(&g, &y)| g * (T::one() - y * y))
                    .collect();
                accumulate(grads, *x, dx, out.shape());
            }
            Op::Relu(x) => {
                let dx = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                accumulate(grads, *x, dx, out.shape());
            }
            Op::Affine { x, w, b } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (m, k, n) = (vx.rows(), vx.cols(), vw.shape()[1]);
                // dx = g · wᵀ
                let wt = transpose(vw.data(), k, n);
                let mut dx = vec![T::zero(); m * k];
                gemm_acc(gd, &wt, &mut dx, m, n, k);
                accumulate(grads, *x, dx, vx.shape());
                // dw = xᵀ · g
                let xt = transpose(vx.data(), m, k);
                let mut dw = vec![T::zero(); k * n];
                gemm_acc(&xt, gd, &mut dw, k, m, n);
                accumulate(grads, *w, dw, vw.shape());
                if let Some(b) = b {
                    let mut db = vec![T::zero(); n];
                    for row in gd.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                    }
                    accumulate(grads, *b, db, &[n]);
                }
            }
            Op::Softmax(x) => {
                let k = out.cols();
                let mut dx = vec![T::zero(); gd.len()];
                for ((dst, y), gr) in dx.chunks_mut(k).zip(out.data().chunks(k)).zip(gd.chunks(k)) {
                    let dot: T = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((d, &yv), &gv) in dst.iter_mut().zip(y).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                accumulate(grads, *x, dx, out.shape());
            }
            Op::DepthwiseConv { x, kernel } => {
                let (vx, vk) = (self.value(*x), self.value(*kernel));
                let (n, t, c) = dims3(vx, "depthwise_conv")?;
                let k = vk.shape()[1];
                let pad = (k - 1) / 2;
                let kt = transpose(vk.data(), c, k);
                let xd = vx.data();
                let mut dx = vec![T::zero(); xd.len()];
                let mut dkt = vec![T::zero(); c * k];
                for b in 0..n {
                    for ti in 0..t {
                        let go = &gd[(b * t + ti) * c..(b * t + ti + 1) * c];
                        for j in 0..k {
                            let Some(src_t) = shifted(ti, j, pad, t) else { continue };
                            let base = (b * t + src_t) * c;
                            let taps = &kt[j * c..(j + 1) * c];
                            for ch in 0..c {
                                dx[base + ch] += taps[ch] * go[ch];
                            }
                            let src = &xd[base..base + c];
                            let dtap = &mut dkt[j * c..(j + 1) * c];
                            for ch in 0..c {
                                dtap[ch] += src[ch] * go[ch];
                            }
                        }
                    }
                }
                accumulate(grads, *x, dx, vx.shape());
                accumulate(grads, *kernel, transpose(&dkt, k, c), vk.shape());
            }
            Op::FullConv { x, kernel } => {
                let (vx, vk) = (self.value(*x), self.value(*kernel));
                let (n, t, cin) = dims3(vx, "full_conv")?;
                let (cout, k) = (vk.shape()[0], vk.shape()[2]);
                let pad = (k - 1) / 2;
                let kd = vk.data();
                let xd = vx.data();
                let mut dx = vec![T::zero(); xd.len()];
                let mut dk = vec![T::zero(); kd.len()];
                for b in 0..n {
                    for ti in 0..t {
                        let go = &gd[(b * t + ti) * cout..(b * t + ti + 1) * cout];
                        for j in 0..k {
                            let Some(src_t) = shifted(ti, j, pad, t) else { continue };
                            let base = (b * t + src_t) * cin;
                            for (o, &gv) in go.iter().enumerate() {
                                for i in 0..cin {
                                    let kidx = (o * cin + i) * k + j;
                                    dx[base + i] += kd[kidx] * gv;
                                    dk[kidx] += xd[base + i] * gv;
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *x, dx, vx.shape());
                accumulate(grads, *kernel, dk, vk.shape());
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = out.cols();
                let m = out.rows();
                let mf = T::lit(m as f64);
                let gam = self.value(*gamma).data();
                let (dgamma, dbeta) = affine_param_grads(gd, xhat, c);
                let mut dx = vec![T::zero(); gd.len()];
                for r in 0..m {
                    for ch in 0..c {
                        let idx = r * c + ch;
                        // dxhat = g·γ;  dx = inv_std/M · (M·dxhat − Σdxhat − x̂·Σ(dxhat·x̂))
                        let dxhat = gd[idx] * gam[ch];
                        dx[idx] = inv_std[ch] / mf
                            * (mf * dxhat - dbeta[ch] * gam[ch] - xhat[idx] * dgamma[ch] * gam[ch]);
                    }
                }
                accumulate(grads, *x, dx, out.shape());
                accumulate(grads, *gamma, dgamma, &[c]);
                accumulate(grads, *beta, dbeta, &[c]);
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = out.cols();
                let gam = self.value(*gamma).data();
                let (dgamma, dbeta) = affine_param_grads(gd, xhat, c);
                let mut dx = gd.to_vec();
                for row in dx.chunks_mut(c) {
                    for ch in 0..c {
                        row[ch] *= gam[ch] * inv_std[ch];
                    }
                }
                accumulate(grads, *x, dx, out.shape());
                accumulate(grads, *gamma, dgamma, &[c]);
                accumulate(grads, *beta, dbeta, &[c]);
            }
            Op::WeightedSum { weights, frames } => {
                let (vw, vx) = (self.value(*weights), self.value(*frames));
                let (n, t, c) = dims3(vx, "weighted_sum")?;
                let mut dw = vec![T::zero(); n * t];
                let mut dx = vec![T::zero(); n * t * c];
                for b in 0..n {
                    let ge = &gd[b * c..(b + 1) * c];
                    for ti in 0..t {
                        let base = (b * t + ti) * c;
                        let src = &vx.data()[base..base + c];
                        dw[b * t + ti] = src.iter().zip(ge).map(|(&x, &g)| x * g).sum();
                        let w = vw.data()[b * t + ti];
                        dx[base..base + c]
                            .iter_mut()
                            .zip(ge)
                            .for_each(|(d, &g)| *d = w * g);
                    }
                }
                accumulate(grads, *weights, dw, vw.shape());
                accumulate(grads, *frames, dx, vx.shape());
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let vl = self.value(*logits);
                let k = vl.cols();
                let scale = gd[0] / T::lit(labels.len() as f64);
                let mut dz: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (row, &label) in dz.chunks_mut(k).zip(labels) {
                    row[label] -= scale;
                }
                accumulate(grads, *logits, dz, vl.shape());
            }
            Op::Sum(x) => {
                let vx = self.value(*x);
                accumulate(grads, *x, vec![gd[0]; vx.len()], vx.shape());
            }
        }
        Ok(())
    }
}

/// Gradients from one reverse pass: per node, and summed per parameter.
pub struct Gradients<T = f32> {
    nodes: Vec<Option<Tensor<T>>>,
    params: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to a node, `None` if the loss does not
    /// depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    /// Gradient for `id`, zeros of the parameter's shape if it was unused.
    pub fn param_or_zeros(&self, id: ParamId, store: &ParamStore<T>) -> Tensor<T> {
        self.params
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()))
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(&id, g)| (id, g))
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, delta: Vec<T>, shape: &[usize]) {
    match &mut grads[v.0] {
        Some(acc) => acc
            .data_mut()
            .iter_mut()
            .zip(&delta)
            .for_each(|(a, &d)| *a += d),
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), delta).expect("gradient shape"));
        }
    }
}

fn dims3<T: Real>(x: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [n, t, c] => Ok((n, t, c)),
        _ => Err(LidError::dims(op, x.shape(), &[0, 0, 0])),
    }
}

/// Source frame for output frame `t` and tap `j` under same-padding, or
/// `None` when it falls into the zero padding.
#[inline]
fn shifted(t: usize, j: usize, pad: usize, len: usize) -> Option<usize> {
    let s = (t + j).checked_sub(pad)?;
    (s < len).then_some(s)
}

pub(crate) fn full_kernel_taps<T: Real>(kd: &[T], cout: usize, cin: usize, k: usize) -> Vec<Vec<T>> {
    (0..k)
        .map(|j| {
            let mut tap = vec![T::zero(); cin * cout];
            for o in 0..cout {
                for i in 0..cin {
                    tap[i * cout + o] = kd[(o * cin + i) * k + j];
                }
            }
            tap
        })
        .collect()
}

fn check_channel_vec<T: Real>(v: &Tensor<T>, c: usize, x: &Tensor<T>) -> Result<()> {
    if v.rank() != 1 || v.len() != c {
        return Err(LidError::dims("batch_norm", x.shape(), v.shape()));
    }
    Ok(())
}

fn normalize<T: Real>(
    x: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> (Vec<T>, Vec<T>) {
    let c = x.cols();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for ((src, xh), dst) in x.data().chunks(c).zip(xhat.chunks_mut(c)).zip(out.chunks_mut(c)) {
        for ch in 0..c {
            xh[ch] = (src[ch] - mean[ch]) * inv_std[ch];
            dst[ch] = gamma.data()[ch] * xh[ch] + beta.data()[ch];
        }
    }
    (xhat, out)
}

fn affine_param_grads<T: Real>(g: &[T], xhat: &[T], c: usize) -> (Vec<T>, Vec<T>) {
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (gr, xr) in g.chunks(c).zip(xhat.chunks(c)) {
        for ch in 0..c {
            dgamma[ch] += gr[ch] * xr[ch];
            dbeta[ch] += gr[ch];
        }
    }
    (dgamma, dbeta)
}
