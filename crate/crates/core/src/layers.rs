//! Building blocks shared by the encoder and the pooling head.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::{BatchStats, Graph, ParamId, ParamStore, Var};
use crate::error::{LidError, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward state: the mode, the dropout rng, and batch statistics waiting
/// to be folded into running estimates once the graph is released.
pub struct ForwardCtx<'r, T: Real = f32> {
    pub mode: Mode,
    rng: Option<&'r mut ChaCha8Rng>,
    pub(crate) stat_updates: Vec<(BatchNormLayer, BatchStats<T>)>,
}

impl<'r, T: Real> ForwardCtx<'r, T> {
    pub fn eval() -> Self {
        ForwardCtx {
            mode: Mode::Eval,
            rng: None,
            stat_updates: Vec::new(),
        }
    }

    pub fn train(rng: &'r mut ChaCha8Rng) -> Self {
        ForwardCtx {
            mode: Mode::Train,
            rng: Some(rng),
            stat_updates: Vec::new(),
        }
    }

    /// Train mode without an rng; dropout must be disabled.
    pub fn train_deterministic() -> Self {
        ForwardCtx {
            mode: Mode::Train,
            rng: None,
            stat_updates: Vec::new(),
        }
    }

    /// Moves the collected batch statistics into the running estimates.
    pub fn apply_stat_updates(&mut self, store: &mut ParamStore<T>) {
        for (layer, stats) in self.stat_updates.drain(..) {
            layer.update_running(store, &stats);
        }
    }

    pub fn pending_updates(&self) -> usize {
        self.stat_updates.len()
    }
}

/// Glorot-style uniform draw in `±√(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    let dist = Uniform::new_inclusive(-bound, bound);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("init shape")
}

pub fn gaussian(shape: &[usize], std: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let dist = Normal::new(0.0f32, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("init shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    /// Depthwise `[C_in, K]` then pointwise `[C_in, C_out]`.
    Separable { depthwise: ParamId, pointwise: ParamId },
    /// Dense `[C_out, C_in, K]`.
    Full { kernel: ParamId },
    /// Kernel-size-1 channel mix `[C_in, C_out]`.
    Pointwise { weight: ParamId },
}

/// Bias-free 1D convolution, stride 1, dilation 1, same-padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub kind: ConvKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
}

impl ConvLayer {
    pub fn separable(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        check_kernel(k)?;
        let depthwise = store.add(format!("{name}.depthwise"), glorot_uniform(&[cin, k], k, k, rng), true)?;
        let pointwise = store.add(
            format!("{name}.pointwise"),
            glorot_uniform(&[cin, cout], cin, cout, rng),
            true,
        )?;
        Ok(ConvLayer {
            kind: ConvKind::Separable { depthwise, pointwise },
            in_channels: cin,
            out_channels: cout,
            kernel_size: k,
        })
    }

    pub fn full(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        check_kernel(k)?;
        let kernel = store.add(
            format!("{name}.kernel"),
            glorot_uniform(&[cout, cin, k], cin * k, cout * k, rng),
            true,
        )?;
        Ok(ConvLayer {
            kind: ConvKind::Full { kernel },
            in_channels: cin,
            out_channels: cout,
            kernel_size: k,
        })
    }

    pub fn pointwise(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let weight = store.add(
            format!("{name}.pointwise"),
            glorot_uniform(&[cin, cout], cin, cout, rng),
            true,
        )?;
        Ok(ConvLayer {
            kind: ConvKind::Pointwise { weight },
            in_channels: cin,
            out_channels: cout,
            kernel_size: 1,
        })
    }

    /// `x: [N, T, C_in] -> [N, T, C_out]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 3 || shape[2] != self.in_channels {
            return Err(LidError::dims("conv1d", shape, &[self.in_channels, self.out_channels]));
        }
        match self.kind {
            ConvKind::Separable { depthwise, pointwise } => {
                let dw = g.param(depthwise);
                let h = g.depthwise_conv(x, dw)?;
                let pw = g.param(pointwise);
                g.matmul(h, pw)
            }
            ConvKind::Full { kernel } => {
                let k = g.param(kernel);
                g.full_conv(x, k)
            }
            ConvKind::Pointwise { weight } => {
                let w = g.param(weight);
                g.matmul(x, w)
            }
        }
    }
}

fn check_kernel(k: usize) -> Result<()> {
    if k == 0 || k % 2 == 0 {
        return Err(LidError::Config(format!("kernel size {k} must be odd and >= 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNormLayer {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNormLayer {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels]), true)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), true)?,
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[channels]), false)?,
            running_var: store.add(format!("{name}.running_var"), Tensor::ones(&[channels]), false)?,
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
        })
    }

    /// Normalizes each channel over every leading dimension (batch and time).
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, ctx: &mut ForwardCtx<'_, T>) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = g.batch_norm_train(x, gamma, beta, T::lit(self.eps))?;
                ctx.stat_updates.push((*self, stats));
                Ok(y)
            }
            Mode::Eval => {
                let mean = g.param_value(self.running_mean).data().to_vec();
                let var = g.param_value(self.running_var).data().to_vec();
                g.batch_norm_eval(x, gamma, beta, &mean, &var, T::lit(self.eps))
            }
        }
    }

    pub fn update_running<T: Real>(&self, store: &mut ParamStore<T>, stats: &BatchStats<T>) {
        let m = T::lit(self.momentum);
        let keep = T::one() - m;
        let rm = store.get_mut(self.running_mean).value_mut().data_mut();
        rm.iter_mut().zip(&stats.mean).for_each(|(r, &v)| *r = keep * *r + m * v);
        let rv = store.get_mut(self.running_var).value_mut().data_mut();
        rv.iter_mut()
            .zip(&stats.var)
            .for_each(|(r, &v)| *r = (keep * *r + m * v).max(T::zero()));
    }
}

/// Inverted-dropout keep mask: each entry is 0 with probability `p`, else
/// `1/(1−p)`.
pub fn dropout_mask<T: Real>(shape: &[usize], p: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let scale = T::lit(1.0 / (1.0 - p));
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.gen::<f64>() < p { T::zero() } else { scale })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("mask shape")
}

pub fn check_dropout(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(LidError::Config(format!("dropout probability {p} must be in [0, 1)")));
    }
    Ok(())
}

/// Inverted dropout on a plain tensor; identity in eval mode or for `p = 0`.
pub fn dropout(x: &Tensor, p: f64, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    check_dropout(p)?;
    if mode == Mode::Eval || p == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask::<f32>(x.shape(), p, rng);
    let data = x.data().iter().zip(mask.data()).map(|(&a, &m)| a * m).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Dropout as a graph op.
pub fn dropout_var<T: Real>(g: &mut Graph<'_, T>, x: Var, p: f64, ctx: &mut ForwardCtx<'_, T>) -> Result<Var> {
    check_dropout(p)?;
    if ctx.mode == Mode::Eval || p == 0.0 {
        return Ok(x);
    }
    let rng = ctx
        .rng
        .as_deref_mut()
        .ok_or_else(|| LidError::Contract("train-mode dropout needs an rng".into()))?;
    let mask = dropout_mask(g.shape(x), p, rng);
    g.mul_const(x, &mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn dropout_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_vec((0..64).map(|i| i as f32 - 20.0).collect());
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(dropout(&x, 0.7, Mode::Eval, &mut rng).unwrap(), x);
        assert!(matches!(dropout(&x, 1.0, Mode::Train, &mut rng), Err(LidError::Config(_))));
    }

    #[test]
    fn dropout_survivors_are_doubled() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::from_vec((1..=1000).map(|i| i as f32 * 0.25).collect());
        let y = dropout(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let mut zeros = 0;
        for (&a, &b) in x.data().iter().zip(y.data()) {
            if b == 0.0 {
                zeros += 1;
            } else {
                assert_eq!(b, 2.0 * a);
            }
        }
        assert!((400..600).contains(&zeros), "{zeros}");
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = glorot_uniform(&[30, 20], 30, 20, &mut rng);
        let bound = (6.0f32 / 50.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn even_kernel_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        assert!(ConvLayer::separable(&mut store, "c", 2, 2, 4, &mut rng).is_err());
    }
}
