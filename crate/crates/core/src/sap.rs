//! Self-attentive pooling, the linear classifier, and the cross-entropy loss.
//!
//! For frame features `x_t`:
//!
//! ```text
//! h_t     = tanh(W x_t + b)
//! score_t = h_t · μ
//! w       = softmax over valid frames of score
//! e       = Σ_t w_t x_t
//! ```

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{LidError, Result};
use crate::layers::{gaussian, glorot_uniform};
use crate::tensor::{self, Real, Tensor};

/// Explicit SAP parameter values: `w: [C, A]`, `b: [A]`, `mu: [A]`.
#[derive(Debug, Clone)]
pub struct SapParams {
    pub w: Tensor,
    pub b: Tensor,
    pub mu: Tensor,
}

impl SapParams {
    /// `W` Glorot-uniform, `b = 0`, `μ ~ N(0, 1/√A)`.
    pub fn init(dim: usize, attention_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        SapParams {
            w: glorot_uniform(&[dim, attention_dim], dim, attention_dim, rng),
            b: Tensor::zeros(&[attention_dim]),
            mu: gaussian(&[attention_dim], 1.0 / (attention_dim as f32).sqrt(), rng),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SapLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub mu: ParamId,
    pub dim: usize,
    pub attention_dim: usize,
}

pub struct SapOutput {
    /// `[N, C]`
    pub embedding: Var,
    /// `[N, T]`, zero on invalid frames.
    pub weights: Var,
}

impl SapLayer {
    pub fn register(store: &mut ParamStore, name: &str, params: SapParams) -> Result<Self> {
        if params.w.rank() != 2 || params.b.len() != params.w.cols() || params.mu.len() != params.w.cols() {
            return Err(LidError::dims("sap params", params.w.shape(), params.mu.shape()));
        }
        let (dim, attention_dim) = (params.w.shape()[0], params.w.shape()[1]);
        Ok(SapLayer {
            w: store.add(format!("{name}.w"), params.w, true)?,
            b: store.add(format!("{name}.b"), params.b, true)?,
            mu: store.add(format!("{name}.mu"), params.mu, true)?,
            dim,
            attention_dim,
        })
    }

    /// Pools `frames: [N, T, C]` into `[N, C]`; `valid` has `N·T` flags.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, frames: Var, valid: &[bool]) -> Result<SapOutput> {
        let shape = g.shape(frames).to_vec();
        let [n, t, c] = shape[..] else {
            return Err(LidError::dims("sap_forward", &shape, &[0, 0, self.dim]));
        };
        if c != self.dim {
            return Err(LidError::dims("sap_forward", &shape, &[n, t, self.dim]));
        }
        if valid.len() != n * t {
            return Err(LidError::dims("sap mask", &shape, &[valid.len()]));
        }
        for (u, row) in valid.chunks(t).enumerate() {
            if !row.iter().any(|&v| v) {
                return Err(LidError::InvalidMask(format!("utterance {u} has no valid frame")));
            }
        }
        let w = g.param(self.w);
        let b = g.param(self.b);
        let h = g.affine(frames, w, b)?;
        let h = g.tanh(h);
        let mu = g.param(self.mu);
        let mu = g.reshape(mu, &[self.attention_dim, 1])?;
        let scores = g.matmul(h, mu)?;
        let scores = g.reshape(scores, &[n, t])?;
        let weights = g.softmax_rows(scores, Some(valid))?;
        let embedding = g.weighted_sum(weights, frames)?;
        Ok(SapOutput { embedding, weights })
    }
}

/// Affine map from the utterance embedding to class logits.
#[derive(Debug, Clone, Copy)]
pub struct Classifier {
    pub w: ParamId,
    pub b: ParamId,
    pub num_classes: usize,
}

impl Classifier {
    /// Zero-initialized, so an untrained model predicts the uniform
    /// distribution for any input.
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, num_classes: usize) -> Result<Self> {
        Ok(Classifier {
            w: store.add(format!("{name}.w"), Tensor::zeros(&[dim, num_classes]), true)?,
            b: store.add(format!("{name}.b"), Tensor::zeros(&[num_classes]), true)?,
            num_classes,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, embedding: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.affine(embedding, w, b)
    }
}

/// SAP on a single utterance `[T, C]` with explicit parameters; returns the
/// embedding `[C]` and the frame weights `[T]`.
pub fn sap_forward(frames: &Tensor, valid: &[bool], params: &SapParams) -> Result<(Tensor, Tensor)> {
    if frames.rank() != 2 {
        return Err(LidError::dims("sap_forward", frames.shape(), &[0, 0]));
    }
    let (t, c) = (frames.shape()[0], frames.shape()[1]);
    let mut store = ParamStore::new();
    let layer = SapLayer::register(&mut store, "sap", params.clone())?;
    let mut g = Graph::with_params(&store);
    let x = g.constant(frames.clone().reshape(&[1, t, c])?);
    let out = layer.forward(&mut g, x, valid)?;
    let e = g.value(out.embedding).clone().reshape(&[c])?;
    let w = g.value(out.weights).clone().reshape(&[t])?;
    Ok((e, w))
}

/// `logits = W_outᵀ e + b_out` for a single embedding.
pub fn classify(embedding: &Tensor, w_out: &Tensor, b_out: &Tensor) -> Result<Tensor> {
    let e = embedding.clone().reshape(&[1, embedding.len()])?;
    let logits = tensor::affine(&e, w_out, b_out)?;
    logits.reshape(&[b_out.len()])
}

/// `−log softmax(logits)[label]` via max-subtracted log-sum-exp.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<f32> {
    let k = logits.len();
    if label >= k {
        return Err(LidError::Contract(format!("label {label} out of range for {k} classes")));
    }
    let z = logits.data();
    let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let lse = max + z.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
    Ok((lse - z[label] as f64) as f32)
}
