//! Shared fixtures for the integration tests: random instances of each
//! differentiable component wrapped as grad-check objectives.
#![allow(dead_code)]

use lidnet::autodiff::{grad_check, CheckPrecision, Graph, Objective, ParamId, ParamStore, Var};
use lidnet::encoder::{Block, Encoder, EncoderConfig};
use lidnet::layers::{BatchNormLayer, ConvKind, ConvLayer, ForwardCtx};
use lidnet::sap::{Classifier, SapLayer, SapParams};
use lidnet::tensor::{Real, Tensor};
use lidnet::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn set(store: &mut ParamStore, id: ParamId, data: &[f32]) {
    let v = store.get_mut(id).value_mut().data_mut();
    assert_eq!(v.len(), data.len());
    v.copy_from_slice(data);
}

pub fn random_tensor(shape: &[usize], scale: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

pub fn separable_parts(layer: &ConvLayer) -> (ParamId, ParamId) {
    match layer.kind {
        ConvKind::Separable { depthwise, pointwise } => (depthwise, pointwise),
        _ => panic!("not separable"),
    }
}

pub fn run_conv(store: &ParamStore, layer: &ConvLayer, x: &Tensor) -> Tensor {
    let mut g = Graph::with_params(store);
    let xv = g.constant(x.clone());
    let y = layer.forward(&mut g, xv).unwrap();
    g.value(y).clone()
}

/// Naive nested-loop dense convolution, `kernel: [C_out, C_in, K]`, zero
/// same-padding, computed in f64.
pub fn naive_conv(x: &Tensor, kernel: &[f64], cout: usize, k: usize) -> Vec<f64> {
    let (n, t, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let pad = (k - 1) as isize / 2;
    let mut out = vec![0.0; n * t * cout];
    for b in 0..n {
        for ti in 0..t {
            for o in 0..cout {
                let mut acc = 0.0;
                for i in 0..cin {
                    for j in 0..k {
                        let s = ti as isize + j as isize - pad;
                        if s < 0 || s >= t as isize {
                            continue;
                        }
                        acc += kernel[(o * cin + i) * k + j] * x.at(&[b, s as usize, i]) as f64;
                    }
                }
                out[(b * t + ti) * cout + o] = acc;
            }
        }
    }
    out
}

/// Dense kernel equivalent to depthwise `[C_in, K]` followed by pointwise
/// `[C_in, C_out]`.
pub fn compose_kernel(dw: &Tensor, pw: &Tensor, k: usize) -> Vec<f64> {
    let (cin, cout) = (pw.shape()[0], pw.shape()[1]);
    let mut full = vec![0.0; cout * cin * k];
    for o in 0..cout {
        for i in 0..cin {
            for j in 0..k {
                full[(o * cin + i) * k + j] = dw.at(&[i, j]) as f64 * pw.at(&[i, o]) as f64;
            }
        }
    }
    full
}

/// An encoder holding one block, with dropout off.
pub fn single_block(channels: usize, subblocks: usize, kernel: usize, seed: u64) -> (ParamStore, Encoder) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cfg = EncoderConfig {
        input_dim: channels,
        blocks: 1,
        subblocks,
        channels,
        kernel_schedule: vec![kernel],
        dropout: 0.0,
        separable: true,
    };
    let enc = Encoder::new(cfg, &mut store, &mut rng).unwrap();
    (store, enc)
}

/// Random projection of a sub-network output onto a scalar. The input is
/// registered as a parameter so its gradient is checked too.
macro_rules! objective {
    ($name:ident { $($field:ident : $ty:ty),* $(,)? }, |$g:ident, $s:ident, $x:ident| $body:block) => {
        pub struct $name { pub input: ParamId, pub proj: Tensor, $(pub $field: $ty),* }
        impl Objective for $name {
            fn loss<T: Real>(&self, $g: &mut Graph<'_, T>) -> Result<Var> {
                let $s = self;
                let $x = $g.param(self.input);
                let y: Var = $body;
                let w = $g.mul_const(y, &self.proj.cast())?;
                Ok($g.sum(w))
            }
        }
    };
}

objective!(ConvProbe { layer: ConvLayer }, |g, s, x| { s.layer.forward(g, x)? });

objective!(BnProbe { layer: BatchNormLayer, train: bool }, |g, s, x| {
    let mut ctx = if s.train { ForwardCtx::train_deterministic() } else { ForwardCtx::eval() };
    s.layer.forward(g, x, &mut ctx)?
});

objective!(BlockProbe { block: Block, mask: Option<Vec<f64>> }, |g, s, x| {
    let mut ctx = ForwardCtx::train_deterministic();
    let mask: Option<Vec<T>> = s.mask.as_ref().map(|m| m.iter().map(|&v| T::lit(v)).collect());
    s.block.forward(g, x, mask.as_deref(), &mut ctx)?
});

objective!(SapProbe { sap: SapLayer, valid: Vec<bool> }, |g, s, x| { s.sap.forward(g, x, &s.valid)?.embedding });

objective!(ClassifyProbe { classifier: Classifier }, |g, s, x| { s.classifier.forward(g, x)? });

/// Cross-entropy of a logits parameter; no projection.
pub struct CrossEntropyProbe {
    pub logits: ParamId,
    pub labels: Vec<usize>,
}

impl Objective for CrossEntropyProbe {
    fn loss<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<Var> {
        let z = g.param(self.logits);
        g.cross_entropy(z, &self.labels)
    }
}

/// `cross_entropy ∘ classify ∘ sap_forward` on fixed frames.
pub struct HeadProbe {
    pub frames: Tensor,
    pub valid: Vec<bool>,
    pub labels: Vec<usize>,
    pub sap: SapLayer,
    pub classifier: Classifier,
}

impl Objective for HeadProbe {
    fn loss<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<Var> {
        let x = g.constant(self.frames.cast());
        let pooled = self.sap.forward(g, x, &self.valid)?;
        let logits = self.classifier.forward(g, pooled.embedding)?;
        g.cross_entropy(logits, &self.labels)
    }
}

/// Distance of the nearest ReLU input from its kink.
pub fn relu_margin(obj: &impl Objective, store: &ParamStore) -> f64 {
    let shadow = store.cast::<f64>();
    let mut g = Graph::with_params(&shadow);
    obj.loss(&mut g).unwrap();
    g.relu_margin().unwrap_or(f64::INFINITY)
}

/// Worst relative errors of one instance: (64-bit, 32-bit).
#[derive(Debug, Clone, Copy)]
pub struct GradErrors {
    pub double: f64,
    pub single: f64,
}

/// Runs both precisions, or returns `None` when a ReLU input lies within
/// ten single-precision steps of its kink.
pub fn grad_errors(obj: &impl Objective, store: &ParamStore) -> Option<GradErrors> {
    if relu_margin(obj, store) < 1e-2 {
        return None;
    }
    let double = grad_check(obj, store, 1e-4, CheckPrecision::Double).unwrap().max_rel_error;
    let single = grad_check(obj, store, 1e-3, CheckPrecision::Single).unwrap().max_rel_error;
    Some(GradErrors { double, single })
}

pub fn conv_case(seed: u64) -> Option<GradErrors> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let (n, t) = (rng.gen_range(1..=2), rng.gen_range(1..=6));
    let (cin, cout) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
    let k = [1, 3, 5][rng.gen_range(0..3)];
    let input = store.add("input", random_tensor(&[n, t, cin], 1.0, &mut rng), true).unwrap();
    let layer = if seed % 2 == 0 {
        ConvLayer::separable(&mut store, "conv", cin, cout, k, &mut rng).unwrap()
    } else {
        ConvLayer::full(&mut store, "conv", cin, cout, k, &mut rng).unwrap()
    };
    let proj = random_tensor(&[n, t, cout], 1.0, &mut rng);
    grad_errors(&ConvProbe { input, proj, layer }, &store)
}

pub fn batchnorm_case(seed: u64, train: bool) -> Option<GradErrors> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let (n, t, c) = (rng.gen_range(1..=3), rng.gen_range(2..=5), rng.gen_range(1..=3));
    let input = store.add("input", random_tensor(&[n, t, c], 2.0, &mut rng), true).unwrap();
    let layer = BatchNormLayer::new(&mut store, "bn", c).unwrap();
    for (id, lo, hi) in [
        (layer.gamma, -1.5, 1.5),
        (layer.beta, -0.5, 0.5),
        (layer.running_mean, -0.5, 0.5),
        (layer.running_var, 0.5, 2.0),
    ] {
        let v: Vec<f32> = (0..c).map(|_| rng.gen_range(lo..hi)).collect();
        set(&mut store, id, &v);
    }
    let proj = random_tensor(&[n, t, c], 1.0, &mut rng);
    grad_errors(&BnProbe { input, proj, layer, train }, &store)
}

pub fn block_case(seed: u64) -> Option<GradErrors> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let c = rng.gen_range(2..=3);
    let (mut store, enc) = single_block(c, rng.gen_range(1..=2), 3, seed);
    let (n, t) = (2, rng.gen_range(3..=5));
    let input = store.add("input", random_tensor(&[n, t, c], 1.0, &mut rng), true).unwrap();
    let proj = random_tensor(&[n, t, c], 1.0, &mut rng);
    let mask = (seed % 2 == 1).then(|| {
        let mut m = vec![1.0; n * t];
        m[n * t - 1] = 0.0;
        m
    });
    grad_errors(&BlockProbe { input, proj, block: enc.blocks[0].clone(), mask }, &store)
}

fn random_valid(n: usize, t: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut valid = vec![false; n * t];
    for u in 0..n {
        let len = rng.gen_range(1..=t);
        valid[u * t..u * t + len].fill(true);
    }
    valid
}

pub fn sap_case(seed: u64) -> Option<GradErrors> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let (n, t, c, a) = (2, rng.gen_range(1..=5), rng.gen_range(1..=4), rng.gen_range(1..=4));
    let input = store.add("input", random_tensor(&[n, t, c], 1.0, &mut rng), true).unwrap();
    let mut params = SapParams::init(c, a, &mut rng);
    params.b = random_tensor(&[a], 0.5, &mut rng);
    let sap = SapLayer::register(&mut store, "sap", params).unwrap();
    let valid = random_valid(n, t, &mut rng);
    let proj = random_tensor(&[n, c], 1.0, &mut rng);
    grad_errors(&SapProbe { input, proj, sap, valid }, &store)
}

pub fn classify_case(seed: u64) -> Option<GradErrors> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let (n, c, k) = (rng.gen_range(1..=3), rng.gen_range(1..=5), rng.gen_range(2..=5));
    let input = store.add("input", random_tensor(&[n, c], 1.0, &mut rng), true).unwrap();
    let classifier = Classifier::new(&mut store, "classifier", c, k).unwrap();
    let w = random_tensor(&[c, k], 1.0, &mut rng);
    let b = random_tensor(&[k], 1.0, &mut rng);
    set(&mut store, classifier.w, w.data());
    set(&mut store, classifier.b, b.data());
    let proj = random_tensor(&[n, k], 1.0, &mut rng);
    grad_errors(&ClassifyProbe { input, proj, classifier }, &store)
}

pub fn cross_entropy_case(seed: u64) -> Option<GradErrors> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let (n, k) = (rng.gen_range(1..=4), rng.gen_range(2..=16));
    let logits = store.add("logits", random_tensor(&[n, k], 3.0, &mut rng), true).unwrap();
    let labels = (0..n).map(|_| rng.gen_range(0..k)).collect();
    grad_errors(&CrossEntropyProbe { logits, labels }, &store)
}

pub fn head_case(seed: u64) -> Option<GradErrors> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let (n, t, c, a, k) = (2, rng.gen_range(1..=5), rng.gen_range(1..=4), rng.gen_range(1..=4), 4);
    let frames = random_tensor(&[n, t, c], 1.5, &mut rng);
    let mut params = SapParams::init(c, a, &mut rng);
    params.b = random_tensor(&[a], 0.5, &mut rng);
    let sap = SapLayer::register(&mut store, "sap", params).unwrap();
    let classifier = Classifier::new(&mut store, "classifier", c, k).unwrap();
    let w = random_tensor(&[c, k], 1.0, &mut rng);
    set(&mut store, classifier.w, w.data());
    let b = random_tensor(&[k], 0.5, &mut rng);
    set(&mut store, classifier.b, b.data());
    let valid = random_valid(n, t, &mut rng);
    let labels = (0..n).map(|_| rng.gen_range(0..k)).collect();
    grad_errors(&HeadProbe { frames, valid, labels, sap, classifier }, &store)
}

/// Runs `case` over seeds until `count` instances were checked; returns
/// the worst errors seen.
pub fn sweep(count: usize, case: impl Fn(u64) -> Option<GradErrors>) -> GradErrors {
    let mut worst = GradErrors { double: 0.0, single: 0.0 };
    let mut checked = 0;
    for seed in 0.. {
        if checked == count {
            break;
        }
        assert!(seed < 20 * count as u64, "too many instances near a ReLU kink");
        if let Some(e) = case(seed) {
            worst.double = worst.double.max(e.double);
            worst.single = worst.single.max(e.single);
            checked += 1;
        }
    }
    worst
}
