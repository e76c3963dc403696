use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamStore, Var};
use crate::encoder::{frame_mask, Encoder, EncoderConfig};
use crate::error::{LidError, Result};
use crate::features::FeatureSequence;
use crate::layers::ForwardCtx;
use crate::sap::{Classifier, SapLayer, SapParams};
use crate::tensor::{self, Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub attention_dim: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            attention_dim: 256,
            num_classes: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.attention_dim == 0 || self.num_classes < 2 {
            return Err(LidError::Config(
                "model.attention_dim must be >= 1 and the label set needs >= 2 classes".into(),
            ));
        }
        Ok(())
    }
}

/// Encoder → self-attentive pooling → linear classifier.
///
/// The model only holds parameter ids; the values live in a [`ParamStore`],
/// which can be cast to `f64` for gradient checking.
#[derive(Debug, Clone)]
pub struct LidModel {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub sap: SapLayer,
    pub classifier: Classifier,
}

pub struct ForwardOutput {
    /// `[N, T, channels]`
    pub encoded: Var,
    /// `[N, T]`
    pub attention: Var,
    /// `[N, channels]`
    pub embedding: Var,
    /// `[N, num_classes]`
    pub logits: Var,
}

/// Zero-padded mini-batch, `features: [N, T_max, D]`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Tensor,
    pub valid: Vec<bool>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn from_sequences(seqs: &[&FeatureSequence], labels: Vec<usize>) -> Result<Self> {
        let first = seqs
            .first()
            .ok_or_else(|| LidError::Contract("empty batch".into()))?;
        let d = first.dim();
        if labels.len() != seqs.len() {
            return Err(LidError::dims("batch labels", &[seqs.len()], &[labels.len()]));
        }
        let t_max = seqs.iter().map(|s| s.num_frames()).max().unwrap_or(1);
        let n = seqs.len();
        let mut data = vec![0f32; n * t_max * d];
        let mut valid = vec![false; n * t_max];
        for (b, s) in seqs.iter().enumerate() {
            if s.dim() != d {
                return Err(LidError::dims("batch features", first.frames.shape(), s.frames.shape()));
            }
            let t = s.num_frames();
            data[b * t_max * d..(b * t_max + t) * d].copy_from_slice(s.frames.data());
            valid[b * t_max..b * t_max + t].copy_from_slice(&s.valid);
        }
        Ok(Batch {
            features: Tensor::new(vec![n, t_max, d], data)?,
            valid,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl LidModel {
    /// Builds the model and its freshly initialized parameters.
    pub fn init(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let model = Self::build(config, &mut store, &mut rng)?;
        Ok((model, store))
    }

    pub fn build(config: ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(config.encoder.clone(), store, rng)?;
        let c = config.encoder.channels;
        let sap = SapLayer::register(store, "sap", SapParams::init(c, config.attention_dim, rng))?;
        let classifier = Classifier::new(store, "classifier", c, config.num_classes)?;
        Ok(LidModel {
            config,
            encoder,
            sap,
            classifier,
        })
    }

    /// Runs the network on `features: [N, T, D]` with `N·T` validity flags.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        features: &Tensor,
        valid: &[bool],
        ctx: &mut ForwardCtx<'_, T>,
    ) -> Result<ForwardOutput> {
        let x = g.constant(features.cast());
        let mask = frame_mask::<T>(valid);
        let encoded = self.encoder.forward(g, x, mask.as_deref(), ctx)?;
        let pooled = self.sap.forward(g, encoded, valid)?;
        let logits = self.classifier.forward(g, pooled.embedding)?;
        Ok(ForwardOutput {
            encoded,
            attention: pooled.weights,
            embedding: pooled.embedding,
            logits,
        })
    }

    /// Eval-mode class probabilities for one utterance.
    pub fn predict_proba(&self, store: &ParamStore, features: &FeatureSequence) -> Result<Vec<f32>> {
        let batch = Batch::from_sequences(&[features], vec![0])?;
        let mut g = Graph::with_params(store);
        let mut ctx = ForwardCtx::eval();
        let out = self.forward(&mut g, &batch.features, &batch.valid, &mut ctx)?;
        let probs = tensor::softmax_rows(g.value(out.logits), None)?;
        Ok(probs.into_data())
    }

    /// Checks that `store` holds exactly this model's parameters with
    /// matching shapes, in registration order.
    pub fn check_params(&self, reference: &ParamStore, candidate: &ParamStore) -> Result<()> {
        for (id, p) in reference.iter() {
            let Some(other) = candidate.id(p.name()) else {
                return Err(LidError::ParamShape {
                    name: p.name().to_string(),
                    expected: p.value().shape().to_vec(),
                    found: vec![],
                });
            };
            let found = candidate.value(other).shape();
            if found != p.value().shape() || other != id {
                return Err(LidError::ParamShape {
                    name: p.name().to_string(),
                    expected: p.value().shape().to_vec(),
                    found: found.to_vec(),
                });
            }
        }
        if candidate.len() != reference.len() {
            let extra = candidate
                .iter()
                .find(|(_, p)| reference.id(p.name()).is_none())
                .map(|(_, p)| p.name().to_string())
                .unwrap_or_default();
            return Err(LidError::ParamShape {
                name: extra,
                expected: vec![],
                found: vec![],
            });
        }
        Ok(())
    }
}
