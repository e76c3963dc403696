//! Label sets, manifests, feature loading, and evaluation metrics.

mod labels;
mod manifest;
mod metrics;

pub use labels::{LabelSet, Language, STANDARD_LANGUAGES};
pub use manifest::{format_manifest, load_manifest, parse_manifest, write_manifest, ManifestEntry};
pub use metrics::{
    aggregate_report, build_confusion, build_confusion_codes, class_metrics, confusion_csv, confusion_heatmap,
    f1_score, metrics_csv, parse_confusion_csv, ClassMetrics, ConfusionMatrix, Report,
};

use std::path::Path;

use rayon::prelude::*;

use crate::error::{LidError, Result};
use crate::features::{compute_mfsc, read_lidf, read_wav, FeatureConfig, FeatureSequence};

/// One labelled utterance, features already extracted.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: FeatureSequence,
    pub label: usize,
}

/// Reads `.lidf` feature files directly; anything else is decoded as WAV and
/// run through the front end.
pub fn load_features(path: &Path, cfg: &FeatureConfig) -> Result<FeatureSequence> {
    let is_lidf = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("lidf"));
    let features = if is_lidf {
        read_lidf(path)?
    } else {
        compute_mfsc(&read_wav(path, cfg.sample_rate)?, cfg)?
    };
    if features.dim() != cfg.n_mels {
        return Err(LidError::Format {
            kind: "LIDF",
            section: "header".into(),
            detail: format!(
                "{}: {} coefficients per frame, config expects {}",
                path.display(),
                features.dim(),
                cfg.n_mels
            ),
        });
    }
    Ok(features)
}

/// Loads every manifest entry on up to `workers` threads. Output order
/// follows the manifest regardless of the thread count.
pub fn load_examples(entries: &[ManifestEntry], cfg: &FeatureConfig, workers: usize) -> Result<Vec<Example>> {
    let load = |e: &ManifestEntry| {
        Ok(Example {
            features: load_features(&e.path, cfg)?,
            label: e.label,
        })
    };
    if workers <= 1 {
        return entries.iter().map(load).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| LidError::Config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| entries.par_iter().map(load).collect())
}
