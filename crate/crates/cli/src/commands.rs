use std::path::{Path, PathBuf};

use log::{error, info, warn};
use rayon::prelude::*;

use lidnet::config::RunConfig;
use lidnet::data::{
    aggregate_report, build_confusion, class_metrics, confusion_csv, confusion_heatmap, load_examples,
    load_features, load_manifest, metrics_csv, write_manifest, ManifestEntry,
};
use lidnet::features::write_lidf;
use lidnet::model::LidModel;
use lidnet::training::{evaluate_model, history_csv, train_loop, Checkpoint};
use lidnet::{LidError, Result};

pub struct GlobalOpts {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: usize,
    pub overrides: Vec<(String, String)>,
}

/// Config file if given, else the snapshot stored in the checkpoint, else
/// defaults; then command-line overrides.
fn resolve_config(opts: &GlobalOpts, checkpoint: Option<&Checkpoint>) -> Result<RunConfig> {
    let mut cfg = match (&opts.config, checkpoint) {
        (Some(path), _) => RunConfig::load(path).map_err(|e| match e {
            LidError::Io { path, source } => LidError::Config(format!("{}: {source}", path.display())),
            other => other,
        })?,
        (None, Some(c)) if !c.config.is_empty() => RunConfig::from_entries(&c.config)?,
        _ => RunConfig::default(),
    };
    for (k, v) in &opts.overrides {
        cfg.set(k, v)?;
    }
    if let Some(seed) = opts.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| LidError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| LidError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| LidError::Config(format!("cannot start {workers} workers: {e}")))
}

pub fn extract(opts: &GlobalOpts, manifest: &Path, out_dir: &Path) -> Result<()> {
    let cfg = resolve_config(opts, None)?;
    let labels = cfg.label_set()?;
    let entries = load_manifest(manifest, &labels)?;
    create_dir(out_dir)?;
    let job = |(i, e): (usize, &ManifestEntry)| -> Result<PathBuf> {
        let stem = e.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let name = PathBuf::from(format!("{i:06}_{stem}.lidf"));
        let features = load_features(&e.path, &cfg.features)?;
        write_lidf(out_dir.join(&name), &features)?;
        Ok(name)
    };
    let results: Vec<Result<PathBuf>> =
        thread_pool(opts.workers)?.install(|| entries.par_iter().enumerate().map(job).collect());

    let mut written = Vec::new();
    let mut first_failure = None;
    for (e, r) in entries.iter().zip(results) {
        match r {
            Ok(name) => written.push((name, e.label)),
            Err(err) => {
                error!("{}: {err}", e.path.display());
                first_failure.get_or_insert((e.line, format!("{}: {err}", e.path.display())));
            }
        }
    }
    let out_manifest = out_dir.join("manifest.tsv");
    write_manifest(&out_manifest, &written, &labels)?;
    info!(
        "wrote {} feature files and {}",
        written.len(),
        out_manifest.display()
    );
    match first_failure {
        None => Ok(()),
        Some((line, detail)) => Err(LidError::Data {
            source_name: manifest.display().to_string(),
            line,
            detail: format!(
                "{} of {} files failed, first: {detail}",
                entries.len() - written.len(),
                entries.len()
            ),
        }),
    }
}

fn manifest_path(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| LidError::Config(format!("{key} is not set")))
}

pub fn train(opts: &GlobalOpts, out: &Path) -> Result<()> {
    let cfg = resolve_config(opts, None)?;
    let labels = cfg.label_set()?;
    let train_entries = load_manifest(manifest_path(&cfg.data.train, "data.train")?, &labels)?;
    let val_entries = load_manifest(manifest_path(&cfg.data.val, "data.val")?, &labels)?;
    let train_set = load_examples(&train_entries, &cfg.features, opts.workers)?;
    let val_set = load_examples(&val_entries, &cfg.features, opts.workers)?;
    info!("{} training and {} validation utterances", train_set.len(), val_set.len());

    let (model, mut store) = LidModel::init(cfg.model_config()?, cfg.train.seed)?;
    info!("model has {} parameters", store.num_scalars());
    let outcome = train_loop(
        &model,
        &mut store,
        &train_set,
        &val_set,
        &cfg.train,
        &cfg.augment,
        &cfg.entries(),
    )?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    outcome.best.save(out)?;
    write_file(&sibling(out, ".history.csv"), &history_csv(&outcome.history))?;
    write_file(&sibling(out, ".config.txt"), &cfg.to_text())?;
    info!("stopped after {} epochs ({:?})", outcome.epochs, outcome.stop);

    outcome.best.restore(&mut store)?;
    let train_eval = evaluate_model(&model, &store, &train_set, cfg.train.batch_size)?;
    let val_eval = evaluate_model(&model, &store, &val_set, cfg.train.batch_size)?;
    println!("checkpoint={}", out.display());
    println!("best_val_loss={:.6}", outcome.best.best_val_loss.unwrap_or(f64::NAN));
    println!("train_accuracy={:.4}", train_eval.accuracy());
    println!("val_accuracy={:.4}", val_eval.accuracy());
    Ok(())
}

fn load_model(opts: &GlobalOpts, checkpoint: &Path) -> Result<(RunConfig, LidModel, lidnet::autodiff::ParamStore)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let cfg = resolve_config(opts, Some(&ckpt))?;
    let (model, mut store) = LidModel::init(cfg.model_config()?, 0)?;
    ckpt.restore(&mut store)?;
    Ok((cfg, model, store))
}

pub fn eval(opts: &GlobalOpts, checkpoint: &Path, manifest: &Path, report_dir: &Path) -> Result<()> {
    let (cfg, model, store) = load_model(opts, checkpoint)?;
    let labels = cfg.label_set()?;
    let entries = load_manifest(manifest, &labels)?;
    let data = load_examples(&entries, &cfg.features, opts.workers)?;
    let result = evaluate_model(&model, &store, &data, cfg.train.batch_size)?;
    let matrix = build_confusion(&result.pairs(), labels.len())?;
    let report = aggregate_report(class_metrics(&matrix), &matrix)?;
    create_dir(report_dir)?;
    write_file(&report_dir.join("metrics.csv"), &metrics_csv(&report, &labels))?;
    write_file(&report_dir.join("confusion.csv"), &confusion_csv(&matrix, &labels))?;
    let heatmap = confusion_heatmap(&matrix, &labels);
    write_file(&report_dir.join("confusion.txt"), &heatmap)?;
    if report.classes.iter().any(|c| c.support == 0) {
        warn!("some classes have no utterances in {}", manifest.display());
    }
    println!("{heatmap}");
    println!("accuracy={:.4}", report.accuracy);
    println!("macro_f1={:.4}", report.macro_f1);
    println!("mean_loss={:.6}", result.mean_loss);
    Ok(())
}

pub fn predict(opts: &GlobalOpts, checkpoint: &Path, input: &Path) -> Result<()> {
    let (cfg, model, store) = load_model(opts, checkpoint)?;
    let labels = cfg.label_set()?;
    let features = load_features(input, &cfg.features)?;
    let probs = model.predict_proba(&store, &features)?;
    let best = (0..probs.len())
        .max_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    println!("predicted\t{}", labels.code(best));
    for (i, p) in probs.iter().enumerate() {
        println!("{}\t{p:.6}", labels.code(i));
    }
    Ok(())
}
