//! Pipeline stages. Each returns the files it wrote; the caller records
//! them in a run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use super::config::{DataConfig, EvaluateConfig, PipelineConfig};
use crate::ensemble::{
    build_strategy, fuse, write_logits_csv, EnsembleManifest, EnsembleSpec, ManifestEntry, Strategy,
};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, grad_cam, render_report, standard_cis, write_saliency_maps, ReportInputs, SaliencyMap,
};
use crate::gan::{balance_dataset, train_class_gans, BalanceReport, GanTrainConfig};
use crate::ingest::beats::hold_out_test;
use crate::ingest::csv_io::{read_beats_file, write_beats_file, CsvColumns};
use crate::ingest::record::ingest_directory;
use crate::ingest::{stratified_split, BeatDataset, LeadChoice, SplitTag, N_CLASSES};
use crate::models::checkpoint;
use crate::models::{build, Architecture, Model};
use crate::train::{batch_tensor, train, TrainingHistory};
use crate::util::derive_seed;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const MODELS_MANIFEST: &str = "models.json";
pub const VAL_LOGITS_FILE: &str = "val_logits.csv";
pub const HISTORY_FILE: &str = "history.csv";
const ALL_COLUMNS: CsvColumns = CsvColumns { source: true, split: true };

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads beats from CSV or WFDB records and assigns train/val/test tags
/// unless the input already carries them.
pub fn ingest(data: &DataConfig, seed: u64, out: &Path) -> Result<(BeatDataset, Vec<PathBuf>)> {
    let mut ds = match (&data.beats_csv, &data.records_dir) {
        (Some(csv), _) => read_beats_file(csv)?,
        (None, Some(dir)) => {
            let lead: LeadChoice = data.lead.parse()?;
            let (ds, summary) = ingest_directory(dir, &lead, data.beat_len, &data.annotator)?;
            info!(
                "ingested {} beats from {} records ({} skipped)",
                ds.len(),
                summary.records.len(),
                summary.skipped.len()
            );
            ds
        }
        (None, None) => return Err(Error::Usage("ingest needs a records directory or a beat CSV".into())),
    };
    if ds.beat_len != data.beat_len {
        return Err(Error::Config(format!(
            "beats have length {}, configuration says {}",
            ds.beat_len, data.beat_len
        )));
    }
    if !ds.has_split_tags() {
        hold_out_test(&mut ds, data.test_fraction, seed)?;
        stratified_split(&mut ds, data.train_fraction, seed)?;
    }
    create_parent(out)?;
    write_beats_file(out, &ds, ALL_COLUMNS)?;
    Ok((ds, vec![out.to_path_buf()]))
}

/// Trains one GAN per deficient class and balances the train split.
pub fn augment(
    ds: &BeatDataset,
    cfg: &GanTrainConfig,
    seed: u64,
    threads: usize,
    out: &Path,
) -> Result<(BeatDataset, BalanceReport, Vec<PathBuf>)> {
    let outcomes = train_class_gans(ds, cfg, seed, threads)?;
    let mut history = csv::Writer::from_writer(Vec::new());
    history.write_record(["class", "step", "net", "loss"])?;
    for (class, o) in &outcomes {
        for l in &o.history {
            history.write_record([class.to_string(), l.step.to_string(), format!("{:?}", l.net), l.loss.to_string()])?;
        }
    }
    let nets: BTreeMap<usize, _> = outcomes
        .into_iter()
        .map(|(c, o)| (c, (o.generator, o.discriminator)))
        .collect();
    let (balanced, report) = balance_dataset(ds, &nets, cfg.tau, cfg.balance_ratio, derive_seed(seed, 1))?;
    create_parent(out)?;
    write_beats_file(out, &balanced, ALL_COLUMNS)?;
    let report_path = out.with_extension("balance.json");
    write_json(&report_path, &report)?;
    let history_path = out.with_extension("gan_history.csv");
    let bytes = history.into_inner().map_err(|e| Error::io(&history_path, e.into_error()))?;
    fs::write(&history_path, bytes).map_err(|e| Error::io(&history_path, e))?;
    Ok((balanced, report, vec![out.to_path_buf(), report_path, history_path]))
}

/// Writes the dataset unchanged when augmentation is disabled.
pub fn passthrough(ds: &BeatDataset, out: &Path) -> Result<Vec<PathBuf>> {
    create_parent(out)?;
    write_beats_file(out, ds, ALL_COLUMNS)?;
    Ok(vec![out.to_path_buf()])
}

/// Beats tagged `test`, or every beat when nothing carries that tag.
pub fn test_indices(ds: &BeatDataset) -> Vec<usize> {
    let tagged = ds.indices_with(SplitTag::Test);
    if tagged.is_empty() {
        (0..ds.len()).collect()
    } else {
        tagged
    }
}

pub struct TrainedArch {
    pub architecture: Architecture,
    pub model: Model,
    pub history: TrainingHistory,
    pub val_macro_f1: f64,
}

fn arch_seed(seed: u64, arch: Architecture) -> u64 {
    let pos = Architecture::ALL.iter().position(|&a| a == arch).expect("listed") as u64;
    derive_seed(seed, 100 + pos)
}

fn train_one(ds: &BeatDataset, cfg: &PipelineConfig, arch: Architecture, seed: u64) -> Result<TrainedArch> {
    let s = arch_seed(seed, arch);
    let mut tc = cfg.train_config(arch)?;
    tc.seed = s;
    let model = build(&cfg.descriptor(arch)?, s)?;
    info!("training {arch}: {} parameters", model.params.param_count());
    let out = train(model, ds, &tc)?;
    let val = ds.indices_with(SplitTag::Val);
    let (x, y) = batch_tensor(ds, &val)?;
    let logits = out.model.predict(&x, cfg.evaluate.predict_chunk)?.cast::<f64>();
    let val_macro_f1 = evaluate(&logits, &y)?.metrics.macro_f1;
    info!("{arch}: best epoch {}, validation macro-F1 {val_macro_f1:.4}", out.best_epoch);
    Ok(TrainedArch {
        architecture: arch,
        model: out.model,
        history: out.history,
        val_macro_f1,
    })
}

/// Trains `archs`, up to `threads` at a time, and writes a checkpoint,
/// history and validation logits per architecture plus `models.json`.
pub fn train_archs(
    ds: &BeatDataset,
    cfg: &PipelineConfig,
    archs: &[Architecture],
    seed: u64,
    threads: usize,
    out_dir: &Path,
) -> Result<(Vec<TrainedArch>, Vec<PathBuf>)> {
    create_dir(out_dir)?;
    let mut trained = Vec::new();
    for group in archs.chunks(threads.max(1)) {
        let results: Vec<Result<TrainedArch>> = std::thread::scope(|s| {
            let handles: Vec<_> = group
                .iter()
                .map(|&a| s.spawn(move || train_one(ds, cfg, a, seed)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("training worker panicked")).collect()
        });
        for r in results {
            trained.push(r?);
        }
    }
    let mut produced = Vec::new();
    let mut entries = Vec::new();
    for t in &trained {
        let dir = out_dir.join(t.architecture.as_str());
        create_dir(&dir)?;
        let ckpt = dir.join(CHECKPOINT_FILE);
        checkpoint::save(&t.model, &ckpt)?;
        let hist = dir.join(HISTORY_FILE);
        t.history.write_csv_file(&hist)?;
        let val = ds.indices_with(SplitTag::Val);
        let (x, _) = batch_tensor(ds, &val)?;
        let logits = t.model.predict(&x, cfg.evaluate.predict_chunk)?.cast::<f64>();
        let logit_path = dir.join(VAL_LOGITS_FILE);
        let f = fs::File::create(&logit_path).map_err(|e| Error::io(&logit_path, e))?;
        write_logits_csv(std::io::BufWriter::new(f), &logits)?;
        produced.extend([ckpt, hist, logit_path]);
        entries.push(ManifestEntry {
            id: t.architecture.as_str().to_string(),
            checkpoint: PathBuf::from(t.architecture.as_str()).join(CHECKPOINT_FILE),
            val_macro_f1: t.val_macro_f1,
        });
    }
    let manifest_path = out_dir.join(MODELS_MANIFEST);
    write_json(&manifest_path, &EnsembleManifest { models: entries })?;
    produced.push(manifest_path);
    Ok((trained, produced))
}

/// Full report for one model on the test beats of `ds`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_model(
    model: &Model,
    ds: &BeatDataset,
    history: Option<&TrainingHistory>,
    cfg: &EvaluateConfig,
    seed: u64,
    threads: usize,
    out_dir: &Path,
    label: &str,
) -> Result<Vec<PathBuf>> {
    let idx = test_indices(ds);
    let (x, y) = batch_tensor(ds, &idx)?;
    let logits = model.predict(&x, cfg.predict_chunk)?.cast::<f64>();
    let ev = evaluate(&logits, &y)?;
    let cis = standard_cis(&y, &ev.predictions, N_CLASSES, cfg.bootstrap_resamples, seed, threads)?;
    let saliency = saliency_for(model, ds, &idx, cfg.gradcam_samples, None)?;
    render_report(
        out_dir,
        &ReportInputs {
            label,
            evaluation: &ev,
            cis: &cis,
            saliency: &saliency,
            history,
            ensemble: None,
        },
    )
}

/// Maps for the first `count` of `indices`, keyed by position in `indices`.
pub fn saliency_for(
    model: &Model,
    ds: &BeatDataset,
    indices: &[usize],
    count: usize,
    target: Option<usize>,
) -> Result<Vec<(usize, SaliencyMap)>> {
    let pick = &indices[..count.min(indices.len())];
    if pick.is_empty() {
        return Ok(Vec::new());
    }
    let (x, _) = batch_tensor(ds, pick)?;
    let targets = target.map(|t| vec![t; pick.len()]);
    let maps = grad_cam(model, &x, targets.as_deref())?;
    Ok(maps.into_iter().enumerate().collect())
}

/// Writes Grad-CAM maps for the first `count` test beats.
pub fn gradcam(model: &Model, ds: &BeatDataset, count: usize, target: Option<usize>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out_dir)?;
    let maps = saliency_for(model, ds, &test_indices(ds), count, target)?;
    write_saliency_maps(out_dir, &maps)
}

/// Loads the manifest's models, fuses their test logits under `strategy`,
/// and writes per-model logits plus the fused report.
#[allow(clippy::too_many_arguments)]
pub fn ensemble(
    manifest: &EnsembleManifest,
    base: &Path,
    strategy: Strategy,
    ds: &BeatDataset,
    cfg: &EvaluateConfig,
    seed: u64,
    threads: usize,
    out_dir: &Path,
) -> Result<(EnsembleSpec, Vec<PathBuf>)> {
    let ids: Vec<String> = manifest.models.iter().map(|m| m.id.clone()).collect();
    let f1: Vec<f64> = manifest.models.iter().map(|m| m.val_macro_f1).collect();
    let spec = build_strategy(&ids, &f1, strategy)?;
    create_dir(out_dir)?;
    let idx = test_indices(ds);
    let (x, y) = batch_tensor(ds, &idx)?;
    let mut produced = Vec::new();
    let mut logits = BTreeMap::new();
    for (entry, path) in manifest.models.iter().zip(manifest.resolve(base)) {
        let model = checkpoint::load(&path)?;
        let l = model.predict(&x, cfg.predict_chunk)?.cast::<f64>();
        let out = out_dir.join(format!("logits_{}.csv", entry.id));
        let f = fs::File::create(&out).map_err(|e| Error::io(&out, e))?;
        write_logits_csv(std::io::BufWriter::new(f), &l)?;
        produced.push(out);
        logits.insert(entry.id.clone(), l);
    }
    let members: Vec<_> = spec.members.iter().map(|m| logits[m].clone()).collect();
    let fused = fuse(&members, &spec.weights)?;
    let ev = evaluate(&fused, &y)?;
    let cis = standard_cis(&y, &ev.predictions, N_CLASSES, cfg.bootstrap_resamples, seed, threads)?;
    produced.extend(render_report(
        out_dir,
        &ReportInputs {
            label: strategy.as_str(),
            evaluation: &ev,
            cis: &cis,
            saliency: &[],
            history: None,
            ensemble: Some(&spec),
        },
    )?);
    Ok((spec, produced))
}
