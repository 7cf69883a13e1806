//! End-to-end drivers: corpus preparation, hash splits, single runs,
//! label-set and training-size sweeps, transfer comparison and reports.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::architectures::{count_costs, shrink, with_bottleneck, ArchitectureKind, ArchitectureSpec, CostReport, Model};
use crate::error::{Error, Result};
use crate::frontend::{Frontend, FrontendConfig, LabelId, LogMelPatch};
use crate::manifest::Manifest;
use crate::metrics::{
    self, build_balanced_eval, scatter_prior_dprime, top_peak_timeline, write_scatter_csv, write_timeline_csv, ClipScores,
    EvalClip, MetricsReport, DEFAULT_PER_CLASS, DEFAULT_TIMELINE_CLASSES,
};
use crate::patch_cache::{read_patches, PatchCacheWriter};
use crate::synth::{synth_dataset, ClipEvents, SynthConfig};
use crate::training::{score_clips, write_series_csv, PatchStore, SeriesRow, TrainConfig, Trainer};
use crate::transfer::{
    extract_embeddings, train_embedding_classifier, train_logmel_baseline, write_embeddings, TransferConfig,
};
use crate::vocab::LabelVocabulary;

pub const SUMMARY_FILE: &str = "summary.json";
pub const RUN_FILE: &str = "run.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub seed: u64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { seed: 42, validation_fraction: 0.1, test_fraction: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    /// Top-k vocabulary sizes; every row is scored on the smallest.
    pub vocabulary_sizes: Vec<usize>,
    /// Bottleneck off/on for each vocabulary size.
    pub bottleneck: Vec<bool>,
    pub bottleneck_units: usize,
    /// Training clip counts; every row is scored on the same clips.
    pub training_sizes: Vec<usize>,
}

impl Default for SweepAxes {
    fn default() -> Self {
        Self { vocabulary_sizes: vec![8, 4], bottleneck: vec![false, true], bottleneck_units: 128, training_sizes: vec![350, 700, 1400] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub architecture: ArchitectureKind,
    pub width_factor: f64,
    pub bottleneck_units: Option<usize>,
    pub train: TrainConfig,
    pub eval_per_class: usize,
    pub eval_seed: u64,
    pub timeline_classes: usize,
    pub split: SplitConfig,
    pub sweep: SweepAxes,
    pub synth: SynthConfig,
    pub transfer: TransferConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            architecture: ArchitectureKind::Resnet,
            width_factor: 0.125,
            bottleneck_units: None,
            train: TrainConfig::default(),
            eval_per_class: DEFAULT_PER_CLASS,
            eval_seed: 42,
            timeline_classes: DEFAULT_TIMELINE_CLASSES,
            split: SplitConfig::default(),
            sweep: SweepAxes::default(),
            synth: SynthConfig::default(),
            transfer: TransferConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs always serialize")
    }

    /// Hex sha256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("configs always serialize");
        format!("{:x}", Sha256::digest(&bytes))
    }

    /// Sets every seed (weights, sampling, corpus, split, eval set) to `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.synth.seed = seed;
        self.split.seed = seed;
        self.eval_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_factor > 0.0 && self.width_factor <= 1.0) {
            return Err(Error::Config(format!("width_factor must be in (0, 1], got {}", self.width_factor)));
        }
        let (v, t) = (self.split.validation_fraction, self.split.test_fraction);
        if !(v >= 0.0 && t > 0.0 && v + t < 1.0) {
            return Err(Error::Config("split fractions must be non-negative, test > 0, and sum below 1".into()));
        }
        if self.eval_per_class == 0 || self.bottleneck_units == Some(0) || self.sweep.bottleneck_units == 0 {
            return Err(Error::Config("eval_per_class and bottleneck widths must be positive".into()));
        }
        if self.sweep.vocabulary_sizes.contains(&0) || self.sweep.training_sizes.contains(&0) {
            return Err(Error::Config("sweep sizes must be positive".into()));
        }
        self.train.validate()?;
        self.synth.validate()
    }

    /// Architecture for `num_labels` outputs at the configured width.
    pub fn build_spec(&self, num_labels: usize) -> Result<ArchitectureSpec> {
        let base = self.architecture.build(num_labels)?;
        let spec = if self.width_factor < 1.0 { shrink(&base, self.width_factor)? } else { base };
        match self.bottleneck_units {
            Some(u) => with_bottleneck(&spec, u),
            None => Ok(spec),
        }
    }
}

/// Featurized corpus.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub store: PatchStore,
    pub vocab: LabelVocabulary,
    /// Generator ground truth, when the corpus is synthetic.
    pub events: Vec<ClipEvents>,
}

/// Log-mel patches of every manifest clip, in manifest order.
pub fn featurize(manifest: &Manifest, vocab: &LabelVocabulary) -> Result<Vec<LogMelPatch>> {
    let frontend = Frontend::new(FrontendConfig::default())?;
    let per_clip: Vec<Vec<LogMelPatch>> = manifest
        .records
        .par_iter()
        .map(|r| {
            let clip = manifest.load_clip(r, vocab)?;
            frontend.extract_patches(&clip)
        })
        .collect::<Result<_>>()?;
    Ok(per_clip.into_iter().flatten().collect())
}

/// Featurizes through a patch cache keyed by the manifest and vocabulary.
pub fn featurize_cached(manifest: &Manifest, vocab: &LabelVocabulary, cache_dir: &Path) -> Result<PatchStore> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&manifest.records)?);
    h.update(serde_json::to_vec(vocab.entries())?);
    let key = format!("{:x}", h.finalize());
    let path = cache_dir.join(format!("patches-{}.wvc", &key[..16]));
    let patches = if path.exists() {
        read_patches(&path)?
    } else {
        let patches = featurize(manifest, vocab)?;
        let tmp = path.with_extension("tmp");
        let mut w = PatchCacheWriter::new(BufWriter::new(File::create(&tmp)?))?;
        for p in &patches {
            w.write(p)?;
        }
        w.finish()?;
        fs::rename(&tmp, &path)?;
        patches
    };
    PatchStore::from_patches(patches)
}

/// Loads `manifest.jsonl`, `vocabulary.csv` and (if present) `events.jsonl` from `dir`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = Manifest::read(&dir.join("manifest.jsonl"))?;
    let vocab_path = dir.join("vocabulary.csv");
    let vocab = LabelVocabulary::read_csv(
        File::open(&vocab_path).map_err(|e| Error::Data(format!("{}: {e}", vocab_path.display())))?,
    )?;
    let events_path = dir.join("events.jsonl");
    let events = if events_path.exists() {
        fs::read_to_string(&events_path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let store = featurize_cached(&manifest, &vocab, dir)?;
    Ok(Dataset { store, vocab, events })
}

/// Synthesizes the corpus into `dir` unless a manifest is already there,
/// then featurizes it.
pub fn prepare_dataset(synth: &SynthConfig, dir: &Path) -> Result<Dataset> {
    if !dir.join("manifest.jsonl").exists() {
        log::info!("synthesizing {} clips into {}", synth.num_clips, dir.display());
        synth_dataset(synth, dir).map_err(|e| e.in_stage("synth"))?;
    }
    load_dataset(dir).map_err(|e| e.in_stage("featurize"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Split membership from a hash of `(seed, clip_id)`; stable under corpus growth.
pub fn split_of(config: &SplitConfig, clip_id: &str) -> Split {
    let mut h = Sha256::new();
    h.update(config.seed.to_le_bytes());
    h.update(clip_id.as_bytes());
    let d = h.finalize();
    let u = u64::from_le_bytes(d[..8].try_into().expect("8 bytes")) as f64 / 2f64.powi(64);
    if u < config.test_fraction {
        Split::Test
    } else if u < config.test_fraction + config.validation_fraction {
        Split::Validation
    } else {
        Split::Train
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: PatchStore,
    pub validation: PatchStore,
    pub test: PatchStore,
}

pub fn split_store(store: &PatchStore, config: &SplitConfig) -> Splits {
    let part = |s: Split| store.select(|c| (split_of(config, &c.clip_id) == s).then(|| c.labels.clone()));
    Splits { train: part(Split::Train), validation: part(Split::Validation), test: part(Split::Test) }
}

/// Balanced evaluation subset of `test` over `vocab`.
pub fn balanced_eval_store(test: &PatchStore, vocab: &LabelVocabulary, per_class: usize, seed: u64) -> Result<(PatchStore, String)> {
    let clips: Vec<EvalClip> =
        test.clips().iter().map(|c| EvalClip { clip_id: c.clip_id.clone(), labels: c.labels.clone() }).collect();
    let set = build_balanced_eval(&clips, vocab, per_class, seed)?;
    let chosen: BTreeSet<&str> = set.clips.iter().map(|c| c.clip_id.as_str()).collect();
    let store = test.select(|c| chosen.contains(c.clip_id.as_str()).then(|| c.labels.clone()));
    Ok((store, set.descriptor()))
}

/// The first `n` clips of `store`.
pub fn first_clips(store: &PatchStore, n: usize) -> PatchStore {
    let mut seen = 0;
    store.select(|c| {
        seen += 1;
        (seen <= n).then(|| c.labels.clone())
    })
}

/// Scores `eval` with a model whose outputs are `model_vocab`, over the labels of `eval_vocab`.
pub fn evaluate_model(
    model: &Model<f32>,
    model_vocab: &LabelVocabulary,
    eval: &PatchStore,
    eval_vocab: &LabelVocabulary,
    descriptor: &str,
    keep_patches: bool,
) -> Result<(MetricsReport, Vec<ClipScores>)> {
    let scores = score_clips(model, eval, keep_patches)?;
    let report = metrics::evaluate_scores(
        &scores,
        &model_vocab.ids(),
        |id| eval.clip(id).map(|c| c.labels.clone()),
        eval_vocab,
        descriptor,
    )?;
    Ok((report, scores))
}

/// Bookkeeping written next to each run's metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub architecture: String,
    pub config_digest: String,
    pub steps: u64,
    pub wall_clock_s: f64,
    pub weights: u64,
    pub biases_bn: u64,
    pub multiplies: u64,
    pub train_clips: usize,
    pub eval_clips: usize,
    pub timeline_clip: Option<String>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: MetricsReport,
    pub cost: CostReport,
    pub record: RunRecord,
    pub vocab: LabelVocabulary,
    pub model: Model<f32>,
    pub checkpoint: PathBuf,
    pub series: Vec<SeriesRow>,
}

fn training_vocab(config: &ExperimentConfig, vocab: &LabelVocabulary) -> Result<LabelVocabulary> {
    match config.train.vocabulary_size {
        Some(k) => vocab.restrict(k),
        None => Ok(vocab.clone()),
    }
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(BufWriter<File>) -> Result<()>,
{
    f(BufWriter::new(File::create(path)?))
}

/// Trains on the train split, monitors on the validation split, evaluates
/// on the balanced test subset and writes every artifact into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, data: &Dataset, out_dir: &Path) -> Result<RunOutcome> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    let digest = config.digest();
    fs::write(out_dir.join("config.json"), config.to_json())?;
    let vocab = training_vocab(config, &data.vocab)?;
    let spec = config.build_spec(vocab.len()).map_err(|e| e.in_stage("build"))?;
    let cost = count_costs(&spec)?;
    write_with(&out_dir.join("cost.csv"), |w| cost.write_csv(w))?;

    let splits = split_store(&data.store, &config.split);
    let train = splits.train.restrict_for_training(&vocab);
    let validation = first_clips(&splits.validation, config.train.validation_clips);
    let (eval, descriptor) = balanced_eval_store(&splits.test, &vocab, config.eval_per_class, config.eval_seed)?;
    log::info!(
        "{}: {} train clips ({} patches), {} eval clips",
        spec.name,
        train.clips().len(),
        train.len(),
        eval.clips().len()
    );

    let started = Instant::now();
    let mut trainer = Trainer::new(spec, vocab.clone(), config.train.clone())?;
    let mut series = Vec::new();
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let val = (!validation.is_empty()).then_some(&validation);
    trainer.run(&train, val, Some(&checkpoint), &mut series).map_err(|e| e.in_stage("train"))?;
    trainer.save(&checkpoint)?;
    let wall_clock_s = started.elapsed().as_secs_f64();

    let (report, scores) =
        evaluate_model(&trainer.model, &vocab, &eval, &vocab, &descriptor, true).map_err(|e| e.in_stage("eval"))?;
    fs::write(out_dir.join(SUMMARY_FILE), report.summary_json(Some(&digest)))?;
    write_with(&out_dir.join("classes.csv"), |w| report.write_class_csv(w))?;
    write_with(&out_dir.join("scatter.csv"), |w| write_scatter_csv(&scatter_prior_dprime(&report), w))?;
    write_with(&out_dir.join("series.csv"), |w| write_series_csv(&series, w))?;

    // Timeline of the longest evaluation clip.
    let timeline_clip = scores
        .iter()
        .filter_map(|s| s.patch_scores.as_ref().map(|m| (m.rows(), s)))
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.clip_id.cmp(&a.1.clip_id)))
        .map(|(_, s)| s);
    if let Some(s) = timeline_clip {
        let names: Vec<String> = vocab.entries().iter().map(|e| e.name.clone()).collect();
        let timeline = top_peak_timeline(s.patch_scores.as_ref().expect("kept"), &names, config.timeline_classes)?;
        write_with(&out_dir.join("timeline.csv"), |w| write_timeline_csv(&timeline, w))?;
    }

    let record = RunRecord {
        architecture: trainer.model.spec().name.clone(),
        config_digest: digest,
        steps: trainer.step,
        wall_clock_s,
        weights: cost.total_weights,
        biases_bn: cost.total_biases_bn,
        multiplies: cost.total_multiplies,
        train_clips: train.clips().len(),
        eval_clips: eval.clips().len(),
        timeline_clip: timeline_clip.map(|s| s.clip_id.clone()),
    };
    fs::write(out_dir.join(RUN_FILE), serde_json::to_string_pretty(&record)?)?;
    log::info!(
        "{}: balanced AUC {:.4}, d' {:.3}, mAP {:.4} in {wall_clock_s:.0}s",
        record.architecture,
        report.balanced_auc,
        report.balanced_dprime,
        report.balanced_map
    );
    Ok(RunOutcome { report, cost, record, vocab, model: trainer.model, checkpoint, series })
}

/// Re-evaluates a checkpoint on the balanced test subset of `data`.
pub fn evaluate_checkpoint(config: &ExperimentConfig, checkpoint: &Path, data: &Dataset) -> Result<MetricsReport> {
    let (model, vocab) = crate::training::load_model(checkpoint)?;
    let splits = split_store(&data.store, &config.split);
    let (eval, descriptor) = balanced_eval_store(&splits.test, &vocab, config.eval_per_class, config.eval_seed)?;
    Ok(evaluate_model(&model, &vocab, &eval, &vocab, &descriptor, false)?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSweepRow {
    pub vocabulary_size: usize,
    pub bottleneck: bool,
    pub head_weights: u64,
    pub total_weights: u64,
    pub eval_vocabulary_size: usize,
    pub balanced_auc: f64,
    pub balanced_dprime: f64,
    pub balanced_map: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeSweepRow {
    pub training_clips: usize,
    pub eval_clips: usize,
    pub balanced_auc: f64,
    pub balanced_dprime: f64,
    pub balanced_map: f64,
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per (vocabulary size, bottleneck) pair, all scored on the
/// balanced test subset of the smallest vocabulary.
pub fn run_label_sweep(config: &ExperimentConfig, data: &Dataset, out_dir: &Path) -> Result<Vec<LabelSweepRow>> {
    config.validate()?;
    let axes = &config.sweep;
    let smallest = *axes.vocabulary_sizes.iter().min().ok_or_else(|| Error::Config("empty vocabulary sweep".into()))?;
    let eval_vocab = data.vocab.restrict(smallest)?;
    let splits = split_store(&data.store, &config.split);
    let validation = first_clips(&splits.validation, config.train.validation_clips);
    let (eval, descriptor) = balanced_eval_store(&splits.test, &eval_vocab, config.eval_per_class, config.eval_seed)?;
    let mut rows = Vec::new();
    for &size in &axes.vocabulary_sizes {
        let vocab = data.vocab.restrict(size)?;
        let train = splits.train.restrict_for_training(&vocab);
        for &bneck in &axes.bottleneck {
            let run_config = ExperimentConfig {
                bottleneck_units: bneck.then_some(axes.bottleneck_units),
                train: TrainConfig { vocabulary_size: Some(size), ..config.train.clone() },
                ..config.clone()
            };
            let spec = run_config.build_spec(size)?;
            let cost = count_costs(&spec)?;
            log::info!("label sweep: {size} labels, bottleneck {bneck}");
            let mut trainer = Trainer::new(spec, vocab.clone(), run_config.train.clone())?;
            let val = (!validation.is_empty()).then_some(&validation);
            trainer.run(&train, val, None, &mut Vec::new()).map_err(|e| e.in_stage("sweep"))?;
            let (report, _) = evaluate_model(&trainer.model, &vocab, &eval, &eval_vocab, &descriptor, false)?;
            rows.push(LabelSweepRow {
                vocabulary_size: size,
                bottleneck: bneck,
                head_weights: cost.output_head_weights(),
                total_weights: cost.total_weights,
                eval_vocabulary_size: eval_vocab.len(),
                balanced_auc: report.balanced_auc,
                balanced_dprime: report.balanced_dprime,
                balanced_map: report.balanced_map,
            });
        }
    }
    fs::create_dir_all(out_dir)?;
    write_rows(&out_dir.join("label_sweep.csv"), &rows)?;
    Ok(rows)
}

/// One row per training-set size (the first `n` training clips), all
/// scored on the same evaluation clips.
pub fn run_training_size_sweep(config: &ExperimentConfig, data: &Dataset, out_dir: &Path) -> Result<Vec<SizeSweepRow>> {
    config.validate()?;
    let vocab = training_vocab(config, &data.vocab)?;
    let splits = split_store(&data.store, &config.split);
    let train_all = splits.train.restrict_for_training(&vocab);
    let validation = first_clips(&splits.validation, config.train.validation_clips);
    let (eval, descriptor) = balanced_eval_store(&splits.test, &vocab, config.eval_per_class, config.eval_seed)?;
    let mut rows = Vec::new();
    for &n in &config.sweep.training_sizes {
        let train = first_clips(&train_all, n);
        log::info!("size sweep: {} training clips", train.clips().len());
        let mut trainer = Trainer::new(config.build_spec(vocab.len())?, vocab.clone(), config.train.clone())?;
        let val = (!validation.is_empty()).then_some(&validation);
        trainer.run(&train, val, None, &mut Vec::new()).map_err(|e| e.in_stage("sweep"))?;
        let (report, _) = evaluate_model(&trainer.model, &vocab, &eval, &vocab, &descriptor, false)?;
        rows.push(SizeSweepRow {
            training_clips: train.clips().len(),
            eval_clips: report.num_clips,
            balanced_auc: report.balanced_auc,
            balanced_dprime: report.balanced_dprime,
            balanced_map: report.balanced_map,
        });
    }
    fs::create_dir_all(out_dir)?;
    write_rows(&out_dir.join("size_sweep.csv"), &rows)?;
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct SweepTables {
    pub labels: Vec<LabelSweepRow>,
    pub sizes: Vec<SizeSweepRow>,
}

pub fn run_sweeps(config: &ExperimentConfig, data: &Dataset, out_dir: &Path) -> Result<SweepTables> {
    Ok(SweepTables {
        labels: run_label_sweep(config, data, out_dir)?,
        sizes: run_training_size_sweep(config, data, out_dir)?,
    })
}

#[derive(Clone, Debug)]
pub struct TransferComparison {
    pub embedding_dim: usize,
    pub embedding: MetricsReport,
    pub baseline: MetricsReport,
}

/// Trains the configured network on `source`, then compares an embedding
/// classifier against the log-mel baseline on `target` (same splits, seeds
/// and classifier).
pub fn run_transfer(config: &ExperimentConfig, source: &Dataset, target: &Dataset, out_dir: &Path) -> Result<TransferComparison> {
    let source_run = run_experiment(config, source, &out_dir.join("source")).map_err(|e| e.in_stage("source"))?;
    let overlap: Vec<LabelId> = target.vocab.ids().into_iter().filter(|l| source_run.vocab.contains(*l)).collect();
    if !overlap.is_empty() {
        log::warn!("source and target vocabularies share labels {overlap:?}");
    }
    let splits = split_store(&target.store, &config.split);
    let train = splits.train.restrict_for_training(&target.vocab);
    let (eval, _) = balanced_eval_store(&splits.test, &target.vocab, config.eval_per_class, config.eval_seed)?;
    let dim = source_run.model.spec().embedding_dim()?;
    let train_emb = extract_embeddings(&source_run.model, &train)?;
    let eval_emb = extract_embeddings(&source_run.model, &eval)?;
    fs::create_dir_all(out_dir)?;
    write_embeddings(&out_dir.join("train.wem"), dim, &train_emb)?;
    write_embeddings(&out_dir.join("eval.wem"), dim, &eval_emb)?;

    let digest = config.digest();
    let labels = concat_stores(&train, &eval);
    let embedding =
        train_embedding_classifier(&train_emb, &eval_emb, dim, &labels, &target.vocab, &config.transfer)?.report;
    let baseline = train_logmel_baseline(&train, &eval, &target.vocab, &config.transfer)?.report;
    fs::write(out_dir.join("embedding_summary.json"), embedding.summary_json(Some(&digest)))?;
    fs::write(out_dir.join("logmel_summary.json"), baseline.summary_json(Some(&digest)))?;
    log::info!(
        "transfer: embedding AUC {:.4} mAP {:.4} vs log-mel AUC {:.4} mAP {:.4}",
        embedding.balanced_auc,
        embedding.balanced_map,
        baseline.balanced_auc,
        baseline.balanced_map
    );
    Ok(TransferComparison { embedding_dim: dim, embedding, baseline })
}

fn concat_stores(a: &PatchStore, b: &PatchStore) -> PatchStore {
    let mut out = PatchStore::empty(a.item_shape());
    for s in [a, b] {
        for c in s.clips() {
            let items: Vec<f32> = c.patches.clone().flat_map(|p| s.patch(p).iter().copied()).collect();
            out.push_clip(c.clip_id.clone(), c.labels.clone(), &items).expect("whole items");
        }
    }
    out
}

/// Reference-scale cost table for every architecture at `num_labels` outputs.
pub fn cost_table(num_labels: usize) -> Result<Vec<CostReport>> {
    ArchitectureKind::ALL.iter().map(|k| count_costs(&k.build(num_labels)?)).collect()
}

#[derive(Deserialize)]
struct SummaryView {
    balanced_auc: f64,
    balanced_dprime: f64,
    balanced_map: f64,
}

/// Text report over every run directory directly under `dir` (and `dir`
/// itself). Runs missing an artifact are listed as absent.
pub fn report(dir: &Path) -> Result<String> {
    let mut out = String::from("architecture costs (3087 labels)\n");
    out.push_str(&format!("{:<14} {:>12} {:>10} {:>16}\n", "architecture", "weights", "biases_bn", "multiplies"));
    for c in cost_table(3087)? {
        out.push_str(&format!("{:<14} {:>12} {:>10} {:>16}\n", c.architecture, c.total_weights, c.total_biases_bn, c.total_multiplies));
    }
    out.push_str("\nruns\n");
    out.push_str(&format!(
        "{:<24} {:<28} {:>10} {:>12} {:>7} {:>9} {:>7} {:>7} {:>7}\n",
        "run", "architecture", "weights", "multiplies", "steps", "time_s", "auc", "dprime", "map"
    ));
    let mut dirs = vec![dir.to_path_buf()];
    if dir.is_dir() {
        let mut subs: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
        subs.sort();
        dirs.extend(subs);
    }
    for d in dirs {
        let (run_path, summary_path) = (d.join(RUN_FILE), d.join(SUMMARY_FILE));
        if !run_path.exists() && !summary_path.exists() {
            continue;
        }
        let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| ".".into());
        let record: Option<RunRecord> = fs::read(&run_path).ok().and_then(|b| serde_json::from_slice(&b).ok());
        let summary: Option<SummaryView> = fs::read(&summary_path).ok().and_then(|b| serde_json::from_slice(&b).ok());
        let (arch, weights, mults, steps, time) = match &record {
            Some(r) => (
                r.architecture.clone(),
                r.weights.to_string(),
                r.multiplies.to_string(),
                r.steps.to_string(),
                format!("{:.1}", r.wall_clock_s),
            ),
            None => ("absent".into(), "-".into(), "-".into(), "-".into(), "-".into()),
        };
        let (auc, dp, map) = match &summary {
            Some(s) => (format!("{:.4}", s.balanced_auc), format!("{:.3}", s.balanced_dprime), format!("{:.4}", s.balanced_map)),
            None => ("absent".into(), "absent".into(), "absent".into()),
        };
        out.push_str(&format!(
            "{name:<24} {arch:<28} {weights:>10} {mults:>12} {steps:>7} {time:>9} {auc:>7} {dp:>7} {map:>7}\n"
        ));
    }
    for table in ["label_sweep.csv", "size_sweep.csv"] {
        if let Ok(text) = fs::read_to_string(dir.join(table)) {
            out.push_str(&format!("\n{table}\n{text}"));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_tracks_config() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig::default().with_seed(7);
        assert_eq!(a.digest(), ExperimentConfig::default().digest());
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
        let back = ExperimentConfig::from_json(&a.to_json()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_json(r#"{"width_factor": 0}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"unknown": 1}"#).is_err());
        let c = ExperimentConfig { split: SplitConfig { validation_fraction: 0.5, test_fraction: 0.5, seed: 1 }, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn split_fractions_roughly_hold() {
        let c = SplitConfig::default();
        let mut counts = [0usize; 3];
        for i in 0..5000 {
            counts[split_of(&c, &format!("clip{i:05}")) as usize] += 1;
        }
        assert!((counts[0] as f64 / 5000.0 - 0.7).abs() < 0.03, "{counts:?}");
        assert!((counts[2] as f64 / 5000.0 - 0.2).abs() < 0.03, "{counts:?}");
    }

    #[test]
    fn empty_report_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let text = report(dir.path()).unwrap();
        assert!(text.contains("resnet50"));
        assert!(text.contains("runs"));
    }
}
