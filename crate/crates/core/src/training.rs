//! Weak-label training: global patch sampling, Adam steps on sigmoid
//! cross-entropy, step-decay learning rate, validation and checkpoints.

use std::collections::BTreeSet;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use weakaudio_tensor::checkpoint::{self, Checkpoint};
use weakaudio_tensor::{AdamConfig, AdamState, Graph, Tensor};

use crate::architectures::{ArchitectureSpec, Mode, Model};
use crate::error::{Error, Result};
use crate::frontend::{LabelId, LogMelPatch, NUM_BANDS, PATCH_FRAMES};
use crate::matrix::Matrix;
use crate::metrics::{self, ClipScores, MetricsReport};
use crate::vocab::{LabelVocabulary, VocabEntry};

pub const PATCH_LEN: usize = PATCH_FRAMES * NUM_BANDS;
/// Patches per inference forward pass.
pub const SCORING_CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreClip {
    pub clip_id: String,
    pub labels: BTreeSet<LabelId>,
    pub patches: Range<usize>,
}

/// In-memory pool of classifier inputs (log-mel patches, or any fixed
/// `[h, w, c]` item); each clip's items are contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchStore {
    item_shape: (usize, usize, usize),
    data: Vec<f32>,
    patch_clip: Vec<u32>,
    clips: Vec<StoreClip>,
}

impl Default for PatchStore {
    fn default() -> Self {
        Self::empty((PATCH_FRAMES, NUM_BANDS, 1))
    }
}

impl PatchStore {
    pub fn empty(item_shape: (usize, usize, usize)) -> Self {
        Self { item_shape, data: Vec::new(), patch_clip: Vec::new(), clips: Vec::new() }
    }

    pub fn item_shape(&self) -> (usize, usize, usize) {
        self.item_shape
    }

    pub fn item_len(&self) -> usize {
        self.item_shape.0 * self.item_shape.1 * self.item_shape.2
    }

    /// Appends one clip's items (`items.len()` must be a multiple of the item length).
    pub fn push_clip(&mut self, clip_id: impl Into<String>, labels: BTreeSet<LabelId>, items: &[f32]) -> Result<()> {
        let len = self.item_len();
        if items.is_empty() || items.len() % len != 0 {
            return Err(Error::Data(format!("{} values is not a whole number of {len}-value items", items.len())));
        }
        let start = self.patch_clip.len();
        self.data.extend_from_slice(items);
        self.patch_clip.extend(std::iter::repeat(self.clips.len() as u32).take(items.len() / len));
        self.clips.push(StoreClip { clip_id: clip_id.into(), labels, patches: start..self.patch_clip.len() });
        Ok(())
    }

    /// Groups patches by clip in order of first appearance.
    pub fn from_patches(patches: Vec<LogMelPatch>) -> Result<Self> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: std::collections::HashMap<String, Vec<LogMelPatch>> = Default::default();
        for p in patches {
            if p.values.len() != PATCH_LEN {
                return Err(Error::Data(format!("patch of clip `{}` has {} values", p.clip_id, p.values.len())));
            }
            if !groups.contains_key(&p.clip_id) {
                order.push(p.clip_id.clone());
            }
            groups.entry(p.clip_id.clone()).or_default().push(p);
        }
        let mut store = PatchStore::default();
        for id in order {
            let mut ps = groups.remove(&id).expect("grouped");
            ps.sort_by_key(|p| p.patch_index);
            let labels = ps[0].labels.clone();
            let values: Vec<f32> = ps.iter().flat_map(|p| p.values.iter().copied()).collect();
            store.push_clip(id, labels, &values)?;
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.patch_clip.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patch_clip.is_empty()
    }

    pub fn clips(&self) -> &[StoreClip] {
        &self.clips
    }

    pub fn patch(&self, i: usize) -> &[f32] {
        let len = self.item_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn clip_of(&self, patch: usize) -> &StoreClip {
        &self.clips[self.patch_clip[patch] as usize]
    }

    pub fn clip(&self, clip_id: &str) -> Option<&StoreClip> {
        self.clips.iter().find(|c| c.clip_id == clip_id)
    }

    /// Clips for which `keep` returns a label set; patches are copied.
    pub fn select(&self, mut keep: impl FnMut(&StoreClip) -> Option<BTreeSet<LabelId>>) -> Self {
        let len = self.item_len();
        let mut out = PatchStore::empty(self.item_shape);
        for clip in &self.clips {
            if let Some(labels) = keep(clip) {
                let items = &self.data[clip.patches.start * len..clip.patches.end * len];
                out.push_clip(clip.clip_id.clone(), labels, items).expect("whole items");
            }
        }
        out
    }

    /// Training view: labels projected on `vocab`, clips left empty dropped.
    pub fn restrict_for_training(&self, vocab: &LabelVocabulary) -> Self {
        self.select(|c| {
            let p = vocab.project(&c.labels);
            (!p.is_empty()).then_some(p)
        })
    }

    /// Items `ids` stacked as `[n, h, w, c]`.
    pub fn batch_tensor(&self, ids: impl IntoIterator<Item = usize>) -> Tensor<f32> {
        let mut data = Vec::new();
        for i in ids {
            data.extend_from_slice(self.patch(i));
        }
        let n = data.len() / self.item_len();
        let (h, w, c) = self.item_shape;
        Tensor::new(vec![n, h, w, c], data).expect("whole items")
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub patch_ids: Vec<usize>,
    pub inputs: Tensor<f32>,
    pub targets: Tensor<f32>,
}

/// Uniform draws with replacement over every patch in the store.
pub fn sample_minibatch(store: &PatchStore, vocab: &LabelVocabulary, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<Batch> {
    if store.is_empty() {
        return Err(Error::Data("cannot sample from an empty patch store".into()));
    }
    let patch_ids: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..store.len())).collect();
    let mut targets = Vec::with_capacity(batch_size * vocab.len());
    for &i in &patch_ids {
        targets.extend(vocab.multi_hot(&store.clip_of(i).labels));
    }
    Ok(Batch {
        inputs: store.batch_tensor(patch_ids.iter().copied()),
        targets: Tensor::new(vec![batch_size, vocab.len()], targets)?,
        patch_ids,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    /// Step at which the rate is divided by `lr_decay_factor`; `None` disables decay.
    pub lr_decay_step: Option<u64>,
    pub max_steps: u64,
    pub seed: u64,
    /// Top-k labels kept; `None` keeps the whole vocabulary.
    pub vocabulary_size: Option<usize>,
    pub validation_interval: u64,
    pub validation_clips: usize,
    pub log_interval: u64,
    pub checkpoint_interval: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 3e-5,
            lr_decay_factor: 10.0,
            lr_decay_step: None,
            max_steps: 3000,
            seed: 42,
            vocabulary_size: None,
            validation_interval: 500,
            validation_clips: 512,
            log_interval: 50,
            checkpoint_interval: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 || self.max_steps == 0 || self.validation_interval == 0 || self.log_interval == 0 {
            return fail("batch_size, max_steps, validation_interval and log_interval must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be finite and non-negative");
        }
        if !(self.lr_decay_factor > 0.0) {
            return fail("lr_decay_factor must be positive");
        }
        if matches!(self.lr_decay_step, Some(s) if s == 0 || s > self.max_steps) {
            return fail("lr_decay_step must be in 1..=max_steps");
        }
        if self.vocabulary_size == Some(0) || self.checkpoint_interval == Some(0) {
            return fail("vocabulary_size and checkpoint_interval must be positive when set");
        }
        Ok(())
    }
}

/// Base rate before the decay step, divided by the decay factor from it on.
pub fn lr_schedule(step: u64, config: &TrainConfig) -> f64 {
    match config.lr_decay_step {
        Some(d) if step >= d => config.learning_rate / config.lr_decay_factor,
        _ => config.learning_rate,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub val_acc: Option<f64>,
    pub val_map: Option<f64>,
}

pub fn write_series_csv<W: Write>(rows: &[SeriesRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "loss", "lr", "val_acc", "val_map"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([r.step.to_string(), r.loss.to_string(), r.lr.to_string(), opt(r.val_acc), opt(r.val_map)])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub one_best_accuracy: f64,
    pub map: f64,
}

/// Everything a checkpoint needs besides parameters and moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerMeta {
    pub step: u64,
    pub rng_seed: [u8; 32],
    /// ChaCha word position, as a decimal string (u128).
    pub rng_word_pos: String,
    pub running_loss: f64,
    pub running_count: u64,
    pub config: TrainConfig,
    pub vocabulary: Vec<VocabEntry>,
    pub spec: ArchitectureSpec,
}

pub struct Trainer {
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
    pub rng: ChaCha8Rng,
    pub step: u64,
    pub running_loss: f64,
    pub running_count: u64,
    pub config: TrainConfig,
    pub vocab: LabelVocabulary,
}

impl Trainer {
    /// Fresh model; weights from `seed`, sampling stream from `seed + 1`.
    pub fn new(spec: ArchitectureSpec, vocab: LabelVocabulary, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if spec.num_labels != vocab.len() {
            return Err(Error::Config(format!(
                "architecture has {} outputs for a {}-label vocabulary",
                spec.num_labels,
                vocab.len()
            )));
        }
        let model = Model::new(spec, config.seed)?;
        let adam = AdamState::new(model.params(), config.learning_rate, AdamConfig::default());
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1)),
            model,
            adam,
            step: 0,
            running_loss: 0.0,
            running_count: 0,
            config,
            vocab,
        })
    }

    /// One forward/backward/Adam step; returns the batch loss.
    pub fn train_step(&mut self, batch: Batch) -> Result<f64> {
        self.adam.learning_rate = lr_schedule(self.step, &self.config);
        self.model.params_mut().zero_grad();
        let mut g = Graph::new();
        let x = g.input(batch.inputs);
        let out = self.model.forward(&mut g, x, Mode::Train)?;
        let loss = g.sigmoid_bce(out.logits, batch.targets)?;
        let value = g.value(loss).item() as f64;
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "loss is {value} at step {} (batch patches {:?})",
                self.step, batch.patch_ids
            )));
        }
        g.backward(loss, self.model.params_mut())?;
        self.adam.step(self.model.params_mut()).map_err(|e| {
            Error::Numeric(format!("{e} at step {} (batch patches {:?})", self.step, batch.patch_ids))
        })?;
        self.model.apply_bn_updates(&out.bn_updates);
        self.step += 1;
        self.running_loss += value;
        self.running_count += 1;
        Ok(value)
    }

    fn take_running_loss(&mut self) -> f64 {
        let mean = if self.running_count == 0 { f64::NAN } else { self.running_loss / self.running_count as f64 };
        self.running_loss = 0.0;
        self.running_count = 0;
        mean
    }

    /// Trains up to `config.max_steps`, appending series rows.
    pub fn run(
        &mut self,
        train: &PatchStore,
        validation: Option<&PatchStore>,
        checkpoint_path: Option<&Path>,
        series: &mut Vec<SeriesRow>,
    ) -> Result<()> {
        while self.step < self.config.max_steps {
            let batch = sample_minibatch(train, &self.vocab, self.config.batch_size, &mut self.rng)?;
            self.train_step(batch)?;
            let at_val = self.step % self.config.validation_interval == 0 || self.step == self.config.max_steps;
            if at_val || self.step % self.config.log_interval == 0 {
                let lr = lr_schedule(self.step - 1, &self.config);
                let (val_acc, val_map) = match (at_val, validation) {
                    (true, Some(v)) => {
                        let r = validate(&self.model, &self.vocab, v)?;
                        (Some(r.one_best_accuracy), Some(r.map))
                    }
                    _ => (None, None),
                };
                let loss = self.take_running_loss();
                log::info!("step {} loss {loss:.5} lr {lr:e}", self.step);
                series.push(SeriesRow { step: self.step, loss, lr, val_acc, val_map });
            }
            if let (Some(every), Some(path)) = (self.config.checkpoint_interval, checkpoint_path) {
                if self.step % every == 0 {
                    self.save(path)?;
                }
            }
        }
        Ok(())
    }

    pub fn meta(&self) -> TrainerMeta {
        TrainerMeta {
            step: self.step,
            rng_seed: self.rng.get_seed(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            running_loss: self.running_loss,
            running_count: self.running_count,
            config: self.config.clone(),
            vocabulary: self.vocab.entries().to_vec(),
            spec: self.model.spec().clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let trailer = serde_json::to_vec(&self.meta())?;
        checkpoint::save(path, &self.model.spec().digest(), self.model.params(), Some(&self.adam), Some(&trailer))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint<f32> = checkpoint::load(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let trailer = ck.trailer.ok_or_else(|| Error::Data("checkpoint has no trainer metadata".into()))?;
        let meta: TrainerMeta = serde_json::from_slice(&trailer)?;
        if meta.spec.digest() != ck.digest {
            return Err(Error::Data("checkpoint architecture digest mismatch".into()));
        }
        let model = Model::from_params(meta.spec, ck.params)?;
        let adam = ck.optimizer.ok_or_else(|| Error::Data("checkpoint has no optimizer state".into()))?;
        let mut rng = ChaCha8Rng::from_seed(meta.rng_seed);
        rng.set_word_pos(meta.rng_word_pos.parse().map_err(|_| Error::Data("bad rng position".into()))?);
        Ok(Self {
            model,
            adam,
            rng,
            step: meta.step,
            running_loss: meta.running_loss,
            running_count: meta.running_count,
            config: meta.config,
            vocab: LabelVocabulary::new(meta.vocabulary)?,
        })
    }
}

/// Loads a model (parameters, spec, vocabulary) for inference.
pub fn load_model(path: &Path) -> Result<(Model<f32>, LabelVocabulary)> {
    let t = Trainer::load(path)?;
    Ok((t.model, t.vocab))
}

/// Scores every patch of one clip, `[P x C]`.
pub fn score_clip_patches(model: &Model<f32>, store: &PatchStore, clip: &StoreClip) -> Result<Matrix> {
    let cols = model.spec().num_labels;
    let mut data = Vec::with_capacity(clip.patches.len() * cols);
    let ids: Vec<usize> = clip.patches.clone().collect();
    for chunk in ids.chunks(SCORING_CHUNK) {
        let scores = model.predict(store.batch_tensor(chunk.iter().copied()))?;
        data.extend_from_slice(scores.data());
    }
    Ok(Matrix::from_vec(clip.patches.len(), cols, data))
}

/// Clip-level mean scores for every clip in `store` (parallel over clips).
pub fn score_clips(model: &Model<f32>, store: &PatchStore, keep_patches: bool) -> Result<Vec<ClipScores>> {
    store
        .clips()
        .par_iter()
        .map(|c| ClipScores::from_patches(c.clip_id.clone(), score_clip_patches(model, store, c)?, keep_patches))
        .collect()
}

/// Evaluates `model` (output columns = `columns`) on every clip of `store`
/// over the labels of `vocab`.
pub fn evaluate_store(
    model: &Model<f32>,
    columns: &[LabelId],
    store: &PatchStore,
    vocab: &LabelVocabulary,
    descriptor: &str,
) -> Result<MetricsReport> {
    let scores = score_clips(model, store, false)?;
    metrics::evaluate_scores(&scores, columns, |id| store.clip(id).map(|c| c.labels.clone()), vocab, descriptor)
}

/// Argmax column with ties resolved toward the lowest label id.
pub fn one_best(scores: &[f64], columns: &[LabelId]) -> Option<LabelId> {
    let mut best: Option<(f64, LabelId)> = None;
    for (&s, &l) in scores.iter().zip(columns) {
        best = match best {
            Some((bs, bl)) if bs > s || (bs == s && bl < l) => Some((bs, bl)),
            _ => Some((s, l)),
        };
    }
    best.map(|(_, l)| l)
}

pub fn validation_from_scores(scores: &[ClipScores], store: &PatchStore, vocab: &LabelVocabulary) -> Result<Validation> {
    if scores.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let columns = vocab.ids();
    let labels = |id: &str| store.clip(id).map(|c| c.labels.clone());
    let hits = scores
        .iter()
        .filter(|c| matches!((one_best(&c.scores, &columns), labels(&c.clip_id)), (Some(b), Some(l)) if l.contains(&b)))
        .count();
    let map = metrics::evaluate_scores(scores, &columns, labels, vocab, "validation").map(|r| r.balanced_map).unwrap_or(0.0);
    Ok(Validation { one_best_accuracy: hits as f64 / scores.len() as f64, map })
}

/// One-best accuracy and mAP on clip-level aggregated scores.
pub fn validate(model: &Model<f32>, vocab: &LabelVocabulary, validation: &PatchStore) -> Result<Validation> {
    let scores = score_clips(model, validation, false)?;
    validation_from_scores(&scores, validation, vocab)
}
