//! Embedding extraction and the embedding-vs-log-mel transfer comparison.

use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::architectures::{ArchitectureSpec, LayerSpec, Model};
use crate::error::{Error, Result};
use crate::frontend::{NUM_BANDS, PATCH_FRAMES};
use crate::metrics::MetricsReport;
use crate::training::{evaluate_store, PatchStore, SeriesRow, TrainConfig, Trainer, SCORING_CHUNK};
use crate::vocab::LabelVocabulary;

pub const MAGIC: &[u8; 4] = b"WEM1";
pub const VERSION: u32 = 1;
/// Frames per log-mel baseline input (200 ms).
pub const BASELINE_FRAMES: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub clip_id: String,
    pub patch_index: usize,
    pub vector: Vec<f32>,
}

/// Penultimate activations for every patch, in store order.
pub fn extract_embeddings(model: &Model<f32>, store: &PatchStore) -> Result<Vec<EmbeddingRecord>> {
    let dim = model.spec().embedding_dim()?;
    let per_clip: Vec<Vec<EmbeddingRecord>> = store
        .clips()
        .par_iter()
        .map(|clip| {
            let ids: Vec<usize> = clip.patches.clone().collect();
            let mut out = Vec::with_capacity(ids.len());
            for chunk in ids.chunks(SCORING_CHUNK) {
                let (_, emb) = model.predict_with_embedding(store.batch_tensor(chunk.iter().copied()))?;
                for row in emb.data().chunks_exact(dim) {
                    out.push(EmbeddingRecord { clip_id: clip.clip_id.clone(), patch_index: out.len(), vector: row.to_vec() });
                }
            }
            if out.iter().any(|r| r.vector.iter().any(|v| !v.is_finite())) {
                return Err(Error::Numeric(format!("non-finite embedding for clip `{}`", clip.clip_id)));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_clip.into_iter().flatten().collect())
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// `WEM1` | version | dimension, then per record: clip id (u32 length +
/// UTF-8), patch index u32, `dimension` f32 LE values.
pub fn write_embeddings_to(mut w: impl Write, dim: usize, records: &[EmbeddingRecord]) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION)?;
    put_u32(&mut w, dim as u32)?;
    for r in records {
        if r.vector.len() != dim {
            return Err(Error::Data(format!("embedding of length {} in a {dim}-dimensional file", r.vector.len())));
        }
        put_u32(&mut w, r.clip_id.len() as u32)?;
        w.write_all(r.clip_id.as_bytes())?;
        put_u32(&mut w, r.patch_index as u32)?;
        let bytes: Vec<u8> = r.vector.iter().flat_map(|v| v.to_le_bytes()).collect();
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings_from(mut r: impl Read) -> Result<(usize, Vec<EmbeddingRecord>)> {
    let bad = |m: &str| Error::Data(format!("embedding file: {m}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("too short"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    if get_u32(&mut r)? != VERSION {
        return Err(bad("unsupported version"));
    }
    let dim = get_u32(&mut r)? as usize;
    let mut records = Vec::new();
    loop {
        let id_len = match get_u32(&mut r) {
            Ok(n) => n as usize,
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        };
        let mut rest = vec![0u8; id_len + 4 + 4 * dim];
        r.read_exact(&mut rest).map_err(|_| bad("truncated record"))?;
        let clip_id = String::from_utf8(rest[..id_len].to_vec()).map_err(|_| bad("clip id is not UTF-8"))?;
        let patch_index = u32::from_le_bytes(rest[id_len..id_len + 4].try_into().expect("4 bytes")) as usize;
        let vector = rest[id_len + 4..].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        records.push(EmbeddingRecord { clip_id, patch_index, vector });
    }
    Ok((dim, records))
}

pub fn write_embeddings(path: &Path, dim: usize, records: &[EmbeddingRecord]) -> Result<()> {
    write_embeddings_to(BufWriter::new(std::fs::File::create(path)?), dim, records)
}

pub fn read_embeddings(path: &Path) -> Result<(usize, Vec<EmbeddingRecord>)> {
    read_embeddings_from(BufReader::new(std::fs::File::open(path)?))
}

/// Embedding items (`[1, 1, D]`) carrying the labels of `store`'s clips.
pub fn embedding_store(records: &[EmbeddingRecord], dim: usize, store: &PatchStore) -> Result<PatchStore> {
    let mut out = PatchStore::empty((1, 1, dim));
    let mut i = 0;
    while i < records.len() {
        let id = &records[i].clip_id;
        let mut j = i;
        let mut values = Vec::new();
        while j < records.len() && &records[j].clip_id == id {
            if records[j].vector.len() != dim {
                return Err(Error::Data(format!("embedding dimension {} != {dim}", records[j].vector.len())));
            }
            values.extend_from_slice(&records[j].vector);
            j += 1;
        }
        let clip = store.clip(id).ok_or_else(|| Error::Data(format!("no labels for clip `{id}`")))?;
        out.push_clip(id.clone(), clip.labels.clone(), &values)?;
        i = j;
    }
    Ok(out)
}

/// Non-overlapping 20-frame x 64-band slices of every 96-frame patch.
pub fn logmel_subpatch_store(store: &PatchStore) -> Result<PatchStore> {
    if store.item_shape() != (PATCH_FRAMES, NUM_BANDS, 1) {
        return Err(Error::Data("log-mel baseline needs 96x64 patches".into()));
    }
    let per_patch = PATCH_FRAMES / BASELINE_FRAMES;
    let sub_len = BASELINE_FRAMES * NUM_BANDS;
    let mut out = PatchStore::empty((BASELINE_FRAMES, NUM_BANDS, 1));
    for clip in store.clips() {
        let mut values = Vec::with_capacity(clip.patches.len() * per_patch * sub_len);
        for p in clip.patches.clone() {
            values.extend_from_slice(&store.patch(p)[..per_patch * sub_len]);
        }
        out.push_clip(clip.clip_id.clone(), clip.labels.clone(), &values)?;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self { hidden_units: 512, learning_rate: 1e-3, batch_size: 64, steps: 1000, seed: 7 }
    }
}

/// Flatten, one hidden ReLU layer, sigmoid output.
pub fn feature_classifier_spec(input_shape: (usize, usize, usize), hidden: usize, num_labels: usize) -> Result<ArchitectureSpec> {
    let spec = ArchitectureSpec {
        name: format!("transfer-mlp{hidden}"),
        input_shape,
        layers: vec![
            LayerSpec::Flatten { name: "flatten".into() },
            LayerSpec::dense("hidden", hidden),
            LayerSpec::relu("hidden_relu"),
            LayerSpec::dense("logits", num_labels),
            LayerSpec::Sigmoid { name: "output".into() },
        ],
        num_labels,
        bottleneck_units: None,
    };
    spec.records()?;
    Ok(spec)
}

#[derive(Clone, Debug)]
pub struct TransferRun {
    pub model: Model<f32>,
    pub report: MetricsReport,
    pub series: Vec<SeriesRow>,
}

/// Trains the fixed transfer classifier on `train` items and evaluates on `test`.
pub fn train_feature_classifier(
    train: &PatchStore,
    test: &PatchStore,
    vocab: &LabelVocabulary,
    config: &TransferConfig,
    descriptor: &str,
) -> Result<TransferRun> {
    if train.item_shape() != test.item_shape() {
        return Err(Error::Data(format!("train items {:?} vs test items {:?}", train.item_shape(), test.item_shape())));
    }
    let spec = feature_classifier_spec(train.item_shape(), config.hidden_units, vocab.len())?;
    let tc = TrainConfig {
        batch_size: config.batch_size,
        learning_rate: config.learning_rate,
        max_steps: config.steps,
        seed: config.seed,
        validation_interval: config.steps,
        log_interval: (config.steps / 10).max(1),
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(spec, vocab.clone(), tc)?;
    let mut series = Vec::new();
    trainer.run(&train.restrict_for_training(vocab), None, None, &mut series)?;
    let report = evaluate_store(&trainer.model, &vocab.ids(), test, vocab, descriptor)?;
    Ok(TransferRun { model: trainer.model, report, series })
}

pub fn train_embedding_classifier(
    train: &[EmbeddingRecord],
    test: &[EmbeddingRecord],
    dim: usize,
    labels: &PatchStore,
    vocab: &LabelVocabulary,
    config: &TransferConfig,
) -> Result<TransferRun> {
    let train = embedding_store(train, dim, labels)?;
    let test = embedding_store(test, dim, labels)?;
    train_feature_classifier(&train, &test, vocab, config, "transfer/embedding")
}

pub fn train_logmel_baseline(train: &PatchStore, test: &PatchStore, vocab: &LabelVocabulary, config: &TransferConfig) -> Result<TransferRun> {
    train_feature_classifier(&logmel_subpatch_store(train)?, &logmel_subpatch_store(test)?, vocab, config, "transfer/logmel")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{LabelId, LogMelPatch};

    #[test]
    fn wem_round_trip() {
        let recs = vec![
            EmbeddingRecord { clip_id: "a".into(), patch_index: 0, vector: vec![1.0, -2.5, 3.0] },
            EmbeddingRecord { clip_id: "a".into(), patch_index: 1, vector: vec![0.0, 0.5, f32::MIN_POSITIVE] },
        ];
        let mut buf = Vec::new();
        write_embeddings_to(&mut buf, 3, &recs).unwrap();
        assert_eq!(&buf[..4], b"WEM1");
        assert_eq!(read_embeddings_from(&buf[..]).unwrap(), (3, recs));
        assert!(read_embeddings_from(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn subpatches_are_20_frame_slices() {
        let values: Vec<f32> = (0..PATCH_FRAMES * NUM_BANDS).map(|i| i as f32).collect();
        let patch = LogMelPatch { clip_id: "c".into(), patch_index: 0, start_time_s: 0.0, values, labels: [LabelId(1)].into() };
        let store = PatchStore::from_patches(vec![patch]).unwrap();
        let sub = logmel_subpatch_store(&store).unwrap();
        assert_eq!(sub.len(), 4);
        assert_eq!(sub.item_len(), 1280);
        assert_eq!(sub.patch(1)[0], (20 * 64) as f32);
        assert_eq!(sub.batch_tensor([3]).shape(), &[1, 20, 64, 1]);
    }
}
