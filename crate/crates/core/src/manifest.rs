//! Line-delimited clip manifests.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{LabelId, WaveformClip, SAMPLE_RATE_HZ};
use crate::vocab::LabelVocabulary;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub clip_id: String,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub labels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.clip_id.as_str()) {
                return Err(Error::Data(format!("duplicate clip id `{}` in manifest", r.clip_id)));
            }
        }
        Ok(Self { records, base_dir: base_dir.into() })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ManifestRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
            records.push(record);
        }
        Self::new(records, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn audio_path(&self, record: &ManifestRecord) -> PathBuf {
        if record.path.is_absolute() {
            record.path.clone()
        } else {
            self.base_dir.join(&record.path)
        }
    }

    /// Resolves label names; unknown names are a data error.
    pub fn label_ids(&self, record: &ManifestRecord, names: &BTreeMap<String, LabelId>) -> Result<BTreeSet<LabelId>> {
        record
            .labels
            .iter()
            .map(|n| {
                names.get(n).copied().ok_or_else(|| {
                    Error::Data(format!("clip `{}` has label `{n}` missing from the vocabulary", record.clip_id))
                })
            })
            .collect()
    }

    pub fn load_clip(&self, record: &ManifestRecord, vocab: &LabelVocabulary) -> Result<WaveformClip> {
        let names = vocab.entries().iter().map(|e| (e.name.clone(), e.id)).collect();
        let labels = self.label_ids(record, &names)?;
        let samples = crate::wav::read_wav(&self.audio_path(record))?;
        WaveformClip::new(record.clip_id.clone(), samples, SAMPLE_RATE_HZ, labels)
    }
}
