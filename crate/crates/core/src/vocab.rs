//! Frequency-ranked label vocabularies.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::LabelId;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub name: String,
    pub id: LabelId,
    pub frequency: u64,
}

/// Labels ordered by descending frequency, ties by ascending id. The order
/// defines classifier output columns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVocabulary {
    entries: Vec<VocabEntry>,
    index: HashMap<LabelId, usize>,
}

impl LabelVocabulary {
    pub fn new(mut entries: Vec<VocabEntry>) -> Result<Self> {
        entries.sort_by(|a, b| b.frequency.cmp(&a.frequency).then(a.id.cmp(&b.id)));
        let mut index = HashMap::new();
        let mut names = BTreeSet::new();
        for (i, e) in entries.iter().enumerate() {
            if e.frequency == 0 {
                return Err(Error::Data(format!("label `{}` has zero frequency", e.name)));
            }
            if index.insert(e.id, i).is_some() || !names.insert(e.name.clone()) {
                return Err(Error::Data(format!("duplicate label `{}` ({})", e.name, e.id.0)));
            }
        }
        Ok(Self { entries, index })
    }

    /// Counts each label over `clips`; labels never seen are omitted.
    pub fn from_clips<'a>(
        names: &BTreeMap<LabelId, String>,
        clips: impl IntoIterator<Item = &'a BTreeSet<LabelId>>,
    ) -> Result<Self> {
        let mut counts: BTreeMap<LabelId, u64> = BTreeMap::new();
        for labels in clips {
            for l in labels {
                *counts.entry(*l).or_default() += 1;
            }
        }
        let entries = counts
            .into_iter()
            .map(|(id, frequency)| {
                let name = names.get(&id).cloned().ok_or_else(|| Error::Data(format!("label id {} has no name", id.0)))?;
                Ok(VocabEntry { name, id, frequency })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<LabelId> {
        self.entries.iter().map(|e| e.id).collect()
    }

    pub fn column(&self, id: LabelId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn contains(&self, id: LabelId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn name(&self, id: LabelId) -> Option<&str> {
        self.column(id).map(|i| self.entries[i].name.as_str())
    }

    pub fn by_name(&self, name: &str) -> Option<&VocabEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Keeps only labels in the vocabulary.
    pub fn project(&self, labels: &BTreeSet<LabelId>) -> BTreeSet<LabelId> {
        labels.iter().copied().filter(|l| self.contains(*l)).collect()
    }

    /// Multi-hot target over the vocabulary columns.
    pub fn multi_hot(&self, labels: &BTreeSet<LabelId>) -> Vec<f32> {
        let mut v = vec![0.0; self.len()];
        for l in labels {
            if let Some(c) = self.column(*l) {
                v[c] = 1.0;
            }
        }
        v
    }

    /// Vocabulary restricted to the `top_k` most frequent labels.
    pub fn restrict(&self, top_k: usize) -> Result<Self> {
        if top_k == 0 || top_k > self.len() {
            return Err(Error::Config(format!("top_k {top_k} outside 1..={}", self.len())));
        }
        Self::new(self.entries[..top_k].to_vec())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let entries = r.deserialize().collect::<std::result::Result<Vec<VocabEntry>, _>>()?;
        Self::new(entries)
    }
}

/// Restricts `vocab` and re-projects clip label sets; clips left without
/// labels are dropped. Returns the restricted vocabulary and surviving
/// `(index, projected labels)` pairs.
pub fn restrict_vocabulary(
    vocab: &LabelVocabulary,
    top_k: usize,
    clip_labels: &[BTreeSet<LabelId>],
) -> Result<(LabelVocabulary, Vec<(usize, BTreeSet<LabelId>)>)> {
    let sub = vocab.restrict(top_k)?;
    let kept = clip_labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| {
            let p = sub.project(l);
            (!p.is_empty()).then_some((i, p))
        })
        .collect();
    Ok((sub, kept))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eight() -> LabelVocabulary {
        let entries = (0..8u32)
            .map(|i| VocabEntry { name: format!("l{i}"), id: LabelId(i), frequency: 8 - i as u64 })
            .collect();
        LabelVocabulary::new(entries).unwrap()
    }

    #[test]
    fn top_three_by_frequency() {
        let v = eight().restrict(3).unwrap();
        assert_eq!(v.ids(), vec![LabelId(0), LabelId(1), LabelId(2)]);
        assert_eq!(eight().restrict(8).unwrap(), eight());
        assert!(eight().restrict(0).is_err());
        assert!(eight().restrict(9).is_err());
    }

    #[test]
    fn ties_break_by_id() {
        let e = |id, f| VocabEntry { name: format!("n{id}"), id: LabelId(id), frequency: f };
        let v = LabelVocabulary::new(vec![e(5, 2), e(3, 2), e(9, 7)]).unwrap();
        assert_eq!(v.ids(), vec![LabelId(9), LabelId(3), LabelId(5)]);
    }

    #[test]
    fn csv_round_trip() {
        let mut buf = Vec::new();
        eight().write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("name,id,frequency\n"));
        assert_eq!(LabelVocabulary::read_csv(&buf[..]).unwrap(), eight());
    }

    #[test]
    fn restriction_drops_unlabeled_clips() {
        let clips: Vec<BTreeSet<LabelId>> =
            vec![[LabelId(0), LabelId(7)].into(), [LabelId(6)].into(), BTreeSet::new()];
        let (sub, kept) = restrict_vocabulary(&eight(), 2, &clips).unwrap();
        assert_eq!(sub.len(), 2);
        assert_eq!(kept, vec![(0, [LabelId(0)].into())]);
    }
}
