//! Synthetic weakly labeled corpus: events of eight acoustically distinct
//! classes placed in low-level noise, labeled only at the clip level.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::frontend::{LabelId, SAMPLE_RATE_HZ};
use crate::manifest::{Manifest, ManifestRecord};
use crate::vocab::{LabelVocabulary, VocabEntry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventClass {
    ToneLow,
    ToneMid,
    ToneHigh,
    WhiteNoise,
    FilteredNoise,
    ChirpUp,
    ChirpDown,
    AmTone,
}

impl EventClass {
    pub const ALL: [EventClass; 8] = [
        EventClass::ToneLow,
        EventClass::ToneMid,
        EventClass::ToneHigh,
        EventClass::WhiteNoise,
        EventClass::FilteredNoise,
        EventClass::ChirpUp,
        EventClass::ChirpDown,
        EventClass::AmTone,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EventClass::ToneLow => "tone-low",
            EventClass::ToneMid => "tone-mid",
            EventClass::ToneHigh => "tone-high",
            EventClass::WhiteNoise => "white-noise",
            EventClass::FilteredNoise => "filtered-noise",
            EventClass::ChirpUp => "chirp-up",
            EventClass::ChirpDown => "chirp-down",
            EventClass::AmTone => "am-tone",
        }
    }

    /// Stable label id: position in [`EventClass::ALL`].
    pub fn label_id(&self) -> LabelId {
        LabelId(Self::ALL.iter().position(|c| c == self).expect("listed") as u32)
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_clips: usize,
    pub clip_duration_s: (f64, f64),
    pub classes: Vec<EventClass>,
    pub events_per_clip: (usize, usize),
    pub event_duration_s: (f64, f64),
    /// Event level relative to the background noise.
    pub snr_db: f64,
    /// Minimum share of every clip that contains no labeled event.
    pub uninformative_fraction: f64,
    pub background_rms: f64,
    /// Prefix for generated clip ids.
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            num_clips: 2000,
            clip_duration_s: (3.0, 6.0),
            classes: EventClass::ALL.to_vec(),
            events_per_clip: (1, 3),
            event_duration_s: (0.5, 2.0),
            snr_db: 12.0,
            uninformative_fraction: 0.25,
            background_rms: 0.02,
            id_prefix: "clip".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let (d0, d1) = self.clip_duration_s;
        let (e0, e1) = self.event_duration_s;
        if !(d0 > 0.0 && d1 >= d0 && e0 > 0.0 && e1 >= e0) {
            return bad(format!("duration ranges must be positive and ordered: clip {d0}..{d1}, event {e0}..{e1}"));
        }
        if !(0.0..1.0).contains(&self.uninformative_fraction) {
            return bad(format!("uninformative_fraction {} outside [0, 1)", self.uninformative_fraction));
        }
        let (n0, n1) = self.events_per_clip;
        if n0 == 0 || n1 < n0 {
            return bad(format!("events_per_clip {n0}..{n1} must be ordered and at least 1"));
        }
        if self.classes.is_empty() {
            return bad("no event classes".into());
        }
        if !(self.background_rms > 0.0 && self.background_rms < 0.5) || !self.snr_db.is_finite() {
            return bad("background_rms must be in (0, 0.5) and snr_db finite".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub class: EventClass,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEvents {
    pub clip_id: String,
    pub duration_s: f64,
    pub events: Vec<EventRecord>,
}

impl ClipEvents {
    pub fn labels(&self) -> BTreeSet<EventClass> {
        self.events.iter().map(|e| e.class).collect()
    }

    /// Seconds covered by no event.
    pub fn event_free_s(&self) -> f64 {
        let mut spans: Vec<(f64, f64)> = self.events.iter().map(|e| (e.start_s, e.end_s)).collect();
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut covered = 0.0;
        let mut cur: Option<(f64, f64)> = None;
        for (s, e) in spans {
            cur = match cur {
                Some((cs, ce)) if s <= ce => Some((cs, ce.max(e))),
                Some((cs, ce)) => {
                    covered += ce - cs;
                    Some((s, e))
                }
                None => Some((s, e)),
            };
        }
        if let Some((cs, ce)) = cur {
            covered += ce - cs;
        }
        self.duration_s - covered
    }
}

#[derive(Clone, Debug)]
pub struct SynthClip {
    pub events: ClipEvents,
    pub samples: Vec<f32>,
}

/// Per-clip seed derived from the corpus seed and the clip id.
pub fn clip_seed(seed: u64, clip_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(clip_id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.gen_range(range.0..range.1)
    } else {
        range.0
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// Raw event waveform before level normalization.
fn event_signal(class: EventClass, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE_HZ as f64;
    let phase0 = rng.gen_range(0.0..2.0 * PI);
    let tone = |f: f64| (0..n).map(|i| (2.0 * PI * f * i as f64 / sr + phase0).sin()).collect::<Vec<_>>();
    let chirp = |f0: f64, f1: f64| {
        let dur = n as f64 / sr;
        let k = (f1 - f0) / dur;
        (0..n)
            .map(|i| {
                let t = i as f64 / sr;
                (2.0 * PI * (f0 * t + 0.5 * k * t * t) + phase0).sin()
            })
            .collect::<Vec<_>>()
    };
    match class {
        EventClass::ToneLow => tone(rng.gen_range(300.0..500.0)),
        EventClass::ToneMid => tone(rng.gen_range(900.0..1400.0)),
        EventClass::ToneHigh => tone(rng.gen_range(2500.0..4000.0)),
        EventClass::WhiteNoise => (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        EventClass::FilteredNoise => {
            let f0 = rng.gen_range(4500.0..6000.0);
            let w0 = 2.0 * PI * f0 / sr;
            let alpha = w0.sin() / (2.0 * 2.0);
            let a0 = 1.0 + alpha;
            let (b0, b2, a1, a2) = (alpha / a0, -alpha / a0, -2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
            let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
            (0..n)
                .map(|_| {
                    let x: f64 = rng.sample(StandardNormal);
                    let y = b0 * x + b2 * x2 - a1 * y1 - a2 * y2;
                    x2 = x1;
                    x1 = x;
                    y2 = y1;
                    y1 = y;
                    y
                })
                .collect()
        }
        EventClass::ChirpUp => chirp(rng.gen_range(400.0..600.0), rng.gen_range(2800.0..3500.0)),
        EventClass::ChirpDown => chirp(rng.gen_range(2800.0..3500.0), rng.gen_range(400.0..600.0)),
        EventClass::AmTone => {
            let f = rng.gen_range(1800.0..2200.0);
            let m = rng.gen_range(6.0..10.0);
            (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    (0.5 + 0.5 * (2.0 * PI * m * t).sin()) * (2.0 * PI * f * t + phase0).sin()
                })
                .collect()
        }
    }
}

/// Generates one clip; fully determined by `(config.seed, clip_id)`.
pub fn synth_clip(config: &SynthConfig, clip_id: &str) -> SynthClip {
    let sr = SAMPLE_RATE_HZ as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(clip_seed(config.seed, clip_id));
    let duration = uniform(&mut rng, config.clip_duration_s);
    let n = (duration * sr).round() as usize;
    let duration_s = n as f64 / sr;
    let mut out: Vec<f64> = (0..n).map(|_| config.background_rms * rng.sample::<f64, _>(StandardNormal)).collect();

    let count = rng.gen_range(config.events_per_clip.0..=config.events_per_clip.1);
    let budget = (1.0 - config.uninformative_fraction) * duration_s;
    let mut lengths: Vec<f64> = (0..count).map(|_| uniform(&mut rng, config.event_duration_s)).collect();
    let total: f64 = lengths.iter().sum();
    if total > budget {
        lengths.iter_mut().for_each(|l| *l *= budget / total);
    }
    let slack = duration_s - lengths.iter().sum::<f64>();
    let mut cuts: Vec<f64> = (0..count).map(|_| rng.gen_range(0.0..=1.0) * slack).collect();
    cuts.sort_by(f64::total_cmp);

    let level = config.background_rms * 10f64.powf(config.snr_db / 20.0);
    let mut events = Vec::with_capacity(count);
    let mut consumed = 0.0;
    for (len, cut) in lengths.iter().zip(&cuts) {
        let class = config.classes[rng.gen_range(0..config.classes.len())];
        let start = ((cut + consumed) * sr).floor() as usize;
        let len_samples = ((len * sr).floor() as usize).min(n.saturating_sub(start));
        consumed += len;
        if len_samples < 2 {
            continue;
        }
        let gain = level * 10f64.powf(rng.gen_range(-3.0..3.0) / 20.0);
        let mut sig = event_signal(class, len_samples, &mut rng);
        let norm = rms(&sig).max(1e-12);
        let fade = (0.01 * sr) as usize;
        for (i, v) in sig.iter_mut().enumerate() {
            let edge = i.min(len_samples - 1 - i);
            let env = if edge < fade { 0.5 - 0.5 * (PI * edge as f64 / fade as f64).cos() } else { 1.0 };
            *v *= gain * env / norm;
        }
        for (o, v) in out[start..start + len_samples].iter_mut().zip(&sig) {
            *o += v;
        }
        events.push(EventRecord { class, start_s: start as f64 / sr, end_s: (start + len_samples) as f64 / sr });
    }
    let samples = out.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect();
    SynthClip { events: ClipEvents { clip_id: clip_id.to_string(), duration_s, events }, samples }
}

pub fn clip_ids(config: &SynthConfig) -> Vec<String> {
    (0..config.num_clips).map(|i| format!("{}{i:05}", config.id_prefix)).collect()
}

/// Vocabulary over the configured classes with frequencies over `events`.
pub fn vocabulary_for(events: &[ClipEvents]) -> Result<LabelVocabulary> {
    let names: BTreeMap<LabelId, String> =
        EventClass::ALL.iter().map(|c| (c.label_id(), c.name().to_string())).collect();
    let labels: Vec<BTreeSet<LabelId>> =
        events.iter().map(|e| e.labels().into_iter().map(|c| c.label_id()).collect()).collect();
    LabelVocabulary::from_clips(&names, labels.iter())
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub manifest_path: PathBuf,
    pub vocabulary_path: PathBuf,
    pub events_path: PathBuf,
    pub manifest: Manifest,
    pub vocabulary: LabelVocabulary,
    pub events: Vec<ClipEvents>,
}

/// Writes `audio/<id>.wav`, `manifest.jsonl`, `vocabulary.csv` and
/// `events.jsonl` under `out_dir`.
pub fn synth_dataset(config: &SynthConfig, out_dir: &Path) -> Result<SynthOutput> {
    config.validate()?;
    let audio_dir = out_dir.join("audio");
    std::fs::create_dir_all(&audio_dir)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", audio_dir.display())))?;
    let events: Vec<ClipEvents> = clip_ids(config)
        .par_iter()
        .map(|id| {
            let clip = synth_clip(config, id);
            crate::wav::write_wav(&audio_dir.join(format!("{id}.wav")), &clip.samples)?;
            Ok(clip.events)
        })
        .collect::<Result<_>>()?;
    let records = events
        .iter()
        .map(|e| ManifestRecord {
            clip_id: e.clip_id.clone(),
            path: PathBuf::from("audio").join(format!("{}.wav", e.clip_id)),
            labels: e.labels().iter().map(|c| c.name().to_string()).collect(),
        })
        .collect();
    let manifest = Manifest::new(records, out_dir)?;
    let vocabulary = vocabulary_for(&events)?;
    let manifest_path = out_dir.join("manifest.jsonl");
    let vocabulary_path = out_dir.join("vocabulary.csv");
    let events_path = out_dir.join("events.jsonl");
    manifest.write(&manifest_path)?;
    vocabulary.write_csv(std::fs::File::create(&vocabulary_path)?)?;
    let mut lines = String::new();
    for e in &events {
        lines.push_str(&serde_json::to_string(e)?);
        lines.push('\n');
    }
    std::fs::write(&events_path, lines)?;
    Ok(SynthOutput { manifest_path, vocabulary_path, events_path, manifest, vocabulary, events })
}

/// Vocabulary entries for every class, used when a corpus lacks some.
pub fn full_vocabulary_entries() -> Vec<VocabEntry> {
    EventClass::ALL.iter().map(|c| VocabEntry { name: c.name().into(), id: c.label_id(), frequency: 1 }).collect()
}
