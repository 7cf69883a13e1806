//! Clip-level scoring and ranking metrics: AUC, d-prime, average precision,
//! balanced means, and the figure tables.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{LabelId, PATCH_SECONDS};
use crate::matrix::Matrix;
use crate::vocab::LabelVocabulary;

/// AUC clamp applied before the probit.
pub const DPRIME_EPSILON: f64 = 1e-12;
pub const DEFAULT_PER_CLASS: usize = 33;
pub const DEFAULT_TIMELINE_CLASSES: usize = 16;

fn poly(coeffs: &[f64; 8], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Inverse standard normal CDF (Wichura's AS241, about 1e-16 relative).
pub fn probit(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_6,
        1.331_416_678_917_843_8e2,
        1.971_590_950_306_551_3e3,
        1.373_169_376_550_946e4,
        4.592_195_393_154_987e4,
        6.726_577_092_700_87e4,
        3.343_057_558_358_813e4,
        2.509_080_928_730_122_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091e1,
        6.871_870_074_920_579e2,
        5.394_196_021_424_751e3,
        2.121_379_430_158_659_7e4,
        3.930_789_580_009_271e4,
        2.872_908_573_572_194_3e4,
        5.226_495_278_852_545e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5,
        4.630_337_846_156_545,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        2.417_807_251_774_506e-1,
        2.272_384_498_926_918_4e-2,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_8,
        1.676_384_830_183_803_8,
        6.897_673_349_851e-1,
        1.481_039_764_274_800_8e-1,
        1.519_866_656_361_645_7e-2,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_8e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        2.965_605_718_285_048_7e-1,
        2.653_218_952_657_612_4e-2,
        1.242_660_947_388_078_4e-3,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_88e-1,
        1.369_298_809_227_358e-1,
        1.487_536_129_085_061_5e-2,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_7e-15,
    ];
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = (-(if q < 0.0 { p } else { 1.0 - p }).ln()).sqrt();
    let v = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -v
    } else {
        v
    }
}

/// `sqrt(2) * probit(auc)` with the AUC clamped to `[eps, 1 - eps]`.
pub fn d_prime(auc: f64) -> f64 {
    std::f64::consts::SQRT_2 * probit(auc.clamp(DPRIME_EPSILON, 1.0 - DPRIME_EPSILON))
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Data(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("score {s} is not finite")));
    }
    Ok(())
}

/// Mann-Whitney AUC: P(pos > neg) + P(tie) / 2, computed exactly from
/// doubled mid-ranks and divided once.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuc(format!("{pos} positives and {neg} negatives")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Mid-rank of positions i..j (1-based), doubled: (i + 1) + j.
        let mid2 = (i + 1 + j) as u128;
        rank_sum2 += mid2 * order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        i = j;
    }
    let u2 = rank_sum2 - pos * (pos + 1);
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// Ranking order: descending score, ties by ascending item index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Mean over positives of precision at their rank; `None` without positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    check_inputs(scores, labels)?;
    let total = labels.iter().filter(|&&l| l).count();
    if total == 0 {
        return Ok(None);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in ranking(scores).iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(Some(sum / total as f64))
}

/// Per-class mean of patch scores `[P x C]`.
pub fn aggregate_clip(patch_scores: &Matrix) -> Result<Vec<f64>> {
    if patch_scores.rows() == 0 {
        return Err(Error::NoPatches);
    }
    let mut sums = vec![0.0f64; patch_scores.cols()];
    for r in 0..patch_scores.rows() {
        for (s, &v) in sums.iter_mut().zip(patch_scores.row(r)) {
            *s += v as f64;
        }
    }
    let n = patch_scores.rows() as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipScores {
    pub clip_id: String,
    /// Mean score per output column.
    pub scores: Vec<f64>,
    pub patch_scores: Option<Matrix>,
}

impl ClipScores {
    pub fn from_patches(clip_id: impl Into<String>, patch_scores: Matrix, keep_patches: bool) -> Result<Self> {
        let scores = aggregate_clip(&patch_scores)?;
        Ok(Self { clip_id: clip_id.into(), scores, patch_scores: keep_patches.then_some(patch_scores) })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalClip {
    pub clip_id: String,
    pub labels: BTreeSet<LabelId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub clips: Vec<EvalClip>,
    pub per_class: usize,
    pub seed: u64,
    /// Realized positive count per vocabulary label, in vocabulary order.
    pub positives: Vec<(LabelId, usize)>,
}

impl EvalSet {
    pub fn descriptor(&self) -> String {
        format!("balanced(per_class={}, seed={}, clips={})", self.per_class, self.seed, self.clips.len())
    }
}

/// Picks up to `per_class` positives per vocabulary label (all of them when
/// fewer exist). Selected clips serve as negatives for every other label.
pub fn build_balanced_eval(clips: &[EvalClip], vocab: &LabelVocabulary, per_class: usize, seed: u64) -> Result<EvalSet> {
    if per_class == 0 {
        return Err(Error::Config("per_class must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; clips.len()];
    let mut ids: Vec<LabelId> = vocab.ids();
    ids.sort();
    for label in &ids {
        let mut candidates: Vec<usize> = (0..clips.len()).filter(|&i| clips[i].labels.contains(label)).collect();
        candidates.shuffle(&mut rng);
        for &i in candidates.iter().take(per_class) {
            chosen[i] = true;
        }
    }
    let selected: Vec<EvalClip> = clips.iter().zip(&chosen).filter(|(_, &c)| c).map(|(c, _)| c.clone()).collect();
    let positives = vocab
        .ids()
        .into_iter()
        .map(|l| (l, selected.iter().filter(|c| c.labels.contains(&l)).count()))
        .collect();
    Ok(EvalSet { clips: selected, per_class, seed, positives })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: LabelId,
    pub name: String,
    pub prior: f64,
    pub positives: usize,
    pub auc: f64,
    pub d_prime: f64,
    /// The AUC hit the clamp before the probit.
    pub d_prime_clamped: bool,
    pub average_precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    pub balanced_auc: f64,
    /// `d_prime(balanced_auc)`.
    pub balanced_dprime: f64,
    /// Unweighted mean of per-class d-prime.
    pub mean_class_dprime: f64,
    pub balanced_map: f64,
    pub vocab_size: usize,
    pub num_clips: usize,
    /// Labels without both positives and negatives in the evaluation set.
    pub excluded: Vec<LabelId>,
    pub eval_set: String,
}

#[derive(Serialize)]
struct Summary<'a> {
    balanced_auc: f64,
    balanced_dprime: f64,
    balanced_map: f64,
    vocab_size: usize,
    mean_class_dprime: f64,
    num_clips: usize,
    evaluated_classes: usize,
    excluded: &'a [LabelId],
    eval_set: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    config_digest: Option<&'a str>,
}

/// Scores each `vocab` label over the clips in `scores`.
///
/// `columns` maps score columns to labels and must cover `vocab`;
/// `labels_of` returns each clip's ground truth.
pub fn evaluate_scores(
    scores: &[ClipScores],
    columns: &[LabelId],
    labels_of: impl Fn(&str) -> Option<BTreeSet<LabelId>>,
    vocab: &LabelVocabulary,
    eval_set: &str,
) -> Result<MetricsReport> {
    if scores.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let truth: Vec<BTreeSet<LabelId>> = scores
        .iter()
        .map(|c| labels_of(&c.clip_id).ok_or_else(|| Error::Data(format!("no labels for clip `{}`", c.clip_id))))
        .collect::<Result<_>>()?;
    let mut ids = vocab.ids();
    ids.sort();
    let mut classes = Vec::new();
    let mut excluded = Vec::new();
    for label in ids {
        let col = columns
            .iter()
            .position(|&c| c == label)
            .ok_or_else(|| Error::Data(format!("model has no output for label {}", label.0)))?;
        let s: Vec<f64> = scores.iter().map(|c| c.scores[col]).collect();
        let y: Vec<bool> = truth.iter().map(|t| t.contains(&label)).collect();
        let positives = y.iter().filter(|&&b| b).count();
        if positives == 0 || positives == y.len() {
            excluded.push(label);
            continue;
        }
        let auc = roc_auc(&s, &y)?;
        let ap = average_precision(&s, &y)?.expect("positives present");
        classes.push(ClassMetrics {
            label,
            name: vocab.name(label).unwrap_or_default().to_string(),
            prior: positives as f64 / y.len() as f64,
            positives,
            auc,
            d_prime: d_prime(auc),
            d_prime_clamped: !(DPRIME_EPSILON..=1.0 - DPRIME_EPSILON).contains(&auc),
            average_precision: ap,
        });
    }
    if classes.is_empty() {
        return Err(Error::UndefinedAuc("no class has both positives and negatives".into()));
    }
    let n = classes.len() as f64;
    let balanced_auc = classes.iter().map(|c| c.auc).sum::<f64>() / n;
    Ok(MetricsReport {
        balanced_auc,
        balanced_dprime: d_prime(balanced_auc),
        mean_class_dprime: classes.iter().map(|c| c.d_prime).sum::<f64>() / n,
        balanced_map: classes.iter().map(|c| c.average_precision).sum::<f64>() / n,
        vocab_size: vocab.len(),
        num_clips: scores.len(),
        excluded,
        eval_set: eval_set.to_string(),
        classes,
    })
}

impl MetricsReport {
    /// `label,prior,positives,auc,dprime,ap`.
    pub fn write_class_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["label", "prior", "positives", "auc", "dprime", "ap"])?;
        for c in &self.classes {
            let label = if c.name.is_empty() { c.label.0.to_string() } else { c.name.clone() };
            w.write_record([
                label,
                c.prior.to_string(),
                c.positives.to_string(),
                c.auc.to_string(),
                c.d_prime.to_string(),
                c.average_precision.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self, config_digest: Option<&str>) -> String {
        let s = Summary {
            balanced_auc: self.balanced_auc,
            balanced_dprime: self.balanced_dprime,
            balanced_map: self.balanced_map,
            vocab_size: self.vocab_size,
            mean_class_dprime: self.mean_class_dprime,
            num_clips: self.num_clips,
            evaluated_classes: self.classes.len(),
            excluded: &self.excluded,
            eval_set: &self.eval_set,
            config_digest,
        };
        serde_json::to_string_pretty(&s).expect("summary serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub label: String,
    pub prior: f64,
    pub d_prime: f64,
    pub ap: f64,
}

/// Per-class (prior, d-prime, AP) rows with priors over the evaluation set.
pub fn scatter_prior_dprime(report: &MetricsReport) -> Vec<ScatterRow> {
    report
        .classes
        .iter()
        .map(|c| ScatterRow {
            label: if c.name.is_empty() { c.label.0.to_string() } else { c.name.clone() },
            prior: c.prior,
            d_prime: c.d_prime,
            ap: c.average_precision,
        })
        .collect()
}

pub fn write_scatter_csv<W: Write>(rows: &[ScatterRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scatter_csv<R: std::io::Read>(input: R) -> Result<Vec<ScatterRow>> {
    Ok(csv::Reader::from_reader(input).deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimelineRow {
    pub time_s: f64,
    pub class: String,
    pub score: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Timeline {
    /// Selected output columns, strongest peak first.
    pub selected: Vec<usize>,
    pub rows: Vec<TimelineRow>,
}

/// The `k` columns with the highest single-patch score and their series.
pub fn top_peak_timeline(patch_scores: &Matrix, names: &[String], k: usize) -> Result<Timeline> {
    if patch_scores.rows() == 0 {
        return Err(Error::NoPatches);
    }
    if names.len() != patch_scores.cols() {
        return Err(Error::Data(format!("{} names for {} columns", names.len(), patch_scores.cols())));
    }
    let peaks: Vec<f32> = (0..patch_scores.cols())
        .map(|c| (0..patch_scores.rows()).map(|r| patch_scores.get(r, c)).fold(f32::NEG_INFINITY, f32::max))
        .collect();
    let mut selected: Vec<usize> = (0..peaks.len()).collect();
    selected.sort_by(|&a, &b| peaks[b].total_cmp(&peaks[a]).then(a.cmp(&b)));
    selected.truncate(k.min(peaks.len()));
    let mut rows = Vec::with_capacity(selected.len() * patch_scores.rows());
    for &c in &selected {
        for r in 0..patch_scores.rows() {
            rows.push(TimelineRow {
                time_s: r as f64 * PATCH_SECONDS,
                class: names[c].clone(),
                score: patch_scores.get(r, c),
            });
        }
    }
    Ok(Timeline { selected, rows })
}

pub fn write_timeline_csv<W: Write>(timeline: &Timeline, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &timeline.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
