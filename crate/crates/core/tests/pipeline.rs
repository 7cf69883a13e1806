use std::fs;
use std::path::Path;

use weakaudio::architectures::ArchitectureKind;
use weakaudio::experiment::{self, Dataset, ExperimentConfig, SweepAxes, CHECKPOINT_FILE, SUMMARY_FILE};
use weakaudio::synth::{EventClass, SynthConfig};
use weakaudio::training::TrainConfig;
use weakaudio::transfer::{read_embeddings, TransferConfig};

fn tiny_corpus(dir: &Path, classes: Vec<EventClass>, prefix: &str) -> Dataset {
    let synth = SynthConfig {
        num_clips: 90,
        clip_duration_s: (2.0, 3.0),
        event_duration_s: (0.5, 1.0),
        classes,
        id_prefix: prefix.into(),
        ..SynthConfig::default()
    };
    experiment::prepare_dataset(&synth, dir).unwrap()
}

fn tiny_config(kind: ArchitectureKind) -> ExperimentConfig {
    ExperimentConfig {
        architecture: kind,
        width_factor: 0.05,
        train: TrainConfig { batch_size: 8, learning_rate: 1e-3, max_steps: 20, validation_interval: 10, validation_clips: 8, ..TrainConfig::default() },
        eval_per_class: 3,
        transfer: TransferConfig { hidden_units: 16, steps: 20, batch_size: 8, ..TransferConfig::default() },
        sweep: SweepAxes { vocabulary_sizes: vec![4, 2], bottleneck: vec![false, true], bottleneck_units: 8, training_sizes: vec![20, 40] },
        ..ExperimentConfig::default()
    }
}

#[test]
fn train_evaluate_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_corpus(&tmp.path().join("data"), vec![EventClass::ToneLow, EventClass::ToneHigh, EventClass::WhiteNoise, EventClass::ChirpUp], "clip");
    assert_eq!(data.vocab.len(), 4);
    // The second load comes from the patch cache.
    let reloaded = experiment::load_dataset(&tmp.path().join("data")).unwrap();
    assert_eq!(reloaded.store, data.store);

    let config = tiny_config(ArchitectureKind::Fc);
    let runs = tmp.path().join("runs");
    let a = experiment::run_experiment(&config, &data, &runs.join("a")).unwrap();
    let b = experiment::run_experiment(&config, &data, &runs.join("b")).unwrap();
    for f in [SUMMARY_FILE, CHECKPOINT_FILE, "classes.csv", "series.csv", "cost.csv"] {
        assert_eq!(fs::read(runs.join("a").join(f)).unwrap(), fs::read(runs.join("b").join(f)).unwrap(), "{f}");
    }
    assert_eq!(a.record.steps, 20);
    assert!((0.0..=1.0).contains(&a.report.balanced_auc));
    assert_eq!(b.report, a.report);

    let again = experiment::evaluate_checkpoint(&config, &a.checkpoint, &data).unwrap();
    assert_eq!(again.balanced_auc, a.report.balanced_auc);

    fs::create_dir_all(runs.join("empty")).unwrap();
    fs::write(runs.join("empty").join(SUMMARY_FILE), "not json").unwrap();
    let text = experiment::report(&runs).unwrap();
    assert!(text.contains("fc-3x1000"));
    assert!(text.lines().any(|l| l.starts_with("a ") && l.contains(&format!("{:.4}", a.report.balanced_auc))));
    assert!(text.lines().any(|l| l.starts_with("empty") && l.contains("absent")));
}

#[test]
fn sweeps_and_transfer_run_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let source = tiny_corpus(&tmp.path().join("a"), vec![EventClass::ToneLow, EventClass::ToneHigh, EventClass::WhiteNoise, EventClass::ChirpUp], "src");
    let target = tiny_corpus(&tmp.path().join("b"), vec![EventClass::ToneMid, EventClass::FilteredNoise, EventClass::ChirpDown, EventClass::AmTone], "tgt");
    let config = tiny_config(ArchitectureKind::Resnet);

    let tables = experiment::run_sweeps(&config, &source, &tmp.path().join("sweep")).unwrap();
    assert_eq!(tables.labels.len(), 4);
    assert!(tables.labels.iter().all(|r| r.eval_vocabulary_size == 2));
    for v in [4, 2] {
        let plain = tables.labels.iter().find(|r| r.vocabulary_size == v && !r.bottleneck).unwrap();
        let narrow = tables.labels.iter().find(|r| r.vocabulary_size == v && r.bottleneck).unwrap();
        assert_ne!(plain.head_weights, narrow.head_weights);
    }
    assert_eq!(tables.sizes.iter().map(|r| r.training_clips).collect::<Vec<_>>(), vec![20, 40]);
    let text = experiment::report(&tmp.path().join("sweep")).unwrap();
    assert!(text.contains("label_sweep.csv") && text.contains("size_sweep.csv"));

    let out = tmp.path().join("transfer");
    let c = experiment::run_transfer(&config, &source, &target, &out).unwrap();
    assert_eq!(c.embedding.vocab_size, 4);
    let (dim, records) = read_embeddings(&out.join("eval.wem")).unwrap();
    assert_eq!(dim, c.embedding_dim);
    assert!(records.iter().all(|r| r.clip_id.starts_with("tgt")));
}
