use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use weakaudio::error::Error;
use weakaudio::experiment::{self, ExperimentConfig};
use weakaudio::manifest::Manifest;
use weakaudio::training::{load_model, PatchStore};
use weakaudio::transfer::{extract_embeddings, write_embeddings};
use weakaudio::vocab::LabelVocabulary;

#[derive(Parser)]
#[command(name = "weakaudio", version, about = "Weak-label audio classification experiments")]
struct Cli {
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment configuration (JSON); defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (a file for `embed`).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for synthesis, featurization and scoring. Training is
    /// always single-threaded.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus into --out.
    Synth,
    /// Build the patch cache of a corpus directory.
    Featurize {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train and evaluate one configuration; the corpus is synthesized first if absent.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a checkpoint on the balanced test subset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write per-patch embeddings of every manifest clip.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to vocabulary.csv next to the manifest.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Source training plus embedding-vs-log-mel comparison on a target corpus.
    Transfer {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
    },
    /// Label-set-size and training-size sweeps.
    Sweep {
        #[arg(long)]
        data: PathBuf,
    },
    /// Summarize run directories under --runs (default: --out).
    Report {
        #[arg(long)]
        runs: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let config = match &cli.config {
        Some(path) => ExperimentConfig::read(path)?,
        None => ExperimentConfig::default(),
    };
    Ok(match cli.seed {
        Some(seed) => config.with_seed(seed),
        None => config,
    })
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let config = load_config(cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::Synth => {
            let o = weakaudio::synth::synth_dataset(&config.synth, out)?;
            println!("{} clips, {} labels -> {}", o.manifest.records.len(), o.vocabulary.len(), o.manifest_path.display());
        }
        Command::Featurize { data } => {
            let d = experiment::load_dataset(data)?;
            println!("{} clips, {} patches", d.store.clips().len(), d.store.len());
        }
        Command::Train { data } => {
            let d = experiment::prepare_dataset(&config.synth, data)?;
            let r = experiment::run_experiment(&config, &d, out)?;
            println!("{}", r.report.summary_json(Some(&r.record.config_digest)));
        }
        Command::Eval { data, checkpoint } => {
            let d = experiment::load_dataset(data)?;
            let report = experiment::evaluate_checkpoint(&config, checkpoint, &d)?;
            fs::create_dir_all(out)?;
            let summary = report.summary_json(Some(&config.digest()));
            fs::write(out.join(experiment::SUMMARY_FILE), &summary)?;
            report.write_class_csv(File::create(out.join("classes.csv"))?)?;
            println!("{summary}");
        }
        Command::Embed { checkpoint, manifest, vocab } => embed(checkpoint, manifest, vocab.as_deref(), out)?,
        Command::Transfer { source, target } => {
            let s = experiment::load_dataset(source)?;
            let t = experiment::load_dataset(target)?;
            let c = experiment::run_transfer(&config, &s, &t, out)?;
            println!(
                "embedding ({}-d): AUC {:.4} mAP {:.4}\nlog-mel baseline: AUC {:.4} mAP {:.4}",
                c.embedding_dim, c.embedding.balanced_auc, c.embedding.balanced_map, c.baseline.balanced_auc, c.baseline.balanced_map
            );
        }
        Command::Sweep { data } => {
            let d = experiment::prepare_dataset(&config.synth, data)?;
            experiment::run_sweeps(&config, &d, out)?;
            print!("{}", experiment::report(out)?);
        }
        Command::Report { runs } => {
            let text = experiment::report(runs.as_deref().unwrap_or(out))?;
            print!("{text}");
        }
    }
    Ok(())
}

fn embed(checkpoint: &Path, manifest_path: &Path, vocab: Option<&Path>, out: &Path) -> Result<()> {
    let (model, _) = load_model(checkpoint)?;
    let dim = model.spec().embedding_dim()?;
    let manifest = Manifest::read(manifest_path)?;
    let vocab_path = vocab.map(Path::to_path_buf).unwrap_or_else(|| manifest.base_dir.join("vocabulary.csv"));
    let vocab = LabelVocabulary::read_csv(File::open(&vocab_path).with_context(|| vocab_path.display().to_string())?)?;
    let store = PatchStore::from_patches(experiment::featurize(&manifest, &vocab)?)?;
    let records = extract_embeddings(&model, &store)?;
    write_embeddings(out, dim, &records)?;
    println!("{} embeddings of dimension {dim} -> {}", records.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map(Error::exit_code).unwrap_or(3);
            ExitCode::from(code as u8)
        }
    }
}
