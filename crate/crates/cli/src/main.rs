use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info};

use phash_core::evasion::Variant;
use phash_core::pipeline::{run_experiment, save_png, CorpusSource, Experiment, LeakageStage, PipelineConfig, Preset};
use phash_core::{synthetic, Error};

/// Perceptual hashing lab: hash images and run collision, evasion,
/// robustness and leakage experiments against a surrogate hash pipeline.
#[derive(Parser, Debug)]
#[command(name = "phash", version)]
struct Cli {
    /// JSON config; omitted fields take the preset's values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Re-seed corpora, attacks and training (network and matrix seeds stay fixed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for the run's artifacts.
    #[arg(long, global = true, default_value = "phash-out")]
    out: PathBuf,

    /// Worker threads; 0 uses every logical core.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[arg(long, global = true, value_enum, default_value_t = PresetArg::Desk)]
    preset: PresetArg,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Standard,
    Edges,
    FewPixels,
}

/// Images to process: one directory, a `.txt`/`.tsv` manifest, or image files.
/// Without inputs the configured corpus is used.
#[derive(clap::Args, Debug, Default)]
struct Inputs {
    inputs: Vec<PathBuf>,

    /// Use this many synthetic images instead of the configured corpus.
    #[arg(long, conflicts_with = "inputs")]
    synthetic: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Hash images; one JSONL line per image.
    Hash(Inputs),
    /// Hash a corpus into a PHDB database.
    BuildDb(Inputs),
    /// Force each image's hash onto its nearest database entry.
    Collide {
        #[command(flatten)]
        inputs: Inputs,
        /// PHDB file; defaults to a seeded synthetic database.
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Perturb images until their hash moves more than δ₀ away.
    Evade {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_enum, default_value_t = VariantArg::Standard)]
        variant: VariantArg,
        #[arg(long)]
        delta0: Option<f64>,
        /// Run the standard attack at every configured δ₀.
        #[arg(long)]
        delta0_sweep: bool,
    },
    /// Hash-change curves under image transformations.
    Robustness(Inputs),
    /// Class leakage from hashes alone.
    Leakage {
        #[command(subcommand)]
        stage: LeakageCommand,
    },
    /// Write synthetic PNG scenes, optionally into per-class subdirectories.
    Synth {
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// With classes, `count` images are written per class.
        #[arg(long)]
        classes: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
enum LeakageCommand {
    /// Hash a labelled corpus into train/val/test datasets.
    Build {
        #[command(flatten)]
        inputs: Inputs,
        /// `original<TAB>category` label map.
        #[arg(long)]
        label_map: Option<PathBuf>,
    },
    /// Train classifiers on a built dataset.
    Train {
        /// Directory of a `leakage build` run (defaults to --out).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        max_epochs: Option<usize>,
        /// classification | categorization
        #[arg(long)]
        leakage_preset: Option<String>,
    },
    /// Top-k accuracy and per-class precision of trained classifiers.
    Eval {
        /// Directory holding the datasets and models (defaults to --out).
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PHB_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            error!("{e}");
            eprintln!("phash: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            error!("{e}");
            eprintln!("phash: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let preset = match cli.preset {
        PresetArg::Desk => Preset::Desk,
        PresetArg::Paper => Preset::Paper,
    };
    let mut config = PipelineConfig::for_preset(preset);
    if let Some(path) = &cli.config {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        config = PipelineConfig::from_json_over(&text, &config)?;
    }
    if let Some(seed) = cli.seed {
        config.reseed(seed);
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }

    let experiment = match cli.command {
        Command::Synth { count, classes } => return write_synthetic(&config, &cli.out, count, classes),
        Command::Hash(inputs) => {
            apply_inputs(&mut config, inputs, false)?;
            Experiment::Hash
        }
        Command::BuildDb(inputs) => {
            apply_inputs(&mut config, inputs, false)?;
            Experiment::BuildDb
        }
        Command::Collide { inputs, db, max_steps } => {
            apply_inputs(&mut config, inputs, false)?;
            if db.is_some() {
                config.database.path = db;
            }
            if let Some(steps) = max_steps {
                config.collision.max_steps = steps;
            }
            Experiment::Collide
        }
        Command::Evade {
            inputs,
            variant,
            delta0,
            delta0_sweep,
        } => {
            apply_inputs(&mut config, inputs, false)?;
            if let Some(d) = delta0 {
                config.evasion.delta0 = d;
            }
            let variant = match variant {
                VariantArg::Standard => Variant::Standard,
                VariantArg::Edges => Variant::EdgesOnly,
                VariantArg::FewPixels => Variant::FewPixels,
            };
            Experiment::Evade {
                variant,
                sweep: delta0_sweep,
            }
        }
        Command::Robustness(inputs) => {
            apply_inputs(&mut config, inputs, false)?;
            Experiment::Robustness
        }
        Command::Leakage { stage } => match stage {
            LeakageCommand::Build { inputs, label_map } => {
                apply_inputs(&mut config, inputs, true)?;
                if label_map.is_some() {
                    config.leakage.label_map = label_map;
                }
                Experiment::Leakage(LeakageStage::Build)
            }
            LeakageCommand::Train {
                data,
                max_epochs,
                leakage_preset,
            } => {
                if let Some(name) = leakage_preset {
                    let seed = config.leakage.model.seed;
                    config.leakage.model = phash_core::leakage::LeakageConfig {
                        seed,
                        ..phash_core::leakage::LeakageConfig::preset(&name)?
                    };
                }
                if let Some(epochs) = max_epochs {
                    config.leakage.model.max_epochs = epochs;
                }
                config.leakage.data_dir = data.or(config.leakage.data_dir);
                Experiment::Leakage(LeakageStage::Train)
            }
            LeakageCommand::Eval { data } => {
                config.leakage.data_dir = data.or(config.leakage.data_dir);
                Experiment::Leakage(LeakageStage::Eval)
            }
        },
    };

    let summary = run_experiment(experiment, config, &cli.out)?;
    info!("{} finished in {:.2}s", summary.experiment, summary.wall_clock_seconds);
    println!("{}", serde_json::to_string(&summary.headline).unwrap_or_default());
    Ok(())
}

fn apply_inputs(config: &mut PipelineConfig, inputs: Inputs, labeled: bool) -> Result<(), Error> {
    if let Some(count) = inputs.synthetic {
        let seed = match config.corpus {
            CorpusSource::Synthetic { seed, .. } | CorpusSource::LabeledSynthetic { seed, .. } => seed,
            _ => 1,
        };
        config.corpus = if labeled {
            CorpusSource::LabeledSynthetic {
                classes: 10,
                per_class: count,
                seed,
            }
        } else {
            CorpusSource::Synthetic { count, seed }
        };
        return Ok(());
    }
    config.corpus = match inputs.inputs.as_slice() {
        [] => return Ok(()),
        [one] if one.is_dir() => CorpusSource::Directory { path: one.clone() },
        [one] if is_manifest(one) => CorpusSource::Manifest { path: one.clone() },
        many => CorpusSource::Files { paths: many.to_vec() },
    };
    Ok(())
}

fn is_manifest(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("txt" | "tsv"))
}

fn write_synthetic(config: &PipelineConfig, out: &Path, count: usize, classes: Option<usize>) -> Result<(), Error> {
    let seed = match config.corpus {
        CorpusSource::Synthetic { seed, .. } | CorpusSource::LabeledSynthetic { seed, .. } => seed,
        _ => 1,
    };
    std::fs::create_dir_all(out)?;
    match classes {
        None => {
            for (i, img) in synthetic::corpus(config.input, count, seed).iter().enumerate() {
                save_png(img, out.join(format!("scene-{i:05}.png")))?;
            }
        }
        Some(n) => {
            let seeds = synthetic::scene_seeds(n * count, seed);
            for (i, s) in seeds.iter().enumerate() {
                let class = i / count;
                let dir = out.join(format!("class{class:04}"));
                std::fs::create_dir_all(&dir)?;
                let img = synthetic::labeled_scene(config.input, class, n, *s);
                save_png(&img, dir.join(format!("scene-{:05}.png", i % count)))?;
            }
        }
    }
    println!("{}", out.display());
    Ok(())
}
