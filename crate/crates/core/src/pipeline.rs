//! Corpus ingestion, experiment configuration and orchestration. Every run
//! writes `resolved-config.json`, `records.jsonl`, its aggregate CSVs and a
//! `run-summary.json` into the output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::collision::{collide_against_db, CollisionConfig};
use crate::error::{ensure, Error, Result};
use crate::evasion::{delta0_sweep, evade_batch, EvasionConfig, Variant};
use crate::image::{ImageTensor, InputSpec};
use crate::leakage::{
    build_hash_dataset, evaluate_topk, stratified_split, train_leakage_model, HashDataset, KSummary, LeakageConfig,
    LeakageModel, Split,
};
use crate::lsh::{compute_hash, HashDatabase, HashingMatrix};
use crate::network::{EmbeddingNetwork, DESK_CHANNELS, EMBEDDING_DIM};
use crate::par::{map_ordered, mean_std, with_workers};
use crate::report;
use crate::synthetic;
use crate::transforms::{default_families, robustness_sweep, translation_grid, TransformFamily};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!("unknown preset {other:?} (desk|paper)"))),
        }
    }
}

/// Where experiment images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusSource {
    /// Procedural scenes.
    Synthetic { count: usize, seed: u64 },
    /// Procedural scenes with class-dependent palettes, `per_class` each.
    LabeledSynthetic {
        classes: usize,
        per_class: usize,
        seed: u64,
    },
    /// Every PNG/PPM below `path`; a file's label is its top-level subdirectory.
    Directory { path: PathBuf },
    /// Text file of `path[<TAB>label]` lines, paths relative to the file.
    Manifest { path: PathBuf },
    /// Explicit image files, unlabeled.
    Files { paths: Vec<PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatabaseConfig {
    /// Existing PHDB file; when absent the database hashes a synthetic corpus.
    pub path: Option<PathBuf>,
    pub entries: usize,
    pub seed: u64,
}

impl Default for DatabaseConfig {
    fn default() -> Self {
        Self {
            path: None,
            entries: 500,
            seed: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustnessConfig {
    /// Empty means the default exponential grids for the input geometry.
    pub families: Vec<TransformFamily>,
    pub translation_max_shift: usize,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            families: Vec::new(),
            translation_max_shift: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeakageSettings {
    pub model: LeakageConfig,
    pub per_class_cap: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Independently seeded training runs (`model.seed + r`) on the same splits.
    pub repeats: usize,
    pub ks: Vec<usize>,
    /// `original<TAB>category` lines mapping corpus labels onto categories.
    pub label_map: Option<PathBuf>,
    /// Directory holding a previous `leakage build`/`train` run.
    pub data_dir: Option<PathBuf>,
}

impl Default for LeakageSettings {
    fn default() -> Self {
        Self {
            model: LeakageConfig::classification(),
            per_class_cap: 732,
            val_fraction: 0.1,
            test_fraction: 0.2,
            repeats: 1,
            ks: vec![1, 5, 10],
            label_map: None,
            data_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub preset: Preset,
    pub input: InputSpec,
    /// Embedding dimension m.
    pub embedding_dim: usize,
    /// Hash length k.
    pub bits: usize,
    pub network_seed: u64,
    /// Trained network checkpoint; overrides `network_seed` when set.
    pub checkpoint: Option<PathBuf>,
    pub matrix_seed: u64,
    /// 0 = one worker per logical core.
    pub workers: usize,
    pub corpus: CorpusSource,
    pub database: DatabaseConfig,
    pub collision: CollisionConfig,
    pub evasion: EvasionConfig,
    pub delta0_values: Vec<f64>,
    pub robustness: RobustnessConfig,
    pub leakage: LeakageSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl PipelineConfig {
    pub fn desk() -> Self {
        Self {
            preset: Preset::Desk,
            input: InputSpec::new(64, 64, 3),
            embedding_dim: EMBEDDING_DIM,
            bits: 96,
            network_seed: 0,
            checkpoint: None,
            matrix_seed: 1,
            workers: 0,
            corpus: CorpusSource::Synthetic { count: 50, seed: 1 },
            database: DatabaseConfig::default(),
            collision: CollisionConfig::default(),
            evasion: EvasionConfig::default(),
            delta0_values: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            robustness: RobustnessConfig::default(),
            leakage: LeakageSettings::default(),
        }
    }

    /// Production geometry: 360×360×3 input, m = 128, k = 96.
    pub fn paper() -> Self {
        Self {
            preset: Preset::Paper,
            input: InputSpec::new(360, 360, 3),
            ..Self::desk()
        }
    }

    pub fn for_preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    /// Parses JSON; fields left out take the values of `base`.
    pub fn from_json_over(text: &str, base: &Self) -> Result<Self> {
        let patch: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        let mut merged = serde_json::to_value(base).map_err(|e| Error::Config(e.to_string()))?;
        merge_json(&mut merged, patch);
        serde_json::from_value(merged).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Re-seeds everything an experiment draws at random — corpora, the
    /// database corpus and the attack and training RNGs. The network and
    /// hashing matrix define the system under attack and keep their seeds.
    pub fn reseed(&mut self, seed: u64) {
        match &mut self.corpus {
            CorpusSource::Synthetic { seed: s, .. } | CorpusSource::LabeledSynthetic { seed: s, .. } => *s = seed,
            CorpusSource::Directory { .. } | CorpusSource::Manifest { .. } | CorpusSource::Files { .. } => {}
        }
        self.database.seed = seed.wrapping_add(1);
        self.collision.seed = seed;
        self.evasion.seed = seed;
        self.leakage.model.seed = seed;
    }

    /// Fills every implicit default so the written config reproduces the run.
    pub fn resolve(mut self) -> Result<Self> {
        if self.robustness.families.is_empty() {
            self.robustness.families = default_families(self.input);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.input.validate().map_err(|e| Error::Config(e.to_string()))?;
        ensure!(
            self.embedding_dim >= 1 && self.bits >= 1,
            Config,
            "m and k must be positive"
        );
        self.collision.validate()?;
        self.evasion.validate()?;
        self.leakage.model.validate()?;
        ensure!(
            self.delta0_values.windows(2).all(|w| w[0] < w[1])
                && self.delta0_values.iter().all(|d| (0.0..1.0).contains(d)),
            Config,
            "delta0_values must be strictly ascending within [0,1)"
        );
        let l = &self.leakage;
        ensure!(l.repeats >= 1, Config, "leakage repeats must be at least 1");
        ensure!(l.per_class_cap >= 1, Config, "per_class_cap must be at least 1");
        ensure!(
            (0.0..1.0).contains(&l.val_fraction) && (0.0..1.0).contains(&l.test_fraction),
            Config,
            "split fractions must lie in [0,1)"
        );
        ensure!(
            !l.ks.is_empty() && l.ks[0] >= 1 && l.ks.windows(2).all(|w| w[0] < w[1]),
            Config,
            "leakage ks must be ascending positive values"
        );
        for family in &self.robustness.families {
            for spec in &family.specs {
                spec.validate(self.input).map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        match &self.corpus {
            CorpusSource::Synthetic { count, .. } => ensure!(*count >= 1, Config, "corpus count must be positive"),
            CorpusSource::LabeledSynthetic { classes, per_class, .. } => ensure!(
                *classes >= 1 && *per_class >= 1,
                Config,
                "labeled corpus needs classes and per_class ≥ 1"
            ),
            _ => {}
        }
        Ok(())
    }

    /// The embedding network and hashing matrix this config describes.
    pub fn build_system(&self) -> Result<(EmbeddingNetwork, HashingMatrix)> {
        let net = match &self.checkpoint {
            Some(path) => EmbeddingNetwork::load(path)?,
            None => EmbeddingNetwork::conv_stack(self.input, &DESK_CHANNELS, self.embedding_dim, self.network_seed)?,
        };
        ensure!(
            net.input_spec() == self.input,
            Config,
            "network expects {:?}, config says {:?}",
            net.input_spec(),
            self.input
        );
        ensure!(
            net.output_dim() == self.embedding_dim,
            Config,
            "network emits {} features, config says m = {}",
            net.output_dim(),
            self.embedding_dim
        );
        let matrix = HashingMatrix::generate(self.embedding_dim, self.bits, self.matrix_seed)?;
        Ok((net, matrix))
    }
}

fn merge_json(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    // Tagged enums are replaced whole so variants never mix fields.
                    Some(slot) if slot.is_object() && v.is_object() && v.get("kind").is_none() => merge_json(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    pub excluded: Vec<Exclusion>,
    pub count: usize,
    /// SHA-256 over the source bytes of every included entry, in order.
    pub digest: String,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub images: Vec<ImageTensor>,
}

impl Corpus {
    /// Entry labels mapped to dense indices in sorted-name order.
    pub fn label_indices(&self) -> Result<(Vec<usize>, Vec<String>)> {
        let names: Vec<&str> = self
            .manifest
            .entries
            .iter()
            .map(|e| {
                e.label
                    .as_deref()
                    .ok_or_else(|| Error::Dataset(format!("{} has no label", e.path)))
            })
            .collect::<Result<_>>()?;
        let mut classes: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        classes.sort();
        classes.dedup();
        let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        Ok((names.iter().map(|n| index[n]).collect(), classes))
    }

    /// Relabels entries through `original<TAB>category` lines.
    pub fn apply_label_map(&mut self, text: &str) -> Result<()> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (from, to) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("label map line {} lacks a tab", i + 1)))?;
            map.insert(from.to_string(), to.to_string());
        }
        for e in &mut self.manifest.entries {
            let label = e
                .label
                .as_ref()
                .ok_or_else(|| Error::Dataset(format!("{} has no label", e.path)))?;
            let mapped = map
                .get(label)
                .ok_or_else(|| Error::Dataset(format!("label {label:?} missing from the label map")))?;
            e.label = Some(mapped.clone());
        }
        Ok(())
    }
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "ppm", "pnm", "PNG"];

/// Loads a corpus, resizing every image to `spec` and mapping `[0,255]` to
/// `[-1,1]`. Unreadable files are logged and excluded; an empty result is fatal.
pub fn ingest(source: &CorpusSource, spec: InputSpec) -> Result<Corpus> {
    match source {
        CorpusSource::Synthetic { count, seed } => {
            let images = synthetic::corpus(spec, *count, *seed);
            let seeds = synthetic::scene_seeds(*count, *seed);
            let entries = seeds
                .iter()
                .map(|s| ManifestEntry {
                    path: format!("synthetic:{s:016x}"),
                    label: None,
                })
                .collect();
            Ok(synthetic_corpus(entries, images))
        }
        CorpusSource::LabeledSynthetic {
            classes,
            per_class,
            seed,
        } => {
            let seeds = synthetic::scene_seeds(classes * per_class, *seed);
            let mut entries = Vec::new();
            let mut images = Vec::new();
            for (i, s) in seeds.iter().enumerate() {
                let class = i / per_class;
                images.push(synthetic::labeled_scene(spec, class, *classes, *s));
                entries.push(ManifestEntry {
                    path: format!("synthetic:{class}:{s:016x}"),
                    label: Some(format!("class{class:04}")),
                });
            }
            Ok(synthetic_corpus(entries, images))
        }
        CorpusSource::Directory { path } => {
            let mut files = Vec::new();
            collect_images(path, &mut files)?;
            files.sort();
            let listed = files
                .into_iter()
                .map(|f| {
                    let rel = f.strip_prefix(path).unwrap_or(&f).to_path_buf();
                    let label = (rel.components().count() > 1)
                        .then(|| rel.components().next())
                        .flatten()
                        .map(|c| c.as_os_str().to_string_lossy().into_owned());
                    (f, rel.to_string_lossy().into_owned(), label)
                })
                .collect();
            load_files(listed, spec)
        }
        CorpusSource::Manifest { path } => {
            let text = std::fs::read_to_string(path)?;
            let base = path.parent().unwrap_or(Path::new("."));
            let mut listed = Vec::new();
            for line in text.lines() {
                if line.trim().is_empty() || line.starts_with('#') {
                    continue;
                }
                let (file, label) = match line.split_once('\t') {
                    Some((f, l)) => (f, Some(l.to_string())),
                    None => (line, None),
                };
                listed.push((base.join(file), file.to_string(), label));
            }
            listed.sort_by(|a, b| a.1.cmp(&b.1));
            load_files(listed, spec)
        }
        CorpusSource::Files { paths } => {
            ensure!(!paths.is_empty(), Input, "no image files given");
            let mut listed: Vec<_> = paths
                .iter()
                .map(|p| (p.clone(), p.to_string_lossy().into_owned(), None))
                .collect();
            listed.sort_by(|a, b| a.1.cmp(&b.1));
            load_files(listed, spec)
        }
    }
}

fn synthetic_corpus(entries: Vec<ManifestEntry>, images: Vec<ImageTensor>) -> Corpus {
    let mut hasher = Sha256::new();
    for img in &images {
        hasher.update(img.to_u8());
    }
    Corpus {
        manifest: CorpusManifest {
            count: images.len(),
            entries,
            excluded: Vec::new(),
            digest: hex_digest(hasher),
        },
        images,
    }
}

fn hex_digest(hasher: Sha256) -> String {
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn collect_images(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_images(&path, out)?;
        } else if path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e))
        {
            out.push(path);
        }
    }
    Ok(())
}

fn load_files(listed: Vec<(PathBuf, String, Option<String>)>, spec: InputSpec) -> Result<Corpus> {
    let decoded = map_ordered(&listed, |_, (file, _, _)| -> Result<(Vec<u8>, ImageTensor)> {
        let bytes = std::fs::read(file)?;
        let img = decode(&bytes, spec)?;
        Ok((bytes, img))
    });
    let mut hasher = Sha256::new();
    let mut entries = Vec::new();
    let mut excluded = Vec::new();
    let mut images = Vec::new();
    for ((_, name, label), result) in listed.into_iter().zip(decoded) {
        match result {
            Ok((bytes, img)) => {
                hasher.update((name.len() as u64).to_le_bytes());
                hasher.update(name.as_bytes());
                hasher.update(&bytes);
                entries.push(ManifestEntry { path: name, label });
                images.push(img);
            }
            Err(e) => {
                log::warn!("skipping {name}: {e}");
                excluded.push(Exclusion {
                    path: name,
                    reason: e.to_string(),
                });
            }
        }
    }
    ensure!(!images.is_empty(), Input, "no readable images in the corpus");
    Ok(Corpus {
        manifest: CorpusManifest {
            count: images.len(),
            entries,
            excluded,
            digest: hex_digest(hasher),
        },
        images,
    })
}

/// Decodes PNG or binary PPM bytes and resizes to `spec`.
pub fn decode(bytes: &[u8], spec: InputSpec) -> Result<ImageTensor> {
    let dynamic = image::load_from_memory(bytes).map_err(|e| Error::Format(e.to_string()))?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let img = match spec.channels {
        1 => ImageTensor::from_u8(h, w, 1, dynamic.to_luma8().as_raw())?,
        3 => ImageTensor::from_u8(h, w, 3, dynamic.to_rgb8().as_raw())?,
        c => return Err(Error::Config(format!("cannot decode into {c} channels"))),
    };
    if (h, w) == (spec.height, spec.width) {
        Ok(img)
    } else {
        img.resize_bilinear(spec.height, spec.width)
    }
}

/// Writes an image as PNG after mapping `[-1,1]` back to `[0,255]`.
pub fn save_png(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let color = match img.channels() {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => return Err(Error::Input(format!("cannot save a {c}-channel image"))),
    };
    image::save_buffer(path, &img.to_u8(), img.width() as u32, img.height() as u32, color)
        .map_err(|e| Error::Format(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeakageStage {
    Build,
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Hash,
    BuildDb,
    Collide,
    Evade { variant: Variant, sweep: bool },
    Robustness,
    Leakage(LeakageStage),
}

impl Experiment {
    pub fn name(&self) -> String {
        match self {
            Experiment::Hash => "hash".into(),
            Experiment::BuildDb => "build-db".into(),
            Experiment::Collide => "collide".into(),
            Experiment::Evade { variant, sweep } => {
                format!("evade-{}{}", variant.name(), if *sweep { "-sweep" } else { "" })
            }
            Experiment::Robustness => "robustness".into(),
            Experiment::Leakage(stage) => format!(
                "leakage-{}",
                match stage {
                    LeakageStage::Build => "build",
                    LeakageStage::Train => "train",
                    LeakageStage::Eval => "eval",
                }
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub experiment: String,
    pub wall_clock_seconds: f64,
    pub network_seed: u64,
    pub matrix_seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub corpus_count: usize,
    pub corpus_digest: String,
    pub excluded: usize,
    pub outputs: Vec<String>,
    pub headline: serde_json::Value,
}

#[derive(Serialize)]
struct HashRecordLine<'a> {
    index: usize,
    source: &'a str,
    hash: String,
}

#[derive(Serialize)]
struct AttackLine<'a, T: Serialize> {
    index: usize,
    source: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta0: Option<f64>,
    #[serde(flatten)]
    report: &'a T,
}

/// Runs one experiment end to end and writes its artifacts under `out`.
pub fn run_experiment(experiment: Experiment, config: PipelineConfig, out: &Path) -> Result<RunSummary> {
    let config = config.resolve()?;
    std::fs::create_dir_all(out)?;
    report::write_json(out.join("resolved-config.json"), &config)?;
    let started = Instant::now();
    let workers = config.workers;
    let (mut summary, outputs) = with_workers(workers, || execute(experiment, &config, out))??;
    summary.wall_clock_seconds = started.elapsed().as_secs_f64();
    summary.outputs = outputs;
    report::write_json(out.join("run-summary.json"), &summary)?;
    Ok(summary)
}

fn execute(experiment: Experiment, config: &PipelineConfig, out: &Path) -> Result<(RunSummary, Vec<String>)> {
    let (net, matrix) = config.build_system()?;
    let mut outputs = vec!["resolved-config.json".to_string()];
    let mut emit = |name: &str| outputs.push(name.to_string());

    // Training and evaluation read the datasets of an earlier build run.
    let corpus = match experiment {
        Experiment::Leakage(LeakageStage::Train | LeakageStage::Eval) => None,
        _ => {
            let mut corpus = ingest(&config.corpus, config.input)?;
            if let (Experiment::Leakage(_), Some(map)) = (experiment, &config.leakage.label_map) {
                corpus.apply_label_map(&std::fs::read_to_string(map)?)?;
            }
            report::write_json(out.join("corpus-manifest.json"), &corpus.manifest)?;
            emit("corpus-manifest.json");
            Some(corpus)
        }
    };
    let source = |i: usize| -> &str { corpus.as_ref().map_or("", |c| c.manifest.entries[i].path.as_str()) };

    let headline = match experiment {
        Experiment::Hash | Experiment::BuildDb => {
            let c = corpus.as_ref().expect("corpus loaded");
            let hashes = map_ordered(&c.images, |_, img| compute_hash(&net, &matrix, img))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let lines: Vec<HashRecordLine> = hashes
                .iter()
                .enumerate()
                .map(|(index, h)| HashRecordLine {
                    index,
                    source: source(index),
                    hash: h.to_hex(),
                })
                .collect();
            report::write_jsonl(out.join("records.jsonl"), &lines)?;
            emit("records.jsonl");
            if experiment == Experiment::BuildDb {
                let mut db = HashDatabase::new(config.bits);
                for (i, h) in hashes.into_iter().enumerate() {
                    db.push_labeled(h, source(i))?;
                }
                db.save(out.join("hashes.phdb"))?;
                emit("hashes.phdb");
            }
            serde_json::json!({ "hashes": lines.len() })
        }
        Experiment::Collide => {
            let c = corpus.as_ref().expect("corpus loaded");
            let db = match &config.database.path {
                Some(path) => HashDatabase::load(path)?,
                None => {
                    let images = synthetic::corpus(config.input, config.database.entries, config.database.seed);
                    let hashes = map_ordered(&images, |_, img| compute_hash(&net, &matrix, img))
                        .into_iter()
                        .collect::<Result<Vec<_>>>()?;
                    HashDatabase::from_entries(config.bits, hashes)?
                }
            };
            let batch = collide_against_db(&net, &matrix, &c.images, &db, &config.collision)?;
            let lines: Vec<_> = batch
                .reports
                .iter()
                .enumerate()
                .map(|(index, report)| AttackLine {
                    index,
                    source: source(index),
                    delta0: None,
                    report,
                })
                .collect();
            report::write_jsonl(out.join("records.jsonl"), &lines)?;
            report::write_summary_csv(out.join("collision-summary.csv"), &[("collision", &batch.summary)])?;
            emit("records.jsonl");
            emit("collision-summary.csv");
            serde_json::to_value(&batch.summary).map_err(|e| Error::Format(e.to_string()))?
        }
        Experiment::Evade { variant, sweep: false } => {
            let c = corpus.as_ref().expect("corpus loaded");
            let cfg = EvasionConfig {
                variant,
                ..config.evasion.clone()
            };
            let batch = evade_batch(&net, &matrix, &c.images, &cfg)?;
            let lines: Vec<_> = batch
                .reports
                .iter()
                .enumerate()
                .map(|(index, report)| AttackLine {
                    index,
                    source: source(index),
                    delta0: Some(cfg.delta0),
                    report,
                })
                .collect();
            report::write_jsonl(out.join("records.jsonl"), &lines)?;
            report::write_summary_csv(out.join("evasion-summary.csv"), &[(variant.name(), &batch.summary)])?;
            emit("records.jsonl");
            emit("evasion-summary.csv");
            serde_json::to_value(&batch.summary).map_err(|e| Error::Format(e.to_string()))?
        }
        Experiment::Evade { variant, sweep: true } => {
            ensure!(
                variant == Variant::Standard,
                Config,
                "the δ₀ sweep runs the standard variant only"
            );
            let c = corpus.as_ref().expect("corpus loaded");
            let sweep = delta0_sweep(&net, &matrix, &c.images, &config.delta0_values, &config.evasion)?;
            let lines: Vec<_> = sweep
                .rows
                .iter()
                .zip(&sweep.reports)
                .flat_map(|(row, reports)| {
                    reports.iter().enumerate().map(move |(index, report)| AttackLine {
                        index,
                        source: source(index),
                        delta0: Some(row.delta0),
                        report,
                    })
                })
                .collect();
            report::write_jsonl(out.join("records.jsonl"), &lines)?;
            report::write_sweep_csv(out.join("delta0-sweep.csv"), &sweep)?;
            emit("records.jsonl");
            emit("delta0-sweep.csv");
            serde_json::json!({ "sr": sweep.rows.iter().map(|r| r.summary.sr).collect::<Vec<_>>() })
        }
        Experiment::Robustness => {
            let c = corpus.as_ref().expect("corpus loaded");
            let curves = robustness_sweep(&net, &matrix, &c.images, &config.robustness.families)?;
            let grid = translation_grid(&net, &matrix, &c.images, config.robustness.translation_max_shift)?;
            report::write_jsonl(out.join("records.jsonl"), &curves.curves)?;
            report::write_curves_csv(out.join("robustness-curves.csv"), &curves.curves)?;
            report::write_grid_csv(out.join("translation-grid.csv"), &grid.cells)?;
            emit("records.jsonl");
            emit("robustness-curves.csv");
            emit("translation-grid.csv");
            serde_json::json!({ "points": curves.curves.len(), "grid_cells": grid.cells.len() })
        }
        Experiment::Leakage(LeakageStage::Build) => {
            let c = corpus.as_ref().expect("corpus loaded");
            let (labels, classes) = c.label_indices()?;
            let labeled: Vec<(ImageTensor, usize)> = c.images.iter().cloned().zip(labels).collect();
            let l = &config.leakage;
            let (rest, test) = build_hash_dataset(
                &net,
                &matrix,
                &labeled,
                classes.len(),
                l.per_class_cap,
                l.model.seed,
                l.test_fraction,
            )?;
            let test = test.with_split(Split::Test);
            let (train, val) = stratified_split(&rest, l.val_fraction, Split::Val, l.model.seed.wrapping_add(1))?;
            let class_lines: String = classes.iter().enumerate().map(|(i, c)| format!("{i}\t{c}\n")).collect();
            std::fs::write(out.join("classes.tsv"), class_lines)?;
            for (name, data) in [("train", &train), ("val", &val), ("test", &test)] {
                data.save(out.join(format!("dataset-{name}.tsv")))?;
                emit(&format!("dataset-{name}.tsv"));
            }
            emit("classes.tsv");
            let sizes: Vec<_> = [&train, &val, &test]
                .iter()
                .map(|d| serde_json::json!({ "split": d.split(), "records": d.len(), "classes": d.class_counts() }))
                .collect();
            report::write_jsonl(out.join("records.jsonl"), &sizes)?;
            emit("records.jsonl");
            serde_json::json!({ "classes": classes.len(), "train": train.len(), "val": val.len(), "test": test.len() })
        }
        Experiment::Leakage(LeakageStage::Train) => {
            let dir = leakage_dir(config, out);
            let train = HashDataset::load(dir.join("dataset-train.tsv"))?;
            let val = HashDataset::load(dir.join("dataset-val.tsv"))?;
            let mut histories = Vec::new();
            for r in 0..config.leakage.repeats {
                let cfg = LeakageConfig {
                    seed: config.leakage.model.seed.wrapping_add(r as u64),
                    ..config.leakage.model.clone()
                };
                let (model, history) = train_leakage_model(&train, &val, &cfg)?;
                let name = format!("model-{r}.phlm");
                model.save(out.join(&name))?;
                emit(&name);
                histories.push(history);
            }
            report::write_jsonl(out.join("records.jsonl"), &histories)?;
            emit("records.jsonl");
            serde_json::json!({
                "epochs_run": histories.iter().map(|h| h.epochs_run).collect::<Vec<_>>(),
                "best_val_loss": histories.iter().map(|h| h.best_val_loss).collect::<Vec<_>>(),
            })
        }
        Experiment::Leakage(LeakageStage::Eval) => {
            let dir = leakage_dir(config, out);
            let test = HashDataset::load(dir.join("dataset-test.tsv"))?;
            let mut reports = Vec::new();
            for r in 0..config.leakage.repeats {
                let model = LeakageModel::load(dir.join(format!("model-{r}.phlm")))?;
                reports.push(evaluate_topk(&model, &test, &config.leakage.ks)?);
            }
            let summary: Vec<KSummary> = config
                .leakage
                .ks
                .iter()
                .enumerate()
                .map(|(i, &k)| {
                    let acc: Vec<f64> = reports.iter().map(|r| r.accuracy[i]).collect();
                    let (mean, std) = mean_std(&acc).expect("repeats ≥ 1");
                    KSummary { k, mean, std }
                })
                .collect();
            report::write_json(out.join("topk.json"), &summary)?;
            report::write_jsonl(out.join("records.jsonl"), &reports)?;
            report::write_precision_csv(out.join("per-class-precision.csv"), &reports[0].per_class)?;
            emit("topk.json");
            emit("records.jsonl");
            emit("per-class-precision.csv");
            serde_json::to_value(&summary).map_err(|e| Error::Format(e.to_string()))?
        }
    };

    let (count, digest, excluded) = corpus.as_ref().map_or((0, String::new(), 0), |c| {
        (c.manifest.count, c.manifest.digest.clone(), c.manifest.excluded.len())
    });
    let summary = RunSummary {
        experiment: experiment.name(),
        wall_clock_seconds: 0.0,
        network_seed: config.network_seed,
        matrix_seed: config.matrix_seed,
        checkpoint: config.checkpoint.clone(),
        corpus_count: count,
        corpus_digest: digest,
        excluded,
        outputs: Vec::new(),
        headline,
    };
    outputs.push("run-summary.json".into());
    Ok((summary, outputs))
}

fn leakage_dir(config: &PipelineConfig, out: &Path) -> PathBuf {
    config.leakage.data_dir.clone().unwrap_or_else(|| out.to_path_buf())
}
