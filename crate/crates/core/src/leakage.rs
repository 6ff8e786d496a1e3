//! Hash leakage: how much class information survives in a hash, measured by
//! a fully-connected classifier that sees only the hash bits.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::image::ImageTensor;
use crate::lsh::{check_pipeline, compute_hash, HashingMatrix, PerceptualHash};
use crate::network::{ByteReader, EmbeddingNetwork};
use crate::par::{map_ordered, mean_std};
use crate::tensor_math::{gemm, AdamConfig, AdamState};

pub const MODEL_MAGIC: &[u8; 4] = b"PHLM";
pub const MODEL_VERSION: u32 = 1;
pub const DATASET_HEADER: &str = "#phash-dataset";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashRecord {
    pub hash: PerceptualHash,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashDataset {
    records: Vec<HashRecord>,
    num_classes: usize,
    split: Split,
}

impl HashDataset {
    pub fn new(records: Vec<HashRecord>, num_classes: usize, split: Split) -> Result<Self> {
        ensure!(num_classes >= 1, Dataset, "dataset needs at least one class");
        if let Some(first) = records.first() {
            let bits = first.hash.len();
            for r in &records {
                ensure!(
                    r.label < num_classes,
                    Dataset,
                    "label {} outside 0..{num_classes}",
                    r.label
                );
                ensure!(r.hash.len() == bits, Dataset, "records mix hash lengths");
            }
        }
        Ok(Self {
            records,
            num_classes,
            split,
        })
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn records(&self) -> &[HashRecord] {
        &self.records
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn bits(&self) -> usize {
        self.records.first().map_or(0, |r| r.hash.len())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for r in &self.records {
            counts[r.label] += 1;
        }
        counts
    }

    /// Hash bits as `{0,1}` features, row-major `len × bits`.
    pub fn features(&self) -> Vec<f64> {
        self.records
            .iter()
            .flat_map(|r| r.hash.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }))
            .collect()
    }

    /// Tab-separated text: a header line, then `hex<TAB>label` per record.
    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "{DATASET_HEADER}\t{}\t{}\t{}\n",
            self.bits(),
            self.num_classes,
            self.split.name()
        );
        for r in &self.records {
            out.push_str(&format!("{}\t{}\n", r.hash.to_hex(), r.label));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Format("empty dataset file".into()))?
            .split('\t')
            .collect();
        ensure!(
            header.len() == 4 && header[0] == DATASET_HEADER,
            Format,
            "missing dataset header"
        );
        let parse = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad {what} {s:?}")))
        };
        let bits = parse(header[1], "bit count")?;
        let num_classes = parse(header[2], "class count")?;
        let split = Split::parse(header[3])?;
        let mut records = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let (hex, label) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("record {} lacks a label", i + 1)))?;
            records.push(HashRecord {
                hash: PerceptualHash::from_hex(hex, bits)?,
                label: parse(label, "label")?,
            });
        }
        Self::new(records, num_classes, split)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }
}

/// Stratified split: from each class, `round(fraction · count)` records
/// (after a seeded shuffle) go to the held-out side.
pub fn stratified_split(
    dataset: &HashDataset,
    fraction: f64,
    held_split: Split,
    seed: u64,
) -> Result<(HashDataset, HashDataset)> {
    ensure!(
        (0.0..1.0).contains(&fraction),
        Config,
        "split fraction must lie in [0,1), got {fraction}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<usize, Vec<&HashRecord>> = BTreeMap::new();
    for r in &dataset.records {
        by_class.entry(r.label).or_default().push(r);
    }
    let (mut rest, mut held) = (Vec::new(), Vec::new());
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        let n_held = (fraction * members.len() as f64).round() as usize;
        held.extend(members[..n_held].iter().map(|&r| r.clone()));
        rest.extend(members[n_held..].iter().map(|&r| r.clone()));
    }
    Ok((
        HashDataset::new(rest, dataset.num_classes, dataset.split)?,
        HashDataset::new(held, dataset.num_classes, held_split)?,
    ))
}

/// Hashes a labeled corpus, keeps at most `per_class_cap` randomly chosen
/// images per class, and splits off a stratified validation set.
#[allow(clippy::too_many_arguments)]
pub fn build_hash_dataset(
    net: &EmbeddingNetwork,
    matrix: &HashingMatrix,
    corpus: &[(ImageTensor, usize)],
    num_classes: usize,
    per_class_cap: usize,
    seed: u64,
    val_fraction: f64,
) -> Result<(HashDataset, HashDataset)> {
    check_pipeline(net, matrix)?;
    ensure!(per_class_cap >= 1, Config, "per-class cap must be at least 1");
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, (_, label)) in corpus.iter().enumerate() {
        ensure!(*label < num_classes, Dataset, "label {label} outside 0..{num_classes}");
        by_class[*label].push(i);
    }
    if let Some(missing) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::Dataset(format!("class {missing} has no samples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    for members in &mut by_class {
        members.shuffle(&mut rng);
        chosen.extend(members.iter().take(per_class_cap).copied());
    }
    let records = map_ordered(&chosen, |_, &i| {
        compute_hash(net, matrix, &corpus[i].0).map(|hash| HashRecord {
            hash,
            label: corpus[i].1,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let pool = HashDataset::new(records, num_classes, Split::Train)?;
    stratified_split(&pool, val_fraction, Split::Val, rng.random())
}

/// Random hashes labelled by their first `label_bits` bits read as a
/// big-endian integer — a dataset the classifier can separate exactly.
pub fn first_bits_dataset(
    count: usize,
    bits: usize,
    label_bits: usize,
    seed: u64,
    split: Split,
) -> Result<HashDataset> {
    ensure!(
        (1..=bits.min(16)).contains(&label_bits),
        Config,
        "label bits must be in 1..={}",
        bits.min(16)
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..count)
        .map(|_| {
            let hash = PerceptualHash::from_bits((0..bits).map(|_| rng.random()).collect());
            let label = hash.bits()[..label_bits]
                .iter()
                .fold(0usize, |acc, &b| (acc << 1) | b as usize);
            HashRecord { hash, label }
        })
        .collect();
    HashDataset::new(records, 1 << label_bits, split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeakageConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub batch_size: usize,
    /// Coupled L2 penalty added to the gradient before the Adam update.
    pub weight_decay: f64,
    pub dropout: f64,
    pub min_delta: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for LeakageConfig {
    fn default() -> Self {
        Self::classification()
    }
}

impl LeakageConfig {
    /// Batch 64, dropout 0.3, no weight decay.
    pub fn classification() -> Self {
        Self {
            hidden: vec![2048, 4096, 2048],
            learning_rate: 1e-3,
            betas: (0.9, 0.999),
            batch_size: 64,
            weight_decay: 0.0,
            dropout: 0.3,
            min_delta: 1e-4,
            patience: 10,
            max_epochs: 100,
            seed: 0,
        }
    }

    /// Batch 128, dropout 0.2, weight decay 1e-3.
    pub fn categorization() -> Self {
        Self {
            batch_size: 128,
            dropout: 0.2,
            weight_decay: 1e-3,
            ..Self::classification()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "classification" => Ok(Self::classification()),
            "categorization" => Ok(Self::categorization()),
            other => Err(Error::Config(format!("unknown leakage preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.hidden.iter().all(|&h| h >= 1),
            Config,
            "hidden sizes must be positive"
        );
        ensure!(self.batch_size >= 2, Config, "batch size must be at least 2");
        ensure!(
            (0.0..1.0).contains(&self.dropout),
            Config,
            "dropout must lie in [0,1), got {}",
            self.dropout
        );
        ensure!(self.weight_decay >= 0.0, Config, "weight decay must be non-negative");
        ensure!(self.min_delta >= 0.0, Config, "min_delta must be non-negative");
        ensure!(self.max_epochs >= 1, Config, "max_epochs must be at least 1");
        self.adam().validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.betas.0,
            beta2: self.betas.1,
            ..AdamConfig::default()
        }
    }
}

const BN_MOMENTUM: f64 = 0.1;
const BN_EPSILON: f64 = 1e-5;

/// Offsets of one dense layer's parameters inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq)]
struct DenseSlots {
    inputs: usize,
    outputs: usize,
    weight: usize,
    bias: usize,
    /// `(gamma, beta)` offsets for hidden layers.
    norm: Option<(usize, usize)>,
}

/// Hidden layers are Linear → BatchNorm → ReLU → Dropout; the output layer
/// is a plain linear map to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LeakageModel {
    layers: Vec<DenseSlots>,
    params: Vec<f64>,
    running_mean: Vec<Vec<f64>>,
    running_var: Vec<Vec<f64>>,
    dropout: f64,
}

struct HiddenCache {
    input: Vec<f64>,
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
    activated: Vec<f64>,
    keep: Vec<f64>,
}

impl LeakageModel {
    pub fn new(inputs: usize, hidden: &[usize], num_classes: usize, dropout: f64, seed: u64) -> Result<Self> {
        ensure!(inputs >= 1 && num_classes >= 2, Config, "need ≥1 input and ≥2 classes");
        ensure!((0.0..1.0).contains(&dropout), Config, "dropout must lie in [0,1)");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut params = Vec::new();
        let mut fan_in = inputs;
        let sizes: Vec<usize> = hidden.iter().copied().chain([num_classes]).collect();
        for (i, &out) in sizes.iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight = params.len();
            params.extend((0..fan_in * out).map(|_| rng.random_range(-bound..bound)));
            let bias = params.len();
            params.extend((0..out).map(|_| rng.random_range(-bound..bound)));
            let norm = (i + 1 < sizes.len()).then(|| {
                let gamma = params.len();
                params.extend(std::iter::repeat_n(1.0, out));
                let beta = params.len();
                params.extend(std::iter::repeat_n(0.0, out));
                (gamma, beta)
            });
            layers.push(DenseSlots {
                inputs: fan_in,
                outputs: out,
                weight,
                bias,
                norm,
            });
            fan_in = out;
        }
        let running_mean = hidden.iter().map(|&h| vec![0.0; h]).collect();
        let running_var = hidden.iter().map(|&h| vec![1.0; h]).collect();
        Ok(Self {
            layers,
            params,
            running_mean,
            running_var,
            dropout,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.outputs).collect()
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    fn affine(&self, layer: &DenseSlots, input: &[f64], batch: usize) -> Vec<f64> {
        let (n, o) = (layer.inputs, layer.outputs);
        let mut out = Vec::with_capacity(batch * o);
        let bias = &self.params[layer.bias..layer.bias + o];
        for _ in 0..batch {
            out.extend_from_slice(bias);
        }
        gemm(
            batch,
            n,
            o,
            input,
            false,
            &self.params[layer.weight..layer.weight + n * o],
            false,
            &mut out,
            true,
        );
        out
    }

    /// Inference-mode logits (running batch-norm statistics, no dropout).
    pub fn logits(&self, features: &[f64], batch: usize) -> Result<Vec<f64>> {
        ensure!(
            features.len() == batch * self.input_dim(),
            Dimension,
            "expected {batch}×{} features, got {}",
            self.input_dim(),
            features.len()
        );
        let mut h = features.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut a = self.affine(layer, &h, batch);
            if let Some((g, b)) = layer.norm {
                let o = layer.outputs;
                let (mean, var) = (&self.running_mean[l], &self.running_var[l]);
                for row in a.chunks_exact_mut(o) {
                    for j in 0..o {
                        let xhat = (row[j] - mean[j]) / (var[j] + BN_EPSILON).sqrt();
                        row[j] = (self.params[g + j] * xhat + self.params[b + j]).max(0.0);
                    }
                }
            }
            h = a;
        }
        Ok(h)
    }

    /// Softmax probabilities per record in inference mode.
    pub fn probabilities(&self, features: &[f64], batch: usize) -> Result<Vec<f64>> {
        let mut logits = self.logits(features, batch)?;
        let classes = self.layers.last().expect("output layer").outputs;
        for row in logits.chunks_exact_mut(classes) {
            softmax_in_place(row);
        }
        Ok(logits)
    }

    /// One optimization step on a batch in training mode; returns the mean
    /// cross-entropy before the update and fills `grads`.
    fn train_batch(&mut self, features: &[f64], labels: &[usize], rng: &mut ChaCha8Rng, grads: &mut [f64]) -> f64 {
        let batch = labels.len();
        let bf = batch as f64;
        let hidden = self.layers.len() - 1;
        let mut caches: Vec<HiddenCache> = Vec::with_capacity(hidden);
        let mut h = features.to_vec();
        for l in 0..hidden {
            let layer = self.layers[l];
            let o = layer.outputs;
            let (g, b) = layer.norm.expect("hidden layers are normalized");
            let mut a = self.affine(&layer, &h, batch);
            let mut mean = vec![0.0; o];
            let mut var = vec![0.0; o];
            for row in a.chunks_exact(o) {
                for j in 0..o {
                    mean[j] += row[j];
                }
            }
            mean.iter_mut().for_each(|m| *m /= bf);
            for row in a.chunks_exact(o) {
                for j in 0..o {
                    var[j] += (row[j] - mean[j]).powi(2);
                }
            }
            var.iter_mut().for_each(|v| *v /= bf);
            for j in 0..o {
                self.running_mean[l][j] = (1.0 - BN_MOMENTUM) * self.running_mean[l][j] + BN_MOMENTUM * mean[j];
                let unbiased = var[j] * bf / (bf - 1.0);
                self.running_var[l][j] = (1.0 - BN_MOMENTUM) * self.running_var[l][j] + BN_MOMENTUM * unbiased;
            }
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
            let keep_scale = 1.0 / (1.0 - self.dropout);
            let mut normalized = a.clone();
            let mut keep = vec![keep_scale; batch * o];
            for (r, row) in normalized.chunks_exact_mut(o).enumerate() {
                for j in 0..o {
                    let xhat = (row[j] - mean[j]) * inv_std[j];
                    row[j] = xhat;
                    let z = self.params[g + j] * xhat + self.params[b + j];
                    let idx = r * o + j;
                    if self.dropout > 0.0 && rng.random::<f64>() < self.dropout {
                        keep[idx] = 0.0;
                    }
                    a[idx] = z.max(0.0) * keep[idx];
                    if z <= 0.0 {
                        keep[idx] = 0.0;
                    }
                }
            }
            caches.push(HiddenCache {
                input: std::mem::replace(&mut h, a),
                normalized,
                inv_std,
                activated: Vec::new(),
                keep,
            });
        }
        let out_layer = self.layers[hidden];
        let classes = out_layer.outputs;
        let mut logits = self.affine(&out_layer, &h, batch);
        let mut loss = 0.0;
        for (row, &label) in logits.chunks_exact_mut(classes).zip(labels) {
            softmax_in_place(row);
            loss -= row[label].max(f64::MIN_POSITIVE).ln();
            row[label] -= 1.0;
            row.iter_mut().for_each(|v| *v /= bf);
        }
        if let Some(last) = caches.last_mut() {
            last.activated = h;
        } else {
            caches.push(HiddenCache {
                input: Vec::new(),
                normalized: Vec::new(),
                inv_std: Vec::new(),
                activated: h,
                keep: Vec::new(),
            });
        }

        grads.fill(0.0);
        let mut upstream = logits;
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let (n, o) = (layer.inputs, layer.outputs);
            let mut dz = upstream;
            if let Some((g, b)) = layer.norm {
                let cache = &caches[l];
                // ReLU and dropout share one multiplicative mask.
                for (d, k) in dz.iter_mut().zip(&cache.keep) {
                    *d *= k;
                }
                let mut sum_d = vec![0.0; o];
                let mut sum_dx = vec![0.0; o];
                for (drow, xrow) in dz.chunks_exact(o).zip(cache.normalized.chunks_exact(o)) {
                    for j in 0..o {
                        sum_d[j] += drow[j];
                        sum_dx[j] += drow[j] * xrow[j];
                    }
                }
                grads[g..g + o].copy_from_slice(&sum_dx);
                grads[b..b + o].copy_from_slice(&sum_d);
                for (drow, xrow) in dz.chunks_exact_mut(o).zip(cache.normalized.chunks_exact(o)) {
                    for j in 0..o {
                        let gamma = self.params[g + j];
                        drow[j] = gamma * cache.inv_std[j] / bf * (bf * drow[j] - sum_d[j] - xrow[j] * sum_dx[j]);
                    }
                }
            }
            let input: &[f64] = if l == hidden {
                &caches.last().expect("cache").activated
            } else {
                &caches[l].input
            };
            gemm(
                n,
                batch,
                o,
                input,
                true,
                &dz,
                false,
                &mut grads[layer.weight..layer.weight + n * o],
                false,
            );
            for row in dz.chunks_exact(o) {
                for (acc, v) in grads[layer.bias..layer.bias + o].iter_mut().zip(row) {
                    *acc += v;
                }
            }
            if l > 0 {
                let mut dh = vec![0.0; batch * n];
                gemm(
                    batch,
                    o,
                    n,
                    &dz,
                    false,
                    &self.params[layer.weight..layer.weight + n * o],
                    true,
                    &mut dh,
                    false,
                );
                upstream = dh;
            } else {
                upstream = Vec::new();
            }
        }
        loss / bf
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.input_dim() as u32).to_le_bytes());
        let hidden = self.hidden_sizes();
        out.extend_from_slice(&(hidden.len() as u32).to_le_bytes());
        for h in &hidden {
            out.extend_from_slice(&(*h as u32).to_le_bytes());
        }
        let classes = self.layers.last().expect("output layer").outputs;
        out.extend_from_slice(&(classes as u32).to_le_bytes());
        out.extend_from_slice(&self.dropout.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for stream in std::iter::once(&self.params)
            .chain(&self.running_mean)
            .chain(&self.running_var)
        {
            for v in stream {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        ensure!(r.take(4)? == MODEL_MAGIC, Format, "not a leakage model file");
        let version = r.u32()?;
        ensure!(version == MODEL_VERSION, Format, "unsupported model version {version}");
        let inputs = r.u32()? as usize;
        let n_hidden = r.u32()? as usize;
        ensure!(n_hidden <= 64, Format, "implausible hidden layer count {n_hidden}");
        let hidden = (0..n_hidden)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let classes = r.u32()? as usize;
        let dropout = r.f64()?;
        let mut model = Self::new(inputs, &hidden, classes, dropout, 0).map_err(|e| Error::Format(e.to_string()))?;
        let count = r.u64()? as usize;
        ensure!(
            count == model.params.len(),
            Format,
            "parameter count {count} does not match the architecture"
        );
        for v in model.params.iter_mut() {
            *v = r.f64()?;
        }
        for stream in model.running_mean.iter_mut().chain(model.running_var.iter_mut()) {
            for v in stream.iter_mut() {
                *v = r.f64()?;
            }
        }
        ensure!(r.pos == bytes.len(), Format, "trailing bytes after model");
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Mean inference-mode cross-entropy and top-1 accuracy.
pub fn evaluate_loss(model: &LeakageModel, data: &HashDataset) -> Result<(f64, f64)> {
    ensure!(!data.is_empty(), Input, "evaluation set is empty");
    let probs = model.probabilities(&data.features(), data.len())?;
    let classes = data.num_classes();
    let mut loss = 0.0;
    let mut correct = 0;
    for (row, r) in probs.chunks_exact(classes).zip(data.records()) {
        loss -= row[r.label].max(f64::MIN_POSITIVE).ln();
        if ranked_classes(row)[0] == r.label {
            correct += 1;
        }
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

/// Adam on cross-entropy with mini-batches reshuffled every epoch; stops
/// once the validation loss has failed to improve on its best by more than
/// `min_delta` for `patience` consecutive epochs, or after `max_epochs`.
pub fn train_leakage_model(
    train: &HashDataset,
    val: &HashDataset,
    config: &LeakageConfig,
) -> Result<(LeakageModel, TrainingHistory)> {
    config.validate()?;
    ensure!(
        !train.is_empty() && !val.is_empty(),
        Input,
        "training and validation splits must be non-empty"
    );
    ensure!(train.num_classes() >= 2, Input, "need at least two classes");
    ensure!(
        train.num_classes() == val.num_classes() && train.bits() == val.bits(),
        Input,
        "train and validation splits disagree on classes or bits"
    );
    let bits = train.bits();
    let mut model = LeakageModel::new(bits, &config.hidden, train.num_classes(), config.dropout, config.seed)?;
    let mut adam = AdamState::new(model.params.len(), config.adam())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0D47_A5E7);
    let features = train.features();
    let labels: Vec<usize> = train.records().iter().map(|r| r.label).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grads = vec![0.0; model.params.len()];
    let mut history = TrainingHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        val_accuracy: Vec::new(),
        best_val_loss: f64::INFINITY,
        epochs_run: 0,
        stopped_early: false,
    };
    let mut waited = 0;
    let (mut batch_x, mut batch_y) = (Vec::new(), Vec::new());
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0;
        for chunk in order.chunks(config.batch_size) {
            // Batch-norm statistics are undefined for a single record.
            if chunk.len() < 2 {
                continue;
            }
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.extend_from_slice(&features[i * bits..(i + 1) * bits]);
                batch_y.push(labels[i]);
            }
            let loss = model.train_batch(&batch_x, &batch_y, &mut rng, &mut grads);
            if !loss.is_finite() {
                return Err(Error::Training(format!("loss became {loss} in epoch {epoch}")));
            }
            if config.weight_decay > 0.0 {
                for (g, p) in grads.iter_mut().zip(&model.params) {
                    *g += config.weight_decay * p;
                }
            }
            adam.step(&mut model.params, &grads)
                .map_err(|e| Error::Training(e.to_string()))?;
            epoch_loss += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let (val_loss, val_acc) = evaluate_loss(&model, val)?;
        if !val_loss.is_finite() {
            return Err(Error::Training(format!("validation loss became {val_loss}")));
        }
        history
            .train_loss
            .push(if seen > 0 { epoch_loss / seen as f64 } else { f64::NAN });
        history.val_loss.push(val_loss);
        history.val_accuracy.push(val_acc);
        history.epochs_run = epoch + 1;
        log::debug!("epoch {}: val loss {val_loss:.5}, val acc {val_acc:.4}", epoch + 1);
        if val_loss < history.best_val_loss - config.min_delta {
            history.best_val_loss = val_loss;
            waited = 0;
        } else {
            waited += 1;
            if waited >= config.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    Ok((model, history))
}

/// Anything that maps `{0,1}` hash features to class logits.
pub trait HashClassifier: Sync {
    fn num_classes(&self) -> usize;
    fn logits(&self, features: &[f64], batch: usize) -> Result<Vec<f64>>;
}

impl HashClassifier for LeakageModel {
    fn num_classes(&self) -> usize {
        self.layers.last().expect("output layer").outputs
    }

    fn logits(&self, features: &[f64], batch: usize) -> Result<Vec<f64>> {
        LeakageModel::logits(self, features, batch)
    }
}

/// Class indices by descending logit; equal logits rank the lower index first.
pub fn ranked_classes(logits: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrecision {
    pub class: usize,
    pub correct: usize,
    pub total: usize,
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKReport {
    pub ks: Vec<usize>,
    pub accuracy: Vec<f64>,
    /// Share of each class's records whose top-1 prediction is correct.
    pub per_class: Vec<ClassPrecision>,
}

impl TopKReport {
    pub fn accuracy_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.accuracy[i])
    }
}

pub fn evaluate_topk<C: HashClassifier + ?Sized>(model: &C, test: &HashDataset, ks: &[usize]) -> Result<TopKReport> {
    ensure!(!test.is_empty(), Input, "test set is empty");
    ensure!(
        !ks.is_empty() && ks.windows(2).all(|w| w[0] < w[1]) && ks[0] >= 1,
        Input,
        "ks must be a non-empty ascending list of positive values"
    );
    ensure!(
        model.num_classes() == test.num_classes(),
        Input,
        "model predicts {} classes, test set has {}",
        model.num_classes(),
        test.num_classes()
    );
    let bits = test.bits();
    let features = test.features();
    let chunks: Vec<(usize, usize)> = (0..test.len())
        .step_by(256)
        .map(|s| (s, (s + 256).min(test.len())))
        .collect();
    let ranks: Vec<usize> = map_ordered(&chunks, |_, &(s, e)| -> Result<Vec<usize>> {
        let logits = model.logits(&features[s * bits..e * bits], e - s)?;
        Ok(logits
            .chunks_exact(model.num_classes())
            .zip(&test.records()[s..e])
            .map(|(row, r)| {
                ranked_classes(row)
                    .iter()
                    .position(|&c| c == r.label)
                    .expect("label is a valid class")
            })
            .collect())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?
    .concat();

    let n = test.len() as f64;
    let accuracy = ks
        .iter()
        .map(|&k| ranks.iter().filter(|&&rank| rank < k).count() as f64 / n)
        .collect();
    let mut per_class: Vec<ClassPrecision> = (0..test.num_classes())
        .map(|class| ClassPrecision {
            class,
            correct: 0,
            total: 0,
            precision: None,
        })
        .collect();
    for (r, &rank) in test.records().iter().zip(&ranks) {
        per_class[r.label].total += 1;
        if rank == 0 {
            per_class[r.label].correct += 1;
        }
    }
    for c in &mut per_class {
        c.precision = (c.total > 0).then(|| c.correct as f64 / c.total as f64);
    }
    Ok(TopKReport {
        ks: ks.to_vec(),
        accuracy,
        per_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSummary {
    pub k: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageStudy {
    pub summary: Vec<KSummary>,
    pub runs: Vec<TopKReport>,
    pub histories: Vec<TrainingHistory>,
}

/// Repeats split-train-evaluate `repeats` times; run `r` uses seed
/// `config.seed + r` for both the stratified splits and training.
pub fn leakage_study(
    pool: &HashDataset,
    config: &LeakageConfig,
    ks: &[usize],
    repeats: usize,
    val_fraction: f64,
    test_fraction: f64,
) -> Result<LeakageStudy> {
    ensure!(repeats >= 1, Config, "repeats must be at least 1");
    let mut runs = Vec::new();
    let mut histories = Vec::new();
    for r in 0..repeats as u64 {
        let seed = config.seed.wrapping_add(r);
        let (rest, test) = stratified_split(pool, test_fraction, Split::Test, seed)?;
        let (train, val) = stratified_split(&rest, val_fraction, Split::Val, seed ^ 0x5EED)?;
        let run_cfg = LeakageConfig { seed, ..config.clone() };
        let (model, history) = train_leakage_model(&train, &val, &run_cfg)?;
        runs.push(evaluate_topk(&model, &test, ks)?);
        histories.push(history);
    }
    let summary = ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let acc: Vec<f64> = runs.iter().map(|r| r.accuracy[i]).collect();
            let (mean, std) = mean_std(&acc).expect("repeats ≥ 1");
            KSummary { k, mean, std }
        })
        .collect();
    Ok(LeakageStudy {
        summary,
        runs,
        histories,
    })
}
