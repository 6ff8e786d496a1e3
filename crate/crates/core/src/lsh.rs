//! Random-hyperplane LSH on embeddings: hashing matrix, binarization, hex
//! codec, normalized Hamming distance, and the hash database.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure, Error, Result};
use crate::image::ImageTensor;
use crate::network::{ByteReader, EmbeddingNetwork};
use crate::tensor_math::{linear_backward_input, linear_forward, Tensor};

pub const DEFAULT_HASH_BITS: usize = 96;
pub const DB_MAGIC: &[u8; 4] = b"PHDB";
pub const DB_VERSION: u32 = 1;

/// `m×k` matrix whose columns are the LSH hyperplane normals.
#[derive(Debug, Clone, PartialEq)]
pub struct HashingMatrix {
    values: Tensor,
    seed: u64,
}

impl HashingMatrix {
    /// I.i.d. standard-normal entries from a seeded generator.
    pub fn generate(m: usize, k: usize, seed: u64) -> Result<Self> {
        ensure!(m >= 1 && k >= 1, Config, "hashing matrix needs m, k ≥ 1");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Tensor::from_fn(&[m, k], |_| StandardNormal.sample(&mut rng));
        Self::from_values(values, seed)
    }

    pub fn from_values(values: Tensor, seed: u64) -> Result<Self> {
        ensure!(values.rank() == 2, Dimension, "hashing matrix must be m×k");
        ensure!(values.is_finite(), Input, "hashing matrix has non-finite entries");
        let (m, k) = (values.shape()[0], values.shape()[1]);
        for j in 0..k {
            ensure!(
                (0..m).any(|i| values.data()[i * k + j] != 0.0),
                Input,
                "hashing matrix column {j} is all zero"
            );
        }
        Ok(Self { values, seed })
    }

    pub fn embedding_dim(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn bits(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    /// `y = B·z`, i.e. `y_j = Σᵢ zᵢ B_ij`.
    pub fn project(&self, z: &Tensor) -> Result<Tensor> {
        linear_forward(z, &self.values, None)
    }

    /// Gradient with respect to `z` of `⟨project(z), upstream⟩`.
    pub fn project_backward(&self, upstream: &Tensor) -> Result<Tensor> {
        linear_backward_input(&[self.embedding_dim()], &self.values, upstream)
    }

    /// Copy with column `j` negated.
    pub fn negate_column(&self, j: usize) -> Result<Self> {
        ensure!(j < self.bits(), Input, "column {j} out of range");
        let k = self.bits();
        let mut values = self.values.clone();
        for i in 0..self.embedding_dim() {
            values.data_mut()[i * k + j] *= -1.0;
        }
        Ok(Self {
            values,
            seed: self.seed,
        })
    }
}

/// Binary perceptual hash; bit 0 renders as the most significant bit of the
/// first hex digit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PerceptualHash {
    bits: Vec<bool>,
}

impl PerceptualHash {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn zeros(k: usize) -> Self {
        Self { bits: vec![false; k] }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bit(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn complement(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Bits as `{0, 1}` reals.
    pub fn to_unit_vector(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn to_hex(&self) -> String {
        self.bits
            .chunks(4)
            .map(|nibble| {
                let v = nibble
                    .iter()
                    .enumerate()
                    .fold(0u32, |acc, (i, &b)| acc | (u32::from(b) << (3 - i)));
                char::from_digit(v, 16).unwrap()
            })
            .collect()
    }

    /// Parses exactly `ceil(k/4)` lowercase hex digits; padding bits past `k`
    /// must be zero.
    pub fn from_hex(hex: &str, k: usize) -> Result<Self> {
        ensure!(k >= 1, Format, "hash length must be positive");
        let digits = k.div_ceil(4);
        ensure!(
            hex.len() == digits,
            Format,
            "expected {digits} hex digits for {k} bits, got {}",
            hex.len()
        );
        let mut bits = Vec::with_capacity(digits * 4);
        for ch in hex.chars() {
            ensure!(
                ch.is_ascii_digit() || ('a'..='f').contains(&ch),
                Format,
                "invalid hex character {ch:?}"
            );
            let v = ch.to_digit(16).unwrap();
            bits.extend((0..4).map(|i| v & (1 << (3 - i)) != 0));
        }
        ensure!(bits[k..].iter().all(|b| !b), Format, "non-zero padding bits in {hex}");
        bits.truncate(k);
        Ok(Self { bits })
    }

    /// Bits packed MSB-first into `ceil(k/8)` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.bits
            .chunks(8)
            .map(|byte| {
                byte.iter()
                    .enumerate()
                    .fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << (7 - i)))
            })
            .collect()
    }

    pub fn from_bytes(bytes: &[u8], k: usize) -> Result<Self> {
        ensure!(
            bytes.len() == k.div_ceil(8),
            Format,
            "expected {} bytes for {k} bits",
            k.div_ceil(8)
        );
        let mut bits: Vec<bool> = bytes
            .iter()
            .flat_map(|&b| (0..8).map(move |i| b & (1 << (7 - i)) != 0))
            .collect();
        ensure!(bits[k..].iter().all(|b| !b), Format, "non-zero padding bits");
        bits.truncate(k);
        Ok(Self { bits })
    }
}

impl fmt::Display for PerceptualHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Heaviside binarization; `yᵢ = 0` maps to bit 0.
pub fn binarize(y: &Tensor) -> PerceptualHash {
    PerceptualHash::from_bits(y.data().iter().map(|&v| v > 0.0).collect())
}

/// `binarize(B · embed(net, image))`.
pub fn compute_hash(net: &EmbeddingNetwork, matrix: &HashingMatrix, image: &ImageTensor) -> Result<PerceptualHash> {
    check_pipeline(net, matrix)?;
    let z = net.embed(image)?;
    Ok(binarize(&matrix.project(&z)?))
}

pub(crate) fn check_pipeline(net: &EmbeddingNetwork, matrix: &HashingMatrix) -> Result<()> {
    ensure!(
        net.output_dim() == matrix.embedding_dim(),
        Config,
        "network emits {} features, hashing matrix expects {}",
        net.output_dim(),
        matrix.embedding_dim()
    );
    Ok(())
}

/// Normalized Hamming distance: fraction of differing bits.
pub fn hamming_distance(a: &PerceptualHash, b: &PerceptualHash) -> Result<f64> {
    ensure!(
        a.len() == b.len() && !a.is_empty(),
        Input,
        "hash lengths differ or are empty: {} vs {}",
        a.len(),
        b.len()
    );
    let differing = a.bits.iter().zip(&b.bits).filter(|(x, y)| x != y).count();
    Ok(differing as f64 / a.len() as f64)
}

/// Ordered list of reference hashes sharing one bit length.
#[derive(Debug, Clone, PartialEq)]
pub struct HashDatabase {
    bits: usize,
    entries: Vec<PerceptualHash>,
    labels: Option<Vec<String>>,
}

impl HashDatabase {
    pub fn new(bits: usize) -> Self {
        Self {
            bits,
            entries: Vec::new(),
            labels: None,
        }
    }

    pub fn from_entries(bits: usize, entries: Vec<PerceptualHash>) -> Result<Self> {
        let mut db = Self::new(bits);
        for e in entries {
            db.push(e)?;
        }
        Ok(db)
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn entries(&self) -> &[PerceptualHash] {
        &self.entries
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, hash: PerceptualHash) -> Result<()> {
        ensure!(
            self.labels.is_none(),
            Input,
            "database carries labels; use push_labeled"
        );
        self.push_inner(hash)
    }

    pub fn push_labeled(&mut self, hash: PerceptualHash, label: impl Into<String>) -> Result<()> {
        ensure!(
            self.labels.is_some() || self.entries.is_empty(),
            Input,
            "cannot label a database that already has unlabeled entries"
        );
        self.push_inner(hash)?;
        self.labels.get_or_insert_with(Vec::new).push(label.into());
        Ok(())
    }

    fn push_inner(&mut self, hash: PerceptualHash) -> Result<()> {
        ensure!(
            hash.len() == self.bits,
            Input,
            "hash has {} bits, database holds {}",
            hash.len(),
            self.bits
        );
        self.entries.push(hash);
        Ok(())
    }

    /// Entry with the smallest Hamming distance to `query`; ties go to the
    /// lowest index.
    pub fn nearest(&self, query: &PerceptualHash) -> Result<(usize, &PerceptualHash, f64)> {
        ensure!(!self.entries.is_empty(), Lookup, "hash database is empty");
        ensure!(
            query.len() == self.bits,
            Input,
            "query has {} bits, database holds {}",
            query.len(),
            self.bits
        );
        let mut best = (0, f64::INFINITY);
        for (i, e) in self.entries.iter().enumerate() {
            let d = hamming_distance(e, query)?;
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok((best.0, &self.entries[best.0], best.1))
    }

    pub fn contains(&self, hash: &PerceptualHash) -> bool {
        self.entries.contains(hash)
    }

    /// `PHDB` layout: magic, version u32, k u32, count u64 (little-endian),
    /// then `ceil(k/8)` MSB-first bytes per entry, then a label flag byte and,
    /// when set, a u32 length + UTF-8 bytes per entry.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(21 + self.entries.len() * self.bits.div_ceil(8));
        out.extend_from_slice(DB_MAGIC);
        out.extend_from_slice(&DB_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.bits as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&e.to_bytes());
        }
        match &self.labels {
            None => out.push(0),
            Some(labels) => {
                out.push(1);
                for l in labels {
                    out.extend_from_slice(&(l.len() as u32).to_le_bytes());
                    out.extend_from_slice(l.as_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        ensure!(r.take(4)? == DB_MAGIC, Format, "not a hash database (bad magic)");
        let version = r.u32()?;
        ensure!(version == DB_VERSION, Format, "unsupported database version {version}");
        let bits = r.u32()? as usize;
        ensure!(bits >= 1, Format, "database hash length is zero");
        let count = r.u64()? as usize;
        let stride = bits.div_ceil(8);
        ensure!(
            count.checked_mul(stride).is_some_and(|n| n <= bytes.len()),
            Format,
            "database claims {count} entries, file too short"
        );
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            entries.push(PerceptualHash::from_bytes(r.take(stride)?, bits)?);
        }
        let labels = match r.take(1)?[0] {
            0 => None,
            1 => {
                let mut labels = Vec::with_capacity(count);
                for _ in 0..count {
                    let len = r.u32()? as usize;
                    let raw = r.take(len)?;
                    labels
                        .push(String::from_utf8(raw.to_vec()).map_err(|_| Error::Format("label is not UTF-8".into()))?);
                }
                Some(labels)
            }
            flag => return Err(Error::Format(format!("invalid label flag {flag}"))),
        };
        ensure!(r.pos == bytes.len(), Format, "trailing bytes after database");
        Ok(Self { bits, entries, labels })
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

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_hash(rng: &mut impl Rng, k: usize) -> PerceptualHash {
        PerceptualHash::from_bits((0..k).map(|_| rng.random_bool(0.5)).collect())
    }

    #[test]
    fn matrix_generation() {
        let a = HashingMatrix::generate(128, 96, 5).unwrap();
        assert_eq!(a.values().shape(), &[128, 96]);
        assert_eq!(a, HashingMatrix::generate(128, 96, 5).unwrap());
        assert_ne!(a.values(), HashingMatrix::generate(128, 96, 6).unwrap().values());
        assert!(HashingMatrix::generate(0, 4, 1).is_err());
        let zero_col = Tensor::new(vec![2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(HashingMatrix::from_values(zero_col, 0).is_err());
    }

    #[test]
    fn binarize_boundary_and_scale() {
        let h = binarize(&Tensor::from_vec(vec![0.3, -0.2]));
        assert_eq!(h.bits(), &[true, false]);
        assert!(binarize(&Tensor::zeros(&[5])).bits().iter().all(|b| !b));
        let b = HashingMatrix::generate(6, 10, 1).unwrap();
        let z = Tensor::from_vec(vec![0.5, -1.0, 2.0, 0.1, -0.3, 0.0]);
        assert_eq!(
            binarize(&b.project(&z).unwrap()),
            binarize(&b.project(&z.scale(2.0)).unwrap())
        );
    }

    #[test]
    fn hamming_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = random_hash(&mut rng, 96);
        assert_eq!(hamming_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(hamming_distance(&a, &a.complement()).unwrap(), 1.0);
        let mut bits = a.bits().to_vec();
        for b in bits.iter_mut().take(24) {
            *b = !*b;
        }
        assert_eq!(hamming_distance(&a, &PerceptualHash::from_bits(bits)).unwrap(), 0.25);
        assert!(hamming_distance(&a, &PerceptualHash::zeros(95)).is_err());
    }

    #[test]
    fn hex_ordering() {
        assert_eq!(PerceptualHash::zeros(96).to_hex(), "000000000000000000000000");
        let mut bits = vec![false; 96];
        bits[0] = true;
        assert_eq!(PerceptualHash::from_bits(bits).to_hex(), "800000000000000000000000");
        let h = PerceptualHash::from_bits(vec![true, false, true, true, true]);
        assert_eq!(h.to_hex(), "b8");
        assert_eq!(PerceptualHash::from_hex("b8", 5).unwrap(), h);
    }

    #[test]
    fn hex_parse_errors() {
        assert!(PerceptualHash::from_hex("00", 96).is_err());
        assert!(PerceptualHash::from_hex("0000000000000000000000g0", 96).is_err());
        assert!(PerceptualHash::from_hex("00000000000000000000000A", 96).is_err());
        // 5 bits occupy two digits; low 3 bits of the second must be zero
        assert!(PerceptualHash::from_hex("b9", 5).is_err());
    }

    #[test]
    fn nearest_lookup() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let entries: Vec<_> = (0..10).map(|_| random_hash(&mut rng, 16)).collect();
        let db = HashDatabase::from_entries(16, entries.clone()).unwrap();
        let (i, h, d) = db.nearest(&entries[7]).unwrap();
        assert_eq!(i, entries.iter().position(|e| e == &entries[7]).unwrap());
        assert_eq!(d, 0.0);
        assert_eq!(h, &entries[7]);

        let q = PerceptualHash::zeros(4);
        let a = PerceptualHash::from_bits(vec![true, false, false, false]);
        let b = PerceptualHash::from_bits(vec![false, false, false, true]);
        let db = HashDatabase::from_entries(4, vec![a, b]).unwrap();
        assert_eq!(db.nearest(&q).unwrap().0, 0);

        assert!(matches!(HashDatabase::new(4).nearest(&q), Err(Error::Lookup(_))));
    }

    #[test]
    fn database_bytes_round_trip() {
        let empty = HashDatabase::new(96);
        assert_eq!(HashDatabase::from_bytes(&empty.to_bytes()).unwrap(), empty);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let one = HashDatabase::from_entries(96, vec![random_hash(&mut rng, 96)]).unwrap();
        let bytes = one.to_bytes();
        assert_eq!(bytes.len(), 4 + 4 + 4 + 8 + 12 + 1);
        assert_eq!(HashDatabase::from_bytes(&bytes).unwrap().to_bytes(), bytes);

        let mut labeled = HashDatabase::new(13);
        labeled.push_labeled(random_hash(&mut rng, 13), "dogs/a.png").unwrap();
        labeled.push_labeled(random_hash(&mut rng, 13), "").unwrap();
        assert_eq!(HashDatabase::from_bytes(&labeled.to_bytes()).unwrap(), labeled);
        assert!(labeled.push(random_hash(&mut rng, 13)).is_err());
    }

    #[test]
    fn database_rejects_corruption() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let db = HashDatabase::from_entries(8, vec![random_hash(&mut rng, 8)]).unwrap();
        let bytes = db.to_bytes();
        let mut bad = bytes.clone();
        bad[1] = b'x';
        assert!(matches!(HashDatabase::from_bytes(&bad), Err(Error::Format(_))));
        let mut bad_version = bytes.clone();
        bad_version[4] = 2;
        assert!(HashDatabase::from_bytes(&bad_version).is_err());
        assert!(HashDatabase::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut huge = bytes;
        huge[12..20].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(HashDatabase::from_bytes(&huge).is_err());
    }
}
