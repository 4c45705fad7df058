//! Multi-field categorical CTR data: CSV ingestion, synthetic generation,
//! train/validation splitting and shuffled batching.

mod batch;
mod csv;
mod synth;

use std::collections::HashMap;

use fnv::FnvHasher;
use std::hash::Hasher;

use crate::error::{Error, Result};

pub use batch::{batch_iter, Batch, BatchIter};
pub use csv::load_csv;
pub use synth::{gen_synthetic, SyntheticSpec};

/// Token written for the reserved out-of-vocabulary slot.
pub const OOV_TOKEN: &str = "__oov__";

/// Vocabulary of one categorical field. Index 0 is always the OOV slot.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSchema {
    pub name: String,
    pub vocab_size: usize,
    index_map: HashMap<String, u32>,
    tokens: Vec<String>,
    hash_buckets: Option<usize>,
}

impl FieldSchema {
    /// Empty vocabulary holding only the OOV slot; grows via [`Self::intern`].
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            vocab_size: 1,
            index_map: HashMap::new(),
            tokens: vec![OOV_TOKEN.to_string()],
            hash_buckets: None,
        }
    }

    /// Fixed-size hashed vocabulary: `index = 1 + hash(token) mod (buckets − 1)`.
    pub fn hashed(name: impl Into<String>, buckets: usize) -> Result<Self> {
        if buckets < 2 {
            return Err(Error::Config(format!("hash_buckets must be >= 2, got {buckets}")));
        }
        Ok(Self {
            name: name.into(),
            vocab_size: buckets,
            index_map: HashMap::new(),
            tokens: Vec::new(),
            hash_buckets: Some(buckets),
        })
    }

    pub fn is_hashed(&self) -> bool {
        self.hash_buckets.is_some()
    }

    /// Returns the index of `token`, adding it to the vocabulary if new.
    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(b) = self.hash_buckets {
            return hashed_index(token, b);
        }
        if let Some(&i) = self.index_map.get(token) {
            return i;
        }
        let i = self.vocab_size as u32;
        self.index_map.insert(token.to_string(), i);
        self.tokens.push(token.to_string());
        self.vocab_size += 1;
        i
    }

    /// Index of `token`, with unseen tokens mapped to the OOV slot.
    pub fn lookup(&self, token: &str) -> u32 {
        match self.hash_buckets {
            Some(b) => hashed_index(token, b),
            None => self.index_map.get(token).copied().unwrap_or(0),
        }
    }

    /// Token text for an index; hashed fields render as `h<index>`.
    pub fn token(&self, index: u32) -> String {
        match self.hash_buckets {
            Some(_) => format!("h{index}"),
            None => self
                .tokens
                .get(index as usize)
                .cloned()
                .unwrap_or_else(|| OOV_TOKEN.to_string()),
        }
    }
}

fn hashed_index(token: &str, buckets: usize) -> u32 {
    1 + (stable_hash(token.as_bytes()) % (buckets as u64 - 1)) as u32
}

/// 64-bit FNV-1a; stable across platforms and releases.
pub(crate) fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Seed of an independent random stream named `stream` under `seed`.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    let mut bytes = seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(stream.as_bytes());
    stable_hash(&bytes)
}

/// Labelled categorical samples, stored as a flat `len × fields` index table.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schemas: Vec<FieldSchema>,
    labels: Vec<u8>,
    indices: Vec<u32>,
}

impl Dataset {
    pub fn new(schemas: Vec<FieldSchema>, labels: Vec<u8>, indices: Vec<u32>) -> Result<Self> {
        let f = schemas.len();
        if f == 0 {
            return Err(Error::Arity("dataset needs at least one field".into()));
        }
        if indices.len() != labels.len() * f {
            return Err(Error::Dimension(format!(
                "{} indices for {} samples of {f} fields",
                indices.len(),
                labels.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::Degenerate(format!("non-binary label {y}")));
        }
        for (pos, &ix) in indices.iter().enumerate() {
            let bound = schemas[pos % f].vocab_size;
            if ix as usize >= bound {
                return Err(Error::IndexOutOfRange { index: ix as usize, bound });
            }
        }
        Ok(Self { schemas, labels, indices })
    }

    pub fn schemas(&self) -> &[FieldSchema] {
        &self.schemas
    }

    pub fn num_fields(&self) -> usize {
        self.schemas.len()
    }

    pub fn vocab_sizes(&self) -> Vec<usize> {
        self.schemas.iter().map(|s| s.vocab_size).collect()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn sample(&self, i: usize) -> &[u32] {
        let f = self.num_fields();
        &self.indices[i * f..(i + 1) * f]
    }

    /// New dataset holding the given rows, in order, with the same schemas.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut labels = Vec::with_capacity(rows.len());
        let mut indices = Vec::with_capacity(rows.len() * self.num_fields());
        for &r in rows {
            labels.push(self.labels[r]);
            indices.extend_from_slice(self.sample(r));
        }
        Dataset { schemas: self.schemas.clone(), labels, indices }
    }

    /// Deterministic 90/10 train/validation split keyed on `(seed, row)`.
    pub fn split(&self, seed: u64) -> (Dataset, Dataset) {
        let (valid, train): (Vec<usize>, Vec<usize>) =
            (0..self.len()).partition(|&i| split_hash(seed, i).is_multiple_of(10));
        (self.subset(&train), self.subset(&valid))
    }

    /// Writes the dataset as CSV (feature columns then `label`).
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        let header: Vec<&str> = self.schemas.iter().map(|s| s.name.as_str()).collect();
        writeln!(w, "{},label", header.join(",")).map_err(io)?;
        for i in 0..self.len() {
            let row: Vec<String> = self
                .sample(i)
                .iter()
                .zip(&self.schemas)
                .map(|(&ix, s)| s.token(ix))
                .collect();
            writeln!(w, "{},{}", row.join(","), self.labels[i]).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

fn split_hash(seed: u64, row: usize) -> u64 {
    let mut bytes = [0u8; 16];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..].copy_from_slice(&(row as u64).to_le_bytes());
    stable_hash(&bytes)
}

/// `count` distinct row indices drawn from `0..n` (all rows when
/// `count >= n`), sorted ascending.
pub fn sample_rows(n: usize, count: usize, seed: u64) -> Vec<usize> {
    use rand::SeedableRng;
    if count >= n {
        return (0..n).collect();
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut rows = rand::seq::index::sample(&mut rng, n, count).into_vec();
    rows.sort_unstable();
    rows
}
