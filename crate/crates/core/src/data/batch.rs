use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// A minibatch: labels plus a `len × fields` index table.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    labels: Vec<u8>,
    indices: Vec<u32>,
    fields: usize,
}

impl Batch {
    pub fn new(labels: Vec<u8>, indices: Vec<u32>, fields: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Arity("batch needs at least one sample".into()));
        }
        if fields == 0 || indices.len() != labels.len() * fields {
            return Err(Error::Dimension(format!(
                "{} indices for {} samples of {fields} fields",
                indices.len(),
                labels.len()
            )));
        }
        Ok(Self { labels, indices, fields })
    }

    /// Gathers the listed dataset rows into a batch.
    pub fn from_rows(ds: &Dataset, rows: &[usize]) -> Result<Self> {
        let mut labels = Vec::with_capacity(rows.len());
        let mut indices = Vec::with_capacity(rows.len() * ds.num_fields());
        for &r in rows {
            labels.push(ds.label(r));
            indices.extend_from_slice(ds.sample(r));
        }
        Self::new(labels, indices, ds.num_fields())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_fields(&self) -> usize {
        self.fields
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn sample(&self, s: usize) -> &[u32] {
        &self.indices[s * self.fields..(s + 1) * self.fields]
    }
}

/// Iterator over one shuffled epoch. Owns its permutation, so independent
/// iterators over the same dataset can run on different threads.
#[derive(Debug, Clone)]
pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
}

impl BatchIter<'_> {
    /// Dataset rows in emission order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let rows = &self.order[self.pos..end];
        self.pos = end;
        Some(Batch::from_rows(self.dataset, rows).expect("rows come from the dataset"))
    }
}

/// Shuffles `dataset` with `epoch_seed` and yields batches of `batch_size`,
/// the final one possibly partial.
pub fn batch_iter(dataset: &Dataset, batch_size: usize, epoch_seed: u64) -> Result<BatchIter<'_>> {
    if batch_size == 0 {
        return Err(Error::Arity("batch_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    Ok(BatchIter { dataset, order, pos: 0, batch_size })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FieldSchema;

    fn dataset(n: usize) -> Dataset {
        let mut f = FieldSchema::new("f");
        let idx: Vec<u32> = (0..n).map(|i| f.intern(&i.to_string())).collect();
        Dataset::new(vec![f], (0..n).map(|i| (i % 2) as u8).collect(), idx).unwrap()
    }

    #[test]
    fn sizes_include_partial_tail() {
        let d = dataset(10);
        let sizes: Vec<usize> = batch_iter(&d, 4, 0).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn seed_controls_order() {
        let d = dataset(10);
        let first = |seed| batch_iter(&d, 4, seed).unwrap().next().unwrap();
        assert_eq!(first(5), first(5));
        assert_ne!(first(5), first(6));
    }

    #[test]
    fn every_sample_exactly_once() {
        let d = dataset(37);
        let mut seen: Vec<u32> =
            batch_iter(&d, 5, 9).unwrap().flat_map(|b| (0..b.len()).map(move |s| b.sample(s)[0])).collect();
        seen.sort_unstable();
        assert_eq!(seen, (1..=37).collect::<Vec<u32>>());
    }

    #[test]
    fn zero_batch_size_errors() {
        assert!(batch_iter(&dataset(3), 0, 0).is_err());
    }
}
