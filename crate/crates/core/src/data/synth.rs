use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, FieldSchema};
use crate::error::{Error, Result};
use crate::scalar::sigmoid;

/// Parameters of the synthetic collapse-prone generator.
///
/// Every token owns a latent vector in `R^latent_dim`; labels follow
/// `Bernoulli(σ(Σ_{i<j} ⟨u_i, u_j⟩ + ε))`. A small `latent_dim` confines all
/// learnable structure to a low-dimensional subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_fields: usize,
    /// Table size per field, including the reserved OOV slot.
    pub vocab_sizes: Vec<usize>,
    pub latent_dim: usize,
    pub noise_std: f64,
    pub num_samples: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_fields == 0 || self.vocab_sizes.len() != self.num_fields {
            return Err(Error::Config(format!(
                "{} vocab sizes for {} fields",
                self.vocab_sizes.len(),
                self.num_fields
            )));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be >= 1".into()));
        }
        if let Some(v) = self.vocab_sizes.iter().find(|&&v| v < 2) {
            return Err(Error::Config(format!("vocab size {v} < 2")));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std {} invalid", self.noise_std)));
        }
        if self.num_samples == 0 {
            return Err(Error::Config("num_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// Draws a synthetic dataset; a pure function of `spec`.
///
/// Latent coordinates have variance `1/√r`, so the interaction logit keeps
/// the same scale for every latent dimension `r`. Tokens are uniform over
/// the non-OOV indices `1..vocab_size`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = spec.latent_dim;
    let latent = Normal::new(0.0, (r as f64).powf(-0.25)).expect("positive std");

    let latents: Vec<Vec<f64>> = spec
        .vocab_sizes
        .iter()
        .map(|&v| (0..v * r).map(|_| latent.sample(&mut rng)).collect())
        .collect();

    let schemas = spec
        .vocab_sizes
        .iter()
        .enumerate()
        .map(|(f, &v)| {
            let mut s = FieldSchema::new(format!("f{f}"));
            for t in 1..v {
                s.intern(&format!("t{t}"));
            }
            s
        })
        .collect();

    let noise = (spec.noise_std > 0.0).then(|| Normal::new(0.0, spec.noise_std).expect("std"));
    let f = spec.num_fields;
    let mut labels = Vec::with_capacity(spec.num_samples);
    let mut indices = Vec::with_capacity(spec.num_samples * f);
    let mut sum = vec![0.0; r];
    for _ in 0..spec.num_samples {
        let row: Vec<u32> =
            spec.vocab_sizes.iter().map(|&v| rng.random_range(1..v as u32)).collect();
        // Σ_{i<j} ⟨u_i,u_j⟩ = ½(‖Σu‖² − Σ‖u‖²)
        sum.iter_mut().for_each(|s| *s = 0.0);
        let mut sq = 0.0;
        for (field, &ix) in row.iter().enumerate() {
            let u = &latents[field][ix as usize * r..(ix as usize + 1) * r];
            for (s, &x) in sum.iter_mut().zip(u) {
                *s += x;
                sq += x * x;
            }
        }
        let mut logit = 0.5 * (sum.iter().map(|s| s * s).sum::<f64>() - sq);
        if let Some(n) = &noise {
            logit += n.sample(&mut rng);
        }
        let y = rng.random::<f64>() < sigmoid(logit);
        labels.push(y as u8);
        indices.extend(row);
    }
    debug_assert_eq!(indices.len(), f * labels.len());
    Dataset::new(schemas, labels, indices)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(noise_std: f64, num_samples: usize) -> SyntheticSpec {
        SyntheticSpec {
            num_fields: 4,
            vocab_sizes: vec![6, 9, 4, 12],
            latent_dim: 2,
            noise_std,
            num_samples,
            seed: 11,
        }
    }

    #[test]
    fn same_spec_same_dataset() {
        let s = spec(0.5, 300);
        assert_eq!(gen_synthetic(&s).unwrap(), gen_synthetic(&s).unwrap());
        let other = SyntheticSpec { seed: 12, ..s.clone() };
        assert_ne!(gen_synthetic(&s).unwrap(), gen_synthetic(&other).unwrap());
    }

    #[test]
    fn indices_skip_the_oov_slot() {
        let d = gen_synthetic(&spec(0.0, 500)).unwrap();
        assert_eq!(d.vocab_sizes(), vec![6, 9, 4, 12]);
        for i in 0..d.len() {
            assert!(d.sample(i).iter().all(|&ix| ix >= 1));
        }
    }

    #[test]
    fn heavy_noise_balances_labels() {
        let d = gen_synthetic(&spec(100.0, 10_000)).unwrap();
        let mean = d.labels().iter().map(|&y| y as f64).sum::<f64>() / d.len() as f64;
        assert!((0.45..=0.55).contains(&mean), "label mean {mean}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(gen_synthetic(&SyntheticSpec { latent_dim: 0, ..spec(0.0, 10) }).is_err());
        assert!(gen_synthetic(&SyntheticSpec { vocab_sizes: vec![6, 1, 4, 12], ..spec(0.0, 10) }).is_err());
        assert!(gen_synthetic(&SyntheticSpec { num_fields: 3, ..spec(0.0, 10) }).is_err());
    }
}
