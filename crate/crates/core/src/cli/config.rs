//! Line-oriented `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored; keys are dotted
//! (`model.head`). Resolution order: preset defaults, then the config
//! file, then command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{derive_seed, SyntheticSpec};
use crate::diagnostics::SnapshotLayout;
use crate::error::{Error, Result};
use crate::model::{Backbone, Head, ModelSpec};
use crate::autograd::OptimKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    /// k=8, 2×64 MLP, synthetic data.
    #[default]
    Desk,
    /// k=16; 4×2000 parallel MLP or 3×400 stacked MLP.
    AvazuLike,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "avazu-like" => Ok(Preset::AvazuLike),
            _ => Err(Error::Config(format!("unknown preset {s:?} (desk|avazu-like)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv { path: PathBuf, label_column: String, hash_buckets: Option<usize> },
    Synthetic(SyntheticSpec),
}

/// Fully resolved settings of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSource,
    pub model: ModelSpec,
    pub optim: OptimKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without validation-AUC improvement (0 = never).
    pub patience: usize,
    /// Gradient snapshot every N optimizer steps (0 = off).
    pub snapshot_interval: usize,
    pub snapshot_layouts: Vec<SnapshotLayout>,
    pub spectrum_samples: usize,
    pub gradcheck_coords: usize,
    pub gradcheck_h: f64,
    pub gradcheck_instances: usize,
    pub out: Option<PathBuf>,
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "seed",
    "data.source",
    "data.path",
    "data.label_column",
    "data.hash_buckets",
    "synth.fields",
    "synth.vocab",
    "synth.latent_dim",
    "synth.noise_std",
    "synth.samples",
    "model.backbone",
    "model.head",
    "model.embedding_dim",
    "model.hidden",
    "model.cross_depth",
    "model.init_std",
    "optim.kind",
    "optim.lr",
    "train.batch_size",
    "train.epochs",
    "train.patience",
    "train.snapshot_interval",
    "train.snapshot_layout",
    "diag.spectrum_samples",
    "gradcheck.coords",
    "gradcheck.h",
    "gradcheck.oracle_instances",
    "out",
];

fn preset_defaults(preset: Preset) -> BTreeMap<&'static str, String> {
    let mut m: BTreeMap<&'static str, String> = [
        ("data.source", "synthetic"),
        ("data.label_column", "label"),
        ("data.hash_buckets", "0"),
        ("synth.fields", "12"),
        ("synth.vocab", "10"),
        ("synth.latent_dim", "1"),
        ("synth.noise_std", "0"),
        ("synth.samples", "10000"),
        ("model.backbone", "fm"),
        ("model.head", "none"),
        ("model.embedding_dim", "8"),
        ("model.hidden", "64,64"),
        ("model.cross_depth", "2"),
        ("model.init_std", "0.01"),
        ("optim.kind", "adam"),
        ("optim.lr", "0.001"),
        ("train.batch_size", "256"),
        ("train.epochs", "10"),
        ("train.patience", "0"),
        ("train.snapshot_interval", "10"),
        ("train.snapshot_layout", "concatenated"),
        ("diag.spectrum_samples", "4096"),
        ("gradcheck.coords", "100"),
        ("gradcheck.h", "0.0001"),
        ("gradcheck.oracle_instances", "100"),
    ]
    .into_iter()
    .map(|(k, v)| (k, v.to_string()))
    .collect();
    if preset == Preset::AvazuLike {
        m.insert("model.embedding_dim", "16".into());
        m.remove("model.hidden");
    }
    m
}

/// Parses `key = value` lines. Unknown and repeated keys are errors.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<&'static str, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, found {raw:?}", n + 1)))?;
        let key = key.trim();
        let known = KEYS
            .iter()
            .find(|&&k| k == key)
            .ok_or_else(|| Error::Config(format!("line {}: unknown key {key:?}", n + 1)))?;
        if out.insert(*known, value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: key {key:?} set twice", n + 1)));
        }
    }
    Ok(out)
}

fn get<'a>(m: &'a BTreeMap<&'static str, String>, key: &str) -> Result<&'a str> {
    m.get(key).map(String::as_str).ok_or_else(|| Error::Config(format!("missing key {key}")))
}

fn num<T: FromStr>(m: &BTreeMap<&'static str, String>, key: &str) -> Result<T> {
    let v = get(m, key)?;
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn list(m: &BTreeMap<&'static str, String>, key: &str) -> Result<Vec<usize>> {
    let v = get(m, key)?;
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|x| x.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}"))))
        .collect()
}

fn positive(key: &str, v: usize) -> Result<usize> {
    if v == 0 {
        return Err(Error::Config(format!("{key} must be >= 1")));
    }
    Ok(v)
}

fn positive_f(key: &str, v: f64) -> Result<f64> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("{key} must be a positive number, got {v}")));
    }
    Ok(v)
}

impl ExperimentConfig {
    /// Resolves a config from an optional preset, file text and a seed
    /// override.
    pub fn resolve(preset: Preset, text: Option<&str>, seed: Option<u64>) -> Result<Self> {
        let mut m = preset_defaults(preset);
        if let Some(text) = text {
            m.extend(parse_pairs(text)?);
        }
        if let Some(seed) = seed {
            m.insert("seed", seed.to_string());
        }
        if !m.contains_key("seed") {
            return Err(Error::Config("a seed is required (config key `seed` or --seed)".into()));
        }
        let head: Head = get(&m, "model.head")?.parse()?;
        if !m.contains_key("model.hidden") {
            // only the avazu-like preset leaves this open
            let widths = if head.is_stacked() { "400,400,400" } else { "2000,2000,2000,2000" };
            m.insert("model.hidden", widths.into());
        }
        Self::from_map(&m)
    }

    pub fn load(path: &Path, preset: Preset, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::resolve(preset, Some(&text), seed)
    }

    fn from_map(m: &BTreeMap<&'static str, String>) -> Result<Self> {
        let seed: u64 = num(m, "seed")?;
        let data = match get(m, "data.source")? {
            "csv" => {
                let path = PathBuf::from(get(m, "data.path")?);
                if !path.is_file() {
                    return Err(Error::Config(format!("data.path {} does not exist", path.display())));
                }
                let buckets: usize = num(m, "data.hash_buckets")?;
                DataSource::Csv {
                    path,
                    label_column: get(m, "data.label_column")?.to_string(),
                    hash_buckets: (buckets > 0).then_some(buckets),
                }
            }
            "synthetic" => {
                let fields = positive("synth.fields", num(m, "synth.fields")?)?;
                let vocab = list(m, "synth.vocab")?;
                let vocab = match vocab.as_slice() {
                    [v] => vec![*v; fields],
                    v if v.len() == fields => v.to_vec(),
                    _ => {
                        return Err(Error::Config(format!(
                            "synth.vocab needs 1 or {fields} entries, got {}",
                            vocab.len()
                        )))
                    }
                };
                let spec = SyntheticSpec {
                    num_fields: fields,
                    // one extra table row for the OOV slot
                    vocab_sizes: vocab.iter().map(|v| v + 1).collect(),
                    latent_dim: num(m, "synth.latent_dim")?,
                    noise_std: num(m, "synth.noise_std")?,
                    num_samples: num(m, "synth.samples")?,
                    seed: derive_seed(seed, "synth"),
                };
                if vocab.contains(&0) {
                    return Err(Error::Config("synth.vocab entries must be >= 1".into()));
                }
                spec.validate()?;
                DataSource::Synthetic(spec)
            }
            other => return Err(Error::Config(format!("data.source {other:?} (csv|synthetic)"))),
        };
        let model = ModelSpec {
            backbone: get(m, "model.backbone")?.parse::<Backbone>()?,
            head: get(m, "model.head")?.parse()?,
            embedding_dim: positive("model.embedding_dim", num(m, "model.embedding_dim")?)?,
            hidden: list(m, "model.hidden")?,
            cross_depth: num(m, "model.cross_depth")?,
            init_std: num(m, "model.init_std")?,
            seed: derive_seed(seed, "init"),
        };
        let layouts = match get(m, "train.snapshot_layout")? {
            "both" => vec![SnapshotLayout::Concatenated, SnapshotLayout::PerField],
            one => vec![one.parse()?],
        };
        let cfg = Self {
            seed,
            data,
            model,
            optim: get(m, "optim.kind")?.parse()?,
            lr: positive_f("optim.lr", num(m, "optim.lr")?)?,
            batch_size: positive("train.batch_size", num(m, "train.batch_size")?)?,
            epochs: positive("train.epochs", num(m, "train.epochs")?)?,
            patience: num(m, "train.patience")?,
            snapshot_interval: num(m, "train.snapshot_interval")?,
            snapshot_layouts: layouts,
            spectrum_samples: positive("diag.spectrum_samples", num(m, "diag.spectrum_samples")?)?,
            gradcheck_coords: positive("gradcheck.coords", num(m, "gradcheck.coords")?)?,
            gradcheck_h: positive_f("gradcheck.h", num(m, "gradcheck.h")?)?,
            gradcheck_instances: positive("gradcheck.oracle_instances", num(m, "gradcheck.oracle_instances")?)?,
            out: m.get("out").map(PathBuf::from),
        };
        if cfg.model.head.has_mlp() && (cfg.model.hidden.is_empty() || cfg.model.hidden.contains(&0)) {
            return Err(Error::Config(format!("model.hidden {:?} invalid", cfg.model.hidden)));
        }
        Ok(cfg)
    }

    /// Seed for an independent random stream (`"split"`, `"batch"`, ...).
    pub fn stream_seed(&self, stream: &str) -> u64 {
        derive_seed(self.seed, stream)
    }

    /// The resolved configuration as config-file text. Feeding it back
    /// through [`ExperimentConfig::resolve`] yields an identical config and
    /// an identical echo. The output directory is not part of the echo.
    pub fn echo(&self) -> String {
        let mut s = String::from("# resolved configuration\n");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        match &self.data {
            DataSource::Csv { path, label_column, hash_buckets } => {
                kv("data.source", "csv".into());
                kv("data.path", path.display().to_string());
                kv("data.label_column", label_column.clone());
                kv("data.hash_buckets", hash_buckets.unwrap_or(0).to_string());
            }
            DataSource::Synthetic(spec) => {
                kv("data.source", "synthetic".into());
                kv("synth.fields", spec.num_fields.to_string());
                let vocab: Vec<String> = spec.vocab_sizes.iter().map(|v| (v - 1).to_string()).collect();
                kv("synth.vocab", vocab.join(","));
                kv("synth.latent_dim", spec.latent_dim.to_string());
                kv("synth.noise_std", spec.noise_std.to_string());
                kv("synth.samples", spec.num_samples.to_string());
            }
        }
        kv("model.backbone", self.model.backbone.to_string());
        kv("model.head", self.model.head.to_string());
        kv("model.embedding_dim", self.model.embedding_dim.to_string());
        let hidden: Vec<String> = self.model.hidden.iter().map(usize::to_string).collect();
        kv("model.hidden", hidden.join(","));
        kv("model.cross_depth", self.model.cross_depth.to_string());
        kv("model.init_std", self.model.init_std.to_string());
        kv("optim.kind", self.optim.to_string());
        kv("optim.lr", self.lr.to_string());
        kv("train.batch_size", self.batch_size.to_string());
        kv("train.epochs", self.epochs.to_string());
        kv("train.patience", self.patience.to_string());
        kv("train.snapshot_interval", self.snapshot_interval.to_string());
        let layout = match self.snapshot_layouts.as_slice() {
            [one] => one.to_string(),
            _ => "both".into(),
        };
        kv("train.snapshot_layout", layout);
        kv("diag.spectrum_samples", self.spectrum_samples.to_string());
        kv("gradcheck.coords", self.gradcheck_coords.to_string());
        kv("gradcheck.h", self.gradcheck_h.to_string());
        kv("gradcheck.oracle_instances", self.gradcheck_instances.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory() {
        assert!(matches!(ExperimentConfig::resolve(Preset::Desk, None, None), Err(Error::Config(_))));
        assert_eq!(ExperimentConfig::resolve(Preset::Desk, None, Some(4)).unwrap().seed, 4);
    }

    #[test]
    fn flag_overrides_file() {
        let cfg = ExperimentConfig::resolve(Preset::Desk, Some("seed = 1\n"), Some(9)).unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn parses_comments_and_dotted_keys() {
        let text = "# experiment\nseed = 3\nmodel.head = p_dnn   # parallel\n\nmodel.hidden = 32, 16\n";
        let cfg = ExperimentConfig::resolve(Preset::Desk, Some(text), None).unwrap();
        assert_eq!(cfg.model.head, Head::PDnn);
        assert_eq!(cfg.model.hidden, vec![32, 16]);
    }

    #[test]
    fn rejects_bad_input() {
        for text in ["seed = 1\nbogus = 2\n", "seed = 1\nseed = 2\n", "seed\n", "seed = x\n", "seed = 1\noptim.lr = 0\n"] {
            assert!(matches!(ExperimentConfig::resolve(Preset::Desk, Some(text), None), Err(Error::Config(_))), "{text}");
        }
        let missing = "seed = 1\ndata.source = csv\ndata.path = /nonexistent/file.csv\n";
        assert!(ExperimentConfig::resolve(Preset::Desk, Some(missing), None).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let text = "seed = 17\nmodel.head = linear_s_dnn\nsynth.vocab = 3,4,5\nsynth.fields = 3\noptim.lr = 0.0025\ntrain.snapshot_layout = both\n";
        let cfg = ExperimentConfig::resolve(Preset::Desk, Some(text), None).unwrap();
        let echo = cfg.echo();
        let again = ExperimentConfig::resolve(Preset::Desk, Some(&echo), None).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(echo, again.echo());
        // the echo stands alone regardless of the preset it was made with
        let other = ExperimentConfig::resolve(Preset::AvazuLike, Some(&echo), None).unwrap();
        assert_eq!(cfg, other);
    }

    #[test]
    fn avazu_like_shapes() {
        let p = ExperimentConfig::resolve(Preset::AvazuLike, Some("model.head = p_dnn"), Some(1)).unwrap();
        assert_eq!((p.model.embedding_dim, p.model.hidden.clone()), (16, vec![2000; 4]));
        let s = ExperimentConfig::resolve(Preset::AvazuLike, Some("model.head = s_dnn"), Some(1)).unwrap();
        assert_eq!(s.model.hidden, vec![400; 3]);
        let d = ExperimentConfig::resolve(Preset::Desk, None, Some(1)).unwrap();
        assert_eq!((d.model.embedding_dim, d.model.hidden), (8, vec![64, 64]));
    }
}
