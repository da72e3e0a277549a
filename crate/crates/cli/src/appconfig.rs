//! Experiment configuration: a flat `key = value` text file with optional
//! `[section]` headers (sections are cosmetic grouping; keys are globally
//! flat so configs stay diff-able). Command-line flags override file
//! values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use icdseq::{ModelConfig, TrainConfig};

#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let content = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut values = BTreeMap::new();
        for (idx, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                continue; // section header, grouping only
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(
                    "{}:{}: expected `key = value`, got {:?}",
                    path.display(),
                    idx + 1,
                    raw
                );
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(FileConfig { values })
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => match raw.parse::<T>() {
                Ok(v) => Ok(Some(v)),
                Err(e) => bail!("config key {key}={raw}: {e}"),
            },
        }
    }
}

/// Flags shared by `train` and `cv`; every field overrides the config file
/// key of the same name.
#[derive(Debug, Clone, clap::Args)]
pub struct TrainFlags {
    /// Encoder hidden size per direction.
    #[arg(long)]
    pub h_enc: Option<usize>,
    /// Decoder hidden size.
    #[arg(long)]
    pub h_dec: Option<usize>,
    /// Word embedding dimension.
    #[arg(long)]
    pub emb_dim: Option<usize>,
    /// Input length cap in tokens.
    #[arg(long)]
    pub max_in: Option<usize>,
    /// Output length cap in codes (end marker included).
    #[arg(long)]
    pub max_out: Option<usize>,
    /// Dropout rate on encoder inputs and encoded state.
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Optional global-norm gradient clip.
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Minimum token frequency for the vocabulary.
    #[arg(long)]
    pub min_count: Option<usize>,
}

/// Resolve: defaults < config file < command-line flags.
pub fn resolve(
    file: &FileConfig,
    flags: &TrainFlags,
    seed: u64,
) -> Result<(ModelConfig, TrainConfig)> {
    let mut model = ModelConfig::default();
    let mut train = TrainConfig::default();

    model.h_enc = file.get("h_enc")?.unwrap_or(model.h_enc);
    model.h_dec = file.get("h_dec")?.unwrap_or(model.h_dec);
    model.emb_dim = file.get("emb_dim")?.unwrap_or(model.emb_dim);
    model.max_in = file.get("max_in")?.unwrap_or(model.max_in);
    model.max_out = file.get("max_out")?.unwrap_or(model.max_out);
    model.dropout = file.get("dropout")?.unwrap_or(model.dropout);
    train.lr = file.get("lr")?.unwrap_or(train.lr);
    train.batch_size = file.get("batch_size")?.unwrap_or(train.batch_size);
    train.epochs = file.get("epochs")?.unwrap_or(train.epochs);
    train.clip_norm = file.get("clip_norm")?.or(train.clip_norm);
    train.min_count = file.get("min_count")?.unwrap_or(train.min_count);

    model.h_enc = flags.h_enc.unwrap_or(model.h_enc);
    model.h_dec = flags.h_dec.unwrap_or(model.h_dec);
    model.emb_dim = flags.emb_dim.unwrap_or(model.emb_dim);
    model.max_in = flags.max_in.unwrap_or(model.max_in);
    model.max_out = flags.max_out.unwrap_or(model.max_out);
    model.dropout = flags.dropout.unwrap_or(model.dropout);
    train.lr = flags.lr.unwrap_or(train.lr);
    train.batch_size = flags.batch_size.unwrap_or(train.batch_size);
    train.epochs = flags.epochs.unwrap_or(train.epochs);
    train.clip_norm = flags.clip_norm.or(train.clip_norm);
    train.min_count = flags.min_count.unwrap_or(train.min_count);

    train.dropout = model.dropout;
    train.seed = seed;
    Ok((model, train))
}

/// Record the fully resolved configuration in a manifest-friendly map.
pub fn describe(model: &ModelConfig, train: &TrainConfig) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("h_enc".into(), model.h_enc.to_string());
    m.insert("h_dec".into(), model.h_dec.to_string());
    m.insert("emb_dim".into(), model.emb_dim.to_string());
    m.insert("max_in".into(), model.max_in.to_string());
    m.insert("max_out".into(), model.max_out.to_string());
    m.insert("dropout".into(), model.dropout.to_string());
    m.insert("lr".into(), train.lr.to_string());
    m.insert("batch_size".into(), train.batch_size.to_string());
    m.insert("epochs".into(), train.epochs.to_string());
    m.insert(
        "clip_norm".into(),
        train
            .clip_norm
            .map(|v| v.to_string())
            .unwrap_or_else(|| "none".into()),
    );
    m.insert("min_count".into(), train.min_count.to_string());
    m
}
