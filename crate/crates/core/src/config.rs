//! Flat `key=value` training configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{RclError, Result};
use crate::losses::LossVariant;
use crate::model::ModelConfig;
use crate::similarity::Metric;

/// Parses `key=value` lines. Blank lines and lines starting with `#` are
/// skipped; surrounding whitespace is trimmed.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| RclError::Parse {
            line: i + 1,
            msg: format!("expected key=value, got `{line}`"),
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// When the semantic-metric neighbor pool is rebuilt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefreshCadence {
    Epoch,
    Step,
}

impl fmt::Display for RefreshCadence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RefreshCadence::Epoch => "epoch",
            RefreshCadence::Step => "step",
        })
    }
}

impl FromStr for RefreshCadence {
    type Err = RclError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epoch" => Ok(RefreshCadence::Epoch),
            "step" | "batch" => Ok(RefreshCadence::Step),
            other => Err(RclError::InvalidConfig(format!("unknown refresh cadence `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub metric: Metric,
    pub variant: LossVariant,
    pub lambda: f64,
    pub alpha: f64,
    pub tau: f64,
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub max_len: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Epochs without validation NDCG@10 improvement before stopping; 0 disables.
    pub patience: usize,
    pub workers: usize,
    pub semantic_refresh: RefreshCadence,
    /// Under `wrcl`, weight the weak pair of centers without a strong positive.
    pub weighted_fallback: bool,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            metric: Metric::Jaccard,
            variant: LossVariant::Wrcl,
            lambda: 0.1,
            alpha: 0.05,
            tau: 1.0,
            dropout: 0.2,
            lr: 1e-3,
            batch_size: 256,
            epochs: 200,
            dim: 64,
            blocks: 2,
            heads: 1,
            max_len: 50,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            patience: 10,
            workers: 1,
            semantic_refresh: RefreshCadence::Epoch,
            weighted_fallback: true,
            checkpoint_every: 0,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| RclError::InvalidConfig(format!("bad value `{value}` for `{key}`")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 22] = [
        "metric",
        "variant",
        "lambda",
        "alpha",
        "tau",
        "dropout",
        "lr",
        "batch_size",
        "epochs",
        "dim",
        "blocks",
        "heads",
        "max_len",
        "seed",
        "beta1",
        "beta2",
        "adam_eps",
        "patience",
        "workers",
        "semantic_refresh",
        "weighted_fallback",
        "checkpoint_every",
    ];

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "metric" => self.metric = value.parse()?,
            "variant" | "loss_variant" => self.variant = value.parse()?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "tau" => self.tau = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "dim" | "d" => self.dim = parse_value(key, value)?,
            "blocks" => self.blocks = parse_value(key, value)?,
            "heads" => self.heads = parse_value(key, value)?,
            "max_len" => self.max_len = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "adam_eps" | "eps" => self.adam_eps = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "workers" => self.workers = parse_value(key, value)?,
            "semantic_refresh" => self.semantic_refresh = value.parse()?,
            "weighted_fallback" => self.weighted_fallback = parse_value(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            other => return Err(RclError::InvalidConfig(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Defaults overridden by every key in `text`.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (k, v) in parse_kv(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every field, one `key=value` per line, in [`TrainConfig::KEYS`] order.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            out.push_str(key);
            out.push('=');
            out.push_str(&self.get(key).expect("listed key"));
            out.push('\n');
        }
        out
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "metric" => self.metric.to_string(),
            "variant" => self.variant.to_string(),
            "lambda" => self.lambda.to_string(),
            "alpha" => self.alpha.to_string(),
            "tau" => self.tau.to_string(),
            "dropout" => self.dropout.to_string(),
            "lr" => self.lr.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "dim" => self.dim.to_string(),
            "blocks" => self.blocks.to_string(),
            "heads" => self.heads.to_string(),
            "max_len" => self.max_len.to_string(),
            "seed" => self.seed.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "patience" => self.patience.to_string(),
            "workers" => self.workers.to_string(),
            "semantic_refresh" => self.semantic_refresh.to_string(),
            "weighted_fallback" => self.weighted_fallback.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(RclError::InvalidConfig(msg));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad(format!("tau {} must be positive", self.tau));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        Ok(())
    }

    /// Encoder shape for a vocabulary of `item_count` items.
    pub fn model_config(&self, item_count: usize) -> ModelConfig {
        ModelConfig::new(item_count, self.max_len, self.dim, self.blocks, self.heads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_parsing() {
        let kv = parse_kv("# comment\n a = 1\n\nb=x=y\n").unwrap();
        assert_eq!(kv["a"], "1");
        assert_eq!(kv["b"], "x=y");
        assert!(matches!(parse_kv("a=1\nnope\n"), Err(RclError::Parse { line: 2, .. })));
    }

    #[test]
    fn round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.set("metric", "ngram2").unwrap();
        cfg.set("variant", "three_pairs").unwrap();
        cfg.set("tau", "0.05").unwrap();
        cfg.set("semantic_refresh", "step").unwrap();
        let back = TrainConfig::from_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn validation() {
        for (k, v) in [("lambda", "1.5"), ("alpha", "0"), ("alpha", "1"), ("tau", "0"), ("dropout", "1")] {
            let text = format!("{k}={v}\n");
            assert!(TrainConfig::from_kv(&text).is_err(), "{k}={v} accepted");
        }
        assert!(TrainConfig::from_kv("bogus=1").is_err());
        assert!(TrainConfig::from_kv("lambda=1\nalpha=0.5\n").is_ok());
    }
}
