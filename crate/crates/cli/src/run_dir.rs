//! Effective configuration and per-run output directories.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rcl_core::TrainConfig;
use sha2::{Digest, Sha256};

use crate::Common;

/// Defaults, then the `--config` file, then the override flags.
pub fn effective_config(common: &Common) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            TrainConfig::from_kv(&text).with_context(|| format!("in config {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    for p in &common.params {
        let (k, v) = p
            .split_once('=')
            .with_context(|| format!("--param expects KEY=VALUE, got `{p}`"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let flags = [
        ("seed", common.seed.map(|v| v.to_string())),
        ("metric", common.metric.clone()),
        ("alpha", common.alpha.map(|v| v.to_string())),
        ("lambda", common.lambda.map(|v| v.to_string())),
        ("tau", common.tau.map(|v| v.to_string())),
        ("variant", common.variant.clone()),
        ("workers", common.workers.map(|v| v.to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One run's output directory, `<out>/<verb>-<hash>-s<seed>`, where the hash
/// covers the verb, the effective config and the verb's own arguments.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(out: &Path, verb: &str, cfg: &TrainConfig, extra: &[(&str, String)]) -> Result<Self> {
        let mut manifest = format!("verb={verb}\n{}", cfg.to_kv());
        for (k, v) in extra {
            manifest.push_str(&format!("{k}={v}\n"));
        }
        let digest = Sha256::digest(manifest.as_bytes());
        let hash: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
        let path = out.join(format!("{verb}-{hash}-s{}", cfg.seed));
        fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        let dir = RunDir { path };
        dir.write("config.txt", cfg.to_kv())?;
        let args: String = extra.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        dir.write("args.txt", format!("verb={verb}\n{args}"))?;
        Ok(dir)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.file(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
