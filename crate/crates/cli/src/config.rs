//! Training configuration: defaults, then a `key=value` file, then flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use kgsq_core::ModelConfig;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainSettings {
    pub triples: Option<PathBuf>,
    pub types: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
}

pub const KEYS: [&str; 12] = [
    "triples", "types", "out", "dim", "epochs", "lr", "n_neg", "l2", "seed", "optimizer", "init_scale",
    "batch_size",
];

impl TrainSettings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |what: &str| anyhow!("invalid value for {what}: {value:?}");
        let m = &mut self.model;
        match key {
            "triples" => self.triples = Some(value.into()),
            "types" => self.types = Some(value.into()),
            "out" => self.out = Some(value.into()),
            "dim" => m.dim = value.parse().map_err(|_| num(key))?,
            "epochs" => m.epochs = value.parse().map_err(|_| num(key))?,
            "lr" => m.lr = value.parse().map_err(|_| num(key))?,
            "n_neg" => m.n_neg = value.parse().map_err(|_| num(key))?,
            "l2" => m.l2 = value.parse().map_err(|_| num(key))?,
            "seed" => m.seed = value.parse().map_err(|_| num(key))?,
            "optimizer" => m.optimizer = value.parse().map_err(|_| num(key))?,
            "init_scale" => m.init_scale = value.parse().map_err(|_| num(key))?,
            "batch_size" => m.batch_size = value.parse().map_err(|_| num(key))?,
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Renders in the same `key=value` form the file reader accepts.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        for (k, v) in [("triples", path(&self.triples)), ("types", path(&self.types)), ("out", path(&self.out))] {
            if let Some(v) = v {
                let _ = writeln!(s, "{k}={v}");
            }
        }
        let m = &self.model;
        let _ = writeln!(s, "dim={}", m.dim);
        let _ = writeln!(s, "epochs={}", m.epochs);
        let _ = writeln!(s, "lr={}", m.lr);
        let _ = writeln!(s, "n_neg={}", m.n_neg);
        let _ = writeln!(s, "l2={}", m.l2);
        let _ = writeln!(s, "seed={}", m.seed);
        let _ = writeln!(s, "optimizer={}", m.optimizer);
        let _ = writeln!(s, "init_scale={}", m.init_scale);
        let _ = writeln!(s, "batch_size={}", m.batch_size);
        s
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key=value", i + 1))?;
        let k = k.trim().replace('-', "_");
        if !KEYS.contains(&k.as_str()) {
            bail!("line {}: unknown config key {k:?}", i + 1);
        }
        out.push((k, v.trim().to_owned()));
    }
    Ok(out)
}

pub fn read_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_pairs(&text).with_context(|| format!("in config {}", path.display()))
}

/// Applies file pairs, then flag pairs, over the defaults.
pub fn resolve(file: &[(String, String)], flags: &[(String, String)]) -> Result<TrainSettings> {
    let mut s = TrainSettings::default();
    for (k, v) in file.iter().chain(flags) {
        s.set(k, v)?;
    }
    Ok(s)
}
