use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ganf_core::bench::ScalingCell;
use ganf_core::train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::Usage;

/// Everything `train` needs, loadable from one JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Long-format series CSV.
    pub data: Option<PathBuf>,
    pub window_len: usize,
    /// Training stride; `window_len` when absent.
    pub stride: Option<usize>,
    pub train_frac: f64,
    pub val_frac: f64,
    pub normalize: bool,
    /// Longest forward-filled gap.
    pub max_gap: usize,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            window_len: 60,
            stride: None,
            train_frac: 0.6,
            val_frac: 0.2,
            normalize: true,
            max_gap: 5,
            train: TrainConfig::default(),
        }
    }
}

/// Grid for `bench`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchGrid {
    pub n: Vec<usize>,
    pub t: Vec<usize>,
    pub d: usize,
    pub batch: usize,
    pub iters: usize,
    pub train: TrainConfig,
}

impl Default for BenchGrid {
    fn default() -> Self {
        BenchGrid { n: vec![5, 10], t: vec![20, 40], d: 1, batch: 32, iters: 5, train: TrainConfig::default() }
    }
}

impl BenchGrid {
    pub fn cells(&self) -> Vec<ScalingCell> {
        self.n
            .iter()
            .flat_map(|&n| self.t.iter().map(move |&t| (n, t)))
            .map(|(n, t)| ScalingCell { n, t, d: self.d, batch: self.batch })
            .collect()
    }
}

fn overlay(base: &mut serde_json::Value, top: serde_json::Value) {
    match (base, top) {
        (serde_json::Value::Object(b), serde_json::Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => overlay(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

/// Defaults overlaid with the (possibly partial) JSON file at `path`.
pub fn load_layered<T: Serialize + DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).map_err(|e| Usage(format!("--config {}: {e}", path.display())))?;
    let file: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Usage(format!("--config {}: {e}", path.display())))?;
    let mut merged = serde_json::to_value(T::default())?;
    overlay(&mut merged, file);
    serde_json::from_value(merged).map_err(|e| Usage(format!("--config {}: {e}", path.display())).into())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Usage(format!("--out {}: {e}", dir.display())).into())
}
