//! Directory-tree datasets: `root/<class_name>/<sample>.bin`.
//!
//! Class indices follow the lexicographic order of the class directory
//! names. An optional `manifest.json` at the root overrides the sensor size
//! and record format.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::aer::AerFormat;
use crate::events::event::{Dataset, EventSequence, SensorDims, Split};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    /// `[width, height]`
    pub sensor: [u16; 2],
    #[serde(default)]
    pub format: AerFormat,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Keep only the first `n` events of each sample.
    pub truncate_to: Option<usize>,
    /// Used when no manifest is present.
    pub sensor: SensorDims,
    pub format: AerFormat,
    /// Inclusive bounds on the raw event count; samples outside are dropped.
    pub min_events: Option<usize>,
    pub max_events: Option<usize>,
    pub split: Split,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            truncate_to: None,
            sensor: SensorDims::NMNIST,
            format: AerFormat::Aer,
            min_events: None,
            max_events: None,
            split: Split::Train,
        }
    }
}

pub fn read_manifest(root: &Path) -> Result<Option<Manifest>> {
    let path = root.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Some(serde_json::from_str(&text)?))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn load_dataset(root: &Path, options: &LoadOptions) -> Result<Dataset> {
    let (sensor, format) = match read_manifest(root)? {
        Some(m) => (SensorDims::new(m.sensor[0], m.sensor[1]), m.format),
        None => (options.sensor, options.format),
    };
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::Dataset(format!("{} has no class directories", root.display())));
    }

    let mut class_names = Vec::with_capacity(class_dirs.len());
    let mut sequences = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let files: Vec<PathBuf> = sorted_entries(dir)?
            .into_iter()
            .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "bin"))
            .collect();
        if files.is_empty() {
            return Err(Error::Dataset(format!("class directory {} is empty", dir.display())));
        }
        for file in files {
            let bytes = match fs::read(&file) {
                Ok(b) => b,
                Err(e) => {
                    warn!("skipping unreadable {}: {e}", file.display());
                    continue;
                }
            };
            let mut events = match format.parse(&bytes) {
                Ok(ev) => ev,
                Err(e) => {
                    warn!("skipping {}: {e}", file.display());
                    continue;
                }
            };
            let n = events.len();
            if options.min_events.is_some_and(|lo| n < lo) || options.max_events.is_some_and(|hi| n > hi) {
                continue;
            }
            if let Some(limit) = options.truncate_to {
                events.truncate(limit);
            }
            if events.is_empty() {
                warn!("skipping empty sample {}", file.display());
                continue;
            }
            sequences.push(EventSequence::new(events, label, sensor)?);
        }
        class_names.push(name);
    }
    Dataset::with_names(sequences, class_names, options.split)
}

/// Writes `dataset` as a directory tree that [`load_dataset`] reads back.
pub fn write_dataset(root: &Path, dataset: &Dataset, format: AerFormat) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    if let Some(sensor) = dataset.sensor() {
        let manifest = Manifest {
            sensor: [sensor.width, sensor.height],
            format,
        };
        let path = root.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    }
    let mut counters = vec![0usize; dataset.class_count];
    for seq in &dataset.sequences {
        let dir = root.join(&dataset.class_names[seq.label]);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("{:06}.bin", counters[seq.label]));
        counters[seq.label] += 1;
        fs::write(&path, format.write(&seq.events)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// The first `ceil(rho * N)` sequences after a seeded shuffle.
pub fn select_fraction(dataset: &Dataset, rho: f64, seed: u64) -> Result<Dataset> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Input(format!("dataset fraction {rho} outside (0, 1]")));
    }
    let keep = fraction_count(dataset.len(), rho);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let sequences = order[..keep].iter().map(|&i| dataset.sequences[i].clone()).collect();
    Dataset::with_names(sequences, dataset.class_names.clone(), dataset.split)
}

pub fn fraction_count(n: usize, rho: f64) -> usize {
    ((rho * n as f64).ceil() as usize).min(n)
}

/// At most `n` sequences chosen by a seeded shuffle, kept in original order.
pub fn take_random(dataset: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.truncate(n);
    order.sort_unstable();
    let sequences = order.iter().map(|&i| dataset.sequences[i].clone()).collect();
    Dataset::with_names(sequences, dataset.class_names.clone(), dataset.split)
}

/// Only the listed classes, relabelled `0..keep.len()` in the given order.
pub fn restrict_classes(dataset: &Dataset, keep: &[usize]) -> Result<Dataset> {
    if keep.is_empty() || keep.iter().any(|&c| c >= dataset.class_count) {
        return Err(Error::Input(format!(
            "class selection {keep:?} invalid for {} classes",
            dataset.class_count
        )));
    }
    let sequences = dataset
        .sequences
        .iter()
        .filter_map(|s| {
            keep.iter().position(|&c| c == s.label).map(|label| EventSequence {
                label,
                ..s.clone()
            })
        })
        .collect();
    let names = keep.iter().map(|&c| dataset.class_names[c].clone()).collect();
    Dataset::with_names(sequences, names, dataset.split)
}

/// Seeded split into `(train, test)` with `ceil(test_fraction * N)` test items.
pub fn split_holdout(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = fraction_count(dataset.len(), test_fraction);
    let (test_idx, train_idx) = order.split_at(n_test);
    let pick = |idx: &[usize], split| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        Dataset::with_names(
            idx.iter().map(|&i| dataset.sequences[i].clone()).collect(),
            dataset.class_names.clone(),
            split,
        )
    };
    Ok((pick(train_idx, Split::Train)?, pick(test_idx, Split::Test)?))
}
