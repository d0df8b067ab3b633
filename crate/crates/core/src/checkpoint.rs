//! Model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "INODE1" | version u32 | param count u32
//! per parameter: name len u32 | UTF-8 name | rows u32 | cols u32 | rows*cols f64
//! d_q f64 | d_max f64
//! metadata len u32 | metadata JSON
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::SensorDims;
use crate::model::{Model, ModelSpec};
use crate::numerics::params::{read_exact, read_f64, read_u32};
use crate::numerics::ParamStore;
use crate::preprocess::TimeStats;
use crate::train::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelSpec,
    pub classes: usize,
    /// Latent state width (ODE state or LSTM hidden size).
    pub state_dim: usize,
    pub input_features: usize,
    pub sensor: SensorDims,
    #[serde(default)]
    pub class_names: Vec<String>,
    #[serde(default)]
    pub run_config: Option<RunConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub stats: TimeStats,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(
        model: Model,
        stats: TimeStats,
        sensor: SensorDims,
        class_names: Vec<String>,
        run_config: Option<RunConfig>,
    ) -> Self {
        let spec = model.spec();
        let state_dim = match spec {
            ModelSpec::Inode(c) => c.state_dim,
            ModelSpec::Lstm(c) => c.hidden,
        };
        let meta = CheckpointMeta {
            model: spec,
            classes: spec.classes(),
            state_dim,
            input_features: spec.features().width(),
            sensor,
            class_names,
            run_config,
        };
        Checkpoint { model, stats, meta }
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        let io = |e| Error::io("<checkpoint>", e);
        self.model.params().write_binary(out).map_err(io)?;
        out.write_all(&self.stats.d_q.to_le_bytes()).map_err(io)?;
        out.write_all(&self.stats.d_max.to_le_bytes()).map_err(io)?;
        let meta = serde_json::to_vec(&self.meta)?;
        out.write_all(&(meta.len() as u32).to_le_bytes()).map_err(io)?;
        out.write_all(&meta).map_err(io)?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Self> {
        let params = ParamStore::read_binary(input)?;
        let stats = TimeStats::new(read_f64(input)?, read_f64(input)?)?;
        let len = read_u32(input)? as usize;
        let mut meta = vec![0u8; len];
        read_exact(input, &mut meta)?;
        let meta: CheckpointMeta = serde_json::from_slice(&meta)?;
        let model = Model::from_params(meta.model, params)?;
        Ok(Checkpoint { model, stats, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out)?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::read_from(&mut BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InodeConfig, LstmConfig};

    #[test]
    fn roundtrip() {
        for spec in [
            ModelSpec::Inode(InodeConfig::standard(10)),
            ModelSpec::Lstm(LstmConfig::new(8, 4, true)),
        ] {
            let ckpt = Checkpoint::new(
                Model::new(spec, 3),
                TimeStats::new(97.0, 1.0).unwrap(),
                SensorDims::NMNIST,
                vec!["a".into(), "b".into()],
                None,
            );
            let mut bytes = Vec::new();
            ckpt.write_to(&mut bytes).unwrap();
            let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
            assert_eq!(back, ckpt);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(
            Checkpoint::read_from(&mut &b"NOTACHECKPOINT"[..]),
            Err(Error::Format(_))
        ));
    }
}
