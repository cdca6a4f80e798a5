//! Versioned JSON model files.
//!
//! ```json
//! {
//!   "format": "mfgp-model",
//!   "version": 1,
//!   "operator": { "variant": "laplacian", "dimension": 2 },
//!   "hyperparameters": {
//!     "level1": { "log_variance": 0.1, "log_ard_weights": [0.2, 0.3] },
//!     "level2": { "log_variance": -1.0, "log_ard_weights": [1.0, 1.1] },
//!     "rho": 0.9,
//!     "log_noise": [null, -4.2, -6.0]
//!   },
//!   "dataset": { "dim": 2, "anchors": { "x": [[0.0, 0.0]], "y": [0.0] }, ... }
//! }
//! ```
//!
//! Kernel parameters and noise variances are stored as logarithms so that
//! saving and loading reproduces the model bit for bit; `null` encodes a zero
//! noise variance. Files with another format tag or a newer version are
//! rejected.

use std::path::Path;

use mfgp_core::model::{HyperParams, MultiFidelityDataset, ObservationBlock};
use mfgp_core::{KernelParams, LinearOperatorSpec, TrainedModel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const FORMAT_TAG: &str = "mfgp-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    operator: LinearOperatorSpec,
    hyperparameters: HyperFile,
    dataset: DatasetFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HyperFile {
    level1: KernelParams,
    level2: KernelParams,
    rho: f64,
    log_noise: [Option<f64>; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockFile {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    dim: usize,
    anchors: BlockFile,
    low: BlockFile,
    high: BlockFile,
}

impl BlockFile {
    fn from_block(b: &ObservationBlock) -> Self {
        Self {
            x: b.points().map(<[f64]>::to_vec).collect(),
            y: b.values().to_vec(),
        }
    }

    fn into_block(self, dim: usize) -> Result<ObservationBlock> {
        Ok(ObservationBlock::from_rows(dim, &self.x, self.y)?)
    }
}

fn to_file(model: &TrainedModel) -> ModelFile {
    let hp = model.hyperparams();
    let ds = model.dataset();
    ModelFile {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        operator: model.operator().clone(),
        hyperparameters: HyperFile {
            level1: hp.level1.clone(),
            level2: hp.level2.clone(),
            rho: hp.rho,
            log_noise: hp.log_noise().map(|l| l.is_finite().then_some(l)),
        },
        dataset: DatasetFile {
            dim: ds.dim(),
            anchors: BlockFile::from_block(&ds.anchors),
            low: BlockFile::from_block(&ds.low),
            high: BlockFile::from_block(&ds.high),
        },
    }
}

pub fn to_json(model: &TrainedModel) -> Result<String> {
    serde_json::to_string_pretty(&to_file(model))
        .map(|s| s + "\n")
        .map_err(|e| CliError::usage(format!("cannot encode model: {e}")))
}

pub fn save(model: &TrainedModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(model)?).map_err(|e| CliError::io(path, e))
}

/// Decodes a model and refactorizes its covariance.
pub fn from_json(text: &str) -> Result<TrainedModel> {
    let bad = |e: serde_json::Error| CliError::usage(format!("invalid model file: {e}"));
    let raw: serde_json::Value = serde_json::from_str(text).map_err(bad)?;
    match raw.get("format").and_then(|f| f.as_str()) {
        Some(FORMAT_TAG) => {}
        other => {
            return Err(CliError::usage(format!(
                "not a model file: format tag is {other:?}, expected \"{FORMAT_TAG}\""
            )))
        }
    }
    match raw.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        Some(v) => {
            return Err(CliError::usage(format!(
            "model file version {v} is not supported (this build reads version {FORMAT_VERSION})"
        )))
        }
        None => return Err(CliError::usage("model file has no integer version")),
    }
    let file: ModelFile = serde_json::from_value(raw).map_err(bad)?;
    let dim = file.dataset.dim;
    let h = file.hyperparameters;
    let mut v = Vec::with_capacity(HyperParams::vector_len(dim));
    for k in [&h.level1, &h.level2] {
        v.push(k.log_variance());
        v.extend_from_slice(k.log_weights());
    }
    v.push(h.rho);
    v.extend(h.log_noise.map(|l| l.unwrap_or(f64::NEG_INFINITY)));
    let hp = HyperParams::from_vector(&v, dim)?;
    let dataset = MultiFidelityDataset::new(
        file.dataset.anchors.into_block(dim)?,
        file.dataset.low.into_block(dim)?,
        file.dataset.high.into_block(dim)?,
    )?;
    Ok(TrainedModel::condition(dataset, &file.operator, hp)?)
}

pub fn load(path: &Path) -> Result<TrainedModel> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    from_json(&text).map_err(|e| match e {
        CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> TrainedModel {
        let block =
            |pts: &[f64], y: &[f64]| ObservationBlock::new(1, pts.to_vec(), y.to_vec()).unwrap();
        let ds = MultiFidelityDataset::new(
            block(&[0.0], &[0.1]),
            block(&[0.2, 0.7], &[1.0, -0.3]),
            block(&[0.4], &[0.5]),
        )
        .unwrap();
        // Trained models carry log parameters, so build the fixture the same way.
        let hp = HyperParams::from_vector(
            &[0.3, 1.9, -1.6, 1.1, 0.8, f64::NEG_INFINITY, -6.9, -9.2],
            1,
        )
        .unwrap();
        TrainedModel::condition(
            ds,
            &LinearOperatorSpec::IntegroDifferential1D { lower_bound: 0.0 },
            hp,
        )
        .unwrap()
    }

    #[test]
    fn save_load_is_exact() {
        let m = model();
        let text = to_json(&m).unwrap();
        assert!(text.contains("\"integro-differential\""));
        let back = from_json(&text).unwrap();
        assert_eq!(back.hyperparams(), m.hyperparams());
        assert_eq!(back.dataset(), m.dataset());
        assert_eq!(back.operator(), m.operator());
        assert_eq!(to_json(&back).unwrap(), text);
    }

    #[test]
    fn version_and_tag_are_checked() {
        let text = to_json(&model()).unwrap();
        let newer = text.replace("\"version\": 1", "\"version\": 2");
        let err = from_json(&newer).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
        let other = text.replace(FORMAT_TAG, "something-else");
        assert!(from_json(&other).is_err());
    }
}
