//! Model checkpoints: one file holding a JSON header (strategy, plane,
//! architecture, tensor manifest) followed by the named parameter tensors as
//! concatenated grid blobs.
//!
//! Layout, integers little-endian:
//!
//! ```text
//! bytes 0..5   magic "SCKP1"
//! bytes 5..9   header length (u32)
//! then         header JSON
//! then         one .sgrd blob per manifest entry, in order
//! ```
//!
//! Parameters are float-32 on disk like every grid file, so reloaded models
//! agree with the trained ones to float-32 precision.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::grid;
use crate::model::backbone::BackboneConfig;
use crate::model::mplr::LrWeights;
use crate::model::networks::{
    HasParams, Mp2Model, MpFuseNetModel, MplrModel, SinglePlaneModel, TrainedModel,
};
use crate::model::{FusionStrategy, Plane};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"SCKP1";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    strategy: FusionStrategy,
    /// Present only for single-plane models.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    plane: Option<Plane>,
    backbone: BackboneConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    bytes: u64,
}

fn collect_params(model: &TrainedModel) -> (Option<Plane>, BackboneConfig, Vec<(String, Tensor)>) {
    let mut params: Vec<(String, Tensor)> = Vec::new();
    let mut push = |name: String, t: &Tensor| params.push((name, t.clone()));
    match model {
        TrainedModel::SinglePlane(m) => {
            m.visit_params(&mut push);
            (Some(m.plane()), m.config().clone(), params)
        }
        TrainedModel::MpFuseNet(m) => {
            m.visit_params(&mut push);
            (None, m.config().clone(), params)
        }
        TrainedModel::Mp2(m) => {
            m.visit_params(&mut push);
            (None, m.config().clone(), params)
        }
        TrainedModel::Mplr(m) => {
            for plane in Plane::ALL {
                let prefix = format!("{plane}.");
                m.plane_model(plane)
                    .visit_params(&mut |name, t| params.push((format!("{prefix}{name}"), t.clone())));
            }
            params.push((
                "lr.weights".to_string(),
                Tensor::from_vec(vec![3], m.lr().weights.to_vec()).expect("3 weights"),
            ));
            params.push(("lr.bias".to_string(), Tensor::scalar(m.lr().bias)));
            (None, m.plane_model(Plane::Axial).config().clone(), params)
        }
    }
}

/// Serialise a trained model of any strategy.
pub fn save_model(path: impl AsRef<Path>, model: &TrainedModel) -> Result<()> {
    let (plane, backbone, params) = collect_params(model);
    let mut blobs = Vec::with_capacity(params.len());
    let mut entries = Vec::with_capacity(params.len());
    for (name, tensor) in params {
        let blob = grid::save_grid(&tensor)?;
        entries.push(TensorEntry {
            name,
            bytes: blob.len() as u64,
        });
        blobs.push(blob);
    }
    let header = serde_json::to_vec(&Header {
        version: VERSION,
        strategy: model.strategy(),
        plane,
        backbone,
        tensors: entries,
    })?;
    let mut out = Vec::with_capacity(9 + header.len() + blobs.iter().map(Vec::len).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for blob in blobs {
        out.extend_from_slice(&blob);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Assign every loaded tensor into the model; every parameter must be
/// present with a matching shape, with nothing left over.
fn fill_params(
    model: &mut dyn HasParams,
    tensors: &mut BTreeMap<String, Tensor>,
    prefix: &str,
) -> Result<()> {
    let mut problems: Vec<String> = Vec::new();
    model.visit_params_mut(&mut |name, t| {
        match tensors.remove(&format!("{prefix}{name}")) {
            Some(loaded) if loaded.shape() == t.shape() => *t = loaded,
            Some(loaded) => problems.push(format!(
                "{prefix}{name}: stored shape {:?}, model expects {:?}",
                loaded.shape(),
                t.shape()
            )),
            None => problems.push(format!("{prefix}{name}: missing from checkpoint")),
        }
    });
    if let Some(p) = problems.first() {
        return Err(Error::format(9, p.clone()));
    }
    Ok(())
}

/// Load a checkpoint written by [`save_model`].
pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let bytes = std::fs::read(path)?;
    let take = |offset: usize, len: usize| -> Result<&[u8]> {
        bytes.get(offset..offset + len).ok_or_else(|| {
            Error::format(
                bytes.len() as u64,
                format!("truncated: need {} bytes, have {}", offset + len, bytes.len()),
            )
        })
    };
    if take(0, 5)? != MAGIC {
        return Err(Error::format(0, format!("bad magic, expected {MAGIC:?}")));
    }
    let header_len = u32::from_le_bytes(take(5, 4)?.try_into().expect("4 bytes")) as usize;
    let header: Header = serde_json::from_slice(take(9, header_len)?)?;
    if header.version != VERSION {
        return Err(Error::format(
            9,
            format!("unsupported checkpoint version {}", header.version),
        ));
    }
    let mut tensors = BTreeMap::new();
    let mut offset = 9 + header_len;
    for entry in &header.tensors {
        let blob = take(offset, entry.bytes as usize)?;
        let tensor = grid::load_grid(blob).map_err(|e| match e {
            Error::Format { offset: o, message } => Error::Format {
                offset: offset as u64 + o,
                message: format!("tensor {}: {message}", entry.name),
            },
            other => other,
        })?;
        if tensors.insert(entry.name.clone(), tensor).is_some() {
            return Err(Error::format(9, format!("duplicate tensor {}", entry.name)));
        }
        offset += entry.bytes as usize;
    }
    if offset != bytes.len() {
        return Err(Error::format(
            offset as u64,
            format!("{} trailing bytes after last tensor", bytes.len() - offset),
        ));
    }

    let model = match header.strategy {
        FusionStrategy::SinglePlane => {
            let plane = header.plane.ok_or_else(|| {
                Error::format(9, "single-plane checkpoint is missing its plane".to_string())
            })?;
            let mut m = SinglePlaneModel::zeroed(plane, &header.backbone)?;
            fill_params(&mut m, &mut tensors, "")?;
            TrainedModel::SinglePlane(m)
        }
        FusionStrategy::MpFuseNet => {
            let mut m = MpFuseNetModel::zeroed(&header.backbone)?;
            fill_params(&mut m, &mut tensors, "")?;
            TrainedModel::MpFuseNet(m)
        }
        FusionStrategy::Mp2 => {
            let mut m = Mp2Model::zeroed(&header.backbone)?;
            fill_params(&mut m, &mut tensors, "")?;
            TrainedModel::Mp2(m)
        }
        FusionStrategy::Mplr => {
            let mut planes = Vec::with_capacity(3);
            for plane in Plane::ALL {
                let mut m = SinglePlaneModel::zeroed(plane, &header.backbone)?;
                fill_params(&mut m, &mut tensors, &format!("{plane}."))?;
                planes.push(m);
            }
            let weights = tensors
                .remove("lr.weights")
                .ok_or_else(|| Error::format(9, "missing lr.weights".to_string()))?;
            let bias = tensors
                .remove("lr.bias")
                .ok_or_else(|| Error::format(9, "missing lr.bias".to_string()))?;
            if weights.shape() != [3] {
                return Err(Error::format(9, "lr.weights must have shape [3]".to_string()));
            }
            let lr = LrWeights {
                weights: [weights.data()[0], weights.data()[1], weights.data()[2]],
                bias: bias.item()?,
            };
            let planes: [SinglePlaneModel; 3] =
                planes.try_into().expect("exactly three plane models");
            TrainedModel::Mplr(MplrModel::new(planes, lr)?)
        }
    };
    if let Some(name) = tensors.keys().next() {
        return Err(Error::format(
            9,
            format!("checkpoint contains unused tensor {name}"),
        ));
    }
    Ok(model)
}
