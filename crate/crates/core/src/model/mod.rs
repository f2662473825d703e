//! Network family: the single-plane classifier and the three multi-plane
//! fusion strategies, with training and checkpointing.
//!
//! Every model shares the same per-plane base: convolution stages with
//! stride-2 downsampling and ReLU, an optional spatial attention block, then
//! global average pooling, a fully connected layer per slice, an element-wise
//! maximum over the slice axis, and a final fully connected layer into a
//! sigmoid. The fusion strategies differ only in where the planes meet:
//!
//! - `MpFuseNet` concatenates the per-plane spatial features along the slice
//!   axis and runs one shared head;
//! - `Mp2` runs a full head per plane and concatenates the three post-max
//!   feature vectors into one final fully connected layer;
//! - `Mplr` trains three single-plane models and combines their output
//!   probabilities with a logistic regression.

mod backbone;
mod checkpoint;
mod mplr;
mod networks;
mod train;

pub use backbone::{Backbone, BackboneConfig, BackboneTrace, ConvStage, LinearLayer};
pub use checkpoint::{load_model, save_model};
pub use mplr::{mplr_fit, mplr_predict, LrWeights};
pub use networks::{
    Mp2Model, Mp2Trace, MpFuseNetModel, MpFuseNetTrace, MplrModel, SinglePlaneModel,
    SinglePlaneTrace, TrainedModel,
};
pub use train::{augment_volume, train_toy, Adam, EpochLog, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// MRI acquisition orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Axial,
    Coronal,
    Sagittal,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Axial, Plane::Coronal, Plane::Sagittal];

    pub fn as_str(self) -> &'static str {
        match self {
            Plane::Axial => "axial",
            Plane::Coronal => "coronal",
            Plane::Sagittal => "sagittal",
        }
    }

    /// Position in the canonical axial, coronal, sagittal ordering.
    pub fn index(self) -> usize {
        match self {
            Plane::Axial => 0,
            Plane::Coronal => 1,
            Plane::Sagittal => 2,
        }
    }
}

impl std::str::FromStr for Plane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "axial" => Ok(Plane::Axial),
            "coronal" => Ok(Plane::Coronal),
            "sagittal" => Ok(Plane::Sagittal),
            other => Err(Error::dim(format!("unknown plane {other:?}"))),
        }
    }
}

impl std::fmt::Display for Plane {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered slice stack of one MRI plane, stored as `[s, 1, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    plane: Plane,
    slices: Tensor,
}

impl Volume {
    /// `slices` must be `[s, 1, h, w]` with a single channel.
    pub fn new(plane: Plane, slices: Tensor) -> Result<Self> {
        if slices.rank() != 4 {
            return Err(Error::dim(format!(
                "volume tensor must have rank 4, got shape {:?}",
                slices.shape()
            )));
        }
        if slices.shape()[1] != 1 {
            return Err(Error::dim(format!(
                "volume channel axis must be 1, got {}",
                slices.shape()[1]
            )));
        }
        Ok(Self { plane, slices })
    }

    /// Stack individual `[h, w]` slices into a volume.
    pub fn from_slices(plane: Plane, slices: &[Tensor]) -> Result<Self> {
        let first = slices.first().ok_or_else(|| {
            Error::EmptyStack(format!("volume for plane {plane} has no slices"))
        })?;
        if first.rank() != 2 {
            return Err(Error::dim(format!(
                "slices must have rank 2, got shape {:?}",
                first.shape()
            )));
        }
        let (h, w) = (first.shape()[0], first.shape()[1]);
        let mut data = Vec::with_capacity(slices.len() * h * w);
        for (i, s) in slices.iter().enumerate() {
            if s.shape() != [h, w] {
                return Err(Error::dim(format!(
                    "slice {i} has shape {:?}, expected [{h}, {w}]",
                    s.shape()
                )));
            }
            data.extend_from_slice(s.data());
        }
        Self::new(plane, Tensor::from_vec(vec![slices.len(), 1, h, w], data)?)
    }

    pub fn plane(&self) -> Plane {
        self.plane
    }

    pub fn num_slices(&self) -> usize {
        self.slices.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.slices.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.slices.shape()[3]
    }

    pub fn slices(&self) -> &Tensor {
        &self.slices
    }

    /// Copy of slice `i` as an `[h, w]` tensor.
    pub fn slice_2d(&self, i: usize) -> Result<Tensor> {
        if i >= self.num_slices() {
            return Err(Error::Index(format!(
                "slice {i} out of range for volume with {} slices",
                self.num_slices()
            )));
        }
        let hw = self.height() * self.width();
        Tensor::from_vec(
            vec![self.height(), self.width()],
            self.slices.data()[i * hw..(i + 1) * hw].to_vec(),
        )
    }
}

/// One volume per plane, addressable by plane tag regardless of insertion
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSet {
    volumes: [Volume; 3],
}

impl PlaneSet {
    /// Accepts the three volumes in any order; exactly one per plane.
    pub fn new(volumes: Vec<Volume>) -> Result<Self> {
        if volumes.len() != 3 {
            return Err(Error::Fusion(format!(
                "plane set needs exactly 3 volumes, got {}",
                volumes.len()
            )));
        }
        let mut slots: [Option<Volume>; 3] = [None, None, None];
        for v in volumes {
            let i = v.plane().index();
            if slots[i].is_some() {
                return Err(Error::Fusion(format!("duplicate volume for plane {}", v.plane())));
            }
            slots[i] = Some(v);
        }
        // All three slots are filled: three volumes, no duplicates.
        let [a, c, s] = slots;
        Ok(Self {
            volumes: [a.unwrap(), c.unwrap(), s.unwrap()],
        })
    }

    pub fn get(&self, plane: Plane) -> &Volume {
        &self.volumes[plane.index()]
    }

    /// Volumes in canonical plane order.
    pub fn iter(&self) -> impl Iterator<Item = &Volume> {
        self.volumes.iter()
    }
}

/// How planes are combined into one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionStrategy {
    #[serde(rename = "single")]
    SinglePlane,
    MpFuseNet,
    Mp2,
    Mplr,
}

impl FusionStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionStrategy::SinglePlane => "single",
            FusionStrategy::MpFuseNet => "mpfusenet",
            FusionStrategy::Mp2 => "mp2",
            FusionStrategy::Mplr => "mplr",
        }
    }
}

impl std::str::FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(FusionStrategy::SinglePlane),
            "mpfusenet" => Ok(FusionStrategy::MpFuseNet),
            "mp2" => Ok(FusionStrategy::Mp2),
            "mplr" => Ok(FusionStrategy::Mplr),
            other => Err(Error::dim(format!("unknown fusion strategy {other:?}"))),
        }
    }
}

impl std::fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(plane: Plane) -> Volume {
        Volume::new(plane, Tensor::zeros(vec![2, 1, 4, 4]).unwrap()).unwrap()
    }

    #[test]
    fn empty_slice_list_is_an_empty_stack_error() {
        assert!(matches!(
            Volume::from_slices(Plane::Axial, &[]).unwrap_err(),
            Error::EmptyStack(_)
        ));
    }

    #[test]
    fn from_slices_stacks_row_major() {
        let s0 = Tensor::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let s1 = Tensor::from_vec(vec![1, 2], vec![3.0, 4.0]).unwrap();
        let v = Volume::from_slices(Plane::Coronal, &[s0.clone(), s1]).unwrap();
        assert_eq!(v.num_slices(), 2);
        assert_eq!(v.slices().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(v.slice_2d(0).unwrap(), s0);
    }

    #[test]
    fn mismatched_slice_shapes_are_rejected() {
        let s0 = Tensor::zeros(vec![2, 2]).unwrap();
        let s1 = Tensor::zeros(vec![2, 3]).unwrap();
        assert!(Volume::from_slices(Plane::Axial, &[s0, s1]).is_err());
    }

    #[test]
    fn plane_set_accepts_any_order_and_routes_by_tag() {
        let set = PlaneSet::new(vec![vol(Plane::Sagittal), vol(Plane::Axial), vol(Plane::Coronal)])
            .unwrap();
        assert_eq!(set.get(Plane::Axial).plane(), Plane::Axial);
        let planes: Vec<Plane> = set.iter().map(Volume::plane).collect();
        assert_eq!(planes, vec![Plane::Axial, Plane::Coronal, Plane::Sagittal]);
    }

    #[test]
    fn plane_set_rejects_duplicates() {
        let err =
            PlaneSet::new(vec![vol(Plane::Axial), vol(Plane::Axial), vol(Plane::Coronal)])
                .unwrap_err();
        assert!(matches!(err, Error::Fusion(_)));
    }

    #[test]
    fn plane_and_strategy_round_trip_through_strings() {
        for p in Plane::ALL {
            assert_eq!(p.as_str().parse::<Plane>().unwrap(), p);
        }
        for s in [
            FusionStrategy::SinglePlane,
            FusionStrategy::MpFuseNet,
            FusionStrategy::Mp2,
            FusionStrategy::Mplr,
        ] {
            assert_eq!(s.as_str().parse::<FusionStrategy>().unwrap(), s);
        }
    }
}
