//! Localisation-validation metrics.
//!
//! All metrics compare a binarised saliency mask ("gc") against a rasterised
//! annotation mask ("ann") of the same dimensions:
//!
//! - localisation accuracy `la = |gc AND ann| / |ann|`, the fraction of the
//!   annotation covered;
//! - false positive penalty `fpp = (|gc| - |gc AND ann|) / total`, saliency
//!   outside the annotation as a fraction of the whole image;
//! - penalised localisation accuracy `pla = max(la - fpp, 0)`;
//! - `iou` and `dice` as the usual segmentation scores;
//! - `loc_auc`, a rank-based (Mann-Whitney) AUC over the flattened raw
//!   saliency scores with the annotation as ground truth.
//!
//! Thresholds are strict everywhere: a mask pixel needs importance above `x`,
//! an MRI counts towards aggregate accuracy only when its score exceeds `k`,
//! and a feature is detected only when its LA exceeds the cutoff. An empty
//! saliency mask scores zero; only an empty annotation is an error, because
//! coverage of nothing has no meaning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::saliency::{threshold_mask, SaliencyMap};
use crate::tensor::Tensor;

/// Boolean image grid, row-major with origin at the top-left.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dim(format!(
                "mask dimensions must be positive, got {height}x{width}"
            )));
        }
        Ok(Self {
            height,
            width,
            data: vec![false; height * width],
        })
    }

    pub fn from_data(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim(format!(
                "mask data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        let mut mask = Self::new(height, width)?;
        mask.data = data;
        Ok(mask)
    }

    /// All-ones mask.
    pub fn full(height: usize, width: usize) -> Result<Self> {
        let mut mask = Self::new(height, width)?;
        mask.data.fill(true);
        Ok(mask)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Total number of pixels.
    pub fn area(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    /// Number of set pixels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn intersection_count(&self, other: &Self) -> Result<usize> {
        self.check_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| **a && **b)
            .count())
    }

    fn check_dims(&self, other: &Self) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::dim(format!(
                "mask dimensions differ: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// 0/1 tensor of shape `[height, width]`, for the grid file format.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Tensor::from_vec(vec![self.height, self.width], data).expect("mask dims are positive")
    }

    /// Rebuild from a `[height, width]` tensor; a pixel is set iff > 0.5.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::dim(format!(
                "mask tensor must have rank 2, got shape {:?}",
                t.shape()
            )));
        }
        Self::from_data(
            t.shape()[0],
            t.shape()[1],
            t.data().iter().map(|&v| v > 0.5).collect(),
        )
    }
}

/// One rectangular annotation with inclusive pixel coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub category: String,
}

impl BoundingBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize, category: &str) -> Result<Self> {
        if x1 < x0 || y1 < y0 {
            return Err(Error::Annotation(format!(
                "box corners out of order: ({x0},{y0})..({x1},{y1})"
            )));
        }
        if category.is_empty() {
            return Err(Error::Annotation("box category must be non-empty".to_string()));
        }
        Ok(Self {
            x0,
            y0,
            x1,
            y1,
            category: category.to_string(),
        })
    }
}

/// Bounding-box annotations of one volume, keyed by slice index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnnotationSet {
    slices: BTreeMap<usize, Vec<BoundingBox>>,
}

impl AnnotationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, slice: usize, bbox: BoundingBox) {
        self.slices.entry(slice).or_default().push(bbox);
    }

    pub fn boxes_for(&self, slice: usize) -> &[BoundingBox] {
        self.slices.get(&slice).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Slice indices carrying at least one box, ascending.
    pub fn annotated_slices(&self) -> impl Iterator<Item = usize> + '_ {
        self.slices
            .iter()
            .filter(|(_, boxes)| !boxes.is_empty())
            .map(|(&s, _)| s)
    }

    pub fn is_empty(&self) -> bool {
        self.slices.values().all(Vec::is_empty)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[BoundingBox])> {
        self.slices.iter().map(|(&s, b)| (s, b.as_slice()))
    }
}

/// Union of all boxes of `slice` matching the category filter, as a mask.
/// `category = None` accepts every box.
pub fn rasterize(
    ann: &AnnotationSet,
    slice: usize,
    height: usize,
    width: usize,
    category: Option<&str>,
) -> Result<BinaryMask> {
    let mut mask = BinaryMask::new(height, width)?;
    for bbox in ann.boxes_for(slice) {
        if category.is_some_and(|c| c != bbox.category) {
            continue;
        }
        if bbox.x1 >= width || bbox.y1 >= height {
            return Err(Error::Annotation(format!(
                "box ({},{})..({},{}) exceeds {width}x{height} slice",
                bbox.x0, bbox.y0, bbox.x1, bbox.y1
            )));
        }
        for y in bbox.y0..=bbox.y1 {
            for x in bbox.x0..=bbox.x1 {
                mask.set(y, x, true);
            }
        }
    }
    Ok(mask)
}

/// Localisation accuracy: the fraction of the annotation the saliency mask
/// covers. Undefined (error) when the annotation is empty.
pub fn la(gc: &BinaryMask, ann: &BinaryMask) -> Result<f64> {
    let overlap = gc.intersection_count(ann)?;
    let ann_count = ann.count();
    if ann_count == 0 {
        return Err(Error::UndefinedMetric(
            "localisation accuracy needs a non-empty annotation".to_string(),
        ));
    }
    Ok(overlap as f64 / ann_count as f64)
}

/// False positive penalty: saliency pixels outside the annotation as a
/// fraction of all pixels.
pub fn fpp(gc: &BinaryMask, ann: &BinaryMask) -> Result<f64> {
    let overlap = gc.intersection_count(ann)?;
    Ok((gc.count() - overlap) as f64 / gc.area() as f64)
}

/// Penalised localisation accuracy: `max(la - fpp, 0)`.
pub fn pla(gc: &BinaryMask, ann: &BinaryMask) -> Result<f64> {
    Ok((la(gc, ann)? - fpp(gc, ann)?).max(0.0))
}

/// Intersection over union. Undefined when both masks are empty.
pub fn iou(gc: &BinaryMask, ann: &BinaryMask) -> Result<f64> {
    let inter = gc.intersection_count(ann)?;
    let union = gc.count() + ann.count() - inter;
    if union == 0 {
        return Err(Error::UndefinedMetric(
            "IoU is undefined for two empty masks".to_string(),
        ));
    }
    Ok(inter as f64 / union as f64)
}

/// Dice coefficient `2|a AND b| / (|a| + |b|)`. Undefined when both masks
/// are empty.
pub fn dice(gc: &BinaryMask, ann: &BinaryMask) -> Result<f64> {
    let inter = gc.intersection_count(ann)?;
    let total = gc.count() + ann.count();
    if total == 0 {
        return Err(Error::UndefinedMetric(
            "Dice is undefined for two empty masks".to_string(),
        ));
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Rank-based (Mann-Whitney) AUC. Tied scores receive average ranks, so a
/// constant score vector gives exactly 0.5.
pub fn rank_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim(format!(
            "AUC needs matching lengths, got {} scores and {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("AUC scores contain NaN".to_string()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both classes present".to_string(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("no NaN"));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based average rank of the tie group spanning sorted positions i..=j.
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// AUC of raw saliency scores against the annotation mask, both flattened.
pub fn loc_auc(saliency: &SaliencyMap, ann: &BinaryMask) -> Result<f64> {
    if saliency.height() != ann.height() || saliency.width() != ann.width() {
        return Err(Error::dim(format!(
            "saliency {}x{} vs annotation {}x{}",
            saliency.height(),
            saliency.width(),
            ann.height(),
            ann.width()
        )));
    }
    rank_auc(saliency.data(), ann.data())
}

/// Case-level classification AUC; same ranking computation as [`loc_auc`].
pub fn classification_auc(probs: &[f64], labels: &[bool]) -> Result<f64> {
    rank_auc(probs, labels)
}

/// Which metric to read from a [`LocalisationScore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    La,
    Fpp,
    Pla,
    Iou,
    Dice,
    Auc,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::La,
        MetricKind::Fpp,
        MetricKind::Pla,
        MetricKind::Iou,
        MetricKind::Dice,
        MetricKind::Auc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::La => "la",
            MetricKind::Fpp => "fpp",
            MetricKind::Pla => "pla",
            MetricKind::Iou => "iou",
            MetricKind::Dice => "dice",
            MetricKind::Auc => "auc",
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "la" => Ok(MetricKind::La),
            "fpp" => Ok(MetricKind::Fpp),
            "pla" => Ok(MetricKind::Pla),
            "iou" => Ok(MetricKind::Iou),
            "dice" => Ok(MetricKind::Dice),
            "auc" => Ok(MetricKind::Auc),
            other => Err(Error::dim(format!("unknown metric {other:?}"))),
        }
    }
}

/// All six metrics of one slice at one pixel-importance threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalisationScore {
    pub slice_index: usize,
    /// Pixel-importance threshold the saliency mask was binarised at.
    pub x: f64,
    pub la: f64,
    pub fpp: f64,
    pub pla: f64,
    pub iou: f64,
    pub dice: f64,
    pub auc: f64,
}

impl LocalisationScore {
    pub fn get(&self, metric: MetricKind) -> f64 {
        match metric {
            MetricKind::La => self.la,
            MetricKind::Fpp => self.fpp,
            MetricKind::Pla => self.pla,
            MetricKind::Iou => self.iou,
            MetricKind::Dice => self.dice,
            MetricKind::Auc => self.auc,
        }
    }
}

/// Score one annotated slice: binarise the saliency map at `x` and compare
/// against the annotation mask.
///
/// The annotation must be non-empty and must not cover the whole slice
/// (otherwise LA or the AUC is undefined).
pub fn score_slice(
    saliency: &SaliencyMap,
    ann: &BinaryMask,
    x: f64,
    slice_index: usize,
) -> Result<LocalisationScore> {
    let gc = threshold_mask(saliency, x)?;
    let la_v = la(&gc, ann)?;
    let fpp_v = fpp(&gc, ann)?;
    Ok(LocalisationScore {
        slice_index,
        x,
        la: la_v,
        fpp: fpp_v,
        pla: (la_v - fpp_v).max(0.0),
        iou: iou(&gc, ann)?,
        dice: dice(&gc, ann)?,
        auc: loc_auc(saliency, ann)?,
    })
}

/// The slice with the highest value of the selected metric; ties go to the
/// lowest slice index.
pub fn key_slice(scores: &[LocalisationScore], metric: MetricKind) -> Result<&LocalisationScore> {
    scores
        .iter()
        .min_by(|a, b| {
            b.get(metric)
                .partial_cmp(&a.get(metric))
                .expect("metric values are not NaN")
                .then(a.slice_index.cmp(&b.slice_index))
        })
        .ok_or_else(|| Error::Empty("key-slice selection over no slices".to_string()))
}

/// Default aggregation thresholds: 0.50 to 0.95 in steps of 0.05.
pub fn default_k_grid() -> Vec<f64> {
    (10..=19).map(|i| i as f64 / 20.0).collect()
}

/// For each threshold `k`, the fraction of MRIs whose per-case score strictly
/// exceeds `k`. Thresholds must lie in `[0.5, 1)`.
pub fn aggregate_accuracy(scores_per_mri: &[f64], k_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if scores_per_mri.is_empty() {
        return Err(Error::Empty(
            "aggregate accuracy over no MRIs".to_string(),
        ));
    }
    let n = scores_per_mri.len() as f64;
    k_grid
        .iter()
        .map(|&k| {
            if !(0.5..1.0).contains(&k) {
                return Err(Error::Numeric(format!(
                    "aggregation threshold {k} outside [0.5, 1)"
                )));
            }
            let hits = scores_per_mri.iter().filter(|&&s| s > k).count();
            Ok((k, hits as f64 / n))
        })
        .collect()
}

/// Fraction of annotations whose LA strictly exceeds `cutoff`; returns
/// `(count detected, rate)`.
pub fn feature_detection_rate(la_values: &[f64], cutoff: f64) -> Result<(usize, f64)> {
    if la_values.is_empty() {
        return Err(Error::Empty(
            "feature detection rate over no annotations".to_string(),
        ));
    }
    let count = la_values.iter().filter(|&&v| v > cutoff).count();
    Ok((count, count as f64 / la_values.len() as f64))
}
