//! Synthetic planted-lesion dataset generator and its on-disk layout.
//!
//! Negative cases are pure Gaussian noise. Positive cases additionally carry
//! one bright Gaussian blob per plane, placed on a contiguous run of slices
//! and recorded as an `acl_tear` bounding box, so the ground truth for both
//! classification and localisation is known exactly. Everything is drawn from
//! a single seeded generator: the same config reproduces the same dataset
//! byte for byte.
//!
//! On disk a dataset is a directory with a `dataset.json` index plus one
//! directory per case holding `case.json` (id and label), a `.sgrd` volume
//! per plane, and a `.ann.json` annotation document per plane.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::annotations::{load_annotations, save_annotations, AnnotationFile};
use crate::io::grid::{load_grid_file, save_grid_file};
use crate::metrics::{AnnotationSet, BoundingBox};
use crate::model::{Plane, PlaneSet, Volume};
use crate::tensor::Tensor;

/// Category string recorded for every planted blob.
pub const LESION_CATEGORY: &str = "acl_tear";

/// Everything the generator needs; serialised into the dataset index so a
/// dataset on disk documents how it was made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_cases: usize,
    /// Slices per plane, drawn uniformly from `slices_min..=slices_max`.
    pub slices_min: usize,
    pub slices_max: usize,
    pub height: usize,
    pub width: usize,
    /// Lesion radius in pixels, drawn uniformly from `radius_min..=radius_max`.
    pub radius_min: usize,
    pub radius_max: usize,
    /// Peak intensity the blob adds on top of the background.
    pub intensity: f64,
    /// Standard deviation of the background noise.
    pub noise_sigma: f64,
    /// Fraction of positive cases; the positive count is exact
    /// (`round(n_cases * positive_fraction)`), not Bernoulli.
    pub positive_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_cases: 20,
            slices_min: 16,
            slices_max: 16,
            height: 64,
            width: 64,
            radius_min: 6,
            radius_max: 9,
            intensity: 3.0,
            noise_sigma: 1.0,
            positive_fraction: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cases < 2 {
            return Err(Error::dim(format!(
                "n_cases must be at least 2 so both classes exist, got {}",
                self.n_cases
            )));
        }
        if self.slices_min == 0 || self.slices_min > self.slices_max {
            return Err(Error::dim(format!(
                "slice range {}..={} is invalid",
                self.slices_min, self.slices_max
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::dim(format!(
                "slice dimensions must be positive, got {}x{}",
                self.height, self.width
            )));
        }
        if self.radius_min == 0 || self.radius_min > self.radius_max {
            return Err(Error::dim(format!(
                "radius range {}..={} is invalid",
                self.radius_min, self.radius_max
            )));
        }
        if 2 * self.radius_max >= self.height.min(self.width) {
            return Err(Error::dim(format!(
                "radius {} too large for {}x{} slices; need radius < min(H,W)/2",
                self.radius_max, self.height, self.width
            )));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::Numeric(format!(
                "noise sigma must be finite and non-negative, got {}",
                self.noise_sigma
            )));
        }
        if !self.intensity.is_finite() {
            return Err(Error::Numeric("lesion intensity must be finite".to_string()));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::Numeric(format!(
                "positive fraction must lie in (0,1), got {}",
                self.positive_fraction
            )));
        }
        let n_pos = self.n_positives();
        if n_pos == 0 || n_pos == self.n_cases {
            return Err(Error::dim(format!(
                "positive fraction {} of {} cases rounds to a single-class dataset",
                self.positive_fraction, self.n_cases
            )));
        }
        Ok(())
    }

    /// Exact positive count: `round(n_cases * positive_fraction)`.
    pub fn n_positives(&self) -> usize {
        (self.n_cases as f64 * self.positive_fraction).round() as usize
    }
}

/// One generated case: three plane volumes, the class label, and per-plane
/// ground-truth annotations (empty for negatives).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCase {
    pub case_id: String,
    pub label: bool,
    pub planes: PlaneSet,
    /// Indexed by `Plane::index()`.
    pub annotations: [AnnotationSet; 3],
}

impl SynthCase {
    pub fn annotation_for(&self, plane: Plane) -> &AnnotationSet {
        &self.annotations[plane.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub cases: Vec<SynthCase>,
}

impl SynthDataset {
    pub fn labels(&self) -> Vec<bool> {
        self.cases.iter().map(|c| c.label).collect()
    }
}

/// Generate a dataset. Case order is the (seeded) shuffled label order, so
/// positives and negatives interleave; case ids are zero-padded and sortable.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_sigma)
        .map_err(|e| Error::Numeric(format!("noise distribution: {e}")))?;

    let n_pos = config.n_positives();
    let mut labels = vec![true; n_pos];
    labels.resize(config.n_cases, false);
    labels.shuffle(&mut rng);

    let mut cases = Vec::with_capacity(config.n_cases);
    for (i, &label) in labels.iter().enumerate() {
        let case_id = format!("case_{i:04}");
        let mut volumes = Vec::with_capacity(3);
        let mut annotations: [AnnotationSet; 3] = Default::default();
        for plane in Plane::ALL {
            let s = rng.random_range(config.slices_min..=config.slices_max);
            let mut slices: Vec<Tensor> = (0..s)
                .map(|_| {
                    let data = (0..config.height * config.width)
                        .map(|_| noise.sample(&mut rng))
                        .collect();
                    Tensor::from_vec(vec![config.height, config.width], data)
                })
                .collect::<Result<_>>()?;
            if label {
                let blob = Blob::draw(config, s, &mut rng);
                for slice in &mut slices[blob.run_start..blob.run_start + blob.run_len] {
                    blob.add_to(slice, config.intensity);
                }
                for index in blob.run_start..blob.run_start + blob.run_len {
                    annotations[plane.index()].add(index, blob.bounding_box()?);
                }
            }
            volumes.push(Volume::from_slices(plane, &slices)?);
        }
        cases.push(SynthCase {
            case_id,
            label,
            planes: PlaneSet::new(volumes)?,
            annotations,
        });
    }
    Ok(SynthDataset {
        config: config.clone(),
        cases,
    })
}

/// Lesion geometry for one plane of one positive case. The centre stays at
/// least one radius from every border, so the recorded box always validates.
struct Blob {
    cy: usize,
    cx: usize,
    radius: usize,
    run_start: usize,
    run_len: usize,
}

impl Blob {
    fn draw(config: &SynthConfig, s: usize, rng: &mut ChaCha8Rng) -> Self {
        let radius = rng.random_range(config.radius_min..=config.radius_max);
        let cy = rng.random_range(radius..=config.height - 1 - radius);
        let cx = rng.random_range(radius..=config.width - 1 - radius);
        let run_min = (s / 4).max(1);
        let run_max = (s / 2).max(run_min);
        let run_len = rng.random_range(run_min..=run_max);
        let run_start = rng.random_range(0..=s - run_len);
        Blob {
            cy,
            cx,
            radius,
            run_start,
            run_len,
        }
    }

    /// Additive Gaussian bump peaking at the centre with sigma equal to the
    /// radius. The annotated box spans one sigma each way, so the intensity
    /// at its edge is still 61% of peak: the box marks the bright core, and
    /// a saliency map that tracks intensity clears a 0.6 threshold across
    /// most of it.
    fn add_to(&self, slice: &mut Tensor, intensity: f64) {
        let width = slice.shape()[1];
        let sigma = self.radius as f64;
        let data = slice.data_mut();
        for y in 0..data.len() / width {
            for x in 0..width {
                let dy = y as f64 - self.cy as f64;
                let dx = x as f64 - self.cx as f64;
                data[y * width + x] +=
                    intensity * (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            }
        }
    }

    fn bounding_box(&self) -> Result<BoundingBox> {
        BoundingBox::new(
            self.cx - self.radius,
            self.cy - self.radius,
            self.cx + self.radius,
            self.cy + self.radius,
            LESION_CATEGORY,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CaseMeta {
    case_id: String,
    label: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetIndex {
    config: SynthConfig,
    cases: Vec<String>,
}

/// Write a dataset directory: `dataset.json` plus one directory per case.
pub fn save_dataset(dir: impl AsRef<Path>, dataset: &SynthDataset) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let index = DatasetIndex {
        config: dataset.config.clone(),
        cases: dataset.cases.iter().map(|c| c.case_id.clone()).collect(),
    };
    let mut json = serde_json::to_vec_pretty(&index)?;
    json.push(b'\n');
    std::fs::write(dir.join("dataset.json"), json)?;
    for case in &dataset.cases {
        save_case(&dir.join(&case.case_id), case)?;
    }
    Ok(())
}

/// Write one self-contained case directory.
pub fn save_case(dir: impl AsRef<Path>, case: &SynthCase) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let meta = CaseMeta {
        case_id: case.case_id.clone(),
        label: case.label,
    };
    let mut json = serde_json::to_vec_pretty(&meta)?;
    json.push(b'\n');
    std::fs::write(dir.join("case.json"), json)?;
    for plane in Plane::ALL {
        let volume = case.planes.get(plane);
        save_grid_file(dir.join(format!("{plane}.sgrd")), volume.slices())?;
        let ann = AnnotationFile::from_annotation_set(
            &case.case_id,
            plane,
            case.annotation_for(plane),
        );
        save_annotations(dir.join(format!("{plane}.ann.json")), &ann)?;
    }
    Ok(())
}

/// Load one case directory written by [`save_case`]. The annotation files
/// must agree with `case.json` on case id and with their filename on plane.
pub fn load_case(dir: impl AsRef<Path>) -> Result<SynthCase> {
    let dir = dir.as_ref();
    let meta: CaseMeta = serde_json::from_slice(&std::fs::read(dir.join("case.json"))?)?;
    let mut volumes = Vec::with_capacity(3);
    let mut annotations: [AnnotationSet; 3] = Default::default();
    for plane in Plane::ALL {
        let grid = load_grid_file(dir.join(format!("{plane}.sgrd")))?;
        volumes.push(Volume::new(plane, grid)?);
        let ann = load_annotations(dir.join(format!("{plane}.ann.json")))?;
        if ann.plane != plane {
            return Err(Error::Annotation(format!(
                "{}: file for plane {plane} carries plane {}",
                dir.display(),
                ann.plane
            )));
        }
        if ann.case_id != meta.case_id {
            return Err(Error::Annotation(format!(
                "{}: annotation case id {} does not match case.json id {}",
                dir.display(),
                ann.case_id,
                meta.case_id
            )));
        }
        annotations[plane.index()] = ann.to_annotation_set();
    }
    Ok(SynthCase {
        case_id: meta.case_id,
        label: meta.label,
        planes: PlaneSet::new(volumes)?,
        annotations,
    })
}

/// Case directories listed in `dataset.json`, in index order.
pub fn case_dirs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let index: DatasetIndex = serde_json::from_slice(&std::fs::read(dir.join("dataset.json"))?)?;
    Ok(index.cases.iter().map(|id| dir.join(id)).collect())
}

/// Load a full dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<SynthDataset> {
    let dir = dir.as_ref();
    let index: DatasetIndex = serde_json::from_slice(&std::fs::read(dir.join("dataset.json"))?)?;
    let cases = index
        .cases
        .iter()
        .map(|id| load_case(dir.join(id)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthDataset {
        config: index.config,
        cases,
    })
}
