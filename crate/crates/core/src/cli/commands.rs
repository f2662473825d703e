//! Implementations of the five subcommands.
//!
//! Input problems (missing or malformed files, inconsistent flag
//! combinations) become [`CliError::Validation`] with a message naming the
//! file or flag; anything unexpected bubbles as [`CliError::Internal`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::report::{
    write_json, CasePrediction, CaseReport, CurveCase, CurvePoint, CurveReport, FeatureRow,
    GradcamMeta, KeyEntry, TrainReport,
};
use super::{
    AggregateArgs, CliError, CliResult, GradcamArgs, MetricsArgs, RunManifest, SynthArgs,
    TrainArgs,
};
use crate::error::Error;
use crate::io::annotations::load_annotations;
use crate::io::grid::{load_grid_file, save_grid_file};
use crate::io::synth::{self, SynthCase, SynthConfig};
use crate::metrics::{
    aggregate_accuracy, classification_auc, feature_detection_rate, key_slice, rasterize,
    score_slice, LocalisationScore, MetricKind,
};
use crate::model::{
    load_model, save_model, train_toy, BackboneConfig, FusionStrategy, Plane, SinglePlaneModel,
    TrainConfig, TrainedModel,
};
use crate::saliency::{gradcam, GradCamLayer, SaliencyMap};

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

/// Thread pool capped by the LOCVALID_THREADS environment variable.
fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("LOCVALID_THREADS") {
        let n: usize = raw.trim().parse().map_err(|_| {
            validation(format!(
                "env LOCVALID_THREADS: expected a positive integer, got {raw:?}"
            ))
        })?;
        if n == 0 {
            return Err(validation(
                "env LOCVALID_THREADS: expected a positive integer, got 0",
            ));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Internal(Error::Io(std::io::Error::other(e))))
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> CliResult<()> {
    write_json(path, manifest)?;
    Ok(())
}

/// Create the parent directory of a single-file output so `--out` works in a
/// fresh results tree.
fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(Error::from)?;
    }
    Ok(())
}

/// Split `--out report.csv` (or `.json`) into both concrete paths.
fn out_pair(out: &Path) -> CliResult<(PathBuf, PathBuf)> {
    match out.extension().and_then(|e| e.to_str()) {
        Some("csv") => Ok((out.to_path_buf(), out.with_extension("json"))),
        Some("json") => Ok((out.with_extension("csv"), out.to_path_buf())),
        _ => Err(validation(format!(
            "--out: {} must end in .csv or .json",
            out.display()
        ))),
    }
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let config = SynthConfig {
        seed: args.seed,
        n_cases: args.n,
        slices_min: args.slices_min,
        slices_max: args.slices_max,
        height: args.height,
        width: args.width,
        radius_min: args.radius_min,
        radius_max: args.radius_max,
        intensity: args.intensity,
        noise_sigma: args.noise_sigma,
        positive_fraction: args.positive_fraction,
    };
    config
        .validate()
        .map_err(|e| validation(format!("synth flags: {e}")))?;
    let dataset = synth::generate_synthetic(&config)?;
    synth::save_dataset(&args.out, &dataset)?;
    write_manifest(
        &args.out.join("run.json"),
        &RunManifest::new("synth", Some(args.seed)),
    )?;
    println!(
        "wrote {} cases ({} positive) to {}",
        dataset.cases.len(),
        dataset.cases.iter().filter(|c| c.label).count(),
        args.out.display()
    );
    Ok(())
}

fn load_cases(data: &Path, pool: &rayon::ThreadPool) -> CliResult<Vec<SynthCase>> {
    let dirs = synth::case_dirs(data)
        .map_err(|e| validation(format!("{}: {e}", data.join("dataset.json").display())))?;
    pool.install(|| {
        dirs.par_iter()
            .map(|dir| {
                synth::load_case(dir).map_err(|e| validation(format!("{}: {e}", dir.display())))
            })
            .collect()
    })
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let strategy: FusionStrategy = args.strategy.into();
    let plane = match (strategy, args.plane.single()) {
        (FusionStrategy::SinglePlane, Some(p)) => p,
        (FusionStrategy::SinglePlane, None) => {
            return Err(validation(
                "--plane: single-plane training needs axial, coronal, or sagittal, not all",
            ))
        }
        (_, None) => Plane::Axial, // fusion strategies always use all planes
        (_, Some(_)) => {
            return Err(validation(format!(
                "--plane: strategy {strategy} trains on all planes; pass --plane all"
            )))
        }
    };
    if !(0.0..=0.8).contains(&args.holdout) {
        return Err(validation(format!(
            "--holdout: must lie in [0, 0.8], got {}",
            args.holdout
        )));
    }
    if !(args.lr.is_finite() && args.lr > 0.0) {
        return Err(validation(format!(
            "--lr: must be positive and finite, got {}",
            args.lr
        )));
    }

    let pool = thread_pool()?;
    let cases = load_cases(&args.data, &pool)?;
    let n = cases.len();
    let n_hold = (n as f64 * args.holdout).round() as usize;
    if n - n_hold < 2 {
        return Err(validation(format!(
            "--holdout: {} of {n} cases leaves fewer than 2 for training",
            n_hold
        )));
    }

    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(args.seed));
    let (hold_idx, train_idx) = order.split_at(n_hold);

    let train_cases: Vec<_> = train_idx.iter().map(|&i| cases[i].planes.clone()).collect();
    let train_labels: Vec<bool> = train_idx.iter().map(|&i| cases[i].label).collect();
    let n_pos = train_labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == train_labels.len() {
        return Err(validation(format!(
            "--holdout/--seed: training split has a single class \
             ({n_pos} of {} positive); adjust the split",
            train_labels.len()
        )));
    }

    let cfg = TrainConfig {
        epochs: args.epochs,
        lr: args.lr,
        seed: args.seed,
        augment: !args.no_augment,
        backbone: BackboneConfig::toy(),
    };
    let outcome = train_toy(strategy, plane, &train_cases, &train_labels, &cfg)?;
    for line in &outcome.log {
        eprintln!(
            "epoch {}: mean loss {:.4}, train AUC {:.3}",
            line.epoch, line.mean_loss, line.train_auc
        );
    }

    let mut holdout: Vec<CasePrediction> = pool.install(|| {
        hold_idx
            .par_iter()
            .map(|&i| {
                let case = &cases[i];
                Ok(CasePrediction {
                    case_id: case.case_id.clone(),
                    label: case.label,
                    prob: outcome.model.predict_case(&case.planes)?,
                })
            })
            .collect::<CliResult<_>>()
    })?;
    holdout.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let probs: Vec<f64> = holdout.iter().map(|c| c.prob).collect();
    let labels: Vec<bool> = holdout.iter().map(|c| c.label).collect();
    let holdout_auc = classification_auc(&probs, &labels).ok();

    ensure_parent(&args.out)?;
    save_model(&args.out, &outcome.model)?;
    let report = TrainReport {
        strategy: strategy.to_string(),
        plane: match strategy {
            FusionStrategy::SinglePlane => plane.to_string(),
            _ => "all".to_string(),
        },
        config: cfg,
        n_train: train_cases.len(),
        epochs: outcome.log,
        holdout,
        holdout_auc,
    };
    write_json(args.out.with_extension("log.json"), &report)?;
    write_manifest(
        &args.out.with_extension("run.json"),
        &RunManifest::new("train", Some(args.seed)),
    )?;
    match report.holdout_auc {
        Some(auc) => println!(
            "trained {strategy} on {} cases; holdout AUC {auc:.3} over {} cases",
            report.n_train,
            report.holdout.len()
        ),
        None => println!(
            "trained {strategy} on {} cases; no holdout AUC (empty or single-class holdout)",
            report.n_train
        ),
    }
    Ok(())
}

pub fn cmd_gradcam(args: &GradcamArgs) -> CliResult<()> {
    let model = load_model(&args.model)
        .map_err(|e| validation(format!("{}: {e}", args.model.display())))?;
    let case = synth::load_case(&args.case)
        .map_err(|e| validation(format!("{}: {e}", args.case.display())))?;

    let single: &SinglePlaneModel = match &model {
        TrainedModel::SinglePlane(m) => {
            if let Some(arg) = args.plane {
                match arg.single() {
                    Some(p) if p == m.plane() => {}
                    Some(p) => {
                        return Err(validation(format!(
                            "--plane: checkpoint is for plane {}, not {p}",
                            m.plane()
                        )))
                    }
                    None => {
                        return Err(validation(
                            "--plane: a single-plane checkpoint explains exactly its own plane",
                        ))
                    }
                }
            }
            m
        }
        TrainedModel::Mplr(m) => {
            let p = args.plane.and_then(|p| p.single()).ok_or_else(|| {
                validation(
                    "--plane: an mplr checkpoint needs an explicit plane \
                     (axial, coronal, or sagittal)",
                )
            })?;
            m.plane_model(p)
        }
        other => {
            return Err(validation(format!(
                "--model: strategy {} fuses planes before the output and has no \
                 per-plane Grad-Cam; use a single or mplr checkpoint",
                other.strategy()
            )))
        }
    };

    let volume = case.planes.get(single.plane());
    let layer = args.layer.map(GradCamLayer::Stage).unwrap_or_default();
    let pool = thread_pool()?;
    let maps: Vec<SaliencyMap> = pool
        .install(|| {
            (0..volume.num_slices())
                .into_par_iter()
                .map(|i| gradcam(single, volume, i, layer))
                .collect::<crate::error::Result<_>>()
        })
        .map_err(|e| match e {
            Error::Index(msg) => validation(format!("--layer: {msg}")),
            other => CliError::Internal(other),
        })?;

    std::fs::create_dir_all(&args.out).map_err(Error::from)?;
    for (i, map) in maps.iter().enumerate() {
        save_grid_file(args.out.join(format!("slice_{i:03}.sgrd")), &map.to_tensor())?;
    }
    write_json(
        args.out.join("gradcam.json"),
        &GradcamMeta {
            case_id: case.case_id.clone(),
            plane: single.plane(),
            n_slices: maps.len(),
            layer: args.layer,
        },
    )?;
    write_manifest(&args.out.join("run.json"), &RunManifest::new("gradcam", None))?;
    println!(
        "wrote {} saliency maps for {} ({}) to {}",
        maps.len(),
        case.case_id,
        single.plane(),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_metrics(args: &MetricsArgs) -> CliResult<()> {
    if !(args.threshold > 0.0 && args.threshold < 1.0) {
        return Err(validation(format!(
            "--threshold: must lie strictly between 0 and 1, got {}",
            args.threshold
        )));
    }
    if args.category.is_empty() {
        return Err(validation("--category: must be non-empty"));
    }
    let ann_path = args.annotations.display().to_string();
    let ann_file = load_annotations(&args.annotations)
        .map_err(|e| validation(format!("{ann_path}: {e}")))?;

    let meta_path = args.saliency.join("gradcam.json");
    if meta_path.exists() {
        let meta: GradcamMeta = std::fs::read(&meta_path)
            .map_err(Error::from)
            .and_then(|b| Ok(serde_json::from_slice(&b)?))
            .map_err(|e| validation(format!("{}: {e}", meta_path.display())))?;
        if meta.case_id != ann_file.case_id {
            return Err(validation(format!(
                "{}: case id {} does not match {ann_path} case id {}",
                meta_path.display(),
                meta.case_id,
                ann_file.case_id
            )));
        }
        if meta.plane != ann_file.plane {
            return Err(validation(format!(
                "{}: plane {} does not match {ann_path} plane {}",
                meta_path.display(),
                meta.plane,
                ann_file.plane
            )));
        }
    }

    let set = ann_file.to_annotation_set();
    let targets: Vec<usize> = set
        .iter()
        .filter(|(_, boxes)| boxes.iter().any(|b| b.category == args.category))
        .map(|(i, _)| i)
        .collect();
    if targets.is_empty() {
        return Err(validation(format!(
            "{ann_path}: no slices carry category {:?}",
            args.category
        )));
    }

    let maps: Vec<SaliencyMap> = targets
        .iter()
        .map(|&i| {
            let path = args.saliency.join(format!("slice_{i:03}.sgrd"));
            if !path.exists() {
                return Err(validation(format!(
                    "{}: missing saliency map for annotated slice {i}",
                    path.display()
                )));
            }
            load_grid_file(&path)
                .and_then(|t| SaliencyMap::from_tensor(&t))
                .map_err(|e| validation(format!("{}: {e}", path.display())))
        })
        .collect::<CliResult<_>>()?;

    let pool = thread_pool()?;
    let scores: Vec<LocalisationScore> = pool.install(|| {
        targets
            .par_iter()
            .zip(&maps)
            .map(|(&i, map)| {
                let mask = rasterize(&set, i, map.height(), map.width(), Some(&args.category))
                    .map_err(|e| validation(format!("{ann_path}: slice {i}: {e}")))?;
                score_slice(map, &mask, args.threshold, i)
                    .map_err(|e| validation(format!("{ann_path}: slice {i}: {e}")))
            })
            .collect::<CliResult<Vec<_>>>()
    })?;

    let mut key = BTreeMap::new();
    for metric in MetricKind::ALL {
        let best = key_slice(&scores, metric)?;
        key.insert(
            metric.as_str().to_string(),
            KeyEntry {
                slice_index: best.slice_index,
                value: best.get(metric),
            },
        );
    }
    let report = CaseReport {
        note: super::report::AUC_NOTE.to_string(),
        case_id: ann_file.case_id.clone(),
        plane: ann_file.plane,
        category: args.category.clone(),
        threshold: args.threshold,
        slices: scores,
        key,
    };

    let (csv_path, json_path) = out_pair(&args.out)?;
    ensure_parent(&args.out)?;
    report.write_csv(&csv_path)?;
    write_json(&json_path, &report)?;
    write_manifest(
        &args.out.with_extension("run.json"),
        &RunManifest::new("metrics", None),
    )?;
    let pla = &report.key["pla"];
    println!(
        "scored {} slices of {}; key-slice PLA {:.3} at slice {}",
        report.slices.len(),
        report.case_id,
        pla.value,
        pla.slice_index
    );
    Ok(())
}

pub fn cmd_aggregate(args: &AggregateArgs) -> CliResult<()> {
    if !(args.k_min >= 0.5 && args.k_min < 1.0) {
        return Err(validation(format!(
            "--k-min: must lie in [0.5, 1), got {}",
            args.k_min
        )));
    }
    if !(args.k_max >= args.k_min && args.k_max < 1.0) {
        return Err(validation(format!(
            "--k-max: must lie in [--k-min, 1), got {}",
            args.k_max
        )));
    }
    if !(args.k_step.is_finite() && args.k_step > 0.0) {
        return Err(validation(format!(
            "--k-step: must be positive, got {}",
            args.k_step
        )));
    }
    if !(args.cutoff > 0.0 && args.cutoff < 1.0) {
        return Err(validation(format!(
            "--cutoff: must lie strictly between 0 and 1, got {}",
            args.cutoff
        )));
    }

    let mut paths = Vec::new();
    for entry in glob::glob(&args.reports)
        .map_err(|e| validation(format!("--reports: bad glob {:?}: {e}", args.reports)))?
    {
        let path = entry.map_err(|e| validation(format!("--reports: {e}")))?;
        // Run manifests live next to reports and share the .json suffix.
        if path.to_string_lossy().ends_with(".run.json") {
            continue;
        }
        paths.push(path);
    }
    if paths.is_empty() {
        return Err(validation(format!(
            "--reports: no report files match {:?} (run manifests are skipped)",
            args.reports
        )));
    }
    paths.sort();

    let pool = thread_pool()?;
    let mut reports: Vec<(PathBuf, CaseReport)> = pool.install(|| {
        paths
            .par_iter()
            .map(|path| {
                let report: CaseReport = std::fs::read(path)
                    .map_err(Error::from)
                    .and_then(|b| Ok(serde_json::from_slice(&b)?))
                    .map_err(|e| validation(format!("{}: {e}", path.display())))?;
                Ok((path.clone(), report))
            })
            .collect::<CliResult<Vec<_>>>()
    })?;
    reports.sort_by(|(_, a), (_, b)| {
        (a.case_id.as_str(), a.plane.as_str()).cmp(&(b.case_id.as_str(), b.plane.as_str()))
    });

    let metric: MetricKind = args.metric.into();
    let key_of = |path: &Path, report: &CaseReport, name: &str| -> CliResult<f64> {
        report.key.get(name).map(|e| e.value).ok_or_else(|| {
            validation(format!(
                "{}: field key.{name} missing from report",
                path.display()
            ))
        })
    };
    let values = reports
        .iter()
        .map(|(path, report)| key_of(path, report, metric.as_str()))
        .collect::<CliResult<Vec<f64>>>()?;

    let mut grid = Vec::new();
    let mut i = 0usize;
    loop {
        let k = args.k_min + i as f64 * args.k_step;
        if k > args.k_max + 1e-9 {
            break;
        }
        // Accumulated float error would otherwise leak into the CSV
        // (0.8500000000000001 instead of 0.85).
        grid.push((k * 1e10).round() / 1e10);
        i += 1;
    }
    let curve = aggregate_accuracy(&values, &grid)?
        .into_iter()
        .map(|(k, accuracy)| CurvePoint { k, accuracy })
        .collect();

    let mut by_category: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (path, report) in &reports {
        by_category
            .entry(report.category.clone())
            .or_default()
            .push(key_of(path, report, "la")?);
    }
    let features = by_category
        .iter()
        .map(|(feature, las)| {
            let (count, rate) = feature_detection_rate(las, args.cutoff)?;
            Ok(FeatureRow {
                feature: feature.clone(),
                count,
                rate,
            })
        })
        .collect::<crate::error::Result<Vec<_>>>()?;

    let out = CurveReport {
        metric: metric.as_str().to_string(),
        cutoff: args.cutoff,
        cases: reports
            .iter()
            .map(|(_, r)| CurveCase {
                case_id: r.case_id.clone(),
                plane: r.plane,
                key: r.key.clone(),
            })
            .collect(),
        curve,
        features,
    };

    let (csv_path, json_path) = out_pair(&args.out)?;
    ensure_parent(&args.out)?;
    out.write_curve_csv(&csv_path)?;
    write_json(&json_path, &out)?;
    out.write_features_csv(csv_path.with_extension("features.csv"))?;
    write_manifest(
        &args.out.with_extension("run.json"),
        &RunManifest::new("aggregate", None),
    )?;
    println!(
        "aggregated {} reports over {} thresholds; {} accuracy at k={:.2} is {:.3}",
        out.cases.len(),
        out.curve.len(),
        out.metric,
        out.curve[0].k,
        out.curve[0].accuracy
    );
    Ok(())
}
