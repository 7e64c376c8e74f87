//! One function per CLI command. Each reads and writes only the paths it is
//! given; every random draw is seeded from the job seed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cloudseed::boxfit::{box_examples, compute_templates, predict_box, train_boxfit, BoxExample, BoxfitArch, BoxfitModel};
use cloudseed::eval::{evaluate_pipeline, metrics_csv, read_results, timing_report, write_results, ClassMetrics, DetectionResult, IouThresholds, SceneTiming, TimingReport};
use cloudseed::nn::ArchDescriptor;
use cloudseed::pointcloud::{
    load_scene, parse_kitti_calib, parse_kitti_labels, parse_velodyne_bin, save_scene, synthetic_scene, to_camera_frame, Category, Scene,
};
use cloudseed::seed::{derive_seed, hash_label};
use cloudseed::segmentation::{build_manifest, materialize, read_manifest, segment_instance, write_manifest, ManifestEntry, SegModel};
use cloudseed::workflow::AnnotatorSession;
use cloudseed::Error;
use serde::{Deserialize, Serialize};

use crate::config::JobConfig;

/// Networks train and run in single precision.
pub type Net = f32;

pub fn scene_ids(dir: &Path) -> anyhow::Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(".cspc") {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn load_scenes<T: cloudseed::Real>(dir: &Path) -> anyhow::Result<Vec<Scene<T>>> {
    scene_ids(dir)?
        .iter()
        .map(|id| load_scene(dir, id).with_context(|| format!("loading scene {id}")))
        .collect()
}

/// Scene ids held out for validation: the last tenth, by id.
fn validation_ids(ids: &[String]) -> BTreeSet<String> {
    let n = (ids.len() / 10).max(usize::from(ids.len() > 1));
    ids[ids.len() - n..].iter().cloned().collect()
}

pub fn synth_id(index: u64) -> String {
    format!("synth-{index:05}")
}

/// Writes scenes `offset .. offset + count`. A scene's content depends only on
/// the seed and its index.
pub fn synth(cfg: &JobConfig, out: &Path, count: u64, offset: u64) -> anyhow::Result<Vec<String>> {
    let mut ids = Vec::new();
    for i in offset..offset + count {
        let seed = derive_seed(cfg.seed, &[hash_label("synth"), i]);
        let scene = synthetic_scene::<f64>(&cfg.synth, seed)?.into_scene(synth_id(i));
        save_scene(out, &scene)?;
        ids.push(scene.id);
    }
    Ok(ids)
}

/// Converts a KITTI object split (`velodyne/`, `calib/`, optional `label_2/`)
/// into camera-frame scene containers.
pub fn ingest(root: &Path, out: &Path, only: Option<&[String]>) -> anyhow::Result<Vec<String>> {
    let velodyne = root.join("velodyne");
    let mut ids: Vec<String> = match only {
        Some(ids) => ids.to_vec(),
        None => std::fs::read_dir(&velodyne)
            .with_context(|| format!("listing {}", velodyne.display()))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_string_lossy().strip_suffix(".bin").map(str::to_string))
            .collect(),
    };
    ids.sort();
    for id in &ids {
        let raw = std::fs::read(velodyne.join(format!("{id}.bin"))).with_context(|| format!("velodyne scan {id}"))?;
        let calib_path = root.join("calib").join(format!("{id}.txt"));
        let calib = parse_kitti_calib(&std::fs::read_to_string(&calib_path).with_context(|| format!("calibration {id}"))?)
            .with_context(|| format!("calibration {id}"))?;
        let cloud = to_camera_frame(&parse_velodyne_bin::<f64>(&raw)?, &calib)?;
        let label_path = root.join("label_2").join(format!("{id}.txt"));
        let objects = if label_path.exists() {
            parse_kitti_labels(&std::fs::read_to_string(&label_path)?).with_context(|| format!("labels {id}"))?
        } else {
            Vec::new()
        };
        save_scene(out, &Scene { id: id.clone(), cloud, objects })?;
    }
    Ok(ids)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClickSummary {
    pub clicks: usize,
    pub instances_used: usize,
    /// (scene, instance, points) of instances too sparse to click.
    pub too_sparse: Vec<(String, usize, usize)>,
}

/// Simulated clicks for every instance of the job category.
pub fn simulate_clicks(cfg: &JobConfig, scenes_dir: &Path, out: &Path, per_instance: Option<usize>) -> anyhow::Result<ClickSummary> {
    let scenes = load_scenes::<Net>(scenes_dir)?;
    let (entries, report) = build_manifest(
        &scenes,
        cfg.category,
        per_instance.unwrap_or(cfg.segmentation.clicks_per_instance),
        cfg.k.get(cfg.category),
        cfg.segmentation.count,
        derive_seed(cfg.seed, &[hash_label("clicks")]),
    )?;
    write_manifest(out, &entries)?;
    Ok(ClickSummary {
        clicks: entries.len(),
        instances_used: report.used,
        too_sparse: report.too_sparse,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub train_examples: usize,
    pub val_examples: usize,
    pub iterations: usize,
    pub best_val_loss: Option<f64>,
}

pub fn train_seg(cfg: &JobConfig, scenes_dir: &Path, clicks: &Path, out: &Path) -> anyhow::Result<TrainSummary> {
    let scenes = load_scenes::<Net>(scenes_dir)?;
    let entries: Vec<ManifestEntry<Net>> = read_manifest(clicks)?;
    let entries: Vec<_> = entries.into_iter().filter(|e| e.click.category == cfg.category).collect();
    if entries.is_empty() {
        bail!("no {} clicks in {}", cfg.category, clicks.display());
    }
    let ids: Vec<String> = entries.iter().map(|e| e.scene_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let val_ids = validation_ids(&ids);
    let examples = materialize(&scenes, &entries)?;
    let (val, train): (Vec<_>, Vec<_>) = examples.into_iter().partition(|e| val_ids.contains(&e.meta.scene_id));
    let train_cfg = cloudseed::nn::TrainConfig {
        rng_seed: derive_seed(cfg.seed, &[hash_label("train-seg")]),
        ..cfg.segmentation.train.clone()
    };
    let (params, history) =
        cloudseed::segmentation::train_segmentation(&ArchDescriptor::desk_segmentation(), &train, &val, &train_cfg)?;
    let model = SegModel {
        category: cfg.category,
        params,
        k: cfg.k.get(cfg.category),
        count: cfg.segmentation.count,
        threshold: cfg.segmentation.threshold,
    };
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    model.save(out, cfg.seed, Some(&history))?;
    Ok(TrainSummary {
        train_examples: train.len(),
        val_examples: val.len(),
        iterations: history.iterations_run,
        best_val_loss: history.best_val_loss,
    })
}

/// Trains the centroid and box networks on every category, with size
/// templates drawn from the training split's ground truth.
pub fn train_box(cfg: &JobConfig, scenes_dir: &Path, out: &Path) -> anyhow::Result<TrainSummary> {
    let scenes = load_scenes::<Net>(scenes_dir)?;
    let ids: Vec<String> = scenes.iter().map(|s| s.id.clone()).collect();
    let val_ids = validation_ids(&ids);
    let (val_scenes, train_scenes): (Vec<_>, Vec<_>) = scenes.into_iter().partition(|s| val_ids.contains(&s.id));
    let gt: Vec<_> = train_scenes.iter().flat_map(|s| s.objects.iter().copied()).collect();
    let templates = compute_templates(&gt)?;
    let train: Vec<BoxExample<Net>> = box_examples(&train_scenes, &Category::ALL);
    let val = box_examples(&val_scenes, &Category::ALL);
    let nh = cfg.boxfit.heading_bins;
    let model = BoxfitModel::init(
        &BoxfitArch::desk(nh),
        templates,
        nh,
        cfg.boxfit.count,
        derive_seed(cfg.seed, &[hash_label("box-init")]),
    )?;
    let train_cfg = cloudseed::nn::TrainConfig {
        rng_seed: derive_seed(cfg.seed, &[hash_label("train-box")]),
        ..cfg.boxfit.train.clone()
    };
    let (model, history) = train_boxfit(model, &train, &val, &train_cfg)?;
    model.save(out, cfg.seed)?;
    Ok(TrainSummary {
        train_examples: train.len(),
        val_examples: val.len(),
        iterations: history.iterations_run,
        best_val_loss: history.best_val_loss,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InferSummary {
    pub clicks: usize,
    pub detections: usize,
    /// Clicks whose segmentation came back empty or below threshold.
    pub rejected: usize,
}

/// Segments each click of the model's category and fits a box to the mask.
pub fn infer(cfg: &JobConfig, scenes_dir: &Path, clicks: &Path, seg_model: &Path, box_model: &Path, out: &Path) -> anyhow::Result<InferSummary> {
    let seg = SegModel::<Net>::load(seg_model).with_context(|| format!("loading {}", seg_model.display()))?;
    let boxes = BoxfitModel::<Net>::load(box_model).with_context(|| format!("loading {}", box_model.display()))?;
    let scenes: BTreeMap<String, Scene<Net>> = load_scenes::<Net>(scenes_dir)?.into_iter().map(|s| (s.id.clone(), s)).collect();
    let entries: Vec<ManifestEntry<Net>> = read_manifest(clicks)?;
    let mut results = Vec::new();
    let (mut used, mut rejected) = (0, 0);
    for (i, e) in entries.iter().enumerate() {
        if e.click.category != seg.category {
            continue;
        }
        used += 1;
        let scene = scenes.get(&e.scene_id).with_context(|| format!("click for unknown scene {}", e.scene_id))?;
        let seed = derive_seed(cfg.seed, &[hash_label("infer"), i as u64]);
        let mask = match segment_instance(&seg, &scene.cloud, &e.click, seed) {
            Ok(m) => m,
            Err(Error::EmptyInstance(_) | Error::BelowThreshold { .. }) => {
                rejected += 1;
                continue;
            }
            Err(err) => return Err(err.into()),
        };
        let points = scene.cloud.gather(mask.source_indices.as_slice().iter().copied());
        let pred = predict_box(&boxes, &points, derive_seed(seed, &[1]))?;
        results.push(DetectionResult::from_mask(&e.scene_id, pred.bbox, mask));
    }
    write_results(out, &results)?;
    Ok(InferSummary {
        clicks: used,
        detections: results.len(),
        rejected,
    })
}

/// Writes `metrics.json` and `metrics.csv` into `out`.
pub fn evaluate(scenes_dir: &Path, results: &Path, out: &Path, thresholds: &IouThresholds) -> anyhow::Result<BTreeMap<Category, ClassMetrics>> {
    let scenes = load_scenes::<Net>(scenes_dir)?;
    let results: Vec<DetectionResult<Net>> = read_results(results)?;
    let metrics = evaluate_pipeline(&results, &scenes, thresholds)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("metrics.json"), serde_json::to_vec_pretty(&metrics)?)?;
    std::fs::write(out.join("metrics.csv"), metrics_csv(&metrics))?;
    Ok(metrics)
}

/// Timings from session snapshots (`*.json` in a directory) or from a JSON
/// lines file of scene timings.
pub fn read_timings(input: &Path) -> anyhow::Result<Vec<SceneTiming>> {
    if input.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(input)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        files.sort();
        let mut out = Vec::new();
        for f in files {
            let session = AnnotatorSession::<f64>::load(&f).with_context(|| format!("session snapshot {}", f.display()))?;
            out.extend(session.history.iter().map(SceneTiming::from));
        }
        Ok(out)
    } else {
        let text = std::fs::read_to_string(input)?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", input.display(), i + 1)))
            .collect()
    }
}

/// Writes `timing.csv`, `timing.svg` and `timing.json` into `out`.
pub fn timing(input: &Path, out: &Path) -> anyhow::Result<TimingReport> {
    let report = timing_report(&read_timings(input)?);
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("timing.csv"), report.to_csv())?;
    std::fs::write(out.join("timing.svg"), report.to_svg())?;
    std::fs::write(out.join("timing.json"), serde_json::to_vec_pretty(&report)?)?;
    Ok(report)
}
