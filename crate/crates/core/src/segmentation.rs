//! Click-seeded instance segmentation.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{points_in_box, IndexSet};
use crate::nn::{
    self, fit, loss_and_gradient, mean_gradient, sample_fixed_points, scatter_max, ArchDescriptor, LossSpec, Mode,
    ModelParams, Objective, TrainConfig, TrainHistory,
};
use crate::pointcloud::{crop_volume, Category, GroundTruthObject, PointCloud, Point3, Scene};
use crate::scalar::Real;
use crate::seed::{derive_seed, hash_label};

/// Instances with fewer points than this inside their box are not trained on.
pub const MIN_INSTANCE_POINTS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct Click<T> {
    pub scene_id: String,
    pub category: Category,
    pub position: Point3<T>,
    /// Milliseconds since the session started.
    pub timestamp_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct ExampleMeta<T> {
    pub scene_id: String,
    /// Index of the clicked object in the scene's ground truth.
    pub instance: usize,
    pub click: Click<T>,
}

/// A fixed-size, click-centered training patch with per-point labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SegExample<T> {
    pub input_points: Vec<Point3<T>>,
    pub labels: Vec<u8>,
    pub meta: ExampleMeta<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct InstanceMask<T> {
    pub source_indices: IndexSet,
    /// Foreground probability of each index, aligned with `source_indices`.
    pub foreground_confidence: Vec<T>,
    pub click: Click<T>,
}

/// Picks a scene point inside `gt` uniformly at random.
pub fn simulate_click<T: Real>(
    scene_id: &str,
    cloud: &PointCloud<T>,
    gt: &GroundTruthObject<T>,
    seed: u64,
) -> Result<Click<T>> {
    let inside = points_in_box(cloud, &gt.bbox);
    if inside.is_empty() {
        return Err(Error::InstanceTooSparse(format!(
            "no points inside the {} box at {:?}",
            gt.category,
            gt.bbox.centroid().to_array()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = inside.as_slice()[rng.random_range(0..inside.len())];
    Ok(Click {
        scene_id: scene_id.to_string(),
        category: gt.category,
        position: cloud.points[pick],
        timestamp_ms: 0,
    })
}

/// Index of the first object of the click's category whose box holds the click.
pub fn clicked_instance<T: Real>(objects: &[GroundTruthObject<T>], click: &Click<T>) -> Result<usize> {
    objects
        .iter()
        .position(|o| o.category == click.category && o.bbox.contains(click.position))
        .ok_or_else(|| Error::LabelAmbiguity(click.category.to_string()))
}

/// Crops around the click, labels points of the clicked instance 1 and
/// everything else (other instances included) 0, then resamples to `count`.
pub fn make_seg_example<T: Real>(
    cloud: &PointCloud<T>,
    objects: &[GroundTruthObject<T>],
    click: &Click<T>,
    k: T,
    count: usize,
    seed: u64,
) -> Result<SegExample<T>> {
    let instance = clicked_instance(objects, click)?;
    let patch = crop_volume(cloud, click.position, k)?;
    let bbox = objects[instance].bbox;
    let labelled: Vec<(Point3<T>, u8)> = patch
        .points
        .iter()
        .map(|p| (*p, bbox.contains(*p + click.position) as u8))
        .collect();
    let sample = sample_fixed_points(&labelled, count, seed)?;
    let (input_points, labels) = sample.points.into_iter().unzip();
    Ok(SegExample {
        input_points,
        labels,
        meta: ExampleMeta {
            scene_id: click.scene_id.clone(),
            instance,
            click: click.clone(),
        },
    })
}

/// One manifest line: enough to regenerate a [`SegExample`] from its scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct ManifestEntry<T> {
    pub scene_id: String,
    pub instance: usize,
    pub click: Click<T>,
    pub k: f64,
    pub count: usize,
    pub seed: u64,
}

impl<T: Real> ManifestEntry<T> {
    pub fn materialize(&self, scene: &Scene<T>) -> Result<SegExample<T>> {
        if scene.id != self.scene_id {
            return Err(Error::Parameter(format!(
                "manifest entry for scene {} applied to {}",
                self.scene_id, scene.id
            )));
        }
        make_seg_example(&scene.cloud, &scene.objects, &self.click, T::lit(self.k), self.count, self.seed)
    }
}

pub fn write_manifest<T: Real>(path: impl AsRef<Path>, entries: &[ManifestEntry<T>]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest<T: Real>(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry<T>>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut entries = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(entries)
}

/// Instances skipped while building a dataset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub used: usize,
    /// `(scene id, instance index, points inside the box)`.
    pub too_sparse: Vec<(String, usize, usize)>,
}

/// Manifest with `clicks_per_instance` simulated clicks on every instance of
/// `category` that has at least [`MIN_INSTANCE_POINTS`] points.
pub fn build_manifest<T: Real>(
    scenes: &[Scene<T>],
    category: Category,
    clicks_per_instance: usize,
    k: f64,
    count: usize,
    seed: u64,
) -> Result<(Vec<ManifestEntry<T>>, IngestReport)> {
    let mut entries = Vec::new();
    let mut report = IngestReport::default();
    for scene in scenes {
        for (instance, obj) in scene.objects.iter().enumerate() {
            if obj.category != category {
                continue;
            }
            let inside = points_in_box(&scene.cloud, &obj.bbox).len();
            if inside < MIN_INSTANCE_POINTS {
                report.too_sparse.push((scene.id.clone(), instance, inside));
                continue;
            }
            report.used += 1;
            for c in 0..clicks_per_instance {
                let s = derive_seed(seed, &[hash_label(&scene.id), instance as u64, c as u64]);
                let click = simulate_click(&scene.id, &scene.cloud, obj, derive_seed(s, &[0]))?;
                entries.push(ManifestEntry {
                    scene_id: scene.id.clone(),
                    instance,
                    click,
                    k,
                    count,
                    seed: derive_seed(s, &[1]),
                });
            }
        }
    }
    Ok((entries, report))
}

/// Materializes manifest entries against their scenes.
pub fn materialize<T: Real>(scenes: &[Scene<T>], entries: &[ManifestEntry<T>]) -> Result<Vec<SegExample<T>>> {
    entries
        .iter()
        .map(|e| {
            let scene = scenes
                .iter()
                .find(|s| s.id == e.scene_id)
                .ok_or_else(|| Error::Parameter(format!("scene {} not loaded", e.scene_id)))?;
            e.materialize(scene)
        })
        .collect()
}

fn example_matrix<T: Real>(ex: &SegExample<T>) -> Array2<T> {
    nn::points_to_matrix(&ex.input_points)
}

struct SegObjective<'a, T> {
    params: &'a ModelParams<T>,
    train: &'a [SegExample<T>],
    val: &'a [SegExample<T>],
    batch_size: usize,
}

impl<T: Real> Objective<T> for SegObjective<'_, T> {
    fn batch_gradient(&self, values: &[T], _: usize, rng: &mut ChaCha8Rng) -> Result<(f64, Vec<T>)> {
        let picks: Vec<(usize, u64)> = (0..self.batch_size)
            .map(|_| (rng.random_range(0..self.train.len()), rng.random()))
            .collect();
        let view = self.params.with_values(values);
        mean_gradient(values.len(), picks.len(), |i| {
            let (idx, seed) = picks[i];
            let ex = &self.train[idx];
            loss_and_gradient(
                &view,
                example_matrix(ex).view(),
                Mode::Train { seed },
                LossSpec::SegCrossEntropy { labels: &ex.labels },
            )
        })
    }

    fn validation_loss(&self, values: &[T]) -> Result<Option<f64>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        let view = self.params.with_values(values);
        let losses: Vec<f64> = self
            .val
            .par_iter()
            .map(|ex| {
                let logits = nn::forward_seg(&view, example_matrix(ex).view(), Mode::Eval)?;
                Ok(nn::cross_entropy_per_point(logits.view(), &ex.labels)?.as_f64())
            })
            .collect::<Result<_>>()?;
        Ok(Some(losses.iter().sum::<f64>() / losses.len() as f64))
    }
}

fn check_disjoint<T>(train: &[SegExample<T>], val: &[SegExample<T>]) -> Result<()> {
    let train_ids: BTreeSet<(&str, usize)> = train.iter().map(|e| (e.meta.scene_id.as_str(), e.meta.instance)).collect();
    if let Some(e) = val.iter().find(|e| train_ids.contains(&(e.meta.scene_id.as_str(), e.meta.instance))) {
        return Err(Error::Parameter(format!(
            "instance {} of scene {} is in both training and validation sets",
            e.meta.instance, e.meta.scene_id
        )));
    }
    Ok(())
}

/// Trains one segmentation network; `config.rng_seed` seeds both
/// initialization and mini-batch sampling.
pub fn train_segmentation<T: Real>(
    arch: &ArchDescriptor,
    train: &[SegExample<T>],
    val: &[SegExample<T>],
    config: &TrainConfig,
) -> Result<(ModelParams<T>, TrainHistory)> {
    if train.is_empty() {
        return Err(Error::InsufficientData("segmentation training set is empty".into()));
    }
    if arch.head != nn::Head::PerPointBinary {
        return Err(Error::Parameter("segmentation needs a per-point binary head".into()));
    }
    check_disjoint(train, val)?;
    let mut params = ModelParams::init(arch.clone(), derive_seed(config.rng_seed, &[0]))?;
    let objective = SegObjective {
        params: &params,
        train,
        val,
        batch_size: config.batch_size,
    };
    let mut values = params.values.clone();
    let history = fit(&mut values, &objective, config)?;
    params.values = values;
    Ok((params, history))
}

/// A trained per-category segmentation network with its inference settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SegModel<T> {
    pub category: Category,
    pub params: ModelParams<T>,
    pub k: f64,
    pub count: usize,
    pub threshold: f64,
}

#[derive(Serialize, Deserialize)]
struct SegModelMeta {
    category: Category,
    k: f64,
    count: usize,
    threshold: f64,
}

impl<T: Real> SegModel<T> {
    pub fn save(&self, path: impl AsRef<Path>, seed: u64, history: Option<&TrainHistory>) -> Result<()> {
        let meta = serde_json::json!({
            "segmentation": SegModelMeta { category: self.category, k: self.k, count: self.count, threshold: self.threshold },
            "history": history.map(|h| serde_json::json!({
                "iterations_run": h.iterations_run,
                "best_iteration": h.best_iteration,
                "best_val_loss": h.best_val_loss,
            })),
        });
        nn::save_checkpoint(path, &self.params, seed, meta)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (params, header) = nn::load_checkpoint(path)?;
        let meta: SegModelMeta = serde_json::from_value(header.metadata["segmentation"].clone())?;
        Ok(Self {
            category: meta.category,
            params,
            k: meta.k,
            count: meta.count,
            threshold: meta.threshold,
        })
    }
}

fn foreground_probability<T: Real>(l0: T, l1: T) -> T {
    T::one() / (T::one() + (l0 - l1).exp())
}

/// Segments the instance under `click`.
///
/// The patch is shuffled and cut into chunks of `count` points (the last
/// chunk topped up by sampling), so every cropped point is scored by a
/// network input of the size it was trained on.
pub fn segment_instance<T: Real>(
    model: &SegModel<T>,
    cloud: &PointCloud<T>,
    click: &Click<T>,
    seed: u64,
) -> Result<InstanceMask<T>> {
    if model.category != click.category {
        return Err(Error::Parameter(format!(
            "{} model applied to a {} click",
            model.category, click.category
        )));
    }
    let patch = match crop_volume(cloud, click.position, T::lit(model.k)) {
        Ok(p) => p,
        Err(Error::EmptyPatch { k }) => {
            return Err(Error::EmptyInstance(format!("no points within the {k} m volume of the click")))
        }
        Err(e) => return Err(e),
    };
    let n = patch.points.len();
    let count = model.count.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut source = Vec::with_capacity(n.div_ceil(count) * count);
    for chunk in order.chunks(count) {
        source.extend_from_slice(chunk);
        source.extend((chunk.len()..count).map(|_| rng.random_range(0..n)));
    }
    let view = model.params.view();
    let probs: Vec<T> = source
        .chunks(count)
        .map(|chunk| {
            let pts: Vec<Point3<T>> = chunk.iter().map(|&i| patch.points[i]).collect();
            let logits = nn::forward_seg(&view, nn::points_to_matrix(&pts).view(), Mode::Eval)?;
            Ok(logits.rows().into_iter().map(|r| foreground_probability(r[0], r[1])).collect::<Vec<T>>())
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    let scattered = scatter_max(n, &source, &probs)?;
    let threshold = T::lit(model.threshold);
    let mut max_conf = T::zero();
    let mut picked: Vec<(usize, T)> = Vec::new();
    for (i, p) in scattered.into_iter().enumerate() {
        let p = p.expect("every patch point is scored");
        max_conf = max_conf.max(p);
        if p >= threshold {
            picked.push((patch.source_indices[i], p));
        }
    }
    if picked.is_empty() {
        return Err(Error::BelowThreshold {
            max_confidence: max_conf.as_f64(),
        });
    }
    picked.sort_by_key(|(i, _)| *i);
    Ok(InstanceMask {
        source_indices: picked.iter().map(|(i, _)| *i).collect(),
        foreground_confidence: picked.iter().map(|(_, p)| *p).collect(),
        click: click.clone(),
    })
}
