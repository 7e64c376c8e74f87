//! Detection metrics and annotation timing statistics.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_iou_3d, centroid_distance, instance_iou, points_in_box, Box3D};
use crate::pointcloud::{Category, Scene};
use crate::scalar::Real;
use crate::segmentation::InstanceMask;
use crate::workflow::SceneResult;

/// One annotated instance, treated as a detector output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct DetectionResult<T> {
    pub scene_id: String,
    pub category: Category,
    #[serde(rename = "box")]
    pub bbox: Box3D<T>,
    pub score: f64,
    pub mask: InstanceMask<T>,
}

impl<T: Real> DetectionResult<T> {
    /// Scores the detection by the mask's mean foreground confidence.
    pub fn from_mask(scene_id: &str, bbox: Box3D<T>, mask: InstanceMask<T>) -> Self {
        let n = mask.foreground_confidence.len().max(1) as f64;
        let score = mask.foreground_confidence.iter().map(|c| c.as_f64()).sum::<f64>() / n;
        Self {
            scene_id: scene_id.to_string(),
            category: mask.click.category,
            bbox,
            score,
            mask,
        }
    }
}

pub fn write_results<T: Real>(path: impl AsRef<Path>, results: &[DetectionResult<T>]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in results {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_results<T: Real>(path: impl AsRef<Path>) -> Result<Vec<DetectionResult<T>>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Box IoU needed for a true positive, per category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IouThresholds {
    pub car: f64,
    pub pedestrian: f64,
    pub cyclist: f64,
}

impl Default for IouThresholds {
    fn default() -> Self {
        Self {
            car: 0.5,
            pedestrian: 0.25,
            cyclist: 0.25,
        }
    }
}

impl IouThresholds {
    pub fn get(&self, category: Category) -> f64 {
        match category {
            Category::Car => self.car,
            Category::Pedestrian => self.pedestrian,
            Category::Cyclist => self.cyclist,
        }
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("IoU threshold {t} outside (0, 1]")))
    }
}

fn box_key<T: Real>(b: &Box3D<T>) -> [f64; 7] {
    [b.cx, b.cy, b.cz, b.h, b.w, b.l, b.ry].map(|v| v.as_f64())
}

/// Descending score, then a content order so ties never depend on input order.
fn detection_order<T: Real>(a: &DetectionResult<T>, b: &DetectionResult<T>) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.scene_id.cmp(&b.scene_id))
        .then_with(|| {
            box_key(&a.bbox)
                .iter()
                .zip(box_key(&b.bbox))
                .map(|(x, y)| x.total_cmp(&y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// True-positive flags of the detections in ranked order.
fn greedy_match<T: Real>(
    ranked: &[&DetectionResult<T>],
    gts: &BTreeMap<String, Vec<Box3D<T>>>,
    threshold: f64,
) -> Vec<bool> {
    let mut taken: BTreeMap<&str, Vec<bool>> = gts.iter().map(|(k, v)| (k.as_str(), vec![false; v.len()])).collect();
    ranked
        .iter()
        .map(|d| {
            let (Some(boxes), Some(used)) = (gts.get(&d.scene_id), taken.get_mut(d.scene_id.as_str())) else {
                return false;
            };
            let mut best: Option<(usize, f64)> = None;
            for (i, g) in boxes.iter().enumerate() {
                if used[i] {
                    continue;
                }
                let iou = box_iou_3d(&d.bbox, g).as_f64();
                if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((i, iou));
                }
            }
            match best {
                Some((i, _)) => {
                    used[i] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// 11-point interpolated AP over ranked true-positive flags.
fn interpolated_ap(tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    // (true positives, precision) at every cutoff.
    let mut curve = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (k, t) in tp.iter().enumerate() {
        hits += *t as usize;
        curve.push((hits, hits as f64 / (k + 1) as f64));
    }
    let mut total = 0.0;
    for j in 0..=10usize {
        // recall >= j / 10, compared on integers.
        total += curve
            .iter()
            .filter(|(h, _)| 10 * h >= j * n_gt)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
    }
    total / 11.0
}

/// 11-point interpolated average precision with greedy per-scene matching.
///
/// `gts` maps scene ids to the ground-truth boxes of the category being
/// scored. Detections are ranked by descending score; each takes the
/// highest-IoU unmatched box at or above `iou_threshold`. With no ground
/// truth the AP is 0.
pub fn average_precision<T: Real>(
    dets: &[DetectionResult<T>],
    gts: &BTreeMap<String, Vec<Box3D<T>>>,
    iou_threshold: f64,
) -> Result<f64> {
    check_threshold(iou_threshold)?;
    let mut ranked: Vec<&DetectionResult<T>> = dets.iter().collect();
    ranked.sort_by(|a, b| detection_order(a, b));
    let tp = greedy_match(&ranked, gts, iou_threshold);
    Ok(interpolated_ap(&tp, gts.values().map(Vec::len).sum()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub category: Category,
    /// Ground-truth instances of the category.
    pub n_instances: usize,
    /// Instances paired with a detection through its click.
    pub n_matched: usize,
    pub n_detections: usize,
    /// Means and spread over matched pairs; `None` when nothing matched.
    pub mean_iiou: Option<f64>,
    pub mean_centroid_error_m: Option<f64>,
    pub centroid_error_std_m: Option<f64>,
    pub mean_box_iou: Option<f64>,
    pub ap_3d: f64,
    pub iou_threshold: f64,
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

/// Per-category metrics of annotation results against ground-truth scenes.
///
/// A detection is paired with the ground-truth instance of its category
/// whose box holds its click (the best-overlapping one if several do); each
/// instance pairs at most once, higher scores first. Paired instances feed
/// the iIoU, centroid and box IoU columns. AP matches by box IoU alone.
pub fn evaluate_pipeline<T: Real>(
    results: &[DetectionResult<T>],
    scenes: &[Scene<T>],
    thresholds: &IouThresholds,
) -> Result<BTreeMap<Category, ClassMetrics>> {
    let by_id: BTreeMap<&str, &Scene<T>> = scenes.iter().map(|s| (s.id.as_str(), s)).collect();
    if by_id.len() != scenes.len() {
        return Err(Error::Parameter("duplicate scene ids".into()));
    }
    if let Some(r) = results.iter().find(|r| !by_id.contains_key(r.scene_id.as_str())) {
        return Err(Error::Parameter(format!("result for unknown scene {}", r.scene_id)));
    }
    let mut categories: BTreeSet<Category> = results.iter().map(|r| r.category).collect();
    categories.extend(scenes.iter().flat_map(|s| s.objects.iter().map(|o| o.category)));

    let mut out = BTreeMap::new();
    for category in categories {
        let threshold = thresholds.get(category);
        check_threshold(threshold)?;
        let mut dets: Vec<&DetectionResult<T>> = results.iter().filter(|r| r.category == category).collect();
        dets.sort_by(|a, b| detection_order(a, b));
        let gts: BTreeMap<String, Vec<Box3D<T>>> = by_id
            .iter()
            .map(|(id, s)| {
                let boxes = s.objects.iter().filter(|o| o.category == category).map(|o| o.bbox).collect();
                (id.to_string(), boxes)
            })
            .collect();
        let n_instances = gts.values().map(Vec::len).sum();

        let mut paired: BTreeMap<&str, Vec<bool>> = gts.iter().map(|(k, v)| (k.as_str(), vec![false; v.len()])).collect();
        let (mut iiou, mut centroid, mut biou) = (Vec::new(), Vec::new(), Vec::new());
        for d in &dets {
            let boxes = &gts[&d.scene_id];
            let used = paired.get_mut(d.scene_id.as_str()).expect("scene present");
            let pick = (0..boxes.len())
                .filter(|&i| !used[i] && boxes[i].contains(d.mask.click.position))
                .map(|i| (i, box_iou_3d(&d.bbox, &boxes[i]).as_f64()))
                .fold(None, |best: Option<(usize, f64)>, (i, iou)| match best {
                    Some((_, b)) if b >= iou => best,
                    _ => Some((i, iou)),
                });
            let Some((i, iou)) = pick else { continue };
            used[i] = true;
            let gt_points = points_in_box(&by_id[d.scene_id.as_str()].cloud, &boxes[i]);
            iiou.push(instance_iou(&d.mask.source_indices, &gt_points));
            centroid.push(centroid_distance(&d.bbox, &boxes[i]).as_f64());
            biou.push(iou);
        }
        let (mean_centroid, std_centroid) = mean_std(&centroid);
        let tp = greedy_match(&dets, &gts, threshold);
        out.insert(
            category,
            ClassMetrics {
                category,
                n_instances,
                n_matched: iiou.len(),
                n_detections: dets.len(),
                mean_iiou: mean_std(&iiou).0,
                mean_centroid_error_m: mean_centroid,
                centroid_error_std_m: std_centroid,
                mean_box_iou: mean_std(&biou).0,
                ap_3d: interpolated_ap(&tp, n_instances),
                iou_threshold: threshold,
            },
        );
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn metrics_csv(metrics: &BTreeMap<Category, ClassMetrics>) -> String {
    let mut s = String::from(
        "category,n_instances,n_matched,n_detections,mean_iiou,mean_centroid_error_m,centroid_error_std_m,mean_box_iou,ap_3d,iou_threshold\n",
    );
    for m in metrics.values() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            m.category,
            m.n_instances,
            m.n_matched,
            m.n_detections,
            opt(m.mean_iiou),
            opt(m.mean_centroid_error_m),
            opt(m.centroid_error_std_m),
            opt(m.mean_box_iou),
            m.ap_3d,
            m.iou_threshold
        );
    }
    s
}

/// How long one scene took and how many objects it held.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneTiming {
    pub scene_id: String,
    pub n_objects: usize,
    pub elapsed_s: f64,
}

impl<T> From<&SceneResult<T>> for SceneTiming {
    fn from(r: &SceneResult<T>) -> Self {
        Self {
            scene_id: r.scene_id.clone(),
            n_objects: r.n_objects,
            elapsed_s: r.elapsed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingBucket {
    pub n_objects: usize,
    pub scenes: usize,
    pub mean_seconds_per_object: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub buckets: Vec<TimingBucket>,
    /// Total seconds over total objects.
    pub overall_seconds_per_object: f64,
    pub total_seconds: f64,
    pub total_objects: usize,
    /// Scenes without objects, left out of every figure.
    pub excluded: Vec<String>,
}

/// Seconds per object, bucketed by the number of objects in the scene.
pub fn timing_report(scenes: &[SceneTiming]) -> TimingReport {
    let mut buckets: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut excluded = Vec::new();
    let (mut total_seconds, mut total_objects) = (0.0, 0usize);
    for s in scenes {
        if s.n_objects == 0 {
            excluded.push(s.scene_id.clone());
            continue;
        }
        buckets.entry(s.n_objects).or_default().push(s.elapsed_s / s.n_objects as f64);
        total_seconds += s.elapsed_s;
        total_objects += s.n_objects;
    }
    TimingReport {
        buckets: buckets
            .into_iter()
            .map(|(n, v)| TimingBucket {
                n_objects: n,
                scenes: v.len(),
                mean_seconds_per_object: v.iter().sum::<f64>() / v.len() as f64,
            })
            .collect(),
        overall_seconds_per_object: if total_objects == 0 { 0.0 } else { total_seconds / total_objects as f64 },
        total_seconds,
        total_objects,
        excluded,
    }
}

impl TimingReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n_objects,scenes,mean_seconds_per_object\n");
        for b in &self.buckets {
            let _ = writeln!(s, "{},{},{}", b.n_objects, b.scenes, b.mean_seconds_per_object);
        }
        s
    }

    /// Line plot of seconds per object against objects per scene.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (640.0, 400.0, 50.0);
        let max_n = self.buckets.iter().map(|b| b.n_objects).max().unwrap_or(1).max(1) as f64;
        let max_t = self
            .buckets
            .iter()
            .map(|b| b.mean_seconds_per_object)
            .fold(self.overall_seconds_per_object, f64::max)
            .max(1e-9)
            * 1.1;
        let px = |n: f64| pad + (w - 2.0 * pad) * n / max_n;
        let py = |t: f64| h - pad - (h - 2.0 * pad) * t / max_t;
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<path d="M{pad} {pad} V{} H{}" fill="none" stroke="black"/>"#,
            h - pad,
            w - pad
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">objects per scene</text>"#,
            w / 2.0,
            h - 12.0
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" font-size="14" transform="rotate(-90 14 {})" text-anchor="middle">seconds per object</text>"#,
            h / 2.0,
            h / 2.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="middle">{:.0}</text>"#,
            px(max_n),
            h - pad + 14.0,
            max_n
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{:.2}</text>"#,
            pad - 4.0,
            py(max_t) + 4.0,
            max_t
        );
        let mean_y = py(self.overall_seconds_per_object);
        let _ = writeln!(
            s,
            r##"<line x1="{pad}" y1="{mean_y:.2}" x2="{}" y2="{mean_y:.2}" stroke="#999" stroke-dasharray="4 4"/>"##,
            w - pad
        );
        if !self.buckets.is_empty() {
            let path: Vec<String> = self
                .buckets
                .iter()
                .map(|b| format!("{:.2},{:.2}", px(b.n_objects as f64), py(b.mean_seconds_per_object)))
                .collect();
            let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#1f77b4"/>"##, path.join(" "));
            for b in &self.buckets {
                let _ = writeln!(
                    s,
                    r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4"/>"##,
                    px(b.n_objects as f64),
                    py(b.mean_seconds_per_object)
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::Point3;
    use crate::segmentation::Click;

    fn det(scene: &str, x: f64, score: f64) -> DetectionResult<f64> {
        let bbox = Box3D::new(Point3::new(x, 0.0, 10.0), 1.5, 1.6, 3.9, 0.0).unwrap();
        DetectionResult {
            scene_id: scene.into(),
            category: Category::Car,
            bbox,
            score,
            mask: InstanceMask {
                source_indices: Default::default(),
                foreground_confidence: vec![],
                click: Click { scene_id: scene.into(), category: Category::Car, position: bbox.centroid(), timestamp_ms: 0 },
            },
        }
    }

    fn gt(xs: &[f64]) -> Vec<Box3D<f64>> {
        xs.iter()
            .map(|x| Box3D::new(Point3::new(*x, 0.0, 10.0), 1.5, 1.6, 3.9, 0.0).unwrap())
            .collect()
    }

    #[test]
    fn perfect_and_empty() {
        let gts = BTreeMap::from([("a".to_string(), gt(&[0.0, 10.0])), ("b".to_string(), gt(&[5.0]))]);
        let dets = vec![det("a", 0.0, 0.9), det("a", 10.0, 0.8), det("b", 5.0, 0.7)];
        assert_eq!(average_precision(&dets, &gts, 0.5).unwrap(), 1.0);
        assert_eq!(average_precision::<f64>(&[], &gts, 0.5).unwrap(), 0.0);
        assert!(average_precision(&dets, &gts, 0.0).is_err());
        assert!(average_precision(&dets, &gts, 1.5).is_err());
    }

    #[test]
    fn hand_case() {
        // 3 gt; ranked TP, FP, TP.
        // Cutoffs: (R 1/3, P 1), (1/3, 1/2), (2/3, 2/3).
        // Recall points 0..0.3 take 1, 0.4..0.6 take 2/3, 0.7..1 take 0.
        let gts = BTreeMap::from([("a".to_string(), gt(&[0.0, 10.0, 20.0]))]);
        let dets = vec![det("a", 0.0, 0.9), det("a", 50.0, 0.8), det("a", 10.0, 0.7)];
        let expected = (4.0 + 3.0 * 2.0 / 3.0) / 11.0;
        assert!((average_precision(&dets, &gts, 0.5).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn duplicate_detection_is_a_false_positive() {
        let gts = BTreeMap::from([("a".to_string(), gt(&[0.0]))]);
        let dets = vec![det("a", 0.0, 0.9), det("a", 0.0, 0.95)];
        assert_eq!(average_precision(&dets, &gts, 0.5).unwrap(), 1.0);
        let dets = vec![det("a", 3.0, 0.99), det("a", 0.0, 0.9)];
        // The offset box misses, then the exact one hits: precision 1/2 at full recall.
        assert!((average_precision(&dets, &gts, 0.5).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn timing_numbers() {
        let one = timing_report(&[SceneTiming { scene_id: "s".into(), n_objects: 10, elapsed_s: 37.0 }]);
        assert!((one.overall_seconds_per_object - 3.7).abs() < 1e-12);
        assert_eq!(one.buckets[0].mean_seconds_per_object, 3.7);

        let totals = timing_report(&[SceneTiming { scene_id: "all".into(), n_objects: 15_996, elapsed_s: 58_832.0 }]);
        assert!((totals.overall_seconds_per_object - 3.678).abs() < 5e-4);

        let twin = timing_report(&[
            SceneTiming { scene_id: "a".into(), n_objects: 4, elapsed_s: 15.0 },
            SceneTiming { scene_id: "b".into(), n_objects: 4, elapsed_s: 15.0 },
            SceneTiming { scene_id: "e".into(), n_objects: 0, elapsed_s: 9.0 },
        ]);
        assert_eq!(twin.buckets, vec![TimingBucket { n_objects: 4, scenes: 2, mean_seconds_per_object: 3.75 }]);
        assert_eq!(twin.excluded, vec!["e".to_string()]);
        assert!(twin.to_csv().starts_with("n_objects,"));
        assert!(twin.to_svg().contains("<polyline"));
    }
}
