//! Residual centroid regression and template-based amodal box estimation.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_iou_3d, points_in_box, wrap_angle, Box3D};
use crate::nn::{
    self, backward_traced, fit, forward_traced, loss, mean_gradient, sample_fixed_points, ArchDescriptor, Head,
    Mode, ModelParams, Objective, ParamsView, TrainConfig, TrainHistory,
};
use crate::pointcloud::{Category, GroundTruthObject, Point3, Scene};
use crate::scalar::Real;
use crate::seed::derive_seed;
use crate::segmentation::MIN_INSTANCE_POINTS;

pub const NUM_TEMPLATES: usize = 4;
pub const DEFAULT_HEADING_BINS: usize = 12;
/// Decoded dimensions are clamped to at least this many meters.
pub const MIN_DIMENSION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub category: Category,
    pub h: f64,
    pub w: f64,
    pub l: f64,
}

impl Template {
    fn size(&self) -> [f64; 3] {
        [self.h, self.w, self.l]
    }
}

fn mean_size<T: Real>(objects: &[&GroundTruthObject<T>]) -> [f64; 3] {
    let n = objects.len() as f64;
    let mut s = [0.0; 3];
    for o in objects {
        s[0] += o.bbox.h.as_f64();
        s[1] += o.bbox.w.as_f64();
        s[2] += o.bbox.l.as_f64();
    }
    s.map(|v| v / n)
}

/// Two-means on a 1-D sample, centers started at the extremes. Returns the
/// cluster label of every value (0 for the shorter cluster).
fn two_means(values: &[f64]) -> Vec<usize> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut centers = [min, max];
    let mut labels = vec![0usize; values.len()];
    for _ in 0..100 {
        let next: Vec<usize> = values
            .iter()
            .map(|v| usize::from((v - centers[1]).abs() < (v - centers[0]).abs()))
            .collect();
        let mut sums = [0.0; 2];
        let mut counts = [0usize; 2];
        for (v, l) in values.iter().zip(&next) {
            sums[*l] += v;
            counts[*l] += 1;
        }
        for c in 0..2 {
            if counts[c] > 0 {
                centers[c] = sums[c] / counts[c] as f64;
            }
        }
        let done = next == labels;
        labels = next;
        if done {
            break;
        }
    }
    labels
}

/// Templates in the order `[car (short), car (long), pedestrian, cyclist]`.
pub fn compute_templates<T: Real>(training_gt: &[GroundTruthObject<T>]) -> Result<[Template; NUM_TEMPLATES]> {
    let of = |c: Category| training_gt.iter().filter(|o| o.category == c).collect::<Vec<_>>();
    let (cars, peds, cyclists) = (of(Category::Car), of(Category::Pedestrian), of(Category::Cyclist));
    for (c, v) in [(Category::Car, &cars), (Category::Pedestrian, &peds), (Category::Cyclist, &cyclists)] {
        if v.is_empty() {
            return Err(Error::InsufficientData(format!("no {c} objects to build a template from")));
        }
    }
    let lengths: Vec<f64> = cars.iter().map(|o| o.bbox.l.as_f64()).collect();
    let labels = two_means(&lengths);
    let cluster = |k: usize| -> Vec<&GroundTruthObject<T>> {
        cars.iter().zip(&labels).filter(|(_, l)| **l == k).map(|(o, _)| *o).collect()
    };
    let (short, long) = (cluster(0), cluster(1));
    let short = if short.is_empty() { mean_size(&cars) } else { mean_size(&short) };
    let long = if long.is_empty() { short } else { mean_size(&long) };
    let make = |category, s: [f64; 3]| Template { category, h: s[0], w: s[1], l: s[2] };
    Ok([
        make(Category::Car, short),
        make(Category::Car, long),
        make(Category::Pedestrian, mean_size(&peds)),
        make(Category::Cyclist, mean_size(&cyclists)),
    ])
}

pub fn save_templates(path: impl AsRef<Path>, templates: &[Template; NUM_TEMPLATES]) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(templates)?)?;
    Ok(())
}

pub fn load_templates(path: impl AsRef<Path>) -> Result<[Template; NUM_TEMPLATES]> {
    let templates: Vec<Template> = serde_json::from_slice(&std::fs::read(path)?)?;
    templates
        .try_into()
        .map_err(|v: Vec<Template>| Error::MalformedFile(format!("expected 4 templates, found {}", v.len())))
}

/// Template whose co-centered, co-oriented box has the largest IoU with `gt`
/// (lowest index on ties).
pub fn assign_gt_template<T: Real>(gt: &Box3D<T>, templates: &[Template; NUM_TEMPLATES]) -> usize {
    let mut best = 0;
    let mut best_iou = T::neg_infinity();
    for (i, t) in templates.iter().enumerate() {
        let candidate = Box3D { h: T::lit(t.h), w: T::lit(t.w), l: T::lit(t.l), ..*gt };
        let iou = box_iou_3d(gt, &candidate);
        if iou > best_iou {
            best_iou = iou;
            best = i;
        }
    }
    best
}

fn bin_width(nh: usize) -> f64 {
    std::f64::consts::TAU / nh as f64
}

/// Heading bin (centers at `k * 2π / nh`) and the residual from its center,
/// in `(-width/2, width/2]`.
pub fn encode_heading<T: Real>(ry: T, nh: usize) -> (usize, T) {
    let a = wrap_angle(ry).as_f64();
    let w = bin_width(nh);
    let k = ((a - 0.5 * w) / w).ceil();
    (k.rem_euclid(nh as f64) as usize % nh, T::lit(a - k * w))
}

pub fn decode_heading<T: Real>(bin: usize, residual: T, nh: usize) -> T {
    wrap_angle(T::lit(bin as f64 * bin_width(nh)) + residual)
}

/// Yaw of the same box expressed in `(0, π]`; a half turn maps a box onto itself.
pub fn canonical_box<T: Real>(b: &Box3D<T>) -> Box3D<T> {
    let mut ry = b.ry;
    if ry <= T::zero() {
        ry = ry + T::PI();
    }
    Box3D { ry, ..*b }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxLossWeights {
    pub w_centroid_tnet: f64,
    pub w_centroid_box: f64,
    pub w_template_cls: f64,
    pub w_size_res: f64,
    pub w_heading_cls: f64,
    pub w_heading_res: f64,
}

impl Default for BoxLossWeights {
    fn default() -> Self {
        Self {
            w_centroid_tnet: 1.0,
            w_centroid_box: 1.0,
            w_template_cls: 1.0,
            w_size_res: 1.0,
            w_heading_cls: 1.0,
            w_heading_res: 2.0,
        }
    }
}

impl BoxLossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_centroid_tnet,
            self.w_centroid_box,
            self.w_template_cls,
            self.w_size_res,
            self.w_heading_cls,
            self.w_heading_res,
        ];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || all.iter().all(|w| *w == 0.0) {
            return Err(Error::Parameter("loss weights must be non-negative with at least one positive".into()));
        }
        Ok(())
    }
}

/// Offsets of the box network's output vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OutputLayout {
    pub nh: usize,
}

impl OutputLayout {
    pub const CENTROID: usize = 0;
    pub const TEMPLATE_LOGITS: usize = 3;
    pub const SIZE_RESIDUALS: usize = 3 + NUM_TEMPLATES;

    pub fn heading_logits(&self) -> usize {
        Self::SIZE_RESIDUALS + 3 * NUM_TEMPLATES
    }

    pub fn heading_residuals(&self) -> usize {
        self.heading_logits() + self.nh
    }

    pub fn len(&self) -> usize {
        self.heading_residuals() + self.nh
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct BoxPrediction<T> {
    pub bbox: Box3D<T>,
    /// T-Net output: instance mean plus its residual.
    pub stage1_centroid: Point3<T>,
    pub tnet_residual: Point3<T>,
    pub template: usize,
    pub template_scores: Vec<T>,
    pub heading_bin: usize,
    pub heading_bin_scores: Vec<T>,
    /// Raw box-network output (see [`OutputLayout`]).
    pub raw: Vec<T>,
    /// Set when a decoded dimension was not positive and got clamped.
    pub clamped: bool,
}

/// Weighted loss terms; `total` is their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoxLossBreakdown {
    pub centroid_tnet: f64,
    pub centroid_box: f64,
    pub template_cls: f64,
    pub size_res: f64,
    pub heading_cls: f64,
    pub heading_res: f64,
    pub total: f64,
}

struct LossEval<T> {
    breakdown: BoxLossBreakdown,
    d_raw: Vec<T>,
    d_stage1: [T; 3],
}

fn evaluate_loss<T: Real>(
    raw: &[T],
    stage1: Point3<T>,
    gt: &Box3D<T>,
    templates: &[Template; NUM_TEMPLATES],
    nh: usize,
    weights: &BoxLossWeights,
) -> Result<LossEval<T>> {
    let layout = OutputLayout { nh };
    if raw.len() != layout.len() {
        return Err(Error::Dimension(format!("box output of {} values, expected {}", raw.len(), layout.len())));
    }
    let one = T::one();
    let gt_c = gt.centroid().to_array();
    let mut d_raw = vec![T::zero(); raw.len()];
    let mut d_stage1 = [T::zero(); 3];

    let (l_tnet, g) = loss::smooth_l1_grad(&stage1.to_array(), &gt_c, one)?;
    let w = T::lit(weights.w_centroid_tnet);
    for i in 0..3 {
        d_stage1[i] += w * g[i];
    }
    let centroid_tnet = weights.w_centroid_tnet * l_tnet.as_f64();

    let c = OutputLayout::CENTROID;
    let final_c = [stage1.x + raw[c], stage1.y + raw[c + 1], stage1.z + raw[c + 2]];
    let (l_box, g) = loss::smooth_l1_grad(&final_c, &gt_c, one)?;
    let w = T::lit(weights.w_centroid_box);
    for i in 0..3 {
        d_raw[c + i] += w * g[i];
        d_stage1[i] += w * g[i];
    }
    let centroid_box = weights.w_centroid_box * l_box.as_f64();

    let t = assign_gt_template(gt, templates);
    let tl = OutputLayout::TEMPLATE_LOGITS;
    let (l_tcls, g) = loss::softmax_cross_entropy(&raw[tl..tl + NUM_TEMPLATES], t)?;
    let w = T::lit(weights.w_template_cls);
    for i in 0..NUM_TEMPLATES {
        d_raw[tl + i] += w * g[i];
    }
    let template_cls = weights.w_template_cls * l_tcls.as_f64();

    let sr = OutputLayout::SIZE_RESIDUALS + 3 * t;
    let target = templates[t].size();
    let target = [gt.h - T::lit(target[0]), gt.w - T::lit(target[1]), gt.l - T::lit(target[2])];
    let (l_size, g) = loss::smooth_l1_grad(&raw[sr..sr + 3], &target, one)?;
    let w = T::lit(weights.w_size_res);
    for i in 0..3 {
        d_raw[sr + i] += w * g[i];
    }
    let size_res = weights.w_size_res * l_size.as_f64();

    let (bin, residual) = encode_heading(gt.ry, nh);
    let hl = layout.heading_logits();
    let (l_hcls, g) = loss::softmax_cross_entropy(&raw[hl..hl + nh], bin)?;
    let w = T::lit(weights.w_heading_cls);
    for i in 0..nh {
        d_raw[hl + i] += w * g[i];
    }
    let heading_cls = weights.w_heading_cls * l_hcls.as_f64();

    let hr = layout.heading_residuals() + bin;
    let (l_hres, g) = loss::smooth_l1_grad(&raw[hr..hr + 1], &[residual], one)?;
    d_raw[hr] += T::lit(weights.w_heading_res) * g[0];
    let heading_res = weights.w_heading_res * l_hres.as_f64();

    let total = centroid_tnet + centroid_box + template_cls + size_res + heading_cls + heading_res;
    Ok(LossEval {
        breakdown: BoxLossBreakdown {
            centroid_tnet,
            centroid_box,
            template_cls,
            size_res,
            heading_cls,
            heading_res,
            total,
        },
        d_raw,
        d_stage1,
    })
}

/// Discrete-continuous loss of a prediction against a ground-truth box.
pub fn box_loss<T: Real>(
    pred: &BoxPrediction<T>,
    gt: &Box3D<T>,
    templates: &[Template; NUM_TEMPLATES],
    weights: &BoxLossWeights,
) -> Result<BoxLossBreakdown> {
    let nh = pred.heading_bin_scores.len();
    Ok(evaluate_loss(&pred.raw, pred.stage1_centroid, gt, templates, nh, weights)?.breakdown)
}

/// The two networks plus everything needed to decode their outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxfitModel<T> {
    pub tnet: ModelParams<T>,
    pub boxnet: ModelParams<T>,
    pub templates: [Template; NUM_TEMPLATES],
    pub nh: usize,
    /// Points fed to the networks; larger instances are subsampled.
    pub count: usize,
    pub weights: BoxLossWeights,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxfitArch {
    pub tnet: ArchDescriptor,
    pub boxnet: ArchDescriptor,
}

impl BoxfitArch {
    pub fn desk(nh: usize) -> Self {
        Self {
            tnet: ArchDescriptor::desk_vector(3),
            boxnet: ArchDescriptor::desk_vector(OutputLayout { nh }.len()),
        }
    }
}

impl<T: Real> BoxfitModel<T> {
    pub fn init(arch: &BoxfitArch, templates: [Template; NUM_TEMPLATES], nh: usize, count: usize, seed: u64) -> Result<Self> {
        if nh == 0 || count == 0 {
            return Err(Error::Parameter("heading bins and point count must be positive".into()));
        }
        if arch.tnet.head != (Head::Vector { output_dim: 3 }) {
            return Err(Error::Parameter("T-Net needs a 3-vector head".into()));
        }
        let want = OutputLayout { nh }.len();
        if arch.boxnet.head != (Head::Vector { output_dim: want }) {
            return Err(Error::Parameter(format!("box network needs a {want}-vector head")));
        }
        Ok(Self {
            tnet: ModelParams::init(arch.tnet.clone(), derive_seed(seed, &[1]))?,
            boxnet: ModelParams::init(arch.boxnet.clone(), derive_seed(seed, &[2]))?,
            templates,
            nh,
            count,
            weights: BoxLossWeights::default(),
        })
    }

    fn split<'a>(&'a self, values: &'a [T]) -> (ParamsView<'a, T>, ParamsView<'a, T>) {
        let (a, b) = values.split_at(self.tnet.values.len());
        (self.tnet.with_values(a), self.boxnet.with_values(b))
    }

    fn joined(&self) -> Vec<T> {
        [self.tnet.values.as_slice(), self.boxnet.values.as_slice()].concat()
    }

    pub fn save(&self, dir: impl AsRef<Path>, seed: u64) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let meta = serde_json::json!({"nh": self.nh, "count": self.count, "weights": self.weights});
        nn::save_checkpoint(dir.join("tnet.csnn"), &self.tnet, seed, meta.clone())?;
        nn::save_checkpoint(dir.join("boxnet.csnn"), &self.boxnet, seed, meta)?;
        save_templates(dir.join("templates.json"), &self.templates)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let (tnet, _) = nn::load_checkpoint(dir.join("tnet.csnn"))?;
        let (boxnet, header) = nn::load_checkpoint(dir.join("boxnet.csnn"))?;
        let field = |k: &str| header.metadata.get(k).cloned().ok_or_else(|| Error::MalformedFile(format!("box checkpoint lacks `{k}`")));
        Ok(Self {
            tnet,
            boxnet,
            templates: load_templates(dir.join("templates.json"))?,
            nh: serde_json::from_value(field("nh")?)?,
            count: serde_json::from_value(field("count")?)?,
            weights: serde_json::from_value(field("weights")?)?,
        })
    }
}

fn centered<T: Real>(points: &[Point3<T>], c: Point3<T>) -> Array2<T> {
    let shifted: Vec<Point3<T>> = points.iter().map(|p| *p - c).collect();
    nn::points_to_matrix(&shifted)
}

fn check_points<T: Real>(points: &[Point3<T>]) -> Result<Point3<T>> {
    Point3::mean(points).ok_or_else(|| Error::EmptyInstance("box estimation needs at least one point".into()))
}

/// Instance mean plus the T-Net residual.
pub fn tnet_centroid<T: Real>(tnet: &ModelParams<T>, mask_points: &[Point3<T>]) -> Result<Point3<T>> {
    let mean = check_points(mask_points)?;
    let r = nn::forward_vec(&tnet.view(), centered(mask_points, mean).view(), Mode::Eval)?;
    Ok(mean + Point3::new(r[0], r[1], r[2]))
}

fn decode<T: Real>(
    raw: Vec<T>,
    stage1: Point3<T>,
    tnet_residual: Point3<T>,
    templates: &[Template; NUM_TEMPLATES],
    nh: usize,
) -> Result<BoxPrediction<T>> {
    let layout = OutputLayout { nh };
    let argmax = |s: &[T]| {
        s.iter().enumerate().fold(0, |best, (i, v)| if *v > s[best] { i } else { best })
    };
    let tl = OutputLayout::TEMPLATE_LOGITS;
    let template_scores = loss::softmax(&raw[tl..tl + NUM_TEMPLATES]);
    let template = argmax(&raw[tl..tl + NUM_TEMPLATES]);
    let hl = layout.heading_logits();
    let heading_bin_scores = loss::softmax(&raw[hl..hl + nh]);
    let heading_bin = argmax(&raw[hl..hl + nh]);
    let sr = OutputLayout::SIZE_RESIDUALS + 3 * template;
    let base = templates[template].size();
    let min = T::lit(MIN_DIMENSION);
    let mut clamped = false;
    let mut dim = |i: usize| {
        let v = T::lit(base[i]) + raw[sr + i];
        if v > min && v.is_finite() {
            v
        } else {
            clamped = true;
            min
        }
    };
    let (h, w, l) = (dim(0), dim(1), dim(2));
    let ry = decode_heading(heading_bin, raw[layout.heading_residuals() + heading_bin], nh);
    let c = OutputLayout::CENTROID;
    let centroid = stage1 + Point3::new(raw[c], raw[c + 1], raw[c + 2]);
    if !centroid.is_finite() || !ry.is_finite() {
        return Err(Error::NumericOverflow("box decoding".into()));
    }
    let bbox = Box3D::new(centroid, h, w, l, ry)?;
    Ok(BoxPrediction {
        bbox,
        stage1_centroid: stage1,
        tnet_residual,
        template,
        template_scores,
        heading_bin,
        heading_bin_scores,
        raw,
        clamped,
    })
}

/// Runs the box network on points re-centered at the stage-one centroid.
pub fn box_estimate<T: Real>(
    boxnet: &ModelParams<T>,
    mask_points: &[Point3<T>],
    centroid_stage1: Point3<T>,
    templates: &[Template; NUM_TEMPLATES],
    nh: usize,
) -> Result<BoxPrediction<T>> {
    check_points(mask_points)?;
    let raw = nn::forward_vec(&boxnet.view(), centered(mask_points, centroid_stage1).view(), Mode::Eval)?;
    decode(raw.to_vec(), centroid_stage1, Point3::new(T::zero(), T::zero(), T::zero()), templates, nh)
}

/// Points used for one pass: all of them up to `count`, otherwise a seeded
/// subsample without replacement.
fn network_points<T: Real>(points: &[Point3<T>], count: usize, seed: u64) -> Result<Vec<Point3<T>>> {
    if points.len() <= count {
        Ok(points.to_vec())
    } else {
        Ok(sample_fixed_points(points, count, seed)?.points)
    }
}

/// Both stages on one instance.
pub fn predict_box<T: Real>(model: &BoxfitModel<T>, mask_points: &[Point3<T>], seed: u64) -> Result<BoxPrediction<T>> {
    check_points(mask_points)?;
    let pts = network_points(mask_points, model.count, seed)?;
    let stage1 = tnet_centroid(&model.tnet, &pts)?;
    let mean = Point3::mean(&pts).expect("non-empty");
    let mut pred = box_estimate(&model.boxnet, &pts, stage1, &model.templates, model.nh)?;
    pred.tnet_residual = stage1 - mean;
    Ok(pred)
}

/// An instance's points with its ground-truth box.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxExample<T> {
    pub points: Vec<Point3<T>>,
    pub gt: Box3D<T>,
    pub category: Category,
}

/// One example per ground-truth object with at least the minimum point count,
/// using the points inside its box.
pub fn box_examples<T: Real>(scenes: &[Scene<T>], categories: &[Category]) -> Vec<BoxExample<T>> {
    let mut out = Vec::new();
    for scene in scenes {
        for obj in scene.objects.iter().filter(|o| categories.contains(&o.category)) {
            let idx = points_in_box(&scene.cloud, &obj.bbox);
            if idx.len() >= MIN_INSTANCE_POINTS {
                out.push(BoxExample {
                    points: scene.cloud.gather(idx.iter()),
                    gt: obj.bbox,
                    category: obj.category,
                });
            }
        }
    }
    out
}

/// Loss of one example and its gradient over `[tnet | boxnet]` parameters.
fn example_gradient<T: Real>(
    model: &BoxfitModel<T>,
    values: &[T],
    points: &[Point3<T>],
    gt: &Box3D<T>,
    mode_seeds: Option<(u64, u64)>,
) -> Result<(BoxLossBreakdown, Vec<T>)> {
    let (tnet, boxnet) = model.split(values);
    let (tnet_mode, box_mode) = match mode_seeds {
        Some((a, b)) => (Mode::Train { seed: a }, Mode::Train { seed: b }),
        None => (Mode::Eval, Mode::Eval),
    };
    let mean = check_points(points)?;
    let t_trace = forward_traced(&tnet, centered(points, mean).view(), tnet_mode)?;
    let r = t_trace.output.row(0);
    let stage1 = mean + Point3::new(r[0], r[1], r[2]);
    let b_trace = forward_traced(&boxnet, centered(points, stage1).view(), box_mode)?;
    let raw = b_trace.output.row(0).to_vec();
    if raw.iter().any(|v| !v.is_finite()) || !stage1.is_finite() {
        return Err(Error::NumericOverflow("box network output".into()));
    }
    let eval = evaluate_loss(&raw, stage1, gt, &model.templates, model.nh, &model.weights)?;

    let mut grad = vec![T::zero(); values.len()];
    let split = model.tnet.values.len();
    let d_raw = Array2::from_shape_vec((1, raw.len()), eval.d_raw).expect("row");
    let d_input = backward_traced(&boxnet, &b_trace, d_raw.view(), &mut grad[split..])?;
    // Box inputs are points minus the stage-one centroid.
    let sums = d_input.sum_axis(ndarray::Axis(0));
    let d_stage1: Vec<T> = (0..3).map(|i| eval.d_stage1[i] - sums[i]).collect();
    let d_tnet = Array2::from_shape_vec((1, 3), d_stage1).expect("row");
    backward_traced(&tnet, &t_trace, d_tnet.view(), &mut grad[..split])?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericOverflow("box gradient".into()));
    }
    Ok((eval.breakdown, grad))
}

struct BoxObjective<'a, T> {
    model: &'a BoxfitModel<T>,
    train: &'a [BoxExample<T>],
    val: &'a [BoxExample<T>],
    batch_size: usize,
    val_seed: u64,
}

impl<T: Real> Objective<T> for BoxObjective<'_, T> {
    fn batch_gradient(&self, values: &[T], _: usize, rng: &mut ChaCha8Rng) -> Result<(f64, Vec<T>)> {
        let picks: Vec<(usize, u64, u64, u64)> = (0..self.batch_size)
            .map(|_| (rng.random_range(0..self.train.len()), rng.random(), rng.random(), rng.random()))
            .collect();
        mean_gradient(values.len(), picks.len(), |i| {
            let (idx, sample_seed, s1, s2) = picks[i];
            let ex = &self.train[idx];
            let pts = network_points(&ex.points, self.model.count, sample_seed)?;
            let (b, g) = example_gradient(self.model, values, &pts, &ex.gt, Some((s1, s2)))?;
            Ok((T::lit(b.total), g))
        })
    }

    fn validation_loss(&self, values: &[T]) -> Result<Option<f64>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        let losses: Vec<f64> = self
            .val
            .par_iter()
            .enumerate()
            .map(|(i, ex)| {
                let pts = network_points(&ex.points, self.model.count, derive_seed(self.val_seed, &[i as u64]))?;
                Ok(example_gradient(self.model, values, &pts, &ex.gt, None)?.0.total)
            })
            .collect::<Result<_>>()?;
        Ok(Some(losses.iter().sum::<f64>() / losses.len() as f64))
    }
}

/// Joint training of both stages on the summed loss. Ground-truth yaw is
/// folded into `(0, π]` first, which leaves every box unchanged.
pub fn train_boxfit<T: Real>(
    model: BoxfitModel<T>,
    train: &[BoxExample<T>],
    val: &[BoxExample<T>],
    config: &TrainConfig,
) -> Result<(BoxfitModel<T>, TrainHistory)> {
    if train.is_empty() {
        return Err(Error::InsufficientData("box training set is empty".into()));
    }
    model.weights.validate()?;
    let fold = |v: &[BoxExample<T>]| -> Vec<BoxExample<T>> {
        v.iter().map(|e| BoxExample { gt: canonical_box(&e.gt), ..e.clone() }).collect()
    };
    let (train, val) = (fold(train), fold(val));
    let mut values = model.joined();
    let objective = BoxObjective {
        model: &model,
        train: &train,
        val: &val,
        batch_size: config.batch_size,
        val_seed: derive_seed(config.rng_seed, &[3]),
    };
    let history = fit(&mut values, &objective, config)?;
    let split = model.tnet.values.len();
    let mut trained = model.clone();
    trained.tnet.values = values[..split].to_vec();
    trained.boxnet.values = values[split..].to_vec();
    Ok((trained, history))
}
