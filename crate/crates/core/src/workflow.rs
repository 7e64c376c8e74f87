//! Annotator training, batches with hidden golden scenes, and the click database.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{Category, GroundTruthObject};
use crate::scalar::Real;
use crate::seed::derive_seed;
use crate::segmentation::Click;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QAConfig {
    /// Seconds allowed per object.
    pub t_object: f64,
    /// Seconds allowed to take in the scene.
    pub t_scene: f64,
    pub min_recall: f64,
    pub min_precision: f64,
    pub training_scenes: usize,
    pub batch_size: usize,
}

impl Default for QAConfig {
    fn default() -> Self {
        Self {
            t_object: 7.0,
            t_scene: 7.0,
            min_recall: 0.8,
            min_precision: 0.6,
            training_scenes: 5,
            batch_size: 20,
        }
    }
}

impl QAConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_object > 0.0 && self.t_scene > 0.0) {
            return Err(Error::Parameter("time allowances must be positive".into()));
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.min_recall) || !unit.contains(&self.min_precision) {
            return Err(Error::Parameter("recall and precision thresholds must lie in [0, 1]".into()));
        }
        if self.training_scenes == 0 || self.batch_size == 0 {
            return Err(Error::Parameter("training sequence and batch must hold at least one scene".into()));
        }
        Ok(())
    }
}

/// `T_max = N * t_object + t_scene`.
pub fn compute_time_budget(config: &QAConfig, n_objects: usize) -> f64 {
    n_objects as f64 * config.t_object + config.t_scene
}

/// Review colouring of one click.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickVerdict {
    /// Inside at least one ground-truth box of the scored category.
    pub inside: bool,
    /// Indices (into the scene's objects) of the boxes holding the click.
    pub boxes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct SceneResult<T> {
    pub scene_id: String,
    pub category: Category,
    pub clicks: Vec<Click<T>>,
    pub verdicts: Vec<ClickVerdict>,
    /// Ground-truth objects of the category that received no click.
    pub missed: Vec<usize>,
    /// Ground-truth objects of the category, the `N` of the time budget.
    pub n_objects: usize,
    pub elapsed: f64,
    pub time_budget: f64,
    pub recall: f64,
    pub precision: f64,
    pub passed: bool,
}

/// Scores one scene against its ground truth.
///
/// Recall counts boxes of `category` holding at least one click; precision
/// counts clicks inside any such box. With no clicks precision is 1, and
/// with no boxes of the category recall is 1.
pub fn score_scene<T: Real>(
    scene_id: &str,
    category: Category,
    clicks: &[Click<T>],
    gt_objects: &[GroundTruthObject<T>],
    elapsed: f64,
    config: &QAConfig,
) -> SceneResult<T> {
    let targets: Vec<usize> = (0..gt_objects.len()).filter(|i| gt_objects[*i].category == category).collect();
    let mut hit = vec![false; gt_objects.len()];
    let verdicts: Vec<ClickVerdict> = clicks
        .iter()
        .map(|c| {
            let boxes: Vec<usize> = targets
                .iter()
                .copied()
                .filter(|&i| gt_objects[i].bbox.contains(c.position))
                .collect();
            for &i in &boxes {
                hit[i] = true;
            }
            ClickVerdict { inside: !boxes.is_empty(), boxes }
        })
        .collect();
    let found = targets.iter().filter(|i| hit[**i]).count();
    let inside = verdicts.iter().filter(|v| v.inside).count();
    let recall = if targets.is_empty() { 1.0 } else { found as f64 / targets.len() as f64 };
    let precision = if clicks.is_empty() { 1.0 } else { inside as f64 / clicks.len() as f64 };
    let time_budget = compute_time_budget(config, targets.len());
    SceneResult {
        scene_id: scene_id.to_string(),
        category,
        clicks: clicks.to_vec(),
        verdicts,
        missed: targets.iter().copied().filter(|i| !hit[*i]).collect(),
        n_objects: targets.len(),
        elapsed,
        time_budget,
        recall,
        precision,
        passed: recall >= config.min_recall && precision >= config.min_precision && elapsed <= time_budget,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum SessionState {
    InTraining {
        /// Training sequences started so far, this one included.
        sequence: u32,
        scene_index: usize,
        /// Pass flags of the current sequence.
        passes: Vec<bool>,
    },
    Annotating {
        batches_committed: u32,
    },
    FailedRequalify,
}

/// What a batch came to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum BatchOutcome<T> {
    Committed { records: usize, golden: SceneResult<T> },
    Discarded { golden: SceneResult<T> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct AnnotatorSession<T> {
    pub annotator_id: String,
    pub category: Category,
    pub state: SessionState,
    /// Every scored scene: training scenes and golden scenes.
    pub history: Vec<SceneResult<T>>,
    pub seed: u64,
    pub batches_discarded: u32,
    pub sequences_started: u32,
}

impl<T: Real> AnnotatorSession<T> {
    /// A fresh session starts in its first training sequence.
    pub fn new(annotator_id: &str, category: Category, seed: u64) -> Self {
        Self {
            annotator_id: annotator_id.to_string(),
            category,
            state: SessionState::InTraining {
                sequence: 1,
                scene_index: 0,
                passes: Vec::new(),
            },
            history: Vec::new(),
            seed,
            batches_discarded: 0,
            sequences_started: 1,
        }
    }

    pub fn is_annotating(&self) -> bool {
        matches!(self.state, SessionState::Annotating { .. })
    }

    /// Training sequences started so far.
    pub fn training_sequences(&self) -> u32 {
        self.sequences_started
    }

    /// Switches the category for the next batch. Only allowed between batches.
    pub fn set_category(&mut self, category: Category) -> Result<()> {
        match self.state {
            SessionState::InTraining { scene_index: 0, .. } | SessionState::Annotating { .. } | SessionState::FailedRequalify => {
                self.category = category;
                Ok(())
            }
            SessionState::InTraining { .. } => Err(Error::State("cannot change category mid training sequence".into())),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Records one scored training scene. After the last scene of a sequence the
/// session moves to annotating if every scene passed, otherwise a new
/// sequence begins.
pub fn advance_training<T: Real>(
    session: &mut AnnotatorSession<T>,
    result: SceneResult<T>,
    config: &QAConfig,
) -> Result<()> {
    let SessionState::InTraining { sequence, scene_index, passes } = &mut session.state else {
        return Err(Error::State("training result submitted outside training".into()));
    };
    passes.push(result.passed);
    *scene_index += 1;
    let next = if *scene_index >= config.training_scenes {
        if passes.iter().all(|p| *p) {
            Some(SessionState::Annotating { batches_committed: 0 })
        } else {
            session.sequences_started += 1;
            Some(SessionState::InTraining {
                sequence: *sequence + 1,
                scene_index: 0,
                passes: Vec::new(),
            })
        }
    } else {
        None
    };
    session.history.push(result);
    if let Some(state) = next {
        session.state = state;
    }
    Ok(())
}

/// Starts a new training sequence after a failed golden scene.
pub fn retake_training<T: Real>(session: &mut AnnotatorSession<T>) -> Result<()> {
    if session.state != SessionState::FailedRequalify {
        return Err(Error::State("retraining is only required after a failed batch".into()));
    }
    session.sequences_started += 1;
    let sequence = session.sequences_started;
    session.state = SessionState::InTraining {
        sequence,
        scene_index: 0,
        passes: Vec::new(),
    };
    Ok(())
}

/// Scene ids for training sequence `sequence` (1-based), drawn without
/// replacement from `pool`.
pub fn training_sequence(pool: &[String], config: &QAConfig, seed: u64, sequence: u32) -> Result<Vec<String>> {
    if pool.len() < config.training_scenes {
        return Err(Error::PoolExhausted(format!(
            "training needs {} scenes, pool holds {}",
            config.training_scenes,
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x7472, sequence as u64]));
    Ok(index::sample(&mut rng, pool.len(), config.training_scenes)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub batch_id: String,
    pub category: Category,
    /// `batch_size + 1` ids in presentation order.
    pub scene_ids: Vec<String>,
    /// Position of the golden scene; never shown to the annotator.
    pub golden_position: usize,
}

impl Batch {
    pub fn golden_scene(&self) -> &str {
        &self.scene_ids[self.golden_position]
    }
}

/// The next `batch_size` pool scenes in order, plus one golden scene inserted
/// at a uniformly random position.
pub fn assemble_batch(
    scene_pool: &[String],
    golden_pool: &[String],
    category: Category,
    config: &QAConfig,
    seed: u64,
) -> Result<Batch> {
    if scene_pool.len() < config.batch_size {
        return Err(Error::PoolExhausted(format!(
            "batch needs {} scenes, {} remain",
            config.batch_size,
            scene_pool.len()
        )));
    }
    let mut scene_ids: Vec<String> = scene_pool[..config.batch_size].to_vec();
    let candidates: Vec<&String> = golden_pool.iter().filter(|g| !scene_ids.contains(g)).collect();
    if candidates.is_empty() {
        return Err(Error::PoolExhausted("no golden scene available".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let golden = candidates[rng.random_range(0..candidates.len())].clone();
    let golden_position = rng.random_range(0..=config.batch_size);
    scene_ids.insert(golden_position, golden);
    Ok(Batch {
        batch_id: format!("{:016x}", derive_seed(seed, &[0x6261])),
        category,
        scene_ids,
        golden_position,
    })
}

/// One annotated scene of a batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct SceneSubmission<T> {
    pub clicks: Vec<Click<T>>,
    pub elapsed: f64,
}

/// Scores the golden scene only. A pass appends every click of the batch to
/// the database; a fail stores nothing and sends the annotator back to
/// training.
pub fn process_batch<T: Real>(
    session: &mut AnnotatorSession<T>,
    batch: &Batch,
    submissions: &BTreeMap<String, SceneSubmission<T>>,
    golden_gt: &[GroundTruthObject<T>],
    config: &QAConfig,
    db: &ClickDb,
) -> Result<BatchOutcome<T>> {
    let SessionState::Annotating { batches_committed } = session.state else {
        return Err(Error::State("batches can only be processed while annotating".into()));
    };
    if batch.category != session.category {
        return Err(Error::State(format!(
            "{} batch in a {} session",
            batch.category, session.category
        )));
    }
    if let Some(missing) = batch.scene_ids.iter().find(|id| !submissions.contains_key(*id)) {
        return Err(Error::IncompleteBatch(format!("scene {missing} has no submission")));
    }
    let golden_id = batch.golden_scene();
    let g = &submissions[golden_id];
    let golden = score_scene(golden_id, batch.category, &g.clicks, golden_gt, g.elapsed, config);
    session.history.push(golden.clone());
    if !golden.passed {
        session.state = SessionState::FailedRequalify;
        session.batches_discarded += 1;
        return Ok(BatchOutcome::Discarded { golden });
    }
    let records: Vec<ClickRecord> = batch
        .scene_ids
        .iter()
        .flat_map(|id| submissions[id].clicks.iter())
        .map(|c| ClickRecord::from_click(&session.annotator_id, &batch.batch_id, c))
        .collect();
    db.append(&records)?;
    session.state = SessionState::Annotating {
        batches_committed: batches_committed + 1,
    };
    Ok(BatchOutcome::Committed {
        records: records.len(),
        golden,
    })
}

fn is_false(v: &bool) -> bool {
    !*v
}

/// One line of the click database.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub annotator_id: String,
    pub scene_id: String,
    pub category: Category,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub timestamp_ms: u64,
    pub batch_id: String,
    /// Marks a deletion of the identical earlier record.
    #[serde(default, skip_serializing_if = "is_false")]
    pub tombstone: bool,
}

impl ClickRecord {
    pub fn from_click<T: Real>(annotator_id: &str, batch_id: &str, click: &Click<T>) -> Self {
        Self {
            annotator_id: annotator_id.to_string(),
            scene_id: click.scene_id.clone(),
            category: click.category,
            x: click.position.x.as_f64(),
            y: click.position.y.as_f64(),
            z: click.position.z.as_f64(),
            timestamp_ms: click.timestamp_ms,
            batch_id: batch_id.to_string(),
            tombstone: false,
        }
    }

    pub fn tombstone_for(&self) -> Self {
        Self {
            tombstone: true,
            ..self.clone()
        }
    }

    fn same_click(&self, other: &Self) -> bool {
        Self { tombstone: false, ..self.clone() } == Self { tombstone: false, ..other.clone() }
    }
}

/// Append-only JSON-lines click store.
///
/// Each append is a single `write` on a file opened in append mode, so
/// concurrent writers never interleave partial lines.
#[derive(Debug)]
pub struct ClickDb {
    path: PathBuf,
    lock: Mutex<()>,
}

impl ClickDb {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, lock: Mutex::new(()) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, records: &[ClickRecord]) -> Result<()> {
        click_db_append(&self.path, records, Some(&self.lock))
    }

    pub fn load(&self) -> Result<Vec<ClickRecord>> {
        click_db_load(&self.path)
    }
}

pub fn click_db_append(path: &Path, records: &[ClickRecord], lock: Option<&Mutex<()>>) -> Result<()> {
    if records.is_empty() {
        return Ok(());
    }
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let _guard = lock.map(|l| l.lock().unwrap_or_else(|e| e.into_inner()));
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(&buf)?;
    file.flush()?;
    Ok(())
}

/// Every record in file order. A final line without its newline is still
/// being written and is ignored unless it already parses.
pub fn click_db_load(path: &Path) -> Result<Vec<ClickRecord>> {
    let raw = std::fs::read(path)?;
    let complete = raw.last() == Some(&b'\n');
    let lines: Vec<&[u8]> = raw.split(|b| *b == b'\n').collect();
    let mut out = Vec::new();
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.iter().all(|b| b.is_ascii_whitespace()) {
            continue;
        }
        match serde_json::from_slice::<ClickRecord>(line) {
            Ok(r) => out.push(r),
            Err(_) if i == last && !complete => {}
            Err(e) => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Records that survive their tombstones, in file order.
pub fn live_clicks(records: &[ClickRecord]) -> Vec<ClickRecord> {
    let mut live: Vec<Option<ClickRecord>> = Vec::new();
    for r in records {
        if r.tombstone {
            if let Some(slot) = live.iter_mut().find(|s| s.as_ref().is_some_and(|l| l.same_click(r))) {
                *slot = None;
            }
        } else {
            live.push(Some(r.clone()));
        }
    }
    live.into_iter().flatten().collect()
}

/// Lines of a click database file, for callers that stream it.
pub fn click_db_lines(path: &Path) -> Result<usize> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(file.lines().count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Box3D;
    use crate::pointcloud::Point3;

    fn car_at(x: f64) -> GroundTruthObject<f64> {
        GroundTruthObject {
            category: Category::Car,
            bbox: Box3D::new(Point3::new(x, 0.0, 10.0), 1.5, 1.6, 3.9, 0.0).unwrap(),
        }
    }

    fn click(x: f64) -> Click<f64> {
        Click { scene_id: "s".into(), category: Category::Car, position: Point3::new(x, 0.0, 10.0), timestamp_ms: 0 }
    }

    #[test]
    fn time_budget_values() {
        let c = QAConfig::default();
        assert_eq!(compute_time_budget(&c, 0), 7.0);
        assert_eq!(compute_time_budget(&c, 5), 42.0);
        assert_eq!(compute_time_budget(&c, 10), 77.0);
    }

    #[test]
    fn scoring_cases() {
        let c = QAConfig::default();
        let gt: Vec<_> = (0..4).map(|i| car_at(10.0 * i as f64)).collect();
        let r = score_scene("s", Category::Car, &[click(0.0), click(10.0), click(20.0), click(55.0)], &gt, 10.0, &c);
        assert_eq!((r.recall, r.precision, r.passed), (0.75, 0.75, false));
        assert_eq!(r.missed, vec![3]);
        assert!(!r.verdicts[3].inside);

        let gt: Vec<_> = (0..5).map(|i| car_at(10.0 * i as f64)).collect();
        let clicks: Vec<_> = (0..5).map(|i| click(10.0 * i as f64)).collect();
        let r = score_scene("s", Category::Car, &clicks, &gt, 41.0, &c);
        assert_eq!((r.recall, r.precision, r.passed), (1.0, 1.0, true));
        assert!(score_scene("s", Category::Car, &clicks, &gt, 42.0, &c).passed);
        assert!(!score_scene("s", Category::Car, &clicks, &gt, 42.001, &c).passed);

        let gt = [car_at(0.0), car_at(10.0)];
        let r = score_scene("s", Category::Car, &[click(0.0), click(0.5)], &gt, 1.0, &c);
        assert_eq!((r.recall, r.precision), (0.5, 1.0));
    }

    #[test]
    fn empty_cases_and_other_categories() {
        let c = QAConfig::default();
        let r = score_scene::<f64>("s", Category::Car, &[], &[car_at(0.0)], 1.0, &c);
        assert_eq!((r.recall, r.precision, r.passed), (0.0, 1.0, false));
        let ped = GroundTruthObject { category: Category::Pedestrian, ..car_at(0.0) };
        let r = score_scene("s", Category::Car, &[click(0.0)], &[ped], 1.0, &c);
        assert_eq!((r.recall, r.precision), (1.0, 0.0));
    }

    #[test]
    fn overlapping_boxes_count_for_both() {
        let c = QAConfig::default();
        let gt = [car_at(0.0), car_at(1.0)];
        let r = score_scene("s", Category::Car, &[click(0.5)], &gt, 1.0, &c);
        assert_eq!((r.recall, r.precision), (1.0, 1.0));
        assert_eq!(r.verdicts[0].boxes, vec![0, 1]);
    }

    fn result(passed: bool) -> SceneResult<f64> {
        let c = QAConfig::default();
        let clicks = if passed { vec![click(0.0)] } else { vec![] };
        let r = score_scene("s", Category::Car, &clicks, &[car_at(0.0)], 1.0, &c);
        assert_eq!(r.passed, passed);
        r
    }

    #[test]
    fn training_state_machine() {
        let c = QAConfig::default();
        let mut s = AnnotatorSession::<f64>::new("a", Category::Car, 0);
        for _ in 0..5 {
            assert!(!s.is_annotating());
            advance_training(&mut s, result(true), &c).unwrap();
        }
        assert!(s.is_annotating());
        assert!(advance_training(&mut s, result(true), &c).is_err());

        let mut s = AnnotatorSession::<f64>::new("a", Category::Car, 0);
        for p in [true, true, false, true, true] {
            advance_training(&mut s, result(p), &c).unwrap();
        }
        assert_eq!(s.state, SessionState::InTraining { sequence: 2, scene_index: 0, passes: vec![] });
        for _ in 0..20 {
            advance_training(&mut s, result(false), &c).unwrap();
        }
        assert_eq!(s.state, SessionState::InTraining { sequence: 6, scene_index: 0, passes: vec![] });
        for _ in 0..5 {
            advance_training(&mut s, result(true), &c).unwrap();
        }
        assert!(s.is_annotating());
    }

    #[test]
    fn golden_position_is_deterministic_and_in_range() {
        let c = QAConfig::default();
        let pool: Vec<String> = (0..30).map(|i| format!("p{i}")).collect();
        let golden: Vec<String> = (0..3).map(|i| format!("g{i}")).collect();
        let a = assemble_batch(&pool, &golden, Category::Car, &c, 5).unwrap();
        let b = assemble_batch(&pool, &golden, Category::Car, &c, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.scene_ids.len(), 21);
        assert!(a.golden_position <= 20);
        assert!(golden.contains(&a.golden_scene().to_string()));
        assert!(assemble_batch(&pool[..19], &golden, Category::Car, &c, 5).is_err());
        assert!(assemble_batch(&pool, &pool[..2], Category::Car, &c, 5).is_err());
    }

    #[test]
    fn golden_position_is_uniform() {
        let c = QAConfig::default();
        let pool: Vec<String> = (0..20).map(|i| format!("p{i}")).collect();
        let golden = vec!["g".to_string()];
        let mut counts = [0usize; 21];
        let trials = 10_000;
        for seed in 0..trials {
            counts[assemble_batch(&pool, &golden, Category::Car, &c, seed).unwrap().golden_position] += 1;
        }
        let p = 1.0 / 21.0;
        let mean = trials as f64 * p;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for n in counts {
            assert!((n as f64 - mean).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn training_sequences_draw_distinct_scenes() {
        let c = QAConfig::default();
        let pool: Vec<String> = (0..12).map(|i| format!("t{i}")).collect();
        let a = training_sequence(&pool, &c, 1, 1).unwrap();
        let mut dedup = a.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 5);
        assert_eq!(a, training_sequence(&pool, &c, 1, 1).unwrap());
        assert_ne!(a, training_sequence(&pool, &c, 1, 2).unwrap());
        assert!(training_sequence(&pool[..4], &c, 1, 1).is_err());
    }

    #[test]
    fn records_round_trip_with_tombstones() {
        let dir = tempfile::tempdir().unwrap();
        let db = ClickDb::open(dir.path().join("clicks.jsonl")).unwrap();
        let recs: Vec<ClickRecord> = (0..3)
            .map(|i| ClickRecord::from_click("ann", "b1", &Click { timestamp_ms: i, ..click(0.1 * i as f64) }))
            .collect();
        db.append(&recs[..2]).unwrap();
        db.append(&recs[2..]).unwrap();
        assert_eq!(db.load().unwrap(), recs);
        db.append(&[recs[1].tombstone_for()]).unwrap();
        let all = db.load().unwrap();
        assert_eq!(all.len(), 4);
        assert_eq!(live_clicks(&all), vec![recs[0].clone(), recs[2].clone()]);
        assert_eq!(click_db_lines(db.path()).unwrap(), 4);
    }

    #[test]
    fn corrupt_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clicks.jsonl");
        let rec = ClickRecord::from_click("ann", "b1", &click(0.0));
        let line = serde_json::to_string(&rec).unwrap();
        std::fs::write(&path, format!("{line}\n{{broken\n{line}\n")).unwrap();
        assert!(matches!(click_db_load(&path), Err(Error::Parse { line: 2, .. })));
        // An unterminated tail is a write in progress.
        std::fs::write(&path, format!("{line}\n{}", &line[..10])).unwrap();
        assert_eq!(click_db_load(&path).unwrap().len(), 1);
    }

    #[test]
    fn session_snapshot_round_trip() {
        let c = QAConfig::default();
        let mut s = AnnotatorSession::<f64>::new("a", Category::Cyclist, 9);
        advance_training(&mut s, result(true), &c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("session.json");
        s.save(&path).unwrap();
        assert_eq!(AnnotatorSession::<f64>::load(&path).unwrap(), s);
    }
}
