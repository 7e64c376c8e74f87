use std::collections::BTreeMap;
use std::sync::Arc;

use cloudseed::geometry::Box3D;
use cloudseed::pointcloud::{Category, GroundTruthObject, Point3};
use cloudseed::segmentation::Click;
use cloudseed::workflow::*;
use cloudseed::Error;
use proptest::prelude::*;

fn car_at(x: f64) -> GroundTruthObject<f64> {
    GroundTruthObject {
        category: Category::Car,
        bbox: Box3D::new(Point3::new(x, 0.0, 10.0), 1.5, 1.6, 3.9, 0.0).unwrap(),
    }
}

fn click(scene: &str, x: f64, ts: u64) -> Click<f64> {
    Click {
        scene_id: scene.into(),
        category: Category::Car,
        position: Point3::new(x, 0.0, 10.0),
        timestamp_ms: ts,
    }
}

fn annotating_session() -> AnnotatorSession<f64> {
    let config = QAConfig::default();
    let mut s = AnnotatorSession::new("ann-1", Category::Car, 3);
    for _ in 0..config.training_scenes {
        let r = score_scene("t", Category::Car, &[click("t", 0.0, 0)], &[car_at(0.0)], 3.0, &config);
        advance_training(&mut s, r, &config).unwrap();
    }
    assert!(s.is_annotating());
    s
}

fn batch_fixture() -> (Batch, Vec<GroundTruthObject<f64>>) {
    let pool: Vec<String> = (0..20).map(|i| format!("scene-{i:02}")).collect();
    let golden = vec!["golden-a".to_string()];
    let batch = assemble_batch(&pool, &golden, Category::Car, &QAConfig::default(), 11).unwrap();
    (batch, vec![car_at(0.0), car_at(10.0)])
}

/// Two clicks per scene; the golden scene gets `golden_clicks`.
fn submissions(batch: &Batch, golden_clicks: Vec<Click<f64>>) -> BTreeMap<String, SceneSubmission<f64>> {
    batch
        .scene_ids
        .iter()
        .map(|id| {
            let clicks = if id == batch.golden_scene() {
                golden_clicks.clone()
            } else {
                // Non-golden quality is irrelevant: these are all misses.
                vec![click(id, 500.0, 10), click(id, 600.0, 20)]
            };
            (id.clone(), SceneSubmission { clicks, elapsed: 5.0 })
        })
        .collect()
}

#[test]
fn golden_pass_commits_every_click() {
    let dir = tempfile::tempdir().unwrap();
    let db = ClickDb::open(dir.path().join("clicks.jsonl")).unwrap();
    let (batch, gt) = batch_fixture();
    let mut session = annotating_session();
    let subs = submissions(&batch, vec![click("golden-a", 0.0, 1), click("golden-a", 10.0, 2)]);
    let outcome = process_batch(&mut session, &batch, &subs, &gt, &QAConfig::default(), &db).unwrap();
    let total: usize = subs.values().map(|s| s.clicks.len()).sum();
    assert!(matches!(outcome, BatchOutcome::Committed { records, .. } if records == total));
    let rows = db.load().unwrap();
    assert_eq!(rows.len(), total);
    assert!(rows.iter().all(|r| r.batch_id == batch.batch_id && r.annotator_id == "ann-1"));
    assert_eq!(session.state, SessionState::Annotating { batches_committed: 1 });
}

#[test]
fn golden_fail_discards_and_requires_training() {
    let dir = tempfile::tempdir().unwrap();
    let db = ClickDb::open(dir.path().join("clicks.jsonl")).unwrap();
    let (batch, gt) = batch_fixture();
    let mut session = annotating_session();
    let subs = submissions(&batch, vec![click("golden-a", 0.0, 1)]);
    let outcome = process_batch(&mut session, &batch, &subs, &gt, &QAConfig::default(), &db).unwrap();
    assert!(matches!(outcome, BatchOutcome::Discarded { .. }));
    assert!(db.load().unwrap().is_empty());
    assert!(!std::fs::read_to_string(db.path()).unwrap().contains(&batch.batch_id));
    assert_eq!(session.state, SessionState::FailedRequalify);

    // No batch is accepted until training is redone.
    assert!(matches!(
        process_batch(&mut session, &batch, &subs, &gt, &QAConfig::default(), &db),
        Err(Error::State(_))
    ));
    retake_training(&mut session).unwrap();
    assert_eq!(session.training_sequences(), 2);
    assert!(!session.is_annotating());
}

#[test]
fn missing_submission_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let db = ClickDb::open(dir.path().join("clicks.jsonl")).unwrap();
    let (batch, gt) = batch_fixture();
    let mut session = annotating_session();
    let mut subs = submissions(&batch, vec![click("golden-a", 0.0, 1), click("golden-a", 10.0, 2)]);
    let dropped = batch.scene_ids[batch.golden_position ^ 1].clone();
    subs.remove(&dropped);
    assert!(matches!(
        process_batch(&mut session, &batch, &subs, &gt, &QAConfig::default(), &db),
        Err(Error::IncompleteBatch(_))
    ));
    assert!(db.load().unwrap().is_empty());
    assert!(session.is_annotating());
}

#[test]
fn batch_category_must_match_session() {
    let dir = tempfile::tempdir().unwrap();
    let db = ClickDb::open(dir.path().join("clicks.jsonl")).unwrap();
    let (mut batch, gt) = batch_fixture();
    batch.category = Category::Cyclist;
    let mut session = annotating_session();
    let subs = submissions(&batch, vec![]);
    assert!(process_batch(&mut session, &batch, &subs, &gt, &QAConfig::default(), &db).is_err());
}

#[test]
fn concurrent_appenders_never_interleave() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clicks.jsonl");
    let shared = Arc::new(ClickDb::open(&path).unwrap());
    let writers = 8;
    let appends = 200;
    std::thread::scope(|scope| {
        for w in 0..writers {
            // Half share one handle, half open their own to exercise the
            // append-mode guarantee without the in-process lock.
            let db = if w % 2 == 0 { shared.clone() } else { Arc::new(ClickDb::open(&path).unwrap()) };
            scope.spawn(move || {
                for a in 0..appends {
                    let recs: Vec<ClickRecord> = (0..3)
                        .map(|k| {
                            ClickRecord::from_click(&format!("ann-{w}"), &format!("b{a}"), &click("s", k as f64, a as u64))
                        })
                        .collect();
                    db.append(&recs).unwrap();
                }
            });
        }
    });
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.ends_with('\n'));
    let mut per_writer = vec![0usize; writers];
    for line in text.lines() {
        let rec: ClickRecord = serde_json::from_str(line).expect("every line is a whole record");
        per_writer[rec.annotator_id[4..].parse::<usize>().unwrap()] += 1;
    }
    assert!(per_writer.iter().all(|n| *n == appends * 3));
    assert_eq!(shared.load().unwrap().len(), writers * appends * 3);
}

#[test]
fn requalification_needs_a_clean_sequence() {
    let config = QAConfig::default();
    let mut s = AnnotatorSession::<f64>::new("a", Category::Car, 0);
    let pass = score_scene("t", Category::Car, &[click("t", 0.0, 0)], &[car_at(0.0)], 1.0, &config);
    let fail = score_scene::<f64>("t", Category::Car, &[], &[car_at(0.0)], 1.0, &config);
    for r in [&pass, &pass, &pass, &pass, &fail] {
        advance_training(&mut s, r.clone(), &config).unwrap();
    }
    assert!(!s.is_annotating());
    assert!(matches!(retake_training(&mut s), Err(Error::State(_))));
    for _ in 0..5 {
        advance_training(&mut s, pass.clone(), &config).unwrap();
    }
    assert!(s.is_annotating());
}

#[test]
fn config_reads_from_toml_with_defaults() {
    let cfg: QAConfig = toml::from_str("t_object = 5.0\nmin_recall = 0.9\n").unwrap();
    assert_eq!(cfg.t_object, 5.0);
    assert_eq!(cfg.min_recall, 0.9);
    assert_eq!(cfg.batch_size, 20);
    assert!(cfg.validate().is_ok());
    assert!(QAConfig { min_precision: 1.5, ..cfg.clone() }.validate().is_err());
    assert!(QAConfig { t_scene: 0.0, ..cfg }.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scoring_ignores_click_order(xs in prop::collection::vec(-5.0f64..45.0, 0..12), seed in any::<u64>()) {
        let config = QAConfig::default();
        let gt: Vec<_> = (0..4).map(|i| car_at(10.0 * i as f64)).collect();
        let clicks: Vec<_> = xs.iter().map(|x| click("s", *x, 0)).collect();
        let mut shuffled = clicks.clone();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        let a = score_scene("s", Category::Car, &clicks, &gt, 10.0, &config);
        let b = score_scene("s", Category::Car, &shuffled, &gt, 10.0, &config);
        prop_assert_eq!(a.recall, b.recall);
        prop_assert_eq!(a.precision, b.precision);
        prop_assert_eq!(a.passed, b.passed);
        prop_assert!((0.0..=1.0).contains(&a.recall) && (0.0..=1.0).contains(&a.precision));
    }

    #[test]
    fn budget_is_affine(n in 0usize..1000, t_object in 0.5f64..20.0, t_scene in 0.5f64..20.0) {
        let config = QAConfig { t_object, t_scene, ..QAConfig::default() };
        prop_assert_eq!(compute_time_budget(&config, 0), t_scene);
        let step = compute_time_budget(&config, n + 1) - compute_time_budget(&config, n);
        prop_assert!((step - t_object).abs() <= 1e-9 * (1.0 + n as f64 * t_object));
    }

    #[test]
    fn annotating_only_after_clean_run(outcomes in prop::collection::vec(any::<bool>(), 1..60)) {
        let config = QAConfig::default();
        let pass = score_scene("t", Category::Car, &[click("t", 0.0, 0)], &[car_at(0.0)], 1.0, &config);
        let fail = score_scene::<f64>("t", Category::Car, &[], &[car_at(0.0)], 1.0, &config);
        let mut s = AnnotatorSession::<f64>::new("a", Category::Car, 0);
        let mut sequence: Vec<bool> = Vec::new();
        for ok in outcomes {
            if s.is_annotating() {
                break;
            }
            advance_training(&mut s, if ok { pass.clone() } else { fail.clone() }, &config).unwrap();
            sequence.push(ok);
            if sequence.len() == config.training_scenes {
                prop_assert_eq!(s.is_annotating(), sequence.iter().all(|p| *p));
                sequence.clear();
            } else {
                prop_assert!(!s.is_annotating());
            }
        }
    }
}
