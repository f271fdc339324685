use std::fs;
use std::io::BufReader;

use cpgrasp::contact::ContactPair;
use cpgrasp::dataset::{emit_dataset, read_labeled_jsonl, scene_dir, DatasetParams, Label, LabeledPair, Manifest};
use cpgrasp::geom::Vec3;
use cpgrasp::harness::PipelineConfig;
use cpgrasp::scene::{PrimitiveShape, SceneSpec};

const R: f64 = 0.03;

fn positive(p: Vec3, q: Vec3, np: Vec3, nq: Vec3) -> LabeledPair {
    LabeledPair {
        pair: ContactPair::from_contacts(p, q, np, nq).unwrap(),
        label: Label::Positive,
        pattern: None,
        scene_id: 0,
        shape_id: 0,
    }
}

fn fixture() -> (SceneSpec, Vec<LabeledPair>) {
    let c = Vec3::new(0.0, 0.0, R);
    let scene = SceneSpec::on_floor(vec![PrimitiveShape::sphere(R, c).unwrap()]).unwrap();
    let x = Vec3::x();
    let z = Vec3::z();
    let labels = vec![
        // bottom touches the floor: never visible
        positive(c - z * R, c + z * R, -z, z),
        // equator: visible from the tabletop views
        positive(c - x * R, c + x * R, -x, x),
    ];
    (scene, labels)
}

#[test]
fn floor_contact_is_never_visible() {
    let (scene, labels) = fixture();
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::default();
    let records = emit_dataset(&scene, &labels, &[5, 10, 14, 19], dir.path(), &cfg, &DatasetParams::default()).unwrap();
    assert_eq!(records.len(), 4);
    for r in &records {
        assert!(r.pairs.iter().all(|l| l.pair.p.z > 1e-3), "{} frames kept the floor contact", r.n_fused_frames);
        let reread = read_labeled_jsonl(BufReader::new(fs::File::open(&r.pairs_path).unwrap())).unwrap();
        assert_eq!(reread.len(), r.pairs.len());
        assert!(r.volume_path.exists());
    }
    assert_eq!(records.last().unwrap().pairs.len(), 1);

    let dir = scene_dir(dir.path(), &scene);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    let frames: Vec<usize> = manifest.records.iter().map(|r| r.n_fused_frames).collect();
    assert_eq!(frames, [5, 10, 14, 19]);
    assert_eq!(manifest.labels, 2);
    assert!(dir.join("scene.json").exists());
}

#[test]
fn zero_views_keep_nothing() {
    let (scene, labels) = fixture();
    let dir = tempfile::tempdir().unwrap();
    let records = emit_dataset(&scene, &labels, &[0], dir.path(), &PipelineConfig::default(), &DatasetParams::default()).unwrap();
    assert_eq!(records.len(), 1);
    assert!(records[0].pairs.is_empty());
}

#[test]
fn unsorted_view_counts_are_rejected() {
    let (scene, labels) = fixture();
    let dir = tempfile::tempdir().unwrap();
    let err = emit_dataset(&scene, &labels, &[10, 5], dir.path(), &PipelineConfig::default(), &DatasetParams::default());
    assert!(err.is_err());
}
