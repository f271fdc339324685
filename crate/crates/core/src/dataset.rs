//! Labelled contact-pair datasets: analytic grasp analysis per shape, transfer into
//! cluttered scenes with three kinds of negatives, and volumes fused from growing numbers of
//! views with the contacts each volume can actually see.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{AntipodalParams, ContactError, ContactPair};
use crate::geom::{compose_grasp_pose, RigidTransform, Vec3};
use crate::harness::{fuse_views, HarnessError, PipelineConfig};
use crate::planner::{sample_approach_vectors, GripperModel};
use crate::scene::{PrimitiveShape, SceneSpec};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no per-shape labels for scene shape {0}")]
    MissingShapeLabels(usize),
    #[error("view counts must be ascending")]
    UnsortedViewCounts,
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Contact(#[from] ContactError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativePattern {
    /// Not antipodal, or no approach clears the shape itself.
    Ungraspable,
    /// Graspable in isolation, but every approach hits something in the scene.
    AllColliding,
    /// Contacts of two different positives recombined.
    Rematch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    #[serde(flatten)]
    pub pair: ContactPair,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<NegativePattern>,
    pub scene_id: u64,
    pub shape_id: usize,
}

impl LabeledPair {
    fn new(pair: ContactPair, pattern: Option<NegativePattern>) -> Self {
        Self {
            pair,
            label: if pattern.is_some() { Label::Negative } else { Label::Positive },
            pattern,
            scene_id: 0,
            shape_id: 0,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.label == Label::Positive
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetParams {
    pub antipodal: AntipodalParams,
    pub n_approach: usize,
    pub n_surface_samples: usize,
    /// Finger clearance per side when checking approaches (m).
    pub clearance: f64,
    /// Contacts whose fused field value exceeds this many voxels are invisible.
    pub visibility_voxels: f64,
    /// Most negatives kept per positive.
    pub max_negative_ratio: usize,
    pub shuffle_seed: u64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            antipodal: AntipodalParams::default(),
            n_approach: 8,
            n_surface_samples: 400,
            clearance: 0.3 / 64.0,
            visibility_voxels: 0.5,
            max_negative_ratio: 3,
            shuffle_seed: 0,
        }
    }
}

/// True when the gripper, fingers at the pair width plus clearance, clears `sdf` for at
/// least one of the sampled approach directions.
pub fn any_approach_free(
    sdf: impl Fn(&Vec3) -> f64,
    gripper: &GripperModel,
    pair: &ContactPair,
    n_approach: usize,
    clearance: f64,
) -> bool {
    let Ok(approaches) = sample_approach_vectors(&pair.g, n_approach) else {
        return false;
    };
    let opening = gripper.check_opening(pair.width, clearance);
    let local: Vec<Vec3> = gripper.vertices_at(opening).collect();
    approaches.iter().any(|a| {
        compose_grasp_pose(&pair.p, &pair.p_prime, a).is_ok_and(|pose| {
            local
                .iter()
                .all(|v| sdf(&pose.transform.transform_point(v)) > 0.0)
        })
    })
}

/// Samples contacts on the analytic surface of `shape` (in its own frame), matches each
/// with the exit point of the inward normal ray, and labels a pair positive when it is
/// antipodal and some approach clears the shape.
pub fn grasp_analysis_shape(
    shape: &PrimitiveShape,
    gripper: &GripperModel,
    params: &DatasetParams,
    seed: u64,
) -> Vec<LabeledPair> {
    let local = PrimitiveShape {
        pose: RigidTransform::identity(),
        ..shape.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let threshold = params.antipodal.threshold();
    let mut out = Vec::new();
    for p in local.sample_surface(params.n_surface_samples, &mut rng) {
        let n = local.normal(&p);
        let dir = -n;
        let Some((_, t_exit)) = local.ray_interval(&p, &dir) else { continue };
        let width = t_exit;
        if width < params.antipodal.min_width || width > params.antipodal.max_width {
            continue;
        }
        let pp = p + dir * t_exit;
        let Some(pair) = ContactPair::from_contacts(p, pp, n, local.normal(&pp)) else { continue };
        let graspable = pair.score >= threshold
            && any_approach_free(|q| local.sdf(q), gripper, &pair, params.n_approach, params.clearance);
        out.push(LabeledPair::new(pair, (!graspable).then_some(NegativePattern::Ungraspable)));
    }
    out
}

fn transform_pair(pair: &ContactPair, t: &RigidTransform) -> ContactPair {
    ContactPair {
        p: t.transform_point(&pair.p),
        p_prime: t.transform_point(&pair.p_prime),
        g: t.transform_vector(&pair.g),
        n_p: t.transform_vector(&pair.n_p),
        n_pprime: t.transform_vector(&pair.n_pprime),
        ..pair.clone()
    }
}

/// Moves per-shape labels (keyed by scene shape index) into the scene and derives the
/// scene-level labels and all three negative patterns, capped at the configured ratio.
pub fn build_scene_labels(
    scene: &SceneSpec,
    per_shape: &BTreeMap<usize, Vec<LabeledPair>>,
    gripper: &GripperModel,
    params: &DatasetParams,
) -> Result<Vec<LabeledPair>, DatasetError> {
    let reach = {
        let (lo, hi) = gripper.bounds();
        lo.norm().max(hi.norm())
    };
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (i, shape) in scene.shapes.iter().enumerate() {
        let labels = per_shape.get(&i).ok_or(DatasetError::MissingShapeLabels(i))?;
        for l in labels {
            let pair = transform_pair(&l.pair, &shape.pose);
            let pattern = if !l.is_positive() {
                Some(NegativePattern::Ungraspable)
            } else {
                // only shapes the gripper can reach from this pair matter
                let c = pair.midpoint();
                let near: Vec<&PrimitiveShape> = scene
                    .shapes
                    .iter()
                    .filter(|s| (s.center() - c).norm() < s.bounding_radius() + reach)
                    .collect();
                let sdf = |q: &Vec3| {
                    let floor = scene.floor_z.map_or(f64::INFINITY, |z| q.z - z);
                    near.iter().fold(floor, |acc, s| acc.min(s.sdf(q)))
                };
                (!any_approach_free(sdf, gripper, &pair, params.n_approach, params.clearance))
                    .then_some(NegativePattern::AllColliding)
            };
            let mut lp = LabeledPair::new(pair, pattern);
            lp.scene_id = scene.seed;
            lp.shape_id = i;
            if pattern.is_none() {
                positives.push(lp);
            } else {
                negatives.push(lp);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.shuffle_seed ^ scene.seed.rotate_left(17));
    let key = |a: &Vec3, b: &Vec3| [a.x, a.y, a.z, b.x, b.y, b.z].map(f64::to_bits);
    let positive_keys: HashSet<[u64; 6]> = positives.iter().map(|l| key(&l.pair.p, &l.pair.p_prime)).collect();
    let mut perm: Vec<usize> = (0..positives.len()).collect();
    perm.shuffle(&mut rng);
    for (i, &j) in perm.iter().enumerate() {
        if i == j {
            continue;
        }
        let (a, b) = (&positives[i], &positives[j]);
        if positive_keys.contains(&key(&a.pair.p, &b.pair.p_prime)) {
            continue;
        }
        let Some(pair) = ContactPair::from_contacts(a.pair.p, b.pair.p_prime, a.pair.n_p, b.pair.n_pprime) else {
            continue;
        };
        if pair.width > params.antipodal.max_width {
            continue;
        }
        let mut lp = LabeledPair::new(pair, Some(NegativePattern::Rematch));
        lp.scene_id = scene.seed;
        lp.shape_id = a.shape_id;
        negatives.push(lp);
    }

    let negatives = cap_negatives(negatives, params.max_negative_ratio * positives.len(), &mut rng);
    positives.extend(negatives);
    Ok(positives)
}

/// Keeps at most `cap` negatives, sampled per pattern in proportion to its size, with at
/// least one survivor per non-empty pattern. Survivors keep their input order.
fn cap_negatives(negatives: Vec<LabeledPair>, cap: usize, rng: &mut ChaCha8Rng) -> Vec<LabeledPair> {
    if negatives.len() <= cap {
        return negatives;
    }
    let mut groups: BTreeMap<NegativePattern, Vec<usize>> = BTreeMap::new();
    for (i, l) in negatives.iter().enumerate() {
        groups.entry(l.pattern.expect("negative")).or_default().push(i);
    }
    let total = negatives.len();
    let cap = cap.max(groups.len());
    let mut keep = Vec::new();
    for idx in groups.values_mut() {
        let quota = (cap * idx.len() / total).max(1).min(idx.len());
        idx.shuffle(rng);
        keep.extend_from_slice(&idx[..quota]);
    }
    keep.sort_unstable();
    let mut slots: Vec<Option<LabeledPair>> = negatives.into_iter().map(Some).collect();
    keep.into_iter().map(|i| slots[i].take().expect("unique")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub volume_path: PathBuf,
    pub pairs_path: PathBuf,
    pub n_fused_frames: usize,
    #[serde(skip)]
    pub pairs: Vec<LabeledPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub n_fused_frames: usize,
    pub positives: usize,
    pub ungraspable: usize,
    pub all_colliding: usize,
    pub rematch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scene_seed: u64,
    pub params: DatasetParams,
    pub config: PipelineConfig,
    pub labels: usize,
    pub records: Vec<RecordSummary>,
}

pub fn scene_dir(out_dir: &Path, scene: &SceneSpec) -> PathBuf {
    out_dir.join(format!("scene_{}", scene.seed))
}

/// Fuses views one by one and, at each requested count, writes the volume and the labels
/// whose both contacts are observed and lie within the visibility band of the fused field.
pub fn emit_dataset(
    scene: &SceneSpec,
    labels: &[LabeledPair],
    view_counts: &[usize],
    out_dir: &Path,
    cfg: &PipelineConfig,
    params: &DatasetParams,
) -> Result<Vec<DatasetRecord>, DatasetError> {
    if view_counts.windows(2).any(|w| w[0] > w[1]) {
        return Err(DatasetError::UnsortedViewCounts);
    }
    let dir = scene_dir(out_dir, scene);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("scene.json"), scene.to_json())?;

    let max_views = view_counts.last().copied().unwrap_or(0);
    let views = crate::scene::sample_viewpoints(max_views, &scene.workspace, cfg.view_radius);
    let mut vol = cfg.volume.build().map_err(HarnessError::from)?;
    let band = params.visibility_voxels * vol.voxel_size();
    let mut fused = 0;
    let mut records = Vec::new();
    for &k in view_counts {
        fuse_views(&mut vol, scene, &cfg.intrinsics, &views[fused..k])?;
        fused = k;
        let visible: Vec<LabeledPair> = labels
            .iter()
            .filter_map(|l| {
                let a = vol.sample_observed(&l.pair.p)?;
                let b = vol.sample_observed(&l.pair.p_prime)?;
                (a.abs() <= band && b.abs() <= band).then(|| {
                    let mut l = l.clone();
                    l.pair.sdf_p = a;
                    l.pair.sdf_pprime = b;
                    l
                })
            })
            .collect();
        let volume_path = dir.join(format!("volume_{k}frames.tsdf1"));
        let pairs_path = dir.join(format!("pairs_{k}frames.jsonl"));
        vol.write_tsdf1(BufWriter::new(fs::File::create(&volume_path)?))
            .map_err(HarnessError::from)?;
        write_labeled_jsonl(&visible, BufWriter::new(fs::File::create(&pairs_path)?))?;
        records.push(DatasetRecord {
            volume_path,
            pairs_path,
            n_fused_frames: k,
            pairs: visible,
        });
    }

    let manifest = Manifest {
        scene_seed: scene.seed,
        params: *params,
        config: *cfg,
        labels: labels.len(),
        records: records.iter().map(summarize).collect(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(records)
}

fn summarize(r: &DatasetRecord) -> RecordSummary {
    let count = |p: NegativePattern| r.pairs.iter().filter(|l| l.pattern == Some(p)).count();
    RecordSummary {
        n_fused_frames: r.n_fused_frames,
        positives: r.pairs.iter().filter(|l| l.is_positive()).count(),
        ungraspable: count(NegativePattern::Ungraspable),
        all_colliding: count(NegativePattern::AllColliding),
        rematch: count(NegativePattern::Rematch),
    }
}

pub fn write_labeled_jsonl<W: std::io::Write>(pairs: &[LabeledPair], mut w: W) -> Result<(), DatasetError> {
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labeled_jsonl<R: std::io::BufRead>(r: R) -> Result<Vec<LabeledPair>, DatasetError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Per-shape analysis for every shape of `scene`, seeded by shape index.
pub fn analyze_scene_shapes(
    scene: &SceneSpec,
    gripper: &GripperModel,
    params: &DatasetParams,
) -> BTreeMap<usize, Vec<LabeledPair>> {
    scene
        .shapes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let seed = params.shuffle_seed ^ scene.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ i as u64;
            (i, grasp_analysis_shape(s, gripper, params, seed))
        })
        .collect()
}

/// Analysis, scene labelling and emission for one scene.
pub fn generate_scene_dataset(
    scene: &SceneSpec,
    view_counts: &[usize],
    out_dir: &Path,
    cfg: &PipelineConfig,
    params: &DatasetParams,
) -> Result<Vec<DatasetRecord>, DatasetError> {
    let gripper = cfg.gripper_model()?;
    let per_shape = analyze_scene_shapes(scene, &gripper, params);
    let labels = build_scene_labels(scene, &per_shape, &gripper, params)?;
    emit_dataset(scene, &labels, view_counts, out_dir, cfg, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::{antipodal_score, is_antipodal};
    use crate::scene::ShapeKind;
    use approx::assert_abs_diff_eq;

    fn small() -> DatasetParams {
        DatasetParams {
            n_surface_samples: 150,
            ..Default::default()
        }
    }

    #[test]
    fn sphere_pairs_are_perfect_positives() {
        let s = PrimitiveShape::sphere(0.03, Vec3::new(0.0, 0.0, 0.03)).unwrap();
        let labels = grasp_analysis_shape(&s, &GripperModel::default(), &small(), 1);
        assert_eq!(labels.len(), 150);
        for l in &labels {
            assert_abs_diff_eq!(l.pair.score, 1.0, epsilon = 1e-6);
            assert_abs_diff_eq!(l.pair.width, 0.06, epsilon = 1e-6);
            assert!(l.is_positive());
        }
    }

    #[test]
    fn wide_box_axis_is_filtered() {
        let b = PrimitiveShape::new(ShapeKind::Box, vec![0.06, 0.02, 0.02], RigidTransform::identity()).unwrap();
        let labels = grasp_analysis_shape(&b, &GripperModel::default(), &small(), 2);
        assert!(!labels.is_empty());
        assert!(labels.iter().all(|l| l.pair.g.x.abs() < 0.9));
    }

    #[test]
    fn cylinder_side_pairs_pass_and_cap_pairs_fail() {
        let c = PrimitiveShape::new(ShapeKind::Cylinder, vec![0.02, 0.03], RigidTransform::identity()).unwrap();
        let params = DatasetParams {
            n_surface_samples: 400,
            ..Default::default()
        };
        let labels = grasp_analysis_shape(&c, &GripperModel::default(), &params, 3);
        let thr = params.antipodal.threshold();
        let mut side = 0;
        for l in &labels {
            // Oracle: side wall normals are horizontal and diametrically opposed
            if l.pair.n_p.z.abs() < 1e-6 && l.pair.n_pprime.z.abs() < 1e-6 {
                side += 1;
                assert_abs_diff_eq!(l.pair.score, 1.0, epsilon = 1e-6);
                assert!(l.is_positive());
            }
        }
        assert!(side > 50);
        // cap to side wall: both normals 45 degrees off the grasp axis, score 0.5
        let (p, pp) = (Vec3::new(0.01, 0.0, 0.03), Vec3::new(-0.02, 0.0, 0.0));
        let g = (pp - p).normalize();
        let s = antipodal_score(&c.normal(&p), &c.normal(&pp), &g).unwrap();
        assert_abs_diff_eq!(s, 0.5, epsilon = 1e-6);
        assert!(s < thr);
    }

    #[test]
    fn isolated_sphere_has_no_colliding_negatives() {
        let s = PrimitiveShape::sphere(0.03, Vec3::new(0.0, 0.0, 0.03)).unwrap();
        // floating: with a floor, near-vertical pairs would be blocked by it
        let scene = SceneSpec::new(vec![s.clone()], None, crate::scene::Aabb::default(), 0).unwrap();
        let g = GripperModel::default();
        let per: BTreeMap<_, _> = [(0, grasp_analysis_shape(&s, &g, &small(), 4))].into();
        let labels = build_scene_labels(&scene, &per, &g, &small()).unwrap();
        assert!(labels.iter().all(|l| l.pattern != Some(NegativePattern::AllColliding)));
        assert!(labels.iter().any(|l| l.pattern == Some(NegativePattern::Rematch)));
        let pos = labels.iter().filter(|l| l.is_positive()).count();
        assert!(labels.len() - pos <= 3 * pos);
        assert!(matches!(
            build_scene_labels(&scene, &BTreeMap::new(), &g, &small()),
            Err(DatasetError::MissingShapeLabels(0))
        ));
    }

    #[test]
    fn wedged_sphere_flips_to_all_colliding() {
        let s = PrimitiveShape::sphere(0.02, Vec3::new(0.0, 0.0, 0.02)).unwrap();
        // four walls 5 mm from the sphere on every side
        let wall = |x: f64, y: f64, hx: f64, hy: f64| {
            PrimitiveShape::new(
                ShapeKind::Box,
                vec![hx, hy, 0.03],
                RigidTransform::from_translation(Vec3::new(x, y, 0.03)),
            )
            .unwrap()
        };
        let shapes = vec![
            s.clone(),
            wall(0.035, 0.0, 0.01, 0.045),
            wall(-0.035, 0.0, 0.01, 0.045),
            wall(0.0, 0.035, 0.025, 0.01),
            wall(0.0, -0.035, 0.025, 0.01),
        ];
        let scene = SceneSpec::on_floor(shapes).unwrap();
        let g = GripperModel::default();
        let sphere_labels = grasp_analysis_shape(&s, &g, &small(), 5);
        assert!(sphere_labels.iter().all(|l| l.is_positive()));
        let mut per: BTreeMap<_, _> = [(0, sphere_labels)].into();
        for i in 1..5 {
            per.insert(i, Vec::new());
        }
        let labels = build_scene_labels(&scene, &per, &g, &small()).unwrap();
        assert!(labels.iter().all(|l| !l.is_positive()));
        assert!(labels.iter().any(|l| l.pattern == Some(NegativePattern::AllColliding)));
        // Oracle: every approach of a sample pair intersects the exact scene
        let l = labels.iter().find(|l| l.pattern == Some(NegativePattern::AllColliding)).unwrap();
        assert!(!any_approach_free(|q| scene.sdf(q), &g, &l.pair, 8, small().clearance));
    }

    #[test]
    fn rematch_recomputes_grasp_vector() {
        let a = ContactPair::from_contacts(Vec3::zeros(), Vec3::x() * 0.04, -Vec3::x(), Vec3::x()).unwrap();
        let b = ContactPair::from_contacts(Vec3::y() * 0.01, Vec3::new(0.03, 0.02, 0.0), -Vec3::x(), Vec3::x()).unwrap();
        let r = ContactPair::from_contacts(a.p, b.p_prime, a.n_p, b.n_pprime).unwrap();
        let expect = (b.p_prime - a.p).normalize();
        assert_abs_diff_eq!(r.g, expect, epsilon = 1e-15);
        assert_abs_diff_eq!(r.width, (b.p_prime - a.p).norm(), epsilon = 1e-15);
    }

    #[test]
    fn cap_keeps_every_pattern() {
        let mk = |p| LabeledPair::new(ContactPair::from_contacts(Vec3::zeros(), Vec3::x() * 0.01, -Vec3::x(), Vec3::x()).unwrap(), Some(p));
        let mut neg = vec![mk(NegativePattern::Rematch); 100];
        neg.push(mk(NegativePattern::AllColliding));
        neg.extend(vec![mk(NegativePattern::Ungraspable); 50]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let kept = cap_negatives(neg, 9, &mut rng);
        assert!(kept.len() <= 11);
        for p in [NegativePattern::Rematch, NegativePattern::AllColliding, NegativePattern::Ungraspable] {
            assert!(kept.iter().any(|l| l.pattern == Some(p)));
        }
    }

    #[test]
    fn positives_reverify_from_json() {
        let s = PrimitiveShape::new(ShapeKind::Box, vec![0.02, 0.015, 0.03], RigidTransform::from_yaw(0.4, Vec3::new(0.01, 0.0, 0.03))).unwrap();
        let scene = SceneSpec::on_floor(vec![s.clone()]).unwrap();
        let g = GripperModel::default();
        let params = small();
        let per: BTreeMap<_, _> = [(0, grasp_analysis_shape(&s, &g, &params, 6))].into();
        let labels = build_scene_labels(&scene, &per, &g, &params).unwrap();
        let mut buf = Vec::new();
        write_labeled_jsonl(&labels, &mut buf).unwrap();
        let back = read_labeled_jsonl(&buf[..]).unwrap();
        assert_eq!(back, labels);
        for l in back.iter().filter(|l| l.is_positive()) {
            assert!(is_antipodal(&l.pair, &params.antipodal));
            assert!(any_approach_free(|q| scene.sdf(q), &g, &l.pair, params.n_approach, params.clearance));
        }
    }
}
