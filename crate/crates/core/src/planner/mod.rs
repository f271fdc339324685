//! From scored contact pairs to ranked, collision-free parallel-jaw grasps.

mod gripper;

use std::cmp::Ordering;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{sample_contact_pairs, AntipodalParams, ContactPair};
use crate::geom::{compose_grasp_pose, GraspPose, Vec3};
use crate::isosurface::{marching_cubes, IsosurfaceError};
use crate::tsdf::TsdfVolume;

pub use gripper::{GripperModel, GripperPart, GripperSpec};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("grasp vector is not unit length (norm {0})")]
    DegenerateGraspVector(f64),
    #[error("invalid gripper: {0}")]
    InvalidGripper(String),
    #[error("invalid planner parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Isosurface(#[from] IsosurfaceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    pub n_approach: usize,
    pub top_fraction: f64,
    /// Lower bound on the number of pairs kept by the top-fraction selection.
    pub min_selected: usize,
    pub collision_margin: f64,
    pub nms_trans: f64,
    pub nms_rot: f64,
    /// Largest allowed angle between the approach vector and straight down.
    pub max_approach_elevation: f64,
    pub contact: AntipodalParams,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            n_approach: 8,
            top_fraction: 0.003,
            min_selected: 16,
            collision_margin: 0.0,
            nms_trans: 0.02,
            nms_rot: 30f64.to_radians(),
            max_approach_elevation: 100f64.to_radians(),
            contact: AntipodalParams::default(),
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |m: &str| Err(PlannerError::InvalidParams(m.into()));
        if self.n_approach < 2 {
            return bad("n_approach must be at least 2");
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return bad("top_fraction must lie in (0, 1]");
        }
        if !(self.collision_margin >= 0.0 && self.nms_trans >= 0.0 && self.nms_rot >= 0.0) {
            return bad("margins must be non-negative");
        }
        self.contact
            .validate()
            .map_err(|e| PlannerError::InvalidParams(e.to_string()))
    }
}

/// Per-pair quality in [0, 1]. The analytic antipodal score is the default; a learned
/// model can be dropped in without touching the rest of the pipeline.
pub trait Scorer: Sync {
    fn score(&self, vol: &TsdfVolume, pairs: &[ContactPair]) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AnalyticScorer;

impl Scorer for AnalyticScorer {
    fn score(&self, _vol: &TsdfVolume, pairs: &[ContactPair]) -> Vec<f64> {
        pairs.iter().map(|p| p.score).collect()
    }
}

/// A grasp with its pair score and the index of the contact pair it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    #[serde(flatten)]
    pub pose: GraspPose,
    pub score: f64,
    pub pair_index: usize,
}

/// `n` approach directions perpendicular to `g`, evenly spaced in angle. Phase zero is
/// world down projected onto the plane, or world +x when `g` is vertical.
pub fn sample_approach_vectors(g: &Vec3, n: usize) -> Result<Vec<Vec3>, PlannerError> {
    let norm = g.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(PlannerError::DegenerateGraspVector(norm));
    }
    if n < 2 {
        return Err(PlannerError::InvalidParams("need at least 2 approach vectors".into()));
    }
    let project = |v: Vec3| v - g * v.dot(g);
    let down = project(-Vec3::z());
    let reference = if down.norm() > 1e-6 {
        down.normalize()
    } else {
        project(Vec3::x()).normalize()
    };
    let side = g.cross(&reference);
    Ok((0..n)
        .map(|i| {
            let th = std::f64::consts::TAU * i as f64 / n as f64;
            reference * th.cos() + side * th.sin()
        })
        .collect())
}

/// Angle between an approach vector and straight down.
pub fn approach_elevation(a: &Vec3) -> f64 {
    (-a.z / a.norm()).clamp(-1.0, 1.0).acos()
}

/// True when every gripper sample is clear of the surface by more than `margin`.
///
/// Fingers are placed at the pose width plus one voxel per side. Samples outside the
/// volume count as free.
pub fn check_collision(vol: &TsdfVolume, gripper: &GripperModel, pose: &GraspPose, margin: f64) -> bool {
    let opening = gripper.check_opening(pose.width, vol.voxel_size());
    gripper.vertices_at(opening).all(|v| {
        let w = pose.transform.transform_point(&v);
        vol.sample_trilinear(&w).map_or(true, |d| d > margin)
    })
}

fn ranking(pairs: &[ContactPair], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .unwrap_or(Ordering::Equal)
            .then(pairs[i].width.partial_cmp(&pairs[j].width).unwrap_or(Ordering::Equal))
            .then(i.cmp(&j))
    });
    order
}

/// Number of pairs kept by the top-fraction selection.
pub fn selection_size(count: usize, params: &PlannerParams) -> usize {
    let frac = (params.top_fraction * count as f64).ceil() as usize;
    frac.max(params.min_selected).min(count)
}

/// Ranks pairs, keeps the top fraction, and returns every collision-free pose obtained by
/// rotating the gripper about each kept pair's grasp axis, in rank order.
pub fn select_feasible(
    vol: &TsdfVolume,
    gripper: &GripperModel,
    pairs: &[ContactPair],
    scores: &[f64],
    params: &PlannerParams,
) -> Vec<Candidate> {
    let order = ranking(pairs, scores);
    let keep = selection_size(pairs.len(), params);
    let per_pair: Vec<Vec<Candidate>> = order[..keep]
        .par_iter()
        .map(|&i| pair_candidates(vol, gripper, &pairs[i], i, scores[i], params))
        .collect();
    per_pair.into_iter().flatten().collect()
}

fn pair_candidates(
    vol: &TsdfVolume,
    gripper: &GripperModel,
    pair: &ContactPair,
    index: usize,
    score: f64,
    params: &PlannerParams,
) -> Vec<Candidate> {
    let Ok(approaches) = sample_approach_vectors(&pair.g, params.n_approach) else {
        return Vec::new();
    };
    approaches
        .iter()
        .filter(|a| approach_elevation(a) <= params.max_approach_elevation + 1e-12)
        .filter_map(|a| compose_grasp_pose(&pair.p, &pair.p_prime, a).ok())
        .filter(|pose| check_collision(vol, gripper, pose, params.collision_margin))
        .map(|pose| Candidate {
            pose,
            score,
            pair_index: index,
        })
        .collect()
}

/// Greedy suppression: a candidate is dropped when a better one is both closer than
/// `trans` and rotated by less than `rot`. Equal scores keep their input order.
pub fn nms(candidates: &[Candidate], trans: f64, rot: f64) -> Vec<Candidate> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&i, &j| {
        candidates[j]
            .score
            .partial_cmp(&candidates[i].score)
            .unwrap_or(Ordering::Equal)
    });
    let mut kept: Vec<Candidate> = Vec::new();
    for i in order {
        let c = &candidates[i];
        let suppressed = kept.iter().any(|k| {
            (k.pose.center() - c.pose.center()).norm() < trans
                && k.pose.transform.rotation_angle_to(&c.pose.transform) < rot
        });
        if !suppressed {
            kept.push(*c);
        }
    }
    kept
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanStats {
    pub vertices: usize,
    pub pairs: usize,
    pub selected: usize,
    pub feasible: usize,
    pub output: usize,
    pub t_isosurface: f64,
    pub t_contacts: f64,
    pub t_scoring: f64,
    pub t_collision: f64,
    pub t_nms: f64,
}

impl PlanStats {
    pub fn total_time(&self) -> f64 {
        self.t_isosurface + self.t_contacts + self.t_scoring + self.t_collision + self.t_nms
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub grasps: Vec<Candidate>,
    pub stats: PlanStats,
}

impl PlanResult {
    pub fn poses(&self) -> Vec<GraspPose> {
        self.grasps.iter().map(|c| c.pose).collect()
    }
}

/// Isosurface, contact matching, scoring, collision-checked selection and suppression.
pub fn plan(
    vol: &TsdfVolume,
    gripper: &GripperModel,
    scorer: &dyn Scorer,
    params: &PlannerParams,
) -> Result<PlanResult, PlannerError> {
    params.validate()?;
    let mut stats = PlanStats::default();

    let t = Instant::now();
    let mesh = marching_cubes(vol)?;
    stats.t_isosurface = t.elapsed().as_secs_f64();
    stats.vertices = mesh.vertex_count();

    let t = Instant::now();
    let pairs = sample_contact_pairs(vol, &mesh, &params.contact);
    stats.t_contacts = t.elapsed().as_secs_f64();
    stats.pairs = pairs.len();

    let t = Instant::now();
    let scores: Vec<f64> = scorer
        .score(vol, &pairs)
        .into_iter()
        .map(|s| if s.is_finite() { s.clamp(0.0, 1.0) } else { 0.0 })
        .collect();
    stats.t_scoring = t.elapsed().as_secs_f64();

    let t = Instant::now();
    stats.selected = selection_size(pairs.len(), params);
    let feasible = select_feasible(vol, gripper, &pairs, &scores, params);
    stats.t_collision = t.elapsed().as_secs_f64();
    stats.feasible = feasible.len();

    let t = Instant::now();
    let grasps = nms(&feasible, params.nms_trans, params.nms_rot);
    stats.t_nms = t.elapsed().as_secs_f64();
    stats.output = grasps.len();

    Ok(PlanResult { grasps, stats })
}
