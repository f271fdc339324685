use serde::{Deserialize, Serialize};

use crate::contact::antipodal_score;
use crate::geom::{GraspPose, Vec3};
use crate::planner::GripperModel;
use crate::scene::SceneSpec;

/// Sample spacing of the dense collision oracle.
pub const ORACLE_SPACING: f64 = 1e-3;
const ROOT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseMetrics {
    pub antipodal_score: f64,
    pub collision_free: bool,
}

/// Ground-truth quality of a grasp against the analytic scene.
///
/// Both fingers start `opening / 2` from the grasp center, where `opening` is the pose
/// width plus `clearance` per side, and close along the grasp axis until they touch a
/// surface. The score uses exact surface normals and is 0 if either finger travels the full
/// opening without contact. The pose is collision-free iff the solid gripper at that opening,
/// sampled every millimetre, stays strictly outside every shape and above the floor.
pub fn oracle_pose_metrics(scene: &SceneSpec, pose: &GraspPose, gripper: &GripperModel, clearance: f64) -> PoseMetrics {
    let opening = gripper.check_opening(pose.width, clearance);
    PoseMetrics {
        antipodal_score: oracle_antipodal_score(scene, pose, opening),
        collision_free: oracle_collision_free(scene, pose, gripper, opening),
    }
}

pub fn oracle_antipodal_score(scene: &SceneSpec, pose: &GraspPose, opening: f64) -> f64 {
    let g = pose.grasp_axis();
    let e = pose.center();
    let half = 0.5 * opening;
    let hit_a = first_contact(scene, &(e - g * half), &g, opening);
    let hit_b = first_contact(scene, &(e + g * half), &-g, opening);
    match (hit_a, hit_b) {
        (Some(a), Some(b)) => {
            let (na, nb) = (scene.normal(&a), scene.normal(&b));
            antipodal_score(&na, &nb, &g).unwrap_or(0.0)
        }
        _ => 0.0,
    }
}

/// First point along `origin + t dir`, `t` in `[0, max_t]`, where the scene distance drops
/// to zero: sphere tracing, then bisection down to 1e-6 m.
pub fn first_contact(scene: &SceneSpec, origin: &Vec3, dir: &Vec3, max_t: f64) -> Option<Vec3> {
    let f = |t: f64| scene.sdf(&(origin + dir * t));
    if f(0.0) <= 0.0 {
        return Some(*origin);
    }
    let mut t = 0.0;
    loop {
        let d = f(t);
        let next = (t + d.max(ROOT_TOL)).min(max_t);
        if f(next) <= 0.0 {
            let (mut lo, mut hi) = (t, next);
            while hi - lo > ROOT_TOL * 0.1 {
                let mid = 0.5 * (lo + hi);
                if f(mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(origin + dir * hi);
        }
        if next >= max_t {
            return None;
        }
        t = next;
    }
}

pub fn oracle_collision_free(scene: &SceneSpec, pose: &GraspPose, gripper: &GripperModel, opening: f64) -> bool {
    gripper
        .solid_points(pose, opening, ORACLE_SPACING)
        .iter()
        .all(|p| scene.sdf(p) > 0.0)
}
