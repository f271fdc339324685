use rayon::prelude::*;

use super::SceneSpec;
use crate::geom::{CameraIntrinsics, RigidTransform, Vec3};
use crate::tsdf::DepthImage;

const MAX_STEPS: usize = 256;
const HIT_EPS: f64 = 1e-4;
const MAX_RANGE: f64 = 2.0;

/// Renders a depth map by sphere tracing the scene.
///
/// Each ray only traces the shapes whose bounding spheres it crosses; the floor plane is
/// intersected in closed form. Depth is the camera-frame z of the first hit, 0 on a miss.
pub fn render_depth(scene: &SceneSpec, intr: &CameraIntrinsics, cam_pose: &RigidTransform) -> DepthImage {
    let bounds: Vec<(Vec3, f64)> = scene
        .shapes
        .iter()
        .map(|s| (s.center(), s.bounding_radius() + HIT_EPS))
        .collect();
    let eye = *cam_pose.translation();
    let w = intr.width as usize;
    let mut data = vec![0.0f32; intr.pixel_count()];
    data.par_chunks_mut(w).enumerate().for_each(|(row, out)| {
        let mut candidates: Vec<usize> = Vec::with_capacity(bounds.len());
        for (col, px) in out.iter_mut().enumerate() {
            let ray_cam = intr.pixel_ray(col as f64, row as f64);
            let scale = ray_cam.norm();
            let dir = cam_pose.transform_vector(&ray_cam) / scale;
            let t = trace(scene, &bounds, &eye, &dir, &mut candidates);
            if let Some(t) = t {
                *px = (t / scale) as f32;
            }
        }
    });
    DepthImage {
        width: intr.width,
        height: intr.height,
        data,
    }
}

fn trace(scene: &SceneSpec, bounds: &[(Vec3, f64)], eye: &Vec3, dir: &Vec3, candidates: &mut Vec<usize>) -> Option<f64> {
    let floor_t = scene
        .floor_z
        .and_then(|z| (dir.z < -1e-12).then(|| (z - eye.z) / dir.z))
        .filter(|&t| t >= 0.0);
    let limit = floor_t.unwrap_or(f64::INFINITY).min(MAX_RANGE);

    candidates.clear();
    let mut t_start = f64::INFINITY;
    for (i, (c, r)) in bounds.iter().enumerate() {
        let oc = eye - c;
        let b = oc.dot(dir);
        let disc = b * b - (oc.norm_squared() - r * r);
        if disc < 0.0 {
            continue;
        }
        let s = disc.sqrt();
        let (t0, t1) = (-b - s, -b + s);
        if t1 < 0.0 || t0 > limit {
            continue;
        }
        candidates.push(i);
        t_start = t_start.min(t0.max(0.0));
    }

    if !candidates.is_empty() {
        let mut t = t_start;
        for _ in 0..MAX_STEPS {
            if t > limit {
                break;
            }
            let p = eye + dir * t;
            let d = candidates
                .iter()
                .fold(f64::INFINITY, |acc, &i| acc.min(scene.shapes[i].sdf(&p)));
            if d < HIT_EPS {
                return Some(t);
            }
            t += d;
        }
    }
    floor_t.filter(|&t| t <= MAX_RANGE)
}
