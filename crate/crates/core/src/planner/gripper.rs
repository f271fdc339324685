use serde::{Deserialize, Serialize};

use super::PlannerError;
use crate::geom::{GraspPose, Vec3};

/// Box dimensions of a two-finger parallel-jaw gripper, in meters.
///
/// Gripper frame: y closes the fingers, z is the approach direction, the origin is the
/// grasp center. Fingertips reach `tip_extension` past the center along +z; the palm sits
/// behind the fingers and spans the full opening.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GripperSpec {
    pub max_width: f64,
    pub finger_depth: f64,
    pub finger_thickness: f64,
    pub finger_width: f64,
    pub palm_depth: f64,
    pub tip_extension: f64,
    pub sample_spacing: f64,
}

impl Default for GripperSpec {
    fn default() -> Self {
        Self {
            max_width: 0.08,
            finger_depth: 0.05,
            finger_thickness: 0.01,
            finger_width: 0.02,
            palm_depth: 0.02,
            tip_extension: 0.005,
            // under half of the default 0.3 m / 64 voxel size
            sample_spacing: 0.002,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperPart {
    LeftFinger,
    RightFinger,
    Palm,
}

/// Point-sampled gripper surface at maximum opening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripperModel {
    pub spec: GripperSpec,
    pub vertices: Vec<Vec3>,
    pub parts: Vec<GripperPart>,
}

impl GripperModel {
    pub fn new(spec: GripperSpec) -> Result<Self, PlannerError> {
        let positive = [
            spec.max_width,
            spec.finger_depth,
            spec.finger_thickness,
            spec.finger_width,
            spec.palm_depth,
            spec.sample_spacing,
        ];
        if positive.iter().any(|&v| !(v > 0.0)) || spec.tip_extension < 0.0 || spec.tip_extension > spec.finger_depth {
            return Err(PlannerError::InvalidGripper(format!("{spec:?}")));
        }
        let mut vertices = Vec::new();
        let mut parts = Vec::new();
        for (part, (lo, hi)) in spec_boxes(&spec, spec.max_width) {
            let pts = box_points(&lo, &hi, spec.sample_spacing, true);
            parts.extend(std::iter::repeat_n(part, pts.len()));
            vertices.extend(pts);
        }
        Ok(Self { spec, vertices, parts })
    }

    pub fn max_width(&self) -> f64 {
        self.spec.max_width
    }

    /// Gripper-frame vertices with the fingers closed to `opening` (clamped to the range).
    pub fn vertices_at(&self, opening: f64) -> impl Iterator<Item = Vec3> + '_ {
        let shift = 0.5 * (self.spec.max_width - opening.clamp(0.0, self.spec.max_width));
        self.vertices.iter().zip(&self.parts).map(move |(v, part)| match part {
            GripperPart::LeftFinger => v + Vec3::new(0.0, shift, 0.0),
            GripperPart::RightFinger => v - Vec3::new(0.0, shift, 0.0),
            GripperPart::Palm => *v,
        })
    }

    /// Opening used for collision checks: the pair width plus `clearance` per side.
    pub fn check_opening(&self, width: f64, clearance: f64) -> f64 {
        (width + 2.0 * clearance).min(self.spec.max_width)
    }

    /// World-frame points filling the solid boxes on a grid of at most `spacing`, fingers
    /// at `opening`. Used by brute-force collision oracles.
    pub fn solid_points(&self, pose: &GraspPose, opening: f64, spacing: f64) -> Vec<Vec3> {
        spec_boxes(&self.spec, opening.clamp(0.0, self.spec.max_width))
            .into_iter()
            .flat_map(|(_, (lo, hi))| box_points(&lo, &hi, spacing, false))
            .map(|p| pose.transform.transform_point(&p))
            .collect()
    }

    /// Half extents of the bounding box of all parts at maximum opening.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let s = &self.spec;
        let half_y = 0.5 * s.max_width + s.finger_thickness;
        let half_x = 0.5 * s.finger_width;
        let z_lo = s.tip_extension - s.finger_depth - s.palm_depth;
        (Vec3::new(-half_x, -half_y, z_lo), Vec3::new(half_x, half_y, s.tip_extension))
    }
}

impl Default for GripperModel {
    fn default() -> Self {
        Self::new(GripperSpec::default()).expect("default gripper is valid")
    }
}

fn spec_boxes(s: &GripperSpec, opening: f64) -> Vec<(GripperPart, (Vec3, Vec3))> {
    let hx = 0.5 * s.finger_width;
    let inner = 0.5 * opening;
    let z_top = s.tip_extension;
    let z_base = s.tip_extension - s.finger_depth;
    let palm_half_y = 0.5 * s.max_width + s.finger_thickness;
    vec![
        (
            GripperPart::LeftFinger,
            (
                Vec3::new(-hx, -inner - s.finger_thickness, z_base),
                Vec3::new(hx, -inner, z_top),
            ),
        ),
        (
            GripperPart::RightFinger,
            (
                Vec3::new(-hx, inner, z_base),
                Vec3::new(hx, inner + s.finger_thickness, z_top),
            ),
        ),
        (
            GripperPart::Palm,
            (
                Vec3::new(-hx, -palm_half_y, z_base - s.palm_depth),
                Vec3::new(hx, palm_half_y, z_base),
            ),
        ),
    ]
}

/// Grid points of an axis-aligned box with spacing at most `spacing`; only the surface
/// when `shell` is set.
fn box_points(lo: &Vec3, hi: &Vec3, spacing: f64, shell: bool) -> Vec<Vec3> {
    let n: Vec<usize> = (0..3)
        .map(|a| (((hi[a] - lo[a]) / spacing).ceil() as usize).max(1))
        .collect();
    let coord = |a: usize, i: usize| lo[a] + (hi[a] - lo[a]) * i as f64 / n[a] as f64;
    let mut out = Vec::new();
    for k in 0..=n[2] {
        for j in 0..=n[1] {
            for i in 0..=n[0] {
                let on_shell = i == 0 || i == n[0] || j == 0 || j == n[1] || k == 0 || k == n[2];
                if shell && !on_shell {
                    continue;
                }
                out.push(Vec3::new(coord(0, i), coord(1, j), coord(2, k)));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    // "left" is the -y finger
    #[test]
    fn vertices_stay_in_bounds_and_fingers_close() {
        let g = GripperModel::default();
        let (lo, hi) = g.bounds();
        assert!(!g.vertices.is_empty());
        for v in &g.vertices {
            assert!((0..3).all(|a| v[a] >= lo[a] - 1e-12 && v[a] <= hi[a] + 1e-12));
        }
        let closed: Vec<Vec3> = g.vertices_at(0.03).collect();
        let inner = g
            .parts
            .iter()
            .zip(&closed)
            .filter(|(p, _)| **p == GripperPart::RightFinger)
            .map(|(_, v)| v.y)
            .fold(f64::INFINITY, f64::min);
        assert!((inner - 0.015).abs() < 1e-12);
    }

    #[test]
    fn shell_spacing_is_dense_enough() {
        // every shell point has a neighbour within the sample spacing
        let g = GripperModel::default();
        let s = g.spec.sample_spacing;
        let default_voxel = 0.3 / 64.0;
        assert!(s <= 0.5 * default_voxel);
        for (i, v) in g.vertices.iter().enumerate().step_by(37) {
            let nearest = g
                .vertices
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, w)| (v - w).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest <= s + 1e-12);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = GripperSpec {
            finger_depth: 0.0,
            ..Default::default()
        };
        assert!(GripperModel::new(bad).is_err());
        let json = r#"{"max_width": 0.1}"#;
        let spec: GripperSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.max_width, 0.1);
        assert_eq!(spec.finger_depth, GripperSpec::default().finger_depth);
    }
}
