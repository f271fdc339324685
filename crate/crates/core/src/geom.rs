//! Rigid transforms, the pinhole camera, and grasp-pose composition.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Orthonormality tolerance for rotation matrices.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("contacts coincide (separation {0:e} m)")]
    DegeneratePair(f64),
    #[error("approach vector is parallel to the grasp vector")]
    ParallelApproach,
    #[error("point is behind the camera (z = {0:e} m)")]
    BehindCamera(f64),
    #[error("rotation is not orthonormal with det +1")]
    InvalidRotation,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("transform matrix must be 4x4 with last row [0, 0, 0, 1]")]
    InvalidMatrix,
}

/// A proper rigid motion `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Validates that `rotation` is orthonormal with determinant +1.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeomError> {
        if !is_rotation(&rotation) {
            return Err(GeomError::InvalidRotation);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation,
        }
    }

    /// Rotation of `angle` radians about world z, then translation.
    pub fn from_yaw(angle: f64, translation: Vec3) -> Self {
        let (s, c) = angle.sin_cos();
        let rotation = Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a transform from unit columns; callers guarantee orthonormality.
    pub(crate) fn from_columns_unchecked(x: Vec3, y: Vec3, z: Vec3, translation: Vec3) -> Self {
        Self {
            rotation: Mat3::from_columns(&[x, y, z]),
            translation,
        }
    }

    /// Camera pose at `eye` looking at `target`, camera z forward and y down in the image.
    ///
    /// Image-down is aligned with world -z projected onto the image plane; for views along
    /// world z the reference falls back to world +y.
    pub fn look_at(eye: Vec3, target: Vec3) -> Self {
        let forward = (target - eye).normalize();
        let mut down = Vec3::new(0.0, 0.0, -1.0);
        let mut y = down - forward * down.dot(&forward);
        if y.norm() < 1e-9 {
            down = Vec3::new(0.0, 1.0, 0.0);
            y = down - forward * down.dot(&forward);
        }
        let y = y.normalize();
        let x = y.cross(&forward);
        Self::from_columns_unchecked(x, y, forward, eye)
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Maps a point from the target frame back into the source frame.
    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 4x4 rows, the serialized layout.
    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let m = self.to_matrix();
        let mut rows = [[0.0; 4]; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = m[(r, c)];
            }
        }
        rows
    }

    pub fn from_rows(rows: &[[f64; 4]; 4]) -> Result<Self, GeomError> {
        let last = rows[3];
        if last != [0.0, 0.0, 0.0, 1.0] {
            return Err(GeomError::InvalidMatrix);
        }
        let rotation = Mat3::from_fn(|r, c| rows[r][c]);
        let translation = Vec3::new(rows[0][3], rows[1][3], rows[2][3]);
        Self::new(rotation, translation)
    }

    /// Geodesic angle between the two rotations, in radians.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }
}

pub fn is_rotation(r: &Mat3) -> bool {
    let rtr = r.transpose() * r;
    let ortho = (rtr - Mat3::identity()).iter().all(|v| v.abs() <= ROTATION_TOL);
    ortho && (r.determinant() - 1.0).abs() <= ROTATION_TOL
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            #[serde(rename = "T")]
            t: [[f64; 4]; 4],
        }
        Repr { t: self.to_rows() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            #[serde(rename = "T")]
            t: [[f64; 4]; 4],
        }
        let repr = Repr::deserialize(d)?;
        RigidTransform::from_rows(&repr.t).map_err(serde::de::Error::custom)
    }
}

/// Pinhole intrinsics. Pixel centers sit at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeomError> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeomError::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64)
        {
            return Err(GeomError::InvalidIntrinsics(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(())
    }

    /// Unit-z ray through pixel coordinates `(u, v)` in the camera frame.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

impl Default for CameraIntrinsics {
    /// 256x192 sensor with a ~65 degree horizontal field of view.
    fn default() -> Self {
        Self {
            fx: 200.0,
            fy: 200.0,
            cx: 127.5,
            cy: 95.5,
            width: 256,
            height: 192,
        }
    }
}

/// Pinhole projection of a world point. `cam_pose` maps camera coordinates to world.
pub fn project_point(
    intr: &CameraIntrinsics,
    cam_pose: &RigidTransform,
    world_pt: &Vec3,
) -> Result<(f64, f64, f64), GeomError> {
    let pc = cam_pose.inverse_transform_point(world_pt);
    if pc.z <= 1e-6 {
        return Err(GeomError::BehindCamera(pc.z));
    }
    let u = intr.fx * pc.x / pc.z + intr.cx;
    let v = intr.fy * pc.y / pc.z + intr.cy;
    Ok((u, v, pc.z))
}

/// Inverse of [`project_point`] given the camera-frame depth.
pub fn back_project(intr: &CameraIntrinsics, cam_pose: &RigidTransform, u: f64, v: f64, depth: f64) -> Vec3 {
    cam_pose.transform_point(&(intr.pixel_ray(u, v) * depth))
}

/// A parallel-jaw grasp: base-to-gripper transform plus opening width.
///
/// Gripper frame: y is the closing axis (grasp vector), z the approach vector,
/// x = y cross z. The origin is the grasp center between the two contacts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspPose {
    #[serde(flatten)]
    pub transform: RigidTransform,
    pub width: f64,
}

impl GraspPose {
    pub fn center(&self) -> Vec3 {
        *self.transform.translation()
    }

    pub fn grasp_axis(&self) -> Vec3 {
        self.transform.rotation().column(1).into_owned()
    }

    pub fn approach(&self) -> Vec3 {
        self.transform.rotation().column(2).into_owned()
    }
}

/// Composes the gripper pose from a contact pair and an approach vector.
///
/// The approach vector is re-orthogonalized against the grasp vector before use.
pub fn compose_grasp_pose(p: &Vec3, p_prime: &Vec3, approach: &Vec3) -> Result<GraspPose, GeomError> {
    let d = p_prime - p;
    let width = d.norm();
    if width <= 1e-6 {
        return Err(GeomError::DegeneratePair(width));
    }
    let g = d / width;
    let a_norm = approach.norm();
    if a_norm <= 1e-12 {
        return Err(GeomError::ParallelApproach);
    }
    let a_unit = approach / a_norm;
    let a_perp = a_unit - g * a_unit.dot(&g);
    // sin of the angle between a and g
    if a_perp.norm() <= 1e-3_f64.sin() {
        return Err(GeomError::ParallelApproach);
    }
    let a = a_perp.normalize();
    let x = g.cross(&a);
    let e = (p + p_prime) * 0.5;
    Ok(GraspPose {
        transform: RigidTransform::from_columns_unchecked(x, g, a, e),
        width,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn down_camera(height: f64) -> RigidTransform {
        RigidTransform::look_at(Vec3::new(0.0, 0.0, height), Vec3::zeros())
    }

    #[test]
    fn axis_aligned_pair_gives_identity() {
        let pose = compose_grasp_pose(
            &Vec3::new(0.0, -0.02, 0.0),
            &Vec3::new(0.0, 0.02, 0.0),
            &Vec3::new(0.0, 0.0, 1.0),
        )
        .unwrap();
        assert_abs_diff_eq!(*pose.transform.rotation(), Mat3::identity(), epsilon = 1e-12);
        assert_abs_diff_eq!(pose.center(), Vec3::zeros(), epsilon = 1e-12);
        assert_abs_diff_eq!(pose.width, 0.04, epsilon = 1e-12);
    }

    #[test]
    fn x_axis_is_grasp_cross_approach() {
        let pose = compose_grasp_pose(&Vec3::zeros(), &Vec3::new(0.04, 0.0, 0.0), &Vec3::z()).unwrap();
        let r = pose.transform.rotation();
        assert_abs_diff_eq!(r.column(1).into_owned(), Vec3::x(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.column(0).into_owned(), Vec3::new(0.0, -1.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(pose.center(), Vec3::new(0.02, 0.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(pose.width, 0.04, epsilon = 1e-12);
    }

    #[test]
    fn oblique_approach_is_reorthogonalized() {
        // g = (0, 0.6, 0.8); a = (0, 0.8, 0.6) has a.g = 0.96, so
        // a_perp = (0, 0.8 - 0.576, 0.6 - 0.768) = (0, 0.224, -0.168), |a_perp| = 0.28
        // a = (0, 0.8, -0.6), x = g x a = (-1, 0, 0).
        let pose = compose_grasp_pose(
            &Vec3::zeros(),
            &Vec3::new(0.0, 0.03, 0.04),
            &Vec3::new(0.0, 0.8, 0.6),
        )
        .unwrap();
        let r = pose.transform.rotation();
        assert_abs_diff_eq!(r.transpose() * r, Mat3::identity(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.column(2).into_owned(), Vec3::new(0.0, 0.8, -0.6), epsilon = 1e-12);
        assert_abs_diff_eq!(r.column(0).into_owned(), Vec3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(pose.center(), Vec3::new(0.0, 0.015, 0.02), epsilon = 1e-12);
        assert_abs_diff_eq!(pose.width, 0.05, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let p = Vec3::new(0.1, 0.2, 0.3);
        assert!(matches!(
            compose_grasp_pose(&p, &p, &Vec3::z()),
            Err(GeomError::DegeneratePair(_))
        ));
        assert_eq!(
            compose_grasp_pose(&Vec3::zeros(), &Vec3::new(0.0, 0.0, 0.05), &Vec3::z()),
            Err(GeomError::ParallelApproach)
        );
        assert_eq!(
            compose_grasp_pose(&Vec3::zeros(), &Vec3::new(0.0, 0.0, 0.05), &Vec3::new(1e-5, 0.0, -1.0)),
            Err(GeomError::ParallelApproach)
        );
    }

    #[test]
    fn principal_ray_projects_to_principal_point() {
        let intr = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap();
        let (u, v, d) = project_point(&intr, &RigidTransform::identity(), &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((u, v, d), (50.0, 50.0, 1.0));

        let intr = CameraIntrinsics::new(200.0, 200.0, 80.0, 60.0, 160, 120).unwrap();
        let (u, _, _) = project_point(&intr, &RigidTransform::identity(), &Vec3::new(0.1, 0.0, 0.5)).unwrap();
        assert_abs_diff_eq!(u, 120.0, epsilon = 1e-12);
    }

    #[test]
    fn downward_camera_sees_floor_at_its_height() {
        let intr = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap();
        let cam = down_camera(0.5);
        let (_, _, depth) = project_point(&intr, &cam, &Vec3::new(0.03, -0.02, 0.0)).unwrap();
        assert_abs_diff_eq!(depth, 0.5, epsilon = 1e-12);
        assert!(matches!(
            project_point(&intr, &cam, &Vec3::new(0.0, 0.0, 0.7)),
            Err(GeomError::BehindCamera(_))
        ));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::default().validate().is_ok());
    }

    #[test]
    fn pose_json_layout() {
        let t = RigidTransform::from_yaw(0.3, Vec3::new(1.0, 2.0, 3.0));
        let json = serde_json::to_value(t).unwrap();
        assert_eq!(json["T"][0][3], 1.0);
        assert_eq!(json["T"][3], serde_json::json!([0.0, 0.0, 0.0, 1.0]));
        let back: RigidTransform = serde_json::from_value(json).unwrap();
        assert_abs_diff_eq!(back.to_matrix(), t.to_matrix(), epsilon = 1e-15);
        let bad = serde_json::json!({"T": [[2.0, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]]});
        assert!(serde_json::from_value::<RigidTransform>(bad).is_err());
    }

    fn unit_vec() -> impl Strategy<Value = Vec3> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("non-zero", |(x, y, z)| x * x + y * y + z * z > 1e-2)
            .prop_map(|(x, y, z)| Vec3::new(x, y, z).normalize())
    }

    fn point() -> impl Strategy<Value = Vec3> {
        (-0.2f64..0.2, -0.2f64..0.2, -0.2f64..0.2).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn composed_pose_is_valid(p in point(), q in point(), a in unit_vec()) {
            let g = q - p;
            prop_assume!(g.norm() > 1e-6);
            prop_assume!(g.normalize().cross(&a).norm() > 2e-3);
            let pose = compose_grasp_pose(&p, &q, &a).unwrap();
            let r = pose.transform.rotation();
            prop_assert!(is_rotation(r));
            let x = r.column(0).into_owned();
            let expect = r.column(1).cross(&r.column(2));
            prop_assert!((x - expect).amax() <= 1e-9);
            prop_assert!((pose.width - g.norm()).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn swapping_contacts_negates_grasp_axis(p in point(), q in point(), a in unit_vec()) {
            prop_assume!((q - p).norm() > 1e-3);
            prop_assume!((q - p).normalize().cross(&a).norm() > 1e-2);
            let fwd = compose_grasp_pose(&p, &q, &a).unwrap();
            let rev = compose_grasp_pose(&q, &p, &a).unwrap();
            let (rf, rr) = (fwd.transform.rotation(), rev.transform.rotation());
            prop_assert!((rf.column(1) + rr.column(1)).amax() < 1e-12);
            prop_assert!((rf.column(0) + rr.column(0)).amax() < 1e-12);
            prop_assert!((rf.column(2) - rr.column(2)).amax() < 1e-12);
            prop_assert!((fwd.center() - rev.center()).amax() < 1e-15);
            prop_assert!((fwd.width - rev.width).abs() < 1e-15);
        }

        #[test]
        fn projection_round_trips(
            eye in (-0.5f64..0.5, -0.5f64..0.5, 0.3f64..0.8),
            pt in point(),
        ) {
            let intr = CameraIntrinsics::default();
            let cam = RigidTransform::look_at(Vec3::new(eye.0, eye.1, eye.2), Vec3::zeros());
            if let Ok((u, v, d)) = project_point(&intr, &cam, &pt) {
                let back = back_project(&intr, &cam, u, v, d);
                prop_assert!((back - pt).amax() < 1e-9);
            }
        }

        #[test]
        fn look_at_passes_through_target(eye in (-0.5f64..0.5, -0.5f64..0.5, 0.1f64..0.8)) {
            let eye = Vec3::new(eye.0, eye.1, eye.2);
            let target = Vec3::new(0.0, 0.0, 0.05);
            let cam = RigidTransform::look_at(eye, target);
            prop_assert!(is_rotation(cam.rotation()));
            let local = cam.inverse_transform_point(&target);
            prop_assert!(local.x.abs() < 1e-9 && local.y.abs() < 1e-9 && local.z > 0.0);
        }
    }
}
