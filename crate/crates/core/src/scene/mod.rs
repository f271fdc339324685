//! Synthetic scenes of analytic primitives on a floor plane: ground-truth distance queries,
//! depth rendering, camera viewpoints, and seeded clutter generation.

mod generate;
mod render;
pub mod shape;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{RigidTransform, Vec3};

pub use generate::{generate_scene, CatalogEntry, GeneratedScene, ShapeCatalog};
pub use render::render_depth;
pub use shape::{PrimitiveShape, ShapeKind};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("shape {0} does not fit inside the workspace")]
    OutsideWorkspace(usize),
    #[error("invalid scene request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn min(&self) -> Vec3 {
        Vec3::from(self.min)
    }

    pub fn max(&self) -> Vec3 {
        Vec3::from(self.max)
    }

    pub fn center(&self) -> Vec3 {
        (self.min() + self.max()) * 0.5
    }

    pub fn contains_sphere(&self, c: &Vec3, r: f64) -> bool {
        (0..3).all(|a| c[a] - r >= self.min[a] - 1e-12 && c[a] + r <= self.max[a] + 1e-12)
    }
}

impl Default for Aabb {
    /// 0.3 m square tabletop; the floor sits 6 cm above the bottom face.
    fn default() -> Self {
        Self {
            min: [-0.15, -0.15, -0.06],
            max: [0.15, 0.15, 0.18],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    /// Height of the floor half-space; `None` disables the floor.
    pub floor_z: Option<f64>,
    pub workspace: Aabb,
    pub shapes: Vec<PrimitiveShape>,
}

impl SceneSpec {
    pub fn new(shapes: Vec<PrimitiveShape>, floor_z: Option<f64>, workspace: Aabb, seed: u64) -> Result<Self, SceneError> {
        let scene = Self {
            seed,
            floor_z,
            workspace,
            shapes,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Scene with a floor at z = 0 and the default workspace.
    pub fn on_floor(shapes: Vec<PrimitiveShape>) -> Result<Self, SceneError> {
        Self::new(shapes, Some(0.0), Aabb::default(), 0)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for (i, s) in self.shapes.iter().enumerate() {
            s.validate()?;
            if !self.workspace.contains_sphere(&s.center(), s.bounding_radius()) {
                return Err(SceneError::OutsideWorkspace(i));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SceneError> {
        let scene: SceneSpec =
            serde_json::from_str(s).map_err(|e| SceneError::InvalidRequest(format!("scene JSON: {e}")))?;
        scene.validate()?;
        Ok(scene)
    }

    /// Ground-truth signed distance: minimum over shapes and the floor half-space.
    pub fn sdf(&self, p: &Vec3) -> f64 {
        let floor = self.floor_z.map_or(f64::INFINITY, |z| p.z - z);
        self.shapes.iter().fold(floor, |acc, s| acc.min(s.sdf(p)))
    }

    /// Distance ignoring the floor.
    pub fn objects_sdf(&self, p: &Vec3) -> f64 {
        self.shapes.iter().fold(f64::INFINITY, |acc, s| acc.min(s.sdf(p)))
    }

    /// Index of the surface closest to `p`: `Some(shape)` or `None` for the floor.
    pub fn closest_shape(&self, p: &Vec3) -> Option<usize> {
        let floor = self.floor_z.map_or(f64::INFINITY, |z| p.z - z);
        let mut best = (floor.abs(), None);
        for (i, s) in self.shapes.iter().enumerate() {
            let d = s.sdf(p).abs();
            if d < best.0 {
                best = (d, Some(i));
            }
        }
        best.1
    }

    /// Outward unit normal of the closest surface at `p`.
    pub fn normal(&self, p: &Vec3) -> Vec3 {
        match self.closest_shape(p) {
            Some(i) => self.shapes[i].normal(p),
            None => Vec3::z(),
        }
    }
}

/// Free-function form of [`SceneSpec::sdf`].
pub fn scene_sdf(scene: &SceneSpec, p: &Vec3) -> f64 {
    scene.sdf(p)
}

/// Default upper bound on the polar angle of sampled viewpoints (radians, 70 degrees).
pub const DEFAULT_MAX_POLAR: f64 = 70.0 * std::f64::consts::PI / 180.0;

/// `n` camera poses on a Fibonacci spiral over the upper hemisphere, looking at the
/// workspace center. The first pose is the nadir view.
pub fn sample_viewpoints(n: usize, workspace: &Aabb, radius: f64) -> Vec<RigidTransform> {
    sample_viewpoints_capped(n, workspace.center(), radius, DEFAULT_MAX_POLAR)
}

/// Spiral viewpoints over the spherical cap of polar angle `max_polar` around +z.
pub fn sample_viewpoints_capped(n: usize, center: Vec3, radius: f64, max_polar: f64) -> Vec<RigidTransform> {
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    let span = 1.0 - max_polar.cos();
    (0..n)
        .map(|k| {
            let cz = 1.0 - span * k as f64 / n as f64;
            let sz = (1.0 - cz * cz).max(0.0).sqrt();
            let phi = golden * k as f64;
            let dir = Vec3::new(sz * phi.cos(), sz * phi.sin(), cz);
            RigidTransform::look_at(center + dir * radius, center)
        })
        .collect()
}

/// Spiral viewpoints over the full sphere, for floating fixtures without a floor.
pub fn sample_viewpoints_sphere(n: usize, center: Vec3, radius: f64) -> Vec<RigidTransform> {
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    (0..n)
        .map(|k| {
            let cz = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
            let sz = (1.0 - cz * cz).max(0.0).sqrt();
            let phi = golden * k as f64;
            let dir = Vec3::new(sz * phi.cos(), sz * phi.sin(), cz);
            RigidTransform::look_at(center + dir * radius, center)
        })
        .collect()
}
