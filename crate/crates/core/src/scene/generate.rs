use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::shape::PrimitiveShape;
use super::{Aabb, SceneError, SceneSpec, ShapeKind};
use crate::geom::{Mat3, RigidTransform, Vec3};

const MAX_ATTEMPTS: usize = 200;
/// Allowed interpenetration between resting shapes (m).
pub const PLACEMENT_TOLERANCE: f64 = 2e-3;
const CONTACT_SAMPLES: usize = 400;
const MIN_DROP_STEP: f64 = 5e-4;

/// One kind of object and the uniform ranges of its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub kind: ShapeKind,
    pub weight: f64,
    pub ranges: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeCatalog {
    pub entries: Vec<CatalogEntry>,
}

impl ShapeCatalog {
    /// Desk-sized spheres, boxes, cylinders, ellipsoids and capsules, all narrower than a
    /// 0.08 m gripper opening along at least one axis.
    pub fn primitives() -> Self {
        let e = |kind, ranges: &[[f64; 2]]| CatalogEntry {
            kind,
            weight: 1.0,
            ranges: ranges.to_vec(),
        };
        Self {
            entries: vec![
                e(ShapeKind::Sphere, &[[0.015, 0.032]]),
                e(ShapeKind::Box, &[[0.012, 0.035], [0.012, 0.035], [0.012, 0.035]]),
                e(ShapeKind::Cylinder, &[[0.014, 0.03], [0.015, 0.045]]),
                e(ShapeKind::Ellipsoid, &[[0.015, 0.035], [0.015, 0.035], [0.015, 0.03]]),
                e(ShapeKind::Capsule, &[[0.012, 0.025], [0.012, 0.03]]),
            ],
        }
    }

    /// A catalog holding a single kind.
    pub fn only(kind: ShapeKind, ranges: Vec<[f64; 2]>) -> Self {
        Self {
            entries: vec![CatalogEntry {
                kind,
                weight: 1.0,
                ranges,
            }],
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> (ShapeKind, Vec<f64>) {
        let total: f64 = self.entries.iter().map(|e| e.weight).sum();
        let mut pick = rng.gen::<f64>() * total;
        let mut chosen = &self.entries[self.entries.len() - 1];
        for e in &self.entries {
            if pick < e.weight {
                chosen = e;
                break;
            }
            pick -= e.weight;
        }
        let params = chosen
            .ranges
            .iter()
            .map(|[lo, hi]| if hi > lo { rng.gen_range(*lo..*hi) } else { *lo })
            .collect();
        (chosen.kind, params)
    }
}

impl Default for ShapeCatalog {
    fn default() -> Self {
        Self::primitives()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedScene {
    pub scene: SceneSpec,
    /// Indices (in draw order) of objects that found no valid placement.
    pub skipped: Vec<usize>,
}

/// Generates a cluttered tabletop scene deterministically from `seed`.
///
/// Objects are drawn from the catalog, given a random yaw (and a random axis-aligned
/// resting orientation when not spheres), then lowered from above the current pile until
/// they touch the floor or a previously placed object.
pub fn generate_scene(seed: u64, n_objects: usize, catalog: &ShapeCatalog) -> Result<GeneratedScene, SceneError> {
    generate_scene_in(seed, n_objects, catalog, Aabb::default(), 0.0)
}

pub fn generate_scene_in(
    seed: u64,
    n_objects: usize,
    catalog: &ShapeCatalog,
    workspace: Aabb,
    floor_z: f64,
) -> Result<GeneratedScene, SceneError> {
    if !(1..=30).contains(&n_objects) {
        return Err(SceneError::InvalidRequest(format!(
            "n_objects must be in [1, 30], got {n_objects}"
        )));
    }
    if catalog.entries.is_empty() {
        return Err(SceneError::InvalidRequest("empty catalog".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed: Vec<Placed> = Vec::new();
    let mut skipped = Vec::new();

    for obj in 0..n_objects {
        let (kind, params) = catalog.draw(&mut rng);
        let upright = resting_rotation(kind, &mut rng);
        let probe = PrimitiveShape::new(kind, params.clone(), RigidTransform::identity())?;
        let mut local_samples = probe.sample_surface(CONTACT_SAMPLES, &mut rng);
        // deterministic order independent of the rejection sampler's acceptance pattern
        local_samples.shuffle(&mut rng);
        let radius = probe.bounding_radius();

        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let x = sample_axis(&mut rng, workspace.min[0] + radius, workspace.max[0] - radius);
            let y = sample_axis(&mut rng, workspace.min[1] + radius, workspace.max[1] - radius);
            let (Some(x), Some(y)) = (x, y) else { continue };
            let yaw = rng.gen_range(0.0..std::f64::consts::TAU);
            let rot = yaw_matrix(yaw) * upright;
            if let Some(shape) = drop_shape(kind, &params, rot, x, y, floor_z, &placed, &local_samples, &workspace) {
                accepted = Some(shape);
                break;
            }
        }
        match accepted {
            Some(shape) => {
                let samples = local_samples.iter().map(|p| shape.pose.transform_point(p)).collect();
                placed.push(Placed { shape, samples });
            }
            None => skipped.push(obj),
        }
    }

    let scene = SceneSpec::new(
        placed.into_iter().map(|p| p.shape).collect(),
        Some(floor_z),
        workspace,
        seed,
    )?;
    Ok(GeneratedScene { scene, skipped })
}

struct Placed {
    shape: PrimitiveShape,
    samples: Vec<Vec3>,
}

fn sample_axis<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> Option<f64> {
    (hi > lo).then(|| rng.gen_range(lo..hi))
}

fn yaw_matrix(yaw: f64) -> Mat3 {
    *RigidTransform::from_yaw(yaw, Vec3::zeros()).rotation()
}

/// A stable axis-aligned orientation: which local axis points up.
fn resting_rotation<R: Rng>(kind: ShapeKind, rng: &mut R) -> Mat3 {
    if kind == ShapeKind::Sphere {
        return Mat3::identity();
    }
    match rng.gen_range(0..3) {
        // local x up: rotate -90 degrees about y
        0 => Mat3::new(0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0),
        // local y up: rotate +90 degrees about x
        1 => Mat3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0),
        _ => Mat3::identity(),
    }
}

/// Signed clearance between a candidate and the pile: the smaller of the pile's distance
/// at the candidate's surface samples and the candidate's distance at the pile's samples.
fn clearance(candidate: &PrimitiveShape, cand_samples: &[Vec3], placed: &[&Placed]) -> f64 {
    let mut c = f64::INFINITY;
    for other in placed {
        for p in cand_samples {
            c = c.min(other.shape.sdf(p));
        }
        for p in &other.samples {
            c = c.min(candidate.sdf(p));
        }
    }
    c
}

#[allow(clippy::too_many_arguments)]
fn drop_shape(
    kind: ShapeKind,
    params: &[f64],
    rot: Mat3,
    x: f64,
    y: f64,
    floor_z: f64,
    placed: &[Placed],
    local_samples: &[Vec3],
    workspace: &Aabb,
) -> Option<PrimitiveShape> {
    let make = |z: f64| {
        let pose = RigidTransform::new(rot, Vec3::new(x, y, z)).ok()?;
        PrimitiveShape::new(kind, params.to_vec(), pose).ok()
    };
    let probe = make(floor_z)?;
    let radius = probe.bounding_radius();
    let below = probe.support(&-Vec3::z());
    let rest_on_floor = floor_z + below;

    // only shapes whose footprint can overlap matter for a vertical drop
    let nearby: Vec<&Placed> = placed
        .iter()
        .filter(|p| {
            let d = p.shape.center() - Vec3::new(x, y, p.shape.center().z);
            d.norm() < p.shape.bounding_radius() + radius
        })
        .collect();

    let at = |z: f64| -> Option<(PrimitiveShape, f64)> {
        let shape = make(z)?;
        let samples: Vec<Vec3> = local_samples.iter().map(|p| shape.pose.transform_point(p)).collect();
        let c = clearance(&shape, &samples, &nearby);
        Some((shape, c))
    };

    let top = nearby
        .iter()
        .map(|p| p.shape.center().z + p.shape.support(&Vec3::z()))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut z = rest_on_floor.max(top + below + 1e-3);
    let (mut shape, mut c) = at(z)?;
    if c < 0.0 {
        return None;
    }
    loop {
        if z <= rest_on_floor {
            break;
        }
        let step = c.max(MIN_DROP_STEP);
        let z_next = (z - step).max(rest_on_floor);
        let (s_next, c_next) = at(z_next)?;
        if c_next < 0.0 {
            // contact between z_next and z
            let (mut lo, mut hi) = (z_next, z);
            for _ in 0..30 {
                let mid = 0.5 * (lo + hi);
                let (s_mid, c_mid) = at(mid)?;
                if c_mid < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                    shape = s_mid;
                    c = c_mid;
                }
            }
            z = hi;
            break;
        }
        z = z_next;
        shape = s_next;
        c = c_next;
    }
    if c <= -PLACEMENT_TOLERANCE || !workspace.contains_sphere(&shape.center(), radius) {
        return None;
    }
    let _ = z;
    Some(shape)
}
