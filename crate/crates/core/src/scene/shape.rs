//! Analytic primitives: signed distance, normals, ray intervals, support, surface samples.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SceneError;
use crate::geom::{RigidTransform, Vec3};

pub const MIN_DIMENSION: f64 = 0.01;
pub const MAX_DIMENSION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    /// `[radius]`
    Sphere,
    /// `[half_x, half_y, half_z]`
    Box,
    /// `[radius, half_height]`, axis along local z
    Cylinder,
    /// `[semi_x, semi_y, semi_z]`
    Ellipsoid,
    /// `[radius, half_length]`, segment along local z
    Capsule,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [
        ShapeKind::Sphere,
        ShapeKind::Box,
        ShapeKind::Cylinder,
        ShapeKind::Ellipsoid,
        ShapeKind::Capsule,
    ];

    pub fn param_count(self) -> usize {
        match self {
            ShapeKind::Sphere => 1,
            ShapeKind::Cylinder | ShapeKind::Capsule => 2,
            ShapeKind::Box | ShapeKind::Ellipsoid => 3,
        }
    }

    /// Whether the signed distance is exact (the ellipsoid is iterative).
    pub fn exact_sdf(self) -> bool {
        self != ShapeKind::Ellipsoid
    }
}

/// A primitive placed in the scene by its base-to-shape pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveShape {
    pub kind: ShapeKind,
    pub params: Vec<f64>,
    #[serde(flatten)]
    pub pose: RigidTransform,
}

impl PrimitiveShape {
    pub fn new(kind: ShapeKind, params: Vec<f64>, pose: RigidTransform) -> Result<Self, SceneError> {
        let shape = Self { kind, params, pose };
        shape.validate()?;
        Ok(shape)
    }

    pub fn sphere(radius: f64, center: Vec3) -> Result<Self, SceneError> {
        Self::new(ShapeKind::Sphere, vec![radius], RigidTransform::from_translation(center))
    }

    pub fn cuboid(half_extents: Vec3, pose: RigidTransform) -> Result<Self, SceneError> {
        Self::new(ShapeKind::Box, half_extents.as_slice().to_vec(), pose)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.params.len() != self.kind.param_count() {
            return Err(SceneError::InvalidShape(format!(
                "{:?} takes {} parameters, got {}",
                self.kind,
                self.kind.param_count(),
                self.params.len()
            )));
        }
        if let Some(bad) = self
            .params
            .iter()
            .find(|d| !(MIN_DIMENSION..=MAX_DIMENSION).contains(*d))
        {
            return Err(SceneError::InvalidShape(format!(
                "dimension {bad} outside [{MIN_DIMENSION}, {MAX_DIMENSION}] m"
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3 {
        *self.pose.translation()
    }

    /// Signed distance in the shape's own frame.
    pub fn local_sdf(&self, p: &Vec3) -> f64 {
        let k = &self.params;
        match self.kind {
            ShapeKind::Sphere => p.norm() - k[0],
            ShapeKind::Box => {
                let q = p.abs() - Vec3::new(k[0], k[1], k[2]);
                let outside = q.sup(&Vec3::zeros()).norm();
                outside + q.max().min(0.0)
            }
            ShapeKind::Cylinder => {
                let dx = (p.x * p.x + p.y * p.y).sqrt() - k[0];
                let dz = p.z.abs() - k[1];
                let outside = (dx.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt();
                outside + dx.max(dz).min(0.0)
            }
            ShapeKind::Capsule => {
                let z = p.z.clamp(-k[1], k[1]);
                (p - Vec3::new(0.0, 0.0, z)).norm() - k[0]
            }
            ShapeKind::Ellipsoid => ellipsoid_sdf(p, [k[0], k[1], k[2]]),
        }
    }

    pub fn sdf(&self, p: &Vec3) -> f64 {
        self.local_sdf(&self.pose.inverse_transform_point(p))
    }

    /// Outward unit normal from central differences of the signed distance.
    pub fn normal(&self, p: &Vec3) -> Vec3 {
        let local = self.pose.inverse_transform_point(p);
        self.pose.transform_vector(&self.local_normal(&local))
    }

    fn local_normal(&self, p: &Vec3) -> Vec3 {
        const H: f64 = 1e-6;
        let mut g = Vec3::zeros();
        for a in 0..3 {
            let mut e = Vec3::zeros();
            e[a] = H;
            g[a] = self.local_sdf(&(p + e)) - self.local_sdf(&(p - e));
        }
        let n = g.norm();
        if n > 0.0 {
            g / n
        } else {
            Vec3::z()
        }
    }

    pub fn bounding_radius(&self) -> f64 {
        let k = &self.params;
        match self.kind {
            ShapeKind::Sphere => k[0],
            ShapeKind::Box => Vec3::new(k[0], k[1], k[2]).norm(),
            ShapeKind::Cylinder => (k[0] * k[0] + k[1] * k[1]).sqrt(),
            ShapeKind::Ellipsoid => k[0].max(k[1]).max(k[2]),
            ShapeKind::Capsule => k[0] + k[1],
        }
    }

    /// Support function `max_{x in shape} u . (x - center)` for a world direction `u`.
    pub fn support(&self, u: &Vec3) -> f64 {
        let l = self.pose.rotation().transpose() * u;
        let k = &self.params;
        match self.kind {
            ShapeKind::Sphere => k[0] * l.norm(),
            ShapeKind::Box => k[0] * l.x.abs() + k[1] * l.y.abs() + k[2] * l.z.abs(),
            ShapeKind::Cylinder => k[0] * (l.x * l.x + l.y * l.y).sqrt() + k[1] * l.z.abs(),
            ShapeKind::Ellipsoid => ((k[0] * l.x).powi(2) + (k[1] * l.y).powi(2) + (k[2] * l.z).powi(2)).sqrt(),
            ShapeKind::Capsule => k[0] * l.norm() + k[1] * l.z.abs(),
        }
    }

    /// Entry and exit parameters of the ray `o + t d` (`d` unit) through this convex shape.
    pub fn ray_interval(&self, o: &Vec3, d: &Vec3) -> Option<(f64, f64)> {
        let lo = self.pose.inverse_transform_point(o);
        let ld = self.pose.rotation().transpose() * d;
        let k = &self.params;
        match self.kind {
            ShapeKind::Sphere => sphere_interval(&lo, &ld, &Vec3::zeros(), k[0]),
            ShapeKind::Ellipsoid => {
                let s = Vec3::new(1.0 / k[0], 1.0 / k[1], 1.0 / k[2]);
                sphere_interval(&lo.component_mul(&s), &ld.component_mul(&s), &Vec3::zeros(), 1.0)
            }
            ShapeKind::Box => slab_interval(&lo, &ld, &Vec3::new(k[0], k[1], k[2])),
            ShapeKind::Cylinder => cylinder_interval(&lo, &ld, k[0], k[1]),
            ShapeKind::Capsule => {
                let parts = [
                    cylinder_interval(&lo, &ld, k[0], k[1]),
                    sphere_interval(&lo, &ld, &Vec3::new(0.0, 0.0, k[1]), k[0]),
                    sphere_interval(&lo, &ld, &Vec3::new(0.0, 0.0, -k[1]), k[0]),
                ];
                parts.into_iter().flatten().fold(None, |acc, (a, b)| match acc {
                    None => Some((a, b)),
                    Some((x, y)) => Some((x.min(a), y.max(b))),
                })
            }
        }
    }

    /// Points on the surface drawn roughly uniformly by area: uniform samples in a thin
    /// shell around the zero level set, projected onto it along the normal.
    pub fn sample_surface<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Vec3> {
        let r = self.bounding_radius();
        let shell = 0.02 * self.params.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut out = Vec::with_capacity(n);
        let mut tries = 0usize;
        while out.len() < n && tries < 2_000_000 {
            tries += 1;
            let local = Vec3::new(
                rng.gen_range(-r - shell..r + shell),
                rng.gen_range(-r - shell..r + shell),
                rng.gen_range(-r - shell..r + shell),
            );
            let d = self.local_sdf(&local);
            if d.abs() >= shell {
                continue;
            }
            let mut q = local;
            for _ in 0..3 {
                let d = self.local_sdf(&q);
                q -= self.local_normal(&q) * d;
            }
            out.push(self.pose.transform_point(&q));
        }
        out
    }
}

fn sphere_interval(o: &Vec3, d: &Vec3, c: &Vec3, r: f64) -> Option<(f64, f64)> {
    let oc = o - c;
    let a = d.norm_squared();
    let b = oc.dot(d);
    let cc = oc.norm_squared() - r * r;
    let disc = b * b - a * cc;
    if disc < 0.0 || a == 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some(((-b - s) / a, (-b + s) / a))
}

fn slab_interval(o: &Vec3, d: &Vec3, h: &Vec3) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a].abs() > h[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[a];
        let (mut ta, mut tb) = ((-h[a] - o[a]) * inv, (h[a] - o[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 <= t1).then_some((t0, t1))
}

fn cylinder_interval(o: &Vec3, d: &Vec3, r: f64, h: f64) -> Option<(f64, f64)> {
    let a = d.x * d.x + d.y * d.y;
    let (mut t0, mut t1) = if a < 1e-15 {
        if o.x * o.x + o.y * o.y > r * r {
            return None;
        }
        (f64::NEG_INFINITY, f64::INFINITY)
    } else {
        let b = o.x * d.x + o.y * d.y;
        let c = o.x * o.x + o.y * o.y - r * r;
        let disc = b * b - a * c;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        ((-b - s) / a, (-b + s) / a)
    };
    if d.z.abs() < 1e-15 {
        if o.z.abs() > h {
            return None;
        }
    } else {
        let (mut za, mut zb) = ((-h - o.z) / d.z, (h - o.z) / d.z);
        if za > zb {
            std::mem::swap(&mut za, &mut zb);
        }
        t0 = t0.max(za);
        t1 = t1.min(zb);
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Signed distance to an axis-aligned ellipsoid.
///
/// Finds the root of `F(t) = sum (e_i y_i / (t + e_i^2))^2 - 1` with at most 20 iterations
/// of Newton steps from the left end of the bracket (F is convex and decreasing, so these
/// never overshoot) interleaved with geometric bisection in `t + e_min^2`.
pub fn ellipsoid_sdf(p: &Vec3, e: [f64; 3]) -> f64 {
    const EPS: f64 = 1e-12;
    let y = [p.x.abs().max(EPS), p.y.abs().max(EPS), p.z.abs().max(EPS)];
    let e2 = [e[0] * e[0], e[1] * e[1], e[2] * e[2]];
    let inside = (0..3).map(|i| (y[i] / e[i]).powi(2)).sum::<f64>() < 1.0;
    let f = |t: f64| -> (f64, f64) {
        let mut v = -1.0;
        let mut dv = 0.0;
        for i in 0..3 {
            let q = e[i] * y[i] / (t + e2[i]);
            v += q * q;
            dv += -2.0 * q * q / (t + e2[i]);
        }
        (v, dv)
    };
    let (imin, _) = e2
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let pole = -e2[imin];
    // F(lo) >= 0 and F(hi) <= 0
    let mut lo = pole + e[imin] * y[imin];
    let mut hi = pole + (0..3).map(|i| (e[i] * y[i]).powi(2)).sum::<f64>().sqrt();
    if hi < lo {
        std::mem::swap(&mut lo, &mut hi);
    }
    for _ in 0..20 {
        let (v, dv) = f(lo);
        if v <= 0.0 {
            break;
        }
        let t_newton = lo - v / dv;
        if t_newton > lo && t_newton <= hi {
            let (vn, _) = f(t_newton);
            if vn >= 0.0 {
                lo = t_newton;
            } else {
                hi = t_newton;
            }
        }
        let (s_lo, s_hi) = (lo - pole, hi - pole);
        if s_hi > 2.0 * s_lo {
            let mid = pole + (s_lo * s_hi).sqrt();
            if f(mid).0 >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if hi - lo <= 1e-15 * (1.0 + hi.abs()) {
            break;
        }
    }
    let t = lo;
    let mut dist2 = 0.0;
    for i in 0..3 {
        let x = e2[i] * y[i] / (t + e2[i]);
        dist2 += (x - y[i]).powi(2);
    }
    let d = dist2.sqrt();
    if inside {
        -d
    } else {
        d
    }
}
