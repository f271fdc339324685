//! Antipodal contact pairs matched through the signed distance field.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec3;
use crate::isosurface::SurfaceMesh;
use crate::tsdf::{CrossingSign, TsdfVolume};

#[derive(Debug, Error)]
pub enum ContactError {
    #[error("input vector is not unit length (norm {0})")]
    NonUnitInput(f64),
    #[error("invalid antipodal parameters: {0}")]
    InvalidParams(String),
    #[error("contact I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("contact JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// A surface point `p`, the opposite contact `p_prime` reached through the object, and the
/// quantities a parallel-jaw grasp needs. Nalgebra vectors serialize as `[x, y, z]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactPair {
    pub p: Vec3,
    #[serde(rename = "pp")]
    pub p_prime: Vec3,
    pub g: Vec3,
    #[serde(rename = "np")]
    pub n_p: Vec3,
    #[serde(rename = "npp")]
    pub n_pprime: Vec3,
    pub width: f64,
    pub score: f64,
    #[serde(default)]
    pub sdf_p: f64,
    #[serde(default, rename = "sdf_pp")]
    pub sdf_pprime: f64,
}

impl ContactPair {
    /// Builds a pair from its two contacts and outward normals, deriving `g`, width and
    /// score. Normals must already be unit length.
    pub fn from_contacts(p: Vec3, p_prime: Vec3, n_p: Vec3, n_pprime: Vec3) -> Option<Self> {
        let d = p_prime - p;
        let width = d.norm();
        if width <= 0.0 {
            return None;
        }
        let g = d / width;
        Some(Self {
            p,
            p_prime,
            g,
            n_p,
            n_pprime,
            width,
            score: score_unchecked(&n_p, &n_pprime, &g),
            sdf_p: 0.0,
            sdf_pprime: 0.0,
        })
    }

    pub fn midpoint(&self) -> Vec3 {
        (self.p + self.p_prime) * 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AntipodalParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub max_width: f64,
    pub min_width: f64,
}

impl Default for AntipodalParams {
    fn default() -> Self {
        Self {
            alpha1: 18f64.to_radians(),
            alpha2: 18f64.to_radians(),
            max_width: 0.08,
            min_width: 0.004,
        }
    }
}

impl AntipodalParams {
    pub fn validate(&self) -> Result<(), ContactError> {
        let half_pi = std::f64::consts::FRAC_PI_2;
        if !(self.alpha1 > 0.0 && self.alpha1 < half_pi && self.alpha2 > 0.0 && self.alpha2 < half_pi) {
            return Err(ContactError::InvalidParams("angles must lie in (0, pi/2)".into()));
        }
        if !(self.min_width >= 0.0 && self.min_width < self.max_width) {
            return Err(ContactError::InvalidParams("need 0 <= min_width < max_width".into()));
        }
        Ok(())
    }

    pub fn threshold(&self) -> f64 {
        self.alpha1.cos() * self.alpha2.cos()
    }
}

/// `clamp(-g.n_p, 0, 1) * clamp(g.n_p', 0, 1)` for outward normals and `g` pointing p -> p'.
pub fn antipodal_score(n_p: &Vec3, n_pprime: &Vec3, g: &Vec3) -> Result<f64, ContactError> {
    for v in [n_p, n_pprime, g] {
        let n = v.norm();
        if (n - 1.0).abs() > 1e-6 {
            return Err(ContactError::NonUnitInput(n));
        }
    }
    Ok(score_unchecked(n_p, n_pprime, g))
}

fn score_unchecked(n_p: &Vec3, n_pprime: &Vec3, g: &Vec3) -> f64 {
    (-g.dot(n_p)).clamp(0.0, 1.0) * g.dot(n_pprime).clamp(0.0, 1.0)
}

/// Inclusive threshold test against `cos(alpha1) * cos(alpha2)`.
pub fn is_antipodal(pair: &ContactPair, params: &AntipodalParams) -> bool {
    pair.score >= params.threshold()
}

/// Fraction of a voxel the launch point is pushed inside the surface before marching.
pub const LAUNCH_OFFSET_VOXELS: f64 = 1.5;
/// Observed mid-segment samples above this many voxels mean the segment left the object.
pub const FREE_SPACE_VOXELS: f64 = 0.5;
const ON_SURFACE_VOXELS: f64 = 0.25;

/// Matches every mesh vertex with the point where the inward ray along its normal leaves
/// the object again. Output follows mesh vertex order.
///
/// Only fully observed field samples are trusted: the hidden core of an object reads as
/// unobserved and is stepped over, and the free-space check ignores unobserved samples.
pub fn sample_contact_pairs(vol: &TsdfVolume, mesh: &SurfaceMesh, params: &AntipodalParams) -> Vec<ContactPair> {
    (0..mesh.vertices.len())
        .into_par_iter()
        .filter_map(|i| match_vertex(vol, &mesh.vertices[i], &mesh.normals[i], params))
        .collect()
}

/// Contact search for a single surface point with outward normal `n`.
pub fn match_vertex(vol: &TsdfVolume, p: &Vec3, n: &Vec3, params: &AntipodalParams) -> Option<ContactPair> {
    let vs = vol.voxel_size();
    let dir = -n;
    let start = p + dir * (LAUNCH_OFFSET_VOXELS * vs);
    // the launch point must be inside the object
    if !(vol.sample_observed(&start)? < 0.0) {
        return None;
    }
    let hit = vol.raycast_observed_crossing(&start, &dir, params.max_width, CrossingSign::NegToPos)?;
    let p_prime = hit.point;
    let width = (p_prime - p).norm();
    if width < params.min_width || width > params.max_width {
        return None;
    }
    let sdf_p = vol.sample_trilinear(p).ok()?;
    let sdf_pprime = vol.sample_trilinear(&p_prime).ok()?;
    let band = ON_SURFACE_VOXELS * vs;
    if sdf_p.abs() > band || sdf_pprime.abs() > band {
        return None;
    }
    if leaves_object(vol, p, &p_prime) {
        return None;
    }
    let grad = vol.gradient(&p_prime).ok()?;
    let gn = grad.norm();
    if gn < 1e-12 {
        return None;
    }
    let mut pair = ContactPair::from_contacts(*p, p_prime, *n, grad / gn)?;
    pair.sdf_p = sdf_p;
    pair.sdf_pprime = sdf_pprime;
    Some(pair)
}

/// True when an observed sample at 25, 50 or 75 % of the segment lies clearly in free space.
pub fn leaves_object(vol: &TsdfVolume, p: &Vec3, p_prime: &Vec3) -> bool {
    let limit = FREE_SPACE_VOXELS * vol.voxel_size();
    [0.25, 0.5, 0.75].iter().any(|&f| {
        let q = p + (p_prime - p) * f;
        vol.sample_observed(&q).is_some_and(|v| v > limit)
    })
}

pub fn write_pairs_jsonl<W: Write>(pairs: &[ContactPair], mut w: W) -> Result<(), ContactError> {
    for pair in pairs {
        serde_json::to_writer(&mut w, pair)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_pairs_jsonl<R: BufRead>(r: R) -> Result<Vec<ContactPair>, ContactError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
