//! Truncated signed distance volume: weighted depth fusion, trilinear sampling,
//! gradients, and zero-crossing ray marching.
//!
//! Voxel `(i, j, k)` has its center at `origin + (i + 0.5, j + 0.5, k + 0.5) * voxel_size`.
//! Storage is x-fastest. Voxels with zero weight have never been observed and read as
//! `+truncation`.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{CameraIntrinsics, RigidTransform, Vec3};

#[derive(Debug, Error)]
pub enum TsdfError {
    #[error("depth image is {got:?} but intrinsics expect {expected:?}")]
    DimensionMismatch { got: (u32, u32), expected: (u32, u32) },
    #[error("point {0:?} is outside the sampling domain")]
    OutOfBounds([f64; 3]),
    #[error("invalid volume geometry: {0}")]
    InvalidGeometry(String),
    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Geometry and fusion parameters of a volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VolumeConfig {
    pub origin: [f64; 3],
    /// Edge length of the cubic volume (m).
    pub size: f64,
    pub resolution: u32,
    pub truncation_voxels: f64,
    pub max_weight: f64,
}

impl Default for VolumeConfig {
    fn default() -> Self {
        Self {
            origin: [-0.15, -0.15, -0.06],
            size: 0.3,
            resolution: 64,
            truncation_voxels: 4.0,
            max_weight: 64.0,
        }
    }
}

impl VolumeConfig {
    pub fn voxel_size(&self) -> f64 {
        self.size / self.resolution as f64
    }

    pub fn build(&self) -> Result<TsdfVolume, TsdfError> {
        let vs = self.voxel_size();
        let n = self.resolution as usize;
        let mut vol = TsdfVolume::new(
            Vec3::from(self.origin),
            vs,
            [n, n, n],
            self.truncation_voxels * vs,
        )?;
        vol.max_weight = self.max_weight;
        Ok(vol)
    }
}

/// Polarity of a zero crossing along a ray.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingSign {
    PosToNeg,
    NegToPos,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub point: Vec3,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    origin: Vec3,
    voxel_size: f64,
    dims: [usize; 3],
    truncation: f64,
    max_weight: f64,
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl TsdfVolume {
    pub const DEFAULT_MAX_WEIGHT: f64 = 64.0;

    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3], truncation: f64) -> Result<Self, TsdfError> {
        if !(voxel_size > 0.0) || dims.iter().any(|&d| d < 2) {
            return Err(TsdfError::InvalidGeometry(
                "voxel size must be positive and every dimension at least 2".into(),
            ));
        }
        if truncation < 2.0 * voxel_size {
            return Err(TsdfError::InvalidGeometry(format!(
                "truncation {truncation} must be at least twice the voxel size {voxel_size}"
            )));
        }
        let n = dims[0] * dims[1] * dims[2];
        Ok(Self {
            origin,
            voxel_size,
            dims,
            truncation,
            max_weight: Self::DEFAULT_MAX_WEIGHT,
            values: vec![truncation; n],
            weights: vec![0.0; n],
        })
    }

    /// Fills every voxel from `f(center)`, clamped to the truncation band, with weight 1.
    pub fn from_fn(
        origin: Vec3,
        voxel_size: f64,
        dims: [usize; 3],
        truncation: f64,
        f: impl Fn(&Vec3) -> f64,
    ) -> Result<Self, TsdfError> {
        let mut vol = Self::new(origin, voxel_size, dims, truncation)?;
        for idx in 0..vol.values.len() {
            let c = vol.voxel_center(vol.unflatten(idx));
            vol.values[idx] = f(&c).clamp(-truncation, truncation);
            vol.weights[idx] = 1.0;
        }
        Ok(vol)
    }

    pub fn origin(&self) -> &Vec3 {
        &self.origin
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn max_weight(&self) -> f64 {
        self.max_weight
    }

    pub fn set_max_weight(&mut self, w: f64) {
        self.max_weight = w;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Upper corner of the volume.
    pub fn max_corner(&self) -> Vec3 {
        self.origin
            + Vec3::new(
                self.dims[0] as f64,
                self.dims[1] as f64,
                self.dims[2] as f64,
            ) * self.voxel_size
    }

    pub fn center(&self) -> Vec3 {
        (self.origin + self.max_corner()) * 0.5
    }

    #[inline]
    pub fn flatten(&self, [i, j, k]: [usize; 3]) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn unflatten(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    #[inline]
    pub fn voxel_center(&self, [i, j, k]: [usize; 3]) -> Vec3 {
        self.origin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.voxel_size
    }

    /// Stored value, or `+truncation` for unobserved voxels.
    #[inline]
    pub fn value(&self, ijk: [usize; 3]) -> f64 {
        let idx = self.flatten(ijk);
        if self.weights[idx] > 0.0 {
            self.values[idx]
        } else {
            self.truncation
        }
    }

    #[inline]
    pub fn weight(&self, ijk: [usize; 3]) -> f64 {
        self.weights[self.flatten(ijk)]
    }

    #[inline]
    pub fn is_observed(&self, ijk: [usize; 3]) -> bool {
        self.weight(ijk) > 0.0
    }

    pub fn observed_count(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }

    /// Overwrites a voxel directly. Used by fixtures and loaders.
    pub fn set_voxel(&mut self, ijk: [usize; 3], value: f64, weight: f64) {
        let idx = self.flatten(ijk);
        self.values[idx] = value.clamp(-self.truncation, self.truncation);
        self.weights[idx] = weight.max(0.0);
    }

    /// Weighted running-average fusion of one depth frame.
    pub fn integrate_depth(
        &mut self,
        depth: &DepthImage,
        intr: &CameraIntrinsics,
        cam_pose: &RigidTransform,
    ) -> Result<(), TsdfError> {
        if depth.width != intr.width || depth.height != intr.height {
            return Err(TsdfError::DimensionMismatch {
                got: (depth.width, depth.height),
                expected: (intr.width, intr.height),
            });
        }
        let world_to_cam = cam_pose.inverse();
        let rot = *world_to_cam.rotation();
        let trans = *world_to_cam.translation();
        let (dx, dy) = (self.dims[0], self.dims[1]);
        let slab = dx * dy;
        let (origin, vs, trunc, w_max) = (self.origin, self.voxel_size, self.truncation, self.max_weight);
        let (w, h) = (intr.width as i64, intr.height as i64);

        self.values
            .par_chunks_mut(slab)
            .zip(self.weights.par_chunks_mut(slab))
            .enumerate()
            .for_each(|(k, (vals, wts))| {
                let z = origin.z + (k as f64 + 0.5) * vs;
                for j in 0..dy {
                    let y = origin.y + (j as f64 + 0.5) * vs;
                    for i in 0..dx {
                        let x = origin.x + (i as f64 + 0.5) * vs;
                        let pc = rot * Vec3::new(x, y, z) + trans;
                        if pc.z <= 1e-6 {
                            continue;
                        }
                        let u = intr.fx * pc.x / pc.z + intr.cx;
                        let v = intr.fy * pc.y / pc.z + intr.cy;
                        let col = (u + 0.5).floor() as i64;
                        let row = (v + 0.5).floor() as i64;
                        if col < 0 || row < 0 || col >= w || row >= h {
                            continue;
                        }
                        let d = depth.data[(row * w + col) as usize] as f64;
                        if !(d > 0.0) || !d.is_finite() {
                            continue;
                        }
                        let sdf = d - pc.z;
                        if sdf < -trunc {
                            continue;
                        }
                        let obs = sdf.min(trunc);
                        let idx = i + j * dx;
                        let wt = wts[idx];
                        vals[idx] = (wt * vals[idx] + obs) / (wt + 1.0);
                        wts[idx] = (wt + 1.0).min(w_max);
                    }
                }
            });
        Ok(())
    }

    /// Continuous voxel coordinates of `p`, where voxel centers are integers.
    #[inline]
    fn grid_coords(&self, p: &Vec3) -> Vec3 {
        (p - self.origin) / self.voxel_size - Vec3::new(0.5, 0.5, 0.5)
    }

    /// Base corner and fractional offsets of the trilinear stencil, if inside the domain.
    #[inline]
    fn stencil(&self, p: &Vec3) -> Option<([usize; 3], [f64; 3])> {
        let g = self.grid_coords(p);
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let c = g[a];
            let hi = (self.dims[a] - 1) as f64;
            // small slack absorbs rounding at the domain faces
            if !(c >= -1e-9 && c <= hi + 1e-9) {
                return None;
            }
            let c = c.clamp(0.0, hi);
            let b = (c.floor() as usize).min(self.dims[a] - 2);
            base[a] = b;
            frac[a] = c - b as f64;
        }
        Some((base, frac))
    }

    #[inline]
    fn interpolate(&self, base: [usize; 3], f: [f64; 3], observed_only: bool) -> Option<f64> {
        let [i, j, k] = base;
        let mut acc = 0.0;
        for dz in 0..2 {
            let wz = if dz == 0 { 1.0 - f[2] } else { f[2] };
            for dy in 0..2 {
                let wy = if dy == 0 { 1.0 - f[1] } else { f[1] };
                for dx in 0..2 {
                    let wx = if dx == 0 { 1.0 - f[0] } else { f[0] };
                    let idx = self.flatten([i + dx, j + dy, k + dz]);
                    let v = if self.weights[idx] > 0.0 {
                        self.values[idx]
                    } else if observed_only {
                        return None;
                    } else {
                        self.truncation
                    };
                    acc += wx * wy * wz * v;
                }
            }
        }
        Some(acc)
    }

    /// Whether `p` lies in the trilinear sampling domain.
    pub fn contains(&self, p: &Vec3) -> bool {
        self.stencil(p).is_some()
    }

    /// Trilinear interpolation of the eight surrounding voxel values.
    pub fn sample_trilinear(&self, p: &Vec3) -> Result<f64, TsdfError> {
        let (base, f) = self.stencil(p).ok_or(TsdfError::OutOfBounds([p.x, p.y, p.z]))?;
        Ok(self.interpolate(base, f, false).unwrap_or(self.truncation))
    }

    /// Like [`sample_trilinear`](Self::sample_trilinear), but `None` when any of the
    /// eight stencil voxels is unobserved or `p` is outside the domain.
    pub fn sample_observed(&self, p: &Vec3) -> Option<f64> {
        let (base, f) = self.stencil(p)?;
        self.interpolate(base, f, true)
    }

    /// True when every voxel in the trilinear stencil of `p` is observed.
    pub fn stencil_observed(&self, p: &Vec3) -> bool {
        self.sample_observed(p).is_some()
    }

    /// Central differences of the trilinear field with step `voxel_size`. Not normalized.
    pub fn gradient(&self, p: &Vec3) -> Result<Vec3, TsdfError> {
        let h = self.voxel_size;
        let mut g = Vec3::zeros();
        for a in 0..3 {
            let mut e = Vec3::zeros();
            e[a] = h;
            let fp = self.sample_trilinear(&(p + e))?;
            let fm = self.sample_trilinear(&(p - e))?;
            g[a] = (fp - fm) / (2.0 * h);
        }
        Ok(g)
    }

    /// Gradient with the difference stencil clamped into the sampling domain, for points
    /// closer than one voxel to the boundary.
    pub fn gradient_clamped(&self, p: &Vec3) -> Vec3 {
        let lo = self.origin + Vec3::repeat(0.5 * self.voxel_size);
        let hi = self.max_corner() - Vec3::repeat(0.5 * self.voxel_size);
        let clamp = |q: Vec3| Vec3::new(q.x.clamp(lo.x, hi.x), q.y.clamp(lo.y, hi.y), q.z.clamp(lo.z, hi.z));
        let h = self.voxel_size;
        let mut g = Vec3::zeros();
        for a in 0..3 {
            let mut e = Vec3::zeros();
            e[a] = h;
            let qp = clamp(p + e);
            let qm = clamp(p - e);
            let span = qp[a] - qm[a];
            if span > 1e-12 {
                let fp = self.sample_trilinear(&qp).unwrap_or(self.truncation);
                let fm = self.sample_trilinear(&qm).unwrap_or(self.truncation);
                g[a] = (fp - fm) / span;
            }
        }
        g
    }

    /// Marches from `origin` along `dir` in half-voxel steps and returns the first zero
    /// crossing of the requested polarity, refined by linear interpolation.
    pub fn raycast_zero_crossing(
        &self,
        origin: &Vec3,
        dir: &Vec3,
        max_dist: f64,
        sign: CrossingSign,
    ) -> Option<RayHit> {
        let step = 0.5 * self.voxel_size;
        let mut prev_t = 0.0;
        let mut prev = self.sample_trilinear(origin).ok()?;
        let n = (max_dist / step).ceil() as usize;
        for s in 1..=n {
            let t = (s as f64 * step).min(max_dist);
            let cur = self.sample_trilinear(&(origin + dir * t)).ok()?;
            if let Some(hit) = refine_crossing(origin, dir, prev_t, prev, t, cur, sign) {
                return Some(hit);
            }
            prev_t = t;
            prev = cur;
        }
        None
    }

    /// Zero-crossing search that only trusts fully observed samples.
    ///
    /// Unobserved stretches are stepped over; a crossing is accepted only between two
    /// consecutive observed samples. Returns `None` when the ray leaves the volume, a sign
    /// change spans an unobserved stretch, or nothing is found within `max_dist`.
    pub fn raycast_observed_crossing(
        &self,
        origin: &Vec3,
        dir: &Vec3,
        max_dist: f64,
        sign: CrossingSign,
    ) -> Option<RayHit> {
        let step = 0.5 * self.voxel_size;
        let n = (max_dist / step).ceil() as usize;
        let mut last: Option<(usize, f64, f64)> = None;
        for s in 0..=n {
            let t = (s as f64 * step).min(max_dist);
            let p = origin + dir * t;
            let (base, f) = self.stencil(&p)?;
            let Some(cur) = self.interpolate(base, f, true) else {
                continue;
            };
            if let Some((ls, lt, lv)) = last {
                let changed = match sign {
                    CrossingSign::PosToNeg => lv > 0.0 && cur <= 0.0,
                    CrossingSign::NegToPos => lv < 0.0 && cur >= 0.0,
                };
                if changed {
                    if ls + 1 != s {
                        return None;
                    }
                    return refine_crossing(origin, dir, lt, lv, t, cur, sign);
                }
            }
            last = Some((s, t, cur));
        }
        None
    }
}

#[inline]
fn refine_crossing(
    origin: &Vec3,
    dir: &Vec3,
    t0: f64,
    v0: f64,
    t1: f64,
    v1: f64,
    sign: CrossingSign,
) -> Option<RayHit> {
    let changed = match sign {
        CrossingSign::PosToNeg => v0 > 0.0 && v1 <= 0.0,
        CrossingSign::NegToPos => v0 < 0.0 && v1 >= 0.0,
    };
    if !changed {
        return None;
    }
    let denom = v0 - v1;
    let t = if denom.abs() > 0.0 { t0 + (t1 - t0) * v0 / denom } else { t1 };
    Some(RayHit {
        point: origin + dir * t,
        t,
    })
}

/// Row-major depth map in meters; 0 marks pixels without a return.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn filled(width: u32, height: u32, depth: f32) -> Self {
        Self {
            width,
            height,
            data: vec![depth; width as usize * height as usize],
        }
    }

    pub fn get(&self, col: u32, row: u32) -> f32 {
        self.data[row as usize * self.width as usize + col as usize]
    }

    pub fn set(&mut self, col: u32, row: u32, d: f32) {
        self.data[row as usize * self.width as usize + col as usize] = d;
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&d| d > 0.0).count()
    }

    /// Writes a single-channel little-endian PFM. Rows are stored bottom-to-top.
    pub fn write_pfm<W: Write>(&self, mut w: W) -> Result<(), TsdfError> {
        write!(w, "Pf\n{} {}\n-1.0\n", self.width, self.height)?;
        let wu = self.width as usize;
        for row in (0..self.height as usize).rev() {
            for &d in &self.data[row * wu..(row + 1) * wu] {
                w.write_all(&d.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_pfm<R: Read>(mut r: R) -> Result<Self, TsdfError> {
        let bad = |reason: &str| TsdfError::Format {
            format: "PFM",
            reason: reason.to_string(),
        };
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        if fields[0] != "Pf" {
            return Err(bad("only single-channel 'Pf' maps are supported"));
        }
        let width: u32 = fields[1].parse().map_err(|_| bad("bad width"))?;
        let height: u32 = fields[2].parse().map_err(|_| bad("bad height"))?;
        let scale: f64 = fields[3].parse().map_err(|_| bad("bad scale"))?;
        let little = scale < 0.0;
        let n = width as usize * height as usize;
        if bytes.len() < pos + 4 * n {
            return Err(bad("truncated raster"));
        }
        let mut data = vec![0.0f32; n];
        let wu = width as usize;
        for (i, chunk) in bytes[pos..pos + 4 * n].chunks_exact(4).enumerate() {
            let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
            let file_row = i / wu;
            let col = i % wu;
            let row = height as usize - 1 - file_row;
            data[row * wu + col] = v;
        }
        Ok(Self { width, height, data })
    }
}

const TSDF1_MAGIC: &[u8; 8] = b"TSDF1\0\0\0";
const TSDF1_VERSION: u32 = 1;

impl TsdfVolume {
    /// Serializes to the TSDF1 binary layout (values and weights as f32).
    pub fn write_tsdf1<W: Write>(&self, mut w: W) -> Result<(), TsdfError> {
        let mut buf = Vec::with_capacity(72 + 8 * self.values.len());
        buf.extend_from_slice(TSDF1_MAGIC);
        buf.extend_from_slice(&TSDF1_VERSION.to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        for a in 0..3 {
            buf.extend_from_slice(&self.origin[a].to_le_bytes());
        }
        buf.extend_from_slice(&self.voxel_size.to_le_bytes());
        for d in self.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        buf.extend_from_slice(&self.truncation.to_le_bytes());
        for &v in &self.values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for &wt in &self.weights {
            buf.extend_from_slice(&(wt as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_tsdf1<R: Read>(mut r: R) -> Result<Self, TsdfError> {
        let bad = |reason: String| TsdfError::Format {
            format: "TSDF1",
            reason,
        };
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 68 || &bytes[..8] != TSDF1_MAGIC {
            return Err(bad("missing magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(8);
        if version != TSDF1_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let origin = Vec3::new(f64_at(16), f64_at(24), f64_at(32));
        let voxel_size = f64_at(40);
        let dims = [u32_at(48) as usize, u32_at(52) as usize, u32_at(56) as usize];
        let truncation = f64_at(60);
        let n = dims[0] * dims[1] * dims[2];
        let body = 68;
        if bytes.len() != body + 8 * n {
            return Err(bad(format!(
                "expected {} bytes of voxel data, found {}",
                8 * n,
                bytes.len().saturating_sub(body)
            )));
        }
        let mut vol = Self::new(origin, voxel_size, dims, truncation)?;
        let read_f32 = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
        for i in 0..n {
            vol.values[i] = read_f32(body + 4 * i);
            vol.weights[i] = read_f32(body + 4 * (n + i));
        }
        Ok(vol)
    }
}
