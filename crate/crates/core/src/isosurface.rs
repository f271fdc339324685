//! Marching cubes over the TSDF zero level set.
//!
//! The 256-entry case table is derived at first use rather than transcribed: on every cube
//! face the edge crossings are joined so that each inside corner (or run of inside corners)
//! is cut off, the face segments are chained into closed loops, and each loop is oriented so
//! its normal points from the inside corners toward the outside ones. Neighbouring cubes
//! see identical segments on their shared face, which makes the mesh watertight.

use std::collections::HashMap;
use std::io::Write;
use std::sync::OnceLock;

use rayon::prelude::*;
use thiserror::Error;

use crate::geom::Vec3;
use crate::tsdf::TsdfVolume;

#[derive(Debug, Error)]
pub enum IsosurfaceError {
    #[error("volume has no observed voxels")]
    EmptyVolume,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Triangle mesh with one outward unit normal per vertex.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfaceMesh {
    pub vertices: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

// Corner c sits at offset (c & 1, (c >> 1) & 1, (c >> 2) & 1) from the cube's lower corner.
fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// The 12 cube edges as (lower corner, axis).
const EDGES: [(usize, usize); 12] = [
    (0, 0),
    (2, 0),
    (4, 0),
    (6, 0),
    (0, 1),
    (1, 1),
    (4, 1),
    (5, 1),
    (0, 2),
    (1, 2),
    (2, 2),
    (3, 2),
];

fn edge_corners(e: usize) -> (usize, usize) {
    let (c, axis) = EDGES[e];
    (c, c | (1 << axis))
}

fn edge_between(a: usize, b: usize) -> usize {
    let lo = a.min(b);
    let axis = (a ^ b).trailing_zeros() as usize;
    EDGES.iter().position(|&(c, ax)| c == lo && ax == axis).expect("adjacent corners")
}

/// Faces as cyclic corner sequences.
const FACES: [[usize; 4]; 6] = [
    [0, 2, 6, 4], // x = 0
    [1, 3, 7, 5], // x = 1
    [0, 1, 5, 4], // y = 0
    [2, 3, 7, 6], // y = 1
    [0, 1, 3, 2], // z = 0
    [4, 5, 7, 6], // z = 1
];

type CaseTable = Vec<Vec<[u8; 3]>>;

fn case_table() -> &'static CaseTable {
    static TABLE: OnceLock<CaseTable> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(build_case).collect())
}

fn build_case(case: usize) -> Vec<[u8; 3]> {
    let inside = |c: usize| case & (1 << c) != 0;
    // two face segments meet at every crossed edge
    let mut links: Vec<Vec<usize>> = vec![Vec::new(); 12];
    for face in FACES {
        let ins: Vec<bool> = face.iter().map(|&c| inside(c)).collect();
        let Some(start) = (0..4).find(|&i| !ins[i]) else { continue };
        // walk once around the face starting at an outside corner; each inside run is
        // bracketed by an entry edge and an exit edge
        let mut entry = None;
        for s in 0..4 {
            let i = (start + s) % 4;
            let j = (i + 1) % 4;
            let e = edge_between(face[i], face[j]);
            match (ins[i], ins[j]) {
                (false, true) => entry = Some(e),
                (true, false) => {
                    let a = entry.take().expect("run starts before it ends");
                    links[a].push(e);
                    links[e].push(a);
                }
                _ => {}
            }
        }
    }

    let mut used = [false; 12];
    let mut tris = Vec::new();
    for first in 0..12 {
        if used[first] || links[first].is_empty() {
            continue;
        }
        let mut poly = vec![first];
        used[first] = true;
        let mut prev = first;
        let mut cur = links[first][0];
        while cur != first {
            used[cur] = true;
            poly.push(cur);
            let next = if links[cur][0] == prev { links[cur][1] } else { links[cur][0] };
            prev = cur;
            cur = next;
        }

        let mid = |e: usize| {
            let (a, b) = edge_corners(e);
            let (pa, pb) = (corner_offset(a), corner_offset(b));
            Vec3::new(
                (pa[0] + pb[0]) as f64 * 0.5,
                (pa[1] + pb[1]) as f64 * 0.5,
                (pa[2] + pb[2]) as f64 * 0.5,
            )
        };
        let pts: Vec<Vec3> = poly.iter().map(|&e| mid(e)).collect();
        let mut newell = Vec3::zeros();
        for i in 0..pts.len() {
            newell += pts[i].cross(&pts[(i + 1) % pts.len()]);
        }
        let mut outward = Vec3::zeros();
        for &e in &poly {
            let (a, b) = edge_corners(e);
            let (pa, pb) = (corner_offset(a), corner_offset(b));
            let d = Vec3::new(
                pb[0] as f64 - pa[0] as f64,
                pb[1] as f64 - pa[1] as f64,
                pb[2] as f64 - pa[2] as f64,
            );
            outward += if inside(a) { d } else { -d };
        }
        if newell.dot(&outward) < 0.0 {
            poly.reverse();
        }
        for i in 1..poly.len() - 1 {
            tris.push([poly[0] as u8, poly[i] as u8, poly[i + 1] as u8]);
        }
    }
    tris
}

/// Extracts the zero level set. Cubes with any unobserved corner are skipped; vertices on
/// shared cube edges are merged exactly; normals are the normalized field gradient.
pub fn marching_cubes(vol: &TsdfVolume) -> Result<SurfaceMesh, IsosurfaceError> {
    if vol.observed_count() == 0 {
        return Err(IsosurfaceError::EmptyVolume);
    }
    let table = case_table();
    let [nx, ny, nz] = vol.dims();
    let values = vol.values();
    let weights = vol.weights();
    let idx = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);

    // each slab yields triangles over global edge keys
    let slabs: Vec<Vec<[u64; 3]>> = (0..nz - 1)
        .into_par_iter()
        .map(|k| {
            let mut out = Vec::new();
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let mut case = 0usize;
                    let mut skip = false;
                    for c in 0..8 {
                        let o = corner_offset(c);
                        let n = idx(i + o[0], j + o[1], k + o[2]);
                        if weights[n] <= 0.0 {
                            skip = true;
                            break;
                        }
                        if values[n] < 0.0 {
                            case |= 1 << c;
                        }
                    }
                    if skip || case == 0 || case == 255 {
                        continue;
                    }
                    for tri in &table[case] {
                        out.push(tri.map(|e| {
                            let (c, axis) = EDGES[e as usize];
                            let o = corner_offset(c);
                            idx(i + o[0], j + o[1], k + o[2]) as u64 * 3 + axis as u64
                        }));
                    }
                }
            }
            out
        })
        .collect();

    let mut mesh = SurfaceMesh::default();
    let mut index_of: HashMap<u64, u32> = HashMap::new();
    for slab in slabs {
        for tri in slab {
            let t = tri.map(|key| {
                *index_of.entry(key).or_insert_with(|| {
                    let n0 = (key / 3) as usize;
                    let axis = (key % 3) as usize;
                    let stride = [1, nx, nx * ny][axis];
                    let (v0, v1) = (values[n0], values[n0 + stride]);
                    let t = if v0 != v1 { v0 / (v0 - v1) } else { 0.5 };
                    let mut p = vol.voxel_center(vol.unflatten(n0));
                    p[axis] += t * vol.voxel_size();
                    mesh.vertices.push(p);
                    (mesh.vertices.len() - 1) as u32
                })
            });
            if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
                mesh.triangles.push(t);
            }
        }
    }

    let face_normals = mesh.accumulated_face_normals();
    mesh.normals = mesh
        .vertices
        .par_iter()
        .zip(face_normals.par_iter())
        .map(|(v, fallback)| {
            let g = vol.gradient_clamped(v);
            let n = g.norm();
            if n > 1e-12 {
                g / n
            } else if fallback.norm() > 1e-12 {
                fallback.normalize()
            } else {
                Vec3::z()
            }
        })
        .collect();
    Ok(mesh)
}

impl SurfaceMesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Area-weighted face normal sum at each vertex (not normalized).
    pub fn accumulated_face_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| self.vertices[i as usize]);
            let n = (b - a).cross(&(c - a));
            for &i in t {
                acc[i as usize] += n;
            }
        }
        acc
    }

    /// Undirected edges not shared by exactly two triangles.
    pub fn open_edge_count(&self) -> usize {
        let mut uses: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &self.triangles {
            for s in 0..3 {
                let (a, b) = (t[s], t[(s + 1) % 3]);
                *uses.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        uses.values().filter(|&&n| n != 2).count()
    }

    /// Signed enclosed volume; positive when triangles wind counter-clockwise seen from
    /// outside.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// ASCII Wavefront OBJ with `v`, `vn` and `f v//vn` records.
    pub fn write_obj<W: Write>(&self, mut w: W) -> Result<(), IsosurfaceError> {
        for v in &self.vertices {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for n in &self.normals {
            writeln!(w, "vn {} {} {}", n.x, n.y, n.z)?;
        }
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| i + 1);
            writeln!(w, "f {a}//{a} {b}//{b} {c}//{c}")?;
        }
        Ok(())
    }

    /// Binary little-endian PLY: float position and normal per vertex, uchar/int faces.
    pub fn write_ply<W: Write>(&self, mut w: W) -> Result<(), IsosurfaceError> {
        write!(
            w,
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
             property float x\nproperty float y\nproperty float z\n\
             property float nx\nproperty float ny\nproperty float nz\n\
             element face {}\nproperty list uchar int vertex_indices\nend_header\n",
            self.vertices.len(),
            self.triangles.len()
        )?;
        let mut buf = Vec::with_capacity(self.vertices.len() * 24 + self.triangles.len() * 13);
        for (v, n) in self.vertices.iter().zip(&self.normals) {
            for x in [v.x, v.y, v.z, n.x, n.y, n.z] {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        for t in &self.triangles {
            buf.push(3u8);
            for &i in t {
                buf.extend_from_slice(&(i as i32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }
}
