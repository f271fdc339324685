//! Python bindings: scenes, fused volumes, planning, oracle grading and batch evaluation.

use std::fmt::Display;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use cpgrasp::dataset::{generate_scene_dataset, DatasetParams};
use cpgrasp::geom::{GraspPose, Vec3};
use cpgrasp::harness::{eval_batch, fuse_scene, oracle_pose_metrics, PipelineConfig};
use cpgrasp::isosurface::marching_cubes;
use cpgrasp::planner::{plan, AnalyticScorer, Candidate, PlannerParams};
use cpgrasp::scene::{generate_scene, SceneSpec, ShapeCatalog};
use cpgrasp::tsdf::TsdfVolume;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn config(json: Option<&str>) -> PyResult<PipelineConfig> {
    json.map_or(Ok(PipelineConfig::default()), |s| PipelineConfig::from_json(s).map_err(value_err))
}

/// A tabletop scene of analytic primitives.
#[pyclass(frozen)]
pub struct Scene {
    inner: SceneSpec,
}

#[pymethods]
impl Scene {
    /// Seeded random clutter of `n_objects` primitives dropped onto the floor.
    #[staticmethod]
    fn generate(seed: u64, n_objects: usize) -> PyResult<Self> {
        let g = generate_scene(seed, n_objects, &ShapeCatalog::primitives()).map_err(value_err)?;
        Ok(Self { inner: g.scene })
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(Self {
            inner: SceneSpec::from_json(s).map_err(value_err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// Signed distance to the nearest surface, floor included.
    fn sdf(&self, p: [f64; 3]) -> f64 {
        self.inner.sdf(&Vec3::from(p))
    }

    fn __len__(&self) -> usize {
        self.inner.shapes.len()
    }
}

type MeshArrays = (Vec<[f64; 3]>, Vec<[f64; 3]>, Vec<[u32; 3]>);

/// A truncated signed distance volume.
#[pyclass(frozen)]
pub struct Volume {
    inner: TsdfVolume,
}

#[pymethods]
impl Volume {
    /// Renders `views` depth maps of the scene (default from the config) and fuses them.
    #[staticmethod]
    #[pyo3(signature = (scene, views=None, config_json=None))]
    fn fuse(py: Python<'_>, scene: &Scene, views: Option<usize>, config_json: Option<&str>) -> PyResult<Self> {
        let mut cfg = config(config_json)?;
        if let Some(v) = views {
            cfg.views = v;
        }
        let inner = py
            .detach(|| fuse_scene(&scene.inner, &cfg, &cfg.viewpoints(&scene.inner)))
            .map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let f = File::open(&path).map_err(io_err)?;
        Ok(Self {
            inner: TsdfVolume::read_tsdf1(BufReader::new(f)).map_err(io_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let f = File::create(&path).map_err(io_err)?;
        self.inner.write_tsdf1(BufWriter::new(f)).map_err(io_err)
    }

    #[getter]
    fn voxel_size(&self) -> f64 {
        self.inner.voxel_size()
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.inner.dims()
    }

    fn observed_count(&self) -> usize {
        self.inner.observed_count()
    }

    /// Trilinear field value at `p`; unobserved voxels read as +truncation.
    fn sample(&self, p: [f64; 3]) -> PyResult<f64> {
        self.inner.sample_trilinear(&Vec3::from(p)).map_err(value_err)
    }

    /// Zero isosurface as (vertices, normals, triangles).
    fn mesh(&self, py: Python<'_>) -> PyResult<MeshArrays> {
        let m = py.detach(|| marching_cubes(&self.inner)).map_err(value_err)?;
        let arr = |v: &[Vec3]| v.iter().map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>();
        Ok((arr(&m.vertices), arr(&m.normals), m.triangles))
    }
}

/// A ranked parallel-jaw grasp.
#[pyclass(frozen)]
pub struct Grasp {
    pose: GraspPose,
    #[pyo3(get)]
    score: f64,
    #[pyo3(get)]
    pair_index: usize,
}

impl From<Candidate> for Grasp {
    fn from(c: Candidate) -> Self {
        Self {
            pose: c.pose,
            score: c.score,
            pair_index: c.pair_index,
        }
    }
}

#[pymethods]
impl Grasp {
    /// Gripper-to-world transform as a row-major 4x4 nested list.
    #[getter]
    fn transform(&self) -> [[f64; 4]; 4] {
        self.pose.transform.to_rows()
    }

    #[getter]
    fn width(&self) -> f64 {
        self.pose.width
    }

    #[getter]
    fn center(&self) -> [f64; 3] {
        self.pose.center().into()
    }

    #[getter]
    fn grasp_axis(&self) -> [f64; 3] {
        self.pose.grasp_axis().into()
    }

    #[getter]
    fn approach(&self) -> [f64; 3] {
        self.pose.approach().into()
    }

    fn __repr__(&self) -> String {
        let c = self.pose.center();
        format!(
            "Grasp(score={:.4}, width={:.4}, center=({:.4}, {:.4}, {:.4}))",
            self.score, self.pose.width, c.x, c.y, c.z
        )
    }
}

/// Plans ranked grasps on a volume with the analytic antipodal scorer.
#[pyfunction]
#[pyo3(name = "plan", signature = (volume, params_json=None, config_json=None))]
fn plan_py(py: Python<'_>, volume: &Volume, params_json: Option<&str>, config_json: Option<&str>) -> PyResult<Vec<Grasp>> {
    let cfg = config(config_json)?;
    let params: PlannerParams = match params_json {
        Some(s) => serde_json::from_str(s).map_err(value_err)?,
        None => cfg.planner,
    };
    let gripper = cfg.gripper_model().map_err(value_err)?;
    let result = py
        .detach(|| plan(&volume.inner, &gripper, &AnalyticScorer, &params))
        .map_err(value_err)?;
    Ok(result.grasps.into_iter().map(Grasp::from).collect())
}

/// Ground-truth (antipodal score, collision free) of a grasp in a scene.
#[pyfunction]
#[pyo3(signature = (scene, grasp, config_json=None))]
fn grade(scene: &Scene, grasp: &Grasp, config_json: Option<&str>) -> PyResult<(f64, bool)> {
    let cfg = config(config_json)?;
    let gripper = cfg.gripper_model().map_err(value_err)?;
    let m = oracle_pose_metrics(&scene.inner, &grasp.pose, &gripper, cfg.voxel_size());
    Ok((m.antipodal_score, m.collision_free))
}

/// Batch evaluation over clutter levels; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (seed, clutter_levels, scenes_per_level, config_json=None))]
fn evaluate(
    py: Python<'_>,
    seed: u64,
    clutter_levels: Vec<usize>,
    scenes_per_level: usize,
    config_json: Option<&str>,
) -> PyResult<String> {
    let cfg = config(config_json)?;
    let report = py
        .detach(|| eval_batch(seed, &clutter_levels, scenes_per_level, &ShapeCatalog::primitives(), &cfg))
        .map_err(value_err)?;
    Ok(report.to_json())
}

/// Labels a scene and writes one record per view count under `out_dir`; returns
/// (frames, labelled pairs) per record.
#[pyfunction]
#[pyo3(signature = (scene, view_counts, out_dir, params_json=None, config_json=None))]
fn generate_dataset(
    py: Python<'_>,
    scene: &Scene,
    view_counts: Vec<usize>,
    out_dir: PathBuf,
    params_json: Option<&str>,
    config_json: Option<&str>,
) -> PyResult<Vec<(usize, usize)>> {
    let cfg = config(config_json)?;
    let params: DatasetParams = match params_json {
        Some(s) => serde_json::from_str(s).map_err(value_err)?,
        None => DatasetParams::default(),
    };
    let records = py
        .detach(|| generate_scene_dataset(&scene.inner, &view_counts, &out_dir, &cfg, &params))
        .map_err(value_err)?;
    Ok(records.iter().map(|r| (r.n_fused_frames, r.pairs.len())).collect())
}

#[pymodule]
pub fn cpgrasp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scene>()?;
    m.add_class::<Volume>()?;
    m.add_class::<Grasp>()?;
    m.add_function(wrap_pyfunction!(plan_py, m)?)?;
    m.add_function(wrap_pyfunction!(grade, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    Ok(())
}
