//! End-to-end evaluation against the analytic ground truth: fusion of rendered views,
//! planning, oracle metrics per scene and per clutter level, and incremental replay.

mod oracle;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{CameraIntrinsics, RigidTransform};
use crate::isosurface::IsosurfaceError;
use crate::planner::{
    plan, AnalyticScorer, Candidate, GripperModel, GripperSpec, PlanResult, PlanStats, PlannerError, PlannerParams, Scorer,
};
use crate::scene::{generate_scene, render_depth, sample_viewpoints, SceneError, SceneSpec, ShapeCatalog};
use crate::tsdf::{TsdfError, TsdfVolume, VolumeConfig};

pub use oracle::{first_contact, oracle_antipodal_score, oracle_collision_free, oracle_pose_metrics, PoseMetrics, ORACLE_SPACING};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Tsdf(#[from] TsdfError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Everything needed to go from a scene to ranked grasps. Every field has a default, so
/// a JSON config only needs the values it changes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub volume: VolumeConfig,
    pub intrinsics: CameraIntrinsics,
    pub views: usize,
    pub view_radius: f64,
    pub gripper: GripperSpec,
    pub planner: PlannerParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            volume: VolumeConfig::default(),
            intrinsics: CameraIntrinsics::default(),
            views: 20,
            view_radius: 0.45,
            gripper: GripperSpec::default(),
            planner: PlannerParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(s: &str) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn voxel_size(&self) -> f64 {
        self.volume.voxel_size()
    }

    pub fn gripper_model(&self) -> Result<GripperModel, HarnessError> {
        Ok(GripperModel::new(self.gripper)?)
    }

    /// The default hemisphere views of a scene's workspace.
    pub fn viewpoints(&self, scene: &SceneSpec) -> Vec<RigidTransform> {
        sample_viewpoints(self.views, &scene.workspace, self.view_radius)
    }
}

/// Renders and fuses each view into `vol`, in order.
pub fn fuse_views(
    vol: &mut TsdfVolume,
    scene: &SceneSpec,
    intr: &CameraIntrinsics,
    views: &[RigidTransform],
) -> Result<(), HarnessError> {
    for cam in views {
        let depth = render_depth(scene, intr, cam);
        vol.integrate_depth(&depth, intr, cam)?;
    }
    Ok(())
}

/// Fresh volume from the config with `views` fused into it.
pub fn fuse_scene(scene: &SceneSpec, cfg: &PipelineConfig, views: &[RigidTransform]) -> Result<TsdfVolume, HarnessError> {
    let mut vol = cfg.volume.build()?;
    fuse_views(&mut vol, scene, &cfg.intrinsics, views)?;
    Ok(vol)
}

/// Outcome of planning on one scene and grading the top grasp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEval {
    pub seed: u64,
    pub n_objects: usize,
    pub placed: usize,
    pub top: Option<Candidate>,
    pub metrics: Option<PoseMetrics>,
    pub stats: PlanStats,
}

impl SceneEval {
    pub fn no_pose(&self) -> bool {
        self.top.is_none()
    }
}

/// Plans on an already fused volume and grades the top grasp against `scene`. A volume
/// with nothing observed yet counts as an empty plan, not an error.
pub fn evaluate_volume(
    scene: &SceneSpec,
    vol: &TsdfVolume,
    cfg: &PipelineConfig,
    scorer: &dyn Scorer,
) -> Result<(Option<Candidate>, Option<PoseMetrics>, PlanStats), HarnessError> {
    let gripper = cfg.gripper_model()?;
    let result = match plan(vol, &gripper, scorer, &cfg.planner) {
        Err(PlannerError::Isosurface(IsosurfaceError::EmptyVolume)) => PlanResult::default(),
        r => r?,
    };
    let top = result.grasps.first().copied();
    let metrics = top.map(|c| oracle_pose_metrics(scene, &c.pose, &gripper, cfg.voxel_size()));
    Ok((top, metrics, result.stats))
}

pub fn evaluate_scene(
    scene: &SceneSpec,
    n_objects: usize,
    cfg: &PipelineConfig,
    scorer: &dyn Scorer,
) -> Result<SceneEval, HarnessError> {
    let vol = fuse_scene(scene, cfg, &cfg.viewpoints(scene))?;
    let (top, metrics, stats) = evaluate_volume(scene, &vol, cfg, scorer)?;
    Ok(SceneEval {
        seed: scene.seed,
        n_objects,
        placed: scene.shapes.len(),
        top,
        metrics,
        stats,
    })
}

/// Seed of scene `index` at a clutter level, so every scene is reproducible on its own.
pub fn scene_seed(base: u64, n_objects: usize, index: usize) -> u64 {
    base.wrapping_mul(1_000_003)
        .wrapping_add(n_objects as u64 * 100_000)
        .wrapping_add(index as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub n_objects: usize,
    pub scenes: usize,
    pub no_pose: usize,
    /// Mean oracle antipodal score over scenes with a pose.
    pub mean_as: f64,
    /// Percentage of top poses that are collision-free, over scenes with a pose.
    pub cfr: f64,
    pub mean_plan_ms: f64,
    pub mean_pairs: f64,
    pub mean_feasible: f64,
}

impl LevelSummary {
    pub fn no_pose_rate(&self) -> f64 {
        if self.scenes == 0 {
            0.0
        } else {
            self.no_pose as f64 / self.scenes as f64
        }
    }

    pub fn from_scenes(n_objects: usize, scenes: &[SceneEval]) -> Self {
        let graded: Vec<&PoseMetrics> = scenes.iter().filter_map(|s| s.metrics.as_ref()).collect();
        let k = graded.len().max(1) as f64;
        let n = scenes.len().max(1) as f64;
        Self {
            n_objects,
            scenes: scenes.len(),
            no_pose: scenes.iter().filter(|s| s.no_pose()).count(),
            mean_as: graded.iter().map(|m| m.antipodal_score).sum::<f64>() / k,
            cfr: 100.0 * graded.iter().filter(|m| m.collision_free).count() as f64 / k,
            mean_plan_ms: scenes.iter().map(|s| s.stats.total_time() * 1e3).sum::<f64>() / n,
            mean_pairs: scenes.iter().map(|s| s.stats.pairs as f64).sum::<f64>() / n,
            mean_feasible: scenes.iter().map(|s| s.stats.feasible as f64).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: PipelineConfig,
    pub seed: u64,
    pub levels: Vec<LevelSummary>,
    pub scenes: Vec<SceneEval>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text table: one row per clutter level.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>8} {:>7} {:>8} {:>7} {:>7} {:>9} {:>9}",
            "objects", "scenes", "no-pose", "AS", "CFR(%)", "pairs", "plan(ms)"
        );
        for l in &self.levels {
            let _ = writeln!(
                s,
                "{:>8} {:>7} {:>8} {:>7.3} {:>7.1} {:>9.0} {:>9.1}",
                l.n_objects, l.scenes, l.no_pose, l.mean_as, l.cfr, l.mean_pairs, l.mean_plan_ms
            );
        }
        s
    }
}

/// Generates `scenes_per_level` scenes for each clutter level, fuses `cfg.views` views of
/// each, plans, and grades the top grasp. Scenes run in parallel; results keep input order.
pub fn eval_batch(
    seed: u64,
    clutter_levels: &[usize],
    scenes_per_level: usize,
    catalog: &ShapeCatalog,
    cfg: &PipelineConfig,
) -> Result<EvalReport, HarnessError> {
    let jobs: Vec<(usize, usize)> = clutter_levels
        .iter()
        .flat_map(|&n| (0..scenes_per_level).map(move |i| (n, i)))
        .collect();
    let scenes: Vec<SceneEval> = jobs
        .par_iter()
        .map(|&(n, i)| {
            let generated = generate_scene(scene_seed(seed, n, i), n, catalog)?;
            evaluate_scene(&generated.scene, n, cfg, &AnalyticScorer)
        })
        .collect::<Result<_, _>>()?;
    let levels = clutter_levels
        .iter()
        .map(|&n| {
            let at: Vec<SceneEval> = scenes.iter().filter(|s| s.n_objects == n).cloned().collect();
            LevelSummary::from_scenes(n, &at)
        })
        .collect();
    Ok(EvalReport {
        config: *cfg,
        seed,
        levels,
        scenes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayStep {
    pub step: usize,
    pub top: Option<Candidate>,
    pub metrics: Option<PoseMetrics>,
    /// Distance between this step's and the previous step's top grasp centers.
    pub drift: Option<f64>,
}

/// Fuses the views one at a time and re-plans after each, as an eye-in-hand camera would.
pub fn closed_loop_replay(
    scene: &SceneSpec,
    views: &[RigidTransform],
    cfg: &PipelineConfig,
) -> Result<Vec<ReplayStep>, HarnessError> {
    let mut vol = cfg.volume.build()?;
    let mut steps: Vec<ReplayStep> = Vec::with_capacity(views.len());
    for (i, cam) in views.iter().enumerate() {
        fuse_views(&mut vol, scene, &cfg.intrinsics, std::slice::from_ref(cam))?;
        let (top, metrics, _) = evaluate_volume(scene, &vol, cfg, &AnalyticScorer)?;
        let prev = steps.last().and_then(|s| s.top);
        let drift = match (prev, top) {
            (Some(a), Some(b)) => Some((a.pose.center() - b.pose.center()).norm()),
            _ => None,
        };
        steps.push(ReplayStep {
            step: i + 1,
            top,
            metrics,
            drift,
        });
    }
    Ok(steps)
}
