//! Volumetric contact-point grasp planning.
//!
//! Depth frames are fused into a truncated signed distance volume, the isosurface is
//! extracted, antipodal contact pairs are matched by ray casting through the volume, and
//! collision-free parallel-jaw grasps are selected by rotating a point-sampled gripper
//! about each pair's grasp axis.

pub mod contact;
pub mod dataset;
pub mod geom;
pub mod harness;
pub mod isosurface;
pub mod planner;
pub mod scene;
pub mod tsdf;

pub use geom::{compose_grasp_pose, project_point, CameraIntrinsics, GeomError, GraspPose, RigidTransform, Vec3};
pub use tsdf::{CrossingSign, DepthImage, TsdfError, TsdfVolume, VolumeConfig};
pub use scene::{generate_scene, render_depth, PrimitiveShape, SceneSpec, ShapeKind};
pub use isosurface::{marching_cubes, IsosurfaceError, SurfaceMesh};
pub use contact::{antipodal_score, is_antipodal, sample_contact_pairs, AntipodalParams, ContactError, ContactPair};
pub use planner::{plan, AnalyticScorer, Candidate, GripperModel, GripperSpec, PlanResult, PlannerError, PlannerParams, Scorer};
pub use harness::{eval_batch, oracle_pose_metrics, EvalReport, PipelineConfig};
