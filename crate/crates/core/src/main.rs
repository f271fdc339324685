use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use cpgrasp::dataset::{generate_scene_dataset, DatasetParams};
use cpgrasp::geom::RigidTransform;
use cpgrasp::harness::{closed_loop_replay, eval_batch, fuse_scene, scene_seed, PipelineConfig};
use cpgrasp::isosurface::marching_cubes;
use cpgrasp::planner::{plan, AnalyticScorer, GripperModel, GripperSpec, PlannerParams};
use cpgrasp::scene::{generate_scene, render_depth, SceneSpec, ShapeCatalog};
use cpgrasp::tsdf::TsdfVolume;

/// Volumetric contact-point grasp planning on synthetic tabletop scenes.
#[derive(Parser)]
#[command(name = "cpgrasp", version)]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Pipeline config JSON; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (for `plan`: the poses file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate seeded cluttered scenes as JSON.
    GenScenes {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 5)]
        objects: usize,
    },
    /// Render depth maps (PFM) of a scene from the default viewpoints.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        views: Option<usize>,
    },
    /// Render and fuse views of a scene into a TSDF volume.
    Fuse {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        views: Option<usize>,
    },
    /// Plan ranked grasps on a volume or a scene.
    Plan {
        #[command(flatten)]
        input: VolumeInput,
        /// Gripper spec JSON.
        #[arg(long)]
        gripper: Option<PathBuf>,
        /// Planner parameters JSON.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Evaluate the top grasp of generated scenes against the analytic oracle.
    Eval {
        /// Clutter levels (objects per scene).
        #[arg(long, value_delimiter = ',', default_value = "5,10,15,20")]
        objects: Vec<usize>,
        /// Scenes per clutter level.
        #[arg(long, default_value_t = 50)]
        scenes: usize,
        #[arg(long)]
        views: Option<usize>,
    },
    /// Generate a labelled contact-pair dataset.
    Dataset {
        #[arg(long, default_value_t = 10)]
        scenes: usize,
        #[arg(long, default_value_t = 5)]
        objects: usize,
        #[arg(long, value_delimiter = ',', default_value = "5,10,14,19")]
        view_counts: Vec<usize>,
        /// Dataset parameters JSON.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Fuse views one at a time, re-planning after each.
    Replay {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        views: Option<usize>,
    },
    /// Extract the isosurface of a volume as OBJ or PLY.
    ExportMesh {
        #[command(flatten)]
        input: VolumeInput,
        #[arg(long, value_enum, default_value_t = MeshFormat::Obj)]
        format: MeshFormat,
    },
}

#[derive(Args)]
struct VolumeInput {
    /// TSDF1 volume file.
    #[arg(long, conflicts_with = "scene")]
    volume: Option<PathBuf>,
    /// Scene JSON, rendered and fused first.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    views: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeshFormat {
    Obj,
    Ply,
}

#[derive(Serialize)]
struct PoseOut {
    #[serde(rename = "T")]
    t: [[f64; 4]; 4],
    width: f64,
    score: f64,
    pair_index: usize,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_json(&read(p)?)?,
        None => PipelineConfig::default(),
    };
    let out_dir = || -> Result<PathBuf> {
        let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    };

    match &cli.cmd {
        Cmd::GenScenes { count, objects } => {
            let dir = out_dir()?;
            let catalog = ShapeCatalog::primitives();
            for i in 0..*count {
                let g = generate_scene(scene_seed(cli.seed, *objects, i), *objects, &catalog)?;
                if !g.skipped.is_empty() {
                    eprintln!("scene {}: could not place objects {:?}", g.scene.seed, g.skipped);
                }
                let path = dir.join(format!("scene_{}.json", g.scene.seed));
                fs::write(&path, g.scene.to_json())?;
                println!("{}", path.display());
            }
        }
        Cmd::Render { scene, views } => {
            let scene = load_scene(scene)?;
            set_views(&mut cfg, *views);
            let dir = out_dir()?;
            let cams = cfg.viewpoints(&scene);
            let depths: Vec<_> = cams
                .par_iter()
                .map(|c| render_depth(&scene, &cfg.intrinsics, c))
                .collect();
            for (k, d) in depths.iter().enumerate() {
                d.write_pfm(BufWriter::new(fs::File::create(dir.join(format!("depth_{k:03}.pfm")))?))?;
            }
            let poses: Vec<&RigidTransform> = cams.iter().collect();
            let meta = serde_json::json!({ "intrinsics": cfg.intrinsics, "camera_poses": poses });
            fs::write(dir.join("cameras.json"), serde_json::to_string_pretty(&meta)?)?;
            println!("rendered {} views to {}", cams.len(), dir.display());
        }
        Cmd::Fuse { scene, views } => {
            let scene = load_scene(scene)?;
            set_views(&mut cfg, *views);
            let vol = fuse_scene(&scene, &cfg, &cfg.viewpoints(&scene))?;
            let path = out_dir()?.join("volume.tsdf1");
            vol.write_tsdf1(BufWriter::new(fs::File::create(&path)?))?;
            println!("{} ({} observed voxels)", path.display(), vol.observed_count());
        }
        Cmd::Plan { input, gripper, params } => {
            let vol = load_volume(input, &mut cfg)?;
            let spec: GripperSpec = match gripper {
                Some(p) => serde_json::from_str(&read(p)?)?,
                None => cfg.gripper,
            };
            let params: PlannerParams = match params {
                Some(p) => serde_json::from_str(&read(p)?)?,
                None => cfg.planner,
            };
            let result = plan(&vol, &GripperModel::new(spec)?, &AnalyticScorer, &params)?;
            let poses: Vec<PoseOut> = result
                .grasps
                .iter()
                .map(|c| PoseOut {
                    t: c.pose.transform.to_rows(),
                    width: c.pose.width,
                    score: c.score,
                    pair_index: c.pair_index,
                })
                .collect();
            let path = cli.out.clone().unwrap_or_else(|| PathBuf::from("poses.json"));
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(&path, serde_json::to_string_pretty(&poses)?)?;
            let s = &result.stats;
            eprintln!(
                "vertices {} pairs {} selected {} feasible {} output {} ({:.1} ms)",
                s.vertices,
                s.pairs,
                s.selected,
                s.feasible,
                s.output,
                s.total_time() * 1e3
            );
            println!("{}", path.display());
        }
        Cmd::Eval { objects, scenes, views } => {
            set_views(&mut cfg, *views);
            let report = eval_batch(cli.seed, objects, *scenes, &ShapeCatalog::primitives(), &cfg)?;
            let dir = out_dir()?;
            fs::write(dir.join("report.json"), report.to_json())?;
            fs::write(dir.join("report.txt"), report.to_table())?;
            print!("{}", report.to_table());
        }
        Cmd::Dataset {
            scenes,
            objects,
            view_counts,
            params,
        } => {
            let mut params: DatasetParams = match params {
                Some(p) => serde_json::from_str(&read(p)?)?,
                None => DatasetParams::default(),
            };
            if params.shuffle_seed == 0 {
                params.shuffle_seed = cli.seed;
            }
            let dir = out_dir()?;
            let catalog = ShapeCatalog::primitives();
            let done: Vec<usize> = (0..*scenes)
                .into_par_iter()
                .map(|i| -> Result<usize> {
                    let g = generate_scene(scene_seed(cli.seed, *objects, i), *objects, &catalog)?;
                    let records = generate_scene_dataset(&g.scene, view_counts, &dir, &cfg, &params)?;
                    Ok(records.iter().map(|r| r.pairs.len()).sum())
                })
                .collect::<Result<_>>()?;
            println!(
                "{} scenes, {} labelled pairs across records, in {}",
                done.len(),
                done.iter().sum::<usize>(),
                dir.display()
            );
        }
        Cmd::Replay { scene, views } => {
            let scene = load_scene(scene)?;
            set_views(&mut cfg, *views);
            let steps = closed_loop_replay(&scene, &cfg.viewpoints(&scene), &cfg)?;
            let path = out_dir()?.join("replay.json");
            fs::write(&path, serde_json::to_string_pretty(&steps)?)?;
            for s in &steps {
                match (&s.top, &s.metrics) {
                    (Some(c), Some(m)) => println!(
                        "step {:>3}  score {:.3}  AS {:.3}  free {}  drift {}",
                        s.step,
                        c.score,
                        m.antipodal_score,
                        m.collision_free,
                        s.drift.map_or("-".into(), |d| format!("{:.4}", d))
                    ),
                    _ => println!("step {:>3}  no pose", s.step),
                }
            }
        }
        Cmd::ExportMesh { input, format } => {
            let vol = load_volume(input, &mut cfg)?;
            let mesh = marching_cubes(&vol)?;
            let dir = out_dir()?;
            let path = match format {
                MeshFormat::Obj => dir.join("mesh.obj"),
                MeshFormat::Ply => dir.join("mesh.ply"),
            };
            let w = BufWriter::new(fs::File::create(&path)?);
            match format {
                MeshFormat::Obj => mesh.write_obj(w)?,
                MeshFormat::Ply => mesh.write_ply(w)?,
            }
            println!("{} ({} vertices, {} triangles)", path.display(), mesh.vertex_count(), mesh.triangles.len());
        }
    }
    Ok(())
}

fn read(p: &Path) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn load_scene(p: &Path) -> Result<SceneSpec> {
    Ok(SceneSpec::from_json(&read(p)?)?)
}

fn set_views(cfg: &mut PipelineConfig, views: Option<usize>) {
    if let Some(v) = views {
        cfg.views = v;
    }
}

fn load_volume(input: &VolumeInput, cfg: &mut PipelineConfig) -> Result<TsdfVolume> {
    set_views(cfg, input.views);
    match (&input.volume, &input.scene) {
        (Some(v), _) => {
            let f = fs::File::open(v).with_context(|| format!("opening {}", v.display()))?;
            Ok(TsdfVolume::read_tsdf1(BufReader::new(f))?)
        }
        (None, Some(s)) => {
            let scene = load_scene(s)?;
            Ok(fuse_scene(&scene, cfg, &cfg.viewpoints(&scene))?)
        }
        (None, None) => bail!("need --volume or --scene"),
    }
}
