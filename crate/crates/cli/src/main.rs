use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::Point3;

use spiders::codec::make_patterns;
use spiders::config::RigConfig;
use spiders::eval::evaluate;
use spiders::grid::Grid;
use spiders::io;
use spiders::pipeline;
use spiders::recon::{pca_normals, relight, DepthMap, PointCloud};

#[derive(Parser)]
#[command(name = "spiders", version, about = "Polarization structured-light simulation and reconstruction")]
struct Cli {
    /// Worker threads; falls back to SPIDERS_THREADS, then all cores.
    #[arg(long, global = true, env = "SPIDERS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Rig configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render every pattern frame of a rig and write the capture stack.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Skip PNG previews.
        #[arg(long)]
        no_previews: bool,
    },
    /// Decode a capture stack into a projector-column map.
    Decode {
        /// Capture directory holding manifest.json.
        #[arg(long)]
        captures: PathBuf,
        /// Rig configuration; defaults to the one stored in the manifest.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output correspondence PFM.
        #[arg(long)]
        out: PathBuf,
    },
    /// Triangulate a correspondence map into depth, normals and a point cloud.
    Reconstruct {
        #[arg(long)]
        correspondence: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibrate the projector from simulated boards.
    Calibrate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate reflectance and refine normals from the uniform captures.
    Estimate {
        #[arg(long)]
        captures: PathBuf,
        /// Depth PFM from `reconstruct`.
        #[arg(long)]
        depth: PathBuf,
        /// Normal PFM; PCA normals of the depth are used when absent.
        #[arg(long)]
        normals: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render estimated materials under directional lights.
    Relight {
        #[arg(long)]
        materials: PathBuf,
        /// JSON list of `{direction, intensity}`.
        #[arg(long)]
        lights: PathBuf,
        /// Depth PFM plus rig for perspective views; orthographic otherwise.
        #[arg(long, requires = "config")]
        depth: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output PNG.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted depth and normals against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, requires = "gt_normals")]
        pred_normals: Option<PathBuf>,
        #[arg(long)]
        gt_normals: Option<PathBuf>,
        /// Output report JSON.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(args: &ConfigArgs) -> Result<RigConfig> {
    let mut cfg = RigConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn points_from_depth(cfg: &RigConfig, depth: &DepthMap) -> PointCloud {
    Grid::from_fn(depth.width(), depth.height(), |x, y| {
        let z = (*depth.get(x, y))?;
        let d = cfg.camera.intrinsics.ray(x as f64, y as f64);
        Some(Point3::from(d * (z / d.z)))
    })
}

fn simulate(cfg: &RigConfig, out: &Path, previews: bool) -> Result<()> {
    let sim = pipeline::simulate(cfg)?;
    fs::create_dir_all(out)?;
    io::write_captures(out, cfg, &sim.sequence.tags, &sim.frames)?;
    io::write_patterns(&out.join("patterns"), &sim.sequence)?;
    let gt = out.join("gt");
    fs::create_dir_all(&gt)?;
    io::write_scalar_map(&gt.join("depth.pfm"), &sim.gbuffer.depth())?;
    io::write_normal_map(&gt.join("normals.pfm"), &sim.gbuffer.normals())?;
    io::write_correspondence(
        &gt.join("correspondence.pfm"),
        &spiders::codec::CorrespondenceMap {
            columns: sim.gbuffer.correspondence(),
        },
    )?;
    if previews {
        let dir = out.join("previews");
        fs::create_dir_all(&dir)?;
        for (i, f) in sim.frames.iter().enumerate() {
            io::write_previews(
                &dir.join(format!("frame{i:03}_s0.png")),
                &dir.join(format!("frame{i:03}_pol.png")),
                f.channel(cfg.decode.channel),
            )?;
        }
    }
    eprintln!("wrote {} frames to {}", sim.frames.len(), out.display());
    Ok(())
}

fn capture_config(manifest: &io::CaptureManifest, config: Option<&Path>) -> Result<RigConfig> {
    Ok(match config {
        Some(p) => RigConfig::load(p)?,
        None => manifest.rig.clone(),
    })
}

fn decode(captures: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let (manifest, frames) = io::read_captures(captures)?;
    let cfg = capture_config(&manifest, config)?;
    let seq = make_patterns(cfg.projector.width, cfg.projector.height, &cfg.patterns, &cfg.projector.model().photometry)?;
    if seq.tags != manifest.frames.iter().map(|f| f.tag).collect::<Vec<_>>() {
        bail!("capture frames do not match the configured pattern sequence");
    }
    let (map, stats) = pipeline::decode_frames(&cfg, &seq, &frames)?;
    io::write_correspondence(out, &map)?;
    eprintln!("{stats:?}; {} pixels valid after filtering", map.valid_count());
    Ok(())
}

fn reconstruct(correspondence: &Path, config: &Path, out: &Path) -> Result<()> {
    let cfg = RigConfig::load(config)?;
    let map = io::read_correspondence(correspondence)?;
    if map.width() != cfg.camera.width || map.height() != cfg.camera.height {
        bail!("correspondence size differs from the camera");
    }
    let geo = pipeline::reconstruct(&cfg, &map);
    fs::create_dir_all(out)?;
    io::write_scalar_map(&out.join("depth.pfm"), &geo.depth)?;
    io::write_normal_map(&out.join("normals.pfm"), &geo.normals)?;
    io::write_ply(&out.join("cloud.ply"), &geo.points, &geo.normals)?;
    Ok(())
}

fn calibrate(cfg: &RigConfig, out: &Path) -> Result<()> {
    let cal = pipeline::calibrate(cfg)?;
    fs::create_dir_all(out)?;
    write_json(&out.join("calibration.json"), &cal)?;
    let mut updated = cfg.clone();
    pipeline::apply_calibration(&mut updated, &cal);
    io::write_config(&out.join("rig.json"), &updated)?;
    eprintln!(
        "fx {:.4} cx {:.4} reprojection rms {:.5} px (initial {:.5})",
        cal.intrinsics.fx, cal.intrinsics.cx, cal.rms, cal.initial_rms
    );
    Ok(())
}

fn estimate(captures: &Path, depth: &Path, normals: Option<&Path>, config: Option<&Path>, out: &Path) -> Result<()> {
    let manifest = io::read_manifest(captures)?;
    if manifest.ambient_intensity > 0.0 {
        bail!(
            "captures were taken under ambient light (intensity {}); reflectance estimation needs a dark scene",
            manifest.ambient_intensity
        );
    }
    let (_, frames) = io::read_captures(captures)?;
    let cfg = capture_config(&manifest, config)?;
    let depth = io::read_scalar_map(depth)?;
    let points = points_from_depth(&cfg, &depth);
    let normals = match normals {
        Some(p) => io::read_normal_map(p)?,
        None => pca_normals(&points, cfg.estimation.pca_window),
    };
    let seq = make_patterns(cfg.projector.width, cfg.projector.height, &cfg.patterns, &cfg.projector.model().photometry)?;
    let est = pipeline::estimate(&cfg, &seq, &frames, &points, &normals)?;
    fs::create_dir_all(out)?;
    let mut albedo = Vec::new();
    for (c, a) in est.albedo.iter().enumerate() {
        let name = format!("albedo_c{c}.pfm");
        io::write_scalar_map(&out.join(&name), a)?;
        albedo.push(name);
    }
    io::write_normal_map(&out.join("normals.pfm"), &est.normals)?;
    io::write_materials(
        &out.join("materials.json"),
        &io::MaterialsFile {
            schema: io::SCHEMA,
            params: est.joint.params,
            initial_params: est.init.params,
            albedo,
            normals: "normals.pfm".into(),
            init_loss: est.init.loss,
            losses: est.joint.losses.clone(),
            converged: est.joint.converged,
            clamped: est.clamped,
        },
    )?;
    eprintln!("{:?}", est.joint.params);
    Ok(())
}

fn relight_cmd(materials: &Path, lights: &Path, depth: Option<&Path>, config: Option<&Path>, out: &Path) -> Result<()> {
    let m = io::read_materials(materials)?;
    let normals = io::read_normal_map(&io::sibling(materials, &m.normals))?;
    let albedo = m
        .albedo
        .iter()
        .map(|a| io::read_scalar_map(&io::sibling(materials, a)))
        .collect::<spiders::Result<Vec<_>>>()?;
    let lights = io::read_lights(lights)?;
    let points = match (depth, config) {
        (Some(d), Some(c)) => Some(points_from_depth(&RigConfig::load(c)?, &io::read_scalar_map(d)?)),
        _ => None,
    };
    let img = relight(&normals, &albedo, points.as_ref(), &m.params, &lights);
    io::write_relit_png(out, &img)?;
    Ok(())
}

fn eval(pred: &Path, gt: &Path, pred_normals: Option<&Path>, gt_normals: Option<&Path>, out: &Path) -> Result<()> {
    let p = io::read_scalar_map(pred)?;
    let g = io::read_scalar_map(gt)?;
    let pn = pred_normals.map(io::read_normal_map).transpose()?;
    let gn = gt_normals.map(io::read_normal_map).transpose()?;
    let report = evaluate(&p, &g, pn.as_ref(), gn.as_ref())?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write_json(out, &report)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Simulate { cfg, out, no_previews } => simulate(&load_config(&cfg)?, &out, !no_previews),
        Command::Decode { captures, config, out } => decode(&captures, config.as_deref(), &out),
        Command::Reconstruct {
            correspondence,
            config,
            out,
        } => reconstruct(&correspondence, &config, &out),
        Command::Calibrate { cfg, out } => calibrate(&load_config(&cfg)?, &out),
        Command::Estimate {
            captures,
            depth,
            normals,
            config,
            out,
        } => estimate(&captures, &depth, normals.as_deref(), config.as_deref(), &out),
        Command::Relight {
            materials,
            lights,
            depth,
            config,
            out,
        } => relight_cmd(&materials, &lights, depth.as_deref(), config.as_deref(), &out),
        Command::Eval {
            pred,
            gt,
            pred_normals,
            gt_normals,
            out,
        } => eval(&pred, &gt, pred_normals.as_deref(), gt_normals.as_deref(), &out),
    }
}

fn main() -> Result<()> {
    run(Cli::parse())
}
