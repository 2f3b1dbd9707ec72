//! End-to-end stages shared by the command line and the tests.

use nalgebra::{Point3, Vector3};

use crate::codec::{
    decode, filter_discontinuities, make_patterns, AolpReference, CorrespondenceMap, DecodeStats, FrameTag,
    PatternSequence,
};
use crate::config::RigConfig;
use crate::error::{Error, Result};
use crate::geocal::{calibrate_projector, ground_truth_calibration, BoardObservation, Calibration};
use crate::geometry::Pose;
use crate::grid::Grid;
use crate::polcore::{MuellerMatrix, StokesVector};
use crate::recon::estimate::{gather_observations, init_brdf, joint_refine, refine_albedo, to_grid};
use crate::recon::{pca_normals, triangulate, DepthMap, InitResult, JointResult, NormalMap, PointCloud};
use crate::render::{
    demosaic, mosaic_sample, projector_roll, Albedo, Ambient, CameraModel, GBuffer, PolarimetricImage, Sampling, Scene,
    Shape, Surface,
};
use crate::solver::LmOptions;
use crate::slm::ProjectorModel;

#[derive(Debug, Clone)]
pub struct Rig {
    pub camera: CameraModel,
    pub projector: ProjectorModel,
}

impl Rig {
    pub fn from_config(cfg: &RigConfig) -> Self {
        Self {
            camera: cfg.camera,
            projector: cfg.projector.model(),
        }
    }

    pub fn roll(&self) -> f64 {
        projector_roll(&self.camera, &self.projector)
    }

    pub fn aolp_reference(&self) -> AolpReference {
        AolpReference::new(&self.projector.photometry, self.roll())
    }

    /// Projector center in the camera frame.
    pub fn projector_center(&self) -> Point3<f64> {
        self.camera.pose.transform_point(&self.projector.center())
    }

    /// Camera-frame Stokes vector leaving the projector for a uniform command.
    pub fn uniform_source(&self, v: u8) -> StokesVector {
        MuellerMatrix::rotation(self.roll()).apply(&self.projector.photometry.stokes(v))
    }
}

pub struct Simulation {
    pub sequence: PatternSequence,
    pub frames: Vec<PolarimetricImage>,
    pub gbuffer: GBuffer,
}

fn frame_seed(seed: u64, frame: usize, channel: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((frame as u64) << 8 | channel as u64)
}

/// Renders every frame of the configured pattern sequence.
pub fn simulate(cfg: &RigConfig) -> Result<Simulation> {
    cfg.validate()?;
    let rig = Rig::from_config(cfg);
    let proj = &rig.projector;
    let sequence = make_patterns(proj.width, proj.height, &cfg.patterns, &proj.photometry)?;
    let gbuffer = GBuffer::trace(&cfg.scene, &rig.camera, proj, cfg.channels);
    let mut frames = Vec::with_capacity(sequence.len());
    for (i, (tag, cmd)) in sequence.tags.iter().zip(&sequence.frames).enumerate() {
        let sampling = match tag {
            FrameTag::Phase { .. } => Sampling::Bilinear,
            _ => Sampling::Nearest,
        };
        let mut img = gbuffer.render(proj, cmd, sampling)?;
        if cfg.noise.mosaic || cfg.noise.sigma > 0.0 {
            for (c, ch) in img.channels.iter_mut().enumerate() {
                *ch = demosaic(&mosaic_sample(ch, cfg.noise.sigma, frame_seed(cfg.seed, i, c)));
            }
        }
        frames.push(img);
    }
    Ok(Simulation {
        sequence,
        frames,
        gbuffer,
    })
}

/// Decodes and post-filters a capture stack.
pub fn decode_frames(
    cfg: &RigConfig,
    sequence: &PatternSequence,
    frames: &[PolarimetricImage],
) -> Result<(CorrespondenceMap, DecodeStats)> {
    let rig = Rig::from_config(cfg);
    let (map, stats) = decode(sequence, frames, &rig.aolp_reference(), &cfg.decode)?;
    Ok((filter_discontinuities(&map, cfg.decode.tau_disc), stats))
}

/// Renders and decodes one calibration board at a board-to-camera pose.
pub fn simulate_board(cfg: &RigConfig, pose: &Pose) -> Result<BoardObservation> {
    let cal = &cfg.calibration;
    let world = cfg.camera.pose.inverse().compose(pose);
    let v = |p: nalgebra::Vector3<f64>| [p.x, p.y, p.z];
    let c = world.transform_point(&Point3::origin());
    let mut board = cfg.clone();
    board.scene = Scene {
        surfaces: vec![Surface {
            shape: Shape::Plane {
                center: [c.x, c.y, c.z],
                normal: v(world.transform_vector(&Vector3::z())),
                u_axis: v(world.transform_vector(&Vector3::x())),
                half_extent: Some([cal.half_extent; 2]),
            },
            material: cal.material,
            albedo: Albedo::constant(cal.albedo),
        }],
        ambient: Ambient::default(),
    };
    let sim = simulate(&board)?;
    let (map, _) = decode_frames(&board, &sim.sequence, &sim.frames)?;
    Ok(BoardObservation { pose: *pose, map })
}

/// Simulates every configured board and calibrates the projector, or returns
/// the configured geometry in ground-truth mode.
pub fn calibrate(cfg: &RigConfig) -> Result<Calibration> {
    cfg.validate()?;
    let boards = cfg
        .calibration
        .boards
        .iter()
        .map(|p| simulate_board(cfg, p))
        .collect::<Result<Vec<_>>>()?;
    let rig = Rig::from_config(cfg);
    if cfg.calibration.ground_truth {
        let rel = rig.projector.pose.compose(&rig.camera.pose.inverse());
        return Ok(ground_truth_calibration(&cfg.projector.intrinsics, &rel, &boards));
    }
    calibrate_projector(&cfg.camera.intrinsics, &boards, cfg.projector.intrinsics.cy, &LmOptions::default())
}

/// Writes calibrated projector geometry into a rig configuration.
pub fn apply_calibration(cfg: &mut RigConfig, cal: &Calibration) {
    cfg.projector.intrinsics = cal.intrinsics;
    cfg.projector.pose = cal.projector_pose(&cfg.camera.pose);
}

pub struct Geometry {
    pub depth: DepthMap,
    pub points: PointCloud,
    pub normals: NormalMap,
}

pub fn reconstruct(cfg: &RigConfig, map: &CorrespondenceMap) -> Geometry {
    let rig = Rig::from_config(cfg);
    let (depth, points) = triangulate(map, &rig.camera, &rig.projector);
    let normals = pca_normals(&points, cfg.estimation.pca_window);
    Geometry { depth, points, normals }
}

pub struct Estimate {
    pub init: InitResult,
    pub joint: JointResult,
    pub initial_normals: Vec<Vector3<f64>>,
    /// Refined normals as an image.
    pub normals: NormalMap,
    /// Diffuse albedo per channel.
    pub albedo: Vec<Grid<Option<f64>>>,
    pub clamped: usize,
}

/// Initial fit plus joint refinement on the decode channel, then per-pixel
/// albedo for every other channel.
pub fn estimate(
    cfg: &RigConfig,
    sequence: &PatternSequence,
    frames: &[PolarimetricImage],
    points: &PointCloud,
    normals: &NormalMap,
) -> Result<Estimate> {
    let rig = Rig::from_config(cfg);
    let i255 = sequence.position(FrameTag::Uniform { v: 255 });
    let i0 = sequence.position(FrameTag::Uniform { v: 0 });
    let (Some(i255), Some(i0)) = (i255, i0) else {
        return Err(Error::InvalidConfig("sequence lacks the perpendicular uniform pair".into()));
    };
    if frames.len() != sequence.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} captures", sequence.len()),
            found: format!("{} captures", frames.len()),
        });
    }
    let sources = [rig.uniform_source(255), rig.uniform_source(0)];
    let rho_i = rig.projector.photometry.entry(255).dolp;
    let gather = |c: usize| {
        gather_observations(
            &[frames[i255].channel(c), frames[i0].channel(c)],
            &sources,
            (0, 1),
            points,
            normals,
            &rig.projector_center(),
            rho_i,
            cfg.scene.ambient.intensity,
        )
    };
    let main = cfg.decode.channel;
    let input = gather(main)?;
    if input.pixels.is_empty() {
        return Err(Error::Estimation("no pixel has both geometry and signal".into()));
    }
    let initial_normals: Vec<Vector3<f64>> = input.pixels.iter().map(|p| p.normal).collect();
    let init = init_brdf(&input, &initial_normals, &cfg.estimation);
    let joint = joint_refine(&input, &init.params, &init.albedo, &initial_normals, &cfg.estimation);
    let refined = to_grid(&input, &joint.normals);
    let mut clamped = input.clamped;
    let mut albedo = Vec::with_capacity(frames[0].channels.len());
    for c in 0..frames[0].channels.len() {
        if c == main {
            albedo.push(to_grid(&input, &joint.albedo));
        } else {
            let other = gather(c)?;
            clamped += other.clamped;
            let n: Vec<Vector3<f64>> = other
                .pixels
                .iter()
                .map(|p| refined.get(p.x, p.y).unwrap_or(p.normal))
                .collect();
            let values = refine_albedo(&other, &joint.params, &n, &cfg.estimation);
            albedo.push(to_grid(&other, &values));
        }
    }
    Ok(Estimate {
        normals: refined,
        init,
        joint,
        initial_normals,
        albedo,
        clamped,
    })
}
