//! Synthetic polarimetric camera.
//!
//! Geometry is traced once per scene into a [`GBuffer`]; every projected
//! frame then only re-shades the cached reflection coefficients. All shading
//! quantities are expressed in the camera frame.

pub mod mosaic;
pub mod scene;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dims, Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::grid::Grid;
use crate::pbrdf::{reflection, Reflection};
use crate::polcore::{MuellerMatrix, StokesVector};
use crate::slm::{gaussian_blur, throw_stokes, ProjectorModel};

pub use mosaic::{demosaic, mosaic_sample, MosaicImage};
pub use scene::{Albedo, Ambient, Hit, Scene, Shape, Surface};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    /// World to camera.
    #[serde(default)]
    pub pose: Pose,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("camera resolution must be non-zero".into()));
        }
        self.intrinsics.validate(self.width, self.height, "camera")
    }

    pub fn center(&self) -> Point3<f64> {
        self.pose.center()
    }

    /// Unit world-space ray through pixel `(x, y)`.
    pub fn world_ray(&self, x: f64, y: f64) -> Vector3<f64> {
        let d = self.intrinsics.ray(x, y).normalize();
        self.pose.inverse().transform_vector(&d)
    }
}

/// Stokes image with one plane stack per color channel.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarimetricImage {
    pub channels: Vec<Grid<StokesVector>>,
}

impl PolarimetricImage {
    pub fn single(grid: Grid<StokesVector>) -> Self {
        Self { channels: vec![grid] }
    }

    pub fn width(&self) -> usize {
        self.channels[0].width()
    }

    pub fn height(&self) -> usize {
        self.channels[0].height()
    }

    pub fn channel(&self, c: usize) -> &Grid<StokesVector> {
        &self.channels[c]
    }

    pub fn same_dims(&self, other: &Self) -> Result<()> {
        if self.channels.len() != other.channels.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} channels", self.channels.len()),
                found: format!("{} channels", other.channels.len()),
            });
        }
        self.channels[0].same_dims(&other.channels[0])
    }
}

/// How projector light is looked up for a surface point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Nearest,
    /// Bilinear in command space (LUT rotation, DoLP, circular degree).
    Bilinear,
}

/// Cached per-pixel geometry of a visible surface point.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGeometry {
    pub surface: usize,
    pub point: Point3<f64>,
    /// Camera-frame depth (z).
    pub depth: f64,
    pub normal: Vector3<f64>,
    /// Unit direction toward the camera.
    pub view: Vector3<f64>,
    /// Unit direction toward the projector center.
    pub light: Vector3<f64>,
    /// Continuous projector coordinates when lit by the projector.
    pub projector: Option<(f64, f64)>,
    pub reflection: Vec<Reflection<f64>>,
    pub ambient: Vec<StokesVector>,
}

/// Scene geometry traced once for a fixed rig.
#[derive(Debug, Clone)]
pub struct GBuffer {
    pub pixels: Grid<Option<PixelGeometry>>,
    pub channels: usize,
    /// Angle of the projector x-axis in the camera image plane.
    pub roll: f64,
}

/// Angle of the projector x-axis as seen in the camera image plane.
pub fn projector_roll(camera: &CameraModel, projector: &ProjectorModel) -> f64 {
    let x_world = projector.pose.inverse().transform_vector(&Vector3::x());
    let x_cam = camera.pose.transform_vector(&x_world);
    x_cam.y.atan2(x_cam.x)
}

impl GBuffer {
    pub fn trace(scene: &Scene, camera: &CameraModel, projector: &ProjectorModel, channels: usize) -> Self {
        let cam_center = camera.center();
        let proj_center = projector.center();
        let to_cam = |v: &Vector3<f64>| camera.pose.transform_vector(v);
        let pixels = Grid::par_from_fn(camera.width, camera.height, |x, y| {
            let d = camera.world_ray(x as f64, y as f64);
            let hit = scene.intersect(&cam_center, &d)?;
            let surf = &scene.surfaces[hit.surface];
            let p_cam = camera.pose.transform_point(&hit.point);
            let normal = to_cam(&hit.normal).normalize();
            let view = (-p_cam.coords).normalize();
            let light = to_cam(&(proj_center - hit.point)).normalize();
            let lit = normal.dot(&light) > 0.0 && !scene.occluded(&hit.point, &hit.normal, &proj_center);
            let projector_xy = if lit { projector.project(&hit.point) } else { None };
            let mat = surf.material.lift::<f64>();
            let arr = |v: &Vector3<f64>| [v.x, v.y, v.z];
            let (reflection, ambient) = (0..channels)
                .map(|c| {
                    let k_b = surf.albedo.at(&hit.point, c);
                    let r = reflection(&mat, k_b, &arr(&normal), &arr(&light), &arr(&view));
                    (r, scene.ambient.stokes(k_b, normal.dot(&view)))
                })
                .unzip();
            Some(PixelGeometry {
                surface: hit.surface,
                point: hit.point,
                depth: p_cam.z,
                normal,
                view,
                light,
                projector: projector_xy,
                reflection,
                ambient,
            })
        });
        GBuffer {
            pixels,
            channels,
            roll: projector_roll(camera, projector),
        }
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    /// Shades every pixel given the camera-frame-independent projector light
    /// at continuous projector coordinates.
    pub fn shade(&self, source: impl Fn(f64, f64) -> StokesVector + Sync) -> PolarimetricImage {
        let roll = MuellerMatrix::rotation(self.roll);
        let per_pixel: Vec<Vec<StokesVector>> = self
            .pixels
            .as_slice()
            .par_iter()
            .map(|px| match px {
                None => vec![StokesVector::ZERO; self.channels],
                Some(g) => {
                    let s_i = g.projector.map(|(x, y)| roll.apply(&source(x, y)));
                    (0..self.channels)
                        .map(|c| match s_i {
                            Some(s) => g.reflection[c].apply(&s, &g.ambient[c]),
                            None => g.ambient[c],
                        })
                        .collect()
                }
            })
            .collect();
        let (w, h) = (self.width(), self.height());
        let channels = (0..self.channels)
            .map(|c| Grid::from_vec(w, h, per_pixel.iter().map(|p| p[c]).collect()).expect("sized"))
            .collect();
        PolarimetricImage { channels }
    }

    /// Renders one projected command image.
    pub fn render(&self, projector: &ProjectorModel, command: &Grid<u8>, sampling: Sampling) -> Result<PolarimetricImage> {
        if command.width() != projector.width || command.height() != projector.height {
            return Err(Error::DimensionMismatch {
                expected: dims(projector.width, projector.height),
                found: dims(command.width(), command.height()),
            });
        }
        let (w, h) = (projector.width, projector.height);
        let clampi = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
        let taps = |x: f64, y: f64| {
            let (fx, fy) = (x.floor(), y.floor());
            let (tx, ty) = (x - fx, y - fy);
            let (x0, x1) = (clampi(fx, w), clampi(fx + 1.0, w));
            let (y0, y1) = (clampi(fy, h), clampi(fy + 1.0, h));
            (
                [(x0, y0), (x1, y0), (x0, y1), (x1, y1)],
                [(1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), (1.0 - tx) * ty, tx * ty],
            )
        };
        let phot = &projector.photometry;
        if projector.psf_sigma > 0.0 {
            let field = gaussian_blur(&command.map(|v| phot.stokes(*v)), projector.psf_sigma);
            return Ok(match sampling {
                Sampling::Nearest => self.shade(|x, y| *field.get(clampi(x.round(), w), clampi(y.round(), h))),
                Sampling::Bilinear => self.shade(|x, y| {
                    let (t, wt) = taps(x, y);
                    t.iter()
                        .zip(wt)
                        .fold(StokesVector::ZERO, |acc, ((px, py), k)| acc + *field.get(*px, *py) * k)
                }),
            });
        }
        Ok(match sampling {
            Sampling::Nearest => self.shade(|x, y| phot.stokes(*command.get(clampi(x.round(), w), clampi(y.round(), h)))),
            Sampling::Bilinear => self.shade(|x, y| {
                let (t, wt) = taps(x, y);
                phot.stokes_bilinear(t.map(|(px, py)| *command.get(px, py)), wt)
            }),
        })
    }

    pub fn depth(&self) -> Grid<Option<f64>> {
        self.pixels.map(|p| p.as_ref().map(|g| g.depth))
    }

    pub fn normals(&self) -> Grid<Option<Vector3<f64>>> {
        self.pixels.map(|p| p.as_ref().map(|g| g.normal))
    }

    /// Projector column seen by each lit pixel.
    pub fn correspondence(&self) -> Grid<Option<f64>> {
        self.pixels.map(|p| p.as_ref().and_then(|g| g.projector.map(|(x, _)| x)))
    }

    /// Per-channel `(c_s s_i0, c_d s_i0)` under a source of intensity `s_i0`.
    pub fn component_intensities(&self, s_i0: f64, channel: usize) -> Grid<Option<(f64, f64)>> {
        self.pixels.map(|p| {
            p.as_ref()
                .filter(|g| g.projector.is_some())
                .map(|g| (g.reflection[channel].c_s * s_i0, g.reflection[channel].c_d * s_i0))
        })
    }
}

/// One-off render of a single command image with nearest sampling.
pub fn render(
    scene: &Scene,
    camera: &CameraModel,
    projector: &ProjectorModel,
    command: &Grid<u8>,
) -> Result<PolarimetricImage> {
    let field = throw_stokes(projector, command)?;
    let gb = GBuffer::trace(scene, camera, projector, 1);
    let (w, h) = (projector.width, projector.height);
    Ok(gb.shade(|x, y| {
        let px = (x.round().max(0.0) as usize).min(w - 1);
        let py = (y.round().max(0.0) as usize).min(h - 1);
        *field.get(px, py)
    }))
}
