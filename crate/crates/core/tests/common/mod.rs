//! Rigs shared by the integration tests.

use nalgebra::{Point3, Vector3};

use spiders::config::{ProjectorConfig, RigConfig};
use spiders::geometry::{Intrinsics, Pose};
use spiders::pbrdf::MaterialParams;
use spiders::render::{Albedo, Ambient, CameraModel, Scene, Shape, Surface};

pub fn sphere_material() -> MaterialParams {
    MaterialParams {
        mu: 1.6,
        k_s: 0.8,
        roughness: 0.35,
        shape: 1.8,
        kappa: 1.5,
        entry_polarization: false,
    }
}

/// 256 x 256 camera at the origin, 256-column projector 0.15 to the side
/// converging on a sphere 2 units away.
pub fn sphere_rig(material: MaterialParams, albedo: Albedo) -> RigConfig {
    let k = Intrinsics::new(400.0, 400.0, 127.5, 127.5);
    RigConfig {
        camera: CameraModel {
            intrinsics: k,
            pose: Pose::identity(),
            width: 256,
            height: 256,
        },
        projector: ProjectorConfig {
            intrinsics: k,
            pose: Pose::look_at(Point3::new(0.15, 0.0, 0.0), Point3::new(0.0, 0.0, 2.0), Vector3::y()),
            width: 256,
            height: 256,
            photometry: Default::default(),
            psf_sigma: 0.0,
        },
        scene: Scene {
            surfaces: vec![Surface {
                shape: Shape::Sphere {
                    center: [0.0, 0.0, 2.0],
                    radius: 0.35,
                },
                material,
                albedo,
            }],
            ambient: Ambient::default(),
        },
        patterns: Default::default(),
        decode: Default::default(),
        estimation: Default::default(),
        noise: Default::default(),
        calibration: Default::default(),
        seed: 1,
        channels: 1,
    }
}

pub fn checker() -> Albedo {
    Albedo::Checker {
        a: vec![0.2],
        b: vec![0.4],
        period: 0.1,
    }
}
