//! Pinhole intrinsics and rigid poses.
//!
//! Frames follow the computer-vision convention: x right, y down, z forward.
//! Pixel centers sit at integer coordinates.

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub skew: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            skew: 0.0,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Projects a point given in this sensor's frame; `None` behind the center.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        let (x, y) = (p.x / p.z, p.y / p.z);
        Some((self.fx * x + self.skew * y + self.cx, self.fy * y + self.cy))
    }

    /// Unnormalized ray direction (z = 1) through pixel `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let y = (v - self.cy) / self.fy;
        let x = (u - self.cx - self.skew * y) / self.fx;
        Vector3::new(x, y, 1.0)
    }

    pub fn validate(&self, width: usize, height: usize, what: &str) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidConfig(format!("{what}: focal lengths must be positive")));
        }
        let inside = |c: f64, n: usize| c >= -0.5 && c <= n as f64 - 0.5;
        if !inside(self.cx, width) || !inside(self.cy, height) {
            return Err(Error::InvalidConfig(format!("{what}: principal point outside the image")));
        }
        Ok(())
    }
}

/// Rigid transform stored as axis-angle rotation plus translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct Pose(pub Isometry3<f64>);

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRepr {
    rotation: [f64; 3],
    translation: [f64; 3],
}

impl From<PoseRepr> for Pose {
    fn from(r: PoseRepr) -> Self {
        Pose::new(r.rotation, r.translation)
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let aa = p.0.rotation.scaled_axis();
        let t = p.0.translation.vector;
        PoseRepr {
            rotation: [aa.x, aa.y, aa.z],
            translation: [t.x, t.y, t.z],
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose(Isometry3::identity())
    }

    pub fn new(axis_angle: [f64; 3], translation: [f64; 3]) -> Self {
        Pose(Isometry3::from_parts(
            Translation3::from(Vector3::from(translation)),
            UnitQuaternion::from_scaled_axis(Vector3::from(axis_angle)),
        ))
    }

    pub fn from_rotation_translation(r: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix(r);
        Pose(Isometry3::from_parts(
            Translation3::from(*t),
            UnitQuaternion::from_rotation_matrix(&rot),
        ))
    }

    /// World-to-sensor pose of a sensor at `eye` looking at `target`, with
    /// `down` giving the approximate image-y direction.
    pub fn look_at(eye: Point3<f64>, target: Point3<f64>, down: Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let x = down.cross(&z).normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let t = -(r * eye.coords);
        Self::from_rotation_translation(&r, &t)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.0.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.translation.vector
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        self.0.transform_point(p)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.transform_vector(v)
    }

    pub fn inverse(&self) -> Pose {
        Pose(self.0.inverse())
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose(self.0 * other.0)
    }

    /// Origin of this frame expressed in the parent frame.
    pub fn center(&self) -> Point3<f64> {
        self.0.inverse_transform_point(&Point3::origin())
    }
}
