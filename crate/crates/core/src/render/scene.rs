//! Analytic and mesh surfaces with ray intersection.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pbrdf::MaterialParams;
use crate::polcore::StokesVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Rectangle centered at `center`; `u_axis` fixes the in-plane
    /// orientation. Infinite when `half_extent` is omitted.
    Plane {
        center: [f64; 3],
        normal: [f64; 3],
        #[serde(default = "default_u_axis")]
        u_axis: [f64; 3],
        #[serde(default)]
        half_extent: Option<[f64; 2]>,
    },
    /// Triangles with counter-clockwise winding seen from outside.
    Mesh {
        vertices: Vec<[f64; 3]>,
        triangles: Vec<[usize; 3]>,
    },
}

fn default_u_axis() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

/// Per-channel diffuse albedo `K_b` over world space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Albedo {
    Constant { value: Vec<f64> },
    /// 3D checkerboard with cells of side `period`.
    Checker { a: Vec<f64>, b: Vec<f64>, period: f64 },
}

impl Albedo {
    pub fn constant(v: f64) -> Self {
        Albedo::Constant { value: vec![v] }
    }

    pub fn channels(&self) -> usize {
        match self {
            Albedo::Constant { value } => value.len(),
            Albedo::Checker { a, .. } => a.len(),
        }
    }

    /// Albedo of `channel`; single-valued maps broadcast to every channel.
    pub fn at(&self, p: &Point3<f64>, channel: usize) -> f64 {
        let pick = |v: &Vec<f64>| if v.len() == 1 { v[0] } else { v[channel] };
        match self {
            Albedo::Constant { value } => pick(value),
            Albedo::Checker { a, b, period } => {
                let cell = (p.x / period).floor() + (p.y / period).floor() + (p.z / period).floor();
                if (cell as i64).rem_euclid(2) == 0 {
                    pick(a)
                } else {
                    pick(b)
                }
            }
        }
    }

    fn validate(&self, channels: usize) -> Result<()> {
        let ok = |v: &Vec<f64>| (v.len() == 1 || v.len() == channels) && v.iter().all(|x| (0.0..=1.0).contains(x));
        let good = match self {
            Albedo::Constant { value } => ok(value),
            Albedo::Checker { a, b, period } => ok(a) && ok(b) && a.len() == b.len() && *period > 0.0,
        };
        if good {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("albedo must give 1 or {channels} values in [0, 1]")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Surface {
    pub shape: Shape,
    pub material: MaterialParams,
    pub albedo: Albedo,
}

/// Partially polarized environment light, already reflected toward the camera.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ambient {
    pub intensity: f64,
    #[serde(default)]
    pub dolp: f64,
    #[serde(default)]
    pub aolp_deg: f64,
}

impl Ambient {
    pub fn is_present(&self) -> bool {
        self.intensity > 0.0
    }

    /// `I_a K_b max(n.v, 0) [1, rho cos 2phi, rho sin 2phi, 0]`.
    pub fn stokes(&self, albedo: f64, n_dot_v: f64) -> StokesVector {
        StokesVector::from_linear(
            self.intensity * albedo * n_dot_v.max(0.0),
            self.dolp,
            self.aolp_deg.to_radians(),
            0.0,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub surfaces: Vec<Surface>,
    #[serde(default)]
    pub ambient: Ambient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Point3<f64>,
    /// Unit geometric normal facing the incoming ray.
    pub normal: Vector3<f64>,
    pub surface: usize,
}

const T_MIN: f64 = 1e-9;

fn v3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

impl Shape {
    pub fn validate(&self) -> Result<()> {
        match self {
            Shape::Sphere { radius, .. } if !(*radius > 0.0) => {
                Err(Error::InvalidConfig("sphere radius must be positive".into()))
            }
            Shape::Plane {
                normal, u_axis, half_extent, ..
            } => {
                let n = v3(normal);
                if n.norm() < 1e-12 || n.normalize().cross(&v3(u_axis)).norm() < 1e-9 {
                    return Err(Error::InvalidConfig("plane normal and u_axis must be independent".into()));
                }
                if half_extent.is_some_and(|h| !(h[0] > 0.0 && h[1] > 0.0)) {
                    return Err(Error::InvalidConfig("plane extent must be positive".into()));
                }
                Ok(())
            }
            Shape::Mesh { vertices, triangles } => {
                if triangles.iter().flatten().any(|&i| i >= vertices.len()) {
                    return Err(Error::InvalidConfig("mesh index out of bounds".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Nearest intersection with `t > t_min`; `d` must be unit length.
    /// Returns `(t, outward normal)`.
    pub fn intersect(&self, o: &Point3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        match self {
            Shape::Sphere { center, radius } => {
                let c = Point3::from(v3(center));
                let oc = o - c;
                let b = oc.dot(d);
                let disc = b * b - (oc.norm_squared() - radius * radius);
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = [-b - sq, -b + sq].into_iter().find(|t| *t > T_MIN)?;
                let p = o + d * t;
                Some((t, (p - c) / *radius))
            }
            Shape::Plane {
                center,
                normal,
                u_axis,
                half_extent,
            } => {
                let n = v3(normal).normalize();
                let denom = n.dot(d);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let c = Point3::from(v3(center));
                let t = n.dot(&(c - o)) / denom;
                if t <= T_MIN {
                    return None;
                }
                if let Some([hu, hv]) = half_extent {
                    let (u, v) = plane_axes(&n, &v3(u_axis));
                    let r = o + d * t - c;
                    if r.dot(&u).abs() > *hu || r.dot(&v).abs() > *hv {
                        return None;
                    }
                }
                Some((t, n))
            }
            Shape::Mesh { vertices, triangles } => {
                let mut best: Option<(f64, Vector3<f64>)> = None;
                for tri in triangles {
                    let [a, b, c] = tri.map(|i| v3(&vertices[i]));
                    if let Some(t) = moller_trumbore(o, d, &a, &b, &c) {
                        if best.is_none_or(|(bt, _)| t < bt) {
                            best = Some((t, (b - a).cross(&(c - a)).normalize()));
                        }
                    }
                }
                best
            }
        }
    }
}

/// Orthonormal in-plane axes `(u, v)` with `v = n x u`.
pub fn plane_axes(n: &Vector3<f64>, u_hint: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let u = (u_hint - n * n.dot(u_hint)).normalize();
    (u, n.cross(&u))
}

fn moller_trumbore(
    o: &Point3<f64>,
    d: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = o.coords - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > T_MIN).then_some(t)
}

impl Scene {
    pub fn validate(&self, channels: usize) -> Result<()> {
        for s in &self.surfaces {
            s.shape.validate()?;
            s.material.validate()?;
            s.albedo.validate(channels)?;
        }
        if !(self.ambient.intensity >= 0.0 && (0.0..=1.0).contains(&self.ambient.dolp)) {
            return Err(Error::InvalidConfig("ambient intensity must be >= 0 and dolp in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn intersect(&self, o: &Point3<f64>, d: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, s) in self.surfaces.iter().enumerate() {
            if let Some((t, n)) = s.shape.intersect(o, d) {
                if best.is_none_or(|b| t < b.t) {
                    let normal = if n.dot(d) > 0.0 { -n } else { n };
                    best = Some(Hit {
                        t,
                        point: o + d * t,
                        normal,
                        surface: i,
                    });
                }
            }
        }
        best
    }

    /// Whether the segment from `p` to `target` is blocked.
    pub fn occluded(&self, p: &Point3<f64>, normal: &Vector3<f64>, target: &Point3<f64>) -> bool {
        let origin = p + normal * 1e-7;
        let to = target - origin;
        let dist = to.norm();
        let d = to / dist;
        self.surfaces
            .iter()
            .any(|s| s.shape.intersect(&origin, &d).is_some_and(|(t, _)| t < dist - 1e-9))
    }
}
