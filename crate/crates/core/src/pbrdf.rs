//! Polarimetric reflection model.
//!
//! Specular reflection uses the co-axial Mueller matrix `c_s diag(1,1,-1,-1)`.
//! Diffuse reflection keeps only the first row and column of its Mueller
//! matrix. The radiometric terms come from a self-contained microfacet
//! surrogate parameterized by refractive index `mu`, specular albedo `k_s`,
//! roughness, distribution shape and diffuse-polarization concentration
//! `kappa`:
//!
//! * `D`: generalized Gaussian over microfacet slopes,
//!   `D = shape / (2 pi a^2 Gamma(2/shape)) exp(-(tan(th_h)/a)^shape) / cos^4(th_h)`
//!   (Beckmann for `shape = 2`).
//! * `G`: Smith masking-shadowing with the Beckmann `Lambda` at roughness `a`.
//! * `c_s = k_s D F(mu, h.v) G / (4 n.v)`.
//! * `c_d = K_b (n.l) (1 - F(mu, n.l)) (1 - F(mu, n.v)) / pi`.
//! * diffuse polarization degree `rho_d(th) = r(th)^(1/kappa)` with
//!   `r = (T_p - T_s) / (T_p + T_s)` the Fresnel transmittance contrast;
//!   oriented along the normal projected perpendicular to the ray.
//!
//! The exit side (view angle) fills `m21, m31`. The entry side (light angle)
//! fills `m12, m13` only when [`MaterialParams::entry_polarization`] is set;
//! by default subsurface scattering is treated as insensitive to the incident
//! polarization so the projected pattern never reaches `s0`.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{dot, lift, normalize, Real, Vec3};
use crate::polcore::{normalize_aolp, MuellerMatrix, StokesVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialParams {
    /// Refractive index.
    pub mu: f64,
    /// Specular albedo.
    pub k_s: f64,
    pub roughness: f64,
    /// Exponent of the slope distribution.
    pub shape: f64,
    /// Diffuse-polarization concentration.
    pub kappa: f64,
    #[serde(default)]
    pub entry_polarization: bool,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self {
            mu: 1.5,
            k_s: 0.8,
            roughness: 0.3,
            shape: 2.0,
            kappa: 1.0,
            entry_polarization: false,
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &'static str, value: f64| Err(Error::OutOfRange { what, value });
        if !(self.mu > 1.0) {
            return bad("refractive index", self.mu);
        }
        if !(0.0..=1.0).contains(&self.k_s) {
            return bad("specular albedo", self.k_s);
        }
        if !(self.roughness > 0.0 && self.roughness <= 1.0) {
            return bad("roughness", self.roughness);
        }
        if !(self.shape > 0.0) {
            return bad("distribution shape", self.shape);
        }
        if !(self.kappa >= 0.0) {
            return bad("concentration", self.kappa);
        }
        Ok(())
    }

    /// The five estimated globals in a fixed order.
    pub fn to_array(&self) -> [f64; 5] {
        [self.mu, self.k_s, self.roughness, self.shape, self.kappa]
    }

    pub fn with_array(&self, p: &[f64]) -> Self {
        Self {
            mu: p[0],
            k_s: p[1],
            roughness: p[2],
            shape: p[3],
            kappa: p[4],
            entry_polarization: self.entry_polarization,
        }
    }

    pub fn lift<T: Real>(&self) -> Surrogate<T> {
        Surrogate {
            mu: T::cst(self.mu),
            k_s: T::cst(self.k_s),
            roughness: T::cst(self.roughness),
            shape: T::cst(self.shape),
            kappa: T::cst(self.kappa),
            entry_polarization: self.entry_polarization,
        }
    }
}

/// Global material parameters over an arbitrary scalar type.
#[derive(Debug, Clone, Copy)]
pub struct Surrogate<T> {
    pub mu: T,
    pub k_s: T,
    pub roughness: T,
    pub shape: T,
    pub kappa: T,
    pub entry_polarization: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadingGeometry {
    pub normal: Vector3<f64>,
    pub light: Vector3<f64>,
    pub view: Vector3<f64>,
}

impl ShadingGeometry {
    pub fn new(normal: Vector3<f64>, light: Vector3<f64>, view: Vector3<f64>) -> Self {
        Self {
            normal: normal.normalize(),
            light: light.normalize(),
            view: view.normalize(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for v in [&self.normal, &self.light, &self.view] {
            if (v.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::OutOfRange {
                    what: "direction length",
                    value: v.norm(),
                });
            }
        }
        Ok(())
    }
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// `(R_s, R_p)` for light arriving from air at `cos_i`.
pub fn fresnel_rs_rp<T: Real>(mu: T, cos_i: T) -> (T, T) {
    let c = cos_i.min_value(1.0);
    let sin2_t = (T::one() - c * c) / (mu * mu);
    let cos_t = (T::one() - sin2_t).sqrt();
    let rs = (c - mu * cos_t) / (c + mu * cos_t);
    let rp = (mu * c - cos_t) / (mu * c + cos_t);
    (rs * rs, rp * rp)
}

/// Unpolarized Fresnel reflectance.
pub fn fresnel_reflectance<T: Real>(mu: T, cos_i: T) -> T {
    let (rs, rp) = fresnel_rs_rp(mu, cos_i);
    (rs + rp) * 0.5
}

/// `(T_p - T_s) / (T_p + T_s)`; non-negative for dielectrics.
pub fn transmittance_contrast<T: Real>(mu: T, cos_i: T) -> T {
    let (rs, rp) = fresnel_rs_rp(mu, cos_i);
    let (ts, tp) = (T::one() - rs, T::one() - rp);
    (tp - ts) / (tp + ts)
}

/// Degree of the diffuse polarization created at one interface crossing.
pub fn diffuse_polarization_degree<T: Real>(mu: T, kappa: T, cos_i: T) -> T {
    if kappa.value() <= 0.0 {
        return T::zero();
    }
    transmittance_contrast(mu, cos_i).powr(kappa.recip())
}

/// Normalized generalized-Gaussian slope distribution.
pub fn microfacet_distribution<T: Real>(cos_h: T, roughness: T, shape: T) -> T {
    if cos_h.value() <= 0.0 {
        return T::zero();
    }
    let c2 = cos_h * cos_h;
    let tan2 = (T::one() - c2) / c2;
    let u = tan2 / (roughness * roughness);
    let norm = shape / ((roughness * roughness) * (2.0 * PI) * (shape.recip() * 2.0).ln_gamma().exp());
    norm * (-u.powr(shape * 0.5)).exp() / (c2 * c2)
}

/// Beckmann Smith `Lambda`.
pub fn smith_lambda<T: Real>(cos_t: T, roughness: T) -> T {
    let c = cos_t.value();
    if c >= 1.0 {
        return T::zero();
    }
    let tan = (T::one() - cos_t * cos_t).sqrt() / cos_t;
    let a = (roughness * tan).recip();
    if a.value() > 6.0 {
        return T::zero();
    }
    ((-(a * a)).exp() / (a * PI.sqrt()) - a.erfc()) * 0.5
}

pub fn smith_masking<T: Real>(cos_l: T, cos_v: T, roughness: T) -> T {
    (T::one() + smith_lambda(cos_l, roughness) + smith_lambda(cos_v, roughness)).recip()
}

/// Radiometric and diffuse-polarization coefficients at one shading point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reflection<T> {
    pub c_s: T,
    pub c_d: T,
    pub m12: T,
    pub m13: T,
    pub m21: T,
    pub m31: T,
}

impl<T: Real> Reflection<T> {
    pub fn zero() -> Self {
        Self {
            c_s: T::zero(),
            c_d: T::zero(),
            m12: T::zero(),
            m13: T::zero(),
            m21: T::zero(),
            m31: T::zero(),
        }
    }

    /// `(M_s + M_d) s_i`, returning `(s0, s1, s2)`; `s3` is dropped.
    pub fn apply_linear(&self, s: &StokesVector) -> [T; 3] {
        let [i0, i1, i2, _] = s.0;
        [
            self.c_s * i0 + self.c_d * (self.m12 * i1 + self.m13 * i2 + i0),
            self.c_s * i1 + self.c_d * self.m21 * i0,
            -(self.c_s * i2) + self.c_d * self.m31 * i0,
        ]
    }
}

impl Reflection<f64> {
    pub fn specular_mueller(&self) -> MuellerMatrix {
        specular_mueller(self.c_s)
    }

    pub fn diffuse_mueller(&self) -> MuellerMatrix {
        let mut m = nalgebra::Matrix4::zeros();
        m[(0, 0)] = 1.0;
        m[(0, 1)] = self.m12;
        m[(0, 2)] = self.m13;
        m[(1, 0)] = self.m21;
        m[(2, 0)] = self.m31;
        MuellerMatrix(m * self.c_d)
    }

    /// Full 4-component observation including the mirrored `s3`.
    pub fn apply(&self, s_i: &StokesVector, s_a: &StokesVector) -> StokesVector {
        let [s0, s1, s2] = self.apply_linear(s_i);
        StokesVector::new(s0, s1, s2, -self.c_s * s_i.s3()) + *s_a
    }
}

/// `(cos 2phi, sin 2phi)` of the normal projected perpendicular to `ray`.
fn plane_azimuth<T: Real>(n: &Vec3<T>, ray: &Vec3<T>) -> Option<(T, T)> {
    let k = dot(n, ray);
    let px = n[0] - k * ray[0];
    let py = n[1] - k * ray[1];
    let r = px * px + py * py;
    if r.value() < 1e-24 {
        return None;
    }
    Some(((px * px - py * py) / r, px * py * 2.0 / r))
}

/// Evaluates the surrogate at one point. Backfacing geometry yields zeros.
pub fn reflection<T: Real>(
    mat: &Surrogate<T>,
    albedo: T,
    normal: &Vec3<T>,
    light: &[f64; 3],
    view: &[f64; 3],
) -> Reflection<T> {
    let l: Vec3<T> = lift(light);
    let v: Vec3<T> = lift(view);
    let n = *normal;
    let nl = dot(&n, &l);
    let nv = dot(&n, &v);
    if nl.value() <= 0.0 || nv.value() <= 0.0 {
        return Reflection::zero();
    }
    let h = normalize(&[l[0] + v[0], l[1] + v[1], l[2] + v[2]]);
    let nh = dot(&n, &h);
    let hv = dot(&h, &v);
    let d = microfacet_distribution(nh, mat.roughness, mat.shape);
    let g = smith_masking(nl, nv, mat.roughness);
    let f = fresnel_reflectance(mat.mu, hv);
    let c_s = mat.k_s * d * f * g / (nv * 4.0);

    let f_in = fresnel_reflectance(mat.mu, nl);
    let f_out = fresnel_reflectance(mat.mu, nv);
    let c_d = albedo * nl * (T::one() - f_in) * (T::one() - f_out) / PI;

    let mut rho_out = diffuse_polarization_degree(mat.mu, mat.kappa, nv);
    let mut rho_in = if mat.entry_polarization {
        diffuse_polarization_degree(mat.mu, mat.kappa, nl)
    } else {
        T::zero()
    };
    let total = rho_out.value() + rho_in.value();
    if total > 1.0 {
        rho_out = rho_out / total;
        rho_in = rho_in / total;
    }
    let (m21, m31) = match plane_azimuth(&n, &v) {
        Some((c, s)) => (rho_out * c, rho_out * s),
        None => (T::zero(), T::zero()),
    };
    let (m12, m13) = match plane_azimuth(&n, &l) {
        Some((c, s)) if mat.entry_polarization => (rho_in * c, rho_in * s),
        _ => (T::zero(), T::zero()),
    };
    Reflection {
        c_s,
        c_d,
        m12,
        m13,
        m21,
        m31,
    }
}

/// `(c_s, c_d)` for plain `f64` inputs.
pub fn radiometric_terms(mat: &MaterialParams, albedo: f64, geom: &ShadingGeometry) -> (f64, f64) {
    let r = reflection::<f64>(&mat.lift(), albedo, &arr(&geom.normal), &arr(&geom.light), &arr(&geom.view));
    (r.c_s, r.c_d)
}

pub fn reflection_at(mat: &MaterialParams, albedo: f64, geom: &ShadingGeometry) -> Reflection<f64> {
    reflection::<f64>(&mat.lift(), albedo, &arr(&geom.normal), &arr(&geom.light), &arr(&geom.view))
}

pub fn specular_mueller(c_s: f64) -> MuellerMatrix {
    MuellerMatrix::diag([c_s, c_s, -c_s, -c_s])
}

/// Diffuse Mueller matrix for the given geometry, scaled by `c_d`.
pub fn diffuse_mueller(mat: &MaterialParams, geom: &ShadingGeometry, c_d: f64) -> MuellerMatrix {
    let r = reflection_at(mat, 1.0, geom);
    Reflection { c_d, ..r }.diffuse_mueller()
}

/// `s_o = (M_s + M_d) s_i + s_a`.
pub fn observe(
    s_i: &StokesVector,
    mat: &MaterialParams,
    albedo: f64,
    geom: &ShadingGeometry,
    s_a: &StokesVector,
) -> StokesVector {
    reflection_at(mat, albedo, geom).apply(s_i, s_a)
}

/// Observed AoLP written directly from the specular/diffuse/ambient mix.
pub fn observed_aolp(c_s: f64, c_d: f64, m21: f64, m31: f64, s_i: &StokesVector, s_a: &StokesVector) -> f64 {
    let num = -c_s * s_i.s2() + c_d * m31 * s_i.s0() + s_a.s2();
    let den = c_s * s_i.s1() + c_d * m21 * s_i.s0() + s_a.s1();
    normalize_aolp(0.5 * num.atan2(den))
}
