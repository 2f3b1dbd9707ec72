//! Stokes/Mueller and Jones calculus.
//!
//! AoLP is measured from the horizontal (image x) axis toward image y and is
//! always reported in `[0, pi)`. Stokes conventions follow the usual
//! `s = [I0 + I90, I0 - I90, I45 - I135, s3]` with
//! `s3 = -2 Im(ex * conj(ey))`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use nalgebra::{Matrix2, Matrix4, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// DoLP below which the AoLP is reported as 0 and flagged degenerate.
pub const DEGENERATE_DOLP: f64 = 1e-6;

/// Relative slack allowed when checking `s0 >= |(s1, s2, s3)|`.
pub const REALIZABILITY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StokesVector(pub [f64; 4]);

impl StokesVector {
    pub const ZERO: Self = Self([0.0; 4]);

    pub const fn new(s0: f64, s1: f64, s2: f64, s3: f64) -> Self {
        Self([s0, s1, s2, s3])
    }

    pub const fn unpolarized(intensity: f64) -> Self {
        Self([intensity, 0.0, 0.0, 0.0])
    }

    /// Builds `[I, I rho cos 2phi, I rho sin 2phi, s3]`.
    pub fn from_linear(intensity: f64, dolp: f64, aolp: f64, s3: f64) -> Self {
        let (s, c) = (2.0 * aolp).sin_cos();
        Self([intensity, intensity * dolp * c, intensity * dolp * s, s3])
    }

    #[inline]
    pub fn s0(&self) -> f64 {
        self.0[0]
    }
    #[inline]
    pub fn s1(&self) -> f64 {
        self.0[1]
    }
    #[inline]
    pub fn s2(&self) -> f64 {
        self.0[2]
    }
    #[inline]
    pub fn s3(&self) -> f64 {
        self.0[3]
    }

    pub fn linear_magnitude(&self) -> f64 {
        self.s1().hypot(self.s2())
    }

    pub fn polarized_magnitude(&self) -> f64 {
        (self.s1() * self.s1() + self.s2() * self.s2() + self.s3() * self.s3()).sqrt()
    }

    /// `s0 >= |(s1, s2, s3)| - eps * s0` and `s0 >= 0`.
    pub fn is_realizable(&self, eps: f64) -> bool {
        let s0 = self.s0();
        s0 >= -eps && s0 + eps * s0.abs().max(self.polarized_magnitude()) >= self.polarized_magnitude()
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::from(self.0)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self([v[0], v[1], v[2], v[3]])
    }
}

impl Add for StokesVector {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self(std::array::from_fn(|i| self.0[i] + o.0[i]))
    }
}

impl Sub for StokesVector {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self(std::array::from_fn(|i| self.0[i] - o.0[i]))
    }
}

impl Mul<f64> for StokesVector {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        Self(self.0.map(|v| v * k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuellerMatrix(pub Matrix4<f64>);

impl MuellerMatrix {
    pub fn identity() -> Self {
        Self(Matrix4::identity())
    }

    pub fn diag(d: [f64; 4]) -> Self {
        Self(Matrix4::from_diagonal(&Vector4::from(d)))
    }

    /// Frame rotation that turns an AoLP `phi` into `phi + theta`.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = (2.0 * theta).sin_cos();
        Self(Matrix4::new(
            1.0, 0.0, 0.0, 0.0, //
            0.0, c, -s, 0.0, //
            0.0, s, c, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ))
    }

    pub fn apply(&self, s: &StokesVector) -> StokesVector {
        mueller_apply(self, s)
    }
}

impl Add for MuellerMatrix {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self(self.0 + o.0)
    }
}

impl Mul for MuellerMatrix {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self(self.0 * o.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JonesVector {
    pub ex: Complex64,
    pub ey: Complex64,
}

impl JonesVector {
    pub fn new(ex: Complex64, ey: Complex64) -> Self {
        Self { ex, ey }
    }

    /// Unit-amplitude linear polarization at angle `theta`.
    pub fn linear(theta: f64) -> Self {
        Self::new(Complex64::new(theta.cos(), 0.0), Complex64::new(theta.sin(), 0.0))
    }

    pub fn intensity(&self) -> f64 {
        self.ex.norm_sqr() + self.ey.norm_sqr()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JonesMatrix(pub Matrix2<Complex64>);

impl JonesMatrix {
    pub fn identity() -> Self {
        Self(Matrix2::identity())
    }

    /// `[[cos t, sin t], [-sin t, cos t]]`; `rotation(0.0)` is the identity.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let r = |v: f64| Complex64::new(v, 0.0);
        Self(Matrix2::new(r(c), r(s), r(-s), r(c)))
    }

    pub fn apply(&self, e: &JonesVector) -> JonesVector {
        let m = &self.0;
        JonesVector::new(
            m[(0, 0)] * e.ex + m[(0, 1)] * e.ey,
            m[(1, 0)] * e.ex + m[(1, 1)] * e.ey,
        )
    }
}

impl Mul for JonesMatrix {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self(self.0 * o.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolState {
    pub dolp: f64,
    pub aolp: f64,
    pub degenerate: bool,
}

/// Maps any angle into `[0, pi)`.
pub fn normalize_aolp(phi: f64) -> f64 {
    let r = phi.rem_euclid(PI);
    // rem_euclid can return exactly PI for tiny negative inputs
    if r >= PI {
        0.0
    } else {
        r
    }
}

/// Signed difference `a - b` of two AoLPs wrapped into `[-pi/2, pi/2)`.
pub fn aolp_difference(a: f64, b: f64) -> f64 {
    (a - b + PI / 2.0).rem_euclid(PI) - PI / 2.0
}

pub fn dolp_aolp(s: &StokesVector) -> Result<PolState> {
    dolp_aolp_with_threshold(s, DEGENERATE_DOLP)
}

pub fn dolp_aolp_with_threshold(s: &StokesVector, tau: f64) -> Result<PolState> {
    if !(s.s0() > 0.0) {
        return Err(Error::InvalidStokes(s.s0()));
    }
    let dolp = (s.linear_magnitude() / s.s0()).min(1.0);
    if dolp < tau {
        return Ok(PolState {
            dolp,
            aolp: 0.0,
            degenerate: true,
        });
    }
    Ok(PolState {
        dolp,
        aolp: normalize_aolp(0.5 * s.s2().atan2(s.s1())),
        degenerate: false,
    })
}

/// Intensity behind an ideal linear polarizer at filter angle `phi_c`.
pub fn malus_observe(s: &StokesVector, phi_c: f64) -> f64 {
    let (sn, cs) = (2.0 * phi_c).sin_cos();
    0.5 * (s.s0() + s.s1() * cs + s.s2() * sn)
}

pub fn jones_to_stokes(e: &JonesVector) -> StokesVector {
    let cross = e.ex * e.ey.conj();
    StokesVector([
        e.ex.norm_sqr() + e.ey.norm_sqr(),
        e.ex.norm_sqr() - e.ey.norm_sqr(),
        2.0 * cross.re,
        -2.0 * cross.im,
    ])
}

fn pauli() -> [Matrix2<Complex64>; 4] {
    let o = Complex64::new(0.0, 0.0);
    let l = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    [
        Matrix2::new(l, o, o, l),
        Matrix2::new(l, o, o, -l),
        Matrix2::new(o, l, l, o),
        Matrix2::new(o, -i, i, o),
    ]
}

/// Mueller matrix `M_ij = 1/2 Re tr(sigma_i J sigma_j J^H)`, the coherency
/// transform matching [`jones_to_stokes`].
pub fn jones_to_mueller(j: &JonesMatrix) -> MuellerMatrix {
    let sigma = pauli();
    let jh = j.0.adjoint();
    let mut m = Matrix4::zeros();
    for (r, si) in sigma.iter().enumerate() {
        for (c, sj) in sigma.iter().enumerate() {
            m[(r, c)] = 0.5 * (si * j.0 * sj * jh).trace().re;
        }
    }
    MuellerMatrix(m)
}

pub fn mueller_apply(m: &MuellerMatrix, s: &StokesVector) -> StokesVector {
    StokesVector::from_vector(&(m.0 * s.to_vector()))
}
