//! Twisted-nematic SLM model and the polarization projector built around it.
//!
//! The projector keeps intensity constant across its throw and only rotates
//! the AoLP per pixel. Everything downstream consumes the calibrated
//! [`ProjectorPhotometry`] table, never the raw cell model.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Point3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{dims, Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::grid::Grid;
use crate::polcore::{
    aolp_difference, dolp_aolp, jones_to_stokes, JonesMatrix, JonesVector, StokesVector,
};

/// Twist angle of the alignment layers.
pub const TWIST: f64 = FRAC_PI_2;

/// Upper end of the controllable birefringence range, `sqrt(3) * twist`.
pub fn max_birefringence(twist: f64) -> f64 {
    3f64.sqrt() * twist
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TnlcParams {
    pub twist: f64,
    pub birefringence: f64,
}

impl TnlcParams {
    pub fn new(birefringence: f64) -> Self {
        Self {
            twist: TWIST,
            birefringence,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.twist.hypot(self.birefringence)
    }

    /// Amplitude `A` of the elliptical term.
    pub fn ellipse_amplitude(&self) -> f64 {
        let g = self.gamma();
        let a = (g - self.twist) * g.cos();
        let b = self.birefringence * g.sin();
        a.hypot(b) / g
    }

    /// Phase `B` of the elliptical term, resolved with `atan2`.
    pub fn ellipse_phase(&self) -> f64 {
        let g = self.gamma();
        (self.birefringence * g.sin()).atan2((g - self.twist) * g.cos())
    }
}

/// Jones matrix of one TN cell (absolute phase dropped).
pub fn tnlc_jones(p: &TnlcParams) -> JonesMatrix {
    let g = p.gamma();
    let (s, c) = g.sin_cos();
    let a = p.twist / g * s;
    let b = p.birefringence / g * s;
    let inner = JonesMatrix(nalgebra::Matrix2::new(
        Complex64::new(c, -b),
        Complex64::new(a, 0.0),
        Complex64::new(-a, 0.0),
        Complex64::new(c, b),
    ));
    JonesMatrix::rotation(-p.twist) * inner
}

/// Same cell written as a pure rotation plus an elliptical retarding term.
pub fn tnlc_jones_decomposed(p: &TnlcParams) -> JonesMatrix {
    let g = p.gamma();
    let rot = JonesMatrix::rotation(g - p.twist).0.map(|z| z * (p.twist / g));
    let amp = p.ellipse_amplitude();
    let phase = p.ellipse_phase();
    let ret = nalgebra::Matrix2::new(
        Complex64::from_polar(amp, -phase),
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, 0.0),
        Complex64::from_polar(amp, phase),
    );
    JonesMatrix(rot + JonesMatrix::rotation(-p.twist).0 * ret)
}

/// Linear command-to-birefringence map: 255 gives no rotation, 0 gives a
/// quarter turn.
pub fn pixel_value_to_beta(v: i32) -> Result<f64> {
    if !(0..=255).contains(&v) {
        return Err(Error::OutOfRange {
            what: "pixel value",
            value: v as f64,
        });
    }
    Ok(max_birefringence(TWIST) * (1.0 - v as f64 / 255.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LutEntry {
    pub v: u8,
    pub dolp: f64,
    pub aolp_deg: f64,
    /// Signed circular degree `s3 / s0`.
    #[serde(default)]
    pub docp: f64,
}

/// Calibrated command value -> polarization state table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "PhotometryRepr", into = "PhotometryRepr")]
pub struct ProjectorPhotometry {
    entries: Vec<LutEntry>,
    source_aolp: f64,
    source_intensity: f64,
    /// Rotation of each entry relative to `v = 255`, unwrapped along `v`.
    rotations: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhotometryRepr {
    source_aolp_deg: f64,
    source_intensity: f64,
    entries: Vec<LutEntry>,
}

impl From<PhotometryRepr> for ProjectorPhotometry {
    fn from(r: PhotometryRepr) -> Self {
        ProjectorPhotometry::from_entries(r.entries, r.source_aolp_deg.to_radians(), r.source_intensity)
    }
}

impl From<ProjectorPhotometry> for PhotometryRepr {
    fn from(p: ProjectorPhotometry) -> Self {
        PhotometryRepr {
            source_aolp_deg: p.source_aolp.to_degrees(),
            source_intensity: p.source_intensity,
            entries: p.entries,
        }
    }
}

impl ProjectorPhotometry {
    /// Builds the table from 256 entries ordered by `v`.
    pub fn from_entries(mut entries: Vec<LutEntry>, source_aolp: f64, source_intensity: f64) -> Self {
        entries.sort_by_key(|e| e.v);
        let mut rotations = vec![0.0; entries.len()];
        if let Some(last) = entries.len().checked_sub(1) {
            let mut prev = entries[last].aolp_deg.to_radians();
            let mut acc = 0.0;
            for i in (0..last).rev() {
                let a = entries[i].aolp_deg.to_radians();
                acc += aolp_difference(a, prev);
                prev = a;
                rotations[i] = acc;
            }
        }
        Self {
            entries,
            source_aolp,
            source_intensity,
            rotations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.len() != 256 || self.entries.iter().enumerate().any(|(i, e)| e.v as usize != i) {
            return Err(Error::InvalidConfig("photometry table must list v = 0..=255".into()));
        }
        if self.entries.iter().any(|e| !(e.dolp > 0.0 && e.dolp <= 1.0 + 1e-12)) {
            return Err(Error::InvalidConfig("photometry dolp must lie in (0, 1]".into()));
        }
        if self.rotation_span() < 89.9f64.to_radians() {
            return Err(Error::InvalidConfig("photometry AoLP rotation spans less than 89.9 deg".into()));
        }
        Ok(())
    }

    pub fn entries(&self) -> &[LutEntry] {
        &self.entries
    }

    pub fn entry(&self, v: u8) -> &LutEntry {
        &self.entries[v as usize]
    }

    pub fn source_aolp(&self) -> f64 {
        self.source_aolp
    }

    pub fn source_intensity(&self) -> f64 {
        self.source_intensity
    }

    /// Signed rotation of `v` relative to `v = 255`.
    pub fn rotation(&self, v: u8) -> f64 {
        self.rotations[v as usize]
    }

    /// `+1` when lowering `v` rotates the AoLP counter-clockwise, else `-1`.
    pub fn direction(&self) -> f64 {
        if self.rotations[0] >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn rotation_span(&self) -> f64 {
        let (lo, hi) = self
            .rotations
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), r| (l.min(*r), h.max(*r)));
        hi - lo
    }

    /// AoLP at `v = 255`, the reference of all rotation magnitudes.
    pub fn zero_aolp(&self) -> f64 {
        self.entries[255].aolp_deg.to_radians()
    }

    /// Command whose rotation magnitude is closest to `magnitude` (radians).
    pub fn command_for_rotation(&self, magnitude: f64) -> u8 {
        let dir = self.direction();
        let mut best = (f64::INFINITY, 255u8);
        for (v, r) in self.rotations.iter().enumerate() {
            let err = (dir * r - magnitude).abs();
            if err < best.0 {
                best = (err, v as u8);
            }
        }
        best.1
    }

    fn stokes_from(&self, aolp: f64, dolp: f64, docp: f64) -> StokesVector {
        let i = self.source_intensity;
        StokesVector::from_linear(i, dolp, aolp, docp * i)
    }

    pub fn stokes(&self, v: u8) -> StokesVector {
        let e = self.entry(v);
        self.stokes_from(e.aolp_deg.to_radians(), e.dolp, e.docp)
    }

    /// Stokes vector of a polarization state blended linearly in rotation,
    /// DoLP and circular degree between two commands.
    pub fn stokes_blend(&self, a: u8, b: u8, t: f64) -> StokesVector {
        let (ea, eb) = (self.entry(a), self.entry(b));
        let rot = self.rotation(a) * (1.0 - t) + self.rotation(b) * t;
        let dolp = ea.dolp * (1.0 - t) + eb.dolp * t;
        let docp = ea.docp * (1.0 - t) + eb.docp * t;
        self.stokes_from(self.zero_aolp() + rot, dolp, docp)
    }

    /// Four-way version of [`Self::stokes_blend`] with bilinear weights.
    pub fn stokes_bilinear(&self, v: [u8; 4], w: [f64; 4]) -> StokesVector {
        let mut rot = 0.0;
        let mut dolp = 0.0;
        let mut docp = 0.0;
        for (vi, wi) in v.iter().zip(w) {
            let e = self.entry(*vi);
            rot += self.rotation(*vi) * wi;
            dolp += e.dolp * wi;
            docp += e.docp * wi;
        }
        self.stokes_from(self.zero_aolp() + rot, dolp, docp)
    }
}

/// Simulated photometric calibration: a uniform pattern of every command is
/// thrown at a lensless polarimetric camera.
///
/// `dolp_mismatch` scales the DoLP down linearly toward `v = 0`
/// (`dolp *= 1 - m (1 - v/255)`); 0 leaves the ideal cell untouched.
pub fn calibrate_photometry(source_aolp: f64, source_intensity: f64, dolp_mismatch: f64) -> ProjectorPhotometry {
    let source = JonesVector::linear(source_aolp);
    let entries = (0..=255u8)
        .map(|v| {
            let beta = pixel_value_to_beta(v as i32).expect("v in range");
            let s = jones_to_stokes(&tnlc_jones(&TnlcParams::new(beta)).apply(&source));
            let st = dolp_aolp(&s).expect("lossless cell keeps intensity");
            let k = 1.0 - dolp_mismatch * (1.0 - v as f64 / 255.0);
            LutEntry {
                v,
                dolp: st.dolp * k,
                aolp_deg: st.aolp.to_degrees(),
                docp: s.s3() / s.s0() * k,
            }
        })
        .collect();
    ProjectorPhotometry::from_entries(entries, source_aolp, source_intensity)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorModel {
    pub intrinsics: Intrinsics,
    /// World to projector.
    pub pose: Pose,
    pub width: usize,
    pub height: usize,
    pub photometry: ProjectorPhotometry,
    /// Optional Gaussian defocus of the thrown field, in projector pixels.
    #[serde(default)]
    pub psf_sigma: f64,
}

impl ProjectorModel {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("projector resolution must be non-zero".into()));
        }
        self.intrinsics.validate(self.width, self.height, "projector")?;
        self.photometry.validate()
    }

    pub fn center(&self) -> Point3<f64> {
        self.pose.center()
    }

    /// Continuous projector coordinates of a world point, if it lands on the
    /// panel.
    pub fn project(&self, world: &Point3<f64>) -> Option<(f64, f64)> {
        let (x, y) = self.intrinsics.project(&self.pose.transform_point(world))?;
        let inside = |c: f64, n: usize| c >= -0.5 && c < n as f64 - 0.5;
        (inside(x, self.width) && inside(y, self.height)).then_some((x, y))
    }
}

/// Per-pixel Stokes vectors leaving the projector for a command image.
pub fn throw_stokes(proj: &ProjectorModel, command: &Grid<u8>) -> Result<Grid<StokesVector>> {
    if command.width() != proj.width || command.height() != proj.height {
        return Err(Error::DimensionMismatch {
            expected: dims(proj.width, proj.height),
            found: dims(command.width(), command.height()),
        });
    }
    let field = command.map(|v| proj.photometry.stokes(*v));
    Ok(if proj.psf_sigma > 0.0 {
        gaussian_blur(&field, proj.psf_sigma)
    } else {
        field
    })
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(field: &Grid<StokesVector>, sigma: f64) -> Grid<StokesVector> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let (w, h) = (field.width() as isize, field.height() as isize);
    let pass = |src: &Grid<StokesVector>, horizontal: bool| {
        Grid::from_fn(src.width(), src.height(), |x, y| {
            let mut acc = StokesVector::ZERO;
            for (k, wk) in kernel.iter().enumerate() {
                let o = k as isize - radius;
                let (sx, sy) = if horizontal {
                    ((x as isize + o).clamp(0, w - 1), y as isize)
                } else {
                    (x as isize, (y as isize + o).clamp(0, h - 1))
                };
                acc = acc + *src.get(sx as usize, sy as usize) * (*wk / norm);
            }
            acc
        })
    };
    pass(&pass(field, true), false)
}

/// Default horizontal source used throughout the simulator.
pub fn default_photometry() -> ProjectorPhotometry {
    calibrate_photometry(0.0, 1.0, 0.0)
}

/// Angle between the AoLP at `v = 0` and at `v = 255`, wrapped into `[0, pi/2]`.
pub fn perpendicular_pair_angle(p: &ProjectorPhotometry) -> f64 {
    let d = aolp_difference(p.entry(0).aolp_deg.to_radians(), p.entry(255).aolp_deg.to_radians());
    d.abs().min(PI - d.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_abs_diff(a: &JonesMatrix, b: &JonesMatrix) -> f64 {
        (a.0 - b.0).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_birefringence_is_identity() {
        let j = tnlc_jones(&TnlcParams::new(0.0));
        assert!(max_abs_diff(&j, &JonesMatrix::identity()) < 1e-15);
    }

    #[test]
    fn max_birefringence_is_quarter_turn() {
        let j = tnlc_jones(&TnlcParams::new(max_birefringence(TWIST)));
        // -J_R(-pi/2): maps horizontal onto vertical with no ellipticity
        let out = jones_to_stokes(&j.apply(&JonesVector::linear(0.0)));
        assert_abs_diff_eq!(out.s1(), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.s2(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.s3(), 0.0, epsilon = 1e-12);
        assert!(max_abs_diff(&j, &JonesMatrix::rotation(TWIST)) < 1e-12);
    }

    #[test]
    fn closed_forms_agree_and_are_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let p = TnlcParams::new(rng.random_range(0.0..=max_birefringence(TWIST)));
            let a = tnlc_jones(&p);
            let b = tnlc_jones_decomposed(&p);
            assert!(max_abs_diff(&a, &b) < 1e-12, "{p:?}");
            let u = a.0 * a.0.adjoint();
            assert!(max_abs_diff(&JonesMatrix(u), &JonesMatrix::identity()) < 1e-12);
        }
    }

    #[test]
    fn pixel_value_map() {
        assert_eq!(pixel_value_to_beta(255).unwrap(), 0.0);
        assert_abs_diff_eq!(pixel_value_to_beta(0).unwrap(), 3f64.sqrt() * PI / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            pixel_value_to_beta(128).unwrap(),
            3f64.sqrt() * (PI / 2.0) * (127.0 / 255.0),
            epsilon = 1e-15
        );
        assert!(pixel_value_to_beta(256).is_err());
        assert!(pixel_value_to_beta(-1).is_err());
    }

    #[test]
    fn horizontal_source_calibration() {
        let p = default_photometry();
        p.validate().unwrap();
        let hi = p.entry(255);
        assert_abs_diff_eq!(hi.dolp, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.rotation(255), 0.0, epsilon = 1e-12);
        let lo = p.entry(0);
        assert_abs_diff_eq!(lo.dolp, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.rotation(0).abs(), FRAC_PI_2, epsilon = 1e-9);
        assert!(p.rotation_span() >= 89.9f64.to_radians());
        assert!(perpendicular_pair_angle(&p).to_degrees() > 89.9);
        // rotation is monotone in v
        let dir = p.direction();
        for v in 0..255u8 {
            assert!(dir * p.rotation(v) >= dir * p.rotation(v + 1) - 1e-12);
        }
    }

    #[test]
    fn diagonal_source_loses_dolp_midrange() {
        let p = calibrate_photometry(PI / 4.0, 1.0, 0.0);
        assert!(p.entry(100).dolp < 0.9);
        assert!(p.rotation_span() >= 89.9f64.to_radians());
        assert_abs_diff_eq!(p.entry(255).dolp, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mismatch_knob_scales_low_end() {
        let p = calibrate_photometry(0.0, 1.0, 0.05);
        assert_abs_diff_eq!(p.entry(0).dolp, 0.95, epsilon = 1e-12);
        assert_abs_diff_eq!(p.entry(255).dolp, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn inverse_lookup_hits_endpoints() {
        let p = default_photometry();
        assert_eq!(p.command_for_rotation(0.0), 255);
        assert_eq!(p.command_for_rotation(FRAC_PI_2), 0);
        let v = p.command_for_rotation(FRAC_PI_2 / 2.0);
        assert!((p.direction() * p.rotation(v) - FRAC_PI_2 / 2.0).abs() < 1f64.to_radians());
    }

    #[test]
    fn photometry_json_roundtrip() {
        let p = default_photometry();
        let s = serde_json::to_string(&p).unwrap();
        let q: ProjectorPhotometry = serde_json::from_str(&s).unwrap();
        assert_eq!(q.entries().len(), 256);
        assert_abs_diff_eq!(q.rotation(0), p.rotation(0), epsilon = 1e-12);
    }

    fn projector(w: usize, h: usize) -> ProjectorModel {
        ProjectorModel {
            intrinsics: Intrinsics::new(100.0, 100.0, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0),
            pose: Pose::identity(),
            width: w,
            height: h,
            photometry: default_photometry(),
            psf_sigma: 0.0,
        }
    }

    #[test]
    fn throw_examples() {
        let proj = projector(8, 4);
        let hi = throw_stokes(&proj, &Grid::filled(8, 4, 255)).unwrap();
        for s in hi.iter() {
            assert_abs_diff_eq!(s.s1(), 1.0, epsilon = 1e-12);
        }
        let lo = throw_stokes(&proj, &Grid::filled(8, 4, 0)).unwrap();
        for s in lo.iter() {
            assert_abs_diff_eq!(s.s1(), -1.0, epsilon = 1e-9);
            assert_eq!(s.s0(), 1.0);
        }
        assert!(throw_stokes(&proj, &Grid::filled(7, 4, 0)).is_err());
    }

    #[test]
    fn throw_is_intensity_invisible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut proj = projector(32, 16);
        let cmd = Grid::from_fn(32, 16, |_, _| rng.random::<u8>());
        for sigma in [0.0, 1.5] {
            proj.psf_sigma = sigma;
            let f = throw_stokes(&proj, &cmd).unwrap();
            let (lo, hi) = f.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), s| {
                (l.min(s.s0()), h.max(s.s0()))
            });
            assert!(hi - lo < 1e-9);
            assert!(f.iter().all(|s| s.is_realizable(1e-9)));
        }
    }
}
