//! Pattern AoLP extraction from a patterned frame and the unpolarized frame
//! synthesized from the perpendicular uniform pair.

use crate::error::Result;
use crate::grid::Grid;
use crate::polcore::{normalize_aolp, StokesVector};
use crate::render::PolarimetricImage;

/// Relative specular-signal floor below which extraction fails.
pub const DEFAULT_TAU_SPEC: f64 = 0.01;

/// Per-pixel average of the two perpendicular uniform captures.
pub fn synthesize_unpolarized(a: &PolarimetricImage, b: &PolarimetricImage) -> Result<PolarimetricImage> {
    a.same_dims(b)?;
    let channels = a
        .channels
        .iter()
        .zip(&b.channels)
        .map(|(ga, gb)| {
            let data = ga.iter().zip(gb.iter()).map(|(x, y)| (*x + *y) * 0.5).collect();
            Grid::from_vec(ga.width(), ga.height(), data).expect("same dims")
        })
        .collect();
    Ok(PolarimetricImage { channels })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extraction {
    /// Projected AoLP in `[0, pi)`, camera frame.
    pub aolp: f64,
    /// Specular intensity `c_s s_i0`.
    pub specular: f64,
}

/// Recovers the projected AoLP from `s_o - s_hat`.
///
/// Returns `None` when the remaining linear magnitude is below
/// `tau_spec * s_o0`.
pub fn extract_aolp(s_o: &StokesVector, s_hat: &StokesVector, rho_i: f64, tau_spec: f64) -> Option<Extraction> {
    let d1 = s_o.s1() - s_hat.s1();
    let d2 = s_o.s2() - s_hat.s2();
    let mag = d1.hypot(d2);
    if !(mag > tau_spec * s_o.s0()) || mag == 0.0 {
        return None;
    }
    Some(Extraction {
        aolp: normalize_aolp(-0.5 * d2.atan2(d1)),
        specular: mag / rho_i,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pbrdf::Reflection;
    use crate::polcore::aolp_difference;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn perpendicular_pair_cancels() {
        let a = PolarimetricImage::single(Grid::filled(1, 1, StokesVector::new(1.0, 1.0, 0.0, 0.0)));
        let b = PolarimetricImage::single(Grid::filled(1, 1, StokesVector::new(1.0, -1.0, 0.0, 0.0)));
        let s = synthesize_unpolarized(&a, &b).unwrap();
        assert_eq!(*s.channel(0).get(0, 0), StokesVector::new(1.0, 0.0, 0.0, 0.0));
        let c = PolarimetricImage::single(Grid::filled(2, 1, StokesVector::ZERO));
        assert!(synthesize_unpolarized(&a, &c).is_err());
    }

    #[test]
    fn pure_specular_extraction_is_exact() {
        let phi = 0.7;
        let s_i = StokesVector::from_linear(1.0, 1.0, phi, 0.0);
        let r = Reflection {
            c_s: 0.4,
            ..Reflection::zero()
        };
        let s_o = r.apply(&s_i, &StokesVector::ZERO);
        let s_hat = StokesVector::new(0.4, 0.0, 0.0, 0.0);
        let e = extract_aolp(&s_o, &s_hat, 1.0, DEFAULT_TAU_SPEC).unwrap();
        assert!((e.aolp - phi).abs() < 1e-12);
        assert!((e.specular - 0.4).abs() < 1e-12);
    }

    #[test]
    fn no_specular_is_invalid() {
        let r = Reflection {
            c_d: 0.5,
            m21: 0.2,
            ..Reflection::zero()
        };
        let a = r.apply(&StokesVector::from_linear(1.0, 1.0, 0.0, 0.0), &StokesVector::ZERO);
        let b = r.apply(&StokesVector::from_linear(1.0, 1.0, PI / 2.0, 0.0), &StokesVector::ZERO);
        let s_hat = (a + b) * 0.5;
        assert!(extract_aolp(&a, &s_hat, 1.0, DEFAULT_TAU_SPEC).is_none());
    }

    #[test]
    fn invariant_to_diffuse_and_ambient() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10_000 {
            let rho = rng.random_range(0.3..1.0);
            let r = Reflection {
                c_s: rng.random_range(0.01..2.0),
                c_d: rng.random_range(0.0..2.0),
                m12: rng.random_range(-0.5..0.5),
                m13: rng.random_range(-0.5..0.5),
                m21: rng.random_range(-0.5..0.5),
                m31: rng.random_range(-0.5..0.5),
            };
            let s_a = StokesVector::from_linear(rng.random_range(0.0..2.0), rng.random_range(0.0..1.0), rng.random_range(0.0..PI), 0.0);
            let base = rng.random_range(0.0..PI);
            let phi = rng.random_range(0.0..PI);
            let src = |a: f64| StokesVector::from_linear(1.0, rho, a, 0.0);
            let s0 = r.apply(&src(base), &s_a);
            let s90 = r.apply(&src(base + PI / 2.0), &s_a);
            let s_hat = (s0 + s90) * 0.5;
            let s_o = r.apply(&src(phi), &s_a);
            let e = extract_aolp(&s_o, &s_hat, rho, 0.0).unwrap();
            assert!(aolp_difference(e.aolp, phi).abs() < 1e-9);
        }
    }
}
