//! Captures to projector-column correspondences.

use std::f64::consts::{FRAC_PI_4, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::extract::{extract_aolp, DEFAULT_TAU_SPEC};
use super::patterns::{gray_decode, FrameTag, PatternSequence, SHIFT_SEQUENCES};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::polcore::{aolp_difference, StokesVector};
use crate::render::PolarimetricImage;
use crate::slm::ProjectorPhotometry;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeParams {
    pub tau_spec: f64,
    /// Maximum spread of the three per-sequence positions, in projector px.
    pub tau_seq: f64,
    /// Discontinuity threshold of the post-filter, in projector px.
    pub tau_disc: f64,
    pub threshold_deg: f64,
    /// Color channel used for decoding.
    pub channel: usize,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            tau_spec: DEFAULT_TAU_SPEC,
            tau_seq: 1.0,
            tau_disc: 2.0,
            threshold_deg: 45.0,
            channel: 0,
        }
    }
}

/// Decoded projector column per camera pixel; `None` marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMap {
    pub columns: Grid<Option<f64>>,
}

impl CorrespondenceMap {
    pub fn valid_count(&self) -> usize {
        self.columns.iter().filter(|c| c.is_some()).count()
    }

    pub fn width(&self) -> usize {
        self.columns.width()
    }

    pub fn height(&self) -> usize {
        self.columns.height()
    }
}

/// Frame-invariant inputs needed to map a measured AoLP to a rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AolpReference {
    /// Camera-frame AoLP of the `v = 255` state.
    pub zero: f64,
    /// Sign of the rotation as `v` decreases.
    pub direction: f64,
    /// DoLP of the projected light.
    pub dolp: f64,
}

impl AolpReference {
    pub fn new(photometry: &ProjectorPhotometry, roll: f64) -> Self {
        Self {
            zero: photometry.zero_aolp() + roll,
            direction: photometry.direction(),
            dolp: photometry.entry(255).dolp,
        }
    }

    /// Rotation magnitude in roughly `[0, pi/2]` for an extracted AoLP.
    pub fn rotation(&self, aolp: f64) -> f64 {
        FRAC_PI_4 + self.direction * aolp_difference(aolp, self.zero + self.direction * FRAC_PI_4)
    }
}

/// Least-squares phase `theta` of `r_k = a + A cos(theta + 2 pi k / K)`, in `[0, 2 pi)`.
pub fn fit_phase(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let (mut b, mut c) = (0.0, 0.0);
    for (k, r) in samples.iter().enumerate() {
        let d = 2.0 * PI * k as f64 / n;
        b += r * d.cos();
        c += r * d.sin();
    }
    // equally spaced shifts make the normal equations diagonal
    (-c).atan2(b).rem_euclid(2.0 * PI)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DecodeStats {
    pub valid: usize,
    pub no_signal: usize,
    pub disagreement: usize,
    pub out_of_range: usize,
}

enum PixelOutcome {
    Valid(f64),
    NoSignal,
    Disagreement,
    OutOfRange,
}

fn decode_pixel(
    seq: &PatternSequence,
    pixels: &[StokesVector],
    s_hat: &StokesVector,
    reference: &AolpReference,
    params: &DecodeParams,
) -> PixelOutcome {
    let mut rotations = Vec::with_capacity(pixels.len());
    for s in pixels {
        match extract_aolp(s, s_hat, reference.dolp, params.tau_spec) {
            Some(e) => rotations.push(reference.rotation(e.aolp)),
            None => return PixelOutcome::NoSignal,
        }
    }
    let p = &seq.params;
    let t = p.period as f64;
    let threshold = params.threshold_deg.to_radians();
    let mut gray = [0u32; SHIFT_SEQUENCES];
    let mut phase = vec![0.0; p.phases];
    for (tag, r) in seq.tags.iter().zip(&rotations) {
        match *tag {
            FrameTag::Gray { bit, sequence } if *r > threshold => gray[sequence] |= 1 << bit,
            FrameTag::Phase { k } => phase[k] = *r,
            _ => {}
        }
    }
    let m = fit_phase(&phase) / (2.0 * PI) * t;
    let mut cand: Vec<f64> = (0..SHIFT_SEQUENCES)
        .map(|j| {
            let s = p.shift(j);
            gray_decode(gray[j]) as f64 * t + (m + s).rem_euclid(t) - s
        })
        .collect();
    let mut sorted = cand.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[SHIFT_SEQUENCES / 2];
    for c in cand.iter_mut() {
        *c -= t * ((*c - median) / t).round();
    }
    let (lo, hi) = cand.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), c| (l.min(*c), h.max(*c)));
    if hi - lo > params.tau_seq {
        return PixelOutcome::Disagreement;
    }
    let x = cand.iter().sum::<f64>() / cand.len() as f64;
    if x < 0.0 || x >= seq.width as f64 {
        return PixelOutcome::OutOfRange;
    }
    PixelOutcome::Valid(x)
}

/// Extracts, thresholds, phase-fits and unifies every pixel.
pub fn decode(
    seq: &PatternSequence,
    captures: &[PolarimetricImage],
    reference: &AolpReference,
    params: &DecodeParams,
) -> Result<(CorrespondenceMap, DecodeStats)> {
    if captures.len() != seq.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} captures", seq.len()),
            found: format!("{} captures", captures.len()),
        });
    }
    for c in captures {
        captures[0].same_dims(c)?;
    }
    if params.channel >= captures[0].channels.len() {
        return Err(Error::InvalidConfig(format!("decode channel {} does not exist", params.channel)));
    }
    let i255 = seq.position(FrameTag::Uniform { v: 255 });
    let i0 = seq.position(FrameTag::Uniform { v: 0 });
    let (Some(i255), Some(i0)) = (i255, i0) else {
        return Err(Error::InvalidConfig("sequence lacks the perpendicular uniform pair".into()));
    };
    let grids: Vec<&Grid<StokesVector>> = captures.iter().map(|c| c.channel(params.channel)).collect();
    let (w, h) = (grids[0].width(), grids[0].height());
    let outcomes: Vec<PixelOutcome> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let pixels: Vec<StokesVector> = grids.iter().map(|g| g.as_slice()[i]).collect();
            let s_hat = (pixels[i255] + pixels[i0]) * 0.5;
            decode_pixel(seq, &pixels, &s_hat, reference, params)
        })
        .collect();
    let mut stats = DecodeStats::default();
    let data = outcomes
        .into_iter()
        .map(|o| match o {
            PixelOutcome::Valid(x) => {
                stats.valid += 1;
                Some(x)
            }
            PixelOutcome::NoSignal => {
                stats.no_signal += 1;
                None
            }
            PixelOutcome::Disagreement => {
                stats.disagreement += 1;
                None
            }
            PixelOutcome::OutOfRange => {
                stats.out_of_range += 1;
                None
            }
        })
        .collect();
    Ok((
        CorrespondenceMap {
            columns: Grid::from_vec(w, h, data)?,
        },
        stats,
    ))
}

/// Invalidates pixels that jump by more than `tau` from at least two of their
/// in-image 4-neighbors; invalid neighbors count as jumps.
pub fn filter_discontinuities(map: &CorrespondenceMap, tau: f64) -> CorrespondenceMap {
    let g = &map.columns;
    let (w, h) = (g.width() as isize, g.height() as isize);
    let columns = Grid::from_fn(g.width(), g.height(), |x, y| {
        let v = (*g.get(x, y))?;
        let jumps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
            .iter()
            .filter(|(dx, dy)| {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    return false;
                }
                match g.get(nx as usize, ny as usize) {
                    Some(n) => (n - v).abs() > tau,
                    None => true,
                }
            })
            .count();
        (jumps < 2).then_some(v)
    });
    CorrespondenceMap { columns }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::patterns::{make_patterns, PatternParams};
    use crate::slm::{calibrate_photometry, default_photometry};

    #[test]
    fn four_step_phase_matches_closed_form() {
        for i in 0..100 {
            let theta = i as f64 * 0.0627;
            let r: Vec<f64> = (0..4).map(|k| 0.3 + 0.7 * (theta + PI / 2.0 * k as f64).cos()).collect();
            let closed = (r[3] - r[1]).atan2(r[0] - r[2]).rem_euclid(2.0 * PI);
            assert!((fit_phase(&r) - closed).abs() < 1e-12);
            let d = (fit_phase(&r) - theta + PI).rem_euclid(2.0 * PI) - PI;
            assert!(d.abs() < 1e-6);
        }
    }

    #[test]
    fn rotation_reference_inverts_lut() {
        for phot in [default_photometry(), calibrate_photometry(0.7, 1.0, 0.0)] {
            for roll in [0.0, 0.2] {
                let r = AolpReference::new(&phot, roll);
                for v in [0u8, 40, 128, 200, 255] {
                    let aolp = phot.entry(v).aolp_deg.to_radians() + roll;
                    let expect = phot.direction() * phot.rotation(v);
                    assert!((r.rotation(aolp) - expect).abs() < 1e-9, "{v}");
                }
            }
        }
    }

    /// Camera pixel `x` sees projector column `x * 0.9 + 10` through a mirror.
    fn synthetic_captures(seq: &PatternSequence, phot: &ProjectorPhotometry) -> Vec<PolarimetricImage> {
        seq.frames
            .iter()
            .map(|f| {
                PolarimetricImage::single(Grid::from_fn(200, 1, |x, _| {
                    let xp = x as f64 * 0.9 + 10.0;
                    let s = phot.stokes(*f.get(xp.round() as usize, 0));
                    StokesVector::new(s.s0(), s.s1(), -s.s2(), 0.0) * 0.5 + StokesVector::unpolarized(0.3)
                }))
            })
            .collect()
    }

    #[test]
    fn decodes_nearest_sampled_mirror() {
        let phot = default_photometry();
        let seq = make_patterns(256, 1, &PatternParams::default(), &phot).unwrap();
        let caps = synthetic_captures(&seq, &phot);
        let (map, stats) = decode(&seq, &caps, &AolpReference::new(&phot, 0.0), &DecodeParams::default()).unwrap();
        assert_eq!(stats.valid, 200);
        for x in 0..200 {
            let truth = (x as f64 * 0.9 + 10.0).round();
            assert!((map.columns.get(x, 0).unwrap() - truth).abs() < 0.05, "{x}");
        }
        assert!(decode(&seq, &caps[1..], &AolpReference::new(&phot, 0.0), &DecodeParams::default()).is_err());
    }

    #[test]
    fn diffuse_only_capture_decodes_nothing() {
        let phot = default_photometry();
        let seq = make_patterns(64, 1, &PatternParams::default(), &phot).unwrap();
        let caps: Vec<_> = seq
            .frames
            .iter()
            .map(|_| PolarimetricImage::single(Grid::filled(8, 8, StokesVector::new(0.5, 0.1, 0.0, 0.0))))
            .collect();
        let (map, stats) = decode(&seq, &caps, &AolpReference::new(&phot, 0.0), &DecodeParams::default()).unwrap();
        assert_eq!(map.valid_count(), 0);
        assert_eq!(stats.no_signal, 64);
    }

    #[test]
    fn filter_examples() {
        let constant = CorrespondenceMap {
            columns: Grid::filled(5, 5, Some(3.0)),
        };
        assert_eq!(filter_discontinuities(&constant, 2.0), constant);
        let mut spike = constant.clone();
        *spike.columns.get_mut(2, 2) = Some(40.0);
        let f = filter_discontinuities(&spike, 2.0);
        assert_eq!(*f.columns.get(2, 2), None);
        assert_eq!(f.valid_count(), 24);
    }
}
