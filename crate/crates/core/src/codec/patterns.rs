//! Gray-code plus phase-shift column patterns encoded as AoLP.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::slm::ProjectorPhotometry;

/// Number of Gray sequences; each later one shifts the code boundaries by a
/// further third of a period.
pub const SHIFT_SEQUENCES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternParams {
    pub n_bits: u32,
    /// Number of phase shifts `K`.
    pub phases: usize,
    /// Phase period `T` in projector pixels.
    pub period: usize,
}

impl Default for PatternParams {
    fn default() -> Self {
        Self {
            n_bits: 6,
            phases: 4,
            period: 16,
        }
    }
}

impl PatternParams {
    pub fn frame_count(&self) -> usize {
        SHIFT_SEQUENCES * self.n_bits as usize + self.phases + 2
    }

    /// Boundary shift of sequence `j`, in projector pixels.
    pub fn shift(&self, j: usize) -> f64 {
        j as f64 * self.period as f64 / SHIFT_SEQUENCES as f64
    }

    pub fn validate(&self, width: usize) -> Result<()> {
        if self.n_bits == 0 || self.n_bits > 16 {
            return Err(Error::InvalidConfig("n_bits must lie in 1..=16".into()));
        }
        if self.period == 0 {
            return Err(Error::InvalidConfig("phase period must be positive".into()));
        }
        if self.phases < 3 {
            return Err(Error::InvalidConfig("at least 3 phase shifts are required".into()));
        }
        if ((1usize << self.n_bits) * self.period) < width {
            return Err(Error::InvalidConfig(format!(
                "{} Gray bits cannot index {} columns with period {}",
                self.n_bits, width, self.period
            )));
        }
        Ok(())
    }

    /// Period index of column `x` in sequence `j`, modulo the code size.
    pub fn period_index(&self, x: usize, j: usize) -> u32 {
        let p = ((x as f64 + self.shift(j)) / self.period as f64).floor() as u64;
        (p % (1u64 << self.n_bits)) as u32
    }

    /// Target rotation magnitude (radians) of column `x` in phase frame `k`.
    pub fn phase_rotation(&self, x: f64, k: usize) -> f64 {
        PI / 4.0 * (1.0 + (2.0 * PI * x / self.period as f64 + 2.0 * PI * k as f64 / self.phases as f64).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrameTag {
    Uniform { v: u8 },
    /// Bit `bit` (0 = least significant) of Gray sequence `sequence`.
    Gray { bit: u32, sequence: usize },
    Phase { k: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternSequence {
    pub params: PatternParams,
    pub width: usize,
    pub height: usize,
    pub tags: Vec<FrameTag>,
    pub frames: Vec<Grid<u8>>,
}

pub fn gray_encode(p: u32) -> u32 {
    p ^ (p >> 1)
}

pub fn gray_decode(g: u32) -> u32 {
    let mut p = g;
    let mut shift = g >> 1;
    while shift != 0 {
        p ^= shift;
        shift >>= 1;
    }
    p
}

/// Builds the frame order `[v=255, v=0, Gray seq 0 (MSB..LSB), seq 1, seq 2,
/// phase 0..K]`. A set Gray bit is projected with `v = 0`.
pub fn make_patterns(
    width: usize,
    height: usize,
    params: &PatternParams,
    photometry: &ProjectorPhotometry,
) -> Result<PatternSequence> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidConfig("pattern resolution must be non-zero".into()));
    }
    params.validate(width)?;
    let mut tags = vec![FrameTag::Uniform { v: 255 }, FrameTag::Uniform { v: 0 }];
    for sequence in 0..SHIFT_SEQUENCES {
        for bit in (0..params.n_bits).rev() {
            tags.push(FrameTag::Gray { bit, sequence });
        }
    }
    tags.extend((0..params.phases).map(|k| FrameTag::Phase { k }));

    let frames = tags
        .iter()
        .map(|tag| {
            let row: Vec<u8> = (0..width)
                .map(|x| match *tag {
                    FrameTag::Uniform { v } => v,
                    FrameTag::Gray { bit, sequence } => {
                        if gray_encode(params.period_index(x, sequence)) >> bit & 1 == 1 {
                            0
                        } else {
                            255
                        }
                    }
                    FrameTag::Phase { k } => photometry.command_for_rotation(params.phase_rotation(x as f64, k)),
                })
                .collect();
            Grid::from_fn(width, height, |x, _| row[x])
        })
        .collect();
    Ok(PatternSequence {
        params: *params,
        width,
        height,
        tags,
        frames,
    })
}

impl PatternSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn position(&self, tag: FrameTag) -> Option<usize> {
        self.tags.iter().position(|t| *t == tag)
    }
}
