//! Structured-polarization coding: pattern generation and decoding.

pub mod decode;
pub mod extract;
pub mod patterns;

pub use decode::{decode, filter_discontinuities, fit_phase, AolpReference, CorrespondenceMap, DecodeParams, DecodeStats};
pub use extract::{extract_aolp, synthesize_unpolarized, Extraction};
pub use patterns::{make_patterns, FrameTag, PatternParams, PatternSequence};
