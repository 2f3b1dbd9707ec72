#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod config;
pub mod error;
pub mod eval;
pub mod geocal;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod jet;
pub mod pbrdf;
pub mod pipeline;
pub mod polcore;
pub mod recon;
pub mod render;
pub mod slm;
pub mod solver;

pub use error::{Error, Result};
