//! Inverse pipeline: geometry, normals and reflectance from captures.

pub mod estimate;
pub mod relight;
pub mod triangulate;

pub use estimate::{
    gather_observations, init_brdf, joint_refine, refine_albedo, separate_specular, EstimationConfig, EstimationInput,
    InitResult, JointResult, PixelObservation, Separation,
};
pub use relight::{relight, DirectionalLight};
pub use triangulate::{pca_normals, triangulate, DepthMap, NormalMap, PointCloud};
