//! Radiometric re-rendering under novel directional lights.

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::jet::Real;
use crate::pbrdf::{reflection, MaterialParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionalLight {
    /// Camera-frame direction pointing toward the light.
    pub direction: [f64; 3],
    /// Radiance per color channel.
    pub intensity: Vec<f64>,
}

/// Per-channel `s0` under unpolarized directional lights.
///
/// `albedo` holds one map per output channel. Views come from `points` when
/// given, otherwise an orthographic view along `-z` is used.
pub fn relight(
    normals: &Grid<Option<Vector3<f64>>>,
    albedo: &[Grid<Option<f64>>],
    points: Option<&Grid<Option<Point3<f64>>>>,
    mat: &MaterialParams,
    lights: &[DirectionalLight],
) -> Vec<Grid<f64>> {
    let m = mat.lift::<f64>();
    let dirs: Vec<[f64; 3]> = lights
        .iter()
        .map(|l| {
            let d = Vector3::from(l.direction).normalize();
            [d.x, d.y, d.z]
        })
        .collect();
    albedo
        .iter()
        .enumerate()
        .map(|(c, kb)| {
            Grid::par_from_fn(normals.width(), normals.height(), |x, y| {
                let (Some(n), Some(k_b)) = (normals.get(x, y), kb.get(x, y)) else {
                    return 0.0;
                };
                let v = match points.and_then(|p| *p.get(x, y)) {
                    Some(p) => (-p.coords).normalize(),
                    None => -Vector3::z(),
                };
                let n = [n.x, n.y, n.z];
                let v = [v.x, v.y, v.z];
                lights
                    .iter()
                    .zip(&dirs)
                    .map(|(light, l)| {
                        let e = light.intensity.get(c).or(light.intensity.first()).copied().unwrap_or(0.0);
                        let r = reflection(&m, *k_b, &n, l, &v);
                        e * (r.c_s + r.c_d)
                    })
                    .sum::<f64>()
                    .max(f64::zero())
            })
        })
        .collect()
}

/// Root-mean-square difference over pixels, relative to the maximum of `reference`.
pub fn relative_rmse(reference: &[Grid<f64>], other: &[Grid<f64>]) -> f64 {
    let max = reference.iter().flat_map(|g| g.iter()).fold(0.0f64, |m, v| m.max(*v));
    let (sum, n) = reference
        .iter()
        .zip(other)
        .flat_map(|(a, b)| a.iter().zip(b.iter()))
        .par_bridge()
        .map(|(a, b)| ((a - b) * (a - b), 1usize))
        .reduce(|| (0.0, 0), |p, q| (p.0 + q.0, p.1 + q.1));
    (sum / n as f64).sqrt() / max
}
