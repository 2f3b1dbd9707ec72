//! Ray / column-plane triangulation and PCA normals.

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::codec::CorrespondenceMap;
use crate::geometry::Pose;
use crate::grid::Grid;
use crate::render::CameraModel;
use crate::slm::ProjectorModel;

/// Rays closer than this to the column plane are rejected.
pub const MIN_PLANE_ANGLE_DEG: f64 = 0.1;

pub type DepthMap = Grid<Option<f64>>;
pub type PointCloud = Grid<Option<Point3<f64>>>;
pub type NormalMap = Grid<Option<Vector3<f64>>>;

/// Projector pose relative to the camera (camera -> projector).
pub fn camera_to_projector(camera: &CameraModel, projector: &ProjectorModel) -> Pose {
    projector.pose.compose(&camera.pose.inverse())
}

/// Camera-frame points on the camera ray through `(u, v)` that lie in the
/// projector plane of column `x_p`; depth is returned as the point's z.
pub fn triangulate_pixel(
    camera: &CameraModel,
    projector: &ProjectorModel,
    rel: &Pose,
    u: f64,
    v: f64,
    x_p: f64,
) -> Option<Point3<f64>> {
    let k = &projector.intrinsics;
    let n_p = Vector3::new(k.fx, k.skew, k.cx - x_p);
    let r = rel.rotation_matrix();
    let n_c = r.transpose() * n_p;
    let offset = n_p.dot(&rel.translation());
    let d = camera.intrinsics.ray(u, v);
    let denom = n_c.dot(&d);
    let sin_angle = denom.abs() / (n_c.norm() * d.norm());
    if sin_angle < MIN_PLANE_ANGLE_DEG.to_radians().sin() {
        return None;
    }
    let lambda = -offset / denom;
    (lambda > 0.0).then(|| Point3::from(d * lambda))
}

pub fn triangulate(map: &CorrespondenceMap, camera: &CameraModel, projector: &ProjectorModel) -> (DepthMap, PointCloud) {
    let rel = camera_to_projector(camera, projector);
    let cloud = Grid::par_from_fn(map.width(), map.height(), |x, y| {
        let xp = (*map.columns.get(x, y))?;
        triangulate_pixel(camera, projector, &rel, x as f64, y as f64, xp)
    });
    (cloud.map(|p| p.map(|p| p.z)), cloud)
}

/// Smallest-eigenvector normals over a `window x window` neighborhood,
/// oriented toward the camera. Fewer than three valid points gives `None`.
pub fn pca_normals(cloud: &PointCloud, window: usize) -> NormalMap {
    let r = (window / 2) as isize;
    let (w, h) = (cloud.width() as isize, cloud.height() as isize);
    Grid::par_from_fn(cloud.width(), cloud.height(), |x, y| {
        let center = (*cloud.get(x, y))?;
        let mut pts = Vec::with_capacity(window * window);
        for dy in -r..=r {
            for dx in -r..=r {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                if let Some(p) = cloud.get(nx as usize, ny as usize) {
                    pts.push(p.coords);
                }
            }
        }
        if pts.len() < 3 {
            return None;
        }
        let mean = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
        let cov = pts.iter().fold(Matrix3::zeros(), |acc, p| {
            let d = p - mean;
            acc + d * d.transpose()
        });
        let eig = SymmetricEigen::new(cov);
        let i = eig.eigenvalues.imin();
        if eig.eigenvalues.iter().filter(|e| **e > 1e-18).count() < 2 {
            return None;
        }
        let n = eig.eigenvectors.column(i).into_owned().normalize();
        Some(if n.dot(&center.coords) > 0.0 { -n } else { n })
    })
}

/// Mean angle in degrees between paired valid normals, with the pair count.
pub fn mean_angular_error(a: &NormalMap, b: &NormalMap, mask: impl Fn(usize, usize) -> bool + Sync) -> (f64, usize) {
    let (sum, n) = (0..a.height())
        .into_par_iter()
        .map(|y| {
            let mut acc = (0.0, 0usize);
            for x in 0..a.width() {
                if let (Some(p), Some(q)) = (a.get(x, y), b.get(x, y)) {
                    if mask(x, y) {
                        acc.0 += p.dot(q).clamp(-1.0, 1.0).acos().to_degrees();
                        acc.1 += 1;
                    }
                }
            }
            acc
        })
        .reduce(|| (0.0, 0), |p, q| (p.0 + q.0, p.1 + q.1));
    (if n > 0 { sum / n as f64 } else { f64::NAN }, n)
}
