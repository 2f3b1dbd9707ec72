//! Projector calibration from decoded correspondences on planar boards.
//!
//! Decoding is column-only, so every board pixel yields one scalar
//! constraint: its camera-frame 3D point must project onto the decoded
//! projector column. A linear 8-unknown DLT on the first and third rows of
//! the projection matrix initializes focal length, principal column and pose;
//! Levenberg-Marquardt then minimizes the column reprojection error.
//!
//! The second projection row never enters a column, so `fy`, `cy`, skew and
//! the projector-frame `y` translation are unobservable. They are returned as
//! `fy = fx`, the configured `cy`, zero skew and zero `t_y`.

use nalgebra::{DMatrix, Matrix3, Matrix4, Point3, SymmetricEigen, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::codec::CorrespondenceMap;
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::jet::{Jet, Real};
use crate::solver::{minimize, LmOptions, NormalEquations, Problem};

pub const MIN_BOARDS: usize = 3;

/// One decoded board capture. `pose` maps board coordinates (board plane
/// `z = 0`) into the camera frame.
#[derive(Debug, Clone)]
pub struct BoardObservation {
    pub pose: Pose,
    pub map: CorrespondenceMap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoardPoint {
    pub projector_x: f64,
    /// Camera frame.
    pub point: Point3<f64>,
}

/// Intersects camera rays of decoded pixels with the board plane.
pub fn backproject_board_points(camera: &Intrinsics, obs: &BoardObservation) -> Vec<BoardPoint> {
    let r = obs.pose.rotation_matrix();
    let normal = r.column(2).into_owned();
    let origin = obs.pose.translation();
    let offset = normal.dot(&origin);
    let mut out = Vec::new();
    for y in 0..obs.map.height() {
        for x in 0..obs.map.width() {
            let Some(xp) = *obs.map.columns.get(x, y) else {
                continue;
            };
            let d = camera.ray(x as f64, y as f64);
            let denom = normal.dot(&d);
            if denom.abs() < 1e-12 * d.norm() {
                continue;
            }
            let lambda = offset / denom;
            if lambda <= 0.0 {
                continue;
            }
            out.push(BoardPoint {
                projector_x: xp,
                point: Point3::from(d * lambda),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub intrinsics: Intrinsics,
    /// Camera frame to projector frame.
    pub camera_to_projector: Pose,
    /// Board to camera, one per observation.
    pub board_poses: Vec<Pose>,
    pub initial_rms: f64,
    pub rms: f64,
    pub iterations: usize,
}

impl Calibration {
    /// World-to-projector pose for a camera at `camera_pose` (world to camera).
    pub fn projector_pose(&self, camera_pose: &Pose) -> Pose {
        self.camera_to_projector.compose(camera_pose)
    }
}

/// Column of a camera-frame point under `[fx, cx, rx, ry, rz, t1, t3]`, with
/// the rotation perturbing `base` on the left.
fn project_column<T: Real>(p: &[T; 7], base: &Matrix3<f64>, base_t: &Vector3<f64>, x: &Point3<f64>) -> T {
    let q = base * x.coords;
    let w = [p[2], p[3], p[4]];
    let rq = rotate(&w, &[q.x, q.y, q.z]);
    let xc = rq[0] + p[5] + base_t.x;
    let zc = rq[2] + p[6] + base_t.z;
    p[0] * xc / zc + p[1]
}

/// Rodrigues rotation of a constant vector by axis-angle `w`.
fn rotate<T: Real>(w: &[T; 3], v: &[f64; 3]) -> [T; 3] {
    let th2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let (a, b) = if th2.value() < 1e-8 {
        (
            T::one() - th2 * (1.0 / 6.0),
            T::cst(0.5) - th2 * (1.0 / 24.0),
        )
    } else {
        let th = th2.sqrt();
        (th.sin() / th, (T::one() - th.cos()) / th2)
    };
    let cross = |u: &[T; 3], v: &[T; 3]| [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    let vt = v.map(T::cst);
    let wv = cross(w, &vt);
    let wwv = cross(w, &wv);
    std::array::from_fn(|k| vt[k] + wv[k] * a + wwv[k] * b)
}

struct ColumnProblem<'a> {
    points: &'a [BoardPoint],
    base: Matrix3<f64>,
    base_t: Vector3<f64>,
}

impl Problem for ColumnProblem<'_> {
    fn num_params(&self) -> usize {
        7
    }

    fn cost(&self, p: &[f64]) -> f64 {
        let p: [f64; 7] = p.try_into().unwrap();
        self.points
            .iter()
            .map(|b| (project_column(&p, &self.base, &self.base_t, &b.point) - b.projector_x).powi(2))
            .sum()
    }

    fn normal_equations(&self, p: &[f64]) -> NormalEquations {
        let pj: [Jet<7>; 7] = std::array::from_fn(|i| Jet::variable(p[i], i));
        let mut ne = NormalEquations::zeros(7);
        for b in self.points {
            ne.add_residual(&(project_column(&pj, &self.base, &self.base_t, &b.point) - b.projector_x));
        }
        ne
    }
}

/// Similarity normalization of 3D points: zero centroid, mean distance sqrt(3).
fn normalization(points: &[BoardPoint]) -> Matrix4<f64> {
    let n = points.len() as f64;
    let c = points.iter().map(|b| b.point.coords).sum::<Vector3<f64>>() / n;
    let d = points.iter().map(|b| (b.point.coords - c).norm()).sum::<f64>() / n;
    let s = 3f64.sqrt() / d;
    let mut t = Matrix4::identity() * s;
    t[(3, 3)] = 1.0;
    t.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-c * s));
    t
}

/// Linear estimate of the first and third projection rows.
fn column_dlt(points: &[BoardPoint]) -> Result<(Vector4<f64>, Vector4<f64>)> {
    let t = normalization(points);
    let n = points.len() as f64;
    let mx = points.iter().map(|b| b.projector_x).sum::<f64>() / n;
    let sx = (points.iter().map(|b| (b.projector_x - mx).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    let mut ata = DMatrix::<f64>::zeros(8, 8);
    for b in points {
        let h = t * b.point.to_homogeneous();
        let x = (b.projector_x - mx) / sx;
        let row = [h[0], h[1], h[2], h[3], -x * h[0], -x * h[1], -x * h[2], -x * h[3]];
        for i in 0..8 {
            for j in 0..8 {
                ata[(i, j)] += row[i] * row[j];
            }
        }
    }
    let eig = SymmetricEigen::new(ata);
    let mut order: Vec<usize> = (0..8).collect();
    order.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
    let (smallest, next) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if !(next > 1e-10 * eig.eigenvalues[order[7]]) || smallest > 1e-3 * next {
        return Err(Error::Calibration("board poses do not constrain the projector (degenerate set)".into()));
    }
    let v = eig.eigenvectors.column(order[0]);
    let a = Vector4::new(v[0], v[1], v[2], v[3]);
    let c = Vector4::new(v[4], v[5], v[6], v[7]);
    let row1 = t.transpose() * (a * sx + c * mx);
    let row3 = t.transpose() * c;
    Ok((row1, row3))
}

/// Closed-form projector intrinsics and camera-to-projector pose.
fn initialize(points: &[BoardPoint]) -> Result<(f64, f64, Matrix3<f64>, Vector3<f64>)> {
    let (mut row1, mut row3) = column_dlt(points)?;
    let scale = row3.fixed_rows::<3>(0).norm();
    if !(scale > 0.0) {
        return Err(Error::Calibration("projection has no depth row".into()));
    }
    let mean_depth: f64 = points.iter().map(|b| row3.dot(&b.point.to_homogeneous())).sum();
    let sign = if mean_depth < 0.0 { -1.0 } else { 1.0 };
    row1 *= sign / scale;
    row3 *= sign / scale;
    let r3 = row3.fixed_rows::<3>(0).into_owned();
    let q = row1.fixed_rows::<3>(0).into_owned();
    let cx = q.dot(&r3);
    let u = q - r3 * cx;
    let fx = u.norm();
    if !(fx > 0.0) {
        return Err(Error::Calibration("zero focal length".into()));
    }
    let r1 = u / fx;
    let r2 = r3.cross(&r1);
    let rot = Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r3.transpose()]);
    let t = Vector3::new((row1[3] - cx * row3[3]) / fx, 0.0, row3[3]);
    Ok((fx, cx, rot, t))
}

/// Calibrates the projector from at least three board observations.
///
/// `cy` fills the unobservable principal row of the result.
pub fn calibrate_projector(camera: &Intrinsics, boards: &[BoardObservation], cy: f64, opts: &LmOptions) -> Result<Calibration> {
    if boards.len() < MIN_BOARDS {
        return Err(Error::Calibration(format!(
            "{} board poses given, at least {MIN_BOARDS} needed",
            boards.len()
        )));
    }
    let points: Vec<BoardPoint> = boards.iter().flat_map(|b| backproject_board_points(camera, b)).collect();
    if points.len() < 8 {
        return Err(Error::Calibration(format!("only {} decoded board points", points.len())));
    }
    let (fx, cx, rot, t) = initialize(&points)?;
    let problem = ColumnProblem {
        points: &points,
        base: rot,
        base_t: t,
    };
    let start = [fx, cx, 0.0, 0.0, 0.0, 0.0, 0.0];
    let rep = minimize(&problem, &start, opts);
    let p = &rep.params;
    let delta = Pose::new([p[2], p[3], p[4]], [0.0; 3]).rotation_matrix();
    let r = delta * rot;
    let t = Vector3::new(t.x + p[5], 0.0, t.z + p[6]);
    let n = points.len() as f64;
    Ok(Calibration {
        intrinsics: Intrinsics {
            fx: p[0],
            fy: p[0],
            cx: p[1],
            cy,
            skew: 0.0,
        },
        camera_to_projector: Pose::from_rotation_translation(&r, &t),
        board_poses: boards.iter().map(|b| b.pose).collect(),
        initial_rms: (rep.costs[0] / n).sqrt(),
        rms: (rep.final_cost() / n).sqrt(),
        iterations: rep.iterations,
    })
}

/// Ground-truth injection: returns the configured geometry unchanged.
pub fn ground_truth_calibration(intrinsics: &Intrinsics, camera_to_projector: &Pose, boards: &[BoardObservation]) -> Calibration {
    Calibration {
        intrinsics: *intrinsics,
        camera_to_projector: *camera_to_projector,
        board_poses: boards.iter().map(|b| b.pose).collect(),
        initial_rms: 0.0,
        rms: 0.0,
        iterations: 0,
    }
}
