//! Specular/diffuse separation and reflectance estimation.
//!
//! The initial fit assumes Lambertian diffuse albedo derived from the
//! separated diffuse intensity and fits the five global parameters to
//! intensity and DoLP. The joint refinement adds the linear Stokes components
//! to the loss and solves for the global parameters together with per-pixel
//! albedo and a two-parameter tangent-plane normal update.

use nalgebra::{Matrix3, Matrix5, Point3, SMatrix, Vector3, Vector5};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::jet::{dot, lift, normalize, Jet, Real, Vec3};
use crate::pbrdf::{fresnel_reflectance, reflection, MaterialParams, Surrogate};
use crate::polcore::StokesVector;
use crate::solver::{minimize, LmOptions, NormalEquations, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationConfig {
    /// DoLP weight of the initial fit.
    pub lambda1: f64,
    /// DoLP weight of the joint refinement.
    pub lambda2: f64,
    /// Linear-Stokes weight of the joint refinement.
    pub lambda3: f64,
    pub init_iterations: usize,
    pub outer_iterations: usize,
    pub pixel_iterations: usize,
    /// Relative loss decrease below which iterations stop.
    pub tolerance: f64,
    pub pca_window: usize,
    pub initial: MaterialParams,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.01,
            lambda3: 1.0,
            init_iterations: 200,
            outer_iterations: 100,
            pixel_iterations: 30,
            tolerance: 1e-9,
            pca_window: 7,
            initial: MaterialParams {
                mu: 1.5,
                k_s: 0.5,
                roughness: 0.3,
                shape: 2.0,
                kappa: 1.0,
                entry_polarization: false,
            },
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 > 0.0 && self.lambda2 > 0.0 && self.lambda3 > 0.0) {
            return Err(Error::InvalidConfig("loss weights must be positive".into()));
        }
        self.initial.validate()
    }
}

/// Lower and upper bounds of the five global parameters.
pub const GLOBAL_BOUNDS: [(f64, f64); 5] = [(1.01, 3.0), (0.0, 1.0), (0.01, 1.0), (0.5, 8.0), (0.05, 10.0)];

fn clamp_globals(p: &mut [f64]) {
    for (v, (lo, hi)) in p.iter_mut().zip(GLOBAL_BOUNDS) {
        *v = v.clamp(lo, hi);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Separation {
    pub specular: f64,
    pub diffuse: f64,
    /// The diffuse estimate went negative and was clamped to zero.
    pub clamped: bool,
}

/// `I_s = |s_-^{1,2}| / rho_i` and `I_d = s_hat0 - I_s`, clamped at zero.
pub fn separate_specular(s_o: &StokesVector, s_hat: &StokesVector, rho_i: f64) -> Separation {
    let specular = (s_o.s1() - s_hat.s1()).hypot(s_o.s2() - s_hat.s2()) / rho_i;
    let d = s_hat.s0() - specular;
    Separation {
        specular,
        diffuse: d.max(0.0),
        clamped: d < 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameObservation {
    /// Incident Stokes vector in the camera frame.
    pub source: StokesVector,
    pub measured: StokesVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelObservation {
    pub x: usize,
    pub y: usize,
    pub normal: Vector3<f64>,
    pub light: [f64; 3],
    pub view: [f64; 3],
    pub frames: Vec<FrameObservation>,
    pub separation: Separation,
}

/// Inputs of a reflectance estimation run.
#[derive(Debug, Clone)]
pub struct EstimationInput {
    pub pixels: Vec<PixelObservation>,
    pub width: usize,
    pub height: usize,
    pub clamped: usize,
}

/// Gathers per-pixel observations from captures of uniform commands.
///
/// `pair` indexes the perpendicular pair inside `captures`; `sources` are the
/// incident camera-frame Stokes vectors of every capture; `rho_i` is the
/// projected DoLP used for separation.
#[allow(clippy::too_many_arguments)]
pub fn gather_observations(
    captures: &[&Grid<StokesVector>],
    sources: &[StokesVector],
    pair: (usize, usize),
    points: &Grid<Option<Point3<f64>>>,
    normals: &Grid<Option<Vector3<f64>>>,
    projector_center: &Point3<f64>,
    rho_i: f64,
    ambient_intensity: f64,
) -> Result<EstimationInput> {
    if ambient_intensity > 0.0 {
        return Err(Error::Estimation(format!(
            "captures contain ambient light (intensity {ambient_intensity}); reflectance estimation needs a dark scene"
        )));
    }
    if captures.len() != sources.len() || captures.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} captures", sources.len()),
            found: format!("{} captures", captures.len()),
        });
    }
    for c in captures {
        points.same_dims(c)?;
    }
    points.same_dims(normals)?;
    let mut pixels = Vec::new();
    let mut clamped = 0;
    for y in 0..points.height() {
        for x in 0..points.width() {
            let (Some(p), Some(n)) = (points.get(x, y), normals.get(x, y)) else {
                continue;
            };
            let view = (-p.coords).normalize();
            let light = (projector_center - p).normalize();
            let frames: Vec<FrameObservation> = captures
                .iter()
                .zip(sources)
                .map(|(c, s)| FrameObservation {
                    source: *s,
                    measured: *c.get(x, y),
                })
                .collect();
            if frames.iter().any(|f| !(f.measured.s0() > 0.0)) {
                continue;
            }
            let s_hat = (frames[pair.0].measured + frames[pair.1].measured) * 0.5;
            let separation = separate_specular(&frames[pair.0].measured, &s_hat, rho_i);
            clamped += separation.clamped as usize;
            pixels.push(PixelObservation {
                x,
                y,
                normal: *n,
                light: [light.x, light.y, light.z],
                view: [view.x, view.y, view.z],
                frames,
                separation,
            });
        }
    }
    Ok(EstimationInput {
        pixels,
        width: points.width(),
        height: points.height(),
        clamped,
    })
}

/// Loss weights `(dolp, linear Stokes)`; `None` drops the Stokes terms.
#[derive(Debug, Clone, Copy)]
struct Weights {
    dolp: f64,
    stokes: Option<f64>,
}

fn push_residuals<T: Real>(
    out: &mut impl FnMut(T),
    mat: &Surrogate<T>,
    k_b: T,
    n: &Vec3<T>,
    px: &PixelObservation,
    w: Weights,
) {
    for f in &px.frames {
        let r = reflection(mat, k_b, n, &px.light, &px.view);
        let [p0, p1, p2] = r.apply_linear(&f.source);
        let m = &f.measured;
        out(p0 - m.s0());
        let dolp_m = m.linear_magnitude() / m.s0();
        if p0.value() > 1e-12 {
            let dolp = (p1 * p1 + p2 * p2 + 1e-30).sqrt() / p0;
            out((dolp - dolp_m) * w.dolp.sqrt());
        } else {
            out(T::cst(-dolp_m * w.dolp.sqrt()));
        }
        if let Some(ws) = w.stokes {
            out((p1 - m.s1()) * ws.sqrt());
            out((p2 - m.s2()) * ws.sqrt());
        }
    }
}

/// Lambertian albedo implied by the separated diffuse intensity at `mu`.
fn lambertian_albedo<T: Real>(mu: T, px: &PixelObservation, n: &Vec3<T>) -> Option<T> {
    let l: Vec3<T> = lift(&px.light);
    let v: Vec3<T> = lift(&px.view);
    let nl = dot(n, &l);
    let nv = dot(n, &v);
    if nl.value() <= 1e-6 || nv.value() <= 1e-6 {
        return None;
    }
    let s_i0 = px.frames[0].source.s0();
    let denom = nl * (T::one() - fresnel_reflectance(mu, nl)) * (T::one() - fresnel_reflectance(mu, nv)) * s_i0;
    Some(denom.recip() * (px.separation.diffuse * std::f64::consts::PI))
}

fn surrogate_jet(p: &[f64], entry: bool) -> Surrogate<Jet<5>> {
    Surrogate {
        mu: Jet::variable(p[0], 0),
        k_s: Jet::variable(p[1], 1),
        roughness: Jet::variable(p[2], 2),
        shape: Jet::variable(p[3], 3),
        kappa: Jet::variable(p[4], 4),
        entry_polarization: entry,
    }
}

fn surrogate_f64(p: &[f64], entry: bool) -> Surrogate<f64> {
    Surrogate {
        mu: p[0],
        k_s: p[1],
        roughness: p[2],
        shape: p[3],
        kappa: p[4],
        entry_polarization: entry,
    }
}

fn vec3<T: Real>(n: &Vector3<f64>) -> Vec3<T> {
    lift(&[n.x, n.y, n.z])
}

/// Global fit with per-pixel albedo derived from `mu`.
struct GlobalProblem<'a> {
    pixels: &'a [PixelObservation],
    normals: &'a [Vector3<f64>],
    weights: Weights,
    entry: bool,
}

impl GlobalProblem<'_> {
    fn pixel_cost(&self, p: &[f64], i: usize) -> f64 {
        let mat = surrogate_f64(p, self.entry);
        let n = vec3::<f64>(&self.normals[i]);
        let px = &self.pixels[i];
        let Some(k_b) = lambertian_albedo(p[0], px, &n) else {
            return 0.0;
        };
        let mut acc = 0.0;
        push_residuals(&mut |r: f64| acc += r * r, &mat, k_b, &n, px, self.weights);
        acc
    }
}

impl Problem for GlobalProblem<'_> {
    fn num_params(&self) -> usize {
        5
    }

    fn cost(&self, p: &[f64]) -> f64 {
        (0..self.pixels.len()).into_par_iter().map(|i| self.pixel_cost(p, i)).sum()
    }

    fn normal_equations(&self, p: &[f64]) -> NormalEquations {
        let mat = surrogate_jet(p, self.entry);
        (0..self.pixels.len())
            .into_par_iter()
            .fold(
                || NormalEquations::zeros(5),
                |mut ne, i| {
                    let n = vec3::<Jet<5>>(&self.normals[i]);
                    let px = &self.pixels[i];
                    let Some(k_b) = lambertian_albedo(mat.mu, px, &n) else {
                        return ne;
                    };
                    push_residuals(&mut |r: Jet<5>| ne.add_residual(&r), &mat, k_b, &n, px, self.weights);
                    ne
                },
            )
            .reduce(|| NormalEquations::zeros(5), |a, b| a.merge(&b))
    }

    fn project(&self, p: &mut [f64]) {
        clamp_globals(p);
    }
}

/// Orthonormal tangent basis of a unit normal.
fn tangent_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let t1 = n.cross(&helper).normalize();
    (t1, n.cross(&t1))
}

/// Albedo and tangent-plane normal update of one pixel.
struct PixelProblem<'a> {
    px: &'a PixelObservation,
    mat: MaterialParams,
    base: Vector3<f64>,
    t1: Vector3<f64>,
    t2: Vector3<f64>,
    weights: Weights,
    fit_normal: bool,
}

impl PixelProblem<'_> {
    fn normal<T: Real>(&self, a: T, b: T) -> Vec3<T> {
        normalize(&std::array::from_fn(|k| a * self.t1[k] + b * self.t2[k] + self.base[k]))
    }

    fn unpack(&self, p: &[f64]) -> (f64, Vector3<f64>) {
        let [x, y, z] = self.normal(p[1], p[2]);
        (p[0], Vector3::new(x, y, z))
    }
}

impl Problem for PixelProblem<'_> {
    fn num_params(&self) -> usize {
        3
    }

    fn cost(&self, p: &[f64]) -> f64 {
        let mat = self.mat.lift::<f64>();
        let n = self.normal(p[1], p[2]);
        let mut acc = 0.0;
        push_residuals(&mut |r: f64| acc += r * r, &mat, p[0], &n, self.px, self.weights);
        acc
    }

    fn normal_equations(&self, p: &[f64]) -> NormalEquations {
        let mat = self.mat.lift::<Jet<3>>();
        let var = |i: usize| {
            if i == 0 || self.fit_normal {
                Jet::variable(p[i], i)
            } else {
                Jet::constant(p[i])
            }
        };
        let n = self.normal(var(1), var(2));
        let mut ne = NormalEquations::zeros(3);
        push_residuals(&mut |r: Jet<3>| ne.add_residual(&r), &mat, var(0), &n, self.px, self.weights);
        if !self.fit_normal {
            // keep the system regular when only the albedo is free
            ne.jtj[(1, 1)] = 1.0;
            ne.jtj[(2, 2)] = 1.0;
        }
        ne
    }

    fn project(&self, p: &mut [f64]) {
        p[0] = p[0].max(0.0);
        if !self.fit_normal {
            p[1] = 0.0;
            p[2] = 0.0;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitResult {
    pub params: MaterialParams,
    /// Lambertian albedo per observation at the returned parameters.
    pub albedo: Vec<f64>,
    pub initial_loss: f64,
    pub loss: f64,
    /// Loss after every accepted step.
    pub losses: Vec<f64>,
    pub iterations: usize,
    /// Stopped on the tolerance rather than the iteration cap.
    pub converged: bool,
}

/// Initial global fit to intensity and DoLP with Lambertian albedo.
pub fn init_brdf(input: &EstimationInput, normals: &[Vector3<f64>], cfg: &EstimationConfig) -> InitResult {
    let problem = GlobalProblem {
        pixels: &input.pixels,
        normals,
        weights: Weights {
            dolp: cfg.lambda1,
            stokes: None,
        },
        entry: cfg.initial.entry_polarization,
    };
    let opts = LmOptions {
        max_iterations: cfg.init_iterations,
        relative_tolerance: cfg.tolerance,
        ..Default::default()
    };
    let start = cfg.initial.to_array();
    let rep = minimize(&problem, &start, &opts);
    let params = cfg.initial.with_array(&rep.params);
    let albedo = input
        .pixels
        .iter()
        .zip(normals)
        .map(|(px, n)| lambertian_albedo(params.mu, px, &vec3::<f64>(n)).unwrap_or(0.0))
        .collect();
    InitResult {
        params,
        albedo,
        initial_loss: rep.costs[0],
        loss: rep.final_cost(),
        losses: rep.costs.clone(),
        iterations: rep.iterations,
        converged: rep.iterations < cfg.init_iterations,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointResult {
    pub params: MaterialParams,
    pub albedo: Vec<f64>,
    pub normals: Vec<Vector3<f64>>,
    /// Loss at the start, after the per-pixel warm start and after every accepted step.
    pub losses: Vec<f64>,
    pub converged: bool,
}

fn joint_weights(cfg: &EstimationConfig) -> Weights {
    Weights {
        dolp: cfg.lambda2,
        stokes: Some(cfg.lambda3),
    }
}

fn refine_pixels(
    pixels: &[PixelObservation],
    mat: &MaterialParams,
    albedo: &mut [f64],
    normals: &mut [Vector3<f64>],
    weights: Weights,
    fit_normal: bool,
    iterations: usize,
) {
    let opts = LmOptions {
        max_iterations: iterations,
        ..Default::default()
    };
    pixels
        .par_iter()
        .zip(albedo.par_iter_mut())
        .zip(normals.par_iter_mut())
        .for_each(|((px, k_b), n)| {
            let (t1, t2) = tangent_basis(n);
            let prob = PixelProblem {
                px,
                mat: *mat,
                base: *n,
                t1,
                t2,
                weights,
                fit_normal,
            };
            let rep = minimize(&prob, &[*k_b, 0.0, 0.0], &opts);
            let (kb, nn) = prob.unpack(&rep.params);
            *k_b = kb;
            *n = nn;
        });
}

fn joint_loss(pixels: &[PixelObservation], mat: &MaterialParams, albedo: &[f64], normals: &[Vector3<f64>], w: Weights) -> f64 {
    let m = mat.lift::<f64>();
    pixels
        .par_iter()
        .zip(albedo)
        .zip(normals)
        .map(|((px, k), n)| {
            let mut acc = 0.0;
            push_residuals(&mut |r: f64| acc += r * r, &m, *k, &vec3::<f64>(n), px, w);
            acc
        })
        .sum()
}

/// Linearization of one pixel: globals-globals, globals-locals and
/// locals-locals blocks of `J^T J` with the matching gradient parts.
struct PixelBlock {
    u: Matrix5<f64>,
    w: SMatrix<f64, 5, 3>,
    v: Matrix3<f64>,
    eg: Vector5<f64>,
    eq: Vector3<f64>,
    t1: Vector3<f64>,
    t2: Vector3<f64>,
}

fn linearize(px: &PixelObservation, p: &[f64; 5], entry: bool, k_b: f64, n: &Vector3<f64>, w: Weights) -> PixelBlock {
    let mat = Surrogate {
        mu: Jet::<8>::variable(p[0], 0),
        k_s: Jet::variable(p[1], 1),
        roughness: Jet::variable(p[2], 2),
        shape: Jet::variable(p[3], 3),
        kappa: Jet::variable(p[4], 4),
        entry_polarization: entry,
    };
    let (t1, t2) = tangent_basis(n);
    let (a, b) = (Jet::<8>::variable(0.0, 6), Jet::<8>::variable(0.0, 7));
    let nn: Vec3<Jet<8>> = normalize(&std::array::from_fn(|k| a * t1[k] + b * t2[k] + n[k]));
    let mut ne = NormalEquations::zeros(8);
    push_residuals(&mut |r: Jet<8>| ne.add_residual(&r), &mat, Jet::variable(k_b, 5), &nn, px, w);
    PixelBlock {
        u: ne.jtj.fixed_view::<5, 5>(0, 0).into_owned(),
        w: ne.jtj.fixed_view::<5, 3>(0, 5).into_owned(),
        v: ne.jtj.fixed_view::<3, 3>(5, 5).into_owned(),
        eg: ne.jtr.fixed_rows::<5>(0).into_owned(),
        eq: ne.jtr.fixed_rows::<3>(5).into_owned(),
        t1,
        t2,
    }
}

fn damp<const D: usize>(m: &SMatrix<f64, D, D>, lambda: f64) -> SMatrix<f64, D, D> {
    let mut out = *m;
    for i in 0..D {
        out[(i, i)] += lambda * m[(i, i)].max(1e-12);
    }
    out
}

/// Joint refinement of parameters, albedo and normals.
///
/// Every pixel is first fitted alone under the initial parameters. Then
/// damped Gauss-Newton steps are taken on all unknowns at once, eliminating
/// the per-pixel `(albedo, a, b)` blocks through their Schur complement so
/// only a 5x5 system is solved globally.
pub fn joint_refine(
    input: &EstimationInput,
    init: &MaterialParams,
    albedo: &[f64],
    normals: &[Vector3<f64>],
    cfg: &EstimationConfig,
) -> JointResult {
    let w = joint_weights(cfg);
    let entry = init.entry_polarization;
    let mut params = *init;
    let mut albedo = albedo.to_vec();
    let mut normals = normals.to_vec();
    let mut losses = vec![joint_loss(&input.pixels, &params, &albedo, &normals, w)];
    refine_pixels(&input.pixels, &params, &mut albedo, &mut normals, w, true, cfg.pixel_iterations);
    losses.push(joint_loss(&input.pixels, &params, &albedo, &normals, w));
    let mut converged = false;
    let mut lambda = 1e-3;
    'outer: for _ in 0..cfg.outer_iterations {
        let p = params.to_array();
        let blocks: Vec<PixelBlock> = input
            .pixels
            .par_iter()
            .zip(&albedo)
            .zip(&normals)
            .map(|((px, k), n)| linearize(px, &p, entry, *k, n, w))
            .collect();
        let (u, eg) = blocks
            .iter()
            .fold((Matrix5::zeros(), Vector5::zeros()), |(u, e), b| (u + b.u, e + b.eg));
        let prev = *losses.last().unwrap();
        loop {
            let inv: Vec<Matrix3<f64>> = blocks
                .par_iter()
                .map(|b| damp(&b.v, lambda).try_inverse().unwrap_or_else(Matrix3::zeros))
                .collect();
            let mut s = damp(&u, lambda);
            let mut rhs = -eg;
            for (b, vi) in blocks.iter().zip(&inv) {
                let wv = b.w * vi;
                s -= wv * b.w.transpose();
                rhs += wv * b.eq;
            }
            let dg = s.cholesky().map(|c| c.solve(&rhs)).unwrap_or_else(Vector5::zeros);
            let mut trial = [0.0; 5];
            for i in 0..5 {
                trial[i] = p[i] + dg[i];
            }
            clamp_globals(&mut trial);
            let dg = Vector5::from_fn(|i, _| trial[i] - p[i]);
            let (trial_albedo, trial_normals): (Vec<f64>, Vec<Vector3<f64>>) = blocks
                .par_iter()
                .zip(&inv)
                .zip(albedo.par_iter().zip(&normals))
                .map(|((b, vi), (k, n))| {
                    let dq = -(vi * (b.eq + b.w.transpose() * dg));
                    ((k + dq[0]).max(0.0), (n + b.t1 * dq[1] + b.t2 * dq[2]).normalize())
                })
                .unzip();
            let trial_params = params.with_array(&trial);
            let loss = joint_loss(&input.pixels, &trial_params, &trial_albedo, &trial_normals, w);
            if loss < prev {
                params = trial_params;
                albedo = trial_albedo;
                normals = trial_normals;
                losses.push(loss);
                lambda = (lambda / 3.0).max(1e-12);
                if prev - loss <= cfg.tolerance * prev {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e12 {
                converged = true;
                break 'outer;
            }
        }
    }
    JointResult {
        params,
        albedo,
        normals,
        losses,
        converged,
    }
}

/// Per-pixel albedo for another color channel with parameters and normals held.
pub fn refine_albedo(
    input: &EstimationInput,
    params: &MaterialParams,
    normals: &[Vector3<f64>],
    cfg: &EstimationConfig,
) -> Vec<f64> {
    let mut albedo: Vec<f64> = input
        .pixels
        .iter()
        .zip(normals)
        .map(|(px, n)| lambertian_albedo(params.mu, px, &vec3::<f64>(n)).unwrap_or(0.0))
        .collect();
    let mut n = normals.to_vec();
    refine_pixels(&input.pixels, params, &mut albedo, &mut n, joint_weights(cfg), false, cfg.pixel_iterations);
    albedo
}

/// Scatters per-observation values back into an image grid.
pub fn to_grid<T: Clone>(input: &EstimationInput, values: &[T]) -> Grid<Option<T>> {
    let mut g = Grid::filled(input.width, input.height, None);
    for (px, v) in input.pixels.iter().zip(values) {
        *g.get_mut(px.x, px.y) = Some(v.clone());
    }
    g
}
