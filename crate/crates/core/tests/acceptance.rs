//! Acceptance criteria, one test per criterion. Each prints a single
//! PASS/FAIL line straight to stdout so it shows up in captured runs.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

mod common;

use common::{checker, sphere_material, sphere_rig};

use nalgebra::{Matrix2, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spiders::codec::{extract_aolp, make_patterns, FrameTag};
use spiders::config::RigConfig;
use spiders::geometry::{Intrinsics, Pose};
use spiders::grid::Grid;
use spiders::jet::{normalize, Jet, Real};
use spiders::pbrdf::{reflection, reflection_at, MaterialParams, Reflection, ShadingGeometry, Surrogate};
use spiders::pipeline::{calibrate, decode_frames, estimate, reconstruct, simulate};
use spiders::polcore::{
    aolp_difference, jones_to_mueller, jones_to_stokes, mueller_apply, JonesMatrix, JonesVector, StokesVector,
};
use spiders::recon::estimate::{separate_specular, EstimationInput, FrameObservation, PixelObservation};
use spiders::recon::relight::relative_rmse;
use spiders::recon::triangulate::mean_angular_error;
use spiders::recon::{init_brdf, joint_refine, relight, DirectionalLight, EstimationConfig};
use spiders::render::{demosaic, mosaic_sample, Albedo, Ambient, GBuffer, Sampling, Scene, Shape, Surface};
use spiders::slm::{default_photometry, max_birefringence, tnlc_jones, tnlc_jones_decomposed, TnlcParams, TWIST};

// criterion 1
const EXTRACT_DRAWS: usize = 10_000;
const EXTRACT_TOL: f64 = 1e-9;
const EXTRACT_BUDGET: Duration = Duration::from_secs(5);
// criterion 2
const TNLC_DRAWS: usize = 1_000;
const TNLC_TOL: f64 = 1e-12;
const SWEEP_MIN_DEG: f64 = 89.9;
const TNLC_BUDGET: Duration = Duration::from_secs(1);
// criterion 3
const EXACT_TOL: f64 = 1e-9;
// criterion 4
const INVISIBILITY_TOL: f64 = 1e-9;
// criterion 5
const XP_RMS_MAX: f64 = 0.1;
const DEPTH_MEDIAN_REL_MAX: f64 = 0.005;
const PIPELINE_BUDGET: Duration = Duration::from_secs(60);
// criterion 6
const AMBIENT_FRACTION: f64 = 0.5;
const ROBUST_XP_RMS_MAX: f64 = 0.5;
// criterion 7
const NORMAL_REDUCTION_MIN: f64 = 0.30;
const REFINED_NORMAL_MAX_DEG: f64 = 3.0;
// criterion 8
const GLOBAL_REL_MAX: f64 = 0.10;
const ALBEDO_RMS_MAX: f64 = 0.05;
const RELIT_RMSE_MAX: f64 = 0.02;
// criterion 9
const BOARDS: usize = 5;
const FOCAL_REL_MAX: f64 = 0.005;
const REPROJECTION_RMS_MAX: f64 = 0.05;
// criterion 10
const JACOBIAN_CONFIGS: usize = 100;
const JACOBIAN_TOL: f64 = 1e-4;
const MONOTONE_INSTANCES: usize = 20;

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let line = format!("[{}] criterion {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    writeln!(std::io::stdout().lock(), "{line}").unwrap();
    assert!(pass, "{line}");
}

fn random_reflection(rng: &mut ChaCha8Rng) -> Reflection<f64> {
    Reflection {
        c_s: rng.random_range(0.01..2.0),
        c_d: rng.random_range(0.0..2.0),
        m12: rng.random_range(-0.5..0.5),
        m13: rng.random_range(-0.5..0.5),
        m21: rng.random_range(-0.5..0.5),
        m31: rng.random_range(-0.5..0.5),
    }
}

#[test]
fn criterion_01_aolp_extraction_invariance() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut failed = 0;
    for _ in 0..EXTRACT_DRAWS {
        let rho = rng.random_range(0.3..1.0);
        let r = random_reflection(&mut rng);
        let s_a = StokesVector::from_linear(rng.random_range(0.0..2.0), rng.random_range(0.0..1.0), rng.random_range(0.0..PI), 0.0);
        let base = rng.random_range(0.0..PI);
        let phi = rng.random_range(0.0..PI);
        let src = |a: f64| StokesVector::from_linear(1.0, rho, a, 0.0);
        let s_hat = (r.apply(&src(base), &s_a) + r.apply(&src(base + PI / 2.0), &s_a)) * 0.5;
        match extract_aolp(&r.apply(&src(phi), &s_a), &s_hat, rho, 0.0) {
            Some(e) => worst = worst.max(aolp_difference(e.aolp, phi).abs()),
            None => failed += 1,
        }
    }
    let elapsed = start.elapsed();
    report(
        1,
        "AoLP extraction invariance",
        failed == 0 && worst < EXTRACT_TOL && elapsed < EXTRACT_BUDGET,
        format!("{EXTRACT_DRAWS} draws, max |error| {worst:.2e} rad (< {EXTRACT_TOL:e}), {failed} rejected, {elapsed:.2?} (< {EXTRACT_BUDGET:?})"),
    );
}

fn max_abs_diff(a: &Matrix2<Complex64>, b: &Matrix2<Complex64>) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[test]
fn criterion_02_tnlc_model() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let beta_max = max_birefringence(TWIST);
    let agree = (0..TNLC_DRAWS)
        .map(|_| {
            let p = TnlcParams::new(rng.random_range(0.0..=beta_max));
            max_abs_diff(&tnlc_jones(&p).0, &tnlc_jones_decomposed(&p).0)
        })
        .fold(0.0, f64::max);
    let identity = max_abs_diff(&tnlc_jones(&TnlcParams::new(0.0)).0, &Matrix2::identity());
    let out = jones_to_stokes(&tnlc_jones(&TnlcParams::new(beta_max)).apply(&JonesVector::linear(0.0)));
    let quarter = aolp_difference(0.5 * out.s2().atan2(out.s1()), PI / 2.0).abs().max(out.s3().abs());
    let sweep = default_photometry().rotation_span().to_degrees();
    let elapsed = start.elapsed();
    report(
        2,
        "TN-LC model",
        agree < TNLC_TOL && identity < TNLC_TOL && quarter < TNLC_TOL && sweep >= SWEEP_MIN_DEG && elapsed < TNLC_BUDGET,
        format!(
            "closed forms agree to {agree:.1e}, zero birefringence off identity by {identity:.1e}, max birefringence off 90 deg by {quarter:.1e}, sweep {sweep:.3} deg (>= {SWEEP_MIN_DEG}), {elapsed:.2?}"
        ),
    );
}

fn random_jones(rng: &mut ChaCha8Rng) -> JonesMatrix {
    let mut c = || Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    JonesMatrix(Matrix2::new(c(), c(), c(), c()))
}

#[test]
fn criterion_03_homomorphism_and_mosaic_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut homo: f64 = 0.0;
    for _ in 0..1000 {
        let (a, b) = (random_jones(&mut rng), random_jones(&mut rng));
        let e = JonesVector::new(
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        );
        let product = jones_to_mueller(&(a * b)).0;
        let composed = jones_to_mueller(&a).0 * jones_to_mueller(&b).0;
        homo = homo.max((product - composed).abs().max());
        let direct = jones_to_stokes(&a.apply(&e)).to_vector();
        let via = mueller_apply(&jones_to_mueller(&a), &jones_to_stokes(&e)).to_vector();
        homo = homo.max((direct - via).abs().max());
    }
    let img = Grid::from_fn(40, 30, |_, _| {
        StokesVector::from_linear(rng.random_range(0.0..5.0), rng.random_range(0.0..1.0), rng.random_range(0.0..PI), 0.0)
    });
    let back = demosaic(&mosaic_sample(&img, 0.0, 7));
    let mosaic = img
        .iter()
        .zip(back.iter())
        .map(|(a, b)| (a.s0() - b.s0()).abs().max((a.s1() - b.s1()).abs()).max((a.s2() - b.s2()).abs()))
        .fold(0.0, f64::max);
    report(
        3,
        "Jones/Mueller homomorphism and mosaic round trip",
        homo < EXACT_TOL && mosaic < EXACT_TOL,
        format!("homomorphism max error {homo:.1e}, mosaic round trip max error {mosaic:.1e} (< {EXACT_TOL:e})"),
    );
}

#[test]
fn criterion_04_invisibility() {
    let mut cfg = sphere_rig(sphere_material(), checker());
    cfg.camera.width = 96;
    cfg.camera.height = 96;
    cfg.camera.intrinsics = Intrinsics::new(150.0, 150.0, 47.5, 47.5);
    cfg.scene.surfaces.push(Surface {
        shape: Shape::Plane {
            center: [0.0, 0.0, 2.6],
            normal: [0.1, -0.1, -1.0],
            u_axis: [1.0, 0.0, 0.0],
            half_extent: None,
        },
        material: MaterialParams {
            k_s: 0.3,
            roughness: 0.6,
            ..MaterialParams::default()
        },
        albedo: Albedo::Checker {
            a: vec![0.7],
            b: vec![0.1],
            period: 0.2,
        },
    });
    cfg.scene.ambient = Ambient {
        intensity: 0.2,
        dolp: 0.4,
        aolp_deg: 30.0,
    };
    let mut worst: f64 = 0.0;
    let mut frames = 0;
    for psf in [0.0, 1.2] {
        cfg.projector.psf_sigma = psf;
        let proj = cfg.projector.model();
        let seq = make_patterns(proj.width, proj.height, &cfg.patterns, &proj.photometry).unwrap();
        let gb = GBuffer::trace(&cfg.scene, &cfg.camera, &proj, 1);
        let uniform = gb.render(&proj, &Grid::filled(proj.width, proj.height, 255), Sampling::Nearest).unwrap();
        for cmd in &seq.frames {
            for sampling in [Sampling::Nearest, Sampling::Bilinear] {
                let img = gb.render(&proj, cmd, sampling).unwrap();
                for (a, b) in img.channel(0).iter().zip(uniform.channel(0).iter()) {
                    worst = worst.max((a.s0() - b.s0()).abs());
                }
                frames += 1;
            }
        }
    }
    report(
        4,
        "invisibility of patterns in intensity",
        worst < INVISIBILITY_TOL,
        format!("{frames} renders (sphere + plane + ambient, psf 0 and 1.2), max |s0 - s0_uniform| {worst:.1e} (< {INVISIBILITY_TOL:e})"),
    );
}

struct SphereRun {
    elapsed: Duration,
    xp_rms: f64,
    xp_count: usize,
    depth_median_rel: f64,
    pca_error: f64,
    refined_error: f64,
    normal_count: usize,
    truth: MaterialParams,
    params: MaterialParams,
    albedo_rms: f64,
    albedo_count: usize,
    relit_rmse: f64,
}

/// Full noiseless pipeline on one thread; shared by criteria 5, 7 and 8.
fn sphere_run() -> &'static SphereRun {
    static RUN: OnceLock<SphereRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = sphere_rig(sphere_material(), checker());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let start = Instant::now();
        let (sim, map, geo, est) = pool.install(|| {
            let sim = simulate(&cfg).unwrap();
            let (map, _) = decode_frames(&cfg, &sim.sequence, &sim.frames).unwrap();
            let geo = reconstruct(&cfg, &map);
            let est = estimate(&cfg, &sim.sequence, &sim.frames, &geo.points, &geo.normals).unwrap();
            (sim, map, geo, est)
        });
        let elapsed = start.elapsed();

        let gt_xp = sim.gbuffer.correspondence();
        let diffs: Vec<f64> = map
            .columns
            .iter()
            .zip(gt_xp.iter())
            .filter_map(|(a, b)| Some((*a)? - (*b)?))
            .collect();
        let xp_rms = (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt();
        let gt_depth = sim.gbuffer.depth();
        let mut rel: Vec<f64> = geo
            .depth
            .iter()
            .zip(gt_depth.iter())
            .filter_map(|(a, b)| Some(((*a)? - (*b)?).abs() / (*b)?))
            .collect();
        rel.sort_by(f64::total_cmp);

        let gt_normals = sim.gbuffer.normals();
        let interior = |x: usize, y: usize| {
            est.normals.get(x, y).is_some()
                && sim.gbuffer.pixels.get(x, y).as_ref().is_some_and(|g| g.normal.dot(&g.view) > 0.5)
        };
        let (pca_error, normal_count) = mean_angular_error(&geo.normals, &gt_normals, interior);
        let (refined_error, _) = mean_angular_error(&est.normals, &gt_normals, interior);

        let surface = &cfg.scene.surfaces[0];
        let true_albedo = Grid::from_fn(256, 256, |x, y| {
            (*est.albedo[0].get(x, y))?;
            let g = sim.gbuffer.pixels.get(x, y).as_ref()?;
            Some(surface.albedo.at(&g.point, 0))
        });
        let (mut se, mut n) = (0.0, 0usize);
        for (k, t) in est.albedo[0].iter().zip(true_albedo.iter()) {
            if let (Some(k), Some(t)) = (k, t) {
                se += ((k - t) / t).powi(2);
                n += 1;
            }
        }
        let masked_normals = Grid::from_fn(256, 256, |x, y| {
            est.normals.get(x, y).and(*gt_normals.get(x, y))
        });
        let gt_points = sim.gbuffer.pixels.map(|p| p.as_ref().map(|g| g.point));
        let lights = [
            DirectionalLight {
                direction: [0.3, -0.4, -1.0],
                intensity: vec![1.0],
            },
            DirectionalLight {
                direction: [-0.5, 0.1, -1.0],
                intensity: vec![0.5],
            },
            DirectionalLight {
                direction: [0.0, 0.0, -1.0],
                intensity: vec![0.3],
            },
        ];
        let reference = relight(&masked_normals, &[true_albedo], Some(&gt_points), &surface.material, &lights);
        let estimated = relight(&est.normals, &est.albedo, Some(&geo.points), &est.joint.params, &lights);

        SphereRun {
            elapsed,
            xp_rms,
            xp_count: diffs.len(),
            depth_median_rel: rel[rel.len() / 2],
            pca_error,
            refined_error,
            normal_count,
            truth: surface.material,
            params: est.joint.params,
            albedo_rms: (se / n as f64).sqrt(),
            albedo_count: n,
            relit_rmse: relative_rmse(&reference, &estimated),
        }
    })
}

#[test]
fn criterion_05_end_to_end_sphere() {
    let r = sphere_run();
    report(
        5,
        "end-to-end noiseless sphere",
        r.xp_rms < XP_RMS_MAX && r.depth_median_rel < DEPTH_MEDIAN_REL_MAX && r.elapsed < PIPELINE_BUDGET,
        format!(
            "x_p RMS {:.4} px over {} pixels (< {XP_RMS_MAX}), median relative depth error {:.2e} (< {DEPTH_MEDIAN_REL_MAX}), single-threaded pipeline {:.2?} (< {PIPELINE_BUDGET:?})",
            r.xp_rms, r.xp_count, r.depth_median_rel, r.elapsed
        ),
    );
}

/// Camera-frame mean s0 over object pixels of the v = 255 capture.
fn mean_object_s0(cfg: &RigConfig) -> (f64, usize) {
    let sim = simulate(cfg).unwrap();
    let i = sim.sequence.position(FrameTag::Uniform { v: 255 }).unwrap();
    let (mut sum, mut n) = (0.0, 0);
    for (g, s) in sim.gbuffer.pixels.iter().zip(sim.frames[i].channel(0).iter()) {
        if g.is_some() {
            sum += s.s0();
            n += 1;
        }
    }
    (sum / n as f64, n)
}

#[test]
fn criterion_06_robustness_to_ambient_and_diffuse() {
    let material = MaterialParams {
        k_s: 0.2,
        ..sphere_material()
    };
    let clean = sphere_rig(material, Albedo::constant(0.8));
    let (signal, _) = mean_object_s0(&clean);
    let mut unit = clean.clone();
    unit.scene.ambient = Ambient {
        intensity: 1.0,
        dolp: 0.3,
        aolp_deg: 30.0,
    };
    let (with_unit, _) = mean_object_s0(&unit);
    let mut lit = unit.clone();
    lit.scene.ambient.intensity = AMBIENT_FRACTION * signal / (with_unit - signal);
    let (with_ambient, _) = mean_object_s0(&lit);
    let added = (with_ambient - signal) / signal;

    let decode = |cfg: &RigConfig| {
        let sim = simulate(cfg).unwrap();
        decode_frames(cfg, &sim.sequence, &sim.frames).unwrap().0
    };
    let (a, b) = (decode(&clean), decode(&lit));
    let diffs: Vec<f64> = a
        .columns
        .iter()
        .zip(b.columns.iter())
        .filter_map(|(p, q)| Some((*p)? - (*q)?))
        .collect();
    let rms = (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len().max(1) as f64).sqrt();
    report(
        6,
        "robustness to ambient light and diffuse reflection",
        !diffs.is_empty() && rms < ROBUST_XP_RMS_MAX,
        format!(
            "k_s 0.2, K_b 0.8, ambient adds {:.0}% of mean signal (DoLP 0.3); x_p RMS change {rms:.2e} px over {} common pixels (< {ROBUST_XP_RMS_MAX}); valid {} -> {}",
            added * 100.0,
            diffs.len(),
            a.valid_count(),
            b.valid_count()
        ),
    );
}

#[test]
fn criterion_07_normal_refinement() {
    let r = sphere_run();
    let reduction = 1.0 - r.refined_error / r.pca_error;
    report(
        7,
        "normal refinement",
        reduction >= NORMAL_REDUCTION_MIN && r.refined_error < REFINED_NORMAL_MAX_DEG,
        format!(
            "interior mean angular error PCA {:.4} deg -> refined {:.4} deg over {} pixels, reduction {:.1}% (>= {:.0}%), refined < {REFINED_NORMAL_MAX_DEG} deg",
            r.pca_error,
            r.refined_error,
            r.normal_count,
            reduction * 100.0,
            NORMAL_REDUCTION_MIN * 100.0
        ),
    );
}

#[test]
fn criterion_08_brdf_round_trip() {
    let r = sphere_run();
    let names = ["mu", "k_s", "roughness", "shape", "kappa"];
    let rel: Vec<f64> = r
        .params
        .to_array()
        .iter()
        .zip(r.truth.to_array())
        .map(|(e, t)| (e - t).abs() / t)
        .collect();
    let worst = rel.iter().copied().fold(0.0, f64::max);
    let listing: Vec<String> = names.iter().zip(&rel).map(|(n, e)| format!("{n} {:.2e}", e)).collect();
    report(
        8,
        "BRDF round trip",
        worst < GLOBAL_REL_MAX && r.albedo_rms < ALBEDO_RMS_MAX && r.relit_rmse < RELIT_RMSE_MAX,
        format!(
            "global relative errors [{}] (< {GLOBAL_REL_MAX}), K_b RMS relative error {:.2e} over {} pixels (< {ALBEDO_RMS_MAX}), relit RMSE {:.2e} of max (< {RELIT_RMSE_MAX})",
            listing.join(", "),
            r.albedo_rms,
            r.albedo_count,
            r.relit_rmse
        ),
    );
}

#[test]
fn criterion_09_projector_calibration() {
    let mut cfg = sphere_rig(sphere_material(), checker());
    cfg.scene = Scene::default();
    cfg.projector.intrinsics = Intrinsics::new(380.0, 380.0, 131.0, 127.5);
    cfg.projector.pose = Pose::new([0.01, -0.07, 0.005], [-0.15, 0.005, 0.01]);
    assert_eq!(cfg.calibration.boards.len(), BOARDS);
    let cal = calibrate(&cfg).unwrap();
    let focal = (cal.intrinsics.fx / cfg.projector.intrinsics.fx - 1.0).abs();
    report(
        9,
        "projector calibration",
        focal < FOCAL_REL_MAX && cal.rms < REPROJECTION_RMS_MAX,
        format!(
            "{BOARDS} boards, focal {:.3} vs {:.3} (relative error {:.2e} < {FOCAL_REL_MAX}), column reprojection RMS {:.4} px (< {REPROJECTION_RMS_MAX}, initial {:.4})",
            cal.intrinsics.fx, cfg.projector.intrinsics.fx, focal, cal.rms, cal.initial_rms
        ),
    );
}

fn random_material(rng: &mut ChaCha8Rng) -> MaterialParams {
    MaterialParams {
        mu: rng.random_range(1.3..2.0),
        k_s: rng.random_range(0.3..1.0),
        roughness: rng.random_range(0.15..0.6),
        shape: rng.random_range(1.2..3.0),
        kappa: rng.random_range(0.5..3.0),
        entry_polarization: rng.random_bool(0.3),
    }
}

/// Front-facing shading geometry with the light near the view direction.
fn random_geometry(rng: &mut ChaCha8Rng) -> (Vector3<f64>, [f64; 3], [f64; 3]) {
    let view = Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), -1.0).normalize();
    let light = (view + Vector3::new(rng.random_range(0.02..0.12), rng.random_range(-0.05..0.05), 0.0)).normalize();
    let n = Vector3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), -1.0).normalize();
    (n, [light.x, light.y, light.z], [view.x, view.y, view.z])
}

fn outputs<T: Real>(r: &Reflection<T>) -> [T; 6] {
    [r.c_s, r.c_d, r.m12, r.m13, r.m21, r.m31]
}

/// Reflection under `[mu, k_s, roughness, shape, kappa, albedo, nx, ny, nz]`.
fn reflection_of<T: Real>(x: &[T; 9], entry: bool, light: &[f64; 3], view: &[f64; 3]) -> [T; 6] {
    let mat = Surrogate {
        mu: x[0],
        k_s: x[1],
        roughness: x[2],
        shape: x[3],
        kappa: x[4],
        entry_polarization: entry,
    };
    let n = normalize(&[x[6], x[7], x[8]]);
    outputs(&reflection(&mat, x[5], &n, light, view))
}

fn random_pixel(rng: &mut ChaCha8Rng, mat: &MaterialParams) -> (PixelObservation, f64) {
    let (n, light, view) = random_geometry(rng);
    let k_b = rng.random_range(0.2..0.8);
    let r = reflection_at(mat, k_b, &ShadingGeometry::new(n, Vector3::from(light), Vector3::from(view)));
    let frames: Vec<FrameObservation> = [StokesVector::new(1.0, 1.0, 0.0, 0.0), StokesVector::new(1.0, -1.0, 0.0, 0.0)]
        .iter()
        .map(|s| FrameObservation {
            source: *s,
            measured: r.apply(s, &StokesVector::ZERO),
        })
        .collect();
    let s_hat = (frames[0].measured + frames[1].measured) * 0.5;
    let tilt = Vector3::new(rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03), 0.0);
    let px = PixelObservation {
        x: 0,
        y: 0,
        normal: (n + tilt).normalize(),
        light,
        view,
        separation: separate_specular(&frames[0].measured, &s_hat, 1.0),
        frames,
    };
    (px, k_b)
}

fn non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

#[test]
fn criterion_10_gradients_and_monotone_solver() {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let mut worst: f64 = 0.0;
    for _ in 0..JACOBIAN_CONFIGS {
        let mat = random_material(&mut rng);
        let (n, light, view) = random_geometry(&mut rng);
        let p = mat.to_array();
        let x = [p[0], p[1], p[2], p[3], p[4], rng.random_range(0.1..0.9), n.x, n.y, n.z];
        let jets: [Jet<9>; 9] = std::array::from_fn(|i| Jet::variable(x[i], i));
        let analytic = reflection_of(&jets, mat.entry_polarization, &light, &view);
        for j in 0..9 {
            let h = 1e-6 * x[j].abs().max(0.1);
            let eval = |d: f64| {
                let mut y = x;
                y[j] += d;
                reflection_of(&y, mat.entry_polarization, &light, &view)
            };
            let (plus, minus) = (eval(h), eval(-h));
            for (k, a) in analytic.iter().enumerate() {
                let fd = (plus[k] - minus[k]) / (2.0 * h);
                let scale = fd.abs().max(a.d[j].abs()).max(1e-6);
                worst = worst.max((fd - a.d[j]).abs() / scale);
            }
        }
    }

    let mut monotone = 0;
    let mut decreased = 0;
    for _ in 0..MONOTONE_INSTANCES {
        let truth = random_material(&mut rng);
        let pixels: Vec<PixelObservation> = (0..40).map(|_| random_pixel(&mut rng, &truth).0).collect();
        let normals: Vec<Vector3<f64>> = pixels.iter().map(|p| p.normal).collect();
        let input = EstimationInput {
            pixels,
            width: 40,
            height: 1,
            clamped: 0,
        };
        let cfg = EstimationConfig {
            initial: MaterialParams {
                entry_polarization: truth.entry_polarization,
                ..EstimationConfig::default().initial
            },
            init_iterations: 50,
            outer_iterations: 20,
            ..Default::default()
        };
        let init = init_brdf(&input, &normals, &cfg);
        let joint = joint_refine(&input, &init.params, &init.albedo, &normals, &cfg);
        if non_increasing(&init.losses) && non_increasing(&joint.losses) {
            monotone += 1;
        }
        if init.loss <= init.initial_loss && joint.losses.last() <= joint.losses.first() {
            decreased += 1;
        }
    }
    report(
        10,
        "gradient check and solver monotonicity",
        worst < JACOBIAN_TOL && monotone == MONOTONE_INSTANCES && decreased == MONOTONE_INSTANCES,
        format!(
            "forward-mode vs central differences max relative error {worst:.1e} over {JACOBIAN_CONFIGS} configurations (< {JACOBIAN_TOL:e}); accepted-step losses non-increasing on {monotone}/{MONOTONE_INSTANCES} estimation instances"
        ),
    );
}
