//! File formats: PFM float images, ASCII PLY, PGM patterns, PNG previews and
//! the JSON manifests tying them together.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::codec::{CorrespondenceMap, FrameTag, PatternParams, PatternSequence};
use crate::config::RigConfig;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::pbrdf::MaterialParams;
use crate::polcore::StokesVector;
use crate::render::PolarimetricImage;

pub const SCHEMA: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const GAMMA: f64 = 2.2;

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Raw PFM contents with rows stored top to bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

/// Writes a little-endian PFM. `data` is row-major, top row first.
pub fn write_pfm(path: &Path, pfm: &Pfm) -> Result<()> {
    let tag = match pfm.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(format_err(path, format!("PFM holds 1 or 3 channels, not {c}"))),
    };
    if pfm.data.len() != pfm.width * pfm.height * pfm.channels {
        return Err(format_err(path, "data length does not match dimensions"));
    }
    let mut out = Vec::with_capacity(32 + pfm.data.len() * 4);
    write!(out, "{tag}\n{} {}\n-1.0\n", pfm.width, pfm.height)?;
    let row = pfm.width * pfm.channels;
    for y in (0..pfm.height).rev() {
        for v in &pfm.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn header_token(reader: &mut impl BufRead, path: &Path) -> Result<String> {
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(format_err(path, "truncated header"));
        }
        let t = line.trim();
        if !t.is_empty() {
            return Ok(t.to_string());
        }
    }
}

pub fn read_pfm(path: &Path) -> Result<Pfm> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let channels = match header_token(&mut reader, path)?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(format_err(path, format!("unknown PFM tag {other:?}"))),
    };
    let dims = header_token(&mut reader, path)?;
    let mut it = dims.split_whitespace().map(str::parse::<usize>);
    let (Some(Ok(width)), Some(Ok(height)), None) = (it.next(), it.next(), it.next()) else {
        return Err(format_err(path, format!("bad dimensions {dims:?}")));
    };
    let scale: f64 = header_token(&mut reader, path)?
        .parse()
        .map_err(|_| format_err(path, "bad scale"))?;
    let little = scale < 0.0;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let n = width * height * channels;
    if bytes.len() != n * 4 {
        return Err(format_err(path, format!("expected {} data bytes, found {}", n * 4, bytes.len())));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| {
            let b = [b[0], b[1], b[2], b[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let row = width * channels;
    let mut data = Vec::with_capacity(n);
    for y in (0..height).rev() {
        data.extend_from_slice(&values[y * row..(y + 1) * row]);
    }
    Ok(Pfm {
        width,
        height,
        channels,
        data,
    })
}

fn read_pfm_channels(path: &Path, channels: usize) -> Result<Pfm> {
    let pfm = read_pfm(path)?;
    if pfm.channels != channels {
        return Err(format_err(path, format!("expected {channels} channels, found {}", pfm.channels)));
    }
    Ok(pfm)
}

pub fn write_plane(path: &Path, g: &Grid<f64>) -> Result<()> {
    write_pfm(
        path,
        &Pfm {
            width: g.width(),
            height: g.height(),
            channels: 1,
            data: g.iter().map(|v| *v as f32).collect(),
        },
    )
}

pub fn read_plane(path: &Path) -> Result<Grid<f64>> {
    let p = read_pfm_channels(path, 1)?;
    Grid::from_vec(p.width, p.height, p.data.into_iter().map(f64::from).collect())
}

/// Scalar map with NaN marking invalid pixels.
pub fn write_scalar_map(path: &Path, g: &Grid<Option<f64>>) -> Result<()> {
    write_plane(path, &g.map(|v| v.unwrap_or(f64::NAN)))
}

pub fn read_scalar_map(path: &Path) -> Result<Grid<Option<f64>>> {
    Ok(read_plane(path)?.map(|v| v.is_finite().then_some(*v)))
}

pub fn write_normal_map(path: &Path, g: &Grid<Option<Vector3<f64>>>) -> Result<()> {
    let data = g
        .iter()
        .flat_map(|n| match n {
            Some(n) => [n.x as f32, n.y as f32, n.z as f32],
            None => [f32::NAN; 3],
        })
        .collect();
    write_pfm(
        path,
        &Pfm {
            width: g.width(),
            height: g.height(),
            channels: 3,
            data,
        },
    )
}

pub fn read_normal_map(path: &Path) -> Result<Grid<Option<Vector3<f64>>>> {
    let p = read_pfm_channels(path, 3)?;
    let v: Vec<_> = p
        .data
        .chunks_exact(3)
        .map(|c| {
            let n = Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64);
            n.iter().all(|x| x.is_finite()).then(|| n.normalize())
        })
        .collect();
    Grid::from_vec(p.width, p.height, v)
}

/// Three-plane PFM of `(x_p, validity, 0)`.
pub fn write_correspondence(path: &Path, map: &CorrespondenceMap) -> Result<()> {
    let data = map
        .columns
        .iter()
        .flat_map(|c| match c {
            Some(x) => [*x as f32, 1.0, 0.0],
            None => [0.0, 0.0, 0.0],
        })
        .collect();
    write_pfm(
        path,
        &Pfm {
            width: map.width(),
            height: map.height(),
            channels: 3,
            data,
        },
    )
}

pub fn read_correspondence(path: &Path) -> Result<CorrespondenceMap> {
    let p = read_pfm_channels(path, 3)?;
    let v = p.data.chunks_exact(3).map(|c| (c[1] > 0.5).then_some(c[0] as f64)).collect();
    Ok(CorrespondenceMap {
        columns: Grid::from_vec(p.width, p.height, v)?,
    })
}

/// ASCII PLY of valid points as `x y z nx ny nz`; missing normals are zero.
pub fn write_ply(path: &Path, points: &Grid<Option<Point3<f64>>>, normals: &Grid<Option<Vector3<f64>>>) -> Result<()> {
    points.same_dims(normals)?;
    let rows: Vec<(Point3<f64>, Vector3<f64>)> = points
        .iter()
        .zip(normals.iter())
        .filter_map(|(p, n)| Some(((*p)?, n.unwrap_or_else(Vector3::zeros))))
        .collect();
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", rows.len()));
    for prop in ["x", "y", "z", "nx", "ny", "nz"] {
        out.push_str(&format!("property float {prop}\n"));
    }
    out.push_str("end_header\n");
    for (p, n) in rows {
        out.push_str(&format!("{} {} {} {} {} {}\n", p.x, p.y, p.z, n.x, n.y, n.z));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads back the vertices of an ASCII PLY written by [`write_ply`].
pub fn read_ply(path: &Path) -> Result<Vec<[f64; 6]>> {
    let text = fs::read_to_string(path)?;
    let (header, body) = text.split_once("end_header\n").ok_or_else(|| format_err(path, "missing end_header"))?;
    let count = header
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .and_then(|n| n.trim().parse::<usize>().ok())
        .ok_or_else(|| format_err(path, "missing vertex count"))?;
    let rows = body
        .lines()
        .take(count)
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().filter_map(|t| t.parse().ok()).collect();
            v.try_into().map_err(|_| format_err(path, format!("bad vertex line {l:?}")))
        })
        .collect::<Result<Vec<[f64; 6]>>>()?;
    if rows.len() != count {
        return Err(format_err(path, "fewer vertices than declared"));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub tag: FrameTag,
    /// Per channel, the `s0`, `s1`, `s2` plane files.
    pub planes: Vec<[String; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureManifest {
    pub schema: u32,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Ambient intensity present in the captures.
    pub ambient_intensity: f64,
    pub rig: RigConfig,
    pub frames: Vec<FrameEntry>,
}

fn check_schema(path: &Path, schema: u32) -> Result<()> {
    if schema != SCHEMA {
        return Err(format_err(path, format!("unsupported schema {schema}")));
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| format_err(path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes one PFM per Stokes plane plus the capture manifest.
pub fn write_captures(dir: &Path, rig: &RigConfig, tags: &[FrameTag], frames: &[PolarimetricImage]) -> Result<CaptureManifest> {
    fs::create_dir_all(dir)?;
    let first = frames.first().ok_or_else(|| format_err(dir, "no frames to write"))?;
    let mut entries = Vec::with_capacity(frames.len());
    for (i, (tag, img)) in tags.iter().zip(frames).enumerate() {
        let mut planes = Vec::with_capacity(img.channels.len());
        for (c, ch) in img.channels.iter().enumerate() {
            let names: [String; 3] = std::array::from_fn(|k| format!("frame{i:03}_c{c}_s{k}.pfm"));
            for (k, name) in names.iter().enumerate() {
                let g = ch.map(|s| match k {
                    0 => s.s0(),
                    1 => s.s1(),
                    _ => s.s2(),
                });
                write_plane(&dir.join(name), &g)?;
            }
            planes.push(names);
        }
        entries.push(FrameEntry { tag: *tag, planes });
    }
    let manifest = CaptureManifest {
        schema: SCHEMA,
        width: first.width(),
        height: first.height(),
        channels: first.channels.len(),
        ambient_intensity: rig.scene.ambient.intensity,
        rig: rig.clone(),
        frames: entries,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CaptureManifest> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(format_err(&path, "capture manifest not found"));
    }
    let m: CaptureManifest = read_json(&path)?;
    check_schema(&path, m.schema)?;
    Ok(m)
}

pub fn read_captures(dir: &Path) -> Result<(CaptureManifest, Vec<PolarimetricImage>)> {
    let m = read_manifest(dir)?;
    let mut frames = Vec::with_capacity(m.frames.len());
    for entry in &m.frames {
        if entry.planes.len() != m.channels {
            return Err(format_err(&dir.join(MANIFEST), "frame channel count disagrees with manifest"));
        }
        let mut channels = Vec::with_capacity(m.channels);
        for names in &entry.planes {
            let [s0, s1, s2] = names.each_ref().map(|n| read_plane(&dir.join(n)));
            let (s0, s1, s2) = (s0?, s1?, s2?);
            s0.same_dims(&s1)?;
            s0.same_dims(&s2)?;
            if s0.width() != m.width || s0.height() != m.height {
                return Err(format_err(&dir.join(&names[0]), "plane size disagrees with manifest"));
            }
            let data = (0..s0.len())
                .map(|i| StokesVector::new(s0.as_slice()[i], s1.as_slice()[i], s2.as_slice()[i], 0.0))
                .collect();
            channels.push(Grid::from_vec(m.width, m.height, data)?);
        }
        frames.push(PolarimetricImage { channels });
    }
    Ok((m, frames))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternManifest {
    pub schema: u32,
    pub params: PatternParams,
    pub width: usize,
    pub height: usize,
    pub frames: Vec<(String, FrameTag)>,
}

/// Writes the projector commands as 8-bit PGMs plus `patterns.json`.
pub fn write_patterns(dir: &Path, seq: &PatternSequence) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut frames = Vec::with_capacity(seq.len());
    for (i, (tag, cmd)) in seq.tags.iter().zip(&seq.frames).enumerate() {
        let name = format!("pattern{i:03}.pgm");
        let img = GrayImage::from_raw(cmd.width() as u32, cmd.height() as u32, cmd.as_slice().to_vec())
            .ok_or_else(|| format_err(dir, "pattern buffer size"))?;
        img.save_with_format(dir.join(&name), image::ImageFormat::Pnm)?;
        frames.push((name, *tag));
    }
    write_json(
        &dir.join("patterns.json"),
        &PatternManifest {
            schema: SCHEMA,
            params: seq.params,
            width: seq.width,
            height: seq.height,
            frames,
        },
    )
}

pub fn read_pattern(path: &Path) -> Result<Grid<u8>> {
    let img = image::open(path)?.into_luma8();
    Grid::from_vec(img.width() as usize, img.height() as usize, img.into_raw())
}

fn encode(v: f64) -> u8 {
    (v.clamp(0.0, 1.0).powf(1.0 / GAMMA) * 255.0).round() as u8
}

fn hsv(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let f = h - h.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match h as u32 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r, g, b].map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// `s0` scaled to its maximum and gamma encoded; AoLP as hue with DoLP as value.
pub fn write_previews(s0_path: &Path, pol_path: &Path, g: &Grid<StokesVector>) -> Result<()> {
    let max = g.iter().fold(0.0f64, |m, s| m.max(s.s0()));
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    let (w, h) = (g.width() as u32, g.height() as u32);
    let gray = GrayImage::from_raw(w, h, g.iter().map(|s| encode(s.s0() * scale)).collect()).expect("sized buffer");
    gray.save_with_format(s0_path, image::ImageFormat::Png)?;
    let rgb: Vec<u8> = g
        .iter()
        .flat_map(|s| {
            if s.s0() > 0.0 {
                let aolp = 0.5 * s.s2().atan2(s.s1());
                let dolp = (s.linear_magnitude() / s.s0()).min(1.0);
                hsv(aolp.rem_euclid(std::f64::consts::PI) / std::f64::consts::PI, 1.0, dolp)
            } else {
                [0; 3]
            }
        })
        .collect();
    RgbImage::from_raw(w, h, rgb)
        .expect("sized buffer")
        .save_with_format(pol_path, image::ImageFormat::Png)?;
    Ok(())
}

/// Linear radiance to an 8-bit PNG: exposure maps the brightest value to
/// white, then gamma 2.2. One channel gives gray, three give RGB.
pub fn write_relit_png(path: &Path, channels: &[Grid<f64>]) -> Result<()> {
    let first = channels.first().ok_or_else(|| format_err(path, "no channels"))?;
    for c in channels {
        first.same_dims(c)?;
    }
    let max = channels.iter().flat_map(|c| c.iter()).fold(0.0f64, |m, v| m.max(*v));
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    let (w, h) = (first.width() as u32, first.height() as u32);
    match channels.len() {
        1 => GrayImage::from_raw(w, h, first.iter().map(|v| encode(v * scale)).collect())
            .expect("sized buffer")
            .save_with_format(path, image::ImageFormat::Png)?,
        3 => {
            let data = (0..first.len())
                .flat_map(|i| channels.iter().map(move |c| encode(c.as_slice()[i] * scale)))
                .collect();
            RgbImage::from_raw(w, h, data)
                .expect("sized buffer")
                .save_with_format(path, image::ImageFormat::Png)?
        }
        n => return Err(format_err(path, format!("cannot encode {n} channels"))),
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialsFile {
    pub schema: u32,
    pub params: MaterialParams,
    pub initial_params: MaterialParams,
    /// Albedo map per color channel, relative to this file.
    pub albedo: Vec<String>,
    pub normals: String,
    pub init_loss: f64,
    pub losses: Vec<f64>,
    pub converged: bool,
    /// Pixels whose diffuse estimate was clamped to zero.
    pub clamped: usize,
}

pub fn write_materials(path: &Path, m: &MaterialsFile) -> Result<()> {
    write_json(path, m)
}

pub fn read_materials(path: &Path) -> Result<MaterialsFile> {
    let m: MaterialsFile = read_json(path)?;
    check_schema(path, m.schema)?;
    m.params.validate()?;
    Ok(m)
}

pub fn write_config(path: &Path, cfg: &RigConfig) -> Result<()> {
    write_json(path, cfg)
}

pub fn read_lights(path: &Path) -> Result<Vec<crate::recon::DirectionalLight>> {
    read_json(path)
}

/// Path of a sibling file next to `path`.
pub fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}
