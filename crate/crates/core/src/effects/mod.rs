//! Landmark-anchored effect compositing and prompt captions.
//!
//! An [`EffectSpec`] is a small asset package: RGBA sprite layers pinned to a
//! landmark plus a list of whole-frame filters. Sprites are sized and offset in
//! units of the inter-ocular distance, so an effect follows the head as it
//! moves and turns. Manifests are JSON with PNG sprites next to them.

mod library;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use library::{builtin_effect, builtin_effects, BUILTIN_NAMES};

use crate::error::{Error, Result};
use crate::imaging::{clamp01, image_error, Frame};
use crate::synthface::{FaceParams, LandmarkSet, Point, HAIR_PALETTE};

pub const MANIFEST_FILE: &str = "effect.json";

/// Straight-alpha RGBA raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpriteRaster {
    h: usize,
    w: usize,
    rgba: Vec<[f32; 4]>,
}

impl SpriteRaster {
    pub fn new(h: usize, w: usize, rgba: Vec<[f32; 4]>) -> Result<Self> {
        if h == 0 || w == 0 || rgba.len() != h * w {
            return Err(Error::Shape(format!("sprite {h}x{w} with {} texels", rgba.len())));
        }
        if rgba.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Schema("sprite samples must lie in [0,1]".into()));
        }
        Ok(Self { h, w, rgba })
    }

    /// Fills a sprite from `f(u, v)` over normalized coordinates in `[0, 1]`,
    /// 4x4 supersampled, then quantized to 8 bits so PNG storage is lossless.
    pub fn rasterize(h: usize, w: usize, f: impl Fn(f64, f64) -> [f32; 4]) -> Self {
        const N: usize = 4;
        let mut rgba = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let mut premul = [0f32; 3];
                let mut alpha = 0f32;
                for sy in 0..N {
                    for sx in 0..N {
                        let u = (x as f64 + (sx as f64 + 0.5) / N as f64) / w as f64;
                        let v = (y as f64 + (sy as f64 + 0.5) / N as f64) / h as f64;
                        let c = f(u, v);
                        for k in 0..3 {
                            premul[k] += c[k] * c[3];
                        }
                        alpha += c[3];
                    }
                }
                let a = alpha / (N * N) as f32;
                let color = if alpha > 0.0 {
                    premul.map(|p| p / alpha)
                } else {
                    [0.0; 3]
                };
                rgba.push([color[0], color[1], color[2], a].map(quantize));
            }
        }
        Self { h, w, rgba }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn texel(&self, y: usize, x: usize) -> [f32; 4] {
        self.rgba[y * self.w + x]
    }

    /// Bilinear sample of premultiplied color and alpha at index coordinates;
    /// outside the raster is fully transparent.
    fn sample_premultiplied(&self, sx: f64, sy: f64) -> [f32; 4] {
        let x0 = sx.floor();
        let y0 = sy.floor();
        let fx = (sx - x0) as f32;
        let fy = (sy - y0) as f32;
        let mut out = [0f32; 4];
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let (xi, yi) = (x0 as i64 + dx, y0 as i64 + dy);
                if xi < 0 || yi < 0 || xi >= self.w as i64 || yi >= self.h as i64 {
                    continue;
                }
                let t = self.texel(yi as usize, xi as usize);
                let wgt = wx * wy;
                for k in 0..3 {
                    out[k] += wgt * t[k] * t[3];
                }
                out[3] += wgt * t[3];
            }
        }
        out
    }

    fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| match e {
                image::ImageError::IoError(_) => Error::Asset(format!("cannot read sprite {}: {e}", path.display())),
                other => image_error(path, other),
            })?
            .to_rgba8();
        let (w, h) = img.dimensions();
        let rgba = img.pixels().map(|p| p.0.map(|c| c as f32 / 255.0)).collect();
        SpriteRaster::new(h as usize, w as usize, rgba)
    }

    fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .rgba
            .iter()
            .flat_map(|t| t.map(|v| (255.0 * v).round() as u8))
            .collect();
        image::save_buffer(
            path,
            &bytes,
            self.w as u32,
            self.h as u32,
            image::ExtendedColorType::Rgba8,
        )
        .map_err(|e| image_error(path, e))
    }
}

fn quantize(v: f32) -> f32 {
    (255.0 * v.clamp(0.0, 1.0)).round() / 255.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpriteLayer {
    /// File name inside the asset package.
    pub file: String,
    pub raster: SpriteRaster,
    pub anchor: String,
    /// Offset from the anchor in inter-ocular distances.
    pub offset: (f64, f64),
    /// Rendered sprite width in inter-ocular distances.
    pub scale: f64,
    pub z_order: i32,
}

/// Whole-frame pointwise filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FilterOp {
    /// Mix toward `color` by `strength`.
    Tint {
        color: [f32; 3],
        strength: f32,
    },
    Brightness {
        delta: f32,
    },
    Gamma {
        gamma: f32,
    },
}

impl FilterOp {
    fn validate(&self) -> Result<()> {
        match self {
            FilterOp::Tint { color, strength } => {
                if color.iter().any(|c| !(0.0..=1.0).contains(c)) || !(0.0..=1.0).contains(strength) {
                    return Err(Error::Schema("tint color and strength must lie in [0,1]".into()));
                }
            }
            FilterOp::Brightness { delta } => {
                if !delta.is_finite() {
                    return Err(Error::Schema("brightness delta must be finite".into()));
                }
            }
            FilterOp::Gamma { gamma } => {
                if !(gamma.is_finite() && *gamma > 0.0) {
                    return Err(Error::Schema(format!("gamma must be > 0, got {gamma}")));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, v: f32, channel: usize) -> f32 {
        clamp01(match self {
            FilterOp::Tint { color, strength } => (1.0 - strength) * v + strength * color[channel],
            FilterOp::Brightness { delta } => v + delta,
            FilterOp::Gamma { gamma } => v.powf(*gamma),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectSpec {
    pub name: String,
    pub conj: String,
    pub sprites: Vec<SpriteLayer>,
    pub filters: Vec<FilterOp>,
}

impl EffectSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Schema("effect name must be non-empty".into()));
        }
        for s in &self.sprites {
            if !LandmarkSet::is_valid_name(&s.anchor) {
                return Err(Error::Schema(format!("unknown landmark anchor `{}`", s.anchor)));
            }
            if !(s.scale.is_finite() && s.scale > 0.0) {
                return Err(Error::Schema(format!("sprite scale must be > 0, got {}", s.scale)));
            }
        }
        self.filters.iter().try_for_each(FilterOp::validate)
    }

    pub fn is_empty(&self) -> bool {
        self.sprites.is_empty() && self.filters.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestSprite {
    file: String,
    anchor: String,
    offset: [f64; 2],
    scale: f64,
    z: i32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    name: String,
    #[serde(default)]
    conj: String,
    #[serde(default)]
    filters: Vec<FilterOp>,
    #[serde(default)]
    sprites: Vec<ManifestSprite>,
}

/// Loads a manifest; sprite paths resolve relative to its directory.
pub fn load_effect(manifest_path: impl AsRef<Path>) -> Result<EffectSpec> {
    let path = manifest_path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut sprites = Vec::with_capacity(m.sprites.len());
    for s in m.sprites {
        if !LandmarkSet::is_valid_name(&s.anchor) {
            return Err(Error::Schema(format!("unknown landmark anchor `{}`", s.anchor)));
        }
        let file = base.join(&s.file);
        if !file.is_file() {
            return Err(Error::Asset(format!("missing sprite {}", file.display())));
        }
        sprites.push(SpriteLayer {
            raster: SpriteRaster::load_png(&file)?,
            file: s.file,
            anchor: s.anchor,
            offset: (s.offset[0], s.offset[1]),
            scale: s.scale,
            z_order: s.z,
        });
    }
    let spec = EffectSpec {
        name: m.name,
        conj: m.conj,
        sprites,
        filters: m.filters,
    };
    spec.validate()?;
    Ok(spec)
}

/// Writes `effect.json` plus sprite PNGs into `dir`; returns the manifest path.
pub fn write_effect(e: &EffectSpec, dir: impl AsRef<Path>) -> Result<PathBuf> {
    e.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|err| Error::io(dir, err))?;
    let mut sprites = Vec::with_capacity(e.sprites.len());
    for s in &e.sprites {
        s.raster.save_png(&dir.join(&s.file))?;
        sprites.push(ManifestSprite {
            file: s.file.clone(),
            anchor: s.anchor.clone(),
            offset: [s.offset.0, s.offset.1],
            scale: s.scale,
            z: s.z_order,
        });
    }
    let m = Manifest {
        name: e.name.clone(),
        conj: e.conj.clone(),
        filters: e.filters.clone(),
        sprites,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&m).expect("manifest serializes");
    fs::write(&path, json).map_err(|err| Error::io(&path, err))?;
    Ok(path)
}

/// Axis-aligned placement of a sprite on the canvas, in continuous pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

pub fn sprite_placement(layer: &SpriteLayer, lms: &LandmarkSet) -> Result<Placement> {
    let iod = lms.inter_ocular();
    if iod.is_nan() || iod <= 0.0 {
        return Err(Error::Geometry("zero inter-ocular distance".into()));
    }
    let anchor: Point = lms
        .get(&layer.anchor)
        .ok_or_else(|| Error::Schema(format!("unknown landmark anchor `{}`", layer.anchor)))?;
    let width = layer.scale * iod;
    let height = width * layer.raster.h as f64 / layer.raster.w as f64;
    let cx = anchor.x + layer.offset.0 * iod;
    let cy = anchor.y + layer.offset.1 * iod;
    Ok(Placement {
        left: cx - width / 2.0,
        top: cy - height / 2.0,
        width,
        height,
    })
}

/// Composites every sprite (ascending `z_order`, stable) and then runs the
/// filters in list order.
pub fn apply_effect(f: &Frame, lms: &LandmarkSet, e: &EffectSpec) -> Result<Frame> {
    if f.channels() != 3 {
        return Err(Error::Shape("effects need an RGB frame".into()));
    }
    if e.is_empty() {
        return Ok(f.clone());
    }
    let (h, w, _) = f.shape();
    let mut px = f.data().to_vec();
    let mut layers: Vec<&SpriteLayer> = e.sprites.iter().collect();
    layers.sort_by_key(|l| l.z_order);
    for layer in layers {
        let pl = sprite_placement(layer, lms)?;
        let texel = pl.width / layer.raster.w as f64;
        let x0 = pl.left.floor().max(0.0) as usize;
        let y0 = pl.top.floor().max(0.0) as usize;
        let x1 = ((pl.left + pl.width).ceil().max(0.0) as usize).min(w);
        let y1 = ((pl.top + pl.height).ceil().max(0.0) as usize).min(h);
        for y in y0..y1 {
            let sy = (y as f64 + 0.5 - pl.top) / texel - 0.5;
            for x in x0..x1 {
                let sx = (x as f64 + 0.5 - pl.left) / texel - 0.5;
                let s = layer.raster.sample_premultiplied(sx, sy);
                if s[3] <= 0.0 {
                    continue;
                }
                let i = (y * w + x) * 3;
                for k in 0..3 {
                    px[i + k] = clamp01(s[k] + (1.0 - s[3]) * px[i + k]);
                }
            }
        }
    }
    for op in &e.filters {
        for (i, v) in px.iter_mut().enumerate() {
            *v = op.apply(*v, i % 3);
        }
    }
    Frame::new(h, w, 3, px)
}

/// `"[base] [conj] [name]"`, with an empty conjunction collapsing to one space.
pub fn caption(e: &EffectSpec, base_caption: &str) -> Result<String> {
    if e.name.trim().is_empty() {
        return Err(Error::Schema("effect name must be non-empty".into()));
    }
    if base_caption.trim().is_empty() {
        return Err(Error::Schema("base caption must be non-empty".into()));
    }
    Ok([base_caption.trim(), e.conj.trim(), e.name.trim()]
        .iter()
        .filter(|s| !s.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join(" "))
}

pub fn hair_descriptor(p: &FaceParams) -> &'static str {
    let dist = |c: &[f32; 3]| -> f32 { c.iter().zip(&p.hair_tone).map(|(a, b)| (a - b) * (a - b)).sum() };
    HAIR_PALETTE
        .iter()
        .min_by(|a, b| dist(&a.1).total_cmp(&dist(&b.1)))
        .map(|(name, _)| *name)
        .unwrap()
}

pub fn pose_descriptor(yaw: f64) -> &'static str {
    if yaw < -10.0 {
        "left"
    } else if yaw > 10.0 {
        "right"
    } else {
        "front"
    }
}

/// Template captioner: `"a person with <hair> hair facing <pose>"`.
pub fn describe_face(p: &FaceParams) -> String {
    format!(
        "a person with {} hair facing {}",
        hair_descriptor(p),
        pose_descriptor(p.yaw)
    )
}
