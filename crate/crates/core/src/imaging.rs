//! Pixel containers, the MFV video container and small image helpers.
//!
//! Pixels are `f32` in `[0, 1]`, stored row-major and channel-last. MFV is the
//! format of record: a fixed little-endian header followed by raw `f32`
//! samples, so a save/load cycle is bit-exact. PNG export exists only for
//! looking at results.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MFV_MAGIC: &[u8; 4] = b"MFV1";
pub const MFV_HEADER_LEN: usize = 24;

/// A single image with `c` channels (1 = gray, 3 = RGB).
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f32>,
}

impl Frame {
    /// Validating constructor: every sample must be finite and inside `[0, 1]`.
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(h, w, c)?;
        if data.len() != h * w * c {
            return Err(Error::Shape(format!(
                "expected {} samples for {h}x{w}x{c}, got {}",
                h * w * c,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Format(format!("pixel value {bad} outside [0,1]")));
        }
        Ok(Self { h, w, c, data })
    }

    /// Builds a frame from arbitrary reals, clamping into `[0, 1]`. NaN maps to 0.
    pub fn from_clamped(h: usize, w: usize, c: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(h, w, c)?;
        if data.len() != h * w * c {
            return Err(Error::Shape(format!(
                "expected {} samples for {h}x{w}x{c}, got {}",
                h * w * c,
                data.len()
            )));
        }
        let data = data.into_iter().map(clamp01).collect();
        Ok(Self { h, w, c, data })
    }

    pub fn filled(h: usize, w: usize, c: usize, value: f32) -> Result<Self> {
        check_dims(h, w, c)?;
        Ok(Self {
            h,
            w,
            c,
            data: vec![clamp01(value); h * w * c],
        })
    }

    /// `f(y, x, channel)`; the result is clamped.
    pub fn from_fn(h: usize, w: usize, c: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        check_dims(h, w, c)?;
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data.push(clamp01(f(y, x, ch)));
                }
            }
        }
        Ok(Self { h, w, c, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, ch: usize) -> f32 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    /// Elementwise map; output is clamped back into range.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Frame {
        Frame {
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data.iter().map(|&v| clamp01(f(v))).collect(),
        }
    }

    /// Rec. 601 luma, or the single channel for gray frames.
    pub fn luma(&self, y: usize, x: usize) -> f32 {
        if self.c == 1 {
            self.get(y, x, 0)
        } else {
            0.299 * self.get(y, x, 0) + 0.587 * self.get(y, x, 1) + 0.114 * self.get(y, x, 2)
        }
    }

    pub fn to_luma(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.h * self.w);
        for y in 0..self.h {
            for x in 0..self.w {
                out.push(self.luma(y, x));
            }
        }
        out
    }

    /// Mirror around the vertical axis.
    pub fn flip_horizontal(&self) -> Frame {
        Frame::from_fn(self.h, self.w, self.c, |y, x, ch| self.get(y, self.w - 1 - x, ch))
            .expect("dimensions already validated")
    }

    pub fn max_abs_diff(&self, other: &Frame) -> Result<f32> {
        ensure_same_shape(self, other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    pub fn mean_abs_diff(&self, other: &Frame) -> Result<f64> {
        ensure_same_shape(self, other)?;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        Ok(sum / self.data.len() as f64)
    }
}

#[inline]
pub(crate) fn clamp01(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

fn check_dims(h: usize, w: usize, c: usize) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(Error::Shape(format!("empty frame {h}x{w}")));
    }
    if c != 1 && c != 3 {
        return Err(Error::Shape(format!("unsupported channel count {c}")));
    }
    Ok(())
}

pub(crate) fn ensure_same_shape(a: &Frame, b: &Frame) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "frame shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// An ordered, shape-homogeneous frame sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    frames: Vec<Frame>,
    fps: f32,
}

impl Video {
    pub fn new(frames: Vec<Frame>, fps: f32) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Shape("video needs at least one frame".into()))?;
        if let Some(bad) = frames.iter().find(|f| f.shape() != first.shape()) {
            return Err(Error::Shape(format!(
                "heterogeneous video: {:?} vs {:?}",
                first.shape(),
                bad.shape()
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Format(format!("fps must be positive, got {fps}")));
        }
        Ok(Self { frames, fps })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn frame_shape(&self) -> (usize, usize, usize) {
        self.frames[0].shape()
    }

    /// Same fps, new frames.
    pub fn with_frames(&self, frames: Vec<Frame>) -> Result<Video> {
        Video::new(frames, self.fps)
    }
}

pub fn encode_video(v: &Video) -> Vec<u8> {
    let (h, w, c) = v.frame_shape();
    let mut buf = Vec::with_capacity(MFV_HEADER_LEN + 4 * h * w * c * v.len());
    buf.extend_from_slice(MFV_MAGIC);
    for dim in [h, w, c, v.len()] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    buf.extend_from_slice(&v.fps.to_le_bytes());
    for f in &v.frames {
        for s in &f.data {
            buf.extend_from_slice(&s.to_le_bytes());
        }
    }
    buf
}

pub fn decode_video(bytes: &[u8]) -> Result<Video> {
    if bytes.len() < MFV_HEADER_LEN {
        return Err(Error::Format("truncated MFV header".into()));
    }
    if &bytes[..4] != MFV_MAGIC {
        return Err(Error::Format("bad MFV magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (h, w, c, n) = (word(0) as usize, word(1) as usize, word(2) as usize, word(3) as usize);
    let fps = f32::from_le_bytes(bytes[20..24].try_into().unwrap());
    if n == 0 {
        return Err(Error::Format("MFV frame count is zero".into()));
    }
    if h == 0 || w == 0 || (c != 1 && c != 3) {
        return Err(Error::Format(format!("invalid MFV dimensions {h}x{w}x{c}")));
    }
    let per_frame = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::Format("MFV dimensions overflow".into()))?;
    let expected = per_frame
        .checked_mul(n)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(MFV_HEADER_LEN))
        .ok_or_else(|| Error::Format("MFV dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "MFV payload length {} does not match header (expected {expected})",
            bytes.len()
        )));
    }
    let mut frames = Vec::with_capacity(n);
    for chunk in bytes[MFV_HEADER_LEN..].chunks_exact(per_frame * 4) {
        let data = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        frames.push(Frame::new(h, w, c, data)?);
    }
    Video::new(frames, fps)
}

pub fn save_video(v: &Video, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(&encode_video(v))
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_video(path: impl AsRef<Path>) -> Result<Video> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode_video(&bytes)
}

/// Single-frame convenience wrappers used by the dataset forge.
pub fn save_frame(f: &Frame, path: impl AsRef<Path>) -> Result<()> {
    save_video(&Video::new(vec![f.clone()], 1.0)?, path)
}

pub fn load_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let mut frames = load_video(path)?.into_frames();
    if frames.len() != 1 {
        return Err(Error::Format(format!(
            "{}: expected a single frame, found {}",
            path.display(),
            frames.len()
        )));
    }
    Ok(frames.pop().unwrap())
}

/// Peak signal-to-noise ratio for unit peak. Identical frames give `f64::INFINITY`.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    ensure_same_shape(a, b)?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

/// 8-bit quantization used by PNG export: `round(255 * v)`.
pub fn to_u8(v: f32) -> u8 {
    (255.0 * clamp01(v)).round() as u8
}

pub fn save_png(f: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = f.data.iter().map(|&v| to_u8(v)).collect();
    let color = if f.c == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer(path, &bytes, f.w as u32, f.h as u32, color).map_err(|e| image_error(path, e))
}

pub(crate) fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Horizontal concatenation of every `stride`-th frame.
pub fn frame_strip(v: &Video, stride: usize) -> Result<Frame> {
    let stride = stride.max(1);
    let picked: Vec<&Frame> = v.frames.iter().step_by(stride).collect();
    let (h, w, c) = v.frame_shape();
    Frame::from_fn(h, w * picked.len(), c, |y, x, ch| picked[x / w].get(y, x % w, ch))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_frame(h: usize, w: usize) -> Frame {
        Frame::from_fn(h, w, 3, |y, x, c| ((y * 7 + x * 3 + c) % 11) as f32 / 10.0).unwrap()
    }

    #[test]
    fn mfv_file_size_is_header_plus_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.mfv");
        let v = Video::new(vec![Frame::filled(2, 2, 3, 0.5).unwrap()], 25.0).unwrap();
        save_video(&v, &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 24 + 4 * 12);
        assert_eq!(load_video(&path).unwrap(), v);
    }

    #[test]
    fn save_into_missing_directory_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nope").join("v.mfv");
        let v = Video::new(vec![Frame::filled(2, 2, 1, 0.0).unwrap()], 1.0).unwrap();
        match save_video(&v, &path) {
            Err(Error::Io { path: p, .. }) => assert_eq!(p, path),
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn corrupted_magic_and_zero_frames_are_format_errors() {
        let v = Video::new(vec![gradient_frame(4, 4)], 30.0).unwrap();
        let mut bytes = encode_video(&v);
        bytes[0] = b'X';
        assert!(matches!(decode_video(&bytes), Err(Error::Format(_))));

        let mut bytes = encode_video(&v);
        bytes[16..20].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_video(&bytes), Err(Error::Format(_))));

        let bytes = encode_video(&v);
        assert!(matches!(decode_video(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
    }

    #[test]
    fn psnr_reference_values() {
        let zero = Frame::filled(4, 4, 3, 0.0).unwrap();
        assert_eq!(psnr(&zero, &zero).unwrap(), f64::INFINITY);
        // 0.1f32 is not exactly 0.1, so allow the representation error.
        let tenth = Frame::filled(4, 4, 3, 0.1).unwrap();
        assert!((psnr(&zero, &tenth).unwrap() - 20.0).abs() < 1e-5);
        let half = Frame::filled(4, 4, 3, 0.5).unwrap();
        let expected = 10.0 * (1.0f64 / 0.25).log10();
        assert!((psnr(&zero, &half).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn psnr_shape_mismatch() {
        let a = Frame::filled(4, 4, 3, 0.0).unwrap();
        let b = Frame::filled(4, 2, 3, 0.0).unwrap();
        assert!(matches!(psnr(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn frame_constructor_rejects_out_of_range() {
        assert!(Frame::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Frame::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(Frame::new(1, 1, 2, vec![0.0, 0.0]).is_err());
        assert_eq!(Frame::from_clamped(1, 1, 1, vec![1.5]).unwrap().get(0, 0, 0), 1.0);
    }

    #[test]
    fn heterogeneous_video_rejected() {
        let r = Video::new(vec![gradient_frame(4, 4), gradient_frame(4, 6)], 1.0);
        assert!(matches!(r, Err(Error::Shape(_))));
        assert!(Video::new(vec![], 1.0).is_err());
    }

    #[test]
    fn png_export_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.png");
        let f = gradient_frame(3, 5);
        save_png(&f, &path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (5, 3));
        assert_eq!(img.get_pixel(2, 1).0[1], to_u8(f.get(1, 2, 1)));
    }

    #[test]
    fn strip_concatenates_selected_frames() {
        let frames: Vec<Frame> = (0..5)
            .map(|i| Frame::filled(2, 3, 1, i as f32 / 4.0).unwrap())
            .collect();
        let v = Video::new(frames, 1.0).unwrap();
        let s = frame_strip(&v, 2).unwrap();
        assert_eq!(s.shape(), (2, 9, 1));
        assert_eq!(s.get(0, 4, 0), 0.5);
        assert_eq!(s.get(1, 8, 0), 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn mfv_roundtrip_is_bit_exact(
                h in 1usize..6, w in 1usize..6, n in 1usize..4, gray in any::<bool>(),
                seed in any::<u64>(), fps in 0.5f32..120.0,
            ) {
                let c = if gray { 1 } else { 3 };
                let mut s = seed;
                let frames = (0..n).map(|_| Frame::from_fn(h, w, c, |_, _, _| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (s >> 40) as f32 / (1u64 << 24) as f32
                }).unwrap()).collect();
                let v = Video::new(frames, fps).unwrap();
                let back = decode_video(&encode_video(&v)).unwrap();
                prop_assert_eq!(back, v);
            }

            #[test]
            fn psnr_is_symmetric(a in proptest::collection::vec(0f32..=1.0, 12), b in proptest::collection::vec(0f32..=1.0, 12)) {
                let fa = Frame::new(2, 2, 3, a).unwrap();
                let fb = Frame::new(2, 2, 3, b).unwrap();
                prop_assert_eq!(psnr(&fa, &fb).unwrap(), psnr(&fb, &fa).unwrap());
            }
        }
    }
}
