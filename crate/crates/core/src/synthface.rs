//! Procedural faces with analytic landmarks.
//!
//! Faces are drawn from a handful of ellipses (hair, skin, eyes, pupils, nose,
//! mouth) rasterized with 4x4 supersampling. Head yaw is simulated by sliding
//! the feature group sideways by `k * 0.4 * a * sin(yaw)`, where `a` is the
//! horizontal face semi-axis and `k` a per-feature depth factor, so landmark
//! positions stay closed-form.
//!
//! Coordinates are continuous pixels: pixel `(row y, col x)` covers
//! `[x, x+1) x [y, y+1)` and its center sits at `(x + 0.5, y + 0.5)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Frame, Video};

pub const MIN_CANVAS: usize = 32;
pub const DEFAULT_CANVAS: Canvas = Canvas { h: 32, w: 32 };

const SUPERSAMPLE: usize = 4;
const YAW_SHIFT_FACTOR: f64 = 0.4;
const HAIR_MARGIN: f64 = 1.2;
const HAIR_LIFT: f64 = 0.8;
const SCLERA_ASPECT: f64 = 1.4;

// Depth factors: how far each feature slides per unit of yaw shift.
const DEPTH_EYES: f64 = 1.0;
const DEPTH_NOSE: f64 = 1.4;
const DEPTH_MOUTH: f64 = 1.0;
const DEPTH_OUTLINE: f64 = 0.6;

// Vertical feature placement as a fraction of the vertical semi-axis `b`.
const EYE_ROW: f64 = -0.18;
const NOSE_ROW: f64 = 0.12;
const MOUTH_ROW: f64 = 0.45;
const CHIN_ROW: f64 = 0.92;
const FOREHEAD_ROW: f64 = -0.62;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Canvas {
    pub h: usize,
    pub w: usize,
}

impl Canvas {
    pub fn new(h: usize, w: usize) -> Self {
        Self { h, w }
    }

    fn scale(&self) -> f64 {
        self.h.min(self.w) as f64 / MIN_CANVAS as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceParams {
    pub skin_tone: [f32; 3],
    /// Horizontal and vertical semi-axes of the face ellipse.
    pub face_axes: (f64, f64),
    pub eye_sep: f64,
    pub eye_radius: f64,
    pub pupil_offset: (f64, f64),
    pub mouth_width: f64,
    pub hair_tone: [f32; 3],
    /// Degrees, positive turns the features toward image right.
    pub yaw: f64,
    pub center: (f64, f64),
}

/// The six tracked facial points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkSet {
    pub left_eye: Point,
    pub right_eye: Point,
    pub nose_tip: Point,
    pub mouth_center: Point,
    pub chin: Point,
    pub forehead: Point,
}

pub const LANDMARK_NAMES: [&str; 6] = ["left_eye", "right_eye", "nose_tip", "mouth_center", "chin", "forehead"];

impl LandmarkSet {
    pub fn get(&self, name: &str) -> Option<Point> {
        match name {
            "left_eye" => Some(self.left_eye),
            "right_eye" => Some(self.right_eye),
            "nose_tip" => Some(self.nose_tip),
            "mouth_center" => Some(self.mouth_center),
            "chin" => Some(self.chin),
            "forehead" => Some(self.forehead),
            _ => None,
        }
    }

    pub fn is_valid_name(name: &str) -> bool {
        LANDMARK_NAMES.contains(&name)
    }

    /// Points in `LANDMARK_NAMES` order.
    pub fn points(&self) -> [Point; 6] {
        [
            self.left_eye,
            self.right_eye,
            self.nose_tip,
            self.mouth_center,
            self.chin,
            self.forehead,
        ]
    }

    pub fn inter_ocular(&self) -> f64 {
        self.left_eye.dist(&self.right_eye)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> LandmarkSet {
        let t = |p: Point| Point::new(p.x + dx, p.y + dy);
        LandmarkSet {
            left_eye: t(self.left_eye),
            right_eye: t(self.right_eye),
            nose_tip: t(self.nose_tip),
            mouth_center: t(self.mouth_center),
            chin: t(self.chin),
            forehead: t(self.forehead),
        }
    }

    pub fn within(&self, canvas: Canvas) -> bool {
        self.points()
            .iter()
            .all(|p| p.x >= 0.0 && p.y >= 0.0 && p.x <= canvas.w as f64 && p.y <= canvas.h as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSpec {
    pub yaw_amplitude: f64,
    /// Period in frames.
    pub yaw_period: f64,
    pub translation_amplitude: f64,
    pub n_frames: usize,
}

impl Default for MotionSpec {
    fn default() -> Self {
        Self {
            yaw_amplitude: 30.0,
            yaw_period: 24.0,
            translation_amplitude: 1.5,
            n_frames: 24,
        }
    }
}

impl FaceParams {
    fn yaw_shift(&self) -> f64 {
        YAW_SHIFT_FACTOR * self.face_axes.0 * self.yaw.to_radians().sin()
    }

    pub fn landmarks(&self) -> LandmarkSet {
        let (cx, cy) = self.center;
        let b = self.face_axes.1;
        let s = self.yaw_shift();
        let half = self.eye_sep / 2.0;
        LandmarkSet {
            left_eye: Point::new(cx - half + DEPTH_EYES * s, cy + EYE_ROW * b),
            right_eye: Point::new(cx + half + DEPTH_EYES * s, cy + EYE_ROW * b),
            nose_tip: Point::new(cx + DEPTH_NOSE * s, cy + NOSE_ROW * b),
            mouth_center: Point::new(cx + DEPTH_MOUTH * s, cy + MOUTH_ROW * b),
            chin: Point::new(cx + DEPTH_OUTLINE * s, cy + CHIN_ROW * b),
            forehead: Point::new(cx + DEPTH_OUTLINE * s, cy + FOREHEAD_ROW * b),
        }
    }

    pub fn validate(&self, canvas: Canvas) -> Result<()> {
        let (a, b) = self.face_axes;
        let (cx, cy) = self.center;
        let positive = [a, b, self.eye_sep, self.eye_radius, self.mouth_width];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Geometry("face dimensions must be positive".into()));
        }
        if !(-45.0..=45.0).contains(&self.yaw) {
            return Err(Error::Geometry(format!("yaw {} outside [-45, 45]", self.yaw)));
        }
        let lms = self.landmarks();
        for eye in [lms.left_eye, lms.right_eye] {
            let dx = (eye.x - cx).abs() + SCLERA_ASPECT * self.eye_radius;
            let dy = (eye.y - cy).abs() + self.eye_radius;
            if (dx / a).powi(2) + (dy / b).powi(2) >= 1.0 {
                return Err(Error::Geometry("eye leaves the face ellipse".into()));
            }
        }
        let m = HAIR_MARGIN * canvas.scale();
        let lift = HAIR_LIFT * canvas.scale();
        let (w, h) = (canvas.w as f64, canvas.h as f64);
        if cx - a - m < 0.0 || cx + a + m > w || cy - lift - b - m < 0.0 || cy + b > h {
            return Err(Error::Geometry(format!(
                "face at ({cx:.2}, {cy:.2}) with axes ({a:.2}, {b:.2}) does not fit {}x{}",
                canvas.h, canvas.w
            )));
        }
        if !lms.within(canvas) {
            return Err(Error::Geometry("landmark outside canvas".into()));
        }
        Ok(())
    }
}

const SKIN_LIGHT: [f32; 3] = [0.96, 0.80, 0.69];
const SKIN_DARK: [f32; 3] = [0.45, 0.30, 0.22];

/// Hair palette with the descriptor the captioner uses for each entry.
pub const HAIR_PALETTE: [(&str, [f32; 3]); 4] = [
    ("dark", [0.10, 0.07, 0.05]),
    ("brown", [0.45, 0.30, 0.15]),
    ("blond", [0.85, 0.75, 0.45]),
    ("gray", [0.70, 0.70, 0.70]),
];

/// Draws face parameters from fixed uniform ranges (lengths in units of
/// `min(H, W) / 32`):
///
/// | field | range |
/// |---|---|
/// | face semi-axes | a in [9.5, 11], b in [11, 12.5] |
/// | eye separation | [7, 8.5] |
/// | eye radius | [1.4, 2.0] |
/// | pupil offset | [-0.4, 0.4] per axis |
/// | mouth width | [5, 7.5] |
/// | center | canvas center +- 0.5 |
/// | yaw | [-30, 30] degrees |
///
/// Skin tone interpolates a light/dark pair; hair picks a palette entry.
/// Both get a +-0.03 jitter.
pub fn sample_face_params(seed: u64, canvas: Canvas) -> Result<FaceParams> {
    if canvas.h < MIN_CANVAS || canvas.w < MIN_CANVAS {
        return Err(Error::Geometry(format!(
            "canvas {}x{} smaller than {MIN_CANVAS}x{MIN_CANVAS}",
            canvas.h, canvas.w
        )));
    }
    let s = canvas.scale();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter =
        |rng: &mut ChaCha8Rng, base: [f32; 3]| base.map(|v| (v + rng.random_range(-0.03f32..=0.03)).clamp(0.0, 1.0));
    let t: f32 = rng.random();
    let skin = [0, 1, 2].map(|i| SKIN_LIGHT[i] + t * (SKIN_DARK[i] - SKIN_LIGHT[i]));
    let skin_tone = jitter(&mut rng, skin);
    let hair_idx = rng.random_range(0..HAIR_PALETTE.len());
    let hair_tone = jitter(&mut rng, HAIR_PALETTE[hair_idx].1);
    let p = FaceParams {
        skin_tone,
        face_axes: (s * rng.random_range(9.5..=11.0), s * rng.random_range(11.0..=12.5)),
        eye_sep: s * rng.random_range(7.0..=8.5),
        eye_radius: s * rng.random_range(1.4..=2.0),
        pupil_offset: (s * rng.random_range(-0.4..=0.4), s * rng.random_range(-0.4..=0.4)),
        mouth_width: s * rng.random_range(5.0..=7.5),
        hair_tone,
        yaw: rng.random_range(-30.0..=30.0),
        center: (
            canvas.w as f64 / 2.0 + s * rng.random_range(-0.5..=0.5),
            canvas.h as f64 / 2.0 + s * rng.random_range(-0.5..=0.5),
        ),
    };
    p.validate(canvas)?;
    Ok(p)
}

#[inline]
fn in_ellipse(x: f64, y: f64, cx: f64, cy: f64, a: f64, b: f64) -> bool {
    let u = (x - cx) / a;
    let v = (y - cy) / b;
    u * u + v * v <= 1.0
}

/// Which ellipse a sample point falls in, for masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    Face,
    LeftEye,
    RightEye,
}

struct Geometry {
    p: FaceParams,
    lms: LandmarkSet,
    hair_margin: f64,
    hair_lift: f64,
    scale: f64,
}

impl Geometry {
    fn new(p: &FaceParams, canvas: Canvas) -> Self {
        Self {
            p: p.clone(),
            lms: p.landmarks(),
            hair_margin: HAIR_MARGIN * canvas.scale(),
            hair_lift: HAIR_LIFT * canvas.scale(),
            scale: canvas.scale(),
        }
    }

    fn contains(&self, f: Feature, x: f64, y: f64) -> bool {
        let (a, b) = self.p.face_axes;
        let (cx, cy) = self.p.center;
        let r = self.p.eye_radius;
        match f {
            Feature::Face => in_ellipse(x, y, cx, cy, a, b),
            Feature::LeftEye => in_ellipse(x, y, self.lms.left_eye.x, self.lms.left_eye.y, SCLERA_ASPECT * r, r),
            Feature::RightEye => in_ellipse(x, y, self.lms.right_eye.x, self.lms.right_eye.y, SCLERA_ASPECT * r, r),
        }
    }

    fn sample(&self, x: f64, y: f64, h: f64) -> [f32; 3] {
        let p = &self.p;
        let (a, b) = p.face_axes;
        let (cx, cy) = p.center;
        let l = &self.lms;
        let r = p.eye_radius;
        let mut c = background(y, h);
        let hair_top = cy - self.hair_lift;
        if y < cy - 0.25 * b && in_ellipse(x, y, cx, hair_top, a + self.hair_margin, b + self.hair_margin) {
            c = p.hair_tone;
        }
        if in_ellipse(x, y, cx, cy, a, b) {
            // Side shading moves with the face, which gives flow something to track.
            let u = ((x - cx) / a) as f32;
            let shade = 1.0 - 0.18 * u * u;
            c = p.skin_tone.map(|v| v * shade);
            if y < l.forehead.y + 0.5 * self.scale && y > l.forehead.y - 2.0 * self.scale {
                // fringe
                c = p.hair_tone;
            }
            let nose_shift = l.nose_tip.x;
            if in_ellipse(
                x,
                y,
                nose_shift,
                l.nose_tip.y - 0.8 * self.scale,
                0.9 * self.scale,
                2.0 * self.scale,
            ) {
                c = p.skin_tone.map(|v| v * 0.82);
            }
            let mw = p.mouth_width / 2.0;
            if in_ellipse(
                x,
                y,
                l.mouth_center.x,
                l.mouth_center.y,
                mw,
                0.18 * mw + 0.4 * self.scale,
            ) {
                c = [0.62, 0.18, 0.2];
            }
            for eye in [l.left_eye, l.right_eye] {
                if in_ellipse(x, y, eye.x, eye.y, SCLERA_ASPECT * r, r) {
                    c = [0.95, 0.95, 0.93];
                    let (px, py) = (eye.x + p.pupil_offset.0, eye.y + p.pupil_offset.1);
                    if in_ellipse(x, y, px, py, 0.6 * r, 0.6 * r) {
                        c = [0.08, 0.06, 0.05];
                    }
                }
            }
        }
        c
    }
}

fn background(y: f64, h: f64) -> [f32; 3] {
    let t = (y / h) as f32;
    [0.30 - 0.12 * t, 0.36 - 0.14 * t, 0.42 - 0.15 * t]
}

/// Rasterizes the face and returns it with its analytic landmarks.
pub fn render_face(p: &FaceParams, canvas: Canvas) -> Result<(Frame, LandmarkSet)> {
    p.validate(canvas)?;
    let g = Geometry::new(p, canvas);
    let n = SUPERSAMPLE;
    let inv = 1.0 / (n * n) as f32;
    let h = canvas.h as f64;
    let mut data = Vec::with_capacity(canvas.h * canvas.w * 3);
    for y in 0..canvas.h {
        for x in 0..canvas.w {
            let mut acc = [0f32; 3];
            for sy in 0..n {
                for sx in 0..n {
                    let px = x as f64 + (sx as f64 + 0.5) / n as f64;
                    let py = y as f64 + (sy as f64 + 0.5) / n as f64;
                    let c = g.sample(px, py, h);
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            data.extend(acc.iter().map(|v| v * inv));
        }
    }
    Ok((Frame::from_clamped(canvas.h, canvas.w, 3, data)?, g.lms))
}

/// Per-pixel coverage (fraction of supersamples) of one face feature.
pub fn feature_coverage(p: &FaceParams, canvas: Canvas, feature: Feature) -> Vec<f64> {
    let g = Geometry::new(p, canvas);
    let n = SUPERSAMPLE;
    let mut cov = Vec::with_capacity(canvas.h * canvas.w);
    for y in 0..canvas.h {
        for x in 0..canvas.w {
            let mut hits = 0usize;
            for sy in 0..n {
                for sx in 0..n {
                    let px = x as f64 + (sx as f64 + 0.5) / n as f64;
                    let py = y as f64 + (sy as f64 + 0.5) / n as f64;
                    hits += g.contains(feature, px, py) as usize;
                }
            }
            cov.push(hits as f64 / (n * n) as f64);
        }
    }
    cov
}

/// Parameters of frame `i` along a motion trajectory.
pub fn trajectory_params(p: &FaceParams, m: &MotionSpec, i: usize) -> FaceParams {
    let phase = (2.0 * std::f64::consts::PI * i as f64 / m.yaw_period).sin();
    let mut q = p.clone();
    q.yaw = m.yaw_amplitude * phase;
    q.center.0 += m.translation_amplitude * phase;
    q
}

/// Renders a head-motion clip with per-frame landmarks.
pub fn generate_trajectory(p: &FaceParams, m: &MotionSpec, canvas: Canvas) -> Result<(Video, Vec<LandmarkSet>)> {
    if m.n_frames == 0 {
        return Err(Error::Geometry("trajectory needs at least one frame".into()));
    }
    if !(m.yaw_period.is_finite() && m.yaw_period > 0.0) {
        return Err(Error::Geometry("yaw period must be positive".into()));
    }
    let mut frames = Vec::with_capacity(m.n_frames);
    let mut lms = Vec::with_capacity(m.n_frames);
    for i in 0..m.n_frames {
        let q = trajectory_params(p, m, i);
        q.validate(canvas)
            .map_err(|e| Error::Geometry(format!("frame {i}: {e}")))?;
        let (f, l) = render_face(&q, canvas)?;
        frames.push(f);
        lms.push(l);
    }
    Ok((Video::new(frames, 24.0)?, lms))
}
