//! The eight built-in effects. Sprites are drawn procedurally from a few
//! shape primitives in normalized sprite coordinates.

use super::{EffectSpec, FilterOp, SpriteLayer, SpriteRaster};

pub const BUILTIN_NAMES: [&str; 8] = [
    "half-frame glasses",
    "black full-frame glasses",
    "green bow effect",
    "burning fire effect",
    "sweet makeup",
    "creamy facial mask",
    "man beard effect",
    "white straw hat",
];

const CLEAR: [f32; 4] = [0.0; 4];

fn ellipse(u: f64, v: f64, cu: f64, cv: f64, ru: f64, rv: f64) -> f64 {
    ((u - cu) / ru).powi(2) + ((v - cv) / rv).powi(2)
}

fn ring(u: f64, v: f64, cu: f64, cv: f64, ru: f64, rv: f64, thickness: f64) -> bool {
    let outer = ellipse(u, v, cu, cv, ru, rv);
    let inner = ellipse(u, v, cu, cv, ru - thickness, rv - thickness);
    outer <= 1.0 && inner > 1.0
}

fn rgba(c: [f32; 3], a: f32) -> [f32; 4] {
    [c[0], c[1], c[2], a]
}

fn layer(name: &str, raster: SpriteRaster, anchor: &str, offset: (f64, f64), scale: f64, z: i32) -> SpriteLayer {
    SpriteLayer {
        file: format!("{name}.png"),
        raster,
        anchor: anchor.into(),
        offset,
        scale,
        z_order: z,
    }
}

fn half_frame_glasses() -> EffectSpec {
    let gold = [0.78, 0.62, 0.22];
    let raster = SpriteRaster::rasterize(10, 24, |u, v| {
        let top_rim = |cu: f64| v < 0.55 && ring(u, v, cu, 0.55, 0.2, 0.4, 0.09);
        let bridge = (0.44..0.56).contains(&u) && (0.25..0.4).contains(&v);
        if top_rim(0.25) || top_rim(0.75) || bridge {
            rgba(gold, 1.0)
        } else {
            CLEAR
        }
    });
    EffectSpec {
        name: BUILTIN_NAMES[0].into(),
        conj: "wearing".into(),
        sprites: vec![layer("frames", raster, "left_eye", (0.5, 0.0), 2.1, 0)],
        filters: vec![],
    }
}

fn full_frame_glasses() -> EffectSpec {
    let black = [0.03, 0.03, 0.04];
    let raster = SpriteRaster::rasterize(10, 24, |u, v| {
        let rim = |cu: f64| ring(u, v, cu, 0.5, 0.22, 0.45, 0.1);
        let lens = |cu: f64| ellipse(u, v, cu, 0.5, 0.22, 0.45) <= 1.0;
        let bridge = (0.44..0.56).contains(&u) && (0.3..0.45).contains(&v);
        if rim(0.25) || rim(0.75) || bridge {
            rgba(black, 1.0)
        } else if lens(0.25) || lens(0.75) {
            rgba([0.1, 0.1, 0.15], 0.35)
        } else {
            CLEAR
        }
    });
    EffectSpec {
        name: BUILTIN_NAMES[1].into(),
        conj: "wearing".into(),
        sprites: vec![layer("frames", raster, "left_eye", (0.5, 0.0), 2.2, 0)],
        filters: vec![],
    }
}

fn green_bow() -> EffectSpec {
    let green = [0.1, 0.7, 0.25];
    let raster = SpriteRaster::rasterize(10, 16, |u, v| {
        let knot = ellipse(u, v, 0.5, 0.5, 0.1, 0.2) <= 1.0;
        // two triangular wings pinched at the knot
        let d = (u - 0.5).abs();
        let wing = d < 0.48 && (v - 0.5).abs() < 0.1 + 0.8 * d;
        if knot {
            rgba([0.05, 0.45, 0.15], 1.0)
        } else if wing {
            rgba(green, 1.0)
        } else {
            CLEAR
        }
    });
    EffectSpec {
        name: BUILTIN_NAMES[2].into(),
        conj: "with".into(),
        sprites: vec![layer("bow", raster, "forehead", (0.0, -0.25), 1.2, 0)],
        filters: vec![],
    }
}

fn burning_fire() -> EffectSpec {
    let raster = SpriteRaster::rasterize(12, 16, |u, v| {
        // three flame tongues rising from the bottom edge
        let tongue = |cu: f64, height: f64| {
            let top = 1.0 - height;
            v > top && (u - cu).abs() < 0.16 * ((v - top) / height).sqrt()
        };
        if tongue(0.25, 0.7) || tongue(0.5, 0.95) || tongue(0.75, 0.75) {
            let heat = v as f32;
            rgba([1.0, 0.25 + 0.6 * heat, 0.05], 0.95)
        } else {
            CLEAR
        }
    });
    EffectSpec {
        name: BUILTIN_NAMES[3].into(),
        conj: "with the".into(),
        sprites: vec![layer("fire", raster, "forehead", (0.0, -0.55), 1.9, 0)],
        filters: vec![FilterOp::Tint {
            color: [1.0, 0.55, 0.2],
            strength: 0.08,
        }],
    }
}

fn sweet_makeup() -> EffectSpec {
    let blush = SpriteRaster::rasterize(6, 8, |u, v| {
        let r = ellipse(u, v, 0.5, 0.5, 0.5, 0.5);
        if r <= 1.0 {
            rgba([0.95, 0.45, 0.55], (0.55 * (1.0 - r)) as f32)
        } else {
            CLEAR
        }
    });
    let lips = SpriteRaster::rasterize(4, 10, |u, v| {
        if ellipse(u, v, 0.5, 0.5, 0.5, 0.5) <= 1.0 {
            rgba([0.9, 0.2, 0.45], 0.8)
        } else {
            CLEAR
        }
    });
    EffectSpec {
        name: BUILTIN_NAMES[4].into(),
        conj: "in".into(),
        sprites: vec![
            layer("blush_left", blush.clone(), "left_eye", (-0.1, 0.75), 0.7, 0),
            layer("blush_right", blush, "right_eye", (0.1, 0.75), 0.7, 0),
            layer("lips", lips, "mouth_center", (0.0, 0.0), 0.9, 1),
        ],
        filters: vec![FilterOp::Tint {
            color: [1.0, 0.75, 0.8],
            strength: 0.06,
        }],
    }
}

fn creamy_mask() -> EffectSpec {
    let raster = SpriteRaster::rasterize(14, 12, |u, v| {
        let r = ellipse(u, v, 0.5, 0.5, 0.5, 0.5);
        // keep the eye holes open
        let eye = ellipse(u, v, 0.28, 0.3, 0.13, 0.08) <= 1.0 || ellipse(u, v, 0.72, 0.3, 0.13, 0.08) <= 1.0;
        if r <= 1.0 && !eye {
            rgba([0.97, 0.96, 0.9], 0.7)
        } else {
            CLEAR
        }
    });
    EffectSpec {
        name: BUILTIN_NAMES[5].into(),
        conj: "wearing the".into(),
        sprites: vec![layer("mask", raster, "nose_tip", (0.0, -0.1), 1.9, 0)],
        filters: vec![FilterOp::Brightness { delta: 0.04 }],
    }
}

fn man_beard() -> EffectSpec {
    let raster = SpriteRaster::rasterize(10, 16, |u, v| {
        let jaw = ellipse(u, v, 0.5, 0.2, 0.5, 0.8) <= 1.0 && v > 0.25;
        let mouth_gap = ellipse(u, v, 0.5, 0.32, 0.2, 0.08) <= 1.0;
        if jaw && !mouth_gap {
            rgba([0.18, 0.11, 0.06], 0.9)
        } else {
            CLEAR
        }
    });
    EffectSpec {
        name: BUILTIN_NAMES[6].into(),
        conj: "with".into(),
        sprites: vec![layer("beard", raster, "mouth_center", (0.0, 0.25), 1.8, 0)],
        filters: vec![FilterOp::Brightness { delta: -0.08 }],
    }
}

fn straw_hat() -> EffectSpec {
    let straw = [0.96, 0.92, 0.78];
    let raster = SpriteRaster::rasterize(10, 24, |u, v| {
        let brim = ellipse(u, v, 0.5, 0.8, 0.5, 0.18) <= 1.0;
        let crown = ellipse(u, v, 0.5, 0.6, 0.25, 0.5) <= 1.0 && v < 0.8;
        let band = crown && (0.58..0.72).contains(&v);
        if band {
            rgba([0.55, 0.2, 0.15], 1.0)
        } else if brim || crown {
            rgba(straw, 1.0)
        } else {
            CLEAR
        }
    });
    EffectSpec {
        name: BUILTIN_NAMES[7].into(),
        conj: "wearing a".into(),
        sprites: vec![layer("hat", raster, "forehead", (0.0, -0.45), 2.6, 0)],
        filters: vec![],
    }
}

/// All built-in effects in `BUILTIN_NAMES` order.
pub fn builtin_effects() -> Vec<EffectSpec> {
    vec![
        half_frame_glasses(),
        full_frame_glasses(),
        green_bow(),
        burning_fire(),
        sweet_makeup(),
        creamy_mask(),
        man_beard(),
        straw_hat(),
    ]
}

/// Looks up a built-in by full name or by a unique word in its name
/// (`"bow"`, `"hat"`; `"glasses"` resolves to the half-frame pair).
pub fn builtin_effect(key: &str) -> Option<EffectSpec> {
    let key = key.trim();
    if let Some(e) = builtin_effects().into_iter().find(|e| e.name == key) {
        return Some(e);
    }
    if key == "glasses" {
        return Some(half_frame_glasses());
    }
    let mut hits = builtin_effects()
        .into_iter()
        .filter(|e| e.name.split_whitespace().any(|w| w == key));
    match (hits.next(), hits.next()) {
        (Some(e), None) => Some(e),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effects::apply_effect;
    use crate::synthface::{render_face, sample_face_params, DEFAULT_CANVAS};

    #[test]
    fn eight_unique_valid_effects() {
        let all = builtin_effects();
        assert_eq!(all.len(), 8);
        for (e, name) in all.iter().zip(BUILTIN_NAMES) {
            assert_eq!(e.name, name);
            e.validate().unwrap();
        }
        let mut names: Vec<_> = all.iter().map(|e| e.name.clone()).collect();
        names.dedup();
        assert_eq!(names.len(), 8);
    }

    #[test]
    fn every_effect_changes_a_face() {
        let p = sample_face_params(0, DEFAULT_CANVAS).unwrap();
        let (f, l) = render_face(&p, DEFAULT_CANVAS).unwrap();
        for e in builtin_effects() {
            let out = apply_effect(&f, &l, &e).unwrap();
            assert!(out.max_abs_diff(&f).unwrap() > 0.05, "{} barely visible", e.name);
        }
    }

    #[test]
    fn short_keys_resolve() {
        assert_eq!(builtin_effect("glasses").unwrap().name, "half-frame glasses");
        assert_eq!(builtin_effect("bow").unwrap().name, "green bow effect");
        assert_eq!(builtin_effect("hat").unwrap().name, "white straw hat");
        assert!(builtin_effect("effect").is_none());
        assert!(builtin_effect("unicorn").is_none());
    }
}
