//! Per-pixel temporal moving average.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{Frame, Video};

/// Moving average of odd width `window`, replicate-padded at both ends,
/// applied `passes` times. Arithmetic runs in `f64` and is rounded once.
pub fn lowpass(v: &Video, window: usize, passes: usize) -> Result<Video> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "low-pass window must be odd and positive, got {window}"
        )));
    }
    if window == 1 || passes == 0 {
        return Ok(v.clone());
    }
    let n = v.len();
    let half = (window / 2) as isize;
    let mut cur: Vec<Vec<f64>> = v
        .frames()
        .iter()
        .map(|f| f.data().iter().map(|&x| x as f64).collect())
        .collect();
    for _ in 0..passes {
        cur = (0..n)
            .into_par_iter()
            .map(|t| {
                let mut acc = vec![0.0; cur[0].len()];
                for k in -half..=half {
                    let src = &cur[(t as isize + k).clamp(0, n as isize - 1) as usize];
                    acc.iter_mut().zip(src).for_each(|(a, s)| *a += s);
                }
                acc.iter_mut().for_each(|a| *a /= window as f64);
                acc
            })
            .collect();
    }
    let (h, w, c) = v.frame_shape();
    let frames = cur
        .into_iter()
        .map(|d| Frame::from_clamped(h, w, c, d.into_iter().map(|x| x as f32).collect()))
        .collect::<Result<Vec<_>>>()?;
    v.with_frames(frames)
}
