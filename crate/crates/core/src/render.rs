//! Binary PGM (P5) rendering. Cell `[0, 0]` is the top-left pixel.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Linear,
    /// `ln(1 + v)` before scaling.
    Log,
}

fn pgm(width: usize, height: usize, pixels: impl Iterator<Item = u8>) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels);
    out
}

fn check_finite(matrix: ArrayView2<'_, f64>) -> Result<()> {
    match matrix.indexed_iter().find(|(_, v)| !v.is_finite()) {
        Some(((r, c), v)) => Err(Error::domain(format!("cannot render non-finite value {v} at [{r}, {c}]"))),
        None => Ok(()),
    }
}

/// Grayscale map: `pixel = round(255 * v / v_max)` after the optional log
/// transform. Negative values render black; `clamp` caps `v_max` (and the
/// values). An all-zero matrix renders all black.
pub fn render_map(matrix: ArrayView2<'_, f64>, scale: Scale, clamp: Option<f64>) -> Result<Vec<u8>> {
    check_finite(matrix)?;
    if let Some(c) = clamp {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::domain(format!("clamp must be positive, got {c}")));
        }
    }
    let transform = |v: f64| {
        let v = v.max(0.0);
        let v = clamp.map_or(v, |c| v.min(c));
        match scale {
            Scale::Linear => v,
            Scale::Log => v.ln_1p(),
        }
    };
    let v_max = match clamp {
        Some(c) => transform(c),
        None => matrix.iter().map(|&v| transform(v)).fold(0.0, f64::max),
    };
    let (h, w) = matrix.dim();
    Ok(pgm(
        w,
        h,
        matrix.iter().map(|&v| {
            if v_max > 0.0 {
                (255.0 * transform(v) / v_max).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        }),
    ))
}

/// Diverging grayscale for signed maps such as a normalized PRM: values are
/// clamped to `+-max|v|` and mapped to `1..=255` with zero at 128. Masked
/// cells (`defined == false`) render black.
pub fn render_diverging(matrix: ArrayView2<'_, f64>, defined: Option<ArrayView2<'_, bool>>) -> Result<Vec<u8>> {
    check_finite(matrix)?;
    if let Some(d) = &defined {
        if d.dim() != matrix.dim() {
            return Err(Error::domain("mask shape does not match matrix"));
        }
    }
    let is_defined = |idx: (usize, usize)| defined.as_ref().is_none_or(|d| d[idx]);
    let bound = matrix
        .indexed_iter()
        .filter(|(idx, _)| is_defined(*idx))
        .fold(0.0f64, |m, (_, v)| m.max(v.abs()));
    let (h, w) = matrix.dim();
    Ok(pgm(
        w,
        h,
        matrix.indexed_iter().map(|(idx, &v)| {
            if !is_defined(idx) {
                0
            } else if bound == 0.0 {
                128
            } else {
                (128.0 + 127.0 * (v / bound).clamp(-1.0, 1.0)).round() as u8
            }
        }),
    ))
}
