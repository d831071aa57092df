//! Bilinear resizing and per-class map normalization.

use ndarray::{Array2, Array3, Axis};

/// Bilinear resize of an `(H, W, C)` map (half-pixel centers, edges clamped).
pub fn bilinear_resize(src: &Array3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (h, w, c) = src.dim();
    assert!(h > 0 && w > 0 && out_h > 0 && out_w > 0);
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let mut out = Array3::<f64>::zeros((out_h, out_w, c));
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for ch in 0..c {
                let v00 = src[[y0, x0, ch]];
                let v01 = src[[y0, x1, ch]];
                let v10 = src[[y1, x0, ch]];
                let v11 = src[[y1, x1, ch]];
                let top = v00 + (v01 - v00) * wx;
                let bot = v10 + (v11 - v10) * wx;
                out[[oy, ox, ch]] = top + (bot - top) * wy;
            }
        }
    }
    out
}

/// Single-channel convenience wrapper.
pub fn bilinear_resize_2d(src: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let src3 = src
        .view()
        .insert_axis(Axis(2))
        .to_owned();
    let out = bilinear_resize(&src3, out_h, out_w);
    out.index_axis(Axis(2), 0).to_owned()
}

/// Min-max normalize each channel of an `(H, W, C)` stack to [0, 1].
/// A constant channel maps to all zeros.
pub fn normalize_per_channel(map: &Array3<f64>) -> Array3<f64> {
    let mut out = map.clone();
    for mut ch in out.axis_iter_mut(Axis(2)) {
        let min = ch.fold(f64::INFINITY, |a, &b| a.min(b));
        let max = ch.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        if max > min {
            let inv = 1.0 / (max - min);
            ch.mapv_inplace(|v| (v - min) * inv);
        } else {
            ch.fill(0.0);
        }
    }
    out
}

/// Min-max normalize a single map to [0, 1]; constant input maps to zeros.
pub fn normalize_2d(map: &Array2<f64>) -> Array2<f64> {
    let min = map.fold(f64::INFINITY, |a, &b| a.min(b));
    let max = map.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if max > min {
        map.mapv(|v| (v - min) / (max - min))
    } else {
        Array2::zeros(map.raw_dim())
    }
}
