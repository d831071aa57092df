//! Elementwise activations and row softmax with hand-written backward passes.

use ndarray::{Array, Array2, Axis, Dimension};

pub fn relu<D: Dimension>(x: &Array<f64, D>) -> Array<f64, D> {
    x.mapv(|v| v.max(0.0))
}

/// dL/dx given upstream dL/dy and the forward *input*.
pub fn relu_backward<D: Dimension>(x: &Array<f64, D>, dy: &Array<f64, D>) -> Array<f64, D> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, &xv| {
        if xv <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh-approximated GELU.
pub fn gelu<D: Dimension>(x: &Array<f64, D>) -> Array<f64, D> {
    x.mapv(gelu_scalar)
}

pub fn gelu_scalar(v: f64) -> f64 {
    0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh())
}

pub fn gelu_backward<D: Dimension>(x: &Array<f64, D>, dy: &Array<f64, D>) -> Array<f64, D> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, &v| {
        let inner = GELU_C * (v + 0.044715 * v * v * v);
        let t = inner.tanh();
        let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
        *d *= 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner;
    });
    dx
}

/// Row-wise softmax of a (rows, cols) matrix.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.clone();
    for mut row in y.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    y
}

/// Backward through row softmax: dx = y * (dy - sum(dy * y, row)).
pub fn softmax_rows_backward(y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = Array2::zeros(y.raw_dim());
    for ((mut dxr, yr), dyr) in dx
        .axis_iter_mut(Axis(0))
        .zip(y.axis_iter(Axis(0)))
        .zip(dy.axis_iter(Axis(0)))
    {
        let dot: f64 = yr.iter().zip(dyr.iter()).map(|(a, b)| a * b).sum();
        for ((d, &yv), &dv) in dxr.iter_mut().zip(yr.iter()).zip(dyr.iter()) {
            *d = yv * (dv - dot);
        }
    }
    dx
}

/// L2-normalize each row; returns the unit rows and the original norms.
/// Rows with norm below `1e-12` are left as zeros (degenerate input).
pub fn normalize_rows(x: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let mut y = x.clone();
    let mut norms = Vec::with_capacity(x.nrows());
    for mut row in y.axis_iter_mut(Axis(0)) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        norms.push(n);
        if n > 1e-12 {
            row.mapv_inplace(|v| v / n);
        } else {
            row.fill(0.0);
        }
    }
    (y, norms)
}

/// Backward through row normalization: dx = (dy - (dy . u) u) / norm.
pub fn normalize_rows_backward(unit: &Array2<f64>, norms: &[f64], dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = Array2::zeros(dy.raw_dim());
    for r in 0..dy.nrows() {
        let n = norms[r];
        if n <= 1e-12 {
            continue;
        }
        let u = unit.row(r);
        let d = dy.row(r);
        let dot: f64 = u.iter().zip(d.iter()).map(|(a, b)| a * b).sum();
        for c in 0..dy.ncols() {
            dx[[r, c]] = (d[c] - dot * u[c]) / n;
        }
    }
    dx
}

/// Numerically stable ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
