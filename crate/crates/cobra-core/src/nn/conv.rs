//! 2D convolution over (H, W, C) maps via im2col + GEMM.

use ndarray::{Array2, Array3, Axis, Ix1, Ix2};

use super::init::Initializer;
use super::param::{GradBuffer, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Square-kernel conv with zero padding. Weight shape (k*k*c_in, c_out),
/// row layout (ky, kx, c_in).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        init: &mut Initializer,
    ) -> Self {
        let fan_in = kernel * kernel * c_in;
        let w = store.register(format!("{name}.weight"), init.kaiming(&[fan_in, c_out], fan_in));
        let b = store.register(format!("{name}.bias"), Initializer::zeros(&[c_out]));
        Self { w, b, c_in, c_out, kernel, stride, pad }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn im2col(&self, x: &Array3<f64>) -> Array2<f64> {
        let (h, w, c) = x.dim();
        let (oh, ow) = self.out_size(h, w);
        let k = self.kernel;
        let mut col = Array2::<f64>::zeros((oh * ow, k * k * c));
        let xs = x.as_slice().expect("input must be standard layout");
        for oy in 0..oh {
            for ox in 0..ow {
                let row = oy * ow + ox;
                let mut dst = col.row_mut(row);
                let dst = dst.as_slice_mut().unwrap();
                for ky in 0..k {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = (iy as usize * w + ix as usize) * c;
                        let off = (ky * k + kx) * c;
                        dst[off..off + c].copy_from_slice(&xs[src..src + c]);
                    }
                }
            }
        }
        col
    }

    /// Scatter-add of column gradients back to input layout.
    fn col2im(&self, dcol: &Array2<f64>, h: usize, w: usize) -> Array3<f64> {
        let (oh, ow) = self.out_size(h, w);
        let k = self.kernel;
        let c = self.c_in;
        let mut dx = Array3::<f64>::zeros((h, w, c));
        let dxs = dx.as_slice_mut().unwrap();
        for oy in 0..oh {
            for ox in 0..ow {
                let row = dcol.row(oy * ow + ox);
                let row = row.as_slice().unwrap();
                for ky in 0..k {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let dst = (iy as usize * w + ix as usize) * c;
                        let off = (ky * k + kx) * c;
                        for ch in 0..c {
                            dxs[dst + ch] += row[off + ch];
                        }
                    }
                }
            }
        }
        dx
    }

    /// Returns the output map and the im2col matrix needed by backward.
    pub fn forward(&self, store: &ParamStore, x: &Array3<f64>) -> Result<(Array3<f64>, Array2<f64>)> {
        let (h, w, c) = x.dim();
        if c != self.c_in {
            return Err(Error::shape("conv input channels", self.c_in, c));
        }
        if h + 2 * self.pad < self.kernel || w + 2 * self.pad < self.kernel {
            return Err(Error::shape("conv input size", format!(">= {}", self.kernel), format!("{h}x{w}")));
        }
        let (oh, ow) = self.out_size(h, w);
        let col = self.im2col(x);
        let wv = store.value(self.w).view().into_dimensionality::<Ix2>().unwrap();
        let bv = store.value(self.b).view().into_dimensionality::<Ix1>().unwrap();
        let mut y = col.dot(&wv);
        y += &bv;
        let y = y.into_shape_with_order((oh, ow, self.c_out)).unwrap();
        Ok((y, col))
    }

    /// `col` is the matrix returned by forward for the same input.
    pub fn backward(
        &self,
        store: &ParamStore,
        col: &Array2<f64>,
        dy: &Array3<f64>,
        in_h: usize,
        in_w: usize,
        gbuf: &mut GradBuffer,
    ) -> Array3<f64> {
        let (oh, ow, co) = dy.dim();
        debug_assert_eq!(co, self.c_out);
        let dy2 = dy.view().into_shape_with_order((oh * ow, co)).unwrap();
        let dw = col.t().dot(&dy2);
        gbuf.add(self.w, &dw.into_dyn());
        let db = dy2.sum_axis(Axis(0));
        gbuf.add(self.b, &db.into_dyn());
        let wv = store.value(self.w).view().into_dimensionality::<Ix2>().unwrap();
        let dcol = dy2.dot(&wv.t());
        self.col2im(&dcol, in_h, in_w)
    }
}
