//! Dense layer over row-major (rows, features) matrices.

use ndarray::{Array2, Axis, Ix1, Ix2};

use super::init::Initializer;
use super::param::{GradBuffer, ParamId, ParamStore};

/// y = x @ w + b, applied row-wise. Weight shape (in_dim, out_dim).
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        std: f64,
        init: &mut Initializer,
    ) -> Self {
        let w = store.register(format!("{name}.weight"), init.normal_tensor(&[in_dim, out_dim], std));
        let b = bias.then(|| store.register(format!("{name}.bias"), Initializer::zeros(&[out_dim])));
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, store: &ParamStore, x: &Array2<f64>) -> Array2<f64> {
        debug_assert_eq!(x.ncols(), self.in_dim);
        let w = store.value(self.w).view().into_dimensionality::<Ix2>().unwrap();
        let mut y = x.dot(&w);
        if let Some(b) = self.b {
            let bv = store.value(b).view().into_dimensionality::<Ix1>().unwrap();
            y += &bv;
        }
        y
    }

    /// Accumulates dW (and db) into `gbuf`, returns dx.
    pub fn backward(
        &self,
        store: &ParamStore,
        x: &Array2<f64>,
        dy: &Array2<f64>,
        gbuf: &mut GradBuffer,
    ) -> Array2<f64> {
        let w = store.value(self.w).view().into_dimensionality::<Ix2>().unwrap();
        let dw = x.t().dot(dy);
        gbuf.add(self.w, &dw.into_dyn());
        if let Some(b) = self.b {
            let db = dy.sum_axis(Axis(0));
            gbuf.add(b, &db.into_dyn());
        }
        dy.dot(&w.t())
    }
}
