//! LayerNorm over the feature (last) axis of (rows, D) matrices.

use ndarray::{Array1, Array2, Axis, Ix1};

use super::init::Initializer;
use super::param::{GradBuffer, ParamId, ParamStore};

const EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

/// Per-row statistics cached for backward.
pub struct LayerNormCache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.register(format!("{name}.gamma"), ndarray::ArrayD::ones(vec![dim]));
        let beta = store.register(format!("{name}.beta"), Initializer::zeros(&[dim]));
        Self { gamma, beta, dim }
    }

    pub fn forward(&self, store: &ParamStore, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = self.dim as f64;
        let gamma = store.value(self.gamma).view().into_dimensionality::<Ix1>().unwrap();
        let beta = store.value(self.beta).view().into_dimensionality::<Ix1>().unwrap();
        let mut x_hat = Array2::zeros(x.raw_dim());
        let mut inv_std = Array1::zeros(x.nrows());
        let mut y = Array2::zeros(x.raw_dim());
        for (r, row) in x.axis_iter(Axis(0)).enumerate() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std[r] = is;
            for c in 0..self.dim {
                let xh = (row[c] - mean) * is;
                x_hat[[r, c]] = xh;
                y[[r, c]] = xh * gamma[c] + beta[c];
            }
        }
        (y, LayerNormCache { x_hat, inv_std })
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &LayerNormCache,
        dy: &Array2<f64>,
        gbuf: &mut GradBuffer,
    ) -> Array2<f64> {
        let d = self.dim as f64;
        let gamma = store.value(self.gamma).view().into_dimensionality::<Ix1>().unwrap();
        let mut dgamma = Array1::<f64>::zeros(self.dim);
        let mut dbeta = Array1::<f64>::zeros(self.dim);
        let mut dx = Array2::zeros(dy.raw_dim());
        for r in 0..dy.nrows() {
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for c in 0..self.dim {
                let dyv = dy[[r, c]];
                let xh = cache.x_hat[[r, c]];
                dgamma[c] += dyv * xh;
                dbeta[c] += dyv;
                let dxhat = dyv * gamma[c];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xh;
            }
            let is = cache.inv_std[r];
            for c in 0..self.dim {
                let dxhat = dy[[r, c]] * gamma[c];
                dx[[r, c]] = is * (dxhat - sum_dxhat / d - cache.x_hat[[r, c]] * sum_dxhat_xhat / d);
            }
        }
        gbuf.add(self.gamma, &dgamma.into_dyn());
        gbuf.add(self.beta, &dbeta.into_dyn());
        dx
    }
}
