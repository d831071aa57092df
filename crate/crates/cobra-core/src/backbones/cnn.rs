//! Tiny convolutional feature extractor: four conv blocks, total stride 8.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ops, Conv2d, GradBuffer, Initializer, LayerNorm, LayerNormCache, ParamStore};
use crate::types::FeatureMap;

/// Input pixels are shifted to be roughly zero-mean before the first conv.
const INPUT_SHIFT: f64 = 0.5;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    pub in_channels: usize,
    pub channels: [usize; 4],
    pub strides: [usize; 4],
    pub kernel: usize,
    /// Per-cell channel LayerNorm inside each block.
    pub norm: bool,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            channels: [16, 32, 64, 64],
            strides: [1, 2, 2, 2],
            kernel: 3,
            norm: false,
        }
    }
}

impl CnnConfig {
    pub fn total_stride(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn feature_dim(&self) -> usize {
        self.channels[3]
    }
}

/// Conv(3x3) -> ReLU stack (optional per-cell channel LayerNorm in between);
/// the last block's output is the shared feature map consumed by the CAM and
/// projection heads. Plain blocks train noticeably faster on low-contrast
/// synthetic backgrounds, so the norm is off by default.
#[derive(Debug, Clone)]
pub struct TinyCnn {
    blocks: Vec<Conv2d>,
    norms: Vec<LayerNorm>,
    cfg: CnnConfig,
}

/// Per-block tensors retained for the backward pass.
pub struct CnnCache {
    input_dims: Vec<(usize, usize)>,
    cols: Vec<Array2<f64>>,
    norm_caches: Vec<LayerNormCache>,
    preacts: Vec<Array3<f64>>,
}

impl TinyCnn {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: CnnConfig, init: &mut Initializer) -> Self {
        let mut blocks = Vec::with_capacity(4);
        let mut norms = Vec::with_capacity(4);
        let mut c_in = cfg.in_channels;
        for (i, (&c_out, &stride)) in cfg.channels.iter().zip(cfg.strides.iter()).enumerate() {
            blocks.push(Conv2d::new(
                store,
                &format!("{prefix}.block{i}"),
                c_in,
                c_out,
                cfg.kernel,
                stride,
                cfg.kernel / 2,
                init,
            ));
            norms.push(LayerNorm::new(store, &format!("{prefix}.block{i}.norm"), c_out));
            c_in = c_out;
        }
        Self { blocks, norms, cfg }
    }

    pub fn config(&self) -> &CnnConfig {
        &self.cfg
    }

    fn check_input(&self, image: &Array3<f64>) -> Result<usize> {
        let (h, w, c) = image.dim();
        let stride = self.cfg.total_stride();
        if c != self.cfg.in_channels {
            return Err(Error::shape("cnn input channels", self.cfg.in_channels, c));
        }
        if h != w {
            return Err(Error::shape("cnn input", "square image", format!("{h}x{w}")));
        }
        if h % stride != 0 || h == 0 {
            return Err(Error::shape(
                "cnn input size",
                format!("multiple of total stride {stride}"),
                h,
            ));
        }
        Ok(h / stride)
    }

    pub fn forward(&self, store: &ParamStore, image: &Array3<f64>) -> Result<FeatureMap> {
        Ok(self.forward_train(store, image)?.0)
    }

    pub fn forward_train(
        &self,
        store: &ParamStore,
        image: &Array3<f64>,
    ) -> Result<(FeatureMap, CnnCache)> {
        self.check_input(image)?;
        let mut cache = CnnCache {
            input_dims: Vec::with_capacity(4),
            cols: Vec::with_capacity(4),
            norm_caches: Vec::with_capacity(4),
            preacts: Vec::with_capacity(4),
        };
        let mut x = image.mapv(|v| v - INPUT_SHIFT);
        for (conv, norm) in self.blocks.iter().zip(self.norms.iter()) {
            let (h, w, _) = x.dim();
            cache.input_dims.push((h, w));
            let (conv_out, col) = conv.forward(store, &x)?;
            let pre = if self.cfg.norm {
                let (oh, ow, oc) = conv_out.dim();
                let cells = conv_out.into_shape_with_order((oh * ow, oc)).unwrap();
                let (normed, norm_cache) = norm.forward(store, &cells);
                cache.norm_caches.push(norm_cache);
                normed.into_shape_with_order((oh, ow, oc)).unwrap()
            } else {
                conv_out
            };
            x = ops::relu(&pre);
            cache.cols.push(col);
            cache.preacts.push(pre);
        }
        Ok((FeatureMap { values: x }, cache))
    }

    /// Propagate dL/d(feature map) down to parameter gradients.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &CnnCache,
        dfeat: &Array3<f64>,
        gbuf: &mut GradBuffer,
    ) {
        let mut dy = dfeat.clone();
        for i in (0..self.blocks.len()).rev() {
            let dpre = ops::relu_backward(&cache.preacts[i], &dy);
            let dconv = if self.cfg.norm {
                let (oh, ow, oc) = dpre.dim();
                let dcells = dpre.into_shape_with_order((oh * ow, oc)).unwrap();
                let d = self.norms[i].backward(store, &cache.norm_caches[i], &dcells, gbuf);
                d.into_shape_with_order((oh, ow, oc)).unwrap()
            } else {
                dpre
            };
            let (h, w) = cache.input_dims[i];
            dy = self.blocks[i].backward(store, &cache.cols[i], &dconv, h, w, gbuf);
        }
    }
}
