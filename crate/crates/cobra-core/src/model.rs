//! Both branches assembled over one parameter store, plus seed inference and
//! checkpointing.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::backbones::{CnnConfig, TinyCnn, TinyVit, VitConfig};
use crate::cak::CakHead;
use crate::container::TensorContainer;
use crate::error::{Error, Result};
use crate::imageops::normalize_per_channel;
use crate::nn::{Initializer, ParamStore};
use crate::sak::{object_attention, vit_localization, SakHead};
use crate::seeds::{fuse_cams, multiscale_seed};
use crate::types::{CamSource, CamStack, Seed};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_classes: usize,
    /// Training resolution; fixes the attention branch's base patch grid.
    pub image_size: usize,
    pub proj_dim: usize,
    pub cnn: CnnConfig,
    pub vit: VitConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let vit = VitConfig::default();
        Self {
            num_classes: 3,
            image_size: 64,
            proj_dim: 256,
            cnn: CnnConfig::default(),
            vit,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes > 254 {
            return Err(Error::Config(format!("num_classes {} out of range", self.num_classes)));
        }
        if self.cnn.total_stride() != self.vit.patch_size {
            return Err(Error::Config(format!(
                "conv stride {} must equal patch size {} so both branches share one grid",
                self.cnn.total_stride(),
                self.vit.patch_size
            )));
        }
        if self.image_size == 0 || self.image_size % self.vit.patch_size != 0 {
            return Err(Error::Config(format!(
                "image_size {} must divide by patch size {}",
                self.image_size, self.vit.patch_size
            )));
        }
        self.vit.validate()
    }

    pub fn grid_side(&self) -> usize {
        self.image_size / self.vit.patch_size
    }
}

/// Which map(s) a seed is built from. `Fuse` is max(average, attention map).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedSource {
    Fuse,
    Cnn,
    Tran,
    Average,
    Max,
}

pub struct CobraModel {
    pub cfg: ModelConfig,
    pub cnn: TinyCnn,
    pub vit: TinyVit,
    pub cak: CakHead,
    pub sak: SakHead,
}

impl CobraModel {
    /// Build both branches; parameter names are prefixed `cak.` / `sak.` so
    /// per-branch gradients can be inspected.
    pub fn new(cfg: ModelConfig, store: &mut ParamStore, init_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut cfg = cfg;
        cfg.vit.base_grid = cfg.grid_side();
        let mut init = Initializer::new(ChaCha8Rng::seed_from_u64(init_seed));
        let cnn = TinyCnn::new(store, "cak.cnn", cfg.cnn.clone(), &mut init);
        let vit = TinyVit::new(store, "sak.vit", cfg.vit.clone(), &mut init)?;
        let cak = CakHead::new(store, "cak", cfg.cnn.feature_dim(), cfg.num_classes, cfg.proj_dim, &mut init);
        let sak = SakHead::new(store, "sak", cfg.vit.dim, cfg.num_classes, cfg.proj_dim, &mut init);
        Ok(Self { cfg, cnn, vit, cak, sak })
    }

    /// Normalized per-class maps of the requested source on the image's patch
    /// grid, with the attention branch's map modulated by object attention.
    pub fn source_cam(&self, store: &ParamStore, image: &Array3<f64>, source: SeedSource) -> Result<Array3<f64>> {
        let need_cnn = !matches!(source, SeedSource::Tran);
        let need_vit = !matches!(source, SeedSource::Cnn);

        let m_cnn = if need_cnn {
            let feat = self.cnn.forward(store, image)?;
            Some(normalize_per_channel(&self.cak.cam_head(store, &feat).values))
        } else {
            None
        };
        let m_tran = if need_vit {
            let (tokens, attn) = self.vit.forward(store, image)?;
            let cam = self.sak.vit_cam_head(store, &tokens)?;
            let a_obj = object_attention(&attn)?;
            let modulated = vit_localization(&cam, &a_obj)?;
            Some(normalize_per_channel(&modulated.values))
        } else {
            None
        };

        Ok(match source {
            SeedSource::Cnn => m_cnn.unwrap(),
            SeedSource::Tran => m_tran.unwrap(),
            SeedSource::Average => (m_cnn.unwrap() + m_tran.unwrap()) / 2.0,
            SeedSource::Max => {
                let a = m_cnn.unwrap();
                let b = m_tran.unwrap();
                let mut out = a;
                out.zip_mut_with(&b, |x, &y| *x = x.max(y));
                out
            }
            SeedSource::Fuse => {
                let a = CamStack { values: m_cnn.unwrap(), source: CamSource::Cnn };
                let b = CamStack { values: m_tran.unwrap(), source: CamSource::Vit };
                fuse_cams(&a, &b)?.values
            }
        })
    }

    /// Multi-scale seed for one image.
    pub fn infer_seed(
        &self,
        store: &ParamStore,
        image: &Array3<f64>,
        scales: &[f64],
        source: SeedSource,
        id: &str,
    ) -> Result<Seed> {
        multiscale_seed(image, scales, self.cfg.vit.patch_size, id, |scaled| {
            self.source_cam(store, scaled, source)
        })
    }

    pub fn save_checkpoint(&self, store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
        let mut c = TensorContainer::new();
        for (name, value) in store.iter() {
            c.insert(name, value.clone());
        }
        c.save(path)
    }

    /// Load parameters by name; names and shapes must match the configured
    /// backbones exactly.
    pub fn load_checkpoint(&self, store: &mut ParamStore, path: impl AsRef<Path>) -> Result<()> {
        let c = TensorContainer::load(path)?;
        for name in c.names() {
            if store.id_of(name).is_none() {
                return Err(Error::Checkpoint {
                    name: name.to_string(),
                    reason: "not a parameter of the configured model".into(),
                });
            }
        }
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let tensor = c.get(&name).ok_or_else(|| Error::Checkpoint {
                name: name.clone(),
                reason: "missing from checkpoint".into(),
            })?;
            if tensor.shape() != store.value(id).shape() {
                return Err(Error::Checkpoint {
                    name,
                    reason: format!(
                        "shape {:?} does not match configured {:?}",
                        tensor.shape(),
                        store.value(id).shape()
                    ),
                });
            }
            store.value_mut(id).assign(tensor);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_model_cfg() -> ModelConfig {
        ModelConfig {
            num_classes: 2,
            image_size: 16,
            proj_dim: 8,
            cnn: CnnConfig { channels: [4, 8, 8, 8], ..Default::default() },
            vit: VitConfig { dim: 16, layers: 1, heads: 2, mlp_ratio: 2, ..Default::default() },
        }
    }

    fn random_image(seed: u64, size: usize) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((size, size, 3), |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn mismatched_stride_and_patch_rejected() {
        let cfg = ModelConfig {
            cnn: CnnConfig { strides: [1, 1, 2, 2], ..Default::default() },
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn source_cams_share_shape_and_fuse_dominates() {
        let mut store = ParamStore::new();
        let model = CobraModel::new(tiny_model_cfg(), &mut store, 1).unwrap();
        let img = random_image(2, 16);
        let fuse = model.source_cam(&store, &img, SeedSource::Fuse).unwrap();
        let cnn = model.source_cam(&store, &img, SeedSource::Cnn).unwrap();
        let tran = model.source_cam(&store, &img, SeedSource::Tran).unwrap();
        let avg = model.source_cam(&store, &img, SeedSource::Average).unwrap();
        assert_eq!(fuse.dim(), (2, 2, 2));
        assert_eq!(cnn.dim(), fuse.dim());
        for ((f, t), a) in fuse.iter().zip(tran.iter()).zip(avg.iter()) {
            assert!(*f >= *t - 1e-12);
            assert!(*f >= *a - 1e-12);
        }
    }

    #[test]
    fn seed_inference_is_deterministic() {
        let mut store = ParamStore::new();
        let model = CobraModel::new(tiny_model_cfg(), &mut store, 3).unwrap();
        let img = random_image(5, 16);
        let a = model.infer_seed(&store, &img, &[0.5, 1.0], SeedSource::Fuse, "x").unwrap();
        let b = model.infer_seed(&store, &img, &[0.5, 1.0], SeedSource::Fuse, "x").unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.values.dim(), (16, 16, 2));
    }

    #[test]
    fn checkpoint_round_trip_restores_inference() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut store = ParamStore::new();
        let model = CobraModel::new(tiny_model_cfg(), &mut store, 7).unwrap();
        let img = random_image(8, 16);
        let before = model.infer_seed(&store, &img, &[1.0], SeedSource::Fuse, "x").unwrap();
        model.save_checkpoint(&store, &path).unwrap();

        let mut store2 = ParamStore::new();
        let model2 = CobraModel::new(tiny_model_cfg(), &mut store2, 99).unwrap();
        model2.load_checkpoint(&mut store2, &path).unwrap();
        let after = model2.infer_seed(&store2, &img, &[1.0], SeedSource::Fuse, "x").unwrap();
        assert_eq!(before.values, after.values);
    }

    #[test]
    fn checkpoint_shape_mismatch_names_the_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut store = ParamStore::new();
        let model = CobraModel::new(tiny_model_cfg(), &mut store, 7).unwrap();
        model.save_checkpoint(&store, &path).unwrap();

        // different proj dim: sak.proj.weight no longer matches
        let mut other_cfg = tiny_model_cfg();
        other_cfg.proj_dim = 4;
        let mut store2 = ParamStore::new();
        let model2 = CobraModel::new(other_cfg, &mut store2, 1).unwrap();
        let err = model2.load_checkpoint(&mut store2, &path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("proj.weight"), "error should name the tensor: {msg}");
    }
}
