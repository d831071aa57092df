//! Training loop binding both branches, selection, and losses.
//!
//! Per step, every batch item runs forward and backward independently (rayon
//! shares the work), producing one gradient buffer per item; buffers are
//! merged in index order so a fixed seed gives bit-identical runs. Selection
//! sets are computed from forward values only, which is the gradient stop:
//! the branch that supplies a selection signal receives nothing back from
//! the loss that consumes it.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::cak::{gap_scores, gap_scores_backward, pseudo_labels};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::imageops::bilinear_resize;
use crate::losses::{self, LossConfig, LossReport};
use crate::model::{CobraModel, ModelConfig, SeedSource};
use crate::nn::{cosine_lr, GradBuffer, Optimizer, OptimizerKind, ParamStore};
use crate::sak::patch_affinity;
use crate::selection::{select_for_cap, select_for_sap, SelectionConfig};
use crate::types::Seed;

/// Which branch(es) train; single-branch modes are the ablation baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchMode {
    Both,
    CakOnly,
    SakOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Square training resolution; larger images are randomly cropped,
    /// differently-sized ones resized first.
    pub crop: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub rng_seed: u64,
    pub loss: LossConfig,
    pub selection: SelectionConfig,
    /// Background threshold used when hardening CAMs into pseudo labels for
    /// selection.
    pub pseudo_bg_thresh: f64,
    pub branch: BranchMode,
    /// Inference scales for seed generation.
    pub scales: Vec<f64>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            crop: 64,
            lr: 3e-4,
            optimizer: OptimizerKind::Adamw,
            weight_decay: 0.0,
            rng_seed: 0,
            loss: LossConfig::default(),
            selection: SelectionConfig::default(),
            pseudo_bg_thresh: 0.4,
            branch: BranchMode::Both,
            scales: vec![0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0],
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.crop == 0 || self.crop % self.model.vit.patch_size != 0 {
            return Err(Error::Config(format!(
                "crop {} must divide by patch size {}",
                self.crop, self.model.vit.patch_size
            )));
        }
        if !(0.0..1.0).contains(&self.pseudo_bg_thresh) || self.pseudo_bg_thresh <= 0.0 {
            return Err(Error::Config("pseudo_bg_thresh must be in (0,1)".into()));
        }
        self.loss.validate()?;
        let n = (self.crop / self.model.vit.patch_size).pow(2);
        self.selection.validate(n)?;
        self.model.validate()
    }

    /// The seed source implied by the branch mode.
    pub fn seed_source(&self) -> SeedSource {
        match self.branch {
            BranchMode::Both => SeedSource::Fuse,
            BranchMode::CakOnly => SeedSource::Cnn,
            BranchMode::SakOnly => SeedSource::Tran,
        }
    }
}

/// Per-loss gradient weights for one step; zero disables the term (and any
/// work only it needs).
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub cls_cnn: f64,
    pub cls_vit: f64,
    pub cam: f64,
    pub cap: f64,
    pub sap: f64,
}

impl LossWeights {
    fn for_step(cfg: &TrainConfig, epoch: usize) -> Self {
        let cam_active = epoch >= cfg.loss.cam_loss_start_epoch;
        match cfg.branch {
            BranchMode::Both => LossWeights {
                cls_cnn: 1.0,
                cls_vit: 1.0,
                cam: if cam_active { cfg.loss.lambda1 } else { 0.0 },
                cap: cfg.loss.lambda2,
                sap: cfg.loss.lambda2,
            },
            BranchMode::CakOnly => LossWeights { cls_cnn: 1.0, cls_vit: 0.0, cam: 0.0, cap: 0.0, sap: 0.0 },
            BranchMode::SakOnly => LossWeights { cls_cnn: 0.0, cls_vit: 1.0, cam: 0.0, cap: 0.0, sap: 0.0 },
        }
    }
}

/// Raw per-term losses for one item (before lambda weighting / gating).
#[derive(Debug, Clone, Copy, Default)]
pub struct ItemLosses {
    pub cls: f64,
    pub cam: f64,
    pub cap: f64,
    pub sap: f64,
}

/// Forward and backward for one image; returns raw losses and this item's
/// parameter gradients (already weighted by `weights`).
pub fn item_gradients(
    model: &CobraModel,
    store: &ParamStore,
    image: &Array3<f64>,
    labels: &[f64],
    positives: &[usize],
    weights: &LossWeights,
    cfg: &TrainConfig,
) -> Result<(ItemLosses, GradBuffer)> {
    let need_cnn_fwd = weights.cls_cnn > 0.0 || weights.cam > 0.0 || weights.cap > 0.0 || weights.sap > 0.0;
    let need_vit_fwd = weights.cls_vit > 0.0 || weights.cam > 0.0 || weights.cap > 0.0 || weights.sap > 0.0;

    let mut gbuf = GradBuffer::zeros_like(store);
    let mut out = ItemLosses::default();

    let cnn_pass = if need_cnn_fwd {
        let (feat, cache) = model.cnn.forward_train(store, image)?;
        let m_cnn = model.cak.cam_head(store, &feat);
        Some((feat, cache, m_cnn))
    } else {
        None
    };
    let vit_pass = if need_vit_fwd {
        let (tokens, attn, cache) = model.vit.forward_train(store, image)?;
        let m_tran = model.sak.vit_cam_head(store, &tokens)?;
        Some((tokens, attn, cache, m_tran))
    } else {
        None
    };

    // accumulated dL/d(cam stacks) and dL/d(shared activations)
    let mut dm_cnn: Option<Array3<f64>> = None;
    let mut dm_tran: Option<Array3<f64>> = None;
    let mut dfeat: Option<Array3<f64>> = None;
    let mut dtokens: Option<Array2<f64>> = None;

    // classification over GAP scores, per branch
    if let Some((_, _, m_cnn)) = &cnn_pass {
        let scores = gap_scores(m_cnn);
        if weights.cls_cnn > 0.0 {
            out.cls += losses::cls_loss_one(&scores, labels);
            let dscores = losses::cls_loss_one_backward(&scores, labels).mapv(|v| v * weights.cls_cnn);
            add_opt(&mut dm_cnn, gap_scores_backward(m_cnn, &dscores));
        }
    }
    if let Some((_, _, _, m_tran)) = &vit_pass {
        let scores = gap_scores(m_tran);
        if weights.cls_vit > 0.0 {
            out.cls += losses::cls_loss_one(&scores, labels);
            let dscores = losses::cls_loss_one_backward(&scores, labels).mapv(|v| v * weights.cls_vit);
            add_opt(&mut dm_tran, gap_scores_backward(m_tran, &dscores));
        }
    }

    // CAM consistency
    if weights.cam > 0.0 {
        let (_, _, m_cnn) = cnn_pass.as_ref().expect("cam loss needs the conv branch");
        let (_, _, _, m_tran) = vit_pass.as_ref().expect("cam loss needs the attention branch");
        out.cam = losses::cam_loss(m_cnn, m_tran, positives)?;
        let (da, db) = losses::cam_loss_backward(m_cnn, m_tran, positives);
        add_opt(&mut dm_cnn, da.mapv(|v| v * weights.cam));
        add_opt(&mut dm_tran, db.mapv(|v| v * weights.cam));
    }

    // cross-branch contrastive refinement; selections are plain values, so
    // no gradient reaches the branch that produced the signal
    if (weights.cap > 0.0 || weights.sap > 0.0) && !positives.is_empty() {
        let (feat, _, m_cnn) = cnn_pass.as_ref().expect("projection losses need the conv branch");
        let (tokens, attn, _, _) = vit_pass.as_ref().expect("projection losses need the attention branch");
        let pseudo = pseudo_labels(m_cnn, positives, cfg.pseudo_bg_thresh)?;
        let affinity = patch_affinity(attn)?;
        let class_w = 1.0 / positives.len() as f64;

        if weights.cap > 0.0 {
            let (cap_proj, cap_cache) = model.cak.cap_project(store, feat);
            let mut dvec = Array2::<f64>::zeros(cap_proj.vectors.raw_dim());
            for &cls in positives {
                let sel = select_for_cap(&affinity, &pseudo, cls, &cfg.selection)?;
                out.cap += losses::cap_loss(&cap_proj, &sel, &cfg.loss) * class_w;
                dvec += &losses::cap_loss_backward(&cap_proj, &sel, &cfg.loss);
            }
            dvec.mapv_inplace(|v| v * class_w * weights.cap);
            add_opt(&mut dfeat, model.cak.cap_project_backward(store, &cap_cache, &dvec, &mut gbuf));
        }
        if weights.sap > 0.0 {
            let (sap_proj, sap_cache) = model.sak.sap_project(store, tokens);
            let mut dvec = Array2::<f64>::zeros(sap_proj.vectors.raw_dim());
            for &cls in positives {
                let sel = select_for_sap(m_cnn, positives, cls, &cfg.selection)?;
                out.sap += losses::sap_loss(&sap_proj, &sel, &cfg.loss) * class_w;
                dvec += &losses::sap_loss_backward(&sap_proj, &sel, &cfg.loss);
            }
            dvec.mapv_inplace(|v| v * class_w * weights.sap);
            add_opt(&mut dtokens, model.sak.sap_project_backward(store, &sap_cache, &dvec, &mut gbuf));
        }
    }

    // push CAM gradients through the heads, then the backbones
    if let Some((feat, cache, _)) = &cnn_pass {
        if let Some(dm) = &dm_cnn {
            add_opt(&mut dfeat, model.cak.cam_head_backward(store, feat, dm, &mut gbuf));
        }
        if let Some(df) = &dfeat {
            model.cnn.backward(store, cache, df, &mut gbuf);
        }
    }
    if let Some((tokens, _, cache, _)) = &vit_pass {
        if let Some(dm) = &dm_tran {
            add_opt(&mut dtokens, model.sak.vit_cam_head_backward(store, tokens, dm, &mut gbuf));
        }
        if let Some(dt) = &dtokens {
            model.vit.backward(store, cache, dt, &mut gbuf);
        }
    }

    Ok((out, gbuf))
}

fn add_opt<D: ndarray::Dimension>(acc: &mut Option<ndarray::Array<f64, D>>, v: ndarray::Array<f64, D>) {
    match acc {
        Some(a) => *a += &v,
        None => *acc = Some(v),
    }
}

/// Resize-then-random-crop to the training resolution. `offsets` are drawn by
/// the caller so augmentation stays on the deterministic rng stream.
fn prepare_image(image: &Array3<f64>, crop: usize, offset: (usize, usize)) -> Array3<f64> {
    let (h, w, _) = image.dim();
    let (min_side, _) = (h.min(w), h.max(w));
    let resized;
    let src = if min_side < crop {
        resized = bilinear_resize(image, crop.max(h * crop / min_side), crop.max(w * crop / min_side));
        &resized
    } else {
        image
    };
    let (h, w, _) = src.dim();
    if (h, w) == (crop, crop) {
        return src.clone();
    }
    let oy = offset.0.min(h - crop);
    let ox = offset.1.min(w - crop);
    src.slice(ndarray::s![oy..oy + crop, ox..ox + crop, ..]).to_owned()
}

pub struct TrainOutput {
    pub model: CobraModel,
    pub store: ParamStore,
    /// Full metrics log: `epoch,step,cls,cam,cap,sap,total` lines.
    pub metrics_log: String,
    pub last_report: LossReport,
}

/// Train on a dataset; writes `metrics.csv` and per-epoch checkpoints when
/// `out_dir` is given.
pub fn train(cfg: &TrainConfig, dataset: &[Sample], out_dir: Option<&Path>) -> Result<TrainOutput> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("training dataset is empty".into()));
    }
    let rng_seed = cfg.rng_seed;
    let mut store = ParamStore::new();
    let model = CobraModel::new(cfg.model.clone(), &mut store, rng_seed)?;
    let mut optimizer = Optimizer::new(cfg.optimizer, &store, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed.wrapping_add(1));

    let steps_per_epoch = dataset.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;

    let mut log = String::from("epoch,step,cls,cam,cap,sap,total\n");
    let mut last_report = LossReport { cls: 0.0, cam: 0.0, cap: 0.0, sap: 0.0, total: 0.0 };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir.join("checkpoints"))?;
    }

    let mut global_step = 0usize;
    for epoch in 0..cfg.epochs {
        let weights = LossWeights::for_step(cfg, epoch);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            // augmentation offsets drawn up front, off the parallel path
            let prepared: Vec<(usize, Array3<f64>)> = batch
                .iter()
                .map(|&i| {
                    let s = &dataset[i];
                    let (h, w, _) = s.image.dim();
                    let oy = if h > cfg.crop { rng.gen_range(0..=h - cfg.crop) } else { 0 };
                    let ox = if w > cfg.crop { rng.gen_range(0..=w - cfg.crop) } else { 0 };
                    (i, prepare_image(&s.image, cfg.crop, (oy, ox)))
                })
                .collect();

            let results: Vec<Result<(ItemLosses, GradBuffer)>> = prepared
                .par_iter()
                .map(|(i, image)| {
                    let s = &dataset[*i];
                    item_gradients(&model, &store, image, &s.labels_f64(), &s.positives(), &weights, cfg)
                })
                .collect();

            let mut batch_grads = GradBuffer::zeros_like(&store);
            let mut sums = ItemLosses::default();
            for r in results {
                let (item, g) = r?;
                sums.cls += item.cls;
                sums.cam += item.cam;
                sums.cap += item.cap;
                sums.sap += item.sap;
                batch_grads.merge(&g);
            }
            let inv = 1.0 / batch.len() as f64;
            batch_grads.scale(inv);
            let report = losses::total_loss(
                sums.cls * inv,
                sums.cam * inv,
                sums.cap * inv,
                sums.sap * inv,
                &cfg.loss,
                epoch,
            );

            if !report.total.is_finite() || !batch_grads.is_finite() {
                let batch_ids = batch.iter().map(|&i| dataset[i].id.clone()).collect();
                return Err(Error::NonFiniteLoss { epoch, step, batch_ids });
            }

            let lr = cosine_lr(cfg.lr, global_step, total_steps);
            optimizer.step(&mut store, &batch_grads, lr);
            global_step += 1;

            log.push_str(&format!(
                "{epoch},{step},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                report.cls, report.cam, report.cap, report.sap, report.total
            ));
            last_report = report;
        }

        if let Some(dir) = out_dir {
            model.save_checkpoint(&store, dir.join("checkpoints").join(format!("epoch_{epoch:03}.ckpt")))?;
        }
    }

    if let Some(dir) = out_dir {
        std::fs::write(dir.join("metrics.csv"), &log)?;
        model.save_checkpoint(&store, dir.join("checkpoints").join("final.ckpt"))?;
    }

    Ok(TrainOutput { model, store, metrics_log: log, last_report })
}

/// Deterministic multi-scale seeds for a set of samples.
pub fn infer_seeds(
    model: &CobraModel,
    store: &ParamStore,
    samples: &[Sample],
    scales: &[f64],
    source: SeedSource,
) -> Result<Vec<Seed>> {
    samples
        .par_iter()
        .map(|s| model.infer_seed(store, &s.image, scales, source, &s.id))
        .collect()
}

/// Mean image-level classification accuracy of a branch's GAP scores
/// (a class counts as predicted when its score is positive).
pub fn classification_accuracy(
    model: &CobraModel,
    store: &ParamStore,
    samples: &[Sample],
    source: SeedSource,
) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for s in samples {
        let cam = match source {
            SeedSource::Cnn => {
                let feat = model.cnn.forward(store, &s.image)?;
                model.cak.cam_head(store, &feat)
            }
            _ => {
                let (tokens, _) = model.vit.forward(store, &s.image)?;
                model.sak.vit_cam_head(store, &tokens)?
            }
        };
        let scores: Array1<f64> = gap_scores(&cam);
        for (c, &l) in s.labels.iter().enumerate() {
            let predicted = scores[c] > 0.0;
            if predicted == (l != 0) {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbones::{CnnConfig, VitConfig};
    use crate::data::{generate_shapes, DatasetConfig};

    pub(crate) fn tiny_train_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 4,
            crop: 16,
            lr: 1e-3,
            rng_seed: seed,
            selection: SelectionConfig { k_sap_pos: 2, k_sap_neg: 1, k_cap_pos: 1, k_cap_neg: 2 },
            scales: vec![1.0],
            model: ModelConfig {
                num_classes: 3,
                image_size: 16,
                proj_dim: 8,
                cnn: CnnConfig { channels: [4, 8, 8, 8], ..Default::default() },
                vit: VitConfig { dim: 16, layers: 1, heads: 2, mlp_ratio: 2, ..Default::default() },
            },
            ..Default::default()
        }
    }

    fn tiny_dataset(seed: u64, n: usize) -> Vec<Sample> {
        generate_shapes(&DatasetConfig {
            num_classes: 3,
            image_size: 16,
            samples: n,
            rng_seed: seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn identical_runs_give_identical_logs() {
        let cfg = tiny_train_cfg(5);
        let data = tiny_dataset(1, 8);
        let a = train(&cfg, &data, None).unwrap();
        let b = train(&cfg, &data, None).unwrap();
        assert_eq!(a.metrics_log, b.metrics_log);
    }

    #[test]
    fn cam_term_is_gated_until_its_start_epoch() {
        let cfg = tiny_train_cfg(6);
        let data = tiny_dataset(2, 8);
        let out = train(&cfg, &data, None).unwrap();
        let lines: Vec<&str> = out.metrics_log.lines().skip(1).collect();
        for line in &lines {
            let cols: Vec<&str> = line.split(',').collect();
            let epoch: usize = cols[0].parse().unwrap();
            let cam: f64 = cols[2 + 1].parse().unwrap();
            if epoch == 0 {
                assert_eq!(cam, 0.0, "epoch 0 must log cam=0: {line}");
            }
        }
        // epoch 1 has a live cam term on at least one step
        assert!(
            lines.iter().any(|l| {
                let cols: Vec<&str> = l.split(',').collect();
                cols[0] == "1" && cols[3].parse::<f64>().unwrap() > 0.0
            }),
            "cam never became active:\n{}",
            out.metrics_log
        );
    }

    #[test]
    fn one_way_flow_cap_never_touches_sak() {
        let cfg = tiny_train_cfg(7);
        let data = tiny_dataset(3, 4);
        let mut store = ParamStore::new();
        let model = CobraModel::new(cfg.model.clone(), &mut store, 7).unwrap();
        let weights = LossWeights { cls_cnn: 0.0, cls_vit: 0.0, cam: 0.0, cap: 1.0, sap: 0.0 };
        for s in &data {
            let (_, g) =
                item_gradients(&model, &store, &s.image, &s.labels_f64(), &s.positives(), &weights, &cfg).unwrap();
            assert_eq!(g.max_abs_where(&store, |n| n.starts_with("sak.")), 0.0);
            assert!(g.max_abs_where(&store, |n| n.starts_with("cak.")) > 0.0);
        }
    }

    #[test]
    fn one_way_flow_sap_never_touches_cak() {
        let cfg = tiny_train_cfg(8);
        let data = tiny_dataset(4, 4);
        let mut store = ParamStore::new();
        let model = CobraModel::new(cfg.model.clone(), &mut store, 8).unwrap();
        let weights = LossWeights { cls_cnn: 0.0, cls_vit: 0.0, cam: 0.0, cap: 0.0, sap: 1.0 };
        for s in &data {
            let (_, g) =
                item_gradients(&model, &store, &s.image, &s.labels_f64(), &s.positives(), &weights, &cfg).unwrap();
            assert_eq!(g.max_abs_where(&store, |n| n.starts_with("cak.")), 0.0);
            assert!(g.max_abs_where(&store, |n| n.starts_with("sak.")) > 0.0);
        }
    }

    #[test]
    fn single_branch_modes_leave_the_other_branch_untrained() {
        let mut cfg = tiny_train_cfg(9);
        cfg.branch = BranchMode::CakOnly;
        cfg.epochs = 1;
        let data = tiny_dataset(5, 6);
        let out = train(&cfg, &data, None).unwrap();
        // compare sak params against a fresh model with the same init seed
        let mut fresh_store = ParamStore::new();
        CobraModel::new(cfg.model.clone(), &mut fresh_store, cfg.rng_seed).unwrap();
        for id in out.store.ids() {
            let name = out.store.name(id).to_string();
            if name.starts_with("sak.") {
                let trained = out.store.value(id);
                let fresh = fresh_store.value(fresh_store.id_of(&name).unwrap());
                assert_eq!(trained, fresh, "{name} changed in CakOnly mode");
            }
        }
    }

    #[test]
    fn training_metrics_have_expected_shape() {
        let cfg = tiny_train_cfg(10);
        let data = tiny_dataset(6, 8);
        let out = train(&cfg, &data, None).unwrap();
        let lines: Vec<&str> = out.metrics_log.lines().collect();
        assert_eq!(lines[0], "epoch,step,cls,cam,cap,sap,total");
        // 8 samples / batch 4 = 2 steps, 2 epochs
        assert_eq!(lines.len(), 1 + 4);
        // total column satisfies the report identity
        for l in &lines[1..] {
            let c: Vec<f64> = l.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
            let expect = c[0] + cfg.loss.lambda1 * c[1] + cfg.loss.lambda2 * (c[2] + c[3]);
            assert!((c[4] - expect).abs() < 1e-5, "{l}");
        }
    }

    #[test]
    fn checkpoints_written_when_out_dir_given() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_train_cfg(11);
        cfg.epochs = 1;
        let data = tiny_dataset(7, 4);
        train(&cfg, &data, Some(dir.path())).unwrap();
        assert!(dir.path().join("metrics.csv").is_file());
        assert!(dir.path().join("checkpoints/epoch_000.ckpt").is_file());
        assert!(dir.path().join("checkpoints/final.ckpt").is_file());
    }

    #[test]
    fn toy_cls_only_training_reaches_high_accuracy() {
        // lazy-selection baseline: lambda2 = 0 skips selection entirely and
        // classification alone converges at full toy resolution
        let mut cfg = TrainConfig {
            epochs: 30,
            batch_size: 8,
            lr: 5e-3,
            rng_seed: 12,
            scales: vec![1.0],
            ..Default::default()
        };
        cfg.loss.lambda2 = 0.0;
        cfg.loss.lambda1 = 0.0;
        let data = generate_shapes(&DatasetConfig {
            num_classes: 3,
            image_size: 64,
            samples: 48,
            rng_seed: 8,
            ..Default::default()
        })
        .unwrap();
        let out = train(&cfg, &data, None).unwrap();
        let acc_cnn = classification_accuracy(&out.model, &out.store, &data, SeedSource::Cnn).unwrap();
        let acc_vit = classification_accuracy(&out.model, &out.store, &data, SeedSource::Tran).unwrap();
        assert!(acc_cnn > 0.95, "conv branch accuracy {acc_cnn}");
        assert!(acc_vit > 0.95, "attention branch accuracy {acc_vit}");
    }
}
