//! Training objectives with analytic gradients.
//!
//! The two projection losses share one contrastive core: for a target patch
//! vector v_t with positive set P+ and negative set P-,
//!
//!   L_t = (1/|P+|) sum_{j in P+} -log[ exp(s_tj/tau) /
//!          (exp(s_tj/tau) + sum_{k in P-} exp(s_tk/tau)) ]
//!
//! with s = dot products of unit vectors, averaged over targets. Targets with
//! an empty positive set are skipped; if every target is skipped the loss is
//! zero. Only the projection vectors passed in receive gradient, which is
//! what enforces the one-way flow between branches.

use ndarray::{Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::{sigmoid, softplus};
use crate::selection::SelectionSets;
use crate::types::{CamStack, ProjectionSet};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub cam_loss_start_epoch: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { tau: 0.1, lambda1: 0.1, lambda2: 0.1, cam_loss_start_epoch: 1 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Config("lambda weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-term values of one training step; `cam` is the post-gating value, so
/// `total = cls + lambda1 * cam + lambda2 * (sap + cap)` always holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub cls: f64,
    pub cam: f64,
    pub cap: f64,
    pub sap: f64,
    pub total: f64,
}

/// Multi-label sigmoid classification loss, mean over classes, summed over
/// the two branches' score vectors.
pub fn cls_loss(scores_cnn: &Array1<f64>, scores_vit: &Array1<f64>, labels: &[f64]) -> f64 {
    cls_loss_one(scores_cnn, labels) + cls_loss_one(scores_vit, labels)
}

/// Single-branch multi-label sigmoid loss (used by the one-branch ablations).
pub fn cls_loss_one(scores: &Array1<f64>, labels: &[f64]) -> f64 {
    debug_assert_eq!(scores.len(), labels.len());
    let c = scores.len() as f64;
    scores
        .iter()
        .zip(labels.iter())
        .map(|(&s, &y)| softplus(s) - y * s)
        .sum::<f64>()
        / c
}

pub fn cls_loss_one_backward(scores: &Array1<f64>, labels: &[f64]) -> Array1<f64> {
    let c = labels.len() as f64;
    Array1::from_iter(
        scores
            .iter()
            .zip(labels.iter())
            .map(|(&s, &y)| (sigmoid(s) - y) / c),
    )
}

/// d cls_loss / d scores for each branch.
pub fn cls_loss_backward(
    scores_cnn: &Array1<f64>,
    scores_vit: &Array1<f64>,
    labels: &[f64],
) -> (Array1<f64>, Array1<f64>) {
    (
        cls_loss_one_backward(scores_cnn, labels),
        cls_loss_one_backward(scores_vit, labels),
    )
}

/// L1 consistency between the two branches' CAMs: mean absolute difference
/// over every class map plus mean absolute difference over the image-positive
/// class maps.
pub fn cam_loss(m_cnn: &CamStack, m_vit: &CamStack, positives: &[usize]) -> Result<f64> {
    if m_cnn.values.dim() != m_vit.values.dim() {
        return Err(Error::shape(
            "cam_loss stacks",
            format!("{:?}", m_cnn.values.dim()),
            format!("{:?}", m_vit.values.dim()),
        ));
    }
    let diff = &m_cnn.values - &m_vit.values;
    let all = diff.mapv(f64::abs).mean().unwrap_or(0.0);
    let mut pos_term = 0.0;
    if !positives.is_empty() {
        let (n, _, _) = diff.dim();
        let count = (n * n * positives.len()) as f64;
        let mut acc = 0.0;
        for &c in positives {
            acc += diff.index_axis(Axis(2), c).mapv(f64::abs).sum();
        }
        pos_term = acc / count;
    }
    Ok(all + pos_term)
}

/// Subgradients of [`cam_loss`] for both stacks (zero at exact ties).
pub fn cam_loss_backward(
    m_cnn: &CamStack,
    m_vit: &CamStack,
    positives: &[usize],
) -> (Array3<f64>, Array3<f64>) {
    let (n, _, c) = m_cnn.values.dim();
    let inv_all = 1.0 / (n * n * c) as f64;
    let inv_pos = if positives.is_empty() { 0.0 } else { 1.0 / (n * n * positives.len()) as f64 };
    let mut d = Array3::<f64>::zeros((n, n, c));
    for ch in 0..c {
        let extra = if positives.contains(&ch) { inv_pos } else { 0.0 };
        let w = inv_all + extra;
        let a = m_cnn.values.index_axis(Axis(2), ch);
        let b = m_vit.values.index_axis(Axis(2), ch);
        let mut dd = d.index_axis_mut(Axis(2), ch);
        ndarray::Zip::from(&mut dd).and(&a).and(&b).for_each(|g, &av, &bv| {
            *g = w * (av - bv).signum() * if av == bv { 0.0 } else { 1.0 };
        });
    }
    let dvit = d.mapv(|v| -v);
    (d, dvit)
}

/// Contrastive core shared by the two projection losses.
pub fn contrastive_loss(vectors: &Array2<f64>, sel: &SelectionSets, tau: f64) -> f64 {
    let mut total = 0.0;
    let mut used = 0usize;
    for (ti, &t) in sel.targets.iter().enumerate() {
        let pos = &sel.positives[ti];
        if pos.is_empty() {
            continue;
        }
        used += 1;
        let neg = &sel.negatives[ti];
        let vt = vectors.row(t);
        let cs: Vec<f64> = neg
            .iter()
            .map(|&k| vt.dot(&vectors.row(k)) / tau)
            .collect();
        let mut acc = 0.0;
        for &j in pos {
            let a = vt.dot(&vectors.row(j)) / tau;
            // -a + log(e^a + sum_k e^c_k), shifted for stability
            let m = cs.iter().fold(a, |mx, &c| mx.max(c));
            let z: f64 = (a - m).exp() + cs.iter().map(|&c| (c - m).exp()).sum::<f64>();
            acc += -a + m + z.ln();
        }
        total += acc / pos.len() as f64;
    }
    if used == 0 {
        0.0
    } else {
        total / used as f64
    }
}

/// dL/d(vectors) for [`contrastive_loss`].
pub fn contrastive_loss_backward(
    vectors: &Array2<f64>,
    sel: &SelectionSets,
    tau: f64,
) -> Array2<f64> {
    let mut grad = Array2::<f64>::zeros(vectors.raw_dim());
    let used = sel
        .targets
        .iter()
        .enumerate()
        .filter(|(ti, _)| !sel.positives[*ti].is_empty())
        .count();
    if used == 0 {
        return grad;
    }
    let target_w = 1.0 / used as f64;
    for (ti, &t) in sel.targets.iter().enumerate() {
        let pos = &sel.positives[ti];
        if pos.is_empty() {
            continue;
        }
        let neg = &sel.negatives[ti];
        let vt = vectors.row(t).to_owned();
        let cs: Vec<f64> = neg
            .iter()
            .map(|&k| vt.dot(&vectors.row(k)) / tau)
            .collect();
        let pair_w = target_w / pos.len() as f64;
        for &j in pos {
            let a = vt.dot(&vectors.row(j)) / tau;
            let m = cs.iter().fold(a, |mx, &c| mx.max(c));
            let ea = (a - m).exp();
            let eks: Vec<f64> = cs.iter().map(|&c| (c - m).exp()).collect();
            let z = ea + eks.iter().sum::<f64>();
            // d/da = p - 1, d/dc_k = q_k
            let ga = pair_w * (ea / z - 1.0) / tau;
            {
                let vj = vectors.row(j).to_owned();
                let mut gt = grad.row_mut(t);
                gt.scaled_add(ga, &vj);
                let mut gj = grad.row_mut(j);
                gj.scaled_add(ga, &vt);
            }
            for (ki, &k) in neg.iter().enumerate() {
                let gk = pair_w * (eks[ki] / z) / tau;
                let vk = vectors.row(k).to_owned();
                let mut gt = grad.row_mut(t);
                gt.scaled_add(gk, &vk);
                let mut gkk = grad.row_mut(k);
                gkk.scaled_add(gk, &vt);
            }
        }
    }
    grad
}

/// Contrastive loss over the conv branch's projections, guided by
/// attention-branch affinity selections.
pub fn cap_loss(cap: &ProjectionSet, sel: &SelectionSets, cfg: &LossConfig) -> f64 {
    contrastive_loss(&cap.vectors, sel, cfg.tau)
}

pub fn cap_loss_backward(cap: &ProjectionSet, sel: &SelectionSets, cfg: &LossConfig) -> Array2<f64> {
    contrastive_loss_backward(&cap.vectors, sel, cfg.tau)
}

/// Contrastive loss over the attention branch's projections, guided by
/// conv-branch CAM selections. Identical functional form to [`cap_loss`].
pub fn sap_loss(sap: &ProjectionSet, sel: &SelectionSets, cfg: &LossConfig) -> f64 {
    contrastive_loss(&sap.vectors, sel, cfg.tau)
}

pub fn sap_loss_backward(sap: &ProjectionSet, sel: &SelectionSets, cfg: &LossConfig) -> Array2<f64> {
    contrastive_loss_backward(&sap.vectors, sel, cfg.tau)
}

/// Combine the parts; the cam term is gated off before
/// `cfg.cam_loss_start_epoch`.
pub fn total_loss(cls: f64, cam: f64, cap: f64, sap: f64, cfg: &LossConfig, epoch: usize) -> LossReport {
    let cam_eff = if epoch >= cfg.cam_loss_start_epoch { cam } else { 0.0 };
    LossReport {
        cls,
        cam: cam_eff,
        cap,
        sap,
        total: cls + cfg.lambda1 * cam_eff + cfg.lambda2 * (sap + cap),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{CamSource, ProjKind};
    use approx::assert_abs_diff_eq;
    use ndarray::arr1;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_vec_with_sim(s: f64) -> [f64; 2] {
        [s, (1.0 - s * s).sqrt()]
    }

    /// Vectors engineered so row 0 has exact dot products `sims` with rows 1..
    fn vectors_with_sims(sims: &[f64]) -> Array2<f64> {
        let mut v = Array2::<f64>::zeros((sims.len() + 1, 2));
        v[[0, 0]] = 1.0;
        for (i, &s) in sims.iter().enumerate() {
            let u = unit_vec_with_sim(s);
            v[[i + 1, 0]] = u[0];
            v[[i + 1, 1]] = u[1];
        }
        v
    }

    fn sets(targets: Vec<usize>, positives: Vec<Vec<usize>>, negatives: Vec<Vec<usize>>) -> SelectionSets {
        SelectionSets { targets, positives, negatives }
    }

    #[test]
    fn cls_zero_scores_give_two_ln_two() {
        let s = arr1(&[0.0, 0.0, 0.0]);
        let l = cls_loss(&s, &s, &[1.0, 0.0, 1.0]);
        assert_abs_diff_eq!(l, 2.0 * std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn cls_saturated_positive_is_near_zero() {
        let s = arr1(&[50.0]);
        let l = cls_loss_one(&s, &[1.0]);
        assert!(l < 1e-20, "saturated loss {l}");
    }

    #[test]
    fn cls_matches_scalar_closed_form_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let c = 4;
            let sc: Array1<f64> = Array1::from_shape_fn(c, |_| rng.gen_range(-3.0..3.0));
            let sv: Array1<f64> = Array1::from_shape_fn(c, |_| rng.gen_range(-3.0..3.0));
            let labels: Vec<f64> = (0..c).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
            // oracle: per-class -y ln(sig) - (1-y) ln(1-sig), averaged, summed over branches
            let mut expect = 0.0;
            for scores in [&sc, &sv] {
                let mut acc = 0.0;
                for i in 0..c {
                    let p = 1.0 / (1.0 + (-scores[i]).exp());
                    acc += -labels[i] * p.ln() - (1.0 - labels[i]) * (1.0 - p).ln();
                }
                expect += acc / c as f64;
            }
            assert_abs_diff_eq!(cls_loss(&sc, &sv, &labels), expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn cam_identity_is_zero() {
        let m = CamStack {
            values: Array3::from_shape_fn((3, 3, 2), |(y, x, c)| (y + x + c) as f64),
            source: CamSource::Cnn,
        };
        let v = CamStack { values: m.values.clone(), source: CamSource::Vit };
        assert_abs_diff_eq!(cam_loss(&m, &v, &[0]).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn cam_constant_maps_give_sum_of_two_terms() {
        let m = CamStack { values: Array3::from_elem((4, 4, 1), 0.5), source: CamSource::Cnn };
        let v = CamStack { values: Array3::from_elem((4, 4, 1), 0.1), source: CamSource::Vit };
        let l = cam_loss(&m, &v, &[0]).unwrap();
        assert_abs_diff_eq!(l, 0.8, epsilon = 1e-12);
    }

    #[test]
    fn cam_matches_loop_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Array3<f64> = Array3::from_shape_fn((3, 3, 3), |_| rng.gen_range(-1.0..1.0));
        let b: Array3<f64> = Array3::from_shape_fn((3, 3, 3), |_| rng.gen_range(-1.0..1.0));
        let positives = vec![0, 2];
        let mut all = 0.0;
        let mut pos = 0.0;
        for y in 0..3 {
            for x in 0..3 {
                for c in 0..3 {
                    let d = (a[[y, x, c]] - b[[y, x, c]]).abs();
                    all += d;
                    if positives.contains(&c) {
                        pos += d;
                    }
                }
            }
        }
        let expect = all / 27.0 + pos / 18.0;
        let l = cam_loss(
            &CamStack { values: a, source: CamSource::Cnn },
            &CamStack { values: b, source: CamSource::Vit },
            &positives,
        )
        .unwrap();
        assert_abs_diff_eq!(l, expect, epsilon = 1e-12);
    }

    #[test]
    fn contrastive_empty_negatives_is_zero() {
        // one positive, zero negatives -> -log(e^s / e^s) = 0 for any s and tau
        for tau in [0.05, 0.5, 2.0] {
            let v = vectors_with_sims(&[0.37]);
            let sel = sets(vec![0], vec![vec![1]], vec![vec![]]);
            assert_abs_diff_eq!(contrastive_loss(&v, &sel, tau), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn contrastive_single_pair_closed_form() {
        // sims: pos=1, neg=0, tau=1 -> log(1 + e^-1)
        let v = vectors_with_sims(&[1.0, 0.0]);
        let sel = sets(vec![0], vec![vec![1]], vec![vec![2]]);
        let expect = (1.0 + (-1.0f64).exp()).ln();
        assert_abs_diff_eq!(contrastive_loss(&v, &sel, 1.0), expect, epsilon = 1e-9);
        assert_abs_diff_eq!(expect, 0.313_261_687_5, epsilon = 1e-9);
    }

    #[test]
    fn contrastive_composite_matches_scalar_summation_oracle() {
        // sims: pos {0.8, 0.2}, neg {0.5}, tau = 0.5.
        // scalar oracle: mean of ln(1+e^{(c-a_j)}) with a = (1.6, 0.4), c = 1.0
        let v = vectors_with_sims(&[0.8, 0.2, 0.5]);
        let sel = sets(vec![0], vec![vec![1, 2]], vec![vec![3]]);
        let oracle = 0.5 * (((1.0f64) + (-0.6f64).exp()).ln() + ((1.0f64) + (0.6f64).exp()).ln());
        assert_abs_diff_eq!(contrastive_loss(&v, &sel, 0.5), oracle, epsilon = 1e-9);
        // the oracle's own value, frozen
        assert_abs_diff_eq!(oracle, 0.737_487_950_485_885_7, epsilon = 1e-9);
    }

    #[test]
    fn cap_and_sap_share_the_formula() {
        let v = vectors_with_sims(&[0.8, 0.2, 0.5]);
        let sel = sets(vec![0], vec![vec![1, 2]], vec![vec![3]]);
        let cfg = LossConfig { tau: 0.5, ..Default::default() };
        let cap = ProjectionSet { vectors: v.clone(), kind: ProjKind::Cap };
        let sap = ProjectionSet { vectors: v, kind: ProjKind::Sap };
        assert_abs_diff_eq!(cap_loss(&cap, &sel, &cfg), sap_loss(&sap, &sel, &cfg), epsilon = 1e-15);
    }

    #[test]
    fn contrastive_all_targets_skipped_is_zero() {
        let v = vectors_with_sims(&[0.3, 0.1]);
        let sel = sets(vec![0, 1], vec![vec![], vec![]], vec![vec![2], vec![2]]);
        assert_abs_diff_eq!(contrastive_loss(&v, &sel, 0.1), 0.0, epsilon = 1e-15);
        let g = contrastive_loss_backward(&v, &sel, 0.1);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn contrastive_backward_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = 8;
        let d = 5;
        let mut v = Array2::from_shape_fn((p, d), |_| rng.gen_range(-1.0..1.0));
        for mut row in v.rows_mut() {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.mapv_inplace(|x| x / n);
        }
        let sel = sets(
            vec![0, 3],
            vec![vec![1, 2], vec![4]],
            vec![vec![5, 6], vec![6, 7]],
        );
        let tau = 0.1;
        let grad = contrastive_loss_backward(&v, &sel, tau);
        let eps = 1e-6;
        for idx in [[0usize, 0], [1, 2], [5, 4], [7, 1], [3, 3]] {
            let mut vp = v.clone();
            vp[idx] += eps;
            let mut vm = v.clone();
            vm[idx] -= eps;
            let num = (contrastive_loss(&vp, &sel, tau) - contrastive_loss(&vm, &sel, tau)) / (2.0 * eps);
            assert_abs_diff_eq!(grad[idx], num, epsilon = 1e-7 * (1.0 + num.abs()));
        }
    }

    #[test]
    fn total_loss_gating_and_arithmetic() {
        let cfg = LossConfig::default();
        // lambda1 = lambda2 = 0 -> total = cls
        let zero = LossConfig { lambda1: 0.0, lambda2: 0.0, ..Default::default() };
        assert_abs_diff_eq!(total_loss(1.3, 7.0, 2.0, 5.0, &zero, 3).total, 1.3, epsilon = 1e-12);

        // epoch 0 with default start epoch 1: cam contributes 0
        let r = total_loss(1.0, 2.0, 3.0, 4.0, &cfg, 0);
        assert_abs_diff_eq!(r.cam, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.total, 1.0 + 0.1 * (3.0 + 4.0), epsilon = 1e-12);

        // epoch >= 1: cls=1 cam=2 cap=3 sap=4 -> 1 + 0.2 + 0.7 = 1.9
        let r = total_loss(1.0, 2.0, 3.0, 4.0, &cfg, 1);
        assert_abs_diff_eq!(r.total, 1.9, epsilon = 1e-12);
        // report invariant
        assert_abs_diff_eq!(
            r.total,
            r.cls + cfg.lambda1 * r.cam + cfg.lambda2 * (r.sap + r.cap),
            epsilon = 1e-6
        );
    }

    #[test]
    fn cls_backward_matches_finite_difference() {
        let sc = arr1(&[0.4, -1.2, 2.0]);
        let sv = arr1(&[-0.3, 0.9, 0.0]);
        let labels = [1.0, 0.0, 1.0];
        let (gc, gv) = cls_loss_backward(&sc, &sv, &labels);
        let eps = 1e-6;
        for i in 0..3 {
            let mut p = sc.clone();
            p[i] += eps;
            let mut m = sc.clone();
            m[i] -= eps;
            let num = (cls_loss(&p, &sv, &labels) - cls_loss(&m, &sv, &labels)) / (2.0 * eps);
            assert_abs_diff_eq!(gc[i], num, epsilon = 1e-9);
            let mut p = sv.clone();
            p[i] += eps;
            let mut m = sv.clone();
            m[i] -= eps;
            let num = (cls_loss(&sc, &p, &labels) - cls_loss(&sc, &m, &labels)) / (2.0 * eps);
            assert_abs_diff_eq!(gv[i], num, epsilon = 1e-9);
        }
    }

    #[test]
    fn cam_backward_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = Array3::from_shape_fn((2, 2, 2), |_| rng.gen_range(-1.0..1.0));
        let b = Array3::from_shape_fn((2, 2, 2), |_| rng.gen_range(-1.0..1.0));
        let ma = CamStack { values: a.clone(), source: CamSource::Cnn };
        let mb = CamStack { values: b.clone(), source: CamSource::Vit };
        let positives = vec![1];
        let (da, db) = cam_loss_backward(&ma, &mb, &positives);
        let eps = 1e-7;
        for idx in [[0usize, 0, 0], [1, 1, 1], [0, 1, 0]] {
            let mut ap = a.clone();
            ap[idx] += eps;
            let mut am = a.clone();
            am[idx] -= eps;
            let lp = cam_loss(&CamStack { values: ap, source: CamSource::Cnn }, &mb, &positives).unwrap();
            let lm = cam_loss(&CamStack { values: am, source: CamSource::Cnn }, &mb, &positives).unwrap();
            assert_abs_diff_eq!(da[idx], (lp - lm) / (2.0 * eps), epsilon = 1e-6);

            let mut bp = b.clone();
            bp[idx] += eps;
            let mut bm = b.clone();
            bm[idx] -= eps;
            let lp = cam_loss(&ma, &CamStack { values: bp, source: CamSource::Vit }, &positives).unwrap();
            let lm = cam_loss(&ma, &CamStack { values: bm, source: CamSource::Vit }, &positives).unwrap();
            assert_abs_diff_eq!(db[idx], (lp - lm) / (2.0 * eps), epsilon = 1e-6);
        }
    }

    proptest! {
        // each term is -log of a quantity <= 1, so the loss is never negative
        #[test]
        fn contrastive_loss_nonnegative(seed in 0u64..300, tau in 0.05f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = Array2::from_shape_fn((6, 4), |_| rng.gen_range(-1.0..1.0));
            for mut row in v.rows_mut() {
                let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                row.mapv_inplace(|x| x / n);
            }
            let sel = sets(vec![0, 1], vec![vec![2], vec![3, 4]], vec![vec![5], vec![5, 2]]);
            prop_assert!(contrastive_loss(&v, &sel, tau) >= 0.0);
        }

        // invariant under a common permutation of patch indices
        #[test]
        fn contrastive_loss_permutation_invariant(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = 6;
            let mut v = Array2::from_shape_fn((p, 3), |_| rng.gen_range(-1.0..1.0));
            for mut row in v.rows_mut() {
                let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                row.mapv_inplace(|x| x / n);
            }
            let sel = sets(vec![0, 2], vec![vec![1], vec![3, 4]], vec![vec![5], vec![0, 5]]);
            // rotate indices by 2
            let perm = |i: usize| (i + 2) % p;
            let mut vp = Array2::<f64>::zeros((p, 3));
            for i in 0..p {
                vp.row_mut(perm(i)).assign(&v.row(i));
            }
            let selp = sets(
                sel.targets.iter().map(|&t| perm(t)).collect(),
                sel.positives.iter().map(|ps| ps.iter().map(|&j| perm(j)).collect()).collect(),
                sel.negatives.iter().map(|ns| ns.iter().map(|&k| perm(k)).collect()).collect(),
            );
            let a = contrastive_loss(&v, &sel, 0.3);
            let b = contrastive_loss(&vp, &selp, 0.3);
            prop_assert!((a - b).abs() < 1e-12);
        }

        // pulling a positive closer strictly decreases the loss
        #[test]
        fn contrastive_loss_monotone_in_positive_similarity(s1 in -0.9f64..0.8, bump in 0.01f64..0.19) {
            let v1 = vectors_with_sims(&[s1, 0.3]);
            let v2 = vectors_with_sims(&[s1 + bump, 0.3]);
            let sel = sets(vec![0], vec![vec![1]], vec![vec![2]]);
            let l1 = contrastive_loss(&v1, &sel, 0.2);
            let l2 = contrastive_loss(&v2, &sel, 0.2);
            prop_assert!(l2 < l1);
        }
    }
}
