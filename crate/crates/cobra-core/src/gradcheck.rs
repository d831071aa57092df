//! Central-difference gradient checking for the loss functions.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses;
use crate::selection::SelectionSets;
use crate::types::{CamSource, CamStack};

/// Compare an analytic gradient against central finite differences.
///
/// `f` returns (loss, gradient) at a point. The relative error per coordinate
/// is |a - n| / max(1, |a|, |n|); the maximum over coordinates is returned.
pub fn grad_check<F>(f: F, point: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::Config(format!("grad_check eps must be in [1e-6, 1e-4], got {eps}")));
    }
    let (_, analytic) = f(point);
    if analytic.len() != point.len() {
        return Err(Error::shape("grad_check gradient length", point.len(), analytic.len()));
    }
    let mut x = point.to_vec();
    let mut max_rel: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let (lp, _) = f(&x);
        x[i] = orig - eps;
        let (lm, _) = f(&x);
        x[i] = orig;
        let numeric = (lp - lm) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

/// Max relative gradient errors of the four losses over random instances.
#[derive(Debug, Clone, Copy)]
pub struct LossGradErrors {
    pub cls: f64,
    pub cam: f64,
    pub cap: f64,
    pub sap: f64,
}

impl LossGradErrors {
    pub fn max(&self) -> f64 {
        self.cls.max(self.cam).max(self.cap).max(self.sap)
    }
}

fn random_unit_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Array2<f64> {
    let mut v = Array2::from_shape_fn((rows, dim), |_| rng.gen_range(-1.0..1.0));
    for mut row in v.rows_mut() {
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
        row.mapv_inplace(|x| x / n);
    }
    v
}

fn random_sets(rng: &mut ChaCha8Rng, patches: usize) -> SelectionSets {
    let mut order: Vec<usize> = (0..patches).collect();
    // Fisher-Yates with the seeded rng
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let t = rng.gen_range(1..=2usize);
    let mut targets = Vec::new();
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut cursor = 0usize;
    for _ in 0..t {
        let target = order[cursor];
        cursor += 1;
        let np = rng.gen_range(1..=2usize);
        let nn = rng.gen_range(1..=3usize);
        let pos: Vec<usize> = order[cursor..cursor + np].to_vec();
        cursor += np;
        let neg: Vec<usize> = order[cursor..cursor + nn].to_vec();
        cursor += nn;
        targets.push(target);
        positives.push(pos);
        negatives.push(neg);
    }
    SelectionSets { targets, positives, negatives }
}

/// Run `instances` random gradient checks per loss at the given temperature.
pub fn check_all_losses(tau: f64, instances: usize, seed: u64, eps: f64) -> Result<LossGradErrors> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = losses::LossConfig { tau, ..Default::default() };
    let mut errs = LossGradErrors { cls: 0.0, cam: 0.0, cap: 0.0, sap: 0.0 };

    for _ in 0..instances {
        // classification: point = [scores_cnn, scores_vit]
        let c = rng.gen_range(2..=5usize);
        let labels: Vec<f64> = (0..c).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let point: Vec<f64> = (0..2 * c).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let lbl = labels.clone();
        let e = grad_check(
            move |x| {
                let sc = Array1::from_vec(x[..c].to_vec());
                let sv = Array1::from_vec(x[c..].to_vec());
                let l = losses::cls_loss(&sc, &sv, &lbl);
                let (gc, gv) = losses::cls_loss_backward(&sc, &sv, &lbl);
                let mut g = gc.to_vec();
                g.extend(gv.iter());
                (l, g)
            },
            &point,
            eps,
        )?;
        errs.cls = errs.cls.max(e);

        // cam consistency: point = [m_cnn, m_vit] flattened
        let n = rng.gen_range(2..=3usize);
        let ch = rng.gen_range(1..=3usize);
        let positives: Vec<usize> = (0..ch).filter(|_| rng.gen_bool(0.6)).collect();
        let len = n * n * ch;
        let point: Vec<f64> = (0..2 * len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pos = positives.clone();
        let e = grad_check(
            move |x| {
                let a = Array3::from_shape_vec((n, n, ch), x[..len].to_vec()).unwrap();
                let b = Array3::from_shape_vec((n, n, ch), x[len..].to_vec()).unwrap();
                let ma = CamStack { values: a, source: CamSource::Cnn };
                let mb = CamStack { values: b, source: CamSource::Vit };
                let l = losses::cam_loss(&ma, &mb, &pos).unwrap();
                let (da, db) = losses::cam_loss_backward(&ma, &mb, &pos);
                let mut g: Vec<f64> = da.iter().copied().collect();
                g.extend(db.iter());
                (l, g)
            },
            &point,
            eps,
        )?;
        errs.cam = errs.cam.max(e);

        // contrastive losses: point = projection matrix entries
        // (12 patches covers the worst-case draw of random_sets: two targets
        // each consuming 1 + 2 + 3 distinct indices)
        for which in 0..2 {
            let patches = 12;
            let dim = 4;
            let v = random_unit_rows(&mut rng, patches, dim);
            let sel = random_sets(&mut rng, patches);
            let point: Vec<f64> = v.iter().copied().collect();
            let tau_c = cfg.tau;
            let sel_c = sel.clone();
            let e = grad_check(
                move |x| {
                    let m = Array2::from_shape_vec((patches, dim), x.to_vec()).unwrap();
                    let l = losses::contrastive_loss(&m, &sel_c, tau_c);
                    let g = losses::contrastive_loss_backward(&m, &sel_c, tau_c);
                    (l, g.iter().copied().collect())
                },
                &point,
                eps,
            )?;
            if which == 0 {
                errs.cap = errs.cap.max(e);
            } else {
                errs.sap = errs.sap.max(e);
            }
        }
    }
    Ok(errs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_to_roundoff() {
        // f(x) = sum c_i x_i^2 at a well-conditioned point
        let coeff = [1.5, -2.0, 0.7, 3.0];
        let f = move |x: &[f64]| {
            let l: f64 = x.iter().zip(coeff.iter()).map(|(a, c)| c * a * a).sum();
            let g: Vec<f64> = x.iter().zip(coeff.iter()).map(|(a, c)| 2.0 * c * a).collect();
            (l, g)
        };
        let err = grad_check(f, &[0.5, -1.2, 2.0, 0.8], 1e-5).unwrap();
        assert!(err <= 1e-8, "quadratic rel err {err}");
    }

    #[test]
    fn contrastive_at_default_tau_passes() {
        let errs = check_all_losses(0.1, 5, 42, 1e-5).unwrap();
        assert!(errs.cap <= 1e-3, "cap err {}", errs.cap);
        assert!(errs.sap <= 1e-3, "sap err {}", errs.sap);
    }

    #[test]
    fn deliberately_wrong_gradient_is_detected() {
        let f = |x: &[f64]| {
            let l: f64 = x.iter().map(|a| a * a).sum();
            // inject +0.1 into every coordinate
            let g: Vec<f64> = x.iter().map(|a| 2.0 * a + 0.1).collect();
            (l, g)
        };
        let err = grad_check(f, &[0.4, -0.9], 1e-5).unwrap();
        assert!(err > 1e-2, "checker missed the fault, err {err}");
    }

    #[test]
    fn eps_out_of_range_rejected() {
        let f = |x: &[f64]| (x[0], vec![1.0]);
        assert!(grad_check(f, &[1.0], 1e-7).is_err());
        assert!(grad_check(f, &[1.0], 1e-3).is_err());
    }
}
