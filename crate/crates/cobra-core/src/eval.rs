//! Confusion-matrix mIoU and the per-branch precision/sensitivity
//! diagnostics.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::{Seed, UNKNOWN_LABEL};

/// Pixel counts indexed `[gt][pred]`, both in `0..=C` (0 = background).
/// Prediction pixels labeled unknown are excluded and tallied separately;
/// ignore-labeled ground-truth pixels are treated the same way.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Array2<u64>,
    pub ignored: u64,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self { counts: Array2::zeros((num_classes + 1, num_classes + 1)), ignored: 0 }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.nrows() - 1
    }

    pub fn total_pixels(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Merge another matrix (order-independent accumulation).
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.counts.dim(), other.counts.dim());
        self.counts += &other.counts;
        self.ignored += other.ignored;
    }
}

/// Count one mask pair into the matrix.
pub fn accumulate(cm: &mut ConfusionMatrix, gt: &Array2<u8>, pred: &Array2<u8>) -> Result<()> {
    if gt.dim() != pred.dim() {
        return Err(Error::shape(
            "accumulate masks",
            format!("{:?}", gt.dim()),
            format!("{:?}", pred.dim()),
        ));
    }
    let c = cm.num_classes();
    for (&g, &p) in gt.iter().zip(pred.iter()) {
        if g == UNKNOWN_LABEL || p == UNKNOWN_LABEL {
            cm.ignored += 1;
            continue;
        }
        let (g, p) = (g as usize, p as usize);
        if g > c {
            return Err(Error::Data(format!("ground-truth label {g} exceeds class count {c}")));
        }
        if p > c {
            return Err(Error::Data(format!("predicted label {p} exceeds class count {c}")));
        }
        cm.counts[[g, p]] += 1;
    }
    Ok(())
}

/// Per-class IoU (None where TP+FP+FN = 0) and the mean over defined classes.
pub fn miou(cm: &ConfusionMatrix) -> (Vec<Option<f64>>, f64) {
    let k = cm.counts.nrows();
    let mut ious = Vec::with_capacity(k);
    let mut sum = 0.0;
    let mut defined = 0usize;
    for c in 0..k {
        let tp = cm.counts[[c, c]];
        let fp: u64 = (0..k).filter(|&g| g != c).map(|g| cm.counts[[g, c]]).sum();
        let fn_: u64 = (0..k).filter(|&p| p != c).map(|p| cm.counts[[c, p]]).sum();
        let denom = tp + fp + fn_;
        if denom == 0 {
            ious.push(None);
        } else {
            let iou = tp as f64 / denom as f64;
            ious.push(Some(iou));
            sum += iou;
            defined += 1;
        }
    }
    let mean = if defined == 0 { 0.0 } else { sum / defined as f64 };
    (ious, mean)
}

/// Discretize a seed for evaluation: per pixel, the best positive class when
/// its value clears `bg_thresh`, else background.
pub fn seed_to_mask(seed: &Seed, positives: &[usize], bg_thresh: f64) -> Array2<u8> {
    let (h, w, _) = seed.values.dim();
    let mut out = Array2::<u8>::zeros((h, w));
    if positives.is_empty() {
        return out;
    }
    for y in 0..h {
        for x in 0..w {
            let mut best = f64::NEG_INFINITY;
            let mut best_cls = positives[0];
            for &cls in positives {
                let v = seed.values[[y, x, cls]];
                if v > best {
                    best = v;
                    best_cls = cls;
                }
            }
            if best >= bg_thresh {
                out[[y, x]] = crate::types::class_to_label(best_cls);
            }
        }
    }
    out
}

/// Evaluate seeds against ground truth at one background threshold.
pub fn seed_miou(
    pairs: &[(&Seed, &Array2<u8>, Vec<usize>)],
    num_classes: usize,
    bg_thresh: f64,
) -> Result<(Vec<Option<f64>>, f64)> {
    let mut cm = ConfusionMatrix::new(num_classes);
    for (seed, gt, positives) in pairs {
        let pred = seed_to_mask(seed, positives, bg_thresh);
        accumulate(&mut cm, gt, &pred)?;
    }
    Ok(miou(&cm))
}

/// Sweep background thresholds and keep the best mean IoU (the usual seed
/// evaluation protocol). Returns (best mIoU, best threshold).
pub fn best_seed_miou(
    pairs: &[(&Seed, &Array2<u8>, Vec<usize>)],
    num_classes: usize,
    thresholds: &[f64],
) -> Result<(f64, f64)> {
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for &t in thresholds {
        let (_, m) = seed_miou(pairs, num_classes, t)?;
        if m > best.0 {
            best = (m, t);
        }
    }
    Ok(best)
}

/// Macro-averaged class precision and semantic sensitivity of a binarized
/// seed against ground truth.
///
/// For every class present in the ground truth: precision = TP/(TP+FP)
/// (skipped when nothing was predicted), sensitivity = TP/(TP+FN).
pub fn branch_diagnostics(seed: &Seed, gt: &Array2<u8>, threshold: f64) -> Result<(f64, f64)> {
    let (h, w, num_classes) = seed.values.dim();
    if gt.dim() != (h, w) {
        return Err(Error::shape("branch_diagnostics masks", format!("{h}x{w}"), format!("{:?}", gt.dim())));
    }
    let mut precisions = Vec::new();
    let mut sensitivities = Vec::new();
    for cls in 0..num_classes {
        let label = crate::types::class_to_label(cls);
        let mut tp = 0u64;
        let mut fp = 0u64;
        let mut fn_ = 0u64;
        let mut present = false;
        for y in 0..h {
            for x in 0..w {
                let g = gt[[y, x]];
                if g == UNKNOWN_LABEL {
                    continue;
                }
                let is_gt = g == label;
                present |= is_gt;
                let is_pred = seed.values[[y, x, cls]] >= threshold;
                match (is_gt, is_pred) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    _ => {}
                }
            }
        }
        if !present {
            continue;
        }
        if tp + fp > 0 {
            precisions.push(tp as f64 / (tp + fp) as f64);
        }
        sensitivities.push(tp as f64 / (tp + fn_) as f64);
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok((mean(&precisions), mean(&sensitivities)))
}

/// Plain-text per-class table in the style of the per-class result listings.
pub fn format_table(ious: &[Option<f64>], mean: f64, class_names: Option<&[String]>) -> String {
    let mut out = String::new();
    out.push_str("class              IoU(%)\n");
    for (i, iou) in ious.iter().enumerate() {
        let name = match (i, class_names) {
            (0, _) => "background".to_string(),
            (_, Some(names)) if i - 1 < names.len() => names[i - 1].clone(),
            _ => format!("class_{i}"),
        };
        match iou {
            Some(v) => out.push_str(&format!("{name:<18} {:>6.2}\n", v * 100.0)),
            None => out.push_str(&format!("{name:<18}    n/a\n")),
        }
    }
    out.push_str(&format!("{:<18} {:>6.2}\n", "mIoU", mean * 100.0));
    out
}

/// Machine-readable key=value lines matching [`format_table`].
pub fn format_kv(ious: &[Option<f64>], mean: f64) -> String {
    let mut out = String::new();
    for (i, iou) in ious.iter().enumerate() {
        if let Some(v) = iou {
            out.push_str(&format!("iou_{i}={v:.6}\n"));
        }
    }
    out.push_str(&format!("miou={mean:.6}\n"));
    out
}
