//! Class-aware branch head: CNN CAMs, image-level scores, pseudo labels,
//! and the class-aware projection.

use ndarray::{Array1, Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::nn::{ops, GradBuffer, Initializer, Linear, ParamStore};
use crate::types::{class_to_label, CamSource, CamStack, FeatureMap, ProjKind, ProjectionSet, PseudoLabelGrid};

#[derive(Debug, Clone)]
pub struct CakHead {
    pub cam: Linear,
    pub proj: Linear,
}

/// Pre-normalization projections plus row norms, kept for backward.
pub struct CapCache {
    cells: Array2<f64>,
    unit: Array2<f64>,
    norms: Vec<f64>,
}

impl CakHead {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        feature_dim: usize,
        num_classes: usize,
        proj_dim: usize,
        init: &mut Initializer,
    ) -> Self {
        Self {
            cam: Linear::new(store, &format!("{prefix}.cam"), feature_dim, num_classes, true, 0.01, init),
            proj: Linear::new(store, &format!("{prefix}.proj"), feature_dim, proj_dim, true, 0.02, init),
        }
    }

    /// Per-cell 1x1 classifier over channels.
    pub fn cam_head(&self, store: &ParamStore, f: &FeatureMap) -> CamStack {
        let (n, _, d) = f.values.dim();
        let cells = f.values.view().into_shape_with_order((n * n, d)).unwrap().to_owned();
        let out = self.cam.forward(store, &cells);
        CamStack {
            values: out.into_shape_with_order((n, n, self.cam.out_dim)).unwrap(),
            source: CamSource::Cnn,
        }
    }

    /// dL/d(feature map) from dL/d(cam stack).
    pub fn cam_head_backward(
        &self,
        store: &ParamStore,
        f: &FeatureMap,
        dcam: &Array3<f64>,
        gbuf: &mut GradBuffer,
    ) -> Array3<f64> {
        let (n, _, d) = f.values.dim();
        let cells = f.values.view().into_shape_with_order((n * n, d)).unwrap().to_owned();
        let dy = dcam.view().into_shape_with_order((n * n, self.cam.out_dim)).unwrap().to_owned();
        let dx = self.cam.backward(store, &cells, &dy, gbuf);
        dx.into_shape_with_order((n, n, d)).unwrap()
    }

    /// Linear projection of each cell followed by L2 normalization.
    pub fn cap_project(&self, store: &ParamStore, f: &FeatureMap) -> (ProjectionSet, CapCache) {
        let (n, _, d) = f.values.dim();
        let cells = f.values.view().into_shape_with_order((n * n, d)).unwrap().to_owned();
        let raw = self.proj.forward(store, &cells);
        let (unit, norms) = ops::normalize_rows(&raw);
        (
            ProjectionSet { vectors: unit.clone(), kind: ProjKind::Cap },
            CapCache { cells, unit, norms },
        )
    }

    /// dL/d(feature map) from dL/d(unit projections).
    pub fn cap_project_backward(
        &self,
        store: &ParamStore,
        cache: &CapCache,
        dproj: &Array2<f64>,
        gbuf: &mut GradBuffer,
    ) -> Array3<f64> {
        let draw = ops::normalize_rows_backward(&cache.unit, &cache.norms, dproj);
        let dcells = self.proj.backward(store, &cache.cells, &draw, gbuf);
        let n = (dcells.nrows() as f64).sqrt() as usize;
        dcells.into_shape_with_order((n, n, self.proj.in_dim)).unwrap()
    }
}

/// Image-level class scores: spatial mean of each class map.
pub fn gap_scores(m: &CamStack) -> Array1<f64> {
    let (n, _, _) = m.values.dim();
    m.values.sum_axis(Axis(0)).sum_axis(Axis(0)) / (n * n) as f64
}

/// Spreads dL/d(scores) uniformly back over cells.
pub fn gap_scores_backward(m: &CamStack, dscores: &Array1<f64>) -> Array3<f64> {
    let (n, _, c) = m.values.dim();
    let inv = 1.0 / (n * n) as f64;
    Array3::from_shape_fn((n, n, c), |(_, _, ch)| dscores[ch] * inv)
}

/// Hard per-cell class decisions over the image-positive classes.
///
/// Each positive class map is min-max normalized over the grid (constant maps
/// normalize to zero = "no evidence"); a cell gets the argmax class when the
/// best normalized score clears `bg_thresh`, otherwise background. Ties break
/// toward the smallest class index.
pub fn pseudo_labels(m: &CamStack, positives: &[usize], bg_thresh: f64) -> Result<PseudoLabelGrid> {
    if positives.is_empty() {
        return Err(Error::Config("pseudo_labels requires at least one positive class".into()));
    }
    if !(0.0..1.0).contains(&bg_thresh) || bg_thresh <= 0.0 {
        return Err(Error::Config(format!("bg_thresh must be in (0,1), got {bg_thresh}")));
    }
    let (n, _, c) = m.values.dim();
    if let Some(&bad) = positives.iter().find(|&&p| p >= c) {
        return Err(Error::Config(format!("positive class {bad} out of range (C={c})")));
    }

    let mut sorted: Vec<usize> = positives.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let mut normalized = Vec::with_capacity(sorted.len());
    for &cls in &sorted {
        let map = m.values.index_axis(Axis(2), cls).to_owned();
        normalized.push(crate::imageops::normalize_2d(&map));
    }

    let mut labels = Array2::<u8>::zeros((n, n));
    let mut scores = Array2::<f64>::zeros((n, n));
    for y in 0..n {
        for x in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut best_cls = sorted[0];
            for (k, &cls) in sorted.iter().enumerate() {
                let v = normalized[k][[y, x]];
                if v > best {
                    best = v;
                    best_cls = cls;
                }
            }
            scores[[y, x]] = best;
            if best >= bg_thresh {
                labels[[y, x]] = class_to_label(best_cls);
            }
        }
    }
    Ok(PseudoLabelGrid { labels, scores })
}
