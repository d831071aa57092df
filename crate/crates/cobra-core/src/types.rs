//! Domain tensors passed between branches.
//!
//! Conventions used throughout the crate:
//! - Spatial maps are `(rows, cols, channels)` in row-major order.
//! - Patch index `i` of an `N x N` grid is `i = row * N + col`.
//! - Mask/label values: `0` = background, `v in 1..=C` = foreground class
//!   `v - 1` (zero-based), [`UNKNOWN_LABEL`] = ignore/unknown (trimaps only).

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};

/// Trimap "unknown" marker; also the ignore index during evaluation.
pub const UNKNOWN_LABEL: u8 = 255;

/// Mask value for zero-based foreground class `c`.
pub fn class_to_label(c: usize) -> u8 {
    debug_assert!(c < UNKNOWN_LABEL as usize - 1);
    (c + 1) as u8
}

/// Zero-based class for a mask value, if it is a foreground class.
pub fn label_to_class(v: u8) -> Option<usize> {
    (v != 0 && v != UNKNOWN_LABEL).then(|| v as usize - 1)
}

/// Which head produced a CAM stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CamSource {
    Cnn,
    Vit,
    Fused,
}

/// Per-class activation maps, `(N, N, C)`.
#[derive(Debug, Clone)]
pub struct CamStack {
    pub values: Array3<f64>,
    pub source: CamSource,
}

impl CamStack {
    pub fn grid(&self) -> (usize, usize) {
        (self.values.dim().0, self.values.dim().1)
    }

    pub fn num_classes(&self) -> usize {
        self.values.dim().2
    }
}

/// Convolutional feature map, `(N, N, D_c)`.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub values: Array3<f64>,
}

impl FeatureMap {
    pub fn grid_side(&self) -> usize {
        self.values.dim().0
    }

    pub fn channels(&self) -> usize {
        self.values.dim().2
    }
}

/// Encoder output tokens, `(1 + N^2, D)`; row 0 is the class token.
#[derive(Debug, Clone)]
pub struct PatchTokens {
    pub values: Array2<f64>,
}

impl PatchTokens {
    pub fn num_patches(&self) -> usize {
        self.values.nrows() - 1
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// Patch rows only (class token dropped), `(N^2, D)`.
    pub fn patch_rows(&self) -> ndarray::ArrayView2<'_, f64> {
        self.values.slice(ndarray::s![1.., ..])
    }
}

/// Head-averaged post-softmax attention, one `(1+N^2, 1+N^2)` matrix per layer.
/// Rows are stochastic: each sums to 1.
#[derive(Debug, Clone)]
pub struct AttentionStack {
    pub layers: Vec<Array2<f64>>,
}

impl AttentionStack {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_patches(&self) -> usize {
        self.layers[0].nrows() - 1
    }

    pub fn validate_row_stochastic(&self, tol: f64) -> Result<()> {
        for (l, a) in self.layers.iter().enumerate() {
            for (r, row) in a.rows().into_iter().enumerate() {
                let s = row.sum();
                if (s - 1.0).abs() > tol {
                    return Err(Error::shape(
                        format!("attention layer {l} row {r} sum"),
                        "1.0",
                        s,
                    ));
                }
                if row.iter().any(|&v| v < 0.0) {
                    return Err(Error::shape(
                        format!("attention layer {l} row {r}"),
                        "entries >= 0",
                        "negative entry",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Patch-to-patch semantic affinity, `(N^2, N^2)`.
#[derive(Debug, Clone)]
pub struct PatchAffinity {
    pub values: Array2<f64>,
}

/// Class-token-to-patch attention, stored on the `(N, N)` grid,
/// min-max normalized to [0, 1].
#[derive(Debug, Clone)]
pub struct ObjAttention {
    pub values: Array2<f64>,
}

impl ObjAttention {
    pub fn as_flat(&self) -> Array1<f64> {
        Array1::from_iter(self.values.iter().copied())
    }
}

/// L2-normalized per-patch projections, `(N^2, d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjKind {
    Cap,
    Sap,
}

#[derive(Debug, Clone)]
pub struct ProjectionSet {
    pub vectors: Array2<f64>,
    pub kind: ProjKind,
}

impl ProjectionSet {
    pub fn num_patches(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Hard per-cell class decisions on the patch grid.
/// `labels` uses the mask encoding above; `scores` holds the max normalized
/// class score per cell regardless of thresholding.
#[derive(Debug, Clone)]
pub struct PseudoLabelGrid {
    pub labels: Array2<u8>,
    pub scores: Array2<f64>,
}

/// Per-class localization map at image resolution, `(H, W, C)`,
/// normalized per class to max 1 (or identically zero).
#[derive(Debug, Clone)]
pub struct Seed {
    pub values: Array3<f64>,
    pub id: String,
}

/// Discretized pseudo mask: background / class / unknown.
#[derive(Debug, Clone)]
pub struct TriMap {
    pub labels: Array2<u8>,
}
