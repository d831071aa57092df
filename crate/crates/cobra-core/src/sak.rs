//! Semantic-aware branch head: ViT CAMs, semantic-aware projection, patch
//! affinity, and the class-token object attention.

use ndarray::{s, Array2, Array3};

use crate::error::{Error, Result};
use crate::imageops::normalize_2d;
use crate::nn::{ops, GradBuffer, Initializer, Linear, ParamStore};
use crate::types::{AttentionStack, CamSource, CamStack, ObjAttention, PatchAffinity, PatchTokens, ProjKind, ProjectionSet};

#[derive(Debug, Clone)]
pub struct SakHead {
    pub cam: Linear,
    pub proj: Linear,
}

pub struct SapCache {
    patch_rows: Array2<f64>,
    unit: Array2<f64>,
    norms: Vec<f64>,
}

impl SakHead {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        token_dim: usize,
        num_classes: usize,
        proj_dim: usize,
        init: &mut Initializer,
    ) -> Self {
        Self {
            cam: Linear::new(store, &format!("{prefix}.cam"), token_dim, num_classes, true, 0.01, init),
            proj: Linear::new(store, &format!("{prefix}.proj"), token_dim, proj_dim, true, 0.02, init),
        }
    }

    /// Per-patch classifier over the final tokens; the class token is dropped.
    pub fn vit_cam_head(&self, store: &ParamStore, t: &PatchTokens) -> Result<CamStack> {
        let p = t.num_patches();
        let n = (p as f64).sqrt() as usize;
        if n * n != p {
            return Err(Error::shape("vit_cam_head patch count", "a square grid", p));
        }
        let rows = t.patch_rows().to_owned();
        let out = self.cam.forward(store, &rows);
        Ok(CamStack {
            values: out.into_shape_with_order((n, n, self.cam.out_dim)).unwrap(),
            source: CamSource::Vit,
        })
    }

    /// dL/d(tokens); row 0 stays zero because the class token is unused here.
    pub fn vit_cam_head_backward(
        &self,
        store: &ParamStore,
        t: &PatchTokens,
        dcam: &Array3<f64>,
        gbuf: &mut GradBuffer,
    ) -> Array2<f64> {
        let p = t.num_patches();
        let rows = t.patch_rows().to_owned();
        let dy = dcam.view().into_shape_with_order((p, self.cam.out_dim)).unwrap().to_owned();
        let drows = self.cam.backward(store, &rows, &dy, gbuf);
        let mut dtokens = Array2::<f64>::zeros((p + 1, self.cam.in_dim));
        dtokens.slice_mut(s![1.., ..]).assign(&drows);
        dtokens
    }

    /// Projection of each patch token, L2-normalized per row.
    pub fn sap_project(&self, store: &ParamStore, t: &PatchTokens) -> (ProjectionSet, SapCache) {
        let patch_rows = t.patch_rows().to_owned();
        let raw = self.proj.forward(store, &patch_rows);
        let (unit, norms) = ops::normalize_rows(&raw);
        (
            ProjectionSet { vectors: unit.clone(), kind: ProjKind::Sap },
            SapCache { patch_rows, unit, norms },
        )
    }

    pub fn sap_project_backward(
        &self,
        store: &ParamStore,
        cache: &SapCache,
        dproj: &Array2<f64>,
        gbuf: &mut GradBuffer,
    ) -> Array2<f64> {
        let draw = ops::normalize_rows_backward(&cache.unit, &cache.norms, dproj);
        let drows = self.proj.backward(store, &cache.patch_rows, &draw, gbuf);
        let mut dtokens = Array2::<f64>::zeros((drows.nrows() + 1, self.proj.in_dim));
        dtokens.slice_mut(s![1.., ..]).assign(&drows);
        dtokens
    }
}

/// Mean over layers of the patch-to-patch attention submatrix `A[1.., 1..]`.
pub fn patch_affinity(a: &AttentionStack) -> Result<PatchAffinity> {
    if a.layers.is_empty() {
        return Err(Error::Config("patch_affinity requires at least one attention layer".into()));
    }
    let p = a.num_patches();
    let mut acc = Array2::<f64>::zeros((p, p));
    for layer in &a.layers {
        acc += &layer.slice(s![1.., 1..]);
    }
    acc /= a.layers.len() as f64;
    Ok(PatchAffinity { values: acc })
}

/// Class-token row (columns 1..) averaged over layers, reshaped onto the
/// patch grid, then min-max normalized. A constant row maps to zeros.
pub fn object_attention(a: &AttentionStack) -> Result<ObjAttention> {
    if a.layers.is_empty() {
        return Err(Error::Config("object_attention requires at least one attention layer".into()));
    }
    let p = a.num_patches();
    let n = (p as f64).sqrt() as usize;
    if n * n != p {
        return Err(Error::shape("object_attention patch count", "a square grid", p));
    }
    let mut row = ndarray::Array1::<f64>::zeros(p);
    for layer in &a.layers {
        row += &layer.slice(s![0, 1..]);
    }
    row /= a.layers.len() as f64;
    let grid = row.into_shape_with_order((n, n)).unwrap();
    Ok(ObjAttention { values: normalize_2d(&grid) })
}

/// `out[y, x, c] = m_tran[y, x, c] * a_obj[y, x]`.
pub fn vit_localization(m_tran: &CamStack, a_obj: &ObjAttention) -> Result<CamStack> {
    let (n, nx, c) = m_tran.values.dim();
    if a_obj.values.dim() != (n, nx) {
        return Err(Error::shape(
            "vit_localization grids",
            format!("{n}x{nx}"),
            format!("{}x{}", a_obj.values.dim().0, a_obj.values.dim().1),
        ));
    }
    let mut out = m_tran.values.clone();
    for ch in 0..c {
        let mut plane = out.index_axis_mut(ndarray::Axis(2), ch);
        plane.zip_mut_with(&a_obj.values, |v, &w| *v *= w);
    }
    Ok(CamStack { values: out, source: m_tran.source })
}
