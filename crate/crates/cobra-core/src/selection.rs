//! Positive/negative/neutral patch selection for the cross-branch
//! contrastive losses.
//!
//! Selection is purely rank-based, so it is invariant to any strictly
//! increasing transform of the scores, and it is always computed on
//! gradient-free signals (pseudo labels from the conv branch, affinity from
//! the attention branch): the selecting branch never receives gradient from
//! the loss its signal drives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::normalize_2d;
use crate::types::{class_to_label, CamStack, PatchAffinity, PseudoLabelGrid};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub k_sap_pos: usize,
    pub k_sap_neg: usize,
    pub k_cap_pos: usize,
    pub k_cap_neg: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { k_sap_pos: 20, k_sap_neg: 5, k_cap_pos: 5, k_cap_neg: 20 }
    }
}

impl SelectionConfig {
    pub fn validate(&self, num_patches: usize) -> Result<()> {
        if self.k_sap_pos < 1 || self.k_sap_neg < 1 || self.k_cap_pos < 1 || self.k_cap_neg < 1 {
            return Err(Error::Config("selection k values must be >= 1".into()));
        }
        if self.k_sap_pos + self.k_sap_neg > num_patches {
            return Err(Error::Config(format!(
                "k_sap_pos + k_sap_neg = {} exceeds patch count {num_patches}",
                self.k_sap_pos + self.k_sap_neg
            )));
        }
        if self.k_cap_pos + self.k_cap_neg > num_patches {
            return Err(Error::Config(format!(
                "k_cap_pos + k_cap_neg = {} exceeds patch count {num_patches}",
                self.k_cap_pos + self.k_cap_neg
            )));
        }
        Ok(())
    }
}

/// Per-target contrastive sets. `positives[t]` / `negatives[t]` belong to
/// `targets[t]`; remaining patches are neutral.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SelectionSets {
    pub targets: Vec<usize>,
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
}

impl SelectionSets {
    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Indices sorted by score descending; ties go to the lower index.
fn ranked_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Indices sorted by score ascending; ties go to the lower index.
fn ranked_asc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx
}

/// Selection for the conv-branch projection loss: targets are the most
/// confident pseudo-positive patches of `cls`, and each target's positives /
/// negatives are the semantically closest / farthest patches by its affinity
/// row (self excluded).
pub fn select_for_cap(
    affinity: &PatchAffinity,
    pseudo: &PseudoLabelGrid,
    cls: usize,
    cfg: &SelectionConfig,
) -> Result<SelectionSets> {
    let p = affinity.values.nrows();
    cfg.validate(p)?;
    if pseudo.labels.len() != p {
        return Err(Error::shape("select_for_cap grid", p, pseudo.labels.len()));
    }

    let wanted = class_to_label(cls);
    let mut candidates: Vec<(usize, f64)> = pseudo
        .labels
        .iter()
        .zip(pseudo.scores.iter())
        .enumerate()
        .filter(|(_, (&l, _))| l == wanted)
        .map(|(i, (_, &s))| (i, s))
        .collect();
    if candidates.is_empty() {
        return Ok(SelectionSets::default());
    }
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let targets: Vec<usize> = candidates.iter().take(cfg.k_sap_pos).map(|&(i, _)| i).collect();

    let mut positives = Vec::with_capacity(targets.len());
    let mut negatives = Vec::with_capacity(targets.len());
    for &t in &targets {
        let row: Vec<f64> = affinity.values.row(t).to_vec();
        let pos: Vec<usize> = ranked_desc(&row)
            .into_iter()
            .filter(|&j| j != t)
            .take(cfg.k_cap_pos)
            .collect();
        let neg: Vec<usize> = ranked_asc(&row)
            .into_iter()
            .filter(|&j| j != t && !pos.contains(&j))
            .take(cfg.k_cap_neg)
            .collect();
        positives.push(pos);
        negatives.push(neg);
    }
    Ok(SelectionSets { targets, positives, negatives })
}

/// Selection for the attention-branch projection loss: rank patches by the
/// normalized conv CAM score of `cls`; the top block is both the target set
/// and (minus self) each target's positives, the bottom block the negatives.
pub fn select_for_sap(
    m_cnn: &CamStack,
    positives_cls: &[usize],
    cls: usize,
    cfg: &SelectionConfig,
) -> Result<SelectionSets> {
    let (n, _, c) = m_cnn.values.dim();
    let p = n * n;
    cfg.validate(p)?;
    if !positives_cls.contains(&cls) {
        return Err(Error::Config(format!("class {cls} is not image-positive")));
    }
    if cls >= c {
        return Err(Error::Config(format!("class {cls} out of range (C={c})")));
    }

    let map = m_cnn.values.index_axis(ndarray::Axis(2), cls).to_owned();
    let scores: Vec<f64> = normalize_2d(&map).into_iter().collect();

    let order = ranked_desc(&scores);
    let top: Vec<usize> = order[..cfg.k_sap_pos.min(p)].to_vec();
    let bottom: Vec<usize> = ranked_asc(&scores)
        .into_iter()
        .filter(|j| !top.contains(j))
        .take(cfg.k_sap_neg)
        .collect();

    let targets = top.clone();
    let positives: Vec<Vec<usize>> = targets
        .iter()
        .map(|&t| top.iter().copied().filter(|&j| j != t).collect())
        .collect();
    let negatives: Vec<Vec<usize>> = targets.iter().map(|_| bottom.clone()).collect();
    Ok(SelectionSets { targets, positives, negatives })
}
