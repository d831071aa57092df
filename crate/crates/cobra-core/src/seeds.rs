//! Seed generation (CAM fusion, multi-scale aggregation) and mask generation
//! (trimap thresholds from the object attention, palette export, CRF hook).

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::process::Command;

use crate::container::TensorContainer;
use crate::error::{Error, Result};
use crate::imageops::{bilinear_resize, bilinear_resize_2d, normalize_per_channel};
use crate::pngio;
use crate::types::{class_to_label, CamSource, CamStack, ObjAttention, Seed, TriMap, UNKNOWN_LABEL};

/// Environment variable holding the external CRF refinement command.
pub const CRF_CMD_ENV: &str = "COBRA_CRF_CMD";

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    /// Weight on the mean object attention when deriving the background
    /// threshold.
    pub bg_weight: f64,
    /// Gap between background and foreground thresholds.
    pub fg_bg_gap: f64,
    /// Clipping range for the background threshold.
    pub bg_clip: (f64, f64),
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self { bg_weight: 0.3, fg_bg_gap: 0.5, bg_clip: (0.05, 0.45) }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bg_clip;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::Config(format!("bg_clip range ({lo}, {hi}) is invalid")));
        }
        if self.fg_bg_gap < 0.0 || hi + self.fg_bg_gap > 1.0 {
            return Err(Error::Config(format!(
                "bg threshold {hi} + gap {} must stay <= 1",
                self.fg_bg_gap
            )));
        }
        Ok(())
    }
}

/// `max((m_cnn + m_tran) / 2, m_tran)` elementwise.
///
/// Callers normalize both stacks per class to [0, 1] first (see
/// [`crate::imageops::normalize_per_channel`]); fusion itself is pure
/// arithmetic so the closed-form cell examples hold exactly.
pub fn fuse_cams(m_cnn: &CamStack, m_tran: &CamStack) -> Result<CamStack> {
    if m_cnn.values.dim() != m_tran.values.dim() {
        return Err(Error::shape(
            "fuse_cams stacks",
            format!("{:?}", m_cnn.values.dim()),
            format!("{:?}", m_tran.values.dim()),
        ));
    }
    let mut out = Array3::zeros(m_cnn.values.raw_dim());
    ndarray::Zip::from(&mut out)
        .and(&m_cnn.values)
        .and(&m_tran.values)
        .for_each(|o, &a, &b| *o = ((a + b) / 2.0).max(b));
    Ok(CamStack { values: out, source: CamSource::Fused })
}

/// Nearest valid square size for a scaled image (multiple of `patch`, at
/// least one patch).
pub fn scaled_size(base: usize, scale: f64, patch: usize) -> usize {
    let target = (base as f64 * scale / patch as f64).round().max(1.0) as usize;
    target * patch
}

/// Multi-scale seed: run `fused_cam_at` on each rescaled copy of the image,
/// upsample each fused grid back to image resolution, sum, and normalize per
/// class.
///
/// `fused_cam_at` receives the rescaled image and returns the fused CAM on
/// its patch grid (the attention-modulated branch map folded in).
pub fn multiscale_seed<F>(
    image: &Array3<f64>,
    scales: &[f64],
    patch: usize,
    id: &str,
    mut fused_cam_at: F,
) -> Result<Seed>
where
    F: FnMut(&Array3<f64>) -> Result<Array3<f64>>,
{
    let (h, w, _) = image.dim();
    if scales.is_empty() {
        return Err(Error::Config("multiscale_seed needs at least one scale".into()));
    }
    let mut acc: Option<Array3<f64>> = None;
    for &s in scales {
        if s <= 0.0 {
            return Err(Error::Config(format!("scale must be positive, got {s}")));
        }
        let side = scaled_size(h, s, patch);
        let scaled = if side == h { image.clone() } else { bilinear_resize(image, side, side) };
        let fused = fused_cam_at(&scaled)?;
        let up = bilinear_resize(&fused, h, w);
        match &mut acc {
            Some(a) => *a += &up,
            None => acc = Some(up),
        }
    }
    let summed = acc.expect("at least one scale");
    Ok(Seed { values: normalize_per_channel(&summed), id: id.to_string() })
}

/// Discretize a seed into {background, unknown, class} pixels.
///
/// The background threshold comes from the object attention: upsample the
/// normalized attention to image resolution, take its mean, weight and clip
/// it; foreground sits `fg_bg_gap` above.
pub fn make_trimap(
    seed: &Seed,
    a_obj: &ObjAttention,
    positives: &[usize],
    cfg: &ThresholdConfig,
) -> Result<TriMap> {
    cfg.validate()?;
    if positives.is_empty() {
        return Err(Error::Config("make_trimap requires at least one positive class".into()));
    }
    let (h, w, c) = seed.values.dim();
    if let Some(&bad) = positives.iter().find(|&&p| p >= c) {
        return Err(Error::Config(format!("positive class {bad} out of range (C={c})")));
    }

    let attn_up = bilinear_resize_2d(&a_obj.values, h, w);
    let theta_bg = (cfg.bg_weight * attn_up.mean().unwrap_or(0.0)).clamp(cfg.bg_clip.0, cfg.bg_clip.1);
    let theta_fg = theta_bg + cfg.fg_bg_gap;

    let mut labels = Array2::<u8>::zeros((h, w));
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
            labels[[y, x]] = if best >= theta_fg {
                class_to_label(best_cls)
            } else if best < theta_bg {
                0
            } else {
                UNKNOWN_LABEL
            };
        }
    }
    Ok(TriMap { labels })
}

/// Thresholds used by [`make_trimap`] for a given attention map, exposed for
/// reporting.
pub fn trimap_thresholds(a_obj: &ObjAttention, h: usize, w: usize, cfg: &ThresholdConfig) -> (f64, f64) {
    let attn_up = bilinear_resize_2d(&a_obj.values, h, w);
    let theta_bg = (cfg.bg_weight * attn_up.mean().unwrap_or(0.0)).clamp(cfg.bg_clip.0, cfg.bg_clip.1);
    (theta_bg, theta_bg + cfg.fg_bg_gap)
}

/// Write a trimap as a palette PNG (index 0 background, 255 unknown).
pub fn export_mask(t: &TriMap, path: impl AsRef<Path>) -> Result<()> {
    pngio::write_indexed(path, &t.labels)
}

/// Read a palette mask back as a trimap.
pub fn import_mask(path: impl AsRef<Path>) -> Result<TriMap> {
    Ok(TriMap { labels: pngio::read_indexed(path)? })
}

/// Optional external CRF refinement over a seed.
///
/// The command (from [`CRF_CMD_ENV`] or given explicitly) is invoked as
/// `cmd <image.png> <seed_in.bin> <seed_out.bin>`, where the seed files are
/// tensor containers holding one `(H, W, C)` tensor named "seed". When no
/// command is configured the hook passes the seed through unchanged.
#[derive(Debug, Clone, Default)]
pub struct CrfHook {
    cmd: Option<Vec<String>>,
}

impl CrfHook {
    pub fn from_env() -> Self {
        Self::new(std::env::var(CRF_CMD_ENV).ok())
    }

    pub fn new(cmd: Option<String>) -> Self {
        let cmd = cmd.and_then(|c| {
            let parts: Vec<String> = c.split_whitespace().map(str::to_string).collect();
            (!parts.is_empty()).then_some(parts)
        });
        Self { cmd }
    }

    pub fn is_configured(&self) -> bool {
        self.cmd.is_some()
    }

    pub fn apply(&self, seed: &Seed, image: &Array3<f64>) -> Result<Seed> {
        let Some(cmd) = &self.cmd else {
            return Ok(seed.clone());
        };
        let dir = tempfile::tempdir()?;
        let img_path = dir.path().join("image.png");
        let in_path = dir.path().join("seed_in.bin");
        let out_path = dir.path().join("seed_out.bin");
        pngio::write_rgb(&img_path, image)?;
        let mut c = TensorContainer::new();
        c.insert("seed", seed.values.clone().into_dyn());
        c.save(&in_path)?;

        let status = Command::new(&cmd[0])
            .args(&cmd[1..])
            .arg(&img_path)
            .arg(&in_path)
            .arg(&out_path)
            .status()
            .map_err(|e| Error::External(format!("failed to spawn `{}`: {e}", cmd[0])))?;
        if !status.success() {
            return Err(Error::External(format!("`{}` exited with {status}", cmd[0])));
        }
        let back = TensorContainer::load(&out_path)?;
        let tensor = back
            .get("seed")
            .ok_or_else(|| Error::External("refined container has no `seed` tensor".into()))?;
        let values = tensor
            .clone()
            .into_dimensionality::<ndarray::Ix3>()
            .map_err(|_| Error::External("refined seed is not rank 3".into()))?;
        if values.dim() != seed.values.dim() {
            return Err(Error::External(format!(
                "refined seed shape {:?} != input {:?}",
                values.dim(),
                seed.values.dim()
            )));
        }
        Ok(Seed { values, id: seed.id.clone() })
    }
}

/// Export a seed (and optionally companion tensors) to a container file.
pub fn export_seed(seed: &Seed, path: impl AsRef<Path>) -> Result<()> {
    let mut c = TensorContainer::new();
    c.insert("seed", seed.values.clone().into_dyn());
    c.save(path)
}

pub fn import_seed(path: impl AsRef<Path>, id: &str) -> Result<Seed> {
    let c = TensorContainer::load(path)?;
    let tensor = c
        .get("seed")
        .ok_or_else(|| Error::Checkpoint { name: "seed".into(), reason: "missing tensor".into() })?;
    let values = tensor
        .clone()
        .into_dimensionality::<ndarray::Ix3>()
        .map_err(|_| Error::Checkpoint { name: "seed".into(), reason: "not rank 3".into() })?;
    Ok(Seed { values, id: id.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stack(values: Array3<f64>, source: CamSource) -> CamStack {
        CamStack { values, source }
    }

    #[test]
    fn fuse_cell_formula_cases() {
        let a = stack(Array3::from_elem((1, 1, 1), 0.2), CamSource::Cnn);
        let b = stack(Array3::from_elem((1, 1, 1), 0.6), CamSource::Vit);
        assert_abs_diff_eq!(fuse_cams(&a, &b).unwrap().values[[0, 0, 0]], 0.6, epsilon = 1e-12);

        let a = stack(Array3::from_elem((1, 1, 1), 1.0), CamSource::Cnn);
        let b = stack(Array3::from_elem((1, 1, 1), 0.0), CamSource::Vit);
        assert_abs_diff_eq!(fuse_cams(&a, &b).unwrap().values[[0, 0, 0]], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn fuse_identity_when_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v: Array3<f64> = Array3::from_shape_fn((3, 3, 2), |_| rng.gen_range(0.0..1.0));
        let a = stack(v.clone(), CamSource::Cnn);
        let b = stack(v.clone(), CamSource::Vit);
        let f = fuse_cams(&a, &b).unwrap();
        assert_eq!(f.values, v);
        assert_eq!(f.source, CamSource::Fused);
    }

    proptest! {
        // max definition: output dominates m_tran and the average, and fusion
        // is monotone in both inputs
        #[test]
        fn fuse_dominates_and_is_monotone(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Array3<f64> = Array3::from_shape_fn((4, 4, 2), |_| rng.gen_range(0.0..1.0));
            let b: Array3<f64> = Array3::from_shape_fn((4, 4, 2), |_| rng.gen_range(0.0..1.0));
            let f = fuse_cams(&stack(a.clone(), CamSource::Cnn), &stack(b.clone(), CamSource::Vit)).unwrap();
            for ((fv, av), bv) in f.values.iter().zip(a.iter()).zip(b.iter()) {
                prop_assert!(*fv >= *bv);
                prop_assert!(*fv >= (av + bv) / 2.0);
            }
            // monotonicity: bump one input upward
            let mut a2 = a.clone();
            a2[[1, 2, 0]] += 0.5;
            let f2 = fuse_cams(&stack(a2, CamSource::Cnn), &stack(b, CamSource::Vit)).unwrap();
            for (x2, x1) in f2.values.iter().zip(f.values.iter()) {
                prop_assert!(x2 >= x1);
            }
        }
    }

    #[test]
    fn multiscale_singleton_equals_normalized_single_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img: Array3<f64> = Array3::from_shape_fn((16, 16, 3), |_| rng.gen_range(0.0..1.0));
        // a fixed synthetic "fused CAM": downsample of the red channel
        let fused = |im: &Array3<f64>| -> Result<Array3<f64>> {
            let n = im.dim().0 / 8;
            let mut out = Array3::<f64>::zeros((n, n, 1));
            for y in 0..n {
                for x in 0..n {
                    out[[y, x, 0]] = im[[y * 8, x * 8, 0]];
                }
            }
            Ok(out)
        };
        let seed = multiscale_seed(&img, &[1.0], 8, "s", fused).unwrap();
        let direct = normalize_per_channel(&bilinear_resize(&fused(&img).unwrap(), 16, 16));
        for (a, b) in seed.values.iter().zip(direct.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn multiscale_duplicate_scales_do_not_change_normalized_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img: Array3<f64> = Array3::from_shape_fn((16, 16, 3), |_| rng.gen_range(0.0..1.0));
        let fused = |im: &Array3<f64>| -> Result<Array3<f64>> {
            let n = im.dim().0 / 8;
            Ok(Array3::from_shape_fn((n, n, 2), |(y, x, c)| {
                im[[y * 8, x * 8, c.min(2)]] + 0.1 * c as f64
            }))
        };
        let once = multiscale_seed(&img, &[1.0], 8, "s", fused).unwrap();
        let twice = multiscale_seed(&img, &[1.0, 1.0], 8, "s", fused).unwrap();
        for (a, b) in once.values.iter().zip(twice.values.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn multiscale_two_scales_match_hand_composed_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img: Array3<f64> = Array3::from_shape_fn((16, 16, 3), |_| rng.gen_range(0.0..1.0));
        let fused = |im: &Array3<f64>| -> Result<Array3<f64>> {
            let n = im.dim().0 / 8;
            let mut out = Array3::<f64>::zeros((n, n, 1));
            for y in 0..n {
                for x in 0..n {
                    out[[y, x, 0]] = im[[y * 8 + 1, x * 8 + 1, 1]];
                }
            }
            Ok(out)
        };
        let seed = multiscale_seed(&img, &[0.5, 1.0], 8, "s", fused).unwrap();

        // hand-composed: upsample each scale's fused map to 16x16, sum, normalize
        let half = bilinear_resize(&img, 8, 8);
        let sum = bilinear_resize(&fused(&half).unwrap(), 16, 16)
            + bilinear_resize(&fused(&img).unwrap(), 16, 16);
        let oracle = normalize_per_channel(&sum);
        for (a, b) in seed.values.iter().zip(oracle.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn scaled_sizes_snap_to_patch_multiples() {
        assert_eq!(scaled_size(64, 1.0, 8), 64);
        assert_eq!(scaled_size(64, 0.5, 8), 32);
        assert_eq!(scaled_size(64, 0.75, 8), 48);
        assert_eq!(scaled_size(64, 1.75, 8), 112);
        assert_eq!(scaled_size(64, 0.01, 8), 8); // never below one patch
    }

    fn uniform_obj(v: f64) -> ObjAttention {
        ObjAttention { values: Array2::from_elem((4, 4), v) }
    }

    #[test]
    fn trimap_band_assignment() {
        // theta_bg = clip(0.3 * 1.0) = 0.3, theta_fg = 0.8
        let cfg = ThresholdConfig::default();
        let mut values = Array3::<f64>::zeros((2, 2, 2));
        values[[0, 0, 1]] = 0.9; // foreground class 1
        values[[0, 1, 1]] = 0.1; // background
        values[[1, 0, 1]] = 0.5; // unknown band
        let seed = Seed { values, id: "t".into() };
        let t = make_trimap(&seed, &uniform_obj(1.0), &[1], &cfg).unwrap();
        assert_eq!(t.labels[[0, 0]], class_to_label(1));
        assert_eq!(t.labels[[0, 1]], 0);
        assert_eq!(t.labels[[1, 0]], UNKNOWN_LABEL);
    }

    #[test]
    fn trimap_threshold_clipping() {
        let cfg = ThresholdConfig::default();
        // mean attention 0 -> clipped up to 0.05; mean 10 -> clipped down to 0.45
        let (lo, _) = trimap_thresholds(&uniform_obj(0.0), 8, 8, &cfg);
        assert_abs_diff_eq!(lo, 0.05, epsilon = 1e-12);
        let (hi, fg) = trimap_thresholds(&uniform_obj(10.0), 8, 8, &cfg);
        assert_abs_diff_eq!(hi, 0.45, epsilon = 1e-12);
        assert_abs_diff_eq!(fg, 0.95, epsilon = 1e-12);
    }

    #[test]
    fn trimap_gap_growth_never_turns_background_into_foreground() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let values: Array3<f64> = Array3::from_shape_fn((6, 6, 2), |_| rng.gen_range(0.0..1.0));
        let seed = Seed { values, id: "t".into() };
        let narrow = ThresholdConfig { fg_bg_gap: 0.2, ..Default::default() };
        let wide = ThresholdConfig { fg_bg_gap: 0.5, ..Default::default() };
        let a = make_trimap(&seed, &uniform_obj(0.8), &[0, 1], &narrow).unwrap();
        let b = make_trimap(&seed, &uniform_obj(0.8), &[0, 1], &wide).unwrap();
        for (x, y) in a.labels.iter().zip(b.labels.iter()) {
            if *x == 0 {
                assert!(*y == 0 || *y == UNKNOWN_LABEL);
            }
        }
    }

    #[test]
    fn trimap_classes_stay_inside_positives() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let values: Array3<f64> = Array3::from_shape_fn((5, 5, 3), |_| rng.gen_range(0.0..1.0));
        let seed = Seed { values, id: "t".into() };
        let t = make_trimap(&seed, &uniform_obj(0.5), &[2], &ThresholdConfig::default()).unwrap();
        for &l in t.labels.iter() {
            assert!(l == 0 || l == UNKNOWN_LABEL || l == class_to_label(2));
        }
    }

    #[test]
    fn mask_export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mut labels = Array2::<u8>::zeros((3, 3));
        labels[[0, 0]] = 1;
        labels[[2, 2]] = 2;
        labels[[1, 1]] = UNKNOWN_LABEL;
        let t = TriMap { labels: labels.clone() };
        export_mask(&t, &path).unwrap();
        assert_eq!(import_mask(&path).unwrap().labels, labels);
    }

    #[test]
    fn unconfigured_crf_hook_is_identity() {
        let seed = Seed { values: Array3::from_elem((4, 4, 2), 0.25), id: "x".into() };
        let img = Array3::from_elem((4, 4, 3), 0.5);
        let hook = CrfHook::new(None);
        let out = hook.apply(&seed, &img).unwrap();
        assert_eq!(out.values, seed.values);
        assert_eq!(out.id, seed.id);
    }

    #[test]
    fn configured_crf_hook_runs_external_command() {
        // a tiny script that copies the input seed container to the output
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("fakecrf.sh");
        std::fs::write(&script, "#!/bin/sh\ncp \"$2\" \"$3\"\n").unwrap();
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();

        let seed = Seed {
            values: Array3::from_shape_fn((4, 4, 2), |(y, x, c)| (y + x + c) as f64 / 10.0),
            id: "y".into(),
        };
        let img = Array3::from_elem((4, 4, 3), 0.5);
        let hook = CrfHook::new(Some(script.to_string_lossy().into_owned()));
        assert!(hook.is_configured());
        let out = hook.apply(&seed, &img).unwrap();
        assert_eq!(out.values, seed.values);

        // failing command surfaces as an error
        let bad = CrfHook::new(Some("/bin/false".into()));
        assert!(bad.apply(&seed, &img).is_err());
    }

    #[test]
    fn seed_container_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seed.bin");
        let seed = Seed {
            values: Array3::from_shape_fn((3, 3, 2), |(y, x, c)| (y * 7 + x * 3 + c) as f64),
            id: "img7".into(),
        };
        export_seed(&seed, &path).unwrap();
        let back = import_seed(&path, "img7").unwrap();
        assert_eq!(back.values, seed.values);
    }

    #[test]
    fn threshold_config_validation() {
        assert!(ThresholdConfig::default().validate().is_ok());
        let bad = ThresholdConfig { fg_bg_gap: 0.6, ..Default::default() };
        assert!(bad.validate().is_err()); // 0.45 + 0.6 > 1
    }
}
