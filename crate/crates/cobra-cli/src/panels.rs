//! Report rendering: one horizontal comparison strip per image
//! (image | conv CAM | attention CAM | fused seed | trimap | GT)
//! plus the per-class mIoU table when ground truth is available.

use anyhow::{bail, Context};
use ndarray::{Array2, Array3, Axis};
use std::path::Path;

use cobra_core::container::TensorContainer;
use cobra_core::eval::{accumulate, format_kv, format_table, miou, ConfusionMatrix};
use cobra_core::pngio;

const GAP: usize = 2;

/// Simple "hot" colormap for activation maps.
fn heat(v: f64) -> [f64; 3] {
    let t = v.clamp(0.0, 1.0);
    [(3.0 * t).min(1.0), (3.0 * t - 1.0).clamp(0.0, 1.0), (3.0 * t - 2.0).clamp(0.0, 1.0)]
}

/// Max over classes of an (H, W, C) stack, painted with the heat map.
fn cam_panel(stack: &Array3<f64>) -> Array3<f64> {
    let (h, w, _) = stack.dim();
    let mut out = Array3::<f64>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let v = stack
                .index_axis(Axis(0), y)
                .index_axis(Axis(0), x)
                .iter()
                .fold(0.0f64, |m, &a| m.max(a));
            let c = heat(v);
            for ch in 0..3 {
                out[[y, x, ch]] = c[ch];
            }
        }
    }
    out
}

/// Palette rendering of a label map.
fn label_panel(labels: &Array2<u8>) -> Array3<f64> {
    let pal = pngio::voc_palette();
    let (h, w) = labels.dim();
    let mut out = Array3::<f64>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let c = pal[labels[[y, x]] as usize];
            for ch in 0..3 {
                out[[y, x, ch]] = c[ch] as f64 / 255.0;
            }
        }
    }
    out
}

fn hstack(panels: &[Array3<f64>]) -> Array3<f64> {
    let h = panels[0].dim().0;
    let total_w: usize = panels.iter().map(|p| p.dim().1).sum::<usize>() + GAP * (panels.len() - 1);
    let mut out = Array3::<f64>::ones((h, total_w, 3));
    let mut x0 = 0;
    for p in panels {
        let w = p.dim().1;
        out.slice_mut(ndarray::s![.., x0..x0 + w, ..]).assign(p);
        x0 += w + GAP;
    }
    out
}

/// Render panels (and the mIoU table when ground truth exists) for a run
/// directory holding `seeds/` and optionally `masks/`. Returns the panel
/// count.
pub fn render_report(run: &Path, data: &Path, num_classes: usize, out: &Path) -> anyhow::Result<usize> {
    let seeds_dir = run.join("seeds");
    if !seeds_dir.is_dir() {
        bail!("{} has no seeds/ directory", run.display());
    }
    std::fs::create_dir_all(out)?;

    let mut ids: Vec<String> = std::fs::read_dir(&seeds_dir)?
        .filter_map(|e| {
            let p = e.ok()?.path();
            (p.extension()? == "bin").then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    ids.sort();
    if ids.is_empty() {
        bail!("no seed files in {}", seeds_dir.display());
    }

    let mut cm = ConfusionMatrix::new(num_classes);
    let mut evaluated = 0usize;
    let mut count = 0usize;
    for id in &ids {
        let container = TensorContainer::load(seeds_dir.join(format!("{id}.bin")))?;
        let get3 = |name: &str| -> anyhow::Result<Array3<f64>> {
            Ok(container
                .get(name)
                .with_context(|| format!("{id}.bin has no `{name}` tensor"))?
                .clone()
                .into_dimensionality::<ndarray::Ix3>()?)
        };
        let seed = get3("seed")?;
        let m_cnn = get3("m_cnn")?;
        let m_tran = get3("m_tran")?;

        let image = pngio::read_rgb(data.join("images").join(format!("{id}.png")))
            .with_context(|| format!("image for {id}"))?;

        let mut panels = vec![image, cam_panel(&m_cnn), cam_panel(&m_tran), cam_panel(&seed)];

        let trimap_path = run.join("masks").join(format!("{id}.png"));
        let trimap = trimap_path.is_file().then(|| pngio::read_indexed(&trimap_path)).transpose()?;
        if let Some(t) = &trimap {
            panels.push(label_panel(t));
        }

        let gt_path = data.join("masks").join(format!("{id}.png"));
        if gt_path.is_file() {
            let gt = pngio::read_indexed(&gt_path)?;
            panels.push(label_panel(&gt));
            if let Some(t) = &trimap {
                accumulate(&mut cm, &gt, t)?;
                evaluated += 1;
            }
        }

        pngio::write_rgb(out.join(format!("{id}.png")), &hstack(&panels))?;
        count += 1;
    }

    // table only when ground truth was present (and masks were evaluated)
    if evaluated > 0 {
        let (ious, mean) = miou(&cm);
        std::fs::write(out.join("miou.txt"), format_table(&ious, mean, None))?;
        std::fs::write(out.join("miou.kv"), format_kv(&ious, mean))?;
    }
    Ok(count)
}
