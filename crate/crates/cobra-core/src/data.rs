//! Synthetic shapes dataset and VOC-style directory ingestion.
//!
//! Every class owns a fixed shape family and color family (class k gets the
//! k-th of each), so image-level labels are learnable while localization
//! remains non-trivial: backgrounds carry a random color gradient plus
//! low-amplitude noise.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::pngio;
use crate::types::class_to_label;

/// One image with image-level labels and (for evaluation only) an optional
/// ground-truth mask.
#[derive(Debug, Clone)]
pub struct Sample {
    /// `(H, W, 3)` floats in [0, 1].
    pub image: Array3<f64>,
    /// Multi-hot class labels, length C.
    pub labels: Vec<u8>,
    /// Mask values: 0 background, `c + 1` for class c.
    pub gt_mask: Option<Array2<u8>>,
    pub id: String,
}

impl Sample {
    pub fn positives(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != 0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn labels_f64(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| l as f64).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub image_size: usize,
    pub samples: usize,
    pub shapes_min: usize,
    pub shapes_max: usize,
    pub rng_seed: u64,
    /// Patch size of the attention branch; image_size must divide by it.
    pub patch_size: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            image_size: 64,
            samples: 100,
            shapes_min: 1,
            shapes_max: 3,
            rng_seed: 0,
            patch_size: 8,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image_size {} must be divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.shapes_min < 1 || self.shapes_min > self.shapes_max {
            return Err(Error::Config(format!(
                "shapes range {}..={} is invalid",
                self.shapes_min, self.shapes_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ShapeKind {
    Circle,
    Square,
    Triangle,
    Diamond,
    Pentagon,
    Ring,
    Cross,
    Hexagon,
}

const SHAPE_FAMILIES: [ShapeKind; 8] = [
    ShapeKind::Circle,
    ShapeKind::Square,
    ShapeKind::Triangle,
    ShapeKind::Diamond,
    ShapeKind::Pentagon,
    ShapeKind::Ring,
    ShapeKind::Cross,
    ShapeKind::Hexagon,
];

struct ShapeInstance {
    kind: ShapeKind,
    class: usize,
    cx: f64,
    cy: f64,
    radius: f64,
    angle: f64,
    color: [f64; 3],
}

impl ShapeInstance {
    /// Point membership in local (rotated, centered) coordinates.
    fn contains(&self, px: f64, py: f64) -> bool {
        let dx = px - self.cx;
        let dy = py - self.cy;
        let (sin, cos) = self.angle.sin_cos();
        let x = dx * cos + dy * sin;
        let y = -dx * sin + dy * cos;
        let r = self.radius;
        match self.kind {
            ShapeKind::Circle => x * x + y * y <= r * r,
            ShapeKind::Square => {
                let h = r / std::f64::consts::SQRT_2;
                x.abs() <= h && y.abs() <= h
            }
            ShapeKind::Triangle => point_in_regular_polygon(x, y, r, 3),
            ShapeKind::Diamond => x.abs() + y.abs() <= r,
            ShapeKind::Pentagon => point_in_regular_polygon(x, y, r, 5),
            ShapeKind::Ring => {
                let d2 = x * x + y * y;
                d2 <= r * r && d2 >= (0.45 * r) * (0.45 * r)
            }
            ShapeKind::Cross => {
                let bar = 0.34 * r;
                (x.abs() <= bar && y.abs() <= r) || (y.abs() <= bar && x.abs() <= r)
            }
            ShapeKind::Hexagon => point_in_regular_polygon(x, y, r, 6),
        }
    }

    /// Coverage in [0, 1] from a 2x2 subpixel sample.
    fn coverage(&self, px: usize, py: usize) -> f64 {
        let mut hits = 0;
        for (ox, oy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
            if self.contains(px as f64 + ox, py as f64 + oy) {
                hits += 1;
            }
        }
        hits as f64 / 4.0
    }
}

fn point_in_regular_polygon(x: f64, y: f64, r: f64, sides: usize) -> bool {
    // convex polygon with a vertex straight up; inside iff on the inner side
    // of every edge
    let mut verts = Vec::with_capacity(sides);
    for k in 0..sides {
        let a = std::f64::consts::TAU * k as f64 / sides as f64 - std::f64::consts::FRAC_PI_2;
        verts.push((r * a.cos(), r * a.sin()));
    }
    for k in 0..sides {
        let (x1, y1) = verts[k];
        let (x2, y2) = verts[(k + 1) % sides];
        let cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1);
        if cross < 0.0 {
            return false;
        }
    }
    true
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (h.rem_euclid(1.0)) * 6.0;
    let i = h.floor() as usize % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, t],
    }
}

/// Class k's hue: golden-ratio spacing keeps families far apart.
fn class_hue(class: usize) -> f64 {
    (class as f64 * 0.618_033_988_75).rem_euclid(1.0)
}

fn textured_background(rng: &mut ChaCha8Rng, size: usize) -> Array3<f64> {
    // muted two-color gradient along a random direction
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (sin, cos) = angle.sin_cos();
    let c0: [f64; 3] = hsv_to_rgb(rng.gen_range(0.0..1.0), rng.gen_range(0.0..0.12), rng.gen_range(0.30..0.55));
    let c1: [f64; 3] = hsv_to_rgb(rng.gen_range(0.0..1.0), rng.gen_range(0.0..0.12), rng.gen_range(0.35..0.60));
    let diag = (size as f64) * std::f64::consts::SQRT_2;
    let mut img = Array3::<f64>::zeros((size, size, 3));
    for y in 0..size {
        for x in 0..size {
            let t = ((x as f64 * cos + y as f64 * sin) / diag + 0.5).clamp(0.0, 1.0);
            for c in 0..3 {
                let noise = rng.gen_range(-0.04..0.04);
                img[[y, x, c]] = (c0[c] + (c1[c] - c0[c]) * t + noise).clamp(0.0, 1.0);
            }
        }
    }
    img
}

/// Deterministic synthetic dataset: 1-3 shapes per image over a textured
/// background, per-class shape and color families.
pub fn generate_shapes(cfg: &DatasetConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let size = cfg.image_size;
    let s = size as f64;

    let mut out = Vec::with_capacity(cfg.samples);
    for idx in 0..cfg.samples {
        let mut image = textured_background(&mut rng, size);
        let count = rng.gen_range(cfg.shapes_min..=cfg.shapes_max);

        // distinct classes while possible, repeats only when count > C
        let mut classes: Vec<usize> = (0..cfg.num_classes).collect();
        for i in (1..classes.len()).rev() {
            let j = rng.gen_range(0..=i);
            classes.swap(i, j);
        }
        let chosen: Vec<usize> = if count <= cfg.num_classes {
            classes[..count].to_vec()
        } else {
            (0..count).map(|_| rng.gen_range(0..cfg.num_classes)).collect()
        };

        // placement with bounded retries: shapes must stay inside the frame
        // and each must keep a visible core after later shapes are painted
        let mut shapes: Vec<ShapeInstance> = Vec::with_capacity(count);
        for &class in &chosen {
            let kind = SHAPE_FAMILIES[class % SHAPE_FAMILIES.len()];
            let mut placed = false;
            for _ in 0..40 {
                let radius = rng.gen_range(0.135 * s..0.24 * s);
                let cx = rng.gen_range(radius + 1.0..s - radius - 1.0);
                let cy = rng.gen_range(radius + 1.0..s - radius - 1.0);
                let far_enough = shapes.iter().all(|other| {
                    let d = ((other.cx - cx).powi(2) + (other.cy - cy).powi(2)).sqrt();
                    d >= 0.75 * (other.radius + radius)
                });
                if far_enough {
                    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                    let color = hsv_to_rgb(
                        class_hue(class) + rng.gen_range(-0.03..0.03),
                        rng.gen_range(0.70..0.95),
                        rng.gen_range(0.70..0.95),
                    );
                    shapes.push(ShapeInstance { kind, class, cx, cy, radius, angle, color });
                    placed = true;
                    break;
                }
            }
            if !placed {
                // crowded frame: skip this shape rather than degenerate overlap
                continue;
            }
        }
        if shapes.is_empty() {
            // cannot happen with the radii above, but never emit a label-free sample
            return Err(Error::Data("failed to place any shape".into()));
        }

        let mut mask = Array2::<u8>::zeros((size, size));
        for shape in &shapes {
            for y in 0..size {
                for x in 0..size {
                    let cov = shape.coverage(x, y);
                    if cov > 0.0 {
                        for c in 0..3 {
                            let v = image[[y, x, c]];
                            image[[y, x, c]] = v + (shape.color[c] - v) * cov;
                        }
                    }
                    if cov >= 0.5 {
                        mask[[y, x]] = class_to_label(shape.class);
                    }
                }
            }
        }

        let mut labels = vec![0u8; cfg.num_classes];
        for v in mask.iter() {
            if let Some(c) = crate::types::label_to_class(*v) {
                labels[c] = 1;
            }
        }
        if labels.iter().all(|&l| l == 0) {
            return Err(Error::Data(format!("sample {idx} rendered without foreground")));
        }

        out.push(Sample {
            image,
            labels,
            gt_mask: Some(mask),
            id: format!("synth_{idx:05}"),
        });
    }
    Ok(out)
}

/// Loader outcome: parsed samples plus recorded per-sample issues.
#[derive(Debug, Default)]
pub struct LoadedDataset {
    pub samples: Vec<Sample>,
    pub warnings: Vec<String>,
}

/// Read a VOC-style directory: `images/*.png`, `labels.txt` with lines
/// `<id> <class indices...>`, optional `masks/*.png` palette masks.
///
/// Only ids listed in `labels.txt` are loaded. Malformed or inconsistent
/// samples are skipped (or flagged) with a warning naming the id.
pub fn load_voc_style(root: impl AsRef<Path>, num_classes: usize) -> Result<LoadedDataset> {
    let root = root.as_ref();
    let labels_path = root.join("labels.txt");
    if !labels_path.is_file() {
        return Err(Error::Data(format!("missing label file {}", labels_path.display())));
    }
    let text = std::fs::read_to_string(&labels_path)?;

    let mut out = LoadedDataset::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts.next().expect("non-empty line").to_string();
        let mut labels = vec![0u8; num_classes];
        let mut bad_index = false;
        for tok in parts {
            match tok.parse::<usize>() {
                Ok(c) if c < num_classes => labels[c] = 1,
                _ => {
                    out.warnings.push(format!("{id}: bad class token `{tok}` (line {})", lineno + 1));
                    bad_index = true;
                }
            }
        }
        if bad_index {
            continue;
        }
        if labels.iter().all(|&l| l == 0) {
            out.warnings.push(format!("{id}: no positive labels"));
            continue;
        }

        let img_path = root.join("images").join(format!("{id}.png"));
        let image = match pngio::read_rgb(&img_path) {
            Ok(img) => img,
            Err(e) => {
                out.warnings.push(format!("{id}: unreadable image ({e})"));
                continue;
            }
        };
        let (h, w, _) = image.dim();

        let mask_path = root.join("masks").join(format!("{id}.png"));
        let gt_mask = if mask_path.is_file() {
            match pngio::read_indexed(&mask_path) {
                Ok(mask) => {
                    if mask.dim() != (h, w) {
                        out.warnings.push(format!(
                            "{id}: image {h}x{w} and mask {}x{} sizes differ",
                            mask.dim().0,
                            mask.dim().1
                        ));
                        continue;
                    }
                    // consistency: mask classes must be covered by the labels
                    for &v in mask.iter() {
                        if let Some(c) = crate::types::label_to_class(v) {
                            if c >= num_classes || labels[c] == 0 {
                                out.warnings.push(format!(
                                    "{id}: mask names class {c} outside the positive labels"
                                ));
                                break;
                            }
                        }
                    }
                    Some(mask)
                }
                Err(e) => {
                    out.warnings.push(format!("{id}: unreadable mask ({e})"));
                    continue;
                }
            }
        } else {
            None
        };

        out.samples.push(Sample { image, labels, gt_mask, id });
    }
    Ok(out)
}

/// Write samples as a VOC-style directory (the layout [`load_voc_style`]
/// reads).
pub fn write_voc_style(root: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let root = root.as_ref();
    std::fs::create_dir_all(root.join("images"))?;
    let has_masks = samples.iter().any(|s| s.gt_mask.is_some());
    if has_masks {
        std::fs::create_dir_all(root.join("masks"))?;
    }
    let mut labels_txt = String::new();
    for s in samples {
        pngio::write_rgb(root.join("images").join(format!("{}.png", s.id)), &s.image)?;
        if let Some(mask) = &s.gt_mask {
            pngio::write_indexed(root.join("masks").join(format!("{}.png", s.id)), mask)?;
        }
        labels_txt.push_str(&s.id);
        for (c, &l) in s.labels.iter().enumerate() {
            if l != 0 {
                labels_txt.push_str(&format!(" {c}"));
            }
        }
        labels_txt.push('\n');
    }
    std::fs::write(root.join("labels.txt"), labels_txt)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seed: u64, samples: usize) -> DatasetConfig {
        DatasetConfig { rng_seed: seed, samples, ..Default::default() }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_shapes(&cfg(7, 6)).unwrap();
        let b = generate_shapes(&cfg(7, 6)).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.labels, y.labels);
            assert_eq!(x.gt_mask, y.gt_mask);
            assert_eq!(x.id, y.id);
        }
    }

    #[test]
    fn two_class_masks_stay_in_range() {
        let c = DatasetConfig { num_classes: 2, samples: 100, rng_seed: 3, ..Default::default() };
        for s in generate_shapes(&c).unwrap() {
            for &v in s.gt_mask.as_ref().unwrap().iter() {
                assert!(v <= 2, "mask value {v}");
            }
        }
    }

    #[test]
    fn single_shape_foreground_fraction_in_band() {
        // renderer tuning gate: one shape must occupy 2%..60% of the pixels
        let c = DatasetConfig { shapes_min: 1, shapes_max: 1, samples: 200, rng_seed: 11, ..Default::default() };
        for s in generate_shapes(&c).unwrap() {
            let mask = s.gt_mask.as_ref().unwrap();
            let fg = mask.iter().filter(|&&v| v != 0).count() as f64 / mask.len() as f64;
            assert!((0.02..=0.6).contains(&fg), "{}: fg fraction {fg}", s.id);
        }
    }

    #[test]
    fn mask_classes_equal_positive_labels() {
        for s in generate_shapes(&cfg(5, 60)).unwrap() {
            let mut from_mask = vec![0u8; 3];
            for &v in s.gt_mask.as_ref().unwrap().iter() {
                if let Some(c) = crate::types::label_to_class(v) {
                    from_mask[c] = 1;
                }
            }
            assert_eq!(from_mask, s.labels, "{}", s.id);
        }
    }

    #[test]
    fn images_stay_in_unit_range_with_positive_labels() {
        for s in generate_shapes(&cfg(9, 20)).unwrap() {
            assert!(s.image.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(!s.positives().is_empty());
        }
    }

    #[test]
    fn indivisible_image_size_rejected() {
        let c = DatasetConfig { image_size: 60, ..Default::default() };
        assert!(generate_shapes(&c).is_err());
    }

    #[test]
    fn voc_round_trip_and_listing_rules() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate_shapes(&cfg(2, 3)).unwrap();
        write_voc_style(dir.path(), &samples).unwrap();

        // drop one id from the listing: that image must be ignored
        let listing = std::fs::read_to_string(dir.path().join("labels.txt")).unwrap();
        let kept: Vec<&str> = listing.lines().take(2).collect();
        std::fs::write(dir.path().join("labels.txt"), kept.join("\n")).unwrap();

        let loaded = load_voc_style(dir.path(), 3).unwrap();
        assert_eq!(loaded.samples.len(), 2);
        assert!(loaded.warnings.is_empty(), "{:?}", loaded.warnings);
        // labels survive the round trip
        assert_eq!(loaded.samples[0].labels, samples[0].labels);
        assert_eq!(loaded.samples[0].gt_mask, samples[0].gt_mask);
    }

    #[test]
    fn multi_hot_parsing_matches_spec_example() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("images")).unwrap();
        let img = Array3::from_elem((8, 8, 3), 0.5);
        pngio::write_rgb(dir.path().join("images/img1.png"), &img).unwrap();
        std::fs::write(dir.path().join("labels.txt"), "img1 0 3\n").unwrap();
        let loaded = load_voc_style(dir.path(), 5).unwrap();
        assert_eq!(loaded.samples.len(), 1);
        assert_eq!(loaded.samples[0].labels, vec![1, 0, 0, 1, 0]);
        assert!(loaded.samples[0].gt_mask.is_none());
    }

    #[test]
    fn missing_label_file_is_a_load_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_voc_style(dir.path(), 3).is_err());
    }

    #[test]
    fn size_mismatch_is_recorded_and_sample_skipped() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("images")).unwrap();
        std::fs::create_dir_all(dir.path().join("masks")).unwrap();
        pngio::write_rgb(dir.path().join("images/a.png"), &Array3::from_elem((8, 8, 3), 0.5)).unwrap();
        pngio::write_indexed(dir.path().join("masks/a.png"), &Array2::<u8>::zeros((4, 4))).unwrap();
        std::fs::write(dir.path().join("labels.txt"), "a 0\n").unwrap();
        let loaded = load_voc_style(dir.path(), 2).unwrap();
        assert!(loaded.samples.is_empty());
        assert!(loaded.warnings.iter().any(|w| w.contains("a:") && w.contains("sizes differ")));
    }

    #[test]
    fn mask_class_outside_labels_warns_but_keeps_sample() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("images")).unwrap();
        std::fs::create_dir_all(dir.path().join("masks")).unwrap();
        pngio::write_rgb(dir.path().join("images/b.png"), &Array3::from_elem((8, 8, 3), 0.5)).unwrap();
        // mask claims class 4 (label value 5) while labels say only class 0
        let mut mask = Array2::<u8>::zeros((8, 8));
        mask[[0, 0]] = 5;
        pngio::write_indexed(dir.path().join("masks/b.png"), &mask).unwrap();
        std::fs::write(dir.path().join("labels.txt"), "b 0\n").unwrap();
        let loaded = load_voc_style(dir.path(), 5).unwrap();
        assert_eq!(loaded.samples.len(), 1);
        assert!(loaded.warnings.iter().any(|w| w.contains("b:") && w.contains("outside the positive labels")));
    }
}
