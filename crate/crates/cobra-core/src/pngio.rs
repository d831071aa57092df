//! PNG input/output: RGB images and palette-indexed masks.
//!
//! Masks are written as 8-bit indexed PNGs with the standard VOC colormap;
//! index 0 is background and index 255 ("unknown") renders as the usual
//! light ignore color. Reading returns the raw palette indices, never the
//! expanded colors, so label round trips are exact.

use ndarray::{Array2, Array3};
use std::path::Path;

use crate::error::{Error, Result};

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

/// The VOC-style colormap: each channel bit is the bit-reversed label index.
pub fn voc_palette() -> [[u8; 3]; 256] {
    let mut pal = [[0u8; 3]; 256];
    for (i, entry) in pal.iter_mut().enumerate() {
        let mut id = i;
        let (mut r, mut g, mut b) = (0u8, 0u8, 0u8);
        for shift in 0..8 {
            r |= ((id & 1) as u8) << (7 - shift);
            g |= (((id >> 1) & 1) as u8) << (7 - shift);
            b |= (((id >> 2) & 1) as u8) << (7 - shift);
            id >>= 3;
        }
        *entry = [r, g, b];
    }
    pal
}

/// Write an `(H, W, 3)` float image in [0, 1] as RGB8.
pub fn write_rgb(path: impl AsRef<Path>, image: &Array3<f64>) -> Result<()> {
    let (h, w, c) = image.dim();
    if c != 3 {
        return Err(Error::shape("write_rgb channels", 3, c));
    }
    let file = std::fs::File::create(path)?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(png_err)?;
    let data: Vec<u8> = image
        .as_standard_layout()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    writer.write_image_data(&data).map_err(png_err)?;
    Ok(())
}

/// Read an RGB(A) or grayscale PNG as `(H, W, 3)` floats in [0, 1].
pub fn read_rgb(path: impl AsRef<Path>) -> Result<Array3<f64>> {
    let file = std::fs::File::open(path)?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let mut out = Array3::<f64>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * channels;
            let px: [u8; 3] = match channels {
                1 => [buf[base]; 3],
                2 => [buf[base]; 3],
                _ => [buf[base], buf[base + 1], buf[base + 2]],
            };
            for c in 0..3 {
                out[[y, x, c]] = px[c] as f64 / 255.0;
            }
        }
    }
    Ok(out)
}

/// Write a label map as an 8-bit palette-indexed PNG.
pub fn write_indexed(path: impl AsRef<Path>, labels: &Array2<u8>) -> Result<()> {
    let (h, w) = labels.dim();
    let file = std::fs::File::create(path)?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    let palette: Vec<u8> = voc_palette().iter().flatten().copied().collect();
    enc.set_palette(palette);
    let mut writer = enc.write_header().map_err(png_err)?;
    let data: Vec<u8> = labels.as_standard_layout().iter().copied().collect();
    writer.write_image_data(&data).map_err(png_err)?;
    Ok(())
}

/// Read a palette-indexed (or grayscale) PNG as raw label values.
pub fn read_indexed(path: impl AsRef<Path>) -> Result<Array2<u8>> {
    let file = std::fs::File::open(path)?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    // no palette expansion: we want the indices themselves
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    match info.color_type {
        png::ColorType::Indexed | png::ColorType::Grayscale => {}
        other => {
            return Err(Error::Png(format!(
                "mask must be palette-indexed or grayscale, got {other:?}"
            )))
        }
    }
    let labels = match info.bit_depth {
        png::BitDepth::Eight => {
            Array2::from_shape_vec((h, w), buf[..w * h].to_vec()).map_err(png_err)?
        }
        png::BitDepth::Four | png::BitDepth::Two | png::BitDepth::One => {
            let bits = info.bit_depth as usize;
            let per_byte = 8 / bits;
            let stride = w.div_ceil(per_byte);
            let mask = (1u8 << bits) - 1;
            let mut out = Array2::<u8>::zeros((h, w));
            for y in 0..h {
                for x in 0..w {
                    let byte = buf[y * stride + x / per_byte];
                    let shift = 8 - bits * (x % per_byte + 1);
                    out[[y, x]] = (byte >> shift) & mask;
                }
            }
            out
        }
        other => return Err(Error::Png(format!("unsupported mask bit depth {other:?}"))),
    };
    Ok(labels)
}
