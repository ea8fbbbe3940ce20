//! PNG input and output.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::edges::EdgeMap;
use crate::error::{Error, Result};
use crate::imgcore::{ImageGray, ImageRgb};

/// Loads any PNG (gray, RGB or with alpha) as 8-bit RGB.
pub fn load_rgb(path: &Path) -> Result<ImageRgb> {
    let img = image::open(path).map_err(|e| Error::io(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    ImageRgb::new(w, h, img.into_raw())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

pub fn save_rgb(path: &Path, img: &ImageRgb) -> Result<()> {
    ensure_parent(path)?;
    image::save_buffer_with_format(
        path,
        img.as_raw(),
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::io(path, e))
}

/// Rounds intensities to 8 bits.
pub fn save_gray(path: &Path, img: &ImageGray) -> Result<()> {
    ensure_parent(path)?;
    let bytes: Vec<u8> = img.as_slice().iter().map(|v| v.round() as u8).collect();
    image::save_buffer_with_format(
        path,
        &bytes,
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::L8,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::io(path, e))
}

/// Writes an edge map as a 1-bit grayscale PNG (edges white).
pub fn save_edge_map(path: &Path, edges: &EdgeMap) -> Result<()> {
    ensure_parent(path)?;
    let (w, h) = edges.dims();
    let stride = w.div_ceil(8);
    let mut packed = vec![0u8; stride * h];
    for y in 0..h {
        for x in 0..w {
            if edges.get(x, y) {
                packed[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::One);
    let mut writer = encoder.write_header().map_err(|e| Error::io(path, e))?;
    writer
        .write_image_data(&packed)
        .map_err(|e| Error::io(path, e))?;
    writer.finish().map_err(|e| Error::io(path, e))
}
