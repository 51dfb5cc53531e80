use std::path::Path;

use image::{ColorType, ImageDecoder, ImageReader, RgbImage};

use crate::error::{Error, Result};

/// Side length of every stored patch.
pub const PATCH_SIDE: u32 = 128;

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Checks the header only: 128x128, 8-bit RGB.
pub fn check_patch(path: &Path) -> Result<()> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoder = reader.into_decoder().map_err(|e| image_err(path, e))?;
    let (w, h) = decoder.dimensions();
    if (w, h) != (PATCH_SIDE, PATCH_SIDE) {
        return Err(image_err(path, format!("expected {PATCH_SIDE}x{PATCH_SIDE}, got {w}x{h}")));
    }
    if decoder.color_type() != ColorType::Rgb8 {
        return Err(image_err(
            path,
            format!("expected 8-bit RGB, got {:?}", decoder.color_type()),
        ));
    }
    Ok(())
}

pub fn read_patch(path: &Path) -> Result<RgbImage> {
    check_patch(path)?;
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    Ok(img.into_rgb8())
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}
