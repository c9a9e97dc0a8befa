//! 8-bit grayscale frames as binary PGM (P5) or PNG.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat, Luma};
use loopgate_core::GrayImage;

use super::{FormatError, Result};

pub fn read_image(path: &Path) -> Result<GrayImage> {
    let decoded = image::open(path).map_err(|e| FormatError::invalid(path, e.to_string()))?;
    let luma = decoded.into_luma8();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    GrayImage::new(w, h, luma.into_raw()).map_err(|e| FormatError::invalid(path, e.to_string()))
}

/// Writes PGM for `.pgm` paths and PNG otherwise.
pub fn write_image(path: &Path, img: &GrayImage) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let err = |e: image::ImageError| FormatError::invalid(path, e.to_string());
    if path.extension().and_then(|e| e.to_str()) == Some("pgm") {
        // the generic PNM writer picks PAM; force a binary graymap
        let file = File::create(path).map_err(FormatError::io(path))?;
        PnmEncoder::new(BufWriter::new(file))
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(img.pixels(), w, h, ExtendedColorType::L8)
            .map_err(err)
    } else {
        let buf = image::ImageBuffer::<Luma<u8>, _>::from_raw(w, h, img.pixels()).expect("buffer length matches dimensions");
        buf.save_with_format(path, ImageFormat::Png).map_err(err)
    }
}

pub fn is_image_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "png")
    )
}
