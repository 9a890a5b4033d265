//! Binary PGM (P5) and PPM (P6) files with 8-bit samples.

use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};

/// An 8-bit image with 1 (gray) or 3 (RGB, interleaved) channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image8 {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

fn encode(img: &Image8) -> Result<Vec<u8>> {
    let (subtype, color) = match img.channels {
        1 => (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8),
        3 => (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8),
        c => return Err(Error::InvalidArgument(format!("{c}-channel images are not supported"))),
    };
    if img.data.len() != img.width * img.height * img.channels {
        return Err(Error::dim("imageio::encode", "buffer does not match image size"));
    }
    let mut buf = Vec::new();
    PnmEncoder::new(&mut buf)
        .with_subtype(subtype)
        .write_image(&img.data, img.width as u32, img.height as u32, color)
        .map_err(|e| Error::InvalidArgument(format!("pnm encode: {e}")))?;
    Ok(buf)
}

pub fn write_pnm(path: impl AsRef<Path>, img: &Image8) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(img)?).map_err(|e| Error::io(path, e))
}

/// Reads a P5/P6 file, requiring the given channel count (1 or 3).
pub fn read_pnm(path: impl AsRef<Path>, channels: usize) -> Result<Image8> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load(Cursor::new(&bytes), ImageFormat::Pnm)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let data = match (channels, decoded) {
        (1, DynamicImage::ImageLuma8(g)) => g.into_raw(),
        (3, DynamicImage::ImageRgb8(c)) => c.into_raw(),
        (_, other) => {
            return Err(Error::format(
                path,
                format!("expected {channels}-channel 8-bit image, found {:?}", other.color()),
            ))
        }
    };
    Ok(Image8 {
        width,
        height,
        channels,
        data,
    })
}
