//! PNG / binary PPM reading and writing.

use std::io::Write;
use std::path::Path;

use ::image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use ::image::{ExtendedColorType, ImageEncoder, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::image::ColorImage;

fn format_for(path: &Path) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(ImageFormat::Png),
        "ppm" => Ok(ImageFormat::Pnm),
        _ => Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("unsupported extension {ext:?}, expected .png or .ppm"),
        }),
    }
}

fn map_image_error(path: &Path, e: ::image::ImageError) -> Error {
    match e {
        ::image::ImageError::IoError(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Format {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Loads an 8-bit RGB PNG or a P6 PPM into [0, 255] floats.
pub fn load_image(path: &Path) -> Result<ColorImage> {
    let format = format_for(path)?;
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if format == ImageFormat::Pnm && !bytes.starts_with(b"P6") {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "only binary PPM (P6) is supported".into(),
        });
    }
    let decoded = ::image::load_from_memory_with_format(&bytes, format)
        .map_err(|e| map_image_error(path, e))?;
    let color = decoded.color();
    if color.bytes_per_pixel() / color.channel_count() != 1 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("expected 8-bit samples, found {color:?}"),
        });
    }
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(f64::from).collect();
    ColorImage::new(h as usize, w as usize, data)
}

/// Rounds to the nearest integer and clips to [0, 255].
pub fn to_rgb8(image: &ColorImage) -> RgbImage {
    let raw = image
        .data()
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    RgbImage::from_raw(image.width() as u32, image.height() as u32, raw)
        .expect("buffer length matches dimensions")
}

/// Saves as PNG or P6 PPM depending on the extension.
pub fn save_image(image: &ColorImage, path: &Path) -> Result<()> {
    let format = format_for(path)?;
    let rgb = to_rgb8(image);
    if format == ImageFormat::Pnm {
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut writer = std::io::BufWriter::new(file);
        // the default PNM encoder writes ASCII samples
        PnmEncoder::new(&mut writer)
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(
                rgb.as_raw(),
                rgb.width(),
                rgb.height(),
                ExtendedColorType::Rgb8,
            )
            .map_err(|e| map_image_error(path, e))?;
        return writer.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        });
    }
    rgb.save_with_format(path, format)
        .map_err(|e| map_image_error(path, e))
}
