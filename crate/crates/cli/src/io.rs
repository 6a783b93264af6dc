//! PNG and CSV input/output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageError};
use persplens::Image;

use crate::CliError;

/// Reads an 8-bit grayscale or 24-bit RGB PNG as values in `[0, 1]`.
pub fn read_png(path: &Path) -> Result<Image<f64>, CliError> {
    let decoded = image::open(path).map_err(|e| match e {
        ImageError::IoError(io) => CliError::Io(format!("{}: {io}", path.display())),
        other => CliError::Validation(format!("{}: {other}", path.display())),
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, bytes) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
        DynamicImage::ImageRgb8(buf) => (3, buf.into_raw()),
        other => {
            return Err(CliError::Validation(format!(
                "{}: unsupported pixel format {:?} (expected 8-bit gray or RGB)",
                path.display(),
                other.color()
            )))
        }
    };
    let data = bytes.into_iter().map(|b| f64::from(b) / 255.0).collect();
    Image::new(w, h, channels, data).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Quantizes to 8 bits (round half away from zero after clamping to `[0, 1]`).
pub fn to_bytes(img: &Image<f64>) -> Vec<u8> {
    img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

/// Writes an 8-bit PNG with fixed encoder settings, so equal images always
/// produce identical files.
pub fn write_png(path: &Path, img: &Image<f64>) -> Result<(), CliError> {
    let color = match img.channels() {
        1 => ExtendedColorType::L8,
        _ => ExtendedColorType::Rgb8,
    };
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    let mut out = BufWriter::new(file);
    PngEncoder::new_with_quality(&mut out, CompressionType::Best, FilterType::Adaptive)
        .write_image(&to_bytes(img), img.width() as u32, img.height() as u32, color)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    out.flush().map_err(|e| io_error(path, e))
}

pub fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Writes a header row followed by `rows`.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
    w.write_record(header).map_err(|e| io_error(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

/// Appends one row, writing the header first if the file is new or empty.
pub fn append_csv(path: &Path, header: &[&str], row: &[String]) -> Result<(), CliError> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_error(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(header).map_err(|e| io_error(path, e))?;
    }
    w.write_record(row).map_err(|e| io_error(path, e))?;
    w.flush().map_err(|e| io_error(path, e))
}
