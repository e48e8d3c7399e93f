//! Grayscale image files: binary PGM (8/16 bit) and PNG.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use hybrid_restore::pgm::{quantize, read_pgm, write_pgm, Gray};
use image::{ImageBuffer, Luma};
use ndarray::Array2;

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Pgm,
    Png,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Pgm => "pgm",
            Format::Png => "png",
        }
    }
}

pub fn read_gray(path: &Path) -> Result<Array2<f64>> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("pgm") => {
            let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
            let gray = read_pgm(BufReader::new(file))
                .with_context(|| format!("cannot decode {}", path.display()))?;
            Ok(gray.to_f64())
        }
        Some("png") => {
            let img = image::open(path).with_context(|| format!("cannot decode {}", path.display()))?;
            let (w, h) = (img.width() as usize, img.height() as usize);
            // keep the stored sample values; 8-bit files are not widened
            let values: Vec<f64> = match img {
                image::DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(f64::from).collect(),
                other => other.into_luma16().into_raw().into_iter().map(f64::from).collect(),
            };
            Ok(Array2::from_shape_vec((h, w), values)?)
        }
        _ => Err(UsageError(format!(
            "{}: unsupported image type (expected .pgm or .png)",
            path.display()
        ))
        .into()),
    }
}

pub fn write_gray(path: &Path, gray: &Gray, format: Format) -> Result<()> {
    let ctx = || format!("cannot write {}", path.display());
    match format {
        Format::Pgm => {
            let file = File::create(path).with_context(ctx)?;
            write_pgm(BufWriter::new(file), gray).with_context(ctx)
        }
        Format::Png => {
            // samples are stored as-is so counts survive a round trip
            let (h, w) = gray.pixels.dim();
            let (w, h) = (w as u32, h as u32);
            if gray.max_value > 255 {
                let raw = gray.pixels.iter().copied().collect();
                let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
                    ImageBuffer::from_raw(w, h, raw).expect("buffer matches dimensions");
                buf.save(path).with_context(ctx)
            } else {
                let raw = gray.pixels.iter().map(|v| (*v).min(255) as u8).collect();
                let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
                    ImageBuffer::from_raw(w, h, raw).expect("buffer matches dimensions");
                buf.save(path).with_context(ctx)
            }
        }
    }
}

/// Writes a real field scaled so its maximum maps to full white.
pub fn write_field(dir: &Path, stem: &str, values: &Array2<f64>, format: Format) -> Result<PathBuf> {
    let path = dir.join(format!("{stem}.{}", format.extension()));
    write_gray(&path, &quantize(values, 65535), format)?;
    Ok(path)
}

pub fn write_mask(dir: &Path, stem: &str, mask: &Array2<bool>, format: Format) -> Result<PathBuf> {
    let path = dir.join(format!("{stem}.{}", format.extension()));
    let gray = Gray {
        pixels: mask.mapv(|m| if m { 255 } else { 0 }),
        max_value: 255,
    };
    write_gray(&path, &gray, format)?;
    Ok(path)
}

/// Writes integer counts verbatim (16-bit PGM keeps them exact).
pub fn write_counts(path: &Path, counts: &Array2<f64>, format: Format) -> Result<()> {
    let top = counts.iter().cloned().fold(0.0, f64::max);
    if top > 65535.0 {
        return Err(UsageError(format!(
            "a pixel holds {top} counts, more than a 16-bit image can store; lower the multiplier"
        ))
        .into());
    }
    let gray = Gray {
        pixels: counts.mapv(|v| v.round() as u16),
        max_value: if top > 255.0 { 65535 } else { 255 },
    };
    write_gray(path, &gray, format)
}
