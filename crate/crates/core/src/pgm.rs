//! Binary (P5) PGM reading and writing, 8 and 16 bit.

use std::io::{BufRead, Write};

use ndarray::Array2;

use crate::error::{Error, Result};

/// A decoded grayscale raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Gray {
    pub pixels: Array2<u16>,
    pub max_value: u16,
}

impl Gray {
    pub fn to_f64(&self) -> Array2<f64> {
        self.pixels.mapv(f64::from)
    }
}

fn header_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut token = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        let b = byte[0];
        if b == b'#' && token.is_empty() {
            let mut skip = String::new();
            r.read_line(&mut skip)?;
            continue;
        }
        if b.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(b as char);
    }
    if token.is_empty() {
        return Err(Error::InvalidInput("truncated PGM header".into()));
    }
    Ok(token)
}

fn header_number<R: BufRead>(r: &mut R, what: &str) -> Result<usize> {
    let tok = header_token(r)?;
    tok.parse()
        .map_err(|_| Error::InvalidInput(format!("bad PGM {what}: {tok:?}")))
}

pub fn read_pgm<R: BufRead>(mut r: R) -> Result<Gray> {
    let magic = header_token(&mut r)?;
    if magic != "P5" {
        return Err(Error::InvalidInput(format!("expected binary PGM (P5), found {magic:?}")));
    }
    let width = header_number(&mut r, "width")?;
    let height = header_number(&mut r, "height")?;
    let max_value = header_number(&mut r, "maximum value")?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput("PGM has zero size".into()));
    }
    if max_value == 0 || max_value > 65535 {
        return Err(Error::InvalidInput(format!("PGM maximum value {max_value} out of range")));
    }
    let wide = max_value > 255;
    let bytes = width * height * if wide { 2 } else { 1 };
    let mut data = vec![0u8; bytes];
    r.read_exact(&mut data)
        .map_err(|_| Error::InvalidInput("PGM pixel data is truncated".into()))?;
    let values: Vec<u16> = if wide {
        data.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()
    } else {
        data.into_iter().map(u16::from).collect()
    };
    let pixels = Array2::from_shape_vec((height, width), values).expect("length matches shape");
    Ok(Gray {
        pixels,
        max_value: max_value as u16,
    })
}

pub fn write_pgm<W: Write>(mut w: W, image: &Gray) -> Result<()> {
    let (h, wd) = image.pixels.dim();
    write!(w, "P5\n{wd} {h}\n{}\n", image.max_value)?;
    if image.max_value > 255 {
        for v in image.pixels.iter() {
            w.write_all(&v.to_be_bytes())?;
        }
    } else {
        let bytes: Vec<u8> = image.pixels.iter().map(|v| (*v).min(255) as u8).collect();
        w.write_all(&bytes)?;
    }
    Ok(())
}

/// Linearly maps `values` onto `0..=max_value`, with the largest value at the top.
pub fn quantize(values: &Array2<f64>, max_value: u16) -> Gray {
    let hi = values.iter().cloned().fold(0.0, f64::max);
    let scale = if hi > 0.0 { max_value as f64 / hi } else { 0.0 };
    Gray {
        pixels: values.mapv(|v| (v.max(0.0) * scale).round().min(max_value as f64) as u16),
        max_value,
    }
}
