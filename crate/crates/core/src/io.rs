//! Binary PGM (P5) and 8-bit grayscale PNG reading and writing.
//!
//! Reading sniffs the magic bytes; writing picks the format from the file
//! extension. Writes clamp to `[0, 255]` and round to the nearest integer.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{quantize, GrayImage};

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Png,
}

impl ImageFormat {
    /// Format implied by the path extension (`.pgm` or `.png`, case-insensitive).
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("pgm") => Ok(ImageFormat::Pgm),
            Some("png") => Ok(ImageFormat::Png),
            other => Err(Error::UnsupportedFormat(format!(
                "cannot infer image format from extension {:?} of {}",
                other.unwrap_or(""),
                path.display()
            ))),
        }
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

pub fn write_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_image(img, ImageFormat::from_path(path)?)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Decodes a PGM or PNG byte stream, detected by its signature.
pub fn decode_image(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(bytes)
    } else if bytes.len() >= 2 && bytes[0] == b'P' {
        decode_pgm(bytes)
    } else {
        Err(Error::UnsupportedFormat(
            "not a PGM or PNG stream".to_string(),
        ))
    }
}

pub fn encode_image(img: &GrayImage, format: ImageFormat) -> Result<Vec<u8>> {
    match format {
        ImageFormat::Pgm => Ok(encode_pgm(img)),
        ImageFormat::Png => encode_png(img),
    }
}

fn to_bytes(img: &GrayImage) -> Vec<u8> {
    img.pixels().iter().map(|&v| quantize(v) as u8).collect()
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(to_bytes(img));
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    match bytes.get(..2) {
        Some(b"P5") => {}
        Some([b'P', d]) if d.is_ascii_digit() => {
            return Err(Error::UnsupportedFormat(format!(
                "PNM variant P{} (only binary P5 graymaps are supported)",
                *d as char
            )))
        }
        _ => return Err(Error::MalformedHeader("missing P5 magic".to_string())),
    }

    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        skip_whitespace_and_comments(bytes, &mut pos);
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedHeader(format!(
                "expected {} at byte {}",
                ["width", "height", "maxval"][i],
                start
            )));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedHeader("numeric field overflow".to_string()))?;
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(Error::MalformedHeader(
                "missing whitespace after maxval".to_string(),
            ))
        }
    }

    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader(format!(
            "empty image {width}x{height}"
        )));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::MalformedHeader(format!("maxval {maxval}")));
    }
    if maxval > 255 {
        return Err(Error::UnsupportedFormat(format!(
            "16-bit PGM (maxval {maxval})"
        )));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::MalformedHeader("image size overflow".to_string()))?;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| Error::MalformedHeader(format!("raster truncated: need {n} bytes")))?;
    let scale = 255.0 / maxval as f64;
    let pixels = raster
        .iter()
        .map(|&b| if maxval == 255 { b as f64 } else { (b as f64 * scale).round() })
        .collect();
    GrayImage::new(width, height, pixels)
}

fn skip_whitespace_and_comments(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() {
        match bytes[*pos] {
            b'#' => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            b if b.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::MalformedHeader(format!("png: {e}"))
}

pub fn decode_png(bytes: &[u8]) -> Result<GrayImage> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if color != png::ColorType::Grayscale {
        return Err(Error::UnsupportedFormat(format!(
            "PNG color type {color:?} (only grayscale is supported)"
        )));
    }
    if depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "PNG bit depth {depth:?} (only 8-bit is supported)"
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err("image too large"))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let stride = frame.line_size;
    let mut pixels = Vec::with_capacity(w * h);
    for row in buf.chunks(stride).take(h) {
        pixels.extend(row[..w].iter().map(|&b| b as f64));
    }
    GrayImage::new(w, h, pixels)
}

pub fn encode_png(img: &GrayImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(png_err)?;
        writer.write_image_data(&to_bytes(img)).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}
