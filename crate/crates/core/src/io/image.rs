//! PNG and PPM images. Values are stored as 8-bit (PNG may also be read at
//! 16 bit) and mapped to `[0, 1]` floats.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn err(msg: impl Into<String>) -> Error {
    Error::Image(msg.into())
}

/// Decode a PNG into an image with 1 (grey) or 3 (colour) channels. Alpha is
/// dropped.
pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| err(format!("PNG: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| err(format!("PNG: {e}")))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let src_ch = info.color_type.samples();
    let out_ch = if src_ch <= 2 { 1 } else { 3 };
    let sixteen = info.bit_depth == png::BitDepth::Sixteen;
    let sample = |i: usize| -> f32 {
        if sixteen {
            u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]]) as f32 / 65535.0
        } else {
            buf[i] as f32 / 255.0
        }
    };
    let mut data = Vec::with_capacity(w * h * out_ch);
    for p in 0..w * h {
        for c in 0..out_ch {
            data.push(sample(p * src_ch + c));
        }
    }
    Image::from_data(w, h, out_ch, data)
}

pub fn encode_png(image: &Image) -> Result<Vec<u8>> {
    let color = match image.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(err(format!("cannot write a {c}-channel PNG"))),
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width as u32, image.height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| err(format!("PNG: {e}")))?;
        let bytes: Vec<u8> = image.data.iter().map(|&v| to_u8(v)).collect();
        writer.write_image_data(&bytes).map_err(|e| err(format!("PNG: {e}")))?;
    }
    Ok(out)
}

/// Decode binary (`P6`/`P5`) or ASCII (`P3`/`P2`) PPM/PGM.
pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err("PPM: unexpected end of file"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let (channels, binary) = match magic.as_str() {
        "P6" => (3, true),
        "P5" => (1, true),
        "P3" => (3, false),
        "P2" => (1, false),
        m => return Err(err(format!("PPM: unsupported magic '{m}'"))),
    };
    let num = |s: String| s.parse::<usize>().map_err(|_| err(format!("PPM: bad number '{s}'")));
    let w = num(token()?)?;
    let h = num(token()?)?;
    let max = num(token()?)?;
    if max == 0 || max > 255 {
        return Err(err(format!("PPM: only 8-bit images are supported, maxval {max}")));
    }
    let n = w * h * channels;
    let data: Vec<f32> = if binary {
        let body = &bytes[(pos + 1).min(bytes.len())..];
        if body.len() < n {
            return Err(err(format!("PPM: expected {n} samples, found {}", body.len())));
        }
        body[..n].iter().map(|&b| b as f32 / max as f32).collect()
    } else {
        (0..n).map(|_| Ok(num(token()?)? as f32 / max as f32)).collect::<Result<_>>()?
    };
    Image::from_data(w, h, channels, data)
}

pub fn encode_ppm(image: &Image) -> Result<Vec<u8>> {
    let magic = match image.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(err(format!("cannot write a {c}-channel PPM"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.data.iter().map(|&v| to_u8(v)));
    Ok(out)
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

/// Read a `.png`, `.ppm` or `.pgm` image, chosen by extension.
pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match extension(path).as_str() {
        "png" => decode_png(&bytes),
        "ppm" | "pgm" | "pnm" => decode_ppm(&bytes),
        other => Err(Error::InvalidArgument(format!("unsupported image extension '{other}'"))),
    }
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    let bytes = match extension(path).as_str() {
        "png" => encode_png(image)?,
        "ppm" | "pgm" | "pnm" => encode_ppm(image)?,
        other => return Err(Error::InvalidArgument(format!("unsupported image extension '{other}'"))),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
