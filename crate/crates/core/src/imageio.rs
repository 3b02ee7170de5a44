//! 8-bit RGB PNG reading and writing for `1x3xHxW` tensors in `[0, 1]`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// `round(v * 255)` clamped to `[0, 255]`.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn dequantize<T: Element>(q: u8) -> T {
    T::c(q as f64 / 255.0)
}

/// Round-trips every value through 8-bit quantization.
pub fn quantize_tensor<T: Element>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| dequantize(quantize(v.f64())))
}

pub fn write_png<T: Element>(path: &Path, img: &Tensor<T>) -> Result<()> {
    let [n, c, h, w] = img.shape().0;
    if n != 1 || c != 3 {
        return Err(Error::InvalidArgument(format!(
            "write_png: expected a 1x3xHxW image, got {}",
            img.shape()
        )));
    }
    let mut bytes = Vec::with_capacity(3 * h * w);
    let d = img.data();
    for p in 0..h * w {
        for ch in 0..3 {
            bytes.push(quantize(d[ch * h * w + p].f64()));
        }
    }
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    writer
        .finish()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Reads an 8-bit PNG as `1x3xHxW`. Gray is replicated, alpha dropped.
pub fn read_png<T: Element>(path: &Path) -> Result<Tensor<T>> {
    let fmt = |e: png::DecodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut dec = png::Decoder::new(BufReader::new(File::open(path)?));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(fmt)?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(fmt)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(Error::Format(format!("{}: unexpanded palette image", path.display())))
        }
    };
    let line = info.line_size;
    let mut data = vec![T::zero(); 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let px = &buf[y * line + x * stride..];
            for ch in 0..3 {
                let v = if stride < 3 { px[0] } else { px[ch] };
                data[ch * h * w + y * w + x] = dequantize(v);
            }
        }
    }
    Tensor::from_vec(Shape::new(1, 3, h, w), data)
}
