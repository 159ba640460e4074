use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::tensor::Tensor;
use crate::{Error, Result};

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Unsupported {
        path: path.to_path_buf(),
        feature: e.to_string(),
    }
}

/// Reads an 8-bit grayscale or RGB PNG as a `(1, C, H, W)` tensor with
/// values `byte / 255`.
pub fn load_png(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(png_err(path, format!("bit depth {depth:?} (only 8-bit is supported)")));
    }
    let channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(png_err(path, format!("color type {other:?} (only grayscale and RGB are supported)"))),
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let mut data = vec![0.0f32; channels * h * w];
    for y in 0..h {
        let row = &buf[y * stride..y * stride + w * channels];
        for x in 0..w {
            for c in 0..channels {
                data[(c * h + y) * w + x] = row[x * channels + c] as f32 / 255.0;
            }
        }
    }
    Tensor::new([1, channels, h, w], data)
}

fn to_byte(v: f32) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Writes a `(1, 1|3, H, W)` tensor as an 8-bit PNG, rounding half up.
pub fn save_png(image: &Tensor, path: &Path) -> Result<()> {
    let [n, c, h, w] = image.shape();
    if n != 1 || (c != 1 && c != 3) {
        return Err(Error::invalid(format!("cannot save shape {:?} as PNG", image.shape())));
    }
    let mut bytes = vec![0u8; c * h * w];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                bytes[(y * w + x) * c + ch] = to_byte(image.data()[(ch * h + y) * w + x]);
            }
        }
    }
    let color = if c == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb };
    write_png(path, w as u32, h as u32, color, &bytes)
}

/// Writes raw grayscale bytes.
pub fn save_png_gray_bytes(bytes: &[u8], h: usize, w: usize, path: &Path) -> Result<()> {
    write_png(path, w as u32, h as u32, png::ColorType::Grayscale, bytes)
}

fn write_png(path: &Path, w: u32, h: u32, color: png::ColorType, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w, h);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| png_err(path, e))?;
    writer.write_image_data(bytes).map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_scale_endpoints() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        save_png_gray_bytes(&[0, 255, 128, 7], 2, 2, &p).unwrap();
        let t = load_png(&p).unwrap();
        assert_eq!(t.data()[0], 0.0);
        assert_eq!(t.data()[1], 1.0);
    }

    #[test]
    fn byte_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let bytes: Vec<u8> = (0..=255u8).collect();
        let p = dir.path().join("ramp.png");
        save_png_gray_bytes(&bytes, 16, 16, &p).unwrap();
        let t = load_png(&p).unwrap();
        let q = dir.path().join("ramp2.png");
        save_png(&t, &q).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }

    #[test]
    fn rgb_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::from_fn([1, 3, 3, 4], |_, c, y, x| ((c * 50 + y * 20 + x * 3) as f32) / 255.0);
        let p = dir.path().join("rgb.png");
        save_png(&t, &p).unwrap();
        assert_eq!(load_png(&p).unwrap(), t);
    }

    #[test]
    fn sixteen_bit_rejected_with_feature_name() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep.png");
        let file = File::create(&p).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 2, 2);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[0u8; 8]).unwrap();
        w.finish().unwrap();
        let err = load_png(&p).unwrap_err().to_string();
        assert!(err.contains("bit depth"), "{err}");
    }

    #[test]
    fn palette_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pal.png");
        let file = File::create(&p).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 2, 1);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(vec![0u8, 0, 0, 255, 255, 255]);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[0u8, 1]).unwrap();
        w.finish().unwrap();
        let err = load_png(&p).unwrap_err().to_string();
        assert!(err.contains("Indexed"), "{err}");
    }
}
