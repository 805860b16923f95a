//! 8-bit PNG reading and writing. Pixels map to `[0, 1]` as `value / 255`;
//! export quantises with round-half-up after clamping.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Float, Tensor};

fn image_err(path: &Path, message: impl ToString) -> Error {
    Error::Image { path: path.to_path_buf(), message: message.to_string() }
}

/// Decodes a PNG into a `(1, 3, H, W)` tensor. Grayscale is replicated to
/// three channels, alpha is dropped and 16-bit samples are reduced to 8 bits.
pub fn read_png<F: Float>(path: &Path) -> Result<Tensor<F>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| image_err(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| image_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| image_err(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let per_px = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(image_err(path, "unexpanded palette image")),
    };
    let line = info.line_size;
    Ok(Tensor::from_fn([1, 3, h, w], |_, c, y, x| {
        let px = &buf[y * line + x * per_px..];
        let v = if per_px < 3 { px[0] } else { px[c] };
        F::of(v as f64 / 255.0)
    }))
}

/// Round-half-up quantisation of a `[0, 1]` value to 8 bits.
pub fn quantize(v: f64) -> u8 {
    if !(v > 0.0) {
        return 0;
    }
    (v * 255.0 + 0.5).floor().min(255.0) as u8
}

/// Writes item `index` of an `(N, 3, H, W)` tensor as 8-bit RGB.
pub fn write_png<F: Float>(path: &Path, img: &Tensor<F>, index: usize) -> Result<()> {
    let [n, c, h, w] = img.shape();
    if c != 3 || index >= n {
        return Err(image_err(path, format!("cannot write item {index} of tensor {:?} as RGB", img.shape())));
    }
    let item = img.item(index);
    let mut bytes = Vec::with_capacity(h * w * 3);
    for p in 0..h * w {
        for ch in 0..3 {
            bytes.push(quantize(item[ch * h * w + p].f64()));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| image_err(path, e))?;
    writer.write_image_data(&bytes).map_err(|e| image_err(path, e))?;
    writer.finish().map_err(|e| image_err(path, e))?;
    Ok(())
}

/// Sorted `*.png` files in `dir`.
pub fn list_pngs(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(f64::NAN), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(7.0), 255);
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(0.49 / 255.0), 0);
        for k in 0..=255u8 {
            assert_eq!(quantize(k as f64 / 255.0), k);
            assert_eq!(quantize((k as f32 / 255.0) as f64), k);
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = Tensor::<f32>::from_fn([1, 3, 5, 7], |_, c, y, x| ((c * 91 + y * 13 + x * 37) % 256) as f32 / 255.0);
        write_png(&path, &img, 0).unwrap();
        let back: Tensor<f32> = read_png(&path).unwrap();
        assert_eq!(back, img);
        assert_eq!(list_pngs(dir.path()).unwrap(), vec![path]);
    }

    #[test]
    fn grayscale_is_replicated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let file = File::create(&path).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 2, 1);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header().unwrap().write_image_data(&[0, 255]).unwrap();
        let img: Tensor<f64> = read_png(&path).unwrap();
        assert_eq!(img.shape(), [1, 3, 1, 2]);
        for c in 0..3 {
            assert_eq!(img.at(0, c, 0, 0), 0.0);
            assert_eq!(img.at(0, c, 0, 1), 1.0);
        }
        assert!(read_png::<f32>(&dir.path().join("missing.png")).is_err());
    }
}
