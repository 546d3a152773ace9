//! 8-bit PNG reading and writing for `[C, H, W]` tensors in `[0, 1]`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use ddsr::spectral::{amplitude_map, fft2};
use ddsr::Tensor;

use crate::CliError;

/// Decodes any 8/16-bit PNG into RGB `[3, H, W]`; gray is replicated, alpha dropped.
pub fn read_png(path: &Path) -> Result<Tensor<f64>, CliError> {
    let bad = |e: &dyn std::fmt::Display| CliError::Data(format!("{}: {e}", path.display()));
    let file = File::open(path).map_err(|e| bad(&e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| bad(&e))?;
    let size = reader.output_buffer_size().ok_or_else(|| bad(&"image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(&e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(bad(&"unexpanded palette")),
    };
    let row = info.line_size;
    let data = (0..3 * h * w)
        .map(|i| {
            let (k, y, x) = (i / (h * w), i / w % h, i % w);
            let ch = if stride < 3 { 0 } else { k };
            buf[y * row + x * stride + ch] as f64 / 255.0
        })
        .collect();
    Tensor::new(&[3, h, w], data).map_err(CliError::from)
}

/// Round-half-up quantisation of a value clipped to `[0, 1]`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn encode(path: &Path, w: usize, h: usize, color: png::ColorType, bytes: &[u8]) -> Result<(), CliError> {
    let file = File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let io = |e: png::EncodingError| CliError::Failure(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(io)?;
    writer.write_image_data(bytes).map_err(io)?;
    writer.finish().map_err(io)
}

/// Writes `[3, H, W]` or `[1, 3, H, W]` as 8-bit RGB.
pub fn write_png(path: &Path, img: &Tensor<f64>) -> Result<(), CliError> {
    let s = img.shape();
    let (c, h, w) = match *s {
        [c, h, w] | [1, c, h, w] => (c, h, w),
        _ => return Err(CliError::Failure(format!("cannot write image of shape {s:?}"))),
    };
    if c != 3 {
        return Err(CliError::Failure(format!("expected 3 channels, got {c}")));
    }
    let d = img.data();
    let bytes: Vec<u8> = (0..h * w).flat_map(|p| (0..3).map(move |k| quantize(d[k * h * w + p]))).collect();
    encode(path, w, h, png::ColorType::Rgb, &bytes)
}

/// Log-amplitude spectrum averaged over channels, centred and scaled so the
/// brightest bin is white. Input `[1, C, H, W]`.
pub fn write_amplitude(path: &Path, img: &Tensor<f64>) -> Result<(), CliError> {
    let amp = amplitude_map(&fft2(img)?, true);
    let (_, c, h, w) = amp.dims4()?;
    let mean: Vec<f64> = (0..h * w).map(|p| (0..c).map(|k| amp.data()[k * h * w + p]).sum::<f64>() / c as f64).collect();
    let peak = mean.iter().cloned().fold(0.0, f64::max);
    let bytes: Vec<u8> = mean.iter().map(|&v| quantize(if peak > 0.0 { v / peak } else { 0.0 })).collect();
    encode(path, w, h, png::ColorType::Grayscale, &bytes)
}

/// Every `*.png` directly inside `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("no PNG images in {}", dir.display())));
    }
    Ok(files)
}

/// Crops `[C, H, W]` to the largest top-left region with sides divisible by `m`.
pub fn crop_to_multiple(img: &Tensor<f64>, m: usize) -> Result<Tensor<f64>, CliError> {
    let &[c, h, w] = img.shape() else {
        return Err(CliError::Data(format!("image of shape {:?}", img.shape())));
    };
    let (nh, nw) = (h / m * m, w / m * m);
    if nh == 0 || nw == 0 {
        return Err(CliError::Data(format!("{h}x{w} image is smaller than scale {m}")));
    }
    Ok(Tensor::from_fn(&[c, nh, nw], |i| {
        let (k, y, x) = (i / (nh * nw), i / nw % nh, i % nw);
        img.data()[(k * h + y) * w + x]
    }))
}
