//! Grayscale frame sequences as directories of binary PGM files.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{GraymapHeader, PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType};

use crate::error::{Error, Result};
use crate::transform::ImageShape;

/// Sample depth of written frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

fn frame_error(path: &Path, message: impl ToString) -> Error {
    Error::Frame {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Reads one PGM into `[0, 1]`. Samples arrive rescaled to the full 8- or
/// 16-bit range whatever the file's maxval.
pub fn read_pgm(path: &Path) -> Result<(ImageShape, Vec<f64>)> {
    let file = File::open(path).map_err(|e| frame_error(path, e))?;
    let decoder = PnmDecoder::new(BufReader::new(file)).map_err(|e| frame_error(path, e))?;
    let header = decoder.header();
    if !matches!(header.subtype(), PnmSubtype::Graymap(_)) {
        return Err(frame_error(path, "not a grayscale PGM"));
    }
    let (w, h) = (header.width() as usize, header.height() as usize);
    let shape = ImageShape::new(h, w).map_err(|e| frame_error(path, e))?;
    let pixels = match DynamicImage::from_decoder(decoder).map_err(|e| frame_error(path, e))? {
        DynamicImage::ImageLuma8(img) => img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(img) => img.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        _ => return Err(frame_error(path, "unexpected sample layout")),
    };
    Ok((shape, pixels))
}

/// Writes one binary PGM; intensities are clamped to `[0, 1]` and rounded.
pub fn write_pgm(path: &Path, shape: ImageShape, pixels: &[f64], depth: BitDepth) -> Result<()> {
    if pixels.len() != shape.n() {
        return Err(frame_error(path, format!("{} pixels for shape {shape}", pixels.len())));
    }
    let max = depth.max_value() as f64;
    let quantize = |v: f64| (v.clamp(0.0, 1.0) * max).round();
    let file = File::create(path).map_err(|e| frame_error(path, e))?;
    let (w, h) = (shape.width as u32, shape.height as u32);
    let header = GraymapHeader {
        encoding: SampleEncoding::Binary,
        height: h,
        width: w,
        maxwhite: depth.max_value(),
    };
    let mut enc = PnmEncoder::new(BufWriter::new(file)).with_header(header.into());
    let written = match depth {
        BitDepth::Eight => {
            let buf: Vec<u8> = pixels.iter().map(|&v| quantize(v) as u8).collect();
            enc.encode(buf.as_slice(), w, h, ExtendedColorType::L8)
        }
        BitDepth::Sixteen => {
            let buf: Vec<u16> = pixels.iter().map(|&v| quantize(v) as u16).collect();
            enc.encode(buf.as_slice(), w, h, ExtendedColorType::L16)
        }
    };
    written.map_err(|e| frame_error(path, e))
}

/// `frame_00042.pgm` for index 42.
pub fn frame_name(index: usize) -> String {
    format!("frame_{index:05}.pgm")
}

/// The `.pgm` files of a directory, sorted by name.
pub fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| frame_error(dir, e))? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Reads every frame of a directory in filename order. All frames must share
/// one shape.
pub fn read_frames(dir: &Path) -> Result<(ImageShape, Vec<Vec<f64>>)> {
    let paths = frame_paths(dir)?;
    let Some(first) = paths.first() else {
        return Err(frame_error(dir, "no .pgm frames in directory"));
    };
    let (shape, img) = read_pgm(first)?;
    let mut frames = vec![img];
    for path in &paths[1..] {
        let (s, img) = read_pgm(path)?;
        if s != shape {
            return Err(frame_error(path, format!("shape {s} differs from {shape} of the first frame")));
        }
        frames.push(img);
    }
    Ok((shape, frames))
}

/// Writes `frames` as `frame_00000.pgm`, `frame_00001.pgm`, … creating `dir`.
pub fn write_frames(dir: &Path, shape: ImageShape, frames: &[Vec<f64>], depth: BitDepth) -> Result<()> {
    if frames.is_empty() {
        return Err(frame_error(dir, "no frames to write"));
    }
    std::fs::create_dir_all(dir).map_err(|e| frame_error(dir, e))?;
    for (t, f) in frames.iter().enumerate() {
        write_pgm(&dir.join(frame_name(t)), shape, f, depth)?;
    }
    Ok(())
}

/// Lays images side by side in one row, `gap` pixels apart, each rescaled to
/// span `[0, 1]`.
pub fn montage(shape: ImageShape, images: &[Vec<f64>], gap: usize) -> Result<(ImageShape, Vec<f64>)> {
    let k = images.len().max(1);
    let out_shape = ImageShape::new(shape.height, k * shape.width + (k - 1) * gap)?;
    let mut out = vec![0.0; out_shape.n()];
    for (i, img) in images.iter().enumerate() {
        let lo = img.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = img.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        for r in 0..shape.height {
            for c in 0..shape.width {
                out[out_shape.index(r, i * (shape.width + gap) + c)] = (img[shape.index(r, c)] - lo) / span;
            }
        }
    }
    Ok((out_shape, out))
}
