//! File formats: 8-bit PNG images and masks, headed CSV tables, whitespace
//! separated number lists.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use mvc_core::{BinaryMask, Image, PixelBBox};

use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// First line of every numeric text output.
pub fn header(seed: Option<u64>) -> String {
    match seed {
        Some(s) => format!("# mvc {VERSION} seed={s}"),
        None => format!("# mvc {VERSION} seed=none"),
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a 1- or 3-channel image with values in `[0, 1]`. Encoder settings
/// are fixed so equal inputs give equal bytes.
pub fn write_png(path: &Path, img: &Image, seed: Option<u64>) -> Result<(), CliError> {
    let color = match img.channels() {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        n => {
            return Err(CliError::Internal(format!(
                "cannot write a {n}-channel image"
            )))
        }
    };
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut enc = png::Encoder::new(
        BufWriter::new(file),
        img.width() as u32,
        img.height() as u32,
    );
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_compression(png::Compression::Balanced);
    enc.set_filter(png::Filter::Sub);
    enc.add_text_chunk("Comment".into(), header(seed)[2..].to_string())
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let mut w = enc
        .write_header()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let bytes: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    w.write_image_data(&bytes)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    w.finish().map_err(|e| CliError::Internal(e.to_string()))
}

pub fn write_mask_png(path: &Path, mask: &BinaryMask, seed: Option<u64>) -> Result<(), CliError> {
    write_png(path, &mask.to_image(), seed)
}

/// Reads an 8- or 16-bit PNG as values in `[0, 1]`. Gray images give one
/// channel, color images three; alpha is dropped.
pub fn read_png(path: &Path) -> Result<Image, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut dec = png::Decoder::new(std::io::BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let bad = |e: png::DecodingError| CliError::Validation(format!("{}: {e}", path.display()));
    let mut reader = dec.read_info().map_err(bad)?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (src, keep) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => {
            return Err(CliError::Validation(format!(
                "{}: indexed PNG not expanded",
                path.display()
            )))
        }
    };
    let mut data = Vec::with_capacity(w * h * keep);
    for px in buf[..w * h * src].chunks_exact(src) {
        data.extend(px[..keep].iter().map(|&b| b as f64 / 255.0));
    }
    Image::from_vec(w, h, keep, data).map_err(CliError::from)
}

/// Reads a mask PNG: pixels at or above one half are foreground.
pub fn read_mask_png(path: &Path) -> Result<BinaryMask, CliError> {
    let img = read_png(path)?;
    Ok(BinaryMask::from_probs(&img.channel(0), 0.5))
}

/// Lines that are neither blank nor `#` comments.
pub fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn parse_numbers(path: &Path, line_no: usize, line: &str) -> Result<Vec<f64>, CliError> {
    line.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    CliError::Validation(format!("{}:{line_no}: bad number `{t}`", path.display()))
                })
        })
        .collect()
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// One row of a box table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxRow {
    pub frame: usize,
    pub cam: usize,
    pub bbox: PixelBBox,
}

pub const BOX_COLUMNS: &str = "frame,cam,cu,cv,w,h";

pub fn write_boxes(path: &Path, rows: &[BoxRow], seed: Option<u64>) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut go = || -> std::io::Result<()> {
        writeln!(w, "{}", header(seed))?;
        writeln!(w, "{BOX_COLUMNS}")?;
        for r in rows {
            let b = r.bbox;
            writeln!(w, "{},{},{},{},{},{}", r.frame, r.cam, b.cu, b.cv, b.w, b.h)?;
        }
        w.flush()
    };
    go().map_err(|e| CliError::io(path, e))
}

pub fn read_boxes(path: &Path) -> Result<Vec<BoxRow>, CliError> {
    let text = read_text(path)?;
    let mut rows = Vec::new();
    for (n, line) in data_lines(&text) {
        if line == BOX_COLUMNS {
            continue;
        }
        let v = parse_numbers(path, n, line)?;
        if v.len() != 6 || v[0] < 0.0 || v[1] < 0.0 || v[0].fract() != 0.0 || v[1].fract() != 0.0 {
            return Err(CliError::Validation(format!(
                "{}:{n}: expected `{BOX_COLUMNS}`",
                path.display()
            )));
        }
        rows.push(BoxRow {
            frame: v[0] as usize,
            cam: v[1] as usize,
            bbox: PixelBBox::new(v[2], v[3], v[4], v[5]),
        });
    }
    Ok(rows)
}

/// File name used for frame `t` of camera `c`.
pub fn view_name(t: usize, c: usize) -> String {
    format!("f{t:04}_c{c}.png")
}
