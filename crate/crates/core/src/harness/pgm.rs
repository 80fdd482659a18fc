//! Grayscale netpbm images: P2 (ASCII) and P5 (binary), maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::data::ImageSet;
use crate::numerics::DenseTensor;

const MAXVAL: usize = 255;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgmEncoding {
    Ascii,
    Binary,
}

struct Header {
    binary: bool,
    width: usize,
    height: usize,
    /// Offset of the first payload byte.
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let bad = |msg: String| Error::parse("pgm header", msg);
    let binary = match bytes.get(..2) {
        Some(b"P5") => true,
        Some(b"P2") => false,
        _ => return Err(bad("missing P2/P5 magic".into())),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(bad(format!("header field {} is not a number", k + 1)));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text.parse().map_err(|e| bad(format!("{text}: {e}")))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(bad(format!("degenerate size {width}x{height}")));
    }
    if maxval != MAXVAL {
        return Err(bad(format!("maxval {maxval}, only {MAXVAL} is supported")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("no whitespace after maxval".into()));
    }
    Ok(Header {
        binary,
        width,
        height,
        data_start: pos + 1,
    })
}

/// Parses PGM bytes into an `[H,W]` tensor with pixels scaled to `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<DenseTensor> {
    let h = parse_header(bytes)?;
    let n = h.width * h.height;
    let payload = &bytes[h.data_start..];
    let raw: Vec<usize> = if h.binary {
        if payload.len() < n {
            return Err(Error::parse(
                "pgm payload",
                format!("truncated: {} of {n} bytes", payload.len()),
            ));
        }
        payload[..n].iter().map(|&b| b as usize).collect()
    } else {
        let text = std::str::from_utf8(payload).map_err(|e| Error::parse("pgm payload", e.to_string()))?;
        let values = text
            .split_ascii_whitespace()
            .take(n)
            .map(|t| t.parse::<usize>().map_err(|e| Error::parse("pgm payload", format!("`{t}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() < n {
            return Err(Error::parse(
                "pgm payload",
                format!("truncated: {} of {n} values", values.len()),
            ));
        }
        values
    };
    if let Some(v) = raw.iter().find(|&&v| v > MAXVAL) {
        return Err(Error::parse("pgm payload", format!("value {v} above maxval")));
    }
    DenseTensor::new(
        vec![h.height, h.width],
        raw.into_iter().map(|v| v as f64 / MAXVAL as f64).collect(),
    )
}

/// Encodes an `[H,W]` tensor, rounding `[0, 1]` pixels to 8 bits.
pub fn encode_pgm(image: &DenseTensor, encoding: PgmEncoding) -> Result<Vec<u8>> {
    let [h, w] = *image.shape() else {
        return Err(Error::shape(format!("pgm needs [H,W], got {:?}", image.shape())));
    };
    let levels: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * MAXVAL as f64).round() as u8)
        .collect();
    let mut out = match encoding {
        PgmEncoding::Binary => format!("P5\n{w} {h}\n{MAXVAL}\n").into_bytes(),
        PgmEncoding::Ascii => format!("P2\n{w} {h}\n{MAXVAL}\n").into_bytes(),
    };
    match encoding {
        PgmEncoding::Binary => out.extend_from_slice(&levels),
        PgmEncoding::Ascii => {
            for row in levels.chunks(w) {
                let line: Vec<String> = row.iter().map(u8::to_string).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
        }
    }
    Ok(out)
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|e| match e {
        Error::Parse { context, message } => Error::parse(format!("{} ({context})", path.display()), message),
        other => other,
    })
}

pub fn save_pgm(path: impl AsRef<Path>, image: &DenseTensor, encoding: PgmEncoding) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(image, encoding)?).map_err(|e| Error::io(path, e))
}

/// Loads every `*.pgm` file in `dir`, in file-name order.
pub fn load_pgm_dir(dir: impl AsRef<Path>) -> Result<ImageSet> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "pgm"));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!("no .pgm files in {}", dir.display())));
    }
    let images = paths.iter().map(load_pgm).collect::<Result<Vec<_>>>()?;
    ImageSet::from_images(&images)
}

/// Writes `img_00000.pgm`, `img_00001.pgm`, ... into `dir`, creating it.
pub fn save_pgm_dir(dir: impl AsRef<Path>, images: &ImageSet, encoding: PgmEncoding) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for i in 0..images.len() {
        save_pgm(dir.join(format!("img_{i:05}.pgm")), &images.image_tensor(i), encoding)?;
    }
    Ok(())
}
