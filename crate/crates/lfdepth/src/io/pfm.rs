//! PFM float images.
//!
//! Grayscale `Pf` maps with scale `-1.0` (little-endian) and the standard
//! bottom-to-top row order. Values are stored as float32; in-memory maps use
//! f64, so writing truncates to f32 precision.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};

use super::FormatError;

/// A raw PFM payload: row-major, top-down, one f32 per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

/// Reads a grayscale PFM file into top-down row-major order.
pub fn read_pfm(path: &Path) -> Result<PfmImage, FormatError> {
    let file = File::open(path).map_err(|e| FormatError::Io(path.into(), e))?;
    let mut reader = BufReader::new(file);

    let magic = read_line_token(&mut reader, path)?;
    if magic != "Pf" {
        return Err(FormatError::malformed(path, format!("expected Pf, got {magic:?}")));
    }
    let dims = read_line_token(&mut reader, path)?;
    let mut it = dims.split_whitespace();
    let width: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| FormatError::malformed(path, "missing width"))?;
    let height: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| FormatError::malformed(path, "missing height"))?;
    let scale: f32 = read_line_token(&mut reader, path)?
        .parse()
        .map_err(|_| FormatError::malformed(path, "invalid scale"))?;
    let little_endian = scale < 0.0;

    let mut raw = vec![0u8; width * height * 4];
    reader
        .read_exact(&mut raw)
        .map_err(|e| FormatError::Io(path.into(), e))?;

    // PFM rows are stored bottom-up; flip while decoding.
    let mut values = vec![0.0f32; width * height];
    for file_row in 0..height {
        let out_row = height - 1 - file_row;
        let src = &raw[file_row * width * 4..(file_row + 1) * width * 4];
        let dst = &mut values[out_row * width..(out_row + 1) * width];
        for (chunk, v) in src.chunks_exact(4).zip(dst.iter_mut()) {
            let bytes = [chunk[0], chunk[1], chunk[2], chunk[3]];
            *v = if little_endian {
                f32::from_le_bytes(bytes)
            } else {
                f32::from_be_bytes(bytes)
            };
        }
    }
    Ok(PfmImage { width, height, values })
}

/// Writes a grayscale PFM (scale `-1.0`) from top-down row-major values.
pub fn write_pfm(path: &Path, img: &PfmImage) -> Result<(), FormatError> {
    assert_eq!(img.values.len(), img.width * img.height);
    let file = File::create(path).map_err(|e| FormatError::Io(path.into(), e))?;
    let mut writer = BufWriter::new(file);
    let io_err = |e| FormatError::Io(path.into(), e);
    write!(writer, "Pf\n{} {}\n-1.0\n", img.width, img.height).map_err(io_err)?;
    for file_row in 0..img.height {
        let src_row = img.height - 1 - file_row;
        for &v in &img.values[src_row * img.width..(src_row + 1) * img.width] {
            writer.write_f32::<LittleEndian>(v).map_err(io_err)?;
        }
    }
    writer.flush().map_err(io_err)
}

/// Reads one header line (up to `\n`), trimming the trailing newline.
fn read_line_token<R: Read>(reader: &mut R, path: &Path) -> Result<String, FormatError> {
    let mut line = String::new();
    let mut byte = [0u8; 1];
    loop {
        if reader.read(&mut byte).map_err(|e| FormatError::Io(path.into(), e))? == 0 {
            return Err(FormatError::malformed(path, "unexpected end of header"));
        }
        if byte[0] == b'\n' {
            return Ok(line.trim().to_string());
        }
        line.push(byte[0] as char);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_preserves_row_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pfm");
        let img = PfmImage {
            width: 3,
            height: 2,
            values: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        };
        write_pfm(&path, &img).unwrap();
        let back = read_pfm(&path).unwrap();
        assert_eq!((back.width, back.height), (3, 2));
        assert_eq!(back.values, img.values);
    }

    #[test]
    fn pfm_preserves_nan_and_negative() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pfm");
        let img = PfmImage {
            width: 2,
            height: 1,
            values: vec![f32::NAN, -3.5],
        };
        write_pfm(&path, &img).unwrap();
        let back = read_pfm(&path).unwrap();
        assert!(back.values[0].is_nan());
        assert_eq!(back.values[1], -3.5);
    }
}
