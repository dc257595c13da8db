//! Binary PGM/PPM readers and writers.
//!
//! Raw Bayer frames travel as 16-bit `P5` PGM with big-endian samples (the
//! netpbm convention for maxval > 255). Visualization images are 8-bit `P6`
//! PPM.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::FormatError;

/// Reads a 16-bit binary PGM (`P5`, maxval 65535, big-endian samples).
pub fn read_pgm16(path: &Path) -> Result<(usize, usize, Vec<u16>), FormatError> {
    let file = File::open(path).map_err(|e| FormatError::Io(path.into(), e))?;
    let mut reader = BufReader::new(file);

    let magic = read_token(&mut reader, path)?;
    if magic != "P5" {
        return Err(FormatError::malformed(path, format!("expected P5, got {magic:?}")));
    }
    let width = parse_dim(&read_token(&mut reader, path)?, path)?;
    let height = parse_dim(&read_token(&mut reader, path)?, path)?;
    let maxval = parse_dim(&read_token(&mut reader, path)?, path)?;
    if maxval != 65535 {
        return Err(FormatError::malformed(path, format!("expected maxval 65535, got {maxval}")));
    }

    let mut raw = vec![0u8; width * height * 2];
    reader
        .read_exact(&mut raw)
        .map_err(|e| FormatError::Io(path.into(), e))?;
    let samples = raw
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok((width, height, samples))
}

/// Writes a 16-bit binary PGM with big-endian samples.
pub fn write_pgm16(path: &Path, width: usize, height: usize, samples: &[u16]) -> Result<(), FormatError> {
    assert_eq!(samples.len(), width * height, "sample count must match dimensions");
    let file = File::create(path).map_err(|e| FormatError::Io(path.into(), e))?;
    let mut writer = BufWriter::new(file);
    let io_err = |e| FormatError::Io(path.into(), e);
    write!(writer, "P5\n{width} {height}\n65535\n").map_err(io_err)?;
    let mut buf = Vec::with_capacity(samples.len() * 2);
    for &s in samples {
        buf.extend_from_slice(&s.to_be_bytes());
    }
    writer.write_all(&buf).map_err(io_err)?;
    writer.flush().map_err(io_err)
}

/// Reads an 8-bit binary PPM (`P6`, maxval 255). Returns interleaved RGB bytes.
pub fn read_ppm8(path: &Path) -> Result<(usize, usize, Vec<u8>), FormatError> {
    let file = File::open(path).map_err(|e| FormatError::Io(path.into(), e))?;
    let mut reader = BufReader::new(file);

    let magic = read_token(&mut reader, path)?;
    if magic != "P6" {
        return Err(FormatError::malformed(path, format!("expected P6, got {magic:?}")));
    }
    let width = parse_dim(&read_token(&mut reader, path)?, path)?;
    let height = parse_dim(&read_token(&mut reader, path)?, path)?;
    let maxval = parse_dim(&read_token(&mut reader, path)?, path)?;
    if maxval != 255 {
        return Err(FormatError::malformed(path, format!("expected maxval 255, got {maxval}")));
    }

    let mut rgb = vec![0u8; width * height * 3];
    reader
        .read_exact(&mut rgb)
        .map_err(|e| FormatError::Io(path.into(), e))?;
    Ok((width, height, rgb))
}

/// Writes an 8-bit binary PPM from interleaved RGB bytes.
pub fn write_ppm8(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<(), FormatError> {
    assert_eq!(rgb.len(), width * height * 3, "rgb length must match dimensions");
    let file = File::create(path).map_err(|e| FormatError::Io(path.into(), e))?;
    let mut writer = BufWriter::new(file);
    let io_err = |e| FormatError::Io(path.into(), e);
    write!(writer, "P6\n{width} {height}\n255\n").map_err(io_err)?;
    writer.write_all(rgb).map_err(io_err)?;
    writer.flush().map_err(io_err)
}

/// Reads the next whitespace-delimited token, skipping `#` comment lines.
fn read_token<R: Read>(reader: &mut R, path: &Path) -> Result<String, FormatError> {
    let mut token = String::new();
    let mut byte = [0u8; 1];
    let mut in_comment = false;
    loop {
        if reader.read(&mut byte).map_err(|e| FormatError::Io(path.into(), e))? == 0 {
            if token.is_empty() {
                return Err(FormatError::malformed(path, "unexpected end of header"));
            }
            return Ok(token);
        }
        let c = byte[0] as char;
        if in_comment {
            if c == '\n' {
                in_comment = false;
            }
            continue;
        }
        if c == '#' && token.is_empty() {
            in_comment = true;
            continue;
        }
        if c.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            return Ok(token);
        }
        token.push(c);
    }
}

fn parse_dim(token: &str, path: &Path) -> Result<usize, FormatError> {
    token
        .parse::<usize>()
        .map_err(|_| FormatError::malformed(path, format!("invalid header field {token:?}")))
}
