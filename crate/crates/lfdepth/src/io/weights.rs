//! The `MLDN` network weight file.
//!
//! Layout: magic `MLDN`, version u32, layer count u32, then per layer a
//! kind byte, a shape rank byte, the shape dims as u32, and the layer's
//! float32 little-endian data arrays in fixed order (weight/bias for conv,
//! fully-connected and transposed conv; gamma/beta/running mean/running var
//! for batch norm). Array lengths follow from the kind and dims, so the
//! format is self-contained.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::FormatError;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"MLDN";
pub const WEIGHTS_VERSION: u32 = 1;

pub const KIND_CONV: u8 = 1;
pub const KIND_BATCHNORM: u8 = 2;
pub const KIND_RELU: u8 = 3;
pub const KIND_FULLY_CONNECTED: u8 = 4;
pub const KIND_TRANSPOSED_CONV: u8 = 5;

/// One serialized layer: kind, primary shape, data arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct RawLayerRecord {
    pub kind: u8,
    pub dims: Vec<u32>,
    pub arrays: Vec<Vec<f32>>,
}

/// Array lengths implied by a layer's kind and dims.
fn array_lengths(kind: u8, dims: &[u32], path: &Path) -> Result<Vec<usize>, FormatError> {
    let prod = |d: &[u32]| d.iter().map(|&v| v as usize).product::<usize>();
    match kind {
        KIND_CONV | KIND_TRANSPOSED_CONV => {
            if dims.len() != 4 {
                return Err(FormatError::malformed(path, "conv layer requires rank-4 dims"));
            }
            // Bias length: out channels (dims[0] for conv, dims[1] for
            // transposed conv, whose weights are (in, out, k, k)).
            let bias = if kind == KIND_CONV { dims[0] } else { dims[1] } as usize;
            Ok(vec![prod(dims), bias])
        }
        KIND_BATCHNORM => {
            if dims.len() != 1 {
                return Err(FormatError::malformed(path, "batchnorm requires rank-1 dims"));
            }
            let c = dims[0] as usize;
            Ok(vec![c, c, c, c])
        }
        KIND_RELU => {
            if !dims.is_empty() {
                return Err(FormatError::malformed(path, "relu layers carry no dims"));
            }
            Ok(vec![])
        }
        KIND_FULLY_CONNECTED => {
            if dims.len() != 2 {
                return Err(FormatError::malformed(path, "fully connected requires rank-2 dims"));
            }
            Ok(vec![prod(dims), dims[0] as usize])
        }
        other => Err(FormatError::malformed(path, format!("unknown layer kind {other}"))),
    }
}

pub fn write_weights(path: &Path, records: &[RawLayerRecord]) -> Result<(), FormatError> {
    let file = File::create(path).map_err(|e| FormatError::Io(path.into(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| FormatError::Io(path.into(), e);
    w.write_all(WEIGHTS_MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(WEIGHTS_VERSION).map_err(io_err)?;
    w.write_u32::<LittleEndian>(records.len() as u32).map_err(io_err)?;
    for rec in records {
        w.write_u8(rec.kind).map_err(io_err)?;
        w.write_u8(rec.dims.len() as u8).map_err(io_err)?;
        for &d in &rec.dims {
            w.write_u32::<LittleEndian>(d).map_err(io_err)?;
        }
        let expected = array_lengths(rec.kind, &rec.dims, path)?;
        assert_eq!(
            expected.len(),
            rec.arrays.len(),
            "record arrays must match the layer kind"
        );
        for (arr, len) in rec.arrays.iter().zip(expected) {
            assert_eq!(arr.len(), len, "array length must match dims");
            for &v in arr {
                w.write_f32::<LittleEndian>(v).map_err(io_err)?;
            }
        }
    }
    w.flush().map_err(io_err)
}

pub fn read_weights(path: &Path) -> Result<Vec<RawLayerRecord>, FormatError> {
    let file = File::open(path).map_err(|e| FormatError::Io(path.into(), e))?;
    let mut r = BufReader::new(file);
    let io_err = |e| FormatError::Io(path.into(), e);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(FormatError::malformed(path, "bad magic, expected MLDN"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
    if version != WEIGHTS_VERSION {
        return Err(FormatError::malformed(path, format!("unsupported version {version}")));
    }
    let count = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = r.read_u8().map_err(io_err)?;
        let rank = r.read_u8().map_err(io_err)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.read_u32::<LittleEndian>().map_err(io_err)?);
        }
        let lengths = array_lengths(kind, &dims, path)?;
        let mut arrays = Vec::with_capacity(lengths.len());
        for len in lengths {
            let mut arr = vec![0.0f32; len];
            r.read_f32_into::<LittleEndian>(&mut arr).map_err(io_err)?;
            arrays.push(arr);
        }
        records.push(RawLayerRecord { kind, dims, arrays });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_mixed_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.mldn");
        let records = vec![
            RawLayerRecord {
                kind: KIND_CONV,
                dims: vec![2, 1, 3, 3],
                arrays: vec![(0..18).map(|v| v as f32).collect(), vec![0.5, -0.5]],
            },
            RawLayerRecord {
                kind: KIND_BATCHNORM,
                dims: vec![2],
                arrays: vec![vec![1.0, 1.0], vec![0.0, 0.0], vec![0.1, 0.2], vec![0.9, 1.1]],
            },
            RawLayerRecord { kind: KIND_RELU, dims: vec![], arrays: vec![] },
            RawLayerRecord {
                kind: KIND_FULLY_CONNECTED,
                dims: vec![2, 4],
                arrays: vec![(0..8).map(|v| v as f32 * 0.25).collect(), vec![1.0, 2.0]],
            },
            RawLayerRecord {
                kind: KIND_TRANSPOSED_CONV,
                dims: vec![1, 2, 3, 3],
                arrays: vec![(0..18).map(|v| -v as f32).collect(), vec![0.0, 3.0]],
            },
        ];
        write_weights(&path, &records).unwrap();
        let back = read_weights(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.mldn");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(matches!(read_weights(&path), Err(FormatError::Malformed { .. })));
    }
}
