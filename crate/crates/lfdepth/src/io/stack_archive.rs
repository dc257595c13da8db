//! The `LFST` flower-stack archive.
//!
//! Header: magic `LFST`, version u32, then N, C, H, W as u32 little-endian.
//! Payload: `N*C*H*W` float32 little-endian values followed by N per-stack
//! records of `(q: i32, r: i32, cx: f32, cy: f32)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::hexgrid::AxialCoord;
use crate::plenoptic::FlowerStackBatch;

use super::FormatError;

pub const STACK_MAGIC: &[u8; 4] = b"LFST";
pub const STACK_VERSION: u32 = 1;

pub fn write_stack_archive(path: &Path, batch: &FlowerStackBatch) -> Result<(), FormatError> {
    let file = File::create(path).map_err(|e| FormatError::Io(path.into(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| FormatError::Io(path.into(), e);
    w.write_all(STACK_MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(STACK_VERSION).map_err(io_err)?;
    for dim in [batch.count, batch.channels, batch.height, batch.width] {
        w.write_u32::<LittleEndian>(dim as u32).map_err(io_err)?;
    }
    for &v in &batch.data {
        w.write_f32::<LittleEndian>(v).map_err(io_err)?;
    }
    for i in 0..batch.count {
        w.write_i32::<LittleEndian>(batch.coords[i].q).map_err(io_err)?;
        w.write_i32::<LittleEndian>(batch.coords[i].r).map_err(io_err)?;
        w.write_f32::<LittleEndian>(batch.centroids[i].0 as f32).map_err(io_err)?;
        w.write_f32::<LittleEndian>(batch.centroids[i].1 as f32).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_stack_archive(path: &Path) -> Result<FlowerStackBatch, FormatError> {
    let file = File::open(path).map_err(|e| FormatError::Io(path.into(), e))?;
    let mut r = BufReader::new(file);
    let io_err = |e| FormatError::Io(path.into(), e);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != STACK_MAGIC {
        return Err(FormatError::malformed(path, "bad magic, expected LFST"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
    if version != STACK_VERSION {
        return Err(FormatError::malformed(path, format!("unsupported version {version}")));
    }
    let count = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    let channels = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    let height = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    let width = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    if count == 0 {
        return Err(FormatError::malformed(path, "archive holds no stacks"));
    }

    let mut data = vec![0.0f32; count * channels * height * width];
    r.read_f32_into::<LittleEndian>(&mut data).map_err(io_err)?;
    let mut coords = Vec::with_capacity(count);
    let mut centroids = Vec::with_capacity(count);
    for _ in 0..count {
        let q = r.read_i32::<LittleEndian>().map_err(io_err)?;
        let rr = r.read_i32::<LittleEndian>().map_err(io_err)?;
        let cx = r.read_f32::<LittleEndian>().map_err(io_err)?;
        let cy = r.read_f32::<LittleEndian>().map_err(io_err)?;
        coords.push(AxialCoord::new(q, rr));
        centroids.push((cx as f64, cy as f64));
    }
    Ok(FlowerStackBatch { count, channels, height, width, data, coords, centroids })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archive_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stacks.lfst");
        let batch = FlowerStackBatch {
            count: 2,
            channels: 3,
            height: 2,
            width: 2,
            data: (0..24).map(|v| v as f32 * 0.5).collect(),
            coords: vec![AxialCoord::new(-1, 2), AxialCoord::new(3, -4)],
            centroids: vec![(10.5, 20.25), (30.0, 40.75)],
        };
        write_stack_archive(&path, &batch).unwrap();
        let back = read_stack_archive(&path).unwrap();
        assert_eq!(back, batch);
    }
}
