//! CSV formats: sparse depth samples (`q,r,u,v,depth_m`) and training loss
//! histories (`epoch,mean_loss`).

use std::fs;
use std::path::Path;

use crate::hexgrid::AxialCoord;
use crate::net::{DepthSource, SparseDepthMap, SparseSample};

use super::FormatError;

pub fn write_sparse_csv(path: &Path, map: &SparseDepthMap) -> Result<(), FormatError> {
    let mut out = String::from("q,r,u,v,depth_m\n");
    for s in map.samples() {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.9}\n",
            s.coord.q, s.coord.r, s.position.0, s.position.1, s.depth_m
        ));
    }
    fs::write(path, out).map_err(|e| FormatError::Io(path.into(), e))
}

pub fn read_sparse_csv(path: &Path, source: DepthSource) -> Result<SparseDepthMap, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::Io(path.into(), e))?;
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line.trim() != "q,r,u,v,depth_m" {
                return Err(FormatError::malformed(path, "expected header q,r,u,v,depth_m"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(FormatError::malformed(path, format!("line {}: expected 5 fields", lineno + 1)));
        }
        let parse_err =
            || FormatError::malformed(path, format!("line {}: invalid number", lineno + 1));
        let q: i32 = fields[0].trim().parse().map_err(|_| parse_err())?;
        let r: i32 = fields[1].trim().parse().map_err(|_| parse_err())?;
        let u: f64 = fields[2].trim().parse().map_err(|_| parse_err())?;
        let v: f64 = fields[3].trim().parse().map_err(|_| parse_err())?;
        let depth: f64 = fields[4].trim().parse().map_err(|_| parse_err())?;
        if !depth.is_finite() {
            return Err(FormatError::malformed(path, format!("line {}: non-finite depth", lineno + 1)));
        }
        samples.push(SparseSample { coord: AxialCoord::new(q, r), position: (u, v), depth_m: depth });
    }
    Ok(SparseDepthMap::new(source, samples))
}

pub fn write_loss_csv(path: &Path, history: &[f64]) -> Result<(), FormatError> {
    let mut out = String::from("epoch,mean_loss\n");
    for (epoch, loss) in history.iter().enumerate() {
        out.push_str(&format!("{},{:.12e}\n", epoch + 1, loss));
    }
    fs::write(path, out).map_err(|e| FormatError::Io(path.into(), e))
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<f64>, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::Io(path.into(), e))?;
    let mut history = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let (_, loss) = line
            .split_once(',')
            .ok_or_else(|| FormatError::malformed(path, format!("line {}: expected two fields", lineno + 1)))?;
        history.push(
            loss.trim()
                .parse()
                .map_err(|_| FormatError::malformed(path, format!("line {}: invalid loss", lineno + 1)))?,
        );
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sparse.csv");
        let map = SparseDepthMap::new(
            DepthSource::StereoGt,
            vec![
                SparseSample { coord: AxialCoord::new(0, 0), position: (12.5, 9.25), depth_m: 1.75 },
                SparseSample { coord: AxialCoord::new(-2, 5), position: (100.0, 50.0), depth_m: 0.5 },
            ],
        );
        write_sparse_csv(&path, &map).unwrap();
        let back = read_sparse_csv(&path, DepthSource::StereoGt).unwrap();
        assert_eq!(back.len(), 2);
        let s = back.get(AxialCoord::new(-2, 5)).unwrap();
        assert!((s.depth_m - 0.5).abs() < 1e-12);
        assert!((s.position.0 - 100.0).abs() < 1e-6);
    }

    #[test]
    fn loss_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let history = vec![4.25, 1.0e-3, 7.5e-7];
        write_loss_csv(&path, &history).unwrap();
        let back = read_loss_csv(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in back.iter().zip(&history) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn bad_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sparse.csv");
        std::fs::write(&path, "a,b,c\n").unwrap();
        assert!(read_sparse_csv(&path, DepthSource::Predicted).is_err());
    }
}
