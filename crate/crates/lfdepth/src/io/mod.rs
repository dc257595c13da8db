//! On-disk formats shared by every pipeline stage.
//!
//! All binary formats are pinned so that reruns with identical inputs are
//! byte-for-byte reproducible:
//!
//! - 16-bit binary PGM (`P5`, big-endian samples) for raw Bayer frames,
//! - binary PPM (`P6`, 8-bit) for visualization images,
//! - PFM (`Pf`, float32 little-endian, scale `-1.0`, bottom-up rows) for
//!   disparity and depth maps,
//! - `LFST` flower-stack archives,
//! - `MLDN` network weight files,
//! - key/value calibration and configuration text files,
//! - CSV for sparse depth samples (`q,r,u,v,depth_m`) and loss histories.

mod kv;
mod pfm;
mod pnm;
mod sparse_csv;
mod stack_archive;
pub mod weights;

pub use kv::{parse_kv_str, read_kv_file, write_kv_file, KvMap};
pub use pfm::{read_pfm, write_pfm, PfmImage};
pub use pnm::{read_pgm16, read_ppm8, write_pgm16, write_ppm8};
pub use sparse_csv::{read_loss_csv, read_sparse_csv, write_loss_csv, write_sparse_csv};
pub use stack_archive::{read_stack_archive, write_stack_archive};
pub use weights::{read_weights, write_weights};

use std::fmt;
use std::io;
use std::path::PathBuf;

/// Errors produced while reading or writing pipeline files.
#[derive(Debug)]
pub enum FormatError {
    /// Underlying I/O failure, annotated with the path involved.
    Io(PathBuf, io::Error),
    /// The file exists but its content does not match the expected format.
    Malformed { path: PathBuf, detail: String },
}

impl FormatError {
    pub(crate) fn malformed(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        FormatError::Malformed {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatError::Io(path, err) => write!(f, "{}: {}", path.display(), err),
            FormatError::Malformed { path, detail } => {
                write!(f, "{}: malformed file: {}", path.display(), detail)
            }
        }
    }
}

impl std::error::Error for FormatError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            FormatError::Io(_, err) => Some(err),
            FormatError::Malformed { .. } => None,
        }
    }
}
