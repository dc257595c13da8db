//! LFS capture ingestion.
//!
//! A capture directory is described by a `capture.cfg` manifest naming the
//! four per-scene assets: the raw plenoptic frame (16-bit PGM), the
//! manufacturer virtual-depth map (PFM), the natural image (PPM) and the
//! stereo depth (PFM). The dataset-level split manifest is a CSV of
//! `id,role` lines with roles `train`/`test`. Writing ingestion against
//! these manifests keeps the adapter to any concrete on-disk layout in one
//! place.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::align::DepthMap;
use crate::io::{read_kv_file, read_pfm, read_pgm16, read_ppm8, FormatError, PfmImage};
use crate::plenoptic::{BayerPattern, RawBayerImage, RgbImage};

use super::ops::write_depth_pfm;
use super::{virtual_to_metric, PipelineConfig, PipelineError, ThinLensParams};

/// Manifest filename inside a capture directory.
pub const CAPTURE_MANIFEST: &str = "capture.cfg";

#[derive(Debug)]
pub enum IngestError {
    /// A manifest key or the file it names is absent.
    MissingAsset { key: String, path: Option<PathBuf> },
    Format(FormatError),
    /// Assets of the same frame disagree on dimensions.
    InconsistentDimensions(String),
}

impl fmt::Display for IngestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IngestError::MissingAsset { key, path } => match path {
                Some(p) => write!(f, "asset `{key}` missing: {}", p.display()),
                None => write!(f, "capture manifest lacks the `{key}` asset"),
            },
            IngestError::Format(e) => write!(f, "{e}"),
            IngestError::InconsistentDimensions(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for IngestError {}

impl From<FormatError> for IngestError {
    fn from(e: FormatError) -> Self {
        IngestError::Format(e)
    }
}

impl From<IngestError> for PipelineError {
    fn from(e: IngestError) -> Self {
        PipelineError::Data(format!("ingest: {e}"))
    }
}

/// One validated LFS capture: the four per-scene assets.
#[derive(Debug)]
pub struct LfsCapture {
    pub plenoptic: RawBayerImage,
    /// Manufacturer virtual depths, plenoptic frame.
    pub virtual_depth: PfmImage,
    /// Reconstructed central-view image.
    pub natural: RgbImage,
    /// Stereo metric depth in the natural-image frame.
    pub stereo_depth: DepthMap,
}

/// Loads and validates a capture directory via its manifest.
pub fn ingest_lfs(dir: &Path) -> Result<LfsCapture, IngestError> {
    let manifest_path = dir.join(CAPTURE_MANIFEST);
    if !manifest_path.is_file() {
        return Err(IngestError::MissingAsset {
            key: CAPTURE_MANIFEST.to_string(),
            path: Some(manifest_path),
        });
    }
    let manifest = read_kv_file(&manifest_path)?;
    let asset = |key: &str| -> Result<PathBuf, IngestError> {
        let rel = manifest
            .get(key)
            .ok_or_else(|| IngestError::MissingAsset { key: key.to_string(), path: None })?;
        let path = dir.join(rel);
        if !path.is_file() {
            return Err(IngestError::MissingAsset { key: key.to_string(), path: Some(path) });
        }
        Ok(path)
    };

    let pattern = manifest
        .get("bayer_pattern")
        .map(|v| {
            BayerPattern::parse(v).ok_or_else(|| {
                IngestError::Format(FormatError::malformed(
                    &manifest_path,
                    format!("unknown bayer pattern {v:?}"),
                ))
            })
        })
        .transpose()?
        .unwrap_or(BayerPattern::Rggb);

    let (pw, ph, samples) = read_pgm16(&asset("plenoptic")?)?;
    let plenoptic = RawBayerImage::new(pw, ph, pattern, samples);
    let virtual_depth = read_pfm(&asset("virtual_depth")?)?;
    if (virtual_depth.width, virtual_depth.height) != (pw, ph) {
        return Err(IngestError::InconsistentDimensions(format!(
            "plenoptic is {pw}x{ph} but virtual depth is {}x{}",
            virtual_depth.width, virtual_depth.height
        )));
    }

    let (nw, nh, rgb) = read_ppm8(&asset("natural")?)?;
    let mut natural = RgbImage::zeros(nw, nh);
    for y in 0..nh {
        for x in 0..nw {
            for c in 0..3 {
                natural.set(c, x, y, rgb[(y * nw + x) * 3 + c] as f32 / 255.0);
            }
        }
    }

    let stereo = read_pfm(&asset("stereo_depth")?)?;
    if (stereo.width, stereo.height) != (nw, nh) {
        return Err(IngestError::InconsistentDimensions(format!(
            "natural is {nw}x{nh} but stereo depth is {}x{}",
            stereo.width, stereo.height
        )));
    }
    let valid = stereo.values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
    let values = stereo.values.iter().map(|&v| v as f64).collect();
    let stereo_depth = DepthMap::from_parts(stereo.width, stereo.height, values, valid);

    Ok(LfsCapture { plenoptic, virtual_depth, natural, stereo_depth })
}

/// Parses the dataset split manifest: `id,role` lines with roles
/// `train` / `test`.
pub fn read_split_manifest(path: &Path) -> Result<(Vec<String>, Vec<String>), PipelineError> {
    let text =
        fs::read_to_string(path).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, role) = line.split_once(',').ok_or_else(|| {
            PipelineError::Data(format!("{}: line {}: expected id,role", path.display(), lineno + 1))
        })?;
        match role.trim() {
            "train" => train.push(id.trim().to_string()),
            "test" => test.push(id.trim().to_string()),
            other => {
                return Err(PipelineError::Data(format!(
                    "{}: line {}: unknown role {other:?}",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    Ok((train, test))
}

/// The `ingest` subcommand: validate a capture, convert its virtual depths
/// to metric through the thin-lens model, and report the dataset split.
pub fn ingest_op(cfg: &PipelineConfig) -> Result<PathBuf, PipelineError> {
    const STAGE: &str = "ingest";
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| PipelineError::Data(format!("cannot create {}: {e}", cfg.out_dir.display())))?;
    let dir = cfg
        .capture_dir
        .as_deref()
        .ok_or_else(|| PipelineError::Usage(format!("{STAGE}: config key `capture_dir` is required")))?;
    let capture = ingest_lfs(dir)?;

    // Convert virtual depths; pixels outside the thin-lens domain or
    // non-finite inputs become invalid.
    let thin = ThinLensParams::from_config(cfg);
    let (w, h) = (capture.virtual_depth.width, capture.virtual_depth.height);
    let mut metric = DepthMap::new_invalid(w, h);
    let mut converted = 0usize;
    for y in 0..h {
        for x in 0..w {
            let v = capture.virtual_depth.values[y * w + x] as f64;
            if !v.is_finite() || v == 0.0 {
                continue;
            }
            if let Ok(z) = virtual_to_metric(v, &thin) {
                metric.set(x, y, z);
                converted += 1;
            }
        }
    }
    let out = cfg.out_dir.join("metric_from_virtual.pfm");
    write_depth_pfm(&out, &metric, STAGE)?;

    if let Some(split) = &cfg.split_manifest {
        let (train, test) = read_split_manifest(split)?;
        println!("{STAGE}: split {} train / {} test", train.len(), test.len());
    }
    println!(
        "{STAGE}: capture ok ({}x{} plenoptic, {}x{} natural, {converted} virtual depths converted)",
        capture.plenoptic.width,
        capture.plenoptic.height,
        capture.natural.width(),
        capture.natural.height()
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{write_pfm, write_pgm16, write_ppm8};

    fn write_capture(dir: &Path, with_stereo: bool) {
        write_pgm16(&dir.join("plen.pgm"), 4, 4, &vec![1000u16; 16]).unwrap();
        write_pfm(
            &dir.join("virt.pfm"),
            &PfmImage { width: 4, height: 4, values: vec![2.0; 16] },
        )
        .unwrap();
        write_ppm8(&dir.join("nat.ppm"), 6, 4, &vec![128u8; 72]).unwrap();
        if with_stereo {
            write_pfm(
                &dir.join("stereo.pfm"),
                &PfmImage { width: 6, height: 4, values: vec![1.5; 24] },
            )
            .unwrap();
        }
        let mut manifest = String::new();
        manifest.push_str("plenoptic = plen.pgm\nvirtual_depth = virt.pfm\nnatural = nat.ppm\n");
        manifest.push_str("stereo_depth = stereo.pfm\nbayer_pattern = RGGB\n");
        fs::write(dir.join(CAPTURE_MANIFEST), manifest).unwrap();
    }

    #[test]
    fn complete_capture_loads() {
        let dir = tempfile::tempdir().unwrap();
        write_capture(dir.path(), true);
        let capture = ingest_lfs(dir.path()).unwrap();
        assert_eq!(capture.plenoptic.width, 4);
        assert_eq!(capture.natural.width(), 6);
        assert_eq!(capture.stereo_depth.valid_count(), 24);
    }

    #[test]
    fn missing_stereo_depth_is_missing_asset() {
        let dir = tempfile::tempdir().unwrap();
        write_capture(dir.path(), false);
        match ingest_lfs(dir.path()).unwrap_err() {
            IngestError::MissingAsset { key, .. } => assert_eq!(key, "stereo_depth"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn split_manifest_59_into_49_10() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.csv");
        let mut text = String::new();
        for i in 0..59 {
            let role = if i < 49 { "train" } else { "test" };
            text.push_str(&format!("capture_{i:03},{role}\n"));
        }
        fs::write(&path, text).unwrap();
        let (train, test) = read_split_manifest(&path).unwrap();
        assert_eq!(train.len(), 49);
        assert_eq!(test.len(), 10);
    }
}
