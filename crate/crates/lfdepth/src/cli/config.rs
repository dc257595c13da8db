//! Pipeline configuration: defaults, key/value parsing, and the
//! calibration file formats.
//!
//! Every stage parameter lives in one flat [`PipelineConfig`]. A config
//! file is `key = value` text; CLI flags mirror the keys and override the
//! file; `LFDEPTH_OUT_DIR` overrides the output directory. The effective
//! configuration is written back as the run manifest, so a run can be
//! reproduced from its manifest alone.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};

use crate::align::EstimatorKind;
use crate::hexgrid::{GridCalibration, Orientation};
use crate::io::{parse_kv_str, read_kv_file, write_kv_file, KvMap};
use crate::metrics::Aggregation;
use crate::plenoptic::BayerPattern;
use crate::stereo::{CameraIntrinsics, RectifiedParams, RigidTransform, StereoRig};

use super::PipelineError;

/// Environment variable overriding `out_dir`.
pub const OUT_DIR_ENV: &str = "LFDEPTH_OUT_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    // Input/output paths; unset paths are errors only where a stage needs
    // them.
    pub raw_plenoptic: Option<PathBuf>,
    pub stereo_left: Option<PathBuf>,
    pub stereo_right: Option<PathBuf>,
    pub relative_disparity: Option<PathBuf>,
    pub grid_calib: Option<PathBuf>,
    pub rig_calib: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub stacks: Option<PathBuf>,
    pub sparse: Option<PathBuf>,
    pub sparse_gt: Option<PathBuf>,
    pub model_report: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub capture_dir: Option<PathBuf>,
    pub split_manifest: Option<PathBuf>,
    pub out_dir: PathBuf,

    pub bayer_pattern: BayerPattern,
    pub crop_size: usize,
    pub texture_threshold: f64,

    // Robust alignment.
    pub estimator: EstimatorKind,
    pub theilsen_exact_limit: usize,
    pub theilsen_sample_pairs: usize,
    pub ransac_iterations: usize,
    pub ransac_threshold: f64,
    /// 0 selects the MAD-derived threshold per iteration.
    pub huber_delta: f64,
    pub huber_max_iters: usize,
    pub huber_tol: f64,
    pub sgd_lr: f64,
    pub sgd_epochs: usize,
    pub sgd_delta: f64,
    pub min_disparity_px: f64,

    // Semi-global matching.
    pub sgm_min_disparity: usize,
    pub sgm_max_disparity: usize,
    pub sgm_p1: u32,
    pub sgm_p2: u32,
    pub sgm_uniqueness: f64,
    pub sgm_lr_threshold: f64,
    pub speckle_size: usize,
    pub speckle_diff: f64,
    pub texture_min_population: usize,
    pub texture_eps: f64,
    pub apply_distortion: bool,

    // Evaluation.
    pub metrics_mode: Aggregation,
    pub bpr_threshold: f64,

    // Training.
    pub train: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_seed: u64,
    pub fit_seed: u64,

    // Thin-lens conversion of manufacturer virtual depths.
    pub main_focal_m: f64,
    pub main_to_mla_m: f64,
    pub mla_to_sensor_m: f64,

    // Synthetic scene generation.
    pub synth_seed: u64,
    pub synth_preset: String,
    pub m_star: f64,
    pub b_star: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            raw_plenoptic: None,
            stereo_left: None,
            stereo_right: None,
            relative_disparity: None,
            grid_calib: None,
            rig_calib: None,
            weights: None,
            stacks: None,
            sparse: None,
            sparse_gt: None,
            model_report: None,
            pred: None,
            gt: None,
            capture_dir: None,
            split_manifest: None,
            out_dir: PathBuf::from("out"),
            bayer_pattern: BayerPattern::Rggb,
            crop_size: 23,
            texture_threshold: 0.02,
            estimator: EstimatorKind::TheilSen,
            theilsen_exact_limit: crate::align::DEFAULT_EXACT_LIMIT,
            theilsen_sample_pairs: crate::align::DEFAULT_SAMPLED_PAIRS,
            ransac_iterations: 500,
            ransac_threshold: 1.0,
            huber_delta: 0.0,
            huber_max_iters: 100,
            huber_tol: 1e-10,
            sgd_lr: 0.01,
            sgd_epochs: 200,
            sgd_delta: 1.345,
            min_disparity_px: crate::align::DEFAULT_MIN_DISPARITY_PX,
            sgm_min_disparity: 0,
            sgm_max_disparity: 64,
            sgm_p1: 8,
            sgm_p2: 32,
            sgm_uniqueness: 0.05,
            sgm_lr_threshold: 1.0,
            speckle_size: 50,
            speckle_diff: 1.0,
            texture_min_population: 3,
            texture_eps: 0.01,
            apply_distortion: false,
            metrics_mode: Aggregation::Pooled,
            bpr_threshold: 0.25,
            train: false,
            epochs: 125,
            batch_size: 128,
            learning_rate: 0.001,
            train_seed: 0,
            fit_seed: 0,
            main_focal_m: 0.035,
            main_to_mla_m: 0.0385,
            mla_to_sensor_m: 0.0004,
            synth_seed: 0,
            synth_preset: "two-plane".to_string(),
            m_star: 2.0,
            b_star: 5.0,
        }
    }
}

macro_rules! parse_num {
    ($map:expr, $key:literal, $field:expr) => {
        if let Some(v) = $map.get($key) {
            $field = v.parse().map_err(|_| {
                PipelineError::Usage(format!("config key {}: invalid value {v:?}", $key))
            })?;
        }
    };
}

macro_rules! parse_path {
    ($map:expr, $key:literal, $field:expr) => {
        if let Some(v) = $map.get($key) {
            $field = Some(PathBuf::from(v));
        }
    };
}

impl PipelineConfig {
    /// Loads a config file and applies it over the defaults.
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let map = read_kv_file(path).map_err(|e| PipelineError::Data(e.to_string()))?;
        let mut cfg = PipelineConfig::default();
        cfg.apply_kv(&map)?;
        Ok(cfg)
    }

    /// Applies key/value overrides (file content or `--set` flags).
    pub fn apply_kv(&mut self, map: &KvMap) -> Result<(), PipelineError> {
        parse_path!(map, "raw_plenoptic", self.raw_plenoptic);
        parse_path!(map, "stereo_left", self.stereo_left);
        parse_path!(map, "stereo_right", self.stereo_right);
        parse_path!(map, "relative_disparity", self.relative_disparity);
        parse_path!(map, "grid_calib", self.grid_calib);
        parse_path!(map, "rig_calib", self.rig_calib);
        parse_path!(map, "weights", self.weights);
        parse_path!(map, "stacks", self.stacks);
        parse_path!(map, "sparse", self.sparse);
        parse_path!(map, "sparse_gt", self.sparse_gt);
        parse_path!(map, "model_report", self.model_report);
        parse_path!(map, "pred", self.pred);
        parse_path!(map, "gt", self.gt);
        parse_path!(map, "capture_dir", self.capture_dir);
        parse_path!(map, "split_manifest", self.split_manifest);
        if let Some(v) = map.get("out_dir") {
            self.out_dir = PathBuf::from(v);
        }
        if let Some(v) = map.get("bayer_pattern") {
            self.bayer_pattern = BayerPattern::parse(v)
                .ok_or_else(|| PipelineError::Usage(format!("unknown bayer pattern {v:?}")))?;
        }
        parse_num!(map, "crop_size", self.crop_size);
        parse_num!(map, "texture_threshold", self.texture_threshold);
        if let Some(v) = map.get("estimator") {
            self.estimator = EstimatorKind::parse(v)
                .ok_or_else(|| PipelineError::Usage(format!("unknown estimator {v:?}")))?;
        }
        parse_num!(map, "theilsen_exact_limit", self.theilsen_exact_limit);
        parse_num!(map, "theilsen_sample_pairs", self.theilsen_sample_pairs);
        parse_num!(map, "ransac_iterations", self.ransac_iterations);
        parse_num!(map, "ransac_threshold", self.ransac_threshold);
        parse_num!(map, "huber_delta", self.huber_delta);
        parse_num!(map, "huber_max_iters", self.huber_max_iters);
        parse_num!(map, "huber_tol", self.huber_tol);
        parse_num!(map, "sgd_lr", self.sgd_lr);
        parse_num!(map, "sgd_epochs", self.sgd_epochs);
        parse_num!(map, "sgd_delta", self.sgd_delta);
        parse_num!(map, "min_disparity_px", self.min_disparity_px);
        parse_num!(map, "sgm_min_disparity", self.sgm_min_disparity);
        parse_num!(map, "sgm_max_disparity", self.sgm_max_disparity);
        parse_num!(map, "sgm_p1", self.sgm_p1);
        parse_num!(map, "sgm_p2", self.sgm_p2);
        parse_num!(map, "sgm_uniqueness", self.sgm_uniqueness);
        parse_num!(map, "sgm_lr_threshold", self.sgm_lr_threshold);
        parse_num!(map, "speckle_size", self.speckle_size);
        parse_num!(map, "speckle_diff", self.speckle_diff);
        parse_num!(map, "texture_min_population", self.texture_min_population);
        parse_num!(map, "texture_eps", self.texture_eps);
        parse_num!(map, "apply_distortion", self.apply_distortion);
        if let Some(v) = map.get("metrics_mode") {
            self.metrics_mode = Aggregation::parse(v)
                .ok_or_else(|| PipelineError::Usage(format!("unknown metrics mode {v:?}")))?;
        }
        parse_num!(map, "bpr_threshold", self.bpr_threshold);
        parse_num!(map, "train", self.train);
        parse_num!(map, "epochs", self.epochs);
        parse_num!(map, "batch_size", self.batch_size);
        parse_num!(map, "learning_rate", self.learning_rate);
        parse_num!(map, "train_seed", self.train_seed);
        parse_num!(map, "fit_seed", self.fit_seed);
        parse_num!(map, "main_focal_m", self.main_focal_m);
        parse_num!(map, "main_to_mla_m", self.main_to_mla_m);
        parse_num!(map, "mla_to_sensor_m", self.mla_to_sensor_m);
        parse_num!(map, "synth_seed", self.synth_seed);
        if let Some(v) = map.get("synth_preset") {
            self.synth_preset = v.clone();
        }
        parse_num!(map, "m_star", self.m_star);
        parse_num!(map, "b_star", self.b_star);
        Ok(())
    }

    /// Applies the environment override for the output directory.
    pub fn apply_env(&mut self) {
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            if !dir.is_empty() {
                self.out_dir = PathBuf::from(dir);
            }
        }
    }

    /// The full effective configuration as sorted key/value pairs (the run
    /// manifest content).
    pub fn to_kv(&self) -> KvMap {
        let mut map = KvMap::new();
        let mut put_path = |key: &str, v: &Option<PathBuf>| {
            if let Some(p) = v {
                map.insert(key.to_string(), p.display().to_string());
            }
        };
        put_path("raw_plenoptic", &self.raw_plenoptic);
        put_path("stereo_left", &self.stereo_left);
        put_path("stereo_right", &self.stereo_right);
        put_path("relative_disparity", &self.relative_disparity);
        put_path("grid_calib", &self.grid_calib);
        put_path("rig_calib", &self.rig_calib);
        put_path("weights", &self.weights);
        put_path("stacks", &self.stacks);
        put_path("sparse", &self.sparse);
        put_path("sparse_gt", &self.sparse_gt);
        put_path("model_report", &self.model_report);
        put_path("pred", &self.pred);
        put_path("gt", &self.gt);
        put_path("capture_dir", &self.capture_dir);
        put_path("split_manifest", &self.split_manifest);
        let mut put = |key: &str, v: String| {
            map.insert(key.to_string(), v);
        };
        put("out_dir", self.out_dir.display().to_string());
        put("bayer_pattern", self.bayer_pattern.as_str().to_string());
        put("crop_size", self.crop_size.to_string());
        put("texture_threshold", format!("{:e}", self.texture_threshold));
        put("estimator", self.estimator.as_str().to_string());
        put("theilsen_exact_limit", self.theilsen_exact_limit.to_string());
        put("theilsen_sample_pairs", self.theilsen_sample_pairs.to_string());
        put("ransac_iterations", self.ransac_iterations.to_string());
        put("ransac_threshold", format!("{:e}", self.ransac_threshold));
        put("huber_delta", format!("{:e}", self.huber_delta));
        put("huber_max_iters", self.huber_max_iters.to_string());
        put("huber_tol", format!("{:e}", self.huber_tol));
        put("sgd_lr", format!("{:e}", self.sgd_lr));
        put("sgd_epochs", self.sgd_epochs.to_string());
        put("sgd_delta", format!("{:e}", self.sgd_delta));
        put("min_disparity_px", format!("{:e}", self.min_disparity_px));
        put("sgm_min_disparity", self.sgm_min_disparity.to_string());
        put("sgm_max_disparity", self.sgm_max_disparity.to_string());
        put("sgm_p1", self.sgm_p1.to_string());
        put("sgm_p2", self.sgm_p2.to_string());
        put("sgm_uniqueness", format!("{:e}", self.sgm_uniqueness));
        put("sgm_lr_threshold", format!("{:e}", self.sgm_lr_threshold));
        put("speckle_size", self.speckle_size.to_string());
        put("speckle_diff", format!("{:e}", self.speckle_diff));
        put("texture_min_population", self.texture_min_population.to_string());
        put("texture_eps", format!("{:e}", self.texture_eps));
        put("apply_distortion", self.apply_distortion.to_string());
        put("metrics_mode", self.metrics_mode.as_str().to_string());
        put("bpr_threshold", format!("{:e}", self.bpr_threshold));
        put("train", self.train.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("learning_rate", format!("{:e}", self.learning_rate));
        put("train_seed", self.train_seed.to_string());
        put("fit_seed", self.fit_seed.to_string());
        put("main_focal_m", format!("{:e}", self.main_focal_m));
        put("main_to_mla_m", format!("{:e}", self.main_to_mla_m));
        put("mla_to_sensor_m", format!("{:e}", self.mla_to_sensor_m));
        put("synth_seed", self.synth_seed.to_string());
        put("synth_preset", self.synth_preset.clone());
        put("m_star", format!("{:e}", self.m_star));
        put("b_star", format!("{:e}", self.b_star));
        map
    }
}

/// Reads a grid calibration file (`origin_x`, `origin_y`, `pitch_px`,
/// `rotation_rad`, `rows`, `cols`, `sensor_w`, `sensor_h`, optional
/// `orientation`).
pub fn read_grid_calibration(path: &Path) -> Result<GridCalibration, PipelineError> {
    let map = read_kv_file(path).map_err(|e| PipelineError::Data(e.to_string()))?;
    grid_calibration_from_kv(&map, path)
}

pub fn grid_calibration_from_kv(map: &KvMap, origin: &Path) -> Result<GridCalibration, PipelineError> {
    let num = |key: &str| -> Result<f64, PipelineError> {
        map.get(key)
            .ok_or_else(|| {
                PipelineError::Data(format!("{}: missing key {key}", origin.display()))
            })?
            .parse()
            .map_err(|_| PipelineError::Data(format!("{}: invalid {key}", origin.display())))
    };
    let orientation = match map.get("orientation") {
        None => Orientation::PointyTop,
        Some(v) => Orientation::parse(v)
            .ok_or_else(|| PipelineError::Data(format!("unknown orientation {v:?}")))?,
    };
    let calib = GridCalibration {
        origin: (num("origin_x")?, num("origin_y")?),
        pitch: num("pitch_px")?,
        rotation: num("rotation_rad")?,
        rows: num("rows")? as usize,
        cols: num("cols")? as usize,
        sensor_width: num("sensor_w")? as usize,
        sensor_height: num("sensor_h")? as usize,
        orientation,
    };
    calib.validate().map_err(|e| PipelineError::Data(e.to_string()))?;
    Ok(calib)
}

pub fn write_grid_calibration(path: &Path, calib: &GridCalibration) -> Result<(), PipelineError> {
    let mut map = KvMap::new();
    map.insert("origin_x".into(), format!("{:e}", calib.origin.0));
    map.insert("origin_y".into(), format!("{:e}", calib.origin.1));
    map.insert("pitch_px".into(), format!("{:e}", calib.pitch));
    map.insert("rotation_rad".into(), format!("{:e}", calib.rotation));
    map.insert("rows".into(), calib.rows.to_string());
    map.insert("cols".into(), calib.cols.to_string());
    map.insert("sensor_w".into(), calib.sensor_width.to_string());
    map.insert("sensor_h".into(), calib.sensor_height.to_string());
    map.insert("orientation".into(), calib.orientation.as_str().to_string());
    write_kv_file(path, &map).map_err(|e| PipelineError::Data(e.to_string()))
}

/// Rig calibration file: per-camera intrinsics + distortion, the rig
/// transforms as 4x4 row-major matrices, the plenoptic camera intrinsics,
/// and the rectified parameters.
pub fn read_rig_calibration(path: &Path) -> Result<(StereoRig, CameraIntrinsics), PipelineError> {
    let map = read_kv_file(path).map_err(|e| PipelineError::Data(e.to_string()))?;
    let num = |key: &str| -> Result<f64, PipelineError> {
        map.get(key)
            .ok_or_else(|| PipelineError::Data(format!("{}: missing key {key}", path.display())))?
            .parse()
            .map_err(|_| PipelineError::Data(format!("{}: invalid {key}", path.display())))
    };
    let cam = |prefix: &str| -> Result<CameraIntrinsics, PipelineError> {
        Ok(CameraIntrinsics {
            fx: num(&format!("{prefix}_fx"))?,
            fy: num(&format!("{prefix}_fy"))?,
            cx: num(&format!("{prefix}_cx"))?,
            cy: num(&format!("{prefix}_cy"))?,
            k1: num(&format!("{prefix}_k1"))?,
            k2: num(&format!("{prefix}_k2"))?,
            p1: num(&format!("{prefix}_p1"))?,
            p2: num(&format!("{prefix}_p2"))?,
        })
    };
    let transform = |key: &str| -> Result<RigidTransform, PipelineError> {
        let raw = map
            .get(key)
            .ok_or_else(|| PipelineError::Data(format!("{}: missing key {key}", path.display())))?;
        let vals: Vec<f64> = raw
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| PipelineError::Data(format!("{key}: invalid matrix entry")))?;
        if vals.len() != 16 {
            return Err(PipelineError::Data(format!("{key}: expected 16 values, got {}", vals.len())));
        }
        if vals[12] != 0.0 || vals[13] != 0.0 || vals[14] != 0.0 || vals[15] != 1.0 {
            return Err(PipelineError::Data(format!("{key}: last row must be 0 0 0 1")));
        }
        Ok(RigidTransform::new(
            Matrix3::new(
                vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9], vals[10],
            ),
            Vector3::new(vals[3], vals[7], vals[11]),
        ))
    };
    let rig = StereoRig {
        left: cam("left")?,
        right: cam("right")?,
        right_from_left: transform("right_from_left")?,
        plenoptic_from_left: transform("plen_from_left")?,
        rectified: RectifiedParams {
            focal_px: num("rect_focal_px")?,
            baseline_m: num("rect_baseline_m")?,
            cx: num("rect_cx")?,
            cy: num("rect_cy")?,
        },
    };
    rig.validate().map_err(|e| PipelineError::Data(e.to_string()))?;
    let plen = cam("plen")?;
    Ok((rig, plen))
}

pub fn write_rig_calibration(
    path: &Path,
    rig: &StereoRig,
    plen: &CameraIntrinsics,
) -> Result<(), PipelineError> {
    let mut map = KvMap::new();
    let mut cam = |prefix: &str, c: &CameraIntrinsics| {
        map.insert(format!("{prefix}_fx"), format!("{:e}", c.fx));
        map.insert(format!("{prefix}_fy"), format!("{:e}", c.fy));
        map.insert(format!("{prefix}_cx"), format!("{:e}", c.cx));
        map.insert(format!("{prefix}_cy"), format!("{:e}", c.cy));
        map.insert(format!("{prefix}_k1"), format!("{:e}", c.k1));
        map.insert(format!("{prefix}_k2"), format!("{:e}", c.k2));
        map.insert(format!("{prefix}_p1"), format!("{:e}", c.p1));
        map.insert(format!("{prefix}_p2"), format!("{:e}", c.p2));
    };
    cam("left", &rig.left);
    cam("right", &rig.right);
    cam("plen", plen);
    let fmt_transform = |t: &RigidTransform| {
        let r = &t.rotation;
        let v = &t.translation;
        format!(
            "{:e} {:e} {:e} {:e} {:e} {:e} {:e} {:e} {:e} {:e} {:e} {:e} 0 0 0 1",
            r[(0, 0)], r[(0, 1)], r[(0, 2)], v.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], v.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], v.z,
        )
    };
    map.insert("right_from_left".into(), fmt_transform(&rig.right_from_left));
    map.insert("plen_from_left".into(), fmt_transform(&rig.plenoptic_from_left));
    map.insert("rect_focal_px".into(), format!("{:e}", rig.rectified.focal_px));
    map.insert("rect_baseline_m".into(), format!("{:e}", rig.rectified.baseline_m));
    map.insert("rect_cx".into(), format!("{:e}", rig.rectified.cx));
    map.insert("rect_cy".into(), format!("{:e}", rig.rectified.cy));
    write_kv_file(path, &map).map_err(|e| PipelineError::Data(e.to_string()))
}

/// Parses `--set key=value` override strings.
pub fn overrides_to_kv(sets: &[String]) -> Result<KvMap, PipelineError> {
    let joined = sets.join("\n");
    parse_kv_str(&joined, Path::new("--set")).map_err(|e| PipelineError::Usage(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_kv() {
        let mut cfg = PipelineConfig::default();
        cfg.crop_size = 21;
        cfg.estimator = EstimatorKind::Ransac;
        cfg.m_star = 0.37;
        cfg.weights = Some(PathBuf::from("/tmp/w.mldn"));
        let kv = cfg.to_kv();
        let mut back = PipelineConfig::default();
        back.apply_kv(&kv).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn grid_calibration_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.cfg");
        let calib = GridCalibration {
            origin: (100.25, 99.5),
            pitch: 23.4,
            rotation: 0.01,
            rows: 101,
            cols: 88,
            sensor_width: 2048,
            sensor_height: 2048,
            orientation: Orientation::PointyTop,
        };
        write_grid_calibration(&path, &calib).unwrap();
        let back = read_grid_calibration(&path).unwrap();
        assert_eq!(back, calib);
    }

    #[test]
    fn rig_calibration_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rig.cfg");
        let rig = StereoRig {
            left: CameraIntrinsics { fx: 400.0, fy: 401.0, cx: 160.0, cy: 120.0, k1: -0.1, k2: 0.02, p1: 1e-4, p2: -2e-4 },
            right: CameraIntrinsics::pinhole(399.0, 400.5, 161.0, 119.0),
            right_from_left: RigidTransform::new(Matrix3::identity(), Vector3::new(-0.1, 0.001, 0.002)),
            plenoptic_from_left: RigidTransform::identity(),
            rectified: RectifiedParams { focal_px: 400.125, baseline_m: 0.1, cx: 160.5, cy: 119.5 },
        };
        let plen = CameraIntrinsics::pinhole(800.0, 800.0, 512.0, 512.0);
        write_rig_calibration(&path, &rig, &plen).unwrap();
        let (back, back_plen) = read_rig_calibration(&path).unwrap();
        assert_eq!(back, rig);
        assert_eq!(back_plen, plen);
    }

    #[test]
    fn missing_key_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.cfg");
        std::fs::write(&path, "origin_x = 1\n").unwrap();
        assert!(matches!(read_grid_calibration(&path), Err(PipelineError::Data(_))));
    }

    #[test]
    fn env_overrides_out_dir_only() {
        let mut cfg = PipelineConfig::default();
        std::env::set_var(OUT_DIR_ENV, "/tmp/env-out");
        cfg.apply_env();
        std::env::remove_var(OUT_DIR_ENV);
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/env-out"));
    }
}
