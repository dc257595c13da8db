//! Stage operations behind the CLI subcommands.
//!
//! Every stage reads its inputs from the configuration, writes its
//! artifacts under `out_dir` with fixed names, and is a pure function of
//! (config, input files, seeds); reruns are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use crate::align::{
    fit_huber, fit_ransac, fit_sgd_huber, fit_theil_sen,
    fuse, sample_correspondences, CorrespondenceSet, DepthMap, DisparityFrame, DisparityMap,
    EstimatorKind, LinearScaleModel, TheilSenMode,
};
use crate::hexgrid::{build_grid, GridCalibration, Orientation};
use crate::io::{
    read_kv_file, read_pfm, read_pgm16, read_sparse_csv, read_stack_archive, write_kv_file,
    write_loss_csv, write_pfm, write_pgm16, write_ppm8, write_sparse_csv, write_stack_archive,
    KvMap, PfmImage,
};
use crate::metrics::{
    compare_reports, evaluate_pairs, evaluate_per_image_mean, paired_dense, paired_sparse,
    Aggregation, MetricColumn,
};
use crate::net::{load_weights, predict_sparse, save_weights, train, DepthSource, TrainConfig};
use crate::plenoptic::{debayer, extract_stacks, FlowerStackBatch, RawBayerImage, RgbImage};
use crate::stereo::{
    apply_homography, rectify, regularize, reproject, sample_at_centroids, sgm, triangulate,
    RegularizeParams, SgmParams,
};
use crate::synth::{
    exact_central_depth, render_plenoptic, render_relative_disparity, render_stereo, CentralView,
    PlaneSpec, SyntheticScene,
};

use super::config::{
    read_grid_calibration, read_rig_calibration, write_grid_calibration, write_rig_calibration,
    PipelineConfig,
};
use super::PipelineError;

fn require<'a>(
    path: &'a Option<PathBuf>,
    key: &str,
    stage: &str,
) -> Result<&'a Path, PipelineError> {
    path.as_deref().ok_or_else(|| {
        PipelineError::Usage(format!("{stage}: config key `{key}` is required"))
    })
}

fn data_err(stage: &str) -> impl Fn(crate::io::FormatError) -> PipelineError + '_ {
    move |e| PipelineError::Data(format!("{stage}: {e}"))
}

fn ensure_out_dir(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| PipelineError::Data(format!("cannot create {}: {e}", cfg.out_dir.display())))
}

/// Loads a 16-bit PGM raw frame and debayers it.
fn load_debayered(path: &Path, cfg: &PipelineConfig, stage: &str) -> Result<RgbImage, PipelineError> {
    let (w, h, samples) = read_pgm16(path).map_err(data_err(stage))?;
    let raw = RawBayerImage::new(w, h, cfg.bayer_pattern, samples);
    debayer(&raw).map_err(|e| PipelineError::Data(format!("{stage}: {e}")))
}

// PFM conventions: metric depth/disparity maps encode invalid pixels as 0
// (valid values are strictly positive); relative disparity maps keep every
// finite value and encode invalid pixels as NaN.

pub fn write_depth_pfm(path: &Path, map: &DepthMap, stage: &str) -> Result<(), PipelineError> {
    let values = map
        .values()
        .iter()
        .zip(map.valid_mask())
        .map(|(&v, &ok)| if ok { v as f32 } else { 0.0 })
        .collect();
    write_pfm(path, &PfmImage { width: map.width, height: map.height, values })
        .map_err(data_err(stage))
}

pub fn read_depth_pfm(path: &Path, stage: &str) -> Result<DepthMap, PipelineError> {
    let img = read_pfm(path).map_err(data_err(stage))?;
    let valid = img.values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
    let values = img.values.iter().map(|&v| v as f64).collect();
    Ok(DepthMap::from_parts(img.width, img.height, values, valid))
}

pub fn write_relative_pfm(path: &Path, map: &DisparityMap, stage: &str) -> Result<(), PipelineError> {
    let values = map
        .values()
        .iter()
        .zip(map.valid_mask())
        .map(|(&v, &ok)| if ok { v as f32 } else { f32::NAN })
        .collect();
    write_pfm(path, &PfmImage { width: map.width, height: map.height, values })
        .map_err(data_err(stage))
}

pub fn read_relative_pfm(path: &Path, stage: &str) -> Result<DisparityMap, PipelineError> {
    let img = read_pfm(path).map_err(data_err(stage))?;
    let valid: Vec<bool> = img.values.iter().map(|v| v.is_finite()).collect();
    let values = img.values.iter().map(|&v| v as f64).collect();
    Ok(DisparityMap::from_parts(img.width, img.height, DisparityFrame::Relative, values, valid))
}

pub fn write_metric_disparity_pfm(
    path: &Path,
    map: &DisparityMap,
    stage: &str,
) -> Result<(), PipelineError> {
    let values = map
        .values()
        .iter()
        .zip(map.valid_mask())
        .map(|(&v, &ok)| if ok { v as f32 } else { 0.0 })
        .collect();
    write_pfm(path, &PfmImage { width: map.width, height: map.height, values })
        .map_err(data_err(stage))
}

/// Model report: the fitted alignment as a key/value file.
pub fn write_model_report(
    path: &Path,
    model: &LinearScaleModel,
    residual_median: f64,
) -> Result<(), PipelineError> {
    let mut map = KvMap::new();
    map.insert("m".into(), format!("{:e}", model.m));
    map.insert("b".into(), format!("{:e}", model.b));
    map.insert("estimator".into(), model.estimator.as_str().to_string());
    map.insert("inlier_count".into(), model.inlier_count.to_string());
    map.insert("converged".into(), model.converged.to_string());
    map.insert("residual_median".into(), format!("{:e}", residual_median));
    write_kv_file(path, &map).map_err(|e| PipelineError::Data(e.to_string()))
}

pub fn read_model_report(path: &Path) -> Result<LinearScaleModel, PipelineError> {
    let map = read_kv_file(path).map_err(|e| PipelineError::Data(e.to_string()))?;
    let get = |key: &str| -> Result<&String, PipelineError> {
        map.get(key)
            .ok_or_else(|| PipelineError::Data(format!("{}: missing key {key}", path.display())))
    };
    Ok(LinearScaleModel {
        m: get("m")?.parse().map_err(|_| PipelineError::Data("invalid m".into()))?,
        b: get("b")?.parse().map_err(|_| PipelineError::Data("invalid b".into()))?,
        estimator: EstimatorKind::parse(get("estimator")?)
            .ok_or_else(|| PipelineError::Data("unknown estimator in report".into()))?,
        inlier_count: get("inlier_count")?
            .parse()
            .map_err(|_| PipelineError::Data("invalid inlier_count".into()))?,
        converged: get("converged")?
            .parse()
            .map_err(|_| PipelineError::Data("invalid converged".into()))?,
    })
}

pub fn extract_stacks_op(cfg: &PipelineConfig) -> Result<PathBuf, PipelineError> {
    const STAGE: &str = "extract-stacks";
    ensure_out_dir(cfg)?;
    let raw_path = require(&cfg.raw_plenoptic, "raw_plenoptic", STAGE)?;
    let calib = read_grid_calibration(require(&cfg.grid_calib, "grid_calib", STAGE)?)?;
    let img = load_debayered(raw_path, cfg, STAGE)?;
    let grid = build_grid(&calib).map_err(|e| PipelineError::Data(format!("{STAGE}: {e}")))?;
    let stacks = extract_stacks(&img, &grid, cfg.crop_size)
        .map_err(|e| PipelineError::Data(format!("{STAGE}: {e}")))?;
    if stacks.is_empty() {
        return Err(PipelineError::Data(format!(
            "{STAGE}: no flower stack survives the boundary filter"
        )));
    }
    let batch = FlowerStackBatch::from_stacks(&stacks);
    let out = cfg.out_dir.join("stacks.lfst");
    write_stack_archive(&out, &batch).map_err(data_err(STAGE))?;
    write_ppm8(
        &cfg.out_dir.join("debayered.ppm"),
        img.width(),
        img.height(),
        &img.to_rgb8(),
    )
    .map_err(data_err(STAGE))?;
    println!("{STAGE}: {} lenses, {} stacks", grid.len(), batch.count);
    Ok(out)
}

pub fn train_op(cfg: &PipelineConfig) -> Result<PathBuf, PipelineError> {
    const STAGE: &str = "train";
    ensure_out_dir(cfg)?;
    let batch = read_stack_archive(require(&cfg.stacks, "stacks", STAGE)?).map_err(data_err(STAGE))?;
    let gt = read_sparse_csv(require(&cfg.sparse_gt, "sparse_gt", STAGE)?, DepthSource::StereoGt)
        .map_err(data_err(STAGE))?;
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        adam: crate::net::AdamConfig { learning_rate: cfg.learning_rate, ..Default::default() },
        seed: cfg.train_seed,
    };
    let outcome =
        train(&batch, &gt, &train_cfg).map_err(|e| PipelineError::Numeric(format!("{STAGE}: {e}")))?;
    let weights_out = cfg.out_dir.join("weights.mldn");
    save_weights(&outcome.network, &weights_out).map_err(data_err(STAGE))?;
    write_loss_csv(&cfg.out_dir.join("loss.csv"), &outcome.loss_history).map_err(data_err(STAGE))?;
    println!(
        "{STAGE}: {} epochs, first loss {:.6}, final loss {:.6}",
        outcome.loss_history.len(),
        outcome.loss_history.first().copied().unwrap_or(f64::NAN),
        outcome.loss_history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(weights_out)
}

pub fn predict_op(cfg: &PipelineConfig) -> Result<PathBuf, PipelineError> {
    const STAGE: &str = "predict";
    ensure_out_dir(cfg)?;
    let batch = read_stack_archive(require(&cfg.stacks, "stacks", STAGE)?).map_err(data_err(STAGE))?;
    let net = load_weights(require(&cfg.weights, "weights", STAGE)?, cfg.crop_size)
        .map_err(data_err(STAGE))?;
    let sparse =
        predict_sparse(&net, &batch).map_err(|e| PipelineError::Numeric(format!("{STAGE}: {e}")))?;
    let out = cfg.out_dir.join("sparse_pred.csv");
    write_sparse_csv(&out, &sparse).map_err(data_err(STAGE))?;
    println!("{STAGE}: {} depths", sparse.len());
    Ok(out)
}

pub fn filter_op(cfg: &PipelineConfig) -> Result<PathBuf, PipelineError> {
    const STAGE: &str = "filter";
    ensure_out_dir(cfg)?;
    let batch = read_stack_archive(require(&cfg.stacks, "stacks", STAGE)?).map_err(data_err(STAGE))?;
    let sparse = read_sparse_csv(require(&cfg.sparse, "sparse", STAGE)?, DepthSource::Predicted)
        .map_err(data_err(STAGE))?;
    let stacks = batch.to_stacks();
    let kept = crate::plenoptic::filter_sparse_depth(&sparse, &stacks, cfg.texture_threshold)
        .map_err(|e| PipelineError::Data(format!("{STAGE}: {e}")))?;
    let out = cfg.out_dir.join("sparse_filtered.csv");
    write_sparse_csv(&out, &kept).map_err(data_err(STAGE))?;
    println!("{STAGE}: kept {} of {} samples", kept.len(), sparse.len());
    Ok(out)
}

fn fit_with_config(
    cfg: &PipelineConfig,
    set: &CorrespondenceSet,
) -> Result<LinearScaleModel, PipelineError> {
    let numeric = |e: crate::align::AlignError| PipelineError::Numeric(format!("align: {e}"));
    match cfg.estimator {
        EstimatorKind::TheilSen => {
            let mode = if set.len() <= cfg.theilsen_exact_limit {
                TheilSenMode::Exact
            } else {
                TheilSenMode::Sampled { pairs: cfg.theilsen_sample_pairs, seed: cfg.fit_seed }
            };
            fit_theil_sen(set, mode).map_err(numeric)
        }
        EstimatorKind::Ransac => {
            fit_ransac(set, cfg.ransac_iterations, cfg.ransac_threshold, cfg.fit_seed).map_err(numeric)
        }
        EstimatorKind::Huber => {
            let delta = if cfg.huber_delta > 0.0 { Some(cfg.huber_delta) } else { None };
            fit_huber(set, delta, cfg.huber_max_iters, cfg.huber_tol).map_err(numeric)
        }
        EstimatorKind::SgdHuber => {
            fit_sgd_huber(set, cfg.sgd_lr, cfg.sgd_epochs, cfg.fit_seed, cfg.sgd_delta)
                .map_err(numeric)
        }
    }
}

pub fn align_op(cfg: &PipelineConfig) -> Result<PathBuf, PipelineError> {
    const STAGE: &str = "align";
    ensure_out_dir(cfg)?;
    let dense = read_relative_pfm(require(&cfg.relative_disparity, "relative_disparity", STAGE)?, STAGE)?;
    let sparse = read_sparse_csv(require(&cfg.sparse, "sparse", STAGE)?, DepthSource::Predicted)
        .map_err(data_err(STAGE))?;
    let (rig, _) = read_rig_calibration(require(&cfg.rig_calib, "rig_calib", STAGE)?)?;
    let set = sample_correspondences(&dense, &sparse, &rig)
        .map_err(|e| PipelineError::Numeric(format!("{STAGE}: {e}")))?;
    let model = fit_with_config(cfg, &set)?;
    if model.m <= 0.0 {
        eprintln!("{STAGE}: warning: fitted slope {} is not physically meaningful", model.m);
    }
    if !model.converged {
        eprintln!("{STAGE}: warning: estimator stopped at its iteration limit");
    }
    let out = cfg.out_dir.join("model.cfg");
    write_model_report(&out, &model, model.residual_median(&set))?;
    println!(
        "{STAGE}: {} -> m = {:.6}, b = {:.6} ({} correspondences)",
        model.estimator.as_str(),
        model.m,
        model.b,
        set.len()
    );
    Ok(out)
}

pub fn fuse_op(cfg: &PipelineConfig) -> Result<PathBuf, PipelineError> {
    const STAGE: &str = "fuse";
    ensure_out_dir(cfg)?;
    let dense = read_relative_pfm(require(&cfg.relative_disparity, "relative_disparity", STAGE)?, STAGE)?;
    let model = read_model_report(require(&cfg.model_report, "model_report", STAGE)?)?;
    let (rig, _) = read_rig_calibration(require(&cfg.rig_calib, "rig_calib", STAGE)?)?;
    let fused = fuse(&dense, &model, &rig, cfg.min_disparity_px);
    let out = cfg.out_dir.join("fused_depth.pfm");
    write_depth_pfm(&out, &fused, STAGE)?;
    println!("{STAGE}: {} valid depths", fused.valid_count());
    Ok(out)
}

/// Splits a comma-separated path list.
fn path_list(path: &Path) -> Vec<PathBuf> {
    path.to_string_lossy().split(',').map(PathBuf::from).collect()
}

pub fn eval_op(cfg: &PipelineConfig) -> Result<PathBuf, PipelineError> {
    const STAGE: &str = "eval";
    ensure_out_dir(cfg)?;
    let preds = path_list(require(&cfg.pred, "pred", STAGE)?);
    let gts = path_list(require(&cfg.gt, "gt", STAGE)?);
    if preds.len() != gts.len() {
        return Err(PipelineError::Usage(format!(
            "{STAGE}: {} predictions vs {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    let mut images: Vec<Vec<(f64, f64)>> = Vec::new();
    for (pred, gt) in preds.iter().zip(&gts) {
        let sparse = pred.extension().is_some_and(|e| e == "csv");
        let pairs = if sparse {
            let p = read_sparse_csv(pred, DepthSource::Predicted).map_err(data_err(STAGE))?;
            let g = read_sparse_csv(gt, DepthSource::StereoGt).map_err(data_err(STAGE))?;
            paired_sparse(&p, &g)
        } else {
            let p = read_depth_pfm(pred, STAGE)?;
            let g = read_depth_pfm(gt, STAGE)?;
            paired_dense(&p, &g).map_err(|e| PipelineError::Data(format!("{STAGE}: {e}")))?
        };
        images.push(pairs);
    }
    let report = match cfg.metrics_mode {
        Aggregation::Pooled => {
            let pooled: Vec<(f64, f64)> = images.iter().flatten().copied().collect();
            evaluate_pairs(&pooled, cfg.bpr_threshold)
        }
        Aggregation::PerImageMean => evaluate_per_image_mean(&images, cfg.bpr_threshold),
    }
    .map_err(|e| PipelineError::Numeric(format!("{STAGE}: {e}")))?;

    let table = compare_reports(&[("prediction".to_string(), report)], MetricColumn::Rmse);
    let csv_out = cfg.out_dir.join("metrics.csv");
    fs::write(&csv_out, table.render_csv())
        .map_err(|e| PipelineError::Data(format!("{STAGE}: {e}")))?;
    fs::write(cfg.out_dir.join("metrics.txt"), table.render_text())
        .map_err(|e| PipelineError::Data(format!("{STAGE}: {e}")))?;
    println!(
        "{STAGE}: rmse {:.4} cm, mare {:.4} %, delta {:.2} % over {} samples",
        report.rmse_cm, report.mare_pct, report.delta1_pct, report.valid_count
    );
    Ok(csv_out)
}

pub fn stereo_gt_op(cfg: &PipelineConfig) -> Result<PathBuf, PipelineError> {
    const STAGE: &str = "stereo-gt";
    ensure_out_dir(cfg)?;
    let (rig, plen) = read_rig_calibration(require(&cfg.rig_calib, "rig_calib", STAGE)?)?;
    let calib = read_grid_calibration(require(&cfg.grid_calib, "grid_calib", STAGE)?)?;
    let grid = build_grid(&calib).map_err(|e| PipelineError::Data(format!("{STAGE}: {e}")))?;

    let left = load_debayered(require(&cfg.stereo_left, "stereo_left", STAGE)?, cfg, STAGE)?;
    let right = load_debayered(require(&cfg.stereo_right, "stereo_right", STAGE)?, cfg, STAGE)?;

    // Undistort, then rectify.
    let (left_u, _) = crate::stereo::undistort(&left, &rig.left);
    let (right_u, _) = crate::stereo::undistort(&right, &rig.right);
    let rect = rectify(&rig).map_err(|e| PipelineError::Numeric(format!("{STAGE}: {e}")))?;
    let (w, h) = (left.width(), left.height());
    let (left_rect, _) = apply_homography(&left_u, &rect.left_h, w, h);
    let (right_rect, _) = apply_homography(&right_u, &rect.right_h, w, h);
    write_ppm8(&cfg.out_dir.join("rect_left.ppm"), w, h, &left_rect.to_rgb8())
        .map_err(data_err(STAGE))?;
    write_ppm8(&cfg.out_dir.join("rect_right.ppm"), w, h, &right_rect.to_rgb8())
        .map_err(data_err(STAGE))?;

    // Match, regularize, triangulate.
    let params = SgmParams {
        min_disparity: cfg.sgm_min_disparity,
        max_disparity: cfg.sgm_max_disparity,
        p1: cfg.sgm_p1,
        p2: cfg.sgm_p2,
        uniqueness_ratio: cfg.sgm_uniqueness,
        lr_threshold: cfg.sgm_lr_threshold,
    };
    let left_luma = left_rect.to_luma();
    let right_luma = right_rect.to_luma();
    let (disp, _) = sgm(&left_luma, &right_luma, w, h, &params)
        .map_err(|e| PipelineError::Numeric(format!("{STAGE}: {e}")))?;
    let reg_params = RegularizeParams {
        speckle_size: cfg.speckle_size,
        speckle_diff: cfg.speckle_diff,
        texture_min_population: cfg.texture_min_population,
        texture_eps: cfg.texture_eps as f32,
    };
    let disp = regularize(&disp, &left_luma, w, h, &reg_params);
    write_metric_disparity_pfm(&cfg.out_dir.join("disparity.pfm"), &disp, STAGE)?;

    let (depth, cloud) = triangulate(&disp, &rect.rig, &left_rect);
    write_depth_pfm(&cfg.out_dir.join("depth_left.pfm"), &depth, STAGE)?;

    // Reproject onto the plenoptic pose and sample the lattice.
    let (color, reproj_depth) = reproject(
        &cloud,
        &rig.plenoptic_from_left,
        &plen,
        (calib.sensor_width, calib.sensor_height),
        cfg.apply_distortion,
    );
    write_ppm8(
        &cfg.out_dir.join("reproj_color.ppm"),
        calib.sensor_width,
        calib.sensor_height,
        &color.to_rgb8(),
    )
    .map_err(data_err(STAGE))?;
    write_depth_pfm(&cfg.out_dir.join("reproj_depth.pfm"), &reproj_depth, STAGE)?;

    let sparse = sample_at_centroids(&reproj_depth, &grid);
    let out = cfg.out_dir.join("sparse_gt.csv");
    write_sparse_csv(&out, &sparse).map_err(data_err(STAGE))?;
    println!(
        "{STAGE}: {} disparities, {} reprojected depths, {} sparse samples",
        disp.valid_count(),
        reproj_depth.valid_count(),
        sparse.len()
    );
    Ok(out)
}

/// The fixed synthetic test rig: rectified pinholes, no distortion, and the
/// plenoptic camera co-located with the left camera.
fn synth_rig() -> (crate::stereo::StereoRig, crate::stereo::CameraIntrinsics) {
    use crate::stereo::{CameraIntrinsics, RectifiedParams, RigidTransform, StereoRig};
    use nalgebra::{Matrix3, Vector3};
    let focal = 420.0;
    let (cx, cy) = (160.0, 120.0);
    let rig = StereoRig {
        left: CameraIntrinsics::pinhole(focal, focal, cx, cy),
        right: CameraIntrinsics::pinhole(focal, focal, cx, cy),
        right_from_left: RigidTransform::new(
            Matrix3::identity(),
            Vector3::new(-0.09, 0.0, 0.0),
        ),
        plenoptic_from_left: RigidTransform::identity(),
        rectified: RectifiedParams { focal_px: focal, baseline_m: 0.09, cx, cy },
    };
    let plen = CameraIntrinsics::pinhole(focal, focal, cx, cy);
    (rig, plen)
}

/// The synthetic scene presets.
fn synth_scene(cfg: &PipelineConfig, calib: &GridCalibration) -> Result<SyntheticScene, PipelineError> {
    let seed = cfg.synth_seed;
    let planes = match cfg.synth_preset.as_str() {
        "single-plane" => vec![PlaneSpec::full(1.5, seed ^ 0xA1)],
        "two-plane" => vec![
            PlaneSpec {
                depth_m: 1.1,
                texture_seed: seed ^ 0xB7,
                extent: Some((-10.0, 0.0314, -10.0, 10.0)),
                contrast: 1.0,
            },
            PlaneSpec::full(2.2, seed ^ 0xC3),
        ],
        other => {
            return Err(PipelineError::Usage(format!("unknown synth preset {other:?}")));
        }
    };
    Ok(SyntheticScene {
        planes,
        view: CentralView { origin_px: calib.origin, meters_per_px: 0.004 },
        microlens_focal_px: 60.0,
        noise_frequency: 14.0,
    })
}

fn synth_grid_calibration() -> GridCalibration {
    GridCalibration {
        origin: (48.0, 44.0),
        pitch: 23.0,
        rotation: 0.0,
        rows: 9,
        cols: 9,
        sensor_width: 320,
        sensor_height: 240,
        orientation: Orientation::PointyTop,
    }
}

/// Generates a complete synthetic input set: calibrations, the plenoptic
/// frame, exact sparse/dense ground truth, the relative-disparity map with
/// known alignment, and a stereo pair.
pub fn synth_op(cfg: &PipelineConfig) -> Result<PathBuf, PipelineError> {
    const STAGE: &str = "synth";
    ensure_out_dir(cfg)?;
    let calib = synth_grid_calibration();
    let grid = build_grid(&calib).map_err(|e| PipelineError::Data(format!("{STAGE}: {e}")))?;
    let scene = synth_scene(cfg, &calib)?;
    let (rig, plen) = synth_rig();

    write_grid_calibration(&cfg.out_dir.join("grid.cfg"), &calib)?;
    write_rig_calibration(&cfg.out_dir.join("rig.cfg"), &rig, &plen)?;

    let (raw, sparse_exact) = render_plenoptic(&scene, &grid, cfg.bayer_pattern);
    write_pgm16(&cfg.out_dir.join("plenoptic.pgm"), raw.width, raw.height, &raw.samples)
        .map_err(data_err(STAGE))?;
    write_sparse_csv(&cfg.out_dir.join("sparse_exact.csv"), &sparse_exact).map_err(data_err(STAGE))?;

    let rel = render_relative_disparity(
        &scene,
        cfg.m_star,
        cfg.b_star,
        &rig,
        calib.sensor_width,
        calib.sensor_height,
    );
    write_relative_pfm(&cfg.out_dir.join("relative.pfm"), &rel, STAGE)?;
    let central = exact_central_depth(&scene, calib.sensor_width, calib.sensor_height);
    write_depth_pfm(&cfg.out_dir.join("central_depth.pfm"), &central, STAGE)?;

    let (sl, sr, sdepth) = render_stereo(&scene, &rig, 320, 240, cfg.bayer_pattern);
    write_pgm16(&cfg.out_dir.join("stereo_left.pgm"), sl.width, sl.height, &sl.samples)
        .map_err(data_err(STAGE))?;
    write_pgm16(&cfg.out_dir.join("stereo_right.pgm"), sr.width, sr.height, &sr.samples)
        .map_err(data_err(STAGE))?;
    write_depth_pfm(&cfg.out_dir.join("stereo_depth.pfm"), &sdepth, STAGE)?;

    println!(
        "{STAGE}: preset {} with {} lenses, m* = {}, b* = {}",
        cfg.synth_preset,
        grid.len(),
        cfg.m_star,
        cfg.b_star
    );
    Ok(cfg.out_dir.clone())
}

/// Runs the full pipeline: extract stacks, train or load weights, predict,
/// texture-filter, align, fuse, evaluate. Every stage artifact lands in
/// `out_dir`; the run manifest records the effective configuration.
pub fn run_op(cfg: &PipelineConfig) -> Result<PathBuf, PipelineError> {
    ensure_out_dir(cfg)?;
    let mut cfg = cfg.clone();

    let stacks_path = extract_stacks_op(&cfg)?;
    cfg.stacks = Some(stacks_path);

    let weights_path = if cfg.train {
        train_op(&cfg)?
    } else {
        match &cfg.weights {
            Some(w) => w.clone(),
            None => {
                return Err(PipelineError::Usage(
                    "train/load-weights: no weights file configured and training is disabled \
                     (set `train = true` or provide `weights`)"
                        .to_string(),
                ))
            }
        }
    };
    cfg.weights = Some(weights_path);

    let pred_path = predict_op(&cfg)?;
    cfg.sparse = Some(pred_path);

    let filtered = filter_op(&cfg)?;
    cfg.sparse = Some(filtered);

    let model = align_op(&cfg)?;
    cfg.model_report = Some(model);

    let fused = fuse_op(&cfg)?;

    if cfg.gt.is_some() {
        cfg.pred = Some(fused);
        eval_op(&cfg)?;
    }

    write_kv_file(&cfg.out_dir.join("run_manifest.cfg"), &cfg.to_kv())
        .map_err(|e| PipelineError::Data(e.to_string()))?;
    Ok(cfg.out_dir.clone())
}
