//! Ground-truth depth from a calibrated stereo pair.
//!
//! The pipeline: debayer both frames, undistort, rectify so epipolar lines
//! are horizontal, run semi-global matching for disparity, triangulate to
//! metric depth, reproject the colored point cloud onto the plenoptic
//! camera pose, and sample depth at the microlens centroids.

mod rectify;
mod sgm;

pub use rectify::{apply_homography, rectify, RectifyResult};
pub use sgm::{
    census_cost_volume, debug_aggregate, regularize, sgm, CostVolume, RegularizeParams, SgmParams,
};

use std::fmt;

use nalgebra::{Matrix3, Vector3};

use crate::align::{DepthMap, DisparityMap};
use crate::hexgrid::MicrolensGrid;
use crate::net::{DepthSource, SparseDepthMap, SparseSample};
use crate::plenoptic::RgbImage;

/// Pinhole intrinsics with Brown radial-tangential distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    pub p1: f64,
    pub p2: f64,
}

impl CameraIntrinsics {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        CameraIntrinsics { fx, fy, cx, cy, k1: 0.0, k2: 0.0, p1: 0.0, p2: 0.0 }
    }

    pub fn validate(&self) -> Result<(), StereoError> {
        if !(self.fx > 0.0) || !(self.fy > 0.0) {
            return Err(StereoError::InvalidIntrinsics("focal lengths must be positive"));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Applies the forward Brown model to normalized coordinates.
    pub fn distort_normalized(&self, x: f64, y: f64) -> (f64, f64) {
        let r2 = x * x + y * y;
        let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
        let xd = x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
        (xd, yd)
    }

    /// Projects a camera-frame point to (possibly distorted) pixels.
    pub fn project(&self, p: &Vector3<f64>, with_distortion: bool) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        let (mut x, mut y) = (p.x / p.z, p.y / p.z);
        if with_distortion {
            let (xd, yd) = self.distort_normalized(x, y);
            x = xd;
            y = yd;
        }
        Some((self.fx * x + self.cx, self.fy * y + self.cy))
    }
}

/// A rigid transform `target <- source`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform { rotation, translation }
    }

    /// Frobenius defect of `R^T R - I`.
    pub fn orthonormality_defect(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }

    pub fn validate(&self) -> Result<(), StereoError> {
        if self.orthonormality_defect() >= 1e-9 {
            return Err(StereoError::InvalidIntrinsics("rotation is not orthonormal"));
        }
        Ok(())
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }
}

/// Intrinsics of the rectified pair: shared focal, principal point, and the
/// metric baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectifiedParams {
    pub focal_px: f64,
    pub baseline_m: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Full stereo rig calibration, including the plenoptic camera pose.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoRig {
    pub left: CameraIntrinsics,
    pub right: CameraIntrinsics,
    /// Transform right camera frame <- left camera frame.
    pub right_from_left: RigidTransform,
    /// Transform plenoptic camera frame <- left camera frame.
    pub plenoptic_from_left: RigidTransform,
    pub rectified: RectifiedParams,
}

impl StereoRig {
    pub fn validate(&self) -> Result<(), StereoError> {
        self.left.validate()?;
        self.right.validate()?;
        self.right_from_left.validate()?;
        self.plenoptic_from_left.validate()?;
        if !(self.rectified.baseline_m > 0.0) {
            return Err(StereoError::DegenerateGeometry);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StereoError {
    /// Baseline is (numerically) zero; rectification is undefined.
    DegenerateGeometry,
    InvalidRange { min: usize, max: usize },
    InvalidIntrinsics(&'static str),
}

impl fmt::Display for StereoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StereoError::DegenerateGeometry => write!(f, "stereo baseline is degenerate"),
            StereoError::InvalidRange { min, max } => {
                write!(f, "invalid disparity range [{min}, {max})")
            }
            StereoError::InvalidIntrinsics(msg) => write!(f, "invalid calibration: {msg}"),
        }
    }
}

impl std::error::Error for StereoError {}

/// Undistorts an image: each output pixel is bilinearly sampled from the
/// source at its forward-distorted position. Pixels mapping outside the
/// source become invalid (and black).
pub fn undistort(img: &RgbImage, intrinsics: &CameraIntrinsics) -> (RgbImage, Vec<bool>) {
    let (w, h) = (img.width(), img.height());
    let mut out = RgbImage::zeros(w, h);
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let xn = (x as f64 - intrinsics.cx) / intrinsics.fx;
            let yn = (y as f64 - intrinsics.cy) / intrinsics.fy;
            let (xd, yd) = intrinsics.distort_normalized(xn, yn);
            let sx = intrinsics.fx * xd + intrinsics.cx;
            let sy = intrinsics.fy * yd + intrinsics.cy;
            if let Some(rgb) = bilinear_sample(img, sx, sy) {
                for (c, v) in rgb.into_iter().enumerate() {
                    out.set(c, x, y, v);
                }
                valid[y * w + x] = true;
            }
        }
    }
    (out, valid)
}

/// Bilinear RGB sample; `None` outside the image.
pub(crate) fn bilinear_sample(img: &RgbImage, x: f64, y: f64) -> Option<[f32; 3]> {
    let (w, h) = (img.width(), img.height());
    if !(0.0..=(w - 1) as f64).contains(&x) || !(0.0..=(h - 1) as f64).contains(&y) {
        return None;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (x - x0 as f64) as f32;
    let fy = (y - y0 as f64) as f32;
    let mut rgb = [0.0f32; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        let v00 = img.get(c, x0, y0);
        let v10 = img.get(c, x1, y0);
        let v01 = img.get(c, x0, y1);
        let v11 = img.get(c, x1, y1);
        *out = v00 * (1.0 - fx) * (1.0 - fy)
            + v10 * fx * (1.0 - fy)
            + v01 * (1.0 - fx) * fy
            + v11 * fx * fy;
    }
    Some(rgb)
}

/// A colored 3D point set in the left rectified camera frame.
#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Vec<[f32; 3]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Triangulates a metric disparity map: `z = f*B/d`, back-projected through
/// the rectified pinhole. Colors come from the left rectified image.
pub fn triangulate(
    disp: &DisparityMap,
    rig: &StereoRig,
    left_rect: &RgbImage,
) -> (DepthMap, PointCloud) {
    let f = rig.rectified.focal_px;
    let fb = f * rig.rectified.baseline_m;
    let (cx, cy) = (rig.rectified.cx, rig.rectified.cy);
    let mut depth = DepthMap::new_invalid(disp.width, disp.height);
    let mut cloud = PointCloud::default();
    for y in 0..disp.height {
        for x in 0..disp.width {
            let Some(d) = disp.get(x, y) else { continue };
            if d <= crate::align::DEFAULT_MIN_DISPARITY_PX {
                continue;
            }
            let z = fb / d;
            depth.set(x, y, z);
            cloud.points.push(Vector3::new(
                z * (x as f64 - cx) / f,
                z * (y as f64 - cy) / f,
                z,
            ));
            cloud.colors.push([
                left_rect.get(0, x, y),
                left_rect.get(1, x, y),
                left_rect.get(2, x, y),
            ]);
        }
    }
    (depth, cloud)
}

/// Z-buffered splatting of a colored point cloud into a target camera.
///
/// Each point is transformed by `target_pose` (target <- source), projected
/// through `intrinsics` (optionally with forward distortion so the output
/// matches a distorted sensor), rounded to the nearest pixel, and kept only
/// if it is the nearest point seen there. Unhit pixels stay invalid;
/// occlusion holes are expected.
pub fn reproject(
    cloud: &PointCloud,
    target_pose: &RigidTransform,
    intrinsics: &CameraIntrinsics,
    size: (usize, usize),
    apply_distortion: bool,
) -> (RgbImage, DepthMap) {
    let (w, h) = size;
    let mut img = RgbImage::zeros(w, h);
    let mut depth = DepthMap::new_invalid(w, h);
    for (p, color) in cloud.points.iter().zip(&cloud.colors) {
        let q = target_pose.apply(p);
        let Some((u, v)) = intrinsics.project(&q, apply_distortion) else { continue };
        let (ui, vi) = (u.round(), v.round());
        if ui < 0.0 || vi < 0.0 || ui >= w as f64 || vi >= h as f64 {
            continue;
        }
        let (x, y) = (ui as usize, vi as usize);
        let keep = match depth.get(x, y) {
            Some(existing) => q.z < existing,
            None => true,
        };
        if keep {
            depth.set(x, y, q.z);
            for (c, &v) in color.iter().enumerate() {
                img.set(c, x, y, v);
            }
        }
    }
    (img, depth)
}

/// Samples a depth map at the microlens centroid positions (nearest pixel);
/// invalid pixels yield no entry.
pub fn sample_at_centroids(depth: &DepthMap, grid: &MicrolensGrid) -> SparseDepthMap {
    let mut samples = Vec::new();
    for &(coord, (cx, cy)) in grid.lenses() {
        let px = cx.round();
        let py = cy.round();
        if px < 0.0 || py < 0.0 || px >= depth.width as f64 || py >= depth.height as f64 {
            continue;
        }
        if let Some(z) = depth.get(px as usize, py as usize) {
            samples.push(SparseSample { coord, position: (cx, cy), depth_m: z });
        }
    }
    SparseDepthMap::new(DepthSource::StereoGt, samples)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// A rectified rig with the given focal and baseline; identity poses.
    pub fn simple_rig(focal_px: f64, baseline_m: f64) -> StereoRig {
        StereoRig {
            left: CameraIntrinsics::pinhole(focal_px, focal_px, 160.0, 120.0),
            right: CameraIntrinsics::pinhole(focal_px, focal_px, 160.0, 120.0),
            right_from_left: RigidTransform::new(
                Matrix3::identity(),
                Vector3::new(-baseline_m, 0.0, 0.0),
            ),
            plenoptic_from_left: RigidTransform::identity(),
            rectified: RectifiedParams { focal_px, baseline_m, cx: 160.0, cy: 120.0 },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::simple_rig;
    use super::*;
    use crate::align::DisparityFrame;

    fn textured_image(w: usize, h: usize) -> RgbImage {
        let mut img = RgbImage::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    img.set(c, x, y, (((x * 7 + y * 13 + c * 29) % 101) as f32) / 100.0);
                }
            }
        }
        img
    }

    #[test]
    fn undistort_zero_coefficients_is_identity() {
        let img = textured_image(40, 30);
        let intr = CameraIntrinsics::pinhole(100.0, 100.0, 20.0, 15.0);
        let (out, valid) = undistort(&img, &intr);
        assert!(valid.iter().all(|&v| v));
        for c in 0..3 {
            for y in 0..30 {
                for x in 0..40 {
                    assert!((out.get(c, x, y) - img.get(c, x, y)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn undistort_center_is_fixed_point_for_radial() {
        let img = textured_image(41, 31);
        let mut intr = CameraIntrinsics::pinhole(100.0, 100.0, 20.0, 15.0);
        intr.k1 = 0.2;
        let (out, valid) = undistort(&img, &intr);
        assert!(valid[15 * 41 + 20]);
        for c in 0..3 {
            assert!((out.get(c, 20, 15) - img.get(c, 20, 15)).abs() < 1e-6);
        }
    }

    #[test]
    fn undistort_restores_straight_lines() {
        // Render a distorted grid of dark lines: a point on an ideal line is
        // drawn at its distorted position. Undistortion must restore the
        // collinearity of sampled line points.
        let (w, h) = (160usize, 120usize);
        let mut intr = CameraIntrinsics::pinhole(120.0, 120.0, (w / 2) as f64, (h / 2) as f64);
        intr.k1 = -0.18;
        intr.k2 = 0.02;
        let mut img = RgbImage::zeros(w, h);
        // Fill background bright.
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    img.set(c, x, y, 1.0);
                }
            }
        }
        // Ideal vertical lines at a few x positions: draw each distorted.
        for &line_x in &[30.0f64, 80.0, 130.0] {
            for step in 0..400 {
                let yy = step as f64 * (h as f64 - 1.0) / 399.0;
                let xn = (line_x - intr.cx) / intr.fx;
                let yn = (yy - intr.cy) / intr.fy;
                let (xd, yd) = intr.distort_normalized(xn, yn);
                let px = intr.fx * xd + intr.cx;
                let py = intr.fy * yd + intr.cy;
                let (xi, yi) = (px.round(), py.round());
                if xi >= 0.0 && yi >= 0.0 && (xi as usize) < w && (yi as usize) < h {
                    for c in 0..3 {
                        img.set(c, xi as usize, yi as usize, 0.0);
                    }
                }
            }
        }
        let (out, _) = undistort(&img, &intr);
        // For each restored line, find the darkest pixel per row and check
        // x-coordinate spread (collinearity of a vertical line).
        for &line_x in &[80.0f64] {
            let mut xs = Vec::new();
            for y in (10..h - 10).step_by(4) {
                let mut best = (0usize, f32::INFINITY);
                for x in (line_x as usize).saturating_sub(8)..(line_x as usize + 8) {
                    let v = out.get(0, x, y);
                    if v < best.1 {
                        best = (x, v);
                    }
                }
                xs.push(best.0 as f64);
            }
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            for x in xs {
                assert!((x - mean).abs() <= 1.0, "line deviation {x} vs {mean}");
            }
        }
    }

    #[test]
    fn triangulate_matches_disparity_to_depth_and_round_trips() {
        let rig = simple_rig(100.0, 0.1);
        let img = textured_image(40, 30);
        let mut disp = DisparityMap::new_invalid(40, 30, DisparityFrame::Metric);
        for y in 0..30 {
            for x in 0..40 {
                disp.set(x, y, 4.0 + (x % 5) as f64);
            }
        }
        let (depth, cloud) = triangulate(&disp, &rig, &img);
        assert_eq!(cloud.len(), 40 * 30);
        let d = disp.get(7, 9).unwrap();
        assert!((depth.get(7, 9).unwrap() - 100.0 * 0.1 / d).abs() < 1e-12);

        // Back-project each point to its source pixel: in simple_rig the
        // left intrinsics equal the rectified ones, so u = x, v = y.
        for (i, p) in cloud.points.iter().enumerate() {
            let (u, v) = rig.left.project(p, false).unwrap();
            let x = (i % 40) as f64;
            let y = (i / 40) as f64;
            assert!((u - x).abs() < 1e-6 && (v - y).abs() < 1e-6);
        }
    }

    #[test]
    fn reproject_identity_pose_round_trips_hit_pixels() {
        let rig = simple_rig(100.0, 0.1);
        let img = textured_image(40, 30);
        let mut disp = DisparityMap::new_invalid(40, 30, DisparityFrame::Metric);
        for y in 0..30 {
            for x in 0..40 {
                disp.set(x, y, 5.0 + ((x * y) % 7) as f64);
            }
        }
        let (depth, cloud) = triangulate(&disp, &rig, &img);
        let intr = CameraIntrinsics::pinhole(
            rig.rectified.focal_px,
            rig.rectified.focal_px,
            rig.rectified.cx,
            rig.rectified.cy,
        );
        let (rimg, rdepth) = reproject(&cloud, &RigidTransform::identity(), &intr, (40, 30), false);
        let mut hits = 0;
        for y in 0..30 {
            for x in 0..40 {
                if let Some(z) = rdepth.get(x, y) {
                    hits += 1;
                    assert_eq!(z, depth.get(x, y).unwrap());
                    for c in 0..3 {
                        assert_eq!(rimg.get(c, x, y), img.get(c, x, y));
                    }
                }
            }
        }
        assert!(hits >= 40 * 30 - 60, "only {hits} round-trip hits");
    }

    #[test]
    fn reproject_keeps_nearest_point_per_pixel() {
        let intr = CameraIntrinsics::pinhole(100.0, 100.0, 5.0, 5.0);
        let cloud = PointCloud {
            points: vec![Vector3::new(0.0, 0.0, 2.0), Vector3::new(0.0, 0.0, 1.0)],
            colors: vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        };
        let (img, depth) = reproject(&cloud, &RigidTransform::identity(), &intr, (10, 10), false);
        assert_eq!(depth.get(5, 5).unwrap(), 1.0);
        assert_eq!(img.get(1, 5, 5), 1.0);
        assert_eq!(img.get(0, 5, 5), 0.0);
    }

    #[test]
    fn reproject_translated_pose_shifts_content() {
        let intr = CameraIntrinsics::pinhole(100.0, 100.0, 16.0, 16.0);
        let cloud = PointCloud {
            points: vec![Vector3::new(0.0, 0.0, 2.0)],
            colors: vec![[0.5, 0.5, 0.5]],
        };
        // Moving the target camera -x means the point appears at +x.
        let pose = RigidTransform::new(Matrix3::identity(), Vector3::new(0.04, 0.0, 0.0));
        let (_, depth) = reproject(&cloud, &pose, &intr, (32, 32), false);
        // x = fx * 0.04/2 + cx = 18.
        assert!(depth.get(18, 16).is_some());
        assert_eq!(depth.valid_count(), 1);
    }

    #[test]
    fn sample_at_centroids_uniform_and_empty() {
        use crate::hexgrid::{build_grid, GridCalibration, Orientation};
        let calib = GridCalibration {
            origin: (30.0, 30.0),
            pitch: 10.0,
            rotation: 0.0,
            rows: 4,
            cols: 4,
            sensor_width: 80,
            sensor_height: 80,
            orientation: Orientation::PointyTop,
        };
        let grid = build_grid(&calib).unwrap();
        let mut depth = DepthMap::new_invalid(80, 80);
        for y in 0..80 {
            for x in 0..80 {
                depth.set(x, y, 2.5);
            }
        }
        let sparse = sample_at_centroids(&depth, &grid);
        assert_eq!(sparse.len(), grid.len());
        assert!(sparse.samples().iter().all(|s| s.depth_m == 2.5));

        let empty = DepthMap::new_invalid(80, 80);
        assert_eq!(sample_at_centroids(&empty, &grid).len(), 0);
    }
}
