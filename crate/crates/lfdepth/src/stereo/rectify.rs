//! Stereo rectification: rotate both cameras so epipolar lines become
//! horizontal and corresponding points share image rows.

use nalgebra::{Matrix3, Vector3};

use crate::plenoptic::RgbImage;

use super::{bilinear_sample, RectifiedParams, StereoError, StereoRig};

/// Rectifying homographies (rectified <- original pixels) and the updated
/// rig carrying the rectified intrinsics and metric baseline.
#[derive(Debug, Clone)]
pub struct RectifyResult {
    pub left_h: Matrix3<f64>,
    pub right_h: Matrix3<f64>,
    pub rig: StereoRig,
}

/// Computes the rectification of a calibrated rig.
///
/// The left camera is rotated so its x axis aligns with the baseline (the
/// right camera center in left coordinates); the right camera is rotated by
/// the same frame composed with the inverse relative rotation. Rectified
/// intrinsics are the average of the calibrated focal lengths and principal
/// points.
pub fn rectify(rig: &StereoRig) -> Result<RectifyResult, StereoError> {
    rig.left.validate()?;
    rig.right.validate()?;
    rig.right_from_left.validate()?;

    let r = &rig.right_from_left.rotation;
    let t = &rig.right_from_left.translation;
    // Right camera center in the left frame.
    let baseline_vec = -(r.transpose() * t);
    let baseline = baseline_vec.norm();
    if baseline < 1e-12 {
        return Err(StereoError::DegenerateGeometry);
    }

    let e1 = baseline_vec / baseline;
    // Second axis perpendicular to the old optical axis and the baseline.
    let helper = if e1.z.abs() < 0.9 {
        Vector3::new(0.0, 0.0, 1.0)
    } else {
        Vector3::new(0.0, 1.0, 0.0)
    };
    let e2 = helper.cross(&e1).normalize();
    let e3 = e1.cross(&e2);
    let r1 = Matrix3::from_rows(&[e1.transpose(), e2.transpose(), e3.transpose()]);
    let r2 = r1 * r.transpose();

    let focal = (rig.left.fx + rig.left.fy + rig.right.fx + rig.right.fy) / 4.0;
    let cx = (rig.left.cx + rig.right.cx) / 2.0;
    let cy = (rig.left.cy + rig.right.cy) / 2.0;
    let k_rect = Matrix3::new(focal, 0.0, cx, 0.0, focal, cy, 0.0, 0.0, 1.0);

    let k_left_inv = rig
        .left
        .matrix()
        .try_inverse()
        .ok_or(StereoError::InvalidIntrinsics("left intrinsics not invertible"))?;
    let k_right_inv = rig
        .right
        .matrix()
        .try_inverse()
        .ok_or(StereoError::InvalidIntrinsics("right intrinsics not invertible"))?;

    let mut rect_rig = rig.clone();
    rect_rig.rectified = RectifiedParams { focal_px: focal, baseline_m: baseline, cx, cy };
    Ok(RectifyResult {
        left_h: k_rect * r1 * k_left_inv,
        right_h: k_rect * r2 * k_right_inv,
        rig: rect_rig,
    })
}

/// Warps an image through a homography (`h` maps source pixels to output
/// pixels); each output pixel samples the source bilinearly at `h^-1 * p`.
pub fn apply_homography(
    img: &RgbImage,
    h: &Matrix3<f64>,
    out_width: usize,
    out_height: usize,
) -> (RgbImage, Vec<bool>) {
    let hinv = h.try_inverse().expect("rectifying homography must be invertible");
    let mut out = RgbImage::zeros(out_width, out_height);
    let mut valid = vec![false; out_width * out_height];
    for y in 0..out_height {
        for x in 0..out_width {
            let p = hinv * Vector3::new(x as f64, y as f64, 1.0);
            if p.z.abs() < 1e-12 {
                continue;
            }
            let sx = p.x / p.z;
            let sy = p.y / p.z;
            if let Some(rgb) = bilinear_sample(img, sx, sy) {
                for (c, v) in rgb.into_iter().enumerate() {
                    out.set(c, x, y, v);
                }
                valid[y * out_width + x] = true;
            }
        }
    }
    (out, valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stereo::{CameraIntrinsics, RigidTransform};

    fn rotation_xyz(rx: f64, ry: f64, rz: f64) -> Matrix3<f64> {
        let (sx, cx) = rx.sin_cos();
        let (sy, cy) = ry.sin_cos();
        let (sz, cz) = rz.sin_cos();
        let mx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
        let my = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
        let mz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
        mz * my * mx
    }

    fn rig_with(rot: Matrix3<f64>, t: Vector3<f64>) -> StereoRig {
        StereoRig {
            left: CameraIntrinsics::pinhole(400.0, 400.0, 160.0, 120.0),
            right: CameraIntrinsics::pinhole(400.0, 400.0, 160.0, 120.0),
            right_from_left: RigidTransform::new(rot, t),
            plenoptic_from_left: RigidTransform::identity(),
            rectified: RectifiedParams { focal_px: 400.0, baseline_m: 0.1, cx: 160.0, cy: 120.0 },
        }
    }

    #[test]
    fn already_rectified_rig_gives_identity_homographies() {
        let rig = rig_with(Matrix3::identity(), Vector3::new(-0.1, 0.0, 0.0));
        let res = rectify(&rig).unwrap();
        assert!((res.left_h - Matrix3::identity()).norm() < 1e-9);
        assert!((res.right_h - Matrix3::identity()).norm() < 1e-9);
        assert!((res.rig.rectified.baseline_m - 0.1).abs() < 1e-12);
        assert!((res.rig.rectified.focal_px - 400.0).abs() < 1e-12);
    }

    #[test]
    fn zero_baseline_is_degenerate() {
        let rig = rig_with(rotation_xyz(0.01, 0.0, 0.0), Vector3::zeros());
        assert_eq!(rectify(&rig).unwrap_err(), StereoError::DegenerateGeometry);
    }

    #[test]
    fn rotated_rig_rectifies_epipolar_lines() {
        // 5 degrees of relative rotation spread over all axes.
        let deg = std::f64::consts::PI / 180.0;
        let rot = rotation_xyz(2.0 * deg, 4.0 * deg, 1.5 * deg);
        let t = rot * Vector3::new(-0.1, 0.004, -0.006);
        let rig = rig_with(rot, t);
        let res = rectify(&rig).unwrap();

        // Project 3D test points through both chains; rectified rows must
        // agree to well under 0.05 px, and disparity must follow f*B/z.
        let mut checked = 0;
        for i in 0..200 {
            let p_left = Vector3::new(
                ((i * 29) % 17) as f64 * 0.03 - 0.25,
                ((i * 31) % 13) as f64 * 0.03 - 0.2,
                1.0 + ((i * 7) % 23) as f64 * 0.15,
            );
            let p_right = rig.right_from_left.apply(&p_left);
            if p_right.z <= 0.0 {
                continue;
            }
            let (ul, vl) = rig.left.project(&p_left, false).unwrap();
            let (ur, vr) = rig.right.project(&p_right, false).unwrap();
            let pl = res.left_h * Vector3::new(ul, vl, 1.0);
            let pr = res.right_h * Vector3::new(ur, vr, 1.0);
            let (rxl, ryl) = (pl.x / pl.z, pl.y / pl.z);
            let (rxr, ryr) = (pr.x / pr.z, pr.y / pr.z);
            assert!((ryl - ryr).abs() < 0.05, "row mismatch {}", (ryl - ryr).abs());
            let fb = res.rig.rectified.focal_px * res.rig.rectified.baseline_m;
            let disp = rxl - rxr;
            assert!(disp > 0.0);
            // Rectified-frame depth is the z of R1 * p; recover R1 from the
            // homography as K_rect^-1 * H_left * K_left.
            let k_rect = Matrix3::new(
                res.rig.rectified.focal_px,
                0.0,
                res.rig.rectified.cx,
                0.0,
                res.rig.rectified.focal_px,
                res.rig.rectified.cy,
                0.0,
                0.0,
                1.0,
            );
            let r1 = k_rect.try_inverse().unwrap() * res.left_h * rig.left.matrix();
            let zr = (r1 * p_left).z;
            assert!((disp - fb / zr).abs() < 1e-6, "disparity {} vs {}", disp, fb / zr);
            checked += 1;
        }
        assert!(checked > 150);
    }

    #[test]
    fn homography_warp_identity() {
        let mut img = RgbImage::zeros(8, 6);
        for y in 0..6 {
            for x in 0..8 {
                img.set(0, x, y, ((x + y) % 5) as f32 / 4.0);
            }
        }
        let (out, valid) = apply_homography(&img, &Matrix3::identity(), 8, 6);
        assert!(valid.iter().all(|&v| v));
        for y in 0..6 {
            for x in 0..8 {
                assert!((out.get(0, x, y) - img.get(0, x, y)).abs() < 1e-6);
            }
        }
    }
}
