//! Scale/offset alignment of dense relative disparity to sparse metric
//! depth, and fusion into a dense metric depth map.
//!
//! Depths are converted to disparities (`d = f*B/z`) so the relationship to
//! the relative map is monotone, a robust linear model `y = m*x + b` is
//! fitted on sampled correspondences, and the model maps the dense relative
//! map into metric disparity, which converts back to depth.
//!
//! The primary estimator is Theil-Sen (median of pairwise slopes, median
//! intercept); RANSAC, Huber-IRLS and SGD-Huber are provided as the
//! alternate regressors of the ablation.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::net::SparseDepthMap;
use crate::stereo::StereoRig;

/// Disparities below this are treated as invalid rather than producing
/// unbounded depth.
pub const DEFAULT_MIN_DISPARITY_PX: f64 = 1e-6;
/// Above this correspondence count, exact Theil-Sen switches to seeded
/// pair sampling.
pub const DEFAULT_EXACT_LIMIT: usize = 2000;
/// Sampled-mode pair budget.
pub const DEFAULT_SAMPLED_PAIRS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum AlignError {
    NonPositiveDepth { x: usize, y: usize, depth: f64 },
    TooFewCorrespondences { found: usize },
    /// All x values coincide; no slope is defined.
    DegenerateX,
    /// RANSAC found no 2-point hypothesis with any support.
    NoConsensus,
}

impl fmt::Display for AlignError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlignError::NonPositiveDepth { x, y, depth } => {
                write!(f, "non-positive depth {depth} at pixel ({x}, {y})")
            }
            AlignError::TooFewCorrespondences { found } => {
                write!(f, "need at least 2 correspondences, found {found}")
            }
            AlignError::DegenerateX => write!(f, "all x values are equal; slope undefined"),
            AlignError::NoConsensus => write!(f, "no consensus set found"),
        }
    }
}

impl std::error::Error for AlignError {}

/// Frame of a disparity map: raw monocular-model output (arbitrary affine
/// scale) or metric stereo disparity in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisparityFrame {
    Relative,
    Metric,
}

/// A dense per-pixel disparity map with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    pub width: usize,
    pub height: usize,
    pub frame: DisparityFrame,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DisparityMap {
    pub fn new_invalid(width: usize, height: usize, frame: DisparityFrame) -> Self {
        DisparityMap {
            width,
            height,
            frame,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn from_parts(
        width: usize,
        height: usize,
        frame: DisparityFrame,
        values: Vec<f64>,
        valid: Vec<bool>,
    ) -> Self {
        assert_eq!(values.len(), width * height);
        assert_eq!(valid.len(), width * height);
        DisparityMap { width, height, frame, values, valid }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.values[i])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        let i = y * self.width + x;
        self.values[i] = value;
        self.valid[i] = true;
    }

    #[inline]
    pub fn invalidate(&mut self, x: usize, y: usize) {
        self.valid[y * self.width + x] = false;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// A dense per-pixel metric depth map (meters) with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn new_invalid(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn from_parts(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Self {
        assert_eq!(values.len(), width * height);
        assert_eq!(valid.len(), width * height);
        DepthMap { width, height, values, valid }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.values[i])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, depth: f64) {
        let i = y * self.width + x;
        self.values[i] = depth;
        self.valid[i] = true;
    }

    #[inline]
    pub fn invalidate(&mut self, x: usize, y: usize) {
        self.valid[y * self.width + x] = false;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Converts metric depth to metric disparity: `d = f*B / z`.
pub fn depth_to_disparity(depth: &DepthMap, rig: &StereoRig) -> Result<DisparityMap, AlignError> {
    let fb = rig.rectified.focal_px * rig.rectified.baseline_m;
    let mut out = DisparityMap::new_invalid(depth.width, depth.height, DisparityFrame::Metric);
    for y in 0..depth.height {
        for x in 0..depth.width {
            if let Some(z) = depth.get(x, y) {
                if z <= 0.0 {
                    return Err(AlignError::NonPositiveDepth { x, y, depth: z });
                }
                out.set(x, y, fb / z);
            }
        }
    }
    Ok(out)
}

/// Converts metric disparity back to depth: `z = f*B / d`. Pixels with
/// `d <= min_disparity_px` become invalid instead of exploding.
pub fn disparity_to_depth(disp: &DisparityMap, rig: &StereoRig, min_disparity_px: f64) -> DepthMap {
    let fb = rig.rectified.focal_px * rig.rectified.baseline_m;
    let mut out = DepthMap::new_invalid(disp.width, disp.height);
    for y in 0..disp.height {
        for x in 0..disp.width {
            if let Some(d) = disp.get(x, y) {
                if d > min_disparity_px {
                    out.set(x, y, fb / d);
                }
            }
        }
    }
    out
}

/// One (relative disparity, metric disparity) pair and its source pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub x: f64,
    pub y: f64,
    pub pixel: (f64, f64),
}

/// The fitting input: pairs `(x_i, y_i)` of relative and metric disparity.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<Correspondence>) -> Self {
        assert!(
            pairs.iter().all(|p| p.x.is_finite() && p.y.is_finite()),
            "correspondences must be finite"
        );
        CorrespondenceSet { pairs }
    }

    pub fn from_xy(xy: &[(f64, f64)]) -> Self {
        CorrespondenceSet::new(
            xy.iter().map(|&(x, y)| Correspondence { x, y, pixel: (0.0, 0.0) }).collect(),
        )
    }

    pub fn pairs(&self) -> &[Correspondence] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Samples dense relative disparities at the sparse depth anchors.
///
/// `x_i` is the dense value at the nearest pixel to the sample's centroid,
/// `y_i = f*B / depth_i`. Samples landing outside the map, on invalid dense
/// pixels, or carrying non-positive depth are skipped.
pub fn sample_correspondences(
    dense: &DisparityMap,
    sparse: &SparseDepthMap,
    rig: &StereoRig,
) -> Result<CorrespondenceSet, AlignError> {
    let fb = rig.rectified.focal_px * rig.rectified.baseline_m;
    let mut pairs = Vec::new();
    for s in sparse.samples() {
        let px = s.position.0.round();
        let py = s.position.1.round();
        if px < 0.0 || py < 0.0 || px >= dense.width as f64 || py >= dense.height as f64 {
            continue;
        }
        if s.depth_m <= 0.0 {
            continue;
        }
        if let Some(x) = dense.get(px as usize, py as usize) {
            pairs.push(Correspondence { x, y: fb / s.depth_m, pixel: (px, py) });
        }
    }
    if pairs.len() < 2 {
        return Err(AlignError::TooFewCorrespondences { found: pairs.len() });
    }
    Ok(CorrespondenceSet::new(pairs))
}

/// Which regressor produced a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    TheilSen,
    Ransac,
    Huber,
    SgdHuber,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::TheilSen => "theil-sen",
            EstimatorKind::Ransac => "ransac",
            EstimatorKind::Huber => "huber",
            EstimatorKind::SgdHuber => "sgd-huber",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "theil-sen" => Some(EstimatorKind::TheilSen),
            "ransac" => Some(EstimatorKind::Ransac),
            "huber" => Some(EstimatorKind::Huber),
            "sgd-huber" => Some(EstimatorKind::SgdHuber),
            _ => None,
        }
    }
}

/// The fitted linear model `y = m*x + b` mapping relative to metric
/// disparity. `m` must be finite; fusion is physically meaningful only for
/// `m > 0`, which callers should surface as a warning rather than an error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearScaleModel {
    pub m: f64,
    pub b: f64,
    pub estimator: EstimatorKind,
    pub inlier_count: usize,
    /// False when an iterative fit stopped at its iteration limit.
    pub converged: bool,
}

impl LinearScaleModel {
    pub fn apply(&self, x: f64) -> f64 {
        self.m * x + self.b
    }

    /// Median absolute residual over a correspondence set.
    pub fn residual_median(&self, set: &CorrespondenceSet) -> f64 {
        let mut residuals: Vec<f64> =
            set.pairs().iter().map(|p| (p.y - self.apply(p.x)).abs()).collect();
        median_in_place(&mut residuals)
    }
}

/// Theil-Sen evaluation mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TheilSenMode {
    /// All C(n,2) pairwise slopes.
    Exact,
    /// `pairs` seeded random index pairs; used for large sets.
    Sampled { pairs: usize, seed: u64 },
}

/// Median with the mean-of-central-two convention for even counts.
fn median_in_place(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty set");
    values.sort_by(|a, b| a.total_cmp(b));
    let mid = values.len() / 2;
    if values.len() % 2 == 0 {
        (values[mid - 1] + values[mid]) / 2.0
    } else {
        values[mid]
    }
}

/// Theil-Sen regression: `m = median{(y_j - y_i)/(x_j - x_i)}` over pairs
/// with distinct x, then `b = median{y_i - m*x_i}`.
pub fn fit_theil_sen(
    set: &CorrespondenceSet,
    mode: TheilSenMode,
) -> Result<LinearScaleModel, AlignError> {
    let pairs = set.pairs();
    if pairs.len() < 2 {
        return Err(AlignError::TooFewCorrespondences { found: pairs.len() });
    }
    let mut slopes = Vec::new();
    match mode {
        TheilSenMode::Exact => {
            slopes.reserve(pairs.len() * (pairs.len() - 1) / 2);
            for i in 0..pairs.len() {
                for j in i + 1..pairs.len() {
                    if pairs[i].x != pairs[j].x {
                        slopes.push((pairs[j].y - pairs[i].y) / (pairs[j].x - pairs[i].x));
                    }
                }
            }
        }
        TheilSenMode::Sampled { pairs: budget, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            slopes.reserve(budget);
            for _ in 0..budget {
                let i = rng.random_range(0..pairs.len());
                let j = rng.random_range(0..pairs.len());
                if i != j && pairs[i].x != pairs[j].x {
                    slopes.push((pairs[j].y - pairs[i].y) / (pairs[j].x - pairs[i].x));
                }
            }
        }
    }
    if slopes.is_empty() {
        return Err(AlignError::DegenerateX);
    }
    let m = median_in_place(&mut slopes);
    let mut intercepts: Vec<f64> = pairs.iter().map(|p| p.y - m * p.x).collect();
    let b = median_in_place(&mut intercepts);
    Ok(LinearScaleModel {
        m,
        b,
        estimator: EstimatorKind::TheilSen,
        inlier_count: pairs.len(),
        converged: true,
    })
}

/// Plain least squares on (x, y) slices; `None` when x is degenerate.
fn least_squares(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return None;
    }
    let m = sxy / sxx;
    Some((m, mean_y - m * mean_x))
}

/// RANSAC line fitting: seeded 2-point hypotheses, consensus by residual
/// threshold, least-squares refit on the best consensus set.
pub fn fit_ransac(
    set: &CorrespondenceSet,
    iterations: usize,
    inlier_threshold: f64,
    seed: u64,
) -> Result<LinearScaleModel, AlignError> {
    let pairs = set.pairs();
    if pairs.len() < 2 {
        return Err(AlignError::TooFewCorrespondences { found: pairs.len() });
    }
    if pairs.iter().all(|p| p.x == pairs[0].x) {
        return Err(AlignError::DegenerateX);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, f64, f64)> = None; // (count, m, b)
    for _ in 0..iterations {
        let i = rng.random_range(0..pairs.len());
        let j = rng.random_range(0..pairs.len());
        if i == j || pairs[i].x == pairs[j].x {
            continue;
        }
        let m = (pairs[j].y - pairs[i].y) / (pairs[j].x - pairs[i].x);
        let b = pairs[i].y - m * pairs[i].x;
        let count = pairs.iter().filter(|p| (p.y - (m * p.x + b)).abs() <= inlier_threshold).count();
        if best.map_or(true, |(bc, _, _)| count > bc) {
            best = Some((count, m, b));
        }
    }
    let (count, m0, b0) = best.ok_or(AlignError::NoConsensus)?;
    if count < 2 {
        return Err(AlignError::NoConsensus);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs
        .iter()
        .filter(|p| (p.y - (m0 * p.x + b0)).abs() <= inlier_threshold)
        .map(|p| (p.x, p.y))
        .unzip();
    let (m, b) = least_squares(&xs, &ys).ok_or(AlignError::DegenerateX)?;
    Ok(LinearScaleModel {
        m,
        b,
        estimator: EstimatorKind::Ransac,
        inlier_count: count,
        converged: true,
    })
}

/// Huber-loss regression via iteratively reweighted least squares.
///
/// `delta = None` re-derives the threshold each iteration as
/// `1.345 * 1.4826 * MAD(residuals)`. Convergence: parameter change below
/// `tol`. Hitting `max_iters` returns the last iterate with
/// `converged = false`.
pub fn fit_huber(
    set: &CorrespondenceSet,
    delta: Option<f64>,
    max_iters: usize,
    tol: f64,
) -> Result<LinearScaleModel, AlignError> {
    let pairs = set.pairs();
    if pairs.len() < 2 {
        return Err(AlignError::TooFewCorrespondences { found: pairs.len() });
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.y).collect();
    let (mut m, mut b) = least_squares(&xs, &ys).ok_or(AlignError::DegenerateX)?;

    let mut converged = false;
    for _ in 0..max_iters {
        let residuals: Vec<f64> = xs.iter().zip(&ys).map(|(&x, &y)| y - (m * x + b)).collect();
        let threshold = match delta {
            Some(d) => d,
            None => {
                let mut abs_dev: Vec<f64> = residuals.clone();
                let center = median_in_place(&mut abs_dev.clone());
                for r in abs_dev.iter_mut() {
                    *r = (*r - center).abs();
                }
                let mad = median_in_place(&mut abs_dev);
                1.345 * 1.4826 * mad
            }
        };
        // Weighted least squares with Huber weights w = min(1, delta/|r|).
        let mut sw = 0.0;
        let mut swx = 0.0;
        let mut swy = 0.0;
        for (i, r) in residuals.iter().enumerate() {
            let w = if threshold > 0.0 && r.abs() > threshold { threshold / r.abs() } else { 1.0 };
            sw += w;
            swx += w * xs[i];
            swy += w * ys[i];
        }
        let mx = swx / sw;
        let my = swy / sw;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for (i, r) in residuals.iter().enumerate() {
            let w = if threshold > 0.0 && r.abs() > threshold { threshold / r.abs() } else { 1.0 };
            sxx += w * (xs[i] - mx) * (xs[i] - mx);
            sxy += w * (xs[i] - mx) * (ys[i] - my);
        }
        if sxx == 0.0 {
            return Err(AlignError::DegenerateX);
        }
        let new_m = sxy / sxx;
        let new_b = my - new_m * mx;
        let step = (new_m - m).abs().max((new_b - b).abs());
        m = new_m;
        b = new_b;
        if step < tol {
            converged = true;
            break;
        }
    }
    Ok(LinearScaleModel {
        m,
        b,
        estimator: EstimatorKind::Huber,
        inlier_count: pairs.len(),
        converged,
    })
}

/// Stochastic gradient descent on the Huber loss over standardized x.
/// Initializes at (0, 0) in standardized coordinates and de-standardizes
/// the final parameters.
pub fn fit_sgd_huber(
    set: &CorrespondenceSet,
    learning_rate: f64,
    epochs: usize,
    seed: u64,
    delta: f64,
) -> Result<LinearScaleModel, AlignError> {
    let pairs = set.pairs();
    if pairs.len() < 2 {
        return Err(AlignError::TooFewCorrespondences { found: pairs.len() });
    }
    let n = pairs.len() as f64;
    let mean_x = pairs.iter().map(|p| p.x).sum::<f64>() / n;
    let var_x = pairs.iter().map(|p| (p.x - mean_x).powi(2)).sum::<f64>() / n;
    if var_x == 0.0 {
        return Err(AlignError::DegenerateX);
    }
    let std_x = var_x.sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut ms = 0.0f64; // slope in standardized x
    let mut bs = 0.0f64;
    for _ in 0..epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for &i in &order {
            let xs = (pairs[i].x - mean_x) / std_x;
            let r = pairs[i].y - (ms * xs + bs);
            let psi = if r.abs() <= delta { r } else { delta * r.signum() };
            ms += learning_rate * psi * xs;
            bs += learning_rate * psi;
        }
    }
    let m = ms / std_x;
    let b = bs - ms * mean_x / std_x;
    Ok(LinearScaleModel {
        m,
        b,
        estimator: EstimatorKind::SgdHuber,
        inlier_count: pairs.len(),
        converged: true,
    })
}

/// Applies the linear model to a relative map and converts to metric depth.
/// Pixels whose aligned disparity falls at or below `min_disparity_px`
/// become invalid.
pub fn fuse(
    dense_rel: &DisparityMap,
    model: &LinearScaleModel,
    rig: &StereoRig,
    min_disparity_px: f64,
) -> DepthMap {
    let mut metric =
        DisparityMap::new_invalid(dense_rel.width, dense_rel.height, DisparityFrame::Metric);
    for y in 0..dense_rel.height {
        for x in 0..dense_rel.width {
            if let Some(v) = dense_rel.get(x, y) {
                metric.set(x, y, model.apply(v));
            }
        }
    }
    disparity_to_depth(&metric, rig, min_disparity_px)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stereo::test_support::simple_rig;
    use proptest::prelude::*;

    fn line_set(m: f64, b: f64, xs: &[f64]) -> CorrespondenceSet {
        CorrespondenceSet::from_xy(&xs.iter().map(|&x| (x, m * x + b)).collect::<Vec<_>>())
    }

    #[test]
    fn depth_disparity_direct_formula_and_round_trip() {
        let rig = simple_rig(1000.0, 0.1);
        let mut depth = DepthMap::new_invalid(2, 1);
        depth.set(0, 0, 10.0);
        depth.set(1, 0, 2.5);
        let disp = depth_to_disparity(&depth, &rig).unwrap();
        assert!((disp.get(0, 0).unwrap() - 10.0).abs() < 1e-12);
        assert!((disp.get(1, 0).unwrap() - 40.0).abs() < 1e-12);
        let back = disparity_to_depth(&disp, &rig, DEFAULT_MIN_DISPARITY_PX);
        assert!((back.get(0, 0).unwrap() - 10.0).abs() < 1e-9);
        assert!((back.get(1, 0).unwrap() - 2.5).abs() < 1e-9);
    }

    #[test]
    fn non_positive_depth_is_an_error() {
        let rig = simple_rig(1000.0, 0.1);
        let mut depth = DepthMap::new_invalid(1, 1);
        depth.set(0, 0, -1.0);
        assert!(matches!(
            depth_to_disparity(&depth, &rig),
            Err(AlignError::NonPositiveDepth { .. })
        ));
    }

    #[test]
    fn zero_disparity_becomes_invalid_depth() {
        let rig = simple_rig(1000.0, 0.1);
        let mut disp = DisparityMap::new_invalid(2, 1, DisparityFrame::Metric);
        disp.set(0, 0, 0.0);
        disp.set(1, 0, 5.0);
        let depth = disparity_to_depth(&disp, &rig, DEFAULT_MIN_DISPARITY_PX);
        assert_eq!(depth.get(0, 0), None);
        assert!((depth.get(1, 0).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn disparity_decreases_monotonically_with_depth() {
        let rig = simple_rig(800.0, 0.2);
        let mut prev = f64::INFINITY;
        for z in [1.0, 2.0, 5.0, 20.0, 1000.0] {
            let mut depth = DepthMap::new_invalid(1, 1);
            depth.set(0, 0, z);
            let d = depth_to_disparity(&depth, &rig).unwrap().get(0, 0).unwrap();
            assert!(d < prev);
            prev = d;
        }
        assert!(prev < 1.0);
    }

    #[test]
    fn theil_sen_exact_line() {
        let set = CorrespondenceSet::from_xy(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]);
        let model = fit_theil_sen(&set, TheilSenMode::Exact).unwrap();
        assert_eq!(model.m, 2.0);
        assert_eq!(model.b, 1.0);
        assert_eq!(model.inlier_count, 3);
    }

    #[test]
    fn theil_sen_two_points() {
        let set = CorrespondenceSet::from_xy(&[(1.0, 1.0), (3.0, 7.0)]);
        let model = fit_theil_sen(&set, TheilSenMode::Exact).unwrap();
        assert!((model.m - 3.0).abs() < 1e-15);
        assert!((model.b + 2.0).abs() < 1e-15);
    }

    #[test]
    fn theil_sen_ignores_gross_outliers() {
        // 20 points on y = 0.5x + 2 plus 8 gross outliers.
        let mut xy: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 0.5 * i as f64 + 2.0)).collect();
        for i in 0..8 {
            xy.push((i as f64 + 0.25, 0.5 * i as f64 + 102.0));
        }
        let model = fit_theil_sen(&CorrespondenceSet::from_xy(&xy), TheilSenMode::Exact).unwrap();
        assert!((model.m - 0.5).abs() < 1e-9);
        assert!((model.b - 2.0).abs() < 1e-9);
    }

    #[test]
    fn theil_sen_degenerate_x() {
        let set = CorrespondenceSet::from_xy(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)]);
        assert_eq!(fit_theil_sen(&set, TheilSenMode::Exact), Err(AlignError::DegenerateX));
    }

    #[test]
    fn theil_sen_sampled_is_deterministic_and_close_to_exact() {
        let mut xy: Vec<(f64, f64)> = (0..200)
            .map(|i| {
                let x = i as f64 * 0.1;
                (x, 1.7 * x - 0.3 + ((i * 37) % 11) as f64 * 1e-3)
            })
            .collect();
        xy[7].1 += 50.0;
        let set = CorrespondenceSet::from_xy(&xy);
        let exact = fit_theil_sen(&set, TheilSenMode::Exact).unwrap();
        let mode = TheilSenMode::Sampled { pairs: 50_000, seed: 11 };
        let s1 = fit_theil_sen(&set, mode).unwrap();
        let s2 = fit_theil_sen(&set, mode).unwrap();
        assert_eq!(s1, s2);
        assert!((s1.m - exact.m).abs() < 1e-3);
        assert!((s1.b - exact.b).abs() < 1e-2);
    }

    #[test]
    fn theil_sen_breakdown_quarter_corrupted() {
        // 40 points on an exact line, 10 arbitrarily corrupted.
        let m_true = -1.25;
        let b_true = 4.0;
        let mut xy: Vec<(f64, f64)> =
            (0..40).map(|i| (i as f64 * 0.25, m_true * (i as f64 * 0.25) + b_true)).collect();
        for i in 0..10 {
            xy[i * 4].1 = 1000.0 + (i as f64) * -333.3;
        }
        let model = fit_theil_sen(&CorrespondenceSet::from_xy(&xy), TheilSenMode::Exact).unwrap();
        assert!((model.m - m_true).abs() < 1e-9);
        assert!((model.b - b_true).abs() < 1e-9);
    }

    #[test]
    fn theil_sen_equivariance() {
        let xy: Vec<(f64, f64)> = (0..15)
            .map(|i| {
                let x = i as f64 * 0.5 - 3.0;
                (x, 2.0 * x + 1.0 + ((i * 7) % 5) as f64 * 0.01)
            })
            .collect();
        let base = fit_theil_sen(&CorrespondenceSet::from_xy(&xy), TheilSenMode::Exact).unwrap();

        // Scale all y by s: (m, b) scale by s.
        let s = 3.5;
        let scaled: Vec<(f64, f64)> = xy.iter().map(|&(x, y)| (x, s * y)).collect();
        let ms = fit_theil_sen(&CorrespondenceSet::from_xy(&scaled), TheilSenMode::Exact).unwrap();
        assert!((ms.m - s * base.m).abs() < 1e-9);
        assert!((ms.b - s * base.b).abs() < 1e-9);

        // Translate x by dx: m fixed, b shifts by -m*dx.
        let dx = 2.25;
        let shifted: Vec<(f64, f64)> = xy.iter().map(|&(x, y)| (x + dx, y)).collect();
        let mt = fit_theil_sen(&CorrespondenceSet::from_xy(&shifted), TheilSenMode::Exact).unwrap();
        assert!((mt.m - base.m).abs() < 1e-9);
        assert!((mt.b - (base.b - base.m * dx)).abs() < 1e-9);
    }

    #[test]
    fn theil_sen_permutation_invariance_is_exact() {
        let xy: Vec<(f64, f64)> = (0..12)
            .map(|i| (((i * 29) % 13) as f64 * 0.37, ((i * 17) % 7) as f64 * 1.13 - 2.0))
            .collect();
        let base = fit_theil_sen(&CorrespondenceSet::from_xy(&xy), TheilSenMode::Exact).unwrap();
        let mut permuted = xy.clone();
        permuted.reverse();
        permuted.swap(2, 9);
        let p = fit_theil_sen(&CorrespondenceSet::from_xy(&permuted), TheilSenMode::Exact).unwrap();
        assert_eq!(base.m, p.m);
        assert_eq!(base.b, p.b);
    }

    #[test]
    fn ransac_recovers_exact_line_with_all_inliers() {
        let set = line_set(2.0, 1.0, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let model = fit_ransac(&set, 50, 0.1, 0).unwrap();
        assert!((model.m - 2.0).abs() < 1e-12);
        assert!((model.b - 1.0).abs() < 1e-12);
        assert_eq!(model.inlier_count, 5);
    }

    #[test]
    fn ransac_rejects_30_percent_outliers() {
        // 70% on y = 2x + 1, 30% pseudo-uniform noise far from the line.
        let mut xy = Vec::new();
        for i in 0..70 {
            let x = i as f64 * 0.1;
            xy.push((x, 2.0 * x + 1.0));
        }
        for i in 0..30 {
            let x = (i as f64 * 0.31) % 7.0;
            let y = 40.0 + ((i * 53) % 29) as f64;
            xy.push((x, y));
        }
        let model = fit_ransac(&CorrespondenceSet::from_xy(&xy), 200, 0.1, 7).unwrap();
        assert!((model.m - 2.0).abs() < 1e-6);
        assert!((model.b - 1.0).abs() < 1e-6);
        assert_eq!(model.inlier_count, 70);
    }

    #[test]
    fn ransac_same_seed_same_model() {
        let mut xy: Vec<(f64, f64)> =
            (0..50).map(|i| (i as f64, 0.5 * i as f64 + ((i * 13) % 5) as f64 * 0.01)).collect();
        xy[3].1 += 30.0;
        let set = CorrespondenceSet::from_xy(&xy);
        let a = fit_ransac(&set, 100, 0.1, 99).unwrap();
        let b = fit_ransac(&set, 100, 0.1, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ransac_degenerate_x() {
        let set = CorrespondenceSet::from_xy(&[(2.0, 1.0), (2.0, 5.0)]);
        assert_eq!(fit_ransac(&set, 10, 0.1, 0), Err(AlignError::DegenerateX));
    }

    #[test]
    fn huber_exact_line_and_ols_limit() {
        let set = line_set(3.0, -1.0, &[0.0, 0.5, 1.0, 1.5, 2.0, 2.5]);
        let model = fit_huber(&set, None, 100, 1e-12).unwrap();
        assert!((model.m - 3.0).abs() < 1e-9);
        assert!((model.b + 1.0).abs() < 1e-9);
        assert!(model.converged);

        // delta -> infinity reduces to ordinary least squares.
        let noisy: Vec<(f64, f64)> =
            (0..30).map(|i| (i as f64, 3.0 * i as f64 - 1.0 + ((i * 7) % 3) as f64)).collect();
        let set = CorrespondenceSet::from_xy(&noisy);
        let huber = fit_huber(&set, Some(1e12), 10, 1e-12).unwrap();
        let xs: Vec<f64> = noisy.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = noisy.iter().map(|p| p.1).collect();
        let (m_ols, b_ols) = least_squares(&xs, &ys).unwrap();
        assert!((huber.m - m_ols).abs() < 1e-9);
        assert!((huber.b - b_ols).abs() < 1e-9);
    }

    #[test]
    fn huber_gaussian_noise_monte_carlo() {
        // Gaussian-ish noise sigma = 0.01 around y = 3x - 1, n = 200, fixed
        // seed. The slope estimate must land within a 3-sigma band derived
        // from the OLS variance (Huber efficiency ~0.95 adds slack).
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sigma = 0.01;
        let xy: Vec<(f64, f64)> = (0..200)
            .map(|i| {
                let x = i as f64 * 0.01;
                // Box-Muller from two uniform draws.
                let u1: f64 = rng.random::<f64>().max(1e-12);
                let u2: f64 = rng.random();
                let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                (x, 3.0 * x - 1.0 + sigma * g)
            })
            .collect();
        let set = CorrespondenceSet::from_xy(&xy);
        let model = fit_huber(&set, None, 100, 1e-10).unwrap();
        let n = xy.len() as f64;
        let mean_x = xy.iter().map(|p| p.0).sum::<f64>() / n;
        let sx = (xy.iter().map(|p| (p.0 - mean_x).powi(2)).sum::<f64>() / n).sqrt();
        let slope_sigma = sigma / (sx * n.sqrt());
        assert!(
            (model.m - 3.0).abs() < 3.0 * slope_sigma / 0.95f64.sqrt(),
            "slope {} outside the confidence band",
            model.m
        );
    }

    #[test]
    fn huber_nonconvergence_sets_flag() {
        // A gross outlier keeps the IRLS weights moving, so one iteration
        // cannot reach a 1e-15 parameter tolerance; many iterations can.
        let mut xy: Vec<(f64, f64)> =
            (0..40).map(|i| (i as f64 * 0.1, 2.0 * i as f64 * 0.1 + 1.0)).collect();
        xy[5].1 += 200.0;
        let set = CorrespondenceSet::from_xy(&xy);
        let unconverged = fit_huber(&set, None, 1, 1e-15).unwrap();
        assert!(!unconverged.converged);
        let converged = fit_huber(&set, None, 200, 1e-12).unwrap();
        assert!(converged.converged);
    }

    #[test]
    fn sgd_huber_converges_on_exact_line() {
        let xy: Vec<(f64, f64)> = (0..50).map(|i| {
            let x = i as f64 * 0.2 - 5.0;
            (x, 1.5 * x + 0.75)
        }).collect();
        let set = CorrespondenceSet::from_xy(&xy);
        let model = fit_sgd_huber(&set, 0.05, 2000, 3, 1.345).unwrap();
        assert!((model.m - 1.5).abs() < 1e-3, "m = {}", model.m);
        assert!((model.b - 0.75).abs() < 1e-3, "b = {}", model.b);
    }

    #[test]
    fn sgd_huber_zero_learning_rate_stays_at_init() {
        let set = line_set(2.0, 3.0, &[0.0, 1.0, 2.0]);
        let model = fit_sgd_huber(&set, 0.0, 10, 0, 1.345).unwrap();
        assert_eq!(model.m, 0.0);
        assert_eq!(model.b, 0.0);
    }

    #[test]
    fn sgd_huber_is_seed_deterministic() {
        let xy: Vec<(f64, f64)> =
            (0..30).map(|i| (i as f64, 0.7 * i as f64 + 0.2 + ((i % 3) as f64) * 0.05)).collect();
        let set = CorrespondenceSet::from_xy(&xy);
        let a = fit_sgd_huber(&set, 0.01, 100, 42, 1.345).unwrap();
        let b = fit_sgd_huber(&set, 0.01, 100, 42, 1.345).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_estimators_agree_on_collinear_data() {
        let set = line_set(1.25, -0.5, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let ts = fit_theil_sen(&set, TheilSenMode::Exact).unwrap();
        let rs = fit_ransac(&set, 100, 0.01, 0).unwrap();
        let hu = fit_huber(&set, None, 100, 1e-12).unwrap();
        let sgd = fit_sgd_huber(&set, 0.05, 3000, 0, 1.345).unwrap();
        for model in [&rs, &hu] {
            assert!((model.m - ts.m).abs() < 1e-6);
            assert!((model.b - ts.b).abs() < 1e-6);
        }
        assert!((sgd.m - ts.m).abs() < 1e-3);
        assert!((sgd.b - ts.b).abs() < 1e-3);
    }

    #[test]
    fn fuse_identity_model_matches_disparity_to_depth() {
        let rig = simple_rig(500.0, 0.12);
        let mut rel = DisparityMap::new_invalid(4, 3, DisparityFrame::Relative);
        for y in 0..3 {
            for x in 0..4 {
                rel.set(x, y, 2.0 + (x + y) as f64);
            }
        }
        rel.invalidate(1, 1);
        let model = LinearScaleModel {
            m: 1.0,
            b: 0.0,
            estimator: EstimatorKind::TheilSen,
            inlier_count: 0,
            converged: true,
        };
        let fused = fuse(&rel, &model, &rig, DEFAULT_MIN_DISPARITY_PX);
        let as_metric = DisparityMap::from_parts(
            4,
            3,
            DisparityFrame::Metric,
            rel.values().to_vec(),
            rel.valid_mask().to_vec(),
        );
        let direct = disparity_to_depth(&as_metric, &rig, DEFAULT_MIN_DISPARITY_PX);
        assert_eq!(fused, direct);
        assert_eq!(fused.get(1, 1), None);
    }

    #[test]
    fn fuse_reverses_ordering_for_positive_slope() {
        let rig = simple_rig(500.0, 0.12);
        let mut rel = DisparityMap::new_invalid(5, 1, DisparityFrame::Relative);
        for x in 0..5 {
            rel.set(x, 0, 1.0 + x as f64);
        }
        let model = LinearScaleModel {
            m: 2.0,
            b: 0.5,
            estimator: EstimatorKind::TheilSen,
            inlier_count: 0,
            converged: true,
        };
        let fused = fuse(&rel, &model, &rig, DEFAULT_MIN_DISPARITY_PX);
        for x in 1..5 {
            assert!(fused.get(x, 0).unwrap() < fused.get(x - 1, 0).unwrap());
        }
    }

    proptest! {
        #[test]
        fn depth_disparity_round_trip(depths in proptest::collection::vec(0.05f64..500.0, 1..40)) {
            let rig = simple_rig(700.0, 0.15);
            let w = depths.len();
            let mut map = DepthMap::new_invalid(w, 1);
            for (x, &z) in depths.iter().enumerate() {
                map.set(x, 0, z);
            }
            let disp = depth_to_disparity(&map, &rig).unwrap();
            let back = disparity_to_depth(&disp, &rig, DEFAULT_MIN_DISPARITY_PX);
            for (x, &z) in depths.iter().enumerate() {
                let r = back.get(x, 0).unwrap();
                prop_assert!((r - z).abs() / z < 1e-9);
            }
        }

        #[test]
        fn theil_sen_recovers_any_line_from_clean_points(
            m in -5.0f64..5.0,
            b in -10.0f64..10.0,
            n in 3usize..20,
        ) {
            let xy: Vec<(f64, f64)> = (0..n).map(|i| {
                let x = i as f64 * 0.5;
                (x, m * x + b)
            }).collect();
            let model = fit_theil_sen(&CorrespondenceSet::from_xy(&xy), TheilSenMode::Exact).unwrap();
            prop_assert!((model.m - m).abs() < 1e-9);
            prop_assert!((model.b - b).abs() < 1e-9);
        }
    }
}
