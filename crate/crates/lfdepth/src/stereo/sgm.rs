//! Semi-global matching on census/Hamming costs.
//!
//! Matching cost: 5x5 census transform of the luma images, Hamming distance
//! between codes. Aggregation: the standard eight-path recurrence
//! `L_r(p,d) = C(p,d) + min(L_r(p-r,d), L_r(p-r,d±1)+P1, min_d' L_r(p-r,d')+P2)
//! - min_d' L_r(p-r,d')`, whose normalization keeps every path value at or
//! below `C_max + P2`. Winner-take-all with parabola subpixel refinement,
//! a uniqueness check, then left/right consistency.

use crate::align::{DisparityFrame, DisparityMap};

use super::StereoError;

/// Census window side; the code uses (side^2 - 1) bits.
const CENSUS_RADIUS: usize = 2;
const CENSUS_BITS: u32 = 24;

/// Penalties and validation thresholds for [`sgm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgmParams {
    /// Disparity search range `[min_disparity, max_disparity)`.
    pub min_disparity: usize,
    pub max_disparity: usize,
    /// Penalty for one-level disparity changes along a path.
    pub p1: u32,
    /// Penalty for larger jumps; must exceed `p1`.
    pub p2: u32,
    /// Uniqueness: the best cost must beat every non-adjacent disparity by
    /// this relative margin (plus one cost unit) or the pixel is dropped.
    pub uniqueness_ratio: f64,
    /// Left/right consistency threshold in pixels.
    pub lr_threshold: f64,
}

impl Default for SgmParams {
    fn default() -> Self {
        SgmParams {
            min_disparity: 0,
            max_disparity: 64,
            p1: 8,
            p2: 32,
            uniqueness_ratio: 0.05,
            lr_threshold: 1.0,
        }
    }
}

/// Per-pixel, per-disparity matching costs.
pub struct CostVolume {
    pub width: usize,
    pub height: usize,
    pub min_disparity: usize,
    pub max_disparity: usize,
    /// True when this volume matches the right image against the left
    /// (disparity then shifts toward +x).
    pub for_right_image: bool,
    /// Row-major `(y, x, d)` Hamming costs.
    pub costs: Vec<u16>,
}

impl CostVolume {
    pub fn levels(&self) -> usize {
        self.max_disparity - self.min_disparity
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, level: usize) -> u16 {
        self.costs[(y * self.width + x) * self.levels() + level]
    }

    /// Whether the matching partner of `(x, level)` lies inside the image.
    #[inline]
    pub fn in_range(&self, x: usize, level: usize) -> bool {
        let d = (self.min_disparity + level) as i64;
        if self.for_right_image {
            (x as i64 + d) < self.width as i64
        } else {
            x as i64 - d >= 0
        }
    }
}

/// 5x5 census transform with clamped borders: bit set where the neighbor is
/// darker than the center.
pub fn census_transform(luma: &[f32], width: usize, height: usize) -> Vec<u32> {
    assert_eq!(luma.len(), width * height);
    let r = CENSUS_RADIUS as i64;
    let mut codes = vec![0u32; width * height];
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            let center = luma[y as usize * width + x as usize];
            let mut code = 0u32;
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let sx = (x + dx).clamp(0, width as i64 - 1) as usize;
                    let sy = (y + dy).clamp(0, height as i64 - 1) as usize;
                    code <<= 1;
                    if luma[sy * width + sx] < center {
                        code |= 1;
                    }
                }
            }
            codes[y as usize * width + x as usize] = code;
        }
    }
    codes
}

/// Builds the census/Hamming cost volume for the left image against the
/// right. `right_to_left = false` matches right against left (disparity
/// shifts right in +x instead). Out-of-range comparisons cost the full code
/// width.
pub fn census_cost_volume(
    left_luma: &[f32],
    right_luma: &[f32],
    width: usize,
    height: usize,
    min_disparity: usize,
    max_disparity: usize,
    for_right_image: bool,
) -> CostVolume {
    let left_codes = census_transform(left_luma, width, height);
    let right_codes = census_transform(right_luma, width, height);
    let levels = max_disparity - min_disparity;
    let mut costs = vec![CENSUS_BITS as u16; width * height * levels];
    for y in 0..height {
        for x in 0..width {
            let base = (y * width + x) * levels;
            for level in 0..levels {
                let d = (min_disparity + level) as i64;
                let (a, bx) = if for_right_image {
                    (right_codes[y * width + x], x as i64 + d)
                } else {
                    (left_codes[y * width + x], x as i64 - d)
                };
                if bx < 0 || bx >= width as i64 {
                    continue;
                }
                let b = if for_right_image {
                    left_codes[y * width + bx as usize]
                } else {
                    right_codes[y * width + bx as usize]
                };
                costs[base + level] = (a ^ b).count_ones() as u16;
            }
        }
    }
    CostVolume { width, height, min_disparity, max_disparity, for_right_image, costs }
}

const PATHS: [(i64, i64); 8] =
    [(1, 0), (0, 1), (1, 1), (-1, 1), (-1, 0), (0, -1), (-1, -1), (1, -1)];

/// Aggregates one path direction into `sum`, in a fixed traversal order.
fn aggregate_path(cost: &CostVolume, dir: (i64, i64), p1: u32, p2: u32, sum: &mut [u32]) {
    let (w, h, levels) = (cost.width, cost.height, cost.levels());
    let mut l_buf = vec![0u32; w * h * levels];
    let mut min_buf = vec![0u32; w * h];
    let forward = dir.1 > 0 || (dir.1 == 0 && dir.0 > 0);

    let mut process = |x: i64, y: i64| {
        let idx = (y as usize * w + x as usize) * levels;
        let px = x - dir.0;
        let py = y - dir.1;
        let has_prev = px >= 0 && py >= 0 && px < w as i64 && py < h as i64;
        if !has_prev {
            let mut best = u32::MAX;
            for level in 0..levels {
                let v = cost.costs[idx + level] as u32;
                l_buf[idx + level] = v;
                best = best.min(v);
            }
            min_buf[y as usize * w + x as usize] = best;
        } else {
            let pidx = (py as usize * w + px as usize) * levels;
            let min_prev = min_buf[py as usize * w + px as usize];
            let cap = min_prev + p2;
            let mut best = u32::MAX;
            for level in 0..levels {
                let mut m = l_buf[pidx + level];
                if level > 0 {
                    m = m.min(l_buf[pidx + level - 1] + p1);
                }
                if level + 1 < levels {
                    m = m.min(l_buf[pidx + level + 1] + p1);
                }
                m = m.min(cap);
                let v = cost.costs[idx + level] as u32 + m - min_prev;
                l_buf[idx + level] = v;
                best = best.min(v);
            }
            min_buf[y as usize * w + x as usize] = best;
        }
        for level in 0..levels {
            sum[idx + level] += l_buf[idx + level];
        }
    };

    if forward {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                process(x, y);
            }
        }
    } else {
        for y in (0..h as i64).rev() {
            for x in (0..w as i64).rev() {
                process(x, y);
            }
        }
    }
}

/// Winner-take-all with parabola subpixel refinement, a zero-signal guard
/// (constant raw costs carry no information) and the uniqueness check over
/// non-adjacent disparities.
fn winner_take_all(
    cost: &CostVolume,
    sum: &[u32],
    width: usize,
    height: usize,
    min_disparity: usize,
    levels: usize,
    uniqueness_ratio: f64,
) -> DisparityMap {
    let mut out = DisparityMap::new_invalid(width, height, DisparityFrame::Metric);
    for y in 0..height {
        for x in 0..width {
            let base = (y * width + x) * levels;
            let raw = &cost.costs[base..base + levels];
            // Zero-signal guard: constant in-range costs carry no
            // information about disparity.
            let mut first_in_range = None;
            let mut constant = true;
            for (level, &c) in raw.iter().enumerate() {
                if !cost.in_range(x, level) {
                    continue;
                }
                match first_in_range {
                    None => first_in_range = Some(c),
                    Some(c0) => constant &= c == c0,
                }
            }
            if first_in_range.is_none() || constant {
                continue;
            }
            let s = &sum[base..base + levels];
            let mut best_level = 0usize;
            for (level, &v) in s.iter().enumerate() {
                if v < s[best_level] {
                    best_level = level;
                }
            }
            let smin = s[best_level];
            // Uniqueness over in-range candidates at least 2 levels away.
            let mut min_other = u32::MAX;
            for (level, &v) in s.iter().enumerate() {
                if level.abs_diff(best_level) > 1 && cost.in_range(x, level) && v < min_other {
                    min_other = v;
                }
            }
            if min_other != u32::MAX
                && (min_other as f64) < (smin as f64) * (1.0 + uniqueness_ratio) + 1.0
            {
                continue;
            }
            let mut disparity = (min_disparity + best_level) as f64;
            if best_level > 0 && best_level + 1 < levels {
                let a = s[best_level - 1] as f64;
                let b = smin as f64;
                let c = s[best_level + 1] as f64;
                let denom = a + c - 2.0 * b;
                if denom > 0.0 {
                    disparity += ((a - c) / (2.0 * denom)).clamp(-0.5, 0.5);
                }
            }
            out.set(x, y, disparity);
        }
    }
    out
}

fn aggregate_and_solve(cost: &CostVolume, params: &SgmParams) -> DisparityMap {
    let levels = cost.levels();
    let mut sum = vec![0u32; cost.width * cost.height * levels];
    for dir in PATHS {
        aggregate_path(cost, dir, params.p1, params.p2, &mut sum);
    }
    winner_take_all(
        cost,
        &sum,
        cost.width,
        cost.height,
        cost.min_disparity,
        levels,
        params.uniqueness_ratio,
    )
}

/// Runs SGM on a rectified luma pair. Returns the left disparity map (after
/// left/right consistency filtering) and the raw right disparity map.
pub fn sgm(
    left_luma: &[f32],
    right_luma: &[f32],
    width: usize,
    height: usize,
    params: &SgmParams,
) -> Result<(DisparityMap, DisparityMap), StereoError> {
    if params.min_disparity >= params.max_disparity {
        return Err(StereoError::InvalidRange {
            min: params.min_disparity,
            max: params.max_disparity,
        });
    }
    assert_eq!(left_luma.len(), width * height, "left luma size mismatch");
    assert_eq!(right_luma.len(), width * height, "right luma size mismatch");

    let left_cost = census_cost_volume(
        left_luma,
        right_luma,
        width,
        height,
        params.min_disparity,
        params.max_disparity,
        false,
    );
    let mut left = aggregate_and_solve(&left_cost, params);
    drop(left_cost);

    let right_cost = census_cost_volume(
        left_luma,
        right_luma,
        width,
        height,
        params.min_disparity,
        params.max_disparity,
        true,
    );
    let right = aggregate_and_solve(&right_cost, params);

    // Left/right consistency: survivors satisfy |d_L - d_R| <= threshold.
    for y in 0..height {
        for x in 0..width {
            let Some(dl) = left.get(x, y) else { continue };
            let xr = x as i64 - dl.round() as i64;
            let consistent = xr >= 0
                && xr < width as i64
                && right
                    .get(xr as usize, y)
                    .is_some_and(|dr| (dl - dr).abs() <= params.lr_threshold);
            if !consistent {
                left.invalidate(x, y);
            }
        }
    }
    Ok((left, right))
}

/// Post-matching regularization parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizeParams {
    /// Connected components smaller than this are removed.
    pub speckle_size: usize,
    /// Neighboring pixels join a component when their disparities differ by
    /// at most this much.
    pub speckle_diff: f64,
    /// Census-population texture filter: a pixel needs at least this many
    /// 5x5 neighbors differing from it by more than `texture_eps`.
    pub texture_min_population: usize,
    pub texture_eps: f32,
}

impl Default for RegularizeParams {
    fn default() -> Self {
        RegularizeParams {
            speckle_size: 50,
            speckle_diff: 1.0,
            texture_min_population: 3,
            texture_eps: 0.01,
        }
    }
}

/// Removes small speckle components and invalidates matches in low-texture
/// regions of the reference luma image.
pub fn regularize(
    disp: &DisparityMap,
    luma: &[f32],
    width: usize,
    height: usize,
    params: &RegularizeParams,
) -> DisparityMap {
    assert_eq!(disp.width, width);
    assert_eq!(disp.height, height);
    assert_eq!(luma.len(), width * height);
    let mut out = disp.clone();

    // Speckle removal: flood fill over 4-connected pixels whose disparities
    // differ by at most speckle_diff.
    let mut component = vec![usize::MAX; width * height];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..width * height {
        if component[start] != usize::MAX || disp.valid_mask()[start] == false {
            continue;
        }
        let id = sizes.len();
        let mut size = 0usize;
        stack.push(start);
        component[start] = id;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % width, i / width);
            let d = disp.values()[i];
            let mut visit = |nx: usize, ny: usize| {
                let j = ny * width + nx;
                if component[j] == usize::MAX
                    && disp.valid_mask()[j]
                    && (disp.values()[j] - d).abs() <= params.speckle_diff
                {
                    component[j] = id;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(x - 1, y);
            }
            if x + 1 < width {
                visit(x + 1, y);
            }
            if y > 0 {
                visit(x, y - 1);
            }
            if y + 1 < height {
                visit(x, y + 1);
            }
        }
        sizes.push(size);
    }
    for i in 0..width * height {
        if component[i] != usize::MAX && sizes[component[i]] < params.speckle_size {
            out.invalidate(i % width, i / width);
        }
    }

    // Texture filter on the reference image.
    let r = CENSUS_RADIUS as i64;
    for y in 0..height {
        for x in 0..width {
            if out.get(x, y).is_none() {
                continue;
            }
            let center = luma[y * width + x];
            let mut population = 0usize;
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let sx = (x as i64 + dx).clamp(0, width as i64 - 1) as usize;
                    let sy = (y as i64 + dy).clamp(0, height as i64 - 1) as usize;
                    if (luma[sy * width + sx] - center).abs() > params.texture_eps {
                        population += 1;
                    }
                }
            }
            if population < params.texture_min_population {
                out.invalidate(x, y);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Deterministic pseudo-random texture in [0, 1].
    fn noise_luma(width: usize, height: usize, seed: u64) -> Vec<f32> {
        let mut v = Vec::with_capacity(width * height);
        let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
        for _ in 0..width * height {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            v.push(((state >> 40) as f32) / ((1u32 << 24) as f32));
        }
        // Light smoothing so census codes carry structure, not pure noise.
        let mut smooth = v.clone();
        for y in 1..height - 1 {
            for x in 1..width - 1 {
                let mut acc = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        acc += v[(y + dy - 1) * width + (x + dx - 1)];
                    }
                }
                smooth[y * width + x] = acc / 9.0;
            }
        }
        smooth
    }

    /// Right view of a constant-disparity-s scene: `right(x) = left(x + s)`,
    /// replicating the right border.
    fn right_view(left: &[f32], width: usize, height: usize, s: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; width * height];
        for y in 0..height {
            for x in 0..width {
                let sx = (x + s).min(width - 1);
                out[y * width + x] = left[y * width + sx];
            }
        }
        out
    }

    #[test]
    fn invalid_range_is_rejected() {
        let err = sgm(&[0.0; 4], &[0.0; 4], 2, 2, &SgmParams {
            min_disparity: 8,
            max_disparity: 8,
            ..SgmParams::default()
        })
        .unwrap_err();
        assert_eq!(err, StereoError::InvalidRange { min: 8, max: 8 });
    }

    #[test]
    fn integer_shift_is_recovered_exactly() {
        let (w, h) = (96usize, 72usize);
        let shift = 7usize;
        // Scene plane at constant disparity: left(x) = right(x - shift).
        let left = noise_luma(w, h, 3);
        let right = right_view(&left, w, h, shift);
        let params = SgmParams { max_disparity: 24, ..SgmParams::default() };
        let (disp, _) = sgm(&left, &right, w, h, &params).unwrap();

        let mut total = 0usize;
        let mut exact = 0usize;
        for y in 8..h - 8 {
            for x in (shift + 8)..w - 8 {
                if let Some(d) = disp.get(x, y) {
                    total += 1;
                    if d.round() as usize == shift {
                        exact += 1;
                    }
                }
            }
        }
        assert!(total > (w - 16 - shift) * (h - 16) * 9 / 10, "too few valid: {total}");
        assert!(exact as f64 >= total as f64 * 0.99, "exact {exact} of {total}");
    }

    #[test]
    fn identical_images_give_zero_disparity() {
        let (w, h) = (64usize, 48usize);
        let img = noise_luma(w, h, 9);
        let (disp, _) = sgm(&img, &img, w, h, &SgmParams::default()).unwrap();
        for y in 4..h - 4 {
            for x in 4..w - 4 {
                if let Some(d) = disp.get(x, y) {
                    assert!(d.abs() < 0.5, "disparity {d} at ({x},{y})");
                }
            }
        }
        assert!(disp.valid_count() > w * h / 2);
    }

    #[test]
    fn textureless_images_are_invalidated() {
        let (w, h) = (48usize, 36usize);
        let flat = vec![0.5f32; w * h];
        let (disp, _) = sgm(&flat, &flat, w, h, &SgmParams::default()).unwrap();
        // The zero-signal guard plus consistency leave at most a sliver of
        // border pixels; the interior must be fully invalidated.
        let valid = disp.valid_count();
        assert!(valid <= w * h / 10, "flat pair left {valid} valid pixels");
        for y in 0..h {
            for x in 2..w - 2 {
                assert_eq!(disp.get(x, y), None, "flat pixel ({x},{y}) survived");
            }
        }
    }

    #[test]
    fn zero_penalties_degenerate_to_raw_cost_wta() {
        let (w, h) = (40usize, 30usize);
        let left = noise_luma(w, h, 5);
        let right = right_view(&left, w, h, 3);
        let params = SgmParams { max_disparity: 12, p1: 0, p2: 0, ..SgmParams::default() };
        let (disp, _) = sgm(&left, &right, w, h, &params).unwrap();

        // Oracle: per-pixel WTA over the raw census cost volume.
        let cost = census_cost_volume(&left, &right, w, h, 0, 12, false);
        for y in 0..h {
            for x in 0..w {
                let Some(d) = disp.get(x, y) else { continue };
                let mut best = 0usize;
                for level in 0..cost.levels() {
                    if cost.at(x, y, level) < cost.at(x, y, best) {
                        best = level;
                    }
                }
                assert_eq!(d.round() as usize, best, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn aggregated_costs_respect_normalization_bound() {
        // Per-path values never exceed C_max + P2 under the subtraction of
        // the previous minimum.
        let (w, h) = (32usize, 24usize);
        let left = noise_luma(w, h, 1);
        let right = right_view(&left, w, h, 2);
        let cost = census_cost_volume(&left, &right, w, h, 0, 8, false);
        let params = SgmParams { max_disparity: 8, ..SgmParams::default() };
        let mut sum = vec![0u32; w * h * cost.levels()];
        for dir in PATHS {
            let mut single = vec![0u32; w * h * cost.levels()];
            aggregate_path(&cost, dir, params.p1, params.p2, &mut single);
            for &v in &single {
                assert!(v <= CENSUS_BITS + params.p2, "path value {v} exceeds bound");
            }
            for (s, v) in sum.iter_mut().zip(&single) {
                *s += v;
            }
        }
    }

    #[test]
    fn speckle_filter_removes_outlier_island_keeps_plane() {
        let (w, h) = (60usize, 40usize);
        let mut disp = DisparityMap::new_invalid(w, h, DisparityFrame::Metric);
        for y in 0..h {
            for x in 0..w {
                disp.set(x, y, 10.0);
            }
        }
        // Single-pixel outlier island plus a small 2x2 corrupted blob.
        disp.set(20, 20, 40.0);
        disp.set(40, 10, 35.0);
        disp.set(41, 10, 35.5);
        disp.set(40, 11, 34.8);
        disp.set(41, 11, 35.2);
        let luma = noise_luma(w, h, 4);
        let out = regularize(&disp, &luma, w, h, &RegularizeParams::default());
        assert_eq!(out.get(20, 20), None);
        assert_eq!(out.get(40, 10), None);
        assert_eq!(out.get(41, 11), None);
        // The plane survives away from the holes.
        assert!(out.get(5, 5).is_some());
        assert!(out.valid_count() >= w * h - 5 - 40);
    }

    #[test]
    fn regularize_leaves_clean_textured_disparity_unchanged() {
        let (w, h) = (50usize, 30usize);
        let mut disp = DisparityMap::new_invalid(w, h, DisparityFrame::Metric);
        for y in 0..h {
            for x in 0..w {
                disp.set(x, y, 7.25);
            }
        }
        let luma = noise_luma(w, h, 8);
        let out = regularize(&disp, &luma, w, h, &RegularizeParams::default());
        assert_eq!(out, disp);
    }

    #[test]
    fn salt_and_pepper_islands_removed_plane_retained() {
        let (w, h) = (80usize, 60usize);
        let mut disp = DisparityMap::new_invalid(w, h, DisparityFrame::Metric);
        for y in 0..h {
            for x in 0..w {
                disp.set(x, y, 12.0);
            }
        }
        // Scatter isolated corrupted pixels (disparity far from the plane).
        let mut corrupted = Vec::new();
        for i in 0..40 {
            let x = (i * 13 + 5) % w;
            let y = (i * 7 + 3) % h;
            disp.set(x, y, 30.0 + (i % 5) as f64);
            corrupted.push((x, y));
        }
        let luma = noise_luma(w, h, 2);
        let out = regularize(&disp, &luma, w, h, &RegularizeParams::default());
        for &(x, y) in &corrupted {
            assert_eq!(out.get(x, y), None, "corrupted pixel ({x},{y}) survived");
        }
        // Plane pixels adjacent to corruption stay.
        assert!(out.valid_count() >= w * h - corrupted.len());
    }

    #[test]
    fn low_texture_regions_are_invalidated_by_population_filter() {
        let (w, h) = (40usize, 40usize);
        let mut disp = DisparityMap::new_invalid(w, h, DisparityFrame::Metric);
        for y in 0..h {
            for x in 0..w {
                disp.set(x, y, 3.0);
            }
        }
        // Left half textured, right half flat.
        let mut luma = noise_luma(w, h, 6);
        for y in 0..h {
            for x in w / 2..w {
                luma[y * w + x] = 0.5;
            }
        }
        let out = regularize(&disp, &luma, w, h, &RegularizeParams::default());
        assert!(out.get(8, 20).is_some());
        assert_eq!(out.get(w - 8, 20), None);
    }
}

/// Exposes the aggregated cost sum for diagnostics.
#[doc(hidden)]
pub fn debug_aggregate(cost: &CostVolume, params: &SgmParams) -> Vec<u32> {
    let levels = cost.levels();
    let mut sum = vec![0u32; cost.width * cost.height * levels];
    for dir in PATHS {
        aggregate_path(cost, dir, params.p1, params.p2, &mut sum);
    }
    sum
}
