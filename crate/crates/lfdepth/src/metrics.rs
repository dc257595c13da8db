//! Depth evaluation metrics: MSE, RMSE, MARE, MSRE, delta accuracies and
//! the bad-pixel ratio.
//!
//! Units follow the reporting convention: MSE in cm^2, RMSE in cm, MARE in
//! percent, MSRE unscaled, deltas in percent, BPR as a fraction. Both
//! pooled and per-image-mean aggregation are provided; a report carries its
//! mode because the two do not agree in general (a pooled report satisfies
//! `rmse^2 = mse` exactly, a per-image mean does not).

use std::fmt;

use crate::align::DepthMap;
use crate::net::SparseDepthMap;

/// Default relative-error threshold of the bad-pixel ratio.
pub const DEFAULT_BPR_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub enum MetricsError {
    /// No pixel (or sample) is valid in both maps.
    NoOverlap,
    SizeMismatch,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::NoOverlap => write!(f, "prediction and ground truth share no valid pixel"),
            MetricsError::SizeMismatch => write!(f, "maps have different dimensions"),
        }
    }
}

impl std::error::Error for MetricsError {}

/// How a report was aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// All valid pixels pooled into one population.
    Pooled,
    /// Mean of per-image metric values.
    PerImageMean,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Pooled => "pooled",
            Aggregation::PerImageMean => "per-image-mean",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pooled" => Some(Aggregation::Pooled),
            "per-image-mean" => Some(Aggregation::PerImageMean),
            _ => None,
        }
    }
}

/// One row of the evaluation table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub mse_cm2: f64,
    pub rmse_cm: f64,
    /// Mean absolute relative error, in percent.
    pub mare_pct: f64,
    /// Mean squared relative error, unscaled.
    pub msre: f64,
    /// Percentage of pixels with max(pred/gt, gt/pred) < 1.25^k.
    pub delta1_pct: f64,
    pub delta2_pct: f64,
    pub delta3_pct: f64,
    /// Fraction of pixels with relative error above the threshold.
    pub bpr: f64,
    pub valid_count: usize,
    pub mode: Aggregation,
}

/// Pooled metrics over aligned (prediction, truth) pairs in meters.
///
/// Pairs with non-positive truth are excluded (relative metrics divide by
/// the truth); non-positive predictions never count as delta-accurate.
pub fn evaluate_pairs(
    pairs: &[(f64, f64)],
    bpr_threshold: f64,
) -> Result<MetricsReport, MetricsError> {
    let usable: Vec<(f64, f64)> = pairs.iter().copied().filter(|&(_, gt)| gt > 0.0).collect();
    if usable.is_empty() {
        return Err(MetricsError::NoOverlap);
    }
    let n = usable.len() as f64;
    let mut sse_cm2 = 0.0;
    let mut sare = 0.0;
    let mut ssre = 0.0;
    let mut hits = [0usize; 3];
    let mut bad = 0usize;
    for &(pred, gt) in &usable {
        let err_cm = (pred - gt) * 100.0;
        sse_cm2 += err_cm * err_cm;
        let rel = (pred - gt).abs() / gt;
        sare += rel;
        ssre += rel * rel;
        let ratio = if pred > 0.0 { (pred / gt).max(gt / pred) } else { f64::INFINITY };
        for (k, hit) in hits.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *hit += 1;
            }
        }
        if rel > bpr_threshold {
            bad += 1;
        }
    }
    let mse = sse_cm2 / n;
    Ok(MetricsReport {
        mse_cm2: mse,
        rmse_cm: mse.sqrt(),
        mare_pct: sare / n * 100.0,
        msre: ssre / n,
        delta1_pct: hits[0] as f64 / n * 100.0,
        delta2_pct: hits[1] as f64 / n * 100.0,
        delta3_pct: hits[2] as f64 / n * 100.0,
        bpr: bad as f64 / n,
        valid_count: usable.len(),
        mode: Aggregation::Pooled,
    })
}

/// Mean of per-image pooled metrics. Images without overlap are skipped;
/// errors only when none survive.
pub fn evaluate_per_image_mean(
    images: &[Vec<(f64, f64)>],
    bpr_threshold: f64,
) -> Result<MetricsReport, MetricsError> {
    let reports: Vec<MetricsReport> = images
        .iter()
        .filter_map(|pairs| evaluate_pairs(pairs, bpr_threshold).ok())
        .collect();
    if reports.is_empty() {
        return Err(MetricsError::NoOverlap);
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        mse_cm2: mean(|r| r.mse_cm2),
        rmse_cm: mean(|r| r.rmse_cm),
        mare_pct: mean(|r| r.mare_pct),
        msre: mean(|r| r.msre),
        delta1_pct: mean(|r| r.delta1_pct),
        delta2_pct: mean(|r| r.delta2_pct),
        delta3_pct: mean(|r| r.delta3_pct),
        bpr: mean(|r| r.bpr),
        valid_count: reports.iter().map(|r| r.valid_count).sum(),
        mode: Aggregation::PerImageMean,
    })
}

/// Jointly-valid pixel pairs of two dense maps.
pub fn paired_dense(pred: &DepthMap, gt: &DepthMap) -> Result<Vec<(f64, f64)>, MetricsError> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(MetricsError::SizeMismatch);
    }
    let mut pairs = Vec::new();
    for y in 0..pred.height {
        for x in 0..pred.width {
            if let (Some(p), Some(g)) = (pred.get(x, y), gt.get(x, y)) {
                pairs.push((p, g));
            }
        }
    }
    Ok(pairs)
}

/// Pairs of two sparse maps joined on the lens coordinate.
pub fn paired_sparse(pred: &SparseDepthMap, gt: &SparseDepthMap) -> Vec<(f64, f64)> {
    pred.samples()
        .iter()
        .filter_map(|s| gt.get(s.coord).map(|g| (s.depth_m, g.depth_m)))
        .collect()
}

/// Evaluates two dense depth maps (pooled).
pub fn evaluate_dense(
    pred: &DepthMap,
    gt: &DepthMap,
    bpr_threshold: f64,
) -> Result<MetricsReport, MetricsError> {
    evaluate_pairs(&paired_dense(pred, gt)?, bpr_threshold)
}

/// Evaluates two sparse depth maps joined by lens coordinate (pooled).
pub fn evaluate_sparse(
    pred: &SparseDepthMap,
    gt: &SparseDepthMap,
    bpr_threshold: f64,
) -> Result<MetricsReport, MetricsError> {
    evaluate_pairs(&paired_sparse(pred, gt), bpr_threshold)
}

/// Table columns, with their preferred direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricColumn {
    Mse,
    Rmse,
    Mare,
    Msre,
    Delta1,
    Delta2,
    Delta3,
    Bpr,
}

pub const ALL_COLUMNS: [MetricColumn; 8] = [
    MetricColumn::Mse,
    MetricColumn::Rmse,
    MetricColumn::Mare,
    MetricColumn::Msre,
    MetricColumn::Delta1,
    MetricColumn::Delta2,
    MetricColumn::Delta3,
    MetricColumn::Bpr,
];

impl MetricColumn {
    pub fn value(self, r: &MetricsReport) -> f64 {
        match self {
            MetricColumn::Mse => r.mse_cm2,
            MetricColumn::Rmse => r.rmse_cm,
            MetricColumn::Mare => r.mare_pct,
            MetricColumn::Msre => r.msre,
            MetricColumn::Delta1 => r.delta1_pct,
            MetricColumn::Delta2 => r.delta2_pct,
            MetricColumn::Delta3 => r.delta3_pct,
            MetricColumn::Bpr => r.bpr,
        }
    }

    /// True when larger values are better (the delta accuracies).
    pub fn higher_is_better(self) -> bool {
        matches!(self, MetricColumn::Delta1 | MetricColumn::Delta2 | MetricColumn::Delta3)
    }

    pub fn header(self) -> &'static str {
        match self {
            MetricColumn::Mse => "MSE[cm2]",
            MetricColumn::Rmse => "RMSE[cm]",
            MetricColumn::Mare => "MARE[%]",
            MetricColumn::Msre => "MSRE",
            MetricColumn::Delta1 => "d1[%]",
            MetricColumn::Delta2 => "d2[%]",
            MetricColumn::Delta3 => "d3[%]",
            MetricColumn::Bpr => "BPR",
        }
    }
}

/// A comparison of named reports, sorted by one column with best-per-column
/// marks. Ties keep the original order and flag the first occurrence.
#[derive(Debug, Clone)]
pub struct RankingTable {
    pub entries: Vec<(String, MetricsReport)>,
    /// Index of the best row per column, aligned with [`ALL_COLUMNS`].
    pub best: [usize; 8],
}

pub fn compare_reports(
    reports: &[(String, MetricsReport)],
    sort_by: MetricColumn,
) -> RankingTable {
    assert!(!reports.is_empty(), "comparison requires at least one report");
    let mut entries = reports.to_vec();
    // Stable sort keeps the original order for equal values.
    entries.sort_by(|a, b| {
        let (va, vb) = (sort_by.value(&a.1), sort_by.value(&b.1));
        if sort_by.higher_is_better() {
            vb.total_cmp(&va)
        } else {
            va.total_cmp(&vb)
        }
    });
    let mut best = [0usize; 8];
    for (ci, col) in ALL_COLUMNS.iter().enumerate() {
        let mut best_idx = 0usize;
        for (i, (_, r)) in entries.iter().enumerate() {
            let (v, b) = (col.value(r), col.value(&entries[best_idx].1));
            let better = if col.higher_is_better() { v > b } else { v < b };
            if better {
                best_idx = i;
            }
        }
        best[ci] = best_idx;
    }
    RankingTable { entries, best }
}

impl RankingTable {
    /// Aligned plain-text table; the best value per column is starred.
    pub fn render_text(&self) -> String {
        let name_width = self
            .entries
            .iter()
            .map(|(n, _)| n.len())
            .max()
            .unwrap_or(6)
            .max(6);
        let mut out = format!("{:name_width$}", "method");
        for col in ALL_COLUMNS {
            out.push_str(&format!(" {:>10}", col.header()));
        }
        out.push('\n');
        for (i, (name, r)) in self.entries.iter().enumerate() {
            out.push_str(&format!("{name:name_width$}"));
            for (ci, col) in ALL_COLUMNS.iter().enumerate() {
                let mark = if self.best[ci] == i { "*" } else { "" };
                out.push_str(&format!(" {:>10}", format!("{:.4}{mark}", col.value(r))));
            }
            out.push('\n');
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("method");
        for col in ALL_COLUMNS {
            out.push(',');
            out.push_str(col.header());
        }
        out.push_str(",valid,mode\n");
        for (name, r) in &self.entries {
            out.push_str(name);
            for col in ALL_COLUMNS {
                out.push_str(&format!(",{:.6}", col.value(r)));
            }
            out.push_str(&format!(",{},{}\n", r.valid_count, r.mode.as_str()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent brute-force oracle: recomputes every metric straight
    /// from its definition, one pass per metric.
    fn oracle(pairs: &[(f64, f64)], tau: f64) -> MetricsReport {
        let v: Vec<(f64, f64)> = pairs.iter().copied().filter(|p| p.1 > 0.0).collect();
        let n = v.len() as f64;
        let mse =
            v.iter().map(|(p, g)| ((p - g) * 100.0).powi(2)).sum::<f64>() / n;
        let mare = v.iter().map(|(p, g)| (p - g).abs() / g).sum::<f64>() / n * 100.0;
        let msre = v.iter().map(|(p, g)| ((p - g) / g).powi(2)).sum::<f64>() / n;
        let delta = |k: i32| {
            v.iter()
                .filter(|(p, g)| *p > 0.0 && (p / g).max(g / p) < 1.25f64.powi(k))
                .count() as f64
                / n
                * 100.0
        };
        let bpr = v.iter().filter(|(p, g)| (p - g).abs() / g > tau).count() as f64 / n;
        MetricsReport {
            mse_cm2: mse,
            rmse_cm: mse.sqrt(),
            mare_pct: mare,
            msre,
            delta1_pct: delta(1),
            delta2_pct: delta(2),
            delta3_pct: delta(3),
            bpr,
            valid_count: v.len(),
            mode: Aggregation::Pooled,
        }
    }

    fn assert_reports_eq(a: &MetricsReport, b: &MetricsReport) {
        for col in ALL_COLUMNS {
            let (va, vb) = (col.value(a), col.value(b));
            assert!(
                (va - vb).abs() <= 1e-12 * va.abs().max(1.0),
                "{}: {va} vs {vb}",
                col.header()
            );
        }
        assert_eq!(a.valid_count, b.valid_count);
    }

    #[test]
    fn perfect_prediction_is_all_zero_and_full_delta() {
        let pairs: Vec<(f64, f64)> = (1..20).map(|i| (i as f64 * 0.1, i as f64 * 0.1)).collect();
        let r = evaluate_pairs(&pairs, DEFAULT_BPR_THRESHOLD).unwrap();
        assert_eq!(r.mse_cm2, 0.0);
        assert_eq!(r.rmse_cm, 0.0);
        assert_eq!(r.mare_pct, 0.0);
        assert_eq!(r.msre, 0.0);
        assert_eq!(r.bpr, 0.0);
        assert_eq!(r.delta1_pct, 100.0);
        assert_eq!(r.delta2_pct, 100.0);
        assert_eq!(r.delta3_pct, 100.0);
    }

    #[test]
    fn hand_derived_fixture_row_verified_by_oracle() {
        // pred = [2, 4] m, gt = [1, 4] m. MSE = 0.5 m^2 = 5000 cm^2,
        // MARE = 50%. Ratios are {2, 1}: 2 exceeds 1.25, 1.5625 and
        // 1.953125, so every delta level is 50%.
        let pairs = [(2.0, 1.0), (4.0, 4.0)];
        let r = evaluate_pairs(&pairs, DEFAULT_BPR_THRESHOLD).unwrap();
        assert_reports_eq(&r, &oracle(&pairs, DEFAULT_BPR_THRESHOLD));
        assert!((r.mse_cm2 - 5000.0).abs() < 1e-9);
        assert!((r.rmse_cm - 5000.0f64.sqrt()).abs() < 1e-9);
        assert!((r.mare_pct - 50.0).abs() < 1e-12);
        assert!((r.msre - 0.5).abs() < 1e-12);
        assert_eq!(r.delta1_pct, 50.0);
        assert_eq!(r.delta2_pct, 50.0);
        assert_eq!(r.delta3_pct, 50.0);
        assert_eq!(r.bpr, 0.5);
    }

    #[test]
    fn uniform_20_percent_overestimate() {
        let pairs: Vec<(f64, f64)> = (1..=10).map(|i| (1.2 * i as f64, i as f64)).collect();
        let r = evaluate_pairs(&pairs, DEFAULT_BPR_THRESHOLD).unwrap();
        assert!((r.mare_pct - 20.0).abs() < 1e-9);
        assert_eq!(r.delta1_pct, 100.0); // 1.2 < 1.25
        assert_eq!(r.bpr, 0.0); // 0.2 <= 0.25
        assert_reports_eq(&r, &oracle(&pairs, DEFAULT_BPR_THRESHOLD));
    }

    #[test]
    fn random_fixture_matches_oracle_and_invariants_hold() {
        let pairs: Vec<(f64, f64)> = (0..500)
            .map(|i| {
                let gt = 0.5 + ((i * 37) % 97) as f64 * 0.05;
                let pred = gt * (0.6 + ((i * 53) % 41) as f64 * 0.04);
                (pred, gt)
            })
            .collect();
        let r = evaluate_pairs(&pairs, DEFAULT_BPR_THRESHOLD).unwrap();
        assert_reports_eq(&r, &oracle(&pairs, DEFAULT_BPR_THRESHOLD));

        // Delta monotonicity and pooled RMSE consistency.
        assert!(r.delta1_pct <= r.delta2_pct && r.delta2_pct <= r.delta3_pct);
        assert!((r.rmse_cm * r.rmse_cm - r.mse_cm2).abs() <= 1e-12 * r.mse_cm2);

        // Delta is swap-symmetric; MARE and BPR are not (on this fixture).
        let swapped: Vec<(f64, f64)> = pairs.iter().map(|&(p, g)| (g, p)).collect();
        let rs = evaluate_pairs(&swapped, DEFAULT_BPR_THRESHOLD).unwrap();
        assert!((r.delta1_pct - rs.delta1_pct).abs() < 1e-12);
        assert!((r.delta2_pct - rs.delta2_pct).abs() < 1e-12);
        assert!((r.delta3_pct - rs.delta3_pct).abs() < 1e-12);
        assert!((r.mare_pct - rs.mare_pct).abs() > 1e-6);
        assert!((r.bpr - rs.bpr).abs() > 1e-6);

        // Permutation invariance.
        let mut permuted = pairs.clone();
        permuted.reverse();
        permuted.swap(3, 141);
        let rp = evaluate_pairs(&permuted, DEFAULT_BPR_THRESHOLD).unwrap();
        assert_reports_eq(&r, &rp);
    }

    #[test]
    fn no_overlap_is_an_error() {
        assert_eq!(
            evaluate_pairs(&[], DEFAULT_BPR_THRESHOLD).unwrap_err(),
            MetricsError::NoOverlap
        );
        // Truth must be positive to evaluate.
        assert_eq!(
            evaluate_pairs(&[(1.0, 0.0)], DEFAULT_BPR_THRESHOLD).unwrap_err(),
            MetricsError::NoOverlap
        );
    }

    #[test]
    fn dense_evaluation_respects_joint_validity() {
        let mut pred = DepthMap::new_invalid(3, 1);
        let mut gt = DepthMap::new_invalid(3, 1);
        pred.set(0, 0, 1.0);
        pred.set(1, 0, 2.0);
        gt.set(1, 0, 2.0);
        gt.set(2, 0, 3.0);
        let r = evaluate_dense(&pred, &gt, DEFAULT_BPR_THRESHOLD).unwrap();
        assert_eq!(r.valid_count, 1);
        assert_eq!(r.mse_cm2, 0.0);
    }

    #[test]
    fn per_image_mean_differs_from_pooled_when_images_vary() {
        let img1 = vec![(1.0, 1.0); 10];
        let img2 = vec![(2.0, 1.0); 30];
        let pooled = evaluate_pairs(
            &img1.iter().chain(&img2).copied().collect::<Vec<_>>(),
            DEFAULT_BPR_THRESHOLD,
        )
        .unwrap();
        let per_image =
            evaluate_per_image_mean(&[img1, img2], DEFAULT_BPR_THRESHOLD).unwrap();
        // Pooled MSE weights by pixel count (30/40), per-image by images (1/2).
        assert!((pooled.mse_cm2 - 7500.0).abs() < 1e-9);
        assert!((per_image.mse_cm2 - 5000.0).abs() < 1e-9);
        assert_eq!(per_image.mode, Aggregation::PerImageMean);
    }

    #[test]
    fn compare_single_and_tied_reports() {
        let pairs = [(1.1, 1.0), (2.0, 2.0)];
        let r = evaluate_pairs(&pairs, DEFAULT_BPR_THRESHOLD).unwrap();
        let single = compare_reports(&[("only".into(), r)], MetricColumn::Rmse);
        assert_eq!(single.entries.len(), 1);
        assert_eq!(single.best, [0; 8]);

        let tied = compare_reports(
            &[("first".into(), r), ("second".into(), r)],
            MetricColumn::Mse,
        );
        assert_eq!(tied.entries[0].0, "first");
        assert_eq!(tied.entries[1].0, "second");
        assert_eq!(tied.best, [0; 8]);
    }

    #[test]
    fn best_per_column_matches_brute_force() {
        let mk = |scale: f64, seed: usize| {
            let pairs: Vec<(f64, f64)> = (1..60)
                .map(|i| {
                    let gt = 1.0 + ((i * 13 + seed) % 23) as f64 * 0.1;
                    (gt * (1.0 + scale * (((i * 7 + seed) % 11) as f64 - 5.0) / 10.0), gt)
                })
                .collect();
            evaluate_pairs(&pairs, DEFAULT_BPR_THRESHOLD).unwrap()
        };
        let reports = vec![
            ("a".to_string(), mk(0.08, 1)),
            ("b".to_string(), mk(0.30, 2)),
            ("c".to_string(), mk(0.17, 3)),
        ];
        let table = compare_reports(&reports, MetricColumn::Mse);
        for (ci, col) in ALL_COLUMNS.iter().enumerate() {
            let mut best = 0usize;
            for i in 1..table.entries.len() {
                let (v, b) = (col.value(&table.entries[i].1), col.value(&table.entries[best].1));
                if (col.higher_is_better() && v > b) || (!col.higher_is_better() && v < b) {
                    best = i;
                }
            }
            assert_eq!(table.best[ci], best, "column {}", col.header());
        }
        // Sorted ascending by MSE.
        assert!(table.entries[0].1.mse_cm2 <= table.entries[1].1.mse_cm2);
        assert!(table.entries[1].1.mse_cm2 <= table.entries[2].1.mse_cm2);
        // Render paths stay consistent.
        let text = table.render_text();
        assert!(text.contains("MSE[cm2]"));
        let csv = table.render_csv();
        assert_eq!(csv.lines().count(), 4);
    }
}
