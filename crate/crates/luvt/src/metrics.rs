//! Evaluation metrics: thresholded-pixel-count anomaly scores, tie-aware
//! ROC/AUROC, and distance-thresholded precision/recall curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localize::AnomalyMap;
use crate::raster::Label;

/// One scored sequence (or frame) for ROC computation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: String,
    pub anomaly_score: f64,
    pub label: Label,
}

/// ROC curve points (FPR, TPR) from (0,0) to (1,1) plus the trapezoidal area.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
    pub auroc: f64,
}

/// One sequence's localization outcome for precision/recall.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalizationRecord {
    pub id: String,
    /// Predicted verdict.
    pub verdict: Label,
    /// Predicted centroid (row, col), present iff verdict is defective.
    pub centroid_px: Option<(f64, f64)>,
    /// Ground-truth defect center, present iff the true label is defective.
    pub truth_center_px: Option<(f64, f64)>,
    /// Ground-truth label.
    pub label: Label,
}

/// Precision/recall at one distance threshold, with explicit flags for the
/// undefined 0/0 ratios (reported as 0).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub degenerate_precision: bool,
    pub degenerate_recall: bool,
}

/// Anomaly score: pixels across all K maps whose value strictly exceeds the
/// threshold, normalized by K. Default threshold 0.25.
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.25;

pub fn anomaly_score(maps: &[AnomalyMap], score_threshold: f64) -> Result<f64> {
    if maps.is_empty() {
        return Err(Error::config("anomaly_score needs at least one map"));
    }
    let tau = score_threshold as f32;
    let count: usize = maps
        .iter()
        .map(|m| m.values.iter().filter(|&&v| v > tau).count())
        .sum();
    Ok(count as f64 / maps.len() as f64)
}

/// Tie-aware ROC sweep: one curve point after each group of equal scores, so
/// the trapezoidal area equals the probability a random positive outscores a
/// random negative with ties counted as 1/2.
pub fn roc_auc(samples: &[ScoredSample]) -> Result<RocCurve> {
    let n_pos = samples.iter().filter(|s| s.label == Label::Defective).count();
    let n_neg = samples.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::config(
            "roc_auc needs at least one defective and one defect-free sample",
        ));
    }
    if samples.iter().any(|s| !s.anomaly_score.is_finite()) {
        return Err(Error::config("non-finite anomaly score"));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| {
        samples[b]
            .anomaly_score
            .partial_cmp(&samples[a].anomaly_score)
            .expect("finite scores")
    });

    let mut points = vec![(0.0, 0.0)];
    let mut auroc = 0.0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        // Consume one tie group of equal scores.
        let score = samples[order[i]].anomaly_score;
        let (prev_tp, prev_fp) = (tp, fp);
        while i < order.len() && samples[order[i]].anomaly_score == score {
            match samples[order[i]].label {
                Label::Defective => tp += 1,
                Label::DefectFree => fp += 1,
            }
            i += 1;
        }
        let (x0, y0) = (prev_fp as f64 / n_neg as f64, prev_tp as f64 / n_pos as f64);
        let (x1, y1) = (fp as f64 / n_neg as f64, tp as f64 / n_pos as f64);
        auroc += (x1 - x0) * (y0 + y1) / 2.0;
        points.push((x1, y1));
    }
    Ok(RocCurve { points, auroc })
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Precision and recall with the TP rule "predicted centroid within r pixels
/// of the true center".
pub fn precision_recall_at(records: &[LocalizationRecord], r: f64) -> Result<PrecisionRecall> {
    if records.is_empty() {
        return Err(Error::config("precision_recall_at needs records"));
    }
    if !(r >= 0.0) {
        return Err(Error::config("distance threshold r must be nonnegative"));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for rec in records {
        let hit = match (rec.centroid_px, rec.truth_center_px) {
            (Some(pred), Some(truth)) => distance(pred, truth) <= r,
            _ => false,
        };
        match (rec.label, rec.verdict) {
            (Label::Defective, Label::Defective) if hit => tp += 1,
            (_, Label::Defective) => fp += 1,
            (Label::Defective, _) => {}
            _ => {}
        }
        if rec.label == Label::Defective && !hit {
            fn_ += 1;
        }
    }
    let degenerate_precision = tp + fp == 0;
    let degenerate_recall = tp + fn_ == 0;
    Ok(PrecisionRecall {
        precision: if degenerate_precision { 0.0 } else { tp as f64 / (tp + fp) as f64 },
        recall: if degenerate_recall { 0.0 } else { tp as f64 / (tp + fn_) as f64 },
        tp,
        fp,
        fn_,
        degenerate_precision,
        degenerate_recall,
    })
}

/// Inclusive default distance grid 0, 1, ..., 20.
pub fn default_r_grid() -> Vec<f64> {
    (0..=20).map(|r| r as f64).collect()
}

/// Precision/recall over a distance grid (Fig. 7 layout).
pub fn curves_over_r(
    records: &[LocalizationRecord],
    r_grid: &[f64],
) -> Result<Vec<(f64, PrecisionRecall)>> {
    if r_grid.is_empty() {
        return Err(Error::config("curves_over_r needs a distance grid"));
    }
    r_grid.iter().map(|&r| Ok((r, precision_recall_at(records, r)?))).collect()
}

/// Minimal deterministic SVG line plot: fixed canvas, axes, one polyline per
/// series with a small legend.
pub fn svg_line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    x_range: (f64, f64),
    y_range: (f64, f64),
    series: &[(&str, &[(f64, f64)])],
) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const ML: f64 = 56.0;
    const MR: f64 = 16.0;
    const MT: f64 = 32.0;
    const MB: f64 = 44.0;
    const COLORS: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let sx = |x: f64| ML + (x - x_range.0) / (x_range.1 - x_range.0).max(1e-12) * (W - ML - MR);
    let sy = |y: f64| H - MB - (y - y_range.0) / (y_range.1 - y_range.0).max(1e-12) * (H - MT - MB);
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
        W / 2.0
    ));
    out.push_str(&format!(
        "<rect x=\"{ML}\" y=\"{MT}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#333\"/>\n",
        W - ML - MR,
        H - MT - MB
    ));
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{x_label}</text>\n",
        (ML + W - MR) / 2.0,
        H - 10.0
    ));
    out.push_str(&format!(
        "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">{y_label}</text>\n",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0
    ));
    for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let xv = x_range.0 + frac * (x_range.1 - x_range.0);
        let yv = y_range.0 + frac * (y_range.1 - y_range.0);
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{xv:.2}</text>\n",
            sx(xv),
            H - MB + 16.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{yv:.2}</text>\n",
            ML - 6.0,
            sy(yv) + 4.0
        ));
    }
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> =
            pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            path.join(" ")
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{name}</text>\n",
            ML + 8.0,
            MT + 16.0 + 16.0 * k as f64
        ));
    }
    out.push_str("</svg>\n");
    out
}
