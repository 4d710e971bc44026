//! Defect localization: per-frame difference maps, two-stage binarization,
//! connected components, decision rule, and centroid extraction.
//!
//! First stage: each of K difference maps is binarized at 21 thresholds
//! (0.15, 0.16, ..., 0.35, strict ">") and the 21K binary images are
//! averaged into a mean map z_pre. Second stage: z_pre is binarized at one
//! third of its maximum. The largest connected component is declared a
//! defect when its z_pre mass exceeds the decision threshold (1000 at
//! 128x128, scaled with pixel count).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ImageSequence, Label};

/// Per-frame anomaly map |x - xhat|, values in [0, 1].
#[derive(Clone, Debug)]
pub struct AnomalyMap {
    pub h: usize,
    pub w: usize,
    pub values: Vec<f32>,
}

/// Average of all first-stage binary images, values in [0, 1].
#[derive(Clone, Debug)]
pub struct MeanMap {
    pub h: usize,
    pub w: usize,
    pub values: Vec<f32>,
}

/// Second-stage binarization result.
#[derive(Clone, Debug)]
pub struct BinaryMask {
    pub h: usize,
    pub w: usize,
    pub values: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Connectivity {
    Four,
    Eight,
}

/// One connected component of the binary mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    pub area: usize,
    /// Smallest (row, col) pixel, used as the deterministic tie-breaker.
    pub min_pixel: (usize, usize),
}

/// Component labeling: `labels[i]` is the index into `components` for pixel
/// `i`, or `usize::MAX` for background. Components are sorted by area
/// descending, ties broken by smallest (row, col).
#[derive(Clone, Debug)]
pub struct Labeling {
    pub h: usize,
    pub w: usize,
    pub labels: Vec<usize>,
    pub components: Vec<Component>,
}

pub const BACKGROUND: usize = usize::MAX;

/// Per-sequence localization verdict.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DefectPrediction {
    pub verdict: Label,
    /// (row, col) centroid of the chosen component, present iff defective.
    pub centroid_px: Option<(f64, f64)>,
    /// Sum of z_pre over the chosen component; 0 with no components.
    pub component_score: f64,
    pub component_area: usize,
}

/// The paper's 21 first-stage thresholds 0.15, 0.16, ..., 0.35.
pub fn default_thresholds() -> Vec<f64> {
    (0..21).map(|i| 0.15 + 0.01 * i as f64).collect()
}

/// Decision threshold 1000 at 128x128, scaled with pixel count.
pub fn default_decision_threshold(h: usize, w: usize) -> f64 {
    1000.0 * (h * w) as f64 / (128.0 * 128.0)
}

/// Elementwise |x - xhat|.
pub fn diff_map(x: &[f32], xhat: &[f32], h: usize, w: usize) -> Result<AnomalyMap> {
    if x.len() != h * w || xhat.len() != h * w {
        return Err(Error::ShapeMismatch {
            context: "diff_map".into(),
            expected: format!("{h}x{w} = {} pixels", h * w),
            actual: format!("{} and {}", x.len(), xhat.len()),
        });
    }
    let values = x.iter().zip(xhat).map(|(a, b)| (a - b).abs()).collect();
    Ok(AnomalyMap { h, w, values })
}

/// First-stage binarization: mean over all (map, threshold) binary images,
/// with strict ">" comparison.
pub fn multi_threshold_binarize(maps: &[AnomalyMap], thresholds: &[f64]) -> Result<MeanMap> {
    if maps.is_empty() || thresholds.is_empty() {
        return Err(Error::config("multi_threshold_binarize needs maps and thresholds"));
    }
    let (h, w) = (maps[0].h, maps[0].w);
    let mut counts = vec![0u32; h * w];
    for map in maps {
        if (map.h, map.w) != (h, w) {
            return Err(Error::ShapeMismatch {
                context: "multi_threshold_binarize".into(),
                expected: format!("{h}x{w}"),
                actual: format!("{}x{}", map.h, map.w),
            });
        }
        // Compare at the data's own precision so e.g. an f32 pixel holding
        // 0.30 does not strictly exceed the 0.30 threshold.
        for (c, &v) in counts.iter_mut().zip(&map.values) {
            *c += thresholds.iter().filter(|&&tau| v > tau as f32).count() as u32;
        }
    }
    let denom = (maps.len() * thresholds.len()) as f32;
    let values = counts.iter().map(|&c| c as f32 / denom).collect();
    Ok(MeanMap { h, w, values })
}

/// Second-stage binarization at one third of the maximum; an all-zero mean
/// map yields an all-zero mask.
pub fn second_binarize(zpre: &MeanMap) -> BinaryMask {
    let max = zpre.values.iter().cloned().fold(0.0f32, f32::max);
    let values = if max <= 0.0 {
        vec![false; zpre.values.len()]
    } else {
        let tau = max / 3.0;
        zpre.values.iter().map(|&v| v > tau).collect()
    };
    BinaryMask { h: zpre.h, w: zpre.w, values }
}

/// Union-find connected-component labeling.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Labeling {
    let (h, w) = (mask.h, mask.w);
    let mut parent: Vec<usize> = (0..h * w).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let union = |parent: &mut [usize], a: usize, b: usize| {
        let (ra, rb) = (find(parent, a), find(parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    };
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if !mask.values[i] {
                continue;
            }
            // Scan-order neighbours: left, up, and diagonals for 8-conn.
            if c > 0 && mask.values[i - 1] {
                union(&mut parent, i, i - 1);
            }
            if r > 0 && mask.values[i - w] {
                union(&mut parent, i, i - w);
            }
            if connectivity == Connectivity::Eight && r > 0 {
                if c > 0 && mask.values[i - w - 1] {
                    union(&mut parent, i, i - w - 1);
                }
                if c + 1 < w && mask.values[i - w + 1] {
                    union(&mut parent, i, i - w + 1);
                }
            }
        }
    }

    // Collect roots into provisional components.
    let mut root_index: std::collections::HashMap<usize, usize> = Default::default();
    let mut components: Vec<Component> = Vec::new();
    let mut provisional = vec![BACKGROUND; h * w];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if !mask.values[i] {
                continue;
            }
            let root = find(&mut parent, i);
            let idx = *root_index.entry(root).or_insert_with(|| {
                components.push(Component { area: 0, min_pixel: (r, c) });
                components.len() - 1
            });
            components[idx].area += 1;
            provisional[i] = idx;
        }
    }

    // Sort by area descending, ties by smallest (row, col).
    let mut order: Vec<usize> = (0..components.len()).collect();
    order.sort_by(|&a, &b| {
        components[b]
            .area
            .cmp(&components[a].area)
            .then(components[a].min_pixel.cmp(&components[b].min_pixel))
    });
    let mut remap = vec![0usize; components.len()];
    for (new, &old) in order.iter().enumerate() {
        remap[old] = new;
    }
    let labels = provisional
        .iter()
        .map(|&l| if l == BACKGROUND { BACKGROUND } else { remap[l] })
        .collect();
    let components = order.iter().map(|&i| components[i].clone()).collect();
    Labeling { h, w, labels, components }
}

/// Decision rule: the largest component is a defect when its z_pre mass
/// exceeds the threshold; the centroid is its area centroid.
pub fn decide_defect(
    labeling: &Labeling,
    zpre: &MeanMap,
    decision_threshold: f64,
) -> DefectPrediction {
    if labeling.components.is_empty() {
        return DefectPrediction {
            verdict: Label::DefectFree,
            centroid_px: None,
            component_score: 0.0,
            component_area: 0,
        };
    }
    let mut score = 0.0f64;
    let mut sum_r = 0.0f64;
    let mut sum_c = 0.0f64;
    let mut area = 0usize;
    for r in 0..labeling.h {
        for c in 0..labeling.w {
            let i = r * labeling.w + c;
            if labeling.labels[i] == 0 {
                score += zpre.values[i] as f64;
                sum_r += r as f64;
                sum_c += c as f64;
                area += 1;
            }
        }
    }
    if score > decision_threshold {
        DefectPrediction {
            verdict: Label::Defective,
            centroid_px: Some((sum_r / area as f64, sum_c / area as f64)),
            component_score: score,
            component_area: area,
        }
    } else {
        DefectPrediction {
            verdict: Label::DefectFree,
            centroid_px: None,
            component_score: score,
            component_area: area,
        }
    }
}

/// Full per-sequence localization with the paper's defaults.
pub fn localize_sequence(seq: &ImageSequence, recon_frames: &[Vec<f32>]) -> Result<DefectPrediction> {
    localize_sequence_with(
        seq,
        recon_frames,
        Connectivity::Eight,
        default_decision_threshold(seq.h, seq.w),
    )
}

/// Per-sequence localization with explicit connectivity and decision
/// threshold; `localize_sequence` supplies the paper's defaults.
pub fn localize_sequence_with(
    seq: &ImageSequence,
    recon_frames: &[Vec<f32>],
    connectivity: Connectivity,
    decision_threshold: f64,
) -> Result<DefectPrediction> {
    if recon_frames.len() != seq.frames.len() {
        return Err(Error::ShapeMismatch {
            context: "localize_sequence".into(),
            expected: format!("{} reconstructed frames", seq.frames.len()),
            actual: format!("{}", recon_frames.len()),
        });
    }
    let maps: Vec<AnomalyMap> = seq
        .frames
        .iter()
        .zip(recon_frames)
        .map(|(x, xhat)| diff_map(x, xhat, seq.h, seq.w))
        .collect::<Result<_>>()?;
    let zpre = multi_threshold_binarize(&maps, &default_thresholds())?;
    let mask = second_binarize(&zpre);
    let labeling = connected_components(&mask, connectivity);
    Ok(decide_defect(&labeling, &zpre, decision_threshold))
}
