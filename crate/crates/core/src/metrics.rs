//! Evaluation metrics: voxel IoU and significance binning.

/// IoU threshold used throughout evaluation.
pub const IOU_TAU: f64 = 0.4;

/// Intersection-over-union between a probability grid thresholded at `tau`
/// and a binary ground truth. Both grids empty means IoU = 1.0.
pub fn iou(pred_probs: &[f64], truth: &[bool], tau: f64) -> f64 {
    debug_assert_eq!(pred_probs.len(), truth.len());
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &t) in pred_probs.iter().zip(truth) {
        let pv = p > tau;
        if pv && t {
            inter += 1;
        }
        if pv || t {
            union += 1;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouBin {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

/// Split per-example IoUs into bins of roughly equal spread: sort
/// ascending, grow the current bin greedily, and close it when admitting
/// the next example would push the bin's population std above
/// `target_std`.
pub fn significance_bins(ious: &[f64], target_std: f64) -> Vec<IouBin> {
    if ious.is_empty() {
        return Vec::new();
    }
    let mut sorted = ious.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut bins = Vec::new();
    let mut current: Vec<f64> = Vec::new();
    for &v in &sorted {
        if !current.is_empty() {
            let mut candidate = current.clone();
            candidate.push(v);
            let (_, std) = mean_std(&candidate);
            if std > target_std {
                let (mean, std) = mean_std(&current);
                bins.push(IouBin { count: current.len(), mean, std });
                current.clear();
            }
        }
        current.push(v);
    }
    let (mean, std) = mean_std(&current);
    bins.push(IouBin { count: current.len(), mean, std });
    bins
}
