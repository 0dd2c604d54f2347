//! Segmentation metrics restricted to classes seen in the source view.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scene::LabelImage;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub miou: f64,
    pub avg_class_acc: f64,
    pub total_acc: f64,
    /// IoU of every seen class.
    pub per_class_iou: BTreeMap<u32, f64>,
    /// Seen classes, ascending.
    pub seen: Vec<u32>,
}

/// Scores `pred` against `gt` over pixels whose ground truth is a seen
/// class. Pixels of unseen classes (and background) are ignored entirely.
pub fn compute_metrics(pred: &LabelImage, gt: &LabelImage, seen: &[u32]) -> Result<MetricReport> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::invalid(format!(
            "prediction is {}x{}, ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let mut seen: Vec<u32> = seen.to_vec();
    seen.sort_unstable();
    seen.dedup();
    if seen.is_empty() {
        return Err(Error::invalid("no seen classes to evaluate"));
    }
    let slot: BTreeMap<u32, usize> = seen.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let k = seen.len();
    let mut inter = vec![0usize; k];
    let mut gt_count = vec![0usize; k];
    let mut pred_count = vec![0usize; k];
    let mut correct = 0usize;
    let mut total = 0usize;
    for (&p, &g) in pred.ids.iter().zip(&gt.ids) {
        let Some(&gi) = slot.get(&g) else { continue };
        total += 1;
        gt_count[gi] += 1;
        if let Some(&pi) = slot.get(&p) {
            pred_count[pi] += 1;
        }
        if p == g {
            inter[gi] += 1;
            correct += 1;
        }
    }
    let mut per_class_iou = BTreeMap::new();
    let mut iou_sum = 0.0;
    let mut acc_sum = 0.0;
    for (i, &c) in seen.iter().enumerate() {
        let union = gt_count[i] + pred_count[i] - inter[i];
        let iou = if union == 0 { 0.0 } else { inter[i] as f64 / union as f64 };
        per_class_iou.insert(c, iou);
        iou_sum += iou;
        acc_sum += if gt_count[i] == 0 { 0.0 } else { inter[i] as f64 / gt_count[i] as f64 };
    }
    Ok(MetricReport {
        miou: iou_sum / k as f64,
        avg_class_acc: acc_sum / k as f64,
        total_acc: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        per_class_iou,
        seen,
    })
}
