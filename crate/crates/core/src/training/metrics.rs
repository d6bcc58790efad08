//! Classification accuracies and part-segmentation mIoU.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{CloudGeometry, Head, Network};
use crate::training::loss::argmax;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    /// Fraction of correctly classified examples (or points, for segmentation).
    pub instance_acc: f64,
    /// Mean over classes present in the ground truth of per-class accuracy.
    pub class_acc: f64,
    /// Segmentation only.
    pub miou: Option<f64>,
}

impl Metrics {
    /// The number reported per epoch: accuracy or mIoU.
    pub fn headline(&self) -> f64 {
        self.miou.unwrap_or(self.instance_acc)
    }
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
}

pub fn class_mean_accuracy(pred: &[usize], truth: &[usize], n_classes: usize) -> f64 {
    assert_eq!(pred.len(), truth.len());
    let mut hit = vec![0usize; n_classes];
    let mut seen = vec![0usize; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        seen[t] += 1;
        hit[t] += usize::from(p == t);
    }
    let present: Vec<f64> = (0..n_classes).filter(|&c| seen[c] > 0).map(|c| hit[c] as f64 / seen[c] as f64).collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// Mean over part labels of IoU for one shape; a label absent from both
/// prediction and truth counts as IoU 1.
pub fn shape_iou(pred: &[usize], truth: &[usize], n_labels: usize) -> f64 {
    assert_eq!(pred.len(), truth.len());
    let mut inter = vec![0usize; n_labels];
    let mut union = vec![0usize; n_labels];
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[t] += 1;
        }
    }
    (0..n_labels).map(|l| if union[l] == 0 { 1.0 } else { inter[l] as f64 / union[l] as f64 }).sum::<f64>()
        / n_labels as f64
}

/// Mean of [`shape_iou`] over shapes.
pub fn mean_iou(shapes: &[(Vec<usize>, Vec<usize>)], n_labels: usize) -> f64 {
    if shapes.is_empty() {
        return 0.0;
    }
    shapes.iter().map(|(p, t)| shape_iou(p, t, n_labels)).sum::<f64>() / shapes.len() as f64
}

/// Builds (in parallel) the coordinate-only geometry of every item.
pub fn dataset_geometry(net: &Network, ds: &Dataset) -> Result<Vec<CloudGeometry>> {
    ds.items.par_iter().map(|s| net.geometry(&s.cloud)).collect()
}

/// Eval-mode metrics of `net` on `ds`, reusing `geoms` when given.
pub fn evaluate(net: &Network, ds: &Dataset, geoms: Option<&[CloudGeometry]>) -> Result<Metrics> {
    if ds.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty dataset".into()));
    }
    let owned;
    let geoms = match geoms {
        Some(g) => g,
        None => {
            owned = dataset_geometry(net, ds)?;
            &owned
        }
    };
    match net.arch.head {
        Head::Classify { n_classes } => {
            let items: Vec<_> = ds.items.iter().zip(geoms).map(|(s, g)| (&s.cloud, g)).collect();
            let mut pred = Vec::with_capacity(items.len());
            for chunk in items.chunks(64) {
                let logits = net.classify_batch(chunk)?;
                pred.extend((0..logits.rows()).map(|i| argmax(logits.row(i))));
            }
            let truth: Vec<usize> = ds.items.iter().map(|s| s.label).collect();
            Ok(Metrics {
                instance_acc: accuracy(&pred, &truth),
                class_acc: class_mean_accuracy(&pred, &truth, n_classes),
                miou: None,
            })
        }
        Head::Segment { n_labels } => {
            let shapes = ds
                .items
                .par_iter()
                .zip(geoms.par_iter())
                .map(|(s, g)| {
                    let truth = s.cloud.labels.clone().ok_or_else(|| Error::Input("cloud has no part labels".into()))?;
                    let logits = net.forward_segment_with(&s.cloud, g)?;
                    let pred: Vec<usize> = (0..logits.rows()).map(|i| argmax(logits.row(i))).collect();
                    Ok((pred, truth))
                })
                .collect::<Result<Vec<_>>>()?;
            let all_pred: Vec<usize> = shapes.iter().flat_map(|(p, _)| p.iter().copied()).collect();
            let all_truth: Vec<usize> = shapes.iter().flat_map(|(_, t)| t.iter().copied()).collect();
            Ok(Metrics {
                instance_acc: accuracy(&all_pred, &all_truth),
                class_acc: class_mean_accuracy(&all_pred, &all_truth, n_labels),
                miou: Some(mean_iou(&shapes, n_labels)),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let t = vec![0, 1, 2, 1];
        assert_eq!(accuracy(&t, &t), 1.0);
        assert_eq!(class_mean_accuracy(&t, &t, 3), 1.0);
        assert_eq!(mean_iou(&[(t.clone(), t.clone())], 3), 1.0);
    }

    #[test]
    fn single_class_constant_predictor() {
        let t = vec![2; 7];
        assert_eq!(accuracy(&t, &t), 1.0);
        assert_eq!(class_mean_accuracy(&t, &t, 4), 1.0);
    }

    #[test]
    fn hand_computed_miou() {
        // shape A: truth 0 0 1 1, pred 0 1 1 1 → IoU0 = 1/2, IoU1 = 2/3
        // shape B: truth 1 1 1,   pred 1 1 1   → IoU0 = 1 (absent), IoU1 = 1
        // shape C: truth 0 0,     pred 1 1     → IoU0 = 0, IoU1 = 0
        let shapes = vec![
            (vec![0, 1, 1, 1], vec![0, 0, 1, 1]),
            (vec![1, 1, 1], vec![1, 1, 1]),
            (vec![1, 1], vec![0, 0]),
        ];
        let expect = ((0.5 + 2.0 / 3.0) / 2.0 + 1.0 + 0.0) / 3.0;
        assert!((mean_iou(&shapes, 2) - expect).abs() < 1e-15);
    }

    #[test]
    fn class_mean_differs_from_instance() {
        let truth = vec![0, 0, 0, 1];
        let pred = vec![0, 0, 0, 0];
        assert_eq!(accuracy(&pred, &truth), 0.75);
        assert_eq!(class_mean_accuracy(&pred, &truth, 2), 0.5);
    }
}
