//! IOU@0.5 accuracy of exemplar and search predictions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::imageio::rgb_to_tensor;
use crate::model::{HeadKind, Model};
use crate::scenegen::Sample;

/// Tolerance that keeps the IOU = 0.5 boundary inclusive under rounding.
const IOU_EPS: f64 = 1e-9;

/// IOU of two axis-aligned `size×size` boxes centered at `a` and `b`.
pub fn iou_same_size(a: (f64, f64), b: (f64, f64), size: f64) -> f64 {
    let ix = (size - (a.0 - b.0).abs()).max(0.0);
    let iy = (size - (a.1 - b.1).abs()).max(0.0);
    let inter = ix * iy;
    inter / (2.0 * size * size - inter)
}

pub fn is_correct(pred: (f64, f64), truth: (f64, f64), size: f64) -> bool {
    iou_same_size(pred, truth, size) >= 0.5 - IOU_EPS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub exemplar: (f64, f64),
    pub search: Option<(f64, f64)>,
    pub exemplar_correct: bool,
    pub search_correct: Option<bool>,
}

/// Predicts both branches of one sample. The search branch runs with the
/// feature vector pooled from the same sample's exemplar.
pub fn predict_sample(model: &Model, sample: &Sample) -> Result<SamplePrediction> {
    let r = &sample.record;
    let size = r.exemplar.target.size as f64;
    let truth = (r.target_pos[0], r.target_pos[1]);
    let truth_search = (r.target_pos_search[0], r.target_pos_search[1]);
    let ex = rgb_to_tensor(&sample.exemplar);
    match model.config().head {
        HeadKind::Siamese => {
            let out = model.exemplar_forward(&ex)?;
            let found = model.search_forward(&rgb_to_tensor(&sample.search), &out.f)?;
            Ok(SamplePrediction {
                exemplar: out.p,
                search: Some(found.p),
                exemplar_correct: is_correct(out.p, truth, size),
                search_correct: Some(is_correct(found.p, truth_search, size)),
            })
        }
        _ => {
            let p = model.predict_exemplar(&ex)?;
            Ok(SamplePrediction { exemplar: p, search: None, exemplar_correct: is_correct(p, truth, size), search_correct: None })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub exemplar_correct: usize,
    pub exemplar_acc: f64,
    pub search_correct: Option<usize>,
    pub search_acc: Option<f64>,
}

/// Accuracy over `samples`, computed in parallel; independent of order.
pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<EvalReport> {
    let preds: Vec<SamplePrediction> = samples.par_iter().map(|s| predict_sample(model, s)).collect::<Result<_>>()?;
    Ok(report_from(&preds))
}

pub fn report_from(preds: &[SamplePrediction]) -> EvalReport {
    let n = preds.len();
    let ex = preds.iter().filter(|p| p.exemplar_correct).count();
    let se = preds.iter().map(|p| p.search_correct).collect::<Option<Vec<bool>>>().map(|v| v.iter().filter(|c| **c).count());
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    EvalReport {
        samples: n,
        exemplar_correct: ex,
        exemplar_acc: frac(ex),
        search_correct: se.filter(|_| n > 0),
        search_acc: se.filter(|_| n > 0).map(frac),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_centers_have_unit_iou() {
        assert_eq!(iou_same_size((10.0, 10.0), (10.0, 10.0), 24.0), 1.0);
    }

    #[test]
    fn offset_of_a_third_is_exactly_the_boundary() {
        assert_eq!(iou_same_size((0.0, 0.0), (8.0, 0.0), 24.0), 0.5);
        assert!(is_correct((0.0, 0.0), (8.0, 0.0), 24.0));
        assert!(is_correct((0.0, 0.0), (0.0, 16.0 / 3.0), 16.0));
        assert!(!is_correct((0.0, 0.0), (8.01, 0.0), 24.0));
    }

    #[test]
    fn disjoint_boxes_have_zero_iou() {
        assert_eq!(iou_same_size((0.0, 0.0), (30.0, 0.0), 24.0), 0.0);
    }
}
