//! Arteriole/venule discrimination metrics.
//!
//! Counting convention: only pixels whose ground truth is ARTERIOLE or
//! VENULE are evaluable. A vessel pixel predicted as the *other* vessel
//! class increments that predicted class's false-positive tally
//! (FP_at counts venule-truth pixels predicted arteriole, and vice
//! versa). Vessel pixels predicted background or intersection are
//! excluded from the rate equations and reported separately as misses.
//! Uncertain pixels and non-vessel ground truth are never counted.

use serde::{Deserialize, Serialize};

use crate::data::labels::ClassId;
use crate::data::FundusSample;
use crate::error::{AvError, Result};
use crate::model::{predict_image, AvNet};
use crate::ops::PaddingMode;
use crate::tensor::Element;

/// Pixel tallies feeding the rate equations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp_at: u64,
    pub fp_at: u64,
    pub tp_ve: u64,
    pub fp_ve: u64,
}

impl std::ops::Add for ConfusionCounts {
    type Output = ConfusionCounts;
    fn add(self, rhs: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp_at: self.tp_at + rhs.tp_at,
            fp_at: self.fp_at + rhs.fp_at,
            tp_ve: self.tp_ve + rhs.tp_ve,
            fp_ve: self.fp_ve + rhs.fp_ve,
        }
    }
}

/// The three rate metrics. A zero denominator leaves the value at 0.0
/// with its `defined` flag cleared (never NaN, never thrown).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tpr_at: f64,
    pub tpr_at_defined: bool,
    pub tpr_ve: f64,
    pub tpr_ve_defined: bool,
    pub accuracy: f64,
    pub accuracy_defined: bool,
}

/// `TPR_at = TP_at/(TP_at+FP_at)`, `TPR_ve = TP_ve/(TP_ve+FP_ve)`,
/// `Accuracy = (TP_ve+TP_at)/(TP_ve+FP_ve+TP_at+FP_at)` — implemented
/// exactly as written.
pub fn metrics(counts: &ConfusionCounts) -> Metrics {
    let ratio = |num: u64, den: u64| -> (f64, bool) {
        if den == 0 {
            (0.0, false)
        } else {
            (num as f64 / den as f64, true)
        }
    };
    let (tpr_at, at_def) = ratio(counts.tp_at, counts.tp_at + counts.fp_at);
    let (tpr_ve, ve_def) = ratio(counts.tp_ve, counts.tp_ve + counts.fp_ve);
    let (accuracy, acc_def) = ratio(
        counts.tp_ve + counts.tp_at,
        counts.tp_ve + counts.fp_ve + counts.tp_at + counts.fp_at,
    );
    Metrics {
        tpr_at,
        tpr_at_defined: at_def,
        tpr_ve,
        tpr_ve_defined: ve_def,
        accuracy,
        accuracy_defined: acc_def,
    }
}

/// Recall-form rates (`TP/(TP+FN)`), reported alongside the headline
/// metrics when requested. FN counts vessel-truth pixels predicted as
/// anything other than their true class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallMetrics {
    pub recall_at: f64,
    pub recall_at_defined: bool,
    pub recall_ve: f64,
    pub recall_ve_defined: bool,
}

/// Full evaluation report (serialized as the metrics JSON artifact).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tpr_at: f64,
    pub tpr_at_defined: bool,
    pub tpr_ve: f64,
    pub tpr_ve_defined: bool,
    pub accuracy: f64,
    pub accuracy_defined: bool,
    pub counts: ConfusionCounts,
    /// Vessel-truth pixels predicted background or intersection.
    pub missed_at: u64,
    pub missed_ve: u64,
    /// Pixels with arteriole/venule ground truth.
    pub vessel_pixels: u64,
    /// Pixels excluded as uncertain.
    pub ignored_pixels: u64,
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<RecallMetrics>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalOptions {
    pub padding: PaddingMode,
    /// Additionally report TP/(TP+FN) recall rates.
    pub report_recall: bool,
}

/// Count one sample's predictions against its ground truth.
#[derive(Clone, Copy, Debug, Default)]
struct SampleTally {
    counts: ConfusionCounts,
    missed_at: u64,
    missed_ve: u64,
    vessel_pixels: u64,
    ignored_pixels: u64,
}

fn tally_predictions(pred: &[u8], sample: &FundusSample) -> SampleTally {
    const ART: u8 = ClassId::Arteriole as u8;
    const VEN: u8 = ClassId::Venule as u8;
    let mut t = SampleTally::default();
    for (&truth, &p) in sample.class_map.data.iter().zip(pred) {
        match truth {
            crate::data::IGNORE => t.ignored_pixels += 1,
            x if x == ART => {
                t.vessel_pixels += 1;
                if p == ART {
                    t.counts.tp_at += 1;
                } else if p == VEN {
                    t.counts.fp_ve += 1;
                } else {
                    t.missed_at += 1;
                }
            }
            x if x == VEN => {
                t.vessel_pixels += 1;
                if p == VEN {
                    t.counts.tp_ve += 1;
                } else if p == ART {
                    t.counts.fp_at += 1;
                } else {
                    t.missed_ve += 1;
                }
            }
            _ => {}
        }
    }
    t
}

/// Argmax class per pixel (ties to the lowest class index).
pub fn argmax_classes<E: Element>(probs: &[E], k: usize, pixels: usize) -> Vec<u8> {
    let mut out = vec![0u8; pixels];
    for (pix, slot) in out.iter_mut().enumerate() {
        let mut best = 0usize;
        let mut best_v = probs[pix];
        for ch in 1..k {
            let v = probs[ch * pixels + pix];
            if v > best_v {
                best_v = v;
                best = ch;
            }
        }
        *slot = best as u8;
    }
    out
}

/// Eval-mode, full-image evaluation over a sample set.
pub fn evaluate<E: Element>(
    model: &AvNet<E>,
    samples: &[FundusSample],
    opts: &EvalOptions,
) -> Result<(ConfusionCounts, MetricsReport)> {
    if samples.is_empty() {
        return Err(AvError::arg("evaluate: empty sample list"));
    }
    let mut total = SampleTally::default();
    for sample in samples {
        let image = sample.image.cast::<E>();
        let probs = predict_image(model, &image, opts.padding)?;
        let (k, h, w) = (probs.shape()[0], probs.shape()[1], probs.shape()[2]);
        let pred = argmax_classes(probs.data(), k, h * w);
        let t = tally_predictions(&pred, sample);
        total.counts = total.counts + t.counts;
        total.missed_at += t.missed_at;
        total.missed_ve += t.missed_ve;
        total.vessel_pixels += t.vessel_pixels;
        total.ignored_pixels += t.ignored_pixels;
    }
    if total.vessel_pixels == 0 {
        return Err(AvError::arg(
            "evaluate: no pixels with arteriole/venule ground truth",
        ));
    }
    Ok(build_report(total, samples.len(), opts.report_recall))
}

fn build_report(
    total: SampleTally,
    samples: usize,
    report_recall: bool,
) -> (ConfusionCounts, MetricsReport) {
    let m = metrics(&total.counts);
    let recall = report_recall.then(|| {
        let ratio = |num: u64, den: u64| -> (f64, bool) {
            if den == 0 {
                (0.0, false)
            } else {
                (num as f64 / den as f64, true)
            }
        };
        let fn_at = total.counts.fp_ve + total.missed_at;
        let fn_ve = total.counts.fp_at + total.missed_ve;
        let (recall_at, at_def) = ratio(total.counts.tp_at, total.counts.tp_at + fn_at);
        let (recall_ve, ve_def) = ratio(total.counts.tp_ve, total.counts.tp_ve + fn_ve);
        RecallMetrics {
            recall_at,
            recall_at_defined: at_def,
            recall_ve,
            recall_ve_defined: ve_def,
        }
    });
    let report = MetricsReport {
        tpr_at: m.tpr_at,
        tpr_at_defined: m.tpr_at_defined,
        tpr_ve: m.tpr_ve,
        tpr_ve_defined: m.tpr_ve_defined,
        accuracy: m.accuracy,
        accuracy_defined: m.accuracy_defined,
        counts: total.counts,
        missed_at: total.missed_at,
        missed_ve: total.missed_ve,
        vessel_pixels: total.vessel_pixels,
        ignored_pixels: total.ignored_pixels,
        samples,
        recall,
    };
    (total.counts, report)
}

/// Evaluate predictions that are already decoded to class ids (used by
/// tests to drive the tally convention directly).
pub fn evaluate_classmaps(
    pred: &[u8],
    sample: &FundusSample,
    report_recall: bool,
) -> Result<(ConfusionCounts, MetricsReport)> {
    if pred.len() != sample.class_map.data.len() {
        return Err(AvError::arg("prediction/ground-truth size mismatch"));
    }
    let t = tally_predictions(pred, sample);
    if t.vessel_pixels == 0 {
        return Err(AvError::arg(
            "evaluate: no pixels with arteriole/venule ground truth",
        ));
    }
    Ok(build_report(t, 1, report_recall))
}
