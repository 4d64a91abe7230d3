//! Confusion-matrix accumulation, per-class IoU and mIoU. All counting
//! is integer, so results are independent of accumulation order and of
//! any sharding of the dataset.

use crate::data::{Dataset, LabelMap, SegSample};
use crate::error::Result;
use crate::model::Csrnet;
use crate::ops::Mode;
use crate::tensor::{Scalar, Tensor4};
use crate::train::bench::LatencyStats;

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub num_classes: usize,
    /// row = ground truth class, column = predicted class
    pub confusion: Vec<u64>,
    /// None for classes absent from both prediction and ground truth
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub latency: Option<LatencyStats>,
}

impl MetricsReport {
    pub fn total_pixels(&self) -> u64 {
        self.confusion.iter().sum()
    }

    /// Flat `key = value` text form.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("num_classes = {}\n", self.num_classes));
        out.push_str(&format!("miou = {}\n", self.miou));
        for (k, iou) in self.per_class_iou.iter().enumerate() {
            match iou {
                Some(v) => out.push_str(&format!("iou_class_{k} = {v}\n")),
                None => out.push_str(&format!("iou_class_{k} = absent\n")),
            }
        }
        for gt in 0..self.num_classes {
            for pred in 0..self.num_classes {
                out.push_str(&format!(
                    "confusion_{gt}_{pred} = {}\n",
                    self.confusion[gt * self.num_classes + pred]
                ));
            }
        }
        if let Some(l) = &self.latency {
            out.push_str(&format!("latency_mean_ms = {}\n", l.mean_ms));
            out.push_str(&format!("latency_median_ms = {}\n", l.median_ms));
            out.push_str(&format!("fps = {}\n", l.fps));
        }
        out
    }
}

/// Per-pixel argmax over the class axis; ties go to the lowest index.
pub fn argmax_classes<T: Scalar>(logits: &Tensor4<T>, batch_index: usize) -> LabelMap {
    let (c, h, w) = (logits.c(), logits.h(), logits.w());
    let mut out = LabelMap::full(h, w, 0);
    for p in 0..h * w {
        let mut best = 0usize;
        let mut best_v = logits.plane(batch_index, 0)[p];
        for ch in 1..c {
            let v = logits.plane(batch_index, ch)[p];
            if v > best_v {
                best_v = v;
                best = ch;
            }
        }
        out.data[p] = best as u8;
    }
    out
}

pub fn accumulate_confusion(
    confusion: &mut [u64],
    num_classes: usize,
    pred: &LabelMap,
    gt: &LabelMap,
    ignore_index: u8,
) {
    for (p, g) in pred.data.iter().zip(&gt.data) {
        if *g == ignore_index {
            continue;
        }
        confusion[(*g as usize) * num_classes + *p as usize] += 1;
    }
}

/// IoU_k = TP / (TP + FP + FN); classes absent from both prediction and
/// ground truth are excluded from the mean.
pub fn metrics_from_confusion(confusion: Vec<u64>, num_classes: usize) -> MetricsReport {
    let mut per_class = Vec::with_capacity(num_classes);
    let mut sum = 0.0;
    let mut present = 0usize;
    for k in 0..num_classes {
        let tp = confusion[k * num_classes + k];
        let row: u64 = (0..num_classes).map(|j| confusion[k * num_classes + j]).sum();
        let col: u64 = (0..num_classes).map(|i| confusion[i * num_classes + k]).sum();
        let denom = row + col - tp;
        if denom == 0 {
            per_class.push(None);
        } else {
            let iou = tp as f64 / denom as f64;
            per_class.push(Some(iou));
            sum += iou;
            present += 1;
        }
    }
    MetricsReport {
        num_classes,
        confusion,
        miou: if present > 0 { sum / present as f64 } else { 0.0 },
        per_class_iou: per_class,
        latency: None,
    }
}

/// Eval-mode sweep over a dataset: argmax predictions, integer confusion
/// accumulation, IoU per class.
pub fn evaluate<T: Scalar>(
    model: &mut Csrnet<T>,
    dataset: &Dataset,
    batch_size: usize,
) -> Result<MetricsReport> {
    let num_classes = dataset.num_classes as usize;
    let mut confusion = vec![0u64; num_classes * num_classes];
    let mut i = 0;
    while i < dataset.len() {
        let end = (i + batch_size).min(dataset.len());
        let samples: Vec<SegSample<T>> = dataset.samples[i..end]
            .iter()
            .map(SegSample::from_raw)
            .collect();
        let batch = stack_images(&samples);
        let out = model.forward(&batch, Mode::Eval)?;
        for (bi, s) in samples.iter().enumerate() {
            let pred = argmax_classes(&out.logits, bi);
            accumulate_confusion(&mut confusion, num_classes, &pred, &s.labels, 255);
        }
        i = end;
    }
    Ok(metrics_from_confusion(confusion, num_classes))
}

/// Stacks (1, c, h, w) samples into one (n, c, h, w) batch.
pub fn stack_images<T: Scalar>(samples: &[SegSample<T>]) -> Tensor4<T> {
    let first = &samples[0].image;
    let (c, h, w) = (first.c(), first.h(), first.w());
    let mut out = Tensor4::zeros(samples.len(), c, h, w);
    for (bi, s) in samples.iter().enumerate() {
        for ch in 0..c {
            out.plane_mut(bi, ch).copy_from_slice(s.image.plane(0, ch));
        }
    }
    out
}

/// mIoU of the constant predictor that always answers the majority class
/// of `reference` (by pixel count), evaluated on `eval_set`.
pub fn majority_baseline_miou(reference: &Dataset, eval_set: &Dataset) -> (u8, f64) {
    let hist = reference.label_histogram();
    let majority = hist
        .iter()
        .enumerate()
        .max_by_key(|(_, &n)| n)
        .map(|(k, _)| k as u8)
        .unwrap_or(0);
    let num_classes = eval_set.num_classes as usize;
    let mut confusion = vec![0u64; num_classes * num_classes];
    for s in &eval_set.samples {
        let pred = LabelMap {
            h: s.h,
            w: s.w,
            data: vec![majority; s.h * s.w],
        };
        let gt = LabelMap {
            h: s.h,
            w: s.w,
            data: s.labels.clone(),
        };
        accumulate_confusion(&mut confusion, num_classes, &pred, &gt, 255);
    }
    (majority, metrics_from_confusion(confusion, num_classes).miou)
}
