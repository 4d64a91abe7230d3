//! Pixelwise cross-entropy over class logits, averaged over non-ignored
//! pixels, with its exact gradient. Pixels labeled with the ignore index
//! contribute nothing to either.

use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

pub const IGNORE_INDEX: u8 = 255;

pub struct LossOutput<T> {
    pub loss: T,
    pub grad_logits: Tensor4<T>,
    pub pixels: usize,
}

/// Mean over non-ignored pixels of -log softmax(logits)[label].
/// If every pixel is ignored the loss is 0 with a zero gradient and a
/// warning is emitted on stderr.
pub fn cross_entropy_loss<T: Scalar>(
    logits: &Tensor4<T>,
    labels: &[LabelMap],
    ignore_index: u8,
) -> Result<LossOutput<T>> {
    let (n, classes, h, w) = (logits.n(), logits.c(), logits.h(), logits.w());
    if labels.len() != n {
        return Err(Error::shape("cross_entropy", format!("{n} label maps"), labels.len()));
    }
    for (i, l) in labels.iter().enumerate() {
        if l.h != h || l.w != w {
            return Err(Error::shape(
                "cross_entropy",
                format!("label map {i} of {h}x{w}"),
                format!("{}x{}", l.h, l.w),
            ));
        }
    }

    let mut count = 0usize;
    for l in labels {
        for &v in &l.data {
            if v != ignore_index {
                if (v as usize) >= classes {
                    return Err(Error::Config(format!(
                        "label value {v} out of range for {classes} classes"
                    )));
                }
                count += 1;
            }
        }
    }

    let mut grad = Tensor4::zeros(n, classes, h, w);
    if count == 0 {
        eprintln!("warning: cross_entropy_loss: every pixel is ignored; loss is 0");
        return Ok(LossOutput {
            loss: T::zero(),
            grad_logits: grad,
            pixels: 0,
        });
    }

    let inv_count = T::one() / T::from_f64(count as f64);
    let hw = h * w;
    let mut total = T::zero();
    for bi in 0..n {
        let lmap = &labels[bi].data;
        for p in 0..hw {
            let label = lmap[p];
            if label == ignore_index {
                continue;
            }
            // stable log-softmax at this pixel
            let mut m = logits.plane(bi, 0)[p];
            for ch in 1..classes {
                let v = logits.plane(bi, ch)[p];
                if v > m {
                    m = v;
                }
            }
            let mut z = T::zero();
            for ch in 0..classes {
                z = z + (logits.plane(bi, ch)[p] - m).exp();
            }
            let logz = z.ln() + m;
            total = total + (logz - logits.plane(bi, label as usize)[p]);
            for ch in 0..classes {
                let soft = (logits.plane(bi, ch)[p] - logz).exp();
                let indicator = if ch == label as usize { T::one() } else { T::zero() };
                grad.plane_mut(bi, ch)[p] = (soft - indicator) * inv_count;
            }
        }
    }

    Ok(LossOutput {
        loss: total * inv_count,
        grad_logits: grad,
        pixels: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelMap;

    fn labels(h: usize, w: usize, data: Vec<u8>) -> LabelMap {
        LabelMap { h, w, data }
    }

    #[test]
    fn confident_correct_prediction_has_zero_loss() {
        // huge margin toward the true class
        let mut logits = Tensor4::<f64>::zeros(1, 3, 1, 2);
        *logits.at_mut(0, 1, 0, 0) = 60.0;
        *logits.at_mut(0, 2, 0, 1) = 60.0;
        let l = labels(1, 2, vec![1, 2]);
        let out = cross_entropy_loss(&logits, &[l], IGNORE_INDEX).unwrap();
        assert!(out.loss.abs() < 1e-12, "{}", out.loss);
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor4::<f64>::zeros(2, 5, 2, 2);
        let l0 = labels(2, 2, vec![0, 1, 2, 3]);
        let l1 = labels(2, 2, vec![4, 0, 1, 2]);
        let out = cross_entropy_loss(&logits, &[l0, l1], IGNORE_INDEX).unwrap();
        assert!((out.loss - 5.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ignored_pixels_have_zero_gradient() {
        let logits = Tensor4::<f64>::from_vec(1, 2, 1, 2, vec![0.5, -0.5, 1.0, 2.0]).unwrap();
        let l = labels(1, 2, vec![0, IGNORE_INDEX]);
        let out = cross_entropy_loss(&logits, &[l], IGNORE_INDEX).unwrap();
        assert_eq!(out.pixels, 1);
        assert_eq!(out.grad_logits.at(0, 0, 0, 1), 0.0);
        assert_eq!(out.grad_logits.at(0, 1, 0, 1), 0.0);
        assert!(out.grad_logits.at(0, 0, 0, 0) != 0.0);
    }

    #[test]
    fn all_ignored_is_zero_loss_zero_grad() {
        let logits = Tensor4::<f64>::full(1, 2, 2, 2, 3.0);
        let l = labels(2, 2, vec![IGNORE_INDEX; 4]);
        let out = cross_entropy_loss(&logits, &[l], IGNORE_INDEX).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_logits.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let logits = Tensor4::<f64>::zeros(1, 3, 1, 1);
        let l = labels(1, 1, vec![3]);
        assert!(cross_entropy_loss(&logits, &[l], IGNORE_INDEX).is_err());
    }
}
