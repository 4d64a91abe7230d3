//! Class activation maps by masked scoring: each channel of a tapped
//! stage output is min-max normalized, upsampled to the input size and
//! used as a mask on the input; the model's mean target-class softmax
//! probability on the masked input is that channel's weight. The map is
//! the ReLU of the weighted channel sum, min-max normalized.

use crate::error::{Error, Result};
use crate::model::{Csrnet, StageTap};
use crate::ops::{self, Mode};
use crate::tensor::{Scalar, Tensor4};

/// min-max to [0, 1]; a constant plane maps to all zeros.
fn minmax_plane<T: Scalar>(plane: &[T]) -> Vec<T> {
    let mut lo = plane[0];
    let mut hi = plane[0];
    for &v in plane {
        if v < lo {
            lo = v;
        }
        if v > hi {
            hi = v;
        }
    }
    if hi <= lo {
        return vec![T::zero(); plane.len()];
    }
    let span = hi - lo;
    plane.iter().map(|&v| (v - lo) / span).collect()
}

/// Masks the (1, 3, H, W) input with a normalized single-channel map.
fn mask_input<T: Scalar>(x: &Tensor4<T>, mask: &[T]) -> Tensor4<T> {
    let mut out = x.clone();
    for ch in 0..x.c() {
        for (o, &m) in out.plane_mut(0, ch).iter_mut().zip(mask) {
            *o = *o * m;
        }
    }
    out
}

/// Mean target-class softmax probability over all pixels, per batch item.
fn class_scores<T: Scalar>(logits: &Tensor4<T>, target_class: usize) -> Vec<T> {
    let probs = ops::softmax_channels(logits);
    let hw = probs.h() * probs.w();
    (0..probs.n())
        .map(|bi| {
            let mut acc = T::zero();
            for &v in probs.plane(bi, target_class) {
                acc = acc + v;
            }
            acc / T::from_f64(hw as f64)
        })
        .collect()
}

/// One weight per activation channel, computed by forwarding masked
/// inputs in batches of `batch`. Results are bitwise independent of the
/// batching because eval-mode forwards treat batch items independently.
pub fn score_cam_channel_weights<T: Scalar>(
    model: &mut Csrnet<T>,
    x: &Tensor4<T>,
    target_class: usize,
    activations: &Tensor4<T>,
    batch: usize,
) -> Result<Vec<T>> {
    let (c, h, w) = (activations.c(), x.h(), x.w());
    let mut weights = Vec::with_capacity(c);
    let mut ch = 0usize;
    while ch < c {
        let end = (ch + batch.max(1)).min(c);
        let mut stacked = Tensor4::zeros(end - ch, x.c(), h, w);
        for (bi, k) in (ch..end).enumerate() {
            let norm = minmax_plane(activations.plane(0, k));
            let norm_t =
                Tensor4::from_vec(1, 1, activations.h(), activations.w(), norm)?;
            let up = ops::bilinear_resize_forward(&norm_t, h, w)?;
            let masked = mask_input(x, up.plane(0, 0));
            for cch in 0..x.c() {
                stacked.plane_mut(bi, cch).copy_from_slice(masked.plane(0, cch));
            }
        }
        let out = model.forward(&stacked, Mode::Eval)?;
        weights.extend(class_scores(&out.logits, target_class));
        ch = end;
    }
    Ok(weights)
}

/// The final activation map at the tap's resolution, in [0, 1].
pub fn score_cam<T: Scalar>(
    model: &mut Csrnet<T>,
    x: &Tensor4<T>,
    target_class: usize,
    tap: StageTap,
    batch: usize,
) -> Result<Tensor4<T>> {
    if target_class >= model.num_classes() {
        return Err(Error::Config(format!(
            "target class {target_class} out of range for {} classes",
            model.num_classes()
        )));
    }
    let out = model.forward(x, Mode::Eval)?;
    let activations = out
        .stage_outputs
        .get(tap)
        .ok_or_else(|| Error::Config(format!("stage tap {tap:?} is not produced by this model")))?
        .clone();
    let weights = score_cam_channel_weights(model, x, target_class, &activations, batch)?;

    let (ah, aw) = (activations.h(), activations.w());
    let mut cam = vec![T::zero(); ah * aw];
    for (k, &wk) in weights.iter().enumerate() {
        for (acc, &a) in cam.iter_mut().zip(activations.plane(0, k)) {
            *acc = *acc + wk * a;
        }
    }
    for v in cam.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    let normed = minmax_plane(&cam);
    Tensor4::from_vec(1, 1, ah, aw, normed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig, Variant};

    fn small_model() -> Csrnet<f64> {
        let cfg = ModelConfig {
            variant: Variant::Light,
            c: 6,
            mu: 0.06,
            num_classes: 4,
            ..ModelConfig::default()
        };
        let mut model = build_model::<f64>(&cfg, 3).unwrap();
        // prime running statistics so eval mode works
        let x = Tensor4::full(2, 3, 32, 32, 0.4);
        model.forward(&x, Mode::Train).unwrap();
        model
    }

    #[test]
    fn constant_activation_normalizes_to_zero_mask() {
        assert_eq!(minmax_plane(&[2.5f64, 2.5, 2.5]), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn cam_is_normalized_with_a_unit_peak() {
        let mut model = small_model();
        let x = Tensor4::from_vec(
            1,
            3,
            32,
            32,
            (0..3 * 32 * 32).map(|i| (i % 97) as f64 / 97.0).collect(),
        )
        .unwrap();
        let cam = score_cam(&mut model, &x, 1, StageTap::High, 4).unwrap();
        let mx = cam.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mn = cam.data().iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(mn >= 0.0 && mx <= 1.0);
        if mx > 0.0 {
            assert!((mx - 1.0).abs() < 1e-12, "nonzero map must peak at 1, got {mx}");
        }
    }

    #[test]
    fn batched_weights_match_the_per_channel_loop_bitwise() {
        let mut model = small_model();
        let x = Tensor4::from_vec(
            1,
            3,
            32,
            32,
            (0..3 * 32 * 32).map(|i| ((i * 31) % 53) as f64 / 53.0).collect(),
        )
        .unwrap();
        let acts = model
            .forward(&x, Mode::Eval)
            .unwrap()
            .stage_outputs
            .high_refined
            .unwrap();
        let batched = score_cam_channel_weights(&mut model, &x, 2, &acts, 4).unwrap();
        let looped = score_cam_channel_weights(&mut model, &x, 2, &acts, 1).unwrap();
        assert_eq!(batched, looped);
    }

    #[test]
    fn missing_tap_is_an_error() {
        let mut model = small_model();
        let x = Tensor4::full(1, 3, 32, 32, 0.3);
        assert!(score_cam(&mut model, &x, 0, StageTap::Low, 4).is_err());
    }
}
