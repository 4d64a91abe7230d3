//! Batch normalization over rank-4 maps (per channel, statistics across
//! batch and space) and over descriptor batches (per feature, statistics
//! across the batch). Train mode normalizes with batch statistics; eval
//! mode consumes running statistics maintained by the owning layer.
//! Parameter vectors are plain length-c slices.

use crate::error::{Error, Result};
use crate::tensor::{ChannelBatch, Scalar, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub struct Bn2dTrainOut<T> {
    pub out: Tensor4<T>,
    /// biased batch variance, per channel
    pub var: Vec<T>,
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
}

fn check_len<T>(op: &'static str, c: usize, v: &[T]) -> Result<()> {
    if v.len() != c {
        return Err(Error::shape(op, format!("channel vector of length {c}"), v.len()));
    }
    Ok(())
}

pub fn bn2d_train_forward<T: Scalar>(
    input: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> Result<Bn2dTrainOut<T>> {
    let (n, c, h, w) = (input.n(), input.c(), input.h(), input.w());
    check_len("batch_norm", c, gamma)?;
    check_len("batch_norm", c, beta)?;
    let m = T::from_f64((n * h * w) as f64);

    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    let mut inv_std = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum = T::zero();
        for bi in 0..n {
            for &v in input.plane(bi, ch) {
                sum = sum + v;
            }
        }
        let mu = sum / m;
        let mut sq = T::zero();
        for bi in 0..n {
            for &v in input.plane(bi, ch) {
                let d = v - mu;
                sq = sq + d * d;
            }
        }
        mean[ch] = mu;
        var[ch] = sq / m;
        inv_std[ch] = T::one() / (sq / m + eps).sqrt();
    }

    let mut out = Tensor4::zeros(n, c, h, w);
    for bi in 0..n {
        for ch in 0..c {
            let mu = mean[ch];
            let is = inv_std[ch];
            let g = gamma[ch];
            let b = beta[ch];
            let src = input.plane(bi, ch);
            let dst = out.plane_mut(bi, ch);
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - mu) * is * g + b;
            }
        }
    }
    Ok(Bn2dTrainOut {
        out,
        var,
        mean,
        inv_std,
    })
}

pub fn bn2d_eval_forward<T: Scalar>(
    input: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> Result<Tensor4<T>> {
    let (n, c, h, w) = (input.n(), input.c(), input.h(), input.w());
    check_len("batch_norm", c, gamma)?;
    check_len("batch_norm", c, beta)?;
    check_len("batch_norm", c, running_mean)?;
    check_len("batch_norm", c, running_var)?;
    let mut out = Tensor4::zeros(n, c, h, w);
    for bi in 0..n {
        for ch in 0..c {
            let mu = running_mean[ch];
            let is = T::one() / (running_var[ch] + eps).sqrt();
            let g = gamma[ch];
            let b = beta[ch];
            let src = input.plane(bi, ch);
            let dst = out.plane_mut(bi, ch);
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - mu) * is * g + b;
            }
        }
    }
    Ok(out)
}

/// Exact VJP for the train-mode forward. `mean`/`inv_std` come from the
/// matching forward call. Returns (grad_input, grad_gamma, grad_beta).
pub fn bn2d_train_backward<T: Scalar>(
    input: &Tensor4<T>,
    gamma: &[T],
    mean: &[T],
    inv_std: &[T],
    grad_out: &Tensor4<T>,
) -> (Tensor4<T>, Vec<T>, Vec<T>) {
    let (n, c, h, w) = (input.n(), input.c(), input.h(), input.w());
    let m = T::from_f64((n * h * w) as f64);
    let mut grad_in = Tensor4::zeros(n, c, h, w);
    let mut grad_gamma = vec![T::zero(); c];
    let mut grad_beta = vec![T::zero(); c];

    for ch in 0..c {
        let mu = mean[ch];
        let is = inv_std[ch];
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for bi in 0..n {
            let go = grad_out.plane(bi, ch);
            let x = input.plane(bi, ch);
            for (&g, &xv) in go.iter().zip(x) {
                sum_g = sum_g + g;
                sum_gx = sum_gx + g * (xv - mu) * is;
            }
        }
        grad_gamma[ch] = sum_gx;
        grad_beta[ch] = sum_g;
        let gscale = gamma[ch] * is;
        let mean_g = sum_g / m;
        let mean_gx = sum_gx / m;
        for bi in 0..n {
            let go = grad_out.plane(bi, ch);
            let x = input.plane(bi, ch);
            let dst = grad_in.plane_mut(bi, ch);
            for ((d, &g), &xv) in dst.iter_mut().zip(go).zip(x) {
                let xhat = (xv - mu) * is;
                *d = gscale * (g - mean_g - xhat * mean_gx);
            }
        }
    }
    (grad_in, grad_gamma, grad_beta)
}

pub struct Bn1dTrainOut<T> {
    pub out: ChannelBatch<T>,
    pub var: Vec<T>,
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
}

pub fn bn1d_train_forward<T: Scalar>(
    input: &ChannelBatch<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> Result<Bn1dTrainOut<T>> {
    let (n, c) = (input.n, input.c);
    check_len("batch_norm1d", c, gamma)?;
    check_len("batch_norm1d", c, beta)?;
    let m = T::from_f64(n as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    let mut inv_std = vec![T::zero(); c];
    for f in 0..c {
        let mut sum = T::zero();
        for bi in 0..n {
            sum = sum + input.row(bi)[f];
        }
        let mu = sum / m;
        let mut sq = T::zero();
        for bi in 0..n {
            let d = input.row(bi)[f] - mu;
            sq = sq + d * d;
        }
        mean[f] = mu;
        var[f] = sq / m;
        inv_std[f] = T::one() / (sq / m + eps).sqrt();
    }
    let mut out = ChannelBatch::zeros(n, c);
    for bi in 0..n {
        let src = input.row(bi);
        let dst = out.row_mut(bi);
        for f in 0..c {
            dst[f] = (src[f] - mean[f]) * inv_std[f] * gamma[f] + beta[f];
        }
    }
    Ok(Bn1dTrainOut {
        out,
        var,
        mean,
        inv_std,
    })
}

pub fn bn1d_eval_forward<T: Scalar>(
    input: &ChannelBatch<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> Result<ChannelBatch<T>> {
    let (n, c) = (input.n, input.c);
    check_len("batch_norm1d", c, gamma)?;
    check_len("batch_norm1d", c, beta)?;
    let mut out = ChannelBatch::zeros(n, c);
    for bi in 0..n {
        let src = input.row(bi);
        let dst = out.row_mut(bi);
        for f in 0..c {
            let is = T::one() / (running_var[f] + eps).sqrt();
            dst[f] = (src[f] - running_mean[f]) * is * gamma[f] + beta[f];
        }
    }
    Ok(out)
}

pub fn bn1d_train_backward<T: Scalar>(
    input: &ChannelBatch<T>,
    gamma: &[T],
    mean: &[T],
    inv_std: &[T],
    grad_out: &ChannelBatch<T>,
) -> (ChannelBatch<T>, Vec<T>, Vec<T>) {
    let (n, c) = (input.n, input.c);
    let m = T::from_f64(n as f64);
    let mut grad_in = ChannelBatch::zeros(n, c);
    let mut grad_gamma = vec![T::zero(); c];
    let mut grad_beta = vec![T::zero(); c];
    for f in 0..c {
        let mu = mean[f];
        let is = inv_std[f];
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for bi in 0..n {
            let g = grad_out.row(bi)[f];
            sum_g = sum_g + g;
            sum_gx = sum_gx + g * (input.row(bi)[f] - mu) * is;
        }
        grad_gamma[f] = sum_gx;
        grad_beta[f] = sum_g;
        let gscale = gamma[f] * is;
        let mean_g = sum_g / m;
        let mean_gx = sum_gx / m;
        for bi in 0..n {
            let g = grad_out.row(bi)[f];
            let xhat = (input.row(bi)[f] - mu) * is;
            grad_in.row_mut(bi)[f] = gscale * (g - mean_g - xhat * mean_gx);
        }
    }
    (grad_in, grad_gamma, grad_beta)
}

/// running <- (1 - momentum) * running + momentum * batch_stat, with the
/// variance recorded unbiased (denominator max(m-1, 1)).
pub fn update_running_stats<T: Scalar>(
    running_mean: &mut [T],
    running_var: &mut [T],
    batch_mean: &[T],
    batch_var_biased: &[T],
    count: usize,
    momentum: T,
) {
    let unbias = T::from_f64(count as f64 / (count.max(2) - 1) as f64);
    let keep = T::one() - momentum;
    for f in 0..running_mean.len() {
        running_mean[f] = keep * running_mean[f] + momentum * batch_mean[f];
        running_var[f] = keep * running_var[f] + momentum * batch_var_biased[f] * unbias;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = Tensor4::<f64>::full(2, 3, 4, 4, 7.5);
        let r = bn2d_train_forward(&x, &[1.0; 3], &[0.0; 3], 1e-5).unwrap();
        for &v in r.out.data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn normalized_input_is_a_fixed_point_up_to_eps() {
        // per-channel zero mean, unit variance: alternating +1/-1
        let mut x = Tensor4::<f64>::zeros(1, 2, 2, 2);
        for ch in 0..2 {
            x.plane_mut(0, ch).copy_from_slice(&[1.0, -1.0, 1.0, -1.0]);
        }
        let eps = 1e-5;
        let r = bn2d_train_forward(&x, &[1.0; 2], &[0.0; 2], eps).unwrap();
        let factor = 1.0 / (1.0 + eps).sqrt();
        for (o, i) in r.out.data().iter().zip(x.data()) {
            assert!((o - i * factor).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_uses_running_stats() {
        let x = Tensor4::<f64>::full(1, 1, 2, 2, 3.0);
        let y = bn2d_eval_forward(&x, &[2.0], &[0.5], &[1.0], &[4.0], 0.0).unwrap();
        // (3-1)/2 * 2 + 0.5
        for &v in y.data() {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn running_stats_blend_with_momentum() {
        let mut rm = vec![0.0f64];
        let mut rv = vec![1.0f64];
        update_running_stats(&mut rm, &mut rv, &[10.0], &[4.0], 5, 0.1);
        assert!((rm[0] - 1.0).abs() < 1e-12);
        assert!((rv[0] - (0.9 + 0.1 * 4.0 * 5.0 / 4.0)).abs() < 1e-12);
    }
}
