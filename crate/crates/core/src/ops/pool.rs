//! Adaptive average pooling onto a k x k grid and global average pooling.
//! Bin i along an extent of size e spans [floor(i*e/k), ceil((i+1)*e/k));
//! when e < k the bins overlap or repeat, so any grid size is valid.

use crate::error::{Error, Result};
use crate::tensor::{ChannelBatch, Scalar, Tensor4};

#[inline]
pub fn bin_bounds(i: usize, extent: usize, k: usize) -> (usize, usize) {
    let lo = i * extent / k;
    let hi = ((i + 1) * extent).div_ceil(k);
    (lo, hi)
}

pub fn adaptive_avg_pool_forward<T: Scalar>(input: &Tensor4<T>, k: usize) -> Result<Tensor4<T>> {
    if k == 0 {
        return Err(Error::geometry("adaptive_avg_pool", "grid must be >= 1"));
    }
    let (n, c, h, w) = (input.n(), input.c(), input.h(), input.w());
    let mut out = Tensor4::zeros(n, c, k, k);
    for bi in 0..n {
        for ch in 0..c {
            let src = input.plane(bi, ch);
            let dst = out.plane_mut(bi, ch);
            for ky in 0..k {
                let (y0, y1) = bin_bounds(ky, h, k);
                for kx in 0..k {
                    let (x0, x1) = bin_bounds(kx, w, k);
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        for x in x0..x1 {
                            acc = acc + src[y * w + x];
                        }
                    }
                    let count = T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                    dst[ky * k + kx] = acc / count;
                }
            }
        }
    }
    Ok(out)
}

pub fn adaptive_avg_pool_backward<T: Scalar>(
    in_h: usize,
    in_w: usize,
    grad_out: &Tensor4<T>,
) -> Tensor4<T> {
    let (n, c, k, _) = (grad_out.n(), grad_out.c(), grad_out.h(), grad_out.w());
    let mut grad_in = Tensor4::zeros(n, c, in_h, in_w);
    for bi in 0..n {
        for ch in 0..c {
            let go = grad_out.plane(bi, ch);
            let gi = grad_in.plane_mut(bi, ch);
            for ky in 0..k {
                let (y0, y1) = bin_bounds(ky, in_h, k);
                for kx in 0..k {
                    let (x0, x1) = bin_bounds(kx, in_w, k);
                    let share =
                        go[ky * k + kx] / T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                    for y in y0..y1 {
                        for x in x0..x1 {
                            gi[y * in_w + x] = gi[y * in_w + x] + share;
                        }
                    }
                }
            }
        }
    }
    grad_in
}

pub fn global_avg_pool_forward<T: Scalar>(input: &Tensor4<T>) -> ChannelBatch<T> {
    let (n, c, h, w) = (input.n(), input.c(), input.h(), input.w());
    let m = T::from_f64((h * w) as f64);
    let mut out = ChannelBatch::zeros(n, c);
    for bi in 0..n {
        for ch in 0..c {
            let mut acc = T::zero();
            for &v in input.plane(bi, ch) {
                acc = acc + v;
            }
            out.row_mut(bi)[ch] = acc / m;
        }
    }
    out
}

pub fn global_avg_pool_backward<T: Scalar>(
    in_h: usize,
    in_w: usize,
    grad_out: &ChannelBatch<T>,
) -> Tensor4<T> {
    let m = T::from_f64((in_h * in_w) as f64);
    let mut grad_in = Tensor4::zeros(grad_out.n, grad_out.c, in_h, in_w);
    for bi in 0..grad_out.n {
        for ch in 0..grad_out.c {
            let share = grad_out.row(bi)[ch] / m;
            for g in grad_in.plane_mut(bi, ch) {
                *g = share;
            }
        }
    }
    grad_in
}
