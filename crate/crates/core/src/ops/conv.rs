//! Direct 2-D cross-correlation with zero padding, plus its exact
//! vector-Jacobian products. The inner loops run over contiguous output
//! rows so the compiler can vectorize them; parallelism is over disjoint
//! (batch, channel) planes, so results are independent of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{ChannelVec, Scalar, Tensor4};

pub struct ConvGrads<T> {
    pub input: Tensor4<T>,
    pub weight: Tensor4<T>,
    pub bias: Option<ChannelVec<T>>,
}

/// Output spatial extent: floor((extent + 2*pad - k) / stride) + 1.
fn out_extent(extent: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = extent + 2 * pad;
    if padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

fn check_geometry<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: Option<&ChannelVec<T>>,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize)> {
    let (c_out, c_in, kh, kw) = (weight.n(), weight.c(), weight.h(), weight.w());
    if kh != kw || kh % 2 == 0 {
        return Err(Error::geometry(
            "conv2d",
            format!("kernel must be square with odd extent, got {kh}x{kw}"),
        ));
    }
    if input.c() != c_in {
        return Err(Error::shape(
            "conv2d",
            format!("input channels {c_in} for weight {}", weight.shape()),
            format!("input {}", input.shape()),
        ));
    }
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::shape("conv2d", format!("bias length {c_out}"), b.len()));
        }
    }
    if stride == 0 {
        return Err(Error::geometry("conv2d", "stride must be positive"));
    }
    let oh = out_extent(input.h(), kh, stride, pad);
    let ow = out_extent(input.w(), kw, stride, pad);
    match (oh, ow) {
        (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok((oh, ow)),
        _ => Err(Error::geometry(
            "conv2d",
            format!(
                "zero-sized output for input {} kernel {kh} stride {stride} pad {pad}",
                input.shape()
            ),
        )),
    }
}

/// Valid output-column range for a given kernel column: every ox with
/// 0 <= ox*stride + kx - pad < w. Returns (ox_lo, ox_hi_exclusive).
#[inline]
fn ox_range(w: usize, ow: usize, kx: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if kx >= pad {
        0
    } else {
        (pad - kx).div_ceil(stride)
    };
    let hi = if w + pad > kx {
        ((w + pad - kx - 1) / stride + 1).min(ow)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Runs `f(plane_index, plane)` over each plane-sized chunk, in parallel
/// when the total work is worth it. Each chunk is written by exactly one
/// invocation, and every output element has a fixed reduction order, so
/// results do not depend on the thread count.
fn for_each_plane<T: Send, F>(data: &mut [T], plane: usize, work: usize, f: F)
where
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    const PAR_THRESHOLD: usize = 32_768;
    if work >= PAR_THRESHOLD && data.len() > plane {
        data.par_chunks_mut(plane)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
    } else {
        for (i, chunk) in data.chunks_mut(plane).enumerate() {
            f(i, chunk);
        }
    }
}

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: Option<&ChannelVec<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor4<T>> {
    let (oh, ow) = check_geometry(input, weight, bias, stride, pad)?;
    let (n, c_in, h, w) = (input.n(), input.c(), input.h(), input.w());
    let (c_out, k) = (weight.n(), weight.h());
    let mut out = Tensor4::zeros(n, c_out, oh, ow);
    let work = n * c_out * oh * ow * c_in * k * k;
    let out_plane = oh * ow;

    for_each_plane(out.data_mut(), out_plane, work, |idx, out_plane| {
        let bi = idx / c_out;
        let co = idx % c_out;
        for ci in 0..c_in {
            let in_plane = input.plane(bi, ci);
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight.at(co, ci, ky, kx);
                    let (ox_lo, ox_hi) = ox_range(w, ow, kx, stride, pad);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = &in_plane[iy as usize * w..iy as usize * w + w];
                        let out_row = &mut out_plane[oy * ow..oy * ow + ow];
                        let ix0 = ox_lo * stride + kx - pad;
                        if stride == 1 {
                            let src = &in_row[ix0..ix0 + (ox_hi - ox_lo)];
                            for (o, &s) in out_row[ox_lo..ox_hi].iter_mut().zip(src) {
                                *o = *o + wv * s;
                            }
                        } else {
                            let mut ix = ix0;
                            for o in out_row[ox_lo..ox_hi].iter_mut() {
                                *o = *o + wv * in_row[ix];
                                ix += stride;
                            }
                        }
                    }
                }
            }
        }
        if let Some(b) = bias {
            let bv = b.data()[co];
            for o in out_plane.iter_mut() {
                *o = *o + bv;
            }
        }
    });
    Ok(out)
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    has_bias: bool,
    stride: usize,
    pad: usize,
    grad_out: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    let (oh, ow) = check_geometry(input, weight, None, stride, pad)?;
    let (n, c_in, h, w) = (input.n(), input.c(), input.h(), input.w());
    let (c_out, k) = (weight.n(), weight.h());
    if grad_out.shape() != crate::tensor::Shape4::new(n, c_out, oh, ow) {
        return Err(Error::shape(
            "conv2d backward",
            format!("({n},{c_out},{oh},{ow})"),
            grad_out.shape(),
        ));
    }

    let work = n * c_out * oh * ow * c_in * k * k;

    // d/d input: scatter grad_out through the kernel; one (batch, c_in)
    // plane per task.
    let mut grad_input = Tensor4::zeros(n, c_in, h, w);
    let in_plane_len = h * w;
    for_each_plane(grad_input.data_mut(), in_plane_len, work, |idx, gi_plane| {
        let bi = idx / c_in;
        let ci = idx % c_in;
        for co in 0..c_out {
            let go_plane = grad_out.plane(bi, co);
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight.at(co, ci, ky, kx);
                    let (ox_lo, ox_hi) = ox_range(w, ow, kx, stride, pad);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let gi_row = &mut gi_plane[iy as usize * w..iy as usize * w + w];
                        let go_row = &go_plane[oy * ow..oy * ow + ow];
                        let ix0 = ox_lo * stride + kx - pad;
                        if stride == 1 {
                            let dst = &mut gi_row[ix0..ix0 + (ox_hi - ox_lo)];
                            for (d, &g) in dst.iter_mut().zip(&go_row[ox_lo..ox_hi]) {
                                *d = *d + wv * g;
                            }
                        } else {
                            let mut ix = ix0;
                            for &g in go_row[ox_lo..ox_hi].iter() {
                                gi_row[ix] = gi_row[ix] + wv * g;
                                ix += stride;
                            }
                        }
                    }
                }
            }
        }
    });

    // d/d weight: one c_out slab per task.
    let mut grad_weight = Tensor4::zeros(c_out, c_in, k, k);
    let w_plane_len = c_in * k * k;
    for_each_plane(grad_weight.data_mut(), w_plane_len, work, |co, gw_slab| {
        for bi in 0..n {
            let go_plane = grad_out.plane(bi, co);
            for ci in 0..c_in {
                let in_plane = input.plane(bi, ci);
                for ky in 0..k {
                    for kx in 0..k {
                        let (ox_lo, ox_hi) = ox_range(w, ow, kx, stride, pad);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let mut acc = T::zero();
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let in_row = &in_plane[iy as usize * w..iy as usize * w + w];
                            let go_row = &go_plane[oy * ow..oy * ow + ow];
                            let ix0 = ox_lo * stride + kx - pad;
                            if stride == 1 {
                                let src = &in_row[ix0..ix0 + (ox_hi - ox_lo)];
                                for (&g, &s) in go_row[ox_lo..ox_hi].iter().zip(src) {
                                    acc = acc + g * s;
                                }
                            } else {
                                let mut ix = ix0;
                                for &g in go_row[ox_lo..ox_hi].iter() {
                                    acc = acc + g * in_row[ix];
                                    ix += stride;
                                }
                            }
                        }
                        let slot = &mut gw_slab[(ci * k + ky) * k + kx];
                        *slot = *slot + acc;
                    }
                }
            }
        }
    });

    let grad_bias = if has_bias {
        let mut gb = ChannelVec::zeros(c_out);
        for co in 0..c_out {
            let mut acc = T::zero();
            for bi in 0..n {
                for &g in grad_out.plane(bi, co) {
                    acc = acc + g;
                }
            }
            gb.data_mut()[co] = acc;
        }
        Some(gb)
    } else {
        None
    };

    Ok(ConvGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}
