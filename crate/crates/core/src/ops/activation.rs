//! ReLU and the stacked two-way channel softmax used by the attention
//! fusion. The softmax subtracts the pairwise max before exponentiating,
//! so arbitrarily large inputs cannot overflow.

use crate::error::{Error, Result};
use crate::tensor::{ChannelBatch, Scalar, Tensor4};

pub fn relu_forward<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient at exactly 0 is 0.
pub fn relu_backward<T: Scalar>(input: &Tensor4<T>, grad_out: &Tensor4<T>) -> Tensor4<T> {
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(input.data()) {
        if xv <= T::zero() {
            *gv = T::zero();
        }
    }
    g
}

pub fn relu_batch_forward<T: Scalar>(input: &ChannelBatch<T>) -> ChannelBatch<T> {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    out
}

pub fn relu_batch_backward<T: Scalar>(
    input: &ChannelBatch<T>,
    grad_out: &ChannelBatch<T>,
) -> ChannelBatch<T> {
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(input.data()) {
        if xv <= T::zero() {
            *gv = T::zero();
        }
    }
    g
}

/// Two-way softmax per (sample, channel) over the stacked pair (a, b).
/// Outputs sum to 1 per channel.
pub fn softmax_pair_forward<T: Scalar>(
    a: &ChannelBatch<T>,
    b: &ChannelBatch<T>,
) -> Result<(ChannelBatch<T>, ChannelBatch<T>)> {
    if a.n != b.n || a.c != b.c {
        return Err(Error::shape(
            "softmax_pair",
            format!("({},{})", a.n, a.c),
            format!("({},{})", b.n, b.c),
        ));
    }
    let mut pa = ChannelBatch::zeros(a.n, a.c);
    let mut pb = ChannelBatch::zeros(a.n, a.c);
    for ((&av, &bv), (qa, qb)) in a
        .data()
        .iter()
        .zip(b.data())
        .zip(pa.data_mut().iter_mut().zip(pb.data_mut().iter_mut()))
    {
        let m = if av > bv { av } else { bv };
        let ea = (av - m).exp();
        let eb = (bv - m).exp();
        let z = ea + eb;
        *qa = ea / z;
        *qb = eb / z;
    }
    Ok((pa, pb))
}

/// VJP of the pairwise softmax: with p = softmax(a, b).0,
/// da = (ga - gb) * p * (1 - p) and db = -da.
pub fn softmax_pair_backward<T: Scalar>(
    pa: &ChannelBatch<T>,
    pb: &ChannelBatch<T>,
    grad_a: &ChannelBatch<T>,
    grad_b: &ChannelBatch<T>,
) -> (ChannelBatch<T>, ChannelBatch<T>) {
    let mut da = ChannelBatch::zeros(pa.n, pa.c);
    let mut db = ChannelBatch::zeros(pa.n, pa.c);
    for i in 0..pa.data().len() {
        let p = pa.data()[i];
        let q = pb.data()[i];
        let d = (grad_a.data()[i] - grad_b.data()[i]) * p * q;
        da.data_mut()[i] = d;
        db.data_mut()[i] = -d;
    }
    (da, db)
}

/// Numerically stable softmax across the channel axis at every pixel;
/// forward only (evaluation-time class probabilities).
pub fn softmax_channels<T: Scalar>(logits: &Tensor4<T>) -> Tensor4<T> {
    let (n, c, h, w) = (logits.n(), logits.c(), logits.h(), logits.w());
    let hw = h * w;
    let mut out = Tensor4::zeros(n, c, h, w);
    for bi in 0..n {
        for p in 0..hw {
            let mut m = logits.plane(bi, 0)[p];
            for ch in 1..c {
                let v = logits.plane(bi, ch)[p];
                if v > m {
                    m = v;
                }
            }
            let mut z = T::zero();
            for ch in 0..c {
                z = z + (logits.plane(bi, ch)[p] - m).exp();
            }
            for ch in 0..c {
                out.plane_mut(bi, ch)[p] = (logits.plane(bi, ch)[p] - m).exp() / z;
            }
        }
    }
    out
}
