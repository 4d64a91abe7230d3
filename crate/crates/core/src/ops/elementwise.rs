//! Elementwise addition, channel concatenation and per-channel scaling.

use crate::error::{Error, Result};
use crate::tensor::{ChannelBatch, Scalar, Tensor4};

pub fn add<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("add", a.shape(), b.shape()));
    }
    let mut out = a.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
        *o = *o + v;
    }
    Ok(out)
}

pub fn concat_channels<T: Scalar>(inputs: &[&Tensor4<T>]) -> Result<Tensor4<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::geometry("concat_channels", "empty input list"))?;
    let (n, h, w) = (first.n(), first.h(), first.w());
    let mut c_total = 0;
    for t in inputs {
        if t.n() != n || t.h() != h || t.w() != w {
            return Err(Error::shape(
                "concat_channels",
                format!("batch {n} and spatial {h}x{w}"),
                t.shape(),
            ));
        }
        c_total += t.c();
    }
    let mut out = Tensor4::zeros(n, c_total, h, w);
    for bi in 0..n {
        let mut co = 0;
        for t in inputs {
            for ch in 0..t.c() {
                out.plane_mut(bi, co).copy_from_slice(t.plane(bi, ch));
                co += 1;
            }
        }
    }
    Ok(out)
}

/// Splits a gradient back into the concatenated parts.
pub fn concat_channels_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    channel_counts: &[usize],
) -> Vec<Tensor4<T>> {
    let (n, h, w) = (grad_out.n(), grad_out.h(), grad_out.w());
    let mut parts: Vec<Tensor4<T>> = channel_counts
        .iter()
        .map(|&c| Tensor4::zeros(n, c, h, w))
        .collect();
    for bi in 0..n {
        let mut co = 0;
        for part in parts.iter_mut() {
            for ch in 0..part.c() {
                part.plane_mut(bi, ch).copy_from_slice(grad_out.plane(bi, co));
                co += 1;
            }
        }
    }
    parts
}

/// x[n, c, :, :] * s[n, c]
pub fn scale_channels<T: Scalar>(x: &Tensor4<T>, s: &ChannelBatch<T>) -> Result<Tensor4<T>> {
    if s.n != x.n() || s.c != x.c() {
        return Err(Error::shape(
            "scale_channels",
            format!("({},{})", x.n(), x.c()),
            format!("({},{})", s.n, s.c),
        ));
    }
    let mut out = x.clone();
    for bi in 0..x.n() {
        for ch in 0..x.c() {
            let f = s.row(bi)[ch];
            for v in out.plane_mut(bi, ch) {
                *v = *v * f;
            }
        }
    }
    Ok(out)
}

pub fn scale_channels_backward<T: Scalar>(
    x: &Tensor4<T>,
    s: &ChannelBatch<T>,
    grad_out: &Tensor4<T>,
) -> (Tensor4<T>, ChannelBatch<T>) {
    let mut grad_x = grad_out.clone();
    let mut grad_s = ChannelBatch::zeros(s.n, s.c);
    for bi in 0..x.n() {
        for ch in 0..x.c() {
            let f = s.row(bi)[ch];
            let mut acc = T::zero();
            let xs = x.plane(bi, ch);
            let gs = grad_out.plane(bi, ch);
            for (g, (&xv, &gv)) in grad_x
                .plane_mut(bi, ch)
                .iter_mut()
                .zip(xs.iter().zip(gs))
            {
                acc = acc + gv * xv;
                *g = gv * f;
            }
            grad_s.row_mut(bi)[ch] = acc;
        }
    }
    (grad_x, grad_s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_zero_is_identity() {
        let x = Tensor4::<f64>::from_vec(1, 2, 2, 2, (0..8).map(|i| i as f64).collect()).unwrap();
        let z = Tensor4::<f64>::zeros(1, 2, 2, 2);
        assert_eq!(add(&x, &z).unwrap(), x);
    }

    #[test]
    fn add_rejects_shape_mismatch() {
        let a = Tensor4::<f64>::zeros(1, 2, 2, 2);
        let b = Tensor4::<f64>::zeros(1, 2, 2, 3);
        assert!(add(&a, &b).is_err());
    }

    #[test]
    fn concat_stacks_channel_counts() {
        let a = Tensor4::<f64>::full(2, 3, 4, 5, 1.0);
        let b = Tensor4::<f64>::full(2, 5, 4, 5, 2.0);
        let y = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(y.shape(), crate::tensor::Shape4::new(2, 8, 4, 5));
        assert_eq!(y.at(1, 2, 0, 0), 1.0);
        assert_eq!(y.at(1, 3, 0, 0), 2.0);
    }

    #[test]
    fn concat_backward_splits_exactly() {
        let a = Tensor4::<f64>::full(1, 2, 2, 2, 1.0);
        let b = Tensor4::<f64>::full(1, 1, 2, 2, 2.0);
        let y = concat_channels(&[&a, &b]).unwrap();
        let parts = concat_channels_backward(&y, &[2, 1]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn unit_scale_is_identity() {
        let x = Tensor4::<f64>::from_vec(2, 3, 2, 2, (0..24).map(|i| i as f64).collect()).unwrap();
        let s = ChannelBatch::from_vec(2, 3, vec![1.0; 6]).unwrap();
        assert_eq!(scale_channels(&x, &s).unwrap(), x);
    }
}
