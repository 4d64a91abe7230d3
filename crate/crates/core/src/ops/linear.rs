//! Affine map over a batch of channel descriptors. The weight is
//! (c_out, c_in) row-major.

use crate::error::{Error, Result};
use crate::tensor::{ChannelBatch, Scalar};

pub fn linear_forward<T: Scalar>(
    input: &ChannelBatch<T>,
    weight: &[T],
    c_out: usize,
    bias: Option<&[T]>,
) -> Result<ChannelBatch<T>> {
    let c_in = input.c;
    if weight.len() != c_out * c_in {
        return Err(Error::shape(
            "linear",
            format!("weight ({c_out},{c_in})"),
            weight.len(),
        ));
    }
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::shape("linear", format!("bias length {c_out}"), b.len()));
        }
    }
    let mut out = ChannelBatch::zeros(input.n, c_out);
    for bi in 0..input.n {
        let x = input.row(bi);
        let y = out.row_mut(bi);
        for (o, yo) in y.iter_mut().enumerate() {
            let wrow = &weight[o * c_in..(o + 1) * c_in];
            let mut acc = T::zero();
            for (&wv, &xv) in wrow.iter().zip(x) {
                acc = acc + wv * xv;
            }
            if let Some(b) = bias {
                acc = acc + b[o];
            }
            *yo = acc;
        }
    }
    Ok(out)
}

pub struct LinearGrads<T> {
    pub input: ChannelBatch<T>,
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

pub fn linear_backward<T: Scalar>(
    input: &ChannelBatch<T>,
    weight: &[T],
    c_out: usize,
    has_bias: bool,
    grad_out: &ChannelBatch<T>,
) -> Result<LinearGrads<T>> {
    let c_in = input.c;
    if grad_out.n != input.n || grad_out.c != c_out {
        return Err(Error::shape(
            "linear backward",
            format!("({},{c_out})", input.n),
            format!("({},{})", grad_out.n, grad_out.c),
        ));
    }
    let mut grad_in = ChannelBatch::zeros(input.n, c_in);
    let mut grad_w = vec![T::zero(); c_out * c_in];
    let mut grad_b = if has_bias {
        Some(vec![T::zero(); c_out])
    } else {
        None
    };
    for bi in 0..input.n {
        let x = input.row(bi);
        let go = grad_out.row(bi);
        let gi = grad_in.row_mut(bi);
        for o in 0..c_out {
            let g = go[o];
            let wrow = &weight[o * c_in..(o + 1) * c_in];
            let gwrow = &mut grad_w[o * c_in..(o + 1) * c_in];
            for i in 0..c_in {
                gi[i] = gi[i] + g * wrow[i];
                gwrow[i] = gwrow[i] + g * x[i];
            }
            if let Some(gb) = grad_b.as_mut() {
                gb[o] = gb[o] + g;
            }
        }
    }
    Ok(LinearGrads {
        input: grad_in,
        weight: grad_w,
        bias: grad_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_zero_bias_is_identity() {
        let x = ChannelBatch::from_vec(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]).unwrap();
        let mut w = vec![0.0f64; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let y = linear_forward(&x, &w, 3, Some(&[0.0, 0.0, 0.0])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weight_returns_bias() {
        let x = ChannelBatch::from_vec(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let w = vec![0.0f64; 4];
        let y = linear_forward(&x, &w, 2, Some(&[0.25, -0.5])).unwrap();
        assert_eq!(y.row(0), &[0.25, -0.5]);
        assert_eq!(y.row(1), &[0.25, -0.5]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let x = ChannelBatch::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let w = vec![0.0f64; 5];
        assert!(linear_forward(&x, &w, 2, None).is_err());
    }
}
