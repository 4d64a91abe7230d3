//! Bilinear resampling with half-pixel source coordinates: destination
//! index d maps to (d + 0.5) * in/out - 0.5, clamped to [0, in-1], then
//! separable linear interpolation. Integer-factor upsampling is the same
//! kernel with out = in * factor. The backward pass scatters the same
//! four weights, so the adjoint is exact.

use crate::error::Result;
use crate::tensor::{Scalar, Tensor4};

/// (low index, high index, fraction toward the high index)
fn axis_table<T: Scalar>(in_extent: usize, out_extent: usize) -> Vec<(usize, usize, T)> {
    let scale = in_extent as f64 / out_extent as f64;
    (0..out_extent)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_extent - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_extent - 1);
            (i0, i1, T::from_f64(src - i0 as f64))
        })
        .collect()
}

pub fn bilinear_resize_forward<T: Scalar>(
    input: &Tensor4<T>,
    oh: usize,
    ow: usize,
) -> Result<Tensor4<T>> {
    let (n, c, h, w) = (input.n(), input.c(), input.h(), input.w());
    if oh == 0 || ow == 0 {
        return Err(crate::error::Error::geometry(
            "bilinear_resize",
            "output extents must be >= 1",
        ));
    }
    let ys = axis_table::<T>(h, oh);
    let xs = axis_table::<T>(w, ow);
    let mut out = Tensor4::zeros(n, c, oh, ow);
    for bi in 0..n {
        for ch in 0..c {
            let src = input.plane(bi, ch);
            let dst = out.plane_mut(bi, ch);
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                let row0 = &src[y0 * w..y0 * w + w];
                let row1 = &src[y1 * w..y1 * w + w];
                let drow = &mut dst[oy * ow..oy * ow + ow];
                let wy0 = T::one() - fy;
                for (d, &(x0, x1, fx)) in drow.iter_mut().zip(xs.iter()) {
                    let wx0 = T::one() - fx;
                    let top = row0[x0] * wx0 + row0[x1] * fx;
                    let bot = row1[x0] * wx0 + row1[x1] * fx;
                    *d = top * wy0 + bot * fy;
                }
            }
        }
    }
    Ok(out)
}

pub fn bilinear_upsample_forward<T: Scalar>(input: &Tensor4<T>, factor: usize) -> Result<Tensor4<T>> {
    bilinear_resize_forward(input, input.h() * factor, input.w() * factor)
}

pub fn bilinear_resize_backward<T: Scalar>(
    in_h: usize,
    in_w: usize,
    grad_out: &Tensor4<T>,
) -> Tensor4<T> {
    let (n, c, oh, ow) = (grad_out.n(), grad_out.c(), grad_out.h(), grad_out.w());
    let ys = axis_table::<T>(in_h, oh);
    let xs = axis_table::<T>(in_w, ow);
    let mut grad_in = Tensor4::zeros(n, c, in_h, in_w);
    for bi in 0..n {
        for ch in 0..c {
            let go = grad_out.plane(bi, ch);
            let gi = grad_in.plane_mut(bi, ch);
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                let wy0 = T::one() - fy;
                let grow = &go[oy * ow..oy * ow + ow];
                for (&g, &(x0, x1, fx)) in grow.iter().zip(xs.iter()) {
                    let wx0 = T::one() - fx;
                    gi[y0 * in_w + x0] = gi[y0 * in_w + x0] + g * wy0 * wx0;
                    gi[y0 * in_w + x1] = gi[y0 * in_w + x1] + g * wy0 * fx;
                    gi[y1 * in_w + x0] = gi[y1 * in_w + x0] + g * fy * wx0;
                    gi[y1 * in_w + x1] = gi[y1 * in_w + x1] + g * fy * fx;
                }
            }
        }
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_stays_constant() {
        let x = Tensor4::<f64>::full(1, 2, 3, 5, 4.25);
        let y = bilinear_resize_forward(&x, 7, 11).unwrap();
        for &v in y.data() {
            assert_eq!(v, 4.25);
        }
    }

    #[test]
    fn factor_two_corners_clamp_to_input_corners() {
        let x = Tensor4::<f64>::from_vec(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = bilinear_upsample_forward(&x, 2).unwrap();
        assert_eq!(y.at(0, 0, 0, 0), 1.0);
        assert_eq!(y.at(0, 0, 0, 3), 2.0);
        assert_eq!(y.at(0, 0, 3, 0), 3.0);
        assert_eq!(y.at(0, 0, 3, 3), 4.0);
    }

    #[test]
    fn factor_two_matches_scalar_coordinate_formula() {
        let x = Tensor4::<f64>::from_vec(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = bilinear_upsample_forward(&x, 2).unwrap();
        // direct evaluation of src = (d + 0.5)/2 - 0.5 clamped
        let at = |r: f64, c: f64| -> f64 {
            let y0 = r.floor() as usize;
            let y1 = (y0 + 1).min(1);
            let x0 = c.floor() as usize;
            let x1 = (x0 + 1).min(1);
            let fy = r - y0 as f64;
            let fx = c - x0 as f64;
            let v = |yy: usize, xx: usize| x.at(0, 0, yy, xx);
            (v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx) * (1.0 - fy)
                + (v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx) * fy
        };
        for d_r in 0..4 {
            for d_c in 0..4 {
                let sr = ((d_r as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 1.0);
                let sc = ((d_c as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 1.0);
                let expect = at(sr, sc);
                let got = y.at(0, 0, d_r, d_c);
                assert!((got - expect).abs() < 1e-15, "({d_r},{d_c}): {got} vs {expect}");
            }
        }
    }

    #[test]
    fn output_bounded_by_input_range() {
        let x = Tensor4::<f64>::from_vec(
            1,
            1,
            4,
            4,
            (0..16).map(|i| ((i * 37 % 11) as f64) - 5.0).collect(),
        )
        .unwrap();
        let (lo, hi) = x
            .data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                (l.min(v), h.max(v))
            });
        for &(oh, ow) in &[(3usize, 9usize), (8, 8), (13, 2)] {
            let y = bilinear_resize_forward(&x, oh, ow).unwrap();
            for &v in y.data() {
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }
}
