//! Finite-difference verification of the reverse-mode kernels.
//!
//! A target is a differentiable computation exposed as two closures over
//! a flat coordinate vector (inputs followed by parameters): `eval` maps
//! coordinates to the output tensor, `backward` returns the gradient of
//! `sum(projection * output)` with respect to every coordinate. The
//! checker draws a seeded random projection, compares the reverse-mode
//! gradient against central differences coordinate by coordinate, and
//! reports the maximum relative error with denominator
//! max(|analytic|, |numeric|, 1).
//!
//! Above 10^4 coordinates a seeded random subsample of 4096 coordinates
//! is checked.

use rand::prelude::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub const SUBSAMPLE_THRESHOLD: usize = 10_000;
pub const SUBSAMPLE_SIZE: usize = 4096;

pub struct GradCheckTarget<'a> {
    pub name: String,
    pub eval: Box<dyn FnMut(&[f64]) -> Result<Tensor4<f64>> + 'a>,
    pub backward: Box<dyn FnMut(&[f64], &Tensor4<f64>) -> Result<Vec<f64>> + 'a>,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub total_coords: usize,
}

fn require_finite(name: &str, what: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::NonFinite {
            op: name.to_string(),
            what: format!("{what} is {v}"),
        });
    }
    Ok(())
}

/// Compares the reverse-mode gradient of a random scalar projection of
/// the target against central finite differences at `point`.
pub fn grad_check(
    mut target: GradCheckTarget,
    point: &[f64],
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out0 = (target.eval)(point)?;
    out0.check_finite(&target.name)?;

    let proj_data: Vec<f64> = (0..out0.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let s = out0.shape();
    let proj = Tensor4::from_vec(s.n, s.c, s.h, s.w, proj_data)?;

    let analytic = (target.backward)(point, &proj)?;
    if analytic.len() != point.len() {
        return Err(Error::shape(
            "grad_check",
            format!("{} gradient coordinates", point.len()),
            analytic.len(),
        ));
    }
    for (i, &g) in analytic.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::NonFinite {
                op: target.name.clone(),
                what: format!("analytic gradient coordinate {i} is {g}"),
            });
        }
    }

    let total = point.len();
    let coords: Vec<usize> = if total <= SUBSAMPLE_THRESHOLD {
        (0..total).collect()
    } else {
        let mut all: Vec<usize> = (0..total).collect();
        all.shuffle(&mut rng);
        all.truncate(SUBSAMPLE_SIZE);
        all
    };

    let mut scratch = point.to_vec();
    let project = |out: &Tensor4<f64>| -> f64 {
        out.data()
            .iter()
            .zip(proj.data())
            .map(|(&o, &p)| o * p)
            .sum()
    };

    let mut max_rel = 0.0f64;
    for &j in &coords {
        let orig = scratch[j];
        scratch[j] = orig + eps;
        let s_plus = project(&(target.eval)(&scratch)?);
        scratch[j] = orig - eps;
        let s_minus = project(&(target.eval)(&scratch)?);
        scratch[j] = orig;
        require_finite(&target.name, "finite-difference sample", s_plus)?;
        require_finite(&target.name, "finite-difference sample", s_minus)?;
        let numeric = (s_plus - s_minus) / (2.0 * eps);
        let a = analytic[j];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        if rel > max_rel {
            max_rel = rel;
        }
    }

    Ok(GradCheckReport {
        name: target.name,
        max_rel_err: max_rel,
        coords_checked: coords.len(),
        total_coords: total,
    })
}
