//! Shorted pyramid fusion: an entry 1x1 conv-bn-relu squeezes the input
//! to the working width c, three branches pool onto 2x2 / 4x4 / 8x8
//! grids, run a 1x1 conv-bn-relu at width floor(c/3) and resize back,
//! everything is concatenated with the entry map and a final 1x1
//! conv-bn-relu reduces back to c. Output spatial size equals the input
//! spatial size for any input, including maps smaller than the grids.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::ConvBNReLU;
use crate::ops::{self, Mode};
use crate::params::{with_prefix, HasParams, Param};
use crate::tensor::{Scalar, Tensor4};

pub const SPFM_GRIDS: [usize; 3] = [2, 4, 8];

pub struct Spfm<T> {
    entry: ConvBNReLU<T>,
    branches: Vec<ConvBNReLU<T>>,
    exit: ConvBNReLU<T>,
    branch_width: usize,
    cached_spatial: Option<(usize, usize)>,
}

impl<T: Scalar> Spfm<T> {
    pub fn new(c_in: usize, c: usize, rng: &mut ChaCha8Rng) -> Spfm<T> {
        let branch_width = (c / 3).max(1);
        let entry = ConvBNReLU::new(c_in, c, 1, 1, rng);
        let branches = SPFM_GRIDS
            .iter()
            .map(|_| ConvBNReLU::new(c, branch_width, 1, 1, rng))
            .collect();
        let exit = ConvBNReLU::new(c + SPFM_GRIDS.len() * branch_width, c, 1, 1, rng);
        Spfm {
            entry,
            branches,
            exit,
            branch_width,
            cached_spatial: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.exit.out_channels()
    }

    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let (a, b) = (x.h(), x.w());
        let e = self.entry.forward(x, mode)?;
        let mut maps: Vec<Tensor4<T>> = vec![e.clone()];
        for (gi, &grid) in SPFM_GRIDS.iter().enumerate() {
            let pooled = ops::adaptive_avg_pool_forward(&e, grid)?;
            let conved = self.branches[gi].forward(&pooled, mode)?;
            maps.push(ops::bilinear_resize_forward(&conved, a, b)?);
        }
        let refs: Vec<&Tensor4<T>> = maps.iter().collect();
        let cat = ops::concat_channels(&refs)?;
        self.cached_spatial = (mode == Mode::Train).then_some((a, b));
        self.exit.forward(&cat, mode)
    }

    /// Returns grad with respect to the block input.
    pub fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (a, b) = self
            .cached_spatial
            .expect("spfm backward requires a cached train-mode forward");
        let g_cat = self.exit.backward(grad_out)?;
        let c = self.entry.out_channels();
        let mut counts = vec![c];
        counts.extend(SPFM_GRIDS.iter().map(|_| self.branch_width));
        let mut parts = ops::concat_channels_backward(&g_cat, &counts);
        let mut g_entry = parts.remove(0);
        for (gi, &grid) in SPFM_GRIDS.iter().enumerate().rev() {
            let g_resized = parts.remove(gi);
            let g_conved = ops::bilinear_resize_backward(grid, grid, &g_resized);
            let g_pooled = self.branches[gi].backward(&g_conved)?;
            let g = ops::adaptive_avg_pool_backward(a, b, &g_pooled);
            g_entry = ops::add(&g_entry, &g)?;
        }
        self.entry.backward(&g_entry)
    }
}

impl<T: Scalar> HasParams<T> for Spfm<T> {
    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut v = with_prefix("entry", self.entry.params_mut());
        for (gi, branch) in self.branches.iter_mut().enumerate() {
            v.extend(with_prefix(&format!("branch{}", SPFM_GRIDS[gi]), branch.params_mut()));
        }
        v.extend(with_prefix("exit", self.exit.params_mut()));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn output_shape_matches_input_spatial_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (a, b) in [(1usize, 1usize), (3, 5), (9, 9), (16, 12)] {
            let mut spfm = Spfm::<f64>::new(16, 8, &mut rng);
            let x = Tensor4::full(2, 16, a, b, 0.3);
            let y = spfm.forward(&x, Mode::Train).unwrap();
            assert_eq!(y.shape(), crate::tensor::Shape4::new(2, 8, a, b));
        }
    }

    #[test]
    fn concat_width_is_c_plus_three_branches() {
        // c = 128: branch width 42, concatenation width 254
        let spfm = Spfm::<f32>::new(512, 128, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(spfm.branch_width, 42);
        assert_eq!(spfm.exit.conv.weight.value.c(), 128 + 3 * 42);
        assert_eq!(spfm.out_channels(), 128);
    }

    #[test]
    fn constant_input_yields_spatially_constant_branch_contributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut spfm = Spfm::<f64>::new(4, 6, &mut rng);
        let x = Tensor4::full(1, 4, 7, 7, 1.25);
        let e = spfm.entry.forward(&x, Mode::Train).unwrap();
        for (gi, &grid) in SPFM_GRIDS.iter().enumerate() {
            let pooled = ops::adaptive_avg_pool_forward(&e, grid).unwrap();
            let conved = spfm.branches[gi].forward(&pooled, Mode::Train).unwrap();
            let resized = ops::bilinear_resize_forward(&conved, 7, 7).unwrap();
            for ch in 0..resized.c() {
                let p = resized.plane(0, ch);
                for &v in p {
                    assert!((v - p[0]).abs() < 1e-12, "grid {grid} channel {ch}");
                }
            }
        }
        // and the full block output is spatially constant too
        let y = spfm.forward(&x, Mode::Train).unwrap();
        for ch in 0..y.c() {
            let p = y.plane(0, ch);
            for &v in p {
                assert!((v - p[0]).abs() < 1e-12);
            }
        }
    }
}
