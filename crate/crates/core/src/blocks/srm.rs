//! Selective-resolution fusion of a high-resolution map with a map at
//! exactly half its spatial size:
//!
//!   u   = high + upsample2(low)
//!   s   = relu(bn(W1 * gap(u)))
//!   h,l = W2*s + b2, W3*s + b3
//!   a_h, a_l = softmax over the stacked pair, per channel
//!   out = conv3x3-bn-relu(conv1x1-bn-relu(a_h * high + a_l * upsample2(low)))
//!
//! The attention weights are applied to the upsampled low map (the sum in
//! the fuse stage forces equal spatial sizes). With attention disabled the
//! block degrades to plain addition, exactly; the 1x1 fuse stage can also
//! be dropped. Both switches remove the corresponding parameters.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{ConvBNReLU, Linear, LinearBnReLU};
use crate::ops::{self, Mode};
use crate::params::{with_prefix, HasParams, Param};
use crate::tensor::{ChannelBatch, Scalar, Tensor4};

struct Attention<T> {
    fc: LinearBnReLU<T>,
    lt_high: Linear<T>,
    lt_low: Linear<T>,
}

struct AttnCache<T> {
    high: Tensor4<T>,
    lup: Tensor4<T>,
    attn_high: ChannelBatch<T>,
    attn_low: ChannelBatch<T>,
}

pub struct Srm<T> {
    attention: Option<Attention<T>>,
    fuse1: Option<ConvBNReLU<T>>,
    fuse2: ConvBNReLU<T>,
    cache: Option<Option<AttnCache<T>>>,
    low_spatial: (usize, usize),
}

impl<T: Scalar> Srm<T> {
    pub fn new(
        c: usize,
        attention_enabled: bool,
        fuse_conv1x1_enabled: bool,
        rng: &mut ChaCha8Rng,
    ) -> Srm<T> {
        let attention = attention_enabled.then(|| Attention {
            fc: LinearBnReLU::new(c, c, rng),
            lt_high: Linear::new(c, c, true, rng),
            lt_low: Linear::new(c, c, true, rng),
        });
        let fuse1 = fuse_conv1x1_enabled.then(|| ConvBNReLU::new(c, c, 1, 1, rng));
        Srm {
            attention,
            fuse1,
            fuse2: ConvBNReLU::new(c, c, 3, 1, rng),
            cache: None,
            low_spatial: (0, 0),
        }
    }

    fn check_inputs(high: &Tensor4<T>, low: &Tensor4<T>) -> Result<()> {
        if high.c() != low.c() || high.n() != low.n() {
            return Err(Error::shape(
                "srm",
                format!("matching batch and channels, high {}", high.shape()),
                format!("low {}", low.shape()),
            ));
        }
        if high.h() != 2 * low.h() || high.w() != 2 * low.w() {
            return Err(Error::geometry(
                "srm",
                format!(
                    "low map {} must be exactly half the spatial size of high {}",
                    low.shape(),
                    high.shape()
                ),
            ));
        }
        Ok(())
    }

    /// Per-channel attention over the fused descriptor; returns the pair
    /// of soft weights for (high, low).
    fn attention_weights(
        attn: &mut Attention<T>,
        u: &Tensor4<T>,
        mode: Mode,
    ) -> Result<(ChannelBatch<T>, ChannelBatch<T>)> {
        let g = ops::global_avg_pool_forward(u);
        let s = attn.fc.forward(&g, mode)?;
        let hd = attn.lt_high.forward(&s, mode)?;
        let ld = attn.lt_low.forward(&s, mode)?;
        ops::softmax_pair_forward(&hd, &ld)
    }

    pub fn forward(&mut self, high: &Tensor4<T>, low: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        Self::check_inputs(high, low)?;
        self.low_spatial = (low.h(), low.w());
        let lup = ops::bilinear_upsample_forward(low, 2)?;
        let u = ops::add(high, &lup)?;

        let (fused, attn_cache) = match self.attention.as_mut() {
            Some(attn) => {
                let (a_high, a_low) = Self::attention_weights(attn, &u, mode)?;
                let hp = ops::scale_channels(high, &a_high)?;
                let lp = ops::scale_channels(&lup, &a_low)?;
                (
                    ops::add(&hp, &lp)?,
                    Some(AttnCache {
                        high: high.clone(),
                        lup,
                        attn_high: a_high,
                        attn_low: a_low,
                    }),
                )
            }
            None => (u, None),
        };

        let y = match self.fuse1.as_mut() {
            Some(f1) => {
                let t = f1.forward(&fused, mode)?;
                self.fuse2.forward(&t, mode)?
            }
            None => self.fuse2.forward(&fused, mode)?,
        };
        self.cache = (mode == Mode::Train).then_some(attn_cache);
        Ok(y)
    }

    /// Returns (grad_high, grad_low).
    pub fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<(Tensor4<T>, Tensor4<T>)> {
        let attn_cache = self
            .cache
            .take()
            .expect("srm backward requires a cached train-mode forward");
        let g = self.fuse2.backward(grad_out)?;
        let g_fused = match self.fuse1.as_mut() {
            Some(f1) => f1.backward(&g)?,
            None => g,
        };

        let (g_high, g_lup) = match (self.attention.as_mut(), attn_cache) {
            (Some(attn), Some(cache)) => {
                let (g_high_scale, g_ah) =
                    ops::scale_channels_backward(&cache.high, &cache.attn_high, &g_fused);
                let (g_lup_scale, g_al) =
                    ops::scale_channels_backward(&cache.lup, &cache.attn_low, &g_fused);
                let (g_hd, g_ld) =
                    ops::softmax_pair_backward(&cache.attn_high, &cache.attn_low, &g_ah, &g_al);
                let g_s_h = attn.lt_high.backward(&g_hd)?;
                let g_s_l = attn.lt_low.backward(&g_ld)?;
                let mut g_s = g_s_h;
                for (a, &b) in g_s.data_mut().iter_mut().zip(g_s_l.data()) {
                    *a = *a + b;
                }
                let g_g = attn.fc.backward(&g_s)?;
                let g_u = ops::global_avg_pool_backward(cache.high.h(), cache.high.w(), &g_g);
                (
                    ops::add(&g_high_scale, &g_u)?,
                    ops::add(&g_lup_scale, &g_u)?,
                )
            }
            (None, None) => (g_fused.clone(), g_fused),
            _ => unreachable!("cache matches attention presence"),
        };

        let (lh, lw) = self.low_spatial;
        let g_low = ops::bilinear_resize_backward(lh, lw, &g_lup);
        Ok((g_high, g_low))
    }
}

impl<T: Scalar> HasParams<T> for Srm<T> {
    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut v = Vec::new();
        if let Some(attn) = self.attention.as_mut() {
            v.extend(with_prefix("fc", attn.fc.params_mut()));
            v.extend(with_prefix("lt_high", attn.lt_high.params_mut()));
            v.extend(with_prefix("lt_low", attn.lt_low.params_mut()));
        }
        if let Some(f1) = self.fuse1.as_mut() {
            v.extend(with_prefix("fuse1", f1.params_mut()));
        }
        v.extend(with_prefix("fuse2", self.fuse2.params_mut()));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_map(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor4<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_vec(
            n,
            c,
            h,
            w,
            (0..n * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn rejects_non_double_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut srm = Srm::<f64>::new(4, true, true, &mut rng);
        let high = Tensor4::full(1, 4, 8, 8, 0.0);
        let low = Tensor4::full(1, 4, 3, 4, 0.0);
        assert!(matches!(
            srm.forward(&high, &low, Mode::Train),
            Err(Error::Geometry { .. })
        ));
    }

    #[test]
    fn equal_linear_transforms_give_half_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut srm = Srm::<f64>::new(3, true, true, &mut rng);
        // force W2 == W3 and b2 == b3
        {
            let attn = srm.attention.as_mut().unwrap();
            let w = attn.lt_high.weight.value.clone();
            attn.lt_low.weight.value = w;
            let b = attn.lt_high.bias.as_ref().unwrap().value.clone();
            attn.lt_low.bias.as_mut().unwrap().value = b;
        }
        let high = random_map(2, 3, 8, 8, 2);
        let low = random_map(2, 3, 4, 4, 3);
        srm.forward(&high, &low, Mode::Train).unwrap();
        let cache = srm.cache.as_ref().unwrap().as_ref().unwrap();
        for (&ah, &al) in cache.attn_high.data().iter().zip(cache.attn_low.data()) {
            assert_eq!(ah, 0.5);
            assert_eq!(al, 0.5);
        }
    }

    #[test]
    fn attention_weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut srm = Srm::<f64>::new(6, true, true, &mut rng);
        let high = random_map(2, 6, 8, 8, 5);
        let low = random_map(2, 6, 4, 4, 6);
        srm.forward(&high, &low, Mode::Train).unwrap();
        let cache = srm.cache.as_ref().unwrap().as_ref().unwrap();
        for (&ah, &al) in cache.attn_high.data().iter().zip(cache.attn_low.data()) {
            assert!((ah + al - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn disabled_attention_equals_plain_addition_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut srm = Srm::<f64>::new(4, false, true, &mut rng);
        let high = random_map(1, 4, 8, 8, 8);
        let low = random_map(1, 4, 4, 4, 9);
        let got = srm.forward(&high, &low, Mode::Train).unwrap();

        // oracle: the same kernels composed by hand with the same params
        let lup = ops::bilinear_upsample_forward(&low, 2).unwrap();
        let u = ops::add(&high, &lup).unwrap();
        let t = srm.fuse1.as_mut().unwrap().forward(&u, Mode::Train).unwrap();
        let expect = srm.fuse2.forward(&t, Mode::Train).unwrap();
        assert_eq!(got, expect);
    }

    #[test]
    fn shift_invariance_of_the_pair_softmax() {
        // adding a constant to both descriptors before the softmax leaves
        // the attention unchanged
        let a = ChannelBatch::from_vec(1, 3, vec![0.2, -1.0, 3.0]).unwrap();
        let b = ChannelBatch::from_vec(1, 3, vec![1.5, 0.0, -2.0]).unwrap();
        let (pa, pb) = ops::softmax_pair_forward(&a, &b).unwrap();
        let shift = 17.25f64;
        let mut a2 = a.clone();
        let mut b2 = b.clone();
        for v in a2.data_mut() {
            *v += shift;
        }
        for v in b2.data_mut() {
            *v += shift;
        }
        let (qa, qb) = ops::softmax_pair_forward(&a2, &b2).unwrap();
        for i in 0..3 {
            assert!((pa.data()[i] - qa.data()[i]).abs() < 1e-12);
            assert!((pb.data()[i] - qb.data()[i]).abs() < 1e-12);
        }
    }
}
