//! Named parameter slots with matching gradient accumulators.
//!
//! Every slot is stored as a rank-4 tensor: conv kernels natively, fully
//! connected weights as (c_out, c_in, 1, 1), per-channel vectors as
//! (1, c, 1, 1) and scalar counters as (1, 1, 1, 1). Running statistics
//! and counters are non-trainable, so the optimizer never touches them.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Scalar, Tensor4};

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Tensor4<T>,
    pub grad: Tensor4<T>,
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor4<T>, trainable: bool) -> Param<T> {
        let s = value.shape();
        Param {
            grad: Tensor4::zeros(s.n, s.c, s.h, s.w),
            value,
            trainable,
        }
    }

    pub fn vector(c: usize, v: T, trainable: bool) -> Param<T> {
        Param::new(Tensor4::full(1, c, 1, 1, v), trainable)
    }

    pub fn scalar(v: T) -> Param<T> {
        Param::new(Tensor4::full(1, 1, 1, 1, v), false)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Scaled normal, std = sqrt(2 / fan_out).
    KaimingFanOut,
    Zeros,
    Ones,
}

/// Draws one standard-normal sample in f64 (Box-Muller over two uniform
/// draws) so f32 and f64 parameters come from the same stream.
fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

/// Initializes a conv kernel (c_out, c_in, k, k); fan_out = c_out * k * k.
pub fn init_conv_weight<T: Scalar>(
    c_out: usize,
    c_in: usize,
    k: usize,
    scheme: InitScheme,
    rng: &mut ChaCha8Rng,
) -> Param<T> {
    let fan_out = (c_out * k * k) as f64;
    Param::new(init_tensor(c_out, c_in, k, k, fan_out, scheme, rng), true)
}

/// Initializes a fully connected weight (c_out, c_in, 1, 1); fan_out = c_out.
pub fn init_linear_weight<T: Scalar>(
    c_out: usize,
    c_in: usize,
    scheme: InitScheme,
    rng: &mut ChaCha8Rng,
) -> Param<T> {
    Param::new(init_tensor(c_out, c_in, 1, 1, c_out as f64, scheme, rng), true)
}

fn init_tensor<T: Scalar>(
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    fan_out: f64,
    scheme: InitScheme,
    rng: &mut ChaCha8Rng,
) -> Tensor4<T> {
    match scheme {
        InitScheme::Zeros => Tensor4::zeros(n, c, h, w),
        InitScheme::Ones => Tensor4::full(n, c, h, w, T::one()),
        InitScheme::KaimingFanOut => {
            let std = (2.0 / fan_out).sqrt();
            let data = (0..n * c * h * w)
                .map(|_| T::from_f64(normal_sample(rng) * std))
                .collect();
            Tensor4::from_vec(n, c, h, w, data).expect("sized by construction")
        }
    }
}

/// Access to every named parameter slot of a layer or model. Paths are
/// dotted and unique; visitation order is the fixed construction order,
/// and consumers that need lexicographic order sort the collected pairs.
pub trait HasParams<T: Scalar> {
    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)>;
}

/// Collects slots sorted lexicographically by path.
pub fn sorted_params_mut<T: Scalar, M: HasParams<T> + ?Sized>(
    model: &mut M,
) -> Vec<(String, &mut Param<T>)> {
    let mut v = model.params_mut();
    v.sort_by(|a, b| a.0.cmp(&b.0));
    v
}

pub fn zero_grads<T: Scalar, M: HasParams<T> + ?Sized>(model: &mut M) {
    for (_, p) in model.params_mut() {
        p.zero_grad();
    }
}

/// Total number of trainable scalar parameters.
pub fn trainable_count<T: Scalar, M: HasParams<T> + ?Sized>(model: &mut M) -> usize {
    model
        .params_mut()
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(_, p)| p.len())
        .sum()
}

/// Prefixes a child layer's parameter paths.
pub fn with_prefix<'a, T: Scalar>(
    prefix: &str,
    child: Vec<(String, &'a mut Param<T>)>,
) -> Vec<(String, &'a mut Param<T>)> {
    child
        .into_iter()
        .map(|(name, p)| (format!("{prefix}.{name}"), p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zeros_scheme_gives_all_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = init_conv_weight::<f64>(4, 2, 3, InitScheme::Zeros, &mut rng);
        assert!(p.value.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_gives_bitwise_identical_params() {
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            init_conv_weight::<f64>(8, 4, 3, InitScheme::KaimingFanOut, &mut rng)
        };
        assert_eq!(draw().value, draw().value);
    }

    #[test]
    fn kaiming_std_matches_fan_out_formula() {
        // 64x3x3x3 kernels, >= 1e4 draws across seeds
        let mut all = Vec::new();
        for seed in 0..8 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = init_conv_weight::<f64>(64, 3, 3, InitScheme::KaimingFanOut, &mut rng);
            all.extend_from_slice(p.value.data());
        }
        assert!(all.len() >= 10_000);
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / all.len() as f64;
        let expect = (2.0f64 / (64.0 * 9.0)).sqrt();
        let got = var.sqrt();
        assert!(
            (got - expect).abs() / expect < 0.10,
            "std {got} vs {expect}"
        );
    }

    #[test]
    fn sorted_params_are_lexicographic() {
        struct Two<T: Scalar> {
            a: Param<T>,
            b: Param<T>,
        }
        impl<T: Scalar> HasParams<T> for Two<T> {
            fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
                vec![
                    ("z.weight".to_string(), &mut self.a),
                    ("a.weight".to_string(), &mut self.b),
                ]
            }
        }
        let mut two = Two::<f64> {
            a: Param::scalar(1.0),
            b: Param::scalar(2.0),
        };
        let names: Vec<String> = sorted_params_mut(&mut two)
            .iter()
            .map(|(n, _)| n.clone())
            .collect();
        assert_eq!(names, vec!["a.weight".to_string(), "z.weight".to_string()]);
    }
}
