//! Parameterized layer objects composed from the kernels: convolution,
//! batch norm (2d and 1d), fully connected, and the conv+BN+ReLU block
//! used everywhere in the network. Train-mode forwards cache what the
//! backward pass needs; eval-mode forwards cache nothing.
//!
//! `backward` panics if no train-mode forward has been cached; that is a
//! sequencing bug in the caller, not a runtime condition.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops;
use crate::ops::Mode;
use crate::params::{init_conv_weight, init_linear_weight, with_prefix, HasParams, InitScheme, Param};
use crate::tensor::{ChannelBatch, ChannelVec, Scalar, Tensor4};

pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub pad: usize,
    cached_input: Option<Tensor4<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        with_bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Conv2d<T> {
        Conv2d {
            weight: init_conv_weight(c_out, c_in, k, InitScheme::KaimingFanOut, rng),
            bias: with_bias.then(|| Param::vector(c_out, T::zero(), true)),
            stride,
            pad,
            cached_input: None,
        }
    }

    fn bias_vec(&self) -> Option<ChannelVec<T>> {
        self.bias
            .as_ref()
            .map(|b| ChannelVec::from_vec(b.value.data().to_vec()))
    }

    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let bias = self.bias_vec();
        let out = ops::conv2d_forward(x, &self.weight.value, bias.as_ref(), self.stride, self.pad)?;
        self.cached_input = match mode {
            Mode::Train => Some(x.clone()),
            Mode::Eval => None,
        };
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let x = self
            .cached_input
            .as_ref()
            .expect("conv backward requires a cached train-mode forward");
        let grads = ops::conv2d_backward(
            x,
            &self.weight.value,
            self.bias.is_some(),
            self.stride,
            self.pad,
            grad_out,
        )?;
        for (g, &d) in self
            .weight
            .grad
            .data_mut()
            .iter_mut()
            .zip(grads.weight.data())
        {
            *g = *g + d;
        }
        if let (Some(b), Some(gb)) = (self.bias.as_mut(), grads.bias) {
            for (g, &d) in b.grad.data_mut().iter_mut().zip(gb.data()) {
                *g = *g + d;
            }
        }
        Ok(grads.input)
    }
}

impl<T: Scalar> HasParams<T> for Conv2d<T> {
    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut v = vec![("weight".to_string(), &mut self.weight)];
        if let Some(b) = self.bias.as_mut() {
            v.push(("bias".to_string(), b));
        }
        v
    }
}

struct Bn2dCache<T> {
    input: Tensor4<T>,
    mean: Vec<T>,
    inv_std: Vec<T>,
}

pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    /// number of train-mode batches folded into the running statistics
    pub batches: Param<T>,
    pub eps: T,
    pub momentum: T,
    cache: Option<Bn2dCache<T>>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(c: usize) -> BatchNorm2d<T> {
        BatchNorm2d {
            gamma: Param::vector(c, T::one(), true),
            beta: Param::vector(c, T::zero(), true),
            running_mean: Param::vector(c, T::zero(), false),
            running_var: Param::vector(c, T::one(), false),
            batches: Param::scalar(T::zero()),
            eps: T::from_f64(BN_EPS),
            momentum: T::from_f64(BN_MOMENTUM),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        match mode {
            Mode::Train => {
                let r = ops::bn2d_train_forward(
                    x,
                    self.gamma.value.data(),
                    self.beta.value.data(),
                    self.eps,
                )?;
                let count = x.n() * x.h() * x.w();
                ops::update_running_stats(
                    self.running_mean.value.data_mut(),
                    self.running_var.value.data_mut(),
                    &r.mean,
                    &r.var,
                    count,
                    self.momentum,
                );
                let b = self.batches.value.data_mut();
                b[0] = b[0] + T::one();
                self.cache = Some(Bn2dCache {
                    input: x.clone(),
                    mean: r.mean,
                    inv_std: r.inv_std,
                });
                Ok(r.out)
            }
            Mode::Eval => {
                if self.batches.value.data()[0] <= T::zero() {
                    return Err(Error::UninitializedStats("batch_norm2d".to_string()));
                }
                ops::bn2d_eval_forward(
                    x,
                    self.gamma.value.data(),
                    self.beta.value.data(),
                    self.running_mean.value.data(),
                    self.running_var.value.data(),
                    self.eps,
                )
            }
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor4<T>) -> Tensor4<T> {
        let c = self
            .cache
            .as_ref()
            .expect("batch norm backward requires a cached train-mode forward");
        let (gi, gg, gb) = ops::bn2d_train_backward(
            &c.input,
            self.gamma.value.data(),
            &c.mean,
            &c.inv_std,
            grad_out,
        );
        for (g, d) in self.gamma.grad.data_mut().iter_mut().zip(gg) {
            *g = *g + d;
        }
        for (g, d) in self.beta.grad.data_mut().iter_mut().zip(gb) {
            *g = *g + d;
        }
        gi
    }
}

impl<T: Scalar> HasParams<T> for BatchNorm2d<T> {
    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        vec![
            ("gamma".to_string(), &mut self.gamma),
            ("beta".to_string(), &mut self.beta),
            ("running_mean".to_string(), &mut self.running_mean),
            ("running_var".to_string(), &mut self.running_var),
            ("batches".to_string(), &mut self.batches),
        ]
    }
}

struct Bn1dCache<T> {
    input: ChannelBatch<T>,
    mean: Vec<T>,
    inv_std: Vec<T>,
}

/// Batch norm over a batch of channel descriptors (per-feature statistics
/// across the batch).
pub struct BatchNorm1d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub batches: Param<T>,
    pub eps: T,
    pub momentum: T,
    cache: Option<Bn1dCache<T>>,
}

impl<T: Scalar> BatchNorm1d<T> {
    pub fn new(c: usize) -> BatchNorm1d<T> {
        BatchNorm1d {
            gamma: Param::vector(c, T::one(), true),
            beta: Param::vector(c, T::zero(), true),
            running_mean: Param::vector(c, T::zero(), false),
            running_var: Param::vector(c, T::one(), false),
            batches: Param::scalar(T::zero()),
            eps: T::from_f64(BN_EPS),
            momentum: T::from_f64(BN_MOMENTUM),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &ChannelBatch<T>, mode: Mode) -> Result<ChannelBatch<T>> {
        match mode {
            Mode::Train => {
                let r = ops::bn1d_train_forward(
                    x,
                    self.gamma.value.data(),
                    self.beta.value.data(),
                    self.eps,
                )?;
                ops::update_running_stats(
                    self.running_mean.value.data_mut(),
                    self.running_var.value.data_mut(),
                    &r.mean,
                    &r.var,
                    x.n,
                    self.momentum,
                );
                let b = self.batches.value.data_mut();
                b[0] = b[0] + T::one();
                self.cache = Some(Bn1dCache {
                    input: x.clone(),
                    mean: r.mean,
                    inv_std: r.inv_std,
                });
                Ok(r.out)
            }
            Mode::Eval => {
                if self.batches.value.data()[0] <= T::zero() {
                    return Err(Error::UninitializedStats("batch_norm1d".to_string()));
                }
                ops::bn1d_eval_forward(
                    x,
                    self.gamma.value.data(),
                    self.beta.value.data(),
                    self.running_mean.value.data(),
                    self.running_var.value.data(),
                    self.eps,
                )
            }
        }
    }

    pub fn backward(&mut self, grad_out: &ChannelBatch<T>) -> ChannelBatch<T> {
        let c = self
            .cache
            .as_ref()
            .expect("batch norm backward requires a cached train-mode forward");
        let (gi, gg, gb) = ops::bn1d_train_backward(
            &c.input,
            self.gamma.value.data(),
            &c.mean,
            &c.inv_std,
            grad_out,
        );
        for (g, d) in self.gamma.grad.data_mut().iter_mut().zip(gg) {
            *g = *g + d;
        }
        for (g, d) in self.beta.grad.data_mut().iter_mut().zip(gb) {
            *g = *g + d;
        }
        gi
    }
}

impl<T: Scalar> HasParams<T> for BatchNorm1d<T> {
    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        vec![
            ("gamma".to_string(), &mut self.gamma),
            ("beta".to_string(), &mut self.beta),
            ("running_mean".to_string(), &mut self.running_mean),
            ("running_var".to_string(), &mut self.running_var),
            ("batches".to_string(), &mut self.batches),
        ]
    }
}

/// Convolution followed by batch norm and ReLU. The conv carries no bias
/// (the BN shift subsumes it); spatial size is preserved at stride 1
/// because pad = k / 2.
pub struct ConvBNReLU<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    cached_pre_relu: Option<Tensor4<T>>,
}

impl<T: Scalar> ConvBNReLU<T> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> ConvBNReLU<T> {
        ConvBNReLU {
            conv: Conv2d::new(c_in, c_out, k, stride, k / 2, false, rng),
            bn: BatchNorm2d::new(c_out),
            cached_pre_relu: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv.weight.value.n()
    }

    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let y = self.conv.forward(x, mode)?;
        let y = self.bn.forward(&y, mode)?;
        let out = ops::relu_forward(&y);
        self.cached_pre_relu = match mode {
            Mode::Train => Some(y),
            Mode::Eval => None,
        };
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let pre = self
            .cached_pre_relu
            .as_ref()
            .expect("conv-bn-relu backward requires a cached train-mode forward");
        let g = ops::relu_backward(pre, grad_out);
        let g = self.bn.backward(&g);
        self.conv.backward(&g)
    }
}

impl<T: Scalar> HasParams<T> for ConvBNReLU<T> {
    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut v = with_prefix("conv", self.conv.params_mut());
        v.extend(with_prefix("bn", self.bn.params_mut()));
        v
    }
}

/// Fully connected layer over descriptor batches; weight (c_out, c_in).
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    cached_input: Option<ChannelBatch<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(c_in: usize, c_out: usize, with_bias: bool, rng: &mut ChaCha8Rng) -> Linear<T> {
        Linear {
            weight: init_linear_weight(c_out, c_in, InitScheme::KaimingFanOut, rng),
            bias: with_bias.then(|| Param::vector(c_out, T::zero(), true)),
            cached_input: None,
        }
    }

    pub fn c_out(&self) -> usize {
        self.weight.value.n()
    }

    pub fn forward(&mut self, x: &ChannelBatch<T>, mode: Mode) -> Result<ChannelBatch<T>> {
        let out = ops::linear_forward(
            x,
            self.weight.value.data(),
            self.c_out(),
            self.bias.as_ref().map(|b| b.value.data()),
        )?;
        self.cached_input = match mode {
            Mode::Train => Some(x.clone()),
            Mode::Eval => None,
        };
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &ChannelBatch<T>) -> Result<ChannelBatch<T>> {
        let x = self
            .cached_input
            .as_ref()
            .expect("linear backward requires a cached train-mode forward");
        let grads = ops::linear_backward(
            x,
            self.weight.value.data(),
            self.c_out(),
            self.bias.is_some(),
            grad_out,
        )?;
        for (g, d) in self.weight.grad.data_mut().iter_mut().zip(grads.weight) {
            *g = *g + d;
        }
        if let (Some(b), Some(gb)) = (self.bias.as_mut(), grads.bias) {
            for (g, d) in b.grad.data_mut().iter_mut().zip(gb) {
                *g = *g + d;
            }
        }
        Ok(grads.input)
    }
}

impl<T: Scalar> HasParams<T> for Linear<T> {
    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut v = vec![("weight".to_string(), &mut self.weight)];
        if let Some(b) = self.bias.as_mut() {
            v.push(("bias".to_string(), b));
        }
        v
    }
}

/// Fully connected layer followed by batch norm and ReLU, over descriptor
/// batches. The FC carries no bias.
pub struct LinearBnReLU<T> {
    pub fc: Linear<T>,
    pub bn: BatchNorm1d<T>,
    cached_pre_relu: Option<ChannelBatch<T>>,
}

impl<T: Scalar> LinearBnReLU<T> {
    pub fn new(c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> LinearBnReLU<T> {
        LinearBnReLU {
            fc: Linear::new(c_in, c_out, false, rng),
            bn: BatchNorm1d::new(c_out),
            cached_pre_relu: None,
        }
    }

    pub fn forward(&mut self, x: &ChannelBatch<T>, mode: Mode) -> Result<ChannelBatch<T>> {
        let y = self.fc.forward(x, mode)?;
        let y = self.bn.forward(&y, mode)?;
        let out = ops::relu_batch_forward(&y);
        self.cached_pre_relu = match mode {
            Mode::Train => Some(y),
            Mode::Eval => None,
        };
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &ChannelBatch<T>) -> Result<ChannelBatch<T>> {
        let pre = self
            .cached_pre_relu
            .as_ref()
            .expect("fc-bn-relu backward requires a cached train-mode forward");
        let g = ops::relu_batch_backward(pre, grad_out);
        let g = self.bn.backward(&g);
        self.fc.backward(&g)
    }
}

impl<T: Scalar> HasParams<T> for LinearBnReLU<T> {
    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut v = with_prefix("fc", self.fc.params_mut());
        v.extend(with_prefix("bn", self.bn.params_mut()));
        v
    }
}
