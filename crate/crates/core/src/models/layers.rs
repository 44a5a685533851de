use burn::module::Param;
use burn::nn::conv::{Conv2d, Conv2dConfig};
use burn::nn::{BatchNorm, BatchNormConfig, Initializer, Linear, LinearConfig, PaddingConfig2d};
use burn::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::from_f32;

/// Seeded parameter initializer following the usual uniform fan-in scheme:
/// weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
/// normalization scale 1 and shift 0.
pub(crate) struct Init<'a, B: Backend> {
    pub rng: ChaCha8Rng,
    pub device: &'a B::Device,
}

impl<B: Backend> Init<'_, B> {
    fn uniform<const D: usize>(&mut self, shape: [usize; D], bound: f64) -> Tensor<B, D> {
        let n = shape.iter().product();
        let values = (0..n)
            .map(|_| self.rng.random_range(-bound..bound) as f32)
            .collect();
        from_f32(values, shape, self.device)
    }

    /// 2-D convolution; `groups` splits the input channels.
    pub fn conv(
        &mut self,
        channels: [usize; 2],
        kernel: [usize; 2],
        groups: usize,
        padding: [usize; 2],
        bias: bool,
    ) -> Conv2d<B> {
        let [c_in, c_out] = channels;
        let mut conv = Conv2dConfig::new(channels, kernel)
            .with_groups(groups)
            .with_padding(PaddingConfig2d::Explicit(padding[0], padding[1]))
            .with_bias(bias)
            .with_initializer(Initializer::Zeros)
            .init(self.device);
        let fan_in = c_in / groups * kernel[0] * kernel[1];
        let bound = 1.0 / (fan_in as f64).sqrt();
        conv.weight = Param::from_tensor(self.uniform([c_out, c_in / groups, kernel[0], kernel[1]], bound));
        if bias {
            conv.bias = Some(Param::from_tensor(self.uniform([c_out], bound)));
        }
        conv
    }

    pub fn linear(&mut self, d_in: usize, d_out: usize) -> Linear<B> {
        let mut lin = LinearConfig::new(d_in, d_out)
            .with_initializer(Initializer::Zeros)
            .init(self.device);
        let bound = 1.0 / (d_in as f64).sqrt();
        lin.weight = Param::from_tensor(self.uniform([d_in, d_out], bound));
        lin.bias = Some(Param::from_tensor(self.uniform([d_out], bound)));
        lin
    }

    pub fn batch_norm(&mut self, n: usize) -> BatchNorm<B, 2> {
        BatchNormConfig::new(n).init(self.device)
    }
}

pub(crate) fn conv_params<B: Backend>(c: &Conv2d<B>) -> usize {
    c.weight.val().shape().num_elements() + c.bias.as_ref().map_or(0, |b| b.val().shape().num_elements())
}

pub(crate) fn bn_params<B: Backend>(bn: &BatchNorm<B, 2>) -> usize {
    bn.gamma.val().shape().num_elements() + bn.beta.val().shape().num_elements()
}

pub(crate) fn linear_params<B: Backend>(l: &Linear<B>) -> usize {
    l.weight.val().shape().num_elements() + l.bias.as_ref().map_or(0, |b| b.val().shape().num_elements())
}

/// Inverted dropout driven by the caller's RNG; identity when `rng` is `None`.
pub(crate) fn dropout<B: Backend, const D: usize>(
    x: Tensor<B, D>,
    p: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Tensor<B, D> {
    let Some(rng) = rng else { return x };
    if p <= 0.0 {
        return x;
    }
    let dims = x.dims();
    let n = dims.iter().product();
    let keep = (1.0 / (1.0 - p)) as f32;
    let mask = (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let mask = from_f32::<B, D>(mask, dims, &x.device());
    x * mask
}

pub(crate) fn elu<B: Backend, const D: usize>(x: Tensor<B, D>) -> Tensor<B, D> {
    x.clone().clamp_min(0.0) + x.clamp_max(0.0).exp().sub_scalar(1.0)
}

/// `log(max(x, 1e-6))`, the power-feature nonlinearity.
pub(crate) fn safe_log<B: Backend, const D: usize>(x: Tensor<B, D>) -> Tensor<B, D> {
    x.clamp_min(1e-6).log()
}
