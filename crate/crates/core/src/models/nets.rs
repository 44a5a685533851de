use burn::nn::conv::Conv2d;
use burn::nn::{BatchNorm, Linear};
use burn::prelude::*;
use burn::tensor::module::avg_pool2d;
use rand_chacha::ChaCha8Rng;

use super::layers::{bn_params, conv_params, dropout, elu, linear_params, safe_log, Init};
use super::TapSet;

fn pool<B: Backend>(x: Tensor<B, 4>, width: usize, stride: usize) -> Tensor<B, 4> {
    avg_pool2d(x, [1, width], [1, stride], [0, 0], true)
}

fn flatten<B: Backend>(x: Tensor<B, 4>) -> Tensor<B, 2> {
    let [n, c, h, w] = x.dims();
    x.reshape([n, c * h * w])
}

/// Output width of an unpadded pooling stage.
const fn pooled(width: usize, kernel: usize, stride: usize) -> usize {
    if width < kernel { 0 } else { (width - kernel) / stride + 1 }
}

// EEGNet-8,2: temporal conv, depthwise spatial conv, separable conv.
pub(crate) const EEGNET_F1: usize = 8;
pub(crate) const EEGNET_D: usize = 2;
pub(crate) const EEGNET_F2: usize = 16;
const EEGNET_KERNEL: usize = 64;
const EEGNET_SEP_KERNEL: usize = 16;
const EEGNET_DROPOUT: f64 = 0.5;

#[derive(Module, Debug)]
pub struct EegNet<B: Backend> {
    temporal: Conv2d<B>,
    bn1: BatchNorm<B, 2>,
    depthwise: Conv2d<B>,
    bn2: BatchNorm<B, 2>,
    separable_depth: Conv2d<B>,
    separable_point: Conv2d<B>,
    bn3: BatchNorm<B, 2>,
    classifier: Linear<B>,
}

impl<B: Backend> EegNet<B> {
    pub(crate) fn feature_width(n_samples: usize) -> usize {
        let w1 = (n_samples + 1) / 4;
        pooled(w1 + 1, 8, 8)
    }

    pub(crate) fn new(init: &mut Init<B>, n_channels: usize, n_samples: usize, n_classes: usize) -> Self {
        let f1d = EEGNET_F1 * EEGNET_D;
        Self {
            temporal: init.conv([1, EEGNET_F1], [1, EEGNET_KERNEL], 1, [0, EEGNET_KERNEL / 2], false),
            bn1: init.batch_norm(EEGNET_F1),
            depthwise: init.conv([EEGNET_F1, f1d], [n_channels, 1], EEGNET_F1, [0, 0], false),
            bn2: init.batch_norm(f1d),
            separable_depth: init.conv([f1d, f1d], [1, EEGNET_SEP_KERNEL], f1d, [0, EEGNET_SEP_KERNEL / 2], false),
            separable_point: init.conv([f1d, EEGNET_F2], [1, 1], 1, [0, 0], false),
            bn3: init.batch_norm(EEGNET_F2),
            classifier: init.linear(EEGNET_F2 * Self::feature_width(n_samples), n_classes),
        }
    }

    pub(crate) fn trainable(&self) -> usize {
        conv_params(&self.temporal)
            + bn_params(&self.bn1)
            + conv_params(&self.depthwise)
            + bn_params(&self.bn2)
            + conv_params(&self.separable_depth)
            + conv_params(&self.separable_point)
            + bn_params(&self.bn3)
            + linear_params(&self.classifier)
    }

    pub(crate) fn forward(&self, x: Tensor<B, 4>, mut rng: Option<&mut ChaCha8Rng>) -> TapSet<B> {
        let lf1 = self.bn1.forward(self.temporal.forward(x));
        let h = elu(self.bn2.forward(self.depthwise.forward(lf1.clone())));
        let lf2 = pool(h, 4, 4);
        let h = dropout(lf2.clone(), EEGNET_DROPOUT, rng.as_deref_mut());
        let h = self.separable_point.forward(self.separable_depth.forward(h));
        let lf3 = pool(elu(self.bn3.forward(h)), 8, 8);
        let h = dropout(lf3.clone(), EEGNET_DROPOUT, rng.as_deref_mut());
        let logits = self.classifier.forward(flatten(h));
        TapSet { lf1, lf2, lf3, logits }
    }
}

// ShallowConvNet: temporal conv, spatial conv, square, mean pool, log.
pub(crate) const SHALLOW_FILTERS: usize = 40;
const SHALLOW_KERNEL: usize = 13;
const SHALLOW_POOL: usize = 38;
const SHALLOW_STRIDE: usize = 8;
const SHALLOW_DROPOUT: f64 = 0.5;

#[derive(Module, Debug)]
pub struct ShallowConvNet<B: Backend> {
    temporal: Conv2d<B>,
    spatial: Conv2d<B>,
    bn: BatchNorm<B, 2>,
    classifier: Linear<B>,
}

impl<B: Backend> ShallowConvNet<B> {
    pub(crate) fn feature_width(n_samples: usize) -> usize {
        pooled((n_samples + 1).saturating_sub(SHALLOW_KERNEL), SHALLOW_POOL, SHALLOW_STRIDE)
    }

    pub(crate) fn new(init: &mut Init<B>, n_channels: usize, n_samples: usize, n_classes: usize) -> Self {
        Self {
            temporal: init.conv([1, SHALLOW_FILTERS], [1, SHALLOW_KERNEL], 1, [0, 0], true),
            spatial: init.conv([SHALLOW_FILTERS, SHALLOW_FILTERS], [n_channels, 1], 1, [0, 0], false),
            bn: init.batch_norm(SHALLOW_FILTERS),
            classifier: init.linear(SHALLOW_FILTERS * Self::feature_width(n_samples), n_classes),
        }
    }

    pub(crate) fn trainable(&self) -> usize {
        conv_params(&self.temporal) + conv_params(&self.spatial) + bn_params(&self.bn) + linear_params(&self.classifier)
    }

    pub(crate) fn forward(&self, x: Tensor<B, 4>, rng: Option<&mut ChaCha8Rng>) -> TapSet<B> {
        let lf1 = self.temporal.forward(x);
        let lf2 = self.bn.forward(self.spatial.forward(lf1.clone()));
        let lf3 = safe_log(pool(lf2.clone().powi_scalar(2), SHALLOW_POOL, SHALLOW_STRIDE));
        let h = dropout(lf3.clone(), SHALLOW_DROPOUT, rng);
        let logits = self.classifier.forward(flatten(h));
        TapSet { lf1, lf2, lf3, logits }
    }
}

// SCCNet: spatial component analysis, spatio-temporal filtering, power pooling.
pub(crate) const SCC_FILTERS: usize = 20;
const SCC_KERNEL: usize = 13;
const SCC_POOL: usize = 64;
const SCC_STRIDE: usize = 13;
const SCC_DROPOUT: f64 = 0.5;

#[derive(Module, Debug)]
pub struct SccNet<B: Backend> {
    spatial: Conv2d<B>,
    bn1: BatchNorm<B, 2>,
    spatio_temporal: Conv2d<B>,
    bn2: BatchNorm<B, 2>,
    classifier: Linear<B>,
}

impl<B: Backend> SccNet<B> {
    pub(crate) fn feature_width(n_samples: usize) -> usize {
        pooled(n_samples, SCC_POOL, SCC_STRIDE)
    }

    pub(crate) fn new(init: &mut Init<B>, n_channels: usize, n_samples: usize, n_classes: usize) -> Self {
        // one spatial component per input electrode
        let n_u = n_channels;
        Self {
            spatial: init.conv([1, n_u], [n_channels, 1], 1, [0, 0], true),
            bn1: init.batch_norm(n_u),
            spatio_temporal: init.conv([1, SCC_FILTERS], [n_u, SCC_KERNEL], 1, [0, SCC_KERNEL / 2], true),
            bn2: init.batch_norm(SCC_FILTERS),
            classifier: init.linear(SCC_FILTERS * Self::feature_width(n_samples), n_classes),
        }
    }

    pub(crate) fn trainable(&self) -> usize {
        conv_params(&self.spatial)
            + bn_params(&self.bn1)
            + conv_params(&self.spatio_temporal)
            + bn_params(&self.bn2)
            + linear_params(&self.classifier)
    }

    pub(crate) fn forward(&self, x: Tensor<B, 4>, rng: Option<&mut ChaCha8Rng>) -> TapSet<B> {
        let lf1 = self.bn1.forward(self.spatial.forward(x));
        let h = lf1.clone().swap_dims(1, 2);
        let lf2 = self.bn2.forward(self.spatio_temporal.forward(h));
        let h = dropout(lf2.clone().powi_scalar(2), SCC_DROPOUT, rng);
        let lf3 = safe_log(pool(h, SCC_POOL, SCC_STRIDE));
        let logits = self.classifier.forward(flatten(lf3.clone()));
        TapSet { lf1, lf2, lf3, logits }
    }
}
