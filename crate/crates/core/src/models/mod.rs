//! EEG decoders (SCCNet, EEGNet, ShallowConvNet) with three named feature taps.
//!
//! Every network consumes `N × C × T` input and reports, besides logits, an
//! upstream (`LF1`), midstream (`LF2`) and downstream (`LF3`) activation. Only
//! layers up to the spatial stage depend on `C`, so taps of a 22-channel teacher
//! and a 4-channel student of the same family have matching channel counts
//! from `LF2` on.

mod checkpoint;
mod layers;
mod nets;

pub use checkpoint::{
    load_checkpoint, model_from_bytes, model_to_bytes, parameter_hash, parameter_values, save_checkpoint,
    CheckpointManifest,
};
pub use nets::{EegNet, SccNet, ShallowConvNet};

use std::fmt;
use std::str::FromStr;

use burn::module::Ignored;
use burn::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use layers::Init;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot build {arch}: {reason}")]
    Build { arch: String, reason: String },
    #[error("input shape mismatch: expected {expected}, got {found}")]
    Shape { expected: String, found: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "SCCNet")]
    SccNet,
    #[serde(rename = "EEGNet")]
    EegNet,
    #[serde(rename = "ShallowConvNet")]
    ShallowConvNet,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Self::SccNet, Self::EegNet, Self::ShallowConvNet];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SccNet => "SCCNet",
            Self::EegNet => "EEGNet",
            Self::ShallowConvNet => "ShallowConvNet",
        }
    }

    fn feature_width(self, n_samples: usize) -> usize {
        type Nd = burn::backend::NdArray<f32>;
        match self {
            Self::SccNet => SccNet::<Nd>::feature_width(n_samples),
            Self::EegNet => EegNet::<Nd>::feature_width(n_samples),
            Self::ShallowConvNet => ShallowConvNet::<Nd>::feature_width(n_samples),
        }
    }

    /// Shortest input length the kernel and pooling chain accepts.
    pub fn min_samples(self) -> usize {
        (1..).find(|&t| self.feature_width(t) > 0).expect("some length fits")
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ModelError::Build {
                arch: s.to_string(),
                reason: "unknown architecture (expected SCCNet, EEGNet or ShallowConvNet)".into(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: Architecture,
    pub n_channels: usize,
    pub n_samples: usize,
    pub n_classes: usize,
}

impl ArchitectureSpec {
    pub fn new(name: Architecture, n_channels: usize, n_samples: usize, n_classes: usize) -> Self {
        Self { name, n_channels, n_samples, n_classes }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(ModelError::Build { arch: self.to_string(), reason });
        if self.n_channels == 0 {
            return fail("n_channels must be at least 1".into());
        }
        if self.n_classes < 2 {
            return fail("n_classes must be at least 2".into());
        }
        let min = self.name.min_samples();
        if self.n_samples < min {
            return fail(format!("n_samples = {} is shorter than the minimum length {min}", self.n_samples));
        }
        Ok(())
    }

    /// `(channels, height, width)` of each tap for this spec.
    pub fn tap_shapes(&self) -> [[usize; 3]; 3] {
        let (c, t) = (self.n_channels, self.n_samples);
        let w = self.name.feature_width(t);
        match self.name {
            Architecture::EegNet => {
                let f1d = nets::EEGNET_F1 * nets::EEGNET_D;
                [[nets::EEGNET_F1, c, t + 1], [f1d, 1, (t + 1) / 4], [nets::EEGNET_F2, 1, w]]
            }
            Architecture::ShallowConvNet => {
                let f = nets::SHALLOW_FILTERS;
                [[f, c, t + 1 - 13], [f, 1, t + 1 - 13], [f, 1, w]]
            }
            Architecture::SccNet => [[c, 1, t], [nets::SCC_FILTERS, 1, t], [nets::SCC_FILTERS, 1, w]],
        }
    }
}

impl fmt::Display for ArchitectureSpec {
    /// `Net-C`, e.g. `SCCNet-22`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.name, self.n_channels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TapName {
    #[serde(rename = "LF1")]
    Lf1,
    #[serde(rename = "LF2")]
    Lf2,
    #[serde(rename = "LF3")]
    Lf3,
}

impl TapName {
    pub const ALL: [TapName; 3] = [Self::Lf1, Self::Lf2, Self::Lf3];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Lf1 => "LF1",
            Self::Lf2 => "LF2",
            Self::Lf3 => "LF3",
        }
    }
}

impl fmt::Display for TapName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TapName {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown tap {s:?} (expected LF1, LF2 or LF3)"))
    }
}

/// Activations captured in one forward pass. Taps are `N × C × H × W`.
#[derive(Debug, Clone)]
pub struct TapSet<B: Backend> {
    pub lf1: Tensor<B, 4>,
    pub lf2: Tensor<B, 4>,
    pub lf3: Tensor<B, 4>,
    pub logits: Tensor<B, 2>,
}

impl<B: Backend> TapSet<B> {
    pub fn get(&self, tap: TapName) -> &Tensor<B, 4> {
        match tap {
            TapName::Lf1 => &self.lf1,
            TapName::Lf2 => &self.lf2,
            TapName::Lf3 => &self.lf3,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.logits.dims()[0]
    }
}

#[derive(Module, Debug)]
pub enum Net<B: Backend> {
    Scc(SccNet<B>),
    Eeg(EegNet<B>),
    Shallow(ShallowConvNet<B>),
}

/// A classifier together with the architecture settings it was built for.
#[derive(Module, Debug)]
pub struct Model<B: Backend> {
    net: Net<B>,
    spec: Ignored<ArchitectureSpec>,
}

/// Builds a model with parameters drawn deterministically from `init_seed`.
pub fn build_model<B: Backend>(spec: ArchitectureSpec, init_seed: u64, device: &B::Device) -> Result<Model<B>> {
    spec.validate()?;
    let mut init = Init { rng: ChaCha8Rng::seed_from_u64(init_seed), device };
    let (c, t, k) = (spec.n_channels, spec.n_samples, spec.n_classes);
    let net = match spec.name {
        Architecture::SccNet => Net::Scc(SccNet::new(&mut init, c, t, k)),
        Architecture::EegNet => Net::Eeg(EegNet::new(&mut init, c, t, k)),
        Architecture::ShallowConvNet => Net::Shallow(ShallowConvNet::new(&mut init, c, t, k)),
    };
    Ok(Model { net, spec: Ignored(spec) })
}

/// Number of trainable scalars (normalization running statistics excluded).
pub fn count_parameters<B: Backend>(model: &Model<B>) -> usize {
    match &model.net {
        Net::Scc(m) => m.trainable(),
        Net::Eeg(m) => m.trainable(),
        Net::Shallow(m) => m.trainable(),
    }
}

impl<B: Backend> Model<B> {
    pub fn spec(&self) -> ArchitectureSpec {
        *self.spec
    }

    fn check_input(&self, x: &Tensor<B, 3>) -> Result<()> {
        let [_, c, t] = x.dims();
        let s = self.spec();
        if c != s.n_channels || t != s.n_samples {
            return Err(ModelError::Shape {
                expected: format!("N × {} × {}", s.n_channels, s.n_samples),
                found: format!("{:?}", x.dims()),
            });
        }
        Ok(())
    }

    /// Forward pass returning all taps. `dropout` enables dropout with the
    /// given RNG; `None` disables it. Normalization layers use batch
    /// statistics on autodiff backends and running statistics otherwise.
    pub fn forward_with_taps(&self, x: Tensor<B, 3>, dropout: Option<&mut ChaCha8Rng>) -> Result<TapSet<B>> {
        self.check_input(&x)?;
        let x = x.unsqueeze_dim::<4>(1);
        Ok(match &self.net {
            Net::Scc(m) => m.forward(x, dropout),
            Net::Eeg(m) => m.forward(x, dropout),
            Net::Shallow(m) => m.forward(x, dropout),
        })
    }

    /// Logits only.
    pub fn forward(&self, x: Tensor<B, 3>, dropout: Option<&mut ChaCha8Rng>) -> Result<Tensor<B, 2>> {
        Ok(self.forward_with_taps(x, dropout)?.logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{from_f32, to_vec_f32};
    use burn::backend::NdArray;

    type B = NdArray<f32>;

    fn spec(name: Architecture, c: usize) -> ArchitectureSpec {
        ArchitectureSpec::new(name, c, 512, 4)
    }

    fn input(n: usize, c: usize, t: usize, seed: u64) -> Tensor<B, 3> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..n * c * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        from_f32(v, [n, c, t], &Default::default())
    }

    #[test]
    fn minimum_lengths() {
        assert_eq!(Architecture::EegNet.min_samples(), 27);
        assert_eq!(Architecture::ShallowConvNet.min_samples(), 50);
        assert_eq!(Architecture::SccNet.min_samples(), 64);
    }

    #[test]
    fn short_input_is_a_build_error() {
        let err = build_model::<B>(ArchitectureSpec::new(Architecture::ShallowConvNet, 22, 8, 4), 0, &Default::default())
            .unwrap_err();
        assert!(err.to_string().contains("minimum length 50"), "{err}");
    }

    #[test]
    fn tap_shapes_match_forward_pass() {
        let dev = Default::default();
        for name in Architecture::ALL {
            for c in [22, 4] {
                let s = spec(name, c);
                let m = build_model::<B>(s, 1, &dev).unwrap();
                let taps = m.forward_with_taps(input(3, c, 512, 0), None).unwrap();
                let shapes = s.tap_shapes();
                for (k, tap) in TapName::ALL.into_iter().enumerate() {
                    let [n, ch, h, w] = taps.get(tap).dims();
                    assert_eq!(n, 3);
                    assert_eq!([ch, h, w], shapes[k], "{s} {tap}");
                }
                assert_eq!(taps.logits.dims(), [3, 4]);
            }
        }
    }

    #[test]
    fn downstream_taps_do_not_depend_on_channel_count() {
        for name in Architecture::ALL {
            let hd = spec(name, 22).tap_shapes();
            let ld = spec(name, 4).tap_shapes();
            assert_eq!(hd[1][0], ld[1][0]);
            assert_eq!(hd[2], ld[2]);
        }
    }

    #[test]
    fn eegnet_first_tap_has_one_map_per_temporal_filter() {
        let m = build_model::<B>(spec(Architecture::EegNet, 22), 0, &Default::default()).unwrap();
        let taps = m.forward_with_taps(input(2, 22, 512, 3), None).unwrap();
        assert_eq!(taps.lf1.dims()[1], 8);
    }

    #[test]
    fn tapped_and_plain_logits_agree() {
        let dev = Default::default();
        for name in Architecture::ALL {
            let m = build_model::<B>(spec(name, 4), 5, &dev).unwrap();
            let x = input(4, 4, 512, 1);
            let a = to_vec_f32(m.forward_with_taps(x.clone(), None).unwrap().logits);
            let b = to_vec_f32(m.forward(x, None).unwrap());
            assert_eq!(a, b);
        }
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let dev = Default::default();
        for name in Architecture::ALL {
            let a = build_model::<B>(spec(name, 22), 42, &dev).unwrap();
            let b = build_model::<B>(spec(name, 22), 42, &dev).unwrap();
            let c = build_model::<B>(spec(name, 22), 43, &dev).unwrap();
            assert_eq!(parameter_values(&a), parameter_values(&b));
            assert_eq!(parameter_hash(&a), parameter_hash(&b));
            assert_ne!(parameter_hash(&a), parameter_hash(&c));
            assert_eq!(count_parameters(&a), count_parameters(&b));
        }
    }

    /// Parameter totals summed by hand from the layer shapes.
    fn hand_count(s: ArchitectureSpec) -> usize {
        let (c, k) = (s.n_channels, s.n_classes);
        let w = s.tap_shapes()[2][2];
        match s.name {
            Architecture::SccNet => {
                let spatial = c * c + c + 2 * c;
                let st = 20 * c * 13 + 20 + 2 * 20;
                spatial + st + 20 * w * k + k
            }
            Architecture::EegNet => 8 * 64 + 2 * 8 + 16 * c + 2 * 16 + 16 * 16 + 16 * 16 + 2 * 16 + 16 * w * k + k,
            Architecture::ShallowConvNet => 40 * 13 + 40 + 40 * 40 * c + 2 * 40 + 40 * w * k + k,
        }
    }

    #[test]
    fn parameter_counts_match_layer_shapes() {
        let dev = Default::default();
        for name in Architecture::ALL {
            for c in [22, 4] {
                let s = spec(name, c);
                let m = build_model::<B>(s, 0, &dev).unwrap();
                assert_eq!(count_parameters(&m), hand_count(s), "{s}");
            }
        }
        let scc = |c| count_parameters(&build_model::<B>(spec(Architecture::SccNet, c), 0, &dev).unwrap());
        // spatial conv + its normalization + spatio-temporal conv weights
        let spatial_term = |c: usize| c * c + c + 2 * c + 20 * c * 13;
        assert_eq!(scc(22) - scc(4), spatial_term(22) - spatial_term(4));
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let m = build_model::<B>(spec(Architecture::SccNet, 4), 0, &Default::default()).unwrap();
        assert!(matches!(m.forward_with_taps(input(2, 22, 512, 0), None), Err(ModelError::Shape { .. })));
    }

    #[test]
    fn evaluation_forward_is_deterministic() {
        let m = build_model::<B>(spec(Architecture::EegNet, 4), 0, &Default::default()).unwrap();
        let x = input(3, 4, 512, 2);
        assert_eq!(to_vec_f32(m.forward(x.clone(), None).unwrap()), to_vec_f32(m.forward(x, None).unwrap()));
    }

    #[test]
    fn dropout_changes_training_output_reproducibly() {
        let m = build_model::<B>(spec(Architecture::SccNet, 4), 0, &Default::default()).unwrap();
        let x = input(3, 4, 512, 2);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            to_vec_f32(m.forward(x.clone(), Some(&mut rng)).unwrap())
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), to_vec_f32(m.forward(x.clone(), None).unwrap()));
    }
}
