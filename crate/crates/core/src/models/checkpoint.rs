use std::fs;
use std::path::{Path, PathBuf};

use burn::module::{Module, ModuleVisitor, ParamId};
use burn::prelude::*;
use burn::record::{BinBytesRecorder, FullPrecisionSettings, Recorder};
use sha2::{Digest, Sha256};

use super::{build_model, Architecture, ArchitectureSpec, Model, ModelError, Result};

type Rec = BinBytesRecorder<FullPrecisionSettings>;

/// Human-readable description stored next to the serialized parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointManifest {
    pub spec: ArchitectureSpec,
    pub init_seed: u64,
    pub config_digest: String,
    /// Epoch (1-based) with the lowest validation loss; `None` for untrained models.
    pub best_epoch: Option<usize>,
    /// SHA-256 of the parameter file.
    pub param_hash: String,
}

impl CheckpointManifest {
    pub fn to_text(&self) -> String {
        let s = &self.spec;
        format!(
            "architecture = {}\nn_channels = {}\nn_samples = {}\nn_classes = {}\ninit_seed = {}\nconfig_digest = {}\nbest_epoch = {}\nparam_hash = {}\n",
            s.name,
            s.n_channels,
            s.n_samples,
            s.n_classes,
            self.init_seed,
            self.config_digest,
            self.best_epoch.map_or_else(|| "none".to_string(), |e| e.to_string()),
            self.param_hash,
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelError::Checkpoint(format!("manifest line without `=`: {line}")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .cloned()
                .ok_or_else(|| ModelError::Checkpoint(format!("manifest is missing `{k}`")))
        };
        let num = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|e| ModelError::Checkpoint(format!("manifest field `{k}`: {e}")))
        };
        let best_epoch = match get("best_epoch")?.as_str() {
            "none" => None,
            _ => Some(num("best_epoch")? as usize),
        };
        Ok(Self {
            spec: ArchitectureSpec::new(
                get("architecture")?.parse::<Architecture>()?,
                num("n_channels")? as usize,
                num("n_samples")? as usize,
                num("n_classes")? as usize,
            ),
            init_seed: num("init_seed")?,
            config_digest: get("config_digest")?,
            best_epoch,
            param_hash: get("param_hash")?,
        })
    }
}

pub fn model_to_bytes<B: Backend>(model: &Model<B>) -> Result<Vec<u8>> {
    Rec::default()
        .record(model.clone().into_record(), ())
        .map_err(|e| ModelError::Checkpoint(e.to_string()))
}

/// Rebuilds a model of `spec` and loads serialized parameters into it.
pub fn model_from_bytes<B: Backend>(spec: ArchitectureSpec, bytes: Vec<u8>, device: &B::Device) -> Result<Model<B>> {
    let record = Rec::default()
        .load(bytes, device)
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    Ok(build_model::<B>(spec, 0, device)?.load_record(record))
}

struct Collect(Vec<f32>);

impl<B: Backend> ModuleVisitor<B> for Collect {
    fn visit_float<const D: usize>(&mut self, _id: ParamId, tensor: &Tensor<B, D>) {
        self.0.extend(crate::tensor::to_vec_f32(tensor.clone()));
    }
}

/// Every stored float of the model (weights and normalization statistics) in
/// module order. Unlike the serialized record this ignores parameter ids.
pub fn parameter_values<B: Backend>(model: &Model<B>) -> Vec<f32> {
    let mut c = Collect(Vec::new());
    model.visit(&mut c);
    c.0
}

/// SHA-256 over [`parameter_values`], hex encoded.
pub fn parameter_hash<B: Backend>(model: &Model<B>) -> String {
    let mut h = Sha256::new();
    for v in parameter_values(model) {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("params"), stem.with_extension("manifest"))
}

/// Writes `<stem>.params` and `<stem>.manifest`; the manifest's hash is filled in.
pub fn save_checkpoint<B: Backend>(model: &Model<B>, manifest: &CheckpointManifest, stem: &Path) -> Result<CheckpointManifest> {
    let bytes = model_to_bytes(model)?;
    let manifest = CheckpointManifest {
        spec: model.spec(),
        param_hash: hex::encode(Sha256::digest(&bytes)),
        ..manifest.clone()
    };
    let (params, man) = paths(stem);
    if let Some(dir) = params.parent() {
        fs::create_dir_all(dir).map_err(|source| ModelError::Io { path: dir.display().to_string(), source })?;
    }
    fs::write(&params, &bytes).map_err(|source| ModelError::Io { path: params.display().to_string(), source })?;
    fs::write(&man, manifest.to_text()).map_err(|source| ModelError::Io { path: man.display().to_string(), source })?;
    Ok(manifest)
}

/// Loads a checkpoint written by [`save_checkpoint`], verifying the parameter hash.
pub fn load_checkpoint<B: Backend>(stem: &Path, device: &B::Device) -> Result<(Model<B>, CheckpointManifest)> {
    let (params, man) = paths(stem);
    let text = fs::read_to_string(&man).map_err(|source| ModelError::Io { path: man.display().to_string(), source })?;
    let manifest = CheckpointManifest::parse(&text)?;
    let bytes = fs::read(&params).map_err(|source| ModelError::Io { path: params.display().to_string(), source })?;
    let hash = hex::encode(Sha256::digest(&bytes));
    if hash != manifest.param_hash {
        return Err(ModelError::Checkpoint(format!(
            "{} does not match the hash recorded in {}",
            params.display(),
            man.display()
        )));
    }
    Ok((model_from_bytes(manifest.spec, bytes, device)?, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use burn::backend::NdArray;

    type B = NdArray<f32>;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ArchitectureSpec::new(Architecture::SccNet, 4, 256, 3);
        let model = build_model::<B>(spec, 7, &Default::default()).unwrap();
        let manifest = CheckpointManifest {
            spec,
            init_seed: 7,
            config_digest: "abc".into(),
            best_epoch: Some(12),
            param_hash: String::new(),
        };
        let stem = dir.path().join("teacher");
        let saved = save_checkpoint(&model, &manifest, &stem).unwrap();
        let (loaded, m2) = load_checkpoint::<B>(&stem, &Default::default()).unwrap();
        assert_eq!(saved, m2);
        assert_eq!(parameter_values(&loaded), parameter_values(&model));
        assert_eq!(model_to_bytes(&loaded).unwrap(), model_to_bytes(&model).unwrap());
        assert_eq!(CheckpointManifest::parse(&m2.to_text()).unwrap(), m2);
    }

    #[test]
    fn tampered_parameters_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ArchitectureSpec::new(Architecture::EegNet, 2, 64, 2);
        let model = build_model::<B>(spec, 0, &Default::default()).unwrap();
        let m = CheckpointManifest { spec, init_seed: 0, config_digest: "x".into(), best_epoch: None, param_hash: String::new() };
        let stem = dir.path().join("m");
        save_checkpoint(&model, &m, &stem).unwrap();
        let p = stem.with_extension("params");
        let mut bytes = fs::read(&p).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&p, bytes).unwrap();
        assert!(load_checkpoint::<B>(&stem, &Default::default()).is_err());
    }
}
