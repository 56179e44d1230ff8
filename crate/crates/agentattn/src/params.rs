//! Parameter directories: one `.atns` file per tensor plus `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use agentattn_core::{AgentModuleParams, DType, Model, ModelPreset, ModuleConfig, Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_tensor_as, write_tensor};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleSpec {
    pub config: ModuleConfig,
    pub scale1: f64,
    pub scale2: f64,
    pub shortcut_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Contents {
    Model { preset: ModelPreset },
    Module { module: ModuleSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dtype: DType,
    #[serde(flatten)]
    pub contents: Contents,
    pub tensors: Vec<TensorEntry>,
}

fn file_name(index: usize, name: &str) -> String {
    format!("{index:04}_{name}.atns")
}

fn write_dir<'a, T: Scalar>(
    dir: &Path,
    contents: Contents,
    tensors: impl IntoIterator<Item = (String, &'a Tensor<T>)>,
) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for (i, (name, t)) in tensors.into_iter().enumerate() {
        let file = file_name(i, &name);
        write_tensor(dir.join(&file), t)?;
        entries.push(TensorEntry { name, file, shape: t.shape().to_vec() });
    }
    let manifest = Manifest { version: 1, dtype: T::DTYPE, contents, tensors: entries };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}

/// Overwrite `slots` with the tensors listed in `manifest`, checking names,
/// order and shapes against `names`.
fn fill<T: Scalar>(dir: &Path, manifest: &Manifest, names: Vec<String>, slots: Vec<&mut Tensor<T>>) -> Result<()> {
    if manifest.dtype != T::DTYPE {
        return Err(agentattn_core::Error::Type { expected: T::DTYPE.name(), found: manifest.dtype.name() }.into());
    }
    if manifest.tensors.len() != names.len() {
        return Err(Error::Format(format!(
            "manifest lists {} tensors, the layout has {}",
            manifest.tensors.len(),
            names.len()
        )));
    }
    for ((entry, name), slot) in manifest.tensors.iter().zip(names).zip(slots) {
        if entry.name != name {
            return Err(Error::Format(format!("expected tensor '{name}', manifest has '{}'", entry.name)));
        }
        let file = dir.join(&entry.file);
        let t = read_tensor_as::<T>(&file)?;
        if t.shape() != slot.shape() || t.shape() != entry.shape {
            return Err(agentattn_core::Error::Dimension(format!(
                "{}: shape {:?}, expected {:?}",
                file.display(),
                t.shape(),
                slot.shape()
            ))
            .into());
        }
        *slot = t;
    }
    Ok(())
}

pub fn save_model<T: Scalar>(dir: impl AsRef<Path>, model: &Model<T>) -> Result<Manifest> {
    let tensors = model.named_tensors().into_iter().map(|(n, _, t)| (n, t));
    write_dir(dir.as_ref(), Contents::Model { preset: model.preset.clone() }, tensors)
}

pub fn load_model<T: Scalar>(dir: impl AsRef<Path>) -> Result<Model<T>> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let Contents::Model { preset } = &manifest.contents else {
        return Err(Error::Format(format!("{} does not hold a model", dir.display())));
    };
    let mut model = Model::<T>::build(preset, 0)?;
    let names = model.named_tensors().into_iter().map(|(n, _, _)| n).collect();
    fill(dir, &manifest, names, model.tensors_mut())?;
    Ok(model)
}

pub fn save_module<T: Scalar>(dir: impl AsRef<Path>, params: &AgentModuleParams<T>) -> Result<Manifest> {
    let spec = ModuleSpec {
        config: params.config,
        scale1: params.scale1.as_f64(),
        scale2: params.scale2.as_f64(),
        shortcut_k: params.shortcut_k.as_f64(),
    };
    write_dir(dir.as_ref(), Contents::Module { module: spec }, params.named_tensors())
}

pub fn load_module<T: Scalar>(dir: impl AsRef<Path>) -> Result<AgentModuleParams<T>> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let Contents::Module { module } = &manifest.contents else {
        return Err(Error::Format(format!("{} does not hold an agent module", dir.display())));
    };
    let mut params = AgentModuleParams::<T>::init(module.config, &mut ChaCha8Rng::seed_from_u64(0))?;
    params.scale1 = T::of(module.scale1);
    params.scale2 = T::of(module.scale2);
    params.shortcut_k = T::of(module.shortcut_k);
    let names = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    fill(dir, &manifest, names, params.tensors_mut())?;
    params.validate()?;
    Ok(params)
}

/// Path of tensor `name` inside a saved directory.
pub fn tensor_path(dir: impl AsRef<Path>, name: &str) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    manifest
        .tensors
        .iter()
        .find(|e| e.name == name)
        .map(|e| dir.join(&e.file))
        .ok_or_else(|| Error::Format(format!("no tensor '{name}' in {}", dir.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use agentattn_core::verify::{desk_preset, random_module};

    #[test]
    fn model_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::<f32>::build(&desk_preset(), 7).unwrap();
        let m = save_model(dir.path(), &model).unwrap();
        assert_eq!(m.tensors.len(), model.named_tensors().len());
        let back = load_model::<f32>(dir.path()).unwrap();
        assert_eq!(back, model);
        assert!(matches!(load_model::<f64>(dir.path()), Err(Error::Core(agentattn_core::Error::Type { .. }))));
    }

    #[test]
    fn module_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ModuleConfig::new(8, 2, 4, 4, 4);
        cfg.qkv_bias = true;
        let mut p = random_module(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        p.shortcut_k = 0.25;
        save_module(dir.path(), &p).unwrap();
        assert_eq!(load_module::<f64>(dir.path()).unwrap(), p);
        assert!(matches!(load_model::<f64>(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::<f64>::build(&desk_preset(), 1).unwrap();
        save_model(dir.path(), &model).unwrap();
        let path = tensor_path(dir.path(), "head.bias").unwrap();
        write_tensor(&path, &Tensor::<f64>::zeros([3]).unwrap()).unwrap();
        assert!(matches!(load_model::<f64>(dir.path()), Err(Error::Core(agentattn_core::Error::Dimension(_)))));
    }
}
