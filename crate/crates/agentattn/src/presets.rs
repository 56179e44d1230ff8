//! Preset JSON files.

use std::fs;
use std::path::{Path, PathBuf};

use agentattn_core::model::DEIT_ARCHITECTURE;
use agentattn_core::ModelPreset;

use crate::error::{Error, Result};

/// Directory holding the shipped preset files.
pub fn preset_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets")
}

/// Read a preset and validate it. Files describing a non-DeiT backbone are
/// rejected with a config error before their layout is interpreted.
pub fn load_preset(path: impl AsRef<Path>) -> Result<ModelPreset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    if let Some(arch) = value.get("architecture").and_then(|a| a.as_str()) {
        if arch != DEIT_ARCHITECTURE {
            let name = value.get("name").and_then(|n| n.as_str()).unwrap_or("?");
            return Err(agentattn_core::Error::Config(format!(
                "preset '{name}' describes a '{arch}' backbone, which is documented but not assembled"
            ))
            .into());
        }
    }
    let preset: ModelPreset = serde_json::from_value(value).map_err(|e| Error::json(path, e))?;
    preset.validate()?;
    Ok(preset)
}

pub fn save_preset(path: impl AsRef<Path>, preset: &ModelPreset) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(preset).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// A built-in preset by name.
pub fn builtin(name: &str) -> Option<ModelPreset> {
    match name {
        "agent-deit-t" => Some(ModelPreset::agent_deit_t()),
        "agent-deit-s" => Some(ModelPreset::agent_deit_s()),
        "agent-deit-b" => Some(ModelPreset::agent_deit_b()),
        _ => None,
    }
}

/// Resolve `--preset`: an existing path, otherwise a file name in
/// [`preset_dir`].
pub fn resolve(arg: &str) -> PathBuf {
    let direct = PathBuf::from(arg);
    if direct.exists() {
        return direct;
    }
    let shipped = preset_dir().join(arg);
    if shipped.exists() {
        shipped
    } else {
        direct
    }
}
