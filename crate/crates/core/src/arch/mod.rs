//! Declarative architecture specs, the preset library, model
//! instantiation and the weights file.

mod model;
mod presets;
mod spec;
mod text;
mod weights;

pub use model::{init_weights, instantiate, Features, Model, LINEAR_INIT_STD};
pub use presets::{preset, PRESET_NAMES};
pub use spec::{check_resolution, ArchSpec, BlockSpec, StageSpec, STAGE_DIVISORS, STAGE_NAMES};
pub use text::{emit_spec, parse_spec};
pub use weights::{load_weights, save_weights, ModelWeights, MAGIC, VERSION};

/// Reads and validates a spec file.
pub fn load_spec(path: impl AsRef<std::path::Path>) -> crate::Result<ArchSpec> {
    let spec = parse_spec(&std::fs::read_to_string(path)?)?;
    spec.validate()?;
    Ok(spec)
}

/// A preset name or a path to a spec file.
pub fn resolve(name_or_path: &str) -> crate::Result<ArchSpec> {
    match preset(name_or_path) {
        Err(crate::Error::UnknownPreset(_)) if std::path::Path::new(name_or_path).is_file() => load_spec(name_or_path),
        other => other,
    }
}
