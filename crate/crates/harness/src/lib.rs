//! Experiment harness: configuration, PPM I/O, benchmark construction,
//! attack orchestration, result persistence and plots.

pub mod benchmark;
pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod ppm;
pub mod run;
pub mod synth;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};

use gsm_forge_core::codec::{load_weights, CodecModel};

/// Loads weights for an attack-side command and checks they match the
/// configured architecture.
pub fn load_model(cfg: &ExperimentConfig, path: &std::path::Path) -> Result<CodecModel> {
    if !path.is_file() {
        return Err(HarnessError::config(format!("weights file {} does not exist", path.display())));
    }
    let m = load_weights(path).map_err(|e| HarnessError::config(format!("{}: {e}", path.display())))?;
    let (h, l) = (cfg.codec.hidden_channels, cfg.codec.latent_channels);
    if m.hidden_channels() != h || m.latent_channels() != l {
        return Err(HarnessError::config(format!(
            "weights are {}/{} channels, config says {h}/{l}",
            m.hidden_channels(),
            m.latent_channels()
        )));
    }
    Ok(m)
}
