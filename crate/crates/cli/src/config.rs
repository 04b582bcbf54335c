//! Run configuration shared by every subcommand.
//!
//! A config file is a flat JSON object with the field names below; any field
//! may be omitted. Command-line flags override file values.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use surgiatm::{DcpConfig, Error, SurgiAtmConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub truth_dir: Option<PathBuf>,
    pub eta: f64,
    /// Window size shared by the layer's dark channel and the DCP restorer.
    pub z: usize,
    pub t0: f64,
    pub airlight_fraction: f64,
    /// `[width, height]` every frame is resized to; `null` keeps native sizes.
    pub resize: Option<[usize; 2]>,
    /// Emit metric reports when ground truth is available.
    pub metrics: bool,
    pub bins: usize,
    pub min_bin_samples: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let dcp = DcpConfig::default();
        Self {
            input_dir: None,
            output_dir: None,
            truth_dir: None,
            eta: SurgiAtmConfig::default().eta,
            z: dcp.z,
            t0: dcp.t0,
            airlight_fraction: dcp.airlight_fraction,
            resize: Some([256, 256]),
            metrics: true,
            bins: surgiatm::moestat::DEFAULT_DARK_BINS,
            min_bin_samples: surgiatm::moestat::DEFAULT_MIN_BIN_SAMPLES,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Argument(format!("config {}: {e}", path.display())))
            .context("reading config")
    }

    /// Layer settings; the sigmoid is chosen by the caller from the `ρ` source.
    pub fn atm(&self, apply_sigmoid: bool) -> SurgiAtmConfig {
        SurgiAtmConfig { eta: self.eta, z: self.z, apply_sigmoid }
    }

    pub fn dcp(&self) -> DcpConfig {
        DcpConfig { z: self.z, t0: self.t0, airlight_fraction: self.airlight_fraction }
    }

    pub fn validate(&self) -> surgiatm::Result<()> {
        self.atm(true).validate()?;
        self.dcp().validate()?;
        if let Some([w, h]) = self.resize {
            if w == 0 || h == 0 {
                return Err(Error::Argument(format!("resize target must be non-empty, got {w}x{h}")));
            }
        }
        if self.bins == 0 {
            return Err(Error::Argument("bins must be positive".into()));
        }
        Ok(())
    }

    pub fn resize_to(&self) -> Option<(usize, usize)> {
        self.resize.map(|[w, h]| (w, h))
    }

    pub fn input(&self) -> surgiatm::Result<&Path> {
        required(&self.input_dir, "input")
    }

    pub fn output(&self) -> surgiatm::Result<&Path> {
        required(&self.output_dir, "output")
    }
}

fn required<'a>(dir: &'a Option<PathBuf>, what: &str) -> surgiatm::Result<&'a Path> {
    dir.as_deref()
        .ok_or_else(|| Error::Argument(format!("missing --{what} directory")))
}

/// Overrides `field` when the flag was given.
pub fn set<T>(field: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *field = v;
    }
}
