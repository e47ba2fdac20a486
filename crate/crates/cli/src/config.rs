//! The run configuration file: one TOML document with top-level run
//! settings and a table per command.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use twophase::datamodel::{CostModel, W0Distribution};
use twophase::design::SupportWeighting;
use twophase::estimator::MeanFitSource;
use twophase::selection::{ClipBounds, KnownSelection};
use twophase::simharness::SimulationConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    #[serde(skip_serializing)]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub workers: Option<usize>,
    #[serde(skip_serializing)]
    pub log_level: Option<String>,
    pub simulate: Option<SimulationConfig>,
    pub select: Option<SelectConfig>,
    pub design: Option<DesignConfig>,
    pub estimate: Option<EstimateConfig>,
}

/// Where λ₁ comes from for `design` and `estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSource {
    /// A `select` output file.
    pub model: Option<PathBuf>,
    /// A closed-form selection probability.
    pub known: Option<KnownSelection>,
    pub clip: Option<ClipBounds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectConfig {
    /// First-phase rows (frame schema).
    pub ehr: PathBuf,
    /// External probability sample; without it λ₁ is fitted directly on a
    /// frame that holds the whole population.
    pub external: Option<PathBuf>,
    pub population_size: Option<usize>,
    #[serde(default)]
    pub quadratic: bool,
    #[serde(default)]
    pub clip: ClipBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceForm {
    #[default]
    Quadratic,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    /// Frame with first-phase rows and a pilot; the support is the
    /// first-phase sample and models are fitted on the pilot.
    pub frame: Option<PathBuf>,
    pub population_size: Option<usize>,
    /// Tabulated support (`prob,lambda1,v2,c2` plus optional `id`, `v1`,
    /// `w0_*`, `w1_*`), used instead of a frame.
    pub support: Option<PathBuf>,
    /// Population and first-phase sizes for a tabulated support.
    pub n: Option<usize>,
    pub n_e: Option<usize>,
    pub var_y: Option<f64>,
    pub pve: Option<f64>,
    pub cost: CostModel,
    pub selection: Option<SelectionSource>,
    #[serde(default)]
    pub variance: VarianceForm,
    #[serde(default = "default_reml")]
    pub reml: bool,
    #[serde(default)]
    pub weighting: SupportWeighting,
    #[serde(default = "default_v1_draws")]
    pub v1_draws: usize,
    /// Number of first-phase sizes to tabulate across the feasible range.
    #[serde(default)]
    pub sweep_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    /// Frame with second-phase outcomes filled in.
    pub frame: PathBuf,
    pub population_size: Option<usize>,
    /// `design` output supplying λ₂ for rows that lack it.
    pub design: Option<PathBuf>,
    pub selection: SelectionSource,
    /// External probability sample for the W₀ imputation when the frame
    /// does not hold the whole population.
    pub external: Option<PathBuf>,
    pub w0_distribution: Option<W0Distribution>,
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    #[serde(default = "default_refit")]
    pub refit: bool,
    #[serde(default)]
    pub mean_source: MeanFitSource,
    #[serde(default)]
    pub robust: bool,
}

fn default_reml() -> bool {
    true
}

fn default_v1_draws() -> usize {
    1000
}

fn default_n_boot() -> usize {
    1000
}

fn default_refit() -> bool {
    true
}

impl RunConfig {
    /// Parses `path`, resolving relative input paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| twophase::Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Every input path in the configuration.
    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        let mut out: Vec<&mut PathBuf> = Vec::new();
        if let Some(s) = &mut self.select {
            out.push(&mut s.ehr);
            out.extend(s.external.as_mut());
        }
        if let Some(d) = &mut self.design {
            out.extend(d.frame.as_mut());
            out.extend(d.support.as_mut());
            out.extend(d.selection.as_mut().and_then(|s| s.model.as_mut()));
        }
        if let Some(e) = &mut self.estimate {
            out.push(&mut e.frame);
            out.extend(e.design.as_mut());
            out.extend(e.external.as_mut());
            out.extend(e.selection.model.as_mut());
        }
        out
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in self.paths_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Input files named by the section of `command`.
    pub fn inputs(&self, command: &str) -> Vec<&Path> {
        let mut out: Vec<&Path> = Vec::new();
        match command {
            "select" => {
                if let Some(s) = &self.select {
                    out.push(&s.ehr);
                    out.extend(s.external.as_deref());
                }
            }
            "design" => {
                if let Some(d) = &self.design {
                    out.extend(d.frame.as_deref());
                    out.extend(d.support.as_deref());
                    out.extend(d.selection.as_ref().and_then(|s| s.model.as_deref()));
                }
            }
            "estimate" => {
                if let Some(e) = &self.estimate {
                    out.push(&e.frame);
                    out.extend(e.design.as_deref());
                    out.extend(e.external.as_deref());
                    out.extend(e.selection.model.as_deref());
                }
            }
            _ => {}
        }
        out
    }

    pub fn check_inputs_exist(&self, command: &str) -> Result<()> {
        let missing: Vec<String> =
            self.inputs(command).into_iter().filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
        if !missing.is_empty() {
            bail!(twophase::Error::Config(format!("missing input files: {}", missing.join(", "))));
        }
        Ok(())
    }

    /// SHA-256 of the settings that determine a command's results. Output
    /// location, worker count and logging are excluded; input paths are
    /// hashed by file name so the digest does not depend on where the run
    /// directory lives.
    pub fn digest(&self, command: &str) -> String {
        let mut canonical = self.clone();
        for p in canonical.paths_mut() {
            if let Some(name) = p.file_name() {
                *p = PathBuf::from(name);
            }
        }
        let section = match command {
            "simulate" => serde_json::to_value(&canonical.simulate),
            "select" => serde_json::to_value(&canonical.select),
            "design" => serde_json::to_value(&canonical.design),
            _ => serde_json::to_value(&canonical.estimate),
        }
        .expect("configuration serializes");
        let doc = serde_json::json!({ "command": command, "seed": canonical.seed, "section": section });
        let bytes = serde_json::to_vec(&doc).expect("configuration serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
