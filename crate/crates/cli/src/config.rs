//! Laboratory configuration: TOML for editing, canonical JSON for embedding.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sipfield::coupling::{CdfSource, CouplingExperiment, CouplingMode};
use sipfield::covariance::{CovarianceKind, CovarianceModel, Kernel};
use sipfield::field::{FieldModel, Innovation};
use sipfield::geometry::Parameters;
use sipfield::lattice::MultiIndex;

use crate::CliError;

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "SIPFIELD_OUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Iid,
    MovingAverage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub shape: Vec<u64>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub innovation: Innovation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
}

impl ModelSpec {
    /// Named presets: `iid-<law>` and `ma-<law>` with law one of
    /// `gaussian`, `exponential`, `rademacher`. The moving average uses the
    /// product kernel with per-axis weights `(1, 1/2)`.
    pub fn preset(name: &str, d: usize) -> Result<Self, CliError> {
        let (kind, law) = name
            .split_once('-')
            .ok_or_else(|| CliError::Config(format!("unknown model preset '{name}'")))?;
        let innovation = match law {
            "gaussian" => Innovation::Gaussian,
            "exponential" => Innovation::CenteredExponential,
            "rademacher" => Innovation::Rademacher,
            _ => return Err(CliError::Config(format!("unknown innovation law '{law}'"))),
        };
        match kind {
            "iid" => Ok(ModelSpec {
                kind: ModelKind::Iid,
                innovation,
                kernel: None,
            }),
            "ma" => Ok(ModelSpec {
                kind: ModelKind::MovingAverage,
                innovation,
                kernel: Some(product_kernel(d)),
            }),
            _ => Err(CliError::Config(format!("unknown model kind '{kind}'"))),
        }
    }

    pub fn build(&self, d: usize) -> Result<FieldModel, CliError> {
        match self.kind {
            ModelKind::Iid => Ok(FieldModel::iid(d, self.innovation)),
            ModelKind::MovingAverage => {
                let kernel_spec = self.kernel.clone().unwrap_or_else(|| product_kernel(d));
                if kernel_spec.shape.len() != d {
                    return Err(CliError::Config(format!(
                        "kernel has dimension {}, expected {d}",
                        kernel_spec.shape.len()
                    )));
                }
                let kernel = Kernel::new(MultiIndex::new(kernel_spec.shape), kernel_spec.weights)?;
                Ok(FieldModel::moving_average(kernel, self.innovation))
            }
        }
    }
}

fn product_kernel(d: usize) -> KernelSpec {
    let mut weights = vec![1.0];
    for _ in 0..d {
        weights = weights.iter().flat_map(|w| [*w, w * 0.5]).collect();
    }
    // flat_map builds the last axis fastest, matching row-major order
    KernelSpec {
        shape: vec![2; d],
        weights,
    }
}

fn default_r() -> f64 {
    1.0
}

fn default_lambda() -> f64 {
    std::f64::consts::LN_2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub alpha: u32,
    pub beta: u32,
    pub tau: f64,
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default = "default_r")]
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Block window `1 <= k <= kmax`; defaults to 5 on every axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kmax: Option<Vec<u64>>,
}

fn default_replicates() -> usize {
    50
}

fn default_seed() -> u64 {
    20240101
}

fn default_epsilon() -> f64 {
    0.05
}

fn default_checks() -> Vec<String> {
    vec!["all".into()]
}

fn default_sizes() -> Vec<u64> {
    vec![4, 16, 64]
}

fn default_check_replicates() -> usize {
    5000
}

fn default_mode() -> CouplingMode {
    CouplingMode::Surrogate
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Replicates of the coupling experiment.
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Master seed; every random input derives from it.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_checks")]
    pub checks: Vec<String>,
    /// Block scales `k` of the coupling experiment; defaults to the diagonal 3..=5.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<Vec<u64>>>,
    /// Square sides for the rate and moment checks.
    #[serde(default = "default_sizes")]
    pub sizes: Vec<u64>,
    /// Replicates of the rate and moment checks.
    #[serde(default = "default_check_replicates")]
    pub check_replicates: usize,
    #[serde(default = "default_mode")]
    pub mode: CouplingMode,
    #[serde(default)]
    pub cdf_source: CdfSource,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            replicates: default_replicates(),
            seed: default_seed(),
            epsilon: default_epsilon(),
            checks: default_checks(),
            scales: None,
            sizes: default_sizes(),
            check_replicates: default_check_replicates(),
            mode: default_mode(),
            cdf_source: CdfSource::default(),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("sipfield-out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabConfig {
    pub d: usize,
    pub model: ModelSpec,
    /// Covariance model for the `covariance` subcommand; defaults to the field's own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<CovarianceKind>,
    pub geometry: GeometrySpec,
    #[serde(default)]
    pub experiment: ExperimentSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl Default for LabConfig {
    fn default() -> Self {
        LabConfig {
            d: 2,
            model: ModelSpec::preset("ma-exponential", 2).expect("valid preset"),
            covariance: None,
            geometry: GeometrySpec {
                alpha: 3,
                beta: 2,
                tau: 0.8,
                r: 1.0,
                delta: 1.0,
                nu: None,
                lambda: default_lambda(),
                kmax: None,
            },
            experiment: ExperimentSpec::default(),
            output_dir: default_output_dir(),
        }
    }
}

impl LabConfig {
    /// Reads TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: LabConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?
        };
        config.check()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn check(&self) -> Result<(), CliError> {
        if self.d == 0 {
            return Err(CliError::Config("d must be positive".into()));
        }
        self.model.build(self.d)?;
        if let Some(k) = &self.geometry.kmax {
            if k.len() != self.d || k.contains(&0) {
                return Err(CliError::Config(format!(
                    "kmax must have {} positive entries",
                    self.d
                )));
            }
        }
        if !(self.experiment.epsilon > 0.0 && self.experiment.epsilon < 0.5) {
            return Err(CliError::Config(format!(
                "epsilon must lie in (0, 1/2), got {}",
                self.experiment.epsilon
            )));
        }
        Ok(())
    }

    /// Compact JSON with fields in declaration order.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Output directory after the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn field_model(&self) -> Result<FieldModel, CliError> {
        self.model.build(self.d)
    }

    pub fn covariance_model(&self) -> Result<CovarianceModel, CliError> {
        match &self.covariance {
            Some(kind) => Ok(CovarianceModel::new(self.d, kind.clone())?),
            None => Ok(self.field_model()?.covariance()?),
        }
    }

    pub fn parameters(&self) -> Result<Parameters, CliError> {
        let g = &self.geometry;
        let mut p = Parameters::new(self.d, g.alpha, g.beta, g.tau)?
            .with_moments(g.r, g.delta)
            .with_lambda(g.lambda);
        if let Some(nu) = g.nu {
            p = p.with_nu(nu);
        }
        Ok(p)
    }

    pub fn kmax(&self) -> MultiIndex {
        match &self.geometry.kmax {
            Some(k) => MultiIndex::new(k.clone()),
            None => MultiIndex::splat(self.d, 5),
        }
    }

    pub fn scales(&self) -> Vec<MultiIndex> {
        match &self.experiment.scales {
            Some(s) => s.iter().map(|k| MultiIndex::new(k.clone())).collect(),
            None => (3..=5).map(|c| MultiIndex::splat(self.d, c)).collect(),
        }
    }

    pub fn coupling_experiment(&self) -> Result<CouplingExperiment, CliError> {
        Ok(CouplingExperiment {
            model: self.field_model()?,
            params: self.parameters()?,
            scales: self.scales(),
            replicates: self.experiment.replicates,
            master_seed: self.experiment.seed,
            epsilon: self.experiment.epsilon,
            mode: self.experiment.mode,
            cdf_source: self.experiment.cdf_source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_kernel_is_row_major() {
        let k = product_kernel(2);
        assert_eq!(k.weights, vec![1.0, 0.5, 0.5, 0.25]);
    }

    #[test]
    fn toml_and_json_agree() {
        let text = r#"
            d = 2
            [model]
            kind = "moving_average"
            innovation = "centered_exponential"
            [geometry]
            alpha = 3
            beta = 2
            tau = 0.8
        "#;
        let a = LabConfig::parse(text).unwrap();
        let b = LabConfig::parse(&a.canonical_json()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.canonical_json(), b.canonical_json());
        assert_eq!(a.experiment.sizes, vec![4, 16, 64]);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(LabConfig::parse("d = 2").is_err());
        assert!(ModelSpec::preset("iid-cauchy", 2).is_err());
        let mut c = LabConfig::default();
        c.experiment.epsilon = 0.7;
        assert!(c.check().is_err());
    }
}
