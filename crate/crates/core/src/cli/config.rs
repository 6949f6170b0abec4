use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aux_framework::RepresentationPair;
use crate::diagnostics::TestFunction;
use crate::kernels::KernelSpec;
use crate::targets::{bimodal, cone, gaussian_box, uniform_ball, uniform_box, BoundingBox, TargetDensity};

/// Problems with the configuration itself; reported with exit code 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn cfg<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: TargetConfig,
    #[serde(default)]
    pub kernels: Vec<KernelSpec>,
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub name: String,
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    pub bbox: Option<BoxConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    #[serde(default = "one")]
    pub w: usize,
    /// Optional rectangle replacing the target's bounding box.
    pub region: Option<BoxConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunctionConfig {
    /// One-based coordinate index.
    Coordinate { index: usize },
    SquaredNorm,
    HalfSpace { normal: Vec<f64>, offset: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub seed: u64,
    /// Chain length for `sample`.
    #[serde(default = "default_steps")]
    pub n: usize,
    pub x0: Option<Vec<f64>>,
    pub grid: Option<GridConfig>,
    /// Random test functions for `lab`.
    #[serde(default = "default_num_f")]
    pub num_f: usize,
    /// `lab`: swap the M and H matrices.
    #[serde(default)]
    pub negative_control: bool,
    pub pair: Option<RepresentationPair>,
    /// `check-representation`: perturb a fiber kernel of the first representation.
    #[serde(default)]
    pub corrupt: bool,
    #[serde(default = "default_n_pairs")]
    pub n_pairs: usize,
    #[serde(default = "default_mse_n")]
    pub mse_n: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub strict: bool,
    pub test_functions: Option<Vec<TestFunctionConfig>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            formats: default_formats(),
        }
    }
}

fn one() -> usize {
    1
}
fn default_steps() -> usize {
    1000
}
fn default_num_f() -> usize {
    1000
}
fn default_n_pairs() -> usize {
    100_000
}
fn default_mse_n() -> usize {
    100
}
fn default_replications() -> usize {
    500
}
fn default_directory() -> String {
    "out".into()
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.build_target()?;
        for (i, k) in self.kernels.iter().enumerate() {
            k.validate().map_err(|e| ConfigError(format!("kernels[{i}]: {e}")))?;
        }
        if self.output.formats.is_empty() {
            return cfg("output.formats must name at least one of csv, json");
        }
        if let Some(fs) = &self.experiment.test_functions {
            for (i, f) in fs.iter().enumerate() {
                match f {
                    TestFunctionConfig::Coordinate { index } if *index == 0 || *index > self.target.dim => {
                        return cfg(format!("experiment.test_functions[{i}].index must be in 1..={}", self.target.dim));
                    }
                    TestFunctionConfig::HalfSpace { normal, .. } if normal.len() != self.target.dim => {
                        return cfg(format!("experiment.test_functions[{i}].normal must have length {}", self.target.dim));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of every section except `output`.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Semantic<'a> {
            target: &'a TargetConfig,
            kernels: &'a [KernelSpec],
            experiment: &'a ExperimentSection,
        }
        let canonical = serde_json::to_string(&Semantic {
            target: &self.target,
            kernels: &self.kernels,
            experiment: &self.experiment,
        })
        .expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_target(&self) -> Result<TargetDensity, ConfigError> {
        let t = &self.target;
        let allowed: &[&str] = match t.name.as_str() {
            "uniform_box" | "gaussian_box" | "cone" => &[],
            "uniform_ball" => &["radius"],
            "bimodal" => &["separation", "width", "limit"],
            other => {
                return cfg(format!(
                    "target.name: unknown target `{other}`; expected one of uniform_box, uniform_ball, gaussian_box, cone, bimodal"
                ))
            }
        };
        if let Some(k) = t.parameters.keys().find(|k| !allowed.contains(&k.as_str())) {
            return cfg(format!("target.parameters: unknown key `{k}` for target `{}`", t.name));
        }
        if t.dim == 0 {
            return cfg("target.dim must be positive");
        }
        let param = |k: &str, default: f64| t.parameters.get(k).copied().unwrap_or(default);
        let bbox = |default_lo: f64, default_hi: f64| -> Result<BoundingBox, ConfigError> {
            match &t.bbox {
                Some(b) => {
                    if b.lo.len() != t.dim || b.hi.len() != t.dim {
                        return cfg(format!("target.bbox corners must have length {}", t.dim));
                    }
                    BoundingBox::new(b.lo.clone(), b.hi.clone()).map_err(|e| ConfigError(format!("target.bbox: {e}")))
                }
                None => BoundingBox::cube(t.dim, default_lo, default_hi).map_err(|e| ConfigError(e.to_string())),
            }
        };
        let no_bbox = |name: &str| -> Result<(), ConfigError> {
            if t.bbox.is_some() {
                return cfg(format!("target.bbox is not accepted by `{name}`; its box is fixed by its parameters"));
            }
            Ok(())
        };
        let built = match t.name.as_str() {
            "uniform_box" => uniform_box(bbox(-1.0, 1.0)?),
            "gaussian_box" => gaussian_box(bbox(-2.0, 2.0)?),
            "uniform_ball" => {
                no_bbox("uniform_ball")?;
                uniform_ball(t.dim, param("radius", 1.0))
            }
            "cone" => {
                no_bbox("cone")?;
                cone(t.dim)
            }
            _ => {
                no_bbox("bimodal")?;
                if t.dim != 1 {
                    return cfg("target.dim: `bimodal` is one-dimensional");
                }
                bimodal(param("separation", 1.5), param("width", 0.5), param("limit", 3.5))
            }
        };
        built.map_err(|e| ConfigError(format!("target: {e}")))
    }

    /// Configured test functions, or coordinates, `|x|^2` and the half-space `x_1 > 0`.
    pub fn test_functions(&self) -> Vec<TestFunction> {
        let d = self.target.dim;
        match &self.experiment.test_functions {
            Some(list) => list
                .iter()
                .map(|f| match f {
                    TestFunctionConfig::Coordinate { index } => TestFunction::coordinate(index - 1),
                    TestFunctionConfig::SquaredNorm => TestFunction::squared_norm(),
                    TestFunctionConfig::HalfSpace { normal, offset } => TestFunction::half_space(normal.clone(), *offset),
                })
                .collect(),
            None => {
                let mut v: Vec<TestFunction> = (0..d).map(TestFunction::coordinate).collect();
                v.push(TestFunction::squared_norm());
                let mut normal = vec![0.0; d];
                normal[0] = 1.0;
                v.push(TestFunction::half_space(normal, 0.0));
                v
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[target]
name = "cone"
dim = 1

[[kernels]]
kind = "hit_and_run"

[experiment]
seed = 3
"#;

    #[test]
    fn parses_minimal_config() {
        let c = ExperimentConfig::from_toml(BASE).unwrap();
        assert_eq!(c.experiment.seed, 3);
        assert_eq!(c.kernels, vec![KernelSpec::hit_and_run()]);
        assert_eq!(c.output.formats, vec![Format::Csv, Format::Json]);
    }

    #[test]
    fn seed_is_mandatory() {
        let text = BASE.replace("seed = 3", "");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.0.contains("seed"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml(&BASE.replace("seed = 3", "seed = 3\nsede = 4")).unwrap_err();
        assert!(err.0.contains("sede"), "{err}");
        let err = ExperimentConfig::from_toml(&BASE.replace("hit_and_run", "hit_and_walk")).unwrap_err();
        assert!(err.0.contains("hit_and_walk"), "{err}");
        let err = ExperimentConfig::from_toml(&BASE.replace("\"cone\"", "\"pyramid\"")).unwrap_err();
        assert!(err.0.contains("pyramid"), "{err}");
    }

    #[test]
    fn hash_tracks_semantic_fields_only() {
        let a = ExperimentConfig::from_toml(BASE).unwrap();
        let explicit_default = ExperimentConfig::from_toml(&BASE.replace("seed = 3", "seed = 3\nn = 1000")).unwrap();
        assert_eq!(a.hash(), explicit_default.hash());
        let other_out = ExperimentConfig::from_toml(&format!("{BASE}\n[output]\ndirectory = \"elsewhere\"\n")).unwrap();
        assert_eq!(a.hash(), other_out.hash());
        let other_seed = ExperimentConfig::from_toml(&BASE.replace("seed = 3", "seed = 4")).unwrap();
        assert_ne!(a.hash(), other_seed.hash());
        let other_kernel = ExperimentConfig::from_toml(&BASE.replace("kind = \"hit_and_run\"", "kind = \"hit_and_run\"\ninner_grid = 2048")).unwrap();
        assert_ne!(a.hash(), other_kernel.hash());
    }

    #[test]
    fn target_parameter_checks() {
        let err = ExperimentConfig::from_toml(&BASE.replace("dim = 1", "dim = 1\nparameters = { radius = 2.0 }")).unwrap_err();
        assert!(err.0.contains("radius"));
        let ok = BASE.replace("\"cone\"", "\"uniform_ball\"").replace("dim = 1", "dim = 2\nparameters = { radius = 2.0 }");
        let t = ExperimentConfig::from_toml(&ok).unwrap().build_target().unwrap();
        assert_eq!(t.bbox().hi(), &[2.0, 2.0]);
    }
}
