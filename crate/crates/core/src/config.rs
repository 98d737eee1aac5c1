//! Experiment configuration files (TOML).

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FkError, Result};
use crate::models::{builtin, BetaSchedule, FiniteCtmcModel, InitialLaw, JarzynskiModel, TorusDiffusionModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Oracle,
    Simulate,
    Duality,
    Gibbs,
    BiasSweep,
    Jarzynski,
    CheckConditions,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Oracle => "oracle",
            Experiment::Simulate => "simulate",
            Experiment::Duality => "duality",
            Experiment::Gibbs => "gibbs",
            Experiment::BiasSweep => "bias-sweep",
            Experiment::Jarzynski => "jarzynski",
            Experiment::CheckConditions => "check-conditions",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    M2,
    Ring4,
    Jarzynski2,
    Jarzynski,
    Finite,
    Torus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialSpec {
    ConstantVector { values: Vec<f64> },
    /// `V(x) = offset + slope · x`.
    LinearInState { slope: f64, offset: f64 },
    /// `V_t(x) = ∂_t β_t · H(x)` for a linear schedule.
    JarzynskiSchedule { energy: Vec<f64>, slope: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub beta0: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Dirac(usize),
    Categorical(Vec<f64>),
    #[serde(rename = "uniform")]
    UniformTag(bool),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialField {
    Named(String),
    Spec(InitialSpec),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: Option<ModelKind>,
    pub rates: Option<Vec<Vec<f64>>>,
    pub potential: Option<PotentialSpec>,
    pub potential_sup: Option<f64>,
    pub rate_sup: Option<f64>,
    pub energy: Option<Vec<f64>>,
    pub proposal: Option<Vec<Vec<f64>>>,
    pub schedule: Option<ScheduleSpec>,
    pub initial: Option<InitialField>,
    pub diffusion_coeff: Option<f64>,
    pub euler_step: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicas_list: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dump_every: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub model: ModelSection,
    #[serde(default)]
    pub params: Params,
    pub output: Option<OutputSection>,
}

/// A schema error with the 1-based line it refers to, when known.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// 1-based line of `key = ...` inside `[section]` (or at top level for `None`).
pub fn locate_key(source: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = Some(line.trim_matches(|c| c == '[' || c == ']').trim().to_string());
            continue;
        }
        let in_section = match section {
            None => current.is_none(),
            Some(s) => current.as_deref() == Some(s),
        };
        if in_section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    pub fn parse(source: &str) -> std::result::Result<Self, SchemaError> {
        let cfg: ExperimentConfig = toml::from_str(source).map_err(|e| SchemaError {
            line: e.span().map(|s| line_of_offset(source, s.start)),
            message: e.message().trim().to_string(),
        })?;
        cfg.validate(source)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> std::result::Result<Self, SchemaError> {
        let source = std::fs::read_to_string(path).map_err(|e| SchemaError {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&source)
    }

    fn validate(&self, source: &str) -> std::result::Result<(), SchemaError> {
        let err = |section: Option<&str>, key: &str, message: String| SchemaError {
            line: locate_key(source, section, key).or_else(|| section.and_then(|s| locate_section(source, s))),
            message,
        };
        if self.params.seed.is_none() {
            return Err(err(Some("params"), "seed", "params.seed is required (no nondeterministic default)".into()));
        }
        let needs_n = !matches!(
            self.experiment,
            Experiment::Oracle | Experiment::CheckConditions | Experiment::BiasSweep
        );
        match self.params.n {
            Some(n) if n < 2 => {
                return Err(err(Some("params"), "n", format!("params.n must be >= 2 (N >= 2), got {n}")))
            }
            None if needs_n => {
                return Err(err(Some("params"), "n", "params.n is required for this experiment".into()))
            }
            _ => {}
        }
        if let Some(list) = &self.params.n_list {
            if let Some(bad) = list.iter().find(|n| **n < 2) {
                return Err(err(Some("params"), "n_list", format!("every entry of params.n_list must be >= 2, got {bad}")));
            }
        }
        if let Some(t) = self.params.t {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(err(Some("params"), "t", format!("params.t must be finite and >= 0, got {t}")));
            }
        }
        if let Some(r) = self.params.replicas {
            if r < 2 {
                return Err(err(Some("params"), "replicas", format!("params.replicas must be >= 2, got {r}")));
            }
        }
        if self.experiment == Experiment::Duality && self.params.replicas.unwrap_or(0) < 100 {
            return Err(err(Some("params"), "replicas", "duality needs params.replicas >= 100".into()));
        }
        if matches!(self.experiment, Experiment::Gibbs) && self.params.iters.unwrap_or(0) < 1 {
            return Err(err(Some("params"), "iters", "params.iters must be >= 1".into()));
        }
        self.model
            .build()
            .map_err(|e| err(Some("model"), "kind", format!("invalid model: {e}")))?;
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.params.t.unwrap_or(1.0)
    }

    pub fn seed(&self) -> u64 {
        self.params.seed.unwrap_or_default()
    }
}

fn locate_section(source: &str, section: &str) -> Option<usize> {
    source
        .lines()
        .position(|l| l.trim() == format!("[{section}]"))
        .map(|i| i + 1)
}

/// A model built from a config section.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum BuiltModel {
    Finite {
        model: FiniteCtmcModel,
        init: InitialLaw<usize>,
        jarzynski: Option<JarzynskiModel>,
    },
    Torus {
        model: TorusDiffusionModel,
        init: InitialLaw<Vec<f64>>,
    },
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(FkError::Config(format!("{what} must be a non-empty square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl ModelSection {
    fn finite_init(&self) -> Result<InitialLaw<usize>> {
        Ok(match &self.initial {
            None => InitialLaw::Dirac(0),
            Some(InitialField::Named(s)) if s == "uniform" => InitialLaw::Uniform,
            Some(InitialField::Named(s)) => {
                return Err(FkError::Config(format!("unknown initial law {s:?}")));
            }
            Some(InitialField::Spec(InitialSpec::Dirac(x))) => InitialLaw::Dirac(*x),
            Some(InitialField::Spec(InitialSpec::Categorical(w))) => InitialLaw::Categorical(w.clone()),
            Some(InitialField::Spec(InitialSpec::UniformTag(_))) => InitialLaw::Uniform,
        })
    }

    fn potential_vector(&self, size: usize) -> Result<Vec<f64>> {
        match &self.potential {
            None => Err(FkError::Config("model.potential is required".into())),
            Some(PotentialSpec::ConstantVector { values }) => Ok(values.clone()),
            Some(PotentialSpec::LinearInState { slope, offset }) => {
                Ok((0..size).map(|x| offset + slope * x as f64).collect())
            }
            Some(PotentialSpec::JarzynskiSchedule { energy, slope }) => Ok(energy.iter().map(|h| slope * h).collect()),
        }
    }

    pub fn build(&self) -> Result<BuiltModel> {
        let kind = self.kind.ok_or_else(|| FkError::Config("model.kind is required".into()))?;
        let finite = |model: FiniteCtmcModel, jarzynski: Option<JarzynskiModel>| -> Result<BuiltModel> {
            let init = match (&jarzynski, &self.initial) {
                (Some(j), None) => j.initial_law(),
                _ => self.finite_init()?,
            };
            crate::estimators::initial_vector(&init, model.size())?;
            Ok(BuiltModel::Finite { model, init, jarzynski })
        };
        match kind {
            ModelKind::M2 => finite(builtin::m2(), None),
            ModelKind::Ring4 => finite(builtin::ring4(), None),
            ModelKind::Jarzynski2 => {
                let sched = self.schedule.clone().unwrap_or(ScheduleSpec { beta0: 0.0, slope: 1.0 });
                let j = builtin::jarzynski_two_state(BetaSchedule::linear(sched.beta0, sched.slope))?;
                finite(j.model().clone(), Some(j))
            }
            ModelKind::Jarzynski => {
                let energy = self.energy.clone().ok_or_else(|| FkError::Config("model.energy is required".into()))?;
                let proposal = matrix(
                    self.proposal.as_deref().ok_or_else(|| FkError::Config("model.proposal is required".into()))?,
                    "model.proposal",
                )?;
                let sched = self.schedule.clone().ok_or_else(|| FkError::Config("model.schedule is required".into()))?;
                let j = JarzynskiModel::metropolis(energy, proposal, BetaSchedule::linear(sched.beta0, sched.slope))?;
                finite(j.model().clone(), Some(j))
            }
            ModelKind::Finite => {
                let l = matrix(
                    self.rates.as_deref().ok_or_else(|| FkError::Config("model.rates is required".into()))?,
                    "model.rates",
                )?;
                let size = l.nrows();
                let v = self.potential_vector(size)?;
                let rate_sup = self
                    .rate_sup
                    .unwrap_or_else(|| (0..size).map(|x| -l[(x, x)]).fold(0.0, f64::max));
                let potential_sup = self.potential_sup.unwrap_or_else(|| v.iter().copied().fold(0.0, f64::max));
                let model = FiniteCtmcModel::new(
                    "custom",
                    size,
                    crate::models::RateSchedule::Constant(l),
                    crate::models::PotentialSchedule::Constant(v),
                    potential_sup,
                    rate_sup,
                )?;
                finite(model, None)
            }
            ModelKind::Torus => {
                let base = builtin::torus_default();
                let model = if self.diffusion_coeff.is_some() || self.euler_step.is_some() {
                    use std::f64::consts::TAU;
                    TorusDiffusionModel::new(
                        1,
                        |_, x| vec![-(TAU * x[0]).sin()],
                        self.diffusion_coeff.unwrap_or(base.diffusion_coeff()),
                        self.euler_step.unwrap_or(base.euler_step()),
                        |_, x| 1.0 - (TAU * x[0]).cos(),
                        2.0,
                        true,
                    )?
                } else {
                    base
                };
                let init = match &self.initial {
                    None | Some(InitialField::Named(_)) | Some(InitialField::Spec(InitialSpec::UniformTag(_))) => {
                        InitialLaw::Uniform
                    }
                    Some(_) => return Err(FkError::Config("torus models support only a uniform initial law".into())),
                };
                Ok(BuiltModel::Torus { model, init })
            }
        }
    }
}

/// One entry of the built-in model catalog.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub potential_sup: f64,
    /// A `[model]` table that selects this model.
    pub fragment: &'static str,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FragmentDoc {
    model: ModelSection,
}

impl CatalogEntry {
    pub fn load(&self) -> Result<BuiltModel> {
        let doc: FragmentDoc = toml::from_str(self.fragment).map_err(|e| FkError::Config(e.to_string()))?;
        doc.model.build()
    }
}

pub fn builtin_catalog() -> Vec<CatalogEntry> {
    vec![
        CatalogEntry {
            name: "m2",
            description: "two states {0,1}; rates 0->1 = 1, 1->0 = 2; potential V = (0, 1)",
            potential_sup: 1.0,
            fragment: "[model]\nkind = \"m2\"\ninitial = { dirac = 0 }\n",
        },
        CatalogEntry {
            name: "ring4",
            description: "four states on a ring; clockwise rate 1, counter-clockwise 0.5; potential V = (0, 0.5, 1, 1.5)",
            potential_sup: 1.5,
            fragment: "[model]\nkind = \"ring4\"\ninitial = \"uniform\"\n",
        },
        CatalogEntry {
            name: "jarzynski2",
            description: "two states with energy H = (0, 1) under Metropolis dynamics at inverse temperature \
                          beta_t = beta0 + slope * t; potential slope * H; starts from the Gibbs law at beta0",
            potential_sup: 1.0,
            fragment: "[model]\nkind = \"jarzynski2\"\nschedule = { beta0 = 0.0, slope = 1.0 }\n",
        },
        CatalogEntry {
            name: "torus",
            description: "diffusion on the circle R/Z with drift -sin(2 pi x), diffusion_coeff 0.5, \
                          euler_step 0.01; potential 1 - cos(2 pi x); uniform start",
            potential_sup: 2.0,
            fragment: "[model]\nkind = \"torus\"\ndiffusion_coeff = 0.5\neuler_step = 0.01\n",
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    const ORACLE: &str = r#"
experiment = "oracle"

[model]
kind = "m2"

[params]
t = 1.0
seed = 1
"#;

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::parse(ORACLE).unwrap();
        assert_eq!(cfg.experiment, Experiment::Oracle);
        assert!(matches!(cfg.model.build().unwrap(), BuiltModel::Finite { .. }));
    }

    #[test]
    fn missing_seed_is_rejected() {
        let src = ORACLE.replace("seed = 1\n", "");
        let e = ExperimentConfig::parse(&src).unwrap_err();
        assert!(e.message.contains("seed"));
    }

    #[test]
    fn bound_violation_names_line() {
        let src = "experiment = \"simulate\"\n[model]\nkind = \"m2\"\n[params]\nn = 1\nseed = 3\n";
        let e = ExperimentConfig::parse(src).unwrap_err();
        assert_eq!(e.line, Some(5));
        assert!(e.message.contains(">= 2"), "{}", e.message);
    }

    #[test]
    fn syntax_errors_carry_lines() {
        let src = "experiment = \"oracle\"\n[model]\nkind = \"m7\"\n[params]\nseed = 1\n";
        let e = ExperimentConfig::parse(src).unwrap_err();
        assert_eq!(e.line, Some(3));
        let src = "experiment = \"oracle\"\n[model]\nkind = \"m2\"\nbogus = 1\n[params]\nseed = 1\n";
        assert_eq!(ExperimentConfig::parse(src).unwrap_err().line, Some(4));
    }

    #[test]
    fn custom_finite_models() {
        let src = r#"
experiment = "oracle"
[model]
kind = "finite"
rates = [[-1.0, 1.0, 0.0], [0.5, -1.0, 0.5], [0.0, 2.0, -2.0]]
potential = { kind = "linear-in-state", slope = 0.5, offset = 0.1 }
initial = { categorical = [0.2, 0.3, 0.5] }
[params]
seed = 4
"#;
        let cfg = ExperimentConfig::parse(src).unwrap();
        match cfg.model.build().unwrap() {
            BuiltModel::Finite { model, init, .. } => {
                assert_eq!(model.size(), 3);
                assert!((model.potential_vector(0.0)[2] - 1.1).abs() < 1e-15);
                assert_eq!(init, InitialLaw::Categorical(vec![0.2, 0.3, 0.5]));
            }
            _ => panic!("expected finite"),
        }
        let bad = src.replace("-2.0]]", "-3.0]]");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }

    #[test]
    fn catalog_entries_load() {
        let catalog = builtin_catalog();
        assert!(catalog.iter().any(|e| e.name == "m2"));
        for entry in &catalog {
            let sup = match entry.load().unwrap() {
                BuiltModel::Finite { model, .. } => crate::models::Model::potential_sup(&model),
                BuiltModel::Torus { model, .. } => crate::models::Model::potential_sup(&model),
            };
            assert_eq!(sup, entry.potential_sup, "{}", entry.name);
        }
    }
}
