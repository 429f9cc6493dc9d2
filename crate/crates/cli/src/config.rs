//! TOML experiment description and its validation into a runnable plan.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use dualbench::algebra::Spin;
use dualbench::exact::{int, parse_rational, Rational};
use dualbench::lattice::{build_kernel, GraphSpec, Kernel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("invalid model: {0}")]
    Model(#[from] dualbench::Error),
}

fn schema(msg: impl Into<String>) -> ConfigError {
    ConfigError::Schema(msg.into())
}

/// A number written as an integer, a decimal or a string such as "1/4".
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Number {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Number {
    pub fn exact(&self) -> Result<Rational, ConfigError> {
        match self {
            Number::Int(n) => Ok(int(*n)),
            Number::Float(x) => parse_rational(&x.to_string()).map_err(ConfigError::from),
            Number::Text(s) => parse_rational(s).map_err(ConfigError::from),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub graph: GraphBlock,
    pub run: RunBlock,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub kind: ModelKind,
    pub j: Option<Number>,
    pub m: Option<u32>,
    pub lambda: Option<Number>,
    #[serde(default)]
    pub rho: BTreeMap<String, Number>,
    #[serde(default, rename = "T")]
    pub temperature: BTreeMap<String, Number>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphBlock {
    /// Shorthand for sites "1".."n" joined by unit-rate bonds.
    pub chain: Option<usize>,
    #[serde(default)]
    pub sites: Vec<String>,
    /// `[from, to]` or `[from, to, rate]`.
    #[serde(default)]
    pub edges: Vec<Vec<String>>,
    /// Boundary sites; defaults to the sites named in the reservoir map.
    pub boundary: Option<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub experiment: Experiment,
    pub t: Option<f64>,
    pub dt: Option<f64>,
    pub samples: Option<u64>,
    pub seed: Option<u64>,
    /// Largest particle number checked (or the single sector simulated).
    pub sector: Option<u32>,
    pub cutoff: Option<usize>,
    /// Standard errors allowed in Monte Carlo comparisons; for limits, the
    /// allowed error of the deterministic limit.
    pub tolerance: Option<f64>,
    pub init: Option<Vec<f64>>,
    pub dual_init: Option<Vec<u32>>,
    /// 2j values or m values for the limits experiment.
    pub scales: Option<Vec<u32>>,
    pub correlations: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Sep,
    Sep2j,
    Sip,
    Irw,
    LadderSep,
    Bmp,
    Bep,
    Kmp,
    DualKmp,
    BoundarySep,
    BoundarySep2j,
    BoundaryBep,
    DualAbsorbingSep2j,
    DualAbsorbingSip,
}

impl ModelKind {
    pub const ALL: [ModelKind; 14] = [
        ModelKind::Sep,
        ModelKind::Sep2j,
        ModelKind::Sip,
        ModelKind::Irw,
        ModelKind::LadderSep,
        ModelKind::Bmp,
        ModelKind::Bep,
        ModelKind::Kmp,
        ModelKind::DualKmp,
        ModelKind::BoundarySep,
        ModelKind::BoundarySep2j,
        ModelKind::BoundaryBep,
        ModelKind::DualAbsorbingSep2j,
        ModelKind::DualAbsorbingSip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Sep => "sep",
            ModelKind::Sep2j => "sep2j",
            ModelKind::Sip => "sip",
            ModelKind::Irw => "irw",
            ModelKind::LadderSep => "ladder_sep",
            ModelKind::Bmp => "bmp",
            ModelKind::Bep => "bep",
            ModelKind::Kmp => "kmp",
            ModelKind::DualKmp => "dual_kmp",
            ModelKind::BoundarySep => "boundary_sep",
            ModelKind::BoundarySep2j => "boundary_sep2j",
            ModelKind::BoundaryBep => "boundary_bep",
            ModelKind::DualAbsorbingSep2j => "dual_absorbing_sep2j",
            ModelKind::DualAbsorbingSip => "dual_absorbing_sip",
        }
    }

    /// Experiments the runner implements for this kind.
    pub fn experiments(self) -> &'static [Experiment] {
        use Experiment::*;
        match self {
            ModelKind::Sep | ModelKind::Sep2j => {
                &[CheckAlgebra, CheckDuality, CheckStationary, Simulate, McDuality, Limits]
            }
            ModelKind::Sip => &[CheckAlgebra, CheckDuality, CheckStationary, Simulate, McDuality, Limits],
            ModelKind::Irw => &[CheckAlgebra, CheckDuality, CheckStationary, Simulate, McDuality],
            ModelKind::LadderSep => &[CheckDuality],
            ModelKind::Bmp => &[CheckAlgebra, CheckDuality, Simulate, McDuality],
            ModelKind::Bep => &[CheckAlgebra, CheckDuality, Simulate, McDuality, Limits],
            ModelKind::Kmp | ModelKind::DualKmp => &[CheckDuality, CheckStationary, Simulate, Profile],
            ModelKind::BoundarySep | ModelKind::BoundarySep2j => &[CheckDuality, Simulate, McDuality, Profile],
            ModelKind::BoundaryBep => &[CheckDuality, Simulate, McDuality, Profile],
            ModelKind::DualAbsorbingSep2j | ModelKind::DualAbsorbingSip => {
                &[CheckDuality, Simulate, McDuality, Profile]
            }
        }
    }

    pub fn needs_boundary(self) -> bool {
        matches!(
            self,
            ModelKind::BoundarySep
                | ModelKind::BoundarySep2j
                | ModelKind::BoundaryBep
                | ModelKind::DualAbsorbingSep2j
                | ModelKind::DualAbsorbingSip
        )
    }

    /// Whether reservoirs are given as temperatures rather than densities.
    pub fn energy_like(self) -> bool {
        matches!(
            self,
            ModelKind::Bmp
                | ModelKind::Bep
                | ModelKind::Kmp
                | ModelKind::DualKmp
                | ModelKind::BoundaryBep
                | ModelKind::DualAbsorbingSip
        )
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    CheckAlgebra,
    CheckDuality,
    CheckStationary,
    Simulate,
    McDuality,
    Profile,
    Limits,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::CheckAlgebra => "check-algebra",
            Experiment::CheckDuality => "check-duality",
            Experiment::CheckStationary => "check-stationary",
            Experiment::Simulate => "simulate",
            Experiment::McDuality => "mc-duality",
            Experiment::Profile => "profile",
            Experiment::Limits => "limits",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Validated model parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub kind: ModelKind,
    pub spin: Spin,
    pub m: u32,
    pub lambda: Rational,
}

/// Validated run settings with defaults filled in.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub experiment: Experiment,
    pub t: f64,
    pub dt: f64,
    pub samples: u64,
    pub seed: u64,
    pub sector: Option<u32>,
    pub cutoff: usize,
    pub tolerance: Option<f64>,
    pub init: Option<Vec<f64>>,
    pub dual_init: Option<Vec<u32>>,
    pub scales: Option<Vec<u32>>,
    pub correlations: bool,
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub model: Model,
    pub kernel: Kernel,
    pub run: RunSettings,
    /// Uniform chain driven only at its ends, where profiles are affine.
    pub linear_expected: bool,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn plan(&self, seed_override: Option<u64>) -> Result<Plan, ConfigError> {
        let model = self.model.validate()?;
        if !model.kind.experiments().contains(&self.run.experiment) {
            return Err(schema(format!(
                "experiment {} is not available for model {}; see `dualbench catalog`",
                self.run.experiment, model.kind
            )));
        }
        let kernel = self.kernel(model.kind)?;
        let run = self.run.validate(seed_override)?;
        if let Some(init) = &run.init {
            let want = expected_init_len(&model, self.run.experiment, &kernel);
            if init.len() != want {
                return Err(schema(format!("run.init has {} entries, expected {want}", init.len())));
            }
        }
        let linear_expected = self.graph.chain.is_some_and(|n| {
            let ends = ["1".to_string(), n.to_string()];
            self.graph.edges.is_empty() && kernel.boundary().iter().all(|b| ends.contains(&kernel.names()[b.site]))
        });
        Ok(Plan { model, kernel, run, linear_expected })
    }

    fn kernel(&self, kind: ModelKind) -> Result<Kernel, ConfigError> {
        let g = &self.graph;
        let mut spec = match (g.chain, g.sites.is_empty()) {
            (Some(_), false) => return Err(schema("graph: give either `chain` or `sites`, not both")),
            (Some(0), true) => return Err(schema("graph.chain must be positive")),
            (Some(n), true) => GraphSpec::chain(n),
            (None, false) => GraphSpec { sites: g.sites.clone(), ..GraphSpec::default() },
            (None, true) => return Err(schema("graph: `chain` or `sites` is required")),
        };
        for edge in &g.edges {
            let rate = match edge.as_slice() {
                [_, _] => int(1),
                [_, _, r] => parse_rational(r)?,
                _ => return Err(schema(format!("edge {edge:?} must be [from, to] or [from, to, rate]"))),
            };
            spec.edges.push((edge[0].clone(), edge[1].clone(), rate));
        }

        let (params, label) = if kind.energy_like() {
            if !self.model.rho.is_empty() {
                return Err(schema(format!("model {kind} takes temperatures `T`, not `rho`")));
            }
            (&self.model.temperature, "T")
        } else {
            if !self.model.temperature.is_empty() {
                return Err(schema(format!("model {kind} takes densities `rho`, not `T`")));
            }
            (&self.model.rho, "rho")
        };
        let boundary: Vec<String> = match &g.boundary {
            Some(b) => b.clone(),
            None => params.keys().cloned().collect(),
        };
        if let Some(stray) = params.keys().find(|k| !boundary.contains(k)) {
            return Err(schema(format!("{label} given for {stray:?}, which is not a boundary site")));
        }
        for site in &boundary {
            let param = params.get(site).map(Number::exact).transpose()?;
            if let Some(p) = &param {
                let upper = if kind.energy_like() { None } else { Some(int(1)) };
                if *p < int(0) || upper.is_some_and(|u| *p > u) {
                    return Err(schema(format!("{label} at {site:?} is out of range: {p}")));
                }
            }
            spec.boundary.push((site.clone(), param));
        }
        if kind.needs_boundary() && spec.boundary.is_empty() {
            return Err(schema(format!("model {kind} needs boundary sites with `{label}` values")));
        }
        Ok(build_kernel(&spec)?)
    }
}

fn expected_init_len(model: &Model, experiment: Experiment, kernel: &Kernel) -> usize {
    match model.kind {
        ModelKind::DualAbsorbingSep2j | ModelKind::DualAbsorbingSip => kernel.n_sites() + kernel.n_sinks(),
        ModelKind::Bmp if experiment == Experiment::Simulate => kernel.n_sites() * model.m as usize,
        _ => kernel.n_sites(),
    }
}

impl ModelBlock {
    fn validate(&self) -> Result<Model, ConfigError> {
        let spin = match (&self.j, self.kind) {
            (Some(j), _) => Spin::from_rational(&j.exact()?)?,
            (None, ModelKind::Sep | ModelKind::BoundarySep) => Spin::from_two_j(1)?,
            (None, ModelKind::Sep2j | ModelKind::BoundarySep2j | ModelKind::DualAbsorbingSep2j | ModelKind::LadderSep) => {
                return Err(schema(format!("model {} needs `j`", self.kind)));
            }
            (None, _) => Spin::from_two_j(1)?,
        };
        if matches!(self.kind, ModelKind::Sep | ModelKind::BoundarySep) && spin.two_j() != 1 {
            return Err(schema("sep has j = 1/2; use sep2j for other spins"));
        }
        let m = self.m.unwrap_or(match self.kind {
            ModelKind::Kmp | ModelKind::DualKmp => 2,
            _ => 1,
        });
        if m == 0 {
            return Err(schema("m must be at least 1"));
        }
        let lambda = match &self.lambda {
            Some(l) => l.exact()?,
            None => Rational::new(1.into(), 4.into()),
        };
        Ok(Model { kind: self.kind, spin, m, lambda })
    }
}

impl RunBlock {
    fn validate(&self, seed_override: Option<u64>) -> Result<RunSettings, ConfigError> {
        let t = self.t.unwrap_or(0.5);
        if !(t.is_finite() && t >= 0.0) {
            return Err(schema("run.t must be a nonnegative number"));
        }
        let dt = self.dt.unwrap_or(0.01);
        if !(dt.is_finite() && dt > 0.0) {
            return Err(schema("run.dt must be positive"));
        }
        let samples = self.samples.unwrap_or(10_000);
        if samples == 0 {
            return Err(schema("run.samples must be positive"));
        }
        let cutoff = self.cutoff.unwrap_or(12);
        if cutoff < 2 {
            return Err(schema("run.cutoff must be at least 2"));
        }
        if let Some(tol) = self.tolerance {
            if !(tol.is_finite() && tol > 0.0) {
                return Err(schema("run.tolerance must be positive"));
            }
        }
        if let Some(init) = &self.init {
            if init.iter().any(|x| !x.is_finite()) {
                return Err(schema("run.init entries must be finite"));
            }
        }
        Ok(RunSettings {
            experiment: self.experiment,
            t,
            dt,
            samples,
            seed: seed_override.or(self.seed).unwrap_or(1),
            sector: self.sector,
            cutoff,
            tolerance: self.tolerance,
            init: self.init.clone(),
            dual_init: self.dual_init.clone(),
            scales: self.scales.clone(),
            correlations: self.correlations.unwrap_or(false),
        })
    }
}
