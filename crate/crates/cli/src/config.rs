//! Experiment configuration. The JSON layout is described by
//! `config.schema.json` next to this crate's manifest.

use ggflow::dvt::DvtOptions;
use ggflow::graph::SystemFile;
use ggflow::{DissipationFamily, EntropyFamily};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Evolve,
    Dvt,
    Jko,
    Ldp,
    Check,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Evolve => "evolve",
            Scenario::Dvt => "dvt",
            Scenario::Jko => "jko",
            Scenario::Ldp => "ldp",
            Scenario::Check => "check",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSource {
    Inline(SystemFile),
    File { file: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveSection {
    pub t_end: f64,
    pub dt: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for EvolveSection {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            dt: 1e-3,
            rtol: 1e-8,
            atol: 1e-12,
        }
    }
}

/// Transport-cost settings: the horizon `tau` and the solver options.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DvtSection {
    pub tau: f64,
    pub intervals: usize,
    pub epsilon_schedule: Vec<f64>,
    pub kkt_tol: f64,
    pub max_iter: usize,
    pub dissipation_scale: f64,
}

impl Default for DvtSection {
    fn default() -> Self {
        let o = DvtOptions::default();
        Self {
            tau: 1.0,
            intervals: o.intervals,
            epsilon_schedule: o.epsilon_schedule,
            kkt_tol: o.kkt_tol,
            max_iter: o.max_iter,
            dissipation_scale: o.dissipation_scale,
        }
    }
}

impl DvtSection {
    pub fn options(&self) -> DvtOptions {
        DvtOptions {
            intervals: self.intervals,
            epsilon_schedule: self.epsilon_schedule.clone(),
            kkt_tol: self.kkt_tol,
            max_iter: self.max_iter,
            dissipation_scale: self.dissipation_scale,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JkoSection {
    pub t_end: f64,
    pub tau_list: Vec<f64>,
    pub intervals: usize,
    /// Grid step of the semigroup reference.
    pub reference_dt: f64,
}

impl Default for JkoSection {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            tau_list: vec![0.2, 0.1, 0.05],
            intervals: 8,
            reference_dt: 5e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LdpSection {
    pub particles: usize,
    pub t_end: f64,
    pub bins: usize,
}

impl Default for LdpSection {
    fn default() -> Self {
        Self {
            particles: 10_000,
            t_end: 1.0,
            bins: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Accepted `|EDB deficit| / E(rho_0)`.
    pub edb_rel: f64,
    /// Accepted continuity-equation residual of computed curves.
    pub ce: f64,
    /// Accepted relative drift of the total mass.
    pub mass_rel: f64,
    /// The particle scenario accepts a sup-TV gap of `lln_scale / sqrt(n)`
    /// to the deterministic evolution.
    pub lln_scale: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            edb_rel: 1e-4,
            ce: 1e-6,
            mass_rel: 1e-10,
            lln_scale: 5.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: Option<Scenario>,
    pub system: SystemSource,
    #[serde(default = "default_dissipation")]
    pub dissipation: DissipationFamily,
    #[serde(default = "default_entropy")]
    pub entropy: EntropyFamily,
    /// Initial density with respect to `pi`.
    pub initial: Vec<f64>,
    /// Final density for the `dvt` scenario.
    #[serde(default)]
    pub target: Option<Vec<f64>>,
    #[serde(default)]
    pub evolve: EvolveSection,
    #[serde(default)]
    pub dvt: DvtSection,
    #[serde(default)]
    pub jko: JkoSection,
    #[serde(default)]
    pub ldp: LdpSection,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_dissipation() -> DissipationFamily {
    DissipationFamily::Cosh
}

fn default_entropy() -> EntropyFamily {
    EntropyFamily::Boltzmann { gamma: 1.0 }
}

/// A configuration problem, reported with the offending field.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError(format!("{field} must be a positive number (got {v})")))
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError(format!("{path}: {}", e.inner()))
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("config: cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let SystemSource::File { file } = &cfg.system {
            if file.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.system = SystemSource::File { file: base.join(file) };
            }
        }
        Ok(cfg)
    }

    pub fn system_file(&self) -> Result<SystemFile, ConfigError> {
        match &self.system {
            SystemSource::Inline(s) => Ok(s.clone()),
            SystemSource::File { file } => {
                let text = std::fs::read_to_string(file)
                    .map_err(|e| ConfigError(format!("system.file: cannot read {}: {e}", file.display())))?;
                serde_json::from_str(&text).map_err(|e| ConfigError(format!("system.file: {e}")))
            }
        }
    }

    /// Range checks on the numeric parameters of the selected scenario.
    pub fn validate(&self, scenario: Scenario) -> Result<(), ConfigError> {
        let e = &self.evolve;
        positive("evolve.t_end", e.t_end)?;
        positive("evolve.dt", e.dt)?;
        if e.dt > e.t_end {
            return Err(ConfigError(format!(
                "evolve.dt ({}) exceeds evolve.t_end ({})",
                e.dt, e.t_end
            )));
        }
        positive("evolve.rtol", e.rtol)?;
        positive("evolve.atol", e.atol)?;
        positive("tolerances.edb_rel", self.tolerances.edb_rel)?;
        positive("tolerances.ce", self.tolerances.ce)?;
        positive("tolerances.mass_rel", self.tolerances.mass_rel)?;
        positive("tolerances.lln_scale", self.tolerances.lln_scale)?;
        match scenario {
            Scenario::Dvt => {
                positive("dvt.tau", self.dvt.tau)?;
                self.dvt
                    .options()
                    .validate()
                    .map_err(|err| ConfigError(format!("dvt: {err}")))?;
                if self.target.is_none() {
                    return Err(ConfigError("target: required by the dvt scenario".into()));
                }
            }
            Scenario::Jko => {
                let j = &self.jko;
                positive("jko.t_end", j.t_end)?;
                positive("jko.reference_dt", j.reference_dt)?;
                if j.tau_list.is_empty() {
                    return Err(ConfigError("jko.tau_list: must not be empty".into()));
                }
                for (k, &t) in j.tau_list.iter().enumerate() {
                    positive(&format!("jko.tau_list[{k}]"), t)?;
                    if t > j.t_end {
                        return Err(ConfigError(format!("jko.tau_list[{k}] ({t}) exceeds jko.t_end")));
                    }
                }
                if j.intervals == 0 {
                    return Err(ConfigError("jko.intervals must be at least 1".into()));
                }
            }
            Scenario::Ldp => {
                let l = &self.ldp;
                if l.particles == 0 {
                    return Err(ConfigError("ldp.particles must be at least 1".into()));
                }
                positive("ldp.t_end", l.t_end)?;
                if l.bins == 0 {
                    return Err(ConfigError("ldp.bins must be at least 1".into()));
                }
            }
            Scenario::Evolve | Scenario::Check => {}
        }
        Ok(())
    }
}
