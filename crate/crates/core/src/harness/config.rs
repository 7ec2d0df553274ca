//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distributions::{EntryKind, EntryLaw};
use crate::ensembles::{DeformedModel, Spike, SpikeSpec};
use crate::error::{Result, RmtError};
use crate::limits::RealDiagConvention;
use crate::matrix::FieldKind;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "RMTLAB_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Pooled rescaled outliers against the limiting law.
    FluctuationVsLimit,
    /// Outlier counts and locations.
    AsConvergence,
    /// Normalized resolvent traces of the minor.
    ResolventLimits,
    /// Covariance of normalized sesquilinear forms in the resolvent.
    SesquilinearClt,
    /// Finite-`N` matrices `V_{k_j,N}` against their limit.
    EmpiricalVConvergence,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::FluctuationVsLimit => "fluctuation_vs_limit",
            ExperimentKind::AsConvergence => "as_convergence",
            ExperimentKind::ResolventLimits => "resolvent_limits",
            ExperimentKind::SesquilinearClt => "sesquilinear_clt",
            ExperimentKind::EmpiricalVConvergence => "empirical_v_convergence",
        }
    }
}

/// Which limiting law the simulated outliers are compared with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitSelection {
    /// Derived from the spike geometry.
    #[default]
    Auto,
    Convolution,
    Guoe,
    Frame,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoPointParams {
    pub p: f64,
    pub ratio: f64,
}

fn default_seed() -> u64 {
    20_240_601
}

fn default_sigma() -> f64 {
    1.0
}

fn default_reference_factor() -> usize {
    10
}

fn default_as_tolerance() -> f64 {
    0.15
}

fn one() -> usize {
    1
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_one(v: &usize) -> bool {
    *v == 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Matrix dimension `N`.
    pub n: usize,
    pub replications: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// `gaussian`, `rademacher`, `uniform` or `twopoint`.
    pub law: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_point: Option<TwoPointParams>,
    pub field: FieldKind,
    #[serde(default)]
    pub limit: LimitSelection,
    /// Spike whose outliers are studied; all supercritical spikes when absent
    /// (the first one for experiments that need a single spike).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_spike: Option<usize>,
    /// Outlier margin beyond `2σ`; defaults to a quarter of the smallest gap
    /// `ρ_θ − 2σ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default)]
    pub real_diag_convention: RealDiagConvention,
    /// Reference draws per retained replication.
    #[serde(default = "default_reference_factor")]
    pub reference_factor: usize,
    /// Distance to `ρ_θ` accepted as convergence.
    #[serde(default = "default_as_tolerance")]
    pub as_tolerance: f64,
    /// Allows `k > floor(N^0.49)`.
    #[serde(default, skip_serializing_if = "is_false")]
    pub allow_large_k: bool,
    /// Independent form vectors drawn per sampled minor.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub forms_per_minor: usize,
    /// Draws of `V_{k_j,N}` per sampled minor, each with fresh `W_k` and `Y`.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub draws_per_minor: usize,
    /// Covariance of the form coordinates; `[[1.0]]` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form_covariance: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub spikes: Vec<Spike>,
}

impl ExperimentConfig {
    /// A config with every optional field at its default.
    pub fn new(
        experiment: ExperimentKind,
        n: usize,
        replications: usize,
        law: &str,
        field: FieldKind,
        spikes: Vec<Spike>,
    ) -> Self {
        ExperimentConfig {
            experiment,
            n,
            replications,
            seed: default_seed(),
            sigma: default_sigma(),
            law: law.to_string(),
            two_point: None,
            field,
            limit: LimitSelection::Auto,
            target_spike: None,
            delta: None,
            real_diag_convention: RealDiagConvention::default(),
            reference_factor: default_reference_factor(),
            as_tolerance: default_as_tolerance(),
            allow_large_k: false,
            forms_per_minor: 1,
            draws_per_minor: 1,
            form_covariance: None,
            workers: None,
            output: None,
            spikes,
        }
    }

    pub fn entry_law(&self) -> Result<EntryLaw> {
        let kind = EntryKind::from_name(&self.law, self.two_point.map(|t| (t.p, t.ratio)))?;
        EntryLaw::new(kind, self.sigma)
    }

    pub fn spike_spec(&self) -> Result<SpikeSpec> {
        SpikeSpec::new(self.sigma, self.spikes.clone())
    }

    pub fn model(&self) -> Result<DeformedModel> {
        DeformedModel::new(self.n, self.entry_law()?, self.spike_spec()?)
    }

    /// Largest admissible support dimension `floor(N^0.49)`.
    pub fn max_k(&self) -> usize {
        (self.n as f64).powf(0.49).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RmtError::Config(m));
        if self.n < 50 {
            return bad(format!("n must be at least 50, got {}", self.n));
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.reference_factor == 0 {
            return bad("reference_factor must be at least 1".into());
        }
        if self.forms_per_minor == 0 || self.draws_per_minor == 0 {
            return bad("forms_per_minor and draws_per_minor must be at least 1".into());
        }
        if !(self.as_tolerance > 0.0) {
            return bad("as_tolerance must be positive".into());
        }
        if let Some(d) = self.delta {
            if !(d > 0.0) {
                return bad(format!("delta must be positive, got {d}"));
            }
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if self.spikes.is_empty() {
            return bad("at least one spike is required".into());
        }
        let model = self.model()?;
        let k = model.frame.k();
        if k > self.max_k() && !self.allow_large_k {
            return bad(format!(
                "support dimension k = {k} exceeds floor(N^0.49) = {} for N = {}; \
                 the limit theory needs k = o(N^0.5). Set allow_large_k = true to override",
                self.max_k(),
                self.n
            ));
        }
        if let Some(j) = self.target_spike {
            match self.spikes.get(j) {
                None => return bad(format!("target_spike {j} is out of range")),
                Some(s) if !(s.theta > self.sigma) => {
                    return bad(format!(
                        "target_spike {j} has theta = {} which is not above sigma = {}",
                        s.theta, self.sigma
                    ))
                }
                _ => {}
            }
        }
        if self.experiment != ExperimentKind::AsConvergence && model.spec.supercritical().is_empty() {
            return bad("no spike exceeds sigma, so there are no outliers to study".into());
        }
        if let Some(c) = &self.form_covariance {
            crate::theory::covariance_factor(c).map_err(|e| RmtError::Config(format!("form_covariance: {e}")))?;
        }
        for s in &self.spikes {
            if s.theta > self.sigma && s.theta <= 1.2 * self.sigma {
                log::warn!(
                    "theta = {} is within 20% of sigma; outliers separate slowly at this N",
                    s.theta
                );
            }
        }
        Ok(())
    }

    /// Spikes studied by the fluctuation experiment.
    pub fn target_spikes(&self) -> Result<Vec<usize>> {
        match self.target_spike {
            Some(j) => Ok(vec![j]),
            None => Ok(self.spike_spec()?.supercritical()),
        }
    }

    /// The single spike used by resolvent-based experiments.
    pub fn primary_spike(&self) -> Result<usize> {
        self.target_spikes()?
            .first()
            .copied()
            .ok_or_else(|| RmtError::Config("no supercritical spike".into()))
    }

    /// Applies `RMTLAB_SEED` and then an explicit override, which wins.
    pub fn resolve_seed(&mut self, cli: Option<u64>) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| RmtError::Config(format!("{SEED_ENV}={v} is not an unsigned integer")))?;
        }
        if let Some(s) = cli {
            self.seed = s;
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| RmtError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| RmtError::Config(e.to_string()))
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_toml_str(&text).map_err(|e| match e {
        RmtError::Config(m) => RmtError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_config(cfg: &ExperimentConfig, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, cfg.to_toml_string()?)?;
    Ok(())
}
