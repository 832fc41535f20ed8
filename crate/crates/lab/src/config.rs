use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use zsp_core::gaussian::ThetaParams;
use zsp_core::kernel::FilterKind;
use zsp_core::prompting::GaussianStrategy;
use zsp_core::ssl::VicregParams;

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ThetaSweep,
    Convergence,
    PromptCompare,
    Dependence,
    Identities,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ThetaSweep => "theta-sweep",
            Self::Convergence => "convergence",
            Self::PromptCompare => "prompt-compare",
            Self::Dependence => "dependence",
            Self::Identities => "identities",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    ConditionalMean,
    InfoDensity,
}

impl Route {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ConditionalMean => "conditional_mean",
            Self::InfoDensity => "info_density",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteChoice {
    ConditionalMean,
    InfoDensity,
    #[default]
    Both,
}

impl RouteChoice {
    pub fn routes(&self) -> Vec<Route> {
        match self {
            Self::ConditionalMean => vec![Route::ConditionalMean],
            Self::InfoDensity => vec![Route::InfoDensity],
            Self::Both => vec![Route::ConditionalMean, Route::InfoDensity],
        }
    }
}

/// Bandwidths default to the median heuristic on the fitted sample; λ
/// defaults to N^{-1/(β+p)}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSettings {
    pub bandwidth_x: Option<f64>,
    pub bandwidth_z: Option<f64>,
    pub filter: FilterKind,
    pub lambda: Option<f64>,
    pub prompt_lambda: Option<f64>,
    pub schedule_beta: f64,
    pub schedule_p: f64,
}

impl Default for KernelSettings {
    fn default() -> Self {
        Self {
            bandwidth_x: None,
            bandwidth_z: None,
            filter: FilterKind::Tikhonov,
            lambda: None,
            prompt_lambda: None,
            schedule_beta: 1.0,
            schedule_p: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSettings {
    pub n_train: usize,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub out_dim: usize,
    pub prompts: usize,
    pub vicreg: VicregParams,
}

impl Default for TrainerSettings {
    fn default() -> Self {
        Self {
            n_train: 1000,
            steps: 100,
            lr: 0.05,
            batch: 64,
            out_dim: 2,
            prompts: 500,
            vicreg: VicregParams {
                normalize: true,
                ..VicregParams::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThetaSweepSettings {
    pub n_test: usize,
    pub n_mc: usize,
    pub resdep_nz: usize,
    pub resdep_nx: usize,
    pub trainer: Option<TrainerSettings>,
}

impl Default for ThetaSweepSettings {
    fn default() -> Self {
        Self {
            n_test: 20000,
            n_mc: 2000,
            resdep_nz: 2000,
            resdep_nx: 64,
            trainer: Some(TrainerSettings::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    N,
    M,
}

impl Sweep {
    pub fn name(&self) -> &'static str {
        match self {
            Self::N => "n",
            Self::M => "m",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSettings {
    pub sweeps: Vec<Sweep>,
    pub n_test: usize,
    pub oracle_mc: usize,
    /// Prompt count held fixed during the N-sweep.
    pub m_fixed: usize,
    /// Pre-training size held fixed during the M-sweep.
    pub n_fixed: usize,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        Self {
            sweeps: vec![Sweep::N, Sweep::M],
            n_test: 200,
            oracle_mc: 4000,
            m_fixed: 800,
            n_fixed: 800,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptCompareSettings {
    pub strategies: Vec<GaussianStrategy>,
    pub topk: Vec<usize>,
    pub n_pretrain: usize,
    pub n_eval: usize,
    pub bias_mc: usize,
}

impl Default for PromptCompareSettings {
    fn default() -> Self {
        Self {
            strategies: vec![
                GaussianStrategy::Unbiased,
                GaussianStrategy::matched_class_conditional(2),
                GaussianStrategy::ClassConditional {
                    shift: [vec![1.5, 1.5], vec![0.0, 0.0]],
                },
                GaussianStrategy::TemplateBased {
                    direction: vec![-3.0, -3.0],
                    scale: 1.0,
                },
            ],
            topk: vec![1, 2],
            n_pretrain: 800,
            n_eval: 2000,
            bias_mc: 20000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DependenceSettings {
    pub rho: f64,
    pub n: usize,
    pub lambda: f64,
    pub components: usize,
}

impl Default for DependenceSettings {
    fn default() -> Self {
        Self {
            rho: 0.5,
            n: 2000,
            lambda: 1e-3,
            components: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentitySettings {
    pub instances: usize,
    /// Name of one check to perturb; used to exercise the failure path.
    pub fault: Option<String>,
}

impl Default for IdentitySettings {
    fn default() -> Self {
        Self {
            instances: 200,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    pub model: ThetaParams,
    pub route: RouteChoice,
    pub kernel: KernelSettings,
    pub theta_grid: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub theta_sweep: ThetaSweepSettings,
    pub convergence: ConvergenceSettings,
    pub prompt_compare: PromptCompareSettings,
    pub dependence: DependenceSettings,
    pub identities: IdentitySettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            model: ThetaParams::default(),
            route: RouteChoice::Both,
            kernel: KernelSettings::default(),
            theta_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            n_grid: vec![100, 200, 400, 800, 1600],
            m_grid: vec![25, 50, 100, 200, 400, 800],
            replicates: 10,
            seed: 0,
            out: None,
            theta_sweep: ThetaSweepSettings::default(),
            convergence: ConvergenceSettings::default(),
            prompt_compare: PromptCompareSettings::default(),
            dependence: DependenceSettings::default(),
            identities: IdentitySettings::default(),
        }
    }
}

fn field(name: &str, msg: impl std::fmt::Display) -> LabError {
    LabError::Config(format!("{name}: {msg}"))
}

fn positive(name: &str, v: f64) -> LabResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field(name, format!("must be positive and finite, got {v}")))
    }
}

fn at_least(name: &str, v: usize, min: usize) -> LabResult<()> {
    if v >= min {
        Ok(())
    } else {
        Err(field(name, format!("must be at least {min}, got {v}")))
    }
}

fn grid<T>(name: &str, g: &[T]) -> LabResult<()> {
    if g.is_empty() {
        Err(field(name, "grid must be nonempty"))
    } else {
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> LabResult<Self> {
        serde_json::from_str(text).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> LabResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks every field the given experiment reads.
    pub fn validate(&self, kind: ExperimentKind) -> LabResult<()> {
        if let Some(k) = self.experiment {
            if k != kind {
                return Err(field("experiment", format!("config is for {}, not {}", k.name(), kind.name())));
            }
        }
        at_least("replicates", self.replicates, 1)?;
        let k = &self.kernel;
        for (name, v) in [("kernel.bandwidth_x", k.bandwidth_x), ("kernel.bandwidth_z", k.bandwidth_z), ("kernel.lambda", k.lambda), ("kernel.prompt_lambda", k.prompt_lambda)] {
            if let Some(v) = v {
                positive(name, v)?;
            }
        }
        positive("kernel.schedule_beta", k.schedule_beta)?;
        positive("kernel.schedule_p", k.schedule_p)?;
        match kind {
            ExperimentKind::ThetaSweep | ExperimentKind::Convergence | ExperimentKind::PromptCompare => {
                self.model.validate().map_err(|e| field("model", e))?;
            }
            _ => {}
        }
        match kind {
            ExperimentKind::ThetaSweep => {
                grid("theta_grid", &self.theta_grid)?;
                for &t in &self.theta_grid {
                    self.model.with_theta(t).validate().map_err(|e| field("theta_grid", e))?;
                }
                let s = &self.theta_sweep;
                at_least("theta_sweep.n_test", s.n_test, 1)?;
                at_least("theta_sweep.n_mc", s.n_mc, 1)?;
                at_least("theta_sweep.resdep_nz", s.resdep_nz, 2)?;
                at_least("theta_sweep.resdep_nx", s.resdep_nx, 1)?;
                if let Some(t) = &s.trainer {
                    at_least("theta_sweep.trainer.n_train", t.n_train, 2)?;
                    at_least("theta_sweep.trainer.steps", t.steps, 1)?;
                    at_least("theta_sweep.trainer.batch", t.batch, 2)?;
                    at_least("theta_sweep.trainer.out_dim", t.out_dim, 1)?;
                    at_least("theta_sweep.trainer.prompts", t.prompts, 1)?;
                    positive("theta_sweep.trainer.lr", t.lr)?;
                    for (name, v) in [("c1", t.vicreg.c1), ("c2", t.vicreg.c2), ("c3", t.vicreg.c3), ("kappa", t.vicreg.kappa)] {
                        positive(&format!("theta_sweep.trainer.vicreg.{name}"), v)?;
                    }
                }
            }
            ExperimentKind::Convergence => {
                let c = &self.convergence;
                if c.sweeps.is_empty() {
                    return Err(field("convergence.sweeps", "must name at least one sweep"));
                }
                if c.sweeps.contains(&Sweep::N) {
                    grid("n_grid", &self.n_grid)?;
                    for &n in &self.n_grid {
                        at_least("n_grid", n, 8)?;
                    }
                }
                if c.sweeps.contains(&Sweep::M) {
                    grid("m_grid", &self.m_grid)?;
                    for &m in &self.m_grid {
                        at_least("m_grid", m, 1)?;
                    }
                }
                at_least("convergence.n_test", c.n_test, 1)?;
                at_least("convergence.oracle_mc", c.oracle_mc, 1)?;
                at_least("convergence.m_fixed", c.m_fixed, 1)?;
                at_least("convergence.n_fixed", c.n_fixed, 8)?;
            }
            ExperimentKind::PromptCompare => {
                let p = &self.prompt_compare;
                grid("m_grid", &self.m_grid)?;
                for &m in &self.m_grid {
                    at_least("m_grid", m, 1)?;
                }
                if p.strategies.is_empty() {
                    return Err(field("prompt_compare.strategies", "must list at least one strategy"));
                }
                grid("prompt_compare.topk", &p.topk)?;
                for &k in &p.topk {
                    if !(1..=2).contains(&k) {
                        return Err(field("prompt_compare.topk", format!("k must be 1 or 2, got {k}")));
                    }
                }
                for s in &p.strategies {
                    let ok = match s {
                        GaussianStrategy::TemplateBased { direction, scale } => {
                            positive("prompt_compare.strategies.scale", *scale)?;
                            direction.len() == self.model.d
                        }
                        GaussianStrategy::ClassConditional { shift } => shift.iter().all(|v| v.len() == self.model.d),
                        GaussianStrategy::Unbiased => true,
                    };
                    if !ok {
                        return Err(field("prompt_compare.strategies", format!("vectors must have length d = {}", self.model.d)));
                    }
                }
                at_least("prompt_compare.n_pretrain", p.n_pretrain, 8)?;
                at_least("prompt_compare.n_eval", p.n_eval, 1)?;
                at_least("prompt_compare.bias_mc", p.bias_mc, 1)?;
            }
            ExperimentKind::Dependence => {
                let d = &self.dependence;
                if !(d.rho.abs() < 1.0) {
                    return Err(field("dependence.rho", format!("must lie in (-1, 1), got {}", d.rho)));
                }
                at_least("dependence.n", d.n, 8)?;
                positive("dependence.lambda", d.lambda)?;
                at_least("dependence.components", d.components, 1)?;
            }
            ExperimentKind::Identities => {
                at_least("identities.instances", self.identities.instances, 1)?;
                if let Some(f) = &self.identities.fault {
                    if !crate::identities::CHECK_NAMES.contains(&f.as_str()) {
                        return Err(field("identities.fault", format!("unknown check {f:?}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// The config with the output path removed, as hashed into sidecars.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        serde_json::to_string(&c).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"replicate": 3}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"kernel": {"lamda": 0.1}}"#).is_err());
        let c = ExperimentConfig::from_json(r#"{"replicates": 3, "model": {"d": 2, "a": 5, "b": 6, "theta": 1, "p": 0.5}}"#).unwrap();
        assert_eq!(c.replicates, 3);
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = ExperimentConfig::default();
        c.theta_grid.clear();
        let msg = c.validate(ExperimentKind::ThetaSweep).unwrap_err().to_string();
        assert!(msg.contains("theta_grid"), "{msg}");
        let c = ExperimentConfig {
            replicates: 0,
            ..Default::default()
        };
        assert!(c.validate(ExperimentKind::Dependence).unwrap_err().to_string().contains("replicates"));
        let c = ExperimentConfig {
            experiment: Some(ExperimentKind::Dependence),
            ..Default::default()
        };
        assert!(c.validate(ExperimentKind::Identities).is_err());
        assert!(c.validate(ExperimentKind::Dependence).is_ok());
    }

    #[test]
    fn defaults_validate_for_every_experiment() {
        let c = ExperimentConfig::default();
        for k in [
            ExperimentKind::ThetaSweep,
            ExperimentKind::Convergence,
            ExperimentKind::PromptCompare,
            ExperimentKind::Dependence,
            ExperimentKind::Identities,
        ] {
            c.validate(k).unwrap();
        }
        let back = ExperimentConfig::from_json(&c.canonical_json()).unwrap();
        assert_eq!(back, c);
    }
}
