//! TOML run configuration. Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::core_types::{DomainTag, EstimatorKind, IndexKind, PolicySpec};
use crate::error::{Error, Result};
use crate::estimators::{HybridWeight, OlsCovariance};
use crate::experiments::{rng_for, EstimatorSpec, ExperimentPlan, SweepSpec};
use crate::inference::{Centering, KChoice};
use crate::simulators::{default_count_pool, default_passive_pool, Pools, SimulatorConfig};

use super::io::{ingest_count_tables_csv, ingest_transitions_csv};

/// Stream used to draw the stand-in pools.
const POOL_STREAM: u64 = 1 << 63;

/// `"auto"` or a number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AutoOr<T> {
    Word(String),
    Value(T),
}

impl<T: Copy> AutoOr<T> {
    fn resolve(&self, key: &str) -> Result<Option<T>> {
        match self {
            AutoOr::Word(w) if w == "auto" => Ok(None),
            AutoOr::Word(w) => Err(Error::Config(format!("{key} must be \"auto\" or a number, got \"{w}\""))),
            AutoOr::Value(v) => Ok(Some(*v)),
        }
    }
}

fn auto<T>() -> AutoOr<T> {
    AutoOr::Word("auto".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub index_kind: IndexKind,
    pub alpha: f64,
    pub rounds: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { index_kind: IndexKind::Whittle, alpha: 0.2, rounds: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolConfig {
    /// Transition CSV for the tb and ingested domains.
    pub transitions: Option<PathBuf>,
    /// Count-table CSV for the mmitra domain.
    pub counts: Option<PathBuf>,
    /// Size of the stand-in pool drawn when no file is given.
    pub default_size: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self { transitions: None, counts: None, default_size: 1000 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Directory for simulated datasets.
    pub dir: Option<PathBuf>,
    /// Coverage table.
    pub csv: Option<PathBuf>,
    /// Plot series.
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub simulator: SimulatorConfig,
    pub policy: PolicyConfig,
    pub replicates: usize,
    pub estimators: Vec<EstimatorSpec>,
    pub level: f64,
    pub truncate_at: Option<usize>,
    pub upto_round: Option<usize>,
    pub estimand_reps: usize,
    pub k: AutoOr<usize>,
    pub centering: Centering,
    pub hybrid_weight: AutoOr<f64>,
    pub ols_covariance: OlsCovariance,
    pub sweep: Option<SweepSpec>,
    pub pools: PoolConfig,
    pub output: OutputConfig,
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let plan = ExperimentPlan::default();
        Self {
            simulator: plan.simulator,
            policy: PolicyConfig::default(),
            replicates: plan.replicates,
            estimators: vec![EstimatorSpec::new(EstimatorKind::Base), EstimatorSpec::new(EstimatorKind::Subgroup)],
            level: plan.level,
            truncate_at: None,
            upto_round: None,
            estimand_reps: plan.estimand_reps,
            k: auto(),
            centering: Centering::GroupMean,
            hybrid_weight: auto(),
            ols_covariance: OlsCovariance::Classical,
            sweep: None,
            pools: PoolConfig::default(),
            output: OutputConfig::default(),
            workers: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn pools(&self) -> Result<Pools> {
        let cfg = &self.pools;
        let mut rng = rng_for(self.simulator.seed, POOL_STREAM);
        let mut pools = Pools::default();
        match self.simulator.domain {
            DomainTag::Tb | DomainTag::Ingested => {
                pools.transitions = Some(match &cfg.transitions {
                    Some(p) => ingest_transitions_csv(p)?,
                    None if self.simulator.domain == DomainTag::Tb => default_passive_pool(cfg.default_size, &mut rng),
                    None => return Err(Error::Config("the ingested domain needs pools.transitions".into())),
                });
            }
            DomainTag::Mmitra => {
                pools.counts = Some(match &cfg.counts {
                    Some(p) => ingest_count_tables_csv(p)?,
                    None => default_count_pool(cfg.default_size, &mut rng),
                });
            }
            DomainTag::Synthetic | DomainTag::CornerCase => {}
        }
        Ok(pools)
    }

    /// Builds and validates the experiment plan, loading any pool files.
    pub fn to_plan(&self) -> Result<ExperimentPlan> {
        let plan = ExperimentPlan {
            simulator: self.simulator.clone(),
            policy: PolicySpec { index_kind: self.policy.index_kind, alpha: self.policy.alpha, rounds: self.policy.rounds },
            replicates: self.replicates,
            estimators: self.estimators.clone(),
            level: self.level,
            truncate_at: self.truncate_at,
            upto_round: self.upto_round,
            estimand_reps: self.estimand_reps,
            k: self.k.resolve("k")?.map_or(KChoice::Auto, KChoice::Fixed),
            centering: self.centering,
            hybrid_weight: self.hybrid_weight.resolve("hybrid_weight")?.map_or(HybridWeight::Auto, HybridWeight::Fixed),
            ols_covariance: self.ols_covariance,
            sweep: self.sweep.clone(),
            pools: self.pools()?,
            workers: self.workers,
        };
        plan.validate()?;
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::SweepAxis;

    #[test]
    fn empty_config_is_default_plan() {
        let plan = RunConfig::parse("").unwrap().to_plan().unwrap();
        assert_eq!(plan, ExperimentPlan::default());
    }

    #[test]
    fn full_config() {
        let text = r#"
            replicates = 20
            estimators = ["base", "subgroup:sg_knn", "hybrid"]
            k = 7
            hybrid_weight = 0.25
            truncate_at = 3
            workers = 2

            [simulator]
            n = 100
            horizon = 5
            seed = 3
            covariate_dim = 2

            [simulator.whittle]
            discount = 0.8

            [policy]
            alpha = 0.1
            index_kind = { kind = "custom_column", column = 1 }

            [sweep]
            axis = "alpha"
            values = [0.05, 0.1]
        "#;
        let plan = RunConfig::parse(text).unwrap().to_plan().unwrap();
        assert_eq!(plan.k, KChoice::Fixed(7));
        assert_eq!(plan.hybrid_weight, HybridWeight::Fixed(0.25));
        assert_eq!(plan.simulator.whittle.discount, 0.8);
        assert_eq!(plan.policy.index_kind, IndexKind::CustomColumn(1));
        assert_eq!(plan.sweep.unwrap().axis, SweepAxis::Alpha);
        assert_eq!(plan.estimators[1].to_string(), "subgroup:sg_knn");
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in ["replicate = 3", "[simulator]\nhorizn = 3", "[policy]\nalpah = 0.1", "[simulator.whittle]\ngamma = 0.5"] {
            let err = RunConfig::parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn bad_auto_word() {
        let cfg = RunConfig::parse("k = \"automatic\"").unwrap();
        assert!(cfg.to_plan().is_err());
    }

    #[test]
    fn stand_in_pools_for_tb_and_mmitra() {
        for domain in ["tb", "mmitra"] {
            let plan = RunConfig::parse(&format!("[simulator]\ndomain = \"{domain}\"")).unwrap().to_plan().unwrap();
            assert!(plan.pools.transitions.is_some() || plan.pools.counts.is_some());
        }
        let cfg = RunConfig::parse("[simulator]\ndomain = \"ingested\"").unwrap();
        assert!(cfg.to_plan().is_err());
    }
}
