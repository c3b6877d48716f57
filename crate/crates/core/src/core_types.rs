//! Domain model shared by the simulators, estimators and the CLI.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::VarianceMethod;

const ROW_SUM_TOL: f64 = 1e-12;

/// Two-state, two-action transition probabilities, indexed `[action][from][to]`.
/// State 1 is the good state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    probs: [[[f64; 2]; 2]; 2],
}

impl TransitionModel {
    pub fn new(probs: [[[f64; 2]; 2]; 2]) -> Result<Self> {
        Self::with_tolerance(probs, ROW_SUM_TOL)
    }

    /// Like [`TransitionModel::new`] but with a caller-chosen row-sum tolerance.
    pub fn with_tolerance(probs: [[[f64; 2]; 2]; 2], tol: f64) -> Result<Self> {
        for (a, rows) in probs.iter().enumerate() {
            for (s, row) in rows.iter().enumerate() {
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::invariant(
                        "transition probability in [0,1]",
                        format!("action {a}, state {s}: {row:?}"),
                    ));
                }
                if (row[0] + row[1] - 1.0).abs() > tol {
                    return Err(Error::invariant(
                        "transition row sums to 1",
                        format!("action {a}, state {s}: sum {}", row[0] + row[1]),
                    ));
                }
            }
        }
        Ok(Self { probs })
    }

    /// Builds a model from the probability of moving to the good state,
    /// `good[a][s] = T^a_{s,1}`.
    pub fn from_good_probs(good: [[f64; 2]; 2]) -> Result<Self> {
        let mut probs = [[[0.0; 2]; 2]; 2];
        for a in 0..2 {
            for s in 0..2 {
                probs[a][s] = [1.0 - good[a][s], good[a][s]];
            }
        }
        Self::new(probs)
    }

    /// Both actions leave the state unchanged.
    pub fn identity() -> Self {
        let stay = [[1.0, 0.0], [0.0, 1.0]];
        Self { probs: [stay, stay] }
    }

    pub fn probs(&self) -> &[[[f64; 2]; 2]; 2] {
        &self.probs
    }

    pub fn prob(&self, action: usize, from: usize, to: usize) -> f64 {
        self.probs[action][from][to]
    }

    /// `T^a_{s,1}`.
    pub fn good_prob(&self, action: usize, from: usize) -> f64 {
        self.probs[action][from][1]
    }

    /// Row-major flattening: action, then from-state, then to-state.
    pub fn flatten(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for a in 0..2 {
            for s in 0..2 {
                for t in 0..2 {
                    out[4 * a + 2 * s + t] = self.probs[a][s][t];
                }
            }
        }
        out
    }

    pub fn from_flat(v: [f64; 8], tol: f64) -> Result<Self> {
        let mut probs = [[[0.0; 2]; 2]; 2];
        for a in 0..2 {
            for s in 0..2 {
                for t in 0..2 {
                    probs[a][s][t] = v[4 * a + 2 * s + t];
                }
            }
        }
        Self::with_tolerance(probs, tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: u64,
    pub transitions: TransitionModel,
    pub covariates: Vec<f64>,
    /// Cached index; lower means treated first.
    pub index: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Synthetic,
    Tb,
    Mmitra,
    CornerCase,
    Ingested,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentCohort {
    agents: Vec<Agent>,
    domain_tag: DomainTag,
}

impl AgentCohort {
    pub fn new(agents: Vec<Agent>, domain_tag: DomainTag) -> Result<Self> {
        let mut seen = HashSet::with_capacity(agents.len());
        for a in &agents {
            if !seen.insert(a.id) {
                return Err(Error::invariant("unique agent ids", format!("duplicate id {}", a.id)));
            }
            if !a.index.is_finite() {
                return Err(Error::invariant("finite index", format!("agent {}", a.id)));
            }
        }
        Ok(Self { agents, domain_tag })
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn domain_tag(&self) -> DomainTag {
        self.domain_tag
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn indices(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.index).collect()
    }

    /// Replaces the cached indices. Lengths must match.
    pub fn with_indices(mut self, indices: &[f64]) -> Result<Self> {
        if indices.len() != self.agents.len() {
            return Err(Error::Config(format!(
                "{} indices for {} agents",
                indices.len(),
                self.agents.len()
            )));
        }
        for (a, &ix) in self.agents.iter_mut().zip(indices) {
            if !ix.is_finite() {
                return Err(Error::invariant("finite index", format!("agent {}", a.id)));
            }
            a.index = ix;
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "column")]
pub enum IndexKind {
    Whittle,
    Random,
    /// Use covariate `column` as the index.
    CustomColumn(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub index_kind: IndexKind,
    pub alpha: f64,
    pub rounds: usize,
}

impl PolicySpec {
    pub fn new(index_kind: IndexKind, alpha: f64, rounds: usize) -> Result<Self> {
        let spec = Self { index_kind, alpha, rounds };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0,1], got {}", self.alpha)));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        Ok(())
    }

    /// Checks that `rounds * ceil(alpha n) <= n`.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        self.validate()?;
        let b = per_round_budget(self.alpha, n);
        if b * self.rounds > n {
            return Err(Error::Config(format!(
                "{} rounds of {b} treatments exceed n = {n}",
                self.rounds
            )));
        }
        Ok(())
    }
}

/// `ceil(alpha n)`, guarded against round-off just above an integer.
pub fn per_round_budget(alpha: f64, n: usize) -> usize {
    let x = alpha * n as f64;
    let r = x.round();
    let b = if (x - r).abs() <= 1e-9 * x.max(1.0) { r } else { x.ceil() };
    (b as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Policy,
    Control,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Policy => "policy",
            Arm::Control => "control",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RctRecord {
    pub agent_id: u64,
    pub arm: Arm,
    pub index: f64,
    /// 0 means never treated, `r >= 1` means treated in round `r`.
    pub treat_week: u32,
    /// Per-timestep reward. MDP domains produce 0/1 entries; reward overrides
    /// store a single real value.
    pub reward_path: Vec<f64>,
    pub covariates: Vec<f64>,
}

/// Sum of `reward_path[..min(truncate_at, horizon)]`.
pub fn total_reward(record: &RctRecord, truncate_at: Option<usize>) -> Result<f64> {
    let h = record.reward_path.len();
    let end = match truncate_at {
        None => h,
        Some(t) if (1..=h).contains(&t) => t,
        Some(t) => {
            return Err(Error::Config(format!("truncate_at {t} outside [1, {h}]")));
        }
    };
    Ok(record.reward_path[..end].iter().sum())
}

/// Outcome of a two-arm trial. Validated on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RctDataset {
    policy_arm: Vec<RctRecord>,
    control_arm: Vec<RctRecord>,
    alpha: f64,
    horizon: usize,
    rounds: usize,
    seed: u64,
}

impl RctDataset {
    pub fn new(
        policy_arm: Vec<RctRecord>,
        control_arm: Vec<RctRecord>,
        alpha: f64,
        horizon: usize,
        rounds: usize,
        seed: u64,
    ) -> Result<Self> {
        let n = policy_arm.len();
        if control_arm.len() != n {
            return Err(Error::invariant(
                "arms have equal length",
                format!("policy {n}, control {}", control_arm.len()),
            ));
        }
        if n == 0 {
            return Err(Error::invariant("arms have equal length", "empty arms"));
        }
        if horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        PolicySpec::new(IndexKind::Random, alpha, rounds)?;
        let b = per_round_budget(alpha, n);
        if b * rounds > n {
            return Err(Error::invariant(
                "round count",
                format!("{rounds} rounds of {b} treatments exceed n = {n}"),
            ));
        }
        let m = policy_arm[0].covariates.len();
        for (arm, recs) in [(Arm::Policy, &policy_arm), (Arm::Control, &control_arm)] {
            let mut ids = HashSet::with_capacity(n);
            for r in recs.iter() {
                if r.arm != arm {
                    return Err(Error::invariant(
                        "record arm label",
                        format!("agent {} listed in the {} arm", r.agent_id, arm.as_str()),
                    ));
                }
                if !ids.insert(r.agent_id) {
                    return Err(Error::invariant(
                        "unique agent ids",
                        format!("duplicate id {} in {} arm", r.agent_id, arm.as_str()),
                    ));
                }
                if !r.index.is_finite() {
                    return Err(Error::invariant("finite index", format!("agent {}", r.agent_id)));
                }
                if arm == Arm::Control && r.treat_week != 0 {
                    return Err(Error::invariant(
                        "control arm untreated",
                        format!("control agent {} has treat_week {}", r.agent_id, r.treat_week),
                    ));
                }
                if r.treat_week as usize > rounds {
                    return Err(Error::invariant(
                        "treat_week within rounds",
                        format!("agent {} has treat_week {} > {rounds}", r.agent_id, r.treat_week),
                    ));
                }
                if r.reward_path.len() != horizon {
                    return Err(Error::invariant(
                        "reward path length",
                        format!("agent {}: {} != {horizon}", r.agent_id, r.reward_path.len()),
                    ));
                }
                if r.reward_path.iter().any(|x| !x.is_finite()) {
                    return Err(Error::invariant("finite rewards", format!("agent {}", r.agent_id)));
                }
                if r.covariates.len() != m {
                    return Err(Error::invariant(
                        "covariate dimension",
                        format!("agent {}: {} != {m}", r.agent_id, r.covariates.len()),
                    ));
                }
            }
        }
        let mut per_round = vec![0usize; rounds + 1];
        for r in &policy_arm {
            per_round[r.treat_week as usize] += 1;
        }
        for (round, &c) in per_round.iter().enumerate().skip(1) {
            if c != b {
                return Err(Error::invariant(
                    "round count",
                    format!("round {round} treats {c} agents, expected {b}"),
                ));
            }
        }
        Ok(Self { policy_arm, control_arm, alpha, horizon, rounds, seed })
    }

    pub fn policy_arm(&self) -> &[RctRecord] {
        &self.policy_arm
    }

    pub fn control_arm(&self) -> &[RctRecord] {
        &self.control_arm
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n(&self) -> usize {
        self.policy_arm.len()
    }

    pub fn covariate_dim(&self) -> usize {
        self.policy_arm[0].covariates.len()
    }

    /// `ceil(alpha n)`.
    pub fn per_round_budget(&self) -> usize {
        per_round_budget(self.alpha, self.n())
    }

    /// `rounds * ceil(alpha n)`.
    pub fn budget(&self) -> usize {
        self.rounds * self.per_round_budget()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Base,
    Subgroup,
    Threshold,
    Hybrid,
    MateReshuffle,
    RegressionBase,
    RegressionSubgroup,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 7] = [
        EstimatorKind::Base,
        EstimatorKind::Subgroup,
        EstimatorKind::Threshold,
        EstimatorKind::Hybrid,
        EstimatorKind::MateReshuffle,
        EstimatorKind::RegressionBase,
        EstimatorKind::RegressionSubgroup,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Base => "base",
            EstimatorKind::Subgroup => "subgroup",
            EstimatorKind::Threshold => "threshold",
            EstimatorKind::Hybrid => "hybrid",
            EstimatorKind::MateReshuffle => "mate_reshuffle",
            EstimatorKind::RegressionBase => "regression_base",
            EstimatorKind::RegressionSubgroup => "regression_subgroup",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator `{s}`")))
    }
}

/// Point estimate plus optional inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: EstimatorKind,
    pub point: f64,
    /// Asymptotic variance: the variance of `sqrt(n) (theta - tau)`.
    pub variance: Option<f64>,
    pub variance_method: Option<VarianceMethod>,
    /// Set when a negative variance estimate was clamped to 0.
    #[serde(default)]
    pub variance_clamped: bool,
    pub k_used: Option<usize>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub level: f64,
    pub p_value: Option<f64>,
    pub n: usize,
    pub alpha: f64,
    pub horizon: usize,
    pub hybrid_weight: Option<f64>,
}

impl EstimateReport {
    pub fn point_only(estimator: EstimatorKind, point: f64, data: &RctDataset, horizon: usize) -> Self {
        Self {
            estimator,
            point,
            variance: None,
            variance_method: None,
            variance_clamped: false,
            k_used: None,
            ci_low: None,
            ci_high: None,
            level: 0.95,
            p_value: None,
            n: data.n(),
            alpha: data.alpha(),
            horizon,
            hybrid_weight: None,
        }
    }

    pub fn half_width(&self) -> Option<f64> {
        Some((self.ci_high? - self.ci_low?) / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub below: f64,
    pub covered: f64,
    pub above: f64,
    pub mean_half_width: f64,
    /// Replicates that produced an interval; the fractions are over these.
    pub replicates: usize,
    pub estimand: f64,
    /// Replicates whose estimator or variance returned an error.
    #[serde(default)]
    pub failures: usize,
    #[serde(default)]
    pub mean_point: f64,
    #[serde(default)]
    pub sd_point: f64,
}
