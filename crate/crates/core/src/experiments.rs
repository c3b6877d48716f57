//! Monte Carlo estimand oracle, coverage replication, parameter sweeps and
//! corner-case studies.
//!
//! Replicate `r` draws from a ChaCha8 stream `r` under the plan's root seed, and
//! estimand repetition `r` from stream `ESTIMAND_STREAM + r`, so results do not
//! depend on the number of worker threads.
//!
//! The quantity `τ^q_α`, the effect of treating every agent below the
//! population α-quantile, has no operation of its own. It is the large-`n`
//! limit of [`monte_carlo_estimand`] for single-round plans.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::core_types::{
    AgentCohort, CoverageSummary, DomainTag, EstimateReport, EstimatorKind, IndexKind, PolicySpec, RctDataset,
};
use crate::error::{Error, Result};
use crate::estimators::{HybridWeight, OlsCovariance};
use crate::inference::{default_method, evaluate, Centering, EvalOptions, KChoice, VarianceMethod};
use crate::policies::compute_indices;
use crate::simulators::{
    corner_case_cohort, expected_reward, policy_treat_weeks, run_override_rct, run_rct, sample_cohort, split_arms,
    Pools, SimulatorConfig,
};

const ESTIMAND_STREAM: u64 = 1 << 62;

/// ChaCha8 generator for one replicate.
pub fn rng_for(root_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(stream);
    rng
}

/// An estimator plus an optional variance method, written `kind` or `kind:method`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    pub variance: Option<VarianceMethod>,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind) -> Self {
        Self { kind, variance: None }
    }

    pub fn with_variance(kind: EstimatorKind, variance: VarianceMethod) -> Self {
        Self { kind, variance: Some(variance) }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((k, v)) => Ok(Self::with_variance(EstimatorKind::parse(k.trim())?, VarianceMethod::parse(v.trim())?)),
            None => Ok(Self::new(EstimatorKind::parse(s.trim())?)),
        }
    }

    /// The variance method used for a dataset with `rounds` rounds.
    pub fn resolved_variance(&self, rounds: usize, ols: OlsCovariance) -> Option<VarianceMethod> {
        self.variance.or_else(|| default_method(self.kind, rounds, ols))
    }
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.variance {
            Some(v) => write!(f, "{}:{}", self.kind.as_str(), v.as_str()),
            None => f.write_str(self.kind.as_str()),
        }
    }
}

impl TryFrom<String> for EstimatorSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::parse(&s)
    }
}

impl From<EstimatorSpec> for String {
    fn from(s: EstimatorSpec) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Alpha,
    N,
    Horizon,
    EffectCap,
    Level,
    /// Number of rounds at a fixed total budget: each round treats `alpha / rounds`.
    Rounds,
    TruncateAt,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 7] = [
        SweepAxis::Alpha,
        SweepAxis::N,
        SweepAxis::Horizon,
        SweepAxis::EffectCap,
        SweepAxis::Level,
        SweepAxis::Rounds,
        SweepAxis::TruncateAt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Alpha => "alpha",
            SweepAxis::N => "n",
            SweepAxis::Horizon => "horizon",
            SweepAxis::EffectCap => "effect_cap",
            SweepAxis::Level => "level",
            SweepAxis::Rounds => "rounds",
            SweepAxis::TruncateAt => "truncate_at",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep axis `{s}`")))
    }

    fn shares_estimand(self) -> bool {
        matches!(self, SweepAxis::Level | SweepAxis::TruncateAt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub simulator: SimulatorConfig,
    pub policy: PolicySpec,
    pub replicates: usize,
    pub estimators: Vec<EstimatorSpec>,
    pub level: f64,
    pub truncate_at: Option<usize>,
    pub upto_round: Option<usize>,
    pub estimand_reps: usize,
    pub k: KChoice,
    pub centering: Centering,
    pub hybrid_weight: HybridWeight,
    pub ols_covariance: OlsCovariance,
    pub sweep: Option<SweepSpec>,
    pub pools: Pools,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            simulator: SimulatorConfig::default(),
            policy: PolicySpec { index_kind: IndexKind::Whittle, alpha: 0.2, rounds: 1 },
            replicates: 500,
            estimators: vec![EstimatorSpec::new(EstimatorKind::Base), EstimatorSpec::new(EstimatorKind::Subgroup)],
            level: 0.95,
            truncate_at: None,
            upto_round: None,
            estimand_reps: 1000,
            k: KChoice::Auto,
            centering: Centering::GroupMean,
            hybrid_weight: HybridWeight::Auto,
            ols_covariance: OlsCovariance::Classical,
            sweep: None,
            pools: Pools::default(),
            workers: None,
        }
    }
}

impl ExperimentPlan {
    /// 5000 agents per arm and 1000 replicates.
    pub fn paper_scale() -> Self {
        let mut plan = Self::default();
        plan.simulator.n = 5000;
        plan.replicates = 1000;
        plan
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            level: self.level,
            truncate_at: self.truncate_at,
            upto_round: self.upto_round,
            k: self.k,
            centering: self.centering,
            hybrid_weight: self.hybrid_weight,
            ols_covariance: self.ols_covariance,
        }
    }

    fn horizon(&self) -> usize {
        if self.simulator.domain == DomainTag::CornerCase {
            1
        } else {
            self.simulator.horizon
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.simulator.validate()?;
        self.policy.validate_for(self.simulator.n)?;
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.estimand_reps == 0 {
            return Err(Error::Config("estimand_reps must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level must lie in (0,1), got {}", self.level)));
        }
        if self.policy.rounds > self.horizon() {
            return Err(Error::Config(format!("{} rounds do not fit in horizon {}", self.policy.rounds, self.horizon())));
        }
        if let Some(t) = self.truncate_at {
            if t == 0 || t > self.horizon() {
                return Err(Error::Config(format!("truncate_at {t} outside [1, {}]", self.horizon())));
            }
        }
        if let Some(w) = self.workers {
            if w == 0 {
                return Err(Error::Config("workers must be at least 1".into()));
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::Config("sweep grid is empty".into()));
            }
            for &v in &s.values {
                apply_axis(self, s.axis, v)?.validate()?;
            }
        }
        Ok(())
    }
}

fn in_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {w} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn cohort_with_policy_indices(
    plan: &ExperimentPlan,
    cohort: AgentCohort,
    rng: &mut ChaCha8Rng,
) -> Result<AgentCohort> {
    if plan.policy.index_kind == IndexKind::Whittle {
        return Ok(cohort);
    }
    let idx = compute_indices(&cohort, &plan.policy, &plan.simulator.whittle, rng)?;
    cohort.with_indices(&idx)
}

/// One simulated trial of the plan.
pub fn simulate_replicate(plan: &ExperimentPlan, replicate: u64) -> Result<RctDataset> {
    let cfg = &plan.simulator;
    let mut rng = rng_for(cfg.seed, replicate);
    if cfg.domain == DomainTag::CornerCase {
        let a = plan.policy.alpha;
        let (cp, op) = corner_case_cohort(cfg.n, a, cfg.corner_sigma, cfg.boost_center, &mut rng)?;
        let (cc, oc) = corner_case_cohort(cfg.n, a, cfg.corner_sigma, cfg.boost_center, &mut rng)?;
        return run_override_rct(&cp, &op, &cc, &oc, &plan.policy, cfg.seed);
    }
    let both = SimulatorConfig { n: 2 * cfg.n, ..cfg.clone() };
    let (p, c) = split_arms(sample_cohort(&both, &plan.pools, &mut rng)?)?;
    let p = cohort_with_policy_indices(plan, p, &mut rng)?;
    let c = cohort_with_policy_indices(plan, c, &mut rng)?;
    run_rct(&p, &c, &plan.policy, cfg.horizon, cfg.initial_state, cfg.seed, &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimandResult {
    pub value: f64,
    /// Monte Carlo standard error of `value`.
    pub std_error: f64,
    pub reps: usize,
}

fn estimand_draw(plan: &ExperimentPlan, rep: u64) -> Result<f64> {
    let cfg = &plan.simulator;
    let mut rng = rng_for(cfg.seed, ESTIMAND_STREAM + rep);
    let cohort = cohort_with_policy_indices(plan, sample_cohort(cfg, &plan.pools, &mut rng)?, &mut rng)?;
    let weeks = policy_treat_weeks(&cohort, &plan.policy)?;
    let mut gain = 0.0;
    let mut treated = 0usize;
    for (agent, &w) in cohort.agents().iter().zip(&weeks) {
        if w > 0 {
            gain += expected_reward(agent, w as usize, cfg.horizon, cfg.initial_state)?
                - expected_reward(agent, 0, cfg.horizon, cfg.initial_state)?;
            treated += 1;
        }
    }
    Ok(gain / treated as f64)
}

/// Expected extra reward per allocated treatment, averaged over independently
/// sampled cohorts. Exactly 1 for the corner-case domain.
pub fn monte_carlo_estimand(plan: &ExperimentPlan) -> Result<EstimandResult> {
    plan.validate()?;
    if plan.simulator.domain == DomainTag::CornerCase {
        return Ok(EstimandResult { value: 1.0, std_error: 0.0, reps: 0 });
    }
    let draws = in_pool(plan.workers, || {
        (0..plan.estimand_reps as u64).into_par_iter().map(|r| estimand_draw(plan, r)).collect::<Result<Vec<f64>>>()
    })??;
    let (mean, sd) = mean_sd(&draws);
    Ok(EstimandResult { value: mean, std_error: sd / (draws.len() as f64).sqrt(), reps: draws.len() })
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (m - 1.0)).sqrt())
}

/// Per-replicate reports, `out[r][e]` for replicate `r` and estimator `e`.
/// Estimator failures are kept; simulation failures abort.
pub fn replicate_reports(plan: &ExperimentPlan) -> Result<Vec<Vec<Result<EstimateReport>>>> {
    plan.validate()?;
    let opts = plan.eval_options();
    in_pool(plan.workers, || {
        (0..plan.replicates as u64)
            .into_par_iter()
            .map(|r| {
                let data = simulate_replicate(plan, r)?;
                Ok(plan.estimators.iter().map(|e| evaluate(&data, e.kind, e.variance, &opts)).collect())
            })
            .collect::<Result<Vec<_>>>()
    })?
}

/// Tallies intervals against `estimand`. Fractions are over successful replicates.
pub fn summarize(reports: &[Result<EstimateReport>], estimand: f64) -> Result<CoverageSummary> {
    let mut below = 0usize;
    let mut covered = 0usize;
    let mut above = 0usize;
    let mut hw = 0.0;
    let mut points = Vec::with_capacity(reports.len());
    let mut failures = 0usize;
    for rep in reports {
        let Ok(rep) = rep else {
            failures += 1;
            continue;
        };
        let (Some(lo), Some(hi)) = (rep.ci_low, rep.ci_high) else {
            return Err(Error::Config(format!("estimator `{}` produces no interval", rep.estimator.as_str())));
        };
        if estimand < lo {
            below += 1;
        } else if estimand > hi {
            above += 1;
        } else {
            covered += 1;
        }
        hw += (hi - lo) / 2.0;
        points.push(rep.point);
    }
    let m = points.len();
    if m == 0 {
        let first = reports.iter().find_map(|r| r.as_ref().err()).cloned();
        return Err(first.unwrap_or_else(|| Error::Config("no replicates".into())));
    }
    let (mean_point, sd_point) = mean_sd(&points);
    let mf = m as f64;
    Ok(CoverageSummary {
        below: below as f64 / mf,
        covered: covered as f64 / mf,
        above: above as f64 / mf,
        mean_half_width: hw / mf,
        replicates: m,
        estimand,
        failures,
        mean_point,
        sd_point,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub estimator: EstimatorSpec,
    #[serde(flatten)]
    pub summary: CoverageSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub estimand: EstimandResult,
    pub rows: Vec<CoverageRow>,
}

fn check_intervals(plan: &ExperimentPlan) -> Result<()> {
    for e in &plan.estimators {
        if e.resolved_variance(plan.policy.rounds, plan.ols_covariance).is_none() {
            return Err(Error::Config(format!("estimator `{e}` produces no interval")));
        }
    }
    if plan.estimators.is_empty() {
        return Err(Error::Config("no estimators requested".into()));
    }
    Ok(())
}

fn coverage_with_estimand(plan: &ExperimentPlan, estimand: EstimandResult) -> Result<CoverageResult> {
    check_intervals(plan)?;
    let reports = replicate_reports(plan)?;
    let rows = plan
        .estimators
        .iter()
        .enumerate()
        .map(|(e, &estimator)| {
            let col: Vec<Result<EstimateReport>> = reports.iter().map(|r| r[e].clone()).collect();
            Ok(CoverageRow { estimator, summary: summarize(&col, estimand.value)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoverageResult { estimand, rows })
}

/// Estimand once, then `replicates` trials with every estimator.
pub fn coverage_experiment(plan: &ExperimentPlan) -> Result<CoverageResult> {
    check_intervals(plan)?;
    let estimand = monte_carlo_estimand(plan)?;
    coverage_with_estimand(plan, estimand)
}

fn integer_value(axis: SweepAxis, v: f64) -> Result<usize> {
    if v.fract() != 0.0 || v < 1.0 || v > u32::MAX as f64 {
        return Err(Error::Config(format!("sweep axis {} needs positive integers, got {v}", axis.as_str())));
    }
    Ok(v as usize)
}

fn apply_axis(plan: &ExperimentPlan, axis: SweepAxis, v: f64) -> Result<ExperimentPlan> {
    let mut p = plan.clone();
    p.sweep = None;
    match axis {
        SweepAxis::Alpha => p.policy.alpha = v,
        SweepAxis::N => p.simulator.n = integer_value(axis, v)?,
        SweepAxis::Horizon => p.simulator.horizon = integer_value(axis, v)?,
        SweepAxis::EffectCap => p.simulator.effect_cap = v,
        SweepAxis::Level => p.level = v,
        SweepAxis::Rounds => {
            let r = integer_value(axis, v)?;
            p.policy.alpha = plan.policy.alpha * plan.policy.rounds as f64 / r as f64;
            p.policy.rounds = r;
        }
        SweepAxis::TruncateAt => p.truncate_at = Some(integer_value(axis, v)?),
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub value: f64,
    pub result: CoverageResult,
}

/// One coverage experiment per grid value. Level and truncation sweeps share
/// the estimand of the base plan.
pub fn sweep(plan: &ExperimentPlan) -> Result<Vec<SweepPoint>> {
    let spec = plan.sweep.as_ref().ok_or_else(|| Error::Config("plan has no sweep axis".into()))?;
    plan.validate()?;
    let shared = if spec.axis.shares_estimand() { Some(monte_carlo_estimand(plan)?) } else { None };
    spec.values
        .iter()
        .map(|&v| {
            let p = apply_axis(plan, spec.axis, v)?;
            let result = match shared {
                Some(e) => coverage_with_estimand(&p, e)?,
                None => coverage_experiment(&p)?,
            };
            Ok(SweepPoint { axis: spec.axis, value: v, result })
        })
        .collect()
}

/// Estimators compared in the corner-case study.
pub fn corner_case_estimators() -> Vec<EstimatorSpec> {
    vec![
        EstimatorSpec::with_variance(EstimatorKind::Base, VarianceMethod::BaseKnn),
        EstimatorSpec::with_variance(EstimatorKind::Subgroup, VarianceMethod::SgSimple),
        EstimatorSpec::with_variance(EstimatorKind::Subgroup, VarianceMethod::SgKnn),
        EstimatorSpec::with_variance(EstimatorKind::Hybrid, VarianceMethod::HybKnn),
    ]
}

/// Corner-case plan with the given size, budget and boost bandwidth.
pub fn corner_case_plan(n: usize, alpha: f64, sigma: f64, replicates: usize, seed: u64) -> ExperimentPlan {
    let mut plan = ExperimentPlan::default();
    plan.simulator.domain = DomainTag::CornerCase;
    plan.simulator.n = n;
    plan.simulator.corner_sigma = sigma;
    plan.simulator.seed = seed;
    plan.policy = PolicySpec { index_kind: IndexKind::Whittle, alpha, rounds: 1 };
    plan.replicates = replicates;
    plan.estimators = corner_case_estimators();
    plan
}

/// Replicated corner-case trials. `sd_point` is the empirical standard
/// deviation of each estimator and `mean_half_width` its mean interval half-width.
pub fn corner_case_study(plan: &ExperimentPlan) -> Result<CoverageResult> {
    if plan.simulator.domain != DomainTag::CornerCase {
        return Err(Error::Config("corner_case_study needs the corner_case domain".into()));
    }
    coverage_experiment(plan)
}
