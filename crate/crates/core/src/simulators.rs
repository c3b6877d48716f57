//! Cohort samplers, trajectory simulation and two-arm trials.

use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::core_types::{
    Agent, AgentCohort, Arm, DomainTag, PolicySpec, RctDataset, RctRecord, TransitionModel,
};
use crate::error::{Error, Result};
use crate::inference::normal::{normal_pdf, normal_quantile};
use crate::policies::{allocate_rounds, whittle_index_of, WhittleConfig};

/// Start-state rule for simulated trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Stationary distribution of the passive chain.
    #[default]
    Stationary,
    Good,
    Bad,
}

/// Where the corner-case reward boost is centred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostCenter {
    /// At the alpha-quantile of the index distribution, `Φ⁻¹(alpha)`.
    #[default]
    IndexQuantile,
    /// At `x = alpha`.
    LiteralAlpha,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorConfig {
    pub domain: DomainTag,
    pub n: usize,
    pub horizon: usize,
    /// Upper bound of the per-state treatment effect on `T_{s,1}`.
    pub effect_cap: f64,
    pub covariate_dim: usize,
    pub seed: u64,
    /// Bandwidth of the corner-case boost.
    pub corner_sigma: f64,
    pub boost_center: BoostCenter,
    /// Weight of the population prior in the mMitra-like sampler.
    pub prior_strength: f64,
    pub initial_state: InitialState,
    pub whittle: WhittleConfig,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            domain: DomainTag::Synthetic,
            n: 2000,
            horizon: 10,
            effect_cap: 0.2,
            covariate_dim: 0,
            seed: 0,
            corner_sigma: 0.05,
            boost_center: BoostCenter::IndexQuantile,
            prior_strength: 5.0,
            initial_state: InitialState::Stationary,
            whittle: WhittleConfig::default(),
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.effect_cap) {
            return Err(Error::Config(format!("effect_cap must lie in [0,1], got {}", self.effect_cap)));
        }
        if !(self.corner_sigma > 0.0) {
            return Err(Error::Config(format!("corner_sigma must be positive, got {}", self.corner_sigma)));
        }
        if self.n < 2 {
            return Err(Error::Config(format!("n must be at least 2, got {}", self.n)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.prior_strength >= 0.0) {
            return Err(Error::Config(format!("prior_strength must be nonnegative, got {}", self.prior_strength)));
        }
        self.whittle.validate()
    }
}

/// Transition counts `counts[s][a][s']` for one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountTable {
    pub counts: [[[f64; 2]; 2]; 2],
}

/// Per-agent `R(0)` used in place of MDP simulation. Treated agents receive
/// `r0 + effect`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardOverride {
    pub r0: Vec<f64>,
    pub effect: f64,
}

fn covariate_map<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<[f64; 8]> {
    (0..dim)
        .map(|_| {
            let mut row = [0.0; 8];
            for v in row.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            row
        })
        .collect()
}

fn apply_map(map: &[[f64; 8]], t: &TransitionModel) -> Vec<f64> {
    let flat = t.flatten();
    map.iter().map(|row| row.iter().zip(&flat).map(|(a, b)| a * b).sum()).collect()
}

fn finish_cohort(cfg: &SimulatorConfig, models: Vec<TransitionModel>, map: &[[f64; 8]], tag: DomainTag) -> Result<AgentCohort> {
    let agents = models
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            Ok(Agent {
                id: i as u64,
                covariates: apply_map(map, &t),
                index: whittle_index_of(&t, &cfg.whittle)?,
                transitions: t,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    AgentCohort::new(agents, tag)
}

fn with_effect<R: Rng + ?Sized>(passive: [f64; 2], cap: f64, rng: &mut R) -> Result<TransitionModel> {
    let mut active = [0.0; 2];
    for s in 0..2 {
        let d = if cap > 0.0 { rng.random_range(0.0..=cap) } else { 0.0 };
        active[s] = (passive[s] + d).min(1.0);
    }
    TransitionModel::from_good_probs([passive, active])
}

/// `T⁰_{s,1} ~ U[0,1]`, `T¹_{s,1} = min(T⁰_{s,1} + U[0, effect_cap], 1)`.
pub fn sample_synthetic_cohort<R: Rng + ?Sized>(cfg: &SimulatorConfig, rng: &mut R) -> Result<AgentCohort> {
    cfg.validate()?;
    let map = covariate_map(cfg.covariate_dim, rng);
    let models = (0..cfg.n)
        .map(|_| {
            let passive = [rng.random::<f64>(), rng.random::<f64>()];
            with_effect(passive, cfg.effect_cap, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    finish_cohort(cfg, models, &map, DomainTag::Synthetic)
}

/// Passive dynamics resampled from `passive_pool`, active effect `U[0, effect_cap]` per state.
pub fn sample_tb_like_cohort<R: Rng + ?Sized>(
    cfg: &SimulatorConfig,
    passive_pool: &[TransitionModel],
    rng: &mut R,
) -> Result<AgentCohort> {
    cfg.validate()?;
    if passive_pool.is_empty() {
        return Err(Error::Config("passive transition pool is empty".into()));
    }
    let map = covariate_map(cfg.covariate_dim, rng);
    let models = (0..cfg.n)
        .map(|_| {
            let p = &passive_pool[rng.random_range(0..passive_pool.len())];
            with_effect([p.good_prob(0, 0), p.good_prob(0, 1)], cfg.effect_cap, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    finish_cohort(cfg, models, &map, DomainTag::Tb)
}

/// Pooled transition frequencies `P_pop(s' | s, a)` as `[a][s][s']`.
pub fn population_transitions(pool: &[CountTable]) -> Result<[[[f64; 2]; 2]; 2]> {
    let mut p = [[[0.0; 2]; 2]; 2];
    for s in 0..2 {
        for a in 0..2 {
            let row: [f64; 2] = [0, 1].map(|t| pool.iter().map(|c| c.counts[s][a][t]).sum());
            let tot = row[0] + row[1];
            if !(tot > 0.0) {
                return Err(Error::Config(format!("no pooled transitions for state {s}, action {a}")));
            }
            p[a][s] = [row[0] / tot, row[1] / tot];
        }
    }
    Ok(p)
}

/// Posterior-mean transitions `(w P_pop + N) / Σ (w P_pop + N)` with `w = prior_strength`.
pub fn smoothed_transitions(table: &CountTable, pop: &[[[f64; 2]; 2]; 2], prior_strength: f64) -> Result<TransitionModel> {
    let mut probs = [[[0.0; 2]; 2]; 2];
    for a in 0..2 {
        for s in 0..2 {
            let w: [f64; 2] = [0, 1].map(|t| prior_strength * pop[a][s][t] + table.counts[s][a][t]);
            let tot = w[0] + w[1];
            if !(tot > 0.0) {
                return Err(Error::Config(format!("zero mass for state {s}, action {a}")));
            }
            probs[a][s] = [w[0] / tot, w[1] / tot];
        }
    }
    TransitionModel::with_tolerance(probs, 1e-9)
}

/// Each agent draws one count table and smooths it towards the pooled frequencies.
pub fn sample_mmitra_like_cohort<R: Rng + ?Sized>(
    cfg: &SimulatorConfig,
    trajectory_pool: &[CountTable],
    rng: &mut R,
) -> Result<AgentCohort> {
    cfg.validate()?;
    if trajectory_pool.is_empty() {
        return Err(Error::Config("count-table pool is empty".into()));
    }
    let pop = population_transitions(trajectory_pool)?;
    let map = covariate_map(cfg.covariate_dim, rng);
    let models = (0..cfg.n)
        .map(|_| {
            let t = &trajectory_pool[rng.random_range(0..trajectory_pool.len())];
            smoothed_transitions(t, &pop, cfg.prior_strength)
        })
        .collect::<Result<Vec<_>>>()?;
    finish_cohort(cfg, models, &map, DomainTag::Mmitra)
}

/// Agents resampled whole from a pool of fitted models.
pub fn sample_ingested_cohort<R: Rng + ?Sized>(
    cfg: &SimulatorConfig,
    pool: &[TransitionModel],
    rng: &mut R,
) -> Result<AgentCohort> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::Config("transition pool is empty".into()));
    }
    let map = covariate_map(cfg.covariate_dim, rng);
    let models = (0..cfg.n).map(|_| pool[rng.random_range(0..pool.len())]).collect();
    finish_cohort(cfg, models, &map, DomainTag::Ingested)
}

/// Stand-in passive pool: `T⁰_{0,1} ~ U[0, 0.5]`, `T⁰_{1,1} ~ U[0.5, 1]`.
pub fn default_passive_pool<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Vec<TransitionModel> {
    (0..size)
        .map(|_| {
            let p = [rng.random_range(0.0..0.5), rng.random_range(0.5..1.0)];
            TransitionModel::from_good_probs([p, p]).expect("probabilities in range")
        })
        .collect()
}

/// Stand-in count pool: a synthetic model per table, `U{0..=20}` visits per
/// (state, action), binomial outcomes.
pub fn default_count_pool<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Vec<CountTable> {
    (0..size)
        .map(|_| {
            let mut counts = [[[0.0; 2]; 2]; 2];
            for s in 0..2 {
                let p0: f64 = rng.random();
                for a in 0..2 {
                    let p = if a == 0 { p0 } else { (p0 + rng.random_range(0.0..0.2)).min(1.0) };
                    let visits = rng.random_range(0..=20u64);
                    let good = Binomial::new(visits, p).expect("valid binomial").sample(rng) as f64;
                    counts[s][a] = [visits as f64 - good, good];
                }
            }
            CountTable { counts }
        })
        .collect()
}

/// Samples a cohort of `cfg.n` agents for `cfg.domain`. Pools are required
/// for the tb, mmitra and ingested domains.
pub fn sample_cohort<R: Rng + ?Sized>(cfg: &SimulatorConfig, pools: &Pools, rng: &mut R) -> Result<AgentCohort> {
    let need = |name: &str| Error::Config(format!("domain {:?} needs a {name} pool", cfg.domain));
    match cfg.domain {
        DomainTag::Synthetic => sample_synthetic_cohort(cfg, rng),
        DomainTag::Tb => sample_tb_like_cohort(cfg, pools.transitions.as_deref().ok_or_else(|| need("transition"))?, rng),
        DomainTag::Mmitra => {
            sample_mmitra_like_cohort(cfg, pools.counts.as_deref().ok_or_else(|| need("count-table"))?, rng)
        }
        DomainTag::Ingested => {
            sample_ingested_cohort(cfg, pools.transitions.as_deref().ok_or_else(|| need("transition"))?, rng)
        }
        DomainTag::CornerCase => Err(Error::Config("corner-case cohorts come from corner_case_cohort".into())),
    }
}

/// External data backing the tb, mmitra and ingested domains.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Pools {
    pub transitions: Option<Vec<TransitionModel>>,
    pub counts: Option<Vec<CountTable>>,
}

/// Corner-case construction: covariate and index `x ~ N(0,1)`,
/// `R(0) = x + y + φ_σ(x − c)` with `y ~ N(0,1)`, unit treatment effect.
/// `c` is `Φ⁻¹(alpha)` or `alpha` depending on `center`. Agents carry identity
/// transitions; rewards come from the returned override.
pub fn corner_case_cohort<R: Rng + ?Sized>(
    n: usize,
    alpha: f64,
    sigma: f64,
    center: BoostCenter,
    rng: &mut R,
) -> Result<(AgentCohort, RewardOverride)> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    let c = match center {
        BoostCenter::IndexQuantile if alpha < 1.0 => normal_quantile(alpha)?,
        BoostCenter::IndexQuantile => f64::INFINITY,
        BoostCenter::LiteralAlpha => alpha,
    };
    let mut agents = Vec::with_capacity(n);
    let mut r0 = Vec::with_capacity(n);
    for i in 0..n {
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        r0.push(x + y + boost(x, c, sigma));
        agents.push(Agent { id: i as u64, transitions: TransitionModel::identity(), covariates: vec![x], index: x });
    }
    Ok((AgentCohort::new(agents, DomainTag::CornerCase)?, RewardOverride { r0, effect: 1.0 }))
}

fn boost(x: f64, center: f64, sigma: f64) -> f64 {
    if center.is_finite() {
        normal_pdf(x - center, 0.0, sigma)
    } else {
        0.0
    }
}

fn initial_good_prob(t: &TransitionModel, init: InitialState) -> f64 {
    match init {
        InitialState::Good => 1.0,
        InitialState::Bad => 0.0,
        InitialState::Stationary => {
            let up = t.good_prob(0, 0);
            let down = t.prob(0, 1, 0);
            if up + down > 0.0 {
                up / (up + down)
            } else {
                0.5
            }
        }
    }
}

fn check_week(treat_week: usize, horizon: usize) -> Result<()> {
    if treat_week > horizon {
        return Err(Error::Config(format!("treat_week {treat_week} exceeds horizon {horizon}")));
    }
    Ok(())
}

/// One trajectory. Step `t` (1-based) uses the active action iff
/// `t == treat_week`; entry `t − 1` is 1 iff the state after step `t` is good.
pub fn simulate_reward_path<R: Rng + ?Sized>(
    agent: &Agent,
    treat_week: usize,
    horizon: usize,
    init: InitialState,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_week(treat_week, horizon)?;
    let t = &agent.transitions;
    let mut s = usize::from(rng.random::<f64>() < initial_good_prob(t, init));
    Ok((1..=horizon)
        .map(|step| {
            let a = usize::from(step == treat_week);
            s = usize::from(rng.random::<f64>() < t.good_prob(a, s));
            s as f64
        })
        .collect())
}

/// Exact expectation of the sum of [`simulate_reward_path`].
pub fn expected_reward(agent: &Agent, treat_week: usize, horizon: usize, init: InitialState) -> Result<f64> {
    check_week(treat_week, horizon)?;
    let t = &agent.transitions;
    let mut g = initial_good_prob(t, init);
    let mut total = 0.0;
    for step in 1..=horizon {
        let a = usize::from(step == treat_week);
        g = (1.0 - g) * t.good_prob(a, 0) + g * t.good_prob(a, 1);
        total += g;
    }
    Ok(total)
}

/// Policy-arm treatment weeks: round `r` treats the `ceil(alpha n)` lowest-index
/// untreated agents with `treat_week = r`.
pub fn policy_treat_weeks(cohort: &AgentCohort, spec: &PolicySpec) -> Result<Vec<u32>> {
    let n = cohort.len();
    spec.validate_for(n)?;
    let ids: Vec<u64> = cohort.agents().iter().map(|a| a.id).collect();
    let alloc = allocate_rounds(&cohort.indices(), &ids, spec.alpha, spec.rounds)?;
    let mut weeks = vec![0u32; n];
    for (r, sel) in alloc.selected.iter().enumerate() {
        for &i in sel {
            weeks[i] = (r + 1) as u32;
        }
    }
    Ok(weeks)
}

fn check_arms(p: &AgentCohort, c: &AgentCohort) -> Result<()> {
    if p.len() != c.len() {
        return Err(Error::Config(format!("cohort sizes differ: {} vs {}", p.len(), c.len())));
    }
    Ok(())
}

fn records(cohort: &AgentCohort, arm: Arm, weeks: &[u32], paths: Vec<Vec<f64>>) -> Vec<RctRecord> {
    let mut recs: Vec<RctRecord> = cohort
        .agents()
        .iter()
        .zip(weeks)
        .zip(paths)
        .map(|((a, &w), path)| RctRecord {
            agent_id: a.id,
            arm,
            index: a.index,
            treat_week: w,
            reward_path: path,
            covariates: a.covariates.clone(),
        })
        .collect();
    recs.sort_by_key(|r| r.agent_id);
    recs
}

/// Simulates a two-arm trial using each agent's cached index.
pub fn run_rct<R: Rng + ?Sized>(
    cohort_p: &AgentCohort,
    cohort_c: &AgentCohort,
    spec: &PolicySpec,
    horizon: usize,
    init: InitialState,
    seed: u64,
    rng: &mut R,
) -> Result<RctDataset> {
    check_arms(cohort_p, cohort_c)?;
    if spec.rounds > horizon {
        return Err(Error::Config(format!("{} rounds do not fit in horizon {horizon}", spec.rounds)));
    }
    let weeks_p = policy_treat_weeks(cohort_p, spec)?;
    let weeks_c = vec![0u32; cohort_c.len()];
    let sim = |cohort: &AgentCohort, weeks: &[u32], rng: &mut R| -> Result<Vec<Vec<f64>>> {
        cohort
            .agents()
            .iter()
            .zip(weeks)
            .map(|(a, &w)| simulate_reward_path(a, w as usize, horizon, init, rng))
            .collect()
    };
    let paths_p = sim(cohort_p, &weeks_p, rng)?;
    let paths_c = sim(cohort_c, &weeks_c, rng)?;
    RctDataset::new(
        records(cohort_p, Arm::Policy, &weeks_p, paths_p),
        records(cohort_c, Arm::Control, &weeks_c, paths_c),
        spec.alpha,
        horizon,
        spec.rounds,
        seed,
    )
}

/// Two-arm trial whose rewards come from overrides (horizon 1).
pub fn run_override_rct(
    cohort_p: &AgentCohort,
    ov_p: &RewardOverride,
    cohort_c: &AgentCohort,
    ov_c: &RewardOverride,
    spec: &PolicySpec,
    seed: u64,
) -> Result<RctDataset> {
    check_arms(cohort_p, cohort_c)?;
    if ov_p.r0.len() != cohort_p.len() || ov_c.r0.len() != cohort_c.len() {
        return Err(Error::Config("reward override length differs from cohort size".into()));
    }
    let weeks_p = policy_treat_weeks(cohort_p, spec)?;
    let weeks_c = vec![0u32; cohort_c.len()];
    let paths_p = ov_p.r0.iter().zip(&weeks_p).map(|(&r, &w)| vec![if w > 0 { r + ov_p.effect } else { r }]).collect();
    let paths_c = ov_c.r0.iter().map(|&r| vec![r]).collect();
    RctDataset::new(
        records(cohort_p, Arm::Policy, &weeks_p, paths_p),
        records(cohort_c, Arm::Control, &weeks_c, paths_c),
        spec.alpha,
        1,
        spec.rounds,
        seed,
    )
}

/// Splits a cohort of `2n` agents into two arms of `n`, renumbering each arm from 0.
pub fn split_arms(cohort: AgentCohort) -> Result<(AgentCohort, AgentCohort)> {
    let tag = cohort.domain_tag();
    let mut agents = cohort.agents().to_vec();
    let n = agents.len() / 2;
    let mut control = agents.split_off(n);
    control.truncate(n);
    for (i, a) in control.iter_mut().enumerate() {
        a.id = i as u64;
    }
    Ok((AgentCohort::new(agents, tag)?, AgentCohort::new(control, tag)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_types::IndexKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agent(t0: [f64; 2], t1: [f64; 2]) -> Agent {
        Agent { id: 0, transitions: TransitionModel::from_good_probs([t0, t1]).unwrap(), covariates: vec![], index: 0.0 }
    }

    #[test]
    fn absorbing_good_state() {
        let a = agent([1.0, 1.0], [1.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(simulate_reward_path(&a, 0, 3, InitialState::Stationary, &mut rng).unwrap(), vec![1.0; 3]);
        assert_eq!(expected_reward(&a, 0, 3, InitialState::Stationary).unwrap(), 3.0);
    }

    #[test]
    fn single_treatment_trace() {
        let a = agent([0.0, 0.0], [1.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for init in [InitialState::Good, InitialState::Bad, InitialState::Stationary] {
            assert_eq!(simulate_reward_path(&a, 1, 2, init, &mut rng).unwrap(), vec![1.0, 0.0]);
        }
    }

    #[test]
    fn treat_week_past_horizon() {
        let a = agent([0.5, 0.5], [0.5, 0.5]);
        assert!(expected_reward(&a, 4, 3, InitialState::Good).is_err());
    }

    #[test]
    fn null_effect_expectation_flat() {
        let a = agent([0.3, 0.8], [0.3, 0.8]);
        let base = expected_reward(&a, 0, 6, InitialState::Stationary).unwrap();
        for w in 1..=6 {
            assert!((expected_reward(&a, w, 6, InitialState::Stationary).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn expectation_matches_monte_carlo() {
        let a = agent([0.25, 0.7], [0.45, 0.9]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reps = 100_000;
        let sums: Vec<f64> = (0..reps)
            .map(|_| simulate_reward_path(&a, 2, 5, InitialState::Stationary, &mut rng).unwrap().iter().sum())
            .collect();
        let mean = sums.iter().sum::<f64>() / reps as f64;
        let var = sums.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let exact = expected_reward(&a, 2, 5, InitialState::Stationary).unwrap();
        assert!((mean - exact).abs() < 3.0 * (var / reps as f64).sqrt());
    }

    #[test]
    fn synthetic_effects_bounded() {
        let cfg = SimulatorConfig { n: 5000, ..Default::default() };
        let c = sample_synthetic_cohort(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        for a in c.agents() {
            for s in 0..2 {
                let d = a.transitions.good_prob(1, s) - a.transitions.good_prob(0, s);
                assert!((0.0..=0.2 + 1e-15).contains(&d));
            }
        }
    }

    #[test]
    fn zero_cap_means_no_effect() {
        let cfg = SimulatorConfig { n: 50, effect_cap: 0.0, ..Default::default() };
        let c = sample_synthetic_cohort(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for a in c.agents() {
            assert_eq!(a.transitions.probs()[0], a.transitions.probs()[1]);
        }
    }

    #[test]
    fn sampler_deterministic() {
        let cfg = SimulatorConfig { n: 30, covariate_dim: 3, ..Default::default() };
        let a = sample_synthetic_cohort(&cfg, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let b = sample_synthetic_cohort(&cfg, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.agents()[0].covariates.len(), 3);
    }

    #[test]
    fn synthetic_marginal_is_uniform() {
        // Kolmogorov-Smirnov at level 0.01: critical value 1.628 / sqrt(n).
        let cfg = SimulatorConfig { n: 10_000, ..Default::default() };
        let c = sample_synthetic_cohort(&cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let mut xs: Vec<f64> = c.agents().iter().map(|a| a.transitions.good_prob(0, 0)).collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
            .fold(0.0, f64::max);
        assert!(d < 1.628 / n.sqrt(), "D = {d}");
    }

    #[test]
    fn tb_pool_examples() {
        let pool = default_passive_pool(1, &mut ChaCha8Rng::seed_from_u64(8));
        let cfg = SimulatorConfig { n: 20, domain: DomainTag::Tb, ..Default::default() };
        let c = sample_tb_like_cohort(&cfg, &pool, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for a in c.agents() {
            assert_eq!(a.transitions.probs()[0], pool[0].probs()[0]);
            for s in 0..2 {
                let d = a.transitions.good_prob(1, s) - a.transitions.good_prob(0, s);
                assert!((0.0..=0.2 + 1e-15).contains(&d));
            }
        }
        let cfg0 = SimulatorConfig { effect_cap: 0.0, ..cfg.clone() };
        let c = sample_tb_like_cohort(&cfg0, &pool, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert!(c.agents().iter().all(|a| a.transitions.probs()[0] == a.transitions.probs()[1]));
        assert!(sample_tb_like_cohort(&cfg, &[], &mut ChaCha8Rng::seed_from_u64(9)).is_err());
    }

    #[test]
    fn mmitra_prior_formula() {
        let t = CountTable { counts: [[[5.0, 5.0]; 2]; 2] };
        let pop = [[[0.5, 0.5]; 2]; 2];
        let m = smoothed_transitions(&t, &pop, 5.0).unwrap();
        assert_eq!(m.probs()[0][0], [0.5, 0.5]);

        let pool = default_count_pool(10, &mut ChaCha8Rng::seed_from_u64(10));
        let pop = population_transitions(&pool).unwrap();
        let zero = CountTable { counts: [[[0.0; 2]; 2]; 2] };
        let m = smoothed_transitions(&zero, &pop, 5.0).unwrap();
        for a in 0..2 {
            for s in 0..2 {
                assert!((m.probs()[a][s][1] - pop[a][s][1]).abs() < 1e-15);
            }
        }
        let full = CountTable { counts: [[[3.0, 1.0], [2.0, 6.0]], [[1.0, 1.0], [4.0, 4.0]]] };
        let m = smoothed_transitions(&full, &pop, 0.0).unwrap();
        assert_eq!(m.good_prob(0, 0), 0.25);
        assert_eq!(m.good_prob(1, 0), 0.75);
        assert!(sample_mmitra_like_cohort(&SimulatorConfig::default(), &[], &mut ChaCha8Rng::seed_from_u64(1)).is_err());
        assert!(population_transitions(&[zero]).is_err());
    }

    #[test]
    fn rct_counts() {
        let cfg = SimulatorConfig { n: 20, horizon: 4, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (p, c) = split_arms(sample_synthetic_cohort(&cfg, &mut rng).unwrap()).unwrap();
        let spec = PolicySpec::new(IndexKind::Whittle, 0.2, 1).unwrap();
        let d = run_rct(&p, &c, &spec, 4, InitialState::Stationary, 0, &mut rng).unwrap();
        assert_eq!(d.policy_arm().iter().filter(|r| r.treat_week == 1).count(), 2);
        assert!(d.control_arm().iter().all(|r| r.treat_week == 0));
        let mut rng2 = ChaCha8Rng::seed_from_u64(11);
        let (p2, c2) = split_arms(sample_synthetic_cohort(&cfg, &mut rng2).unwrap()).unwrap();
        assert_eq!(run_rct(&p2, &c2, &spec, 4, InitialState::Stationary, 0, &mut rng2).unwrap(), d);
    }

    #[test]
    fn corner_case_override() {
        let (c, ov) = corner_case_cohort(50, 0.5, 0.05, BoostCenter::LiteralAlpha, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        assert_eq!(c.agents()[0].index, c.agents()[0].covariates[0]);
        assert_eq!(ov.effect, 1.0);
        assert_eq!(boost(0.5, 0.5, 0.05), 1.0 / (0.05 * (2.0 * std::f64::consts::PI).sqrt()));
        assert!(corner_case_cohort(5, 0.5, 0.0, BoostCenter::LiteralAlpha, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }
}
