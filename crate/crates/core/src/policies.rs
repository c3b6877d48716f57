//! Index functions and allocation rules.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::core_types::{per_round_budget, Agent, AgentCohort, IndexKind, PolicySpec, TransitionModel};
use crate::error::{Error, Result};

pub const MAX_BISECTION_ITERS: usize = 200;

/// Whittle index settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WhittleConfig {
    pub discount: f64,
    /// State whose subsidy is reported (0 = bad, 1 = good).
    pub eval_state: usize,
    pub tol: f64,
}

impl Default for WhittleConfig {
    fn default() -> Self {
        Self { discount: 0.9, eval_state: 0, tol: 1e-6 }
    }
}

impl WhittleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::Config(format!("discount must lie in (0,1), got {}", self.discount)));
        }
        if self.eval_state > 1 {
            return Err(Error::Config(format!("eval_state must be 0 or 1, got {}", self.eval_state)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }

    /// Subsidy interval searched by the bisection.
    pub fn bracket(&self) -> (f64, f64) {
        let b = 2.0 / (1.0 - self.discount) + 2.0;
        (-b, b)
    }
}

/// `Q(s, active) − Q(s, passive)` when the passive action earns `subsidy`.
///
/// Rewards are the good-state indicator of the state reached by the transition.
/// The optimal value function is the componentwise maximum over the four
/// deterministic stationary policies, each solved exactly.
pub fn action_advantage(t: &TransitionModel, subsidy: f64, discount: f64, state: usize) -> f64 {
    let g = discount;
    let reward = |s: usize, a: usize| t.good_prob(a, s) + if a == 0 { subsidy } else { 0.0 };
    let mut v = [f64::NEG_INFINITY; 2];
    for pol in 0..4usize {
        let a0 = pol & 1;
        let a1 = (pol >> 1) & 1;
        // (I - gP) v = r for a 2x2 system.
        let m00 = 1.0 - g * t.prob(a0, 0, 0);
        let m01 = -g * t.prob(a0, 0, 1);
        let m10 = -g * t.prob(a1, 1, 0);
        let m11 = 1.0 - g * t.prob(a1, 1, 1);
        let r0 = reward(0, a0);
        let r1 = reward(1, a1);
        let det = m00 * m11 - m01 * m10;
        let v0 = (r0 * m11 - m01 * r1) / det;
        let v1 = (m00 * r1 - m10 * r0) / det;
        v[0] = v[0].max(v0);
        v[1] = v[1].max(v1);
    }
    let q = |a: usize| reward(state, a) + g * (t.prob(a, state, 0) * v[0] + t.prob(a, state, 1) * v[1]);
    q(1) - q(0)
}

/// Negated Whittle subsidy at `cfg.eval_state`. Lower values mean the agent
/// gains more from treatment.
pub fn whittle_index(agent: &Agent, cfg: &WhittleConfig) -> Result<f64> {
    whittle_index_of(&agent.transitions, cfg)
}

pub fn whittle_index_of(t: &TransitionModel, cfg: &WhittleConfig) -> Result<f64> {
    cfg.validate()?;
    let f = |l: f64| action_advantage(t, l, cfg.discount, cfg.eval_state);
    let (mut lo, mut hi) = cfg.bracket();
    let (flo, fhi) = (f(lo), f(hi));
    if !(flo >= 0.0 && fhi <= 0.0) {
        return Err(Error::Numerical(format!(
            "subsidy bracket [{lo}, {hi}] does not bracket a root (f = {flo}, {fhi})"
        )));
    }
    for _ in 0..MAX_BISECTION_ITERS {
        if hi - lo <= cfg.tol {
            return Ok(-(0.5 * (lo + hi)) + 0.0);
        }
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(-mid + 0.0);
        }
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Numerical(format!("bisection did not reach tol {} in {MAX_BISECTION_ITERS} steps", cfg.tol)))
}

/// Indices for every agent of the cohort according to `spec.index_kind`.
pub fn compute_indices<R: Rng + ?Sized>(
    cohort: &AgentCohort,
    spec: &PolicySpec,
    whittle: &WhittleConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    match spec.index_kind {
        IndexKind::Whittle => cohort.agents().iter().map(|a| whittle_index(a, whittle)).collect(),
        IndexKind::Random => Ok(cohort.agents().iter().map(|_| rng.random::<f64>()).collect()),
        IndexKind::CustomColumn(c) => cohort
            .agents()
            .iter()
            .map(|a| {
                a.covariates.get(c).copied().ok_or_else(|| {
                    Error::Config(format!(
                        "custom index column {c} out of range for {} covariates",
                        a.covariates.len()
                    ))
                })
            })
            .collect(),
    }
}

/// Selected agent positions per round and the largest selected index per round.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    pub selected: Vec<Vec<usize>>,
    pub boundary_index: Vec<f64>,
}

impl AllocationResult {
    pub fn all_selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.selected.iter().flatten().copied()
    }
}

/// Positions ordered by `(index, id)`, the allocation priority.
pub fn priority_order(indices: &[f64], ids: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..indices.len()).collect();
    order.sort_by(|&a, &b| indices[a].total_cmp(&indices[b]).then(ids[a].cmp(&ids[b])));
    order
}

/// One round: the `ceil(alpha n)` lowest-index agents outside `already_treated`.
/// Ties go to the lower position.
pub fn allocate(indices: &[f64], alpha: f64, already_treated: &HashSet<usize>) -> Result<AllocationResult> {
    let ids: Vec<u64> = (0..indices.len() as u64).collect();
    allocate_by_id(indices, &ids, alpha, already_treated)
}

/// As [`allocate`], breaking ties by `ids`.
pub fn allocate_by_id(
    indices: &[f64],
    ids: &[u64],
    alpha: f64,
    already_treated: &HashSet<usize>,
) -> Result<AllocationResult> {
    let b = per_round_budget(alpha, indices.len());
    let free = indices.len() - already_treated.iter().filter(|&&i| i < indices.len()).count();
    if b > free {
        return Err(Error::Config(format!("{b} treatments requested but only {free} untreated agents")));
    }
    let chosen: Vec<usize> = priority_order(indices, ids)
        .into_iter()
        .filter(|i| !already_treated.contains(i))
        .take(b)
        .collect();
    let boundary = chosen.iter().map(|&i| indices[i]).fold(f64::NEG_INFINITY, f64::max);
    Ok(AllocationResult { selected: vec![chosen], boundary_index: vec![boundary] })
}

/// `rounds` successive calls of [`allocate_by_id`], each excluding earlier picks.
pub fn allocate_rounds(indices: &[f64], ids: &[u64], alpha: f64, rounds: usize) -> Result<AllocationResult> {
    let mut treated = HashSet::new();
    let mut out = AllocationResult { selected: Vec::with_capacity(rounds), boundary_index: Vec::with_capacity(rounds) };
    for _ in 0..rounds {
        let r = allocate_by_id(indices, ids, alpha, &treated)?;
        treated.extend(r.selected[0].iter().copied());
        out.selected.extend(r.selected);
        out.boundary_index.extend(r.boundary_index);
    }
    Ok(out)
}

/// Positions with `index <= lambda`.
pub fn threshold_select(indices: &[f64], lambda: f64) -> Vec<usize> {
    (0..indices.len()).filter(|&i| indices[i] <= lambda).collect()
}
