//! Point estimators of the per-treatment effect.

pub mod ols;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::core_types::{total_reward, EstimateReport, EstimatorKind, RctDataset, RctRecord};
use crate::error::{Error, Result};
use crate::inference::{hybrid_optimal_weight, KChoice, VarianceMethod};
use crate::policies::{allocate_rounds, priority_order};
pub use ols::{ols, OlsCovariance, OlsFit};

/// Treated policy-arm rewards and the control-arm rewards of the agents the
/// policy would have picked, both ordered by index.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupView {
    pub treated_rewards: Vec<f64>,
    pub counterfactual_rewards: Vec<f64>,
    /// `upto_round * ceil(alpha n)`.
    pub budget: usize,
    pub n: usize,
    /// Treated fraction, `upto_round * alpha`.
    pub alpha: f64,
}

impl SubgroupView {
    pub fn point(&self) -> f64 {
        (self.treated_rewards.iter().sum::<f64>() - self.counterfactual_rewards.iter().sum::<f64>()) / self.budget as f64
    }
}

pub(crate) fn arm_totals(recs: &[RctRecord], truncate_at: Option<usize>) -> Result<Vec<f64>> {
    recs.iter().map(|r| total_reward(r, truncate_at)).collect()
}

/// Positions of treated policy agents and counterfactually selected control
/// agents, each in allocation order.
#[derive(Debug, Clone)]
pub(crate) struct Selection {
    pub treated: Vec<usize>,
    pub counterfactual: Vec<usize>,
}

pub(crate) fn resolve_round(data: &RctDataset, upto_round: Option<usize>) -> Result<usize> {
    let r = upto_round.unwrap_or(data.rounds());
    if !(1..=data.rounds()).contains(&r) {
        return Err(Error::Config(format!("upto_round {r} outside [1, {}]", data.rounds())));
    }
    Ok(r)
}

pub(crate) fn selection(data: &RctDataset, upto_round: usize) -> Result<Selection> {
    let pol = data.policy_arm();
    let p_ix: Vec<f64> = pol.iter().map(|r| r.index).collect();
    let p_ids: Vec<u64> = pol.iter().map(|r| r.agent_id).collect();
    let treated = priority_order(&p_ix, &p_ids)
        .into_iter()
        .filter(|&i| (1..=upto_round as u32).contains(&pol[i].treat_week))
        .collect();
    let ctl = data.control_arm();
    let c_ix: Vec<f64> = ctl.iter().map(|r| r.index).collect();
    let c_ids: Vec<u64> = ctl.iter().map(|r| r.agent_id).collect();
    let alloc = allocate_rounds(&c_ix, &c_ids, data.alpha(), upto_round)?;
    Ok(Selection { treated, counterfactual: alloc.all_selected().collect() })
}

pub fn build_subgroup_view(data: &RctDataset, upto_round: usize, truncate_at: Option<usize>) -> Result<SubgroupView> {
    let r = resolve_round(data, Some(upto_round))?;
    let sel = selection(data, r)?;
    let tp = arm_totals(data.policy_arm(), truncate_at)?;
    let tc = arm_totals(data.control_arm(), truncate_at)?;
    Ok(SubgroupView {
        treated_rewards: sel.treated.iter().map(|&i| tp[i]).collect(),
        counterfactual_rewards: sel.counterfactual.iter().map(|&i| tc[i]).collect(),
        budget: r * data.per_round_budget(),
        n: data.n(),
        alpha: r as f64 * data.alpha(),
    })
}

fn effective_horizon(data: &RctDataset, truncate_at: Option<usize>) -> usize {
    truncate_at.unwrap_or(data.horizon())
}

fn require_single_round(data: &RctDataset, what: &str) -> Result<()> {
    if data.rounds() != 1 {
        return Err(Error::Config(format!("{what} needs rounds = 1, dataset has {}", data.rounds())));
    }
    Ok(())
}

/// `(Σ policy − Σ control) / budget`, i.e. `(n / budget)` times the mean difference.
pub fn base_point(data: &RctDataset, truncate_at: Option<usize>) -> Result<f64> {
    let sp: f64 = arm_totals(data.policy_arm(), truncate_at)?.iter().sum();
    let sc: f64 = arm_totals(data.control_arm(), truncate_at)?.iter().sum();
    Ok((sp - sc) / data.budget() as f64)
}

pub fn estimate_base(data: &RctDataset, truncate_at: Option<usize>) -> Result<EstimateReport> {
    let point = base_point(data, truncate_at)?;
    Ok(EstimateReport::point_only(EstimatorKind::Base, point, data, effective_horizon(data, truncate_at)))
}

/// `upto_round = None` uses every round.
pub fn estimate_subgroup(data: &RctDataset, upto_round: Option<usize>, truncate_at: Option<usize>) -> Result<EstimateReport> {
    let r = resolve_round(data, upto_round)?;
    let point = build_subgroup_view(data, r, truncate_at)?.point();
    Ok(EstimateReport::point_only(EstimatorKind::Subgroup, point, data, effective_horizon(data, truncate_at)))
}

/// Treated rewards and the control rewards with `index <= λ`, `λ` the largest treated index.
pub(crate) fn threshold_groups(data: &RctDataset, truncate_at: Option<usize>) -> Result<(Vec<f64>, Vec<f64>)> {
    require_single_round(data, "the threshold estimator")?;
    let tp = arm_totals(data.policy_arm(), truncate_at)?;
    let tc = arm_totals(data.control_arm(), truncate_at)?;
    let treated: Vec<usize> = (0..data.n()).filter(|&i| data.policy_arm()[i].treat_week > 0).collect();
    let lambda = treated.iter().map(|&i| data.policy_arm()[i].index).fold(f64::NEG_INFINITY, f64::max);
    let below: Vec<f64> = data
        .control_arm()
        .iter()
        .zip(&tc)
        .filter(|(r, _)| r.index <= lambda)
        .map(|(_, &t)| t)
        .collect();
    if below.is_empty() {
        return Err(Error::Degenerate(format!("no control agent has index <= {lambda}")));
    }
    Ok((treated.iter().map(|&i| tp[i]).collect(), below))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn estimate_threshold(data: &RctDataset, truncate_at: Option<usize>) -> Result<EstimateReport> {
    let (t, c) = threshold_groups(data, truncate_at)?;
    Ok(EstimateReport::point_only(EstimatorKind::Threshold, mean(&t) - mean(&c), data, effective_horizon(data, truncate_at)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HybridWeight {
    Fixed(f64),
    /// Plug-in estimate of the variance-minimising weight.
    Auto,
}

/// `(1 − w) θ_SG + w θ_base`. The report records the weight used.
pub fn estimate_hybrid(data: &RctDataset, weight: HybridWeight, k: KChoice, truncate_at: Option<usize>) -> Result<EstimateReport> {
    require_single_round(data, "the hybrid estimator")?;
    let w = match weight {
        HybridWeight::Fixed(w) if w.is_finite() => w,
        HybridWeight::Fixed(w) => return Err(Error::Config(format!("hybrid weight must be finite, got {w}"))),
        HybridWeight::Auto => hybrid_optimal_weight(data, k, truncate_at)?.w_star,
    };
    let sg = build_subgroup_view(data, 1, truncate_at)?.point();
    let base = base_point(data, truncate_at)?;
    let point = if w == 0.0 {
        sg
    } else if w == 1.0 {
        base
    } else {
        (1.0 - w) * sg + w * base
    };
    let mut rep = EstimateReport::point_only(EstimatorKind::Hybrid, point, data, effective_horizon(data, truncate_at));
    rep.hybrid_weight = Some(w);
    Ok(rep)
}

/// Reshuffle-and-fill estimator. Not rescaled by `n / budget`; point estimate only.
pub fn estimate_mate_reshuffle(data: &RctDataset, truncate_at: Option<usize>) -> Result<f64> {
    require_single_round(data, "the reshuffle estimator")?;
    let tp = arm_totals(data.policy_arm(), truncate_at)?;
    let tc = arm_totals(data.control_arm(), truncate_at)?;
    let lambda = data
        .policy_arm()
        .iter()
        .filter(|r| r.treat_week > 0)
        .map(|r| r.index)
        .fold(f64::NEG_INFINITY, f64::max);
    let in_np: Vec<bool> = data.policy_arm().iter().map(|r| r.treat_week == 0).collect();
    let in_nc: Vec<bool> = data.control_arm().iter().map(|r| r.index > lambda).collect();
    let np = in_np.iter().filter(|&&b| b).count();
    let nc = in_nc.iter().filter(|&&b| b).count();
    if np + nc == 0 {
        return Err(Error::Degenerate("untreated policy set and control set above the threshold are both empty".into()));
    }
    let fill: f64 = tp.iter().zip(&in_np).filter(|(_, &b)| b).map(|(x, _)| x).sum::<f64>()
        + tc.iter().zip(&in_nc).filter(|(_, &b)| b).map(|(x, _)| x).sum::<f64>();
    let r = fill / (np + nc) as f64;
    let kept_p: f64 = tp.iter().zip(&in_np).filter(|(_, &b)| !b).map(|(x, _)| x).sum();
    let kept_c: f64 = tc.iter().zip(&in_nc).filter(|(_, &b)| !b).map(|(x, _)| x).sum();
    Ok((kept_p + (np as f64 - nc as f64) * r - kept_c) / data.n() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionKind {
    /// All `2n` agents, arm indicator.
    Base,
    /// Treated and counterfactually selected agents, treatment indicator.
    Subgroup,
}

/// OLS of reward on intercept, indicator and linear covariate terms.
///
/// The subgroup coefficient is reported as is. The base coefficient estimates
/// a per-agent mean difference and is rescaled by `n / budget`, as is its
/// variance. `variance` holds `n · Var(β̂)`.
pub fn estimate_regression(
    data: &RctDataset,
    kind: RegressionKind,
    upto_round: Option<usize>,
    truncate_at: Option<usize>,
    covariance: OlsCovariance,
) -> Result<EstimateReport> {
    let r = resolve_round(data, upto_round)?;
    let tp = arm_totals(data.policy_arm(), truncate_at)?;
    let tc = arm_totals(data.control_arm(), truncate_at)?;
    let (rows, estimator, scale): (Vec<(&RctRecord, f64, f64)>, _, f64) = match kind {
        RegressionKind::Subgroup => {
            let sel = selection(data, r)?;
            let rows = sel
                .treated
                .iter()
                .map(|&i| (&data.policy_arm()[i], 1.0, tp[i]))
                .chain(sel.counterfactual.iter().map(|&i| (&data.control_arm()[i], 0.0, tc[i])))
                .collect();
            (rows, EstimatorKind::RegressionSubgroup, 1.0)
        }
        RegressionKind::Base => {
            let rows = data
                .policy_arm()
                .iter()
                .zip(&tp)
                .map(|(rec, &y)| (rec, 1.0, y))
                .chain(data.control_arm().iter().zip(&tc).map(|(rec, &y)| (rec, 0.0, y)))
                .collect();
            (rows, EstimatorKind::RegressionBase, data.n() as f64 / data.budget() as f64)
        }
    };
    let m = data.covariate_dim();
    let p = 2 + m;
    let mut x = DMatrix::zeros(rows.len(), p);
    let mut y = DVector::zeros(rows.len());
    for (i, (rec, j, reward)) in rows.iter().enumerate() {
        x[(i, 0)] = 1.0;
        x[(i, 1)] = *j;
        for (c, v) in rec.covariates.iter().enumerate() {
            x[(i, 2 + c)] = *v;
        }
        y[i] = *reward;
    }
    let mut names = vec!["intercept".to_string(), "treatment".to_string()];
    names.extend((0..m).map(|c| format!("covariate_{c}")));
    let fit = ols(&x, &y, &names, covariance)?;
    let mut rep = EstimateReport::point_only(estimator, scale * fit.beta[1], data, effective_horizon(data, truncate_at));
    rep.variance = Some(scale * scale * fit.cov[(1, 1)] * data.n() as f64);
    rep.variance_method = Some(match covariance {
        OlsCovariance::Classical => VarianceMethod::OlsClassical,
        OlsCovariance::Hc0 => VarianceMethod::OlsHc0,
    });
    Ok(rep)
}
