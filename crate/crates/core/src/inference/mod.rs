//! Variance estimators, intervals, p-values and policy comparison.
//!
//! Every variance here estimates the asymptotic `σ²`, the variance of
//! `sqrt(n) (θ − τ)`, so intervals are `θ ∓ z sqrt(σ² / n)`.

pub mod normal;

use serde::{Deserialize, Serialize};

use crate::core_types::{EstimateReport, EstimatorKind, RctDataset};
use crate::error::{Error, Result};
use crate::estimators::{
    self, arm_totals, build_subgroup_view, selection, HybridWeight, OlsCovariance, RegressionKind, SubgroupView,
};
pub use normal::{normal_cdf, normal_pdf, normal_quantile, normal_sf, two_sided_z};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    SgSimple,
    SgKnn,
    BaseKnn,
    Welch,
    OlsClassical,
    OlsHc0,
    HybKnn,
}

impl VarianceMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            VarianceMethod::SgSimple => "sg_simple",
            VarianceMethod::SgKnn => "sg_knn",
            VarianceMethod::BaseKnn => "base_knn",
            VarianceMethod::Welch => "welch",
            VarianceMethod::OlsClassical => "ols_classical",
            VarianceMethod::OlsHc0 => "ols_hc0",
            VarianceMethod::HybKnn => "hyb_knn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [
            VarianceMethod::SgSimple,
            VarianceMethod::SgKnn,
            VarianceMethod::BaseKnn,
            VarianceMethod::Welch,
            VarianceMethod::OlsClassical,
            VarianceMethod::OlsHc0,
            VarianceMethod::HybKnn,
        ]
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| Error::Config(format!("unknown variance method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceEstimate {
    pub value: f64,
    pub method: VarianceMethod,
    pub k_used: Option<usize>,
    /// The raw estimate was negative and has been replaced by 0.
    pub clamped: bool,
}

impl VarianceEstimate {
    fn clamped(raw: f64, method: VarianceMethod, k_used: Option<usize>) -> Self {
        Self { value: raw.max(0.0), method, k_used, clamped: raw < 0.0 }
    }
}

/// Window size for the order-statistic conditional means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KChoice {
    /// `min(ceil(n^0.75), ceil(alpha n) − 1)`.
    #[default]
    Auto,
    Fixed(usize),
}

pub fn resolve_k(k: KChoice, n: usize, per_round_budget: usize) -> Result<usize> {
    let max = per_round_budget.saturating_sub(1);
    if k == KChoice::Auto && max == 0 {
        return Err(Error::Degenerate(format!("a per-round budget of {per_round_budget} leaves no neighbours for k")));
    }
    let k = match k {
        KChoice::Auto => ((n as f64).powf(0.75).ceil() as usize).min(max),
        KChoice::Fixed(k) => k,
    };
    if k < 1 || k > max {
        return Err(Error::Config(format!("k = {k} outside [1, {max}]")));
    }
    Ok(k)
}

/// How the Theorem-3 sums of squares are centred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// Each selected group about its own mean, `S / ceil(alpha n)`.
    #[default]
    GroupMean,
    /// About `S / n`.
    Literal,
}

/// The three terms of the simple subgroup variance; the estimate is `t1 + t2 − t3`.
pub fn sg_simple_terms(view: &SubgroupView, centering: Centering) -> Result<[f64; 3]> {
    let n = view.n as f64;
    if view.n < 2 {
        return Err(Error::Config("variance needs n >= 2".into()));
    }
    let a = view.alpha;
    let b = view.budget as f64;
    let sp: f64 = view.treated_rewards.iter().sum();
    let sc: f64 = view.counterfactual_rewards.iter().sum();
    let denom = match centering {
        Centering::GroupMean => b,
        Centering::Literal => n,
    };
    let ss = |v: &[f64], s: f64| v.iter().map(|r| (r - s / denom).powi(2)).sum::<f64>();
    let t1 = ss(&view.treated_rewards, sp) / (a * a * (n - 1.0));
    let t2 = ss(&view.counterfactual_rewards, sc) / (a * a * (n - 1.0));
    let t3 = (1.0 - a) * n / (a * (2.0 * n - 1.0) * b * b) * (sp - sc).powi(2);
    Ok([t1, t2, t3])
}

fn require_single_round(data: &RctDataset, what: &str) -> Result<()> {
    if data.rounds() != 1 {
        return Err(Error::Config(format!("{what} needs rounds = 1, dataset has {}", data.rounds())));
    }
    Ok(())
}

/// Simple subgroup variance, clamped at 0.
pub fn var_sg_simple(data: &RctDataset, centering: Centering, truncate_at: Option<usize>) -> Result<VarianceEstimate> {
    require_single_round(data, "sg_simple")?;
    let [t1, t2, t3] = sg_simple_terms(&build_subgroup_view(data, 1, truncate_at)?, centering)?;
    Ok(VarianceEstimate::clamped(t1 + t2 - t3, VarianceMethod::SgSimple, None))
}

/// Welch variance of a subgroup contrast: the simple variance without its third term.
pub fn welch_sg_variance(view: &SubgroupView, centering: Centering) -> Result<f64> {
    if view.budget < 2 {
        return Err(Error::Degenerate(format!("Welch needs at least 2 agents per group, got {}", view.budget)));
    }
    let [t1, t2, _] = sg_simple_terms(view, centering)?;
    Ok(t1 + t2)
}

fn sample_var(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

/// Welch variance of the base estimator: `(n / budget)² (s_p² + s_c²)`.
pub fn welch_base_variance(data: &RctDataset, truncate_at: Option<usize>) -> Result<f64> {
    if data.n() < 2 {
        return Err(Error::Config("Welch needs at least 2 agents per group".into()));
    }
    let tp = arm_totals(data.policy_arm(), truncate_at)?;
    let tc = arm_totals(data.control_arm(), truncate_at)?;
    let scale = data.n() as f64 / data.budget() as f64;
    Ok(scale * scale * (sample_var(&tp) + sample_var(&tc)))
}

/// Welch variance of the threshold estimator.
pub fn welch_threshold_variance(data: &RctDataset, truncate_at: Option<usize>) -> Result<f64> {
    let (t, c) = estimators::threshold_groups(data, truncate_at)?;
    if t.len() < 2 || c.len() < 2 {
        return Err(Error::Degenerate(format!("Welch needs at least 2 agents per group, got {} and {}", t.len(), c.len())));
    }
    Ok(data.n() as f64 * (sample_var(&t) / t.len() as f64 + sample_var(&c) / c.len() as f64))
}

/// Mean of the `k + 1` rewards with index ranks `len − k ..= len` (1-based).
/// `sorted_selected_rewards` must be ordered by index.
pub fn conditional_mean_at_quantile(sorted_selected_rewards: &[f64], k: usize) -> Result<f64> {
    let b = sorted_selected_rewards.len();
    if k < 1 || k + 1 > b {
        return Err(Error::Config(format!("k = {k} outside [1, {}]", b.saturating_sub(1))));
    }
    let w = &sorted_selected_rewards[b - k - 1..];
    Ok(w.iter().sum::<f64>() / w.len() as f64)
}

/// Plug-in ingredients shared by the knn variance estimators and the hybrid weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlugIns {
    pub alpha: f64,
    pub k: usize,
    /// Conditional means at the quantile, treated and counterfactual arm.
    pub m_p: f64,
    pub m_c: f64,
    /// `(1/n) Σ_sel R` and `(1/n) Σ_sel R² − μ²` per arm.
    pub mu_t: f64,
    pub mu_c: f64,
    pub s2_t: f64,
    pub s2_c: f64,
    /// The same over unselected control agents.
    pub mu0_check: f64,
    pub s2_0_check: f64,
    /// `(1/n) Σ (R^c − mean)²` over the whole control arm.
    pub var_control: f64,
}

pub fn plug_ins(data: &RctDataset, k: KChoice, truncate_at: Option<usize>) -> Result<PlugIns> {
    require_single_round(data, "knn variance")?;
    let n = data.n();
    let nf = n as f64;
    let k = resolve_k(k, n, data.per_round_budget())?;
    let sel = selection(data, 1)?;
    let tp = arm_totals(data.policy_arm(), truncate_at)?;
    let tc = arm_totals(data.control_arm(), truncate_at)?;
    let rp: Vec<f64> = sel.treated.iter().map(|&i| tp[i]).collect();
    let rc: Vec<f64> = sel.counterfactual.iter().map(|&i| tc[i]).collect();
    let mut chosen = vec![false; n];
    for &i in &sel.counterfactual {
        chosen[i] = true;
    }
    let r0: Vec<f64> = (0..n).filter(|&i| !chosen[i]).map(|i| tc[i]).collect();
    let moments = |v: &[f64]| {
        let mu = v.iter().sum::<f64>() / nf;
        (mu, v.iter().map(|x| x * x).sum::<f64>() / nf - mu * mu)
    };
    let (mu_t, s2_t) = moments(&rp);
    let (mu_c, s2_c) = moments(&rc);
    let (mu0_check, s2_0_check) = moments(&r0);
    let mc = tc.iter().sum::<f64>() / nf;
    Ok(PlugIns {
        alpha: data.alpha(),
        k,
        m_p: conditional_mean_at_quantile(&rp, k)?,
        m_c: conditional_mean_at_quantile(&rc, k)?,
        mu_t,
        mu_c,
        s2_t,
        s2_c,
        mu0_check,
        s2_0_check,
        var_control: tc.iter().map(|x| (x - mc).powi(2)).sum::<f64>() / nf,
    })
}

impl PlugIns {
    /// Unclamped knn subgroup variance.
    pub fn sg_raw(&self) -> f64 {
        let a = self.alpha;
        (a * (1.0 - a) * (self.m_p.powi(2) + self.m_c.powi(2))
            - 2.0 * (1.0 - a) * (self.m_p * self.mu_t + self.m_c * self.mu_c)
            + self.s2_t
            + self.s2_c)
            / (a * a)
    }

    /// Unclamped knn base variance.
    pub fn base_raw(&self) -> f64 {
        let a = self.alpha;
        let d = self.m_p - self.m_c;
        (a * (1.0 - a) * d * d + (2.0 * a * self.mu0_check - 2.0 * (1.0 - a) * self.mu_t) * d + self.s2_t + self.s2_0_check
            - 2.0 * self.mu0_check * self.mu_t
            + self.var_control)
            / (a * a)
    }

    pub fn hybrid_terms(&self) -> HybridWeightTerms {
        let a = self.alpha;
        let (r1, r0) = (self.m_p, self.m_c);
        let (mt, mc, m0) = (self.mu_t, self.mu_c, self.mu0_check);
        let big_a = 2.0 * a * (1.0 - a) * r0 * r0 + 2.0 * self.s2_0_check - 4.0 * a * r0 * m0;
        let big_b = -2.0 * (mt + mc) * m0 + 2.0 * (mt + mc) * r0 * (1.0 - a) + 2.0 * a * m0 * (r1 + r0)
            - 2.0 * a * (1.0 - a) * r0 * (r1 + r0);
        let big_c = self.s2_t + self.s2_c - 2.0 * (1.0 - a) * (r1 * mt + r0 * mc) + a * (1.0 - a) * (r1 * r1 + r0 * r0);
        HybridWeightTerms { a: big_a, b: big_b, c: big_c, w_star: -big_b / (2.0 * big_a), alpha: a, k_used: self.k }
    }
}

pub fn var_sg_knn(data: &RctDataset, k: KChoice, truncate_at: Option<usize>) -> Result<VarianceEstimate> {
    let p = plug_ins(data, k, truncate_at)?;
    Ok(VarianceEstimate::clamped(p.sg_raw(), VarianceMethod::SgKnn, Some(p.k)))
}

pub fn var_base_knn(data: &RctDataset, k: KChoice, truncate_at: Option<usize>) -> Result<VarianceEstimate> {
    let p = plug_ins(data, k, truncate_at)?;
    Ok(VarianceEstimate::clamped(p.base_raw(), VarianceMethod::BaseKnn, Some(p.k)))
}

/// Coefficients of `σ²_hyb(w) = (w² A + w B + C) / α²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridWeightTerms {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// `−B / (2A)`; meaningful only when `A > 0`.
    pub w_star: f64,
    pub alpha: f64,
    pub k_used: usize,
}

impl HybridWeightTerms {
    /// Unclamped `σ²_hyb(w)`.
    pub fn variance_at(&self, w: f64) -> f64 {
        (w * w * self.a + w * self.b + self.c) / (self.alpha * self.alpha)
    }

    /// Unclamped `σ²_hyb(w*) = (C − B² / 4A) / α²`.
    pub fn optimal_variance(&self) -> f64 {
        (self.c - self.b * self.b / (4.0 * self.a)) / (self.alpha * self.alpha)
    }
}

/// Plug-in hybrid coefficients without the `A > 0` check.
pub fn hybrid_weight_terms(data: &RctDataset, k: KChoice, truncate_at: Option<usize>) -> Result<HybridWeightTerms> {
    Ok(plug_ins(data, k, truncate_at)?.hybrid_terms())
}

/// Plug-in hybrid coefficients; fails when `Â <= 0`.
pub fn hybrid_optimal_weight(data: &RctDataset, k: KChoice, truncate_at: Option<usize>) -> Result<HybridWeightTerms> {
    let t = hybrid_weight_terms(data, k, truncate_at)?;
    if !(t.a > 0.0) {
        return Err(Error::Numerical(format!("hybrid curvature A = {} is not positive", t.a)));
    }
    Ok(t)
}

/// `point ∓ Z_{1−β/2} sqrt(σ² / n)` with `β = 1 − level`.
pub fn confidence_interval(point: f64, sigma2: f64, n: usize, level: f64) -> Result<(f64, f64)> {
    if !(sigma2 >= 0.0) {
        return Err(Error::Config(format!("variance must be nonnegative, got {sigma2}")));
    }
    if n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    let h = two_sided_z(level)? * (sigma2 / n as f64).sqrt();
    Ok((point - h, point + h))
}

/// One-sided p-value for `H0: τ <= 0`, `1 − Φ(sqrt(n) θ / σ)`.
pub fn p_value_positive_effect(point: f64, sigma2: f64, n: usize) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::Numerical(format!("p-value needs a positive variance, got {sigma2}")));
    }
    Ok(normal_sf((n as f64).sqrt() * point / sigma2.sqrt()))
}

/// Interval for `τ₁ − τ₂` from two independent trials of equal size.
pub fn compare_policies(r1: &EstimateReport, r2: &EstimateReport, level: f64) -> Result<(f64, f64)> {
    let (Some(v1), Some(v2)) = (r1.variance, r2.variance) else {
        return Err(Error::Config("both reports need a variance".into()));
    };
    if r1.n != r2.n {
        return Err(Error::Config(format!("reports have different n: {} vs {}", r1.n, r2.n)));
    }
    confidence_interval(r1.point - r2.point, v1 + v2, r1.n, level)
}

/// Welch z-interval for a subgroup contrast.
pub fn welch_interval(view: &SubgroupView, level: f64) -> Result<(f64, f64)> {
    confidence_interval(view.point(), welch_sg_variance(view, Centering::GroupMean)?, view.n, level)
}

/// Welch z-interval for the base estimator.
pub fn welch_interval_base(data: &RctDataset, truncate_at: Option<usize>, level: f64) -> Result<(f64, f64)> {
    let point = estimators::base_point(data, truncate_at)?;
    confidence_interval(point, welch_base_variance(data, truncate_at)?, data.n(), level)
}

/// Options for [`evaluate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub level: f64,
    pub truncate_at: Option<usize>,
    pub upto_round: Option<usize>,
    pub k: KChoice,
    pub centering: Centering,
    pub hybrid_weight: HybridWeight,
    pub ols_covariance: OlsCovariance,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            level: 0.95,
            truncate_at: None,
            upto_round: None,
            k: KChoice::Auto,
            centering: Centering::GroupMean,
            hybrid_weight: HybridWeight::Auto,
            ols_covariance: OlsCovariance::Classical,
        }
    }
}

/// Variance used when none is requested: the knn/Theorem-3 forms for single
/// rounds, Welch otherwise.
pub fn default_method(estimator: EstimatorKind, rounds: usize, ols: OlsCovariance) -> Option<VarianceMethod> {
    let ols = match ols {
        OlsCovariance::Classical => VarianceMethod::OlsClassical,
        OlsCovariance::Hc0 => VarianceMethod::OlsHc0,
    };
    Some(match estimator {
        EstimatorKind::Base if rounds == 1 => VarianceMethod::BaseKnn,
        EstimatorKind::Subgroup if rounds == 1 => VarianceMethod::SgSimple,
        EstimatorKind::Base | EstimatorKind::Subgroup | EstimatorKind::Threshold => VarianceMethod::Welch,
        EstimatorKind::Hybrid => VarianceMethod::HybKnn,
        EstimatorKind::MateReshuffle => return None,
        EstimatorKind::RegressionBase | EstimatorKind::RegressionSubgroup => ols,
    })
}

/// Fills variance, interval and p-value of `report`. The p-value is left
/// empty when the variance is 0.
pub fn attach_inference(mut report: EstimateReport, var: VarianceEstimate, level: f64) -> Result<EstimateReport> {
    let (lo, hi) = confidence_interval(report.point, var.value, report.n, level)?;
    report.variance = Some(var.value);
    report.variance_method = Some(var.method);
    report.variance_clamped = var.clamped;
    report.k_used = var.k_used;
    report.ci_low = Some(lo);
    report.ci_high = Some(hi);
    report.level = level;
    report.p_value = if var.value > 0.0 { Some(p_value_positive_effect(report.point, var.value, report.n)?) } else { None };
    Ok(report)
}

fn unsupported(estimator: EstimatorKind, method: VarianceMethod) -> Error {
    Error::Config(format!("variance `{}` is not available for estimator `{}`", method.as_str(), estimator.as_str()))
}

/// Point estimate plus inference with the requested (or default) variance.
pub fn evaluate(
    data: &RctDataset,
    estimator: EstimatorKind,
    method: Option<VarianceMethod>,
    opts: &EvalOptions,
) -> Result<EstimateReport> {
    let t = opts.truncate_at;
    let method = method.or_else(|| default_method(estimator, data.rounds(), opts.ols_covariance));
    let plain = |value: f64, m: VarianceMethod| VarianceEstimate { value, method: m, k_used: None, clamped: false };
    let (report, var) = match estimator {
        EstimatorKind::Base => {
            let rep = estimators::estimate_base(data, t)?;
            let var = match method {
                Some(VarianceMethod::BaseKnn) => var_base_knn(data, opts.k, t)?,
                Some(VarianceMethod::Welch) => plain(welch_base_variance(data, t)?, VarianceMethod::Welch),
                Some(m) => return Err(unsupported(estimator, m)),
                None => return Ok(rep),
            };
            (rep, var)
        }
        EstimatorKind::Subgroup => {
            let r = estimators::resolve_round(data, opts.upto_round)?;
            let rep = estimators::estimate_subgroup(data, Some(r), t)?;
            let var = match method {
                Some(VarianceMethod::SgSimple) => var_sg_simple(data, opts.centering, t)?,
                Some(VarianceMethod::SgKnn) => var_sg_knn(data, opts.k, t)?,
                Some(VarianceMethod::Welch) => {
                    plain(welch_sg_variance(&build_subgroup_view(data, r, t)?, opts.centering)?, VarianceMethod::Welch)
                }
                Some(m) => return Err(unsupported(estimator, m)),
                None => return Ok(rep),
            };
            (rep, var)
        }
        EstimatorKind::Threshold => {
            let rep = estimators::estimate_threshold(data, t)?;
            let var = match method {
                Some(VarianceMethod::Welch) => plain(welch_threshold_variance(data, t)?, VarianceMethod::Welch),
                Some(m) => return Err(unsupported(estimator, m)),
                None => return Ok(rep),
            };
            (rep, var)
        }
        EstimatorKind::Hybrid => {
            let rep = estimators::estimate_hybrid(data, opts.hybrid_weight, opts.k, t)?;
            let var = match method {
                Some(VarianceMethod::HybKnn) => {
                    let terms = match opts.hybrid_weight {
                        HybridWeight::Auto => hybrid_optimal_weight(data, opts.k, t)?,
                        HybridWeight::Fixed(_) => hybrid_weight_terms(data, opts.k, t)?,
                    };
                    let raw = match opts.hybrid_weight {
                        HybridWeight::Auto => terms.optimal_variance(),
                        HybridWeight::Fixed(w) => terms.variance_at(w),
                    };
                    VarianceEstimate::clamped(raw, VarianceMethod::HybKnn, Some(terms.k_used))
                }
                Some(m) => return Err(unsupported(estimator, m)),
                None => return Ok(rep),
            };
            (rep, var)
        }
        EstimatorKind::MateReshuffle => {
            if let Some(m) = method {
                return Err(unsupported(estimator, m));
            }
            let point = estimators::estimate_mate_reshuffle(data, t)?;
            let mut rep = EstimateReport::point_only(estimator, point, data, t.unwrap_or(data.horizon()));
            rep.level = opts.level;
            return Ok(rep);
        }
        EstimatorKind::RegressionBase | EstimatorKind::RegressionSubgroup => {
            let kind = if estimator == EstimatorKind::RegressionBase { RegressionKind::Base } else { RegressionKind::Subgroup };
            let cov = match method {
                Some(VarianceMethod::OlsClassical) | None => OlsCovariance::Classical,
                Some(VarianceMethod::OlsHc0) => OlsCovariance::Hc0,
                Some(m) => return Err(unsupported(estimator, m)),
            };
            let rep = estimators::estimate_regression(data, kind, opts.upto_round, t, cov)?;
            let var = plain(rep.variance.unwrap_or(0.0), rep.variance_method.unwrap_or(VarianceMethod::OlsClassical));
            (rep, var)
        }
    };
    attach_inference(report, var, opts.level)
}
