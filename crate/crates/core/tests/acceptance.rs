//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

use policy_eval::estimators::{base_point, build_subgroup_view, estimate_hybrid, estimate_regression, HybridWeight, OlsCovariance, RegressionKind};
use policy_eval::experiments::{
    corner_case_plan, corner_case_study, coverage_experiment, monte_carlo_estimand, replicate_reports,
    simulate_replicate, CoverageResult, EstimatorSpec, ExperimentPlan,
};
use policy_eval::inference::{
    confidence_interval, evaluate, hybrid_weight_terms, var_sg_simple, welch_sg_variance, Centering, EvalOptions,
    KChoice, VarianceMethod,
};
use policy_eval::policies::{whittle_index_of, WhittleConfig};
use policy_eval::simulators::{expected_reward, sample_synthetic_cohort, simulate_reward_path, InitialState, SimulatorConfig};
use policy_eval::{EstimatorKind, RctDataset, TransitionModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

fn row<'a>(res: &'a CoverageResult, label: &str) -> &'a policy_eval::CoverageSummary {
    &res.rows.iter().find(|r| r.estimator.to_string() == label).unwrap().summary
}

fn width(lo_hi: (f64, f64)) -> f64 {
    lo_hi.1 - lo_hi.0
}

fn datasets(count: u64, alphas: &[f64], n: usize, horizon: usize, seed: u64) -> Vec<RctDataset> {
    (0..count)
        .map(|r| {
            let mut plan = ExperimentPlan::default();
            plan.simulator.n = n;
            plan.simulator.horizon = horizon;
            plan.simulator.seed = seed;
            plan.policy.alpha = alphas[r as usize % alphas.len()];
            simulate_replicate(&plan, r).unwrap()
        })
        .collect()
}

fn c1_c2() -> (Outcome, Outcome) {
    let res = coverage_experiment(&ExperimentPlan::default()).unwrap();
    let base = row(&res, "base");
    let sg = row(&res, "subgroup");
    let band = |c: f64| (0.92..=0.975).contains(&c);
    let ratio = sg.mean_half_width / base.mean_half_width;
    (
        (
            band(base.covered) && band(sg.covered),
            format!("coverage base {:.3}, subgroup {:.3}; band [0.92, 0.975]", base.covered, sg.covered),
        ),
        (
            ratio < 0.6,
            format!(
                "half-width subgroup {:.4} / base {:.4} = {ratio:.3}; need < 0.6",
                sg.mean_half_width, base.mean_half_width
            ),
        ),
    )
}

fn c3() -> Outcome {
    let ratio = |alpha: f64| {
        let mut plan = ExperimentPlan::default();
        plan.policy.alpha = alpha;
        let res = coverage_experiment(&plan).unwrap();
        row(&res, "subgroup").mean_half_width / row(&res, "base").mean_half_width
    };
    let (small, large) = (ratio(0.02), ratio(0.2));
    (small < large && small < 0.3, format!("width ratio at alpha 0.02 {small:.3}, at 0.2 {large:.3}; need smaller and < 0.3"))
}

fn c4() -> Outcome {
    let mut checked = 0;
    let mut worst = f64::INFINITY;
    for data in datasets(200, &[0.05, 0.2, 0.5, 0.8], 120, 4, 4) {
        let view = build_subgroup_view(&data, 1, None).unwrap();
        let point = view.point();
        let welch = confidence_interval(point, welch_sg_variance(&view, Centering::GroupMean).unwrap(), data.n(), 0.95).unwrap();
        let sg = confidence_interval(point, var_sg_simple(&data, Centering::GroupMean, None).unwrap().value, data.n(), 0.95).unwrap();
        worst = worst.min(width(welch) - width(sg));
        checked += 1;
    }
    (worst >= 0.0, format!("{checked} datasets, min(Welch width - simple width) = {worst:.3e}"))
}

fn c5() -> Outcome {
    let mut worst: f64 = 0.0;
    for data in datasets(100, &[1.0], 40, 3, 5) {
        let base = base_point(&data, None).unwrap();
        let sg = build_subgroup_view(&data, 1, None).unwrap().point();
        worst = worst.max((base - sg).abs());
    }
    (worst <= 1e-12, format!("100 datasets with alpha 1, max |base - subgroup| = {worst:.2e}"))
}

fn c6() -> Outcome {
    let mut endpoints_ok = true;
    let mut vertex_checked = 0;
    let mut vertex_ok = true;
    for data in datasets(100, &[0.1, 0.2, 0.4], 300, 5, 6) {
        let sg = build_subgroup_view(&data, 1, None).unwrap().point();
        let base = base_point(&data, None).unwrap();
        let h0 = estimate_hybrid(&data, HybridWeight::Fixed(0.0), KChoice::Auto, None).unwrap().point;
        let h1 = estimate_hybrid(&data, HybridWeight::Fixed(1.0), KChoice::Auto, None).unwrap().point;
        endpoints_ok &= h0 == sg && h1 == base;
        let t = hybrid_weight_terms(&data, KChoice::Auto, None).unwrap();
        if t.a > 0.0 {
            vertex_checked += 1;
            let lim = t.variance_at(0.0).min(t.variance_at(1.0));
            vertex_ok &= t.optimal_variance() <= lim + 1e-12 * lim.abs();
        }
    }
    (
        endpoints_ok && vertex_ok && vertex_checked > 0,
        format!("endpoints exact: {endpoints_ok}; vertex below both endpoints on {vertex_checked} datasets with A > 0: {vertex_ok}"),
    )
}

fn corner(sigma: f64, replicates: usize) -> CoverageResult {
    corner_case_study(&corner_case_plan(500, 0.5, sigma, replicates, 7)).unwrap()
}

fn c7() -> Outcome {
    let res = corner(0.05, 10_000);
    let base = row(&res, "base:base_knn");
    let sg = row(&res, "subgroup:sg_simple");
    let knn = row(&res, "subgroup:sg_knn");
    let excess = sg.mean_half_width / base.mean_half_width - 1.0;
    (
        sg.sd_point > base.sd_point && (0.10..=0.35).contains(&excess),
        format!(
            "std subgroup {:.3} vs base {:.3}; width excess {:+.1}% (knn variance {:+.1}%); need +10% to +35%",
            sg.sd_point,
            base.sd_point,
            100.0 * excess,
            100.0 * (knn.mean_half_width / base.mean_half_width - 1.0)
        ),
    )
}

fn c8() -> Outcome {
    let res = corner(0.08, 10_000);
    let base = row(&res, "base:base_knn").mean_half_width;
    let sg = row(&res, "subgroup:sg_simple").mean_half_width;
    let hyb = row(&res, "hybrid:hyb_knn").mean_half_width;
    (
        hyb <= 0.9 * base && hyb <= 0.9 * sg,
        format!("half-width hybrid {hyb:.3}, base {base:.3}, subgroup {sg:.3}; need hybrid at least 10% below both"),
    )
}

fn c9() -> Outcome {
    let mut plan = ExperimentPlan::default();
    plan.simulator.effect_cap = 0.0;
    plan.simulator.seed = 9;
    plan.estimators = EstimatorKind::ALL.into_iter().map(EstimatorSpec::new).collect();
    let reports = replicate_reports(&plan).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for (e, spec) in plan.estimators.iter().enumerate() {
        let col: Vec<_> = reports.iter().filter_map(|r| r[e].as_ref().ok()).collect();
        let pts: Vec<f64> = col.iter().map(|r| r.point).collect();
        let m = pts.len() as f64;
        let mean = pts.iter().sum::<f64>() / m;
        let se = (pts.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt() / m.sqrt();
        ok &= pts.len() == reports.len() && mean.abs() <= 4.0 * se;
        let mut note = format!("{spec} mean/se {:+.2}", mean / se);
        if matches!(spec.kind, EstimatorKind::Base | EstimatorKind::Subgroup) {
            let rej = col.iter().filter(|r| r.p_value.is_some_and(|p| p <= 0.05)).count() as f64 / m;
            ok &= (0.02..=0.09).contains(&rej);
            note.push_str(&format!(" reject {rej:.3}"));
        }
        notes.push(note);
    }
    (ok, notes.join("; "))
}

fn c10() -> Outcome {
    let cfg = SimulatorConfig { n: 50, horizon: 6, seed: 10, ..SimulatorConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cohort = sample_synthetic_cohort(&cfg, &mut rng).unwrap();
    let draws = 4000;
    let mut worst: f64 = 0.0;
    for agent in cohort.agents() {
        let week = rng.random_range(0..=cfg.horizon);
        let sums: Vec<f64> = (0..draws)
            .map(|_| simulate_reward_path(agent, week, cfg.horizon, InitialState::Stationary, &mut rng).unwrap().iter().sum())
            .collect();
        let mean = sums.iter().sum::<f64>() / draws as f64;
        let sd = (sums.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
        let exact = expected_reward(agent, week, cfg.horizon, InitialState::Stationary).unwrap();
        worst = worst.max((mean - exact).abs() / (sd / (draws as f64).sqrt()).max(1e-12));
    }
    let cc = monte_carlo_estimand(&corner_case_plan(200, 0.5, 0.05, 1, 10)).unwrap().value;
    (worst <= 4.0 && cc == 1.0, format!("50 agents, max |MC - exact| = {worst:.2} SE; corner-case estimand {cc}"))
}

fn c11() -> Outcome {
    let mut worst: f64 = 0.0;
    for data in datasets(50, &[0.1, 0.3], 200, 4, 11) {
        let reg = estimate_regression(&data, RegressionKind::Subgroup, None, None, OlsCovariance::Classical).unwrap().point;
        worst = worst.max((reg - build_subgroup_view(&data, 1, None).unwrap().point()).abs());
    }
    (worst <= 1e-10, format!("50 datasets, max |regression - subgroup| = {worst:.2e}"))
}

fn c12() -> Outcome {
    let mut exact = true;
    let welch = Some(VarianceMethod::Welch);
    for data in datasets(30, &[0.1, 0.2], 200, 4, 12) {
        let seq = EvalOptions { upto_round: Some(1), ..EvalOptions::default() };
        for kind in [EstimatorKind::Subgroup, EstimatorKind::Base] {
            let a = evaluate(&data, kind, welch, &seq).unwrap();
            let b = evaluate(&data, kind, welch, &EvalOptions::default()).unwrap();
            exact &= a == b;
        }
    }
    let widths: Vec<f64> = (1..=5)
        .map(|rounds| {
            let mut plan = ExperimentPlan::default();
            plan.simulator.seed = 12;
            plan.replicates = 200;
            plan.estimand_reps = 200;
            plan.policy.alpha = 0.2 / rounds as f64;
            plan.policy.rounds = rounds;
            plan.estimators = vec![EstimatorSpec::with_variance(EstimatorKind::Base, VarianceMethod::Welch)];
            coverage_experiment(&plan).unwrap().rows[0].summary.mean_half_width
        })
        .collect();
    let lo = widths.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = widths.iter().cloned().fold(0.0, f64::max);
    let spread = hi / lo - 1.0;
    (
        exact && spread < 0.10,
        format!(
            "rounds=1 sequential equals single-shot: {exact}; base half-widths {:?}, spread {:.1}%",
            widths.iter().map(|w| format!("{w:.3}")).collect::<Vec<_>>(),
            100.0 * spread
        ),
    )
}

// Value iteration, independent of the library solver.
fn advantage_vi(t: &TransitionModel, subsidy: f64, discount: f64, state: usize) -> f64 {
    let q = |v: &[f64; 2], s: usize, a: usize| {
        t.prob(a, s, 1) + if a == 0 { subsidy } else { 0.0 } + discount * (t.prob(a, s, 0) * v[0] + t.prob(a, s, 1) * v[1])
    };
    let mut v = [0.0; 2];
    for _ in 0..10_000 {
        let next = [q(&v, 0, 0).max(q(&v, 0, 1)), q(&v, 1, 0).max(q(&v, 1, 1))];
        let done = (next[0] - v[0]).abs().max((next[1] - v[1]).abs()) < 1e-13;
        v = next;
        if done {
            break;
        }
    }
    q(&v, state, 1) - q(&v, state, 0)
}

fn grid_index(t: &TransitionModel, cfg: &WhittleConfig) -> f64 {
    let (lo, hi) = cfg.bracket();
    let f = |l: f64| advantage_vi(t, l, cfg.discount, cfg.eval_state);
    let coarse = 0.01;
    let mut l = lo;
    while l + coarse <= hi && f(l + coarse) >= 0.0 {
        l += coarse;
    }
    let fine = 1e-4;
    let mut m = l;
    for _ in 0..=(coarse / fine).round() as usize {
        if f(m + fine) < 0.0 {
            break;
        }
        m += fine;
    }
    -(m + fine / 2.0)
}

fn c13() -> Outcome {
    let cfg = WhittleConfig { tol: 1e-4, ..WhittleConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    let mut null_worst: f64 = 0.0;
    for i in 0..100 {
        let p: [f64; 2] = [rng.random(), rng.random()];
        let d: [f64; 2] = [rng.random_range(0.0..0.3), rng.random_range(0.0..0.3)];
        let t = TransitionModel::from_good_probs([p, [(p[0] + d[0]).min(1.0), (p[1] + d[1]).min(1.0)]]).unwrap();
        worst = worst.max((whittle_index_of(&t, &cfg).unwrap() - grid_index(&t, &cfg)).abs());
        if i < 20 {
            let null = TransitionModel::from_good_probs([p, p]).unwrap();
            null_worst = null_worst.max(whittle_index_of(&null, &cfg).unwrap().abs());
        }
    }
    (
        worst <= 2.0 * cfg.tol && null_worst <= cfg.tol,
        format!("100 agents, max |bisection - grid| = {worst:.2e} (bound {:.0e}); null max |index| = {null_worst:.1e}", 2.0 * cfg.tol),
    )
}

fn main() {
    let (c1, c2) = c1_c2();
    let outcomes: Vec<(usize, &str, Outcome)> = vec![
        (1, "coverage validity", c1),
        (2, "power ordering", c2),
        (3, "budget sweep", c3()),
        (4, "Welch dominance", c4()),
        (5, "alpha = 1 identity", c5()),
        (6, "hybrid endpoints and vertex", c6()),
        (7, "corner case", c7()),
        (8, "hybrid corner case", c8()),
        (9, "null calibration", c9()),
        (10, "oracle equivalence", c10()),
        (11, "regression recovery", c11()),
        (12, "sequential consistency", c12()),
        (13, "Whittle correctness", c13()),
    ];
    let mut failed = 0;
    for (i, name, (ok, detail)) in &outcomes {
        println!("criterion {i:>2} {} {name}: {detail}", if *ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
