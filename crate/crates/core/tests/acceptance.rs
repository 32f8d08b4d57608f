//! Acceptance suite. Each test checks one criterion against an independent
//! oracle and prints a single `PASS`/`FAIL` line before asserting.

use std::io::Write;
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use odos::cost::CostModel;
use odos::dataset::{Dataset, Value};
use odos::design::Design;
use odos::expected::{expected_utility_design, expected_utility_plan, sampled_design_utility, MCConfig, Problem, UtilityEstimate};
use odos::frame::StudyFrame;
use odos::inference::{expected_information, posterior, posterior_given_plan, PosteriorMethod};
use odos::models::{ctmc_transition_matrix, GammaPrior, ModelSpec, ParameterDraw};
use odos::plan::{MeasurementPlan, Triple};
use odos::scenarios::{run_markov_timing, run_sample_size, run_subsample_selection, MarkovTiming, SampleSize, Strategy, SubsampleSelection};
use odos::search::{binary_search_sample_size, exchange_improve, greedy_augment, Budget, CandidatePool, ExchangeRule};
use odos::seed::rng_from_seed;
use odos::testkit::{
    enumerate_oracle, fd_pair_information, linreg_log_det, markov_timing_oracle, naive_transition, plan_units,
    quadrature_oracle, surface_argmax,
};
use odos::utility::{DecisionRow, Functional, RiskCurve, UtilitySpec};
use odos::voi::{eligibility, eligible, voi_linear, voi_price, PriceEquation};

fn verdict(id: u32, name: &str, pass: bool, detail: String, elapsed: Duration, limit: Duration) {
    let in_time = elapsed <= limit;
    let ok = pass && in_time;
    // Written to the raw handle so the line shows even when output is captured.
    let _ = writeln!(
        std::io::stdout().lock(),
        "acceptance {id:>2} {name:<32} {} {detail} [{:.2}s / limit {}s]",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
    assert!(in_time, "criterion {id} ({name}) exceeded {}s", limit.as_secs());
}

fn normal(noise_var: f64, prior_var: f64) -> ModelSpec {
    ModelSpec::NormalMean {
        noise_var,
        prior_mean: 0.0,
        prior_var,
    }
}

fn linreg(covariates: Vec<Vec<f64>>) -> ModelSpec {
    let q = covariates[0].len();
    ModelSpec::LinReg {
        noise_var: 1.0,
        prior_mean: vec![0.0; q],
        prior_cov: (0..q).map(|i| (0..q).map(|j| if i == j { 10.0 } else { 0.0 }).collect()).collect(),
        covariates,
    }
}

fn random_covariates(n: usize, slopes: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| std::iter::once(1.0).chain((0..slopes).map(|_| rng.sample::<f64, _>(StandardNormal))).collect())
        .collect()
}

fn first_units(frame: &StudyFrame, n: usize) -> MeasurementPlan {
    MeasurementPlan::units_at(frame, 0..n, 0, 0).unwrap()
}

fn posterior_variance() -> UtilitySpec {
    UtilitySpec::NegPosteriorVariance {
        target: Functional::Component(0),
    }
}

fn quadratic() -> UtilitySpec {
    UtilitySpec::DecisionQuadratic {
        target: Functional::Component(0),
    }
}

fn act_or_wait() -> UtilitySpec {
    UtilitySpec::DecisionTable {
        decisions: vec![
            DecisionRow {
                label: "act".into(),
                constant: -0.1,
                coefficients: vec![1.0],
            },
            DecisionRow {
                label: "wait".into(),
                constant: 0.0,
                coefficients: vec![0.0],
            },
        ],
    }
}

fn shipped(path: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(path)
}

#[test]
fn conjugate_exactness() {
    let start = Instant::now();
    let frame = StudyFrame::cross_section(8).unwrap();
    let empty = Dataset::empty();
    let mut worst = 0.0f64;
    let mut slowest = Duration::ZERO;
    for (noise_var, prior_var) in [(1.0, 1.0), (0.5, 2.0), (4.0, 0.25)] {
        let model = normal(noise_var, prior_var);
        let problem = Problem::new(&frame, &model, &empty);
        for n in [1usize, 2, 3, 4, 8] {
            let t = Instant::now();
            let est = expected_utility_plan(&problem, &first_units(&frame, n), &posterior_variance(), &MCConfig::new(1000, n as u64))
                .unwrap();
            slowest = slowest.max(t.elapsed());
            let exact = -1.0 / (1.0 / prior_var + n as f64 / noise_var);
            worst = worst.max((est.mean - exact).abs());
        }
    }
    verdict(
        1,
        "conjugate exactness",
        worst <= 1e-9 && slowest < Duration::from_secs(1),
        format!("max |error| {worst:.1e}, slowest case {:.3}s", slowest.as_secs_f64()),
        start.elapsed(),
        Duration::from_secs(15),
    );
}

#[test]
fn sampled_plans_match_enumeration() {
    let start = Instant::now();
    let frame = StudyFrame::cross_section(4).unwrap();
    let model = normal(1.0, 1.0);
    let empty = Dataset::empty();
    let problem = Problem::new(&frame, &model, &empty);
    let design = Design::simple_random_sample(&frame, 2, vec![0], 0).unwrap();
    let utility = act_or_wait();
    let mut passes = 0;
    let mut worst_z = 0.0f64;
    for seed in 0..10u64 {
        let exact_cfg = MCConfig::new(20_000, 1000 + seed);
        let exact = expected_utility_design(&problem, &design, &utility, &exact_cfg).unwrap();
        let mut cfg = MCConfig::new(10, seed);
        cfg.plan_samples = 1000;
        cfg.support_limit = 0;
        let sampled = sampled_design_utility(&problem, &design, &utility, &cfg).unwrap();
        let se = (exact.std_error.powi(2) + sampled.std_error.powi(2)).sqrt();
        let z = (exact.mean - sampled.mean).abs() / se;
        worst_z = worst_z.max(z);
        if z <= 3.0 {
            passes += 1;
        }
    }
    verdict(
        2,
        "sampled vs enumerated design",
        passes >= 9,
        format!("{passes}/10 seeds within 3 SE, worst |z| {worst_z:.2}"),
        start.elapsed(),
        Duration::from_secs(30),
    );
}

#[test]
fn greedy_exchange_reaches_optimum() {
    let start = Instant::now();
    let frame = StudyFrame::cross_section(10).unwrap();
    let empty = Dataset::empty();
    let cfg = MCConfig::new(1, 0);
    let mut hits = 0;
    let mut worst_gap = 0.0f64;
    for instance in 0..20u64 {
        let covariates = random_covariates(10, 2, 500 + instance);
        let model = linreg(covariates.clone());
        let problem = Problem::new(&frame, &model, &empty);
        let units: Vec<usize> = (0..10).collect();
        let pool = CandidatePool::units(&frame, &units, 0, 0, Budget::Exactly(4)).unwrap();
        let objective = |plan: &MeasurementPlan| expected_utility_plan(&problem, plan, &UtilitySpec::DOptimality, &cfg);
        let greedy = greedy_augment(&pool, objective).unwrap();
        let found = exchange_improve(greedy, &pool, objective, ExchangeRule::default()).unwrap();
        let (_, best) = enumerate_oracle(10, 4, true, |s| linreg_log_det(&covariates, 1.0, s, &[])).unwrap();
        let own = linreg_log_det(&covariates, 1.0, &plan_units(&found.plan), &[]);
        assert!((own - found.utility.mean).abs() < 1e-9, "search reports {} but plan has {own}", found.utility.mean);
        let gap = best - own;
        worst_gap = worst_gap.max(gap);
        if gap <= 1e-9 {
            hits += 1;
        }
    }
    verdict(
        3,
        "greedy+exchange vs enumeration",
        hits >= 16 && worst_gap <= 0.05,
        format!("optimum hit {hits}/20, worst gap {worst_gap:.2e}"),
        start.elapsed(),
        Duration::from_secs(60),
    );
}

#[test]
fn sample_size_is_minimal() {
    let start = Instant::now();
    let (noise_var, prior_var) = (2.0, 3.0);
    let model = normal(noise_var, prior_var);
    let frame = StudyFrame::cross_section(200).unwrap();
    let empty = Dataset::empty();
    let problem = Problem::new(&frame, &model, &empty);
    let cfg = MCConfig::new(50, 4);
    let exact = |n: usize| -1.0 / (1.0 / prior_var + n as f64 / noise_var);
    let objective =
        |n: usize| expected_utility_plan(&problem, &first_units(&frame, n), &posterior_variance(), &cfg);
    let mut failures = Vec::new();
    for k in 0..10 {
        let target_var = 0.02 + 0.27 * k as f64;
        let target = -target_var;
        let found = binary_search_sample_size(objective, target, 200).unwrap().n;
        let reaches = exact(found) >= target;
        let minimal = found == 0 || exact(found - 1) < target;
        if !(reaches && minimal) {
            failures.push((target_var, found));
        }
    }
    let curve_model = normal(1.0, 1.0);
    let report = run_sample_size(
        &curve_model,
        &SampleSize {
            target_variance: 0.1,
            n_max: 50,
            curve: vec![1, 2, 4, 8],
        },
        None,
        &MCConfig::new(100, 8),
    )
    .unwrap();
    let curve_err = report.details["curve"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|p| [1, 2, 4, 8].contains(&p["n"].as_u64().unwrap()))
        .map(|p| (p["mean_posterior_variance"].as_f64().unwrap() - 1.0 / (1.0 + p["n"].as_f64().unwrap())).abs())
        .fold(0.0f64, f64::max);
    verdict(
        4,
        "sample-size minimality",
        failures.is_empty() && curve_err <= 1e-9 && report.details["n"] == 9,
        format!("failures {failures:?}, curve max error {curve_err:.1e}, n(0.1) = {}", report.details["n"]),
        start.elapsed(),
        Duration::from_secs(10),
    );
}

#[test]
fn value_of_information_identities() {
    let start = Instant::now();
    let frame = StudyFrame::cross_section(6).unwrap();
    let empty = Dataset::empty();
    let base = normal(1.0, 1.0);
    let problem = Problem::new(&frame, &base, &empty);
    let cfg = MCConfig::new(400, 1);
    let null = voi_linear(&problem, &MeasurementPlan::empty(), &quadratic(), &cfg).unwrap();
    let one = voi_linear(&problem, &first_units(&frame, 1), &quadratic(), &cfg).unwrap();

    let mut worst_ratio = 0.0f64;
    for k in 0..10u64 {
        let prior_var = 0.5 + 0.3 * k as f64;
        let model = normal(1.0 + 0.1 * k as f64, prior_var);
        let problem = Problem::new(&frame, &model, &empty);
        let plan = first_units(&frame, 1 + (k as usize % 4));
        let utility = if k % 2 == 0 { quadratic() } else { act_or_wait() };
        let cfg = MCConfig::new(300, 40 + k);
        let lin = voi_linear(&problem, &plan, &utility, &cfg).unwrap();
        let price = voi_price(&problem, &plan, &utility, RiskCurve::IDENTITY, &cfg).unwrap();
        let ratio = (lin.value - price.value).abs() / (2.0 * (lin.std_error + 1e-6));
        worst_ratio = worst_ratio.max(ratio);
    }

    let mut worst_residual = 0.0f64;
    for (k, rho) in [0.05, 0.1, 0.2, 0.3].into_iter().enumerate() {
        let curve = RiskCurve::Exponential { risk_aversion: rho };
        let plan = first_units(&frame, 1 + k);
        let cfg = MCConfig::new(200, 70 + k as u64);
        for utility in [quadratic(), act_or_wait()] {
            let v = voi_price(&problem, &plan, &utility, curve, &cfg).unwrap();
            let eq = PriceEquation::new(&problem, &plan, &utility, curve, &cfg).unwrap();
            let residual = (eq.lhs(v.value).unwrap() - eq.rhs()).abs() / eq.rhs().abs();
            worst_residual = worst_residual.max(residual);
        }
    }
    let pass = null.value == 0.0 && (one.value - 0.5).abs() <= 1e-9 && worst_ratio <= 1.0 && worst_residual <= 1e-5;
    verdict(
        5,
        "value of information identities",
        pass,
        format!(
            "null {}, n=1 {:.12}, identity-price gap/2(SE+1e-6) max {worst_ratio:.3}, residual {worst_residual:.1e}",
            null.value, one.value
        ),
        start.elapsed(),
        Duration::from_secs(30),
    );
}

#[test]
fn eligibility_boundary() {
    let start = Instant::now();
    let table = [
        (1.0, 1.0, false),
        (1.0 + 1e-12, 1.0, true),
        (0.0, 0.0, false),
        (0.5, 0.6, false),
        (2.0, 0.0, true),
    ];
    let mut mismatches: Vec<String> = table
        .iter()
        .filter(|(v, c, want)| eligible(*v, *c).eligible != *want)
        .map(|(v, c, want)| format!("({v}, {c}) expected {want}"))
        .collect();

    // One observation is worth exactly 0.5; at a price of 0.5 it is not worth buying.
    let frame = StudyFrame::cross_section(2).unwrap();
    let model = normal(1.0, 1.0);
    let empty = Dataset::empty();
    let plan = first_units(&frame, 1);
    let voi = voi_linear(&Problem::new(&frame, &model, &empty), &plan, &quadratic(), &MCConfig::new(50, 0)).unwrap();
    for (price, want) in [(0.5, false), (0.25, true)] {
        let e = eligibility(&plan, &CostModel::PerMeasurement { cost: price }, &frame, &voi).unwrap();
        if e.eligible != want {
            mismatches.push(format!("pipeline at cost {price}: margin {}", e.margin));
        }
    }
    verdict(
        6,
        "eligibility boundary",
        mismatches.is_empty(),
        format!("{} table cases, mismatches {mismatches:?}", table.len()),
        start.elapsed(),
        Duration::from_secs(5),
    );
}

fn ctmc(shape: f64, rate: f64) -> ModelSpec {
    ModelSpec::TwoStateCtmc {
        lambda_prior: GammaPrior { shape, rate },
        mu_prior: GammaPrior { shape, rate },
        initial: [0.5, 0.5],
    }
}

fn shipped_panel() -> (StudyFrame, Dataset) {
    let frame = StudyFrame::new(10, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let file = std::fs::File::open(shipped("data/ctmc_panel.csv")).unwrap();
    let data = Dataset::read_csv(&frame, file).unwrap();
    (frame, data)
}

#[test]
fn two_state_chain_correctness() {
    let start = Instant::now();
    let mut rng = rng_from_seed(77);
    let mut ck_err = 0.0f64;
    for _ in 0..100 {
        let (l, m) = (rng.gen_range(0.01..5.0), rng.gen_range(0.01..5.0));
        let (a, b) = (rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0));
        let pa = ctmc_transition_matrix(l, m, a).unwrap();
        let pb = ctmc_transition_matrix(l, m, b).unwrap();
        let pab = ctmc_transition_matrix(l, m, a + b).unwrap();
        let prod = pa.mul(&pb);
        for i in 0..2 {
            for j in 0..2 {
                ck_err = ck_err.max((prod.get(i, j) - pab.get(i, j)).abs());
            }
        }
    }

    let model = ctmc(2.0, 1.0);
    let ModelSpec::TwoStateCtmc { initial, .. } = model else { unreachable!() };
    let mut info_err = 0.0f64;
    for _ in 0..20 {
        let (l, m) = (rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0));
        let (t1, dt) = (rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0));
        let frame = StudyFrame::new(1, 1, vec![0.0, t1, t1 + dt]).unwrap();
        let plan = MeasurementPlan::from_triples(&frame, [(0, 0, 0), (0, 0, 1), (0, 0, 2)]).unwrap();
        let got = expected_information(&model, &frame, &plan, &ParameterDraw::Ctmc { lambda: l, mu: m }).unwrap();
        let p = naive_transition(l, m, t1);
        let law = [
            initial[0] * p[0][0] + initial[1] * p[1][0],
            initial[0] * p[0][1] + initial[1] * p[1][1],
        ];
        let oracle: DMatrix<f64> = fd_pair_information(l, m, t1, initial) + fd_pair_information(l, m, dt, law);
        info_err = info_err.max((&got.matrix - &oracle).norm() / oracle.norm());
    }

    let (frame, data) = shipped_panel();
    let prior = ctmc(2.0, 2.0);
    let quad = quadrature_oracle(&prior, &frame, &data, 300).unwrap();
    let post = posterior(
        &prior,
        &frame,
        &data,
        PosteriorMethod::Importance { n_particles: 20_000 },
        &mut rng_from_seed(3),
    )
    .unwrap();
    let mean = post.mean();
    let post_err = (0..2).map(|k| ((mean[k] - quad.mean[k]) / quad.mean[k]).abs()).fold(0.0f64, f64::max);
    verdict(
        7,
        "two-state chain correctness",
        ck_err <= 1e-10 && info_err <= 1e-4 && post_err <= 0.02,
        format!("CK {ck_err:.1e}, information {info_err:.1e}, posterior mean {post_err:.2e} relative"),
        start.elapsed(),
        Duration::from_secs(120),
    );
}

#[test]
fn markov_timing_argmax() {
    let start = Instant::now();
    let model = ctmc(20.0, 20.0);
    let spec = MarkovTiming {
        total_observations: 60,
        n1_values: vec![2, 3, 4, 5, 6],
        deltas: vec![0.05, 0.25, 1.0, 2.5, 6.0],
    };
    let mut agree = 0;
    let mut found = Vec::new();
    for seed in [1u64, 2, 3] {
        let report = run_markov_timing(&model, &spec, &UtilitySpec::DOptimality, &MCConfig::new(100, seed)).unwrap();
        let ours = (report.details["argmax"]["row"].as_u64().unwrap() as usize, report.details["argmax"]["column"].as_u64().unwrap() as usize);
        let surface =
            markov_timing_oracle(&model, spec.total_observations, &spec.n1_values, &spec.deltas, 1000, 900 + seed).unwrap();
        let oracle = surface_argmax(&surface).unwrap();
        if ours == oracle {
            agree += 1;
        }
        found.push((ours, oracle));
    }
    verdict(
        8,
        "markov timing argmax",
        agree == 3,
        format!("(row, column) ours vs oracle per seed {found:?}"),
        start.elapsed(),
        Duration::from_secs(300),
    );
}

#[test]
fn subsample_ranking() {
    let start = Instant::now();
    let frame = StudyFrame::cross_section(12).unwrap();
    let empty = Dataset::empty();
    let strategies = vec![Strategy::ExhaustiveDopt, Strategy::Extreme, Strategy::Srs];
    let mut rows: Vec<[UtilityEstimate; 3]> = Vec::new();
    for instance in 0..10u64 {
        let model = linreg(random_covariates(12, 1, 2000 + instance));
        let r = run_subsample_selection(
            &frame,
            &model,
            &empty,
            &SubsampleSelection::new(4, strategies.clone()),
            &UtilitySpec::DOptimality,
            None,
            &MCConfig::new(1, instance),
        )
        .unwrap();
        let e = |k: usize| UtilityEstimate {
            mean: r.rows[k].utility,
            std_error: r.rows[k].se,
            n_samples: 1,
        };
        rows.push([e(0), e(1), e(2)]);
    }
    let gap = |a: usize, b: usize| {
        let diffs: Vec<f64> = rows.iter().map(|r| r[a].mean - r[b].mean).collect();
        UtilityEstimate::from_samples(&diffs)
    };
    let (top, low) = (gap(0, 1), gap(1, 2));
    let ok = |g: &UtilityEstimate| g.mean > -3.0 * g.std_error && g.mean >= -1e-12;
    verdict(
        9,
        "subsample strategy ranking",
        ok(&top) && ok(&low) && rows.iter().all(|r| r[0].mean >= r[1].mean - 1e-12),
        format!(
            "exhaustive-extreme {:.3} (SE {:.3}), extreme-srs {:.3} (SE {:.3})",
            top.mean, top.std_error, low.mean, low.std_error
        ),
        start.elapsed(),
        Duration::from_secs(120),
    );
}

fn cli_report(config: &str, command: &[&str], threads: Option<&str>, out: &std::path::Path) -> Vec<u8> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_odos"));
    cmd.args(command)
        .arg("--config")
        .arg(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(config))
        .arg("--output")
        .arg(out)
        .arg("--no-timestamp")
        .env_remove("ODOS_THREADS");
    if let Some(t) = threads {
        cmd.env("ODOS_THREADS", t);
    }
    let status = cmd.output().unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    std::fs::read(out.with_extension("report.json")).unwrap()
}

#[test]
fn determinism_and_ignorability() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let max = std::thread::available_parallelism().map_or(4, |n| n.get()).max(4).to_string();
    let mut identical = true;
    for (config, command) in [
        ("ctmc_posterior.json", vec!["evaluate"]),
        ("optimize_linreg.json", vec!["optimize"]),
        ("sample_size.json", vec!["scenario", "sample-size"]),
    ] {
        let one = cli_report(config, &command, Some("1"), &dir.path().join("one"));
        let many = cli_report(config, &command, Some(&max), &dir.path().join("many"));
        let default = cli_report(config, &command, None, &dir.path().join("default"));
        identical &= one == many && one == default;
    }

    let (frame, data) = shipped_panel();
    let model = ctmc(2.0, 2.0);
    let method = PosteriorMethod::Importance { n_particles: 2000 };
    let plain = posterior(&model, &frame, &data, method, &mut rng_from_seed(5)).unwrap();
    let plan = data.observed_plan().union(&MeasurementPlan::full_at(&frame, 3).unwrap());
    let with_plan = posterior_given_plan(&model, &frame, &data, &plan, method, &mut rng_from_seed(5)).unwrap();
    let gauss = linreg(random_covariates(6, 1, 8));
    let gframe = StudyFrame::cross_section(6).unwrap();
    let gdata = Dataset::from_entries(&gframe, [(Triple::new(0, 0, 0), Value::Observed(1.2)), (Triple::new(3, 0, 0), Value::Observed(-0.4))]).unwrap();
    let gplan = first_units(&gframe, 4);
    let g_plain = posterior(&gauss, &gframe, &gdata, PosteriorMethod::ExactIfAvailable, &mut rng_from_seed(0)).unwrap();
    let g_plan =
        posterior_given_plan(&gauss, &gframe, &gdata, &gplan, PosteriorMethod::ExactIfAvailable, &mut rng_from_seed(0)).unwrap();
    let ignorable = plain == with_plan && g_plain == g_plan;
    verdict(
        10,
        "determinism and ignorability",
        identical && ignorable,
        format!("reports identical across 1/{max}/default threads: {identical}, posterior unchanged by plan: {ignorable}"),
        start.elapsed(),
        Duration::from_secs(30),
    );
}
