//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. `ACCEPTANCE_ONLY=1,5` runs a subset.

mod common;
mod oracle_checks;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use stablerules_core::data::split_indices;
use stablerules_core::evaluation::{
    run_ablation, run_experiment, run_profiles, spearman_consistency, AblationConfig, AblationReport, ExperimentConfig,
    ExperimentReport, Method, Panel, ProfileConfig, Weighting,
};
use stablerules_core::mining::{build_rule_matrix, RuleSetTag};
use stablerules_core::selection::{rules_selection, score_rules, SelectionBounds, HOLDOUT_FRACTION};

const OUR_REFERENCE_BETA: f64 = 1.135;
const OUR_BETA_SLACK: f64 = 0.35;
const BENCHMARK_BUDGET_SECS: f64 = 20.0 * 60.0;
const IDENTITY_TOL: f64 = 1e-9;
const EXHAUSTIVE_GAP: f64 = 0.02;

struct Verdict {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

#[derive(Default)]
struct Reports {
    benchmark: Option<ExperimentReport>,
    ablation: Option<AblationReport>,
}

fn fmt_pass(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn benchmark_ordering(reports: &mut Reports) -> (bool, String) {
    let cfg = ExperimentConfig {
        record_wall_time: true,
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg).expect("benchmark run");
    let get = |m: Method| report.summary(1000, 10, m).map(|s| s.beta_err).unwrap_or(f64::NAN);
    let our = get(Method::Our);
    let dwr_svm = get(Method::DwrSvm);
    let svm = get(Method::Svm);
    let dwr = get(Method::Dwr);
    let baselines: Vec<(Method, f64)> = Method::ALL.iter().filter(|m| **m != Method::Our).map(|&m| (m, get(m))).collect();
    let secs = report.wall_time_secs.unwrap_or(f64::NAN);
    let ordered = our < dwr_svm && dwr_svm < svm.max(dwr);
    let beats_all = baselines.iter().all(|(_, v)| our < *v);
    let within = our <= OUR_REFERENCE_BETA + OUR_BETA_SLACK;
    let on_time = secs <= BENCHMARK_BUDGET_SECS;
    let listing: Vec<String> = baselines.iter().map(|(m, v)| format!("{}={v:.4}", m.name())).collect();
    let detail = format!(
        "OUR={our:.4} {}; OUR<DWR_SVM<max(SVM,DWR): {ordered}; OUR<every baseline: {beats_all}; OUR<={:.3}: {within}; wall {secs:.0}s <= {BENCHMARK_BUDGET_SECS:.0}s: {on_time}",
        listing.join(" "),
        OUR_REFERENCE_BETA + OUR_BETA_SLACK
    );
    reports.benchmark = Some(report);
    (ordered && beats_all && within && on_time, detail)
}

fn csv_identity(csv: &str) -> (usize, f64) {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).expect("column");
    let (s, v, b) = (col("beta_s_err"), col("beta_v_err"), col("beta_err"));
    let mut rows = 0;
    let mut worst: f64 = 0.0;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let num = |k: usize| cells[k].parse::<f64>().expect("number");
        worst = worst.max((num(b) - (num(s) + num(v)) / 2.0).abs());
        rows += 1;
    }
    (rows, worst)
}

fn row_identity(reports: &mut Reports) -> (bool, String) {
    if reports.benchmark.is_none() {
        let cfg = ExperimentConfig {
            ns: vec![300],
            repeats: 3,
            ..ExperimentConfig::default()
        };
        reports.benchmark = Some(run_experiment(&cfg).expect("benchmark run"));
    }
    let mut rows = 0;
    let mut worst: f64 = 0.0;
    let mut csvs = vec![reports.benchmark.as_ref().unwrap().to_csv()];
    if let Some(t2) = &reports.ablation {
        csvs.push(t2.to_csv());
    }
    for csv in &csvs {
        let (r, w) = csv_identity(csv);
        rows += r;
        worst = worst.max(w);
    }
    // A reference row, exact up to its three-decimal rounding.
    let published = ((3.357 + 0.430) / 2.0 - 1.894f64).abs() <= 0.0005 + IDENTITY_TOL;
    let pass = rows > 0 && worst <= IDENTITY_TOL && published;
    (
        pass,
        format!("{rows} emitted rows, max |beta - (beta_s + beta_v)/2| = {worst:.2e}; reference row 3.357/0.430/1.894 consistent: {published}"),
    )
}

fn decorrelation_profiles() -> (bool, String) {
    let report = run_profiles(&ProfileConfig::default()).expect("profile run");
    let uniform = report.mean_for(Weighting::Uniform);
    let our = report.mean_for(Weighting::Our);
    let dwr = report.mean_for(Weighting::Dwr);
    let nonlinear = [Panel::Square, Panel::Cubic, Panel::Exp];
    let reduced = nonlinear.iter().all(|&p| our.get(p) < uniform.get(p));
    let dwr_fails = nonlinear.iter().any(|&p| dwr.get(p) >= uniform.get(p));
    let cells: Vec<String> = Panel::ALL
        .iter()
        .map(|&p| format!("{}: U={:.4} OUR={:.4} DWR={:.4}", p.name(), uniform.get(p), our.get(p), dwr.get(p)))
        .collect();
    (
        reduced && dwr_fails,
        format!("{}; OUR below uniform in square/cubic/exp: {reduced}; DWR fails in some nonlinear panel: {dwr_fails}", cells.join("; ")),
    )
}

fn cost_floor_trend(reports: &mut Reports) -> (bool, String) {
    let report = run_ablation(&AblationConfig::default()).expect("ablation run");
    let trend = report
        .c_trend
        .iter()
        .find(|(g, l, _)| *g == 600.0 && *l == 1e-4)
        .map(|t| t.2)
        .unwrap_or(f64::NAN);
    let path: Vec<String> = report.rows.iter().map(|r| format!("C={}: beta_V={:.4}", r.c, r.beta_v_err)).collect();
    let detail = format!("{}; Spearman(C, beta_V) = {trend:.3} <= 0", path.join(", "));
    reports.ablation = Some(report);
    (trend <= 0.0, detail)
}

fn oracle_suites() -> (bool, String) {
    let checks: [(&str, fn()); 4] = [
        ("apriori vs exhaustive (100)", oracle_checks::apriori_matches_exhaustive_enumeration),
        ("poly fit vs QR (200)", oracle_checks::poly_fit_matches_dense_solve),
        ("svm/svr vs convex solver (50)", oracle_checks::weighted_svm_and_svr_match_convex_oracle),
        ("decor gradient vs finite differences (20)", oracle_checks::decor_gradient_matches_central_differences),
    ];
    let mut all = true;
    let mut parts = Vec::new();
    for (name, check) in checks {
        let ok = catch_unwind(check).is_ok();
        all &= ok;
        parts.push(format!("{name}: {}", if ok { "ok" } else { "mismatch" }));
    }
    (all, parts.join("; "))
}

fn selection_properties() -> (bool, String) {
    let mut monotone = true;
    let mut bounded = true;
    let mut worst_gap: f64 = 0.0;
    let mut total_gap = 0.0;
    let mut misses = 0;
    let instances = 50;
    for seed in 0..instances as u64 {
        let inst = common::rule_instance(1000 + seed, 1000, 6, 10);
        let rm = build_rule_matrix(&inst.x, &inst.rules, RuleSetTag::Mixed).unwrap();
        let width = rm.width();
        let out = rules_selection(&rm, &inst.y, SelectionBounds::new(width, 1).unwrap(), seed).unwrap();
        let mut best = out.initial_accuracy;
        for step in out.history.iter().filter(|s| s.accepted) {
            monotone &= step.forced || step.accuracy >= best;
            best = step.accuracy;
        }
        bounded &= out.iterations <= width;

        let (train, test) = split_indices(rm.nrows(), HOLDOUT_FRACTION, seed).unwrap();
        let (rm_train, rm_test) = (rm.select_rows(&train), rm.select_rows(&test));
        let (y_train, y_test) = (inst.y.select(&train), inst.y.select(&test));
        let mut optimum: f64 = 0.0;
        for mask in 1u32..(1 << width) {
            let cols: Vec<usize> = (0..width).filter(|j| mask >> j & 1 == 1).collect();
            let model = score_rules(&rm_train.select_columns(&cols), &y_train).unwrap();
            optimum = optimum.max(model.accuracy(&rm_test.select_columns(&cols), &y_test).unwrap());
        }
        let gap = optimum - out.accuracy;
        worst_gap = worst_gap.max(gap);
        total_gap += gap;
        if gap > EXHAUSTIVE_GAP {
            misses += 1;
        }
    }
    (
        monotone && bounded && misses == 0,
        format!(
            "{instances} instances (<= 10 rules): monotone {monotone}, within iteration bound {bounded}; gap to exhaustive optimum: max {worst_gap:.3}, mean {:.4}, {misses} above {EXHAUSTIVE_GAP}",
            total_gap / instances as f64
        ),
    )
}

fn determinism() -> (bool, String) {
    let cfg = ExperimentConfig {
        ns: vec![400],
        repeats: 4,
        ..ExperimentConfig::default()
    };
    let a = run_experiment(&cfg).expect("run");
    let b = run_experiment(&cfg).expect("run");
    let same = a.to_csv() == b.to_csv() && a.rmse_sweep_csv() == b.rmse_sweep_csv();
    (same, format!("two seeded runs (n=400, 4 repeats): CSV byte-identical {same}"))
}

fn not_reproducible() -> (bool, String) {
    let known = [
        (vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![2.0, 1.0, 4.0, 3.0, 5.0], 0.8),
        (vec![1.0, 2.0, 2.0, 3.0], vec![1.0, 2.0, 3.0, 4.0], 4.5 / 22.5f64.sqrt()),
        (vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0], -1.0),
    ];
    let ok = known
        .iter()
        .all(|(a, b, want)| spearman_consistency(a, b).is_ok_and(|got| (got - want).abs() < 1e-12));
    (
        ok,
        format!(
            "INFO: real-EHR accuracies and physician Causality/Spearman ratings need private data and are not reproduced; spearman_consistency hand-computed cases correct: {ok}"
        ),
    )
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |id: usize| only.as_ref().is_none_or(|o| o.contains(&id));
    let mut reports = Reports::default();
    let mut verdicts: Vec<Verdict> = Vec::new();

    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut(&mut Reports) -> (bool, String)| {
        if !wanted(id) {
            return;
        }
        let start = Instant::now();
        let (pass, detail) = match catch_unwind(AssertUnwindSafe(|| f(&mut reports))) {
            Ok(v) => v,
            Err(_) => (false, "panicked".to_string()),
        };
        println!("criterion {id} {name}: {} ({:.0}s) {detail}", fmt_pass(pass), start.elapsed().as_secs_f64());
        verdicts.push(Verdict { id, name, pass, detail });
    };

    // Cheap checks first; criterion 2 reads the reports of 1 and 4.
    run(5, "oracle suites", &mut |_| oracle_suites());
    run(6, "rule selection properties", &mut |_| selection_properties());
    run(8, "not reproducible", &mut |_| not_reproducible());
    run(7, "determinism", &mut |_| determinism());
    run(1, "benchmark method ordering", &mut benchmark_ordering);
    run(4, "cost-floor trend", &mut cost_floor_trend);
    run(3, "decorrelation profiles", &mut |_| decorrelation_profiles());
    run(2, "report row identity", &mut row_identity);

    verdicts.sort_by_key(|v| v.id);
    println!("\nacceptance summary");
    for v in &verdicts {
        println!("  [{}] {}. {}: {}", fmt_pass(v.pass), v.id, v.name, v.detail);
    }
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!("{} passed, {failed} failed", verdicts.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
