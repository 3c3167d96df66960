use std::io::BufReader;
use std::path::Path;

use serde_json::{json, Value};
use stablerules_core::data::{validate_dataset, LabelVector, SampleWeights, SplitSpec};
use stablerules_core::decorrelation::{learn_weights, DecorConfig};
use stablerules_core::evaluation::{
    beta_errors, classification_metrics, rmse, run_ablation, run_experiment, run_profiles, AblationConfig, ExperimentConfig,
    Method, ProfileConfig, Weighting,
};
use stablerules_core::ingestion::{feature_select, load_csv, BinningRule, ColumnSchema, FittedPipeline, PipelineConfig};
use stablerules_core::mining::{build_rule_matrix, mine_class_rules, read_rules_text, write_rules_text, MiningConfig, RuleSetTag};
use stablerules_core::models::{
    fit_dwr, fit_linear_baseline, fit_weighted_svm, fit_weighted_svr, DwrConfig, LinearMethod, LinearModel, SvmConfig,
};
use stablerules_core::selection::{item_reduce, rules_selection, SelectionBounds, SelectionProvenance};
use stablerules_core::synthesis::{generate_environment, BiasSpec, EnvKind, EnvSpec, SynthSidecar};
use stablerules_core::{data::standardize, Error};

use crate::config::FileConfig;
use crate::io::{self, check_input, check_output, sidecar_path, sibling};
use crate::{
    CliError, DecorFlags, DecorrelateArgs, EvaluateArgs, Fig2Args, MineArgs, PrepareArgs, SelectArgs, Status, SynthArgs,
    Table1Args, Table2Args, TrainArgs,
};

pub struct Context {
    pub file: FileConfig,
    pub seed: u64,
    pub jobs: Option<usize>,
}

type Res = Result<Status, CliError>;

fn status(converged: bool) -> Status {
    if converged {
        Status::Done
    } else {
        Status::NotConverged
    }
}

fn sidecar(command: &str, ctx: &Context, config: Value, extra: Value) -> Value {
    let mut doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": ctx.seed,
        "jobs": ctx.jobs,
        "config": config,
    });
    if let (Value::Object(d), Value::Object(e)) = (&mut doc, extra) {
        d.extend(e);
    }
    doc
}

impl Context {
    fn label(&self, flag: &Option<String>) -> String {
        flag.clone().or(self.file.str("label")).unwrap_or_else(|| "Y".into())
    }

    fn env(&self, flag: &Option<String>) -> Result<EnvKind, CliError> {
        Ok(flag.clone().or(self.file.str("env")).unwrap_or_else(|| "nonlinear".into()).parse()?)
    }

    fn decor(&self, f: &DecorFlags) -> DecorConfig {
        let d = DecorConfig::default();
        DecorConfig {
            degree: f.degree.or(self.file.usize("degree")).unwrap_or(d.degree),
            gamma: f.gamma.or(self.file.f64("gamma")).unwrap_or(d.gamma),
            lambda_w: f.lambda_w.or(self.file.f64("lambda_w")).unwrap_or(d.lambda_w),
            lambda_sum: f.lambda_sum.or(self.file.f64("lambda_sum")).unwrap_or(d.lambda_sum),
            max_iters: f.max_iters.or(self.file.usize("max_iters")).unwrap_or(d.max_iters),
            step_size: f.step_size.or(self.file.f64("step_size")).unwrap_or(d.step_size),
            tolerance: f.tolerance.or(self.file.f64("tolerance")).unwrap_or(d.tolerance),
        }
    }

    fn dwr(&self, lambda2: Option<f64>) -> DwrConfig {
        let d = DwrConfig::default();
        DwrConfig {
            lambda2: lambda2.or(self.file.f64("dwr_lambda2")).unwrap_or(d.lambda2),
            lambda_w: self.file.f64("lambda_w").unwrap_or(d.lambda_w),
            lambda_sum: self.file.f64("lambda_sum").unwrap_or(d.lambda_sum),
            max_iters: self.file.usize("max_iters").unwrap_or(d.max_iters),
            step_size: self.file.f64("step_size").unwrap_or(d.step_size),
            tolerance: self.file.f64("tolerance").unwrap_or(d.tolerance),
        }
    }
}

pub fn synth(ctx: &Context, a: &SynthArgs) -> Res {
    check_output(&a.out)?;
    let kind = ctx.env(&a.env)?;
    let n = a.n.or(ctx.file.usize("n")).unwrap_or(1000);
    let p = a.p.or(ctx.file.usize("p")).unwrap_or(10);
    let mut spec = EnvSpec::with_default_split(kind, n, p, ctx.seed);
    if let Some(p_s) = a.p_s.or(ctx.file.usize("p_s")) {
        spec.p_s = p_s;
        spec.p_v = p.saturating_sub(p_s);
    }
    if let Some(s) = a.noise_std.or(ctx.file.f64("noise_std")) {
        spec.noise_std = s;
    }
    let bias = a.r.or(ctx.file.f64("r")).map(BiasSpec::new).transpose()?;
    let data = generate_environment(&spec, bias.as_ref())?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    std::fs::write(&a.out, buf).map_err(Error::from)?;
    let side = data.sidecar();
    io::write_json(
        &sidecar_path(&a.out),
        &sidecar(
            "synth",
            ctx,
            json!({ "env": spec, "bias": bias }),
            json!({ "data": side, "artifacts": [a.out] }),
        ),
    )?;
    Ok(Status::Done)
}

fn parse_binning(name: &str, k: usize) -> Result<BinningRule, CliError> {
    match name {
        "quantile" => Ok(BinningRule::Quantile { k }),
        "equal_width" => Ok(BinningRule::EqualWidth { k }),
        other => Err(Error::Config(format!("unknown binning `{other}` (quantile|equal_width)")).into()),
    }
}

pub fn prepare(ctx: &Context, a: &PrepareArgs) -> Res {
    check_input(&a.data)?;
    check_input(&a.schema)?;
    check_output(&a.out)?;
    let schema = ColumnSchema::read(&a.schema)?;
    let table = load_csv(&a.data, &schema)?;
    let (pipeline, selected, prepared, ranking) = if let Some(prev) = &a.pipeline {
        check_input(prev)?;
        let doc: Value = serde_json::from_str(&std::fs::read_to_string(prev).map_err(Error::from)?).map_err(Error::from)?;
        let pipeline: FittedPipeline = serde_json::from_value(doc["pipeline"].clone()).map_err(Error::from)?;
        let selected: Option<Vec<String>> = serde_json::from_value(doc["selected"].clone()).map_err(Error::from)?;
        let prepared = pipeline.transform(&table)?;
        (pipeline, selected, prepared, None)
    } else {
        let bins = a.bins.or(ctx.file.usize("bins")).unwrap_or(4);
        let binning = parse_binning(&a.binning.clone().or(ctx.file.str("binning")).unwrap_or_else(|| "quantile".into()), bins)?;
        let cfg = PipelineConfig {
            default_binning: binning,
            balance: !a.no_balance && ctx.file.bool("balance").unwrap_or(true),
            seed: ctx.seed,
        };
        let pipeline = FittedPipeline::fit(&table, &schema, cfg)?;
        let prepared = pipeline.transform_train(&table)?;
        let sizes = a.feature_sizes.clone().or(ctx.file.usize_list("feature_sizes"));
        let ranking = match sizes {
            Some(sizes) => {
                let folds = a.folds.or(ctx.file.usize("folds")).unwrap_or(5);
                let ds = validate_dataset(prepared.features.clone(), prepared.labels.clone())?;
                Some(feature_select(&ds, &sizes, folds, ctx.seed)?)
            }
            None => None,
        };
        let selected = ranking.as_ref().map(|r| r.selected.clone());
        (pipeline, selected, prepared, ranking)
    };
    let features = match &selected {
        Some(names) => {
            let cols = names
                .iter()
                .map(|n| prepared.features.column_index(n).ok_or_else(|| Error::UnknownItem(n.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            prepared.features.select_columns(&cols)?
        }
        None => prepared.features.clone(),
    };
    let label_name = pipeline.labels.column.clone();
    io::write_text(&a.out, &io::matrix_csv(&features, Some((&label_name, prepared.labels.values()))))?;
    io::write_json(
        &sidecar_path(&a.out),
        &sidecar(
            "prepare",
            ctx,
            json!({ "schema": schema, "pipeline_config": pipeline.config, "replayed_from": a.pipeline }),
            json!({
                "pipeline": pipeline,
                "selected": selected,
                "ranking": ranking,
                "rows": features.nrows(),
                "clamped": prepared.flags.clamped,
                "unseen": prepared.flags.unseen,
                "artifacts": [a.out],
            }),
        ),
    )?;
    Ok(Status::Done)
}

pub fn mine(ctx: &Context, a: &MineArgs) -> Res {
    check_input(&a.data)?;
    check_output(&a.out)?;
    let label = ctx.label(&None::<String>.or(a.label.clone()));
    let data = io::read_numeric_csv(&a.data, &label)?;
    let y = io::binary_labels(&io::require_labels(&data, &label)?)?;
    let d = MiningConfig::default();
    let cfg = MiningConfig {
        min_support: a.min_support.or(ctx.file.f64("min_support")).unwrap_or(d.min_support),
        min_confidence: a.min_confidence.or(ctx.file.f64("min_confidence")).unwrap_or(d.min_confidence),
        max_antecedent_len: a.max_len.or(ctx.file.usize("max_len")).unwrap_or(d.max_antecedent_len),
    };
    let (pos, neg) = mine_class_rules(&data.x, &y, &cfg)?;
    let rules: Vec<_> = pos.iter().chain(&neg).cloned().collect();
    let file = std::fs::File::create(&a.out).map_err(Error::from)?;
    write_rules_text(file, &rules)?;
    io::write_json(
        &sidecar_path(&a.out),
        &sidecar(
            "mine",
            ctx,
            json!({ "data": a.data, "label": label, "mining": cfg }),
            json!({ "positive_rules": pos.len(), "negative_rules": neg.len(), "artifacts": [a.out] }),
        ),
    )?;
    Ok(Status::Done)
}

pub fn select(ctx: &Context, a: &SelectArgs) -> Res {
    check_input(&a.data)?;
    check_input(&a.rules)?;
    check_output(&a.out)?;
    let label = ctx.label(&a.label);
    let data = io::read_numeric_csv(&a.data, &label)?;
    let y = io::binary_labels(&io::require_labels(&data, &label)?)?;
    let rules = read_rules_text(BufReader::new(std::fs::File::open(&a.rules).map_err(Error::from)?))?;
    let bounds = SelectionBounds::new(
        a.max_rules.or(ctx.file.usize("max_rules")).unwrap_or(50),
        a.min_rules.or(ctx.file.usize("min_rules")).unwrap_or(1),
    )?;
    let do_items = a.item_reduce || ctx.file.bool("item_reduce").unwrap_or(false);
    let folds = a.folds.or(ctx.file.usize("folds")).unwrap_or(5);
    let rm = build_rule_matrix(&data.x, &rules, RuleSetTag::Mixed)?;
    let outcome = rules_selection(&rm, &y, bounds, ctx.seed)?;
    let reduced = if do_items {
        Some(item_reduce(&outcome.rules, &data.x, &y, folds, ctx.seed)?)
    } else {
        None
    };
    let kept = reduced.as_ref().map_or(&outcome.rules, |r| &r.rules);
    write_rules_text(std::fs::File::create(&a.out).map_err(Error::from)?, kept)?;
    let config = json!({
        "data": a.data, "rules": a.rules, "label": label, "bounds": bounds,
        "item_reduce": do_items, "folds": folds,
    });
    let prov = SelectionProvenance {
        seed: ctx.seed,
        bounds: Some(bounds),
        folds: do_items.then_some(folds),
        input_rules: rules.len(),
        rules_selection: Some(outcome),
        item_reduce: reduced,
        config: config.clone(),
    };
    io::write_json(
        &sidecar_path(&a.out),
        &sidecar("select", ctx, config, json!({ "provenance": prov, "artifacts": [a.out] })),
    )?;
    Ok(Status::Done)
}

pub fn decorrelate(ctx: &Context, a: &DecorrelateArgs) -> Res {
    check_input(&a.data)?;
    check_output(&a.out)?;
    let label = ctx.label(&a.label);
    let data = io::read_numeric_csv(&a.data, &label)?;
    let cfg = ctx.decor(&a.decor);
    let (z, _) = standardize(&data.x);
    let fit = learn_weights(&z, &cfg)?;
    io::write_text(&a.out, &io::weights_csv(&fit.weights))?;
    io::write_json(
        &sidecar_path(&a.out),
        &sidecar(
            "decorrelate",
            ctx,
            json!({ "data": a.data, "label": label, "decor": cfg, "standardized": true }),
            json!({
                "iterations": fit.iterations,
                "converged": fit.converged,
                "objective": fit.objective,
                "penalty": fit.penalty,
                "weight_sum": fit.weights.sum(),
                "effective_size": fit.weights.effective_size(),
                "projected_gradient_norm": fit.projected_gradient_norm,
                "artifacts": [a.out],
            }),
        ),
    )?;
    Ok(status(fit.converged))
}

pub fn train(ctx: &Context, a: &TrainArgs) -> Res {
    check_input(&a.data)?;
    check_output(&a.out)?;
    if let Some(w) = &a.weights {
        check_input(w)?;
    }
    let label = ctx.label(&a.label);
    let data = io::read_numeric_csv(&a.data, &label)?;
    let y_raw = io::require_labels(&data, &label)?;
    let n = data.x.nrows();
    let kind = a.model.clone().or(ctx.file.str("model")).unwrap_or_else(|| "wsvr".into());
    let svm_default = SvmConfig::default();
    let svm = SvmConfig {
        c: a.c.or(ctx.file.f64("c")).unwrap_or(svm_default.c),
        epsilon: a.epsilon.or(ctx.file.f64("epsilon")).unwrap_or(svm_default.epsilon),
        ..svm_default
    };
    let lambda = a.lambda.or(ctx.file.f64("lambda"));
    let weights = match &a.weights {
        Some(p) => {
            let w = io::read_weights(p)?;
            if w.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "weights file rows".into(),
                    expected: n,
                    found: w.len(),
                }
                .into());
            }
            Some(w.scaled_to_mean_one())
        }
        None => None,
    };
    let need_weights = || -> Result<SampleWeights, CliError> {
        weights
            .clone()
            .ok_or_else(|| Error::Config(format!("model `{kind}` needs --weights")).into())
    };
    let class_labels = || io::binary_labels(&y_raw);
    let real_labels = || LabelVector::real(y_raw.clone());
    let dwr_cfg = ctx.dwr(a.dwr_lambda2);
    let mut model: LinearModel = match kind.as_str() {
        "ols" => fit_linear_baseline(&data.x, &real_labels()?, LinearMethod::Ols)?,
        "ridge" => fit_linear_baseline(&data.x, &real_labels()?, LinearMethod::Ridge { lambda: lambda.unwrap_or(1.0) })?,
        "lasso" => fit_linear_baseline(
            &data.x,
            &real_labels()?,
            LinearMethod::Lasso {
                lambda: lambda.unwrap_or(0.05 * n as f64),
            },
        )?,
        "dwr" => fit_dwr(&data.x, &real_labels()?, &dwr_cfg)?.model,
        "svm" => fit_weighted_svm(&data.x, &class_labels()?, &SampleWeights::zeros(n), &svm)?,
        "wsvm" => fit_weighted_svm(&data.x, &class_labels()?, &need_weights()?, &svm)?,
        "svr" => fit_weighted_svr(&data.x, &real_labels()?, &SampleWeights::zeros(n), &svm)?,
        "wsvr" => fit_weighted_svr(&data.x, &real_labels()?, &need_weights()?, &svm)?,
        other => {
            return Err(Error::Config(format!(
                "unknown model `{other}` (ols|ridge|lasso|dwr|svm|wsvm|svr|wsvr)"
            ))
            .into())
        }
    };
    model.config = sidecar(
        "train",
        ctx,
        json!({
            "data": a.data, "label": label, "model": kind, "weights": a.weights,
            "weights_scaled_to_mean_one": a.weights.is_some(),
            "svm": svm, "lambda": lambda, "dwr": dwr_cfg,
        }),
        json!({ "features": data.x.column_names() }),
    );
    io::write_text(&a.out, &model.to_json()?)?;
    Ok(status(model.training_meta.converged))
}

pub fn evaluate(ctx: &Context, a: &EvaluateArgs) -> Res {
    check_input(&a.model)?;
    check_input(&a.data)?;
    if let Some(out) = &a.out {
        check_output(out)?;
    }
    let model = LinearModel::from_json(&std::fs::read_to_string(&a.model).map_err(Error::from)?)?;
    let label = ctx.label(&a.label);
    let data = io::read_numeric_csv(&a.data, &label)?;
    let y = io::require_labels(&data, &label)?;
    let x = match model.config["config"].get("features").or(model.config.get("features")) {
        Some(Value::Array(names)) => {
            let cols = names
                .iter()
                .map(|v| {
                    let name = v.as_str().unwrap_or_default();
                    data.x.column_index(name).ok_or_else(|| Error::UnknownItem(name.to_string()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            data.x.select_columns(&cols)?
        }
        _ => data.x.clone(),
    };
    let metrics = if model.kind.is_classifier() {
        let truth = io::binary_labels(&y)?;
        json!(classification_metrics(&model.predict_class(&x)?, truth.values())?)
    } else {
        json!({ "rmse": rmse(&model.predict(&x)?, &y)? })
    };
    let beta = match &a.truth {
        Some(p) => {
            check_input(p)?;
            let doc: Value = serde_json::from_str(&std::fs::read_to_string(p).map_err(Error::from)?).map_err(Error::from)?;
            let side: SynthSidecar = serde_json::from_value(doc.get("data").cloned().unwrap_or(doc)).map_err(Error::from)?;
            let split = SplitSpec::leading(side.env.p_s, side.env.p_v);
            Some(beta_errors(&model.beta, &side.beta_true, &split)?)
        }
        None => None,
    };
    let report = sidecar(
        "evaluate",
        ctx,
        json!({ "model": a.model, "data": a.data, "label": label, "truth": a.truth }),
        json!({ "kind": model.kind, "rows": x.nrows(), "metrics": metrics, "beta": beta }),
    );
    match &a.out {
        Some(out) => io::write_json(out, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?),
    }
    Ok(Status::Done)
}

fn methods(list: Option<Vec<String>>) -> Result<Vec<Method>, CliError> {
    match list {
        None => Ok(Method::ALL.to_vec()),
        Some(names) => Ok(names.iter().map(|s| s.trim().parse()).collect::<Result<_, _>>()?),
    }
}

fn write_outputs(out: &Path, csvs: &[(&Path, String)], doc: &Value) -> Result<(), CliError> {
    for (path, text) in csvs {
        io::write_text(path, text)?;
    }
    io::write_json(&sidecar_path(out), doc)?;
    Ok(())
}

pub fn table1(ctx: &Context, a: &Table1Args) -> Res {
    check_output(&a.out)?;
    let d = ExperimentConfig::default();
    let f = &ctx.file;
    let cfg = ExperimentConfig {
        methods: methods(a.methods.clone().or(f.str_list("methods")))?,
        env: ctx.env(&a.env)?,
        ns: a.n.clone().or(f.usize_list("ns")).unwrap_or(d.ns),
        ps: a.m.clone().or(f.usize_list("ps")).unwrap_or(d.ps),
        noise_std: f.f64("noise_std").unwrap_or(d.noise_std),
        repeats: a.repeats.or(f.usize("repeats")).unwrap_or(d.repeats),
        seed: ctx.seed,
        test_rs: a.test_rs.clone().or(f.f64_list("test_rs")).unwrap_or(d.test_rs),
        test_n: a.test_n.or(f.usize("test_n")).unwrap_or(d.test_n),
        decor: ctx.decor(&a.decor),
        dwr: ctx.dwr(None),
        svm: SvmConfig {
            c: a.c.or(f.f64("c")).unwrap_or(d.svm.c),
            epsilon: a.epsilon.or(f.f64("epsilon")).unwrap_or(d.svm.epsilon),
            ..d.svm
        },
        record_wall_time: a.wall_time || f.bool("record_wall_time").unwrap_or(false),
        ..d
    };
    let report = run_experiment(&cfg)?;
    let sweep = sibling(&a.out, "rmse");
    let non_conv: usize = report.cells.iter().flat_map(|c| &c.methods).map(|m| m.non_converged).sum();
    let failures: usize = report.cells.iter().flat_map(|c| &c.methods).map(|m| m.failures).sum();
    if failures > 0 {
        eprintln!("warning: {failures} method fits failed; see the JSON sidecar");
    }
    let doc = sidecar(
        "reproduce-table1",
        ctx,
        serde_json::to_value(&cfg).map_err(Error::from)?,
        json!({ "artifacts": [a.out, sweep], "report": report }),
    );
    write_outputs(&a.out, &[(&a.out, report.to_csv()), (&sweep, report.rmse_sweep_csv())], &doc)?;
    Ok(status(non_conv == 0))
}

pub fn table2(ctx: &Context, a: &Table2Args) -> Res {
    check_output(&a.out)?;
    let d = AblationConfig::default();
    let f = &ctx.file;
    let cfg = AblationConfig {
        env: ctx.env(&a.env)?,
        n: a.n.or(f.usize("n")).unwrap_or(d.n),
        p: a.m.or(f.usize("p")).unwrap_or(d.p),
        noise_std: f.f64("noise_std").unwrap_or(d.noise_std),
        repeats: a.repeats.or(f.usize("repeats")).unwrap_or(d.repeats),
        seed: ctx.seed,
        gammas: a.gammas.clone().or(f.f64_list("gammas")).unwrap_or(d.gammas),
        lambdas: a.lambdas.clone().or(f.f64_list("lambdas")).unwrap_or(d.lambdas),
        cs: a.cs.clone().or(f.f64_list("cs")).unwrap_or(d.cs),
        degree: a.degree.or(f.usize("degree")).unwrap_or(d.degree),
        svm: SvmConfig {
            epsilon: a.epsilon.or(f.f64("epsilon")).unwrap_or(d.svm.epsilon),
            ..d.svm
        },
        test_rs: a.test_rs.clone().or(f.f64_list("test_rs")).unwrap_or(d.test_rs),
        test_n: a.test_n.or(f.usize("test_n")).unwrap_or(d.test_n),
        record_wall_time: a.wall_time || f.bool("record_wall_time").unwrap_or(false),
        ..d
    };
    let report = run_ablation(&cfg)?;
    let doc = sidecar(
        "reproduce-table2",
        ctx,
        serde_json::to_value(&cfg).map_err(Error::from)?,
        json!({ "artifacts": [a.out], "report": report }),
    );
    write_outputs(&a.out, &[(&a.out, report.to_csv())], &doc)?;
    if report.rows.iter().any(|r| r.non_converged > 0) {
        return Ok(Status::NotConverged);
    }
    Ok(Status::Done)
}

pub fn fig2(ctx: &Context, a: &Fig2Args) -> Res {
    check_output(&a.out)?;
    let d = ProfileConfig::default();
    let f = &ctx.file;
    let cfg = ProfileConfig {
        env: ctx.env(&a.env)?,
        n: a.n.or(f.usize("n")).unwrap_or(d.n),
        p: a.m.or(f.usize("p")).unwrap_or(d.p),
        noise_std: f.f64("noise_std").unwrap_or(d.noise_std),
        seeds: a.seeds.or(f.usize("seeds")).unwrap_or(d.seeds),
        seed: ctx.seed,
        decor: ctx.decor(&a.decor),
        dwr: ctx.dwr(None),
        record_wall_time: a.wall_time || f.bool("record_wall_time").unwrap_or(false),
        ..d
    };
    let report = run_profiles(&cfg)?;
    let pairs = sibling(&a.out, "pairs");
    let means: Value = Weighting::ALL
        .iter()
        .map(|&w| (w.name().to_string(), json!(report.mean_for(w))))
        .collect::<serde_json::Map<_, _>>()
        .into();
    let converged = report.runs.iter().all(|r| r.our_converged);
    let doc = sidecar(
        "reproduce-fig2",
        ctx,
        serde_json::to_value(&cfg).map_err(Error::from)?,
        json!({ "artifacts": [a.out, pairs], "mean": means, "report": report }),
    );
    write_outputs(&a.out, &[(&a.out, report.summary_csv()), (&pairs, report.long_csv())], &doc)?;
    Ok(status(converged))
}
