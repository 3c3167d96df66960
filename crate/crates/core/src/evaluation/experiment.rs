use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{beta_errors, correlation_profile, mean_std, rmse, spearman_consistency, BetaErrors, Panel, PanelMeans};
use crate::data::{derive_seed, standardize, FeatureMatrix, LabelVector, SampleWeights};
use crate::decorrelation::{learn_weights, DecorConfig};
use crate::error::{Error, Result};
use crate::models::{fit_dwr, fit_linear_baseline, fit_weighted_svr, DwrConfig, LinearMethod, LinearModel, SvmConfig};
use crate::synthesis::{generate_environment, BiasSpec, EnvKind, EnvSpec, SyntheticData};

/// Test-environment bias rates.
pub const DEFAULT_TEST_RS: [f64; 6] = [-3.0, -2.0, -1.5, 1.5, 2.0, 3.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "OLS")]
    Ols,
    #[serde(rename = "Lasso")]
    Lasso,
    #[serde(rename = "Ridge")]
    Ridge,
    #[serde(rename = "DWR")]
    Dwr,
    #[serde(rename = "SVM")]
    Svm,
    #[serde(rename = "DWR_SVM")]
    DwrSvm,
    #[serde(rename = "OUR")]
    Our,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Ols,
        Method::Lasso,
        Method::Ridge,
        Method::Dwr,
        Method::Svm,
        Method::DwrSvm,
        Method::Our,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ols => "OLS",
            Method::Lasso => "Lasso",
            Method::Ridge => "Ridge",
            Method::Dwr => "DWR",
            Method::Svm => "SVM",
            Method::DwrSvm => "DWR_SVM",
            Method::Our => "OUR",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Grid of synthetic regression experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub env: EnvKind,
    pub ns: Vec<usize>,
    /// Total column counts; each splits into `round(stable_fraction * p)` stable columns.
    pub ps: Vec<usize>,
    pub stable_fraction: f64,
    pub noise_std: f64,
    pub repeats: usize,
    pub seed: u64,
    /// Bias rate of the training environment; `None` draws it unbiased.
    pub train_r: Option<f64>,
    pub test_rs: Vec<f64>,
    pub test_n: usize,
    pub decor: DecorConfig,
    pub dwr: DwrConfig,
    /// Cost floor `C` and tube width for the reweighted SVR.
    pub svm: SvmConfig,
    /// Uniform per-sample cost of the unweighted SVR baseline.
    pub svm_baseline_c: f64,
    /// Cost floor added to the DWR weights in DWR_SVM.
    pub dwr_svm_c: f64,
    pub ridge_lambda: f64,
    /// Lasso penalty per training row (the L1 multiplier is this times n).
    pub lasso_lambda: f64,
    pub record_wall_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            env: EnvKind::Nonlinear,
            ns: vec![1000],
            ps: vec![10],
            stable_fraction: 0.4,
            noise_std: 0.3,
            repeats: 50,
            seed: 1,
            train_r: None,
            test_rs: DEFAULT_TEST_RS.to_vec(),
            test_n: 1000,
            decor: DecorConfig::default(),
            dwr: DwrConfig::default(),
            svm: SvmConfig {
                c: 0.5,
                ..SvmConfig::default()
            },
            svm_baseline_c: 1.0,
            dwr_svm_c: 0.0,
            ridge_lambda: 1.0,
            lasso_lambda: 0.05,
            record_wall_time: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.ns.is_empty() || self.ps.is_empty() || self.repeats == 0 {
            return Err(Error::Config("experiment needs methods, n, p and repeats >= 1".into()));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(Error::Config("methods listed more than once".into()));
        }
        if !(self.stable_fraction > 0.0 && self.stable_fraction < 1.0) {
            return Err(Error::Config("stable_fraction must lie in (0, 1)".into()));
        }
        for &p in &self.ps {
            self.env_spec(100, p, 0).validate()?;
        }
        for &r in &self.test_rs {
            BiasSpec::new(r)?;
        }
        if let Some(r) = self.train_r {
            BiasSpec::new(r)?;
        }
        self.decor.validate()?;
        self.svm.validate()?;
        Ok(())
    }

    pub fn env_spec(&self, n: usize, p: usize, seed: u64) -> EnvSpec {
        let p_s = ((self.stable_fraction * p as f64).round() as usize).min(p);
        EnvSpec {
            kind: self.env,
            n,
            p_total: p,
            p_s,
            p_v: p - p_s,
            seed,
            noise_std: self.noise_std,
        }
    }

    fn cells(&self) -> Vec<(usize, usize)> {
        self.ns.iter().flat_map(|&n| self.ps.iter().map(move |&p| (n, p))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub beta: Option<BetaErrors>,
    /// RMSE per test bias rate, in config order.
    pub rmse: Vec<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatOutcome {
    pub cell: usize,
    pub repeat: usize,
    pub seed: u64,
    pub methods: Vec<MethodOutcome>,
    /// Mean |correlation| panels of the standardized training features.
    pub profile_uniform: Option<PanelMeans>,
    pub profile_our: Option<PanelMeans>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub repeats_ok: usize,
    pub beta_s_err: f64,
    pub beta_s_std: f64,
    pub beta_v_err: f64,
    pub beta_v_std: f64,
    pub beta_err: f64,
    pub beta_err_std: f64,
    /// Mean RMSE per test bias rate.
    pub rmse_by_r: Vec<f64>,
    /// Mean and std of the per-rate means.
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub non_converged: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub n: usize,
    pub p: usize,
    pub p_s: usize,
    pub p_v: usize,
    pub methods: Vec<MethodSummary>,
    pub profile_uniform: Option<PanelMeans>,
    pub profile_our: Option<PanelMeans>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub cells: Vec<CellReport>,
    pub repeats: Vec<RepeatOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

/// Coefficient vectors of every requested method fitted on one training set.
struct Fits {
    models: Vec<(Method, Result<LinearModel>)>,
    our_weights: Option<SampleWeights>,
}

fn mean_one(w: &SampleWeights) -> SampleWeights {
    w.scaled_to_mean_one()
}

fn fit_methods(cfg: &ExperimentConfig, x: &FeatureMatrix, y: &LabelVector) -> Fits {
    let n = x.nrows();
    let wants = |m: Method| cfg.methods.contains(&m);
    let our_weights = if wants(Method::Our) {
        let (z, _) = standardize(x);
        Some(learn_weights(&z, &cfg.decor))
    } else {
        None
    };
    let dwr = if wants(Method::Dwr) || wants(Method::DwrSvm) {
        Some(fit_dwr(x, y, &cfg.dwr))
    } else {
        None
    };
    let mut models = Vec::new();
    for &m in &cfg.methods {
        let fit = match m {
            Method::Ols => fit_linear_baseline(x, y, LinearMethod::Ols),
            Method::Ridge => fit_linear_baseline(x, y, LinearMethod::Ridge { lambda: cfg.ridge_lambda }),
            Method::Lasso => fit_linear_baseline(
                x,
                y,
                LinearMethod::Lasso {
                    lambda: cfg.lasso_lambda * n as f64,
                },
            ),
            Method::Svm => {
                let svm = SvmConfig {
                    c: cfg.svm_baseline_c,
                    ..cfg.svm
                };
                fit_weighted_svr(x, y, &SampleWeights::zeros(n), &svm)
            }
            Method::Dwr => match dwr.as_ref().expect("dwr fitted") {
                Ok(d) => Ok(d.model.clone()),
                Err(e) => Err(Error::InvalidData(e.to_string())),
            },
            Method::DwrSvm => match dwr.as_ref().expect("dwr fitted") {
                Ok(d) => {
                    let svm = SvmConfig {
                        c: cfg.dwr_svm_c,
                        ..cfg.svm
                    };
                    fit_weighted_svr(x, y, &mean_one(&d.weights), &svm)
                }
                Err(e) => Err(Error::InvalidData(e.to_string())),
            },
            Method::Our => match our_weights.as_ref().expect("weights learned") {
                Ok(fit) => fit_weighted_svr(x, y, &mean_one(&fit.weights), &cfg.svm).map(|mut model| {
                    model.training_meta.converged &= fit.converged;
                    model
                }),
                Err(e) => Err(Error::InvalidData(e.to_string())),
            },
        };
        models.push((m, fit));
    }
    Fits {
        models,
        our_weights: our_weights.and_then(|r| r.ok()).map(|f| f.weights),
    }
}

fn test_environments(cfg: &ExperimentConfig, p: usize, seed: u64) -> Result<Vec<SyntheticData>> {
    cfg.test_rs
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let spec = cfg.env_spec(cfg.test_n, p, derive_seed(seed, &[10, k as u64]));
            generate_environment(&spec, Some(&BiasSpec::new(r)?))
        })
        .collect()
}

fn training_environment(cfg: &ExperimentConfig, n: usize, p: usize, seed: u64) -> Result<SyntheticData> {
    let spec = cfg.env_spec(n, p, derive_seed(seed, &[0]));
    match cfg.train_r {
        None => generate_environment(&spec, None),
        Some(r) => generate_environment(&spec, Some(&BiasSpec::new(r)?)),
    }
}

fn run_repeat(cfg: &ExperimentConfig, cell: usize, n: usize, p: usize, repeat: usize) -> RepeatOutcome {
    let seed = derive_seed(cfg.seed, &[cell as u64, repeat as u64]);
    let mut out = RepeatOutcome {
        cell,
        repeat,
        seed,
        methods: Vec::new(),
        profile_uniform: None,
        profile_our: None,
        error: None,
    };
    let mut body = || -> Result<()> {
        let train = training_environment(cfg, n, p, seed)?;
        let spec = train.spec;
        let (x, y) = (train.features()?, train.labels()?);
        let tests = test_environments(cfg, p, seed)?;
        let test_xy = tests
            .iter()
            .map(|t| Ok((t.features()?, t.y.clone())))
            .collect::<Result<Vec<_>>>()?;
        let fits = fit_methods(cfg, &x, &y);
        let beta_true = spec.beta_true();
        let split = spec.split();
        for (m, fit) in fits.models {
            let outcome = match fit {
                Ok(model) => {
                    let rmses = test_xy
                        .iter()
                        .map(|(tx, ty)| rmse(&model.predict(tx)?, ty))
                        .collect::<Result<Vec<_>>>()?;
                    MethodOutcome {
                        method: m,
                        beta: Some(beta_errors(&model.beta, &beta_true, &split)?),
                        rmse: rmses,
                        converged: model.training_meta.converged,
                        error: None,
                    }
                }
                Err(e) => MethodOutcome {
                    method: m,
                    beta: None,
                    rmse: Vec::new(),
                    converged: false,
                    error: Some(e.to_string()),
                },
            };
            out.methods.push(outcome);
        }
        let (z, _) = standardize(&x);
        out.profile_uniform = Some(correlation_profile(z.values(), &SampleWeights::uniform(n))?.mean_abs());
        if let Some(w) = &fits.our_weights {
            out.profile_our = Some(correlation_profile(z.values(), w)?.mean_abs());
        }
        Ok(())
    };
    if let Err(e) = body() {
        log::warn!("cell {cell} repeat {repeat} failed: {e}");
        out.error = Some(e.to_string());
    }
    out
}

fn summarize(cfg: &ExperimentConfig, outcomes: &[&RepeatOutcome], method: Method) -> MethodSummary {
    let rows: Vec<&MethodOutcome> = outcomes
        .iter()
        .flat_map(|o| o.methods.iter().filter(|m| m.method == method))
        .collect();
    let ok: Vec<&&MethodOutcome> = rows.iter().filter(|m| m.beta.is_some()).collect();
    let pick = |f: fn(&BetaErrors) -> f64| -> Vec<f64> { ok.iter().map(|m| f(m.beta.as_ref().unwrap())).collect() };
    let (bs, bs_sd) = mean_std(&pick(|b| b.beta_s_err));
    let (bv, bv_sd) = mean_std(&pick(|b| b.beta_v_err));
    let (_, b_sd) = mean_std(&pick(|b| b.beta_err));
    let rmse_by_r: Vec<f64> = (0..cfg.test_rs.len())
        .map(|k| mean_std(&ok.iter().map(|m| m.rmse[k]).collect::<Vec<_>>()).0)
        .collect();
    let (rmse_mean, rmse_std) = mean_std(&rmse_by_r);
    MethodSummary {
        method,
        repeats_ok: ok.len(),
        beta_s_err: bs,
        beta_s_std: bs_sd,
        beta_v_err: bv,
        beta_v_std: bv_sd,
        // Exactly the average of the two means, so every row satisfies the identity.
        beta_err: (bs + bv) / 2.0,
        beta_err_std: b_sd,
        rmse_by_r,
        rmse_mean,
        rmse_std,
        non_converged: ok.iter().filter(|m| !m.converged).count(),
        failures: outcomes.len() - ok.len(),
    }
}

/// Run every (n, p) cell for `repeats` seeds. Failed repeats are recorded in
/// the report and skipped in the aggregates.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let cells = cfg.cells();
    let jobs: Vec<(usize, usize, usize, usize)> = cells
        .iter()
        .enumerate()
        .flat_map(|(c, &(n, p))| (0..cfg.repeats).map(move |r| (c, n, p, r)))
        .collect();
    let repeats: Vec<RepeatOutcome> = jobs
        .par_iter()
        .map(|&(c, n, p, r)| run_repeat(cfg, c, n, p, r))
        .collect();
    let cell_reports = cells
        .iter()
        .enumerate()
        .map(|(c, &(n, p))| {
            let spec = cfg.env_spec(n, p, 0);
            let outs: Vec<&RepeatOutcome> = repeats.iter().filter(|o| o.cell == c).collect();
            let uni: Vec<PanelMeans> = outs.iter().filter_map(|o| o.profile_uniform).collect();
            let our: Vec<PanelMeans> = outs.iter().filter_map(|o| o.profile_our).collect();
            CellReport {
                n,
                p,
                p_s: spec.p_s,
                p_v: spec.p_v,
                methods: cfg.methods.iter().map(|&m| summarize(cfg, &outs, m)).collect(),
                profile_uniform: (!uni.is_empty()).then(|| PanelMeans::average(&uni)),
                profile_our: (!our.is_empty()).then(|| PanelMeans::average(&our)),
            }
        })
        .collect();
    Ok(ExperimentReport {
        config: cfg.clone(),
        cells: cell_reports,
        repeats,
        wall_time_secs: cfg.record_wall_time.then(|| start.elapsed().as_secs_f64()),
    })
}

fn fmt_r(r: f64) -> String {
    format!("rmse_r={r}")
}

impl ExperimentReport {
    pub fn summary(&self, n: usize, p: usize, method: Method) -> Option<&MethodSummary> {
        self.cells
            .iter()
            .find(|c| c.n == n && c.p == p)?
            .methods
            .iter()
            .find(|m| m.method == method)
    }

    /// One row per cell and method.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "n,p,p_s,p_v,method,repeats,beta_s_err,beta_s_std,beta_v_err,beta_v_std,beta_err,beta_err_std,rmse_mean,rmse_std",
        );
        for &r in &self.config.test_rs {
            s.push(',');
            s.push_str(&fmt_r(r));
        }
        s.push_str(",non_converged,failures\n");
        for c in &self.cells {
            for m in &c.methods {
                let _ = write!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    c.n,
                    c.p,
                    c.p_s,
                    c.p_v,
                    m.method.name(),
                    m.repeats_ok,
                    m.beta_s_err,
                    m.beta_s_std,
                    m.beta_v_err,
                    m.beta_v_std,
                    m.beta_err,
                    m.beta_err_std,
                    m.rmse_mean,
                    m.rmse_std
                );
                for v in &m.rmse_by_r {
                    let _ = write!(s, ",{v}");
                }
                let _ = writeln!(s, ",{},{}", m.non_converged, m.failures);
            }
        }
        s
    }

    /// Long format `n,p,method,r,rmse` for plotting RMSE against the bias rate.
    pub fn rmse_sweep_csv(&self) -> String {
        let mut s = String::from("n,p,method,r,rmse\n");
        for c in &self.cells {
            for m in &c.methods {
                for (r, v) in self.config.test_rs.iter().zip(&m.rmse_by_r) {
                    let _ = writeln!(s, "{},{},{},{},{}", c.n, c.p, m.method.name(), r, v);
                }
            }
        }
        s
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

/// Settings for the cost-floor ablation of the reweighted SVR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub env: EnvKind,
    pub n: usize,
    pub p: usize,
    pub stable_fraction: f64,
    pub noise_std: f64,
    pub repeats: usize,
    pub seed: u64,
    pub gammas: Vec<f64>,
    /// Values used for both the weight-norm and weight-sum multipliers.
    pub lambdas: Vec<f64>,
    pub cs: Vec<f64>,
    pub degree: usize,
    pub svm: SvmConfig,
    pub test_rs: Vec<f64>,
    pub test_n: usize,
    pub record_wall_time: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::Nonlinear,
            n: 1000,
            p: 10,
            stable_fraction: 0.4,
            noise_std: 0.3,
            repeats: 20,
            seed: 1,
            gammas: vec![600.0],
            lambdas: vec![1e-4],
            cs: vec![0.0, 0.5, 1.0],
            degree: 2,
            svm: SvmConfig::default(),
            test_rs: DEFAULT_TEST_RS.to_vec(),
            test_n: 1000,
            record_wall_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub gamma: f64,
    pub lambda: f64,
    pub c: f64,
    pub repeats_ok: usize,
    pub beta_s_err: f64,
    pub beta_s_std: f64,
    pub beta_v_err: f64,
    pub beta_v_std: f64,
    pub beta_err: f64,
    pub beta_err_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    /// Repeats whose weight fit stopped at the iteration cap.
    pub non_converged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config: AblationConfig,
    pub rows: Vec<AblationRow>,
    /// Spearman correlation between C and mean beta_V error, per (gamma, lambda).
    pub c_trend: Vec<(f64, f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

impl AblationConfig {
    fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            methods: vec![Method::Our],
            env: self.env,
            ns: vec![self.n],
            ps: vec![self.p],
            stable_fraction: self.stable_fraction,
            noise_std: self.noise_std,
            repeats: self.repeats,
            seed: self.seed,
            train_r: None,
            test_rs: self.test_rs.clone(),
            test_n: self.test_n,
            svm: self.svm,
            ..ExperimentConfig::default()
        }
    }
}

/// Beta errors, mean test RMSE and whether the weight fit converged.
type AblationCell = (BetaErrors, f64, bool);

/// Sweep the cost floor `C` (and optionally gamma and lambda) of the
/// reweighted SVR. Weights are learned once per repeat and (gamma, lambda).
pub fn run_ablation(cfg: &AblationConfig) -> Result<AblationReport> {
    let exp = cfg.experiment();
    exp.validate()?;
    if cfg.cs.is_empty() || cfg.gammas.is_empty() || cfg.lambdas.is_empty() {
        return Err(Error::Config("ablation needs at least one C, gamma and lambda".into()));
    }
    let start = Instant::now();
    let settings: Vec<(f64, f64)> = cfg
        .gammas
        .iter()
        .flat_map(|&g| cfg.lambdas.iter().map(move |&l| (g, l)))
        .collect();
    // results[repeat][setting][c]
    let per_repeat: Vec<Option<Vec<Vec<AblationCell>>>> = (0..cfg.repeats)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(cfg.seed, &[0, rep as u64]);
            let run = || -> Result<Vec<Vec<AblationCell>>> {
                let train = training_environment(&exp, cfg.n, cfg.p, seed)?;
                let (x, y) = (train.features()?, train.labels()?);
                let tests = test_environments(&exp, cfg.p, seed)?;
                let (z, _) = standardize(&x);
                let beta_true = train.spec.beta_true();
                let split = train.spec.split();
                settings
                    .iter()
                    .map(|&(gamma, lambda)| {
                        let decor = DecorConfig {
                            degree: cfg.degree,
                            gamma,
                            lambda_w: lambda,
                            lambda_sum: lambda,
                            ..DecorConfig::default()
                        };
                        let fit = learn_weights(&z, &decor)?;
                        let w = fit.weights.scaled_to_mean_one();
                        cfg.cs
                            .iter()
                            .map(|&c| {
                                let model = fit_weighted_svr(&x, &y, &w, &SvmConfig { c, ..cfg.svm })?;
                                let be = beta_errors(&model.beta, &beta_true, &split)?;
                                let mut total = 0.0;
                                for t in &tests {
                                    total += rmse(&model.predict(&t.features()?)?, &t.y)?;
                                }
                                Ok((be, total / tests.len() as f64, fit.converged))
                            })
                            .collect()
                    })
                    .collect()
            };
            match run() {
                Ok(v) => Some(v),
                Err(e) => {
                    log::warn!("ablation repeat {rep} failed: {e}");
                    None
                }
            }
        })
        .collect();
    let ok: Vec<&Vec<Vec<AblationCell>>> = per_repeat.iter().flatten().collect();
    let mut rows = Vec::new();
    let mut c_trend = Vec::new();
    for (si, &(gamma, lambda)) in settings.iter().enumerate() {
        let mut bv_means = Vec::new();
        for (ci, &c) in cfg.cs.iter().enumerate() {
            let vals: Vec<&AblationCell> = ok.iter().map(|r| &r[si][ci]).collect();
            let col = |f: fn(&BetaErrors) -> f64| vals.iter().map(|v| f(&v.0)).collect::<Vec<_>>();
            let (bs, bs_sd) = mean_std(&col(|b| b.beta_s_err));
            let (bv, bv_sd) = mean_std(&col(|b| b.beta_v_err));
            let (_, b_sd) = mean_std(&col(|b| b.beta_err));
            let (rm, rs) = mean_std(&vals.iter().map(|v| v.1).collect::<Vec<_>>());
            bv_means.push(bv);
            rows.push(AblationRow {
                gamma,
                lambda,
                c,
                repeats_ok: vals.len(),
                beta_s_err: bs,
                beta_s_std: bs_sd,
                beta_v_err: bv,
                beta_v_std: bv_sd,
                beta_err: (bs + bv) / 2.0,
                beta_err_std: b_sd,
                rmse_mean: rm,
                rmse_std: rs,
                non_converged: vals.iter().filter(|v| !v.2).count(),
            });
        }
        let trend = if cfg.cs.len() >= 2 {
            spearman_consistency(&cfg.cs, &bv_means)?
        } else {
            0.0
        };
        c_trend.push((gamma, lambda, trend));
    }
    Ok(AblationReport {
        config: cfg.clone(),
        rows,
        c_trend,
        wall_time_secs: cfg.record_wall_time.then(|| start.elapsed().as_secs_f64()),
    })
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "gamma,lambda,C,repeats,beta_s_err,beta_s_std,beta_v_err,beta_v_std,beta_err,beta_err_std,rmse_mean,rmse_std,non_converged\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.gamma, r.lambda, r.c, r.repeats_ok, r.beta_s_err, r.beta_s_std, r.beta_v_err, r.beta_v_std, r.beta_err, r.beta_err_std, r.rmse_mean, r.rmse_std, r.non_converged
            );
        }
        s
    }
}

/// Settings for comparing correlation profiles under different weightings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub env: EnvKind,
    pub n: usize,
    pub p: usize,
    pub stable_fraction: f64,
    pub noise_std: f64,
    pub seeds: usize,
    pub seed: u64,
    pub decor: DecorConfig,
    pub dwr: DwrConfig,
    pub record_wall_time: bool,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::Nonlinear,
            n: 2000,
            p: 10,
            stable_fraction: 0.4,
            noise_std: 0.3,
            seeds: 20,
            seed: 1,
            decor: DecorConfig::default(),
            dwr: DwrConfig::default(),
            record_wall_time: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Uniform,
    Our,
    Dwr,
}

impl Weighting {
    pub const ALL: [Weighting; 3] = [Weighting::Uniform, Weighting::Our, Weighting::Dwr];

    pub fn name(self) -> &'static str {
        match self {
            Weighting::Uniform => "uniform",
            Weighting::Our => "our",
            Weighting::Dwr => "dwr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRun {
    pub seed: u64,
    pub means: Vec<(Weighting, PanelMeans)>,
    /// Signed correlations of every ordered pair, per weighting.
    pub pairs: Vec<(Weighting, super::metrics::CorrelationProfile)>,
    pub our_converged: bool,
    pub our_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub config: ProfileConfig,
    pub runs: Vec<ProfileRun>,
    pub mean: Vec<(Weighting, PanelMeans)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

impl ProfileReport {
    pub fn mean_for(&self, w: Weighting) -> PanelMeans {
        self.mean.iter().find(|(k, _)| *k == w).map(|(_, m)| *m).unwrap_or_default()
    }

    /// `seed,weighting,panel,mean_abs_corr` per run.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("seed,weighting,panel,mean_abs_corr\n");
        for run in &self.runs {
            for (w, m) in &run.means {
                for panel in Panel::ALL {
                    let _ = writeln!(s, "{},{},{},{}", run.seed, w.name(), panel.name(), m.get(panel));
                }
            }
        }
        s
    }

    /// Long format `seed,weighting,panel,i,j,corr` with every pair.
    pub fn long_csv(&self) -> String {
        let mut s = String::from("seed,weighting,panel,i,j,corr\n");
        for run in &self.runs {
            for (w, prof) in &run.pairs {
                for panel in Panel::ALL {
                    for pc in &prof.pairs {
                        let _ = writeln!(s, "{},{},{},{},{},{}", run.seed, w.name(), panel.name(), pc.i, pc.j, pc.get(panel));
                    }
                }
            }
        }
        s
    }
}

/// Correlation profiles of standardized features under uniform, learned and
/// DWR weights, one run per seed.
pub fn run_profiles(cfg: &ProfileConfig) -> Result<ProfileReport> {
    cfg.decor.validate()?;
    if cfg.seeds == 0 {
        return Err(Error::Config("need at least one seed".into()));
    }
    let exp = ExperimentConfig {
        env: cfg.env,
        stable_fraction: cfg.stable_fraction,
        noise_std: cfg.noise_std,
        ..ExperimentConfig::default()
    };
    exp.env_spec(cfg.n, cfg.p, 0).validate()?;
    let start = Instant::now();
    let runs = (0..cfg.seeds)
        .into_par_iter()
        .map(|k| -> Result<ProfileRun> {
            let seed = derive_seed(cfg.seed, &[0, k as u64]);
            let train = training_environment(&exp, cfg.n, cfg.p, seed)?;
            let (x, y) = (train.features()?, train.labels()?);
            let (z, _) = standardize(&x);
            let ours = learn_weights(&z, &cfg.decor)?;
            let dwr = fit_dwr(&x, &y, &cfg.dwr)?;
            let mut means = Vec::new();
            let mut pairs = Vec::new();
            for (wk, w) in [
                (Weighting::Uniform, SampleWeights::uniform(cfg.n)),
                (Weighting::Our, ours.weights.clone()),
                (Weighting::Dwr, dwr.weights.clone()),
            ] {
                let prof = correlation_profile(z.values(), &w)?;
                means.push((wk, prof.mean_abs()));
                pairs.push((wk, prof));
            }
            Ok(ProfileRun {
                seed,
                means,
                pairs,
                our_converged: ours.converged,
                our_iterations: ours.iterations,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = Weighting::ALL
        .iter()
        .map(|&w| {
            let items: Vec<PanelMeans> = runs
                .iter()
                .flat_map(|r| r.means.iter().filter(|(k, _)| *k == w).map(|(_, m)| *m))
                .collect();
            (w, PanelMeans::average(&items))
        })
        .collect();
    Ok(ProfileReport {
        config: cfg.clone(),
        runs,
        mean,
        wall_time_secs: cfg.record_wall_time.then(|| start.elapsed().as_secs_f64()),
    })
}
