//! Synthetic stable/unstable covariate environments with selection bias.
//!
//! Stable columns `S` drive the outcome `Y = S beta_s + S_0 S_1 + noise`;
//! unstable columns `V` have zero true effect. Biased environments keep each
//! row with probability `prod_i |r|^(-5 |f(S) - sign(r) V_i|)`, which ties
//! the leading `V` columns to the outcome with the sign of `r`.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, ColumnKind, FeatureMatrix, LabelVector, SplitSpec};
use crate::error::{Error, Result};

pub const BETA_PATTERN: [f64; 6] = [1.0 / 3.0, -2.0 / 3.0, 1.0, -1.0 / 3.0, 2.0 / 3.0, -1.0];
/// Rows drawn per batch when pooling a biased environment.
const POOL_BATCH: usize = 20_000;
const MAX_POOL_BATCHES: usize = 5_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Linear,
    Nonlinear,
}

impl std::str::FromStr for EnvKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(EnvKind::Linear),
            "nonlinear" => Ok(EnvKind::Nonlinear),
            other => Err(Error::Config(format!("unknown environment `{other}` (linear|nonlinear)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub n: usize,
    pub p_total: usize,
    pub p_s: usize,
    pub p_v: usize,
    pub seed: u64,
    pub noise_std: f64,
}

impl EnvSpec {
    /// Spec with `p_s = round(0.4 p)` stable and `p - p_s` unstable columns.
    pub fn with_default_split(kind: EnvKind, n: usize, p_total: usize, seed: u64) -> Self {
        let p_s = ((0.4 * p_total as f64).round() as usize).clamp(1.min(p_total), p_total);
        Self {
            kind,
            n,
            p_total,
            p_s,
            p_v: p_total - p_s,
            seed,
            noise_std: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::Config("environment needs n >= 1".into()));
        }
        if self.p_s + self.p_v != self.p_total {
            return Err(Error::Config(format!(
                "p_s ({}) + p_v ({}) must equal p_total ({})",
                self.p_s, self.p_v, self.p_total
            )));
        }
        if self.p_s < 2 {
            return Err(Error::TooFewStableColumns(self.p_s));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn split(&self) -> SplitSpec {
        SplitSpec::leading(self.p_s, self.p_v)
    }

    /// True coefficients over `[S | V]`.
    pub fn beta_true(&self) -> Vec<f64> {
        let mut b = beta_pattern(self.p_s);
        b.extend(std::iter::repeat_n(0.0, self.p_v));
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasSpec {
    pub r: f64,
    /// Biased columns as a fraction of `p_total`; at least one column, taken
    /// from the front of `V`.
    pub b_fraction: f64,
}

impl BiasSpec {
    pub fn new(r: f64) -> Result<Self> {
        let s = Self { r, b_fraction: 0.2 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r.abs() > 1.0) || !self.r.is_finite() {
            return Err(Error::Config(format!("bias rate r = {} must satisfy |r| > 1", self.r)));
        }
        if !(self.b_fraction > 0.0 && self.b_fraction <= 1.0) {
            return Err(Error::Config("b_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn biased_columns(&self, p_total: usize, p_v: usize) -> usize {
        ((self.b_fraction * p_total as f64).round() as usize).max(1).min(p_v)
    }
}

/// `beta_s` for `p_s` stable columns: the 6-pattern repeated cyclically.
pub fn beta_pattern(p_s: usize) -> Vec<f64> {
    (0..p_s).map(|i| BETA_PATTERN[i % 6]).collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_block(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| normal(rng))
}

fn linear_mix(a: &DMatrix<f64>) -> DMatrix<f64> {
    let m = a.ncols();
    DMatrix::from_fn(a.nrows(), m, |i, j| 0.8 * a[(i, j)] + 0.2 * a[(i, (j + 1) % m)])
}

fn nonlinear_mix(a: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = a.ncols();
    let mut out = DMatrix::zeros(a.nrows(), m);
    for j in 0..m {
        for i in 0..a.nrows() {
            let x = a[(i, (j + 1) % m)];
            out[(i, j)] = a[(i, j)] + 0.4 * x + 0.4 * x.exp() + 0.4 * x * x + 0.1 * x * x * x + normal(rng);
        }
    }
    out
}

fn covariates_with(kind: EnvKind, n: usize, p_s: usize, p_v: usize, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DMatrix<f64>) {
    let z = gaussian_block(rng, n, p_s);
    let x = gaussian_block(rng, n, p_v);
    match kind {
        EnvKind::Linear => {
            let s = linear_mix(&z);
            let mut v = linear_mix(&x);
            v.iter_mut().for_each(|e| *e += normal(rng));
            (s, v)
        }
        EnvKind::Nonlinear => (nonlinear_mix(&z, rng), nonlinear_mix(&x, rng)),
    }
}

/// Stable and unstable covariates of an unbiased environment.
pub fn gen_covariates(spec: &EnvSpec) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(covariates_with(spec.kind, spec.n, spec.p_s, spec.p_v, &mut rng))
}

/// Noise-free outcome `S beta_s + S_0 S_1`.
pub fn noise_free_outcome(s: &DMatrix<f64>) -> Result<Vec<f64>> {
    if s.ncols() < 2 {
        return Err(Error::TooFewStableColumns(s.ncols()));
    }
    let beta = beta_pattern(s.ncols());
    Ok((0..s.nrows())
        .map(|i| s.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + s[(i, 0)] * s[(i, 1)])
        .collect())
}

/// `Y = S beta_s + V beta_v + S_0 S_1 + N(0, noise_std^2)` with `beta_v = 0`.
pub fn gen_labels(s: &DMatrix<f64>, v: &DMatrix<f64>, noise_std: f64, seed: u64) -> Result<LabelVector> {
    if v.nrows() != s.nrows() && v.ncols() > 0 {
        return Err(Error::DimensionMismatch {
            context: "S and V rows".into(),
            expected: s.nrows(),
            found: v.nrows(),
        });
    }
    let f = noise_free_outcome(s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LabelVector::real(f.into_iter().map(|v| v + noise_std * normal(&mut rng)).collect())
}

/// Selection probability of one row: `prod_{i < b} |r|^(-5 |f - sign(r) v_i|)`.
pub fn acceptance_probability(f: f64, v_row: &[f64], r: f64) -> f64 {
    let sign = r.signum();
    let exponent: f64 = v_row.iter().map(|v| (f - sign * v).abs()).sum();
    r.abs().powf(-5.0 * exponent)
}

fn thin(v: &DMatrix<f64>, f: &[f64], bias: &BiasSpec, p_total: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let b = bias.biased_columns(p_total, v.ncols());
    (0..v.nrows())
        .filter(|&i| {
            let vr: Vec<f64> = (0..b).map(|j| v[(i, j)]).collect();
            let pr = acceptance_probability(f[i], &vr, bias.r);
            rng.random::<f64>() < pr
        })
        .collect()
}

/// Rows kept by independent Bernoulli draws at the bias acceptance
/// probability, computed from the noise-free outcome.
pub fn bias_sample(s: &DMatrix<f64>, v: &DMatrix<f64>, bias: &BiasSpec, seed: u64) -> Result<Vec<usize>> {
    bias.validate()?;
    if v.ncols() == 0 {
        return Err(Error::InvalidData("bias sampling needs at least one unstable column".into()));
    }
    let f = noise_free_outcome(s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kept = thin(v, &f, bias, s.ncols() + v.ncols(), &mut rng);
    if kept.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok(kept)
}

/// One generated environment.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub s: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub y: Vec<f64>,
    pub spec: EnvSpec,
    pub bias: Option<BiasSpec>,
}

impl SyntheticData {
    pub fn nrows(&self) -> usize {
        self.y.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        (0..self.s.ncols())
            .map(|j| format!("S_{j}"))
            .chain((0..self.v.ncols()).map(|j| format!("V_{j}")))
            .collect()
    }

    /// `[S | V]` as a continuous feature matrix.
    pub fn features(&self) -> Result<FeatureMatrix> {
        let (n, ps, pv) = (self.nrows(), self.s.ncols(), self.v.ncols());
        let values = DMatrix::from_fn(n, ps + pv, |i, j| if j < ps { self.s[(i, j)] } else { self.v[(i, j - ps)] });
        FeatureMatrix::new(values, self.column_names(), vec![ColumnKind::Continuous; ps + pv])
    }

    pub fn labels(&self) -> Result<LabelVector> {
        LabelVector::real(self.y.clone())
    }

    /// CSV with header `S_0..S_{ps-1},V_0..V_{pv-1},Y`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.column_names();
        header.push("Y".into());
        w.write_record(&header)?;
        for i in 0..self.nrows() {
            let row = self
                .s
                .row(i)
                .iter()
                .chain(self.v.row(i).iter())
                .chain(std::iter::once(&self.y[i]))
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn sidecar(&self) -> SynthSidecar {
        SynthSidecar {
            env: self.spec,
            bias: self.bias,
            rows: self.nrows(),
            beta_true: self.spec.beta_true(),
        }
    }
}

/// Provenance written next to an exported dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSidecar {
    pub env: EnvSpec,
    pub bias: Option<BiasSpec>,
    pub rows: usize,
    pub beta_true: Vec<f64>,
}

/// Generate `spec.n` rows. Without bias this is a plain draw; with bias,
/// batches are drawn and thinned until `spec.n` rows survive. Label noise is
/// added after selection.
pub fn generate_environment(spec: &EnvSpec, bias: Option<&BiasSpec>) -> Result<SyntheticData> {
    spec.validate()?;
    let (s, v) = match bias {
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            covariates_with(spec.kind, spec.n, spec.p_s, spec.p_v, &mut rng)
        }
        Some(bias) => {
            bias.validate()?;
            if spec.p_v == 0 {
                return Err(Error::InvalidData("bias sampling needs at least one unstable column".into()));
            }
            let batch = POOL_BATCH.max(spec.n);
            let mut s_rows: Vec<Vec<f64>> = Vec::new();
            let mut v_rows: Vec<Vec<f64>> = Vec::new();
            let mut batch_idx = 0u64;
            while s_rows.len() < spec.n {
                if batch_idx as usize >= MAX_POOL_BATCHES {
                    return Err(Error::EmptySelection);
                }
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[1, batch_idx]));
                let (s, v) = covariates_with(spec.kind, batch, spec.p_s, spec.p_v, &mut rng);
                let f = noise_free_outcome(&s)?;
                for i in thin(&v, &f, bias, spec.p_total, &mut rng) {
                    if s_rows.len() == spec.n {
                        break;
                    }
                    s_rows.push(s.row(i).iter().copied().collect());
                    v_rows.push(v.row(i).iter().copied().collect());
                }
                batch_idx += 1;
            }
            (
                DMatrix::from_fn(spec.n, spec.p_s, |i, j| s_rows[i][j]),
                DMatrix::from_fn(spec.n, spec.p_v, |i, j| v_rows[i][j]),
            )
        }
    };
    let y = gen_labels(&s, &v, spec.noise_std, derive_seed(spec.seed, &[2]))?;
    Ok(SyntheticData {
        s,
        v,
        y: y.values().to_vec(),
        spec: *spec,
        bias: bias.copied(),
    })
}
