//! Simulation studies: data generators (independent and Gaussian-copula
//! dependent discrete predictors, discrete or continuous covariates, two
//! error laws), the null-distribution study, and the power study with the
//! nested-linear-model F-test comparator.
//!
//! Replications are embarrassingly parallel; each draws from its own stream
//! of the master seed and results are aggregated in replication order, so a
//! study is bit-reproducible regardless of worker count.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal};

use crate::backfit::{FitOptions, ModelComponent, ModelSpec, Treatment};
use crate::data::{
    CodedColumn, ColumnData, Dataset, LevelStats, Role, VarKind, Variable, VariableSpec,
};
use crate::error::{Error, Result};
use crate::glr::{
    run_test, theoretical_power, AlternativeComponent, Constraint, HypothesisSpec, PowerMode,
};
use crate::smooth::Kernel;

/// Error laws used by the studies. The centered chi-square keeps mean zero
/// as the model requires (variance 10).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorLaw {
    Normal,
    Chisq5Centered,
}

impl ErrorLaw {
    pub fn variance(self) -> f64 {
        match self {
            ErrorLaw::Normal => 1.0,
            ErrorLaw::Chisq5Centered => 10.0,
        }
    }

    fn sample(self, rng: &mut ChaCha12Rng) -> f64 {
        match self {
            ErrorLaw::Normal => rng.sample(StandardNormal),
            ErrorLaw::Chisq5Centered => {
                let chi = ChiSquared::new(5.0).unwrap();
                rng.sample(chi) - 5.0
            }
        }
    }
}

/// Fixed catalog of component functions; covers the study designs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentFn {
    Zero,
    Linear { slope: f64 },
    Power { scale: f64, exponent: u32 },
    SinPi { scale: f64 },
    ShiftedSquare { scale: f64, shift: f64 },
}

impl ComponentFn {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ComponentFn::Zero => 0.0,
            ComponentFn::Linear { slope } => slope * x,
            ComponentFn::Power { scale, exponent } => scale * x.powi(*exponent as i32),
            ComponentFn::SinPi { scale } => scale * (std::f64::consts::PI * x).sin(),
            ComponentFn::ShiftedSquare { scale, shift } => {
                scale * (x - shift) * (x - shift)
            }
        }
    }

    /// Multiply the leading coefficient by `beta`.
    pub fn scaled(&self, beta: f64) -> ComponentFn {
        match *self {
            ComponentFn::Zero => ComponentFn::Zero,
            ComponentFn::Linear { slope } => ComponentFn::Linear {
                slope: slope * beta,
            },
            ComponentFn::Power { scale, exponent } => ComponentFn::Power {
                scale: scale * beta,
                exponent,
            },
            ComponentFn::SinPi { scale } => ComponentFn::SinPi {
                scale: scale * beta,
            },
            ComponentFn::ShiftedSquare { scale, shift } => ComponentFn::ShiftedSquare {
                scale: scale * beta,
                shift,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub name: String,
    /// Marginal level probabilities; levels are coded 0..k-1.
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateLaw {
    Discrete { probs: Vec<f64> },
    Uniform { min: f64, max: f64 },
    Normal { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateConfig {
    pub name: String,
    pub law: CovariateLaw,
    /// Local-polynomial degree for continuous covariates (0 = Nadaraya-Watson).
    #[serde(default)]
    pub smoother_degree: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    /// Model the covariate parametrically with this polynomial degree
    /// instead of smoothing it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_degree: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DependenceGroup {
    pub members: Vec<String>,
    /// Latent correlation matrix (unit diagonal, positive definite).
    pub latent_correlation: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectConfig {
    pub variable: String,
    pub function: ComponentFn,
    /// Scale the leading coefficient by the study's beta value.
    #[serde(default)]
    pub scale_with_beta: bool,
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    pub predictors: Vec<PredictorConfig>,
    #[serde(default)]
    pub dependence_groups: Vec<DependenceGroup>,
    #[serde(default)]
    pub covariates: Vec<CovariateConfig>,
    #[serde(default)]
    pub effects: Vec<EffectConfig>,
    pub error_law: ErrorLaw,
    #[serde(default)]
    pub beta_grid: Vec<f64>,
    pub hypothesis: HypothesisSpec,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Also run the nested-linear-model F test on each replication.
    #[serde(default)]
    pub f_test: bool,
    #[serde(default)]
    pub intercept: f64,
}

/// Minimum admissible level probability; smaller values risk empty levels.
pub const MIN_LEVEL_PROB: f64 = 0.05;

fn check_probs(name: &str, probs: &[f64]) -> Result<()> {
    if probs.len() < 2 {
        return Err(Error::Argument(format!(
            "'{name}' needs at least two levels"
        )));
    }
    if probs.iter().any(|p| *p < MIN_LEVEL_PROB) {
        return Err(Error::Argument(format!(
            "'{name}' has a level probability below {MIN_LEVEL_PROB}"
        )));
    }
    if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "'{name}' probabilities must sum to one"
        )));
    }
    Ok(())
}

impl SimulationConfig {
    pub fn from_json_str(s: &str) -> Result<SimulationConfig> {
        let cfg: SimulationConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::Argument("n must be at least 10".into()));
        }
        if self.replications == 0 {
            return Err(Error::Argument("replications must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Argument("alpha must be in (0,1)".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for p in &self.predictors {
            if !names.insert(p.name.clone()) {
                return Err(Error::Argument(format!("duplicate variable '{}'", p.name)));
            }
            check_probs(&p.name, &p.probs)?;
        }
        for c in &self.covariates {
            if !names.insert(c.name.clone()) {
                return Err(Error::Argument(format!("duplicate variable '{}'", c.name)));
            }
            match &c.law {
                CovariateLaw::Discrete { probs } => check_probs(&c.name, probs)?,
                CovariateLaw::Uniform { min, max } => {
                    if !(max > min) {
                        return Err(Error::Argument(format!(
                            "'{}' uniform law needs min < max",
                            c.name
                        )));
                    }
                }
                CovariateLaw::Normal { sd, .. } => {
                    if !(*sd > 0.0) {
                        return Err(Error::Argument(format!(
                            "'{}' normal law needs sd > 0",
                            c.name
                        )));
                    }
                }
            }
            if let Some(r) = c.param_degree {
                if r < 1 {
                    return Err(Error::Argument(format!(
                        "param_degree of '{}' must be at least 1",
                        c.name
                    )));
                }
            }
        }
        let mut grouped = std::collections::BTreeSet::new();
        for g in &self.dependence_groups {
            let k = g.members.len();
            if k < 2 {
                return Err(Error::Argument(
                    "dependence groups need at least two members".into(),
                ));
            }
            for m in &g.members {
                if !names.contains(m) {
                    return Err(Error::Argument(format!(
                        "dependence group member '{m}' is not a variable"
                    )));
                }
                if !grouped.insert(m.clone()) {
                    return Err(Error::Argument(format!(
                        "variable '{m}' belongs to two dependence groups"
                    )));
                }
            }
            if g.latent_correlation.len() != k
                || g.latent_correlation.iter().any(|row| row.len() != k)
            {
                return Err(Error::Argument(
                    "latent correlation matrix size must match the group".into(),
                ));
            }
            let m = DMatrix::from_fn(k, k, |i, j| g.latent_correlation[i][j]);
            for i in 0..k {
                if (m[(i, i)] - 1.0).abs() > 1e-9 {
                    return Err(Error::Argument(
                        "latent correlation matrices need a unit diagonal".into(),
                    ));
                }
                for j in 0..k {
                    if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 {
                        return Err(Error::Argument(
                            "latent correlation matrices must be symmetric".into(),
                        ));
                    }
                }
            }
            if nalgebra::linalg::Cholesky::new(m).is_none() {
                return Err(Error::Argument(
                    "latent correlation matrix is not positive definite".into(),
                ));
            }
        }
        for e in &self.effects {
            if !names.contains(&e.variable) {
                return Err(Error::Argument(format!(
                    "effect on unknown variable '{}'",
                    e.variable
                )));
            }
        }
        for (name, c) in &self.hypothesis.constraints {
            let pred = self.predictors.iter().find(|p| &p.name == name);
            let Some(pred) = pred else {
                return Err(Error::Argument(format!(
                    "hypothesis tests '{name}' which is not a predictor"
                )));
            };
            if let Constraint::Poly(r) = c {
                let k = pred.probs.len();
                if *r < 1 || r + 1 >= k {
                    return Err(Error::Argument(format!(
                        "hypothesis polynomial degree on '{name}' must satisfy 0 < r < k - 1"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Hardy-Weinberg trinomial (p^2, 2p(1-p), (1-p)^2).
pub fn hardy_weinberg_probs(p: f64) -> Result<[f64; 3]> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Argument(format!(
            "Hardy-Weinberg requires p in (0,1), got {p}"
        )));
    }
    let q = 1.0 - p;
    Ok([p * p, 2.0 * p * q, q * q])
}

/// Population least-squares slope of a linear regression of m1(X) on X when
/// X has the Hardy-Weinberg law with parameter p:
/// beta_LS = -p m1(0) + (1 - 2q) m1(1) + q m1(2).
pub fn beta_ls(m1: &[f64; 3], p: f64) -> f64 {
    let q = 1.0 - p;
    -p * m1[0] + (1.0 - 2.0 * q) * m1[1] + q * m1[2]
}

/// Draw codes 0..k-1 with the given probabilities.
pub fn gen_discrete_independent(probs: &[f64], n: usize, rng: &mut ChaCha12Rng) -> Vec<usize> {
    let mut cum = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in probs {
        acc += p;
        cum.push(acc);
    }
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            cum.iter().position(|&c| u < c).unwrap_or(probs.len() - 1)
        })
        .collect()
}

/// Standard-normal cut points at the cumulative marginal probabilities.
pub fn copula_cut_points(probs: &[f64]) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut cuts = Vec::with_capacity(probs.len() - 1);
    let mut acc = 0.0;
    for p in &probs[..probs.len() - 1] {
        acc += p;
        cuts.push(normal.inverse_cdf(acc));
    }
    cuts
}

fn code_from_latent(z: f64, cuts: &[f64]) -> usize {
    cuts.iter().position(|&c| z <= c).unwrap_or(cuts.len())
}

/// Dependent discrete columns: draw a multivariate normal with the given
/// correlation and cut each coordinate at the standard-normal quantiles of
/// the cumulative marginal probabilities.
pub fn gen_discrete_dependent(
    latent_corr: &DMatrix<f64>,
    margins: &[Vec<f64>],
    n: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<Vec<usize>>> {
    let k = margins.len();
    if latent_corr.nrows() != k || latent_corr.ncols() != k {
        return Err(Error::Argument(
            "latent correlation must match the number of margins".into(),
        ));
    }
    let chol = nalgebra::linalg::Cholesky::new(latent_corr.clone()).ok_or_else(|| {
        Error::Argument("latent correlation matrix is not positive definite".into())
    })?;
    let l = chol.l();
    let cuts: Vec<Vec<f64>> = margins.iter().map(|m| copula_cut_points(m)).collect();
    let mut cols = vec![Vec::with_capacity(n); k];
    let mut g = DVector::zeros(k);
    for _ in 0..n {
        for gi in g.iter_mut() {
            *gi = rng.sample(StandardNormal);
        }
        let z = &l * &g;
        for (j, col) in cols.iter_mut().enumerate() {
            col.push(code_from_latent(z[j], &cuts[j]));
        }
    }
    Ok(cols)
}

/// Latent normals for a dependent continuous group, one column per member.
fn gen_latent_group(
    latent_corr: &DMatrix<f64>,
    n: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<Vec<f64>>> {
    let k = latent_corr.nrows();
    let chol = nalgebra::linalg::Cholesky::new(latent_corr.clone()).ok_or_else(|| {
        Error::Argument("latent correlation matrix is not positive definite".into())
    })?;
    let l = chol.l();
    let mut cols = vec![Vec::with_capacity(n); k];
    let mut g = DVector::zeros(k);
    for _ in 0..n {
        for gi in g.iter_mut() {
            *gi = rng.sample(StandardNormal);
        }
        let z = &l * &g;
        for (j, col) in cols.iter_mut().enumerate() {
            col.push(z[j]);
        }
    }
    Ok(cols)
}

/// One generated column: codes with their level count, or raw values.
pub enum GeneratedColumn {
    Coded(Vec<usize>, usize),
    Continuous(Vec<f64>),
}

impl GeneratedColumn {
    fn value_at(&self, i: usize) -> f64 {
        match self {
            GeneratedColumn::Coded(codes, _) => codes[i] as f64,
            GeneratedColumn::Continuous(v) => v[i],
        }
    }
}

fn continuous_from_latent(z: f64, law: &CovariateLaw, normal: &Normal) -> f64 {
    match law {
        CovariateLaw::Uniform { min, max } => min + (max - min) * normal.cdf(z),
        CovariateLaw::Normal { mean, sd } => mean + sd * z,
        CovariateLaw::Discrete { .. } => unreachable!("handled by the coded path"),
    }
}

fn draw_continuous(law: &CovariateLaw, n: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    match law {
        CovariateLaw::Uniform { min, max } => {
            (0..n).map(|_| rng.gen_range(*min..*max)).collect()
        }
        CovariateLaw::Normal { mean, sd } => (0..n)
            .map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal))
            .collect(),
        CovariateLaw::Discrete { .. } => unreachable!("handled by the coded path"),
    }
}

/// Response Y = intercept + sum of effects + error.
pub fn gen_response(
    columns: &[(String, &GeneratedColumn)],
    effects: &[(String, ComponentFn)],
    error_law: ErrorLaw,
    intercept: f64,
    n: usize,
    rng: &mut ChaCha12Rng,
) -> Vec<f64> {
    let mut y = vec![intercept; n];
    for (var, f) in effects {
        let col = columns
            .iter()
            .find(|(name, _)| name == var)
            .map(|(_, c)| *c)
            .expect("effect variable generated");
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += f.eval(col.value_at(i));
        }
    }
    for yi in y.iter_mut() {
        *yi += error_law.sample(rng);
    }
    y
}

/// Columns for one replication, in the deterministic draw order: dependence
/// groups first (group declaration order), then ungrouped variables
/// (predictors, then covariates, in declaration order).
fn generate_columns(
    cfg: &SimulationConfig,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<(String, GeneratedColumn)>> {
    let mut columns: Vec<(String, Option<GeneratedColumn>)> = cfg
        .predictors
        .iter()
        .map(|p| (p.name.clone(), None))
        .chain(cfg.covariates.iter().map(|c| (c.name.clone(), None)))
        .collect();
    let marginal = |name: &str| -> Option<&[f64]> {
        if let Some(p) = cfg.predictors.iter().find(|p| p.name == name) {
            return Some(&p.probs);
        }
        match cfg.covariates.iter().find(|c| c.name == name).map(|c| &c.law) {
            Some(CovariateLaw::Discrete { probs }) => Some(probs),
            _ => None,
        }
    };
    let law_of = |name: &str| -> Option<&CovariateLaw> {
        cfg.covariates.iter().find(|c| c.name == name).map(|c| &c.law)
    };

    let normal = Normal::new(0.0, 1.0).unwrap();
    for group in &cfg.dependence_groups {
        let k = group.members.len();
        let corr = DMatrix::from_fn(k, k, |i, j| group.latent_correlation[i][j]);
        let latent = gen_latent_group(&corr, cfg.n, rng)?;
        for (member, z_col) in group.members.iter().zip(latent) {
            let generated = if let Some(probs) = marginal(member) {
                let cuts = copula_cut_points(probs);
                let codes: Vec<usize> =
                    z_col.iter().map(|&z| code_from_latent(z, &cuts)).collect();
                GeneratedColumn::Coded(codes, probs.len())
            } else {
                let law = law_of(member).expect("validated member");
                GeneratedColumn::Continuous(
                    z_col
                        .iter()
                        .map(|&z| continuous_from_latent(z, law, &normal))
                        .collect(),
                )
            };
            let slot = columns
                .iter_mut()
                .find(|(n, _)| n == member)
                .expect("validated member");
            slot.1 = Some(generated);
        }
    }
    for p in &cfg.predictors {
        let slot_filled = columns
            .iter()
            .find(|(n, _)| n == &p.name)
            .map(|(_, c)| c.is_some())
            .unwrap();
        if !slot_filled {
            let codes = gen_discrete_independent(&p.probs, cfg.n, rng);
            let slot = columns.iter_mut().find(|(n, _)| n == &p.name).unwrap();
            slot.1 = Some(GeneratedColumn::Coded(codes, p.probs.len()));
        }
    }
    for c in &cfg.covariates {
        let slot_filled = columns
            .iter()
            .find(|(n, _)| n == &c.name)
            .map(|(_, col)| col.is_some())
            .unwrap();
        if !slot_filled {
            let generated = match &c.law {
                CovariateLaw::Discrete { probs } => GeneratedColumn::Coded(
                    gen_discrete_independent(probs, cfg.n, rng),
                    probs.len(),
                ),
                law => GeneratedColumn::Continuous(draw_continuous(law, cfg.n, rng)),
            };
            let slot = columns.iter_mut().find(|(n, _)| n == &c.name).unwrap();
            slot.1 = Some(generated);
        }
    }
    Ok(columns
        .into_iter()
        .map(|(n, c)| (n, c.expect("all columns generated")))
        .collect())
}

fn coded_column(codes: Vec<usize>, k: usize) -> Result<CodedColumn> {
    let mut counts = vec![0usize; k];
    for &c in &codes {
        counts[c] += 1;
    }
    if counts.iter().any(|&c| c == 0) {
        // Unlucky small-sample draw; surfaces as a replication failure.
        return Err(Error::Argument("a level drew zero observations".into()));
    }
    let labels = (0..k).map(|j| j.to_string()).collect();
    Ok(CodedColumn {
        codes,
        labels,
        stats: LevelStats::from_counts(counts),
    })
}

fn dataset_from_columns(
    cfg: &SimulationConfig,
    columns: &[(String, GeneratedColumn)],
    response: Vec<f64>,
) -> Result<Dataset> {
    let mut variables = Vec::new();
    for (name, col) in columns {
        let is_predictor = cfg.predictors.iter().any(|p| &p.name == name);
        let role = if is_predictor {
            Role::Predictor
        } else {
            Role::Covariate
        };
        let (kind, data) = match col {
            GeneratedColumn::Coded(codes, k) => (
                VarKind::Discrete,
                ColumnData::Coded(coded_column(codes.clone(), *k)?),
            ),
            GeneratedColumn::Continuous(v) => {
                (VarKind::Continuous, ColumnData::Continuous(v.clone()))
            }
        };
        variables.push(Variable {
            spec: VariableSpec {
                name: name.clone(),
                role,
                kind,
                levels: None,
                param_degree: None,
                smoother_degree: None,
                bandwidth: None,
            },
            data,
        });
    }
    Dataset::from_parts(0, "y", response, variables)
}

fn model_spec_for(cfg: &SimulationConfig) -> ModelSpec {
    let mut components = Vec::new();
    for p in &cfg.predictors {
        components.push(ModelComponent {
            variable: p.name.clone(),
            treatment: Treatment::Bin,
        });
    }
    for c in &cfg.covariates {
        let treatment = if let Some(r) = c.param_degree {
            Treatment::Poly { degree: r }
        } else {
            match &c.law {
                CovariateLaw::Discrete { .. } => Treatment::Bin,
                _ => Treatment::LocalPoly {
                    degree: c.smoother_degree,
                    bandwidth: c.bandwidth,
                    kernel: Kernel::Gaussian,
                },
            }
        };
        components.push(ModelComponent {
            variable: c.name.clone(),
            treatment,
        });
    }
    ModelSpec { components }
}

/// Nested-linear-model F test treating every variable as one linear term;
/// returns the p-value for dropping the tested predictors.
pub fn f_test_comparator(ds: &Dataset, tested: &[String]) -> Result<f64> {
    let n = ds.n;
    let mut full_cols: Vec<Vec<f64>> = Vec::new();
    let mut reduced_cols: Vec<Vec<f64>> = Vec::new();
    for v in ds.variables() {
        let col: Vec<f64> = match &v.data {
            ColumnData::Coded(c) => c.codes.iter().map(|&x| x as f64).collect(),
            ColumnData::Continuous(z) => z.clone(),
        };
        full_cols.push(col.clone());
        if !tested.contains(&v.spec.name) {
            reduced_cols.push(col);
        }
    }
    let dropped = full_cols.len() - reduced_cols.len();
    if dropped == 0 {
        return Err(Error::Argument("no tested predictors to drop".into()));
    }
    let rss_of = |cols: &[Vec<f64>]| -> Result<f64> {
        let p = cols.len() + 1;
        let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] });
        let y = DVector::from_vec(ds.response.clone());
        let qr = nalgebra::linalg::QR::new(x.clone());
        let r = qr.r();
        let r_max = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
        for j in 0..p {
            if r[(j, j)].abs() <= 1e-10 * r_max.max(1.0) {
                return Err(Error::DegenerateDesign("linear model design".into()));
            }
        }
        let mut qty = y.clone();
        qr.q_tr_mul(&mut qty);
        let beta = r
            .solve_upper_triangular(&qty.rows(0, p).clone_owned())
            .ok_or_else(|| Error::DegenerateDesign("linear model design".into()))?;
        let resid = y - x * beta;
        Ok(resid.iter().map(|v| v * v).sum())
    };
    let rss_full = rss_of(&full_cols)?;
    let rss_reduced = rss_of(&reduced_cols)?;
    let df1 = dropped as f64;
    let df2 = (n - full_cols.len() - 1) as f64;
    if df2 <= 0.0 {
        return Err(Error::DegenerateDesign("saturated linear model".into()));
    }
    if rss_full <= 0.0 {
        return Err(Error::PerfectFit);
    }
    let f = ((rss_reduced - rss_full).max(0.0) / df1) / (rss_full / df2);
    let dist = FisherSnedecor::new(df1, df2)
        .map_err(|e| Error::Argument(format!("F distribution: {e}")))?;
    Ok((1.0 - dist.cdf(f)).clamp(0.0, 1.0))
}

/// One replication's test results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta: Option<f64>,
    pub lambda: f64,
    pub p_value: f64,
    pub p_value_indep: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub f_test_p: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyFailure {
    pub replication: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta: Option<f64>,
    pub message: String,
}

/// Empirical rates for one beta value of a power study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaSummary {
    pub beta: f64,
    pub replications: usize,
    pub failures: usize,
    /// Rejection rate of the exact-mixture test at the study alpha.
    pub power: f64,
    /// Rejection rate under the independence approximation.
    pub power_indep: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub power_f_test: Option<f64>,
    /// Noncentral chi-square power under the independence approximation.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub power_theoretical: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Null,
    Power,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyResult {
    pub kind: StudyKind,
    pub alpha: f64,
    pub records: Vec<ReplicationRecord>,
    pub failures: Vec<StudyFailure>,
    /// Exact-mixture rejection rate at alpha (null studies).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rejection_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rejection_rate_indep: Option<f64>,
    /// Gaussian kernel density of the null statistic (null studies).
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub density: Vec<(f64, f64)>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub beta_summaries: Vec<BetaSummary>,
}

impl StudyResult {
    pub fn lambdas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.lambda).collect()
    }

    /// Per-replication CSV (one row per successful replication).
    pub fn write_records_csv<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "replication,beta,lambda,p_value,p_value_indep,f_test_p")?;
        for r in &self.records {
            let beta = r.beta.map(|b| b.to_string()).unwrap_or_default();
            let f = r.f_test_p.map(|p| p.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.replication, beta, r.lambda, r.p_value, r.p_value_indep, f
            )?;
        }
        Ok(())
    }

    /// Beta-vs-power CSV (power studies).
    pub fn write_power_csv<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        writeln!(
            w,
            "beta,replications,failures,power,power_indep,power_f_test,power_theoretical"
        )?;
        for s in &self.beta_summaries {
            let f = s.power_f_test.map(|p| p.to_string()).unwrap_or_default();
            let t = s
                .power_theoretical
                .map(|p| p.to_string())
                .unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                s.beta, s.replications, s.failures, s.power, s.power_indep, f, t
            )?;
        }
        Ok(())
    }

    /// Null-statistic density CSV (null studies).
    pub fn write_density_csv<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "x,density")?;
        for (x, d) in &self.density {
            writeln!(w, "{x},{d}")?;
        }
        Ok(())
    }
}

/// Gaussian kernel density on a fixed grid, rule-of-thumb bandwidth.
pub fn gaussian_kde_grid(values: &[f64], points: usize) -> Vec<(f64, f64)> {
    if values.is_empty() || points == 0 {
        return Vec::new();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let h = (1.06 * sd * n.powf(-0.2)).max(1e-9);
    let min = values.iter().cloned().fold(f64::MAX, f64::min) - 3.0 * h;
    let max = values.iter().cloned().fold(f64::MIN, f64::max) + 3.0 * h;
    let step = (max - min) / (points.saturating_sub(1).max(1)) as f64;
    (0..points)
        .map(|i| {
            let x = min + i as f64 * step;
            let d = values
                .iter()
                .map(|&v| Kernel::Gaussian.eval((x - v) / h))
                .sum::<f64>()
                / (n * h);
            (x, d)
        })
        .collect()
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn two_sample_ks(a: &[f64], b: &[f64]) -> f64 {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    xb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let mut i = 0;
    let mut j = 0;
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let (va, vb) = (xa[i], xb[j]);
        if va <= vb {
            i += 1;
        }
        if vb <= va {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

fn replication_stream(beta_idx: usize, rep: usize) -> u64 {
    ((beta_idx as u64) << 32) | rep as u64
}

fn run_replication(
    cfg: &SimulationConfig,
    beta: Option<f64>,
    beta_idx: usize,
    rep: usize,
) -> std::result::Result<ReplicationRecord, String> {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    rng.set_stream(replication_stream(beta_idx, rep));

    let mut inner = || -> Result<ReplicationRecord> {
        let columns = generate_columns(cfg, &mut rng)?;
        let effects: Vec<(String, ComponentFn)> = cfg
            .effects
            .iter()
            .map(|e| {
                let f = match (beta, e.scale_with_beta) {
                    (Some(b), true) => e.function.scaled(b),
                    _ => e.function,
                };
                (e.variable.clone(), f)
            })
            .collect();
        let col_refs: Vec<(String, &GeneratedColumn)> = columns
            .iter()
            .map(|(n, c)| (n.clone(), c))
            .collect();
        let y = gen_response(
            &col_refs,
            &effects,
            cfg.error_law,
            cfg.intercept,
            cfg.n,
            &mut rng,
        );
        let ds = dataset_from_columns(cfg, &columns, y)?;
        let spec = model_spec_for(cfg);
        let result = run_test(&ds, &spec, &cfg.hypothesis, &FitOptions::default())?;
        let f_test_p = if cfg.f_test {
            let tested: Vec<String> = cfg
                .hypothesis
                .constraints
                .iter()
                .map(|(n, _)| n.clone())
                .collect();
            Some(f_test_comparator(&ds, &tested)?)
        } else {
            None
        };
        Ok(ReplicationRecord {
            replication: rep,
            beta,
            lambda: result.lambda_n,
            p_value: result.p_value,
            p_value_indep: result.p_value_indep,
            f_test_p,
        })
    };
    inner().map_err(|e| e.to_string())
}

/// Null-distribution study: every replication under the configured effects
/// (predictor effects normally absent), aggregated rejection rates at alpha
/// plus a kernel-density summary of the statistic.
pub fn null_study(cfg: &SimulationConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let outcomes: Vec<_> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| run_replication(cfg, None, 0, rep))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (rep, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(r) => records.push(r),
            Err(message) => failures.push(StudyFailure {
                replication: rep,
                beta: None,
                message,
            }),
        }
    }
    let m = records.len().max(1) as f64;
    let rejection_rate = records.iter().filter(|r| r.p_value < cfg.alpha).count() as f64 / m;
    let rejection_rate_indep =
        records.iter().filter(|r| r.p_value_indep < cfg.alpha).count() as f64 / m;
    let lambdas: Vec<f64> = records.iter().map(|r| r.lambda).collect();
    let density = gaussian_kde_grid(&lambdas, 128);
    Ok(StudyResult {
        kind: StudyKind::Null,
        alpha: cfg.alpha,
        records,
        failures,
        rejection_rate: Some(rejection_rate),
        rejection_rate_indep: Some(rejection_rate_indep),
        density,
        beta_summaries: Vec::new(),
    })
}

/// Alternative components implied by the configured effects at one beta,
/// for the theoretical (noncentral chi-square) power.
fn alternative_components(cfg: &SimulationConfig, beta: f64) -> Vec<AlternativeComponent> {
    cfg.hypothesis
        .constraints
        .iter()
        .map(|(name, constraint)| {
            let pred = cfg
                .predictors
                .iter()
                .find(|p| &p.name == name)
                .expect("validated hypothesis");
            let k = pred.probs.len();
            let levels: Vec<f64> = (0..k).map(|j| j as f64).collect();
            let m_star: Vec<f64> = match cfg.effects.iter().find(|e| &e.variable == name) {
                Some(e) => {
                    let f = if e.scale_with_beta {
                        e.function.scaled(beta)
                    } else {
                        e.function
                    };
                    levels.iter().map(|&x| f.eval(x)).collect()
                }
                None => vec![0.0; k],
            };
            AlternativeComponent {
                levels,
                probs: pred.probs.clone(),
                m_star,
                constraint: *constraint,
            }
        })
        .collect()
}

/// Power study over the beta grid, with optional F-test comparator and the
/// theoretical power curve.
pub fn power_study(cfg: &SimulationConfig) -> Result<StudyResult> {
    cfg.validate()?;
    if cfg.beta_grid.is_empty() {
        return Err(Error::Argument("power study needs a beta grid".into()));
    }
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut beta_summaries = Vec::new();
    for (beta_idx, &beta) in cfg.beta_grid.iter().enumerate() {
        let outcomes: Vec<_> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| run_replication(cfg, Some(beta), beta_idx, rep))
            .collect();
        let mut ok = 0usize;
        let mut fail = 0usize;
        let mut reject = 0usize;
        let mut reject_indep = 0usize;
        let mut reject_f = 0usize;
        let mut has_f = false;
        for (rep, out) in outcomes.into_iter().enumerate() {
            match out {
                Ok(r) => {
                    ok += 1;
                    if r.p_value < cfg.alpha {
                        reject += 1;
                    }
                    if r.p_value_indep < cfg.alpha {
                        reject_indep += 1;
                    }
                    if let Some(fp) = r.f_test_p {
                        has_f = true;
                        if fp < cfg.alpha {
                            reject_f += 1;
                        }
                    }
                    records.push(r);
                }
                Err(message) => {
                    fail += 1;
                    failures.push(StudyFailure {
                        replication: rep,
                        beta: Some(beta),
                        message,
                    });
                }
            }
        }
        let m = ok.max(1) as f64;
        let power_theoretical = theoretical_power(
            &alternative_components(cfg, beta),
            &[1.0],
            cfg.alpha,
            PowerMode::IndependenceApprox,
            Some(cfg.n),
            cfg.error_law.variance(),
        )
        .ok();
        beta_summaries.push(BetaSummary {
            beta,
            replications: ok,
            failures: fail,
            power: reject as f64 / m,
            power_indep: reject_indep as f64 / m,
            power_f_test: if has_f {
                Some(reject_f as f64 / m)
            } else {
                None
            },
            power_theoretical,
        });
    }
    Ok(StudyResult {
        kind: StudyKind::Power,
        alpha: cfg.alpha,
        records,
        failures,
        rejection_rate: None,
        rejection_rate_indep: None,
        density: Vec::new(),
        beta_summaries,
    })
}

/// Probability vector for k levels: uniform draws normalized, redrawn until
/// every entry clears the minimum.
pub fn draw_level_probs(k: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|v| v / total).collect();
        if probs.iter().all(|p| *p >= MIN_LEVEL_PROB) {
            return probs;
        }
    }
}

/// Largest admissible |off-diagonal| latent correlation. Values near one
/// make the backfitting system nearly singular (the additive decomposition
/// of comonotone regressors is not identified), so draws are rejected
/// beyond this bound.
pub const MAX_LATENT_CORRELATION: f64 = 0.75;

/// Random correlation matrix: normalized Gram matrix of a square standard
/// normal draw, redrawn until positive definite with all off-diagonal
/// entries bounded away from +-1.
pub fn draw_correlation(k: usize, rng: &mut ChaCha12Rng) -> Vec<Vec<f64>> {
    loop {
        let a = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let c = &a * a.transpose();
        let mut corr = vec![vec![0.0; k]; k];
        let mut bounded = true;
        for i in 0..k {
            for j in 0..k {
                corr[i][j] = c[(i, j)] / (c[(i, i)] * c[(j, j)]).sqrt();
                if i != j && corr[i][j].abs() > MAX_LATENT_CORRELATION {
                    bounded = false;
                }
            }
        }
        if !bounded {
            continue;
        }
        for (i, row) in corr.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let m = DMatrix::from_fn(k, k, |i, j| corr[i][j]);
        if nalgebra::linalg::Cholesky::new(m).is_some() {
            return corr;
        }
    }
}

/// Study design with five discrete predictors (3, 4, 5, 4, 3 levels), two
/// discrete covariates (5, 4), two continuous covariates on (0,1), the
/// covariate effects z1, z2^2, z3^2, sin(pi z4), dependence within
/// (x3,x4,x5), (z1,z2) and (z3,z4), and the all-zero hypothesis. Design
/// parameters (probabilities, correlations) are drawn once from
/// `design_seed` and fixed; `run_seed` drives the replications.
pub fn null_design_config(
    design_seed: u64,
    run_seed: u64,
    n: usize,
    replications: usize,
    error_law: ErrorLaw,
) -> SimulationConfig {
    let mut rng = ChaCha12Rng::seed_from_u64(design_seed);
    let ks = [3usize, 4, 5, 4, 3];
    let predictors: Vec<PredictorConfig> = ks
        .iter()
        .enumerate()
        .map(|(i, &k)| PredictorConfig {
            name: format!("x{}", i + 1),
            probs: draw_level_probs(k, &mut rng),
        })
        .collect();
    let covariates = vec![
        CovariateConfig {
            name: "z1".into(),
            law: CovariateLaw::Discrete {
                probs: draw_level_probs(5, &mut rng),
            },
            smoother_degree: 0,
            bandwidth: None,
            param_degree: None,
        },
        CovariateConfig {
            name: "z2".into(),
            law: CovariateLaw::Discrete {
                probs: draw_level_probs(4, &mut rng),
            },
            smoother_degree: 0,
            bandwidth: None,
            param_degree: None,
        },
        CovariateConfig {
            name: "z3".into(),
            law: CovariateLaw::Uniform { min: 0.0, max: 1.0 },
            smoother_degree: 0,
            bandwidth: None,
            param_degree: None,
        },
        CovariateConfig {
            name: "z4".into(),
            law: CovariateLaw::Uniform { min: 0.0, max: 1.0 },
            smoother_degree: 0,
            bandwidth: None,
            param_degree: None,
        },
    ];
    let dependence_groups = vec![
        DependenceGroup {
            members: vec!["x3".into(), "x4".into(), "x5".into()],
            latent_correlation: draw_correlation(3, &mut rng),
        },
        DependenceGroup {
            members: vec!["z1".into(), "z2".into()],
            latent_correlation: draw_correlation(2, &mut rng),
        },
        DependenceGroup {
            members: vec!["z3".into(), "z4".into()],
            latent_correlation: draw_correlation(2, &mut rng),
        },
    ];
    let effects = vec![
        EffectConfig {
            variable: "z1".into(),
            function: ComponentFn::Linear { slope: 1.0 },
            scale_with_beta: false,
        },
        EffectConfig {
            variable: "z2".into(),
            function: ComponentFn::Power {
                scale: 1.0,
                exponent: 2,
            },
            scale_with_beta: false,
        },
        EffectConfig {
            variable: "z3".into(),
            function: ComponentFn::Power {
                scale: 1.0,
                exponent: 2,
            },
            scale_with_beta: false,
        },
        EffectConfig {
            variable: "z4".into(),
            function: ComponentFn::SinPi { scale: 1.0 },
            scale_with_beta: false,
        },
    ];
    SimulationConfig {
        n,
        replications,
        seed: run_seed,
        predictors,
        dependence_groups,
        covariates,
        effects,
        error_law,
        beta_grid: Vec::new(),
        hypothesis: HypothesisSpec::zero_for(&["x1", "x2", "x3", "x4", "x5"]),
        alpha: 0.05,
        f_test: false,
        intercept: 0.0,
    }
}

/// Power design: the null design with x1 redrawn from the Hardy-Weinberg
/// law at p = 0.75 and the beta-scaled effect m1(x) = beta (x - 0.75)^2, a
/// design whose population least-squares slope is exactly zero, so the
/// nested-linear-model F test is blind to it.
pub fn power_design_config(
    design_seed: u64,
    run_seed: u64,
    n: usize,
    replications: usize,
    beta_grid: Vec<f64>,
) -> SimulationConfig {
    let mut cfg = null_design_config(design_seed, run_seed, n, replications, ErrorLaw::Normal);
    cfg.predictors[0].probs = hardy_weinberg_probs(0.75).unwrap().to_vec();
    cfg.effects.push(EffectConfig {
        variable: "x1".into(),
        function: ComponentFn::ShiftedSquare {
            scale: 1.0,
            shift: 0.75,
        },
        scale_with_beta: true,
    });
    cfg.beta_grid = beta_grid;
    cfg.f_test = true;
    cfg
}

/// Goodness-of-fit design: the power design plus a true linear effect
/// m2(x) = x/2, testing { m2 linear, all other predictors zero }; the null
/// holds exactly at beta = 0.
pub fn gof_design_config(
    design_seed: u64,
    run_seed: u64,
    n: usize,
    replications: usize,
    beta_grid: Vec<f64>,
) -> SimulationConfig {
    let mut cfg = power_design_config(design_seed, run_seed, n, replications, beta_grid);
    cfg.f_test = false;
    cfg.effects.push(EffectConfig {
        variable: "x2".into(),
        function: ComponentFn::Linear { slope: 0.5 },
        scale_with_beta: false,
    });
    cfg.hypothesis = HypothesisSpec {
        constraints: vec![
            ("x1".into(), Constraint::Zero),
            ("x2".into(), Constraint::Poly(1)),
            ("x3".into(), Constraint::Zero),
            ("x4".into(), Constraint::Zero),
            ("x5".into(), Constraint::Zero),
        ],
    };
    cfg
}
