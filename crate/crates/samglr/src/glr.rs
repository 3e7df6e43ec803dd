//! Generalized likelihood ratio test engine.
//!
//! The statistic is lambda_n = n (RSS0 - RSS1) / RSS1. Its null law is the
//! weighted chi-square mixture whose weights are the nonzero eigenvalues of
//! Sigma1 Sigma2 Sigma1, built from the tested predictors' level
//! probabilities and polynomial cross-moments:
//!
//! - a predictor constrained to zero contributes a block in the level basis:
//!   Sigma1 block I - c c^T with c the square-root probability vector,
//!   Sigma2 cross blocks from normalized level indicators (equivalently the
//!   joint-probability closed form);
//! - a predictor constrained to a degree-r polynomial contributes an identity
//!   Sigma1 block of size k - r - 1 and Sigma2 cross blocks from the
//!   orthonormalized residual subspace of the degree-r fit, via the
//!   symmetric inverse square root of the basis Grammian.
//!
//! Sample quantities are plugged in for the population limits. Under
//! pairwise independence the eigenvalues collapse to ones and the mixture to
//! a single chi-square, which is also exposed as the independence
//! approximation with its closed-form degrees of freedom.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::backfit::{rss_under_hypothesis, AdditiveFit, FitOptions, ModelSpec};
use crate::data::{Dataset, LevelStats, Role};
use crate::dist::{chi2_quantile, chi2_survival, noncentral_chi2_cdf, Accuracy, ChiSquareMixture};
use crate::error::{Error, Result};

/// Constraint on one tested predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constraint {
    /// The component is identically zero (model utility test).
    Zero,
    /// The component is a polynomial of this degree (goodness-of-fit test).
    Poly(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HypothesisEntry {
    variable: String,
    constraint: Constraint,
}

/// Null hypothesis: one constraint per tested predictor. The list order
/// fixes the block order of Sigma1/Sigma2.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HypothesisSpec {
    pub constraints: Vec<(String, Constraint)>,
}

impl Serialize for HypothesisSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let entries: Vec<HypothesisEntry> = self
            .constraints
            .iter()
            .map(|(variable, constraint)| HypothesisEntry {
                variable: variable.clone(),
                constraint: *constraint,
            })
            .collect();
        entries.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for HypothesisSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let entries = Vec::<HypothesisEntry>::deserialize(deserializer)?;
        Ok(HypothesisSpec {
            constraints: entries
                .into_iter()
                .map(|e| (e.variable, e.constraint))
                .collect(),
        })
    }
}

impl HypothesisSpec {
    pub fn zero_for(variables: &[&str]) -> HypothesisSpec {
        HypothesisSpec {
            constraints: variables
                .iter()
                .map(|v| (v.to_string(), Constraint::Zero))
                .collect(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<HypothesisSpec> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Every tested variable must be a coded predictor; polynomial degrees
    /// must satisfy 0 < r < k - 1 on the observed levels.
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (name, constraint) in &self.constraints {
            if !seen.insert(name) {
                return Err(Error::Argument(format!(
                    "variable '{name}' is tested twice"
                )));
            }
            let v = ds.require(name)?;
            if v.spec.role != Role::Predictor {
                return Err(Error::Argument(format!(
                    "tested variable '{name}' must be a predictor"
                )));
            }
            let coded = v.coded().ok_or_else(|| {
                Error::Argument(format!(
                    "predictors must be discrete or categorical ('{name}')"
                ))
            })?;
            if let Constraint::Poly(r) = constraint {
                let k = coded.stats.k();
                if *r < 1 || r + 1 >= k {
                    return Err(Error::Argument(format!(
                        "polynomial constraint on '{name}' must satisfy 0 < r < k - 1 (r = {r}, k = {k})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The Sigma1/Sigma2 matrices with their block layout.
#[derive(Debug, Clone)]
pub struct SigmaPair {
    pub sigma1: DMatrix<f64>,
    pub sigma2: DMatrix<f64>,
    /// Per tested predictor: k_p - r_p - 1 for polynomial blocks, k_p for
    /// zero blocks.
    pub block_sizes: Vec<usize>,
}

impl SigmaPair {
    pub fn dim(&self) -> usize {
        self.block_sizes.iter().sum()
    }
}

/// GLR statistic lambda_n = n (RSS0 - RSS1) / RSS1, clipped to zero when the
/// RSS difference is within relative solver slack.
pub fn glr_statistic(rss0: f64, rss1: f64, n: usize) -> Result<f64> {
    if !(rss1 > 0.0) {
        return Err(Error::PerfectFit);
    }
    let lambda = n as f64 * (rss0 - rss1) / rss1;
    if lambda >= 0.0 {
        Ok(lambda)
    } else if lambda >= -1e-9 * n as f64 {
        Ok(0.0)
    } else {
        Err(Error::Argument(format!(
            "RSS0 = {rss0} is below RSS1 = {rss1} beyond solver slack"
        )))
    }
}

fn sigma1_blocks(blocks: &[(Constraint, &LevelStats)]) -> DMatrix<f64> {
    let sizes: Vec<usize> = blocks
        .iter()
        .map(|(c, stats)| match c {
            Constraint::Zero => stats.k(),
            Constraint::Poly(r) => stats.k() - r - 1,
        })
        .collect();
    let dim: usize = sizes.iter().sum();
    let mut m = DMatrix::zeros(dim, dim);
    let mut off = 0;
    for ((c, stats), size) in blocks.iter().zip(&sizes) {
        match c {
            Constraint::Zero => {
                let sq = &stats.sqrt_probs;
                for i in 0..*size {
                    for j in 0..*size {
                        let v = if i == j { 1.0 } else { 0.0 };
                        m[(off + i, off + j)] = v - sq[i] * sq[j];
                    }
                }
            }
            Constraint::Poly(_) => {
                for i in 0..*size {
                    m[(off + i, off + i)] = 1.0;
                }
            }
        }
        off += size;
    }
    m
}

/// Sigma1: block diagonal with identity blocks of size k - r - 1 for
/// polynomial constraints and (I - c c^T) blocks for zero constraints, with
/// c the empirical square-root probability vector.
pub fn build_sigma1(ds: &Dataset, hypothesis: &HypothesisSpec) -> Result<DMatrix<f64>> {
    hypothesis.validate(ds)?;
    let blocks: Vec<(Constraint, &LevelStats)> = hypothesis
        .constraints
        .iter()
        .map(|(name, c)| (*c, &ds.require(name).unwrap().coded().unwrap().stats))
        .collect();
    Ok(sigma1_blocks(&blocks))
}

/// Symmetric inverse square root via eigendecomposition; eigenvalues below
/// the relative threshold mean a rank-deficient basis.
fn sym_inv_sqrt(g: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let sym = (g + g.transpose()) * 0.5;
    let eig = nalgebra::linalg::SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    if !(max > 0.0) {
        return Err(Error::DegenerateDesign(context.to_string()));
    }
    let mut inv_sqrt = DVector::zeros(eig.eigenvalues.len());
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        // Round-off can push tiny eigenvalues negative; values at or below
        // the threshold make the basis unusable.
        if l <= 1e-10 * max {
            return Err(Error::DegenerateDesign(context.to_string()));
        }
        inv_sqrt[i] = 1.0 / l.sqrt();
    }
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&inv_sqrt) * v.transpose())
}

/// Orthonormal block basis for one tested predictor, as an n x size matrix
/// B = R (R^T R)^(-1/2):
/// - zero constraint: R is the level indicator matrix, so B has columns
///   1{code=j} / sqrt(n_j);
/// - poly(r) constraint: R is the residual of the powers r+1..k-1 after
///   projecting out the degree-r polynomial span (intercept included).
fn block_basis(ds: &Dataset, name: &str, constraint: Constraint) -> Result<DMatrix<f64>> {
    let coded = ds.require(name)?.coded().unwrap();
    let n = ds.n;
    let k = coded.stats.k();
    match constraint {
        Constraint::Zero => {
            let mut b = DMatrix::zeros(n, k);
            for (i, &code) in coded.codes.iter().enumerate() {
                b[(i, code)] = 1.0 / (coded.stats.counts[code] as f64).sqrt();
            }
            Ok(b)
        }
        Constraint::Poly(r) => {
            let values = ds.poly_values(name)?;
            let low = crate::data::poly_design(&values, 0, r)?;
            let high = crate::data::poly_design(&values, r + 1, k - 1)?;
            // Residualize the high powers against the degree-r span.
            let qr = nalgebra::linalg::QR::new(low);
            let r_mat = qr.r();
            let cols = r + 1;
            let r_max = (0..cols).map(|j| r_mat[(j, j)].abs()).fold(0.0, f64::max);
            for j in 0..cols {
                if r_mat[(j, j)].abs() <= 1e-10 * r_max.max(1.0) {
                    return Err(Error::DegenerateDesign(name.to_string()));
                }
            }
            let q = qr.q();
            let resid = &high - &q * (q.transpose() * &high);
            let g = resid.transpose() * &resid;
            let g_inv_sqrt = sym_inv_sqrt(&g, name)?;
            Ok(resid * g_inv_sqrt)
        }
    }
}

/// Sigma2: identity diagonal blocks; off-diagonal block (p, p') is the
/// cross-Grammian B_p^T B_p' of the block bases. For pairs of zero
/// constraints this equals the joint-probability closed form
/// sigma_ij = P(X_p = x_i, X_p' = x_j) / sqrt(c_pi c_p'j) exactly.
pub fn build_sigma2(ds: &Dataset, hypothesis: &HypothesisSpec) -> Result<DMatrix<f64>> {
    hypothesis.validate(ds)?;
    let mut bases = Vec::new();
    let mut sizes = Vec::new();
    for (name, c) in &hypothesis.constraints {
        let b = block_basis(ds, name, *c)?;
        sizes.push(b.ncols());
        bases.push(b);
    }
    let dim: usize = sizes.iter().sum();
    let mut sigma2 = DMatrix::identity(dim, dim);
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    for p in 0..bases.len() {
        for q in (p + 1)..bases.len() {
            let cross = bases[p].transpose() * &bases[q];
            for i in 0..sizes[p] {
                for j in 0..sizes[q] {
                    sigma2[(offsets[p] + i, offsets[q] + j)] = cross[(i, j)];
                    sigma2[(offsets[q] + j, offsets[p] + i)] = cross[(i, j)];
                }
            }
        }
    }
    Ok(sigma2)
}

pub fn build_sigma_pair(ds: &Dataset, hypothesis: &HypothesisSpec) -> Result<SigmaPair> {
    let sigma1 = build_sigma1(ds, hypothesis)?;
    let sigma2 = build_sigma2(ds, hypothesis)?;
    let block_sizes = hypothesis
        .constraints
        .iter()
        .map(|(name, c)| {
            let k = ds.require(name).unwrap().coded().unwrap().stats.k();
            match c {
                Constraint::Zero => k,
                Constraint::Poly(r) => k - r - 1,
            }
        })
        .collect();
    Ok(SigmaPair {
        sigma1,
        sigma2,
        block_sizes,
    })
}

/// One tested predictor described by its population law.
#[derive(Debug, Clone)]
pub struct PopulationPredictor {
    /// Level values entering polynomial bases (usually the codes).
    pub levels: Vec<f64>,
    pub probs: Vec<f64>,
    pub constraint: Constraint,
}

impl PopulationPredictor {
    fn validate(&self) -> Result<()> {
        let k = self.levels.len();
        if k < 2 || self.probs.len() != k {
            return Err(Error::Argument(
                "population predictor needs k >= 2 levels with matching probabilities".into(),
            ));
        }
        if self.probs.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::Argument(
                "population level probabilities must be positive".into(),
            ));
        }
        if ((self.probs.iter().sum::<f64>()) - 1.0).abs() > 1e-8 {
            return Err(Error::Argument(
                "population level probabilities must sum to one".into(),
            ));
        }
        if let Constraint::Poly(r) = self.constraint {
            if r < 1 || r + 1 >= k {
                return Err(Error::Argument(
                    "population polynomial constraint must satisfy 0 < r < k - 1".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Basis functions over the levels, orthonormal in L2 of the marginal law:
/// normalized indicators for zero constraints, weighted orthonormal
/// polynomials of degrees r+1..k-1 for poly constraints. Returned as a
/// k x size matrix of function values.
fn population_basis(pred: &PopulationPredictor) -> Result<DMatrix<f64>> {
    let k = pred.levels.len();
    match pred.constraint {
        Constraint::Zero => {
            let mut f = DMatrix::zeros(k, k);
            for i in 0..k {
                f[(i, i)] = 1.0 / pred.probs[i].sqrt();
            }
            Ok(f)
        }
        Constraint::Poly(r) => {
            // Weighted Gram-Schmidt on the power functions.
            let mut funcs: Vec<DVector<f64>> = Vec::with_capacity(k);
            for m in 0..k {
                let mut v = DVector::from_fn(k, |i, _| pred.levels[i].powi(m as i32));
                for prev in &funcs {
                    let dot: f64 = (0..k).map(|i| pred.probs[i] * v[i] * prev[i]).sum();
                    v -= prev * dot;
                }
                let norm: f64 = (0..k)
                    .map(|i| pred.probs[i] * v[i] * v[i])
                    .sum::<f64>()
                    .sqrt();
                if norm < 1e-12 {
                    return Err(Error::DegenerateDesign(
                        "population polynomial basis".into(),
                    ));
                }
                funcs.push(v / norm);
            }
            let size = k - r - 1;
            let mut f = DMatrix::zeros(k, size);
            for (j, func) in funcs.iter().skip(r + 1).enumerate() {
                for i in 0..k {
                    f[(i, j)] = func[i];
                }
            }
            Ok(f)
        }
    }
}

/// Population Sigma1/Sigma2 from marginal laws and pairwise joint laws.
/// `joint(p, q)` returns the k_p x k_q joint probability table, or None for
/// an independent pair (outer product of the marginals).
pub fn population_sigma_pair<F>(preds: &[PopulationPredictor], joint: F) -> Result<SigmaPair>
where
    F: Fn(usize, usize) -> Option<DMatrix<f64>>,
{
    for p in preds {
        p.validate()?;
    }
    let stats: Vec<LevelStats> = preds
        .iter()
        .map(|p| LevelStats {
            counts: vec![0; p.probs.len()],
            probs: p.probs.clone(),
            sqrt_probs: p.probs.iter().map(|x| x.sqrt()).collect(),
        })
        .collect();
    let blocks: Vec<(Constraint, &LevelStats)> = preds
        .iter()
        .zip(&stats)
        .map(|(p, s)| (p.constraint, s))
        .collect();
    let sigma1 = sigma1_blocks(&blocks);

    let bases: Vec<DMatrix<f64>> = preds
        .iter()
        .map(population_basis)
        .collect::<Result<_>>()?;
    let sizes: Vec<usize> = bases.iter().map(|b| b.ncols()).collect();
    let dim: usize = sizes.iter().sum();
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    let mut sigma2 = DMatrix::identity(dim, dim);
    for p in 0..preds.len() {
        for q in (p + 1)..preds.len() {
            let j = joint(p, q).unwrap_or_else(|| {
                DMatrix::from_fn(preds[p].probs.len(), preds[q].probs.len(), |i, jj| {
                    preds[p].probs[i] * preds[q].probs[jj]
                })
            });
            let cross = bases[p].transpose() * j * &bases[q];
            for i in 0..sizes[p] {
                for jj in 0..sizes[q] {
                    sigma2[(offsets[p] + i, offsets[q] + jj)] = cross[(i, jj)];
                    sigma2[(offsets[q] + jj, offsets[p] + i)] = cross[(i, jj)];
                }
            }
        }
    }
    Ok(SigmaPair {
        sigma1,
        sigma2,
        block_sizes: sizes,
    })
}

/// Relative threshold below which eigenvalues of Sigma1 Sigma2 Sigma1 are
/// treated as the exact zeros of the projector structure.
const EIGENVALUE_RETENTION: f64 = 1e-10;

/// Nonzero eigenvalues of Sigma1 Sigma2 Sigma1 and their count.
pub fn null_eigenvalues(pair: &SigmaPair) -> (Vec<f64>, usize) {
    let product = &pair.sigma1 * &pair.sigma2 * &pair.sigma1;
    let sym = (&product + product.transpose()) * 0.5;
    let eig = nalgebra::linalg::SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let mut kept: Vec<f64> = eig
        .eigenvalues
        .iter()
        .cloned()
        .filter(|&l| l > EIGENVALUE_RETENTION * max.max(0.0) && l > 0.0)
        .collect();
    kept.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let s = kept.len();
    (kept, s)
}

/// Degrees of freedom of the independence approximation:
/// sum (k_p - r_p - 1) over polynomial blocks + sum (k_p - 1) over zero blocks.
pub fn indep_df_from_blocks(blocks: &[(Constraint, usize)]) -> usize {
    blocks
        .iter()
        .map(|(c, k)| match c {
            Constraint::Zero => k - 1,
            Constraint::Poly(r) => k - r - 1,
        })
        .sum()
}

pub fn indep_df(ds: &Dataset, hypothesis: &HypothesisSpec) -> Result<usize> {
    hypothesis.validate(ds)?;
    let blocks: Vec<(Constraint, usize)> = hypothesis
        .constraints
        .iter()
        .map(|(name, c)| (*c, ds.require(name).unwrap().coded().unwrap().stats.k()))
        .collect();
    Ok(indep_df_from_blocks(&blocks))
}

/// Upper tail of the null mixture at the observed statistic.
pub fn p_value(lambda: f64, eigenvalues: &[f64]) -> Result<(f64, Accuracy)> {
    let mixture = ChiSquareMixture::new(eigenvalues.to_vec())?;
    let (p, acc) = mixture.survival_with_accuracy(lambda);
    Ok((p.clamp(0.0, 1.0), acc))
}

/// Probability-weighted least-squares polynomial fit of degree r to the
/// centered values over the level support; coefficients [c_0..c_r].
pub fn best_poly_projection(
    levels: &[f64],
    values: &[f64],
    probs: &[f64],
    degree: usize,
) -> Result<Vec<f64>> {
    let k = levels.len();
    if values.len() != k || probs.len() != k {
        return Err(Error::Argument(
            "levels, values and probabilities must have equal length".into(),
        ));
    }
    if k <= degree + 1 {
        return Err(Error::Argument(format!(
            "projection of degree {degree} needs more than {} levels",
            degree + 1
        )));
    }
    let wmean: f64 = levels
        .iter()
        .zip(values)
        .zip(probs)
        .map(|((_, v), p)| p * v)
        .sum();
    let centered: Vec<f64> = values.iter().map(|v| v - wmean).collect();

    let m = degree + 1;
    let mut normal = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    for i in 0..k {
        let mut pow = vec![0.0; m];
        let mut p = 1.0;
        for item in pow.iter_mut() {
            *item = p;
            p *= levels[i];
        }
        for a in 0..m {
            for b in 0..m {
                normal[(a, b)] += probs[i] * pow[a] * pow[b];
            }
            rhs[a] += probs[i] * pow[a] * centered[i];
        }
    }
    let lu = nalgebra::linalg::LU::new(normal);
    let mut coefs: Vec<f64> = lu
        .solve(&rhs)
        .ok_or_else(|| Error::DegenerateDesign("weighted polynomial projection".into()))?
        .iter()
        .copied()
        .collect();
    // Centering: the weighted mean of the fitted polynomial is zero because
    // the design holds an intercept; remove residual round-off directly.
    let fit_mean: f64 = (0..k)
        .map(|i| probs[i] * eval_poly(&coefs, levels[i]))
        .sum();
    coefs[0] -= fit_mean;
    Ok(coefs)
}

pub fn eval_poly(coefs: &[f64], x: f64) -> f64 {
    coefs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// One tested predictor under the alternative: its level values, marginal
/// probabilities and the alternative component evaluated on the levels.
#[derive(Debug, Clone)]
pub struct AlternativeComponent {
    pub levels: Vec<f64>,
    pub probs: Vec<f64>,
    pub m_star: Vec<f64>,
    pub constraint: Constraint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerMode {
    /// Shifted mixture: P(delta^2 + sum lambda_i V_i^2 > null critical value).
    GeneralMixture,
    /// Noncentral chi-square with the independence degrees of freedom.
    IndependenceApprox,
}

/// Asymptotic power of the level-alpha test against the given alternative.
///
/// `sample_size = Some(n)` treats m_star as a fixed alternative and scales
/// the shift by n, matching the n^(-1/2) local-alternative parametrization;
/// None takes m_star as already on the local scale. `sigma2` is the error
/// variance.
pub fn theoretical_power(
    components: &[AlternativeComponent],
    eigenvalues: &[f64],
    alpha: f64,
    mode: PowerMode,
    sample_size: Option<usize>,
    sigma2: f64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Argument(format!("alpha must be in (0,1), got {alpha}")));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::Argument("sigma2 must be positive".into()));
    }
    let mut shift = 0.0;
    for comp in components {
        let k = comp.levels.len();
        if comp.probs.len() != k || comp.m_star.len() != k {
            return Err(Error::Argument(
                "alternative component lengths mismatch".into(),
            ));
        }
        let wmean: f64 = (0..k).map(|i| comp.probs[i] * comp.m_star[i]).sum();
        let centered: Vec<f64> = comp.m_star.iter().map(|v| v - wmean).collect();
        let m_prime: Vec<f64> = match comp.constraint {
            Constraint::Zero => centered,
            Constraint::Poly(r) => {
                let coefs =
                    best_poly_projection(&comp.levels, &comp.m_star, &comp.probs, r)?;
                comp.levels.iter().map(|&x| eval_poly(&coefs, x)).collect()
            }
        };
        shift += (0..k)
            .map(|i| comp.probs[i] * m_prime[i] * m_prime[i])
            .sum::<f64>();
    }
    let scale = sample_size.map(|n| n as f64).unwrap_or(1.0);
    let delta2 = shift * scale / sigma2;

    match mode {
        PowerMode::GeneralMixture => {
            let mixture = ChiSquareMixture::new(eigenvalues.to_vec())?;
            let crit = mixture.quantile(1.0 - alpha)?;
            let shifted = ChiSquareMixture::with_shift(eigenvalues.to_vec(), delta2)?;
            Ok(shifted.survival(crit).clamp(0.0, 1.0))
        }
        PowerMode::IndependenceApprox => {
            let blocks: Vec<(Constraint, usize)> = components
                .iter()
                .map(|c| (c.constraint, c.levels.len()))
                .collect();
            let df = indep_df_from_blocks(&blocks) as f64;
            let crit = chi2_quantile(df, 1.0 - alpha)?;
            Ok((1.0 - noncentral_chi2_cdf(df, delta2, crit)?).clamp(0.0, 1.0))
        }
    }
}

/// Convergence metadata of the two fits behind a test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub rss: f64,
}

impl From<&AdditiveFit> for FitDiagnostics {
    fn from(fit: &AdditiveFit) -> Self {
        FitDiagnostics {
            converged: fit.converged,
            iterations: fit.iterations,
            rss: fit.rss,
        }
    }
}

/// Full result of one GLR test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlrResult {
    pub n: usize,
    pub lambda_n: f64,
    pub rss0: f64,
    pub rss1: f64,
    /// Nonzero eigenvalues of Sigma1 Sigma2 Sigma1 (descending).
    pub eigenvalues: Vec<f64>,
    /// Rank of the product, i.e. the mixture length.
    pub s: usize,
    /// Exact-mixture p-value.
    pub p_value: f64,
    /// Independence-approximation p-value (central chi-square tail).
    pub p_value_indep: f64,
    pub df_indep: usize,
    pub accuracy: Accuracy,
    pub constrained: FitDiagnostics,
    pub unconstrained: FitDiagnostics,
}

/// Run the whole pipeline: constrained/unconstrained fits, statistic, Sigma
/// construction, eigenvalues and both p-values.
pub fn run_test(
    ds: &Dataset,
    spec: &ModelSpec,
    hypothesis: &HypothesisSpec,
    options: &FitOptions,
) -> Result<GlrResult> {
    let (fit0, fit1) = rss_under_hypothesis(ds, spec, hypothesis, options)?;
    if hypothesis.is_empty() {
        return Ok(GlrResult {
            n: ds.n,
            lambda_n: 0.0,
            rss0: fit0.rss,
            rss1: fit1.rss,
            eigenvalues: Vec::new(),
            s: 0,
            p_value: 1.0,
            p_value_indep: 1.0,
            df_indep: 0,
            accuracy: Accuracy {
                bound: 0.0,
                degraded: false,
            },
            constrained: (&fit0).into(),
            unconstrained: (&fit1).into(),
        });
    }
    let lambda = glr_statistic(fit0.rss, fit1.rss, ds.n)?;
    let pair = build_sigma_pair(ds, hypothesis)?;
    let (eigenvalues, s) = null_eigenvalues(&pair);
    let (p, accuracy) = p_value(lambda, &eigenvalues)?;
    let df = indep_df(ds, hypothesis)?;
    let p_indep = chi2_survival(df as f64, lambda).clamp(0.0, 1.0);
    Ok(GlrResult {
        n: ds.n,
        lambda_n: lambda,
        rss0: fit0.rss,
        rss1: fit1.rss,
        eigenvalues,
        s,
        p_value: p,
        p_value_indep: p_indep,
        df_indep: df,
        accuracy,
        constrained: (&fit0).into(),
        unconstrained: (&fit1).into(),
    })
}
