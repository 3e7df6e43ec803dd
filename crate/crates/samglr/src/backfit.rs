//! Cyclic Gauss-Seidel backfitting for additive and semiparametric additive
//! models.
//!
//! Nonparametric components are updated against their partial residuals with
//! centered smoothers; parametric polynomial components are updated jointly
//! by one least-squares solve on the combined design [1 | basis_1 | ...].
//! Every component is re-centered after every update, which keeps the fitted
//! intercept equal to the response mean throughout.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{center, poly_design, ColumnData, Dataset, Role};
use crate::error::{Error, Result};
use crate::glr::{Constraint, HypothesisSpec};
use crate::smooth::{default_bandwidth, BinSmoother, Kernel, LocalPolySmoother, SmootherOp};

/// How one variable enters the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Treatment {
    /// Group-mean smoother over observed levels (discrete/categorical).
    Bin,
    /// Local-polynomial kernel smoother (continuous).
    LocalPoly {
        degree: usize,
        /// Rule-of-thumb default when absent.
        bandwidth: Option<f64>,
        kernel: Kernel,
    },
    /// Polynomial of the given degree in the coded values (or raw values for
    /// continuous variables), with the centering constant recovered after
    /// the fit.
    Poly { degree: usize },
    /// Not part of the model.
    Excluded,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelComponent {
    pub variable: String,
    pub treatment: Treatment,
}

/// Ordered component list; the response is taken from the dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub components: Vec<ModelComponent>,
}

impl ModelSpec {
    /// Default model: every regressor enters nonparametrically unless the
    /// schema declared a parametric degree; continuous covariates get a
    /// local-polynomial smoother of the declared degree.
    pub fn from_dataset(ds: &Dataset) -> ModelSpec {
        let components = ds
            .variables()
            .iter()
            .map(|v| {
                let treatment = match (&v.data, v.spec.param_degree) {
                    (_, Some(r)) => Treatment::Poly { degree: r },
                    (ColumnData::Coded(_), None) => Treatment::Bin,
                    (ColumnData::Continuous(_), None) => Treatment::LocalPoly {
                        degree: v.spec.smoother_degree.unwrap_or(0),
                        bandwidth: v.spec.bandwidth,
                        kernel: Kernel::Gaussian,
                    },
                };
                ModelComponent {
                    variable: v.spec.name.clone(),
                    treatment,
                }
            })
            .collect();
        ModelSpec { components }
    }

    pub fn component(&self, name: &str) -> Option<&ModelComponent> {
        self.components.iter().find(|c| c.variable == name)
    }

    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.components {
            if !seen.insert(&c.variable) {
                return Err(Error::Argument(format!(
                    "variable '{}' appears twice in the model",
                    c.variable
                )));
            }
            let v = ds.require(&c.variable)?;
            if v.spec.role == Role::Response {
                return Err(Error::Argument(format!(
                    "response '{}' cannot be a model component",
                    c.variable
                )));
            }
            match &c.treatment {
                Treatment::Bin => {
                    if v.coded().is_none() {
                        return Err(Error::Argument(format!(
                            "bin treatment requires a discrete/categorical variable ('{}')",
                            c.variable
                        )));
                    }
                }
                Treatment::LocalPoly { bandwidth, .. } => {
                    if v.continuous().is_none() {
                        return Err(Error::Argument(format!(
                            "local-polynomial treatment requires a continuous variable ('{}')",
                            c.variable
                        )));
                    }
                    if let Some(h) = bandwidth {
                        if !(*h > 0.0) {
                            return Err(Error::Argument(format!(
                                "bandwidth for '{}' must be positive",
                                c.variable
                            )));
                        }
                    }
                }
                Treatment::Poly { degree } => {
                    if *degree < 1 {
                        return Err(Error::Argument(format!(
                            "polynomial degree for '{}' must be at least 1",
                            c.variable
                        )));
                    }
                    if let Some(coded) = v.coded() {
                        let k = coded.stats.k();
                        let max = if v.spec.role == Role::Predictor {
                            // Testable parametric predictors need r < k - 1.
                            k.saturating_sub(2)
                        } else {
                            k.saturating_sub(1)
                        };
                        if *degree > max {
                            return Err(Error::Argument(format!(
                                "polynomial degree {degree} is too high for '{}' with {k} levels",
                                c.variable
                            )));
                        }
                    }
                }
                Treatment::Excluded => {}
            }
        }
        Ok(())
    }
}

/// Stopping rule for the Gauss-Seidel sweeps: largest absolute component
/// change in a sweep, relative to the response standard deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Record the RSS after every component update (test instrumentation).
    pub track_rss: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: 1e-8,
            max_iter: 100,
            track_rss: false,
        }
    }
}

/// One fitted additive component.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedComponent {
    pub variable: String,
    pub treatment: Treatment,
    /// Centered fitted values at the observations.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub values: Vec<f64>,
    /// Per-level estimates for discrete/categorical components.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub level_estimates: Option<Vec<f64>>,
    /// [alpha_p, theta_1, ..., theta_r] for parametric components.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub poly_coefficients: Option<Vec<f64>>,
    /// Bandwidth actually used by a local-polynomial component.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bandwidth_used: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdditiveFit {
    /// Intercept estimate, the response mean.
    pub alpha_hat: f64,
    pub components: Vec<FittedComponent>,
    /// Parametric coefficient stack (alpha*, theta_1^T, ...); empty when the
    /// model has no parametric components.
    pub theta: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub max_delta: f64,
    /// RSS after each component update, when requested.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rss_trace: Option<Vec<f64>>,
}

impl AdditiveFit {
    pub fn component(&self, name: &str) -> Option<&FittedComponent> {
        self.components.iter().find(|c| c.variable == name)
    }
}

struct ParaBlock {
    comp_idx: usize,
    basis: DMatrix<f64>,
    degree: usize,
}

struct SmoothBlock {
    comp_idx: usize,
    op: SmootherOp,
    bandwidth_used: Option<f64>,
}

fn response_sd(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Fit the additive model by cyclic backfitting.
///
/// Parametric components are updated first (jointly), then each smoother in
/// declaration order. A fit that has not met the tolerance within `max_iter`
/// sweeps is returned with `converged = false` rather than an error.
pub fn backfit(ds: &Dataset, spec: &ModelSpec, opt: &FitOptions) -> Result<AdditiveFit> {
    spec.validate(ds)?;
    let n = ds.n;
    let (y_star, alpha_hat) = center(&ds.response);
    let sd_y = response_sd(&ds.response);
    let scale = if sd_y > 0.0 { sd_y } else { 1.0 };

    // Resolve blocks; `fitted` tracks the components actually in the model.
    let mut fitted_vars: Vec<(String, Treatment)> = Vec::new();
    let mut para_blocks: Vec<ParaBlock> = Vec::new();
    let mut smooth_blocks: Vec<SmoothBlock> = Vec::new();
    for comp in &spec.components {
        match &comp.treatment {
            Treatment::Excluded => continue,
            Treatment::Bin => {
                let coded = ds.require(&comp.variable)?.coded().unwrap();
                let comp_idx = fitted_vars.len();
                fitted_vars.push((comp.variable.clone(), comp.treatment.clone()));
                smooth_blocks.push(SmoothBlock {
                    comp_idx,
                    op: SmootherOp::Bin(BinSmoother::new(&coded.codes, coded.stats.k())),
                    bandwidth_used: None,
                });
            }
            Treatment::LocalPoly {
                degree,
                bandwidth,
                kernel,
            } => {
                let z = ds.require(&comp.variable)?.continuous().unwrap();
                let h = match bandwidth {
                    Some(h) => *h,
                    None => default_bandwidth(z)?,
                };
                let comp_idx = fitted_vars.len();
                fitted_vars.push((comp.variable.clone(), comp.treatment.clone()));
                smooth_blocks.push(SmoothBlock {
                    comp_idx,
                    op: SmootherOp::LocalPoly(LocalPolySmoother::new(
                        z.to_vec(),
                        *degree,
                        h,
                        *kernel,
                    )?),
                    bandwidth_used: Some(h),
                });
            }
            Treatment::Poly { degree } => {
                let v = ds.require(&comp.variable)?;
                let values = match &v.data {
                    ColumnData::Coded(_) => ds.poly_values(&comp.variable)?,
                    ColumnData::Continuous(z) => z.clone(),
                };
                let basis = poly_design(&values, 1, *degree)?;
                let comp_idx = fitted_vars.len();
                fitted_vars.push((comp.variable.clone(), comp.treatment.clone()));
                para_blocks.push(ParaBlock {
                    comp_idx,
                    basis,
                    degree: *degree,
                });
            }
        }
    }

    // Joint parametric design [1 | B_1 | ... ], factored once.
    let para_qr = if para_blocks.is_empty() {
        None
    } else {
        let p_cols = 1 + para_blocks.iter().map(|b| b.degree).sum::<usize>();
        let mut design = DMatrix::zeros(n, p_cols);
        design.column_mut(0).fill(1.0);
        let mut col = 1;
        for b in &para_blocks {
            design
                .view_mut((0, col), (n, b.degree))
                .copy_from(&b.basis);
            col += b.degree;
        }
        let qr = nalgebra::linalg::QR::new(design);
        let r = qr.r();
        let r_max = (0..p_cols).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
        for j in 0..p_cols {
            if r[(j, j)].abs() <= 1e-10 * r_max.max(1.0) {
                return Err(Error::DegenerateDesign(
                    "parametric polynomial design".into(),
                ));
            }
        }
        Some(qr)
    };

    let n_comp = fitted_vars.len();
    let mut m: Vec<Vec<f64>> = vec![vec![0.0; n]; n_comp];
    let mut total = vec![0.0; n];
    let mut theta_blocks: Vec<Vec<f64>> = vec![Vec::new(); para_blocks.len()];
    let mut alpha_blocks: Vec<f64> = vec![0.0; para_blocks.len()];
    let mut rss_trace: Option<Vec<f64>> = if opt.track_rss {
        Some(Vec::new())
    } else {
        None
    };

    let mut iterations = 0;
    let mut converged = n_comp == 0;
    let mut max_delta = 0.0;
    while iterations < opt.max_iter && !converged {
        iterations += 1;
        max_delta = 0.0;

        if let Some(qr) = &para_qr {
            // Joint update of all parametric components.
            let mut partial = DVector::from_iterator(
                n,
                (0..n).map(|i| {
                    let para_part: f64 = para_blocks.iter().map(|b| m[b.comp_idx][i]).sum();
                    y_star[i] - total[i] + para_part
                }),
            );
            qr.q_tr_mul(&mut partial);
            let p_cols = qr.r().ncols();
            let coefs = qr
                .r()
                .solve_upper_triangular(&partial.rows(0, p_cols).clone_owned())
                .ok_or_else(|| Error::DegenerateDesign("parametric polynomial design".into()))?;
            let mut col = 1;
            for (bi, b) in para_blocks.iter().enumerate() {
                let th: Vec<f64> = (0..b.degree).map(|j| coefs[col + j]).collect();
                col += b.degree;
                let mut values: Vec<f64> = (0..n)
                    .map(|i| {
                        (0..b.degree)
                            .map(|j| b.basis[(i, j)] * th[j])
                            .sum::<f64>()
                    })
                    .collect();
                let mean = values.iter().sum::<f64>() / n as f64;
                for v in &mut values {
                    *v -= mean;
                }
                for i in 0..n {
                    let d = (values[i] - m[b.comp_idx][i]).abs();
                    if d > max_delta {
                        max_delta = d;
                    }
                    total[i] += values[i] - m[b.comp_idx][i];
                }
                m[b.comp_idx] = values;
                theta_blocks[bi] = th;
                alpha_blocks[bi] = -mean;
            }
            if let Some(trace) = &mut rss_trace {
                trace.push(sum_sq(
                    &(0..n).map(|i| y_star[i] - total[i]).collect::<Vec<_>>(),
                ));
            }
        }

        for blk in &smooth_blocks {
            let partial: Vec<f64> = (0..n)
                .map(|i| y_star[i] - total[i] + m[blk.comp_idx][i])
                .collect();
            let new_m = blk.op.apply_centered(&partial)?;
            for i in 0..n {
                let d = (new_m[i] - m[blk.comp_idx][i]).abs();
                if d > max_delta {
                    max_delta = d;
                }
                total[i] += new_m[i] - m[blk.comp_idx][i];
            }
            m[blk.comp_idx] = new_m;
            if let Some(trace) = &mut rss_trace {
                trace.push(sum_sq(
                    &(0..n).map(|i| y_star[i] - total[i]).collect::<Vec<_>>(),
                ));
            }
        }

        if max_delta <= opt.tol * scale {
            converged = true;
        }
    }

    let residuals: Vec<f64> = (0..n).map(|i| y_star[i] - total[i]).collect();
    let rss = sum_sq(&residuals);

    // Assemble component records.
    let mut components = Vec::with_capacity(n_comp);
    for (ci, (name, treatment)) in fitted_vars.iter().enumerate() {
        let mut fc = FittedComponent {
            variable: name.clone(),
            treatment: treatment.clone(),
            values: m[ci].clone(),
            level_estimates: None,
            poly_coefficients: None,
            bandwidth_used: None,
        };
        if let Some(coded) = ds.require(name)?.coded() {
            let bin = BinSmoother::new(&coded.codes, coded.stats.k());
            fc.level_estimates = Some(bin.level_means(&m[ci]));
        }
        components.push(fc);
    }
    for (bi, b) in para_blocks.iter().enumerate() {
        let mut coefs = vec![alpha_blocks[bi]];
        coefs.extend_from_slice(&theta_blocks[bi]);
        components[b.comp_idx].poly_coefficients = Some(coefs);
    }
    for blk in &smooth_blocks {
        components[blk.comp_idx].bandwidth_used = blk.bandwidth_used;
    }

    let theta = if para_blocks.is_empty() {
        Vec::new()
    } else {
        let mut t = vec![alpha_blocks.iter().sum::<f64>()];
        for th in &theta_blocks {
            t.extend_from_slice(th);
        }
        t
    };

    Ok(AdditiveFit {
        alpha_hat,
        components,
        theta,
        residuals,
        rss,
        iterations,
        converged,
        max_delta,
        rss_trace,
    })
}

/// Guard for the dense-operator path below; it materializes n x n smoother
/// matrices and exists to cross-check the iterative solver.
const DIRECT_SOLVE_MAX_N: usize = 2000;

/// Non-iterative semiparametric coefficient solve
/// theta = (X*^T (I - W) X*)^(-1) X*^T (I - W) Y*,
/// where W is the additive smoother operator of the covariate-only model.
///
/// All parametric components are stacked into X* (intercept first); every
/// other component must be a smoother. Intended as a small-n cross-check of
/// the iterative path.
pub fn semiparam_theta_direct(ds: &Dataset, spec: &ModelSpec) -> Result<Vec<f64>> {
    spec.validate(ds)?;
    let n = ds.n;
    if n > DIRECT_SOLVE_MAX_N {
        return Err(Error::Argument(format!(
            "direct solve materializes n x n operators; n = {n} exceeds {DIRECT_SOLVE_MAX_N}"
        )));
    }

    let mut bases: Vec<DMatrix<f64>> = Vec::new();
    let mut smoothers: Vec<SmootherOp> = Vec::new();
    for comp in &spec.components {
        match &comp.treatment {
            Treatment::Excluded => {}
            Treatment::Poly { degree } => {
                let v = ds.require(&comp.variable)?;
                let values = match &v.data {
                    ColumnData::Coded(_) => ds.poly_values(&comp.variable)?,
                    ColumnData::Continuous(z) => z.clone(),
                };
                bases.push(poly_design(&values, 1, *degree)?);
            }
            Treatment::Bin => {
                let coded = ds.require(&comp.variable)?.coded().unwrap();
                smoothers.push(SmootherOp::Bin(BinSmoother::new(
                    &coded.codes,
                    coded.stats.k(),
                )));
            }
            Treatment::LocalPoly {
                degree,
                bandwidth,
                kernel,
            } => {
                let z = ds.require(&comp.variable)?.continuous().unwrap();
                let h = match bandwidth {
                    Some(h) => *h,
                    None => default_bandwidth(z)?,
                };
                smoothers.push(SmootherOp::LocalPoly(LocalPolySmoother::new(
                    z.to_vec(),
                    *degree,
                    h,
                    *kernel,
                )?));
            }
        }
    }
    if bases.is_empty() {
        return Err(Error::Argument(
            "direct solve needs at least one parametric component".into(),
        ));
    }

    let p_cols = 1 + bases.iter().map(|b| b.ncols()).sum::<usize>();
    let mut x_star = DMatrix::zeros(n, p_cols);
    x_star.column_mut(0).fill(1.0);
    let mut col = 1;
    for b in &bases {
        x_star.view_mut((0, col), (n, b.ncols())).copy_from(b);
        col += b.ncols();
    }

    let w = additive_smoother_operator(&smoothers, n)?;
    let (y_star, _) = center(&ds.response);
    let y = DVector::from_vec(y_star);

    let i_minus_w = DMatrix::identity(n, n) - &w;
    let xtw = x_star.transpose() * &i_minus_w;
    let lhs = &xtw * &x_star;
    let rhs = &xtw * y;
    let lu = nalgebra::linalg::LU::new(lhs);
    let theta = lu
        .solve(&rhs)
        .ok_or_else(|| Error::DegenerateDesign("semiparametric normal matrix".into()))?;
    Ok(theta.iter().copied().collect())
}

/// Dense additive smoother operator W = sum_q W_q for the given smoothers,
/// from the stacked normal equations of the covariate-only system.
fn additive_smoother_operator(smoothers: &[SmootherOp], n: usize) -> Result<DMatrix<f64>> {
    let q_count = smoothers.len();
    if q_count == 0 {
        return Ok(DMatrix::zeros(n, n));
    }
    // Columns of each centered smoother matrix via unit-vector applies.
    let mut s_mats = Vec::with_capacity(q_count);
    for op in smoothers {
        let mut s = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = op.apply_centered(&e)?;
            e[j] = 0.0;
            for i in 0..n {
                s[(i, j)] = col[i];
            }
        }
        s_mats.push(s);
    }
    if q_count == 1 {
        return Ok(s_mats.into_iter().next().unwrap());
    }
    let dim = q_count * n;
    let mut m = DMatrix::identity(dim, dim);
    let mut c = DMatrix::zeros(dim, n);
    for (qi, s) in s_mats.iter().enumerate() {
        for (qj, _) in s_mats.iter().enumerate() {
            if qi != qj {
                m.view_mut((qi * n, qj * n), (n, n)).copy_from(s);
            }
        }
        c.view_mut((qi * n, 0), (n, n)).copy_from(s);
    }
    let lu = nalgebra::linalg::LU::new(m);
    let x = lu
        .solve(&c)
        .ok_or_else(|| Error::DegenerateDesign("covariate smoother system".into()))?;
    let mut w = DMatrix::zeros(n, n);
    for qi in 0..q_count {
        w += x.view((qi * n, 0), (n, n));
    }
    Ok(w)
}

/// Fit the constrained and unconstrained models of a hypothesis.
///
/// Covariates keep the treatment given in `spec` in both fits. Tested
/// predictors enter the unconstrained fit as bin smoothers; in the
/// constrained fit a zero constraint removes the component and a polynomial
/// constraint makes it parametric of the stated degree.
pub fn rss_under_hypothesis(
    ds: &Dataset,
    spec: &ModelSpec,
    hypothesis: &HypothesisSpec,
    opt: &FitOptions,
) -> Result<(AdditiveFit, AdditiveFit)> {
    hypothesis.validate(ds)?;
    let mut spec0 = spec.clone();
    let mut spec1 = spec.clone();
    for (name, constraint) in &hypothesis.constraints {
        let pos = spec
            .components
            .iter()
            .position(|c| &c.variable == name)
            .ok_or_else(|| {
                Error::Argument(format!("tested variable '{name}' is not in the model"))
            })?;
        spec1.components[pos].treatment = Treatment::Bin;
        spec0.components[pos].treatment = match constraint {
            Constraint::Zero => Treatment::Excluded,
            Constraint::Poly(r) => Treatment::Poly { degree: *r },
        };
    }
    let fit0 = backfit(ds, &spec0, opt)?;
    let fit1 = backfit(ds, &spec1, opt)?;
    Ok((fit0, fit1))
}

/// Partial effect of one fitted component.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum PartialEffect {
    Discrete {
        levels: Vec<String>,
        estimates: Vec<f64>,
        /// (code, partial residual) per observation, for box-plot style output.
        observations: Vec<(usize, f64)>,
    },
    Continuous {
        /// (z_i, partial residual) per observation.
        points: Vec<(f64, f64)>,
        fitted: Vec<f64>,
    },
}

/// Partial residuals (residual + fitted component) for one component.
pub fn partial_effect_table(
    ds: &Dataset,
    fit: &AdditiveFit,
    variable: &str,
) -> Result<PartialEffect> {
    if !fit.converged {
        return Err(Error::Argument(
            "partial effects require a converged fit".into(),
        ));
    }
    let comp = fit
        .component(variable)
        .ok_or_else(|| Error::Argument(format!("unknown component '{variable}'")))?;
    let partial: Vec<f64> = fit
        .residuals
        .iter()
        .zip(&comp.values)
        .map(|(r, m)| r + m)
        .collect();
    let var = ds.require(variable)?;
    match &var.data {
        ColumnData::Coded(coded) => Ok(PartialEffect::Discrete {
            levels: coded.labels.clone(),
            estimates: comp
                .level_estimates
                .clone()
                .unwrap_or_else(|| vec![0.0; coded.stats.k()]),
            observations: coded.codes.iter().copied().zip(partial).collect(),
        }),
        ColumnData::Continuous(z) => Ok(PartialEffect::Continuous {
            points: z.iter().copied().zip(partial).collect(),
            fitted: comp.values.clone(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Schema;

    fn toy_dataset() -> Dataset {
        let schema = Schema::from_json_str(
            r#"{"columns": {
                "y": {"role": "response", "kind": "continuous"},
                "x": {"role": "predictor", "kind": "discrete"}
            }}"#,
        )
        .unwrap();
        Dataset::from_csv_reader("x,y\n0,1\n0,2\n1,3\n1,5\n".as_bytes(), &schema).unwrap()
    }

    #[test]
    fn toy_single_bin_component() {
        let ds = toy_dataset();
        let spec = ModelSpec::from_dataset(&ds);
        let fit = backfit(&ds, &spec, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.alpha_hat - 2.75).abs() < 1e-12);
        let levels = fit.components[0].level_estimates.as_ref().unwrap();
        assert!((levels[0] + 1.25).abs() < 1e-12);
        assert!((levels[1] - 1.25).abs() < 1e-12);
        assert!((fit.rss - 2.5).abs() < 1e-12);
    }

    #[test]
    fn constant_response_gives_zero_components() {
        let schema = Schema::from_json_str(
            r#"{"columns": {
                "y": {"role": "response", "kind": "continuous"},
                "x": {"role": "predictor", "kind": "discrete"}
            }}"#,
        )
        .unwrap();
        let ds =
            Dataset::from_csv_reader("x,y\n0,4\n1,4\n0,4\n1,4\n".as_bytes(), &schema).unwrap();
        let fit = backfit(&ds, &ModelSpec::from_dataset(&ds), &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.rss.abs() < 1e-20);
        assert!(fit.components[0].values.iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn components_are_centered() {
        let schema = Schema::from_json_str(
            r#"{"columns": {
                "y": {"role": "response", "kind": "continuous"},
                "x1": {"role": "predictor", "kind": "discrete"},
                "x2": {"role": "predictor", "kind": "discrete"}
            }}"#,
        )
        .unwrap();
        let csv = "x1,x2,y\n0,0,1\n0,1,4\n1,0,2\n1,1,9\n2,0,3\n2,1,7\n";
        let ds = Dataset::from_csv_reader(csv.as_bytes(), &schema).unwrap();
        let fit = backfit(&ds, &ModelSpec::from_dataset(&ds), &FitOptions::default()).unwrap();
        let max_y = ds.response.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for c in &fit.components {
            let mean = c.values.iter().sum::<f64>() / c.values.len() as f64;
            assert!(mean.abs() < 1e-10 * max_y);
        }
        // Residual identity.
        for i in 0..ds.n {
            let sum: f64 = fit.components.iter().map(|c| c.values[i]).sum();
            let expect = ds.response[i] - fit.alpha_hat - sum;
            assert!((fit.residuals[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn balanced_two_way_matches_least_squares_oracle() {
        // Balanced one-hot design: backfitting equals the main-effects
        // least-squares fit computed directly on the dummy design.
        let schema = Schema::from_json_str(
            r#"{"columns": {
                "y": {"role": "response", "kind": "continuous"},
                "a": {"role": "predictor", "kind": "discrete"},
                "b": {"role": "predictor", "kind": "discrete"}
            }}"#,
        )
        .unwrap();
        let csv = "a,b,y\n0,0,1.0\n0,1,2.5\n1,0,1.5\n1,1,4.0\n0,0,0.5\n0,1,3.0\n1,0,2.0\n1,1,3.5\n";
        let ds = Dataset::from_csv_reader(csv.as_bytes(), &schema).unwrap();
        let fit = backfit(
            &ds,
            &ModelSpec::from_dataset(&ds),
            &FitOptions {
                tol: 1e-12,
                ..Default::default()
            },
        )
        .unwrap();

        // Oracle: OLS on [1, 1{a=1}, 1{b=1}].
        let a = ds.variable("a").unwrap().coded().unwrap();
        let b = ds.variable("b").unwrap().coded().unwrap();
        let x = DMatrix::from_fn(ds.n, 3, |i, j| match j {
            0 => 1.0,
            1 => a.codes[i] as f64,
            _ => b.codes[i] as f64,
        });
        let y = DVector::from_vec(ds.response.clone());
        let beta = nalgebra::linalg::LU::new(x.transpose() * &x)
            .solve(&(x.transpose() * &y))
            .unwrap();
        let fitted_ols = x * beta;
        for i in 0..ds.n {
            let fitted_bf: f64 =
                fit.alpha_hat + fit.components.iter().map(|c| c.values[i]).sum::<f64>();
            assert!((fitted_bf - fitted_ols[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn monotone_rss_over_updates() {
        let schema = Schema::from_json_str(
            r#"{"columns": {
                "y": {"role": "response", "kind": "continuous"},
                "x1": {"role": "predictor", "kind": "discrete"},
                "x2": {"role": "predictor", "kind": "discrete"}
            }}"#,
        )
        .unwrap();
        let mut csv = String::from("x1,x2,y\n");
        let mut state = 9u64;
        for i in 0..60 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let x1 = i % 3;
            let x2 = (state >> 33) % 4;
            let y = x1 as f64 - 0.5 * x2 as f64 + ((state >> 11) % 1000) as f64 / 500.0;
            csv.push_str(&format!("{x1},{x2},{y}\n"));
        }
        let ds = Dataset::from_csv_reader(csv.as_bytes(), &schema).unwrap();
        let fit = backfit(
            &ds,
            &ModelSpec::from_dataset(&ds),
            &FitOptions {
                track_rss: true,
                ..Default::default()
            },
        )
        .unwrap();
        let trace = fit.rss_trace.unwrap();
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].max(1.0), "RSS increased: {w:?}");
        }
    }

    #[test]
    fn update_order_does_not_change_converged_fit() {
        let schema = Schema::from_json_str(
            r#"{"columns": {
                "y": {"role": "response", "kind": "continuous"},
                "x1": {"role": "predictor", "kind": "discrete"},
                "x2": {"role": "predictor", "kind": "discrete"}
            }}"#,
        )
        .unwrap();
        let mut csv = String::from("x1,x2,y\n");
        let mut state = 77u64;
        for i in 0..50 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let x1 = i % 3;
            let x2 = (state >> 33) % 3;
            let y = (x1 as f64).powi(2) + x2 as f64 + ((state >> 9) % 100) as f64 / 50.0;
            csv.push_str(&format!("{x1},{x2},{y}\n"));
        }
        let ds = Dataset::from_csv_reader(csv.as_bytes(), &schema).unwrap();
        let opt = FitOptions {
            tol: 1e-12,
            max_iter: 500,
            track_rss: false,
        };
        let spec_a = ModelSpec::from_dataset(&ds);
        let spec_b = ModelSpec {
            components: spec_a.components.iter().rev().cloned().collect(),
        };
        let fit_a = backfit(&ds, &spec_a, &opt).unwrap();
        let fit_b = backfit(&ds, &spec_b, &opt).unwrap();
        for c in &fit_a.components {
            let other = fit_b.component(&c.variable).unwrap();
            for (u, v) in c.values.iter().zip(&other.values) {
                assert!((u - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn theta_direct_without_covariates_is_ols() {
        // With no smoothers, W = 0 and the formula collapses to OLS of Y* on X*.
        let schema = Schema::from_json_str(
            r#"{"columns": {
                "y": {"role": "response", "kind": "continuous"},
                "x": {"role": "predictor", "kind": "discrete"}
            }}"#,
        )
        .unwrap();
        let csv = "x,y\n0,1\n1,2\n2,2.5\n0,0.5\n1,2.2\n2,3.1\n";
        let ds = Dataset::from_csv_reader(csv.as_bytes(), &schema).unwrap();
        let spec = ModelSpec {
            components: vec![ModelComponent {
                variable: "x".into(),
                treatment: Treatment::Poly { degree: 1 },
            }],
        };
        let theta = semiparam_theta_direct(&ds, &spec).unwrap();

        let x = DMatrix::from_fn(ds.n, 2, |i, j| {
            let code = ds.variable("x").unwrap().coded().unwrap().codes[i] as f64;
            if j == 0 {
                1.0
            } else {
                code
            }
        });
        let (y_star, _) = center(&ds.response);
        let y = DVector::from_vec(y_star);
        let beta = nalgebra::linalg::LU::new(x.transpose() * &x)
            .solve(&(x.transpose() * &y))
            .unwrap();
        for (t, b) in theta.iter().zip(beta.iter()) {
            assert!((t - b).abs() < 1e-10);
        }
    }

    #[test]
    fn theta_direct_matches_iterated_backfit() {
        let schema = Schema::from_json_str(
            r#"{"columns": {
                "y": {"role": "response", "kind": "continuous"},
                "x": {"role": "predictor", "kind": "discrete"},
                "z": {"role": "covariate", "kind": "continuous"}
            }}"#,
        )
        .unwrap();
        let mut csv = String::from("x,z,y\n");
        let mut state = 5u64;
        for i in 0..50 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let x = i % 3;
            let z = ((state >> 33) % 1000) as f64 / 1000.0;
            let noise = (((state >> 13) % 1000) as f64 / 1000.0 - 0.5) * 0.4;
            let y = 0.8 * x as f64 + (std::f64::consts::PI * z).sin() + noise;
            csv.push_str(&format!("{x},{z},{y}\n"));
        }
        let ds = Dataset::from_csv_reader(csv.as_bytes(), &schema).unwrap();
        let spec = ModelSpec {
            components: vec![
                ModelComponent {
                    variable: "x".into(),
                    treatment: Treatment::Poly { degree: 1 },
                },
                ModelComponent {
                    variable: "z".into(),
                    treatment: Treatment::LocalPoly {
                        degree: 1,
                        bandwidth: None,
                        kernel: Kernel::Gaussian,
                    },
                },
            ],
        };
        let direct = semiparam_theta_direct(&ds, &spec).unwrap();
        let fit = backfit(
            &ds,
            &spec,
            &FitOptions {
                tol: 1e-12,
                max_iter: 1000,
                track_rss: false,
            },
        )
        .unwrap();
        assert!(fit.converged);
        assert_eq!(direct.len(), fit.theta.len());
        for (d, t) in direct.iter().zip(&fit.theta) {
            assert!((d - t).abs() < 1e-6, "direct {d} vs iterated {t}");
        }
    }

    #[test]
    fn hypothesis_split_toy() {
        let ds = toy_dataset();
        let spec = ModelSpec::from_dataset(&ds);
        let hyp = HypothesisSpec {
            constraints: vec![("x".into(), Constraint::Zero)],
        };
        let (fit0, fit1) =
            rss_under_hypothesis(&ds, &spec, &hyp, &FitOptions::default()).unwrap();
        assert!((fit0.rss - 8.75).abs() < 1e-12);
        assert!((fit1.rss - 2.5).abs() < 1e-12);
    }

    #[test]
    fn empty_hypothesis_gives_equal_rss() {
        let ds = toy_dataset();
        let spec = ModelSpec::from_dataset(&ds);
        let hyp = HypothesisSpec {
            constraints: vec![],
        };
        let (fit0, fit1) =
            rss_under_hypothesis(&ds, &spec, &hyp, &FitOptions::default()).unwrap();
        assert_eq!(fit0.rss, fit1.rss);
    }

    #[test]
    fn saturated_poly_constraint_rejected() {
        let ds = toy_dataset(); // k = 2, so any poly degree is saturated
        let spec = ModelSpec::from_dataset(&ds);
        let hyp = HypothesisSpec {
            constraints: vec![("x".into(), Constraint::Poly(1))],
        };
        assert!(rss_under_hypothesis(&ds, &spec, &hyp, &FitOptions::default()).is_err());
    }

    #[test]
    fn partial_effect_toy_table() {
        let ds = toy_dataset();
        let spec = ModelSpec::from_dataset(&ds);
        let fit = backfit(&ds, &spec, &FitOptions::default()).unwrap();
        match partial_effect_table(&ds, &fit, "x").unwrap() {
            PartialEffect::Discrete {
                levels, estimates, ..
            } => {
                assert_eq!(levels, vec!["0", "1"]);
                assert!((estimates[0] + 1.25).abs() < 1e-12);
                assert!((estimates[1] - 1.25).abs() < 1e-12);
            }
            _ => panic!("expected discrete effect"),
        }
        assert!(partial_effect_table(&ds, &fit, "nope").is_err());
    }

    #[test]
    fn partial_effect_zero_component() {
        let schema = Schema::from_json_str(
            r#"{"columns": {
                "y": {"role": "response", "kind": "continuous"},
                "x": {"role": "predictor", "kind": "discrete"}
            }}"#,
        )
        .unwrap();
        let ds =
            Dataset::from_csv_reader("x,y\n0,3\n1,3\n0,3\n1,3\n".as_bytes(), &schema).unwrap();
        let fit = backfit(&ds, &ModelSpec::from_dataset(&ds), &FitOptions::default()).unwrap();
        match partial_effect_table(&ds, &fit, "x").unwrap() {
            PartialEffect::Discrete { estimates, .. } => {
                assert!(estimates.iter().all(|&e| e.abs() < 1e-12));
            }
            _ => panic!("expected discrete effect"),
        }
    }
}
