//! JSON report records written by the CLI. Every report embeds a run
//! manifest; the wall time inside the manifest is the only field that can
//! differ between identical runs.

use serde::{Deserialize, Serialize};

use samglr::backfit::{AdditiveFit, FittedComponent, Treatment};
use samglr::glr::GlrResult;
use samglr::sim::{BetaSummary, SimulationConfig, StudyKind, StudyResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub data: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub schema: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hypothesis: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
    pub version: String,
    pub wall_ms: u64,
}

impl RunManifest {
    pub fn new(command: &str) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            data: None,
            schema: None,
            hypothesis: None,
            config: None,
            seed: None,
            outputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_ms: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentReport {
    pub variable: String,
    pub treatment: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub levels: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub estimates: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub coefficients: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub formula: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bandwidth: Option<f64>,
}

/// Fitted polynomial rendered like "m_1(x1) = -0.1330 + 0.0344 x1".
pub fn poly_formula(index: usize, variable: &str, coefficients: &[f64]) -> String {
    let mut out = format!("m_{index}({variable}) = {:.4}", coefficients[0]);
    for (power, c) in coefficients.iter().enumerate().skip(1) {
        let sign = if *c < 0.0 { '-' } else { '+' };
        let var = if power == 1 {
            variable.to_string()
        } else {
            format!("{variable}^{power}")
        };
        out.push_str(&format!(" {sign} {:.4} {var}", c.abs()));
    }
    out
}

fn treatment_name(t: &Treatment) -> String {
    match t {
        Treatment::Bin => "bin".into(),
        Treatment::LocalPoly { degree, .. } => format!("local_poly({degree})"),
        Treatment::Poly { degree } => format!("poly({degree})"),
        Treatment::Excluded => "excluded".into(),
    }
}

fn component_report(index: usize, comp: &FittedComponent, levels: Option<Vec<String>>) -> ComponentReport {
    ComponentReport {
        variable: comp.variable.clone(),
        treatment: treatment_name(&comp.treatment),
        levels,
        estimates: comp.level_estimates.clone(),
        formula: comp
            .poly_coefficients
            .as_ref()
            .map(|c| poly_formula(index + 1, &comp.variable, c)),
        coefficients: comp.poly_coefficients.clone(),
        bandwidth: comp.bandwidth_used,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub manifest: RunManifest,
    pub n: usize,
    pub alpha_hat: f64,
    pub rss: f64,
    pub converged: bool,
    pub iterations: usize,
    pub max_delta: f64,
    pub theta: Vec<f64>,
    pub components: Vec<ComponentReport>,
}

impl FitReport {
    pub fn build(
        manifest: RunManifest,
        fit: &AdditiveFit,
        dataset: &samglr::data::Dataset,
    ) -> FitReport {
        let components = fit
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let levels = dataset
                    .variable(&c.variable)
                    .and_then(|v| v.coded())
                    .map(|coded| coded.labels.clone());
                component_report(i, c, levels)
            })
            .collect();
        FitReport {
            manifest,
            n: dataset.n,
            alpha_hat: fit.alpha_hat,
            rss: fit.rss,
            converged: fit.converged,
            iterations: fit.iterations,
            max_delta: fit.max_delta,
            theta: fit.theta.clone(),
            components,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestReport {
    pub manifest: RunManifest,
    /// Which p-value the run treats as the headline ("exact" or "indep");
    /// both are always reported.
    pub mode: String,
    pub p_value_headline: f64,
    #[serde(flatten)]
    pub result: GlrResult,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudySummary {
    pub manifest: RunManifest,
    pub kind: StudyKind,
    pub alpha: f64,
    pub replications_requested: usize,
    pub replications_completed: usize,
    pub failures: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rejection_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rejection_rate_indep: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub beta_summaries: Vec<BetaSummary>,
    pub config: SimulationConfig,
}

impl StudySummary {
    pub fn build(
        manifest: RunManifest,
        cfg: &SimulationConfig,
        result: &StudyResult,
    ) -> StudySummary {
        let per_cell = result.records.len() + result.failures.len();
        StudySummary {
            manifest,
            kind: result.kind,
            alpha: result.alpha,
            replications_requested: per_cell,
            replications_completed: result.records.len(),
            failures: result.failures.len(),
            rejection_rate: result.rejection_rate,
            rejection_rate_indep: result.rejection_rate_indep,
            beta_summaries: result.beta_summaries.clone(),
            config: cfg.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_rendering() {
        let f = poly_formula(1, "x1", &[-0.133, 0.0344]);
        assert_eq!(f, "m_1(x1) = -0.1330 + 0.0344 x1");
        let f = poly_formula(3, "x3", &[-1.1149, 0.5466, -0.0801, 0.0042]);
        assert_eq!(
            f,
            "m_3(x3) = -1.1149 + 0.5466 x3 - 0.0801 x3^2 + 0.0042 x3^3"
        );
    }
}
