//! Dataset representation, variable coding and design-matrix primitives.
//!
//! Regressors are split into predictors (discrete or categorical, the
//! variables a test may constrain) and covariates (any kind, kept unchanged
//! by tests). Coded variables use 0-based integer codes; polynomial structure
//! is always assessed on the integer level codes (ordinal categorical
//! variables use the user-declared level order). An optional `code_offset`
//! of 1 shifts the code origin for parity with 1-based external tools.

use std::collections::BTreeMap;
use std::io::Read;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Response,
    Predictor,
    Covariate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Discrete,
    Categorical,
    Continuous,
}

/// Declared properties of one column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub role: Role,
    pub kind: VarKind,
    /// Ordered level labels; required for categorical columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
    /// Polynomial degree r when the component is modeled parametrically.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_degree: Option<usize>,
    /// Local-polynomial degree for continuous covariates (0 = Nadaraya-Watson).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoother_degree: Option<usize>,
    /// Kernel bandwidth for continuous covariates; rule-of-thumb default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
}

/// Schema file: column name -> declaration, plus a global code offset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schema {
    /// 0 (default) or 1; added to integer codes wherever codes enter a
    /// polynomial basis or a report.
    #[serde(default)]
    pub code_offset: u8,
    pub columns: BTreeMap<String, ColumnDecl>,
}

/// Per-column part of the schema file (the name is the map key).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnDecl {
    pub role: Role,
    pub kind: VarKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoother_degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
}

impl Schema {
    pub fn from_json_str(s: &str) -> Result<Schema> {
        let schema: Schema = serde_json::from_str(s)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Schema> {
        let schema: Schema = serde_json::from_reader(r)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.code_offset > 1 {
            return Err(Error::Schema("code_offset must be 0 or 1".into()));
        }
        let responses: Vec<&String> = self
            .columns
            .iter()
            .filter(|(_, d)| d.role == Role::Response)
            .map(|(n, _)| n)
            .collect();
        if responses.len() != 1 {
            return Err(Error::Schema(format!(
                "exactly one response column is required, found {}",
                responses.len()
            )));
        }
        for (name, decl) in &self.columns {
            if decl.role == Role::Predictor && decl.kind == VarKind::Continuous {
                return Err(Error::Schema(format!(
                    "predictor '{name}' must be discrete or categorical"
                )));
            }
            if decl.role == Role::Response && decl.kind != VarKind::Continuous {
                return Err(Error::Schema(format!(
                    "response '{name}' must be continuous"
                )));
            }
            match decl.kind {
                VarKind::Categorical => {
                    let levels = decl.levels.as_ref().ok_or_else(|| {
                        Error::Schema(format!("categorical '{name}' needs a levels list"))
                    })?;
                    if levels.len() < 2 {
                        return Err(Error::Schema(format!(
                            "categorical '{name}' needs at least two levels"
                        )));
                    }
                    let mut seen = std::collections::BTreeSet::new();
                    for l in levels {
                        if !seen.insert(l) {
                            return Err(Error::Schema(format!(
                                "duplicate level '{l}' in '{name}'"
                            )));
                        }
                    }
                }
                VarKind::Continuous => {
                    if decl.levels.is_some() {
                        return Err(Error::Schema(format!(
                            "continuous '{name}' cannot declare levels"
                        )));
                    }
                }
                VarKind::Discrete => {}
            }
            if let Some(r) = decl.param_degree {
                if r < 1 {
                    return Err(Error::Schema(format!(
                        "param_degree of '{name}' must be at least 1"
                    )));
                }
                // k is known here only for categorical columns; discrete
                // columns are re-checked once their levels are observed.
                if decl.role == Role::Predictor {
                    if let Some(levels) = &decl.levels {
                        if r >= levels.len().saturating_sub(1) {
                            return Err(Error::Schema(format!(
                                "param_degree of predictor '{name}' must satisfy 0 < r < k - 1"
                            )));
                        }
                    }
                }
            }
            if let Some(h) = decl.bandwidth {
                if !(h > 0.0) || !h.is_finite() {
                    return Err(Error::Schema(format!(
                        "bandwidth of '{name}' must be a positive finite number"
                    )));
                }
            }
        }
        Ok(())
    }

    fn spec_for(&self, name: &str) -> Option<VariableSpec> {
        self.columns.get(name).map(|d| VariableSpec {
            name: name.to_string(),
            role: d.role,
            kind: d.kind,
            levels: d.levels.clone(),
            param_degree: d.param_degree,
            smoother_degree: d.smoother_degree,
            bandwidth: d.bandwidth,
        })
    }
}

/// Observed level counts and empirical probabilities of a coded column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub counts: Vec<usize>,
    /// Empirical probabilities c_j = n_j / n; counts-based so they sum to 1.
    pub probs: Vec<f64>,
    /// Square roots of the probabilities.
    pub sqrt_probs: Vec<f64>,
}

impl LevelStats {
    pub fn from_counts(counts: Vec<usize>) -> LevelStats {
        let n: usize = counts.iter().sum();
        let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        let sqrt_probs: Vec<f64> = probs.iter().map(|p| p.sqrt()).collect();
        LevelStats {
            counts,
            probs,
            sqrt_probs,
        }
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }
}

/// An encoded discrete/categorical column.
#[derive(Debug, Clone)]
pub struct CodedColumn {
    /// Integer codes 0..k-1.
    pub codes: Vec<usize>,
    /// Level labels in code order.
    pub labels: Vec<String>,
    pub stats: LevelStats,
}

#[derive(Debug, Clone)]
pub enum ColumnData {
    Coded(CodedColumn),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub spec: VariableSpec,
    pub data: ColumnData,
}

impl Variable {
    pub fn coded(&self) -> Option<&CodedColumn> {
        match &self.data {
            ColumnData::Coded(c) => Some(c),
            ColumnData::Continuous(_) => None,
        }
    }

    pub fn continuous(&self) -> Option<&[f64]> {
        match &self.data {
            ColumnData::Continuous(v) => Some(v),
            ColumnData::Coded(_) => None,
        }
    }
}

/// A fully bound dataset: response plus encoded regressors.
///
/// Immutable after construction; all downstream operations are pure.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub n: usize,
    pub code_offset: u8,
    pub response_name: String,
    pub response: Vec<f64>,
    variables: Vec<Variable>,
}

/// Raw (pre-encoding) column values.
#[derive(Debug, Clone)]
pub enum RawColumn {
    Text(Vec<String>),
    Numeric(Vec<f64>),
}

/// Encode one column against its declaration.
///
/// Categorical columns use the declared level order; discrete columns are
/// ranked against their sorted distinct integer values (values already coded
/// 0..k-1 come out unchanged). Every declared level must be observed.
pub fn encode_levels(column: &RawColumn, spec: &VariableSpec) -> Result<CodedColumn> {
    match (spec.kind, column) {
        (VarKind::Categorical, RawColumn::Text(values)) => {
            let levels = spec.levels.as_ref().ok_or_else(|| {
                Error::Schema(format!("categorical '{}' needs a levels list", spec.name))
            })?;
            let mut codes = Vec::with_capacity(values.len());
            for v in values {
                match levels.iter().position(|l| l == v) {
                    Some(c) => codes.push(c),
                    None => {
                        return Err(Error::Coding {
                            variable: spec.name.clone(),
                            message: format!("label '{v}' is not a declared level"),
                        })
                    }
                }
            }
            let mut counts = vec![0usize; levels.len()];
            for &c in &codes {
                counts[c] += 1;
            }
            if let Some(j) = counts.iter().position(|&c| c == 0) {
                return Err(Error::DegenerateLevel {
                    variable: spec.name.clone(),
                    level: levels[j].clone(),
                });
            }
            Ok(CodedColumn {
                codes,
                labels: levels.clone(),
                stats: LevelStats::from_counts(counts),
            })
        }
        (VarKind::Discrete, RawColumn::Numeric(values)) => {
            let mut distinct: Vec<i64> = Vec::new();
            let mut ints = Vec::with_capacity(values.len());
            for &v in values {
                if !v.is_finite() || v.fract() != 0.0 {
                    return Err(Error::Coding {
                        variable: spec.name.clone(),
                        message: format!("discrete value {v} is not an integer"),
                    });
                }
                let i = v as i64;
                ints.push(i);
                if let Err(pos) = distinct.binary_search(&i) {
                    distinct.insert(pos, i);
                }
            }
            let codes: Vec<usize> = ints
                .iter()
                .map(|i| distinct.binary_search(i).unwrap())
                .collect();
            let mut counts = vec![0usize; distinct.len()];
            for &c in &codes {
                counts[c] += 1;
            }
            Ok(CodedColumn {
                codes,
                labels: distinct.iter().map(|i| i.to_string()).collect(),
                stats: LevelStats::from_counts(counts),
            })
        }
        (VarKind::Categorical, RawColumn::Numeric(_)) => Err(Error::Coding {
            variable: spec.name.clone(),
            message: "categorical column holds numeric data".into(),
        }),
        (VarKind::Discrete, RawColumn::Text(_)) => Err(Error::Coding {
            variable: spec.name.clone(),
            message: "discrete column holds non-numeric data".into(),
        }),
        (VarKind::Continuous, _) => Err(Error::Coding {
            variable: spec.name.clone(),
            message: "continuous columns are not encoded".into(),
        }),
    }
}

/// Design matrix of value powers a..=b, one column per power (0^0 = 1).
pub fn poly_design(values: &[f64], a: usize, b: usize) -> Result<DMatrix<f64>> {
    if a > b {
        return Err(Error::Argument(format!(
            "poly_design requires a <= b, got a = {a}, b = {b}"
        )));
    }
    if values.is_empty() {
        return Err(Error::Argument(
            "poly_design requires nonempty values".into(),
        ));
    }
    let cols = b - a + 1;
    Ok(DMatrix::from_fn(values.len(), cols, |i, j| {
        values[i].powi((a + j) as i32)
    }))
}

/// Subtract the mean; returns the centered vector and the mean.
pub fn center(values: &[f64]) -> (Vec<f64>, f64) {
    let n = values.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| v - mean).collect(), mean)
}

/// Empirical joint probabilities P(X_p = i, X_p' = j) as a k_p x k_p' matrix.
pub fn joint_level_probs(
    codes_p: &[usize],
    k_p: usize,
    codes_q: &[usize],
    k_q: usize,
) -> Result<DMatrix<f64>> {
    if codes_p.len() != codes_q.len() {
        return Err(Error::Argument(
            "joint_level_probs requires equal-length code vectors".into(),
        ));
    }
    let n = codes_p.len() as f64;
    let mut m = DMatrix::zeros(k_p, k_q);
    for (&i, &j) in codes_p.iter().zip(codes_q) {
        m[(i, j)] += 1.0;
    }
    m /= n;
    Ok(m)
}

impl Dataset {
    /// Bind raw columns to a schema. Column order follows `order` (e.g. the
    /// CSV header), restricted to schema columns.
    pub fn from_raw_columns(
        schema: &Schema,
        order: &[String],
        mut raw: BTreeMap<String, RawColumn>,
    ) -> Result<Dataset> {
        schema.validate()?;
        let mut response: Option<(String, Vec<f64>)> = None;
        let mut variables = Vec::new();
        let mut n: Option<usize> = None;

        for name in order {
            let Some(spec) = schema.spec_for(name) else {
                continue;
            };
            let col = raw.remove(name).ok_or_else(|| {
                Error::Schema(format!(
                    "column '{name}' is declared but missing from the data"
                ))
            })?;
            let len = match &col {
                RawColumn::Text(v) => v.len(),
                RawColumn::Numeric(v) => v.len(),
            };
            match n {
                None => n = Some(len),
                Some(m) if m != len => {
                    return Err(Error::Schema(format!(
                        "column '{name}' has length {len}, expected {m}"
                    )))
                }
                _ => {}
            }
            match spec.role {
                Role::Response => {
                    let RawColumn::Numeric(v) = col else {
                        return Err(Error::Coding {
                            variable: name.clone(),
                            message: "response must be numeric".into(),
                        });
                    };
                    response = Some((name.clone(), v));
                }
                Role::Predictor | Role::Covariate => {
                    let data = match spec.kind {
                        VarKind::Continuous => {
                            let RawColumn::Numeric(v) = col else {
                                return Err(Error::Coding {
                                    variable: name.clone(),
                                    message: "continuous column holds non-numeric data".into(),
                                });
                            };
                            ColumnData::Continuous(v)
                        }
                        _ => ColumnData::Coded(encode_levels(&col, &spec)?),
                    };
                    variables.push(Variable { spec, data });
                }
            }
        }

        for name in schema.columns.keys() {
            if !order.contains(name) {
                return Err(Error::Schema(format!(
                    "column '{name}' is declared but missing from the data"
                )));
            }
        }

        let (response_name, response) =
            response.ok_or_else(|| Error::Schema("response column missing".into()))?;
        let n = n.ok_or_else(|| Error::Schema("empty dataset".into()))?;
        if n == 0 {
            return Err(Error::Schema("empty dataset".into()));
        }

        let ds = Dataset {
            n,
            code_offset: schema.code_offset,
            response_name,
            response,
            variables,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Read an RFC-4180-style CSV with a header row. Missing values are a
    /// hard error.
    pub fn from_csv_reader<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();

        let mut text: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for h in &headers {
            if schema.columns.contains_key(h) {
                text.insert(h.clone(), Vec::new());
            }
        }
        for (row_idx, record) in rdr.records().enumerate() {
            let record = record?;
            for (h, field) in headers.iter().zip(record.iter()) {
                if let Some(col) = text.get_mut(h) {
                    if field.is_empty() || field == "NA" || field == "na" {
                        return Err(Error::Coding {
                            variable: h.clone(),
                            message: format!("missing value at data row {}", row_idx + 1),
                        });
                    }
                    col.push(field.to_string());
                }
            }
        }

        let mut raw = BTreeMap::new();
        for (name, values) in text {
            let decl = &schema.columns[&name];
            let col = match decl.kind {
                VarKind::Categorical => RawColumn::Text(values),
                _ => {
                    let mut nums = Vec::with_capacity(values.len());
                    for (i, v) in values.iter().enumerate() {
                        let x: f64 = v.trim().parse().map_err(|_| Error::Coding {
                            variable: name.clone(),
                            message: format!("'{v}' at data row {} is not a number", i + 1),
                        })?;
                        nums.push(x);
                    }
                    RawColumn::Numeric(nums)
                }
            };
            raw.insert(name, col);
        }
        Dataset::from_raw_columns(schema, &headers, raw)
    }

    /// Assemble a dataset from pre-built columns (simulation path).
    pub fn from_parts(
        code_offset: u8,
        response_name: &str,
        response: Vec<f64>,
        variables: Vec<Variable>,
    ) -> Result<Dataset> {
        let n = response.len();
        let ds = Dataset {
            n,
            code_offset,
            response_name: response_name.to_string(),
            response,
            variables,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Schema("empty dataset".into()));
        }
        if self.response.len() != self.n {
            return Err(Error::Schema("response length mismatch".into()));
        }
        for v in &self.variables {
            match &v.data {
                ColumnData::Coded(c) => {
                    if c.codes.len() != self.n {
                        return Err(Error::Schema(format!(
                            "column '{}' length mismatch",
                            v.spec.name
                        )));
                    }
                    let k = c.stats.k();
                    if c.codes.iter().any(|&code| code >= k) {
                        return Err(Error::Coding {
                            variable: v.spec.name.clone(),
                            message: "code out of range".into(),
                        });
                    }
                    if let Some(j) = c.stats.counts.iter().position(|&cnt| cnt == 0) {
                        return Err(Error::DegenerateLevel {
                            variable: v.spec.name.clone(),
                            level: c.labels.get(j).cloned().unwrap_or_else(|| j.to_string()),
                        });
                    }
                    if v.spec.role == Role::Predictor {
                        if k < 2 {
                            return Err(Error::Coding {
                                variable: v.spec.name.clone(),
                                message: "predictors need at least two observed levels".into(),
                            });
                        }
                        if let Some(r) = v.spec.param_degree {
                            if r + 1 >= k {
                                return Err(Error::Schema(format!(
                                    "param_degree of predictor '{}' must satisfy 0 < r < k - 1 (k = {k})",
                                    v.spec.name
                                )));
                            }
                        }
                    }
                }
                ColumnData::Continuous(vals) => {
                    if vals.len() != self.n {
                        return Err(Error::Schema(format!(
                            "column '{}' length mismatch",
                            v.spec.name
                        )));
                    }
                    if vals.iter().any(|x| !x.is_finite()) {
                        return Err(Error::Coding {
                            variable: v.spec.name.clone(),
                            message: "non-finite value".into(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable(&self, name: &str) -> Option<&Variable> {
        self.variables.iter().find(|v| v.spec.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Variable> {
        self.variable(name)
            .ok_or_else(|| Error::Argument(format!("unknown variable '{name}'")))
    }

    /// Codes shifted by the configured offset, as floats, for polynomial bases.
    pub fn poly_values(&self, name: &str) -> Result<Vec<f64>> {
        let v = self.require(name)?;
        let c = v.coded().ok_or_else(|| {
            Error::Argument(format!("variable '{name}' is not discrete/categorical"))
        })?;
        let off = self.code_offset as f64;
        Ok(c.codes.iter().map(|&code| code as f64 + off).collect())
    }
}
