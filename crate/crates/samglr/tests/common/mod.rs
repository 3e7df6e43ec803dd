//! Dense reference implementations used by the integration tests: smoother
//! matrices materialized from their definitions and the direct block solve
//! of the backfitting normal equations. Kept independent of the library's
//! iterative code paths.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use samglr::data::{Dataset, Schema};
use samglr::smooth::Kernel;

/// Bin smoother matrix: S[i][j] = 1/n_level(i) when j shares i's level.
pub fn bin_smoother_matrix(codes: &[usize], k: usize) -> DMatrix<f64> {
    let n = codes.len();
    let mut counts = vec![0usize; k];
    for &c in codes {
        counts[c] += 1;
    }
    DMatrix::from_fn(n, n, |i, j| {
        if codes[i] == codes[j] {
            1.0 / counts[codes[i]] as f64
        } else {
            0.0
        }
    })
}

/// Local-polynomial smoother matrix: row i is the first row of
/// (Z^T K Z)^(-1) Z^T K evaluated at z_i, in the raw (unscaled) basis.
pub fn local_poly_smoother_matrix(
    z: &[f64],
    degree: usize,
    bandwidth: f64,
    kernel: Kernel,
) -> DMatrix<f64> {
    let n = z.len();
    let m = degree + 1;
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        let z0 = z[i];
        let design = DMatrix::from_fn(n, m, |j, p| (z[j] - z0).powi(p as i32));
        let weights: Vec<f64> = z
            .iter()
            .map(|&zj| kernel.eval((zj - z0) / bandwidth) / bandwidth)
            .collect();
        let mut ztk = DMatrix::zeros(m, n);
        for a in 0..m {
            for j in 0..n {
                ztk[(a, j)] = design[(j, a)] * weights[j];
            }
        }
        let normal = &ztk * &design;
        let inv = normal.try_inverse().expect("local system invertible");
        let row = inv.row(0) * &ztk;
        for j in 0..n {
            s[(i, j)] = row[(0, j)];
        }
    }
    s
}

/// Centering operator I - 11^T / n.
pub fn center_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        let eye = if i == j { 1.0 } else { 0.0 };
        eye - 1.0 / n as f64
    })
}

/// Direct solve of the stacked normal equations: given the centered
/// smoother matrices, returns the per-component fitted vectors M^(-1) C y*.
pub fn direct_backfit_solve(
    centered: &[DMatrix<f64>],
    y_star: &DVector<f64>,
) -> Option<Vec<DVector<f64>>> {
    let d = centered.len();
    let n = y_star.len();
    let dim = d * n;
    let mut m = DMatrix::identity(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for (di, s) in centered.iter().enumerate() {
        for dj in 0..d {
            if di != dj {
                m.view_mut((di * n, dj * n), (n, n)).copy_from(s);
            }
        }
        rhs.rows_mut(di * n, n).copy_from(&(s * y_star));
    }
    let solution = nalgebra::linalg::LU::new(m).solve(&rhs)?;
    Some(
        (0..d)
            .map(|di| solution.rows(di * n, n).clone_owned())
            .collect(),
    )
}

/// Closed-form two-component additive smoother
/// W_1 = (I - S1* S2*)^(-1) S1* (I - S2*).
pub fn two_component_w1(s1: &DMatrix<f64>, s2: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = s1.nrows();
    let inner = DMatrix::identity(n, n) - s1 * s2;
    let inv = inner.try_inverse()?;
    Some(inv * s1 * (DMatrix::identity(n, n) - s2))
}

/// A randomly drawn small test instance with mixed bin and local-polynomial
/// components.
pub struct RandomInstance {
    pub dataset: Dataset,
    pub bin_vars: Vec<(String, Vec<usize>, usize)>,
    pub cont_vars: Vec<(String, Vec<f64>, usize, f64)>,
}

pub fn random_mixed_instance(seed: u64, max_n: usize) -> RandomInstance {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = rng.gen_range(40..=max_n);
    let n_bins = rng.gen_range(1..=2usize);
    let n_cont = rng.gen_range(1..=2usize);

    let mut bin_vars = Vec::new();
    for b in 0..n_bins {
        let k = rng.gen_range(2..=4usize);
        // Force every level to appear.
        let codes: Vec<usize> = (0..n)
            .map(|i| if i < k { i } else { rng.gen_range(0..k) })
            .collect();
        bin_vars.push((format!("x{}", b + 1), codes, k));
    }
    let mut cont_vars = Vec::new();
    for c in 0..n_cont {
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let degree = rng.gen_range(0..=1usize);
        let bandwidth = rng.gen_range(0.15..0.45);
        cont_vars.push((format!("z{}", c + 1), z, degree, bandwidth));
    }

    let mut y = vec![0.0; n];
    for (_, codes, _) in &bin_vars {
        let shift: f64 = rng.gen_range(0.2..1.2);
        for (i, &code) in codes.iter().enumerate() {
            y[i] += shift * code as f64;
        }
    }
    for (_, z, _, _) in &cont_vars {
        let amp: f64 = rng.gen_range(0.3..1.0);
        for (i, &zi) in z.iter().enumerate() {
            y[i] += amp * (std::f64::consts::PI * zi).sin();
        }
    }
    for yi in y.iter_mut() {
        *yi += rng.gen_range(-0.5..0.5);
    }

    let mut columns = String::new();
    columns.push_str(r#"{"columns": {"y": {"role": "response", "kind": "continuous"}"#);
    for (name, _, _) in &bin_vars {
        columns.push_str(&format!(
            r#", "{name}": {{"role": "predictor", "kind": "discrete"}}"#
        ));
    }
    for (name, _, _, _) in &cont_vars {
        columns.push_str(&format!(
            r#", "{name}": {{"role": "covariate", "kind": "continuous"}}"#
        ));
    }
    columns.push_str("}}");
    let schema = Schema::from_json_str(&columns).unwrap();

    let mut csv = String::new();
    let mut header: Vec<String> = vec!["y".into()];
    header.extend(bin_vars.iter().map(|(n, _, _)| n.clone()));
    header.extend(cont_vars.iter().map(|(n, _, _, _)| n.clone()));
    csv.push_str(&header.join(","));
    csv.push('\n');
    for i in 0..n {
        let mut row = vec![format!("{}", y[i])];
        for (_, codes, _) in &bin_vars {
            row.push(codes[i].to_string());
        }
        for (_, z, _, _) in &cont_vars {
            row.push(format!("{}", z[i]));
        }
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let dataset = Dataset::from_csv_reader(csv.as_bytes(), &schema).unwrap();
    RandomInstance {
        dataset,
        bin_vars,
        cont_vars,
    }
}
