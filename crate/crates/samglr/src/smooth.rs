//! Point-mass bin smoothers for discrete/categorical variables and
//! local-polynomial kernel smoothers for continuous covariates.
//!
//! Smoothers are apply-to-vector operators; the dense n x n smoother matrices
//! are never materialized here (the test suite builds them explicitly at
//! small n to cross-check). The centered variant subtracts the mean of the
//! smoothed output, which enforces the zero-mean identifiability constraint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel for local-polynomial smoothing. The gaussian kernel matches the
/// 1.06 s n^(-1/5) bandwidth convention; epanechnikov has bounded support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Gaussian,
    Epanechnikov,
}

impl Kernel {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Gaussian => (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            Kernel::Epanechnikov => {
                if u.abs() < 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Group-mean smoother over the levels of a coded variable.
#[derive(Debug, Clone)]
pub struct BinSmoother {
    groups: Vec<Vec<usize>>,
    n: usize,
}

impl BinSmoother {
    pub fn new(codes: &[usize], k: usize) -> BinSmoother {
        let mut groups = vec![Vec::new(); k];
        for (i, &c) in codes.iter().enumerate() {
            groups[c].push(i);
        }
        BinSmoother {
            groups,
            n: codes.len(),
        }
    }

    /// Row i of the output is the mean of `target` over rows sharing i's level.
    pub fn apply(&self, target: &[f64]) -> Vec<f64> {
        debug_assert_eq!(target.len(), self.n);
        let mut out = vec![0.0; self.n];
        for group in &self.groups {
            if group.is_empty() {
                continue;
            }
            let mean = group.iter().map(|&i| target[i]).sum::<f64>() / group.len() as f64;
            for &i in group {
                out[i] = mean;
            }
        }
        out
    }

    /// Per-level means of `target`, in code order.
    pub fn level_means(&self, target: &[f64]) -> Vec<f64> {
        self.groups
            .iter()
            .map(|g| {
                if g.is_empty() {
                    0.0
                } else {
                    g.iter().map(|&i| target[i]).sum::<f64>() / g.len() as f64
                }
            })
            .collect()
    }

    pub fn k(&self) -> usize {
        self.groups.len()
    }
}

/// Local-polynomial kernel smoother evaluated at the observed covariate values.
///
/// The fitted value at z is the intercept of the weighted degree-d fit in the
/// centered basis (powers of z_i - z, scaled by the bandwidth for stability).
#[derive(Debug, Clone)]
pub struct LocalPolySmoother {
    z: Vec<f64>,
    degree: usize,
    bandwidth: f64,
    kernel: Kernel,
}

/// Threshold on the scaled local normal matrix below which the system is
/// treated as singular.
const SINGULARITY_TOL: f64 = 1e-12;

/// Highest supported local-polynomial degree.
pub const MAX_LOCAL_DEGREE: usize = 6;

impl LocalPolySmoother {
    pub fn new(z: Vec<f64>, degree: usize, bandwidth: f64, kernel: Kernel) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::Argument(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        if degree > MAX_LOCAL_DEGREE {
            return Err(Error::Argument(format!(
                "local-polynomial degree {degree} exceeds the supported maximum {MAX_LOCAL_DEGREE}"
            )));
        }
        Ok(LocalPolySmoother {
            z,
            degree,
            bandwidth,
            kernel,
        })
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Weighted local fit at z0; returns the intercept. Degrees 0 and 1 use
    /// closed forms; higher degrees a stack-allocated Cholesky solve, all in
    /// the scaled basis u = (z - z0)/h.
    pub fn fit_at(&self, z0: f64, target: &[f64]) -> Result<f64> {
        let h = self.bandwidth;
        match self.degree {
            0 => {
                let mut den = 0.0;
                let mut num = 0.0;
                for (&zi, &yi) in self.z.iter().zip(target) {
                    let w = self.kernel.eval((zi - z0) / h);
                    den += w;
                    num += w * yi;
                }
                if !(den > 0.0) {
                    return Err(Error::BandwidthTooSmall {
                        at: z0,
                        bandwidth: h,
                    });
                }
                Ok(num / den)
            }
            1 => {
                let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (&zi, &yi) in self.z.iter().zip(target) {
                    let u = (zi - z0) / h;
                    let w = self.kernel.eval(u);
                    s0 += w;
                    s1 += w * u;
                    s2 += w * u * u;
                    t0 += w * yi;
                    t1 += w * u * yi;
                }
                if !(s0 > 0.0) || !(s2 > 0.0) {
                    return Err(Error::BandwidthTooSmall {
                        at: z0,
                        bandwidth: h,
                    });
                }
                // Unit-diagonal scaling: the pivot of the 2x2 system is
                // 1 - r^2 with r the scaled off-diagonal entry.
                let r2 = s1 * s1 / (s0 * s2);
                if 1.0 - r2 < SINGULARITY_TOL {
                    return Err(Error::BandwidthTooSmall {
                        at: z0,
                        bandwidth: h,
                    });
                }
                Ok((s2 * t0 - s1 * t1) / (s0 * s2 - s1 * s1))
            }
            _ => self.fit_at_general(z0, target),
        }
    }

    fn fit_at_general(&self, z0: f64, target: &[f64]) -> Result<f64> {
        const MAX_M: usize = MAX_LOCAL_DEGREE + 1;
        let d = self.degree;
        let h = self.bandwidth;
        let m = d + 1;
        let mut normal = [[0.0f64; MAX_M]; MAX_M];
        let mut rhs = [0.0f64; MAX_M];
        let mut pow = [0.0f64; MAX_M];
        for (&zi, &yi) in self.z.iter().zip(target) {
            let u = (zi - z0) / h;
            let w = self.kernel.eval(u);
            if w == 0.0 {
                continue;
            }
            let mut p = 1.0;
            for item in pow.iter_mut().take(m) {
                *item = p;
                p *= u;
            }
            for a in 0..m {
                let wa = w * pow[a];
                for b in a..m {
                    normal[a][b] += wa * pow[b];
                }
                rhs[a] += wa * yi;
            }
        }
        // Scale to unit diagonal before factorizing; a tiny pivot means too
        // few points carry kernel weight at z0.
        let mut scale = [0.0f64; MAX_M];
        for (a, s) in scale.iter_mut().enumerate().take(m) {
            let diag = normal[a][a];
            if !(diag > 0.0) {
                return Err(Error::BandwidthTooSmall {
                    at: z0,
                    bandwidth: h,
                });
            }
            *s = diag.sqrt();
        }
        let mut a_mat = [[0.0f64; MAX_M]; MAX_M];
        for i in 0..m {
            for j in 0..m {
                let v = if i <= j { normal[i][j] } else { normal[j][i] };
                a_mat[i][j] = v / (scale[i] * scale[j]);
            }
        }
        // In-place Cholesky with pivot check.
        for j in 0..m {
            let mut diag = a_mat[j][j];
            for t in 0..j {
                diag -= a_mat[j][t] * a_mat[j][t];
            }
            if diag < SINGULARITY_TOL {
                return Err(Error::BandwidthTooSmall {
                    at: z0,
                    bandwidth: h,
                });
            }
            let l = diag.sqrt();
            a_mat[j][j] = l;
            for i in (j + 1)..m {
                let mut v = a_mat[i][j];
                for t in 0..j {
                    v -= a_mat[i][t] * a_mat[j][t];
                }
                a_mat[i][j] = v / l;
            }
        }
        // Solve L L^T x = scaled rhs; the intercept is coefficient 0.
        let mut x = [0.0f64; MAX_M];
        for i in 0..m {
            x[i] = rhs[i] / scale[i];
        }
        for i in 0..m {
            for t in 0..i {
                x[i] = x[i] - a_mat[i][t] * x[t];
            }
            x[i] /= a_mat[i][i];
        }
        for i in (0..m).rev() {
            for t in (i + 1)..m {
                x[i] = x[i] - a_mat[t][i] * x[t];
            }
            x[i] /= a_mat[i][i];
        }
        Ok(x[0] / scale[0])
    }

    /// Smooth `target`, evaluating at every observed covariate value.
    pub fn apply(&self, target: &[f64]) -> Result<Vec<f64>> {
        debug_assert_eq!(target.len(), self.z.len());
        let mut out = Vec::with_capacity(self.z.len());
        for &z0 in &self.z {
            out.push(self.fit_at(z0, target)?);
        }
        Ok(out)
    }
}

/// Rule-of-thumb bandwidth h = 1.06 s n^(-1/5), with s the sample standard
/// deviation (n - 1 denominator).
pub fn default_bandwidth(z: &[f64]) -> Result<f64> {
    let n = z.len();
    if n < 2 {
        return Err(Error::Argument(
            "default bandwidth needs at least two observations".into(),
        ));
    }
    let mean = z.iter().sum::<f64>() / n as f64;
    let var = z.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    if var <= 0.0 {
        return Err(Error::Argument(
            "default bandwidth is undefined for a constant column".into(),
        ));
    }
    Ok(1.06 * var.sqrt() * (n as f64).powf(-0.2))
}

/// Either smoother family behind one interface for the backfitting loop.
#[derive(Debug, Clone)]
pub enum SmootherOp {
    Bin(BinSmoother),
    LocalPoly(LocalPolySmoother),
}

impl SmootherOp {
    pub fn apply(&self, target: &[f64]) -> Result<Vec<f64>> {
        match self {
            SmootherOp::Bin(s) => Ok(s.apply(target)),
            SmootherOp::LocalPoly(s) => s.apply(target),
        }
    }

    /// Apply, then subtract the mean of the smoothed output.
    pub fn apply_centered(&self, target: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.apply(target)?;
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        for v in &mut out {
            *v -= mean;
        }
        Ok(out)
    }
}
