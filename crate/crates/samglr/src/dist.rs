//! Distribution kernel for quadratic forms in standard normal variables:
//! CDF, tail probability and quantiles of shift + sum(lambda_i * chi2_1),
//! plus central and noncentral chi-square.
//!
//! Engine selection per evaluation:
//! - equal weights collapse exactly to a scaled central chi-square;
//! - otherwise the characteristic-function inversion integral is integrated
//!   with adaptive quadrature up to an analytic truncation point;
//! - when that truncation point is too far out for quadrature (few unequal
//!   weights make the integrand decay like u^(-s/2)), the mixture is summed
//!   as a series of central chi-square CDFs with a rigorous tail bound.
//!
//! Either route delivers the 1e-6 absolute accuracy contract; when neither
//! converges the result carries a degraded-accuracy flag with the achieved
//! bound.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};

/// External absolute accuracy target for mixture CDF values.
pub const CDF_ACCURACY: f64 = 1e-6;
/// Internal tolerance used by the inversion integral and series.
const INTERNAL_TOL: f64 = 1e-9;
/// Quadrature panels beyond this are considered non-convergent.
const MAX_PANELS: usize = 200_000;
/// Series terms beyond this are considered non-convergent.
const MAX_SERIES_TERMS: usize = 200_000;

/// Accuracy metadata attached to a computed probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    /// Achieved absolute error bound.
    pub bound: f64,
    /// True when the requested accuracy could not be certified.
    pub degraded: bool,
}

impl Accuracy {
    fn good(bound: f64) -> Accuracy {
        Accuracy {
            bound,
            degraded: false,
        }
    }
}

/// Law of shift + sum_i weights_i * V_i^2 with V_i i.i.d. standard normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareMixture {
    weights: Vec<f64>,
    shift: f64,
}

impl ChiSquareMixture {
    pub fn new(weights: Vec<f64>) -> Result<ChiSquareMixture> {
        ChiSquareMixture::with_shift(weights, 0.0)
    }

    pub fn with_shift(weights: Vec<f64>, shift: f64) -> Result<ChiSquareMixture> {
        if weights.is_empty() {
            return Err(Error::Argument("mixture needs at least one weight".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Argument(
                "mixture weights must be positive and finite".into(),
            ));
        }
        if !(shift >= 0.0) || !shift.is_finite() {
            return Err(Error::Argument("shift must be finite and >= 0".into()));
        }
        Ok(ChiSquareMixture { weights, shift })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn mean(&self) -> f64 {
        self.shift + self.weights.iter().sum::<f64>()
    }

    pub fn variance(&self) -> f64 {
        2.0 * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// P(Q <= q); the shift is handled as cdf(q - shift).
    pub fn cdf(&self, q: f64) -> f64 {
        self.cdf_with_accuracy(q).0
    }

    pub fn cdf_with_accuracy(&self, q: f64) -> (f64, Accuracy) {
        let q = q - self.shift;
        if q <= 0.0 {
            return (0.0, Accuracy::good(0.0));
        }
        let s = self.weights.len();
        let max_w = self.weights.iter().cloned().fold(f64::MIN, f64::max);
        let min_w = self.weights.iter().cloned().fold(f64::MAX, f64::min);
        if (max_w - min_w) <= 1e-12 * max_w {
            // Equal weights: exactly a scaled central chi-square.
            return (chi2_cdf(s as f64, q / max_w), Accuracy::good(1e-12));
        }
        if let Some(r) = imhof_cdf(&self.weights, q, INTERNAL_TOL) {
            return clamp_prob(r);
        }
        match series_cdf(&self.weights, q, INTERNAL_TOL) {
            Ok(r) => clamp_prob(r),
            Err((value, bound)) => clamp_prob((
                value,
                Accuracy {
                    bound,
                    degraded: true,
                },
            )),
        }
    }

    /// P(Q > q).
    pub fn survival(&self, q: f64) -> f64 {
        1.0 - self.cdf(q)
    }

    pub fn survival_with_accuracy(&self, q: f64) -> (f64, Accuracy) {
        let (c, acc) = self.cdf_with_accuracy(q);
        (1.0 - c, acc)
    }

    /// Smallest q with cdf(q) = p, located by bracketing and bisection on the
    /// monotone CDF.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Argument(format!(
                "quantile requires p in (0,1), got {p}"
            )));
        }
        let mut lo = self.shift;
        let mut hi = self.shift + self.mean() - self.shift + 12.0 * self.variance().sqrt() + 1.0;
        let mut guard = 0;
        while self.cdf(hi) < p {
            hi = self.shift + (hi - self.shift) * 2.0;
            guard += 1;
            if guard > 200 {
                return Err(Error::Argument("quantile bracketing failed".into()));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let c = self.cdf(mid);
            if (c - p).abs() < 1e-10 || (hi - lo) < 1e-12 * (1.0 + hi.abs()) {
                return Ok(mid);
            }
            if c < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn clamp_prob(r: (f64, Accuracy)) -> (f64, Accuracy) {
    // The inversion integral can overshoot [0,1] by O(tolerance).
    (r.0.clamp(0.0, 1.0), r.1)
}

/// Characteristic-function inversion: P(Q <= q) = 1/2 - (1/pi) I with
/// I = int_0^inf sin(theta(u)) / (u rho(u)) du,
/// theta(u) = (1/2) sum arctan(w u) - q u / 2,
/// rho(u) = prod (1 + w^2 u^2)^(1/4).
///
/// Returns None when the truncation point needed for `tol` implies more
/// oscillations than the quadrature budget allows.
fn imhof_cdf(weights: &[f64], q: f64, tol: f64) -> Option<(f64, Accuracy)> {
    let s = weights.len() as f64;
    let prod_sqrt: f64 = weights.iter().map(|w| w.sqrt()).product();
    // |integrand| <= 1 / (u^(1 + s/2) prod sqrt(w)), so the tail beyond U is
    // bounded by (2 / (pi s)) U^(-s/2) / prod sqrt(w).
    let tail_tol = tol / 2.0;
    let u_limit = (2.0 / (std::f64::consts::PI * s * prod_sqrt * tail_tol)).powf(2.0 / s);
    let u_limit = u_limit.max(1.0);

    let theta = |u: f64| -> f64 {
        0.5 * weights.iter().map(|w| (w * u).atan()).sum::<f64>() - 0.5 * q * u
    };
    let integrand = |u: f64| -> f64 {
        if u == 0.0 {
            return 0.5 * (weights.iter().sum::<f64>() - q);
        }
        let rho: f64 = weights
            .iter()
            .map(|w| (1.0 + w * w * u * u).ln())
            .sum::<f64>();
        theta(u).sin() / (u * (0.25 * rho).exp())
    };

    // Panel count from the total phase swing, so each panel sees at most
    // roughly half an oscillation.
    let phase = 0.5 * s * std::f64::consts::FRAC_PI_2 + 0.5 * q * u_limit;
    let mut panels = ((phase / std::f64::consts::PI).ceil() as usize) * 4 + 64;
    if panels > MAX_PANELS {
        return None;
    }
    panels = panels.max(64);

    let quad_tol = tol / 2.0;
    let step = u_limit / panels as f64;
    let mut integral = 0.0;
    for i in 0..panels {
        let a = i as f64 * step;
        let b = a + step;
        integral += adaptive_simpson(&integrand, a, b, quad_tol / panels as f64, 24);
    }
    let cdf = 0.5 - integral / std::f64::consts::PI;
    Some((cdf, Accuracy::good(tol)))
}

fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, eps: f64, depth: usize) -> f64 {
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fb = f(b);
    let fm = f(m);
    let whole = simpson(a, fa, b, fb, fm);
    adaptive_simpson_rec(f, a, b, fa, fb, fm, whole, eps, depth)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fm: f64,
    whole: f64,
    eps: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, fa, m, fm, flm);
    let right = simpson(m, fm, b, fb, frm);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        left + right + delta / 15.0
    } else {
        adaptive_simpson_rec(f, a, m, fa, fm, flm, left, eps / 2.0, depth - 1)
            + adaptive_simpson_rec(f, m, b, fm, fb, frm, right, eps / 2.0, depth - 1)
    }
}

/// Mixture CDF as a nonnegative series of central chi-square CDFs,
/// P(Q <= q) = sum_k a_k F_{s+2k}(q / beta) with beta = min weight.
/// The a_k are a probability sequence, so the truncated tail mass times the
/// current CDF factor is a rigorous error bound.
fn series_cdf(weights: &[f64], q: f64, tol: f64) -> std::result::Result<(f64, Accuracy), (f64, f64)> {
    let s = weights.len();
    let beta = weights.iter().cloned().fold(f64::MAX, f64::min);
    let x = q / beta;
    let ratios: Vec<f64> = weights.iter().map(|w| 1.0 - beta / w).collect();

    let a0: f64 = weights.iter().map(|w| (beta / w).sqrt()).product();
    let mut a = vec![a0];
    let mut g: Vec<f64> = Vec::new();
    let mut cum_a = a0;
    let mut total = a0 * chi2_cdf(s as f64, x);

    for k in 1..MAX_SERIES_TERMS {
        let gk: f64 = ratios.iter().map(|r| r.powi(k as i32)).sum();
        g.push(gk);
        let mut ak = 0.0;
        for j in 0..k {
            ak += g[k - 1 - j] * a[j];
        }
        ak /= 2.0 * k as f64;
        a.push(ak);
        cum_a += ak;
        let f = chi2_cdf((s + 2 * k) as f64, x);
        total += ak * f;
        // F factors decrease in the degrees of freedom, so the remaining sum
        // is at most the remaining mass times the next factor.
        let remaining = (1.0 - cum_a).max(0.0);
        let bound = remaining * f;
        if bound < tol {
            return Ok((total, Accuracy::good(tol)));
        }
    }
    let remaining = (1.0 - cum_a).max(0.0);
    Err((total + 0.5 * remaining, remaining))
}

/// Central chi-square CDF via the regularized lower incomplete gamma.
pub fn chi2_cdf(df: f64, q: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    gamma_lr(df / 2.0, q / 2.0)
}

/// Upper tail of the central chi-square.
pub fn chi2_survival(df: f64, q: f64) -> f64 {
    1.0 - chi2_cdf(df, q)
}

/// Central chi-square quantile by bisection on the CDF.
pub fn chi2_quantile(df: f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Argument(format!(
            "chi2_quantile requires p in (0,1), got {p}"
        )));
    }
    let mut lo = 0.0;
    let mut hi = df + 12.0 * (2.0 * df).sqrt() + 1.0;
    let mut guard = 0;
    while chi2_cdf(df, hi) < p {
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::Argument("chi2_quantile bracketing failed".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let c = chi2_cdf(df, mid);
        if (c - p).abs() < 1e-12 || (hi - lo) < 1e-13 * (1.0 + hi) {
            return Ok(mid);
        }
        if c < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Noncentral chi-square CDF as a Poisson-weighted series of central CDFs,
/// truncated when the remaining Poisson mass is below 1e-10.
pub fn noncentral_chi2_cdf(df: f64, ncp: f64, q: f64) -> Result<f64> {
    if !(ncp >= 0.0) || !ncp.is_finite() {
        return Err(Error::Argument(format!(
            "noncentrality must be finite and >= 0, got {ncp}"
        )));
    }
    if q <= 0.0 {
        return Ok(0.0);
    }
    if ncp == 0.0 {
        return Ok(chi2_cdf(df, q));
    }
    let half = ncp / 2.0;
    let mut weight = (-half).exp();
    let mut cum = weight;
    let mut total = weight * chi2_cdf(df, q);
    const MAX_TERMS: usize = 500_000;
    for k in 1..MAX_TERMS {
        weight *= half / k as f64;
        cum += weight;
        total += weight * chi2_cdf(df + 2.0 * k as f64, q);
        if 1.0 - cum < 1e-10 {
            return Ok(total.clamp(0.0, 1.0));
        }
    }
    Err(Error::SeriesTruncation {
        terms: MAX_TERMS,
        bound: 1.0 - cum,
    })
}

/// Upper tail of the noncentral chi-square.
pub fn noncentral_chi2_survival(df: f64, ncp: f64, q: f64) -> Result<f64> {
    Ok(1.0 - noncentral_chi2_cdf(df, ncp, q)?)
}
