//! Independent oracles used by the test suites.
//!
//! Everything in this module recomputes quantities along a deliberately
//! different route than the production code (dense matrices, brute-force
//! pairwise counts, numerical quadrature) so the two can be checked against
//! each other. Not part of the public API.
#![doc(hidden)]

use nalgebra::{DMatrix, DVector};

/// Chi-square survival function by adaptive Simpson quadrature of the density.
pub fn chi2_sf_quadrature(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let a = df as f64 / 2.0;
    let log_norm = -a * std::f64::consts::LN_2 - crate::stats::ln_gamma(a);
    let density = |t: f64| -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        (log_norm + (a - 1.0) * t.ln() - t / 2.0).exp()
    };
    // integrate the upper tail to a point where the remainder is below 1e-300
    let hi = x + 1500.0;
    adaptive_simpson(&density, x, hi, 1e-13, 60)
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let m = 0.5 * (a + b);
    let whole = simpson(f, a, b);
    let left = simpson(f, a, m);
    let right = simpson(f, m, b);
    if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
        left + right + (left + right - whole) / 15.0
    } else {
        adaptive_simpson(f, a, m, tol / 2.0, depth - 1)
            + adaptive_simpson(f, m, b, tol / 2.0, depth - 1)
    }
}

/// Exact Gaussian log-likelihood of the random-intercept model via an explicit
/// dense N x N covariance matrix.
pub fn dense_loglik(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    groups: &[usize],
    beta: &DVector<f64>,
    sigma2: f64,
    lambda: f64,
) -> f64 {
    let n = y.len();
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut v = 0.0;
            if groups[i] == groups[j] {
                v += lambda * sigma2;
            }
            if i == j {
                v += sigma2;
            }
            cov[(i, j)] = v;
        }
    }
    let r = y - x * beta;
    let chol = cov.clone().cholesky().expect("dense covariance SPD");
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let solved = chol.solve(&r);
    let quad = r.dot(&solved);
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad)
}

/// Profiled dense GLS at a fixed variance ratio: returns (beta, sigma2, loglik, cov_beta).
pub fn dense_profile(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    groups: &[usize],
    lambda: f64,
) -> (DVector<f64>, f64, f64, DMatrix<f64>) {
    let n = y.len();
    // correlation-scale covariance (sigma2 factored out)
    let mut cor = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut v = 0.0;
            if groups[i] == groups[j] {
                v += lambda;
            }
            if i == j {
                v += 1.0;
            }
            cor[(i, j)] = v;
        }
    }
    let vinv = cor.clone().try_inverse().expect("invertible");
    let xtvx = x.transpose() * &vinv * x;
    let xtvy = x.transpose() * &vinv * y;
    let xtvx_inv = xtvx.clone().try_inverse().expect("full rank");
    let beta = &xtvx_inv * xtvy;
    let r = y - x * &beta;
    let quad = (r.transpose() * &vinv * &r)[(0, 0)];
    let sigma2 = quad / n as f64;
    let ll = dense_loglik(y, x, groups, &beta, sigma2, lambda);
    let cov_beta = xtvx_inv * sigma2;
    (beta, sigma2, ll, cov_beta)
}

/// Brute-force ML optimizer for the random-intercept model: fine grid over
/// log-lambda followed by golden-section refinement, all through the dense path.
pub fn dense_fit(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    groups: &[usize],
) -> (DVector<f64>, f64, f64, f64) {
    let ll_of = |log_lam: f64| dense_profile(y, x, groups, log_lam.exp()).2;
    let mut best_log = -12.0;
    let mut best_ll = f64::NEG_INFINITY;
    let grid = 121;
    for k in 0..grid {
        let ll0 = -12.0 + 24.0 * k as f64 / (grid - 1) as f64;
        let v = ll_of(ll0);
        if v > best_ll {
            best_ll = v;
            best_log = ll0;
        }
    }
    // golden section around the best grid point
    let (mut a, mut b) = (best_log - 0.25, best_log + 0.25);
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (ll_of(c), ll_of(d));
    while (b - a) > 1e-10 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = ll_of(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = ll_of(d);
        }
    }
    let log_lam = 0.5 * (a + b);
    let mut lambda = log_lam.exp();
    let (_, _, ll_opt, _) = dense_profile(y, x, groups, lambda);
    let (_, _, ll_zero, _) = dense_profile(y, x, groups, 0.0);
    if ll_zero >= ll_opt {
        lambda = 0.0;
    }
    let (beta, sigma2, ll, _) = dense_profile(y, x, groups, lambda);
    (beta, sigma2, lambda, ll)
}

/// O(cases x controls) pairwise c-statistic with half credit for ties.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let cases: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(&s, _)| s)
        .collect();
    let controls: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(&s, _)| s)
        .collect();
    let mut total = 0.0;
    for &c in &cases {
        for &k in &controls {
            if c > k {
                total += 1.0;
            } else if c == k {
                total += 0.5;
            }
        }
    }
    total / (cases.len() as f64 * controls.len() as f64)
}

/// Kolmogorov-Smirnov distance of a sample from Uniform(0, 1).
pub fn ks_uniform(sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in s.iter().enumerate() {
        let hi = (i as f64 + 1.0) / n - v;
        let lo = v - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    d
}
