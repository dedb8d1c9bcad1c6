//! Random-intercept linear mixed model fitted by maximum likelihood.
//!
//! The per-subject covariance sigma^2 (I + lambda J) has closed-form inverse
//! I - (lambda / (1 + lambda n_i)) J and log-determinant log(1 + lambda n_i),
//! so beta and sigma^2 profile out in closed form and the deviance is a
//! one-dimensional function of the variance ratio lambda = sigma_b^2 / sigma^2.
//! That profile is maximized by a grid pass plus golden-section refinement on
//! log lambda over [-12, 12], with the lambda = 0 boundary always evaluated.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::spline::DesignSpec;

const LOG_LAMBDA_LO: f64 = -12.0;
const LOG_LAMBDA_HI: f64 = 12.0;
const LOG_LAMBDA_TOL: f64 = 1e-8;
const GRID_POINTS: usize = 49;

/// Maximum-likelihood fit of the random-intercept model.
#[derive(Debug, Clone)]
pub struct LmmFit {
    /// Fixed-effect coefficients in the column order of the design matrix.
    pub beta: DVector<f64>,
    /// Residual variance.
    pub sigma2: f64,
    /// Variance ratio sigma_b^2 / sigma^2.
    pub lambda: f64,
    /// Maximized ML log-likelihood.
    pub loglik: f64,
    /// Fixed effects plus the two variance parameters.
    pub n_params: usize,
    /// Covariance of the fixed-effect estimates.
    pub cov_beta: DMatrix<f64>,
    /// Rows per subject, in first-appearance order of the group index.
    pub group_sizes: Vec<usize>,
}

impl LmmFit {
    pub fn aic(&self) -> f64 {
        2.0 * self.n_params as f64 - 2.0 * self.loglik
    }

    /// Between-subject variance sigma_b^2.
    pub fn sigma2_b(&self) -> f64 {
        self.lambda * self.sigma2
    }
}

/// Per-subject sufficient statistics bucketed by group size, so one profile
/// evaluation costs O(#distinct sizes x p^2) instead of O(#groups x p^2).
struct Profile {
    n_total: usize,
    /// sum over subjects of X_i' X_i
    xtx: DMatrix<f64>,
    /// sum over subjects of X_i' y_i
    xty: DVector<f64>,
    /// sum over subjects of y_i' y_i
    yty: f64,
    /// per distinct group size n: (n, count, sum s_i s_i', sum ty_i s_i, sum ty_i^2)
    buckets: Vec<(usize, usize, DMatrix<f64>, DVector<f64>, f64)>,
    /// sum over subjects of ln(1 + lambda n_i) needs sizes and counts only
    p: usize,
}

struct ProfileEval {
    beta: DVector<f64>,
    sigma2: f64,
    loglik: f64,
    chol: Cholesky<f64, Dyn>,
}

impl Profile {
    fn build(y: &DVector<f64>, x: &DMatrix<f64>, sizes: &[usize], row_group: &[usize]) -> Profile {
        let p = x.ncols();
        let n_groups = sizes.len();
        let mut s = vec![DVector::<f64>::zeros(p); n_groups];
        let mut ty = vec![0.0f64; n_groups];
        for (r, &g) in row_group.iter().enumerate() {
            for c in 0..p {
                s[g][c] += x[(r, c)];
            }
            ty[g] += y[r];
        }
        let xtx = x.transpose() * x;
        let xty = x.transpose() * y;
        let yty = y.dot(y);

        let mut distinct: Vec<usize> = sizes.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let mut buckets: Vec<(usize, usize, DMatrix<f64>, DVector<f64>, f64)> = distinct
            .into_iter()
            .map(|n| (n, 0, DMatrix::zeros(p, p), DVector::zeros(p), 0.0))
            .collect();
        for g in 0..n_groups {
            let b = buckets
                .iter_mut()
                .find(|(n, ..)| *n == sizes[g])
                .expect("bucket exists");
            b.1 += 1;
            b.2.ger(1.0, &s[g], &s[g], 1.0);
            b.3.axpy(ty[g], &s[g], 1.0);
            b.4 += ty[g] * ty[g];
        }
        Profile {
            n_total: y.len(),
            xtx,
            xty,
            yty,
            buckets,
            p,
        }
    }

    /// Profiled evaluation at a fixed variance ratio. Returns None when the
    /// weighted normal equations are not positive definite.
    fn eval(&self, lambda: f64) -> Option<ProfileEval> {
        let mut xtwx = self.xtx.clone();
        let mut xtwy = self.xty.clone();
        let mut ywy = self.yty;
        let mut log_det_sum = 0.0;
        for (n, count, ss, tys, tysq) in &self.buckets {
            let nf = *n as f64;
            let c = lambda / (1.0 + lambda * nf);
            if c != 0.0 {
                xtwx.zip_apply(ss, |a, b| *a -= c * b);
                xtwy.axpy(-c, tys, 1.0);
                ywy -= c * tysq;
            }
            log_det_sum += *count as f64 * (1.0 + lambda * nf).ln();
        }
        let chol = Cholesky::new(xtwx)?;
        let beta = chol.solve(&xtwy);
        let rwr = ywy - beta.dot(&xtwy);
        if rwr <= 0.0 || !rwr.is_finite() {
            return None;
        }
        let n = self.n_total as f64;
        let sigma2 = rwr / n;
        let loglik = -0.5
            * (n * (2.0 * std::f64::consts::PI * sigma2).ln() + n + log_det_sum);
        Some(ProfileEval {
            beta,
            sigma2,
            loglik,
            chol,
        })
    }

    fn n_params(&self) -> usize {
        self.p + 2
    }
}

/// Map an arbitrary group index to contiguous ids in first-appearance order,
/// returning (per-row contiguous id, group sizes).
fn normalize_groups(groups: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut map = std::collections::HashMap::new();
    let mut row_group = Vec::with_capacity(groups.len());
    let mut sizes: Vec<usize> = Vec::new();
    for &g in groups {
        let id = *map.entry(g).or_insert_with(|| {
            sizes.push(0);
            sizes.len() - 1
        });
        sizes[id] += 1;
        row_group.push(id);
    }
    (row_group, sizes)
}

/// Scale each column to unit max-abs; returns the scale factors.
/// Zero columns keep scale 1 and are caught by the rank check.
fn scale_columns(x: &mut DMatrix<f64>) -> Vec<f64> {
    let mut scales = vec![1.0f64; x.ncols()];
    for c in 0..x.ncols() {
        let m = x.column(c).amax();
        if m > 0.0 {
            scales[c] = m;
            for r in 0..x.nrows() {
                x[(r, c)] /= m;
            }
        }
    }
    scales
}

/// Incremental Cholesky rank check on X'X; returns the columns that are
/// (numerically) linear combinations of earlier ones.
fn dependent_columns(xtx: &DMatrix<f64>, rel_tol: f64) -> Vec<usize> {
    let p = xtx.ncols();
    let mut l = DMatrix::<f64>::zeros(p, p);
    let mut dropped = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    for j in 0..p {
        let mut d = xtx[(j, j)];
        let mut row = vec![0.0f64; kept.len()];
        for (kidx, &k) in kept.iter().enumerate() {
            let mut v = xtx[(j, k)];
            for m in 0..kidx {
                v -= row[m] * l[(k, m)];
            }
            // l[(k, kidx)] is the pivot for kept column k
            let v = v / l[(k, kidx)];
            row[kidx] = v;
            d -= v * v;
        }
        if d <= rel_tol * xtx[(j, j)].max(rel_tol) {
            dropped.push(j);
        } else {
            let kidx = kept.len();
            for (m, &v) in row.iter().enumerate() {
                l[(j, m)] = v;
            }
            l[(j, kidx)] = d.sqrt();
            kept.push(j);
        }
    }
    dropped
}

/// Fit the random-intercept model by ML.
pub fn fit_lmm(y: &DVector<f64>, x: &DMatrix<f64>, groups: &[usize]) -> Result<LmmFit> {
    let n = y.len();
    let p = x.ncols();
    if x.nrows() != n || groups.len() != n {
        return Err(Error::Inconsistent(format!(
            "y has {n} rows, X has {}, groups has {}",
            x.nrows(),
            groups.len()
        )));
    }
    if n <= p {
        return Err(Error::Underdetermined { rows: n, cols: p });
    }
    let (row_group, sizes) = normalize_groups(groups);
    if sizes.len() < 2 {
        return Err(Error::InsufficientData(
            "need at least 2 subjects for a random intercept".into(),
        ));
    }

    let mut xs = x.clone();
    let scales = scale_columns(&mut xs);
    let xtx = xs.transpose() * &xs;
    let dep = dependent_columns(&xtx, 1e-9);
    if !dep.is_empty() {
        return Err(Error::SingularDesign(dep));
    }

    let profile = Profile::build(y, &xs, &sizes, &row_group);

    // coarse grid over log lambda, then golden-section refinement
    let ll_at = |log_lam: f64| profile.eval(log_lam.exp()).map(|e| e.loglik);
    let mut best_log = None;
    let mut best_ll = f64::NEG_INFINITY;
    for k in 0..GRID_POINTS {
        let lg =
            LOG_LAMBDA_LO + (LOG_LAMBDA_HI - LOG_LAMBDA_LO) * k as f64 / (GRID_POINTS - 1) as f64;
        if let Some(v) = ll_at(lg) {
            if v > best_ll {
                best_ll = v;
                best_log = Some(lg);
            }
        }
    }
    let zero = profile.eval(0.0);

    let mut lambda = 0.0;
    let mut best = match (&zero, best_log) {
        (None, None) => return Err(Error::SingularDesign(Vec::new())),
        (Some(z), None) => {
            lambda = 0.0;
            z.loglik
        }
        _ => f64::NEG_INFINITY,
    };
    if let Some(center) = best_log {
        let step = (LOG_LAMBDA_HI - LOG_LAMBDA_LO) / (GRID_POINTS - 1) as f64;
        let mut a = (center - step).max(LOG_LAMBDA_LO);
        let mut b = (center + step).min(LOG_LAMBDA_HI);
        let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
        let mut c = b - phi * (b - a);
        let mut d = a + phi * (b - a);
        let mut fc = ll_at(c).unwrap_or(f64::NEG_INFINITY);
        let mut fd = ll_at(d).unwrap_or(f64::NEG_INFINITY);
        while (b - a) > LOG_LAMBDA_TOL {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - phi * (b - a);
                fc = ll_at(c).unwrap_or(f64::NEG_INFINITY);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + phi * (b - a);
                fd = ll_at(d).unwrap_or(f64::NEG_INFINITY);
            }
        }
        let refined = 0.5 * (a + b);
        let candidates = [refined, center];
        for lg in candidates {
            if let Some(v) = ll_at(lg) {
                if v > best {
                    best = v;
                    lambda = lg.exp();
                }
            }
        }
    }
    if let Some(z) = &zero {
        if z.loglik >= best {
            lambda = 0.0;
        }
    }

    let eval = profile
        .eval(lambda)
        .ok_or_else(|| Error::SingularDesign(Vec::new()))?;

    // unscale: beta_j = beta_scaled_j / scale_j; cov = D^-1 C D^-1
    let mut beta = eval.beta.clone();
    for j in 0..p {
        beta[j] /= scales[j];
    }
    let mut cov = eval.chol.inverse() * eval.sigma2;
    for i in 0..p {
        for j in 0..p {
            cov[(i, j)] /= scales[i] * scales[j];
        }
    }
    // symmetrize against round-off
    for i in 0..p {
        for j in (i + 1)..p {
            let m = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = m;
            cov[(j, i)] = m;
        }
    }

    Ok(LmmFit {
        beta,
        sigma2: eval.sigma2,
        lambda,
        loglik: eval.loglik,
        n_params: profile.n_params(),
        cov_beta: cov,
        group_sizes: sizes,
    })
}

/// Exact Gaussian log-likelihood at the given parameters.
pub fn loglik_at(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    groups: &[usize],
    beta: &DVector<f64>,
    sigma2: f64,
    lambda: f64,
) -> Result<f64> {
    if sigma2 <= 0.0 {
        return Err(Error::Domain(format!("sigma2 must be > 0, got {sigma2}")));
    }
    if lambda < 0.0 {
        return Err(Error::Domain(format!("lambda must be >= 0, got {lambda}")));
    }
    let (row_group, sizes) = normalize_groups(groups);
    let r = y - x * beta;
    let mut rr = 0.0;
    let mut tr = vec![0.0f64; sizes.len()];
    for (i, &g) in row_group.iter().enumerate() {
        rr += r[i] * r[i];
        tr[g] += r[i];
    }
    let mut quad = rr;
    let mut log_det = 0.0;
    for (g, &n_i) in sizes.iter().enumerate() {
        let nf = n_i as f64;
        let c = lambda / (1.0 + lambda * nf);
        quad -= c * tr[g] * tr[g];
        log_det += (1.0 + lambda * nf).ln();
    }
    let n = y.len() as f64;
    Ok(-0.5 * (n * (2.0 * std::f64::consts::PI * sigma2).ln() + log_det + quad / sigma2))
}

/// Shrunken per-subject intercepts b_i = (lambda / (1 + lambda n_i)) 1' r_i.
pub fn blup_intercepts(
    fit: &LmmFit,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    groups: &[usize],
) -> Result<Vec<f64>> {
    let (row_group, sizes) = normalize_groups(groups);
    if sizes != fit.group_sizes {
        return Err(Error::Inconsistent(
            "group structure does not match the fit".into(),
        ));
    }
    let r = y - x * &fit.beta;
    let mut tr = vec![0.0f64; sizes.len()];
    for (i, &g) in row_group.iter().enumerate() {
        tr[g] += r[i];
    }
    Ok(sizes
        .iter()
        .zip(&tr)
        .map(|(&n_i, &t)| fit.lambda / (1.0 + fit.lambda * n_i as f64) * t)
        .collect())
}

/// Population curve with pointwise 95% confidence band for one group.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PredictedCurve {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

const Z_95: f64 = 1.959963984540054;

/// Predicted population trajectory over `grid` for a case or control with the
/// given covariate profile. Fixed-effects band only.
pub fn predict_curve(
    fit: &LmmFit,
    spec: &DesignSpec,
    is_case: bool,
    covariates: &[f64],
    grid: &[f64],
) -> Result<PredictedCurve> {
    if fit.beta.len() != spec.n_cols() {
        return Err(Error::Inconsistent(format!(
            "fit has {} coefficients, design spec expects {}",
            fit.beta.len(),
            spec.n_cols()
        )));
    }
    let mut mean = Vec::with_capacity(grid.len());
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    for &t in grid {
        if !(-crate::spline::WINDOW_DAYS..=0.0).contains(&t) {
            return Err(Error::InvalidInput(format!(
                "grid point {t} outside the lookback window"
            )));
        }
        let row = spec.row_at(t, is_case, covariates)?;
        let m = row.dot(&fit.beta);
        let var = (row.transpose() * &fit.cov_beta * &row)[(0, 0)].max(0.0);
        let half = Z_95 * var.sqrt();
        mean.push(m);
        lower.push(m - half);
        upper.push(m + half);
    }
    Ok(PredictedCurve {
        grid: grid.to_vec(),
        mean,
        lower,
        upper,
    })
}
