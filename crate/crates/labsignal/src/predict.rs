//! Held-out validation of screened markers.
//!
//! The original analysis this design follows scored subjects with a penalized
//! functional regression; here a transparent two-stage substitute is used:
//! deterministic window summary features feed a plain logistic model, and
//! discrimination is compared via paired DeLong. Any reasonable predictor
//! suffices to demonstrate that a screened marker carries signal, which is
//! the only claim being validated. Report headers state the substitution.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::screen::AnalysisRecord;
use crate::stats::normal_sf;

/// Pseudo-observations governing how hard the subject intercept is shrunk
/// toward the pooled mean; a subject with n measurements keeps n/(n+5) of
/// its deviation.
const SHRINKAGE_PRIOR_OBS: f64 = 5.0;
/// Standardized coefficient norm beyond which the fit is declared separable.
const SEPARABILITY_NORM: f64 = 30.0;
const RIDGE_FALLBACK: f64 = 1e-4;
const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 100;

/// Names of the per-marker summary features, in row order.
pub const MARKER_FEATURE_NAMES: [&str; 5] =
    ["mean", "slope", "recent_departure", "shrunken_intercept", "missing"];

/// Window mean, OLS slope, recent departure and missingness for one
/// subject's windowed series. The shrunken intercept needs the pooled mean
/// and is added by `build_features`.
fn series_summaries(points: &[(f64, f64)]) -> (f64, f64, f64, f64) {
    let n = points.len();
    if n == 0 {
        return (0.0, 0.0, 0.0, 1.0);
    }
    let mean = points.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let slope = if n >= 2 {
        let tbar = points.iter().map(|p| p.0).sum::<f64>() / n as f64;
        let sxx: f64 = points.iter().map(|p| (p.0 - tbar).powi(2)).sum();
        if sxx > 0.0 {
            points
                .iter()
                .map(|p| (p.0 - tbar) * (p.1 - mean))
                .sum::<f64>()
                / sxx
        } else {
            0.0
        }
    } else {
        0.0
    };
    let window_mean = |lo: f64, hi: f64| {
        let vals: Vec<f64> = points
            .iter()
            .filter(|p| p.0 >= lo && p.0 <= hi)
            .map(|p| p.1)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    let departure = match (window_mean(-14.0, 0.0), window_mean(-60.0, -30.0)) {
        (Some(recent), Some(base)) => recent - base,
        _ => 0.0,
    };
    let missing = if n < 2 { 1.0 } else { 0.0 };
    (mean, slope, departure, missing)
}

/// Feature rows and labels for a set of analysis records. With
/// `with_marker`, each row carries the five marker summaries after the
/// demographics; otherwise demographics only.
pub fn build_features(records: &[AnalysisRecord], with_marker: bool) -> (Vec<Vec<f64>>, Vec<bool>) {
    let summaries: Vec<(f64, f64, f64, f64)> = records
        .iter()
        .map(|r| series_summaries(&r.points))
        .collect();
    // pooled mean over observed subjects anchors the shrinkage target
    let observed: Vec<&(f64, f64, f64, f64)> = records
        .iter()
        .zip(&summaries)
        .filter(|(r, _)| !r.points.is_empty())
        .map(|(_, s)| s)
        .collect();
    let grand_mean = if observed.is_empty() {
        0.0
    } else {
        observed.iter().map(|s| s.0).sum::<f64>() / observed.len() as f64
    };
    let mut rows = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for (r, &(mean, slope, departure, missing)) in records.iter().zip(&summaries) {
        let mut row = r.covariates.clone();
        if with_marker {
            let n = r.points.len() as f64;
            let shrunken = if r.points.is_empty() {
                0.0
            } else {
                n / (n + SHRINKAGE_PRIOR_OBS) * (mean - grand_mean)
            };
            let mean_feature = if r.points.is_empty() { 0.0 } else { mean };
            row.extend_from_slice(&[mean_feature, slope, departure, shrunken, missing]);
        }
        rows.push(row);
        labels.push(r.is_case);
    }
    (rows, labels)
}

/// A fitted logistic model. Coefficients are on the original feature scale,
/// intercept first.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub coefficients: DVector<f64>,
    pub separable: bool,
    pub converged: bool,
}

impl LogisticFit {
    /// Linear predictor; monotone in the event probability, so it is
    /// interchangeable with the probability for ranking purposes.
    pub fn score(&self, features: &[f64]) -> f64 {
        assert_eq!(features.len() + 1, self.coefficients.len());
        self.coefficients[0]
            + features
                .iter()
                .zip(self.coefficients.iter().skip(1))
                .map(|(x, b)| x * b)
                .sum::<f64>()
    }
}

fn irls(
    x: &DMatrix<f64>,
    y: &[bool],
    ridge: f64,
) -> Option<(DVector<f64>, bool, bool)> {
    let (n, p) = x.shape();
    let mut beta = DVector::zeros(p);
    for _ in 0..IRLS_MAX_ITER {
        let eta = x * &beta;
        let mut xtwx = DMatrix::zeros(p, p);
        let mut xtr = DVector::zeros(p);
        for i in 0..n {
            let mu = 1.0 / (1.0 + (-eta[i]).exp());
            let w = (mu * (1.0 - mu)).max(1e-10);
            let resid = (if y[i] { 1.0 } else { 0.0 }) - mu;
            let xi = x.row(i).transpose();
            xtwx.ger(w, &xi, &xi, 1.0);
            xtr.axpy(resid, &xi, 1.0);
        }
        // penalty on the slopes only, never the intercept
        for j in 1..p {
            xtwx[(j, j)] += ridge;
            xtr[j] -= ridge * beta[j];
        }
        let delta = xtwx.cholesky()?.solve(&xtr);
        beta += &delta;
        if beta.norm() > SEPARABILITY_NORM {
            return Some((beta, false, true));
        }
        if delta.amax() < IRLS_TOL {
            return Some((beta, true, false));
        }
    }
    // Newton converges quadratically whenever the MLE is finite, so running
    // out of iterations is itself evidence of (quasi-)separation
    Some((beta, false, true))
}

/// Fit a logistic model by iteratively reweighted least squares from a zero
/// start. Features are standardized internally; diverging coefficients mark
/// the data separable and trigger a small ridge penalty so finite
/// coefficients are still returned.
pub fn fit_logistic(rows: &[Vec<f64>], labels: &[bool]) -> Result<LogisticFit> {
    if rows.len() != labels.len() {
        return Err(Error::PairingMismatch);
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::DegenerateLabels);
    }
    let n = rows.len();
    let p = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::Inconsistent("ragged feature rows".into()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature value".into()));
    }
    // standardize; constant columns carry no information and are excluded
    // from the solve (their coefficient is zero)
    let mut means = vec![0.0; p];
    let mut sds = vec![1.0; p];
    let mut active = Vec::with_capacity(p);
    for j in 0..p {
        let m = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let v = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n as f64;
        means[j] = m;
        if v > 0.0 {
            sds[j] = v.sqrt();
            active.push(j);
        }
    }
    let pa = active.len();
    let mut x = DMatrix::zeros(n, pa + 1);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for (c, &j) in active.iter().enumerate() {
            x[(i, c + 1)] = (rows[i][j] - means[j]) / sds[j];
        }
    }

    let attempt = irls(&x, labels, 0.0);
    let (beta_std, converged, separable) = match attempt {
        Some((_, _, true)) | None => {
            let (b, c, _) = irls(&x, labels, RIDGE_FALLBACK).ok_or_else(|| {
                Error::SingularDesign((0..=p).collect())
            })?;
            (b, c, true)
        }
        Some((b, c, false)) => (b, c, false),
    };

    // back to the original scale
    let mut coefficients = DVector::zeros(p + 1);
    let mut intercept = beta_std[0];
    for (c, &j) in active.iter().enumerate() {
        coefficients[j + 1] = beta_std[c + 1] / sds[j];
        intercept -= beta_std[c + 1] * means[j] / sds[j];
    }
    coefficients[0] = intercept;
    Ok(LogisticFit {
        coefficients,
        separable,
        converged,
    })
}

/// Area under the ROC curve with counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RocResult {
    pub c: f64,
    pub n_cases: usize,
    pub n_controls: usize,
}

/// Rank-based (midrank) Mann–Whitney c-statistic, equal to the pairwise
/// definition with half credit for ties.
pub fn c_statistic(scores: &[f64], labels: &[bool]) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(Error::PairingMismatch);
    }
    let m = labels.iter().filter(|&&l| l).count();
    let n = labels.len() - m;
    if m == 0 || n == 0 {
        return Err(Error::DegenerateLabels);
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite score".into()));
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let c = (rank_sum - m as f64 * (m as f64 + 1.0) / 2.0) / (m as f64 * n as f64);
    Ok(RocResult {
        c,
        n_cases: m,
        n_controls: n,
    })
}

fn midranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    ranks
}

/// DeLong placement values: for each case, the fraction of controls it
/// outranks (ties half), and symmetrically for controls.
fn placements(scores: &[f64], labels: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let ranks = midranks(scores);
    let case_scores: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(s, _)| *s)
        .collect();
    let control_scores: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(s, _)| *s)
        .collect();
    let case_ranks = midranks(&case_scores);
    let control_ranks = midranks(&control_scores);
    let m = case_scores.len() as f64;
    let n = control_scores.len() as f64;
    let mut v10 = Vec::with_capacity(case_scores.len());
    let mut v01 = Vec::with_capacity(control_scores.len());
    let mut ci = 0;
    let mut ki = 0;
    for (i, &l) in labels.iter().enumerate() {
        if l {
            v10.push((ranks[i] - case_ranks[ci]) / n);
            ci += 1;
        } else {
            v01.push(1.0 - (ranks[i] - control_ranks[ki]) / m);
            ki += 1;
        }
    }
    (v10, v01)
}

/// One-sided paired DeLong test that the augmented scores discriminate
/// better than the base scores on the same subjects.
pub fn compare_auc(base: &[f64], augmented: &[f64], labels: &[bool]) -> Result<f64> {
    if base.len() != augmented.len() || base.len() != labels.len() {
        return Err(Error::PairingMismatch);
    }
    let c_base = c_statistic(base, labels)?;
    let c_aug = c_statistic(augmented, labels)?;
    let (b10, b01) = placements(base, labels);
    let (a10, a01) = placements(augmented, labels);
    let d10: Vec<f64> = a10.iter().zip(&b10).map(|(a, b)| a - b).collect();
    let d01: Vec<f64> = a01.iter().zip(&b01).map(|(a, b)| a - b).collect();
    let sample_var = |v: &[f64]| {
        if v.len() < 2 {
            return 0.0;
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
    };
    let var = sample_var(&d10) / d10.len() as f64 + sample_var(&d01) / d01.len() as f64;
    let diff = c_aug.c - c_base.c;
    if var <= 0.0 {
        // degenerate variance: identical placements mean no evidence either way
        return Ok(if diff == 0.0 {
            0.5
        } else if diff > 0.0 {
            0.0
        } else {
            1.0
        });
    }
    Ok(normal_sf(diff / var.sqrt()))
}

/// Validation verdict for one marker, one row of the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub marker: String,
    pub c_base: f64,
    pub c_marker: f64,
    pub p_improvement: f64,
    pub n_validation_cases: usize,
    pub n_validation_controls: usize,
    pub separability_flag: bool,
}

/// Guard that the training and validation cohorts share no calendar-month
/// stratum; the split construction guarantees it, this enforces it.
pub fn assert_disjoint_strata(train: &Cohort, validation: &Cohort) -> Result<()> {
    let t: BTreeSet<&str> = train.records.iter().map(|r| r.stratum.as_str()).collect();
    let v: BTreeSet<&str> = validation
        .records
        .iter()
        .map(|r| r.stratum.as_str())
        .collect();
    if t.intersection(&v).next().is_some() {
        return Err(Error::Inconsistent(
            "training and validation cohorts share strata".into(),
        ));
    }
    Ok(())
}

/// Fit demographics-only and demographics+marker models on the training
/// records, score the validation records, and test the paired improvement
/// in discrimination. Validation labels are never touched during training.
pub fn validate_marker(
    marker: &str,
    train: &[AnalysisRecord],
    validation: &[AnalysisRecord],
) -> Result<ValidationOutcome> {
    let (train_base, train_labels) = build_features(train, false);
    let (train_full, _) = build_features(train, true);
    let base_fit = fit_logistic(&train_base, &train_labels)?;
    let full_fit = fit_logistic(&train_full, &train_labels)?;

    let (val_base, val_labels) = build_features(validation, false);
    let (val_full, _) = build_features(validation, true);
    let base_scores: Vec<f64> = val_base.iter().map(|r| base_fit.score(r)).collect();
    let full_scores: Vec<f64> = val_full.iter().map(|r| full_fit.score(r)).collect();

    let c_base = c_statistic(&base_scores, &val_labels)?;
    let c_marker = c_statistic(&full_scores, &val_labels)?;
    let p_improvement = compare_auc(&base_scores, &full_scores, &val_labels)?;
    Ok(ValidationOutcome {
        marker: marker.to_string(),
        c_base: c_base.c,
        c_marker: c_marker.c,
        p_improvement,
        n_validation_cases: c_base.n_cases,
        n_validation_controls: c_base.n_controls,
        separability_flag: base_fit.separable || full_fit.separable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::pairwise_auc;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record(id: &str, is_case: bool, points: Vec<(f64, f64)>) -> AnalysisRecord {
        AnalysisRecord {
            id: id.to_string(),
            is_case,
            covariates: vec![],
            points,
        }
    }

    #[test]
    fn features_constant_series() {
        let r = record(
            "a",
            true,
            vec![(-150.0, 4.0), (-90.0, 4.0), (-40.0, 4.0), (-5.0, 4.0)],
        );
        let (rows, _) = build_features(&[r], true);
        let f = &rows[0];
        assert_relative_eq!(f[0], 4.0, epsilon = 1e-12); // mean
        assert_relative_eq!(f[1], 0.0, epsilon = 1e-12); // slope
        assert_relative_eq!(f[2], 0.0, epsilon = 1e-12); // recent departure
        assert_eq!(f[4], 0.0); // not missing
    }

    #[test]
    fn features_exact_line_slope() {
        let pts: Vec<(f64, f64)> = (0..10)
            .map(|i| {
                let t = -170.0 + 18.0 * i as f64;
                (t, 2.5 + 0.013 * t)
            })
            .collect();
        let (rows, _) = build_features(&[record("a", false, pts)], true);
        assert_relative_eq!(rows[0][1], 0.013, epsilon = 1e-10);
    }

    #[test]
    fn features_empty_series() {
        let (rows, _) = build_features(&[record("a", true, vec![])], true);
        assert_eq!(rows[0], vec![0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn features_single_point_flagged() {
        let (rows, _) = build_features(&[record("a", true, vec![(-30.0, 5.0)])], true);
        assert_eq!(rows[0][1], 0.0); // slope
        assert_eq!(rows[0][4], 1.0); // missingness
    }

    #[test]
    fn shrinkage_pulls_toward_pooled_mean() {
        let few = record("few", true, vec![(-30.0, 12.0)]);
        let many = record(
            "many",
            true,
            (0..20).map(|i| (-170.0 + 8.0 * i as f64, 12.0)).collect(),
        );
        let anchor = record("anchor", false, vec![(-30.0, 0.0), (-20.0, 0.0)]);
        let (rows, _) = build_features(&[few, many, anchor], true);
        let shrunk_few = rows[0][3];
        let shrunk_many = rows[1][3];
        assert!(shrunk_few > 0.0 && shrunk_many > 0.0);
        assert!(shrunk_few < shrunk_many, "more data, less shrinkage");
    }

    #[test]
    fn logistic_intercept_only_mle() {
        let rows: Vec<Vec<f64>> = (0..100).map(|_| vec![]).collect();
        let labels: Vec<bool> = (0..100).map(|i| i < 30).collect();
        let fit = fit_logistic(&rows, &labels).unwrap();
        assert!(fit.converged && !fit.separable);
        assert_relative_eq!(
            fit.coefficients[0],
            (0.3f64 / 0.7).ln(),
            epsilon = 1e-6
        );
    }

    #[test]
    fn logistic_gradient_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 150;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>() * 4.0 - 2.0])
            .collect();
        let labels: Vec<bool> = rows
            .iter()
            .map(|r| {
                let eta = 0.4 + 0.8 * r[0] - 0.5 * r[1];
                rng.gen::<f64>() < 1.0 / (1.0 + (-eta as f64).exp())
            })
            .collect();
        let fit = fit_logistic(&rows, &labels).unwrap();
        assert!(fit.converged);
        // analytic gradient of the log-likelihood at the returned coefficients
        let mut grad = vec![0.0; 3];
        for (r, &l) in rows.iter().zip(&labels) {
            let eta = fit.score(r);
            let resid = (if l { 1.0 } else { 0.0 }) - 1.0 / (1.0 + (-eta).exp());
            grad[0] += resid;
            grad[1] += resid * r[0];
            grad[2] += resid * r[1];
        }
        for g in grad {
            assert!(g.abs() < 1e-6, "gradient component {g} too large");
        }
    }

    #[test]
    fn logistic_flags_separable_data() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![if i < 20 { -1.0 } else { 1.0 }, i as f64 * 0.01])
            .collect();
        let labels: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let fit = fit_logistic(&rows, &labels).unwrap();
        assert!(fit.separable);
        assert!(fit.coefficients.iter().all(|c| c.is_finite()));
        // separable direction still scores cases above controls
        assert!(fit.score(&[1.0, 0.3]) > fit.score(&[-1.0, 0.1]));
    }

    #[test]
    fn logistic_rejects_single_class() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let labels = vec![true; 10];
        assert!(matches!(
            fit_logistic(&rows, &labels),
            Err(Error::DegenerateLabels)
        ));
    }

    #[test]
    fn c_statistic_perfect_and_ties() {
        let r = c_statistic(
            &[0.9, 0.8, 0.1, 0.2],
            &[true, true, false, false],
        )
        .unwrap();
        assert_eq!(r.c, 1.0);
        assert_eq!((r.n_cases, r.n_controls), (2, 2));
        let r = c_statistic(&[0.5; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(r.c, 0.5);
    }

    #[test]
    fn c_statistic_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let n = 200;
            let labels: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() < 0.4).collect();
            if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
                continue;
            }
            // coarse grid forces plenty of ties
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.gen::<f64>() * 10.0).floor() / 10.0)
                .collect();
            let fast = c_statistic(&scores, &labels).unwrap().c;
            let slow = pairwise_auc(&scores, &labels);
            assert_relative_eq!(fast, slow, epsilon = 1e-12);
        }
    }

    #[test]
    fn c_statistic_monotone_invariant() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.05, 0.62];
        let labels = [false, true, false, true, false, true];
        let a = c_statistic(&scores, &labels).unwrap().c;
        let transformed: Vec<f64> = scores.iter().map(|s| (5.0 * s).exp() + 3.0).collect();
        let b = c_statistic(&transformed, &labels).unwrap().c;
        assert_eq!(a, b);
    }

    #[test]
    fn compare_auc_null_center_and_power() {
        let labels: Vec<bool> = (0..200).map(|i| i % 2 == 0).collect();
        let scores: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(compare_auc(&scores, &scores, &labels).unwrap(), 0.5);

        let base = vec![0.0; 200];
        let perfect: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
        let p = compare_auc(&base, &perfect, &labels).unwrap();
        assert!(p < 0.001, "p = {p}");
        // and the reverse direction lands in the upper tail
        let p_rev = compare_auc(&perfect, &base, &labels).unwrap();
        assert!(p_rev > 0.999);
    }

    #[test]
    fn compare_auc_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 120;
        let labels: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        let base: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let aug: Vec<f64> = base
            .iter()
            .zip(&labels)
            .map(|(b, &l)| b + if l { 0.3 } else { 0.0 })
            .collect();
        let p1 = compare_auc(&base, &aug, &labels).unwrap();
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            idx.swap(i, rng.gen_range(0..=i));
        }
        let pb: Vec<f64> = idx.iter().map(|&i| base[i]).collect();
        let pa: Vec<f64> = idx.iter().map(|&i| aug[i]).collect();
        let pl: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        let p2 = compare_auc(&pb, &pa, &pl).unwrap();
        assert_relative_eq!(p1, p2, epsilon = 1e-12);
    }

    #[test]
    fn compare_auc_rejects_mismatched_lengths() {
        let labels = [true, false, true, false];
        assert!(matches!(
            compare_auc(&[0.1, 0.2, 0.3], &[0.1, 0.2, 0.3, 0.4], &labels),
            Err(Error::PairingMismatch)
        ));
    }

    #[test]
    fn validate_marker_detects_synthetic_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut make = |n: usize, tag: &str| -> Vec<AnalysisRecord> {
            (0..n)
                .map(|i| {
                    let is_case = i % 2 == 0;
                    let shift = if is_case { -1.5 } else { 0.0 };
                    let points: Vec<(f64, f64)> = (0..12)
                        .map(|k| {
                            let t = -170.0 + 15.0 * k as f64;
                            let ramp = if t > -30.0 { shift * (t + 30.0) / 30.0 } else { 0.0 };
                            (t, 10.0 + ramp + 0.3 * (rng.gen::<f64>() - 0.5))
                        })
                        .collect();
                    AnalysisRecord {
                        id: format!("{tag}{i}"),
                        is_case,
                        covariates: vec![rng.gen::<f64>()],
                        points,
                    }
                })
                .collect()
        };
        let train = make(200, "t");
        let validation = make(120, "v");
        let out = validate_marker("toy", &train, &validation).unwrap();
        assert_eq!(out.n_validation_cases, 60);
        assert_eq!(out.n_validation_controls, 60);
        assert!(out.c_marker > out.c_base + 0.2);
        assert!(out.p_improvement < 0.01);
        // noise covariate alone cannot discriminate
        assert!((out.c_base - 0.5).abs() < 0.15);
    }

    #[test]
    fn disjoint_strata_guard() {
        use crate::cohort::{CohortRecord, Role};
        let mk = |stratum: &str| Cohort {
            records: vec![CohortRecord {
                subject: "s".into(),
                role: Role::Case,
                index_date: chrono::NaiveDate::from_ymd_opt(2005, 3, 15).unwrap(),
                stratum: stratum.into(),
                split: None,
                active: None,
            }],
        };
        assert!(assert_disjoint_strata(&mk("2005-03"), &mk("2008-01")).is_ok());
        assert!(assert_disjoint_strata(&mk("2008-01"), &mk("2008-01")).is_err());
    }
}
