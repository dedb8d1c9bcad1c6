//! Three-criterion likelihood-ratio screen and AIC knot-scan onset
//! localization for one laboratory marker.
//!
//! A marker passes when (1) the case and control trajectories differ, (2) the
//! case trajectory is non-linear, and (3) the control trajectory is not
//! distinguishable from linear, each judged by a likelihood ratio test with a
//! Bonferroni correction across the three tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmm::{fit_lmm, LmmFit};
use crate::spline::{
    design_matrix, make_knots, DesignSpec, KnotMode, KnotVector, SubjectData, SCAN_MAX_KNOTS,
    SCAN_STEP_DAYS,
};
use crate::stats::chi2_sf;

/// Significance level applied to the Bonferroni-adjusted p-values.
pub const ALPHA: f64 = 0.05;
/// Number of tests in the per-marker family.
pub const BONFERRONI_M: usize = 3;
/// Negative LRT statistics within this slack are clamped to zero; anything
/// worse signals an optimizer failure and is surfaced as an error.
const NESTING_SLACK: f64 = 1e-6;

/// One analysis unit: a cohort record (subject at an index date) with its
/// windowed series for the marker under test.
#[derive(Debug, Clone)]
pub struct AnalysisRecord {
    pub id: String,
    pub is_case: bool,
    pub covariates: Vec<f64>,
    /// (days relative to index date in [-180, 0], value), sorted by time
    pub points: Vec<(f64, f64)>,
}

/// One likelihood ratio test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_raw: f64,
    /// Bonferroni-adjusted p-value; None until the correction is applied.
    pub p_adjusted: Option<f64>,
}

/// Per-marker screening verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkerReport {
    pub marker: String,
    /// Criterion 1: case and control trajectories differ.
    pub test_overall: TestResult,
    /// Criterion 2: cases depart from linearity.
    pub test_cases_nonlinear: TestResult,
    /// Criterion 3: controls do not depart from linearity.
    pub test_controls_linear: TestResult,
    pub passes: bool,
    /// Days before the index date at which departure becomes detectable;
    /// only set once the knot scan has run on a passing marker.
    pub onset_days: Option<u32>,
    /// (knot count, AIC) for every scanned model; NaN marks a failed fit.
    pub aic_trace: Vec<(usize, f64)>,
}

/// Bonferroni correction: min(1, m p).
pub fn bonferroni(p: f64, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::Domain("bonferroni requires m >= 1".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("p-value {p} outside [0, 1]")));
    }
    Ok((m as f64 * p).min(1.0))
}

/// Likelihood ratio test of nested ML fits. `p_adjusted` is left unset.
pub fn lrt(ll_full: f64, ll_reduced: f64, df: usize) -> Result<TestResult> {
    if df == 0 {
        return Err(Error::Domain("lrt requires df >= 1".into()));
    }
    let raw = 2.0 * (ll_full - ll_reduced);
    if raw < -NESTING_SLACK {
        return Err(Error::NestingViolation {
            full: ll_full,
            reduced: ll_reduced,
        });
    }
    let statistic = raw.max(0.0);
    let p_raw = chi2_sf(statistic, df)?;
    Ok(TestResult {
        statistic,
        df,
        p_raw,
        p_adjusted: None,
    })
}

/// Fit the mixed model for a set of records under the given design.
pub fn fit_records(records: &[AnalysisRecord], spec: &DesignSpec) -> Result<LmmFit> {
    let subjects: Vec<SubjectData<'_>> = records
        .iter()
        .map(|r| SubjectData {
            id: &r.id,
            is_case: r.is_case,
            points: &r.points,
            covariates: &r.covariates,
        })
        .collect();
    let (y, x, groups) = design_matrix(&subjects, spec)?;
    fit_lmm(&y, &x, &groups)
}

fn subset_nonempty(records: &[AnalysisRecord], which: &str) -> Result<()> {
    if !records.iter().any(|r| !r.points.is_empty()) {
        return Err(Error::InsufficientData(format!(
            "{which}: no measurements in any record"
        )));
    }
    Ok(())
}

/// Run the three-criterion screen for one marker at the default knots.
/// The returned report has no onset; run [`knot_scan`] for that.
pub fn test_criteria(
    marker: &str,
    records: &[AnalysisRecord],
    covariate_names: &[String],
) -> Result<MarkerReport> {
    let cases: Vec<AnalysisRecord> = records.iter().filter(|r| r.is_case).cloned().collect();
    let controls: Vec<AnalysisRecord> = records.iter().filter(|r| !r.is_case).cloned().collect();
    subset_nonempty(&cases, "cases")?;
    subset_nonempty(&controls, "controls")?;

    let knots = make_knots(KnotMode::Default)?;
    let q = knots.basis_cols();
    let k = knots.len();
    let covs = covariate_names.to_vec();

    // criterion 1: full interaction model vs shared-curve model
    let full_spec = DesignSpec::new(knots.clone(), covs.clone(), true, true)?;
    let shift_spec = DesignSpec::new(knots.clone(), covs.clone(), true, false)?;
    let ll_full = fit_records(records, &full_spec)?.loglik;
    let ll_shift = fit_records(records, &shift_spec)?.loglik;
    let mut overall = lrt(ll_full, ll_shift, q)?;

    // criteria 2 and 3: spline vs linear time, per subset
    let spline_spec = DesignSpec::new(knots.clone(), covs.clone(), false, false)?;
    let linear_spec = DesignSpec::new(KnotVector::empty(), covs.clone(), false, false)?;
    let mut cases_test = {
        let ll_s = fit_records(&cases, &spline_spec)?.loglik;
        let ll_l = fit_records(&cases, &linear_spec)?.loglik;
        lrt(ll_s, ll_l, k)?
    };
    let mut controls_test = {
        let ll_s = fit_records(&controls, &spline_spec)?.loglik;
        let ll_l = fit_records(&controls, &linear_spec)?.loglik;
        lrt(ll_s, ll_l, k)?
    };

    for t in [&mut overall, &mut cases_test, &mut controls_test] {
        t.p_adjusted = Some(bonferroni(t.p_raw, BONFERRONI_M)?);
    }
    let passes = overall.p_adjusted.unwrap() < ALPHA
        && cases_test.p_adjusted.unwrap() < ALPHA
        && controls_test.p_adjusted.unwrap() >= ALPHA;

    Ok(MarkerReport {
        marker: marker.to_string(),
        test_overall: overall,
        test_cases_nonlinear: cases_test,
        test_controls_linear: controls_test,
        passes,
        onset_days: None,
        aic_trace: Vec::new(),
    })
}

/// AIC scan over knot prefixes 0..=12 on the case subset.
///
/// Returns the onset in days (|leftmost knot| of the AIC-minimizing model;
/// None when the linear model wins) and the full (knot count, AIC) trace.
/// Failed fits appear in the trace as NaN and are excluded from the argmin.
pub fn knot_scan(
    cases: &[AnalysisRecord],
    covariate_names: &[String],
) -> Result<(Option<u32>, Vec<(usize, f64)>)> {
    subset_nonempty(cases, "cases")?;
    let covs = covariate_names.to_vec();
    let mut trace = Vec::with_capacity(SCAN_MAX_KNOTS + 1);
    let mut best: Option<(usize, f64)> = None;
    for m in 0..=SCAN_MAX_KNOTS {
        let knots = make_knots(KnotMode::ScanPrefix(m))?;
        let spec = DesignSpec::new(knots, covs.clone(), false, false)?;
        let aic = match fit_records(cases, &spec) {
            Ok(fit) => fit.aic(),
            Err(_) => f64::NAN,
        };
        trace.push((m, aic));
        if aic.is_finite() {
            // ties go to the smaller knot count
            if best.map_or(true, |(_, b)| aic < b - 1e-9) {
                best = Some((m, aic));
            }
        }
    }
    let (best_m, _) = best.ok_or(Error::ScanFailure)?;
    let onset = if best_m == 0 {
        None
    } else {
        Some((SCAN_STEP_DAYS as u32) * best_m as u32)
    };
    Ok((onset, trace))
}
