//! Truncated cubic power spline bases and the fixed-effect design matrix for
//! the case/control interaction model.
//!
//! The basis is {t, (t - xi_k)^3_+}: no intercept column, globally C2, and
//! exactly linear to the left of the smallest knot. Time is in days relative
//! to the index date, negative before it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lookback window length in days; measurement times live in [-WINDOW_DAYS, 0].
pub const WINDOW_DAYS: f64 = 180.0;

/// Ordered spline knots in days relative to the index date.
///
/// Strictly increasing, all in [-180, 0). Empty means the pure-linear model
/// used as the knot-scan baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector(Vec<f64>);

impl KnotVector {
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        for w in knots.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidKnots(format!(
                    "knots must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for &k in &knots {
            if !k.is_finite() || k < -WINDOW_DAYS || k >= 0.0 {
                return Err(Error::InvalidKnots(format!(
                    "knot {k} outside [-{WINDOW_DAYS}, 0)"
                )));
            }
        }
        Ok(KnotVector(knots))
    }

    /// The empty knot vector, denoting the pure-linear model.
    pub fn empty() -> Self {
        KnotVector(Vec::new())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Leftmost (earliest) knot, if any.
    pub fn min(&self) -> Option<f64> {
        self.0.first().copied()
    }

    /// Number of basis columns q = K + 1.
    pub fn basis_cols(&self) -> usize {
        self.0.len() + 1
    }
}

/// How to choose the knots.
#[derive(Debug, Clone)]
pub enum KnotMode {
    /// Five knots at -150, -90, -60, -30, -14 days, denser near the index date.
    Default,
    /// Knots at -14, -28, ..., -14 m days; m = 0 is the linear model.
    ScanPrefix(usize),
    /// Caller-supplied list, validated.
    Explicit(Vec<f64>),
}

pub const SCAN_MAX_KNOTS: usize = 12;
pub const SCAN_STEP_DAYS: f64 = 14.0;

pub fn make_knots(mode: KnotMode) -> Result<KnotVector> {
    match mode {
        KnotMode::Default => KnotVector::new(vec![-150.0, -90.0, -60.0, -30.0, -14.0]),
        KnotMode::ScanPrefix(m) => {
            if m > SCAN_MAX_KNOTS {
                return Err(Error::InvalidKnots(format!(
                    "scan prefix {m} exceeds the maximum of {SCAN_MAX_KNOTS}"
                )));
            }
            let knots = (1..=m).rev().map(|j| -SCAN_STEP_DAYS * j as f64).collect();
            KnotVector::new(knots)
        }
        KnotMode::Explicit(list) => KnotVector::new(list),
    }
}

/// Evaluate the truncated cubic power spline basis at the given times.
///
/// Column 0 is t itself; column k is (t - xi_k)^3_+. No intercept column.
pub fn tps_basis(times: &[f64], knots: &KnotVector) -> Result<DMatrix<f64>> {
    for &t in times {
        if !t.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite time {t}")));
        }
    }
    let q = knots.basis_cols();
    let mut b = DMatrix::<f64>::zeros(times.len(), q);
    for (r, &t) in times.iter().enumerate() {
        b[(r, 0)] = t;
        for (k, &xi) in knots.as_slice().iter().enumerate() {
            let d = t - xi;
            b[(r, k + 1)] = if d > 0.0 { d * d * d } else { 0.0 };
        }
    }
    Ok(b)
}

/// Column layout of the full fixed-effect model.
///
/// Columns are ordered: intercept, case indicator (if `case_shift`), spline
/// basis, case x spline interaction (if `interaction`), then covariates.
#[derive(Debug, Clone)]
pub struct DesignSpec {
    pub knots: KnotVector,
    pub covariates: Vec<String>,
    pub case_shift: bool,
    pub interaction: bool,
}

impl DesignSpec {
    pub fn new(
        knots: KnotVector,
        covariates: Vec<String>,
        case_shift: bool,
        interaction: bool,
    ) -> Result<Self> {
        if interaction && !case_shift {
            return Err(Error::InvalidInput(
                "interaction term requires the case-shift term (model hierarchy)".into(),
            ));
        }
        Ok(DesignSpec {
            knots,
            covariates,
            case_shift,
            interaction,
        })
    }

    /// Total number of fixed-effect columns.
    pub fn n_cols(&self) -> usize {
        let q = self.knots.basis_cols();
        1 + usize::from(self.case_shift)
            + q
            + if self.interaction { q } else { 0 }
            + self.covariates.len()
    }

    /// Assemble one design row at time `t` for the requested group.
    pub fn row_at(&self, t: f64, is_case: bool, covariates: &[f64]) -> Result<DVector<f64>> {
        if covariates.len() != self.covariates.len() {
            return Err(Error::MissingCovariate(format!(
                "profile has {} of {} covariates",
                covariates.len(),
                self.covariates.len()
            )));
        }
        let q = self.knots.basis_cols();
        let basis = tps_basis(&[t], &self.knots)?;
        let mut row = DVector::<f64>::zeros(self.n_cols());
        let mut c = 0;
        row[c] = 1.0;
        c += 1;
        if self.case_shift {
            row[c] = if is_case { 1.0 } else { 0.0 };
            c += 1;
        }
        for j in 0..q {
            row[c + j] = basis[(0, j)];
        }
        c += q;
        if self.interaction {
            if is_case {
                for j in 0..q {
                    row[c + j] = basis[(0, j)];
                }
            }
            c += q;
        }
        for (j, &w) in covariates.iter().enumerate() {
            row[c + j] = w;
        }
        Ok(row)
    }
}

/// One subject's contribution to the stacked design.
#[derive(Debug, Clone)]
pub struct SubjectData<'a> {
    pub id: &'a str,
    pub is_case: bool,
    /// (time in days relative to index, measured value)
    pub points: &'a [(f64, f64)],
    pub covariates: &'a [f64],
}

/// Stack the response, model matrix, and random-intercept group index for a
/// set of subjects. Subjects with no measurements contribute no rows and no
/// group.
pub fn design_matrix(
    subjects: &[SubjectData<'_>],
    spec: &DesignSpec,
) -> Result<(DVector<f64>, DMatrix<f64>, Vec<usize>)> {
    let n_rows: usize = subjects.iter().map(|s| s.points.len()).sum();
    let p = spec.n_cols();
    let mut y = DVector::<f64>::zeros(n_rows);
    let mut x = DMatrix::<f64>::zeros(n_rows, p);
    let mut groups = Vec::with_capacity(n_rows);
    let mut r = 0;
    let mut g = 0;
    for subj in subjects {
        if subj.points.is_empty() {
            continue;
        }
        if subj.covariates.len() != spec.covariates.len() {
            return Err(Error::MissingCovariate(subj.id.to_string()));
        }
        for &(t, v) in subj.points {
            if !t.is_finite() || !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite measurement for subject {}",
                    subj.id
                )));
            }
            if t < -WINDOW_DAYS || t > 0.0 {
                return Err(Error::InvalidInput(format!(
                    "time {t} for subject {} outside [-{WINDOW_DAYS}, 0]",
                    subj.id
                )));
            }
            let row = spec.row_at(t, subj.is_case, subj.covariates)?;
            x.set_row(r, &row.transpose());
            y[r] = v;
            groups.push(g);
            r += 1;
        }
        g += 1;
    }
    Ok((y, x, groups))
}
