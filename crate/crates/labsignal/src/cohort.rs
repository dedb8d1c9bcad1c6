//! Cohort construction: range filtering, calendar-time nested case-control
//! sampling, 180-day window abstraction, and the train/validation split.
//!
//! Sampling is reproducible bit-for-bit: draws come from ChaCha8 seeded with
//! the user's seed, months are visited in ascending order, and candidate
//! lists are sorted by subject id before any draw.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::screen::AnalysisRecord;
use crate::spline::WINDOW_DAYS;

/// One subject with event and observation metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    /// Qualifying event date; None for subjects who never become cases.
    pub event_date: Option<NaiveDate>,
    /// Start of exposure (vintage origin, e.g. first dialysis).
    pub exposure_start: NaiveDate,
    pub age_at_start: f64,
    pub sex: String,
    pub race: String,
    pub obs_start: NaiveDate,
    pub obs_end: NaiveDate,
}

impl SubjectRecord {
    pub fn validate(&self) -> Result<()> {
        if self.obs_start > self.obs_end {
            return Err(Error::Inconsistent(format!(
                "subject {}: observation start after end",
                self.id
            )));
        }
        if let Some(e) = self.event_date {
            if e < self.obs_start || e > self.obs_end {
                return Err(Error::Inconsistent(format!(
                    "subject {}: event date outside the observation interval",
                    self.id
                )));
            }
            if e < self.exposure_start {
                return Err(Error::Inconsistent(format!(
                    "subject {}: event before exposure start",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Days between exposure start and the given index date.
    pub fn vintage_days(&self, index: NaiveDate) -> i64 {
        (index - self.exposure_start).num_days()
    }
}

/// One laboratory measurement at a calendar date.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub subject: String,
    pub lab: String,
    pub date: NaiveDate,
    pub value: f64,
}

/// Acceptable value range and approximate collection cadence for one lab.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabRange {
    pub lab: String,
    pub lo: f64,
    pub hi: f64,
    pub frequency_days: f64,
}

/// Default acceptable ranges and collection frequencies for the eleven
/// routinely collected labs.
pub fn default_ranges() -> Vec<LabRange> {
    let rows: [(&str, f64, f64, f64); 11] = [
        ("albumin", 0.1, 6.0, 30.0),
        ("calcium", 5.0, 20.0, 7.0),
        ("co2", 2.0, 50.0, 30.0),
        ("creatinine", 0.1, 30.0, 30.0),
        ("ferritin", 0.0, 10000.0, 90.0),
        ("hemoglobin", 2.0, 20.0, 7.0),
        ("iron_saturation", 0.0, 100.0, 30.0),
        ("phosphorus", 0.5, 20.0, 7.0),
        ("platelets", 0.0, 5000.0, 30.0),
        ("potassium", 1.0, 9.0, 30.0),
        ("wbc", 0.0, 100.0, 30.0),
    ];
    rows.iter()
        .map(|&(lab, lo, hi, f)| LabRange {
            lab: lab.to_string(),
            lo,
            hi,
            frequency_days: f,
        })
        .collect()
}

pub fn ranges_by_lab(ranges: &[LabRange]) -> BTreeMap<String, LabRange> {
    ranges.iter().map(|r| (r.lab.clone(), r.clone())).collect()
}

/// Drop measurements outside their lab's acceptable range (bounds inclusive).
/// Returns the retained measurements and per-lab drop counts.
pub fn filter_ranges(
    measurements: Vec<Measurement>,
    ranges: &BTreeMap<String, LabRange>,
) -> Result<(Vec<Measurement>, BTreeMap<String, usize>)> {
    let mut kept = Vec::with_capacity(measurements.len());
    let mut drops: BTreeMap<String, usize> = BTreeMap::new();
    for m in measurements {
        let range = ranges
            .get(&m.lab)
            .ok_or_else(|| Error::UnknownLab(m.lab.clone()))?;
        if m.value >= range.lo && m.value <= range.hi {
            kept.push(m);
        } else {
            *drops.entry(m.lab.clone()).or_insert(0) += 1;
        }
    }
    Ok((kept, drops))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Case,
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

/// One sampled cohort member: a subject anchored at an index date.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortRecord {
    pub subject: String,
    pub role: Role,
    pub index_date: NaiveDate,
    /// Calendar month stratum, formatted YYYY-MM.
    pub stratum: String,
    pub split: Option<Split>,
    /// For cases: whether a lab was measured within 14 days of the event.
    pub active: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cohort {
    pub records: Vec<CohortRecord>,
}

impl Cohort {
    pub fn n_cases(&self) -> usize {
        self.records.iter().filter(|r| r.role == Role::Case).count()
    }

    pub fn n_controls(&self) -> usize {
        self.records.len() - self.n_cases()
    }
}

fn month_bounds(year: i32, month: u32) -> (NaiveDate, NaiveDate) {
    let start = NaiveDate::from_ymd_opt(year, month, 1).expect("valid month");
    let next = if month == 12 {
        NaiveDate::from_ymd_opt(year + 1, 1, 1)
    } else {
        NaiveDate::from_ymd_opt(year, month + 1, 1)
    }
    .expect("valid month");
    let end = next.pred_opt().expect("valid date");
    (start, end)
}

/// Nested case-control sampling on calendar months.
///
/// For every month with k cases, k controls are drawn uniformly without
/// replacement from the subjects event-free and under observation through
/// that month; each control is randomly paired with one of the month's cases
/// and inherits that case's event date as its index date. Subjects who become
/// cases later remain eligible as earlier controls.
pub fn sample_controls(subjects: &[SubjectRecord], seed: u64) -> Result<Cohort> {
    sample_controls_excluding(subjects, seed, &std::collections::BTreeSet::new())
}

/// Like [`sample_controls`], but subjects named in `excluded_cases`
/// contribute no case row (they stay in the pre-event risk set). Used by the
/// active-cases-only filter.
pub fn sample_controls_excluding(
    subjects: &[SubjectRecord],
    seed: u64,
    excluded_cases: &std::collections::BTreeSet<String>,
) -> Result<Cohort> {
    for s in subjects {
        s.validate()?;
    }
    let mut months: BTreeMap<(i32, u32), Vec<&SubjectRecord>> = BTreeMap::new();
    for s in subjects {
        if excluded_cases.contains(&s.id) {
            continue;
        }
        if let Some(e) = s.event_date {
            months.entry((e.year(), e.month())).or_default().push(s);
        }
    }
    if months.is_empty() {
        return Err(Error::InsufficientData("no subject has an event".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for ((year, month), mut cases) in months {
        cases.sort_by(|a, b| a.id.cmp(&b.id));
        let stratum = format!("{year:04}-{month:02}");
        let (m_start, m_end) = month_bounds(year, month);
        let mut eligible: Vec<&SubjectRecord> = subjects
            .iter()
            .filter(|s| {
                s.obs_start <= m_start
                    && s.obs_end >= m_end
                    && s.event_date.map_or(true, |e| e > m_end)
            })
            .collect();
        eligible.sort_by(|a, b| a.id.cmp(&b.id));
        let k = cases.len();
        if eligible.len() < k {
            return Err(Error::InsufficientControls {
                month: stratum,
                needed: k,
                available: eligible.len(),
            });
        }
        let drawn: Vec<&SubjectRecord> = eligible
            .choose_multiple(&mut rng, k)
            .copied()
            .collect();
        // random pairing: permute the cases, zip with the drawn controls
        let mut paired: Vec<&SubjectRecord> = cases.clone();
        paired.shuffle(&mut rng);
        for case in &cases {
            records.push(CohortRecord {
                subject: case.id.clone(),
                role: Role::Case,
                index_date: case.event_date.expect("case has event"),
                stratum: stratum.clone(),
                split: None,
                active: None,
            });
        }
        for (control, case) in drawn.iter().zip(&paired) {
            records.push(CohortRecord {
                subject: control.id.clone(),
                role: Role::Control,
                index_date: case.event_date.expect("case has event"),
                stratum: stratum.clone(),
                split: None,
                active: None,
            });
        }
    }
    Ok(Cohort { records })
}

/// Case subjects with no measurement within 14 days before their event;
/// these are the subjects dropped by the active-cases-only filter.
pub fn inactive_case_ids(
    subjects: &[SubjectRecord],
    measurements: &[Measurement],
) -> std::collections::BTreeSet<String> {
    let mut by_subject: BTreeMap<&str, Vec<NaiveDate>> = BTreeMap::new();
    for m in measurements {
        by_subject.entry(&m.subject).or_default().push(m.date);
    }
    subjects
        .iter()
        .filter(|s| {
            s.event_date.map_or(false, |e| {
                let lo = e - Days::new(14);
                !by_subject
                    .get(s.id.as_str())
                    .map_or(false, |dates| dates.iter().any(|&d| d >= lo && d <= e))
            })
        })
        .map(|s| s.id.clone())
        .collect()
}

/// Mark each case active when any measurement falls within 14 days before
/// its index date.
pub fn mark_active(cohort: &mut Cohort, measurements: &[Measurement]) {
    let mut by_subject: BTreeMap<&str, Vec<NaiveDate>> = BTreeMap::new();
    for m in measurements {
        by_subject.entry(&m.subject).or_default().push(m.date);
    }
    for r in &mut cohort.records {
        if r.role != Role::Case {
            continue;
        }
        let lo = r.index_date - Days::new(14);
        let active = by_subject
            .get(r.subject.as_str())
            .map_or(false, |dates| {
                dates.iter().any(|&d| d >= lo && d <= r.index_date)
            });
        r.active = Some(active);
    }
}

/// Keep measurements within [index - 180 days, index], converted to relative
/// days. The input must be one subject's series for one lab.
pub fn abstract_window(index: NaiveDate, series: &[Measurement]) -> Vec<(f64, f64)> {
    let lo = index - Days::new(WINDOW_DAYS as u64);
    let mut pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|m| m.date >= lo && m.date <= index)
        .map(|m| ((m.date - index).num_days() as f64, m.value))
        .collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pts
}

/// Split strata by calendar year: index months before `cutoff_year` go to
/// train, months in or after it to validation. Either side may come back
/// empty; the caller decides whether that warrants a warning.
pub fn split_cohort(cohort: &Cohort, cutoff_year: i32) -> (Cohort, Cohort) {
    let mut train = Cohort::default();
    let mut validation = Cohort::default();
    for r in &cohort.records {
        let year: i32 = r.stratum[..4].parse().expect("stratum is YYYY-MM");
        let mut r = r.clone();
        if year < cutoff_year {
            r.split = Some(Split::Train);
            train.records.push(r);
        } else {
            r.split = Some(Split::Validation);
            validation.records.push(r);
        }
    }
    (train, validation)
}

/// Deterministic covariate encoding shared by the screen and the predictor:
/// age, indicator levels for sex and race (reference = first sorted level),
/// and vintage in days at the index date.
#[derive(Debug, Clone)]
pub struct CovariateEncoder {
    pub names: Vec<String>,
    sex_levels: Vec<String>,
    race_levels: Vec<String>,
}

impl CovariateEncoder {
    pub fn fit(subjects: &[SubjectRecord]) -> Self {
        let mut sex_levels: Vec<String> = subjects.iter().map(|s| s.sex.clone()).collect();
        sex_levels.sort();
        sex_levels.dedup();
        let mut race_levels: Vec<String> = subjects.iter().map(|s| s.race.clone()).collect();
        race_levels.sort();
        race_levels.dedup();
        let mut names = vec!["age".to_string()];
        for l in sex_levels.iter().skip(1) {
            names.push(format!("sex:{l}"));
        }
        for l in race_levels.iter().skip(1) {
            names.push(format!("race:{l}"));
        }
        names.push("vintage".to_string());
        CovariateEncoder {
            names,
            sex_levels,
            race_levels,
        }
    }

    pub fn encode(&self, subject: &SubjectRecord, index: NaiveDate) -> Result<Vec<f64>> {
        if !subject.age_at_start.is_finite() {
            return Err(Error::MissingCovariate(subject.id.clone()));
        }
        let mut v = vec![subject.age_at_start];
        for l in self.sex_levels.iter().skip(1) {
            v.push(if &subject.sex == l { 1.0 } else { 0.0 });
        }
        for l in self.race_levels.iter().skip(1) {
            v.push(if &subject.race == l { 1.0 } else { 0.0 });
        }
        v.push(subject.vintage_days(index) as f64);
        Ok(v)
    }
}

/// Assemble per-record analysis units for one marker: windowed series plus
/// encoded covariates. Records keep empty series when the subject has no
/// in-window measurement for the marker.
pub fn build_analysis_records(
    cohort: &Cohort,
    subjects: &BTreeMap<String, SubjectRecord>,
    measurements: &[Measurement],
    marker: &str,
    encoder: &CovariateEncoder,
) -> Result<Vec<AnalysisRecord>> {
    let mut by_subject: BTreeMap<&str, Vec<Measurement>> = BTreeMap::new();
    for m in measurements {
        if m.lab == marker {
            by_subject.entry(&m.subject).or_default().push(m.clone());
        }
    }
    let mut out = Vec::with_capacity(cohort.records.len());
    for (i, r) in cohort.records.iter().enumerate() {
        let subject = subjects
            .get(&r.subject)
            .ok_or_else(|| Error::MissingCovariate(r.subject.clone()))?;
        let covariates = encoder.encode(subject, r.index_date)?;
        let points = by_subject
            .get(r.subject.as_str())
            .map(|series| abstract_window(r.index_date, series))
            .unwrap_or_default();
        out.push(AnalysisRecord {
            id: format!("{}#{i}", r.subject),
            is_case: r.role == Role::Case,
            covariates,
            points,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// file formats

fn parse_date(s: &str, context: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| Error::Parse {
        context: context.to_string(),
        message: format!("bad date `{s}`: {e}"),
    })
}

#[derive(Serialize, Deserialize)]
struct SubjectRow {
    subject_id: String,
    event_date: String,
    exposure_start_date: String,
    age_at_start: f64,
    sex: String,
    race: String,
    obs_start: String,
    obs_end: String,
}

pub fn read_subjects(path: &Path) -> Result<Vec<SubjectRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: SubjectRow = row?;
        let ctx = format!("subjects file, subject {}", row.subject_id);
        let event_date = if row.event_date.is_empty() {
            None
        } else {
            Some(parse_date(&row.event_date, &ctx)?)
        };
        let rec = SubjectRecord {
            id: row.subject_id,
            event_date,
            exposure_start: parse_date(&row.exposure_start_date, &ctx)?,
            age_at_start: row.age_at_start,
            sex: row.sex,
            race: row.race,
            obs_start: parse_date(&row.obs_start, &ctx)?,
            obs_end: parse_date(&row.obs_end, &ctx)?,
        };
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_subjects(path: &Path, subjects: &[SubjectRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in subjects {
        w.serialize(SubjectRow {
            subject_id: s.id.clone(),
            event_date: s.event_date.map(|d| d.to_string()).unwrap_or_default(),
            exposure_start_date: s.exposure_start.to_string(),
            age_at_start: s.age_at_start,
            sex: s.sex.clone(),
            race: s.race.clone(),
            obs_start: s.obs_start.to_string(),
            obs_end: s.obs_end.to_string(),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct MeasurementRow {
    subject_id: String,
    lab_name: String,
    date: String,
    value: f64,
}

pub fn read_measurements(path: &Path) -> Result<Vec<Measurement>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: MeasurementRow = row?;
        let ctx = format!("measurements file, subject {}", row.subject_id);
        out.push(Measurement {
            subject: row.subject_id,
            lab: row.lab_name,
            date: parse_date(&row.date, &ctx)?,
            value: row.value,
        });
    }
    Ok(out)
}

pub fn write_measurements(path: &Path, measurements: &[Measurement]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for m in measurements {
        w.serialize(MeasurementRow {
            subject_id: m.subject.clone(),
            lab_name: m.lab.clone(),
            date: m.date.to_string(),
            value: m.value,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct RangeRow {
    lab_name: String,
    lo: f64,
    hi: f64,
    frequency_days: f64,
}

pub fn read_ranges(path: &Path) -> Result<Vec<LabRange>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: RangeRow = row?;
        out.push(LabRange {
            lab: row.lab_name,
            lo: row.lo,
            hi: row.hi,
            frequency_days: row.frequency_days,
        });
    }
    Ok(out)
}

pub fn write_ranges(path: &Path, ranges: &[LabRange]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in ranges {
        w.serialize(RangeRow {
            lab_name: r.lab.clone(),
            lo: r.lo,
            hi: r.hi,
            frequency_days: r.frequency_days,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cohort(path: &Path, cohort: &Cohort) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "subject_id,role,index_date,stratum,split")?;
    for r in &cohort.records {
        let role = match r.role {
            Role::Case => "case",
            Role::Control => "control",
        };
        let split = match r.split {
            Some(Split::Train) => "train",
            Some(Split::Validation) => "validation",
            None => "",
        };
        writeln!(
            f,
            "{},{},{},{},{}",
            r.subject, role, r.index_date, r.stratum, split
        )?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_cohort(path: &Path) -> Result<Cohort> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let ctx = "cohort file".to_string();
        let bad = |message: String| Error::Parse {
            context: ctx.clone(),
            message,
        };
        if row.len() != 5 {
            return Err(bad(format!("expected 5 columns, got {}", row.len())));
        }
        let role = match &row[1] {
            "case" => Role::Case,
            "control" => Role::Control,
            other => return Err(bad(format!("bad role `{other}`"))),
        };
        let split = match &row[4] {
            "train" => Some(Split::Train),
            "validation" => Some(Split::Validation),
            "" => None,
            other => return Err(bad(format!("bad split `{other}`"))),
        };
        records.push(CohortRecord {
            subject: row[0].to_string(),
            role,
            index_date: parse_date(&row[2], &ctx)?,
            stratum: row[3].to_string(),
            split,
            active: None,
        });
    }
    Ok(Cohort { records })
}

pub fn subjects_by_id(subjects: &[SubjectRecord]) -> BTreeMap<String, SubjectRecord> {
    subjects.iter().map(|s| (s.id.clone(), s.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn subject(id: &str, event: Option<&str>) -> SubjectRecord {
        SubjectRecord {
            id: id.to_string(),
            event_date: event.map(d),
            exposure_start: d("2001-06-01"),
            age_at_start: 75.0,
            sex: "F".into(),
            race: "caucasian".into(),
            obs_start: d("2002-01-01"),
            obs_end: d("2008-12-31"),
        }
    }

    #[test]
    fn filter_ranges_inclusive_bounds() {
        let ranges = ranges_by_lab(&default_ranges());
        let ms = vec![
            Measurement {
                subject: "a".into(),
                lab: "albumin".into(),
                date: d("2004-01-01"),
                value: 6.5,
            },
            Measurement {
                subject: "a".into(),
                lab: "hemoglobin".into(),
                date: d("2004-01-01"),
                value: 2.0,
            },
        ];
        let (kept, drops) = filter_ranges(ms, &ranges).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].lab, "hemoglobin");
        assert_eq!(kept[0].value, 2.0);
        assert_eq!(drops.get("albumin"), Some(&1));
    }

    #[test]
    fn filter_ranges_empty_input() {
        let ranges = ranges_by_lab(&default_ranges());
        let (kept, drops) = filter_ranges(vec![], &ranges).unwrap();
        assert!(kept.is_empty());
        assert!(drops.is_empty());
    }

    #[test]
    fn filter_ranges_unknown_lab() {
        let ranges = ranges_by_lab(&default_ranges());
        let ms = vec![Measurement {
            subject: "a".into(),
            lab: "troponin".into(),
            date: d("2004-01-01"),
            value: 1.0,
        }];
        match filter_ranges(ms, &ranges) {
            Err(Error::UnknownLab(l)) => assert_eq!(l, "troponin"),
            other => panic!("expected unknown-lab error, got {other:?}"),
        }
    }

    #[test]
    fn filter_never_alters_values() {
        let ranges = ranges_by_lab(&default_ranges());
        let ms: Vec<Measurement> = (0..50)
            .map(|i| Measurement {
                subject: format!("s{i}"),
                lab: "potassium".into(),
                date: d("2004-01-01"),
                value: 0.5 + 0.2 * i as f64,
            })
            .collect();
        let (kept, _) = filter_ranges(ms.clone(), &ranges).unwrap();
        for m in &kept {
            assert!(ms.contains(m));
        }
    }

    #[test]
    fn sampling_one_case_one_control() {
        let mut subjects = vec![subject("case1", Some("2005-03-15"))];
        for i in 0..10 {
            subjects.push(subject(&format!("ctrl{i}"), None));
        }
        let cohort = sample_controls(&subjects, 7).unwrap();
        assert_eq!(cohort.records.len(), 2);
        assert_eq!(cohort.records[0].role, Role::Case);
        assert_eq!(cohort.records[1].role, Role::Control);
        assert_eq!(cohort.records[0].stratum, "2005-03");
        assert_eq!(cohort.records[1].stratum, "2005-03");
        // control inherits the case's exact event date
        assert_eq!(cohort.records[1].index_date, d("2005-03-15"));
    }

    #[test]
    fn future_case_serves_as_earlier_control() {
        // "pool" is not yet observed in March, so the September case is the
        // only eligible March control; "pool" covers September
        let mut pool = subject("pool", None);
        pool.obs_start = d("2005-06-01");
        let subjects = vec![
            subject("early", Some("2005-03-15")),
            subject("later", Some("2005-09-20")),
            pool,
        ];
        let cohort = sample_controls(&subjects, 1).unwrap();
        let as_control: Vec<_> = cohort
            .records
            .iter()
            .filter(|r| r.subject == "later" && r.role == Role::Control)
            .collect();
        assert_eq!(as_control.len(), 1);
        assert_eq!(as_control[0].stratum, "2005-03");
        let as_case: Vec<_> = cohort
            .records
            .iter()
            .filter(|r| r.subject == "later" && r.role == Role::Case)
            .collect();
        assert_eq!(as_case.len(), 1);
        assert_eq!(as_case[0].stratum, "2005-09");
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let mut subjects = vec![
            subject("c1", Some("2005-03-15")),
            subject("c2", Some("2005-03-20")),
            subject("c3", Some("2006-07-02")),
        ];
        for i in 0..40 {
            subjects.push(subject(&format!("p{i:02}"), None));
        }
        let a = sample_controls(&subjects, 5).unwrap();
        let b = sample_controls(&subjects, 5).unwrap();
        assert_eq!(a, b);
        let c = sample_controls(&subjects, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sampling_errors_when_risk_set_too_small() {
        let subjects = vec![
            subject("c1", Some("2005-03-15")),
            subject("c2", Some("2005-03-20")),
            subject("p1", None),
        ];
        match sample_controls(&subjects, 1) {
            Err(Error::InsufficientControls { month, needed, available }) => {
                assert_eq!(month, "2005-03");
                assert_eq!(needed, 2);
                assert_eq!(available, 1);
            }
            other => panic!("expected insufficient-controls, got {other:?}"),
        }
    }

    #[test]
    fn cohort_invariants_hold() {
        let mut subjects = Vec::new();
        for i in 0..30 {
            let month = 1 + (i % 12);
            subjects.push(subject(
                &format!("case{i:02}"),
                Some(&format!("2005-{month:02}-10")),
            ));
        }
        for i in 0..80 {
            subjects.push(subject(&format!("pool{i:02}"), None));
        }
        let by_id = subjects_by_id(&subjects);
        let cohort = sample_controls(&subjects, 99).unwrap();
        // 1:1 per stratum
        let mut per: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for r in &cohort.records {
            let e = per.entry(&r.stratum).or_default();
            match r.role {
                Role::Case => e.0 += 1,
                Role::Control => e.1 += 1,
            }
        }
        for (stratum, (cases, controls)) in &per {
            assert_eq!(cases, controls, "stratum {stratum}");
        }
        // no control with an event on or before its index date
        for r in &cohort.records {
            if r.role == Role::Control {
                if let Some(e) = by_id[&r.subject].event_date {
                    assert!(e > r.index_date);
                }
            }
        }
        // no subject twice in the same stratum
        let mut seen = std::collections::BTreeSet::new();
        for r in &cohort.records {
            assert!(seen.insert((r.stratum.clone(), r.subject.clone())));
        }
    }

    #[test]
    fn window_boundaries() {
        let index = d("2005-06-30");
        let series = vec![
            Measurement {
                subject: "a".into(),
                lab: "albumin".into(),
                date: d("2005-01-01"), // exactly 180 days before
                value: 1.0,
            },
            Measurement {
                subject: "a".into(),
                lab: "albumin".into(),
                date: d("2004-12-31"), // 181 days before
                value: 2.0,
            },
            Measurement {
                subject: "a".into(),
                lab: "albumin".into(),
                date: index,
                value: 3.0,
            },
        ];
        let pts = abstract_window(index, &series);
        assert_eq!(pts, vec![(-180.0, 1.0), (0.0, 3.0)]);
    }

    #[test]
    fn split_by_cutoff_year() {
        let mk = |stratum: &str| CohortRecord {
            subject: "s".into(),
            role: Role::Case,
            index_date: d(&format!("{}-15", stratum)),
            stratum: stratum.to_string(),
            split: None,
            active: None,
        };
        let cohort = Cohort {
            records: vec![mk("2004-01"), mk("2007-12"), mk("2008-03")],
        };
        let (train, validation) = split_cohort(&cohort, 2008);
        assert_eq!(train.records.len(), 2);
        assert_eq!(validation.records.len(), 1);
        assert!(train.records.iter().all(|r| r.split == Some(Split::Train)));
        assert!(validation
            .records
            .iter()
            .all(|r| r.split == Some(Split::Validation)));

        // degenerate: everything in the cutoff year
        let (train, validation) = split_cohort(&cohort, 2004);
        assert!(train.records.is_empty());
        assert_eq!(validation.records.len(), 3);
    }

    #[test]
    fn active_flag() {
        let mut cohort = Cohort {
            records: vec![CohortRecord {
                subject: "a".into(),
                role: Role::Case,
                index_date: d("2005-06-30"),
                stratum: "2005-06".into(),
                split: None,
                active: None,
            }],
        };
        let ms = vec![Measurement {
            subject: "a".into(),
            lab: "albumin".into(),
            date: d("2005-06-20"),
            value: 3.0,
        }];
        mark_active(&mut cohort, &ms);
        assert_eq!(cohort.records[0].active, Some(true));

        let far = vec![Measurement {
            subject: "a".into(),
            lab: "albumin".into(),
            date: d("2005-05-01"),
            value: 3.0,
        }];
        mark_active(&mut cohort, &far);
        assert_eq!(cohort.records[0].active, Some(false));
    }

    #[test]
    fn covariate_encoding() {
        let subjects = vec![
            subject("a", None),
            SubjectRecord {
                sex: "M".into(),
                race: "hispanic".into(),
                ..subject("b", None)
            },
        ];
        let enc = CovariateEncoder::fit(&subjects);
        assert_eq!(enc.names, vec!["age", "sex:M", "race:hispanic", "vintage"]);
        let v = enc.encode(&subjects[1], d("2005-06-01")).unwrap();
        assert_eq!(v[0], 75.0);
        assert_eq!(v[1], 1.0);
        assert_eq!(v[2], 1.0);
        assert_eq!(v[3], (d("2005-06-01") - d("2001-06-01")).num_days() as f64);
    }

    #[test]
    fn csv_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let subjects = vec![subject("a", Some("2005-03-15")), subject("b", None)];
        let sp = dir.path().join("subjects.csv");
        write_subjects(&sp, &subjects).unwrap();
        assert_eq!(read_subjects(&sp).unwrap(), subjects);

        let ms = vec![Measurement {
            subject: "a".into(),
            lab: "albumin".into(),
            date: d("2005-01-02"),
            value: 3.25,
        }];
        let mp = dir.path().join("measurements.csv");
        write_measurements(&mp, &ms).unwrap();
        assert_eq!(read_measurements(&mp).unwrap(), ms);

        let rp = dir.path().join("ranges.csv");
        write_ranges(&rp, &default_ranges()).unwrap();
        let back = read_ranges(&rp).unwrap();
        assert_eq!(back.len(), 11);
        assert_eq!(back[0].lab, "albumin");

        let cohort = sample_controls(&subjects, 3).unwrap();
        let (train, _) = split_cohort(&cohort, 2008);
        let cp = dir.path().join("cohort.csv");
        write_cohort(&cp, &train).unwrap();
        let back = read_cohort(&cp).unwrap();
        assert_eq!(back.records.len(), train.records.len());
        assert_eq!(back.records[0].subject, train.records[0].subject);
        assert_eq!(back.records[0].split, Some(Split::Train));
    }
}
