//! Synthetic longitudinal laboratory data with a known truth manifest.
//!
//! The generator produces an event-labeled population whose useful markers
//! depart from their stable baseline only inside a configured pre-event
//! window, so downstream screening and onset estimates can be checked
//! against ground truth.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cohort::{
    default_ranges, ranges_by_lab, write_measurements, write_ranges, write_subjects, LabRange,
    Measurement, SubjectRecord,
};
use crate::error::{Error, Result};

/// Direction of the pre-event departure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Drop,
    Rise,
}

/// Time course of the departure over the onset window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Smooth cubic ramp, zero value and slope at the onset time.
    Cubic,
    /// Logistic ramp centered midway through the window; nonzero slope at
    /// onset, useful for robustness checks against the fitted spline form.
    Logistic,
}

/// Marker behavior ahead of the event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MarkerKind {
    /// Indistinguishable between cases and controls.
    Null,
    /// Departs from baseline starting `onset_days` before the event.
    Useful {
        onset_days: u32,
        shape: Shape,
        /// Departure magnitude at the event, in units of the marker's SD.
        amplitude: f64,
        profile: Profile,
    },
}

/// One simulated marker.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkerSpec {
    /// Must name a lab in the ranges table.
    pub name: String,
    /// Population mean of the stable baseline.
    pub center: f64,
    /// Residual SD around a subject's latent mean.
    pub sd: f64,
    pub kind: MarkerKind,
}

/// Full generator configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub start_year: i32,
    pub end_year: i32,
    /// Subjects whose event falls in each year.
    pub cases_per_year: usize,
    /// Event-free subjects observed over the whole period.
    pub control_pool: usize,
    pub markers: Vec<MarkerSpec>,
}

impl GeneratorConfig {
    pub fn validate(&self, ranges: &BTreeMap<String, LabRange>) -> Result<()> {
        let bad = |field: &str, message: String| Error::Config {
            field: field.to_string(),
            message,
        };
        if self.end_year < self.start_year {
            return Err(bad("end_year", "end_year before start_year".into()));
        }
        if self.cases_per_year == 0 {
            return Err(bad("cases_per_year", "must be positive".into()));
        }
        if self.markers.is_empty() {
            return Err(bad("markers", "at least one marker required".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.markers {
            if !seen.insert(&m.name) {
                return Err(bad("markers", format!("duplicate marker {}", m.name)));
            }
            if !ranges.contains_key(&m.name) {
                return Err(bad("markers", format!("no range for marker {}", m.name)));
            }
            if !(m.sd > 0.0) {
                return Err(bad("markers", format!("{}: sd must be positive", m.name)));
            }
            if let MarkerKind::Useful {
                onset_days,
                amplitude,
                ..
            } = m.kind
            {
                if onset_days == 0 {
                    return Err(bad(
                        "markers",
                        format!("{}: onset_days must be positive", m.name),
                    ));
                }
                if !(amplitude > 0.0) {
                    return Err(bad(
                        "markers",
                        format!("{}: amplitude must be positive", m.name),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// The built-in configuration mirroring a routinely collected panel:
/// five useful markers at staggered onsets and six null markers.
pub fn default_config() -> GeneratorConfig {
    let useful = |onset_days, shape, amplitude| MarkerKind::Useful {
        onset_days,
        shape,
        amplitude,
        profile: Profile::Cubic,
    };
    let m = |name: &str, center: f64, sd: f64, kind| MarkerSpec {
        name: name.to_string(),
        center,
        sd,
        kind,
    };
    GeneratorConfig {
        start_year: 2004,
        end_year: 2008,
        cases_per_year: 92,
        control_pool: 400,
        markers: vec![
            m("albumin", 3.8, 0.35, useful(28, Shape::Drop, 3.5)),
            m("calcium", 9.2, 0.7, MarkerKind::Null),
            m("co2", 24.0, 3.0, MarkerKind::Null),
            m("creatinine", 7.5, 2.0, MarkerKind::Null),
            m("ferritin", 1000.0, 300.0, MarkerKind::Null),
            m("hemoglobin", 11.5, 1.2, useful(28, Shape::Drop, 1.5)),
            m("iron_saturation", 30.0, 8.0, useful(168, Shape::Drop, 1.2)),
            m("phosphorus", 5.0, 1.2, MarkerKind::Null),
            m("platelets", 220.0, 60.0, useful(14, Shape::Drop, 5.0)),
            m("potassium", 4.5, 0.5, MarkerKind::Null),
            m("wbc", 7.5, 1.8, useful(56, Shape::Rise, 2.5)),
        ],
    }
}

/// Departure from baseline for a case, in the marker's original units,
/// at `t_rel` days relative to the event (t_rel <= 0).
pub fn departure(kind: &MarkerKind, t_rel: f64, sd: f64) -> f64 {
    match *kind {
        MarkerKind::Null => 0.0,
        MarkerKind::Useful {
            onset_days,
            shape,
            amplitude,
            profile,
        } => {
            let onset = onset_days as f64;
            let magnitude = match profile {
                Profile::Cubic => {
                    if t_rel <= -onset {
                        0.0
                    } else {
                        let u = (t_rel + onset) / onset; // 0 at onset, 1 at event
                        amplitude * sd * u * u * u
                    }
                }
                Profile::Logistic => {
                    let z = (t_rel + onset / 2.0) / (onset / 8.0);
                    amplitude * sd / (1.0 + (-z).exp())
                }
            };
            match shape {
                Shape::Drop => -magnitude,
                Shape::Rise => magnitude,
            }
        }
    }
}

/// Ground truth for one marker, written alongside the generated files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthEntry {
    pub kind: MarkerKind,
}

/// Generated population held in memory.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub subjects: Vec<SubjectRecord>,
    pub measurements: Vec<Measurement>,
    pub ranges: Vec<LabRange>,
    pub truth: BTreeMap<String, TruthEntry>,
}

const SEXES: [&str; 2] = ["F", "M"];
const RACES: [&str; 3] = ["african_american", "caucasian", "other"];

fn year_day(rng: &mut ChaCha8Rng, year: i32) -> NaiveDate {
    let start = NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year");
    let end = NaiveDate::from_ymd_opt(year, 12, 31).expect("valid year");
    let span = (end - start).num_days();
    start + Days::new(rng.gen_range(0..=span) as u64)
}

fn draw_demographics(rng: &mut ChaCha8Rng) -> (f64, String, String) {
    let age_dist = Normal::<f64>::new(62.0, 12.0).expect("valid normal");
    let age = age_dist.sample(rng).clamp(18.0, 95.0);
    let sex = SEXES[rng.gen_range(0..SEXES.len())].to_string();
    let race = RACES[rng.gen_range(0..RACES.len())].to_string();
    (age, sex, race)
}

/// Per-180-days calendar drift of the latent mean, in SD units.
const DRIFT_PER_180D_SD: f64 = -0.05;
/// Between-subject SD of the latent baseline, in units of the residual SD.
const BETWEEN_SD_RATIO: f64 = 0.5;
/// Collection cadence jitter: each gap is the nominal frequency scaled by a
/// uniform factor in [0.7, 1.3].
const JITTER: f64 = 0.3;

fn simulate_series(
    rng: &mut ChaCha8Rng,
    subject: &SubjectRecord,
    marker: &MarkerSpec,
    range: &LabRange,
    origin: NaiveDate,
    out: &mut Vec<Measurement>,
) {
    let noise = Normal::new(0.0, marker.sd).expect("valid normal");
    let offset_dist = Normal::new(0.0, BETWEEN_SD_RATIO * marker.sd).expect("valid normal");
    let subject_offset: f64 = offset_dist.sample(rng);
    let mut date = subject.obs_start;
    // stagger series starts so collection days are not synchronized
    date = date + Days::new(rng.gen_range(0..range.frequency_days.max(1.0) as u64 + 1));
    while date <= subject.obs_end {
        let cal_days = (date - origin).num_days() as f64;
        let mut value = marker.center
            + subject_offset
            + DRIFT_PER_180D_SD * marker.sd * cal_days / 180.0
            + noise.sample(rng);
        if let Some(event) = subject.event_date {
            let t_rel = (date - event).num_days() as f64;
            if t_rel <= 0.0 {
                value += departure(&marker.kind, t_rel, marker.sd);
            }
        }
        out.push(Measurement {
            subject: subject.id.clone(),
            lab: marker.name.clone(),
            date,
            value: value.clamp(range.lo, range.hi),
        });
        let gap = range.frequency_days * (1.0 - JITTER + 2.0 * JITTER * rng.gen::<f64>());
        date = date + Days::new(gap.round().max(1.0) as u64);
    }
}

/// Generate the population in memory. Deterministic in (config, seed).
pub fn generate_data(config: &GeneratorConfig, seed: u64) -> Result<SynthData> {
    let ranges = default_ranges();
    let by_lab = ranges_by_lab(&ranges);
    config.validate(&by_lab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // observation coverage starts a year early so every event month has a
    // fully observed risk set with 180 days of pre-index history
    let obs_start = NaiveDate::from_ymd_opt(config.start_year - 1, 1, 1).expect("valid year");
    let obs_end = NaiveDate::from_ymd_opt(config.end_year, 12, 31).expect("valid year");

    let mut subjects = Vec::new();
    let mut idx = 0usize;
    for year in config.start_year..=config.end_year {
        for _ in 0..config.cases_per_year {
            let event = year_day(&mut rng, year);
            let (age, sex, race) = draw_demographics(&mut rng);
            let vintage = rng.gen_range(120u64..2400);
            subjects.push(SubjectRecord {
                id: format!("s{idx:05}"),
                event_date: Some(event),
                exposure_start: obs_start - Days::new(vintage),
                age_at_start: age,
                sex,
                race,
                obs_start,
                obs_end: event,
            });
            idx += 1;
        }
    }
    for _ in 0..config.control_pool {
        let (age, sex, race) = draw_demographics(&mut rng);
        let vintage = rng.gen_range(120u64..2400);
        subjects.push(SubjectRecord {
            id: format!("s{idx:05}"),
            event_date: None,
            exposure_start: obs_start - Days::new(vintage),
            age_at_start: age,
            sex,
            race,
            obs_start,
            obs_end,
        });
        idx += 1;
    }

    let mut measurements = Vec::new();
    for subject in &subjects {
        for marker in &config.markers {
            let range = &by_lab[&marker.name];
            simulate_series(&mut rng, subject, marker, range, obs_start, &mut measurements);
        }
    }

    let truth = config
        .markers
        .iter()
        .map(|m| (m.name.clone(), TruthEntry { kind: m.kind }))
        .collect();
    let kept_ranges = config
        .markers
        .iter()
        .map(|m| by_lab[&m.name].clone())
        .collect();
    Ok(SynthData {
        subjects,
        measurements,
        ranges: kept_ranges,
        truth,
    })
}

/// Generate and write subjects.csv, measurements.csv, ranges.csv and
/// truth.json under `dir`.
pub fn generate(config: &GeneratorConfig, seed: u64, dir: &Path) -> Result<SynthData> {
    let data = generate_data(config, seed)?;
    std::fs::create_dir_all(dir)?;
    write_subjects(&dir.join("subjects.csv"), &data.subjects)?;
    write_measurements(&dir.join("measurements.csv"), &data.measurements)?;
    write_ranges(&dir.join("ranges.csv"), &data.ranges)?;
    let truth = serde_json::to_string_pretty(&data.truth)?;
    std::fs::write(dir.join("truth.json"), truth + "\n")?;
    Ok(data)
}
