//! Command-line pipeline: generate, sample, screen, validate, demo-tps.
//!
//! Every subcommand is deterministic given identical inputs and seed, and
//! all emitted tables are delimited text readable by this module's own
//! reader functions.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::cohort::{
    build_analysis_records, default_ranges, filter_ranges, inactive_case_ids, mark_active,
    ranges_by_lab, read_cohort, read_measurements, read_ranges, read_subjects,
    sample_controls_excluding, split_cohort, subjects_by_id, write_cohort, Cohort,
    CovariateEncoder, LabRange, Measurement, Role, Split, SubjectRecord,
};
use crate::error::{Error, Result};
use crate::lmm::predict_curve;
use crate::predict::{assert_disjoint_strata, validate_marker, ValidationOutcome};
use crate::screen::{knot_scan, test_criteria, AnalysisRecord, MarkerReport};
use crate::spline::{make_knots, tps_basis, DesignSpec, KnotMode};

/// Environment variable overriding every subcommand's output directory.
pub const OUT_ENV: &str = "LABSIGNAL_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "labsignal",
    about = "Screen longitudinal laboratory series for pre-event signal",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Subjects table (CSV)
    #[arg(long)]
    pub subjects: PathBuf,
    /// Measurements table (CSV)
    #[arg(long)]
    pub measurements: PathBuf,
    /// Acceptable-range table (CSV); omit for the built-in defaults
    #[arg(long)]
    pub ranges: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic population with a known truth manifest
    Generate {
        /// Output directory (created if missing)
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generator configuration (JSON); omit for the built-in default
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Sample a nested case-control cohort on calendar-month strata
    Sample {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// First calendar year of the validation split; omit for no split
        #[arg(long)]
        cutoff_year: Option<i32>,
        /// Drop cases without a lab measurement within 14 days of the event
        #[arg(long, default_value_t = false)]
        active_only: bool,
    },
    /// Run the three-criterion screen and knot scan over every marker
    Screen {
        #[command(flatten)]
        data: DataArgs,
        /// Cohort table from `sample`
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated marker subset; omit for all markers in the ranges
        #[arg(long, value_delimiter = ',')]
        markers: Option<Vec<String>>,
    },
    /// Validate markers on the held-out split via ROC comparison
    Validate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        markers: Option<Vec<String>>,
    },
    /// Emit the truncated-power-spline basis on a grid (left-linearity demo)
    DemoTps {
        #[arg(long)]
        out: PathBuf,
    },
}

/// Run a parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Generate { out, seed, config } => cmd_generate(&resolve_out(out), seed, config),
        Command::Sample {
            data,
            out,
            seed,
            cutoff_year,
            active_only,
        } => cmd_sample(&data, &resolve_out(out), seed, cutoff_year, active_only),
        Command::Screen {
            data,
            cohort,
            out,
            markers,
        } => cmd_screen(&data, &cohort, &resolve_out(out), markers.as_deref()),
        Command::Validate {
            data,
            cohort,
            out,
            markers,
        } => cmd_validate(&data, &cohort, &resolve_out(out), markers.as_deref()),
        Command::DemoTps { out } => cmd_demo_tps(&resolve_out(out)),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve_out(flag: PathBuf) -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or(flag)
}

fn cmd_generate(out: &Path, seed: u64, config: Option<PathBuf>) -> Result<()> {
    let config = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)?
        }
        None => crate::synth::default_config(),
    };
    let data = crate::synth::generate(&config, seed, out)?;
    println!(
        "generated {} subjects, {} measurements, {} markers -> {}",
        data.subjects.len(),
        data.measurements.len(),
        data.truth.len(),
        out.display()
    );
    Ok(())
}

struct LoadedData {
    subjects: Vec<SubjectRecord>,
    measurements: Vec<Measurement>,
    ranges: Vec<LabRange>,
}

fn load_data(data: &DataArgs) -> Result<LoadedData> {
    let subjects = read_subjects(&data.subjects)?;
    let raw = read_measurements(&data.measurements)?;
    let ranges = match &data.ranges {
        Some(path) => read_ranges(path)?,
        None => default_ranges(),
    };
    let (measurements, drops) = filter_ranges(raw, &ranges_by_lab(&ranges))?;
    for (lab, n) in &drops {
        eprintln!("range filter: dropped {n} out-of-range values for {lab}");
    }
    Ok(LoadedData {
        subjects,
        measurements,
        ranges,
    })
}

fn cmd_sample(
    data: &DataArgs,
    out: &Path,
    seed: u64,
    cutoff_year: Option<i32>,
    active_only: bool,
) -> Result<()> {
    let loaded = load_data(data)?;
    let excluded = if active_only {
        let inactive = inactive_case_ids(&loaded.subjects, &loaded.measurements);
        if !inactive.is_empty() {
            eprintln!("active-only: excluding {} inactive cases", inactive.len());
        }
        inactive
    } else {
        Default::default()
    };
    let mut cohort = sample_controls_excluding(&loaded.subjects, seed, &excluded)?;
    mark_active(&mut cohort, &loaded.measurements);
    let n_active = cohort
        .records
        .iter()
        .filter(|r| r.active == Some(true))
        .count();
    std::fs::create_dir_all(out)?;
    let path = out.join("cohort.csv");
    match cutoff_year {
        Some(year) => {
            let (mut train, validation) = split_cohort(&cohort, year);
            train.records.extend(validation.records);
            write_cohort(&path, &train)?;
        }
        None => write_cohort(&path, &cohort)?,
    }
    println!(
        "sampled {} cases / {} controls ({} active cases) -> {}",
        cohort.n_cases(),
        cohort.n_controls(),
        n_active,
        path.display()
    );
    Ok(())
}

fn marker_list(ranges: &[LabRange], requested: Option<&[String]>) -> Result<Vec<String>> {
    let known: Vec<String> = ranges.iter().map(|r| r.lab.clone()).collect();
    match requested {
        None => Ok(known),
        Some(list) => {
            for m in list {
                if !known.contains(m) {
                    return Err(Error::UnknownLab(m.clone()));
                }
            }
            Ok(list.to_vec())
        }
    }
}

/// Records for the screening stage: the train split when the cohort is
/// split, the whole cohort otherwise.
fn screening_rows(cohort: &Cohort) -> Cohort {
    if cohort.records.iter().any(|r| r.split.is_some()) {
        Cohort {
            records: cohort
                .records
                .iter()
                .filter(|r| r.split == Some(Split::Train))
                .cloned()
                .collect(),
        }
    } else {
        cohort.clone()
    }
}

fn cmd_screen(
    data: &DataArgs,
    cohort_path: &Path,
    out: &Path,
    markers: Option<&[String]>,
) -> Result<()> {
    let loaded = load_data(data)?;
    let cohort = screening_rows(&read_cohort(cohort_path)?);
    if cohort.records.is_empty() {
        return Err(Error::InsufficientData("screening cohort is empty".into()));
    }
    let markers = marker_list(&loaded.ranges, markers)?;
    let by_id = subjects_by_id(&loaded.subjects);
    let encoder = CovariateEncoder::fit(&loaded.subjects);
    std::fs::create_dir_all(out)?;

    let results: Vec<(String, Result<MarkerReport>)> = markers
        .par_iter()
        .map(|marker| {
            let r = screen_one(marker, &cohort, &by_id, &loaded.measurements, &encoder, out);
            (marker.clone(), r)
        })
        .collect();

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (marker, r) in results {
        match r {
            Ok(report) => reports.push(report),
            Err(e) => failures.push((marker, e)),
        }
    }
    write_report(&out.join("report.csv"), &reports)?;
    write_demo_tps(&out.join("demo_tps.csv"))?;
    for r in &reports {
        let onset = r
            .onset_days
            .map(|d| format!("{d}"))
            .unwrap_or_else(|| "—".into());
        println!(
            "{}: p1={:.4} p2={:.4} p3={:.4} passes={} onset={}",
            r.marker,
            r.test_overall.p_adjusted.unwrap_or(f64::NAN),
            r.test_cases_nonlinear.p_adjusted.unwrap_or(f64::NAN),
            r.test_controls_linear.p_adjusted.unwrap_or(f64::NAN),
            r.passes,
            onset
        );
    }
    if !failures.is_empty() {
        for (marker, e) in &failures {
            eprintln!("screen failed for {marker}: {e}");
        }
        let (_, first) = failures.into_iter().next().expect("nonempty");
        return Err(first);
    }
    Ok(())
}

fn screen_one(
    marker: &str,
    cohort: &Cohort,
    by_id: &BTreeMap<String, SubjectRecord>,
    measurements: &[Measurement],
    encoder: &CovariateEncoder,
    out: &Path,
) -> Result<MarkerReport> {
    let records = build_analysis_records(cohort, by_id, measurements, marker, encoder)?;
    let mut report = test_criteria(marker, &records, &encoder.names)?;
    if report.passes {
        let cases: Vec<AnalysisRecord> =
            records.iter().filter(|r| r.is_case).cloned().collect();
        let (onset, trace) = knot_scan(&cases, &encoder.names)?;
        report.onset_days = onset;
        report.aic_trace = trace;
    }
    write_curves(&out.join(format!("curves_{marker}.csv")), &records, encoder)?;
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(out.join(format!("marker_{marker}.json")), json + "\n")?;
    Ok(report)
}

/// Fitted population trajectories for both groups: `t,group,mean,lo,hi`.
fn write_curves(
    path: &Path,
    records: &[AnalysisRecord],
    encoder: &CovariateEncoder,
) -> Result<()> {
    let spec = DesignSpec::new(
        make_knots(KnotMode::Default)?,
        encoder.names.clone(),
        true,
        true,
    )?;
    let fit = crate::screen::fit_records(records, &spec)?;
    let n = records.len() as f64;
    let p = encoder.names.len();
    let mut mean_cov = vec![0.0; p];
    for r in records {
        for j in 0..p {
            mean_cov[j] += r.covariates[j] / n;
        }
    }
    let grid: Vec<f64> = (0..=90).map(|i| -180.0 + 2.0 * i as f64).collect();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "t,group,mean,lo,hi")?;
    for (group, is_case) in [("control", false), ("case", true)] {
        let curve = predict_curve(&fit, &spec, is_case, &mean_cov, &grid)?;
        for i in 0..grid.len() {
            writeln!(
                f,
                "{},{},{},{},{}",
                curve.grid[i], group, curve.mean[i], curve.lower[i], curve.upper[i]
            )?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn write_report(path: &Path, reports: &[MarkerReport]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "marker,p_overall,p_cases_nonlinear,p_controls_linear,passes,onset_days"
    )?;
    for r in reports {
        let onset = r
            .onset_days
            .map(|d| format!("{d}"))
            .unwrap_or_else(|| "—".into());
        writeln!(
            f,
            "{},{},{},{},{},{}",
            r.marker,
            r.test_overall.p_adjusted.unwrap_or(f64::NAN),
            r.test_cases_nonlinear.p_adjusted.unwrap_or(f64::NAN),
            r.test_controls_linear.p_adjusted.unwrap_or(f64::NAN),
            r.passes,
            onset
        )?;
    }
    f.flush()?;
    Ok(())
}

/// Minimal reader for report.csv: (marker, passes, onset).
pub fn read_report(path: &Path) -> Result<Vec<(String, bool, Option<u32>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(Error::Parse {
                context: "report file".into(),
                message: format!("expected 6 columns, got {}", cols.len()),
            });
        }
        let passes = cols[4] == "true";
        let onset = if cols[5] == "—" {
            None
        } else {
            Some(cols[5].parse().map_err(|e| Error::Parse {
                context: "report file".into(),
                message: format!("bad onset `{}`: {e}", cols[5]),
            })?)
        };
        out.push((cols[0].to_string(), passes, onset));
    }
    Ok(out)
}

fn cmd_validate(
    data: &DataArgs,
    cohort_path: &Path,
    out: &Path,
    markers: Option<&[String]>,
) -> Result<()> {
    let loaded = load_data(data)?;
    let cohort = read_cohort(cohort_path)?;
    let train = Cohort {
        records: cohort
            .records
            .iter()
            .filter(|r| r.split == Some(Split::Train))
            .cloned()
            .collect(),
    };
    let validation = Cohort {
        records: cohort
            .records
            .iter()
            .filter(|r| r.split == Some(Split::Validation))
            .cloned()
            .collect(),
    };
    if train.records.is_empty() || validation.records.is_empty() {
        return Err(Error::InsufficientData(
            "validation requires a cohort with both train and validation splits".into(),
        ));
    }
    if !validation.records.iter().any(|r| r.role == Role::Case)
        || !validation.records.iter().any(|r| r.role == Role::Control)
    {
        return Err(Error::DegenerateLabels);
    }
    assert_disjoint_strata(&train, &validation)?;

    let markers = marker_list(&loaded.ranges, markers)?;
    let by_id = subjects_by_id(&loaded.subjects);
    let encoder = CovariateEncoder::fit(&loaded.subjects);

    let results: Vec<Result<ValidationOutcome>> = markers
        .par_iter()
        .map(|marker| {
            let t = build_analysis_records(&train, &by_id, &loaded.measurements, marker, &encoder)?;
            let v = build_analysis_records(
                &validation,
                &by_id,
                &loaded.measurements,
                marker,
                &encoder,
            )?;
            validate_marker(marker, &t, &v)
        })
        .collect();
    let mut outcomes = Vec::new();
    for r in results {
        outcomes.push(r?);
    }
    std::fs::create_dir_all(out)?;
    let path = out.join("validation.csv");
    write_validation(&path, &outcomes)?;
    for o in &outcomes {
        println!(
            "{}: c_base={:.3} c_marker={:.3} p={:.4}{}",
            o.marker,
            o.c_base,
            o.c_marker,
            o.p_improvement,
            if o.separability_flag { " (separable)" } else { "" }
        );
    }
    Ok(())
}

pub fn write_validation(path: &Path, outcomes: &[ValidationOutcome]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    // the predictor is a substitution: window summary features into a plain
    // logistic model, not the functional-regression scorer
    writeln!(
        f,
        "# predictor: window-summary features + logistic model (two-stage substitute)"
    )?;
    writeln!(
        f,
        "marker,c_base,c_marker,p_improvement,n_validation_cases,n_validation_controls,separability_flag"
    )?;
    for o in outcomes {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            o.marker,
            o.c_base,
            o.c_marker,
            o.p_improvement,
            o.n_validation_cases,
            o.n_validation_controls,
            o.separability_flag
        )?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_validation(path: &Path) -> Result<Vec<ValidationOutcome>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    let bad = |message: String| Error::Parse {
        context: "validation file".into(),
        message,
    };
    for line in text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
    {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(bad(format!("expected 7 columns, got {}", cols.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|e| bad(format!("bad number `{s}`: {e}")))
        };
        let count = |s: &str| -> Result<usize> {
            s.parse().map_err(|e| bad(format!("bad count `{s}`: {e}")))
        };
        out.push(ValidationOutcome {
            marker: cols[0].to_string(),
            c_base: num(cols[1])?,
            c_marker: num(cols[2])?,
            p_improvement: num(cols[3])?,
            n_validation_cases: count(cols[4])?,
            n_validation_controls: count(cols[5])?,
            separability_flag: cols[6] == "true",
        });
    }
    Ok(out)
}

/// Basis columns of the default knot vector on a daily grid; the segment
/// left of the earliest knot is exactly linear, which the emitted values
/// make visible.
fn write_demo_tps(path: &Path) -> Result<()> {
    let knots = make_knots(KnotMode::Default)?;
    let grid: Vec<f64> = (0..=180).map(|i| -180.0 + i as f64).collect();
    let basis = tps_basis(&grid, &knots)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let headers: Vec<String> = std::iter::once("t".to_string())
        .chain((0..basis.ncols()).map(|c| format!("b{c}")))
        .collect();
    writeln!(f, "{}", headers.join(","))?;
    for (i, t) in grid.iter().enumerate() {
        let mut row = vec![format!("{t}")];
        for c in 0..basis.ncols() {
            row.push(format!("{}", basis[(i, c)]));
        }
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;
    Ok(())
}

fn cmd_demo_tps(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let path = out.join("demo_tps.csv");
    write_demo_tps(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
