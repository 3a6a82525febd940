//! Command-line front end. Every command writes its artifacts plus a
//! `manifest.json` under `--out`; reruns with the same arguments produce
//! identical bytes.
//!
//! Exit codes: 0 ran (alarms are data), 2 input error, 3 numeric failure.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::json;

use crate::calendar::{default_origin, Calendar, SlotKey, Timestamp};
use crate::calibrate::{calibrate_threshold, CalibrationResult, CalibrationTarget};
use crate::detect::{
    double_sided_run, event_slot, run_detector, AlarmEvent, DetectorConfig, Direction, EventSeries, ObservationMode,
    Observations, VPathPoint,
};
use crate::error::{Error, Result};
use crate::evaluate::{worst_case_delay, write_delay_csv, DelaySetup};
use crate::ingest::{self, split_train_test, write_daily_csv, write_slot_csv, DailyRecord, SlotSeries};
use crate::intensity::{fit_intensity, fit_profile_override, CandidateFit, FactorSpec, IntensityModel, QuartileProfile};
use crate::simulate::synthetic::{fixed_holidays, synthetic_dataset, SyntheticCallCenter};
use crate::simulate::{apply_scenario, simulate_events, simulate_slot_counts, ChangeSpec, ScenarioTransform, POSTPONE_PERIOD_DAYS};

/// Version of every JSON document and manifest written here.
pub const SCHEMA_VERSION: u32 = 1;
/// Caps the worker threads used for Monte Carlo replications.
pub const THREADS_ENV: &str = "SEASONAL_CUSUM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "seasonal-cusum", version, about = "CUSUM change detection for seasonal call arrivals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the seasonal intensity model (BIC selection + slot profile).
    Fit(FitArgs),
    /// Calibrate the threshold m to a false-alarm budget pi.
    Calibrate(CalibrateArgs),
    /// Simulate slot counts (and optionally event times) from a model.
    Simulate(SimulateArgs),
    /// Run the CUSUM detector over an observed series.
    Detect(DetectArgs),
    /// Detection delay and false alarms on simulated change points.
    Evaluate(EvaluateArgs),
    /// Apply a scenario transform to a slot series.
    Scenario(ScenarioArgs),
    /// Write a synthetic call-centre dataset.
    Synth(SynthArgs),
}

fn file_name<S: Serializer>(p: &Path, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
}

fn opt_file_name<S: Serializer>(p: &Option<PathBuf>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match p {
        Some(p) => file_name(p, s),
        None => s.serialize_none(),
    }
}

fn parse_timestamp(s: &str) -> std::result::Result<Timestamp, String> {
    if let Ok(d) = s.parse::<NaiveDate>() {
        return Ok(Timestamp::opening(d));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(Timestamp::from_datetime(dt));
        }
    }
    Err(format!("expected YYYY-MM-DD or YYYY-MM-DDTHH:MM[:SS], got {s:?}"))
}

fn ser_timestamps<S: Serializer>(ts: &[Timestamp], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(ts.iter().map(|t| t.to_string()))
}

fn ser_opt_timestamp<S: Serializer>(t: &Option<Timestamp>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match t {
        Some(t) => s.serialize_str(&t.to_string()),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Aggregated,
    Event,
}

impl From<ModeArg> for ObservationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Aggregated => ObservationMode::AggregatedCounts,
            ModeArg::Event => ObservationMode::EventTimes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Identity,
    PostponeThirdTuesday,
}

impl ScenarioKind {
    fn transform(self, anchor: Option<NaiveDate>) -> ScenarioTransform {
        match self {
            ScenarioKind::Identity => ScenarioTransform::Identity,
            ScenarioKind::PostponeThirdTuesday => ScenarioTransform::PostponeThirdTuesdayMorning { anchor },
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    /// Daily counts, `date,count`.
    #[arg(long)]
    #[serde(serialize_with = "file_name")]
    pub daily: PathBuf,
    /// Half-hour counts, `date,slot_start,count`.
    #[arg(long)]
    #[serde(serialize_with = "opt_file_name")]
    pub slots: Option<PathBuf>,
    /// One ISO date per line.
    #[arg(long)]
    #[serde(serialize_with = "opt_file_name")]
    pub holidays: Option<PathBuf>,
    /// Train on dates before this one.
    #[arg(long)]
    pub split_date: Option<NaiveDate>,
    /// Day zero of the trend feature.
    #[arg(long, default_value_t = default_origin())]
    pub origin: NaiveDate,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CalibrationOpts {
    /// In-control paths per threshold evaluation.
    #[arg(long, default_value_t = 1000)]
    pub replications: usize,
    /// Calendar days simulated before a path is censored.
    #[arg(long, default_value_t = 365)]
    pub horizon_days: u32,
    /// First simulated day; defaults to the day after the training data.
    #[arg(long)]
    pub calibration_start: Option<NaiveDate>,
    #[arg(long, default_value_t = 0.02)]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
#[group(required = true, multiple = false)]
pub struct ThresholdArgs {
    /// Threshold used as given.
    #[arg(long)]
    pub m: Option<f64>,
    /// False-alarm budget (expected events to a false alarm); triggers calibration.
    #[arg(long)]
    pub pi: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DetectorOpts {
    /// Proportional change to detect (> 1 increase, < 1 decrease).
    #[arg(long)]
    pub rho: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Aggregated)]
    pub mode: ModeArg,
    /// Reset V to 0 after an alarm; `--reset-on-alarm=false` lets V run on.
    #[arg(long, num_args = 0..=1, default_value_t = true, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub reset_on_alarm: bool,
    /// Use the constant training-mean rate instead of the seasonal model.
    #[arg(long)]
    pub naive_lambda: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CalibrateArgs {
    #[arg(long)]
    #[serde(serialize_with = "file_name")]
    pub model: PathBuf,
    #[arg(long)]
    pub pi: f64,
    #[command(flatten)]
    pub detector: DetectorOpts,
    #[command(flatten)]
    pub calibration: CalibrationOpts,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    #[serde(serialize_with = "file_name")]
    pub model: PathBuf,
    #[arg(long)]
    pub start: NaiveDate,
    #[arg(long)]
    pub end: NaiveDate,
    /// Change time; omit for an in-control path.
    #[arg(long, value_parser = parse_timestamp)]
    #[serde(serialize_with = "ser_opt_timestamp")]
    pub theta: Option<Timestamp>,
    /// Intensity factor after the change.
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// Also simulate exact event times.
    #[arg(long)]
    pub events: bool,
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioKind>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DetectArgs {
    #[arg(long)]
    #[serde(serialize_with = "file_name")]
    pub model: PathBuf,
    /// Observed slot counts, `date,slot_start,count`.
    #[arg(long)]
    #[serde(serialize_with = "file_name")]
    pub series: PathBuf,
    /// Observed event times, `timestamp`; required in event mode.
    #[arg(long)]
    #[serde(serialize_with = "opt_file_name")]
    pub events: Option<PathBuf>,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[command(flatten)]
    pub detector: DetectorOpts,
    /// Also run a decrease detector with factor 1/rho.
    #[arg(long)]
    pub double_sided: bool,
    /// Transform the series before detection.
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioKind>,
    #[command(flatten)]
    pub calibration: CalibrationOpts,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    #[serde(serialize_with = "file_name")]
    pub model: PathBuf,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[command(flatten)]
    pub detector: DetectorOpts,
    /// Change times to evaluate, comma separated.
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_timestamp)]
    #[serde(serialize_with = "ser_timestamps")]
    pub theta: Vec<Timestamp>,
    #[arg(long)]
    pub start: NaiveDate,
    #[arg(long)]
    pub end: NaiveDate,
    /// Simulated paths per change time.
    #[arg(long, default_value_t = 500)]
    pub delay_replications: usize,
    #[command(flatten)]
    pub calibration: CalibrationOpts,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScenarioArgs {
    #[arg(long)]
    #[serde(serialize_with = "file_name")]
    pub series: PathBuf,
    /// Model whose afternoon profile receives the postponed calls.
    #[arg(long)]
    #[serde(serialize_with = "file_name")]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = ScenarioKind::PostponeThirdTuesday)]
    pub scenario: ScenarioKind,
    /// First affected Tuesday; defaults to the first Tuesday in the series.
    #[arg(long)]
    pub anchor: Option<NaiveDate>,
    /// Also write a model refitted with the affected days' own profile.
    #[arg(long)]
    pub refit: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value = "2016-01-04")]
    pub start: NaiveDate,
    #[arg(long, default_value = "2018-06-30")]
    pub end: NaiveDate,
    /// Expected Monday volume in January at the origin.
    #[arg(long, default_value_t = 1100.0)]
    pub base_daily: f64,
    /// Drop an inclusive date range, e.g. `2017-10-01..2017-10-31`.
    #[arg(long, value_parser = parse_range)]
    pub drop: Option<(NaiveDate, NaiveDate)>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

fn parse_range(s: &str) -> std::result::Result<(NaiveDate, NaiveDate), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected FROM..TO, got {s:?}"))?;
    let a: NaiveDate = a.parse().map_err(|e| format!("{a:?}: {e}"))?;
    let b: NaiveDate = b.parse().map_err(|e| format!("{b:?}: {e}"))?;
    if b < a {
        return Err(format!("range end {b} precedes start {a}"));
    }
    Ok((a, b))
}

/// The persisted model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub model: IntensityModel,
    /// Training mean per open half-hour, for `--naive-lambda`.
    pub naive_rate: f64,
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub candidates: Vec<CandidateFit>,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "{}: schema version {} is not supported (expected {SCHEMA_VERSION})",
                path.display(),
                file.schema_version
            )));
        }
        Ok(file)
    }

    fn intensity(&self, naive: bool) -> IntensityModel {
        if naive {
            IntensityModel::constant(self.naive_rate, self.model.calendar.clone())
        } else {
            self.model.clone()
        }
    }
}

/// Collects the files a command writes, for its manifest.
struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        self.files.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(format!("writing {name}"), e))
    }

    fn finish<T: Serialize>(mut self, command: &str, params: &T, seeds: &[u64], inputs: &[&Path]) -> Result<()> {
        let inputs: Vec<_> = inputs
            .iter()
            .map(|p| {
                let bytes = fs::metadata(p).map(|m| m.len()).unwrap_or(0);
                json!({ "name": p.file_name().map(|n| n.to_string_lossy().into_owned()), "bytes": bytes })
            })
            .collect();
        let manifest = json!({
            "schema_version": SCHEMA_VERSION,
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "parameters": params,
            "seeds": seeds,
            "inputs": inputs,
            "outputs": self.files.clone(),
        });
        self.json("manifest.json", &manifest)
    }
}

fn load_holidays(path: Option<&Path>) -> Result<BTreeSet<NaiveDate>> {
    path.map(ingest::parse_holidays).transpose().map(Option::unwrap_or_default)
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let holidays = load_holidays(args.holidays.as_deref())?;
    let mut ds = ingest::parse_daily_csv(&args.daily, &holidays, args.origin)?;
    if let Some(slots) = &args.slots {
        ds = ds.with_slots(ingest::parse_slot_csv(slots)?)?;
    }
    let gaps = ingest::detect_gaps(&ds);
    let train = match args.split_date {
        Some(split) => split_train_test(&ds, split)?.0,
        None => ds,
    };
    let (Some(train_start), Some(train_end)) = (train.first_date(), train.last_date()) else {
        return Err(Error::Validation("empty training set".into()));
    };
    let fitted = fit_intensity(&train, &FactorSpec::default_candidates())?;
    if let Some(w) = &fitted.warning {
        eprintln!("warning: {w}");
    }
    let mut out = Output::new(&args.out)?;
    let file = ModelFile {
        schema_version: SCHEMA_VERSION,
        model: fitted.model.clone(),
        naive_rate: fitted.naive_rate,
        train_start,
        train_end,
        candidates: fitted.selection.candidates.clone(),
    };
    out.json("model.json", &file)?;
    write_bic_table(out.create("bic_table.csv")?, &fitted.selection.candidates)?;
    write_quartiles(out.create("quartile_profiles.csv")?, &fitted.quartiles)?;
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "selected": fitted.selection.best.factor_spec.to_string(),
        "coefficients": fitted.selection.best.factor_spec.column_names().into_iter()
            .zip(&fitted.selection.best.coefficients)
            .map(|(n, c)| json!({ "name": n, "value": c }))
            .collect::<Vec<_>>(),
        "log_likelihood": fitted.selection.best.log_likelihood,
        "bic": fitted.selection.best.bic,
        "n_obs": fitted.selection.best.n_obs,
        "iterations": fitted.selection.best.iterations,
        "score_max_norm": fitted.selection.best.score_max_norm,
        "naive_rate": fitted.naive_rate,
        "gaps": gaps.iter().map(|(a, b)| json!([a, b])).collect::<Vec<_>>(),
        "warning": fitted.warning,
        "quartiles": fitted.quartiles,
    });
    out.json("fit_report.json", &report)?;
    let mut inputs = vec![args.daily.as_path()];
    inputs.extend(args.slots.as_deref());
    inputs.extend(args.holidays.as_deref());
    out.finish("fit", args, &[], &inputs)
}

fn write_bic_table<W: Write>(w: W, candidates: &[CandidateFit]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["factors", "n_coefficients", "log_likelihood", "bic", "error"])?;
    for c in candidates {
        w.write_record([
            c.factor_spec.to_string(),
            c.n_coefficients.to_string(),
            c.log_likelihood.map(|v| v.to_string()).unwrap_or_default(),
            c.bic.map(|v| v.to_string()).unwrap_or_default(),
            c.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("writing BIC table", e))
}

fn write_quartiles<W: Write>(w: W, quartiles: &[QuartileProfile]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["quartile", "day_type", "slot_start", "fraction"])?;
    for q in quartiles {
        for (kind, fractions) in [("weekday", &q.weekday_fractions), ("saturday", &q.saturday_fractions)] {
            for (k, f) in fractions.iter().flatten().enumerate() {
                w.write_record([
                    q.quartile.to_string(),
                    kind.to_string(),
                    crate::calendar::slot_start_time(k).format("%H:%M").to_string(),
                    f.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("writing quartile profiles", e))
}

fn detector_config(opts: &DetectorOpts, rho: f64, m: f64) -> Result<DetectorConfig> {
    Ok(DetectorConfig::new(rho, m)?
        .with_mode(opts.mode.into())
        .with_reset(opts.reset_on_alarm))
}

fn calibrate_for(
    file: &ModelFile,
    model: &IntensityModel,
    config: &DetectorConfig,
    pi: f64,
    opts: &CalibrationOpts,
    seed: u64,
) -> Result<CalibrationResult> {
    let start = opts.calibration_start.unwrap_or(file.train_end + chrono::Duration::days(1));
    let target = CalibrationTarget::new(pi, opts.replications, start, opts.horizon_days, seed).with_tolerance(opts.tolerance);
    calibrate_threshold(model, config, &target)
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<()> {
    let file = ModelFile::load(&args.model)?;
    let model = file.intensity(args.detector.naive_lambda);
    let config = detector_config(&args.detector, args.detector.rho, 1.0)?;
    let result = calibrate_for(&file, &model, &config, args.pi, &args.calibration, args.seed)?;
    let mut out = Output::new(&args.out)?;
    out.json("calibration.json", &json!({ "schema_version": SCHEMA_VERSION, "calibration": result }))?;
    out.finish("calibrate", args, &[args.seed], &[&args.model])
}

fn write_events<W: Write>(w: W, events: &[Timestamp]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["timestamp"])?;
    for t in events {
        w.write_record([t.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("writing events", e))
}

fn read_events(path: &Path) -> Result<Vec<Timestamp>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let text = rec.get(0).unwrap_or("").trim();
        let t = parse_timestamp(text).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 2,
            message,
        })?;
        out.push(t);
    }
    out.sort();
    Ok(out)
}

fn daily_of(series: &SlotSeries) -> Vec<DailyRecord> {
    series
        .daily_totals()
        .into_iter()
        .map(|(date, count)| DailyRecord { date, count })
        .collect()
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let file = ModelFile::load(&args.model)?;
    let change = match args.theta {
        Some(theta) => ChangeSpec::at(theta, args.rho),
        None => ChangeSpec::in_control(),
    };
    let path = if args.events {
        simulate_events(&file.model, change, args.start, args.end, args.seed)?
    } else {
        simulate_slot_counts(&file.model, change, args.start, args.end, args.seed)?
    };
    let mut slots = path.slot_counts.clone();
    if let Some(kind) = args.scenario {
        if args.events && kind != ScenarioKind::Identity {
            return Err(Error::Validation("scenario transforms apply to slot counts only".into()));
        }
        slots = apply_scenario(&slots, &kind.transform(None), &file.model.profile)?;
    }
    let mut out = Output::new(&args.out)?;
    write_slot_csv(out.create("slots.csv")?, &slots)?;
    write_daily_csv(out.create("daily.csv")?, &daily_of(&slots))?;
    if let Some(events) = &path.event_times {
        write_events(out.create("events.csv")?, events)?;
    }
    out.json(
        "simulation.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "seed": args.seed,
            "change": { "theta": args.theta.map(|t| t.to_string()), "rho": change.rho },
            "events_before_theta": path.events_before_theta,
            "total_events": slots.total(),
        }),
    )?;
    out.finish("simulate", args, &[args.seed], &[&args.model])
}

#[derive(Serialize)]
struct AlarmLine {
    time: String,
    direction: Direction,
    v_at_alarm: f64,
    events_at_alarm: u64,
}

fn write_alarms<W: Write>(mut w: W, alarms: &[AlarmEvent]) -> Result<()> {
    for a in alarms {
        let line = AlarmLine {
            time: a.time.to_string(),
            direction: a.direction,
            v_at_alarm: a.v_at_alarm,
            events_at_alarm: a.events_at_alarm,
        };
        serde_json::to_writer(&mut w, &line)?;
        writeln!(w).map_err(|e| Error::io("writing alarms", e))?;
    }
    w.flush().map_err(|e| Error::io("writing alarms", e))
}

/// `timestamp,v,lambda_increment,count,alarm_flag`.
pub fn write_vpath<W: Write>(w: W, path: &[VPathPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["timestamp", "v", "lambda_increment", "count", "alarm_flag"])?;
    for p in path {
        w.write_record([
            p.time.to_string(),
            p.v.to_string(),
            p.lambda_increment.to_string(),
            p.count.to_string(),
            u8::from(p.alarm).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("writing V path", e))
}

pub fn cmd_detect(args: &DetectArgs) -> Result<()> {
    let file = ModelFile::load(&args.model)?;
    let model = file.intensity(args.detector.naive_lambda);
    let mut series = ingest::parse_slot_csv(&args.series)?;
    if let Some(kind) = args.scenario {
        series = apply_scenario(&series, &kind.transform(None), &file.model.profile)?;
    }
    let events = match (&args.events, args.detector.mode) {
        (Some(p), _) => {
            if args.scenario.is_some_and(|k| k != ScenarioKind::Identity) {
                return Err(Error::Validation("scenario transforms apply to slot counts only".into()));
            }
            let slots: Vec<SlotKey> = series.records().iter().map(|r| r.key()).collect();
            let events = read_events(p)?;
            let observed: BTreeSet<SlotKey> = slots.iter().copied().collect();
            if let Some(e) = events.iter().find(|e| !observed.contains(&event_slot(e))) {
                return Err(Error::Validation(format!("event at {e} is outside the observed slots")));
            }
            Some(EventSeries { slots, events })
        }
        (None, ModeArg::Event) => return Err(Error::Validation("event mode needs --events".into())),
        (None, ModeArg::Aggregated) => None,
    };
    let obs = match &events {
        Some(e) => Observations::Events(e),
        None => Observations::Slots(&series),
    };

    let mut out = Output::new(&args.out)?;
    let mut calibrations = Vec::new();
    let mut threshold = |rho: f64, seed: u64| -> Result<f64> {
        match (args.threshold.m, args.threshold.pi) {
            (Some(m), _) => Ok(m),
            (None, Some(pi)) => {
                let config = detector_config(&args.detector, rho, 1.0)?;
                let res = calibrate_for(&file, &model, &config, pi, &args.calibration, seed)?;
                let m = res.threshold_m;
                calibrations.push(res);
                Ok(m)
            }
            (None, None) => Err(Error::Validation("one of --m or --pi is required".into())),
        }
    };
    let rho = args.detector.rho;
    let mut seeds = vec![args.seed];
    let m_main = threshold(rho, args.seed)?;
    let main = detector_config(&args.detector, rho, m_main)?;
    if args.double_sided {
        let m_down = threshold(1.0 / rho, args.seed.wrapping_add(1))?;
        seeds.push(args.seed.wrapping_add(1));
        let down = detector_config(&args.detector, 1.0 / rho, m_down)?;
        let (up, down) = if main.direction == Direction::Increase { (main, down) } else { (down, main) };
        let run = double_sided_run(obs, &model, &up, &down)?;
        write_vpath(out.create("vpath_up.csv")?, &run.up.path)?;
        write_vpath(out.create("vpath_down.csv")?, &run.down.path)?;
        write_alarms(out.create("alarms.jsonl")?, &run.alarms)?;
    } else {
        let run = run_detector(obs, &model, &main)?;
        write_vpath(out.create("vpath.csv")?, &run.path)?;
        write_alarms(out.create("alarms.jsonl")?, &run.alarms)?;
    }
    if !calibrations.is_empty() {
        out.json("calibration.json", &json!({ "schema_version": SCHEMA_VERSION, "calibration": calibrations }))?;
    }
    let mut inputs = vec![args.model.as_path(), args.series.as_path()];
    inputs.extend(args.events.as_deref());
    out.finish("detect", args, &seeds, &inputs)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let file = ModelFile::load(&args.model)?;
    let model = file.intensity(args.detector.naive_lambda);
    let rho = args.detector.rho;
    let mut out = Output::new(&args.out)?;
    let m = match (args.threshold.m, args.threshold.pi) {
        (Some(m), _) => m,
        (None, Some(pi)) => {
            let config = detector_config(&args.detector, rho, 1.0)?;
            let res = calibrate_for(&file, &model, &config, pi, &args.calibration, args.seed.wrapping_add(1))?;
            out.json("calibration.json", &json!({ "schema_version": SCHEMA_VERSION, "calibration": res }))?;
            res.threshold_m
        }
        (None, None) => return Err(Error::Validation("one of --m or --pi is required".into())),
    };
    let config = detector_config(&args.detector, rho, m)?;
    let setup = DelaySetup {
        start: args.start,
        end: args.end,
        replications: args.delay_replications,
        seed: args.seed,
    };
    let report = worst_case_delay(&model, rho, &args.theta, &config, &setup)?;
    out.json("delay_report.json", &json!({ "schema_version": SCHEMA_VERSION, "report": report }))?;
    write_delay_csv(out.create("delay_table.csv")?, &report)?;
    out.finish("evaluate", args, &[args.seed], &[&args.model])
}

pub fn cmd_scenario(args: &ScenarioArgs) -> Result<()> {
    let file = ModelFile::load(&args.model)?;
    let series = ingest::parse_slot_csv(&args.series)?;
    let transform = args.scenario.transform(args.anchor);
    let modified = apply_scenario(&series, &transform, &file.model.profile)?;
    let mut out = Output::new(&args.out)?;
    write_slot_csv(out.create("slots.csv")?, &modified)?;
    write_daily_csv(out.create("daily.csv")?, &daily_of(&modified))?;
    let anchor = transform.anchor(&series);
    out.json(
        "scenario.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "scenario": args.scenario,
            "anchor": anchor,
            "period_days": POSTPONE_PERIOD_DAYS,
            "affected_dates": transform.affected_dates(&series),
        }),
    )?;
    if args.refit {
        let anchor = anchor.ok_or_else(|| Error::Validation("no Tuesday in the series to anchor the refit".into()))?;
        let o = fit_profile_override(&modified, &file.model.calendar, anchor, POSTPONE_PERIOD_DAYS)?;
        let refit = ModelFile {
            model: file.model.clone().with_override(o),
            ..file.clone()
        };
        out.json("model_refit.json", &refit)?;
    }
    out.finish("scenario", args, &[], &[&args.series, &args.model])
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    if args.end < args.start {
        return Err(Error::Validation(format!("end {} precedes start {}", args.end, args.start)));
    }
    let gen = SyntheticCallCenter {
        base_daily: args.base_daily,
        ..SyntheticCallCenter::default()
    };
    use chrono::Datelike;
    let holidays = fixed_holidays(args.start.year()..=args.end.year() + 1);
    let calendar = Calendar::new(default_origin(), holidays.clone());
    let model = gen.model(calendar);
    let ds = synthetic_dataset(&model, args.start, args.end, args.seed, args.drop)?;
    let mut out = Output::new(&args.out)?;
    write_daily_csv(out.create("daily.csv")?, &ds.daily)?;
    write_slot_csv(out.create("slots.csv")?, &ds.slots)?;
    let mut w = out.create("holidays.txt")?;
    for h in &holidays {
        writeln!(w, "{h}").map_err(|e| Error::io("writing holidays", e))?;
    }
    w.flush().map_err(|e| Error::io("writing holidays", e))?;
    out.json(
        "truth.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "factors": SyntheticCallCenter::factor_spec().to_string(),
            "coefficients": gen.coefficients(),
            "model": model,
        }),
    )?;
    out.finish("synth", args, &[args.seed], &[])
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|s| s.trim().parse::<usize>().ok()) {
        // A pool built earlier in this process stays in effect.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Runs a parsed command.
pub fn execute(cli: &Cli) -> Result<()> {
    configure_threads();
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Scenario(a) => cmd_scenario(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Exit code for an error: 3 for numerical failures, 2 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numeric() {
        3
    } else {
        2
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
