//! Command implementations behind the `ridenet` binary.
//!
//! Every command reads a [`PipelineConfig`] and writes its outputs under
//! `output_dir` with fixed file names:
//!
//! | command    | files |
//! |------------|-------|
//! | `ingest`   | `trips.csv`, `cleaning_report.txt`, `cleaning_report.json`, `grid_summary.txt` |
//! | `synth`    | `trips.csv`, `ground_truth.json` |
//! | `analyze`  | `features.csv`, `utilization_d<m>_t<s>.csv`, `aggregate.json`, `aggregate_edges.txt`, `edge_weight_histogram.csv`, `degree_histogram_{in,out,total}.csv`, `hourly_profile.csv`, `delay_curve.csv` |
//! | `forecast` | `models/d<m>_t<s>_h<h>.json`, `models/d<m>_t<s>_h<h>_scatter.csv`, `grid_summary.csv`, `sweeps/d<m>_t<s>.csv`, `per_feature.csv`, `validation.json`, `validation_scatter.csv` |
//! | `report`   | `summary.txt`, and `reference_comparison.csv` in full-data mode |
//!
//! Files are written to a temporary sibling and renamed into place.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynnet::{self, build_network, Direction, RidesNetwork, SnapshotWindow, TiledTrips};
use crate::grid::{BoundingBox, TileGrid};
use crate::ingest::{self, format_timestamp, parse_timestamp, CleaningReport, ColumnMapping, TripRecord};
use crate::metrics::{self, EigenvalueNormalization, Feature, FeatureVector};
use crate::model::{self, FitReport, ForecastGrid, ForecastSpec, GridSeries, SeriesInputs, TargetMode};
use crate::sharing::{self, network_utilization, MergingFactors, SeriesPoint};
use crate::synth::{self, SynthSpec};
use crate::{Error, Result, Timestamp};

const DAY: i64 = 86_400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Raw delimited trip files read by `ingest`.
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    /// Trip store read by `analyze` and `forecast`; `<output_dir>/trips.csv`
    /// when unset.
    pub trip_store: Option<PathBuf>,
    pub columns: ColumnMapping,
    pub bbox: BoundingBox,
    pub analysis_edge_m: f64,
    /// Merge-grid edges; each one is a distance tolerance.
    pub merge_edges_m: Vec<f64>,
    pub window_len_s: i64,
    pub window_step_s: i64,
    /// Snapshot span; derived from the trips (whole UTC days) when unset.
    pub span_start: Option<String>,
    pub span_end: Option<String>,
    pub delays_s: Vec<i64>,
    /// Delays for the aggregate delay curve.
    pub delay_curve_s: Vec<i64>,
    pub horizons_h: Vec<f64>,
    pub sweep_horizons_h: Vec<f64>,
    pub eigenvalue_mode: EigenvalueNormalization,
    pub target_mode: TargetMode,
    pub features: Vec<Feature>,
    /// First feature-window start of the validation side; `span_start + 21 d`
    /// when unset.
    pub split_point: Option<String>,
    /// Worker threads; all available cores when unset.
    pub workers: Option<usize>,
    /// Compare results against the published full-month figures in `report`.
    pub full_data: bool,
    pub synth: SynthSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            inputs: Vec::new(),
            output_dir: PathBuf::from("out"),
            trip_store: None,
            columns: ColumnMapping::default(),
            bbox: BoundingBox::MANHATTAN,
            analysis_edge_m: 1000.0,
            merge_edges_m: vec![400.0, 800.0],
            window_len_s: 3600,
            window_step_s: 3600,
            span_start: None,
            span_end: None,
            delays_s: vec![30, 120, 300],
            delay_curve_s: vec![0, 30, 60, 120, 300, 600, 900, 1800],
            horizons_h: vec![0.0, 1.0, 2.0],
            sweep_horizons_h: (0..=12).map(f64::from).collect(),
            eigenvalue_mode: EigenvalueNormalization::Raw,
            target_mode: TargetMode::Change,
            features: Feature::ALL.to_vec(),
            split_point: None,
            workers: None,
            full_data: false,
            synth: SynthSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::config(format!("config: {e}")))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        TileGrid::new(self.bbox, self.analysis_edge_m)?;
        for &d in &self.merge_edges_m {
            TileGrid::new(self.bbox, d)?;
        }
        if self.window_len_s <= 0 || self.window_step_s <= 0 {
            return Err(Error::config("window length and step must be positive"));
        }
        if let Some(&d) = self.delays_s.iter().chain(&self.delay_curve_s).find(|&&d| d < 0) {
            return Err(Error::config(format!("negative delay tolerance {d} s")));
        }
        if let Some(h) = self.horizons_h.iter().chain(&self.sweep_horizons_h).find(|h| !(**h >= 0.0)) {
            return Err(Error::config(format!("invalid horizon {h} h")));
        }
        if self.features.is_empty() {
            return Err(Error::config("at least one feature must be selected"));
        }
        if self.workers == Some(0) {
            return Err(Error::config("workers must be positive"));
        }
        for s in [&self.span_start, &self.span_end, &self.split_point].into_iter().flatten() {
            parse_timestamp(s).map_err(Error::config)?;
        }
        Ok(())
    }

    pub fn trip_store_path(&self) -> PathBuf {
        self.trip_store
            .clone()
            .unwrap_or_else(|| self.output_dir.join("trips.csv"))
    }

    fn analysis_grid(&self) -> Result<TileGrid> {
        TileGrid::new(self.bbox, self.analysis_edge_m)
    }

    fn forecast_grid(&self) -> ForecastGrid {
        ForecastGrid {
            distances_m: self.merge_edges_m.clone(),
            delays_s: self.delays_s.clone(),
            horizons_h: self.horizons_h.clone(),
            target_mode: self.target_mode,
            features: self.features.clone(),
        }
    }

    /// Configured span, or the whole UTC days covering every trip start.
    fn span(&self, trips: &[TripRecord]) -> Result<Option<(Timestamp, Timestamp)>> {
        let parsed = |s: &Option<String>| s.as_deref().map(parse_timestamp).transpose().map_err(Error::config);
        let (start, end) = (parsed(&self.span_start)?, parsed(&self.span_end)?);
        let first = trips.iter().map(|t| t.t_start).min();
        let last = trips.iter().map(|t| t.t_start).max();
        let start = start.or(first.map(|t| t.div_euclid(DAY) * DAY));
        let end = end.or(last.map(|t| (t.div_euclid(DAY) + 1) * DAY));
        match (start, end) {
            (Some(s), Some(e)) if e > s => Ok(Some((s, e))),
            (Some(s), Some(e)) => Err(Error::config(format!("span end {e} not after start {s}"))),
            _ => Ok(None),
        }
    }
}

/// Messages for the user; warnings do not change the exit status.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub warnings: Vec<String>,
}

impl Outcome {
    fn line(&mut self, s: impl Into<String>) {
        self.lines.push(s.into());
    }

    fn warn(&mut self, s: impl Into<String>) {
        self.warnings.push(s.into());
    }
}

/// Writes `contents` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::data(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

pub fn load_trips(path: &Path) -> Result<Vec<TripRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest::read_trip_store(f).map_err(|e| match e {
        Error::Data(m) => Error::data(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn store_trips(path: &Path, trips: &[TripRecord]) -> Result<()> {
    let mut buf = Vec::new();
    ingest::write_trip_store(&mut buf, trips)?;
    write_atomic(path, buf)
}

fn tol_tag(distance_m: f64, delay_s: i64) -> String {
    format!("d{distance_m}_t{delay_s}")
}

fn cell_tag(spec: &ForecastSpec) -> String {
    format!("{}_h{}", tol_tag(spec.distance_tolerance_m, spec.time_tolerance_s), spec.horizon_h)
}

pub fn cmd_ingest(cfg: &PipelineConfig) -> Result<Outcome> {
    cfg.validate()?;
    if cfg.inputs.is_empty() {
        return Err(Error::config("ingest needs at least one input file"));
    }
    let mut trips = Vec::new();
    let mut report = CleaningReport::default();
    for path in &cfg.inputs {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let (t, r) = ingest::ingest_reader(f, &cfg.columns, cfg.bbox).map_err(|e| match e {
            Error::Data(m) => Error::data(format!("{}: {m}", path.display())),
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        trips.extend(t);
        report.rows_read += r.rows_read;
        report.rows_dropped_gps += r.rows_dropped_gps;
        report.rows_dropped_bbox += r.rows_dropped_bbox;
        report.rows_dropped_schema += r.rows_dropped_schema;
        report.rows_kept += r.rows_kept;
    }
    trips.sort_by_key(|t| t.t_start);
    let out = &cfg.output_dir;
    store_trips(&cfg.trip_store_path(), &trips)?;
    write_atomic(&out.join("cleaning_report.txt"), report.to_key_values())?;
    write_json(&out.join("cleaning_report.json"), &report)?;
    write_atomic(&out.join("grid_summary.txt"), cfg.analysis_grid()?.summary())?;

    let mut outcome = Outcome::default();
    outcome.line(report.to_key_values().trim_end());
    if report.rows_kept == 0 {
        outcome.warn("no rows survived cleaning");
    }
    Ok(outcome)
}

pub fn cmd_synth(cfg: &PipelineConfig) -> Result<Outcome> {
    let (trips, truth) = synth::generate(&cfg.synth)?;
    let synth_box = cfg.synth.bbox()?;
    if !(cfg.bbox.contains(synth_box.min_lon, synth_box.min_lat)
        && cfg.bbox.contains(synth_box.max_lon, synth_box.max_lat))
    {
        return Err(Error::config(format!(
            "synthetic city {synth_box} extends outside the analysis box {}",
            cfg.bbox
        )));
    }
    store_trips(&cfg.trip_store_path(), &trips)?;
    write_json(&cfg.output_dir.join("ground_truth.json"), &truth)?;
    let mut outcome = Outcome::default();
    outcome.line(format!(
        "generated {} trips over {} days (expected {:.1})",
        trips.len(),
        cfg.synth.n_days,
        truth.expected_trips
    ));
    Ok(outcome)
}

/// Whole-span statistics written to `aggregate.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub span_start: Option<String>,
    pub span_end: Option<String>,
    pub n_windows: usize,
    pub total_trips: u64,
    pub n_nodes: usize,
    pub n_edges: usize,
    pub destination_guess_probability: Option<f64>,
    pub passenger_distribution: Option<sharing::PassengerStats>,
    pub merging_factors: MergingFactors,
    pub eigenvalue_mode: EigenvalueNormalization,
    pub utilization: Vec<AggregateUtilization>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateUtilization {
    pub distance_m: f64,
    pub delay_s: i64,
    /// Utilization of the whole span as one snapshot.
    pub aggregate: sharing::UtilizationResult,
    /// Unweighted mean of the per-window alphas.
    pub mean_window_alpha: f64,
}

fn factors_for(trips: &[TripRecord]) -> Result<(Option<sharing::PassengerStats>, MergingFactors)> {
    if trips.is_empty() {
        return Ok((None, MergingFactors::IDENTITY));
    }
    let stats = sharing::passenger_distribution(trips)?;
    let factors = sharing::merging_factors(&stats.distribution)?;
    Ok((Some(stats), factors))
}

fn features_csv(windows: &[SnapshotWindow], nets: &[RidesNetwork], feats: &[FeatureVector], mode: EigenvalueNormalization) -> String {
    let mut s = String::from("window_start,window_end,n_trips");
    for f in Feature::ALL {
        s.push(',');
        s.push_str(f.name());
    }
    let _ = writeln!(s, ",eigenvalue_mode");
    for ((w, net), fv) in windows.iter().zip(nets).zip(feats) {
        let _ = write!(s, "{},{},{}", w.t1, w.t2, net.total_trips());
        for f in Feature::ALL {
            let _ = write!(s, ",{}", fv.get(f));
        }
        let _ = writeln!(s, ",{mode}");
    }
    s
}

fn utilization_csv(points: &[SeriesPoint]) -> String {
    let mut s = String::from(
        "window_start,window_end,total_trips,matched_trips,alpha,saved_fraction,lower_bound,upper_bound,bounds_inverted,pct_change_vs_mean\n",
    );
    for p in points {
        let r = &p.result;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            p.window.t1,
            p.window.t2,
            r.total_trips,
            r.matched_trips,
            r.alpha,
            r.saved_fraction,
            r.lower_bound,
            r.upper_bound,
            r.bounds_inverted,
            p.pct_change_vs_mean
        );
    }
    s
}

fn histogram_csv<K: std::fmt::Display, V: std::fmt::Display>(header: &str, h: &BTreeMap<K, V>) -> String {
    let mut s = format!("{header}\n");
    for (k, v) in h {
        let _ = writeln!(s, "{k},{v}");
    }
    s
}

fn empty_series_files(cfg: &PipelineConfig) -> Result<()> {
    let out = &cfg.output_dir;
    write_atomic(&out.join("features.csv"), features_csv(&[], &[], &[], cfg.eigenvalue_mode))?;
    for &d in &cfg.merge_edges_m {
        for &t in &cfg.delays_s {
            write_atomic(&out.join(format!("utilization_{}.csv", tol_tag(d, t))), utilization_csv(&[]))?;
        }
    }
    Ok(())
}

pub fn cmd_analyze(cfg: &PipelineConfig) -> Result<Outcome> {
    cfg.validate()?;
    let trips = load_trips(&cfg.trip_store_path())?;
    let mut outcome = Outcome::default();
    let out = &cfg.output_dir;
    let grid = cfg.analysis_grid()?;
    let (passengers, factors) = factors_for(&trips)?;
    if factors.inverted() {
        outcome.warn(format!(
            "capacity bounds inverted for this passenger mix (lower {:.4} > upper {:.4})",
            factors.lower, factors.upper
        ));
    }

    let Some((start, end)) = cfg.span(&trips)? else {
        outcome.warn("trip store is empty; writing empty series");
        empty_series_files(cfg)?;
        let aggregate = Aggregate {
            span_start: None,
            span_end: None,
            n_windows: 0,
            total_trips: 0,
            n_nodes: 0,
            n_edges: 0,
            destination_guess_probability: None,
            passenger_distribution: None,
            merging_factors: factors,
            eigenvalue_mode: cfg.eigenvalue_mode,
            utilization: Vec::new(),
        };
        write_json(&out.join("aggregate.json"), &aggregate)?;
        outcome.line("0 windows");
        return Ok(outcome);
    };

    let windows = dynnet::snapshot_windows(start, end, cfg.window_len_s, cfg.window_step_s)?;
    let tiled = TiledTrips::new(&trips, &grid)?;
    let nets: Vec<RidesNetwork> = windows.par_iter().map(|&w| tiled.network(w)).collect();
    let feats: Vec<FeatureVector> = nets
        .par_iter()
        .map(|n| metrics::features(n, cfg.eigenvalue_mode))
        .collect::<Result<_>>()?;
    write_atomic(&out.join("features.csv"), features_csv(&windows, &nets, &feats, cfg.eigenvalue_mode))?;

    // whole-span network on the analysis grid
    let span = SnapshotWindow::new(start, end)?;
    let whole = build_network(&trips, &grid, span)?;
    let mut edge_list = Vec::new();
    dynnet::write_edge_list(&mut edge_list, &whole).map_err(|e| Error::io(out.join("aggregate_edges.txt"), e))?;
    write_atomic(&out.join("aggregate_edges.txt"), edge_list)?;
    write_atomic(
        &out.join("edge_weight_histogram.csv"),
        histogram_csv("weight,edges", &dynnet::edge_weight_distribution(&whole)),
    )?;
    for (name, dir) in [("in", Direction::In), ("out", Direction::Out), ("total", Direction::Total)] {
        write_atomic(
            &out.join(format!("degree_histogram_{name}.csv")),
            histogram_csv("degree,nodes", &dynnet::degree_distribution(&whole, dir)),
        )?;
    }
    let mut by_hour = [0u64; 24];
    for t in &trips {
        if span.contains(t.t_start) {
            by_hour[(t.t_start.rem_euclid(DAY) / 3600) as usize] += 1;
        }
    }
    let n_days = ((end - start) as f64 / DAY as f64).max(f64::MIN_POSITIVE);
    let mut profile = String::from("hour,trips,mean_trips_per_day\n");
    for (h, c) in by_hour.iter().enumerate() {
        let _ = writeln!(profile, "{h},{c},{}", *c as f64 / n_days);
    }
    write_atomic(&out.join("hourly_profile.csv"), profile)?;

    let mut utilization = Vec::new();
    let mut curve = String::from(
        "distance_m,delay_s,aggregate_alpha,aggregate_saved_fraction,aggregate_lower_bound,aggregate_upper_bound,mean_window_alpha\n",
    );
    for &d in &cfg.merge_edges_m {
        let merge_grid = TileGrid::new(cfg.bbox, d)?;
        let merge_tiled = TiledTrips::new(&trips, &merge_grid)?;
        let snaps: Vec<RidesNetwork> = windows.par_iter().map(|&w| merge_tiled.network(w)).collect();
        let whole_merge = merge_tiled.network(span);
        let mut delays: Vec<i64> = cfg.delays_s.iter().chain(&cfg.delay_curve_s).copied().collect();
        delays.sort_unstable();
        delays.dedup();
        for t in delays {
            let series = sharing::utilization_series(&snaps, t, factors)?;
            let mean = series.iter().map(|p| p.result.alpha).sum::<f64>() / series.len() as f64;
            let agg = network_utilization(&whole_merge, t, factors);
            if cfg.delays_s.contains(&t) {
                write_atomic(&out.join(format!("utilization_{}.csv", tol_tag(d, t))), utilization_csv(&series))?;
                utilization.push(AggregateUtilization {
                    distance_m: d,
                    delay_s: t,
                    aggregate: agg,
                    mean_window_alpha: mean,
                });
            }
            if cfg.delay_curve_s.contains(&t) {
                let _ = writeln!(
                    curve,
                    "{d},{t},{},{},{},{},{mean}",
                    agg.alpha, agg.saved_fraction, agg.lower_bound, agg.upper_bound
                );
            }
        }
    }
    write_atomic(&out.join("delay_curve.csv"), curve)?;

    let aggregate = Aggregate {
        span_start: Some(format_timestamp(start)),
        span_end: Some(format_timestamp(end)),
        n_windows: windows.len(),
        total_trips: whole.total_trips(),
        n_nodes: whole.n_nodes(),
        n_edges: whole.n_edges(),
        destination_guess_probability: metrics::destination_guess_probability(&whole).ok(),
        passenger_distribution: passengers,
        merging_factors: factors,
        eigenvalue_mode: cfg.eigenvalue_mode,
        utilization,
    };
    write_json(&out.join("aggregate.json"), &aggregate)?;
    outcome.line(format!(
        "{} windows, {} trips, {} nodes, {} edges",
        windows.len(),
        whole.total_trips(),
        whole.n_nodes(),
        whole.n_edges()
    ));
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CellFile {
    status: String,
    error: Option<String>,
    spec: ForecastSpec,
    report: Option<FitReport>,
}

fn scatter_csv(rows: &[(Timestamp, f64, f64)], third: &str) -> String {
    let mut s = format!("window_start,actual,{third}\n");
    for (t, a, b) in rows {
        let _ = writeln!(s, "{t},{a},{b}");
    }
    s
}

pub fn cmd_forecast(cfg: &PipelineConfig) -> Result<Outcome> {
    cfg.validate()?;
    let trips = load_trips(&cfg.trip_store_path())?;
    let mut outcome = Outcome::default();
    let out = &cfg.output_dir;
    let Some((start, end)) = cfg.span(&trips)? else {
        return Err(Error::data("trip store is empty; nothing to forecast"));
    };
    let grid = cfg.analysis_grid()?;
    let (_, factors) = factors_for(&trips)?;
    let inputs = SeriesInputs {
        trips: &trips,
        analysis_grid: &grid,
        span_start: start,
        span_end: end,
        window_len: cfg.window_len_s,
        step: cfg.window_step_s,
        eigenvalue_mode: cfg.eigenvalue_mode,
        factors,
    };
    let fgrid = cfg.forecast_grid();
    let series = GridSeries::compute(&inputs, &fgrid)?;
    let cells = series.fit_grid(&fgrid);

    let mut summary = String::from(
        "distance_m,delay_s,horizon_h,target_mode,n_samples,r2,adjusted_r2,f_statistic,f_p_value,dropped_features,error\n",
    );
    let mut failed = 0;
    for cell in &cells {
        let tag = cell_tag(&cell.spec);
        let s = &cell.spec;
        let mode = serde_json::to_value(s.target_mode).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        let file = match &cell.result {
            Ok(r) => {
                write_atomic(&out.join("models").join(format!("{tag}_scatter.csv")), scatter_csv(&r.scatter, "fitted"))?;
                let m = &r.model;
                let _ = writeln!(
                    summary,
                    "{},{},{},{mode},{},{},{},{},{},{},",
                    s.distance_tolerance_m,
                    s.time_tolerance_s,
                    s.horizon_h,
                    m.n_samples,
                    m.r2,
                    m.adjusted_r2,
                    m.anova.f_statistic,
                    m.anova.p_value,
                    r.dropped_features.join(";")
                );
                CellFile {
                    status: "ok".into(),
                    error: None,
                    spec: s.clone(),
                    report: Some(r.clone()),
                }
            }
            Err(e) => {
                failed += 1;
                outcome.warn(format!("model {tag}: {e}"));
                let _ = writeln!(
                    summary,
                    "{},{},{},{mode},,,,,,,\"{}\"",
                    s.distance_tolerance_m,
                    s.time_tolerance_s,
                    s.horizon_h,
                    e.to_string().replace('"', "'")
                );
                CellFile {
                    status: "failed".into(),
                    error: Some(e.to_string()),
                    spec: s.clone(),
                    report: None,
                }
            }
        };
        write_json(&out.join("models").join(format!("{tag}.json")), &file)?;
    }
    write_atomic(&out.join("grid_summary.csv"), summary)?;

    // horizon sweeps, one per tolerance pair
    let mut n_sweeps = 0;
    for &d in &fgrid.distances_m {
        for &t in &fgrid.delays_s {
            let base = ForecastSpec {
                distance_tolerance_m: d,
                time_tolerance_s: t,
                horizon_h: 0.0,
                target_mode: cfg.target_mode,
                features: cfg.features.clone(),
            };
            let mut s = String::from("horizon_h,n_samples,r2,adjusted_r2,error\n");
            match series.alphas(d, t) {
                Ok(u) => {
                    let sweep = model::horizon_sweep(&series.features, &u, &cfg.sweep_horizons_h, &base);
                    for e in sweep.entries {
                        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                        let _ = writeln!(
                            s,
                            "{},{},{},{},{}",
                            e.horizon_h,
                            e.n_samples.map(|n| n.to_string()).unwrap_or_default(),
                            opt(e.r2),
                            opt(e.adjusted_r2),
                            e.error.map(|m| format!("\"{}\"", m.replace('"', "'"))).unwrap_or_default()
                        );
                    }
                }
                Err(e) => outcome.warn(format!("sweep {}: {e}", tol_tag(d, t))),
            }
            write_atomic(&out.join("sweeps").join(format!("{}.csv", tol_tag(d, t))), s)?;
            n_sweeps += 1;
        }
    }

    // single-feature and combined level fits at horizon 0
    let mut per_feature = String::from("distance_m,delay_s,feature,n_samples,r2,adjusted_r2,error\n");
    for &d in &fgrid.distances_m {
        for &t in &fgrid.delays_s {
            let Ok(u) = series.alphas(d, t) else { continue };
            let spec = ForecastSpec {
                distance_tolerance_m: d,
                time_tolerance_s: t,
                horizon_h: 0.0,
                target_mode: TargetMode::Level,
                features: cfg.features.clone(),
            };
            for (name, fit) in model::per_feature_fits(&series.features, &u, &spec) {
                match fit {
                    Ok(m) => {
                        let _ = writeln!(per_feature, "{d},{t},{name},{},{},{},", m.n_samples, m.r2, m.adjusted_r2);
                    }
                    Err(e) => {
                        let _ = writeln!(per_feature, "{d},{t},{name},,,,\"{}\"", e.to_string().replace('"', "'"));
                    }
                }
            }
        }
    }
    write_atomic(&out.join("per_feature.csv"), per_feature)?;

    // train / validation split on the first cell
    let split = match &cfg.split_point {
        Some(s) => parse_timestamp(s).map_err(Error::config)?,
        None => start + 21 * DAY,
    };
    if let Some(first) = fgrid.cells().into_iter().next() {
        let validation = series
            .alphas(first.distance_tolerance_m, first.time_tolerance_s)
            .and_then(|u| model::split_validate(&series.features, &u, split, &first));
        match validation {
            Ok(v) => {
                write_atomic(&out.join("validation_scatter.csv"), scatter_csv(&v.validation_scatter, "predicted"))?;
                write_json(&out.join("validation.json"), &v)?;
                outcome.line(format!(
                    "validation {}: train r2 {:.4}, validation r2 {:.4}",
                    cell_tag(&first),
                    v.train.model.r2,
                    v.validation_r2
                ));
            }
            Err(e) => outcome.warn(format!("validation {}: {e}", cell_tag(&first))),
        }
    }
    outcome.line(format!(
        "{} models ({} failed), {} sweeps",
        cells.len(),
        failed,
        n_sweeps
    ));
    Ok(outcome)
}

/// A published full-month figure next to this run's value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub quantity: &'static str,
    pub published: f64,
}

pub const REFERENCES: [Reference; 6] = [
    Reference { quantity: "rows_kept", published: 12_784_243.0 },
    Reference { quantity: "aggregate_nodes", published: 813.0 },
    Reference { quantity: "aggregate_edges", published: 58_014.0 },
    Reference { quantity: "destination_guess_probability", published: 0.075 },
    Reference { quantity: "aggregate_alpha_5min", published: 0.70 },
    Reference { quantity: "combined_adjusted_r2_h0", published: 0.82 },
];

/// Relative half-width of the plausibility band in the comparison table.
pub const REFERENCE_BAND: f64 = 0.15;

fn measured_references(cfg: &PipelineConfig) -> Result<BTreeMap<&'static str, f64>> {
    let out = &cfg.output_dir;
    let mut m = BTreeMap::new();
    let report_path = out.join("cleaning_report.json");
    if report_path.exists() {
        let r: CleaningReport = read_json(&report_path)?;
        m.insert("rows_kept", r.rows_kept as f64);
    }
    let agg_path = out.join("aggregate.json");
    if agg_path.exists() {
        let a: Aggregate = read_json(&agg_path)?;
        m.insert("aggregate_nodes", a.n_nodes as f64);
        m.insert("aggregate_edges", a.n_edges as f64);
        if let Some(p) = a.destination_guess_probability {
            m.insert("destination_guess_probability", p);
        }
        if let Some(u) = a.utilization.iter().find(|u| u.delay_s == 300) {
            m.insert("aggregate_alpha_5min", u.aggregate.alpha);
        }
    }
    let pf_path = out.join("per_feature.csv");
    if pf_path.exists() {
        let mut rdr = csv::Reader::from_path(&pf_path).map_err(|e| Error::data(format!("{}: {e}", pf_path.display())))?;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::data(format!("{}: {e}", pf_path.display())))?;
            if &rec[2] == "combined" && &rec[1] == "300" {
                if let Ok(v) = rec[5].parse::<f64>() {
                    m.entry("combined_adjusted_r2_h0").or_insert(v);
                }
            }
        }
    }
    Ok(m)
}

pub fn cmd_report(cfg: &PipelineConfig) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    let out = &cfg.output_dir;
    let mut summary = String::new();
    for name in ["cleaning_report.txt", "grid_summary.txt"] {
        if let Ok(text) = fs::read_to_string(out.join(name)) {
            let _ = writeln!(summary, "[{name}]\n{}", text.trim_end());
        }
    }
    let agg_path = out.join("aggregate.json");
    if agg_path.exists() {
        let a: Aggregate = read_json(&agg_path)?;
        let _ = writeln!(
            summary,
            "[aggregate]\nwindows={}\ntrips={}\nnodes={}\nedges={}\nmerging_factors={} {}",
            a.n_windows, a.total_trips, a.n_nodes, a.n_edges, a.merging_factors.lower, a.merging_factors.upper
        );
        for u in &a.utilization {
            let _ = writeln!(
                summary,
                "alpha_{}={} mean_window_alpha={}",
                tol_tag(u.distance_m, u.delay_s),
                u.aggregate.alpha,
                u.mean_window_alpha
            );
        }
    }
    if let Ok(text) = fs::read_to_string(out.join("grid_summary.csv")) {
        let _ = writeln!(summary, "[models]\n{}", text.trim_end());
    }
    if summary.is_empty() {
        return Err(Error::data(format!("no pipeline outputs found under {}", out.display())));
    }
    write_atomic(&out.join("summary.txt"), &summary)?;
    outcome.line(summary.trim_end());

    if cfg.full_data {
        let measured = measured_references(cfg)?;
        let mut table = String::from("quantity,published,measured,relative_difference,within_band\n");
        for r in &REFERENCES {
            match measured.get(r.quantity) {
                Some(&v) => {
                    let rel = (v - r.published) / r.published;
                    let _ = writeln!(table, "{},{},{v},{rel},{}", r.quantity, r.published, rel.abs() <= REFERENCE_BAND);
                }
                None => {
                    let _ = writeln!(table, "{},{},,,", r.quantity, r.published);
                }
            }
        }
        write_atomic(&out.join("reference_comparison.csv"), table)?;
        outcome.line(format!(
            "reference_comparison.csv written (+/-{:.0}% bands, informational only)",
            REFERENCE_BAND * 100.0
        ));
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let mut cfg = PipelineConfig::default();
        cfg.span_start = Some("2013-01-01 00:00:00".into());
        cfg.workers = Some(3);
        cfg.features = vec![Feature::NNodes, Feature::LargestEigenvalue];
        cfg.eigenvalue_mode = EigenvalueNormalization::WeightNormalized;
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), cfg);
        let default_text = PipelineConfig::default().to_toml_string().unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&default_text).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = PipelineConfig::from_toml_str("analysis_edge_m = 500.0\n[synth]\nseed = 9\n").unwrap();
        assert_eq!(cfg.analysis_edge_m, 500.0);
        assert_eq!(cfg.synth.seed, 9);
        assert_eq!(cfg.synth.n_days, 31);
        assert_eq!(cfg.delays_s, vec![30, 120, 300]);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        assert!(matches!(PipelineConfig::from_toml_str("analysis_edge = 1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn validation_errors() {
        let bad = [
            PipelineConfig { analysis_edge_m: 10.0, ..Default::default() },
            PipelineConfig { window_step_s: 0, ..Default::default() },
            PipelineConfig { delays_s: vec![-1], ..Default::default() },
            PipelineConfig { features: vec![], ..Default::default() },
            PipelineConfig { span_start: Some("yesterday".into()), ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn derived_span_covers_whole_days() {
        let trip = |t| TripRecord {
            o: ingest::Point { lon: -74.0, lat: 40.75 },
            d: ingest::Point { lon: -74.0, lat: 40.75 },
            t_start: t,
            t_end: t + 60,
            passengers: 1,
        };
        let cfg = PipelineConfig::default();
        let base = synth::JANUARY_2013;
        let span = cfg.span(&[trip(base + 5), trip(base + 2 * DAY + 7)]).unwrap();
        assert_eq!(span, Some((base, base + 3 * DAY)));
        assert_eq!(cfg.span(&[]).unwrap(), None);
    }

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b.txt");
        write_atomic(&path, "x").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "x");
        let names: Vec<_> = fs::read_dir(path.parent().unwrap()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }
}
