//! Linear models of ride-sharing utilization on snapshot features.
//!
//! Fits are ordinary least squares with an intercept. Feature columns are
//! z-scored before fitting and the problem is solved through a Householder QR
//! decomposition of the standardized design; coefficients are reported both
//! standardized and in original units.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::dynnet::{snapshot_windows, TiledTrips};
use crate::grid::TileGrid;
use crate::ingest::TripRecord;
use crate::metrics::{self, EigenvalueNormalization, Feature, FeatureVector};
use crate::sharing::{self, MergingFactors, SeriesPoint};
use crate::{Error, Result, Timestamp};

/// Relative threshold on `|R_jj|` (against the standardized column norm)
/// below which a column is treated as linearly dependent.
const RANK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_stat: f64,
    pub p_value: f64,
    /// Coefficient on the z-scored column (the intercept is the mean of y).
    pub standardized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anova {
    pub regression_ss: f64,
    pub residual_ss: f64,
    pub total_ss: f64,
    pub df_regression: usize,
    pub df_residual: usize,
    pub f_statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    /// Intercept first, then one entry per predictor.
    pub coefficients: Vec<Coefficient>,
    pub r2: f64,
    pub adjusted_r2: f64,
    pub n_samples: usize,
    pub n_predictors: usize,
    pub residuals: Vec<f64>,
    pub anova: Anova,
    #[serde(skip)]
    column_means: Vec<f64>,
    #[serde(skip)]
    column_scales: Vec<f64>,
}

pub fn adjusted_r2(r2: f64, n: usize, p: usize) -> f64 {
    1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - p as f64 - 1.0)
}

impl RegressionModel {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0].estimate
    }

    /// Slopes in original units, in predictor order.
    pub fn slopes(&self) -> Vec<f64> {
        self.coefficients[1..].iter().map(|c| c.estimate).collect()
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        // work in standardized units so predictions match the fitted values
        let b = &self.coefficients;
        b[0].standardized
            + row
                .iter()
                .zip(&b[1..])
                .zip(self.column_means.iter().zip(&self.column_scales))
                .map(|((x, c), (m, s))| c.standardized * (x - m) / s)
                .sum::<f64>()
    }
}

fn column_name(names: &[String], j: usize) -> String {
    names.get(j).cloned().unwrap_or_else(|| format!("x{j}"))
}

/// Least-squares fit of `y` on the columns of `rows` plus an intercept.
///
/// `names` labels the predictor columns (missing names become `x<j>`).
/// Constant or linearly dependent columns fail with [`Error::Singular`].
pub fn fit_ols(rows: &[Vec<f64>], y: &[f64], names: &[String]) -> Result<RegressionModel> {
    let n = rows.len();
    if y.len() != n {
        return Err(Error::data(format!("{n} design rows but {} targets", y.len())));
    }
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::data("design rows have unequal lengths"));
    }
    if n <= p + 1 {
        return Err(Error::data(format!("{n} samples are too few for {p} predictors")));
    }
    if rows.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::data("design or target contains non-finite values"));
    }

    let nf = n as f64;
    let mut means = vec![0.0; p];
    let mut scales = vec![0.0; p];
    let mut constant = Vec::new();
    for j in 0..p {
        let m = rows.iter().map(|r| r[j]).sum::<f64>() / nf;
        let var = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (nf - 1.0);
        means[j] = m;
        scales[j] = var.sqrt();
        if !(scales[j] > 1e-12 * m.abs().max(f64::MIN_POSITIVE)) {
            constant.push(column_name(names, j));
        }
    }
    if !constant.is_empty() {
        return Err(Error::Singular { columns: constant });
    }

    let z = DMatrix::from_fn(n, p + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            (rows[i][j - 1] - means[j - 1]) / scales[j - 1]
        }
    });
    let yv = DVector::from_column_slice(y);
    let qr = z.clone().qr();
    let r = qr.r();
    let q = qr.q();
    let dependent: Vec<String> = (0..=p)
        .filter(|&j| r[(j, j)].abs() <= RANK_TOLERANCE * nf.sqrt())
        .map(|j| if j == 0 { "intercept".to_string() } else { column_name(names, j - 1) })
        .collect();
    if !dependent.is_empty() {
        return Err(Error::Singular { columns: dependent });
    }

    let qty = q.transpose() * &yv;
    let b = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let fitted = &z * &b;
    let residuals: Vec<f64> = yv.iter().zip(fitted.iter()).map(|(a, f)| a - f).collect();

    let y_mean = y.iter().sum::<f64>() / nf;
    let total_ss: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    if total_ss == 0.0 {
        return Err(Error::data("target is constant"));
    }
    let residual_ss: f64 = residuals.iter().map(|e| e * e).sum();
    let regression_ss: f64 = fitted.iter().map(|f| (f - y_mean).powi(2)).sum();
    let r2 = 1.0 - residual_ss / total_ss;
    let df_res = n - p - 1;
    let sigma2 = residual_ss / df_res as f64;

    let f_statistic = if p == 0 {
        0.0
    } else {
        (regression_ss / p as f64) / sigma2
    };
    let f_p = if p == 0 {
        1.0
    } else if f_statistic.is_finite() {
        FisherSnedecor::new(p as f64, df_res as f64)
            .map(|d| d.sf(f_statistic))
            .unwrap_or(f64::NAN)
    } else {
        0.0
    };

    // Cov(b) = sigma^2 (R^T R)^-1 = sigma^2 R^-1 R^-T
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("R factor not invertible".into()))?;
    let cov_std = (&r_inv * r_inv.transpose()) * sigma2;
    // original units: beta = T b with beta_0 = b_0 - sum b_j m_j / s_j, beta_j = b_j / s_j
    let mut t = DMatrix::<f64>::zeros(p + 1, p + 1);
    t[(0, 0)] = 1.0;
    for j in 1..=p {
        t[(0, j)] = -means[j - 1] / scales[j - 1];
        t[(j, j)] = 1.0 / scales[j - 1];
    }
    let beta = &t * &b;
    let cov = &t * cov_std * t.transpose();

    let t_dist = StudentsT::new(0.0, 1.0, df_res as f64).ok();
    let coefficients = (0..=p)
        .map(|j| {
            let se = cov[(j, j)].max(0.0).sqrt();
            let t_stat = beta[j] / se;
            let p_value = match (&t_dist, t_stat.is_finite()) {
                (Some(d), true) => 2.0 * d.sf(t_stat.abs()),
                _ => 0.0,
            };
            Coefficient {
                name: if j == 0 { "intercept".into() } else { column_name(names, j - 1) },
                estimate: beta[j],
                std_error: se,
                t_stat,
                p_value,
                standardized: b[j],
            }
        })
        .collect();

    Ok(RegressionModel {
        coefficients,
        r2,
        adjusted_r2: adjusted_r2(r2, n, p),
        n_samples: n,
        n_predictors: p,
        residuals,
        anova: Anova {
            regression_ss,
            residual_ss,
            total_ss,
            df_regression: p,
            df_residual: df_res,
            f_statistic,
            p_value: f_p,
        },
        column_means: means,
        column_scales: scales,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Utilization at the target window.
    Level,
    /// Percent deviation of the target window's utilization from the series
    /// mean.
    #[default]
    Change,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSpec {
    pub distance_tolerance_m: f64,
    pub time_tolerance_s: i64,
    pub horizon_h: f64,
    pub target_mode: TargetMode,
    pub features: Vec<Feature>,
}

impl ForecastSpec {
    pub fn new(distance_tolerance_m: f64, time_tolerance_s: i64, horizon_h: f64, target_mode: TargetMode) -> Self {
        ForecastSpec {
            distance_tolerance_m,
            time_tolerance_s,
            horizon_h,
            target_mode,
            features: Feature::ALL.to_vec(),
        }
    }

    pub fn with_horizon(&self, horizon_h: f64) -> Self {
        ForecastSpec {
            horizon_h,
            ..self.clone()
        }
    }
}

/// A regression problem cut from aligned series.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    /// Start of the feature window of each row.
    pub window_starts: Vec<Timestamp>,
}

impl Design {
    /// Removes zero-variance columns, returning their names.
    pub fn drop_constant_columns(&mut self) -> Vec<String> {
        let p = self.names.len();
        let keep: Vec<bool> = (0..p)
            .map(|j| {
                let mut it = self.rows.iter().map(|r| r[j]);
                let first = it.next();
                first.is_some_and(|f| it.any(|v| v != f))
            })
            .collect();
        let dropped = (0..p).filter(|&j| !keep[j]).map(|j| self.names[j].clone()).collect();
        let filter = |v: &Vec<f64>| -> Vec<f64> {
            v.iter().zip(&keep).filter(|(_, k)| **k).map(|(x, _)| *x).collect()
        };
        self.rows = self.rows.iter().map(filter).collect();
        self.names = self
            .names
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(n, _)| n.clone())
            .collect();
        dropped
    }

    pub fn fit(&self) -> Result<RegressionModel> {
        fit_ols(&self.rows, &self.y, &self.names)
    }
}

fn series_step(starts: &[Timestamp]) -> Result<i64> {
    if starts.len() < 2 {
        return Err(Error::data("series needs at least two windows"));
    }
    let step = starts[1] - starts[0];
    if step <= 0 || starts.windows(2).any(|w| w[1] - w[0] != step) {
        return Err(Error::data("series window starts are not evenly spaced"));
    }
    Ok(step)
}

/// Pairs features at each window with the target `horizon_h` hours later.
///
/// Both series must cover the same evenly spaced window starts, and the
/// horizon must be a whole number of steps. Rows whose target falls past the
/// end are dropped.
pub fn build_design(
    features: &[(Timestamp, FeatureVector)],
    utilization: &[(Timestamp, f64)],
    spec: &ForecastSpec,
) -> Result<Design> {
    if features.len() != utilization.len()
        || features.iter().zip(utilization).any(|(f, u)| f.0 != u.0)
    {
        return Err(Error::data("feature and utilization series are not aligned"));
    }
    if !(spec.horizon_h >= 0.0) {
        return Err(Error::config(format!("negative horizon {} h", spec.horizon_h)));
    }
    let starts: Vec<Timestamp> = features.iter().map(|f| f.0).collect();
    let step = series_step(&starts)?;
    let horizon_s = (spec.horizon_h * 3600.0).round() as i64;
    if horizon_s % step != 0 {
        return Err(Error::data(format!(
            "horizon {} h is not a multiple of the {step} s window step",
            spec.horizon_h
        )));
    }
    let shift = (horizon_s / step) as usize;
    let p = spec.features.len();
    let n = features.len().saturating_sub(shift);
    if n < 2 * (p + 1) {
        return Err(Error::data(format!(
            "horizon {} h leaves {n} rows, fewer than {} needed",
            spec.horizon_h,
            2 * (p + 1)
        )));
    }
    let u: Vec<f64> = utilization.iter().map(|x| x.1).collect();
    let mean = u.iter().sum::<f64>() / u.len() as f64;
    let y = (0..n)
        .map(|t| match spec.target_mode {
            TargetMode::Level => u[t + shift],
            TargetMode::Change if mean == 0.0 => 0.0,
            TargetMode::Change => 100.0 * (u[t + shift] - mean) / mean,
        })
        .collect();
    Ok(Design {
        names: spec.features.iter().map(|f| f.name().to_string()).collect(),
        rows: features[..n]
            .iter()
            .map(|(_, fv)| spec.features.iter().map(|&f| fv.get(f)).collect())
            .collect(),
        y,
        window_starts: starts[..n].to_vec(),
    })
}

/// A fit with its bookkeeping, as written to per-cell reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub spec: ForecastSpec,
    pub dropped_features: Vec<String>,
    pub model: RegressionModel,
    /// `(window_start, actual, fitted)` per row.
    pub scatter: Vec<(Timestamp, f64, f64)>,
}

/// Builds the design, drops constant feature columns, and fits.
pub fn fit_spec(
    features: &[(Timestamp, FeatureVector)],
    utilization: &[(Timestamp, f64)],
    spec: &ForecastSpec,
) -> Result<FitReport> {
    let mut design = build_design(features, utilization, spec)?;
    let dropped_features = design.drop_constant_columns();
    let model = design.fit()?;
    let scatter = design
        .window_starts
        .iter()
        .zip(&design.y)
        .zip(&model.residuals)
        .map(|((&t, &y), &e)| (t, y, y - e))
        .collect();
    Ok(FitReport {
        spec: spec.clone(),
        dropped_features,
        model,
        scatter,
    })
}

/// One single-feature fit per selected feature plus the combined fit.
pub fn per_feature_fits(
    features: &[(Timestamp, FeatureVector)],
    utilization: &[(Timestamp, f64)],
    spec: &ForecastSpec,
) -> Vec<(String, Result<RegressionModel>)> {
    let mut out: Vec<(String, Result<RegressionModel>)> = spec
        .features
        .iter()
        .map(|&f| {
            let single = ForecastSpec {
                features: vec![f],
                ..spec.clone()
            };
            (f.name().to_string(), build_design(features, utilization, &single).and_then(|d| d.fit()))
        })
        .collect();
    out.push((
        "combined".to_string(),
        fit_spec(features, utilization, spec).map(|r| r.model),
    ));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub horizon_h: f64,
    pub r2: Option<f64>,
    pub adjusted_r2: Option<f64>,
    pub n_samples: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSweep {
    pub spec: ForecastSpec,
    pub entries: Vec<SweepEntry>,
}

pub fn horizon_sweep(
    features: &[(Timestamp, FeatureVector)],
    utilization: &[(Timestamp, f64)],
    horizons_h: &[f64],
    spec: &ForecastSpec,
) -> HorizonSweep {
    let entries = horizons_h
        .par_iter()
        .map(|&h| match fit_spec(features, utilization, &spec.with_horizon(h)) {
            Ok(r) => SweepEntry {
                horizon_h: h,
                r2: Some(r.model.r2),
                adjusted_r2: Some(r.model.adjusted_r2),
                n_samples: Some(r.model.n_samples),
                error: None,
            },
            Err(e) => SweepEntry {
                horizon_h: h,
                r2: None,
                adjusted_r2: None,
                n_samples: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    HorizonSweep {
        spec: spec.clone(),
        entries,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitValidation {
    pub split_point: Timestamp,
    pub train: FitReport,
    pub validation_rows: usize,
    pub validation_r2: f64,
    /// `(window_start, actual, predicted)` per validation row.
    pub validation_scatter: Vec<(Timestamp, f64, f64)>,
}

/// Fits on rows whose feature window starts before `split_point` and scores
/// the fit on the remaining rows.
pub fn split_validate(
    features: &[(Timestamp, FeatureVector)],
    utilization: &[(Timestamp, f64)],
    split_point: Timestamp,
    spec: &ForecastSpec,
) -> Result<SplitValidation> {
    let design = build_design(features, utilization, spec)?;
    let cut = design.window_starts.partition_point(|&t| t < split_point);
    if cut == 0 || cut == design.rows.len() {
        return Err(Error::config(format!(
            "split point {split_point} leaves an empty training or validation side"
        )));
    }
    let mut train = Design {
        names: design.names.clone(),
        rows: design.rows[..cut].to_vec(),
        y: design.y[..cut].to_vec(),
        window_starts: design.window_starts[..cut].to_vec(),
    };
    let dropped_features = train.drop_constant_columns();
    let keep: Vec<usize> = design
        .names
        .iter()
        .enumerate()
        .filter(|(_, n)| !dropped_features.contains(n))
        .map(|(j, _)| j)
        .collect();
    let model = train.fit()?;
    let scatter: Vec<(Timestamp, f64, f64)> = train
        .window_starts
        .iter()
        .zip(&train.y)
        .zip(&model.residuals)
        .map(|((&t, &y), &e)| (t, y, y - e))
        .collect();

    let validation_scatter: Vec<(Timestamp, f64, f64)> = (cut..design.rows.len())
        .map(|i| {
            let row: Vec<f64> = keep.iter().map(|&j| design.rows[i][j]).collect();
            (design.window_starts[i], design.y[i], model.predict(&row))
        })
        .collect();
    let n_val = validation_scatter.len() as f64;
    let mean = validation_scatter.iter().map(|s| s.1).sum::<f64>() / n_val;
    let ss_tot: f64 = validation_scatter.iter().map(|s| (s.1 - mean).powi(2)).sum();
    let ss_res: f64 = validation_scatter.iter().map(|s| (s.1 - s.2).powi(2)).sum();
    let validation_r2 = if ss_tot == 0.0 { 0.0 } else { 1.0 - ss_res / ss_tot };
    Ok(SplitValidation {
        split_point,
        train: FitReport {
            spec: spec.clone(),
            dropped_features,
            model,
            scatter,
        },
        validation_rows: validation_scatter.len(),
        validation_r2,
        validation_scatter,
    })
}

/// Everything needed to turn a trip store into aligned feature and
/// utilization series.
#[derive(Debug, Clone)]
pub struct SeriesInputs<'a> {
    pub trips: &'a [TripRecord],
    pub analysis_grid: &'a TileGrid,
    pub span_start: Timestamp,
    pub span_end: Timestamp,
    pub window_len: i64,
    pub step: i64,
    pub eigenvalue_mode: EigenvalueNormalization,
    pub factors: MergingFactors,
}

impl SeriesInputs<'_> {
    /// Features of each analysis-grid snapshot.
    pub fn feature_series(&self) -> Result<Vec<(Timestamp, FeatureVector)>> {
        let windows = snapshot_windows(self.span_start, self.span_end, self.window_len, self.step)?;
        let tiled = TiledTrips::new(self.trips, self.analysis_grid)?;
        windows
            .par_iter()
            .map(|&w| Ok((w.t1, metrics::features(&tiled.network(w), self.eigenvalue_mode)?)))
            .collect()
    }

    /// Utilization of each snapshot on a merge grid of `distance_m` tiles
    /// sharing the analysis grid's box.
    pub fn utilization_series(&self, distance_m: f64, delay_s: i64) -> Result<Vec<SeriesPoint>> {
        let windows = snapshot_windows(self.span_start, self.span_end, self.window_len, self.step)?;
        let merge_grid = TileGrid::new(*self.analysis_grid.bbox(), distance_m)?;
        let tiled = TiledTrips::new(self.trips, &merge_grid)?;
        let snaps: Vec<_> = windows.par_iter().map(|&w| tiled.network(w)).collect();
        sharing::utilization_series(&snaps, delay_s, self.factors)
    }
}

pub fn alpha_series(points: &[SeriesPoint]) -> Vec<(Timestamp, f64)> {
    points.iter().map(|p| (p.window.t1, p.result.alpha)).collect()
}

/// Axes of the model grid; one model per (distance, delay, horizon) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastGrid {
    pub distances_m: Vec<f64>,
    pub delays_s: Vec<i64>,
    pub horizons_h: Vec<f64>,
    pub target_mode: TargetMode,
    pub features: Vec<Feature>,
}

impl Default for ForecastGrid {
    /// 2 distances x 3 delays x 3 horizons = 18 cells.
    fn default() -> Self {
        ForecastGrid {
            distances_m: vec![400.0, 800.0],
            delays_s: vec![30, 120, 300],
            horizons_h: vec![0.0, 1.0, 2.0],
            target_mode: TargetMode::Change,
            features: Feature::ALL.to_vec(),
        }
    }
}

impl ForecastGrid {
    pub fn cells(&self) -> Vec<ForecastSpec> {
        let mut out = Vec::new();
        for &d in &self.distances_m {
            for &t in &self.delays_s {
                for &h in &self.horizons_h {
                    out.push(ForecastSpec {
                        distance_tolerance_m: d,
                        time_tolerance_s: t,
                        horizon_h: h,
                        target_mode: self.target_mode,
                        features: self.features.clone(),
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug)]
pub struct CellReport {
    pub spec: ForecastSpec,
    pub result: Result<FitReport>,
}

/// Precomputed series for a grid: features once, utilization per
/// (distance, delay) pair keyed by `(distance in mm, delay)`.
pub struct GridSeries {
    pub features: Vec<(Timestamp, FeatureVector)>,
    pub utilization: BTreeMap<(i64, i64), Result<Vec<SeriesPoint>>>,
}

pub fn tolerance_key(distance_m: f64, delay_s: i64) -> (i64, i64) {
    ((distance_m * 1000.0).round() as i64, delay_s)
}

impl GridSeries {
    pub fn compute(inputs: &SeriesInputs<'_>, grid: &ForecastGrid) -> Result<Self> {
        let features = inputs.feature_series()?;
        let pairs: Vec<(f64, i64)> = grid
            .distances_m
            .iter()
            .flat_map(|&d| grid.delays_s.iter().map(move |&t| (d, t)))
            .collect();
        let utilization = pairs
            .par_iter()
            .map(|&(d, t)| (tolerance_key(d, t), inputs.utilization_series(d, t)))
            .collect::<Vec<_>>()
            .into_iter()
            .collect();
        Ok(GridSeries { features, utilization })
    }

    pub fn alphas(&self, distance_m: f64, delay_s: i64) -> Result<Vec<(Timestamp, f64)>> {
        match self.utilization.get(&tolerance_key(distance_m, delay_s)) {
            Some(Ok(points)) => Ok(alpha_series(points)),
            Some(Err(e)) => Err(Error::data(e.to_string())),
            None => Err(Error::config(format!(
                "no utilization series for {distance_m} m / {delay_s} s"
            ))),
        }
    }

    /// One report per cell; a failing cell does not affect the others.
    pub fn fit_grid(&self, grid: &ForecastGrid) -> Vec<CellReport> {
        grid.cells()
            .into_par_iter()
            .map(|spec| {
                let result = self
                    .alphas(spec.distance_tolerance_m, spec.time_tolerance_s)
                    .and_then(|u| fit_spec(&self.features, &u, &spec));
                CellReport { spec, result }
            })
            .collect()
    }
}

/// Computes every series from the trips and fits each cell of `grid`.
pub fn fit_grid(inputs: &SeriesInputs<'_>, grid: &ForecastGrid) -> Result<Vec<CellReport>> {
    Ok(GridSeries::compute(inputs, grid)?.fit_grid(grid))
}
