//! Post-processing shared by every producer module: smoothing, the
//! log-derivative stretch exponent, stretched-exponential fits, Kubo
//! integrals and second spatial moments.
//!
//! All routines are pure functions of immutable inputs.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{argument, domain, Error, Result};

/// A sampled scalar observable with optional per-point standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
    pub metadata: BTreeMap<String, String>,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return argument(format!(
                "times ({}) and values ({}) differ in length",
                times.len(),
                values.len()
            ));
        }
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return argument(format!("times not strictly increasing at index {}", i + 1));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return argument(format!("non-finite value at index {i}"));
        }
        Ok(Self {
            times,
            values,
            stderr: None,
            metadata: BTreeMap::new(),
        })
    }

    pub fn with_stderr(mut self, stderr: Vec<f64>) -> Result<Self> {
        if stderr.len() != self.values.len() {
            return argument("stderr length does not match values");
        }
        if stderr.iter().any(|s| !(*s >= 0.0)) {
            return argument("standard errors must be non-negative");
        }
        self.stderr = Some(stderr);
        Ok(self)
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.metadata.insert(key.into(), value.to_string());
        self
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn stderr_at(&self, i: usize) -> f64 {
        self.stderr.as_ref().map_or(0.0, |s| s[i])
    }

    /// Points with `t_min <= t <= t_max`, metadata preserved.
    pub fn window(&self, window: FitWindow) -> TimeSeries {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.times[i] >= window.t_min && self.times[i] <= window.t_max)
            .collect();
        TimeSeries {
            times: keep.iter().map(|&i| self.times[i]).collect(),
            values: keep.iter().map(|&i| self.values[i]).collect(),
            stderr: self
                .stderr
                .as_ref()
                .map(|s| keep.iter().map(|&i| s[i]).collect()),
            metadata: self.metadata.clone(),
        }
    }

    /// Writes `# key=value` metadata lines, then `t,<name>[,stderr]` rows.
    pub fn write_csv<W: Write>(&self, mut out: W, value_name: &str) -> std::io::Result<()> {
        for (k, v) in &self.metadata {
            writeln!(out, "# {k}={v}")?;
        }
        match &self.stderr {
            Some(se) => {
                writeln!(out, "t,{value_name},stderr")?;
                for i in 0..self.len() {
                    writeln!(out, "{},{:e},{:e}", self.times[i], self.values[i], se[i])?;
                }
            }
            None => {
                writeln!(out, "t,{value_name}")?;
                for i in 0..self.len() {
                    writeln!(out, "{},{:e}", self.times[i], self.values[i])?;
                }
            }
        }
        Ok(())
    }

    /// Reads the two- or three-column dialect written by [`TimeSeries::write_csv`].
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let table = CsvTable::read(input)?;
        if table.columns.len() < 2 || table.columns[0] != "t" {
            return argument("expected a `t,<value>[,stderr]` header");
        }
        let times = table.column(0);
        let values = table.column(1);
        let mut series = TimeSeries::new(times, values)?;
        if let Some(j) = table.index_of("stderr") {
            series = series.with_stderr(table.column(j))?;
        }
        series.metadata = table.metadata;
        Ok(series)
    }
}

/// A comma-separated table with `# key=value` preamble.
#[derive(Debug, Clone, Default)]
pub struct CsvTable {
    pub metadata: BTreeMap<String, String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut table = CsvTable::default();
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::Argument(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    table.metadata.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if table.columns.is_empty() {
                table.columns = line.split(',').map(|c| c.trim().to_string()).collect();
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|c| c.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| Error::Argument(format!("line {}: {e}", lineno + 1)))?;
            if row.len() != table.columns.len() {
                return argument(format!("line {}: wrong column count", lineno + 1));
            }
            table.rows.push(row);
        }
        if table.columns.is_empty() {
            return argument("empty csv");
        }
        Ok(table)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }
}

/// Inclusive time window used by fits and reductions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub t_min: f64,
    pub t_max: f64,
}

impl FitWindow {
    pub fn new(t_min: f64, t_max: f64) -> Result<Self> {
        if !(t_min <= t_max) {
            return argument(format!("empty window [{t_min}, {t_max}]"));
        }
        Ok(Self { t_min, t_max })
    }

    pub fn all() -> Self {
        Self {
            t_min: f64::NEG_INFINITY,
            t_max: f64::INFINITY,
        }
    }

    /// Starts after three microscopic times and ends at the last point whose
    /// relative standard error is still below 20%.
    pub fn default_for(series: &TimeSeries, micro_time: f64) -> Self {
        let t_min = 3.0 * micro_time;
        let mut t_max = series.times.last().copied().unwrap_or(t_min);
        if let Some(se) = &series.stderr {
            if let Some(i) = (0..series.len())
                .rev()
                .find(|&i| se[i] < 0.2 * series.values[i].abs())
            {
                t_max = series.times[i];
            }
        }
        Self { t_min, t_max }
    }
}

/// Result of `fit_stretched`: `-ln P ≈ amplitude · t^alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub alpha: f64,
    pub amplitude: f64,
    pub alpha_stderr: f64,
    pub amplitude_stderr: f64,
    /// Covariance of (alpha, ln amplitude).
    pub covariance: [[f64; 2]; 2],
    pub residual_norm: f64,
    pub window: FitWindow,
    pub points: usize,
}

/// Ordinary least squares line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
    pub cov_slope_intercept: f64,
    pub r_squared: f64,
    pub residual_norm: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() {
        return argument("x and y differ in length");
    }
    if n < 2 {
        return argument("linear fit needs at least two points");
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return argument("degenerate abscissa (all x equal)");
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let s2 = if n > 2 { rss / (nf - 2.0) } else { 0.0 };
    let r_squared = if syy > 0.0 { 1.0 - rss / syy } else { 1.0 };
    Ok(LinearFit {
        slope,
        intercept,
        slope_stderr: (s2 / sxx).sqrt(),
        intercept_stderr: (s2 * (1.0 / nf + mx * mx / sxx)).sqrt(),
        cov_slope_intercept: -mx * s2 / sxx,
        r_squared,
        residual_norm: rss.sqrt(),
    })
}

/// Discrete Gaussian-kernel convolution in `t`. Near the ends the truncated
/// kernel is renormalised so constants are preserved exactly.
pub fn gaussian_smooth(series: &TimeSeries, width: f64) -> Result<TimeSeries> {
    if !(width > 0.0) || !width.is_finite() {
        return argument(format!("smoothing width must be positive, got {width}"));
    }
    let n = series.len();
    let reach = 8.0 * width;
    let mut values = Vec::with_capacity(n);
    let mut errs = Vec::with_capacity(n);
    let mut lo = 0;
    for i in 0..n {
        let ti = series.times[i];
        while series.times[lo] < ti - reach {
            lo += 1;
        }
        let (mut wsum, mut acc, mut var) = (0.0, 0.0, 0.0);
        for j in lo..n {
            let dt = series.times[j] - ti;
            if dt > reach {
                break;
            }
            let w = (-0.5 * (dt / width).powi(2)).exp();
            wsum += w;
            acc += w * series.values[j];
            var += w * w * series.stderr_at(j).powi(2);
        }
        values.push(acc / wsum);
        errs.push(var.sqrt() / wsum);
    }
    let mut out = TimeSeries::new(series.times.clone(), values)?;
    if series.stderr.is_some() {
        out = out.with_stderr(errs)?;
    }
    out.metadata = series.metadata.clone();
    Ok(out.with_meta("smooth_width", width))
}

/// `y_i = ln(-ln P_i)` with the indices of points outside (0, 1) collected.
fn log_minus_log(series: &TimeSeries) -> Result<Vec<f64>> {
    let bad: Vec<usize> = (0..series.len())
        .filter(|&i| !(series.values[i] > 0.0 && series.values[i] < 1.0))
        .collect();
    if !bad.is_empty() {
        return domain(format!("values must lie in (0, 1); offending indices {bad:?}"));
    }
    if let Some(i) = series.times.iter().position(|t| !(*t > 0.0)) {
        return domain(format!("log-derivative needs t > 0 (index {i})"));
    }
    Ok(series.values.iter().map(|p| (-p.ln()).ln()).collect())
}

/// Three-point derivative weights on a non-uniform grid. Interior points use
/// the centred formula; the two ends use second-order one-sided stencils.
fn derivative_weights(u: &[f64], i: usize) -> [(usize, f64); 3] {
    let n = u.len();
    if n == 2 {
        let h = u[1] - u[0];
        return [(0, -1.0 / h), (1, 1.0 / h), (1, 0.0)];
    }
    if i == 0 || i == n - 1 {
        // stencil (a, b, c) with derivative taken at a
        let (a, b, c) = if i == 0 { (0, 1, 2) } else { (n - 1, n - 2, n - 3) };
        let h1 = u[b] - u[a];
        let h2 = u[c] - u[a];
        let wb = h2 / (h1 * (h2 - h1));
        let wc = -h1 / (h2 * (h2 - h1));
        return [(a, -(wb + wc)), (b, wb), (c, wc)];
    }
    let h1 = u[i] - u[i - 1];
    let h2 = u[i + 1] - u[i];
    [
        (i - 1, -h2 / (h1 * (h1 + h2))),
        (i, (h2 - h1) / (h1 * h2)),
        (i + 1, h1 / (h2 * (h1 + h2))),
    ]
}

/// Local stretch exponent `α(t) = d ln(-ln P) / d ln t`.
pub fn stretch_exponent(series: &TimeSeries) -> Result<TimeSeries> {
    if series.len() < 2 {
        return argument("stretch exponent needs at least two points");
    }
    let y = log_minus_log(series)?;
    let u: Vec<f64> = series.times.iter().map(|t| t.ln()).collect();
    // d y / d P = 1 / (P ln P)
    let dy: Vec<f64> = (0..series.len())
        .map(|i| {
            let p = series.values[i];
            series.stderr_at(i) / (p * p.ln()).abs()
        })
        .collect();
    let mut alpha = Vec::with_capacity(series.len());
    let mut err = Vec::with_capacity(series.len());
    for i in 0..series.len() {
        let w = derivative_weights(&u, i);
        alpha.push(w.iter().map(|&(j, c)| c * y[j]).sum());
        err.push(w.iter().map(|&(j, c)| (c * dy[j]).powi(2)).sum::<f64>().sqrt());
    }
    let mut out = TimeSeries::new(series.times.clone(), alpha)?;
    if series.stderr.is_some() {
        out = out.with_stderr(err)?;
    }
    out.metadata = series.metadata.clone();
    Ok(out.with_meta("quantity", "stretch_exponent"))
}

/// Linear interpolation of `series` onto a geometric grid with
/// `per_decade` points per decade spanning its (positive) time range.
pub fn resample_log(series: &TimeSeries, per_decade: usize) -> Result<TimeSeries> {
    if per_decade == 0 || series.len() < 2 {
        return argument("resampling needs per_decade > 0 and two points");
    }
    let t0 = series.times[0];
    let t1 = *series.times.last().unwrap();
    if !(t0 > 0.0) {
        return domain("geometric resampling needs t > 0");
    }
    let decades = (t1 / t0).log10();
    let m = ((decades * per_decade as f64).floor() as usize).max(1);
    let grid: Vec<f64> = (0..=m)
        .map(|k| t0 * 10f64.powf(decades * k as f64 / m as f64))
        .map(|t| t.clamp(t0, t1))
        .collect();
    let values: Vec<f64> = grid.iter().map(|&t| interp_linear(&series.times, &series.values, t)).collect();
    let mut out = TimeSeries::new(grid.clone(), values)?;
    if let Some(se) = &series.stderr {
        out = out.with_stderr(grid.iter().map(|&t| interp_linear(&series.times, se, t)).collect())?;
    }
    out.metadata = series.metadata.clone();
    Ok(out)
}

/// Local exponent over a fit window and its mean over the window's last
/// decade in `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecadeExponent {
    pub window: FitWindow,
    pub alpha: TimeSeries,
    pub mean_alpha: f64,
    pub points: usize,
}

/// Log-derivative exponent on the window's own grid (non-uniform stencil),
/// averaged over `[t_end/10, t_end]` with trapezoid weights in `ln t`.
pub fn final_decade_exponent(series: &TimeSeries, window: FitWindow) -> Result<DecadeExponent> {
    let sub = series.window(window);
    if sub.len() < 3 {
        return argument("window holds fewer than three points");
    }
    let alpha = stretch_exponent(&sub)?;
    let t_end = *alpha.times.last().unwrap();
    let idx: Vec<usize> = (0..alpha.len())
        .filter(|&i| alpha.times[i] >= t_end / 10.0 * (1.0 - 1e-12))
        .collect();
    let mean_alpha = if idx.len() == 1 {
        alpha.values[idx[0]]
    } else {
        let (mut acc, mut span) = (0.0, 0.0);
        for w in idx.windows(2) {
            let h = alpha.times[w[1]].ln() - alpha.times[w[0]].ln();
            acc += 0.5 * h * (alpha.values[w[0]] + alpha.values[w[1]]);
            span += h;
        }
        acc / span
    };
    Ok(DecadeExponent {
        window: FitWindow::new(sub.times[0], *sub.times.last().unwrap())?,
        mean_alpha,
        points: idx.len(),
        alpha,
    })
}

/// Least-squares fit of `ln(-ln P)` against `ln t` inside `window`.
pub fn fit_stretched(series: &TimeSeries, window: FitWindow) -> Result<FitReport> {
    let sub = series.window(window);
    if sub.len() < 4 {
        return argument(format!(
            "fit window [{}, {}] holds {} points, need at least 4",
            window.t_min,
            window.t_max,
            sub.len()
        ));
    }
    let y = log_minus_log(&sub)?;
    let x: Vec<f64> = sub.times.iter().map(|t| t.ln()).collect();
    let fit = linear_fit(&x, &y)?;
    let amplitude = fit.intercept.exp();
    Ok(FitReport {
        alpha: fit.slope,
        amplitude,
        alpha_stderr: fit.slope_stderr,
        amplitude_stderr: amplitude * fit.intercept_stderr,
        covariance: [
            [fit.slope_stderr.powi(2), fit.cov_slope_intercept],
            [fit.cov_slope_intercept, fit.intercept_stderr.powi(2)],
        ],
        residual_norm: fit.residual_norm,
        window: FitWindow::new(sub.times[0], *sub.times.last().unwrap())?,
        points: sub.len(),
    })
}

/// Outcome of a Green–Kubo integration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KuboReport {
    pub diffusivity: f64,
    pub integral: f64,
    /// Time at which the autocorrelation first fell below its noise floor.
    pub cutoff_time: f64,
    /// Region after the cutoff over which the running integral was inspected.
    pub plateau: FitWindow,
    pub running_integral: Vec<f64>,
}

/// Relative floor below which a noise-free autocorrelation counts as decayed.
pub const KUBO_RELATIVE_FLOOR: f64 = 1e-4;

/// `D = (1/χ) ∫ ⟨j(t) j(0)⟩ dt` by the trapezoidal rule on a uniform grid,
/// truncated where the autocorrelation first drops below
/// `max(2·stderr, 1e-4·|C(0)|)`.
pub fn kubo_diffusivity(current: &TimeSeries, susceptibility: f64) -> Result<KuboReport> {
    if !(susceptibility > 0.0) {
        return argument("susceptibility must be positive");
    }
    if current.len() < 2 {
        return argument("autocorrelation needs at least two samples");
    }
    let c0 = current.values[0].abs();
    let mut running = vec![0.0];
    let mut cutoff = None;
    for i in 1..current.len() {
        let dt = current.times[i] - current.times[i - 1];
        let prev = *running.last().unwrap();
        running.push(prev + 0.5 * dt * (current.values[i] + current.values[i - 1]));
        let floor = (2.0 * current.stderr_at(i)).max(KUBO_RELATIVE_FLOOR * c0);
        if current.values[i].abs() <= floor || current.values[i] < 0.0 {
            cutoff = Some(i);
            break;
        }
    }
    let Some(cut) = cutoff else {
        let last = *running.last().unwrap();
        return Err(Error::NoPlateau { running, last });
    };
    let integral = running[cut];
    let t_cut = current.times[cut];
    let t_end = current.times[(2 * cut).min(current.len() - 1)];
    Ok(KuboReport {
        diffusivity: integral / susceptibility,
        integral,
        cutoff_time: t_cut,
        plateau: FitWindow::new(t_cut, t_end.max(t_cut))?,
        running_integral: running,
    })
}

/// Spatial profiles `f(x, t)` sampled on a common time list.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSeries {
    pub times: Vec<f64>,
    /// One `(x, f)` list per time.
    pub profiles: Vec<Vec<(f64, f64)>>,
}

impl ProfileSeries {
    /// Groups rows of a `t,x,<value>` table by `t`.
    pub fn from_table(table: &CsvTable, value_column: &str) -> Result<Self> {
        let (Some(jt), Some(jx), Some(jv)) = (
            table.index_of("t"),
            table.index_of("x"),
            table.index_of(value_column),
        ) else {
            return argument(format!("table lacks t, x or {value_column} columns"));
        };
        let mut out = ProfileSeries {
            times: Vec::new(),
            profiles: Vec::new(),
        };
        for row in &table.rows {
            if out.times.last() != Some(&row[jt]) {
                out.times.push(row[jt]);
                out.profiles.push(Vec::new());
            }
            out.profiles.last_mut().unwrap().push((row[jx], row[jv]));
        }
        Ok(out)
    }
}

/// Normalised second moment `Σ x² f / Σ f` about `x = 0`, per time.
pub fn msd(profiles: &ProfileSeries) -> Result<TimeSeries> {
    let mut values = Vec::with_capacity(profiles.times.len());
    for (t, slice) in profiles.times.iter().zip(&profiles.profiles) {
        let mass: f64 = slice.iter().map(|(_, f)| f).sum();
        let scale: f64 = slice.iter().map(|(_, f)| f.abs()).sum();
        if scale == 0.0 || mass.abs() <= 1e-12 * scale {
            return domain(format!("profile at t={t} has zero total weight"));
        }
        values.push(slice.iter().map(|(x, f)| x * x * f).sum::<f64>() / mass);
    }
    Ok(TimeSeries::new(profiles.times.clone(), values)?.with_meta("quantity", "msd"))
}

/// Piecewise-linear interpolation, clamped to the end values.
pub fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let k = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[k - 1], xs[k]);
    let w = (x - x0) / (x1 - x0);
    ys[k - 1] * (1.0 - w) + ys[k] * w
}

/// Largest pointwise spread `max_i y - min_i y` between curves after
/// interpolating all of them onto `grid`. Curves are `(x, y)` with sorted x.
pub fn max_curve_spread(curves: &[(Vec<f64>, Vec<f64>)], grid: &[f64]) -> f64 {
    grid.iter()
        .map(|&g| {
            let ys: Vec<f64> = curves.iter().map(|(x, y)| interp_linear(x, y, g)).collect();
            let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
            hi - lo
        })
        .fold(0.0, f64::max)
}

/// Fit of `ln y ≈ a − b·t^alpha` at a fixed exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedExponentFit {
    pub alpha: f64,
    pub rate: f64,
    pub intercept: f64,
    pub residual_norm: f64,
}

/// Least-squares `ln y` against `t^alpha` for each exponent in `alphas`,
/// over the positive-valued points of `series` inside `window`.
pub fn fixed_exponent_fits(series: &TimeSeries, window: FitWindow, alphas: &[f64]) -> Result<Vec<FixedExponentFit>> {
    let sub = series.window(window);
    let pts: Vec<(f64, f64)> = sub
        .times
        .iter()
        .zip(&sub.values)
        .filter(|(_, v)| **v > 0.0)
        .map(|(&t, &v)| (t, v.ln()))
        .collect();
    if pts.len() < 3 {
        return argument(format!("decay fit needs three positive points, got {}", pts.len()));
    }
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    alphas
        .iter()
        .map(|&alpha| {
            if !(alpha > 0.0) {
                return argument(format!("exponent must be positive, got {alpha}"));
            }
            let x: Vec<f64> = pts.iter().map(|p| p.0.powf(alpha)).collect();
            let fit = linear_fit(&x, &y)?;
            Ok(FixedExponentFit {
                alpha,
                rate: -fit.slope,
                intercept: fit.intercept,
                residual_norm: fit.residual_norm,
            })
        })
        .collect()
}
