//! Subcommand bodies. Each writes its files through [`Artifacts`] under a
//! name prefix, so figure recipes can nest several runs in one directory.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;
use voidlab::analysis::{
    final_decade_exponent, fit_stretched, gaussian_smooth, kubo_diffusivity, linear_fit, msd, CsvTable,
    ProfileSeries,
};
use voidlab::floquet::{
    charged_correlator, charged_correlator_typicality, displacement, noisy_correlator, CorrelatorResult,
    FloquetConfig, NoiseBackend, NoisyConfig, NoisySource,
};
use voidlab::gasmagnon::{
    collapse_structure_factor, current_autocorrelation, mean_free_time, structure_factor, survival_probability,
    GasRun, MagnonConfig,
};
use voidlab::hydro::{center_density, evolve_with, init_domain_wall, sample_grid, scaling_profile, HydroParams};
use voidlab::nhbound::{
    log_survival_lower_bound, optimal_void, quasispectrum, survival_ladder_sum, OscillatorParams,
};
use voidlab::replica::{haar_oracle, second_moment_table, OracleConfig, ReplicaConfig};
use voidlab::{Boundary, FitWindow, TimeSeries};

use crate::output::Artifacts;
use crate::params::*;
use crate::UsageError;

pub fn execute(experiment: &Experiment, dir: &Path) -> Result<PathBuf> {
    let mut art = Artifacts::create(dir)?;
    match experiment {
        Experiment::Hydro(p) => hydro(p, &mut art, "")?,
        Experiment::Magnon(p) => magnon(p, &mut art, "")?,
        Experiment::GasCorr(p) => gas_corr(p, &mut art, "")?,
        Experiment::Bound(p) => bound(p, &mut art, "")?,
        Experiment::Replica(p) => replica(p, &mut art, "")?,
        Experiment::Floquet(p) => floquet(p, &mut art, "")?,
        Experiment::Analyze(p) => analyze(p, &mut art, "")?,
        Experiment::Figure(p) => crate::figure::figure(p, &mut art)?,
    }
    art.finish(experiment)
}

fn kv(k: &'static str, v: impl ToString) -> (&'static str, String) {
    (k, v.to_string())
}

pub fn hydro(p: &Hydro, art: &mut Artifacts, prefix: &str) -> Result<()> {
    let params = HydroParams::new(p.lambda, p.sigma, p.length, p.boundary)?;
    let field = init_domain_wall(&params, p.n_hi, p.n_lo, p.wall)?;
    let window = window_pair(&p.eta_window, "eta-window")?;
    let meta = [
        kv("module", "hydro"),
        kv("lambda", p.lambda),
        kv("sigma", p.sigma),
        kv("length", p.length),
        kv("boundary", format!("{:?}", p.boundary).to_lowercase()),
        kv("wall", p.wall),
        kv("n_hi", p.n_hi),
        kv("n_lo", p.n_lo),
    ];
    let mut profiles = art.csv(&format!("{prefix}profiles.csv"), &meta, "t,x,n_left,n_right")?;
    let mut snaps = Vec::new();
    let mut io_error = None;
    let last = evolve_with(&field, &params, p.t_max, &sample_grid(p.t_max, p.sample_every), |f| {
        let mut rows = || -> std::io::Result<()> {
            for x in 0..f.len() {
                writeln!(profiles, "{},{},{:e},{:e}", f.time, x, f.n_left[x], f.n_right[x])?;
            }
            Ok(())
        };
        if let Err(e) = rows() {
            io_error.get_or_insert(e);
        }
        snaps.push(f.clone());
        Ok(())
    })?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    profiles.flush()?;

    let mut collapse = art.csv(&format!("{prefix}collapse.csv"), &meta, "t,eta,n")?;
    let mut tail = None;
    let mut fit_window = window;
    if snaps.iter().any(|s| s.time > 0) {
        let c = scaling_profile(&snaps, p.wall, window)?;
        for curve in &c.curves {
            for (e, n) in curve.eta.iter().zip(&curve.n) {
                writeln!(collapse, "{},{:e},{:e}", curve.t, e, n)?;
            }
        }
        tail = c.tail;
        fit_window = Some(c.window);
    }
    collapse.flush()?;

    let mut center = art.csv(&format!("{prefix}center.csv"), &meta, "t,c,value")?;
    let mut exponents = Vec::new();
    for &c in &p.center_c {
        let series = center_density(&snaps, p.wall, c)?;
        for (t, v) in series.times.iter().zip(&series.values) {
            writeln!(center, "{t},{c},{v:e}")?;
        }
        exponents.push(json!({ "c": c, "last_decade": last_decade_slope(&series) }));
    }
    center.flush()?;

    let (m0, m1) = (field.mass(), last.mass());
    art.json(
        &format!("{prefix}summary.json"),
        &json!({
            "mass_initial": m0,
            "mass_final": m1,
            "mass_relative_drift": (m1 - m0) / m0,
            "tail_window": fit_window,
            "tail_fit": tail,
            "center_exponents": exponents,
            "snapshots": snaps.len(),
        }),
    )
}

/// Log-log slope over `[t_last/10, t_last]`.
pub fn last_decade_slope(series: &TimeSeries) -> Option<voidlab::analysis::LinearFit> {
    let last = *series.times.last()?;
    let (x, y): (Vec<f64>, Vec<f64>) = series
        .times
        .iter()
        .zip(&series.values)
        .filter(|(t, v)| **t >= last / 10.0 && **v > 0.0)
        .map(|(t, v)| (t.ln(), v.ln()))
        .unzip();
    linear_fit(&x, &y).ok()
}

pub fn magnon(p: &Magnon, art: &mut Artifacts, prefix: &str) -> Result<()> {
    let cfg = MagnonConfig {
        gamma: p.gamma,
        dt: p.dt,
        length: p.length,
        density: p.density,
        t_max: p.t_max,
        samples: p.samples,
        seed: p.seed,
        roulette: p.roulette,
    };
    let series = survival_probability(&cfg)?;
    let mut w = art.file(&format!("{prefix}survival.csv"))?;
    series.write_csv(&mut w, "P")?;
    w.flush()?;
    Ok(())
}

pub fn gas_corr(p: &GasCorr, art: &mut Artifacts, prefix: &str) -> Result<()> {
    let run = GasRun {
        length: p.length,
        density: p.density,
        burn_in: p.burn_in,
        steps: p.steps,
        samples: p.samples,
        seed: p.seed,
        substeps: p.substeps,
    };
    let meta = [
        kv("module", "gasmagnon"),
        kv("length", p.length),
        kv("density", p.density),
        kv("samples", p.samples),
        kv("seed", p.seed),
        kv("substeps", p.substeps),
    ];
    let sf = structure_factor(&run, &p.lags)?;
    let off = sf.offset();
    let mut w = art.csv(&format!("{prefix}structure.csv"), &meta, "t,x,corr")?;
    for (lag, s) in sf.lags.iter().zip(&sf.values) {
        for (i, v) in s.iter().enumerate() {
            writeln!(w, "{lag},{},{v:e}", i as i64 - off)?;
        }
    }
    w.flush()?;
    let mut w = art.csv(&format!("{prefix}collapse.csv"), &meta, "t,xi,scaled")?;
    let lags: Vec<usize> = sf.lags.iter().copied().filter(|&l| l > 0).collect();
    for (lag, (xi, y)) in lags.iter().zip(collapse_structure_factor(&sf.symmetrized())) {
        for (a, b) in xi.iter().zip(&y) {
            writeln!(w, "{lag},{a:e},{b:e}")?;
        }
    }
    w.flush()?;
    if p.max_lag > 0 {
        let c = current_autocorrelation(&run, p.max_lag)?;
        let mut w = art.file(&format!("{prefix}current.csv"))?;
        c.write_csv(&mut w, "C")?;
        w.flush()?;
        let report = match kubo_diffusivity(&c, p.density) {
            Ok(r) => json!({ "density": p.density, "report": r }),
            Err(e) => json!({ "density": p.density, "error": e.to_string() }),
        };
        art.json(&format!("{prefix}kubo.json"), &report)?;
    }
    Ok(())
}

pub fn bound(p: &Bound, art: &mut Artifacts, prefix: &str) -> Result<()> {
    let osc = OscillatorParams::from_void(p.m_star, p.ell, p.t)?;
    let spectrum: Vec<_> = quasispectrum(&osc, p.n_max)
        .iter()
        .enumerate()
        .map(|(n, l)| json!({ "n": n, "re": l.re, "im": l.im }))
        .collect();
    let optimum = optimal_void(p.t, p.a1, p.a2)?;
    if !(p.t_min > 0.0 && p.t_min <= p.t) || p.per_decade == 0 {
        bail!(UsageError("need 0 < t-min <= t and per-decade > 0".into()));
    }
    let decades = (p.t / p.t_min).log10();
    let m = ((decades * p.per_decade as f64).round() as usize).max(1);
    let mut table = Vec::new();
    let mut w = art.csv(
        &format!("{prefix}bound.csv"),
        &[kv("module", "nhbound"), kv("a1", p.a1), kv("a2", p.a2)],
        "t,ell_star,log_bound",
    )?;
    for k in 0..=m {
        let t = p.t_min * 10f64.powf(decades * k as f64 / m as f64);
        let o = optimal_void(t, p.a1, p.a2)?;
        writeln!(w, "{t:e},{:e},{:e}", o.ell_star, o.log_bound)?;
        table.push(json!({ "t": t, "ell_star": o.ell_star, "log_bound": o.log_bound }));
    }
    w.flush()?;
    let omega = osc.omega();
    art.json(
        &format!("{prefix}bound.json"),
        &json!({
            "t": p.t,
            "ell": p.ell,
            "m_star": p.m_star,
            "k": osc.k,
            "floor": osc.floor,
            "omega": { "re": omega.re, "im": omega.im },
            "quasispectrum": spectrum,
            "log_survival_lower_bound": log_survival_lower_bound(p.t, p.ell, p.m_star),
            "survival_ladder_sum": survival_ladder_sum(p.t, p.ell, p.m_star),
            "optimum": optimum,
            "table": table,
        }),
    )
}

/// Sites ordered by signed displacement from the source.
fn by_displacement(length: usize, boundary: Boundary, source: usize) -> Vec<(i64, usize)> {
    let mut v: Vec<(i64, usize)> = (0..length)
        .map(|x| (displacement(length, boundary, source, x), x))
        .collect();
    v.sort();
    v
}

pub fn replica(p: &Replica, art: &mut Artifacts, prefix: &str) -> Result<()> {
    if p.source >= p.length {
        bail!(UsageError(format!("source {} outside chain of {}", p.source, p.length)));
    }
    let cfg = ReplicaConfig {
        length: p.length,
        boundary: p.boundary,
        gamma_z: p.gamma_z,
        backend: p.backend,
        source: p.source,
    };
    let tab = second_moment_table(&cfg, p.t_max)?;
    let meta = [
        kv("module", "replica"),
        kv("length", p.length),
        kv("boundary", format!("{:?}", p.boundary).to_lowercase()),
        kv("gamma_z", p.gamma_z),
        kv("source", p.source),
        kv("x", "displacement from source"),
    ];
    let order = by_displacement(p.length, p.boundary, p.source);
    let mut w = art.csv(&format!("{prefix}z.csv"), &meta, "t,x,Z")?;
    for (t, row) in tab.z.iter().enumerate() {
        for &(d, x) in &order {
            writeln!(w, "{t},{d},{:e}", row[x])?;
        }
    }
    w.flush()?;
    let mut w = art.csv(&format!("{prefix}zsum.csv"), &meta, "t,Zsum")?;
    for (t, z) in tab.zsum().iter().enumerate() {
        writeln!(w, "{t},{z:e}")?;
    }
    w.flush()?;
    if p.oracle_samples > 0 {
        let oracle = haar_oracle(&OracleConfig {
            length: p.length,
            boundary: p.boundary,
            t_max: p.t_max,
            circuits: p.oracle_samples,
            seed: p.seed,
            source: p.source,
        })?;
        let mut w = art.csv(
            &format!("{prefix}oracle.csv"),
            &[kv("circuits", p.oracle_samples), kv("seed", p.seed)],
            "t,x,mean,stderr",
        )?;
        for t in 0..=p.t_max {
            for &(d, x) in &order {
                writeln!(w, "{t},{d},{:e},{:e}", oracle.mean[t][x], oracle.stderr[t][x])?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

pub fn floquet_result(p: &Floquet) -> Result<CorrelatorResult> {
    let params = p.floquet_params()?;
    let dense = match p.method.as_str() {
        "dense" => true,
        "typicality" => false,
        other => bail!(UsageError(format!("unknown method `{other}` (expected dense|typicality)"))),
    };
    let haar = match p.dynamics.as_str() {
        "floquet" => false,
        "haar" => true,
        other => bail!(UsageError(format!("unknown dynamics `{other}` (expected floquet|haar)"))),
    };
    if haar || p.gamma_z > 0.0 {
        if p.mu != 0.0 {
            bail!(UsageError("noisy and Haar runs are at infinite temperature; drop --mu".into()));
        }
        let backend = if dense {
            NoiseBackend::Superoperator
        } else {
            NoiseBackend::Trajectories {
                samples: p.samples,
                seed: p.seed,
            }
        };
        let dynamics = if haar {
            NoisySource::Haar {
                circuits: p.circuits,
                seed: p.seed,
            }
        } else {
            NoisySource::Floquet(params)
        };
        return Ok(noisy_correlator(&NoisyConfig {
            length: p.length,
            boundary: p.boundary,
            source: p.source,
            t_max: p.t_max,
            gamma_z: p.gamma_z,
            dynamics,
            backend,
        })?);
    }
    let cfg = FloquetConfig {
        length: p.length,
        params,
        boundary: p.boundary,
        t_max: p.t_max,
        mu: p.mu,
        source: p.source,
    };
    Ok(if dense {
        charged_correlator(&cfg)?
    } else {
        charged_correlator_typicality(&cfg, p.samples, p.seed)?
    })
}

pub fn floquet(p: &Floquet, art: &mut Artifacts, prefix: &str) -> Result<()> {
    let r = floquet_result(p)?;
    let params = p.floquet_params()?;
    let meta = [
        kv("module", "floquet"),
        kv("model", format!("{:?}", params.model)),
        kv("J", params.j),
        kv("Delta", params.anisotropy),
        kv("delta", params.stagger),
        kv("g", params.field),
        kv("length", p.length),
        kv("mu", r.mu),
        kv("density", r.density),
        kv("gamma_z", p.gamma_z),
        kv("dynamics", &p.dynamics),
        kv("method", r.method.label()),
        kv("samples", r.samples),
        kv("x", "displacement from source"),
    ];
    let order = by_displacement(p.length, p.boundary, p.source);
    let mut w = art.csv(&format!("{prefix}correlator.csv"), &meta, "t,x,re,im")?;
    for (t, row) in r.values.iter().enumerate() {
        for &(d, x) in &order {
            writeln!(w, "{t},{d},{:e},{:e}", row[x].re, row[x].im)?;
        }
    }
    w.flush()?;
    let mut w = art.csv(&format!("{prefix}sumsq.csv"), &meta, "t,sumsq,stderr")?;
    for (t, (s, e)) in r.sumsq.iter().zip(&r.sumsq_stderr).enumerate() {
        writeln!(w, "{t},{s:e},{e:e}")?;
    }
    w.flush()?;
    Ok(())
}

fn read_input(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn series_window(p: &Analyze, series: &TimeSeries) -> Result<FitWindow> {
    if let Some((lo, hi)) = window_pair(&p.window, "window")? {
        return Ok(FitWindow::new(lo, hi)?);
    }
    // magnon survival carries its density; other inputs default to t > 0
    Ok(match series.metadata.get("density").and_then(|d| d.parse::<f64>().ok()) {
        Some(n) if n > 0.0 && series.metadata.get("module").map(String::as_str) == Some("gasmagnon") => {
            FitWindow::default_for(series, mean_free_time(n))
        }
        _ => FitWindow::new(f64::MIN_POSITIVE, f64::INFINITY)?,
    })
}

pub fn analyze(p: &Analyze, art: &mut Artifacts, prefix: &str) -> Result<()> {
    if p.input.as_os_str().is_empty() {
        bail!(UsageError("analyze needs --in".into()));
    }
    let text = read_input(&p.input)?;
    art.input(&p.input);
    let table = CsvTable::read(text.as_bytes())?;
    let reader = || -> Result<TimeSeries> { Ok(TimeSeries::read_csv(text.as_bytes())?) };
    match p.op.as_str() {
        "smooth" => {
            let s = gaussian_smooth(&reader()?, p.width)?;
            let name = table.columns.get(1).cloned().unwrap_or_else(|| "value".into());
            let mut w = art.file(&format!("{prefix}smooth.csv"))?;
            s.write_csv(&mut w, &name)?;
            w.flush()?;
        }
        "alpha" => {
            let series = reader()?;
            let d = final_decade_exponent(&series, series_window(p, &series)?)?;
            let mut w = art.file(&format!("{prefix}alpha.csv"))?;
            d.alpha.write_csv(&mut w, "alpha")?;
            w.flush()?;
            art.json(
                &format!("{prefix}alpha.json"),
                &json!({ "window": d.window, "mean_alpha": d.mean_alpha, "points": d.points }),
            )?;
        }
        "fit" => {
            let series = reader()?;
            let report = fit_stretched(&series, series_window(p, &series)?)?;
            art.json(&format!("{prefix}fit.json"), &report)?;
        }
        "kubo" => {
            let series = reader()?;
            let chi = if p.chi > 0.0 {
                p.chi
            } else {
                match series.metadata.get("density").and_then(|d| d.parse::<f64>().ok()) {
                    Some(n) => n,
                    None => bail!(UsageError("kubo needs --chi (input has no density metadata)".into())),
                }
            };
            let report = kubo_diffusivity(&series, chi)?;
            art.json(&format!("{prefix}kubo.json"), &json!({ "susceptibility": chi, "report": report }))?;
        }
        "msd" => {
            let (table, column) = msd_column(table, &p.column)?;
            let profiles = ProfileSeries::from_table(&table, &column)?;
            let s = msd(&profiles)?;
            let mut w = art.file(&format!("{prefix}msd.csv"))?;
            s.write_csv(&mut w, "msd")?;
            w.flush()?;
        }
        other => bail!(UsageError(format!("unknown op `{other}` (expected smooth|alpha|fit|kubo|msd)"))),
    }
    Ok(())
}

/// Picks the profile column, appending `abs2 = re² + im²` when asked.
fn msd_column(mut table: CsvTable, column: &str) -> Result<(CsvTable, String)> {
    if column == "abs2" {
        let (Some(re), Some(im)) = (table.index_of("re"), table.index_of("im")) else {
            bail!(UsageError("abs2 needs re and im columns".into()));
        };
        for row in &mut table.rows {
            let v = row[re] * row[re] + row[im] * row[im];
            row.push(v);
        }
        table.columns.push("abs2".into());
        return Ok((table, "abs2".into()));
    }
    let name = if column.is_empty() {
        table.columns.last().cloned().unwrap_or_default()
    } else {
        column.to_string()
    };
    Ok((table, name))
}
