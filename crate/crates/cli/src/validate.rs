//! Config checks that stop short of running: schema, parameter ranges and
//! memory estimates for the exponential-size backends.

use std::path::Path;

use serde::Serialize;
use serde_json::{json, Map, Value};
use voidlab::floquet::{OPERATOR_MAX_SITES, STATE_MAX_SITES};
use voidlab::gasmagnon::MagnonConfig;
use voidlab::hydro::HydroParams;
use voidlab::nhbound::OscillatorParams;
use voidlab::replica::{Backend, Brickwork, DENSE_MAX_SITES, ORACLE_MAX_SITES, SPARSE_MAX_ENTRIES};

use crate::params::*;

#[derive(Debug, Serialize)]
pub struct Diagnostic {
    pub level: &'static str,
    pub message: String,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub command: Option<String>,
    pub diagnostics: Vec<Diagnostic>,
    pub estimates: Map<String, Value>,
}

impl Report {
    fn error(&mut self, message: impl ToString) {
        self.diagnostics.push(Diagnostic {
            level: "error",
            message: message.to_string(),
        });
    }

    fn warning(&mut self, message: impl ToString) {
        self.diagnostics.push(Diagnostic {
            level: "warning",
            message: message.to_string(),
        });
    }

    fn estimate(&mut self, key: &str, value: Value) {
        self.estimates.insert(key.to_string(), value);
    }
}

fn bytes(n: f64) -> String {
    const UNITS: [&str; 7] = ["B", "KB", "MB", "GB", "TB", "PB", "EB"];
    let mut v = n;
    let mut u = 0;
    while v >= 1000.0 && u + 1 < UNITS.len() {
        v /= 1000.0;
        u += 1;
    }
    format!("{v:.1} {}", UNITS[u])
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn diagnose(job: Option<&Job>, config: Option<&Path>) -> Report {
    let mut report = Report {
        command: job.map(|j| j.name().to_string()),
        diagnostics: Vec::new(),
        estimates: Map::new(),
    };
    let experiment = match crate::resolve(job, config) {
        Ok(e) => e,
        Err(e) => {
            report.error(format!("{e:#}"));
            return report;
        }
    };
    report.command = Some(experiment.name().to_string());
    match &experiment {
        Experiment::Hydro(p) => hydro(p, &mut report),
        Experiment::Magnon(p) => {
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
            if let Err(e) = cfg.validate() {
                report.error(e);
            }
        }
        Experiment::GasCorr(p) => {
            if !(p.density > 0.0) {
                report.error("density must be positive");
            }
            if p.lags.iter().chain([&p.max_lag]).any(|&l| l >= p.steps) {
                report.error(format!("lags must be below the measured step count {}", p.steps));
            }
            report.estimate("frame_bytes", json!(bytes(16.0 * p.steps as f64 * p.length as f64)));
        }
        Experiment::Bound(p) => {
            if let Err(e) = OscillatorParams::from_void(p.m_star, p.ell, p.t) {
                report.error(e);
            }
            if !(p.a1 > 0.0 && p.a2 > 0.0) {
                report.error("a1 and a2 must be positive");
            }
            if !(p.t_min > 0.0 && p.t_min <= p.t) {
                report.error("need 0 < t-min <= t");
            }
        }
        Experiment::Replica(p) => replica(p, &mut report),
        Experiment::Floquet(p) => floquet(p, &mut report),
        Experiment::Analyze(p) => {
            if p.input.as_os_str().is_empty() {
                report.error("analyze needs --in");
            } else if !p.input.exists() {
                report.error(format!("input {} does not exist", p.input.display()));
            }
            if !["smooth", "alpha", "fit", "kubo", "msd"].contains(&p.op.as_str()) {
                report.error(format!("unknown op `{}` (expected smooth|alpha|fit|kubo|msd)", p.op));
            }
            if p.op == "smooth" && !(p.width > 0.0) {
                report.error("smoothing width must be positive");
            }
        }
        Experiment::Figure(p) => {
            if !crate::figure::FIGURES.contains(&p.name.as_str()) {
                report.error(format!(
                    "unknown figure `{}` (expected {})",
                    p.name,
                    crate::figure::FIGURES.join("|")
                ));
            }
        }
    }
    report
}

fn hydro(p: &Hydro, report: &mut Report) {
    if let Err(e) = HydroParams::new(p.lambda, p.sigma, p.length, p.boundary) {
        report.error(e);
        return;
    }
    if p.wall >= p.length {
        report.error(format!("wall {} outside [0, {})", p.wall, p.length));
    }
    if !(0.0 <= p.n_lo && p.n_lo <= p.n_hi) {
        report.error("need 0 <= n-lo <= n-hi");
    }
    // ballistic fronts move one site per step
    let room = p.length.saturating_sub(p.wall) as u64;
    if p.t_max > room {
        report.warning(format!(
            "a speed-1 front from the wall reaches the far end (distance {room}) before t-max = {}",
            p.t_max
        ));
    }
    let snaps = if p.sample_every == 0 { 1 } else { p.t_max / p.sample_every + 1 };
    report.estimate("snapshot_bytes", json!(bytes(16.0 * (snaps as f64) * p.length as f64)));
}

fn replica(p: &Replica, report: &mut Report) {
    if let Err(e) = Brickwork::new(p.length, p.boundary) {
        report.error(e);
    }
    if p.source >= p.length {
        report.error(format!("source {} outside chain of {}", p.source, p.length));
    }
    let coefficients = 6f64.powi(p.length as i32);
    report.estimate("dense_coefficients", json!(format!("6^{} = {coefficients:.0}", p.length)));
    report.estimate("dense_bytes", json!(bytes(8.0 * coefficients)));
    match p.backend {
        Backend::Dense if p.length > DENSE_MAX_SITES => report.warning(format!(
            "capacity: dense replica backend needs 6^{} = {coefficients:.0} coefficients ({}); limit is {DENSE_MAX_SITES} sites",
            p.length,
            bytes(8.0 * coefficients)
        )),
        Backend::Sparse if coefficients > SPARSE_MAX_ENTRIES as f64 => report.warning(format!(
            "capacity: sparse replica state may grow towards 6^{} = {coefficients:.0} entries; the budget is {SPARSE_MAX_ENTRIES}",
            p.length
        )),
        _ => {}
    }
    if p.oracle_samples > 0 && p.length > ORACLE_MAX_SITES {
        report.warning(format!("capacity: the sampled oracle is limited to {ORACLE_MAX_SITES} sites"));
    }
}

fn floquet(p: &Floquet, report: &mut Report) {
    if let Err(e) = p.floquet_params() {
        report.error(e);
    }
    if !["dense", "typicality"].contains(&p.method.as_str()) {
        report.error(format!("unknown method `{}` (expected dense|typicality)", p.method));
    }
    if !["floquet", "haar"].contains(&p.dynamics.as_str()) {
        report.error(format!("unknown dynamics `{}` (expected floquet|haar)", p.dynamics));
    }
    if (p.gamma_z > 0.0 || p.dynamics == "haar") && p.mu != 0.0 {
        report.error("noisy and Haar runs are at infinite temperature; drop --mu");
    }
    if p.dynamics == "haar" && p.method == "typicality" {
        report.error("Haar dynamics need the dense (superoperator) method");
    }
    if let Err(e) = Brickwork::new(p.length, p.boundary) {
        report.error(e);
    }
    let l = p.length;
    // a charge-shift-one operator has one block per magnetisation sector
    let entries: f64 = (0..l).map(|n| binomial(l, n) * binomial(l, n + 1)).sum();
    let state = 2f64.powi(l as i32);
    report.estimate("operator_entries", json!(entries));
    report.estimate("operator_bytes", json!(bytes(16.0 * entries)));
    report.estimate("state_bytes", json!(bytes(16.0 * state * 3.0)));
    let dense = p.method == "dense";
    if dense && l > OPERATOR_MAX_SITES {
        report.warning(format!(
            "capacity: operator evolution at L = {l} needs {entries:.0} entries ({}); limit is {OPERATOR_MAX_SITES} sites",
            bytes(16.0 * entries)
        ));
    }
    if !dense && l > STATE_MAX_SITES {
        report.warning(format!(
            "capacity: statevectors at L = {l} need 2^{l} amplitudes; limit is {STATE_MAX_SITES} sites"
        ));
    }
}
