//! Flag sets and their resolved, serialisable counterparts.
//!
//! Every subcommand has two structs: the clap view, where each flag is
//! optional so that a config file can supply it, and the resolved view with
//! all defaults filled in, which is what runs and what the manifest echoes.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use voidlab::floquet::{FloquetParams, Model};
use voidlab::replica::Backend;
use voidlab::Boundary;

use crate::UsageError;

macro_rules! params {
    (
        $(#[$doc:meta])*
        $args:ident => $resolved:ident {
            $( $(#[$m:meta])* $name:ident : $ty:ty = $default:expr ),* $(,)?
        }
    ) => {
        $(#[$doc])*
        #[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
        pub struct $args {
            $(
                $(#[$m])*
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $name: Option<$ty>,
            )*
            /// Output directory [default: $VOIDLAB_OUT/<command>]
            #[arg(long)]
            #[serde(skip)]
            pub out: Option<PathBuf>,
        }

        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct $resolved {
            $( pub $name: $ty, )*
        }

        impl Default for $resolved {
            fn default() -> Self {
                Self { $( $name: $default, )* }
            }
        }
    };
}

params! {
    /// Two-species void-melting chain from a domain wall.
    HydroArgs => Hydro {
        #[arg(long)] length: usize = 20_000,
        #[arg(long)] lambda: f64 = 2.0,
        #[arg(long)] sigma: f64 = 1.0,
        #[arg(long)] n_hi: f64 = 10.0,
        #[arg(long)] n_lo: f64 = 0.0,
        #[arg(long)] t_max: u64 = 50_000,
        #[arg(long)] sample_every: u64 = 1000,
        #[arg(long)] boundary: Boundary = Boundary::Open,
        /// First site of the low-density side [default: length/10]
        #[arg(long)] wall: usize = 0,
        /// Tail-fit window in η, as `lo,hi`
        #[arg(long, value_delimiter = ',')] eta_window: Vec<f64> = vec![3.0, 20.0],
        /// Probe constants c for n(wall + c t^{2/3}, t)
        #[arg(long, value_delimiter = ',')] center_c: Vec<f64> = vec![2.0, 4.0, 8.0],
    }
}

params! {
    /// Magnon survival in a fluctuating ballistic gas.
    MagnonArgs => Magnon {
        #[arg(long)] length: usize = 256,
        #[arg(long)] density: f64 = 1.0,
        #[arg(long)] gamma: f64 = 1.0,
        #[arg(long)] t_max: usize = 60,
        #[arg(long)] samples: u64 = 100_000,
        #[arg(long)] seed: u64 = 1,
        #[arg(long)] dt: f64 = 1.0,
        /// Russian-roulette norm threshold, 0 disables
        #[arg(long)] roulette: f64 = 1e-10,
    }
}

params! {
    /// Gas density correlator, and optionally the current autocorrelation.
    GasCorrArgs => GasCorr {
        #[arg(long)] length: usize = 4000,
        #[arg(long)] density: f64 = 0.1,
        /// Relaxation steps before measuring [default: 20/density]
        #[arg(long)] burn_in: usize = 0,
        /// Measured steps per sample [default: max lag + 200/density]
        #[arg(long)] steps: usize = 0,
        /// Correlator lags [default: 20/density]
        #[arg(long, value_delimiter = ',')] lags: Vec<usize> = Vec::new(),
        #[arg(long)] samples: u64 = 16,
        #[arg(long)] seed: u64 = 1,
        /// Collision intervals per step [default: resolved for the density]
        #[arg(long)] substeps: usize = 0,
        /// Largest lag of the current autocorrelation; 0 skips it
        #[arg(long)] max_lag: usize = 0,
    }
}

params! {
    /// Non-Hermitian oscillator bound and the optimal void.
    BoundArgs => Bound {
        #[arg(long)] t: f64 = 100.0,
        /// Void size [default: optimal size at t]
        #[arg(long)] ell: f64 = 0.0,
        #[arg(long)] m_star: f64 = 1.0,
        #[arg(long)] n_max: usize = 3,
        /// Void cost per site
        #[arg(long)] a1: f64 = 1.0,
        /// Coefficient of t^2/ell^2
        #[arg(long)] a2: f64 = 2.0,
        /// First time of the ell*(t) table
        #[arg(long)] t_min: f64 = 1.0,
        #[arg(long)] per_decade: usize = 10,
    }
}

params! {
    /// Second moment of the charged correlator from the replica chain.
    ReplicaArgs => Replica {
        #[arg(long)] length: usize = 8,
        #[arg(long)] t_max: usize = 10,
        #[arg(long)] gamma_z: f64 = 0.0,
        #[arg(long)] backend: Backend = Backend::Dense,
        #[arg(long)] boundary: Boundary = Boundary::Open,
        /// Insertion site [default: length/2]
        #[arg(long)] source: usize = 0,
        /// Circuits for the sampled cross-check; 0 skips it
        #[arg(long)] oracle_samples: u64 = 0,
        #[arg(long)] seed: u64 = 1,
    }
}

params! {
    /// Charged correlator of a Floquet brickwork circuit.
    FloquetArgs => Floquet {
        /// Parameter set: A|B|C|custom
        #[arg(long)] model: String = "A".into(),
        #[arg(long = "J")] j: f64 = 0.0,
        #[arg(long = "Delta")] anisotropy: f64 = 0.0,
        #[arg(long = "delta")] stagger: f64 = 0.0,
        #[arg(long = "g")] field: f64 = 0.0,
        #[arg(long)] length: usize = 10,
        #[arg(long)] t_max: usize = 20,
        #[arg(long, allow_negative_numbers = true)] mu: f64 = 0.0,
        /// dense|typicality
        #[arg(long)] method: String = "dense".into(),
        #[arg(long)] samples: u64 = 100,
        #[arg(long)] gamma_z: f64 = 0.0,
        /// floquet|haar; haar averages the dephased channel over random circuits
        #[arg(long)] dynamics: String = "floquet".into(),
        #[arg(long)] circuits: u64 = 1000,
        #[arg(long)] boundary: Boundary = Boundary::Periodic,
        #[arg(long)] source: usize = 0,
        #[arg(long)] seed: u64 = 1,
    }
}

params! {
    /// Post-processing of a producer CSV.
    AnalyzeArgs => Analyze {
        #[arg(long = "in")] input: PathBuf = PathBuf::new(),
        /// smooth|alpha|fit|kubo|msd
        #[arg(long)] op: String = "alpha".into(),
        #[arg(long)] width: f64 = 1.0,
        /// Fit window `t_min,t_max`
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)] window: Vec<f64> = Vec::new(),
        /// Susceptibility for kubo [default: the input's density metadata]
        #[arg(long)] chi: f64 = 0.0,
        /// Value column for msd, or `abs2` for re^2 + im^2 [default: last column]
        #[arg(long)] column: String = String::new(),
    }
}

params! {
    /// Desk-scale dataset recipe for one figure.
    FigureArgs => Figure {
        /// 1|2|S1|S2|S3|S4|S5
        #[arg(long)] name: String = String::new(),
        #[arg(long)] seed: u64 = 1,
        /// Smaller sizes, for smoke runs
        #[arg(long, num_args = 0..=1, default_missing_value = "true")] quick: bool = false,
    }
}

#[derive(Debug, Clone, Subcommand)]
pub enum Job {
    Hydro(HydroArgs),
    Magnon(MagnonArgs),
    GasCorr(GasCorrArgs),
    Bound(BoundArgs),
    Replica(ReplicaArgs),
    Floquet(FloquetArgs),
    Analyze(AnalyzeArgs),
    Figure(FigureArgs),
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Hydro(_) => "hydro",
            Job::Magnon(_) => "magnon",
            Job::GasCorr(_) => "gas-corr",
            Job::Bound(_) => "bound",
            Job::Replica(_) => "replica",
            Job::Floquet(_) => "floquet",
            Job::Analyze(_) => "analyze",
            Job::Figure(_) => "figure",
        }
    }

    pub fn out(&self) -> Option<PathBuf> {
        match self {
            Job::Hydro(a) => a.out.clone(),
            Job::Magnon(a) => a.out.clone(),
            Job::GasCorr(a) => a.out.clone(),
            Job::Bound(a) => a.out.clone(),
            Job::Replica(a) => a.out.clone(),
            Job::Floquet(a) => a.out.clone(),
            Job::Analyze(a) => a.out.clone(),
            Job::Figure(a) => a.out.clone(),
        }
    }

    /// The flags given on the command line, as a JSON object.
    pub fn flags(&self) -> Map<String, Value> {
        let v = match self {
            Job::Hydro(a) => serde_json::to_value(a),
            Job::Magnon(a) => serde_json::to_value(a),
            Job::GasCorr(a) => serde_json::to_value(a),
            Job::Bound(a) => serde_json::to_value(a),
            Job::Replica(a) => serde_json::to_value(a),
            Job::Floquet(a) => serde_json::to_value(a),
            Job::Analyze(a) => serde_json::to_value(a),
            Job::Figure(a) => serde_json::to_value(a),
        };
        match v {
            Ok(Value::Object(m)) => m,
            _ => Map::new(),
        }
    }
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum Experiment {
    Hydro(Hydro),
    Magnon(Magnon),
    GasCorr(GasCorr),
    Bound(Bound),
    Replica(Replica),
    Floquet(Floquet),
    Analyze(Analyze),
    Figure(Figure),
}

pub const COMMANDS: [&str; 8] = [
    "hydro", "magnon", "gas-corr", "bound", "replica", "floquet", "analyze", "figure",
];

fn decode<T: for<'de> Deserialize<'de>>(command: &str, params: Map<String, Value>) -> Result<T> {
    serde_json::from_value(Value::Object(params))
        .map_err(|e| UsageError(format!("{command}: {e}")).into())
}

impl Experiment {
    /// Fills command-dependent defaults, then decodes `params`.
    pub fn resolve(command: &str, mut params: Map<String, Value>) -> Result<Self> {
        prefill(command, &mut params)?;
        Ok(match command {
            "hydro" => Experiment::Hydro(decode(command, params)?),
            "magnon" => Experiment::Magnon(decode(command, params)?),
            "gas-corr" => Experiment::GasCorr(decode(command, params)?),
            "bound" => Experiment::Bound(decode(command, params)?),
            "replica" => Experiment::Replica(decode(command, params)?),
            "floquet" => Experiment::Floquet(decode(command, params)?),
            "analyze" => Experiment::Analyze(decode(command, params)?),
            "figure" => Experiment::Figure(decode(command, params)?),
            other => {
                return Err(UsageError(format!(
                    "unknown command `{other}` (expected {})",
                    COMMANDS.join("|")
                ))
                .into())
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Hydro(_) => "hydro",
            Experiment::Magnon(_) => "magnon",
            Experiment::GasCorr(_) => "gas-corr",
            Experiment::Bound(_) => "bound",
            Experiment::Replica(_) => "replica",
            Experiment::Floquet(_) => "floquet",
            Experiment::Analyze(_) => "analyze",
            Experiment::Figure(_) => "figure",
        }
    }

    pub fn params(&self) -> Value {
        let v = match self {
            Experiment::Hydro(p) => serde_json::to_value(p),
            Experiment::Magnon(p) => serde_json::to_value(p),
            Experiment::GasCorr(p) => serde_json::to_value(p),
            Experiment::Bound(p) => serde_json::to_value(p),
            Experiment::Replica(p) => serde_json::to_value(p),
            Experiment::Floquet(p) => serde_json::to_value(p),
            Experiment::Analyze(p) => serde_json::to_value(p),
            Experiment::Figure(p) => serde_json::to_value(p),
        };
        v.expect("parameter structs serialise")
    }
}

fn get_f64(params: &Map<String, Value>, key: &str, fallback: f64) -> f64 {
    params.get(key).and_then(Value::as_f64).unwrap_or(fallback)
}

fn get_u64(params: &Map<String, Value>, key: &str, fallback: u64) -> u64 {
    params.get(key).and_then(Value::as_u64).unwrap_or(fallback)
}

fn fill(params: &mut Map<String, Value>, key: &str, value: impl Into<Value>) {
    if !params.contains_key(key) {
        params.insert(key.to_string(), value.into());
    }
}

fn prefill(command: &str, params: &mut Map<String, Value>) -> Result<()> {
    match command {
        "hydro" => {
            let l = get_u64(params, "length", Hydro::default().length as u64);
            fill(params, "wall", (l / 10).max(1).min(l.saturating_sub(1)));
        }
        "gas-corr" => {
            let n = get_f64(params, "density", GasCorr::default().density);
            if n > 0.0 {
                let lag = (20.0 / n).round() as u64;
                fill(params, "burn_in", lag);
                fill(params, "lags", vec![lag]);
                fill(params, "substeps", voidlab::gasmagnon::resolved_substeps(n) as u64);
                let max_lag = params
                    .get("lags")
                    .and_then(Value::as_array)
                    .map(|l| l.iter().filter_map(Value::as_u64).max().unwrap_or(0))
                    .unwrap_or(0)
                    .max(get_u64(params, "max_lag", 0));
                fill(params, "steps", max_lag + (200.0 / n).round() as u64);
            }
        }
        "bound" => {
            let d = Bound::default();
            let t = get_f64(params, "t", d.t);
            let (a1, a2) = (get_f64(params, "a1", d.a1), get_f64(params, "a2", d.a2));
            if let Ok(opt) = voidlab::nhbound::optimal_void(t, a1, a2) {
                fill(params, "ell", opt.ell_star);
            }
        }
        "replica" => {
            let l = get_u64(params, "length", Replica::default().length as u64);
            fill(params, "source", l / 2);
        }
        "floquet" => {
            let tag = params
                .get("model")
                .and_then(Value::as_str)
                .unwrap_or("A")
                .to_string();
            let model: Model = tag.parse().map_err(|e: voidlab::Error| UsageError(e.to_string()))?;
            let p = FloquetParams::model(model);
            fill(params, "j", p.j);
            fill(params, "anisotropy", p.anisotropy);
            fill(params, "stagger", p.stagger);
            fill(params, "field", p.field);
        }
        _ => {}
    }
    Ok(())
}

impl Floquet {
    /// Model tag plus any explicit couplings; named models keep their tag
    /// only when the couplings are untouched.
    pub fn floquet_params(&self) -> Result<FloquetParams> {
        let model: Model = self.model.parse()?;
        let named = FloquetParams::model(model);
        let custom = FloquetParams::custom(self.j, self.anisotropy, self.stagger, self.field);
        let couplings = |p: &FloquetParams| (p.j, p.anisotropy, p.stagger, p.field);
        Ok(if model != Model::Custom && couplings(&named) == couplings(&custom) {
            named
        } else {
            custom
        })
    }
}

/// Splits an optional `lo,hi` list into a window.
pub fn window_pair(values: &[f64], what: &str) -> Result<Option<(f64, f64)>> {
    match values {
        [] => Ok(None),
        [lo, hi] => Ok(Some((*lo, *hi))),
        _ => bail!(UsageError(format!("{what} takes two values `lo,hi`, got {}", values.len()))),
    }
}

/// Reads a JSON config or manifest into `(command, params)`.
pub fn load_config(path: &std::path::Path) -> Result<(String, Map<String, Value>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut root: Value = serde_json::from_str(&text)
        .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    // a manifest carries its config under `config`
    if let Some(c) = root.get("config").cloned() {
        root = c;
    }
    let version = root.get("version").and_then(Value::as_u64);
    if version != Some(crate::FORMAT_VERSION) {
        bail!(UsageError(format!(
            "{}: config `version` must be {}, found {:?}",
            path.display(),
            crate::FORMAT_VERSION,
            version
        )));
    }
    let Some(command) = root.get("command").and_then(Value::as_str) else {
        bail!(UsageError(format!("{}: missing `command`", path.display())));
    };
    let params = match root.get("params") {
        None => Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(_) => bail!(UsageError(format!("{}: `params` must be an object", path.display()))),
    };
    Ok((command.to_string(), params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn floquet(params: Value) -> Floquet {
        match Experiment::resolve("floquet", params.as_object().unwrap().clone()).unwrap() {
            Experiment::Floquet(f) => f,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn named_model_fills_couplings_and_keeps_its_tag() {
        let f = floquet(serde_json::json!({ "model": "C" }));
        assert_eq!(f.j, FloquetParams::model(Model::C).j);
        assert_eq!(f.floquet_params().unwrap().model, Model::C);
    }

    #[test]
    fn overriding_a_coupling_makes_the_model_custom() {
        let f = floquet(serde_json::json!({ "model": "A", "field": 0.0 }));
        let p = f.floquet_params().unwrap();
        assert_eq!(p.model, Model::Custom);
        assert_eq!(p.j, FloquetParams::model(Model::A).j);
        assert_eq!(p.field, 0.0);
    }

    #[test]
    fn resolved_params_round_trip() {
        let e = Experiment::resolve("gas-corr", Map::new()).unwrap();
        let again = Experiment::resolve("gas-corr", e.params().as_object().unwrap().clone()).unwrap();
        assert_eq!(e, again);
        let Experiment::GasCorr(g) = e else { unreachable!() };
        assert_eq!(g.lags, vec![200]);
        assert_eq!(g.burn_in, 200);
        assert_eq!(g.steps, 2200);
    }
}
