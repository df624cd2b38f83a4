//! Desk-scale dataset recipes, one per figure. Each recipe runs ordinary
//! subcommands into subdirectories and writes `figure.json`, which lists the
//! panels with their files, columns and axis transforms.

use anyhow::{bail, Result};
use serde_json::{json, Value};
use voidlab::floquet::{low_density_decay, FloquetParams, Model};
use voidlab::Boundary;

use crate::output::Artifacts;
use crate::params::*;
use crate::run;
use crate::UsageError;

pub const FIGURES: [&str; 7] = ["1", "2", "S1", "S2", "S3", "S4", "S5"];

fn panel(file: &str, x: &str, y: &str, x_transform: &str, y_transform: &str) -> Value {
    json!({
        "file": file,
        "x": x,
        "y": y,
        "x_transform": x_transform,
        "y_transform": y_transform,
    })
}

pub fn figure(p: &Figure, art: &mut Artifacts) -> Result<()> {
    let q = p.quick;
    let pick = |full: usize, quick: usize| if q { quick } else { full };
    let panels = match p.name.as_str() {
        "1" => {
            let replica = Replica {
                length: pick(8, 6),
                t_max: pick(20, 6),
                source: pick(8, 6) / 2,
                ..Replica::default()
            };
            run::replica(&replica, art, "random/")?;
            let mut panels = vec![panel("random/zsum.csv", "t", "Zsum", "sqrt", "log")];
            for tag in ["A", "B", "C"] {
                let f = Floquet {
                    model: tag.into(),
                    length: pick(10, 6),
                    t_max: pick(30, 6),
                    ..floquet_defaults(tag)
                };
                run::floquet(&f, art, &format!("floquet_{tag}/"))?;
                panels.push(panel(&format!("floquet_{tag}/sumsq.csv"), "t", "sumsq", "sqrt", "log"));
            }
            let noisy = Floquet {
                length: 6,
                t_max: pick(30, 6),
                gamma_z: 0.4,
                ..floquet_defaults("A")
            };
            run::floquet(&noisy, art, "noisy_A/")?;
            panels.push(panel("noisy_A/sumsq.csv", "t", "sumsq", "linear", "log"));
            panels
        }
        "2" => {
            let h = Hydro {
                length: pick(4000, 400),
                wall: pick(400, 40),
                t_max: pick(5000, 200) as u64,
                sample_every: pick(500, 50) as u64,
                ..Hydro::default()
            };
            run::hydro(&h, art, "")?;
            vec![
                panel("profiles.csv", "x", "n_left+n_right", "linear", "linear"),
                json!({
                    "file": "collapse.csv", "x": "eta", "y": "n",
                    "x_transform": "log", "y_transform": "log",
                    "guides": [{ "form": "eta^-2" }],
                }),
            ]
        }
        "S1" => {
            let mut panels = Vec::new();
            for (gamma, name) in [(0.0, "clean"), (0.4, "noisy")] {
                let f = Floquet {
                    length: 6,
                    t_max: pick(30, 6),
                    gamma_z: gamma,
                    dynamics: "haar".into(),
                    circuits: pick(500, 10) as u64,
                    seed: p.seed,
                    ..floquet_defaults("A")
                };
                run::floquet(&f, art, &format!("haar_{name}/"))?;
                panels.push(panel(&format!("haar_{name}/sumsq.csv"), "t", "sumsq", "sqrt", "log"));
                let r = Replica {
                    length: 6,
                    t_max: pick(30, 6),
                    gamma_z: gamma,
                    boundary: Boundary::Periodic,
                    source: 0,
                    ..Replica::default()
                };
                run::replica(&r, art, &format!("replica_{name}/"))?;
                panels.push(panel(&format!("replica_{name}/zsum.csv"), "t", "Zsum", "sqrt", "log"));
            }
            panels
        }
        "S2" => {
            let h = Hydro {
                length: pick(40_000, 2000),
                wall: pick(4000, 200),
                t_max: pick(50_000, 1000) as u64,
                sample_every: pick(1000, 100) as u64,
                ..Hydro::default()
            };
            run::hydro(&h, art, "")?;
            vec![
                json!({
                    "file": "collapse.csv", "x": "eta", "y": "n",
                    "x_transform": "log", "y_transform": "log",
                    "guides": [{ "form": "eta^-2" }],
                }),
                json!({
                    "file": "center.csv", "x": "t", "y": "value", "group": "c",
                    "x_transform": "log", "y_transform": "log",
                    "guides": [{ "form": "t^-1/3" }],
                }),
            ]
        }
        "S3" => {
            let mut panels = Vec::new();
            let mut rows = Vec::new();
            for n in [0.05f64, 0.1, 0.2, 0.4] {
                let lag = (20.0 / n).round() as usize;
                let g = GasCorr {
                    length: pick(4000, 400),
                    density: n,
                    burn_in: lag,
                    steps: lag + (200.0 / n).round() as usize,
                    lags: vec![lag],
                    samples: if q { 2 } else { (16.0 * 0.4 / n).round() as u64 },
                    seed: p.seed + (100.0 * n).round() as u64,
                    substeps: voidlab::gasmagnon::resolved_substeps(n),
                    max_lag: pick(60, 10).min(lag),
                };
                let dir = format!("gas_{n}/");
                run::gas_corr(&g, art, &dir)?;
                panels.push(json!({
                    "file": format!("{dir}collapse.csv"), "x": "xi", "y": "scaled",
                    "x_transform": "linear", "y_transform": "linear",
                }));
                rows.push(dir);
            }
            panels.push(json!({ "files": rows.iter().map(|d| format!("{d}kubo.json")).collect::<Vec<_>>(),
                "x": "1/density", "y": "report.diffusivity", "x_transform": "linear", "y_transform": "linear" }));
            panels
        }
        "S4" => {
            let m = Magnon {
                gamma: 10.0,
                t_max: pick(60, 20),
                samples: pick(20_000, 200) as u64,
                seed: p.seed,
                ..Magnon::default()
            };
            run::magnon(&m, art, "")?;
            let a = Analyze {
                input: art.path("survival.csv"),
                op: "alpha".into(),
                ..Analyze::default()
            };
            run::analyze(&a, art, "")?;
            vec![
                panel("survival.csv", "t", "P", "log", "log"),
                json!({
                    "file": "alpha.csv", "x": "t", "y": "alpha",
                    "x_transform": "log", "y_transform": "linear",
                    "guides": [{ "form": "constant", "value": 2.0 / 3.0 }],
                }),
            ]
        }
        "S5" => {
            let length = pick(12, 8);
            let mut panels = Vec::new();
            let mut w = art.csv("rates.csv", &[("length", length.to_string())], "n,rate,r_squared")?;
            for n in [0.02, 0.05, 0.1] {
                let d = low_density_decay(length, FloquetParams::model(Model::A), n, 0.5)?;
                use std::io::Write;
                writeln!(w, "{n},{:e},{}", d.rate, d.fit.r_squared)?;
                let name = format!("decay_{n}.csv");
                let mut c = art.csv(
                    &name,
                    &[("density", n.to_string()), ("mu", d.mu.to_string())],
                    "t,nt,normalized",
                )?;
                for (t, v) in d.times.iter().zip(&d.normalized) {
                    writeln!(c, "{t},{},{v:e}", n * t)?;
                }
                c.flush()?;
                panels.push(panel(&name, "nt", "normalized", "linear", "log"));
                panels.push(panel(&name, "t", "normalized", "t^2/3", "log"));
            }
            std::io::Write::flush(&mut w)?;
            panels.push(panel("rates.csv", "n", "rate", "linear", "linear"));
            panels
        }
        other => bail!(UsageError(format!("unknown figure `{other}` (expected {})", FIGURES.join("|")))),
    };
    art.json(
        "figure.json",
        &json!({ "figure": p.name, "quick": p.quick, "panels": panels }),
    )
}

fn floquet_defaults(tag: &str) -> Floquet {
    let model: Model = tag.parse().expect("built-in tag");
    let m = FloquetParams::model(model);
    Floquet {
        model: tag.into(),
        j: m.j,
        anisotropy: m.anisotropy,
        stagger: m.stagger,
        field: m.field,
        ..Floquet::default()
    }
}
