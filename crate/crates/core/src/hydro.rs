//! Two-species nonlinear Markov chain with density-dependent species
//! conversion, giving `D(n) ~ 1/n` transport, and the void-melting
//! scaling analysis built on it.

use serde::{Deserialize, Serialize};

use crate::analysis::{interp_linear, linear_fit, LinearFit, TimeSeries};
use crate::error::{argument, domain, Result};
use crate::rng::pairwise_sum;
use crate::Boundary;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HydroParams {
    pub lambda: f64,
    pub sigma: f64,
    pub length: usize,
    pub boundary: Boundary,
}

impl HydroParams {
    pub fn new(lambda: f64, sigma: f64, length: usize, boundary: Boundary) -> Result<Self> {
        let p = Self {
            lambda,
            sigma,
            length,
            boundary,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.sigma >= 0.0) {
            return argument("lambda and sigma must be non-negative");
        }
        if self.length < 2 {
            return argument("need at least two sites");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    pub n_left: Vec<f64>,
    pub n_right: Vec<f64>,
    pub time: u64,
}

impl DensityField {
    pub fn len(&self) -> usize {
        self.n_left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_left.is_empty()
    }

    pub fn density(&self) -> Vec<f64> {
        self.n_left.iter().zip(&self.n_right).map(|(a, b)| a + b).collect()
    }

    pub fn mass(&self) -> f64 {
        pairwise_sum(&self.n_left) + pairwise_sum(&self.n_right)
    }

    /// Rightmost site with total density above `threshold`.
    pub fn front(&self, threshold: f64) -> Option<usize> {
        (0..self.len())
            .rev()
            .find(|&x| self.n_left[x] + self.n_right[x] > threshold)
    }
}

/// Density `n_hi` left of `wall`, `n_lo` from `wall` on, split evenly
/// between the species.
pub fn init_domain_wall(
    params: &HydroParams,
    n_hi: f64,
    n_lo: f64,
    wall: usize,
) -> Result<DensityField> {
    params.validate()?;
    if wall >= params.length {
        return domain(format!("wall {wall} outside [0, {})", params.length));
    }
    if !(0.0 <= n_lo && n_lo <= n_hi) {
        return argument(format!("need 0 <= n_lo <= n_hi, got {n_lo}, {n_hi}"));
    }
    let half: Vec<f64> = (0..params.length)
        .map(|x| if x < wall { n_hi / 2.0 } else { n_lo / 2.0 })
        .collect();
    Ok(DensityField {
        n_left: half.clone(),
        n_right: half,
        time: 0,
    })
}

fn translate(field: &mut DensityField, boundary: Boundary) {
    match boundary {
        Boundary::Periodic => {
            field.n_left.rotate_left(1);
            field.n_right.rotate_right(1);
        }
        Boundary::Open => {
            // reflecting walls: movers hitting an edge turn around in place
            let l = field.len();
            let escaped_left = field.n_left[0];
            let escaped_right = field.n_right[l - 1];
            field.n_left.copy_within(1.., 0);
            field.n_right.copy_within(..l - 1, 1);
            field.n_left[l - 1] = escaped_right;
            field.n_right[0] = escaped_left;
        }
    }
}

fn interact(field: &mut DensityField, lambda: f64, sigma: f64) {
    for (l, r) in field.n_left.iter_mut().zip(field.n_right.iter_mut()) {
        let (nl, nr) = (*l, *r);
        let a = lambda * nl + sigma * nr;
        let b = lambda * nr + sigma * nl;
        let ia = 1.0 / (1.0 + a);
        let ib = 1.0 / (1.0 + b);
        *l = a * ia * nr + ib * nl;
        *r = b * ib * nl + ia * nr;
    }
}

/// One full step: translation half-step, then the pointwise interaction.
pub fn step(field: &DensityField, params: &HydroParams) -> DensityField {
    let mut next = field.clone();
    step_in_place(&mut next, params);
    next
}

pub fn step_in_place(field: &mut DensityField, params: &HydroParams) {
    translate(field, params.boundary);
    interact(field, params.lambda, params.sigma);
    field.time += 1;
    debug_assert!(field.n_left.iter().chain(&field.n_right).all(|v| *v >= 0.0));
}

fn check_samples(sample_times: &[u64], t_max: u64) -> Result<()> {
    if let Some(i) = sample_times.windows(2).position(|w| w[1] <= w[0]) {
        return argument(format!("sample_times out of order at index {}", i + 1));
    }
    if sample_times.last().is_some_and(|&t| t > t_max) {
        return argument("sample time beyond t_max");
    }
    Ok(())
}

/// Evolves to `t_max`, handing a view of the field to `observe` at every
/// requested sample time (relative to the field's own clock).
pub fn evolve_with<F>(
    field: &DensityField,
    params: &HydroParams,
    t_max: u64,
    sample_times: &[u64],
    mut observe: F,
) -> Result<DensityField>
where
    F: FnMut(&DensityField) -> Result<()>,
{
    params.validate()?;
    check_samples(sample_times, t_max)?;
    if field.len() != params.length {
        return argument("field length differs from params.length");
    }
    let start = field.time;
    let mut cur = field.clone();
    let mut next_sample = sample_times.iter().peekable();
    loop {
        let elapsed = cur.time - start;
        while next_sample.peek().is_some_and(|&&s| s == elapsed) {
            observe(&cur)?;
            next_sample.next();
        }
        if elapsed >= t_max {
            break;
        }
        step_in_place(&mut cur, params);
    }
    Ok(cur)
}

pub fn evolve(
    field: &DensityField,
    params: &HydroParams,
    t_max: u64,
    sample_times: &[u64],
) -> Result<Vec<DensityField>> {
    let mut snaps = Vec::with_capacity(sample_times.len());
    evolve_with(field, params, t_max, sample_times, |f| {
        snaps.push(f.clone());
        Ok(())
    })?;
    Ok(snaps)
}

/// `0, every, 2·every, …` up to and including `t_max`.
pub fn sample_grid(t_max: u64, every: u64) -> Vec<u64> {
    if every == 0 {
        return vec![0];
    }
    (0..=t_max / every).map(|k| k * every).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapsedCurve {
    pub t: f64,
    pub eta: Vec<f64>,
    pub n: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Collapse {
    pub curves: Vec<CollapsedCurve>,
    /// Log-log fit of `n` against `η` over the tail window, all curves pooled.
    pub tail: Option<LinearFit>,
    pub window: (f64, f64),
}

/// Rescales each snapshot to `η = (x − wall)/√t` and fits the tail slope
/// inside `eta_window` (default `[3, η_max/2]`).
pub fn scaling_profile(
    snapshots: &[DensityField],
    wall: usize,
    eta_window: Option<(f64, f64)>,
) -> Result<Collapse> {
    if snapshots.is_empty() {
        return argument("no snapshots to collapse");
    }
    let curves: Vec<CollapsedCurve> = snapshots
        .iter()
        .filter(|s| s.time > 0)
        .map(|s| {
            let st = (s.time as f64).sqrt();
            CollapsedCurve {
                t: s.time as f64,
                eta: (0..s.len()).map(|x| (x as f64 - wall as f64) / st).collect(),
                n: s.density(),
            }
        })
        .collect();
    if curves.is_empty() {
        return argument("all snapshots are at t = 0");
    }
    let eta_max = curves
        .iter()
        .flat_map(|c| c.eta.last().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    let window = eta_window.unwrap_or((3.0, 0.5 * eta_max));
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for c in &curves {
        for (e, n) in c.eta.iter().zip(&c.n) {
            if *e >= window.0 && *e <= window.1 && *n > 0.0 {
                lx.push(e.ln());
                ly.push(n.ln());
            }
        }
    }
    let tail = linear_fit(&lx, &ly).ok();
    Ok(Collapse {
        curves,
        tail,
        window,
    })
}

/// `c² · n(wall + c·t^{2/3}, t)` per snapshot, linearly interpolated
/// between sites. Snapshots where the probe leaves the lattice are skipped.
pub fn center_density(snapshots: &[DensityField], wall: usize, c: f64) -> Result<TimeSeries> {
    let (mut ts, mut vs) = (Vec::new(), Vec::new());
    for s in snapshots.iter().filter(|s| s.time > 0) {
        let t = s.time as f64;
        let x = wall as f64 + c * t.powf(2.0 / 3.0);
        if x > (s.len() - 1) as f64 {
            continue;
        }
        let xs: Vec<f64> = (0..s.len()).map(|i| i as f64).collect();
        ts.push(t);
        vs.push(c * c * interp_linear(&xs, &s.density(), x));
    }
    Ok(TimeSeries::new(ts, vs)?
        .with_meta("quantity", "center_density")
        .with_meta("c", c))
}
