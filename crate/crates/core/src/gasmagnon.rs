//! Classical ballistic gas with collision-randomised velocities, and a
//! quantum spectator magnon dissipated by the local gas occupation.

use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::analysis::{kubo_diffusivity, KuboReport, TimeSeries};
use crate::ensemble::{average, Moments};
use crate::error::{argument, Result};
use crate::rng::{stream, StreamRng, Tag};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub x: f64,
    pub k: f64,
    pub v: f64,
}

impl Particle {
    fn with_momentum(x: f64, k: f64) -> Self {
        Self { x, k, v: k.sin() }
    }
}

/// Point particles on a ring, stored in increasing position order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleGas {
    pub length: f64,
    pub particles: Vec<Particle>,
}

impl ParticleGas {
    pub fn from_particles(length: f64, positions: &[f64], momenta: &[f64]) -> Self {
        let mut particles: Vec<Particle> = positions
            .iter()
            .zip(momenta)
            .map(|(&x, &k)| Particle::with_momentum(x.rem_euclid(length), k))
            .collect();
        particles.sort_by(|a, b| a.x.total_cmp(&b.x));
        Self { length, particles }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn density(&self) -> f64 {
        self.len() as f64 / self.length
    }

    pub fn current(&self) -> f64 {
        self.particles.iter().map(|p| p.v).sum()
    }
}

fn random_momentum(rng: &mut StreamRng) -> f64 {
    rng.random_range(-PI..PI)
}

/// `round(n·L)` particles with i.i.d. uniform positions and momenta.
pub fn sample_gas(length: usize, density: f64, rng: &mut StreamRng) -> Result<ParticleGas> {
    if !(density > 0.0) {
        return argument(format!("gas density must be positive, got {density}"));
    }
    let count = (density * length as f64).round() as usize;
    if count == 0 {
        return argument("density × length rounds to zero particles");
    }
    let l = length as f64;
    let mut particles: Vec<Particle> = (0..count)
        .map(|_| {
            let x = rng.random_range(0.0..l);
            Particle::with_momentum(x, random_momentum(rng))
        })
        .collect();
    particles.sort_by(|a, b| a.x.total_cmp(&b.x));
    Ok(ParticleGas {
        length: l,
        particles,
    })
}

/// Ballistic advance by `dt`. Every pair whose ring order swaps during the
/// interval collides; each collided particle draws a fresh momentum.
/// Returns the number of particles that collided.
pub fn advance_gas(gas: &mut ParticleGas, dt: f64, rng: &mut StreamRng) -> usize {
    let n = gas.len();
    let l = gas.length;
    let reach = 2.0 * dt;
    let mut hit = vec![false; n];
    for i in 0..n {
        let (xi, di) = (gas.particles[i].x, gas.particles[i].v * dt);
        for j in 1..n {
            let idx = (i + j) % n;
            let wrap = if i + j >= n { l } else { 0.0 };
            let gap = gas.particles[idx].x + wrap - xi;
            if gap > reach {
                break;
            }
            if di - gas.particles[idx].v * dt > gap {
                hit[i] = true;
                hit[idx] = true;
            }
        }
    }
    let mut collided = 0;
    for (p, h) in gas.particles.iter_mut().zip(&hit) {
        p.x = (p.x + p.v * dt).rem_euclid(l);
        if *h {
            collided += 1;
            let k = random_momentum(rng);
            p.k = k;
            p.v = k.sin();
        }
    }
    gas.particles.sort_by(|a, b| a.x.total_cmp(&b.x));
    collided
}

/// Occupation per unit cell, `floor(x)` binning.
pub fn coarse_density(gas: &ParticleGas, length: usize) -> Vec<u32> {
    let mut n = vec![0u32; length];
    for p in &gas.particles {
        let site = (p.x.floor() as usize).min(length - 1);
        n[site] += 1;
    }
    n
}

/// Bessel functions `J_0(x), …, J_M(x)` for `x ≥ 0` by Miller's downward
/// recurrence normalised with `J_0 + 2 Σ J_{2k} = 1`, truncated at the last
/// order with `|J_m| ≥ tol`.
pub fn bessel_j_table(x: f64, tol: f64) -> Vec<f64> {
    if x == 0.0 {
        return vec![1.0];
    }
    let start = (2.0 * x + 40.0 + 10.0 * x.sqrt()).ceil() as usize;
    let mut f = vec![0.0; start + 2];
    f[start] = 1e-300;
    for m in (1..=start).rev() {
        f[m - 1] = 2.0 * m as f64 / x * f[m] - f[m + 1];
        if f[m - 1].abs() > 1e250 {
            for v in f[m - 1..].iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    let norm = f[0] + 2.0 * f.iter().skip(2).step_by(2).sum::<f64>();
    let j: Vec<f64> = f.iter().map(|v| v / norm).collect();
    let last = (0..j.len()).rev().find(|&m| j[m].abs() >= tol).unwrap_or(0);
    j[..=last].to_vec()
}

/// Tabulated ring propagator `K(m) = i^m J_m(dt)`, `|m| ≤ cutoff`.
#[derive(Debug, Clone)]
pub struct BesselKernel {
    pub dt: f64,
    /// `taps[m + cutoff] = K(m)`.
    pub taps: Vec<Complex64>,
    pub cutoff: usize,
}

pub const KERNEL_TOL: f64 = 1e-14;

impl BesselKernel {
    pub fn new(dt: f64) -> Result<Self> {
        if !(dt >= 0.0) {
            return argument("propagation time must be non-negative");
        }
        let j = bessel_j_table(dt, KERNEL_TOL);
        let cutoff = j.len() - 1;
        let ipow = [
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(0.0, -1.0),
        ];
        // J_{-m} = (-1)^m J_m and i^{-m} (-1)^m = i^m, so K is even in m
        let taps = (0..=2 * cutoff)
            .map(|i| {
                let m = i.abs_diff(cutoff);
                ipow[m % 4] * j[m]
            })
            .collect();
        Ok(Self { dt, taps, cutoff })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MagnonState {
    pub amplitudes: Vec<Complex64>,
    /// Sites outside `[lo, hi)` hold exactly zero (may wrap past the end).
    lo: usize,
    width: usize,
}

impl MagnonState {
    pub fn delta(length: usize, site: usize) -> Self {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); length];
        amplitudes[site] = Complex64::new(1.0, 0.0);
        Self {
            amplitudes,
            lo: site,
            width: 1,
        }
    }

    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Self {
        let width = amplitudes.len();
        Self {
            amplitudes,
            lo: 0,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn norm(&self) -> f64 {
        let l = self.len();
        (0..self.width)
            .map(|d| self.amplitudes[(self.lo + d) % l].norm_sqr())
            .sum()
    }

    /// Drops negligible amplitude at both edges of the support window.
    fn trim(&mut self, floor: f64) {
        let l = self.len();
        while self.width > 1 && self.amplitudes[self.lo].norm_sqr() < floor {
            self.amplitudes[self.lo] = Complex64::new(0.0, 0.0);
            self.lo = (self.lo + 1) % l;
            self.width -= 1;
        }
        while self.width > 1 && self.amplitudes[(self.lo + self.width - 1) % l].norm_sqr() < floor {
            self.amplitudes[(self.lo + self.width - 1) % l] = Complex64::new(0.0, 0.0);
            self.width -= 1;
        }
    }
}

/// Exact ring propagator `e^{i dt cos k}` applied in momentum space.
pub fn momentum_propagate(psi: &MagnonState, dt: f64) -> MagnonState {
    let l = psi.len();
    let mut planner = FftPlanner::new();
    let mut buf = psi.amplitudes.clone();
    planner.plan_fft_forward(l).process(&mut buf);
    for (q, a) in buf.iter_mut().enumerate() {
        let k = 2.0 * PI * q as f64 / l as f64;
        *a *= Complex64::from_polar(1.0 / l as f64, dt * k.cos());
    }
    planner.plan_fft_inverse(l).process(&mut buf);
    MagnonState::from_amplitudes(buf)
}

fn propagate_in_place(psi: &mut MagnonState, kernel: &BesselKernel, scratch: &mut Vec<Complex64>) {
    let l = psi.len();
    let m = kernel.cutoff;
    if 2 * m + 1 > l || psi.width + 2 * m >= l {
        // full ring: circular convolution with the aliased kernel
        scratch.clear();
        scratch.extend_from_slice(&psi.amplitudes);
        for x in 0..l {
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, tap) in kernel.taps.iter().enumerate() {
                let src = (x + l * (m / l + 1) + m - i) % l;
                acc += tap * scratch[src];
            }
            psi.amplitudes[x] = acc;
        }
        psi.lo = 0;
        psi.width = l;
        return;
    }
    // support window plus margin, unwrapped into a linear buffer
    let w = psi.width;
    let start = (psi.lo + l - m) % l;
    scratch.clear();
    scratch.resize(w + 4 * m, Complex64::new(0.0, 0.0));
    for d in 0..w {
        scratch[2 * m + d] = psi.amplitudes[(psi.lo + d) % l];
    }
    for d in 0..w + 2 * m {
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, tap) in kernel.taps.iter().enumerate() {
            acc += tap * scratch[d + 2 * m - i];
        }
        psi.amplitudes[(start + d) % l] = acc;
    }
    psi.lo = start;
    psi.width = w + 2 * m;
}

/// `ψ_x ← Σ_{x'} i^{x−x'} J_{x−x'}(dt) ψ_{x'}` on the ring. Falls back to the
/// exact momentum-space product when the kernel is wider than the ring.
pub fn bessel_propagate(psi: &MagnonState, dt: f64) -> Result<MagnonState> {
    let kernel = BesselKernel::new(dt)?;
    if 2 * kernel.cutoff + 1 > psi.len() {
        return Ok(momentum_propagate(psi, dt));
    }
    let mut out = psi.clone();
    propagate_in_place(&mut out, &kernel, &mut Vec::new());
    Ok(out)
}

/// `ψ(x) ← e^{−γ n̂(x)} ψ(x)`.
pub fn dephase(psi: &mut MagnonState, occupation: &[u32], gamma: f64) {
    let l = psi.len();
    for d in 0..psi.width {
        let x = (psi.lo + d) % l;
        if occupation[x] > 0 {
            psi.amplitudes[x] *= (-gamma * occupation[x] as f64).exp();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnonConfig {
    pub gamma: f64,
    pub dt: f64,
    pub length: usize,
    pub density: f64,
    pub t_max: usize,
    pub samples: u64,
    pub seed: u64,
    /// Russian-roulette threshold on the norm; 0 disables it.
    #[serde(default = "default_roulette")]
    pub roulette: f64,
}

fn default_roulette() -> f64 {
    1e-10
}

impl Default for MagnonConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            dt: 1.0,
            length: 256,
            density: 1.0,
            t_max: 60,
            samples: 100_000,
            seed: 1,
            roulette: default_roulette(),
        }
    }
}

impl MagnonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return argument("gamma must be non-negative");
        }
        if !(self.dt > 0.0) {
            return argument("dt must be positive");
        }
        if !(self.roulette >= 0.0 && self.roulette < 1.0) {
            return argument("roulette threshold must lie in [0, 1)");
        }
        if self.samples == 0 {
            return argument("need at least one sample");
        }
        if !(self.density >= 0.0) {
            return argument("density must be non-negative");
        }
        if (self.length as f64) <= 4.0 * self.dt {
            return argument("ring must be longer than 4·dt");
        }
        Ok(())
    }
}

const TRIM_FLOOR: f64 = 1e-60;
/// Support width above which the full-ring FFT product is cheaper than the
/// direct kernel sum.
const FFT_CROSSOVER: usize = 96;

/// Reusable propagation machinery for one ring length and period.
pub struct MagnonEngine {
    kernel: BesselKernel,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    ifft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    phases: Vec<Complex64>,
}

impl MagnonEngine {
    pub fn new(length: usize, dt: f64) -> Result<Self> {
        let kernel = BesselKernel::new(dt)?;
        let mut planner = FftPlanner::new();
        let phases = (0..length)
            .map(|q| {
                let k = 2.0 * PI * q as f64 / length as f64;
                Complex64::from_polar(1.0 / length as f64, dt * k.cos())
            })
            .collect();
        Ok(Self {
            kernel,
            fft: planner.plan_fft_forward(length),
            ifft: planner.plan_fft_inverse(length),
            phases,
        })
    }

    /// One period of free propagation. Narrow supports use the Bessel
    /// kernel directly; wide ones the equivalent momentum-space product.
    pub fn propagate(&self, psi: &mut MagnonState, scratch: &mut Vec<Complex64>) {
        let l = psi.len();
        let m = self.kernel.cutoff;
        if 2 * m + 1 <= l && psi.width + 2 * m < FFT_CROSSOVER.min(l) {
            propagate_in_place(psi, &self.kernel, scratch);
            return;
        }
        self.fft.process(&mut psi.amplitudes);
        for (a, ph) in psi.amplitudes.iter_mut().zip(&self.phases) {
            *a *= ph;
        }
        self.ifft.process(&mut psi.amplitudes);
        psi.lo = 0;
        psi.width = l;
    }
}

fn run_trajectory(config: &MagnonConfig, engine: &MagnonEngine, index: u64) -> Vec<f64> {
    let mut norms = vec![0.0; config.t_max + 1];
    norms[0] = 1.0;
    if config.density == 0.0 || config.gamma == 0.0 {
        norms.fill(1.0);
        return norms;
    }
    let mut rng = stream(config.seed, Tag::Magnon, index);
    let mut roulette = stream(config.seed, Tag::Roulette, index);
    let Ok(mut gas) = sample_gas(config.length, config.density, &mut rng) else {
        norms.fill(1.0);
        return norms;
    };
    let mut psi = MagnonState::delta(config.length, config.length / 2);
    let mut scratch = Vec::new();
    for norm in norms.iter_mut().skip(1) {
        engine.propagate(&mut psi, &mut scratch);
        advance_gas(&mut gas, config.dt, &mut rng);
        dephase(&mut psi, &coarse_density(&gas, config.length), config.gamma);
        let mut p = psi.norm();
        if p < config.roulette {
            // unbiased termination: survive with probability p/θ at weight θ
            if roulette.random::<f64>() * config.roulette < p {
                let scale = (config.roulette / p).sqrt();
                for a in psi.amplitudes.iter_mut() {
                    *a *= scale;
                }
                p = config.roulette;
            } else {
                break;
            }
        }
        *norm = p;
        psi.trim(TRIM_FLOOR * p);
    }
    norms
}

/// Norms `0..=t_max` of one gas trajectory.
pub fn magnon_trajectory(config: &MagnonConfig, index: u64) -> Vec<f64> {
    let engine = MagnonEngine::new(config.length, config.dt).expect("validated config");
    run_trajectory(config, &engine, index)
}

/// Monte Carlo mean of the magnon norm over independent gas histories.
pub fn survival_probability(config: &MagnonConfig) -> Result<TimeSeries> {
    config.validate()?;
    let engine = MagnonEngine::new(config.length, config.dt)?;
    let m: Moments = average(config.samples, config.t_max + 1, |i| run_trajectory(config, &engine, i));
    let times = (0..=config.t_max).map(|t| t as f64 * config.dt).collect();
    Ok(TimeSeries::new(times, m.mean())?
        .with_stderr(m.stderr())?
        .with_meta("module", "gasmagnon")
        .with_meta("gamma", config.gamma)
        .with_meta("density", config.density)
        .with_meta("length", config.length)
        .with_meta("samples", config.samples)
        .with_meta("seed", config.seed)
        .with_meta("roulette", config.roulette))
}

/// Mean time between collisions for a fresh gas of density `n`.
pub fn mean_free_time(density: f64) -> f64 {
    PI * PI / (8.0 * density)
}

/// Configuration for gas-only measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasRun {
    pub length: usize,
    pub density: f64,
    /// Steps discarded before measuring, to relax the velocity law.
    pub burn_in: usize,
    /// Measured steps per sample; time origins range over these.
    pub steps: usize,
    pub samples: u64,
    pub seed: u64,
    /// Collision-detection intervals per unit time step.
    #[serde(default = "one")]
    pub substeps: usize,
}

fn one() -> usize {
    1
}

/// Substeps giving about 25 collision intervals per mean free time.
pub fn resolved_substeps(density: f64) -> usize {
    ((20.0 * density).ceil() as usize).max(1)
}

impl GasRun {
    fn advance(&self, gas: &mut ParticleGas, rng: &mut StreamRng) {
        let dt = 1.0 / self.substeps as f64;
        for _ in 0..self.substeps {
            advance_gas(gas, dt, rng);
        }
    }
}

fn relaxed_gas(run: &GasRun, index: u64) -> Result<(ParticleGas, StreamRng)> {
    if run.substeps == 0 {
        return argument("substeps must be at least 1");
    }
    let mut rng = stream(run.seed, Tag::Gas, index);
    let mut gas = sample_gas(run.length, run.density, &mut rng)?;
    for _ in 0..run.burn_in {
        run.advance(&mut gas, &mut rng);
    }
    Ok((gas, rng))
}

/// `C(s) = ⟨J(s₀+s) J(s₀)⟩ / L` with `J = Σ_i v_i`, averaged over time
/// origins within each sample and then over samples.
pub fn current_autocorrelation(run: &GasRun, max_lag: usize) -> Result<TimeSeries> {
    if max_lag >= run.steps {
        return argument("max_lag must be below the measured step count");
    }
    relaxed_gas(run, 0)?;
    let m = average(run.samples, max_lag + 1, |i| {
        let (mut gas, mut rng) = relaxed_gas(run, i).expect("checked above");
        let mut j = Vec::with_capacity(run.steps);
        for _ in 0..run.steps {
            j.push(gas.current());
            run.advance(&mut gas, &mut rng);
        }
        let origins = (run.steps - max_lag) as f64;
        (0..=max_lag)
            .map(|s| {
                (0..run.steps - max_lag).map(|o| j[o + s] * j[o]).sum::<f64>()
                    / origins
                    / run.length as f64
            })
            .collect()
    });
    Ok(TimeSeries::new((0..=max_lag).map(|s| s as f64).collect(), m.mean())?
        .with_stderr(m.stderr())?
        .with_meta("quantity", "current_autocorrelation")
        .with_meta("density", run.density))
}

/// Kubo diffusivity with the Poisson susceptibility `χ = n`.
pub fn gas_diffusivity(run: &GasRun, max_lag: usize) -> Result<KuboReport> {
    let c = current_autocorrelation(run, max_lag)?;
    kubo_diffusivity(&c, run.density)
}

/// Connected density correlator `S(r, τ)` for each requested lag, with
/// `r = −L/2 … L/2−1` (index `r + L/2`).
#[derive(Debug, Clone, PartialEq)]
pub struct StructureFactor {
    pub lags: Vec<usize>,
    pub values: Vec<Vec<f64>>,
    pub density: f64,
}

impl StructureFactor {
    pub fn offset(&self) -> i64 {
        (self.values[0].len() / 2) as i64
    }

    /// Averages `S(r)` with `S(−r)`; the gas law is parity symmetric.
    pub fn symmetrized(&self) -> StructureFactor {
        let values = self
            .values
            .iter()
            .map(|s| {
                let l = s.len();
                let off = l / 2;
                (0..l)
                    .map(|i| {
                        let j = 2 * off as i64 - i as i64;
                        if j >= 0 && (j as usize) < l {
                            0.5 * (s[i] + s[j as usize])
                        } else {
                            s[i]
                        }
                    })
                    .collect()
            })
            .collect();
        StructureFactor {
            values,
            ..self.clone()
        }
    }
}

pub fn structure_factor(run: &GasRun, lags: &[usize]) -> Result<StructureFactor> {
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    if max_lag >= run.steps {
        return argument("lags must be below the measured step count");
    }
    relaxed_gas(run, 0)?;
    let l = run.length;
    let m = average(run.samples, lags.len() * l, |i| {
        let (mut gas, mut rng) = relaxed_gas(run, i).expect("checked above");
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(l);
        let ifft = planner.plan_fft_inverse(l);
        let mean = gas.len() as f64 / l as f64;
        let mut frames = Vec::with_capacity(run.steps);
        for _ in 0..run.steps {
            let mut f: Vec<Complex64> = coarse_density(&gas, l)
                .iter()
                .map(|&c| Complex64::new(c as f64 - mean, 0.0))
                .collect();
            fft.process(&mut f);
            frames.push(f);
            run.advance(&mut gas, &mut rng);
        }
        let origins = run.steps - max_lag;
        let mut out = Vec::with_capacity(lags.len() * l);
        for &lag in lags {
            let mut acc = vec![Complex64::new(0.0, 0.0); l];
            for o in 0..origins {
                for (a, (x, y)) in acc.iter_mut().zip(frames[o + lag].iter().zip(&frames[o])) {
                    *a += x * y.conj();
                }
            }
            ifft.process(&mut acc);
            let norm = (l * l * origins) as f64;
            // S(r) = (1/L) Σ_x δn(x+r, τ) δn(x, 0); shift r to −L/2..L/2
            for r in 0..l {
                let src = (r + l - l / 2) % l;
                out.push(acc[src].re / norm);
            }
        }
        out
    });
    let mean = m.mean();
    Ok(StructureFactor {
        lags: lags.to_vec(),
        values: mean.chunks(l).map(|c| c.to_vec()).collect(),
        density: run.density,
    })
}

/// Rescales `S(r, τ)` to `(ξ, S·√τ / n^{3/2})` with `ξ = r √(n/τ)`.
pub fn collapse_structure_factor(sf: &StructureFactor) -> Vec<(Vec<f64>, Vec<f64>)> {
    let n = sf.density;
    let off = sf.offset();
    sf.lags
        .iter()
        .zip(&sf.values)
        .filter(|(lag, _)| **lag > 0)
        .map(|(&lag, s)| {
            let tau = lag as f64;
            let xi = (0..s.len())
                .map(|i| (i as i64 - off) as f64 * (n / tau).sqrt())
                .collect();
            let y = s.iter().map(|v| v * tau.sqrt() / n.powf(1.5)).collect();
            (xi, y)
        })
        .collect()
}

/// `E|sin a − sin b|` for independent uniform momenta, by a midpoint rule.
/// The exact value is 8/π².
pub fn mean_relative_speed(grid: usize) -> f64 {
    let h = 2.0 * PI / grid as f64;
    let v: Vec<f64> = (0..grid).map(|i| (-PI + (i as f64 + 0.5) * h).sin()).collect();
    let mut acc = 0.0;
    for a in &v {
        for b in &v {
            acc += (a - b).abs();
        }
    }
    acc / (grid * grid) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{linear_fit, max_curve_spread};
    use proptest::prelude::*;

    fn rng(i: u64) -> StreamRng {
        stream(99, Tag::Gas, i)
    }

    fn quad_bessel(n: i32, x: f64) -> f64 {
        // J_n(x) = (1/π) ∫_0^π cos(nτ − x sin τ) dτ, composite Simpson
        let m = 20_000;
        let h = PI / m as f64;
        let f = |t: f64| (n as f64 * t - x * t.sin()).cos();
        let mut s = f(0.0) + f(PI);
        for i in 1..m {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0 / PI
    }

    #[test]
    fn bessel_table_matches_quadrature() {
        for x in [0.3, 1.0, 2.5, 7.0] {
            let j = bessel_j_table(x, 1e-14);
            for (n, v) in j.iter().enumerate().take(12) {
                assert!((v - quad_bessel(n as i32, x)).abs() < 1e-12, "J_{n}({x})");
            }
        }
        // pinned from the quadrature oracle
        let j0 = quad_bessel(0, 1.0);
        assert!((j0 - 0.765_197_686_557_966_6).abs() < 1e-13);
        assert!((bessel_j_table(1.0, 1e-14)[0] - j0).abs() < 1e-14);
    }

    #[test]
    fn kernel_cutoff_respects_tolerance() {
        let k = BesselKernel::new(1.0).unwrap();
        assert!(quad_bessel(k.cutoff as i32 + 1, 1.0).abs() < KERNEL_TOL);
        assert!(quad_bessel(k.cutoff as i32, 1.0).abs() >= KERNEL_TOL * 0.5);
    }

    #[test]
    fn zero_time_propagation_is_identity() {
        let psi = MagnonState::delta(32, 7);
        let out = bessel_propagate(&psi, 0.0).unwrap();
        assert_eq!(out.amplitudes, psi.amplitudes);
    }

    #[test]
    fn delta_propagation_on_site_amplitude() {
        let psi = MagnonState::delta(64, 32);
        let out = bessel_propagate(&psi, 1.0).unwrap();
        assert!((out.amplitudes[32].norm() - quad_bessel(0, 1.0).abs()).abs() < 1e-13);
        assert!((out.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn real_space_kernel_equals_momentum_product() {
        let l = 48;
        let amps: Vec<Complex64> = (0..l)
            .map(|x| Complex64::new((x as f64 * 0.37).sin(), (x as f64 * 0.11).cos()))
            .collect();
        let psi = MagnonState::from_amplitudes(amps);
        for dt in [0.5, 1.0, 3.0] {
            let a = bessel_propagate(&psi, dt).unwrap();
            let b = momentum_propagate(&psi, dt);
            for (u, v) in a.amplitudes.iter().zip(&b.amplitudes) {
                assert!((u - v).norm() < 1e-12);
            }
        }
        // ring narrower than the kernel uses the exact product
        let small = MagnonState::delta(8, 3);
        let c = bessel_propagate(&small, 6.0).unwrap();
        assert!((c.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn windowed_propagation_matches_full_ring() {
        let l = 200;
        let kernel = BesselKernel::new(1.0).unwrap();
        let mut windowed = MagnonState::delta(l, 5);
        let mut full = MagnonState::delta(l, 5);
        let mut scratch = Vec::new();
        for _ in 0..12 {
            propagate_in_place(&mut windowed, &kernel, &mut scratch);
            windowed.trim(1e-60);
            full = momentum_propagate(&full, 1.0);
        }
        for (a, b) in windowed.amplitudes.iter().zip(&full.amplitudes) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn dephasing_closed_forms() {
        let l = 16;
        let uniform = MagnonState::from_amplitudes(vec![Complex64::new(0.25, 0.0); l]);
        let mut a = uniform.clone();
        dephase(&mut a, &vec![0; l], 3.0);
        assert_eq!(a, uniform);
        let mut b = uniform.clone();
        dephase(&mut b, &vec![1; l], 0.0);
        assert_eq!(b, uniform);
        let mut c = uniform.clone();
        dephase(&mut c, &vec![1; l], 0.5);
        assert!((c.norm() - uniform.norm() * (-1.0f64).exp()).abs() < 1e-15);
        // disjoint support leaves the norm unchanged
        let mut d = MagnonState::delta(l, 3);
        let mut occ = vec![0; l];
        occ[9] = 2;
        dephase(&mut d, &occ, 1.0);
        assert_eq!(d.norm(), 1.0);
        occ[3] = 1;
        dephase(&mut d, &occ, 1.0);
        assert!(d.norm() < 1.0);
    }

    #[test]
    fn frozen_uniform_background_factorises() {
        let (g, c, l) = (0.3, 2u32, 64);
        let kernel = BesselKernel::new(1.0).unwrap();
        let mut psi = MagnonState::delta(l, 32);
        let mut scratch = Vec::new();
        for t in 1..=50 {
            propagate_in_place(&mut psi, &kernel, &mut scratch);
            dephase(&mut psi, &vec![c; l], g);
            let want = (-2.0 * g * c as f64 * t as f64).exp();
            assert!((psi.norm() - want).abs() < 1e-8 * want);
        }
    }

    #[test]
    fn sampler_counts_and_symmetry() {
        let gas = sample_gas(1000, 0.1, &mut rng(0)).unwrap();
        assert_eq!(gas.len(), 100);
        assert!(gas.particles.iter().all(|p| p.v.abs() <= 1.0 && p.x < 1000.0));
        assert!(sample_gas(10, 0.0, &mut rng(0)).is_err());
        // mean velocity, sd of sin k is 1/sqrt(2)
        let big = sample_gas(100_000, 0.1, &mut rng(1)).unwrap();
        let mean = big.current() / big.len() as f64;
        assert!(mean.abs() < 3.0 * (0.5f64 / big.len() as f64).sqrt());
    }

    #[test]
    fn sampler_positions_pass_chi_square() {
        // 10^4 draws into 20 bins; 99.9% point of chi2(19) is 43.8
        let mut r = rng(2);
        let mut counts = [0u32; 20];
        for _ in 0..100 {
            for p in sample_gas(100, 1.0, &mut r).unwrap().particles {
                counts[(p.x / 5.0) as usize] += 1;
            }
        }
        let e = 10_000.0 / 20.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        assert!(chi2 < 43.8, "chi2 = {chi2}");
    }

    #[test]
    fn coarse_density_floor_binning() {
        let g = ParticleGas::from_particles(10.0, &[3.7], &[0.0]);
        let n = coarse_density(&g, 10);
        assert_eq!(n[3], 1);
        assert_eq!(n.iter().sum::<u32>(), 1);
        let empty = ParticleGas::from_particles(10.0, &[], &[]);
        assert!(coarse_density(&empty, 10).iter().all(|&c| c == 0));
    }

    #[test]
    fn lone_and_parallel_particles_never_collide() {
        let mut one = ParticleGas::from_particles(50.0, &[10.0], &[PI / 2.0]);
        assert_eq!(advance_gas(&mut one, 1.0, &mut rng(3)), 0);
        assert!((one.particles[0].x - 11.0).abs() < 1e-15);
        assert_eq!(one.particles[0].k, PI / 2.0);
        let mut two = ParticleGas::from_particles(50.0, &[10.0, 10.5], &[0.7, 0.7]);
        for _ in 0..200 {
            assert_eq!(advance_gas(&mut two, 1.0, &mut rng(4)), 0);
        }
        assert!(two.particles.iter().all(|p| p.k == 0.7));
    }

    #[test]
    fn head_on_pair_collides_across_the_seam() {
        let mut g = ParticleGas::from_particles(20.0, &[19.8, 0.1], &[PI / 2.0, -PI / 2.0]);
        assert_eq!(advance_gas(&mut g, 1.0, &mut rng(5)), 2);
        assert_eq!(g.len(), 2);
    }

    /// Exact first-interval collision fraction for i.i.d. uniform particles:
    /// a pair with displacements d, e crosses with probability |d − e| / L.
    fn first_step_fraction(n_particles: usize, l: f64, grid: usize) -> f64 {
        let h = 2.0 * PI / grid as f64;
        let v: Vec<f64> = (0..grid).map(|i| (-PI + (i as f64 + 0.5) * h).sin()).collect();
        v.iter()
            .map(|a| {
                let m = v.iter().map(|b| (a - b).abs()).sum::<f64>() / grid as f64;
                1.0 - (1.0 - m / l).powi(n_particles as i32 - 1)
            })
            .sum::<f64>()
            / grid as f64
    }

    #[test]
    fn collision_rate_matches_pair_oracle_and_scales_with_density() {
        let l = 2000;
        let mut rates = Vec::new();
        let mut oracle = Vec::new();
        let ns = [0.05, 0.1, 0.2];
        for (j, &n) in ns.iter().enumerate() {
            let mut r = rng(10 + j as u64);
            let (mut hits, mut total) = (0usize, 0usize);
            for _ in 0..400 {
                let mut g = sample_gas(l, n, &mut r).unwrap();
                hits += advance_gas(&mut g, 1.0, &mut r);
                total += g.len();
            }
            let frac = hits as f64 / total as f64;
            let want = first_step_fraction((n * l as f64) as usize, l as f64, 2000);
            let se = (want * (1.0 - want) / total as f64).sqrt();
            assert!((frac - want).abs() < 4.0 * se, "n={n}: {frac} vs {want}");
            rates.push(frac);
            oracle.push(want);
        }
        let fit = linear_fit(&ns, &rates).unwrap();
        let exact = linear_fit(&ns, &oracle).unwrap();
        // proportional to n up to the 1 − e^{−n E|Δv|} saturation
        assert!(fit.intercept.abs() < 0.01);
        assert!((fit.slope - exact.slope).abs() < 0.03);
        assert!((oracle[0] / ns[0] - mean_relative_speed(2000)).abs() < 0.03);
    }

    #[test]
    fn mean_relative_speed_value() {
        // pinned from a 4000-point midpoint rule
        let c = mean_relative_speed(4000);
        assert!((c - mean_relative_speed(2000)).abs() < 1e-6);
        assert!((c - 0.810_569_469).abs() < 1e-6, "{c}");
    }

    #[test]
    fn trivial_survival_cases() {
        let base = MagnonConfig {
            length: 64,
            t_max: 20,
            samples: 3,
            ..MagnonConfig::default()
        };
        for cfg in [
            MagnonConfig { gamma: 0.0, ..base },
            MagnonConfig { density: 0.0, ..base },
        ] {
            let p = survival_probability(&cfg).unwrap();
            assert!(p.values.iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn survival_is_reproducible_and_monotone() {
        let cfg = MagnonConfig {
            length: 128,
            density: 0.2,
            t_max: 60,
            samples: 40,
            seed: 5,
            ..MagnonConfig::default()
        };
        assert_eq!(magnon_trajectory(&cfg, 7), magnon_trajectory(&cfg, 7));
        assert_ne!(magnon_trajectory(&cfg, 7), magnon_trajectory(&cfg, 8));
        for i in 0..40 {
            let tr = magnon_trajectory(&cfg, i);
            for w in tr.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
        }
        let a = survival_probability(&cfg).unwrap();
        let b = survival_probability(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kubo_diffusivity_scales_inversely_with_density() {
        let mut inv = Vec::new();
        let mut d = Vec::new();
        for n in [0.1, 0.2, 0.4] {
            let run = GasRun {
                length: 1000,
                density: n,
                burn_in: (20.0 / n) as usize,
                steps: (300.0 / n) as usize,
                samples: 64,
                seed: 3,
                substeps: 1,
            };
            let r = gas_diffusivity(&run, (40.0 / n) as usize).unwrap();
            inv.push(1.0 / n);
            d.push(r.diffusivity);
        }
        let fit = linear_fit(&inv, &d).unwrap();
        assert!(fit.slope > 0.0 && fit.r_squared > 0.98, "{fit:?} {d:?}");
    }

    #[test]
    fn structure_factor_sum_rule() {
        // Σ_r S(r, τ) = Var(N)/L = 0 for fixed particle number
        let run = GasRun {
            length: 200,
            density: 0.3,
            burn_in: 20,
            steps: 100,
            samples: 4,
            seed: 1,
            substeps: 1,
        };
        let sf = structure_factor(&run, &[0, 10]).unwrap();
        for s in &sf.values {
            assert!(s.iter().sum::<f64>().abs() < 1e-10);
        }
        // equal-time on-site value: Poisson variance n plus collision-induced clustering
        let off = sf.offset() as usize;
        assert!(sf.values[0][off] > 0.3 && sf.values[0][off] < 0.45);
        let c = collapse_structure_factor(&sf);
        assert_eq!(c.len(), 1);
        assert!(max_curve_spread(&c, &[0.0]) == 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn advance_conserves_particles_and_speed_bound(seed in 0u64..1000, n in 0.05f64..1.0) {
            let mut r = stream(seed, Tag::Gas, 0);
            let mut g = sample_gas(300, n, &mut r).unwrap();
            let count = g.len();
            for _ in 0..20 {
                advance_gas(&mut g, 1.0, &mut r);
                prop_assert_eq!(g.len(), count);
                prop_assert!(g.particles.iter().all(|p| p.v.abs() <= 1.0 && p.x >= 0.0 && p.x < 300.0));
                prop_assert_eq!(coarse_density(&g, 300).iter().map(|&c| c as usize).sum::<usize>(), count);
            }
        }

        #[test]
        fn propagation_is_unitary(re in proptest::collection::vec(-1.0f64..1.0, 40), dt in 0.1f64..4.0) {
            let amps: Vec<Complex64> = re.iter().enumerate().map(|(i, r)| Complex64::new(*r, (i as f64).cos() * 0.3)).collect();
            let psi = MagnonState::from_amplitudes(amps);
            let out = bessel_propagate(&psi, dt).unwrap();
            prop_assert!((out.norm() - psi.norm()).abs() < 1e-10 * psi.norm());
        }
    }
}
