//! Exact small-chain evolution of translation-invariant U(1) Floquet circuits.
//!
//! One period applies the even bonds `(2j, 2j+1)` then the odd bonds to the
//! state; gates are `exp(i H_{x,x+1})` with
//! `H = J(XX + YY) + Δ(1 + δ(−1)^x) ZZ + (−1)^x g (Z_x − Z_{x+1})`.
//! Operators that shift the charge by a fixed amount are stored as blocks
//! between charge sectors, which is what keeps `L = 12` affordable.

use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analysis::{linear_fit, LinearFit};
use crate::ensemble::average;
use crate::error::{argument, domain, Error, Result};
use crate::gates::{apply_to_vector, sample_u1_gate, Gate};
use crate::replica::Brickwork;
use crate::rng::{stream, Tag};
use crate::Boundary;

type C = Complex64;
const ZERO: C = C::new(0.0, 0.0);

/// Largest chain for the operator backends.
pub const OPERATOR_MAX_SITES: usize = 12;
/// Largest chain for the statevector backends.
pub const STATE_MAX_SITES: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    A,
    B,
    C,
    Custom,
}

impl FromStr for Model {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Model::A),
            "B" | "b" => Ok(Model::B),
            "C" | "c" => Ok(Model::C),
            "custom" => Ok(Model::Custom),
            other => Err(Error::Argument(format!("unknown model `{other}` (expected A|B|C|custom)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloquetParams {
    pub j: f64,
    /// Anisotropy Δ.
    pub anisotropy: f64,
    /// Staggering δ of the anisotropy.
    pub stagger: f64,
    /// Staggered field g.
    pub field: f64,
    pub model: Model,
}

impl FloquetParams {
    pub fn custom(j: f64, anisotropy: f64, stagger: f64, field: f64) -> Self {
        Self {
            j,
            anisotropy,
            stagger,
            field,
            model: Model::Custom,
        }
    }

    pub fn model(model: Model) -> Self {
        let (j, a, s, g) = match model {
            Model::A => (0.393, 0.177, 0.333, 0.3),
            Model::B => (0.393, 0.293, 0.0, 0.2),
            Model::C => (0.589, 0.514, 0.0, 0.45),
            Model::Custom => (0.0, 0.0, 0.0, 0.0),
        };
        Self {
            model,
            ..Self::custom(j, a, s, g)
        }
    }

    /// The 4×4 Hamiltonian on bond `(x, x+1)`, qubit pair index `2 b_x + b_{x+1}`.
    pub fn bond_hamiltonian(&self, x: usize) -> [[f64; 4]; 4] {
        let s = if x % 2 == 0 { 1.0 } else { -1.0 };
        let zz = self.anisotropy * (1.0 + self.stagger * s);
        let mut h = [[0.0; 4]; 4];
        h[0][0] = zz;
        h[3][3] = zz;
        // |01⟩: Z_x − Z_y = −2, |10⟩: +2; XX + YY = 2(σ⁺σ⁻ + σ⁻σ⁺)
        h[1][1] = -zz - 2.0 * s * self.field;
        h[2][2] = -zz + 2.0 * s * self.field;
        h[1][2] = 2.0 * self.j;
        h[2][1] = 2.0 * self.j;
        h
    }
}

/// `exp(i H_{x,x+1})` in closed form; `bond` is the left site `x`.
pub fn build_gate(params: &FloquetParams, bond: usize) -> Gate {
    let h = params.bond_hamiltonian(bond);
    let mut g = [[ZERO; 4]; 4];
    g[0][0] = C::from_polar(1.0, h[0][0]);
    g[3][3] = C::from_polar(1.0, h[3][3]);
    // block = c·1 + hx σx + hz σz
    let c = 0.5 * (h[1][1] + h[2][2]);
    let hz = 0.5 * (h[1][1] - h[2][2]);
    let hx = h[1][2];
    let r = (hx * hx + hz * hz).sqrt();
    let (cos, sinc) = if r > 0.0 { (r.cos(), r.sin() / r) } else { (1.0, 1.0) };
    let phase = C::from_polar(1.0, c);
    let i = C::new(0.0, 1.0);
    g[1][1] = phase * (cos + i * sinc * hz);
    g[2][2] = phase * (cos - i * sinc * hz);
    g[1][2] = phase * i * sinc * hx;
    g[2][1] = phase * i * sinc * hx;
    g
}

/// Gibbs weighting `ρ ∝ e^{μ Σ σᶻ}`: up-spin density `n = 1/(1 + e^{−2μ})`.
pub fn density_for_mu(mu: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * mu).exp())
}

pub fn mu_for_density(n: f64) -> Result<f64> {
    if !(n > 0.0 && n < 1.0) {
        return domain(format!("density must lie in (0, 1), got {n}"));
    }
    Ok(0.5 * (n / (1.0 - n)).ln())
}

/// Operator `S` with `⟨a|S|b⟩ ≠ 0` only when `popcount(a) = popcount(b) + shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorOperator {
    pub length: usize,
    pub shift: i32,
    sectors: Vec<Vec<u32>>,
    rank: Vec<u32>,
    /// Per column sector `N`: row-major block `(N + shift) × N`, or empty.
    blocks: Vec<Vec<C>>,
}

impl SectorOperator {
    pub fn zeros(length: usize, shift: i32) -> Result<Self> {
        if length > OPERATOR_MAX_SITES {
            return Err(Error::Capacity(format!(
                "operator backends hold at most {OPERATOR_MAX_SITES} sites, got {length}"
            )));
        }
        let dim = 1usize << length;
        let mut sectors = vec![Vec::new(); length + 1];
        let mut rank = vec![0u32; dim];
        for a in 0..dim as u32 {
            let n = a.count_ones() as usize;
            rank[a as usize] = sectors[n].len() as u32;
            sectors[n].push(a);
        }
        let blocks = (0..=length)
            .map(|n| match Self::row_sector(length, shift, n) {
                Some(m) => vec![ZERO; sectors[m].len() * sectors[n].len()],
                None => Vec::new(),
            })
            .collect();
        Ok(Self {
            length,
            shift,
            sectors,
            rank,
            blocks,
        })
    }

    fn row_sector(length: usize, shift: i32, n: usize) -> Option<usize> {
        let m = n as i64 + shift as i64;
        (0..=length as i64).contains(&m).then_some(m as usize)
    }

    pub fn entries(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    pub fn set(&mut self, row: u32, col: u32, v: C) -> Result<()> {
        let n = col.count_ones() as usize;
        if row.count_ones() as i64 != n as i64 + self.shift as i64 {
            return argument("entry outside the operator's charge structure");
        }
        let cols = self.sectors[n].len();
        self.blocks[n][self.rank[row as usize] as usize * cols + self.rank[col as usize] as usize] = v;
        Ok(())
    }

    pub fn get(&self, row: u32, col: u32) -> C {
        let n = col.count_ones() as usize;
        if row.count_ones() as i64 != n as i64 + self.shift as i64 {
            return ZERO;
        }
        let cols = self.sectors[n].len();
        self.blocks[n][self.rank[row as usize] as usize * cols + self.rank[col as usize] as usize]
    }

    /// `S ← G S G†` with `G` on qubits `(x, y)`.
    pub fn conjugate(&mut self, g: &Gate, x: usize, y: usize) {
        let (mx, my) = (1u32 << x, 1u32 << y);
        let gc: [[C; 4]; 4] = std::array::from_fn(|r| std::array::from_fn(|c| g[r][c].conj()));
        for n in 0..=self.length {
            let Some(m) = Self::row_sector(self.length, self.shift, n) else { continue };
            let (rows, cols) = (&self.sectors[m], &self.sectors[n]);
            let nc = cols.len();
            let block = &mut self.blocks[n];
            // left: rows mix under G
            for &a in rows {
                let ra = self.rank[a as usize] as usize;
                match ((a & mx != 0) as usize, (a & my != 0) as usize) {
                    (0, 0) => block[ra * nc..(ra + 1) * nc].iter_mut().for_each(|v| *v *= g[0][0]),
                    (1, 1) => block[ra * nc..(ra + 1) * nc].iter_mut().for_each(|v| *v *= g[3][3]),
                    (0, 1) => {
                        let rb = self.rank[(a ^ mx ^ my) as usize] as usize;
                        for c in 0..nc {
                            let (u, w) = (block[ra * nc + c], block[rb * nc + c]);
                            block[ra * nc + c] = g[1][1] * u + g[1][2] * w;
                            block[rb * nc + c] = g[2][1] * u + g[2][2] * w;
                        }
                    }
                    _ => {}
                }
            }
            // right: columns mix under G†
            let mut pairs = Vec::with_capacity(nc / 2);
            let mut diag = Vec::with_capacity(nc);
            for &b in cols {
                let rb = self.rank[b as usize] as usize;
                match ((b & mx != 0) as usize, (b & my != 0) as usize) {
                    (0, 0) => diag.push((rb, gc[0][0])),
                    (1, 1) => diag.push((rb, gc[3][3])),
                    (0, 1) => pairs.push((rb, self.rank[(b ^ mx ^ my) as usize] as usize)),
                    _ => {}
                }
            }
            for row in block.chunks_mut(nc.max(1)) {
                for &(c, f) in &diag {
                    row[c] *= f;
                }
                for &(c1, c2) in &pairs {
                    let (u, w) = (row[c1], row[c2]);
                    row[c1] = u * gc[1][1] + w * gc[1][2];
                    row[c2] = u * gc[2][1] + w * gc[2][2];
                }
            }
        }
    }

    /// `S ← Z_x S Z_x`.
    pub fn conjugate_z(&mut self, x: usize) {
        let bit = 1u32 << x;
        self.map_entries(|a, b, v| if (a ^ b) & bit != 0 { -v } else { v });
    }

    /// One unit of `γ(Z O Z − O)` on every site: `e^{−2γ}` per differing bit.
    pub fn dephase(&mut self, gamma: f64) {
        if gamma == 0.0 {
            return;
        }
        let f: Vec<f64> = (0..=self.length).map(|k| (-2.0 * gamma * k as f64).exp()).collect();
        self.map_entries(|a, b, v| v * f[(a ^ b).count_ones() as usize]);
    }

    fn map_entries(&mut self, f: impl Fn(u32, u32, C) -> C) {
        for n in 0..=self.length {
            let Some(m) = Self::row_sector(self.length, self.shift, n) else { continue };
            let nc = self.sectors[n].len();
            for (i, &a) in self.sectors[m].iter().enumerate() {
                for (j, &b) in self.sectors[n].iter().enumerate() {
                    let v = &mut self.blocks[n][i * nc + j];
                    *v = f(a, b, *v);
                }
            }
        }
    }

    /// `Tr(σ⁺_x S)` for a lowering-type operator.
    pub fn trace_raising(&self, x: usize) -> C {
        let bit = 1u32 << x;
        self.sectors
            .iter()
            .flatten()
            .filter(|&&b| b & bit != 0)
            .map(|&b| self.get(b ^ bit, b))
            .sum()
    }

    /// `Tr(σᶻ_x S)` for a charge-neutral operator.
    pub fn trace_z(&self, x: usize) -> C {
        let bit = 1u32 << x;
        self.sectors
            .iter()
            .flatten()
            .map(|&a| if a & bit != 0 { self.get(a, a) } else { -self.get(a, a) })
            .sum()
    }
}

/// Shared setup of a correlator run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloquetConfig {
    pub length: usize,
    pub params: FloquetParams,
    pub boundary: Boundary,
    pub t_max: usize,
    pub mu: f64,
    pub source: usize,
}

impl FloquetConfig {
    pub fn new(length: usize, params: FloquetParams, t_max: usize) -> Self {
        Self {
            length,
            params,
            boundary: Boundary::Periodic,
            t_max,
            mu: 0.0,
            source: 0,
        }
    }

    fn geometry(&self) -> Result<Brickwork> {
        if self.source >= self.length {
            return domain(format!("source {} outside chain of {}", self.source, self.length));
        }
        Brickwork::new(self.length, self.boundary)
    }

    /// Signed displacement of `x` from the source (shortest way round on a ring).
    pub fn displacement(&self, x: usize) -> i64 {
        displacement(self.length, self.boundary, self.source, x)
    }
}

pub fn displacement(length: usize, boundary: Boundary, source: usize, x: usize) -> i64 {
    let d = x as i64 - source as i64;
    match boundary {
        Boundary::Open => d,
        Boundary::Periodic => {
            let l = length as i64;
            let d = d.rem_euclid(l);
            if d > l / 2 { d - l } else { d }
        }
    }
}

/// Gates of one period in application order.
fn period_gates(geometry: &Brickwork, params: &FloquetParams) -> Vec<(Gate, usize, usize)> {
    (0..2)
        .flat_map(|p| geometry.bonds(p))
        .map(|(x, y)| (build_gate(params, x), x, y))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelatorMethod {
    DenseOperator,
    Typicality,
    Superoperator,
    Trajectories,
}

impl CorrelatorMethod {
    pub fn label(self) -> &'static str {
        match self {
            CorrelatorMethod::DenseOperator => "dense-operator",
            CorrelatorMethod::Typicality => "typicality",
            CorrelatorMethod::Superoperator => "superoperator",
            CorrelatorMethod::Trajectories => "trajectories",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorResult {
    pub length: usize,
    pub source: usize,
    pub mu: f64,
    pub density: f64,
    pub method: CorrelatorMethod,
    /// `C(x, t)` indexed `[t][x]`, `t` in periods.
    pub values: Vec<Vec<C>>,
    /// Standard error of `C(x, t)` (modulus of the per-component errors); zero when exact.
    pub value_stderr: Vec<Vec<f64>>,
    /// `Σ_x |C(x, t)|²`.
    pub sumsq: Vec<f64>,
    pub sumsq_stderr: Vec<f64>,
    pub samples: u64,
}

impl CorrelatorResult {
    fn exact(cfg: &FloquetConfig, method: CorrelatorMethod, values: Vec<Vec<C>>) -> Self {
        let sumsq = values.iter().map(|r| r.iter().map(|c| c.norm_sqr()).sum()).collect();
        Self {
            length: cfg.length,
            source: cfg.source,
            mu: cfg.mu,
            density: density_for_mu(cfg.mu),
            method,
            value_stderr: vec![vec![0.0; cfg.length]; values.len()],
            sumsq_stderr: vec![0.0; values.len()],
            values,
            sumsq,
            samples: 0,
        }
    }

    fn sampled(cfg: &FloquetConfig, method: CorrelatorMethod, mean: &[f64], se: &[f64], samples: u64) -> Self {
        let l = cfg.length;
        let rows = mean.len() / (2 * l);
        let mut values = Vec::with_capacity(rows);
        let mut value_stderr = Vec::with_capacity(rows);
        let mut sumsq = Vec::with_capacity(rows);
        let mut sumsq_stderr = Vec::with_capacity(rows);
        for t in 0..rows {
            let off = 2 * l * t;
            let row: Vec<C> = (0..l).map(|x| C::new(mean[off + 2 * x], mean[off + 2 * x + 1])).collect();
            let err: Vec<(f64, f64)> = (0..l).map(|x| (se[off + 2 * x], se[off + 2 * x + 1])).collect();
            sumsq.push(row.iter().map(|c| c.norm_sqr()).sum());
            // first-order propagation of the component errors
            let var: f64 = row
                .iter()
                .zip(&err)
                .map(|(c, (er, ei))| (2.0 * c.re * er).powi(2) + (2.0 * c.im * ei).powi(2))
                .sum();
            sumsq_stderr.push(var.sqrt());
            value_stderr.push(err.iter().map(|(a, b)| a.hypot(*b)).collect());
            values.push(row);
        }
        Self {
            length: l,
            source: cfg.source,
            mu: cfg.mu,
            density: density_for_mu(cfg.mu),
            method,
            values,
            value_stderr,
            sumsq,
            sumsq_stderr,
            samples,
        }
    }

    /// `Σ_x |C(x, t)|² / Σ_x |C(x, 0)|²`.
    pub fn normalized_sumsq(&self) -> Vec<f64> {
        let s0 = self.sumsq[0];
        self.sumsq.iter().map(|v| v / s0).collect()
    }
}

/// `σ⁻_s ρ_μ` as a sector operator.
fn lowered_gibbs(cfg: &FloquetConfig) -> Result<SectorOperator> {
    let l = cfg.length;
    let mut s = SectorOperator::zeros(l, -1)?;
    let bit = 1u32 << cfg.source;
    let logz = l as f64 * (2.0 * cfg.mu.cosh()).ln();
    for a in 0..(1u32 << l) {
        if a & bit != 0 {
            let m = 2.0 * a.count_ones() as f64 - l as f64;
            s.set(a ^ bit, a, C::new((cfg.mu * m - logz).exp(), 0.0))?;
        }
    }
    Ok(s)
}

fn record_charged(s: &SectorOperator) -> Vec<C> {
    (0..s.length).map(|x| s.trace_raising(x)).collect()
}

/// Evolves `σ⁻_s ρ_μ` as `U^t (·) U^{†t}` and reads `C(x, t) = Tr(σ⁺_x ·)`.
/// With `ρ_μ` conserved by `U`, this is `Tr(ρ_μ σ⁺_x(t) σ⁻_s)`.
pub fn charged_correlator(cfg: &FloquetConfig) -> Result<CorrelatorResult> {
    evolve_dense(cfg, 0.0, CorrelatorMethod::DenseOperator)
}

fn evolve_dense(cfg: &FloquetConfig, gamma_z: f64, method: CorrelatorMethod) -> Result<CorrelatorResult> {
    let geometry = cfg.geometry()?;
    let gates = period_gates(&geometry, &cfg.params);
    let mut s = lowered_gibbs(cfg)?;
    let mut values = vec![record_charged(&s)];
    for _ in 0..cfg.t_max {
        for (g, x, y) in &gates {
            s.conjugate(g, *x, *y);
        }
        s.dephase(gamma_z);
        values.push(record_charged(&s));
    }
    Ok(CorrelatorResult::exact(cfg, method, values))
}

fn gaussian_state<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<C> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    (0..dim)
        .map(|_| C::new(rng.sample::<f64, _>(StandardNormal) * h, rng.sample::<f64, _>(StandardNormal) * h))
        .collect()
}

/// Random-state estimate of the same correlator: with `|φ⟩ = ρ_μ^{1/2} |r⟩`,
/// `E⟨U^t φ| σ⁺_x |U^t σ⁻_s φ⟩ = C(x, t)` for Gaussian `|r⟩`.
pub fn charged_correlator_typicality(cfg: &FloquetConfig, samples: u64, seed: u64) -> Result<CorrelatorResult> {
    stochastic_correlator(cfg, samples, seed, 0.0, CorrelatorMethod::Typicality)
}

fn stochastic_correlator(
    cfg: &FloquetConfig,
    samples: u64,
    seed: u64,
    gamma_z: f64,
    method: CorrelatorMethod,
) -> Result<CorrelatorResult> {
    let geometry = cfg.geometry()?;
    let l = cfg.length;
    if l > STATE_MAX_SITES {
        return Err(Error::Capacity(format!("statevector backends hold at most {STATE_MAX_SITES} sites")));
    }
    if samples < 2 {
        return argument("stochastic estimates need at least two samples");
    }
    let gates = period_gates(&geometry, &cfg.params);
    let dim = 1usize << l;
    let bit = 1usize << cfg.source;
    // ρ^{1/2} diagonal, normalised by the exact partition function
    let half_logz = 0.5 * l as f64 * (2.0 * cfg.mu.cosh()).ln();
    let sqrt_rho: Vec<f64> = (0..dim)
        .map(|a| (0.5 * cfg.mu * (2.0 * (a as u32).count_ones() as f64 - l as f64) - half_logz).exp())
        .collect();
    let flip = 0.5 * (1.0 - (-2.0 * gamma_z).exp());
    let tag = if gamma_z > 0.0 { Tag::Noise } else { Tag::Floquet };
    let width = 2 * l * (cfg.t_max + 1);
    let m = average(samples, width, |i| {
        let mut rng = stream(seed, tag, i);
        let r = gaussian_state(&mut rng, dim);
        let mut a: Vec<C> = r.iter().zip(&sqrt_rho).map(|(v, w)| v * w).collect();
        let mut b = vec![ZERO; dim];
        for k in 0..dim {
            if k & bit != 0 {
                b[k ^ bit] = a[k];
            }
        }
        let mut out = Vec::with_capacity(width);
        let record = |a: &[C], b: &[C], out: &mut Vec<f64>| {
            for x in 0..l {
                let xb = 1usize << x;
                // ⟨a|σ⁺_x|b⟩ = Σ_{k: x down} conj(a[k|x]) b[k]
                let v: C = (0..dim).filter(|k| k & xb == 0).map(|k| a[k | xb].conj() * b[k]).sum();
                out.push(v.re);
                out.push(v.im);
            }
        };
        record(&a, &b, &mut out);
        for _ in 0..cfg.t_max {
            for (g, x, y) in &gates {
                apply_to_vector(&mut a, g, *x, *y);
                apply_to_vector(&mut b, g, *x, *y);
            }
            if flip > 0.0 {
                for site in 0..l {
                    if rng.random::<f64>() < flip {
                        let sb = 1usize << site;
                        for k in (0..dim).filter(|k| k & sb == 0) {
                            a[k] = -a[k];
                            b[k] = -b[k];
                        }
                    }
                }
            }
            record(&a, &b, &mut out);
        }
        out
    });
    Ok(CorrelatorResult::sampled(cfg, method, &m.mean(), &m.stderr(), samples))
}

/// Infinite-temperature `⟨σᶻ_x(t) σᶻ_s⟩_c` and its spatial moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureFactorZz {
    pub length: usize,
    pub source: usize,
    /// `[t][x]`.
    pub corr: Vec<Vec<f64>>,
    /// `Σ_x d(x)² corr(x, t)` with `d` the signed displacement from the source.
    pub variance: Vec<f64>,
    /// `Σ_x corr(x, t)`, conserved.
    pub total: Vec<f64>,
}

impl StructureFactorZz {
    /// Diffusion constant from the variance slope over periods `[t0, t1]`: `D = slope / 2`.
    pub fn diffusion(&self, t0: usize, t1: usize) -> Result<(f64, LinearFit)> {
        if t1 >= self.variance.len() || t1 < t0 + 2 {
            return argument(format!("variance window [{t0}, {t1}] needs three points within the run"));
        }
        let x: Vec<f64> = (t0..=t1).map(|t| t as f64).collect();
        let fit = linear_fit(&x, &self.variance[t0..=t1])?;
        Ok((fit.slope / 2.0, fit))
    }
}

pub fn structure_factor_zz(cfg: &FloquetConfig) -> Result<StructureFactorZz> {
    let geometry = cfg.geometry()?;
    let gates = period_gates(&geometry, &cfg.params);
    let l = cfg.length;
    let mut s = SectorOperator::zeros(l, 0)?;
    let bit = 1u32 << cfg.source;
    let w = 1.0 / (1u64 << l) as f64;
    for a in 0..(1u32 << l) {
        s.set(a, a, C::new(if a & bit != 0 { w } else { -w }, 0.0))?;
    }
    let record = |s: &SectorOperator| (0..l).map(|x| s.trace_z(x).re).collect::<Vec<f64>>();
    let mut corr = vec![record(&s)];
    for _ in 0..cfg.t_max {
        for (g, x, y) in &gates {
            s.conjugate(g, *x, *y);
        }
        corr.push(record(&s));
    }
    let variance = corr
        .iter()
        .map(|row| row.iter().enumerate().map(|(x, c)| (cfg.displacement(x) as f64).powi(2) * c).sum())
        .collect();
    let total = corr.iter().map(|row| row.iter().sum()).collect();
    Ok(StructureFactorZz {
        length: l,
        source: cfg.source,
        corr,
        variance,
        total,
    })
}

/// Dynamics under which the noisy correlator is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoisySource {
    Floquet(FloquetParams),
    /// Fresh block-Haar gates for every bond and period; `circuits` realisations.
    Haar { circuits: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseBackend {
    Superoperator,
    Trajectories { samples: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisyConfig {
    pub length: usize,
    pub boundary: Boundary,
    pub source: usize,
    pub t_max: usize,
    pub gamma_z: f64,
    pub dynamics: NoisySource,
    pub backend: NoiseBackend,
}

/// Infinite-temperature `C(x, t)` with one unit of σᶻ dephasing after every period.
///
/// The superoperator backend propagates the channel exactly. The trajectory
/// backend applies `Z_x` with probability `(1 − e^{−2γ})/2` per site and
/// period on random states. For Haar dynamics `sumsq` is the circuit average
/// `E Σ_x |C|²`, not `Σ_x |E C|²`; only the superoperator backend supports it.
pub fn noisy_correlator(cfg: &NoisyConfig) -> Result<CorrelatorResult> {
    if !(cfg.gamma_z >= 0.0) {
        return argument(format!("gamma_z must be non-negative, got {}", cfg.gamma_z));
    }
    match (cfg.dynamics, cfg.backend) {
        (NoisySource::Floquet(params), backend) => {
            let fc = FloquetConfig {
                length: cfg.length,
                params,
                boundary: cfg.boundary,
                t_max: cfg.t_max,
                mu: 0.0,
                source: cfg.source,
            };
            match backend {
                NoiseBackend::Superoperator => evolve_dense(&fc, cfg.gamma_z, CorrelatorMethod::Superoperator),
                NoiseBackend::Trajectories { samples, seed } => {
                    stochastic_correlator(&fc, samples, seed, cfg.gamma_z, CorrelatorMethod::Trajectories)
                }
            }
        }
        (NoisySource::Haar { circuits, seed }, NoiseBackend::Superoperator) => haar_noisy(cfg, circuits, seed),
        (NoisySource::Haar { .. }, NoiseBackend::Trajectories { .. }) => argument(
            "Haar second moments need the exact channel per circuit; use the superoperator backend",
        ),
    }
}

fn haar_noisy(cfg: &NoisyConfig, circuits: u64, seed: u64) -> Result<CorrelatorResult> {
    let geometry = Brickwork::new(cfg.length, cfg.boundary)?;
    if cfg.source >= cfg.length {
        return domain("source outside chain");
    }
    if circuits < 2 {
        return argument("need at least two circuits");
    }
    let l = cfg.length;
    let fc = FloquetConfig {
        length: l,
        params: FloquetParams::model(Model::Custom),
        boundary: cfg.boundary,
        t_max: cfg.t_max,
        mu: 0.0,
        source: cfg.source,
    };
    let bonds: Vec<(usize, usize)> = (0..2).flat_map(|p| geometry.bonds(p)).collect();
    let template = lowered_gibbs(&fc)?;
    // per row: 2L components of C, then L values of |C|²
    let width = 3 * l * (cfg.t_max + 1);
    let m = average(circuits, width, |i| {
        let mut rng = stream(seed, Tag::Noise, i);
        let mut s = template.clone();
        let mut out = Vec::with_capacity(width);
        let push = |s: &SectorOperator, out: &mut Vec<f64>| {
            let row = record_charged(s);
            for c in &row {
                out.push(c.re);
                out.push(c.im);
            }
            out.extend(row.iter().map(|c| c.norm_sqr()));
        };
        push(&s, &mut out);
        for _ in 0..cfg.t_max {
            for &(x, y) in &bonds {
                s.conjugate(&sample_u1_gate(&mut rng), x, y);
            }
            s.dephase(cfg.gamma_z);
            push(&s, &mut out);
        }
        out
    });
    let (mean, se) = (m.mean(), m.stderr());
    let rows = cfg.t_max + 1;
    let mut comp = Vec::with_capacity(2 * l * rows);
    let mut comp_se = Vec::with_capacity(2 * l * rows);
    let mut sumsq = Vec::with_capacity(rows);
    let mut sumsq_se = Vec::with_capacity(rows);
    for t in 0..rows {
        let off = 3 * l * t;
        comp.extend_from_slice(&mean[off..off + 2 * l]);
        comp_se.extend_from_slice(&se[off..off + 2 * l]);
        sumsq.push(mean[off + 2 * l..off + 3 * l].iter().sum());
        // per-x errors combined in quadrature; correlations across x are ignored
        sumsq_se.push(se[off + 2 * l..off + 3 * l].iter().map(|e| e * e).sum::<f64>().sqrt());
    }
    let mut r = CorrelatorResult::sampled(&fc, CorrelatorMethod::Superoperator, &comp, &comp_se, circuits);
    r.sumsq = sumsq;
    r.sumsq_stderr = sumsq_se;
    Ok(r)
}

/// Normalised decay at low magnon density and its fitted rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowDensityDecay {
    pub density: f64,
    pub mu: f64,
    pub times: Vec<f64>,
    /// `Σ_x |C_n(x, t)|² / Σ_x |C_n(x, 0)|²`.
    pub normalized: Vec<f64>,
    /// `−d ln(normalized)/dt` from a line through all points.
    pub rate: f64,
    pub fit: LinearFit,
}

/// Runs the dense correlator at density `n` for `t ≤ horizon / n` periods.
pub fn low_density_decay(length: usize, params: FloquetParams, n: f64, horizon: f64) -> Result<LowDensityDecay> {
    let mu = mu_for_density(n)?;
    let t_max = (horizon / n).floor() as usize;
    if t_max < 2 {
        return argument(format!("horizon {horizon} at density {n} leaves fewer than three periods"));
    }
    let mut cfg = FloquetConfig::new(length, params, t_max);
    cfg.mu = mu;
    let r = charged_correlator(&cfg)?;
    let normalized = r.normalized_sumsq();
    let times: Vec<f64> = (0..=t_max).map(|t| t as f64).collect();
    let logs: Vec<f64> = normalized.iter().map(|v| v.ln()).collect();
    let fit = linear_fit(&times, &logs)?;
    Ok(LowDensityDecay {
        density: n,
        mu,
        times,
        normalized,
        rate: -fit.slope,
        fit,
    })
}
