//! Two-replica transfer matrix for Haar U(1) brickwork circuits.
//!
//! Each site carries six two-replica states. `T` is the Haar average of the
//! replicated two-site gate, a real symmetric projector on the 36-dim pair
//! space. States are stored in a rotated local basis where the identity
//! `(𝟙,𝟙)` is a single basis vector, which keeps the infinite-temperature
//! background sparse.
//!
//! Conventions: `C_U(x, t) = 2^{−L} Tr(σ⁻_x U σ⁺_s U†)` with `U = (U_o U_e)^t`,
//! even bonds first; `Z(x, t) = E_U |C_U(x, t)|²`; `Z(s, 0) = 1/4`.

use std::collections::HashMap;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::average;
use crate::error::{argument, domain, Error, Result};
use crate::gates::{conjugate_operator, sample_u1_gate};
use crate::rng::{stream, Tag};
use crate::Boundary;

pub const LOCAL_DIM: usize = 6;
const PAIR_DIM: usize = LOCAL_DIM * LOCAL_DIM;
/// Largest chain held as a dense coefficient array (6⁹ ≈ 10⁷).
pub const DENSE_MAX_SITES: usize = 9;
/// Entry budget of the sparse backend.
pub const SPARSE_MAX_ENTRIES: usize = 20_000_000;
/// Diffusivity of the bound (σ⁺,σ⁻) pair in a polarized background, per brickwork step.
pub const PAIR_WALK_DIFFUSIVITY: f64 = 1.0;

/// Single-site two-replica states, orthonormal under `Tr(A†C) Tr(B†D)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LocalBasis {
    UpUp = 0,
    UpDown = 1,
    DownUp = 2,
    DownDown = 3,
    PlusMinus = 4,
    MinusPlus = 5,
}

impl LocalBasis {
    pub const ALL: [LocalBasis; 6] = [
        LocalBasis::UpUp,
        LocalBasis::UpDown,
        LocalBasis::DownUp,
        LocalBasis::DownDown,
        LocalBasis::PlusMinus,
        LocalBasis::MinusPlus,
    ];

    pub fn label(self) -> &'static str {
        match self {
            LocalBasis::UpUp => "(P↑,P↑)",
            LocalBasis::UpDown => "(P↑,P↓)",
            LocalBasis::DownUp => "(P↓,P↑)",
            LocalBasis::DownDown => "(P↓,P↓)",
            LocalBasis::PlusMinus => "(σ⁺,σ⁻)",
            LocalBasis::MinusPlus => "(σ⁻,σ⁺)",
        }
    }

    pub fn unit(self) -> [f64; 6] {
        let mut v = [0.0; 6];
        v[self as usize] = 1.0;
        v
    }

    /// Number of charged replicas carried by the state.
    pub fn is_charged(self) -> bool {
        matches!(self, LocalBasis::PlusMinus | LocalBasis::MinusPlus)
    }
}

/// `(𝟙,𝟙)` in the standard local basis.
pub const IDENTITY_PAIR: [f64; 6] = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0];

/// Rows are the rotated basis vectors: `(𝟙,𝟙)/2, (𝟙,Z)/2, (Z,𝟙)/2, (Z,Z)/2`,
/// then the two charged states.
const ROTATION: [[f64; 6]; 6] = [
    [0.5, 0.5, 0.5, 0.5, 0.0, 0.0],
    [0.5, -0.5, 0.5, -0.5, 0.0, 0.0],
    [0.5, 0.5, -0.5, -0.5, 0.0, 0.0],
    [0.5, -0.5, -0.5, 0.5, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
];

fn rotate(v: &[f64; 6]) -> [f64; 6] {
    std::array::from_fn(|i| (0..6).map(|j| ROTATION[i][j] * v[j]).sum())
}

/// Two-site transfer matrix, row-major over `6·a + b` with `a` on the left site.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSiteTransfer {
    pub matrix: Vec<[f64; PAIR_DIM]>,
}

impl TwoSiteTransfer {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.matrix[row][col]
    }

    pub fn apply(&self, v: &[f64; PAIR_DIM]) -> [f64; PAIR_DIM] {
        std::array::from_fn(|r| (0..PAIR_DIM).map(|c| self.matrix[r][c] * v[c]).sum())
    }

    pub fn rank(&self) -> usize {
        // a symmetric projector's rank is its trace
        (0..PAIR_DIM).map(|i| self.matrix[i][i]).sum::<f64>().round() as usize
    }

    /// The same operator in the rotated local basis.
    pub fn rotated(&self) -> TwoSiteTransfer {
        let r2 = |i: usize, a: usize| ROTATION[i / 6][a / 6] * ROTATION[i % 6][a % 6];
        let mut out = vec![[0.0; PAIR_DIM]; PAIR_DIM];
        for (i, row) in out.iter_mut().enumerate() {
            for (k, cell) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for a in 0..PAIR_DIM {
                    let ra = r2(i, a);
                    if ra == 0.0 {
                        continue;
                    }
                    for c in 0..PAIR_DIM {
                        acc += ra * self.matrix[a][c] * r2(k, c);
                    }
                }
                *cell = acc;
            }
        }
        TwoSiteTransfer { matrix: out }
    }
}

fn pair(a: LocalBasis, b: LocalBasis) -> usize {
    6 * a as usize + b as usize
}

/// Haar average of the replicated two-site gate: the sixteen weighted terms
/// plus the two cross-block swap invariants `|(σ⁺,σ⁻)(σ⁺,σ⁻))` and
/// `|(σ⁻,σ⁺)(σ⁻,σ⁺))`, i.e. `|↑↑⟩⟨↓↓| ⊗ |↓↓⟩⟨↑↑|` and its mirror, which carry
/// opposite phases in the two replicas and so survive the average.
pub fn build_two_site_transfer() -> TwoSiteTransfer {
    assemble(true)
}

/// The sixteen-term matrix without the cross-block swap invariants. Rank 14;
/// it annihilates `(σ⁺,σ⁻)_x(σ⁺,σ⁻)_y` and differs from the exact average once
/// such pairs are reachable (three steps from a single insertion).
pub fn build_listed_transfer() -> TwoSiteTransfer {
    assemble(false)
}

fn assemble(complete: bool) -> TwoSiteTransfer {
    use LocalBasis::*;
    let vec_of = |parts: &[(LocalBasis, LocalBasis)]| {
        let mut v = [0.0; PAIR_DIM];
        for &(a, b) in parts {
            v[pair(a, b)] += 1.0;
        }
        v
    };
    let sym = |a, b| vec_of(&[(a, b), (b, a)]);
    let mut terms: Vec<(f64, [f64; PAIR_DIM], [f64; PAIR_DIM])> = Vec::new();
    for s in [UpUp, DownDown, UpDown, DownUp] {
        let v = vec_of(&[(s, s)]);
        terms.push((1.0, v, v));
    }
    // I⁺_{q,0}, I⁺_{0,q}: one replica in a charged sector, the other in the Q = 0 block
    for (a, b) in [(UpUp, UpDown), (DownUp, DownDown), (UpUp, DownUp), (DownDown, UpDown)] {
        let v = sym(a, b);
        terms.push((0.5, v, v));
    }
    // I⁻_{q,0}, I⁻_{0,q}: coherences between the charged and Q = 0 blocks
    for (a, b) in [(UpUp, MinusPlus), (DownDown, PlusMinus), (UpUp, PlusMinus), (DownDown, MinusPlus)] {
        let v = sym(a, b);
        terms.push((0.5, v, v));
    }
    let ip = vec_of(&[(UpUp, DownDown), (DownDown, UpUp), (UpDown, DownUp), (DownUp, UpDown)]);
    let im = vec_of(&[(UpUp, DownDown), (DownDown, UpUp), (PlusMinus, MinusPlus), (MinusPlus, PlusMinus)]);
    terms.push((1.0 / 3.0, ip, ip));
    terms.push((1.0 / 3.0, im, im));
    terms.push((-1.0 / 6.0, ip, im));
    terms.push((-1.0 / 6.0, im, ip));
    if complete {
        for s in [PlusMinus, MinusPlus] {
            let v = vec_of(&[(s, s)]);
            terms.push((1.0, v, v));
        }
    }
    let mut m = vec![[0.0; PAIR_DIM]; PAIR_DIM];
    for (w, ket, bra) in &terms {
        for r in 0..PAIR_DIM {
            if ket[r] == 0.0 {
                continue;
            }
            for c in 0..PAIR_DIM {
                m[r][c] += w * ket[r] * bra[c];
            }
        }
    }
    TwoSiteTransfer { matrix: m }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Dense,
    Sparse,
}

impl FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Backend::Dense),
            "sparse" => Ok(Backend::Sparse),
            other => Err(Error::Argument(format!(
                "unknown backend `{other}` (expected dense|sparse)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Coefficients {
    Dense(Vec<f64>),
    Sparse(HashMap<u64, f64>),
}

/// State over the `6^L` product basis, in the rotated local basis, times `prefactor`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaVector {
    pub length: usize,
    pub prefactor: f64,
    pub coefficients: Coefficients,
}

fn powers(length: usize) -> Vec<u64> {
    (0..=length).map(|i| 6u64.pow(i as u32)).collect()
}

fn digit(index: u64, site: usize, pow: &[u64]) -> usize {
    ((index / pow[site]) % 6) as usize
}

fn check_length(length: usize, backend: Backend) -> Result<()> {
    if length < 2 {
        return argument(format!("chain needs at least 2 sites, got {length}"));
    }
    if length > 24 {
        return Err(Error::Capacity(format!("6^{length} exceeds the 64-bit index range")));
    }
    if backend == Backend::Dense && length > DENSE_MAX_SITES {
        return Err(Error::Capacity(format!(
            "dense backend holds at most {DENSE_MAX_SITES} sites (6^{length} coefficients requested); use the sparse backend"
        )));
    }
    Ok(())
}

impl ReplicaVector {
    /// Product state with the given standard-basis factor on each site.
    pub fn product(factors: &[[f64; 6]], prefactor: f64, backend: Backend) -> Result<Self> {
        let length = factors.len();
        check_length(length, backend)?;
        let rot: Vec<[f64; 6]> = factors.iter().map(rotate).collect();
        let pow = powers(length);
        let coefficients = match backend {
            Backend::Dense => Coefficients::Dense(
                (0..pow[length])
                    .into_par_iter()
                    .map(|idx| {
                        let mut v = 1.0;
                        for (s, f) in rot.iter().enumerate() {
                            v *= f[digit(idx, s, &pow)];
                            if v == 0.0 {
                                break;
                            }
                        }
                        v
                    })
                    .collect(),
            ),
            Backend::Sparse => {
                let mut map: HashMap<u64, f64> = HashMap::from([(0, 1.0)]);
                for (s, f) in rot.iter().enumerate() {
                    let mut next = HashMap::with_capacity(map.len() * 2);
                    for (&idx, &v) in &map {
                        for (d, &w) in f.iter().enumerate() {
                            if w != 0.0 {
                                next.insert(idx + d as u64 * pow[s], v * w);
                            }
                        }
                    }
                    if next.len() > SPARSE_MAX_ENTRIES {
                        return Err(Error::Capacity("product state exceeds the sparse entry budget".into()));
                    }
                    map = next;
                }
                Coefficients::Sparse(map)
            }
        };
        Ok(Self {
            length,
            prefactor,
            coefficients,
        })
    }

    /// `|σ⁺_s, σ⁻_s) ⊗ (𝟙,𝟙)^{rest} / 𝒵` with `𝒵 = 2^L`.
    pub fn insertion(length: usize, site: usize, backend: Backend) -> Result<Self> {
        check_length(length, backend)?;
        if site >= length {
            return domain(format!("site {site} outside chain of {length}"));
        }
        let idx = 4 * 6u64.pow(site as u32);
        // (𝟙,𝟙) = 2·(rotated state 0), so the coefficient is 2^{L−1} / 2^L
        let coefficients = match backend {
            Backend::Dense => {
                let mut v = vec![0.0; 6usize.pow(length as u32)];
                v[idx as usize] = 1.0;
                Coefficients::Dense(v)
            }
            Backend::Sparse => Coefficients::Sparse(HashMap::from([(idx, 1.0)])),
        };
        Ok(Self {
            length,
            prefactor: 0.5,
            coefficients,
        })
    }

    pub fn backend(&self) -> Backend {
        match self.coefficients {
            Coefficients::Dense(_) => Backend::Dense,
            Coefficients::Sparse(_) => Backend::Sparse,
        }
    }

    pub fn nonzeros(&self) -> usize {
        match &self.coefficients {
            Coefficients::Dense(v) => v.iter().filter(|x| **x != 0.0).count(),
            Coefficients::Sparse(m) => m.len(),
        }
    }

    /// Coefficient (times the prefactor) of a rotated-basis product state.
    pub fn component(&self, digits: &[usize]) -> f64 {
        let pow = powers(self.length);
        let idx: u64 = digits.iter().enumerate().map(|(s, &d)| d as u64 * pow[s]).sum();
        self.prefactor
            * match &self.coefficients {
                Coefficients::Dense(v) => v[idx as usize],
                Coefficients::Sparse(m) => m.get(&idx).copied().unwrap_or(0.0),
            }
    }

    /// `(𝟙,𝟙)`-background insertion overlap, `𝒵⁻¹(σ⁺_x, σ⁻_x | self)`.
    pub fn insertion_overlap(&self, x: usize) -> f64 {
        let mut digits = vec![0; self.length];
        digits[x] = 4;
        0.5 * self.component(&digits)
    }

    /// Overlap with a product bra given by standard-basis factors.
    pub fn overlap_product(&self, factors: &[[f64; 6]]) -> f64 {
        let rot: Vec<[f64; 6]> = factors.iter().map(rotate).collect();
        let pow = powers(self.length);
        let weight = |idx: u64, v: f64| {
            let mut w = v;
            for (s, f) in rot.iter().enumerate() {
                w *= f[digit(idx, s, &pow)];
                if w == 0.0 {
                    break;
                }
            }
            w
        };
        let total: f64 = match &self.coefficients {
            Coefficients::Dense(v) => v
                .par_iter()
                .enumerate()
                .filter(|(_, x)| **x != 0.0)
                .map(|(i, &x)| weight(i as u64, x))
                .sum(),
            Coefficients::Sparse(m) => {
                let mut entries: Vec<(u64, f64)> = m.iter().map(|(&k, &v)| (k, v)).collect();
                entries.sort_unstable_by_key(|e| e.0);
                entries.iter().map(|&(k, v)| weight(k, v)).sum()
            }
        };
        self.prefactor * total
    }

    pub fn norm_sqr(&self) -> f64 {
        let s: f64 = match &self.coefficients {
            Coefficients::Dense(v) => v.iter().map(|x| x * x).sum(),
            Coefficients::Sparse(m) => {
                let mut xs: Vec<(u64, f64)> = m.iter().map(|(&k, &v)| (k, v)).collect();
                xs.sort_unstable_by_key(|e| e.0);
                xs.iter().map(|e| e.1 * e.1).sum()
            }
        };
        self.prefactor * self.prefactor * s
    }
}

/// Bonds of the two brickwork layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Brickwork {
    pub length: usize,
    pub boundary: Boundary,
}

impl Brickwork {
    pub fn new(length: usize, boundary: Boundary) -> Result<Self> {
        if length < 2 {
            return argument(format!("chain needs at least 2 sites, got {length}"));
        }
        if boundary == Boundary::Periodic && length % 2 == 1 {
            return Err(Error::Config(format!(
                "periodic brickwork needs an even chain, got L = {length}"
            )));
        }
        Ok(Self { length, boundary })
    }

    /// Layer `parity` 0 pairs `(2j, 2j+1)`, parity 1 pairs `(2j+1, 2j+2)`.
    pub fn bonds(&self, parity: usize) -> Vec<(usize, usize)> {
        let l = self.length;
        let mut b: Vec<(usize, usize)> = (parity..l.saturating_sub(1)).step_by(2).map(|i| (i, i + 1)).collect();
        if parity == 1 && self.boundary == Boundary::Periodic {
            b.push((l - 1, 0));
        }
        b
    }
}

/// Rotated transfer matrix in row and column sparse form.
#[derive(Debug, Clone)]
pub struct TransferKernel {
    rows: Vec<Vec<(usize, f64)>>,
    cols: Vec<Vec<(usize, f64)>>,
}

impl TransferKernel {
    pub fn new(t: &TwoSiteTransfer) -> Self {
        let rot = t.rotated();
        let mut rows = vec![Vec::new(); PAIR_DIM];
        let mut cols = vec![Vec::new(); PAIR_DIM];
        for r in 0..PAIR_DIM {
            for c in 0..PAIR_DIM {
                let v = rot.matrix[r][c];
                if v.abs() > 1e-14 {
                    rows[r].push((c, v));
                    cols[c].push((r, v));
                }
            }
        }
        Self { rows, cols }
    }

    pub fn standard() -> Self {
        Self::new(&build_two_site_transfer())
    }
}

fn apply_bond(state: &mut ReplicaVector, kernel: &TransferKernel, (x, y): (usize, usize)) -> Result<()> {
    let pow = powers(state.length);
    match &mut state.coefficients {
        Coefficients::Dense(v) => {
            let src = std::mem::take(v);
            let out: Vec<f64> = (0..src.len())
                .into_par_iter()
                .map(|idx| {
                    let (i64_, a, b) = (idx as u64, digit(idx as u64, x, &pow), digit(idx as u64, y, &pow));
                    let base = i64_ - a as u64 * pow[x] - b as u64 * pow[y];
                    kernel.rows[6 * a + b]
                        .iter()
                        .map(|&(c, w)| w * src[(base + (c / 6) as u64 * pow[x] + (c % 6) as u64 * pow[y]) as usize])
                        .sum()
                })
                .collect();
            *v = out;
        }
        Coefficients::Sparse(m) => {
            let mut entries: Vec<(u64, f64)> = m.drain().collect();
            entries.sort_unstable_by_key(|e| e.0);
            let mut next: HashMap<u64, f64> = HashMap::with_capacity(entries.len() * 2);
            for (idx, val) in entries {
                let (a, b) = (digit(idx, x, &pow), digit(idx, y, &pow));
                let base = idx - a as u64 * pow[x] - b as u64 * pow[y];
                for &(r, w) in &kernel.cols[6 * a + b] {
                    *next.entry(base + (r / 6) as u64 * pow[x] + (r % 6) as u64 * pow[y]).or_insert(0.0) += w * val;
                }
            }
            next.retain(|_, v| *v != 0.0);
            if next.len() > SPARSE_MAX_ENTRIES {
                return Err(Error::Capacity(format!(
                    "sparse state grew past {SPARSE_MAX_ENTRIES} entries"
                )));
            }
            *m = next;
        }
    }
    Ok(())
}

/// Applies one brickwork layer (`parity` 0 = even bonds).
pub fn apply_layer(state: &mut ReplicaVector, geometry: &Brickwork, kernel: &TransferKernel, parity: usize) -> Result<()> {
    if geometry.length != state.length {
        return argument("state and geometry lengths differ");
    }
    for bond in geometry.bonds(parity) {
        apply_bond(state, kernel, bond)?;
    }
    Ok(())
}

/// `state ← (T_o T_e)^steps state`.
pub fn apply_brickwork(state: &mut ReplicaVector, geometry: &Brickwork, kernel: &TransferKernel, steps: usize) -> Result<()> {
    for _ in 0..steps {
        apply_layer(state, geometry, kernel, 0)?;
        apply_layer(state, geometry, kernel, 1)?;
    }
    Ok(())
}

/// Damps each coefficient by `e^{−4 γ_z m}`, `m` the number of charged sites.
pub fn dephasing_layer(state: &mut ReplicaVector, gamma_z: f64) -> Result<()> {
    if !(gamma_z >= 0.0) {
        return argument(format!("gamma_z must be non-negative, got {gamma_z}"));
    }
    if gamma_z == 0.0 {
        return Ok(());
    }
    let pow = powers(state.length);
    let length = state.length;
    let factor: Vec<f64> = (0..=length).map(|m| (-4.0 * gamma_z * m as f64).exp()).collect();
    let charged = |idx: u64| (0..length).filter(|&s| digit(idx, s, &pow) >= 4).count();
    match &mut state.coefficients {
        Coefficients::Dense(v) => v
            .par_iter_mut()
            .enumerate()
            .filter(|(_, x)| **x != 0.0)
            .for_each(|(i, x)| *x *= factor[charged(i as u64)]),
        Coefficients::Sparse(m) => m.iter_mut().for_each(|(&k, x)| *x *= factor[charged(k)]),
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaConfig {
    pub length: usize,
    pub boundary: Boundary,
    pub gamma_z: f64,
    pub backend: Backend,
    /// Site of the σ⁺ insertion.
    pub source: usize,
}

impl ReplicaConfig {
    pub fn new(length: usize) -> Self {
        Self {
            length,
            boundary: Boundary::Open,
            gamma_z: 0.0,
            backend: Backend::Dense,
            source: length / 2,
        }
    }

    pub fn geometry(&self) -> Result<Brickwork> {
        Brickwork::new(self.length, self.boundary)
    }
}

/// `Z(x, t)` for `t = 0..=t_max` and every site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub source: usize,
    pub z: Vec<Vec<f64>>,
}

impl MomentTable {
    pub fn zsum(&self) -> Vec<f64> {
        self.z.iter().map(|row| row.iter().sum()).collect()
    }
}

/// Evolves the insertion and records `Z(x, t)`; dephasing follows each step.
pub fn second_moment_table(cfg: &ReplicaConfig, t_max: usize) -> Result<MomentTable> {
    let geometry = cfg.geometry()?;
    let kernel = TransferKernel::standard();
    let mut state = ReplicaVector::insertion(cfg.length, cfg.source, cfg.backend)?;
    let record = |s: &ReplicaVector| (0..cfg.length).map(|x| s.insertion_overlap(x)).collect::<Vec<f64>>();
    let mut z = vec![record(&state)];
    for _ in 0..t_max {
        apply_brickwork(&mut state, &geometry, &kernel, 1)?;
        dephasing_layer(&mut state, cfg.gamma_z)?;
        z.push(record(&state));
    }
    Ok(MomentTable { source: cfg.source, z })
}

pub fn second_moment(cfg: &ReplicaConfig, x: usize, t: usize) -> Result<f64> {
    if x >= cfg.length {
        return domain(format!("site {x} outside chain of {}", cfg.length));
    }
    Ok(second_moment_table(cfg, t)?.z[t][x])
}

/// Normalised void vector `v_y`: `(σ⁺,σ⁻)` at `y`, `(P↓,P↓)` within radius `r`,
/// `(𝟙,𝟙)/2` elsewhere. Open chains clip the void at the edges.
pub fn void_vector(length: usize, boundary: Boundary, y: usize, radius: usize) -> Vec<[f64; 6]> {
    let mut f = vec![[0.5, 0.5, 0.5, 0.5, 0.0, 0.0]; length];
    for d in 1..=radius as i64 {
        for s in [y as i64 - d, y as i64 + d] {
            let site = match boundary {
                Boundary::Periodic => s.rem_euclid(length as i64),
                Boundary::Open if (0..length as i64).contains(&s) => s,
                Boundary::Open => continue,
            };
            f[site as usize] = LocalBasis::DownDown.unit();
        }
    }
    f[y] = LocalBasis::PlusMinus.unit();
    f
}

/// Terms of the void decomposition after `layers` brickwork layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoidDecomposition {
    pub layers: usize,
    pub radius: usize,
    /// `𝒵⁻² ‖Q e_s‖²` for the layer product `Q`, the palindromic second moment.
    pub total: f64,
    /// `|B_y|² = |(v_y | Q e_s)|² / 𝒵²` per void centre.
    pub terms: Vec<f64>,
}

impl VoidDecomposition {
    pub fn partial_sum(&self) -> f64 {
        self.terms.iter().sum()
    }
}

pub fn void_decomposition(cfg: &ReplicaConfig, layers: usize, radius: usize) -> Result<VoidDecomposition> {
    let geometry = cfg.geometry()?;
    let kernel = TransferKernel::standard();
    let mut state = ReplicaVector::insertion(cfg.length, cfg.source, cfg.backend)?;
    for l in 0..layers {
        apply_layer(&mut state, &geometry, &kernel, l % 2)?;
    }
    let terms = (0..cfg.length)
        .map(|y| state.overlap_product(&void_vector(cfg.length, cfg.boundary, y, radius)).powi(2))
        .collect();
    Ok(VoidDecomposition {
        layers,
        radius,
        total: state.norm_sqr(),
        terms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoidBound {
    pub bound: f64,
    /// Void size `c·t^α`.
    pub ell_r: f64,
    /// `2^{−ℓ_R}`.
    pub void_probability: f64,
    /// `e^{−D k² t}`.
    pub walk_factor: f64,
    pub c: f64,
}

/// `2^{−c t^α} e^{−D k² t}`.
pub fn void_bound(t: f64, alpha: f64, c: f64, diffusivity: f64, k: f64) -> Result<VoidBound> {
    if !(alpha > 0.5) {
        return argument(format!("void bound needs alpha > 1/2, got {alpha}"));
    }
    if !(t >= 0.0) || !(c > 0.0) || !(diffusivity >= 0.0) {
        return argument("need t >= 0, c > 0 and D >= 0");
    }
    let ell_r = c * t.powf(alpha);
    let void_probability = (-ell_r * std::f64::consts::LN_2).exp();
    let walk_factor = (-diffusivity * k * k * t).exp();
    Ok(VoidBound {
        bound: void_probability * walk_factor,
        ell_r,
        void_probability,
        walk_factor,
        c,
    })
}

/// Configuration of the explicit circuit-sampling estimate of `Z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub length: usize,
    pub boundary: Boundary,
    pub t_max: usize,
    pub circuits: u64,
    pub seed: u64,
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTable {
    pub mean: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub circuits: u64,
}

pub const ORACLE_MAX_SITES: usize = 12;

/// Samples brickwork circuits, evolves `σ⁺_s` as `U σ⁺_s U†` and averages
/// `|2^{−L} Tr(σ⁻_x ·)|²` per site and step.
pub fn haar_oracle(cfg: &OracleConfig) -> Result<OracleTable> {
    let geometry = Brickwork::new(cfg.length, cfg.boundary)?;
    if cfg.length > ORACLE_MAX_SITES {
        return Err(Error::Capacity(format!(
            "operator evolution is limited to {ORACLE_MAX_SITES} sites"
        )));
    }
    if cfg.source >= cfg.length {
        return domain("source outside chain");
    }
    let l = cfg.length;
    let dim = 1usize << l;
    let bonds = [geometry.bonds(0), geometry.bonds(1)];
    let width = (cfg.t_max + 1) * l;
    let m = average(cfg.circuits, width, |i| {
        let mut rng = stream(cfg.seed, Tag::Replica, i);
        let mut s = vec![Complex64::new(0.0, 0.0); dim * dim];
        let src = 1usize << cfg.source;
        for a in (0..dim).filter(|a| a & src == 0) {
            s[(a | src) * dim + a] = Complex64::new(1.0, 0.0);
        }
        let mut out = Vec::with_capacity(width);
        let norm = 1.0 / dim as f64;
        let record = |s: &[Complex64], out: &mut Vec<f64>| {
            for x in 0..l {
                let bit = 1usize << x;
                // Tr(σ⁻_x S) = Σ_{a: x down} S[a|x, a]
                let tr: Complex64 = (0..dim).filter(|a| a & bit == 0).map(|a| s[(a | bit) * dim + a]).sum();
                out.push((tr * norm).norm_sqr());
            }
        };
        record(&s, &mut out);
        for _ in 0..cfg.t_max {
            for layer in &bonds {
                for &(x, y) in layer {
                    let g = sample_u1_gate(&mut rng);
                    conjugate_operator(&mut s, dim, &g, x, y);
                }
            }
            record(&s, &mut out);
        }
        out
    });
    let mean = m.mean();
    let se = m.stderr();
    Ok(OracleTable {
        mean: mean.chunks(l).map(|c| c.to_vec()).collect(),
        stderr: se.chunks(l).map(|c| c.to_vec()).collect(),
        circuits: cfg.circuits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs(m: &[[f64; PAIR_DIM]]) -> f64 {
        m.iter().flatten().fold(0.0, |a, b| a.max(b.abs()))
    }

    #[test]
    fn transfer_is_a_symmetric_projector() {
        let t = build_two_site_transfer();
        let mut diff = vec![[0.0; PAIR_DIM]; PAIR_DIM];
        for r in 0..PAIR_DIM {
            for c in 0..PAIR_DIM {
                let sq: f64 = (0..PAIR_DIM).map(|k| t.get(r, k) * t.get(k, c)).sum();
                diff[r][c] = sq - t.get(r, c);
                assert_eq!(t.get(r, c), t.get(c, r));
            }
        }
        assert!(max_abs(&diff) < 1e-12);
        assert_eq!(t.rank(), 16);
        assert_eq!(build_listed_transfer().rank(), 14);
    }

    #[test]
    fn transfer_fixes_identity_and_kills_imbalance() {
        let t = build_two_site_transfer();
        let mut id = [0.0; PAIR_DIM];
        for a in 0..6 {
            for b in 0..6 {
                id[6 * a + b] = IDENTITY_PAIR[a] * IDENTITY_PAIR[b];
            }
        }
        let out = t.apply(&id);
        assert!(out.iter().zip(&id).all(|(a, b)| (a - b).abs() < 1e-15));
        // (σ⁺,σ⁻)(σ⁺,σ⁻) picks up e^{i(φ↑↑−φ↓↓)} in one replica and the conjugate in the other
        let pm = LocalBasis::PlusMinus as usize;
        let mut v = [0.0; PAIR_DIM];
        v[6 * pm + pm] = 1.0;
        assert_eq!(t.apply(&v), v);
        assert!(build_listed_transfer().apply(&v).iter().all(|x| *x == 0.0));
        // charged replica content paired with an uncharged partner is not conserved
        let mut w = [0.0; PAIR_DIM];
        w[6 * pm + LocalBasis::UpDown as usize] = 1.0;
        assert!(t.apply(&w).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn rotated_transfer_is_the_same_operator() {
        let t = build_two_site_transfer();
        let r = t.rotated();
        let mut sq = 0.0;
        for i in 0..PAIR_DIM {
            for j in 0..PAIR_DIM {
                sq += r.get(i, j) * r.get(i, j) - t.get(i, j) * t.get(i, j);
            }
        }
        assert!(sq.abs() < 1e-12);
        // (𝟙,𝟙)⊗(𝟙,𝟙) is the single rotated state 0⊗0
        assert!((r.get(0, 0) - 1.0).abs() < 1e-15);
        assert!((1..PAIR_DIM).all(|i| r.get(i, 0).abs() < 1e-15));
    }

    #[test]
    fn brickwork_geometry() {
        let g = Brickwork::new(6, Boundary::Open).unwrap();
        assert_eq!(g.bonds(0), vec![(0, 1), (2, 3), (4, 5)]);
        assert_eq!(g.bonds(1), vec![(1, 2), (3, 4)]);
        let g = Brickwork::new(6, Boundary::Periodic).unwrap();
        assert_eq!(g.bonds(1), vec![(1, 2), (3, 4), (5, 0)]);
        assert!(matches!(Brickwork::new(5, Boundary::Periodic), Err(Error::Config(_))));
        assert_eq!(Brickwork::new(5, Boundary::Open).unwrap().bonds(0), vec![(0, 1), (2, 3)]);
    }

    #[test]
    fn identity_background_is_stationary() {
        let g = Brickwork::new(6, Boundary::Periodic).unwrap();
        let k = TransferKernel::standard();
        for backend in [Backend::Dense, Backend::Sparse] {
            let mut s = ReplicaVector::product(&vec![IDENTITY_PAIR; 6], 1.0, backend).unwrap();
            let before = s.clone();
            apply_brickwork(&mut s, &g, &k, 3).unwrap();
            assert_eq!(s.nonzeros(), 1);
            assert!((s.norm_sqr() - before.norm_sqr()).abs() < 1e-9 * before.norm_sqr());
        }
    }

    #[test]
    fn initial_moment_and_single_gate() {
        let mut cfg = ReplicaConfig::new(2);
        cfg.source = 0;
        let tab = second_moment_table(&cfg, 1).unwrap();
        assert!((tab.z[0][0] - 0.25).abs() < 1e-15 && tab.z[0][1] == 0.0);
        // C = (e^{−iφ₊}V₂₂ + V₁₁* e^{iφ₋})/4 and E|V_ii|² = 1/2 give 1/16; likewise off-diagonal
        assert!((tab.z[1][0] - 1.0 / 16.0).abs() < 1e-15);
        assert!((tab.z[1][1] - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn oracle_matches_single_gate_integral() {
        let o = haar_oracle(&OracleConfig {
            length: 2,
            boundary: Boundary::Open,
            t_max: 1,
            circuits: 20000,
            seed: 4,
            source: 0,
        })
        .unwrap();
        assert_eq!(o.stderr[0], vec![0.0, 0.0]);
        assert!((o.mean[0][0] - 0.25).abs() < 1e-15);
        for x in 0..2 {
            assert!((o.mean[1][x] - 1.0 / 16.0).abs() < 3.0 * o.stderr[1][x], "{o:?}");
        }
    }

    #[test]
    fn backends_agree() {
        for boundary in [Boundary::Open, Boundary::Periodic] {
            let mut cfg = ReplicaConfig::new(6);
            cfg.boundary = boundary;
            cfg.gamma_z = 0.2;
            let d = second_moment_table(&cfg, 4).unwrap();
            cfg.backend = Backend::Sparse;
            let s = second_moment_table(&cfg, 4).unwrap();
            for (a, b) in d.z.iter().flatten().zip(s.z.iter().flatten()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn moments_are_nonnegative() {
        let mut cfg = ReplicaConfig::new(8);
        cfg.backend = Backend::Sparse;
        let tab = second_moment_table(&cfg, 8).unwrap();
        for row in &tab.z {
            for &v in row {
                assert!(v >= -1e-15, "{v}");
            }
        }
    }

    // dedicated single-particle walk: each bond averages the two occupation weights
    fn walk_oracle(geometry: &Brickwork, start: usize, steps: usize) -> Vec<f64> {
        let mut p = vec![0.0; geometry.length];
        p[start] = 1.0;
        for _ in 0..steps {
            for parity in 0..2 {
                for (x, y) in geometry.bonds(parity) {
                    let m = 0.5 * (p[x] + p[y]);
                    p[x] = m;
                    p[y] = m;
                }
            }
        }
        p
    }

    #[test]
    fn pair_walks_in_a_polarized_background() {
        let l = 8;
        let g = Brickwork::new(l, Boundary::Periodic).unwrap();
        let k = TransferKernel::standard();
        for t in 0..=4 {
            let mut f = vec![LocalBasis::DownDown.unit(); l];
            f[3] = LocalBasis::PlusMinus.unit();
            let mut s = ReplicaVector::product(&f, 1.0, Backend::Dense).unwrap();
            apply_brickwork(&mut s, &g, &k, t).unwrap();
            let oracle = walk_oracle(&g, 3, t);
            let mut total = 0.0;
            for x in 0..l {
                let mut b = vec![LocalBasis::DownDown.unit(); l];
                b[x] = LocalBasis::PlusMinus.unit();
                let w = s.overlap_product(&b);
                assert!((w - oracle[x]).abs() < 1e-13, "t={t} x={x}");
                total += w;
            }
            assert!((total - 1.0).abs() < 1e-13);
            assert!((s.norm_sqr() - oracle.iter().map(|p| p * p).sum::<f64>()).abs() < 1e-13);
        }
    }

    #[test]
    fn pair_walk_diffusivity() {
        // variance slope on a long open chain, away from the edges
        let g = Brickwork::new(400, Boundary::Open).unwrap();
        let var = |t: usize| {
            let p = walk_oracle(&g, 200, t);
            let mean: f64 = p.iter().enumerate().map(|(x, w)| x as f64 * w).sum();
            p.iter().enumerate().map(|(x, w)| (x as f64 - mean).powi(2) * w).sum::<f64>()
        };
        let slope = (var(60) - var(20)) / 40.0;
        assert!((slope / 2.0 - PAIR_WALK_DIFFUSIVITY).abs() < 1e-9, "{slope}");
    }

    #[test]
    fn dephasing_closed_forms() {
        let mut s = ReplicaVector::insertion(4, 1, Backend::Dense).unwrap();
        let before = s.insertion_overlap(1);
        dephasing_layer(&mut s, 0.0).unwrap();
        assert_eq!(s.insertion_overlap(1), before);
        dephasing_layer(&mut s, 0.3).unwrap();
        assert!((s.insertion_overlap(1) / before - (-1.2f64).exp()).abs() < 1e-15);
        assert!(dephasing_layer(&mut s, -1.0).is_err());
    }

    #[test]
    fn dephased_total_is_non_increasing() {
        let mut cfg = ReplicaConfig::new(6);
        cfg.gamma_z = 0.3;
        let zs = second_moment_table(&cfg, 6).unwrap().zsum();
        for w in zs.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn void_terms_bound_the_palindromic_moment() {
        for boundary in [Boundary::Open, Boundary::Periodic] {
            for l in [4, 6] {
                let mut cfg = ReplicaConfig::new(l);
                cfg.boundary = boundary;
                for layers in 1..=6 {
                    for r in 0..=2 {
                        let d = void_decomposition(&cfg, layers, r).unwrap();
                        assert!(d.total + 1e-15 >= d.partial_sum(), "{d:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn void_vectors_are_orthonormal() {
        let l = 6;
        let vs: Vec<Vec<[f64; 6]>> = (0..l).map(|y| void_vector(l, Boundary::Periodic, y, 1)).collect();
        for (i, a) in vs.iter().enumerate() {
            for (j, b) in vs.iter().enumerate() {
                let ip: f64 = a
                    .iter()
                    .zip(b)
                    .map(|(u, v)| u.iter().zip(v).map(|(p, q)| p * q).sum::<f64>())
                    .product();
                assert!((ip - if i == j { 1.0 } else { 0.0 }).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn void_bound_form() {
        let b = void_bound(9.0, 0.75, 1.3, 0.5, 0.0).unwrap();
        assert!((b.bound - 2f64.powf(-1.3 * 9f64.powf(0.75))).abs() < 1e-15);
        let f = |t: f64| void_bound(t, 0.75, 1.3, 0.5, 0.0).unwrap().bound;
        let slope = ((-f(64.0).log2()).log2() - (-f(8.0).log2()).log2()) / 3.0;
        assert!((slope - 0.75).abs() < 1e-12);
        assert!((void_bound(4.0, 0.6, 1.0, 0.5, 0.3).unwrap().walk_factor - (-0.5f64 * 0.09 * 4.0).exp()).abs() < 1e-15);
        assert!(void_bound(4.0, 0.5, 1.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn capacity_and_domain_errors() {
        assert!(matches!(ReplicaVector::insertion(10, 0, Backend::Dense), Err(Error::Capacity(_))));
        assert!(matches!(second_moment(&ReplicaConfig::new(4), 4, 1), Err(Error::Domain(_))));
    }
}
