// Independent checks of the two-replica transfer matrix.
//
// The exact oracle works in the full 16-dim single-site replica space
// (two 2×2 operators per site), finds the Haar average of the replicated
// gate as the projector onto its invariant subspace, and builds dephasing by
// exponentiating the Lindblad generator.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use voidlab::gates::{sample_u1_gate, Gate};
use voidlab::replica::{
    haar_oracle, second_moment_table, Backend, OracleConfig, ReplicaConfig,
};
use voidlab::rng::{stream, Tag};
use voidlab::Boundary;

type C = Complex64;

// local replica index 4·(2 rA + cA) + (2 rB + cB); the pair index is 16·left + right
fn bits(local: usize) -> [usize; 4] {
    [(local >> 3) & 1, (local >> 2) & 1, (local >> 1) & 1, local & 1]
}

fn replicated_gate(u: &Gate) -> DMatrix<C> {
    let mut m = DMatrix::zeros(256, 256);
    for out in 0..256 {
        let (o1, o2) = (bits(out / 16), bits(out % 16));
        for inp in 0..256 {
            let (i1, i2) = (bits(inp / 16), bits(inp % 16));
            // row/column two-site indices 2·b_left + b_right for each replica factor
            let idx = |a: &[usize; 4], b: &[usize; 4], k: usize| 2 * a[k] + b[k];
            let mut v = C::new(1.0, 0.0);
            for k in 0..4 {
                let (r, c) = (idx(&o1, &o2, k), idx(&i1, &i2, k));
                // rows of each operator transform with U, columns with U*
                v *= if k % 2 == 0 { u[r][c] } else { u[r][c].conj() };
            }
            m[(out, inp)] = v;
        }
    }
    m
}

fn haar_projector() -> DMatrix<C> {
    let mut rng = stream(77, Tag::Replica, 0);
    let samples = 5;
    let mut stacked = DMatrix::zeros(256 * samples, 256);
    for s in 0..samples {
        let m = replicated_gate(&sample_u1_gate(&mut rng)) - DMatrix::identity(256, 256);
        stacked.view_mut((256 * s, 0), (256, 256)).copy_from(&m);
    }
    let svd = stacked.svd(false, true);
    let v_t = svd.v_t.unwrap();
    let null: Vec<usize> = (0..256).filter(|&i| svd.singular_values[i] < 1e-8).collect();
    assert_eq!(null.len(), 16, "commutant dimension");
    let mut p = DMatrix::zeros(256, 256);
    for &i in &null {
        let row = v_t.row(i).adjoint();
        p += &row * row.adjoint();
    }
    p
}

fn dephasing_site(gamma: f64) -> DMatrix<C> {
    // γ(Z·Z − 1) on each replica, diagonal in the operator-element basis
    let mut gen = DMatrix::zeros(16, 16);
    for l in 0..16 {
        let b = bits(l);
        let z = |x: usize| if x == 1 { 1.0 } else { -1.0 };
        let v = gamma * (z(b[0]) * z(b[1]) - 1.0) + gamma * (z(b[2]) * z(b[3]) - 1.0);
        gen[(l, l)] = C::new(v, 0.0);
    }
    gen.exp()
}

fn apply_pair(state: &DVector<C>, p: &DMatrix<C>, l: usize, x: usize, y: usize) -> DVector<C> {
    let pow = |s: usize| 16usize.pow((l - 1 - s) as u32);
    let mut out = DVector::zeros(state.len());
    for idx in 0..state.len() {
        let (a, b) = ((idx / pow(x)) % 16, (idx / pow(y)) % 16);
        let base = idx - a * pow(x) - b * pow(y);
        for r in 0..256 {
            let w = p[(r, 16 * a + b)];
            if w.norm() > 1e-14 {
                out[base + (r / 16) * pow(x) + (r % 16) * pow(y)] += w * state[idx];
            }
        }
    }
    out
}

fn apply_site(state: &mut DVector<C>, d: &DMatrix<C>, l: usize, x: usize) {
    let pow = 16usize.pow((l - 1 - x) as u32);
    for idx in 0..state.len() {
        let a = (idx / pow) % 16;
        state[idx] *= d[(a, a)];
    }
}

fn product(l: usize, factors: &[Vec<(usize, C)>]) -> DVector<C> {
    let mut v = DVector::zeros(16usize.pow(l as u32));
    let mut entries = vec![(0usize, C::new(1.0, 0.0))];
    for f in factors {
        entries = entries
            .iter()
            .flat_map(|&(i, a)| f.iter().map(move |&(j, b)| (16 * i + j, a * b)))
            .collect();
    }
    for (i, a) in entries {
        v[i] += a;
    }
    v
}

fn identity_pair() -> Vec<(usize, C)> {
    // (𝟙,𝟙) = Σ_{r,s} |r⟩⟨r| ⊗ |s⟩⟨s|
    let mut f = Vec::new();
    for r in 0..2 {
        for s in 0..2 {
            f.push((4 * (2 * r + r) + (2 * s + s), C::new(1.0, 0.0)));
        }
    }
    f
}

fn charged_pair() -> Vec<(usize, C)> {
    // (σ⁺, σ⁻): replica A |1⟩⟨0| → 2·1+0 = 2, replica B |0⟩⟨1| → 1
    vec![(4 * 2 + 1, C::new(1.0, 0.0))]
}

fn exact_table(l: usize, source: usize, gamma: f64, t_max: usize, boundary: Boundary) -> Vec<Vec<f64>> {
    let p = haar_projector();
    let d = dephasing_site(gamma);
    let zeta2 = 4f64.powi(l as i32);
    let site_factors = |x: usize| -> Vec<Vec<(usize, C)>> {
        (0..l).map(|s| if s == x { charged_pair() } else { identity_pair() }).collect()
    };
    let mut state = product(l, &site_factors(source));
    let bras: Vec<DVector<C>> = (0..l).map(|x| product(l, &site_factors(x))).collect();
    let record = |s: &DVector<C>| bras.iter().map(|b| b.dotc(s).re / zeta2).collect::<Vec<f64>>();
    let even: Vec<(usize, usize)> = (0..l - 1).step_by(2).map(|i| (i, i + 1)).collect();
    let mut odd: Vec<(usize, usize)> = (1..l - 1).step_by(2).map(|i| (i, i + 1)).collect();
    if boundary == Boundary::Periodic {
        odd.push((l - 1, 0));
    }
    let mut rows = vec![record(&state)];
    for _ in 0..t_max {
        for &(x, y) in even.iter().chain(&odd) {
            state = apply_pair(&state, &p, l, x, y);
        }
        for x in 0..l {
            apply_site(&mut state, &d, l, x);
        }
        rows.push(record(&state));
    }
    rows
}

#[test]
fn transfer_matrix_matches_exact_haar_average() {
    for boundary in [Boundary::Open, Boundary::Periodic] {
        let (l, t_max, gamma) = (4, 3, 0.4);
        let exact = exact_table(l, 1, gamma, t_max, boundary);
        let mut cfg = ReplicaConfig::new(l);
        cfg.source = 1;
        cfg.gamma_z = gamma;
        cfg.boundary = boundary;
        let tab = second_moment_table(&cfg, t_max).unwrap();
        for t in 0..=t_max {
            for x in 0..l {
                assert!(
                    (tab.z[t][x] - exact[t][x]).abs() < 1e-8,
                    "{boundary:?} t={t} x={x}: {} vs {}",
                    tab.z[t][x],
                    exact[t][x]
                );
            }
        }
    }
}

#[test]
fn transfer_matrix_matches_sampled_circuits() {
    let l = 6;
    let t_max = 4;
    let oracle = haar_oracle(&OracleConfig {
        length: l,
        boundary: Boundary::Open,
        t_max,
        circuits: 4000,
        seed: 11,
        source: 2,
    })
    .unwrap();
    let mut cfg = ReplicaConfig::new(l);
    cfg.source = 2;
    cfg.backend = Backend::Sparse;
    let tab = second_moment_table(&cfg, t_max).unwrap();
    for t in 1..=t_max {
        for x in 0..l {
            let (m, se) = (oracle.mean[t][x], oracle.stderr[t][x]);
            assert!(
                (tab.z[t][x] - m).abs() <= 4.5 * se + 1e-12,
                "t={t} x={x}: replica {} sampled {m} ± {se}",
                tab.z[t][x]
            );
        }
    }
}

#[test]
fn periodic_reflection_symmetry() {
    // reflection x → 1 − x maps even bonds onto even bonds
    let l = 8;
    let mut cfg = ReplicaConfig::new(l);
    cfg.boundary = Boundary::Periodic;
    cfg.source = 0;
    let a = second_moment_table(&cfg, 5).unwrap();
    cfg.source = 1;
    let b = second_moment_table(&cfg, 5).unwrap();
    for t in 0..=5 {
        for x in 0..l {
            let mirrored = (l + 1 - x) % l;
            assert!((a.z[t][x] - b.z[t][mirrored]).abs() < 1e-14, "t={t} x={x}");
        }
    }
}
