//! Two-qubit U(1)-symmetric gates and their action on operators.
//!
//! Qubit basis: bit 1 is spin up. A two-site pair `(x, y)` is indexed as
//! `2·b_x + b_y`, so `3 = ↑↑` (charge +1), `0 = ↓↓` (charge −1) and
//! `{1, 2}` is the single-excitation block.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type Gate = [[Complex64; 4]; 4];

pub fn identity() -> Gate {
    let mut g = [[Complex64::new(0.0, 0.0); 4]; 4];
    for (i, row) in g.iter_mut().enumerate() {
        row[i] = Complex64::new(1.0, 0.0);
    }
    g
}

pub fn dagger(g: &Gate) -> Gate {
    let mut h = [[Complex64::new(0.0, 0.0); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            h[i][j] = g[j][i].conj();
        }
    }
    h
}

pub fn matmul(a: &Gate, b: &Gate) -> Gate {
    let mut c = [[Complex64::new(0.0, 0.0); 4]; 4];
    for i in 0..4 {
        for k in 0..4 {
            for j in 0..4 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

/// Haar-random element of U(1) × U(2) × U(1): independent phases on `↑↑`
/// and `↓↓`, a Haar 2×2 unitary on the single-excitation block.
pub fn sample_u1_gate<R: Rng + ?Sized>(rng: &mut R) -> Gate {
    let mut g = [[Complex64::new(0.0, 0.0); 4]; 4];
    g[0][0] = Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI));
    g[3][3] = Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI));
    // SU(2) from a uniform point on S³, times a uniform phase
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let a = Complex64::new(q[0], q[1]) / norm;
    let b = Complex64::new(q[2], q[3]) / norm;
    let phase = Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI));
    g[1][1] = phase * a;
    g[1][2] = -phase * b.conj();
    g[2][1] = phase * b;
    g[2][2] = phase * a.conj();
    g
}

/// Applies `g` to qubits `(x, y)` of an `L`-qubit vector in place.
/// Site `i` is bit `i` of the basis index.
pub fn apply_to_vector(psi: &mut [Complex64], g: &Gate, x: usize, y: usize) {
    let (mx, my) = (1usize << x, 1usize << y);
    for base in 0..psi.len() {
        if base & (mx | my) != 0 {
            continue;
        }
        let idx = [base, base | my, base | mx, base | mx | my];
        let v = idx.map(|i| psi[i]);
        for (r, &i) in idx.iter().enumerate() {
            psi[i] = g[r][0] * v[0] + g[r][1] * v[1] + g[r][2] * v[2] + g[r][3] * v[3];
        }
    }
}

/// `S ← G S G†` for a row-major `dim × dim` operator, `G` acting on `(x, y)`.
pub fn conjugate_operator(s: &mut [Complex64], dim: usize, g: &Gate, x: usize, y: usize) {
    let (mx, my) = (1usize << x, 1usize << y);
    // rows: S ← G S
    for col in 0..dim {
        for base in 0..dim {
            if base & (mx | my) != 0 {
                continue;
            }
            let idx = [base, base | my, base | mx, base | mx | my];
            let v = idx.map(|i| s[i * dim + col]);
            for (r, &i) in idx.iter().enumerate() {
                s[i * dim + col] = g[r][0] * v[0] + g[r][1] * v[1] + g[r][2] * v[2] + g[r][3] * v[3];
            }
        }
    }
    // columns: S ← S G†
    for row in 0..dim {
        let line = &mut s[row * dim..(row + 1) * dim];
        for base in 0..dim {
            if base & (mx | my) != 0 {
                continue;
            }
            let idx = [base, base | my, base | mx, base | mx | my];
            let v = idx.map(|i| line[i]);
            for (c, &i) in idx.iter().enumerate() {
                line[i] = v[0] * g[c][0].conj()
                    + v[1] * g[c][1].conj()
                    + v[2] * g[c][2].conj()
                    + v[3] * g[c][3].conj();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Tag};

    fn close(a: &Gate, b: &Gate, tol: f64) -> bool {
        (0..4).all(|i| (0..4).all(|j| (a[i][j] - b[i][j]).norm() < tol))
    }

    #[test]
    fn sampled_gates_are_unitary_and_conserving() {
        let mut rng = stream(1, Tag::Replica, 0);
        for _ in 0..50 {
            let g = sample_u1_gate(&mut rng);
            assert!(close(&matmul(&g, &dagger(&g)), &identity(), 1e-13));
            for (i, j) in [(0, 1), (0, 2), (0, 3), (3, 1), (3, 2)] {
                assert_eq!(g[i][j].norm(), 0.0);
                assert_eq!(g[j][i].norm(), 0.0);
            }
        }
    }

    #[test]
    fn single_excitation_block_moments() {
        // Haar U(2): E|V_ij|² = 1/2 and E|V_11|⁴ = 1/3
        let mut rng = stream(2, Tag::Replica, 0);
        let n = 20000;
        let (mut m2, mut m4) = (0.0, 0.0);
        for _ in 0..n {
            let g = sample_u1_gate(&mut rng);
            m2 += g[1][2].norm_sqr();
            m4 += g[1][1].norm_sqr().powi(2);
        }
        let (m2, m4) = (m2 / n as f64, m4 / n as f64);
        assert!((m2 - 0.5).abs() < 4.0 * (1.0f64 / 12.0 / n as f64).sqrt(), "{m2}");
        assert!((m4 - 1.0 / 3.0).abs() < 0.01, "{m4}");
    }

    #[test]
    fn operator_conjugation_matches_vector_action() {
        let mut rng = stream(3, Tag::Replica, 0);
        let g = sample_u1_gate(&mut rng);
        let dim = 8;
        // |a⟩⟨b| → G|a⟩ (G|b⟩)†
        let (a, b) = (5usize, 2usize);
        let mut s = vec![Complex64::new(0.0, 0.0); dim * dim];
        s[a * dim + b] = Complex64::new(1.0, 0.0);
        conjugate_operator(&mut s, dim, &g, 0, 2);
        let mut va = vec![Complex64::new(0.0, 0.0); dim];
        let mut vb = va.clone();
        va[a] = Complex64::new(1.0, 0.0);
        vb[b] = Complex64::new(1.0, 0.0);
        apply_to_vector(&mut va, &g, 0, 2);
        apply_to_vector(&mut vb, &g, 0, 2);
        for i in 0..dim {
            for j in 0..dim {
                assert!((s[i * dim + j] - va[i] * vb[j].conj()).norm() < 1e-14);
            }
        }
    }
}
