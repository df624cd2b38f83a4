//! Reproducible Monte Carlo averaging over independent units.
//!
//! Units are grouped into fixed-size blocks. Each block is summed in index
//! order and blocks are merged along a fixed binary tree, so the result is
//! bit-identical for any rayon pool size.

use rayon::prelude::*;

const BLOCK: u64 = 64;

/// Running first and second moments of a vector-valued observable.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl Moments {
    pub fn new(width: usize) -> Self {
        Self {
            count: 0,
            sum: vec![0.0; width],
            sum_sq: vec![0.0; width],
        }
    }

    pub fn push(&mut self, xs: &[f64]) {
        self.count += 1;
        for ((s, q), x) in self.sum.iter_mut().zip(&mut self.sum_sq).zip(xs) {
            *s += x;
            *q += x * x;
        }
    }

    pub fn merge(&self, other: &Moments) -> Moments {
        Moments {
            count: self.count + other.count,
            sum: self.sum.iter().zip(&other.sum).map(|(a, b)| a + b).collect(),
            sum_sq: self.sum_sq.iter().zip(&other.sum_sq).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.sum.iter().map(|s| s / n).collect()
    }

    /// Standard error of the mean, zero for a single unit.
    pub fn stderr(&self) -> Vec<f64> {
        let n = self.count as f64;
        if self.count < 2 {
            return vec![0.0; self.sum.len()];
        }
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, q)| {
                let m = s / n;
                ((q / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt()
            })
            .collect()
    }
}

fn tree_merge(parts: &[Moments]) -> Moments {
    match parts.len() {
        1 => parts[0].clone(),
        n => {
            let (a, b) = parts.split_at(n / 2);
            tree_merge(a).merge(&tree_merge(b))
        }
    }
}

/// Mean and spread of `unit(i)` over `i in 0..units`, each result of length `width`.
pub fn average<F>(units: u64, width: usize, unit: F) -> Moments
where
    F: Fn(u64) -> Vec<f64> + Sync,
{
    if units == 0 {
        return Moments::new(width);
    }
    let blocks = units.div_ceil(BLOCK);
    let parts: Vec<Moments> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut m = Moments::new(width);
            for i in b * BLOCK..((b + 1) * BLOCK).min(units) {
                m.push(&unit(i));
            }
            m
        })
        .collect();
    tree_merge(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_of_known_values() {
        let m = average(4, 1, |i| vec![i as f64]);
        assert_eq!(m.mean(), vec![1.5]);
        // sample sd of {0,1,2,3} is sqrt(5/3)
        assert!((m.stderr()[0] - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn result_is_independent_of_pool_size() {
        let f = |i: u64| vec![((i * 2654435761) % 1000) as f64 * 1e-3, (i as f64).sin()];
        let a = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| average(1000, 2, f));
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap()
            .install(|| average(1000, 2, f));
        assert_eq!(a, b);
    }
}
