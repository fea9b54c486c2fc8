#![allow(dead_code)]

use gnnpcg::gnn::GnnHyper;
use gnnpcg::sparse::CsrMatrix;
use gnnpcg::train::Sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small network for exhaustive gradient checks.
pub fn tiny_hyper() -> GnnHyper {
    GnnHyper { l: 1, h: 8, n_mp: 2, l_mp: 1, h_mp: 8, x0_head: true }
}

/// Weighted path with random chords, diagonally dominant.
pub fn chord_matrix(n: usize, seed: u64) -> CsrMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Vec::new();
    let mut diag = vec![0.5; n];
    let mut edge = |i: usize, j: usize, w: f64, t: &mut Vec<(usize, usize, f64)>| {
        t.push((i, j, -w));
        t.push((j, i, -w));
        diag[i] += w;
        diag[j] += w;
    };
    for i in 1..n {
        edge(i - 1, i, rng.gen_range(0.5..2.0), &mut t);
    }
    for _ in 0..n / 4 {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i.abs_diff(j) > 1 {
            edge(i.min(j), i.max(j), rng.gen_range(0.1..1.0), &mut t);
        }
    }
    for (i, d) in diag.iter().enumerate() {
        t.push((i, i, *d));
    }
    CsrMatrix::from_triplets(n, &t).unwrap()
}

/// `chord_matrix` with a random solution of magnitude `scale`.
pub fn chord_sample(n: usize, seed: u64, scale: f64) -> Sample {
    let a = chord_matrix(n, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x: Vec<f64> = (0..n).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
    let b = a.spmv(&x).unwrap();
    Sample::new(&a, &x, &b).unwrap()
}

/// Raw loss at which the round-off of a 1e-6 central difference stays below
/// 1e-5 of any gradient above 1e-8.
pub const GRADIENT_LOSS: f64 = 1e-4;

/// `chord_sample` rescaled so that `loss(sample)` equals `target`. Both the
/// data and the naive loss are homogeneous of degree two in this scaling
/// because the network sees standardized inputs.
pub fn sample_at_loss(n: usize, seed: u64, target: f64, loss: impl Fn(&Sample) -> f64, scale_matrix: bool) -> Sample {
    let s = chord_sample(n, seed, 1.0);
    let k = (target / loss(&s)).sqrt();
    if scale_matrix {
        let mut a = s.a.clone();
        a.values_mut().iter_mut().for_each(|v| *v *= k);
        let b = a.spmv(&s.x).unwrap();
        Sample::new(&a, &s.x, &b).unwrap()
    } else {
        let x: Vec<f64> = s.x.iter().map(|v| v * k).collect();
        let b: Vec<f64> = s.b.iter().map(|v| v * k).collect();
        Sample::new(&s.a, &x, &b).unwrap()
    }
}
