//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the crate's numerical code.

#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const ALPHABET: &[u8; 20] = b"ACDEFGHIKLMNPQRSTVWY";

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("data").join(name)
}

/// Hypervolume by inclusion-exclusion over every non-empty subset.
pub fn hv_inclusion_exclusion(points: &[Vec<f64>], reference: &[f64]) -> f64 {
    let n = points.len();
    assert!(n < 20);
    let mut total = 0.0;
    for mask in 1u32..(1 << n) {
        let mut volume = 1.0;
        for (d, r) in reference.iter().enumerate() {
            let lo = (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| points[i][d])
                .fold(f64::INFINITY, f64::min);
            volume *= (lo - r).max(0.0);
        }
        if mask.count_ones() % 2 == 1 {
            total += volume;
        } else {
            total -= volume;
        }
    }
    total
}

/// Two-objective hypervolume by a direct sweep.
pub fn hv_2d_sweep(points: &[[f64; 2]], reference: [f64; 2]) -> f64 {
    let mut kept: Vec<[f64; 2]> =
        points.iter().copied().filter(|p| p[0] > reference[0] && p[1] > reference[1]).collect();
    kept.sort_by(|a, b| b[0].partial_cmp(&a[0]).unwrap());
    let mut top = reference[1];
    let mut area = 0.0;
    for p in kept {
        if p[1] > top {
            area += (p[0] - reference[0]) * (p[1] - top);
            top = p[1];
        }
    }
    area
}

pub fn naive_dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y)
}

/// Fronts by repeated peeling, each sorted ascending.
pub fn naive_fronts(points: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let mut left: Vec<usize> = (0..points.len()).collect();
    let mut fronts = Vec::new();
    while !left.is_empty() {
        let front: Vec<usize> = left
            .iter()
            .copied()
            .filter(|&i| !left.iter().any(|&j| naive_dominates(&points[j], &points[i])))
            .collect();
        left.retain(|i| !front.contains(i));
        fronts.push(front);
    }
    fronts
}

/// Number of sequences with at most `m` substitutions when position `i`
/// has `alternatives[i]` non-parental letters.
pub fn count_within(alternatives: &[usize], m: usize) -> u128 {
    // e[j] = elementary symmetric polynomial of degree j
    let mut e = vec![0u128; m + 1];
    e[0] = 1;
    for &a in alternatives {
        for j in (1..=m).rev() {
            e[j] += e[j - 1] * a as u128;
        }
    }
    e.iter().sum()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix: `(values, vectors)`
/// with eigenvectors as columns.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a = a.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// The published BLOSUM45 table, reordered to `ALPHABET`.
pub fn load_blosum45() -> [[i32; 20]; 20] {
    let text = std::fs::read_to_string(data_path("blosum45.txt")).expect("blosum45.txt");
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<u8> = lines.next().unwrap().split_whitespace().map(|t| t.as_bytes()[0]).collect();
    let mut full = std::collections::HashMap::new();
    for line in lines {
        let mut tokens = line.split_whitespace();
        let row = tokens.next().unwrap().as_bytes()[0];
        for (col, value) in header.iter().zip(tokens) {
            full.insert((row, *col), value.parse::<i32>().unwrap());
        }
    }
    let mut out = [[0; 20]; 20];
    for (i, &a) in ALPHABET.iter().enumerate() {
        for (j, &b) in ALPHABET.iter().enumerate() {
            out[i][j] = full[&(a, b)];
        }
    }
    out
}

/// `(z, log_h(z))` rows computed with arbitrary-precision arithmetic.
pub fn load_log_h_reference() -> Vec<(f64, f64)> {
    let mut reader = csv::Reader::from_path(data_path("log_h_reference.csv")).expect("log_h_reference.csv");
    reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[1].parse().unwrap())
        })
        .collect()
}

pub fn tanimoto(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let xx: f64 = x.iter().map(|a| a * a).sum();
    let yy: f64 = y.iter().map(|a| a * a).sum();
    dot / (xx + yy - dot)
}

pub fn cholesky(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                assert!(d > 0.0, "matrix is not positive definite");
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

/// Solves `L Lᵀ x = b`.
pub fn cholesky_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

/// Textbook Tanimoto-kernel GP on standardized targets, solved with a dense
/// Cholesky factor.
pub struct DenseGp {
    pub x: Vec<Vec<f64>>,
    pub signal: f64,
    pub mean: f64,
    pub scale: f64,
    pub l: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub lml: f64,
}

impl DenseGp {
    pub fn fit(x: &[Vec<f64>], y: &[f64], signal: f64, noise: f64) -> Self {
        let n = y.len();
        let mean = y.iter().sum::<f64>() / n as f64;
        let scale = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        let ys: Vec<f64> = y.iter().map(|v| (v - mean) / scale).collect();
        let k: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| signal * tanimoto(&x[i], &x[j]) + if i == j { noise } else { 0.0 }).collect())
            .collect();
        let l = cholesky(&k);
        let alpha = cholesky_solve(&l, &ys);
        let fit: f64 = ys.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let logdet: f64 = (0..n).map(|i| 2.0 * l[i][i].ln()).sum();
        let lml = -0.5 * fit - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        DenseGp { x: x.to_vec(), signal, mean, scale, l, alpha, lml }
    }

    /// Predictive mean and variance of the latent function in target units.
    pub fn predict(&self, q: &[f64]) -> (f64, f64) {
        let k: Vec<f64> = self.x.iter().map(|x| self.signal * tanimoto(x, q)).collect();
        let mu: f64 = k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = cholesky_solve(&self.l, &k);
        let quad: f64 = k.iter().zip(&v).map(|(a, b)| a * b).sum();
        let var = self.signal * tanimoto(q, q) - quad;
        (self.mean + self.scale * mu, self.scale * self.scale * var)
    }
}

/// Monte-Carlo expected hypervolume improvement of one independent Gaussian
/// point over a two-objective front: `(estimate, standard error)`.
pub fn mc_ehvi_2d(front: &[[f64; 2]], reference: [f64; 2], mean: [f64; 2], std: [f64; 2], n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = hv_2d_sweep(front, reference);
    let mut all = front.to_vec();
    all.push([0.0, 0.0]);
    let last = all.len() - 1;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        all[last] = [mean[0] + std[0] * z0, mean[1] + std[1] * z1];
        let hvi = hv_2d_sweep(&all, reference) - base;
        sum += hvi;
        sum_sq += hvi * hvi;
    }
    let m = sum / n as f64;
    let var = (sum_sq / n as f64 - m * m) * n as f64 / (n as f64 - 1.0);
    (m, (var.max(0.0) / n as f64).sqrt())
}

/// True when `seq` contains `N`, any residue but `P`, then `S` or `T`.
pub fn has_sequon(seq: &[u8]) -> bool {
    seq.windows(3).any(|w| w[0] == b'N' && w[1] != b'P' && (w[2] == b'S' || w[2] == b'T'))
}
